use serde::{Deserialize, Serialize};

use crate::dsp::StftConfig;
use crate::error::{Error, Result};
use crate::layers::{DEFAULT_BHME_KERNELS, DEFAULT_EAGC_WIDTH, DEFAULT_EPS_W};

/// How the final complex conv output becomes the enhanced spectrogram.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OutputHead {
    /// The output is the enhanced spectrogram.
    Direct,
    /// The output, its magnitude bounded by `tanh`, is a complex ratio mask
    /// multiplied onto the noisy spectrogram.
    #[default]
    Mask,
}

/// Hyperparameters of the enhancement network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub sample_rate: u32,
    #[serde(flatten)]
    pub stft: StftConfig,
    /// Output channels of each encoder level, shallowest first.
    pub encoder_channels: Vec<usize>,
    pub msda_heads: usize,
    /// Bottleneck ratio of the channel attention.
    pub channel_reduction: usize,
    pub bhme_kernels: Vec<usize>,
    pub eagc_width: usize,
    /// Floor of the frequency energy weight.
    pub eps_w: f64,
    /// `(frequency, time)` kernel of the coordinate conv blocks.
    pub cscconv_kernel: (usize, usize),
    pub output_head: OutputHead,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16000,
            stft: StftConfig::default(),
            encoder_channels: vec![8, 16, 32],
            msda_heads: 4,
            channel_reduction: 4,
            bhme_kernels: DEFAULT_BHME_KERNELS.to_vec(),
            eagc_width: DEFAULT_EAGC_WIDTH,
            eps_w: DEFAULT_EPS_W,
            cscconv_kernel: (5, 3),
            output_head: OutputHead::default(),
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.stft.validate()?;
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.sample_rate == 0 {
            return bad("sample_rate must be positive".into());
        }
        if self.encoder_channels.is_empty() {
            return bad("encoder_channels must name at least one level".into());
        }
        if self.encoder_channels.contains(&0) {
            return bad("channel counts must be positive".into());
        }
        if self.encoder_channels.windows(2).any(|w| w[1] < w[0]) {
            return bad(format!(
                "encoder_channels must be nondecreasing, got {:?}",
                self.encoder_channels
            ));
        }
        for &c in &self.encoder_channels {
            if self.msda_heads == 0 || (2 * c) % self.msda_heads != 0 {
                return bad(format!(
                    "msda_heads {} must divide 2·C = {} at every level",
                    self.msda_heads,
                    2 * c
                ));
            }
        }
        if self.channel_reduction == 0 {
            return bad("channel_reduction must be positive".into());
        }
        if self.bhme_kernels.is_empty() || self.bhme_kernels.iter().any(|k| k % 2 == 0) {
            return bad(format!("bhme_kernels must be odd sizes, got {:?}", self.bhme_kernels));
        }
        let mut sorted = self.bhme_kernels.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.bhme_kernels.len() {
            return bad("bhme_kernels must be distinct".into());
        }
        if self.eagc_width == 0 {
            return bad("eagc_width must be positive".into());
        }
        if !(self.eps_w > 0.0 && self.eps_w <= 1.0) {
            return bad(format!("eps_w must lie in (0, 1], got {}", self.eps_w));
        }
        let (kf, kt) = self.cscconv_kernel;
        if kf % 2 == 0 || kt % 2 == 0 {
            return bad(format!("cscconv_kernel {kf}x{kt} must have odd sides"));
        }
        Ok(())
    }

    pub fn depth(&self) -> usize {
        self.encoder_channels.len()
    }

    /// Channels entering each level: `[1, C_1, .., C_L]`.
    pub fn level_channels(&self) -> Vec<usize> {
        std::iter::once(1).chain(self.encoder_channels.iter().copied()).collect()
    }

    /// Frequency bins at each level: `[F, ceil(F/2), ..]`, depth + 1 entries.
    pub fn level_bins(&self) -> Vec<usize> {
        let mut f = vec![self.stft.n_bins()];
        for _ in 0..self.depth() {
            let last = *f.last().expect("non-empty");
            f.push(last.div_ceil(2));
        }
        f
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid_and_levels_halve() {
        let c = ModelConfig::default();
        c.validate().unwrap();
        assert_eq!(c.level_bins(), vec![257, 129, 65, 33]);
        assert_eq!(c.level_channels(), vec![1, 8, 16, 32]);
    }

    #[test]
    fn inconsistent_configs_rejected() {
        let cases = [
            ModelConfig { encoder_channels: vec![], ..Default::default() },
            ModelConfig { encoder_channels: vec![16, 8], ..Default::default() },
            ModelConfig { msda_heads: 3, ..Default::default() },
            ModelConfig { bhme_kernels: vec![3, 4], ..Default::default() },
            ModelConfig { eps_w: 0.0, ..Default::default() },
            ModelConfig { cscconv_kernel: (4, 3), ..Default::default() },
        ];
        for c in cases {
            assert!(matches!(c.validate(), Err(Error::InvalidConfig(_))), "{c:?}");
        }
    }

    #[test]
    fn json_is_flat() {
        let v = serde_json::to_value(ModelConfig::default()).unwrap();
        assert_eq!(v["n_fft"], 512);
        let back: ModelConfig = serde_json::from_str(r#"{"encoder_channels": [4, 8]}"#).unwrap();
        assert_eq!(back.encoder_channels, vec![4, 8]);
        assert_eq!(back.stft, StftConfig::default());
    }
}
