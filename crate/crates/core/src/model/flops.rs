use serde::Serialize;

use super::config::{ModelConfig, OutputHead};
use crate::error::Result;
use crate::layers::reduced_channels;

pub const FLOPS_CONVENTION: &str = "\
one real MAC = 2 FLOPs; complex multiply = 6, complex add = 2; \
complex conv = positions*Cout*(6*Cin*k + 2*(Cin*k - 1)) plus 2 per output for the bias; \
real 1x1 conv = 2*Cin per output plus 1 for the bias; \
attention = Q/K/V/output projections + QK^T + weighted sum as matmuls, softmax 4 per score; \
sigmoid and tanh 4 per element; PReLU, ReLU, scaling, division, residual add and comparison 1 per real value; \
magnitude sqrt(re^2+im^2+eps) = 5 per complex value; STFT/ISTFT excluded; batch of 1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    /// Linear in the number of frames.
    Conv,
    Attention,
    Pointwise,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LayerFlops {
    pub name: String,
    pub kind: LayerKind,
    pub flops: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FlopsReport {
    pub layers: Vec<LayerFlops>,
    pub total: u64,
    pub convention: String,
}

impl FlopsReport {
    /// Fixed-width table, one layer per line, total last.
    pub fn to_table(&self) -> String {
        let width = self.layers.iter().map(|l| l.name.len()).max().unwrap_or(5).max(5);
        let mut s = format!("{:<width$}  {:>10}  {:>16}\n", "layer", "kind", "flops");
        for l in &self.layers {
            let kind = match l.kind {
                LayerKind::Conv => "conv",
                LayerKind::Attention => "attention",
                LayerKind::Pointwise => "pointwise",
            };
            s += &format!("{:<width$}  {:>10}  {:>16}\n", l.name, kind, l.flops);
        }
        s += &format!("{:<width$}  {:>10}  {:>16}\n", "total", "", self.total);
        s
    }
}

pub fn complex_conv_flops(cin: u64, cout: u64, k: u64, positions: u64, bias: bool) -> u64 {
    positions * cout * (6 * cin * k + 2 * (cin * k - 1)) + if bias { 2 * positions * cout } else { 0 }
}

fn real_pointwise_conv_flops(cin: u64, cout: u64, positions: u64) -> u64 {
    positions * cout * (2 * cin + 1)
}

/// `n_seq` independent sequences of `len_q` queries over `len_k` keys.
pub fn attention_flops(n_seq: u64, len_q: u64, len_k: u64, d_in: u64, width: u64, heads: u64) -> u64 {
    let proj = 2 * len_q * d_in * width + 2 * 2 * len_k * d_in * width + 2 * len_q * width * d_in;
    let scores = 2 * len_q * len_k * width;
    let softmax = 4 * heads * len_q * len_k;
    let weighted = 2 * len_q * len_k * width;
    n_seq * (proj + scores + softmax + weighted)
}

/// Static operation count for one `(F, T)` spectrogram.
pub fn count_flops(cfg: &ModelConfig, input: (usize, usize)) -> Result<FlopsReport> {
    cfg.validate()?;
    let (f0, t) = (input.0 as u64, input.1 as u64);
    let mut bins = vec![f0];
    for _ in 0..cfg.depth() {
        let last = *bins.last().expect("non-empty");
        bins.push(last.div_ceil(2));
    }
    let chans: Vec<u64> = cfg.level_channels().iter().map(|&c| c as u64).collect();
    let k = (cfg.cscconv_kernel.0 * cfg.cscconv_kernel.1) as u64;
    let heads = cfg.msda_heads as u64;
    let mut layers = Vec::new();
    let mut push = |name: String, kind: LayerKind, flops: u64| layers.push(LayerFlops { name, kind, flops });

    for l in 1..=cfg.depth() {
        let (c, f) = (chans[l], bins[l]);
        let p = f * t;
        push(
            format!("enc{l}.cscconv"),
            LayerKind::Conv,
            complex_conv_flops(chans[l - 1] + 2, c, k, p, true) + 2 * c * p,
        );
        push(format!("enc{l}.msda.time_attention"), LayerKind::Attention, attention_flops(f, t, t, 2 * c, 2 * c, heads));
        push(format!("enc{l}.msda.freq_attention"), LayerKind::Attention, attention_flops(t, f, f, 2 * c, 2 * c, heads));
        let r = reduced_channels(cfg.encoder_channels[l - 1], cfg.channel_reduction) as u64;
        push(
            format!("enc{l}.msda.channel_attention"),
            LayerKind::Pointwise,
            5 * c * p + c * p + (2 * c * r + r) + r + (2 * r * c + c) + 4 * c + 2 * c * p,
        );
        push(format!("enc{l}.msda.fuse"), LayerKind::Conv, complex_conv_flops(c, c, 1, p, true));
        push(format!("enc{l}.msda.combine"), LayerKind::Pointwise, 6 * c * p);
    }

    let (c, p) = (chans[cfg.depth()], bins[cfg.depth()] * t);
    push("bottleneck.pre".into(), LayerKind::Conv, complex_conv_flops(c, c, 1, p, true));
    for &kb in &cfg.bhme_kernels {
        push(format!("bottleneck.k{kb}"), LayerKind::Conv, complex_conv_flops(c, c, kb as u64, p, true));
    }
    let nk = cfg.bhme_kernels.len() as u64;
    push("bottleneck.fuse".into(), LayerKind::Conv, complex_conv_flops(nk * c, c, 1, p, true));
    push("bottleneck.residual".into(), LayerKind::Pointwise, 4 * c * p);

    for l in (1..=cfg.depth()).rev() {
        let (c, f) = (chans[l - 1], bins[l - 1]);
        let p = f * t;
        push(
            format!("dec{l}.cscconv"),
            LayerKind::Conv,
            complex_conv_flops(chans[l] + 2, c, k, p, true) + 2 * c * p,
        );
        push(
            format!("dec{l}.eagc.gate_conv"),
            LayerKind::Conv,
            real_pointwise_conv_flops(2 * c, 1, p) + 4 * p + 2 * c * p + real_pointwise_conv_flops(2 * c, c, p) + 4 * c * p,
        );
        // energy (square and accumulate), per-bin normalize, then modulation products
        push(
            format!("dec{l}.eagc.weighting"),
            LayerKind::Pointwise,
            2 * (2 * c * p) + 4 * f + c * p + 2 * c * p,
        );
        push(
            format!("dec{l}.eagc.cross_attention"),
            LayerKind::Attention,
            attention_flops(1, t, t, 2 * c * f, cfg.eagc_width as u64, 1) + 2 * c * p,
        );
        push(format!("dec{l}.merge"), LayerKind::Conv, complex_conv_flops(2 * c, c, 1, p, true));
    }
    push("out".into(), LayerKind::Conv, complex_conv_flops(1, 1, 1, f0 * t, true));
    if cfg.output_head == OutputHead::Mask {
        // magnitude, tanh, divide, rescale, then one complex multiply per bin
        push("mask".into(), LayerKind::Pointwise, (5 + 4 + 1 + 2 + 6) * f0 * t);
    }

    let total = layers.iter().map(|l| l.flops).sum();
    Ok(FlopsReport {
        layers,
        total,
        convention: FLOPS_CONVENTION.to_string(),
    })
}
