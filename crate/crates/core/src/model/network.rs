use crate::autodiff::{Tape, Tensor, Var};
use crate::dsp::{Stft, Waveform};
use crate::error::{Error, Result};
use crate::layers::{
    bhme_forward, complex_conv2d, cscconv_block, eagc_forward, msda_forward, BhmeParams, Bound,
    ComplexConvParams, ComplexFeature, CoordMode, GateParams, Initializer, MsdaParams, ParamStore,
};

use super::config::{ModelConfig, OutputHead};

/// Initial PReLU slope of the coordinate conv blocks.
const INITIAL_SLOPE: f64 = 0.25;

/// A configured network and its parameters.
#[derive(Clone)]
pub struct ModelState {
    config: ModelConfig,
    params: ParamStore,
    stft: Stft,
}

impl std::fmt::Debug for ModelState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelState")
            .field("config", &self.config)
            .field("n_params", &self.params.n_scalars())
            .finish()
    }
}

/// Registers every parameter of `cfg`, drawing initial values from `cfg.seed`.
pub fn build_model(cfg: &ModelConfig) -> Result<ModelState> {
    cfg.validate()?;
    let store = register_all(cfg)?;
    Ok(ModelState {
        stft: Stft::new(cfg.stft)?,
        config: cfg.clone(),
        params: store,
    })
}

fn register_all(cfg: &ModelConfig) -> Result<ParamStore> {
    let mut store = ParamStore::new();
    let mut init = Initializer::new(cfg.seed);
    let chans = cfg.level_channels();
    let bins = cfg.level_bins();
    let k = cfg.cscconv_kernel;
    for l in 1..=cfg.depth() {
        let p = format!("enc{l}");
        ComplexConvParams::register(&mut store, &mut init, &format!("{p}.conv"), chans[l - 1] + 2, chans[l], k, true)?;
        store.insert(format!("{p}.slope"), Tensor::scalar(INITIAL_SLOPE))?;
        MsdaParams::register(&mut store, &mut init, &format!("{p}.msda"), chans[l], cfg.msda_heads, cfg.channel_reduction)?;
    }
    BhmeParams::register(&mut store, &mut init, "bottleneck", chans[cfg.depth()], &cfg.bhme_kernels)?;
    for l in (1..=cfg.depth()).rev() {
        let p = format!("dec{l}");
        let c = chans[l - 1];
        ComplexConvParams::register(&mut store, &mut init, &format!("{p}.conv"), chans[l] + 2, c, k, true)?;
        store.insert(format!("{p}.slope"), Tensor::scalar(INITIAL_SLOPE))?;
        GateParams::register(&mut store, &mut init, &format!("{p}.eagc"), c, bins[l - 1], cfg.eagc_width)?;
        ComplexConvParams::register(&mut store, &mut init, &format!("{p}.merge"), 2 * c, c, (1, 1), true)?;
    }
    ComplexConvParams::register(&mut store, &mut init, "out", 1, 1, (1, 1), true)?;
    match cfg.output_head {
        OutputHead::Direct => favor_skips(&mut store, cfg)?,
        OutputHead::Mask => unit_mask(&mut store, &mut init)?,
    }
    Ok(store)
}

/// Scale of the random output conv weight under a mask head.
const MASK_WEIGHT_GAIN: f64 = 0.1;

/// Starts the mask head near a uniform real mask: unit real bias and a damped
/// random weight.
fn unit_mask(store: &mut ParamStore, init: &mut Initializer) -> Result<()> {
    let missing = |n: &str| Error::InvalidConfig(format!("parameter `{n}` is missing"));
    for part in ["w_re", "w_im"] {
        let name = format!("out.{part}");
        let v = init.fan_in(&[1], 1).data()[0] * MASK_WEIGHT_GAIN;
        store.get_mut(&name).ok_or_else(|| missing(&name))?.data_mut()[0] = v;
    }
    store.get_mut("out.b_re").ok_or_else(|| missing("out.b_re"))?.data_mut()[0] = 1.0;
    Ok(())
}

/// Scale of the random decoder half of each merge conv at initialization.
const MERGE_DECODER_GAIN: f64 = 0.1;

/// Starts every merge conv as identity on the gated skip plus a damped random
/// map of the decoder path, and the output conv as `1 + 0i`, so an untrained
/// network passes the gated level-1 skip through.
fn favor_skips(store: &mut ParamStore, cfg: &ModelConfig) -> Result<()> {
    let chans = cfg.level_channels();
    let missing = |n: &str| Error::InvalidConfig(format!("parameter `{n}` is missing"));
    for l in 1..=cfg.depth() {
        let c = chans[l - 1];
        for part in ["w_re", "w_im"] {
            let name = format!("dec{l}.merge.{part}");
            let w = store.get_mut(&name).ok_or_else(|| missing(&name))?;
            // (c, 2c, 1, 1): input channels [skip | decoder]
            for (i, row) in w.data_mut().chunks_mut(2 * c).enumerate() {
                for (j, v) in row.iter_mut().enumerate() {
                    *v = if j >= c {
                        *v * MERGE_DECODER_GAIN
                    } else if part == "w_re" && i == j {
                        1.0
                    } else {
                        0.0
                    };
                }
            }
        }
    }
    for (part, value) in [("w_re", 1.0), ("w_im", 0.0)] {
        let name = format!("out.{part}");
        store.get_mut(&name).ok_or_else(|| missing(&name))?.data_mut()[0] = value;
    }
    Ok(())
}

impl ModelState {
    /// Pairs a config with parameters, checking names and shapes against a
    /// fresh build of the config.
    pub fn from_parts(config: ModelConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let expected = register_all(&config)?;
        for (name, t) in expected.iter() {
            match params.get(name) {
                Some(p) if p.shape() == t.shape() => {}
                Some(p) => {
                    return Err(Error::InvalidConfig(format!(
                        "parameter `{name}` has shape {:?}, config implies {:?}",
                        p.shape(),
                        t.shape()
                    )))
                }
                None => return Err(Error::InvalidConfig(format!("parameter `{name}` is missing"))),
            }
        }
        if params.len() != expected.len() {
            return Err(Error::InvalidConfig(format!(
                "{} parameters given, config implies {}",
                params.len(),
                expected.len()
            )));
        }
        Ok(Self {
            stft: Stft::new(config.stft)?,
            config,
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn stft(&self) -> &Stft {
        &self.stft
    }

    /// Spectrogram-domain network: `(B, 2, F, T)` planar input, same-shaped output.
    pub fn forward<'t>(&self, b: &Bound<'t>, x: ComplexFeature<'t>) -> Result<ComplexFeature<'t>> {
        let cfg = &self.config;
        let (_, c_in, f_in, _) = x.dims();
        if c_in != 1 || f_in != cfg.stft.n_bins() {
            return Err(Error::InvalidShape(format!(
                "network input must have 1 channel and {} bins, got {c_in} and {f_in}",
                cfg.stft.n_bins()
            )));
        }
        let mut skips = Vec::with_capacity(cfg.depth());
        let mut h = x;
        for l in 1..=cfg.depth() {
            skips.push(h);
            let conv = ComplexConvParams::bind(b, &format!("enc{l}.conv"))?;
            h = cscconv_block(&h, &conv, b.get(&format!("enc{l}.slope"))?, CoordMode::Encode)?;
            h = msda_forward(&h, &MsdaParams::bind(b, &format!("enc{l}.msda"), cfg.msda_heads)?)?;
        }
        h = bhme_forward(&h, &BhmeParams::bind(b, "bottleneck", &cfg.bhme_kernels)?)?;
        for l in (1..=cfg.depth()).rev() {
            let skip = skips[l - 1];
            let conv = ComplexConvParams::bind(b, &format!("dec{l}.conv"))?;
            let mode = CoordMode::Decode { out_freq: skip.dims().2 };
            h = cscconv_block(&h, &conv, b.get(&format!("dec{l}.slope"))?, mode)?;
            let gated = eagc_forward(&skip, &h, &GateParams::bind(b, &format!("dec{l}.eagc"), cfg.eps_w)?)?;
            let merge = ComplexConvParams::bind(b, &format!("dec{l}.merge"))?;
            h = complex_conv2d(&ComplexFeature::concat(&[gated, h])?, &merge, (1, 1), (0, 0))?;
        }
        let y = complex_conv2d(&h, &ComplexConvParams::bind(b, "out")?, (1, 1), (0, 0))?;
        match cfg.output_head {
            OutputHead::Direct => Ok(y),
            OutputHead::Mask => {
                // magnitude squashed by tanh, phase kept
                let mag = y.magnitude()?;
                let m = y.scale_channels(mag.tanh()?.div(mag)?)?;
                let noisy = skips[0];
                let (mr, mi, xr, xi) = (m.re()?, m.im()?, noisy.re()?, noisy.im()?);
                ComplexFeature::from_parts(
                    mr.mul(xr)?.sub(mi.mul(xi)?)?,
                    mr.mul(xi)?.add(mi.mul(xr)?)?,
                )
            }
        }
    }

    /// Spectrograms of a `(B, L)` batch as a constant `(B, 2, F, T)` feature.
    pub fn analyze_batch<'t>(&self, tape: &'t Tape, noisy: &Tensor) -> Result<ComplexFeature<'t>> {
        let s = noisy.shape();
        if s.len() != 2 {
            return Err(Error::InvalidShape(format!("expected a (B, L) batch, got {s:?}")));
        }
        let (batch, len) = (s[0], s[1]);
        let mut data = Vec::new();
        let mut frames = 0;
        for row in noisy.data().chunks(len) {
            let spec = self.stft.analyze(&Waveform::new(row.to_vec(), self.config.sample_rate)?)?;
            frames = spec.n_frames;
            data.extend_from_slice(&spec.data);
        }
        let f = self.config.stft.n_bins();
        let t = Tensor::new(&[batch, f, frames, 1, 2], data)?;
        ComplexFeature::from_interleaved(tape.constant(t))
    }

    /// Waveform-to-waveform pass over a `(B, L)` batch, returning `(B, L)`.
    pub fn enhance_var<'t>(&self, b: &Bound<'t>, tape: &'t Tape, noisy: &Tensor) -> Result<Var<'t>> {
        let x = self.analyze_batch(tape, noisy)?;
        let y = self.forward(b, x)?;
        let (batch, _, f, t) = y.dims();
        let spec = y.to_interleaved()?.reshape(&[batch, f, t, 2])?;
        self.stft.synthesize_var(spec, noisy.shape()[1])
    }

    pub fn enhance(&self, noisy: &Waveform) -> Result<Waveform> {
        if noisy.sample_rate != self.config.sample_rate {
            return Err(Error::InvalidConfig(format!(
                "input sample rate {} differs from model rate {}",
                noisy.sample_rate, self.config.sample_rate
            )));
        }
        let tape = Tape::new();
        let b = self.params.bind(&tape, false);
        let x = Tensor::new(&[1, noisy.len()], noisy.samples.clone())?;
        let y = self.enhance_var(&b, &tape, &x)?;
        let samples = y.value().data().to_vec();
        Waveform::new(samples, noisy.sample_rate)
    }
}
