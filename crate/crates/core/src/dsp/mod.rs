//! Waveforms, STFT, WAV I/O and synthetic signals.

mod stft;
mod synth;
mod wav;
mod waveform;

pub use stft::{istft, stft, ComplexSpec, Stft, StftConfig, Window};
pub use synth::{synth_chirp, synth_noise, ChirpParams, Envelope, NoiseKind, SYNTH_PEAK};
pub use wav::{read_wav, write_wav, WavFormat};
pub use waveform::{mix_at_snr, Waveform};
