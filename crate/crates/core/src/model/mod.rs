//! The enhancement network: configuration, assembly, cost model and persistence.

mod checkpoint;
mod config;
mod flops;
mod network;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, FORMAT_VERSION, MAGIC,
};
pub use config::{ModelConfig, OutputHead};
pub use flops::{
    attention_flops, complex_conv_flops, count_flops, FlopsReport, LayerFlops, LayerKind, FLOPS_CONVENTION,
};
pub use network::{build_model, ModelState};
