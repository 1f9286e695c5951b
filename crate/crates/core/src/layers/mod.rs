//! Complex-valued layers over planar `(B, 2C, F, T)` feature maps.

mod attention;
mod bhme;
mod conv;
mod eagc;
mod feature;
mod msda;
mod params;

pub use attention::{
    attend, axis_attention, channel_attention, reduced_channels, AttentionParams, Axis, ChannelAttentionParams,
};
pub use bhme::{bhme_branch, bhme_forward, BhmeParams, DEFAULT_BHME_KERNELS};
pub use conv::{append_coords, complex_conv2d, coord_line, cscconv_block, ComplexConvParams, CoordMode};
pub use eagc::{eagc_forward, eagc_gate, GateParams, GatedSkip, DEFAULT_EAGC_WIDTH, DEFAULT_EPS_W};
pub use feature::ComplexFeature;
pub use msda::{msda_forward, MsdaParams};
pub use params::{Bound, Initializer, ParamStore};
