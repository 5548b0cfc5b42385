//! Differentiable blocks of the unfolding network.

pub mod cfm;
pub mod dcm;
pub mod feature;
pub mod fuse;
pub mod gradcheck;
pub mod head;
pub mod layers;
pub mod ops;
pub mod params;
pub mod sam;
pub mod sfm;
pub mod window;

pub use cfm::{ChannelAttention, Cfm};
pub use dcm::Dcm;
pub use feature::{BlockConfig, BlockKind, CallCounters, FeatureMap};
pub use fuse::ResidualFuse;
pub use head::{ReconHead, Sfem, INPUT_CHANNELS};
pub use layers::{Conv2d, LayerNorm, Linear, PointwiseMlp};
pub use params::{Init, ParamBuilder, ParamStore};
pub use sam::Sam;
pub use sfm::Sfm;
pub use window::{WindowAttention, WindowTransformerBlock};
