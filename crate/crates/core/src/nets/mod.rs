//! 1-D layers and the progressive generator / critic.

pub mod layers;
mod network;
pub mod params;
pub mod resample;

pub use network::{
    build_critic, build_generator, Block, LayerSpec, NetConfig, Role, StagedNetwork,
};
pub use params::{Bound, ParamSet};
pub use resample::{DownsampleMethod, UpsampleMethod};
