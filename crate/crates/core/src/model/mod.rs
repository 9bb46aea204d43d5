//! VGG-style toy backbone with side-outputs and the assembled SRN forward pass.

mod config;
mod forward;
pub mod params;

pub use config::{InitScheme, ModelConfig, RuOrder, StageSpec};
pub use forward::{
    forward_image, forward_srn, side_output, ParamVars, RUTrace, SrnForward, SupervisedOutput,
};
pub use params::{build_backbone, ParamStore};
