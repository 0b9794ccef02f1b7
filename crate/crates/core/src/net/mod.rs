pub mod ablate;
pub mod config;
pub mod loss;
pub mod model;
pub mod train;

pub use ablate::{ablate, AblationRow};
pub use config::{BackboneSpec, NetworkConfig, Pattern, ShortConnectionGraph, SideHeadSpec, NUM_SIDES};
pub use loss::{total_loss, LossKind};
pub use model::{combine_side_activations, inference_maps, Edge, Network, SideActivations, SideVars};
pub use train::{train, TrainConfig, TrainReport};
