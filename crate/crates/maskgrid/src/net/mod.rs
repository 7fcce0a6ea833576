//! Minimal differentiable network pieces: layers, the mask/class/box heads,
//! the assembled toy model, SGD, and checkpointing.

pub mod checkpoint;
pub mod heads;
pub mod layers;
pub mod model;
pub mod sgd;

pub use heads::{BoxHead, ClsHead, HeadConfig, HeadKind, MaskHead, Tower};
pub use layers::{avg_pool2, relu, sigmoid, Conv2d};
pub use model::{LevelGrad, LevelPrediction, Model, ModelConfig};
pub use sgd::{sgd_step, Sgd};
