//! Shaped adversarial sticker laboratory.

pub mod attack;
pub mod checkpoint;
pub mod config;
mod error;
pub mod eval;
pub mod fr;
pub mod gan;
pub mod imaging;
pub mod losses;
pub mod nn;
pub mod render;
pub mod saliency;
pub mod seed;
pub mod shapes;
pub mod tensor;

pub use error::{Error, Result};
pub use attack::{AttackMode, AttackSpec, ShapeGan, TrainConfig};
pub use eval::{ExperimentConfig, SuccessReport};
pub use fr::{FaceDataset, FrSystem};
pub use gan::{Discriminator, Generator};
pub use render::{FaceAsset, StickerSet};
pub use saliency::RegionCombination;
pub use shapes::{ShapeCorpus, ShapeKind};
pub use tensor::Tensor;
