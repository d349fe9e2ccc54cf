//! AUC-margin min-max training, momentum-contrast pretraining and trust
//! scoring for imbalanced binary classification.
//!
//! The numeric modules ([`model`], [`losses`], [`optim`], [`moco`],
//! [`metrics`], [`trust`]) are generic over a [`Scalar`] float type. The
//! [`data`] and [`harness`] layers are pinned to `f64`, and the aliases at
//! the crate root name the `f64` instantiations used throughout the
//! experiment pipeline.

pub mod data;
pub mod error;
pub mod harness;
pub mod losses;
pub mod metrics;
pub mod moco;
pub mod model;
pub mod optim;
pub mod trust;

use std::fmt::{Debug, Display};

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive};

pub use error::{Error, Result};

/// Floating-point element type accepted by the numeric modules.
pub trait Scalar:
    Float + FromPrimitive + LinalgScalar + ScalarOperand + Debug + Display + Send + Sync + 'static
{
    /// Converts an `f64` constant into this type.
    #[inline]
    fn lit(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("f64 constant representable")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

pub type ModelParams = model::ModelParams<f64>;
pub type ForwardTrace = model::ForwardTrace<f64>;
pub type AucState = losses::AucState<f64>;
pub type LossGrad = losses::LossGrad<f64>;
pub type SgdState = optim::SgdState<f64>;
pub type PesgState = optim::PesgState<f64>;
pub type MocoState = moco::MocoState<f64>;
pub type KeyQueue = moco::KeyQueue<f64>;
pub type TrustReport = trust::TrustReport<f64>;

pub use data::{Checkpoint, DatasetTable, SplitMix64, SyntheticSpec};
pub use harness::{ExperimentConfig, RunReport};
pub use metrics::{ConfusionMatrix, FoldAssignment};
pub use model::{Activation, ModelSpec};
pub use moco::{Augmentation, MocoConfig};
pub use optim::Schedule;
pub use trust::TrustConfig;
