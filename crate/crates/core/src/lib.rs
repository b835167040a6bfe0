//! Label-noise-tolerant classification with semantic opposite labels.
//!
//! Each training sample contributes a positive cross-entropy term on its true
//! label and an opposite term on a label drawn from outside the true label's
//! colony, where colonies come from a [`taxonomy::SemanticPrior`].

pub mod datasets;
pub mod error;
pub mod harness;
pub mod loss;
pub mod network;
pub mod rng;
pub mod sampler;
pub mod taxonomy;
pub mod theory;

pub use error::{Error, Result};
pub use loss::{CompositeLossConfig, LossBreakdown, ProbVector};
pub use network::{MlpModel, SolverConfig, SolverKind};
pub use rng::SeededRng;
pub use sampler::{OppositeMode, Scenario};
pub use taxonomy::{ClassId, SemanticPrior};
