//! Fence GAN anomaly detection: a generator trained to sit on the boundary
//! of the normal data, and a discriminator whose score separates normal
//! points from everything outside that boundary.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below pin the common cases.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod losses;
pub mod math;
pub mod metrics;
pub mod neural;
pub mod optim;
pub mod runner;
pub mod scalar;
pub mod trainer;

pub use data::{Dataset, Label};
pub use error::{Error, Result};
pub use math::{Matrix, RngState};
pub use neural::{Activation, Mlp, Mode};
pub use scalar::Scalar;
pub use trainer::{FganConfig, TrainerState};

pub type Matrix64 = Matrix<f64>;
pub type Matrix32 = Matrix<f32>;
pub type Mlp64 = Mlp<f64>;
pub type Mlp32 = Mlp<f32>;
pub type Dataset64 = Dataset<f64>;
pub type Dataset32 = Dataset<f32>;
pub type TrainerState64 = TrainerState<f64>;
pub type TrainerState32 = TrainerState<f32>;
