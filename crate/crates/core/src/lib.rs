//! Map-free radio propagation: a log-distance baseline with a learnable
//! path-loss exponent, corrected by a sum of learnable anisotropic 3D
//! Gaussian offsets evaluated along each Tx–Rx segment.
//!
//! The crate is split into [`geometry`] (vectors, quaternions, segment
//! projection), [`model`] (forward prediction), [`training`] (loss, analytic
//! gradients, Adam), [`io`] (CSV, coordinates, splits, model files),
//! [`eval`] (metrics, coverage rasters, fingerprint localization,
//! diagnostics) and [`synth`] (obstacle-world ground truth).

pub mod error;
pub mod eval;
pub mod geometry;
pub mod io;
mod kernel;
pub mod model;
pub mod synth;
pub mod training;

pub use error::{Error, ModelFileError, ParseIssue, Result};
pub use geometry::{LogScale3, Mat3, Point3, UnitQuaternion, Vec3};
pub use model::{
    baseline_path_loss, predict, predict_batch, GaussianPrimitive, LinkQuery, ModelState, Parallelism,
    PredictOptions, PreparedModel,
};
pub use training::{train, Ablation, Measurement, TrainConfig, TrainOutcome};
