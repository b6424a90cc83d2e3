//! Online metric learning for streaming multi-label classification.
//!
//! A feature → label-space projection `P` is fitted once on a seed set; a
//! label-embedding matrix `V` is then updated online, one passive-aggressive
//! step per arriving example, and labels are predicted by a k-nearest-neighbor
//! vote under the learned metric `(w_i − w_j)ᵀ V Vᵀ (w_i − w_j)`.
//!
//! The crate is `no_std` and needs only `alloc`. File formats, the model
//! snapshot and the command-line driver live in the `oml` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod knn;
pub mod linalg;
pub mod metric_learner;
pub mod projection;

pub use dataset::{
    generate_synthetic, generate_synthetic_with_model, split_seed, split_seed_ordered, Example,
    LatentModel, SeedSplit, StreamDataset, SynthConfig,
};
pub use error::{Error, Result};
pub use evaluation::{
    prequential_run, telescoping_check, BoundDiagnostics, CurveRow, Method, MetricsReport,
    RunModel, RunOutput,
};
pub use knn::{aggregate_labels, learned_distance, Neighbor, NeighborStore, TrainNnMetric};
pub use linalg::Matrix;
pub use metric_learner::{
    cubic_coefficients, hinge_loss, hinge_loss_projected, margin, select_lambda, update_v,
    CubicCoeffs, Hyperparams, MetricV, ModelState, Rank2Update, RoundOutcome, UpdateRule,
};
pub use projection::{fit_projection, Projection, Ridge};
