//! Probabilistic forecasting of dynamical systems with flow matching.
//!
//! Two learned velocity fields do the work. A *forecast* field transports
//! samples of an initial-state distribution to the distribution of states a
//! fixed horizon later; integrating it memberwise turns an initial ensemble
//! into a forecast ensemble. A *gaussify* field maps states onto a standard
//! normal latent space; perturbing an encoded state there and integrating
//! backwards yields plausible neighbours of that state, which seed the
//! initial ensemble.
//!
//! Ground truth comes from [`dynamics`] (Lotka-Volterra with an RK4 oracle, a
//! periodic moving-blob image generator), ensembles are scored with
//! [`metrics`], and [`baseline`] holds the affine autoregressive comparator.

pub mod baseline;
pub mod checkpoint;
pub mod dataset;
pub mod dynamics;
pub mod ensemble;
pub mod error;
pub mod flow;
pub mod integrate;
pub mod metrics;
pub mod nn;
pub mod perturb;
pub mod rng;
pub mod state;

pub use baseline::VarModel;
pub use dataset::{Dataset, DatasetMeta, NormStats, Standardizer};
pub use ensemble::{Ensemble, EnsembleMeta};
pub use error::{Error, Result};
pub use flow::{FieldKind, TrainConfig, TrainReport, VelocityField};
pub use integrate::{CostReport, Scheme};
pub use metrics::MetricsReport;
pub use nn::{Activation, Adam, Mlp};
pub use perturb::{NoiseFamily, NoiseSpec};
pub use state::{Dims, State};
