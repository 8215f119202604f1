//! Multi-region neural representation of fMRI-style time series.
//!
//! The pipeline turns each subject's BOLD series into one snapshot per
//! stimulus (peaks of the Gaussian-smoothed design matrix), maps snapshots
//! and regressor maps into the atlas space, weights each snapshot by its
//! category's regressor map, cuts it into atlas regions, denoises each active
//! region, and classifies with one L1-regularized SVM per region whose
//! decision values are averaged.

pub mod error;
pub mod eval;
pub mod feature;
pub mod glm;
pub mod io;
pub mod model;
pub mod pipeline;
pub mod register;
pub mod snapshot;
pub mod synth;
pub mod volume;

/// Crate version, recorded in stage manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use error::{Error, ErrorClass, Result};
pub use eval::{
    accuracy, auc, correlation_matrices, loo_evaluate, loo_on_features, loo_shuffled, CorrelationReport,
    EvalReport, Experiment,
};
pub use feature::{FeatureLayout, FeatureVector};
pub use glm::{CorrelationMap, DesignMatrix, HrfKernel, NoiseModel};
pub use model::{EnsembleModel, RegionClassifier, SvmOptions};
pub use pipeline::{PipelineParams, SubjectData, SubjectFeatures};
pub use register::{AffineTransform, RegistrationConfig, RegistrationMode};
pub use snapshot::{GaussianKernel1D, SnapshotSet};
pub use synth::{generate, GroundTruth, SynthConfig};
pub use volume::{Atlas, BoldSeries, Dims, OnsetSchedule, Volume3D};
