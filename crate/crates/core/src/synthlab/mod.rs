//! Synthetic data: classification blobs and planted exact factorizations.

pub mod blobs;
pub mod hungarian;
pub mod identifiability;
pub mod nmf;
pub mod prop1;

pub use blobs::{bayes_accuracy, gen_blobs, gen_blobs_with_centers, Blobs, BlobsSpec};
pub use hungarian::{cosine, hungarian_match, min_cost_assignment, ColumnMatching};
pub use identifiability::{
    bndl_identifiability_run, identifiability_dataset, recovery_score, IdentifiabilityConfig,
    RecoveryReport, IDENTIFIABILITY_ROW_WEIGHT, RECOVERY_THRESHOLD,
};
pub use nmf::{fit_exact_nmf, relative_residual, run_solver, NmfConfig, NmfFit, NmfSolver};
pub use prop1::{gen_prop1_instance, normalize_columns, Prop1Instance};
