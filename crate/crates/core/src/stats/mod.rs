//! Statistical models and tests: cluster-robust OLS with Wald tests,
//! multinomial logit, one-way ANOVA with Tukey HSD, and Mann-Whitney.

pub mod anova;
pub mod mannwhitney;
pub mod mlm;
pub mod ols;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error("dimension mismatch: {detail}")]
    DimensionMismatch { detail: String },
    #[error("need at least 2 clusters, got {0}")]
    TooFewClusters(usize),
    #[error("design matrix is rank deficient at column '{column}'")]
    RankDeficient { column: String },
    #[error("coefficient subset is empty")]
    EmptySubset,
    #[error("covariance submatrix is singular")]
    SingularCovariance,
    #[error("outcome '{outcome}' has no observations in window '{window}'")]
    EmptyCell { outcome: String, window: String },
    #[error("multinomial logit did not converge in {0} iterations")]
    NoConvergence(usize),
    #[error("need at least 2 groups with at least 2 observations each")]
    TooFewGroups,
    #[error("group '{0}' has fewer than 2 observations")]
    GroupTooSmall(String),
    #[error("letter display supports at most 16 groups, got {0}")]
    TooManyGroups(usize),
}

pub use anova::{anova_tukey, AnovaResult};
pub use mannwhitney::{mann_whitney, MannWhitneyResult};
pub use mlm::{multinomial_logit, MLMResult};
pub use ols::{ols_cluster_robust, wald_joint_test, RegressionResult, WaldTest};
