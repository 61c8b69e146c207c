//! Socio-spatial contagion (SSC) analysis for spatio-temporal adoption point patterns.
//!
//! The crate estimates spatio-temporal Ripley K/L functions over bounded
//! community polygons, tests them against Monte Carlo envelopes under complete
//! spatio-temporal randomness (CSTR), and derives scalar contagion metrics
//! (intensity index, range, within-household expansion), pattern labels,
//! transition records, and the associated statistical models (cluster-robust
//! regression, multinomial logit, ANOVA/Tukey, Mann-Whitney).
//!
//! Entry points:
//! - [`io::ingest`] reads the polygon/event feature-collection files.
//! - [`pipeline::run_pipeline`] runs the full analysis and writes CSV tables.
//! - [`synth`] generates synthetic communities with known ground truth.

// Negated comparisons like `!(x > 0.0)` are deliberate: they reject NaN
// where `x <= 0.0` would accept it.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod domain;
pub mod envelope;
pub mod estimator;
pub mod geom;
pub mod io;
pub mod metrics;
pub mod patterns;
pub mod pipeline;
pub mod rng;
pub mod stats;
pub mod synth;

pub use domain::{build_cohorts, validate_dataset, CohortPair, Community, PVInstallation, Timeline};
pub use envelope::{build_envelopes, significance_flags, simulate_cstr,EnvelopePair, EnvelopeSet};
pub use estimator::{cross_l_year_pair, k_function, l_function, DistanceGrid, LCurve};
pub use geom::{edge_weight, point_in_polygon, polygon_metrics, GeometrySummary, Point, Polygon};
pub use metrics::{adoption_intensity, aggregate_ci, ci_index, delta_ai, he_index, ssc_range};
pub use patterns::{classify_pattern, period_thresholds, transition_type, PatternLabel, Thresholds};
