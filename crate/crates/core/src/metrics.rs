//! Scalar SSC and adoption metrics derived from L curves and envelopes:
//! contagion intensity (CI), contagion range (R, R*), within-household
//! expansion (HE), lag aggregation, adoption intensity (AI), the
//! time-integrated adoption index (ATI), and relative adoption change (ΔAI).

use crate::domain::{Community, Timeline};
use crate::envelope::{EnvelopeKind, EnvelopePair};
use crate::estimator::LCurve;
use serde::Serialize;
use thiserror::Error;

/// Distances at or below this radius are attributed to a single household's
/// footprint (~50 m diameter).
pub const WITHIN_HOUSEHOLD_RADIUS: f64 = 25.0;
/// Scaling constant of the adoption-intensity ratio.
pub const AI_SCALE: f64 = 1.0e6;
/// Largest calendar lag entering the lag-aggregated summaries.
pub const MAX_AGGREGATION_LAG: u32 = 5;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("observed curve and envelope grids differ")]
    GridMismatch,
    #[error("expected a global envelope, got pointwise")]
    WrongEnvelopeKind,
    #[error("envelope has zero integrated width")]
    DegenerateEnvelope,
    #[error("fewer than two grid distances in [{lo}, {hi}]")]
    DegenerateRange { lo: f64, hi: f64 },
    #[error("regional mean adoption integral is zero")]
    ZeroRegionalMean,
}

/// Per-pair scalar metrics; `values` is `None` when the cohort pair is
/// missing (an empty prior or new side).
#[derive(Debug, Clone, Serialize)]
pub struct SSCMetrics {
    pub community_id: String,
    pub t: i32,
    pub t_prime: i32,
    pub lag: u32,
    pub n_prior: usize,
    pub n_new: usize,
    pub values: Option<MetricValues>,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct MetricValues {
    /// Contagion intensity index: normalized exceedance above the upper
    /// global envelope.
    pub ci: f64,
    /// Absolute contagion range, meters (exceedance measure above 25 m).
    pub r_abs: f64,
    /// Range relative to the effective analysis distance, in [0, 1].
    pub r_rel: f64,
    /// Within-household expansion: exceedance ratio at distances ≤ 25 m,
    /// `None` when the grid has fewer than two nodes in that band.
    pub he: Option<f64>,
}

fn check_pair(observed: &LCurve, envelope: &EnvelopePair) -> Result<(), MetricsError> {
    if envelope.kind != EnvelopeKind::Global {
        return Err(MetricsError::WrongEnvelopeKind);
    }
    if observed.grid != envelope.grid {
        return Err(MetricsError::GridMismatch);
    }
    Ok(())
}

/// Trapezoid over the grid nodes with `lo ≤ r ≤ hi` of the positive
/// exceedance and of the envelope width, returned as (numerator,
/// denominator).
fn exceedance_integrals(
    observed: &LCurve,
    envelope: &EnvelopePair,
    lo: f64,
    hi: f64,
) -> Result<(f64, f64), MetricsError> {
    let rs = observed.grid.values();
    let idx: Vec<usize> =
        (0..rs.len()).filter(|&i| rs[i] >= lo && rs[i] <= hi).collect();
    if idx.len() < 2 {
        return Err(MetricsError::DegenerateRange { lo, hi });
    }
    let exceed = |i: usize| (observed.values[i] - envelope.upper[i]).max(0.0);
    let width = |i: usize| envelope.upper[i] - envelope.lower[i];
    let mut num = 0.0;
    let mut den = 0.0;
    for w in idx.windows(2) {
        let (a, b) = (w[0], w[1]);
        let h = rs[b] - rs[a];
        num += 0.5 * h * (exceed(a) + exceed(b));
        den += 0.5 * h * (width(a) + width(b));
    }
    Ok((num, den))
}

/// Contagion intensity index: the integral of `max(L − L⁺, 0)` over the grid
/// divided by the integral of the global envelope width `L⁺ − L⁻`.
pub fn ci_index(observed: &LCurve, envelope: &EnvelopePair) -> Result<f64, MetricsError> {
    check_pair(observed, envelope)?;
    let grid = &observed.grid;
    let (num, den) = exceedance_integrals(observed, envelope, grid.values()[0], grid.max())?;
    if den <= 0.0 {
        return Err(MetricsError::DegenerateEnvelope);
    }
    Ok(num / den)
}

/// Contagion range: `r_abs` is the total grid measure (one step per
/// exceeding node) restricted to distances strictly above the
/// within-household cutoff; `r_rel = r_abs / r_eff` clamped to [0, 1].
pub fn ssc_range(
    observed: &LCurve,
    envelope: &EnvelopePair,
    r_eff: f64,
    within_household_cutoff: f64,
) -> Result<(f64, f64), MetricsError> {
    check_pair(observed, envelope)?;
    let rs = observed.grid.values();
    let step = observed.grid.step();
    let exceed_bins = (0..rs.len())
        .filter(|&i| rs[i] > within_household_cutoff && observed.values[i] > envelope.upper[i])
        .count();
    let r_abs = step * exceed_bins as f64;
    let r_rel = (r_abs / r_eff).clamp(0.0, 1.0);
    Ok((r_abs, r_rel))
}

/// Within-household expansion: the same normalized exceedance ratio as
/// [`ci_index`], restricted to distances at or below the household cutoff.
pub fn he_index(
    observed: &LCurve,
    envelope: &EnvelopePair,
    within_household_cutoff: f64,
) -> Result<f64, MetricsError> {
    check_pair(observed, envelope)?;
    let (num, den) =
        exceedance_integrals(observed, envelope, observed.grid.values()[0], within_household_cutoff)?;
    if den <= 0.0 {
        return Err(MetricsError::DegenerateEnvelope);
    }
    Ok(num / den)
}

/// Lag-aggregated summary: per-lag means for lags 1..=5 and their mean.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct LagAggregate {
    /// Index 0 holds lag 1. `None` where no pair realizes the lag.
    pub per_lag: [Option<f64>; MAX_AGGREGATION_LAG as usize],
    /// Mean of the available per-lag means.
    pub mean: Option<f64>,
}

/// Groups `(lag, value)` observations by calendar lag, averaging within each
/// lag and then across available lags. Lags above 5 are excluded; missing
/// lags are skipped, not zero-filled.
pub fn aggregate_lag_means(pairs: impl IntoIterator<Item = (u32, f64)>) -> LagAggregate {
    let mut sums = [0.0; MAX_AGGREGATION_LAG as usize];
    let mut counts = [0usize; MAX_AGGREGATION_LAG as usize];
    for (lag, v) in pairs {
        if (1..=MAX_AGGREGATION_LAG).contains(&lag) {
            sums[(lag - 1) as usize] += v;
            counts[(lag - 1) as usize] += 1;
        }
    }
    let mut agg = LagAggregate::default();
    let mut total = 0.0;
    let mut n = 0usize;
    for i in 0..MAX_AGGREGATION_LAG as usize {
        if counts[i] > 0 {
            let m = sums[i] / counts[i] as f64;
            agg.per_lag[i] = Some(m);
            total += m;
            n += 1;
        }
    }
    agg.mean = (n > 0).then(|| total / n as f64);
    agg
}

/// Community-level CI summary: lag means `CI̅_h` and their average `CI̅`.
pub type AggregatedCI = LagAggregate;

/// Aggregates per-pair CI values by calendar lag.
pub fn aggregate_ci(metrics: &[SSCMetrics]) -> AggregatedCI {
    aggregate_lag_means(
        metrics
            .iter()
            .filter_map(|m| m.values.as_ref().map(|v| (m.lag, v.ci))),
    )
}

/// Adoption intensity at a snapshot year: cumulative panel surface area of
/// events observed by that year, scaled by 10⁶ and divided by built-up area.
pub fn adoption_intensity(community: &Community, year: i32) -> f64 {
    let pv_area: f64 = community
        .events
        .iter()
        .filter(|e| e.year <= year)
        .map(|e| e.panel_area)
        .sum();
    pv_area * AI_SCALE / community.built_area()
}

/// AI at every timeline year, in timeline order.
pub fn ai_series(community: &Community, timeline: &Timeline) -> Vec<f64> {
    timeline.years().iter().map(|&y| adoption_intensity(community, y)).collect()
}

/// Time integral of a piecewise-linear AI series over the snapshot years.
pub fn ati_raw(series: &[f64], years: &[i32]) -> f64 {
    let mut acc = 0.0;
    for i in 1..series.len() {
        let h = f64::from(years[i] - years[i - 1]);
        acc += 0.5 * h * (series[i] + series[i - 1]);
    }
    acc
}

/// Normalizes raw adoption integrals by their regional mean. The mean of the
/// returned indices over the included communities is exactly 1.
pub fn ati_index(raw: &[f64]) -> Result<Vec<f64>, MetricsError> {
    if raw.is_empty() {
        return Err(MetricsError::ZeroRegionalMean);
    }
    let mean = raw.iter().sum::<f64>() / raw.len() as f64;
    if mean <= 0.0 {
        return Err(MetricsError::ZeroRegionalMean);
    }
    Ok(raw.iter().map(|&v| v / mean).collect())
}

/// Relative adoption change over a window, with a +1 guard on the baseline
/// so zero baselines stay well-defined.
pub fn delta_ai(ai_start: f64, ai_end: f64) -> f64 {
    (ai_end - ai_start) / (ai_start + 1.0)
}
