//! Spatio-temporal K and L function estimators.
//!
//! Two estimators feed the analysis:
//!
//! - [`k_function`]: the full spatio-temporal K over ordered forward event
//!   pairs within temporal lag τ, normalized by `|W|·|T|/n²`. Its L transform
//!   divides K by τ first so the curve is centered at zero under CSTR.
//! - [`cross_l_year_pair`]: the prior→new cross-type spatial K for one year
//!   pair, normalized by `|W|/(n₁·n₂)`, with the L transform applied
//!   directly. This is the curve all SSC metrics consume.
//!
//! Both share a bucketed pair-accumulation kernel (cell size = the maximum
//! grid distance) and an O(n²) brute-force path that is kept permanently as
//! the correctness oracle. With unit weights the two paths agree bit-exactly
//! because per-bin contributions are integer-valued.
//!
//! Isotropic edge-correction weights are looked up from a per-community
//! [`EdgeWeightTable`] keyed by the earlier (prior) point of each pair;
//! within-task summation order is fixed so results do not depend on worker
//! count.

use crate::domain::{CohortPair, Community, Timeline};
use crate::geom::{EdgeWeightTable, Point};
use serde::Serialize;
use thiserror::Error;

/// Default spacing of the distance grid, meters.
pub const DEFAULT_GRID_STEP: f64 = 10.0;

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("distance grid is empty (max {max} below step {step})")]
    EmptyGrid { step: f64, max: f64 },
    #[error("grid step must be positive, got {0}")]
    NonPositiveStep(f64),
    #[error("estimator undefined for fewer than 2 events, got {0}")]
    TooFewEvents(usize),
    #[error("temporal lag must be positive, got {0}")]
    NonPositiveTau(f64),
}

/// Increasing evaluation distances `step, 2·step, …` up to `max`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistanceGrid {
    values: Vec<f64>,
    step: f64,
    #[serde(skip)]
    inv_step: f64,
}

impl DistanceGrid {
    pub fn new(step: f64, max: f64) -> Result<Self, EstimatorError> {
        if !(step > 0.0) {
            return Err(EstimatorError::NonPositiveStep(step));
        }
        let n = (max / step).floor() as usize;
        if n == 0 {
            return Err(EstimatorError::EmptyGrid { step, max });
        }
        let values = (1..=n).map(|k| k as f64 * step).collect();
        Ok(Self { values, step, inv_step: 1.0 / step })
    }

    /// Grid for a community: distances up to the effective analysis range.
    pub fn for_range(r_eff: f64, step: f64) -> Result<Self, EstimatorError> {
        Self::new(step, r_eff)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn max(&self) -> f64 {
        *self.values.last().unwrap()
    }

    /// Index of the first grid distance ≥ `d`, or `None` beyond the grid.
    /// Uses the same comparisons as the indicator `I(Δl ≤ r)` so histogram
    /// binning matches the brute-force oracle exactly: an arithmetic
    /// estimate corrected by comparisons against the stored grid values.
    #[inline]
    pub fn bin_index(&self, d: f64) -> Option<usize> {
        let n = self.values.len();
        // Truncating cast keeps this on the SSE2 fast path; the walks below
        // correct the estimate against the stored values.
        let mut idx = ((d * self.inv_step) as usize).min(n - 1);
        while idx > 0 && self.values[idx - 1] >= d {
            idx -= 1;
        }
        while self.values[idx] < d {
            idx += 1;
            if idx == n {
                return None;
            }
        }
        Some(idx)
    }
}

/// An estimated L curve on a distance grid.
#[derive(Debug, Clone, Serialize)]
pub struct LCurve {
    pub grid: DistanceGrid,
    pub values: Vec<f64>,
    pub n_prior: usize,
    pub n_new: usize,
    /// `(t, t')` for cross-type curves; `None` for the full-pattern mode.
    pub year_pair: Option<(i32, i32)>,
    /// Temporal lag τ, full-pattern mode only.
    pub tau: Option<f64>,
}

/// Edge-correction mode for the estimators.
#[derive(Clone, Copy)]
pub enum EdgeCorrection<'a> {
    /// Unit weights; the configuration compared against the oracle.
    None,
    /// Isotropic circumference-fraction weights from a per-community table,
    /// keyed by the earlier point's event row.
    Isotropic(&'a EdgeWeightTable),
}

/// Number of ordered pairs `(i, j)` with `t_j > t_i`, `t_j − t_i ≤ τ`, and
/// `‖l_i − l_j‖ ≤ r`. Brute-force reference kept permanently as the oracle.
pub fn pairwise_forward_counts(
    events: &[(Point, i32)],
    r: f64,
    tau: f64,
) -> u64 {
    let mut count = 0;
    for (i, (pi, ti)) in events.iter().enumerate() {
        for (j, (pj, tj)) in events.iter().enumerate() {
            if i == j {
                continue;
            }
            let dt = f64::from(tj - ti);
            if dt > 0.0 && dt <= tau && pi.dist(pj) <= r {
                count += 1;
            }
        }
    }
    count
}

/// Number of prior→new pairs within distance `r`. Brute-force cross oracle.
pub fn cross_pair_count(prior: &[Point], new: &[Point], r: f64) -> u64 {
    let mut count = 0;
    for p in prior {
        for q in new {
            if p.dist(q) <= r {
                count += 1;
            }
        }
    }
    count
}

/// Spatial buckets at cell size = the maximum grid distance. Buckets hold
/// point indices in ascending order; a 3×3 neighborhood covers all points
/// within one cell length of a query.
struct Buckets {
    origin: Point,
    inv_cell: f64,
    nx: usize,
    ny: usize,
    cells: Vec<Vec<u32>>,
}

impl Buckets {
    fn build(points: &[Point], cell: f64) -> Self {
        let mut lo = Point::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in points {
            lo.x = lo.x.min(p.x);
            lo.y = lo.y.min(p.y);
            hi.x = hi.x.max(p.x);
            hi.y = hi.y.max(p.y);
        }
        let nx = (((hi.x - lo.x) / cell).floor() as usize + 1).max(1);
        let ny = (((hi.y - lo.y) / cell).floor() as usize + 1).max(1);
        let mut cells = vec![Vec::new(); nx * ny];
        let inv_cell = 1.0 / cell;
        for (i, p) in points.iter().enumerate() {
            let cx = (((p.x - lo.x) * inv_cell) as usize).min(nx - 1);
            let cy = (((p.y - lo.y) * inv_cell) as usize).min(ny - 1);
            cells[cy * nx + cx].push(i as u32);
        }
        Self { origin: lo, inv_cell, nx, ny, cells }
    }

    #[inline]
    fn neighborhood(&self, p: Point) -> impl Iterator<Item = &[u32]> {
        let cx = (((p.x - self.origin.x) * self.inv_cell).floor() as i64).clamp(0, self.nx as i64 - 1);
        let cy = (((p.y - self.origin.y) * self.inv_cell).floor() as i64).clamp(0, self.ny as i64 - 1);
        let x0 = (cx - 1).max(0) as usize;
        let x1 = ((cx + 1) as usize).min(self.nx - 1);
        let y0 = (cy - 1).max(0) as usize;
        let y1 = ((cy + 1) as usize).min(self.ny - 1);
        let nx = self.nx;
        let cells = &self.cells;
        (y0..=y1).flat_map(move |y| (x0..=x1).map(move |x| cells[y * nx + x].as_slice()))
    }
}

/// Drives `visit(source_index, target)` over all source→target pairs,
/// bucketed by cells of the maximum grid distance when the target domain is
/// wide enough for bucketing to prune.
#[inline(always)]
fn for_each_pair(
    sources: &[Point],
    targets: &[Point],
    cell: f64,
    mut visit: impl FnMut(usize, Point),
) {
    let use_buckets = {
        let (mut lo_x, mut hi_x, mut lo_y, mut hi_y) =
            (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for p in targets {
            lo_x = lo_x.min(p.x);
            hi_x = hi_x.max(p.x);
            lo_y = lo_y.min(p.y);
            hi_y = hi_y.max(p.y);
        }
        !targets.is_empty() && ((hi_x - lo_x) > 3.0 * cell || (hi_y - lo_y) > 3.0 * cell)
    };
    if use_buckets {
        let buckets = Buckets::build(targets, cell);
        for (si, &s) in sources.iter().enumerate() {
            for bucket in buckets.neighborhood(s) {
                for &ti in bucket {
                    visit(si, targets[ti as usize]);
                }
            }
        }
    } else {
        for si in 0..sources.len() {
            for &t in targets {
                visit(si, t);
            }
        }
    }
}

/// Weighted pair-count histogram over grid bins: for every source→target
/// pair within the grid range, adds `weight(source_row, dist)` to the bin of
/// the first grid distance ≥ dist.
fn accumulate_pairs<W: Fn(u32, f64) -> f64>(
    sources: &[Point],
    source_rows: &[u32],
    targets: &[Point],
    grid: &DistanceGrid,
    weight: &W,
    hist: &mut [f64],
) {
    let max_r = grid.max();
    // Guard band over the squared cutoff: pairs in the rounding window fall
    // through to the exact comparison inside bin_index.
    let max_r2_guard = max_r * max_r * (1.0 + 1e-12);
    for_each_pair(sources, targets, max_r, |si, target| {
        let s = sources[si];
        let dx = target.x - s.x;
        let dy = target.y - s.y;
        let d2 = dx * dx + dy * dy;
        if d2 > max_r2_guard {
            return;
        }
        let d = d2.sqrt();
        if let Some(bin) = grid.bin_index(d) {
            hist[bin] += weight(source_rows[si], d);
        }
    });
}

/// Isotropic-corrected pair histogram with the per-source weight row held
/// across the inner sweep. The dense path filters each target chunk by
/// squared distance with branchless compaction before the expensive
/// sqrt/bin/weight work, keeping the in-range branch off the critical path;
/// pair processing order (source-major, ascending target index) matches the
/// plain double loop exactly.
fn accumulate_pairs_table(
    sources: &[Point],
    source_rows: &[u32],
    targets: &[Point],
    grid: &DistanceGrid,
    table: &EdgeWeightTable,
    hist: &mut [f64],
) {
    if sources.is_empty() || targets.is_empty() {
        return;
    }
    let max_r = grid.max();
    let max_r2_guard = max_r * max_r * (1.0 + 1e-12);

    let wide = {
        let (mut lo_x, mut hi_x, mut lo_y, mut hi_y) =
            (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for p in targets {
            lo_x = lo_x.min(p.x);
            hi_x = hi_x.max(p.x);
            lo_y = lo_y.min(p.y);
            hi_y = hi_y.max(p.y);
        }
        (hi_x - lo_x) > 3.0 * max_r || (hi_y - lo_y) > 3.0 * max_r
    };
    if wide {
        // Sparse domain: bucket pruning dominates, branches are mostly
        // not-taken and predictable.
        let buckets = Buckets::build(targets, max_r);
        for (si, &s) in sources.iter().enumerate() {
            let row = table.row(source_rows[si] as usize);
            for bucket in buckets.neighborhood(s) {
                for &ti in bucket {
                    let t = targets[ti as usize];
                    let dx = t.x - s.x;
                    let dy = t.y - s.y;
                    let d2 = dx * dx + dy * dy;
                    if d2 <= max_r2_guard {
                        let d = d2.sqrt();
                        if let Some(bin) = grid.bin_index(d) {
                            hist[bin] += row.weight(d);
                        }
                    }
                }
            }
        }
        return;
    }

    const CHUNK: usize = 64;
    let mut d2_buf = [0.0_f64; CHUNK];
    let mut keep = [0u32; CHUNK];
    for (si, &s) in sources.iter().enumerate() {
        let row = table.row(source_rows[si] as usize);
        for chunk in targets.chunks(CHUNK) {
            for (j, t) in chunk.iter().enumerate() {
                let dx = t.x - s.x;
                let dy = t.y - s.y;
                d2_buf[j] = dx * dx + dy * dy;
            }
            let mut kept = 0usize;
            for (j, &d2) in d2_buf[..chunk.len()].iter().enumerate() {
                keep[kept] = j as u32;
                kept += usize::from(d2 <= max_r2_guard);
            }
            for &j in &keep[..kept] {
                let d = d2_buf[j as usize].sqrt();
                if let Some(bin) = grid.bin_index(d) {
                    hist[bin] += row.weight(d);
                }
            }
        }
    }
}

fn forward_pair_hist(
    groups: &[(i32, Vec<u32>, Vec<Point>)],
    grid: &DistanceGrid,
    tau: f64,
    correction: EdgeCorrection<'_>,
    hist: &mut [f64],
) {
    for (ai, (ya, rows_a, pts_a)) in groups.iter().enumerate() {
        for (yb, _, pts_b) in groups.iter().skip(ai + 1) {
            let dt = f64::from(yb - ya);
            if dt <= tau {
                match correction {
                    EdgeCorrection::None => {
                        accumulate_pairs(pts_a, rows_a, pts_b, grid, &|_, _| 1.0, hist)
                    }
                    EdgeCorrection::Isotropic(table) => {
                        accumulate_pairs_table(pts_a, rows_a, pts_b, grid, table, hist)
                    }
                }
            }
        }
    }
}

/// Estimates the spatio-temporal K function on the grid:
/// `K̂(r, τ) = (|W|·|T|/n²) · Σ w_ij · I(Δl_ij ≤ r, 0 < Δt_ij ≤ τ)` over
/// ordered event pairs, with weights centered on the earlier event.
pub fn k_function(
    community: &Community,
    timeline: &Timeline,
    grid: &DistanceGrid,
    tau: f64,
    correction: EdgeCorrection<'_>,
) -> Result<Vec<f64>, EstimatorError> {
    if !(tau > 0.0) {
        return Err(EstimatorError::NonPositiveTau(tau));
    }
    let n = community.events.len();
    if n < 2 {
        return Err(EstimatorError::TooFewEvents(n));
    }
    // Group event rows by year, ascending; ordered forward pairs are cross
    // pairs between an earlier and a later year group.
    let mut years: Vec<i32> = community.events.iter().map(|e| e.year).collect();
    years.sort_unstable();
    years.dedup();
    let groups: Vec<(i32, Vec<u32>, Vec<Point>)> = years
        .iter()
        .map(|&y| {
            let rows: Vec<u32> = community
                .events
                .iter()
                .enumerate()
                .filter(|(_, e)| e.year == y)
                .map(|(i, _)| i as u32)
                .collect();
            let pts = rows.iter().map(|&i| community.events[i as usize].location).collect();
            (y, rows, pts)
        })
        .collect();

    let mut hist = vec![0.0; grid.len()];
    forward_pair_hist(&groups, grid, tau, correction, &mut hist);

    let norm = community.geometry.area * timeline.span() / (n as f64 * n as f64);
    let mut acc = 0.0;
    Ok(hist
        .iter()
        .map(|&h| {
            acc += h;
            norm * acc
        })
        .collect())
}

pub(crate) fn l_values(k: &[f64], grid: &DistanceGrid) -> Vec<f64> {
    k.iter()
        .zip(grid.values())
        .map(|(&kv, &r)| (kv / std::f64::consts::PI).sqrt() - r)
        .collect()
}

/// Variance-stabilized L transform of the full spatio-temporal K:
/// `L(r, τ) = sqrt((K/τ)/π) − r`. Dividing by τ centers the curve at zero
/// under CSTR at every temporal lag.
pub fn l_function(k: &[f64], grid: &DistanceGrid, tau: f64, n_events: usize) -> LCurve {
    let scaled: Vec<f64> = k.iter().map(|&v| v / tau).collect();
    LCurve {
        grid: grid.clone(),
        values: l_values(&scaled, grid),
        n_prior: n_events,
        n_new: n_events,
        year_pair: None,
        tau: Some(tau),
    }
}

/// Cross-type K between fixed prior points and new points:
/// `K̂₁₂(r) = (|W|/(n₁·n₂)) · Σᵢ Σⱼ w_ij · I(Δl_ij ≤ r)`.
pub fn cross_k(
    prior: &[Point],
    prior_rows: &[u32],
    new: &[Point],
    area: f64,
    grid: &DistanceGrid,
    correction: EdgeCorrection<'_>,
) -> Vec<f64> {
    let mut hist = vec![0.0; grid.len()];
    match correction {
        EdgeCorrection::None => {
            accumulate_pairs(prior, prior_rows, new, grid, &|_, _| 1.0, &mut hist)
        }
        EdgeCorrection::Isotropic(table) => {
            accumulate_pairs_table(prior, prior_rows, new, grid, table, &mut hist)
        }
    }
    let norm = area / (prior.len() as f64 * new.len() as f64);
    let mut acc = 0.0;
    hist.iter()
        .map(|&h| {
            acc += h;
            norm * acc
        })
        .collect()
}

/// The per-year-pair cross-type L curve consumed by all SSC metrics:
/// `L(r) = sqrt(K̂₁₂(r)/π) − r` for the cohort's prior→new pairs.
///
/// Returns `None` when either cohort side is empty; downstream metrics treat
/// the pair as missing rather than failing.
pub fn cross_l_year_pair(
    community: &Community,
    cohort: &CohortPair,
    grid: &DistanceGrid,
    correction: EdgeCorrection<'_>,
) -> Option<LCurve> {
    if cohort.prior.is_empty() || cohort.new.is_empty() {
        return None;
    }
    let k = cross_k(
        &cohort.prior,
        &cohort.prior_rows,
        &cohort.new,
        community.geometry.area,
        grid,
        correction,
    );
    Some(LCurve {
        grid: grid.clone(),
        values: l_values(&k, grid),
        n_prior: cohort.prior.len(),
        n_new: cohort.new.len(),
        year_pair: Some((cohort.t, cohort.t_prime)),
        tau: None,
    })
}
