//! CSTR null simulations and Monte Carlo envelopes.
//!
//! The null model holds the prior cohort fixed and resamples new-cohort
//! locations uniformly inside the community polygon, preserving counts. Two
//! envelope kinds are built from the simulated cross-type L curves:
//!
//! - global: simulation-wise min/max at every grid distance — the band whose
//!   integrated width normalizes the contagion intensity index;
//! - pointwise: per-distance rank envelope at the two-sided 5% level, i.e.
//!   the k-th extreme values with `k = floor((n_sims + 1)/40)`, so 39
//!   simulations is the minimum and yields min/max.
//!
//! Simulation seeds derive from (master seed, community id, t, t',
//! simulation index), so any single realization is reproducible in isolation
//! regardless of scheduling.

use crate::domain::{CohortPair, Community};
use crate::estimator::{DistanceGrid, EdgeCorrection, LCurve};
use crate::geom::Point;
use crate::rng::{derive_seed, hash_bytes, year_part, SplitMix64};
use serde::Serialize;
use thiserror::Error;

/// Default number of null realizations.
pub const DEFAULT_N_SIMS: usize = 1000;
/// Minimum simulations for the two-sided 5% pointwise rank envelope.
pub const MIN_N_SIMS: usize = 39;
/// Rejection-sampling budget: draws allowed per requested point.
pub const REJECTION_BUDGET_PER_POINT: usize = 1000;

#[derive(Debug, Error)]
pub enum NullModelError {
    #[error("need at least {MIN_N_SIMS} simulations, got {0}")]
    TooFewSims(usize),
    #[error(
        "rejection sampling exhausted {draws} draws for {needed} points in community {community} \
         (polygon area may be tiny relative to its bounding box)"
    )]
    RejectionBudgetExceeded { community: String, needed: usize, draws: usize },
    #[error("observed curve and envelope grids differ")]
    GridMismatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvelopeKind {
    Pointwise,
    Global,
}

/// Lower/upper simulation envelope on a distance grid.
#[derive(Debug, Clone, Serialize)]
pub struct EnvelopePair {
    pub grid: DistanceGrid,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub n_sims: usize,
    pub seed: u64,
    pub kind: EnvelopeKind,
}

/// Global and pointwise envelopes from one simulation batch.
#[derive(Debug, Clone)]
pub struct EnvelopeSet {
    pub global: EnvelopePair,
    pub pointwise: EnvelopePair,
}

/// Seed of one CSTR realization, reproducible in isolation.
pub fn cstr_sim_seed(master: u64, community_id: &str, t: i32, t_prime: i32, sim: usize) -> u64 {
    derive_seed(
        master,
        &[hash_bytes(community_id.as_bytes()), year_part(t), year_part(t_prime), sim as u64],
    )
}

/// Uniform points inside the polygon by rejection from the bounding box,
/// appended to `out`.
fn uniform_in_polygon_into(
    community: &Community,
    n: usize,
    rng: &mut SplitMix64,
    out: &mut Vec<Point>,
) -> Result<(), NullModelError> {
    let (lo, hi) = community.polygon.bbox();
    let budget = REJECTION_BUDGET_PER_POINT * n.max(1);
    let mut draws = 0;
    out.clear();
    while out.len() < n {
        if draws >= budget {
            return Err(NullModelError::RejectionBudgetExceeded {
                community: community.id.clone(),
                needed: n,
                draws,
            });
        }
        let p = Point::new(rng.uniform(lo.x, hi.x), rng.uniform(lo.y, hi.y));
        draws += 1;
        if community.polygon.contains(p) {
            out.push(p);
        }
    }
    Ok(())
}

fn uniform_in_polygon(
    community: &Community,
    n: usize,
    rng: &mut SplitMix64,
) -> Result<Vec<Point>, NullModelError> {
    let mut points = Vec::with_capacity(n);
    uniform_in_polygon_into(community, n, rng, &mut points)?;
    Ok(points)
}

/// One CSTR realization of a cohort: prior fixed, new-cohort locations
/// resampled uniformly inside the polygon, counts preserved. Deterministic
/// given the seed.
pub fn simulate_cstr(
    community: &Community,
    cohort: &CohortPair,
    seed: u64,
) -> Result<CohortPair, NullModelError> {
    let mut rng = SplitMix64::new(seed);
    let new = uniform_in_polygon(community, cohort.new.len(), &mut rng)?;
    Ok(CohortPair {
        t: cohort.t,
        t_prime: cohort.t_prime,
        lag: cohort.lag,
        prior: cohort.prior.clone(),
        prior_rows: cohort.prior_rows.clone(),
        new,
    })
}

/// Builds global and pointwise envelopes from `n_sims` CSTR realizations of
/// the cohort. Returns `None` when the cohort has an empty side (the curve
/// itself is missing).
pub fn build_envelopes(
    community: &Community,
    cohort: &CohortPair,
    grid: &DistanceGrid,
    correction: EdgeCorrection<'_>,
    n_sims: usize,
    master_seed: u64,
) -> Result<Option<EnvelopeSet>, NullModelError> {
    if n_sims < MIN_N_SIMS {
        return Err(NullModelError::TooFewSims(n_sims));
    }
    if cohort.prior.is_empty() || cohort.new.is_empty() {
        return Ok(None);
    }
    let m = grid.len();
    let mut lo = vec![f64::INFINITY; m];
    let mut hi = vec![f64::NEG_INFINITY; m];
    // Flat n_sims × m value matrix retained for the rank envelope. The prior
    // side is fixed, so each realization only redraws the new-cohort
    // locations; scratch buffers are reused across realizations.
    let mut sims = vec![0.0_f64; n_sims * m];
    let mut new_points: Vec<Point> = Vec::with_capacity(cohort.new.len());
    for sim in 0..n_sims {
        let seed = cstr_sim_seed(master_seed, &community.id, cohort.t, cohort.t_prime, sim);
        let mut rng = SplitMix64::new(seed);
        uniform_in_polygon_into(community, cohort.new.len(), &mut rng, &mut new_points)?;
        let k = crate::estimator::cross_k(
            &cohort.prior,
            &cohort.prior_rows,
            &new_points,
            community.geometry.area,
            grid,
            correction,
        );
        let row = &mut sims[sim * m..(sim + 1) * m];
        for (i, (slot, &kv)) in row.iter_mut().zip(k.iter()).enumerate() {
            let v = (kv / std::f64::consts::PI).sqrt() - grid.values()[i];
            *slot = v;
            lo[i] = lo[i].min(v);
            hi[i] = hi[i].max(v);
        }
    }

    let rank = pointwise_rank(n_sims);
    let mut pw_lo = Vec::with_capacity(m);
    let mut pw_hi = Vec::with_capacity(m);
    let mut column = vec![0.0; n_sims];
    for i in 0..m {
        for s in 0..n_sims {
            column[s] = sims[s * m + i];
        }
        let cmp = |a: &f64, b: &f64| a.partial_cmp(b).unwrap();
        let (_, &mut lo_k, _) = column.select_nth_unstable_by(rank - 1, cmp);
        let (_, &mut hi_k, _) = column.select_nth_unstable_by(n_sims - rank, cmp);
        pw_lo.push(lo_k);
        pw_hi.push(hi_k);
    }

    Ok(Some(EnvelopeSet {
        global: EnvelopePair {
            grid: grid.clone(),
            lower: lo,
            upper: hi,
            n_sims,
            seed: master_seed,
            kind: EnvelopeKind::Global,
        },
        pointwise: EnvelopePair {
            grid: grid.clone(),
            lower: pw_lo,
            upper: pw_hi,
            n_sims,
            seed: master_seed,
            kind: EnvelopeKind::Pointwise,
        },
    }))
}

/// Rank of the extreme used on each side of the two-sided 5% envelope:
/// `k = floor((n + 1) · 0.025)`, at least 1.
pub fn pointwise_rank(n_sims: usize) -> usize {
    (((n_sims + 1) as f64 * 0.025).floor() as usize).max(1)
}

/// Per-distance position of the observed curve relative to an envelope.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BandFlag {
    Above,
    Within,
    Below,
}

/// Flags each grid distance: `Above` iff strictly above the upper bound,
/// `Below` iff strictly below the lower bound.
pub fn significance_flags(
    observed: &LCurve,
    envelope: &EnvelopePair,
) -> Result<Vec<BandFlag>, NullModelError> {
    if observed.grid != envelope.grid {
        return Err(NullModelError::GridMismatch);
    }
    Ok(observed
        .values
        .iter()
        .zip(envelope.upper.iter().zip(&envelope.lower))
        .map(|(&v, (&up, &lo))| {
            if v > up {
                BandFlag::Above
            } else if v < lo {
                BandFlag::Below
            } else {
                BandFlag::Within
            }
        })
        .collect())
}
