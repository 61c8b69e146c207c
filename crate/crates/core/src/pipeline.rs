//! End-to-end orchestration: per-community estimation and envelopes, metric
//! aggregation, pattern classification, transition analysis, the regression
//! and multinomial-logit models, ANOVA/Tukey summaries, and CSV persistence.
//!
//! Determinism contract: with a fixed manifest (seed, sims, grid step,
//! threshold mode, timeline, input data) the emitted CSV files are
//! byte-identical across runs and across worker counts. Work parallelizes
//! over (community × year pair) tasks; every reduction happens over
//! deterministically ordered results.

use crate::domain::{build_cohorts, Community, Timeline, ValidationReport};
use crate::envelope::{build_envelopes, significance_flags, BandFlag, EnvelopeSet};
use crate::estimator::{cross_l_year_pair, DistanceGrid, EdgeCorrection, LCurve};
use crate::geom::{EdgeWeightTable, GeometrySummary, DEFAULT_WEIGHT_CAP};
use crate::io::{fmt_f64, write_csv, Dataset, IoError};
use crate::metrics::{
    aggregate_lag_means, ai_series, ati_index, ati_raw, ci_index, delta_ai, he_index, ssc_range,
    LagAggregate, MetricValues, MetricsError, SSCMetrics, WITHIN_HOUSEHOLD_RADIUS,
};
use crate::patterns::{
    chain_for_timeline, classify_pattern, period_thresholds, transition_type, windows_from_chain,
    Dimension, PatternLabel, Thresholds, ThresholdProvenance, TransitionRecord, TransitionType,
    TransitionWindow,
};
use crate::stats::{
    anova_tukey, mann_whitney, multinomial_logit, ols_cluster_robust, wald_joint_test,
    InferenceError,
};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("no communities eligible for analysis")]
    NothingToAnalyze,
    #[error("thread pool: {0}")]
    ThreadPool(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    /// Contemporaneous means per year pair (the transition-analysis default).
    Period,
    /// Whole-period global cuts for every pair.
    Global,
}

impl std::str::FromStr for ThresholdMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "period" => Ok(Self::Period),
            "global" => Ok(Self::Global),
            other => Err(format!("unknown threshold mode '{other}' (period|global)")),
        }
    }
}

/// Analysis parameters shared by every community task.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub master_seed: u64,
    pub n_sims: usize,
    pub grid_step: f64,
    pub threshold_mode: ThresholdMode,
    /// Worker threads; 0 uses the rayon default.
    pub jobs: usize,
    pub out_dir: PathBuf,
    pub weight_cap: f64,
}

impl RunConfig {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        Self {
            master_seed: 0,
            n_sims: crate::envelope::DEFAULT_N_SIMS,
            grid_step: crate::estimator::DEFAULT_GRID_STEP,
            threshold_mode: ThresholdMode::Period,
            jobs: 0,
            out_dir: out_dir.into(),
            weight_cap: DEFAULT_WEIGHT_CAP,
        }
    }
}

/// One year pair of one community, fully analyzed.
#[derive(Debug, Clone)]
pub struct PairAnalysis {
    pub t: i32,
    pub t_prime: i32,
    pub lag: u32,
    pub observed: Option<LCurve>,
    pub envelopes: Option<EnvelopeSet>,
    /// Position vs the global envelope, per grid distance.
    pub flags: Option<Vec<BandFlag>>,
    pub metrics: SSCMetrics,
}

/// Everything computed for one community.
#[derive(Debug, Clone)]
pub struct CommunityAnalysis {
    pub id: String,
    pub geometry: GeometrySummary,
    pub grid: Option<DistanceGrid>,
    pub pairs: Vec<PairAnalysis>,
    pub ci_agg: LagAggregate,
    pub r_abs_agg: LagAggregate,
    pub r_rel_agg: LagAggregate,
    pub he_agg: LagAggregate,
    /// AI at each timeline year.
    pub ai: Vec<f64>,
    pub ati_raw: f64,
    /// Region-normalized ATI, filled by the region stage.
    pub ati: f64,
    /// Whole-period pattern under the global cuts, filled by the region
    /// stage.
    pub pattern: Option<PatternLabel>,
    /// Set when the community could not be analyzed (reason).
    pub skipped: Option<String>,
}

/// Analyzes one community: grid, edge-weight table, cohorts, observed
/// curves, envelopes, and per-pair metrics.
pub fn analyze_community(
    community: &Community,
    timeline: &Timeline,
    config: &RunConfig,
) -> CommunityAnalysis {
    let ai = ai_series(community, timeline);
    let raw = ati_raw(&ai, timeline.years());
    let base = |skipped: Option<String>, grid: Option<DistanceGrid>, pairs: Vec<PairAnalysis>| {
        let ci_agg = aggregate_lag_means(
            pairs
                .iter()
                .filter_map(|p| p.metrics.values.as_ref().map(|v| (p.lag, v.ci))),
        );
        let r_abs_agg = aggregate_lag_means(
            pairs
                .iter()
                .filter_map(|p| p.metrics.values.as_ref().map(|v| (p.lag, v.r_abs))),
        );
        let r_rel_agg = aggregate_lag_means(
            pairs
                .iter()
                .filter_map(|p| p.metrics.values.as_ref().map(|v| (p.lag, v.r_rel))),
        );
        let he_agg = aggregate_lag_means(pairs.iter().filter_map(|p| {
            p.metrics.values.as_ref().and_then(|v| v.he).map(|he| (p.lag, he))
        }));
        CommunityAnalysis {
            id: community.id.clone(),
            geometry: community.geometry,
            grid,
            pairs,
            ci_agg,
            r_abs_agg,
            r_rel_agg,
            he_agg,
            ai: ai.clone(),
            ati_raw: raw,
            ati: f64::NAN,
            pattern: None,
            skipped,
        }
    };

    let grid = match DistanceGrid::for_range(community.geometry.r_eff, config.grid_step) {
        Ok(g) if g.len() >= 2 => g,
        _ => {
            return base(
                Some(format!(
                    "effective range {:.1} m too small for a {} m grid",
                    community.geometry.r_eff, config.grid_step
                )),
                None,
                Vec::new(),
            )
        }
    };

    let table = EdgeWeightTable::build(
        &community.polygon,
        &community.event_points(),
        community.geometry.r_eff,
        EdgeWeightTable::DEFAULT_BINS,
        config.weight_cap,
    );
    let correction = EdgeCorrection::Isotropic(&table);

    let cohorts = build_cohorts(community, timeline);
    let pairs: Vec<PairAnalysis> = cohorts
        .par_iter()
        .map(|cohort| {
            let observed = cross_l_year_pair(community, cohort, &grid, correction);
            let envelopes = build_envelopes(
                community,
                cohort,
                &grid,
                correction,
                config.n_sims,
                config.master_seed,
            )
            .unwrap_or_default();
            let (values, flags) = match (&observed, &envelopes) {
                (Some(obs), Some(env)) => {
                    let ci = ci_index(obs, &env.global);
                    let range =
                        ssc_range(obs, &env.global, community.geometry.r_eff, WITHIN_HOUSEHOLD_RADIUS);
                    let he = match he_index(obs, &env.global, WITHIN_HOUSEHOLD_RADIUS) {
                        Ok(v) => Some(v),
                        Err(MetricsError::DegenerateRange { .. }) => None,
                        Err(_) => None,
                    };
                    let flags = significance_flags(obs, &env.global).ok();
                    match (ci, range) {
                        (Ok(ci), Ok((r_abs, r_rel))) => {
                            (Some(MetricValues { ci, r_abs, r_rel, he }), flags)
                        }
                        _ => (None, flags),
                    }
                }
                _ => (None, None),
            };
            PairAnalysis {
                t: cohort.t,
                t_prime: cohort.t_prime,
                lag: cohort.lag,
                metrics: SSCMetrics {
                    community_id: community.id.clone(),
                    t: cohort.t,
                    t_prime: cohort.t_prime,
                    lag: cohort.lag,
                    n_prior: cohort.prior.len(),
                    n_new: cohort.new.len(),
                    values,
                },
                observed,
                envelopes,
                flags,
            }
        })
        .collect();

    base(None, Some(grid), pairs)
}

/// Transition classification of one community over the windows.
#[derive(Debug, Clone)]
struct WindowState {
    window: TransitionWindow,
    /// Per-pair thresholds used by this window (initial, final).
    cuts: (Thresholds, Thresholds),
}

/// Region-level products of the analysis.
pub struct RegionAnalysis {
    pub communities: Vec<CommunityAnalysis>,
    pub global_cuts: Option<Thresholds>,
    pub windows: Vec<TransitionWindow>,
    pub transitions: Vec<TransitionRecord>,
}

/// Runs the per-community and region stages without writing anything.
pub fn analyze_region(
    dataset: &Dataset,
    report: &ValidationReport,
    config: &RunConfig,
) -> Result<RegionAnalysis, PipelineError> {
    let excluded: std::collections::BTreeSet<&str> =
        report.excluded_ids().into_iter().collect();
    let eligible: Vec<&Community> = dataset
        .communities
        .iter()
        .filter(|c| !excluded.contains(c.id.as_str()))
        .collect();
    if eligible.is_empty() {
        return Err(PipelineError::NothingToAnalyze);
    }

    let mut communities: Vec<CommunityAnalysis> = eligible
        .par_iter()
        .map(|c| analyze_community(c, &dataset.timeline, config))
        .collect();

    // ATI normalization over analyzed communities.
    let raws: Vec<f64> = communities.iter().map(|c| c.ati_raw).collect();
    if let Ok(ati) = ati_index(&raws) {
        for (c, v) in communities.iter_mut().zip(ati) {
            c.ati = v;
        }
    }

    // Whole-period global cuts: means of the community-level aggregates.
    let complete: Vec<(f64, f64, f64)> = communities
        .iter()
        .filter_map(|c| {
            match (c.ci_agg.mean, c.r_abs_agg.mean, c.r_rel_agg.mean) {
                (Some(ci), Some(r), Some(rr)) => Some((ci, r, rr)),
                _ => None,
            }
        })
        .collect();
    let global_cuts = period_thresholds(&complete).map(|t| Thresholds {
        provenance: ThresholdProvenance::FixedGlobal,
        ..t
    });
    if let Some(cuts) = &global_cuts {
        for c in communities.iter_mut() {
            if let (Some(ci), Some(r), Some(rr)) =
                (c.ci_agg.mean, c.r_abs_agg.mean, c.r_rel_agg.mean)
            {
                c.pattern = Some(classify_pattern(ci, r, rr, cuts));
            }
        }
    }

    // Transition windows and per-pair thresholds.
    let chain = chain_for_timeline(dataset.timeline.years());
    let windows = windows_from_chain(&chain);
    let pair_values = |pair: (i32, i32)| -> Vec<(f64, f64, f64)> {
        communities
            .iter()
            .filter_map(|c| {
                c.pairs
                    .iter()
                    .find(|p| (p.t, p.t_prime) == pair)
                    .and_then(|p| p.metrics.values.as_ref())
                    .map(|v| (v.ci, v.r_abs, v.r_rel))
            })
            .collect()
    };
    let cuts_for = |pair: (i32, i32)| -> Option<Thresholds> {
        match config.threshold_mode {
            ThresholdMode::Period => period_thresholds(&pair_values(pair)),
            ThresholdMode::Global => global_cuts,
        }
    };
    let window_states: Vec<WindowState> = windows
        .iter()
        .filter_map(|w| {
            Some(WindowState {
                window: *w,
                cuts: (cuts_for(w.initial_pair)?, cuts_for(w.final_pair)?),
            })
        })
        .collect();

    let year_index: BTreeMap<i32, usize> = dataset
        .timeline
        .years()
        .iter()
        .enumerate()
        .map(|(i, &y)| (y, i))
        .collect();
    let mut transitions = Vec::new();
    for c in &communities {
        for ws in &window_states {
            let label_at = |pair: (i32, i32), cuts: &Thresholds| -> Option<PatternLabel> {
                c.pairs
                    .iter()
                    .find(|p| (p.t, p.t_prime) == pair)
                    .and_then(|p| p.metrics.values.as_ref())
                    .map(|v| classify_pattern(v.ci, v.r_abs, v.r_rel, cuts))
            };
            let (Some(before), Some(after)) = (
                label_at(ws.window.initial_pair, &ws.cuts.0),
                label_at(ws.window.final_pair, &ws.cuts.1),
            ) else {
                continue;
            };
            // Adoption change across the window: endpoint years of the two
            // pairs.
            let (Some(&start_idx), Some(&end_idx)) = (
                year_index.get(&ws.window.initial_pair.1),
                year_index.get(&ws.window.final_pair.1),
            ) else {
                continue;
            };
            let d_ai = delta_ai(c.ai[start_idx], c.ai[end_idx]);
            for dim in [Dimension::Intensity, Dimension::Range] {
                transitions.push(TransitionRecord {
                    community_id: c.id.clone(),
                    window: ws.window.index,
                    dimension: dim,
                    transition: transition_type(before, after, dim),
                    delta_ai: d_ai,
                });
            }
        }
    }

    Ok(RegionAnalysis { communities, global_cuts, windows, transitions })
}

/// Eq-7-shaped design: intercept, transition dummies, window dummies, and
/// their interactions, with stable transitions and the first window as
/// references.
pub fn transition_design(
    records: &[&TransitionRecord],
    windows: &[TransitionWindow],
) -> (DMatrix<f64>, DVector<f64>, Vec<usize>, Vec<String>) {
    let n = records.len();
    let w = windows.len();
    let k = 1 + 2 + (w - 1) * 3;
    let mut terms = vec!["intercept".to_string(), "upward".to_string(), "downward".to_string()];
    for win in &windows[1..] {
        terms.push(win.name());
    }
    for win in &windows[1..] {
        terms.push(format!("upward_x_{}", win.name()));
        terms.push(format!("downward_x_{}", win.name()));
    }
    let mut x = DMatrix::<f64>::zeros(n, k);
    let mut y = DVector::<f64>::zeros(n);
    let mut cluster_ids: BTreeMap<&str, usize> = BTreeMap::new();
    let mut clusters = Vec::with_capacity(n);
    for (i, rec) in records.iter().enumerate() {
        y[i] = rec.delta_ai;
        x[(i, 0)] = 1.0;
        let up = rec.transition == TransitionType::Upward;
        let down = rec.transition == TransitionType::Downward;
        if up {
            x[(i, 1)] = 1.0;
        }
        if down {
            x[(i, 2)] = 1.0;
        }
        if rec.window > 1 {
            let wi = rec.window - 2;
            x[(i, 3 + wi)] = 1.0;
            if up {
                x[(i, 3 + (w - 1) + 2 * wi)] = 1.0;
            }
            if down {
                x[(i, 3 + (w - 1) + 2 * wi + 1)] = 1.0;
            }
        }
        let next = cluster_ids.len();
        let id = *cluster_ids.entry(rec.community_id.as_str()).or_insert(next);
        clusters.push(id);
    }
    (x, y, clusters, terms)
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub manifest_hash: String,
    pub master_seed: u64,
    pub n_sims: usize,
    pub grid_step: f64,
    pub threshold_mode: ThresholdMode,
    pub jobs: usize,
    pub timeline: Vec<i32>,
    pub version: String,
    pub n_communities: usize,
    pub n_analyzed: usize,
    pub excluded: Vec<String>,
    pub global_cuts: Option<Thresholds>,
    pub envelope_construction: String,
    pub p_value_reference: String,
    pub stage_seconds: BTreeMap<String, f64>,
    pub outputs: Vec<String>,
    pub failed_stages: Vec<FailedStage>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FailedStage {
    pub stage: String,
    pub error: String,
}

/// Hash of everything that determines the outputs: analysis parameters plus
/// a fingerprint of the dataset. Worker count and output paths are excluded.
fn manifest_hash(dataset: &Dataset, config: &RunConfig) -> String {
    let mut hasher = Sha256::new();
    hasher.update(env!("CARGO_PKG_VERSION").as_bytes());
    hasher.update(config.master_seed.to_le_bytes());
    hasher.update((config.n_sims as u64).to_le_bytes());
    hasher.update(config.grid_step.to_le_bytes());
    hasher.update(match config.threshold_mode {
        ThresholdMode::Period => [0u8],
        ThresholdMode::Global => [1u8],
    });
    hasher.update(config.weight_cap.to_le_bytes());
    for &y in dataset.timeline.years() {
        hasher.update(y.to_le_bytes());
    }
    for c in &dataset.communities {
        hasher.update(c.id.as_bytes());
        for p in c.polygon.vertices() {
            hasher.update(p.x.to_le_bytes());
            hasher.update(p.y.to_le_bytes());
        }
        for e in &c.events {
            hasher.update(e.id.as_bytes());
            hasher.update(e.location.x.to_le_bytes());
            hasher.update(e.location.y.to_le_bytes());
            hasher.update(e.year.to_le_bytes());
            hasher.update(e.panel_area.to_le_bytes());
        }
    }
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn na() -> String {
    "NA".to_string()
}

fn opt_f(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_else(na)
}

/// Runs the full pipeline and writes the output bundle into
/// `config.out_dir`. Stage failures are recorded in the manifest; outputs
/// produced before a failure are retained.
pub fn run_pipeline(
    dataset: &Dataset,
    report: &ValidationReport,
    config: &RunConfig,
) -> Result<RunManifest, PipelineError> {
    std::fs::create_dir_all(&config.out_dir).map_err(|source| IoError::File {
        path: config.out_dir.clone(),
        source,
    })?;
    let hash = manifest_hash(dataset, config);
    let mut manifest = RunManifest {
        manifest_hash: hash.clone(),
        master_seed: config.master_seed,
        n_sims: config.n_sims,
        grid_step: config.grid_step,
        threshold_mode: config.threshold_mode,
        jobs: config.jobs,
        timeline: dataset.timeline.years().to_vec(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        n_communities: dataset.communities.len(),
        n_analyzed: 0,
        excluded: report.excluded_ids().iter().map(|s| s.to_string()).collect(),
        global_cuts: None,
        envelope_construction: format!(
            "global=min/max over {} sims; pointwise=rank {} of {}",
            config.n_sims,
            crate::envelope::pointwise_rank(config.n_sims),
            config.n_sims
        ),
        p_value_reference: "normal (coefficients); chi-square (Wald)".to_string(),
        stage_seconds: BTreeMap::new(),
        outputs: Vec::new(),
        failed_stages: Vec::new(),
    };

    // Validation report with the manifest hash embedded.
    #[derive(Serialize)]
    struct ReportWithHash<'a> {
        manifest_hash: &'a str,
        #[serde(flatten)]
        report: &'a ValidationReport,
    }
    let validation_path = config.out_dir.join("validation.json");
    std::fs::write(
        &validation_path,
        serde_json::to_string_pretty(&ReportWithHash { manifest_hash: &hash, report })
            .expect("serializable"),
    )
    .map_err(|source| IoError::File { path: validation_path.clone(), source })?;
    manifest.outputs.push("validation.json".into());

    let run = |jobs: usize,
               f: &(dyn Fn() -> Result<RegionAnalysis, PipelineError> + Sync)|
     -> Result<RegionAnalysis, PipelineError> {
        if jobs == 0 {
            f()
        } else {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(jobs)
                .build()
                .map_err(|e| PipelineError::ThreadPool(e.to_string()))?;
            pool.install(f)
        }
    };

    let t0 = Instant::now();
    let region = run(config.jobs, &|| analyze_region(dataset, report, config))?;
    manifest
        .stage_seconds
        .insert("estimation".into(), t0.elapsed().as_secs_f64());
    manifest.n_analyzed = region.communities.len();
    manifest.global_cuts = region.global_cuts;

    let t1 = Instant::now();
    write_curve_tables(&region, config, &hash, &mut manifest)?;
    write_metric_tables(&region, dataset, config, &hash, &mut manifest)?;
    write_transition_tables(&region, config, &hash, &mut manifest)?;
    manifest
        .stage_seconds
        .insert("tables".into(), t1.elapsed().as_secs_f64());

    let t2 = Instant::now();
    run_inference_stage(&region, config, &hash, &mut manifest);
    manifest
        .stage_seconds
        .insert("inference".into(), t2.elapsed().as_secs_f64());

    let manifest_path = config.out_dir.join("manifest.json");
    std::fs::write(
        &manifest_path,
        serde_json::to_string_pretty(&manifest).expect("serializable"),
    )
    .map_err(|source| IoError::File { path: manifest_path, source })?;
    Ok(manifest)
}

fn flag_str(f: BandFlag) -> &'static str {
    match f {
        BandFlag::Above => "above",
        BandFlag::Within => "within",
        BandFlag::Below => "below",
    }
}

fn write_curve_tables(
    region: &RegionAnalysis,
    config: &RunConfig,
    hash: &str,
    manifest: &mut RunManifest,
) -> Result<(), PipelineError> {
    let mut rows: Vec<Vec<String>> = Vec::new();
    for c in &region.communities {
        for p in &c.pairs {
            let (Some(obs), Some(env)) = (&p.observed, &p.envelopes) else {
                continue;
            };
            for (i, &r) in obs.grid.values().iter().enumerate() {
                rows.push(vec![
                    c.id.clone(),
                    p.t.to_string(),
                    p.t_prime.to_string(),
                    fmt_f64(r),
                    fmt_f64(obs.values[i]),
                    fmt_f64(env.global.lower[i]),
                    fmt_f64(env.global.upper[i]),
                    fmt_f64(env.pointwise.lower[i]),
                    fmt_f64(env.pointwise.upper[i]),
                    p.flags
                        .as_ref()
                        .map(|f| flag_str(f[i]).to_string())
                        .unwrap_or_else(na),
                ]);
            }
        }
    }
    let path = config.out_dir.join("lcurves.csv");
    write_csv(
        &path,
        hash,
        &[
            "community",
            "t",
            "t_prime",
            "r",
            "l",
            "global_lo",
            "global_hi",
            "pointwise_lo",
            "pointwise_hi",
            "flag",
        ],
        rows,
    )?;
    manifest.outputs.push("lcurves.csv".into());
    Ok(())
}

fn write_metric_tables(
    region: &RegionAnalysis,
    dataset: &Dataset,
    config: &RunConfig,
    hash: &str,
    manifest: &mut RunManifest,
) -> Result<(), PipelineError> {
    let mut rows = Vec::new();
    for c in &region.communities {
        for p in &c.pairs {
            let m = &p.metrics;
            let (status, ci, r_abs, r_rel, he) = match &m.values {
                Some(v) => (
                    "ok".to_string(),
                    fmt_f64(v.ci),
                    fmt_f64(v.r_abs),
                    fmt_f64(v.r_rel),
                    opt_f(v.he),
                ),
                None => ("missing".to_string(), na(), na(), na(), na()),
            };
            rows.push(vec![
                c.id.clone(),
                m.t.to_string(),
                m.t_prime.to_string(),
                m.lag.to_string(),
                m.n_prior.to_string(),
                m.n_new.to_string(),
                status,
                ci,
                r_abs,
                r_rel,
                he,
            ]);
        }
    }
    write_csv(
        &config.out_dir.join("metrics.csv"),
        hash,
        &[
            "community", "t", "t_prime", "lag", "n_prior", "n_new", "status", "ci", "r_abs",
            "r_rel", "he",
        ],
        rows,
    )?;
    manifest.outputs.push("metrics.csv".into());

    // Community-level aggregates.
    let mut header: Vec<String> = vec!["community".into()];
    for lag in 1..=5 {
        header.push(format!("ci_lag{lag}"));
    }
    header.extend(
        ["ci_mean", "r_abs_mean", "r_rel_mean", "he_mean", "ati", "skipped"]
            .iter()
            .map(|s| s.to_string()),
    );
    for y in dataset.timeline.years() {
        header.push(format!("ai_{y}"));
    }
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut rows = Vec::new();
    for c in &region.communities {
        let mut row = vec![c.id.clone()];
        for lag in 0..5 {
            row.push(opt_f(c.ci_agg.per_lag[lag]));
        }
        row.push(opt_f(c.ci_agg.mean));
        row.push(opt_f(c.r_abs_agg.mean));
        row.push(opt_f(c.r_rel_agg.mean));
        row.push(opt_f(c.he_agg.mean));
        row.push(if c.ati.is_nan() { na() } else { fmt_f64(c.ati) });
        row.push(c.skipped.clone().unwrap_or_default());
        for v in &c.ai {
            row.push(fmt_f64(*v));
        }
        rows.push(row);
    }
    write_csv(&config.out_dir.join("aggregates.csv"), hash, &header_refs, rows)?;
    manifest.outputs.push("aggregates.csv".into());

    // Whole-period pattern labels.
    let mut rows = Vec::new();
    for c in &region.communities {
        let label = c.pattern.map(|p| p.to_string()).unwrap_or_else(na);
        rows.push(vec![
            c.id.clone(),
            opt_f(c.ci_agg.mean),
            opt_f(c.r_abs_agg.mean),
            opt_f(c.r_rel_agg.mean),
            label,
        ]);
    }
    write_csv(
        &config.out_dir.join("patterns.csv"),
        hash,
        &["community", "ci_mean", "r_abs_mean", "r_rel_mean", "pattern"],
        rows,
    )?;
    manifest.outputs.push("patterns.csv".into());
    Ok(())
}

fn dim_str(d: Dimension) -> &'static str {
    match d {
        Dimension::Intensity => "intensity",
        Dimension::Range => "range",
    }
}

fn trans_str(t: TransitionType) -> &'static str {
    match t {
        TransitionType::Upward => "upward",
        TransitionType::Downward => "downward",
        TransitionType::Stable => "stable",
    }
}

fn write_transition_tables(
    region: &RegionAnalysis,
    config: &RunConfig,
    hash: &str,
    manifest: &mut RunManifest,
) -> Result<(), PipelineError> {
    let mut rows = Vec::new();
    for rec in &region.transitions {
        rows.push(vec![
            rec.community_id.clone(),
            format!("T{}", rec.window),
            dim_str(rec.dimension).to_string(),
            trans_str(rec.transition).to_string(),
            fmt_f64(rec.delta_ai),
        ]);
    }
    write_csv(
        &config.out_dir.join("transitions.csv"),
        hash,
        &["community", "window", "dimension", "transition", "delta_ai"],
        rows,
    )?;
    manifest.outputs.push("transitions.csv".into());
    Ok(())
}

fn run_inference_stage(
    region: &RegionAnalysis,
    config: &RunConfig,
    hash: &str,
    manifest: &mut RunManifest,
) {
    let mut fail = |stage: &str, error: String| {
        manifest.failed_stages.push(FailedStage { stage: stage.into(), error });
    };

    // Eq-7 regressions and MLM per dimension.
    for dim in [Dimension::Intensity, Dimension::Range] {
        let records: Vec<&TransitionRecord> = region
            .transitions
            .iter()
            .filter(|r| r.dimension == dim)
            .collect();
        let stage = format!("regression_{}", dim_str(dim));
        if records.is_empty() || region.windows.len() < 2 {
            fail(&stage, "no transition records".into());
            continue;
        }
        let (x, y, clusters, terms) = transition_design(&records, &region.windows);
        match ols_cluster_robust(&x, &y, &clusters, terms.clone()) {
            Ok(fit) => {
                let mut rows = Vec::new();
                for j in 0..fit.terms.len() {
                    rows.push(vec![
                        fit.terms[j].clone(),
                        fmt_f64(fit.coefficients[j]),
                        fmt_f64(fit.std_errors[j]),
                        fmt_f64(fit.z_values[j]),
                        fmt_f64(fit.p_values[j]),
                        fit.n_obs.to_string(),
                        fit.n_clusters.to_string(),
                    ]);
                }
                let file = format!("regression_{}.csv", dim_str(dim));
                let header =
                    ["term", "estimate", "std_error", "z", "p_value", "n_obs", "n_clusters"];
                match write_csv(&config.out_dir.join(&file), hash, &header, rows) {
                    Ok(()) => manifest.outputs.push(file),
                    Err(e) => fail(&stage, e.to_string()),
                }

                // Joint Wald tests: all transition terms; the interactions.
                let transition_terms: Vec<usize> = (0..terms.len())
                    .filter(|&j| terms[j].contains("upward") || terms[j].contains("downward"))
                    .collect();
                let interaction_terms: Vec<usize> =
                    (0..terms.len()).filter(|&j| terms[j].contains("_x_")).collect();
                let mut wald_rows = Vec::new();
                for (test, subset) in [
                    ("transition_terms", transition_terms),
                    ("interactions", interaction_terms),
                ] {
                    match wald_joint_test(&fit, &subset) {
                        Ok(w) => wald_rows.push(vec![
                            dim_str(dim).to_string(),
                            test.to_string(),
                            fmt_f64(w.statistic),
                            w.df.to_string(),
                            fmt_f64(w.p),
                        ]),
                        Err(e) => fail(&format!("wald_{}_{test}", dim_str(dim)), e.to_string()),
                    }
                }
                let file = format!("wald_{}.csv", dim_str(dim));
                match write_csv(
                    &config.out_dir.join(&file),
                    hash,
                    &["dimension", "test", "statistic", "df", "p_value"],
                    wald_rows,
                ) {
                    Ok(()) => manifest.outputs.push(file),
                    Err(e) => fail(&stage, e.to_string()),
                }
            }
            Err(e) => fail(&stage, e.to_string()),
        }

        // Multinomial logit: transition type vs window.
        let stage = format!("mlm_{}", dim_str(dim));
        let window_names: Vec<String> =
            region.windows.iter().map(|w| w.name()).collect();
        let window_refs: Vec<&str> = window_names.iter().map(String::as_str).collect();
        let rows: Vec<(usize, usize)> = records
            .iter()
            .map(|r| {
                let outcome = match r.transition {
                    TransitionType::Stable => 0,
                    TransitionType::Upward => 1,
                    TransitionType::Downward => 2,
                };
                (outcome, r.window - 1)
            })
            .collect();
        match multinomial_logit(&rows, &["stable", "upward", "downward"], &window_refs) {
            Ok(fit) => {
                let mut out_rows = Vec::new();
                for (ci, outcome) in fit.outcome_names.iter().enumerate() {
                    for w in 1..fit.window_names.len() {
                        out_rows.push(vec![
                            outcome.clone(),
                            fit.window_names[w].clone(),
                            fmt_f64(fit.coefficients[ci][w]),
                            fmt_f64(fit.coefficients[ci][w].exp()),
                            fmt_f64(fit.std_errors[ci][w]),
                            fmt_f64(fit.p_values[ci][w]),
                            fit.n_obs.to_string(),
                        ]);
                    }
                }
                let file = format!("mlm_{}.csv", dim_str(dim));
                match write_csv(
                    &config.out_dir.join(&file),
                    hash,
                    &["outcome", "window", "log_odds", "odds_ratio", "std_error", "p_value", "n_obs"],
                    out_rows,
                ) {
                    Ok(()) => manifest.outputs.push(file),
                    Err(e) => fail(&stage, e.to_string()),
                }
            }
            Err(e) => fail(&stage, e.to_string()),
        }
    }

    // ANOVA/Tukey battery: per-lag dynamics across year pairs and across
    // lags, for both the intensity and relative-range dimensions.
    type LabeledGroups = Vec<(String, Vec<f64>)>;
    let mut analyses: Vec<(String, LabeledGroups)> = Vec::new();
    let value_of = |v: &MetricValues, which: usize| if which == 0 { v.ci } else { v.r_rel };
    for (prefix, which) in [("ci", 0usize), ("r_rel", 1usize)] {
        for lag in 1..=5u32 {
            let mut groups: BTreeMap<(i32, i32), Vec<f64>> = BTreeMap::new();
            for c in &region.communities {
                for p in &c.pairs {
                    if p.lag == lag {
                        if let Some(v) = &p.metrics.values {
                            groups.entry((p.t, p.t_prime)).or_default().push(value_of(v, which));
                        }
                    }
                }
            }
            let groups: Vec<(String, Vec<f64>)> = groups
                .into_iter()
                .filter(|(_, v)| v.len() >= 2)
                .map(|((t, tp), v)| (format!("{t}-{tp}"), v))
                .collect();
            if groups.len() >= 2 {
                analyses.push((format!("{prefix}_by_pair_lag{lag}"), groups));
            }
        }
        let mut groups: Vec<(String, Vec<f64>)> = Vec::new();
        for lag in 0..5usize {
            let values: Vec<f64> = region
                .communities
                .iter()
                .filter_map(|c| {
                    if which == 0 { c.ci_agg.per_lag[lag] } else { c.r_rel_agg.per_lag[lag] }
                })
                .collect();
            if values.len() >= 2 {
                groups.push((format!("lag{}", lag + 1), values));
            }
        }
        if groups.len() >= 2 {
            analyses.push((format!("{prefix}_across_lags"), groups));
        }
    }
    for (name, value_of) in [
        ("ati_by_pattern", 0usize),
        ("he_by_pattern", 1usize),
    ] {
        let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for c in &region.communities {
            let Some(pattern) = c.pattern else { continue };
            let value = match value_of {
                0 => (!c.ati.is_nan()).then_some(c.ati),
                _ => c.he_agg.mean,
            };
            if let Some(v) = value {
                groups.entry(pattern.to_string()).or_default().push(v);
            }
        }
        let groups: Vec<(String, Vec<f64>)> = groups
            .into_iter()
            .filter(|(_, v)| v.len() >= 2)
            .collect();
        if groups.len() >= 2 {
            analyses.push((name.to_string(), groups));
        }
    }

    let mut anova_rows = Vec::new();
    let mut tukey_rows = Vec::new();
    for (name, groups) in &analyses {
        match anova_tukey(groups, 0.05) {
            Ok(res) => {
                anova_rows.push(vec![
                    name.clone(),
                    fmt_f64(res.f),
                    res.df_between.to_string(),
                    res.df_within.to_string(),
                    fmt_f64(res.p),
                    res.degenerate.to_string(),
                ]);
                for (g, letters) in res.groups.iter().zip(&res.letters) {
                    tukey_rows.push(vec![
                        name.clone(),
                        g.label.clone(),
                        g.n.to_string(),
                        fmt_f64(g.mean),
                        letters.clone(),
                    ]);
                }
            }
            Err(InferenceError::TooFewGroups) | Err(InferenceError::GroupTooSmall(_)) => {}
            Err(e) => fail(&format!("anova_{name}"), e.to_string()),
        }
    }
    match write_csv(
        &config.out_dir.join("anova.csv"),
        hash,
        &["analysis", "f", "df_between", "df_within", "p_value", "degenerate"],
        anova_rows,
    ) {
        Ok(()) => manifest.outputs.push("anova.csv".into()),
        Err(e) => fail("anova", e.to_string()),
    }
    match write_csv(
        &config.out_dir.join("tukey.csv"),
        hash,
        &["analysis", "group", "n", "mean", "letters"],
        tukey_rows,
    ) {
        Ok(()) => manifest.outputs.push("tukey.csv".into()),
        Err(e) => fail("tukey", e.to_string()),
    }

    // Late-window reconfiguration comparison: ATI of communities with a
    // downward range transition vs an upward intensity transition in the
    // last window.
    if let Some(last) = region.windows.last() {
        let ati_of = |dim: Dimension, tt: TransitionType| -> Vec<f64> {
            region
                .transitions
                .iter()
                .filter(|r| r.dimension == dim && r.transition == tt && r.window == last.index)
                .filter_map(|r| {
                    region
                        .communities
                        .iter()
                        .find(|c| c.id == r.community_id)
                        .and_then(|c| (!c.ati.is_nan()).then_some(c.ati))
                })
                .collect()
        };
        let down_range = ati_of(Dimension::Range, TransitionType::Downward);
        let up_intensity = ati_of(Dimension::Intensity, TransitionType::Upward);
        let mut rows = Vec::new();
        if !down_range.is_empty() && !up_intensity.is_empty() {
            let mw = mann_whitney(&down_range, &up_intensity);
            rows.push(vec![
                format!("ati_downward_range_vs_upward_intensity_{}", last.name()),
                down_range.len().to_string(),
                up_intensity.len().to_string(),
                fmt_f64(mw.u),
                fmt_f64(mw.p),
                format!("{:?}", mw.method).to_lowercase(),
            ]);
        }
        match write_csv(
            &config.out_dir.join("mannwhitney.csv"),
            hash,
            &["comparison", "n_a", "n_b", "u", "p_value", "method"],
            rows,
        ) {
            Ok(()) => manifest.outputs.push("mannwhitney.csv".into()),
            Err(e) => fail("mannwhitney", e.to_string()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::validate_dataset;
    use crate::synth::{generate_region, ProcessKind, RegionConfig};

    fn small_dataset(seed: u64) -> Dataset {
        let cfg = RegionConfig {
            n_communities: 12,
            years: vec![2012, 2015, 2016, 2017, 2020, 2021, 2022],
            process: ProcessKind::Contagion { p: 0.6, kernel_sigma: 20.0 },
            master_seed: seed,
            area_range: (9_000.0, 30_000.0),
            events_range: (70, 120),
        };
        let communities = generate_region(&cfg).unwrap();
        Dataset { communities, timeline: Timeline::default_snapshots() }
    }

    #[test]
    fn analyze_community_produces_pairs_and_aggregates() {
        let dataset = small_dataset(7);
        let mut config = RunConfig::new("unused");
        config.n_sims = 39;
        let analysis = analyze_community(&dataset.communities[0], &dataset.timeline, &config);
        assert_eq!(analysis.pairs.len(), 21);
        assert!(analysis.skipped.is_none());
        assert!(analysis.ci_agg.mean.is_some());
        assert!(analysis.ati_raw > 0.0);
        // Pairs with empty sides are flagged missing, not dropped.
        for p in &analysis.pairs {
            if p.metrics.n_prior == 0 || p.metrics.n_new == 0 {
                assert!(p.metrics.values.is_none());
            }
        }
    }

    #[test]
    fn full_pipeline_writes_bundle_and_is_deterministic() {
        let dataset = small_dataset(17);
        let report = validate_dataset(&dataset.communities, &dataset.timeline);
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let mut config = RunConfig::new(dir_a.path());
        config.n_sims = 39;
        config.jobs = 1;
        let manifest_a = run_pipeline(&dataset, &report, &config).unwrap();
        assert!(manifest_a.failed_stages.is_empty(), "{:?}", manifest_a.failed_stages);

        let mut config_b = config.clone();
        config_b.out_dir = dir_b.path().to_path_buf();
        config_b.jobs = 3;
        let manifest_b = run_pipeline(&dataset, &report, &config_b).unwrap();
        assert_eq!(manifest_a.manifest_hash, manifest_b.manifest_hash);

        for file in [
            "lcurves.csv",
            "metrics.csv",
            "aggregates.csv",
            "patterns.csv",
            "transitions.csv",
            "regression_intensity.csv",
            "regression_range.csv",
            "mlm_intensity.csv",
            "mlm_range.csv",
            "anova.csv",
            "tukey.csv",
        ] {
            let a = std::fs::read(dir_a.path().join(file)).unwrap_or_else(|_| panic!("{file}"));
            let b = std::fs::read(dir_b.path().join(file)).unwrap();
            assert_eq!(a, b, "{file} differs across worker counts");
        }
    }

    #[test]
    fn transition_design_shape() {
        let windows = crate::patterns::default_transition_windows();
        let records: Vec<TransitionRecord> = (0..12)
            .map(|i| TransitionRecord {
                community_id: format!("c{}", i % 4),
                window: (i % 3) + 1,
                dimension: Dimension::Intensity,
                transition: match i % 3 {
                    0 => TransitionType::Stable,
                    1 => TransitionType::Upward,
                    _ => TransitionType::Downward,
                },
                delta_ai: i as f64,
            })
            .collect();
        let refs: Vec<&TransitionRecord> = records.iter().collect();
        let (x, y, clusters, terms) = transition_design(&refs, &windows);
        assert_eq!(x.ncols(), 9);
        assert_eq!(terms.len(), 9);
        assert_eq!(y.len(), 12);
        assert_eq!(clusters.iter().collect::<std::collections::BTreeSet<_>>().len(), 4);
        // Interaction columns are the product of their parents.
        for i in 0..12 {
            let up = x[(i, 1)];
            let t2 = x[(i, 3)];
            assert_eq!(x[(i, 5)], up * t2);
        }
    }

    #[test]
    fn excluded_communities_are_not_analyzed() {
        let mut dataset = small_dataset(5);
        // Shrink one community's events below the threshold.
        dataset.communities[0].events.truncate(10);
        let report = validate_dataset(&dataset.communities, &dataset.timeline);
        assert_eq!(report.excluded_ids().len(), 1);
        let mut config = RunConfig::new(tempfile::tempdir().unwrap().path());
        config.n_sims = 39;
        let region = analyze_region(&dataset, &report, &config).unwrap();
        assert_eq!(region.communities.len(), dataset.communities.len() - 1);
    }
}
