//! Batch command-line frontend: dataset validation, full pipeline runs, and
//! synthetic dataset generation.
//!
//! Exit codes: 0 success, 1 validation failure, 2 runtime/stage failure.

use clap::{Args, Parser, Subcommand, ValueEnum};
use ssc_core::domain::Timeline;
use ssc_core::io::{ingest, write_events, write_polygons};
use ssc_core::pipeline::{run_pipeline, RunConfig, ThresholdMode};
use ssc_core::synth::{generate_region, ProcessKind, RegionConfig};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "ssc",
    about = "Socio-spatial contagion analysis over adoption point patterns",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct InputArgs {
    /// Polygon feature-collection file.
    #[arg(long)]
    polygons: PathBuf,
    /// Event feature-collection file.
    #[arg(long)]
    events: PathBuf,
    /// Snapshot years (comma separated); inferred from the events when
    /// absent.
    #[arg(long, value_delimiter = ',')]
    years: Option<Vec<i32>>,
}

impl InputArgs {
    fn timeline(&self) -> Result<Option<Timeline>, String> {
        self.years
            .clone()
            .map(|y| Timeline::new(y).map_err(|e| e.to_string()))
            .transpose()
    }
}

#[derive(Subcommand)]
enum Command {
    /// Validate a dataset and print the report as JSON.
    Validate {
        #[command(flatten)]
        input: InputArgs,
    },
    /// Run the full analysis pipeline and write the output bundle.
    Run {
        #[command(flatten)]
        input: InputArgs,
        /// Output directory for CSV tables and the manifest.
        #[arg(long)]
        out_dir: PathBuf,
        /// Master seed for all Monte Carlo draws.
        #[arg(long, env = "SSC_SEED", default_value_t = 0)]
        seed: u64,
        /// Null-model realizations per year pair.
        #[arg(long, default_value_t = 1000)]
        sims: usize,
        /// Distance grid spacing, meters.
        #[arg(long, default_value_t = 10.0)]
        grid_step: f64,
        /// Thresholds for transition classification.
        #[arg(long, value_enum, default_value_t = ThresholdModeArg::Period)]
        threshold_mode: ThresholdModeArg,
        /// Worker threads (0 = all cores).
        #[arg(long, default_value_t = 0)]
        jobs: usize,
    },
    /// Generate a synthetic dataset in the ingestion schema.
    Synth {
        /// Output directory for polygons.json and events.json.
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 20)]
        communities: usize,
        #[arg(long, value_enum, default_value_t = ProcessArg::Contagion)]
        process: ProcessArg,
        #[arg(long, env = "SSC_SEED", default_value_t = 0)]
        seed: u64,
        /// Contagion attachment probability.
        #[arg(long, default_value_t = 0.7)]
        p: f64,
        /// Contagion kernel scale, meters.
        #[arg(long, default_value_t = 25.0)]
        kernel: f64,
        /// Thomas offspring displacement scale, meters.
        #[arg(long, default_value_t = 15.0)]
        sigma: f64,
        /// Thomas mean offspring per parent per year.
        #[arg(long, default_value_t = 0.5)]
        offspring: f64,
        /// Snapshot years (comma separated).
        #[arg(long, value_delimiter = ',')]
        years: Option<Vec<i32>>,
        /// Events per community, lower bound.
        #[arg(long, default_value_t = 60)]
        min_events: usize,
        /// Events per community, upper bound.
        #[arg(long, default_value_t = 300)]
        max_events: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ThresholdModeArg {
    Period,
    Global,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProcessArg {
    Cstr,
    Thomas,
    Contagion,
}

fn fail(code: u8, message: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {message}");
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Validate { input } => {
            let timeline = match input.timeline() {
                Ok(t) => t,
                Err(e) => return fail(1, e),
            };
            match ingest(&input.polygons, &input.events, timeline) {
                Ok((dataset, report)) => {
                    println!(
                        "{}",
                        serde_json::to_string_pretty(&report).expect("serializable report")
                    );
                    eprintln!(
                        "{} communities, {} with violations, {} hard errors, {} orphan events",
                        dataset.communities.len(),
                        report.communities.iter().filter(|c| !c.violations.is_empty()).count(),
                        report.hard_errors.len(),
                        report.orphan_events.len()
                    );
                    if report.is_fatal() {
                        ExitCode::from(1)
                    } else {
                        ExitCode::SUCCESS
                    }
                }
                Err(e) => fail(1, e),
            }
        }
        Command::Run {
            input,
            out_dir,
            seed,
            sims,
            grid_step,
            threshold_mode,
            jobs,
        } => {
            let timeline = match input.timeline() {
                Ok(t) => t,
                Err(e) => return fail(1, e),
            };
            let (dataset, report) = match ingest(&input.polygons, &input.events, timeline) {
                Ok(pair) => pair,
                Err(e) => return fail(1, e),
            };
            if report.is_fatal() {
                for h in &report.hard_errors {
                    eprintln!("community {}: {}", h.community_id, h.message);
                }
                return fail(1, "dataset validation failed");
            }
            let config = RunConfig {
                master_seed: seed,
                n_sims: sims,
                grid_step,
                threshold_mode: match threshold_mode {
                    ThresholdModeArg::Period => ThresholdMode::Period,
                    ThresholdModeArg::Global => ThresholdMode::Global,
                },
                jobs,
                out_dir,
                weight_cap: ssc_core::geom::DEFAULT_WEIGHT_CAP,
            };
            match run_pipeline(&dataset, &report, &config) {
                Ok(manifest) => {
                    eprintln!(
                        "analyzed {} of {} communities; outputs in {}",
                        manifest.n_analyzed,
                        manifest.n_communities,
                        config.out_dir.display()
                    );
                    if manifest.failed_stages.is_empty() {
                        ExitCode::SUCCESS
                    } else {
                        for f in &manifest.failed_stages {
                            eprintln!("stage {} failed: {}", f.stage, f.error);
                        }
                        ExitCode::from(2)
                    }
                }
                Err(e) => fail(2, e),
            }
        }
        Command::Synth {
            out_dir,
            communities,
            process,
            seed,
            p,
            kernel,
            sigma,
            offspring,
            years,
            min_events,
            max_events,
        } => {
            let config = RegionConfig {
                n_communities: communities,
                years: years.unwrap_or_else(|| {
                    ssc_core::domain::DEFAULT_TIMELINE_YEARS.to_vec()
                }),
                process: match process {
                    ProcessArg::Cstr => ProcessKind::Cstr,
                    ProcessArg::Thomas => ProcessKind::Thomas { sigma, offspring_mean: offspring },
                    ProcessArg::Contagion => ProcessKind::Contagion { p, kernel_sigma: kernel },
                },
                master_seed: seed,
                area_range: (7_000.0, 66_000.0),
                events_range: (min_events, max_events),
            };
            let region = match generate_region(&config) {
                Ok(r) => r,
                Err(e) => return fail(2, e),
            };
            if let Err(e) = std::fs::create_dir_all(&out_dir) {
                return fail(2, e);
            }
            let polygons = out_dir.join("polygons.json");
            let events = out_dir.join("events.json");
            if let Err(e) =
                write_polygons(&polygons, &region).and_then(|_| write_events(&events, &region))
            {
                return fail(2, e);
            }
            eprintln!(
                "wrote {} communities to {} and {}",
                region.len(),
                polygons.display(),
                events.display()
            );
            ExitCode::SUCCESS
        }
    }
}
