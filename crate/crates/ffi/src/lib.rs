//! C ABI over the analysis library: opaque handles, status codes, and UTF-8
//! path/string arguments. The generated header lives in `include/ssc.h`.
//!
//! Conventions:
//! - Functions return [`SscStatus`]; `SSC_STATUS_OK` is 0.
//! - On any non-OK status, [`ssc_last_error_message`] returns a descriptive
//!   message for the calling thread (caller frees it with
//!   [`ssc_string_free`]).
//! - Handles are created and destroyed by this library only; passing a
//!   handle after freeing it is undefined behavior, as in any C API.

// Negated comparisons like `!(x > 0.0)` are deliberate: they reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use libc::c_char;
use ssc_core::domain::ValidationReport;
use ssc_core::io::Dataset;
use ssc_core::pipeline::{run_pipeline, RunConfig, ThresholdMode};
use ssc_core::synth::{generate_region, ProcessKind, RegionConfig};
use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};

/// Status code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SscStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    IoError = 4,
    /// The dataset failed validation with hard errors.
    ValidationFatal = 5,
    RuntimeError = 6,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<String>) {
    let text = message.into().replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = Some(CString::new(text).expect("no interior NUL"));
    });
}

fn fail(status: SscStatus, message: impl Into<String>) -> SscStatus {
    set_error(message);
    status
}

/// A loaded dataset plus its validation report.
pub struct SscDataset {
    dataset: Dataset,
    report: ValidationReport,
}

/// Runtime parameters of a pipeline run. Obtain defaults from
/// [`ssc_run_config_default`] and override fields as needed.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SscRunConfig {
    /// Master seed for all Monte Carlo draws.
    pub seed: u64,
    /// Null-model realizations per year pair (minimum 39).
    pub n_sims: u32,
    /// Distance grid spacing in meters.
    pub grid_step: f64,
    /// 0 = period-specific transition thresholds, 1 = global cuts.
    pub threshold_mode: i32,
    /// Worker threads; 0 uses all cores.
    pub jobs: u32,
    /// Cap on isotropic edge-correction weights.
    pub weight_cap: f64,
}

/// Synthetic-region parameters for [`ssc_synth_region`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SscSynthConfig {
    pub n_communities: u32,
    /// 0 = CSTR, 1 = Thomas, 2 = contagion.
    pub process: i32,
    pub seed: u64,
    /// Contagion attachment probability.
    pub p: f64,
    /// Contagion kernel scale, meters.
    pub kernel_sigma: f64,
    /// Thomas offspring displacement scale, meters.
    pub sigma: f64,
    /// Thomas mean offspring per parent per year.
    pub offspring_mean: f64,
    pub min_events: u32,
    pub max_events: u32,
}

fn utf8_path(ptr: *const c_char, what: &str) -> Result<PathBuf, SscStatus> {
    if ptr.is_null() {
        set_error(format!("{what} is NULL"));
        return Err(SscStatus::NullPointer);
    }
    let cstr = unsafe { CStr::from_ptr(ptr) };
    match cstr.to_str() {
        Ok(s) => Ok(PathBuf::from(s)),
        Err(_) => {
            set_error(format!("{what} is not valid UTF-8"));
            Err(SscStatus::InvalidUtf8)
        }
    }
}

fn to_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).expect("no interior NUL").into_raw()
}

/// Library version as a static string; do not free.
#[no_mangle]
pub extern "C" fn ssc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Last error message of the calling thread, or NULL when no error was
/// recorded. The caller owns the returned string; free it with
/// [`ssc_string_free`].
#[no_mangle]
pub extern "C" fn ssc_last_error_message() -> *mut c_char {
    LAST_ERROR.with(|slot| match slot.borrow().as_ref() {
        Some(msg) => msg.clone().into_raw(),
        None => std::ptr::null_mut(),
    })
}

/// Frees a string returned by this library. NULL is a no-op.
///
/// # Safety
/// `s` must be a pointer previously returned by an `ssc_*` function that
/// transfers string ownership, and not freed before.
#[no_mangle]
pub unsafe extern "C" fn ssc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(unsafe { CString::from_raw(s) });
    }
}

/// Loads and validates a dataset from the polygon and event feature
/// collections. On success writes a handle to `out`; the handle must be
/// released with [`ssc_dataset_free`]. Years are inferred from the events.
///
/// # Safety
/// `polygons_path` and `events_path` must be NUL-terminated strings; `out`
/// must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ssc_dataset_load(
    polygons_path: *const c_char,
    events_path: *const c_char,
    out: *mut *mut SscDataset,
) -> SscStatus {
    if out.is_null() {
        return fail(SscStatus::NullPointer, "out is NULL");
    }
    let polygons = match utf8_path(polygons_path, "polygons_path") {
        Ok(p) => p,
        Err(s) => return s,
    };
    let events = match utf8_path(events_path, "events_path") {
        Ok(p) => p,
        Err(s) => return s,
    };
    match ssc_core::io::ingest(&polygons, &events, None) {
        Ok((dataset, report)) => {
            let handle = Box::new(SscDataset { dataset, report });
            unsafe { *out = Box::into_raw(handle) };
            SscStatus::Ok
        }
        Err(e) => fail(SscStatus::IoError, e.to_string()),
    }
}

/// Releases a dataset handle. NULL is a no-op.
///
/// # Safety
/// `dataset` must come from [`ssc_dataset_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ssc_dataset_free(dataset: *mut SscDataset) {
    if !dataset.is_null() {
        drop(unsafe { Box::from_raw(dataset) });
    }
}

/// Number of communities in the dataset (0 for NULL).
///
/// # Safety
/// `dataset` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn ssc_dataset_community_count(dataset: *const SscDataset) -> u64 {
    if dataset.is_null() {
        return 0;
    }
    unsafe { &*dataset }.dataset.communities.len() as u64
}

/// Total number of adoption events in the dataset (0 for NULL).
///
/// # Safety
/// `dataset` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn ssc_dataset_event_count(dataset: *const SscDataset) -> u64 {
    if dataset.is_null() {
        return 0;
    }
    unsafe { &*dataset }
        .dataset
        .communities
        .iter()
        .map(|c| c.events.len() as u64)
        .sum()
}

/// Whether validation found hard errors (malformed polygons); such datasets
/// cannot be analyzed.
///
/// # Safety
/// `dataset` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn ssc_dataset_has_fatal_errors(dataset: *const SscDataset) -> bool {
    if dataset.is_null() {
        return false;
    }
    unsafe { &*dataset }.report.is_fatal()
}

/// Validation report as a JSON string owned by the caller; free with
/// [`ssc_string_free`]. NULL on allocation failure.
///
/// # Safety
/// `dataset` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ssc_dataset_validation_json(
    dataset: *const SscDataset,
) -> *mut c_char {
    if dataset.is_null() {
        return std::ptr::null_mut();
    }
    let report = &unsafe { &*dataset }.report;
    match serde_json::to_string_pretty(report) {
        Ok(json) => to_c_string(json),
        Err(_) => std::ptr::null_mut(),
    }
}

/// Default run parameters: seed 0, 1000 simulations, 10 m grid,
/// period-specific thresholds, all cores.
#[no_mangle]
pub extern "C" fn ssc_run_config_default() -> SscRunConfig {
    SscRunConfig {
        seed: 0,
        n_sims: 1000,
        grid_step: 10.0,
        threshold_mode: 0,
        jobs: 0,
        weight_cap: 10.0,
    }
}

/// Runs the full pipeline over a loaded dataset, writing the CSV bundle and
/// manifest into `out_dir`. When `manifest_hash_out` is non-NULL it receives
/// the manifest hash string (caller frees).
///
/// # Safety
/// `dataset` must be a live handle; `config` and path pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn ssc_run_pipeline(
    dataset: *const SscDataset,
    config: *const SscRunConfig,
    out_dir: *const c_char,
    manifest_hash_out: *mut *mut c_char,
) -> SscStatus {
    if dataset.is_null() {
        return fail(SscStatus::NullPointer, "dataset is NULL");
    }
    if config.is_null() {
        return fail(SscStatus::NullPointer, "config is NULL");
    }
    let out_dir = match utf8_path(out_dir, "out_dir") {
        Ok(p) => p,
        Err(s) => return s,
    };
    let handle = unsafe { &*dataset };
    let c = unsafe { &*config };
    if handle.report.is_fatal() {
        return fail(SscStatus::ValidationFatal, "dataset has hard validation errors");
    }
    if c.n_sims < 39 {
        return fail(SscStatus::InvalidArgument, "n_sims must be at least 39");
    }
    if !(c.grid_step > 0.0) {
        return fail(SscStatus::InvalidArgument, "grid_step must be positive");
    }
    let threshold_mode = match c.threshold_mode {
        0 => ThresholdMode::Period,
        1 => ThresholdMode::Global,
        other => {
            return fail(
                SscStatus::InvalidArgument,
                format!("threshold_mode {other} (expected 0 or 1)"),
            )
        }
    };
    let run_config = RunConfig {
        master_seed: c.seed,
        n_sims: c.n_sims as usize,
        grid_step: c.grid_step,
        threshold_mode,
        jobs: c.jobs as usize,
        out_dir,
        weight_cap: c.weight_cap,
    };
    match run_pipeline(&handle.dataset, &handle.report, &run_config) {
        Ok(manifest) => {
            if !manifest_hash_out.is_null() {
                unsafe { *manifest_hash_out = to_c_string(manifest.manifest_hash.clone()) };
            }
            if manifest.failed_stages.is_empty() {
                SscStatus::Ok
            } else {
                let summary: Vec<String> = manifest
                    .failed_stages
                    .iter()
                    .map(|f| format!("{}: {}", f.stage, f.error))
                    .collect();
                fail(SscStatus::RuntimeError, summary.join("; "))
            }
        }
        Err(e) => fail(SscStatus::RuntimeError, e.to_string()),
    }
}

/// Generates a synthetic region in the ingestion schema, writing
/// `polygons.json` and `events.json` into `out_dir`.
///
/// # Safety
/// `config` and `out_dir` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn ssc_synth_region(
    config: *const SscSynthConfig,
    out_dir: *const c_char,
) -> SscStatus {
    if config.is_null() {
        return fail(SscStatus::NullPointer, "config is NULL");
    }
    let out_dir = match utf8_path(out_dir, "out_dir") {
        Ok(p) => p,
        Err(s) => return s,
    };
    let c = unsafe { &*config };
    let process = match c.process {
        0 => ProcessKind::Cstr,
        1 => ProcessKind::Thomas { sigma: c.sigma, offspring_mean: c.offspring_mean },
        2 => ProcessKind::Contagion { p: c.p, kernel_sigma: c.kernel_sigma },
        other => {
            return fail(SscStatus::InvalidArgument, format!("process {other} (expected 0..=2)"))
        }
    };
    if c.n_communities == 0 || c.min_events > c.max_events {
        return fail(SscStatus::InvalidArgument, "empty region or inverted event range");
    }
    let region_config = RegionConfig {
        n_communities: c.n_communities as usize,
        years: ssc_core::domain::DEFAULT_TIMELINE_YEARS.to_vec(),
        process,
        master_seed: c.seed,
        area_range: (7_000.0, 66_000.0),
        events_range: (c.min_events as usize, c.max_events as usize),
    };
    let region = match generate_region(&region_config) {
        Ok(r) => r,
        Err(e) => return fail(SscStatus::RuntimeError, e.to_string()),
    };
    if let Err(e) = std::fs::create_dir_all(&out_dir) {
        return fail(SscStatus::IoError, e.to_string());
    }
    let write = |name: &str, f: fn(&Path, &[ssc_core::domain::Community]) -> Result<(), ssc_core::io::IoError>| {
        f(&out_dir.join(name), &region).map_err(|e| e.to_string())
    };
    if let Err(e) = write("polygons.json", ssc_core::io::write_polygons)
        .and_then(|_| write("events.json", ssc_core::io::write_events))
    {
        return fail(SscStatus::IoError, e);
    }
    SscStatus::Ok
}

/// Default synthetic-region parameters: 20 contagion communities.
#[no_mangle]
pub extern "C" fn ssc_synth_config_default() -> SscSynthConfig {
    SscSynthConfig {
        n_communities: 20,
        process: 2,
        seed: 0,
        p: 0.7,
        kernel_sigma: 25.0,
        sigma: 15.0,
        offspring_mean: 0.5,
        min_events: 60,
        max_events: 300,
    }
}

/// Validates a dataset without loading a handle: 0 when clean, the usual
/// status codes otherwise (ValidationFatal for malformed polygons).
///
/// # Safety
/// Path pointers must be NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn ssc_validate_files(
    polygons_path: *const c_char,
    events_path: *const c_char,
) -> SscStatus {
    let mut handle: *mut SscDataset = std::ptr::null_mut();
    let status = unsafe { ssc_dataset_load(polygons_path, events_path, &mut handle) };
    if status != SscStatus::Ok {
        return status;
    }
    let fatal = unsafe { ssc_dataset_has_fatal_errors(handle) };
    unsafe { ssc_dataset_free(handle) };
    if fatal {
        fail(SscStatus::ValidationFatal, "dataset has hard validation errors")
    } else {
        SscStatus::Ok
    }
}

