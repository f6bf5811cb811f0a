//! C ABI for driving the library from other languages.
//!
//! Conventions:
//!
//! * Every entry point returns a [`CrnStatus`]; anything but `Ok` leaves a
//!   message retrievable with [`crn_last_error`] on the same thread.
//! * Configs are opaque handles created by [`crn_config_parse`] or
//!   [`crn_config_load`] and released with [`crn_config_free`].
//! * Panics never cross the boundary; they surface as `CrnStatus::Panic`.
//!
//! The matching header lives at `include/crn.h` and is maintained by
//! hand; update it whenever this surface changes.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use crn_core::config::ExperimentConfig;
use crn_core::error::CrnError;
use crn_core::harness::{
    cmd_datagen, cmd_eval, cmd_gradcheck, cmd_train, EvalReport, TrainRequest, CHECKPOINT_BASE,
    CONFIG_FILE,
};

/// Result of every FFI call.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum CrnStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// The config failed to parse or validate.
    InvalidConfig = 3,
    /// Filesystem trouble under the run directory.
    Io = 4,
    /// Any other library error; see `crn_last_error`.
    Runtime = 5,
    /// A panic was caught at the boundary.
    Panic = 6,
}

/// `kind` value in [`CrnMetrics`] for classification tasks.
pub const CRN_METRICS_CLASSIFICATION: u32 = 0;
/// `kind` value in [`CrnMetrics`] for regression tasks.
pub const CRN_METRICS_REGRESSION: u32 = 1;

/// Flat validation summary. `kind` selects which fields are meaningful;
/// the others are zero.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct CrnMetrics {
    /// `CRN_METRICS_CLASSIFICATION` or `CRN_METRICS_REGRESSION`.
    pub kind: u32,
    /// Classification: fraction of validation samples classified correctly.
    pub accuracy: f64,
    /// Regression: final-step mean heatmap MSE.
    pub heatmap_mse: f64,
    /// Regression: final-step mean limb-field MSE.
    pub field_mse: f64,
    /// Regression: mean distance (px) from predicted to true joint peaks.
    pub peak_error_px: f64,
    /// Validation samples evaluated.
    pub samples: u64,
}

impl CrnMetrics {
    fn from_report(report: &EvalReport) -> CrnMetrics {
        match report {
            EvalReport::Shapes { accuracy, samples } => CrnMetrics {
                kind: CRN_METRICS_CLASSIFICATION,
                accuracy: *accuracy,
                samples: *samples as u64,
                ..CrnMetrics::default()
            },
            EvalReport::Pose {
                mse_heatmap_steps,
                mse_field_steps,
                peak_err,
                samples,
            } => CrnMetrics {
                kind: CRN_METRICS_REGRESSION,
                heatmap_mse: mse_heatmap_steps.last().copied().unwrap_or(0.0),
                field_mse: mse_field_steps.last().copied().unwrap_or(0.0),
                peak_error_px: *peak_err,
                samples: *samples as u64,
                ..CrnMetrics::default()
            },
        }
    }
}

/// Opaque parsed experiment configuration.
pub struct CrnConfig {
    inner: ExperimentConfig,
    /// Original TOML, preserved so run directories carry a verbatim copy.
    text: String,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: &str) {
    let sanitized: String = message.chars().filter(|c| *c != '\0').collect();
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).expect("nul filtered out");
    });
}

fn status_for(err: &CrnError) -> CrnStatus {
    match err {
        CrnError::Config(_) | CrnError::InvalidArgument(_) => CrnStatus::InvalidConfig,
        CrnError::Io(_) => CrnStatus::Io,
        _ => CrnStatus::Runtime,
    }
}

fn fail(err: &CrnError) -> CrnStatus {
    set_error(&err.to_string());
    status_for(err)
}

/// Run `f` with panics converted to `CrnStatus::Panic`.
fn guarded(f: impl FnOnce() -> CrnStatus) -> CrnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(payload) => {
            let what = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(&format!("panic: {what}"));
            CrnStatus::Panic
        }
    }
}

/// # Safety
/// `ptr` must be null or a NUL-terminated string valid for the call.
unsafe fn utf8_arg<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, CrnStatus> {
    if ptr.is_null() {
        set_error(&format!("{what} is null"));
        return Err(CrnStatus::NullArgument);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error(&format!("{what} is not valid UTF-8"));
        CrnStatus::InvalidUtf8
    })
}

fn require<'a, T>(ptr: *const T, what: &str) -> Result<&'a T, CrnStatus> {
    // Safety precondition is carried by the caller's own contract.
    match unsafe { ptr.as_ref() } {
        Some(r) => Ok(r),
        None => {
            set_error(&format!("{what} is null"));
            Err(CrnStatus::NullArgument)
        }
    }
}

fn require_out<'a, T>(ptr: *mut T, what: &str) -> Result<&'a mut T, CrnStatus> {
    match unsafe { ptr.as_mut() } {
        Some(r) => Ok(r),
        None => {
            set_error(&format!("{what} is null"));
            Err(CrnStatus::NullArgument)
        }
    }
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn crn_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr() as *const c_char
}

/// Message for the most recent failure on this thread. The pointer stays
/// valid until the next library call from the same thread.
#[no_mangle]
pub extern "C" fn crn_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

fn config_new(text: &str, out: *mut *mut CrnConfig) -> CrnStatus {
    let slot = match require_out(out, "out") {
        Ok(s) => s,
        Err(status) => return status,
    };
    match ExperimentConfig::from_toml_str(text) {
        Ok(inner) => {
            *slot = Box::into_raw(Box::new(CrnConfig {
                inner,
                text: text.to_string(),
            }));
            CrnStatus::Ok
        }
        Err(err) => fail(&err),
    }
}

/// Parse a TOML experiment config from memory.
///
/// # Safety
/// `toml_text` must be a NUL-terminated string; `out` must point to
/// writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn crn_config_parse(
    toml_text: *const c_char,
    out: *mut *mut CrnConfig,
) -> CrnStatus {
    guarded(|| match utf8_arg(toml_text, "toml_text") {
        Ok(text) => config_new(text, out),
        Err(status) => status,
    })
}

/// Read and parse a TOML experiment config from a file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must point to writable
/// storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn crn_config_load(
    path: *const c_char,
    out: *mut *mut CrnConfig,
) -> CrnStatus {
    guarded(|| {
        let path = match utf8_arg(path, "path") {
            Ok(p) => p,
            Err(status) => return status,
        };
        match std::fs::read_to_string(path) {
            Ok(text) => config_new(&text, out),
            Err(err) => fail(&CrnError::Io(err)),
        }
    })
}

/// Release a config handle. Null is a no-op.
///
/// # Safety
/// `cfg` must be null or a pointer returned by a `crn_config_*`
/// constructor that has not been freed yet.
#[no_mangle]
pub unsafe extern "C" fn crn_config_free(cfg: *mut CrnConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Train one run into `out_dir` (created if needed): writes the config
/// copy, a metrics log, and a checkpoint, then reports the final
/// validation metrics and the wall time spent.
///
/// `metrics` and `wall_seconds` may be null if the caller does not want
/// them; `metrics` is only written when the run trained for at least one
/// epoch.
///
/// # Safety
/// `cfg` must be a live config handle, `out_dir` a NUL-terminated string,
/// and the out-pointers null or valid for a write.
#[no_mangle]
pub unsafe extern "C" fn crn_train(
    cfg: *const CrnConfig,
    seed: u64,
    out_dir: *const c_char,
    metrics: *mut CrnMetrics,
    wall_seconds: *mut f64,
) -> CrnStatus {
    guarded(|| {
        let cfg = match require(cfg, "cfg") {
            Ok(c) => c,
            Err(status) => return status,
        };
        let out_dir = match utf8_arg(out_dir, "out_dir") {
            Ok(d) => d,
            Err(status) => return status,
        };
        let request = TrainRequest {
            config: &cfg.inner,
            config_text: &cfg.text,
            seed,
            out: Path::new(out_dir),
        };
        match cmd_train(&request) {
            Ok(outcome) => {
                if let (Some(report), false) = (&outcome.final_eval, metrics.is_null()) {
                    *metrics = CrnMetrics::from_report(report);
                }
                if !wall_seconds.is_null() {
                    *wall_seconds = outcome.wall_seconds;
                }
                CrnStatus::Ok
            }
            Err(err) => fail(&err),
        }
    })
}

/// Evaluate the checkpoint inside a run directory against its own config.
///
/// # Safety
/// `run_dir` must be a NUL-terminated string; `metrics` must be valid for
/// a write.
#[no_mangle]
pub unsafe extern "C" fn crn_eval(
    run_dir: *const c_char,
    seed: u64,
    metrics: *mut CrnMetrics,
) -> CrnStatus {
    guarded(|| {
        let run_dir = match utf8_arg(run_dir, "run_dir") {
            Ok(d) => Path::new(d),
            Err(status) => return status,
        };
        let slot = match require_out(metrics, "metrics") {
            Ok(m) => m,
            Err(status) => return status,
        };
        let cfg = match ExperimentConfig::load(&run_dir.join(CONFIG_FILE)) {
            Ok(c) => c,
            Err(err) => return fail(&err),
        };
        match cmd_eval(&cfg, &run_dir.join(CHECKPOINT_BASE), seed) {
            Ok(report) => {
                *slot = CrnMetrics::from_report(&report);
                CrnStatus::Ok
            }
            Err(err) => fail(&err),
        }
    })
}

/// Finite-difference check of every parameter gradient. On success the
/// largest relative error and the number of scalars checked are written.
/// Exceeding `tolerance` is reported as `Runtime` with the offending
/// parameter in the error message; pass an infinite tolerance to always
/// retrieve the error value.
///
/// # Safety
/// `cfg` must be a live config handle; out-pointers null or valid for a
/// write.
#[no_mangle]
pub unsafe extern "C" fn crn_gradcheck(
    cfg: *const CrnConfig,
    seed: u64,
    tolerance: f64,
    max_rel_err: *mut f64,
    scalars_checked: *mut u64,
) -> CrnStatus {
    guarded(|| {
        let cfg = match require(cfg, "cfg") {
            Ok(c) => c,
            Err(status) => return status,
        };
        match cmd_gradcheck(&cfg.inner, seed, tolerance) {
            Ok(report) => {
                if !max_rel_err.is_null() {
                    *max_rel_err = report.max_rel_err;
                }
                if !scalars_checked.is_null() {
                    *scalars_checked = report.scalars_checked as u64;
                }
                CrnStatus::Ok
            }
            Err(err) => fail(&err),
        }
    })
}

/// Export `export_n` training samples into `out_dir` in the checkpoint
/// tensor format, one `sampleNNNN.{manifest,bin}` pair per sample.
///
/// # Safety
/// `cfg` must be a live config handle and `out_dir` a NUL-terminated
/// string.
#[no_mangle]
pub unsafe extern "C" fn crn_datagen(
    cfg: *const CrnConfig,
    seed: u64,
    export_n: usize,
    out_dir: *const c_char,
) -> CrnStatus {
    guarded(|| {
        let cfg = match require(cfg, "cfg") {
            Ok(c) => c,
            Err(status) => return status,
        };
        let out_dir = match utf8_arg(out_dir, "out_dir") {
            Ok(d) => d,
            Err(status) => return status,
        };
        match cmd_datagen(&cfg.inner, Path::new(out_dir), export_n, seed) {
            Ok(_) => CrnStatus::Ok,
            Err(err) => fail(&err),
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ffi::CString;
    use std::ptr;

    fn c(text: &str) -> CString {
        CString::new(text).unwrap()
    }

    fn last_error() -> String {
        unsafe { CStr::from_ptr(crn_last_error()) }
            .to_str()
            .unwrap()
            .to_string()
    }

    const TINY: &str = r#"
task = "shapes"
T = 3
epochs = 1
seeds = [11]
batch = 2
train_batches = 2
val_samples = 4

[stem]
channels = 2

[lstm]
layers = 1
hidden = 3
"#;

    fn parse(text: &str) -> *mut CrnConfig {
        let mut cfg: *mut CrnConfig = ptr::null_mut();
        let status = unsafe { crn_config_parse(c(text).as_ptr(), &mut cfg) };
        assert_eq!(status, CrnStatus::Ok, "{}", last_error());
        assert!(!cfg.is_null());
        cfg
    }

    #[test]
    fn version_is_a_static_string() {
        let v = unsafe { CStr::from_ptr(crn_version()) }.to_str().unwrap();
        assert_eq!(v, env!("CARGO_PKG_VERSION"));
    }

    #[test]
    fn parse_rejects_null_and_bad_input() {
        let mut cfg: *mut CrnConfig = ptr::null_mut();
        assert_eq!(
            unsafe { crn_config_parse(ptr::null(), &mut cfg) },
            CrnStatus::NullArgument
        );
        assert!(last_error().contains("toml_text"));

        assert_eq!(
            unsafe { crn_config_parse(c(TINY).as_ptr(), ptr::null_mut()) },
            CrnStatus::NullArgument
        );

        let bad = c("task = \"shapes\"\nlearningrate = 1");
        assert_eq!(
            unsafe { crn_config_parse(bad.as_ptr(), &mut cfg) },
            CrnStatus::InvalidConfig
        );
        assert!(last_error().contains("config error"), "{}", last_error());

        let invalid_utf8 = CString::new([0x74u8, 0x61, 0xff, 0xfe]).unwrap();
        assert_eq!(
            unsafe { crn_config_parse(invalid_utf8.as_ptr(), &mut cfg) },
            CrnStatus::InvalidUtf8
        );
    }

    #[test]
    fn load_reports_missing_file_as_io() {
        let mut cfg: *mut CrnConfig = ptr::null_mut();
        let path = c("/nonexistent/crn-config.toml");
        assert_eq!(
            unsafe { crn_config_load(path.as_ptr(), &mut cfg) },
            CrnStatus::Io
        );
        assert!(last_error().contains("io error"), "{}", last_error());
    }

    #[test]
    fn train_then_eval_roundtrip() {
        let cfg = parse(TINY);
        let dir = tempfile::tempdir().unwrap();
        let out = c(dir.path().join("run").to_str().unwrap());

        let mut metrics = CrnMetrics::default();
        let mut wall = -1.0;
        let status = unsafe { crn_train(cfg, 11, out.as_ptr(), &mut metrics, &mut wall) };
        assert_eq!(status, CrnStatus::Ok, "{}", last_error());
        assert_eq!(metrics.kind, CRN_METRICS_CLASSIFICATION);
        assert_eq!(metrics.samples, 4);
        assert!((0.0..=1.0).contains(&metrics.accuracy));
        assert!(wall >= 0.0);

        let mut again = CrnMetrics::default();
        let status = unsafe { crn_eval(out.as_ptr(), 11, &mut again) };
        assert_eq!(status, CrnStatus::Ok, "{}", last_error());
        assert_eq!(again.accuracy, metrics.accuracy);

        unsafe { crn_config_free(cfg) };
    }

    #[test]
    fn eval_without_a_run_directory_fails() {
        let dir = tempfile::tempdir().unwrap();
        let out = c(dir.path().join("missing").to_str().unwrap());
        let mut metrics = CrnMetrics::default();
        let status = unsafe { crn_eval(out.as_ptr(), 1, &mut metrics) };
        assert_eq!(status, CrnStatus::Io);
    }

    #[test]
    fn gradcheck_reports_error_magnitude() {
        let cfg = parse(TINY);
        let mut worst = -1.0;
        let mut scalars = 0u64;
        let status = unsafe { crn_gradcheck(cfg, 11, 1e-4, &mut worst, &mut scalars) };
        assert_eq!(status, CrnStatus::Ok, "{}", last_error());
        assert!(worst >= 0.0 && worst < 1e-4);
        assert!(scalars > 0);
        unsafe { crn_config_free(cfg) };
    }

    #[test]
    fn datagen_writes_sample_pairs() {
        let cfg = parse(TINY);
        let dir = tempfile::tempdir().unwrap();
        let out = c(dir.path().to_str().unwrap());
        let status = unsafe { crn_datagen(cfg, 11, 2, out.as_ptr()) };
        assert_eq!(status, CrnStatus::Ok, "{}", last_error());
        for base in ["sample0000", "sample0001"] {
            assert!(dir.path().join(format!("{base}.manifest")).exists());
            assert!(dir.path().join(format!("{base}.bin")).exists());
        }
        unsafe { crn_config_free(cfg) };
    }

    #[test]
    fn datagen_rejects_zero_samples() {
        let cfg = parse(TINY);
        let dir = tempfile::tempdir().unwrap();
        let out = c(dir.path().to_str().unwrap());
        let status = unsafe { crn_datagen(cfg, 11, 0, out.as_ptr()) };
        assert_eq!(status, CrnStatus::InvalidConfig);
        unsafe { crn_config_free(cfg) };
    }
}
