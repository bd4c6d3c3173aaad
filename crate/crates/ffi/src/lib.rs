//! C ABI over the `synthcontrol` library.
//!
//! Every function returns an [`ScStatus`]; on failure the message is kept per
//! thread and can be copied out with [`sc_last_error_message`]. Handles are
//! opaque and must be released with their `*_free` function.
//!
//! Strings crossing the boundary are NUL-terminated UTF-8. Functions that fill
//! caller buffers report the required size (including the NUL for strings)
//! through `needed` and return `SC_STATUS_BUFFER_TOO_SMALL` when `capacity` is
//! short.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use synthcontrol::config::StudyConfig;
use synthcontrol::engine::{fit, FitResult, OuterOptions, VSearch};
use synthcontrol::error::{ErrorClass, ScmError};
use synthcontrol::inference::{mspe_ratio_or_floor, placebo_in_space, RankScope};
use synthcontrol::ingest::{load_long_csv, to_weekly, Aggregation};
use synthcontrol::panel::{PanelDataset, StudySpec};

/// Result of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    /// Bad argument or configuration.
    Usage = 3,
    /// Invalid or inconsistent input data.
    Data = 4,
    /// The optimizer could not produce a fit.
    Optimization = 5,
    BufferTooSmall = 6,
    OutOfRange = 7,
    /// A Rust panic was caught at the boundary.
    Internal = 8,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

fn status_of(e: &ScmError) -> ScStatus {
    set_error(e.to_string());
    match e.class() {
        ErrorClass::Usage => ScStatus::Usage,
        ErrorClass::Data => ScStatus::Data,
        ErrorClass::Optimization => ScStatus::Optimization,
    }
}

fn guard(f: impl FnOnce() -> Result<(), ScStatus>) -> ScStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            ScStatus::Ok
        }
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic");
            ScStatus::Internal
        }
    }
}

trait OrStatus<T> {
    fn or_status(self) -> Result<T, ScStatus>;
}

impl<T> OrStatus<T> for synthcontrol::Result<T> {
    fn or_status(self) -> Result<T, ScStatus> {
        self.map_err(|e| status_of(&e))
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, ScStatus> {
    if p.is_null() {
        set_error(format!("{what} is null"));
        return Err(ScStatus::NullPointer);
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        set_error(format!("{what} is not valid UTF-8"));
        ScStatus::InvalidUtf8
    })
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, ScStatus> {
    p.as_ref().ok_or_else(|| {
        set_error(format!("{what} is null"));
        ScStatus::NullPointer
    })
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, ScStatus> {
    p.as_mut().ok_or_else(|| {
        set_error(format!("{what} is null"));
        ScStatus::NullPointer
    })
}

unsafe fn copy_str(s: &str, buf: *mut c_char, capacity: usize, needed: *mut usize) -> Result<(), ScStatus> {
    let bytes = s.as_bytes();
    if let Some(n) = needed.as_mut() {
        *n = bytes.len() + 1;
    }
    if capacity < bytes.len() + 1 {
        set_error(format!("buffer holds {capacity} bytes, {} needed", bytes.len() + 1));
        return Err(ScStatus::BufferTooSmall);
    }
    if buf.is_null() {
        set_error("buffer is null");
        return Err(ScStatus::NullPointer);
    }
    ptr::copy_nonoverlapping(bytes.as_ptr(), buf as *mut u8, bytes.len());
    *buf.add(bytes.len()) = 0;
    Ok(())
}

unsafe fn copy_f64(src: &[f64], buf: *mut f64, capacity: usize, needed: *mut usize) -> Result<(), ScStatus> {
    if let Some(n) = needed.as_mut() {
        *n = src.len();
    }
    if capacity < src.len() {
        set_error(format!("buffer holds {capacity} values, {} needed", src.len()));
        return Err(ScStatus::BufferTooSmall);
    }
    if src.is_empty() {
        return Ok(());
    }
    if buf.is_null() {
        set_error("buffer is null");
        return Err(ScStatus::NullPointer);
    }
    ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len());
    Ok(())
}

/// Weekly panel.
pub struct ScPanel {
    inner: PanelDataset,
}

/// Panel plus study design and optimizer settings.
pub struct ScStudy {
    panel: PanelDataset,
    spec: StudySpec,
    search: VSearch,
}

/// Fitted synthetic control.
pub struct ScFit {
    inner: FitResult,
}

/// Headline numbers of a fit.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct ScFitSummary {
    pub average_post_gap: f64,
    pub pre_mspe: f64,
    pub post_mspe: f64,
    /// Post/pre MSPE ratio; machine epsilon stands in for a zero pre-MSPE.
    pub mspe_ratio: f64,
    pub n_donors: usize,
    pub n_predictors: usize,
    pub n_weeks: usize,
    pub treatment_week: usize,
    /// Nonzero when the donor weights are not unique.
    pub degenerate: bool,
}

/// In-space placebo result for one cutoff.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct ScPlaceboSummary {
    pub treated_rank: usize,
    pub n_ranked: usize,
    pub n_discarded: usize,
    pub n_failed: usize,
    pub p_value: f64,
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Copies the calling thread's last error message (empty after a success).
///
/// # Safety
/// `buf` must be writable for `capacity` bytes; `needed` may be null.
#[no_mangle]
pub unsafe extern "C" fn sc_last_error_message(buf: *mut c_char, capacity: usize, needed: *mut usize) -> ScStatus {
    let msg = LAST_ERROR.with(|e| e.borrow().to_string_lossy().into_owned());
    match copy_str(&msg, buf, capacity, needed) {
        Ok(()) => ScStatus::Ok,
        Err(s) => s,
    }
}

/// Loads a long `unit,date,variable,value` CSV and buckets it into weeks
/// starting on `week_anchor` (e.g. `"sun"`), averaging within a week.
///
/// # Safety
/// `path` and `week_anchor` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sc_panel_load_csv(
    path: *const c_char,
    week_anchor: *const c_char,
    out: *mut *mut ScPanel,
) -> ScStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let path = str_arg(path, "path")?;
        let anchor = synthcontrol::config::parse_weekday(str_arg(week_anchor, "week_anchor")?).or_status()?;
        let file = std::fs::File::open(path)
            .map_err(|e| ScmError::Io(format!("cannot open {path}: {e}")))
            .or_status()?;
        let obs = load_long_csv(std::io::BufReader::new(file)).or_status()?;
        let panel = to_weekly(&obs, anchor, Aggregation::Mean).or_status()?;
        *out = Box::into_raw(Box::new(ScPanel { inner: panel }));
        Ok(())
    })
}

/// # Safety
/// `panel` must come from [`sc_panel_load_csv`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sc_panel_free(panel: *mut ScPanel) {
    if !panel.is_null() {
        drop(Box::from_raw(panel));
    }
}

/// # Safety
/// `panel` must be a live handle; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn sc_panel_shape(
    panel: *const ScPanel,
    n_units: *mut usize,
    n_weeks: *mut usize,
    n_variables: *mut usize,
) -> ScStatus {
    guard(|| {
        let p = &handle(panel, "panel")?.inner;
        *out_ptr(n_units, "n_units")? = p.n_units();
        *out_ptr(n_weeks, "n_weeks")? = p.n_weeks();
        *out_ptr(n_variables, "n_variables")? = p.variables().len();
        Ok(())
    })
}

/// Name of unit `index`.
///
/// # Safety
/// `panel` must be a live handle; `buf` writable for `capacity` bytes.
#[no_mangle]
pub unsafe extern "C" fn sc_panel_unit_name(
    panel: *const ScPanel,
    index: usize,
    buf: *mut c_char,
    capacity: usize,
    needed: *mut usize,
) -> ScStatus {
    guard(|| {
        let p = &handle(panel, "panel")?.inner;
        let name = p.unit_ids().get(index).ok_or_else(|| {
            set_error(format!("unit index {index} out of range"));
            ScStatus::OutOfRange
        })?;
        copy_str(name, buf, capacity, needed)
    })
}

/// Study with every other unit as donor, the pre window from the first week
/// to the week before `treatment_week` and the post window to the last week.
/// The panel is copied, so it may be freed afterwards.
///
/// # Safety
/// `panel` must be a live handle; `predictors` must point to `n_predictors`
/// NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sc_study_new(
    panel: *const ScPanel,
    treated: *const c_char,
    outcome: *const c_char,
    predictors: *const *const c_char,
    n_predictors: usize,
    treatment_week: usize,
    out: *mut *mut ScStudy,
) -> ScStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let p = &handle(panel, "panel")?.inner;
        let treated = str_arg(treated, "treated")?;
        let outcome = str_arg(outcome, "outcome")?;
        if predictors.is_null() && n_predictors > 0 {
            set_error("predictors is null");
            return Err(ScStatus::NullPointer);
        }
        let mut preds = Vec::with_capacity(n_predictors);
        for i in 0..n_predictors {
            preds.push(str_arg(*predictors.add(i), "predictor")?.to_string());
        }
        let donors = p.unit_ids().iter().filter(|u| *u != treated).cloned().collect();
        let spec = StudySpec::with_windows(
            treated,
            donors,
            outcome,
            preds,
            0,
            treatment_week,
            p.n_weeks().saturating_sub(1),
        );
        let spec = synthcontrol::panel::validate_spec(spec, p).or_status()?;
        *out = Box::into_raw(Box::new(ScStudy {
            panel: p.clone(),
            spec,
            search: VSearch::default(),
        }));
        Ok(())
    })
}

/// Study from a TOML config file, prepared exactly as the CLI does.
///
/// # Safety
/// `config_path` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sc_study_from_config(config_path: *const c_char, out: *mut *mut ScStudy) -> ScStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let cfg = StudyConfig::load(Path::new(str_arg(config_path, "config_path")?)).or_status()?;
        let prepared = cfg.prepare().or_status()?;
        *out = Box::into_raw(Box::new(ScStudy {
            panel: prepared.panel,
            spec: prepared.spec,
            search: cfg.search(),
        }));
        Ok(())
    })
}

/// # Safety
/// `study` must come from a `sc_study_*` constructor and not be used
/// afterwards.
#[no_mangle]
pub unsafe extern "C" fn sc_study_free(study: *mut ScStudy) {
    if !study.is_null() {
        drop(Box::from_raw(study));
    }
}

/// Optimizer settings: `starts` random predictor-weight starts, `refine`
/// polished candidates and the seed.
///
/// # Safety
/// `study` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn sc_study_set_search(study: *mut ScStudy, starts: usize, refine: usize, seed: u64) -> ScStatus {
    guard(|| {
        let s = out_ptr(study, "study")?;
        let max_evals = match &s.search {
            VSearch::Optimize(o) => o.max_evals,
            VSearch::Fixed(_) => OuterOptions::default().max_evals,
        };
        s.search = VSearch::Optimize(OuterOptions {
            starts,
            refine,
            seed,
            max_evals,
        });
        Ok(())
    })
}

/// # Safety
/// `study` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sc_study_fit(study: *const ScStudy, out: *mut *mut ScFit) -> ScStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let s = handle(study, "study")?;
        let f = fit(&s.panel, &s.spec, &s.search).or_status()?;
        *out = Box::into_raw(Box::new(ScFit { inner: f }));
        Ok(())
    })
}

/// In-space placebo. A `cutoff_multiple` of zero or less means no cutoff.
///
/// # Safety
/// `study` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sc_study_placebo_space(
    study: *const ScStudy,
    cutoff_multiple: f64,
    out: *mut ScPlaceboSummary,
) -> ScStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let s = handle(study, "study")?;
        let cutoff = (cutoff_multiple > 0.0).then_some(cutoff_multiple);
        let study = placebo_in_space(&s.panel, &s.spec, cutoff, RankScope::AllFitted, &s.search).or_status()?;
        *out = ScPlaceboSummary {
            treated_rank: study.treated_rank,
            n_ranked: study.n_ranked,
            n_discarded: study.discarded.len(),
            n_failed: study.failures.len(),
            p_value: study.p_value,
        };
        Ok(())
    })
}

/// # Safety
/// `fit` must come from [`sc_study_fit`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sc_fit_free(fit: *mut ScFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}

/// # Safety
/// `fit` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sc_fit_summary(fit: *const ScFit, out: *mut ScFitSummary) -> ScStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let f = &handle(fit, "fit")?.inner;
        *out = ScFitSummary {
            average_post_gap: f.average_post_gap,
            pre_mspe: f.pre_mspe,
            post_mspe: f.post_mspe,
            mspe_ratio: mspe_ratio_or_floor(f).0,
            n_donors: f.donor_weights.len(),
            n_predictors: f.predictor_weights.len(),
            n_weeks: f.weeks.len(),
            treatment_week: f.spec.treatment_week,
            degenerate: f.diagnostics.degenerate,
        };
        Ok(())
    })
}

/// Donor weights in donor order (see [`sc_fit_donor_name`]).
///
/// # Safety
/// `fit` must be a live handle; `buf` writable for `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn sc_fit_donor_weights(
    fit: *const ScFit,
    buf: *mut f64,
    capacity: usize,
    needed: *mut usize,
) -> ScStatus {
    guard(|| copy_f64(handle(fit, "fit")?.inner.donor_weights.values(), buf, capacity, needed))
}

/// # Safety
/// `fit` must be a live handle; `buf` writable for `capacity` bytes.
#[no_mangle]
pub unsafe extern "C" fn sc_fit_donor_name(
    fit: *const ScFit,
    index: usize,
    buf: *mut c_char,
    capacity: usize,
    needed: *mut usize,
) -> ScStatus {
    guard(|| {
        let f = &handle(fit, "fit")?.inner;
        let name = f.donor_weights.labels().get(index).ok_or_else(|| {
            set_error(format!("donor index {index} out of range"));
            ScStatus::OutOfRange
        })?;
        copy_str(name, buf, capacity, needed)
    })
}

/// Predictor weights in predictor order.
///
/// # Safety
/// `fit` must be a live handle; `buf` writable for `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn sc_fit_predictor_weights(
    fit: *const ScFit,
    buf: *mut f64,
    capacity: usize,
    needed: *mut usize,
) -> ScStatus {
    guard(|| copy_f64(handle(fit, "fit")?.inner.predictor_weights.values(), buf, capacity, needed))
}

/// Treated minus synthetic outcome for every week of the panel.
///
/// # Safety
/// `fit` must be a live handle; `buf` writable for `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn sc_fit_gap(fit: *const ScFit, buf: *mut f64, capacity: usize, needed: *mut usize) -> ScStatus {
    guard(|| copy_f64(&handle(fit, "fit")?.inner.gap, buf, capacity, needed))
}

/// Synthetic outcome for every week of the panel.
///
/// # Safety
/// `fit` must be a live handle; `buf` writable for `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn sc_fit_synthetic(
    fit: *const ScFit,
    buf: *mut f64,
    capacity: usize,
    needed: *mut usize,
) -> ScStatus {
    guard(|| copy_f64(&handle(fit, "fit")?.inner.synthetic_outcome, buf, capacity, needed))
}

/// Full fit serialized as JSON.
///
/// # Safety
/// `fit` must be a live handle; `buf` writable for `capacity` bytes.
#[no_mangle]
pub unsafe extern "C" fn sc_fit_to_json(
    fit: *const ScFit,
    buf: *mut c_char,
    capacity: usize,
    needed: *mut usize,
) -> ScStatus {
    guard(|| {
        let f = &handle(fit, "fit")?.inner;
        let json = serde_json::to_string(f).map_err(|e| status_of(&e.into()))?;
        copy_str(&json, buf, capacity, needed)
    })
}
