use std::ffi::{c_char, CStr, CString};
use std::path::{Path, PathBuf};
use std::ptr;

use synthcontrol::synthgen::{generate, write_long_csv, SynthParams};
use synthcontrol_ffi::*;

fn fixture(dir: &Path, effect: f64) -> PathBuf {
    let path = dir.join("panel.csv");
    let panel = generate(&SynthParams {
        effect,
        seed: 11,
        ..Default::default()
    })
    .unwrap();
    write_long_csv(std::fs::File::create(&path).unwrap(), &panel.observations).unwrap();
    path
}

fn last_error() -> String {
    let mut needed = 0usize;
    let mut buf = vec![0 as c_char; 512];
    let s = unsafe { sc_last_error_message(buf.as_mut_ptr(), buf.len(), &mut needed) };
    assert_eq!(s, ScStatus::Ok);
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

fn cstr(s: &str) -> CString {
    CString::new(s).unwrap()
}

unsafe fn load(path: &Path) -> *mut ScPanel {
    let mut panel = ptr::null_mut();
    let p = cstr(path.to_str().unwrap());
    let anchor = cstr("sun");
    assert_eq!(sc_panel_load_csv(p.as_ptr(), anchor.as_ptr(), &mut panel), ScStatus::Ok);
    panel
}

unsafe fn study(panel: *const ScPanel) -> *mut ScStudy {
    let names: Vec<CString> = ["cov_1", "cov_2", "cov_3", "price"].iter().map(|s| cstr(s)).collect();
    let ptrs: Vec<*const c_char> = names.iter().map(|c| c.as_ptr()).collect();
    let (treated, outcome) = (cstr("U00"), cstr("price"));
    let mut out = ptr::null_mut();
    let s = sc_study_new(panel, treated.as_ptr(), outcome.as_ptr(), ptrs.as_ptr(), ptrs.len(), 45, &mut out);
    assert_eq!(s, ScStatus::Ok, "{}", last_error());
    out
}

#[test]
fn fit_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let csv = fixture(dir.path(), 25.0);
    unsafe {
        let panel = load(&csv);
        let (mut units, mut weeks, mut vars) = (0, 0, 0);
        assert_eq!(sc_panel_shape(panel, &mut units, &mut weeks, &mut vars), ScStatus::Ok);
        assert_eq!((units, weeks, vars), (12, 60, 4));

        let st = study(panel);
        sc_panel_free(panel);
        let mut fit = ptr::null_mut();
        assert_eq!(sc_study_fit(st, &mut fit), ScStatus::Ok, "{}", last_error());

        let mut summary = ScFitSummary::default();
        assert_eq!(sc_fit_summary(fit, &mut summary), ScStatus::Ok);
        assert_eq!(summary.n_donors, 11);
        assert_eq!(summary.n_weeks, 60);
        assert!((summary.average_post_gap - 25.0).abs() < 5.0, "{summary:?}");

        let mut needed = 0;
        assert_eq!(sc_fit_donor_weights(fit, ptr::null_mut(), 0, &mut needed), ScStatus::BufferTooSmall);
        assert_eq!(needed, 11);
        let mut w = vec![0.0; needed];
        assert_eq!(sc_fit_donor_weights(fit, w.as_mut_ptr(), w.len(), &mut needed), ScStatus::Ok);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(w.iter().all(|x| *x >= 0.0));

        let mut gap = vec![0.0; 60];
        assert_eq!(sc_fit_gap(fit, gap.as_mut_ptr(), gap.len(), ptr::null_mut()), ScStatus::Ok);
        let post: f64 = gap[45..].iter().sum::<f64>() / 15.0;
        assert!((post - summary.average_post_gap).abs() < 1e-9);

        let mut name = vec![0 as c_char; 8];
        assert_eq!(sc_fit_donor_name(fit, 0, name.as_mut_ptr(), name.len(), &mut needed), ScStatus::Ok);
        assert_eq!(CStr::from_ptr(name.as_ptr()).to_str().unwrap(), "U01");
        assert_eq!(sc_fit_donor_name(fit, 99, name.as_mut_ptr(), name.len(), &mut needed), ScStatus::OutOfRange);

        assert_eq!(sc_fit_to_json(fit, ptr::null_mut(), 0, &mut needed), ScStatus::BufferTooSmall);
        let mut json = vec![0 as c_char; needed];
        assert_eq!(sc_fit_to_json(fit, json.as_mut_ptr(), json.len(), &mut needed), ScStatus::Ok);
        let v: serde_json::Value = serde_json::from_str(CStr::from_ptr(json.as_ptr()).to_str().unwrap()).unwrap();
        assert_eq!(v["spec"]["treated_unit"], "U00");

        sc_fit_free(fit);
        sc_study_free(st);
    }
}

#[test]
fn placebo_summary() {
    let dir = tempfile::tempdir().unwrap();
    let csv = fixture(dir.path(), 25.0);
    unsafe {
        let panel = load(&csv);
        let st = study(panel);
        sc_panel_free(panel);
        assert_eq!(sc_study_set_search(st, 8, 2, 3), ScStatus::Ok);
        let mut out = ScPlaceboSummary::default();
        assert_eq!(sc_study_placebo_space(st, 0.0, &mut out), ScStatus::Ok);
        assert_eq!(out.n_ranked, 12);
        assert_eq!(out.n_discarded, 0);
        assert!((out.p_value - out.treated_rank as f64 / 12.0).abs() < 1e-15);
        sc_study_free(st);
    }
}

#[test]
fn errors_map_to_status_codes() {
    unsafe {
        let mut panel = ptr::null_mut();
        let anchor = cstr("sun");
        assert_eq!(sc_panel_load_csv(ptr::null(), anchor.as_ptr(), &mut panel), ScStatus::NullPointer);
        assert!(panel.is_null());

        let missing = cstr("/nonexistent/panel.csv");
        assert_eq!(sc_panel_load_csv(missing.as_ptr(), anchor.as_ptr(), &mut panel), ScStatus::Data);
        assert!(last_error().contains("/nonexistent/panel.csv"));

        let dir = tempfile::tempdir().unwrap();
        let csv = fixture(dir.path(), 0.0);
        let p = cstr(csv.to_str().unwrap());
        let bad = cstr("someday");
        assert_eq!(sc_panel_load_csv(p.as_ptr(), bad.as_ptr(), &mut panel), ScStatus::Usage);

        let panel = load(&csv);
        let names = [cstr("cov_1")];
        let ptrs = [names[0].as_ptr()];
        let (treated, outcome) = (cstr("nobody"), cstr("price"));
        let mut st = ptr::null_mut();
        let s = sc_study_new(panel, treated.as_ptr(), outcome.as_ptr(), ptrs.as_ptr(), 1, 45, &mut st);
        assert_eq!(s, ScStatus::Data);
        assert!(last_error().contains("nobody"));
        assert!(st.is_null());

        let ok = cstr("U00");
        let s = sc_study_new(panel, ok.as_ptr(), outcome.as_ptr(), ptrs.as_ptr(), 1, 45, &mut st);
        assert_eq!(s, ScStatus::Ok);
        assert_eq!(last_error(), "");
        sc_study_free(st);
        sc_panel_free(panel);

        sc_panel_free(ptr::null_mut());
        sc_fit_free(ptr::null_mut());
        sc_study_free(ptr::null_mut());
    }
}

#[test]
fn version_is_static_string() {
    let v = unsafe { CStr::from_ptr(sc_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/synthcontrol.h")).unwrap();
    for f in [
        "sc_version",
        "sc_last_error_message",
        "sc_panel_load_csv",
        "sc_panel_free",
        "sc_study_new",
        "sc_study_from_config",
        "sc_study_fit",
        "sc_study_placebo_space",
        "sc_fit_summary",
        "sc_fit_donor_weights",
        "sc_fit_gap",
        "sc_fit_to_json",
        "sc_fit_free",
    ] {
        assert!(header.contains(&format!("{f}(")), "{f} missing from header");
    }
    assert!(header.contains("typedef struct ScFit ScFit;"));
    assert!(header.contains("SC_STATUS_BUFFER_TOO_SMALL = 6"));
}
