use std::ffi::{CStr, CString};
use std::ptr;

use scc_ffi::*;

fn last_error() -> String {
    let p = scc_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

/// Six regions on a path, two obvious shapes.
fn toy_curves() -> *mut SccCurves {
    let ids: Vec<CString> = (0..6).map(|i| CString::new(format!("R{i}")).unwrap()).collect();
    let ptrs: Vec<*const std::ffi::c_char> = ids.iter().map(|c| c.as_ptr()).collect();
    let t = 20;
    let values: Vec<f64> = (0..6)
        .flat_map(|i| {
            (0..t).map(move |k| {
                let x = k as f64 / (t - 1) as f64;
                let wiggle = 0.02 * (((i * 13 + k * 7) % 11) as f64 - 5.0) / 5.0;
                if i < 3 { 1.0 + x + wiggle } else { 2.0 - x + wiggle }
            })
        })
        .collect();
    let mut out = ptr::null_mut();
    let st = unsafe { scc_curves_new(ptrs.as_ptr(), 6, values.as_ptr(), t, 1, &mut out) };
    assert_eq!(st, SccStatus::Ok, "{}", last_error());
    out
}

fn toy_graph(curves: *const SccCurves) -> *mut SccGraph {
    let edges = [0usize, 1, 1, 2, 2, 3, 3, 4, 4, 5];
    let mut g = ptr::null_mut();
    let st = unsafe { scc_graph_new(curves, edges.as_ptr(), 5, &mut g) };
    assert_eq!(st, SccStatus::Ok, "{}", last_error());
    g
}

fn small_options() -> SccFitOptions {
    SccFitOptions {
        p: 4,
        iterations: 300,
        burn_in: 150,
        seed: 3,
        prior: SccPrior::UnitInformation,
        ..scc_fit_options_default()
    }
}

fn labels_of(fit: *const SccFit) -> Vec<usize> {
    let mut n = 0;
    assert_eq!(unsafe { scc_fit_labels(fit, ptr::null_mut(), 0, &mut n) }, SccStatus::Ok);
    let mut v = vec![usize::MAX; n];
    assert_eq!(unsafe { scc_fit_labels(fit, v.as_mut_ptr(), n, &mut n) }, SccStatus::Ok);
    v
}

#[test]
fn fit_round_trip_through_handles() {
    let c = toy_curves();
    let g = toy_graph(c);
    let (mut nr, mut nt) = (0, 0);
    assert_eq!(unsafe { scc_curves_shape(c, &mut nr, &mut nt) }, SccStatus::Ok);
    assert_eq!((nr, nt), (6, 20));

    let opts = small_options();
    let mut fit = ptr::null_mut();
    let st = unsafe { scc_fit_run(c, g, &opts, &mut fit) };
    assert_eq!(st, SccStatus::Ok, "{}", last_error());

    let (mut draws, mut k, mut lpml) = (0, 0, 0.0);
    assert_eq!(unsafe { scc_fit_stats(fit, &mut draws, &mut k, &mut lpml) }, SccStatus::Ok);
    assert_eq!(draws, 150);
    assert!(k >= 1 && lpml.is_finite());

    let labels = labels_of(fit);
    assert_eq!(labels.len(), 6);
    assert!(labels.iter().all(|&l| l < k));

    let mut phi = vec![0.0; draws];
    let mut n = 0;
    assert_eq!(unsafe { scc_fit_phi(fit, phi.as_mut_ptr(), draws, &mut n) }, SccStatus::Ok);
    assert_eq!(n, draws);
    assert!(phi.iter().all(|p| p.is_finite()));

    let mut curve = vec![0.0; 20];
    assert_eq!(unsafe { scc_fit_mean_curve(fit, 0, curve.as_mut_ptr(), 20, &mut n) }, SccStatus::Ok);
    assert_eq!(n, 20);
    assert_eq!(unsafe { scc_fit_mean_curve(fit, k, curve.as_mut_ptr(), 20, &mut n) }, SccStatus::InvalidArgument);

    // same seed, same answer
    let mut again = ptr::null_mut();
    assert_eq!(unsafe { scc_fit_run(c, g, &opts, &mut again) }, SccStatus::Ok);
    assert_eq!(labels_of(again), labels);

    unsafe {
        scc_fit_free(fit);
        scc_fit_free(again);
        scc_graph_free(g);
        scc_curves_free(c);
    }
}

#[test]
fn errors_are_reported_with_messages() {
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { scc_curves_load(ptr::null(), &mut out) }, SccStatus::NullPointer);
    assert!(last_error().contains("null"));

    let missing = CString::new("/nonexistent/curves.csv").unwrap();
    assert_eq!(unsafe { scc_curves_load(missing.as_ptr(), &mut out) }, SccStatus::Io);
    assert!(out.is_null());

    let c = toy_curves();
    assert!(scc_last_error().is_null(), "success clears the message");
    let g = toy_graph(c);
    let mut fit = ptr::null_mut();
    let bad = SccFitOptions { burn_in: 400, ..small_options() };
    assert_eq!(unsafe { scc_fit_run(c, g, &bad, &mut fit) }, SccStatus::Config);
    let bad = SccFitOptions { p: 40, ..small_options() };
    assert_ne!(unsafe { scc_fit_run(c, g, &bad, &mut fit) }, SccStatus::Ok);
    assert!(fit.is_null());

    let edges = [0usize, 9];
    let mut g2 = ptr::null_mut();
    assert_eq!(unsafe { scc_graph_new(c, edges.as_ptr(), 1, &mut g2) }, SccStatus::InvalidArgument);

    let mut fit = ptr::null_mut();
    assert_eq!(unsafe { scc_fit_run(c, g, &small_options(), &mut fit) }, SccStatus::Ok);
    let mut small = [0usize; 2];
    let mut n = 0;
    assert_eq!(unsafe { scc_fit_labels(fit, small.as_mut_ptr(), 2, &mut n) }, SccStatus::BufferTooSmall);
    assert_eq!(n, 6);
    unsafe {
        scc_fit_free(fit);
        scc_graph_free(g);
        scc_curves_free(c);
        // null is a no-op
        scc_curves_free(ptr::null_mut());
        scc_graph_free(ptr::null_mut());
        scc_fit_free(ptr::null_mut());
    }
}

#[test]
fn rand_index_and_version() {
    let a = [0usize, 0, 1, 1];
    let b = [0usize, 1, 1, 1];
    let mut r = 0.0;
    assert_eq!(unsafe { scc_rand_index(a.as_ptr(), b.as_ptr(), 4, &mut r) }, SccStatus::Ok);
    assert_eq!(r, 0.5);
    let v = unsafe { CStr::from_ptr(scc_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn files_load_through_the_c_interface() {
    let d = tempfile::tempdir().unwrap();
    let curves = d.path().join("curves.csv");
    let adj = d.path().join("adj.csv");
    std::fs::write(&curves, "# a comment\nregion_id,0,0.5,1\nA,0.2,0.3,0.5\nB,0.5,0.3,0.2\nC,0.1,0.1,0.8\n").unwrap();
    std::fs::write(&adj, "region_a,region_b\nA,B\nB,C\n").unwrap();
    let cp = CString::new(curves.to_str().unwrap()).unwrap();
    let ap = CString::new(adj.to_str().unwrap()).unwrap();
    let mut c = ptr::null_mut();
    assert_eq!(unsafe { scc_curves_load(cp.as_ptr(), &mut c) }, SccStatus::Ok, "{}", last_error());
    let mut g = ptr::null_mut();
    assert_eq!(unsafe { scc_graph_load(ap.as_ptr(), c, &mut g) }, SccStatus::Ok, "{}", last_error());
    unsafe {
        scc_graph_free(g);
        scc_curves_free(c);
    }
}

#[test]
fn header_compiles_as_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/scc.h");
    let text = std::fs::read_to_string(header).unwrap();
    for sym in ["scc_fit_run", "scc_last_error", "SCC_STATUS_BUFFER_TOO_SMALL", "typedef struct SccFit SccFit"] {
        assert!(text.contains(sym), "{sym} missing from header");
    }
    let Ok(out) = std::process::Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c", header])
        .output()
    else {
        eprintln!("no C compiler; skipped syntax check");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
