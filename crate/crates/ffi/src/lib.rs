//! C interface to `scc-core`.
//!
//! Objects are opaque handles created by `*_new`/`*_load`/`scc_fit_run` and
//! released with the matching `*_free`. Every fallible call returns an
//! [`SccStatus`]; on failure [`scc_last_error`] describes the problem for the
//! calling thread. Index arrays are zero-based.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use nalgebra::DMatrix;
use scc_core::curves::{build_basis, fpca_noise_variance, CurveMatrix};
use scc_core::inference::{cpo_lpml, rand_index, summarize, ClusterSummary};
use scc_core::model::{Hyperparams, ModelData, Partition};
use scc_core::sampler::{run_mcmc, McmcConfig, McmcTrace};
use scc_core::spatial::AdjacencyGraph;
use scc_core::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SccStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Data = 5,
    Numeric = 6,
    Config = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

impl From<&Error> for SccStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Io { .. } => SccStatus::Io,
            Error::Format(_) | Error::DuplicateRecord { .. } | Error::DateGap { .. } => {
                SccStatus::Format
            }
            Error::DegenerateRegion(_)
            | Error::DegenerateData(_)
            | Error::Rank(_)
            | Error::DegenerateSpectrum => SccStatus::Data,
            Error::Domain(_) | Error::Dimension(_) => SccStatus::InvalidArgument,
            Error::Numeric(_) | Error::Stability(_) => SccStatus::Numeric,
            Error::Config(_) => SccStatus::Config,
        }
    }
}

/// Prior used by [`scc_fit_run`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SccPrior {
    /// `Λ0 = 1e-6 I`, `ν0 = 0.01`, `s0 = 1`.
    Default = 0,
    /// `Λ0 = ξᵀξ / T`, `s0²` from the curves' noise floor.
    UnitInformation = 1,
}

/// Settings for one sampler run.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SccFitOptions {
    /// Basis size.
    pub p: usize,
    /// Spline order, capped at `p`.
    pub order: usize,
    /// Distance decay; 0 gives the plain CRP.
    pub h: f64,
    pub alpha: f64,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub prior: SccPrior,
}

pub struct SccCurves(CurveMatrix);

pub struct SccGraph(AdjacencyGraph);

/// A finished run with its summaries.
pub struct SccFit {
    trace: McmcTrace,
    summary: ClusterSummary,
    lpml: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: SccStatus, msg: impl Into<String>) -> SccStatus {
    set_error(msg.into());
    status
}

/// Runs `f`, turning errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), SccStatus>) -> SccStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SccStatus::Ok,
        Ok(Err(s)) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(SccStatus::Panic, format!("internal panic: {msg}"))
        }
    }
}

trait OrStatus<T> {
    fn or_status(self) -> Result<T, SccStatus>;
}

impl<T> OrStatus<T> for scc_core::Result<T> {
    fn or_status(self) -> Result<T, SccStatus> {
        self.map_err(|e| fail(SccStatus::from(&e), e.to_string()))
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, SccStatus> {
    p.as_ref()
        .ok_or_else(|| fail(SccStatus::NullPointer, format!("{what} is null")))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], SccStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(SccStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn string(p: *const c_char, what: &str) -> Result<String, SccStatus> {
    if p.is_null() {
        return Err(fail(SccStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(str::to_owned)
        .map_err(|_| fail(SccStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn read_ids(ids: *const *const c_char, n: usize) -> Result<Vec<String>, SccStatus> {
    slice(ids, n, "region_ids")?
        .iter()
        .map(|&p| string(p, "region id"))
        .collect()
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), SccStatus> {
    if out.is_null() {
        return Err(fail(SccStatus::NullPointer, "output handle pointer is null"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Copies `src` into `dst`. Always reports the needed length in `*len_out`.
unsafe fn copy_out<T: Copy>(src: &[T], dst: *mut T, cap: usize, len_out: *mut usize) -> Result<(), SccStatus> {
    if !len_out.is_null() {
        *len_out = src.len();
    }
    if dst.is_null() {
        return if cap == 0 {
            Ok(())
        } else {
            Err(fail(SccStatus::NullPointer, "output buffer is null"))
        };
    }
    if cap < src.len() {
        return Err(fail(
            SccStatus::BufferTooSmall,
            format!("buffer holds {cap} values, {} needed", src.len()),
        ));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), dst, src.len());
    Ok(())
}

/// Message for the last failed call on this thread, or null. The pointer is
/// valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn scc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn scc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Curves from a row-major `n_regions x n_points` array. With `normalize`
/// nonzero each row is divided by its sum; otherwise rows must already sum
/// to one.
///
/// # Safety
/// `region_ids` must hold `n_regions` NUL-terminated strings and `values`
/// `n_regions * n_points` doubles.
#[no_mangle]
pub unsafe extern "C" fn scc_curves_new(
    region_ids: *const *const c_char,
    n_regions: usize,
    values: *const f64,
    n_points: usize,
    normalize: i32,
    out: *mut *mut SccCurves,
) -> SccStatus {
    guard(|| {
        let ids = read_ids(region_ids, n_regions)?;
        let len = n_regions
            .checked_mul(n_points)
            .ok_or_else(|| fail(SccStatus::InvalidArgument, "curve array size overflows"))?;
        let v = slice(values, len, "values")?;
        let m = DMatrix::from_row_slice(n_regions, n_points, v);
        let c = if normalize != 0 {
            CurveMatrix::from_unnormalized(ids, m)
        } else {
            CurveMatrix::new(ids, m)
        }
        .or_status()?;
        put(out, SccCurves(c))
    })
}

/// Curves from a CSV file whose header is `region_id` followed by the grid.
///
/// # Safety
/// `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn scc_curves_load(path: *const c_char, out: *mut *mut SccCurves) -> SccStatus {
    guard(|| {
        let p = PathBuf::from(string(path, "path")?);
        put(out, SccCurves(CurveMatrix::load(&p).or_status()?))
    })
}

/// # Safety
/// `curves` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn scc_curves_free(curves: *mut SccCurves) {
    if !curves.is_null() {
        drop(Box::from_raw(curves));
    }
}

/// # Safety
/// `curves` must be a live handle; the out pointers may be null.
#[no_mangle]
pub unsafe extern "C" fn scc_curves_shape(
    curves: *const SccCurves,
    n_regions: *mut usize,
    n_points: *mut usize,
) -> SccStatus {
    guard(|| {
        let c = &deref(curves, "curves")?.0;
        if !n_regions.is_null() {
            *n_regions = c.n_regions();
        }
        if !n_points.is_null() {
            *n_points = c.n_points();
        }
        Ok(())
    })
}

/// Graph over the regions of `curves` from `n_edges` index pairs stored as
/// `[a0, b0, a1, b1, ...]`.
///
/// # Safety
/// `curves` must be a live handle and `edges` hold `2 * n_edges` values.
#[no_mangle]
pub unsafe extern "C" fn scc_graph_new(
    curves: *const SccCurves,
    edges: *const usize,
    n_edges: usize,
    out: *mut *mut SccGraph,
) -> SccStatus {
    guard(|| {
        let c = &deref(curves, "curves")?.0;
        let len = n_edges
            .checked_mul(2)
            .ok_or_else(|| fail(SccStatus::InvalidArgument, "edge count overflows"))?;
        let flat = slice(edges, len, "edges")?;
        let pairs: Vec<(usize, usize)> = flat.chunks_exact(2).map(|e| (e[0], e[1])).collect();
        let g = AdjacencyGraph::from_edges(c.region_ids().to_vec(), &pairs).or_status()?;
        put(out, SccGraph(g))
    })
}

/// Edge-list CSV (`region_a,region_b`), aligned to the regions of `curves`.
///
/// # Safety
/// `path` must be NUL-terminated and `curves` a live handle.
#[no_mangle]
pub unsafe extern "C" fn scc_graph_load(
    path: *const c_char,
    curves: *const SccCurves,
    out: *mut *mut SccGraph,
) -> SccStatus {
    guard(|| {
        let p = PathBuf::from(string(path, "path")?);
        let c = &deref(curves, "curves")?.0;
        put(out, SccGraph(AdjacencyGraph::load(&p, Some(c.region_ids())).or_status()?))
    })
}

/// # Safety
/// `graph` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn scc_graph_free(graph: *mut SccGraph) {
    if !graph.is_null() {
        drop(Box::from_raw(graph));
    }
}

/// Defaults: `p = 6`, order 4, `h = 0`, `alpha = 1`, 4000 iterations with
/// 2000 burn-in, no thinning, seed 0, default prior.
#[no_mangle]
pub extern "C" fn scc_fit_options_default() -> SccFitOptions {
    let m = McmcConfig::default();
    SccFitOptions {
        p: 6,
        order: 4,
        h: 0.0,
        alpha: 1.0,
        iterations: m.iterations,
        burn_in: m.burn_in,
        thin: m.thin,
        seed: m.seed,
        prior: SccPrior::Default,
    }
}

/// Runs the sampler and summarizes the posterior.
///
/// # Safety
/// `curves` and `graph` must be live handles built over the same regions.
#[no_mangle]
pub unsafe extern "C" fn scc_fit_run(
    curves: *const SccCurves,
    graph: *const SccGraph,
    options: *const SccFitOptions,
    out: *mut *mut SccFit,
) -> SccStatus {
    guard(|| {
        let c = &deref(curves, "curves")?.0;
        let g = &deref(graph, "graph")?.0;
        let o = *deref(options, "options")?;
        if g.region_ids() != c.region_ids() {
            return Err(fail(SccStatus::InvalidArgument, "graph and curves list different regions"));
        }
        let basis = build_basis(o.p, c.n_points(), o.order.min(o.p)).or_status()?;
        let mut hyper = match o.prior {
            SccPrior::Default => Hyperparams::defaults(o.p, o.h),
            SccPrior::UnitInformation => {
                let noise = fpca_noise_variance(c).or_status()?;
                Hyperparams::unit_information(&basis, noise, o.h)
            }
        };
        hyper.alpha = o.alpha;
        hyper.validate().or_status()?;
        let config = McmcConfig {
            iterations: o.iterations,
            burn_in: o.burn_in,
            thin: o.thin,
            seed: o.seed,
            ..McmcConfig::default()
        };
        let data = ModelData::new(c.clone(), basis, g).or_status()?;
        let trace = run_mcmc(&data, &hyper, &config).or_status()?;
        let lpml = cpo_lpml(&trace, &data, o.h).or_status()?.lpml;
        let summary = summarize(&trace, &data).or_status()?;
        put(out, SccFit { trace, summary, lpml })
    })
}

/// # Safety
/// `fit` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn scc_fit_free(fit: *mut SccFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}

/// Saved draws, clusters in the point estimate, and LPML.
///
/// # Safety
/// `fit` must be a live handle; the out pointers may be null.
#[no_mangle]
pub unsafe extern "C" fn scc_fit_stats(
    fit: *const SccFit,
    n_draws: *mut usize,
    n_clusters: *mut usize,
    lpml: *mut f64,
) -> SccStatus {
    guard(|| {
        let f = deref(fit, "fit")?;
        if !n_draws.is_null() {
            *n_draws = f.trace.len();
        }
        if !n_clusters.is_null() {
            *n_clusters = f.summary.mean_curves.len();
        }
        if !lpml.is_null() {
            *lpml = f.lpml;
        }
        Ok(())
    })
}

/// Point-estimate labels, one per region. `*len_out` receives the number of
/// regions; pass a null buffer with `capacity` 0 to query it.
///
/// # Safety
/// `labels` must hold `capacity` values.
#[no_mangle]
pub unsafe extern "C" fn scc_fit_labels(
    fit: *const SccFit,
    labels: *mut usize,
    capacity: usize,
    len_out: *mut usize,
) -> SccStatus {
    guard(|| {
        let f = deref(fit, "fit")?;
        copy_out(&f.summary.dahl_labels, labels, capacity, len_out)
    })
}

/// Posterior draws of the CAR coupling, in sampling order.
///
/// # Safety
/// `phi` must hold `capacity` values.
#[no_mangle]
pub unsafe extern "C" fn scc_fit_phi(
    fit: *const SccFit,
    phi: *mut f64,
    capacity: usize,
    len_out: *mut usize,
) -> SccStatus {
    guard(|| {
        let f = deref(fit, "fit")?;
        let v: Vec<f64> = f.trace.draws.iter().map(|d| d.phi).collect();
        copy_out(&v, phi, capacity, len_out)
    })
}

/// Mean curve of point-estimate cluster `cluster` on the grid.
///
/// # Safety
/// `curve` must hold `capacity` values.
#[no_mangle]
pub unsafe extern "C" fn scc_fit_mean_curve(
    fit: *const SccFit,
    cluster: usize,
    curve: *mut f64,
    capacity: usize,
    len_out: *mut usize,
) -> SccStatus {
    guard(|| {
        let f = deref(fit, "fit")?;
        let c = f.summary.mean_curves.get(cluster).ok_or_else(|| {
            fail(
                SccStatus::InvalidArgument,
                format!("cluster {cluster} out of range ({} clusters)", f.summary.mean_curves.len()),
            )
        })?;
        copy_out(c, curve, capacity, len_out)
    })
}

/// Rand index between two labelings of `n` items.
///
/// # Safety
/// `a` and `b` must each hold `n` values.
#[no_mangle]
pub unsafe extern "C" fn scc_rand_index(a: *const usize, b: *const usize, n: usize, out: *mut f64) -> SccStatus {
    guard(|| {
        let pa = Partition::from_labels(slice(a, n, "a")?);
        let pb = Partition::from_labels(slice(b, n, "b")?);
        let r = rand_index(&pa, &pb).or_status()?;
        if out.is_null() {
            return Err(fail(SccStatus::NullPointer, "out is null"));
        }
        *out = r;
        Ok(())
    })
}
