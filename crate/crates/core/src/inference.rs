//! Posterior summaries and model choice: CPO/LPML, selection of `h`,
//! Dahl's least-squares partition, the Rand index, mean curves, a credible
//! interval for `φ`, and a k-means baseline.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curves::{build_basis, BasisSet, CurveMatrix};
use crate::error::{Error, Result};
use crate::model::likelihood::{offset_normal_loglik, region_offset, residual_rows};
use crate::model::{Hyperparams, LikelihoodForm, ModelData, Partition};
use crate::rng::stream;
use crate::sampler::{run_mcmc, McmcConfig, McmcTrace};
use crate::spatial::AdjacencyGraph;

/// Default grid of `h` candidates.
pub const DEFAULT_H_GRID: [f64; 9] = [0.0, 0.1, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0];

/// `(a + b) / C(n, 2)` where `a` counts pairs together in both partitions
/// and `b` pairs apart in both.
pub fn rand_index(p1: &Partition, p2: &Partition) -> Result<f64> {
    let n = p1.n();
    if n != p2.n() {
        return Err(Error::Dimension(format!(
            "partitions over {} and {} regions",
            n,
            p2.n()
        )));
    }
    if n < 2 {
        return Ok(1.0);
    }
    let mut agree = 0usize;
    for i in 0..n {
        for j in i + 1..n {
            if p1.same_cluster(i, j) == p2.same_cluster(i, j) {
                agree += 1;
            }
        }
    }
    Ok(agree as f64 / (n * (n - 1) / 2) as f64)
}

/// Mean co-clustering matrix of the draws.
pub fn coclustering(trace: &McmcTrace) -> Result<DMatrix<f64>> {
    let first = trace
        .draws
        .first()
        .ok_or_else(|| Error::Dimension("empty trace".into()))?;
    let n = first.labels.len();
    let mut pi = DMatrix::zeros(n, n);
    for d in &trace.draws {
        for i in 0..n {
            for j in 0..n {
                if d.labels[i] == d.labels[j] {
                    pi[(i, j)] += 1.0;
                }
            }
        }
    }
    Ok(pi / trace.len() as f64)
}

/// Draw minimizing `Σ_ij (1{c_i = c_j} - π̂_ij)²`; ties go to the earliest
/// draw. Returns the partition and the draw index.
pub fn dahl_partition(trace: &McmcTrace) -> Result<(Partition, usize)> {
    if trace.is_empty() {
        return Err(Error::Dimension("Dahl's method needs at least one draw".into()));
    }
    let n = trace.draws[0].labels.len();
    if trace.draws.iter().any(|d| d.labels.len() != n) {
        return Err(Error::Dimension("draws disagree on the number of regions".into()));
    }
    // co-clustering counts keep the loss (scaled by M²) in exact integers
    let mut counts = vec![0i64; n * n];
    for d in &trace.draws {
        for i in 0..n {
            for j in 0..n {
                if d.labels[i] == d.labels[j] {
                    counts[i * n + j] += 1;
                }
            }
        }
    }
    let m = trace.len() as i64;
    let mut best = (i128::MAX, 0usize);
    for (l, d) in trace.draws.iter().enumerate() {
        let mut loss: i128 = 0;
        for i in 0..n {
            for j in 0..n {
                let same = if d.labels[i] == d.labels[j] { m } else { 0 };
                let e = (same - counts[i * n + j]) as i128;
                loss += e * e;
            }
        }
        if loss < best.0 {
            best = (loss, l);
        }
    }
    Ok((Partition::from_labels(&trace.draws[best.1].labels), best.1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpmlReport {
    pub h: f64,
    pub lpml: f64,
    pub per_region_log_cpo: Vec<f64>,
    /// Regions with a non-finite per-draw density; excluded from `lpml`.
    pub flagged: Vec<String>,
}

/// Per-draw `log f(y_i | θ_l)` for every region, as an `M x n` matrix.
pub fn per_draw_log_densities(trace: &McmcTrace, data: &ModelData) -> Result<DMatrix<f64>> {
    let n = data.n();
    let mut out = DMatrix::zeros(trace.len(), n);
    for (l, d) in trace.draws.iter().enumerate() {
        let st = d.state();
        st.validate()?;
        if st.labels.len() != n {
            return Err(Error::Dimension("trace and data region counts differ".into()));
        }
        let resid = residual_rows(&st, data);
        let fitted: Vec<Vec<f64>> = st.params.iter().map(|c| data.fitted(&c.beta)).collect();
        for i in 0..n {
            let c = st.labels[i];
            let offset = match trace.likelihood_form {
                LikelihoodForm::Conditional if st.phi != 0.0 => Some(
                    region_offset(i, &resid, data)
                        .into_iter()
                        .map(|v| v * st.phi)
                        .collect::<Vec<_>>(),
                ),
                _ => None,
            };
            out[(l, i)] =
                offset_normal_loglik(data.row(i), &fitted[c], st.params[c].sigma(), offset.as_deref());
        }
    }
    Ok(out)
}

/// `log CPO_i = log M - logsumexp_l(-log f_il)` and `LPML = Σ_i log CPO_i`.
pub fn cpo_lpml(trace: &McmcTrace, data: &ModelData, h: f64) -> Result<LpmlReport> {
    if trace.is_empty() {
        return Err(Error::Dimension("CPO needs at least one draw".into()));
    }
    let dens = per_draw_log_densities(trace, data)?;
    cpo_from_log_densities(&dens, data.curves.region_ids(), h)
}

/// CPO and LPML from an `M x n` matrix of per-draw log densities. Regions
/// with any non-finite entry are flagged and left out of the sum.
pub fn cpo_from_log_densities(
    dens: &DMatrix<f64>,
    region_ids: &[String],
    h: f64,
) -> Result<LpmlReport> {
    if dens.nrows() == 0 {
        return Err(Error::Dimension("CPO needs at least one draw".into()));
    }
    if dens.ncols() != region_ids.len() {
        return Err(Error::Dimension("density columns and region ids differ".into()));
    }
    let m = dens.nrows() as f64;
    let mut per_region = Vec::with_capacity(dens.ncols());
    let mut flagged = Vec::new();
    for i in 0..dens.ncols() {
        let col: Vec<f64> = dens.column(i).iter().map(|v| -v).collect();
        if col.iter().any(|v| !v.is_finite()) {
            flagged.push(region_ids[i].clone());
            per_region.push(f64::NAN);
            continue;
        }
        let mx = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = mx + col.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
        per_region.push(m.ln() - lse);
    }
    let lpml = per_region.iter().filter(|v| v.is_finite()).sum();
    Ok(LpmlReport {
        h,
        lpml,
        per_region_log_cpo: per_region,
        flagged,
    })
}

/// One fit of a selection run.
#[derive(Debug, Clone)]
pub struct HFit {
    pub h: f64,
    pub trace: McmcTrace,
    pub report: LpmlReport,
}

/// Fit every candidate in parallel, each chain on the stream of
/// `config.seed`, keeping per-candidate failures instead of aborting.
pub fn fit_h_grid(
    candidates: &[f64],
    data: &ModelData,
    hyper: &Hyperparams,
    config: &McmcConfig,
) -> Result<Vec<Result<HFit>>> {
    if candidates.is_empty() {
        return Err(Error::Config("empty h grid".into()));
    }
    if let Some(h) = candidates.iter().find(|h| !(**h >= 0.0 && h.is_finite())) {
        return Err(Error::Config(format!("h must be non-negative, got {h}")));
    }
    Ok(candidates
        .par_iter()
        .map(|&h| {
            let hy = Hyperparams { h, ..hyper.clone() };
            let trace = run_mcmc(data, &hy, config)?;
            let report = cpo_lpml(&trace, data, h)?;
            Ok(HFit { h, trace, report })
        })
        .collect())
}

/// [`fit_h_grid`] followed by the largest LPML; ties go to the smaller `h`.
/// Any failed candidate fails the whole selection. Returns the index of the
/// winner and all fits in candidate order.
pub fn select_h(
    candidates: &[f64],
    data: &ModelData,
    hyper: &Hyperparams,
    config: &McmcConfig,
) -> Result<(usize, Vec<HFit>)> {
    let fits: Vec<HFit> = fit_h_grid(candidates, data, hyper, config)?
        .into_iter()
        .collect::<Result<_>>()?;
    let best = best_lpml(&fits);
    Ok((best, fits))
}

/// Basis size with the largest LPML among `candidates`, each fitted at the
/// given `hyper.h` with a spline basis of order `min(p, order)` and the prior
/// returned by `prior`. Ties go to the smaller `p`. Returns the winner and
/// every `(p, lpml)` pair.
pub fn select_p_by_lpml<F>(
    candidates: &[usize],
    curves: &CurveMatrix,
    graph: &AdjacencyGraph,
    order: usize,
    prior: F,
    config: &McmcConfig,
) -> Result<(usize, Vec<(usize, f64)>)>
where
    F: Fn(&BasisSet) -> Result<Hyperparams> + Sync,
{
    if candidates.is_empty() {
        return Err(Error::Config("empty basis-size grid".into()));
    }
    let scores: Vec<(usize, f64)> = candidates
        .par_iter()
        .map(|&p| -> Result<(usize, f64)> {
            let basis = build_basis(p, curves.n_points(), order.min(p))?;
            let hyper = prior(&basis)?;
            let data = ModelData::new(curves.clone(), basis, graph)?;
            let trace = run_mcmc(&data, &hyper, config)?;
            Ok((p, cpo_lpml(&trace, &data, hyper.h)?.lpml))
        })
        .collect::<Result<_>>()?;
    let mut best = scores[0];
    for &(p, l) in &scores[1..] {
        if l > best.1 || (l == best.1 && p < best.0) {
            best = (p, l);
        }
    }
    Ok((best.0, scores))
}

/// Index of the largest LPML; ties toward smaller `h`.
pub fn best_lpml(fits: &[HFit]) -> usize {
    let mut best = 0;
    for (k, f) in fits.iter().enumerate().skip(1) {
        let b = &fits[best];
        if f.report.lpml > b.report.lpml || (f.report.lpml == b.report.lpml && f.h < b.h) {
            best = k;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub dahl_labels: Vec<usize>,
    pub dahl_draw: usize,
    /// One curve per Dahl cluster, on the grid.
    pub mean_curves: Vec<Vec<f64>>,
    pub phi_ci: [f64; 2],
    pub phi_mean: f64,
    /// Number of clusters -> number of draws.
    pub k_histogram: BTreeMap<usize, usize>,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    // linear interpolation between order statistics
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let w = pos - lo as f64;
    sorted[lo] * (1.0 - w) + sorted[hi] * w
}

/// Equal-tailed interval at `level`.
pub fn credible_interval(values: &[f64], level: f64) -> Result<[f64; 2]> {
    if values.is_empty() {
        return Err(Error::Dimension("no values".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let a = (1.0 - level) / 2.0;
    Ok([quantile(&v, a), quantile(&v, 1.0 - a)])
}

pub fn summarize(trace: &McmcTrace, data: &ModelData) -> Result<ClusterSummary> {
    let (dahl, dahl_draw) = dahl_partition(trace)?;
    let clusters = dahl.clusters();
    let p = data.p();
    let mut sums = vec![vec![0.0; p]; clusters.len()];
    let mut counts = vec![0usize; clusters.len()];
    for d in &trace.draws {
        if Partition::from_labels(&d.labels) == dahl {
            for (k, members) in clusters.iter().enumerate() {
                let c = d.labels[members[0]];
                for (s, b) in sums[k].iter_mut().zip(&d.clusters[c].beta) {
                    *s += b;
                }
                counts[k] += 1;
            }
        }
    }
    // the Dahl draw itself always matches, so every count is positive
    let mean_curves = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| {
            let beta: Vec<f64> = s.iter().map(|v| v / c as f64).collect();
            data.fitted(&beta)
        })
        .collect();
    let phis: Vec<f64> = trace.draws.iter().map(|d| d.phi).collect();
    let mut k_histogram = BTreeMap::new();
    for d in &trace.draws {
        *k_histogram.entry(d.n_clusters()).or_insert(0) += 1;
    }
    Ok(ClusterSummary {
        dahl_labels: dahl.labels().to_vec(),
        dahl_draw,
        mean_curves,
        phi_ci: credible_interval(&phis, 0.95)?,
        phi_mean: phis.iter().sum::<f64>() / phis.len() as f64,
        k_histogram,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KmeansResult {
    pub partition: Partition,
    pub k: usize,
    pub calinski_harabasz: f64,
    /// Set when some restarts kept producing empty clusters.
    pub warning: Option<String>,
}

const KMEANS_RESTARTS: usize = 10;
const KMEANS_MAX_ITER: usize = 300;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lloyd iterations from a k-means++ start; `None` if a cluster empties.
fn lloyd<R: Rng + ?Sized>(rows: &[Vec<f64>], k: usize, rng: &mut R) -> Option<(Vec<usize>, f64)> {
    let n = rows.len();
    let mut centers: Vec<Vec<f64>> = vec![rows[rng.random_range(0..n)].clone()];
    while centers.len() < k {
        let d: Vec<f64> = rows
            .iter()
            .map(|r| centers.iter().map(|c| sq_dist(r, c)).fold(f64::INFINITY, f64::min))
            .collect();
        let total: f64 = d.iter().sum();
        if total <= 0.0 {
            return None;
        }
        let mut u = rng.random::<f64>() * total;
        let mut pick = n - 1;
        for (i, v) in d.iter().enumerate() {
            if u < *v {
                pick = i;
                break;
            }
            u -= v;
        }
        centers.push(rows[pick].clone());
    }
    let mut labels = vec![usize::MAX; n];
    for _ in 0..KMEANS_MAX_ITER {
        let mut changed = false;
        for (i, r) in rows.iter().enumerate() {
            let mut best = (f64::INFINITY, 0);
            for (c, ctr) in centers.iter().enumerate() {
                let d = sq_dist(r, ctr);
                if d < best.0 {
                    best = (d, c);
                }
            }
            if labels[i] != best.1 {
                labels[i] = best.1;
                changed = true;
            }
        }
        let t = rows[0].len();
        let mut sums = vec![vec![0.0; t]; k];
        let mut counts = vec![0usize; k];
        for (i, r) in rows.iter().enumerate() {
            counts[labels[i]] += 1;
            for (s, v) in sums[labels[i]].iter_mut().zip(r) {
                *s += v;
            }
        }
        if counts.contains(&0) {
            return None;
        }
        for c in 0..k {
            centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
        }
        if !changed {
            break;
        }
    }
    let wss = rows
        .iter()
        .enumerate()
        .map(|(i, r)| sq_dist(r, &centers[labels[i]]))
        .sum();
    Some((labels, wss))
}

/// `[B / (k-1)] / [W / (n-k)]`.
pub fn calinski_harabasz(rows: &[Vec<f64>], labels: &[usize]) -> f64 {
    let n = rows.len();
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let t = rows[0].len();
    let mean: Vec<f64> = (0..t).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let mut centers = vec![vec![0.0; t]; k];
    let mut counts = vec![0usize; k];
    for (r, &l) in rows.iter().zip(labels) {
        counts[l] += 1;
        for (c, v) in centers[l].iter_mut().zip(r) {
            *c += v;
        }
    }
    for (c, &m) in centers.iter_mut().zip(&counts) {
        for v in c.iter_mut() {
            *v /= m as f64;
        }
    }
    let between: f64 = centers
        .iter()
        .zip(&counts)
        .map(|(c, &m)| m as f64 * sq_dist(c, &mean))
        .sum();
    let within: f64 = rows.iter().zip(labels).map(|(r, &l)| sq_dist(r, &centers[l])).sum();
    if within <= 0.0 {
        return f64::INFINITY;
    }
    (between / (k - 1) as f64) / (within / (n - k) as f64)
}

/// Euclidean k-means on the raw curve rows, 10 restarts per `k`, with `k`
/// chosen by the Calinski-Harabasz index.
pub fn kmeans_baseline(curves: &CurveMatrix, k_range: &[usize], seed: u64) -> Result<KmeansResult> {
    let n = curves.n_regions();
    if k_range.is_empty() || k_range.iter().any(|&k| k < 2 || k >= n) {
        return Err(Error::Config(format!(
            "k range must lie within [2, {}]",
            n.saturating_sub(1)
        )));
    }
    let rows: Vec<Vec<f64>> = (0..n).map(|i| curves.row(i)).collect();
    let mut best: Option<KmeansResult> = None;
    let mut failures = Vec::new();
    for &k in k_range {
        let mut rng = stream(seed, "kmeans", &[k as u64]);
        let mut fit: Option<(Vec<usize>, f64)> = None;
        for _ in 0..KMEANS_RESTARTS {
            if let Some((labels, wss)) = lloyd(&rows, k, &mut rng) {
                if fit.as_ref().is_none_or(|f| wss < f.1) {
                    fit = Some((labels, wss));
                }
            }
        }
        let Some((labels, _)) = fit else {
            failures.push(k);
            continue;
        };
        let ch = calinski_harabasz(&rows, &labels);
        if best.as_ref().is_none_or(|b| ch > b.calinski_harabasz) {
            best = Some(KmeansResult {
                partition: Partition::from_labels(&labels),
                k,
                calinski_harabasz: ch,
                warning: None,
            });
        }
    }
    let warning = (!failures.is_empty())
        .then(|| format!("every restart left an empty cluster for k in {failures:?}"));
    match best {
        Some(mut b) => {
            if let Some(w) = &warning {
                log::warn!("{w}");
            }
            b.warning = warning;
            Ok(b)
        }
        None => {
            log::warn!("k-means failed for every k; returning a single cluster");
            Ok(KmeansResult {
                partition: Partition::from_labels(&vec![0; n]),
                k: 1,
                calinski_harabasz: f64::NAN,
                warning,
            })
        }
    }
}
