#![allow(dead_code)]

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scc_core::curves::{build_basis, CurveMatrix};
use scc_core::model::{
    new_cluster_marginal_loglik, standardized_residuals, state_conditional_loglik, ClusterParams,
    Hyperparams, LikelihoodForm, ModelData, ModelState,
};
use scc_core::spatial::AdjacencyGraph;
use statrs::function::gamma::ln_gamma;

pub fn ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("r{i}")).collect()
}

pub fn graph(n: usize, edges: &[(usize, usize)]) -> AdjacencyGraph {
    AdjacencyGraph::from_edges(ids(n), edges).unwrap()
}

pub fn path_edges(n: usize) -> Vec<(usize, usize)> {
    (1..n).map(|i| (i - 1, i)).collect()
}

pub fn cycle_edges(n: usize) -> Vec<(usize, usize)> {
    let mut e = path_edges(n);
    e.push((n - 1, 0));
    e
}

pub fn complete_edges(n: usize) -> Vec<(usize, usize)> {
    let mut e = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            e.push((i, j));
        }
    }
    e
}

/// Random positive curves normalized to unit row sums.
pub fn random_curves(n: usize, t: usize, seed: u64) -> CurveMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = DMatrix::from_fn(n, t, |_, _| 0.5 + rng.random::<f64>());
    CurveMatrix::from_unnormalized(ids(n), v).unwrap()
}

pub fn data(curves: CurveMatrix, p: usize, edges: &[(usize, usize)]) -> ModelData {
    let n = curves.n_regions();
    let t = curves.n_points();
    let order = p.min(4);
    let basis = build_basis(p, t, order).unwrap();
    ModelData::new(curves, basis, &graph(n, edges)).unwrap()
}

pub fn params(beta: &[f64], sigma2: f64) -> ClusterParams {
    ClusterParams::new(beta.to_vec(), sigma2).unwrap()
}

pub fn state(labels: &[usize], params: Vec<ClusterParams>, phi: f64) -> ModelState {
    ModelState::new(labels.to_vec(), params, phi).unwrap()
}

/// `I - φA` as a dense matrix.
pub fn precision(d: &ModelData, phi: f64) -> DMatrix<f64> {
    let n = d.n();
    DMatrix::identity(n, n) - d.graph.matrix() * phi
}

/// Log of the trapezoid integral of `exp(f)` sampled on a uniform grid.
pub fn log_trapz(logs: &[f64], h: f64) -> f64 {
    let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let last = logs.len() - 1;
    let s: f64 = logs
        .iter()
        .enumerate()
        .map(|(k, l)| {
            let w = if k == 0 || k == last { 0.5 } else { 1.0 };
            w * (l - m).exp()
        })
        .sum();
    m + (s * h).ln()
}

/// Quadrature over `(β, log σ)` of `N(Y_i | ξβ + σm, σ²I) G0(β, σ²)` for
/// `p = 1`.
pub fn quadrature_marginal(d: &ModelData, hyper: &Hyperparams, i: usize, m: &[f64]) -> f64 {
    let y = d.row(i);
    let xi: Vec<f64> = d.basis.eval.column(0).iter().copied().collect();
    let t = y.len() as f64;
    let (mu0, l0, nu0, s0sq) = (hyper.mu0[0], hyper.lambda0[0], hyper.nu0, hyper.s0sq);
    let log_density = |beta: f64, ls: f64| {
        let s = ls.exp();
        let mut q = 0.0;
        for k in 0..y.len() {
            let e = (y[k] - xi[k] * beta) / s - m[k];
            q += e * e;
        }
        let lik = -0.5 * t * (2.0 * PI).ln() - t * ls - 0.5 * q;
        let prior_beta = -0.5 * (2.0 * PI).ln() + 0.5 * l0.ln() - ls - 0.5 * l0 * (beta - mu0).powi(2) / (s * s);
        // 1/σ² = τ ~ Gamma(ν0/2, ν0 s0²/2); dτ = 2 τ d(-log σ)
        let tau = 1.0 / (s * s);
        let (sh, rate) = (nu0 / 2.0, nu0 * s0sq / 2.0);
        let prior_tau = sh * rate.ln() - ln_gamma(sh) + (sh - 1.0) * tau.ln() - rate * tau;
        lik + prior_beta + prior_tau + (2.0 * tau).ln()
    };
    let (nb, ns) = (1601, 1601);
    let (b_lo, b_hi) = (-3.0, 3.0);
    let (s_lo, s_hi) = (-9.0, 2.0);
    let hb = (b_hi - b_lo) / (nb - 1) as f64;
    let hs = (s_hi - s_lo) / (ns - 1) as f64;
    let inner: Vec<f64> = (0..ns)
        .map(|a| {
            let ls = s_lo + a as f64 * hs;
            let row: Vec<f64> = (0..nb).map(|b| log_density(b_lo + b as f64 * hb, ls)).collect();
            log_trapz(&row, hb)
        })
        .collect();
    log_trapz(&inner, hs)
}

/// Dense `log N(vec E; 0, (I - φA)^{-1} ⊗ I_T)` of the residual rows scaled
/// back to the data, i.e. the joint log density of `Y` up to the Jacobian.
pub fn dense_joint(d: &ModelData, st: &ModelState, phi: f64) -> f64 {
    let e = standardized_residuals(st, d).unwrap();
    let q = precision(d, phi);
    let n = d.n() as f64;
    let t = d.t() as f64;
    let logdet = q.clone().cholesky().unwrap().l().diagonal().iter().map(|v| 2.0 * v.ln()).sum::<f64>();
    let quad = (e.transpose() * &q * &e).trace();
    -0.5 * n * t * (2.0 * PI).ln() + 0.5 * t * logdet - 0.5 * quad
}

/// Step-2 probabilities under the classical CRP: cluster sizes times the
/// conditional likelihood, `α` times the new-cluster marginal.
pub fn classical_crp(i: usize, st: &ModelState, d: &ModelData, hyper: &Hyperparams) -> Vec<f64> {
    let form = LikelihoodForm::Conditional;
    let mut logs = Vec::new();
    for c in 0..st.n_clusters() {
        let n_c = st.labels.iter().enumerate().filter(|&(j, &l)| j != i && l == c).count();
        if n_c == 0 {
            continue;
        }
        let lik = state_conditional_loglik(i, st, &st.params[c], d, form).unwrap();
        logs.push((n_c as f64).ln() + lik);
    }
    logs.push(hyper.alpha.ln() + new_cluster_marginal_loglik(i, st, d, hyper, form).unwrap());
    let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logs.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}
