//! Conjugate update for one cluster's `(β, σ²)`.
//!
//! Within the cluster the standardized residuals have precision
//! `Q_SS = I - φ A_SS`, which gives the Normal-Inverse-Gamma quantities
//!
//! ```text
//! a_n = (T |S| + ν0) / 2
//! Λ_n = (1ᵀ Q_SS 1) ξᵀξ + Λ0
//! μ_n = Λ_n^{-1} (ξᵀ Y_S Q_SS 1 + Λ0 μ0)
//! b_n = (ν0 s0² + μ0ᵀΛ0μ0 + tr(Y_Sᵀ Y_S Q_SS) - μ_nᵀ Λ_n μ_n) / 2
//! ```
//!
//! Neighbours outside the cluster add a term linear in `u = 1/σ`:
//! with `m_i = φ Σ_{j∉S} A_ij ε*_j` and `M = Σ_{i∈S} m_i`,
//! `u` follows the tilted Gamma law with `c = Σ_i Y_i·m_i - μ_nᵀ ξᵀM`, and
//! `β | u ~ N(μ_n - Λ_n^{-1} ξᵀM / u, Λ_n^{-1} / u²)`. Without outside
//! offsets `c = 0` and `1/σ² ~ Gamma(a_n, b_n)` exactly.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;
use statrs::function::gamma::ln_gamma;

use super::tilted::{log_tilted_integral, sample_tilted};
use super::{ClusterParams, Hyperparams, ModelData};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct ClusterPosterior {
    pub a_n: f64,
    pub b_n: f64,
    pub mu_n: DVector<f64>,
    pub lambda_n: DMatrix<f64>,
    /// Linear tilt on `u = 1/σ` from outside neighbours.
    pub tilt: f64,
    /// `Λ_n^{-1} ξᵀ M`.
    pub shift: DVector<f64>,
    /// `ξᵀ M`.
    pub xtm: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
}

/// Posterior of one cluster's parameters given its members.
///
/// `offsets`, when given, holds `m_i` (already multiplied by `φ`) for each
/// member in the order of `members`.
pub fn cluster_posterior(
    data: &ModelData,
    hyper: &Hyperparams,
    members: &[usize],
    phi: f64,
    offsets: Option<&[Vec<f64>]>,
) -> Result<ClusterPosterior> {
    if members.is_empty() {
        return Err(Error::Dimension("cluster posterior of an empty cluster".into()));
    }
    let p = data.p();
    let t = data.t();
    let lambda0 = hyper.lambda0_mat();
    let mu0 = hyper.mu0_vec();

    let mut in_cluster = vec![false; data.n()];
    for &i in members {
        in_cluster[i] = true;
    }
    // Q_SS 1 and tr(Y_Sᵀ Y_S Q_SS)
    let mut q1 = 0.0;
    let mut xt_yq = DVector::zeros(p);
    let mut tr = 0.0;
    for &i in members {
        let inner: Vec<usize> = data
            .graph
            .neighbors(i)
            .iter()
            .copied()
            .filter(|&j| in_cluster[j])
            .collect();
        let w = 1.0 - phi * inner.len() as f64;
        q1 += w;
        xt_yq.axpy(w, &data.xty.column(i), 1.0);
        tr += data.yy[(i, i)] - phi * inner.iter().map(|&j| data.yy[(i, j)]).sum::<f64>();
    }

    let lambda_n = &data.xtx * q1 + &lambda0;
    let chol = lambda_n.clone().cholesky().ok_or_else(|| {
        Error::Numeric(format!("Λ_n not positive definite (1ᵀQ1 = {q1}, φ = {phi})"))
    })?;
    let mu_n = chol.solve(&(xt_yq + &lambda0 * &mu0));
    let a_n = (t as f64 * members.len() as f64 + hyper.nu0) / 2.0;
    let b_n = 0.5
        * (hyper.nu0 * hyper.s0sq + mu0.dot(&(&lambda0 * &mu0)) + tr
            - mu_n.dot(&(&lambda_n * &mu_n)));
    if !(b_n > 0.0 && b_n.is_finite()) {
        return Err(Error::Numeric(format!("b_n = {b_n} is not positive")));
    }

    let (tilt, xtm) = match offsets {
        Some(offs) if offs.iter().any(|m| m.iter().any(|&v| v != 0.0)) => {
            if offs.len() != members.len() {
                return Err(Error::Dimension("one offset per member required".into()));
            }
            let mut big_m = vec![0.0; t];
            let mut ym = 0.0;
            for (&i, m) in members.iter().zip(offs) {
                let y = data.row(i);
                for k in 0..t {
                    big_m[k] += m[k];
                    ym += y[k] * m[k];
                }
            }
            let xtm = data.xi_t(&big_m);
            (ym - mu_n.dot(&xtm), xtm)
        }
        _ => (0.0, DVector::zeros(p)),
    };
    let shift = if tilt == 0.0 && xtm.iter().all(|&v| v == 0.0) {
        DVector::zeros(p)
    } else {
        chol.solve(&xtm)
    };
    Ok(ClusterPosterior {
        a_n,
        b_n,
        mu_n,
        lambda_n,
        tilt,
        shift,
        xtm,
        chol,
    })
}

impl ClusterPosterior {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ClusterParams> {
        let u = sample_tilted(self.a_n, self.b_n, self.tilt, rng)?;
        let p = self.mu_n.len();
        let z = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
        // L^{-T} z has covariance Λ_n^{-1}
        let noise = self
            .chol
            .l()
            .transpose()
            .solve_upper_triangular(&z)
            .ok_or_else(|| Error::Numeric("triangular solve failed".into()))?;
        let beta = &self.mu_n - &self.shift / u + noise / u;
        ClusterParams::new(beta.iter().copied().collect(), 1.0 / (u * u))
    }

    /// `log det Λ_n`.
    pub fn log_det_lambda_n(&self) -> f64 {
        2.0 * self.chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    /// `ξᵀM · Λ_n^{-1} ξᵀM`.
    pub fn offset_quadratic(&self) -> f64 {
        self.xtm.dot(&self.shift)
    }
}

/// `log ∫ N(Y_i | offset, β, σ²) dG0(β, σ²)` for a region forming a cluster
/// of its own, given its offset `m` (already scaled by `φ`).
pub(crate) fn singleton_log_marginal(
    data: &ModelData,
    hyper: &Hyperparams,
    i: usize,
    offset: Option<&[f64]>,
) -> Result<f64> {
    let offs = offset.map(|m| vec![m.to_vec()]);
    let post = cluster_posterior(data, hyper, &[i], 0.0, offs.as_deref())?;
    let t = data.t() as f64;
    let nu0 = hyper.nu0;
    let lambda0_logdet = hyper
        .lambda0_mat()
        .cholesky()
        .ok_or_else(|| Error::Numeric("Λ0 not positive definite".into()))?
        .l()
        .diagonal()
        .iter()
        .map(|d| 2.0 * d.ln())
        .sum::<f64>();
    let m_sq: f64 = offset.map_or(0.0, |m| m.iter().map(|v| v * v).sum());
    let log_j = if post.tilt == 0.0 {
        ln_gamma(post.a_n) - std::f64::consts::LN_2 - post.a_n * post.b_n.ln()
    } else {
        log_tilted_integral(post.a_n, post.b_n, post.tilt)?
    };
    Ok(-0.5 * t * (2.0 * std::f64::consts::PI).ln()
        + 0.5 * (lambda0_logdet - post.log_det_lambda_n())
        + 0.5 * nu0 * (nu0 * hyper.s0sq / 2.0).ln()
        - ln_gamma(nu0 / 2.0)
        + std::f64::consts::LN_2
        - 0.5 * m_sq
        + 0.5 * post.offset_quadratic()
        + log_j)
}
