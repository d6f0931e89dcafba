//! Hierarchical model: parameters, priors and likelihood evaluations.
//!
//! For region `i` in cluster `c`,
//!
//! ```text
//! Y_i = ξ β_c + σ_c ε*_i,      vec(ε*) ~ N(0, (I - φA)^{-1} ⊗ I_T)
//! β_c | σ_c² ~ N(μ0, σ_c² Λ0^{-1}),   1/σ_c² ~ Gamma(ν0/2, rate = ν0 s0²/2)
//! φ ~ Unif(ℓ_A, u_A)
//! ```
//!
//! and the partition follows a geographically weighted CRP.

mod data;
pub(crate) mod likelihood;
pub(crate) mod posterior;
pub mod tilted;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use data::ModelData;
pub use likelihood::{
    car_offsets, new_cluster_marginal_loglik, per_state_density, phi_loglik, region_offset,
    standardized_residuals, state_conditional_loglik,
};
pub use posterior::{cluster_posterior, ClusterPosterior};

/// How a region's likelihood sees its neighbours inside the partition and
/// cluster-parameter updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LikelihoodForm {
    /// Exact CAR full conditional: `Y_i | rest ~ N(ξβ + σφ Σ_j A_ij ε*_j, σ²)`.
    #[default]
    Conditional,
    /// Drop the neighbour offset; cluster updates use only the within-cluster
    /// block of `I - φA`.
    Independence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub mu0: Vec<f64>,
    /// Row-major `p x p` prior precision scale.
    pub lambda0: Vec<f64>,
    pub nu0: f64,
    pub s0sq: f64,
    pub alpha: f64,
    pub h: f64,
}

impl Hyperparams {
    /// `μ0 = 0`, `Λ0 = 1e-6 I`, `ν0 = 0.01`, `s0 = 1`, `α = 1`.
    pub fn defaults(p: usize, h: f64) -> Self {
        Self::isotropic(p, 1e-6, 1e-2, 1.0, 1.0, h)
    }

    /// Unit-information prior on the data's own scale: `Λ0 = ξᵀξ / T`, so
    /// the β prior carries as much information as a single grid point, and
    /// `s0² = noise_var` (an external estimate of the residual variance).
    /// `μ0 = 0`, `ν0 = 0.01`, `α = 1`.
    pub fn unit_information(basis: &crate::curves::BasisSet, noise_var: f64, h: f64) -> Self {
        let p = basis.p;
        let xtx = basis.eval.transpose() * &basis.eval / basis.n_points() as f64;
        let mut lambda0 = vec![0.0; p * p];
        for r in 0..p {
            for c in 0..p {
                lambda0[r * p + c] = 0.5 * (xtx[(r, c)] + xtx[(c, r)]);
            }
        }
        Self {
            mu0: vec![0.0; p],
            lambda0,
            nu0: 1e-2,
            s0sq: noise_var,
            alpha: 1.0,
            h,
        }
    }

    pub fn isotropic(p: usize, lambda: f64, nu0: f64, s0sq: f64, alpha: f64, h: f64) -> Self {
        let mut lambda0 = vec![0.0; p * p];
        for k in 0..p {
            lambda0[k * p + k] = lambda;
        }
        Self {
            mu0: vec![0.0; p],
            lambda0,
            nu0,
            s0sq,
            alpha,
            h,
        }
    }

    pub fn p(&self) -> usize {
        self.mu0.len()
    }

    pub fn mu0_vec(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.mu0)
    }

    pub fn lambda0_mat(&self) -> DMatrix<f64> {
        let p = self.p();
        DMatrix::from_row_slice(p, p, &self.lambda0)
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.p();
        if p == 0 {
            return Err(Error::Config("hyperparameters need p >= 1".into()));
        }
        if self.lambda0.len() != p * p {
            return Err(Error::Config(format!(
                "lambda0 has {} entries, expected {}",
                self.lambda0.len(),
                p * p
            )));
        }
        let l = self.lambda0_mat();
        if (&l - l.transpose()).amax() > 1e-12 * l.amax().max(1.0) || l.cholesky().is_none() {
            return Err(Error::Config("lambda0 must be symmetric positive definite".into()));
        }
        for (name, v) in [("nu0", self.nu0), ("s0sq", self.s0sq), ("alpha", self.alpha)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.h >= 0.0 && self.h.is_finite()) {
            return Err(Error::Config(format!("h must be non-negative, got {}", self.h)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterParams {
    pub beta: Vec<f64>,
    pub sigma2: f64,
}

impl ClusterParams {
    pub fn new(beta: Vec<f64>, sigma2: f64) -> Result<Self> {
        if !(sigma2 > 0.0 && sigma2.is_finite()) || beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::Numeric(format!("invalid cluster parameters (sigma2 = {sigma2})")));
        }
        Ok(Self { beta, sigma2 })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma2.sqrt()
    }
}

/// Cluster labels canonicalized by order of first appearance.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Partition {
    labels: Vec<usize>,
}

impl Partition {
    pub fn from_labels(raw: &[usize]) -> Self {
        Self {
            labels: canonical_labels(raw).0,
        }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn n_clusters(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }

    /// Member lists, indexed by label.
    pub fn clusters(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_clusters()];
        for (i, &c) in self.labels.iter().enumerate() {
            out[c].push(i);
        }
        out
    }

    pub fn same_cluster(&self, i: usize, j: usize) -> bool {
        self.labels[i] == self.labels[j]
    }
}

/// Relabel by first appearance; also returns the old-to-new label map.
pub(crate) fn canonical_labels(raw: &[usize]) -> (Vec<usize>, Vec<Option<usize>>) {
    let max = raw.iter().max().map_or(0, |m| m + 1);
    let mut map = vec![None; max];
    let mut next = 0;
    let labels = raw
        .iter()
        .map(|&l| {
            *map[l].get_or_insert_with(|| {
                next += 1;
                next - 1
            })
        })
        .collect();
    (labels, map)
}

/// Partition, per-cluster parameters and CAR coupling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub labels: Vec<usize>,
    pub params: Vec<ClusterParams>,
    pub phi: f64,
}

impl ModelState {
    pub fn new(labels: Vec<usize>, params: Vec<ClusterParams>, phi: f64) -> Result<Self> {
        let s = Self { labels, params, phi };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.params.len();
        let mut seen = vec![false; k];
        for &l in &self.labels {
            if l >= k {
                return Err(Error::Dimension(format!("label {l} has no parameters ({k} clusters)")));
            }
            seen[l] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Dimension("state has an empty cluster".into()));
        }
        Ok(())
    }

    pub fn n_clusters(&self) -> usize {
        self.params.len()
    }

    pub fn partition(&self) -> Partition {
        Partition::from_labels(&self.labels)
    }

    pub fn params_of(&self, i: usize) -> &ClusterParams {
        &self.params[self.labels[i]]
    }

    pub fn members(&self, c: usize) -> Vec<usize> {
        (0..self.labels.len()).filter(|&i| self.labels[i] == c).collect()
    }

    /// Relabel clusters by first appearance, permuting `params` to match.
    pub fn canonicalize(&mut self) {
        let (labels, map) = canonical_labels(&self.labels);
        let mut params: Vec<Option<ClusterParams>> = vec![None; self.params.len()];
        for (old, new) in map.iter().enumerate() {
            if let Some(new) = new {
                params[*new] = Some(self.params[old].clone());
            }
        }
        self.labels = labels;
        self.params = params.into_iter().flatten().collect();
    }
}
