//! Orthonormalized B-spline basis on an equally spaced grid over `[0, 1]`.

use nalgebra::DMatrix;

use super::unit_grid;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct BasisSet {
    /// `T x p`; column `j` is basis function `j` evaluated on the grid.
    pub eval: DMatrix<f64>,
    pub p: usize,
    pub order: usize,
    /// Interior knot locations (excludes the repeated boundary knots).
    pub knots: Vec<f64>,
}

impl BasisSet {
    pub fn n_points(&self) -> usize {
        self.eval.nrows()
    }

    /// Grid spacing used by the discrete inner product.
    pub fn dt(&self) -> f64 {
        1.0 / (self.eval.nrows() - 1) as f64
    }

    /// `eval^T eval dt`; the identity for a valid basis.
    pub fn gram(&self) -> DMatrix<f64> {
        self.eval.transpose() * &self.eval * self.dt()
    }

    /// Curve `eval * coef` on the grid.
    pub fn curve(&self, coef: &[f64]) -> Vec<f64> {
        (0..self.eval.nrows())
            .map(|t| {
                self.eval
                    .row(t)
                    .iter()
                    .zip(coef)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect()
    }
}

/// Cox-de Boor evaluation of all `n_basis` B-splines of `order` at `x`.
fn bspline_row(x: f64, full_knots: &[f64], order: usize, n_basis: usize) -> Vec<f64> {
    // locate span; the right boundary belongs to the last non-degenerate span
    let last = full_knots.len() - order - 1;
    let mut span = order - 1;
    while span < last && x >= full_knots[span + 1] {
        span += 1;
    }
    let mut vals = vec![0.0; full_knots.len() - 1];
    vals[span] = 1.0;
    for k in 2..=order {
        let mut next = vec![0.0; full_knots.len() - 1];
        for i in 0..full_knots.len() - k {
            let mut v = 0.0;
            let d1 = full_knots[i + k - 1] - full_knots[i];
            if d1 > 0.0 {
                v += (x - full_knots[i]) / d1 * vals[i];
            }
            let d2 = full_knots[i + k] - full_knots[i + 1];
            if d2 > 0.0 {
                v += (full_knots[i + k] - x) / d2 * vals[i + 1];
            }
            next[i] = v;
        }
        vals = next;
    }
    vals.truncate(n_basis);
    vals
}

/// Build `p` B-splines of the given `order` (order 4 is cubic) with
/// `p - order` equally spaced interior knots, then orthonormalize them under
/// the discrete inner product `<f, g> = sum_t f(t) g(t) dt`, `dt = 1/(T-1)`,
/// through a Cholesky factor of the Gram matrix.
pub fn build_basis(p: usize, t: usize, order: usize) -> Result<BasisSet> {
    if p == 0 || order == 0 {
        return Err(Error::Domain("basis size and order must be positive".into()));
    }
    if p < order {
        return Err(Error::Domain(format!(
            "basis size {p} is smaller than spline order {order}"
        )));
    }
    if t <= p {
        return Err(Error::Rank(format!(
            "grid of {t} points cannot support {p} basis functions"
        )));
    }
    let n_interior = p - order;
    let knots: Vec<f64> = (1..=n_interior)
        .map(|k| k as f64 / (n_interior + 1) as f64)
        .collect();
    let mut full = vec![0.0; order];
    full.extend(&knots);
    full.extend(std::iter::repeat_n(1.0, order));

    let grid = unit_grid(t);
    let mut raw = DMatrix::zeros(t, p);
    for (r, &x) in grid.iter().enumerate() {
        for (j, v) in bspline_row(x, &full, order, p).into_iter().enumerate() {
            raw[(r, j)] = v;
        }
    }

    let dt = 1.0 / (t - 1) as f64;
    let gram = raw.transpose() * &raw * dt;
    let chol = gram
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Rank("B-spline Gram matrix is singular on this grid".into()))?;
    let l = chol.l();
    let min_pivot = l.diagonal().iter().cloned().fold(f64::INFINITY, f64::min);
    let max_pivot = l.diagonal().iter().cloned().fold(0.0, f64::max);
    if min_pivot <= 1e-7 * max_pivot {
        return Err(Error::Rank(format!(
            "B-spline Gram matrix is numerically singular (pivot ratio {:.3e})",
            min_pivot / max_pivot
        )));
    }
    // eval = raw L^{-T}  <=>  L eval^T = raw^T
    let eval_t = l
        .solve_lower_triangular(&raw.transpose())
        .ok_or_else(|| Error::Rank("triangular solve failed".into()))?;
    Ok(BasisSet {
        eval: eval_t.transpose(),
        p,
        order,
        knots,
    })
}
