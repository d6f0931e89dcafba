use nalgebra::{DMatrix, SymmetricEigen};

use super::CurveMatrix;
use crate::error::{Error, Result};

/// Eigenvalues (descending, clipped at zero) of the empirical covariance of
/// the centered gridded curves.
///
/// Computed from the `n x n` Gram matrix of centered rows, which shares its
/// nonzero spectrum with the `T x T` covariance.
pub fn fpca_eigenvalues(curves: &CurveMatrix) -> Result<Vec<f64>> {
    let y = curves.values();
    let n = y.nrows();
    if n < 2 {
        return Err(Error::DegenerateData("FPCA needs at least two curves".into()));
    }
    let mean = y.row_mean();
    let mut centered = y.clone();
    for mut row in centered.row_iter_mut() {
        row -= &mean;
    }
    let gram: DMatrix<f64> = &centered * centered.transpose() / (n - 1) as f64;
    let mut ev: Vec<f64> = SymmetricEigen::new(gram)
        .eigenvalues
        .iter()
        .map(|v| v.max(0.0))
        .collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    Ok(ev)
}

/// `1 + p'` where `p'` is the fewest leading components whose share of the
/// total variance reaches `fve_threshold`.
pub fn fpca_select_p(curves: &CurveMatrix, fve_threshold: f64) -> Result<usize> {
    if !(fve_threshold > 0.0 && fve_threshold < 1.0) {
        return Err(Error::Domain(format!(
            "fve threshold must lie in (0, 1), got {fve_threshold}"
        )));
    }
    let ev = fpca_eigenvalues(curves)?;
    let total: f64 = ev.iter().sum();
    let scale = ev.first().copied().unwrap_or(0.0);
    if total <= 0.0 || scale <= 1e-300 {
        return Err(Error::DegenerateData("curves have zero total variance".into()));
    }
    // eigenvalues below round-off are not components
    let rank = ev.iter().filter(|&&v| v > scale * 1e-12).count();
    let mut acc = 0.0;
    for (k, v) in ev.iter().take(rank).enumerate() {
        acc += v;
        if acc / total >= fve_threshold {
            return Ok(k + 2);
        }
    }
    Ok(rank + 1)
}

/// White-noise variance of the curves, estimated as the average gap between
/// the covariance diagonal and the mean of its two neighbouring
/// off-diagonal entries. Smooth signal contributes almost equally to both;
/// independent noise only to the diagonal. Clipped at zero.
pub fn fpca_noise_variance(curves: &CurveMatrix) -> Result<f64> {
    let y = curves.values();
    let (n, t) = (y.nrows(), y.ncols());
    if n < 2 || t < 3 {
        return Err(Error::DegenerateData(
            "noise estimate needs at least two curves and three grid points".into(),
        ));
    }
    let mean = y.row_mean();
    let mut gap = 0.0;
    for i in 0..n {
        for k in 1..t - 1 {
            let c = |j: usize| y[(i, j)] - mean[j];
            gap += c(k) * c(k) - 0.5 * c(k) * (c(k - 1) + c(k + 1));
        }
    }
    Ok((gap / ((n - 1) * (t - 2)) as f64).max(0.0))
}

/// Like [`fpca_select_p`], but with the estimated white-noise variance
/// removed from every eigenvalue and from the total before the variance
/// fractions are formed. Raw noisy curves otherwise spread their variance
/// over as many components as there are curves.
pub fn fpca_select_p_denoised(curves: &CurveMatrix, fve_threshold: f64) -> Result<usize> {
    if !(fve_threshold > 0.0 && fve_threshold < 1.0) {
        return Err(Error::Domain(format!(
            "fve threshold must lie in (0, 1), got {fve_threshold}"
        )));
    }
    let ev = fpca_eigenvalues(curves)?;
    let noise = fpca_noise_variance(curves)?;
    let total = ev.iter().sum::<f64>() - noise * curves.n_points() as f64;
    if total <= 0.0 {
        return Err(Error::DegenerateData(
            "curve variance is indistinguishable from noise".into(),
        ));
    }
    let mut acc = 0.0;
    for (k, v) in ev.iter().enumerate() {
        acc += v - noise;
        if acc / total >= fve_threshold {
            return Ok(k + 2);
        }
    }
    Ok(ev.len() + 1)
}
