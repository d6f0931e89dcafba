use nalgebra::{DMatrix, DVector};

use crate::curves::{BasisSet, CurveMatrix};
use crate::error::{Error, Result};
use crate::spatial::{car_bounds, AdjacencyGraph, CarBounds};

/// Curves, basis and graph with the products every sweep reuses.
#[derive(Debug, Clone)]
pub struct ModelData {
    pub curves: CurveMatrix,
    pub basis: BasisSet,
    pub graph: AdjacencyGraph,
    pub bounds: CarBounds,
    /// Curve rows as contiguous vectors.
    pub(crate) rows: Vec<Vec<f64>>,
    /// `ξᵀξ`.
    pub(crate) xtx: DMatrix<f64>,
    /// Column `i` is `ξᵀ Y_i`.
    pub(crate) xty: DMatrix<f64>,
    /// `Y_i · Y_j`.
    pub(crate) yy: DMatrix<f64>,
}

impl ModelData {
    /// The graph is reordered to the curve region order.
    pub fn new(curves: CurveMatrix, basis: BasisSet, graph: &AdjacencyGraph) -> Result<Self> {
        if basis.n_points() != curves.n_points() {
            return Err(Error::Dimension(format!(
                "basis has {} grid points, curves have {}",
                basis.n_points(),
                curves.n_points()
            )));
        }
        let graph = graph.aligned_to(curves.region_ids())?;
        let bounds = car_bounds(&graph)?;
        let y = curves.values();
        let xi = &basis.eval;
        let rows = (0..y.nrows()).map(|i| y.row(i).iter().copied().collect()).collect();
        let xtx = xi.transpose() * xi;
        let xty = xi.transpose() * y.transpose();
        let yy = y * y.transpose();
        Ok(Self {
            curves,
            basis,
            graph,
            bounds,
            rows,
            xtx,
            xty,
            yy,
        })
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn t(&self) -> usize {
        self.basis.n_points()
    }

    pub fn p(&self) -> usize {
        self.basis.p
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i]
    }

    /// `ξ β` on the grid.
    pub fn fitted(&self, beta: &[f64]) -> Vec<f64> {
        self.basis.curve(beta)
    }

    pub(crate) fn xi_t(&self, v: &[f64]) -> DVector<f64> {
        self.basis.eval.tr_mul(&DVector::from_column_slice(v))
    }
}
