//! Region adjacency, hop distances, geographic weights and the CAR support.

use std::collections::{HashMap, VecDeque};
use std::io::Read;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Symmetric 0/1 adjacency with zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyGraph {
    adj: DMatrix<f64>,
    neighbors: Vec<Vec<usize>>,
    region_ids: Vec<String>,
}

impl AdjacencyGraph {
    pub fn from_matrix(region_ids: Vec<String>, adj: DMatrix<f64>) -> Result<Self> {
        let n = region_ids.len();
        if adj.shape() != (n, n) {
            return Err(Error::Dimension(format!(
                "adjacency is {:?} for {n} regions",
                adj.shape()
            )));
        }
        for i in 0..n {
            if adj[(i, i)] != 0.0 {
                return Err(Error::Format(format!(
                    "region {} is adjacent to itself",
                    region_ids[i]
                )));
            }
            for j in 0..n {
                let v = adj[(i, j)];
                if v != 0.0 && v != 1.0 {
                    return Err(Error::Format(format!("adjacency entry ({i},{j}) = {v} is not 0/1")));
                }
                if v != adj[(j, i)] {
                    return Err(Error::Format(format!(
                        "adjacency is not symmetric between {} and {}",
                        region_ids[i], region_ids[j]
                    )));
                }
            }
        }
        let neighbors = (0..n)
            .map(|i| (0..n).filter(|&j| adj[(i, j)] == 1.0).collect())
            .collect();
        Ok(Self {
            adj,
            neighbors,
            region_ids,
        })
    }

    pub fn from_edges(region_ids: Vec<String>, edges: &[(usize, usize)]) -> Result<Self> {
        let n = region_ids.len();
        let mut adj = DMatrix::zeros(n, n);
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::Dimension(format!("edge ({a},{b}) out of range for {n} regions")));
            }
            if a == b {
                return Err(Error::Format(format!("self loop on region {}", region_ids[a])));
            }
            adj[(a, b)] = 1.0;
            adj[(b, a)] = 1.0;
        }
        Self::from_matrix(region_ids, adj)
    }

    /// Parse either an edge list (`region_a,region_b`) or a square 0/1 matrix
    /// whose header row lists the regions (an optional leading label column
    /// is allowed). `order` fixes region ordering and admits isolated regions
    /// absent from an edge list.
    pub fn read_csv<R: Read>(reader: R, order: Option<&[String]>) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(reader);
        let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let records: Vec<csv::StringRecord> = rdr.records().collect::<std::result::Result<_, _>>()?;

        if headers.len() == 2 && headers[0] == "region_a" && headers[1] == "region_b" {
            let mut ids: Vec<String> = order.map(<[String]>::to_vec).unwrap_or_default();
            let mut index: HashMap<String, usize> =
                ids.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
            let mut edges = Vec::with_capacity(records.len());
            for rec in &records {
                let mut ends = [0usize; 2];
                for (k, end) in ends.iter_mut().enumerate() {
                    let id = rec.get(k).unwrap_or("").to_string();
                    *end = match index.get(&id) {
                        Some(&i) => i,
                        None if order.is_some() => {
                            return Err(Error::Format(format!("edge names unknown region `{id}`")))
                        }
                        None => {
                            ids.push(id.clone());
                            index.insert(id, ids.len() - 1);
                            ids.len() - 1
                        }
                    };
                }
                edges.push((ends[0], ends[1]));
            }
            return Self::from_edges(ids, &edges);
        }

        let labelled = matches!(headers.first().map(String::as_str), Some("" | "region_id"));
        let ids: Vec<String> = headers.iter().skip(usize::from(labelled)).cloned().collect();
        let n = ids.len();
        if records.len() != n {
            return Err(Error::Format(format!(
                "adjacency matrix has {} rows for {n} regions",
                records.len()
            )));
        }
        let mut adj = DMatrix::zeros(n, n);
        for (i, rec) in records.iter().enumerate() {
            if labelled && rec.get(0) != Some(ids[i].as_str()) {
                return Err(Error::Format(format!(
                    "adjacency row {i} is labelled `{}`, expected `{}`",
                    rec.get(0).unwrap_or(""),
                    ids[i]
                )));
            }
            let cells: Vec<&str> = rec.iter().skip(usize::from(labelled)).collect();
            if cells.len() != n {
                return Err(Error::Format(format!("adjacency row {i} has {} cells", cells.len())));
            }
            for (j, c) in cells.iter().enumerate() {
                adj[(i, j)] = c
                    .parse::<f64>()
                    .map_err(|_| Error::Format(format!("bad adjacency cell `{c}`")))?;
            }
        }
        let g = Self::from_matrix(ids, adj)?;
        match order {
            Some(o) => g.aligned_to(o),
            None => Ok(g),
        }
    }

    /// Edge list with a `region_a,region_b` header, one row per edge.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["region_a", "region_b"])?;
        let ids = self.region_ids();
        for i in 0..self.n() {
            for &j in self.neighbors(i) {
                if i < j {
                    w.write_record([ids[i].as_str(), ids[j].as_str()])?;
                }
            }
        }
        w.flush().map_err(|e| Error::io("<adjacency csv>", e))?;
        Ok(())
    }

    pub fn load(path: &Path, order: Option<&[String]>) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(file, order)
    }

    /// Reorder regions to `order`, which must be a permutation of the ids.
    pub fn aligned_to(&self, order: &[String]) -> Result<Self> {
        if order.len() != self.n() {
            return Err(Error::Dimension(format!(
                "{} curve regions but {} graph regions",
                order.len(),
                self.n()
            )));
        }
        let index: HashMap<&str, usize> = self
            .region_ids
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i))
            .collect();
        let perm: Vec<usize> = order
            .iter()
            .map(|id| {
                index
                    .get(id.as_str())
                    .copied()
                    .ok_or_else(|| Error::Format(format!("region `{id}` missing from adjacency")))
            })
            .collect::<Result<_>>()?;
        let n = self.n();
        let adj = DMatrix::from_fn(n, n, |i, j| self.adj[(perm[i], perm[j])]);
        Self::from_matrix(order.to_vec(), adj)
    }

    pub fn n(&self) -> usize {
        self.region_ids.len()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.adj
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn region_ids(&self) -> &[String] {
        &self.region_ids
    }

    pub fn n_edges(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Adjacency restricted to `members` (in the given order).
    pub fn submatrix(&self, members: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(members.len(), members.len(), |a, b| {
            self.adj[(members[a], members[b])]
        })
    }
}

/// Hop counts between regions; `f64::INFINITY` for disconnected pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    pub d: DMatrix<f64>,
}

/// Unit-weight shortest paths. Dijkstra with unit edges reduces to BFS.
pub fn graph_distances(graph: &AdjacencyGraph) -> DistanceMatrix {
    let n = graph.n();
    let mut d = DMatrix::from_element(n, n, f64::INFINITY);
    let mut queue = VecDeque::new();
    for s in 0..n {
        d[(s, s)] = 0.0;
        queue.clear();
        queue.push_back(s);
        while let Some(u) = queue.pop_front() {
            let du = d[(s, u)];
            for &v in graph.neighbors(u) {
                if d[(s, v)].is_infinite() {
                    d[(s, v)] = du + 1.0;
                    queue.push_back(v);
                }
            }
        }
    }
    DistanceMatrix { d }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    pub w: DMatrix<f64>,
    pub h: f64,
}

/// `w_ij = 1` when `d_ij <= 1`, else `exp(-d_ij h)`. Disconnected pairs get
/// weight 1 at `h = 0` and 0 otherwise.
pub fn weight_matrix(dist: &DistanceMatrix, h: f64) -> Result<WeightMatrix> {
    if !(h >= 0.0) || !h.is_finite() {
        return Err(Error::Domain(format!("h must be finite and non-negative, got {h}")));
    }
    let w = dist.d.map(|d| {
        if d <= 1.0 || h == 0.0 {
            1.0
        } else if d.is_infinite() {
            0.0
        } else {
            (-d * h).exp()
        }
    });
    Ok(WeightMatrix { w, h })
}

/// Support `(ell_a, u_a)` of the CAR coupling, with the cached spectrum of A.
#[derive(Debug, Clone, PartialEq)]
pub struct CarBounds {
    pub ell_a: f64,
    pub u_a: f64,
    pub eigenvalues: Vec<f64>,
}

const EIGEN_REL_TOL: f64 = 1e-10;

pub fn car_bounds(graph: &AdjacencyGraph) -> Result<CarBounds> {
    if graph.n_edges() == 0 {
        return Err(Error::DegenerateSpectrum);
    }
    let eig = SymmetricEigen::new(graph.matrix().clone());
    let mut eigenvalues: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    eigenvalues.sort_by(f64::total_cmp);
    let lmin = eigenvalues[0];
    let lmax = *eigenvalues.last().unwrap();
    let scale = lmax.abs().max(lmin.abs());
    if lmax <= EIGEN_REL_TOL * scale || lmin >= -EIGEN_REL_TOL * scale {
        return Err(Error::DegenerateSpectrum);
    }
    Ok(CarBounds {
        ell_a: 1.0 / lmin,
        u_a: 1.0 / lmax,
        eigenvalues,
    })
}

impl CarBounds {
    pub fn contains(&self, phi: f64) -> bool {
        phi > self.ell_a && phi < self.u_a
    }

    pub fn check(&self, phi: f64) -> Result<()> {
        if self.contains(phi) {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "phi = {phi} outside CAR support ({}, {})",
                self.ell_a, self.u_a
            )))
        }
    }

    pub fn width(&self) -> f64 {
        self.u_a - self.ell_a
    }
}

/// `log det(I - phi A)` from the cached spectrum.
pub fn car_log_det(bounds: &CarBounds, phi: f64) -> Result<f64> {
    bounds.check(phi)?;
    let mut s = 0.0;
    for &l in &bounds.eigenvalues {
        let v = 1.0 - phi * l;
        if v <= 0.0 {
            return Err(Error::Domain(format!("I - phi A not positive definite at phi = {phi}")));
        }
        s += v.ln();
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("r{i}")).collect()
    }

    fn path(n: usize) -> AdjacencyGraph {
        let edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        AdjacencyGraph::from_edges(ids(n), &edges).unwrap()
    }

    fn cycle(n: usize) -> AdjacencyGraph {
        let edges: Vec<_> = (0..n).map(|i| (i, (i + 1) % n)).collect();
        AdjacencyGraph::from_edges(ids(n), &edges).unwrap()
    }

    #[test]
    fn path_distances() {
        let d = graph_distances(&path(3));
        assert_eq!(d.d[(0, 2)], 2.0);
        for i in 0..3 {
            assert_eq!(d.d[(i, i)], 0.0);
        }
    }

    #[test]
    fn disconnected_components() {
        let g = AdjacencyGraph::from_edges(ids(4), &[(0, 1), (2, 3)]).unwrap();
        let d = graph_distances(&g);
        assert!(d.d[(0, 2)].is_infinite());
        assert_eq!(weight_matrix(&d, 0.5).unwrap().w[(0, 2)], 0.0);
        assert_eq!(weight_matrix(&d, 0.0).unwrap().w[(0, 2)], 1.0);
    }

    #[test]
    fn weights() {
        let d = graph_distances(&path(3));
        let w = weight_matrix(&d, 0.5).unwrap();
        assert_eq!(w.w[(0, 1)], 1.0);
        assert!((w.w[(0, 2)] - (-1.0f64).exp()).abs() < 1e-15);
        assert!((w.w[(0, 2)] - 0.367879).abs() < 1e-6);
        let w0 = weight_matrix(&d, 0.0).unwrap();
        assert!(w0.w.iter().all(|&v| v == 1.0));
        assert!(weight_matrix(&d, -0.1).is_err());
    }

    #[test]
    fn single_edge_bounds() {
        let b = car_bounds(&path(2)).unwrap();
        assert!((b.ell_a + 1.0).abs() < 1e-12);
        assert!((b.u_a - 1.0).abs() < 1e-12);
        let ld = car_log_det(&b, 0.5).unwrap();
        assert!((ld - 0.75f64.ln()).abs() < 1e-14);
        assert_eq!(car_log_det(&b, 0.0).unwrap(), 0.0);
        assert!(car_log_det(&b, 1.0).is_err());
    }

    #[test]
    fn four_cycle_bounds() {
        let b = car_bounds(&cycle(4)).unwrap();
        assert!((b.ell_a + 0.5).abs() < 1e-12);
        assert!((b.u_a - 0.5).abs() < 1e-12);
    }

    #[test]
    fn edgeless_graph_rejected() {
        let g = AdjacencyGraph::from_edges(ids(3), &[]).unwrap();
        assert!(matches!(car_bounds(&g), Err(Error::DegenerateSpectrum)));
    }

    #[test]
    fn asymmetric_matrix_rejected() {
        let csv = "region_id,a,b\na,0,1\nb,0,0\n";
        assert!(AdjacencyGraph::read_csv(csv.as_bytes(), None).is_err());
    }

    #[test]
    fn matrix_and_edge_list_agree() {
        let m = "a,b,c\n0,1,0\n1,0,1\n0,1,0\n";
        let e = "region_a,region_b\na,b\nc,b\n";
        let gm = AdjacencyGraph::read_csv(m.as_bytes(), None).unwrap();
        let ge = AdjacencyGraph::read_csv(e.as_bytes(), None).unwrap();
        let order: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        assert_eq!(gm, ge.aligned_to(&order).unwrap());
    }
}
