//! Synthetic datasets with known partitions.
//!
//! Two schemes are provided. The first draws curves from the model itself
//! around three normalized Beta-shaped templates with CAR noise. The second
//! integrates a daily SIR model per region with cluster-specific infection
//! rates and piecewise-constant recovery rates, then adds observation noise.
//! Regions, populations and the two partition templates ship with the crate.

use std::io::Write;
use std::path::Path;

use chrono::NaiveDate;
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::curves::{unit_grid, CurveMatrix};
use crate::error::{Error, Result};
use crate::model::Partition;
use crate::spatial::{car_bounds, AdjacencyGraph};

const US_ADJACENCY: &str = include_str!("../data/us_states_adjacency.csv");
const US_POPULATION: &str = include_str!("../data/us_states_population_2020.csv");
const STRUCTURE_1: &str = include_str!("../data/structure1.csv");
const STRUCTURE_2: &str = include_str!("../data/structure2.csv");

/// Number of grid points of the simulated curves.
pub const SIM_T: usize = 98;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Structure {
    /// One cluster made of two non-adjacent blocks.
    First,
    /// Three contiguous clusters.
    Second,
}

/// Regions with their graph, populations and partition templates.
#[derive(Debug, Clone)]
pub struct SimRegions {
    pub graph: AdjacencyGraph,
    pub populations: Vec<u64>,
    pub structure1: Partition,
    pub structure2: Partition,
}

fn read_labels(text: &str, order: &[String]) -> Result<Partition> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let mut map = std::collections::HashMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let id = rec.get(0).unwrap_or("").to_string();
        let c: usize = rec
            .get(1)
            .unwrap_or("")
            .parse()
            .map_err(|_| Error::Format(format!("bad cluster label for {id}")))?;
        map.insert(id, c);
    }
    let raw: Vec<usize> = order
        .iter()
        .map(|id| {
            map.get(id)
                .copied()
                .ok_or_else(|| Error::Format(format!("template lacks region {id}")))
        })
        .collect::<Result<_>>()?;
    Ok(Partition::from_labels(&raw))
}

/// Read a `region_id,true_cluster` file aligned to `order`.
pub fn load_labels(path: &Path, order: &[String]) -> Result<Partition> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    read_labels(&text, order)
}

impl SimRegions {
    /// The 50 US states plus DC, in alphabetical order of postal code.
    pub fn us_states() -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(US_POPULATION.as_bytes());
        let mut ids = Vec::new();
        let mut populations = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            ids.push(rec.get(0).unwrap_or("").to_string());
            populations.push(
                rec.get(1)
                    .unwrap_or("")
                    .parse()
                    .map_err(|_| Error::Format("bad population".into()))?,
            );
        }
        let graph = AdjacencyGraph::read_csv(US_ADJACENCY.as_bytes(), Some(&ids))?;
        let structure1 = read_labels(STRUCTURE_1, &ids)?;
        let structure2 = read_labels(STRUCTURE_2, &ids)?;
        Ok(Self {
            graph,
            populations,
            structure1,
            structure2,
        })
    }

    pub fn template(&self, s: Structure) -> &Partition {
        match s {
            Structure::First => &self.structure1,
            Structure::Second => &self.structure2,
        }
    }

    pub fn region_ids(&self) -> &[String] {
        self.graph.region_ids()
    }
}

/// `n x T` draws whose columns are independent `N(0, (I - φA)^{-1})`.
///
/// With `Q = I - φA = L Lᵀ`, `x = L^{-T} z` has covariance `Q^{-1}`.
pub fn sample_car_noise<R: Rng + ?Sized>(
    graph: &AdjacencyGraph,
    phi: f64,
    t: usize,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let n = graph.n();
    let q = DMatrix::identity(n, n) - graph.matrix() * phi;
    let chol = q.cholesky().ok_or_else(|| {
        Error::Domain(format!("I - phi A is not positive definite at phi = {phi}"))
    })?;
    let z = DMatrix::from_fn(n, t, |_, _| rng.sample::<f64, _>(StandardNormal));
    chol.l()
        .transpose()
        .solve_upper_triangular(&z)
        .ok_or_else(|| Error::Numeric("triangular solve failed".into()))
}

/// Templates `t(1-t)^3.5`, `t(1-t)^2.5`, `t³(1-t)²`, each summing to one on
/// the grid.
pub fn scheme1_templates(t: usize) -> Vec<Vec<f64>> {
    let grid = unit_grid(t);
    let shapes: [fn(f64) -> f64; 3] = [
        |x| x * (1.0 - x).powf(3.5),
        |x| x * (1.0 - x).powf(2.5),
        |x| x.powi(3) * (1.0 - x).powi(2),
    ];
    shapes
        .iter()
        .map(|f| {
            let v: Vec<f64> = grid.iter().map(|&x| f(x)).collect();
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scheme1Config {
    pub structure: Structure,
    pub phi: f64,
    pub sigma2: f64,
}

impl Scheme1Config {
    pub fn validate(&self, graph: &AdjacencyGraph) -> Result<()> {
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return Err(Error::Config(format!("sigma2 must be positive, got {}", self.sigma2)));
        }
        car_bounds(graph)?.check(self.phi)
    }
}

/// Model-based curves around the three templates.
pub fn gen_scheme1<R: Rng + ?Sized>(
    config: &Scheme1Config,
    regions: &SimRegions,
    rng: &mut R,
) -> Result<(CurveMatrix, Partition)> {
    config.validate(&regions.graph)?;
    let truth = regions.template(config.structure).clone();
    let templates = scheme1_templates(SIM_T);
    let eps = sample_car_noise(&regions.graph, config.phi, SIM_T, rng)?;
    let sigma = config.sigma2.sqrt();
    let y0 = DMatrix::from_fn(regions.graph.n(), SIM_T, |i, t| {
        templates[truth.labels()[i] % 3][t] + sigma * eps[(i, t)]
    });
    let curves = CurveMatrix::from_unnormalized(regions.region_ids().to_vec(), y0)?;
    Ok((curves, truth))
}

/// One cluster's epidemic settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SirCluster {
    pub beta: f64,
    /// Five dates bounding the four recovery-rate phases.
    pub phases: Vec<NaiveDate>,
    /// Base recovery rate of each phase.
    pub delta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SirConfig {
    pub structure: Structure,
    pub clusters: Vec<SirCluster>,
    /// Half-width of the uniform jitter applied to each phase rate.
    pub delta_jitter: f64,
    pub i0: i64,
    pub r0: i64,
    pub noise_sd: f64,
}

fn date(m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(2020, m, d).expect("valid calendar date")
}

impl SirConfig {
    pub fn table_defaults(structure: Structure, noise_sd: f64) -> Self {
        let start = date(3, 14);
        let end = date(6, 20);
        Self {
            structure,
            clusters: vec![
                SirCluster {
                    beta: 0.08,
                    phases: vec![start, date(4, 3), date(4, 23), date(5, 13), end],
                    delta: vec![0.05, 0.065, 0.095, 0.11],
                },
                SirCluster {
                    beta: 0.11,
                    phases: vec![start, date(3, 24), date(4, 8), date(5, 8), end],
                    delta: vec![0.06, 0.095, 0.125, 0.16],
                },
                SirCluster {
                    beta: 0.14,
                    phases: vec![start, date(4, 18), date(5, 8), date(5, 18), end],
                    delta: vec![0.11, 0.125, 0.155, 0.17],
                },
            ],
            delta_jitter: 0.005,
            i0: 5000,
            r0: 500,
            noise_sd,
        }
    }

    pub fn validate(&self, populations: &[u64]) -> Result<()> {
        if self.clusters.is_empty() {
            return Err(Error::Config("SIR config needs at least one cluster".into()));
        }
        let (start, end) = self.span();
        for (k, c) in self.clusters.iter().enumerate() {
            if c.phases.len() != c.delta.len() + 1 || c.delta.is_empty() {
                return Err(Error::Config(format!(
                    "cluster {}: {} phase dates for {} rates",
                    k + 1,
                    c.phases.len(),
                    c.delta.len()
                )));
            }
            if c.phases.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::Config(format!(
                    "cluster {}: phase dates must increase",
                    k + 1
                )));
            }
            if c.phases[0] != start || *c.phases.last().unwrap() != end {
                return Err(Error::Config(format!(
                    "cluster {}: phases must span {start} to {end}",
                    k + 1
                )));
            }
            if !(c.beta > 0.0) || c.delta.iter().any(|&d| !(d - self.delta_jitter > 0.0)) {
                return Err(Error::Config(format!("cluster {}: rates must be positive", k + 1)));
            }
        }
        if !(self.delta_jitter >= 0.0) || !(self.noise_sd >= 0.0) {
            return Err(Error::Config("jitter and noise sd must be non-negative".into()));
        }
        if self.i0 <= 0 || self.r0 < 0 {
            return Err(Error::Config("initial I must be positive and R non-negative".into()));
        }
        if let Some(&n) = populations.iter().min() {
            if n as i64 <= self.i0 + self.r0 {
                return Err(Error::Config(format!(
                    "population {n} does not exceed I(0) + R(0)"
                )));
            }
        }
        Ok(())
    }

    fn span(&self) -> (NaiveDate, NaiveDate) {
        let c = &self.clusters[0];
        (c.phases[0], *c.phases.last().unwrap())
    }

    /// Number of daily states from the first to the last phase date.
    pub fn n_days(&self) -> usize {
        let (s, e) = self.span();
        (e - s).num_days() as usize + 1
    }
}

/// Integer compartments after each day of a discrete SIR run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SirStep {
    pub s: i64,
    pub i: i64,
    pub r: i64,
}

/// Daily forward-Euler SIR with flows rounded to whole people, so that
/// `S + I + R = N` holds exactly. `gamma[d]` is the recovery rate applied on
/// day `d`; the output has `gamma.len() + 1` states.
pub fn simulate_sir(n: i64, i0: i64, r0: i64, beta: f64, gamma: &[f64]) -> Result<Vec<SirStep>> {
    let mut cur = SirStep {
        s: n - i0 - r0,
        i: i0,
        r: r0,
    };
    if cur.s < 0 {
        return Err(Error::Stability("initial compartments exceed population".into()));
    }
    let mut out = Vec::with_capacity(gamma.len() + 1);
    out.push(cur);
    for &g in gamma {
        let infect = (beta * cur.i as f64 * cur.s as f64 / n as f64).round() as i64;
        let recover = (g * cur.i as f64).round() as i64;
        let next = SirStep {
            s: cur.s - infect,
            i: cur.i + infect - recover,
            r: cur.r + recover,
        };
        if next.s < 0 || next.i < 0 || next.r < 0 {
            return Err(Error::Stability(format!(
                "negative compartment after day {} (S = {}, I = {}, R = {})",
                out.len(),
                next.s,
                next.i,
                next.r
            )));
        }
        out.push(next);
        cur = next;
    }
    Ok(out)
}

/// Per-day recovery rates for one region: phase `k` covers
/// `[phases[k], phases[k+1])`.
fn recovery_schedule(c: &SirCluster, delta: &[f64], n_steps: usize) -> Vec<f64> {
    let start = c.phases[0];
    (0..n_steps)
        .map(|d| {
            let day = start + chrono::Days::new(d as u64);
            let k = c.phases[1..].iter().position(|&b| day < b).unwrap_or(delta.len() - 1);
            delta[k.min(delta.len() - 1)]
        })
        .collect()
}

/// SIR-based curves; daily confirmed counts are `ΔI + ΔR`.
pub fn gen_scheme2_sir<R: Rng + ?Sized>(
    config: &SirConfig,
    regions: &SimRegions,
    rng: &mut R,
) -> Result<(CurveMatrix, Partition)> {
    config.validate(&regions.populations)?;
    let truth = regions.template(config.structure).clone();
    if truth.n_clusters() > config.clusters.len() {
        return Err(Error::Config(format!(
            "template has {} clusters but {} are configured",
            truth.n_clusters(),
            config.clusters.len()
        )));
    }
    let n = regions.graph.n();
    let steps = config.n_days() - 1;
    let noise = Normal::new(0.0, config.noise_sd.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::Config(e.to_string()))?;
    let mut y = DMatrix::zeros(n, steps);
    for i in 0..n {
        let c = &config.clusters[truth.labels()[i]];
        let delta: Vec<f64> = c
            .delta
            .iter()
            .map(|&a| {
                if config.delta_jitter > 0.0 {
                    Uniform::new(a - config.delta_jitter, a + config.delta_jitter)
                        .map(|u| u.sample(rng))
                        .unwrap_or(a)
                } else {
                    a
                }
            })
            .collect();
        let gamma = recovery_schedule(c, &delta, steps);
        let path = simulate_sir(regions.populations[i] as i64, config.i0, config.r0, c.beta, &gamma)?;
        let daily: Vec<f64> = path
            .windows(2)
            .map(|w| ((w[1].i + w[1].r) - (w[0].i + w[0].r)) as f64)
            .collect();
        let total: f64 = daily.iter().sum();
        if total <= 0.0 {
            return Err(Error::DegenerateRegion(regions.region_ids()[i].clone()));
        }
        for t in 0..steps {
            let e = if config.noise_sd > 0.0 { noise.sample(rng) } else { 0.0 };
            y[(i, t)] = daily[t] / total + e;
        }
    }
    let curves = CurveMatrix::from_unnormalized(regions.region_ids().to_vec(), y)?;
    Ok((curves, truth))
}

/// A simulation scheme with its settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "lowercase")]
pub enum SimConfig {
    Scheme1(Scheme1Config),
    Sir(SirConfig),
}

impl SimConfig {
    /// Designs 1-8: scheme 1 for 1-4, SIR for 5-8; odd designs use the weaker
    /// noise level; designs 1, 2, 5, 6 use the first structure.
    pub fn design(id: u32) -> Result<Self> {
        let structure = match id {
            1 | 2 | 5 | 6 => Structure::First,
            3 | 4 | 7 | 8 => Structure::Second,
            _ => return Err(Error::Config(format!("design must be 1-8, got {id}"))),
        };
        let weak = id % 2 == 1;
        Ok(if id <= 4 {
            SimConfig::Scheme1(Scheme1Config {
                structure,
                phi: if weak { 0.01 } else { 0.15 },
                sigma2: 6e-5,
            })
        } else {
            SimConfig::Sir(SirConfig::table_defaults(structure, if weak { 0.010 } else { 0.015 }))
        })
    }

    pub fn generate<R: Rng + ?Sized>(
        &self,
        regions: &SimRegions,
        rng: &mut R,
    ) -> Result<(CurveMatrix, Partition)> {
        match self {
            SimConfig::Scheme1(c) => gen_scheme1(c, regions, rng),
            SimConfig::Sir(c) => gen_scheme2_sir(c, regions, rng),
        }
    }
}

/// `region_id,true_cluster` with clusters numbered from 1.
pub fn write_truth<W: Write>(w: W, region_ids: &[String], truth: &Partition) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["region_id", "true_cluster"])?;
    for (id, &c) in region_ids.iter().zip(truth.labels()) {
        wr.write_record([id.as_str(), &(c + 1).to_string()])?;
    }
    wr.flush().map_err(|e| Error::Format(format!("writing labels: {e}")))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn bundled_regions_load() {
        let r = SimRegions::us_states().unwrap();
        assert_eq!(r.graph.n(), 51);
        assert_eq!(r.populations.len(), 51);
        assert_eq!(r.structure1.n_clusters(), 3);
        assert_eq!(r.structure2.n_clusters(), 3);
        let b = car_bounds(&r.graph).unwrap();
        assert!((b.u_a - 0.184).abs() < 0.002, "u_A = {}", b.u_a);
    }

    #[test]
    fn templates_sum_to_one() {
        for f in scheme1_templates(SIM_T) {
            assert!((f.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn noiseless_scheme1_reproduces_templates() {
        let r = SimRegions::us_states().unwrap();
        let cfg = Scheme1Config {
            structure: Structure::First,
            phi: 0.01,
            sigma2: 1e-300,
        };
        let (c, truth) = gen_scheme1(&cfg, &r, &mut stream(1, "t", &[])).unwrap();
        let tpl = scheme1_templates(SIM_T);
        for i in 0..51 {
            let want = &tpl[truth.labels()[i]];
            for t in 0..SIM_T {
                assert!((c.values()[(i, t)] - want[t]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sir_days_and_phases() {
        let cfg = SirConfig::table_defaults(Structure::First, 0.01);
        assert_eq!(cfg.n_days(), 99);
        let c = &cfg.clusters[0];
        let g = recovery_schedule(c, &c.delta, 98);
        // Mar 14 .. Apr 2 are phase 1 (20 days), Apr 3 starts phase 2
        assert_eq!(g[19], 0.05);
        assert_eq!(g[20], 0.065);
        assert_eq!(g[97], 0.11);
    }

    #[test]
    fn design_mapping() {
        assert!(matches!(
            SimConfig::design(2).unwrap(),
            SimConfig::Scheme1(Scheme1Config { structure: Structure::First, phi, .. }) if phi == 0.15
        ));
        match SimConfig::design(7).unwrap() {
            SimConfig::Sir(c) => {
                assert_eq!(c.structure, Structure::Second);
                assert_eq!(c.noise_sd, 0.010);
            }
            _ => panic!("design 7 is SIR"),
        }
        assert!(SimConfig::design(9).is_err());
        assert!(SimConfig::design(0).is_err());
    }
}
