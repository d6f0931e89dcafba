//! Gibbs/Metropolis sampler over cluster parameters, the partition and `φ`.
//!
//! One sweep runs, in order:
//!
//! 1. a conjugate draw of each cluster's `(β, σ²)`;
//! 2. a reassignment of every region, in index order, among the existing
//!    clusters and a fresh one (whose parameters are integrated out of the
//!    weight and then drawn from the singleton posterior);
//! 3. a truncated-normal random-walk Metropolis move on `φ`.

use std::io::{BufRead, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::model::likelihood::{offset_normal_loglik, region_offset, residual_rows, PhiStats};
use crate::model::posterior::singleton_log_marginal;
use crate::model::{
    cluster_posterior, ClusterParams, Hyperparams, LikelihoodForm, ModelData, ModelState,
};
use crate::rng::SccRng;
use crate::spatial::{graph_distances, weight_matrix, WeightMatrix};

const ADAPT_WINDOW: usize = 50;
const ADAPT_LOW: f64 = 0.30;
const ADAPT_HIGH: f64 = 0.45;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub proposal_sd: f64,
    /// Tune `proposal_sd` during burn-in toward 30-45% acceptance.
    pub adapt: bool,
    pub likelihood_form: LikelihoodForm,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            iterations: 4000,
            burn_in: 2000,
            thin: 1,
            seed: 0,
            proposal_sd: 0.05,
            adapt: true,
            likelihood_form: LikelihoodForm::Conditional,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.iterations {
            return Err(Error::Config(format!(
                "burn_in ({}) must be smaller than iterations ({})",
                self.burn_in, self.iterations
            )));
        }
        if self.thin == 0 {
            return Err(Error::Config("thin must be at least 1".into()));
        }
        if !(self.proposal_sd > 0.0 && self.proposal_sd.is_finite()) {
            return Err(Error::Config(format!(
                "proposal_sd must be positive, got {}",
                self.proposal_sd
            )));
        }
        Ok(())
    }
}

/// One retained draw. Labels are canonical (first appearance).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Draw {
    pub iter: usize,
    pub phi: f64,
    pub labels: Vec<usize>,
    pub clusters: Vec<ClusterParams>,
}

impl Draw {
    pub fn state(&self) -> ModelState {
        ModelState {
            labels: self.labels.clone(),
            params: self.clusters.clone(),
            phi: self.phi,
        }
    }

    pub fn n_clusters(&self) -> usize {
        self.clusters.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McmcTrace {
    pub draws: Vec<Draw>,
    /// Fraction of accepted `φ` moves after burn-in.
    pub acceptance_rate: f64,
    /// Proposal sd in force after burn-in.
    pub proposal_sd: f64,
    pub seed: u64,
    pub likelihood_form: LikelihoodForm,
}

impl McmcTrace {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    /// Concatenate traces of independent chains.
    pub fn concat(traces: &[McmcTrace]) -> Result<McmcTrace> {
        let first = traces
            .first()
            .ok_or_else(|| Error::Dimension("no traces to concatenate".into()))?;
        let total: usize = traces.iter().map(|t| t.len()).sum();
        let rate = if total == 0 {
            0.0
        } else {
            traces.iter().map(|t| t.acceptance_rate * t.len() as f64).sum::<f64>() / total as f64
        };
        Ok(McmcTrace {
            draws: traces.iter().flat_map(|t| t.draws.iter().cloned()).collect(),
            acceptance_rate: rate,
            proposal_sd: first.proposal_sd,
            seed: first.seed,
            likelihood_form: first.likelihood_form,
        })
    }

    /// JSON lines: one header object, then one object per draw.
    pub fn write_jsonl<W: Write>(&self, mut w: W, header: &serde_json::Value) -> Result<()> {
        let mut head = header.clone();
        if let Some(obj) = head.as_object_mut() {
            obj.insert("acceptance_rate".into(), self.acceptance_rate.into());
            obj.insert("proposal_sd".into(), self.proposal_sd.into());
            obj.insert("seed".into(), self.seed.into());
            obj.insert("likelihood_form".into(), serde_json::to_value(self.likelihood_form)?);
        }
        let io = |e| Error::Format(format!("writing trace: {e}"));
        writeln!(w, "{}", serde_json::to_string(&head)?).map_err(io)?;
        for d in &self.draws {
            writeln!(w, "{}", serde_json::to_string(d)?).map_err(io)?;
        }
        Ok(())
    }

    /// Inverse of [`McmcTrace::write_jsonl`]; returns the trace and header.
    pub fn read_jsonl<R: BufRead>(r: R) -> Result<(McmcTrace, serde_json::Value)> {
        let mut lines = r.lines();
        let head_line = lines
            .next()
            .ok_or_else(|| Error::Format("empty trace file".into()))?
            .map_err(|e| Error::Format(format!("reading trace: {e}")))?;
        let head: serde_json::Value = serde_json::from_str(&head_line)?;
        let field = |k: &str| {
            head.get(k)
                .cloned()
                .ok_or_else(|| Error::Format(format!("trace header lacks `{k}`")))
        };
        let acceptance_rate = serde_json::from_value(field("acceptance_rate")?)?;
        let proposal_sd = serde_json::from_value(field("proposal_sd")?)?;
        let seed = serde_json::from_value(field("seed")?)?;
        let likelihood_form = serde_json::from_value(field("likelihood_form")?)?;
        let mut draws = Vec::new();
        for line in lines {
            let line = line.map_err(|e| Error::Format(format!("reading trace: {e}")))?;
            if line.trim().is_empty() {
                continue;
            }
            draws.push(serde_json::from_str(&line)?);
        }
        Ok((
            McmcTrace {
                draws,
                acceptance_rate,
                proposal_sd,
                seed,
                likelihood_form,
            },
            head,
        ))
    }
}

/// Chain state plus the caches a sweep needs.
#[derive(Debug, Clone)]
pub struct Sampler<'a> {
    data: &'a ModelData,
    hyper: Hyperparams,
    form: LikelihoodForm,
    weights: WeightMatrix,
    state: ModelState,
    /// Standardized residual rows at the current state.
    resid: Vec<Vec<f64>>,
    /// `ξβ_c` per cluster.
    fitted: Vec<Vec<f64>>,
}

/// Candidate assignments for one region with their unnormalized log
/// probabilities; `None` is a new cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentWeights {
    pub options: Vec<Option<usize>>,
    pub log_weights: Vec<f64>,
}

impl AssignmentWeights {
    pub fn probabilities(&self) -> Vec<f64> {
        let m = self.log_weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = self.log_weights.iter().map(|l| (l - m).exp()).collect();
        let s: f64 = w.iter().sum();
        w.into_iter().map(|v| v / s).collect()
    }
}

impl<'a> Sampler<'a> {
    /// Start from `state` (validated against the data).
    pub fn with_state(
        data: &'a ModelData,
        hyper: Hyperparams,
        form: LikelihoodForm,
        state: ModelState,
    ) -> Result<Self> {
        hyper.validate()?;
        if hyper.p() != data.p() {
            return Err(Error::Dimension(format!(
                "hyperparameters have p = {}, basis has p = {}",
                hyper.p(),
                data.p()
            )));
        }
        if state.labels.len() != data.n() {
            return Err(Error::Dimension("state and data sizes differ".into()));
        }
        state.validate()?;
        data.bounds.check(state.phi)?;
        let weights = weight_matrix(&graph_distances(&data.graph), hyper.h)?;
        let mut s = Self {
            data,
            hyper,
            form,
            weights,
            state,
            resid: Vec::new(),
            fitted: Vec::new(),
        };
        s.refresh();
        Ok(s)
    }

    /// All regions in one cluster, `φ = 0`, parameters from the Step-1 draw.
    pub fn initialize<R: Rng + ?Sized>(
        data: &'a ModelData,
        hyper: Hyperparams,
        form: LikelihoodForm,
        rng: &mut R,
    ) -> Result<Self> {
        let placeholder = ClusterParams::new(vec![0.0; data.p()], 1.0)?;
        let state = ModelState::new(vec![0; data.n()], vec![placeholder], 0.0)?;
        let mut s = Self::with_state(data, hyper, form, state)?;
        s.update_params(rng)?;
        Ok(s)
    }

    pub fn state(&self) -> &ModelState {
        &self.state
    }

    pub fn weights(&self) -> &WeightMatrix {
        &self.weights
    }

    fn refresh(&mut self) {
        self.fitted = self.state.params.iter().map(|c| self.data.fitted(&c.beta)).collect();
        self.resid = residual_rows(&self.state, self.data);
    }

    fn refresh_region(&mut self, i: usize) {
        let c = self.state.labels[i];
        let s = self.state.params[c].sigma();
        self.resid[i] = self
            .data
            .row(i)
            .iter()
            .zip(&self.fitted[c])
            .map(|(y, f)| (y - f) / s)
            .collect();
    }

    /// `φ Σ_j A_ij ε*_j` under the conditional form, `None` otherwise.
    fn phi_offset(&self, i: usize) -> Option<Vec<f64>> {
        match self.form {
            LikelihoodForm::Conditional if self.state.phi != 0.0 => Some(
                region_offset(i, &self.resid, self.data)
                    .into_iter()
                    .map(|v| v * self.state.phi)
                    .collect(),
            ),
            _ => None,
        }
    }

    /// Step 1: draw every cluster's `(β, σ²)` from its full conditional.
    pub fn update_params<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        let phi = self.state.phi;
        for c in 0..self.state.n_clusters() {
            let members = self.state.members(c);
            let offsets = match self.form {
                LikelihoodForm::Conditional if phi != 0.0 => Some(
                    members
                        .iter()
                        .map(|&i| {
                            let mut m = vec![0.0; self.data.t()];
                            for &j in self.data.graph.neighbors(i) {
                                if self.state.labels[j] != c {
                                    for (a, b) in m.iter_mut().zip(&self.resid[j]) {
                                        *a += phi * b;
                                    }
                                }
                            }
                            m
                        })
                        .collect::<Vec<_>>(),
                ),
                _ => None,
            };
            let post = cluster_posterior(self.data, &self.hyper, &members, phi, offsets.as_deref())?;
            self.state.params[c] = post.sample(rng)?;
            self.fitted[c] = self.data.fitted(&self.state.params[c].beta);
            for &i in &members {
                self.refresh_region(i);
            }
        }
        Ok(())
    }

    /// Log weights for region `i` with `i` itself taken out of its cluster.
    pub fn assignment_weights(&self, i: usize) -> Result<AssignmentWeights> {
        let k = self.state.n_clusters();
        let mut wsum = vec![0.0; k];
        let mut count = vec![0usize; k];
        for (j, &c) in self.state.labels.iter().enumerate() {
            if j != i {
                wsum[c] += self.weights.w[(i, j)];
                count[c] += 1;
            }
        }
        let offset = self.phi_offset(i);
        let y = self.data.row(i);
        let mut options = Vec::with_capacity(k + 1);
        let mut log_weights = Vec::with_capacity(k + 1);
        for c in 0..k {
            if count[c] == 0 {
                continue;
            }
            let prior = wsum[c].ln();
            let lik = offset_normal_loglik(
                y,
                &self.fitted[c],
                self.state.params[c].sigma(),
                offset.as_deref(),
            );
            options.push(Some(c));
            log_weights.push(prior + lik);
        }
        let marginal = singleton_log_marginal(self.data, &self.hyper, i, offset.as_deref())?;
        options.push(None);
        log_weights.push(self.hyper.alpha.ln() + marginal);
        if log_weights.iter().any(|w| w.is_nan() || *w == f64::INFINITY) {
            return Err(Error::Numeric(format!(
                "non-finite assignment weight for region {i}"
            )));
        }
        if log_weights.iter().all(|w| *w == f64::NEG_INFINITY) {
            return Err(Error::Numeric(format!(
                "all assignment weights vanish for region {i}"
            )));
        }
        Ok(AssignmentWeights {
            options,
            log_weights,
        })
    }

    /// Step 2: reassign every region in index order.
    pub fn update_partition<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        for i in 0..self.data.n() {
            self.update_region(i, rng)?;
        }
        Ok(())
    }

    /// Reassign region `i` alone.
    pub fn update_region<R: Rng + ?Sized>(&mut self, i: usize, rng: &mut R) -> Result<()> {
        let aw = self.assignment_weights(i)?;
        let probs = aw.probabilities();
        let u: f64 = rng.random();
        let mut pick = probs.len() - 1;
        let mut acc = 0.0;
        for (k, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                pick = k;
                break;
            }
        }
        let old = self.state.labels[i];
        let old_was_singleton = self.state.labels.iter().filter(|&&c| c == old).count() == 1;
        let target = match aw.options[pick] {
            Some(c) => c,
            None => {
                let offset = self.phi_offset(i).map(|m| vec![m]);
                let post = cluster_posterior(
                    self.data,
                    &self.hyper,
                    &[i],
                    self.state.phi,
                    offset.as_deref(),
                )?;
                let params = post.sample(rng)?;
                self.fitted.push(self.data.fitted(&params.beta));
                self.state.params.push(params);
                self.state.params.len() - 1
            }
        };
        self.state.labels[i] = target;
        if old_was_singleton && target != old {
            self.remove_cluster(old);
        }
        self.refresh_region(i);
        Ok(())
    }

    fn remove_cluster(&mut self, c: usize) {
        self.state.params.remove(c);
        self.fitted.remove(c);
        for l in &mut self.state.labels {
            if *l > c {
                *l -= 1;
            }
        }
    }

    /// Unnormalized log posterior of `φ` at the current residuals.
    pub fn phi_log_target(&self, phi: f64) -> Result<f64> {
        PhiStats::from_rows(&self.resid, self.data).loglik(self.data, phi)
    }

    /// Step 3: Metropolis move on `φ`; returns whether it was accepted.
    pub fn update_phi<R: Rng + ?Sized>(&mut self, proposal_sd: f64, rng: &mut R) -> Result<bool> {
        let b = &self.data.bounds;
        let (lo, hi) = (b.ell_a, b.u_a);
        let cur = self.state.phi;
        let std = Normal::new(0.0, 1.0).map_err(|e| Error::Numeric(e.to_string()))?;
        let mass = |x: f64| std.cdf((hi - x) / proposal_sd) - std.cdf((lo - x) / proposal_sd);

        let prop = match truncated_normal(cur, proposal_sd, lo, hi, &std, rng) {
            Some(p) if b.contains(p) => p,
            _ => return Ok(false),
        };
        let stats = PhiStats::from_rows(&self.resid, self.data);
        let (Ok(l_new), Ok(l_cur)) = (stats.loglik(self.data, prop), stats.loglik(self.data, cur))
        else {
            return Ok(false);
        };
        let log_ratio = l_new - l_cur + mass(cur).ln() - mass(prop).ln();
        if !log_ratio.is_finite() && log_ratio != f64::NEG_INFINITY {
            return Ok(false);
        }
        let u: f64 = rng.random();
        if u.ln() < log_ratio {
            self.state.phi = prop;
            Ok(true)
        } else {
            Ok(false)
        }
    }

    pub fn sweep<R: Rng + ?Sized>(&mut self, proposal_sd: f64, rng: &mut R) -> Result<bool> {
        self.update_params(rng)?;
        self.update_partition(rng)?;
        self.update_phi(proposal_sd, rng)
    }

    /// Current state as a draw, with canonical labels.
    pub fn snapshot(&mut self, iter: usize) -> Draw {
        self.state.canonicalize();
        self.refresh();
        Draw {
            iter,
            phi: self.state.phi,
            labels: self.state.labels.clone(),
            clusters: self.state.params.clone(),
        }
    }
}

/// `N(mean, sd²)` truncated to `(lo, hi)` by inverting the CDF.
fn truncated_normal<R: Rng + ?Sized>(
    mean: f64,
    sd: f64,
    lo: f64,
    hi: f64,
    std: &Normal,
    rng: &mut R,
) -> Option<f64> {
    let a = std.cdf((lo - mean) / sd);
    let b = std.cdf((hi - mean) / sd);
    if !(b > a) {
        return None;
    }
    let u: f64 = rng.random();
    let x = mean + sd * std.inverse_cdf(a + u * (b - a));
    x.is_finite().then_some(x)
}

/// Run the chain from the single-cluster start on the stream keyed by
/// `config.seed`.
pub fn run_mcmc(data: &ModelData, hyper: &Hyperparams, config: &McmcConfig) -> Result<McmcTrace> {
    let mut rng: SccRng = crate::rng::stream(config.seed, "mcmc", &[]);
    run_mcmc_with(data, hyper, config, &mut rng)
}

/// [`run_mcmc`] with an explicit generator.
pub fn run_mcmc_with<R: Rng + ?Sized>(
    data: &ModelData,
    hyper: &Hyperparams,
    config: &McmcConfig,
    rng: &mut R,
) -> Result<McmcTrace> {
    config.validate()?;
    let mut s = Sampler::initialize(data, hyper.clone(), config.likelihood_form, rng)?;
    let mut sd = config.proposal_sd;
    let mut window = 0usize;
    let mut accepted_after = 0usize;
    let mut draws = Vec::new();
    for k in 1..=config.iterations {
        let acc = s.sweep(sd, rng)?;
        if k <= config.burn_in {
            window += acc as usize;
            if config.adapt && k % ADAPT_WINDOW == 0 {
                let rate = window as f64 / ADAPT_WINDOW as f64;
                if rate < ADAPT_LOW {
                    sd *= 0.8;
                } else if rate > ADAPT_HIGH {
                    sd = (sd * 1.25).min(data.bounds.width());
                }
                window = 0;
            }
        } else {
            accepted_after += acc as usize;
            if (k - config.burn_in) % config.thin == 0 {
                draws.push(s.snapshot(k));
            }
        }
        if k % 1000 == 0 {
            log::debug!(
                "iteration {k}: {} clusters, phi = {:.4}",
                s.state().n_clusters(),
                s.state().phi
            );
        }
    }
    Ok(McmcTrace {
        draws,
        acceptance_rate: accepted_after as f64 / (config.iterations - config.burn_in) as f64,
        proposal_sd: sd,
        seed: config.seed,
        likelihood_form: config.likelihood_form,
    })
}
