mod common;

use common::*;
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use scc_core::curves::{build_basis, CurveMatrix};
use scc_core::model::{
    state_conditional_loglik, Hyperparams, LikelihoodForm, ModelData,
    ModelState,
};
use scc_core::sampler::{run_mcmc, McmcConfig, McmcTrace, Sampler};
use scc_core::simgen::sample_car_noise;

fn four_region_state() -> ModelState {
    state(
        &[0, 0, 1, 2],
        vec![
            params(&[0.8, 0.1], 0.04),
            params(&[1.1, -0.2], 0.02),
            params(&[0.9, 0.3], 0.09),
        ],
        0.2,
    )
}

#[test]
fn h_zero_reduces_to_crp() {
    let d = data(random_curves(4, 8, 11), 2, &path_edges(4));
    let hyper = Hyperparams::isotropic(2, 0.5, 2.0, 0.05, 1.3, 0.0);
    let s = Sampler::with_state(&d, hyper.clone(), LikelihoodForm::Conditional, four_region_state())
        .unwrap();
    for i in 0..4 {
        let got = s.assignment_weights(i).unwrap().probabilities();
        let want = classical_crp(i, s.state(), &d, &hyper);
        assert_eq!(got.len(), want.len());
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12, "region {i}: {got:?} vs {want:?}");
        }
    }
}

#[test]
fn positive_h_scales_by_weight_sums() {
    let d = data(random_curves(4, 8, 12), 2, &path_edges(4));
    let h = 0.7;
    let hyper = Hyperparams::isotropic(2, 0.5, 2.0, 0.05, 1.0, h);
    let st = four_region_state();
    let s = Sampler::with_state(&d, hyper.clone(), LikelihoodForm::Conditional, st.clone()).unwrap();
    // region 3 against cluster {0, 1}: distances 3 and 2
    let aw = s.assignment_weights(3).unwrap();
    let w01 = (-3.0 * h).exp() + (-2.0 * h).exp();
    let lik0 = state_conditional_loglik(3, &st, &st.params[0], &d, LikelihoodForm::Conditional)
        .unwrap();
    let k0 = aw.options.iter().position(|o| *o == Some(0)).unwrap();
    assert!((aw.log_weights[k0] - (w01.ln() + lik0)).abs() < 1e-10);
    // region 2 against {0, 1}: distances 2 and 1, so the adjacent one counts fully
    let aw = s.assignment_weights(2).unwrap();
    let lik0 = state_conditional_loglik(2, &st, &st.params[0], &d, LikelihoodForm::Conditional)
        .unwrap();
    let k0 = aw.options.iter().position(|o| *o == Some(0)).unwrap();
    let w = (-2.0 * h).exp() + 1.0;
    assert!((aw.log_weights[k0] - (w.ln() + lik0)).abs() < 1e-10);
}

/// Which option region `i` landed in, judged by co-membership with the
/// untouched regions.
fn landed(before: &ModelState, after: &ModelState, i: usize) -> Option<usize> {
    for (j, &l) in after.labels.iter().enumerate() {
        if j != i && l == after.labels[i] {
            return Some(before.labels[j]);
        }
    }
    None
}

#[test]
fn update_region_frequencies_match_weights() {
    let d = data(random_curves(4, 6, 13), 2, &cycle_edges(4));
    let hyper = Hyperparams::isotropic(2, 1.0, 3.0, 0.05, 1.0, 0.4);
    let base = Sampler::with_state(&d, hyper, LikelihoodForm::Conditional, four_region_state())
        .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let draws = 50_000;
    for i in [0usize, 2] {
        let aw = base.assignment_weights(i).unwrap();
        let probs = aw.probabilities();
        let mut counts = vec![0usize; probs.len()];
        for _ in 0..draws {
            let mut s = base.clone();
            s.update_region(i, &mut rng).unwrap();
            let got = landed(base.state(), s.state(), i);
            let k = aw.options.iter().position(|o| *o == got).unwrap();
            counts[k] += 1;
        }
        for (c, p) in counts.iter().zip(&probs) {
            let f = *c as f64 / draws as f64;
            assert!((f - p).abs() < 0.01, "region {i}: {counts:?} vs {probs:?}");
        }
    }
}

#[test]
fn phi_chain_matches_quadrature() {
    let d = data(random_curves(2, 6, 14), 1, &[(0, 1)]);
    let hyper = Hyperparams::isotropic(1, 1.0, 2.0, 1.0, 1.0, 0.0);
    let st = state(&[0, 0], vec![params(&[0.1], 0.0004)], 0.0);
    let mut s = Sampler::with_state(&d, hyper, LikelihoodForm::Conditional, st).unwrap();
    let (lo, hi) = (d.bounds.ell_a, d.bounds.u_a);
    let m = 4000;
    let step = (hi - lo) / m as f64;
    let grid: Vec<f64> = (1..m).map(|k| lo + k as f64 * step).collect();
    let logs: Vec<f64> = grid.iter().map(|&x| s.phi_log_target(x).unwrap()).collect();
    let mx = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (mut z, mut num) = (0.0, 0.0);
    for (x, l) in grid.iter().zip(&logs) {
        let w = (l - mx).exp();
        z += w;
        num += w * x;
    }
    let want = num / z;

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut sum, mut n) = (0.0, 0usize);
    for k in 0..200_000 {
        s.update_phi(0.4, &mut rng).unwrap();
        let phi = s.state().phi;
        assert!(phi > lo && phi < hi);
        if k >= 1000 {
            sum += phi;
            n += 1;
        }
    }
    let got = sum / n as f64;
    assert!((got - want).abs() < 0.02, "chain mean {got}, quadrature {want}");
}

#[test]
fn vanishing_proposal_is_almost_always_accepted() {
    let d = data(random_curves(5, 6, 15), 2, &cycle_edges(5));
    let hyper = Hyperparams::isotropic(2, 1.0, 2.0, 0.05, 1.0, 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut s = Sampler::initialize(&d, hyper, LikelihoodForm::Conditional, &mut rng).unwrap();
    let start = s.state().phi;
    let accepted = (0..2000).filter(|_| s.update_phi(1e-9, &mut rng).unwrap()).count();
    assert!(accepted >= 1990, "accepted {accepted}");
    assert!((s.state().phi - start).abs() < 1e-5);
}

fn small_config(seed: u64) -> McmcConfig {
    McmcConfig {
        iterations: 60,
        burn_in: 20,
        thin: 2,
        seed,
        ..Default::default()
    }
}

#[test]
fn runs_are_reproducible_and_in_bounds() {
    let d = data(random_curves(6, 10, 16), 3, &path_edges(6));
    let hyper = Hyperparams::isotropic(3, 1.0, 2.0, 0.01, 1.0, 0.5);
    let a = run_mcmc(&d, &hyper, &small_config(9)).unwrap();
    let b = run_mcmc(&d, &hyper, &small_config(9)).unwrap();
    let c = run_mcmc(&d, &hyper, &small_config(10)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert_eq!(a.len(), 20);
    assert!((0.0..=1.0).contains(&a.acceptance_rate));
    for draw in &a.draws {
        assert!(d.bounds.contains(draw.phi));
        draw.state().validate().unwrap();
        // labels are canonical: first appearance order
        let mut next = 0;
        for &l in &draw.labels {
            assert!(l <= next);
            if l == next {
                next += 1;
            }
        }
    }
}

#[test]
fn jsonl_round_trip() {
    let d = data(random_curves(5, 8, 17), 2, &cycle_edges(5));
    let hyper = Hyperparams::isotropic(2, 1.0, 2.0, 0.01, 1.0, 0.3);
    let trace = run_mcmc(&d, &hyper, &small_config(3)).unwrap();
    let header = serde_json::json!({ "config": { "h": 0.3 } });
    let mut buf = Vec::new();
    trace.write_jsonl(&mut buf, &header).unwrap();
    let (back, head) = McmcTrace::read_jsonl(buf.as_slice()).unwrap();
    assert_eq!(back, trace);
    assert_eq!(head["config"]["h"], 0.3);
    assert_eq!(buf.iter().filter(|&&b| b == b'\n').count(), trace.len() + 1);
}

/// Successive-conditional simulator: alternate one Gibbs sweep with a fresh
/// data set drawn from the likelihood at the current state. Its stationary
/// law is the prior, whose moments are known in closed form.
#[test]
fn successive_conditional_draws_recover_the_prior() {
    let n = 4;
    let t = 4;
    let g = graph(n, &complete_edges(n));
    let basis = build_basis(1, t, 1).unwrap();
    // 1/σ² ~ Gamma(2, rate 2); β | σ² ~ N(0, σ²)
    let hyper = Hyperparams::isotropic(1, 1.0, 4.0, 1.0, 1.0, 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let dummy = CurveMatrix::from_raw(ids(n), DMatrix::from_element(n, t, 0.25)).unwrap();
    let d0 = ModelData::new(dummy, basis.clone(), &g).unwrap();
    let mut st = Sampler::initialize(&d0, hyper.clone(), LikelihoodForm::Conditional, &mut rng)
        .unwrap()
        .state()
        .clone();

    let iters = 40_000;
    let (mut k_sum, mut phi_sum, mut ls_sum) = (0.0, 0.0, 0.0);
    for _ in 0..iters {
        let eps = sample_car_noise(&g, st.phi, t, &mut rng).unwrap();
        let y = DMatrix::from_fn(n, t, |i, k| {
            let c = &st.params[st.labels[i]];
            let mean: f64 = (0..basis.p).map(|j| basis.eval[(k, j)] * c.beta[j]).sum();
            mean + c.sigma() * eps[(i, k)]
        });
        let curves = CurveMatrix::from_raw(ids(n), y).unwrap();
        let d = ModelData::new(curves, basis.clone(), &g).unwrap();
        let mut s = Sampler::with_state(&d, hyper.clone(), LikelihoodForm::Conditional, st).unwrap();
        s.sweep(0.3, &mut rng).unwrap();
        st = s.state().clone();
        k_sum += st.n_clusters() as f64;
        phi_sum += st.phi;
        ls_sum += st.params_of(0).sigma2.ln();
    }
    let m = iters as f64;
    let k_prior = 1.0 + 0.5 + 1.0 / 3.0 + 0.25;
    let phi_prior = 0.5 * (-1.0 + 1.0 / 3.0);
    // E log σ² = -(ψ(2) - ln 2)
    let ls_prior = -((1.0 - 0.577_215_664_901_532_9) - 2f64.ln());
    assert!((k_sum / m - k_prior).abs() < 0.08, "E K {} vs {k_prior}", k_sum / m);
    assert!((phi_sum / m - phi_prior).abs() < 0.05, "E φ {} vs {phi_prior}", phi_sum / m);
    assert!((ls_sum / m - ls_prior).abs() < 0.1, "E log σ² {} vs {ls_prior}", ls_sum / m);
}
