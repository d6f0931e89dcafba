mod common;

use std::f64::consts::PI;

use common::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use scc_core::model::{
    car_offsets, new_cluster_marginal_loglik, per_state_density, phi_loglik,
    standardized_residuals, state_conditional_loglik, Hyperparams, LikelihoodForm, ModelData,
    ModelState,
};
use scc_core::spatial::{car_bounds, car_log_det};

/// Conditional density of `Y_i` given every other row under the joint
/// Gaussian with covariance `D (I - φA)^{-1} D` at each time point, by the
/// Schur complement.
fn dense_conditional(d: &ModelData, st: &ModelState, i: usize) -> f64 {
    let n = d.n();
    let sig = DVector::from_fn(n, |j, _| st.params_of(j).sigma());
    let q_inv = precision(d, st.phi).try_inverse().unwrap();
    let cov = DMatrix::from_fn(n, n, |a, b| sig[a] * q_inv[(a, b)] * sig[b]);
    let others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
    let s_oo = DMatrix::from_fn(n - 1, n - 1, |a, b| cov[(others[a], others[b])]);
    let s_io = DVector::from_fn(n - 1, |a, _| cov[(i, others[a])]);
    let gain = s_oo.clone().try_inverse().unwrap() * &s_io;
    let var = cov[(i, i)] - s_io.dot(&gain);
    let mut ll = 0.0;
    for t in 0..d.t() {
        let mu = |j: usize| d.fitted(&st.params_of(j).beta)[t];
        let mut m = mu(i);
        for (a, &j) in others.iter().enumerate() {
            m += gain[a] * (d.row(j)[t] - mu(j));
        }
        let e = d.row(i)[t] - m;
        ll += -0.5 * (2.0 * PI * var).ln() - 0.5 * e * e / var;
    }
    ll
}

fn three_path() -> (ModelData, ModelState) {
    let d = data(random_curves(3, 6, 1), 2, &path_edges(3));
    let st = state(
        &[0, 1, 0],
        vec![params(&[0.2, 0.1], 0.004), params(&[0.25, -0.05], 0.01)],
        0.4,
    );
    (d, st)
}

#[test]
fn conditional_matches_dense_gaussian() {
    let (d, st) = three_path();
    for i in 0..3 {
        let own = st.params_of(i).clone();
        let fast = state_conditional_loglik(i, &st, &own, &d, LikelihoodForm::Conditional).unwrap();
        let slow = dense_conditional(&d, &st, i);
        assert!((fast - slow).abs() < 1e-9, "region {i}: {fast} vs {slow}");
    }
}

#[test]
fn conditional_matches_dense_on_cycle_with_candidate() {
    let d = data(random_curves(5, 7, 2), 3, &cycle_edges(5));
    let base = state(
        &[0, 0, 1, 1, 2],
        vec![
            params(&[0.3, 0.1, 0.0], 0.02),
            params(&[0.2, 0.2, -0.1], 0.005),
            params(&[0.1, 0.0, 0.3], 0.01),
        ],
        -0.3,
    );
    // a candidate is the conditional of the state in which region i carries
    // the candidate's parameters
    let cand = params(&[0.25, 0.05, 0.1], 0.007);
    for i in 0..5 {
        let fast = state_conditional_loglik(i, &base, &cand, &d, LikelihoodForm::Conditional).unwrap();
        let mut alt = base.clone();
        alt.params.push(cand.clone());
        alt.labels[i] = 3;
        let slow = dense_conditional(&d, &alt, i);
        assert!((fast - slow).abs() < 1e-9, "region {i}: {fast} vs {slow}");
    }
}

#[test]
fn independence_form_drops_neighbours() {
    let (d, mut st) = three_path();
    let own = st.params_of(1).clone();
    let ind = state_conditional_loglik(1, &st, &own, &d, LikelihoodForm::Independence).unwrap();
    st.phi = 0.0;
    let zero = state_conditional_loglik(1, &st, &own, &d, LikelihoodForm::Conditional).unwrap();
    assert!((ind - zero).abs() < 1e-12);
    assert!((zero - dense_conditional(&d, &st, 1)).abs() < 1e-9);
}

#[test]
fn isolated_region_has_no_offset() {
    // region 3 has no neighbours
    let d = data(random_curves(4, 5, 3), 1, &path_edges(3));
    let st = state(&[0, 0, 1, 1], vec![params(&[0.4], 0.01), params(&[0.5], 0.02)], 0.5);
    let offs = car_offsets(&st, &d).unwrap();
    assert!(offs[3].iter().all(|&v| v == 0.0));
    let own = st.params_of(3).clone();
    let a = state_conditional_loglik(3, &st, &own, &d, LikelihoodForm::Conditional).unwrap();
    let b = state_conditional_loglik(3, &st, &own, &d, LikelihoodForm::Independence).unwrap();
    assert_eq!(a, b);
}

#[test]
fn residuals_are_standardized() {
    let (d, st) = three_path();
    let e = standardized_residuals(&st, &d).unwrap();
    for i in 0..3 {
        let p = st.params_of(i);
        let f = d.fitted(&p.beta);
        for t in 0..d.t() {
            let want = (d.row(i)[t] - f[t]) / p.sigma();
            assert!((e[(i, t)] - want).abs() < 1e-14);
        }
    }
}

#[test]
fn per_state_density_is_own_conditional() {
    let (d, st) = three_path();
    for i in 0..3 {
        let a = per_state_density(i, &st, &d, LikelihoodForm::Conditional).unwrap();
        assert!((a - dense_conditional(&d, &st, i)).abs() < 1e-9);
    }
}

#[test]
fn new_cluster_marginal_matches_quadrature() {
    let d = data(random_curves(3, 3, 4), 1, &path_edges(3));
    let hyper = Hyperparams::isotropic(1, 2.0, 4.0, 0.01, 1.0, 0.0);
    let st = state(&[0, 1, 1], vec![params(&[0.5], 0.003), params(&[0.6], 0.008)], 0.45);
    for form in [LikelihoodForm::Independence, LikelihoodForm::Conditional] {
        for i in 0..3 {
            let fast = new_cluster_marginal_loglik(i, &st, &d, &hyper, form).unwrap();
            let m: Vec<f64> = match form {
                LikelihoodForm::Conditional => car_offsets(&st, &d).unwrap()[i]
                    .iter()
                    .map(|v| v * st.phi)
                    .collect(),
                LikelihoodForm::Independence => vec![0.0; 3],
            };
            let slow = quadrature_marginal(&d, &hyper, i, &m);
            assert!((fast - slow).abs() < 1e-4, "{form:?} region {i}: {fast} vs {slow}");
        }
    }
}

fn phi_identity(d: &ModelData, st: &mut ModelState) {
    let b = d.bounds.clone();
    let mut offset = None;
    for k in 0..20 {
        let phi = b.ell_a + (k as f64 + 0.5) / 20.0 * b.width();
        st.phi = phi;
        let diff = phi_loglik(st, d, phi).unwrap() - dense_joint(d, st, phi);
        let c = *offset.get_or_insert(diff);
        assert!((diff - c).abs() < 1e-8, "phi = {phi}: {diff} vs {c}");
    }
}

#[test]
fn phi_loglik_matches_dense_density() {
    for (n, edges) in [
        (2, path_edges(2)),
        (4, cycle_edges(4)),
        (5, vec![(0, 1), (0, 2), (0, 3), (0, 4)]),
        (6, complete_edges(6)),
        (6, vec![(0, 1), (1, 2), (2, 0), (3, 4), (4, 5)]),
    ] {
        let d = data(random_curves(n, 5, n as u64), 2, &edges);
        let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let mut st = state(
            &labels,
            vec![params(&[0.3, 0.1], 0.01), params(&[0.2, -0.1], 0.03)],
            0.0,
        );
        phi_identity(&d, &mut st);
    }
}

#[test]
fn phi_loglik_is_concave() {
    let d = data(random_curves(5, 8, 9), 2, &cycle_edges(5));
    let st = state(&[0, 0, 1, 1, 1], vec![params(&[0.3, 0.1], 0.01), params(&[0.2, -0.1], 0.03)], 0.0);
    let b = &d.bounds;
    let xs: Vec<f64> = (1..200).map(|k| b.ell_a + k as f64 / 200.0 * b.width()).collect();
    let ys: Vec<f64> = xs.iter().map(|&x| phi_loglik(&st, &d, x).unwrap()).collect();
    for w in ys.windows(3) {
        assert!(w[0] + w[2] - 2.0 * w[1] <= 1e-9);
    }
}

#[test]
fn per_state_density_decreases_in_variance_when_overdispersed() {
    // once σ² exceeds the mean squared residual the density falls
    let (d, st) = three_path();
    let mut last = f64::INFINITY;
    for s2 in [0.5, 1.0, 2.0, 4.0] {
        let mut s = st.clone();
        for p in &mut s.params {
            p.sigma2 = s2;
        }
        let v = per_state_density(0, &s, &d, LikelihoodForm::Independence).unwrap();
        assert!(v < last);
        last = v;
    }
}

fn random_graph() -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
    (3usize..40).prop_flat_map(|n| {
        let pairs = n * (n - 1) / 2;
        (Just(n), proptest::collection::vec(any::<bool>(), pairs))
    })
    .prop_map(|(n, mask)| {
        let mut e = path_edges(n);
        let mut k = 0;
        for i in 0..n {
            for j in i + 1..n {
                if mask[k] && j > i + 1 {
                    e.push((i, j));
                }
                k += 1;
            }
        }
        (n, e)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn car_log_det_matches_dense((n, edges) in random_graph(), frac in 0.01f64..0.99) {
        let g = graph(n, &edges);
        let b = car_bounds(&g).unwrap();
        let phi = b.ell_a + frac * b.width();
        let q = DMatrix::identity(n, n) - g.matrix() * phi;
        let dense = q.cholesky().unwrap().l().diagonal().iter().map(|v| 2.0 * v.ln()).sum::<f64>();
        prop_assert!((car_log_det(&b, phi).unwrap() - dense).abs() < 1e-8 * (1.0 + dense.abs()));
    }
}
