use std::sync::Arc;

use approx::assert_relative_eq;
use fedstream::markov;
use fedstream::objectives::{
    self, FederatedProblem, ObjectiveError, RegressionClient, RegressionProblem, RegressionSample, SampleStream,
};
use fedstream::rng::{uniform, Domain, RngKey};

#[test]
fn generator_layout() {
    let a = objectives::generate_synthetic(21, 5, 0.1, 0.01).unwrap();
    assert_eq!(a, objectives::generate_synthetic(21, 5, 0.1, 0.01).unwrap());
    assert_ne!(a.clients, objectives::generate_synthetic(22, 5, 0.1, 0.01).unwrap().clients);
    for c in &a.clients {
        for i in 0..2 {
            assert_eq!(c.w_opt[i], a.clients[0].w_opt[i]);
            assert!(c.w_opt[i][..5].iter().all(|v| (0.0..1.0).contains(v)));
            assert!(c.w_opt[i][5..].iter().all(|v| (1.0..2.0).contains(v)));
            assert!(c.w_opt[i][..5].windows(2).all(|p| p[0] == p[1]));
            assert!(c.v[i].iter().all(|v| (0.0..1.0).contains(v)));
        }
    }
    assert!(objectives::generate_synthetic(1, 0, 0.1, 0.01).is_err());
    assert!(objectives::generate_synthetic(1, 2, 1.0, 0.01).is_err());
}

#[test]
fn stationary_mean_of_sample_gradients() {
    let problem = objectives::generate_synthetic(4, 2, 0.3, 0.01).unwrap();
    let kernel = Arc::new(problem.kernel().unwrap());
    let pi = markov::stationary(&kernel).unwrap();
    let w: Vec<f64> = (0..10).map(|j| 0.1 * j as f64 - 0.3).collect();
    let mut stream = problem.stream(1, kernel, &pi, 8).unwrap();
    let n = 400_000;
    let mut mean = vec![0.0; 10];
    let mut g = vec![0.0; 10];
    for _ in 0..n {
        let x = stream.next_sample();
        problem.sample_grad(1, &w, &x, &mut g);
        mean.iter_mut().zip(&g).for_each(|(a, b)| *a += b / n as f64);
    }
    let exact = problem.stationary_grad(1, pi.probs(), &w);
    let scale = objectives::norm_sq(&exact).sqrt();
    let err = mean.iter().zip(&exact).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    assert!(err < 0.02 * scale, "err {err}, scale {scale}");
    assert_eq!(stream.consumed(), n as u64);
}

#[test]
fn noise_free_gradient_differs_by_the_noise_mean() {
    let problem = objectives::generate_synthetic(6, 3, 0.5, 0.01).unwrap();
    let w = vec![0.4; 10];
    for m in 0..3 {
        let stationary = problem.stationary_grad(m, &[0.5, 0.5], &w);
        let clean = objectives::synth_true_grad(&problem, m, &w);
        let c = &problem.clients[m];
        for j in 0..10 {
            let shift = problem.noise_mean() * (c.v[0][j] + c.v[1][j]);
            assert_relative_eq!(stationary[j] + shift, clean[j], epsilon = 1e-12);
        }
    }
}

#[test]
fn support_spans_states_and_noise_range() {
    let problem = objectives::generate_synthetic(1, 1, 0.2, 0.01).unwrap();
    let support = problem.sample_support(0);
    assert!(support.iter().any(|s| s.state == 0) && support.iter().any(|s| s.state == 1));
    let lo = support.iter().map(|s| s.noise).fold(f64::INFINITY, f64::min);
    let hi = support.iter().map(|s| s.noise).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!((lo, hi), (problem.noise_low, problem.noise_high));
}

#[test]
fn window_objective_is_mean_of_rows() {
    let mut rng = RngKey::new(2, Domain::Verify, 0).rng();
    let rows: Vec<RegressionSample> = (0..37)
        .map(|_| RegressionSample { x: std::array::from_fn(|_| uniform(&mut rng, -3.0, 3.0)), y: uniform(&mut rng, -3.0, 3.0) })
        .collect();
    let problem = RegressionProblem::new(vec![RegressionClient::new(rows.clone().into()).unwrap()], 0.05).unwrap();
    for _ in 0..20 {
        let w: Vec<f64> = (0..9).map(|_| uniform(&mut rng, -2.0, 2.0)).collect();
        let loss = rows.iter().map(|r| objectives::regression_sample_loss(&w, &r.x, r.y, 0.05)).sum::<f64>() / 37.0;
        assert_relative_eq!(problem.client_loss(0, &w), loss, max_relative = 1e-11);
        let mut g = vec![0.0; 9];
        for r in &rows {
            let gi = objectives::regression_sample_grad(&w, &r.x, r.y, 0.05).unwrap();
            g.iter_mut().zip(&gi).for_each(|(a, b)| *a += b / 37.0);
        }
        for (a, b) in problem.client_grad(0, &w).iter().zip(&g) {
            assert_relative_eq!(*a, *b, epsilon = 1e-11, max_relative = 1e-11);
        }
    }
}

#[test]
fn window_streams_cycle() {
    let rows = vec![RegressionSample { x: [0.0; 9], y: 0.0 }; 3];
    let problem = RegressionProblem::new(vec![RegressionClient::new(rows.into()).unwrap()], 0.0).unwrap();
    let mut s = problem.stream(0);
    let seen: Vec<usize> = (0..7).map(|_| s.next_sample()).collect();
    assert_eq!(seen, [0, 1, 2, 0, 1, 2, 0]);
    assert_eq!(s.consumed(), 7);
}

#[test]
fn regularizer_properties() {
    assert_eq!(objectives::reg_value(&[0.0; 10]), 0.0);
    assert!(objectives::reg_grad(&[0.0; 10]).iter().all(|g| *g == 0.0));
    assert!(objectives::reg_value(&[1e8; 10]) <= 5.0);
    // ∂r/∂w peaks at |w| = 1/√3
    let peak = objectives::reg_grad(&[1.0 / 3f64.sqrt()])[0];
    assert_relative_eq!(peak, 3.0 * 3f64.sqrt() / 16.0, max_relative = 1e-14);
}

#[test]
fn shape_and_empty_window_errors() {
    assert!(matches!(
        objectives::regression_sample_grad(&[0.0; 8], &[0.0; 9], 0.0, 0.01),
        Err(ObjectiveError::Shape { expected: 8, got: 9 })
    ));
    assert!(RegressionClient::new(Vec::new().into()).is_err());
    assert!(RegressionProblem::new(Vec::new(), 0.01).is_err());
}
