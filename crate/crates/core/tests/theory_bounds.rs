use approx::assert_relative_eq;
use fedstream::markov;
use fedstream::objectives::{self, RegressionClient, RegressionProblem, RegressionSample};
use fedstream::rng::{uniform, Domain, RngKey};
use fedstream::theory::{self, ProblemConstants, StartMode, TheoryError};

fn constants() -> ProblemConstants {
    ProblemConstants {
        l: 1.5,
        sigma: 0.8,
        theta: 0.6,
        delta: 1.3,
        c_inf: 1.6,
        nu_ps: 0.2,
        delta0: 2.0,
        g0: 0.7,
        m: 20,
        k: 50,
        t: 400,
        beta: 0.2,
        eps: 0.05,
    }
}

fn random_constants(n: usize) -> Vec<ProblemConstants> {
    let mut rng = RngKey::new(8, Domain::Verify, 0).rng();
    (0..n)
        .map(|_| ProblemConstants {
            l: uniform(&mut rng, 0.1, 10.0),
            sigma: uniform(&mut rng, 0.1, 3.0),
            theta: uniform(&mut rng, 0.0, 2.0),
            delta: uniform(&mut rng, 1.0, 3.0),
            c_inf: uniform(&mut rng, 1.0, 4.0),
            nu_ps: uniform(&mut rng, 0.01, 1.0),
            delta0: uniform(&mut rng, 0.1, 5.0),
            g0: uniform(&mut rng, 0.0, 3.0),
            m: 1 + uniform(&mut rng, 0.0, 100.0) as usize,
            k: 1,
            t: 1,
            beta: uniform(&mut rng, 0.05, 1.0),
            eps: uniform(&mut rng, 0.01, 0.3),
        })
        .collect()
}

#[test]
fn complexities_reach_target_accuracy() {
    for c in random_constants(200) {
        let eps_sq = c.eps * c.eps * (1.0 + 1e-9);

        let mb = theory::minibatch_complexity(&c).unwrap();
        let at = ProblemConstants { k: mb.k, t: mb.t, ..c.clone() };
        assert!(theory::minibatch_bound(&at, mb.step).unwrap() <= eps_sq);

        let ls = theory::local_sgd_complexity(&c).unwrap();
        let at = ProblemConstants { k: ls.k, t: ls.t, ..c.clone() };
        assert!(theory::local_sgd_bound(&at, ls.step).unwrap() <= eps_sq);

        let mo = theory::momentum_complexity(&c).unwrap();
        let at = ProblemConstants { k: mo.k, t: mo.t, ..c.clone() };
        assert!(theory::momentum_bound(&at, mo.step, mo.eta_cap.unwrap()).unwrap() <= eps_sq);
    }
}

#[test]
fn doubling_clients_halves_local_steps() {
    for c in random_constants(50) {
        let two = ProblemConstants { m: 2 * c.m, ..c.clone() };
        let pairs = [
            (theory::minibatch_complexity(&c).unwrap(), theory::minibatch_complexity(&two).unwrap()),
            (theory::local_sgd_complexity(&c).unwrap(), theory::local_sgd_complexity(&two).unwrap()),
            (theory::momentum_complexity(&c).unwrap(), theory::momentum_complexity(&two).unwrap()),
        ];
        for (one, double) in pairs {
            assert_relative_eq!(double.k_raw, one.k_raw / 2.0, max_relative = 1e-14);
            assert_eq!(double.k, one.k.div_ceil(2));
        }
    }
}

#[test]
fn halving_accuracy_quadruples_counts() {
    for c in random_constants(50) {
        let half = ProblemConstants { eps: c.eps / 2.0, ..c.clone() };
        let a = theory::minibatch_complexity(&c).unwrap();
        let b = theory::minibatch_complexity(&half).unwrap();
        assert_eq!(b.k_raw, 4.0 * a.k_raw);
        assert_eq!(b.t_raw, 4.0 * a.t_raw);
        let a = theory::momentum_complexity(&c).unwrap();
        let b = theory::momentum_complexity(&half).unwrap();
        assert_eq!(b.k_raw, 4.0 * a.k_raw);
        assert_eq!(b.t_raw, 4.0 * a.t_raw);
    }
}

#[test]
fn bounds_decrease_with_budget() {
    let c = constants();
    let bound = |c: &ProblemConstants| theory::minibatch_bound(c, 0.5).unwrap();
    let base = bound(&c);
    assert!(bound(&ProblemConstants { t: 2 * c.t, ..c.clone() }) < base);
    assert!(bound(&ProblemConstants { k: 2 * c.k, ..c.clone() }) < base);
    assert!(bound(&ProblemConstants { m: 2 * c.m, ..c.clone() }) < base);
    assert!(bound(&ProblemConstants { sigma: 2.0 * c.sigma, ..c.clone() }) > base);
    assert!(bound(&ProblemConstants { nu_ps: c.nu_ps / 2.0, ..c.clone() }) > base);

    let eta = theory::local_sgd_eta_cap(&c, c.k);
    let lb = |c: &ProblemConstants| theory::local_sgd_bound(c, eta).unwrap();
    assert!(lb(&ProblemConstants { t: 2 * c.t, ..c.clone() }) < lb(&c));
    assert!(lb(&ProblemConstants { theta: 2.0 * c.theta, ..c.clone() }) > lb(&c));
}

#[test]
fn minibatch_bound_closed_form() {
    let c = constants();
    let gamma = 0.4;
    let want = 2.0 * c.delta0 / (gamma * c.t as f64) + 4.0 * c.c_inf * c.sigma.powi(2) / (c.nu_ps * (c.m * c.k) as f64);
    assert_relative_eq!(theory::minibatch_bound(&c, gamma).unwrap(), want, max_relative = 1e-14);
}

#[test]
fn momentum_cap_is_smallest_branch() {
    let c = constants();
    let gamma = theory::momentum_gamma_cap(&c);
    assert_relative_eq!(gamma, c.beta / (60f64.sqrt() * c.l), max_relative = 1e-15);
    let branches = theory::momentum_cap_branches(&c, gamma);
    let min = branches.iter().copied().fold(f64::INFINITY, f64::min);
    let cap = theory::momentum_step_caps(&c, gamma).unwrap();
    assert_relative_eq!(cap, min / (c.k as f64 * c.l), max_relative = 1e-15);
    let full = ProblemConstants { beta: 1.0, g0: 0.0, ..c };
    let b = theory::momentum_cap_branches(&full, theory::momentum_gamma_cap(&full));
    assert!(b[2].is_infinite() && b[3].is_infinite());
}

#[test]
fn preconditions_are_enforced() {
    let c = constants();
    assert!(matches!(theory::minibatch_bound(&c, 1.01 / c.l), Err(TheoryError::PreconditionViolated(_))));
    let too_big = 1.01 / (10.0 * c.l * c.delta * c.delta * c.k as f64);
    assert!(matches!(theory::local_sgd_bound(&c, too_big), Err(TheoryError::PreconditionViolated(_))));
    let gamma = theory::momentum_gamma_cap(&c);
    assert!(matches!(theory::momentum_step_caps(&c, gamma * 1.01), Err(TheoryError::PreconditionViolated(_))));
    let cap = theory::momentum_step_caps(&c, gamma).unwrap();
    assert!(matches!(theory::momentum_bound(&c, gamma, cap * 1.01), Err(TheoryError::PreconditionViolated(_))));

    for bad in [
        ProblemConstants { nu_ps: 1.5, ..c.clone() },
        ProblemConstants { delta: 0.5, ..c.clone() },
        ProblemConstants { m: 0, ..c.clone() },
        ProblemConstants { eps: 0.0, ..c.clone() },
        ProblemConstants { beta: 0.0, ..c.clone() },
        ProblemConstants { l: f64::NAN, ..c.clone() },
    ] {
        assert!(matches!(theory::minibatch_complexity(&bad), Err(TheoryError::InvalidParameter(_))));
    }
}

#[test]
fn table_lists_three_methods() {
    let rows = theory::theory_table(&constants()).unwrap();
    let names: Vec<&str> = rows.iter().map(|r| r.algorithm.as_str()).collect();
    assert_eq!(names, ["minibatch", "local_sgd", "local_sgd_m"]);
    assert!(rows.iter().all(|r| r.bound.is_some_and(|b| b.is_finite() && b > 0.0)));
}

#[test]
fn constants_serialize_with_symbol_names() {
    let json = serde_json::to_value(constants()).unwrap();
    for key in ["L", "M", "K", "T", "sigma", "c_inf", "nu_ps"] {
        assert!(json.get(key).is_some(), "{key}");
    }
    let back: ProblemConstants = serde_json::from_value(json).unwrap();
    assert_eq!(back, constants());
}

#[test]
fn loglog_slope_recovers_power_law() {
    let xs = [1.0, 3.0, 10.0, 30.0, 100.0];
    let ys: Vec<f64> = xs.iter().map(|x: &f64| 5.0 * x.powf(-0.75)).collect();
    assert_relative_eq!(theory::loglog_slope(&xs, &ys).unwrap(), -0.75, epsilon = 1e-12);
    assert!(theory::loglog_slope(&[1.0], &[1.0]).is_err());
    assert!(theory::loglog_slope(&[1.0, 2.0], &[1.0, 0.0]).is_err());
}

#[test]
fn verifier_small_cases() {
    let problem = objectives::generate_synthetic(2, 3, 0.2, 0.01).unwrap();
    let kernels = vec![markov::two_state(0.2).unwrap(); 3];
    let w = vec![0.1; 10];
    let key = RngKey::new(1, Domain::Verify, 9);
    let r = theory::verify_gradient_error_bound(&kernels, &problem, &w, 20, 4000, StartMode::Stationary, None, key).unwrap();
    assert!(r.holds && r.measured_mse > 0.0);
    assert_relative_eq!(r.product.c_infinity, 1.6f64.powi(3), max_relative = 1e-10);
    assert_relative_eq!(r.sigma_sq, theory::synthetic_sigma_sq(&problem, &kernels, &w).unwrap(), max_relative = 1e-15);

    // same key, same measurement
    let again = theory::verify_gradient_error_bound(&kernels, &problem, &w, 20, 4000, StartMode::Stationary, None, key).unwrap();
    assert_eq!(r, again);

    let forced = theory::verify_gradient_error_bound(&kernels, &problem, &w, 20, 4000, StartMode::Stationary, Some(1e-9), key).unwrap();
    assert!(!forced.holds);

    assert!(matches!(
        theory::verify_gradient_error_bound(&kernels, &problem, &w, 20, 10, StartMode::Fixed(0), None, key),
        Err(TheoryError::Unsupported(_))
    ));
    let too_many = vec![markov::two_state(0.2).unwrap(); 4];
    assert!(theory::verify_gradient_error_bound(&too_many, &problem, &w, 20, 10, StartMode::Stationary, None, key).is_err());
}

#[test]
fn verifier_error_falls_with_local_steps() {
    let problem = objectives::generate_synthetic(3, 2, 0.3, 0.01).unwrap();
    let kernels = vec![markov::two_state(0.3).unwrap(); 2];
    let w = vec![-0.2; 10];
    let key = RngKey::new(2, Domain::Verify, 9);
    let mse = |k| theory::verify_gradient_error_bound(&kernels, &problem, &w, k, 4000, StartMode::Stationary, None, key).unwrap().measured_mse;
    let slope = theory::loglog_slope(&[10.0, 100.0, 1000.0], &[mse(10), mse(100), mse(1000)]).unwrap();
    assert!((-1.2..=-0.8).contains(&slope), "slope {slope}");
}

fn regression(rows_per_client: &[Vec<RegressionSample>]) -> RegressionProblem {
    let clients = rows_per_client.iter().map(|r| RegressionClient::new(r.clone().into()).unwrap()).collect();
    RegressionProblem::new(clients, 0.01).unwrap()
}

#[test]
fn estimated_constants_on_known_problems() {
    let mut rng = RngKey::new(4, Domain::Verify, 0).rng();
    let rows: Vec<RegressionSample> = (0..30)
        .map(|_| RegressionSample { x: std::array::from_fn(|_| uniform(&mut rng, -1.0, 1.0)), y: uniform(&mut rng, -1.0, 1.0) })
        .collect();
    let max_sq = rows.iter().map(|r| r.x.iter().map(|v| v * v).sum::<f64>()).fold(0.0, f64::max);
    let kernels = vec![markov::two_state(0.3).unwrap(); 3];
    let grid = theory::random_grid(9, 20, -1.0, 1.0, 5);
    let w0 = vec![0.0; 9];

    // identical clients: no dissimilarity beyond the global gradient
    let same = regression(&[rows.clone(), rows.clone(), rows.clone()]);
    let c = theory::estimate_constants(&same, &kernels, &grid, &w0, 2000, RngKey::new(1, Domain::Verify, 1)).unwrap();
    assert!(c.l > 0.0 && c.l <= 2.0 * max_sq + 0.01 + 1e-12);
    assert!(c.theta < 1e-9);
    assert_relative_eq!(c.delta, 1.0, epsilon = 1e-12);
    assert!(c.delta0 >= 0.0);
    assert_eq!(c.m, 3);
    assert_relative_eq!(c.c_inf, 1.4f64.powi(3), max_relative = 1e-10);

    // a single repeated row has no sampling noise
    let flat = regression(&vec![vec![rows[0]; 5]; 3]);
    let c = theory::estimate_constants(&flat, &kernels, &grid, &w0, 200, RngKey::new(1, Domain::Verify, 1)).unwrap();
    assert!(c.sigma < 1e-12);

    // shifted targets give heterogeneity
    let shifted: Vec<RegressionSample> = rows.iter().map(|r| RegressionSample { x: r.x, y: r.y + 3.0 }).collect();
    let mixed = regression(&[rows.clone(), shifted, rows]);
    let c = theory::estimate_constants(&mixed, &kernels, &grid, &w0, 200, RngKey::new(1, Domain::Verify, 1)).unwrap();
    assert!(c.theta > 0.1);
}

#[test]
fn nnls_fits() {
    let x = [0.0, 1.0, 2.0, 3.0];
    let y = [1.0, 3.0, 5.0, 7.0];
    let (a, b) = theory::nnls_intercept_slope(&x, &y);
    assert_relative_eq!(a, 1.0, epsilon = 1e-12);
    assert_relative_eq!(b, 2.0, epsilon = 1e-12);
    let (a, b) = theory::nnls_intercept_slope(&x, &[3.0, 2.0, 1.0, 0.0]);
    assert!(a >= 0.0 && b == 0.0);
}
