use fedstream::algorithms::{self, AlgoError, Algorithm, FedConfig, Schedule, TrajectoryResult};
use fedstream::experiment::{run_synthetic, synthetic_streams};
use fedstream::objectives::{
    self, norm_sq, FederatedProblem, RegressionClient, RegressionProblem, RegressionSample, SampleStream,
};
use fedstream::rng::{uniform, Domain, RngKey};

fn regression(clients: usize, rows: usize, seed: u64) -> RegressionProblem {
    let mut rng = RngKey::new(seed, Domain::Verify, 0).rng();
    let clients = (0..clients)
        .map(|m| {
            let shift = m as f64 * 0.3;
            let rows: Vec<RegressionSample> = (0..rows)
                .map(|_| {
                    let x: [f64; 9] = std::array::from_fn(|_| uniform(&mut rng, -1.0, 1.0));
                    let y = x.iter().enumerate().map(|(j, v)| v * (j as f64 * 0.1 - shift)).sum::<f64>() + uniform(&mut rng, -0.1, 0.1);
                    RegressionSample { x, y }
                })
                .collect();
            RegressionClient::new(rows.into()).unwrap()
        })
        .collect();
    RegressionProblem::new(clients, 0.01).unwrap()
}

fn run_reg(config: &FedConfig, problem: &RegressionProblem) -> TrajectoryResult {
    let mut streams: Vec<_> = (0..problem.num_clients()).map(|m| problem.stream(m)).collect();
    algorithms::run(config, problem, &mut streams).unwrap()
}

fn grad(problem: &RegressionProblem, m: usize, w: &[f64], row: usize) -> Vec<f64> {
    let s = &problem.clients[m].rows[row];
    objectives::regression_sample_grad(w, &s.x, s.y, problem.lambda).unwrap()
}

/// Textbook form of each method: explicit local iterates, control variates
/// and momentum buffers, reading rows cyclically.
fn reference(config: &FedConfig, problem: &RegressionProblem) -> Vec<f64> {
    let (mm, k, d) = (config.clients, config.local_steps, 9);
    let mut pos = vec![0usize; mm];
    let mut next = |m: usize| {
        let r = pos[m];
        pos[m] = (r + 1) % problem.clients[m].rows.len();
        r
    };
    let mut w = config.w0.clone();
    let mut v = vec![0.0; d];
    let mut c = vec![0.0; d];
    let mut cm = vec![vec![0.0; d]; mm];
    for _ in 0..config.rounds {
        match config.algorithm {
            Algorithm::Minibatch => {
                let mut g = vec![0.0; d];
                for m in 0..mm {
                    for _ in 0..k {
                        let gi = grad(problem, m, &w, next(m));
                        g.iter_mut().zip(&gi).for_each(|(a, b)| *a += b / (mm * k) as f64);
                    }
                }
                w.iter_mut().zip(&g).for_each(|(a, b)| *a -= config.gamma * b);
            }
            Algorithm::LocalSgd => {
                let mut avg = vec![0.0; d];
                for m in 0..mm {
                    let mut y = w.clone();
                    for _ in 0..k {
                        let gi = grad(problem, m, &y, next(m));
                        y.iter_mut().zip(&gi).for_each(|(a, b)| *a -= config.eta * b);
                    }
                    avg.iter_mut().zip(&y).for_each(|(a, b)| *a += b / mm as f64);
                }
                w = avg;
            }
            Algorithm::LocalSgdM => {
                let mut v_next = vec![0.0; d];
                for m in 0..mm {
                    let mut y = w.clone();
                    for _ in 0..k {
                        let gi = grad(problem, m, &y, next(m));
                        let dir: Vec<f64> = gi.iter().zip(&v).map(|(g, vt)| config.beta * g + (1.0 - config.beta) * vt).collect();
                        y.iter_mut().zip(&dir).for_each(|(a, b)| *a -= config.eta * b);
                        v_next.iter_mut().zip(&dir).for_each(|(a, b)| *a += b / (mm * k) as f64);
                    }
                }
                v = v_next;
                w.iter_mut().zip(&v).for_each(|(a, b)| *a -= config.gamma * b);
            }
            Algorithm::Scaffold => {
                let mut dw = vec![0.0; d];
                let mut dc = vec![0.0; d];
                for m in 0..mm {
                    let mut y = w.clone();
                    for _ in 0..k {
                        let gi = grad(problem, m, &y, next(m));
                        for j in 0..d {
                            y[j] -= config.eta * (gi[j] - cm[m][j] + c[j]);
                        }
                    }
                    for j in 0..d {
                        let updated = cm[m][j] - c[j] + (w[j] - y[j]) / (k as f64 * config.eta);
                        dc[j] += (updated - cm[m][j]) / mm as f64;
                        cm[m][j] = updated;
                        dw[j] += (y[j] - w[j]) / mm as f64;
                    }
                }
                for j in 0..d {
                    w[j] += dw[j];
                    c[j] += dc[j];
                }
            }
        }
    }
    w
}

#[test]
fn matches_reference_implementation() {
    let problem = regression(4, 23, 1);
    for alg in Algorithm::ALL {
        let mut c = FedConfig::new(alg, 4, 5, 30, 9);
        c.gamma = 0.05;
        c.eta = 0.01;
        c.beta = 0.3;
        c.w0 = vec![0.2; 9];
        let got = run_reg(&c, &problem).final_iterate;
        let want = reference(&c, &problem);
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() <= 1e-10 * b.abs().max(1.0), "{alg}: {a} vs {b}");
        }
    }
}

#[test]
fn identities_hold_on_regression() {
    let problem = regression(3, 17, 2);
    let eta = 0.02;
    let mut ls1 = FedConfig::new(Algorithm::LocalSgd, 3, 1, 25, 9);
    ls1.eta = eta;
    let mut mb = FedConfig::new(Algorithm::Minibatch, 3, 1, 25, 9);
    mb.gamma = eta;
    assert_eq!(run_reg(&ls1, &problem), run_reg(&mb, &problem));

    let k = 6;
    let mut ls = FedConfig::new(Algorithm::LocalSgd, 3, k, 25, 9);
    ls.eta = eta;
    let mut lsm = ls.clone();
    lsm.algorithm = Algorithm::LocalSgdM;
    lsm.beta = 1.0;
    lsm.gamma = eta * k as f64;
    assert_eq!(run_reg(&ls, &problem), run_reg(&lsm, &problem));

    ls.rounds = 1;
    let mut sc = ls.clone();
    sc.algorithm = Algorithm::Scaffold;
    assert_eq!(run_reg(&ls, &problem).final_iterate, run_reg(&sc, &problem).final_iterate);
}

#[test]
fn each_client_draws_exactly_tk_samples() {
    for alg in Algorithm::ALL {
        let mut c = FedConfig::new(alg, 3, 7, 11, 10);
        c.seed = 5;
        let problem = objectives::generate_synthetic(5, 3, 0.2, 0.01).unwrap();
        let mut streams = synthetic_streams(&problem, 5).unwrap();
        algorithms::run(&c, &problem, &mut streams).unwrap();
        for s in &streams {
            assert_eq!(s.consumed(), 77);
            assert_eq!(s.cursor().counter(), 77);
        }
    }
}

#[test]
fn runs_are_reproducible() {
    for alg in Algorithm::ALL {
        let mut c = FedConfig::new(alg, 4, 5, 40, 10);
        c.seed = 9;
        let a = run_synthetic(&c, 0.1, 0.01).unwrap();
        assert_eq!(a, run_synthetic(&c, 0.1, 0.01).unwrap());
        c.seed = 10;
        assert_ne!(a, run_synthetic(&c, 0.1, 0.01).unwrap());
    }
}

#[test]
fn schedule_does_not_change_results() {
    let problem = objectives::generate_synthetic(3, 6, 0.2, 0.01).unwrap();
    for alg in Algorithm::ALL {
        let c = FedConfig::new(alg, 6, 4, 20, 10);
        let mut s1 = synthetic_streams(&problem, 3).unwrap();
        let mut s2 = synthetic_streams(&problem, 3).unwrap();
        let seq = algorithms::run_with(&c, &problem, &mut s1, Schedule::sequential()).unwrap();
        let par = algorithms::run_with(&c, &problem, &mut s2, Schedule::always_parallel()).unwrap();
        assert_eq!(seq, par);
    }
}

#[test]
fn metric_is_full_gradient_norm() {
    let mut c = FedConfig::new(Algorithm::Minibatch, 3, 4, 5, 10);
    c.seed = 4;
    c.w0 = vec![0.3; 10];
    let result = run_synthetic(&c, 0.25, 0.01).unwrap();
    let problem = objectives::generate_synthetic(4, 3, 0.25, 0.01).unwrap();
    let mut g = vec![0.0; 10];
    for m in 0..3 {
        for (a, b) in g.iter_mut().zip(objectives::synth_true_grad(&problem, m, &c.w0)) {
            *a += b / 3.0;
        }
    }
    assert!((result.records[0].grad_norm_sq - norm_sq(&g)).abs() < 1e-12 * norm_sq(&g));
    assert_eq!(result.records.len(), 5);
    assert!(result.records.iter().enumerate().all(|(i, r)| r.t == i));
}

#[test]
fn duplicated_clients_match_single_client() {
    let one = regression(1, 19, 3);
    let rows = one.clients[0].rows.clone();
    let four = RegressionProblem::new(vec![RegressionClient::new(rows).unwrap(); 4], 0.01).unwrap();
    for alg in Algorithm::ALL {
        let mut c = FedConfig::new(alg, 1, 5, 15, 9);
        c.eta = 0.01;
        let single = run_reg(&c, &one);
        c.clients = 4;
        let many = run_reg(&c, &four);
        for (a, b) in single.final_iterate.iter().zip(&many.final_iterate) {
            assert!((a - b).abs() < 1e-12, "{alg}");
        }
    }
}

#[test]
fn single_client_minibatch_is_plain_sgd() {
    let problem = regression(1, 13, 4);
    let mut c = FedConfig::new(Algorithm::Minibatch, 1, 1, 40, 9);
    c.gamma = 0.03;
    let mut w = vec![0.0; 9];
    for t in 0..40 {
        let g = grad(&problem, 0, &w, t % 13);
        w.iter_mut().zip(&g).for_each(|(a, b)| *a -= 0.03 * b);
    }
    assert_eq!(run_reg(&c, &problem).final_iterate, w);
}

#[test]
fn full_window_minibatch_descends() {
    // K equal to the window length gives the exact local gradient every round.
    let problem = regression(3, 20, 5);
    let mut c = FedConfig::new(Algorithm::Minibatch, 3, 20, 60, 9);
    c.gamma = 0.05;
    c.w0 = vec![1.0; 9];
    let r = run_reg(&c, &problem);
    assert!(r.records.windows(2).all(|w| w[1].train_loss <= w[0].train_loss + 1e-12));
    assert!(r.records.last().unwrap().grad_norm_sq < r.records[0].grad_norm_sq);
}

#[test]
fn output_index_is_uniform() {
    let rounds = 10;
    let n = 20_000;
    let mut counts = vec![0usize; rounds];
    for seed in 0..n {
        counts[algorithms::select_output(rounds, RngKey::new(seed, Domain::Output, 0))] += 1;
    }
    let expected = n as f64 / rounds as f64;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // 99.9% quantile with 9 degrees of freedom
    assert!(chi2 < 27.88, "chi2 {chi2}");
}

#[test]
fn output_iterate_is_recorded_iterate() {
    let problem = regression(2, 10, 6);
    let mut c = FedConfig::new(Algorithm::LocalSgd, 2, 3, 12, 9);
    c.seed = 17;
    let r = run_reg(&c, &problem);
    assert!(r.output_index < 12);
    // the output is the iterate entering the chosen round
    let mut prefix = c.clone();
    prefix.rounds = r.output_index.max(1);
    if r.output_index > 0 {
        assert_eq!(run_reg(&prefix, &problem).final_iterate, r.output_iterate);
    } else {
        assert_eq!(r.output_iterate, c.w0);
    }
}

#[test]
fn rejects_mismatched_inputs() {
    let problem = regression(2, 10, 7);
    let c = FedConfig::new(Algorithm::LocalSgd, 3, 2, 2, 9);
    let mut streams: Vec<_> = (0..2).map(|m| problem.stream(m)).collect();
    assert!(matches!(algorithms::run(&c, &problem, &mut streams), Err(AlgoError::InvalidConfig(_))));
    let c = FedConfig::new(Algorithm::LocalSgd, 2, 2, 2, 9);
    let mut one = vec![problem.stream(0)];
    assert!(matches!(algorithms::run(&c, &problem, &mut one), Err(AlgoError::StreamCount { expected: 2, got: 1 })));
    let c = FedConfig::new(Algorithm::LocalSgd, 2, 2, 2, 10);
    assert!(algorithms::run(&c, &problem, &mut streams).is_err());
}

#[test]
fn large_steps_report_divergence() {
    let problem = regression(2, 10, 8);
    let mut c = FedConfig::new(Algorithm::Minibatch, 2, 5, 500, 9);
    c.gamma = 50.0;
    c.w0 = vec![1.0; 9];
    let mut streams: Vec<_> = (0..2).map(|m| problem.stream(m)).collect();
    assert!(matches!(algorithms::run(&c, &problem, &mut streams), Err(AlgoError::Diverged { .. })));
}
