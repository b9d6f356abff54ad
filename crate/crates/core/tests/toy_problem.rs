use std::sync::Arc;

use emucal_core::enkf::{run_enkf, EnkfResult};
use emucal_core::experiments::{compare_enkf_mcmc, toy_bank, toy_enkf_config, toy_observations, toy_prior};
use emucal_core::forward::{toy_forward, TOY_LOCATIONS, TOY_TRUTH};
use emucal_core::gp::FitOptions;
use emucal_core::mcmc::{log_posterior, run_mcmc, McmcConfig, TruncatedGaussian};
use emucal_core::{EmulatorBank, ObservationOperator, ObservationSet, ParameterSpace};
use nalgebra::DMatrix;

const SIGMA_Y: f64 = 0.05;

fn calibrate(bank: &EmulatorBank, obs: &ObservationSet, seed: u64) -> EnkfResult {
    run_enkf(&toy_enkf_config(500, 50, seed), Arc::new(ParameterSpace::toy()), bank, obs).unwrap()
}

#[test]
fn ten_point_emulator_brackets_the_truth() {
    let bank = toy_bank(10, 0, &FitOptions::default()).unwrap();
    let y = toy_forward(&TOY_TRUTH, &TOY_LOCATIONS);
    for (j, e) in bank.emulators().iter().enumerate() {
        let (m, v) = e.predict(&TOY_TRUTH).unwrap();
        assert!((m - y[j]).abs() <= 3.0 * v.sqrt(), "output {j}: mean {m}, truth {}, sd {}", y[j], v.sqrt());
    }
}

#[test]
fn fifty_point_emulator_calibration_recovers_truth() {
    let bank = toy_bank(50, 1, &FitOptions::default()).unwrap();
    let obs = toy_observations(&TOY_TRUTH, SIGMA_Y, 2).unwrap();
    let r = calibrate(&bank, &obs, 3);
    let sd = r.posterior.std_devs();
    for k in 0..2 {
        assert!((r.posterior.mean[k] - TOY_TRUTH[k]).abs() <= 3.0 * sd[k], "θ{k}: {} ± {}", r.posterior.mean[k], sd[k]);
    }
    for (j, e) in bank.emulators().iter().enumerate() {
        let (m, v) = e.predict(r.posterior.mean.as_slice()).unwrap();
        let y = obs.y()[j];
        assert!((m - y).abs() <= 3.0 * v.sqrt(), "output {j}: predicted {m} ± {}, observed {y}", v.sqrt());
    }
}

#[test]
fn grid_argmax_is_within_one_cell_of_the_ensemble_mean() {
    let bank = toy_bank(50, 1, &FitOptions::default()).unwrap();
    let obs = toy_observations(&TOY_TRUTH, SIGMA_Y, 2).unwrap();
    let space = Arc::new(ParameterSpace::toy());
    let prior = TruncatedGaussian::new(space, toy_prior()).unwrap();
    let r = calibrate(&bank, &obs, 4);

    let n = 101;
    let h = 10.0 / (n - 1) as f64;
    let mut best = (f64::NEG_INFINITY, [0.0; 2]);
    for i in 0..n {
        for j in 0..n {
            let theta = [-5.0 + i as f64 * h, -5.0 + j as f64 * h];
            let lp = log_posterior(&theta, &bank, &obs, &prior);
            if lp > best.0 {
                best = (lp, theta);
            }
        }
    }
    for k in 0..2 {
        assert!((best.1[k] - r.posterior.mean[k]).abs() <= h, "argmax {:?}, mean {}", best.1, r.posterior.mean);
    }
}

#[test]
fn better_emulators_do_not_widen_the_posterior() {
    let obs = toy_observations(&TOY_TRUTH, SIGMA_Y, 5).unwrap();
    let reps = 6u64;
    let traces: Vec<(f64, f64)> = [10, 15, 50]
        .iter()
        .map(|&m| {
            let bank = toy_bank(m, 7, &FitOptions::default()).unwrap();
            let t: Vec<f64> = (0..reps).map(|s| calibrate(&bank, &obs, 100 + s).posterior.cov.trace()).collect();
            let mean = t.iter().sum::<f64>() / reps as f64;
            let var = t.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (reps - 1) as f64;
            (mean, (var / reps as f64).sqrt())
        })
        .collect();
    for w in traces.windows(2) {
        let se = (w[0].1.powi(2) + w[1].1.powi(2)).sqrt();
        assert!(w[1].0 <= w[0].0 + 3.0 * se, "{traces:?}");
    }
}

#[test]
fn mcmc_agrees_with_enkf_on_the_fifty_point_emulator() {
    let bank = toy_bank(50, 1, &FitOptions::default()).unwrap();
    let obs = toy_observations(&TOY_TRUTH, SIGMA_Y, 2).unwrap();
    let space = Arc::new(ParameterSpace::toy());
    let prior = TruncatedGaussian::new(space, toy_prior()).unwrap();
    let e = calibrate(&bank, &obs, 6);
    let m = run_mcmc(&McmcConfig { seed: 8, ..Default::default() }, &bank, &obs, &prior).unwrap();
    let c = compare_enkf_mcmc(&e, &m).unwrap();
    for k in 0..2 {
        assert!(c.mean_difference_se[k].abs() <= 3.0, "{c:?}");
        assert!((c.sd_ratio[k] - 1.0).abs() <= 0.25, "{c:?}");
    }
    assert!(m.rhat.iter().all(|&r| r < 1.1), "{:?}", m.rhat);
}

#[test]
fn bank_batch_equals_pointwise_on_prior_draws() {
    let bank = toy_bank(50, 1, &FitOptions::default()).unwrap();
    let space = Arc::new(ParameterSpace::toy());
    let prior = TruncatedGaussian::new(space, toy_prior()).unwrap();
    let mut g = emucal_core::rng::substream(11, &[1]);
    let draws: Vec<_> = (0..500).map(|_| prior.sample(&mut g)).collect();
    let thetas = DMatrix::from_columns(&draws);
    let (mean, var) = bank.evaluate(&thetas).unwrap();
    for (n, th) in draws.iter().enumerate() {
        for (j, e) in bank.emulators().iter().enumerate() {
            let (m, v) = e.predict(th.as_slice()).unwrap();
            assert!((mean[(j, n)] - m).abs() <= 1e-12 * m.abs().max(1.0));
            assert!((var[(j, n)] - v).abs() <= 1e-12 * e.prior_variance().max(1.0));
        }
    }
}
