//! Random-walk Metropolis reference sampler.
//!
//! Chains advance in lockstep so that their proposals can be evaluated as one
//! batch through the emulator bank; each chain owns an RNG substream, so
//! results do not depend on scheduling.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::calibration::{mean_cov_columns, GaussianSummary, ObservationSet, ParameterSpace};
use crate::error::{Error, Result};
use crate::linalg;
use crate::operator::ObservationOperator;
use crate::rng::{self, tags};

/// Unnormalized log density on `R^d`. `f64::NEG_INFINITY` marks points
/// outside the support.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;

    fn log_density(&self, theta: &[f64]) -> f64;

    /// Log density at the columns of `thetas`.
    fn log_density_batch(&self, thetas: &DMatrix<f64>) -> Vec<f64> {
        thetas.column_iter().map(|c| self.log_density(c.as_slice())).collect()
    }
}

/// Gaussian restricted to the box of a parameter space (unnormalized).
#[derive(Debug, Clone)]
pub struct TruncatedGaussian {
    pub space: Arc<ParameterSpace>,
    pub gaussian: GaussianSummary,
    chol: Cholesky<f64, nalgebra::Dyn>,
}

impl TruncatedGaussian {
    pub fn new(space: Arc<ParameterSpace>, gaussian: GaussianSummary) -> Result<Self> {
        if gaussian.dim() != space.dim() {
            return Err(Error::DimensionMismatch(format!(
                "prior has {} dimensions, space {}",
                gaussian.dim(),
                space.dim()
            )));
        }
        let chol = Cholesky::new(gaussian.cov.clone())
            .ok_or_else(|| Error::InvalidInput("prior covariance must be positive definite".into()))?;
        Ok(Self { space, gaussian, chol })
    }

    pub fn log_prior(&self, theta: &[f64]) -> f64 {
        if !self.space.contains(theta) {
            return f64::NEG_INFINITY;
        }
        let r = DVector::from_column_slice(theta) - &self.gaussian.mean;
        -0.5 * r.dot(&self.chol.solve(&r))
    }

    /// A draw from the prior, by rejection (clamped after 1000 misses).
    pub fn sample<G: rand::Rng + ?Sized>(&self, rng: &mut G) -> DVector<f64> {
        let d = self.space.dim();
        let l = self.chol.l();
        let mut x = DVector::zeros(d);
        for _ in 0..1000 {
            x = &self.gaussian.mean + &l * linalg::standard_normal_vector(rng, d);
            if self.space.contains(x.as_slice()) {
                return x;
            }
        }
        self.space.clamp_in_place(x.as_mut_slice());
        x
    }
}

/// Gaussian log-likelihood of `obs` with mean `m̄(θ)` and covariance
/// `R + diag(k̄(θ))`.
pub fn log_likelihood(mean: &[f64], var: &[f64], obs: &ObservationSet) -> f64 {
    let p = obs.len();
    let mut s = obs.noise_cov().clone();
    for i in 0..p {
        s[(i, i)] += var[i].max(0.0);
    }
    let Some(chol) = Cholesky::new(s) else { return f64::NEG_INFINITY };
    let r = obs.y() - DVector::from_column_slice(mean);
    let log_det: f64 = chol.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
    -0.5 * (r.dot(&chol.solve(&r)) + log_det + p as f64 * (2.0 * std::f64::consts::PI).ln())
}

/// Posterior through a measurement operator: truncated Gaussian prior plus
/// the emulator-aware Gaussian likelihood.
pub struct OperatorPosterior<'a> {
    pub op: &'a dyn ObservationOperator,
    pub obs: &'a ObservationSet,
    pub prior: &'a TruncatedGaussian,
}

impl LogDensity for OperatorPosterior<'_> {
    fn dim(&self) -> usize {
        self.prior.space.dim()
    }

    fn log_density(&self, theta: &[f64]) -> f64 {
        self.log_density_batch(&DMatrix::from_column_slice(theta.len(), 1, theta))[0]
    }

    fn log_density_batch(&self, thetas: &DMatrix<f64>) -> Vec<f64> {
        let priors: Vec<f64> = thetas.column_iter().map(|c| self.prior.log_prior(c.as_slice())).collect();
        let inside: Vec<usize> = (0..thetas.ncols()).filter(|&j| priors[j].is_finite()).collect();
        let mut out = vec![f64::NEG_INFINITY; thetas.ncols()];
        if inside.is_empty() {
            return out;
        }
        let sub = thetas.select_columns(&inside);
        let Ok((m, v)) = self.op.evaluate(&sub) else { return out };
        for (k, &j) in inside.iter().enumerate() {
            let ll = log_likelihood(m.column(k).as_slice(), v.column(k).as_slice(), self.obs);
            out[j] = priors[j] + ll;
        }
        out
    }
}

pub fn log_posterior(theta: &[f64], op: &dyn ObservationOperator, obs: &ObservationSet, prior: &TruncatedGaussian) -> f64 {
    OperatorPosterior { op, obs, prior }.log_density(theta)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcConfig {
    pub n_chains: usize,
    pub n_samples: usize,
    pub burn_in: usize,
    pub thin: usize,
    /// Proposal standard deviations; defaults to 10% of the prior sd.
    pub proposal_scale: Option<Vec<f64>>,
    /// Adapt the proposal during burn-in: a Robbins-Monro global factor
    /// times a full-covariance shape from the chain's recent spread.
    pub adapt: bool,
    pub target_acceptance: f64,
    /// Prior draws scored per chain; the chain starts at the best one.
    pub start_candidates: usize,
    pub seed: u64,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            n_chains: 10,
            n_samples: 40_000,
            burn_in: 10_000,
            thin: 10,
            proposal_scale: None,
            adapt: true,
            target_acceptance: 0.25,
            start_candidates: 100,
            seed: 0,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_chains == 0 || self.thin == 0 || self.start_candidates == 0 || self.burn_in >= self.n_samples {
            return Err(Error::InvalidInput(format!(
                "need n_chains ≥ 1, thin ≥ 1, start_candidates ≥ 1 and burn_in < n_samples (got {}, {}, {}, {} / {})",
                self.n_chains, self.thin, self.start_candidates, self.burn_in, self.n_samples
            )));
        }
        if !(self.target_acceptance > 0.0 && self.target_acceptance < 1.0) {
            return Err(Error::InvalidInput("target_acceptance must lie in (0, 1)".into()));
        }
        Ok(())
    }

    pub fn kept_per_chain(&self) -> usize {
        (self.n_samples - self.burn_in) / self.thin
    }
}

#[derive(Debug, Clone)]
pub struct McmcResult {
    /// Post-burn-in thinned draws, one `kept × d` matrix per chain.
    pub chains: Vec<DMatrix<f64>>,
    /// Post-burn-in acceptance rate per chain.
    pub acceptance_rates: Vec<f64>,
    pub rhat: Vec<f64>,
    pub ess: Vec<f64>,
    /// Final proposal standard deviations per chain.
    pub proposal_scales: Vec<Vec<f64>>,
    pub warnings: Vec<String>,
}

impl McmcResult {
    /// Pooled draws (`n_chains·kept × d`).
    pub fn samples(&self) -> DMatrix<f64> {
        let d = self.chains[0].ncols();
        let rows: usize = self.chains.iter().map(|c| c.nrows()).sum();
        let mut out = DMatrix::zeros(rows, d);
        let mut r = 0;
        for c in &self.chains {
            out.rows_mut(r, c.nrows()).copy_from(c);
            r += c.nrows();
        }
        out
    }

    pub fn summary(&self) -> Result<GaussianSummary> {
        mean_cov_columns(&self.samples().transpose())
    }

    pub fn diagnostics_json(&self, config_hash: Option<&str>, names: &[String]) -> serde_json::Value {
        let s = self.summary().ok();
        serde_json::json!({
            "config_hash": config_hash,
            "parameter_names": names,
            "n_samples": self.chains.iter().map(|c| c.nrows()).sum::<usize>(),
            "acceptance_rates": self.acceptance_rates,
            "rhat": self.rhat,
            "ess": self.ess,
            "proposal_scales": self.proposal_scales,
            "posterior": s,
            "warnings": self.warnings,
        })
    }
}

/// Burn-in steps before the proposal shape follows the chain's own spread.
const SHAPE_WARMUP: usize = 200;
/// Effective memory (in steps) of the spread estimate.
const SHAPE_WINDOW: f64 = 1000.0;
/// Smallest proposal shape, relative to the initial scale.
const SHAPE_FLOOR: f64 = 1e-3;

struct ChainState {
    rng: rng::Rng,
    x: DVector<f64>,
    logp: f64,
    /// Lower-triangular proposal shape.
    shape: DMatrix<f64>,
    log_factor: f64,
    /// Exponentially weighted moments of the chain during burn-in.
    ew_mean: DVector<f64>,
    ew_cov: DMatrix<f64>,
    accepted: usize,
    proposed: usize,
    kept: Vec<f64>,
}

/// Run `cfg.n_chains` random-walk Metropolis chains on `target`, starting
/// from `starts` (one per chain).
pub fn run_mcmc_on(target: &dyn LogDensity, starts: &[DVector<f64>], base_scale: &[f64], cfg: &McmcConfig) -> Result<McmcResult> {
    cfg.validate()?;
    let d = target.dim();
    if starts.len() != cfg.n_chains || base_scale.len() != d || starts.iter().any(|s| s.len() != d) {
        return Err(Error::DimensionMismatch("chain starts or proposal scale do not match the target".into()));
    }
    let init = DMatrix::from_columns(starts);
    let init_logp = target.log_density_batch(&init);
    if let Some(c) = init_logp.iter().position(|l| !l.is_finite()) {
        return Err(Error::InvalidInput(format!("chain {c} starts outside the support")));
    }
    let mut chains: Vec<ChainState> = (0..cfg.n_chains)
        .map(|c| ChainState {
            rng: rng::substream(cfg.seed, &[tags::MCMC_CHAIN, c as u64, 1]),
            x: starts[c].clone(),
            logp: init_logp[c],
            shape: DMatrix::from_diagonal(&DVector::from_column_slice(base_scale)),
            log_factor: 0.0,
            ew_mean: starts[c].clone(),
            ew_cov: DMatrix::zeros(d, d),
            accepted: 0,
            proposed: 0,
            kept: Vec::with_capacity(cfg.kept_per_chain() * d),
        })
        .collect();

    let mut proposals = DMatrix::zeros(d, cfg.n_chains);
    let mut uniforms = vec![0.0; cfg.n_chains];
    for t in 0..cfg.n_samples {
        for (c, ch) in chains.iter_mut().enumerate() {
            let z = linalg::standard_normal_vector(&mut ch.rng, d);
            proposals.set_column(c, &(&ch.x + &ch.shape * z * ch.log_factor.exp()));
            uniforms[c] = ch.rng.gen::<f64>();
        }
        let logp = target.log_density_batch(&proposals);
        let burning = t < cfg.burn_in;
        for (c, ch) in chains.iter_mut().enumerate() {
            let accept = logp[c].is_finite() && uniforms[c].ln() < logp[c] - ch.logp;
            if accept {
                ch.x = proposals.column(c).into_owned();
                ch.logp = logp[c];
            }
            if burning {
                if cfg.adapt {
                    let gamma = 1.0 / ((t + 1) as f64).powf(0.6);
                    ch.log_factor += gamma * (f64::from(u8::from(accept)) - cfg.target_acceptance);
                    let w = (1.0 / (t + 1) as f64).max(1.0 / SHAPE_WINDOW);
                    let delta = &ch.x - &ch.ew_mean;
                    ch.ew_mean += w * &delta;
                    ch.ew_cov = (1.0 - w) * (&ch.ew_cov + w * &delta * delta.transpose());
                    if t + 1 >= SHAPE_WARMUP {
                        let mut c = ch.ew_cov.clone();
                        for k in 0..d {
                            c[(k, k)] += (SHAPE_FLOOR * base_scale[k]).powi(2);
                        }
                        if let Some(l) = Cholesky::new(c) {
                            ch.shape = l.l() * (2.38 / (d as f64).sqrt());
                        }
                    }
                }
            } else {
                ch.proposed += 1;
                ch.accepted += usize::from(accept);
                if (t - cfg.burn_in + 1) % cfg.thin == 0 {
                    ch.kept.extend(ch.x.iter());
                }
            }
        }
    }

    let mut warnings = Vec::new();
    let acceptance_rates: Vec<f64> = chains.iter().map(|c| c.accepted as f64 / c.proposed.max(1) as f64).collect();
    for (c, a) in acceptance_rates.iter().enumerate() {
        if *a < 0.01 {
            let msg = format!("ZeroAcceptance: chain {c} accepted {:.2}% of proposals", 100.0 * a);
            log::warn!("{msg}");
            warnings.push(msg);
        }
    }
    let draws: Vec<DMatrix<f64>> = chains.iter().map(|c| DMatrix::from_row_slice(c.kept.len() / d, d, &c.kept)).collect();
    let rhat = (0..d).map(|k| gelman_rubin(&draws.iter().map(|m| m.column(k).iter().copied().collect::<Vec<_>>()).collect::<Vec<_>>())).collect();
    let ess = (0..d)
        .map(|k| draws.iter().map(|m| effective_sample_size(&m.column(k).iter().copied().collect::<Vec<_>>())).sum())
        .collect();
    let proposal_scales = chains
        .iter()
        .map(|c| c.shape.row_iter().map(|r| r.norm() * c.log_factor.exp()).collect())
        .collect();
    Ok(McmcResult { chains: draws, acceptance_rates, rhat, ess, proposal_scales, warnings })
}

/// Sample the emulator posterior. Each chain starts at the highest-density
/// point among its own `start_candidates` prior draws.
pub fn run_mcmc(cfg: &McmcConfig, op: &dyn ObservationOperator, obs: &ObservationSet, prior: &TruncatedGaussian) -> Result<McmcResult> {
    let d = prior.space.dim();
    if op.input_dim() != d || op.output_dim() != obs.len() {
        return Err(Error::DimensionMismatch(format!(
            "operator maps {} -> {}, problem is {d} -> {}",
            op.input_dim(),
            op.output_dim(),
            obs.len()
        )));
    }
    let target = OperatorPosterior { op, obs, prior };
    let base: Vec<f64> = match &cfg.proposal_scale {
        Some(s) => s.clone(),
        None => prior.gaussian.std_devs().iter().map(|s| 0.1 * s).collect(),
    };
    let starts: Vec<DVector<f64>> = (0..cfg.n_chains)
        .map(|c| {
            let mut g = rng::substream(cfg.seed, &[tags::MCMC_CHAIN, c as u64, 0]);
            let draws = DMatrix::from_columns(&(0..cfg.start_candidates.max(1)).map(|_| prior.sample(&mut g)).collect::<Vec<_>>());
            let logp = target.log_density_batch(&draws);
            let best = (0..logp.len()).fold(0, |b, i| if logp[i] > logp[b] { i } else { b });
            draws.column(best).into_owned()
        })
        .collect();
    run_mcmc_on(&target, &starts, &base, cfg)
}

/// Potential scale reduction factor over equally long chains.
pub fn gelman_rubin(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len();
    let n = chains.iter().map(Vec::len).min().unwrap_or(0);
    if m < 2 || n < 2 {
        return f64::NAN;
    }
    let means: Vec<f64> = chains.iter().map(|c| c[..n].iter().sum::<f64>() / n as f64).collect();
    let grand = means.iter().sum::<f64>() / m as f64;
    let b = n as f64 / (m - 1) as f64 * means.iter().map(|x| (x - grand).powi(2)).sum::<f64>();
    let w = chains
        .iter()
        .zip(&means)
        .map(|(c, mu)| c[..n].iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (n - 1) as f64)
        .sum::<f64>()
        / m as f64;
    if w == 0.0 {
        return if b == 0.0 { 1.0 } else { f64::INFINITY };
    }
    let var_plus = (n - 1) as f64 / n as f64 * w + b / n as f64;
    (var_plus / w).sqrt()
}

/// Effective sample size by Geyer's initial positive sequence.
pub fn effective_sample_size(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 4 {
        return n as f64;
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let c0 = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    if c0 == 0.0 {
        return n as f64;
    }
    let rho = |lag: usize| (0..n - lag).map(|i| (x[i] - mean) * (x[i + lag] - mean)).sum::<f64>() / (n as f64 * c0);
    let mut tau = -1.0;
    let mut k = 0;
    while 2 * k + 1 < n {
        let pair = rho(2 * k) + rho(2 * k + 1);
        if pair <= 0.0 {
            break;
        }
        tau += 2.0 * pair;
        k += 1;
    }
    n as f64 / tau.max(1e-12)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::LinearOperator;

    struct StdNormal;
    impl LogDensity for StdNormal {
        fn dim(&self) -> usize {
            1
        }
        fn log_density(&self, t: &[f64]) -> f64 {
            -0.5 * t[0] * t[0]
        }
    }

    #[test]
    fn standard_gaussian_target() {
        let cfg = McmcConfig { n_chains: 4, n_samples: 60_000, burn_in: 5_000, thin: 5, seed: 3, ..Default::default() };
        let starts: Vec<_> = [-2.0, -0.5, 0.5, 2.0].iter().map(|&s| DVector::from_element(1, s)).collect();
        let r = run_mcmc_on(&StdNormal, &starts, &[0.5], &cfg).unwrap();
        let s = r.summary().unwrap();
        assert!(s.mean[0].abs() < 0.05, "{}", s.mean[0]);
        assert!((s.cov[(0, 0)] - 1.0).abs() < 0.1, "{}", s.cov[(0, 0)]);
        assert!(r.rhat[0] < 1.05);
        assert_eq!(r.samples().nrows(), 4 * cfg.kept_per_chain());
        assert!(r.acceptance_rates.iter().all(|a| (a - 0.25).abs() < 0.1), "{:?}", r.acceptance_rates);
    }

    struct Ridge;
    impl LogDensity for Ridge {
        fn dim(&self) -> usize {
            2
        }
        fn log_density(&self, t: &[f64]) -> f64 {
            let rho: f64 = -0.97;
            let (a, b) = (t[0], t[1] / 10.0);
            -0.5 * (a * a - 2.0 * rho * a * b + b * b) / (1.0 - rho * rho)
        }
    }

    #[test]
    fn correlated_target_is_mixed() {
        let cfg = McmcConfig { n_chains: 4, n_samples: 40_000, burn_in: 10_000, thin: 5, seed: 5, ..Default::default() };
        let starts: Vec<_> = [[-1.0, 10.0], [1.0, -10.0], [0.0, 0.0], [2.0, -20.0]].iter().map(|s| DVector::from_row_slice(s)).collect();
        let r = run_mcmc_on(&Ridge, &starts, &[0.1, 1.0], &cfg).unwrap();
        let s = r.summary().unwrap();
        let sd = s.std_devs();
        assert!((sd[0] - 1.0).abs() < 0.1 && (sd[1] - 10.0).abs() < 1.0, "{sd:?}");
        let corr = s.cov[(0, 1)] / (sd[0] * sd[1]);
        assert!((corr + 0.97).abs() < 0.01, "{corr}");
        assert!(r.rhat.iter().all(|&v| v < 1.05), "{:?}", r.rhat);
    }

    #[test]
    fn tiny_proposals_accept_nearly_everything() {
        let cfg = McmcConfig { n_chains: 2, n_samples: 2000, burn_in: 100, thin: 1, adapt: false, ..Default::default() };
        let starts = vec![DVector::from_element(1, 0.0); 2];
        let r = run_mcmc_on(&StdNormal, &starts, &[1e-4], &cfg).unwrap();
        assert!(r.acceptance_rates.iter().all(|&a| a > 0.99));
        assert!(r.ess[0] < 100.0, "{}", r.ess[0]);
    }

    struct Steps([f64; 5]);
    impl LogDensity for Steps {
        fn dim(&self) -> usize {
            1
        }
        fn log_density(&self, t: &[f64]) -> f64 {
            if (0.0..5.0).contains(&t[0]) {
                self.0[t[0] as usize].ln()
            } else {
                f64::NEG_INFINITY
            }
        }
    }

    #[test]
    fn discrete_target_stationary_distribution() {
        let w = [1.0, 2.0, 3.0, 1.5, 0.5];
        let total: f64 = w.iter().sum();
        let cfg = McmcConfig { n_chains: 1, n_samples: 1_000_000, burn_in: 1000, thin: 1, adapt: false, seed: 8, ..Default::default() };
        let r = run_mcmc_on(&Steps(w), &[DVector::from_element(1, 2.5)], &[1.5], &cfg).unwrap();
        let s = r.samples();
        let mut counts = [0usize; 5];
        for v in s.column(0).iter() {
            counts[*v as usize] += 1;
        }
        for k in 0..5 {
            let freq = counts[k] as f64 / s.nrows() as f64;
            assert!((freq - w[k] / total).abs() < 0.02, "state {k}: {freq}");
        }
    }

    #[test]
    fn out_of_support_and_zero_residual() {
        let space = Arc::new(ParameterSpace::toy());
        let prior = TruncatedGaussian::new(space, GaussianSummary::isotropic(DVector::zeros(2), 1.0).unwrap()).unwrap();
        let op = LinearOperator::new(DMatrix::from_row_slice(1, 2, &[1.0, 0.0]));
        let obs = ObservationSet::with_diagonal_noise(DVector::from_element(1, 0.0), &[0.2], vec!["y".into()]).unwrap();
        assert_eq!(log_posterior(&[6.0, 0.0], &op, &obs, &prior), f64::NEG_INFINITY);
        let ll = log_likelihood(&[0.0], &[0.0], &obs);
        assert!((ll + 0.5 * (2.0 * std::f64::consts::PI * 0.04).ln()).abs() < 1e-12);
    }

    #[test]
    fn chains_are_seeded() {
        let cfg = McmcConfig { n_chains: 3, n_samples: 500, burn_in: 100, thin: 2, seed: 4, ..Default::default() };
        let starts = vec![DVector::from_element(1, 0.0); 3];
        let a = run_mcmc_on(&StdNormal, &starts, &[1.0], &cfg).unwrap();
        let b = run_mcmc_on(&StdNormal, &starts, &[1.0], &cfg).unwrap();
        assert_eq!(a.chains, b.chains);
        assert_ne!(a.chains[0], a.chains[1]);
    }

    #[test]
    fn rhat_detects_separated_chains() {
        let a: Vec<f64> = (0..100).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = a.iter().map(|v| v + 5.0).collect();
        assert!(gelman_rubin(&[a.clone(), b]) > 2.0);
        assert!(gelman_rubin(&[a.clone(), a]) < 1.01);
    }

    #[test]
    fn invalid_config() {
        let cfg = McmcConfig { burn_in: 10, n_samples: 10, ..Default::default() };
        assert!(cfg.validate().is_err());
    }
}
