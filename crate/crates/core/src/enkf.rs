//! Ensemble Kalman filter for static calibration through a (possibly
//! stochastic) measurement operator.
//!
//! Each iteration perturbs the observation, moves every member by a small
//! random step (`σθ`), evaluates the operator on the predicted ensemble and
//! applies a per-member Kalman update whose innovation covariance includes
//! the operator's predictive variance at that member.
//!
//! Random draws: member `n` at iteration `k` uses the substream
//! `(seed, ENKF_STEP, k, n)` and draws `p` standard normals for the
//! observation perturbation first, then `d` for the parameter step. The
//! initial ensemble uses `(seed, ENKF_INIT, n)`.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{mean_cov_columns, Ensemble, GaussianSummary, ObservationSet, ParameterSpace};
use crate::error::{Error, Result};
use crate::linalg;
use crate::operator::ObservationOperator;
use crate::rng::{self, tags};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Perturbation {
    /// Every member gets its own observation perturbation.
    #[default]
    PerMember,
    /// One perturbation per iteration shared by all members.
    Shared,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnkfConfig {
    pub ensemble_size: usize,
    pub iterations: usize,
    /// Per-parameter pseudo-dynamics step, in parameter units per iteration.
    pub sigma_theta: Vec<f64>,
    pub initial: GaussianSummary,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub record_trajectory: bool,
    /// Keep a copy of the ensemble after every iteration.
    #[serde(default)]
    pub record_ensembles: bool,
    #[serde(default)]
    pub perturbation: Perturbation,
    /// Multiplier of the noise covariance in the perturbation and the gain.
    /// `None` uses the number of iterations.
    #[serde(default)]
    pub noise_scale: Option<f64>,
    /// Include the operator variance in the observation perturbation.
    #[serde(default = "yes")]
    pub perturb_operator_variance: bool,
    #[serde(default = "yes")]
    pub clamp: bool,
}

fn yes() -> bool {
    true
}

impl EnkfConfig {
    pub fn new(ensemble_size: usize, iterations: usize, sigma_theta: Vec<f64>, initial: GaussianSummary, seed: u64) -> Self {
        Self {
            ensemble_size,
            iterations,
            sigma_theta,
            initial,
            seed,
            record_trajectory: false,
            record_ensembles: false,
            perturbation: Perturbation::PerMember,
            noise_scale: None,
            perturb_operator_variance: true,
            clamp: true,
        }
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        if self.ensemble_size < 2 {
            return Err(Error::InvalidInput(format!("ensemble size must be at least 2, got {}", self.ensemble_size)));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidInput("at least one iteration is required".into()));
        }
        if self.sigma_theta.len() != d || self.initial.dim() != d {
            return Err(Error::DimensionMismatch(format!(
                "parameter space has {d} dimensions, sigma_theta {}, initial distribution {}",
                self.sigma_theta.len(),
                self.initial.dim()
            )));
        }
        if self.sigma_theta.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::InvalidInput("sigma_theta must be non-negative".into()));
        }
        if self.noise_scale.is_some_and(|s| !(s.is_finite() && s > 0.0)) {
            return Err(Error::InvalidInput("noise_scale must be positive".into()));
        }
        Ok(())
    }

    pub fn effective_noise_scale(&self) -> f64 {
        self.noise_scale.unwrap_or(self.iterations as f64)
    }
}

/// 0.5% of each parameter's range.
pub fn default_sigma_theta(space: &ParameterSpace) -> Vec<f64> {
    space
        .bounds()
        .iter()
        .map(|&(lo, hi)| if lo.is_finite() && hi.is_finite() { 0.005 * (hi - lo) } else { 0.0 })
        .collect()
}

#[derive(Debug, Clone)]
pub struct EnkfResult {
    pub final_ensemble: Ensemble,
    pub posterior: GaussianSummary,
    /// Ensemble mean and covariance after each iteration.
    pub trajectory: Option<Vec<GaussianSummary>>,
    pub ensembles: Option<Vec<DMatrix<f64>>>,
    /// Number of clamped members per iteration.
    pub clamp_counts: Vec<usize>,
    /// Ensemble-averaged innovation `Y_k − m̄(θ̃ⁿ)` per iteration.
    pub innovations: Vec<DVector<f64>>,
}

impl EnkfResult {
    pub fn to_json(&self, config_hash: Option<&str>) -> serde_json::Value {
        serde_json::json!({
            "config_hash": config_hash,
            "seed": self.final_ensemble.rng_seed,
            "iterations": self.final_ensemble.iteration,
            "parameter_names": self.final_ensemble.space().names(),
            "posterior": self.posterior,
            "trajectory": self.trajectory,
            "clamp_counts": self.clamp_counts,
            "innovation_norms": self.innovations.iter().map(|v| v.norm()).collect::<Vec<_>>(),
            "innovations": self.innovations.iter().map(|v| v.iter().copied().collect::<Vec<_>>()).collect::<Vec<_>>(),
            "final_ensemble": self.final_ensemble.to_json(),
        })
    }
}

/// `y + ε` with `ε ~ N(0, K·R)`.
pub fn perturb_observation<G: rand::Rng + ?Sized>(y: &DVector<f64>, r: &DMatrix<f64>, k: usize, rng: &mut G) -> Result<DVector<f64>> {
    let chol = Cholesky::new(r * k as f64)
        .ok_or_else(|| Error::InvalidInput("noise covariance is not positive definite".into()))?;
    Ok(y + chol.l() * linalg::standard_normal_vector(rng, y.len()))
}

fn innovation_factor(hht: &DMatrix<f64>, r: &DMatrix<f64>, gpe_var: &DVector<f64>) -> Option<Cholesky<f64, Dyn>> {
    let mut s = hht + r;
    for i in 0..s.nrows() {
        s[(i, i)] += gpe_var[i];
    }
    linalg::symmetrize(&mut s);
    Cholesky::new(s)
}

/// `P Hᵀ (H Hᵀ + R + diag(gpe_var))⁻¹`, via a Cholesky solve.
pub fn kalman_gain(p: &DMatrix<f64>, h: &DMatrix<f64>, r: &DMatrix<f64>, gpe_var: &DVector<f64>) -> Result<DMatrix<f64>> {
    if p.ncols() != h.ncols() || r.shape() != (h.nrows(), h.nrows()) || gpe_var.len() != h.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "P {:?}, H {:?}, R {:?}, variance {}",
            p.shape(),
            h.shape(),
            r.shape(),
            gpe_var.len()
        )));
    }
    let chol = innovation_factor(&(h * h.transpose()), r, gpe_var)
        .ok_or(Error::SingularInnovation { iteration: 0, member: 0 })?;
    let pht = p * h.transpose();
    Ok(chol.solve(&pht.transpose()).transpose())
}

fn sample_initial(cfg: &EnkfConfig, space: &ParameterSpace) -> DMatrix<f64> {
    let d = space.dim();
    let root = linalg::psd_sqrt(&cfg.initial.cov);
    let mut members = DMatrix::zeros(d, cfg.ensemble_size);
    for n in 0..cfg.ensemble_size {
        let mut g = rng::substream(cfg.seed, &[tags::ENKF_INIT, n as u64]);
        let mut col = &cfg.initial.mean + &root * linalg::standard_normal_vector(&mut g, d);
        if cfg.clamp {
            space.clamp_in_place(col.as_mut_slice());
        }
        members.set_column(n, &col);
    }
    members
}

fn anomalies(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.ncols();
    let mean = x.column_mean();
    let mut a = x.clone();
    for mut c in a.column_iter_mut() {
        c -= &mean;
    }
    a / ((n - 1) as f64).sqrt()
}

struct MemberUpdate {
    theta: DVector<f64>,
    innovation: DVector<f64>,
    clamped: bool,
}

/// Run the filter. The noise covariance `R` is taken from `obs`.
pub fn run_enkf(
    cfg: &EnkfConfig,
    space: Arc<ParameterSpace>,
    op: &dyn ObservationOperator,
    obs: &ObservationSet,
) -> Result<EnkfResult> {
    let d = space.dim();
    let p = obs.len();
    cfg.validate(d)?;
    if op.input_dim() != d || op.output_dim() != p {
        return Err(Error::DimensionMismatch(format!(
            "operator maps {} -> {}, problem is {d} -> {p}",
            op.input_dim(),
            op.output_dim()
        )));
    }
    if let Some(labels) = op.output_labels() {
        if labels != obs.labels() {
            return Err(Error::InvalidInput("operator output labels do not match observation labels".into()));
        }
    }

    let n_members = cfg.ensemble_size;
    let scale = cfg.effective_noise_scale();
    let r_scaled = obs.noise_cov() * scale;
    let r_chol = Cholesky::new(r_scaled.clone())
        .ok_or_else(|| Error::InvalidInput("noise covariance is not positive definite".into()))?;
    let sigma = DVector::from_column_slice(&cfg.sigma_theta);
    let y = obs.y();

    let mut members = sample_initial(cfg, &space);
    let mut trajectory = cfg.record_trajectory.then(Vec::new);
    let mut ensembles = cfg.record_ensembles.then(Vec::new);
    let mut clamp_counts = Vec::with_capacity(cfg.iterations);
    let mut innovations = Vec::with_capacity(cfg.iterations);

    for k in 0..cfg.iterations {
        let shared_xi = (cfg.perturbation == Perturbation::Shared)
            .then(|| linalg::standard_normal_vector(&mut rng::substream(cfg.seed, &[tags::ENKF_SHARED_OBS, k as u64]), p));

        let mut xis = Vec::with_capacity(n_members);
        let mut predicted = members.clone();
        for n in 0..n_members {
            let mut g = rng::substream(cfg.seed, &[tags::ENKF_STEP, k as u64, n as u64]);
            let xi = linalg::standard_normal_vector(&mut g, p);
            let eps = linalg::standard_normal_vector(&mut g, d);
            let mut col = predicted.column_mut(n);
            col += sigma.component_mul(&eps);
            xis.push(shared_xi.clone().unwrap_or(xi));
        }

        let (mbar, kbar) = op.evaluate(&predicted)?;
        if let Some(n) = (0..n_members).find(|&n| mbar.column(n).iter().chain(kbar.column(n).iter()).any(|v| !v.is_finite())) {
            return Err(Error::NonFiniteMember { iteration: k, member: n });
        }
        let pa = anomalies(&predicted);
        let ha = anomalies(&mbar);
        let pht = &pa * ha.transpose();
        let hht = &ha * ha.transpose();

        let updates = (0..n_members)
            .into_par_iter()
            .map(|n| {
                let var = kbar.column(n).map(|v| v.max(0.0) * scale);
                let chol = innovation_factor(&hht, &r_scaled, &var).ok_or(Error::SingularInnovation { iteration: k, member: n })?;
                let noise = if cfg.perturb_operator_variance && var.iter().any(|&v| v > 0.0) {
                    let mut c = r_scaled.clone();
                    for i in 0..p {
                        c[(i, i)] += var[i];
                    }
                    Cholesky::new(c).ok_or(Error::SingularInnovation { iteration: k, member: n })?.l() * &xis[n]
                } else {
                    r_chol.l() * &xis[n]
                };
                let innovation = y + noise - mbar.column(n);
                let mut theta = predicted.column(n) + &pht * chol.solve(&innovation);
                let clamped = cfg.clamp && space.clamp_in_place(theta.as_mut_slice()) > 0;
                if theta.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFiniteMember { iteration: k, member: n });
                }
                Ok(MemberUpdate { theta, innovation, clamped })
            })
            .collect::<Result<Vec<_>>>()?;

        let mut mean_innovation = DVector::zeros(p);
        let mut clamped = 0;
        for (n, u) in updates.into_iter().enumerate() {
            members.set_column(n, &u.theta);
            mean_innovation += &u.innovation;
            clamped += usize::from(u.clamped);
        }
        mean_innovation /= n_members as f64;
        innovations.push(mean_innovation);
        clamp_counts.push(clamped);
        if let Some(t) = trajectory.as_mut() {
            t.push(mean_cov_columns(&members)?);
        }
        if let Some(e) = ensembles.as_mut() {
            e.push(members.clone());
        }
        log::debug!("enkf iteration {k}: {clamped} members clamped");
    }

    let posterior = mean_cov_columns(&members)?;
    let final_ensemble = Ensemble::new(space, members, cfg.iterations, cfg.seed)?;
    Ok(EnkfResult { final_ensemble, posterior, trajectory, ensembles, clamp_counts, innovations })
}

/// Conjugate posterior of `y = Aθ + b + e`, `e ~ N(0, R)`, `θ ~ N(μ₀, Σ₀)`.
pub fn linear_gaussian_posterior(
    a: &DMatrix<f64>,
    offset: &DVector<f64>,
    prior: &GaussianSummary,
    obs: &ObservationSet,
) -> Result<GaussianSummary> {
    let r_inv = obs
        .noise_cov()
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::InvalidInput("noise covariance is singular".into()))?;
    let p0_inv = prior
        .cov
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::InvalidInput("prior covariance is singular".into()))?;
    let precision = &p0_inv + a.transpose() * &r_inv * a;
    let mut cov = precision
        .try_inverse()
        .ok_or_else(|| Error::InvalidInput("posterior precision is singular".into()))?;
    linalg::symmetrize(&mut cov);
    let mean = &cov * (&p0_inv * &prior.mean + a.transpose() * &r_inv * (obs.y() - offset));
    GaussianSummary::new(mean, cov)
}
