//! Synthetic calibration studies on top of the emulator bank: observation
//! synthesis, per-case calibration and field RMSE, study aggregation, the
//! EnKF/MCMC comparison and the pseudo-dynamics variance check.

use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{mean_cov_columns, GaussianSummary, ObservationSet, ParameterSpace};
use crate::design::{lhs_sample, TrainingEnsemble};
use crate::enkf::{run_enkf, EnkfConfig, EnkfResult};
use crate::error::{Error, Result};
use crate::forward::{beat_markers, simulate_tissue, toy_forward, Geometry, OutputKind, PacingProtocol, SolverSettings, TissueParams, TOY_LOCATIONS};
use crate::gp::{fit_bank, EmulatorBank, FitOptions};
use crate::linalg;
use crate::mcmc::McmcResult;
use crate::operator::{LinearOperator, ObservationOperator};
use crate::rng::{self, tags};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MeasurementSet {
    #[serde(rename = "S1")]
    S1,
    #[serde(rename = "S1+S2")]
    S1S2,
    #[serde(rename = "S1+S2+APD")]
    S1S2Apd,
}

impl MeasurementSet {
    pub const ALL: [MeasurementSet; 3] = [MeasurementSet::S1, MeasurementSet::S1S2, MeasurementSet::S1S2Apd];

    pub fn kinds(self) -> &'static [OutputKind] {
        match self {
            MeasurementSet::S1 => &[OutputKind::LatS1],
            MeasurementSet::S1S2 => &[OutputKind::LatS1, OutputKind::LatS2],
            MeasurementSet::S1S2Apd => &OutputKind::ALL,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MeasurementSet::S1 => "S1",
            MeasurementSet::S1S2 => "S1+S2",
            MeasurementSet::S1S2Apd => "S1+S2+APD",
        }
    }

    /// Positions in the flattened output vector.
    pub fn indices(self, n_sensors: usize) -> Vec<usize> {
        self.kinds()
            .iter()
            .flat_map(|k| {
                let block = OutputKind::ALL.iter().position(|x| x == k).unwrap_or(0);
                (0..n_sensors).map(move |s| block * n_sensors + s)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseLevels {
    pub lat_sd: f64,
    pub apd_sd: f64,
}

impl Default for NoiseLevels {
    fn default() -> Self {
        Self { lat_sd: 1.0, apd_sd: 2.0 }
    }
}

impl NoiseLevels {
    pub fn sd(&self, kind: OutputKind) -> f64 {
        match kind {
            OutputKind::ApdS2 => self.apd_sd,
            _ => self.lat_sd,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationCase {
    pub truth_id: usize,
    pub measurement_set: MeasurementSet,
    pub noise: NoiseLevels,
    pub seed: u64,
}

/// Smallest noise variance placed in `R`, so that noiseless cases still
/// have a valid covariance.
pub const MIN_NOISE_VARIANCE: f64 = 1e-12;

/// Observations for `case` from the full 45-vector `outputs`. The noise for
/// every output is drawn from one stream keyed by the case seed and truth, so
/// nested measurement sets see the same noise on shared outputs.
pub fn make_synthetic_obs(outputs: &[f64], labels: &[String], case: &CalibrationCase) -> Result<ObservationSet> {
    if outputs.len() != labels.len() || outputs.len() % 3 != 0 {
        return Err(Error::DimensionMismatch(format!("{} outputs, {} labels", outputs.len(), labels.len())));
    }
    let n_sensors = outputs.len() / 3;
    let mut g = rng::substream(case.seed, &[tags::OBS_NOISE, case.truth_id as u64]);
    let z = linalg::standard_normal_vector(&mut g, outputs.len());
    let mut y = Vec::new();
    let mut sd = Vec::new();
    let mut names = Vec::new();
    for &kind in case.measurement_set.kinds() {
        let s = case.noise.sd(kind);
        let block = OutputKind::ALL.iter().position(|k| *k == kind).unwrap_or(0);
        for j in 0..n_sensors {
            let i = block * n_sensors + j;
            y.push(outputs[i] + s * z[i]);
            sd.push(s.max(MIN_NOISE_VARIANCE.sqrt()));
            names.push(labels[i].clone());
        }
    }
    ObservationSet::with_diagonal_noise(DVector::from_vec(y), &sd, names)
}

/// Ensemble-mean-and-variance prior built from training inputs (`M × d`).
pub fn prior_from_inputs(x: &DMatrix<f64>) -> Result<GaussianSummary> {
    let s = mean_cov_columns(&x.transpose())?;
    GaussianSummary::new(s.mean, DMatrix::from_diagonal(&s.cov.diagonal()))
}

/// Per-output-type markers at every node of the geometry.
#[derive(Debug, Clone)]
pub struct FieldMarkers {
    pub fields: [Vec<Option<f64>>; 3],
}

pub fn simulate_fields(theta: &[f64], geometry: &Geometry, protocol: &PacingProtocol, solver: &SolverSettings) -> Result<FieldMarkers> {
    let p = TissueParams::from_slice(theta)?;
    let trace = simulate_tissue(&p, geometry, protocol, solver, None, None)?;
    let nodes: Vec<usize> = (0..geometry.n_nodes()).collect();
    let m = beat_markers(&trace, protocol, &nodes)?;
    Ok(FieldMarkers { fields: [m.lat_s1, m.lat_s2, m.apd_s2] })
}

/// RMSE per output type over nodes where both fields have a value, and the
/// number of nodes where exactly one of them is missing.
pub fn field_rmse(truth: &FieldMarkers, estimate: &FieldMarkers) -> ([f64; 3], usize) {
    let mut out = [f64::NAN; 3];
    let mut mismatched = 0;
    for k in 0..3 {
        let mut sum = 0.0;
        let mut n = 0usize;
        for (a, b) in truth.fields[k].iter().zip(&estimate.fields[k]) {
            match (a, b) {
                (Some(a), Some(b)) => {
                    sum += (a - b).powi(2);
                    n += 1;
                }
                (None, None) => {}
                _ => mismatched += 1,
            }
        }
        if n > 0 {
            out[k] = (sum / n as f64).sqrt();
        }
    }
    (out, mismatched)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaseReport {
    pub case: CalibrationCase,
    pub truth: Vec<f64>,
    pub posterior: GaussianSummary,
    /// RMSE of the S1 LAT, S2 LAT and S2 APD fields.
    pub rmse: [f64; 3],
    pub mismatched_nodes: usize,
    /// Wall-clock timings; left out of serialized reports so reruns compare equal.
    #[serde(skip)]
    pub enkf_seconds: f64,
    #[serde(skip)]
    pub simulation_seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaseFailure {
    pub case: CalibrationCase,
    pub error: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub n_cases: usize,
    pub measurement_sets: Vec<MeasurementSet>,
    pub noise: NoiseLevels,
    pub ensemble_size: usize,
    pub iterations: usize,
    /// Pseudo-dynamics step as a fraction of each parameter range.
    pub sigma_theta_fraction: f64,
    pub seed: u64,
    pub geometry: Geometry,
    pub protocol: PacingProtocol,
    pub solver: SolverSettings,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            n_cases: 50,
            measurement_sets: MeasurementSet::ALL.to_vec(),
            noise: NoiseLevels::default(),
            ensemble_size: 500,
            iterations: 50,
            sigma_theta_fraction: 0.005,
            seed: 0,
            geometry: Geometry::default(),
            protocol: PacingProtocol::default(),
            solver: SolverSettings::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyReport {
    pub parameter_names: Vec<String>,
    pub cases: Vec<CaseReport>,
    pub failures: Vec<CaseFailure>,
}

/// The `n_cases` truths: validation points in order, reused cyclically
/// (with fresh noise) when there are fewer validation points than cases.
pub fn study_truths(ensemble: &TrainingEnsemble, n_cases: usize) -> Result<Vec<(usize, Vec<f64>, Vec<f64>)>> {
    let pool: Vec<_> = ensemble
        .points
        .iter()
        .filter(|p| p.status == crate::design::PointStatus::Validation && p.outputs.is_some())
        .collect();
    if pool.is_empty() {
        return Err(Error::InvalidInput("ensemble has no validation points".into()));
    }
    Ok((0..n_cases)
        .map(|i| {
            let p = pool[i % pool.len()];
            (p.id, p.theta.clone(), p.outputs.clone().unwrap_or_default())
        })
        .collect())
}

fn enkf_config_for(cfg: &StudyConfig, space: &ParameterSpace, prior: &GaussianSummary, seed: u64) -> EnkfConfig {
    let sigma = space.bounds().iter().map(|(lo, hi)| cfg.sigma_theta_fraction * (hi - lo)).collect();
    EnkfConfig::new(cfg.ensemble_size, cfg.iterations, sigma, prior.clone(), seed)
}

/// Calibrate every case in every measurement set and score the posterior
/// mean by field RMSE against the truth simulation.
pub fn run_study(cfg: &StudyConfig, bank: &EmulatorBank, ensemble: &TrainingEnsemble, prior: &GaussianSummary) -> Result<StudyReport> {
    let space = Arc::new(ParameterSpace::mms());
    let labels = ensemble.output_labels.clone();
    let n_sensors = labels.len() / 3;
    let truths = study_truths(ensemble, cfg.n_cases)?;

    let mut unique: Vec<usize> = truths.iter().map(|t| t.0).collect();
    unique.sort_unstable();
    unique.dedup();
    let truth_fields: Vec<(usize, Result<FieldMarkers>)> = unique
        .par_iter()
        .map(|&id| {
            let theta = &truths.iter().find(|t| t.0 == id).map(|t| t.1.clone()).unwrap_or_default();
            (id, simulate_fields(theta, &cfg.geometry, &cfg.protocol, &cfg.solver))
        })
        .collect();

    let jobs: Vec<(usize, MeasurementSet)> =
        (0..truths.len()).flat_map(|i| cfg.measurement_sets.iter().map(move |&m| (i, m))).collect();
    let results: Vec<std::result::Result<CaseReport, CaseFailure>> = jobs
        .par_iter()
        .map(|&(i, set)| {
            let (id, theta, outputs) = &truths[i];
            let case = CalibrationCase {
                truth_id: *id,
                measurement_set: set,
                noise: cfg.noise,
                seed: rng::derive_seed(cfg.seed, &[tags::STUDY, i as u64]),
            };
            let fail = |e: Error| CaseFailure { case, error: format!("{}: {e}", e.kind()) };
            let obs = make_synthetic_obs(outputs, &labels, &case).map_err(fail)?;
            let wanted: Vec<String> = set.indices(n_sensors).iter().map(|&j| labels[j].clone()).collect();
            let sub = bank.subset(&wanted).map_err(fail)?;
            let t0 = Instant::now();
            let ecfg = enkf_config_for(cfg, &space, prior, rng::derive_seed(case.seed, &[set as u64]));
            let res = run_enkf(&ecfg, space.clone(), &sub, &obs).map_err(fail)?;
            let enkf_seconds = t0.elapsed().as_secs_f64();
            let t1 = Instant::now();
            let est = simulate_fields(res.posterior.mean.as_slice(), &cfg.geometry, &cfg.protocol, &cfg.solver).map_err(fail)?;
            let truth_f = match &truth_fields.iter().find(|t| t.0 == *id).map(|t| &t.1) {
                Some(Ok(f)) => f.clone(),
                Some(Err(e)) => return Err(CaseFailure { case, error: format!("truth simulation failed: {e}") }),
                None => return Err(CaseFailure { case, error: "truth simulation missing".into() }),
            };
            let (rmse, mismatched_nodes) = field_rmse(&truth_f, &est);
            Ok(CaseReport {
                case,
                truth: theta.clone(),
                posterior: res.posterior,
                rmse,
                mismatched_nodes,
                enkf_seconds,
                simulation_seconds: t1.elapsed().as_secs_f64(),
            })
        })
        .collect();

    let mut cases = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(c) => cases.push(c),
            Err(f) => {
                log::warn!("case truth {} ({}) failed: {}", f.case.truth_id, f.case.measurement_set.name(), f.error);
                failures.push(f);
            }
        }
    }
    Ok(StudyReport { parameter_names: space.names().to_vec(), cases, failures })
}

pub fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Linear-interpolation quantile, `q ∈ [0, 1]`.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len()) as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

impl StudyReport {
    pub fn cases_for(&self, set: MeasurementSet) -> impl Iterator<Item = &CaseReport> {
        self.cases.iter().filter(move |c| c.case.measurement_set == set)
    }

    /// Correlation between truth and posterior mean of parameter `k`.
    pub fn correlation(&self, set: MeasurementSet, k: usize) -> f64 {
        let (t, e): (Vec<f64>, Vec<f64>) = self.cases_for(set).map(|c| (c.truth[k], c.posterior.mean[k])).unzip();
        pearson(&t, &e)
    }

    /// Median RMSE of output type `kind` (0: S1 LAT, 1: S2 LAT, 2: APD).
    pub fn median_rmse(&self, set: MeasurementSet, kind: usize) -> f64 {
        median(&self.cases_for(set).map(|c| c.rmse[kind]).collect::<Vec<_>>())
    }

    /// Long-format scatter table: one row per parameter, case and set.
    pub fn write_scatter_csv<W: Write>(&self, mut w: W, comment: Option<&str>) -> Result<()> {
        if let Some(c) = comment {
            writeln!(w, "# {c}")?;
        }
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["parameter", "truth_id", "measurement_set", "truth", "estimate", "posterior_sd"])?;
        for (k, name) in self.parameter_names.iter().enumerate() {
            for c in &self.cases {
                out.write_record([
                    name.clone(),
                    c.case.truth_id.to_string(),
                    c.case.measurement_set.name().to_string(),
                    format!("{:?}", c.truth[k]),
                    format!("{:?}", c.posterior.mean[k]),
                    format!("{:?}", c.posterior.cov[(k, k)].max(0.0).sqrt()),
                ])?;
            }
        }
        out.flush()?;
        Ok(())
    }

    /// Five-number summaries of the RMSE per measurement set and output type.
    pub fn write_boxplot_csv<W: Write>(&self, mut w: W, comment: Option<&str>) -> Result<()> {
        if let Some(c) = comment {
            writeln!(w, "# {c}")?;
        }
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["measurement_set", "output", "n", "min", "q1", "median", "q3", "max"])?;
        for set in MeasurementSet::ALL {
            for (k, kind) in OutputKind::ALL.iter().enumerate() {
                let v: Vec<f64> = self.cases_for(set).map(|c| c.rmse[k]).collect();
                if v.is_empty() {
                    continue;
                }
                let mut row = vec![set.name().to_string(), kind.prefix().to_string(), v.len().to_string()];
                row.extend([0.0, 0.25, 0.5, 0.75, 1.0].iter().map(|&q| format!("{:?}", quantile(&v, q))));
                out.write_record(&row)?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Comparison {
    /// `(mean_enkf − mean_mcmc) / combined SE`, per parameter.
    pub mean_difference_se: Vec<f64>,
    pub combined_se: Vec<f64>,
    /// `sd_enkf / sd_mcmc`, per parameter.
    pub sd_ratio: Vec<f64>,
    pub enkf_mean: Vec<f64>,
    pub mcmc_mean: Vec<f64>,
    pub enkf_sd: Vec<f64>,
    pub mcmc_sd: Vec<f64>,
}

/// Combined standard error `sqrt(sd_e²/N + sd_m²/ESS)` per parameter.
pub fn compare_enkf_mcmc(enkf: &EnkfResult, mcmc: &McmcResult) -> Result<Comparison> {
    let e = &enkf.posterior;
    let m = mcmc.summary()?;
    let n = enkf.final_ensemble.size() as f64;
    let d = e.dim();
    if m.dim() != d {
        return Err(Error::DimensionMismatch("EnKF and MCMC posteriors differ in dimension".into()));
    }
    let es = e.std_devs();
    let ms = m.std_devs();
    let combined_se: Vec<f64> = (0..d).map(|k| (es[k].powi(2) / n + ms[k].powi(2) / mcmc.ess[k].max(1.0)).sqrt()).collect();
    Ok(Comparison {
        mean_difference_se: (0..d).map(|k| (e.mean[k] - m.mean[k]) / combined_se[k]).collect(),
        combined_se,
        sd_ratio: (0..d).map(|k| es[k] / ms[k]).collect(),
        enkf_mean: e.mean.iter().copied().collect(),
        mcmc_mean: m.mean.iter().copied().collect(),
        enkf_sd: es.iter().copied().collect(),
        mcmc_sd: ms.iter().copied().collect(),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InflationReport {
    /// Per-seed `trace(C_σ) − trace(C_0)`.
    pub differences: Vec<f64>,
    pub mean: f64,
    pub standard_error: f64,
    /// `trace(σθ σθᵀ)·K`.
    pub bound: f64,
}

/// Small linear-Gaussian calibration problem with a known conjugate
/// posterior: two parameters, three outputs, N(0, I) prior.
#[derive(Debug, Clone)]
pub struct LinearProblem {
    pub operator: LinearOperator,
    pub observations: ObservationSet,
    pub prior: GaussianSummary,
    pub space: Arc<ParameterSpace>,
}

impl LinearProblem {
    pub fn standard() -> Self {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.5, -0.3, 1.2, 0.8, 0.1]);
        let observations = ObservationSet::with_diagonal_noise(
            DVector::from_vec(vec![0.7, 1.1, -0.2]),
            &[0.3, 0.3, 0.3],
            vec!["y0".into(), "y1".into(), "y2".into()],
        )
        .expect("valid noise");
        Self {
            operator: LinearOperator::new(a),
            observations,
            prior: GaussianSummary { mean: DVector::zeros(2), cov: DMatrix::identity(2, 2) },
            space: Arc::new(ParameterSpace::unbounded(&["theta0", "theta1"])),
        }
    }

    pub fn posterior(&self) -> Result<GaussianSummary> {
        crate::enkf::linear_gaussian_posterior(&self.operator.a, &self.operator.offset, &self.prior, &self.observations)
    }

    pub fn run(&self, cfg: &EnkfConfig) -> Result<EnkfResult> {
        run_enkf(cfg, self.space.clone(), &self.operator, &self.observations)
    }
}

/// Posterior covariance trace with and without pseudo-dynamics on a linear
/// problem, paired by seed.
pub fn variance_inflation(
    op: &LinearOperator,
    obs: &ObservationSet,
    prior: &GaussianSummary,
    sigma_theta: &[f64],
    ensemble_size: usize,
    iterations: usize,
    seeds: &[u64],
) -> Result<InflationReport> {
    let space = Arc::new(ParameterSpace::unbounded(
        &(0..prior.dim()).map(|k| format!("theta{k}")).collect::<Vec<_>>().iter().map(String::as_str).collect::<Vec<_>>(),
    ));
    let differences = seeds
        .par_iter()
        .map(|&s| {
            let with = EnkfConfig::new(ensemble_size, iterations, sigma_theta.to_vec(), prior.clone(), s);
            let without = EnkfConfig { sigma_theta: vec![0.0; prior.dim()], ..with.clone() };
            let a = run_enkf(&with, space.clone(), op, obs)?.posterior.cov.trace();
            let b = run_enkf(&without, space.clone(), op, obs)?.posterior.cov.trace();
            Ok(a - b)
        })
        .collect::<Result<Vec<f64>>>()?;
    let n = differences.len() as f64;
    let mean = differences.iter().sum::<f64>() / n;
    let var = differences.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    Ok(InflationReport {
        differences,
        mean,
        standard_error: (var / n).sqrt(),
        bound: sigma_theta.iter().map(|s| s * s).sum::<f64>() * iterations as f64,
    })
}

/// Training-set sizes of the nested toy designs.
pub const TOY_DESIGN_SIZES: [usize; 3] = [10, 15, 50];

/// Nested toy design: the first `m` rows of a design grown in LHS blocks of
/// 10, 5 and 35 points (then one block for anything past 50), so smaller
/// designs are prefixes of larger ones.
pub fn toy_design(m: usize, seed: u64) -> DMatrix<f64> {
    let space = ParameterSpace::toy();
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut edges = TOY_DESIGN_SIZES.to_vec();
    if m > *edges.last().unwrap() {
        edges.push(m);
    }
    let mut start = 0;
    for (block, &end) in edges.iter().enumerate() {
        if rows.len() >= m {
            break;
        }
        let pts = lhs_sample(end - start, space.bounds(), rng::derive_seed(seed, &[block as u64]), 100).points;
        rows.extend(pts.row_iter().map(|r| r.iter().copied().collect::<Vec<_>>()));
        start = end;
    }
    rows.truncate(m);
    DMatrix::from_fn(m, 2, |i, j| rows[i][j])
}

/// Emulator bank for the toy problem trained on the nested `m`-point design.
/// Toy inputs and outputs take both signs, so log transforms are switched off.
pub fn toy_bank(m: usize, seed: u64, opts: &FitOptions) -> Result<EmulatorBank> {
    let x = toy_design(m, seed);
    let y = DMatrix::from_fn(m, TOY_LOCATIONS.len(), |i, j| toy_forward(&[x[(i, 0)], x[(i, 1)]], &TOY_LOCATIONS)[j]);
    let opts = FitOptions { seed, log_inputs: false, log_outputs: false, ..opts.clone() };
    fit_bank(&x, &y, &toy_labels(), &opts)
}

pub fn toy_labels() -> Vec<String> {
    TOY_LOCATIONS.iter().map(|x| format!("y@{x}")).collect()
}

/// Noisy toy observation of `truth`.
pub fn toy_observations(truth: &[f64], sd: f64, seed: u64) -> Result<ObservationSet> {
    let clean = toy_forward(truth, &TOY_LOCATIONS);
    let mut g = rng::substream(seed, &[tags::OBS_NOISE]);
    let z = linalg::standard_normal_vector(&mut g, clean.len());
    let y = DVector::from_iterator(clean.len(), clean.iter().zip(z.iter()).map(|(c, e)| c + sd * e));
    ObservationSet::with_diagonal_noise(y, &vec![sd; clean.len()], toy_labels())
}

/// EnKF settings for the toy runs: standard-normal start, no pseudo-dynamics.
pub fn toy_enkf_config(ensemble_size: usize, iterations: usize, seed: u64) -> EnkfConfig {
    EnkfConfig::new(ensemble_size, iterations, vec![0.0; 2], toy_prior(), seed)
}

/// Standard-normal initial distribution used for the toy runs.
pub fn toy_prior() -> GaussianSummary {
    GaussianSummary { mean: DVector::zeros(2), cov: DMatrix::identity(2, 2) }
}

/// Exact toy forward map as an operator (zero predictive variance).
pub fn toy_operator() -> impl ObservationOperator {
    crate::operator::FnOperator::new(2, TOY_LOCATIONS.len(), |t: &[f64]| toy_forward(t, &TOY_LOCATIONS))
}
