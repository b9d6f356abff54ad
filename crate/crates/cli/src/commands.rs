use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use emucal_core::calibration::write_matrix_csv;
use emucal_core::design::{build_ensemble, lhs_sample, train_classifier, PointStatus, TrainingEnsemble};
use emucal_core::enkf::{default_sigma_theta, run_enkf, EnkfConfig, EnkfResult};
use emucal_core::experiments::{
    make_synthetic_obs, median, prior_from_inputs, run_study, toy_bank, toy_observations, toy_prior, CalibrationCase, StudyReport,
};
use emucal_core::forward::{toy_forward, TOY_LOCATIONS};
use emucal_core::gp::fit_bank;
use emucal_core::mcmc::{run_mcmc, McmcResult, TruncatedGaussian};
use emucal_core::rng::derive_seed;
use emucal_core::{EmulatorBank, GaussianSummary, ObservationSet, ParameterSpace};
use nalgebra::DMatrix;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{Problem, RunConfig};
use crate::{files, CliError};

/// Provenance stamped into every output file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Context {
    pub hash: String,
    pub seed: u64,
}

impl Context {
    pub fn new(cfg: &RunConfig) -> Self {
        Self { hash: cfg.hash(), seed: cfg.master_seed }
    }

    fn comment(&self) -> String {
        format!("config_hash={} seed={}", self.hash, self.seed)
    }

    fn stamp(&self, mut doc: Value) -> Value {
        if let Value::Object(m) = &mut doc {
            m.insert("config_hash".into(), json!(self.hash));
            m.insert("seed".into(), json!(self.seed));
        }
        doc
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path).map(BufReader::new).map_err(io_err(path))
}

fn write_json(path: &Path, doc: &Value) -> Result<(), CliError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, doc).map_err(|e| io_err(path)(e.into()))?;
    writeln!(w).and_then(|_| w.flush()).map_err(io_err(path))
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("serializable")
}

fn read_json(path: &Path) -> Result<Value, CliError> {
    serde_json::from_reader(open(path)?).map_err(|e| io_err(path)(e.into()))
}

fn space_for(problem: Problem) -> Arc<ParameterSpace> {
    Arc::new(match problem {
        Problem::Mms => ParameterSpace::mms(),
        Problem::Toy => ParameterSpace::toy(),
    })
}

fn tissue_only(cfg: &RunConfig, what: &str) -> Result<(), CliError> {
    match cfg.problem {
        Problem::Mms => Ok(()),
        Problem::Toy => Err(CliError::Config(format!("{what} is only defined for the tissue problem"))),
    }
}

/// Build the training ensemble: classifier screen, then tissue simulation.
pub fn cmd_design(cfg: &RunConfig, ctx: &Context) -> Result<TrainingEnsemble, CliError> {
    tissue_only(cfg, "design")?;
    let report = train_classifier(&cfg.design).map_err(CliError::Design)?;
    log::info!("classifier held-out accuracy {:.3}", report.holdout_accuracy);
    let ens = build_ensemble(&cfg.design, Some(&report)).map_err(CliError::Design)?;

    let dir = &cfg.output_dir;
    let comment = ctx.comment();
    for (name, params) in [(files::PARAMETERS, true), (files::OUTPUTS, false)] {
        let path = dir.join(name);
        let w = create(&path)?;
        let res = if params { ens.write_parameters_csv(w, Some(&comment)) } else { ens.write_outputs_csv(w, Some(&comment)) };
        res.map_err(CliError::Design)?;
    }
    let count = |f: fn(&PointStatus) -> bool| ens.count(f);
    let manifest = json!({
        "initial_size": ens.points.len(),
        "rejected_by_classifier": count(|s| matches!(s, PointStatus::RejectedByClassifier { .. })),
        "missing_outputs": count(|s| matches!(s, PointStatus::MissingOutputs { .. })),
        "simulation_failed": count(|s| matches!(s, PointStatus::SimulationFailed { .. })),
        "train": count(|s| *s == PointStatus::Train),
        "validation": count(|s| *s == PointStatus::Validation),
        "sensors": ens.sensors,
        "classifier": ens.classifier.as_ref().map(|c| json!({
            "n_labelled": c.n_labelled,
            "n_feasible": c.n_feasible,
            "train_accuracy": c.train_accuracy,
            "holdout_accuracy": c.holdout_accuracy,
        })),
        "points": ens.points,
    });
    write_json(&dir.join(files::MANIFEST), &ctx.stamp(manifest))?;
    Ok(ens)
}

fn read_ensemble(cfg: &RunConfig) -> Result<TrainingEnsemble, CliError> {
    let dir = cfg.ensemble_dir();
    let (pp, op) = (dir.join(files::PARAMETERS), dir.join(files::OUTPUTS));
    for p in [&pp, &op] {
        if !p.exists() {
            return Err(CliError::Config(format!("training ensemble file {} not found; run `design` first", p.display())));
        }
    }
    TrainingEnsemble::read_csv(open(&pp)?, open(&op)?).map_err(|e| CliError::Config(format!("{}: {e}", dir.display())))
}

#[derive(Debug, Clone, Serialize)]
pub struct EmulationReport {
    pub labels: Vec<String>,
    pub r2: Vec<f64>,
    pub min_r2: f64,
    pub worst_output: String,
    pub r2_floor: f64,
    pub passed: bool,
    pub n_train: usize,
    pub n_validation: usize,
}

fn toy_validation(cfg: &RunConfig) -> (DMatrix<f64>, DMatrix<f64>) {
    let space = ParameterSpace::toy();
    let n = cfg.emulation.toy_validation_size;
    let x = lhs_sample(n, space.bounds(), derive_seed(cfg.emulation.fit.seed, &[u64::MAX]), 1).points;
    let y = DMatrix::from_fn(n, TOY_LOCATIONS.len(), |i, j| toy_forward(&[x[(i, 0)], x[(i, 1)]], &TOY_LOCATIONS)[j]);
    (x, y)
}

/// Fit the emulator bank and score it on held-out data. The bank and the
/// report are written even when the R² floor is missed.
pub fn cmd_emulate(cfg: &RunConfig, ctx: &Context) -> Result<(EmulatorBank, EmulationReport), CliError> {
    let fail = |e: emucal_core::Error| CliError::Emulation(format!("{}: {e}", e.kind()));
    let (bank, x_val, y_val) = match cfg.problem {
        Problem::Mms => {
            let ens = read_ensemble(cfg)?;
            let (x, y) = ens.train();
            let (xv, yv) = ens.validation();
            (fit_bank(&x, &y, &ens.output_labels, &cfg.emulation.fit).map_err(fail)?, xv, yv)
        }
        Problem::Toy => {
            let bank = toy_bank(cfg.emulation.toy_training_size, cfg.emulation.fit.seed, &cfg.emulation.fit).map_err(fail)?;
            let (xv, yv) = toy_validation(cfg);
            (bank, xv, yv)
        }
    };
    let r2 = bank.held_out_r2(&x_val, &y_val).map_err(fail)?;
    let labels = bank.labels();
    let (worst, min_r2) = r2.iter().copied().enumerate().fold((0, f64::INFINITY), |a, (i, v)| if v < a.1 { (i, v) } else { a });
    let report = EmulationReport {
        worst_output: labels[worst].clone(),
        labels,
        min_r2,
        r2_floor: cfg.emulation.r2_floor,
        passed: min_r2 >= cfg.emulation.r2_floor,
        n_train: bank.emulators()[0].n_train(),
        n_validation: x_val.nrows(),
        r2,
    };

    let mut buf = Vec::new();
    bank.write_json(&mut buf).map_err(fail)?;
    let inner: Value = serde_json::from_slice(&buf).map_err(|e| CliError::Emulation(e.to_string()))?;
    let doc = ctx.stamp(json!({ "problem": cfg.problem, "bank": inner }));
    write_json(&cfg.output_dir.join(files::BANK), &doc)?;
    write_json(&cfg.output_dir.join(files::EMULATION_REPORT), &ctx.stamp(to_value(&report)))?;

    if !report.passed {
        return Err(CliError::Emulation(format!(
            "held-out R² {:.4} for {} is below the floor {}",
            report.min_r2, report.worst_output, report.r2_floor
        )));
    }
    Ok((bank, report))
}

/// Load a bank written by `emulate`, or a bare bank document.
pub fn load_bank(path: &Path) -> Result<EmulatorBank, CliError> {
    if !path.exists() {
        return Err(CliError::Config(format!("emulator bank {} not found; run `emulate` first", path.display())));
    }
    let mut doc = read_json(path)?;
    let inner = match doc.get_mut("bank") {
        Some(b) => b.take(),
        None => doc,
    };
    let bytes = serde_json::to_vec(&inner).expect("serializable");
    EmulatorBank::read_json(bytes.as_slice()).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// The observation set and the matching slice of the bank.
fn observations(cfg: &RunConfig, bank: &EmulatorBank) -> Result<(ObservationSet, EmulatorBank), CliError> {
    let syn = &cfg.calibration.synthetic;
    let obs = match (&cfg.calibration.observations, cfg.problem) {
        (Some(path), _) => {
            serde_json::from_reader(open(path)?).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        }
        (None, Problem::Toy) => {
            toy_observations(&syn.toy_truth, syn.toy_noise_sd, cfg.calibration_seed()).map_err(CliError::Calibration)?
        }
        (None, Problem::Mms) => {
            let ens = read_ensemble(cfg)?;
            let point = match syn.truth_id {
                Some(id) => ens.survivors().find(|p| p.id == id),
                None => ens.points.iter().find(|p| p.status == PointStatus::Validation),
            }
            .ok_or_else(|| CliError::Config(format!("no surviving design point for truth {:?}", syn.truth_id)))?;
            let case = CalibrationCase {
                truth_id: point.id,
                measurement_set: syn.measurement_set,
                noise: syn.noise,
                seed: cfg.calibration_seed(),
            };
            let outputs = point.outputs.clone().unwrap_or_default();
            make_synthetic_obs(&outputs, &ens.output_labels, &case).map_err(CliError::Calibration)?
        }
    };
    let sub = bank.subset(obs.labels()).map_err(CliError::Calibration)?;
    Ok((obs, sub))
}

fn initial_distribution(cfg: &RunConfig, bank: &EmulatorBank) -> Result<GaussianSummary, CliError> {
    match (&cfg.calibration.initial, cfg.problem) {
        (Some(g), _) => Ok(g.clone()),
        (None, Problem::Toy) => Ok(toy_prior()),
        (None, Problem::Mms) => prior_from_inputs(bank.emulators()[0].x_train()).map_err(CliError::Calibration),
    }
}

/// Calibrate with the ensemble Kalman filter.
pub fn cmd_calibrate(cfg: &RunConfig, ctx: &Context) -> Result<EnkfResult, CliError> {
    let bank = load_bank(&cfg.bank_path())?;
    let (obs, sub) = observations(cfg, &bank)?;
    let space = space_for(cfg.problem);
    let initial = initial_distribution(cfg, &bank)?;
    let sigma = match (&cfg.calibration.sigma_theta, cfg.problem) {
        (Some(s), _) => s.clone(),
        (None, Problem::Mms) => default_sigma_theta(&space),
        (None, Problem::Toy) => vec![0.0; space.dim()],
    };
    let mut ecfg = EnkfConfig::new(cfg.calibration.ensemble_size, cfg.calibration.iterations, sigma, initial, cfg.calibration_seed());
    ecfg.record_trajectory = cfg.calibration.record_trajectory;
    let res = run_enkf(&ecfg, space, &sub, &obs).map_err(CliError::Calibration)?;

    let dir = &cfg.output_dir;
    let mut doc = res.to_json(Some(&ctx.hash));
    doc["seed"] = json!(ctx.seed);
    doc["enkf_seed"] = json!(ecfg.seed);
    write_json(&dir.join(files::ENKF_RESULT), &doc)?;
    write_json(&dir.join(files::OBSERVATIONS), &ctx.stamp(to_value(&obs)))?;
    let path = dir.join(files::POSTERIOR_ENSEMBLE);
    let mut w = create(&path)?;
    writeln!(w, "# {}", ctx.comment()).map_err(io_err(&path))?;
    res.final_ensemble.write_csv(&mut w).map_err(CliError::Calibration)?;
    Ok(res)
}

/// Sample the emulator posterior with random-walk Metropolis.
pub fn cmd_mcmc(cfg: &RunConfig, ctx: &Context) -> Result<McmcResult, CliError> {
    let bank = load_bank(&cfg.bank_path())?;
    let (obs, sub) = observations(cfg, &bank)?;
    let space = space_for(cfg.problem);
    let prior = TruncatedGaussian::new(space.clone(), initial_distribution(cfg, &bank)?).map_err(CliError::Calibration)?;
    let res = run_mcmc(&cfg.mcmc, &sub, &obs, &prior).map_err(CliError::Calibration)?;

    let dir = &cfg.output_dir;
    let path = dir.join(files::MCMC_SAMPLES);
    write_matrix_csv(create(&path)?, space.names(), &res.samples(), Some(&ctx.comment())).map_err(CliError::Calibration)?;
    let diag = res.diagnostics_json(Some(&ctx.hash), space.names());
    write_json(&dir.join(files::MCMC_DIAGNOSTICS), &ctx.stamp(diag))?;
    Ok(res)
}

/// Run the synthetic calibration study over the validation truths.
pub fn cmd_study(cfg: &RunConfig, ctx: &Context) -> Result<StudyReport, CliError> {
    tissue_only(cfg, "study")?;
    let bank = load_bank(&cfg.bank_path())?;
    let ens = read_ensemble(cfg)?;
    let prior = prior_from_inputs(&ens.train().0).map_err(CliError::Calibration)?;
    let report = run_study(&cfg.experiments, &bank, &ens, &prior).map_err(CliError::Calibration)?;

    let summary: Vec<Value> = cfg
        .experiments
        .measurement_sets
        .iter()
        .map(|&set| {
            let rmse: Vec<f64> = (0..3).map(|k| report.median_rmse(set, k)).collect();
            json!({
                "measurement_set": set,
                "cases": report.cases_for(set).count(),
                "correlations": (0..report.parameter_names.len()).map(|k| report.correlation(set, k)).collect::<Vec<_>>(),
                "median_rmse": rmse,
            })
        })
        .collect();
    let overall: Vec<f64> = report.cases.iter().map(|c| c.rmse[0]).collect();
    let doc = json!({
        "summary": summary,
        "median_s1_rmse_all_sets": median(&overall),
        "report": report,
    });
    let dir = &cfg.output_dir;
    write_json(&dir.join(files::STUDY_REPORT), &ctx.stamp(doc))?;
    let comment = ctx.comment();
    report.write_scatter_csv(create(&dir.join(files::STUDY_SCATTER))?, Some(&comment)).map_err(CliError::Calibration)?;
    report.write_boxplot_csv(create(&dir.join(files::STUDY_BOXPLOT))?, Some(&comment)).map_err(CliError::Calibration)?;
    Ok(report)
}

#[derive(Debug, Clone, Default)]
pub struct VerifyReport {
    pub checked: Vec<String>,
}

fn stamped_hash(path: &Path) -> Result<Option<String>, CliError> {
    if path.extension().is_some_and(|e| e == "json") {
        let doc = read_json(path)?;
        return Ok(doc.get("config_hash").and_then(Value::as_str).map(str::to_string));
    }
    let mut first = String::new();
    open(path)?.read_line(&mut first).map_err(io_err(path))?;
    Ok(first
        .trim()
        .strip_prefix("# ")
        .and_then(|c| c.split_whitespace().find_map(|kv| kv.strip_prefix("config_hash=")))
        .map(str::to_string))
}

/// Check that every output present in the output directory carries the
/// hash of the current config.
pub fn cmd_verify(cfg: &RunConfig, ctx: &Context) -> Result<VerifyReport, CliError> {
    let mut report = VerifyReport::default();
    let mut bad = Vec::new();
    for name in files::ALL {
        let path: PathBuf = cfg.output_dir.join(name);
        if !path.exists() {
            continue;
        }
        match stamped_hash(&path)? {
            Some(h) if h == ctx.hash => report.checked.push(name.to_string()),
            Some(h) => bad.push(format!("{name}: hash {h}")),
            None => bad.push(format!("{name}: no config hash")),
        }
    }
    if !bad.is_empty() {
        return Err(CliError::Verify(format!("expected hash {}; {}", ctx.hash, bad.join("; "))));
    }
    if report.checked.is_empty() {
        return Err(CliError::Verify(format!("no outputs found in {}", cfg.output_dir.display())));
    }
    Ok(report)
}
