//! Training-set construction: Latin hypercube designs, a cell-level
//! feasibility classifier and the two-stage rejection pipeline that turns an
//! initial design into emulator training and validation data.

mod classifier;
mod lhs;

use std::io::{Read, Write};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use classifier::{ClassifierOptions, FeasibilityClassifier};
pub use lhs::{lhs_sample, LhsDesign};

use crate::calibration::ParameterSpace;
use crate::error::{Error, Result};
use crate::forward::{cell_feasibility, output_labels, s1s2_outputs, CellParams, Geometry, PacingProtocol, SolverSettings, TissueParams};
use crate::rng::{self, tags};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub initial_size: usize,
    pub maximin_restarts: usize,
    pub classifier_size: usize,
    pub classifier_maximin_restarts: usize,
    /// Fraction of the labelled cell runs held out to score the classifier.
    pub classifier_holdout: f64,
    pub min_classifier_accuracy: f64,
    pub classifier: ClassifierOptions,
    pub train_fraction: f64,
    pub seed: u64,
    pub geometry: Geometry,
    pub protocol: PacingProtocol,
    pub solver: SolverSettings,
    /// Sensor nodes; defaults to 15 evenly spaced over [0.3, 2.9] cm.
    pub sensors: Option<Vec<usize>>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            initial_size: 350,
            maximin_restarts: 1000,
            classifier_size: 2000,
            classifier_maximin_restarts: 1,
            classifier_holdout: 0.2,
            min_classifier_accuracy: 0.9,
            classifier: ClassifierOptions::default(),
            train_fraction: 0.87,
            seed: 0,
            geometry: Geometry::default(),
            protocol: PacingProtocol::default(),
            solver: SolverSettings::default(),
            sensors: None,
        }
    }
}

impl PipelineConfig {
    pub fn sensors(&self) -> Vec<usize> {
        self.sensors.clone().unwrap_or_else(|| self.geometry.default_sensors())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassifierReport {
    pub n_labelled: usize,
    pub n_feasible: usize,
    pub train_accuracy: f64,
    pub holdout_accuracy: f64,
    pub classifier: FeasibilityClassifier,
}

/// Label a cell-parameter LHS with the single-cell screen and fit the
/// classifier on it.
pub fn train_classifier(cfg: &PipelineConfig) -> Result<ClassifierReport> {
    let space = ParameterSpace::mms();
    let cell_bounds = &space.bounds()[..4];
    let design = lhs_sample(
        cfg.classifier_size,
        cell_bounds,
        rng::derive_seed(cfg.seed, &[tags::CLASSIFIER]),
        cfg.classifier_maximin_restarts,
    );
    let labels = (0..design.len())
        .into_par_iter()
        .map(|i| {
            let p = CellParams::from_slice(&design.row(i))?;
            match cell_feasibility(&p, &cfg.protocol) {
                Ok(f) => Ok(f.feasible),
                Err(Error::UnstableStep { .. }) => Ok(false),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<bool>>>()?;

    let n = labels.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::substream(cfg.seed, &[tags::CLASSIFIER, 1]));
    let n_hold = ((n as f64) * cfg.classifier_holdout).round() as usize;
    let (hold, fit) = order.split_at(n_hold);
    let pick = |idx: &[usize]| {
        (
            DMatrix::from_fn(idx.len(), 4, |r, c| design.points[(idx[r], c)]),
            idx.iter().map(|&i| labels[i]).collect::<Vec<bool>>(),
        )
    };
    let (x_fit, y_fit) = pick(fit);
    let (x_hold, y_hold) = pick(hold);
    let classifier = FeasibilityClassifier::train(&x_fit, &y_fit, &cfg.classifier)?;
    let train_accuracy = classifier.accuracy(&x_fit, &y_fit)?;
    let holdout_accuracy = if hold.is_empty() { train_accuracy } else { classifier.accuracy(&x_hold, &y_hold)? };
    let report = ClassifierReport {
        n_labelled: n,
        n_feasible: labels.iter().filter(|&&l| l).count(),
        train_accuracy,
        holdout_accuracy,
        classifier,
    };
    if holdout_accuracy < cfg.min_classifier_accuracy {
        return Err(Error::Degenerate(format!(
            "classifier held-out accuracy {holdout_accuracy:.3} is below {}",
            cfg.min_classifier_accuracy
        )));
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum PointStatus {
    Train,
    Validation,
    RejectedByClassifier { probability: f64 },
    MissingOutputs { missing: usize },
    SimulationFailed { error: String },
}

impl PointStatus {
    pub fn survived(&self) -> bool {
        matches!(self, PointStatus::Train | PointStatus::Validation)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DesignPoint {
    pub id: usize,
    pub theta: Vec<f64>,
    pub status: PointStatus,
    pub outputs: Option<Vec<f64>>,
}

/// Result of the rejection pipeline.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingEnsemble {
    pub parameter_names: Vec<String>,
    pub output_labels: Vec<String>,
    pub sensors: Vec<usize>,
    pub seed: u64,
    pub points: Vec<DesignPoint>,
    pub classifier: Option<ClassifierReport>,
}

impl TrainingEnsemble {
    pub fn survivors(&self) -> impl Iterator<Item = &DesignPoint> {
        self.points.iter().filter(|p| p.status.survived())
    }

    pub fn n_survivors(&self) -> usize {
        self.survivors().count()
    }

    pub fn count(&self, f: impl Fn(&PointStatus) -> bool) -> usize {
        self.points.iter().filter(|p| f(&p.status)).count()
    }

    fn matrices(&self, status: &PointStatus) -> (DMatrix<f64>, DMatrix<f64>) {
        let pts: Vec<&DesignPoint> = self.points.iter().filter(|p| &p.status == status).collect();
        let d = self.parameter_names.len();
        let p = self.output_labels.len();
        let x = DMatrix::from_fn(pts.len(), d, |i, k| pts[i].theta[k]);
        let y = DMatrix::from_fn(pts.len(), p, |i, k| pts[i].outputs.as_ref().map_or(f64::NAN, |o| o[k]));
        (x, y)
    }

    /// Training inputs (`M × d`) and outputs (`M × p`).
    pub fn train(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        self.matrices(&PointStatus::Train)
    }

    pub fn validation(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        self.matrices(&PointStatus::Validation)
    }

    /// Survivor parameters as CSV: `id, split, <parameter names>`.
    pub fn write_parameters_csv<W: Write>(&self, w: W, comment: Option<&str>) -> Result<()> {
        self.write_rows(w, comment, &self.parameter_names, |p| Some(p.theta.clone()))
    }

    /// Survivor outputs as CSV: `id, split, <output labels>`.
    pub fn write_outputs_csv<W: Write>(&self, w: W, comment: Option<&str>) -> Result<()> {
        self.write_rows(w, comment, &self.output_labels, |p| p.outputs.clone())
    }

    fn write_rows<W: Write>(
        &self,
        mut w: W,
        comment: Option<&str>,
        names: &[String],
        values: impl Fn(&DesignPoint) -> Option<Vec<f64>>,
    ) -> Result<()> {
        if let Some(c) = comment {
            writeln!(w, "# {c}")?;
        }
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["id".to_string(), "split".to_string()];
        header.extend(names.iter().cloned());
        out.write_record(&header)?;
        for p in self.survivors() {
            let split = if p.status == PointStatus::Train { "train" } else { "validation" };
            let mut row = vec![p.id.to_string(), split.to_string()];
            row.extend(values(p).unwrap_or_default().iter().map(|v| format!("{v:?}")));
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Rebuild the survivor part of an ensemble from the two CSVs.
    pub fn read_csv<R1: Read, R2: Read>(params: R1, outputs: R2) -> Result<Self> {
        let (pn, prow) = read_split_csv(params)?;
        let (on, orow) = read_split_csv(outputs)?;
        if prow.len() != orow.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} parameter rows but {} output rows",
                prow.len(),
                orow.len()
            )));
        }
        let points = prow
            .into_iter()
            .zip(orow)
            .map(|((id, split, theta), (id2, _, outputs))| {
                if id != id2 {
                    return Err(Error::InvalidInput(format!("row ids {id} and {id2} do not match")));
                }
                let status = match split.as_str() {
                    "train" => PointStatus::Train,
                    "validation" => PointStatus::Validation,
                    other => return Err(Error::InvalidInput(format!("unknown split {other:?}"))),
                };
                Ok(DesignPoint { id, theta, status, outputs: Some(outputs) })
            })
            .collect::<Result<Vec<_>>>()?;
        let sensors = Vec::new();
        Ok(Self { parameter_names: pn, output_labels: on, sensors, seed: 0, points, classifier: None })
    }
}

type SplitRows = (Vec<String>, Vec<(usize, String, Vec<f64>)>);

fn read_split_csv<R: Read>(r: R) -> Result<SplitRows> {
    let mut rd = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r);
    let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
    if header.len() < 3 || header[0] != "id" || header[1] != "split" {
        return Err(Error::InvalidInput("expected columns id, split, ...".into()));
    }
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let id = rec[0].parse().map_err(|_| Error::InvalidInput(format!("bad id {:?}", &rec[0])))?;
        let vals = rec
            .iter()
            .skip(2)
            .map(|f| f.trim().parse::<f64>().map_err(|_| Error::InvalidInput(format!("not a number: {f:?}"))))
            .collect::<Result<Vec<_>>>()?;
        if vals.len() != header.len() - 2 {
            return Err(Error::DimensionMismatch(format!("row {id} has {} values", vals.len())));
        }
        rows.push((id, rec[1].to_string(), vals));
    }
    Ok((header[2..].to_vec(), rows))
}

/// Run both rejection stages on an initial LHS of `cfg.initial_size` points.
/// Without a classifier, stage one accepts everything.
pub fn build_ensemble(cfg: &PipelineConfig, classifier: Option<&ClassifierReport>) -> Result<TrainingEnsemble> {
    let space = ParameterSpace::mms();
    let sensors = cfg.sensors();
    let design = lhs_sample(cfg.initial_size, space.bounds(), rng::derive_seed(cfg.seed, &[tags::LHS]), cfg.maximin_restarts);
    let mut points: Vec<DesignPoint> = (0..design.len())
        .map(|i| DesignPoint { id: i, theta: design.row(i), status: PointStatus::Train, outputs: None })
        .collect();

    for p in points.iter_mut() {
        if let Some(c) = classifier {
            let prob = c.classifier.probability(&p.theta[..4])?;
            if prob <= c.classifier.threshold {
                p.status = PointStatus::RejectedByClassifier { probability: prob };
            }
        }
    }

    let sims: Vec<(usize, std::result::Result<Vec<Option<f64>>, Error>)> = points
        .par_iter()
        .filter(|p| p.status.survived())
        .map(|p| {
            let r = TissueParams::from_slice(&p.theta)
                .and_then(|tp| s1s2_outputs(&tp, &cfg.geometry, &cfg.protocol, &cfg.solver, &sensors))
                .map(|m| m.flatten());
            (p.id, r)
        })
        .collect();
    for (id, r) in sims {
        let p = &mut points[id];
        match r {
            Ok(v) => {
                let missing = v.iter().filter(|x| x.is_none()).count();
                if missing > 0 {
                    p.status = PointStatus::MissingOutputs { missing };
                } else {
                    p.outputs = Some(v.into_iter().flatten().collect());
                }
            }
            Err(e @ Error::UnstableStep { .. }) => p.status = PointStatus::SimulationFailed { error: e.to_string() },
            Err(e) => return Err(e),
        }
    }

    let mut survivors: Vec<usize> = points.iter().filter(|p| p.status.survived()).map(|p| p.id).collect();
    let required = 2 * space.dim();
    if survivors.len() < required {
        return Err(Error::InsufficientSurvivors { survivors: survivors.len(), required });
    }
    survivors.shuffle(&mut rng::substream(cfg.seed, &[tags::SPLIT]));
    let n_train = ((survivors.len() as f64) * cfg.train_fraction).round() as usize;
    for &id in &survivors[n_train..] {
        points[id].status = PointStatus::Validation;
    }
    log::info!(
        "design: {} of {} points survived ({} train)",
        survivors.len(),
        points.len(),
        n_train
    );

    Ok(TrainingEnsemble {
        parameter_names: space.names().to_vec(),
        output_labels: output_labels(sensors.len()),
        sensors,
        seed: cfg.seed,
        points,
        classifier: classifier.cloned(),
    })
}

/// Classifier training followed by both rejection stages.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<TrainingEnsemble> {
    let report = train_classifier(cfg)?;
    build_ensemble(cfg, Some(&report))
}
