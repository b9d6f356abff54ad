use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{EmulatorDoc, EmulatorModel, FitOptions};
use crate::error::{Error, Result};
use crate::operator::ObservationOperator;
use crate::rng;

pub const BANK_SCHEMA_VERSION: u32 = 1;

/// Independent emulators, one per output label.
#[derive(Debug, Clone)]
pub struct EmulatorBank {
    emulators: Vec<EmulatorModel>,
}

impl EmulatorBank {
    pub fn new(emulators: Vec<EmulatorModel>) -> Result<Self> {
        let first = emulators
            .first()
            .ok_or_else(|| Error::InvalidInput("emulator bank needs at least one emulator".into()))?;
        let d = first.input_dim();
        if emulators.iter().any(|e| e.input_dim() != d) {
            return Err(Error::DimensionMismatch("emulators have different input dimensions".into()));
        }
        let mut labels: Vec<_> = emulators.iter().map(|e| e.label()).collect();
        labels.sort_unstable();
        labels.dedup();
        if labels.len() != emulators.len() {
            return Err(Error::InvalidInput("duplicate emulator labels".into()));
        }
        Ok(Self { emulators })
    }

    pub fn emulators(&self) -> &[EmulatorModel] {
        &self.emulators
    }

    pub fn labels(&self) -> Vec<String> {
        self.emulators.iter().map(|e| e.label().to_string()).collect()
    }

    pub fn len(&self) -> usize {
        self.emulators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.emulators.is_empty()
    }

    /// A bank restricted to (and ordered by) the given labels.
    pub fn subset(&self, labels: &[String]) -> Result<Self> {
        let picked = labels
            .iter()
            .map(|l| {
                self.emulators
                    .iter()
                    .find(|e| e.label() == l)
                    .cloned()
                    .ok_or_else(|| Error::InvalidInput(format!("no emulator for output {l:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(picked)
    }

    /// Predictive means and variances (`p × N`) at the columns of `thetas`.
    pub fn predict_bank(&self, thetas: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        self.check_input(thetas)?;
        let n = thetas.ncols();
        let p = self.emulators.len();
        let per_output: Vec<_> = self.emulators.par_iter().map(|e| e.predict_columns(thetas)).collect();
        let mut means = DMatrix::zeros(p, n);
        let mut vars = DMatrix::zeros(p, n);
        for (i, (m, v)) in per_output.into_iter().enumerate() {
            means.set_row(i, &m.transpose());
            vars.set_row(i, &v.transpose());
        }
        Ok((means, vars))
    }

    /// Held-out R² per output for inputs `x` (`M × d`) and targets `y` (`M × p`).
    pub fn held_out_r2(&self, x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<Vec<f64>> {
        if y.ncols() != self.len() || y.nrows() != x.nrows() {
            return Err(Error::DimensionMismatch(format!("{} inputs, targets {:?} for {} outputs", x.nrows(), y.shape(), self.len())));
        }
        let (mean, _) = self.predict_bank(&x.transpose())?;
        Ok((0..self.len())
            .map(|j| {
                let truth: Vec<f64> = y.column(j).iter().copied().collect();
                let pred: Vec<f64> = mean.row(j).iter().copied().collect();
                super::r_squared(&truth, &pred)
            })
            .collect())
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        let doc = BankDoc {
            schema_version: BANK_SCHEMA_VERSION,
            emulators: self.emulators.iter().map(EmulatorModel::to_doc).collect(),
        };
        serde_json::to_writer(w, &doc)?;
        Ok(())
    }

    pub fn read_json<R: Read>(r: R) -> Result<Self> {
        let doc: BankDoc = serde_json::from_reader(r)?;
        if doc.schema_version != BANK_SCHEMA_VERSION {
            return Err(Error::InvalidInput(format!(
                "unsupported emulator bank schema version {} (expected {BANK_SCHEMA_VERSION})",
                doc.schema_version
            )));
        }
        let models = doc.emulators.into_iter().map(EmulatorModel::from_doc).collect::<Result<Vec<_>>>()?;
        Self::new(models)
    }
}

impl ObservationOperator for EmulatorBank {
    fn input_dim(&self) -> usize {
        self.emulators[0].input_dim()
    }

    fn output_dim(&self) -> usize {
        self.emulators.len()
    }

    fn evaluate(&self, thetas: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        self.predict_bank(thetas)
    }

    fn output_labels(&self) -> Option<Vec<String>> {
        Some(self.labels())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BankDoc {
    schema_version: u32,
    emulators: Vec<EmulatorDoc>,
}

/// Fit one emulator per column of `y` (`M × p`). Emulators are fitted in
/// parallel; each gets a restart seed derived from `opts.seed` and its index.
pub fn fit_bank(x: &DMatrix<f64>, y: &DMatrix<f64>, labels: &[String], opts: &FitOptions) -> Result<EmulatorBank> {
    if y.ncols() != labels.len() || y.nrows() != x.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "{} inputs, targets {:?}, {} labels",
            x.nrows(),
            y.shape(),
            labels.len()
        )));
    }
    let models = (0..labels.len())
        .into_par_iter()
        .map(|j| {
            let o = FitOptions { seed: rng::derive_seed(opts.seed, &[j as u64]), ..opts.clone() };
            let col: DVector<f64> = y.column(j).into_owned();
            EmulatorModel::fit(labels[j].clone(), x, &col, &o)
        })
        .collect::<Result<Vec<_>>>()?;
    EmulatorBank::new(models)
}
