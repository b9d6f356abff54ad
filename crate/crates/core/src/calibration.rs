//! Problem-statement layer: parameter spaces, observations, ensembles and
//! Gaussian summaries shared by the emulator, filter and sampler.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Names and box bounds of a `d`-dimensional calibration space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSpace {
    names: Vec<String>,
    bounds: Vec<(f64, f64)>,
}

impl ParameterSpace {
    pub fn new(names: Vec<String>, bounds: Vec<(f64, f64)>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::InvalidInput("parameter space needs d >= 1".into()));
        }
        if names.len() != bounds.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} names but {} bounds",
                names.len(),
                bounds.len()
            )));
        }
        let mut seen = HashSet::new();
        for n in &names {
            if !seen.insert(n.as_str()) {
                return Err(Error::InvalidInput(format!("duplicate parameter name {n:?}")));
            }
        }
        for (n, &(lo, hi)) in names.iter().zip(&bounds) {
            if lo.is_nan() || hi.is_nan() || lo >= hi {
                return Err(Error::InvalidInput(format!("bad bounds for {n}: [{lo}, {hi}]")));
            }
        }
        Ok(Self { names, bounds })
    }

    /// Space with the given names and no effective bounds.
    pub fn unbounded(names: &[&str]) -> Self {
        Self::new(
            names.iter().map(|s| s.to_string()).collect(),
            vec![(f64::NEG_INFINITY, f64::INFINITY); names.len()],
        )
        .expect("valid unbounded space")
    }

    /// The five tissue parameters with their Latin-hypercube ranges.
    /// Time constants in ms, conductivity in cm²/s.
    pub fn mms() -> Self {
        Self::new(
            ["tau_in", "tau_out", "tau_open", "tau_close", "D"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            vec![
                (0.01, 0.3),
                (1.0, 30.0),
                (65.0, 215.0),
                (100.0, 150.0),
                (0.1, 5.0),
            ],
        )
        .expect("valid mMS space")
    }

    /// Two-parameter toy problem on `[-5, 5]²`.
    pub fn toy() -> Self {
        Self::new(
            vec!["theta1".into(), "theta2".into()],
            vec![(-5.0, 5.0), (-5.0, 5.0)],
        )
        .expect("valid toy space")
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn midpoint(&self) -> DVector<f64> {
        DVector::from_iterator(self.dim(), self.bounds.iter().map(|&(lo, hi)| 0.5 * (lo + hi)))
    }

    pub fn contains(&self, values: &[f64]) -> bool {
        values.len() == self.dim()
            && values
                .iter()
                .zip(&self.bounds)
                .all(|(&v, &(lo, hi))| v >= lo && v <= hi)
    }

    /// Project a column vector into the box in place; returns the number of
    /// components that were moved.
    pub fn clamp_in_place(&self, values: &mut [f64]) -> usize {
        let mut moved = 0;
        for (v, &(lo, hi)) in values.iter_mut().zip(&self.bounds) {
            let c = v.clamp(lo, hi);
            if c != *v {
                *v = c;
                moved += 1;
            }
        }
        moved
    }
}

/// A point in a parameter space.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector {
    space: Arc<ParameterSpace>,
    values: DVector<f64>,
}

impl ParameterVector {
    pub fn new(space: Arc<ParameterSpace>, values: DVector<f64>) -> Result<Self> {
        if values.len() != space.dim() {
            return Err(Error::DimensionMismatch(format!(
                "vector has {} components, space has {}",
                values.len(),
                space.dim()
            )));
        }
        Ok(Self { space, values })
    }

    pub fn from_slice(space: Arc<ParameterSpace>, values: &[f64]) -> Result<Self> {
        Self::new(space, DVector::from_column_slice(values))
    }

    pub fn space(&self) -> &Arc<ParameterSpace> {
        &self.space
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.space
            .names()
            .iter()
            .position(|n| n == name)
            .map(|i| self.values[i])
    }
}

/// Projects `theta` into its bounds. The flag is true when any component moved.
pub fn clamp_to_bounds(theta: &ParameterVector) -> (ParameterVector, bool) {
    let mut out = theta.clone();
    let moved = out.space.clamp_in_place(out.values.as_mut_slice());
    (out, moved > 0)
}

/// Observed data `y = h(θ) + ε`, `ε ~ N(0, R)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ObservationDoc", into = "ObservationDoc")]
pub struct ObservationSet {
    y: DVector<f64>,
    noise_cov: DMatrix<f64>,
    labels: Vec<String>,
}

impl ObservationSet {
    pub fn new(y: DVector<f64>, noise_cov: DMatrix<f64>, labels: Vec<String>) -> Result<Self> {
        let p = y.len();
        if p == 0 {
            return Err(Error::InvalidInput("observation set needs p >= 1".into()));
        }
        if noise_cov.shape() != (p, p) || labels.len() != p {
            return Err(Error::DimensionMismatch(format!(
                "y has {p} entries, R is {:?}, {} labels",
                noise_cov.shape(),
                labels.len()
            )));
        }
        if !linalg::is_symmetric(&noise_cov, 1e-12) {
            return Err(Error::InvalidInput("noise covariance is not symmetric".into()));
        }
        if !linalg::is_positive_definite(&noise_cov) {
            return Err(Error::InvalidInput("noise covariance is not positive definite".into()));
        }
        Ok(Self { y, noise_cov, labels })
    }

    /// Independent noise with per-entry standard deviations.
    pub fn with_diagonal_noise(y: DVector<f64>, sd: &[f64], labels: Vec<String>) -> Result<Self> {
        if sd.len() != y.len() {
            return Err(Error::DimensionMismatch("one noise sd per observation".into()));
        }
        let r = DMatrix::from_diagonal(&DVector::from_iterator(sd.len(), sd.iter().map(|s| s * s)));
        Self::new(y, r, labels)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn noise_cov(&self) -> &DMatrix<f64> {
        &self.noise_cov
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }
}

#[derive(Serialize, Deserialize)]
struct ObservationDoc {
    y: Vec<f64>,
    noise_cov: Vec<Vec<f64>>,
    labels: Vec<String>,
}

impl TryFrom<ObservationDoc> for ObservationSet {
    type Error = Error;
    fn try_from(d: ObservationDoc) -> Result<Self> {
        let p = d.y.len();
        let r = matrix_from_rows(&d.noise_cov, p, p)?;
        ObservationSet::new(DVector::from_vec(d.y), r, d.labels)
    }
}

impl From<ObservationSet> for ObservationDoc {
    fn from(o: ObservationSet) -> Self {
        ObservationDoc {
            y: o.y.iter().copied().collect(),
            noise_cov: matrix_to_rows(&o.noise_cov),
            labels: o.labels,
        }
    }
}

/// Mean vector and covariance matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SummaryDoc", into = "SummaryDoc")]
pub struct GaussianSummary {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianSummary {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if cov.shape() != (d, d) {
            return Err(Error::DimensionMismatch(format!(
                "mean has {d} entries, covariance is {:?}",
                cov.shape()
            )));
        }
        if !linalg::is_symmetric(&cov, 1e-12) {
            return Err(Error::InvalidInput("covariance is not symmetric".into()));
        }
        let eig = nalgebra::SymmetricEigen::new(cov.clone()).eigenvalues;
        let largest = eig.max().max(0.0);
        if eig.min() < -1e-10 * largest {
            return Err(Error::InvalidInput(
                "covariance is not positive semidefinite".into(),
            ));
        }
        Ok(Self { mean, cov })
    }

    pub fn isotropic(mean: DVector<f64>, variance: f64) -> Result<Self> {
        let d = mean.len();
        Self::new(mean, DMatrix::identity(d, d) * variance)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn std_devs(&self) -> DVector<f64> {
        self.cov.diagonal().map(|v| v.max(0.0).sqrt())
    }
}

#[derive(Serialize, Deserialize)]
struct SummaryDoc {
    mean: Vec<f64>,
    cov: Vec<Vec<f64>>,
}

impl TryFrom<SummaryDoc> for GaussianSummary {
    type Error = Error;
    fn try_from(d: SummaryDoc) -> Result<Self> {
        let n = d.mean.len();
        let cov = matrix_from_rows(&d.cov, n, n)?;
        GaussianSummary::new(DVector::from_vec(d.mean), cov)
    }
}

impl From<GaussianSummary> for SummaryDoc {
    fn from(g: GaussianSummary) -> Self {
        SummaryDoc {
            mean: g.mean.iter().copied().collect(),
            cov: matrix_to_rows(&g.cov),
        }
    }
}

/// `N` parameter vectors stored column-wise (`d × N`).
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    space: Arc<ParameterSpace>,
    members: DMatrix<f64>,
    pub iteration: usize,
    pub rng_seed: u64,
}

impl Ensemble {
    pub fn new(space: Arc<ParameterSpace>, members: DMatrix<f64>, iteration: usize, rng_seed: u64) -> Result<Self> {
        if members.nrows() != space.dim() {
            return Err(Error::DimensionMismatch(format!(
                "members have {} rows, space has dimension {}",
                members.nrows(),
                space.dim()
            )));
        }
        if members.ncols() < 2 {
            return Err(Error::InvalidInput("ensemble needs at least two members".into()));
        }
        Ok(Self { space, members, iteration, rng_seed })
    }

    /// Build from individual vectors; all must share one space and dimension.
    pub fn from_members(members: &[ParameterVector], iteration: usize, rng_seed: u64) -> Result<Self> {
        let first = members
            .first()
            .ok_or_else(|| Error::InvalidInput("empty ensemble".into()))?;
        let d = first.values.len();
        if let Some(bad) = members.iter().find(|m| m.values.len() != d) {
            return Err(Error::DimensionMismatch(format!(
                "member of dimension {} in ensemble of dimension {d}",
                bad.values.len()
            )));
        }
        let cols: Vec<_> = members.iter().map(|m| m.values.clone()).collect();
        Self::new(first.space.clone(), DMatrix::from_columns(&cols), iteration, rng_seed)
    }

    pub fn space(&self) -> &Arc<ParameterSpace> {
        &self.space
    }

    pub fn members(&self) -> &DMatrix<f64> {
        &self.members
    }

    pub fn size(&self) -> usize {
        self.members.ncols()
    }

    pub fn dim(&self) -> usize {
        self.members.nrows()
    }

    pub fn member(&self, n: usize) -> ParameterVector {
        ParameterVector {
            space: self.space.clone(),
            values: self.members.column(n).into_owned(),
        }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        write_matrix_csv(w, self.space.names(), &self.members.transpose(), None)
    }

    pub fn read_csv<R: Read>(r: R, space: Arc<ParameterSpace>, iteration: usize, rng_seed: u64) -> Result<Self> {
        let (header, rows) = read_matrix_csv(r)?;
        if header != space.names() {
            return Err(Error::InvalidInput(format!(
                "csv header {header:?} does not match parameter names {:?}",
                space.names()
            )));
        }
        Self::new(space, rows.transpose(), iteration, rng_seed)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "names": self.space.names(),
            "bounds": self.space.bounds().iter().map(|&(lo, hi)| [json_f64(lo), json_f64(hi)]).collect::<Vec<_>>(),
            "iteration": self.iteration,
            "rng_seed": self.rng_seed,
            "members": matrix_to_rows(&self.members.transpose()),
        })
    }

    pub fn from_json(v: &serde_json::Value) -> Result<Self> {
        #[derive(Deserialize)]
        struct Doc {
            names: Vec<String>,
            bounds: Vec<[Option<f64>; 2]>,
            iteration: usize,
            rng_seed: u64,
            members: Vec<Vec<f64>>,
        }
        let doc: Doc = serde_json::from_value(v.clone())?;
        let bounds = doc
            .bounds
            .iter()
            .map(|[lo, hi]| (lo.unwrap_or(f64::NEG_INFINITY), hi.unwrap_or(f64::INFINITY)))
            .collect();
        let space = Arc::new(ParameterSpace::new(doc.names, bounds)?);
        let d = space.dim();
        let rows = matrix_from_rows(&doc.members, doc.members.len(), d)?;
        Self::new(space, rows.transpose(), doc.iteration, doc.rng_seed)
    }
}

fn json_f64(x: f64) -> serde_json::Value {
    if x.is_finite() {
        serde_json::json!(x)
    } else {
        serde_json::Value::Null
    }
}

/// Sample mean and unbiased (`N − 1`) covariance of an ensemble.
pub fn ensemble_mean_cov(e: &Ensemble) -> Result<GaussianSummary> {
    mean_cov_columns(e.members())
}

/// Mean and unbiased covariance of the columns of `x` (`d × N`, `N ≥ 2`).
pub fn mean_cov_columns(x: &DMatrix<f64>) -> Result<GaussianSummary> {
    let n = x.ncols();
    if n < 2 {
        return Err(Error::InvalidInput("need at least two columns".into()));
    }
    let mean = x.column_mean();
    let mut centered = x.clone();
    for mut col in centered.column_iter_mut() {
        col -= &mean;
    }
    let mut cov = &centered * centered.transpose() / (n as f64 - 1.0);
    linalg::symmetrize(&mut cov);
    Ok(GaussianSummary { mean, cov })
}

pub(crate) fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub(crate) fn matrix_from_rows(rows: &[Vec<f64>], nrows: usize, ncols: usize) -> Result<DMatrix<f64>> {
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::DimensionMismatch(format!(
            "expected a {nrows}×{ncols} matrix"
        )));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

/// Write a matrix as CSV, one row per matrix row. An optional leading
/// `# ...` comment line carries provenance.
pub fn write_matrix_csv<W: Write>(
    mut w: W,
    header: &[String],
    rows: &DMatrix<f64>,
    comment: Option<&str>,
) -> Result<()> {
    if let Some(c) = comment {
        writeln!(w, "# {c}")?;
    }
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(header)?;
    for r in rows.row_iter() {
        wr.write_record(r.iter().map(|x| format!("{x:?}")))?;
    }
    wr.flush()?;
    Ok(())
}

/// Read a numeric CSV with a header row; `#` lines are skipped.
pub fn read_matrix_csv<R: Read>(r: R) -> Result<(Vec<String>, DMatrix<f64>)> {
    let mut rd = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r);
    let header: Vec<String> = rd.headers()?.iter().map(|s| s.to_string()).collect();
    let mut data = Vec::new();
    let mut nrows = 0;
    for rec in rd.records() {
        let rec = rec?;
        if rec.len() != header.len() {
            return Err(Error::DimensionMismatch(format!(
                "row {} has {} fields, header has {}",
                nrows + 1,
                rec.len(),
                header.len()
            )));
        }
        for f in rec.iter() {
            let v: f64 = f
                .trim()
                .parse()
                .map_err(|_| Error::InvalidInput(format!("not a number: {f:?}")))?;
            data.push(v);
        }
        nrows += 1;
    }
    Ok((header.clone(), DMatrix::from_row_slice(nrows, header.len(), &data)))
}
