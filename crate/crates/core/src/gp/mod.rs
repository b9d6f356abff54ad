//! Exact Gaussian process regression with a linear prior mean and an ARD
//! squared-exponential kernel.
//!
//! Inputs are standardized per dimension and outputs centred and scaled
//! before fitting; all public methods take and return natural units. The
//! linear mean coefficients are profiled out by generalized least squares,
//! so the kernel hyperparameters (`ln ℓ`, `ln σ_f²`, `ln σ_n²`) are the only
//! quantities searched by the optimizer.

mod bank;
pub mod optim;

pub use bank::{fit_bank, EmulatorBank, BANK_SCHEMA_VERSION};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::calibration::{matrix_from_rows, matrix_to_rows};
use crate::error::{Error, Result};
use crate::linalg::cholesky_with_jitter;
use crate::rng;

const LN_2PI: f64 = 1.837_877_066_409_345_5;
const MAX_JITTER: f64 = 1e-2;
/// Random restarts start log-uniformly inside these ranges (intersected with
/// the search bounds) for the lengthscales, signal variance and jitter.
const START_REGION: [(f64, f64); 3] = [(0.1, 10.0), (0.1, 10.0), (1e-8, 1e-3)];
/// Kernel exponents below this are flushed to zero, keeping subnormals out of
/// the factorizations.
const UNDERFLOW: f64 = -700.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    /// Kernel amplitude `σ_f²` (standardized output units).
    pub signal_var: f64,
    /// One lengthscale per input dimension (standardized input units).
    pub lengthscales: Vec<f64>,
    /// Diagonal noise / jitter `σ_n²`.
    pub jitter: f64,
}

impl Hyperparameters {
    fn to_log(&self) -> DVector<f64> {
        let d = self.lengthscales.len();
        DVector::from_fn(d + 2, |i, _| match i {
            i if i < d => self.lengthscales[i].ln(),
            i if i == d => self.signal_var.ln(),
            _ => self.jitter.ln(),
        })
    }

    fn from_log(eta: &DVector<f64>) -> Self {
        let d = eta.len() - 2;
        Self {
            lengthscales: eta.rows(0, d).iter().map(|v| v.exp()).collect(),
            signal_var: eta[d].exp(),
            jitter: eta[d + 1].exp(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitOptions {
    pub restarts: usize,
    pub seed: u64,
    pub max_iter: usize,
    pub lengthscale_bounds: (f64, f64),
    pub signal_var_bounds: (f64, f64),
    pub jitter_bounds: (f64, f64),
    /// Fit on the logarithm of the inputs; they must be positive.
    pub log_inputs: bool,
    /// Fit on the logarithm of the targets and predict log-normal moments.
    pub log_outputs: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            restarts: 10,
            seed: 0,
            max_iter: 200,
            lengthscale_bounds: (1e-2, 1e2),
            signal_var_bounds: (1e-4, 1e4),
            jitter_bounds: (1e-10, 1e-2),
            log_inputs: false,
            log_outputs: false,
        }
    }
}

/// Maps between natural and standardized coordinates: an optional log,
/// then an affine map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub x_mean: Vec<f64>,
    pub x_scale: Vec<f64>,
    pub y_mean: f64,
    pub y_scale: f64,
    #[serde(default)]
    pub log_inputs: bool,
    #[serde(default)]
    pub log_outputs: bool,
}

impl Standardization {
    pub fn from_data(x: &DMatrix<f64>, y: &DVector<f64>) -> Self {
        Self::from_transformed(x, y, false, false)
    }

    fn from_transformed(x: &DMatrix<f64>, y: &DVector<f64>, log_inputs: bool, log_outputs: bool) -> Self {
        let x = if log_inputs { x.map(f64::ln) } else { x.clone() };
        let y = if log_outputs { y.map(f64::ln) } else { y.clone() };
        let m = x.nrows() as f64;
        let x_mean: Vec<f64> = x.column_iter().map(|c| c.sum() / m).collect();
        let x_scale = x
            .column_iter()
            .zip(&x_mean)
            .map(|(c, &mu)| {
                let s = (c.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / m).sqrt();
                if s > 0.0 { s } else { 1.0 }
            })
            .collect();
        let y_mean = y.mean();
        let sd = (y.iter().map(|v| (v - y_mean).powi(2)).sum::<f64>() / m).sqrt();
        let y_scale = if sd > 1e-12 * y_mean.abs().max(1.0) { sd } else { 1.0 };
        Self { x_mean, x_scale, y_mean, y_scale, log_inputs, log_outputs }
    }

    pub fn identity(d: usize) -> Self {
        Self { x_mean: vec![0.0; d], x_scale: vec![1.0; d], y_mean: 0.0, y_scale: 1.0, log_inputs: false, log_outputs: false }
    }

    fn input(&self, v: f64, j: usize) -> f64 {
        let v = if self.log_inputs { v.ln() } else { v };
        (v - self.x_mean[j]) / self.x_scale[j]
    }

    fn inputs(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| self.input(x[(i, j)], j))
    }

    /// Standardize the columns of a `d × N` matrix into an `N × d` matrix.
    fn inputs_from_columns(&self, thetas: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(thetas.ncols(), thetas.nrows(), |i, j| self.input(thetas[(j, i)], j))
    }

    fn outputs(&self, y: &DVector<f64>) -> DVector<f64> {
        y.map(|v| ((if self.log_outputs { v.ln() } else { v }) - self.y_mean) / self.y_scale)
    }

    /// Log-density change from standardized to natural output units.
    fn log_jacobian(&self, y: &DVector<f64>) -> f64 {
        let log_y: f64 = if self.log_outputs { y.iter().map(|v| v.ln()).sum() } else { 0.0 };
        -(y.len() as f64) * self.y_scale.ln() - log_y
    }
}

/// `σ_f² exp(-½ Σ_k (a_k − b_k)² / ℓ_k²)` between the rows of `a` and `b`.
fn kernel_matrix(a: &DMatrix<f64>, b: &DMatrix<f64>, hyper: &Hyperparameters) -> DMatrix<f64> {
    let inv_l2: Vec<f64> = hyper.lengthscales.iter().map(|l| 1.0 / (l * l)).collect();
    let d = inv_l2.len();
    DMatrix::from_fn(a.nrows(), b.nrows(), |i, j| {
        let mut s = 0.0;
        for k in 0..d {
            let diff = a[(i, k)] - b[(j, k)];
            s += diff * diff * inv_l2[k];
        }
        if -0.5 * s < UNDERFLOW {
            0.0
        } else {
            hyper.signal_var * (-0.5 * s).exp()
        }
    })
}

fn design_matrix(xs: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(xs.nrows(), xs.ncols() + 1, |i, j| if j == 0 { 1.0 } else { xs[(i, j - 1)] })
}

/// Generalized least-squares coefficients of the linear mean.
fn gls_coefficients(chol: &Cholesky<f64, Dyn>, h: &DMatrix<f64>, z: &DVector<f64>) -> DVector<f64> {
    let kinv_h = chol.solve(h);
    let mut a = h.transpose() * &kinv_h;
    let ridge = 1e-10 * (1.0 + a.diagonal().amax());
    for i in 0..a.nrows() {
        a[(i, i)] += ridge;
    }
    let rhs = kinv_h.transpose() * z;
    match Cholesky::new(a) {
        Some(c) => c.solve(&rhs),
        None => DVector::zeros(h.ncols()),
    }
}

fn log_det_from_chol(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

/// Gaussian log density of `y` under mean `[1, x] β` and the kernel with
/// hyperparameters `hyper`, in whatever coordinates `x` and `y` are given.
pub fn gaussian_log_marginal(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    hyper: &Hyperparameters,
    beta: &DVector<f64>,
) -> Result<f64> {
    let m = x.nrows();
    if y.len() != m || beta.len() != x.ncols() + 1 || hyper.lengthscales.len() != x.ncols() {
        return Err(Error::DimensionMismatch("log marginal likelihood inputs".into()));
    }
    let mut k = kernel_matrix(x, x, hyper);
    for i in 0..m {
        k[(i, i)] += hyper.jitter;
    }
    let chol = Cholesky::new(k).ok_or(Error::SingularKernel { jitter: hyper.jitter })?;
    let r = y - design_matrix(x) * beta;
    let alpha = chol.solve(&r);
    Ok(-0.5 * r.dot(&alpha) - 0.5 * log_det_from_chol(&chol) - 0.5 * m as f64 * LN_2PI)
}

/// Inverse of a lower-triangular matrix by column-oriented forward substitution.
fn lower_triangular_inverse(l: &DMatrix<f64>) -> DMatrix<f64> {
    let m = l.nrows();
    let ls = l.as_slice();
    let mut x = DMatrix::zeros(m, m);
    let xs = x.as_mut_slice();
    for j in 0..m {
        let col = &mut xs[j * m..(j + 1) * m];
        col[j] = 1.0;
        for k in j..m {
            let lk = &ls[k * m..(k + 1) * m];
            col[k] /= lk[k];
            let xk = col[k];
            if xk != 0.0 {
                for (c, &lv) in col[k + 1..].iter_mut().zip(&lk[k + 1..]) {
                    *c -= xk * lv;
                }
            }
        }
    }
    x
}

/// Training data in standardized coordinates with the per-dimension squared
/// distance matrices cached for repeated likelihood evaluations.
struct Profile<'a> {
    z: &'a DVector<f64>,
    h: DMatrix<f64>,
    sqdist: Vec<DMatrix<f64>>,
}

impl<'a> Profile<'a> {
    fn new(xs: &DMatrix<f64>, z: &'a DVector<f64>) -> Self {
        let m = xs.nrows();
        let sqdist = (0..xs.ncols()).map(|q| DMatrix::from_fn(m, m, |i, j| (xs[(i, q)] - xs[(j, q)]).powi(2))).collect();
        Self { z, h: design_matrix(xs), sqdist }
    }

    /// Profiled log marginal likelihood and its gradient with respect to
    /// `η = (ln ℓ, ln σ_f², ln σ_n²)`. `None` when the kernel is not factorizable.
    fn eval(&self, eta: &DVector<f64>) -> Option<(f64, DVector<f64>)> {
        let hyper = Hyperparameters::from_log(eta);
        let d = self.sqdist.len();
        let m = self.z.len();
        let mut s = DMatrix::<f64>::zeros(m, m);
        for (q, dq) in self.sqdist.iter().enumerate() {
            let c = -0.5 / hyper.lengthscales[q].powi(2);
            s.iter_mut().zip(dq.iter()).for_each(|(a, b)| *a += c * b);
        }
        let kf = s.map(|v| if v < UNDERFLOW { 0.0 } else { hyper.signal_var * v.exp() });
        let mut k = kf.clone();
        for i in 0..m {
            k[(i, i)] += hyper.jitter;
        }
        let chol = Cholesky::new(k)?;
        let beta = gls_coefficients(&chol, &self.h, self.z);
        let r = self.z - &self.h * &beta;
        let alpha = chol.solve(&r);
        let lml = -0.5 * r.dot(&alpha) - 0.5 * log_det_from_chol(&chol) - 0.5 * m as f64 * LN_2PI;
        if !lml.is_finite() {
            return None;
        }

        // W = α αᵀ − K⁻¹; dL/dη_j = ½ tr(W ∂K/∂η_j). β drops out by the envelope theorem.
        let linv = lower_triangular_inverse(&chol.l());
        let kinv = linv.transpose() * &linv;
        let trace_w = alpha.norm_squared() - kinv.trace();
        let mut wk = kinv;
        for (j, (col, kcol)) in wk.column_iter_mut().zip(kf.column_iter()).enumerate() {
            let aj = alpha[j];
            for ((w, &kv), &ai) in col.into_iter().zip(kcol.iter()).zip(alpha.iter()) {
                *w = (ai * aj - *w) * kv;
            }
        }
        let mut grad = DVector::zeros(d + 2);
        for (q, dq) in self.sqdist.iter().enumerate() {
            grad[q] = 0.5 * wk.dot(dq) / hyper.lengthscales[q].powi(2);
        }
        grad[d] = 0.5 * wk.sum();
        grad[d + 1] = 0.5 * hyper.jitter * trace_w;
        Some((lml, grad))
    }
}

#[cfg(test)]
fn profiled_lml_and_grad(xs: &DMatrix<f64>, z: &DVector<f64>, eta: &DVector<f64>) -> Option<(f64, DVector<f64>)> {
    Profile::new(xs, z).eval(eta)
}

/// Trained surrogate for one scalar output.
#[derive(Debug, Clone)]
pub struct EmulatorModel {
    label: String,
    x_train: DMatrix<f64>,
    y_train: DVector<f64>,
    standardization: Standardization,
    hyper: Hyperparameters,
    /// Linear-mean coefficients `[β₀, β]` in standardized coordinates.
    mean_coeffs: DVector<f64>,
    lml: f64,
    degenerate: bool,
    // cached factorization
    xs: DMatrix<f64>,
    l_inv: DMatrix<f64>,
    alpha: DVector<f64>,
}

impl EmulatorModel {
    /// Fit by maximizing the profiled marginal likelihood over `opts.restarts`
    /// starting points and keeping the best.
    pub fn fit(label: impl Into<String>, x: &DMatrix<f64>, y: &DVector<f64>, opts: &FitOptions) -> Result<Self> {
        let label = label.into();
        let (m, d) = x.shape();
        if m < 2 {
            return Err(Error::InvalidInput("need at least two training points".into()));
        }
        if y.len() != m {
            return Err(Error::DimensionMismatch(format!("{m} inputs but {} targets", y.len())));
        }
        if opts.restarts == 0 {
            return Err(Error::InvalidInput("restarts must be >= 1".into()));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("training data contains non-finite values".into()));
        }
        if (opts.log_inputs && x.iter().any(|&v| v <= 0.0)) || (opts.log_outputs && y.iter().any(|&v| v <= 0.0)) {
            return Err(Error::InvalidInput(format!("emulator {label}: log transform needs positive training data")));
        }
        let standardization = Standardization::from_transformed(x, y, opts.log_inputs, opts.log_outputs);
        let (y_min, y_max) = (y.min(), y.max());
        if y_max - y_min <= 1e-12 * y_max.abs().max(1.0) {
            log::warn!("emulator {label}: targets are constant, signal variance pinned at its floor");
            let hyper = Hyperparameters {
                signal_var: opts.signal_var_bounds.0,
                lengthscales: vec![1.0; d],
                jitter: opts.jitter_bounds.0.max(1e-8),
            };
            let mut model = Self::condition(label, x.clone(), y.clone(), standardization, hyper)?;
            model.degenerate = true;
            return Ok(model);
        }

        let xs = standardization.inputs(x);
        let z = standardization.outputs(y);
        let lo = DVector::from_fn(d + 2, |i, _| match i {
            i if i < d => opts.lengthscale_bounds.0.ln(),
            i if i == d => opts.signal_var_bounds.0.ln(),
            _ => opts.jitter_bounds.0.ln(),
        });
        let hi = DVector::from_fn(d + 2, |i, _| match i {
            i if i < d => opts.lengthscale_bounds.1.ln(),
            i if i == d => opts.signal_var_bounds.1.ln(),
            _ => opts.jitter_bounds.1.ln(),
        });

        let profile = Profile::new(&xs, &z);
        let mut rng = rng::substream(opts.seed, &[rng::tags::GP_RESTART]);
        let spg = optim::SpgOptions { max_iter: opts.max_iter, ..Default::default() };
        let mut best: Option<optim::SpgResult> = None;
        for restart in 0..opts.restarts {
            let start = if restart == 0 {
                Hyperparameters { signal_var: 1.0, lengthscales: vec![1.0; d], jitter: 1e-6 }.to_log()
            } else {
                DVector::from_fn(d + 2, |i, _| {
                    let (a, b) = START_REGION[(i >= d) as usize + (i > d) as usize];
                    let (a, b) = (a.ln().max(lo[i]), b.ln().min(hi[i]));
                    if a < b {
                        rng.gen_range(a..=b)
                    } else {
                        rng.gen_range(lo[i]..=hi[i])
                    }
                })
            };
            let objective = |eta: &DVector<f64>| profile.eval(eta).map(|(v, g)| (-v, -g));
            let result = optim::minimize_box_lbfgs(objective, &start, &lo, &hi, opts.max_iter)
                .or_else(|| {
                    log::trace!("emulator {label}: restart {restart} falls back to projected gradient");
                    optim::minimize_box(objective, start, &lo, &hi, spg)
                });
            if let Some(r) = result {
                log::trace!("emulator {label}: restart {restart} -lml {:.6} in {} iterations, {} evaluations", r.value, r.iterations, r.evaluations);
                if best.as_ref().map_or(true, |b| r.value < b.value) {
                    best = Some(r);
                }
            }
        }
        let best = best.ok_or(Error::SingularKernel { jitter: opts.jitter_bounds.1 })?;
        log::debug!("emulator {label}: best -lml {:.4} after {} restarts", best.value, opts.restarts);
        Self::condition(label, x.clone(), y.clone(), standardization, Hyperparameters::from_log(&best.x))
    }

    /// Condition on training data with fixed hyperparameters and
    /// standardization. Escalates jitter (×10 up to 1e-2) if needed.
    pub fn condition(
        label: impl Into<String>,
        x_train: DMatrix<f64>,
        y_train: DVector<f64>,
        standardization: Standardization,
        mut hyper: Hyperparameters,
    ) -> Result<Self> {
        let (m, d) = x_train.shape();
        if y_train.len() != m || hyper.lengthscales.len() != d || standardization.x_mean.len() != d {
            return Err(Error::DimensionMismatch("conditioning inputs".into()));
        }
        if hyper.lengthscales.iter().any(|&l| !(l > 0.0)) || !(hyper.signal_var > 0.0) || hyper.jitter < 0.0 {
            return Err(Error::InvalidInput("hyperparameters must be positive".into()));
        }
        let xs = standardization.inputs(&x_train);
        let z = standardization.outputs(&y_train);
        let kf = kernel_matrix(&xs, &xs, &hyper);
        let (chol, used) = cholesky_with_jitter(&kf, hyper.jitter, MAX_JITTER.max(hyper.jitter))?;
        if used != hyper.jitter {
            log::warn!("jitter escalated from {:e} to {:e}", hyper.jitter, used);
            hyper.jitter = used;
        }
        let h = design_matrix(&xs);
        let mean_coeffs = gls_coefficients(&chol, &h, &z);
        let r = &z - &h * &mean_coeffs;
        let alpha = chol.solve(&r);
        let lml_std = -0.5 * r.dot(&alpha) - 0.5 * log_det_from_chol(&chol) - 0.5 * m as f64 * LN_2PI;
        let l = chol.l();
        let l_inv = l
            .solve_lower_triangular(&DMatrix::identity(m, m))
            .ok_or(Error::SingularKernel { jitter: hyper.jitter })?;
        Ok(Self {
            label: label.into(),
            lml: lml_std + standardization.log_jacobian(&y_train),
            x_train,
            y_train,
            standardization,
            hyper,
            mean_coeffs,
            degenerate: false,
            xs,
            l_inv,
            alpha,
        })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn input_dim(&self) -> usize {
        self.x_train.ncols()
    }

    pub fn n_train(&self) -> usize {
        self.x_train.nrows()
    }

    pub fn hyperparameters(&self) -> &Hyperparameters {
        &self.hyper
    }

    pub fn standardization(&self) -> &Standardization {
        &self.standardization
    }

    pub fn mean_coeffs(&self) -> &DVector<f64> {
        &self.mean_coeffs
    }

    pub fn x_train(&self) -> &DMatrix<f64> {
        &self.x_train
    }

    pub fn y_train(&self) -> &DVector<f64> {
        &self.y_train
    }

    /// True when the targets were constant and no optimization was done.
    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    /// Log marginal likelihood of the training data at the stored
    /// hyperparameters (natural output units).
    pub fn fitted_log_likelihood(&self) -> f64 {
        self.lml
    }

    /// Prior variance `σ_f²` in natural output units (log units when the
    /// outputs are log-transformed).
    pub fn prior_variance(&self) -> f64 {
        self.hyper.signal_var * self.standardization.y_scale.powi(2)
    }

    pub fn noise_variance(&self) -> f64 {
        self.hyper.jitter * self.standardization.y_scale.powi(2)
    }

    /// Exact Gaussian log-density of `y` at inputs `x` under this model's
    /// prior mean and kernel.
    pub fn log_marginal_likelihood(&self, x: &DMatrix<f64>, y: &DVector<f64>) -> Result<f64> {
        if x.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch("input dimension".into()));
        }
        let xs = self.standardization.inputs(x);
        let z = self.standardization.outputs(y);
        let v = gaussian_log_marginal(&xs, &z, &self.hyper, &self.mean_coeffs)?;
        Ok(v + self.standardization.log_jacobian(y))
    }

    /// Posterior predictive mean and latent variance at one point.
    pub fn predict(&self, theta: &[f64]) -> Result<(f64, f64)> {
        if theta.len() != self.input_dim() {
            return Err(Error::DimensionMismatch(format!(
                "emulator {} expects {} inputs, got {}",
                self.label,
                self.input_dim(),
                theta.len()
            )));
        }
        let t = DMatrix::from_column_slice(theta.len(), 1, theta);
        let (m, v) = self.predict_columns(&t);
        Ok((m[0], v[0]))
    }

    /// Batch prediction at the columns of `thetas` (`d × N`).
    pub fn predict_columns(&self, thetas: &DMatrix<f64>) -> (DVector<f64>, DVector<f64>) {
        let ts = self.standardization.inputs_from_columns(thetas);
        let kstar = kernel_matrix(&self.xs, &ts, &self.hyper);
        let v = &self.l_inv * &kstar;
        let mean_std = design_matrix(&ts) * &self.mean_coeffs + kstar.transpose() * &self.alpha;
        let s = &self.standardization;
        let means = mean_std.map(|m| s.y_mean + s.y_scale * m);
        let vars = DVector::from_iterator(
            thetas.ncols(),
            v.column_iter()
                .map(|c| (self.hyper.signal_var - c.norm_squared()).max(0.0) * s.y_scale * s.y_scale),
        );
        if !s.log_outputs {
            return (means, vars);
        }
        let natural_mean = means.zip_map(&vars, |m, v| (m + 0.5 * v).exp());
        let natural_var = means.zip_map(&vars, |m, v| v.exp_m1() * (2.0 * m + v).exp());
        (natural_mean, natural_var)
    }

    pub(crate) fn to_doc(&self) -> EmulatorDoc {
        EmulatorDoc {
            label: self.label.clone(),
            x_train: matrix_to_rows(&self.x_train),
            y_train: self.y_train.iter().copied().collect(),
            standardization: self.standardization.clone(),
            hyperparameters: self.hyper.clone(),
            log_likelihood: self.lml,
            degenerate: self.degenerate,
        }
    }

    pub(crate) fn from_doc(doc: EmulatorDoc) -> Result<Self> {
        let m = doc.y_train.len();
        let d = doc.standardization.x_mean.len();
        let x = matrix_from_rows(&doc.x_train, m, d)?;
        let mut model = Self::condition(doc.label, x, DVector::from_vec(doc.y_train), doc.standardization, doc.hyperparameters)?;
        model.degenerate = doc.degenerate;
        Ok(model)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct EmulatorDoc {
    label: String,
    x_train: Vec<Vec<f64>>,
    y_train: Vec<f64>,
    standardization: Standardization,
    hyperparameters: Hyperparameters,
    log_likelihood: f64,
    degenerate: bool,
}

/// Coefficient of determination of predictions against held-out targets.
pub fn r_squared(truth: &[f64], predicted: &[f64]) -> f64 {
    let n = truth.len() as f64;
    let mean = truth.iter().sum::<f64>() / n;
    let ss_tot: f64 = truth.iter().map(|t| (t - mean).powi(2)).sum();
    let ss_res: f64 = truth.iter().zip(predicted).map(|(t, p)| (t - p).powi(2)).sum();
    if ss_tot == 0.0 {
        if ss_res == 0.0 { 1.0 } else { f64::NEG_INFINITY }
    } else {
        1.0 - ss_res / ss_tot
    }
}
