//! Measurement operators: anything that maps a batch of parameter vectors to
//! predicted observations with a per-output predictive variance.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub trait ObservationOperator: Sync {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;

    /// Evaluate at the columns of `thetas` (`d × N`). Returns `(means, variances)`,
    /// both `p × N`.
    fn evaluate(&self, thetas: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)>;

    /// Names of the outputs, when the operator knows them.
    fn output_labels(&self) -> Option<Vec<String>> {
        None
    }

    fn check_input(&self, thetas: &DMatrix<f64>) -> Result<()> {
        if thetas.nrows() != self.input_dim() {
            return Err(Error::DimensionMismatch(format!(
                "operator expects {} inputs, got {}",
                self.input_dim(),
                thetas.nrows()
            )));
        }
        Ok(())
    }
}

/// Exact linear map `h(θ) = A θ + b`, zero predictive variance.
#[derive(Debug, Clone)]
pub struct LinearOperator {
    pub a: DMatrix<f64>,
    pub offset: nalgebra::DVector<f64>,
}

impl LinearOperator {
    pub fn new(a: DMatrix<f64>) -> Self {
        let p = a.nrows();
        Self { a, offset: nalgebra::DVector::zeros(p) }
    }
}

impl ObservationOperator for LinearOperator {
    fn input_dim(&self) -> usize {
        self.a.ncols()
    }

    fn output_dim(&self) -> usize {
        self.a.nrows()
    }

    fn evaluate(&self, thetas: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        self.check_input(thetas)?;
        let mut m = &self.a * thetas;
        for mut c in m.column_iter_mut() {
            c += &self.offset;
        }
        let v = DMatrix::zeros(m.nrows(), m.ncols());
        Ok((m, v))
    }
}

/// Exact nonlinear map given as a closure, zero predictive variance.
pub struct FnOperator<F> {
    input_dim: usize,
    output_dim: usize,
    f: F,
}

impl<F> FnOperator<F>
where
    F: Fn(&[f64]) -> Vec<f64> + Sync,
{
    pub fn new(input_dim: usize, output_dim: usize, f: F) -> Self {
        Self { input_dim, output_dim, f }
    }
}

impl<F> ObservationOperator for FnOperator<F>
where
    F: Fn(&[f64]) -> Vec<f64> + Sync,
{
    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn output_dim(&self) -> usize {
        self.output_dim
    }

    fn evaluate(&self, thetas: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        self.check_input(thetas)?;
        let n = thetas.ncols();
        let mut m = DMatrix::zeros(self.output_dim, n);
        for (j, col) in thetas.column_iter().enumerate() {
            let out = (self.f)(col.as_slice());
            if out.len() != self.output_dim {
                return Err(Error::DimensionMismatch(format!(
                    "operator returned {} outputs, expected {}",
                    out.len(),
                    self.output_dim
                )));
            }
            m.set_column(j, &nalgebra::DVector::from_vec(out));
        }
        Ok((m, DMatrix::zeros(self.output_dim, n)))
    }
}
