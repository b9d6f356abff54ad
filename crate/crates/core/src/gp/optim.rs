//! Box-constrained local minimizers for GP hyperparameter search in log
//! space: L-BFGS on a logistic reparametrization of the box, and spectral
//! projected gradient (Birgin, Martínez & Raydan) as a fallback.

use std::cell::RefCell;

use argmin::core::{CostFunction, Executor, Gradient, State};
use argmin::solver::linesearch::MoreThuenteLineSearch;
use argmin::solver::quasinewton::LBFGS;
use nalgebra::DVector;

#[derive(Debug, Clone, Copy)]
pub struct SpgOptions {
    pub max_iter: usize,
    /// Stop when the projected-gradient step has sup-norm below this.
    pub tol: f64,
    /// Non-monotone memory of the line search.
    pub memory: usize,
}

impl Default for SpgOptions {
    fn default() -> Self {
        Self { max_iter: 200, tol: 1e-6, memory: 10 }
    }
}

#[derive(Debug, Clone)]
pub struct SpgResult {
    pub x: DVector<f64>,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
}

fn project(x: &DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>) -> DVector<f64> {
    x.zip_zip_map(lo, hi, |v, l, h| v.clamp(l, h))
}

/// Minimize `f` over `[lo, hi]`. `f` returns `(value, gradient)` or `None`
/// where the objective is undefined; undefined points are treated as +∞.
pub fn minimize_box<F>(mut f: F, x0: DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>, opts: SpgOptions) -> Option<SpgResult>
where
    F: FnMut(&DVector<f64>) -> Option<(f64, DVector<f64>)>,
{
    const LAMBDA_MIN: f64 = 1e-10;
    const LAMBDA_MAX: f64 = 1e10;
    const GAMMA: f64 = 1e-4;

    let mut x = project(&x0, lo, hi);
    let (mut fx, mut g) = f(&x)?;
    let mut evals = 1;
    let mut history = vec![fx];

    let pg = project(&(&x - &g), lo, hi) - &x;
    let pg_norm = pg.amax();
    let mut lambda = if pg_norm > 0.0 { (1.0 / pg_norm).clamp(LAMBDA_MIN, LAMBDA_MAX) } else { 1.0 };

    let mut iter = 0;
    while iter < opts.max_iter {
        let d = project(&(&x - &g * lambda), lo, hi) - &x;
        if d.amax() < opts.tol {
            break;
        }
        let gtd = g.dot(&d);
        let f_ref = history.iter().copied().fold(f64::NEG_INFINITY, f64::max);

        let mut alpha = 1.0;
        let accepted = loop {
            let trial = &x + &d * alpha;
            evals += 1;
            match f(&trial) {
                Some((ft, gt)) if ft.is_finite() && ft <= f_ref + GAMMA * alpha * gtd => {
                    break Some((trial, ft, gt));
                }
                Some((ft, _)) if ft.is_finite() => {
                    // Safeguarded quadratic interpolation.
                    let denom = 2.0 * (ft - fx - alpha * gtd);
                    let a_q = if denom > 0.0 { -gtd * alpha * alpha / denom } else { 0.5 * alpha };
                    alpha = a_q.clamp(0.1 * alpha, 0.5 * alpha);
                }
                _ => alpha *= 0.25,
            }
            if alpha < 1e-12 {
                break None;
            }
        };
        let Some((x_new, f_new, g_new)) = accepted else { break };

        let s = &x_new - &x;
        let y = &g_new - &g;
        let sy = s.dot(&y);
        lambda = if sy <= 0.0 { LAMBDA_MAX } else { (s.dot(&s) / sy).clamp(LAMBDA_MIN, LAMBDA_MAX) };

        x = x_new;
        fx = f_new;
        g = g_new;
        history.push(fx);
        if history.len() > opts.memory {
            history.remove(0);
        }
        iter += 1;
    }
    Some(SpgResult { x, value: fx, iterations: iter, evaluations: evals })
}

type Eval = Option<(f64, DVector<f64>)>;

struct Logistic<'a, F> {
    f: RefCell<F>,
    lo: &'a DVector<f64>,
    hi: &'a DVector<f64>,
    scale: f64,
    last: RefCell<Option<(Vec<f64>, Eval)>>,
    evaluations: RefCell<usize>,
}

fn sigmoid(u: f64) -> f64 {
    1.0 / (1.0 + (-u).exp())
}

impl<F> Logistic<'_, F>
where
    F: FnMut(&DVector<f64>) -> Eval,
{
    fn to_box(&self, u: &[f64]) -> DVector<f64> {
        DVector::from_fn(u.len(), |i, _| self.lo[i] + (self.hi[i] - self.lo[i]) * sigmoid(u[i]))
    }

    fn eval(&self, u: &[f64]) -> Eval {
        if let Some((x, v)) = self.last.borrow().as_ref() {
            if x.as_slice() == u {
                return v.clone();
            }
        }
        *self.evaluations.borrow_mut() += 1;
        let v = (self.f.borrow_mut())(&self.to_box(u)).map(|(fx, g)| {
            let gu = DVector::from_fn(u.len(), |i, _| {
                let s = sigmoid(u[i]);
                g[i] * (self.hi[i] - self.lo[i]) * s * (1.0 - s)
            });
            (fx, gu)
        });
        *self.last.borrow_mut() = Some((u.to_vec(), v.clone()));
        v
    }
}

impl<F> CostFunction for Logistic<'_, F>
where
    F: FnMut(&DVector<f64>) -> Eval,
{
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, u: &Vec<f64>) -> Result<f64, argmin::core::Error> {
        match self.eval(u) {
            Some((v, _)) if v.is_finite() => Ok(self.scale * v),
            _ => Err(argmin::core::Error::msg("objective undefined")),
        }
    }
}

impl<F> Gradient for Logistic<'_, F>
where
    F: FnMut(&DVector<f64>) -> Eval,
{
    type Param = Vec<f64>;
    type Gradient = Vec<f64>;

    fn gradient(&self, u: &Vec<f64>) -> Result<Vec<f64>, argmin::core::Error> {
        match self.eval(u) {
            Some((_, g)) => Ok(g.iter().map(|v| self.scale * v).collect()),
            None => Err(argmin::core::Error::msg("objective undefined")),
        }
    }
}

/// L-BFGS on `x = lo + (hi − lo)·sigmoid(u)`. Returns `None` if the objective
/// is undefined somewhere along the search; callers fall back to
/// [`minimize_box`].
pub fn minimize_box_lbfgs<F>(f: F, x0: &DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>, max_iter: usize) -> Option<SpgResult>
where
    F: FnMut(&DVector<f64>) -> Eval,
{
    const EDGE: f64 = 1e-6;
    let u0: Vec<f64> = (0..x0.len())
        .map(|i| {
            let t = ((x0[i] - lo[i]) / (hi[i] - lo[i])).clamp(EDGE, 1.0 - EDGE);
            (t / (1.0 - t)).ln()
        })
        .collect();
    let mut problem = Logistic { f: RefCell::new(f), lo, hi, scale: 1.0, last: RefCell::new(None), evaluations: RefCell::new(0) };
    let (_, g0) = problem.eval(&u0)?;
    // The first step moves each coordinate by at most one unit.
    problem.scale = 1.0 / g0.amax().max(1.0);
    let solver = LBFGS::new(MoreThuenteLineSearch::new(), 7).with_tolerance_grad(1e-5 * problem.scale).ok()?.with_tolerance_cost(1e-10).ok()?;
    let res = Executor::new(problem, solver).configure(|s| s.param(u0).max_iters(max_iter as u64)).run().ok()?;
    let iterations = res.state().get_iter() as usize;
    let u = res.state().get_best_param()?.clone();
    let problem = res.problem.problem?;
    let (value, _) = problem.eval(&u)?;
    let evaluations = *problem.evaluations.borrow();
    Some(SpgResult { x: problem.to_box(&u), value, iterations, evaluations })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock_inside_box() {
        let f = |x: &DVector<f64>| {
            let (a, b) = (x[0], x[1]);
            let v = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            let g = DVector::from_vec(vec![
                -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
                200.0 * (b - a * a),
            ]);
            Some((v, g))
        };
        let lo = DVector::from_element(2, -2.0);
        let hi = DVector::from_element(2, 2.0);
        let r = minimize_box(f, DVector::from_vec(vec![-1.2, 1.0]), &lo, &hi, SpgOptions { max_iter: 5000, tol: 1e-9, memory: 10 }).unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-3, "{:?}", r.x);
        assert!((r.x[1] - 1.0).abs() < 2e-3, "{:?}", r.x);
    }

    #[test]
    fn lbfgs_rosenbrock_and_bounds() {
        let f = |x: &DVector<f64>| {
            let (a, b) = (x[0], x[1]);
            let v = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            Some((v, DVector::from_vec(vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)])))
        };
        let lo = DVector::from_element(2, -2.0);
        let hi = DVector::from_element(2, 2.0);
        let r = minimize_box_lbfgs(f, &DVector::from_vec(vec![-1.2, 1.0]), &lo, &hi, 500).unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-3 && (r.x[1] - 1.0).abs() < 2e-3, "{:?}", r.x);

        let g = |x: &DVector<f64>| Some(((x[0] - 3.0).powi(2), DVector::from_vec(vec![2.0 * (x[0] - 3.0)])));
        let lo = DVector::from_element(1, -1.0);
        let hi = DVector::from_element(1, 1.0);
        let r = minimize_box_lbfgs(g, &DVector::from_element(1, 0.0), &lo, &hi, 500).unwrap();
        assert!(r.x[0] <= 1.0 && r.x[0] > 0.99, "{:?}", r.x);
    }

    #[test]
    fn active_bound_is_respected() {
        let f = |x: &DVector<f64>| Some(((x[0] - 3.0).powi(2), DVector::from_vec(vec![2.0 * (x[0] - 3.0)])));
        let lo = DVector::from_element(1, -1.0);
        let hi = DVector::from_element(1, 1.0);
        let r = minimize_box(f, DVector::from_element(1, 0.0), &lo, &hi, SpgOptions::default()).unwrap();
        assert_eq!(r.x[0], 1.0);
    }
}
