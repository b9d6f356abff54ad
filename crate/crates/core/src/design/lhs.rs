use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::rng::{self, tags};

#[derive(Debug, Clone)]
pub struct LhsDesign {
    /// `M × d`, one row per design point.
    pub points: DMatrix<f64>,
    pub seed: u64,
}

impl LhsDesign {
    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.points.row(i).iter().copied().collect()
    }
}

fn min_sq_distance(unit: &[Vec<f64>], m: usize, d: usize) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..m {
        for j in i + 1..m {
            let mut s = 0.0;
            for k in 0..d {
                let diff = unit[k][i] - unit[k][j];
                s += diff * diff;
                if s >= best {
                    break;
                }
            }
            best = best.min(s);
        }
    }
    best
}

/// Latin hypercube of `m` points in the box `bounds`. With `restarts > 1`
/// the design with the largest minimal pairwise distance (in unit
/// coordinates) among `restarts` candidates is kept.
pub fn lhs_sample(m: usize, bounds: &[(f64, f64)], seed: u64, restarts: usize) -> LhsDesign {
    let d = bounds.len();
    let mut rng = rng::substream(seed, &[tags::LHS]);
    let mut best: Option<(f64, Vec<Vec<f64>>)> = None;
    for _ in 0..restarts.max(1) {
        let unit: Vec<Vec<f64>> = (0..d)
            .map(|_| {
                let mut perm: Vec<usize> = (0..m).collect();
                perm.shuffle(&mut rng);
                perm.into_iter().map(|s| (s as f64 + rng.gen::<f64>()) / m as f64).collect()
            })
            .collect();
        if restarts <= 1 {
            best = Some((0.0, unit));
            break;
        }
        let score = min_sq_distance(&unit, m, d);
        if best.as_ref().map_or(true, |(b, _)| score > *b) {
            best = Some((score, unit));
        }
    }
    let unit = best.map(|(_, u)| u).unwrap_or_default();
    let points = DMatrix::from_fn(m, d, |i, k| {
        let (lo, hi) = bounds[k];
        lo + unit[k][i] * (hi - lo)
    });
    LhsDesign { points, seed }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::ParameterSpace;
    use proptest::prelude::*;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn strata_ok(design: &LhsDesign, bounds: &[(f64, f64)]) -> bool {
        let m = design.len();
        bounds.iter().enumerate().all(|(k, &(lo, hi))| {
            let mut seen = vec![false; m];
            for i in 0..m {
                let u = (design.points[(i, k)] - lo) / (hi - lo);
                let s = ((u * m as f64).floor() as usize).min(m - 1);
                if seen[s] {
                    return false;
                }
                seen[s] = true;
            }
            true
        })
    }

    #[test]
    fn two_points_one_dimension() {
        let d = lhs_sample(2, &[(0.0, 1.0)], 3, 1);
        let mut v = vec![d.points[(0, 0)], d.points[(1, 0)]];
        v.sort_by(f64::total_cmp);
        assert!(v[0] < 0.5 && v[1] >= 0.5);
    }

    #[test]
    fn marginals_of_paper_sized_design_are_uniform() {
        let space = ParameterSpace::mms();
        let d = lhs_sample(350, space.bounds(), 11, 50);
        assert!(strata_ok(&d, space.bounds()));
        let chi = ChiSquared::new(9.0).unwrap();
        for (k, &(lo, hi)) in space.bounds().iter().enumerate() {
            let mut counts = [0usize; 10];
            for i in 0..d.len() {
                let b = (((d.points[(i, k)] - lo) / (hi - lo) * 10.0).floor() as usize).min(9);
                counts[b] += 1;
            }
            let stat: f64 = counts.iter().map(|&c| (c as f64 - 35.0).powi(2) / 35.0).sum();
            assert!(1.0 - chi.cdf(stat) > 0.01, "dimension {k}: {counts:?}");
        }
    }

    #[test]
    fn maximin_improves_spread() {
        let b = [(0.0, 1.0), (0.0, 1.0)];
        let score = |d: &LhsDesign| {
            let unit: Vec<Vec<f64>> = (0..2).map(|k| d.points.column(k).iter().copied().collect()).collect();
            min_sq_distance(&unit, d.len(), 2)
        };
        let plain = lhs_sample(30, &b, 5, 1);
        let refined = lhs_sample(30, &b, 5, 200);
        assert!(score(&refined) >= score(&plain));
    }

    proptest! {
        #[test]
        fn every_stratum_occupied_once(m in 2usize..60, d in 1usize..6, seed in any::<u64>(), restarts in 1usize..4) {
            let bounds: Vec<(f64, f64)> = (0..d).map(|k| (-(k as f64), 2.0 + k as f64)).collect();
            let design = lhs_sample(m, &bounds, seed, restarts);
            prop_assert!(strata_ok(&design, &bounds));
            prop_assert_eq!(design.points.clone(), lhs_sample(m, &bounds, seed, restarts).points);
        }
    }
}
