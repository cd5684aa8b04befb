//! B-spline bases on explicit knot vectors (Cox–de Boor recursion).
//!
//! `order` is the polynomial degree `k`: a knot vector with `G + 2k + 1`
//! strictly increasing knots carries `G + k` basis functions whose partition
//! of unity holds on `[t_k, t_{G+k}]`. Inputs are clamped into that interval.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SplineError {
    #[error("order must be at least 1")]
    ZeroOrder,
    #[error("need at least {needed} knots for order {order}, got {got}")]
    TooFewKnots { needed: usize, got: usize, order: usize },
    #[error("knots must be finite and strictly increasing (violation at index {index})")]
    Degenerate { index: usize },
    #[error("coefficient count {got} does not match basis size {expected}")]
    CoefficientCount { expected: usize, got: usize },
    #[error("least-squares fit is underdetermined or singular")]
    Singular,
}

#[derive(Clone, Debug, PartialEq)]
pub struct KnotVector {
    knots: Vec<f64>,
    order: usize,
}

impl KnotVector {
    pub fn new(knots: Vec<f64>, order: usize) -> Result<Self, SplineError> {
        if order == 0 {
            return Err(SplineError::ZeroOrder);
        }
        let needed = 2 * order + 2;
        if knots.len() < needed {
            return Err(SplineError::TooFewKnots {
                needed,
                got: knots.len(),
                order,
            });
        }
        if let Some(i) = knots.iter().position(|t| !t.is_finite()) {
            return Err(SplineError::Degenerate { index: i });
        }
        if let Some(i) = knots.windows(2).position(|w| w[1] <= w[0]) {
            return Err(SplineError::Degenerate { index: i + 1 });
        }
        Ok(KnotVector { knots, order })
    }

    /// `grid` uniform intervals on `[lo, hi]`, extended by `order` knots on each side.
    pub fn uniform(lo: f64, hi: f64, grid: usize, order: usize) -> Result<Self, SplineError> {
        let h = (hi - lo) / grid as f64;
        let knots = (0..grid + 2 * order + 1)
            .map(|j| lo + (j as f64 - order as f64) * h)
            .collect();
        KnotVector::new(knots, order)
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Number of basis functions, `G + k`.
    pub fn num_basis(&self) -> usize {
        self.knots.len() - self.order - 1
    }

    /// Grid size `G`.
    pub fn grid_size(&self) -> usize {
        self.knots.len() - 2 * self.order - 1
    }

    /// Interval on which the basis sums to one.
    pub fn domain(&self) -> (f64, f64) {
        (self.knots[self.order], self.knots[self.knots.len() - 1 - self.order])
    }

    pub fn min_spacing(&self) -> f64 {
        self.knots
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min)
    }

    pub fn clamp(&self, x: f64) -> f64 {
        let (lo, hi) = self.domain();
        x.clamp(lo, hi)
    }

    fn span(&self, x: f64) -> usize {
        // largest s with t_s <= x, restricted so the last domain interval is closed
        let lo = self.order;
        let hi = self.knots.len() - self.order - 2;
        let upper = self.knots[lo + 1..=hi].partition_point(|&t| t <= x);
        lo + upper
    }

    /// Basis values of every degree from 0 up to `degree` at clamped `x`;
    /// returns the degree-`degree` row and the row below it.
    fn levels(&self, x: f64, degree: usize) -> (Vec<f64>, Vec<f64>) {
        let t = &self.knots;
        let x = self.clamp(x);
        let n0 = t.len() - 1;
        let mut cur = vec![0.0; n0];
        cur[self.span(x)] = 1.0;
        let mut prev = cur.clone();
        for d in 1..=degree {
            let n = t.len() - d - 1;
            let mut next = vec![0.0; n];
            for r in 0..n {
                let left = if cur[r] != 0.0 {
                    (x - t[r]) / (t[r + d] - t[r]) * cur[r]
                } else {
                    0.0
                };
                let right = if cur[r + 1] != 0.0 {
                    (t[r + d + 1] - x) / (t[r + d + 1] - t[r + 1]) * cur[r + 1]
                } else {
                    0.0
                };
                next[r] = left + right;
            }
            prev = std::mem::replace(&mut cur, next);
        }
        (cur, prev)
    }

    /// All `G + k` basis values at `x` (clamped into the domain).
    pub fn basis(&self, x: f64) -> Vec<f64> {
        self.levels(x, self.order).0
    }

    /// Derivatives of the basis functions at `x` via
    /// `B'_r = k/(t_{r+k}-t_r) B^{k-1}_r - k/(t_{r+k+1}-t_{r+1}) B^{k-1}_{r+1}`.
    ///
    /// Outside the domain the clamped spline is constant, so zeros are returned.
    pub fn basis_derivative(&self, x: f64) -> Vec<f64> {
        let (lo, hi) = self.domain();
        let n = self.num_basis();
        if x < lo || x > hi {
            return vec![0.0; n];
        }
        let k = self.order;
        let t = &self.knots;
        let (_, lower) = self.levels(x, k);
        (0..n)
            .map(|r| {
                let kf = k as f64;
                kf / (t[r + k] - t[r]) * lower[r] - kf / (t[r + k + 1] - t[r + 1]) * lower[r + 1]
            })
            .collect()
    }

    /// `Σ_r c_r B_r(x)`.
    pub fn evaluate(&self, coef: &[f64], x: f64) -> f64 {
        debug_assert_eq!(coef.len(), self.num_basis());
        self.basis(x).iter().zip(coef).map(|(b, c)| b * c).sum()
    }

    pub fn evaluate_derivative(&self, coef: &[f64], x: f64) -> f64 {
        self.basis_derivative(x)
            .iter()
            .zip(coef)
            .map(|(b, c)| b * c)
            .sum()
    }
}

/// Least-squares spline coefficients for samples `(xs, ys)`.
pub fn fit_least_squares(knots: &KnotVector, xs: &[f64], ys: &[f64]) -> Result<Vec<f64>, SplineError> {
    use nalgebra::{DMatrix, DVector};
    let n = knots.num_basis();
    if xs.len() < n || xs.len() != ys.len() {
        return Err(SplineError::Singular);
    }
    let mut a = DMatrix::zeros(xs.len(), n);
    for (i, &x) in xs.iter().enumerate() {
        for (j, b) in knots.basis(x).into_iter().enumerate() {
            a[(i, j)] = b;
        }
    }
    let b = DVector::from_column_slice(ys);
    let svd = a.svd(true, true);
    let sol = svd.solve(&b, 1e-12).map_err(|_| SplineError::Singular)?;
    Ok(sol.iter().copied().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_degenerate_knots() {
        assert_eq!(
            KnotVector::new(vec![0.0, 1.0, 1.0, 2.0], 1),
            Err(SplineError::Degenerate { index: 2 })
        );
        assert!(matches!(
            KnotVector::new(vec![0.0, 1.0, 2.0], 1),
            Err(SplineError::TooFewKnots { .. })
        ));
        assert_eq!(KnotVector::new(vec![0.0, 1.0, 2.0, 3.0], 0), Err(SplineError::ZeroOrder));
    }

    #[test]
    fn uniform_layout() {
        let kv = KnotVector::uniform(-1.0, 1.0, 8, 3).unwrap();
        assert_eq!(kv.knots().len(), 8 + 7);
        assert_eq!(kv.num_basis(), 11);
        assert_eq!(kv.grid_size(), 8);
        let (lo, hi) = kv.domain();
        assert!((lo + 1.0).abs() < 1e-15 && (hi - 1.0).abs() < 1e-15);
        assert!((kv.min_spacing() - 0.25).abs() < 1e-14);
    }

    #[test]
    fn partition_of_unity_and_support() {
        for order in 1..=4 {
            let kv = KnotVector::uniform(-1.0, 1.0, 7, order).unwrap();
            for i in 0..=400 {
                let x = -1.0 + 2.0 * i as f64 / 400.0;
                let b = kv.basis(x);
                let s: f64 = b.iter().sum();
                assert!((s - 1.0).abs() < 1e-12, "order {order} x {x}");
                assert!(b.iter().all(|&v| v >= 0.0));
                assert!(b.iter().filter(|&&v| v > 0.0).count() <= order + 1);
            }
        }
    }

    #[test]
    fn hat_functions_for_order_one() {
        let kv = KnotVector::uniform(0.0, 1.0, 4, 1).unwrap();
        // x = 0.3 sits between knots 0.25 and 0.5
        let b = kv.basis(0.3);
        let active: Vec<(usize, f64)> = b.iter().copied().enumerate().filter(|(_, v)| *v > 0.0).collect();
        assert_eq!(active.len(), 2);
        assert!((active[0].1 - 0.8).abs() < 1e-12);
        assert!((active[1].1 - 0.2).abs() < 1e-12);
        // at an interior knot a single hat is active
        let b = kv.basis(0.5);
        assert!(b.iter().any(|&v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn derivative_identity_matches_central_differences() {
        let knots = vec![-1.3, -1.0, -0.7, -0.45, -0.1, 0.2, 0.35, 0.7, 1.0, 1.2, 1.5, 1.9];
        let kv = KnotVector::new(knots, 3).unwrap();
        let (lo, hi) = kv.domain();
        let eps = 1e-6;
        for i in 1..200 {
            let x = lo + (hi - lo) * (i as f64 + 0.37) / 200.0;
            if x + eps > hi {
                continue;
            }
            let d = kv.basis_derivative(x);
            let bp = kv.basis(x + eps);
            let bm = kv.basis(x - eps);
            for r in 0..kv.num_basis() {
                let fd = (bp[r] - bm[r]) / (2.0 * eps);
                assert!((d[r] - fd).abs() < 1e-6, "r={r} x={x} {} {}", d[r], fd);
            }
        }
    }

    #[test]
    fn clamping_outside_domain() {
        let kv = KnotVector::uniform(-1.0, 1.0, 4, 2).unwrap();
        assert_eq!(kv.basis(5.0), kv.basis(1.0));
        assert_eq!(kv.basis(-5.0), kv.basis(-1.0));
        assert!(kv.basis_derivative(5.0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn least_squares_reproduces_cubic() {
        let kv = KnotVector::uniform(0.0, 1.0, 5, 3).unwrap();
        let xs: Vec<f64> = (0..60).map(|i| i as f64 / 59.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x * x * x - 0.5 * x + 0.1).collect();
        let c = fit_least_squares(&kv, &xs, &ys).unwrap();
        for &x in &xs {
            assert!((kv.evaluate(&c, x) - (x * x * x - 0.5 * x + 0.1)).abs() < 1e-10);
        }
    }
}
