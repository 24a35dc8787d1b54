//! Dense two-phase-I simplex for linear feasibility over a box.
//!
//! Decides whether some `x` with `lower <= x <= upper` satisfies every
//! constraint `a . x <= b`, and returns such a point. Pivoting follows Bland's
//! rule, so the method cannot cycle.

use crate::error::{Error, Result};
use crate::network::dot;

/// `coeffs . x <= rhs`
#[derive(Debug, Clone, PartialEq)]
pub struct LinearConstraint {
    pub coeffs: Vec<f64>,
    pub rhs: f64,
}

impl LinearConstraint {
    pub fn le(coeffs: Vec<f64>, rhs: f64) -> Self {
        Self { coeffs, rhs }
    }

    /// `coeffs . x >= rhs`
    pub fn ge(coeffs: Vec<f64>, rhs: f64) -> Self {
        Self {
            coeffs: coeffs.into_iter().map(|c| -c).collect(),
            rhs: -rhs,
        }
    }

    pub fn violation(&self, x: &[f64]) -> f64 {
        (dot(&self.coeffs, x) - self.rhs).max(0.0)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SimplexOptions {
    /// Smallest magnitude accepted as a pivot element.
    pub pivot_tol: f64,
    /// Residual infeasibility below which the system counts as feasible.
    pub feas_tol: f64,
    pub max_pivots: usize,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        Self {
            pivot_tol: 1e-9,
            feas_tol: 1e-9,
            max_pivots: 100_000,
        }
    }
}

impl SimplexOptions {
    fn tightened(self) -> Self {
        Self {
            pivot_tol: self.pivot_tol * 1e-3,
            ..self
        }
    }
}

/// Finds a point of `{x in [lower, upper] : a_i . x <= b_i}` or proves it empty.
///
/// A result whose residual exceeds the tolerance is re-solved once with a
/// smaller pivot threshold before a numerical error is reported.
pub fn find_feasible(
    constraints: &[LinearConstraint],
    lower: &[f64],
    upper: &[f64],
    opts: SimplexOptions,
) -> Result<Option<Vec<f64>>> {
    let scale = constraints
        .iter()
        .flat_map(|c| c.coeffs.iter().map(|v| v.abs()).chain([c.rhs.abs()]))
        .fold(1.0f64, f64::max);
    let accept = 1e-7 * scale;
    let mut last_residual = 0.0;
    for attempt in [opts, opts.tightened()] {
        match solve_once(constraints, lower, upper, attempt)? {
            None => return Ok(None),
            Some(mut x) => {
                for (v, (l, u)) in x.iter_mut().zip(lower.iter().zip(upper)) {
                    *v = v.clamp(*l, *u);
                }
                let residual = constraints
                    .iter()
                    .map(|c| c.violation(&x))
                    .fold(0.0, f64::max);
                if residual <= accept {
                    return Ok(Some(x));
                }
                last_residual = residual;
            }
        }
    }
    Err(Error::Numerical(format!(
        "simplex point violates constraints by {last_residual:e}"
    )))
}

fn solve_once(
    constraints: &[LinearConstraint],
    lower: &[f64],
    upper: &[f64],
    opts: SimplexOptions,
) -> Result<Option<Vec<f64>>> {
    let n = lower.len();
    // Shifted variables z = x - lower >= 0; rows are `a . z <= r`.
    let mut rows: Vec<(Vec<f64>, f64)> = Vec::with_capacity(constraints.len() + n);
    for c in constraints {
        if c.coeffs.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: c.coeffs.len(),
            });
        }
        let r = c.rhs - dot(&c.coeffs, lower);
        if c.coeffs.iter().all(|&a| a == 0.0) {
            if r < -opts.feas_tol * (1.0 + c.rhs.abs()) {
                return Ok(None);
            }
            continue;
        }
        rows.push((c.coeffs.clone(), r));
    }
    for k in 0..n {
        let mut e = vec![0.0; n];
        e[k] = 1.0;
        rows.push((e, upper[k] - lower[k]));
    }

    let m = rows.len();
    let art_rows: Vec<usize> = (0..m).filter(|&i| rows[i].1 < 0.0).collect();
    let q = art_rows.len();
    let cols = n + m + q;
    let rhs_col = cols;
    let mut t = vec![vec![0.0; cols + 1]; m];
    let mut basis = vec![0usize; m];
    let mut art_k = 0;
    for (i, (a, r)) in rows.iter().enumerate() {
        let sign = if *r < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            t[i][j] = sign * a[j];
        }
        t[i][n + i] = sign;
        t[i][rhs_col] = sign * r;
        if *r < 0.0 {
            t[i][n + m + art_k] = 1.0;
            basis[i] = n + m + art_k;
            art_k += 1;
        } else {
            basis[i] = n + i;
        }
    }
    if q == 0 {
        return Ok(Some(lower.to_vec()));
    }

    // Reduced costs of the phase-I objective `sum of artificials`.
    let mut obj = vec![0.0; cols + 1];
    for &i in &art_rows {
        for j in 0..n + m {
            obj[j] -= t[i][j];
        }
        obj[rhs_col] -= t[i][rhs_col];
    }

    let mut pivots = 0;
    while let Some(enter) = (0..cols).find(|&j| obj[j] < -opts.pivot_tol) {
        let mut leave: Option<usize> = None;
        let mut best = f64::INFINITY;
        for i in 0..m {
            let a = t[i][enter];
            if a > opts.pivot_tol {
                let ratio = t[i][rhs_col] / a;
                let better = match leave {
                    None => true,
                    Some(l) => {
                        ratio < best - 1e-12 * best.abs().max(1.0)
                            || (ratio <= best + 1e-12 * best.abs().max(1.0) && basis[i] < basis[l])
                    }
                };
                if better {
                    best = ratio;
                    leave = Some(i);
                }
            }
        }
        let Some(r) = leave else {
            // Phase-I objective is bounded below by zero, so an unbounded
            // direction only appears through numerical trouble.
            return Err(Error::Numerical("unbounded phase-I direction".into()));
        };
        pivot(&mut t, &mut obj, r, enter);
        basis[r] = enter;
        pivots += 1;
        if pivots > opts.max_pivots {
            return Err(Error::Numerical(format!(
                "simplex exceeded {} pivots",
                opts.max_pivots
            )));
        }
    }

    let infeasibility = -obj[rhs_col];
    let scale = rows.iter().map(|(_, r)| r.abs()).fold(1.0f64, f64::max);
    if infeasibility > opts.feas_tol * scale {
        return Ok(None);
    }
    let mut x = lower.to_vec();
    for (i, &b) in basis.iter().enumerate() {
        if b < n {
            x[b] += t[i][rhs_col];
        }
    }
    Ok(Some(x))
}

fn pivot(t: &mut [Vec<f64>], obj: &mut [f64], r: usize, c: usize) {
    let p = t[r][c];
    for v in t[r].iter_mut() {
        *v /= p;
    }
    let pivot_row = t[r].clone();
    for (i, row) in t.iter_mut().enumerate() {
        if i == r {
            continue;
        }
        let f = row[c];
        if f != 0.0 {
            for (v, pv) in row.iter_mut().zip(&pivot_row) {
                *v -= f * pv;
            }
        }
    }
    let f = obj[c];
    if f != 0.0 {
        for (v, pv) in obj.iter_mut().zip(&pivot_row) {
            *v -= f * pv;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn feasible(cs: &[LinearConstraint], l: &[f64], u: &[f64]) -> Option<Vec<f64>> {
        find_feasible(cs, l, u, SimplexOptions::default()).unwrap()
    }

    #[test]
    fn trivially_feasible_box() {
        assert_eq!(
            feasible(&[], &[0.0, -1.0], &[1.0, 1.0]),
            Some(vec![0.0, -1.0])
        );
    }

    #[test]
    fn finds_point_in_triangle() {
        // x + y >= 1.5 inside the unit square
        let cs = [LinearConstraint::ge(vec![1.0, 1.0], 1.5)];
        let x = feasible(&cs, &[0.0, 0.0], &[1.0, 1.0]).unwrap();
        assert!(x[0] + x[1] >= 1.5 - 1e-9);
        assert!(x.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn detects_infeasibility() {
        let cs = [
            LinearConstraint::ge(vec![1.0, 1.0], 1.5),
            LinearConstraint::le(vec![1.0, -1.0], -0.8),
        ];
        // y >= x + 0.8 and x + y >= 1.5 needs y >= 1.15 > 1
        assert_eq!(feasible(&cs, &[0.0, 0.0], &[1.0, 1.0]), None);
    }

    #[test]
    fn degenerate_equalities() {
        // x = 0.25 written as two inequalities, plus a redundant copy.
        let cs = [
            LinearConstraint::le(vec![1.0], 0.25),
            LinearConstraint::ge(vec![1.0], 0.25),
            LinearConstraint::ge(vec![2.0], 0.5),
        ];
        let x = feasible(&cs, &[-1.0], &[1.0]).unwrap();
        assert!((x[0] - 0.25).abs() < 1e-9);
    }

    #[test]
    fn zero_row_with_negative_rhs_is_infeasible() {
        let cs = [LinearConstraint::le(vec![0.0], -1.0)];
        assert_eq!(feasible(&cs, &[0.0], &[1.0]), None);
    }

    #[test]
    fn point_box() {
        let cs = [LinearConstraint::ge(vec![3.0], 2.0)];
        assert_eq!(feasible(&cs, &[1.0], &[1.0]), Some(vec![1.0]));
        assert_eq!(feasible(&cs, &[0.5], &[0.5]), None);
    }
}
