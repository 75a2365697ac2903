//! Marginal B-spline bases and difference penalties.
//!
//! Knots are equally spaced on `[lo, hi]` and extended by `degree` knots of
//! the same spacing beyond each boundary, so every point of the domain has
//! exactly `degree + 1` supporting basis functions. Intervals are half-open
//! except the last one, which is closed at `hi`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative slack used when deciding whether a point lies inside the domain.
const DOMAIN_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnotVector {
    pub degree: usize,
    pub boundary_lo: f64,
    pub boundary_hi: f64,
    pub knots: Vec<f64>,
}

impl KnotVector {
    pub fn n_segments(&self) -> usize {
        self.knots.len() - 1 - 2 * self.degree
    }

    /// Number of basis functions.
    pub fn n_basis(&self) -> usize {
        self.n_segments() + self.degree
    }

    pub fn spacing(&self) -> f64 {
        (self.boundary_hi - self.boundary_lo) / self.n_segments() as f64
    }

    pub fn contains(&self, x: f64) -> bool {
        let slack = DOMAIN_SLACK * (self.boundary_hi - self.boundary_lo);
        x.is_finite() && x >= self.boundary_lo - slack && x <= self.boundary_hi + slack
    }

    fn check(&self, x: f64, axis: &'static str) -> Result<()> {
        if self.contains(x) {
            Ok(())
        } else {
            Err(Error::OutOfDomain {
                axis,
                value: x,
                lo: self.boundary_lo,
                hi: self.boundary_hi,
            })
        }
    }

    /// Segment containing `x`, with the upper boundary mapped to the last
    /// segment.
    fn segment(&self, x: f64) -> usize {
        let n = self.n_segments();
        let pos = (x - self.boundary_lo) / self.spacing();
        if pos <= 0.0 {
            0
        } else {
            (pos.floor() as usize).min(n - 1)
        }
    }

    /// Writes the `degree + 1` nonzero basis values at `x` into `out` and
    /// returns the index of the first one.
    pub fn basis_row_into(&self, x: f64, out: &mut [f64]) -> Result<usize> {
        self.check(x, "basis")?;
        let p = self.degree;
        debug_assert_eq!(out.len(), p + 1);
        let seg = self.segment(x);
        let span = seg + p;
        let t = &self.knots;
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        out[0] = 1.0;
        for j in 1..=p {
            left[j] = x - t[span + 1 - j];
            right[j] = t[span + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = out[r] / (right[r + 1] + left[j - r]);
                out[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            out[j] = saved;
        }
        Ok(seg)
    }

    /// Full basis row of length `n_basis()`.
    pub fn basis_row(&self, x: f64) -> Result<Vec<f64>> {
        let mut local = vec![0.0; self.degree + 1];
        let first = self.basis_row_into(x, &mut local)?;
        let mut row = vec![0.0; self.n_basis()];
        row[first..first + local.len()].copy_from_slice(&local);
        Ok(row)
    }
}

/// Equally spaced knots on `[lo, hi]` with `n_segments` intervals.
pub fn make_knots(lo: f64, hi: f64, n_segments: usize, degree: usize) -> Result<KnotVector> {
    if !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidInput(format!(
            "knot bounds must be finite, got [{lo}, {hi}]"
        )));
    }
    if hi <= lo {
        return Err(Error::InvalidInput(format!(
            "knot range must satisfy hi > lo, got [{lo}, {hi}]"
        )));
    }
    if n_segments < 1 {
        return Err(Error::InvalidInput("need at least one knot segment".into()));
    }
    let h = (hi - lo) / n_segments as f64;
    let knots = (0..=n_segments + 2 * degree)
        .map(|k| lo + (k as f64 - degree as f64) * h)
        .collect();
    Ok(KnotVector {
        degree,
        boundary_lo: lo,
        boundary_hi: hi,
        knots,
    })
}

/// Knots giving exactly `n_basis` functions of the given degree.
pub fn knots_for_basis_size(lo: f64, hi: f64, n_basis: usize, degree: usize) -> Result<KnotVector> {
    if n_basis <= degree {
        return Err(Error::InvalidInput(format!(
            "basis size {n_basis} must exceed degree {degree}"
        )));
    }
    make_knots(lo, hi, n_basis - degree, degree)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BasisMatrix {
    pub values: DMatrix<f64>,
    pub points: Vec<f64>,
}

impl BasisMatrix {
    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }
}

pub fn evaluate_basis(points: &[f64], kv: &KnotVector) -> Result<BasisMatrix> {
    let c = kv.n_basis();
    let mut values = DMatrix::zeros(points.len(), c);
    let mut local = vec![0.0; kv.degree + 1];
    for (i, &x) in points.iter().enumerate() {
        let first = kv.basis_row_into(x, &mut local)?;
        for (offset, &v) in local.iter().enumerate() {
            values[(i, first + offset)] = v;
        }
    }
    Ok(BasisMatrix {
        values,
        points: points.to_vec(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffMatrix {
    pub order: usize,
    pub values: DMatrix<f64>,
}

/// `(c - d) x c` matrix of order-`d` forward differences.
pub fn difference_matrix(c: usize, d: usize) -> Result<DiffMatrix> {
    if d < 1 {
        return Err(Error::InvalidInput("difference order must be at least 1".into()));
    }
    if c <= d {
        return Err(Error::InvalidInput(format!(
            "difference order {d} needs more than {d} coefficients, got {c}"
        )));
    }
    let mut m = DMatrix::<f64>::identity(c, c);
    for _ in 0..d {
        let rows = m.nrows() - 1;
        m = DMatrix::from_fn(rows, c, |i, j| m[(i + 1, j)] - m[(i, j)]);
    }
    Ok(DiffMatrix { order: d, values: m })
}

/// Anisotropic tensor penalty for coefficients stored column-major as
/// `vec(A)` with `A` of shape `c_u x c_s`:
/// `rho_u (I_s ⊗ Du'Du) + rho_s (Ds'Ds ⊗ I_u)`.
///
/// A zero smoothing parameter drops its term, which also allows bases too
/// small to carry a difference of the requested order.
pub fn tensor_penalty(c_u: usize, c_s: usize, d: usize, rho_u: f64, rho_s: f64) -> Result<DMatrix<f64>> {
    let p = c_u * c_s;
    let mut pen = DMatrix::zeros(p, p);
    if rho_u != 0.0 {
        let du = difference_matrix(c_u, d)?.values;
        let dtd = du.transpose() * du;
        pen += DMatrix::<f64>::identity(c_s, c_s).kronecker(&dtd) * rho_u;
    }
    if rho_s != 0.0 {
        let ds = difference_matrix(c_s, d)?.values;
        let dtd = ds.transpose() * ds;
        pen += dtd.kronecker(&DMatrix::<f64>::identity(c_u, c_u)) * rho_s;
    }
    Ok(pen)
}
