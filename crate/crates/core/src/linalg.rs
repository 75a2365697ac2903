use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::error::{Error, Result};

/// Relative ridge added once when a factorization fails.
pub const RIDGE: f64 = 1e-10;

/// Cholesky factor of a symmetric positive definite matrix. On failure a
/// ridge of `RIDGE * trace` is added to the diagonal and the factorization is
/// retried once.
pub fn factor_spd(m: DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular("matrix has non-finite entries".into()));
    }
    let trace = m.trace();
    match Cholesky::new(m.clone()) {
        Some(c) => Ok(c),
        None => {
            let ridge = RIDGE * trace.abs();
            if ridge == 0.0 {
                return Err(Error::Singular("zero trace".into()));
            }
            let n = m.nrows();
            let jittered = m + DMatrix::<f64>::identity(n, n) * ridge;
            Cholesky::new(jittered)
                .ok_or_else(|| Error::Singular(format!("factorization failed after ridge {ridge:.3e}")))
        }
    }
}

pub fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// `2 Σ (y ln(y/μ) − (y − μ))` over cells with `include` set; `0 ln 0 = 0`.
pub fn poisson_deviance<'a>(
    y: impl IntoIterator<Item = &'a f64>,
    mu: impl IntoIterator<Item = &'a f64>,
    include: impl Fn(usize) -> bool,
) -> f64 {
    let mut dev = 0.0;
    for (i, (&yi, &mi)) in y.into_iter().zip(mu).enumerate() {
        if !include(i) {
            continue;
        }
        let term = if yi > 0.0 { yi * (yi / mi).ln() } else { 0.0 };
        dev += term - (yi - mi);
    }
    2.0 * dev
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ridge_rescues_semidefinite_matrix() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(factor_spd(m).is_ok());
        assert!(factor_spd(DMatrix::zeros(2, 2)).is_err());
        let neg = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(factor_spd(neg).is_err());
    }

    #[test]
    fn deviance_conventions() {
        let y = [0.0, 2.0];
        let mu = [1.5, 2.0];
        assert!((poisson_deviance(&y, &mu, |_| true) - 3.0).abs() < 1e-15);
        assert_eq!(poisson_deviance(&y, &mu, |i| i == 1), 0.0);
    }
}
