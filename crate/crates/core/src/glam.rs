//! Array arithmetic for tensor-product models on a regular grid.
//!
//! With coefficients `A` (`c_u x c_s`) stored column-major as `vec(A)`, the
//! model matrix is `Bs ⊗ Bu`. None of the kernels below ever forms it; they
//! work on the marginal bases and their row tensors `G(B)`, whose row `j` is
//! `B[j, :] ⊗ B[j, :]`.

use nalgebra::{DMatrix, DVector};

use crate::basis::BasisMatrix;
use crate::error::{Error, Result};

/// Row tensor of `b`: `G[j, l + c*l'] = b[j, l] * b[j, l']`.
pub fn row_tensor(b: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, c) = b.shape();
    DMatrix::from_fn(n, c * c, |j, idx| b[(j, idx % c)] * b[(j, idx / c)])
}

#[derive(Debug, Clone)]
pub struct ArrayModelWorkspace {
    bu: DMatrix<f64>,
    bs: DMatrix<f64>,
    gu: DMatrix<f64>,
    gs: DMatrix<f64>,
    // c_u² x n_s
    scratch: DMatrix<f64>,
}

impl ArrayModelWorkspace {
    pub fn new(bu: &BasisMatrix, bs: &BasisMatrix) -> Self {
        Self::from_matrices(bu.values.clone(), bs.values.clone())
    }

    pub fn from_matrices(bu: DMatrix<f64>, bs: DMatrix<f64>) -> Self {
        let gu = row_tensor(&bu);
        let gs = row_tensor(&bs);
        let scratch = DMatrix::zeros(gu.ncols(), bs.nrows());
        ArrayModelWorkspace { bu, bs, gu, gs, scratch }
    }

    pub fn bu(&self) -> &DMatrix<f64> {
        &self.bu
    }

    pub fn bs(&self) -> &DMatrix<f64> {
        &self.bs
    }

    pub fn n_u(&self) -> usize {
        self.bu.nrows()
    }

    pub fn n_s(&self) -> usize {
        self.bs.nrows()
    }

    pub fn c_u(&self) -> usize {
        self.bu.ncols()
    }

    pub fn c_s(&self) -> usize {
        self.bs.ncols()
    }

    pub fn n_coef(&self) -> usize {
        self.c_u() * self.c_s()
    }

    fn check_grid(&self, m: &DMatrix<f64>, what: &str) -> Result<()> {
        if m.shape() != (self.n_u(), self.n_s()) {
            return Err(Error::DimensionMismatch(format!(
                "{what} is {}x{}, grid is {}x{}",
                m.nrows(),
                m.ncols(),
                self.n_u(),
                self.n_s()
            )));
        }
        Ok(())
    }

    /// `Bu · A · Bs'`.
    pub fn linear_predictor(&self, a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if a.shape() != (self.c_u(), self.c_s()) {
            return Err(Error::DimensionMismatch(format!(
                "coefficients are {}x{}, bases need {}x{}",
                a.nrows(),
                a.ncols(),
                self.c_u(),
                self.c_s()
            )));
        }
        Ok(&self.bu * a * self.bs.transpose())
    }

    /// `(Bs ⊗ Bu)' diag(vec W) (Bs ⊗ Bu)`, symmetrized.
    pub fn weighted_inner(&mut self, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_grid(w, "weight matrix")?;
        if w.iter().any(|v| *v < 0.0 || !v.is_finite()) {
            return Err(Error::InvalidInput("weights must be finite and nonnegative".into()));
        }
        let (cu, cs) = (self.c_u(), self.c_s());
        self.scratch.gemm_tr(1.0, &self.gu, w, 0.0);
        let t = &self.scratch * &self.gs;
        let p = cu * cs;
        let mut out = DMatrix::zeros(p, p);
        for mp in 0..cs {
            for m in 0..cs {
                let tcol = m + cs * mp;
                for lp in 0..cu {
                    for l in 0..cu {
                        out[(l + cu * m, lp + cu * mp)] = t[(l + cu * lp, tcol)];
                    }
                }
            }
        }
        symmetrize(&mut out);
        Ok(out)
    }

    /// `vec(Bu' · V · Bs)`.
    pub fn weighted_rhs(&self, v: &DMatrix<f64>) -> Result<DVector<f64>> {
        self.check_grid(v, "right-hand side")?;
        let m = self.bu.transpose() * v * &self.bs;
        Ok(DVector::from_column_slice(m.as_slice()))
    }
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    fn dense(ws: &ArrayModelWorkspace) -> DMatrix<f64> {
        ws.bs().kronecker(ws.bu())
    }

    #[test]
    fn zero_inputs_give_zero_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut ws = ArrayModelWorkspace::from_matrices(random_matrix(&mut rng, 3, 2), random_matrix(&mut rng, 4, 3));
        assert!(ws.linear_predictor(&DMatrix::zeros(2, 3)).unwrap().iter().all(|v| *v == 0.0));
        assert!(ws.weighted_inner(&DMatrix::zeros(3, 4)).unwrap().iter().all(|v| *v == 0.0));
        assert!(ws.weighted_rhs(&DMatrix::zeros(3, 4)).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn constant_coefficients_with_partition_of_unity() {
        let ku = crate::basis::make_knots(0.0, 1.0, 3, 3).unwrap();
        let ks = crate::basis::make_knots(0.0, 2.0, 2, 2).unwrap();
        let bu = crate::basis::evaluate_basis(&[0.1, 0.4, 0.9], &ku).unwrap();
        let bs = crate::basis::evaluate_basis(&[0.0, 0.5, 1.5, 2.0], &ks).unwrap();
        let ws = ArrayModelWorkspace::new(&bu, &bs);
        let a = DMatrix::from_element(6, 4, 2.5);
        let e = ws.linear_predictor(&a).unwrap();
        assert!(e.iter().all(|v| (v - 2.5).abs() < 1e-12));
    }

    #[test]
    fn rejects_mismatched_or_negative_input() {
        let mut ws = ArrayModelWorkspace::from_matrices(DMatrix::identity(3, 2), DMatrix::identity(4, 3));
        assert!(ws.linear_predictor(&DMatrix::zeros(3, 3)).is_err());
        assert!(ws.weighted_rhs(&DMatrix::zeros(4, 3)).is_err());
        let mut w = DMatrix::from_element(3, 4, 1.0);
        w[(1, 1)] = -0.5;
        assert!(matches!(ws.weighted_inner(&w), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn kronecker_oracle_agreement() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let (nu, ns) = (rng.random_range(1..=6), rng.random_range(1..=6));
            let (cu, cs) = (rng.random_range(1..=4), rng.random_range(1..=4));
            let mut ws = ArrayModelWorkspace::from_matrices(random_matrix(&mut rng, nu, cu), random_matrix(&mut rng, ns, cs));
            let b = dense(&ws);
            let a = random_matrix(&mut rng, cu, cs);
            let w = DMatrix::from_fn(nu, ns, |_, _| rng.random_range(0.0..3.0));
            let v = random_matrix(&mut rng, nu, ns);

            let eta = ws.linear_predictor(&a).unwrap();
            let eta_dense = &b * DVector::from_column_slice(a.as_slice());
            assert!((DVector::from_column_slice(eta.as_slice()) - eta_dense).amax() < 1e-12);

            let wvec = DVector::from_column_slice(w.as_slice());
            let g_dense = b.transpose() * DMatrix::from_diagonal(&wvec) * &b;
            let g = ws.weighted_inner(&w).unwrap();
            let scale = g_dense.amax().max(1e-300);
            assert!((&g - &g_dense).amax() / scale < 1e-10);

            let rhs = ws.weighted_rhs(&v).unwrap();
            let rhs_dense = b.transpose() * DVector::from_column_slice(v.as_slice());
            assert!((rhs - rhs_dense).amax() < 1e-12);
        }
    }

    #[test]
    fn orthonormal_bases_give_identity_gram() {
        // columns of a permutation-like selector are orthonormal
        let bu = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let bs = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let mut ws = ArrayModelWorkspace::from_matrices(bu, bs);
        let g = ws.weighted_inner(&DMatrix::from_element(3, 2, 1.0)).unwrap();
        assert!((g - DMatrix::<f64>::identity(4, 4)).amax() < 1e-14);
    }

    #[test]
    fn gram_is_positive_semidefinite() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut ws = ArrayModelWorkspace::from_matrices(random_matrix(&mut rng, 6, 4), random_matrix(&mut rng, 5, 4));
        let w = DMatrix::from_fn(6, 5, |_, _| rng.random_range(0.0..2.0));
        let g = ws.weighted_inner(&w).unwrap();
        assert_eq!(g, g.transpose());
        let min_eig = g.clone().symmetric_eigen().eigenvalues.min();
        assert!(min_eig >= -1e-10 * g.trace());
    }

    #[test]
    fn rhs_with_weighted_predictor_matches_dense_iwls_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut ws = ArrayModelWorkspace::from_matrices(random_matrix(&mut rng, 5, 3), random_matrix(&mut rng, 4, 3));
        let b = dense(&ws);
        let a = random_matrix(&mut rng, 3, 3);
        let w = DMatrix::from_fn(5, 4, |_, _| rng.random_range(0.1..2.0));
        let e = ws.linear_predictor(&a).unwrap();
        let rhs = ws.weighted_rhs(&w.component_mul(&e)).unwrap();
        // with V = W∘E the normal equations reproduce A exactly
        let g = ws.weighted_inner(&w).unwrap();
        let alpha = g.cholesky().unwrap().solve(&rhs);
        assert!((alpha - DVector::from_column_slice(a.as_slice())).amax() < 1e-8);
        let wvec = DVector::from_column_slice(w.as_slice());
        let dense_rhs = b.transpose() * DMatrix::from_diagonal(&wvec) * (&b * DVector::from_column_slice(a.as_slice()));
        assert!((ws.weighted_rhs(&w.component_mul(&e)).unwrap() - dense_rhs).amax() < 1e-12);
    }
}
