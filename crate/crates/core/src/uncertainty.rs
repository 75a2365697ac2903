//! Standard errors: delta method for log-hazards and hazards, Monte-Carlo
//! propagation for cumulative incidence.
//!
//! The two causes are fitted separately and share only exposures, so their
//! coefficient draws are taken as independent.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glam::symmetrize;
use crate::incidence::QuadraturePlan;
use crate::lexis::N_CAUSES;
use crate::linalg::RIDGE;
use crate::smooth2d::{FittedHazard, HazardSurface};

/// `(B'ŴB + P)⁻¹` for one cause, indexed like `vec(A)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefCovariance {
    pub sigma: DMatrix<f64>,
}

impl CoefCovariance {
    pub fn new(sigma: DMatrix<f64>) -> Result<Self> {
        if !sigma.is_square() {
            return Err(Error::DimensionMismatch("covariance must be square".into()));
        }
        let mut sigma = sigma;
        symmetrize(&mut sigma);
        Ok(CoefCovariance { sigma })
    }

    pub fn dim(&self) -> usize {
        self.sigma.nrows()
    }

    /// `b Σ b'` for a sparse row given as `(index, value)` pairs.
    pub fn quadratic_form(&self, row: &[(usize, f64)]) -> f64 {
        let mut v = 0.0;
        for &(i, bi) in row {
            for &(j, bj) in row {
                v += bi * bj * self.sigma[(i, j)];
            }
        }
        v
    }
}

pub fn coefficient_covariance(fit: &FittedHazard) -> Result<CoefCovariance> {
    if !fit.converged {
        return Err(Error::InvalidInput("covariance needs a converged fit".into()));
    }
    let p = fit.n_coef();
    let sigma = fit.factor.solve(&DMatrix::identity(p, p));
    if sigma.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular("covariance has non-finite entries".into()));
    }
    CoefCovariance::new(sigma)
}

fn check_dim(surface: &HazardSurface, cov: &CoefCovariance) -> Result<()> {
    let p = surface.c_u() * surface.c_s();
    if cov.dim() != p {
        return Err(Error::DimensionMismatch(format!("covariance is {0}x{0}, surface has {p} coefficients", cov.dim())));
    }
    Ok(())
}

/// `sqrt(b Σ b')` at each point.
pub fn se_log_hazard_points(surface: &HazardSurface, cov: &CoefCovariance, points: &[(f64, f64)]) -> Result<Vec<f64>> {
    check_dim(surface, cov)?;
    points
        .iter()
        .map(|&(u, s)| Ok(cov.quadratic_form(&surface.design_row(u, s)?).max(0.0).sqrt()))
        .collect()
}

pub fn se_log_hazard(surface: &HazardSurface, cov: &CoefCovariance, u_points: &[f64], s_points: &[f64]) -> Result<DMatrix<f64>> {
    let pts: Vec<(f64, f64)> = u_points.iter().flat_map(|&u| s_points.iter().map(move |&s| (u, s))).collect();
    let v = se_log_hazard_points(surface, cov, &pts)?;
    Ok(DMatrix::from_fn(u_points.len(), s_points.len(), |i, j| v[i * s_points.len() + j]))
}

/// `λ̂ · se(η̂)`.
pub fn se_hazard(surface: &HazardSurface, cov: &CoefCovariance, u_points: &[f64], s_points: &[f64]) -> Result<DMatrix<f64>> {
    let se = se_log_hazard(surface, cov, u_points, s_points)?;
    let h = crate::incidence::evaluate_hazard(surface, u_points, s_points)?;
    Ok(h.component_mul(&se))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonteCarloConfig {
    pub n_draws: usize,
    pub seed: u64,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        MonteCarloConfig { n_draws: 1000, seed: 1 }
    }
}

/// Multivariate normal sampler `μ + L z` with `Σ = L L'`.
#[derive(Debug, Clone)]
pub struct MvnSampler {
    mean: DVector<f64>,
    factor: DMatrix<f64>,
}

impl MvnSampler {
    pub fn new(mean: DVector<f64>, sigma: &DMatrix<f64>) -> Result<Self> {
        if sigma.shape() != (mean.len(), mean.len()) {
            return Err(Error::DimensionMismatch("mean and covariance disagree".into()));
        }
        let n = mean.len();
        let trace = sigma.trace();
        if trace == 0.0 && sigma.iter().all(|v| *v == 0.0) {
            return Ok(MvnSampler {
                mean,
                factor: DMatrix::zeros(n, n),
            });
        }
        let mut s = sigma.clone();
        symmetrize(&mut s);
        let factor = match s.clone().cholesky() {
            Some(c) => c.l(),
            None => {
                let jitter = RIDGE * trace.abs();
                (s + DMatrix::identity(n, n) * jitter)
                    .cholesky()
                    .ok_or_else(|| Error::Singular(format!("covariance not positive semidefinite after jitter {jitter:.3e}")))?
                    .l()
            }
        };
        Ok(MvnSampler { mean, factor })
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> DVector<f64> {
        let z = DVector::from_fn(self.mean.len(), |_, _| StandardNormal.sample(rng));
        &self.mean + &self.factor * z
    }
}

/// RNG for one draw of one cause; streams never overlap between draws.
pub fn draw_rng(seed: u64, draw: usize, cause_index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((N_CAUSES * draw + cause_index) as u64);
    rng
}

const CHUNK: usize = 64;

/// Per-cause Monte-Carlo standard errors of `Ĭ_ℓ` on a quadrature plan.
/// Draws are generated in parallel but accumulated in draw order, so the
/// result is bitwise reproducible for a given seed.
pub fn cif_standard_errors(
    surfaces: [&HazardSurface; N_CAUSES],
    covs: [&CoefCovariance; N_CAUSES],
    plan: &QuadraturePlan,
    mc: &MonteCarloConfig,
) -> Result<[DMatrix<f64>; N_CAUSES]> {
    if mc.n_draws < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 draws, got {}", mc.n_draws)));
    }
    let mut samplers = Vec::with_capacity(N_CAUSES);
    for c in 0..N_CAUSES {
        check_dim(surfaces[c], covs[c])?;
        let mean = DVector::from_column_slice(surfaces[c].coefficients.as_slice());
        samplers.push(MvnSampler::new(mean, &covs[c].sigma)?);
    }
    let shapes: Vec<(usize, usize)> = surfaces.iter().map(|s| (s.c_u(), s.c_s())).collect();
    let one_draw = |d: usize| -> [DMatrix<f64>; N_CAUSES] {
        let coefs: Vec<DMatrix<f64>> = (0..N_CAUSES)
            .map(|c| {
                let alpha = samplers[c].sample(&mut draw_rng(mc.seed, d, c));
                DMatrix::from_column_slice(shapes[c].0, shapes[c].1, alpha.as_slice())
            })
            .collect();
        plan.integrate([&coefs[0], &coefs[1]]).cif
    };

    let (r, c) = plan.output_shape();
    let mut mean: [DMatrix<f64>; N_CAUSES] = [DMatrix::zeros(r, c), DMatrix::zeros(r, c)];
    let mut m2: [DMatrix<f64>; N_CAUSES] = [DMatrix::zeros(r, c), DMatrix::zeros(r, c)];
    let mut count = 0.0;
    let n_chunks = mc.n_draws.div_ceil(CHUNK);
    for chunk in 0..n_chunks {
        let lo = chunk * CHUNK;
        let hi = (lo + CHUNK).min(mc.n_draws);
        let draws: Vec<[DMatrix<f64>; N_CAUSES]> = (lo..hi).into_par_iter().map(one_draw).collect();
        for cif in draws {
            count += 1.0;
            for k in 0..N_CAUSES {
                for (idx, &x) in cif[k].iter().enumerate() {
                    let delta = x - mean[k].as_slice()[idx];
                    mean[k].as_mut_slice()[idx] += delta / count;
                    m2[k].as_mut_slice()[idx] += delta * (x - mean[k].as_slice()[idx]);
                }
            }
        }
    }
    let denom = count - 1.0;
    Ok([m2[0].map(|v| (v.max(0.0) / denom).sqrt()), m2[1].map(|v| (v.max(0.0) / denom).sqrt())])
}
