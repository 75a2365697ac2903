//! Fitted model as a single JSON document, and point predictions from it.
//! Matrices are stored row-major.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::incidence::{QuadraturePlan, SupportHull};
use crate::lexis::{LexisGrid, N_CAUSES};
use crate::smooth2d::{FittedHazard, HazardSurface, PenaltyConfig, TensorBases};
use crate::uncertainty::{cif_standard_errors, se_log_hazard_points, CoefCovariance, MonteCarloConfig};

pub const MODEL_FORMAT: &str = "lexhaz-model";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CauseModel {
    pub cause: usize,
    pub bases: TensorBases,
    pub c_u: usize,
    pub c_s: usize,
    /// `c_u x c_s`, row-major.
    pub coefficients: Vec<f64>,
    /// `(c_u c_s) x (c_u c_s)` over `vec(A)` (column-major coefficient
    /// order), stored row-major.
    pub covariance: Vec<f64>,
    pub penalty: PenaltyConfig,
    pub log10_rho_u: f64,
    pub log10_rho_s: f64,
    pub deviance: f64,
    pub ed: f64,
    pub aic: f64,
    pub bic: f64,
    pub iterations: usize,
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

fn from_row_major(r: usize, c: usize, v: &[f64], what: &str) -> Result<DMatrix<f64>> {
    if v.len() != r * c {
        return Err(Error::InvalidInput(format!("{what} has {} entries, expected {}", v.len(), r * c)));
    }
    Ok(DMatrix::from_row_slice(r, c, v))
}

impl CauseModel {
    pub fn from_fit(fit: &FittedHazard, cov: &CoefCovariance, log10_rho: (f64, f64)) -> Self {
        CauseModel {
            cause: fit.cause,
            bases: fit.surface.bases.clone(),
            c_u: fit.surface.c_u(),
            c_s: fit.surface.c_s(),
            coefficients: row_major(&fit.surface.coefficients),
            covariance: row_major(&cov.sigma),
            penalty: fit.penalty,
            log10_rho_u: log10_rho.0,
            log10_rho_s: log10_rho.1,
            deviance: fit.deviance,
            ed: fit.ed,
            aic: fit.aic,
            bic: fit.bic,
            iterations: fit.iterations,
        }
    }

    pub fn surface(&self) -> Result<HazardSurface> {
        if self.bases.c_u() != self.c_u || self.bases.c_s() != self.c_s {
            return Err(Error::InvalidInput("stored basis sizes disagree with the knots".into()));
        }
        Ok(HazardSurface {
            bases: self.bases.clone(),
            coefficients: from_row_major(self.c_u, self.c_s, &self.coefficients, "coefficients")?,
        })
    }

    pub fn covariance(&self) -> Result<CoefCovariance> {
        let p = self.c_u * self.c_s;
        CoefCovariance::new(from_row_major(p, p, &self.covariance, "covariance")?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub version: String,
    pub grid: LexisGrid,
    pub delta: f64,
    pub monte_carlo: MonteCarloConfig,
    pub hull: SupportHull,
    pub config: RunConfig,
    pub causes: Vec<CauseModel>,
}

impl ModelFile {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: ModelFile = serde_json::from_str(text)?;
        if m.format != MODEL_FORMAT {
            return Err(Error::InvalidInput(format!("not a model file (format {:?})", m.format)));
        }
        if m.causes.len() != N_CAUSES {
            return Err(Error::InvalidInput(format!("model has {} causes, expected {N_CAUSES}", m.causes.len())));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn predictor(&self) -> Result<Predictor> {
        let s1 = self.causes[0].surface()?;
        let s2 = self.causes[1].surface()?;
        Ok(Predictor {
            surfaces: [s1, s2],
            covs: [self.causes[0].covariance()?, self.causes[1].covariance()?],
            delta: self.delta,
            monte_carlo: self.monte_carlo,
            hull: self.hull.clone(),
        })
    }
}

/// Everything reported for one `(u, s)` point; arrays are per cause.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointPrediction {
    pub u: f64,
    pub s: f64,
    pub hazard: [f64; N_CAUSES],
    pub hazard_se: [f64; N_CAUSES],
    pub log_hazard: [f64; N_CAUSES],
    pub log_hazard_se: [f64; N_CAUSES],
    pub cumhaz: [f64; N_CAUSES],
    pub survival: f64,
    pub cif: [f64; N_CAUSES],
    pub cif_se: Option<[f64; N_CAUSES]>,
    pub extrapolated: bool,
}

#[derive(Debug, Clone)]
pub struct Predictor {
    pub surfaces: [HazardSurface; N_CAUSES],
    pub covs: [CoefCovariance; N_CAUSES],
    pub delta: f64,
    pub monte_carlo: MonteCarloConfig,
    pub hull: SupportHull,
}

impl Predictor {
    /// Fails with every out-of-domain point listed.
    pub fn check_domain(&self, points: &[(f64, f64)]) -> Result<()> {
        let bad: Vec<String> = points
            .iter()
            .enumerate()
            .filter(|(_, &(u, s))| !self.surfaces.iter().all(|h| h.contains(u, s)))
            .map(|(i, &(u, s))| format!("#{} (u={u}, s={s})", i + 1))
            .collect();
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::PointsOutOfDomain { points: bad })
        }
    }

    fn surface_refs(&self) -> [&HazardSurface; N_CAUSES] {
        [&self.surfaces[0], &self.surfaces[1]]
    }

    pub fn predict(&self, points: &[(f64, f64)], with_cif_se: bool) -> Result<Vec<PointPrediction>> {
        self.check_domain(points)?;
        if points.is_empty() {
            return Ok(Vec::new());
        }
        let plan = QuadraturePlan::for_points(self.surface_refs(), points, self.delta)?;
        let coefs = [&self.surfaces[0].coefficients, &self.surfaces[1].coefficients];
        let curves = plan.integrate(coefs);
        let se: Vec<Vec<f64>> = (0..N_CAUSES)
            .map(|c| se_log_hazard_points(&self.surfaces[c], &self.covs[c], points))
            .collect::<Result<_>>()?;
        let cif_se = if with_cif_se {
            Some(cif_standard_errors(self.surface_refs(), [&self.covs[0], &self.covs[1]], &plan, &self.monte_carlo)?)
        } else {
            None
        };
        points
            .iter()
            .enumerate()
            .map(|(i, &(u, s))| {
                let eta = [self.surfaces[0].log_hazard(u, s)?, self.surfaces[1].log_hazard(u, s)?];
                let hz = [self.surfaces[0].hazard(u, s)?, self.surfaces[1].hazard(u, s)?];
                Ok(PointPrediction {
                    u,
                    s,
                    hazard: hz,
                    hazard_se: [hz[0] * se[0][i], hz[1] * se[1][i]],
                    log_hazard: eta,
                    log_hazard_se: [se[0][i], se[1][i]],
                    cumhaz: [curves.cumhaz[0][(i, 0)], curves.cumhaz[1][(i, 0)]],
                    survival: curves.survival[(i, 0)],
                    cif: [curves.cif[0][(i, 0)], curves.cif[1][(i, 0)]],
                    cif_se: cif_se.as_ref().map(|m| [m[0][(i, 0)], m[1][(i, 0)]]),
                    extrapolated: !self.hull.contains(u, s),
                })
            })
            .collect()
    }
}
