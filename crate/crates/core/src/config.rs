//! Run configuration read from TOML. Every field has a default, so an empty
//! file (or none) gives the standard configuration: a 50×21 grid of 1-year by
//! half-year bins over ages 50–100 and 0–10.5 years since diagnosis, 16×10
//! cubic B-splines with second-order penalties, BIC selection.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lexis::{build_grid, LexisGrid};
use crate::pclm::{PhiGrid, UngroupSettings};
use crate::smooth2d::{Criterion, FitControl, SearchConfig, TensorBases};
use crate::uncertainty::MonteCarloConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub u_lo: f64,
    pub u_hi: f64,
    pub h_u: f64,
    pub s_lo: f64,
    pub s_hi: f64,
    pub h_s: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            u_lo: 50.0,
            u_hi: 100.0,
            h_u: 1.0,
            s_lo: 0.0,
            s_hi: 10.5,
            h_s: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BasisConfig {
    pub c_u: usize,
    pub c_s: usize,
    pub degree: usize,
    /// Difference order of the penalty.
    pub order: usize,
}

impl Default for BasisConfig {
    fn default() -> Self {
        BasisConfig {
            c_u: 16,
            c_s: 10,
            degree: 3,
            order: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmoothingConfig {
    pub criterion: Criterion,
    pub log10_rho_u: (f64, f64),
    pub log10_rho_s: (f64, f64),
    pub grid_step: f64,
    pub resolution: f64,
    pub refine: bool,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        let s = SearchConfig::default();
        SmoothingConfig {
            criterion: Criterion::Bic,
            log10_rho_u: s.log10_rho_u,
            log10_rho_s: s.log10_rho_s,
            grid_step: s.grid_step,
            resolution: s.resolution,
            refine: s.refine,
        }
    }
}

impl SmoothingConfig {
    pub fn search(&self) -> SearchConfig {
        SearchConfig {
            log10_rho_u: self.log10_rho_u,
            log10_rho_s: self.log10_rho_s,
            grid_step: self.grid_step,
            resolution: self.resolution,
            refine: self.refine,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PclmConfig {
    pub enabled: bool,
    /// Lower edge of the grouped age interval.
    pub first_grouped_age: f64,
    /// Assumed upper edge of the grouped interval; must equal `grid.u_hi`.
    pub closing_age: f64,
    pub c_u: usize,
    pub c_s: usize,
    pub phi: PhiGrid,
}

impl Default for PclmConfig {
    fn default() -> Self {
        PclmConfig {
            enabled: false,
            first_grouped_age: 90.0,
            closing_age: 100.0,
            c_u: 16,
            c_s: 10,
            phi: PhiGrid::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadratureConfig {
    /// Rectangle width; `h_s / 10` when absent.
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonteCarloBlock {
    pub n_draws: usize,
}

impl Default for MonteCarloBlock {
    fn default() -> Self {
        MonteCarloBlock { n_draws: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: PathBuf::from("lexhaz-out") }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub grid: GridConfig,
    pub basis: BasisConfig,
    pub smoothing: SmoothingConfig,
    pub pclm: PclmConfig,
    pub quadrature: QuadratureConfig,
    pub monte_carlo: MonteCarloBlock,
    pub output: OutputConfig,
    pub control: FitControl,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 20240101,
            grid: GridConfig::default(),
            basis: BasisConfig::default(),
            smoothing: SmoothingConfig::default(),
            pclm: PclmConfig::default(),
            quadrature: QuadratureConfig::default(),
            monte_carlo: MonteCarloBlock::default(),
            output: OutputConfig::default(),
            control: FitControl::default(),
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be positive, got {v}")))
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.grid;
        positive("grid.h_u", g.h_u)?;
        positive("grid.h_s", g.h_s)?;
        if !(g.u_hi > g.u_lo && g.s_hi > g.s_lo) {
            return Err(Error::Config("grid upper bounds must exceed lower bounds".into()));
        }
        if g.s_lo != 0.0 {
            return Err(Error::Config(format!("grid.s_lo must be 0 for cumulative quantities, got {}", g.s_lo)));
        }
        let b = &self.basis;
        if b.order < 1 {
            return Err(Error::Config("basis.order must be at least 1".into()));
        }
        if b.c_u <= b.degree || b.c_s <= b.degree || b.c_u <= b.order || b.c_s <= b.order {
            return Err(Error::Config(format!(
                "basis sizes ({}, {}) must exceed the degree {} and the penalty order {}",
                b.c_u, b.c_s, b.degree, b.order
            )));
        }
        let s = &self.smoothing;
        positive("smoothing.grid_step", s.grid_step)?;
        positive("smoothing.resolution", s.resolution)?;
        if s.log10_rho_u.0 > s.log10_rho_u.1 || s.log10_rho_s.0 > s.log10_rho_s.1 {
            return Err(Error::Config("smoothing ranges must be ordered (lo, hi)".into()));
        }
        if let Some(d) = self.quadrature.delta {
            positive("quadrature.delta", d)?;
        }
        if self.monte_carlo.n_draws < 2 {
            return Err(Error::Config("monte_carlo.n_draws must be at least 2".into()));
        }
        if self.control.max_iter < 1 {
            return Err(Error::Config("control.max_iter must be at least 1".into()));
        }
        let p = &self.pclm;
        if p.enabled {
            if (p.closing_age - g.u_hi).abs() > 1e-9 * g.h_u {
                return Err(Error::Config(format!(
                    "pclm.closing_age ({}) must equal grid.u_hi ({})",
                    p.closing_age, g.u_hi
                )));
            }
            if !(p.first_grouped_age > g.u_lo && p.first_grouped_age < g.u_hi) {
                return Err(Error::Config("pclm.first_grouped_age must lie inside the grid".into()));
            }
            positive("pclm.phi.step", p.phi.step)?;
            if p.phi.lo > p.phi.hi {
                return Err(Error::Config("pclm.phi range must be ordered".into()));
            }
        }
        Ok(())
    }

    pub fn lexis_grid(&self) -> Result<LexisGrid> {
        let g = &self.grid;
        build_grid(g.u_lo, g.u_hi, g.h_u, g.s_lo, g.s_hi, g.h_s)
    }

    pub fn tensor_bases(&self, grid: &LexisGrid) -> Result<TensorBases> {
        TensorBases::for_grid(grid, self.basis.c_u, self.basis.c_s, self.basis.degree)
    }

    pub fn delta(&self) -> f64 {
        self.quadrature.delta.unwrap_or(self.grid.h_s / 10.0)
    }

    pub fn monte_carlo(&self) -> MonteCarloConfig {
        MonteCarloConfig {
            n_draws: self.monte_carlo.n_draws,
            seed: self.seed,
        }
    }

    pub fn ungroup_settings(&self) -> UngroupSettings {
        UngroupSettings {
            c_u: self.pclm.c_u,
            c_s: self.pclm.c_s,
            degree: self.basis.degree,
            order: self.basis.order,
            phi_grid: self.pclm.phi,
            control: self.control,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pclm::CompositionSpec;

    #[test]
    fn empty_file_gives_standard_dimensions() {
        let cfg = RunConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        let grid = cfg.lexis_grid().unwrap();
        assert_eq!((grid.n_u(), grid.n_s()), (50, 21));
        let bases = cfg.tensor_bases(&grid).unwrap();
        assert_eq!((bases.c_u(), bases.c_s()), (16, 10));
        assert_eq!(cfg.pclm.c_u * cfg.pclm.c_s, 160);
        let first = ((cfg.pclm.first_grouped_age - cfg.grid.u_lo) / cfg.grid.h_u) as usize;
        let spec = CompositionSpec::tail(first + 1, grid.n_u()).unwrap();
        assert_eq!((spec.g(), spec.n_u()), (41, 50));
        assert_eq!(cfg.smoothing.criterion, Criterion::Bic);
        assert_eq!((cfg.pclm.phi.lo, cfg.pclm.phi.hi), (-1.0, 2.0));
        assert_eq!(cfg.delta(), 0.05);
    }

    #[test]
    fn partial_overrides_and_round_trip() {
        let cfg = RunConfig::from_toml_str(
            "seed = 7\n[smoothing]\ncriterion = \"aic\"\nlog10_rho_u = [0.0, 4.0]\n[pclm]\nenabled = true\n[monte_carlo]\nn_draws = 50\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.smoothing.criterion, Criterion::Aic);
        assert_eq!(cfg.smoothing.log10_rho_u, (0.0, 4.0));
        assert_eq!(cfg.smoothing.log10_rho_s, (-1.0, 7.0));
        assert_eq!(cfg.monte_carlo().n_draws, 50);
        let back = RunConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn invalid_configurations() {
        for text in [
            "[grid]\nh_u = 0.0",
            "[grid]\ns_lo = 1.0",
            "[basis]\nc_u = 3",
            "[pclm]\nenabled = true\nclosing_age = 95.0",
            "[monte_carlo]\nn_draws = 1",
            "[quadrature]\ndelta = -0.1",
            "[grid]\nunknown = 1",
        ] {
            assert!(matches!(RunConfig::from_toml_str(text), Err(Error::Config(_))), "{text}");
        }
    }
}
