//! End-to-end fitting: optional ungrouping, per-cause smoothing selection,
//! derived surfaces and standard errors, and the model document.

use log::info;
use nalgebra::DMatrix;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::incidence::{compute_surfaces, EvalGrid, QuadraturePlan, SupportHull, Surfaces};
use crate::lexis::{bin_records, BinnedData, IndividualRecord, N_CAUSES};
use crate::model::{CauseModel, ModelFile, MODEL_FORMAT};
use crate::pclm::{group_records, ungroup_cohort, PclmSelection, UngroupOutcome};
use crate::smooth2d::{select_smoothing, CandidateScore, SmoothingSelection};
use crate::uncertainty::{cif_standard_errors, coefficient_covariance, se_log_hazard, CoefCovariance};

pub struct PreparedData {
    pub data: BinnedData,
    pub ungroup: Option<UngroupOutcome>,
}

/// Bins the records, ungrouping the final age interval first when the
/// configuration asks for it.
pub fn prepare_records(records: &[IndividualRecord], cfg: &RunConfig) -> Result<PreparedData> {
    let grid = cfg.lexis_grid()?;
    if cfg.pclm.enabled {
        let cohort = group_records(records, &grid, cfg.pclm.first_grouped_age)?;
        let outcome = ungroup_cohort(&cohort, &cfg.ungroup_settings())?;
        info!(
            "ungrouped ages {}+ ({} clamped bin(s))",
            cfg.pclm.first_grouped_age, outcome.clamped_bins
        );
        Ok(PreparedData {
            data: outcome.data.clone(),
            ungroup: Some(outcome),
        })
    } else {
        Ok(PreparedData {
            data: bin_records(records, &grid)?,
            ungroup: None,
        })
    }
}

pub struct CauseResult {
    pub selection: SmoothingSelection,
    pub covariance: CoefCovariance,
}

pub struct FitOutcome {
    pub causes: Vec<CauseResult>,
    pub eval: EvalGrid,
    pub surfaces: Surfaces,
    pub log_hazard: [DMatrix<f64>; N_CAUSES],
    pub log_hazard_se: [DMatrix<f64>; N_CAUSES],
    pub cif_se: [DMatrix<f64>; N_CAUSES],
    pub hull: SupportHull,
    /// `extrapolated[i][j]` for `eval.u_points[i]`, `eval.s_points[j]`.
    pub extrapolated: Vec<Vec<bool>>,
    pub model: ModelFile,
}

pub fn fit_binned(data: &BinnedData, cfg: &RunConfig) -> Result<FitOutcome> {
    cfg.validate()?;
    let grid = &data.grid;
    if *grid != cfg.lexis_grid()? {
        return Err(Error::InvalidInput("data grid differs from the configured grid".into()));
    }
    let bases = cfg.tensor_bases(grid)?;
    let search = cfg.smoothing.search();
    let mut causes = Vec::with_capacity(N_CAUSES);
    for cause in 1..=N_CAUSES {
        let selection = select_smoothing(data, cause, &bases, cfg.basis.order, cfg.smoothing.criterion, &search, &cfg.control)?;
        info!(
            "cause {cause}: log10 rho = ({}, {}), ED = {:.3}",
            selection.log10_rho_u, selection.log10_rho_s, selection.fit.ed
        );
        let covariance = coefficient_covariance(&selection.fit)?;
        causes.push(CauseResult { selection, covariance });
    }

    let eval = EvalGrid::for_lexis(grid, Some(cfg.delta()))?;
    let s_refs = [&causes[0].selection.fit.surface, &causes[1].selection.fit.surface];
    let surfaces = compute_surfaces(s_refs, &eval)?;
    let plan = QuadraturePlan::for_grid(s_refs, &eval)?;
    let mc = cfg.monte_carlo();
    let cif_se = cif_standard_errors(s_refs, [&causes[0].covariance, &causes[1].covariance], &plan, &mc)?;
    let mut log_hazard = Vec::with_capacity(N_CAUSES);
    let mut log_hazard_se = Vec::with_capacity(N_CAUSES);
    for c in &causes {
        let surf = &c.selection.fit.surface;
        log_hazard.push(crate::incidence::evaluate_log_hazard(surf, &eval.u_points, &eval.s_points)?);
        log_hazard_se.push(se_log_hazard(surf, &c.covariance, &eval.u_points, &eval.s_points)?);
    }
    let hull = SupportHull::from_data(data);
    let extrapolated = hull.extrapolation_mask(&eval.u_points, &eval.s_points);

    let model = ModelFile {
        format: MODEL_FORMAT.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        grid: grid.clone(),
        delta: eval.delta,
        monte_carlo: mc,
        hull: hull.clone(),
        config: cfg.clone(),
        causes: causes
            .iter()
            .map(|c| CauseModel::from_fit(&c.selection.fit, &c.covariance, (c.selection.log10_rho_u, c.selection.log10_rho_s)))
            .collect(),
    };
    let [lh1, lh2]: [DMatrix<f64>; 2] = log_hazard.try_into().unwrap();
    let [se1, se2]: [DMatrix<f64>; 2] = log_hazard_se.try_into().unwrap();
    Ok(FitOutcome {
        causes,
        eval,
        surfaces,
        log_hazard: [lh1, lh2],
        log_hazard_se: [se1, se2],
        cif_se,
        hull,
        extrapolated,
        model,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct CauseSummary {
    pub cause: usize,
    pub log10_rho_u: f64,
    pub log10_rho_s: f64,
    pub ed: f64,
    pub deviance: f64,
    pub aic: f64,
    pub bic: f64,
    pub n_bin: usize,
    pub iterations: usize,
    pub score_norm: f64,
    pub events: f64,
    pub candidates: Vec<CandidateScore>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FitSummary {
    pub version: String,
    pub criterion: crate::smooth2d::Criterion,
    pub grid: [usize; 2],
    pub bases: [usize; 2],
    pub total_exposure: f64,
    pub delta: f64,
    pub n_draws: usize,
    pub seed: u64,
    pub conservation_error: f64,
    pub causes: Vec<CauseSummary>,
    pub u_points: Vec<f64>,
    pub s_points: Vec<f64>,
    pub extrapolation_mask: Vec<Vec<bool>>,
    pub ungrouped: bool,
}

pub fn fit_summary(outcome: &FitOutcome, data: &BinnedData, cfg: &RunConfig, ungrouped: bool) -> FitSummary {
    FitSummary {
        version: env!("CARGO_PKG_VERSION").into(),
        criterion: cfg.smoothing.criterion,
        grid: [data.grid.n_u(), data.grid.n_s()],
        bases: [cfg.basis.c_u, cfg.basis.c_s],
        total_exposure: data.exposure.sum(),
        delta: outcome.eval.delta,
        n_draws: cfg.monte_carlo.n_draws,
        seed: cfg.seed,
        conservation_error: outcome.surfaces.conservation_error(),
        causes: outcome
            .causes
            .iter()
            .map(|c| {
                let f = &c.selection.fit;
                CauseSummary {
                    cause: f.cause,
                    log10_rho_u: c.selection.log10_rho_u,
                    log10_rho_s: c.selection.log10_rho_s,
                    ed: f.ed,
                    deviance: f.deviance,
                    aic: f.aic,
                    bic: f.bic,
                    n_bin: f.n_bin,
                    iterations: f.iterations,
                    score_norm: f.score_norm,
                    events: data.events[f.cause - 1].sum(),
                    candidates: c.selection.candidates.clone(),
                }
            })
            .collect(),
        u_points: outcome.eval.u_points.clone(),
        s_points: outcome.eval.s_points.clone(),
        extrapolation_mask: outcome.extrapolated.clone(),
        ungrouped,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PclmSummary {
    pub log10_phi_u: f64,
    pub log10_phi_s: f64,
    pub aic: f64,
    pub ed: f64,
    pub iterations: usize,
    pub candidates: Vec<CandidateScore>,
}

impl PclmSummary {
    fn from_selection(sel: &PclmSelection) -> Self {
        PclmSummary {
            log10_phi_u: sel.log10_phi_u,
            log10_phi_s: sel.log10_phi_s,
            aic: sel.fit.aic,
            ed: sel.fit.ed,
            iterations: sel.fit.iterations,
            candidates: sel.candidates.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct UngroupDiagnostics {
    pub first_grouped_age: f64,
    pub closing_age: f64,
    /// `None` for a cause without events in the grouped interval.
    pub events: Vec<Option<PclmSummary>>,
    pub at_risk: Option<PclmSummary>,
    pub max_column_discrepancy: Vec<f64>,
    pub clamped_bins: usize,
}

pub fn ungroup_diagnostics(outcome: &UngroupOutcome, cfg: &RunConfig) -> UngroupDiagnostics {
    UngroupDiagnostics {
        first_grouped_age: cfg.pclm.first_grouped_age,
        closing_age: cfg.pclm.closing_age,
        events: outcome.event_fits.iter().map(|f| f.as_ref().map(PclmSummary::from_selection)).collect(),
        at_risk: outcome.at_risk_fit.as_ref().map(PclmSummary::from_selection),
        max_column_discrepancy: outcome.max_column_discrepancy.clone(),
        clamped_bins: outcome.clamped_bins,
    }
}
