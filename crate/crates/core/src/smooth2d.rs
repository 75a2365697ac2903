//! Penalized Poisson IWLS for one cause-specific log-hazard surface, and
//! smoothing parameter selection by AIC or BIC.

use std::collections::HashMap;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{difference_matrix, evaluate_basis, knots_for_basis_size, tensor_penalty, KnotVector};
use crate::error::{Error, Result};
use crate::glam::ArrayModelWorkspace;
use crate::lexis::{BinnedData, LexisGrid};
use crate::linalg::{factor_spd, inf_norm, poisson_deviance};

/// Upper clamp on linear predictors before exponentiation.
pub(crate) const ETA_MAX: f64 = 700.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyConfig {
    pub order: usize,
    pub rho_u: f64,
    pub rho_s: f64,
}

impl PenaltyConfig {
    pub fn from_log10(order: usize, log10_rho_u: f64, log10_rho_s: f64) -> Self {
        PenaltyConfig {
            order,
            rho_u: 10f64.powf(log10_rho_u),
            rho_s: 10f64.powf(log10_rho_s),
        }
    }

    pub fn unpenalized(order: usize) -> Self {
        PenaltyConfig {
            order,
            rho_u: 0.0,
            rho_s: 0.0,
        }
    }

    pub fn log10_rho_u(&self) -> f64 {
        self.rho_u.log10()
    }

    pub fn log10_rho_s(&self) -> f64 {
        self.rho_s.log10()
    }

    fn validate(&self) -> Result<()> {
        if self.order < 1 {
            return Err(Error::InvalidInput("penalty order must be at least 1".into()));
        }
        if !(self.rho_u.is_finite() && self.rho_s.is_finite()) || self.rho_u < 0.0 || self.rho_s < 0.0 {
            return Err(Error::InvalidInput(format!(
                "smoothing parameters must be finite and nonnegative, got ({}, {})",
                self.rho_u, self.rho_s
            )));
        }
        Ok(())
    }

    pub fn matrix(&self, c_u: usize, c_s: usize) -> Result<DMatrix<f64>> {
        self.validate()?;
        tensor_penalty(c_u, c_s, self.order, self.rho_u, self.rho_s)
    }

    pub(crate) fn operator(&self, c_u: usize, c_s: usize) -> Result<PenaltyOperator> {
        Ok(PenaltyOperator {
            matrix: self.matrix(c_u, c_s)?,
            du: if self.rho_u > 0.0 { Some(difference_matrix(c_u, self.order)?.values) } else { None },
            ds: if self.rho_s > 0.0 { Some(difference_matrix(c_s, self.order)?.values) } else { None },
            rho_u: self.rho_u,
            rho_s: self.rho_s,
            c_u,
            c_s,
        })
    }
}

/// The penalty matrix together with its difference factors. Large smoothing
/// parameters make `α'Pα` lose most of its digits to cancellation, so the
/// quadratic form is evaluated as `ρ_u‖Du A‖² + ρ_s‖A Ds'‖²` instead.
pub(crate) struct PenaltyOperator {
    pub matrix: DMatrix<f64>,
    du: Option<DMatrix<f64>>,
    ds: Option<DMatrix<f64>>,
    rho_u: f64,
    rho_s: f64,
    c_u: usize,
    c_s: usize,
}

impl PenaltyOperator {
    pub fn value(&self, alpha: &DVector<f64>) -> f64 {
        let a = DMatrix::from_column_slice(self.c_u, self.c_s, alpha.as_slice());
        let mut v = 0.0;
        if let Some(du) = &self.du {
            v += self.rho_u * (du * &a).norm_squared();
        }
        if let Some(ds) = &self.ds {
            v += self.rho_s * (&a * ds.transpose()).norm_squared();
        }
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitControl {
    pub max_iter: usize,
    /// Relative change in penalized deviance.
    pub dev_tol: f64,
    /// Penalized score norm relative to `‖B'y‖∞`.
    pub score_tol: f64,
}

impl Default for FitControl {
    fn default() -> Self {
        FitControl {
            max_iter: 50,
            dev_tol: 1e-8,
            score_tol: 1e-6,
        }
    }
}

/// Marginal knot vectors of the tensor-product basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorBases {
    pub u: KnotVector,
    pub s: KnotVector,
}

impl TensorBases {
    /// Bases spanning the grid from its first lower edge to its last upper
    /// edge, with `c_u` and `c_s` functions.
    pub fn for_grid(grid: &LexisGrid, c_u: usize, c_s: usize, degree: usize) -> Result<Self> {
        Ok(TensorBases {
            u: knots_for_basis_size(grid.u.lo, grid.u.hi(), c_u, degree)?,
            s: knots_for_basis_size(grid.s.lo, grid.s.hi(), c_s, degree)?,
        })
    }

    pub fn c_u(&self) -> usize {
        self.u.n_basis()
    }

    pub fn c_s(&self) -> usize {
        self.s.n_basis()
    }

    pub fn workspace(&self, u_points: &[f64], s_points: &[f64]) -> Result<ArrayModelWorkspace> {
        let bu = evaluate_basis(u_points, &self.u)?;
        let bs = evaluate_basis(s_points, &self.s)?;
        Ok(ArrayModelWorkspace::new(&bu, &bs))
    }

    pub fn grid_workspace(&self, grid: &LexisGrid) -> Result<ArrayModelWorkspace> {
        self.workspace(&grid.u.midpoints(), &grid.s.midpoints())
    }
}

/// A log-hazard surface `η(u, s) = Bu(u) A Bs(s)'`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HazardSurface {
    pub bases: TensorBases,
    /// `c_u x c_s` coefficient matrix.
    pub coefficients: DMatrix<f64>,
}

impl HazardSurface {
    pub fn c_u(&self) -> usize {
        self.bases.c_u()
    }

    pub fn c_s(&self) -> usize {
        self.bases.c_s()
    }

    /// `Bu(u) · A`, the coefficients of the `s`-profile at fixed `u`.
    pub fn s_profile(&self, u: f64) -> Result<SProfile<'_>> {
        let bu = self.bases.u.basis_row(u).map_err(|e| relabel(e, "u"))?;
        let a = &self.coefficients;
        let coef = (0..a.ncols())
            .map(|m| (0..a.nrows()).map(|l| bu[l] * a[(l, m)]).sum())
            .collect();
        Ok(SProfile {
            knots: &self.bases.s,
            coef,
            scratch: vec![0.0; self.bases.s.degree + 1],
        })
    }

    pub fn log_hazard(&self, u: f64, s: f64) -> Result<f64> {
        self.s_profile(u)?.log_hazard(s)
    }

    pub fn hazard(&self, u: f64, s: f64) -> Result<f64> {
        Ok(self.log_hazard(u, s)?.min(ETA_MAX).exp())
    }

    /// Row of the model matrix `Bs(s) ⊗ Bu(u)` at one point, as
    /// `(coefficient index, value)` pairs over the nonzeros.
    pub fn design_row(&self, u: f64, s: f64) -> Result<Vec<(usize, f64)>> {
        let ku = &self.bases.u;
        let ks = &self.bases.s;
        let mut bu = vec![0.0; ku.degree + 1];
        let mut bs = vec![0.0; ks.degree + 1];
        let fu = ku.basis_row_into(u, &mut bu).map_err(|e| relabel(e, "u"))?;
        let fs = ks.basis_row_into(s, &mut bs).map_err(|e| relabel(e, "s"))?;
        let cu = ku.n_basis();
        let mut out = Vec::with_capacity(bu.len() * bs.len());
        for (m, vs) in bs.iter().enumerate() {
            for (l, vu) in bu.iter().enumerate() {
                out.push(((fu + l) + cu * (fs + m), vu * vs));
            }
        }
        Ok(out)
    }

    pub fn contains(&self, u: f64, s: f64) -> bool {
        self.bases.u.contains(u) && self.bases.s.contains(s)
    }
}

pub(crate) fn relabel(e: Error, axis: &'static str) -> Error {
    match e {
        Error::OutOfDomain { value, lo, hi, .. } => Error::OutOfDomain { axis, value, lo, hi },
        other => other,
    }
}

/// The log-hazard as a function of `s` at a fixed `u`.
pub struct SProfile<'a> {
    knots: &'a KnotVector,
    coef: Vec<f64>,
    scratch: Vec<f64>,
}

impl SProfile<'_> {
    pub fn log_hazard(&mut self, s: f64) -> Result<f64> {
        let first = self.knots.basis_row_into(s, &mut self.scratch).map_err(|e| relabel(e, "s"))?;
        Ok(self
            .scratch
            .iter()
            .enumerate()
            .map(|(i, b)| b * self.coef[first + i])
            .sum())
    }

    pub fn hazard(&mut self, s: f64) -> Result<f64> {
        Ok(self.log_hazard(s)?.min(ETA_MAX).exp())
    }
}

#[derive(Debug, Clone)]
pub struct FittedHazard {
    pub cause: usize,
    pub surface: HazardSurface,
    pub penalty: PenaltyConfig,
    /// Fitted Poisson means `R ∘ exp(E)`, which are also the final weights.
    pub fitted_means: DMatrix<f64>,
    /// Fitted log-hazard at the bin midpoints.
    pub linear_predictor: DMatrix<f64>,
    pub deviance: f64,
    pub ed: f64,
    pub aic: f64,
    pub bic: f64,
    pub n_bin: usize,
    pub iterations: usize,
    pub converged: bool,
    /// Relative penalized score norm at the returned coefficients.
    pub score_norm: f64,
    /// Cholesky factor of `B'ŴB + P`.
    pub factor: Cholesky<f64, Dyn>,
    pub(crate) gram: DMatrix<f64>,
}

impl FittedHazard {
    pub fn n_coef(&self) -> usize {
        self.surface.c_u() * self.surface.c_s()
    }

    pub fn coefficient_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(self.surface.coefficients.as_slice())
    }
}

fn check_data(data: &BinnedData, cause: usize) -> Result<&DMatrix<f64>> {
    let y = data.events_for(cause)?;
    let r = &data.exposure;
    if y.shape() != r.shape() || r.shape() != (data.grid.n_u(), data.grid.n_s()) {
        return Err(Error::DimensionMismatch("events and exposure differ in shape".into()));
    }
    if r.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || y.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::InvalidInput("events and exposures must be finite and nonnegative".into()));
    }
    if !r.iter().any(|v| *v > 0.0) {
        return Err(Error::InvalidInput("no bin has positive exposure".into()));
    }
    let observed: f64 = y.iter().zip(r.iter()).filter(|(_, r)| **r > 0.0).map(|(y, _)| y).sum();
    if observed <= 0.0 {
        return Err(Error::NoEvents { cause });
    }
    Ok(y)
}

struct IwlsState {
    alpha: DVector<f64>,
    eta: DMatrix<f64>,
    mu: DMatrix<f64>,
    pdev: f64,
}

fn evaluate_state(
    ws: &ArrayModelWorkspace,
    alpha: DVector<f64>,
    y: &DMatrix<f64>,
    r: &DMatrix<f64>,
    pen: &PenaltyOperator,
) -> Result<IwlsState> {
    let a = DMatrix::from_column_slice(ws.c_u(), ws.c_s(), alpha.as_slice());
    let eta = ws.linear_predictor(&a)?;
    let mu = DMatrix::from_fn(eta.nrows(), eta.ncols(), |j, k| {
        if r[(j, k)] > 0.0 {
            r[(j, k)] * eta[(j, k)].min(ETA_MAX).exp()
        } else {
            0.0
        }
    });
    let dev = poisson_deviance(y.iter(), mu.iter(), |i| r.as_slice()[i] > 0.0);
    let pdev = dev + pen.value(&alpha);
    Ok(IwlsState { alpha, eta, mu, pdev })
}

fn score_norm(ws: &ArrayModelWorkspace, st: &IwlsState, y: &DMatrix<f64>, r: &DMatrix<f64>, pen: &DMatrix<f64>, scale: f64) -> Result<f64> {
    let resid = DMatrix::from_fn(y.nrows(), y.ncols(), |j, k| {
        if r[(j, k)] > 0.0 {
            y[(j, k)] - st.mu[(j, k)]
        } else {
            0.0
        }
    });
    let score = ws.weighted_rhs(&resid)? - pen * &st.alpha;
    Ok(inf_norm(score.as_slice()) / scale)
}

fn initial_coefficients(ws: &mut ArrayModelWorkspace, y: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<DVector<f64>> {
    let eta0 = y.zip_map(r, |y, r| ((y + 0.5) / (r + 1.0)).ln());
    let ones = DMatrix::from_element(ws.n_u(), ws.n_s(), 1.0);
    let gram = ws.weighted_inner(&ones)?;
    let rhs = ws.weighted_rhs(&eta0)?;
    match factor_spd(gram) {
        Ok(f) => Ok(f.solve(&rhs)),
        // rank-deficient basis: constant surface at the mean initial value
        Err(_) => Ok(DVector::from_element(ws.n_coef(), eta0.mean())),
    }
}

/// Penalized Poisson IWLS fit of one cause.
pub fn fit_hazard(
    data: &BinnedData,
    cause: usize,
    bases: &TensorBases,
    penalty: PenaltyConfig,
    ctrl: &FitControl,
) -> Result<FittedHazard> {
    let y = check_data(data, cause)?;
    let r = &data.exposure;
    let mut ws = bases.grid_workspace(&data.grid)?;
    let pen_op = penalty.operator(bases.c_u(), bases.c_s())?;
    let pen = pen_op.matrix.clone();

    let positive = DMatrix::from_fn(y.nrows(), y.ncols(), |j, k| if r[(j, k)] > 0.0 { y[(j, k)] } else { 0.0 });
    let scale = inf_norm(ws.weighted_rhs(&positive)?.as_slice()).max(f64::MIN_POSITIVE);

    let alpha0 = initial_coefficients(&mut ws, y, r)?;
    let mut state = evaluate_state(&ws, alpha0, y, r, &pen_op)?;
    let mut converged = false;
    let mut iterations = 0;
    let mut last_score = f64::INFINITY;

    for it in 1..=ctrl.max_iter {
        iterations = it;
        let v = DMatrix::from_fn(y.nrows(), y.ncols(), |j, k| {
            if r[(j, k)] > 0.0 {
                state.mu[(j, k)] * state.eta[(j, k)] + y[(j, k)] - state.mu[(j, k)]
            } else {
                0.0
            }
        });
        let gram = ws.weighted_inner(&state.mu)?;
        let factor = factor_spd(gram + &pen)?;
        let target = factor.solve(&ws.weighted_rhs(&v)?);

        let mut candidate = evaluate_state(&ws, target.clone(), y, r, &pen_op)?;
        let mut halvings = 0;
        // negated so that a NaN deviance keeps halving
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        while !(candidate.pdev <= state.pdev * (1.0 + 1e-12) + 1e-12) && halvings < 30 {
            halvings += 1;
            let t = 0.5f64.powi(halvings);
            let alpha = &state.alpha + (&target - &state.alpha) * t;
            candidate = evaluate_state(&ws, alpha, y, r, &pen_op)?;
        }
        let rel_change = (candidate.pdev - state.pdev).abs() / (candidate.pdev.abs() + 0.1);
        state = candidate;
        last_score = score_norm(&ws, &state, y, r, &pen, scale)?;
        if rel_change < ctrl.dev_tol && last_score < ctrl.score_tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NonConvergence {
            iterations,
            score_norm: last_score,
            last_coefficients: state.alpha.as_slice().to_vec(),
        });
    }

    let gram = ws.weighted_inner(&state.mu)?;
    let factor = factor_spd(gram.clone() + &pen)?;
    let p = gram.nrows();
    let ed = factor.solve(&gram).trace().clamp(0.0, p as f64);
    let n_bin = r.iter().filter(|v| **v > 0.0).count();
    let deviance = poisson_deviance(y.iter(), state.mu.iter(), |i| r.as_slice()[i] > 0.0).max(0.0);
    let (aic, bic) = criteria(deviance, ed, n_bin);
    let coefficients = DMatrix::from_column_slice(bases.c_u(), bases.c_s(), state.alpha.as_slice());
    Ok(FittedHazard {
        cause,
        surface: HazardSurface {
            bases: bases.clone(),
            coefficients,
        },
        penalty,
        fitted_means: state.mu,
        linear_predictor: state.eta,
        deviance,
        ed,
        aic,
        bic,
        n_bin,
        iterations,
        converged,
        score_norm: last_score,
        factor,
        gram,
    })
}

fn criteria(deviance: f64, ed: f64, n_bin: usize) -> (f64, f64) {
    (deviance + 2.0 * ed, deviance + (n_bin as f64).ln() * ed)
}

/// `trace{(B'ŴB + P)⁻¹ B'ŴB}` from the stored factorization.
pub fn effective_dimension(fit: &FittedHazard) -> Result<f64> {
    if !fit.converged {
        return Err(Error::InvalidInput("effective dimension needs a converged fit".into()));
    }
    let ed = fit.factor.solve(&fit.gram).trace();
    if !ed.is_finite() {
        return Err(Error::Singular("hat matrix trace is not finite".into()));
    }
    Ok(ed.clamp(0.0, fit.n_coef() as f64))
}

/// `(AIC, BIC)` with `n_bin` counting bins of positive exposure.
pub fn information_criteria(fit: &FittedHazard) -> (f64, f64) {
    criteria(fit.deviance, fit.ed, fit.n_bin)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    Aic,
    Bic,
}

impl Criterion {
    pub fn value(&self, fit: &FittedHazard) -> f64 {
        match self {
            Criterion::Aic => fit.aic,
            Criterion::Bic => fit.bic,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub log10_rho_u: (f64, f64),
    pub log10_rho_s: (f64, f64),
    /// Coarse grid spacing on the log10 scale.
    pub grid_step: f64,
    /// Pattern search stops once its step falls below half of this.
    pub resolution: f64,
    pub refine: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            log10_rho_u: (-1.0, 7.0),
            log10_rho_s: (-1.0, 7.0),
            grid_step: 1.0,
            resolution: 0.1,
            refine: true,
        }
    }
}

/// Evenly spaced values from `lo` to `hi` inclusive.
pub fn log_ladder(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    if hi <= lo || step <= 0.0 {
        return vec![lo];
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    (0..=n).map(|i| lo + i as f64 * step).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub log10_rho_u: f64,
    pub log10_rho_s: f64,
    /// `None` when the fit at this candidate failed.
    pub criterion: Option<f64>,
    pub ed: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SmoothingSelection {
    pub fit: FittedHazard,
    pub log10_rho_u: f64,
    pub log10_rho_s: f64,
    pub candidates: Vec<CandidateScore>,
}

/// Prefers the lower criterion; near-ties go to the smoother candidate.
pub(crate) fn better(a: (f64, f64, f64), b: (f64, f64, f64)) -> bool {
    let (ca, sa) = (a.0, a.1 + a.2);
    let (cb, sb) = (b.0, b.1 + b.2);
    let tol = 1e-10 * ca.abs().max(cb.abs()).max(1.0);
    if (ca - cb).abs() <= tol {
        sa > sb
    } else {
        ca < cb
    }
}

fn key(lu: f64, ls: f64) -> (i64, i64) {
    ((lu * 1e6).round() as i64, (ls * 1e6).round() as i64)
}

/// Coarse grid over `(log10 ρ_u, log10 ρ_s)` followed by a compass search
/// started at the grid optimum.
pub fn select_smoothing(
    data: &BinnedData,
    cause: usize,
    bases: &TensorBases,
    order: usize,
    criterion: Criterion,
    search: &SearchConfig,
    ctrl: &FitControl,
) -> Result<SmoothingSelection> {
    check_data(data, cause)?;
    let fit_at = |lu: f64, ls: f64| fit_hazard(data, cause, bases, PenaltyConfig::from_log10(order, lu, ls), ctrl).ok();

    let us = log_ladder(search.log10_rho_u.0, search.log10_rho_u.1, search.grid_step);
    let ss = log_ladder(search.log10_rho_s.0, search.log10_rho_s.1, search.grid_step);
    let points: Vec<(f64, f64)> = us.iter().flat_map(|&u| ss.iter().map(move |&s| (u, s))).collect();
    let fits: Vec<Option<FittedHazard>> = points.par_iter().map(|&(lu, ls)| fit_at(lu, ls)).collect();

    let mut candidates = Vec::new();
    let mut cache: HashMap<(i64, i64), Option<f64>> = HashMap::new();
    let mut best: Option<(f64, f64, FittedHazard)> = None;
    let consider = |best: &mut Option<(f64, f64, FittedHazard)>, lu: f64, ls: f64, fit: FittedHazard| {
        let c = criterion.value(&fit);
        let replace = match best {
            None => true,
            Some((bu, bs, bf)) => better((c, lu, ls), (criterion.value(bf), *bu, *bs)),
        };
        if replace {
            *best = Some((lu, ls, fit));
        }
    };
    for (&(lu, ls), fit) in points.iter().zip(fits) {
        let crit = fit.as_ref().map(|f| criterion.value(f));
        candidates.push(CandidateScore {
            log10_rho_u: lu,
            log10_rho_s: ls,
            criterion: crit,
            ed: fit.as_ref().map(|f| f.ed),
        });
        cache.insert(key(lu, ls), crit);
        if let Some(f) = fit {
            consider(&mut best, lu, ls, f);
        }
    }

    if search.refine && best.is_some() {
        let clamp_u = |x: f64| x.clamp(search.log10_rho_u.0, search.log10_rho_u.1);
        let clamp_s = |x: f64| x.clamp(search.log10_rho_s.0, search.log10_rho_s.1);
        let mut step = search.grid_step / 2.0;
        while step > search.resolution / 2.0 {
            let (cu, cs) = {
                let b = best.as_ref().unwrap();
                (b.0, b.1)
            };
            let neighbours: Vec<(f64, f64)> = [
                (clamp_u(cu + step), cs),
                (clamp_u(cu - step), cs),
                (cu, clamp_s(cs + step)),
                (cu, clamp_s(cs - step)),
            ]
            .into_iter()
            .filter(|&(u, s)| !cache.contains_key(&key(u, s)))
            .collect();
            let fits: Vec<Option<FittedHazard>> = neighbours.par_iter().map(|&(lu, ls)| fit_at(lu, ls)).collect();
            let before = key(cu, cs);
            for (&(lu, ls), fit) in neighbours.iter().zip(fits) {
                let crit = fit.as_ref().map(|f| criterion.value(f));
                candidates.push(CandidateScore {
                    log10_rho_u: lu,
                    log10_rho_s: ls,
                    criterion: crit,
                    ed: fit.as_ref().map(|f| f.ed),
                });
                cache.insert(key(lu, ls), crit);
                if let Some(f) = fit {
                    consider(&mut best, lu, ls, f);
                }
            }
            let after = best.as_ref().map(|b| key(b.0, b.1)).unwrap();
            if after == before {
                step /= 2.0;
            }
        }
    }

    match best {
        Some((lu, ls, fit)) => Ok(SmoothingSelection {
            fit,
            log10_rho_u: lu,
            log10_rho_s: ls,
            candidates,
        }),
        None => Err(Error::SearchExhausted {
            candidates: candidates.len(),
        }),
    }
}
