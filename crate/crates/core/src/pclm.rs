//! Ungrouping of a wide final age interval with the bivariate penalized
//! composite link model.
//!
//! Observed counts `Z` (`g x n_s`) are Poisson with means `Ψ = C_u Γ`, where
//! the latent fine-grid means are `Γ = exp(Bu Θ Bs')`. Grouping acts along
//! `u` only; along `s` the composition is the identity, which lets every
//! column be handled with its own small `g x c_u` block instead of the full
//! composed model matrix.

use log::warn;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glam::symmetrize;
use crate::lexis::{at_risk_counts, bin_records, BinnedData, IndividualRecord, LexisGrid, N_CAUSES};
use crate::linalg::{factor_spd, inf_norm, poisson_deviance};
use crate::smooth2d::{better, log_ladder, CandidateScore, FitControl, PenaltyConfig, PenaltyOperator, TensorBases, ETA_MAX};

/// Assignment of fine rows to observed rows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompositionSpec {
    /// `group_of[j]` is the observed row that fine row `j` contributes to.
    group_of: Vec<usize>,
    g: usize,
}

impl CompositionSpec {
    /// First `g − 1` fine rows observed singly, the remaining rows summed
    /// into observed row `g`. `g == n_u` is the identity.
    pub fn tail(g: usize, n_u: usize) -> Result<Self> {
        if g < 1 || g > n_u {
            return Err(Error::InvalidInput(format!(
                "need 1 <= g <= n_u for a grouped tail, got g={g}, n_u={n_u}"
            )));
        }
        Self::from_groups((0..n_u).map(|j| j.min(g - 1)).collect())
    }

    pub fn from_groups(group_of: Vec<usize>) -> Result<Self> {
        let g = group_of.iter().max().map_or(0, |m| m + 1);
        let mut seen = vec![false; g];
        for &grp in &group_of {
            seen[grp] = true;
        }
        if g == 0 || seen.iter().any(|s| !s) {
            return Err(Error::InvalidInput("composition leaves an observed row empty".into()));
        }
        Ok(CompositionSpec { group_of, g })
    }

    pub fn g(&self) -> usize {
        self.g
    }

    pub fn n_u(&self) -> usize {
        self.group_of.len()
    }

    pub fn group_of(&self, fine_row: usize) -> usize {
        self.group_of[fine_row]
    }

    /// First fine row of the last observed row.
    pub fn first_grouped_row(&self) -> usize {
        self.group_of.iter().position(|&grp| grp == self.g - 1).unwrap()
    }

    /// `C · M` for a fine-grid matrix `M`.
    pub fn compose(&self, fine: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.g, fine.ncols());
        for (j, &grp) in self.group_of.iter().enumerate() {
            for k in 0..fine.ncols() {
                out[(grp, k)] += fine[(j, k)];
            }
        }
        out
    }
}

pub fn composition_matrix(spec: &CompositionSpec) -> DMatrix<f64> {
    let mut c = DMatrix::zeros(spec.g, spec.n_u());
    for (j, &grp) in spec.group_of.iter().enumerate() {
        c[(grp, j)] = 1.0;
    }
    c
}

#[derive(Debug, Clone)]
pub struct PclmFit {
    /// Fitted fine-grid means `Γ̂`.
    pub gamma: DMatrix<f64>,
    /// Fitted grouped means `Ψ̂ = C Γ̂`.
    pub psi: DMatrix<f64>,
    /// Coefficients stored as `vec(Θ)`.
    pub theta: DVector<f64>,
    pub penalty: PenaltyConfig,
    pub deviance: f64,
    pub ed: f64,
    pub aic: f64,
    pub iterations: usize,
    pub score_norm: f64,
}

struct PclmModel<'a> {
    z: &'a DMatrix<f64>,
    spec: &'a CompositionSpec,
    bu: DMatrix<f64>,
    bs: DMatrix<f64>,
    pen: PenaltyOperator,
}

struct PclmState {
    theta: DVector<f64>,
    gamma: DMatrix<f64>,
    psi: DMatrix<f64>,
    pdev: f64,
}

impl PclmModel<'_> {
    fn c_u(&self) -> usize {
        self.bu.ncols()
    }

    fn c_s(&self) -> usize {
        self.bs.ncols()
    }

    fn state(&self, theta: DVector<f64>) -> PclmState {
        let a = DMatrix::from_column_slice(self.c_u(), self.c_s(), theta.as_slice());
        let gamma = (&self.bu * a * self.bs.transpose()).map(|e| e.min(ETA_MAX).exp());
        let psi = self.spec.compose(&gamma);
        let dev = poisson_deviance(self.z.iter(), psi.iter(), |_| true);
        let pdev = dev + self.pen.value(&theta);
        PclmState { theta, gamma, psi, pdev }
    }

    /// `C diag(γ[:, k]) Bu` for column `k`.
    fn column_block(&self, gamma: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
        let mut x = DMatrix::zeros(self.spec.g, self.c_u());
        for j in 0..self.bu.nrows() {
            let grp = self.spec.group_of(j);
            let gjk = gamma[(j, k)];
            for l in 0..self.c_u() {
                x[(grp, l)] += gjk * self.bu[(j, l)];
            }
        }
        x
    }

    /// Returns `X' Ψ⁻¹ X` and `X' v` with `X = ∂ψ/∂θ`.
    fn normal_blocks(&self, st: &PclmState, v: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
        let (cu, cs) = (self.c_u(), self.c_s());
        let p = cu * cs;
        let mut h = DMatrix::zeros(p, p);
        let mut rhs = DVector::zeros(p);
        for k in 0..self.bs.nrows() {
            let x = self.column_block(&st.gamma, k);
            let winv = DVector::from_fn(self.spec.g, |i, _| 1.0 / st.psi[(i, k)]);
            let xw = DMatrix::from_fn(x.nrows(), cu, |i, l| x[(i, l)] * winv[i]);
            let q = x.transpose() * &xw;
            let xv = x.transpose() * v.column(k);
            let nz: Vec<(usize, f64)> = (0..cs).map(|m| (m, self.bs[(k, m)])).filter(|(_, b)| *b != 0.0).collect();
            for &(m, bm) in &nz {
                for l in 0..cu {
                    rhs[l + cu * m] += bm * xv[l];
                }
                for &(mp, bmp) in &nz {
                    let w = bm * bmp;
                    for lp in 0..cu {
                        for l in 0..cu {
                            h[(l + cu * m, lp + cu * mp)] += w * q[(l, lp)];
                        }
                    }
                }
            }
        }
        symmetrize(&mut h);
        (h, rhs)
    }
}

/// Penalized composite-link fit for a fixed pair of smoothing parameters.
pub fn fit_pclm(
    z: &DMatrix<f64>,
    spec: &CompositionSpec,
    grid: &LexisGrid,
    bases: &TensorBases,
    penalty: PenaltyConfig,
    ctrl: &FitControl,
) -> Result<PclmFit> {
    if z.shape() != (spec.g(), grid.n_s()) {
        return Err(Error::DimensionMismatch(format!(
            "grouped counts are {}x{}, composition needs {}x{}",
            z.nrows(),
            z.ncols(),
            spec.g(),
            grid.n_s()
        )));
    }
    if spec.n_u() != grid.n_u() {
        return Err(Error::DimensionMismatch("composition and grid disagree on n_u".into()));
    }
    if z.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::InvalidInput("grouped counts must be finite and nonnegative".into()));
    }
    if z.sum() <= 0.0 {
        return Err(Error::InvalidInput("grouped counts are all zero".into()));
    }
    let ws = bases.grid_workspace(grid)?;
    let model = PclmModel {
        z,
        spec,
        bu: ws.bu().clone(),
        bs: ws.bs().clone(),
        pen: penalty.operator(bases.c_u(), bases.c_s())?,
    };

    let theta0 = initial_theta(&model, grid)?;
    let mut st = model.state(theta0);
    let scale_of = |st: &PclmState| {
        let ratio = DMatrix::from_fn(spec.g(), grid.n_s(), |i, k| z[(i, k)] / st.psi[(i, k)]);
        let (_, xr) = model.normal_blocks(st, &ratio);
        inf_norm(xr.as_slice()).max(f64::MIN_POSITIVE)
    };
    let score_of = |st: &PclmState| {
        let v = DMatrix::from_fn(spec.g(), grid.n_s(), |i, k| (z[(i, k)] - st.psi[(i, k)]) / st.psi[(i, k)]);
        let (_, xv) = model.normal_blocks(st, &v);
        inf_norm((xv - &model.pen.matrix * &st.theta).as_slice()) / scale_of(st)
    };

    let mut last_score = f64::INFINITY;
    for it in 1..=ctrl.max_iter {
        let v = DMatrix::from_fn(spec.g(), grid.n_s(), |i, k| (z[(i, k)] - st.psi[(i, k)]) / st.psi[(i, k)]);
        let (h, xv) = model.normal_blocks(&st, &v);
        let rhs = &h * &st.theta + xv;
        let target = factor_spd(h + &model.pen.matrix)?.solve(&rhs);

        let mut cand = model.state(target.clone());
        let mut halvings = 0;
        // negated so that a NaN deviance keeps halving
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        while !(cand.pdev <= st.pdev * (1.0 + 1e-12) + 1e-12) && halvings < 30 {
            halvings += 1;
            let t = 0.5f64.powi(halvings);
            cand = model.state(&st.theta + (&target - &st.theta) * t);
        }
        let rel = (cand.pdev - st.pdev).abs() / (cand.pdev.abs() + 0.1);
        st = cand;
        last_score = score_of(&st);
        if rel < ctrl.dev_tol && last_score < ctrl.score_tol {
            let unit = DMatrix::zeros(spec.g(), grid.n_s());
            let (h, _) = model.normal_blocks(&st, &unit);
            let factor = factor_spd(h.clone() + &model.pen.matrix)?;
            let p = h.nrows() as f64;
            let ed = factor.solve(&h).trace().clamp(0.0, p);
            let deviance = poisson_deviance(z.iter(), st.psi.iter(), |_| true).max(0.0);
            return Ok(PclmFit {
                gamma: st.gamma,
                psi: st.psi,
                theta: st.theta,
                penalty,
                deviance,
                ed,
                aic: deviance + 2.0 * ed,
                iterations: it,
                score_norm: last_score,
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: ctrl.max_iter,
        score_norm: last_score,
        last_coefficients: st.theta.as_slice().to_vec(),
    })
}

/// Spreads each grouped count evenly over its fine rows and projects the log
/// onto the basis by least squares.
fn initial_theta(model: &PclmModel<'_>, grid: &LexisGrid) -> Result<DVector<f64>> {
    let spec = model.spec;
    let mut sizes = vec![0.0; spec.g()];
    for j in 0..spec.n_u() {
        sizes[spec.group_of(j)] += 1.0;
    }
    let eta0 = DMatrix::from_fn(grid.n_u(), grid.n_s(), |j, k| {
        let grp = spec.group_of(j);
        ((model.z[(grp, k)] + 0.5) / sizes[grp]).ln()
    });
    let mut ws = crate::glam::ArrayModelWorkspace::from_matrices(model.bu.clone(), model.bs.clone());
    let gram = ws.weighted_inner(&DMatrix::from_element(grid.n_u(), grid.n_s(), 1.0))?;
    let rhs = ws.weighted_rhs(&eta0)?;
    Ok(match factor_spd(gram) {
        Ok(f) => f.solve(&rhs),
        Err(_) => DVector::from_element(ws.n_coef(), eta0.mean()),
    })
}

#[derive(Debug, Clone)]
pub struct PclmSelection {
    pub fit: PclmFit,
    pub log10_phi_u: f64,
    pub log10_phi_s: f64,
    pub candidates: Vec<CandidateScore>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhiGrid {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl Default for PhiGrid {
    fn default() -> Self {
        PhiGrid {
            lo: -1.0,
            hi: 2.0,
            step: 0.5,
        }
    }
}

impl PhiGrid {
    pub fn values(&self) -> Vec<f64> {
        log_ladder(self.lo, self.hi, self.step)
    }
}

/// Exhaustive AIC search over `log10 φ_u × log10 φ_s`.
pub fn select_pclm_smoothing(
    z: &DMatrix<f64>,
    spec: &CompositionSpec,
    grid: &LexisGrid,
    bases: &TensorBases,
    order: usize,
    phi_grid: &PhiGrid,
    ctrl: &FitControl,
) -> Result<PclmSelection> {
    let values = phi_grid.values();
    if values.is_empty() {
        return Err(Error::InvalidInput("empty smoothing grid".into()));
    }
    let points: Vec<(f64, f64)> = values.iter().flat_map(|&u| values.iter().map(move |&s| (u, s))).collect();
    let fits: Vec<Option<PclmFit>> = points
        .par_iter()
        .map(|&(lu, ls)| fit_pclm(z, spec, grid, bases, PenaltyConfig::from_log10(order, lu, ls), ctrl).ok())
        .collect();
    let mut candidates = Vec::with_capacity(points.len());
    let mut best: Option<(f64, f64, PclmFit)> = None;
    for (&(lu, ls), fit) in points.iter().zip(fits) {
        candidates.push(CandidateScore {
            log10_rho_u: lu,
            log10_rho_s: ls,
            criterion: fit.as_ref().map(|f| f.aic),
            ed: fit.as_ref().map(|f| f.ed),
        });
        if let Some(f) = fit {
            let replace = match &best {
                None => true,
                Some((bu, bs, bf)) => better((f.aic, lu, ls), (bf.aic, *bu, *bs)),
            };
            if replace {
                best = Some((lu, ls, f));
            }
        }
    }
    match best {
        Some((lu, ls, fit)) => Ok(PclmSelection {
            fit,
            log10_phi_u: lu,
            log10_phi_s: ls,
            candidates,
        }),
        None => Err(Error::SearchExhausted {
            candidates: candidates.len(),
        }),
    }
}

/// Fine-grid events with the grouped rows replaced by `Γ̂`.
pub fn ungroup_events(z: &DMatrix<f64>, spec: &CompositionSpec, fit: &PclmFit) -> DMatrix<f64> {
    let first = spec.first_grouped_row();
    DMatrix::from_fn(spec.n_u(), z.ncols(), |j, k| {
        if j < first {
            z[(spec.group_of(j), k)]
        } else {
            fit.gamma[(j, k)]
        }
    })
}

/// Exposure from numbers at risk with the half-bin rule: survivors of a bin
/// contribute `h_s`, exits contribute `h_s / 2`. `end_survivors[j]` is the
/// number still at risk at the end of the last bin. Returns the exposure and
/// the number of bins whose implied exits were negative and clamped.
pub fn ungroup_exposure(
    at_risk: &DMatrix<f64>,
    end_survivors: &[f64],
    events: &DMatrix<f64>,
    h_s: f64,
) -> Result<(DMatrix<f64>, usize)> {
    if end_survivors.len() != at_risk.nrows() || events.shape() != at_risk.shape() {
        return Err(Error::DimensionMismatch("at-risk, survivor and event shapes differ".into()));
    }
    let (nr, ns) = at_risk.shape();
    let mut clamped = 0;
    let mut out = DMatrix::zeros(nr, ns);
    for j in 0..nr {
        for k in 0..ns {
            let entering = at_risk[(j, k)];
            let next = if k + 1 < ns { at_risk[(j, k + 1)] } else { end_survivors[j] };
            let survivors = if next > entering {
                clamped += 1;
                entering
            } else {
                next
            };
            let exits = entering - survivors;
            let r = h_s * survivors + 0.5 * h_s * exits;
            out[(j, k)] = r.max(0.5 * h_s * events[(j, k)]);
        }
    }
    if clamped > 0 {
        warn!("{clamped} bin(s) with negative implied exits clamped to zero");
    }
    Ok((out, clamped))
}

/// Records binned with ages at or above `first_grouped_age` collapsed into a
/// single last row.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedCohort {
    pub grid: LexisGrid,
    pub composition: CompositionSpec,
    /// Grouped event counts `Z_ℓ`, index 0 for cause 1.
    pub events: Vec<DMatrix<f64>>,
    /// Exact exposure of the singly observed rows; the last row holds the
    /// grouped total, which is not used for ungrouping.
    pub exposure: DMatrix<f64>,
    /// Numbers at risk at the start of each s-bin.
    pub at_risk: DMatrix<f64>,
    pub end_survivors: Vec<f64>,
}

impl GroupedCohort {
    pub fn first_grouped_row(&self) -> usize {
        self.composition.first_grouped_row()
    }
}

/// Groups every record with `u >= first_grouped_age` into the last row. The
/// grid's upper `u` edge is the assumed closing age of that interval.
pub fn group_records(records: &[IndividualRecord], grid: &LexisGrid, first_grouped_age: f64) -> Result<GroupedCohort> {
    let pos = (first_grouped_age - grid.u.lo) / grid.u.width;
    if (pos - pos.round()).abs() > 1e-9 || pos.round() < 1.0 || pos.round() as usize > grid.n_u() - 1 {
        return Err(Error::InvalidInput(format!(
            "first grouped age {first_grouped_age} must be an interior u-edge of the grid"
        )));
    }
    let first_row = pos.round() as usize;
    let spec = CompositionSpec::tail(first_row + 1, grid.n_u())?;
    // exact ages inside the grouped interval are unknown
    let relabelled: Vec<IndividualRecord> = records
        .iter()
        .map(|r| {
            let mut r = r.clone();
            if r.u >= first_grouped_age - 1e-9 * grid.u.width && r.u <= grid.u.hi() + 1e-9 * grid.u.width {
                r.u = first_grouped_age;
            }
            r
        })
        .collect();
    let fine = bin_records(&relabelled, grid)?;
    let ar = at_risk_counts(&relabelled, grid)?;
    let survivors = DMatrix::from_column_slice(grid.n_u(), 1, &ar.end_survivors);
    Ok(GroupedCohort {
        grid: grid.clone(),
        events: fine.events.iter().map(|e| spec.compose(e)).collect(),
        exposure: spec.compose(&fine.exposure),
        at_risk: spec.compose(&ar.entering),
        end_survivors: spec.compose(&survivors).column(0).iter().copied().collect(),
        composition: spec,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UngroupSettings {
    pub c_u: usize,
    pub c_s: usize,
    pub degree: usize,
    pub order: usize,
    pub phi_grid: PhiGrid,
    pub control: FitControl,
}

#[derive(Debug, Clone)]
pub struct UngroupOutcome {
    pub data: BinnedData,
    /// Per cause; `None` when the grouped row had no events at all.
    pub event_fits: Vec<Option<PclmSelection>>,
    pub at_risk_fit: Option<PclmSelection>,
    /// Per cause, `max_k |Σ_tail Γ̂[·, k] − z_gk|`.
    pub max_column_discrepancy: Vec<f64>,
    pub clamped_bins: usize,
}

/// Replaces the grouped interval by PCLM estimates of events and of the
/// numbers at risk, then rebuilds exposures with the half-bin rule.
pub fn ungroup_cohort(cohort: &GroupedCohort, settings: &UngroupSettings) -> Result<UngroupOutcome> {
    let grid = &cohort.grid;
    let spec = &cohort.composition;
    let bases = TensorBases::for_grid(grid, settings.c_u, settings.c_s, settings.degree)?;
    let first = spec.first_grouped_row();
    let g = spec.g();
    let n_tail = grid.n_u() - first;
    let select = |z: &DMatrix<f64>| -> Result<Option<PclmSelection>> {
        if z.row(g - 1).iter().all(|v| *v == 0.0) {
            return Ok(None);
        }
        select_pclm_smoothing(z, spec, grid, &bases, settings.order, &settings.phi_grid, &settings.control).map(Some)
    };

    let mut events = Vec::with_capacity(N_CAUSES);
    let mut event_fits = Vec::with_capacity(N_CAUSES);
    let mut discrepancy = Vec::with_capacity(N_CAUSES);
    for z in &cohort.events {
        let sel = select(z)?;
        let fine = match &sel {
            Some(s) => ungroup_events(z, spec, &s.fit),
            None => DMatrix::from_fn(grid.n_u(), grid.n_s(), |j, k| if j < first { z[(j, k)] } else { 0.0 }),
        };
        let worst = (0..grid.n_s())
            .map(|k| (fine.rows(first, n_tail).column(k).sum() - z[(g - 1, k)]).abs())
            .fold(0.0, f64::max);
        events.push(fine);
        event_fits.push(sel);
        discrepancy.push(worst);
    }

    let at_risk_fit = select(&cohort.at_risk)?;
    let mut exposure = DMatrix::zeros(grid.n_u(), grid.n_s());
    for j in 0..first {
        for k in 0..grid.n_s() {
            exposure[(j, k)] = cohort.exposure[(j, k)];
        }
    }
    let mut clamped = 0;
    if let Some(sel) = &at_risk_fit {
        let tail_at_risk = sel.fit.gamma.rows(first, n_tail).into_owned();
        let last = grid.n_s() - 1;
        let last_total: f64 = tail_at_risk.column(last).sum();
        let grouped_survivors = cohort.end_survivors[g - 1];
        let survivors: Vec<f64> = (0..n_tail)
            .map(|j| {
                if last_total > 0.0 {
                    grouped_survivors * tail_at_risk[(j, last)] / last_total
                } else {
                    0.0
                }
            })
            .collect();
        let mut tail_events = DMatrix::zeros(n_tail, grid.n_s());
        for e in &events {
            tail_events += e.rows(first, n_tail);
        }
        let (tail_exposure, c) = ungroup_exposure(&tail_at_risk, &survivors, &tail_events, grid.s.width)?;
        clamped = c;
        exposure.rows_mut(first, n_tail).copy_from(&tail_exposure);
    }

    Ok(UngroupOutcome {
        data: BinnedData {
            grid: grid.clone(),
            events,
            exposure,
        },
        event_fits,
        at_risk_fit,
        max_column_discrepancy: discrepancy,
        clamped_bins: clamped,
    })
}
