//! Fitted hazards at arbitrary points, and the derived cumulative hazards,
//! overall survival and cumulative incidence functions.
//!
//! All integrals over `s` use a left rectangle rule with nodes `kΔ`,
//! `k = 0..N(s)`, where `N(s)` is the number of nodes strictly below `s`;
//! `s = 0` gives an empty sum. Survival inside the incidence sum is taken at
//! the same nodes, so one pass over the nodes yields every quantity.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::basis::evaluate_basis;
use crate::error::{Error, Result};
use crate::lexis::{BinnedData, LexisGrid, N_CAUSES};
use crate::smooth2d::{relabel, HazardSurface, ETA_MAX};

const NODE_TOL: f64 = 1e-9;

/// Number of quadrature nodes `kΔ` with `kΔ < s`.
pub fn node_count(s: f64, delta: f64) -> Result<usize> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::InvalidInput(format!("quadrature step must be positive, got {delta}")));
    }
    if !(s >= 0.0 && s.is_finite()) {
        return Err(Error::InvalidInput(format!("time since diagnosis must be nonnegative, got {s}")));
    }
    Ok((s / delta - NODE_TOL).ceil().max(0.0) as usize)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coordinates {
    /// Age at diagnosis and time since diagnosis.
    Us,
    /// Attained age `t = u + s` and time since diagnosis.
    Ts,
}

impl Coordinates {
    pub fn first_axis_name(&self) -> &'static str {
        match self {
            Coordinates::Us => "u",
            Coordinates::Ts => "t",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalGrid {
    pub u_points: Vec<f64>,
    pub s_points: Vec<f64>,
    pub delta: f64,
}

impl EvalGrid {
    pub fn new(u_points: Vec<f64>, s_points: Vec<f64>, delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::InvalidInput(format!("quadrature step must be positive, got {delta}")));
        }
        if u_points.is_empty() || s_points.is_empty() {
            return Err(Error::InvalidInput("evaluation grid is empty".into()));
        }
        Ok(EvalGrid { u_points, s_points, delta })
    }

    /// `u` at bin midpoints, `s` at bin edges, `Δ = h_s / 10` unless given.
    pub fn for_lexis(grid: &LexisGrid, delta: Option<f64>) -> Result<Self> {
        Self::new(grid.u.midpoints(), grid.s.edges(), delta.unwrap_or(grid.s.width / 10.0))
    }
}

/// `exp(Bu(u) A Bs(s)')` over a grid of points.
pub fn evaluate_hazard(surface: &HazardSurface, u_points: &[f64], s_points: &[f64]) -> Result<DMatrix<f64>> {
    Ok(evaluate_log_hazard(surface, u_points, s_points)?.map(|e| e.min(ETA_MAX).exp()))
}

pub fn evaluate_log_hazard(surface: &HazardSurface, u_points: &[f64], s_points: &[f64]) -> Result<DMatrix<f64>> {
    let bu = evaluate_basis(u_points, &surface.bases.u).map_err(|e| relabel(e, "u"))?;
    let bs = evaluate_basis(s_points, &surface.bases.s).map_err(|e| relabel(e, "s"))?;
    Ok(&bu.values * &surface.coefficients * bs.values.transpose())
}

pub fn cumulative_hazard(surface: &HazardSurface, u: f64, s: f64, delta: f64) -> Result<f64> {
    let n = node_count(s, delta)?;
    let mut profile = surface.s_profile(u)?;
    let mut sum = 0.0;
    for k in 0..n {
        sum += profile.hazard(k as f64 * delta)?;
    }
    Ok(sum * delta)
}

pub fn overall_survival(surfaces: [&HazardSurface; N_CAUSES], u: f64, s: f64, delta: f64) -> Result<f64> {
    Ok(integrate_point(surfaces, u, s, delta)?.survival)
}

/// `Ĭ_cause(u, s)`, with `cause` 1 or 2.
pub fn cumulative_incidence(surfaces: [&HazardSurface; N_CAUSES], cause: usize, u: f64, s: f64, delta: f64) -> Result<f64> {
    if !(1..=N_CAUSES).contains(&cause) {
        return Err(Error::InvalidInput(format!("cause must be 1 or 2, got {cause}")));
    }
    Ok(integrate_point(surfaces, u, s, delta)?.cif[cause - 1])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointCurves {
    pub cumhaz: [f64; N_CAUSES],
    pub survival: f64,
    pub cif: [f64; N_CAUSES],
}

pub fn integrate_point(surfaces: [&HazardSurface; N_CAUSES], u: f64, s: f64, delta: f64) -> Result<PointCurves> {
    let n = node_count(s, delta)?;
    let mut profiles = [surfaces[0].s_profile(u)?, surfaces[1].s_profile(u)?];
    let mut cum = [0.0; N_CAUSES];
    let mut cif = [0.0; N_CAUSES];
    for k in 0..n {
        let node = k as f64 * delta;
        let surv = (-(cum[0] + cum[1]) * delta).exp();
        for c in 0..N_CAUSES {
            let h = profiles[c].hazard(node)?;
            cif[c] += h * surv;
            cum[c] += h;
        }
    }
    Ok(PointCurves {
        cumhaz: [cum[0] * delta, cum[1] * delta],
        survival: (-(cum[0] + cum[1]) * delta).exp(),
        cif: [cif[0] * delta, cif[1] * delta],
    })
}

/// Cumulative quantities for one set of coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct Curves {
    pub cumhaz: [DMatrix<f64>; N_CAUSES],
    pub survival: DMatrix<f64>,
    pub cif: [DMatrix<f64>; N_CAUSES],
}

#[derive(Debug, Clone)]
enum Layout {
    /// Every row reads the same node counts, one per output column.
    Grid(Vec<usize>),
    /// Row `i` reads a single node count, giving one output column.
    Points(Vec<usize>),
}

/// Basis rows at the evaluation ages and at the quadrature nodes, fixed
/// across coefficient draws.
#[derive(Debug, Clone)]
pub struct QuadraturePlan {
    delta: f64,
    bu: [DMatrix<f64>; N_CAUSES],
    bs_nodes: [DMatrix<f64>; N_CAUSES],
    layout: Layout,
}

impl QuadraturePlan {
    fn build(surfaces: [&HazardSurface; N_CAUSES], rows_u: &[f64], max_s: f64, delta: f64, layout: Layout) -> Result<Self> {
        let n_nodes = node_count(max_s, delta)?;
        let nodes: Vec<f64> = (0..n_nodes).map(|k| k as f64 * delta).collect();
        let mut bu = Vec::with_capacity(N_CAUSES);
        let mut bs = Vec::with_capacity(N_CAUSES);
        for surf in surfaces {
            if surf.bases.s.boundary_lo > NODE_TOL * surf.bases.s.spacing() {
                return Err(Error::InvalidInput(format!(
                    "cumulative quantities need the s-domain to start at 0, it starts at {}",
                    surf.bases.s.boundary_lo
                )));
            }
            bu.push(evaluate_basis(rows_u, &surf.bases.u).map_err(|e| relabel(e, "u"))?.values);
            let b = if nodes.is_empty() {
                DMatrix::zeros(0, surf.c_s())
            } else {
                evaluate_basis(&nodes, &surf.bases.s).map_err(|e| relabel(e, "s"))?.values
            };
            bs.push(b);
        }
        let [bu1, bu2]: [DMatrix<f64>; 2] = bu.try_into().unwrap();
        let [bs1, bs2]: [DMatrix<f64>; 2] = bs.try_into().unwrap();
        Ok(QuadraturePlan {
            delta,
            bu: [bu1, bu2],
            bs_nodes: [bs1, bs2],
            layout,
        })
    }

    /// Plan for the full grid `u_points × s_points`.
    pub fn for_grid(surfaces: [&HazardSurface; N_CAUSES], grid: &EvalGrid) -> Result<Self> {
        let counts = grid.s_points.iter().map(|&s| node_count(s, grid.delta)).collect::<Result<Vec<_>>>()?;
        let max_s = grid.s_points.iter().copied().fold(0.0, f64::max);
        for &s in &grid.s_points {
            check_s(surfaces, s)?;
        }
        Self::build(surfaces, &grid.u_points, max_s, grid.delta, Layout::Grid(counts))
    }

    /// Plan for scattered `(u, s)` points; outputs have one column.
    pub fn for_points(surfaces: [&HazardSurface; N_CAUSES], points: &[(f64, f64)], delta: f64) -> Result<Self> {
        let counts = points.iter().map(|&(_, s)| node_count(s, delta)).collect::<Result<Vec<_>>>()?;
        let u: Vec<f64> = points.iter().map(|p| p.0).collect();
        let max_s = points.iter().map(|p| p.1).fold(0.0, f64::max);
        for &(_, s) in points {
            check_s(surfaces, s)?;
        }
        Self::build(surfaces, &u, max_s, delta, Layout::Points(counts))
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn output_shape(&self) -> (usize, usize) {
        let rows = self.bu[0].nrows();
        match &self.layout {
            Layout::Grid(c) => (rows, c.len()),
            Layout::Points(_) => (rows, 1),
        }
    }

    /// Quadrature for coefficient matrices `A_1`, `A_2`.
    pub fn integrate(&self, coefficients: [&DMatrix<f64>; N_CAUSES]) -> Curves {
        let rows = self.bu[0].nrows();
        let n_nodes = self.bs_nodes[0].nrows();
        let hz: Vec<DMatrix<f64>> = (0..N_CAUSES)
            .map(|c| (&self.bu[c] * coefficients[c] * self.bs_nodes[c].transpose()).map(|e| e.min(ETA_MAX).exp()))
            .collect();
        // running sums at node k cover nodes 0..k
        let mut cum: [DMatrix<f64>; N_CAUSES] = [DMatrix::zeros(rows, n_nodes + 1), DMatrix::zeros(rows, n_nodes + 1)];
        let mut inc: [DMatrix<f64>; N_CAUSES] = [DMatrix::zeros(rows, n_nodes + 1), DMatrix::zeros(rows, n_nodes + 1)];
        let d = self.delta;
        for i in 0..rows {
            for k in 0..n_nodes {
                let surv = (-(cum[0][(i, k)] + cum[1][(i, k)]) * d).exp();
                for c in 0..N_CAUSES {
                    let h = hz[c][(i, k)];
                    cum[c][(i, k + 1)] = cum[c][(i, k)] + h;
                    inc[c][(i, k + 1)] = inc[c][(i, k)] + h * surv;
                }
            }
        }
        let (_, n_out) = self.output_shape();
        let pick = |m: &DMatrix<f64>| -> DMatrix<f64> {
            match &self.layout {
                Layout::Grid(counts) => DMatrix::from_fn(rows, n_out, |i, j| m[(i, counts[j])] * d),
                Layout::Points(counts) => DMatrix::from_fn(rows, 1, |i, _| m[(i, counts[i])] * d),
            }
        };
        let cumhaz = [pick(&cum[0]), pick(&cum[1])];
        let survival = cumhaz[0].zip_map(&cumhaz[1], |a, b| (-(a + b)).exp());
        Curves {
            cif: [pick(&inc[0]), pick(&inc[1])],
            survival,
            cumhaz,
        }
    }
}

fn check_s(surfaces: [&HazardSurface; N_CAUSES], s: f64) -> Result<()> {
    for surf in surfaces {
        if !surf.bases.s.contains(s) {
            return Err(Error::OutOfDomain {
                axis: "s",
                value: s,
                lo: surf.bases.s.boundary_lo,
                hi: surf.bases.s.boundary_hi,
            });
        }
    }
    Ok(())
}

/// Hazards, cumulative hazards, survival and incidence over a grid, indexed
/// `[first axis, s]`.
#[derive(Debug, Clone)]
pub struct Surfaces {
    pub coords: Coordinates,
    /// `u` for [`Coordinates::Us`], `t` for [`Coordinates::Ts`].
    pub first_axis: Vec<f64>,
    pub s_points: Vec<f64>,
    pub delta: f64,
    pub hazard: [DMatrix<f64>; N_CAUSES],
    pub cumhaz: [DMatrix<f64>; N_CAUSES],
    pub survival: DMatrix<f64>,
    pub cif: [DMatrix<f64>; N_CAUSES],
}

impl Surfaces {
    /// `max |S + I_1 + I_2 − 1|`.
    pub fn conservation_error(&self) -> f64 {
        let total = &self.survival + &self.cif[0] + &self.cif[1];
        total.iter().fold(0.0, |m, v| m.max((v - 1.0).abs()))
    }
}

pub fn compute_surfaces(surfaces: [&HazardSurface; N_CAUSES], grid: &EvalGrid) -> Result<Surfaces> {
    let plan = QuadraturePlan::for_grid(surfaces, grid)?;
    let curves = plan.integrate([&surfaces[0].coefficients, &surfaces[1].coefficients]);
    Ok(Surfaces {
        coords: Coordinates::Us,
        first_axis: grid.u_points.clone(),
        s_points: grid.s_points.clone(),
        delta: grid.delta,
        hazard: [
            evaluate_hazard(surfaces[0], &grid.u_points, &grid.s_points)?,
            evaluate_hazard(surfaces[1], &grid.u_points, &grid.s_points)?,
        ],
        cumhaz: curves.cumhaz,
        survival: curves.survival,
        cif: curves.cif,
    })
}

/// Converts attained-age points `(t, s)` into `(u, s) = (t − s, s)`.
pub fn age_points_to_us(points: &[(f64, f64)]) -> Result<Vec<(f64, f64)>> {
    points
        .iter()
        .map(|&(t, s)| {
            if t <= s {
                Err(Error::InvalidInput(format!("attained age {t} must exceed time since diagnosis {s}")))
            } else {
                Ok((t - s, s))
            }
        })
        .collect()
}

/// The same quantities over attained age `t × s`; each cell re-evaluates the
/// bases at `u = t − s`.
pub fn compute_surfaces_age(surfaces: [&HazardSurface; N_CAUSES], t_points: &[f64], s_points: &[f64], delta: f64) -> Result<Surfaces> {
    let ts: Vec<(f64, f64)> = t_points
        .iter()
        .flat_map(|&t| s_points.iter().map(move |&s| (t, s)))
        .collect();
    let us = age_points_to_us(&ts)?;
    let plan = QuadraturePlan::for_points(surfaces, &us, delta)?;
    let curves = plan.integrate([&surfaces[0].coefficients, &surfaces[1].coefficients]);
    let (nt, ns) = (t_points.len(), s_points.len());
    let reshape = |col: &DMatrix<f64>| DMatrix::from_fn(nt, ns, |i, j| col[(i * ns + j, 0)]);
    let mut hazard = Vec::with_capacity(N_CAUSES);
    for surf in surfaces {
        let values = us.iter().map(|&(u, s)| surf.hazard(u, s)).collect::<Result<Vec<_>>>()?;
        hazard.push(DMatrix::from_fn(nt, ns, |i, j| values[i * ns + j]));
    }
    Ok(Surfaces {
        coords: Coordinates::Ts,
        first_axis: t_points.to_vec(),
        s_points: s_points.to_vec(),
        delta,
        hazard: [hazard[0].clone(), hazard[1].clone()],
        cumhaz: [reshape(&curves.cumhaz[0]), reshape(&curves.cumhaz[1])],
        survival: reshape(&curves.survival),
        cif: [reshape(&curves.cif[0]), reshape(&curves.cif[1])],
    })
}

/// Convex hull of the corners of all bins with positive exposure, used to
/// flag evaluation points that the data do not support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportHull {
    /// Counter-clockwise vertices in `(u, s)`.
    pub vertices: Vec<(f64, f64)>,
}

fn cross(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

impl SupportHull {
    pub fn from_points(mut pts: Vec<(f64, f64)>) -> Self {
        pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        pts.dedup();
        if pts.len() < 3 {
            return SupportHull { vertices: pts };
        }
        // Andrew's monotone chain
        let mut lower: Vec<(f64, f64)> = Vec::new();
        for &p in &pts {
            while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
                lower.pop();
            }
            lower.push(p);
        }
        let mut upper: Vec<(f64, f64)> = Vec::new();
        for &p in pts.iter().rev() {
            while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
                upper.pop();
            }
            upper.push(p);
        }
        lower.pop();
        upper.pop();
        lower.extend(upper);
        SupportHull { vertices: lower }
    }

    pub fn from_data(data: &BinnedData) -> Self {
        let g = &data.grid;
        let mut pts = Vec::new();
        for j in 0..g.n_u() {
            for k in 0..g.n_s() {
                if data.exposure[(j, k)] > 0.0 {
                    for (dj, dk) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                        pts.push((g.u.edge(j + dj), g.s.edge(k + dk)));
                    }
                }
            }
        }
        Self::from_points(pts)
    }

    pub fn contains(&self, u: f64, s: f64) -> bool {
        let v = &self.vertices;
        let scale = v
            .iter()
            .fold(1.0f64, |m, p| m.max(p.0.abs()).max(p.1.abs()));
        let tol = 1e-9 * scale * scale;
        match v.len() {
            0 => false,
            1 => (v[0].0 - u).abs() <= 1e-9 * scale && (v[0].1 - s).abs() <= 1e-9 * scale,
            2 => {
                let on_line = cross(v[0], v[1], (u, s)).abs() <= tol;
                let within = (u - v[0].0) * (u - v[1].0) <= tol && (s - v[0].1) * (s - v[1].1) <= tol;
                on_line && within
            }
            n => (0..n).all(|i| cross(v[i], v[(i + 1) % n], (u, s)) >= -tol),
        }
    }

    /// `true` where a grid point lies outside the hull.
    pub fn extrapolation_mask(&self, u_points: &[f64], s_points: &[f64]) -> Vec<Vec<bool>> {
        u_points
            .iter()
            .map(|&u| s_points.iter().map(|&s| !self.contains(u, s)).collect())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::knots_for_basis_size;
    use crate::lexis::build_grid;
    use crate::smooth2d::TensorBases;
    use proptest::prelude::*;

    fn constant_surface(rate: f64) -> HazardSurface {
        let grid = build_grid(50.0, 100.0, 1.0, 0.0, 10.5, 0.5).unwrap();
        let bases = TensorBases::for_grid(&grid, 16, 10, 3).unwrap();
        HazardSurface {
            coefficients: DMatrix::from_element(16, 10, rate.ln()),
            bases,
        }
    }

    /// Log-hazard `a + b·s` on a small basis, exact because B-splines
    /// reproduce linear functions.
    fn linear_surface(a: f64, b: f64) -> HazardSurface {
        let bases = TensorBases {
            u: knots_for_basis_size(50.0, 100.0, 5, 3).unwrap(),
            s: knots_for_basis_size(0.0, 10.0, 6, 3).unwrap(),
        };
        let ks = &bases.s;
        // Greville abscissae
        let coef_s: Vec<f64> = (0..6)
            .map(|m| a + b * (1..=3).map(|i| ks.knots[m + i]).sum::<f64>() / 3.0)
            .collect();
        HazardSurface {
            coefficients: DMatrix::from_fn(5, 6, |_, m| coef_s[m]),
            bases,
        }
    }

    #[test]
    fn node_counts() {
        assert_eq!(node_count(0.0, 0.05).unwrap(), 0);
        assert_eq!(node_count(10.0, 0.05).unwrap(), 200);
        assert_eq!(node_count(0.5, 0.1).unwrap(), 5);
        assert_eq!(node_count(0.51, 0.1).unwrap(), 6);
        assert!(node_count(1.0, 0.0).is_err());
        assert!(node_count(-1.0, 0.1).is_err());
    }

    #[test]
    fn zero_coefficients_give_unit_hazard() {
        let mut surf = constant_surface(1.0);
        surf.coefficients.fill(0.0);
        let h = evaluate_hazard(&surf, &[50.0, 75.3, 100.0], &[0.0, 3.3, 10.5]).unwrap();
        assert!(h.iter().all(|v| (v - 1.0).abs() < 1e-14));
    }

    #[test]
    fn off_grid_point_matches_double_sum() {
        let grid = build_grid(50.0, 100.0, 1.0, 0.0, 10.5, 0.5).unwrap();
        let bases = TensorBases::for_grid(&grid, 16, 10, 3).unwrap();
        let surf = HazardSurface {
            coefficients: DMatrix::from_fn(16, 10, |l, m| ((l * 7 + m * 3) % 11) as f64 * 0.1 - 0.5),
            bases,
        };
        for &(u, s) in &[(61.37, 2.21), (50.0, 0.0), (99.99, 10.5)] {
            let bu = surf.bases.u.basis_row(u).unwrap();
            let bs = surf.bases.s.basis_row(s).unwrap();
            let mut naive = 0.0;
            for (l, bl) in bu.iter().enumerate() {
                for (m, bm) in bs.iter().enumerate() {
                    naive += bl * bm * surf.coefficients[(l, m)];
                }
            }
            let got = evaluate_log_hazard(&surf, &[u], &[s]).unwrap()[(0, 0)];
            assert!((got - naive).abs() < 1e-12);
            assert!((surf.log_hazard(u, s).unwrap() - naive).abs() < 1e-12);
        }
        assert!(matches!(evaluate_hazard(&surf, &[49.0], &[1.0]), Err(Error::OutOfDomain { axis: "u", .. })));
        assert!(matches!(evaluate_hazard(&surf, &[60.0], &[11.0]), Err(Error::OutOfDomain { axis: "s", .. })));
    }

    #[test]
    fn constant_hazard_closed_forms() {
        let s1 = constant_surface(0.1);
        let s2 = constant_surface(0.05);
        let delta = 0.01;
        let ch = cumulative_hazard(&constant_surface(0.2), 70.0, 5.0, delta).unwrap();
        assert!((ch - 1.0).abs() <= 0.01 * 0.2);
        assert_eq!(cumulative_hazard(&s1, 70.0, 0.0, delta).unwrap(), 0.0);
        let s = overall_survival([&s1, &constant_surface(0.1)], 70.0, 1.0, delta).unwrap();
        assert!((s - (-0.2f64).exp()).abs() < 1e-9);
        let i1 = cumulative_incidence([&s1, &s2], 1, 70.0, 10.0, delta).unwrap();
        let exact = 2.0 / 3.0 * (1.0 - (-1.5f64).exp());
        assert!((exact - 0.5179).abs() < 1e-4);
        assert!((i1 - exact).abs() <= 2.0 * delta, "{i1} vs {exact}");
        assert_eq!(cumulative_incidence([&s1, &s2], 2, 70.0, 0.0, delta).unwrap(), 0.0);
        assert!(cumulative_incidence([&s1, &s2], 3, 70.0, 1.0, delta).is_err());
        let mut zero = constant_surface(1.0);
        zero.coefficients.fill(-800.0);
        assert_eq!(overall_survival([&zero, &zero], 70.0, 10.0, delta).unwrap(), 1.0);
    }

    #[test]
    fn linear_log_hazard_matches_antiderivative() {
        let (a, b) = (-2.0, 0.1);
        let surf = linear_surface(a, b);
        assert!((surf.log_hazard(70.0, 3.7).unwrap() - (a + b * 3.7)).abs() < 1e-12);
        let exact = |s: f64| a.exp() * ((b * s).exp() - 1.0) / b;
        let err = |delta: f64| (cumulative_hazard(&surf, 70.0, 8.0, delta).unwrap() - exact(8.0)).abs();
        let (e1, e2) = (err(0.02), err(0.01));
        assert!(e1 < 0.02 * a.exp() * (0.8f64).exp() * 8.0);
        assert!((e1 / e2 - 2.0).abs() < 0.3, "ratio {}", e1 / e2);
    }

    #[test]
    fn grid_plan_agrees_with_pointwise_sums() {
        let s1 = linear_surface(-2.0, 0.1);
        let s2 = linear_surface(-3.0, -0.05);
        let grid = EvalGrid::new(vec![55.0, 80.0], vec![0.0, 0.37, 5.0, 10.0], 0.05).unwrap();
        let surf = compute_surfaces([&s1, &s2], &grid).unwrap();
        for (i, &u) in grid.u_points.iter().enumerate() {
            for (j, &s) in grid.s_points.iter().enumerate() {
                let p = integrate_point([&s1, &s2], u, s, 0.05).unwrap();
                assert!((surf.cif[0][(i, j)] - p.cif[0]).abs() < 1e-13);
                assert!((surf.cif[1][(i, j)] - p.cif[1]).abs() < 1e-13);
                assert!((surf.survival[(i, j)] - p.survival).abs() < 1e-13);
                assert!((surf.cumhaz[0][(i, j)] - cumulative_hazard(&s1, u, s, 0.05).unwrap()).abs() < 1e-13);
            }
        }
        assert!(surf.conservation_error() < 3.0 * 0.05 * (-1.0f64).exp());
    }

    #[test]
    fn halving_step_halves_conservation_error() {
        let s1 = linear_surface(-1.5, 0.05);
        let s2 = linear_surface(-2.5, 0.0);
        let worst = |delta: f64| {
            let g = EvalGrid::new(vec![60.0, 90.0], (0..=20).map(|k| k as f64 * 0.5).collect(), delta).unwrap();
            compute_surfaces([&s1, &s2], &g).unwrap().conservation_error()
        };
        let (e1, e2) = (worst(0.05), worst(0.025));
        let ratio = e1 / e2;
        assert!((1.5..=2.5).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn age_coordinates() {
        let s1 = linear_surface(-2.0, 0.1);
        let s2 = linear_surface(-3.0, 0.0);
        assert_eq!(age_points_to_us(&[(60.0, 5.0)]).unwrap(), vec![(55.0, 5.0)]);
        assert!(age_points_to_us(&[(5.0, 5.0)]).is_err());
        let ts = compute_surfaces_age([&s1, &s2], &[60.0, 70.0], &[2.0, 5.0], 0.05).unwrap();
        assert_eq!(ts.coords, Coordinates::Ts);
        let us = compute_surfaces([&s1, &s2], &EvalGrid::new(vec![55.0], vec![5.0], 0.05).unwrap()).unwrap();
        assert_eq!(ts.hazard[0][(0, 1)], s1.hazard(55.0, 5.0).unwrap());
        assert!((ts.hazard[0][(0, 1)] - us.hazard[0][(0, 0)]).abs() < 1e-12);
        assert!((ts.cif[0][(0, 1)] - us.cif[0][(0, 0)]).abs() < 1e-12);
        assert!(matches!(compute_surfaces_age([&s1, &s2], &[54.0], &[5.0], 0.05), Err(Error::OutOfDomain { axis: "u", .. })));
    }

    #[test]
    fn s_domain_must_start_at_zero() {
        let mut s1 = linear_surface(-2.0, 0.1);
        s1.bases.s = knots_for_basis_size(1.0, 10.0, 6, 3).unwrap();
        let grid = EvalGrid::new(vec![60.0], vec![2.0], 0.05).unwrap();
        assert!(compute_surfaces([&s1, &s1], &grid).is_err());
    }

    #[test]
    fn hull_membership() {
        let hull = SupportHull::from_points(vec![(0.0, 0.0), (2.0, 0.0), (2.0, 1.0), (0.0, 1.0), (1.0, 0.5)]);
        assert_eq!(hull.vertices.len(), 4);
        assert!(hull.contains(1.0, 0.5));
        assert!(hull.contains(2.0, 1.0));
        assert!(!hull.contains(2.1, 0.5));
        let grid = build_grid(0.0, 4.0, 1.0, 0.0, 4.0, 1.0).unwrap();
        let mut data = BinnedData::zeros(grid);
        // triangle of exposed bins below the anti-diagonal
        for j in 0..4 {
            for k in 0..(4 - j) {
                data.exposure[(j, k)] = 1.0;
            }
        }
        let hull = SupportHull::from_data(&data);
        assert!(hull.contains(0.5, 3.5));
        assert!(hull.contains(2.0, 2.0));
        assert!(!hull.contains(3.5, 3.5));
        let mask = hull.extrapolation_mask(&[0.5, 3.5], &[0.5, 3.5]);
        assert_eq!(mask, vec![vec![false, false], vec![false, true]]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn survival_and_incidence_are_monotone(
            a1 in -4.0f64..0.0, b1 in -0.2f64..0.2, a2 in -4.0f64..0.0, b2 in -0.2f64..0.2, u in 50.0f64..100.0,
        ) {
            let s1 = linear_surface(a1, b1);
            let s2 = linear_surface(a2, b2);
            let g = EvalGrid::new(vec![u], (0..=40).map(|k| k as f64 * 0.25).collect(), 0.05).unwrap();
            let surf = compute_surfaces([&s1, &s2], &g).unwrap();
            prop_assert_eq!(surf.survival[(0, 0)], 1.0);
            for j in 1..g.s_points.len() {
                prop_assert!(surf.survival[(0, j)] <= surf.survival[(0, j - 1)]);
                prop_assert!(surf.survival[(0, j)] > 0.0);
                for c in 0..2 {
                    prop_assert!(surf.cif[c][(0, j)] >= surf.cif[c][(0, j - 1)]);
                }
            }
            let max_l = (a1 + b1.max(0.0) * 10.0).exp().max((a2 + b2.max(0.0) * 10.0).exp()) * 2.0;
            prop_assert!(surf.conservation_error() <= 3.0 * 0.05 * max_l);
        }
    }
}
