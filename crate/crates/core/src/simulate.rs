//! Synthetic competing-risks cohorts from known hazard surfaces.
//!
//! Follow-up is simulated by stepping through time in increments of `step`
//! years; in each step an event of cause `ℓ` happens with probability
//! `λ_ℓ(u, s) · step` evaluated at the step midpoint.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lexis::{at_risk_counts, bin_records, AtRiskCounts, BinnedData, IndividualRecord, LexisGrid};
use crate::pclm::{group_records, GroupedCohort};

/// Largest admissible per-step event probability.
const MAX_STEP_PROBABILITY: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum HazardFamily {
    Constant { rate: f64 },
    /// `level · exp(rate · (u − age_ref))`.
    Gompertz { level: f64, rate: f64, age_ref: f64 },
    /// `base + scale · (s/peak) · exp(1 − s/peak)`, peaking at `s = peak`.
    Unimodal { base: f64, scale: f64, peak: f64 },
    /// `scale · exp(age_rate · (u − age_ref)) · (1 + (s/peak) exp(1 − s/peak)) / 2`.
    Product { scale: f64, age_rate: f64, age_ref: f64, peak: f64 },
}

impl HazardFamily {
    pub fn rate(&self, u: f64, s: f64) -> f64 {
        match *self {
            HazardFamily::Constant { rate } => rate,
            HazardFamily::Gompertz { level, rate, age_ref } => level * (rate * (u - age_ref)).exp(),
            HazardFamily::Unimodal { base, scale, peak } => base + scale * hump(s, peak),
            HazardFamily::Product {
                scale,
                age_rate,
                age_ref,
                peak,
            } => scale * (age_rate * (u - age_ref)).exp() * 0.5 * (1.0 + hump(s, peak)),
        }
    }
}

fn hump(s: f64, peak: f64) -> f64 {
    let x = s / peak;
    x * (1.0 - x).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AgeDistribution {
    Uniform { lo: f64, hi: f64 },
    /// Uniform within each piece, pieces chosen with the given weights.
    Piecewise { edges: Vec<f64>, weights: Vec<f64> },
}

impl AgeDistribution {
    fn validate(&self) -> Result<()> {
        match self {
            AgeDistribution::Uniform { lo, hi } => {
                if !(lo.is_finite() && hi.is_finite() && *lo > 0.0 && hi > lo) {
                    return Err(Error::InvalidInput(format!("bad uniform age range [{lo}, {hi})")));
                }
            }
            AgeDistribution::Piecewise { edges, weights } => {
                if edges.len() != weights.len() + 1 || weights.is_empty() {
                    return Err(Error::InvalidInput("piecewise ages need one more edge than weights".into()));
                }
                if edges.windows(2).any(|w| w[1] <= w[0]) || edges[0] <= 0.0 {
                    return Err(Error::InvalidInput("piecewise age edges must be positive and increasing".into()));
                }
                if weights.iter().any(|w| *w < 0.0) || weights.iter().sum::<f64>() <= 0.0 {
                    return Err(Error::InvalidInput("piecewise weights must be nonnegative with positive sum".into()));
                }
            }
        }
        Ok(())
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match self {
            AgeDistribution::Uniform { lo, hi } => rng.random_range(*lo..*hi),
            AgeDistribution::Piecewise { edges, weights } => {
                let total: f64 = weights.iter().sum();
                let mut target = rng.random::<f64>() * total;
                let mut piece = weights.len() - 1;
                for (i, w) in weights.iter().enumerate() {
                    if target < *w {
                        piece = i;
                        break;
                    }
                    target -= w;
                }
                rng.random_range(edges[piece]..edges[piece + 1])
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub cause1: HazardFamily,
    pub cause2: HazardFamily,
    pub age: AgeDistribution,
    /// Administrative censoring horizon.
    pub s_max: f64,
    pub n: usize,
    pub seed: u64,
    #[serde(default = "default_step")]
    pub step: f64,
}

fn default_step() -> f64 {
    1e-3
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n < 1 {
            return Err(Error::InvalidInput("cohort size must be at least 1".into()));
        }
        if !(self.s_max.is_finite() && self.s_max > 0.0) {
            return Err(Error::InvalidInput(format!("s_max must be positive, got {}", self.s_max)));
        }
        if !(self.step.is_finite() && self.step > 0.0) {
            return Err(Error::InvalidInput(format!("step must be positive, got {}", self.step)));
        }
        self.age.validate()
    }
}

fn simulate_one(spec: &ScenarioSpec, index: usize) -> Result<IndividualRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64);
    let u = spec.age.sample(&mut rng);
    let n_steps = (spec.s_max / spec.step).ceil() as usize;
    for k in 0..n_steps {
        let lo = k as f64 * spec.step;
        let hi = ((k + 1) as f64 * spec.step).min(spec.s_max);
        let mid = 0.5 * (lo + hi);
        let p1 = spec.cause1.rate(u, mid) * (hi - lo);
        let p2 = spec.cause2.rate(u, mid) * (hi - lo);
        if !(p1 >= 0.0 && p2 >= 0.0) {
            return Err(Error::InvalidInput(format!("hazard is negative or undefined at u={u}, s={mid}")));
        }
        if p1 + p2 > MAX_STEP_PROBABILITY {
            return Err(Error::InvalidInput(format!(
                "event probability {:.3} per step at u={u:.3}, s={mid:.3}; use a smaller step",
                p1 + p2
            )));
        }
        let draw: f64 = rng.random();
        let cause = if draw < p1 {
            1
        } else if draw < p1 + p2 {
            2
        } else {
            continue;
        };
        return Ok(IndividualRecord {
            id: format!("sim{index}"),
            u,
            s_entry: 0.0,
            s_exit: hi,
            cause,
        });
    }
    Ok(IndividualRecord {
        id: format!("sim{index}"),
        u,
        s_entry: 0.0,
        s_exit: spec.s_max,
        cause: 0,
    })
}

/// Draws `spec.n` records; record `i` uses its own RNG stream, so the output
/// does not depend on scheduling.
pub fn simulate_cohort(spec: &ScenarioSpec) -> Result<Vec<IndividualRecord>> {
    spec.validate()?;
    (0..spec.n).into_par_iter().map(|i| simulate_one(spec, i)).collect()
}

/// A cohort seen with its oldest ages grouped, together with the fine-grid
/// truth for comparison.
#[derive(Debug, Clone)]
pub struct GroupedView {
    pub grouped: GroupedCohort,
    pub truth: BinnedData,
    pub truth_at_risk: AtRiskCounts,
}

impl GroupedView {
    /// True fine-grid rows of the grouped interval.
    pub fn truth_tail(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let first = self.grouped.first_grouped_row();
        m.rows(first, m.nrows() - first).into_owned()
    }
}

pub fn grouped_view(records: &[IndividualRecord], grid: &LexisGrid, first_grouped_age: f64) -> Result<GroupedView> {
    Ok(GroupedView {
        grouped: group_records(records, grid, first_grouped_age)?,
        truth: bin_records(records, grid)?,
        truth_at_risk: at_risk_counts(records, grid)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lexis::build_grid;
    use crate::pclm::composition_matrix;

    fn constant_spec(l1: f64, l2: f64, s_max: f64, n: usize, seed: u64) -> ScenarioSpec {
        ScenarioSpec {
            cause1: HazardFamily::Constant { rate: l1 },
            cause2: HazardFamily::Constant { rate: l2 },
            age: AgeDistribution::Uniform { lo: 50.0, hi: 100.0 },
            s_max,
            n,
            seed,
            step: 1e-3,
        }
    }

    #[test]
    fn zero_hazards_censor_everyone() {
        let recs = simulate_cohort(&constant_spec(0.0, 0.0, 5.0, 200, 1)).unwrap();
        assert!(recs.iter().all(|r| r.cause == 0 && r.s_exit == 5.0));
        assert!(recs.iter().all(|r| (50.0..100.0).contains(&r.u)));
    }

    #[test]
    fn cause_fraction_matches_closed_form() {
        let n = 5000;
        let recs = simulate_cohort(&constant_spec(0.1, 0.05, 100.0, n, 2)).unwrap();
        let frac = recs.iter().filter(|r| r.cause == 1).count() as f64 / n as f64;
        let tol = 3.0 * ((2.0 / 9.0) / n as f64).sqrt();
        assert!((frac - 2.0 / 3.0).abs() < tol, "fraction {frac}");
    }

    #[test]
    fn survival_at_one_year() {
        let n = 20000;
        let recs = simulate_cohort(&constant_spec(0.1, 0.05, 2.0, n, 3)).unwrap();
        let surv = recs.iter().filter(|r| r.s_exit > 1.0).count() as f64 / n as f64;
        let p = (-0.15f64).exp();
        let tol = 3.0 * (p * (1.0 - p) / n as f64).sqrt();
        assert!((surv - p).abs() < tol, "survival {surv} vs {p}");
    }

    #[test]
    fn finer_step_leaves_fraction_unchanged() {
        let n = 4000;
        let mut spec = constant_spec(0.2, 0.1, 30.0, n, 4);
        let f = |spec: &ScenarioSpec| {
            simulate_cohort(spec).unwrap().iter().filter(|r| r.cause == 1).count() as f64 / n as f64
        };
        let coarse = f(&spec);
        spec.step = 5e-4;
        let fine = f(&spec);
        let se = ((2.0 / 9.0) / n as f64).sqrt();
        // the two runs are independent draws
        assert!((coarse - fine).abs() < 2.0 * std::f64::consts::SQRT_2 * se);
    }

    #[test]
    fn seed_determinism() {
        let spec = ScenarioSpec {
            cause1: HazardFamily::Unimodal {
                base: 0.02,
                scale: 0.2,
                peak: 2.0,
            },
            ..constant_spec(0.1, 0.05, 10.0, 500, 9)
        };
        assert_eq!(simulate_cohort(&spec).unwrap(), simulate_cohort(&spec).unwrap());
        let other = ScenarioSpec { seed: 10, ..spec.clone() };
        assert_ne!(simulate_cohort(&spec).unwrap(), simulate_cohort(&other).unwrap());
    }

    #[test]
    fn step_guard_and_validation() {
        let spec = ScenarioSpec {
            step: 1.0,
            ..constant_spec(0.1, 0.05, 10.0, 10, 1)
        };
        assert!(simulate_cohort(&spec).is_err());
        assert!(simulate_cohort(&constant_spec(0.1, 0.05, 10.0, 0, 1)).is_err());
    }

    #[test]
    fn piecewise_ages_respect_weights() {
        let spec = ScenarioSpec {
            age: AgeDistribution::Piecewise {
                edges: vec![50.0, 60.0, 70.0],
                weights: vec![0.0, 1.0],
            },
            ..constant_spec(0.1, 0.05, 1.0, 300, 5)
        };
        let recs = simulate_cohort(&spec).unwrap();
        assert!(recs.iter().all(|r| (60.0..70.0).contains(&r.u)));
    }

    #[test]
    fn grouped_view_collapses_tail() {
        let grid = build_grid(50.0, 100.0, 1.0, 0.0, 10.5, 0.5).unwrap();
        let spec = ScenarioSpec {
            age: AgeDistribution::Uniform { lo: 50.0, hi: 100.0 },
            ..constant_spec(0.1, 0.05, 10.5, 2000, 6)
        };
        let recs = simulate_cohort(&spec).unwrap();
        let view = grouped_view(&recs, &grid, 90.0).unwrap();
        let c = composition_matrix(&view.grouped.composition);
        for cause in 0..2 {
            assert_eq!(&c * &view.truth.events[cause], view.grouped.events[cause]);
        }
        assert_eq!(view.truth_tail(&view.truth.exposure).nrows(), 10);

        let young: Vec<_> = recs.iter().filter(|r| r.u < 90.0).cloned().collect();
        let view = grouped_view(&young, &grid, 90.0).unwrap();
        assert!(view.grouped.events[0].row(40).iter().all(|v| *v == 0.0));
    }
}
