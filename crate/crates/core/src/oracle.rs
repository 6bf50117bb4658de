//! Reference implementations used to check the lattice recursion.
//!
//! [`enumerate_joint_pmf`] works on the base chain and draws each visit's
//! reward explicitly, so it shares no code with the expanded representation.
//! [`monte_carlo_pmf`] tabulates simulated draws.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::rrdph::{ExpandedModel, JointObservation, RewardKind};
use crate::simulate::{simulate_expanded, SimConfig};

/// Exact probabilities on `[0, y1_max] x [0, y2_max]`, indexed `[y2][y1]`,
/// plus the mass that left the rectangle.
#[derive(Debug, Clone)]
pub struct EnumeratedPmf {
    pub table: Vec<Vec<f64>>,
    pub residual: f64,
}

impl EnumeratedPmf {
    pub fn get(&self, y1: usize, y2: usize) -> f64 {
        self.table
            .get(y2)
            .and_then(|r| r.get(y1))
            .copied()
            .unwrap_or(0.0)
    }
}

/// Cells allowed by default in [`enumerate_joint_pmf`].
pub const ENUMERATION_BUDGET: usize = 20_000_000;

/// Path-prefix dynamic program by step count.
///
/// `mass[s][y2][y1]` holds the probability of paths that have just entered
/// base state `s` with `(y1, y2)` accumulated over earlier visits. Each step
/// emits the reward of the current visit (one Bernoulli trial, or one unit of
/// time plus a geometric number of reward units), then either absorbs or moves
/// along `T`.
pub fn enumerate_joint_pmf(model: &ExpandedModel, y1_max: usize, y2_max: usize) -> Result<EnumeratedPmf> {
    let base = model.base();
    let d = base.dim();
    let w = y1_max + 1;
    let h = y2_max + 1;
    let cells = d * w * h;
    if cells > ENUMERATION_BUDGET {
        return Err(Error::BudgetExceeded {
            cells,
            budget: ENUMERATION_BUDGET,
        });
    }
    let kind = model.kind();
    let r = model.rewards().as_slice();
    let t = base.t();
    let exit = base.exit_vector();

    let at = |s: usize, y1: usize, y2: usize| (s * h + y2) * w + y1;
    let mut table = vec![vec![0.0; w]; h];
    let mut mass = vec![0.0; cells];
    for s in 0..d {
        mass[at(s, 0, 0)] = base.pi()[s];
    }
    let mut emitted = vec![0.0; cells];

    // every step adds at least one unit to y1 + y2
    for _ in 0..(y1_max + y2_max + 2) {
        emitted.iter_mut().for_each(|v| *v = 0.0);
        let mut live = false;
        for s in 0..d {
            for y2 in 0..h {
                for y1 in 0..w {
                    let m = mass[at(s, y1, y2)];
                    if m == 0.0 {
                        continue;
                    }
                    live = true;
                    match kind {
                        RewardKind::Bernoulli => {
                            if y1 < y1_max {
                                emitted[at(s, y1 + 1, y2)] += m * r[s];
                            }
                            if y2 < y2_max {
                                emitted[at(s, y1, y2 + 1)] += m * (1.0 - r[s]);
                            }
                        }
                        RewardKind::Geometric => {
                            if y2 < y2_max {
                                let q = r[s];
                                let mut pk = q;
                                for k in 0..=(y1_max - y1) {
                                    emitted[at(s, y1 + k, y2 + 1)] += m * pk;
                                    pk *= 1.0 - q;
                                }
                            }
                        }
                    }
                }
            }
        }
        if !live {
            break;
        }
        mass.iter_mut().for_each(|v| *v = 0.0);
        for s in 0..d {
            for y2 in 0..h {
                for y1 in 0..w {
                    let m = emitted[at(s, y1, y2)];
                    if m == 0.0 {
                        continue;
                    }
                    table[y2][y1] += m * exit[s];
                    for k in 0..d {
                        let p = t[(s, k)];
                        if p != 0.0 {
                            mass[at(k, y1, y2)] += m * p;
                        }
                    }
                }
            }
        }
    }
    let inside: f64 = table.iter().flatten().sum();
    Ok(EnumeratedPmf {
        table,
        residual: (1.0 - inside).max(0.0),
    })
}

/// Empirical joint distribution of simulated draws.
#[derive(Debug, Clone)]
pub struct EmpiricalPmf {
    pub n: usize,
    pub counts: BTreeMap<JointObservation, usize>,
}

impl EmpiricalPmf {
    pub fn from_draws(draws: &[JointObservation]) -> Self {
        let mut counts = BTreeMap::new();
        for y in draws {
            *counts.entry(*y).or_insert(0) += 1;
        }
        EmpiricalPmf {
            n: draws.len(),
            counts,
        }
    }

    pub fn frequency(&self, y: JointObservation) -> f64 {
        self.counts.get(&y).copied().unwrap_or(0) as f64 / self.n as f64
    }

    /// Binomial standard error of the frequency of `y`.
    pub fn standard_error(&self, y: JointObservation) -> f64 {
        let p = self.frequency(y);
        (p * (1.0 - p) / self.n as f64).sqrt()
    }

    pub fn mean(&self) -> (f64, f64) {
        let mut m = (0.0, 0.0);
        for (y, c) in &self.counts {
            m.0 += y.y1 as f64 * *c as f64;
            m.1 += y.y2 as f64 * *c as f64;
        }
        (m.0 / self.n as f64, m.1 / self.n as f64)
    }
}

/// Tabulates `n` simulated draws.
pub fn monte_carlo_pmf(model: &ExpandedModel, n: usize, seed: u64) -> Result<EmpiricalPmf> {
    let draws = simulate_expanded(model, &SimConfig::new(seed, n))?;
    Ok(EmpiricalPmf::from_draws(&draws))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dph::bernoulli_toy_base;
    use crate::rrdph::toys::*;
    use crate::rrdph::{expand_geometric, RewardProbs};
    use approx::assert_abs_diff_eq;

    #[test]
    fn bernoulli_toy_four_points() {
        let e = enumerate_joint_pmf(&bernoulli_toy(0.5, 0.6, 0.3), 4, 4).unwrap();
        assert_abs_diff_eq!(e.get(1, 1), 0.20, epsilon = 1e-15);
        assert_abs_diff_eq!(e.get(2, 0), 0.30, epsilon = 1e-15);
        assert_abs_diff_eq!(e.get(2, 1), 0.35, epsilon = 1e-15);
        assert_abs_diff_eq!(e.get(3, 0), 0.15, epsilon = 1e-15);
        assert_abs_diff_eq!(e.residual, 0.0, epsilon = 1e-15);
        // marginal of rewards on the A -> C branch: 2 w.p. 0.6, 1 w.p. 0.4
        let via_c_two = e.get(2, 0) / 0.5;
        assert_abs_diff_eq!(via_c_two, 0.6, epsilon = 1e-15);
    }

    #[test]
    fn geometric_toy_closed_form() {
        let e = enumerate_joint_pmf(&geometric_toy(0.5, 0.6), 10, 3).unwrap();
        assert_abs_diff_eq!(e.get(0, 2), 0.8, epsilon = 1e-15);
        for k in 1..=10 {
            assert_abs_diff_eq!(e.get(k, 2), 0.5 * 0.4f64.powi(k as i32) * 0.6, epsilon = 1e-15);
        }
        assert!(e.residual > 0.0 && e.residual < 1e-4);
    }

    #[test]
    fn degenerate_geometric_mass_on_zero_reward() {
        let m = expand_geometric(&bernoulli_toy_base(), &RewardProbs::uniform(1.0, 4)).unwrap();
        let e = enumerate_joint_pmf(&m, 3, 4).unwrap();
        for y2 in 0..=4 {
            for y1 in 1..=3 {
                assert_eq!(e.get(y1, y2), 0.0);
            }
        }
        assert_abs_diff_eq!(e.get(0, 2) + e.get(0, 3), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn monte_carlo_matches_toy() {
        let m = bernoulli_toy(0.5, 0.6, 0.3);
        let mc = monte_carlo_pmf(&m, 100_000, 21).unwrap();
        assert!((mc.frequency(JointObservation::new(2, 0)) - 0.30).abs() < 0.01);
        let again = monte_carlo_pmf(&m, 100_000, 21).unwrap();
        assert_eq!(mc.counts, again.counts);
    }

    #[test]
    fn budget() {
        let m = geometric_toy(0.5, 0.6);
        assert!(matches!(
            enumerate_joint_pmf(&m, 10_000, 10_000),
            Err(Error::BudgetExceeded { .. })
        ));
    }
}
