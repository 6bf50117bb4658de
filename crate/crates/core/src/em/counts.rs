//! Conditional expected transition counts given an observation.
//!
//! For an observation `y` with likelihood `L`,
//!
//! ```text
//! E[N_jk | y] = L^-1 sum_{u <= y - e_r} alpha(u)_j B_jk p_Y(y - e_r - u)_k
//! E[N_j0 | y] = L^-1 alpha(y)_j b_j
//! ```
//!
//! where `r` is the reward type of destination `k`. Counts of the first visit
//! (`beta`) are reported separately so that initial distributions can be
//! re-estimated.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lattice::{lattice_alpha, lattice_forward, pull_back, LatticeShape, LatticeTables, DEFAULT_VALUE_BUDGET};
use crate::rrdph::{ExpandedModel, JointObservation};

/// Expected transition counts on the expanded state space.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionCounts {
    n: usize,
    /// `n x n`, row-major.
    pub transitions: Vec<f64>,
    /// Expected transitions into absorption from each state.
    pub absorptions: Vec<f64>,
    /// Expected number of trajectories starting in each state.
    pub initial: Vec<f64>,
}

impl TransitionCounts {
    pub fn zeros(n: usize) -> Self {
        TransitionCounts {
            n,
            transitions: vec![0.0; n * n],
            absorptions: vec![0.0; n],
            initial: vec![0.0; n],
        }
    }

    /// Number of expanded states.
    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, from: usize, to: usize) -> f64 {
        self.transitions[from * self.n + to]
    }

    /// Sum of all transition and absorption counts, i.e. the expected number
    /// of visits.
    pub fn total(&self) -> f64 {
        self.transitions.iter().sum::<f64>() + self.absorptions.iter().sum::<f64>()
    }

    pub fn add_assign(&mut self, other: &TransitionCounts) {
        self.add_scaled(other, 1.0);
    }

    pub fn add_scaled(&mut self, other: &TransitionCounts, scale: f64) {
        debug_assert_eq!(self.n, other.n);
        for (a, b) in self.transitions.iter_mut().zip(&other.transitions) {
            *a += scale * b;
        }
        for (a, b) in self.absorptions.iter_mut().zip(&other.absorptions) {
            *a += scale * b;
        }
        for (a, b) in self.initial.iter_mut().zip(&other.initial) {
            *a += scale * b;
        }
    }
}

/// Aggregated counts and log-likelihood for a set of observations.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpectedCounts {
    pub counts: TransitionCounts,
    pub loglik: f64,
}

/// Counts for one observation from precomputed tables; returns the counts and
/// the observation's likelihood.
pub fn observation_counts(tables: &LatticeTables, y: JointObservation) -> Result<(TransitionCounts, f64)> {
    let lik = tables.likelihood(y)?;
    let n = tables.dim();
    let mut out = TransitionCounts::zeros(n);
    if !(lik > 0.0) {
        return Ok((out, lik));
    }
    let blocks = &tables.blocks;
    let mut acc_reward = vec![0.0; blocks.reward.len()];
    let mut acc_time = vec![0.0; blocks.time.len()];
    for u2 in 0..=y.y2 {
        for u1 in 0..=y.y1 {
            if u1 == 0 && u2 == 0 {
                continue;
            }
            let a = tables.alpha(u1, u2);
            if u1 < y.y1 {
                let pv = tables.p_y(y.y1 - u1 - 1, y.y2 - u2);
                for (acc, &(j, k, _)) in acc_reward.iter_mut().zip(&blocks.reward) {
                    *acc += a[j] * pv[k];
                }
            }
            if u2 < y.y2 {
                let pv = tables.p_y(y.y1 - u1, y.y2 - u2 - 1);
                for (acc, &(j, k, _)) in acc_time.iter_mut().zip(&blocks.time) {
                    *acc += a[j] * pv[k];
                }
            }
        }
    }
    let inv = 1.0 / lik;
    for (acc, &(j, k, v)) in acc_reward.iter().zip(&blocks.reward) {
        out.transitions[j * n + k] += acc * v * inv;
    }
    for (acc, &(j, k, v)) in acc_time.iter().zip(&blocks.time) {
        out.transitions[j * n + k] += acc * v * inv;
    }
    let a = tables.alpha(y.y1, y.y2);
    for j in 0..n {
        out.absorptions[j] = a[j] * tables.exit()[j] * inv;
    }
    let d = n / 2;
    let beta = tables.beta();
    for k in 0..n {
        if beta[k] == 0.0 {
            continue;
        }
        let prior = if k >= d {
            (y.y1 > 0).then(|| tables.p_y(y.y1 - 1, y.y2)[k])
        } else {
            (y.y2 > 0).then(|| tables.p_y(y.y1, y.y2 - 1)[k])
        };
        out.initial[k] = beta[k] * prior.unwrap_or(0.0) * inv;
    }
    Ok((out, lik))
}

/// Distinct observations in sorted order with their multiplicities.
fn tally(observations: &[JointObservation]) -> BTreeMap<JointObservation, usize> {
    let mut m = BTreeMap::new();
    for y in observations {
        *m.entry(*y).or_insert(0) += 1;
    }
    m
}

/// Counts for each distinct observation, computed once per distinct value.
pub(crate) fn distinct_counts(
    tables: &LatticeTables,
    observations: &[JointObservation],
) -> Result<BTreeMap<JointObservation, (TransitionCounts, f64)>> {
    let distinct: Vec<JointObservation> = tally(observations).into_keys().collect();
    let computed: Vec<(TransitionCounts, f64)> = distinct
        .par_iter()
        .map(|y| observation_counts(tables, *y))
        .collect::<Result<_>>()?;
    Ok(distinct.into_iter().zip(computed).collect())
}

/// Aggregated counts for `observations` (global indices in `indices`) by a
/// single reverse sweep over the lattice.
///
/// The adjoint `w(u)_k = sum_i p_Y(y_i - u)_k / L_i` collects every
/// observation's backward quantities at once, so that
/// `sum_i E[N_jk | y_i] = B_jk sum_u alpha(u - e_r)_j w(u)_k`. The cost is one
/// pass over the lattice regardless of the number of observations.
pub(crate) fn aggregate(
    tables: &LatticeTables,
    observations: &[JointObservation],
    indices: &[usize],
    adj: &mut Vec<f64>,
) -> Result<ExpectedCounts> {
    let n = tables.dim();
    let d = n / 2;
    let shape = tables.shape();
    let exit = tables.exit();
    let mut counts = TransitionCounts::zeros(n);
    let mut loglik = 0.0;

    let mut lik = BTreeMap::new();
    for (pos, y) in observations.iter().enumerate() {
        let l = match lik.get(y) {
            Some(&l) => l,
            None => {
                let l = tables.likelihood_forward(*y)?;
                lik.insert(*y, l);
                l
            }
        };
        if !(l > 0.0) {
            return Err(Error::ZeroLikelihoodObservation {
                index: indices.get(pos).copied().unwrap_or(pos) + 1,
                y1: y.y1,
                y2: y.y2,
            });
        }
        loglik += l.ln();
    }

    adj.clear();
    adj.resize(shape.cells() * n, 0.0);
    for (y, m) in tally(observations) {
        let scale = m as f64 / lik[&y];
        let at = shape.index(y.y1, y.y2) * n;
        let a = tables.alpha(y.y1, y.y2);
        for j in 0..n {
            adj[at + j] += scale * exit[j];
            counts.absorptions[j] += scale * a[j] * exit[j];
        }
    }

    let blocks = &tables.blocks;
    let mut acc_reward = vec![0.0; blocks.reward.len()];
    let mut acc_time = vec![0.0; blocks.time.len()];
    for y2 in (0..shape.rows()).rev() {
        for y1 in (0..shape.row_len(y2)).rev() {
            let at = shape.index(y1, y2) * n;
            let (head, later) = adj.split_at_mut(at + n);
            let cur = &mut head[at..];
            if shape.contains(y1 + 1, y2) {
                pull_back(cur, &later[..n], &blocks.reward);
            }
            if shape.contains(y1, y2 + 1) {
                let next = shape.index(y1, y2 + 1) * n - at - n;
                pull_back(cur, &later[next..next + n], &blocks.time);
            }
            let w = &*cur;
            if y1 > 0 {
                let a = tables.alpha(y1 - 1, y2);
                for (acc, &(j, k, _)) in acc_reward.iter_mut().zip(&blocks.reward) {
                    *acc += a[j] * w[k];
                }
            }
            if y2 > 0 {
                let a = tables.alpha(y1, y2 - 1);
                for (acc, &(j, k, _)) in acc_time.iter_mut().zip(&blocks.time) {
                    *acc += a[j] * w[k];
                }
            }
        }
    }
    for (acc, &(j, k, v)) in acc_reward.iter().zip(&blocks.reward) {
        counts.transitions[j * n + k] += acc * v;
    }
    for (acc, &(j, k, v)) in acc_time.iter().zip(&blocks.time) {
        counts.transitions[j * n + k] += acc * v;
    }
    let beta = tables.beta();
    for k in 0..n {
        let (y1, y2) = if k >= d { (1, 0) } else { (0, 1) };
        if beta[k] != 0.0 && shape.contains(y1, y2) {
            counts.initial[k] = beta[k] * adj[shape.index(y1, y2) * n + k];
        }
    }
    Ok(ExpectedCounts { counts, loglik })
}

/// E-step for one model: aggregated expected counts and the log-likelihood.
pub fn expected_counts(model: &ExpandedModel, observations: &[JointObservation]) -> Result<ExpectedCounts> {
    let shape = LatticeShape::covering(observations.iter());
    let tables = lattice_alpha(model, &shape, DEFAULT_VALUE_BUDGET, Vec::new())?;
    let indices: Vec<usize> = (0..observations.len()).collect();
    aggregate(&tables, observations, &indices, &mut Vec::new())
}

/// Expected counts of each observation separately.
pub fn expected_counts_per_observation(
    model: &ExpandedModel,
    observations: &[JointObservation],
) -> Result<Vec<TransitionCounts>> {
    let shape = LatticeShape::covering(observations.iter());
    let tables = lattice_forward(model, &shape, DEFAULT_VALUE_BUDGET)?;
    let per = distinct_counts(&tables, observations)?;
    observations
        .iter()
        .enumerate()
        .map(|(i, y)| {
            let (c, lik) = &per[y];
            if *lik > 0.0 {
                Ok(c.clone())
            } else {
                Err(Error::ZeroLikelihoodObservation {
                    index: i + 1,
                    y1: y.y1,
                    y2: y.y2,
                })
            }
        })
        .collect()
}

/// Counts of a geometric inertia-escalation model grouped by severity level.
#[derive(Debug, Clone, PartialEq)]
pub struct IemCounts {
    pub s_stay: f64,
    pub s_up: f64,
    pub s_down: f64,
    /// Expected reward failures (continuations of the reward loop) per level.
    pub f: Vec<f64>,
    /// Expected reward opportunities per level.
    pub u: Vec<f64>,
}

/// Groups expanded-state counts of a geometric inertia-escalation model.
///
/// Moves between levels and the level-staying transitions are read only from
/// the `QT` block (destinations in the time block), so reward-loop
/// transitions `j+d -> j+d` never count as inertia. Absorption from level 1
/// is a step down and from level `d` a step up.
pub fn group_iem_counts(counts: &TransitionCounts) -> IemCounts {
    let n = counts.dim();
    let d = n / 2;
    let mut g = IemCounts {
        s_stay: 0.0,
        s_up: 0.0,
        s_down: 0.0,
        f: vec![0.0; d],
        u: vec![0.0; d],
    };
    for j in 0..d {
        for a in [j, j + d] {
            for k in 0..d {
                let c = counts.get(a, k);
                if k == j {
                    g.s_stay += c;
                } else if k == j + 1 {
                    g.s_up += c;
                } else if k + 1 == j {
                    g.s_down += c;
                }
                g.u[j] += c;
            }
            for b in d..n {
                let c = counts.get(a, b);
                if b == j + d {
                    g.f[j] += c;
                }
                g.u[j] += c;
            }
            let abs = counts.absorptions[a];
            g.u[j] += abs;
            if j == 0 {
                g.s_down += abs;
            } else if j == d - 1 {
                g.s_up += abs;
            }
        }
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::iem::{iem_model, IemSpec};
    use crate::rrdph::toys::*;
    use crate::rrdph::{expand_geometric, RewardProbs};
    use crate::dph::DphModel;
    use approx::assert_abs_diff_eq;

    #[test]
    fn unique_path_counts() {
        let m = bernoulli_toy(0.5, 0.6, 0.3);
        let c = expected_counts(&m, &[JointObservation::new(2, 0)]).unwrap().counts;
        // A1 = 4, C1 = 6
        for a in 0..8 {
            for b in 0..8 {
                let want = if (a, b) == (4, 6) { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(c.get(a, b), want, epsilon = 1e-14);
            }
            let want = if a == 6 { 1.0 } else { 0.0 };
            assert_abs_diff_eq!(c.absorptions[a], want, epsilon = 1e-14);
        }
        assert_abs_diff_eq!(c.initial[4], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn conservation() {
        let m = iem_model(&IemSpec::new(3, 0.3, 0.7, RewardProbs(vec![0.5, 0.4, 0.7]))).unwrap();
        for y in [(0, 1), (3, 2), (7, 5), (0, 9), (12, 1)] {
            let y = JointObservation::new(y.0, y.1);
            let c = expected_counts(&m, &[y]).unwrap().counts;
            assert_abs_diff_eq!(c.total(), (y.y1 + y.y2) as f64, epsilon = 1e-10);
            assert_abs_diff_eq!(c.initial.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
            let g = group_iem_counts(&c);
            let completed: f64 = g.u.iter().zip(&g.f).map(|(u, f)| u - f).sum();
            assert_abs_diff_eq!(g.s_stay + g.s_up + g.s_down, completed, epsilon = 1e-10);
            // failures are reward units, time steps are successes
            assert_abs_diff_eq!(g.f.iter().sum::<f64>(), y.y1 as f64, epsilon = 1e-10);
            assert_abs_diff_eq!(completed, y.y2 as f64, epsilon = 1e-10);
            for j in 0..3 {
                assert!(g.u[j] >= g.f[j] - 1e-12);
            }
        }
    }

    #[test]
    fn single_visit_geometric() {
        let base = DphModel::from_rows(&[1.0], &[vec![0.0]]).unwrap();
        let m = expand_geometric(&base, &RewardProbs(vec![0.5])).unwrap();
        let c = expected_counts(&m, &[JointObservation::new(3, 1)]).unwrap();
        // group as a one-level model: F = 3, U = 4
        let f = c.counts.get(0, 1) + c.counts.get(1, 1);
        let u = c.counts.total();
        assert_abs_diff_eq!(f, 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(u, 4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c.loglik, 0.5f64.powi(4).ln(), epsilon = 1e-12);
    }

    #[test]
    fn zero_likelihood_is_reported() {
        let m = bernoulli_toy(0.5, 0.6, 0.3);
        let err = expected_counts(&m, &[JointObservation::new(2, 0), JointObservation::new(5, 5)]).unwrap_err();
        assert_eq!(err, Error::ZeroLikelihoodObservation { index: 2, y1: 5, y2: 5 });
    }

    #[test]
    fn aggregate_equals_sum_of_singles() {
        let m = geometric_toy(0.3, 0.45);
        let obs: Vec<_> = [(0, 2), (3, 2), (0, 2), (1, 2)]
            .iter()
            .map(|&(a, b)| JointObservation::new(a, b))
            .collect();
        let all = expected_counts(&m, &obs).unwrap();
        let per = expected_counts_per_observation(&m, &obs).unwrap();
        let mut sum = TransitionCounts::zeros(6);
        for c in &per {
            sum.add_assign(c);
        }
        for (a, b) in all.counts.transitions.iter().zip(&sum.transitions) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        for (a, b) in all.counts.absorptions.iter().zip(&sum.absorptions) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        for (a, b) in all.counts.initial.iter().zip(&sum.initial) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn reverse_sweep_matches_per_observation_sum() {
        let spec = IemSpec::new(4, 0.55, 0.4, RewardProbs(vec![0.1, 0.21, 0.39, 0.6]));
        let m = iem_model(&spec).unwrap();
        let obs = crate::simulate::simulate_expanded(&m, &crate::simulate::SimConfig::new(4, 300)).unwrap();
        let all = expected_counts(&m, &obs).unwrap();
        let per = expected_counts_per_observation(&m, &obs).unwrap();
        let mut sum = TransitionCounts::zeros(8);
        for c in &per {
            sum.add_assign(c);
        }
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-10 * (1.0 + b.abs());
        assert!(all.counts.transitions.iter().zip(&sum.transitions).all(|(a, b)| close(*a, *b)));
        assert!(all.counts.absorptions.iter().zip(&sum.absorptions).all(|(a, b)| close(*a, *b)));
        assert!(all.counts.initial.iter().zip(&sum.initial).all(|(a, b)| close(*a, *b)));
        let total: usize = obs.iter().map(|y| y.y1 + y.y2).sum();
        assert!(close(all.counts.total(), total as f64));
        let direct: f64 = obs.iter().map(|y| m.joint_pmf(*y).unwrap().ln()).sum();
        assert!(close(all.loglik, direct));
    }
}
