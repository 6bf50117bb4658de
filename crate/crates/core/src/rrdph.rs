//! Random-reward phase-type models.
//!
//! A base chain `(pi, T)` whose visits emit Bernoulli or geometric rewards is
//! rewritten as an ordinary bivariate phase-type model on `2d` states. States
//! `0..d` carry reward vector `r2 = (1_d, 0_d)` and states `d..2d` carry
//! `r1 = (0_d, 1_d)`; `Y1` counts visits to the second block and `Y2` visits to
//! the first.
//!
//! * Bernoulli: `B = [[T(I-P), TP], [T(I-P), TP]]`, `beta = ((I-P)pi, P pi)`,
//!   `b = (t, t)`. Then `(Y1, Y2) = (psi, tau - psi)`.
//! * Geometric: `B = [[QT, I-Q], [QT, I-Q]]`, `beta = (pi, 0)`,
//!   `b = (Qt, Qt)`. Then `(Y1, Y2) = (psi, tau)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dph::{check_probability, DphModel};
use crate::error::{Error, Result};
use crate::lattice::{lattice_forward, LatticeShape, DEFAULT_VALUE_BUDGET};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardKind {
    Bernoulli,
    Geometric,
}

/// Which coordinate of the observation a visit to an expanded state counts
/// towards.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewardType {
    /// `Y1`: the accumulated reward.
    Reward,
    /// `Y2`: unrewarded visits (Bernoulli) or time (geometric).
    Time,
}

impl RewardType {
    pub fn index(self) -> usize {
        match self {
            RewardType::Reward => 0,
            RewardType::Time => 1,
        }
    }
}

/// Per-state reward parameters: `p` for Bernoulli, `q` for geometric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RewardProbs(pub Vec<f64>);

impl RewardProbs {
    pub fn new(values: Vec<f64>) -> Self {
        RewardProbs(values)
    }

    pub fn uniform(value: f64, d: usize) -> Self {
        RewardProbs(vec![value; d])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    fn validate(&self, kind: RewardKind, d: usize) -> Result<()> {
        if self.len() != d {
            return Err(Error::DimensionMismatch {
                what: "reward probabilities",
                expected: d,
                found: self.len(),
            });
        }
        let name = match kind {
            RewardKind::Bernoulli => "p",
            RewardKind::Geometric => "q",
        };
        for (i, &v) in self.0.iter().enumerate() {
            check_probability(name, (i + 1).to_string(), v, 0.0)?;
            if kind == RewardKind::Geometric && v == 0.0 {
                return Err(Error::ZeroRewardProbability { state: i + 1 });
            }
        }
        Ok(())
    }
}

/// One observation `(Y1, Y2)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct JointObservation {
    pub y1: usize,
    pub y2: usize,
}

impl JointObservation {
    pub fn new(y1: usize, y2: usize) -> Self {
        JointObservation { y1, y2 }
    }
}

/// The `2d`-state representation of a random-reward model.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpandedModel {
    kind: RewardKind,
    base: DphModel,
    rewards: RewardProbs,
    beta: DVector<f64>,
    b: DMatrix<f64>,
    exit: DVector<f64>,
}

/// Bernoulli expansion of `model` with reward probabilities `p`.
pub fn expand_bernoulli(model: &DphModel, p: &RewardProbs) -> Result<ExpandedModel> {
    let d = model.dim();
    p.validate(RewardKind::Bernoulli, d)?;
    let t = model.t();
    let pi = model.pi();
    let mut b = DMatrix::zeros(2 * d, 2 * d);
    for half in 0..2 {
        let row0 = half * d;
        for i in 0..d {
            for j in 0..d {
                b[(row0 + i, j)] = t[(i, j)] * (1.0 - p.0[j]);
                b[(row0 + i, d + j)] = t[(i, j)] * p.0[j];
            }
        }
    }
    let mut beta = DVector::zeros(2 * d);
    let mut exit = DVector::zeros(2 * d);
    for i in 0..d {
        beta[i] = (1.0 - p.0[i]) * pi[i];
        beta[d + i] = p.0[i] * pi[i];
        exit[i] = model.exit_vector()[i];
        exit[d + i] = model.exit_vector()[i];
    }
    Ok(ExpandedModel {
        kind: RewardKind::Bernoulli,
        base: model.clone(),
        rewards: p.clone(),
        beta,
        b,
        exit,
    })
}

/// Geometric expansion of `model` with reward probabilities `q`.
///
/// `q_i = 1` is a reward degenerate at zero; `q_i = 0` is rejected.
pub fn expand_geometric(model: &DphModel, q: &RewardProbs) -> Result<ExpandedModel> {
    let d = model.dim();
    q.validate(RewardKind::Geometric, d)?;
    let t = model.t();
    let mut b = DMatrix::zeros(2 * d, 2 * d);
    for half in 0..2 {
        let row0 = half * d;
        for i in 0..d {
            for j in 0..d {
                b[(row0 + i, j)] = q.0[i] * t[(i, j)];
            }
            b[(row0 + i, d + i)] = 1.0 - q.0[i];
        }
    }
    let mut beta = DVector::zeros(2 * d);
    let mut exit = DVector::zeros(2 * d);
    for i in 0..d {
        beta[i] = model.pi()[i];
        let e = q.0[i] * model.exit_vector()[i];
        exit[i] = e;
        exit[d + i] = e;
    }
    Ok(ExpandedModel {
        kind: RewardKind::Geometric,
        base: model.clone(),
        rewards: q.clone(),
        beta,
        b,
        exit,
    })
}

/// Expands with the given kind.
pub fn expand(model: &DphModel, kind: RewardKind, rewards: &RewardProbs) -> Result<ExpandedModel> {
    match kind {
        RewardKind::Bernoulli => expand_bernoulli(model, rewards),
        RewardKind::Geometric => expand_geometric(model, rewards),
    }
}

impl ExpandedModel {
    pub fn kind(&self) -> RewardKind {
        self.kind
    }

    /// Number of states of the base chain.
    pub fn base_dim(&self) -> usize {
        self.base.dim()
    }

    /// Number of expanded states, `2d`.
    pub fn dim(&self) -> usize {
        2 * self.base.dim()
    }

    pub fn base(&self) -> &DphModel {
        &self.base
    }

    pub fn rewards(&self) -> &RewardProbs {
        &self.rewards
    }

    pub fn beta(&self) -> &DVector<f64> {
        &self.beta
    }

    /// Expanded sub-transition matrix `B`.
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    /// Expanded exit vector `b`.
    pub fn exit_vector(&self) -> &DVector<f64> {
        &self.exit
    }

    pub fn reward_type(&self, state: usize) -> RewardType {
        if state >= self.base.dim() {
            RewardType::Reward
        } else {
            RewardType::Time
        }
    }

    /// Binary reward matrix `R` with columns `(r1, r2)`.
    pub fn reward_matrix(&self) -> DMatrix<f64> {
        let n = self.dim();
        DMatrix::from_fn(n, 2, |i, c| {
            let ty = self.reward_type(i);
            if (c == 0) == (ty == RewardType::Reward) {
                1.0
            } else {
                0.0
            }
        })
    }

    /// `E[Y1], E[Y2]` from the expected visit counts `beta (I - B)^-1`.
    pub fn expected_rewards(&self) -> Result<(f64, f64)> {
        let n = self.dim();
        let m = DMatrix::identity(n, n) - &self.b;
        let visits = m
            .transpose()
            .lu()
            .solve(&self.beta)
            .ok_or(Error::SingularResolvent)?;
        let d = self.base_dim();
        let y2: f64 = visits.rows(0, d).sum();
        let y1: f64 = visits.rows(d, d).sum();
        Ok((y1, y2))
    }

    /// `beta' Delta (I - B Delta)^-1 b` with
    /// `Delta = diag(theta2 1_d, theta1 1_d)`.
    pub fn pgf(&self, theta1: f64, theta2: f64) -> Result<f64> {
        check_theta(self.kind, &self.rewards, theta1, theta2)?;
        let n = self.dim();
        let d = self.base_dim();
        let delta = DVector::from_fn(n, |i, _| if i < d { theta2 } else { theta1 });
        let mut m = DMatrix::identity(n, n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] -= self.b[(i, j)] * delta[j];
            }
        }
        if theta1 > 1.0 {
            check_radius(&m)?;
        }
        let u = m.lu().solve(&self.exit).ok_or(Error::SingularResolvent)?;
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularResolvent);
        }
        Ok(self.beta.component_mul(&delta).dot(&u))
    }

    /// Exact `P(Y1 = y1, Y2 = y2)`.
    pub fn joint_pmf(&self, y: JointObservation) -> Result<f64> {
        joint_pmf(self, y)
    }
}

/// `theta2` must lie in `[0, 1]`; so must `theta1` for Bernoulli rewards.
/// Geometric rewards allow any `theta1 >= 0` with `(1 - q_i) theta1 < 1`.
fn check_theta(kind: RewardKind, rewards: &RewardProbs, theta1: f64, theta2: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&theta2) {
        return Err(Error::InvalidParameter {
            name: "theta2".into(),
            value: theta2,
            range: "[0, 1]",
        });
    }
    let theta1_ok = match kind {
        RewardKind::Bernoulli => (0.0..=1.0).contains(&theta1),
        RewardKind::Geometric => theta1 >= 0.0 && theta1.is_finite(),
    };
    if !theta1_ok {
        return Err(Error::InvalidParameter {
            name: "theta1".into(),
            value: theta1,
            range: if kind == RewardKind::Bernoulli { "[0, 1]" } else { "[0, inf)" },
        });
    }
    if kind == RewardKind::Geometric {
        for (i, &q) in rewards.0.iter().enumerate() {
            if (1.0 - q) * theta1 >= 1.0 {
                return Err(Error::DivergentSeries { state: i + 1 });
            }
        }
    }
    Ok(())
}

/// Compact generating function on the base chain:
/// `pi' D (I - T D)^-1 t` with `D = (I-P) theta2 + P theta1` (Bernoulli) or
/// `D = Q theta2 (I - (I-Q) theta1)^-1` (geometric).
pub fn pgf_compact(
    model: &DphModel,
    rewards: &RewardProbs,
    kind: RewardKind,
    theta1: f64,
    theta2: f64,
) -> Result<f64> {
    rewards.validate(kind, model.dim())?;
    check_theta(kind, rewards, theta1, theta2)?;
    let d = model.dim();
    let diag: Vec<f64> = rewards
        .0
        .iter()
        .map(|&r| match kind {
            RewardKind::Bernoulli => (1.0 - r) * theta2 + r * theta1,
            RewardKind::Geometric => r * theta2 / (1.0 - (1.0 - r) * theta1),
        })
        .collect();
    let mut m = DMatrix::identity(d, d);
    for i in 0..d {
        for j in 0..d {
            m[(i, j)] -= model.t()[(i, j)] * diag[j];
        }
    }
    if theta1 > 1.0 {
        check_radius(&m)?;
    }
    let u = m
        .lu()
        .solve(model.exit_vector())
        .ok_or(Error::SingularResolvent)?;
    Ok((0..d).map(|i| model.pi()[i] * diag[i] * u[i]).sum())
}

/// For `M = I - A` with `A >= 0`, the Neumann series of `A` converges iff
/// `M` is invertible with a nonnegative inverse.
fn check_radius(m: &DMatrix<f64>) -> Result<()> {
    let inv = m.clone().try_inverse().ok_or(Error::OutsideRadius)?;
    if inv.iter().any(|v| !v.is_finite() || *v < -1e-12) {
        return Err(Error::OutsideRadius);
    }
    Ok(())
}

/// Expanded-form generating function; see [`ExpandedModel::pgf`].
pub fn pgf_expanded(expanded: &ExpandedModel, theta1: f64, theta2: f64) -> Result<f64> {
    expanded.pgf(theta1, theta2)
}

/// Exact joint probability of one observation via the lattice recursion.
pub fn joint_pmf(expanded: &ExpandedModel, y: JointObservation) -> Result<f64> {
    let shape = LatticeShape::rectangle(y.y1, y.y2);
    let tables = lattice_forward(expanded, &shape, DEFAULT_VALUE_BUDGET)?;
    let p = tables.likelihood(y)?;
    if p > 0.0 && p < 1e-300 {
        log::warn!("P(Y = ({}, {})) = {p:e} is below 1e-300", y.y1, y.y2);
    }
    Ok(p)
}

/// Joint probabilities on the rectangle `[0, y1_max] x [0, y2_max]`, indexed
/// `[y2][y1]`.
pub fn joint_pmf_table(expanded: &ExpandedModel, y1_max: usize, y2_max: usize) -> Result<Vec<Vec<f64>>> {
    let shape = LatticeShape::rectangle(y1_max, y2_max);
    let tables = lattice_forward(expanded, &shape, DEFAULT_VALUE_BUDGET)?;
    let mut out = vec![vec![0.0; y1_max + 1]; y2_max + 1];
    for (y2, row) in out.iter_mut().enumerate() {
        for (y1, cell) in row.iter_mut().enumerate() {
            *cell = tables.likelihood(JointObservation::new(y1, y2))?;
        }
    }
    Ok(out)
}

/// Free-function form of [`ExpandedModel::expected_rewards`].
pub fn expected_rewards(expanded: &ExpandedModel) -> Result<(f64, f64)> {
    expanded.expected_rewards()
}

/// The small worked examples used in tests and replication studies.
pub mod toys {
    use super::*;

    /// Four-state chain A -> {B, C}, B -> D, C and D absorb; A and B always
    /// rewarded, C with probability `p`, D with probability `q`.
    pub fn try_bernoulli_toy(b: f64, p: f64, q: f64) -> Result<ExpandedModel> {
        let base = DphModel::from_rows(
            &[1.0, 0.0, 0.0, 0.0],
            &[
                vec![0.0, b, 1.0 - b, 0.0],
                vec![0.0, 0.0, 0.0, 1.0],
                vec![0.0, 0.0, 0.0, 0.0],
                vec![0.0, 0.0, 0.0, 0.0],
            ],
        )?;
        expand_bernoulli(&base, &RewardProbs(vec![1.0, 1.0, p, q]))
    }

    /// Three-state chain A -> {B, C}, B and C absorb; geometric reward at C.
    pub fn try_geometric_toy(b: f64, q: f64) -> Result<ExpandedModel> {
        let base = DphModel::from_rows(
            &[1.0, 0.0, 0.0],
            &[vec![0.0, b, 1.0 - b], vec![0.0, 0.0, 0.0], vec![0.0, 0.0, 0.0]],
        )?;
        expand_geometric(&base, &RewardProbs(vec![1.0, 1.0, q]))
    }

    /// [`try_bernoulli_toy`] for parameters known to be valid.
    ///
    /// # Panics
    /// If any argument lies outside `[0, 1]`.
    pub fn bernoulli_toy(b: f64, p: f64, q: f64) -> ExpandedModel {
        try_bernoulli_toy(b, p, q).expect("toy parameters must lie in [0, 1]")
    }

    /// [`try_geometric_toy`] for parameters known to be valid.
    ///
    /// # Panics
    /// If `b` lies outside `[0, 1]` or `q` outside `(0, 1]`.
    pub fn geometric_toy(b: f64, q: f64) -> ExpandedModel {
        try_geometric_toy(b, q).expect("toy parameters out of range")
    }
}
