//! Parameterised model families that the EM loop can fit.

use nalgebra::{DMatrix, DVector};

use super::counts::{group_iem_counts, IemCounts, TransitionCounts};
use super::mstep::{fit_logistic, m_step_linear_rewards};
use crate::dph::{validate_dph, DphModel};
use crate::error::{Error, Result};
use crate::iem::{iem_base, logistic, logit};
use crate::rrdph::{expand, ExpandedModel, JointObservation, RewardKind, RewardProbs};

/// Probabilities produced by a fit are kept this far from 0 and 1 so that the
/// next model stays valid.
pub const PROB_FLOOR: f64 = 1e-12;

fn clamp_prob(v: f64) -> f64 {
    v.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
}

/// A family of expanded models indexed by a real parameter vector.
///
/// Observations are split into groups; all observations in a group share one
/// model.
pub trait EmFamily: Sync {
    fn names(&self) -> Vec<String>;
    /// Number of observations the family expects, if it is tied to a dataset.
    fn n_observations(&self) -> Option<usize> {
        None
    }
    fn n_groups(&self) -> usize {
        1
    }
    fn group_of(&self, _observation: usize) -> usize {
        0
    }
    fn initial(&self, observations: &[JointObservation]) -> Vec<f64>;
    /// Candidate starting points; the first is [`EmFamily::initial`].
    fn starting_points(&self, observations: &[JointObservation]) -> Vec<Vec<f64>> {
        vec![self.initial(observations)]
    }
    fn models(&self, theta: &[f64]) -> Result<Vec<ExpandedModel>>;
    /// New parameters from per-group expected counts. Entries flagged in
    /// `fixed` must be returned unchanged. Also returns warnings.
    fn m_step(&self, theta: &[f64], counts: &[TransitionCounts], fixed: &[bool]) -> Result<(Vec<f64>, Vec<String>)>;
}

/// How reward probabilities of an inertia-escalation fit are parameterised.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IemRewards {
    Free,
    Linear,
}

#[derive(Debug, Clone)]
struct CovariateGroups {
    rows: Vec<Vec<f64>>,
    assignment: Vec<usize>,
}

/// Inertia-escalation models, optionally with logistic regressions of `nu`
/// and `eta` on covariates.
#[derive(Debug, Clone)]
pub struct IemFamily {
    d: usize,
    rewards: IemRewards,
    covariates: Option<CovariateGroups>,
    start: Option<Vec<f64>>,
}

impl IemFamily {
    pub fn homogeneous(d: usize, rewards: IemRewards) -> Result<Self> {
        if d < 2 {
            return Err(Error::DimensionTooSmall(d));
        }
        Ok(IemFamily {
            d,
            rewards,
            covariates: None,
            start: None,
        })
    }

    /// One covariate row per observation; an intercept column is added.
    pub fn regression(d: usize, rewards: IemRewards, covariates: &[Vec<f64>]) -> Result<Self> {
        let mut f = Self::homogeneous(d, rewards)?;
        let design = crate::iem::RegressionIemSpec::design_from_covariates(covariates)?;
        if design.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("covariates must be finite".into()));
        }
        let (rows, assignment) = crate::iem::group_rows(&design);
        f.covariates = Some(CovariateGroups { rows, assignment });
        Ok(f)
    }

    /// Start distribution over levels; defaults to level 1.
    pub fn with_start(mut self, start: Vec<f64>) -> Self {
        self.start = Some(start);
        self
    }

    pub fn d(&self) -> usize {
        self.d
    }

    fn n_coef(&self) -> usize {
        self.covariates.as_ref().map(|c| c.rows[0].len()).unwrap_or(0)
    }

    /// Number of parameters describing `nu` and `eta` together.
    fn n_inertia(&self) -> usize {
        match &self.covariates {
            None => 2,
            Some(_) => 2 * self.n_coef(),
        }
    }

    fn reward_probs(&self, theta: &[f64]) -> RewardProbs {
        let r = &theta[self.n_inertia()..];
        match self.rewards {
            IemRewards::Free => RewardProbs(r.to_vec()),
            IemRewards::Linear => crate::iem::linear_reward_probs(r[0], r[1], self.d),
        }
    }

    /// `(nu, eta)` of each group.
    pub fn group_params(&self, theta: &[f64]) -> Vec<(f64, f64)> {
        match &self.covariates {
            None => vec![(theta[0], theta[1])],
            Some(c) => {
                let p = self.n_coef();
                let dot = |row: &[f64], b: &[f64]| row.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
                c.rows
                    .iter()
                    .map(|row| {
                        (
                            clamp_prob(logistic(dot(row, &theta[..p]))),
                            clamp_prob(logistic(dot(row, &theta[p..2 * p]))),
                        )
                    })
                    .collect()
            }
        }
    }
}

impl EmFamily for IemFamily {
    fn names(&self) -> Vec<String> {
        let mut names = Vec::new();
        match &self.covariates {
            None => names.extend(["nu".to_string(), "eta".to_string()]),
            Some(_) => {
                let p = self.n_coef();
                names.extend((0..p).map(|i| format!("beta_nu{i}")));
                names.extend((0..p).map(|i| format!("beta_eta{i}")));
            }
        }
        match self.rewards {
            IemRewards::Free => names.extend((1..=self.d).map(|j| format!("q{j}"))),
            IemRewards::Linear => names.extend(["q_b0".to_string(), "q_b1".to_string()]),
        }
        names
    }

    fn n_observations(&self) -> Option<usize> {
        self.covariates.as_ref().map(|c| c.assignment.len())
    }

    fn n_groups(&self) -> usize {
        self.covariates.as_ref().map(|c| c.rows.len()).unwrap_or(1)
    }

    fn group_of(&self, observation: usize) -> usize {
        self.covariates.as_ref().map(|c| c.assignment[observation]).unwrap_or(0)
    }

    fn initial(&self, observations: &[JointObservation]) -> Vec<f64> {
        let n = observations.len().max(1) as f64;
        let psi = observations.iter().map(|y| y.y1 as f64).sum::<f64>() / n;
        let tau = observations.iter().map(|y| y.y2 as f64).sum::<f64>() / n;
        let q0 = if tau + psi > 0.0 { clamp_prob(tau / (tau + psi)) } else { 0.5 };
        let mut theta = match &self.covariates {
            None => vec![0.5, 0.5],
            Some(_) => vec![0.0; 2 * self.n_coef()],
        };
        match self.rewards {
            IemRewards::Free => theta.extend(std::iter::repeat_n(q0, self.d)),
            IemRewards::Linear => theta.extend([logit(q0), 0.0]),
        }
        theta
    }

    /// The default start plus variants with escalation probability 0.2 and
    /// 0.8: paths that climb through the levels and paths that linger low
    /// can produce similar totals, so the likelihood may have a mode for each.
    fn starting_points(&self, observations: &[JointObservation]) -> Vec<Vec<f64>> {
        let base = self.initial(observations);
        let eta_at = match &self.covariates {
            None => 1,
            Some(_) => self.n_coef(),
        };
        let mut starts = vec![base.clone()];
        for eta in [0.2, 0.8] {
            let mut t = base.clone();
            t[eta_at] = match &self.covariates {
                None => eta,
                Some(_) => logit(eta),
            };
            starts.push(t);
        }
        starts
    }

    fn models(&self, theta: &[f64]) -> Result<Vec<ExpandedModel>> {
        let q = self.reward_probs(theta);
        self.group_params(theta)
            .into_iter()
            .map(|(nu, eta)| {
                let base = iem_base(nu, eta, self.d, self.start.as_deref())?;
                crate::rrdph::expand_geometric(&base, &q)
            })
            .collect()
    }

    fn m_step(&self, theta: &[f64], counts: &[TransitionCounts], fixed: &[bool]) -> Result<(Vec<f64>, Vec<String>)> {
        let grouped: Vec<IemCounts> = counts.iter().map(group_iem_counts).collect();
        let mut pooled = grouped[0].clone();
        for g in &grouped[1..] {
            pooled.s_stay += g.s_stay;
            pooled.s_up += g.s_up;
            pooled.s_down += g.s_down;
            for j in 0..self.d {
                pooled.f[j] += g.f[j];
                pooled.u[j] += g.u[j];
            }
        }
        let mut next = theta.to_vec();
        let mut warnings = Vec::new();
        let k = self.n_inertia();
        match &self.covariates {
            None => {
                let all = pooled.s_stay + pooled.s_up + pooled.s_down;
                let moves = pooled.s_up + pooled.s_down;
                if !fixed[0] {
                    if !(all > 0.0) {
                        return Err(Error::DegenerateCounts("no level transitions to estimate nu"));
                    }
                    next[0] = clamp_prob(pooled.s_stay / all);
                }
                if !fixed[1] {
                    if !(moves > 0.0) {
                        return Err(Error::DegenerateCounts("no level changes to estimate eta"));
                    }
                    next[1] = clamp_prob(pooled.s_up / moves);
                }
            }
            Some(c) => {
                let p = self.n_coef();
                let stay: Vec<f64> = grouped.iter().map(|g| g.s_stay).collect();
                let all: Vec<f64> = grouped.iter().map(|g| g.s_stay + g.s_up + g.s_down).collect();
                let up: Vec<f64> = grouped.iter().map(|g| g.s_up).collect();
                let moves: Vec<f64> = grouped.iter().map(|g| g.s_up + g.s_down).collect();
                let nu = fit_logistic(&c.rows, &stay, &all, &theta[..p], &fixed[..p], "no level transitions")?;
                let eta = fit_logistic(&c.rows, &up, &moves, &theta[p..k], &fixed[p..k], "no level changes")?;
                next[..p].copy_from_slice(&nu);
                next[p..k].copy_from_slice(&eta);
            }
        }
        match self.rewards {
            IemRewards::Free => {
                for j in 0..self.d {
                    if fixed[k + j] {
                        continue;
                    }
                    let (u, f) = (pooled.u[j], pooled.f[j]);
                    if u > 0.0 {
                        next[k + j] = ((u - f) / u).clamp(PROB_FLOOR, 1.0);
                    } else {
                        warnings.push(format!("level {} never visited; q{} kept", j + 1, j + 1));
                    }
                }
            }
            IemRewards::Linear => {
                let (b0, b1) = m_step_linear_rewards(&pooled, (theta[k], theta[k + 1]), [fixed[k], fixed[k + 1]])?;
                next[k] = b0;
                next[k + 1] = b1;
            }
        }
        Ok((next, warnings))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    Pi(usize),
    T(usize, usize),
    Reward(usize),
}

/// Phase-type chain with a fixed sparsity pattern whose nonzero entries and
/// interior reward probabilities are estimated.
///
/// Entries that are zero in the template stay zero. A row of `T` with at least
/// two possible outcomes (including absorption) has all its nonzero entries
/// free; absorption takes the remaining mass. The same holds for `pi`. Reward
/// probabilities of exactly 0 or 1 are structural and never estimated.
#[derive(Debug, Clone)]
pub struct TemplateFamily {
    kind: RewardKind,
    pi: DVector<f64>,
    t: DMatrix<f64>,
    rewards: Vec<f64>,
    exit_allowed: Vec<bool>,
    slots: Vec<Slot>,
}

impl TemplateFamily {
    pub fn new(kind: RewardKind, template: &DphModel, rewards: &RewardProbs) -> Result<Self> {
        let d = template.dim();
        if rewards.len() != d {
            return Err(Error::DimensionMismatch {
                what: "rewards",
                expected: d,
                found: rewards.len(),
            });
        }
        // validates the reward vector for this kind
        expand(template, kind, rewards)?;
        let exit_allowed: Vec<bool> = template.exit_vector().iter().map(|&v| v > 0.0).collect();
        let mut slots = Vec::new();
        let support: Vec<usize> = (0..d).filter(|&k| template.pi()[k] > 0.0).collect();
        if support.len() > 1 {
            slots.extend(support.iter().map(|&k| Slot::Pi(k)));
        }
        for j in 0..d {
            let row: Vec<usize> = (0..d).filter(|&k| template.t()[(j, k)] > 0.0).collect();
            if row.len() + exit_allowed[j] as usize > 1 {
                slots.extend(row.iter().map(|&k| Slot::T(j, k)));
            }
        }
        for k in 0..d {
            let r = rewards.as_slice()[k];
            if r > 0.0 && r < 1.0 {
                slots.push(Slot::Reward(k));
            }
        }
        Ok(TemplateFamily {
            kind,
            pi: template.pi().clone(),
            t: template.t().clone(),
            rewards: rewards.as_slice().to_vec(),
            exit_allowed,
            slots,
        })
    }

    pub fn kind(&self) -> RewardKind {
        self.kind
    }

    fn assemble(&self, theta: &[f64]) -> (DVector<f64>, DMatrix<f64>, RewardProbs) {
        let mut pi = self.pi.clone();
        let mut t = self.t.clone();
        let mut r = self.rewards.clone();
        for (slot, &v) in self.slots.iter().zip(theta) {
            match *slot {
                Slot::Pi(k) => pi[k] = v,
                Slot::T(j, k) => t[(j, k)] = v,
                Slot::Reward(k) => r[k] = v,
            }
        }
        (pi, t, RewardProbs(r))
    }

    /// Rescales the free entries of one constrained group to
    /// `(1 - fixed mass) * count / total` over the non-fixed outcomes, where
    /// `extra` is the count of the implicit outcome (absorption), if any.
    fn share(next: &mut [f64], theta: &[f64], members: &[(usize, f64)], extra: f64, fixed: &[bool]) {
        let fixed_mass: f64 = members.iter().filter(|(i, _)| fixed[*i]).map(|(i, _)| theta[*i]).sum();
        let total: f64 = members.iter().filter(|(i, _)| !fixed[*i]).map(|(_, c)| c).sum::<f64>() + extra;
        if !(total > 0.0) {
            return;
        }
        let mass = (1.0 - fixed_mass).max(0.0);
        for &(i, c) in members {
            if !fixed[i] {
                next[i] = mass * c / total;
            }
        }
    }
}

impl EmFamily for TemplateFamily {
    fn names(&self) -> Vec<String> {
        let prefix = match self.kind {
            RewardKind::Bernoulli => "p",
            RewardKind::Geometric => "q",
        };
        self.slots
            .iter()
            .map(|s| match *s {
                Slot::Pi(k) => format!("pi[{}]", k + 1),
                Slot::T(j, k) => format!("T[{},{}]", j + 1, k + 1),
                Slot::Reward(k) => format!("{prefix}[{}]", k + 1),
            })
            .collect()
    }

    fn initial(&self, _observations: &[JointObservation]) -> Vec<f64> {
        let d = self.pi.len();
        let support = self.slots.iter().filter(|s| matches!(s, Slot::Pi(_))).count();
        self.slots
            .iter()
            .map(|s| match *s {
                Slot::Pi(_) => 1.0 / support as f64,
                Slot::T(j, _) => {
                    let outcomes = (0..d).filter(|&k| self.t[(j, k)] > 0.0).count() + self.exit_allowed[j] as usize;
                    1.0 / outcomes as f64
                }
                Slot::Reward(_) => 0.5,
            })
            .collect()
    }

    fn models(&self, theta: &[f64]) -> Result<Vec<ExpandedModel>> {
        let (pi, t, r) = self.assemble(theta);
        let base = validate_dph(pi, t)?;
        Ok(vec![expand(&base, self.kind, &r)?])
    }

    fn m_step(&self, theta: &[f64], counts: &[TransitionCounts], fixed: &[bool]) -> Result<(Vec<f64>, Vec<String>)> {
        let c = &counts[0];
        let d = self.pi.len();
        let mut moves = DMatrix::<f64>::zeros(d, d);
        let mut exits = vec![0.0; d];
        let mut starts = vec![0.0; d];
        let mut rewarded = vec![0.0; d];
        let mut entries = vec![0.0; d];
        let mut outgoing = vec![0.0; d];
        for j in 0..d {
            for a in [j, j + d] {
                for k in 0..d {
                    let to_time = c.get(a, k);
                    let to_reward = c.get(a, k + d);
                    match self.kind {
                        RewardKind::Bernoulli => moves[(j, k)] += to_time + to_reward,
                        RewardKind::Geometric => moves[(j, k)] += to_time,
                    }
                    outgoing[j] += to_time + to_reward;
                    entries[k] += to_time + to_reward;
                    rewarded[k] += to_reward;
                }
                exits[j] += c.absorptions[a];
                outgoing[j] += c.absorptions[a];
            }
            starts[j] = c.initial[j] + c.initial[j + d];
            entries[j] += starts[j];
            rewarded[j] += c.initial[j + d];
        }
        let mut next = theta.to_vec();
        let mut warnings = Vec::new();

        let pi_members: Vec<(usize, f64)> = self
            .slots
            .iter()
            .enumerate()
            .filter_map(|(i, s)| match *s {
                Slot::Pi(k) => Some((i, starts[k])),
                _ => None,
            })
            .collect();
        Self::share(&mut next, theta, &pi_members, 0.0, fixed);
        for j in 0..d {
            let members: Vec<(usize, f64)> = self
                .slots
                .iter()
                .enumerate()
                .filter_map(|(i, s)| match *s {
                    Slot::T(r, k) if r == j => Some((i, moves[(j, k)])),
                    _ => None,
                })
                .collect();
            if !members.is_empty() {
                let extra = if self.exit_allowed[j] { exits[j] } else { 0.0 };
                Self::share(&mut next, theta, &members, extra, fixed);
            }
        }
        for (i, s) in self.slots.iter().enumerate() {
            let Slot::Reward(k) = *s else { continue };
            if fixed[i] {
                continue;
            }
            let v = match self.kind {
                RewardKind::Bernoulli => (entries[k] > 0.0).then(|| (rewarded[k] / entries[k]).clamp(0.0, 1.0)),
                RewardKind::Geometric => {
                    let failures = c.get(k, k + d) + c.get(k + d, k + d);
                    (outgoing[k] > 0.0).then(|| ((outgoing[k] - failures) / outgoing[k]).clamp(PROB_FLOOR, 1.0))
                }
            };
            match v {
                Some(v) => next[i] = v,
                None => warnings.push(format!("state {} never visited; reward kept", k + 1)),
            }
        }
        Ok((next, warnings))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::em::counts::expected_counts;

    fn toy_template() -> TemplateFamily {
        let base = DphModel::from_rows(
            &[1.0, 0.0, 0.0, 0.0],
            &[
                vec![0.0, 0.5, 0.5, 0.0],
                vec![0.0, 0.0, 0.0, 1.0],
                vec![0.0, 0.0, 0.0, 0.0],
                vec![0.0, 0.0, 0.0, 0.0],
            ],
        )
        .unwrap();
        TemplateFamily::new(RewardKind::Bernoulli, &base, &RewardProbs(vec![1.0, 1.0, 0.5, 0.5])).unwrap()
    }

    #[test]
    fn template_names() {
        assert_eq!(toy_template().names(), vec!["T[1,2]", "T[1,3]", "p[3]", "p[4]"]);
        let iem = IemFamily::homogeneous(3, IemRewards::Free).unwrap();
        assert_eq!(iem.names(), vec!["nu", "eta", "q1", "q2", "q3"]);
        let reg = IemFamily::regression(4, IemRewards::Linear, &[vec![0.0], vec![2.0]]).unwrap();
        assert_eq!(reg.names(), vec!["beta_nu0", "beta_nu1", "beta_eta0", "beta_eta1", "q_b0", "q_b1"]);
        assert_eq!(reg.n_groups(), 2);
    }

    #[test]
    fn template_m_step_on_unique_path() {
        let fam = toy_template();
        let theta = vec![0.5, 0.5, 0.6, 0.3];
        let m = fam.models(&theta).unwrap();
        // (2, 0) forces A -> C with C rewarded; (2, 1) forces A -> B -> D with D unrewarded
        let obs = [JointObservation::new(2, 0), JointObservation::new(2, 1), JointObservation::new(2, 1)];
        let c = expected_counts(&m[0], &obs).unwrap().counts;
        let (next, _) = fam.m_step(&theta, &[c], &[false; 4]).unwrap();
        assert!((next[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((next[1] - 1.0 / 3.0).abs() < 1e-12);
        assert!((next[2] - 1.0).abs() < 1e-12);
        assert!(next[3].abs() < 1e-12);
    }

    #[test]
    fn fixed_entry_shares_remaining_mass() {
        let fam = toy_template();
        let theta = vec![0.2, 0.8, 0.6, 0.3];
        let m = fam.models(&theta).unwrap();
        let c = expected_counts(&m[0], &[JointObservation::new(2, 0)]).unwrap().counts;
        let (next, _) = fam.m_step(&theta, &[c], &[true, false, false, false]).unwrap();
        assert_eq!(next[0], 0.2);
        assert!((next[1] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn regression_groups_share_rows() {
        let fam = IemFamily::regression(2, IemRewards::Free, &[vec![1.0], vec![3.0], vec![1.0]]).unwrap();
        assert_eq!(fam.group_of(0), fam.group_of(2));
        assert_ne!(fam.group_of(0), fam.group_of(1));
        let theta = vec![0.0, 1.0, 0.0, 0.0, 0.5, 0.5];
        let p = fam.group_params(&theta);
        assert!((p[0].0 - logistic(1.0)).abs() < 1e-15);
        assert!((p[1].0 - logistic(3.0)).abs() < 1e-15);
        assert_eq!(fam.models(&theta).unwrap().len(), 2);
    }

    #[test]
    fn iem_initial_values() {
        let fam = IemFamily::homogeneous(2, IemRewards::Linear).unwrap();
        let obs = [JointObservation::new(3, 1), JointObservation::new(1, 3)];
        let init = fam.initial(&obs);
        assert_eq!(init[..2], [0.5, 0.5]);
        assert!((init[2] - logit(0.5)).abs() < 1e-15);
        assert_eq!(init[3], 0.0);
    }
}
