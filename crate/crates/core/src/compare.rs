//! Accumulated-reward distributions with arbitrary per-state rewards, used to
//! contrast random rewards with their fixed-mean counterparts.

use serde::{Deserialize, Serialize};

use crate::dph::DphModel;
use crate::error::{Error, Result};

/// Reward emitted on each visit to a state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateReward {
    /// Deterministic nonnegative integer.
    Fixed(u32),
    /// 1 with probability `p`, else 0.
    Bernoulli(f64),
    /// Number of failures before the first success with success probability `q`.
    Geometric(f64),
}

impl StateReward {
    pub fn mean(&self) -> f64 {
        match *self {
            StateReward::Fixed(r) => r as f64,
            StateReward::Bernoulli(p) => p,
            StateReward::Geometric(q) => (1.0 - q) / q,
        }
    }

    fn validate(&self, state: usize) -> Result<()> {
        let bad = |name: &str, value: f64, range: &'static str| Error::InvalidParameter {
            name: format!("{name}[{state}]"),
            value,
            range,
        };
        match *self {
            StateReward::Fixed(_) => Ok(()),
            StateReward::Bernoulli(p) if (0.0..=1.0).contains(&p) => Ok(()),
            StateReward::Bernoulli(p) => Err(bad("p", p, "[0, 1]")),
            StateReward::Geometric(q) if q > 0.0 && q <= 1.0 => Ok(()),
            StateReward::Geometric(q) => Err(bad("q", q, "(0, 1]")),
        }
    }

    /// `P(reward = k)` for `k = 0..=k_max`.
    fn pmf(&self, k_max: usize) -> Vec<f64> {
        let mut out = vec![0.0; k_max + 1];
        match *self {
            StateReward::Fixed(r) => {
                if (r as usize) <= k_max {
                    out[r as usize] = 1.0;
                }
            }
            StateReward::Bernoulli(p) => {
                out[0] = 1.0 - p;
                if k_max >= 1 {
                    out[1] = p;
                }
            }
            StateReward::Geometric(q) => {
                let mut pk = q;
                for v in out.iter_mut() {
                    *v = pk;
                    pk *= 1.0 - q;
                }
            }
        }
        out
    }
}

/// A phase-type chain with one reward law per state.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardChain {
    base: DphModel,
    rewards: Vec<StateReward>,
}

/// Probabilities of the accumulated reward `0..=psi_max` and the mass beyond.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardPmf {
    pub pmf: Vec<f64>,
    pub tail: f64,
}

impl RewardChain {
    pub fn new(base: DphModel, rewards: Vec<StateReward>) -> Result<Self> {
        if rewards.len() != base.dim() {
            return Err(Error::DimensionMismatch {
                what: "rewards",
                expected: base.dim(),
                found: rewards.len(),
            });
        }
        for (i, r) in rewards.iter().enumerate() {
            r.validate(i + 1)?;
        }
        Ok(RewardChain { base, rewards })
    }

    pub fn base(&self) -> &DphModel {
        &self.base
    }

    pub fn rewards(&self) -> &[StateReward] {
        &self.rewards
    }

    /// `E[psi] = pi N rbar` with `rbar` the per-visit mean rewards.
    pub fn reward_mean(&self) -> f64 {
        let n = self.base.fundamental();
        let pi = self.base.pi();
        let d = self.base.dim();
        (0..d)
            .map(|k| {
                let visits: f64 = (0..d).map(|j| pi[j] * n[(j, k)]).sum();
                visits * self.rewards[k].mean()
            })
            .sum()
    }

    /// The same chain with every random reward replaced by its mean, which
    /// must be an integer (within 1e-9).
    pub fn fixed_variant(&self) -> Result<RewardChain> {
        let rewards = self
            .rewards
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let m = r.mean();
                if (m - m.round()).abs() > 1e-9 || m < 0.0 || m > u32::MAX as f64 {
                    Err(Error::InvalidParameter {
                        name: format!("mean reward of state {}", i + 1),
                        value: m,
                        range: "nonnegative integers",
                    })
                } else {
                    Ok(StateReward::Fixed(m.round() as u32))
                }
            })
            .collect::<Result<_>>()?;
        RewardChain::new(self.base.clone(), rewards)
    }

    /// Distribution of the accumulated reward, by propagating the mass of
    /// paths that have just entered each state until less than `1e-15`
    /// remains in the chain.
    pub fn reward_pmf(&self, psi_max: usize) -> Result<RewardPmf> {
        const MAX_STEPS: usize = 1_000_000;
        let d = self.base.dim();
        let w = psi_max + 1;
        let laws: Vec<Vec<f64>> = self.rewards.iter().map(|r| r.pmf(psi_max)).collect();
        let t = self.base.t();
        let exit = self.base.exit_vector();
        let mut pmf = vec![0.0; w];
        let mut mass = vec![0.0; d * w];
        for s in 0..d {
            mass[s * w] = self.base.pi()[s];
        }
        let mut emitted = vec![0.0; d * w];
        for _ in 0..MAX_STEPS {
            let live: f64 = mass.iter().sum();
            if live < 1e-15 {
                let inside: f64 = pmf.iter().sum();
                return Ok(RewardPmf {
                    pmf,
                    tail: (1.0 - inside).max(0.0),
                });
            }
            emitted.iter_mut().for_each(|v| *v = 0.0);
            for s in 0..d {
                for psi in 0..w {
                    let m = mass[s * w + psi];
                    if m == 0.0 {
                        continue;
                    }
                    for (k, &pk) in laws[s][..w - psi].iter().enumerate() {
                        emitted[s * w + psi + k] += m * pk;
                    }
                }
            }
            mass.iter_mut().for_each(|v| *v = 0.0);
            for s in 0..d {
                for psi in 0..w {
                    let m = emitted[s * w + psi];
                    if m == 0.0 {
                        continue;
                    }
                    pmf[psi] += m * exit[s];
                    for k in 0..d {
                        let p = t[(s, k)];
                        if p != 0.0 {
                            mass[k * w + psi] += m * p;
                        }
                    }
                }
            }
        }
        Err(Error::StepCapExceeded {
            max_steps: MAX_STEPS as u64,
        })
    }
}
