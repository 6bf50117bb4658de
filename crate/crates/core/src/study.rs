//! Simulation-and-refit studies: draw a dataset from a known truth, fit it by
//! EM and report the estimates, once per replicate.

use std::fmt;
use std::str::FromStr;

use rand::RngCore;
use rayon::prelude::*;

use crate::em::{em_fit, EmConfig, FitResult, IemFamily, IemRewards, TemplateFamily};
use crate::error::{Error, Result};
use crate::iem::{linear_reward_probs, RegressionIemSpec, RewardMode};
use crate::rrdph::toys::{try_bernoulli_toy, try_geometric_toy};
use crate::rrdph::{JointObservation, RewardKind, RewardProbs};
use crate::simulate::{sample_covariates, simulate_expanded, simulate_iem_dataset, substream, SimConfig};

/// Truth of the Bernoulli toy: `(b, p, q)`.
pub const BERNOULLI_TOY_TRUTH: [f64; 3] = [0.5, 0.6, 0.3];
/// Truth of the geometric toy: `(b, q)`.
pub const GEOMETRIC_TOY_TRUTH: [f64; 2] = [0.5, 0.6];
/// Severity levels of the regression studies.
pub const IEM_STUDY_LEVELS: usize = 4;
pub const IEM_BETA_NU: [f64; 2] = [-0.1, 0.2];
pub const IEM_BETA_ETA: [f64; 2] = [0.1, -0.25];
/// Reward intercept and slope, giving `q_1 = 0.1` and `q_4 = 0.6`.
pub const IEM_REWARD_COEFFICIENTS: [f64; 2] = [-3.064788, 0.8675632];
/// Values the single covariate is drawn from.
pub const IEM_COVARIATE_POOL: [f64; 4] = [-10.0, 0.0, 5.0, 20.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Study {
    BernoulliToy,
    GeometricToy,
    IemRewardRegression,
    IemFreeRewards,
}

impl Study {
    pub const ALL: [Study; 4] = [
        Study::BernoulliToy,
        Study::GeometricToy,
        Study::IemRewardRegression,
        Study::IemFreeRewards,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Study::BernoulliToy => "bernoulli-toy",
            Study::GeometricToy => "geometric-toy",
            Study::IemRewardRegression => "iem-reward-regression",
            Study::IemFreeRewards => "iem-free-rewards",
        }
    }

    /// Reported quantities paired with their true values.
    pub fn truth(self) -> Vec<(String, f64)> {
        let named = |pairs: &[(&str, f64)]| pairs.iter().map(|(n, v)| (n.to_string(), *v)).collect::<Vec<_>>();
        let q = linear_reward_probs(IEM_REWARD_COEFFICIENTS[0], IEM_REWARD_COEFFICIENTS[1], IEM_STUDY_LEVELS);
        let mut out = match self {
            Study::BernoulliToy => {
                let [b, p, q] = BERNOULLI_TOY_TRUTH;
                return named(&[("b", b), ("p", p), ("q", q)]);
            }
            Study::GeometricToy => {
                let [b, q] = GEOMETRIC_TOY_TRUTH;
                return named(&[("b", b), ("q", q)]);
            }
            Study::IemRewardRegression | Study::IemFreeRewards => named(&[
                ("beta_nu0", IEM_BETA_NU[0]),
                ("beta_nu1", IEM_BETA_NU[1]),
                ("beta_eta0", IEM_BETA_ETA[0]),
                ("beta_eta1", IEM_BETA_ETA[1]),
            ]),
        };
        if self == Study::IemRewardRegression {
            out.push(("q_b0".into(), IEM_REWARD_COEFFICIENTS[0]));
            out.push(("q_b1".into(), IEM_REWARD_COEFFICIENTS[1]));
        }
        out.extend(q.0.iter().enumerate().map(|(j, v)| (format!("q{}", j + 1), *v)));
        out
    }

    pub fn columns(self) -> Vec<String> {
        self.truth().into_iter().map(|(n, _)| n).collect()
    }

    /// Simulates one dataset; returns the observations and the covariate rows.
    pub fn simulate(self, n: usize, seed: u64) -> Result<(Vec<JointObservation>, Vec<Vec<f64>>)> {
        let cfg = SimConfig::new(seed, n);
        match self {
            Study::BernoulliToy => {
                let [b, p, q] = BERNOULLI_TOY_TRUTH;
                Ok((simulate_expanded(&try_bernoulli_toy(b, p, q)?, &cfg)?, Vec::new()))
            }
            Study::GeometricToy => {
                let [b, q] = GEOMETRIC_TOY_TRUTH;
                Ok((simulate_expanded(&try_geometric_toy(b, q)?, &cfg)?, Vec::new()))
            }
            Study::IemRewardRegression | Study::IemFreeRewards => {
                let rows: Vec<Vec<f64>> = sample_covariates(&IEM_COVARIATE_POOL, n, seed)
                    .into_iter()
                    .map(|x| vec![x])
                    .collect();
                let spec = RegressionIemSpec {
                    d: IEM_STUDY_LEVELS,
                    beta_nu: IEM_BETA_NU.to_vec(),
                    beta_eta: IEM_BETA_ETA.to_vec(),
                    reward: RewardMode::Linear {
                        b0: IEM_REWARD_COEFFICIENTS[0],
                        b1: IEM_REWARD_COEFFICIENTS[1],
                    },
                    design: RegressionIemSpec::design_from_covariates(&rows)?,
                };
                Ok((simulate_iem_dataset(&spec, &cfg)?, rows))
            }
        }
    }

    /// Fits the study's estimation model.
    pub fn fit(self, observations: &[JointObservation], rows: &[Vec<f64>], config: &EmConfig) -> Result<FitResult> {
        match self {
            Study::BernoulliToy => {
                let m = try_bernoulli_toy(0.5, 0.5, 0.5)?;
                let fam = TemplateFamily::new(RewardKind::Bernoulli, m.base(), &RewardProbs(vec![1.0, 1.0, 0.5, 0.5]))?;
                em_fit(&fam, observations, config)
            }
            Study::GeometricToy => {
                let m = try_geometric_toy(0.5, 0.5)?;
                let fam = TemplateFamily::new(RewardKind::Geometric, m.base(), &RewardProbs(vec![1.0, 1.0, 0.5]))?;
                em_fit(&fam, observations, config)
            }
            Study::IemRewardRegression => {
                let fam = IemFamily::regression(IEM_STUDY_LEVELS, IemRewards::Linear, rows)?;
                em_fit(&fam, observations, config)
            }
            Study::IemFreeRewards => {
                let fam = IemFamily::regression(IEM_STUDY_LEVELS, IemRewards::Free, rows)?;
                em_fit(&fam, observations, config)
            }
        }
    }

    /// Reported quantities from a fit, in the order of [`Study::columns`].
    pub fn report(self, fit: &FitResult) -> Vec<f64> {
        let get = |name: &str| fit.get(name).unwrap_or(f64::NAN);
        match self {
            Study::BernoulliToy => vec![get("T[1,2]"), get("p[3]"), get("p[4]")],
            Study::GeometricToy => vec![get("T[1,2]"), get("q[3]")],
            Study::IemRewardRegression => {
                let (b0, b1) = (get("q_b0"), get("q_b1"));
                let mut out = vec![get("beta_nu0"), get("beta_nu1"), get("beta_eta0"), get("beta_eta1"), b0, b1];
                out.extend(linear_reward_probs(b0, b1, IEM_STUDY_LEVELS).0);
                out
            }
            Study::IemFreeRewards => {
                let mut out = vec![get("beta_nu0"), get("beta_nu1"), get("beta_eta0"), get("beta_eta1")];
                out.extend((1..=IEM_STUDY_LEVELS).map(|j| get(&format!("q{j}"))));
                out
            }
        }
    }
}

impl fmt::Display for Study {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Study {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Study::ALL.into_iter().find(|st| st.name() == s).ok_or_else(|| {
            let known: Vec<&str> = Study::ALL.iter().map(|st| st.name()).collect();
            Error::Invalid(format!("unknown study '{s}'; expected one of {}", known.join(", ")))
        })
    }
}

/// Outcome of one replicate.
#[derive(Debug, Clone)]
pub struct Replicate {
    pub index: usize,
    /// Seed of this replicate's dataset.
    pub seed: u64,
    pub values: Vec<f64>,
    pub fit: FitResult,
}

/// Seed of replicate `index` under the master `seed`.
pub fn replicate_seed(seed: u64, index: usize) -> u64 {
    substream(seed, index as u64).next_u64()
}

/// Runs `replicates` independent replicates concurrently; results are in
/// replicate order.
pub fn run_study(study: Study, replicates: usize, n: usize, seed: u64, config: &EmConfig) -> Result<Vec<Replicate>> {
    if replicates == 0 {
        return Err(Error::Invalid("replicates must be at least 1".into()));
    }
    (0..replicates)
        .into_par_iter()
        .map(|index| {
            let s = replicate_seed(seed, index);
            let (obs, rows) = study.simulate(n, s)?;
            let fit = study.fit(&obs, &rows, config)?;
            Ok(Replicate {
                index,
                seed: s,
                values: study.report(&fit),
                fit,
            })
        })
        .collect()
}
