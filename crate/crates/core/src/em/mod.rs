//! Expectation-maximization for reward-resolved phase-type models.

pub mod counts;
pub mod family;
pub mod fit;
pub mod mstep;

pub use counts::{
    expected_counts, expected_counts_per_observation, group_iem_counts, observation_counts, ExpectedCounts,
    IemCounts, TransitionCounts,
};
pub use family::{EmFamily, IemFamily, IemRewards, TemplateFamily};
pub use fit::{em_fit, EmConfig, FitResult};
pub use mstep::{m_step_iem, m_step_linear_rewards, m_step_regression, m_step_rewards};
