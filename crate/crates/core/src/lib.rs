//! Reward-resolved discrete phase-type distributions: joint pmf of accumulated
//! reward and time to absorption, simulation, and EM estimation.

// `!(x > 0.0)` rejects NaN on purpose; index loops walk several matrices at once.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cli;
pub mod compare;
pub mod dph;
pub mod em;
pub mod error;
pub mod glm;
pub mod io;
pub mod iem;
pub mod lattice;
pub mod oracle;
pub mod rrdph;
pub mod simulate;
pub mod study;

pub use dph::{dph_mean, dph_pmf, exit_vector, validate_dph, DphModel};
pub use error::{Error, Result};
pub use rrdph::{
    expand, expand_bernoulli, expand_geometric, joint_pmf, joint_pmf_table, pgf_compact, pgf_expanded,
    ExpandedModel, JointObservation, RewardKind, RewardProbs, RewardType,
};
