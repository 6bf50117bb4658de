use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised by model construction, evaluation, simulation and fitting.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("{what}[{index}] = {value} is negative")]
    NegativeEntry {
        what: &'static str,
        index: String,
        value: f64,
    },

    #[error("{what}[{index}] = {value} exceeds one")]
    EntryExceedsOne {
        what: &'static str,
        index: String,
        value: f64,
    },

    #[error("row {row} of T sums to {sum}, which exceeds one")]
    RowSumExceedsOne { row: usize, sum: f64 },

    #[error("initial distribution sums to {sum}, expected 1")]
    InitialNotNormalized { sum: f64 },

    #[error("absorption is not certain: I - T is singular or its inverse is not a nonnegative finite matrix")]
    AbsorptionNotGuaranteed,

    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("absorption time support starts at 1, got n = {0}")]
    InvalidN(u64),

    #[error("q[{state}] = 0: geometric reward probability must be positive")]
    ZeroRewardProbability { state: usize },

    #[error("{name} = {value} is outside its admissible range {range}")]
    InvalidParameter {
        name: String,
        value: f64,
        range: &'static str,
    },

    #[error("the inertia-escalation model needs at least 2 severity levels, got {0}")]
    DimensionTooSmall(usize),

    #[error("geometric generating function diverges: (1 - q[{state}]) * theta1 >= 1")]
    DivergentSeries { state: usize },

    #[error("generating function diverges: theta outside the radius of convergence")]
    OutsideRadius,

    #[error("resolvent I - B*Delta is singular")]
    SingularResolvent,

    #[error("trajectory exceeded {max_steps} steps without absorption")]
    StepCapExceeded { max_steps: u64 },

    #[error("lattice needs {values} stored values, above the budget of {budget}")]
    LatticeTooLarge { values: usize, budget: usize },

    #[error("lattice point ({y1}, {y2}) lies outside the computed tables")]
    OutsideLattice { y1: usize, y2: usize },

    #[error("observation {index} = ({y1}, {y2}) has zero likelihood under the current parameters")]
    ZeroLikelihoodObservation { index: usize, y1: usize, y2: usize },

    #[error("expected counts are degenerate: {0}")]
    DegenerateCounts(&'static str),

    #[error("weighted logistic regression did not converge within {iterations} iterations")]
    IrlsNonConvergence { iterations: usize },

    #[error("design matrix is rank deficient")]
    RankDeficientDesign,

    #[error("log-likelihood decreased from {previous} to {current} at iteration {iteration}")]
    NonMonotoneLikelihood {
        iteration: usize,
        previous: f64,
        current: f64,
    },

    #[error("enumeration would need {cells} cells, above the budget of {budget}")]
    BudgetExceeded { cells: usize, budget: usize },

    #[error("unknown parameter '{0}'")]
    UnknownParameter(String),

    #[error("{0}")]
    Invalid(String),
}
