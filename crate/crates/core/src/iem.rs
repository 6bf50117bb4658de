//! Inertia-escalation models.
//!
//! A latent severity level in `1..=d` stays put with probability `nu` (inertia)
//! and otherwise moves up with probability `eta` or down with `1 - eta`.
//! Dropping below level 1 or rising above level `d` both end the process in
//! the same absorbing state. Visits emit geometric rewards, so an observation
//! is `(psi, tau)`: accumulated reward and number of visits.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dph::{validate_dph, DphModel};
use crate::error::{Error, Result};
use crate::rrdph::{expand_geometric, ExpandedModel, RewardProbs};

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn check_open_unit(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name: name.into(),
            value: v,
            range: "(0, 1)",
        })
    }
}

/// Tridiagonal sub-transition matrix with `nu` on the diagonal,
/// `(1 - nu) eta` above and `(1 - nu)(1 - eta)` below.
pub fn build_iem_t(nu: f64, eta: f64, d: usize) -> Result<DMatrix<f64>> {
    check_open_unit("nu", nu)?;
    check_open_unit("eta", eta)?;
    if d < 2 {
        return Err(Error::DimensionTooSmall(d));
    }
    Ok(iem_t_unchecked(nu, eta, d))
}

pub(crate) fn iem_t_unchecked(nu: f64, eta: f64, d: usize) -> DMatrix<f64> {
    let up = (1.0 - nu) * eta;
    let down = (1.0 - nu) * (1.0 - eta);
    DMatrix::from_fn(d, d, |i, j| {
        if i == j {
            nu
        } else if j == i + 1 {
            up
        } else if i == j + 1 {
            down
        } else {
            0.0
        }
    })
}

/// Reward probabilities `q_j = logistic(b0 + b1 j)` for `j = 1..=d`.
pub fn linear_reward_probs(b0: f64, b1: f64, d: usize) -> RewardProbs {
    RewardProbs((1..=d).map(|j| logistic(b0 + b1 * j as f64)).collect())
}

/// How reward probabilities are parameterised.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum RewardMode {
    Free { q: Vec<f64> },
    Linear { b0: f64, b1: f64 },
}

impl RewardMode {
    pub fn probs(&self, d: usize) -> Result<RewardProbs> {
        match self {
            RewardMode::Free { q } => {
                if q.len() != d {
                    return Err(Error::DimensionMismatch {
                        what: "q",
                        expected: d,
                        found: q.len(),
                    });
                }
                Ok(RewardProbs(q.clone()))
            }
            RewardMode::Linear { b0, b1 } => Ok(linear_reward_probs(*b0, *b1, d)),
        }
    }
}

/// A homogeneous inertia-escalation model.
#[derive(Debug, Clone, PartialEq)]
pub struct IemSpec {
    pub d: usize,
    pub nu: f64,
    pub eta: f64,
    pub q: RewardProbs,
    /// Start distribution; `None` starts in level 1.
    pub start: Option<Vec<f64>>,
}

impl IemSpec {
    pub fn new(d: usize, nu: f64, eta: f64, q: RewardProbs) -> Self {
        IemSpec {
            d,
            nu,
            eta,
            q,
            start: None,
        }
    }
}

fn start_vector(start: Option<&[f64]>, d: usize) -> Result<DVector<f64>> {
    match start {
        Some(s) => {
            if s.len() != d {
                return Err(Error::DimensionMismatch {
                    what: "start distribution",
                    expected: d,
                    found: s.len(),
                });
            }
            Ok(DVector::from_column_slice(s))
        }
        None => {
            let mut v = DVector::zeros(d);
            v[0] = 1.0;
            Ok(v)
        }
    }
}

/// Base chain of an inertia-escalation model.
pub fn iem_base(nu: f64, eta: f64, d: usize, start: Option<&[f64]>) -> Result<DphModel> {
    let t = build_iem_t(nu, eta, d)?;
    validate_dph(start_vector(start, d)?, t)
}

/// Geometric random-reward model for `spec`.
pub fn iem_model(spec: &IemSpec) -> Result<ExpandedModel> {
    let base = iem_base(spec.nu, spec.eta, spec.d, spec.start.as_deref())?;
    expand_geometric(&base, &spec.q)
}

/// Inertia-escalation model whose `nu` and `eta` follow logistic regressions on
/// per-subject covariates. `design` carries a leading column of ones.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionIemSpec {
    pub d: usize,
    pub beta_nu: Vec<f64>,
    pub beta_eta: Vec<f64>,
    pub reward: RewardMode,
    pub design: DMatrix<f64>,
}

impl RegressionIemSpec {
    /// Design matrix `[1, x]` for a list of covariate rows.
    pub fn design_from_covariates(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
        let r = rows.first().map(|x| x.len()).unwrap_or(0);
        if let Some((i, row)) = rows.iter().enumerate().find(|(_, x)| x.len() != r) {
            return Err(Error::Invalid(format!(
                "covariate row {} has {} entries, expected {r}",
                i + 1,
                row.len()
            )));
        }
        Ok(DMatrix::from_fn(rows.len(), r + 1, |i, j| if j == 0 { 1.0 } else { rows[i][j - 1] }))
    }
}

/// Models for each distinct covariate row of a regression model.
#[derive(Debug, Clone)]
pub struct SubjectModels {
    pub models: Vec<ExpandedModel>,
    /// `(nu, eta)` for each distinct model.
    pub params: Vec<(f64, f64)>,
    /// Model index of each subject.
    pub assignment: Vec<usize>,
}

/// Groups identical design rows; returns the representative rows and the
/// group of each subject.
pub fn group_rows(design: &DMatrix<f64>) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut rows = Vec::new();
    let mut assignment = Vec::with_capacity(design.nrows());
    for i in 0..design.nrows() {
        let row: Vec<f64> = design.row(i).iter().copied().collect();
        let key: Vec<u64> = row.iter().map(|v| v.to_bits()).collect();
        let g = *index.entry(key).or_insert_with(|| {
            rows.push(row);
            rows.len() - 1
        });
        assignment.push(g);
    }
    (rows, assignment)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Per-subject `(nu_i, eta_i)` and the corresponding models, one per distinct
/// covariate row.
pub fn subject_models(spec: &RegressionIemSpec) -> Result<SubjectModels> {
    let p = spec.design.ncols();
    for (name, b) in [("beta_nu", &spec.beta_nu), ("beta_eta", &spec.beta_eta)] {
        if b.len() != p {
            return Err(Error::DimensionMismatch {
                what: if name == "beta_nu" { "beta_nu" } else { "beta_eta" },
                expected: p,
                found: b.len(),
            });
        }
    }
    if spec.design.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invalid("design matrix has non-finite entries".into()));
    }
    let q = spec.reward.probs(spec.d)?;
    let (rows, assignment) = group_rows(&spec.design);
    let mut models = Vec::with_capacity(rows.len());
    let mut params = Vec::with_capacity(rows.len());
    for row in &rows {
        let nu = logistic(dot(row, &spec.beta_nu));
        let eta = logistic(dot(row, &spec.beta_eta));
        models.push(iem_model(&IemSpec::new(spec.d, nu, eta, q.clone()))?);
        params.push((nu, eta));
    }
    Ok(SubjectModels {
        models,
        params,
        assignment,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rrdph::JointObservation;
    use approx::assert_abs_diff_eq;

    #[test]
    fn tridiagonal_entries() {
        let t = build_iem_t(0.3, 0.7, 3).unwrap();
        let want = [[0.3, 0.49, 0.0], [0.21, 0.3, 0.49], [0.0, 0.21, 0.3]];
        for i in 0..3 {
            for j in 0..3 {
                assert_abs_diff_eq!(t[(i, j)], want[i][j], epsilon = 1e-15);
            }
        }
        let t = build_iem_t(0.5, 0.5, 2).unwrap();
        assert_eq!(t, DMatrix::from_row_slice(2, 2, &[0.5, 0.25, 0.25, 0.5]));
    }

    #[test]
    fn row_sums() {
        let (nu, eta, d) = (0.37, 0.81, 6);
        let t = build_iem_t(nu, eta, d).unwrap();
        for i in 1..d - 1 {
            assert_abs_diff_eq!(t.row(i).sum(), 1.0, epsilon = 1e-14);
        }
        assert_abs_diff_eq!(t.row(0).sum(), 1.0 - (1.0 - nu) * (1.0 - eta), epsilon = 1e-14);
        assert_abs_diff_eq!(t.row(d - 1).sum(), 1.0 - (1.0 - nu) * eta, epsilon = 1e-14);
    }

    #[test]
    fn parameter_errors() {
        assert!(matches!(build_iem_t(0.0, 0.5, 3), Err(Error::InvalidParameter { .. })));
        assert!(matches!(build_iem_t(0.5, 1.0, 3), Err(Error::InvalidParameter { .. })));
        assert!(matches!(build_iem_t(0.5, 0.5, 1), Err(Error::DimensionTooSmall(1))));
    }

    #[test]
    fn linear_rewards_reference_values() {
        let q = linear_reward_probs(-3.064788, 0.8675632, 4);
        assert_abs_diff_eq!(q.0[0], 0.1, epsilon = 1e-6);
        assert_abs_diff_eq!(q.0[3], 0.6, epsilon = 1e-6);
        // exact coefficients through the two anchor levels
        let b1 = (logit(0.6) - logit(0.1)) / 3.0;
        let b0 = logit(0.1) - b1;
        let exact = linear_reward_probs(b0, b1, 4);
        let inv = |x: f64| 1.0 / (1.0 + (-x).exp());
        assert_abs_diff_eq!(exact.0[1], inv(b0 + 2.0 * b1), epsilon = 1e-15);
        assert_abs_diff_eq!(exact.0[1], 0.2092154, epsilon = 1e-7);
        assert_abs_diff_eq!(exact.0[2], 0.3864882, epsilon = 1e-7);
        // published rounded values
        assert_abs_diff_eq!(q.0[1], 0.20924, epsilon = 5e-5);
        assert_abs_diff_eq!(q.0[2], 0.38648, epsilon = 5e-5);
        assert!(q.0.windows(2).all(|w| w[1] > w[0]));
        let flat = linear_reward_probs(0.0, 0.0, 5);
        assert!(flat.0.iter().all(|&v| v == 0.5));
        let dec = linear_reward_probs(1.0, -0.3, 5);
        assert!(dec.0.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn degenerate_rewards() {
        let m = iem_model(&IemSpec::new(2, 0.5, 0.5, RewardProbs(vec![1.0, 1.0]))).unwrap();
        let (e1, e2) = m.expected_rewards().unwrap();
        assert_eq!(e1, 0.0);
        assert_abs_diff_eq!(e2, m.base().mean(), epsilon = 1e-13);
    }

    #[test]
    fn near_zero_inertia_single_visit() {
        // nu, eta -> 0 would absorb from level 1 in one step; use tiny values
        let q = 0.35;
        let m = iem_model(&IemSpec::new(2, 1e-12, 1e-12, RewardProbs(vec![q, 0.5]))).unwrap();
        for k in 0..6 {
            let p = m.joint_pmf(JointObservation::new(k, 1)).unwrap();
            assert_abs_diff_eq!(p, (1.0 - q).powi(k as i32) * q, epsilon = 1e-10);
        }
    }

    #[test]
    fn regression_subjects() {
        let rows = vec![vec![0.0], vec![20.0], vec![0.0], vec![-10.0]];
        let spec = RegressionIemSpec {
            d: 4,
            beta_nu: vec![-0.1, 0.2],
            beta_eta: vec![0.1, -0.25],
            reward: RewardMode::Linear {
                b0: -3.064788,
                b1: 0.8675632,
            },
            design: RegressionIemSpec::design_from_covariates(&rows).unwrap(),
        };
        let s = subject_models(&spec).unwrap();
        assert_eq!(s.models.len(), 3);
        assert_eq!(s.assignment, vec![0, 1, 0, 2]);
        let (nu, eta) = s.params[0];
        assert_abs_diff_eq!(nu, 0.47502, epsilon = 1e-5);
        assert_abs_diff_eq!(eta, 0.52498, epsilon = 1e-5);
        assert_abs_diff_eq!(s.params[1].0, 0.98015, epsilon = 1e-5);

        let zero = RegressionIemSpec {
            beta_nu: vec![0.0, 0.0],
            beta_eta: vec![0.0, 0.0],
            ..spec
        };
        let s = subject_models(&zero).unwrap();
        assert!(s.params.iter().all(|&(a, b)| a == 0.5 && b == 0.5));
    }
}
