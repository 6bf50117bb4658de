//! Discrete phase-type distributions: an absorbing chain with `d` transient
//! states, initial distribution `pi` and sub-transition matrix `T`.
//!
//! The absorption time counts transient-state visits, so its support starts at
//! `n = 1` and `P(tau = n) = pi T^(n-1) t` with exit vector `t = (I - T) e`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Numerical slack used when validating a model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// Allowed excess over 1 for probability sums, and deficit for `sum(pi)`.
    pub sum: f64,
    /// Models whose spectral radius is `>= 1 - absorption` are rejected.
    pub absorption: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            sum: 1e-12,
            absorption: 1e-12,
        }
    }
}

/// A validated discrete phase-type model.
#[derive(Debug, Clone, PartialEq)]
pub struct DphModel {
    pi: DVector<f64>,
    t: DMatrix<f64>,
    exit: DVector<f64>,
    fundamental: DMatrix<f64>,
}

pub(crate) fn check_probability(what: &'static str, index: String, value: f64, tol: f64) -> Result<()> {
    if !value.is_finite() {
        return Err(Error::InvalidParameter {
            name: format!("{what}[{index}]"),
            value,
            range: "[0, 1]",
        });
    }
    if value < 0.0 {
        return Err(Error::NegativeEntry { what, index, value });
    }
    if value > 1.0 + tol {
        return Err(Error::EntryExceedsOne { what, index, value });
    }
    Ok(())
}

/// Validates `(pi, T)` with default tolerances.
pub fn validate_dph(pi: DVector<f64>, t: DMatrix<f64>) -> Result<DphModel> {
    validate_dph_with(pi, t, Tolerances::default())
}

/// Validates `(pi, T)`.
///
/// Absorption is certified through the M-matrix characterisation: for a
/// nonnegative `T`, the spectral radius is below one exactly when `I - T` is
/// invertible with a nonnegative inverse, and `||(I - T)^-1||_inf` bounds
/// `1 / (1 - rho(T))` from above.
pub fn validate_dph_with(pi: DVector<f64>, t: DMatrix<f64>, tol: Tolerances) -> Result<DphModel> {
    let d = pi.len();
    if d == 0 {
        return Err(Error::Invalid("model needs at least one transient state".into()));
    }
    if t.nrows() != d || t.ncols() != d {
        return Err(Error::DimensionMismatch {
            what: "T",
            expected: d,
            found: if t.nrows() != d { t.nrows() } else { t.ncols() },
        });
    }
    for (i, &v) in pi.iter().enumerate() {
        check_probability("pi", (i + 1).to_string(), v, tol.sum)?;
    }
    for i in 0..d {
        for j in 0..d {
            check_probability("T", format!("{},{}", i + 1, j + 1), t[(i, j)], tol.sum)?;
        }
    }
    let pi_sum = pi.sum();
    if (pi_sum - 1.0).abs() > tol.sum {
        return Err(Error::InitialNotNormalized { sum: pi_sum });
    }
    let mut exit = DVector::zeros(d);
    for i in 0..d {
        let s = t.row(i).sum();
        if s > 1.0 + tol.sum {
            return Err(Error::RowSumExceedsOne { row: i + 1, sum: s });
        }
        exit[i] = (1.0 - s).max(0.0);
    }

    let fundamental = fundamental_matrix(&t).ok_or(Error::AbsorptionNotGuaranteed)?;
    let neg_tol = 1e-9 * fundamental.amax().max(1.0);
    let max_row = fundamental
        .row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    if fundamental.iter().any(|&v| !v.is_finite() || v < -neg_tol) || max_row >= 1.0 / tol.absorption {
        return Err(Error::AbsorptionNotGuaranteed);
    }

    Ok(DphModel {
        pi,
        t,
        exit,
        fundamental,
    })
}

fn fundamental_matrix(t: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let d = t.nrows();
    (DMatrix::identity(d, d) - t).lu().try_inverse()
}

impl DphModel {
    /// Builds a model from plain slices; `rows` is `T` in row-major order.
    pub fn from_rows(pi: &[f64], rows: &[Vec<f64>]) -> Result<Self> {
        let d = pi.len();
        if rows.len() != d {
            return Err(Error::DimensionMismatch {
                what: "T rows",
                expected: d,
                found: rows.len(),
            });
        }
        for r in rows {
            if r.len() != d {
                return Err(Error::DimensionMismatch {
                    what: "T columns",
                    expected: d,
                    found: r.len(),
                });
            }
        }
        let t = DMatrix::from_fn(d, d, |i, j| rows[i][j]);
        validate_dph(DVector::from_column_slice(pi), t)
    }

    pub fn dim(&self) -> usize {
        self.pi.len()
    }

    pub fn pi(&self) -> &DVector<f64> {
        &self.pi
    }

    pub fn t(&self) -> &DMatrix<f64> {
        &self.t
    }

    /// Exit vector `t = (I - T) e`.
    pub fn exit_vector(&self) -> &DVector<f64> {
        &self.exit
    }

    /// `(I - T)^-1`; entry `(i, j)` is the expected number of visits to `j`
    /// starting from `i`.
    pub fn fundamental(&self) -> &DMatrix<f64> {
        &self.fundamental
    }

    /// `P(tau = n) = pi T^(n-1) t` for `n >= 1`.
    pub fn pmf(&self, n: u64) -> Result<f64> {
        if n < 1 {
            return Err(Error::InvalidN(n));
        }
        let mut row = self.pi.transpose();
        for _ in 1..n {
            row = &row * &self.t;
        }
        Ok((row * &self.exit)[0])
    }

    /// `P(tau = n)` for `n = 1..=n_max`, returned with index `n - 1`.
    pub fn pmf_table(&self, n_max: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(n_max);
        let mut row = self.pi.transpose();
        for _ in 0..n_max {
            out.push((&row * &self.exit)[0]);
            row = &row * &self.t;
        }
        out
    }

    /// `P(tau > n) = pi T^n e`.
    pub fn survival(&self, n: u64) -> f64 {
        let mut row = self.pi.transpose();
        for _ in 0..n {
            row = &row * &self.t;
        }
        row.sum()
    }

    /// `E[tau] = pi (I - T)^-1 e`.
    pub fn mean(&self) -> f64 {
        (self.pi.transpose() * &self.fundamental).sum()
    }

    /// Generating function `E[theta^tau] = theta pi (I - theta T)^-1 t` for
    /// `theta` in `[0, 1]`.
    pub fn pgf(&self, theta: f64) -> Result<f64> {
        let d = self.dim();
        let m = DMatrix::identity(d, d) - &self.t * theta;
        let u = m.lu().solve(&self.exit).ok_or(Error::SingularResolvent)?;
        Ok(theta * self.pi.dot(&u))
    }
}

/// Free-function form of [`DphModel::exit_vector`].
pub fn exit_vector(model: &DphModel) -> DVector<f64> {
    model.exit.clone()
}

/// Free-function form of [`DphModel::pmf`].
pub fn dph_pmf(model: &DphModel, n: u64) -> Result<f64> {
    model.pmf(n)
}

/// Free-function form of [`DphModel::mean`].
pub fn dph_mean(model: &DphModel) -> f64 {
    model.mean()
}


#[cfg(test)]
pub(crate) use tests::bernoulli_toy_base;

#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn arb_dph(max_d: usize) -> impl Strategy<Value = DphModel> {
        (1..=max_d).prop_flat_map(|d| {
            (
                proptest::collection::vec(0.01f64..1.0, d),
                proptest::collection::vec(0.0f64..1.0, d * d),
                proptest::collection::vec(0.05f64..0.95, d),
            )
                .prop_map(move |(pi_raw, t_raw, keep)| {
                    let s: f64 = pi_raw.iter().sum();
                    let pi = DVector::from_iterator(d, pi_raw.iter().map(|v| v / s));
                    let mut t = DMatrix::from_row_slice(d, d, &t_raw);
                    for i in 0..d {
                        let rs: f64 = t.row(i).sum();
                        let scale = keep[i] / rs.max(1e-12);
                        for j in 0..d {
                            t[(i, j)] *= scale;
                        }
                    }
                    validate_dph(pi, t).unwrap()
                })
        })
    }

    proptest! {
        #[test]
        fn truncated_mass_and_mean(m in arb_dph(5)) {
            let mut n_max = 1usize;
            while m.survival(n_max as u64) >= 1e-10 {
                n_max *= 2;
            }
            let table = m.pmf_table(n_max);
            let mut prev = 0.0;
            let mut acc = 0.0;
            let mut mean = 0.0;
            for (i, p) in table.iter().enumerate() {
                prop_assert!(*p >= -1e-15 && *p <= 1.0 + 1e-15);
                acc += p;
                prop_assert!(acc >= prev);
                prev = acc;
                mean += (i as f64 + 1.0) * p;
            }
            prop_assert!(acc >= 1.0 - 1e-9);
            prop_assert!((mean - m.mean()).abs() < 1e-8 * m.mean().max(1.0));
        }

        #[test]
        fn exit_plus_rows_is_one(m in arb_dph(6)) {
            for i in 0..m.dim() {
                let s = m.t().row(i).sum() + m.exit_vector()[i];
                prop_assert!((s - 1.0).abs() < 1e-14);
            }
        }
    }
}

#[cfg(test)]
pub(crate) use props::arb_dph;
