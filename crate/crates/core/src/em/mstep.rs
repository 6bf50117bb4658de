//! Maximisation steps.

use nalgebra::{DMatrix, DVector};

use super::counts::IemCounts;
use crate::error::{Error, Result};
use crate::glm::{irls_fit_with, IrlsOptions, WeightedBinomialData};

/// Closed-form `(nu, eta)` for a homogeneous inertia-escalation model.
pub fn m_step_iem(g: &IemCounts) -> Result<(f64, f64)> {
    let moves = g.s_up + g.s_down;
    let all = g.s_stay + moves;
    if !(all > 0.0) {
        return Err(Error::DegenerateCounts("no level transitions to estimate nu"));
    }
    if !(moves > 0.0) {
        return Err(Error::DegenerateCounts("no level changes to estimate eta"));
    }
    Ok((g.s_stay / all, g.s_up / moves))
}

/// Free reward probabilities `q_j = (U_j - F_j) / U_j`. Levels never visited
/// (`U_j = 0`) keep their previous value and are listed in the second result.
pub fn m_step_rewards(g: &IemCounts, previous: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut unvisited = Vec::new();
    let q = g
        .u
        .iter()
        .zip(&g.f)
        .enumerate()
        .map(|(j, (&u, &f))| {
            if u > 0.0 {
                ((u - f) / u).clamp(f64::MIN_POSITIVE, 1.0)
            } else {
                unvisited.push(j);
                previous[j]
            }
        })
        .collect();
    (q, unvisited)
}

/// Binomial logistic fit of `successes / totals` on `rows`, warm-started from
/// `previous`. Coefficients flagged in `fixed` enter through the offset.
/// Non-intercept columns that are constant over the informative rows cannot
/// be separated from a free intercept and are set to zero.
pub fn fit_logistic(
    rows: &[Vec<f64>],
    successes: &[f64],
    totals: &[f64],
    previous: &[f64],
    fixed: &[bool],
    what: &'static str,
) -> Result<Vec<f64>> {
    let p = previous.len();
    let keep: Vec<usize> = (0..rows.len()).filter(|&i| totals[i] > 0.0).collect();
    let mut coef = previous.to_vec();
    let mut free: Vec<usize> = (0..p).filter(|&j| !fixed[j]).collect();
    if free.is_empty() {
        return Ok(coef);
    }
    if keep.is_empty() {
        return Err(Error::DegenerateCounts(what));
    }
    let intercept_free = !fixed[0] && keep.iter().all(|&i| rows[i][0] == 1.0);
    if intercept_free {
        free.retain(|&j| {
            let first = rows[keep[0]][j];
            let constant = j != 0 && keep.iter().all(|&i| rows[i][j] == first);
            if constant {
                coef[j] = 0.0;
            }
            !constant
        });
    }
    let offset = DVector::from_iterator(
        keep.len(),
        keep.iter().map(|&i| {
            (0..p)
                .filter(|j| !free.contains(j))
                .map(|j| rows[i][j] * coef[j])
                .sum::<f64>()
        }),
    );
    let design = DMatrix::from_fn(keep.len(), free.len(), |r, c| rows[keep[r]][free[c]]);
    let responses = keep
        .iter()
        .map(|&i| (successes[i] / totals[i]).clamp(0.0, 1.0))
        .collect();
    let weights = keep.iter().map(|&i| totals[i]).collect();
    let data = WeightedBinomialData::new(responses, weights, design)?;
    let init = DVector::from_iterator(free.len(), free.iter().map(|&j| coef[j]));
    let fit = irls_fit_with(&data, Some(&offset), Some(&init), IrlsOptions::default())?;
    for (c, &j) in free.iter().enumerate() {
        coef[j] = fit.coefficients[c];
    }
    Ok(coef)
}

/// Logistic regressions for `nu` and `eta` over covariate groups.
///
/// Returns `(beta_nu, beta_eta)`.
pub fn m_step_regression(
    groups: &[IemCounts],
    rows: &[Vec<f64>],
    beta_nu: &[f64],
    beta_eta: &[f64],
    fixed_nu: &[bool],
    fixed_eta: &[bool],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let stay: Vec<f64> = groups.iter().map(|g| g.s_stay).collect();
    let all: Vec<f64> = groups.iter().map(|g| g.s_stay + g.s_up + g.s_down).collect();
    let up: Vec<f64> = groups.iter().map(|g| g.s_up).collect();
    let moves: Vec<f64> = groups.iter().map(|g| g.s_up + g.s_down).collect();
    let nu = fit_logistic(rows, &stay, &all, beta_nu, fixed_nu, "no level transitions to estimate nu")?;
    let eta = fit_logistic(rows, &up, &moves, beta_eta, fixed_eta, "no level changes to estimate eta")?;
    Ok((nu, eta))
}

/// Linear-logistic rewards `q_j = logistic(b0 + b1 j)` fitted to the level
/// counts with weights `U_j`.
pub fn m_step_linear_rewards(g: &IemCounts, previous: (f64, f64), fixed: [bool; 2]) -> Result<(f64, f64)> {
    let d = g.u.len();
    let rows: Vec<Vec<f64>> = (1..=d).map(|j| vec![1.0, j as f64]).collect();
    let successes: Vec<f64> = g.u.iter().zip(&g.f).map(|(u, f)| (u - f).max(0.0)).collect();
    let c = fit_logistic(
        &rows,
        &successes,
        &g.u,
        &[previous.0, previous.1],
        &fixed,
        "no reward opportunities to estimate the reward coefficients",
    )?;
    Ok((c[0], c[1]))
}
