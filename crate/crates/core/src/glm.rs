//! Weighted quasibinomial logistic regression by iteratively reweighted least
//! squares.
//!
//! Responses are proportions in `[0, 1]` and weights are their totals; the
//! fitted coefficients maximise `sum_i w_i [y_i log mu_i + (1 - y_i) log(1 - mu_i)]`
//! with `logit(mu_i) = offset_i + x_i' beta`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::iem::logistic;

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedBinomialData {
    pub responses: Vec<f64>,
    pub weights: Vec<f64>,
    pub design: DMatrix<f64>,
}

impl WeightedBinomialData {
    pub fn new(responses: Vec<f64>, weights: Vec<f64>, design: DMatrix<f64>) -> Result<Self> {
        let n = design.nrows();
        if responses.len() != n || weights.len() != n {
            return Err(Error::DimensionMismatch {
                what: "binomial data rows",
                expected: n,
                found: if responses.len() != n {
                    responses.len()
                } else {
                    weights.len()
                },
            });
        }
        if let Some(i) = responses.iter().position(|y| !(0.0..=1.0).contains(y)) {
            return Err(Error::InvalidParameter {
                name: format!("response[{}]", i + 1),
                value: responses[i],
                range: "[0, 1]",
            });
        }
        if let Some(i) = weights.iter().position(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(Error::InvalidParameter {
                name: format!("weight[{}]", i + 1),
                value: weights[i],
                range: "(0, inf)",
            });
        }
        Ok(WeightedBinomialData {
            responses,
            weights,
            design,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IrlsOptions {
    pub max_iter: usize,
    /// Stop once the largest coefficient change falls below this.
    pub tol: f64,
    /// Coefficients are clamped to `[-cap, cap]`.
    pub coef_cap: f64,
}

impl Default for IrlsOptions {
    fn default() -> Self {
        IrlsOptions {
            max_iter: 50,
            tol: 1e-10,
            coef_cap: 30.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IrlsFit {
    pub coefficients: DVector<f64>,
    pub iterations: usize,
    /// Some coefficient sits on the clamp, typically from separation.
    pub capped: bool,
    pub deviance: f64,
}

fn xlogy(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * y.ln()
    }
}

fn deviance(data: &WeightedBinomialData, eta: &DVector<f64>) -> f64 {
    let mut dev = 0.0;
    for i in 0..eta.len() {
        let y = data.responses[i];
        let mu = logistic(eta[i]).clamp(1e-300, 1.0 - 1e-16);
        let term = xlogy(y, y / mu) + xlogy(1.0 - y, (1.0 - y) / (1.0 - mu));
        dev += 2.0 * data.weights[i] * term;
    }
    dev
}

/// Weighted score `X' (w * (y - mu))`.
pub fn score(data: &WeightedBinomialData, offset: Option<&DVector<f64>>, beta: &DVector<f64>) -> DVector<f64> {
    let mut eta = &data.design * beta;
    if let Some(o) = offset {
        eta += o;
    }
    let resid = DVector::from_fn(eta.len(), |i, _| data.weights[i] * (data.responses[i] - logistic(eta[i])));
    data.design.transpose() * resid
}

/// Fits without an offset.
pub fn irls_fit(data: &WeightedBinomialData, init: Option<&DVector<f64>>) -> Result<IrlsFit> {
    irls_fit_with(data, None, init, IrlsOptions::default())
}

/// Newton scoring with step halving whenever the deviance would increase.
pub fn irls_fit_with(
    data: &WeightedBinomialData,
    offset: Option<&DVector<f64>>,
    init: Option<&DVector<f64>>,
    opts: IrlsOptions,
) -> Result<IrlsFit> {
    let n = data.design.nrows();
    let p = data.design.ncols();
    let zero_offset = DVector::zeros(n);
    let offset = offset.unwrap_or(&zero_offset);
    let mut beta = match init {
        Some(b) if b.len() == p => b.map(|v| v.clamp(-opts.coef_cap, opts.coef_cap)),
        Some(b) => {
            return Err(Error::DimensionMismatch {
                what: "initial coefficients",
                expected: p,
                found: b.len(),
            })
        }
        None => DVector::zeros(p),
    };
    if p == 0 {
        let eta = offset.clone();
        return Ok(IrlsFit {
            coefficients: beta,
            iterations: 0,
            capped: false,
            deviance: deviance(data, &eta),
        });
    }
    check_rank(&data.design)?;

    let mut eta = &data.design * &beta + offset;
    let mut dev = deviance(data, &eta);
    for iter in 1..=opts.max_iter {
        let mut sx = data.design.clone();
        let mut sz = DVector::zeros(n);
        for i in 0..n {
            let mu = logistic(eta[i]);
            let var = (mu * (1.0 - mu)).max(1e-300);
            let w = data.weights[i] * var;
            let z = eta[i] - offset[i] + (data.responses[i] - mu) / var;
            let sw = w.sqrt();
            for j in 0..p {
                sx[(i, j)] *= sw;
            }
            sz[i] = sw * z;
        }
        let qr = sx.qr();
        let r = qr.r();
        let rmax = r.diagonal().amax();
        if r.diagonal().iter().any(|v| v.abs() <= 1e-12 * rmax.max(1e-300)) {
            // all working weights vanished: fitted values are saturated
            if rmax == 0.0 {
                break;
            }
            return Err(Error::RankDeficientDesign);
        }
        let qtz = qr.q().transpose() * sz;
        let target = r.solve_upper_triangular(&qtz).ok_or(Error::RankDeficientDesign)?;
        let target = target.map(|v| v.clamp(-opts.coef_cap, opts.coef_cap));

        let mut step = &target - &beta;
        let mut candidate = &beta + &step;
        let mut cand_eta = &data.design * &candidate + offset;
        let mut cand_dev = deviance(data, &cand_eta);
        let mut halvings = 0;
        while cand_dev > dev * (1.0 + 1e-12) + 1e-12 && halvings < 40 {
            step *= 0.5;
            candidate = &beta + &step;
            cand_eta = &data.design * &candidate + offset;
            cand_dev = deviance(data, &cand_eta);
            halvings += 1;
        }
        if cand_dev > dev * (1.0 + 1e-12) + 1e-12 {
            // no descent direction left at working precision
            return Ok(finish(beta, iter, dev, opts));
        }
        let change = step.amax();
        beta = candidate;
        eta = cand_eta;
        dev = cand_dev;
        if change < opts.tol {
            return Ok(finish(beta, iter, dev, opts));
        }
    }
    let fit = finish(beta, opts.max_iter, dev, opts);
    if fit.capped {
        Ok(fit)
    } else {
        Err(Error::IrlsNonConvergence {
            iterations: opts.max_iter,
        })
    }
}

fn finish(beta: DVector<f64>, iterations: usize, deviance: f64, opts: IrlsOptions) -> IrlsFit {
    let capped = beta.iter().any(|v| v.abs() >= opts.coef_cap);
    if capped {
        log::warn!("logistic regression coefficients hit the +/-{} clamp", opts.coef_cap);
    }
    IrlsFit {
        coefficients: beta,
        iterations,
        capped,
        deviance,
    }
}

fn check_rank(design: &DMatrix<f64>) -> Result<()> {
    if design.nrows() < design.ncols() {
        return Err(Error::RankDeficientDesign);
    }
    let sv = design.clone().svd(false, false).singular_values;
    let max = sv.amax();
    if max == 0.0 || sv.iter().any(|s| *s <= 1e-10 * max) {
        return Err(Error::RankDeficientDesign);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::iem::logit;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn intercept(n: usize) -> DMatrix<f64> {
        DMatrix::from_element(n, 1, 1.0)
    }

    #[test]
    fn intercept_only_is_pooled_logit() {
        let data = WeightedBinomialData::new(vec![0.1, 0.5, 0.2], vec![2.0, 3.0, 5.0], intercept(3)).unwrap();
        // pooled = (0.2 + 1.5 + 1.0) / 10
        let fit = irls_fit(&data, None).unwrap();
        assert_abs_diff_eq!(fit.coefficients[0], logit(0.27), epsilon = 1e-10);

        let data = WeightedBinomialData::new(vec![0.3], vec![7.0], intercept(1)).unwrap();
        let fit = irls_fit(&data, None).unwrap();
        assert_abs_diff_eq!(fit.coefficients[0], -0.84730, epsilon = 1e-5);
    }

    #[test]
    fn symmetric_responses_give_zero() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, -1.5, 1.0, -0.5, 1.0, 0.5, 1.0, 1.5]);
        let data = WeightedBinomialData::new(vec![0.5; 4], vec![1.0, 2.0, 2.0, 1.0], x).unwrap();
        let fit = irls_fit(&data, None).unwrap();
        assert!(fit.coefficients.amax() < 1e-12);
    }

    #[test]
    fn single_covariate_value_gives_zero_slope_via_rank_error() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 5.0, 1.0, 5.0, 1.0, 5.0]);
        let data = WeightedBinomialData::new(vec![0.2, 0.3, 0.4], vec![1.0; 3], x).unwrap();
        assert_eq!(irls_fit(&data, None).unwrap_err(), Error::RankDeficientDesign);
    }

    #[test]
    fn separation_is_capped() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, -2.0, 1.0, -1.0, 1.0, 1.0, 1.0, 2.0]);
        let data = WeightedBinomialData::new(vec![0.0, 0.0, 1.0, 1.0], vec![1.0; 4], x).unwrap();
        let fit = irls_fit_with(&data, None, None, IrlsOptions::default()).unwrap();
        assert!(fit.capped);
        assert!(fit.coefficients[1] > 0.0);
    }

    #[test]
    fn offset_shifts_intercept() {
        let data = WeightedBinomialData::new(vec![0.3, 0.3], vec![1.0, 1.0], intercept(2)).unwrap();
        let off = DVector::from_element(2, 0.5);
        let fit = irls_fit_with(&data, Some(&off), None, IrlsOptions::default()).unwrap();
        assert_abs_diff_eq!(fit.coefficients[0], logit(0.3) - 0.5, epsilon = 1e-10);
    }

    #[test]
    fn input_validation() {
        assert!(WeightedBinomialData::new(vec![1.2], vec![1.0], intercept(1)).is_err());
        assert!(WeightedBinomialData::new(vec![0.2], vec![0.0], intercept(1)).is_err());
        assert!(WeightedBinomialData::new(vec![0.2, 0.1], vec![1.0], intercept(2)).is_err());
    }

    pub(crate) fn arb_data() -> impl Strategy<Value = WeightedBinomialData> {
        (2usize..4, 6usize..30).prop_flat_map(|(p, n)| {
            (
                proptest::collection::vec(-2.0f64..2.0, n * (p - 1)),
                proptest::collection::vec(0.02f64..0.98, n),
                proptest::collection::vec(0.5f64..50.0, n),
            )
                .prop_map(move |(x, y, w)| {
                    let design = DMatrix::from_fn(n, p, |i, j| if j == 0 { 1.0 } else { x[i * (p - 1) + j - 1] });
                    WeightedBinomialData::new(y, w, design).unwrap()
                })
        })
    }

    proptest! {
        #[test]
        fn score_vanishes_at_solution(data in arb_data()) {
            let fit = irls_fit(&data, None).unwrap();
            let s = score(&data, None, &fit.coefficients);
            let total: f64 = data.weights.iter().sum();
            prop_assert!(s.amax() < 1e-8 * total, "score {}", s.amax());
        }

        #[test]
        fn weight_scaling_is_invariant(data in arb_data(), c in 0.1f64..20.0) {
            let a = irls_fit(&data, None).unwrap();
            let scaled = WeightedBinomialData::new(
                data.responses.clone(),
                data.weights.iter().map(|w| w * c).collect(),
                data.design.clone(),
            ).unwrap();
            let b = irls_fit(&scaled, None).unwrap();
            prop_assert!((a.coefficients - b.coefficients).amax() < 1e-10);
        }
    }
}

