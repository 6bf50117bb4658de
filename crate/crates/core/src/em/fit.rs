//! The outer EM iteration.

use std::collections::BTreeMap;

use log::{debug, warn};
use serde::Serialize;

use super::counts::{aggregate, TransitionCounts};
use super::family::EmFamily;
use crate::error::{Error, Result};
use crate::lattice::{lattice_alpha, LatticeShape, DEFAULT_VALUE_BUDGET};
use crate::rrdph::{ExpandedModel, JointObservation};

/// A log-likelihood drop larger than this aborts the fit.
pub const MONOTONE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct EmConfig {
    pub max_iter: usize,
    /// Stop once the Euclidean norm of the change in free parameters is below
    /// this.
    pub min_var: f64,
    /// Optionally also stop once the log-likelihood gains less than this.
    pub loglik_tol: Option<f64>,
    /// Starting values overriding the family defaults.
    pub init: Vec<(String, f64)>,
    /// Parameters held at the given value throughout.
    pub fixed: Vec<(String, f64)>,
    /// Cap on stored lattice values per group.
    pub value_budget: usize,
    /// Try every starting point the family offers.
    pub multi_start: bool,
    /// Iterations run from each starting point before choosing one.
    pub pilot_iter: usize,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            max_iter: 500,
            min_var: 1e-6,
            loglik_tol: None,
            init: Vec::new(),
            fixed: Vec::new(),
            value_budget: DEFAULT_VALUE_BUDGET,
            multi_start: true,
            pilot_iter: 20,
        }
    }
}

impl EmConfig {
    pub fn fix(mut self, name: &str, value: f64) -> Self {
        self.fixed.push((name.to_string(), value));
        self
    }

    pub fn start_at(mut self, name: &str, value: f64) -> Self {
        self.init.push((name.to_string(), value));
        self
    }

    fn validate(&self) -> Result<()> {
        if self.max_iter == 0 {
            return Err(Error::InvalidParameter {
                name: "max_iter".into(),
                value: 0.0,
                range: "[1, inf)",
            });
        }
        if !(self.min_var > 0.0) {
            return Err(Error::InvalidParameter {
                name: "min_var".into(),
                value: self.min_var,
                range: "(0, inf)",
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitResult {
    pub names: Vec<String>,
    pub params: Vec<f64>,
    /// Log-likelihood at each visited parameter value, starting with the
    /// initial one and ending with the returned one.
    pub loglik_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub fixed: Vec<bool>,
    pub warnings: Vec<String>,
}

impl FitResult {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.params[i])
    }

    pub fn estimates(&self) -> BTreeMap<String, f64> {
        self.names.iter().cloned().zip(self.params.iter().copied()).collect()
    }

    pub fn loglik(&self) -> f64 {
        *self.loglik_trace.last().unwrap_or(&f64::NAN)
    }
}

struct Grouped {
    observations: Vec<Vec<JointObservation>>,
    indices: Vec<Vec<usize>>,
    shapes: Vec<LatticeShape>,
}

fn group_observations(family: &dyn EmFamily, observations: &[JointObservation]) -> Result<Grouped> {
    if let Some(n) = family.n_observations() {
        if n != observations.len() {
            return Err(Error::DimensionMismatch {
                what: "observations (one per covariate row)",
                expected: n,
                found: observations.len(),
            });
        }
    }
    let g = family.n_groups();
    let mut obs = vec![Vec::new(); g];
    let mut idx = vec![Vec::new(); g];
    for (i, y) in observations.iter().enumerate() {
        let k = family.group_of(i);
        obs[k].push(*y);
        idx[k].push(i);
    }
    let shapes = obs.iter().map(|o| LatticeShape::covering(o.iter())).collect();
    Ok(Grouped {
        observations: obs,
        indices: idx,
        shapes,
    })
}

/// Lattice storage kept across iterations.
struct Workspace {
    alpha: Vec<Vec<f64>>,
    adj: Vec<Vec<f64>>,
}

impl Workspace {
    fn new(groups: usize) -> Self {
        Workspace {
            alpha: vec![Vec::new(); groups],
            adj: vec![Vec::new(); groups],
        }
    }
}

fn e_step(
    models: &[ExpandedModel],
    groups: &Grouped,
    budget: usize,
    ws: &mut Workspace,
) -> Result<(Vec<TransitionCounts>, f64)> {
    let mut counts = Vec::with_capacity(models.len());
    let mut loglik = 0.0;
    for (g, model) in models.iter().enumerate() {
        if groups.observations[g].is_empty() {
            counts.push(TransitionCounts::zeros(model.dim()));
            continue;
        }
        let buffer = std::mem::take(&mut ws.alpha[g]);
        let tables = lattice_alpha(model, &groups.shapes[g], budget, buffer)?;
        let e = aggregate(&tables, &groups.observations[g], &groups.indices[g], &mut ws.adj[g])?;
        ws.alpha[g] = tables.into_alpha_buffer();
        loglik += e.loglik;
        counts.push(e.counts);
    }
    Ok((counts, loglik))
}

/// Log-likelihood of all observations without computing counts.
fn loglik_only(models: &[ExpandedModel], groups: &Grouped, budget: usize, ws: &mut Workspace) -> Result<f64> {
    let mut total = 0.0;
    for (g, model) in models.iter().enumerate() {
        if groups.observations[g].is_empty() {
            continue;
        }
        let buffer = std::mem::take(&mut ws.alpha[g]);
        let tables = lattice_alpha(model, &groups.shapes[g], budget, buffer)?;
        for (pos, y) in groups.observations[g].iter().enumerate() {
            let l = tables.likelihood_forward(*y)?;
            if !(l > 0.0) {
                return Err(Error::ZeroLikelihoodObservation {
                    index: groups.indices[g][pos] + 1,
                    y1: y.y1,
                    y2: y.y2,
                });
            }
            total += l.ln();
        }
        ws.alpha[g] = tables.into_alpha_buffer();
    }
    Ok(total)
}

fn resolve(names: &[String], assignments: &[(String, f64)], theta: &mut [f64], mask: Option<&mut [bool]>) -> Result<()> {
    let mut mask = mask;
    for (name, value) in assignments {
        let i = names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::UnknownParameter(name.clone()))?;
        theta[i] = *value;
        if let Some(m) = mask.as_deref_mut() {
            m[i] = true;
        }
    }
    Ok(())
}

/// State of one EM trajectory.
struct Run {
    theta: Vec<f64>,
    trace: Vec<f64>,
    iterations: usize,
    converged: bool,
    warnings: Vec<String>,
}

struct Context<'a> {
    family: &'a dyn EmFamily,
    groups: Grouped,
    fixed: Vec<bool>,
    config: &'a EmConfig,
    ws: Workspace,
}

impl Context<'_> {
    /// Iterates until `limit` total iterations or convergence.
    fn advance(&mut self, run: &mut Run, limit: usize) -> Result<()> {
        while run.iterations < limit && !run.converged {
            let models = self.family.models(&run.theta)?;
            let (counts, loglik) = e_step(&models, &self.groups, self.config.value_budget, &mut self.ws)?;
            check_monotone(&run.trace, loglik)?;
            run.trace.push(loglik);
            let (mut next, notes) = self.family.m_step(&run.theta, &counts, &self.fixed)?;
            for note in notes {
                if !run.warnings.contains(&note) {
                    run.warnings.push(note);
                }
            }
            for (i, f) in self.fixed.iter().enumerate() {
                if *f {
                    next[i] = run.theta[i];
                }
            }
            let change = run
                .theta
                .iter()
                .zip(&next)
                .zip(&self.fixed)
                .filter(|(_, f)| !**f)
                .map(|((a, b), _)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            run.theta = next;
            run.iterations += 1;
            debug!("em iteration {}: loglik {loglik:.10} change {change:.3e}", run.iterations);
            if change < self.config.min_var {
                run.converged = true;
            }
            if let (Some(tol), [.., a, b]) = (self.config.loglik_tol, run.trace.as_slice()) {
                if (b - a).abs() < tol {
                    run.converged = true;
                }
            }
        }
        Ok(())
    }
}

/// Runs EM from the family's default starting point, modified by `config`.
///
/// When the family offers several starting points (and no explicit initial
/// values are given), each is iterated for `pilot_iter` steps and the one with
/// the highest log-likelihood is continued.
pub fn em_fit(family: &dyn EmFamily, observations: &[JointObservation], config: &EmConfig) -> Result<FitResult> {
    config.validate()?;
    if observations.is_empty() {
        return Err(Error::Invalid("no observations to fit".into()));
    }
    let names = family.names();
    let mut fixed = vec![false; names.len()];
    let mut starts = if config.multi_start && config.init.is_empty() {
        family.starting_points(observations)
    } else {
        vec![family.initial(observations)]
    };
    for theta in &mut starts {
        resolve(&names, &config.init, theta, None)?;
        resolve(&names, &config.fixed, theta, Some(&mut fixed))?;
    }
    let mut distinct: Vec<Vec<f64>> = Vec::new();
    for theta in starts {
        if !distinct.contains(&theta) {
            distinct.push(theta);
        }
    }
    let starts = distinct;
    let groups = group_observations(family, observations)?;
    let mut ctx = Context {
        family,
        ws: Workspace::new(groups.observations.len()),
        groups,
        fixed,
        config,
    };
    let mut runs: Vec<Run> = starts
        .into_iter()
        .map(|theta| Run {
            theta,
            trace: Vec::new(),
            iterations: 0,
            converged: false,
            warnings: Vec::new(),
        })
        .collect();
    let mut run = if runs.len() == 1 {
        runs.pop().expect("one run")
    } else {
        let pilot = config.pilot_iter.clamp(1, config.max_iter);
        for r in &mut runs {
            ctx.advance(r, pilot)?;
        }
        let best = (0..runs.len())
            .max_by(|&a, &b| {
                let la = runs[a].trace.last().copied().unwrap_or(f64::NEG_INFINITY);
                let lb = runs[b].trace.last().copied().unwrap_or(f64::NEG_INFINITY);
                la.total_cmp(&lb)
            })
            .expect("at least one start");
        debug!("continuing from starting point {} of {}", best + 1, runs.len());
        runs.swap_remove(best)
    };
    ctx.advance(&mut run, config.max_iter)?;

    let models = family.models(&run.theta)?;
    let last = loglik_only(&models, &ctx.groups, config.value_budget, &mut ctx.ws)?;
    check_monotone(&run.trace, last)?;
    run.trace.push(last);
    if !run.converged {
        let note = format!("stopped at the iteration cap ({}) before convergence", config.max_iter);
        warn!("{note}");
        run.warnings.push(note);
    }
    Ok(FitResult {
        names,
        params: run.theta,
        loglik_trace: run.trace,
        iterations: run.iterations,
        converged: run.converged,
        fixed: ctx.fixed,
        warnings: run.warnings,
    })
}

fn check_monotone(trace: &[f64], current: f64) -> Result<()> {
    if let Some(&previous) = trace.last() {
        if current < previous - MONOTONE_TOLERANCE {
            return Err(Error::NonMonotoneLikelihood {
                iteration: trace.len(),
                previous,
                current,
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dph::DphModel;
    use crate::em::family::{IemFamily, IemRewards, TemplateFamily};
    use crate::iem::{iem_model, IemSpec};
    use crate::rrdph::toys::bernoulli_toy;
    use crate::rrdph::{RewardKind, RewardProbs};
    use crate::simulate::{simulate_expanded, SimConfig};

    fn assert_monotone(trace: &[f64]) {
        for w in trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-9, "trace decreased: {} -> {}", w[0], w[1]);
        }
    }

    fn toy_family() -> TemplateFamily {
        let m = bernoulli_toy(0.5, 0.5, 0.5);
        TemplateFamily::new(RewardKind::Bernoulli, m.base(), &RewardProbs(vec![1.0, 1.0, 0.5, 0.5])).unwrap()
    }

    #[test]
    fn bernoulli_toy_closed_form_mle() {
        // counts of each outcome give the MLE directly
        let obs: Vec<JointObservation> = [((2, 0), 30), ((1, 1), 20), ((3, 0), 9), ((2, 1), 41)]
            .iter()
            .flat_map(|&((a, b), n)| std::iter::repeat_n(JointObservation::new(a, b), n))
            .collect();
        let fit = em_fit(&toy_family(), &obs, &EmConfig::default()).unwrap();
        assert_monotone(&fit.loglik_trace);
        assert!(fit.converged);
        assert!((fit.get("T[1,3]").unwrap() - 0.5).abs() < 1e-6);
        assert!((fit.get("p[3]").unwrap() - 0.6).abs() < 1e-6);
        assert!((fit.get("p[4]").unwrap() - 0.09 / 0.5).abs() < 1e-6);
    }

    #[test]
    fn fixed_parameter_is_bit_identical() {
        let truth = iem_model(&IemSpec::new(3, 0.4, 0.6, RewardProbs(vec![0.3, 0.5, 0.7]))).unwrap();
        let obs = simulate_expanded(&truth, &SimConfig::new(3, 300)).unwrap();
        let fam = IemFamily::homogeneous(3, IemRewards::Free).unwrap();
        let eta = 0.6000000000000001;
        let fit = em_fit(&fam, &obs, &EmConfig::default().fix("eta", eta)).unwrap();
        assert_eq!(fit.get("eta").unwrap().to_bits(), eta.to_bits());
        assert_monotone(&fit.loglik_trace);
    }

    #[test]
    fn unknown_parameter() {
        let fam = IemFamily::homogeneous(2, IemRewards::Free).unwrap();
        let err = em_fit(&fam, &[JointObservation::new(1, 1)], &EmConfig::default().fix("zeta", 0.1)).unwrap_err();
        assert_eq!(err, Error::UnknownParameter("zeta".into()));
    }

    #[test]
    fn start_at_truth_moves_little() {
        let truth = bernoulli_toy(0.5, 0.6, 0.3);
        let obs = simulate_expanded(&truth, &SimConfig::new(11, 1000)).unwrap();
        let cfg = EmConfig {
            max_iter: 1,
            ..EmConfig::default()
        }
        .start_at("T[1,2]", 0.5)
        .start_at("T[1,3]", 0.5)
        .start_at("p[3]", 0.6)
        .start_at("p[4]", 0.3);
        let fit = em_fit(&toy_family(), &obs, &cfg).unwrap();
        assert_eq!(fit.iterations, 1);
        assert_monotone(&fit.loglik_trace);
        for (name, t) in [("T[1,2]", 0.5), ("p[3]", 0.6), ("p[4]", 0.3)] {
            assert!((fit.get(name).unwrap() - t).abs() < 0.06, "{name}");
        }
    }

    #[test]
    fn iem_recovers_on_moderate_sample() {
        let truth = iem_model(&IemSpec::new(3, 0.4, 0.6, RewardProbs(vec![0.3, 0.5, 0.7]))).unwrap();
        let obs = simulate_expanded(&truth, &SimConfig::new(8, 2000)).unwrap();
        let fam = IemFamily::homogeneous(3, IemRewards::Free).unwrap();
        let cfg = EmConfig {
            max_iter: 5000,
            ..EmConfig::default()
        };
        let fit = em_fit(&fam, &obs, &cfg).unwrap();
        assert_monotone(&fit.loglik_trace);
        assert!(fit.converged);
        for (name, t) in [("nu", 0.4), ("eta", 0.6), ("q1", 0.3), ("q2", 0.5), ("q3", 0.7)] {
            assert!((fit.get(name).unwrap() - t).abs() < 0.08, "{name}: {}", fit.get(name).unwrap());
        }
    }

    #[test]
    fn geometric_template_fit() {
        let base = DphModel::from_rows(
            &[1.0, 0.0, 0.0],
            &[vec![0.0, 0.5, 0.5], vec![0.0, 0.0, 0.0], vec![0.0, 0.0, 0.0]],
        )
        .unwrap();
        let truth = crate::rrdph::expand_geometric(&base, &RewardProbs(vec![1.0, 1.0, 0.6])).unwrap();
        let obs = simulate_expanded(&truth, &SimConfig::new(2, 2000)).unwrap();
        let fam = TemplateFamily::new(RewardKind::Geometric, &base, &RewardProbs(vec![1.0, 1.0, 0.5])).unwrap();
        assert_eq!(fam.names(), vec!["T[1,2]", "T[1,3]", "q[3]"]);
        let fit = em_fit(&fam, &obs, &EmConfig::default()).unwrap();
        assert_monotone(&fit.loglik_trace);
        assert!((fit.get("T[1,2]").unwrap() - 0.5).abs() < 0.06);
        assert!((fit.get("q[3]").unwrap() - 0.6).abs() < 0.06);
    }

    #[test]
    fn config_validation() {
        let fam = IemFamily::homogeneous(2, IemRewards::Free).unwrap();
        let obs = [JointObservation::new(1, 1)];
        let cfg = EmConfig {
            max_iter: 0,
            ..EmConfig::default()
        };
        assert!(matches!(em_fit(&fam, &obs, &cfg), Err(Error::InvalidParameter { .. })));
        let cfg = EmConfig {
            min_var: 0.0,
            ..EmConfig::default()
        };
        assert!(matches!(em_fit(&fam, &obs, &cfg), Err(Error::InvalidParameter { .. })));
    }
}
