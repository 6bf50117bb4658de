//! Reproducible simulation of random-reward observations.
//!
//! Every observation `i` draws from its own ChaCha8 stream: the generator is
//! seeded with `seed` through `SeedableRng::seed_from_u64` and switched to
//! stream `i` with `set_stream`. Results therefore do not depend on the order
//! or the thread in which observations are generated.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::iem::{iem_model, subject_models, IemSpec, RegressionIemSpec};
use crate::rrdph::{ExpandedModel, JointObservation, RewardKind, RewardType};

/// Stream reserved for covariate sampling.
const COVARIATE_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimConfig {
    pub seed: u64,
    pub n: usize,
    /// Cap on transitions per trajectory.
    pub max_steps: u64,
}

impl SimConfig {
    pub fn new(seed: u64, n: usize) -> Self {
        SimConfig {
            seed,
            n,
            max_steps: 10_000_000,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 || self.max_steps == 0 {
            return Err(Error::Invalid("simulation needs n >= 1 and max_steps >= 1".into()));
        }
        Ok(())
    }
}

/// Generator for observation `index` under `seed`.
pub fn substream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Categorical sampler over `n` destinations plus absorption (index `n`).
#[derive(Debug, Clone)]
struct RowSampler {
    cumulative: Vec<Vec<f64>>,
}

impl RowSampler {
    fn new(rows: impl Iterator<Item = Vec<f64>>) -> Self {
        let cumulative = rows
            .map(|row| {
                let mut acc = 0.0;
                row.iter()
                    .map(|&p| {
                        acc += p;
                        acc
                    })
                    .collect()
            })
            .collect();
        RowSampler { cumulative }
    }

    fn draw(&self, from: usize, rng: &mut ChaCha8Rng) -> usize {
        let row = &self.cumulative[from];
        let u: f64 = rng.random::<f64>() * row[row.len() - 1];
        match row.iter().position(|&c| u < c) {
            Some(i) => i,
            None => row.len() - 1,
        }
    }
}

fn initial_sampler(weights: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    weights
        .iter()
        .map(|&p| {
            acc += p;
            acc
        })
        .collect()
}

fn draw_initial(cumulative: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random::<f64>() * cumulative[cumulative.len() - 1];
    cumulative
        .iter()
        .position(|&c| u < c)
        .unwrap_or(cumulative.len() - 1)
}

/// Number of failures before the first success of a `Geometric(q)` draw, by
/// inversion.
pub fn geometric_failures(q: f64, rng: &mut ChaCha8Rng) -> usize {
    if q >= 1.0 {
        return 0;
    }
    // u in (0, 1]
    let u = 1.0 - rng.random::<f64>();
    (u.ln() / (1.0 - q).ln()).floor() as usize
}

/// Walks the expanded chain one transition at a time.
struct ExpandedWalker {
    n: usize,
    start: Vec<f64>,
    rows: RowSampler,
    types: Vec<RewardType>,
}

impl ExpandedWalker {
    fn new(model: &ExpandedModel) -> Self {
        let n = model.dim();
        let rows = RowSampler::new((0..n).map(|i| {
            let mut r: Vec<f64> = model.b().row(i).iter().copied().collect();
            r.push(model.exit_vector()[i]);
            r
        }));
        ExpandedWalker {
            n,
            start: initial_sampler(model.beta().as_slice()),
            rows,
            types: (0..n).map(|i| model.reward_type(i)).collect(),
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng, max_steps: u64) -> Result<JointObservation> {
        let mut state = draw_initial(&self.start, rng);
        let mut y = JointObservation::new(0, 0);
        let mut steps = 0u64;
        loop {
            match self.types[state] {
                RewardType::Reward => y.y1 += 1,
                RewardType::Time => y.y2 += 1,
            }
            let next = self.rows.draw(state, rng);
            if next == self.n {
                return Ok(y);
            }
            steps += 1;
            if steps >= max_steps {
                return Err(Error::StepCapExceeded { max_steps });
            }
            state = next;
        }
    }
}

/// Walks the base chain and draws each visit's geometric reward in one go.
struct GeometricWalker {
    d: usize,
    start: Vec<f64>,
    rows: RowSampler,
    q: Vec<f64>,
}

impl GeometricWalker {
    fn new(model: &ExpandedModel) -> Self {
        let base = model.base();
        let d = base.dim();
        let rows = RowSampler::new((0..d).map(|i| {
            let mut r: Vec<f64> = base.t().row(i).iter().copied().collect();
            r.push(base.exit_vector()[i]);
            r
        }));
        GeometricWalker {
            d,
            start: initial_sampler(base.pi().as_slice()),
            rows,
            q: model.rewards().as_slice().to_vec(),
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng, max_steps: u64) -> Result<JointObservation> {
        let mut state = draw_initial(&self.start, rng);
        let mut y = JointObservation::new(0, 0);
        let mut steps = 0u64;
        loop {
            y.y2 += 1;
            y.y1 += geometric_failures(self.q[state], rng);
            let next = self.rows.draw(state, rng);
            if next == self.d {
                return Ok(y);
            }
            steps += 1;
            if steps >= max_steps {
                return Err(Error::StepCapExceeded { max_steps });
            }
            state = next;
        }
    }
}

enum Walker {
    Expanded(ExpandedWalker),
    Geometric(GeometricWalker),
}

impl Walker {
    fn for_model(model: &ExpandedModel) -> Self {
        match model.kind() {
            RewardKind::Bernoulli => Walker::Expanded(ExpandedWalker::new(model)),
            RewardKind::Geometric => Walker::Geometric(GeometricWalker::new(model)),
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng, max_steps: u64) -> Result<JointObservation> {
        match self {
            Walker::Expanded(w) => w.draw(rng, max_steps),
            Walker::Geometric(w) => w.draw(rng, max_steps),
        }
    }
}

/// `cfg.n` independent observations from `model`.
///
/// Geometric rewards are drawn by inversion per visit instead of walking the
/// reward self-loops; [`simulate_expanded_walk`] walks every transition.
pub fn simulate_expanded(model: &ExpandedModel, cfg: &SimConfig) -> Result<Vec<JointObservation>> {
    cfg.validate()?;
    let walker = Walker::for_model(model);
    (0..cfg.n)
        .into_par_iter()
        .map(|i| walker.draw(&mut substream(cfg.seed, i as u64), cfg.max_steps))
        .collect()
}

/// Like [`simulate_expanded`] but always steps through the expanded chain.
pub fn simulate_expanded_walk(model: &ExpandedModel, cfg: &SimConfig) -> Result<Vec<JointObservation>> {
    cfg.validate()?;
    let walker = ExpandedWalker::new(model);
    (0..cfg.n)
        .into_par_iter()
        .map(|i| walker.draw(&mut substream(cfg.seed, i as u64), cfg.max_steps))
        .collect()
}

/// Observations from a homogeneous inertia-escalation model.
pub fn simulate_iem(spec: &IemSpec, cfg: &SimConfig) -> Result<Vec<JointObservation>> {
    simulate_expanded(&iem_model(spec)?, cfg)
}

/// One observation per design row of `spec`; `cfg.n` must equal the number of
/// rows.
pub fn simulate_iem_dataset(spec: &RegressionIemSpec, cfg: &SimConfig) -> Result<Vec<JointObservation>> {
    cfg.validate()?;
    if cfg.n != spec.design.nrows() {
        return Err(Error::DimensionMismatch {
            what: "design rows",
            expected: cfg.n,
            found: spec.design.nrows(),
        });
    }
    let subjects = subject_models(spec)?;
    let walkers: Vec<Walker> = subjects.models.iter().map(Walker::for_model).collect();
    (0..cfg.n)
        .into_par_iter()
        .map(|i| walkers[subjects.assignment[i]].draw(&mut substream(cfg.seed, i as u64), cfg.max_steps))
        .collect()
}

/// `n` covariate values drawn with replacement from `pool`.
pub fn sample_covariates(pool: &[f64], n: usize, seed: u64) -> Vec<f64> {
    let mut rng = substream(seed, COVARIATE_STREAM);
    (0..n).map(|_| pool[rng.random_range(0..pool.len())]).collect()
}
