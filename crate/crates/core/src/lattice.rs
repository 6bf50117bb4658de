//! Lattice recursion over reward vectors.
//!
//! Every visit of the expanded chain adds exactly one unit to either `Y1` or
//! `Y2`, so the tables are filled in order of `y1 + y2`:
//!
//! * `p_Y(y)_j`: probability that, having just visited state `j` (whose own
//!   reward is already counted), the remaining visits accumulate exactly `y`
//!   before absorption. `p_Y(0) = b` and
//!   `p_Y(y) = sum_r B_r p_Y(y - e_r)` where `B_r` keeps the columns of `B`
//!   whose state carries reward type `r`.
//! * `alpha(y)_k`: probability that some visit lands in state `k` with the
//!   accumulated reward, this visit included, equal to `y`. The first visit
//!   seeds `alpha(e_r) = beta` restricted to type-`r` states, and
//!   `alpha(y) = sum_r alpha(y - e_r) B_r` afterwards.
//!
//! The likelihood of `y` is `alpha(y) . b`, equivalently
//! `sum_k beta_k p_Y(y - e_type(k))_k`.
//!
//! Tables are stored on a staircase (a down-closed set of lattice points), so a
//! data set only pays for the region below its observations.

use crate::error::{Error, Result};
use crate::rrdph::{ExpandedModel, JointObservation, RewardType};

/// Default cap on stored `f64` values across both tables (512 MiB).
pub const DEFAULT_VALUE_BUDGET: usize = 64 * 1024 * 1024;

/// A down-closed set of lattice points: row `y2` holds `y1 < extents[y2]`,
/// with `extents` non-increasing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatticeShape {
    extents: Vec<usize>,
    offsets: Vec<usize>,
    cells: usize,
}

impl LatticeShape {
    fn from_extents(extents: Vec<usize>) -> Self {
        debug_assert!(extents.windows(2).all(|w| w[0] >= w[1]));
        let mut offsets = Vec::with_capacity(extents.len());
        let mut cells = 0;
        for &e in &extents {
            offsets.push(cells);
            cells += e;
        }
        LatticeShape {
            extents,
            offsets,
            cells,
        }
    }

    /// All points with `y1 <= y1_max` and `y2 <= y2_max`.
    pub fn rectangle(y1_max: usize, y2_max: usize) -> Self {
        Self::from_extents(vec![y1_max + 1; y2_max + 1])
    }

    /// The smallest staircase containing every observation.
    pub fn covering<'a>(observations: impl IntoIterator<Item = &'a JointObservation>) -> Self {
        let mut extents: Vec<usize> = Vec::new();
        for o in observations {
            if extents.len() <= o.y2 {
                extents.resize(o.y2 + 1, 0);
            }
            extents[o.y2] = extents[o.y2].max(o.y1 + 1);
        }
        if extents.is_empty() {
            extents.push(1);
        }
        for i in (0..extents.len().saturating_sub(1)).rev() {
            extents[i] = extents[i].max(extents[i + 1]);
        }
        Self::from_extents(extents)
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn rows(&self) -> usize {
        self.extents.len()
    }

    pub fn row_len(&self, y2: usize) -> usize {
        self.extents.get(y2).copied().unwrap_or(0)
    }

    pub fn contains(&self, y1: usize, y2: usize) -> bool {
        y2 < self.extents.len() && y1 < self.extents[y2]
    }

    #[inline]
    pub(crate) fn index(&self, y1: usize, y2: usize) -> usize {
        self.offsets[y2] + y1
    }
}

/// Nonzero entries of `B` split by the reward type of the destination state.
#[derive(Debug, Clone)]
pub(crate) struct SparseBlocks {
    /// `(from, to, value)` for destinations carrying `Y1`.
    pub reward: Vec<(usize, usize, f64)>,
    /// `(from, to, value)` for destinations carrying `Y2`.
    pub time: Vec<(usize, usize, f64)>,
}

impl SparseBlocks {
    pub fn of(model: &ExpandedModel) -> Self {
        let n = model.dim();
        let b = model.b();
        let mut reward = Vec::new();
        let mut time = Vec::new();
        for j in 0..n {
            for k in 0..n {
                let v = b[(j, k)];
                if v != 0.0 {
                    match model.reward_type(k) {
                        RewardType::Reward => reward.push((j, k, v)),
                        RewardType::Time => time.push((j, k, v)),
                    }
                }
            }
        }
        SparseBlocks { reward, time }
    }
}

/// Forward (`alpha`) and backward (`p_Y`) tables for one expanded model.
#[derive(Debug, Clone)]
pub struct LatticeTables {
    shape: LatticeShape,
    n: usize,
    d: usize,
    p_y: Vec<f64>,
    alpha: Vec<f64>,
    beta: Vec<f64>,
    exit: Vec<f64>,
    pub(crate) blocks: SparseBlocks,
}

/// Builds both tables over `shape`.
pub fn lattice_forward(model: &ExpandedModel, shape: &LatticeShape, budget: usize) -> Result<LatticeTables> {
    build(model, shape, budget, true, Vec::new())
}

/// Builds only the forward table, reusing `buffer` for storage; `p_y` and
/// [`LatticeTables::likelihood`] are unavailable.
pub(crate) fn lattice_alpha(
    model: &ExpandedModel,
    shape: &LatticeShape,
    budget: usize,
    buffer: Vec<f64>,
) -> Result<LatticeTables> {
    build(model, shape, budget, false, buffer)
}

/// `cur[k] += prev[j] * v` over the entries.
#[inline]
fn push_forward(cur: &mut [f64], prev: &[f64], entries: &[(usize, usize, f64)]) {
    for &(j, k, v) in entries {
        cur[k] += prev[j] * v;
    }
}

/// `cur[j] += v * prev[k]` over the entries.
#[inline]
pub(crate) fn pull_back(cur: &mut [f64], prev: &[f64], entries: &[(usize, usize, f64)]) {
    for &(j, k, v) in entries {
        cur[j] += v * prev[k];
    }
}

/// Splits `table` into the already computed prefix and the `n` values at `at`.
#[inline]
fn split(table: &mut [f64], at: usize, n: usize) -> (&[f64], &mut [f64]) {
    let (done, rest) = table.split_at_mut(at);
    (done, &mut rest[..n])
}

fn build(
    model: &ExpandedModel,
    shape: &LatticeShape,
    budget: usize,
    with_p_y: bool,
    mut alpha: Vec<f64>,
) -> Result<LatticeTables> {
    let n = model.dim();
    let d = model.base_dim();
    let tables = if with_p_y { 2 } else { 1 };
    let values = shape.cells().saturating_mul(n).saturating_mul(tables);
    if values > budget {
        return Err(Error::LatticeTooLarge { values, budget });
    }
    let blocks = SparseBlocks::of(model);
    let beta: Vec<f64> = model.beta().iter().copied().collect();
    let exit: Vec<f64> = model.exit_vector().iter().copied().collect();
    let mut p_y = vec![0.0; if with_p_y { shape.cells() * n } else { 0 }];
    alpha.clear();
    alpha.resize(shape.cells() * n, 0.0);

    for y2 in 0..shape.rows() {
        for y1 in 0..shape.row_len(y2) {
            let at = shape.index(y1, y2) * n;
            if y1 == 0 && y2 == 0 {
                if with_p_y {
                    p_y[at..at + n].copy_from_slice(&exit);
                }
                continue;
            }
            // predecessor along Y1 (reward-type destinations) is the previous cell
            if y1 > 0 {
                let (done, cur) = split(&mut alpha, at, n);
                push_forward(cur, &done[at - n..], &blocks.reward);
                if y1 == 1 && y2 == 0 {
                    for k in d..n {
                        cur[k] += beta[k];
                    }
                }
                if with_p_y {
                    let (done, cur) = split(&mut p_y, at, n);
                    pull_back(cur, &done[at - n..], &blocks.reward);
                }
            }
            if y2 > 0 {
                let prev = shape.index(y1, y2 - 1) * n;
                let (done, cur) = split(&mut alpha, at, n);
                push_forward(cur, &done[prev..prev + n], &blocks.time);
                if y1 == 0 && y2 == 1 {
                    for k in 0..d {
                        cur[k] += beta[k];
                    }
                }
                if with_p_y {
                    let (done, cur) = split(&mut p_y, at, n);
                    pull_back(cur, &done[prev..prev + n], &blocks.time);
                }
            }
        }
    }

    Ok(LatticeTables {
        shape: shape.clone(),
        n,
        d,
        p_y,
        alpha,
        beta,
        exit,
        blocks,
    })
}

impl LatticeTables {
    pub fn shape(&self) -> &LatticeShape {
        &self.shape
    }

    /// Number of expanded states.
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn contains(&self, y: JointObservation) -> bool {
        self.shape.contains(y.y1, y.y2)
    }

    /// `p_Y(y)` as a slice of length `2d`.
    ///
    /// Panics on tables built without the backward table.
    #[inline]
    pub fn p_y(&self, y1: usize, y2: usize) -> &[f64] {
        assert!(!self.p_y.is_empty(), "backward table not built");
        let at = self.shape.index(y1, y2) * self.n;
        &self.p_y[at..at + self.n]
    }

    /// `alpha(y)` as a slice of length `2d`.
    #[inline]
    pub fn alpha(&self, y1: usize, y2: usize) -> &[f64] {
        let at = self.shape.index(y1, y2) * self.n;
        &self.alpha[at..at + self.n]
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    /// Releases the forward table's storage for reuse.
    pub(crate) fn into_alpha_buffer(self) -> Vec<f64> {
        self.alpha
    }

    pub fn exit(&self) -> &[f64] {
        &self.exit
    }

    fn check(&self, y: JointObservation) -> Result<()> {
        if self.contains(y) {
            Ok(())
        } else {
            Err(Error::OutsideLattice { y1: y.y1, y2: y.y2 })
        }
    }

    /// `P(Y = y)` read from the backward table.
    pub fn likelihood(&self, y: JointObservation) -> Result<f64> {
        self.check(y)?;
        let mut total = 0.0;
        if y.y1 > 0 {
            let p = self.p_y(y.y1 - 1, y.y2);
            for k in self.d..self.n {
                total += self.beta[k] * p[k];
            }
        }
        if y.y2 > 0 {
            let p = self.p_y(y.y1, y.y2 - 1);
            for k in 0..self.d {
                total += self.beta[k] * p[k];
            }
        }
        Ok(total)
    }

    /// `P(Y = y)` read from the forward table as `alpha(y) . b`.
    pub fn likelihood_forward(&self, y: JointObservation) -> Result<f64> {
        self.check(y)?;
        Ok(self
            .alpha(y.y1, y.y2)
            .iter()
            .zip(&self.exit)
            .map(|(a, b)| a * b)
            .sum())
    }

    /// `beta . p_Y(y)`: probability that the visits after the first accumulate
    /// exactly `y`.
    pub fn beta_dot_p_y(&self, y: JointObservation) -> Result<f64> {
        self.check(y)?;
        Ok(self
            .p_y(y.y1, y.y2)
            .iter()
            .zip(&self.beta)
            .map(|(p, b)| p * b)
            .sum())
    }
}
