//! Binary filtration tree: a depth-`n` Bernoulli approximation of Brownian
//! motion on `[0, T]` on which every expectation is an exact finite average.
//!
//! Node `i` at step `k` has children `2i` (increment `+√dt`) and `2i + 1`
//! (increment `−√dt`). All leaves carry the weight `2^{-n}`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default maximum depth (16384 leaves).
pub const DEFAULT_DEPTH_CAP: usize = 14;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiltrationTree {
    steps: usize,
    horizon: f64,
    dt: f64,
    sqrt_dt: f64,
}

impl FiltrationTree {
    pub fn new(steps: usize, horizon: f64) -> Result<Self> {
        Self::with_cap(steps, horizon, DEFAULT_DEPTH_CAP)
    }

    pub fn with_cap(steps: usize, horizon: f64, cap: usize) -> Result<Self> {
        if steps == 0 {
            return Err(crate::error::invalid("n", "need at least one time step"));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(crate::error::invalid(
                "T",
                format!("horizon must be positive and finite, got {horizon}"),
            ));
        }
        if steps > cap {
            return Err(Error::Resource {
                depth: steps,
                cap,
                leaves: 1u128 << steps.min(127),
            });
        }
        let dt = horizon / steps as f64;
        Ok(Self {
            steps,
            horizon,
            dt,
            sqrt_dt: dt.sqrt(),
        })
    }

    /// Number of time steps `n`.
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn sqrt_dt(&self) -> f64 {
        self.sqrt_dt
    }

    pub fn time(&self, step: usize) -> f64 {
        if step == self.steps {
            self.horizon
        } else {
            step as f64 * self.dt
        }
    }

    pub fn nodes_at(&self, step: usize) -> usize {
        1usize << step
    }

    pub fn leaves(&self) -> usize {
        1usize << self.steps
    }

    pub fn leaf_weight(&self) -> f64 {
        1.0 / self.leaves() as f64
    }

    /// Increment `ΔB` on the edge leading into `node` at `step ≥ 1`.
    pub fn increment(&self, node: usize) -> f64 {
        if node & 1 == 0 {
            self.sqrt_dt
        } else {
            -self.sqrt_dt
        }
    }

    /// Discrete Brownian motion `B(t_k)` at `(step, node)`.
    pub fn brownian(&self, step: usize, node: usize) -> f64 {
        let downs = (node & ((1usize << step) - 1)).count_ones() as f64;
        self.sqrt_dt * (step as f64 - 2.0 * downs)
    }

    /// Ancestor of `node` (at `step`) at the earlier step `earlier`.
    pub fn ancestor(&self, step: usize, node: usize, earlier: usize) -> usize {
        debug_assert!(earlier <= step);
        node >> (step - earlier)
    }

    pub fn check_step(&self, step: usize) -> Result<()> {
        if step > self.steps {
            Err(Error::StepOutOfRange {
                step,
                max: self.steps,
            })
        } else {
            Ok(())
        }
    }
}

/// A field indexed by `(step, node)` whose value is a spatial vector of
/// length `N`. Adaptedness holds by construction: the value at step `k`
/// is attached to a node of step `k`.
///
/// `levels[k]` stores `2^k` vectors contiguously, node-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptedField {
    len: usize,
    levels: Vec<Vec<f64>>,
}

impl AdaptedField {
    /// Zero field with steps `0..=last`.
    pub fn zeros(last: usize, len: usize) -> Self {
        let levels = (0..=last).map(|k| vec![0.0; (1usize << k) * len]).collect();
        Self { len, levels }
    }

    pub fn from_fn(last: usize, len: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut out = Self::zeros(last, len);
        for k in 0..=last {
            for node in 0..(1usize << k) {
                let row = out.node_mut(k, node);
                for (j, v) in row.iter_mut().enumerate() {
                    *v = f(k, node, j);
                }
            }
        }
        out
    }

    /// Deterministic field: the same vector at every node of each step.
    pub fn deterministic(last: usize, len: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        Self::from_fn(last, len, |k, _, j| f(k, j))
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Index of the last stored step.
    pub fn last_step(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn level(&self, step: usize) -> &[f64] {
        &self.levels[step]
    }

    pub fn level_mut(&mut self, step: usize) -> &mut [f64] {
        &mut self.levels[step]
    }

    /// Level `step` for reading together with level `step + 1` for writing.
    pub fn level_pair_mut(&mut self, step: usize) -> (&[f64], &mut [f64]) {
        let (head, tail) = self.levels.split_at_mut(step + 1);
        (&head[step], &mut tail[0])
    }

    pub fn node(&self, step: usize, node: usize) -> &[f64] {
        &self.levels[step][node * self.len..(node + 1) * self.len]
    }

    pub fn node_mut(&mut self, step: usize, node: usize) -> &mut [f64] {
        let len = self.len;
        &mut self.levels[step][node * len..(node + 1) * len]
    }

    /// Exact `E[field(t_k)]`.
    pub fn expectation(&self, step: usize) -> Result<Vec<f64>> {
        if step > self.last_step() {
            return Err(Error::StepOutOfRange {
                step,
                max: self.last_step(),
            });
        }
        Ok(level_expectation(&self.levels[step], self.len))
    }

    /// Exact `E[Σ_j w_j field_j(t_k)^2]` for a quadrature weight vector `w`.
    pub fn mean_square(&self, step: usize, weights: &[f64]) -> f64 {
        let sq: Vec<f64> = self.levels[step]
            .chunks(self.len)
            .map(|row| row.iter().zip(weights).map(|(v, w)| w * v * v).sum())
            .collect();
        level_expectation(&sq, 1)[0]
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Self {
        Self {
            len: self.len,
            levels: self
                .levels
                .iter()
                .map(|l| l.iter().map(|&v| f(v)).collect())
                .collect(),
        }
    }

    pub fn zip_with(&self, other: &Self, mut f: impl FnMut(f64, f64) -> f64) -> Result<Self> {
        if self.len != other.len || self.levels.len() != other.levels.len() {
            return Err(Error::Shape(format!(
                "field {}x{} vs {}x{}",
                self.levels.len(),
                self.len,
                other.levels.len(),
                other.len
            )));
        }
        Ok(Self {
            len: self.len,
            levels: self
                .levels
                .iter()
                .zip(&other.levels)
                .map(|(a, b)| a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect())
                .collect(),
        })
    }

    pub fn scale(&self, factor: f64) -> Self {
        self.map(|v| v * factor)
    }

    pub fn max_abs(&self) -> f64 {
        self.levels
            .iter()
            .flat_map(|l| l.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.levels
            .iter()
            .zip(&other.levels)
            .flat_map(|(a, b)| a.iter().zip(b))
            .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
    }

    /// True when every node of every step carries the same vector.
    pub fn is_deterministic(&self, tol: f64) -> bool {
        self.levels.iter().all(|l| {
            let first = &l[..self.len];
            l.chunks(self.len)
                .all(|row| row.iter().zip(first).all(|(a, b)| (a - b).abs() <= tol))
        })
    }
}

/// Pairwise conditional averaging: maps the `2^k` vectors of a level onto
/// the `2^{k-1}` vectors of the parent level.
pub fn conditional_mean(level: &[f64], len: usize) -> Vec<f64> {
    let parents = level.len() / len / 2;
    let mut out = vec![0.0; parents * len];
    for p in 0..parents {
        let up = &level[2 * p * len..(2 * p + 1) * len];
        let down = &level[(2 * p + 1) * len..(2 * p + 2) * len];
        for (o, (a, b)) in out[p * len..(p + 1) * len].iter_mut().zip(up.iter().zip(down)) {
            *o = 0.5 * (a + b);
        }
    }
    out
}

fn level_expectation(level: &[f64], len: usize) -> Vec<f64> {
    let mut cur = level.to_vec();
    while cur.len() > len {
        cur = conditional_mean(&cur, len);
    }
    cur
}

/// Two-point martingale representation of the next-step values `v⁺, v⁻`:
/// returns `(mean, Z)` with `v^± = mean ± Z·√dt`.
pub fn martingale_decomposition(plus: &[f64], minus: &[f64], dt: f64) -> (Vec<f64>, Vec<f64>) {
    let sqrt_dt = dt.sqrt();
    plus.iter()
        .zip(minus)
        .map(|(p, m)| (0.5 * (p + m), (p - m) / (2.0 * sqrt_dt)))
        .unzip()
}

/// Inverse of [`martingale_decomposition`].
pub fn reconstruct(mean: &[f64], z: &[f64], dt: f64) -> (Vec<f64>, Vec<f64>) {
    let sqrt_dt = dt.sqrt();
    mean.iter()
        .zip(z)
        .map(|(m, z)| (m + z * sqrt_dt, m - z * sqrt_dt))
        .unzip()
}

/// `|E[(Σ_k Z_k ΔB_{k+1})²] − Σ_k E[|Z_k|²] dt|` for an integrand stored
/// on steps `0..n`, with the plain Euclidean pairing across components.
pub fn ito_isometry_residual(tree: &FiltrationTree, integrand: &AdaptedField) -> Result<f64> {
    let n = tree.steps();
    if integrand.last_step() + 1 != n {
        return Err(Error::Shape(format!(
            "integrand must live on steps 0..{n}, has {} levels",
            integrand.last_step() + 1
        )));
    }
    let len = integrand.len();
    let mut lhs_leaf = vec![0.0; tree.leaves()];
    for (leaf, slot) in lhs_leaf.iter_mut().enumerate() {
        let mut acc = vec![0.0; len];
        for k in 0..n {
            let node = tree.ancestor(n, leaf, k);
            let db = tree.increment(tree.ancestor(n, leaf, k + 1));
            for (a, z) in acc.iter_mut().zip(integrand.node(k, node)) {
                *a += z * db;
            }
        }
        *slot = acc.iter().map(|v| v * v).sum();
    }
    let lhs = level_expectation(&lhs_leaf, 1)[0];
    let ones = vec![1.0; len];
    let rhs: f64 = (0..n).map(|k| integrand.mean_square(k, &ones) * tree.dt()).sum();
    Ok((lhs - rhs).abs())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_step_tree() {
        let t = FiltrationTree::new(1, 1.0).unwrap();
        assert_eq!(t.leaves(), 2);
        assert_eq!(t.increment(0), 1.0);
        assert_eq!(t.increment(1), -1.0);
    }

    #[test]
    fn uniform_leaf_weights() {
        let t = FiltrationTree::new(2, 1.0).unwrap();
        assert_eq!(t.leaves(), 4);
        assert_eq!(t.leaf_weight(), 0.25);
        for k in 0..=2 {
            assert_eq!(t.nodes_at(k), 1 << k);
        }
    }

    #[test]
    fn depth_cap_is_a_resource_error() {
        let err = FiltrationTree::new(20, 1.0).unwrap_err();
        assert!(matches!(err, Error::Resource { depth: 20, cap: 14, .. }));
        assert!(err.to_string().contains("2^20"));
        assert!(FiltrationTree::with_cap(20, 1.0, 20).is_ok());
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(FiltrationTree::new(0, 1.0).is_err());
        assert!(FiltrationTree::new(3, 0.0).is_err());
        assert!(FiltrationTree::new(3, -1.0).is_err());
    }

    #[test]
    fn expectation_of_constant_and_two_point() {
        let c = AdaptedField::deterministic(4, 3, |_, j| j as f64 + 0.5);
        for k in 0..=4 {
            assert_eq!(c.expectation(k).unwrap(), vec![0.5, 1.5, 2.5]);
        }
        let f = AdaptedField::from_fn(1, 1, |k, node, _| if k == 0 { 0.0 } else if node == 0 { 3.0 } else { 1.0 });
        assert_eq!(f.expectation(1).unwrap(), vec![2.0]);
        assert!(f.expectation(2).is_err());
    }

    #[test]
    fn brownian_has_zero_mean() {
        // direct summation over all nodes, independent of `expectation`
        let t = FiltrationTree::new(7, 1.3).unwrap();
        for k in 0..=7 {
            let mean: f64 = (0..t.nodes_at(k)).map(|i| t.brownian(k, i)).sum::<f64>() / t.nodes_at(k) as f64;
            assert!(mean.abs() < 1e-14);
            let b = AdaptedField::from_fn(7, 1, |k, i, _| t.brownian(k, i));
            assert!(b.expectation(k).unwrap()[0].abs() < 1e-14);
        }
    }

    #[test]
    fn brownian_matches_cumulative_increments() {
        let t = FiltrationTree::new(5, 1.0).unwrap();
        for i in 0..t.leaves() {
            let mut b = 0.0;
            for k in 1..=5 {
                b += t.increment(t.ancestor(5, i, k));
            }
            assert!((b - t.brownian(5, i)).abs() < 1e-14);
        }
    }

    #[test]
    fn increment_moments_exact() {
        let t = FiltrationTree::new(6, 0.7).unwrap();
        for k in 1..=6 {
            let nodes = t.nodes_at(k) as f64;
            let m1: f64 = (0..t.nodes_at(k)).map(|i| t.increment(i)).sum::<f64>() / nodes;
            let m2: f64 = (0..t.nodes_at(k)).map(|i| t.increment(i).powi(2)).sum::<f64>() / nodes;
            assert_eq!(m1, 0.0);
            assert!((m2 - t.dt()).abs() < 1e-15);
        }
    }

    #[test]
    fn decomposition_examples() {
        let (m, z) = martingale_decomposition(&[3.0], &[1.0], 0.25);
        assert_eq!(m, vec![2.0]);
        assert_eq!(z, vec![2.0]);
        let (m, z) = martingale_decomposition(&[5.0], &[5.0], 0.1);
        assert_eq!(m, vec![5.0]);
        assert_eq!(z, vec![0.0]);
    }

    #[test]
    fn conditional_mean_pairs_children() {
        let level = vec![1.0, 10.0, 3.0, 20.0, 5.0, 0.0, 7.0, 0.0];
        assert_eq!(conditional_mean(&level, 2), vec![2.0, 15.0, 6.0, 0.0]);
    }
}
