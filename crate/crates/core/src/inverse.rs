//! Recovery of the time intensity `h` of a stochastic source `h(t) r(x,t) dB`
//! from observations of the state on `ω × (0,T)` and at `t = T`.
//!
//! `h` is deterministic and piecewise constant per time step, so the
//! unknown has `n` components. With `y₀` subtracted the observation map is
//! linear; its normal matrix is assembled from one forward and one adjoint
//! solve per column.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::random::member_rng;
use crate::solver::{Controls, ProblemSpec, Scheme};
use crate::tree::AdaptedField;

/// `r(x,t) = scale · (base + Σ a sin(kπx) cos(lπt/T))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceProfile {
    pub base: f64,
    /// `(a, k, l)` per mode.
    pub modes: Vec<(f64, u32, u32)>,
    pub scale: f64,
}

impl Default for SourceProfile {
    fn default() -> Self {
        Self {
            base: 1.0,
            modes: vec![(0.25, 1, 1)],
            scale: 1.0,
        }
    }
}

impl SourceProfile {
    pub fn eval(&self, x: f64, t: f64, horizon: f64) -> f64 {
        let pi = std::f64::consts::PI;
        let wave: f64 = self
            .modes
            .iter()
            .map(|&(a, k, l)| a * (k as f64 * pi * x).sin() * (l as f64 * pi * t / horizon).cos())
            .sum();
        self.scale * (self.base + wave)
    }

    /// Guaranteed lower bound `r₀` of `|r|`.
    pub fn lower_bound(&self) -> f64 {
        let amp: f64 = self.modes.iter().map(|m| m.0.abs()).sum();
        self.scale.abs() * (self.base.abs() - amp)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            scale: self.scale * factor,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let r0 = self.lower_bound();
        if !(r0 > 0.0 && r0.is_finite()) {
            return Err(invalid(
                "r",
                format!("|r| must stay above a positive bound, but base {} and mode amplitudes give r0 = {r0}", self.base),
            ));
        }
        Ok(())
    }
}

/// State restricted to `ω` on every step and node, plus the leaf values at `T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    /// Values on the cells of `ω`, steps `0..=n`.
    pub interior: AdaptedField,
    /// `2^n · N` leaf values.
    pub terminal: Vec<f64>,
}

impl Observation {
    fn combine(&self, other: &Self, a: f64, b: f64) -> Result<Self> {
        if self.terminal.len() != other.terminal.len() {
            return Err(Error::Shape("observations of different sizes".into()));
        }
        Ok(Self {
            interior: self.interior.zip_with(&other.interior, |x, y| a * x + b * y)?,
            terminal: self.terminal.iter().zip(&other.terminal).map(|(x, y)| a * x + b * y).collect(),
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.combine(other, 1.0, -1.0)
    }

    pub fn add_scaled(&self, other: &Self, factor: f64) -> Result<Self> {
        self.combine(other, 1.0, factor)
    }

    pub fn scale(&self, factor: f64) -> Self {
        Self {
            interior: self.interior.scale(factor),
            terminal: self.terminal.iter().map(|v| v * factor).collect(),
        }
    }
}

/// Result of a least-squares reconstruction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reconstruction {
    pub h: Vec<f64>,
    pub mu: f64,
    /// `‖A ĥ − d‖ / ‖d‖` in the observation norm.
    pub residual: f64,
    /// Extreme singular values of the observation map, `L²(0,T)` to the
    /// observation norm.
    pub sigma_min: f64,
    pub sigma_max: f64,
}

/// Smallest admissible `σ_min / σ_max`.
pub const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct InverseProblem {
    scheme: Scheme,
    profile: SourceProfile,
    omega_cells: Vec<usize>,
}

impl InverseProblem {
    pub fn new(scheme: Scheme, profile: SourceProfile) -> Result<Self> {
        profile.validate()?;
        let omega_cells: Vec<usize> = scheme
            .mask()
            .iter()
            .enumerate()
            .filter(|(_, m)| **m > 0.0)
            .map(|(j, _)| j)
            .collect();
        if omega_cells.is_empty() {
            return Err(invalid("omega", "the observation set contains no cell centers"));
        }
        Ok(Self {
            scheme,
            profile,
            omega_cells,
        })
    }

    pub fn scheme(&self) -> &Scheme {
        &self.scheme
    }

    pub fn profile(&self) -> &SourceProfile {
        &self.profile
    }

    pub fn steps(&self) -> usize {
        self.scheme.tree().steps()
    }

    fn check_history(&self, h: &[f64]) -> Result<()> {
        if h.len() != self.steps() {
            return Err(Error::Shape(format!("h has {} values for {} steps", h.len(), self.steps())));
        }
        Ok(())
    }

    /// `r(·, t_k)` on the cell centers for `k = 0..n−1`.
    pub fn profile_table(&self) -> Vec<Vec<f64>> {
        let tree = self.scheme.tree();
        let xs = self.scheme.mesh().centers();
        (0..tree.steps())
            .map(|k| xs.iter().map(|&x| self.profile.eval(x, tree.time(k), tree.horizon())).collect())
            .collect()
    }

    /// `F_k = h_k r(·, t_k)` on steps `0..n−1`.
    pub fn source_field(&self, h: &[f64]) -> Result<AdaptedField> {
        self.check_history(h)?;
        let table = self.profile_table();
        Ok(AdaptedField::deterministic(self.steps() - 1, self.scheme.cells(), |k, j| {
            h[k] * table[k][j]
        }))
    }

    pub fn solve(&self, h: &[f64], y0: &[f64]) -> Result<AdaptedField> {
        let spec = ProblemSpec {
            big_f: Some(self.source_field(h)?),
            ..ProblemSpec::default()
        };
        self.scheme.forward(&spec, y0, &Controls::default())
    }

    pub fn observe(&self, y: &AdaptedField) -> Result<Observation> {
        let n = self.scheme.cells();
        let steps = self.steps();
        if y.len() != n || y.last_step() != steps {
            return Err(Error::Shape("trajectory does not match the discretization".into()));
        }
        let cells = &self.omega_cells;
        let interior = AdaptedField::from_fn(steps, cells.len(), |k, node, i| y.node(k, node)[cells[i]]);
        Ok(Observation {
            interior,
            terminal: y.level(steps).to_vec(),
        })
    }

    pub fn forward_map(&self, h: &[f64], y0: &[f64]) -> Result<Observation> {
        self.observe(&self.solve(h, y0)?)
    }

    /// Observation of a trajectory computed on a mesh with twice as many
    /// cells, averaged onto this mesh.
    pub fn observe_refined(&self, fine: &AdaptedField) -> Result<Observation> {
        let n = self.scheme.cells();
        if fine.len() != 2 * n {
            return Err(Error::Shape(format!("refined trajectory has {} cells, expected {}", fine.len(), 2 * n)));
        }
        let coarse = AdaptedField::from_fn(fine.last_step(), n, |k, node, j| {
            let v = fine.node(k, node);
            0.5 * (v[2 * j] + v[2 * j + 1])
        });
        self.observe(&coarse)
    }

    fn quadrature(&self, k: usize) -> f64 {
        let steps = self.steps();
        let dt = self.scheme.tree().dt();
        if k == 0 || k == steps {
            0.5 * dt
        } else {
            dt
        }
    }

    /// `‖y‖_{L²(ω_T)}` (trapezoid in time) and `‖y(T)‖`, both in expectation.
    pub fn norms(&self, obs: &Observation) -> (f64, f64) {
        let h = self.scheme.mesh().h();
        let steps = self.steps();
        let w = vec![h; self.omega_cells.len()];
        let interior: f64 = (0..=steps).map(|k| self.quadrature(k) * obs.interior.mean_square(k, &w)).sum();
        let leaves = self.scheme.tree().leaves() as f64;
        let terminal = h * obs.terminal.iter().map(|v| v * v).sum::<f64>() / leaves;
        (interior.sqrt(), terminal.sqrt())
    }

    /// The right-hand side of the stability estimate for an observation
    /// difference.
    pub fn stability_norm(&self, obs: &Observation) -> f64 {
        let (a, b) = self.norms(obs);
        a + b
    }

    /// Observation norm underlying the least-squares fit (`‖·‖_{L²(ω_T)}² + ‖·(T)‖²`).
    pub fn data_norm(&self, obs: &Observation) -> f64 {
        let (a, b) = self.norms(obs);
        a.hypot(b)
    }

    /// `L²(0,T)` norm of a step history.
    pub fn history_norm(&self, h: &[f64]) -> f64 {
        let dt = self.scheme.tree().dt();
        (dt * h.iter().map(|v| v * v).sum::<f64>()).sqrt()
    }

    /// Transpose of the observation map: `g_k = dt E⟨r_k, Z_k⟩` where `Z`
    /// solves the adjoint equation driven by the observation.
    pub fn adjoint(&self, obs: &Observation) -> Result<Vec<f64>> {
        let n = self.scheme.cells();
        let steps = self.steps();
        let cells = &self.omega_cells;
        let tree = self.scheme.tree();
        let mut terminal = obs.terminal.clone();
        for node in 0..tree.leaves() {
            let vals = obs.interior.node(steps, node);
            for (i, &j) in cells.iter().enumerate() {
                terminal[node * n + j] += self.quadrature(steps) * vals[i];
            }
        }
        let dt = tree.dt();
        let source = AdaptedField::from_fn(steps - 1, n, |k, node, j| match cells.binary_search(&j) {
            Ok(i) => -self.quadrature(k) / dt * obs.interior.node(k, node)[i],
            Err(_) => 0.0,
        });
        let back = self.scheme.backward(&ProblemSpec::default(), &terminal, Some(&source))?;
        let mesh = self.scheme.mesh();
        let table = self.profile_table();
        Ok((0..steps)
            .map(|k| {
                let nodes = tree.nodes_at(k);
                let sum: f64 = (0..nodes).map(|node| mesh.inner(&table[k], back.big_z.node(k, node))).sum();
                dt * sum / nodes as f64
            })
            .collect())
    }

    /// `AᵀW A` assembled column by column from forward and adjoint solves.
    pub fn normal_matrix(&self) -> Result<DMatrix<f64>> {
        let steps = self.steps();
        let zero = vec![0.0; self.scheme.cells()];
        let columns = (0..steps)
            .into_par_iter()
            .map(|j| {
                let mut e = vec![0.0; steps];
                e[j] = 1.0;
                self.adjoint(&self.forward_map(&e, &zero)?)
            })
            .collect::<Result<Vec<_>>>()?;
        let m = DMatrix::from_fn(steps, steps, |i, j| columns[j][i]);
        Ok((&m + m.transpose()) * 0.5)
    }

    /// Minimizes `‖A h − (obs − A₀ y₀)‖² + μ ‖h‖²_{L²(0,T)}`.
    pub fn reconstruct(&self, obs: &Observation, y0: &[f64], mu: f64) -> Result<Reconstruction> {
        if !(mu >= 0.0 && mu.is_finite()) {
            return Err(invalid("mu", format!("regularization must be non-negative, got {mu}")));
        }
        let steps = self.steps();
        let dt = self.scheme.tree().dt();
        let free = self.forward_map(&vec![0.0; steps], y0)?;
        let data = obs.sub(&free)?;
        let normal = self.normal_matrix()?;
        let eig = normal.clone().symmetric_eigen();
        let sigma_max = (eig.eigenvalues.max().max(0.0) / dt).sqrt();
        let sigma_min = (eig.eigenvalues.min().max(0.0) / dt).sqrt();
        if !(sigma_min > RANK_TOLERANCE * sigma_max) {
            return Err(Error::RankDeficient(sigma_min));
        }
        let system = normal + DMatrix::identity(steps, steps) * (mu * dt);
        let rhs = DVector::from_vec(self.adjoint(&data)?);
        let chol = system
            .cholesky()
            .ok_or(Error::RankDeficient(sigma_min))?;
        let h: Vec<f64> = chol.solve(&rhs).iter().copied().collect();
        let fit = self.forward_map(&h, &vec![0.0; self.scheme.cells()])?;
        let d = self.data_norm(&data);
        let residual = if d > 0.0 {
            self.data_norm(&fit.sub(&data)?) / d
        } else {
            0.0
        };
        Ok(Reconstruction {
            h,
            mu,
            residual,
            sigma_min,
            sigma_max,
        })
    }

    /// Largest `μ` whose fit residual `‖A h_μ − d‖` stays below
    /// `factor · noise` (bisection in `log μ`); zero when even the
    /// unregularized fit does not reach that level.
    pub fn discrepancy_mu(&self, obs: &Observation, y0: &[f64], noise: f64, factor: f64) -> Result<f64> {
        let target = factor * noise;
        let d = self.data_norm(&obs.sub(&self.forward_map(&vec![0.0; self.steps()], y0)?)?);
        let misfit = |mu: f64| -> Result<f64> { Ok(self.reconstruct(obs, y0, mu)?.residual * d) };
        if misfit(0.0)? > target {
            return Ok(0.0);
        }
        let (mut lo, mut hi) = (-16.0f64, 8.0f64);
        if misfit(10f64.powf(hi))? <= target {
            return Ok(10f64.powf(hi));
        }
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if misfit(10f64.powf(mid))? <= target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(10f64.powf(lo))
    }
}

/// Smooth random intensity `Σ_m a_m cos(mπt/T)/(m+1)` sampled at step
/// midpoints; the same draw is comparable across tree depths.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomHistory {
    coeffs: Vec<f64>,
}

impl RandomHistory {
    pub fn draw(rng: &mut impl Rng, modes: usize) -> Self {
        Self {
            coeffs: (0..modes).map(|m| rng.random_range(-1.0..1.0) / (m + 1) as f64).collect(),
        }
    }

    pub fn sample(&self, steps: usize, horizon: f64) -> Vec<f64> {
        let dt = horizon / steps as f64;
        (0..steps)
            .map(|k| {
                let t = (k as f64 + 0.5) * dt;
                self.coeffs
                    .iter()
                    .enumerate()
                    .map(|(m, a)| a * (m as f64 * std::f64::consts::PI * t / horizon).cos())
                    .sum()
            })
            .collect()
    }
}

pub const HISTORY_MODES: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzReport {
    pub max: f64,
    pub mean: f64,
    pub pairs: usize,
    pub skipped: usize,
    pub r0: f64,
}

/// `‖h¹ − h²‖ / (‖Δy‖_{L²(ω_T)} + ‖Δy(T)‖)` over `pairs` random pairs.
pub fn lipschitz_study(problem: &InverseProblem, pairs: usize, seed: u64, y0: &[f64]) -> Result<LipschitzReport> {
    if pairs < 2 {
        return Err(invalid("pairs", format!("need at least 2 pairs, got {pairs}")));
    }
    let steps = problem.steps();
    let horizon = problem.scheme().tree().horizon();
    let ratios = (0..pairs)
        .into_par_iter()
        .map(|i| {
            let mut rng = member_rng(seed, i as u64);
            let h1 = RandomHistory::draw(&mut rng, HISTORY_MODES).sample(steps, horizon);
            let h2 = RandomHistory::draw(&mut rng, HISTORY_MODES).sample(steps, horizon);
            if h1 == h2 {
                return Ok(None);
            }
            let diff: Vec<f64> = h1.iter().zip(&h2).map(|(a, b)| a - b).collect();
            let o1 = problem.forward_map(&h1, y0)?;
            let o2 = problem.forward_map(&h2, y0)?;
            let denom = problem.stability_norm(&o1.sub(&o2)?);
            Ok(Some(problem.history_norm(&diff) / denom))
        })
        .collect::<Result<Vec<_>>>()?;
    let used: Vec<f64> = ratios.iter().flatten().copied().collect();
    if used.is_empty() {
        return Err(invalid("pairs", "every pair was degenerate"));
    }
    Ok(LipschitzReport {
        max: used.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        mean: used.iter().sum::<f64>() / used.len() as f64,
        pairs: used.len(),
        skipped: pairs - used.len(),
        r0: problem.profile().lower_bound(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseRow {
    pub delta: f64,
    /// Stability norm of the added perturbation.
    pub noise: f64,
    /// `‖ĥ − h‖`.
    pub error: f64,
    /// `‖ĥ_δ − ĥ_0‖ / noise`.
    pub slope: f64,
}

/// Reconstructions from data generated on the refined problem `fine`
/// (twice the cells, same tree) and perturbed by `A η` with a random
/// intensity `η`, scaled to relative size `δ` in the data norm.
pub fn noise_sweep(
    problem: &InverseProblem,
    fine: &InverseProblem,
    h_true: &[f64],
    y0_fine: &[f64],
    y0: &[f64],
    deltas: &[f64],
    seed: u64,
) -> Result<Vec<NoiseRow>> {
    let clean = problem.observe_refined(&fine.solve(h_true, y0_fine)?)?;
    let base = problem.reconstruct(&clean, y0, 0.0)?;
    let scale = problem.data_norm(&clean);
    let steps = problem.steps();
    let horizon = problem.scheme().tree().horizon();
    let zero = vec![0.0; problem.scheme().cells()];
    deltas
        .iter()
        .enumerate()
        .map(|(i, &delta)| {
            let mut rng = member_rng(seed, i as u64);
            let eta = RandomHistory::draw(&mut rng, HISTORY_MODES).sample(steps, horizon);
            let shape = problem.forward_map(&eta, &zero)?;
            let noise = shape.scale(delta * scale / problem.data_norm(&shape));
            let rec = problem.reconstruct(&clean.add_scaled(&noise, 1.0)?, y0, 0.0)?;
            let err: Vec<f64> = rec.h.iter().zip(h_true).map(|(a, b)| a - b).collect();
            let shift: Vec<f64> = rec.h.iter().zip(&base.h).map(|(a, b)| a - b).collect();
            let nu = problem.stability_norm(&noise);
            Ok(NoiseRow {
                delta,
                noise: nu,
                error: problem.history_norm(&err),
                slope: if nu > 0.0 { problem.history_norm(&shift) / nu } else { 0.0 },
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{DegenerateOperator, SpatialMesh};
    use crate::tree::FiltrationTree;

    fn problem(depth: usize, cells: usize) -> InverseProblem {
        let tree = FiltrationTree::new(depth, 1.0).unwrap();
        let op = DegenerateOperator::new(SpatialMesh::new(cells).unwrap(), 0.5, 0.0).unwrap();
        InverseProblem::new(Scheme::new(tree, op, (0.4, 0.8)), SourceProfile::default()).unwrap()
    }

    #[test]
    fn profile_bound() {
        let p = SourceProfile::default();
        assert!((p.lower_bound() - 0.75).abs() < 1e-15);
        let bad = SourceProfile {
            base: 0.2,
            ..SourceProfile::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn zero_history_zero_observation() {
        let p = problem(3, 8);
        let obs = p.forward_map(&[0.0; 3], &[0.0; 8]).unwrap();
        assert_eq!(obs.interior.max_abs(), 0.0);
        assert!(obs.terminal.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn round_trip_constant() {
        let p = problem(4, 16);
        let obs = p.forward_map(&[1.0; 4], &[0.0; 16]).unwrap();
        let rec = p.reconstruct(&obs, &[0.0; 16], 0.0).unwrap();
        for v in rec.h {
            assert!((v - 1.0).abs() < 1e-8);
        }
    }
}
