//! Forward and backward solvers on the filtration tree.
//!
//! Forward step from node `i` at `t_k` to its children:
//!
//! ```text
//! y^± = S [y + dt (a D y + b y + f + 1_ω g) ± √dt (c y + G + F)],   S = (I − dt A)^{-1}
//! ```
//!
//! The backward step is the exact transpose of this map under the pairing
//! `E⟨·,·⟩`: with `(m, Z)` the martingale decomposition of `S z^±`,
//!
//! ```text
//! z = m + dt (−D(a m) + b m + c Z − f)
//! ```
//!
//! so that duality identities hold to rounding error.

use std::borrow::Cow;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::mesh::{DegenerateOperator, ImplicitSolver, SpatialMesh};
use crate::tree::{martingale_decomposition, AdaptedField, FiltrationTree};

/// Relative tolerance for the post-solve recursion residual.
pub const RESIDUAL_TOLERANCE: f64 = 1e-8;

/// A space-time coefficient sampled at the start of each step.
#[derive(Debug, Clone, PartialEq)]
pub enum Coefficient {
    Constant(f64),
    /// Time-independent, deterministic cell values.
    Spatial(Vec<f64>),
    /// Adapted field over steps `0..n−1` (or more).
    Adapted(AdaptedField),
}

impl Default for Coefficient {
    fn default() -> Self {
        Coefficient::Constant(0.0)
    }
}

impl Coefficient {
    pub fn values(&self, step: usize, node: usize, cells: usize) -> Cow<'_, [f64]> {
        match self {
            Coefficient::Constant(v) => Cow::Owned(vec![*v; cells]),
            Coefficient::Spatial(v) => Cow::Borrowed(v),
            Coefficient::Adapted(f) => Cow::Borrowed(f.node(step, node)),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Coefficient::Constant(v) => *v == 0.0,
            Coefficient::Spatial(v) => v.iter().all(|x| *x == 0.0),
            Coefficient::Adapted(f) => f.max_abs() == 0.0,
        }
    }

    fn check(&self, name: &'static str, tree: &FiltrationTree, cells: usize) -> Result<()> {
        let finite = match self {
            Coefficient::Constant(v) => v.is_finite(),
            Coefficient::Spatial(v) => {
                if v.len() != cells {
                    return Err(Error::Shape(format!("{name}: {} values for {cells} cells", v.len())));
                }
                v.iter().all(|x| x.is_finite())
            }
            Coefficient::Adapted(f) => {
                check_step_field(name, f, tree, cells)?;
                f.max_abs().is_finite()
            }
        };
        if finite {
            Ok(())
        } else {
            Err(invalid(name, "coefficient has non-finite entries"))
        }
    }
}

/// How the convection coefficient enters: as given, or as `a = x^{α/2} ã`
/// with `ã` supplied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConvectionMode {
    #[default]
    Plain,
    Decomposed,
}

/// Coefficients and sources of the linear equation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ProblemSpec {
    pub a: Coefficient,
    pub b: Coefficient,
    pub c: Coefficient,
    pub convection: ConvectionMode,
    /// Drift source over steps `0..n−1`.
    pub f: Option<AdaptedField>,
    /// Diffusion source over steps `0..n−1`.
    pub big_f: Option<AdaptedField>,
}

impl ProblemSpec {
    pub fn constant(a: f64, b: f64, c: f64) -> Self {
        Self {
            a: Coefficient::Constant(a),
            b: Coefficient::Constant(b),
            c: Coefficient::Constant(c),
            ..Self::default()
        }
    }
}

/// Controls: `g` acts on `ω` in the drift, `G` everywhere in the diffusion.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Controls {
    pub g: Option<AdaptedField>,
    pub big_g: Option<AdaptedField>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackwardTrajectory {
    /// `z` on steps `0..=n`.
    pub z: AdaptedField,
    /// `Z` on steps `0..n−1`.
    pub big_z: AdaptedField,
    /// `(I − dt A)^{-1} E[z_{k+1} | F_k]` on steps `0..n−1`.
    pub mean: AdaptedField,
}

/// Tree, operator and the factorized implicit step.
#[derive(Debug, Clone)]
pub struct Scheme {
    tree: FiltrationTree,
    op: DegenerateOperator,
    solver: ImplicitSolver,
    mask: Vec<f64>,
}

fn check_step_field(name: &str, f: &AdaptedField, tree: &FiltrationTree, cells: usize) -> Result<()> {
    if f.len() != cells || f.last_step() + 1 < tree.steps() {
        return Err(Error::Shape(format!(
            "{name}: field with {} steps of length {} does not cover steps 0..{} with {cells} cells",
            f.last_step() + 1,
            f.len(),
            tree.steps()
        )));
    }
    Ok(())
}

fn axpy(out: &mut [f64], alpha: f64, x: &[f64]) {
    for (o, v) in out.iter_mut().zip(x) {
        *o += alpha * v;
    }
}

/// Centered difference with zero ghost values; skew-symmetric.
pub fn centered_difference(u: &[f64], h: f64, out: &mut [f64]) {
    let n = u.len();
    for j in 0..n {
        let l = if j > 0 { u[j - 1] } else { 0.0 };
        let r = if j + 1 < n { u[j + 1] } else { 0.0 };
        out[j] = (r - l) / (2.0 * h);
    }
}

impl Scheme {
    /// `omega` selects the cells (by center) where the drift control acts.
    pub fn new(tree: FiltrationTree, op: DegenerateOperator, omega: (f64, f64)) -> Self {
        let solver = op.implicit_step(tree.dt());
        let mask = op
            .mesh()
            .indicator(omega.0, omega.1)
            .into_iter()
            .map(|b| if b { 1.0 } else { 0.0 })
            .collect();
        Self { tree, op, solver, mask }
    }

    pub fn tree(&self) -> &FiltrationTree {
        &self.tree
    }

    pub fn op(&self) -> &DegenerateOperator {
        &self.op
    }

    pub fn mesh(&self) -> &SpatialMesh {
        self.op.mesh()
    }

    pub fn cells(&self) -> usize {
        self.op.mesh().cells()
    }

    /// `1_ω` on cell centers.
    pub fn mask(&self) -> &[f64] {
        &self.mask
    }

    fn validate(&self, spec: &ProblemSpec) -> Result<()> {
        let n = self.cells();
        spec.a.check("a", &self.tree, n)?;
        spec.b.check("b", &self.tree, n)?;
        spec.c.check("c", &self.tree, n)?;
        if let Some(f) = &spec.f {
            check_step_field("f", f, &self.tree, n)?;
        }
        if let Some(f) = &spec.big_f {
            check_step_field("F", f, &self.tree, n)?;
        }
        if spec.convection == ConvectionMode::Plain && !spec.a.is_zero() && self.op.alpha() >= 1.0 {
            return Err(invalid(
                "a",
                format!(
                    "a plain convection coefficient needs alpha in (0, 1), got {}; use the decomposed mode",
                    self.op.alpha()
                ),
            ));
        }
        Ok(())
    }

    fn convection(&self, spec: &ProblemSpec, step: usize, node: usize) -> Cow<'_, [f64]> {
        let n = self.cells();
        let raw = spec.a.values(step, node, n);
        match spec.convection {
            ConvectionMode::Plain => Cow::Owned(raw.into_owned()),
            ConvectionMode::Decomposed => {
                let half = 0.5 * self.op.alpha();
                let mesh = self.mesh();
                Cow::Owned(raw.iter().enumerate().map(|(j, v)| mesh.center(j).powf(half) * v).collect())
            }
        }
    }

    /// Forward trajectory over steps `0..=n`.
    pub fn forward(&self, spec: &ProblemSpec, y0: &[f64], controls: &Controls) -> Result<AdaptedField> {
        let n = self.cells();
        if y0.len() != n {
            return Err(Error::Shape(format!("initial datum has {} values for {n} cells", y0.len())));
        }
        self.validate(spec)?;
        if let Some(g) = &controls.g {
            check_step_field("g", g, &self.tree, n)?;
        }
        if let Some(g) = &controls.big_g {
            check_step_field("G", g, &self.tree, n)?;
        }

        let steps = self.tree.steps();
        let dt = self.tree.dt();
        let sq = self.tree.sqrt_dt();
        let h = self.mesh().h();
        let mut y = AdaptedField::zeros(steps, n);
        y.level_mut(0).copy_from_slice(y0);

        for k in 0..steps {
            let (current, rest) = y.level_pair_mut(k);
            rest.par_chunks_mut(2 * n).enumerate().for_each(|(node, out)| {
                let yk = &current[node * n..(node + 1) * n];
                let a = self.convection(spec, k, node);
                let b = spec.b.values(k, node, n);
                let c = spec.c.values(k, node, n);

                let mut dy = vec![0.0; n];
                centered_difference(yk, h, &mut dy);
                let mut mean: Vec<f64> = (0..n).map(|j| yk[j] + dt * (a[j] * dy[j] + b[j] * yk[j])).collect();
                if let Some(f) = &spec.f {
                    axpy(&mut mean, dt, f.node(k, node));
                }
                if let Some(g) = &controls.g {
                    for ((d, gv), m) in mean.iter_mut().zip(g.node(k, node)).zip(&self.mask) {
                        *d += dt * m * gv;
                    }
                }
                self.solver.solve(&mut mean);

                let mut noise: Vec<f64> = (0..n).map(|j| c[j] * yk[j]).collect();
                if let Some(f) = &spec.big_f {
                    axpy(&mut noise, 1.0, f.node(k, node));
                }
                if let Some(g) = &controls.big_g {
                    axpy(&mut noise, 1.0, g.node(k, node));
                }
                self.solver.solve(&mut noise);
                let (up, down) = out.split_at_mut(n);
                for j in 0..n {
                    up[j] = mean[j] + sq * noise[j];
                    down[j] = mean[j] - sq * noise[j];
                }
            });
        }
        let residual = self.forward_residual(spec, &y, controls)?;
        gate(residual)?;
        Ok(y)
    }

    /// Backward pair `(z, Z)` from terminal leaf values `z_T` (the
    /// `2^n · N` values of the last level) and an optional source `f` on
    /// steps `0..n−1`.
    pub fn backward(
        &self,
        spec: &ProblemSpec,
        terminal: &[f64],
        source: Option<&AdaptedField>,
    ) -> Result<BackwardTrajectory> {
        let n = self.cells();
        let steps = self.tree.steps();
        if terminal.len() != self.tree.leaves() * n {
            return Err(Error::Shape(format!(
                "terminal datum has {} values, expected {} leaves x {n} cells",
                terminal.len(),
                self.tree.leaves()
            )));
        }
        self.validate(spec)?;
        if let Some(f) = source {
            check_step_field("backward source", f, &self.tree, n)?;
        }
        let dt = self.tree.dt();
        let mut z = AdaptedField::zeros(steps, n);
        let mut big_z = AdaptedField::zeros(steps - 1, n);
        let mut mean = AdaptedField::zeros(steps - 1, n);
        z.level_mut(steps).copy_from_slice(terminal);

        for k in (0..steps).rev() {
            let next = z.level(k + 1).to_vec();
            let zk: Vec<[Vec<f64>; 3]> = (0..self.tree.nodes_at(k))
                .into_par_iter()
                .map(|node| {
                    let plus = &next[2 * node * n..(2 * node + 1) * n];
                    let minus = &next[(2 * node + 1) * n..(2 * node + 2) * n];
                    let (mut m, mut zz) = martingale_decomposition(plus, minus, dt);
                    self.solver.solve(&mut m);
                    self.solver.solve(&mut zz);
                    let out = self.backward_step(spec, k, node, &m, &zz, source);
                    [out, zz, m]
                })
                .collect();
            for (node, [zv, zz, m]) in zk.into_iter().enumerate() {
                z.node_mut(k, node).copy_from_slice(&zv);
                big_z.node_mut(k, node).copy_from_slice(&zz);
                mean.node_mut(k, node).copy_from_slice(&m);
            }
        }
        let traj = BackwardTrajectory { z, big_z, mean };
        gate(self.backward_residual(spec, &traj, source)?)?;
        Ok(traj)
    }

    /// Backward solve from a deterministic terminal vector.
    pub fn backward_deterministic(
        &self,
        spec: &ProblemSpec,
        terminal: &[f64],
        source: Option<&AdaptedField>,
    ) -> Result<BackwardTrajectory> {
        let leaves = self.tree.leaves();
        let mut full = Vec::with_capacity(leaves * terminal.len());
        for _ in 0..leaves {
            full.extend_from_slice(terminal);
        }
        self.backward(spec, &full, source)
    }

    /// `z_k = m + dt(−D(a m) + b m + c Z) − dt ρ_k` from the smoothed
    /// conditional mean `m` and `Z`.
    fn backward_step(
        &self,
        spec: &ProblemSpec,
        k: usize,
        node: usize,
        m: &[f64],
        zz: &[f64],
        source: Option<&AdaptedField>,
    ) -> Vec<f64> {
        let n = self.cells();
        let dt = self.tree.dt();
        let a = self.convection(spec, k, node);
        let b = spec.b.values(k, node, n);
        let c = spec.c.values(k, node, n);
        let am: Vec<f64> = (0..n).map(|j| a[j] * m[j]).collect();
        let mut dam = vec![0.0; n];
        centered_difference(&am, self.mesh().h(), &mut dam);
        let mut out: Vec<f64> = (0..n).map(|j| m[j] + dt * (-dam[j] + b[j] * m[j] + c[j] * zz[j])).collect();
        if let Some(f) = source {
            axpy(&mut out, -dt, f.node(k, node));
        }
        out
    }

    /// Relative residual of the forward recursion in the un-solved form
    /// `(I − dt A) E[y_{k+1}|F_k] = y_k + dt·drift`, `(I − dt A) slope = noise`.
    pub fn forward_residual(&self, spec: &ProblemSpec, y: &AdaptedField, controls: &Controls) -> Result<f64> {
        let n = self.cells();
        let dt = self.tree.dt();
        let h = self.mesh().h();
        let scale = 1.0 + y.max_abs();
        let mut worst = 0.0f64;
        for k in 0..self.tree.steps() {
            let level = y.level(k + 1);
            for node in 0..self.tree.nodes_at(k) {
                let yk = y.node(k, node);
                let plus = &level[2 * node * n..(2 * node + 1) * n];
                let minus = &level[(2 * node + 1) * n..(2 * node + 2) * n];
                let (mean, slope) = martingale_decomposition(plus, minus, dt);
                let a = self.convection(spec, k, node);
                let b = spec.b.values(k, node, n);
                let c = spec.c.values(k, node, n);
                let mut dy = vec![0.0; n];
                centered_difference(yk, h, &mut dy);
                let mut rhs: Vec<f64> = (0..n).map(|j| yk[j] + dt * (a[j] * dy[j] + b[j] * yk[j])).collect();
                if let Some(f) = &spec.f {
                    axpy(&mut rhs, dt, f.node(k, node));
                }
                if let Some(g) = &controls.g {
                    for ((d, gv), m) in rhs.iter_mut().zip(g.node(k, node)).zip(&self.mask) {
                        *d += dt * m * gv;
                    }
                }
                let mut noise: Vec<f64> = (0..n).map(|j| c[j] * yk[j]).collect();
                if let Some(f) = &spec.big_f {
                    axpy(&mut noise, 1.0, f.node(k, node));
                }
                if let Some(g) = &controls.big_g {
                    axpy(&mut noise, 1.0, g.node(k, node));
                }
                let am = self.op.apply_vec(&mean);
                let asl = self.op.apply_vec(&slope);
                for j in 0..n {
                    worst = worst.max((mean[j] - dt * am[j] - rhs[j]).abs());
                    worst = worst.max(dt.sqrt() * (slope[j] - dt * asl[j] - noise[j]).abs());
                }
            }
        }
        Ok(worst / scale)
    }

    pub fn backward_residual(
        &self,
        spec: &ProblemSpec,
        traj: &BackwardTrajectory,
        source: Option<&AdaptedField>,
    ) -> Result<f64> {
        let n = self.cells();
        let dt = self.tree.dt();
        let scale = 1.0 + traj.z.max_abs();
        let mut worst = 0.0f64;
        for k in 0..self.tree.steps() {
            let level = traj.z.level(k + 1);
            for node in 0..self.tree.nodes_at(k) {
                let plus = &level[2 * node * n..(2 * node + 1) * n];
                let minus = &level[(2 * node + 1) * n..(2 * node + 2) * n];
                let (m, zz) = martingale_decomposition(plus, minus, dt);
                let sm = traj.mean.node(k, node);
                let sz = traj.big_z.node(k, node);
                let am = self.op.apply_vec(sm);
                let az = self.op.apply_vec(sz);
                let zk = self.backward_step(spec, k, node, sm, sz, source);
                let stored = traj.z.node(k, node);
                for j in 0..n {
                    worst = worst.max((sm[j] - dt * am[j] - m[j]).abs());
                    worst = worst.max(dt.sqrt() * (sz[j] - dt * az[j] - zz[j]).abs());
                    worst = worst.max((zk[j] - stored[j]).abs());
                }
            }
        }
        Ok(worst / scale)
    }

    /// `|E⟨y_n, z_n⟩ − ⟨y_0, z_0⟩ − Σ_k dt E[⟨f_k + 1_ω g_k, m_k⟩ + ⟨G_k + F_k, Z_k⟩ + ⟨y_k, ρ_k⟩]|`
    /// where `m_k` is the smoothed conditional mean stored with the backward
    /// trajectory and `ρ` is the backward source.
    pub fn duality_residual(
        &self,
        spec: &ProblemSpec,
        controls: &Controls,
        y: &AdaptedField,
        back: &BackwardTrajectory,
        source: Option<&AdaptedField>,
    ) -> Result<f64> {
        let n = self.cells();
        let steps = self.tree.steps();
        if y.len() != n || back.z.len() != n || y.last_step() != steps || back.z.last_step() != steps {
            return Err(Error::Shape("forward and backward trajectories use different discretizations".into()));
        }
        let mesh = self.mesh();
        let pair = |k: usize, u: &AdaptedField, v: &AdaptedField| -> f64 {
            let vals: Vec<f64> = (0..self.tree.nodes_at(k))
                .map(|node| mesh.inner(u.node(k, node), v.node(k, node)))
                .collect();
            mean_all(&vals)
        };
        let lhs = pair(steps, y, &back.z) - pair(0, y, &back.z);

        let dt = self.tree.dt();
        let mut rhs = 0.0;
        for k in 0..steps {
            let m = back.mean.level(k);
            let mut vals = Vec::with_capacity(self.tree.nodes_at(k));
            for node in 0..self.tree.nodes_at(k) {
                let mk = &m[node * n..(node + 1) * n];
                let zk = back.big_z.node(k, node);
                let mut drift = vec![0.0; n];
                if let Some(f) = &spec.f {
                    axpy(&mut drift, 1.0, f.node(k, node));
                }
                if let Some(g) = &controls.g {
                    for ((d, gv), w) in drift.iter_mut().zip(g.node(k, node)).zip(&self.mask) {
                        *d += w * gv;
                    }
                }
                let mut noise = vec![0.0; n];
                if let Some(f) = &spec.big_f {
                    axpy(&mut noise, 1.0, f.node(k, node));
                }
                if let Some(g) = &controls.big_g {
                    axpy(&mut noise, 1.0, g.node(k, node));
                }
                let mut v = mesh.inner(&drift, mk) + mesh.inner(&noise, zk);
                if let Some(r) = source {
                    v += mesh.inner(y.node(k, node), r.node(k, node));
                }
                vals.push(v);
            }
            rhs += dt * mean_all(&vals);
        }
        Ok((lhs - rhs).abs())
    }
}

fn gate(residual: f64) -> Result<()> {
    if residual.is_finite() && residual <= RESIDUAL_TOLERANCE {
        Ok(())
    } else {
        Err(Error::Residual {
            residual,
            tolerance: RESIDUAL_TOLERANCE,
        })
    }
}

/// Mean over equally weighted nodes (exact tree expectation).
pub fn mean_all(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Energy quantities of a forward trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    /// `sup_k E‖y_k‖²`.
    pub sup_l2: f64,
    /// `E Σ_k dt ⟨−A y_k, y_k⟩` (trapezoid in time).
    pub gradient: f64,
    /// `‖y_0‖² + E Σ_k dt (‖f_k‖² + ‖F_k‖²)`.
    pub data: f64,
}

impl EnergyReport {
    /// Smallest `C` with `sup_l2 + gradient ≤ C · data`.
    pub fn constant(&self) -> f64 {
        if self.data == 0.0 {
            0.0
        } else {
            (self.sup_l2 + self.gradient) / self.data
        }
    }
}

pub fn energy_report(scheme: &Scheme, spec: &ProblemSpec, y: &AdaptedField) -> EnergyReport {
    let mesh = scheme.mesh();
    let tree = scheme.tree();
    let steps = tree.steps();
    let dt = tree.dt();
    let w = mesh.weights();
    let sup_l2 = (0..=steps).map(|k| y.mean_square(k, &w)).fold(0.0, f64::max);
    let mut gradient = 0.0;
    for k in 0..=steps {
        let per_node: Vec<f64> = (0..tree.nodes_at(k))
            .map(|node| scheme.op().dirichlet_form(y.node(k, node)))
            .collect();
        let q = if k == 0 || k == steps { 0.5 } else { 1.0 };
        gradient += q * dt * mean_all(&per_node);
    }
    let mut data = mesh.norm_sq(y.node(0, 0));
    for field in [&spec.f, &spec.big_f].into_iter().flatten() {
        for k in 0..steps {
            data += dt * field.mean_square(k, &w);
        }
    }
    EnergyReport { sup_l2, gradient, data }
}

/// `sup_k E‖u_k − v_k‖²`.
pub fn sup_distance(mesh: &SpatialMesh, u: &AdaptedField, v: &AdaptedField) -> Result<f64> {
    let d = u.zip_with(v, |a, b| a - b)?;
    let w = mesh.weights();
    Ok((0..=d.last_step()).map(|k| d.mean_square(k, &w)).fold(0.0, f64::max))
}

/// One row of an ε-convergence table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonDistance {
    pub eps_from: f64,
    pub eps_to: f64,
    pub distance: f64,
}

/// Distances between trajectories for consecutive entries of `eps_list`,
/// together with the trajectories themselves.
pub fn epsilon_convergence(
    tree: FiltrationTree,
    mesh: SpatialMesh,
    alpha: f64,
    omega: (f64, f64),
    spec: &ProblemSpec,
    y0: &[f64],
    eps_list: &[f64],
) -> Result<(Vec<EpsilonDistance>, Vec<AdaptedField>)> {
    if eps_list.is_empty() {
        return Err(invalid("eps_list", "must not be empty"));
    }
    if eps_list.windows(2).any(|w| w[1] > w[0]) {
        return Err(invalid("eps_list", "must be non-increasing"));
    }
    let trajectories = eps_list
        .iter()
        .map(|&eps| {
            let op = DegenerateOperator::new(mesh, alpha, eps)?;
            Scheme::new(tree, op, omega).forward(spec, y0, &Controls::default())
        })
        .collect::<Result<Vec<_>>>()?;
    let rows = eps_list
        .windows(2)
        .zip(trajectories.windows(2))
        .map(|(e, t)| {
            Ok(EpsilonDistance {
                eps_from: e[0],
                eps_to: e[1],
                distance: sup_distance(&mesh, &t[0], &t[1])?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((rows, trajectories))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scheme(depth: usize, cells: usize, alpha: f64, eps: f64) -> Scheme {
        let tree = FiltrationTree::new(depth, 1.0).unwrap();
        let op = DegenerateOperator::new(SpatialMesh::new(cells).unwrap(), alpha, eps).unwrap();
        Scheme::new(tree, op, (0.4, 0.8))
    }

    fn bump(mesh: &SpatialMesh) -> Vec<f64> {
        mesh.centers().iter().map(|x| (std::f64::consts::PI * x).sin()).collect()
    }

    #[test]
    fn zero_data_gives_zero() {
        let s = scheme(4, 16, 0.5, 0.01);
        let spec = ProblemSpec::constant(0.3, -0.2, 0.5);
        let y = s.forward(&spec, &vec![0.0; 16], &Controls::default()).unwrap();
        assert_eq!(y.max_abs(), 0.0);
        let back = s.backward(&spec, &vec![0.0; 16 << 4], None).unwrap();
        assert_eq!(back.z.max_abs(), 0.0);
        assert_eq!(back.big_z.max_abs(), 0.0);
    }

    #[test]
    fn noise_free_is_deterministic() {
        let s = scheme(5, 16, 0.5, 0.0);
        let spec = ProblemSpec {
            f: Some(AdaptedField::deterministic(4, 16, |_, _| 1.0)),
            ..ProblemSpec::default()
        };
        let y = s.forward(&spec, &bump(s.mesh()), &Controls::default()).unwrap();
        assert!(y.is_deterministic(0.0));
        let back = s.backward_deterministic(&ProblemSpec::default(), &bump(s.mesh()), None).unwrap();
        assert_eq!(back.big_z.max_abs(), 0.0);
        assert!(back.z.is_deterministic(0.0));
    }

    #[test]
    fn dissipative_without_noise() {
        let s = scheme(6, 32, 1.5, 0.0);
        let y0 = bump(s.mesh());
        let y = s.forward(&ProblemSpec::default(), &y0, &Controls::default()).unwrap();
        let n0 = s.mesh().norm_sq(&y0);
        for k in 0..=6 {
            assert!(s.mesh().norm_sq(y.node(k, 0)) <= n0);
        }
    }

    #[test]
    fn plain_convection_rejected_for_large_alpha() {
        let s = scheme(3, 8, 1.5, 0.0);
        let spec = ProblemSpec::constant(1.0, 0.0, 0.0);
        assert!(s.forward(&spec, &[0.0; 8], &Controls::default()).is_err());
        let spec = ProblemSpec {
            convection: ConvectionMode::Decomposed,
            ..spec
        };
        assert!(s.forward(&spec, &[0.0; 8], &Controls::default()).is_ok());
    }

    #[test]
    fn centered_difference_is_skew() {
        let u = [0.3, -1.0, 2.0, 0.5, 0.1];
        let v = [1.0, 0.2, -0.7, 0.4, 2.0];
        let mut du = [0.0; 5];
        let mut dv = [0.0; 5];
        centered_difference(&u, 0.2, &mut du);
        centered_difference(&v, 0.2, &mut dv);
        let a: f64 = du.iter().zip(&v).map(|(x, y)| x * y).sum();
        let b: f64 = u.iter().zip(&dv).map(|(x, y)| x * y).sum();
        assert!((a + b).abs() < 1e-14);
    }
}
