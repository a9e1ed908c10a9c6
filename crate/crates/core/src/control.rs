//! Penalized minimal-norm null controls.
//!
//! For the controlled system with drift control `g` on `ω` and diffusion
//! control `G` on the whole interval, minimize
//!
//! ```text
//! J(g, G) = ½ E∫∫_ω W_g |g|² + ½ E∫∫ W_G |G|² + 1/(2τ) E‖y(T)‖²
//! W_g = s^{-3} ξ^{-3} e^{-2s(φ-φ*)},   W_G = s^{-2} ξ^{-2} e^{-2s(φ-φ*)}
//! ```
//!
//! where `φ* = max φ` over the grid normalizes the weights. Conjugate
//! gradients run on the preconditioned variable `v = W^{1/2} u`, for which
//! the normal operator is `I + τ^{-1} D L* L D` with `D = W^{-1/2}` and
//! `L* p = (1_ω E[p_{k+1}|F_k], Z_k)` supplied by the exact discrete
//! adjoint. Controls live on steps `1..n−1`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::mesh::DegenerateOperator;
use crate::solver::{Controls, ProblemSpec, Scheme};
use crate::tree::AdaptedField;
use crate::weights::{beta_admissible, xi, ControlRegion, WeightKind, WeightParams, WeightSystem};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HumConfig {
    pub tau: f64,
    pub s: f64,
    pub lambda: f64,
    /// Spatial exponent of the weight; `None` selects `(4−2α)/3` for
    /// `α < 1/2` and `2−α` otherwise.
    pub beta: Option<f64>,
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for HumConfig {
    fn default() -> Self {
        Self {
            tau: 1e-3,
            s: 16.0,
            lambda: 1e-4,
            beta: None,
            max_iterations: 5000,
            tolerance: 1e-8,
        }
    }
}

impl HumConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            out.push(format!("tau must be positive, got {}", self.tau));
        }
        if !(self.tolerance > 0.0 && self.tolerance < 1.0) {
            out.push(format!("cg tolerance must lie in (0, 1), got {}", self.tolerance));
        }
        if self.max_iterations == 0 {
            out.push("cg max_iterations must be positive".into());
        }
        if !(self.s > 0.0) {
            out.push(format!("s must be positive, got {}", self.s));
        }
        if !(self.lambda > 0.0) {
            out.push(format!("lambda must be positive, got {}", self.lambda));
        }
        out
    }

    pub fn beta_for(&self, alpha: f64) -> f64 {
        self.beta.unwrap_or(if alpha < 0.5 { (4.0 - 2.0 * alpha) / 3.0 } else { 2.0 - alpha })
    }
}

/// Scalings `D = W^{-1/2}` of both controls on steps `0..n−1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlScaling {
    /// `d_g[k][j]`, zero outside `ω` and at `k = 0`.
    pub drift: Vec<Vec<f64>>,
    pub diffusion: Vec<Vec<f64>>,
    /// `φ*` used for normalization.
    pub phi_max: f64,
}

impl ControlScaling {
    pub fn new(scheme: &Scheme, region: &ControlRegion, cfg: &HumConfig) -> Result<Self> {
        let op = scheme.op();
        let tree = scheme.tree();
        let beta = cfg.beta_for(op.alpha());
        let adm = beta_admissible(op.alpha(), beta);
        if !adm.admissible {
            return Err(invalid(
                "beta",
                format!("beta = {beta} is not admissible for alpha = {}", op.alpha()),
            ));
        }
        let ws = WeightSystem::new(
            WeightParams {
                beta,
                lambda: cfg.lambda,
                s: cfg.s,
                eps: op.eps(),
                horizon: tree.horizon(),
                m_margin: 1.01,
            },
            *region,
            WeightKind::Singular,
        )?;
        let xs = scheme.mesh().centers();
        let steps = tree.steps();
        let psi: Vec<f64> = xs.iter().map(|&x| ws.psi_composite(x)).collect();
        let mut phi_max = f64::NEG_INFINITY;
        for k in 1..steps {
            let x_t = xi(tree.time(k), tree.horizon())?;
            for p in &psi {
                phi_max = phi_max.max(p * x_t);
            }
        }
        let s = cfg.s;
        let mut drift = vec![vec![0.0; xs.len()]; steps];
        let mut diffusion = vec![vec![0.0; xs.len()]; steps];
        for k in 1..steps {
            let x_t = xi(tree.time(k), tree.horizon())?;
            for j in 0..xs.len() {
                let e = (s * (psi[j] * x_t - phi_max)).exp();
                drift[k][j] = scheme.mask()[j] * (s * x_t).powf(1.5) * e;
                diffusion[k][j] = s * x_t * e;
            }
        }
        Ok(Self {
            drift,
            diffusion,
            phi_max,
        })
    }
}

/// A control pair over steps `0..n−1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlPair {
    pub g: AdaptedField,
    pub big_g: AdaptedField,
}

impl ControlPair {
    pub fn zeros(steps: usize, cells: usize) -> Self {
        Self {
            g: AdaptedField::zeros(steps - 1, cells),
            big_g: AdaptedField::zeros(steps - 1, cells),
        }
    }

    fn as_controls(&self) -> Controls {
        Controls {
            g: Some(self.g.clone()),
            big_g: Some(self.big_g.clone()),
        }
    }

    fn axpy(&mut self, a: f64, other: &Self) {
        for k in 0..=self.g.last_step() {
            for (x, y) in self.g.level_mut(k).iter_mut().zip(other.g.level(k)) {
                *x += a * y;
            }
            for (x, y) in self.big_g.level_mut(k).iter_mut().zip(other.big_g.level(k)) {
                *x += a * y;
            }
        }
    }

    fn scaled(&self, a: f64) -> Self {
        Self {
            g: self.g.scale(a),
            big_g: self.big_g.scale(a),
        }
    }

    /// Multiplies pointwise by the scaling (`D·`).
    fn apply_scaling(&self, d: &ControlScaling) -> Self {
        let mut out = self.clone();
        let n = self.g.len();
        for k in 0..=self.g.last_step() {
            for (i, v) in out.g.level_mut(k).iter_mut().enumerate() {
                *v *= d.drift[k][i % n];
            }
            for (i, v) in out.big_g.level_mut(k).iter_mut().enumerate() {
                *v *= d.diffusion[k][i % n];
            }
        }
        out
    }
}

/// `E Σ_k dt ⟨u_k, v_k⟩_h` summed over both components.
pub fn control_inner(scheme: &Scheme, a: &ControlPair, b: &ControlPair) -> f64 {
    let tree = scheme.tree();
    let h = scheme.mesh().h();
    let dt = tree.dt();
    let mut total = 0.0;
    for k in 0..tree.steps() {
        let nodes = tree.nodes_at(k) as f64;
        let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>();
        total += dt * h * (dot(a.g.level(k), b.g.level(k)) + dot(a.big_g.level(k), b.big_g.level(k))) / nodes;
    }
    total
}

/// `L* p_T = ((I − dt A)^{-1} E[p_{k+1}|F_k], Z_k)` from the backward solve of the
/// controlled system's adjoint with terminal datum `p_T`.
fn adjoint_of_terminal(scheme: &Scheme, spec: &ProblemSpec, terminal: &[f64]) -> Result<ControlPair> {
    let back = scheme.backward(spec, terminal, None)?;
    let steps = scheme.tree().steps();
    let n = scheme.cells();
    let mut out = ControlPair::zeros(steps, n);
    for k in 0..steps {
        out.g.level_mut(k).copy_from_slice(back.mean.level(k));
        out.big_g.level_mut(k).copy_from_slice(back.big_z.level(k));
    }
    Ok(out)
}

fn coefficient_free(spec: &ProblemSpec) -> ProblemSpec {
    ProblemSpec {
        f: None,
        big_f: None,
        ..spec.clone()
    }
}

/// Diagnostics of a penalized control solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumReport {
    pub tau: f64,
    pub iterations: usize,
    /// `‖u − Γ(u)‖_W / ‖Γ(0)‖_W` with `Γ(u) = −W^{-1} L*(y_u(T)/τ)`,
    /// recomputed from fresh forward and backward solves.
    pub optimality_residual: f64,
    pub residual_history: Vec<f64>,
    /// Functional value along the iterations.
    pub functional_history: Vec<f64>,
    pub functional: f64,
    /// `E‖y(T)‖²` with and without control.
    pub terminal_energy: f64,
    pub uncontrolled_terminal_energy: f64,
    /// Weighted control cost `E∫ W_g|g|² + E∫ W_G|G|²`.
    pub control_cost: f64,
    pub initial_energy: f64,
    pub phi_max: f64,
}

#[derive(Debug, Clone)]
pub struct HumSolution {
    pub controls: ControlPair,
    pub state: AdaptedField,
    pub report: HumReport,
}

pub fn hum_solve(
    scheme: &Scheme,
    spec: &ProblemSpec,
    region: &ControlRegion,
    y0: &[f64],
    cfg: &HumConfig,
) -> Result<HumSolution> {
    let v = cfg.violations();
    if !v.is_empty() {
        return Err(Error::Config(v));
    }
    let alpha = scheme.op().alpha();
    if !spec.a.is_zero() && !(alpha > 0.0 && alpha < 0.5) {
        return Err(invalid(
            "alpha",
            format!("controls with a convection term need alpha in (0, 1/2), got {alpha}"),
        ));
    }
    let spec = coefficient_free(spec);
    let steps = scheme.tree().steps();
    if steps < 2 {
        return Err(invalid("n", "controls need at least two time steps"));
    }
    let cells = scheme.cells();
    let mesh = *scheme.mesh();
    let scaling = ControlScaling::new(scheme, region, cfg)?;
    let tau = cfg.tau;
    let w = mesh.weights();

    let free = scheme.forward(&spec, y0, &Controls::default())?;
    let uncontrolled = free.mean_square(steps, &w);

    // K v = v + τ^{-1} D L*(L D v)
    let apply_k = |v: &ControlPair| -> Result<ControlPair> {
        let u = v.apply_scaling(&scaling);
        let y = scheme.forward(&spec, &vec![0.0; cells], &u.as_controls())?;
        let adj = adjoint_of_terminal(scheme, &spec, y.level(steps))?;
        let mut out = v.clone();
        out.axpy(1.0 / tau, &adj.apply_scaling(&scaling));
        Ok(out)
    };
    let b = adjoint_of_terminal(scheme, &spec, free.level(steps))?
        .apply_scaling(&scaling)
        .scaled(-1.0 / tau);
    let b_norm = control_inner(scheme, &b, &b).sqrt();
    let c0 = uncontrolled / (2.0 * tau);

    let mut x = ControlPair::zeros(steps, cells);
    let mut residual_history = vec![1.0];
    let mut functional_history = vec![c0];
    let mut iterations = 0;
    if b_norm > 0.0 {
        let mut r = b.clone();
        let mut p = r.clone();
        let mut rr = control_inner(scheme, &r, &r);
        let target = 0.1 * cfg.tolerance;
        loop {
            if (rr.sqrt() / b_norm) <= target {
                break;
            }
            if iterations >= cfg.max_iterations {
                return Err(Error::NoConvergence {
                    iterations,
                    residual: rr.sqrt() / b_norm,
                    history: residual_history,
                });
            }
            let kp = apply_k(&p)?;
            let step = rr / control_inner(scheme, &p, &kp);
            x.axpy(step, &p);
            r.axpy(-step, &kp);
            let rr_new = control_inner(scheme, &r, &r);
            p = {
                let mut next = r.clone();
                next.axpy(rr_new / rr, &p);
                next
            };
            rr = rr_new;
            iterations += 1;
            residual_history.push(rr.sqrt() / b_norm);
            let bx = control_inner(scheme, &b, &x) + control_inner(scheme, &r, &x);
            functional_history.push(c0 - 0.5 * bx);
        }
    }

    let controls = x.apply_scaling(&scaling);
    let state = scheme.forward(&spec, y0, &controls.as_controls())?;
    let terminal_energy = state.mean_square(steps, &w);
    let control_cost = control_inner(scheme, &x, &x);

    // Γ(u) in the preconditioned variable is −τ^{-1} D L*(y_u(T)); its
    // distance to v is the true residual of the normal equations.
    let optimality_residual = if b_norm > 0.0 {
        let gamma = adjoint_of_terminal(scheme, &spec, state.level(steps))?
            .apply_scaling(&scaling)
            .scaled(-1.0 / tau);
        let mut diff = x.clone();
        diff.axpy(-1.0, &gamma);
        control_inner(scheme, &diff, &diff).sqrt() / b_norm
    } else {
        0.0
    };

    Ok(HumSolution {
        controls,
        state,
        report: HumReport {
            tau,
            iterations,
            optimality_residual,
            residual_history,
            functional: 0.5 * control_cost + terminal_energy / (2.0 * tau),
            functional_history,
            terminal_energy,
            uncontrolled_terminal_energy: uncontrolled,
            control_cost,
            initial_energy: mesh.norm_sq(y0),
            phi_max: scaling.phi_max,
        },
    })
}

/// One row of a penalization sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayRow {
    pub tau: f64,
    pub terminal_energy: f64,
    pub uncontrolled_terminal_energy: f64,
    pub control_cost: f64,
    /// `control_cost / E‖y₀‖²`.
    pub cost_ratio: f64,
    pub iterations: usize,
    pub optimality_residual: f64,
}

pub fn decay_study(
    scheme: &Scheme,
    spec: &ProblemSpec,
    region: &ControlRegion,
    y0: &[f64],
    cfg: &HumConfig,
    taus: &[f64],
) -> Result<Vec<DecayRow>> {
    if taus.windows(2).any(|w| w[1] >= w[0]) {
        return Err(invalid("tau", "the penalization grid must be strictly decreasing"));
    }
    taus.iter()
        .map(|&tau| {
            let sol = hum_solve(scheme, spec, region, y0, &HumConfig { tau, ..*cfg })?;
            let r = sol.report;
            Ok(DecayRow {
                tau,
                terminal_energy: r.terminal_energy,
                uncontrolled_terminal_energy: r.uncontrolled_terminal_energy,
                control_cost: r.control_cost,
                cost_ratio: if r.initial_energy > 0.0 {
                    r.control_cost / r.initial_energy
                } else {
                    0.0
                },
                iterations: r.iterations,
                optimality_residual: r.optimality_residual,
            })
        })
        .collect()
}

/// Distance between the controls computed for consecutive `ε` values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonControlRow {
    pub eps_from: f64,
    pub eps_to: f64,
    /// `(E Σ dt ‖g_i − g_j‖² + ‖G_i − G_j‖²)^{1/2}`.
    pub distance: f64,
    pub cost_ratio_from: f64,
    pub cost_ratio_to: f64,
}

pub fn epsilon_uniformity_study(
    scheme_for: impl Fn(f64) -> Result<Scheme>,
    spec: &ProblemSpec,
    region: &ControlRegion,
    y0: &[f64],
    cfg: &HumConfig,
    eps_list: &[f64],
) -> Result<Vec<EpsilonControlRow>> {
    if eps_list.windows(2).any(|w| w[1] > w[0]) {
        return Err(invalid("eps", "the grid must be non-increasing"));
    }
    let sols = eps_list
        .iter()
        .map(|&eps| {
            let scheme = scheme_for(eps)?;
            let sol = hum_solve(&scheme, spec, region, y0, cfg)?;
            Ok((scheme, sol))
        })
        .collect::<Result<Vec<_>>>()?;
    let ratio = |r: &HumReport| {
        if r.initial_energy > 0.0 {
            r.control_cost / r.initial_energy
        } else {
            0.0
        }
    };
    Ok(eps_list
        .windows(2)
        .zip(sols.windows(2))
        .map(|(e, s)| {
            let mut d = s[0].1.controls.clone();
            d.axpy(-1.0, &s[1].1.controls);
            EpsilonControlRow {
                eps_from: e[0],
                eps_to: e[1],
                distance: control_inner(&s[0].0, &d, &d).sqrt(),
                cost_ratio_from: ratio(&s[0].1.report),
                cost_ratio_to: ratio(&s[1].1.report),
            }
        })
        .collect())
}

/// Convenience constructor used by the studies: same tree and mesh,
/// operator rebuilt for `eps`.
pub fn scheme_with_eps(base: &Scheme, eps: f64, region: &ControlRegion) -> Result<Scheme> {
    let op = DegenerateOperator::new(*base.mesh(), base.op().alpha(), eps)?;
    Ok(Scheme::new(*base.tree(), op, (region.omega.lo, region.omega.hi)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::SpatialMesh;
    use crate::tree::FiltrationTree;

    fn setup(depth: usize, cells: usize) -> (Scheme, ControlRegion) {
        let region = ControlRegion::default();
        let tree = FiltrationTree::new(depth, 1.0).unwrap();
        let op = DegenerateOperator::new(SpatialMesh::new(cells).unwrap(), 0.3, 0.01).unwrap();
        (Scheme::new(tree, op, (region.omega.lo, region.omega.hi)), region)
    }

    #[test]
    fn zero_initial_state_gives_zero_controls() {
        let (scheme, region) = setup(4, 16);
        let sol = hum_solve(&scheme, &ProblemSpec::default(), &region, &[0.0; 16], &HumConfig::default()).unwrap();
        assert_eq!(sol.controls.g.max_abs(), 0.0);
        assert_eq!(sol.controls.big_g.max_abs(), 0.0);
        assert_eq!(sol.state.max_abs(), 0.0);
        assert_eq!(sol.report.functional, 0.0);
    }

    #[test]
    fn drift_control_supported_in_omega() {
        let (scheme, region) = setup(4, 16);
        let y0: Vec<f64> = scheme.mesh().centers().iter().map(|x| (std::f64::consts::PI * x).sin()).collect();
        let sol = hum_solve(&scheme, &ProblemSpec::default(), &region, &y0, &HumConfig::default()).unwrap();
        let mask = scheme.mask();
        for k in 0..4 {
            for node in 0..(1 << k) {
                for (j, v) in sol.controls.g.node(k, node).iter().enumerate() {
                    if mask[j] == 0.0 || k == 0 {
                        assert_eq!(*v, 0.0);
                    }
                }
            }
        }
        assert!(sol.report.optimality_residual <= 1e-8);
    }

    #[test]
    fn bad_config_lists_all_problems() {
        let cfg = HumConfig {
            tau: -1.0,
            tolerance: 2.0,
            max_iterations: 0,
            ..HumConfig::default()
        };
        assert_eq!(cfg.violations().len(), 3);
    }
}
