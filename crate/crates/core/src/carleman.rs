//! Evaluation of weighted space-time inequalities on computed trajectories.
//!
//! Every integral has the form `E Σ_k Σ_j q_k h · density(x_j, t_k) · m_{kj}`
//! where `m_{kj}` is a pointwise second moment (`E|u|²`, `E|u_x|²`, ...) and
//! the density carries `e^{2sφ}`. The moments do not depend on `s`, so they
//! are computed once per trajectory and reused across a sweep. All sums are
//! accumulated in the log domain because `2sφ` routinely leaves the `f64`
//! exponent range.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::mesh::BoundaryRegime;
use crate::solver::{mean_all, BackwardTrajectory, Controls, ProblemSpec, Scheme, RESIDUAL_TOLERANCE};
use crate::tree::AdaptedField;
use crate::weights::{beta_admissible, Interval, WeightKind, WeightSystem};

/// Streaming `ln Σ e^{l_i}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogSum {
    max: f64,
    acc: f64,
}

impl Default for LogSum {
    fn default() -> Self {
        Self::new()
    }
}

impl LogSum {
    pub fn new() -> Self {
        Self {
            max: f64::NEG_INFINITY,
            acc: 0.0,
        }
    }

    pub fn add_ln(&mut self, l: f64) {
        if l == f64::NEG_INFINITY {
            return;
        }
        if l <= self.max {
            self.acc += (l - self.max).exp();
        } else {
            self.acc = self.acc * (self.max - l).exp() + 1.0;
            self.max = l;
        }
    }

    /// `ln` of the accumulated sum; `−∞` when nothing positive was added.
    pub fn ln(&self) -> f64 {
        if self.max == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            self.max + self.acc.ln()
        }
    }
}

/// `ln(e^a + e^b)`.
fn ln_add(a: f64, b: f64) -> f64 {
    let mut s = LogSum::new();
    s.add_ln(a);
    s.add_ln(b);
    s.ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimateKind {
    /// Weighted bound for the backward equation with singular weight.
    BackwardSingular,
    /// Localized gradient bound.
    Cacciopoli,
    /// Weighted bound for the forward equation with regular weight.
    ForwardRegular,
    /// Bound for the adjoint system with convection.
    Convection,
}

impl EstimateKind {
    pub fn label(&self) -> &'static str {
        match self {
            EstimateKind::BackwardSingular => "backward-singular",
            EstimateKind::Cacciopoli => "cacciopoli",
            EstimateKind::ForwardRegular => "forward-regular",
            EstimateKind::Convection => "convection",
        }
    }
}

/// Time quadrature: state fields live on steps `0..=n` (trapezoid), step
/// fields such as `Z` or sources on `0..n−1` (left point).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quadrature {
    State,
    Step,
}

impl Quadrature {
    fn weights(&self, steps: usize, dt: f64) -> Vec<f64> {
        match self {
            Quadrature::State => (0..=steps)
                .map(|k| if k == 0 || k == steps { 0.5 * dt } else { dt })
                .collect(),
            Quadrature::Step => vec![dt; steps],
        }
    }
}

/// Weight values on the space-time grid of a scheme.
#[derive(Debug, Clone)]
pub struct WeightGrid {
    kind: WeightKind,
    lambda: f64,
    eps: f64,
    beta: f64,
    dt: f64,
    h: f64,
    steps: usize,
    x: Vec<f64>,
    /// `φ` or `Φ`; `−∞` where the singular weight vanishes.
    phi: Vec<Vec<f64>>,
    /// `ξ(t)` for singular weights, `Φ(x,t)` for regular ones.
    amp: Vec<Vec<f64>>,
    phi0: Vec<f64>,
    amp0: Vec<f64>,
    omega: Vec<bool>,
    omega1: Vec<bool>,
}

impl WeightGrid {
    pub fn new(ws: &WeightSystem, scheme: &Scheme) -> Result<Self> {
        let p = ws.params();
        let tree = scheme.tree();
        if (p.horizon - tree.horizon()).abs() > 1e-12 * tree.horizon() {
            return Err(invalid(
                "T",
                format!("weights use T = {}, tree uses T = {}", p.horizon, tree.horizon()),
            ));
        }
        if (p.eps - scheme.op().eps()).abs() > 0.0 {
            return Err(invalid(
                "eps",
                format!("weights use eps = {}, operator uses eps = {}", p.eps, scheme.op().eps()),
            ));
        }
        let mesh = scheme.mesh();
        let x = mesh.centers();
        let steps = tree.steps();
        let mut phi = Vec::with_capacity(steps + 1);
        let mut amp = Vec::with_capacity(steps + 1);
        let mut phi0 = Vec::with_capacity(steps + 1);
        let mut amp0 = Vec::with_capacity(steps + 1);
        for k in 0..=steps {
            let t = tree.time(k);
            match ws.kind() {
                WeightKind::Singular => {
                    let interior = k > 0 && k < steps;
                    let xi = if interior { crate::weights::xi(t, p.horizon)? } else { f64::NAN };
                    let row: Vec<f64> = x
                        .iter()
                        .map(|&xj| if interior { ws.psi_composite(xj) * xi } else { f64::NEG_INFINITY })
                        .collect();
                    phi.push(row);
                    amp.push(vec![xi; x.len()]);
                    phi0.push(if interior { ws.psi_composite(0.0) * xi } else { f64::NEG_INFINITY });
                    amp0.push(xi);
                }
                WeightKind::Regular => {
                    let row: Vec<f64> = x.iter().map(|&xj| ws.regular_weight(xj, t).0).collect();
                    phi.push(row.clone());
                    amp.push(row);
                    let v0 = ws.regular_weight(0.0, t).0;
                    phi0.push(v0);
                    amp0.push(v0);
                }
            }
        }
        let region = ws.region();
        Ok(Self {
            kind: ws.kind(),
            lambda: p.lambda,
            eps: p.eps,
            beta: p.beta,
            dt: tree.dt(),
            h: mesh.h(),
            steps,
            omega: interval_mask(&x, &region.omega),
            omega1: interval_mask(&x, &region.omega1),
            x,
            phi,
            amp,
            phi0,
            amp0,
        })
    }

    pub fn kind(&self) -> WeightKind {
        self.kind
    }

    /// `2·max_x Φ(x, T)`, the smallest exponent for which the terminal
    /// term `s² e^{c s} E‖v(T)‖²` dominates the weight at `T`.
    pub fn terminal_exponent_floor(&self) -> f64 {
        2.0 * self.phi[self.steps].iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }
}

fn interval_mask(x: &[f64], iv: &Interval) -> Vec<bool> {
    x.iter().map(|&v| iv.contains(v)).collect()
}

/// Which cells a term integrates over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    All,
    Omega,
    Omega1,
}

/// One side-term of an inequality.
#[derive(Debug, Clone, PartialEq)]
pub enum Term {
    /// `E∫∫ s^{sp} λ^{lp} amp^{ap} (x+ε)^{xp} e^{2sφ} m dx dt`.
    Field {
        name: String,
        moment: Vec<Vec<f64>>,
        quad: Quadrature,
        s_pow: i32,
        lambda_pow: i32,
        amp_pow: i32,
        x_pow: f64,
        region: Region,
    },
    /// `E∫ s^{sp} amp^{ap} ε^{xp} e^{2sφ} m dt` evaluated at `x = 0`.
    Boundary {
        name: String,
        series: Vec<f64>,
        quad: Quadrature,
        s_pow: i32,
        amp_pow: i32,
        x_pow: f64,
    },
    /// `s^{sp} e^{c s} E‖v(T)‖²`.
    Terminal { name: String, norm_sq: f64, s_pow: i32 },
}

impl Term {
    fn name(&self) -> &str {
        match self {
            Term::Field { name, .. } | Term::Boundary { name, .. } | Term::Terminal { name, .. } => name,
        }
    }

    fn ln_value(&self, grid: &WeightGrid, s: f64, terminal_exponent: Option<f64>) -> Result<f64> {
        let ln_s = s.ln();
        match self {
            Term::Field {
                moment,
                quad,
                s_pow,
                lambda_pow,
                amp_pow,
                x_pow,
                region,
                ..
            } => {
                let q = quad.weights(grid.steps, grid.dt);
                let mask = match region {
                    Region::All => None,
                    Region::Omega => Some(&grid.omega),
                    Region::Omega1 => Some(&grid.omega1),
                };
                let base = *s_pow as f64 * ln_s + *lambda_pow as f64 * grid.lambda.ln() + grid.h.ln();
                let mut acc = LogSum::new();
                for (k, row) in moment.iter().enumerate() {
                    for (j, &m) in row.iter().enumerate() {
                        let phi = grid.phi[k][j];
                        if m <= 0.0 || phi == f64::NEG_INFINITY || mask.is_some_and(|w| !w[j]) {
                            continue;
                        }
                        let mut l = base + q[k].ln() + m.ln() + 2.0 * s * phi;
                        if *amp_pow != 0 {
                            l += *amp_pow as f64 * grid.amp[k][j].ln();
                        }
                        if *x_pow != 0.0 {
                            l += x_pow * (grid.x[j] + grid.eps).ln();
                        }
                        acc.add_ln(l);
                    }
                }
                Ok(acc.ln())
            }
            Term::Boundary {
                series,
                quad,
                s_pow,
                amp_pow,
                x_pow,
                ..
            } => {
                if grid.eps == 0.0 {
                    return Ok(f64::NEG_INFINITY);
                }
                let q = quad.weights(grid.steps, grid.dt);
                let base = *s_pow as f64 * ln_s + x_pow * grid.eps.ln();
                let mut acc = LogSum::new();
                for (k, &m) in series.iter().enumerate() {
                    let phi = grid.phi0[k];
                    if m <= 0.0 || phi == f64::NEG_INFINITY {
                        continue;
                    }
                    acc.add_ln(base + q[k].ln() + m.ln() + *amp_pow as f64 * grid.amp0[k].ln() + 2.0 * s * phi);
                }
                Ok(acc.ln())
            }
            Term::Terminal { norm_sq, s_pow, .. } => {
                let c = terminal_exponent
                    .ok_or_else(|| invalid("terminal_exponent", "required by an estimate with a terminal term"))?;
                if *norm_sq <= 0.0 {
                    Ok(f64::NEG_INFINITY)
                } else {
                    Ok(*s_pow as f64 * ln_s + c * s + norm_sq.ln())
                }
            }
        }
    }
}

/// A term value stored as its logarithm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermValue {
    pub name: String,
    pub ln_value: f64,
}

/// Both sides of one inequality for one trajectory (or the worst member of
/// an ensemble) at one parameter point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InequalityReport {
    pub name: EstimateKind,
    pub s: f64,
    pub lambda: f64,
    pub beta: f64,
    pub eps: f64,
    pub lhs: Vec<TermValue>,
    pub rhs: Vec<TermValue>,
    pub ln_lhs: f64,
    pub ln_rhs: f64,
    /// `LHS / RHS`; `0` for a trivial report, `+∞` when only the right side
    /// vanishes.
    pub constant: f64,
    pub trivial: bool,
    pub ensemble: usize,
    pub terminal_exponent: Option<f64>,
}

/// Itemized inequality built from one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub kind: EstimateKind,
    pub lhs: Vec<Term>,
    pub rhs: Vec<Term>,
}

impl Estimate {
    pub fn evaluate(&self, grid: &WeightGrid, s: f64, terminal_exponent: Option<f64>) -> Result<InequalityReport> {
        if !(s > 0.0) {
            return Err(invalid("s", format!("must be positive, got {s}")));
        }
        let side = |terms: &[Term]| -> Result<(Vec<TermValue>, f64)> {
            let mut total = f64::NEG_INFINITY;
            let mut out = Vec::with_capacity(terms.len());
            for t in terms {
                let l = t.ln_value(grid, s, terminal_exponent)?;
                total = ln_add(total, l);
                out.push(TermValue {
                    name: t.name().to_string(),
                    ln_value: l,
                });
            }
            Ok((out, total))
        };
        let (lhs, ln_lhs) = side(&self.lhs)?;
        let (rhs, ln_rhs) = side(&self.rhs)?;
        let trivial = ln_lhs == f64::NEG_INFINITY && ln_rhs == f64::NEG_INFINITY;
        let constant = if ln_lhs == f64::NEG_INFINITY {
            0.0
        } else if ln_rhs == f64::NEG_INFINITY {
            f64::INFINITY
        } else {
            (ln_lhs - ln_rhs).exp()
        };
        Ok(InequalityReport {
            name: self.kind,
            s,
            lambda: grid.lambda,
            beta: grid.beta,
            eps: grid.eps,
            lhs,
            rhs,
            ln_lhs,
            ln_rhs,
            constant,
            trivial,
            ensemble: 1,
            terminal_exponent: self.has_terminal().then_some(terminal_exponent).flatten(),
        })
    }

    fn has_terminal(&self) -> bool {
        self.rhs.iter().any(|t| matches!(t, Term::Terminal { .. }))
    }
}

/// Ghost-value convention at a boundary for center gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ghost {
    /// Zero boundary value (odd reflection).
    Odd,
    /// Zero boundary flux (even reflection).
    Even,
    /// One-sided difference, no boundary assumption.
    OneSided,
}

/// Centered cell gradient with the given boundary conventions.
pub fn center_gradient(u: &[f64], h: f64, left: Ghost, right: Ghost) -> Vec<f64> {
    let n = u.len();
    let ghost = |g: Ghost, edge: f64| match g {
        Ghost::Odd => -edge,
        Ghost::Even | Ghost::OneSided => edge,
    };
    (0..n)
        .map(|j| {
            if j == 0 && left == Ghost::OneSided {
                return (u[1] - u[0]) / h;
            }
            if j + 1 == n && right == Ghost::OneSided {
                return (u[n - 1] - u[n - 2]) / h;
            }
            let l = if j > 0 { u[j - 1] } else { ghost(left, u[0]) };
            let r = if j + 1 < n { u[j + 1] } else { ghost(right, u[n - 1]) };
            (r - l) / (2.0 * h)
        })
        .collect()
}

fn state_ghosts(scheme: &Scheme) -> (Ghost, Ghost) {
    match scheme.op().regime() {
        BoundaryRegime::Dirichlet => (Ghost::Odd, Ghost::Odd),
        BoundaryRegime::ZeroFlux => (Ghost::Even, Ghost::Odd),
    }
}

/// `E|g(field)|²` per `(step, cell)` for steps `0..=last`.
pub fn second_moment(field: &AdaptedField, mut map: impl FnMut(&[f64]) -> Vec<f64>) -> Vec<Vec<f64>> {
    let n = field.len();
    (0..=field.last_step())
        .map(|k| {
            let nodes = field.level(k).len() / n;
            let mut acc = vec![0.0; n];
            for node in 0..nodes {
                for (a, v) in acc.iter_mut().zip(map(field.node(k, node))) {
                    *a += v * v;
                }
            }
            acc.iter().map(|a| a / nodes as f64).collect()
        })
        .collect()
}

fn plain_moment(field: &AdaptedField) -> Vec<Vec<f64>> {
    second_moment(field, |v| v.to_vec())
}

fn boundary_series(field: &AdaptedField, regime: BoundaryRegime) -> Vec<f64> {
    (0..=field.last_step())
        .map(|k| {
            let nodes = field.level(k).len() / field.len();
            let vals: Vec<f64> = (0..nodes)
                .map(|node| match regime {
                    BoundaryRegime::Dirichlet => 0.0,
                    BoundaryRegime::ZeroFlux => field.node(k, node)[0].powi(2),
                })
                .collect();
            mean_all(&vals)
        })
        .collect()
}

fn require_singular(grid: &WeightGrid) -> Result<()> {
    if grid.kind != WeightKind::Singular {
        return Err(invalid("weights", "this estimate uses the singular weight"));
    }
    Ok(())
}

fn require_admissible(scheme: &Scheme, grid: &WeightGrid) -> Result<()> {
    let adm = beta_admissible(scheme.op().alpha(), grid.beta);
    if !adm.admissible {
        return Err(invalid(
            "beta",
            format!(
                "beta = {} is not admissible for alpha = {} (admissible range ({}, {}])",
                grid.beta,
                scheme.op().alpha(),
                adm.lower,
                adm.upper
            ),
        ));
    }
    Ok(())
}

fn gate_backward(
    scheme: &Scheme,
    spec: &ProblemSpec,
    traj: &BackwardTrajectory,
    source: Option<&AdaptedField>,
) -> Result<()> {
    let r = scheme.backward_residual(spec, traj, source)?;
    if r > RESIDUAL_TOLERANCE {
        return Err(Error::Residual {
            residual: r,
            tolerance: RESIDUAL_TOLERANCE,
        });
    }
    Ok(())
}

fn step_moment(source: Option<&AdaptedField>, steps: usize, cells: usize) -> Vec<Vec<f64>> {
    match source {
        Some(f) => plain_moment(f).into_iter().take(steps).collect(),
        None => vec![vec![0.0; cells]; steps],
    }
}

/// Backward equation `du + (a(x) u_x)_x dt = f₁ dt + F₁ dB` with singular
/// weight; `F₁` is the `Z` component of the trajectory.
pub fn backward_singular(
    scheme: &Scheme,
    traj: &BackwardTrajectory,
    source: Option<&AdaptedField>,
    grid: &WeightGrid,
    include_boundary: bool,
) -> Result<Estimate> {
    require_singular(grid)?;
    require_admissible(scheme, grid)?;
    let spec = ProblemSpec::default();
    gate_backward(scheme, &spec, traj, source)?;
    let alpha = scheme.op().alpha();
    let beta = grid.beta;
    let (gl, gr) = state_ghosts(scheme);
    let h = scheme.mesh().h();
    let steps = scheme.tree().steps();
    let u2 = plain_moment(&traj.z);
    let ux2 = second_moment(&traj.z, |v| center_gradient(v, h, gl, gr));
    let z2 = plain_moment(&traj.big_z);
    let f2 = step_moment(source, steps, scheme.cells());

    let mut rhs = vec![
        field("f1^2", f2, Quadrature::Step, 0, 0, 0, 0.0, Region::All),
        field("s^2 xi^2 F1^2", z2, Quadrature::Step, 2, 0, 2, 0.0, Region::All),
        field("omega: s^3 xi^3 u^2", u2.clone(), Quadrature::State, 3, 0, 3, 0.0, Region::Omega),
    ];
    if include_boundary && grid.eps > 0.0 {
        rhs.push(Term::Boundary {
            name: "x=0: s^2 (x+eps)^(alpha+beta-1) xi^3 u^2".into(),
            series: boundary_series(&traj.z, scheme.op().regime()),
            quad: Quadrature::State,
            s_pow: 2,
            amp_pow: 3,
            x_pow: alpha + beta - 1.0,
        });
    }
    Ok(Estimate {
        kind: EstimateKind::BackwardSingular,
        lhs: vec![
            field(
                "s^3 xi^3 (x+eps)^(2alpha+3beta-4) u^2",
                u2,
                Quadrature::State,
                3,
                0,
                3,
                2.0 * alpha + 3.0 * beta - 4.0,
                Region::All,
            ),
            field(
                "s xi (x+eps)^(2alpha+beta-2) u_x^2",
                ux2,
                Quadrature::State,
                1,
                0,
                1,
                2.0 * alpha + beta - 2.0,
                Region::All,
            ),
        ],
        rhs,
    })
}

/// Localized gradient bound on `ω⁽¹⁾` for the same backward equation.
pub fn cacciopoli(
    scheme: &Scheme,
    traj: &BackwardTrajectory,
    source: Option<&AdaptedField>,
    grid: &WeightGrid,
) -> Result<Estimate> {
    require_singular(grid)?;
    gate_backward(scheme, &ProblemSpec::default(), traj, source)?;
    let (gl, gr) = state_ghosts(scheme);
    let h = scheme.mesh().h();
    let steps = scheme.tree().steps();
    let ux2 = second_moment(&traj.z, |v| center_gradient(v, h, gl, gr));
    Ok(Estimate {
        kind: EstimateKind::Cacciopoli,
        lhs: vec![field("omega1: xi u_x^2", ux2, Quadrature::State, 0, 0, 1, 0.0, Region::Omega1)],
        rhs: vec![
            field("omega: s^2 xi^3 u^2", plain_moment(&traj.z), Quadrature::State, 2, 0, 3, 0.0, Region::Omega),
            field(
                "s^-2 f1^2",
                step_moment(source, steps, scheme.cells()),
                Quadrature::Step,
                -2,
                0,
                0,
                0.0,
                Region::All,
            ),
            field("xi F1^2", plain_moment(&traj.big_z), Quadrature::Step, 0, 0, 1, 0.0, Region::All),
        ],
    })
}

/// Forward equation `dv − (a(x) v_x)_x dt = f₂ dt + F₂ dB`, `v(0) = 0`,
/// with regular weight. Sources are read from `spec.f` and `spec.big_f`.
pub fn forward_regular(
    scheme: &Scheme,
    spec: &ProblemSpec,
    v: &AdaptedField,
    grid: &WeightGrid,
    include_boundary: bool,
) -> Result<Estimate> {
    if grid.kind != WeightKind::Regular {
        return Err(invalid("weights", "this estimate uses the regular weight"));
    }
    require_admissible(scheme, grid)?;
    if !spec.a.is_zero() || !spec.b.is_zero() || !spec.c.is_zero() {
        return Err(invalid("spec", "the forward weighted bound is stated without lower-order terms"));
    }
    if v.node(0, 0).iter().any(|x| *x != 0.0) {
        return Err(invalid("y0", "the forward weighted bound requires a zero initial datum"));
    }
    let r = scheme.forward_residual(spec, v, &Controls::default())?;
    if r > RESIDUAL_TOLERANCE {
        return Err(Error::Residual {
            residual: r,
            tolerance: RESIDUAL_TOLERANCE,
        });
    }
    let alpha = scheme.op().alpha();
    let beta = grid.beta;
    let (gl, gr) = state_ghosts(scheme);
    let h = scheme.mesh().h();
    let steps = scheme.tree().steps();
    let cells = scheme.cells();
    let big_f2 = step_moment(spec.big_f.as_ref(), steps, cells);
    let big_fx2 = match &spec.big_f {
        Some(f) => second_moment(f, |row| center_gradient(row, h, Ghost::OneSided, Ghost::OneSided))
            .into_iter()
            .take(steps)
            .collect(),
        None => vec![vec![0.0; cells]; steps],
    };
    let v2 = plain_moment(v);
    let vx2 = second_moment(v, |row| center_gradient(row, h, gl, gr));
    let norm_t = {
        let w = scheme.mesh().weights();
        v.mean_square(steps, &w)
    };

    let mut rhs = vec![
        field("f2^2", step_moment(spec.f.as_ref(), steps, cells), Quadrature::Step, 0, 0, 0, 0.0, Region::All),
        field("s Phi F2_x^2", big_fx2, Quadrature::Step, 1, 0, 1, 0.0, Region::All),
        field("omega: s^3 Phi^3 v^2", v2.clone(), Quadrature::State, 3, 0, 3, 0.0, Region::Omega),
        Term::Terminal {
            name: "s^2 e^(c s) |v(T)|^2".into(),
            norm_sq: norm_t,
            s_pow: 2,
        },
    ];
    if include_boundary && grid.eps > 0.0 {
        rhs.push(Term::Boundary {
            name: "x=0: s^2 (x+eps)^(alpha+beta-1) v^2".into(),
            series: boundary_series(v, scheme.op().regime()),
            quad: Quadrature::State,
            s_pow: 2,
            amp_pow: 0,
            x_pow: alpha + beta - 1.0,
        });
        if let Some(f) = &spec.big_f {
            let series: Vec<f64> = boundary_series(f, BoundaryRegime::ZeroFlux).into_iter().take(steps).collect();
            rhs.push(Term::Boundary {
                name: "x=0: s^2 (x+eps)^(alpha+beta-1) F2^2".into(),
                series,
                quad: Quadrature::Step,
                s_pow: 2,
                amp_pow: 0,
                x_pow: alpha + beta - 1.0,
            });
        }
    }
    Ok(Estimate {
        kind: EstimateKind::ForwardRegular,
        lhs: vec![
            field("s lambda Phi F2^2", big_f2, Quadrature::Step, 1, 1, 1, 0.0, Region::All),
            field(
                "s^3 lambda^3 Phi^3 (x+eps)^(2alpha+3beta-4) v^2",
                v2,
                Quadrature::State,
                3,
                3,
                3,
                2.0 * alpha + 3.0 * beta - 4.0,
                Region::All,
            ),
            field(
                "s lambda Phi (x+eps)^(2alpha+beta-2) v_x^2",
                vx2,
                Quadrature::State,
                1,
                1,
                1,
                2.0 * alpha + beta - 2.0,
                Region::All,
            ),
        ],
        rhs,
    })
}

/// Adjoint system with convection, `α ∈ (0, 1/2)`.
pub fn convection(scheme: &Scheme, spec: &ProblemSpec, traj: &BackwardTrajectory, grid: &WeightGrid) -> Result<Estimate> {
    require_singular(grid)?;
    let alpha = scheme.op().alpha();
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(invalid(
            "alpha",
            format!("the convection estimate needs alpha in (0, 1/2), got {alpha}"),
        ));
    }
    gate_backward(scheme, spec, traj, None)?;
    let h = scheme.mesh().h();
    let z2 = plain_moment(&traj.z);
    let zx2 = second_moment(&traj.z, |v| center_gradient(v, h, Ghost::Odd, Ghost::Odd));
    Ok(Estimate {
        kind: EstimateKind::Convection,
        lhs: vec![
            field("s^3 xi^3 z^2", z2.clone(), Quadrature::State, 3, 0, 3, 0.0, Region::All),
            field("s xi (x+eps)^alpha z_x^2", zx2, Quadrature::State, 1, 0, 1, alpha, Region::All),
        ],
        rhs: vec![
            field("s^2 xi^2 Z^2", plain_moment(&traj.big_z), Quadrature::Step, 2, 0, 2, 0.0, Region::All),
            field("omega: s^3 xi^3 z^2", z2, Quadrature::State, 3, 0, 3, 0.0, Region::Omega),
        ],
    })
}

#[allow(clippy::too_many_arguments)]
fn field(
    name: &str,
    moment: Vec<Vec<f64>>,
    quad: Quadrature,
    s_pow: i32,
    lambda_pow: i32,
    amp_pow: i32,
    x_pow: f64,
    region: Region,
) -> Term {
    Term::Field {
        name: name.to_string(),
        moment,
        quad,
        s_pow,
        lambda_pow,
        amp_pow,
        x_pow,
        region,
    }
}

/// Ensemble maximum of `LHS/RHS` at one `s`; the report is that of the
/// worst member. Trivial members are skipped.
pub fn ensemble_report(
    estimates: &[Estimate],
    grid: &WeightGrid,
    s: f64,
    terminal_exponent: Option<f64>,
) -> Result<InequalityReport> {
    let reports = estimates
        .par_iter()
        .map(|e| e.evaluate(grid, s, terminal_exponent))
        .collect::<Result<Vec<_>>>()?;
    let members = reports.len();
    let mut worst = reports
        .into_iter()
        .filter(|r| !r.trivial)
        .max_by(|a, b| a.constant.total_cmp(&b.constant));
    match worst.as_mut() {
        Some(r) => {
            r.ensemble = members;
            Ok(r.clone())
        }
        None => {
            let mut r = estimates
                .first()
                .ok_or_else(|| invalid("ensemble", "must not be empty"))?
                .evaluate(grid, s, terminal_exponent)?;
            r.ensemble = members;
            Ok(r)
        }
    }
}

/// Fitted constants along an `s` grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub kind: EstimateKind,
    pub reports: Vec<InequalityReport>,
    /// Smallest grid value from which the constant is non-increasing.
    pub s_star: Option<f64>,
    /// `max_{s ≥ s*} C(s)`.
    pub bound: Option<f64>,
    pub terminal_exponent: Option<f64>,
}

impl SweepSummary {
    pub fn constants(&self) -> Vec<(f64, f64)> {
        self.reports.iter().map(|r| (r.s, r.constant)).collect()
    }

    pub fn constant_at(&self, s: f64) -> Option<f64> {
        self.reports.iter().find(|r| r.s == s).map(|r| r.constant)
    }

    pub fn finite(&self) -> bool {
        self.reports.iter().all(|r| r.constant.is_finite())
    }
}

/// Relative slack used when deciding that a sweep has stopped growing;
/// plateaus carry wiggles of order `1e-4` from the quadrature.
pub const MONOTONE_SLACK: f64 = 1e-3;

/// Index from which `values` is non-increasing (relative slack `tol`).
pub fn monotone_tail(values: &[f64], tol: f64) -> Option<usize> {
    if values.is_empty() {
        return None;
    }
    let mut start = values.len() - 1;
    while start > 0 && values[start - 1] * (1.0 + tol) >= values[start] {
        start -= 1;
    }
    Some(start)
}

pub fn sweep_s(
    estimates: &[Estimate],
    grid: &WeightGrid,
    s_values: &[f64],
    terminal_exponent: Option<f64>,
) -> Result<SweepSummary> {
    let kind = estimates
        .first()
        .ok_or_else(|| invalid("ensemble", "must not be empty"))?
        .kind;
    let reports = s_values
        .iter()
        .map(|&s| ensemble_report(estimates, grid, s, terminal_exponent))
        .collect::<Result<Vec<_>>>()?;
    let constants: Vec<f64> = reports.iter().map(|r| r.constant).collect();
    let tail = monotone_tail(&constants, MONOTONE_SLACK);
    let (s_star, bound) = match tail {
        Some(i) if constants.iter().all(|c| c.is_finite()) => (Some(s_values[i]), Some(constants[i])),
        _ => (None, None),
    };
    Ok(SweepSummary {
        kind,
        reports,
        s_star,
        bound,
        terminal_exponent,
    })
}

/// Sweep with the terminal exponent `c = floor + δ` for the smallest `δ`
/// among `offsets` whose sweep is non-increasing from the start of the
/// second half of the grid on.
pub fn sweep_with_fitted_exponent(
    estimates: &[Estimate],
    grid: &WeightGrid,
    s_values: &[f64],
    offsets: &[f64],
) -> Result<SweepSummary> {
    let floor = grid.terminal_exponent_floor();
    let half = s_values.len() / 2;
    let mut last = None;
    for &d in offsets {
        let sweep = sweep_s(estimates, grid, s_values, Some(floor + d))?;
        let ok = sweep
            .s_star
            .is_some_and(|s| s_values.iter().position(|v| *v == s).is_some_and(|i| i <= half));
        if ok {
            return Ok(sweep);
        }
        last = Some(sweep);
    }
    last.ok_or_else(|| invalid("offsets", "must not be empty"))
}

/// Terms of the observability ratio for one adjoint trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservabilityTerms {
    /// `E‖z(0)‖²`.
    pub initial: f64,
    /// `E∫‖Z‖² dt`.
    pub martingale: f64,
    /// `E∫∫_ω |z|² dx dt`.
    pub observed: f64,
}

impl ObservabilityTerms {
    pub fn ratio(&self) -> Option<f64> {
        let d = self.martingale + self.observed;
        (d > 0.0).then(|| self.initial / d)
    }
}

pub fn observability_terms(scheme: &Scheme, traj: &BackwardTrajectory) -> ObservabilityTerms {
    let mesh = scheme.mesh();
    let tree = scheme.tree();
    let steps = tree.steps();
    let dt = tree.dt();
    let w = mesh.weights();
    let omega_w: Vec<f64> = w.iter().zip(scheme.mask()).map(|(a, m)| a * m).collect();
    let initial = traj.z.mean_square(0, &w);
    let martingale = (0..steps).map(|k| dt * traj.big_z.mean_square(k, &w)).sum();
    let observed = (0..=steps)
        .map(|k| {
            let q = if k == 0 || k == steps { 0.5 } else { 1.0 };
            q * dt * traj.z.mean_square(k, &omega_w)
        })
        .sum();
    ObservabilityTerms {
        initial,
        martingale,
        observed,
    }
}

/// Ensemble maximum of the observability ratio, with the number of draws
/// skipped because both observed quantities vanish.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservabilityReport {
    pub max_ratio: f64,
    pub draws: usize,
    pub skipped: usize,
}

pub fn observability_report(terms: &[ObservabilityTerms]) -> ObservabilityReport {
    let ratios: Vec<f64> = terms.iter().filter_map(|t| t.ratio()).collect();
    ObservabilityReport {
        max_ratio: ratios.iter().cloned().fold(0.0, f64::max),
        draws: terms.len(),
        skipped: terms.len() - ratios.len(),
    }
}
