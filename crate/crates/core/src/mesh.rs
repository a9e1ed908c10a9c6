//! Uniform cell-centred mesh on `(0, 1)` and the conservative
//! finite-volume discretization of `z ↦ ((x+ε)^α z_x)_x`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpatialMesh {
    cells: usize,
    h: f64,
}

impl SpatialMesh {
    pub fn new(cells: usize) -> Result<Self> {
        if cells < 2 {
            return Err(invalid("N", format!("need at least 2 cells, got {cells}")));
        }
        Ok(Self {
            cells,
            h: 1.0 / cells as f64,
        })
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// Centre of cell `j` (0-based): `(j + 1/2) h`.
    pub fn center(&self, j: usize) -> f64 {
        (j as f64 + 0.5) * self.h
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.cells).map(|j| self.center(j)).collect()
    }

    /// Face `f` sits at `f·h`, `f = 0..=N`; face `f` separates cells `f-1` and `f`.
    pub fn face(&self, f: usize) -> f64 {
        f as f64 * self.h
    }

    /// Midpoint quadrature weights (all equal to `h`).
    pub fn weights(&self) -> Vec<f64> {
        vec![self.h; self.cells]
    }

    /// `⟨u, v⟩ = h Σ u_j v_j`.
    pub fn inner(&self, u: &[f64], v: &[f64]) -> f64 {
        self.h * u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>()
    }

    pub fn norm_sq(&self, u: &[f64]) -> f64 {
        self.inner(u, u)
    }

    /// Indicator of the cells whose centres lie in `(lo, hi)`.
    pub fn indicator(&self, lo: f64, hi: f64) -> Vec<bool> {
        (0..self.cells)
            .map(|j| {
                let x = self.center(j);
                x > lo && x < hi
            })
            .collect()
    }
}

/// Left boundary condition, fixed by the degeneracy exponent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryRegime {
    /// `α ∈ (0, 1)`: `z(0) = 0`.
    Dirichlet,
    /// `α ∈ [1, 2)`: `((x+ε)^α z_x)(0) = 0`.
    ZeroFlux,
}

impl BoundaryRegime {
    pub fn for_alpha(alpha: f64) -> Self {
        if alpha < 1.0 {
            Self::Dirichlet
        } else {
            Self::ZeroFlux
        }
    }
}

/// Symmetric tridiagonal discretization of `((x+ε)^α z_x)_x` with a
/// homogeneous Dirichlet condition at `x = 1`.
///
/// Face conductances are stored per unit time: `conductance[f]` couples
/// cells `f-1` and `f`; entries `0` and `N` couple the boundary cells to the
/// boundary values through a half cell.
#[derive(Debug, Clone, PartialEq)]
pub struct DegenerateOperator {
    mesh: SpatialMesh,
    alpha: f64,
    eps: f64,
    regime: BoundaryRegime,
    conductance: Vec<f64>,
}

impl DegenerateOperator {
    pub fn new(mesh: SpatialMesh, alpha: f64, eps: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 2.0) {
            return Err(invalid("alpha", format!("must lie in (0, 2), got {alpha}")));
        }
        Self::assemble(mesh, alpha, eps)
    }

    /// Assembly without the range check on `α` (used with `α = 0` to
    /// compare against the plain Laplacian).
    pub(crate) fn assemble(mesh: SpatialMesh, alpha: f64, eps: f64) -> Result<Self> {
        if !(eps >= 0.0 && eps.is_finite()) {
            return Err(invalid("eps", format!("must be finite and ≥ 0, got {eps}")));
        }
        let n = mesh.cells();
        let h = mesh.h();
        let regime = BoundaryRegime::for_alpha(alpha);
        let mut conductance = vec![0.0; n + 1];
        for (f, c) in conductance.iter_mut().enumerate().take(n).skip(1) {
            *c = (mesh.face(f) + eps).powf(alpha) / (h * h);
        }
        conductance[0] = match regime {
            BoundaryRegime::Dirichlet => 1.0 / (h * inverse_power_integral(alpha, eps, 0.5 * h)),
            BoundaryRegime::ZeroFlux => 0.0,
        };
        conductance[n] = 1.0 / (h * inverse_power_integral(alpha, eps + 1.0 - 0.5 * h, 0.5 * h));
        Ok(Self {
            mesh,
            alpha,
            eps,
            regime,
            conductance,
        })
    }

    pub fn mesh(&self) -> &SpatialMesh {
        &self.mesh
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn regime(&self) -> BoundaryRegime {
        self.regime
    }

    pub fn conductances(&self) -> &[f64] {
        &self.conductance
    }

    /// Lower, main and upper diagonals.
    pub fn diagonals(&self) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let n = self.mesh.cells();
        let c = &self.conductance;
        let lower = (1..n).map(|j| c[j]).collect();
        let main = (0..n).map(|j| -(c[j] + c[j + 1])).collect();
        let upper = (0..n - 1).map(|j| c[j + 1]).collect();
        (lower, main, upper)
    }

    pub fn apply(&self, u: &[f64], out: &mut [f64]) {
        let n = self.mesh.cells();
        let c = &self.conductance;
        for j in 0..n {
            let left = if j > 0 { u[j - 1] } else { 0.0 };
            let right = if j + 1 < n { u[j + 1] } else { 0.0 };
            out[j] = c[j + 1] * (right - u[j]) - c[j] * (u[j] - left);
        }
    }

    pub fn apply_vec(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; u.len()];
        self.apply(u, &mut out);
        out
    }

    /// `−⟨A u, u⟩`, the discrete `∫ (x+ε)^α |u_x|²`.
    pub fn dirichlet_form(&self, u: &[f64]) -> f64 {
        let n = self.mesh.cells();
        let c = &self.conductance;
        let h = self.mesh.h();
        let mut acc = c[0] * u[0] * u[0] + c[n] * u[n - 1] * u[n - 1];
        for j in 1..n {
            let d = u[j] - u[j - 1];
            acc += c[j] * d * d;
        }
        h * acc
    }

    /// Factorization of `I − dt·A`.
    pub fn implicit_step(&self, dt: f64) -> ImplicitSolver {
        let (lower, main, upper) = self.diagonals();
        let main: Vec<f64> = main.iter().map(|d| 1.0 - dt * d).collect();
        let lower: Vec<f64> = lower.iter().map(|l| -dt * l).collect();
        let upper: Vec<f64> = upper.iter().map(|u| -dt * u).collect();
        ImplicitSolver::new(&lower, &main, &upper)
    }
}

/// `∫_a^{a+w} x^{-α} dx` for `a ≥ 0`.
fn inverse_power_integral(alpha: f64, a: f64, w: f64) -> f64 {
    if (alpha - 1.0).abs() < 1e-14 {
        ((a + w) / a).ln()
    } else {
        let p = 1.0 - alpha;
        ((a + w).powf(p) - a.powf(p)) / p
    }
}

/// Thomas factorization of a tridiagonal matrix, reused across solves.
#[derive(Debug, Clone)]
pub struct ImplicitSolver {
    lower: Vec<f64>,
    upper_mod: Vec<f64>,
    denom: Vec<f64>,
}

impl ImplicitSolver {
    pub fn new(lower: &[f64], main: &[f64], upper: &[f64]) -> Self {
        let n = main.len();
        let mut upper_mod = vec![0.0; n.saturating_sub(1)];
        let mut denom = vec![0.0; n];
        denom[0] = main[0];
        for i in 1..n {
            upper_mod[i - 1] = upper[i - 1] / denom[i - 1];
            denom[i] = main[i] - lower[i - 1] * upper_mod[i - 1];
        }
        assert!(
            denom.iter().all(|d| *d > 0.0),
            "implicit step matrix lost positive definiteness"
        );
        Self {
            lower: lower.to_vec(),
            upper_mod,
            denom,
        }
    }

    /// Solves in place.
    pub fn solve(&self, rhs: &mut [f64]) {
        let n = rhs.len();
        rhs[0] /= self.denom[0];
        for i in 1..n {
            rhs[i] = (rhs[i] - self.lower[i - 1] * rhs[i - 1]) / self.denom[i];
        }
        for i in (0..n - 1).rev() {
            rhs[i] -= self.upper_mod[i] * rhs[i + 1];
        }
    }
}

/// Both sides of the weighted Hardy–Poincaré inequality
/// `∫(x+ε)^{-γ} z² ≤ 4/(γ-1)² ∫(x+ε)^{2-γ} z_x²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HardyReport {
    pub gamma: f64,
    pub eps: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
}

/// Evaluates the Hardy–Poincaré pair for nodal values `z_0..z_N` on the
/// vertices `x_i = i/N` of a uniform grid, with `z_0 = z_N = 0`.
///
/// The left side uses the trapezoid rule on vertices; the right side
/// uses cell differences with the weight at cell midpoints.
pub fn hardy_check(gamma: f64, eps: f64, z: &[f64]) -> Result<HardyReport> {
    if !(0.0..=2.0).contains(&gamma) || (gamma - 1.0).abs() < 1e-12 {
        return Err(invalid("gamma", format!("must lie in [0,1)∪(1,2], got {gamma}")));
    }
    if !(0.0..1.0).contains(&eps) {
        return Err(invalid("eps", format!("must lie in [0, 1), got {eps}")));
    }
    if z.len() < 3 {
        return Err(invalid("z", "need at least 3 nodal values"));
    }
    if z[0] != 0.0 || z[z.len() - 1] != 0.0 {
        return Err(invalid("z", "profile must vanish at both endpoints"));
    }
    let cells = z.len() - 1;
    let h = 1.0 / cells as f64;
    let lhs: f64 = (1..cells)
        .map(|i| h * (i as f64 * h + eps).powf(-gamma) * z[i] * z[i])
        .sum();
    let grad: f64 = (0..cells)
        .map(|i| {
            let xm = (i as f64 + 0.5) * h + eps;
            let d = (z[i + 1] - z[i]) / h;
            h * xm.powf(2.0 - gamma) * d * d
        })
        .sum();
    let rhs = 4.0 / (gamma - 1.0).powi(2) * grad;
    let ratio = if rhs > 0.0 { lhs / rhs } else { 0.0 };
    Ok(HardyReport {
        gamma,
        eps,
        lhs,
        rhs,
        ratio,
    })
}

/// `∫ |z|² + x^α |z_x|²` for a cell-centred vector: midpoint rule for the
/// mass term, interior face differences for the gradient term.
pub fn weighted_h1_norm(mesh: &SpatialMesh, z: &[f64], alpha: f64) -> f64 {
    let h = mesh.h();
    let mass: f64 = z.iter().map(|v| h * v * v).sum();
    let grad: f64 = (1..mesh.cells())
        .map(|f| {
            let d = (z[f] - z[f - 1]) / h;
            h * mesh.face(f).powf(alpha) * d * d
        })
        .sum();
    mass + grad
}
