//! Ensemble studies shared by the command line and the test suites: each
//! function draws its random data from `member_rng(seed, member)` and
//! returns plain rows that can be checked or written out.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::carleman::{
    backward_singular, cacciopoli, convection, forward_regular, observability_report, observability_terms, sweep_s,
    sweep_with_fitted_exponent, Estimate, EstimateKind, ObservabilityReport, SweepSummary, WeightGrid,
};
use crate::error::{invalid, Result};
use crate::mesh::{hardy_check, DegenerateOperator, SpatialMesh};
use crate::random::{member_rng, RandomField, SineProfile};
use crate::solver::{
    energy_report, epsilon_convergence, sup_distance, Coefficient, ConvectionMode, Controls, EpsilonDistance,
    ProblemSpec, Scheme,
};
use crate::tree::{AdaptedField, FiltrationTree, DEFAULT_DEPTH_CAP};
use crate::weights::{beta_admissible, ControlRegion, WeightKind, WeightParams, WeightSystem};

/// Number of sine modes in random data.
pub const DATA_MODES: usize = 4;

/// Offsets tried above `2·max Φ(·,T)` when fitting the terminal exponent.
pub const TERMINAL_OFFSETS: [f64; 5] = [0.0, 0.5, 1.0, 2.0, 4.0];

/// Problem and discretization shared by all studies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Setup {
    pub alpha: f64,
    pub eps: f64,
    pub horizon: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub convection: ConvectionMode,
    pub region: ControlRegion,
    pub cells: usize,
    pub depth: usize,
    pub cap: usize,
}

impl Default for Setup {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            eps: 0.0,
            horizon: 1.0,
            a: 0.0,
            b: 0.0,
            c: 0.0,
            convection: ConvectionMode::Plain,
            region: ControlRegion::default(),
            cells: 32,
            depth: 6,
            cap: DEFAULT_DEPTH_CAP,
        }
    }
}

impl Setup {
    pub fn tree(&self) -> Result<FiltrationTree> {
        FiltrationTree::with_cap(self.depth, self.horizon, self.cap)
    }

    pub fn mesh(&self) -> Result<SpatialMesh> {
        SpatialMesh::new(self.cells)
    }

    pub fn scheme(&self) -> Result<Scheme> {
        let op = DegenerateOperator::new(self.mesh()?, self.alpha, self.eps)?;
        Ok(Scheme::new(self.tree()?, op, (self.region.omega.lo, self.region.omega.hi)))
    }

    /// Coefficients `a`, `b`, `c` without sources.
    pub fn spec(&self) -> ProblemSpec {
        ProblemSpec {
            a: Coefficient::Constant(self.a),
            b: Coefficient::Constant(self.b),
            c: Coefficient::Constant(self.c),
            convection: self.convection,
            ..ProblemSpec::default()
        }
    }

    pub fn with_eps(&self, eps: f64) -> Self {
        Self { eps, ..*self }
    }

    pub fn with_cells(&self, cells: usize) -> Self {
        Self { cells, ..*self }
    }

    pub fn with_depth(&self, depth: usize) -> Self {
        Self { depth, ..*self }
    }
}

/// Random data of one ensemble member: an initial profile and two
/// adapted fields (used as terminal datum and drift source, or as drift
/// and diffusion sources).
#[derive(Debug, Clone)]
pub struct MemberData {
    pub profile: SineProfile,
    pub first: RandomField,
    pub second: RandomField,
}

impl MemberData {
    pub fn draw(seed: u64, member: u64) -> Self {
        let mut rng = member_rng(seed, member);
        let first = RandomField::draw(&mut rng, DATA_MODES);
        let second = RandomField::draw(&mut rng, DATA_MODES);
        let profile = SineProfile::draw(&mut rng, DATA_MODES);
        Self { profile, first, second }
    }
}

/// Weight parameters of a Carleman sweep; `beta = None` picks `2 − α`,
/// or `(4 − 2α)/3` for the convection estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightChoice {
    pub beta: Option<f64>,
    pub lambda: f64,
    pub m_margin: f64,
}

impl Default for WeightChoice {
    fn default() -> Self {
        Self {
            beta: None,
            lambda: 2.0,
            m_margin: 1.01,
        }
    }
}

impl WeightChoice {
    pub fn beta_for(&self, kind: EstimateKind, alpha: f64) -> f64 {
        self.beta.unwrap_or(match kind {
            EstimateKind::Convection => (4.0 - 2.0 * alpha) / 3.0,
            _ => 2.0 - alpha,
        })
    }
}

/// Weight grid and per-member estimates for one Carleman inequality.
pub fn carleman_ensemble(
    setup: &Setup,
    kind: EstimateKind,
    weights: &WeightChoice,
    draws: usize,
    seed: u64,
) -> Result<(WeightGrid, Vec<Estimate>)> {
    if draws == 0 {
        return Err(invalid("draws", "must be positive"));
    }
    let scheme = setup.scheme()?;
    let beta = weights.beta_for(kind, setup.alpha);
    let adm = beta_admissible(setup.alpha, beta);
    if !adm.admissible {
        return Err(invalid(
            "beta",
            format!("beta = {beta} is not admissible for alpha = {}", setup.alpha),
        ));
    }
    let wkind = match kind {
        EstimateKind::ForwardRegular => WeightKind::Regular,
        _ => WeightKind::Singular,
    };
    let ws = WeightSystem::new(
        WeightParams {
            beta,
            lambda: weights.lambda,
            s: 1.0,
            eps: setup.eps,
            horizon: setup.horizon,
            m_margin: weights.m_margin,
        },
        setup.region,
        wkind,
    )?;
    let grid = WeightGrid::new(&ws, &scheme)?;
    let tree = *scheme.tree();
    let mesh = *scheme.mesh();
    let last = tree.steps() - 1;
    let estimates = (0..draws as u64)
        .into_par_iter()
        .map(|m| {
            let data = MemberData::draw(seed, m);
            match kind {
                EstimateKind::BackwardSingular | EstimateKind::Cacciopoli => {
                    let f = data.second.sample(&tree, &mesh, last);
                    let traj =
                        scheme.backward(&ProblemSpec::default(), &data.first.terminal(&tree, &mesh), Some(&f))?;
                    if kind == EstimateKind::BackwardSingular {
                        backward_singular(&scheme, &traj, Some(&f), &grid, true)
                    } else {
                        cacciopoli(&scheme, &traj, Some(&f), &grid)
                    }
                }
                EstimateKind::Convection => {
                    let spec = setup.spec();
                    let traj = scheme.backward(&spec, &data.first.terminal(&tree, &mesh), None)?;
                    convection(&scheme, &spec, &traj, &grid)
                }
                EstimateKind::ForwardRegular => {
                    let spec = ProblemSpec {
                        f: Some(data.second.sample(&tree, &mesh, last)),
                        big_f: Some(data.first.sample(&tree, &mesh, last)),
                        ..ProblemSpec::default()
                    };
                    let v = scheme.forward(&spec, &vec![0.0; mesh.cells()], &Controls::default())?;
                    forward_regular(&scheme, &spec, &v, &grid, true)
                }
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((grid, estimates))
}

/// Ensemble sweep over `s`; the forward estimate fits its terminal
/// exponent from [`TERMINAL_OFFSETS`].
pub fn carleman_sweep(
    setup: &Setup,
    kind: EstimateKind,
    weights: &WeightChoice,
    s_values: &[f64],
    draws: usize,
    seed: u64,
) -> Result<SweepSummary> {
    if s_values.is_empty() || s_values.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("s", "the grid must be non-empty and strictly increasing"));
    }
    let (grid, estimates) = carleman_ensemble(setup, kind, weights, draws, seed)?;
    match kind {
        EstimateKind::ForwardRegular => sweep_with_fitted_exponent(&estimates, &grid, s_values, &TERMINAL_OFFSETS),
        _ => sweep_s(&estimates, &grid, s_values, None),
    }
}

/// Observability ratios `E‖z(0)‖² / (E∫‖Z‖² + E∫_ω|z|²)` over random
/// terminal data for the adjoint system with the setup's coefficients.
pub fn observability_study(setup: &Setup, draws: usize, seed: u64) -> Result<(ObservabilityReport, Vec<f64>)> {
    if draws == 0 {
        return Err(invalid("draws", "must be positive"));
    }
    let scheme = setup.scheme()?;
    let spec = setup.spec();
    let tree = *scheme.tree();
    let mesh = *scheme.mesh();
    let terms = (0..draws as u64)
        .into_par_iter()
        .map(|m| {
            let data = MemberData::draw(seed, m);
            let traj = scheme.backward(&spec, &data.first.terminal(&tree, &mesh), None)?;
            Ok(observability_terms(&scheme, &traj))
        })
        .collect::<Result<Vec<_>>>()?;
    let ratios = terms.iter().map(|t| t.ratio().unwrap_or(f64::NAN)).collect();
    Ok((observability_report(&terms), ratios))
}

/// Worst Hardy ratio for one `(γ, ε)` over random profiles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HardyRow {
    pub gamma: f64,
    pub eps: f64,
    pub max_ratio: f64,
    pub slack: f64,
    pub pass: bool,
}

/// Random zero-endpoint profile on `cells + 1` vertices: sine modes plus
/// a bump `x^p (1 − x)` with a random power.
pub fn hardy_profile(seed: u64, member: u64, cells: usize) -> Vec<f64> {
    use rand::Rng;
    let mut rng = member_rng(seed, member);
    let sines = SineProfile::draw(&mut rng, 6);
    let p: f64 = rng.random_range(0.6..3.0);
    let amp: f64 = rng.random_range(-1.0..1.0);
    let mut z: Vec<f64> = (0..=cells)
        .map(|i| {
            let x = i as f64 / cells as f64;
            sines.eval(x) + amp * x.powf(p) * (1.0 - x)
        })
        .collect();
    z[0] = 0.0;
    z[cells] = 0.0;
    z
}

pub fn hardy_study(cells: usize, gammas: &[f64], eps_list: &[f64], profiles: usize, seed: u64) -> Result<Vec<HardyRow>> {
    if profiles == 0 {
        return Err(invalid("profiles", "must be positive"));
    }
    let zs: Vec<Vec<f64>> = (0..profiles as u64).map(|m| hardy_profile(seed, m, cells)).collect();
    let slack = 1.0 + 5.0 / cells as f64;
    let mut rows = Vec::new();
    for &gamma in gammas {
        for &eps in eps_list {
            let mut worst = 0.0f64;
            for z in &zs {
                worst = worst.max(hardy_check(gamma, eps, z)?.ratio);
            }
            rows.push(HardyRow {
                gamma,
                eps,
                max_ratio: worst,
                slack,
                pass: worst <= slack,
            });
        }
    }
    Ok(rows)
}

/// Fitted energy constant for one `(ε, N)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyRow {
    pub eps: f64,
    pub cells: usize,
    pub constant: f64,
}

/// Smallest `C` over an ensemble with `sup E‖y‖² + E∫(x+ε)^α|y_x|² ≤ C·data`,
/// with random initial data and both sources.
pub fn energy_study(
    setup: &Setup,
    eps_list: &[f64],
    cells_list: &[usize],
    draws: usize,
    seed: u64,
) -> Result<Vec<EnergyRow>> {
    let mut rows = Vec::new();
    for &cells in cells_list {
        for &eps in eps_list {
            let s = setup.with_cells(cells).with_eps(eps);
            let scheme = s.scheme()?;
            let tree = *scheme.tree();
            let mesh = *scheme.mesh();
            let last = tree.steps() - 1;
            let constants = (0..draws as u64)
                .into_par_iter()
                .map(|m| {
                    let data = MemberData::draw(seed, m);
                    let spec = ProblemSpec {
                        f: Some(data.first.sample(&tree, &mesh, last)),
                        big_f: Some(data.second.sample(&tree, &mesh, last)),
                        ..s.spec()
                    };
                    let y = scheme.forward(&spec, &data.profile.sample(&mesh), &Controls::default())?;
                    Ok(energy_report(&scheme, &spec, &y).constant())
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(EnergyRow {
                eps,
                cells,
                constant: constants.into_iter().fold(0.0, f64::max),
            });
        }
    }
    Ok(rows)
}

/// Distances along a decreasing `ε` list ending at `0`, together with
/// the refinement floor: the distance between the `ε = 0` solutions on
/// `N` and `2N` cells, the fine one averaged onto the coarse mesh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CauchyReport {
    pub consecutive: Vec<EpsilonDistance>,
    /// `sup_k E‖y^ε − y^0‖²` for every positive `ε` in the list.
    pub to_limit: Vec<(f64, f64)>,
    pub floor: f64,
}

impl CauchyReport {
    pub fn strictly_decreasing(&self) -> bool {
        let positive: Vec<f64> = self
            .consecutive
            .iter()
            .filter(|r| r.eps_to > 0.0)
            .map(|r| r.distance)
            .collect();
        positive.windows(2).all(|w| w[1] < w[0]) && self.to_limit.windows(2).all(|w| w[1].1 < w[0].1)
    }

    /// Distance of the smallest positive `ε` to the limit, relative to
    /// the floor.
    pub fn floor_multiple(&self) -> f64 {
        match self.to_limit.last() {
            Some((_, d)) if self.floor > 0.0 => d / self.floor,
            Some((_, d)) if *d == 0.0 => 0.0,
            _ => f64::INFINITY,
        }
    }
}

pub fn epsilon_cauchy(setup: &Setup, eps_list: &[f64], seed: u64) -> Result<CauchyReport> {
    if eps_list.last() != Some(&0.0) {
        return Err(invalid("eps", "the list must end at 0"));
    }
    let data = MemberData::draw(seed, 0);
    let tree = setup.tree()?;
    let mesh = setup.mesh()?;
    let last = tree.steps() - 1;
    let spec_on = |mesh: &SpatialMesh| ProblemSpec {
        f: Some(data.first.sample(&tree, mesh, last)),
        big_f: Some(data.second.sample(&tree, mesh, last)),
        ..setup.spec()
    };
    let omega = (setup.region.omega.lo, setup.region.omega.hi);
    let (consecutive, trajectories) = epsilon_convergence(
        tree,
        mesh,
        setup.alpha,
        omega,
        &spec_on(&mesh),
        &data.profile.sample(&mesh),
        eps_list,
    )?;
    let limit = trajectories.last().expect("non-empty list");
    let to_limit = eps_list
        .iter()
        .zip(&trajectories)
        .filter(|(e, _)| **e > 0.0)
        .map(|(e, t)| Ok((*e, sup_distance(&mesh, t, limit)?)))
        .collect::<Result<Vec<_>>>()?;

    let fine_setup = setup.with_cells(2 * setup.cells).with_eps(0.0);
    let fine_mesh = fine_setup.mesh()?;
    let fine = fine_setup
        .scheme()?
        .forward(&spec_on(&fine_mesh), &data.profile.sample(&fine_mesh), &Controls::default())?;
    let restricted = restrict(&fine, mesh.cells());
    let floor = sup_distance(&mesh, &restricted, limit)?;
    Ok(CauchyReport {
        consecutive,
        to_limit,
        floor,
    })
}

/// Averages cell pairs of a field on `2N` cells onto `N` cells.
pub fn restrict(fine: &AdaptedField, cells: usize) -> AdaptedField {
    let last = fine.last_step();
    AdaptedField::from_fn(last, cells, |k, node, j| {
        let row = fine.node(k, node);
        0.5 * (row[2 * j] + row[2 * j + 1])
    })
}

/// `max/min` of positive values, `∞` if any is non-positive or not finite.
pub fn spread(values: &[f64]) -> f64 {
    if values.is_empty() || values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return f64::INFINITY;
    }
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    max / min
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hardy_profiles_vanish_at_ends() {
        let z = hardy_profile(3, 1, 16);
        assert_eq!(z.len(), 17);
        assert_eq!(z[0], 0.0);
        assert_eq!(z[16], 0.0);
    }

    #[test]
    fn spread_rejects_degenerate_input() {
        assert_eq!(spread(&[1.0, 2.0]), 2.0);
        assert!(spread(&[1.0, 0.0]).is_infinite());
        assert!(spread(&[]).is_infinite());
    }

    #[test]
    fn restriction_of_constant_is_constant() {
        let f = AdaptedField::from_fn(2, 8, |_, _, _| 3.0);
        let r = restrict(&f, 4);
        assert_eq!(r.max_abs(), 3.0);
        assert_eq!(r.len(), 4);
    }
}
