//! Penalized controls: homogeneity, optimality and decay.

use degen_spde::control::{control_inner, decay_study, hum_solve, ControlPair, HumConfig};
use degen_spde::mesh::{DegenerateOperator, SpatialMesh};
use degen_spde::solver::{ProblemSpec, Scheme};
use degen_spde::tree::FiltrationTree;
use degen_spde::weights::ControlRegion;

fn setup(depth: usize, cells: usize, alpha: f64, eps: f64) -> (Scheme, ControlRegion, Vec<f64>) {
    let region = ControlRegion::default();
    let tree = FiltrationTree::new(depth, 1.0).unwrap();
    let op = DegenerateOperator::new(SpatialMesh::new(cells).unwrap(), alpha, eps).unwrap();
    let scheme = Scheme::new(tree, op, (region.omega.lo, region.omega.hi));
    let y0 = scheme.mesh().centers().iter().map(|x| (std::f64::consts::PI * x).sin()).collect();
    (scheme, region, y0)
}

#[test]
fn controls_are_homogeneous() {
    let (scheme, region, y0) = setup(5, 16, 0.3, 0.05);
    let spec = ProblemSpec::default();
    let cfg = HumConfig::default();
    let base = hum_solve(&scheme, &spec, &region, &y0, &cfg).unwrap();
    let kappa = 3.0;
    let y0k: Vec<f64> = y0.iter().map(|v| kappa * v).collect();
    let scaled = hum_solve(&scheme, &spec, &region, &y0k, &cfg).unwrap();
    let diff = ControlPair {
        g: base.controls.g.scale(kappa).zip_with(&scaled.controls.g, |a, b| a - b).unwrap(),
        big_g: base.controls.big_g.scale(kappa).zip_with(&scaled.controls.big_g, |a, b| a - b).unwrap(),
    };
    let rel = (control_inner(&scheme, &diff, &diff) / control_inner(&scheme, &scaled.controls, &scaled.controls)).sqrt();
    assert!(rel <= 1e-6, "relative difference {rel:e}");
}

#[test]
fn terminal_energy_decreases_with_penalty() {
    let (scheme, region, y0) = setup(5, 16, 0.3, 0.05);
    let rows = decay_study(
        &scheme,
        &ProblemSpec::default(),
        &region,
        &y0,
        &HumConfig::default(),
        &[1e-1, 1e-2, 1e-3],
    )
    .unwrap();
    for w in rows.windows(2) {
        assert!(w[1].terminal_energy < w[0].terminal_energy);
    }
    for r in &rows {
        assert!(r.terminal_energy < r.uncontrolled_terminal_energy);
        assert!(r.optimality_residual <= 1e-8);
    }
}

#[test]
fn increasing_tau_grid_rejected() {
    let (scheme, region, y0) = setup(3, 8, 0.3, 0.0);
    assert!(decay_study(&scheme, &ProblemSpec::default(), &region, &y0, &HumConfig::default(), &[1e-3, 1e-2]).is_err());
}

#[test]
fn convection_needs_small_alpha() {
    let (scheme, region, y0) = setup(3, 8, 0.7, 0.0);
    let spec = ProblemSpec::constant(0.5, 0.0, 0.0);
    assert!(hum_solve(&scheme, &spec, &region, &y0, &HumConfig::default()).is_err());
}
