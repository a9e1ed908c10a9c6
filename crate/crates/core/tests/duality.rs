//! Discrete adjointness of the forward and backward schemes.

use degen_spde::mesh::{DegenerateOperator, SpatialMesh};
use degen_spde::random::{member_rng, RandomField, SineProfile};
use degen_spde::solver::{Controls, ProblemSpec, Scheme};
use degen_spde::tree::FiltrationTree;

mod common;

fn scheme(depth: usize, cells: usize, alpha: f64, eps: f64) -> Scheme {
    let tree = FiltrationTree::new(depth, 1.0).unwrap();
    let op = DegenerateOperator::new(SpatialMesh::new(cells).unwrap(), alpha, eps).unwrap();
    Scheme::new(tree, op, (0.4, 0.8))
}

#[test]
fn brute_force_transpose_matches_backward_solve() {
    let s = scheme(3, 8, 0.5, 0.01);
    let z_t = RandomField::draw(&mut member_rng(5, 0), 3).terminal(s.tree(), s.mesh());
    let worst = common::brute_force_transpose_mismatch(&s, &ProblemSpec::constant(0.4, -0.3, 0.5), &z_t);
    assert!(worst < 1e-13, "largest mismatch {worst:e}");
}

#[test]
fn random_data_sets_satisfy_duality() {
    let s = scheme(6, 32, 0.5, 0.01);
    let spec = ProblemSpec::constant(0.7, -0.4, 0.6);
    for seed in 0..20 {
        let r = common::random_duality_residual(seed, &s, &spec);
        assert!(r <= 1e-10, "seed {seed}: residual {r:e}");
    }
}

#[test]
fn mismatched_coefficient_breaks_duality() {
    let s = scheme(5, 16, 0.5, 0.0);
    let tree = *s.tree();
    let mesh = *s.mesh();
    let y0 = SineProfile::draw(&mut member_rng(1, 0), 3).sample(&mesh);
    let z_t = RandomField::draw(&mut member_rng(1, 1), 3).terminal(&tree, &mesh);
    let fwd = ProblemSpec::constant(0.0, 0.5, 0.0);
    let bwd = ProblemSpec::constant(0.0, 0.4, 0.0);
    let y = s.forward(&fwd, &y0, &Controls::default()).unwrap();
    let back = s.backward(&bwd, &z_t, None).unwrap();
    let r = s.duality_residual(&fwd, &Controls::default(), &y, &back, None).unwrap();
    assert!(r > 1e-6, "residual {r:e}");
}

#[test]
fn zero_data_has_zero_residual() {
    let s = scheme(4, 16, 1.5, 0.0);
    let spec = ProblemSpec::default();
    let y = s.forward(&spec, &[0.0; 16], &Controls::default()).unwrap();
    let back = s.backward(&spec, &vec![0.0; 16 << 4], None).unwrap();
    assert_eq!(s.duality_residual(&spec, &Controls::default(), &y, &back, None).unwrap(), 0.0);
}

#[test]
fn decomposed_convection_is_dual_for_large_alpha() {
    let s = scheme(5, 32, 1.5, 0.0);
    let spec = ProblemSpec {
        convection: degen_spde::solver::ConvectionMode::Decomposed,
        ..ProblemSpec::constant(0.8, 0.3, -0.5)
    };
    for seed in 0..3 {
        assert!(common::random_duality_residual(100 + seed, &s, &spec) <= 1e-10);
    }
}
