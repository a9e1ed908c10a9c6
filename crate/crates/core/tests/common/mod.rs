//! Oracles shared by several test targets.

#![allow(dead_code)]

use degen_spde::random::{member_rng, RandomField, SineProfile};
use degen_spde::solver::{Controls, ProblemSpec, Scheme};
use degen_spde::tree::AdaptedField;

/// `E⟨y_n, z_T⟩` with the cell weights.
pub fn terminal_pairing(s: &Scheme, y: &AdaptedField, z_t: &[f64]) -> f64 {
    let n = s.cells();
    let level = y.level(s.tree().steps());
    let h = s.mesh().h();
    level.iter().zip(z_t).map(|(a, b)| h * a * b).sum::<f64>() / (level.len() / n) as f64
}

/// Largest mismatch between the transpose of the assembled map
/// `(y0, f, F) ↦ E⟨y_n, z_T⟩`, built from one forward solve per unit
/// input, and the backward solve for `z_T`.
pub fn brute_force_transpose_mismatch(s: &Scheme, coeffs: &ProblemSpec, z_t: &[f64]) -> f64 {
    let tree = *s.tree();
    let cells = s.cells();
    let steps = tree.steps();
    let back = s.backward(coeffs, z_t, None).unwrap();
    let h = s.mesh().h();
    let dt = tree.dt();
    let mut worst: f64 = 0.0;
    for j in 0..cells {
        let mut y0 = vec![0.0; cells];
        y0[j] = 1.0;
        let y = s.forward(coeffs, &y0, &Controls::default()).unwrap();
        worst = worst.max((terminal_pairing(s, &y, z_t) - h * back.z.node(0, 0)[j]).abs());
    }
    for drift in [true, false] {
        for k in 0..steps {
            for idx in 0..tree.nodes_at(k) * cells {
                let mut unit = AdaptedField::zeros(steps - 1, cells);
                unit.level_mut(k)[idx] = 1.0;
                let spec = if drift {
                    ProblemSpec { f: Some(unit), ..coeffs.clone() }
                } else {
                    ProblemSpec { big_f: Some(unit), ..coeffs.clone() }
                };
                let y = s.forward(&spec, &vec![0.0; cells], &Controls::default()).unwrap();
                let (node, cell) = (idx / cells, idx % cells);
                let dual = if drift { back.mean.node(k, node)[cell] } else { back.big_z.node(k, node)[cell] };
                let expected = dt * h * dual / tree.nodes_at(k) as f64;
                worst = worst.max((terminal_pairing(s, &y, z_t) - expected).abs());
            }
        }
    }
    worst
}

/// Duality residual for random `y0, f, F, g, G, ρ, z_T`.
pub fn random_duality_residual(seed: u64, s: &Scheme, spec: &ProblemSpec) -> f64 {
    let tree = *s.tree();
    let mesh = *s.mesh();
    let last = tree.steps() - 1;
    let mut rng = member_rng(seed, 0);
    let y0 = SineProfile::draw(&mut rng, 4).sample(&mesh);
    let mut field = || RandomField::draw(&mut rng, 4);
    let (f, big_f, g, big_g, rho, z) = (field(), field(), field(), field(), field(), field());
    let data = ProblemSpec {
        f: Some(f.sample(&tree, &mesh, last)),
        big_f: Some(big_f.sample(&tree, &mesh, last)),
        ..spec.clone()
    };
    let controls = Controls {
        g: Some(g.sample(&tree, &mesh, last)),
        big_g: Some(big_g.sample(&tree, &mesh, last)),
    };
    let rho = rho.sample(&tree, &mesh, last);
    let y = s.forward(&data, &y0, &controls).unwrap();
    let back = s.backward(spec, &z.terminal(&tree, &mesh), Some(&rho)).unwrap();
    s.duality_residual(&data, &controls, &y, &back, Some(&rho)).unwrap()
}
