//! Reproducible random data on the tree.
//!
//! Every ensemble member owns a ChaCha stream selected by its index, so a
//! member's data does not depend on how many members are drawn or on the
//! order in which threads evaluate them. Random fields are built from a few
//! sine modes whose coefficients are functions of `(t, B(t))`, which makes
//! the same draw meaningful on trees of different depth and meshes of
//! different size.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::mesh::SpatialMesh;
use crate::tree::{AdaptedField, FiltrationTree};

/// Generator for ensemble member `member` under the run seed `seed`.
pub fn member_rng(seed: u64, member: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(member);
    rng
}

fn uniform(rng: &mut impl Rng) -> f64 {
    rng.random_range(-1.0..1.0)
}

/// `Σ_m a_m sin(mπx)/m` with `a_m ~ U(−1, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SineProfile {
    coeffs: Vec<f64>,
}

impl SineProfile {
    pub fn draw(rng: &mut impl Rng, modes: usize) -> Self {
        Self {
            coeffs: (1..=modes).map(|m| uniform(rng) / m as f64).collect(),
        }
    }

    pub fn from_coeffs(coeffs: Vec<f64>) -> Self {
        Self { coeffs }
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .map(|(i, a)| a * ((i + 1) as f64 * std::f64::consts::PI * x).sin())
            .sum()
    }

    pub fn sample(&self, mesh: &SpatialMesh) -> Vec<f64> {
        mesh.centers().iter().map(|&x| self.eval(x)).collect()
    }
}

/// Field `Σ_m (p_m + q_m t + r_m B(t) + w_m sin B(t)) sin(mπx)/m`.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomField {
    coeffs: Vec<[f64; 4]>,
}

impl RandomField {
    pub fn draw(rng: &mut impl Rng, modes: usize) -> Self {
        Self {
            coeffs: (0..modes)
                .map(|_| [uniform(rng), uniform(rng), uniform(rng), uniform(rng)])
                .collect(),
        }
    }

    pub fn eval(&self, x: f64, t: f64, b: f64) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let m = (i + 1) as f64;
                (c[0] + c[1] * t + c[2] * b + c[3] * b.sin()) * (m * std::f64::consts::PI * x).sin() / m
            })
            .sum()
    }

    /// Values on steps `0..=last`.
    pub fn sample(&self, tree: &FiltrationTree, mesh: &SpatialMesh, last: usize) -> AdaptedField {
        let xs = mesh.centers();
        AdaptedField::from_fn(last, mesh.cells(), |k, node, j| {
            self.eval(xs[j], tree.time(k), tree.brownian(k, node))
        })
    }

    /// Leaf values at `T` flattened node-major, as a terminal datum.
    pub fn terminal(&self, tree: &FiltrationTree, mesh: &SpatialMesh) -> Vec<f64> {
        let n = tree.steps();
        let xs = mesh.centers();
        let t = tree.horizon();
        let mut out = Vec::with_capacity(tree.leaves() * xs.len());
        for leaf in 0..tree.leaves() {
            let b = tree.brownian(n, leaf);
            out.extend(xs.iter().map(|&x| self.eval(x, t, b)));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_independent_of_order() {
        let a: Vec<f64> = (0..3).map(|_| uniform(&mut member_rng(7, 2))).collect();
        assert_eq!(a[0], a[1]);
        let mut r2 = member_rng(7, 2);
        let mut r3 = member_rng(7, 3);
        assert_ne!(uniform(&mut r2), uniform(&mut r3));
    }

    #[test]
    fn field_is_consistent_across_depths() {
        let f = RandomField::draw(&mut member_rng(1, 0), 3);
        let mesh = SpatialMesh::new(8).unwrap();
        let coarse = FiltrationTree::new(2, 1.0).unwrap();
        let fine = FiltrationTree::new(4, 1.0).unwrap();
        let a = f.sample(&coarse, &mesh, 2);
        let b = f.sample(&fine, &mesh, 4);
        for j in 0..8 {
            assert_eq!(a.node(0, 0)[j], b.node(0, 0)[j]);
        }
    }

    #[test]
    fn profile_vanishes_at_ends() {
        let p = SineProfile::draw(&mut member_rng(3, 0), 5);
        assert!(p.eval(0.0).abs() < 1e-14);
        assert!(p.eval(1.0).abs() < 1e-12);
    }
}
