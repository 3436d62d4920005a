use std::collections::BTreeSet;

use super::analysis::edge_uses;
use super::{Point3, TriangleMesh};

fn neighbor_lists(mesh: &TriangleMesh) -> Vec<Vec<u32>> {
    let mut sets: Vec<BTreeSet<u32>> = vec![BTreeSet::new(); mesh.vertices.len()];
    for t in &mesh.triangles {
        for k in 0..3 {
            let (a, b) = (t[k], t[(k + 1) % 3]);
            sets[a as usize].insert(b);
            sets[b as usize].insert(a);
        }
    }
    sets.into_iter().map(|s| s.into_iter().collect()).collect()
}

fn relax(positions: &mut [Point3], neighbors: &[Vec<u32>], movable: &[bool], factor: f64) {
    let snapshot = positions.to_vec();
    for (i, ring) in neighbors.iter().enumerate() {
        if !movable[i] || ring.is_empty() {
            continue;
        }
        let mut mean = [0.0; 3];
        for &j in ring {
            for k in 0..3 {
                mean[k] += snapshot[j as usize][k];
            }
        }
        let n = ring.len() as f64;
        for k in 0..3 {
            positions[i][k] = snapshot[i][k] + factor * (mean[k] / n - snapshot[i][k]);
        }
    }
}

/// Taubin smoothing: per iteration a shrinking step with `lambda` followed
/// by an inflating step with `mu` (negative), both using the umbrella
/// Laplacian over the 1-ring. Boundary vertices stay fixed and the
/// triangle list is untouched.
pub fn smooth(mesh: &TriangleMesh, lambda: f64, mu: f64, iterations: usize) -> TriangleMesh {
    if iterations == 0 {
        return mesh.clone();
    }
    let neighbors = neighbor_lists(mesh);
    let mut movable = vec![true; mesh.vertices.len()];
    for ((a, b), uses) in edge_uses(mesh) {
        if uses.len() == 1 {
            movable[a as usize] = false;
            movable[b as usize] = false;
        }
    }
    let mut positions = mesh.vertices.clone();
    for _ in 0..iterations {
        relax(&mut positions, &neighbors, &movable, lambda);
        if mu != 0.0 {
            relax(&mut positions, &neighbors, &movable, mu);
        }
    }
    TriangleMesh { vertices: positions, triangles: mesh.triangles.clone(), colors: mesh.colors.clone() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::primitives::*;
    use crate::mesh::{analyze, norm};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn radius_variance(mesh: &TriangleMesh) -> f64 {
        let radii: Vec<f64> = mesh.vertices.iter().map(|&v| norm(v)).collect();
        let mean = radii.iter().sum::<f64>() / radii.len() as f64;
        radii.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / radii.len() as f64
    }

    #[test]
    fn zero_iterations_is_identity() {
        let m = uv_sphere([0.0; 3], 1.0, 8, 8);
        assert_eq!(smooth(&m, 0.5, -0.53, 0), m);
    }

    #[test]
    fn noisy_sphere_gets_rounder() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut m = uv_sphere([0.0; 3], 1.0, 16, 32);
        for v in &mut m.vertices {
            let r = 1.0 + rng.random_range(-0.05..0.05);
            let n = norm(*v);
            *v = v.map(|c| c / n * r);
        }
        let before = radius_variance(&m);
        let smoothed = smooth(&m, 0.5, -0.53, 10);
        let after = radius_variance(&smoothed);
        assert!(after < before, "variance {before} -> {after}");
        assert_eq!(smoothed.triangles, m.triangles);
        assert_eq!(analyze(&smoothed).component_count, 1);
    }

    #[test]
    fn pure_laplacian_shrinks_cube_monotonically() {
        let mut mesh = unit_cube();
        let mut volumes = vec![analyze(&mesh).signed_volume];
        for _ in 0..100 {
            mesh = smooth(&mesh, 0.5, 0.0, 1);
            volumes.push(analyze(&mesh).signed_volume);
        }
        assert!(volumes.windows(2).all(|w| w[1] <= w[0] + 1e-12), "{volumes:?}");
        assert!(volumes[100] < volumes[0]);
        assert!(volumes[1] < volumes[0]);
    }

    #[test]
    fn boundary_vertices_are_pinned() {
        let m = open_cube();
        let s = smooth(&m, 0.5, -0.53, 5);
        for v in [4usize, 5, 6, 7] {
            assert_eq!(s.vertices[v], m.vertices[v]);
        }
    }
}
