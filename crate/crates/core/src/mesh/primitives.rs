//! Closed, outward-oriented parametric solids.

use std::collections::HashMap;
use std::f64::consts::PI;

use super::{Point3, TriangleMesh};

/// Axis-aligned unit cube, 8 vertices and 12 triangles.
///
/// Triangles 2 and 3 form the top (z = 1) face.
pub fn unit_cube() -> TriangleMesh {
    box_mesh([0.0; 3], [1.0; 3])
}

pub fn box_mesh(min: Point3, max: Point3) -> TriangleMesh {
    let v = |x: usize, y: usize, z: usize| {
        [if x == 0 { min[0] } else { max[0] }, if y == 0 { min[1] } else { max[1] }, if z == 0 { min[2] } else { max[2] }]
    };
    let vertices = vec![v(0, 0, 0), v(1, 0, 0), v(1, 1, 0), v(0, 1, 0), v(0, 0, 1), v(1, 0, 1), v(1, 1, 1), v(0, 1, 1)];
    let triangles = vec![
        [0, 2, 1],
        [0, 3, 2],
        [4, 5, 6],
        [4, 6, 7],
        [0, 1, 5],
        [0, 5, 4],
        [3, 7, 6],
        [3, 6, 2],
        [0, 4, 7],
        [0, 7, 3],
        [1, 2, 6],
        [1, 6, 5],
    ];
    TriangleMesh::new(vertices, triangles)
}

/// Unit cube with its top face removed: one square hole.
pub fn open_cube() -> TriangleMesh {
    let mut cube = unit_cube();
    cube.triangles.drain(2..4);
    cube
}

/// Box whose faces are split into `divisions × divisions` quads with shared
/// vertices along every seam.
pub fn subdivided_box(min: Point3, max: Point3, divisions: usize) -> TriangleMesh {
    let g = divisions.max(1) as i64;
    let mut index: HashMap<[i64; 3], u32> = HashMap::new();
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    let mut vid = |p: [i64; 3], vertices: &mut Vec<Point3>| -> u32 {
        *index.entry(p).or_insert_with(|| {
            vertices.push(std::array::from_fn(|k| min[k] + (max[k] - min[k]) * p[k] as f64 / g as f64));
            (vertices.len() - 1) as u32
        })
    };
    // (origin, u, v) with u × v pointing outward.
    let faces: [([i64; 3], [i64; 3], [i64; 3]); 6] = [
        ([0, 0, 0], [0, 1, 0], [1, 0, 0]),
        ([0, 0, g], [1, 0, 0], [0, 1, 0]),
        ([0, 0, 0], [1, 0, 0], [0, 0, 1]),
        ([0, g, 0], [0, 0, 1], [1, 0, 0]),
        ([0, 0, 0], [0, 0, 1], [0, 1, 0]),
        ([g, 0, 0], [0, 1, 0], [0, 0, 1]),
    ];
    for (o, u, v) in faces {
        let at = |i: i64, j: i64| std::array::from_fn::<i64, 3, _>(|k| o[k] + i * u[k] + j * v[k]);
        for i in 0..g {
            for j in 0..g {
                let p00 = vid(at(i, j), &mut vertices);
                let p10 = vid(at(i + 1, j), &mut vertices);
                let p11 = vid(at(i + 1, j + 1), &mut vertices);
                let p01 = vid(at(i, j + 1), &mut vertices);
                triangles.push([p00, p10, p11]);
                triangles.push([p00, p11, p01]);
            }
        }
    }
    TriangleMesh::new(vertices, triangles)
}

/// Latitude/longitude sphere. `stacks = 16, slices = 32` gives 960 triangles.
pub fn uv_sphere(center: Point3, radius: f64, stacks: usize, slices: usize) -> TriangleMesh {
    let stacks = stacks.max(2);
    let slices = slices.max(3);
    let mut vertices = vec![[center[0], center[1], center[2] + radius]];
    for k in 1..stacks {
        let theta = PI * k as f64 / stacks as f64;
        for j in 0..slices {
            let phi = 2.0 * PI * j as f64 / slices as f64;
            vertices.push([
                center[0] + radius * theta.sin() * phi.cos(),
                center[1] + radius * theta.sin() * phi.sin(),
                center[2] + radius * theta.cos(),
            ]);
        }
    }
    vertices.push([center[0], center[1], center[2] - radius]);
    let north = 0u32;
    let south = (vertices.len() - 1) as u32;
    let ring = |k: usize, j: usize| (1 + (k - 1) * slices + j % slices) as u32;

    let mut triangles = Vec::with_capacity(2 * slices * (stacks - 1));
    for j in 0..slices {
        triangles.push([north, ring(1, j), ring(1, j + 1)]);
    }
    for k in 1..stacks - 1 {
        for j in 0..slices {
            let (a, b) = (ring(k, j), ring(k, j + 1));
            let (d, c) = (ring(k + 1, j), ring(k + 1, j + 1));
            triangles.push([a, d, c]);
            triangles.push([a, c, b]);
        }
    }
    for j in 0..slices {
        triangles.push([south, ring(stacks - 1, j + 1), ring(stacks - 1, j)]);
    }
    TriangleMesh::new(vertices, triangles)
}

/// Capped cylinder along +z starting at `base`.
pub fn cylinder(base: Point3, radius: f64, height: f64, slices: usize, rings: usize) -> TriangleMesh {
    let slices = slices.max(3);
    let rings = rings.max(1);
    let mut vertices = Vec::with_capacity((rings + 1) * slices + 2);
    for k in 0..=rings {
        let z = base[2] + height * k as f64 / rings as f64;
        for j in 0..slices {
            let phi = 2.0 * PI * j as f64 / slices as f64;
            vertices.push([base[0] + radius * phi.cos(), base[1] + radius * phi.sin(), z]);
        }
    }
    vertices.push(base);
    vertices.push([base[0], base[1], base[2] + height]);
    let bottom = (vertices.len() - 2) as u32;
    let top = (vertices.len() - 1) as u32;
    let at = |k: usize, j: usize| (k * slices + j % slices) as u32;

    let mut triangles = Vec::new();
    for k in 0..rings {
        for j in 0..slices {
            let (d, c) = (at(k, j), at(k, j + 1));
            let (a, b) = (at(k + 1, j), at(k + 1, j + 1));
            triangles.push([a, d, c]);
            triangles.push([a, c, b]);
        }
    }
    for j in 0..slices {
        triangles.push([top, at(rings, j), at(rings, j + 1)]);
        triangles.push([bottom, at(0, j + 1), at(0, j)]);
    }
    TriangleMesh::new(vertices, triangles)
}

/// Regular octahedron, 8 triangles.
pub fn octahedron(center: Point3, radius: f64) -> TriangleMesh {
    let c = center;
    let vertices = vec![
        [c[0] + radius, c[1], c[2]],
        [c[0] - radius, c[1], c[2]],
        [c[0], c[1] + radius, c[2]],
        [c[0], c[1] - radius, c[2]],
        [c[0], c[1], c[2] + radius],
        [c[0], c[1], c[2] - radius],
    ];
    let mut triangles = Vec::with_capacity(8);
    for sx in [0u32, 1] {
        for sy in [2u32, 3] {
            for sz in [4u32, 5] {
                let negatives = sx + (sy - 2) + (sz - 4);
                if negatives % 2 == 0 {
                    triangles.push([sx, sy, sz]);
                } else {
                    triangles.push([sx, sz, sy]);
                }
            }
        }
    }
    TriangleMesh::new(vertices, triangles)
}

/// Torus around the z axis; genus 1.
pub fn torus(center: Point3, major: f64, minor: f64, major_segments: usize, minor_segments: usize) -> TriangleMesh {
    let m = major_segments.max(3);
    let n = minor_segments.max(3);
    let mut vertices = Vec::with_capacity(m * n);
    for i in 0..m {
        let u = 2.0 * PI * i as f64 / m as f64;
        for j in 0..n {
            let v = 2.0 * PI * j as f64 / n as f64;
            let r = major + minor * v.cos();
            vertices.push([center[0] + r * u.cos(), center[1] + r * u.sin(), center[2] + minor * v.sin()]);
        }
    }
    let at = |i: usize, j: usize| ((i % m) * n + j % n) as u32;
    let mut triangles = Vec::with_capacity(2 * m * n);
    for i in 0..m {
        for j in 0..n {
            let (a, b, c, d) = (at(i, j), at(i + 1, j), at(i + 1, j + 1), at(i, j + 1));
            triangles.push([a, b, c]);
            triangles.push([a, c, d]);
        }
    }
    TriangleMesh::new(vertices, triangles)
}
