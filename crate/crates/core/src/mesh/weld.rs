use std::collections::HashMap;

use super::{norm, sub, Point3, TriangleMesh};

fn cell_of(p: Point3, cell: f64) -> [i64; 3] {
    // Saturating float->int casts keep huge coordinates in the edge cells.
    std::array::from_fn(|k| (p[k] / cell).floor() as i64)
}

fn exact_key(p: Point3) -> [u64; 3] {
    // +0.0 so that -0.0 and 0.0 share a key.
    std::array::from_fn(|k| (p[k] + 0.0).to_bits())
}

/// Merges vertices that lie within `epsilon` of an earlier kept vertex.
///
/// Vertices are visited in index order; each one either maps onto the
/// lowest-index kept vertex within `epsilon` or becomes a kept vertex
/// itself, so kept vertices are pairwise farther apart than `epsilon` and
/// welding is idempotent. Triangles that end up repeating an index are
/// dropped.
pub fn weld_vertices(mesh: &TriangleMesh, epsilon: f64) -> TriangleMesh {
    let epsilon = epsilon.max(0.0);
    let mut remap = Vec::with_capacity(mesh.vertices.len());
    let mut kept: Vec<Point3> = Vec::new();
    let mut kept_colors: Vec<[u8; 3]> = Vec::new();

    if epsilon == 0.0 {
        let mut seen: HashMap<[u64; 3], u32> = HashMap::new();
        for (i, &v) in mesh.vertices.iter().enumerate() {
            let id = *seen.entry(exact_key(v)).or_insert_with(|| {
                kept.push(v);
                if let Some(c) = &mesh.colors {
                    kept_colors.push(c[i]);
                }
                (kept.len() - 1) as u32
            });
            remap.push(id);
        }
    } else {
        let mut grid: HashMap<[i64; 3], Vec<u32>> = HashMap::new();
        for (i, &v) in mesh.vertices.iter().enumerate() {
            let c = cell_of(v, epsilon);
            let mut best: Option<u32> = None;
            for dx in -1..=1i64 {
                for dy in -1..=1i64 {
                    for dz in -1..=1i64 {
                        let key = [c[0].saturating_add(dx), c[1].saturating_add(dy), c[2].saturating_add(dz)];
                        if let Some(bucket) = grid.get(&key) {
                            for &k in bucket {
                                if norm(sub(kept[k as usize], v)) <= epsilon && best.is_none_or(|b| k < b) {
                                    best = Some(k);
                                }
                            }
                        }
                    }
                }
            }
            let id = match best {
                Some(k) => k,
                None => {
                    kept.push(v);
                    if let Some(cs) = &mesh.colors {
                        kept_colors.push(cs[i]);
                    }
                    let id = (kept.len() - 1) as u32;
                    grid.entry(c).or_default().push(id);
                    id
                }
            };
            remap.push(id);
        }
    }

    let triangles = mesh
        .triangles
        .iter()
        .map(|t| t.map(|i| remap[i as usize]))
        .filter(|t| t[0] != t[1] && t[1] != t[2] && t[0] != t[2])
        .collect();
    TriangleMesh { vertices: kept, triangles, colors: mesh.colors.as_ref().map(|_| kept_colors) }
}
