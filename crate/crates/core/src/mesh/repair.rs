use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::analysis::{connected_components, edge_uses};
use super::{MeshError, Point3, TriangleMesh};

/// Closed cycle of boundary vertices, listed in the direction the adjacent
/// surface traverses its boundary edges.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundaryLoop {
    pub vertices: Vec<u32>,
}

impl BoundaryLoop {
    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }
}

/// Drops vertices no triangle references, keeping the relative order of
/// the rest.
pub fn prune_unreferenced(mesh: &TriangleMesh) -> TriangleMesh {
    let mut used = vec![false; mesh.vertices.len()];
    for t in &mesh.triangles {
        for &v in t {
            used[v as usize] = true;
        }
    }
    let mut remap = vec![u32::MAX; mesh.vertices.len()];
    let mut vertices = Vec::new();
    let mut colors = mesh.colors.as_ref().map(|_| Vec::new());
    for (i, &keep) in used.iter().enumerate() {
        if keep {
            remap[i] = vertices.len() as u32;
            vertices.push(mesh.vertices[i]);
            if let (Some(out), Some(src)) = (colors.as_mut(), mesh.colors.as_ref()) {
                out.push(src[i]);
            }
        }
    }
    TriangleMesh { vertices, triangles: mesh.triangles.iter().map(|t| t.map(|v| remap[v as usize])).collect(), colors }
}

/// Removes components with fewer than `min_fraction × total` triangles.
///
/// The first component in [`connected_components`] order always survives,
/// so a non-empty mesh never becomes empty. Surviving triangles keep their
/// original relative order.
pub fn remove_small_components(mesh: &TriangleMesh, min_fraction: f64) -> TriangleMesh {
    let components = connected_components(mesh);
    if components.len() <= 1 {
        return prune_unreferenced(mesh);
    }
    let threshold = min_fraction * mesh.triangles.len() as f64;
    let mut keep = vec![false; mesh.triangles.len()];
    for (rank, comp) in components.iter().enumerate() {
        if rank == 0 || comp.len() as f64 >= threshold {
            for &t in comp {
                keep[t] = true;
            }
        }
    }
    let filtered = TriangleMesh {
        vertices: mesh.vertices.clone(),
        triangles: mesh.triangles.iter().zip(&keep).filter_map(|(t, &k)| k.then_some(*t)).collect(),
        colors: mesh.colors.clone(),
    };
    prune_unreferenced(&filtered)
}

/// Chains boundary edges into closed loops.
///
/// Fails when a vertex touches more than two boundary edges, since the
/// chaining there would be ambiguous.
pub fn boundary_loops(mesh: &TriangleMesh) -> Result<Vec<BoundaryLoop>, MeshError> {
    let mut next: BTreeMap<u32, u32> = BTreeMap::new();
    let mut degree: BTreeMap<u32, usize> = BTreeMap::new();
    let mut half_edges = Vec::new();
    for uses in edge_uses(mesh).values() {
        if let [(a, b)] = uses.as_slice() {
            *degree.entry(*a).or_default() += 1;
            *degree.entry(*b).or_default() += 1;
            half_edges.push((*a, *b));
        }
    }
    if let Some((&vertex, &edges)) = degree.iter().find(|(_, &d)| d > 2) {
        return Err(MeshError::NonmanifoldBoundary { vertex, edges });
    }
    for &(a, b) in &half_edges {
        if next.insert(a, b).is_some() {
            // Two boundary edges leave `a`: the surface around it is
            // inconsistently oriented and the walk would branch.
            return Err(MeshError::NonmanifoldBoundary { vertex: a, edges: degree[&a] });
        }
    }

    let mut loops = Vec::new();
    while let Some((&start, _)) = next.iter().next() {
        let mut vertices = vec![start];
        let mut cur = next.remove(&start).expect("start present");
        while cur != start {
            vertices.push(cur);
            cur = next
                .remove(&cur)
                .ok_or_else(|| MeshError::NonmanifoldBoundary { vertex: cur, edges: degree.get(&cur).copied().unwrap_or(0) })?;
        }
        loops.push(BoundaryLoop { vertices });
    }
    Ok(loops)
}

/// Caps every boundary loop with a triangle fan around the loop's vertex
/// centroid (one new vertex per loop). Fan triangles traverse each loop
/// edge opposite to the existing surface, so orientation stays consistent.
pub fn fill_holes(mesh: &TriangleMesh) -> Result<TriangleMesh, MeshError> {
    let loops = boundary_loops(mesh)?;
    let mut out = mesh.clone();
    for lp in &loops {
        let n = lp.vertices.len() as f64;
        let mut centroid: Point3 = [0.0; 3];
        for &v in &lp.vertices {
            for (c, p) in centroid.iter_mut().zip(mesh.vertices[v as usize]) {
                *c += p;
            }
        }
        let centroid = centroid.map(|c| c / n);
        let c = out.vertices.len() as u32;
        out.vertices.push(centroid);
        if let Some(colors) = out.colors.as_mut() {
            colors.push(mesh.colors.as_ref().expect("colors mirror")[lp.vertices[0] as usize]);
        }
        for (i, &a) in lp.vertices.iter().enumerate() {
            let b = lp.vertices[(i + 1) % lp.vertices.len()];
            out.triangles.push([b, a, c]);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::analyze;
    use crate::mesh::primitives::*;

    #[test]
    fn open_cube_has_one_square_loop() {
        let loops = boundary_loops(&open_cube()).unwrap();
        assert_eq!(loops.len(), 1);
        assert_eq!(loops[0].len(), 4);
        assert!(boundary_loops(&unit_cube()).unwrap().is_empty());
    }

    #[test]
    fn two_opposite_faces_missing_gives_two_loops() {
        let mut m = unit_cube();
        m.triangles.drain(0..4);
        let loops = boundary_loops(&m).unwrap();
        assert_eq!(loops.iter().map(BoundaryLoop::len).collect::<Vec<_>>(), vec![4, 4]);
    }

    #[test]
    fn fill_restores_volume() {
        let before = analyze(&open_cube());
        assert!((before.signed_volume - 1.0).abs() > 1e-3);
        let filled = fill_holes(&open_cube()).unwrap();
        let after = analyze(&filled);
        assert_eq!(after.boundary_edge_count, 0);
        assert!((after.signed_volume - 1.0).abs() <= 1e-9);
        assert!(after.printable, "{after:?}");
    }

    #[test]
    fn fill_two_holes_adds_two_vertices() {
        let mut m = unit_cube();
        m.triangles.drain(0..4);
        let filled = fill_holes(&m).unwrap();
        assert_eq!(filled.vertex_count(), m.vertex_count() + 2);
        assert_eq!(analyze(&filled).boundary_edge_count, 0);
    }

    #[test]
    fn fill_closed_mesh_is_identity() {
        assert_eq!(fill_holes(&unit_cube()).unwrap(), unit_cube());
    }

    #[test]
    fn bowtie_boundary_vertex_rejected() {
        // Two triangles sharing only vertex 0.
        let m = TriangleMesh::new(
            vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]],
            vec![[0, 1, 2], [0, 3, 4]],
        );
        assert!(matches!(boundary_loops(&m), Err(MeshError::NonmanifoldBoundary { vertex: 0, edges: 4 })));
        assert!(fill_holes(&m).is_err());
    }

    #[test]
    fn small_fragment_removed() {
        let mut m = uv_sphere([0.0; 3], 10.0, 16, 32);
        m.merge(&octahedron([40.0, 0.0, 0.0], 1.0));
        assert_eq!(m.triangle_count(), 968);
        let cleaned = remove_small_components(&m, 0.02);
        assert_eq!(cleaned.triangle_count(), 960);
        assert_eq!(cleaned.vertex_count(), 16 * 32 - 32 + 2);
        assert_eq!(analyze(&cleaned).component_count, 1);
    }

    #[test]
    fn single_component_unchanged() {
        for f in [0.0, 0.5, 0.99] {
            assert_eq!(remove_small_components(&unit_cube(), f), unit_cube());
        }
    }

    #[test]
    fn three_equal_components_keep_first() {
        let mut m = TriangleMesh::default();
        for k in 0..3 {
            m.merge(&box_mesh([k as f64 * 3.0, 0.0, 0.0], [k as f64 * 3.0 + 1.0, 1.0, 1.0]));
        }
        let cleaned = remove_small_components(&m, 0.5);
        assert_eq!(cleaned, unit_cube());
    }

    #[test]
    fn prune_drops_orphans() {
        let mut m = unit_cube();
        m.vertices.insert(0, [9.0; 3]);
        for t in &mut m.triangles {
            *t = t.map(|v| v + 1);
        }
        assert_eq!(prune_unreferenced(&m), unit_cube());
    }
}
