use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::{cross, dot, triangle_area, Point3, TriangleMesh, DEGENERATE_AREA};
use crate::Exec;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub min: Point3,
    pub max: Point3,
}

/// Watertightness, manifoldness, connectivity and volume diagnostics.
///
/// `printable` holds exactly when there are no boundary, nonmanifold or
/// inconsistently oriented edges, one component, no degenerate triangles
/// and a strictly positive signed volume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManufacturabilityReport {
    pub vertex_count: usize,
    pub triangle_count: usize,
    pub boundary_edge_count: usize,
    pub nonmanifold_edge_count: usize,
    pub inconsistent_orientation_edge_count: usize,
    pub component_count: usize,
    pub degenerate_triangle_count: usize,
    /// mm³
    pub signed_volume: f64,
    pub bbox: BoundingBox,
    pub printable: bool,
}

impl ManufacturabilityReport {
    pub fn is_watertight(&self) -> bool {
        self.boundary_edge_count == 0
    }

    pub(crate) fn verdict(&self) -> bool {
        self.boundary_edge_count == 0
            && self.nonmanifold_edge_count == 0
            && self.inconsistent_orientation_edge_count == 0
            && self.component_count == 1
            && self.degenerate_triangle_count == 0
            && self.signed_volume > 0.0
    }
}

/// Directed uses of every undirected edge, keyed by `(min, max)`.
pub(crate) fn edge_uses(mesh: &TriangleMesh) -> BTreeMap<(u32, u32), Vec<(u32, u32)>> {
    let mut edges: BTreeMap<(u32, u32), Vec<(u32, u32)>> = BTreeMap::new();
    for t in &mesh.triangles {
        for k in 0..3 {
            let (a, b) = (t[k], t[(k + 1) % 3]);
            edges.entry((a.min(b), a.max(b))).or_default().push((a, b));
        }
    }
    edges
}

/// Edge classification counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EdgeStats {
    pub edges: usize,
    pub boundary: usize,
    pub manifold: usize,
    pub nonmanifold: usize,
    pub inconsistent: usize,
}

impl EdgeStats {
    pub fn of(mesh: &TriangleMesh) -> Self {
        let mut stats = EdgeStats::default();
        for uses in edge_uses(mesh).values() {
            stats.edges += 1;
            match uses.len() {
                1 => stats.boundary += 1,
                2 => {
                    stats.manifold += 1;
                    if uses[0] == uses[1] {
                        stats.inconsistent += 1;
                    }
                }
                _ => stats.nonmanifold += 1,
            }
        }
        stats
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // Keep the smaller index as root so roots are stable.
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// Partition of triangle indices by shared-vertex connectivity.
///
/// Sorted by size descending; equal sizes are ordered by their smallest
/// triangle index. Each set is ascending.
pub fn connected_components(mesh: &TriangleMesh) -> Vec<Vec<usize>> {
    let n = mesh.triangles.len();
    let mut uf = UnionFind::new(n);
    let mut first_use: HashMap<u32, usize> = HashMap::new();
    for (t, tri) in mesh.triangles.iter().enumerate() {
        for &v in tri {
            match first_use.get(&v) {
                Some(&other) => uf.union(other, t),
                None => {
                    first_use.insert(v, t);
                }
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for t in 0..n {
        let root = uf.find(t);
        groups.entry(root).or_default().push(t);
    }
    let mut components: Vec<Vec<usize>> = groups.into_values().collect();
    components.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));
    components
}

/// (1/6) Σ v0 · (v1 × v2), accumulated in triangle order.
pub fn signed_volume(mesh: &TriangleMesh) -> f64 {
    let six_v: f64 = (0..mesh.triangles.len())
        .map(|t| {
            let [a, b, c] = mesh.corners(t);
            dot(a, cross(b, c))
        })
        .sum();
    six_v / 6.0
}

/// V − E + F over referenced vertices.
pub fn euler_characteristic(mesh: &TriangleMesh) -> i64 {
    let mut used = vec![false; mesh.vertices.len()];
    for t in &mesh.triangles {
        for &v in t {
            used[v as usize] = true;
        }
    }
    let v = used.iter().filter(|&&u| u).count() as i64;
    let e = edge_uses(mesh).len() as i64;
    let f = mesh.triangles.len() as i64;
    v - e + f
}

fn bounding_box(mesh: &TriangleMesh) -> BoundingBox {
    if mesh.vertices.is_empty() {
        return BoundingBox { min: [0.0; 3], max: [0.0; 3] };
    }
    let mut min = [f64::INFINITY; 3];
    let mut max = [f64::NEG_INFINITY; 3];
    for v in &mesh.vertices {
        for k in 0..3 {
            min[k] = min[k].min(v[k]);
            max[k] = max[k].max(v[k]);
        }
    }
    BoundingBox { min, max }
}

pub fn analyze(mesh: &TriangleMesh) -> ManufacturabilityReport {
    let edges = EdgeStats::of(mesh);
    let degenerate = (0..mesh.triangles.len()).filter(|&t| triangle_area(mesh.corners(t)) < DEGENERATE_AREA).count();
    let mut report = ManufacturabilityReport {
        vertex_count: mesh.vertices.len(),
        triangle_count: mesh.triangles.len(),
        boundary_edge_count: edges.boundary,
        nonmanifold_edge_count: edges.nonmanifold,
        inconsistent_orientation_edge_count: edges.inconsistent,
        component_count: connected_components(mesh).len(),
        degenerate_triangle_count: degenerate,
        signed_volume: signed_volume(mesh),
        bbox: bounding_box(mesh),
        printable: false,
    };
    report.printable = report.verdict();
    report
}

/// Analyzes many meshes; each report is identical to [`analyze`].
pub fn analyze_batch(meshes: &[TriangleMesh], exec: Exec) -> Vec<ManufacturabilityReport> {
    exec.map(meshes, analyze)
}
