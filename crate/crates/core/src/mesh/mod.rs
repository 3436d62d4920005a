//! Geometry kernel: PLY parsing, manufacturability analysis, repair and
//! binary STL export.
//!
//! Every operation here is a pure function of its inputs. Floating-point
//! accumulation happens in a fixed order so identical input bytes produce
//! identical output bytes.

mod analysis;
mod plan;
mod ply;
pub mod primitives;
mod render;
mod repair;
mod smooth;
mod stl;
mod weld;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use analysis::{analyze, analyze_batch, connected_components, EdgeStats, ManufacturabilityReport};
pub use analysis::{euler_characteristic, signed_volume, BoundingBox};
pub use plan::{apply_plan, RepairPlan, SmoothingParams};
pub use ply::{parse_ply, write_ply, PlyEncoding};
pub use render::render_preview;
pub use repair::{boundary_loops, fill_holes, prune_unreferenced, remove_small_components, BoundaryLoop};
pub use smooth::smooth;
pub use stl::{read_stl, write_stl, StlTriangle, STL_HEADER_TAG};
pub use weld::weld_vertices;

/// Triangles with area below this (mm²) count as degenerate.
pub const DEGENERATE_AREA: f64 = 1e-12;

pub type Point3 = [f64; 3];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("PLY parse error: {0}")]
    Parse(String),
    #[error("STL parse error: {0}")]
    StlParse(String),
    #[error("{0} triangles do not fit a binary STL triangle count")]
    TooManyTriangles(usize),
    #[error("boundary vertex {vertex} has {edges} incident boundary edges")]
    NonmanifoldBoundary { vertex: u32, edges: usize },
    #[error("invalid mesh: {0}")]
    Invalid(String),
    #[error("invalid repair plan: {0}")]
    InvalidPlan(String),
}

/// Indexed triangle mesh. Coordinates are treated as millimeters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TriangleMesh {
    pub vertices: Vec<Point3>,
    pub triangles: Vec<[u32; 3]>,
    /// Optional per-vertex RGB, same length as `vertices` when present.
    pub colors: Option<Vec<[u8; 3]>>,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Point3>, triangles: Vec<[u32; 3]>) -> Self {
        Self { vertices, triangles, colors: None }
    }

    /// Builds a mesh and checks the index and finiteness invariants.
    pub fn try_new(vertices: Vec<Point3>, triangles: Vec<[u32; 3]>) -> Result<Self, MeshError> {
        let mesh = Self::new(vertices, triangles);
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn validate(&self) -> Result<(), MeshError> {
        let n = self.vertices.len();
        if let Some((i, v)) = self.vertices.iter().enumerate().find(|(_, v)| v.iter().any(|c| !c.is_finite())) {
            return Err(MeshError::Invalid(format!("vertex {i} has non-finite coordinate {v:?}")));
        }
        if let Some((t, tri)) = self.triangles.iter().enumerate().find(|(_, t)| t.iter().any(|&i| i as usize >= n)) {
            return Err(MeshError::Invalid(format!("triangle {t} {tri:?} references a vertex >= {n}")));
        }
        if let Some(colors) = &self.colors {
            if colors.len() != n {
                return Err(MeshError::Invalid(format!("{} colors for {n} vertices", colors.len())));
            }
        }
        Ok(())
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn corners(&self, t: usize) -> [Point3; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a as usize], self.vertices[b as usize], self.vertices[c as usize]]
    }

    /// Appends `other`, offsetting its indices. Colors survive only if both
    /// meshes carry them.
    pub fn merge(&mut self, other: &TriangleMesh) {
        let offset = self.vertices.len() as u32;
        self.colors = match (self.colors.take(), &other.colors) {
            (Some(mut a), Some(b)) => {
                a.extend_from_slice(b);
                Some(a)
            }
            (None, None) if self.vertices.is_empty() => other.colors.clone(),
            _ => None,
        };
        self.vertices.extend_from_slice(&other.vertices);
        self.triangles.extend(other.triangles.iter().map(|t| [t[0] + offset, t[1] + offset, t[2] + offset]));
    }
}

pub(crate) fn sub(a: Point3, b: Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn cross(a: Point3, b: Point3) -> Point3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

pub(crate) fn dot(a: Point3, b: Point3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn norm(a: Point3) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn triangle_area(p: [Point3; 3]) -> f64 {
    0.5 * norm(cross(sub(p[1], p[0]), sub(p[2], p[0])))
}
