//! Binary STL, little-endian: 80-byte header, u32 triangle count, then
//! 50 bytes per triangle (normal, three vertices, u16 attribute).

use super::{cross, norm, sub, MeshError, Point3, TriangleMesh, DEGENERATE_AREA};

/// Written at the start of the 80-byte header, zero-padded. Deliberately
/// does not start with `solid` so readers never mistake it for ASCII STL.
pub const STL_HEADER_TAG: &[u8] = b"draftforge binary STL";

const HEADER_LEN: usize = 80;
const RECORD_LEN: usize = 50;

/// Triangle as stored in a binary STL record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StlTriangle {
    pub normal: [f32; 3],
    pub vertices: [[f32; 3]; 3],
    pub attribute: u16,
}

fn facet_normal(p: [Point3; 3]) -> [f32; 3] {
    let n = cross(sub(p[1], p[0]), sub(p[2], p[0]));
    let len = norm(n);
    if 0.5 * len < DEGENERATE_AREA || !len.is_finite() {
        return [0.0; 3];
    }
    n.map(|c| (c / len) as f32)
}

pub fn write_stl(mesh: &TriangleMesh) -> Result<Vec<u8>, MeshError> {
    let count = u32::try_from(mesh.triangles.len()).map_err(|_| MeshError::TooManyTriangles(mesh.triangles.len()))?;
    let mut out = Vec::with_capacity(HEADER_LEN + 4 + RECORD_LEN * mesh.triangles.len());
    let mut header = [0u8; HEADER_LEN];
    header[..STL_HEADER_TAG.len()].copy_from_slice(STL_HEADER_TAG);
    out.extend_from_slice(&header);
    out.extend_from_slice(&count.to_le_bytes());
    for t in 0..mesh.triangles.len() {
        let corners = mesh.corners(t);
        for c in facet_normal(corners) {
            out.extend_from_slice(&c.to_le_bytes());
        }
        for v in corners {
            for c in v {
                out.extend_from_slice(&(c as f32).to_le_bytes());
            }
        }
        out.extend_from_slice(&0u16.to_le_bytes());
    }
    Ok(out)
}

/// Reads a binary STL. The declared count must match the body length.
pub fn read_stl(bytes: &[u8]) -> Result<Vec<StlTriangle>, MeshError> {
    if bytes.len() < HEADER_LEN + 4 {
        return Err(MeshError::StlParse(format!("{} bytes is shorter than the header", bytes.len())));
    }
    let count = u32::from_le_bytes(bytes[HEADER_LEN..HEADER_LEN + 4].try_into().expect("4 bytes")) as usize;
    let body = &bytes[HEADER_LEN + 4..];
    if body.len() != count * RECORD_LEN {
        return Err(MeshError::StlParse(format!("header declares {count} triangles but body holds {} bytes", body.len())));
    }
    let f = |chunk: &[u8], i: usize| f32::from_le_bytes(chunk[4 * i..4 * i + 4].try_into().expect("4 bytes"));
    Ok(body
        .chunks_exact(RECORD_LEN)
        .map(|rec| StlTriangle {
            normal: [f(rec, 0), f(rec, 1), f(rec, 2)],
            vertices: std::array::from_fn(|v| std::array::from_fn(|k| f(rec, 3 + 3 * v + k))),
            attribute: u16::from_le_bytes([rec[48], rec[49]]),
        })
        .collect())
}

/// Unwelded mesh with three vertices per STL triangle.
pub(crate) fn stl_to_soup(triangles: &[StlTriangle]) -> TriangleMesh {
    let mut mesh = TriangleMesh::default();
    for (i, t) in triangles.iter().enumerate() {
        mesh.vertices.extend(t.vertices.map(|v| v.map(f64::from)));
        let base = 3 * i as u32;
        mesh.triangles.push([base, base + 1, base + 2]);
    }
    mesh
}

impl TriangleMesh {
    /// Rebuilds an indexed mesh from STL triangles by exact-position welding.
    pub fn from_stl(triangles: &[StlTriangle]) -> TriangleMesh {
        super::weld_vertices(&stl_to_soup(triangles), 0.0)
    }
}
