use image::{GrayImage, Luma};

use super::{cross, norm, sub, TriangleMesh};

/// Flat-shaded orthographic front view (camera on −y looking at +y, z up)
/// on a white background, with the mesh fit into the frame.
///
/// Used to compare a mesh candidate against the image it was generated
/// from; not a diagnostic view.
pub fn render_preview(mesh: &TriangleMesh, size: u32) -> GrayImage {
    let size = size.max(8);
    let mut img = GrayImage::from_pixel(size, size, Luma([255]));
    if mesh.triangles.is_empty() {
        return img;
    }
    let mut min = [f64::INFINITY; 3];
    let mut max = [f64::NEG_INFINITY; 3];
    for t in &mesh.triangles {
        for &v in t {
            let p = mesh.vertices[v as usize];
            for k in 0..3 {
                min[k] = min[k].min(p[k]);
                max[k] = max[k].max(p[k]);
            }
        }
    }
    let extent = (max[0] - min[0]).max(max[2] - min[2]);
    if extent.is_nan() || extent <= 0.0 {
        return img;
    }
    let s = size as f64;
    let scale = 0.85 * s / extent;
    let (cx, cz) = (0.5 * (min[0] + max[0]), 0.5 * (min[2] + max[2]));
    let project = |p: [f64; 3]| [(p[0] - cx) * scale + 0.5 * s, 0.5 * s - (p[2] - cz) * scale, p[1]];

    let light = {
        let l = [-0.4, -1.0, 0.6];
        let n = norm(l);
        l.map(|c| c / n)
    };
    let mut depth = vec![f64::INFINITY; (size * size) as usize];
    for t in 0..mesh.triangles.len() {
        let corners = mesh.corners(t);
        let n = cross(sub(corners[1], corners[0]), sub(corners[2], corners[0]));
        let len = norm(n);
        if len == 0.0 {
            continue;
        }
        let lambert = ((n[0] * light[0] + n[1] * light[1] + n[2] * light[2]) / len).abs();
        let shade = (40.0 + 190.0 * lambert).round().clamp(0.0, 254.0) as u8;

        let [a, b, c] = corners.map(project);
        let area = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
        if area.abs() < 1e-12 {
            continue;
        }
        let x0 = a[0].min(b[0]).min(c[0]).floor().max(0.0) as u32;
        let x1 = (a[0].max(b[0]).max(c[0]).ceil() as u32).min(size - 1);
        let y0 = a[1].min(b[1]).min(c[1]).floor().max(0.0) as u32;
        let y1 = (a[1].max(b[1]).max(c[1]).ceil() as u32).min(size - 1);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                let w0 = ((b[0] - px) * (c[1] - py) - (b[1] - py) * (c[0] - px)) / area;
                let w1 = ((c[0] - px) * (a[1] - py) - (c[1] - py) * (a[0] - px)) / area;
                let w2 = 1.0 - w0 - w1;
                if w0 < 0.0 || w1 < 0.0 || w2 < 0.0 {
                    continue;
                }
                let z = w0 * a[2] + w1 * b[2] + w2 * c[2];
                let idx = (y * size + x) as usize;
                if z < depth[idx] {
                    depth[idx] = z;
                    img.put_pixel(x, y, Luma([shade]));
                }
            }
        }
    }
    img
}
