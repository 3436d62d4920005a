//! Raster helpers: decoding sketches, PNG encoding with provenance text
//! chunks.

use image::{DynamicImage, ImageFormat, RgbImage};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("unsupported image: {0}")]
pub struct UnsupportedImage(pub String);

/// Decodes PNG or JPEG bytes; anything else is rejected.
pub fn decode(bytes: &[u8]) -> Result<DynamicImage, UnsupportedImage> {
    if bytes.is_empty() {
        return Err(UnsupportedImage("empty input".into()));
    }
    let format = image::guess_format(bytes).map_err(|e| UnsupportedImage(e.to_string()))?;
    if !matches!(format, ImageFormat::Png | ImageFormat::Jpeg) {
        return Err(UnsupportedImage(format!("{format:?} is not PNG or JPEG")));
    }
    image::load_from_memory_with_format(bytes, format).map_err(|e| UnsupportedImage(e.to_string()))
}

pub fn is_png(bytes: &[u8]) -> bool {
    bytes.starts_with(b"\x89PNG\r\n\x1a\n")
}

/// Encodes an RGB image as PNG, adding one `tEXt` chunk per pair.
pub fn encode_png(img: &RgbImage, text: &[(&str, &str)]) -> Vec<u8> {
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, img.width(), img.height());
        encoder.set_color(png::ColorType::Rgb);
        encoder.set_depth(png::BitDepth::Eight);
        for (k, v) in text {
            encoder.add_text_chunk((*k).to_owned(), (*v).to_owned()).expect("latin-1 keyword");
        }
        let mut writer = encoder.write_header().expect("in-memory PNG header");
        writer.write_image_data(img.as_raw()).expect("in-memory PNG body");
    }
    out
}

/// `tEXt` chunks of a PNG, in file order.
pub fn png_text(bytes: &[u8]) -> Vec<(String, String)> {
    let decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    match decoder.read_info() {
        Ok(reader) => reader.info().uncompressed_latin1_text.iter().map(|c| (c.keyword.clone(), c.text.clone())).collect(),
        Err(_) => Vec::new(),
    }
}

/// Integer box-filter downsample of an 8-bit grayscale buffer to
/// `out × out`. Pure integer math so results match on every platform.
pub fn box_downsample(gray: &image::GrayImage, out: u32) -> Vec<u8> {
    let (w, h) = gray.dimensions();
    let mut result = Vec::with_capacity((out * out) as usize);
    for oy in 0..out {
        let y0 = (oy as u64 * h as u64 / out as u64) as u32;
        let y1 = (((oy + 1) as u64 * h as u64).div_ceil(out as u64) as u32).max(y0 + 1).min(h);
        for ox in 0..out {
            let x0 = (ox as u64 * w as u64 / out as u64) as u32;
            let x1 = (((ox + 1) as u64 * w as u64).div_ceil(out as u64) as u32).max(x0 + 1).min(w);
            let mut sum = 0u64;
            let mut n = 0u64;
            for y in y0..y1 {
                for x in x0..x1 {
                    sum += gray.get_pixel(x, y).0[0] as u64;
                    n += 1;
                }
            }
            result.push((sum + n / 2).checked_div(n).map_or(255, |v| v as u8));
        }
    }
    result
}

/// Deterministic line-art test sketch: dark strokes on white, PNG encoded.
///
/// Each index yields a different arrangement of an outline ellipse, a box
/// and a few straight strokes. Only integer and basic float arithmetic is
/// used, so output bytes are identical across platforms.
pub fn synthetic_sketch(index: u64, size: u32) -> Vec<u8> {
    use rand::{Rng, SeedableRng};

    let size = size.max(64);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(index ^ 0x5eed_5c37);
    let mut img = RgbImage::from_pixel(size, size, image::Rgb([255, 255, 255]));
    let s = size as f64;
    let ink = image::Rgb([20, 20, 20]);
    let stroke = (s / 128.0).max(1.0);

    let (cx, cy) = (s * rng.random_range(0.35..0.65), s * rng.random_range(0.35..0.65));
    let (a, b) = (s * rng.random_range(0.15..0.3), s * rng.random_range(0.15..0.3));
    for y in 0..size {
        for x in 0..size {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            let r = ((dx / a).powi(2) + (dy / b).powi(2)).sqrt();
            if (r - 1.0).abs() * a.min(b) < stroke {
                img.put_pixel(x, y, ink);
            }
        }
    }

    let x0 = rng.random_range(0..size / 2);
    let y0 = rng.random_range(size / 2..size - 8);
    let (w, h) = (rng.random_range(size / 8..size / 2), rng.random_range(4..size / 6));
    let (x1, y1) = ((x0 + w).min(size - 1), (y0 + h).min(size - 1));
    for x in x0..=x1 {
        img.put_pixel(x, y0, ink);
        img.put_pixel(x, y1, ink);
    }
    for y in y0..=y1 {
        img.put_pixel(x0, y, ink);
        img.put_pixel(x1, y, ink);
    }

    for _ in 0..rng.random_range(2..5) {
        let p = (rng.random_range(0..size) as i64, rng.random_range(0..size) as i64);
        let q = (rng.random_range(0..size) as i64, rng.random_range(0..size) as i64);
        draw_line(&mut img, p, q, ink);
    }
    encode_png(&img, &[("generator", "synthetic-sketch")])
}

fn draw_line(img: &mut RgbImage, (mut x0, mut y0): (i64, i64), (x1, y1): (i64, i64), color: image::Rgb<u8>) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let mut err = dx + dy;
    loop {
        img.put_pixel(x0 as u32, y0 as u32, color);
        if x0 == x1 && y0 == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x0 += sx;
        }
        if e2 <= dx {
            err += dx;
            y0 += sy;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_text_roundtrip() {
        let img = RgbImage::from_pixel(4, 4, image::Rgb([1, 2, 3]));
        let bytes = encode_png(&img, &[("prompt-sha256", "abc")]);
        assert!(is_png(&bytes));
        assert_eq!(png_text(&bytes), vec![("prompt-sha256".to_owned(), "abc".to_owned())]);
        assert_eq!(decode(&bytes).unwrap().to_rgb8(), img);
    }

    #[test]
    fn rejects_garbage() {
        assert!(decode(&[]).is_err());
        assert!(decode(b"not an image").is_err());
        let img = RgbImage::from_pixel(4, 4, image::Rgb([1, 2, 3]));
        let bytes = encode_png(&img, &[]);
        assert!(decode(&bytes[..bytes.len() / 2]).is_err());
    }

    #[test]
    fn downsample_uniform() {
        let g = image::GrayImage::from_pixel(100, 37, image::Luma([77]));
        assert!(box_downsample(&g, 16).iter().all(|&v| v == 77));
        let g = image::GrayImage::from_pixel(3, 3, image::Luma([5]));
        assert_eq!(box_downsample(&g, 8).len(), 64);
    }
}
