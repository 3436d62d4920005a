use std::collections::BTreeSet;

use image::{imageops, Rgb, RgbImage};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{DescribeResult, Describer, GeneratedImage, MeshBackend, ProviderError, SketchGuided, TextToImage};
use crate::config::{MockConfig, MockMeshSpec};
use crate::imaging;
use crate::mesh::{self, primitives, PlyEncoding, TriangleMesh};

/// RNG keyed on the seed and a sequence of length-prefixed parts, so that
/// ("ab", "c") and ("a", "bc") never collide.
fn keyed_rng(seed: u64, parts: &[&[u8]]) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    ChaCha8Rng::from_seed(h.finalize().into())
}

fn sha_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

const OBJECTS: [&str; 10] = [
    "milk frother",
    "handheld whisk",
    "desk lamp",
    "water bottle",
    "pour-over kettle",
    "spice grinder",
    "phone stand",
    "table planter",
    "pepper mill",
    "soap dispenser",
];
const FORMS: [&str; 8] = [
    "a tapered cylindrical body",
    "a rounded ergonomic grip",
    "a wide weighted base",
    "a slim vertical profile",
    "a faceted geometric shell",
    "a soft pebble-like silhouette",
    "a stepped two-part housing",
    "a single sweeping curve",
];
const MATERIALS: [&str; 6] =
    ["matte ceramic", "brushed steel", "light oak", "frosted glass", "soft-touch polymer", "anodized aluminum"];
const STYLES: [&str; 5] = ["minimalist", "retro", "Scandinavian", "industrial", "playful"];

/// Offline stand-in for the describe, text-to-image and sketch-guided
/// providers. Every output is a pure function of the seed and the inputs.
#[derive(Debug, Clone)]
pub struct MockProvider {
    seed: u64,
    image_size: u32,
    blocked_terms: Vec<String>,
}

impl MockProvider {
    pub fn new(seed: u64, cfg: &MockConfig) -> Self {
        Self {
            seed,
            image_size: cfg.image_size.max(super::MIN_IMAGE_SIDE),
            blocked_terms: cfg.blocked_terms.iter().map(|t| t.to_lowercase()).filter(|t| !t.is_empty()).collect(),
        }
    }

    fn policy_check(&self, text: &str) -> Result<(), ProviderError> {
        let lower = text.to_lowercase();
        match self.blocked_terms.iter().find(|t| lower.contains(t.as_str())) {
            Some(term) => Err(ProviderError::safety(format!("prompt deemed unsafe by mock content policy (matched {term:?})"))),
            None => Ok(()),
        }
    }

    fn render_concept(&self, prompt: &str, index: usize) -> RgbImage {
        let mut rng = keyed_rng(self.seed, &[b"text_to_image", prompt.as_bytes(), &(index as u64).to_le_bytes()]);
        let s = self.image_size;
        // Mid-tone backgrounds keep concept renders clearly apart from
        // white-paper sketches.
        let bg = Rgb([rng.random_range(30..=210), rng.random_range(30..=210), rng.random_range(30..=210)]);
        let mut img = RgbImage::from_pixel(s, s, bg);
        let shapes = rng.random_range(3..=6);
        for _ in 0..shapes {
            let color = Rgb([rng.random(), rng.random(), rng.random()]);
            let cx = rng.random_range(0..s) as i64;
            let cy = rng.random_range(0..s) as i64;
            let r = rng.random_range(s / 10..s / 3) as i64;
            if rng.random_bool(0.5) {
                fill_disc(&mut img, cx, cy, r, color);
            } else {
                let h = rng.random_range(s / 10..s / 3) as i64;
                fill_rect(&mut img, cx - r, cy - h, cx + r, cy + h, color);
            }
        }
        img
    }

    fn render_guided(&self, sketch: &image::GrayImage, prompt: &str, index: usize, sketch_hash: &str) -> RgbImage {
        let mut rng =
            keyed_rng(self.seed, &[b"sketch_guided", sketch_hash.as_bytes(), prompt.as_bytes(), &(index as u64).to_le_bytes()]);
        let s = self.image_size;
        let ink = Rgb([rng.random_range(0..60), rng.random_range(0..60), rng.random_range(0..60)]);
        let mut img = RgbImage::from_pixel(s, s, Rgb([255, 255, 255]));
        // Light accents first, then the sketch strokes on top so the
        // geometry always survives.
        for _ in 0..rng.random_range(1..=3) {
            let tint = Rgb([rng.random_range(205..=255), rng.random_range(205..=255), rng.random_range(205..=255)]);
            let cx = rng.random_range(0..s) as i64;
            let cy = rng.random_range(0..s) as i64;
            fill_disc(&mut img, cx, cy, rng.random_range(s / 12..s / 6) as i64, tint);
        }
        for (x, y, p) in sketch.enumerate_pixels() {
            if p.0[0] < 128 {
                img.put_pixel(x, y, ink);
            }
        }
        img
    }
}

fn fill_disc(img: &mut RgbImage, cx: i64, cy: i64, r: i64, color: Rgb<u8>) {
    let (w, h) = (img.width() as i64, img.height() as i64);
    for y in (cy - r).max(0)..(cy + r + 1).min(h) {
        for x in (cx - r).max(0)..(cx + r + 1).min(w) {
            if (x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r {
                img.put_pixel(x as u32, y as u32, color);
            }
        }
    }
}

fn fill_rect(img: &mut RgbImage, x0: i64, y0: i64, x1: i64, y1: i64, color: Rgb<u8>) {
    let (w, h) = (img.width() as i64, img.height() as i64);
    for y in y0.max(0)..y1.min(h) {
        for x in x0.max(0)..x1.min(w) {
            img.put_pixel(x as u32, y as u32, color);
        }
    }
}

impl Describer for MockProvider {
    fn describe(&self, sketch: &[u8], note: &str) -> Result<DescribeResult, ProviderError> {
        self.policy_check(note)?;
        let sketch_hash = sha_hex(sketch);
        let mut rng = keyed_rng(self.seed, &[b"describe", sketch_hash.as_bytes(), note.as_bytes()]);
        let object = OBJECTS.choose(&mut rng).copied().unwrap_or("object");
        let form = FORMS.choose(&mut rng).copied().unwrap_or("a simple form");
        let material = MATERIALS.choose(&mut rng).copied().unwrap_or("plastic");
        let style = STYLES.choose(&mut rng).copied().unwrap_or("simple");
        let concept = &sketch_hash[..8];

        let mut description = format!("A hand-drawn concept sketch of a {object} with {form}.");
        let note = note.trim();
        if !note.is_empty() {
            description.push_str(&format!(" Designer note: {note}."));
        }
        let mut generation_prompt = format!(
            "Product photograph of a {style} {object} with {form}, {material} finish, studio lighting, design concept {concept}"
        );
        if !note.is_empty() {
            generation_prompt.push_str(&format!(", {note}"));
        }
        self.policy_check(&generation_prompt)?;
        Ok(DescribeResult { description, generation_prompt })
    }
}

impl TextToImage for MockProvider {
    fn text_to_images(&self, prompt: &str, n: usize) -> Result<Vec<GeneratedImage>, ProviderError> {
        self.policy_check(prompt)?;
        let prompt_hash = sha_hex(prompt.as_bytes());
        Ok((0..n)
            .map(|i| GeneratedImage {
                bytes: imaging::encode_png(
                    &self.render_concept(prompt, i),
                    &[("prompt-sha256", &prompt_hash), ("generator", "draftforge-mock")],
                ),
                revised_prompt: format!("{prompt} (variation {} of {n})", i + 1),
            })
            .collect())
    }
}

impl SketchGuided for MockProvider {
    fn sketch_guided_images(&self, sketch: &[u8], prompt: &str, n: usize) -> Result<Vec<GeneratedImage>, ProviderError> {
        self.policy_check(prompt)?;
        let decoded = imaging::decode(sketch).map_err(|e| ProviderError::malformed(e.to_string()))?;
        let gray = imageops::resize(&decoded.to_luma8(), self.image_size, self.image_size, imageops::FilterType::Nearest);
        let sketch_hash = sha_hex(sketch);
        let prompt_hash = sha_hex(prompt.as_bytes());
        Ok((0..n)
            .map(|i| {
                let label = format!("sketch-guided variation {} of {n}", i + 1);
                GeneratedImage {
                    bytes: imaging::encode_png(
                        &self.render_guided(&gray, prompt, i, &sketch_hash),
                        &[("prompt-sha256", &prompt_hash), ("sketch-sha256", &sketch_hash), ("generator", "draftforge-mock")],
                    ),
                    revised_prompt: if prompt.trim().is_empty() { label } else { format!("{prompt} ({label})") },
                }
            })
            .collect())
    }
}

/// Defects a mock mesh backend injects into its otherwise watertight output.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Defects {
    /// Faces removed, chosen so no two share a vertex (each leaves its own
    /// triangular hole).
    pub drop_faces: usize,
    /// Adds a small detached octahedron next to the main body.
    pub add_fragment: bool,
    /// Gives every triangle its own copy of its vertices (triangle soup).
    pub duplicate_vertices: bool,
}

impl Defects {
    /// Preset defects for the built-in backend names.
    pub fn preset(name: &str) -> Self {
        match name {
            "prim-holes" => Self { drop_faces: 3, ..Self::default() },
            "prim-fragments" => Self { add_fragment: true, ..Self::default() },
            "prim-soup" => Self { duplicate_vertices: true, ..Self::default() },
            _ => Self::default(),
        }
    }
}

/// Mock image-to-3D backend: a primitive chosen and sized by the image
/// hash, with configurable defects. Only `+ - * /` and `sqrt` are used to
/// build geometry, so outputs are bit-identical across platforms.
#[derive(Debug, Clone)]
pub struct MockMeshBackend {
    name: String,
    seed: u64,
    defects: Defects,
}

impl MockMeshBackend {
    pub fn new(seed: u64, spec: &MockMeshSpec) -> Self {
        Self { name: spec.name.clone(), seed, defects: spec.defects.clone().unwrap_or_else(|| Defects::preset(&spec.name)) }
    }

    pub fn defects(&self) -> &Defects {
        &self.defects
    }

    /// The mesh before PLY encoding.
    pub fn generate(&self, image: &[u8]) -> TriangleMesh {
        let digest = Sha256::digest(image);
        let mut rng = keyed_rng(self.seed, &[b"image_to_mesh", &digest]);
        let dims: [f64; 3] = std::array::from_fn(|_| rng.random_range(20..=60) as f64);
        let half = dims.map(|d| d / 2.0);
        let mut body = match digest[0] % 3 {
            0 => primitives::subdivided_box(half.map(|h| -h), half, 8),
            1 => cube_sphere(half[0], [1.0, 1.0, 1.0]),
            _ => cube_sphere(half[0], [1.0, 0.7, 1.6]),
        };
        if self.defects.drop_faces > 0 {
            drop_disjoint_faces(&mut body, self.defects.drop_faces, &mut rng);
        }
        if self.defects.add_fragment {
            let max_x = body.vertices.iter().map(|v| v[0]).fold(f64::NEG_INFINITY, f64::max);
            body.merge(&primitives::octahedron([max_x + 10.0, 0.0, 0.0], 2.0));
        }
        if self.defects.duplicate_vertices {
            body = explode(&body);
        }
        body
    }
}

impl MeshBackend for MockMeshBackend {
    fn image_to_mesh(&self, image: &[u8]) -> Result<Vec<u8>, ProviderError> {
        tracing::debug!(backend = %self.name, "mock image_to_mesh");
        Ok(mesh::write_ply(&self.generate(image), PlyEncoding::BinaryF32))
    }
}

/// Subdivided cube with every vertex pushed onto an (optionally stretched)
/// sphere. 768 triangles.
fn cube_sphere(radius: f64, stretch: [f64; 3]) -> TriangleMesh {
    let mut m = primitives::subdivided_box([-1.0; 3], [1.0; 3], 8);
    for v in &mut m.vertices {
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        *v = std::array::from_fn(|k| v[k] / n * radius * stretch[k]);
    }
    m
}

fn drop_disjoint_faces(m: &mut TriangleMesh, k: usize, rng: &mut ChaCha8Rng) {
    let mut order: Vec<usize> = (0..m.triangles.len()).collect();
    order.shuffle(rng);
    let mut used = BTreeSet::new();
    let mut drop = BTreeSet::new();
    for t in order {
        if drop.len() == k {
            break;
        }
        if m.triangles[t].iter().all(|v| !used.contains(v)) {
            used.extend(m.triangles[t]);
            drop.insert(t);
        }
    }
    let mut idx = 0;
    m.triangles.retain(|_| {
        let keep = !drop.contains(&idx);
        idx += 1;
        keep
    });
}

fn explode(m: &TriangleMesh) -> TriangleMesh {
    let mut out = TriangleMesh::default();
    for t in 0..m.triangles.len() {
        let base = out.vertices.len() as u32;
        out.vertices.extend(m.corners(t));
        out.triangles.push([base, base + 1, base + 2]);
    }
    out
}
