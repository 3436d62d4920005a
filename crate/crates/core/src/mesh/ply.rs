//! PLY reader (ascii 1.0 and binary_little_endian 1.0) and writer.
//!
//! Only the `vertex` (x/y/z, optional red/green/blue) and `face` (vertex
//! index list) elements are interpreted; every other element or property is
//! read and discarded. Polygons are fan-triangulated.

use std::fmt::Write as _;

use super::{MeshError, TriangleMesh};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(name: &str) -> Result<Self, MeshError> {
        Ok(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            other => return Err(MeshError::Parse(format!("unknown property type `{other}`"))),
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn is_integer(self) -> bool {
        !matches!(self, Scalar::F32 | Scalar::F64)
    }
}

#[derive(Debug, Clone)]
enum PropertyKind {
    Scalar(Scalar),
    List { count: Scalar, item: Scalar },
}

#[derive(Debug, Clone)]
struct Property {
    name: String,
    kind: PropertyKind,
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    Ascii,
    BinaryLe,
}

fn parse_err(msg: impl Into<String>) -> MeshError {
    MeshError::Parse(msg.into())
}

fn parse_header(bytes: &[u8]) -> Result<(Format, Vec<Element>, usize), MeshError> {
    let mut offset = 0;
    let mut lines = Vec::new();
    loop {
        let rest = &bytes[offset..];
        let nl = rest.iter().position(|&b| b == b'\n').ok_or_else(|| parse_err("header is not terminated by end_header"))?;
        let line = std::str::from_utf8(&rest[..nl]).map_err(|_| parse_err("header is not ASCII"))?;
        let line = line.trim_end_matches('\r').trim();
        offset += nl + 1;
        if line == "end_header" {
            break;
        }
        lines.push(line.to_owned());
    }

    let mut it = lines.iter();
    if it.next().map(String::as_str) != Some("ply") {
        return Err(parse_err("missing `ply` magic"));
    }
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    for line in it {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            [] => {}
            ["comment", ..] | ["obj_info", ..] => {}
            ["format", kind, version] => {
                if *version != "1.0" {
                    return Err(parse_err(format!("unsupported PLY version `{version}`")));
                }
                format = Some(match *kind {
                    "ascii" => Format::Ascii,
                    "binary_little_endian" => Format::BinaryLe,
                    other => return Err(parse_err(format!("unsupported format `{other}`"))),
                });
            }
            ["element", name, count] => {
                let count = count.parse().map_err(|_| parse_err(format!("bad element count `{count}`")))?;
                elements.push(Element { name: (*name).to_owned(), count, properties: Vec::new() });
            }
            ["property", "list", count, item, name] => {
                let element = elements.last_mut().ok_or_else(|| parse_err("property before element"))?;
                let (count, item) = (Scalar::parse(count)?, Scalar::parse(item)?);
                if !count.is_integer() || !item.is_integer() {
                    return Err(parse_err(format!("list `{name}` must use integer types")));
                }
                element.properties.push(Property { name: (*name).to_owned(), kind: PropertyKind::List { count, item } });
            }
            ["property", ty, name] => {
                let element = elements.last_mut().ok_or_else(|| parse_err("property before element"))?;
                element.properties.push(Property { name: (*name).to_owned(), kind: PropertyKind::Scalar(Scalar::parse(ty)?) });
            }
            _ => return Err(parse_err(format!("unrecognized header line `{line}`"))),
        }
    }
    let format = format.ok_or_else(|| parse_err("missing format line"))?;
    Ok((format, elements, offset))
}

/// Pulls scalar values out of the body in declaration order.
trait ValueSource {
    fn next(&mut self, ty: Scalar) -> Result<f64, MeshError>;
}

struct AsciiSource<'a> {
    tokens: std::str::SplitAsciiWhitespace<'a>,
}

impl ValueSource for AsciiSource<'_> {
    fn next(&mut self, ty: Scalar) -> Result<f64, MeshError> {
        let tok = self.tokens.next().ok_or_else(|| parse_err("truncated body"))?;
        if ty.is_integer() {
            tok.parse::<i64>().map(|v| v as f64).map_err(|_| parse_err(format!("bad integer `{tok}`")))
        } else {
            tok.parse::<f64>().map_err(|_| parse_err(format!("bad number `{tok}`")))
        }
    }
}

struct BinarySource<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl ValueSource for BinarySource<'_> {
    fn next(&mut self, ty: Scalar) -> Result<f64, MeshError> {
        let n = ty.size();
        let raw = self.bytes.get(self.pos..self.pos + n).ok_or_else(|| parse_err("truncated body"))?;
        self.pos += n;
        Ok(match ty {
            Scalar::I8 => raw[0] as i8 as f64,
            Scalar::U8 => raw[0] as f64,
            Scalar::I16 => i16::from_le_bytes([raw[0], raw[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([raw[0], raw[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes([raw[0], raw[1], raw[2], raw[3]]) as f64,
            Scalar::U32 => u32::from_le_bytes([raw[0], raw[1], raw[2], raw[3]]) as f64,
            Scalar::F32 => f32::from_le_bytes([raw[0], raw[1], raw[2], raw[3]]) as f64,
            Scalar::F64 => f64::from_le_bytes(raw.try_into().expect("8 bytes")),
        })
    }
}

fn read_body(elements: &[Element], src: &mut dyn ValueSource) -> Result<TriangleMesh, MeshError> {
    let mut mesh = TriangleMesh::default();
    let mut colors: Vec<[u8; 3]> = Vec::new();
    let mut has_colors = false;
    for element in elements {
        let find = |name: &str| element.properties.iter().position(|p| p.name == name);
        match element.name.as_str() {
            "vertex" => {
                let xyz = [find("x"), find("y"), find("z")];
                let rgb = [find("red"), find("green"), find("blue")];
                if xyz.iter().any(Option::is_none) {
                    return Err(parse_err("vertex element lacks x/y/z"));
                }
                has_colors = rgb.iter().all(Option::is_some);
                let mut values = vec![0.0; element.properties.len()];
                mesh.vertices.reserve(element.count.min(1 << 20));
                for _ in 0..element.count {
                    for (slot, prop) in values.iter_mut().zip(&element.properties) {
                        *slot = read_property(prop, src)?;
                    }
                    let p = xyz.map(|i| values[i.expect("checked")]);
                    if p.iter().any(|c| !c.is_finite()) {
                        return Err(parse_err(format!("non-finite vertex {p:?}")));
                    }
                    mesh.vertices.push(p);
                    if has_colors {
                        colors.push(rgb.map(|i| values[i.expect("checked")].clamp(0.0, 255.0) as u8));
                    }
                }
            }
            "face" => {
                let list = find("vertex_indices")
                    .or_else(|| find("vertex_index"))
                    .ok_or_else(|| parse_err("face element lacks vertex_indices"))?;
                for _ in 0..element.count {
                    for (i, prop) in element.properties.iter().enumerate() {
                        match (&prop.kind, i == list) {
                            (PropertyKind::List { count, item }, true) => {
                                let n = src.next(*count)?;
                                if n < 3.0 {
                                    return Err(parse_err(format!("face with {n} vertices")));
                                }
                                let mut poly = Vec::with_capacity(n as usize);
                                for _ in 0..n as usize {
                                    let idx = src.next(*item)?;
                                    if idx < 0.0 || idx >= u32::MAX as f64 {
                                        return Err(parse_err(format!("face index {idx} out of range")));
                                    }
                                    poly.push(idx as u32);
                                }
                                for k in 1..poly.len() - 1 {
                                    mesh.triangles.push([poly[0], poly[k], poly[k + 1]]);
                                }
                            }
                            _ => {
                                read_property(prop, src)?;
                            }
                        }
                    }
                }
            }
            _ => {
                for _ in 0..element.count {
                    for prop in &element.properties {
                        read_property(prop, src)?;
                    }
                }
            }
        }
    }
    let n = mesh.vertices.len();
    if let Some(bad) = mesh.triangles.iter().flatten().find(|&&i| i as usize >= n) {
        return Err(parse_err(format!("face index {bad} out of range for {n} vertices")));
    }
    if has_colors {
        mesh.colors = Some(colors);
    }
    Ok(mesh)
}

/// Reads one property; lists are consumed and reported as their length.
fn read_property(prop: &Property, src: &mut dyn ValueSource) -> Result<f64, MeshError> {
    match prop.kind {
        PropertyKind::Scalar(ty) => src.next(ty),
        PropertyKind::List { count, item } => {
            let n = src.next(count)?;
            if n < 0.0 {
                return Err(parse_err("negative list length"));
            }
            for _ in 0..n as usize {
                src.next(item)?;
            }
            Ok(n)
        }
    }
}

pub fn parse_ply(bytes: &[u8]) -> Result<TriangleMesh, MeshError> {
    let (format, elements, offset) = parse_header(bytes)?;
    let body = &bytes[offset..];
    match format {
        Format::Ascii => {
            let text = std::str::from_utf8(body).map_err(|_| parse_err("ascii body is not UTF-8"))?;
            read_body(&elements, &mut AsciiSource { tokens: text.split_ascii_whitespace() })
        }
        Format::BinaryLe => read_body(&elements, &mut BinarySource { bytes: body, pos: 0 }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyEncoding {
    Ascii,
    /// float32 coordinates, as most generators emit.
    BinaryF32,
    /// float64 coordinates; lossless.
    BinaryF64,
}

pub fn write_ply(mesh: &TriangleMesh, encoding: PlyEncoding) -> Vec<u8> {
    let mut header = String::from("ply\n");
    let coord = match encoding {
        PlyEncoding::Ascii => {
            header.push_str("format ascii 1.0\n");
            "double"
        }
        PlyEncoding::BinaryF32 => {
            header.push_str("format binary_little_endian 1.0\n");
            "float"
        }
        PlyEncoding::BinaryF64 => {
            header.push_str("format binary_little_endian 1.0\n");
            "double"
        }
    };
    header.push_str("comment draftforge\n");
    let _ = writeln!(header, "element vertex {}", mesh.vertices.len());
    for axis in ["x", "y", "z"] {
        let _ = writeln!(header, "property {coord} {axis}");
    }
    if mesh.colors.is_some() {
        header.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    }
    let _ = writeln!(header, "element face {}", mesh.triangles.len());
    header.push_str("property list uchar int vertex_indices\nend_header\n");

    let mut out = header.into_bytes();
    match encoding {
        PlyEncoding::Ascii => {
            let mut body = String::new();
            for (i, v) in mesh.vertices.iter().enumerate() {
                let _ = write!(body, "{:?} {:?} {:?}", v[0], v[1], v[2]);
                if let Some(c) = &mesh.colors {
                    let _ = write!(body, " {} {} {}", c[i][0], c[i][1], c[i][2]);
                }
                body.push('\n');
            }
            for t in &mesh.triangles {
                let _ = writeln!(body, "3 {} {} {}", t[0], t[1], t[2]);
            }
            out.extend_from_slice(body.as_bytes());
        }
        PlyEncoding::BinaryF32 | PlyEncoding::BinaryF64 => {
            for (i, v) in mesh.vertices.iter().enumerate() {
                for &c in v {
                    if encoding == PlyEncoding::BinaryF32 {
                        out.extend_from_slice(&(c as f32).to_le_bytes());
                    } else {
                        out.extend_from_slice(&c.to_le_bytes());
                    }
                }
                if let Some(c) = &mesh.colors {
                    out.extend_from_slice(&c[i]);
                }
            }
            for t in &mesh.triangles {
                out.push(3);
                for &i in t {
                    out.extend_from_slice(&(i as i32).to_le_bytes());
                }
            }
        }
    }
    out
}
