//! Wavefront OBJ and Stanford PLY triangle meshes.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::mesh::{Face, TriangleMesh};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyEncoding {
    Ascii,
    BinaryLittleEndian,
}

pub fn read_mesh(path: &Path) -> Result<TriangleMesh> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    match extension(path).as_str() {
        "obj" => {
            let text = std::str::from_utf8(&bytes).map_err(|_| Error::parse(path, "OBJ file is not UTF-8"))?;
            parse_obj(text, path)
        }
        "ply" => parse_ply(&bytes, path),
        other => Err(Error::parse(path, format!("unknown mesh extension {other:?} (expected .obj or .ply)"))),
    }
}

/// `.obj` is always text; `.ply` uses `ply_encoding`.
pub fn write_mesh(path: &Path, mesh: &TriangleMesh, ply_encoding: PlyEncoding) -> Result<()> {
    let bytes = match extension(path).as_str() {
        "obj" => write_obj(mesh).into_bytes(),
        "ply" => write_ply(mesh, ply_encoding),
        other => return Err(Error::parse(path, format!("unknown mesh extension {other:?} (expected .obj or .ply)"))),
    };
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn extension(path: &Path) -> String {
    path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase()
}

fn build(vertices: Vec<Vec3>, faces: Vec<Face>, path: &Path) -> Result<TriangleMesh> {
    TriangleMesh::new(vertices, faces).map_err(|e| match e {
        Error::InvalidMesh(m) => Error::InvalidMesh(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Fan-triangulates polygons; texture/normal indices are ignored.
pub fn parse_obj(text: &str, path: &Path) -> Result<TriangleMesh> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    let mut face_lines = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let at = |msg: String| Error::parse(path, format!("line {}: {msg}", n + 1));
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("v") => {
                let mut c = [0.0; 3];
                for v in &mut c {
                    let t = tok.next().ok_or_else(|| at("vertex needs three coordinates".into()))?;
                    *v = t.parse().map_err(|_| at(format!("bad coordinate {t:?}")))?;
                }
                vertices.push(Vec3::from(c));
            }
            Some("f") => {
                let mut idx = Vec::new();
                for t in tok {
                    let head = t.split('/').next().unwrap_or("");
                    let i: i64 = head.parse().map_err(|_| at(format!("bad face index {t:?}")))?;
                    let resolved = match i {
                        0 => return Err(at("face index 0 is not allowed (OBJ is 1-based)".into())),
                        i if i > 0 => i - 1,
                        i => vertices.len() as i64 + i,
                    };
                    if resolved < 0 || resolved > u32::MAX as i64 {
                        return Err(at(format!("face index {i} out of range")));
                    }
                    idx.push(resolved as u32);
                }
                if idx.len() < 3 {
                    return Err(at("face needs at least three vertices".into()));
                }
                for k in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[k], idx[k + 1]]);
                    face_lines.push(n + 1);
                }
            }
            _ => {}
        }
    }
    for (f, line) in faces.iter().zip(&face_lines) {
        if let Some(&bad) = f.iter().find(|&&v| v as usize >= vertices.len()) {
            return Err(Error::parse(
                path,
                format!("line {line}: face index {} out of range ({} vertices)", bad + 1, vertices.len()),
            ));
        }
    }
    build(vertices, faces, path)
}

pub fn write_obj(mesh: &TriangleMesh) -> String {
    let mut s = String::new();
    for v in &mesh.vertices {
        let _ = writeln!(s, "v {} {} {}", v.x, v.y, v.z);
    }
    for f in &mesh.faces {
        let _ = writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    s
}

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
    fn parse(name: &str) -> Option<Scalar> {
        Some(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
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

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar(String, Scalar),
    List(String, Scalar, Scalar),
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

/// Reads `ascii` and `binary_little_endian` PLY. Only `x y z` of `vertex` and
/// the index list of `face` are used.
pub fn parse_ply(bytes: &[u8], path: &Path) -> Result<TriangleMesh> {
    let err = |msg: String| Error::parse(path, msg);
    let header_end = find_header_end(bytes).ok_or_else(|| err("missing end_header".into()))?;
    let header = std::str::from_utf8(&bytes[..header_end]).map_err(|_| err("header is not text".into()))?;
    let mut lines = header.lines().enumerate();
    if lines.next().map(|(_, l)| l.trim()) != Some("ply") {
        return Err(err("line 1: missing 'ply' magic".into()));
    }
    let mut encoding = None;
    let mut elements: Vec<Element> = Vec::new();
    for (n, line) in lines {
        let at = |msg: String| err(format!("line {}: {msg}", n + 1));
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            ["format", "ascii", _] => encoding = Some(PlyEncoding::Ascii),
            ["format", "binary_little_endian", _] => encoding = Some(PlyEncoding::BinaryLittleEndian),
            ["format", other, ..] => return Err(at(format!("unsupported format {other:?}"))),
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count.parse().map_err(|_| at(format!("bad element count {count:?}")))?,
                props: Vec::new(),
            }),
            ["property", "list", ct, it, name] => {
                let el = elements.last_mut().ok_or_else(|| at("property before element".into()))?;
                let ct = Scalar::parse(ct).ok_or_else(|| at(format!("unknown type {ct:?}")))?;
                let it = Scalar::parse(it).ok_or_else(|| at(format!("unknown type {it:?}")))?;
                el.props.push(Property::List(name.to_string(), ct, it));
            }
            ["property", ty, name] => {
                let el = elements.last_mut().ok_or_else(|| at("property before element".into()))?;
                let ty = Scalar::parse(ty).ok_or_else(|| at(format!("unknown type {ty:?}")))?;
                el.props.push(Property::Scalar(name.to_string(), ty));
            }
            ["comment", ..] | ["obj_info", ..] | ["end_header"] | [] => {}
            _ => return Err(at(format!("unrecognized header line {line:?}"))),
        }
    }
    let encoding = encoding.ok_or_else(|| err("missing format line".into()))?;
    let body = &bytes[header_end..];
    let mut reader: Box<dyn ValueReader> = match encoding {
        PlyEncoding::Ascii => Box::new(AsciiReader::new(body)),
        PlyEncoding::BinaryLittleEndian => Box::new(BinaryReader { data: body, pos: 0 }),
    };

    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for el in &elements {
        let xyz: Vec<Option<usize>> = ["x", "y", "z"]
            .iter()
            .map(|k| el.props.iter().position(|p| matches!(p, Property::Scalar(n, _) if n == k)))
            .collect();
        if el.name == "vertex" && xyz.iter().any(Option::is_none) {
            return Err(err("vertex element lacks x/y/z".into()));
        }
        for row in 0..el.count {
            let mut coords = [0.0; 3];
            let mut list: Vec<f64> = Vec::new();
            for (pi, prop) in el.props.iter().enumerate() {
                let bad = |what: &str| err(format!("element {} row {row}: {what}", el.name));
                match prop {
                    Property::Scalar(_, ty) => {
                        let v = reader.next(*ty).ok_or_else(|| bad("truncated or malformed value"))?;
                        if let Some(k) = xyz.iter().position(|&i| i == Some(pi)) {
                            coords[k] = v;
                        }
                    }
                    Property::List(name, ct, it) => {
                        let len = reader.next(*ct).ok_or_else(|| bad("truncated list length"))?;
                        if !(len >= 0.0 && len.fract() == 0.0) {
                            return Err(bad("bad list length"));
                        }
                        let keep = el.name == "face" && (name == "vertex_indices" || name == "vertex_index");
                        for _ in 0..len as usize {
                            let v = reader.next(*it).ok_or_else(|| bad("truncated list"))?;
                            if keep {
                                list.push(v);
                            }
                        }
                    }
                }
            }
            if el.name == "vertex" {
                vertices.push(Vec3::from(coords));
            } else if el.name == "face" {
                if list.len() < 3 {
                    return Err(err(format!("face {row} has fewer than three vertices")));
                }
                let mut idx = Vec::with_capacity(list.len());
                for v in list {
                    if !(v >= 0.0 && v <= u32::MAX as f64 && v.fract() == 0.0) {
                        return Err(Error::InvalidMesh(format!("{}: face {row} has index {v}", path.display())));
                    }
                    idx.push(v as u32);
                }
                for k in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
        }
    }
    build(vertices, faces, path)
}

fn find_header_end(bytes: &[u8]) -> Option<usize> {
    let marker = b"end_header";
    let at = bytes.windows(marker.len()).position(|w| w == marker)?;
    let mut end = at + marker.len();
    if bytes.get(end) == Some(&b'\r') {
        end += 1;
    }
    if bytes.get(end) == Some(&b'\n') {
        end += 1;
    }
    Some(end)
}

trait ValueReader {
    fn next(&mut self, ty: Scalar) -> Option<f64>;
}

struct AsciiReader<'a> {
    tokens: std::str::SplitAsciiWhitespace<'a>,
}

impl<'a> AsciiReader<'a> {
    fn new(body: &'a [u8]) -> Self {
        let text = std::str::from_utf8(body).unwrap_or("");
        Self { tokens: text.split_ascii_whitespace() }
    }
}

impl ValueReader for AsciiReader<'_> {
    fn next(&mut self, _ty: Scalar) -> Option<f64> {
        self.tokens.next()?.parse().ok()
    }
}

struct BinaryReader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl ValueReader for BinaryReader<'_> {
    fn next(&mut self, ty: Scalar) -> Option<f64> {
        let b = self.data.get(self.pos..self.pos + ty.size())?;
        self.pos += ty.size();
        Some(ty.read_le(b))
    }
}

/// Vertices are written as doubles so the round trip is exact.
pub fn write_ply(mesh: &TriangleMesh, encoding: PlyEncoding) -> Vec<u8> {
    let format = match encoding {
        PlyEncoding::Ascii => "ascii",
        PlyEncoding::BinaryLittleEndian => "binary_little_endian",
    };
    let mut out = format!(
        "ply\nformat {format} 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\n\
         element face {}\nproperty list uchar uint vertex_indices\nend_header\n",
        mesh.vertices.len(),
        mesh.faces.len()
    )
    .into_bytes();
    match encoding {
        PlyEncoding::Ascii => {
            let mut s = String::new();
            for v in &mesh.vertices {
                let _ = writeln!(s, "{} {} {}", v.x, v.y, v.z);
            }
            for f in &mesh.faces {
                let _ = writeln!(s, "3 {} {} {}", f[0], f[1], f[2]);
            }
            out.extend(s.into_bytes());
        }
        PlyEncoding::BinaryLittleEndian => {
            for v in &mesh.vertices {
                for c in [v.x, v.y, v.z] {
                    out.extend(c.to_le_bytes());
                }
            }
            for f in &mesh.faces {
                out.push(3);
                for i in f {
                    out.extend(i.to_le_bytes());
                }
            }
        }
    }
    out
}
