//! Little-endian binary sidecars: clusters, anchors, float maps, verdicts
//! and planned anchor positions.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cluster::Cluster;
use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::raster::DepthMap;
use crate::visibility::{AnchorSet, CullMask, Verdict};

pub const CLUSTER_MAGIC: &[u8; 4] = b"PXCL";
pub const ANCHOR_MAGIC: &[u8; 4] = b"PXAN";
pub const FORMAT_VERSION: u32 = 1;

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn new(data: &'a [u8], path: &'a Path) -> Self {
        Self { data, pos: 0, path }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.data.len());
        let Some(end) = end else {
            return Err(Error::parse(self.path, format!("truncated at byte {} (wanted {n} more)", self.pos)));
        };
        let s = &self.data[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn vec3(&mut self) -> Result<Vec3> {
        Ok(Vec3::new(self.f64()?, self.f64()?, self.f64()?))
    }

    fn header(&mut self, magic: &[u8; 4]) -> Result<()> {
        if self.take(4)? != magic {
            return Err(Error::parse(self.path, format!("bad magic, expected {:?}", String::from_utf8_lossy(magic))));
        }
        let v = self.u32()?;
        if v != FORMAT_VERSION {
            return Err(Error::parse(self.path, format!("unsupported format version {v}")));
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.data.len() {
            return Err(Error::parse(self.path, format!("{} trailing bytes", self.data.len() - self.pos)));
        }
        Ok(())
    }
}

fn push_vec3(out: &mut Vec<u8>, v: Vec3) {
    for c in [v.x, v.y, v.z] {
        out.extend(c.to_le_bytes());
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Layout: magic, version, cluster count, mesh face count, then per cluster
/// the triangle count, AABB min/max as f64 and the triangle indices.
pub fn encode_clusters(clusters: &[Cluster], face_count: usize) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend(CLUSTER_MAGIC);
    out.extend(FORMAT_VERSION.to_le_bytes());
    out.extend((clusters.len() as u32).to_le_bytes());
    out.extend((face_count as u32).to_le_bytes());
    for c in clusters {
        out.extend((c.triangle_indices.len() as u32).to_le_bytes());
        push_vec3(&mut out, c.aabb_min);
        push_vec3(&mut out, c.aabb_max);
        for i in &c.triangle_indices {
            out.extend(i.to_le_bytes());
        }
    }
    out
}

/// Returns the clusters and the face count of the mesh they were built for.
pub fn decode_clusters(bytes: &[u8], path: &Path) -> Result<(Vec<Cluster>, usize)> {
    let mut c = Cursor::new(bytes, path);
    c.header(CLUSTER_MAGIC)?;
    let count = c.u32()? as usize;
    let faces = c.u32()? as usize;
    let mut clusters = Vec::with_capacity(count.min(1 << 20));
    for k in 0..count {
        let n = c.u32()? as usize;
        let aabb_min = c.vec3()?;
        let aabb_max = c.vec3()?;
        let mut tris = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            let t = c.u32()?;
            if t as usize >= faces {
                return Err(Error::parse(path, format!("cluster {k} references face {t} of {faces}")));
            }
            tris.push(t);
        }
        clusters.push(Cluster { triangle_indices: tris, aabb_min, aabb_max });
    }
    c.finish()?;
    Ok((clusters, faces))
}

pub fn write_clusters(path: &Path, clusters: &[Cluster], face_count: usize) -> Result<()> {
    write_file(path, &encode_clusters(clusters, face_count))
}

pub fn read_clusters(path: &Path) -> Result<(Vec<Cluster>, usize)> {
    decode_clusters(&read_file(path)?, path)
}

pub fn encode_anchors(anchors: &AnchorSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 24 * anchors.len());
    out.extend(ANCHOR_MAGIC);
    out.extend(FORMAT_VERSION.to_le_bytes());
    out.extend((anchors.len() as u64).to_le_bytes());
    for &p in &anchors.positions {
        push_vec3(&mut out, p);
    }
    out
}

pub fn decode_anchors(bytes: &[u8], path: &Path) -> Result<AnchorSet> {
    let mut c = Cursor::new(bytes, path);
    c.header(ANCHOR_MAGIC)?;
    let n = c.u64()? as usize;
    if bytes.len().saturating_sub(16) != n.saturating_mul(24) {
        return Err(Error::parse(path, format!("anchor count {n} does not match file size {}", bytes.len())));
    }
    let positions = (0..n).map(|_| c.vec3()).collect::<Result<Vec<_>>>()?;
    c.finish()?;
    AnchorSet::new(positions).map_err(|e| Error::parse(path, e.to_string()))
}

pub fn write_anchors(path: &Path, anchors: &AnchorSet) -> Result<()> {
    write_file(path, &encode_anchors(anchors))
}

pub fn read_anchors(path: &Path) -> Result<AnchorSet> {
    decode_anchors(&read_file(path)?, path)
}

/// PFM greyscale: rows are stored bottom to top, negative scale = little endian.
pub fn encode_pfm(map: &DepthMap) -> Vec<u8> {
    let mut out = format!("Pf\n{} {}\n-1.0\n", map.width, map.height).into_bytes();
    out.reserve(4 * map.values.len());
    for y in (0..map.height).rev() {
        for v in &map.values[y * map.width..(y + 1) * map.width] {
            out.extend(v.to_le_bytes());
        }
    }
    out
}

pub fn decode_pfm(bytes: &[u8], path: &Path) -> Result<DepthMap> {
    let err = |m: &str| Error::parse(path, m.to_string());
    // Three newline-terminated header lines.
    let mut fields = Vec::new();
    let mut pos = 0;
    for _ in 0..3 {
        let nl = bytes[pos..].iter().position(|&b| b == b'\n').ok_or_else(|| err("truncated PFM header"))?;
        let line = std::str::from_utf8(&bytes[pos..pos + nl]).map_err(|_| err("PFM header is not text"))?;
        fields.push(line.trim().to_string());
        pos += nl + 1;
    }
    if fields[0] != "Pf" {
        return Err(err("only greyscale PFM ('Pf') is supported"));
    }
    let dims: Vec<usize> = fields[1].split_whitespace().filter_map(|t| t.parse().ok()).collect();
    let [w, h] = dims[..] else { return Err(err("bad PFM dimensions")) };
    let scale: f64 = fields[2].parse().map_err(|_| err("bad PFM scale"))?;
    let little = scale < 0.0;
    let body = &bytes[pos..];
    if body.len() != 4 * w * h {
        return Err(Error::parse(path, format!("PFM body has {} bytes, expected {}", body.len(), 4 * w * h)));
    }
    let mut values = vec![0.0f32; w * h];
    for (i, chunk) in body.chunks_exact(4).enumerate() {
        let b: [u8; 4] = chunk.try_into().unwrap();
        let v = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        let (x, y_up) = (i % w, i / w);
        values[(h - 1 - y_up) * w + x] = v;
    }
    Ok(DepthMap::from_values(w, h, values))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawMapHeader {
    pub width: usize,
    pub height: usize,
}

fn raw_sidecar(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

/// `.pfm` files use PFM; anything else is raw row-major f32 with a
/// `<name>.json` sidecar holding the dimensions.
pub fn write_float_map(path: &Path, map: &DepthMap) -> Result<()> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("pfm")) {
        return write_file(path, &encode_pfm(map));
    }
    let bytes: Vec<u8> = map.values.iter().flat_map(|v| v.to_le_bytes()).collect();
    write_file(path, &bytes)?;
    let header = RawMapHeader { width: map.width, height: map.height };
    let json = serde_json::to_string_pretty(&header).expect("header serializes");
    write_file(&raw_sidecar(path), json.as_bytes())
}

pub fn read_float_map(path: &Path) -> Result<DepthMap> {
    let bytes = read_file(path)?;
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("pfm")) {
        return decode_pfm(&bytes, path);
    }
    let side = raw_sidecar(path);
    let header: RawMapHeader =
        serde_json::from_slice(&read_file(&side)?).map_err(|e| Error::parse(&side, e.to_string()))?;
    if bytes.len() != 4 * header.width * header.height {
        return Err(Error::parse(path, format!("{} bytes for a {}x{} map", bytes.len(), header.width, header.height)));
    }
    let values = bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(DepthMap::from_values(header.width, header.height, values))
}

pub fn write_cull_mask(path: &Path, mask: &CullMask) -> Result<()> {
    write_file(path, &mask.to_bytes())
}

pub fn decode_cull_mask(bytes: &[u8], path: &Path) -> Result<CullMask> {
    let verdicts = bytes
        .iter()
        .enumerate()
        .map(|(i, &b)| Verdict::from_u8(b).ok_or_else(|| Error::parse(path, format!("byte {i}: unknown verdict {b}"))))
        .collect::<Result<Vec<_>>>()?;
    Ok(CullMask::from_verdicts(verdicts))
}

pub fn read_cull_mask(path: &Path) -> Result<CullMask> {
    decode_cull_mask(&read_file(path)?, path)
}

/// Plan positions as packed little-endian `3 x f32`.
pub fn encode_points_f32(points: &[Vec3]) -> Vec<u8> {
    points.iter().flat_map(|p| [p.x as f32, p.y as f32, p.z as f32]).flat_map(f32::to_le_bytes).collect()
}

pub fn decode_points_f32(bytes: &[u8], path: &Path) -> Result<Vec<Vec3>> {
    if !bytes.len().is_multiple_of(12) {
        return Err(Error::parse(path, format!("{} bytes is not a multiple of 12", bytes.len())));
    }
    Ok(bytes
        .chunks_exact(12)
        .map(|c| {
            let f = |k: usize| f32::from_le_bytes(c[4 * k..4 * k + 4].try_into().unwrap()) as f64;
            Vec3::new(f(0), f(1), f(2))
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pfm_rows_are_flipped() {
        let m = DepthMap::from_values(2, 2, vec![0.1, 0.2, 0.3, 0.4]);
        let bytes = encode_pfm(&m);
        let header = b"Pf\n2 2\n-1.0\n".len();
        assert_eq!(&bytes[header..header + 4], &0.3f32.to_le_bytes());
        assert_eq!(decode_pfm(&bytes, Path::new("m.pfm")).unwrap(), m);
    }

    #[test]
    fn cluster_sidecar_rejects_corruption() {
        let c = Cluster { triangle_indices: vec![0, 2], aabb_min: Vec3::ZERO, aabb_max: Vec3::splat(1.0) };
        let bytes = encode_clusters(std::slice::from_ref(&c), 3);
        assert_eq!(&bytes[..4], b"PXCL");
        let p = Path::new("c.bin");
        assert_eq!(decode_clusters(&bytes, p).unwrap(), (vec![c.clone()], 3));
        assert!(decode_clusters(&bytes[..bytes.len() - 1], p).is_err());
        assert!(decode_clusters(&encode_clusters(&[c], 2), p).is_err());
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(decode_clusters(&bad, p).unwrap_err().to_string().contains("version"));
    }

    #[test]
    fn unknown_verdict_byte() {
        assert!(decode_cull_mask(&[0, 1, 7], Path::new("m")).is_err());
    }
}
