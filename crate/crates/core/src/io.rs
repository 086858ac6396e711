//! File formats: the OCRA binary tensor format (little-endian header +
//! row-major payload), ASCII PLY for labeled point clouds, 8-bit PGM for
//! tactile images, and the named-section checkpoint container.
//!
//! Header layout: magic `OCRA`, u32 kind, u32 H, u32 W. Payload is f32 for
//! depth/flow/force tensors and u8 for masks. Floating point state is f64 in
//! memory; the f32 payload is the interchange precision.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::{DepthMap, Mask, PointCloud};
use crate::tactile::{FlowField, ForceField, GrayImage};

pub const MAGIC: &[u8; 4] = b"OCRA";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorKind {
    Depth = 1,
    Mask = 2,
    Flow = 3,
    Force = 4,
    Gray = 5,
}

impl TensorKind {
    fn from_u32(v: u32) -> Result<Self> {
        Ok(match v {
            1 => TensorKind::Depth,
            2 => TensorKind::Mask,
            3 => TensorKind::Flow,
            4 => TensorKind::Force,
            5 => TensorKind::Gray,
            other => return Err(Error::format("ocra tensor", format!("unknown kind {other}"))),
        })
    }

    /// f32 channels per pixel; 0 means a u8 payload.
    pub fn channels(self) -> usize {
        match self {
            TensorKind::Depth | TensorKind::Gray => 1,
            TensorKind::Mask => 0,
            TensorKind::Flow => 2,
            TensorKind::Force => 3,
        }
    }
}

fn write_header(w: &mut impl Write, kind: TensorKind, height: usize, width: usize) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(kind as u32).to_le_bytes())?;
    w.write_all(&(height as u32).to_le_bytes())?;
    w.write_all(&(width as u32).to_le_bytes())?;
    Ok(())
}

fn read_header(r: &mut impl Read) -> Result<(TensorKind, usize, usize)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::format("ocra tensor", "bad magic"));
    }
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    let kind = TensorKind::from_u32(u32::from_le_bytes(buf))?;
    r.read_exact(&mut buf)?;
    let h = u32::from_le_bytes(buf) as usize;
    r.read_exact(&mut buf)?;
    let w = u32::from_le_bytes(buf) as usize;
    Ok((kind, h, w))
}

fn write_f32_payload(w: &mut impl Write, values: impl Iterator<Item = f64>) -> Result<()> {
    for v in values {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    Ok(())
}

fn read_f32_payload(r: &mut impl Read, count: usize) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; count * 4];
    r.read_exact(&mut bytes)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

pub fn write_depth(path: &Path, depth: &DepthMap) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_header(&mut w, TensorKind::Depth, depth.height, depth.width)?;
    write_f32_payload(&mut w, depth.values.iter().copied())?;
    Ok(())
}

pub fn read_depth(path: &Path) -> Result<DepthMap> {
    let mut r = BufReader::new(File::open(path)?);
    let (kind, height, width) = read_header(&mut r)?;
    if kind != TensorKind::Depth {
        return Err(Error::format("depth map", "wrong tensor kind"));
    }
    let values = read_f32_payload(&mut r, width * height)?;
    Ok(DepthMap {
        values,
        width,
        height,
    })
}

pub fn write_mask(path: &Path, mask: &Mask) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_header(&mut w, TensorKind::Mask, mask.height, mask.width)?;
    let bytes: Vec<u8> = mask.bits.iter().map(|&b| b as u8).collect();
    w.write_all(&bytes)?;
    Ok(())
}

pub fn read_mask(path: &Path) -> Result<Mask> {
    let mut r = BufReader::new(File::open(path)?);
    let (kind, height, width) = read_header(&mut r)?;
    if kind != TensorKind::Mask {
        return Err(Error::format("mask", "wrong tensor kind"));
    }
    let mut bytes = vec![0u8; width * height];
    r.read_exact(&mut bytes)?;
    Ok(Mask {
        bits: bytes.into_iter().map(|b| b != 0).collect(),
        width,
        height,
    })
}

pub fn write_flow(path: &Path, flow: &FlowField) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_header(&mut w, TensorKind::Flow, flow.height, flow.width)?;
    write_f32_payload(&mut w, flow.vectors.iter().flat_map(|v| [v[0], v[1]]))?;
    Ok(())
}

pub fn read_flow(path: &Path) -> Result<FlowField> {
    let mut r = BufReader::new(File::open(path)?);
    let (kind, height, width) = read_header(&mut r)?;
    if kind != TensorKind::Flow {
        return Err(Error::format("flow field", "wrong tensor kind"));
    }
    let raw = read_f32_payload(&mut r, width * height * 2)?;
    let vectors = raw.chunks_exact(2).map(|c| [c[0], c[1]]).collect();
    Ok(FlowField {
        vectors,
        width,
        height,
    })
}

pub fn write_force(path: &Path, force: &ForceField) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_header(&mut w, TensorKind::Force, force.height, force.width)?;
    write_f32_payload(&mut w, force.vectors.iter().flat_map(|v| [v[0], v[1], v[2]]))?;
    Ok(())
}

pub fn read_force(path: &Path) -> Result<ForceField> {
    let mut r = BufReader::new(File::open(path)?);
    let (kind, height, width) = read_header(&mut r)?;
    if kind != TensorKind::Force {
        return Err(Error::format("force field", "wrong tensor kind"));
    }
    let raw = read_f32_payload(&mut r, width * height * 3)?;
    let vectors = raw.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
    Ok(ForceField {
        vectors,
        width,
        height,
    })
}

/// ASCII PLY with `property uchar label` per vertex.
pub fn write_ply(path: &Path, cloud: &PointCloud) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "ply")?;
    writeln!(w, "format ascii 1.0")?;
    writeln!(w, "element vertex {}", cloud.len())?;
    writeln!(w, "property double x")?;
    writeln!(w, "property double y")?;
    writeln!(w, "property double z")?;
    writeln!(w, "property uchar label")?;
    writeln!(w, "end_header")?;
    for (p, l) in cloud.points.iter().zip(&cloud.labels) {
        writeln!(w, "{:.17e} {:.17e} {:.17e} {}", p.x, p.y, p.z, l)?;
    }
    Ok(())
}

pub fn read_ply(path: &Path) -> Result<PointCloud> {
    let r = BufReader::new(File::open(path)?);
    let mut lines = r.lines();
    let mut vertex_count: Option<usize> = None;
    for line in lines.by_ref() {
        let line = line?;
        let line = line.trim();
        if let Some(rest) = line.strip_prefix("element vertex ") {
            vertex_count = Some(
                rest.parse()
                    .map_err(|_| Error::format("ply", "bad vertex count"))?,
            );
        }
        if line == "end_header" {
            break;
        }
    }
    let count = vertex_count.ok_or_else(|| Error::format("ply", "missing vertex element"))?;
    let mut points = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    for _ in 0..count {
        let line = lines
            .next()
            .ok_or_else(|| Error::format("ply", "truncated vertex list"))??;
        let mut it = line.split_whitespace();
        let mut coord = [0.0f64; 3];
        for c in &mut coord {
            *c = it
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::format("ply", "bad vertex line"))?;
        }
        let label: u8 = it
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format("ply", "missing label"))?;
        points.push(Vector3::new(coord[0], coord[1], coord[2]));
        labels.push(label);
    }
    Ok(PointCloud::new(points, labels))
}

/// 8-bit binary PGM (P5), pixel = round(value * 255).
pub fn write_pgm(path: &Path, img: &GrayImage) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "P5\n{} {}\n255\n", img.width, img.height)?;
    let bytes: Vec<u8> = img
        .pixels
        .iter()
        .map(|&p| (p.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    w.write_all(&bytes)?;
    Ok(())
}

pub fn read_pgm(path: &Path) -> Result<GrayImage> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    // header: P5 <w> <h> <max>\n, whitespace separated
    let mut pos = 0;
    let mut fields = Vec::new();
    while fields.len() < 4 && pos < bytes.len() {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        fields.push(
            std::str::from_utf8(&bytes[start..pos])
                .map_err(|_| Error::format("pgm", "non-ascii header"))?
                .to_string(),
        );
    }
    if fields.len() != 4 || fields[0] != "P5" {
        return Err(Error::format("pgm", "expected binary P5 header"));
    }
    let width: usize = fields[1].parse().map_err(|_| Error::format("pgm", "bad width"))?;
    let height: usize = fields[2].parse().map_err(|_| Error::format("pgm", "bad height"))?;
    pos += 1; // single whitespace after maxval
    let data = &bytes[pos..];
    if data.len() < width * height {
        return Err(Error::format("pgm", "truncated payload"));
    }
    Ok(GrayImage {
        pixels: data[..width * height]
            .iter()
            .map(|&b| b as f64 / 255.0)
            .collect(),
        width,
        height,
    })
}

/// Named-section binary container used for policy checkpoints. Sections are
/// ordered; each holds either an f64 vector or raw bytes (config JSON).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorContainer {
    pub sections: Vec<(String, Section)>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Section {
    F64(Vec<f64>),
    Bytes(Vec<u8>),
}

const CONTAINER_KIND: u32 = 100;

impl TensorContainer {
    pub fn push_f64(&mut self, name: &str, values: Vec<f64>) {
        self.sections.push((name.to_string(), Section::F64(values)));
    }

    pub fn push_bytes(&mut self, name: &str, bytes: Vec<u8>) {
        self.sections.push((name.to_string(), Section::Bytes(bytes)));
    }

    pub fn f64(&self, name: &str) -> Result<&[f64]> {
        match self.get(name)? {
            Section::F64(v) => Ok(v),
            Section::Bytes(_) => Err(Error::format("checkpoint", format!("section {name} is bytes"))),
        }
    }

    pub fn bytes(&self, name: &str) -> Result<&[u8]> {
        match self.get(name)? {
            Section::Bytes(v) => Ok(v),
            Section::F64(_) => Err(Error::format("checkpoint", format!("section {name} is f64"))),
        }
    }

    fn get(&self, name: &str) -> Result<&Section> {
        self.sections
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, s)| s)
            .ok_or_else(|| Error::format("checkpoint", format!("missing section {name}")))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_all(&CONTAINER_KIND.to_le_bytes())?;
        w.write_all(&(self.sections.len() as u32).to_le_bytes())?;
        for (name, section) in &self.sections {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            match section {
                Section::F64(values) => {
                    w.write_all(&1u32.to_le_bytes())?;
                    w.write_all(&(values.len() as u64).to_le_bytes())?;
                    for v in values {
                        w.write_all(&v.to_le_bytes())?;
                    }
                }
                Section::Bytes(bytes) => {
                    w.write_all(&2u32.to_le_bytes())?;
                    w.write_all(&(bytes.len() as u64).to_le_bytes())?;
                    w.write_all(bytes)?;
                }
            }
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<TensorContainer> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::format("checkpoint", "bad magic"));
        }
        let mut u32buf = [0u8; 4];
        r.read_exact(&mut u32buf)?;
        if u32::from_le_bytes(u32buf) != CONTAINER_KIND {
            return Err(Error::format("checkpoint", "not a container file"));
        }
        r.read_exact(&mut u32buf)?;
        let n_sections = u32::from_le_bytes(u32buf) as usize;
        let mut sections = Vec::with_capacity(n_sections);
        for _ in 0..n_sections {
            r.read_exact(&mut u32buf)?;
            let name_len = u32::from_le_bytes(u32buf) as usize;
            let mut name_bytes = vec![0u8; name_len];
            r.read_exact(&mut name_bytes)?;
            let name = String::from_utf8(name_bytes)
                .map_err(|_| Error::format("checkpoint", "non-utf8 section name"))?;
            r.read_exact(&mut u32buf)?;
            let tag = u32::from_le_bytes(u32buf);
            let mut u64buf = [0u8; 8];
            r.read_exact(&mut u64buf)?;
            let len = u64::from_le_bytes(u64buf) as usize;
            let section = match tag {
                1 => {
                    let mut bytes = vec![0u8; len * 8];
                    r.read_exact(&mut bytes)?;
                    Section::F64(
                        bytes
                            .chunks_exact(8)
                            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                            .collect(),
                    )
                }
                2 => {
                    let mut bytes = vec![0u8; len];
                    r.read_exact(&mut bytes)?;
                    Section::Bytes(bytes)
                }
                other => {
                    return Err(Error::format(
                        "checkpoint",
                        format!("unknown section tag {other}"),
                    ))
                }
            };
            sections.push((name, section));
        }
        Ok(TensorContainer { sections })
    }
}

/// Write `bytes` to `path` via a sibling temp file + rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp.partial");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn depth_and_mask_roundtrip() {
        let dir = tempdir().unwrap();
        let mut depth = DepthMap::zeros(6, 4);
        depth.set(2, 1, 1.25);
        depth.set(5, 3, 0.5);
        let p = dir.path().join("d.bin");
        write_depth(&p, &depth).unwrap();
        assert_eq!(read_depth(&p).unwrap(), depth);

        let mut mask = Mask::filled(6, 4, false);
        mask.set(0, 0, true);
        mask.set(5, 3, true);
        let p = dir.path().join("m.bin");
        write_mask(&p, &mask).unwrap();
        assert_eq!(read_mask(&p).unwrap(), mask);
    }

    #[test]
    fn ply_roundtrip_preserves_labels() {
        let dir = tempdir().unwrap();
        let cloud = PointCloud::new(
            vec![
                Vector3::new(0.1, -0.2, 0.3),
                Vector3::new(1.0, 2.0, 3.0),
            ],
            vec![1, 0],
        );
        let p = dir.path().join("c.ply");
        write_ply(&p, &cloud).unwrap();
        let back = read_ply(&p).unwrap();
        assert_eq!(back.labels, cloud.labels);
        for (a, b) in back.points.iter().zip(&cloud.points) {
            assert!((a - b).norm() < 1e-15);
        }
    }

    #[test]
    fn container_roundtrip() {
        let dir = tempdir().unwrap();
        let mut c = TensorContainer::default();
        c.push_f64("weights", vec![1.5, -2.25, 0.0]);
        c.push_bytes("config", b"{\"k\":1}".to_vec());
        let p = dir.path().join("ckpt.bin");
        c.write(&p).unwrap();
        assert_eq!(TensorContainer::read(&p).unwrap(), c);
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("bad.bin");
        std::fs::write(&p, b"NOPE0000000000").unwrap();
        assert!(read_depth(&p).is_err());
    }
}
