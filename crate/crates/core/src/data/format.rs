use std::path::Path;

use crate::error::{invalid, parse_error, Result};
use crate::geometry::{Point3, PointCloud};
use crate::scalar::Real;

pub const PCF_MAGIC: &[u8; 4] = b"PCF1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CloudFormat {
    Xyz,
    Pcf,
}

impl CloudFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("xyz") => Ok(Self::Xyz),
            Some("pcf") => Ok(Self::Pcf),
            _ => Err(invalid(format!(
                "{}: unsupported extension (expected .xyz or .pcf)",
                path.display()
            ))),
        }
    }
}

/// One `x y z` line per point, written with round-trip precision.
pub fn to_xyz<T: Real>(pc: &PointCloud<T>) -> String {
    let mut out = String::with_capacity(pc.len() * 32);
    for p in pc.points() {
        let [x, y, z] = p.map(|c| c.to_f64_lossy());
        out.push_str(&format!("{x} {y} {z}\n"));
    }
    out
}

/// Parses `.xyz` text. Blank lines are skipped; errors report the byte
/// offset of the offending line.
pub fn parse_xyz<T: Real>(text: &str) -> Result<PointCloud<T>> {
    let mut points = Vec::new();
    let mut offset = 0usize;
    for line in text.split_inclusive('\n') {
        let start = offset;
        offset += line.len();
        let body = line.trim();
        if body.is_empty() {
            continue;
        }
        let fields: Vec<&str> = body.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(parse_error(start as u64, format!("expected 3 coordinates, found {}", fields.len())));
        }
        let mut p: Point3<T> = [T::zero(); 3];
        for (d, f) in fields.iter().enumerate() {
            let v: f64 = f
                .parse()
                .map_err(|_| parse_error(start as u64, format!("`{f}` is not a number")))?;
            if !v.is_finite() {
                return Err(parse_error(start as u64, format!("non-finite coordinate `{f}`")));
            }
            p[d] = T::lit(v);
        }
        points.push(p);
    }
    PointCloud::new(points)
}

pub fn to_pcf<T: Real>(pc: &PointCloud<T>) -> Result<Vec<u8>> {
    let count = u32::try_from(pc.len()).map_err(|_| invalid("pcf: more than u32::MAX points"))?;
    let mut out = Vec::with_capacity(8 + 12 * pc.len());
    out.extend_from_slice(PCF_MAGIC);
    out.extend_from_slice(&count.to_le_bytes());
    for p in pc.points() {
        for c in p {
            out.extend_from_slice(&c.to_f32_lossy().to_le_bytes());
        }
    }
    Ok(out)
}

pub fn parse_pcf<T: Real>(bytes: &[u8]) -> Result<PointCloud<T>> {
    if bytes.len() < 4 || &bytes[..4] != PCF_MAGIC {
        return Err(parse_error(0, "missing PCF1 magic"));
    }
    if bytes.len() < 8 {
        return Err(parse_error(bytes.len() as u64, "truncated header: expected a 4-byte point count"));
    }
    let count = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let needed = 8 + 12 * count;
    if bytes.len() < needed {
        return Err(parse_error(
            bytes.len() as u64,
            format!("truncated payload: header declares {count} points ({needed} bytes), file ends early"),
        ));
    }
    if bytes.len() > needed {
        return Err(parse_error(needed as u64, format!("{} trailing bytes after {count} points", bytes.len() - needed)));
    }
    let mut points = Vec::with_capacity(count);
    for i in 0..count {
        let mut p: Point3<T> = [T::zero(); 3];
        for (d, slot) in p.iter_mut().enumerate() {
            let at = 8 + 12 * i + 4 * d;
            let v = f32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"));
            if !v.is_finite() {
                return Err(parse_error(at as u64, format!("non-finite coordinate {v}")));
            }
            *slot = T::lit(f64::from(v));
        }
        points.push(p);
    }
    PointCloud::new(points)
}

pub fn read_cloud<T: Real>(path: impl AsRef<Path>) -> Result<PointCloud<T>> {
    let path = path.as_ref();
    match CloudFormat::from_path(path)? {
        CloudFormat::Xyz => parse_xyz(&std::fs::read_to_string(path)?),
        CloudFormat::Pcf => parse_pcf(&std::fs::read(path)?),
    }
}

pub fn write_cloud<T: Real>(pc: &PointCloud<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    match CloudFormat::from_path(path)? {
        CloudFormat::Xyz => std::fs::write(path, to_xyz(pc))?,
        CloudFormat::Pcf => std::fs::write(path, to_pcf(pc)?)?,
    }
    Ok(())
}
