//! Point-cloud files: whitespace-separated ASCII `.xyz` and the little-endian
//! `.pcb` binary (`"PCB1"`, `u32` count, `count * 3` `f32`).

use std::path::Path;

use crate::error::{Error, Result};
use crate::geom::{Point3, PointCloud};
use crate::io_util::write_atomic;

pub const PCB_MAGIC: &[u8; 4] = b"PCB1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudFormat {
    XyzAscii,
    PcbBinary,
}

impl CloudFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("xyz") => Ok(CloudFormat::XyzAscii),
            Some("pcb") => Ok(CloudFormat::PcbBinary),
            _ => Err(Error::invalid(format!(
                "{}: unknown cloud format (expected .xyz or .pcb)",
                path.display()
            ))),
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            CloudFormat::XyzAscii => "xyz",
            CloudFormat::PcbBinary => "pcb",
        }
    }
}

pub fn is_cloud_file(path: &Path) -> bool {
    CloudFormat::from_path(path).is_ok()
}

pub fn encode_cloud(cloud: &PointCloud, format: CloudFormat) -> Vec<u8> {
    match format {
        CloudFormat::XyzAscii => {
            let mut s = String::with_capacity(cloud.len() * 48);
            for p in cloud {
                s.push_str(&format!("{:.8e} {:.8e} {:.8e}\n", p.x, p.y, p.z));
            }
            s.into_bytes()
        }
        CloudFormat::PcbBinary => {
            let mut out = Vec::with_capacity(8 + cloud.len() * 12);
            out.extend_from_slice(PCB_MAGIC);
            out.extend_from_slice(&(cloud.len() as u32).to_le_bytes());
            for p in cloud {
                for v in [p.x, p.y, p.z] {
                    out.extend_from_slice(&(v as f32).to_le_bytes());
                }
            }
            out
        }
    }
}

pub fn decode_cloud(bytes: &[u8], format: CloudFormat, path: &Path) -> Result<PointCloud> {
    match format {
        CloudFormat::XyzAscii => decode_xyz(bytes, path),
        CloudFormat::PcbBinary => decode_pcb(bytes, path),
    }
}

fn decode_xyz(bytes: &[u8], path: &Path) -> Result<PointCloud> {
    let perr = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let text = std::str::from_utf8(bytes).map_err(|e| perr(0, format!("not UTF-8: {e}")))?;
    let mut pts = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut coords = [0.0f64; 3];
        let mut toks = line.split_whitespace();
        for c in coords.iter_mut() {
            let t = toks
                .next()
                .ok_or_else(|| perr(i + 1, "expected three coordinates".into()))?;
            *c = t
                .parse()
                .map_err(|_| perr(i + 1, format!("non-numeric token {t:?}")))?;
        }
        if toks.next().is_some() {
            return Err(perr(i + 1, "more than three coordinates".into()));
        }
        let p = Point3::new(coords[0], coords[1], coords[2]);
        if !p.is_finite() {
            return Err(perr(i + 1, "non-finite coordinate".into()));
        }
        pts.push(p);
    }
    if pts.is_empty() {
        return Err(perr(0, "file contains no points".into()));
    }
    PointCloud::new(pts)
}

fn decode_pcb(bytes: &[u8], path: &Path) -> Result<PointCloud> {
    let ferr = |offset: usize, msg: String| Error::Format {
        path: path.to_path_buf(),
        offset: offset as u64,
        msg,
    };
    if bytes.len() < 4 || &bytes[..4] != PCB_MAGIC {
        return Err(ferr(0, "bad magic (expected PCB1)".into()));
    }
    if bytes.len() < 8 {
        return Err(ferr(bytes.len(), "truncated header".into()));
    }
    let count = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    if count == 0 {
        return Err(ferr(4, "file contains no points".into()));
    }
    let need = 8 + count * 12;
    if bytes.len() < need {
        return Err(ferr(bytes.len(), format!("short file: {count} points need {need} bytes")));
    }
    if bytes.len() > need {
        return Err(ferr(need, "trailing bytes after payload".into()));
    }
    let mut pts = Vec::with_capacity(count);
    for (i, chunk) in bytes[8..].chunks_exact(12).enumerate() {
        let f = |o: usize| f32::from_le_bytes(chunk[o..o + 4].try_into().expect("4 bytes")) as f64;
        let p = Point3::new(f(0), f(4), f(8));
        if !p.is_finite() {
            return Err(ferr(8 + i * 12, "non-finite coordinate".into()));
        }
        pts.push(p);
    }
    PointCloud::new(pts)
}

pub fn read_cloud(path: &Path) -> Result<PointCloud> {
    let format = CloudFormat::from_path(path)?;
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let cloud = decode_cloud(&bytes, format, path)?;
    let stem = path.file_stem().and_then(|s| s.to_str()).map(str::to_owned);
    Ok(match stem {
        Some(s) => cloud.with_source(s),
        None => cloud,
    })
}

pub fn write_cloud(path: &Path, cloud: &PointCloud) -> Result<()> {
    let format = CloudFormat::from_path(path)?;
    write_atomic(path, &encode_cloud(cloud, format))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> PointCloud {
        PointCloud::new(vec![
            Point3::new(0.1, -0.25, 1.0 / 3.0),
            Point3::new(1.5e-7, 2.0, -0.999_999_9),
        ])
        .unwrap()
    }

    #[test]
    fn binary_round_trip_is_f32_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.pcb");
        let c = sample();
        write_cloud(&path, &c).unwrap();
        let back = read_cloud(&path).unwrap();
        for (a, b) in c.iter().zip(back.iter()) {
            for ax in 0..3 {
                assert_eq!((a.coord(ax) as f32).to_bits(), (b.coord(ax) as f32).to_bits());
                assert_eq!(b.coord(ax), a.coord(ax) as f32 as f64);
            }
        }
        let again = encode_cloud(&back, CloudFormat::PcbBinary);
        assert_eq!(again, std::fs::read(&path).unwrap());
    }

    #[test]
    fn ascii_round_trip_at_nine_digits() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.xyz");
        let c = sample();
        write_cloud(&path, &c).unwrap();
        let back = read_cloud(&path).unwrap();
        for (a, b) in c.iter().zip(back.iter()) {
            for ax in 0..3 {
                let (x, y) = (a.coord(ax), b.coord(ax));
                assert_eq!(format!("{x:.8e}"), format!("{y:.8e}"));
            }
        }
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.ends_with('\n') && !text.contains('\r'));
    }

    #[test]
    fn malformed_files_are_rejected() {
        let p = Path::new("x.pcb");
        assert!(matches!(
            decode_cloud(b"PCB2\x01\0\0\0", CloudFormat::PcbBinary, p),
            Err(Error::Format { offset: 0, .. })
        ));
        assert!(matches!(
            decode_cloud(b"PCB1\0\0\0\0", CloudFormat::PcbBinary, p),
            Err(Error::Format { .. })
        ));
        let mut short = b"PCB1\x02\0\0\0".to_vec();
        short.extend_from_slice(&[0u8; 12]);
        assert!(matches!(
            decode_cloud(&short, CloudFormat::PcbBinary, p),
            Err(Error::Format { offset: 20, .. })
        ));
        let q = Path::new("x.xyz");
        assert!(matches!(
            decode_cloud(b"1 2 3\n4 five 6\n", CloudFormat::XyzAscii, q),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(decode_cloud(b"", CloudFormat::XyzAscii, q).is_err());
        assert!(decode_cloud(b"1 2\n", CloudFormat::XyzAscii, q).is_err());
    }
}
