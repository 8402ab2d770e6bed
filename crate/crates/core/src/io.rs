//! Point cloud file readers and writers.
//!
//! KITTI velodyne scans are flat arrays of little-endian `f32` quadruples
//! `(x, y, z, intensity)`. The XYZ text format holds one whitespace- or
//! comma-separated point per line; `#` starts a comment.

use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use crate::range_image::Point3;

const KITTI_RECORD: usize = 16;

#[derive(Debug, thiserror::Error)]
pub enum CloudIoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: length {len} is not a multiple of 16 bytes")]
    BadKittiLength { path: PathBuf, len: usize },
    #[error("{path}:{line}: {msg}")]
    BadXyzLine {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("{0}: unrecognized point cloud extension (expected .bin or .xyz)")]
    UnknownFormat(PathBuf),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CloudIoError + '_ {
    move |source| CloudIoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn parse_kitti_bytes(bytes: &[u8]) -> Option<Vec<Point3>> {
    if bytes.len() % KITTI_RECORD != 0 {
        return None;
    }
    Some(
        bytes
            .chunks_exact(KITTI_RECORD)
            .map(|rec| {
                let f = |k: usize| f32::from_le_bytes(rec[4 * k..4 * k + 4].try_into().unwrap());
                Point3::new(f(0) as f64, f(1) as f64, f(2) as f64).with_intensity(f(3))
            })
            .collect(),
    )
}

pub fn kitti_bytes(cloud: &[Point3]) -> Vec<u8> {
    let mut out = Vec::with_capacity(cloud.len() * KITTI_RECORD);
    for p in cloud {
        for v in [p.x as f32, p.y as f32, p.z as f32, p.intensity.unwrap_or(0.0)] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn read_kitti_bin(path: &Path) -> Result<Vec<Point3>, CloudIoError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    parse_kitti_bytes(&bytes).ok_or_else(|| CloudIoError::BadKittiLength {
        path: path.to_path_buf(),
        len: bytes.len(),
    })
}

pub fn write_kitti_bin(path: &Path, cloud: &[Point3]) -> Result<(), CloudIoError> {
    fs::write(path, kitti_bytes(cloud)).map_err(io_err(path))
}

pub fn read_xyz(path: &Path) -> Result<Vec<Point3>, CloudIoError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut cloud = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let bad = |msg: String| CloudIoError::BadXyzLine {
            path: path.to_path_buf(),
            line: n + 1,
            msg,
        };
        let vals = body
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<f64>().map_err(|e| bad(format!("{s:?}: {e}"))))
            .collect::<Result<Vec<_>, _>>()?;
        let p = match vals.as_slice() {
            [x, y, z] => Point3::new(*x, *y, *z),
            [x, y, z, i] => Point3::new(*x, *y, *z).with_intensity(*i as f32),
            _ => return Err(bad(format!("expected 3 or 4 values, got {}", vals.len()))),
        };
        cloud.push(p);
    }
    Ok(cloud)
}

pub fn write_xyz(path: &Path, cloud: &[Point3]) -> Result<(), CloudIoError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = io::BufWriter::new(file);
    for p in cloud {
        writeln!(w, "{} {} {}", p.x, p.y, p.z).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

fn extension(path: &Path) -> Option<String> {
    path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase)
}

/// Reads a `.bin` or `.xyz` cloud based on the file extension.
pub fn read_cloud(path: &Path) -> Result<Vec<Point3>, CloudIoError> {
    match extension(path).as_deref() {
        Some("bin") => read_kitti_bin(path),
        Some("xyz") | Some("txt") => read_xyz(path),
        _ => Err(CloudIoError::UnknownFormat(path.to_path_buf())),
    }
}

pub fn write_cloud(path: &Path, cloud: &[Point3]) -> Result<(), CloudIoError> {
    match extension(path).as_deref() {
        Some("xyz") | Some("txt") => write_xyz(path, cloud),
        _ => write_kitti_bin(path, cloud),
    }
}

/// Cloud files (`.bin`, `.xyz`) directly inside `dir`, sorted by name.
pub fn list_clouds(dir: &Path) -> Result<Vec<PathBuf>, CloudIoError> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        if path.is_file() && matches!(extension(&path).as_deref(), Some("bin" | "xyz")) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}
