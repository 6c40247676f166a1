//! Cloud file I/O: PLY (read/write) and ASCII PCD (read).

mod pcd;
mod ply;

use std::path::Path;

pub use pcd::read_pcd;
pub use ply::{read_ply, write_ply, PlyData, PlyFormat};

use super::PointCloud;
use crate::error::{Error, Result};

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Loads a `.ply` or `.pcd` file. Point order is preserved; labels come from
/// a `class_id` (or `label`) property when present.
pub fn load_cloud(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    let origin = path.display().to_string();
    if bytes.starts_with(b"ply") {
        return Ok(read_ply(&bytes, &origin)?.cloud);
    }
    let text = std::str::from_utf8(&bytes).map_err(|_| Error::parse(&origin, 1, "not a PLY file and not UTF-8 text"))?;
    read_pcd(text, &origin)
}

/// Loads a PLY file including the optional per-point provenance tags and faces.
pub fn load_ply(path: impl AsRef<Path>) -> Result<PlyData> {
    let path = path.as_ref();
    read_ply(&read_bytes(path)?, &path.display().to_string())
}

/// Writes an ASCII PLY file.
pub fn save_cloud(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<()> {
    save_ply(cloud, None, PlyFormat::Ascii, path)
}

/// Writes an ASCII PLY file with an extra `provenance` ushort property.
pub fn save_cloud_with_provenance(cloud: &PointCloud, provenance: &[u16], path: impl AsRef<Path>) -> Result<()> {
    save_ply(cloud, Some(provenance), PlyFormat::Ascii, path)
}

pub fn save_ply(cloud: &PointCloud, provenance: Option<&[u16]>, format: PlyFormat, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = write_ply(cloud, provenance, format)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
