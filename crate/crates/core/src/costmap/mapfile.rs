//! PGM (P5) images with a YAML sidecar, the usual 2D map-file pair.

use std::path::Path;

use super::{OccupancyGrid, FREE, OCCUPIED, UNKNOWN};
use crate::error::{Error, Result};

const PIXEL_OCCUPIED: u8 = 0;
const PIXEL_FREE: u8 = 254;
const PIXEL_UNKNOWN: u8 = 205;

#[derive(Debug, Clone, PartialEq)]
pub struct MapMetadata {
    pub image: String,
    pub resolution: f64,
    pub origin: [f64; 3],
    pub occupied_thresh: f64,
    pub free_thresh: f64,
    pub negate: bool,
}

impl MapMetadata {
    pub fn for_grid(grid: &OccupancyGrid, image: impl Into<String>) -> Self {
        Self {
            image: image.into(),
            resolution: grid.resolution(),
            origin: grid.origin(),
            occupied_thresh: 0.65,
            free_thresh: 0.196,
            negate: false,
        }
    }
}

/// Image rows run top to bottom, so grid row `height - 1` comes first.
pub fn write_pgm(grid: &OccupancyGrid) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", grid.width(), grid.height()).into_bytes();
    for iy in (0..grid.height()).rev() {
        for ix in 0..grid.width() {
            out.push(match grid.get(ix, iy).unwrap() {
                OCCUPIED => PIXEL_OCCUPIED,
                FREE => PIXEL_FREE,
                _ => PIXEL_UNKNOWN,
            });
        }
    }
    out
}

pub fn write_map_yaml(meta: &MapMetadata) -> String {
    format!(
        "image: {}\nresolution: {}\norigin: [{}, {}, {}]\noccupied_thresh: {}\nfree_thresh: {}\nnegate: {}\n",
        meta.image,
        meta.resolution,
        meta.origin[0],
        meta.origin[1],
        meta.origin[2],
        meta.occupied_thresh,
        meta.free_thresh,
        u8::from(meta.negate)
    )
}

fn pgm_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
        } else {
            break;
        }
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    (start < *pos).then(|| &bytes[start..*pos])
}

/// Decodes a binary PGM into grid cells using the thresholds of `meta`.
/// Pixel value v has occupancy probability (255 − v)/255, or v/255 when
/// negated.
pub fn read_pgm(bytes: &[u8], meta: &MapMetadata, origin: &str) -> Result<OccupancyGrid> {
    let mut pos = 0;
    let bad = |m: &str| Error::parse(origin, 1, m.to_string());
    if pgm_token(bytes, &mut pos) != Some(b"P5") {
        return Err(bad("not a binary PGM (P5)"));
    }
    let mut number = |what: &str| -> Result<usize> {
        pgm_token(bytes, &mut pos)
            .and_then(|t| std::str::from_utf8(t).ok()?.parse().ok())
            .ok_or_else(|| bad(&format!("bad {what}")))
    };
    let width = number("width")?;
    let height = number("height")?;
    let maxval = number("maxval")?;
    if maxval == 0 || maxval > 255 {
        return Err(bad("maxval must be in 1..=255"));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let raster = bytes.get(pos..).unwrap_or_default();
    if raster.len() < width * height {
        return Err(bad("truncated raster"));
    }
    let mut cells = vec![UNKNOWN; width * height];
    for row in 0..height {
        let iy = height - 1 - row;
        for ix in 0..width {
            let v = raster[row * width + ix] as f64 / maxval as f64;
            let p = if meta.negate { v } else { 1.0 - v };
            cells[iy * width + ix] = if p > meta.occupied_thresh {
                OCCUPIED
            } else if p < meta.free_thresh {
                FREE
            } else {
                UNKNOWN
            };
        }
    }
    OccupancyGrid::from_cells(meta.resolution, meta.origin, width, height, cells)
}

/// Parses the flat `key: value` sidecar.
pub fn read_map_yaml(text: &str, origin: &str) -> Result<MapMetadata> {
    let mut image = None;
    let mut resolution = None;
    let mut map_origin = None;
    let mut occupied_thresh = 0.65;
    let mut free_thresh = 0.196;
    let mut negate = false;
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |m: String| Error::parse(origin, n + 1, m);
        let (key, value) = line.split_once(':').ok_or_else(|| err("expected key: value".into()))?;
        let value = value.trim();
        let float = |v: &str| v.trim().parse::<f64>().map_err(|_| err(format!("bad number {v:?}")));
        match key.trim() {
            "image" => image = Some(value.trim_matches(|c| c == '"' || c == '\'').to_string()),
            "resolution" => resolution = Some(float(value)?),
            "origin" => {
                let inner = value
                    .strip_prefix('[')
                    .and_then(|v| v.strip_suffix(']'))
                    .ok_or_else(|| err("origin must be [x, y, yaw]".into()))?;
                let parts = inner.split(',').map(float).collect::<Result<Vec<_>>>()?;
                let parts: [f64; 3] = parts.try_into().map_err(|_| err("origin must have three values".into()))?;
                map_origin = Some(parts);
            }
            "occupied_thresh" => occupied_thresh = float(value)?,
            "free_thresh" => free_thresh = float(value)?,
            "negate" => negate = float(value)? != 0.0,
            // Extra keys (mode, for instance) do not affect the trinary decoding.
            _ => {}
        }
    }
    let missing = |k: &str| Error::parse(origin, 0, format!("missing key {k}"));
    Ok(MapMetadata {
        image: image.ok_or_else(|| missing("image"))?,
        resolution: resolution.ok_or_else(|| missing("resolution"))?,
        origin: map_origin.ok_or_else(|| missing("origin"))?,
        occupied_thresh,
        free_thresh,
        negate,
    })
}

/// Writes `<stem>.pgm` and `<stem>.yaml` for `yaml_path` = `<stem>.yaml`.
pub fn save_map(grid: &OccupancyGrid, yaml_path: impl AsRef<Path>) -> Result<()> {
    let yaml_path = yaml_path.as_ref();
    let pgm_path = yaml_path.with_extension("pgm");
    let image = pgm_path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::invalid(format!("bad map path {}", yaml_path.display())))?
        .to_string();
    if let Some(dir) = yaml_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(&pgm_path, write_pgm(grid)).map_err(|e| Error::io(&pgm_path, e))?;
    let yaml = write_map_yaml(&MapMetadata::for_grid(grid, image));
    std::fs::write(yaml_path, yaml).map_err(|e| Error::io(yaml_path, e))
}

/// Loads a map from its YAML sidecar; the image path is relative to it.
pub fn load_map(yaml_path: impl AsRef<Path>) -> Result<OccupancyGrid> {
    let yaml_path = yaml_path.as_ref();
    let text = std::fs::read_to_string(yaml_path).map_err(|e| Error::io(yaml_path, e))?;
    let meta = read_map_yaml(&text, &yaml_path.display().to_string())?;
    let image = yaml_path.parent().unwrap_or(Path::new("")).join(&meta.image);
    let bytes = std::fs::read(&image).map_err(|e| Error::io(&image, e))?;
    read_pgm(&bytes, &meta, &image.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> OccupancyGrid {
        OccupancyGrid::from_cells(0.05, [-1.25, 0.5, 0.0], 3, 2, vec![OCCUPIED, FREE, UNKNOWN, FREE, FREE, OCCUPIED]).unwrap()
    }

    #[test]
    fn pgm_bytes_are_exact() {
        let bytes = write_pgm(&grid());
        let mut expect = b"P5\n3 2\n255\n".to_vec();
        // Top image row is the last grid row.
        expect.extend([254, 254, 0, 0, 254, 205]);
        assert_eq!(bytes, expect);
    }

    #[test]
    fn yaml_text_is_exact() {
        let text = write_map_yaml(&MapMetadata::for_grid(&grid(), "map.pgm"));
        assert_eq!(
            text,
            "image: map.pgm\nresolution: 0.05\norigin: [-1.25, 0.5, 0]\noccupied_thresh: 0.65\nfree_thresh: 0.196\nnegate: 0\n"
        );
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("maps/objects.yaml");
        save_map(&grid(), &path).unwrap();
        assert!(dir.path().join("maps/objects.pgm").exists());
        assert_eq!(load_map(&path).unwrap(), grid());
    }

    #[test]
    fn foreign_maps_decode_by_threshold() {
        let meta = read_map_yaml("image: m.pgm\nmode: trinary\nresolution: 0.1\norigin: [0.0, 0.0, 0.0]\nnegate: 0\n", "m.yaml").unwrap();
        let bytes = b"P5\n# comment\n4 1\n255\n\x00\x50\xcd\xfe";
        let g = read_pgm(bytes, &meta, "m.pgm").unwrap();
        assert_eq!(g.cells(), &[OCCUPIED, OCCUPIED, UNKNOWN, FREE]);
        assert!(read_pgm(b"P2\n1 1\n255\n0", &meta, "m.pgm").is_err());
        assert!(read_pgm(b"P5\n4 1\n255\n\x00", &meta, "m.pgm").is_err());
        assert!(read_map_yaml("image: m.pgm\n", "m.yaml").is_err());
    }
}
