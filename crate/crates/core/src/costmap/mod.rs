//! 2D occupancy costmaps projected from the object layer, merged with an
//! existing grid (a SLAM map, say) and exchanged as PGM + YAML map files.

mod mapfile;

pub use mapfile::{load_map, read_map_yaml, read_pgm, save_map, write_map_yaml, write_pgm, MapMetadata};

use serde::{Deserialize, Serialize};

use crate::augmentation::ObjectLayer;
use crate::cloud::PointCloud;
use crate::error::{Error, Result};

pub const FREE: u8 = 0;
pub const OCCUPIED: u8 = 100;
pub const UNKNOWN: u8 = 255;

/// Row-major grid; cell (ix, iy) covers
/// `[origin.x + ix·res, origin.x + (ix+1)·res) × [origin.y + iy·res, ...)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyGrid {
    resolution: f64,
    /// (x, y, yaw) of the corner of cell (0, 0).
    origin: [f64; 3],
    width: usize,
    height: usize,
    cells: Vec<u8>,
}

impl OccupancyGrid {
    pub fn new(resolution: f64, origin: [f64; 3], width: usize, height: usize, fill: u8) -> Result<Self> {
        Self::from_cells(resolution, origin, width, height, vec![fill; width * height])
    }

    pub fn from_cells(resolution: f64, origin: [f64; 3], width: usize, height: usize, cells: Vec<u8>) -> Result<Self> {
        if !(resolution > 0.0) || !resolution.is_finite() {
            return Err(Error::invalid("grid resolution must be positive"));
        }
        if origin.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("grid origin must be finite"));
        }
        if cells.len() != width * height {
            return Err(Error::invalid(format!("{} cells for a {width}x{height} grid", cells.len())));
        }
        if let Some(v) = cells.iter().find(|&&v| v != FREE && v != OCCUPIED && v != UNKNOWN) {
            return Err(Error::invalid(format!("cell value {v} is not 0, 100 or 255")));
        }
        Ok(Self {
            resolution,
            origin,
            width,
            height,
            cells,
        })
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn origin(&self) -> [f64; 3] {
        self.origin
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn cells(&self) -> &[u8] {
        &self.cells
    }

    pub fn get(&self, ix: usize, iy: usize) -> Option<u8> {
        (ix < self.width && iy < self.height).then(|| self.cells[iy * self.width + ix])
    }

    fn set(&mut self, ix: usize, iy: usize, v: u8) {
        self.cells[iy * self.width + ix] = v;
    }

    /// Cell containing world point (x, y), if inside the grid. Assumes yaw 0.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let fx = ((x - self.origin[0]) / self.resolution).floor();
        let fy = ((y - self.origin[1]) / self.resolution).floor();
        (fx >= 0.0 && fy >= 0.0 && fx < self.width as f64 && fy < self.height as f64).then_some((fx as usize, fy as usize))
    }

    /// Occupied cells as (ix, iy), row-major order.
    pub fn occupied_cells(&self) -> Vec<(usize, usize)> {
        self.cells
            .iter()
            .enumerate()
            .filter(|(_, &v)| v == OCCUPIED)
            .map(|(i, _)| (i % self.width, i / self.width))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProjectionParams {
    pub z_min: f64,
    /// Robot height h.
    pub z_max: f64,
    pub resolution: f64,
    /// Free border around the layer's footprint, meters.
    pub padding: f64,
}

impl Default for ProjectionParams {
    fn default() -> Self {
        Self {
            z_min: 0.1,
            z_max: 1.0,
            resolution: 0.05,
            padding: 0.5,
        }
    }
}

impl ProjectionParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.z_min < self.z_max) || !self.z_min.is_finite() || !self.z_max.is_finite() {
            return Err(Error::invalid("z_min must be below z_max"));
        }
        if !(self.resolution > 0.0) || !self.resolution.is_finite() {
            return Err(Error::invalid("resolution must be positive"));
        }
        if !(self.padding >= 0.0) || !self.padding.is_finite() {
            return Err(Error::invalid("padding must be non-negative"));
        }
        Ok(())
    }
}

/// Explicit grid extent for projection: lower-left corner and size in cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridFrame {
    pub origin: [f64; 2],
    pub width: usize,
    pub height: usize,
}

impl GridFrame {
    /// Frame covering the xy bounds of `clouds` plus `padding`, with the
    /// origin snapped to a multiple of `resolution` so grids built from
    /// different layers share one lattice.
    pub fn covering<'a>(clouds: impl IntoIterator<Item = &'a PointCloud>, resolution: f64, padding: f64) -> Option<Self> {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for c in clouds {
            if let Some((a, b)) = c.bounds() {
                for k in 0..2 {
                    lo[k] = lo[k].min(a[k]);
                    hi[k] = hi[k].max(b[k]);
                }
            }
        }
        if !lo[0].is_finite() {
            return None;
        }
        let origin = [
            ((lo[0] - padding) / resolution).floor() * resolution,
            ((lo[1] - padding) / resolution).floor() * resolution,
        ];
        let cells = |k: usize| ((hi[k] + padding - origin[k]) / resolution).floor() as usize + 1;
        Some(Self {
            origin,
            width: cells(0),
            height: cells(1),
        })
    }
}

/// Rasterizes every point with z in `[z_min, z_max]` into `frame` (or a
/// frame covering the clouds). Points outside the frame are ignored.
pub fn project_clouds<'a>(
    clouds: impl IntoIterator<Item = &'a PointCloud> + Clone,
    params: &ProjectionParams,
    frame: Option<GridFrame>,
) -> Result<OccupancyGrid> {
    params.validate()?;
    let frame = match frame {
        Some(f) => f,
        None => GridFrame::covering(clouds.clone(), params.resolution, params.padding)
            .ok_or_else(|| Error::invalid("cannot project an empty object layer without explicit bounds"))?,
    };
    if frame.width == 0 || frame.height == 0 {
        return Err(Error::invalid("grid frame must have positive size"));
    }
    let mut grid = OccupancyGrid::new(params.resolution, [frame.origin[0], frame.origin[1], 0.0], frame.width, frame.height, FREE)?;
    for c in clouds {
        for p in c.points() {
            if p.z >= params.z_min && p.z <= params.z_max {
                if let Some((ix, iy)) = grid.cell_of(p.x, p.y) {
                    grid.set(ix, iy, OCCUPIED);
                }
            }
        }
    }
    Ok(grid)
}

pub fn project_objects(layer: &ObjectLayer, params: &ProjectionParams, frame: Option<GridFrame>) -> Result<OccupancyGrid> {
    project_clouds(layer.objects.iter().map(|o| &o.cloud), params, frame)
}

fn merge_cell(a: u8, b: u8) -> u8 {
    if a == OCCUPIED || b == OCCUPIED {
        OCCUPIED
    } else if a == FREE || b == FREE {
        FREE
    } else {
        UNKNOWN
    }
}

/// Lattice offset of `o` relative to `base` in cells, if integral.
fn lattice_offset(o: f64, base: f64, res: f64) -> Option<i64> {
    let k = (o - base) / res;
    let r = k.round();
    ((k - r).abs() < 1e-6).then_some(r as i64)
}

/// Cellwise union over the combined extent: occupied wins over free, free
/// over unknown. Cells outside one input count as unknown for it.
pub fn merge_grids(a: &OccupancyGrid, b: &OccupancyGrid) -> Result<OccupancyGrid> {
    let res = a.resolution;
    if (a.resolution - b.resolution).abs() > 1e-9 * res {
        return Err(Error::GridMismatch(format!("resolutions {} and {}", a.resolution, b.resolution)));
    }
    if (a.origin[2] - b.origin[2]).abs() > 1e-9 {
        return Err(Error::GridMismatch(format!("origin yaws {} and {}", a.origin[2], b.origin[2])));
    }
    let off = |k: usize| {
        lattice_offset(b.origin[k], a.origin[k], res)
            .ok_or_else(|| Error::GridMismatch("origins are not on a common lattice".into()))
    };
    let (bx, by) = (off(0)?, off(1)?);
    let x0 = bx.min(0);
    let y0 = by.min(0);
    let x1 = (a.width as i64).max(bx + b.width as i64);
    let y1 = (a.height as i64).max(by + b.height as i64);
    let (w, h) = ((x1 - x0) as usize, (y1 - y0) as usize);
    let origin = if x0 == 0 && y0 == 0 {
        a.origin
    } else {
        let pick = |k: usize, lo: i64| if lo == 0 { a.origin[k] } else { b.origin[k] };
        [pick(0, x0), pick(1, y0), a.origin[2]]
    };
    let mut out = OccupancyGrid::new(res, origin, w, h, UNKNOWN)?;
    for (g, gx, gy) in [(a, 0i64, 0i64), (b, bx, by)] {
        for iy in 0..g.height {
            for ix in 0..g.width {
                let (ox, oy) = ((ix as i64 + gx - x0) as usize, (iy as i64 + gy - y0) as usize);
                let v = merge_cell(out.cells[oy * w + ox], g.cells[iy * g.width + ix]);
                out.set(ox, oy, v);
            }
        }
    }
    Ok(out)
}
