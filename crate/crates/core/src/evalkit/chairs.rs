use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cloud::Point3;
use crate::error::{Error, Result};
use crate::modeldb::TriangleMesh;

/// Dimensions of a procedural chair, meters. The seat is centered on the
/// origin in xy, the backrest sits on the -y side, legs stand on z = 0.
#[derive(Debug, Clone, PartialEq)]
pub struct ChairParams {
    pub seat_width: f64,
    pub seat_depth: f64,
    pub seat_height: f64,
    pub seat_thickness: f64,
    pub leg_thickness: f64,
    pub back_height: f64,
    pub back_thickness: f64,
    /// Slatted backrest: two posts and a top rail instead of a solid panel.
    pub slatted_back: bool,
    pub armrests: bool,
    pub stretchers: bool,
}

impl Default for ChairParams {
    fn default() -> Self {
        Self {
            seat_width: 0.45,
            seat_depth: 0.45,
            seat_height: 0.45,
            seat_thickness: 0.04,
            leg_thickness: 0.04,
            back_height: 0.4,
            back_thickness: 0.03,
            slatted_back: false,
            armrests: false,
            stretchers: false,
        }
    }
}

impl ChairParams {
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self {
            seat_width: rng.random_range(0.38..0.58),
            seat_depth: rng.random_range(0.38..0.55),
            seat_height: rng.random_range(0.40..0.52),
            seat_thickness: rng.random_range(0.025..0.07),
            leg_thickness: rng.random_range(0.025..0.055),
            back_height: rng.random_range(0.28..0.55),
            back_thickness: rng.random_range(0.02..0.05),
            slatted_back: rng.random_bool(0.4),
            armrests: rng.random_bool(0.3),
            stretchers: rng.random_bool(0.4),
        }
    }
}

/// Closed axis-aligned box between two corners.
pub fn box_mesh(lo: Point3, hi: Point3) -> TriangleMesh {
    let v = |x: bool, y: bool, z: bool| {
        Point3::new(if x { hi.x } else { lo.x }, if y { hi.y } else { lo.y }, if z { hi.z } else { lo.z })
    };
    let vertices = vec![
        v(false, false, false),
        v(true, false, false),
        v(true, true, false),
        v(false, true, false),
        v(false, false, true),
        v(true, false, true),
        v(true, true, true),
        v(false, true, true),
    ];
    let triangles = vec![
        [0, 2, 1],
        [0, 3, 2],
        [4, 5, 6],
        [4, 6, 7],
        [0, 1, 5],
        [0, 5, 4],
        [1, 2, 6],
        [1, 6, 5],
        [2, 3, 7],
        [2, 7, 6],
        [3, 0, 4],
        [3, 4, 7],
    ];
    TriangleMesh { vertices, triangles }
}

pub fn chair_mesh(p: &ChairParams) -> TriangleMesh {
    let mut mesh = TriangleMesh::default();
    let (hw, hd, leg) = (p.seat_width / 2.0, p.seat_depth / 2.0, p.leg_thickness);
    let seat_bottom = p.seat_height - p.seat_thickness;
    let mut add = |lo: [f64; 3], hi: [f64; 3]| {
        mesh.append(&box_mesh(Point3::new(lo[0], lo[1], lo[2]), Point3::new(hi[0], hi[1], hi[2])));
    };

    for (sx, sy) in [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)] {
        let x0 = if sx < 0.0 { -hw } else { hw - leg };
        let y0 = if sy < 0.0 { -hd } else { hd - leg };
        add([x0, y0, 0.0], [x0 + leg, y0 + leg, seat_bottom]);
    }
    add([-hw, -hd, seat_bottom], [hw, hd, p.seat_height]);

    let top = p.seat_height + p.back_height;
    let back_y = [-hd, -hd + p.back_thickness];
    if p.slatted_back {
        let rail = (p.back_height * 0.25).max(0.05);
        add([-hw, back_y[0], p.seat_height], [-hw + leg, back_y[1], top]);
        add([hw - leg, back_y[0], p.seat_height], [hw, back_y[1], top]);
        add([-hw + leg, back_y[0], top - rail], [hw - leg, back_y[1], top]);
    } else {
        add([-hw, back_y[0], p.seat_height], [hw, back_y[1], top]);
    }

    if p.armrests {
        let arm_z = p.seat_height + 0.2;
        for x0 in [-hw, hw - leg] {
            add([x0, hd - leg, p.seat_height], [x0 + leg, hd, arm_z]);
            add([x0, -hd, arm_z], [x0 + leg, hd, arm_z + 0.03]);
        }
    }
    if p.stretchers {
        let (z0, z1) = (0.12, 0.12 + leg * 0.6);
        add([-hw + leg, -hd, z0], [hw - leg, -hd + leg * 0.6, z1]);
        add([-hw + leg, hd - leg * 0.6, z0], [hw - leg, hd, z1]);
    }
    mesh
}

/// Writes `count` random chairs as `chair_NN.obj` into `dir`; returns the
/// file names in order.
pub fn write_chair_set(dir: impl AsRef<Path>, count: usize, seed: u64) -> Result<Vec<String>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = count.saturating_sub(1).to_string().len().max(2);
    let mut names = Vec::with_capacity(count);
    for i in 0..count {
        let name = format!("chair_{i:0width$}.obj");
        chair_mesh(&ChairParams::random(&mut rng)).save_obj(dir.join(&name))?;
        names.push(name);
    }
    Ok(names)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_area_and_orientation() {
        let b = box_mesh(Point3::origin(), Point3::new(1.0, 2.0, 3.0));
        assert!((b.area() - 22.0).abs() < 1e-12);
        // Outward normals: the signed volume is positive.
        let vol: f64 = (0..b.triangles.len())
            .map(|t| {
                let [a, bb, c] = b.triangle(t);
                a.coords.dot(&bb.coords.cross(&c.coords)) / 6.0
            })
            .sum();
        assert!((vol - 6.0).abs() < 1e-12);
    }

    #[test]
    fn chair_stands_on_floor() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let p = ChairParams::random(&mut rng);
            let mesh = chair_mesh(&p);
            let zmin = mesh.vertices.iter().map(|v| v.z).fold(f64::INFINITY, f64::min);
            let zmax = mesh.vertices.iter().map(|v| v.z).fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(zmin, 0.0);
            assert!((zmax - (p.seat_height + p.back_height)).abs() < 1e-12 || p.armrests);
        }
    }

    #[test]
    fn chair_set_is_reproducible() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let names = write_chair_set(a.path(), 3, 9).unwrap();
        write_chair_set(b.path(), 3, 9).unwrap();
        assert_eq!(names, vec!["chair_00.obj", "chair_01.obj", "chair_02.obj"]);
        for n in names {
            assert_eq!(std::fs::read(a.path().join(&n)).unwrap(), std::fs::read(b.path().join(&n)).unwrap());
        }
    }
}
