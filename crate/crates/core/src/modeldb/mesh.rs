use std::fmt::Write as _;
use std::path::Path;

use crate::cloud::io::read_ply;
use crate::cloud::Point3;
use crate::error::{Error, Result};

/// Triangle soup read from OBJ or PLY.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Point3>,
    pub triangles: Vec<[usize; 3]>,
}

impl TriangleMesh {
    pub fn triangle(&self, t: usize) -> [Point3; 3] {
        self.triangles[t].map(|i| self.vertices[i])
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangle(t);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    /// Appends another mesh, offsetting its indices.
    pub fn append(&mut self, other: &TriangleMesh) {
        let base = self.vertices.len();
        self.vertices.extend_from_slice(&other.vertices);
        self.triangles
            .extend(other.triangles.iter().map(|t| t.map(|i| i + base)));
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let origin = path.display().to_string();
        let is_ply = bytes.starts_with(b"ply");
        let mesh = if is_ply {
            let data = read_ply(&bytes, &origin)?;
            let mut triangles = Vec::new();
            for face in &data.faces {
                fan(face, &mut triangles);
            }
            TriangleMesh {
                vertices: data.cloud.into_points(),
                triangles,
            }
        } else {
            let text = std::str::from_utf8(&bytes).map_err(|_| Error::parse(&origin, 1, "mesh is neither PLY nor UTF-8 OBJ"))?;
            parse_obj(text, &origin)?
        };
        mesh.check(&origin)?;
        Ok(mesh)
    }

    fn check(&self, origin: &str) -> Result<()> {
        if let Some(t) = self.triangles.iter().find(|t| t.iter().any(|&i| i >= self.vertices.len())) {
            return Err(Error::parse(origin, 0, format!("face {t:?} references a missing vertex")));
        }
        Ok(())
    }

    pub fn to_obj(&self) -> String {
        let mut out = String::new();
        for v in &self.vertices {
            let _ = writeln!(out, "v {:.6} {:.6} {:.6}", v.x, v.y, v.z);
        }
        for t in &self.triangles {
            let _ = writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
        }
        out
    }

    pub fn save_obj(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_obj()).map_err(|e| Error::io(path, e))
    }
}

fn fan(face: &[usize], out: &mut Vec<[usize; 3]>) {
    for k in 1..face.len().saturating_sub(1) {
        out.push([face[0], face[k], face[k + 1]]);
    }
}

fn parse_obj(text: &str, origin: &str) -> Result<TriangleMesh> {
    let mut mesh = TriangleMesh::default();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let coords: Vec<f64> = tokens
                    .take(3)
                    .map(|t| t.parse::<f64>().map_err(|_| Error::parse(origin, line_no, format!("bad coordinate `{t}`"))))
                    .collect::<Result<_>>()?;
                if coords.len() != 3 || coords.iter().any(|c| !c.is_finite()) {
                    return Err(Error::parse(origin, line_no, "vertex needs three finite coordinates"));
                }
                mesh.vertices.push(Point3::new(coords[0], coords[1], coords[2]));
            }
            Some("f") => {
                let n = mesh.vertices.len() as i64;
                let face: Vec<usize> = tokens
                    .map(|t| {
                        let raw = t.split('/').next().unwrap_or("");
                        let idx: i64 = raw
                            .parse()
                            .map_err(|_| Error::parse(origin, line_no, format!("bad face index `{t}`")))?;
                        let resolved = if idx < 0 { n + idx } else { idx - 1 };
                        if resolved < 0 || resolved >= n {
                            return Err(Error::parse(origin, line_no, format!("face index {idx} out of range")));
                        }
                        Ok(resolved as usize)
                    })
                    .collect::<Result<_>>()?;
                fan(&face, &mut mesh.triangles);
            }
            _ => {}
        }
    }
    Ok(mesh)
}
