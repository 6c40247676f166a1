//! ASCII PCD reader (input only).

use crate::cloud::{ClassId, Point3, PointCloud, Vector3};
use crate::error::{Error, Result};

pub fn read_pcd(text: &str, origin: &str) -> Result<PointCloud> {
    let mut fields: Vec<String> = Vec::new();
    let mut counts: Vec<usize> = Vec::new();
    let mut declared_points: Option<usize> = None;
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let mut data_line = 0;

    for (line_no, line) in lines.by_ref() {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut tokens = line.split_whitespace();
        let key = tokens.next().unwrap_or("").to_ascii_uppercase();
        let values: Vec<&str> = tokens.collect();
        match key.as_str() {
            "FIELDS" => fields = values.iter().map(|s| s.to_string()).collect(),
            "COUNT" => {
                counts = values
                    .iter()
                    .map(|v| v.parse::<usize>().map_err(|_| Error::parse(origin, line_no, "bad COUNT")))
                    .collect::<Result<_>>()?
            }
            "POINTS" => {
                declared_points = Some(
                    values
                        .first()
                        .and_then(|v| v.parse().ok())
                        .ok_or_else(|| Error::parse(origin, line_no, "bad POINTS"))?,
                )
            }
            "DATA" => {
                if values.first().map(|v| v.to_ascii_lowercase()) != Some("ascii".into()) {
                    return Err(Error::parse(origin, line_no, "only `DATA ascii` PCD files are supported"));
                }
                data_line = line_no;
                break;
            }
            "VERSION" | "SIZE" | "TYPE" | "WIDTH" | "HEIGHT" | "VIEWPOINT" => {}
            other => return Err(Error::parse(origin, line_no, format!("unknown PCD header key `{other}`"))),
        }
    }
    if data_line == 0 {
        return Err(Error::parse(origin, 1, "missing DATA line"));
    }
    if counts.is_empty() {
        counts = vec![1; fields.len()];
    }
    if counts.len() != fields.len() {
        return Err(Error::parse(origin, data_line, "FIELDS and COUNT disagree"));
    }
    // Column offset of each field's first value.
    let mut offsets = Vec::with_capacity(fields.len());
    let mut width = 0;
    for c in &counts {
        offsets.push(width);
        width += c;
    }
    let column = |name: &str| fields.iter().position(|f| f == name).map(|i| offsets[i]);
    let (x, y, z) = match (column("x"), column("y"), column("z")) {
        (Some(x), Some(y), Some(z)) => (x, y, z),
        _ => return Err(Error::parse(origin, data_line, "PCD lacks x/y/z fields")),
    };
    let label = column("label").or_else(|| column("class_id"));
    let normal = match (column("normal_x"), column("normal_y"), column("normal_z")) {
        (Some(a), Some(b), Some(c)) => Some((a, b, c)),
        _ => None,
    };

    let mut points = Vec::new();
    let mut labels = label.map(|_| Vec::new());
    let mut normals = normal.map(|_| Vec::new());
    for (line_no, line) in lines {
        if line.is_empty() {
            continue;
        }
        let values: Vec<f64> = line
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| Error::parse(origin, line_no, format!("`{t}` is not a number")))
            })
            .collect::<Result<_>>()?;
        if values.len() != width {
            return Err(Error::parse(origin, line_no, format!("expected {width} values, found {}", values.len())));
        }
        let p = Point3::new(values[x], values[y], values[z]);
        if !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()) {
            return Err(Error::parse(origin, line_no, "non-finite coordinate"));
        }
        points.push(p);
        if let (Some(k), Some(labels)) = (label, labels.as_mut()) {
            let v = values[k];
            if !(0.0..=ClassId::MAX as f64).contains(&v) || v.fract() != 0.0 {
                return Err(Error::parse(origin, line_no, format!("label {v} is not a class id")));
            }
            labels.push(v as ClassId);
        }
        if let (Some((a, b, c)), Some(normals)) = (normal, normals.as_mut()) {
            let n = Vector3::new(values[a], values[b], values[c]);
            let norm = n.norm();
            normals.push(if norm.is_finite() && norm > 0.0 { n / norm } else { Vector3::zeros() });
        }
    }
    if let Some(n) = declared_points {
        if n != points.len() {
            return Err(Error::parse(origin, data_line, format!("POINTS says {n}, found {}", points.len())));
        }
    }
    PointCloud::from_parts(points, normals, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    const PCD: &str = "# .PCD v0.7\nVERSION 0.7\nFIELDS x y z label\nSIZE 4 4 4 4\nTYPE F F F U\nCOUNT 1 1 1 1\nWIDTH 2\nHEIGHT 1\nVIEWPOINT 0 0 0 1 0 0 0\nPOINTS 2\nDATA ascii\n0.5 1 2 3\n-1 0 0.25 0\n";

    #[test]
    fn reads_labels() {
        let c = read_pcd(PCD, "mem").unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.labels().unwrap(), &[3, 0]);
        assert_eq!(c.points()[0], Point3::new(0.5, 1.0, 2.0));
    }

    #[test]
    fn nan_reports_line() {
        let text = PCD.replace("-1 0 0.25 0", "-1 nan 0.25 0");
        assert!(matches!(read_pcd(&text, "mem"), Err(Error::Parse { line: 13, .. })));
    }

    #[test]
    fn binary_data_rejected() {
        assert!(read_pcd(&PCD.replace("DATA ascii", "DATA binary"), "mem").is_err());
    }

    #[test]
    fn point_count_checked() {
        assert!(read_pcd(&PCD.replace("POINTS 2", "POINTS 3"), "mem").is_err());
    }
}
