//! PLY reader (ASCII and binary little-endian) and writer.

use std::fmt::Write as _;

use crate::cloud::{ClassId, Point3, PointCloud, Vector3};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar { name: String, ty: Scalar },
    List { name: String, count: Scalar, item: Scalar },
}

impl Property {
    fn name(&self) -> &str {
        match self {
            Property::Scalar { name, .. } | Property::List { name, .. } => name,
        }
    }
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Encoding {
    Ascii,
    BinaryLittleEndian,
}

/// One decoded element record: scalar values by property slot, lists by slot.
struct Record {
    scalars: Vec<f64>,
    lists: Vec<Vec<f64>>,
}

/// Contents of a PLY file relevant to this crate.
#[derive(Debug, Clone, Default)]
pub struct PlyData {
    pub cloud: PointCloud,
    pub provenance: Option<Vec<u16>>,
    /// Faces as vertex-index polygons.
    pub faces: Vec<Vec<usize>>,
}

/// Output encoding for [`write_ply`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum PlyFormat {
    #[default]
    Ascii,
    BinaryLittleEndian,
}

struct Header {
    encoding: Encoding,
    elements: Vec<Element>,
    /// Byte offset of the body.
    body_offset: usize,
    /// Number of header lines (the body starts on the next line).
    lines: usize,
}

fn parse_header(bytes: &[u8], origin: &str) -> Result<Header> {
    let mut offset = 0usize;
    let mut line_no = 0usize;
    let mut encoding = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let rest = &bytes[offset..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::parse(origin, line_no + 1, "unterminated PLY header"))?;
        line_no += 1;
        let line = std::str::from_utf8(&rest[..end])
            .map_err(|_| Error::parse(origin, line_no, "header is not valid UTF-8"))?
            .trim_end_matches('\r')
            .trim();
        offset += end + 1;
        let mut tokens = line.split_whitespace();
        let keyword = tokens.next().unwrap_or("");
        if line_no == 1 {
            if line != "ply" {
                return Err(Error::parse(origin, 1, "missing `ply` magic"));
            }
            continue;
        }
        match keyword {
            "" | "comment" | "obj_info" => {}
            "format" => {
                encoding = Some(match tokens.next() {
                    Some("ascii") => Encoding::Ascii,
                    Some("binary_little_endian") => Encoding::BinaryLittleEndian,
                    other => {
                        return Err(Error::parse(origin, line_no, format!("unsupported PLY format {other:?}")))
                    }
                });
            }
            "element" => {
                let name = tokens.next().ok_or_else(|| Error::parse(origin, line_no, "element without name"))?;
                let count = tokens
                    .next()
                    .and_then(|c| c.parse::<usize>().ok())
                    .ok_or_else(|| Error::parse(origin, line_no, "element count is not a non-negative integer"))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            "property" => {
                let element = elements
                    .last_mut()
                    .ok_or_else(|| Error::parse(origin, line_no, "property before any element"))?;
                let t: Vec<&str> = tokens.collect();
                let bad = || Error::parse(origin, line_no, format!("malformed property `{line}`"));
                let property = match t.as_slice() {
                    ["list", c, i, name] => Property::List {
                        name: name.to_string(),
                        count: Scalar::parse(c).ok_or_else(bad)?,
                        item: Scalar::parse(i).ok_or_else(bad)?,
                    },
                    [ty, name] => Property::Scalar {
                        name: name.to_string(),
                        ty: Scalar::parse(ty).ok_or_else(bad)?,
                    },
                    _ => return Err(bad()),
                };
                element.properties.push(property);
            }
            "end_header" => break,
            other => return Err(Error::parse(origin, line_no, format!("unknown header keyword `{other}`"))),
        }
    }
    let encoding = encoding.ok_or_else(|| Error::parse(origin, line_no, "missing format line"))?;
    Ok(Header {
        encoding,
        elements,
        body_offset: offset,
        lines: line_no,
    })
}

fn parse_number(token: &str, ty: Scalar, origin: &str, line: usize) -> Result<f64> {
    let v: f64 = token
        .parse()
        .map_err(|_| Error::parse(origin, line, format!("`{token}` is not a number")))?;
    if !v.is_finite() {
        return Err(Error::parse(origin, line, format!("non-finite value `{token}`")));
    }
    if !matches!(ty, Scalar::F32 | Scalar::F64) && v.fract() != 0.0 {
        return Err(Error::parse(origin, line, format!("`{token}` is not an integer")));
    }
    Ok(v)
}

fn read_ascii_records(
    body: &str,
    first_line: usize,
    elements: &[Element],
    origin: &str,
) -> Result<Vec<Vec<(Record, usize)>>> {
    let mut lines = body
        .lines()
        .enumerate()
        .map(|(i, l)| (first_line + i, l.trim()))
        .filter(|(_, l)| !l.is_empty());
    let mut out = Vec::with_capacity(elements.len());
    for element in elements {
        let mut records = Vec::with_capacity(element.count);
        for k in 0..element.count {
            let (line_no, line) = lines.next().ok_or_else(|| {
                Error::parse(
                    origin,
                    first_line,
                    format!("file ends after {k} of {} `{}` records", element.count, element.name),
                )
            })?;
            let mut tokens = line.split_whitespace();
            let mut record = Record {
                scalars: Vec::new(),
                lists: Vec::new(),
            };
            let mut next = |what: &str| {
                tokens
                    .next()
                    .ok_or_else(|| Error::parse(origin, line_no, format!("missing value for `{what}`")))
            };
            for property in &element.properties {
                match property {
                    Property::Scalar { name, ty } => {
                        record.scalars.push(parse_number(next(name)?, *ty, origin, line_no)?);
                    }
                    Property::List { name, count, item } => {
                        let n = parse_number(next(name)?, *count, origin, line_no)?;
                        if n < 0.0 {
                            return Err(Error::parse(origin, line_no, "negative list length"));
                        }
                        let mut items = Vec::with_capacity(n as usize);
                        for _ in 0..n as usize {
                            items.push(parse_number(next(name)?, *item, origin, line_no)?);
                        }
                        record.lists.push(items);
                    }
                }
            }
            if tokens.next().is_some() {
                return Err(Error::parse(origin, line_no, "trailing values in record"));
            }
            records.push((record, line_no));
        }
        out.push(records);
    }
    Ok(out)
}

fn read_binary_records(body: &[u8], elements: &[Element], origin: &str) -> Result<Vec<Vec<(Record, usize)>>> {
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        let slice = body
            .get(pos..pos + n)
            .ok_or_else(|| Error::parse(origin, 0, format!("binary body truncated at byte {pos}")))?;
        pos += n;
        Ok(slice)
    };
    let mut out = Vec::with_capacity(elements.len());
    for element in elements {
        let mut records = Vec::with_capacity(element.count);
        for k in 0..element.count {
            let mut record = Record {
                scalars: Vec::new(),
                lists: Vec::new(),
            };
            for property in &element.properties {
                match property {
                    Property::Scalar { ty, name } => {
                        let v = ty.read_le(take(ty.size())?);
                        if !v.is_finite() {
                            return Err(Error::parse(
                                origin,
                                0,
                                format!("non-finite `{name}` in `{}` record {k}", element.name),
                            ));
                        }
                        record.scalars.push(v);
                    }
                    Property::List { count, item, .. } => {
                        let n = count.read_le(take(count.size())?);
                        let mut items = Vec::with_capacity(n.max(0.0) as usize);
                        for _ in 0..n.max(0.0) as usize {
                            items.push(item.read_le(take(item.size())?));
                        }
                        record.lists.push(items);
                    }
                }
            }
            // Binary records have no line numbers; report the record index instead.
            records.push((record, k));
        }
        out.push(records);
    }
    Ok(out)
}

fn slot(element: &Element, name: &str) -> Option<(usize, Scalar)> {
    let mut k = 0;
    for p in &element.properties {
        if let Property::Scalar { name: n, ty } = p {
            if n == name {
                return Some((k, *ty));
            }
            k += 1;
        }
    }
    None
}

fn list_slot(element: &Element, names: &[&str]) -> Option<usize> {
    element
        .properties
        .iter()
        .filter(|p| matches!(p, Property::List { .. }))
        .position(|p| names.contains(&p.name()))
}

/// Parses PLY bytes. `origin` names the source in error messages.
pub fn read_ply(bytes: &[u8], origin: &str) -> Result<PlyData> {
    let header = parse_header(bytes, origin)?;
    let body = &bytes[header.body_offset..];
    let records = match header.encoding {
        Encoding::Ascii => {
            let text = std::str::from_utf8(body)
                .map_err(|_| Error::parse(origin, header.lines + 1, "ASCII body is not valid UTF-8"))?;
            read_ascii_records(text, header.lines + 1, &header.elements, origin)?
        }
        Encoding::BinaryLittleEndian => read_binary_records(body, &header.elements, origin)?,
    };

    let mut data = PlyData::default();
    for (element, records) in header.elements.iter().zip(records) {
        match element.name.as_str() {
            "vertex" => {
                let (x, y, z) = match (slot(element, "x"), slot(element, "y"), slot(element, "z")) {
                    (Some(x), Some(y), Some(z)) => (x.0, y.0, z.0),
                    _ => return Err(Error::parse(origin, header.lines, "vertex element lacks x/y/z")),
                };
                let normal_slots = match (slot(element, "nx"), slot(element, "ny"), slot(element, "nz")) {
                    (Some(a), Some(b), Some(c)) => Some((a.0, b.0, c.0)),
                    _ => None,
                };
                let label_slot = slot(element, "class_id").or_else(|| slot(element, "label")).map(|s| s.0);
                let provenance_slot = slot(element, "provenance").map(|s| s.0);

                let mut points = Vec::with_capacity(records.len());
                let mut normals = normal_slots.map(|_| Vec::with_capacity(records.len()));
                let mut labels = label_slot.map(|_| Vec::with_capacity(records.len()));
                let mut provenance = provenance_slot.map(|_| Vec::with_capacity(records.len()));
                for (record, line) in &records {
                    let s = &record.scalars;
                    points.push(Point3::new(s[x], s[y], s[z]));
                    if let (Some((a, b, c)), Some(normals)) = (normal_slots, normals.as_mut()) {
                        let n = Vector3::new(s[a], s[b], s[c]);
                        let norm = n.norm();
                        normals.push(if norm > 0.0 { n / norm } else { Vector3::zeros() });
                    }
                    if let (Some(k), Some(labels)) = (label_slot, labels.as_mut()) {
                        let v = s[k];
                        if !(0.0..=ClassId::MAX as f64).contains(&v) {
                            return Err(Error::parse(origin, *line, format!("class id {v} out of range")));
                        }
                        labels.push(v as ClassId);
                    }
                    if let (Some(k), Some(provenance)) = (provenance_slot, provenance.as_mut()) {
                        let v = s[k];
                        if !(0.0..=u16::MAX as f64).contains(&v) {
                            return Err(Error::parse(origin, *line, format!("provenance {v} out of range")));
                        }
                        provenance.push(v as u16);
                    }
                }
                data.cloud = PointCloud::from_parts(points, normals, labels)?;
                data.provenance = provenance;
            }
            "face" => {
                let k = list_slot(element, &["vertex_indices", "vertex_index"])
                    .ok_or_else(|| Error::parse(origin, header.lines, "face element lacks vertex_indices"))?;
                for (record, line) in &records {
                    let face: Vec<usize> = record.lists[k]
                        .iter()
                        .map(|&v| {
                            if v >= 0.0 && v.fract() == 0.0 {
                                Ok(v as usize)
                            } else {
                                Err(Error::parse(origin, *line, format!("bad vertex index {v}")))
                            }
                        })
                        .collect::<Result<_>>()?;
                    data.faces.push(face);
                }
            }
            _ => {}
        }
    }
    Ok(data)
}

/// Serializes a cloud as PLY. Coordinates are written with 6 decimals in ASCII
/// mode and as `double` in both modes.
pub fn write_ply(cloud: &PointCloud, provenance: Option<&[u16]>, format: PlyFormat) -> Result<Vec<u8>> {
    if let Some(p) = provenance {
        if p.len() != cloud.len() {
            return Err(Error::invalid(format!("{} provenance tags for {} points", p.len(), cloud.len())));
        }
    }
    let mut header = String::new();
    header.push_str("ply\n");
    header.push_str(match format {
        PlyFormat::Ascii => "format ascii 1.0\n",
        PlyFormat::BinaryLittleEndian => "format binary_little_endian 1.0\n",
    });
    let _ = writeln!(header, "element vertex {}", cloud.len());
    header.push_str("property double x\nproperty double y\nproperty double z\n");
    if cloud.normals().is_some() {
        header.push_str("property double nx\nproperty double ny\nproperty double nz\n");
    }
    if cloud.labels().is_some() {
        header.push_str("property uchar class_id\n");
    }
    if provenance.is_some() {
        header.push_str("property ushort provenance\n");
    }
    header.push_str("end_header\n");

    let mut out = header.into_bytes();
    match format {
        PlyFormat::Ascii => {
            let mut line = String::new();
            for i in 0..cloud.len() {
                line.clear();
                let p = cloud.points()[i];
                let _ = write!(line, "{:.6} {:.6} {:.6}", p.x, p.y, p.z);
                if let Some(normals) = cloud.normals() {
                    let n = normals[i];
                    let _ = write!(line, " {:.6} {:.6} {:.6}", n.x, n.y, n.z);
                }
                if let Some(labels) = cloud.labels() {
                    let _ = write!(line, " {}", labels[i]);
                }
                if let Some(provenance) = provenance {
                    let _ = write!(line, " {}", provenance[i]);
                }
                line.push('\n');
                out.extend_from_slice(line.as_bytes());
            }
        }
        PlyFormat::BinaryLittleEndian => {
            for i in 0..cloud.len() {
                let p = cloud.points()[i];
                for v in [p.x, p.y, p.z] {
                    out.extend_from_slice(&v.to_le_bytes());
                }
                if let Some(normals) = cloud.normals() {
                    for v in normals[i].iter() {
                        out.extend_from_slice(&v.to_le_bytes());
                    }
                }
                if let Some(labels) = cloud.labels() {
                    out.push(labels[i]);
                }
                if let Some(provenance) = provenance {
                    out.extend_from_slice(&provenance[i].to_le_bytes());
                }
            }
        }
    }
    Ok(out)
}
