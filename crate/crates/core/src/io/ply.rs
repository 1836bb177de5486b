use std::path::Path;

use super::{AttributeConfig, AttributeMode, PointCloud, MORTON_AXIS_BITS};
use crate::error::{Error, Result};

fn ply_err(msg: impl Into<String>) -> Error {
    Error::Ply(msg.into())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Format {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
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
    fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            other => return Err(ply_err(format!("unknown property type `{other}`"))),
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
            Scalar::I8 => f64::from(b[0] as i8),
            Scalar::U8 => f64::from(b[0]),
            Scalar::I16 => f64::from(i16::from_le_bytes([b[0], b[1]])),
            Scalar::U16 => f64::from(u16::from_le_bytes([b[0], b[1]])),
            Scalar::I32 => f64::from(i32::from_le_bytes([b[0], b[1], b[2], b[3]])),
            Scalar::U32 => f64::from(u32::from_le_bytes([b[0], b[1], b[2], b[3]])),
            Scalar::F32 => f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])),
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Clone, Debug)]
enum PropertyKind {
    Scalar(Scalar),
    List { count: Scalar, item: Scalar },
}

#[derive(Clone, Debug)]
struct Property {
    name: String,
    kind: PropertyKind,
}

#[derive(Clone, Debug)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

struct Header {
    format: Format,
    elements: Vec<Element>,
    body_offset: usize,
    /// Depth recorded by [`save_ply`] in a header comment.
    bit_depth: Option<u8>,
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    const END: &[u8] = b"end_header";
    let end = bytes
        .windows(END.len())
        .position(|w| w == END)
        .ok_or_else(|| ply_err("missing end_header"))?;
    let mut body_offset = end + END.len();
    if bytes.get(body_offset) == Some(&b'\r') {
        body_offset += 1;
    }
    if bytes.get(body_offset) != Some(&b'\n') {
        return Err(ply_err("end_header must be followed by a newline"));
    }
    body_offset += 1;
    let text = std::str::from_utf8(&bytes[..end]).map_err(|_| ply_err("header is not UTF-8"))?;
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
    if lines.next() != Some("ply") {
        return Err(ply_err("missing `ply` magic"));
    }
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    let mut bit_depth = None;
    for line in lines {
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("format") => {
                format = Some(match (tok.next(), tok.next()) {
                    (Some("ascii"), Some("1.0")) => Format::Ascii,
                    (Some("binary_little_endian"), Some("1.0")) => Format::BinaryLittleEndian,
                    (Some(f), _) => return Err(ply_err(format!("unsupported format `{f}`"))),
                    _ => return Err(ply_err("incomplete format line")),
                });
            }
            Some("comment") => {
                if tok.next() == Some("geometry_bit_depth") {
                    bit_depth = tok.next().and_then(|d| d.parse().ok());
                }
            }
            Some("obj_info") => {}
            Some("element") => {
                let name = tok.next().ok_or_else(|| ply_err("element without name"))?;
                let count = tok
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| ply_err(format!("element `{name}` has no valid count")))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            Some("property") => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| ply_err("property before any element"))?;
                let first = tok.next().ok_or_else(|| ply_err("empty property line"))?;
                let kind = if first == "list" {
                    let count = Scalar::parse(tok.next().ok_or_else(|| ply_err("list without count type"))?)?;
                    let item = Scalar::parse(tok.next().ok_or_else(|| ply_err("list without item type"))?)?;
                    PropertyKind::List { count, item }
                } else {
                    PropertyKind::Scalar(Scalar::parse(first)?)
                };
                let name = tok.next().ok_or_else(|| ply_err("property without name"))?;
                el.properties.push(Property {
                    name: name.to_string(),
                    kind,
                });
            }
            Some(other) => return Err(ply_err(format!("unexpected header line `{other}`"))),
            None => {}
        }
    }
    let format = format.ok_or_else(|| ply_err("missing format line"))?;
    Ok(Header {
        format,
        elements,
        body_offset,
        bit_depth,
    })
}

/// Reads element rows as f64 values, one row per element; list properties
/// are skipped.
struct BodyReader<'a> {
    format: Format,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> BodyReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(ply_err("unexpected end of body"));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn ascii_line(&mut self) -> Result<&'a str> {
        loop {
            if self.pos >= self.bytes.len() {
                return Err(ply_err("unexpected end of body"));
            }
            let rest = &self.bytes[self.pos..];
            let len = rest.iter().position(|&b| b == b'\n').unwrap_or(rest.len());
            self.pos += (len + 1).min(rest.len());
            let line = std::str::from_utf8(&rest[..len]).map_err(|_| ply_err("body is not UTF-8"))?;
            let line = line.trim();
            if !line.is_empty() {
                return Ok(line);
            }
        }
    }

    fn row(&mut self, el: &Element, out: &mut Vec<f64>) -> Result<()> {
        out.clear();
        match self.format {
            Format::BinaryLittleEndian => {
                for p in &el.properties {
                    match p.kind {
                        PropertyKind::Scalar(s) => out.push(s.read_le(self.take(s.size())?)),
                        PropertyKind::List { count, item } => {
                            let n = count.read_le(self.take(count.size())?);
                            if n < 0.0 || n.fract() != 0.0 {
                                return Err(ply_err("invalid list length"));
                            }
                            self.take(n as usize * item.size())?;
                            out.push(f64::NAN);
                        }
                    }
                }
            }
            Format::Ascii => {
                let line = self.ascii_line()?;
                let mut tok = line.split_whitespace();
                let mut next = || -> Result<f64> {
                    tok.next()
                        .ok_or_else(|| ply_err(format!("short row in element `{}`", el.name)))?
                        .parse::<f64>()
                        .map_err(|_| ply_err("non-numeric value"))
                };
                for p in &el.properties {
                    match p.kind {
                        PropertyKind::Scalar(_) => out.push(next()?),
                        PropertyKind::List { .. } => {
                            let n = next()?;
                            if n < 0.0 || n.fract() != 0.0 {
                                return Err(ply_err("invalid list length"));
                            }
                            for _ in 0..n as usize {
                                next()?;
                            }
                            out.push(f64::NAN);
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

const SCALAR_ATTRIBUTE_NAMES: &[&str] = &["reflectance", "intensity", "refl", "scalar_reflectance", "scalar_intensity"];

fn scalar_index(el: &Element, name: &str) -> Option<usize> {
    el.properties
        .iter()
        .position(|p| p.name == name && matches!(p.kind, PropertyKind::Scalar(_)))
}

/// Parses an ASCII or binary little-endian PLY into a canonical cloud.
///
/// Coordinates must be non-negative integers (float storage is accepted
/// when the value is exactly integral). Attributes are either
/// `red`/`green`/`blue` or one scalar property, with values in `0..=255`.
/// Unknown vertex properties are ignored with a warning. When `bit_depth`
/// is `None` the depth recorded by [`save_ply`] is used if present,
/// otherwise the smallest depth covering the largest coordinate.
pub fn load_ply(bytes: &[u8], bit_depth: Option<u8>) -> Result<PointCloud> {
    let header = parse_header(bytes)?;
    let bit_depth = bit_depth.or(header.bit_depth);
    let vertex_pos = header
        .elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| ply_err("no vertex element"))?;
    let vertex = &header.elements[vertex_pos];
    let coord_idx: Vec<usize> = ["x", "y", "z"]
        .iter()
        .map(|n| scalar_index(vertex, n).ok_or_else(|| ply_err(format!("vertex property `{n}` missing"))))
        .collect::<Result<_>>()?;

    let (attributes, attr_idx) = match ["red", "green", "blue"].map(|n| scalar_index(vertex, n)) {
        [Some(r), Some(g), Some(b)] => (AttributeConfig::rgb(), vec![r, g, b]),
        _ => {
            let others: Vec<usize> = vertex
                .properties
                .iter()
                .enumerate()
                .filter(|(i, p)| !coord_idx.contains(i) && matches!(p.kind, PropertyKind::Scalar(_)))
                .map(|(i, _)| i)
                .collect();
            let chosen = SCALAR_ATTRIBUTE_NAMES
                .iter()
                .find_map(|n| scalar_index(vertex, n))
                .or(if others.len() == 1 { Some(others[0]) } else { None })
                .ok_or_else(|| ply_err("no red/green/blue or single scalar attribute property"))?;
            (
                AttributeConfig::single(vertex.properties[chosen].name.clone()),
                vec![chosen],
            )
        }
    };
    for (i, p) in vertex.properties.iter().enumerate() {
        if !coord_idx.contains(&i) && !attr_idx.contains(&i) {
            log::warn!("ignoring vertex property `{}`", p.name);
        }
    }

    let mut reader = BodyReader {
        format: header.format,
        bytes,
        pos: header.body_offset,
    };
    let mut row = Vec::new();
    for el in &header.elements[..vertex_pos] {
        for _ in 0..el.count {
            reader.row(el, &mut row)?;
        }
    }
    let limit = 1u64 << bit_depth.map_or(MORTON_AXIS_BITS, u32::from);
    let mut positions = Vec::with_capacity(vertex.count);
    let mut channels = vec![Vec::with_capacity(vertex.count); attr_idx.len()];
    for n in 0..vertex.count {
        reader.row(vertex, &mut row)?;
        let mut p = [0u32; 3];
        for (axis, &ci) in coord_idx.iter().enumerate() {
            let v = row[ci];
            if !v.is_finite() || v.fract() != 0.0 {
                return Err(ply_err(format!("vertex {n}: non-integral coordinate {v}")));
            }
            if v < 0.0 {
                return Err(ply_err(format!("vertex {n}: negative coordinate {v}")));
            }
            if v >= limit as f64 {
                return Err(ply_err(format!("vertex {n}: coordinate {v} exceeds geometry bit depth")));
            }
            p[axis] = v as u32;
        }
        positions.push(p);
        for (c, &ai) in attr_idx.iter().enumerate() {
            let v = row[ai];
            if !(0.0..=255.0).contains(&v) || v.fract() != 0.0 {
                return Err(ply_err(format!("vertex {n}: attribute value {v} is not 8-bit")));
            }
            channels[c].push(v as u8);
        }
    }
    if attributes.mode == AttributeMode::Single && channels.len() != 1 {
        return Err(ply_err("single attribute mode requires one channel"));
    }
    PointCloud::new(positions, attributes, channels, bit_depth)
}

/// Positions of a PLY's vertices, deduplicated and Morton sorted. Vertex
/// properties other than `x`, `y`, `z` are ignored, so any cloud file or a
/// geometry-only file works as a decoder side input.
pub fn load_geometry(bytes: &[u8]) -> Result<Vec<[u32; 3]>> {
    let header = parse_header(bytes)?;
    let vertex_pos = header
        .elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| ply_err("no vertex element"))?;
    let vertex = &header.elements[vertex_pos];
    let coord_idx: Vec<usize> = ["x", "y", "z"]
        .iter()
        .map(|n| scalar_index(vertex, n).ok_or_else(|| ply_err(format!("vertex property `{n}` missing"))))
        .collect::<Result<_>>()?;
    let mut reader = BodyReader {
        format: header.format,
        bytes,
        pos: header.body_offset,
    };
    let mut row = Vec::new();
    for el in &header.elements[..vertex_pos] {
        for _ in 0..el.count {
            reader.row(el, &mut row)?;
        }
    }
    let mut keyed = Vec::with_capacity(vertex.count);
    for n in 0..vertex.count {
        reader.row(vertex, &mut row)?;
        let mut p = [0u32; 3];
        for (axis, &ci) in coord_idx.iter().enumerate() {
            let v = row[ci];
            if !v.is_finite() || v.fract() != 0.0 || v < 0.0 || v >= (1u64 << MORTON_AXIS_BITS) as f64 {
                return Err(ply_err(format!("vertex {n}: invalid coordinate {v}")));
            }
            p[axis] = v as u32;
        }
        keyed.push((super::morton_code(p)?, p));
    }
    keyed.sort_unstable();
    keyed.dedup_by_key(|k| k.0);
    Ok(keyed.into_iter().map(|(_, p)| p).collect())
}

/// Binary little-endian PLY with int32 coordinates and uchar attributes.
pub fn save_ply(cloud: &PointCloud) -> Vec<u8> {
    let mut header = String::from("ply\nformat binary_little_endian 1.0\n");
    header.push_str(&format!("comment geometry_bit_depth {}\n", cloud.bit_depth));
    header.push_str(&format!("element vertex {}\n", cloud.len()));
    for axis in ["x", "y", "z"] {
        header.push_str(&format!("property int {axis}\n"));
    }
    for name in &cloud.attributes.names {
        header.push_str(&format!("property uchar {name}\n"));
    }
    header.push_str("end_header\n");
    let mut out = header.into_bytes();
    out.reserve(cloud.len() * (12 + cloud.channels.len()));
    for (i, p) in cloud.positions.iter().enumerate() {
        for &c in p {
            out.extend_from_slice(&(c as i32).to_le_bytes());
        }
        for ch in &cloud.channels {
            out.push(ch[i]);
        }
    }
    out
}

pub fn read_ply_file(path: impl AsRef<Path>, bit_depth: Option<u8>) -> Result<PointCloud> {
    let bytes = std::fs::read(path)?;
    load_ply(&bytes, bit_depth)
}

pub fn write_ply_file(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<()> {
    std::fs::write(path, save_ply(cloud))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ascii(body: &str, props: &str, count: usize) -> Vec<u8> {
        format!("ply\nformat ascii 1.0\nelement vertex {count}\n{props}end_header\n{body}").into_bytes()
    }

    const XYZ_RGB: &str = "property float x\nproperty float y\nproperty float z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\n";

    #[test]
    fn two_points_in_morton_order() {
        let bytes = ascii("1 0 0 1 2 3\n0 0 0 10 20 30\n", XYZ_RGB, 2);
        let c = load_ply(&bytes, None).unwrap();
        assert_eq!(c.positions, vec![[0, 0, 0], [1, 0, 0]]);
        assert_eq!(c.channels[0], vec![10, 1]);
        assert_eq!(c.mode(), AttributeMode::Rgb);
    }

    #[test]
    fn duplicate_position_retained_once() {
        let bytes = ascii("2 2 2 1 1 1\n2 2 2 9 9 9\n", XYZ_RGB, 2);
        let c = load_ply(&bytes, None).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.channels[1], vec![1]);
    }

    #[test]
    fn cube_corners_in_morton_order() {
        let corners = [
            [1, 1, 1], [0, 1, 1], [1, 0, 1], [0, 0, 1],
            [1, 1, 0], [0, 1, 0], [1, 0, 0], [0, 0, 0],
        ];
        let body: String = corners.iter().map(|p| format!("{} {} {} 0 0 0\n", p[0], p[1], p[2])).collect();
        let c = load_ply(&ascii(&body, XYZ_RGB, 8), None).unwrap();
        // Brute-force order: sort by the interleaved key computed bit by bit.
        let mut expected: Vec<[u32; 3]> = corners.to_vec();
        expected.sort_by_key(|p| p[0] | p[1] << 1 | p[2] << 2);
        assert_eq!(c.positions, expected);
        assert_eq!(
            c.positions,
            vec![[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0], [0, 0, 1], [1, 0, 1], [0, 1, 1], [1, 1, 1]]
        );
    }

    #[test]
    fn rejects_non_integral_coordinates() {
        let bytes = ascii("0.5 0 0 1 2 3\n", XYZ_RGB, 1);
        assert!(matches!(load_ply(&bytes, None), Err(Error::Ply(_))));
    }

    #[test]
    fn rejects_coordinate_beyond_depth() {
        let bytes = ascii("300 0 0 1 2 3\n", XYZ_RGB, 1);
        assert!(load_ply(&bytes, Some(8)).is_err());
        assert!(load_ply(&bytes, Some(9)).is_ok());
    }

    #[test]
    fn rejects_missing_attributes() {
        let props = "property float x\nproperty float y\nproperty float z\n";
        assert!(load_ply(&ascii("0 0 0\n", props, 1), None).is_err());
    }

    #[test]
    fn rejects_malformed_header() {
        assert!(load_ply(b"ply\nformat ascii 1.0\nelement vertex 1\n", None).is_err());
        assert!(load_ply(b"nope\nend_header\n", None).is_err());
        assert!(load_ply(b"ply\nformat binary_big_endian 1.0\nend_header\n", None).is_err());
    }

    #[test]
    fn single_scalar_with_ignored_extras() {
        let props = "property int x\nproperty int y\nproperty int z\nproperty float nx\nproperty uchar reflectance\n";
        let c = load_ply(&ascii("3 0 0 0.5 200\n", props, 1), None).unwrap();
        assert_eq!(c.attributes, AttributeConfig::single("reflectance"));
        assert_eq!(c.channels[0], vec![200]);
    }

    #[test]
    fn skips_leading_elements_and_lists_in_binary() {
        let mut bytes = b"ply\nformat binary_little_endian 1.0\nelement face 1\nproperty list uchar int vertex_indices\nelement vertex 1\nproperty int x\nproperty int y\nproperty int z\nproperty uchar intensity\nend_header\n".to_vec();
        bytes.push(2);
        bytes.extend_from_slice(&7i32.to_le_bytes());
        bytes.extend_from_slice(&8i32.to_le_bytes());
        for v in [4i32, 5, 6] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        bytes.push(99);
        let c = load_ply(&bytes, None).unwrap();
        assert_eq!(c.positions, vec![[4, 5, 6]]);
        assert_eq!(c.channels[0], vec![99]);
    }

    #[test]
    fn empty_cloud_saves_valid_ply() {
        let c = PointCloud::empty(AttributeConfig::rgb(), 10);
        let bytes = save_ply(&c);
        let text = String::from_utf8_lossy(&bytes);
        assert!(text.contains("element vertex 0\n"));
        let back = load_ply(&bytes, None).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn header_declares_vertex_count() {
        let c = PointCloud::from_scalar(vec![[0, 0, 0], [1, 0, 0], [0, 1, 0]], "intensity", vec![1, 2, 3], None)
            .unwrap();
        let text = String::from_utf8_lossy(&save_ply(&c)).to_string();
        assert!(text.contains("element vertex 3\n"));
    }

    proptest! {
        #[test]
        fn save_load_roundtrip(points in prop::collection::vec((0u32..1024, 0u32..1024, 0u32..1024, any::<[u8; 3]>()), 0..200)) {
            let positions = points.iter().map(|p| [p.0, p.1, p.2]).collect();
            let colors: Vec<[u8; 3]> = points.iter().map(|p| p.3).collect();
            let c = PointCloud::from_rgb(positions, &colors, Some(10)).unwrap();
            let back = load_ply(&save_ply(&c), None).unwrap();
            prop_assert_eq!(back, c);
        }
    }

    #[test]
    fn geometry_only_load_matches_cloud_order() {
        let c = PointCloud::from_rgb(vec![[5, 1, 0], [0, 0, 0], [5, 1, 0], [2, 2, 2]], &[[1, 2, 3]; 4], None).unwrap();
        assert_eq!(load_geometry(&save_ply(&c)).unwrap(), c.positions);
        let bare = ascii("3 0 0\n0 0 1\n3 0 0\n", "property int x\nproperty int y\nproperty int z\n", 3);
        assert_eq!(load_geometry(&bare).unwrap(), vec![[0, 0, 1], [3, 0, 0]]);
    }
}
