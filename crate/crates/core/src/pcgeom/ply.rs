//! Minimal PLY 1.0 reader/writer for point clouds (ASCII and binary
//! little-endian). Only the `vertex` element is loaded; `x`, `y`, `z` are
//! required and `nx`, `ny`, `nz` are picked up when all three are present.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{PointCloud, VoxelCloud};
use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PropType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl PropType {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Self::I8 => b[0] as i8 as f64,
            Self::U8 => b[0] as f64,
            Self::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Self::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Self::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug)]
struct Element {
    name: String,
    count: usize,
    props: Vec<(String, PropType)>,
    has_list: bool,
}

#[derive(Debug)]
struct Header {
    format: PlyFormat,
    elements: Vec<Element>,
    lines: usize,
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

fn read_header<R: BufRead>(r: &mut R) -> Result<Header> {
    let mut line = String::new();
    let mut lineno = 0usize;
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        line.clear();
        if r.read_line(&mut line)? == 0 {
            return Err(parse_err(lineno + 1, "unexpected end of file in header"));
        }
        lineno += 1;
        let toks: Vec<&str> = line.split_whitespace().collect();
        if lineno == 1 {
            if toks != ["ply"] {
                return Err(parse_err(1, "missing 'ply' magic"));
            }
            continue;
        }
        match toks.first().copied() {
            None | Some("comment") | Some("obj_info") => {}
            Some("format") => {
                format = Some(match (toks.get(1).copied(), toks.get(2).copied()) {
                    (Some("ascii"), Some("1.0")) => PlyFormat::Ascii,
                    (Some("binary_little_endian"), Some("1.0")) => PlyFormat::BinaryLittleEndian,
                    (Some(f), _) => {
                        return Err(Error::UnsupportedFormat(format!("PLY format '{f}'")))
                    }
                    _ => return Err(parse_err(lineno, "malformed format line")),
                });
            }
            Some("element") => {
                let (name, count) = match toks.as_slice() {
                    [_, name, count] => (
                        name.to_string(),
                        count
                            .parse::<usize>()
                            .map_err(|_| parse_err(lineno, format!("bad element count '{count}'")))?,
                    ),
                    _ => return Err(parse_err(lineno, "malformed element line")),
                };
                elements.push(Element { name, count, props: Vec::new(), has_list: false });
            }
            Some("property") => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| parse_err(lineno, "property before any element"))?;
                match toks.as_slice() {
                    [_, "list", _, _, _] => el.has_list = true,
                    [_, ty, name] => {
                        let ty = PropType::parse(ty).ok_or_else(|| {
                            Error::UnsupportedFormat(format!("property type '{ty}' (line {lineno})"))
                        })?;
                        el.props.push((name.to_string(), ty));
                    }
                    _ => return Err(parse_err(lineno, "malformed property line")),
                }
            }
            Some("end_header") => break,
            Some(other) => return Err(parse_err(lineno, format!("unknown header keyword '{other}'"))),
        }
    }
    let format = format.ok_or_else(|| parse_err(lineno, "missing format line"))?;
    Ok(Header { format, elements, lines: lineno })
}

/// Reads a PLY file into a point cloud; normals are renormalized to unit
/// length.
pub fn read_ply<T: Scalar>(path: impl AsRef<Path>) -> Result<PointCloud<T>> {
    let mut r = BufReader::new(File::open(path)?);
    read_ply_from(&mut r)
}

pub fn read_ply_from<T: Scalar, R: BufRead>(r: &mut R) -> Result<PointCloud<T>> {
    let header = read_header(r)?;
    let mut line_no = header.lines;
    let mut vertex_rows: Option<Vec<Vec<f64>>> = None;
    let mut vertex_props: &[(String, PropType)] = &[];
    let mut line = String::new();

    for el in &header.elements {
        let is_vertex = el.name == "vertex";
        if el.has_list {
            if is_vertex {
                return Err(Error::UnsupportedFormat("list property in vertex element".into()));
            }
            if vertex_rows.is_some() {
                break;
            }
            return Err(Error::UnsupportedFormat(format!(
                "list-valued element '{}' before vertices",
                el.name
            )));
        }
        let mut rows = Vec::with_capacity(if is_vertex { el.count } else { 0 });
        match header.format {
            PlyFormat::Ascii => {
                for _ in 0..el.count {
                    line.clear();
                    line_no += 1;
                    if r.read_line(&mut line)? == 0 {
                        return Err(parse_err(line_no, "unexpected end of file in body"));
                    }
                    if !is_vertex {
                        continue;
                    }
                    let vals: Vec<f64> = line
                        .split_whitespace()
                        .map(|t| t.parse::<f64>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| parse_err(line_no, "non-numeric vertex value"))?;
                    if vals.len() != el.props.len() {
                        return Err(parse_err(
                            line_no,
                            format!("expected {} values, found {}", el.props.len(), vals.len()),
                        ));
                    }
                    rows.push(vals);
                }
            }
            PlyFormat::BinaryLittleEndian => {
                let stride: usize = el.props.iter().map(|p| p.1.size()).sum();
                let mut buf = vec![0u8; stride];
                for _ in 0..el.count {
                    r.read_exact(&mut buf).map_err(|_| {
                        parse_err(line_no, format!("binary body of '{}' truncated", el.name))
                    })?;
                    if !is_vertex {
                        continue;
                    }
                    let mut off = 0;
                    let vals = el
                        .props
                        .iter()
                        .map(|(_, ty)| {
                            let v = ty.read_le(&buf[off..]);
                            off += ty.size();
                            v
                        })
                        .collect();
                    rows.push(vals);
                }
            }
        }
        if is_vertex {
            vertex_rows = Some(rows);
            vertex_props = &el.props;
        }
    }

    let rows = vertex_rows.ok_or_else(|| parse_err(header.lines, "no vertex element"))?;
    let col = |name: &str| vertex_props.iter().position(|(n, _)| n == name);
    let (x, y, z) = match (col("x"), col("y"), col("z")) {
        (Some(x), Some(y), Some(z)) => (x, y, z),
        _ => return Err(parse_err(header.lines, "vertex element lacks x, y, z")),
    };
    let points = rows.iter().map(|r| [T::of(r[x]), T::of(r[y]), T::of(r[z])]).collect();
    let mut pc = PointCloud::new(points)?;
    if let (Some(nx), Some(ny), Some(nz)) = (col("nx"), col("ny"), col("nz")) {
        let mut normals = Vec::with_capacity(rows.len());
        for (i, r) in rows.iter().enumerate() {
            let n = [r[nx], r[ny], r[nz]];
            let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
            if !(len > 0.0 && len.is_finite()) {
                return Err(parse_err(header.lines + 1 + i, "zero-length normal"));
            }
            normals.push(n.map(|v| T::of(v / len)));
        }
        // Renormalize again after the cast so f32 normals stay within tolerance.
        let normals = normals
            .into_iter()
            .map(|n| {
                let len = n.iter().map(|v| v.f64() * v.f64()).sum::<f64>().sqrt();
                n.map(|v| T::of(v.f64() / len))
            })
            .collect();
        pc = pc.with_normals(normals)?;
    }
    Ok(pc)
}

/// Anything that can be written as a PLY vertex list.
pub trait PlyVertices {
    /// Property names and whether they are integer valued.
    fn columns(&self) -> Vec<&'static str>;
    fn integer(&self) -> bool;
    fn rows(&self) -> Box<dyn Iterator<Item = Vec<f64>> + '_>;
    fn count(&self) -> usize;
}

impl PlyVertices for VoxelCloud {
    fn columns(&self) -> Vec<&'static str> {
        vec!["x", "y", "z"]
    }
    fn integer(&self) -> bool {
        true
    }
    fn rows(&self) -> Box<dyn Iterator<Item = Vec<f64>> + '_> {
        Box::new(self.coords().iter().map(|c| c.iter().map(|&v| v as f64).collect()))
    }
    fn count(&self) -> usize {
        self.len()
    }
}

impl<T: Scalar> PlyVertices for PointCloud<T> {
    fn columns(&self) -> Vec<&'static str> {
        if self.normals().is_some() {
            vec!["x", "y", "z", "nx", "ny", "nz"]
        } else {
            vec!["x", "y", "z"]
        }
    }
    fn integer(&self) -> bool {
        false
    }
    fn rows(&self) -> Box<dyn Iterator<Item = Vec<f64>> + '_> {
        Box::new(self.points().iter().enumerate().map(move |(i, p)| {
            let mut row: Vec<f64> = p.iter().map(|v| v.f64()).collect();
            if let Some(n) = self.normals() {
                row.extend(n[i].iter().map(|v| v.f64()));
            }
            row
        }))
    }
    fn count(&self) -> usize {
        self.len()
    }
}

/// Writes voxel clouds with `int` properties and point clouds with `float`
/// properties.
pub fn write_ply<C: PlyVertices + ?Sized>(
    cloud: &C,
    path: impl AsRef<Path>,
    format: PlyFormat,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_ply_to(cloud, &mut w, format)?;
    w.flush()?;
    Ok(())
}

pub fn write_ply_to<C: PlyVertices + ?Sized, W: Write>(
    cloud: &C,
    w: &mut W,
    format: PlyFormat,
) -> Result<()> {
    let ty = if cloud.integer() { "int" } else { "float" };
    writeln!(w, "ply")?;
    match format {
        PlyFormat::Ascii => writeln!(w, "format ascii 1.0")?,
        PlyFormat::BinaryLittleEndian => writeln!(w, "format binary_little_endian 1.0")?,
    }
    writeln!(w, "element vertex {}", cloud.count())?;
    for c in cloud.columns() {
        writeln!(w, "property {ty} {c}")?;
    }
    writeln!(w, "end_header")?;
    for row in cloud.rows() {
        match format {
            PlyFormat::Ascii => {
                let toks: Vec<String> = if cloud.integer() {
                    row.iter().map(|v| format!("{}", *v as i64)).collect()
                } else {
                    // Shortest round-trip representation of the f32 value.
                    row.iter().map(|v| format!("{}", *v as f32)).collect()
                };
                writeln!(w, "{}", toks.join(" "))?;
            }
            PlyFormat::BinaryLittleEndian => {
                for v in row {
                    if cloud.integer() {
                        w.write_all(&(v as i32).to_le_bytes())?;
                    } else {
                        w.write_all(&(v as f32).to_le_bytes())?;
                    }
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn parse(s: &[u8]) -> Result<PointCloud<f64>> {
        read_ply_from(&mut Cursor::new(s))
    }

    #[test]
    fn ascii_three_vertices() {
        let src = b"ply\nformat ascii 1.0\ncomment hi\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\nend_header\n0 0 0\n1 2 3\n-1.5 0.25 4\n";
        let pc = parse(src).unwrap();
        assert_eq!(pc.points(), &[[0.0, 0.0, 0.0], [1.0, 2.0, 3.0], [-1.5, 0.25, 4.0]]);
        assert!(pc.normals().is_none());
    }

    #[test]
    fn normals_are_renormalized() {
        let src = b"ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nproperty float nx\nproperty float ny\nproperty float nz\nend_header\n0 0 0 0 0 2\n1 1 1 3 4 0\n";
        let pc = parse(src).unwrap();
        let n = pc.normals().unwrap();
        for v in n {
            let len = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            assert!((len - 1.0).abs() < 1e-12);
        }
        assert!((n[1][0] - 0.6).abs() < 1e-12);
    }

    #[test]
    fn malformed_header_reports_line() {
        let src = b"ply\nformat ascii 1.0\nelement vertex x\n";
        match parse(src) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let src = b"ply\nformat ascii 1.0\nelement vertex 1\nbogus\nend_header\n";
        assert!(matches!(parse(src), Err(Error::Parse { line: 4, .. })));
    }

    #[test]
    fn unsupported_property_type() {
        let src = b"ply\nformat ascii 1.0\nelement vertex 1\nproperty float128 x\nend_header\n";
        assert!(matches!(parse(src), Err(Error::UnsupportedFormat(_))));
        let src = b"ply\nformat binary_big_endian 1.0\nelement vertex 1\nend_header\n";
        assert!(matches!(parse(src), Err(Error::UnsupportedFormat(_))));
    }

    #[test]
    fn skips_faces_after_vertices() {
        let src = b"ply\nformat ascii 1.0\nelement vertex 1\nproperty int x\nproperty int y\nproperty int z\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n7 8 9\n3 0 0 0\n";
        assert_eq!(parse(src).unwrap().points(), &[[7.0, 8.0, 9.0]]);
    }

    #[test]
    fn single_voxel_round_trip() {
        let vc = VoxelCloud::new(4, vec![[0, 0, 0]]).unwrap();
        for fmt in [PlyFormat::Ascii, PlyFormat::BinaryLittleEndian] {
            let mut buf = Vec::new();
            write_ply_to(&vc, &mut buf, fmt).unwrap();
            let pc: PointCloud<f64> = parse(&buf).unwrap();
            assert_eq!(pc.points(), &[[0.0, 0.0, 0.0]]);
        }
    }
}
