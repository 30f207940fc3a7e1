//! OBJ and PLY readers and writers.
//!
//! Binary PLY is the lossless format: coordinates are written as `float` when
//! every value of the attribute is exactly representable in 32 bits and as
//! `double` otherwise, so a reload is always bit-identical.

use std::collections::HashMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{Point2, Point3, Vector3};

use super::{MeshError, OrientedPointSet, TriMesh};

/// On-disk mesh encodings understood by [`save_mesh`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    Obj,
    PlyAscii,
    PlyBinary,
}

impl MeshFormat {
    /// Guesses a format from the file extension; `.ply` maps to binary.
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "obj" => Some(MeshFormat::Obj),
            "ply" => Some(MeshFormat::PlyBinary),
            _ => None,
        }
    }
}

fn parse_err(location: impl Into<String>, message: impl Into<String>) -> MeshError {
    MeshError::Parse {
        location: location.into(),
        message: message.into(),
    }
}

/// Loads an OBJ or PLY mesh, dispatching on the extension and falling back to
/// the file header.
pub fn load_mesh(path: impl AsRef<Path>) -> Result<TriMesh, MeshError> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    let is_ply = match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("ply") => true,
        Some(e) if e.eq_ignore_ascii_case("obj") => false,
        _ => bytes.starts_with(b"ply"),
    };
    if is_ply {
        let ply = parse_ply(&bytes)?;
        ply.into_mesh()
    } else {
        let text = std::str::from_utf8(&bytes)
            .map_err(|e| parse_err(format!("byte {}", e.valid_up_to()), "invalid UTF-8"))?;
        parse_obj(text)
    }
}

pub fn save_mesh(mesh: &TriMesh, path: impl AsRef<Path>, format: MeshFormat) -> Result<(), MeshError> {
    let file = fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    match format {
        MeshFormat::Obj => write_obj(mesh, &mut w)?,
        MeshFormat::PlyAscii => write_ply(
            &mut w,
            false,
            mesh.vertices(),
            mesh.normals(),
            mesh.uvs(),
            Some(mesh.triangles()),
        )?,
        MeshFormat::PlyBinary => write_ply(
            &mut w,
            true,
            mesh.vertices(),
            mesh.normals(),
            mesh.uvs(),
            Some(mesh.triangles()),
        )?,
    }
    w.flush()?;
    Ok(())
}

/// Loads an oriented point cloud from a PLY file with `nx ny nz` properties.
/// Faces, if present, are ignored.
pub fn load_points(path: impl AsRef<Path>) -> Result<OrientedPointSet, MeshError> {
    let bytes = fs::read(path)?;
    let ply = parse_ply(&bytes)?;
    let normals = ply
        .normals
        .ok_or_else(|| parse_err("header", "point cloud requires nx, ny, nz properties"))?;
    OrientedPointSet::new(ply.positions, normals.into_iter().map(|n| n.normalize()).collect())
}

/// Writes an oriented point cloud as a face-less binary PLY.
pub fn save_points(points: &OrientedPointSet, path: impl AsRef<Path>) -> Result<(), MeshError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    write_ply(&mut w, true, points.points(), Some(points.normals()), None, None)?;
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// OBJ

fn parse_obj(text: &str) -> Result<TriMesh, MeshError> {
    let mut positions: Vec<Point3<f64>> = Vec::new();
    let mut texcoords: Vec<Point2<f64>> = Vec::new();
    let mut normals: Vec<Vector3<f64>> = Vec::new();
    // (v, vt, vn) corners, already triangulated
    let mut corners: Vec<[(usize, Option<usize>, Option<usize>); 3]> = Vec::new();

    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        let loc = || format!("line {}", lineno + 1);
        let mut tokens = line.split_whitespace();
        let Some(tag) = tokens.next() else { continue };
        let mut floats = |n: usize| -> Result<Vec<f64>, MeshError> {
            let vals: Vec<f64> = tokens
                .by_ref()
                .map(|t| t.parse::<f64>().map_err(|e| parse_err(loc(), format!("{t}: {e}"))))
                .collect::<Result<_, _>>()?;
            if vals.len() < n {
                return Err(parse_err(loc(), format!("expected {n} numbers, found {}", vals.len())));
            }
            Ok(vals)
        };
        match tag {
            "v" => {
                let v = floats(3)?;
                positions.push(Point3::new(v[0], v[1], v[2]));
            }
            "vt" => {
                let v = floats(2)?;
                texcoords.push(Point2::new(v[0], v[1]));
            }
            "vn" => {
                let v = floats(3)?;
                normals.push(Vector3::new(v[0], v[1], v[2]));
            }
            "f" => {
                let mut poly = Vec::new();
                for tok in tokens.by_ref() {
                    poly.push(parse_obj_corner(
                        tok,
                        positions.len(),
                        texcoords.len(),
                        normals.len(),
                        &loc(),
                    )?);
                }
                if poly.len() < 3 {
                    return Err(parse_err(loc(), "face with fewer than 3 vertices"));
                }
                for k in 1..poly.len() - 1 {
                    corners.push([poly[0], poly[k], poly[k + 1]]);
                }
            }
            _ => {}
        }
    }
    if corners.is_empty() {
        return Err(MeshError::Empty);
    }
    for (f, tri) in corners.iter().enumerate() {
        for &(v, _, _) in tri {
            if v >= positions.len() {
                return Err(MeshError::IndexOutOfRange {
                    triangle: f,
                    index: v,
                    count: positions.len(),
                });
            }
        }
    }

    // Keep the vertex array intact when every position carries at most one
    // (vt, vn) pair; otherwise split conflicting corners into new vertices.
    let has_uv = corners.iter().all(|t| t.iter().all(|c| c.1.is_some()));
    let has_n = corners.iter().all(|t| t.iter().all(|c| c.2.is_some()));
    let mut assigned: Vec<Option<(Option<usize>, Option<usize>)>> = vec![None; positions.len()];
    let mut split: HashMap<(usize, Option<usize>, Option<usize>), usize> = HashMap::new();
    let mut out_pos = positions.clone();
    let mut out_uv_idx: Vec<Option<usize>> = vec![None; positions.len()];
    let mut out_n_idx: Vec<Option<usize>> = vec![None; positions.len()];
    let mut triangles = Vec::with_capacity(corners.len());
    for tri in &corners {
        let mut out = [0usize; 3];
        for (k, &(v, vt, vn)) in tri.iter().enumerate() {
            let key = (if has_uv { vt } else { None }, if has_n { vn } else { None });
            out[k] = match assigned[v] {
                None => {
                    assigned[v] = Some(key);
                    out_uv_idx[v] = key.0;
                    out_n_idx[v] = key.1;
                    v
                }
                Some(existing) if existing == key => v,
                Some(_) => *split.entry((v, key.0, key.1)).or_insert_with(|| {
                    out_pos.push(positions[v]);
                    out_uv_idx.push(key.0);
                    out_n_idx.push(key.1);
                    out_pos.len() - 1
                }),
            };
        }
        triangles.push(out);
    }
    let mut mesh = TriMesh::new(out_pos, triangles)?;
    if has_uv {
        let uvs = out_uv_idx
            .iter()
            .map(|i| i.map(|i| texcoords[i]).unwrap_or_else(Point2::origin))
            .collect();
        mesh = mesh.with_uvs(uvs)?;
    }
    if has_n {
        let ns = out_n_idx
            .iter()
            .map(|i| i.map(|i| normals[i]).unwrap_or_else(Vector3::z))
            .map(|n| normalize_loaded(n))
            .collect::<Result<Vec<_>, _>>()?;
        mesh = mesh.with_normals(ns)?;
    }
    Ok(mesh)
}

fn normalize_loaded(n: Vector3<f64>) -> Result<Vector3<f64>, MeshError> {
    let len = n.norm();
    if len > 0.0 && len.is_finite() {
        Ok(n / len)
    } else {
        Err(parse_err("normals", "zero or non-finite normal"))
    }
}

fn parse_obj_corner(
    tok: &str,
    nv: usize,
    nt: usize,
    nn: usize,
    loc: &str,
) -> Result<(usize, Option<usize>, Option<usize>), MeshError> {
    let mut parts = tok.split('/');
    let resolve = |s: &str, count: usize| -> Result<Option<usize>, MeshError> {
        if s.is_empty() {
            return Ok(None);
        }
        let i: i64 = s
            .parse()
            .map_err(|_| parse_err(loc, format!("bad index '{s}'")))?;
        let idx = if i > 0 {
            (i - 1) as usize
        } else if i < 0 && (-i) as usize <= count {
            count - (-i) as usize
        } else {
            return Err(parse_err(loc, format!("bad index '{s}'")));
        };
        Ok(Some(idx))
    };
    let v = resolve(parts.next().unwrap_or(""), nv)?
        .ok_or_else(|| parse_err(loc, "missing vertex index"))?;
    let vt = resolve(parts.next().unwrap_or(""), nt)?;
    let vn = resolve(parts.next().unwrap_or(""), nn)?;
    if vt.is_some_and(|t| t >= nt) {
        return Err(parse_err(loc, "texture coordinate index out of range"));
    }
    if vn.is_some_and(|n| n >= nn) {
        return Err(parse_err(loc, "normal index out of range"));
    }
    Ok((v, vt, vn))
}

fn write_obj(mesh: &TriMesh, w: &mut impl Write) -> std::io::Result<()> {
    for v in mesh.vertices() {
        writeln!(w, "v {} {} {}", v.x, v.y, v.z)?;
    }
    if let Some(uvs) = mesh.uvs() {
        for t in uvs {
            writeln!(w, "vt {} {}", t.x, t.y)?;
        }
    }
    if let Some(ns) = mesh.normals() {
        for n in ns {
            writeln!(w, "vn {} {} {}", n.x, n.y, n.z)?;
        }
    }
    let (uv, n) = (mesh.uvs().is_some(), mesh.normals().is_some());
    for tri in mesh.triangles() {
        write!(w, "f")?;
        for &i in tri {
            let i = i + 1;
            match (uv, n) {
                (true, true) => write!(w, " {i}/{i}/{i}")?,
                (true, false) => write!(w, " {i}/{i}")?,
                (false, true) => write!(w, " {i}//{i}")?,
                (false, false) => write!(w, " {i}")?,
            }
        }
        writeln!(w)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// PLY

#[derive(Debug, Clone, Copy, PartialEq)]
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
            Scalar::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar(String, Scalar),
    List(String, Scalar, Scalar),
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

struct PlyData {
    positions: Vec<Point3<f64>>,
    normals: Option<Vec<Vector3<f64>>>,
    uvs: Option<Vec<Point2<f64>>>,
    faces: Vec<Vec<i64>>,
}

impl PlyData {
    fn into_mesh(self) -> Result<TriMesh, MeshError> {
        let mut triangles = Vec::new();
        for (f, face) in self.faces.iter().enumerate() {
            if face.len() < 3 {
                return Err(parse_err(format!("face {f}"), "face with fewer than 3 vertices"));
            }
            let idx = |i: i64| -> Result<usize, MeshError> {
                if i < 0 || i as usize >= self.positions.len() {
                    Err(MeshError::IndexOutOfRange {
                        triangle: f,
                        index: i.max(0) as usize,
                        count: self.positions.len(),
                    })
                } else {
                    Ok(i as usize)
                }
            };
            for k in 1..face.len() - 1 {
                triangles.push([idx(face[0])?, idx(face[k])?, idx(face[k + 1])?]);
            }
        }
        let mut mesh = TriMesh::new(self.positions, triangles)?;
        if let Some(uvs) = self.uvs {
            mesh = mesh.with_uvs(uvs)?;
        }
        if let Some(ns) = self.normals {
            let ns = ns
                .into_iter()
                .map(normalize_loaded)
                .collect::<Result<Vec<_>, _>>()?;
            mesh = mesh.with_normals(ns)?;
        }
        Ok(mesh)
    }
}

fn parse_ply(bytes: &[u8]) -> Result<PlyData, MeshError> {
    // header
    let mut pos = 0usize;
    let mut lines = Vec::new();
    loop {
        let end = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| parse_err("header", "unterminated header"))?;
        let line = std::str::from_utf8(&bytes[pos..pos + end])
            .map_err(|_| parse_err(format!("byte {pos}"), "header is not UTF-8"))?
            .trim_end_matches('\r')
            .trim()
            .to_string();
        pos += end + 1;
        let done = line == "end_header";
        lines.push(line);
        if done {
            break;
        }
    }
    if lines.first().map(String::as_str) != Some("ply") {
        return Err(parse_err("line 1", "missing 'ply' magic"));
    }
    let mut binary = None;
    let mut elements: Vec<Element> = Vec::new();
    for (i, line) in lines.iter().enumerate().skip(1) {
        let loc = format!("line {}", i + 1);
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.first().copied() {
            Some("format") => {
                binary = Some(match tok.get(1).copied() {
                    Some("ascii") => false,
                    Some("binary_little_endian") => true,
                    Some(other) => return Err(MeshError::UnsupportedFormat(format!("PLY {other}"))),
                    None => return Err(parse_err(loc, "missing format")),
                });
            }
            Some("element") => {
                if tok.len() < 3 {
                    return Err(parse_err(loc, "malformed element"));
                }
                let count = tok[2]
                    .parse()
                    .map_err(|_| parse_err(loc.clone(), "bad element count"))?;
                elements.push(Element {
                    name: tok[1].to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            Some("property") => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| parse_err(loc.clone(), "property before element"))?;
                let bad = || parse_err(loc.clone(), "malformed property");
                if tok.get(1) == Some(&"list") {
                    if tok.len() < 5 {
                        return Err(bad());
                    }
                    let c = Scalar::parse(tok[2]).ok_or_else(bad)?;
                    let v = Scalar::parse(tok[3]).ok_or_else(bad)?;
                    el.properties.push(Property::List(tok[4].to_string(), c, v));
                } else {
                    if tok.len() < 3 {
                        return Err(bad());
                    }
                    let s = Scalar::parse(tok[1]).ok_or_else(bad)?;
                    el.properties.push(Property::Scalar(tok[2].to_string(), s));
                }
            }
            _ => {}
        }
    }
    let binary = binary.ok_or_else(|| parse_err("header", "missing format line"))?;

    let mut reader: Box<dyn ValueReader> = if binary {
        Box::new(BinaryReader { bytes, pos })
    } else {
        Box::new(AsciiReader::new(bytes, pos, lines.len()))
    };

    let mut data = PlyData {
        positions: Vec::new(),
        normals: None,
        uvs: None,
        faces: Vec::new(),
    };
    for el in &elements {
        let names: Vec<&str> = el
            .properties
            .iter()
            .map(|p| match p {
                Property::Scalar(n, _) | Property::List(n, _, _) => n.as_str(),
            })
            .collect();
        let find = |n: &str| names.iter().position(|&x| x == n);
        match el.name.as_str() {
            "vertex" => {
                let (xi, yi, zi) = match (find("x"), find("y"), find("z")) {
                    (Some(x), Some(y), Some(z)) => (x, y, z),
                    _ => return Err(parse_err("header", "vertex element lacks x, y, z")),
                };
                let ni = match (find("nx"), find("ny"), find("nz")) {
                    (Some(a), Some(b), Some(c)) => Some((a, b, c)),
                    _ => None,
                };
                let ti = [("u", "v"), ("s", "t"), ("texture_u", "texture_v")]
                    .iter()
                    .find_map(|(a, b)| Some((find(a)?, find(b)?)));
                let mut normals = Vec::new();
                let mut uvs = Vec::new();
                let mut row = vec![0.0; el.properties.len()];
                for _ in 0..el.count {
                    for (k, p) in el.properties.iter().enumerate() {
                        row[k] = match p {
                            Property::Scalar(_, s) => reader.scalar(*s)?,
                            Property::List(_, c, s) => {
                                reader.list(*c, *s)?;
                                0.0
                            }
                        };
                    }
                    data.positions.push(Point3::new(row[xi], row[yi], row[zi]));
                    if let Some((a, b, c)) = ni {
                        normals.push(Vector3::new(row[a], row[b], row[c]));
                    }
                    if let Some((a, b)) = ti {
                        uvs.push(Point2::new(row[a], row[b]));
                    }
                }
                if ni.is_some() {
                    data.normals = Some(normals);
                }
                if ti.is_some() {
                    data.uvs = Some(uvs);
                }
            }
            "face" => {
                let li = find("vertex_indices")
                    .or_else(|| find("vertex_index"))
                    .ok_or_else(|| parse_err("header", "face element lacks vertex_indices"))?;
                for _ in 0..el.count {
                    for (k, p) in el.properties.iter().enumerate() {
                        match p {
                            Property::Scalar(_, s) => {
                                reader.scalar(*s)?;
                            }
                            Property::List(_, c, s) => {
                                let vals = reader.list(*c, *s)?;
                                if k == li {
                                    data.faces.push(vals.into_iter().map(|v| v as i64).collect());
                                }
                            }
                        }
                    }
                }
            }
            _ => {
                for _ in 0..el.count {
                    for p in &el.properties {
                        match p {
                            Property::Scalar(_, s) => {
                                reader.scalar(*s)?;
                            }
                            Property::List(_, c, s) => {
                                reader.list(*c, *s)?;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(data)
}

trait ValueReader {
    fn scalar(&mut self, s: Scalar) -> Result<f64, MeshError>;
    fn list(&mut self, count: Scalar, s: Scalar) -> Result<Vec<f64>, MeshError> {
        let n = self.scalar(count)?;
        if n < 0.0 {
            return Err(parse_err("list", "negative list length"));
        }
        (0..n as usize).map(|_| self.scalar(s)).collect()
    }
}

struct BinaryReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl ValueReader for BinaryReader<'_> {
    fn scalar(&mut self, s: Scalar) -> Result<f64, MeshError> {
        let n = s.size();
        if self.pos + n > self.bytes.len() {
            return Err(parse_err(format!("byte {}", self.pos), "unexpected end of data"));
        }
        let v = s.read_le(&self.bytes[self.pos..self.pos + n]);
        self.pos += n;
        Ok(v)
    }
}

struct AsciiReader<'a> {
    tokens: std::iter::Peekable<Box<dyn Iterator<Item = (usize, &'a str)> + 'a>>,
}

impl<'a> AsciiReader<'a> {
    fn new(bytes: &'a [u8], pos: usize, header_lines: usize) -> Self {
        let text = std::str::from_utf8(&bytes[pos..]).unwrap_or("");
        let it: Box<dyn Iterator<Item = (usize, &'a str)> + 'a> = Box::new(
            text.lines()
                .enumerate()
                .flat_map(move |(i, l)| l.split_whitespace().map(move |t| (i + header_lines + 1, t))),
        );
        Self {
            tokens: it.peekable(),
        }
    }
}

impl ValueReader for AsciiReader<'_> {
    fn scalar(&mut self, _s: Scalar) -> Result<f64, MeshError> {
        let (line, tok) = self
            .tokens
            .next()
            .ok_or_else(|| parse_err("end of file", "unexpected end of data"))?;
        tok.parse::<f64>()
            .map_err(|_| parse_err(format!("line {line}"), format!("bad number '{tok}'")))
    }
}

fn exact_in_f32(values: impl Iterator<Item = f64>) -> bool {
    let mut all = true;
    for v in values {
        if (v as f32) as f64 != v {
            all = false;
            break;
        }
    }
    all
}

fn write_ply(
    w: &mut impl Write,
    binary: bool,
    positions: &[Point3<f64>],
    normals: Option<&[Vector3<f64>]>,
    uvs: Option<&[Point2<f64>]>,
    triangles: Option<&[[usize; 3]]>,
) -> std::io::Result<()> {
    let ty = |exact: bool| if exact && binary { "float" } else { "double" };
    let pos_exact = exact_in_f32(positions.iter().flat_map(|p| p.coords.iter().copied()));
    let n_exact = normals.map(|ns| exact_in_f32(ns.iter().flat_map(|n| n.iter().copied())));
    let uv_exact = uvs.map(|ts| exact_in_f32(ts.iter().flat_map(|t| t.coords.iter().copied())));

    writeln!(w, "ply")?;
    writeln!(
        w,
        "format {} 1.0",
        if binary { "binary_little_endian" } else { "ascii" }
    )?;
    writeln!(w, "element vertex {}", positions.len())?;
    for c in ["x", "y", "z"] {
        writeln!(w, "property {} {c}", ty(pos_exact))?;
    }
    if let Some(e) = n_exact {
        for c in ["nx", "ny", "nz"] {
            writeln!(w, "property {} {c}", ty(e))?;
        }
    }
    if let Some(e) = uv_exact {
        for c in ["u", "v"] {
            writeln!(w, "property {} {c}", ty(e))?;
        }
    }
    if let Some(tris) = triangles {
        writeln!(w, "element face {}", tris.len())?;
        writeln!(w, "property list uchar int vertex_indices")?;
    }
    writeln!(w, "end_header")?;

    let put = |w: &mut dyn Write, v: f64, exact: bool| -> std::io::Result<()> {
        if binary {
            if exact {
                w.write_all(&(v as f32).to_le_bytes())
            } else {
                w.write_all(&v.to_le_bytes())
            }
        } else {
            write!(w, "{v} ")
        }
    };
    for (i, p) in positions.iter().enumerate() {
        for &c in p.coords.iter() {
            put(w, c, pos_exact)?;
        }
        if let (Some(ns), Some(e)) = (normals, n_exact) {
            for &c in ns[i].iter() {
                put(w, c, e)?;
            }
        }
        if let (Some(ts), Some(e)) = (uvs, uv_exact) {
            for &c in ts[i].coords.iter() {
                put(w, c, e)?;
            }
        }
        if !binary {
            writeln!(w)?;
        }
    }
    if let Some(tris) = triangles {
        for t in tris {
            if binary {
                w.write_all(&[3u8])?;
                for &i in t {
                    w.write_all(&(i as i32).to_le_bytes())?;
                }
            } else {
                writeln!(w, "3 {} {} {}", t[0], t[1], t[2])?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::unit_grid;

    fn tmp(name: &str) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(name);
        (dir, p)
    }

    #[test]
    fn minimal_obj() {
        let (_d, p) = tmp("tri.obj");
        fs::write(&p, "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n").unwrap();
        let m = load_mesh(&p).unwrap();
        assert_eq!((m.vertex_count(), m.triangle_count()), (3, 1));
    }

    #[test]
    fn obj_out_of_range_face() {
        let (_d, p) = tmp("bad.obj");
        fs::write(&p, "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 5\n").unwrap();
        assert!(matches!(
            load_mesh(&p),
            Err(MeshError::IndexOutOfRange { index: 4, count: 3, .. })
        ));
    }

    #[test]
    fn obj_parse_error_has_line() {
        let (_d, p) = tmp("bad.obj");
        fs::write(&p, "v 0 0 0\nv 1 zero 0\n").unwrap();
        let err = load_mesh(&p).unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
    }

    #[test]
    fn obj_quads_and_negative_indices() {
        let (_d, p) = tmp("quad.obj");
        fs::write(&p, "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf -4 -3 -2 -1\n").unwrap();
        let m = load_mesh(&p).unwrap();
        assert_eq!(m.triangles(), &[[0, 1, 2], [0, 2, 3]]);
    }

    #[test]
    fn obj_split_uv_seams() {
        let (_d, p) = tmp("seam.obj");
        fs::write(
            &p,
            "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 1 1 0\nvt 0 0\nvt 1 0\nvt 0 1\nvt 1 1\nvt 0.5 0.5\n\
             f 1/1 2/2 3/3\nf 2/5 4/4 3/3\n",
        )
        .unwrap();
        let m = load_mesh(&p).unwrap();
        assert_eq!(m.vertex_count(), 5);
        assert_eq!(m.uvs().unwrap()[4], Point2::new(0.5, 0.5));
        assert_eq!(m.vertices()[4], m.vertices()[1]);
    }

    #[test]
    fn unit_square_roundtrips_all_formats() {
        let m = unit_grid(1);
        for (fmt, name) in [
            (MeshFormat::Obj, "m.obj"),
            (MeshFormat::PlyAscii, "a.ply"),
            (MeshFormat::PlyBinary, "b.ply"),
        ] {
            let (_d, p) = tmp(name);
            save_mesh(&m, &p, fmt).unwrap();
            let back = load_mesh(&p).unwrap();
            assert_eq!(back.triangles(), m.triangles());
            assert_eq!(back.vertices(), m.vertices());
            assert_eq!(back.uvs(), m.uvs());
        }
    }

    #[test]
    fn binary_ply_uses_double_when_needed() {
        let m = TriMesh::new(
            vec![
                Point3::new(0.1, 0.0, 0.0),
                Point3::new(1.0, 0.0, 0.0),
                Point3::new(0.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let (_d, p) = tmp("d.ply");
        save_mesh(&m, &p, MeshFormat::PlyBinary).unwrap();
        let text = fs::read(&p).unwrap();
        assert!(String::from_utf8_lossy(&text).contains("property double x"));
        assert_eq!(load_mesh(&p).unwrap().vertices(), m.vertices());
    }

    #[test]
    fn truncated_binary_ply() {
        let m = unit_grid(2);
        let (_d, p) = tmp("t.ply");
        save_mesh(&m, &p, MeshFormat::PlyBinary).unwrap();
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 5]).unwrap();
        assert!(matches!(load_mesh(&p), Err(MeshError::Parse { .. })));
    }

    #[test]
    fn points_roundtrip() {
        let pts = OrientedPointSet::new(
            vec![Point3::new(0.25, 0.5, 1.0), Point3::new(0.1, 0.2, 0.3)],
            vec![Vector3::z(), Vector3::x()],
        )
        .unwrap();
        let (_d, p) = tmp("p.ply");
        save_points(&pts, &p).unwrap();
        let back = load_points(&p).unwrap();
        assert_eq!(back.points(), pts.points());
        assert_eq!(back.normals(), pts.normals());
    }
}
