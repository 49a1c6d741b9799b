//! Binary little-endian PLY using the 3DGS vertex property names.
//!
//! Positions, SH degree-0 color (`f_dc_*`), opacity logit, log-scale and
//! rotation follow the usual 3DGS layout. Five extension properties carry
//! the equilibrium anchors: `eq_x eq_y eq_z eq_t_pos eq_t_scale`. Files
//! without them load with `mu_eq = mu` and both time anchors at 0.5.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use thiserror::Error;

use super::{quat_normalize, Aabb, GaussError, GaussianPrimitive, Scene, DEFAULT_T_EQ};

/// Zeroth-order real spherical harmonic.
const SH_C0: f64 = 0.282_094_791_773_878_14;

pub const SCENE_PROPERTIES: [&str; 19] = [
    "x",
    "y",
    "z",
    "f_dc_0",
    "f_dc_1",
    "f_dc_2",
    "opacity",
    "scale_0",
    "scale_1",
    "scale_2",
    "rot_0",
    "rot_1",
    "rot_2",
    "rot_3",
    "eq_x",
    "eq_y",
    "eq_z",
    "eq_t_pos",
    "eq_t_scale",
];

#[derive(Debug, Error)]
pub enum PlyError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("byte 0: missing `ply` magic")]
    MissingMagic,
    #[error("byte {offset}: malformed header line {line:?}")]
    MalformedHeader { offset: usize, line: String },
    #[error("byte {offset}: unsupported format {format:?}")]
    UnsupportedFormat { offset: usize, format: String },
    #[error("byte {offset}: unknown property type {ty:?}")]
    UnknownType { offset: usize, ty: String },
    #[error("byte {offset}: header has no `end_header`")]
    UnterminatedHeader { offset: usize },
    #[error("missing vertex property {0:?}")]
    MissingProperty(String),
    #[error("byte {offset}: vertex data truncated, need {expected} bytes, have {available}")]
    Truncated {
        offset: usize,
        expected: usize,
        available: usize,
    },
    #[error("byte {offset}: {extra} bytes after the declared elements")]
    TrailingData { offset: usize, extra: usize },
    #[error(transparent)]
    Gauss(#[from] GaussError),
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

    fn read(self, b: &[u8]) -> f64 {
        match self {
            Self::I8 => b[0] as i8 as f64,
            Self::U8 => b[0] as f64,
            Self::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Self::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Self::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

/// The vertex element of a PLY file as plain rows.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct VertexTable {
    pub names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub comments: Vec<String>,
}

impl VertexTable {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

/// Writes every property as `float`.
pub fn write_vertex_table(w: &mut impl Write, table: &VertexTable) -> io::Result<()> {
    let mut header = String::from("ply\nformat binary_little_endian 1.0\n");
    for c in &table.comments {
        header.push_str("comment ");
        header.push_str(c);
        header.push('\n');
    }
    header.push_str(&format!("element vertex {}\n", table.rows.len()));
    for n in &table.names {
        header.push_str(&format!("property float {n}\n"));
    }
    header.push_str("end_header\n");
    w.write_all(header.as_bytes())?;
    let mut buf = Vec::with_capacity(table.rows.len() * table.names.len() * 4);
    for row in &table.rows {
        debug_assert_eq!(row.len(), table.names.len());
        for &v in row {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    w.write_all(&buf)
}

struct Element {
    name: String,
    count: usize,
    props: Vec<(String, Scalar)>,
}

pub fn read_vertex_table(bytes: &[u8]) -> Result<VertexTable, PlyError> {
    if !bytes.starts_with(b"ply\n") && !bytes.starts_with(b"ply\r\n") {
        return Err(PlyError::MissingMagic);
    }
    let mut offset = 0;
    let mut comments = Vec::new();
    let mut elements: Vec<Element> = Vec::new();
    let mut saw_format = false;
    loop {
        let Some(nl) = bytes[offset..].iter().position(|&b| b == b'\n') else {
            return Err(PlyError::UnterminatedHeader { offset });
        };
        let raw = &bytes[offset..offset + nl];
        let line_start = offset;
        offset += nl + 1;
        let line = String::from_utf8_lossy(raw)
            .trim_end_matches('\r')
            .to_string();
        let malformed = || PlyError::MalformedHeader {
            offset: line_start,
            line: line.clone(),
        };
        let mut words = line.split_whitespace();
        match words.next() {
            Some("ply") if line_start == 0 => {}
            Some("format") => {
                let fmt = words.next().unwrap_or("");
                if fmt != "binary_little_endian" {
                    return Err(PlyError::UnsupportedFormat {
                        offset: line_start,
                        format: fmt.to_string(),
                    });
                }
                saw_format = true;
            }
            Some("comment") | Some("obj_info") => {
                comments.push(line.splitn(2, ' ').nth(1).unwrap_or("").to_string());
            }
            Some("element") => {
                let name = words.next().ok_or_else(malformed)?;
                let count = words
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(malformed)?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    props: Vec::new(),
                });
            }
            Some("property") => {
                let ty = words.next().ok_or_else(malformed)?;
                if ty == "list" {
                    return Err(PlyError::UnknownType {
                        offset: line_start,
                        ty: "list".into(),
                    });
                }
                let scalar = Scalar::parse(ty).ok_or_else(|| PlyError::UnknownType {
                    offset: line_start,
                    ty: ty.to_string(),
                })?;
                let name = words.next().ok_or_else(malformed)?;
                elements
                    .last_mut()
                    .ok_or_else(malformed)?
                    .props
                    .push((name.to_string(), scalar));
            }
            Some("end_header") => break,
            _ => return Err(malformed()),
        }
    }
    if !saw_format {
        return Err(PlyError::MalformedHeader {
            offset: 0,
            line: "missing format line".into(),
        });
    }

    let mut table = VertexTable {
        comments,
        ..Default::default()
    };
    let mut found_vertex = false;
    for el in &elements {
        let stride: usize = el.props.iter().map(|p| p.1.size()).sum();
        let need = stride * el.count;
        let available = bytes.len() - offset;
        if need > available {
            return Err(PlyError::Truncated {
                offset,
                expected: need,
                available,
            });
        }
        if el.name == "vertex" && !found_vertex {
            found_vertex = true;
            table.names = el.props.iter().map(|p| p.0.clone()).collect();
            table.rows.reserve(el.count);
            for i in 0..el.count {
                let mut at = offset + i * stride;
                let mut row = Vec::with_capacity(el.props.len());
                for (_, ty) in &el.props {
                    row.push(ty.read(&bytes[at..]));
                    at += ty.size();
                }
                table.rows.push(row);
            }
        }
        offset += need;
    }
    if offset != bytes.len() {
        return Err(PlyError::TrailingData {
            offset,
            extra: bytes.len() - offset,
        });
    }
    Ok(table)
}

fn bounds_comment(b: &Aabb) -> String {
    format!(
        "bounds {} {} {} {} {} {}",
        b.min[0], b.min[1], b.min[2], b.max[0], b.max[1], b.max[2]
    )
}

fn parse_bounds(comments: &[String]) -> Option<Aabb> {
    comments.iter().find_map(|c| {
        let rest = c.strip_prefix("bounds ")?;
        let v: Vec<f64> = rest
            .split_whitespace()
            .map(|w| w.parse().ok())
            .collect::<Option<_>>()?;
        (v.len() == 6).then(|| Aabb::new([v[0], v[1], v[2]], [v[3], v[4], v[5]]))
    })
}

/// Rows in [`SCENE_PROPERTIES`] order.
pub(crate) fn primitive_row(p: &GaussianPrimitive) -> Vec<f64> {
    vec![
        p.mu[0],
        p.mu[1],
        p.mu[2],
        (p.color[0] - 0.5) / SH_C0,
        (p.color[1] - 0.5) / SH_C0,
        (p.color[2] - 0.5) / SH_C0,
        p.opacity_logit,
        p.log_scale[0],
        p.log_scale[1],
        p.log_scale[2],
        p.rot[0],
        p.rot[1],
        p.rot[2],
        p.rot[3],
        p.mu_eq[0],
        p.mu_eq[1],
        p.mu_eq[2],
        p.t_eq_pos,
        p.t_eq_scale,
    ]
}

pub fn write_ply(w: &mut impl Write, scene: &Scene) -> io::Result<()> {
    let table = VertexTable {
        names: SCENE_PROPERTIES.iter().map(|s| s.to_string()).collect(),
        rows: scene.primitives.iter().map(primitive_row).collect(),
        comments: vec![bounds_comment(&scene.bounds)],
    };
    write_vertex_table(w, &table)
}

pub fn save_ply(scene: &Scene, path: impl AsRef<Path>) -> Result<(), PlyError> {
    let mut buf = Vec::new();
    write_ply(&mut buf, scene)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn read_ply(bytes: &[u8]) -> Result<Scene, PlyError> {
    let table = read_vertex_table(bytes)?;
    scene_from_table(&table)
}

pub fn load_ply(path: impl AsRef<Path>) -> Result<Scene, PlyError> {
    read_ply(&fs::read(path)?)
}

pub(crate) fn scene_from_table(table: &VertexTable) -> Result<Scene, PlyError> {
    let col = |name: &str| {
        table
            .column(name)
            .ok_or_else(|| PlyError::MissingProperty(name.to_string()))
    };
    let required: Vec<usize> = SCENE_PROPERTIES[..14]
        .iter()
        .map(|n| col(n))
        .collect::<Result<_, _>>()?;
    let eq: Vec<Option<usize>> = SCENE_PROPERTIES[14..]
        .iter()
        .map(|n| table.column(n))
        .collect();

    let mut primitives = Vec::with_capacity(table.rows.len());
    for row in &table.rows {
        let v = |i: usize| row[required[i]];
        let mu = [v(0), v(1), v(2)];
        let color = [3, 4, 5].map(|i| 0.5 + SH_C0 * v(i));
        let rot = quat_normalize([v(10), v(11), v(12), v(13)])?;
        let e = |i: usize| eq[i].map(|c| row[c]);
        primitives.push(GaussianPrimitive {
            mu,
            log_scale: [v(7), v(8), v(9)],
            rot,
            opacity_logit: v(6),
            color,
            mu_eq: match (e(0), e(1), e(2)) {
                (Some(x), Some(y), Some(z)) => [x, y, z],
                _ => mu,
            },
            t_eq_pos: e(3).unwrap_or(DEFAULT_T_EQ),
            t_eq_scale: e(4).unwrap_or(DEFAULT_T_EQ),
        });
    }
    let bounds = parse_bounds(&table.comments)
        .unwrap_or_else(|| Aabb::around(primitives.iter().map(|p| p.mu), 0.05));
    Ok(Scene { primitives, bounds })
}
