//! Splat PLY files (binary little-endian) with the standard 3DGS vertex
//! layout plus the change channels.
//!
//! Extension properties: `change_dc` (logit of the change magnitude),
//! `change_opacity` (logit of the change opacity) and, when the cloud uses a
//! view-dependent change channel, `change_rest_0..14`. Viewers that do not know
//! them ignore unknown properties. Header comments carry `sh_degree`,
//! `change_sh_degree` and `scene_extent`.
//!
//! `f_rest_*` follows the 3DGS channel-major order: `f_rest_{c*15 + k}` is
//! coefficient `k + 1` of color channel `c`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{read_file, write_file, ByteReader};
use crate::scene::{logit, Gaussian3D, GaussianCloud, CHANGE_INIT};

const MAX_HEADER_BYTES: usize = 1 << 16;
const REST: usize = 15;

pub fn write_splat_ply(cloud: &GaussianCloud, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_splat_ply(cloud)?)
}

pub fn read_splat_ply(path: impl AsRef<Path>) -> Result<GaussianCloud> {
    let path = path.as_ref();
    decode_splat_ply(&read_file(path)?, &path.display().to_string())
}

fn property_names(with_change_rest: bool) -> Vec<String> {
    let mut names: Vec<String> = ["x", "y", "z", "nx", "ny", "nz"].iter().map(|s| s.to_string()).collect();
    names.extend((0..3).map(|i| format!("f_dc_{i}")));
    names.extend((0..3 * REST).map(|i| format!("f_rest_{i}")));
    names.push("opacity".into());
    names.extend((0..3).map(|i| format!("scale_{i}")));
    names.extend((0..4).map(|i| format!("rot_{i}")));
    names.push("change_dc".into());
    names.push("change_opacity".into());
    if with_change_rest {
        names.extend((0..REST).map(|i| format!("change_rest_{i}")));
    }
    names
}

fn vertex_values(g: &Gaussian3D, with_change_rest: bool, out: &mut Vec<f32>) {
    out.extend_from_slice(&g.position);
    out.extend_from_slice(&[0.0; 3]);
    out.extend((0..3).map(|c| g.sh_color[0][c]));
    for c in 0..3 {
        out.extend((1..16).map(|k| g.sh_color[k][c]));
    }
    out.push(g.opacity_logit);
    out.extend_from_slice(&g.log_scale);
    out.extend_from_slice(&g.rotation);
    out.push(g.change_dc);
    out.push(g.change_opacity_logit);
    if with_change_rest {
        out.extend_from_slice(&g.change_rest);
    }
}

pub fn encode_splat_ply(cloud: &GaussianCloud) -> Result<Vec<u8>> {
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let with_change_rest = cloud.change_sh_degree > 0 || cloud.gaussians.iter().any(|g| g.change_rest.iter().any(|v| *v != 0.0));
    let names = property_names(with_change_rest);
    let mut header = String::from("ply\nformat binary_little_endian 1.0\n");
    header.push_str(&format!("comment sh_degree {}\n", cloud.sh_degree));
    header.push_str(&format!("comment change_sh_degree {}\n", cloud.change_sh_degree));
    header.push_str(&format!("comment scene_extent {}\n", cloud.scene_extent));
    header.push_str(&format!("element vertex {}\n", cloud.len()));
    for n in &names {
        header.push_str(&format!("property float {n}\n"));
    }
    header.push_str("end_header\n");
    let mut out = header.into_bytes();
    out.reserve(cloud.len() * names.len() * 4);
    let mut row = Vec::with_capacity(names.len());
    for (i, g) in cloud.gaussians.iter().enumerate() {
        row.clear();
        vertex_values(g, with_change_rest, &mut row);
        if let Some(k) = row.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                vertex: i,
                property: names[k].clone(),
            });
        }
        for v in &row {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug)]
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

    fn read(self, b: &[u8]) -> f64 {
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

struct Header {
    vertex_count: usize,
    properties: Vec<(String, Scalar, usize)>,
    stride: usize,
    sh_degree: Option<u8>,
    change_sh_degree: Option<u8>,
    scene_extent: Option<f64>,
    body_offset: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    let end_marker = b"end_header\n";
    let limit = bytes.len().min(MAX_HEADER_BYTES);
    let end = bytes[..limit]
        .windows(end_marker.len())
        .position(|w| w == end_marker)
        .ok_or_else(|| Error::Ply("no end_header within the first 64 KiB".into()))?;
    let text =
        std::str::from_utf8(&bytes[..end]).map_err(|_| Error::Ply("header is not valid UTF-8".into()))?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err(Error::Ply("missing `ply` magic".into()));
    }
    let mut h = Header {
        vertex_count: 0,
        properties: Vec::new(),
        stride: 0,
        sh_degree: None,
        change_sh_degree: None,
        scene_extent: None,
        body_offset: end + end_marker.len(),
    };
    let mut format_ok = false;
    // None before any element, Some(true) inside the vertex element.
    let mut in_vertex: Option<bool> = None;
    let mut seen_vertex = false;
    for line in lines {
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            [] => {}
            ["format", "binary_little_endian", _] => format_ok = true,
            ["format", f, ..] => return Err(Error::Ply(format!("unsupported format `{f}`"))),
            ["comment", key, value, ..] => match *key {
                "sh_degree" => h.sh_degree = value.parse().ok(),
                "change_sh_degree" => h.change_sh_degree = value.parse().ok(),
                "scene_extent" => h.scene_extent = value.parse().ok(),
                _ => {}
            },
            ["comment", ..] | ["obj_info", ..] => {}
            ["element", name, count] => {
                if *name == "vertex" {
                    if seen_vertex {
                        return Err(Error::Ply("duplicate vertex element".into()));
                    }
                    if in_vertex.is_some() {
                        return Err(Error::Ply("vertex must be the first element".into()));
                    }
                    h.vertex_count = count
                        .parse()
                        .map_err(|_| Error::Ply(format!("bad vertex count `{count}`")))?;
                    seen_vertex = true;
                    in_vertex = Some(true);
                } else {
                    in_vertex = Some(false);
                }
            }
            ["property", "list", ..] if in_vertex == Some(true) => {
                return Err(Error::Ply("list properties are not supported on vertices".into()))
            }
            ["property", ty, name] => {
                if in_vertex == Some(true) {
                    let s = Scalar::parse(ty).ok_or_else(|| Error::Ply(format!("unknown property type `{ty}`")))?;
                    if h.properties.iter().any(|(n, _, _)| n == name) {
                        return Err(Error::Ply(format!("duplicate property `{name}`")));
                    }
                    h.properties.push((name.to_string(), s, h.stride));
                    h.stride += s.size();
                } else if in_vertex.is_none() {
                    return Err(Error::Ply("property before any element".into()));
                }
            }
            ["property", ..] if in_vertex != Some(true) => {}
            _ => return Err(Error::Ply(format!("unrecognized header line `{line}`"))),
        }
    }
    if !format_ok {
        return Err(Error::Ply("missing format line".into()));
    }
    if !seen_vertex {
        return Err(Error::Ply("no vertex element".into()));
    }
    Ok(h)
}

pub fn decode_splat_ply(bytes: &[u8], name: &str) -> Result<GaussianCloud> {
    let h = parse_header(bytes)?;
    let find = |n: &str| h.properties.iter().find(|(p, _, _)| p == n).map(|(_, s, o)| (*s, *o));
    let require = |n: String| find(&n).map(|v| (n.clone(), v)).ok_or(Error::MissingProperty(n));

    let mut required = Vec::new();
    for n in ["x", "y", "z"] {
        required.push(require(n.into())?);
    }
    for i in 0..3 {
        required.push(require(format!("f_dc_{i}"))?);
    }
    for i in 0..3 * REST {
        required.push(require(format!("f_rest_{i}"))?);
    }
    required.push(require("opacity".into())?);
    for i in 0..3 {
        required.push(require(format!("scale_{i}"))?);
    }
    for i in 0..4 {
        required.push(require(format!("rot_{i}"))?);
    }
    let optional = |n: String| find(&n).map(|v| (n, v));
    let change_dc = optional("change_dc".into());
    let change_op = optional("change_opacity".into());
    let change_rest: Vec<_> = (0..REST).map(|i| optional(format!("change_rest_{i}"))).collect();

    let mut r = ByteReader::new(bytes, name);
    r.take(h.body_offset)?;
    if h.stride == 0 || r.remaining() / h.stride < h.vertex_count {
        return Err(Error::Truncated {
            file: name.to_string(),
            offset: r.offset(),
            needed: h.vertex_count.saturating_mul(h.stride).saturating_sub(r.remaining()),
        });
    }
    if h.vertex_count == 0 {
        return Err(Error::EmptyCloud);
    }
    let get = |row: &[u8], vertex: usize, (n, (s, o)): &(String, (Scalar, usize))| -> Result<f32> {
        let v = s.read(&row[*o..]) as f32;
        if !v.is_finite() {
            return Err(Error::NonFinite {
                vertex,
                property: n.clone(),
            });
        }
        Ok(v)
    };
    let init = logit(CHANGE_INIT) as f32;
    let mut gaussians = Vec::with_capacity(h.vertex_count);
    for i in 0..h.vertex_count {
        let row = r.take(h.stride)?;
        let mut vals = required.iter().map(|p| get(row, i, p));
        let mut next = || vals.next().expect("property count");
        let mut g = Gaussian3D {
            position: [0.0; 3],
            rotation: [1.0, 0.0, 0.0, 0.0],
            log_scale: [0.0; 3],
            opacity_logit: 0.0,
            sh_color: [[0.0; 3]; 16],
            change_dc: init,
            change_rest: [0.0; REST],
            change_opacity_logit: init,
        };
        for p in &mut g.position {
            *p = next()?;
        }
        for c in 0..3 {
            g.sh_color[0][c] = next()?;
        }
        for c in 0..3 {
            for k in 1..16 {
                g.sh_color[k][c] = next()?;
            }
        }
        g.opacity_logit = next()?;
        for s in &mut g.log_scale {
            *s = next()?;
        }
        for q in &mut g.rotation {
            *q = next()?;
        }
        if let Some(p) = &change_dc {
            g.change_dc = get(row, i, p)?;
        }
        if let Some(p) = &change_op {
            g.change_opacity_logit = get(row, i, p)?;
        }
        for (k, p) in change_rest.iter().enumerate() {
            if let Some(p) = p {
                g.change_rest[k] = get(row, i, p)?;
            }
        }
        gaussians.push(g);
    }
    let mut cloud = GaussianCloud::new(gaussians, h.scene_extent.filter(|e| *e > 0.0 && e.is_finite()).unwrap_or(1.0))?;
    cloud.sh_degree = h.sh_degree.unwrap_or(3).min(3);
    cloud.change_sh_degree = h.change_sh_degree.unwrap_or(0).min(3);
    Ok(cloud)
}
