//! Gaussian Splatting models in the binary little-endian PLY layout used by
//! the reference training code.
//!
//! Stored values are raw optimizer parameters (opacity logit, log-scale,
//! unnormalized quaternion). They are activated on load and inverted on save.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use thiserror::Error;

/// Number of SH coefficients per channel for degree 3.
pub const SH_COEFFS: usize = 16;

/// Normalization constant of the degree-0 real spherical harmonic.
pub const SH_C0: f64 = 0.282_094_791_773_878_14;

#[derive(Debug, Error)]
pub enum SplatIoError {
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed PLY header: {0}")]
    MalformedHeader(String),
    #[error("missing vertex property `{0}`")]
    MissingField(String),
    #[error("non-finite value in record {index} (property `{field}`)")]
    NonFiniteValue { index: usize, field: String },
    #[error("record {index} has a zero-length rotation quaternion")]
    DegenerateRotation { index: usize },
    #[error("model contains no gaussians")]
    EmptyModel,
    #[error("unsupported f_rest property count {0} (expected 0, 9, 24 or 45)")]
    UnsupportedShCount(usize),
    #[error("file ended after {read} of {expected} records")]
    Truncated { read: usize, expected: usize },
}

/// Parameters exactly as stored in a PLY record, before activation.
#[derive(Debug, Clone, PartialEq)]
pub struct RawGaussianRecord {
    pub position: [f32; 3],
    pub sh_dc: [f32; 3],
    /// Channel-major: `sh_rest[c * n + k]` is coefficient `k + 1` of channel `c`.
    pub sh_rest: Vec<f32>,
    pub opacity_logit: f32,
    pub log_scale: [f32; 3],
    /// (w, x, y, z), not necessarily unit length.
    pub rotation_quat_raw: [f32; 4],
}

/// An activated 3D Gaussian ready for rendering.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    pub mean: Vector3<f64>,
    pub opacity: f64,
    pub scale: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
    /// `sh[k][c]`: coefficient `k` (0 = DC) of colour channel `c`.
    pub sh: [[f64; 3]; SH_COEFFS],
}

impl Gaussian {
    /// A view-independent Gaussian whose degree-0 colour renders as `rgb`.
    pub fn with_color(
        mean: Vector3<f64>,
        scale: Vector3<f64>,
        rotation: UnitQuaternion<f64>,
        opacity: f64,
        rgb: [f64; 3],
    ) -> Self {
        let mut sh = [[0.0; 3]; SH_COEFFS];
        for c in 0..3 {
            sh[0][c] = (rgb[c] - 0.5) / SH_C0;
        }
        Self {
            mean,
            opacity,
            scale,
            rotation,
            sh,
        }
    }

    fn activate(raw: &RawGaussianRecord, rest_per_channel: usize, index: usize) -> Result<Self, SplatIoError> {
        let [w, x, y, z] = raw.rotation_quat_raw.map(f64::from);
        let q = Quaternion::new(w, x, y, z);
        if q.norm() == 0.0 {
            return Err(SplatIoError::DegenerateRotation { index });
        }
        let mut sh = [[0.0; 3]; SH_COEFFS];
        for c in 0..3 {
            sh[0][c] = f64::from(raw.sh_dc[c]);
            for k in 0..rest_per_channel {
                sh[k + 1][c] = f64::from(raw.sh_rest[c * rest_per_channel + k]);
            }
        }
        Ok(Self {
            mean: Vector3::from(raw.position.map(f64::from)),
            opacity: sigmoid(f64::from(raw.opacity_logit)),
            scale: Vector3::from(raw.log_scale.map(|s| f64::from(s).exp())),
            rotation: UnitQuaternion::from_quaternion(q),
            sh,
        })
    }

    fn to_raw(&self, rest_per_channel: usize) -> RawGaussianRecord {
        let mut sh_rest = vec![0.0f32; 3 * rest_per_channel];
        for c in 0..3 {
            for k in 0..rest_per_channel {
                sh_rest[c * rest_per_channel + k] = self.sh[k + 1][c] as f32;
            }
        }
        let q = self.rotation.quaternion();
        RawGaussianRecord {
            position: [self.mean.x as f32, self.mean.y as f32, self.mean.z as f32],
            sh_dc: [self.sh[0][0] as f32, self.sh[0][1] as f32, self.sh[0][2] as f32],
            sh_rest,
            opacity_logit: logit(self.opacity) as f32,
            log_scale: [
                self.scale.x.ln() as f32,
                self.scale.y.ln() as f32,
                self.scale.z.ln() as f32,
            ],
            rotation_quat_raw: [q.w as f32, q.i as f32, q.j as f32, q.k as f32],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplatModel {
    pub gaussians: Vec<Gaussian>,
    pub sh_degree: usize,
    pub source_path: String,
}

impl SplatModel {
    pub fn new(gaussians: Vec<Gaussian>, sh_degree: usize) -> Self {
        Self {
            gaussians,
            sh_degree: sh_degree.min(3),
            source_path: String::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn means(&self) -> Vec<Vector3<f64>> {
        self.gaussians.iter().map(|g| g.mean).collect()
    }

    /// Keeps the gaussians at `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            gaussians: indices.iter().map(|&i| self.gaussians[i].clone()).collect(),
            sh_degree: self.sh_degree,
            source_path: self.source_path.clone(),
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn logit(p: f64) -> f64 {
    // keeps the stored value finite for opacities that saturated in f64
    let p = p.clamp(1e-12, 1.0 - 1e-12);
    (p / (1.0 - p)).ln()
}

/// Number of `f_rest` coefficients per channel for an SH degree.
pub fn rest_per_channel(degree: usize) -> usize {
    (degree + 1) * (degree + 1) - 1
}

fn degree_from_rest_count(count: usize) -> Result<usize, SplatIoError> {
    match count {
        0 => Ok(0),
        9 => Ok(1),
        24 => Ok(2),
        45 => Ok(3),
        n => Err(SplatIoError::UnsupportedShCount(n)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ScalarType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl ScalarType {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
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
            Self::I8 => f64::from(b[0] as i8),
            Self::U8 => f64::from(b[0]),
            Self::I16 => f64::from(i16::from_le_bytes([b[0], b[1]])),
            Self::U16 => f64::from(u16::from_le_bytes([b[0], b[1]])),
            Self::I32 => f64::from(i32::from_le_bytes([b[0], b[1], b[2], b[3]])),
            Self::U32 => f64::from(u32::from_le_bytes([b[0], b[1], b[2], b[3]])),
            Self::F32 => f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])),
            Self::F64 => f64::from_le_bytes([b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7]]),
        }
    }
}

#[derive(Debug)]
struct VertexLayout {
    count: usize,
    properties: Vec<(String, ScalarType, usize)>,
    stride: usize,
}

impl VertexLayout {
    fn find(&self, name: &str) -> Result<(ScalarType, usize), SplatIoError> {
        self.properties
            .iter()
            .find(|(n, _, _)| n == name)
            .map(|(_, t, o)| (*t, *o))
            .ok_or_else(|| SplatIoError::MissingField(name.to_string()))
    }
}

fn read_header<R: BufRead>(reader: &mut R) -> Result<VertexLayout, SplatIoError> {
    let mut line = String::new();
    let mut next_line = |reader: &mut R| -> Result<String, SplatIoError> {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            return Err(SplatIoError::MalformedHeader("unexpected end of header".into()));
        }
        Ok(line.trim_end_matches(['\n', '\r']).to_string())
    };

    if next_line(reader)? != "ply" {
        return Err(SplatIoError::MalformedHeader("missing `ply` magic".into()));
    }

    let mut format_seen = false;
    let mut vertex: Option<VertexLayout> = None;
    let mut current_is_vertex = false;
    let mut past_vertex = false;
    loop {
        let l = next_line(reader)?;
        let mut tokens = l.split_whitespace();
        match tokens.next() {
            Some("format") => {
                let fmt = tokens.next().unwrap_or("");
                if fmt != "binary_little_endian" {
                    return Err(SplatIoError::MalformedHeader(format!(
                        "unsupported format `{fmt}`; only binary_little_endian is accepted"
                    )));
                }
                format_seen = true;
            }
            Some("comment") | Some("obj_info") => {}
            Some("element") => {
                let name = tokens.next().unwrap_or("");
                let count: usize = tokens
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| SplatIoError::MalformedHeader(format!("bad element line `{l}`")))?;
                if vertex.is_some() {
                    current_is_vertex = false;
                    past_vertex = true;
                } else if name == "vertex" {
                    vertex = Some(VertexLayout {
                        count,
                        properties: Vec::new(),
                        stride: 0,
                    });
                    current_is_vertex = true;
                } else {
                    return Err(SplatIoError::MalformedHeader(format!(
                        "element `{name}` precedes the vertex element"
                    )));
                }
            }
            Some("property") => {
                if !current_is_vertex {
                    if past_vertex {
                        continue;
                    }
                    return Err(SplatIoError::MalformedHeader("property outside an element".into()));
                }
                let ty = tokens.next().unwrap_or("");
                if ty == "list" {
                    return Err(SplatIoError::MalformedHeader(
                        "list properties are not supported on vertices".into(),
                    ));
                }
                let ty = ScalarType::parse(ty)
                    .ok_or_else(|| SplatIoError::MalformedHeader(format!("unknown property type `{ty}`")))?;
                let name = tokens
                    .next()
                    .ok_or_else(|| SplatIoError::MalformedHeader(format!("bad property line `{l}`")))?;
                let v = vertex.as_mut().expect("vertex element open");
                v.properties.push((name.to_string(), ty, v.stride));
                v.stride += ty.size();
            }
            Some("end_header") => break,
            Some(other) => {
                return Err(SplatIoError::MalformedHeader(format!("unexpected keyword `{other}`")));
            }
            None => {}
        }
    }
    if !format_seen {
        return Err(SplatIoError::MalformedHeader("missing format line".into()));
    }
    vertex.ok_or_else(|| SplatIoError::MalformedHeader("no vertex element".into()))
}

/// Reads the raw (non-activated) records of a splat PLY.
pub fn read_raw_records<R: Read>(reader: R) -> Result<Vec<RawGaussianRecord>, SplatIoError> {
    let mut reader = BufReader::new(reader);
    let layout = read_header(&mut reader)?;

    let rest_count = (0..)
        .take_while(|k| layout.find(&format!("f_rest_{k}")).is_ok())
        .count();
    degree_from_rest_count(rest_count)?;

    let lookup = |names: &[String]| -> Result<Vec<(ScalarType, usize)>, SplatIoError> {
        names.iter().map(|n| layout.find(n)).collect()
    };
    let names = |prefix: &str, n: usize| -> Vec<String> { (0..n).map(|i| format!("{prefix}{i}")).collect() };
    let pos_names: Vec<String> = ["x", "y", "z"].iter().map(|s| s.to_string()).collect();
    let dc_names = names("f_dc_", 3);
    let rest_names = names("f_rest_", rest_count);
    let opacity_names = vec!["opacity".to_string()];
    let scale_names = names("scale_", 3);
    let rot_names = names("rot_", 4);

    let pos = lookup(&pos_names)?;
    let dc = lookup(&dc_names)?;
    let rest = lookup(&rest_names)?;
    let opacity = lookup(&opacity_names)?;
    let scale = lookup(&scale_names)?;
    let rot = lookup(&rot_names)?;

    let mut records = Vec::with_capacity(layout.count);
    let mut buf = vec![0u8; layout.stride];
    for index in 0..layout.count {
        if let Err(e) = reader.read_exact(&mut buf) {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                return Err(SplatIoError::Truncated {
                    read: index,
                    expected: layout.count,
                });
            }
            return Err(e.into());
        }
        let fetch = |fields: &[(ScalarType, usize)], names: &[String], out: &mut [f32]| {
            for ((&(ty, off), name), o) in fields.iter().zip(names).zip(out.iter_mut()) {
                let v = ty.read(&buf[off..off + ty.size()]);
                if !v.is_finite() {
                    return Err(SplatIoError::NonFiniteValue {
                        index,
                        field: name.clone(),
                    });
                }
                *o = v as f32;
            }
            Ok(())
        };
        let mut position = [0.0; 3];
        let mut sh_dc = [0.0; 3];
        let mut sh_rest = vec![0.0; rest_count];
        let mut opacity_logit = [0.0; 1];
        let mut log_scale = [0.0; 3];
        let mut rotation_quat_raw = [0.0; 4];
        fetch(&pos, &pos_names, &mut position)?;
        fetch(&dc, &dc_names, &mut sh_dc)?;
        fetch(&rest, &rest_names, &mut sh_rest)?;
        fetch(&opacity, &opacity_names, &mut opacity_logit)?;
        fetch(&scale, &scale_names, &mut log_scale)?;
        fetch(&rot, &rot_names, &mut rotation_quat_raw)?;
        records.push(RawGaussianRecord {
            position,
            sh_dc,
            sh_rest,
            opacity_logit: opacity_logit[0],
            log_scale,
            rotation_quat_raw,
        });
    }
    Ok(records)
}

/// Parses a splat PLY from any reader and applies the activations.
pub fn read_splat_ply<R: Read>(reader: R) -> Result<SplatModel, SplatIoError> {
    let records = read_raw_records(reader)?;
    if records.is_empty() {
        return Err(SplatIoError::EmptyModel);
    }
    let rest = records[0].sh_rest.len() / 3;
    let sh_degree = degree_from_rest_count(records[0].sh_rest.len())?;
    let gaussians = records
        .iter()
        .enumerate()
        .map(|(i, r)| Gaussian::activate(r, rest, i))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SplatModel {
        gaussians,
        sh_degree,
        source_path: String::new(),
    })
}

pub fn load_splat_ply(path: impl AsRef<Path>) -> Result<SplatModel, SplatIoError> {
    let path = path.as_ref();
    let mut model = read_splat_ply(File::open(path)?)?;
    model.source_path = path.display().to_string();
    Ok(model)
}

/// Writes raw records with the standard property order
/// (`x y z nx ny nz f_dc_* f_rest_* opacity scale_* rot_*`).
pub fn write_raw_records<W: Write>(writer: W, records: &[RawGaussianRecord]) -> Result<(), SplatIoError> {
    let rest_count = records.first().map_or(0, |r| r.sh_rest.len());
    degree_from_rest_count(rest_count)?;
    let mut w = BufWriter::new(writer);
    writeln!(w, "ply")?;
    writeln!(w, "format binary_little_endian 1.0")?;
    writeln!(w, "element vertex {}", records.len())?;
    for name in ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"] {
        writeln!(w, "property float {name}")?;
    }
    for k in 0..rest_count {
        writeln!(w, "property float f_rest_{k}")?;
    }
    writeln!(w, "property float opacity")?;
    for k in 0..3 {
        writeln!(w, "property float scale_{k}")?;
    }
    for k in 0..4 {
        writeln!(w, "property float rot_{k}")?;
    }
    writeln!(w, "end_header")?;

    for r in records {
        let mut put = |v: f32| w.write_all(&v.to_le_bytes());
        for v in r.position {
            put(v)?;
        }
        for _ in 0..3 {
            put(0.0)?;
        }
        for v in r.sh_dc {
            put(v)?;
        }
        for &v in &r.sh_rest {
            put(v)?;
        }
        put(r.opacity_logit)?;
        for v in r.log_scale {
            put(v)?;
        }
        for v in r.rotation_quat_raw {
            put(v)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_splat_ply<W: Write>(writer: W, model: &SplatModel) -> Result<(), SplatIoError> {
    let rest = rest_per_channel(model.sh_degree.min(3));
    let records: Vec<_> = model.gaussians.iter().map(|g| g.to_raw(rest)).collect();
    write_raw_records(writer, &records)
}

pub fn save_splat_ply(model: &SplatModel, path: impl AsRef<Path>) -> Result<(), SplatIoError> {
    write_splat_ply(File::create(path)?, model)
}
