use std::io::{BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::BackgroundError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthConvention {
    /// Larger values are farther.
    Depth,
    /// Relative inverse depth (larger values are nearer), as emitted by most
    /// monocular depth networks.
    InverseDepth,
}

impl DepthConvention {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Depth => "depth",
            Self::InverseDepth => "inverse_depth",
        }
    }
}

impl std::str::FromStr for DepthConvention {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "depth" => Ok(Self::Depth),
            "inverse_depth" => Ok(Self::InverseDepth),
            other => Err(format!("unknown depth convention `{other}`")),
        }
    }
}

/// A single-channel float map as read from disk, row-major, top row first.
#[derive(Debug, Clone, PartialEq)]
pub struct RawDepth {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f32>,
}

/// Normalized scene depth in [1, 10] (larger = farther).
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f32>,
    pub convention: DepthConvention,
}

impl DepthMap {
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.values[y * self.width + x]
    }

    pub fn range(&self) -> (f32, f32) {
        self.values
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }
}

pub const DEPTH_MIN: f64 = 1.0;
pub const DEPTH_MAX: f64 = 10.0;

/// Converts a raw map to depth and rescales it affinely onto [1, 10].
/// Inverse-depth values are floored at 1e-3 of their maximum before inversion.
pub fn normalize_depth(raw: &RawDepth, convention: DepthConvention) -> Result<DepthMap, BackgroundError> {
    if raw.values.len() != raw.width * raw.height || raw.values.is_empty() {
        return Err(BackgroundError::InvalidDepth("size does not match dimensions".into()));
    }
    if let Some(v) = raw.values.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(BackgroundError::InvalidDepth(format!("value {v} is not finite and non-negative")));
    }
    let z: Vec<f64> = match convention {
        DepthConvention::Depth => raw.values.iter().map(|&v| f64::from(v)).collect(),
        DepthConvention::InverseDepth => {
            let max = raw.values.iter().fold(0.0f64, |m, &v| m.max(f64::from(v)));
            if max <= 0.0 {
                return Err(BackgroundError::ConstantDepth);
            }
            let floor = 1e-3 * max;
            raw.values.iter().map(|&v| 1.0 / f64::from(v).max(floor)).collect()
        }
    };
    let (lo, hi) = z
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if hi - lo <= 1e-12 * hi.abs() {
        return Err(BackgroundError::ConstantDepth);
    }
    let scale = (DEPTH_MAX - DEPTH_MIN) / (hi - lo);
    Ok(DepthMap {
        width: raw.width,
        height: raw.height,
        values: z.iter().map(|&v| (DEPTH_MIN + (v - lo) * scale) as f32).collect(),
        convention,
    })
}

/// Reads a single-channel PFM (`Pf`). Either endianness is accepted.
pub fn read_pfm<R: Read>(reader: R) -> Result<RawDepth, BackgroundError> {
    let mut reader = BufReader::new(reader);
    let token = |reader: &mut BufReader<R>| -> Result<String, BackgroundError> {
        let mut out = Vec::new();
        loop {
            let mut byte = [0u8; 1];
            if reader.read(&mut byte)? == 0 {
                break;
            }
            if byte[0].is_ascii_whitespace() {
                if out.is_empty() {
                    continue;
                }
                break;
            }
            out.push(byte[0]);
        }
        String::from_utf8(out).map_err(|_| BackgroundError::InvalidDepth("non-ASCII PFM header".into()))
    };
    let magic = token(&mut reader)?;
    if magic != "Pf" {
        return Err(BackgroundError::InvalidDepth(format!(
            "expected single-channel PFM (`Pf`), found `{magic}`"
        )));
    }
    let parse = |s: String, what: &str| -> Result<f64, BackgroundError> {
        s.parse::<f64>()
            .map_err(|_| BackgroundError::InvalidDepth(format!("bad PFM {what} `{s}`")))
    };
    let width = parse(token(&mut reader)?, "width")? as usize;
    let height = parse(token(&mut reader)?, "height")? as usize;
    let scale = parse(token(&mut reader)?, "scale")?;
    if width == 0 || height == 0 || scale == 0.0 {
        return Err(BackgroundError::InvalidDepth("empty PFM".into()));
    }
    let little = scale < 0.0;
    let mut bytes = vec![0u8; width * height * 4];
    reader
        .read_exact(&mut bytes)
        .map_err(|_| BackgroundError::InvalidDepth("truncated PFM body".into()))?;
    let mut values = vec![0.0f32; width * height];
    // rows are stored bottom to top
    for (row, chunk) in bytes.chunks_exact(width * 4).enumerate() {
        let y = height - 1 - row;
        for (x, b) in chunk.chunks_exact(4).enumerate() {
            let b = [b[0], b[1], b[2], b[3]];
            values[y * width + x] = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        }
    }
    Ok(RawDepth { width, height, values })
}

/// Writes a little-endian single-channel PFM.
pub fn write_pfm<W: Write>(mut writer: W, width: usize, height: usize, values: &[f32]) -> std::io::Result<()> {
    assert_eq!(values.len(), width * height);
    write!(writer, "Pf\n{width} {height}\n-1.0\n")?;
    let mut body = Vec::with_capacity(values.len() * 4);
    for y in (0..height).rev() {
        for v in &values[y * width..(y + 1) * width] {
            body.extend_from_slice(&v.to_le_bytes());
        }
    }
    writer.write_all(&body)?;
    writer.flush()
}

/// Loads a depth file: `.pfm`, or any image format (16-bit PNG keeps its precision).
pub fn load_raw_depth(path: &Path) -> Result<RawDepth, BackgroundError> {
    let is_pfm = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("pfm"));
    if is_pfm {
        return read_pfm(std::fs::File::open(path)?);
    }
    let img = image::open(path)?.to_luma16();
    Ok(RawDepth {
        width: img.width() as usize,
        height: img.height() as usize,
        values: img.as_raw().iter().map(|&v| f32::from(v)).collect(),
    })
}
