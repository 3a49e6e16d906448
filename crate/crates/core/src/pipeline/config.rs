use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::background::{BackgroundParams, DepthConvention};
use crate::composer::{ComposeParams, ScaleParams};
use crate::extraction::ExtractionParams;

/// One object category: a captured splat scene, or an already extracted foreground.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSource {
    pub name: String,
    pub path: PathBuf,
    /// The file is the output of `extract` (has a `.json` sidecar).
    #[serde(default)]
    pub extracted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    pub backgrounds: PathBuf,
    pub output: PathBuf,
    pub split: String,
    pub image_count: usize,
    /// Inclusive range of objects per image.
    pub objects_per_image: [usize; 2],
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    pub workers: usize,
    /// Placement attempts per object after the first before it is dropped.
    pub max_resample: usize,
    pub objects: Vec<ObjectSource>,
    pub extraction: ExtractionParams,
    pub background: BackgroundParams,
    pub scale: ScaleParams,
    pub compose: ComposeParams,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            backgrounds: PathBuf::from("backgrounds.toml"),
            output: PathBuf::from("dataset"),
            split: "train".into(),
            image_count: 5000,
            objects_per_image: [1, 3],
            seed: 0,
            workers: 0,
            max_resample: 10,
            objects: Vec::new(),
            extraction: ExtractionParams::default(),
            background: BackgroundParams::default(),
            scale: ScaleParams::default(),
            compose: ComposeParams::default(),
        }
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl GenerationConfig {
    /// Parses a TOML config; relative paths are taken from the file's directory.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path)
            .map_err(|e| PipelineError::ConfigInvalid(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: Self = toml::from_str(&text)
            .map_err(|e| PipelineError::ConfigInvalid(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.backgrounds = resolve(base, &cfg.backgrounds);
        cfg.output = resolve(base, &cfg.output);
        for o in &mut cfg.objects {
            o.path = resolve(base, &o.path);
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::ConfigInvalid(m));
        if self.image_count == 0 {
            return bad("image_count must be at least 1".into());
        }
        let [lo, hi] = self.objects_per_image;
        if lo == 0 || hi < lo {
            return bad(format!("objects_per_image [{lo}, {hi}] must satisfy 1 <= min <= max"));
        }
        if self.objects.is_empty() {
            return bad("no objects configured".into());
        }
        if self.split.is_empty() || self.split.contains(['/', '\\']) {
            return bad(format!("invalid split name `{}`", self.split));
        }
        for o in &self.objects {
            if !o.path.is_file() {
                return bad(format!("object `{}`: {} does not exist", o.name, o.path.display()));
            }
        }
        if !self.backgrounds.is_file() {
            return bad(format!("background manifest {} does not exist", self.backgrounds.display()));
        }
        let k = self.compose.median_kernel;
        if k == 0 || k.is_multiple_of(2) {
            return bad(format!("median kernel {k} must be odd"));
        }
        if self.background.stride == 0 {
            return bad("background stride must be at least 1".into());
        }
        Ok(())
    }
}

/// Where an entry's depth comes from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DepthSource {
    File(PathBuf),
    /// To be fetched from the depth service.
    Service,
}

impl Serialize for DepthSource {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Self::File(p) => p.serialize(s),
            Self::Service => s.serialize_str("service"),
        }
    }
}

impl<'de> Deserialize<'de> for DepthSource {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(if s == "service" { Self::Service } else { Self::File(s.into()) })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image: PathBuf,
    pub depth: DepthSource,
    pub convention: DepthConvention,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackgroundManifest {
    pub entries: Vec<ManifestEntry>,
}

impl BackgroundManifest {
    /// Parses a manifest as written on disk (paths left as stored).
    pub fn parse(text: &str) -> Result<Self, PipelineError> {
        let m: Self = toml::from_str(text).map_err(|e| PipelineError::ConfigInvalid(format!("manifest: {e}")))?;
        if m.entries.is_empty() {
            return Err(PipelineError::ConfigInvalid("manifest has no entries".into()));
        }
        Ok(m)
    }

    /// Loads a manifest and resolves its paths against the manifest's directory.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path)
            .map_err(|e| PipelineError::ConfigInvalid(format!("cannot read manifest {}: {e}", path.display())))?;
        let mut m = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for e in &mut m.entries {
            e.image = resolve(base, &e.image);
            if let DepthSource::File(p) = &e.depth {
                e.depth = DepthSource::File(resolve(base, p));
            }
        }
        Ok(m)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }
}
