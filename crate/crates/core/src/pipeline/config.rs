use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::anchors::AnchorSpec;
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::loss::LossConfig;
use crate::postprocess::RefineConfig;

pub const SCHEMA_VERSION: u32 = 1;

/// Independent per-module switches; any subset is a valid configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Flags {
    pub denoise: bool,
    pub segmentation: bool,
    pub mosaic: bool,
    pub se_demo: bool,
    pub csp2_demo: bool,
    pub dilated_demo: bool,
    /// Gates the DIoU-NMS screening stage.
    pub multiscale_anchors: bool,
    pub wbf: bool,
    pub iterative_refinement: bool,
}

impl Default for Flags {
    fn default() -> Self {
        Flags::all(true)
    }
}

impl Flags {
    pub const NAMES: [&'static str; 9] = [
        "denoise",
        "segmentation",
        "mosaic",
        "se_demo",
        "csp2_demo",
        "dilated_demo",
        "multiscale_anchors",
        "wbf",
        "iterative_refinement",
    ];

    pub fn all(on: bool) -> Self {
        Flags {
            denoise: on,
            segmentation: on,
            mosaic: on,
            se_demo: on,
            csp2_demo: on,
            dilated_demo: on,
            multiscale_anchors: on,
            wbf: on,
            iterative_refinement: on,
        }
    }

    fn slot(&mut self, name: &str) -> Option<&mut bool> {
        Some(match name {
            "denoise" => &mut self.denoise,
            "segmentation" => &mut self.segmentation,
            "mosaic" => &mut self.mosaic,
            "se_demo" => &mut self.se_demo,
            "csp2_demo" => &mut self.csp2_demo,
            "dilated_demo" => &mut self.dilated_demo,
            "multiscale_anchors" => &mut self.multiscale_anchors,
            "wbf" => &mut self.wbf,
            "iterative_refinement" => &mut self.iterative_refinement,
            _ => return None,
        })
    }

    pub fn get(&self, name: &str) -> Option<bool> {
        let mut copy = *self;
        copy.slot(name).map(|v| *v)
    }

    /// Applies a comma list such as `wbf,-mosaic,denoise=off`. The words
    /// `all` and `none` set every flag.
    pub fn apply_overrides(&mut self, spec: &str) -> Result<()> {
        for raw in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (name, value) = if let Some(rest) = raw.strip_prefix('-').or_else(|| raw.strip_prefix('!')) {
                (rest, false)
            } else if let Some((n, v)) = raw.split_once('=') {
                let v = match v.trim().to_ascii_lowercase().as_str() {
                    "1" | "true" | "on" | "yes" => true,
                    "0" | "false" | "off" | "no" => false,
                    other => return Err(Error::Config(format!("flag `{n}` has unreadable value `{other}`"))),
                };
                (n.trim(), v)
            } else {
                (raw, true)
            };
            match name {
                "all" => *self = Flags::all(value),
                "none" => *self = Flags::all(!value),
                _ => {
                    *self
                        .slot(name)
                        .ok_or_else(|| Error::Config(format!("unknown flag `{name}`")))? = value;
                }
            }
        }
        Ok(())
    }

    /// Comma list of enabled flags, or `none`.
    pub fn label(&self) -> String {
        let on: Vec<&str> = Flags::NAMES
            .iter()
            .copied()
            .filter(|n| self.get(n) == Some(true))
            .collect();
        if on.is_empty() {
            "none".to_string()
        } else {
            on.join(",")
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub annotations: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
    pub images: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

/// Parameters of the image preprocessing run by `ingest`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub denoise_window: usize,
    pub manual_threshold: Option<u8>,
    pub mosaic_size: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            denoise_window: 3,
            manual_threshold: None,
            mosaic_size: 640,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub flags: Flags,
    pub loss: LossConfig,
    pub anchors: AnchorSpec,
    pub refine: RefineConfig,
    pub eval: EvalConfig,
    pub preprocess: PreprocessConfig,
    pub paths: Paths,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            schema_version: SCHEMA_VERSION,
            seed: 0,
            flags: Flags::default(),
            loss: LossConfig::default(),
            anchors: AnchorSpec::default(),
            refine: RefineConfig::default(),
            eval: EvalConfig::default(),
            preprocess: PreprocessConfig::default(),
            paths: Paths::default(),
        }
    }
}

fn as_config(e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config file; relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg =
            PipelineConfig::from_json(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), e)))?;
        if let Some(base) = path.parent() {
            cfg.resolve_paths(base);
        }
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let p = &mut self.paths;
        for slot in [&mut p.annotations, &mut p.predictions, &mut p.images, &mut p.output_dir] {
            if let Some(rel) = slot.as_ref().filter(|q| q.is_relative()) {
                *slot = Some(base.join(rel));
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.loss.validate().map_err(as_config)?;
        self.anchors.validate().map_err(as_config)?;
        self.refine.validate().map_err(as_config)?;
        if self.eval.max_dets == 0 {
            return Err(Error::Config("eval.max_dets must be >= 1".into()));
        }
        let w = self.preprocess.denoise_window;
        if w < 3 || w.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "preprocess.denoise_window must be odd and >= 3, got {w}"
            )));
        }
        if self.preprocess.mosaic_size < 2 {
            return Err(Error::Config("preprocess.mosaic_size must be >= 2".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config always serialises")
    }

    /// SHA-256 of the compact JSON encoding.
    pub fn hash(&self) -> String {
        super::sha256_hex(
            serde_json::to_string(self)
                .expect("config always serialises")
                .as_bytes(),
        )
    }
}
