//! File-based orchestration: configuration, annotation loading, the
//! post-processing and evaluation runs with their manifests, overlay
//! rendering, timing benchmarks, ablation sweeps and a synthetic fixture.

mod annotations;
mod bench;
mod config;
mod render;
mod run;
mod synth;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use annotations::{load_annotations, parse_annotations, parse_image_id, AnnotationFormat, Annotations, ImageEntry};
pub use bench::{bench, nn_demo, synthetic_cloud, BenchRow};
pub use config::{Flags, Paths, PipelineConfig, PreprocessConfig, SCHEMA_VERSION};
pub use render::{class_color, render_overlay, Overlay};
pub use run::{
    ablate, ablation_combos, evaluate, ingest, postprocess_set, run_postprocess, write_report, AblationRow,
    IngestSummary, PostprocessOutcome, StageRecord,
};
pub use synth::{synthetic_fixture, write_fixture, Fixture};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(FileDigest {
            path: path.to_path_buf(),
            sha256: sha256_hex(&bytes),
        })
    }
}

/// Everything needed to repeat a run. Timings live here and only here, so the
/// content files stay byte-stable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub config: PipelineConfig,
    pub seed: u64,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub stages: Vec<StageRecord>,
    pub max_iterations_used: Option<usize>,
    pub total_iterations: Option<usize>,
}

pub(crate) fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub(crate) fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<FileDigest> {
    std::fs::write(path, bytes.as_ref()).map_err(|e| Error::io(path, e))?;
    Ok(FileDigest {
        path: path.to_path_buf(),
        sha256: sha256_hex(bytes.as_ref()),
    })
}

pub(crate) fn write_manifest(dir: &Path, name: &str, manifest: &RunManifest) -> Result<PathBuf> {
    let path = dir.join(name);
    let text = serde_json::to_string_pretty(manifest).expect("manifest always serialises");
    write_file(&path, text)?;
    Ok(path)
}
