//! Declarative report pipeline: a config names a dataset and a list of
//! analyses; running it emits a directory of CSV/JSON tables, plot-data
//! series, and a manifest. Re-running on identical inputs is byte-identical.

mod analyses;
mod config;
mod writer;

pub use analyses::emit_heatmap_data;
pub use config::{parse_reducer, AnalysisSpec, GridSource, PipelineConfig, RunFilter};
pub use writer::{num, HeatmapData, HeatmapMark, Table};

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ingest;

/// Manifest entry for one analysis: the library operation that produced the
/// numbers and the files it wrote.
#[derive(Debug, Clone, Serialize)]
pub struct ManifestEntry {
    pub name: String,
    pub operation: String,
    pub outputs: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
struct Manifest {
    tool: &'static str,
    version: &'static str,
    config_sha256: String,
    inputs: BTreeMap<String, String>,
    analyses: Vec<ManifestEntry>,
}

/// Runs every analysis in the config, writing the bundle under `out_dir`.
pub fn run_pipeline(config: &PipelineConfig, config_raw: &str, out_dir: &Path) -> Result<Vec<ManifestEntry>> {
    config.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;

    let mut inputs = BTreeMap::new();
    let dataset = match &config.dataset {
        Some(path) => {
            let scales = config.scales.as_deref().map(Path::new);
            let report = ingest::load_dataset_opts(Path::new(path), scales, ingest::LoadMode::Strict)?;
            inputs.insert(path.clone(), file_sha256(Path::new(path))?);
            if let Some(s) = &config.scales {
                inputs.insert(s.clone(), file_sha256(Path::new(s))?);
            }
            Some(report.dataset)
        }
        None => None,
    };

    let mut entries: Vec<ManifestEntry> = Vec::new();
    for spec in &config.analyses {
        let entry = analyses::run_analysis(spec, dataset.as_ref(), out_dir).map_err(|e| {
            // failures carry the analysis name so a long pipeline pinpoints
            // the offender
            match e {
                Error::Analysis(inner) => Error::Analysis(crate::error::AnalysisError::Other(
                    format!("analysis {:?}: {inner}", spec.name()),
                )),
                other => other,
            }
        })?;
        entries.push(entry);
    }

    let manifest = Manifest {
        tool: "gridlex",
        version: env!("CARGO_PKG_VERSION"),
        config_sha256: sha256_hex(config_raw.as_bytes()),
        inputs,
        analyses: entries.clone(),
    };
    writer::write_json(out_dir, "manifest.json", &manifest)?;
    Ok(entries)
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(sha256_hex(&bytes))
}

/// Loads a pipeline config file, returning both the parsed form and the raw
/// text (hashed into the manifest). Relative dataset paths are resolved
/// against the config file's directory.
pub fn load_config(path: &Path) -> Result<(PipelineConfig, String)> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut config: PipelineConfig =
        serde_json::from_str(&raw).map_err(|e| Error::json(path.display().to_string(), e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let resolve = |p: &String| -> String {
        let pb = PathBuf::from(p);
        if pb.is_absolute() {
            p.clone()
        } else {
            base.join(pb).display().to_string()
        }
    };
    config.dataset = config.dataset.as_ref().map(resolve);
    config.scales = config.scales.as_ref().map(resolve);
    Ok((config, raw))
}
