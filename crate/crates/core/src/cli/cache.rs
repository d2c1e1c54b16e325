//! Content-addressed storage of traced solution paths.
//!
//! The key is the SHA-256 of a canonical JSON description of everything the
//! path and the working variances depend on. Entries are written to a
//! temporary file and renamed into place.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::CliError;
use crate::data::{NormSpec, Sample};
use crate::path::{SolutionPath, PATH_FORMAT_VERSION};
use crate::pipeline::PipelineConfig;
use crate::variance::VarianceEstimate;

#[derive(Serialize, Deserialize)]
pub struct Entry {
    pub key: String,
    pub variance: VarianceEstimate,
    pub path: SolutionPath,
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Config(format!("cache {}: {e}", path.display()))
}

pub fn key(sample: &Sample, norm: &NormSpec, config: &PipelineConfig) -> Result<String, CliError> {
    let desc = serde_json::json!({
        "crate": env!("CARGO_PKG_VERSION"),
        "path_format": PATH_FORMAT_VERSION,
        "sample": sample,
        "norm": norm,
        "target": config.target,
        "variance": config.variance,
        "metric": config.metric,
        "mu_max": config.path.mu_max,
        "max_knots": config.path.max_knots,
        "checkpoint_every": config.path.checkpoint_every,
    });
    let bytes = serde_json::to_vec(&desc).map_err(|e| CliError::Numerical(e.to_string()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn entry_path(dir: &Path, key: &str) -> PathBuf {
    dir.join(format!("{key}.json"))
}

pub fn load(dir: &Path, key: &str) -> Result<Option<Entry>, CliError> {
    let file = entry_path(dir, key);
    let bytes = match fs::read(&file) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(io_err(&file, e)),
    };
    let entry: Entry = serde_json::from_slice(&bytes)
        .map_err(|e| CliError::Data(format!("corrupt cache entry {}: {e}", file.display())))?;
    if entry.key != key {
        return Err(CliError::Data(format!("cache entry {} has a mismatched key", file.display())));
    }
    Ok(Some(entry))
}

pub fn store(dir: &Path, key: &str, variance: &VarianceEstimate, path: &SolutionPath) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    #[derive(Serialize)]
    struct EntryRef<'a> {
        key: &'a str,
        variance: &'a VarianceEstimate,
        path: &'a SolutionPath,
    }
    let bytes = serde_json::to_vec(&EntryRef { key, variance, path }).map_err(|e| CliError::Numerical(e.to_string()))?;
    let file = entry_path(dir, key);
    let tmp = dir.join(format!(".{key}.{}.tmp", std::process::id()));
    let mut f = fs::File::create(&tmp).map_err(|e| io_err(&tmp, e))?;
    f.write_all(&bytes).map_err(|e| io_err(&tmp, e))?;
    f.sync_all().map_err(|e| io_err(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, &file).map_err(|e| io_err(&file, e))?;
    Ok(())
}
