//! Run manifests and hash-checked mesh loading.

use std::path::{Path, PathBuf};

use atlas_core::BoundaryMesh;
use serde::{Deserialize, Serialize};

use crate::config::{sha256_hex, GridConfig, RunConfig};
use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellCounts {
    pub total: usize,
    pub present: usize,
    pub absent: usize,
    pub failed: usize,
}

impl CellCounts {
    pub fn of(mesh: &BoundaryMesh) -> Self {
        let total = mesh.cells().len();
        let present = mesh.present_count();
        let failed = mesh.failed_count();
        Self {
            total,
            present,
            absent: total - present - failed,
            failed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub sweep_ms: f64,
    pub write_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub protocol: String,
    pub config_hash: String,
    pub comparison_hash: String,
    pub mesh_file: String,
    pub mesh_sha256: String,
    pub cells: CellCounts,
    pub refine: bool,
    pub threads: usize,
    pub timings: Timings,
    pub config: RunConfig,
}

pub fn tool_id() -> String {
    format!("atlas {}", env!("CARGO_PKG_VERSION"))
}

/// `out/apsk16.csv` -> `out/apsk16.manifest.json`.
pub fn manifest_path(mesh: &Path) -> PathBuf {
    mesh.with_extension("manifest.json")
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    std::fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

pub struct LoadedMesh {
    pub path: PathBuf,
    pub mesh: BoundaryMesh,
    pub manifest: Option<Manifest>,
}

impl LoadedMesh {
    pub fn config_hash(&self) -> Option<&str> {
        self.manifest.as_ref().map(|m| m.config_hash.as_str())
    }
}

/// Reads a mesh CSV and its manifest. The manifest supplies the alpha axis
/// and must match the file's hash unless `force` is set.
pub fn load_mesh(path: &Path, force: bool) -> Result<LoadedMesh, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    let mpath = manifest_path(path);
    let manifest: Option<Manifest> = match std::fs::read_to_string(&mpath) {
        Ok(text) => Some(serde_json::from_str(&text).map_err(|e| {
            CliError::Usage(format!("{}: bad manifest: {e}", mpath.display()))
        })?),
        Err(_) if force => None,
        Err(_) => {
            return Err(CliError::Usage(format!(
                "{}: no manifest at {} (use --force to read it anyway)",
                path.display(),
                mpath.display()
            )))
        }
    };
    if let Some(m) = &manifest {
        let digest = sha256_hex(&bytes);
        if digest != m.mesh_sha256 && !force {
            return Err(CliError::Usage(format!(
                "{}: content hash {} does not match manifest {} (use --force to override)",
                path.display(),
                &digest[..12],
                &m.mesh_sha256[..12.min(m.mesh_sha256.len())]
            )));
        }
    }
    let alpha_axis = manifest
        .as_ref()
        .map(|m| m.config.grid.alpha_axis())
        .unwrap_or_else(|| GridConfig::default().alpha_axis());
    let mesh = BoundaryMesh::read_csv(bytes.as_slice(), alpha_axis)
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    Ok(LoadedMesh {
        path: path.to_owned(),
        mesh,
        manifest,
    })
}

/// Meshes compared against each other must come from the same grid and
/// engine settings.
pub fn check_comparable(meshes: &[LoadedMesh], force: bool) -> Result<(), CliError> {
    if force {
        return Ok(());
    }
    let hashes: Vec<Option<&str>> = meshes
        .iter()
        .map(|m| m.manifest.as_ref().map(|x| x.comparison_hash.as_str()))
        .collect();
    if let Some(first) = hashes.first() {
        if let Some(i) = hashes.iter().position(|h| h != first) {
            return Err(CliError::Usage(format!(
                "{} and {} were produced with different grid/engine settings (use --force to compare anyway)",
                meshes[0].path.display(),
                meshes[i].path.display()
            )));
        }
    }
    Ok(())
}
