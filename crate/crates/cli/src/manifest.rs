//! Run manifests: one per invocation, written next to the main artifact.
//!
//! A manifest is a flat key-value file holding the fully resolved options
//! plus `run.*` and `artifact.*` entries. Passing it back with `--config`
//! replays the run.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use cqdd::kv::KvMap;

use crate::error::Failure;

pub struct RunManifest {
    pub command: String,
    pub config: KvMap,
    pub seed: Option<u64>,
    pub artifacts: Vec<(String, PathBuf)>,
}

impl RunManifest {
    pub fn new(command: &str, config: KvMap, seed: Option<u64>) -> Self {
        Self {
            command: command.to_string(),
            config,
            seed,
            artifacts: Vec::new(),
        }
    }

    pub fn artifact(&mut self, role: &str, path: &Path) {
        self.artifacts.push((role.to_string(), path.to_path_buf()));
    }

    pub fn to_kv(&self) -> KvMap {
        let mut map = KvMap::new();
        map.set("run.command", &self.command);
        map.set("run.tool_version", env!("CARGO_PKG_VERSION"));
        let secs = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        map.set("run.timestamp_unix", secs);
        map.set("run.seed", self.seed.map_or("none".to_string(), |s| s.to_string()));
        map.merge(&self.config);
        for (role, path) in &self.artifacts {
            map.set(&format!("artifact.{role}"), path.display());
        }
        map
    }

    /// Writes to `--manifest` if given, else `<out>.manifest.txt`.
    pub fn write(&self, out: &Path) -> Result<PathBuf, Failure> {
        let path = match self.config.get("manifest") {
            Some(p) => PathBuf::from(p),
            None => {
                let base = out.to_string_lossy();
                PathBuf::from(format!("{}.manifest.txt", base.trim_end_matches('/')))
            }
        };
        write_checked(&path, self.to_kv().to_string().as_bytes())?;
        Ok(path)
    }
}

/// Writes `bytes` and reads them back.
pub fn write_checked(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Failure::runtime(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, bytes).map_err(|e| Failure::runtime(format!("{}: {e}", path.display())))?;
    let back = fs::read(path).map_err(|e| Failure::runtime(format!("{}: {e}", path.display())))?;
    if back != bytes {
        return Err(Failure::runtime(format!(
            "{}: read-back differs from what was written",
            path.display()
        )));
    }
    Ok(())
}
