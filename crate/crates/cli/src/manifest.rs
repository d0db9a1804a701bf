use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};
use subvalue::sdp::SolverSettings;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

#[derive(Serialize, Debug)]
pub struct SolverFlags {
    pub tol_feas: f64,
    pub tol_gap: f64,
    pub max_iter: usize,
}

/// Everything needed to rerun a command; `started`, `finished` and `timings`
/// are the only fields that vary between identical runs.
#[derive(Serialize, Debug)]
pub struct RunManifest {
    pub command: Vec<String>,
    pub config: Option<String>,
    pub config_sha256: Option<String>,
    pub tool_version: String,
    pub seed: u64,
    pub solver: SolverFlags,
    pub started: f64,
    pub finished: f64,
    pub timings: Vec<(String, f64)>,
    pub outputs: Vec<PathBuf>,
    #[serde(skip)]
    dir: PathBuf,
}

impl RunManifest {
    pub fn start(dir: &Path, seed: u64, settings: &SolverSettings) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self {
            command: std::env::args().collect(),
            config: None,
            config_sha256: None,
            tool_version: env!("CARGO_PKG_VERSION").into(),
            seed,
            solver: SolverFlags {
                tol_feas: settings.tol_feas,
                tol_gap: settings.tol_gap,
                max_iter: settings.max_iter,
            },
            started: now(),
            finished: 0.0,
            timings: Vec::new(),
            outputs: Vec::new(),
            dir: dir.to_path_buf(),
        })
    }

    pub fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
        let path = self.dir.join(name);
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        self.outputs.push(path.clone());
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text)
    }

    pub fn finish(mut self) -> Result<()> {
        self.finished = now();
        let path = self.dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&self)? + "\n";
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }
}
