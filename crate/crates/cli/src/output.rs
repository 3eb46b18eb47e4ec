use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::time::Instant;

use serde_json::{json, Map, Value};

use crate::config::Config;
use crate::CliError;

pub struct Output {
    dir: PathBuf,
    files: Vec<String>,
    results: Map<String, Value>,
    started: Instant,
}

impl Output {
    pub fn create(dir: PathBuf) -> Result<Self, CliError> {
        fs::create_dir_all(&dir).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Self { dir, files: Vec::new(), results: Map::new(), started: Instant::now() })
    }

    pub fn csv<F>(&mut self, name: &str, write: F) -> Result<(), CliError>
    where
        F: FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
    {
        let path = self.dir.join(name);
        let mut w = BufWriter::new(File::create(&path)?);
        write(&mut w).and_then(|_| w.flush()).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        self.files.push(name.to_string());
        Ok(())
    }

    pub fn result(&mut self, key: &str, value: impl Into<Value>) {
        self.results.insert(key.to_string(), value.into());
    }

    /// Writes `config.toml` (rerunnable as `--config`) and `manifest.json`.
    pub fn finish(self, command: &str, cfg: &Config) -> Result<PathBuf, CliError> {
        let resolved = toml::to_string(cfg).map_err(|e| CliError::Runtime(format!("serializing config: {e}")))?;
        fs::write(self.dir.join("config.toml"), &resolved)?;
        let manifest = json!({
            "command": command,
            "seed": cfg.run.seed,
            "config": serde_json::to_value(cfg).map_err(|e| CliError::Runtime(e.to_string()))?,
            "outputs": self.files,
            "results": self.results,
            "versions": { "mixdrift": env!("CARGO_PKG_VERSION") },
            "wall_time_secs": self.started.elapsed().as_secs_f64(),
        });
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Runtime(e.to_string()))?;
        fs::write(self.dir.join("manifest.json"), text + "\n")?;
        Ok(self.dir)
    }
}

/// `None` becomes JSON null so unfinished estimates stay visible in the manifest.
pub fn opt(v: Option<f64>) -> Value {
    v.map(Value::from).unwrap_or(Value::Null)
}
