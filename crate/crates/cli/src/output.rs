use std::fs;
use std::io;
use std::path::PathBuf;

use serde_json::{json, Value};

use crate::config::{Format, RunConfig};

/// Collects the files a run writes so the manifest can list them.
pub struct Output {
    pub dir: PathBuf,
    pub format: Format,
    pub plots: bool,
    pub lambda: f64,
    pub lambda_is_default: bool,
    files: Vec<String>,
}

impl Output {
    pub fn new(cfg: &RunConfig) -> io::Result<Self> {
        fs::create_dir_all(&cfg.output.dir)?;
        Ok(Self {
            dir: cfg.output.dir.clone(),
            format: cfg.output.format,
            plots: cfg.output.plots,
            lambda: cfg.cloud.lambda(),
            lambda_is_default: cfg.cloud.lambda_is_default(),
            files: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// `#` lines that open every CSV.
    pub fn header(&self, depends_on_lambda: bool) -> String {
        format!(
            "# lambda_m = {:e}\n# lambda_is_default = {}\n# depends_on_lambda = {}\n",
            self.lambda, self.lambda_is_default, depends_on_lambda
        )
    }

    pub fn provenance(&self, depends_on_lambda: bool) -> Value {
        json!({
            "lambda_m": self.lambda,
            "lambda_is_default": self.lambda_is_default,
            "depends_on_lambda": depends_on_lambda,
        })
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> io::Result<()> {
        fs::write(self.path(name), text)?;
        self.files.push(name.to_string());
        Ok(())
    }

    pub fn write_csv(&mut self, name: &str, text: &str) -> io::Result<()> {
        if self.format.csv() {
            self.write_text(name, text)?;
        }
        Ok(())
    }

    /// Writes `value` with a `provenance` key added at the top level.
    pub fn write_json(&mut self, name: &str, mut value: Value, depends_on_lambda: bool) -> io::Result<()> {
        if !self.format.json() {
            return Ok(());
        }
        if let Value::Object(map) = &mut value {
            map.insert("provenance".into(), self.provenance(depends_on_lambda));
        }
        let text = serde_json::to_string_pretty(&value).map_err(io::Error::other)?;
        self.write_text(name, &(text + "\n"))
    }

    /// Records an SVG written by the plotting code.
    pub fn record(&mut self, name: &str) {
        self.files.push(name.to_string());
    }

    pub fn write_manifest(&mut self, cfg: &RunConfig, command: &str, extra: Value) -> io::Result<()> {
        let manifest = json!({
            "command": command,
            "version": env!("CARGO_PKG_VERSION"),
            "config": cfg,
            "workers": rayon::current_num_threads(),
            "provenance": self.provenance(true),
            "files": self.files,
            "summary": extra,
        });
        let text = serde_json::to_string_pretty(&manifest).map_err(io::Error::other)?;
        fs::write(self.path("manifest.json"), text + "\n")
    }
}
