//! Run manifests: a plain `key=value` record written next to every output.
//!
//! The recorded argument vector is enough to replay the run with `rerun`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunManifest {
    pub command: String,
    pub params: Vec<(String, String)>,
    pub seeds: Vec<(String, u64)>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub version: String,
    pub duration: Duration,
    /// Arguments after the program name.
    pub args: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, args: Vec<String>) -> Self {
        RunManifest {
            command: command.to_string(),
            version: VERSION.to_string(),
            args,
            ..Default::default()
        }
    }

    pub fn param(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.params.push((key.to_string(), value.to_string()));
        self
    }

    pub fn seed(&mut self, key: &str, value: u64) -> &mut Self {
        self.seeds.push((key.to_string(), value));
        self
    }

    pub fn input(&mut self, path: &Path) -> &mut Self {
        self.inputs.push(path.to_path_buf());
        self
    }

    pub fn output(&mut self, path: &Path) -> &mut Self {
        self.outputs.push(path.to_path_buf());
        self
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("manifest v1\n");
        let _ = writeln!(out, "command={}", self.command);
        let _ = writeln!(out, "version={}", self.version);
        let _ = writeln!(out, "duration_ms={}", self.duration.as_millis());
        for (k, v) in &self.seeds {
            let _ = writeln!(out, "seed.{k}={v}");
        }
        for (k, v) in &self.params {
            let _ = writeln!(out, "param.{k}={v}");
        }
        for p in &self.inputs {
            let _ = writeln!(out, "input={}", p.display());
        }
        for p in &self.outputs {
            let _ = writeln!(out, "output={}", p.display());
        }
        for a in &self.args {
            let _ = writeln!(out, "arg={a}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some("manifest v1") {
            bail!("not a run manifest (missing 'manifest v1' header)");
        }
        let mut m = RunManifest::default();
        for (n, line) in lines.enumerate() {
            let (key, value) = line
                .split_once('=')
                .with_context(|| format!("manifest line {}: expected key=value", n + 2))?;
            match key {
                "command" => m.command = value.to_string(),
                "version" => m.version = value.to_string(),
                "duration_ms" => m.duration = Duration::from_millis(value.parse()?),
                "input" => m.inputs.push(value.into()),
                "output" => m.outputs.push(value.into()),
                "arg" => m.args.push(value.to_string()),
                _ => {
                    if let Some(k) = key.strip_prefix("seed.") {
                        m.seeds.push((k.to_string(), value.parse()?));
                    } else if let Some(k) = key.strip_prefix("param.") {
                        m.params.push((k.to_string(), value.to_string()));
                    } else {
                        bail!("manifest line {}: unknown key '{key}'", n + 2);
                    }
                }
            }
        }
        Ok(m)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).with_context(|| format!("cannot write manifest {}", path.display()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("cannot read manifest {}", path.display()))?;
        Self::from_text(&text)
    }
}

/// `<out>/manifest.txt` for directory outputs, `<out>.manifest` otherwise.
pub fn default_path(out: &Path, out_is_dir: bool) -> PathBuf {
    if out_is_dir {
        out.join("manifest.txt")
    } else {
        let mut s = out.as_os_str().to_owned();
        s.push(".manifest");
        PathBuf::from(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut m = RunManifest::new("gen", vec!["gen".into(), "wind".into(), "--n=3".into()]);
        m.param("kind", "wind").param("n", 3).seed("data", 7);
        m.input(Path::new("a.csv")).output(Path::new("out dir/b.csv"));
        m.duration = Duration::from_millis(42);
        assert_eq!(RunManifest::from_text(&m.to_text()).unwrap(), m);
    }

    #[test]
    fn rejects_foreign_text() {
        assert!(RunManifest::from_text("hello").is_err());
        assert!(RunManifest::from_text("manifest v1\nbogus=1").is_err());
    }

    #[test]
    fn default_paths() {
        assert_eq!(default_path(Path::new("d/x.csv"), false), PathBuf::from("d/x.csv.manifest"));
        assert_eq!(default_path(Path::new("d"), true), PathBuf::from("d/manifest.txt"));
    }
}
