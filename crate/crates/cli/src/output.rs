//! Output files guarded by a `.partial` marker, plus the run sidecar.

use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::CliError;

/// Files written under one output base path.
///
/// `<base>.partial` exists from the first write until [`Outputs::finish`]
/// writes the `<base>.run` sidecar; a leftover marker means the run died
/// half way.
pub struct Outputs {
    base: PathBuf,
    written: Vec<PathBuf>,
}

fn with_suffix(base: &Path, suffix: &str) -> PathBuf {
    let mut s = base.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

impl Outputs {
    pub fn begin(base: PathBuf) -> Result<Self, CliError> {
        if let Some(dir) = base.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)
                .map_err(|e| CliError::Config(format!("cannot create output directory {}: {e}", dir.display())))?;
        }
        let marker = with_suffix(&base, ".partial");
        std::fs::write(&marker, "").map_err(|e| CliError::Config(format!("cannot write {}: {e}", marker.display())))?;
        Ok(Self { base, written: Vec::new() })
    }

    /// Write `<base><suffix>`; an empty suffix writes the base path itself.
    pub fn write(&mut self, suffix: &str, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
        let path = with_suffix(&self.base, suffix);
        std::fs::write(&path, bytes)?;
        self.written.push(path);
        Ok(())
    }

    pub fn finish(self, command: &str, cfg: &RunConfig) -> Result<(), CliError> {
        let mut s =
            format!("command = {command}\nversion = {}\nconfig_hash = {}\n", env!("CARGO_PKG_VERSION"), cfg.hash());
        for (k, v) in cfg.seeds() {
            s.push_str(&format!("{k} = {v}\n"));
        }
        for p in &self.written {
            let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            s.push_str(&format!("output = {name}\n"));
        }
        s.push_str("\n# resolved config\n");
        for line in cfg.canonical().lines() {
            s.push_str(&format!("# {line}\n"));
        }
        std::fs::write(with_suffix(&self.base, ".run"), s)?;
        std::fs::remove_file(with_suffix(&self.base, ".partial"))?;
        Ok(())
    }
}
