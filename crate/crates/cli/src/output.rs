use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::hex;
use crate::error::{CliError, CliResult};

/// Environment variable naming the default output directory.
pub const OUTPUT_DIR_ENV: &str = "NHHMM_OUTPUT_DIR";

/// An output directory that remembers what was written to it.
pub struct OutputDir {
    dir: PathBuf,
    written: Vec<String>,
}

impl OutputDir {
    /// Uses `explicit`, else the environment default.
    pub fn resolve(explicit: Option<&Path>) -> CliResult<Self> {
        let dir = match explicit {
            Some(p) => p.to_path_buf(),
            None => std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from).ok_or_else(|| {
                CliError::validation(format!("no output directory: pass --out or set {OUTPUT_DIR_ENV}"))
            })?,
        };
        std::fs::create_dir_all(&dir)
            .map_err(|e| CliError::validation(format!("cannot create output directory {}: {e}", dir.display())))?;
        Ok(Self {
            dir,
            written: Vec::new(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.dir
    }

    /// Writes one artifact through `f`.
    pub fn write<F>(&mut self, name: &str, f: F) -> CliResult<()>
    where
        F: FnOnce(&mut BufWriter<File>) -> CliResult<()>,
    {
        let mut w = BufWriter::new(File::create(self.dir.join(name))?);
        f(&mut w)?;
        w.flush()?;
        self.written.push(name.to_string());
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<()> {
        self.write(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value)?;
            writeln!(w)?;
            Ok(())
        })
    }

    /// Writes `manifest.json` covering every artifact written so far.
    pub fn finish(mut self, mut manifest: Manifest) -> CliResult<PathBuf> {
        manifest.outputs = self
            .written
            .iter()
            .map(|n| file_digest(&self.dir.join(n)).map(|sha256| FileDigest { path: n.clone(), sha256 }))
            .collect::<CliResult<_>>()?;
        self.write_json("manifest.json", &manifest)?;
        Ok(self.dir)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

/// Everything needed to rerun a command and compare its outputs.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub command: String,
    pub arguments: Vec<String>,
    pub seed: Option<u64>,
    pub config_hash: String,
    pub config: serde_json::Value,
    pub library_version: &'static str,
    pub cli_version: &'static str,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

impl Manifest {
    pub fn new<C: Serialize>(command: &str, seed: Option<u64>, config: &C, config_hash: String) -> CliResult<Self> {
        Ok(Self {
            command: command.to_string(),
            arguments: std::env::args().skip(1).collect(),
            seed,
            config_hash,
            config: serde_json::to_value(config)?,
            library_version: nhhmm::VERSION,
            cli_version: env!("CARGO_PKG_VERSION"),
            inputs: Vec::new(),
            outputs: Vec::new(),
        })
    }

    pub fn input(mut self, path: &Path) -> CliResult<Self> {
        self.inputs.push(FileDigest {
            path: path.display().to_string(),
            sha256: file_digest(path)?,
        });
        Ok(self)
    }
}

pub fn file_digest(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path)?;
    Ok(hex(&Sha256::digest(bytes)))
}
