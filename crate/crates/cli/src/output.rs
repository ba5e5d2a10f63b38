use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::Outcome;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Serialize)]
struct InputDigest {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    subcommand: &'static str,
    config: Value,
    inputs: &'a BTreeMap<String, InputDigest>,
    outputs: &'a [String],
}

/// Inputs read and files written by one invocation.
pub struct Run {
    dir: PathBuf,
    subcommand: &'static str,
    inputs: BTreeMap<String, InputDigest>,
    outputs: Vec<String>,
}

impl Run {
    pub fn new(dir: &Path, subcommand: &'static str) -> Outcome<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Run {
            dir: dir.to_path_buf(),
            subcommand,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
        })
    }

    /// Reads an input file and records its digest under `role`.
    pub fn read(&mut self, role: &str, path: &Path) -> Outcome<Vec<u8>> {
        let bytes = std::fs::read(path).map_err(|e| crate::Failure::Data {
            kind: "IoError",
            message: format!("{}: {e}", path.display()),
        })?;
        self.inputs.insert(
            role.to_string(),
            InputDigest {
                path: path.display().to_string(),
                sha256: hex::encode(Sha256::digest(&bytes)),
            },
        );
        Ok(bytes)
    }

    pub fn comment(&self) -> String {
        format!("# synthctl {VERSION} {}\n", self.subcommand)
    }

    pub fn table(&self, header: &[&str]) -> Outcome<Table> {
        let mut w = csv::Writer::from_writer(self.comment().into_bytes());
        w.write_record(header)?;
        Ok(Table { w })
    }

    pub fn save(&mut self, name: impl AsRef<Path>, bytes: &[u8]) -> Outcome {
        let name = name.as_ref();
        std::fs::write(self.dir.join(name), bytes)?;
        self.outputs.push(name.display().to_string());
        Ok(())
    }

    pub fn save_table(&mut self, name: &str, t: Table) -> Outcome {
        let bytes = t.w.into_inner().map_err(|e| std::io::Error::other(e.to_string()))?;
        self.save(name, &bytes)
    }

    pub fn finish(self, config: Value) -> Outcome {
        let manifest = Manifest {
            tool: "synthctl",
            version: VERSION,
            subcommand: self.subcommand,
            config,
            inputs: &self.inputs,
            outputs: &self.outputs,
        };
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        std::fs::write(self.dir.join("manifest.json"), text)?;
        Ok(())
    }
}

pub struct Table {
    w: csv::Writer<Vec<u8>>,
}

impl Table {
    pub fn row<I, S>(&mut self, record: I) -> Outcome
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.w.write_record(record)?;
        Ok(())
    }
}

pub fn num(v: f64) -> String {
    v.to_string()
}

pub fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}
