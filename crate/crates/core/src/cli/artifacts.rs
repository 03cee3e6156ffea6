use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const PROVENANCE_FILE: &str = "provenance.toml";

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Files of one command, held in memory until the command has succeeded.
#[derive(Debug, Default)]
pub struct Outputs {
    files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, bytes: impl Into<Vec<u8>>) {
        self.files.push((name.to_string(), bytes.into()));
    }

    /// Writes every file plus `provenance.toml` (with the creation time and
    /// a digest per file) into `dir`. Each file goes through a temporary
    /// sibling and a rename; on failure the temporaries are removed and a
    /// directory created here is removed again if it is still empty.
    pub fn commit(mut self, dir: &Path, mut provenance: toml::Table) -> Result<()> {
        let created = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let mut digests = toml::Table::new();
        for (name, bytes) in &self.files {
            digests.insert(name.clone(), sha256_hex(bytes).into());
        }
        provenance.insert("created_unix".into(), toml::Value::Integer(created as i64));
        provenance.insert("outputs".into(), digests.into());
        let text = toml::to_string(&provenance).expect("provenance serializes");
        self.files.push((PROVENANCE_FILE.to_string(), text.into_bytes()));

        let existed = dir.exists();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut tmps: Vec<PathBuf> = Vec::new();
        let result = (|| -> Result<()> {
            for (name, bytes) in &self.files {
                let tmp = dir.join(format!(".{name}.tmp"));
                tmps.push(tmp.clone());
                let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
                f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
                f.sync_all().map_err(|e| Error::io(&tmp, e))?;
            }
            for (name, _) in &self.files {
                let (tmp, dst) = (dir.join(format!(".{name}.tmp")), dir.join(name));
                fs::rename(&tmp, &dst).map_err(|e| Error::io(&dst, e))?;
            }
            Ok(())
        })();
        if result.is_err() {
            for t in &tmps {
                let _ = fs::remove_file(t);
            }
            if !existed {
                let _ = fs::remove_dir(dir);
            }
        }
        result
    }
}
