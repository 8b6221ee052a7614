use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{LabError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub run_id: String,
    pub verb: String,
    pub config_hash: String,
    pub seed: u64,
    /// Paths relative to the run directory, mapped to SHA-256 digests.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub wall_clock_secs: f64,
    pub versions: BTreeMap<String, String>,
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| LabError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn digests(root: &Path, files: &[String]) -> Result<BTreeMap<String, String>> {
    files.iter().map(|f| Ok((f.clone(), file_digest(&root.join(f))?))).collect()
}

impl Manifest {
    pub fn versions() -> BTreeMap<String, String> {
        BTreeMap::from([
            ("rlstab".to_string(), env!("CARGO_PKG_VERSION").to_string()),
            ("format".to_string(), "1".to_string()),
        ])
    }

    /// Recomputes every recorded digest and lists the files that differ.
    pub fn verify(&self, root: &Path) -> Result<Vec<String>> {
        let mut bad = Vec::new();
        for (f, d) in self.inputs.iter().chain(&self.outputs) {
            if &file_digest(&root.join(f))? != d {
                bad.push(f.clone());
            }
        }
        Ok(bad)
    }
}
