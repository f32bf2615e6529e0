//! Run manifests: what was run, with which resolved parameters, and the
//! digests of everything written.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::args::Profile;
use crate::Failure;

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactRecord {
    /// Relative to the manifest's directory.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionVerdict {
    pub id: u32,
    pub title: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub profile: Profile,
    /// Recorded for information; results do not depend on it.
    pub threads: Option<usize>,
    /// Fully resolved parameters of the command.
    pub params: Value,
    pub config_file: Option<String>,
    /// Digest of command, seed and parameters.
    pub config_hash: String,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub artifacts: Vec<ArtifactRecord>,
    pub summaries: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub verdicts: Vec<CriterionVerdict>,
}

impl RunManifest {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        command: &str,
        seed: u64,
        profile: Profile,
        threads: Option<usize>,
        params: Value,
        config_file: Option<String>,
        started_unix: u64,
        finished_unix: u64,
        artifacts: Vec<ArtifactRecord>,
        summaries: Vec<String>,
        verdicts: Vec<CriterionVerdict>,
    ) -> Self {
        let key = serde_json::json!({ "command": command, "seed": seed, "params": params });
        RunManifest {
            tool: "gmclab".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seed,
            profile,
            threads,
            config_hash: sha256_hex(key.to_string().as_bytes()),
            params,
            config_file,
            started_unix,
            finished_unix,
            artifacts,
            summaries,
            verdicts,
        }
    }

    pub fn write(&self, path: &Path) -> Result<(), Failure> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, text + "\n").map_err(|e| Failure::Precondition(format!("cannot write {}: {e}", path.display())))
    }

    pub fn read(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::Usage(format!("cannot read manifest {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("manifest {}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_matches_known_vector() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn config_hash_ignores_timing_and_round_trips() {
        let p = serde_json::json!({ "q": 2.0 });
        let a = RunManifest::new("zeta", 3, Profile::Desk, None, p.clone(), None, 1, 2, vec![], vec![], vec![]);
        let b = RunManifest::new("zeta", 3, Profile::Quick, Some(4), p.clone(), None, 9, 10, vec![], vec![], vec![]);
        let c = RunManifest::new("zeta", 4, Profile::Desk, None, p, None, 1, 2, vec![], vec![], vec![]);
        assert_eq!(a.config_hash, b.config_hash);
        assert_ne!(a.config_hash, c.config_hash);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        a.write(&path).unwrap();
        assert_eq!(RunManifest::read(&path).unwrap(), a);
        assert!(!std::fs::read_to_string(&path).unwrap().contains("verdicts"));
    }
}
