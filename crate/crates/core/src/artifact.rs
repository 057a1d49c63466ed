//! Versioned on-disk container for solved equilibria and run manifests.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::economy::EconomyConfig;
use crate::solver::EquilibriumSolution;
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"RSOVSOL\0";
pub const FORMAT_VERSION: u32 = 1;

/// Hex SHA-256 of the canonical TOML rendering of a config.
pub fn config_hash(config: &EconomyConfig) -> String {
    hex::encode(Sha256::digest(config.to_toml_string().as_bytes()))
}

/// Layout: magic, format version (u32 LE), config hash (32 bytes), bincode body.
pub fn save_solution(path: &Path, solution: &EquilibriumSolution) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let digest = Sha256::digest(solution.config.to_toml_string().as_bytes());
    w.write_all(MAGIC)
        .and_then(|_| w.write_all(&FORMAT_VERSION.to_le_bytes()))
        .and_then(|_| w.write_all(&digest))
        .map_err(|e| Error::io(path, e))?;
    bincode::serialize_into(&mut w, solution)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_solution(path: &Path) -> Result<EquilibriumSolution> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut header = [0u8; 8 + 4 + 32];
    r.read_exact(&mut header).map_err(|e| Error::io(path, e))?;
    if &header[..8] != MAGIC {
        return Err(Error::Serialization(format!(
            "{} is not a solution artifact",
            path.display()
        )));
    }
    let found = u32::from_le_bytes(header[8..12].try_into().expect("4 bytes"));
    if found != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found,
            expected: FORMAT_VERSION,
        });
    }
    let mut solution: EquilibriumSolution = bincode::deserialize_from(&mut r)?;
    if hex::encode(&header[12..]) != config_hash(&solution.config) {
        return Err(Error::Serialization(format!(
            "{}: stored config hash does not match its config",
            path.display()
        )));
    }
    solution.rebuild_field()?;
    Ok(solution)
}

/// Provenance record written next to every command's outputs.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunManifest {
    pub version: String,
    pub command: Vec<String>,
    pub config_hash: Option<String>,
    pub seed: Option<u64>,
    /// Seconds since the Unix epoch.
    pub started: u64,
    pub finished: u64,
    pub artifacts: Vec<PathBuf>,
    /// Headline numbers produced by the command.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub summary: BTreeMap<String, serde_json::Value>,
}

impl RunManifest {
    pub fn start(command: Vec<String>) -> Self {
        RunManifest {
            version: env!("CARGO_PKG_VERSION").to_string(),
            command,
            config_hash: None,
            seed: None,
            started: now(),
            finished: 0,
            artifacts: Vec::new(),
            summary: BTreeMap::new(),
        }
    }

    pub fn finish(&mut self, path: &Path) -> Result<()> {
        self.finished = now();
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::economy::Numerics;
    use crate::solver::solve_equilibrium;

    #[test]
    fn round_trip_preserves_solution() {
        let cfg = EconomyConfig {
            numerics: Numerics {
                n_y: 5,
                n_b: 20,
                n_x: 3,
                ..Numerics::small()
            },
            ..EconomyConfig::default()
        };
        let sol = solve_equilibrium(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sol.bin");
        save_solution(&path, &sol).unwrap();
        let back = load_solution(&path).unwrap();
        assert_eq!(back.prices, sol.prices);
        assert_eq!(back.policies, sol.policies);
        assert_eq!(back.config, sol.config);
        assert_eq!(back.field(), sol.field());

        let mut bytes = fs::read(&path).unwrap();
        bytes[8] = 99;
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_solution(&path),
            Err(Error::VersionMismatch { found: 99, .. })
        ));
    }

    #[test]
    fn hash_tracks_config_changes() {
        let a = EconomyConfig::default();
        let b = EconomyConfig { beta: 0.9, ..a.clone() };
        assert_eq!(config_hash(&a), config_hash(&a.clone()));
        assert_ne!(config_hash(&a), config_hash(&b));
        assert_eq!(config_hash(&a).len(), 64);
    }
}
