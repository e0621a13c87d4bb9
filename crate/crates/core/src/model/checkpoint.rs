//! Versioned, hash-checked JSON checkpoints of a [`ModelState`].

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::ModelState;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "shortcut-lab-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    hash: String,
    state: ModelState,
}

/// Writes `state` with its parameter hash.
pub fn save_checkpoint(state: &ModelState, path: &Path) -> Result<String> {
    let hash = state.param_hash();
    let file = CheckpointFile {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        hash: hash.clone(),
        state: state.clone(),
    };
    fs::write(path, serde_json::to_vec(&file)?)?;
    Ok(hash)
}

/// Reads a checkpoint, rejecting unknown versions and hash mismatches.
pub fn load_checkpoint(path: &Path) -> Result<ModelState> {
    let raw: serde_json::Value = serde_json::from_slice(&fs::read(path)?)?;
    if raw.get("format").and_then(|v| v.as_str()) != Some(CHECKPOINT_FORMAT) {
        return Err(Error::Checkpoint(format!(
            "{} is not a model checkpoint",
            path.display()
        )));
    }
    let version = raw.get("version").and_then(|v| v.as_u64()).unwrap_or(0);
    if version != CHECKPOINT_VERSION as u64 {
        return Err(Error::SchemaVersion {
            path: path.to_path_buf(),
            found: version as u32,
            expected: CHECKPOINT_VERSION,
        });
    }
    let file: CheckpointFile = serde_json::from_value(raw)?;
    file.state.spec.validate()?;
    let hash = file.state.param_hash();
    if hash != file.hash {
        return Err(Error::Checkpoint(format!(
            "{}: content hash {hash} does not match recorded {}",
            path.display(),
            file.hash
        )));
    }
    Ok(file.state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelSpec;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let mut state =
            ModelState::with_heads(ModelSpec::new(16, vec![4, 8]), &["chf"], 7).unwrap();
        state.heads.get_mut("chf").unwrap().weight.fill(1.0 / 3.0);
        let hash = save_checkpoint(&state, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back, state);
        assert_eq!(back.param_hash(), hash);
    }

    #[test]
    fn tampering_and_versions_are_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let state = ModelState::with_heads(ModelSpec::new(16, vec![4]), &["chf"], 0).unwrap();
        save_checkpoint(&state, &path).unwrap();
        let mut raw: serde_json::Value = serde_json::from_slice(&fs::read(&path).unwrap()).unwrap();
        raw["state"]["heads"]["chf"]["bias"] = serde_json::json!(1.5);
        fs::write(&path, serde_json::to_vec(&raw).unwrap()).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Checkpoint(_))));
        raw["version"] = serde_json::json!(99);
        fs::write(&path, serde_json::to_vec(&raw).unwrap()).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(Error::SchemaVersion { .. })
        ));
    }
}
