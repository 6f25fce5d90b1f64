//! Versioned, checksummed calibration documents.
//!
//! The file holds `{"schema_version", "checksum", "state"}`, where `checksum`
//! is the SHA-256 of the exact bytes of `state`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

use crate::error::{Error, Result};
use crate::platform::engine::CalibrationState;
use crate::platform::ingest::sha256_hex;

pub const STATE_SCHEMA_VERSION: u32 = 1;

#[derive(Serialize)]
struct DocumentOut<'a> {
    schema_version: u32,
    checksum: String,
    state: &'a RawValue,
}

#[derive(Deserialize)]
struct Header {
    schema_version: u32,
}

#[derive(Deserialize)]
struct DocumentIn<'a> {
    checksum: String,
    #[serde(borrow)]
    state: &'a RawValue,
}

fn integrity(e: impl std::fmt::Display) -> Error {
    Error::Integrity(e.to_string())
}

pub fn encode_state(state: &CalibrationState) -> Result<String> {
    let body = serde_json::to_string(state).map_err(integrity)?;
    let raw = RawValue::from_string(body).map_err(integrity)?;
    serde_json::to_string(&DocumentOut {
        schema_version: STATE_SCHEMA_VERSION,
        checksum: sha256_hex(raw.get().as_bytes()),
        state: &raw,
    })
    .map_err(integrity)
}

pub fn decode_state(text: &str) -> Result<CalibrationState> {
    let header: Header =
        serde_json::from_str(text).map_err(|e| Error::Integrity(format!("unreadable calibration document: {e}")))?;
    if header.schema_version != STATE_SCHEMA_VERSION {
        return Err(Error::Version {
            found: header.schema_version,
            expected: STATE_SCHEMA_VERSION,
        });
    }
    let doc: DocumentIn = serde_json::from_str(text).map_err(integrity)?;
    if sha256_hex(doc.state.get().as_bytes()) != doc.checksum {
        return Err(Error::Integrity("calibration state does not match its checksum".into()));
    }
    serde_json::from_str(doc.state.get()).map_err(integrity)
}

/// Writes via a temporary file and rename so readers never see a partial document.
pub fn persist_calibration(state: &CalibrationState, path: &Path) -> Result<()> {
    let text = encode_state(state)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, text)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_calibration(path: &Path) -> Result<CalibrationState> {
    decode_state(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotations::DisagreementMethod;
    use crate::conformal::{ClassMethod, RegMethod, RegOptions};
    use crate::platform::engine::DatasetRef;
    use crate::router::RoutingPolicy;
    use crate::simulator::{generate, SimConfig};
    use crate::types::CalibrationItem;

    fn cal(n: usize) -> Vec<CalibrationItem> {
        generate(&SimConfig { n, ..Default::default() })
            .unwrap()
            .iter()
            .map(|s| s.calibration_item(DisagreementMethod::Distance).unwrap())
            .collect()
    }

    #[test]
    fn round_trips_every_method() {
        let dir = tempfile::tempdir().unwrap();
        let items = cal(60);
        let path = dir.path().join("state.json");
        for cm in ClassMethod::ALL {
            for rm in RegMethod::ALL {
                // alpha 0.01 with 60 items gives an infinite quantile.
                for alpha in [0.01, 0.1] {
                    let policy = RoutingPolicy { alpha, ..Default::default() };
                    let opts = RegOptions { knn_k: 5, ..Default::default() };
                    let Ok(s) = CalibrationState::calibrate(&items, cm, rm, policy, opts) else {
                        continue;
                    };
                    let s = s.with_dataset(DatasetRef::new("a.csv", "s.csv"));
                    persist_calibration(&s, &path).unwrap();
                    assert_eq!(load_calibration(&path).unwrap(), s, "{cm:?} {rm:?} {alpha}");
                }
            }
        }
    }

    #[test]
    fn detects_damage_and_versions() {
        let items = cal(60);
        let s = CalibrationState::calibrate(&items, ClassMethod::Lac, RegMethod::Rn, RoutingPolicy::default(), RegOptions {
            knn_k: 5,
            ..Default::default()
        })
        .unwrap();
        let text = encode_state(&s).unwrap();
        assert!(matches!(decode_state(&text[..text.len() / 2]), Err(Error::Integrity(_))));
        let tampered = text.replacen("\"gamma\":0.8", "\"gamma\":0.7", 1);
        assert_ne!(tampered, text);
        assert!(matches!(decode_state(&tampered), Err(Error::Integrity(_))));
        let old = text.replacen("\"schema_version\":1", "\"schema_version\":0", 1);
        let err = decode_state(&old).unwrap_err();
        assert_eq!(err, Error::Version { found: 0, expected: 1 });
        assert!(err.to_string().contains('0') && err.to_string().contains('1'));
    }
}
