//! Hash-chained, append-only audit log.
//!
//! Each record links to its predecessor through `prev_hash`; the chain head
//! is tracked separately so suffix truncation is detectable. Payloads carry
//! only identifiers and hashes, never field values — enforced by a schema
//! check on every append.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::VaultError;
use crate::time::Timestamp;

/// `prev_hash` of the first record in every chain.
pub const GENESIS_HASH: &str =
    "0000000000000000000000000000000000000000000000000000000000000000";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditKind {
    Grant,
    Revoke,
    Ingest,
    LlmTurn,
    Rotation,
    Wipe,
}

impl fmt::Display for AuditKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            AuditKind::Grant => "grant",
            AuditKind::Revoke => "revoke",
            AuditKind::Ingest => "ingest",
            AuditKind::LlmTurn => "llm_turn",
            AuditKind::Rotation => "rotation",
            AuditKind::Wipe => "wipe",
        };
        f.write_str(s)
    }
}

/// Key-value payload restricted to id-safe tokens (no whitespace, no prose),
/// so raw field values can never end up in the log.
pub type AuditPayload = BTreeMap<String, String>;

pub(crate) fn validate_payload(payload: &AuditPayload) -> Result<(), VaultError> {
    for (key, value) in payload {
        let key_ok = !key.is_empty()
            && key.chars().next().unwrap().is_ascii_lowercase()
            && key.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_');
        if !key_ok {
            return Err(VaultError::PayloadKeyInvalid(key.clone()));
        }
        let value_ok = value.len() <= 256
            && value
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || "_.:,/+=@-".contains(c));
        if !value_ok {
            return Err(VaultError::PayloadValueInvalid {
                key: key.clone(),
                value: value.clone(),
            });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub seq: u64,
    pub prev_hash: String,
    pub payload_hash: String,
    pub kind: AuditKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prompt_hash: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub retrieved_ids: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model_signature: Option<String>,
    pub ts: Timestamp,
    pub payload: AuditPayload,
}

impl AuditRecord {
    /// The link hash of this record: SHA-256 over its canonical JSON bytes.
    pub fn link_hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("audit record serializes");
        hex::encode(Sha256::digest(bytes))
    }
}

pub(crate) fn hash_payload(payload: &AuditPayload) -> String {
    let bytes = serde_json::to_vec(payload).expect("payload serializes");
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChainStatus {
    Ok,
    Broken { first_bad_seq: u64 },
}

/// Verifies a chain: seq contiguity from 0, payload hash integrity, link
/// hashes, and (when given) the expected head hash. Linear time.
pub fn verify_chain(
    records: &[AuditRecord],
    expected_head: Option<&str>,
) -> Result<(), VaultError> {
    let mut prev_hash = GENESIS_HASH.to_string();
    for (i, record) in records.iter().enumerate() {
        let broken = |reason: &str| VaultError::ChainBroken {
            first_bad_seq: record.seq,
            reason: reason.to_string(),
        };
        if record.seq != i as u64 {
            return Err(VaultError::ChainBroken {
                first_bad_seq: i as u64,
                reason: format!("expected seq {i}, found {}", record.seq),
            });
        }
        if record.prev_hash != prev_hash {
            return Err(broken("prev_hash mismatch"));
        }
        if hash_payload(&record.payload) != record.payload_hash {
            return Err(broken("payload hash mismatch"));
        }
        prev_hash = record.link_hash();
    }
    if let Some(expected) = expected_head {
        if prev_hash != expected {
            return Err(VaultError::ChainBroken {
                first_bad_seq: records.len() as u64,
                reason: "head hash mismatch (chain truncated or rewritten)".to_string(),
            });
        }
    }
    Ok(())
}

/// One append-only chain, optionally mirrored to a JSON-lines file.
#[derive(Debug)]
pub struct AuditChain {
    records: Vec<AuditRecord>,
    head: String,
    path: Option<PathBuf>,
}

impl AuditChain {
    pub fn in_memory() -> Self {
        AuditChain {
            records: Vec::new(),
            head: GENESIS_HASH.to_string(),
            path: None,
        }
    }

    /// Opens (or creates) a file-backed chain, verifying it on load.
    pub fn open(path: &Path) -> Result<Self, VaultError> {
        let mut chain = AuditChain {
            records: Vec::new(),
            head: GENESIS_HASH.to_string(),
            path: Some(path.to_path_buf()),
        };
        if path.exists() {
            let file = File::open(path).map_err(|e| VaultError::io(path, e))?;
            for line in BufReader::new(file).lines() {
                let line = line.map_err(|e| VaultError::io(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let record: AuditRecord =
                    serde_json::from_str(&line).map_err(|e| VaultError::Corrupt {
                        path: path.display().to_string(),
                        message: e.to_string(),
                    })?;
                chain.records.push(record);
            }
            verify_chain(&chain.records, None)?;
            if let Some(last) = chain.records.last() {
                chain.head = last.link_hash();
            }
        }
        Ok(chain)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn head_hash(&self) -> &str {
        &self.head
    }

    pub fn records(&self) -> &[AuditRecord] {
        &self.records
    }

    pub fn verify(&self) -> Result<(), VaultError> {
        verify_chain(&self.records, Some(&self.head))
    }

    /// Appends a record; payloads are schema-checked for id-safety.
    pub fn append(
        &mut self,
        kind: AuditKind,
        payload: AuditPayload,
        ts: Timestamp,
    ) -> Result<&AuditRecord, VaultError> {
        self.append_llm(kind, payload, ts, None, None, None)
    }

    /// Appends an `llm_turn`-style record carrying prompt hash, retrieved
    /// ids and model signature.
    pub fn append_llm(
        &mut self,
        kind: AuditKind,
        payload: AuditPayload,
        ts: Timestamp,
        prompt_hash: Option<String>,
        retrieved_ids: Option<Vec<String>>,
        model_signature: Option<String>,
    ) -> Result<&AuditRecord, VaultError> {
        validate_payload(&payload)?;
        let record = AuditRecord {
            seq: self.records.len() as u64,
            prev_hash: self.head.clone(),
            payload_hash: hash_payload(&payload),
            kind,
            prompt_hash,
            retrieved_ids,
            model_signature,
            ts,
            payload,
        };
        if let Some(path) = &self.path {
            let mut file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| VaultError::io(path, e))?;
            let line = serde_json::to_string(&record).expect("audit record serializes");
            writeln!(file, "{line}").map_err(|e| VaultError::io(path, e))?;
        }
        self.head = record.link_hash();
        self.records.push(record);
        Ok(self.records.last().unwrap())
    }
}

/// A set of named chains: one per care circle plus a system chain, so
/// verification stays local to a circle.
#[derive(Debug)]
pub struct AuditLog {
    dir: Option<PathBuf>,
    chains: BTreeMap<String, AuditChain>,
}

pub const SYSTEM_CHAIN: &str = "system";

impl AuditLog {
    pub fn in_memory() -> Self {
        AuditLog {
            dir: None,
            chains: BTreeMap::new(),
        }
    }

    pub fn persistent(dir: &Path) -> Result<Self, VaultError> {
        std::fs::create_dir_all(dir).map_err(|e| VaultError::io(dir, e))?;
        let mut log = AuditLog {
            dir: Some(dir.to_path_buf()),
            chains: BTreeMap::new(),
        };
        for entry in std::fs::read_dir(dir).map_err(|e| VaultError::io(dir, e))? {
            let entry = entry.map_err(|e| VaultError::io(dir, e))?;
            let path = entry.path();
            if path.extension().and_then(|e| e.to_str()) == Some("jsonl") {
                let name = path
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .unwrap_or_default()
                    .to_string();
                log.chains.insert(name, AuditChain::open(&path)?);
            }
        }
        Ok(log)
    }

    pub fn chain(&mut self, name: &str) -> Result<&mut AuditChain, VaultError> {
        if !self.chains.contains_key(name) {
            let chain = match &self.dir {
                Some(dir) => AuditChain::open(&dir.join(format!("{name}.jsonl")))?,
                None => AuditChain::in_memory(),
            };
            self.chains.insert(name.to_string(), chain);
        }
        Ok(self.chains.get_mut(name).unwrap())
    }

    pub fn chain_names(&self) -> impl Iterator<Item = &str> {
        self.chains.keys().map(String::as_str)
    }

    pub fn existing(&self, name: &str) -> Option<&AuditChain> {
        self.chains.get(name)
    }

    pub fn verify_all(&self) -> Result<(), VaultError> {
        for chain in self.chains.values() {
            chain.verify()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn payload(entries: &[(&str, &str)]) -> AuditPayload {
        entries
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect()
    }

    fn build_chain(n: usize) -> AuditChain {
        let mut chain = AuditChain::in_memory();
        for i in 0..n {
            chain
                .append(
                    AuditKind::Ingest,
                    payload(&[("event_id", &format!("e{i:04}"))]),
                    Timestamp::from_millis(i as i64 * 1000),
                )
                .unwrap();
        }
        chain
    }

    #[test]
    fn honest_chain_verifies() {
        let chain = build_chain(1000);
        assert!(chain.verify().is_ok());
    }

    #[test]
    fn empty_chain_verifies() {
        let chain = AuditChain::in_memory();
        assert!(chain.verify().is_ok());
    }

    #[test]
    fn consistent_payload_rewrite_breaks_next_link() {
        // The tamper rewrites record 500's payload and recomputes its
        // payload_hash, so the break surfaces at seq 501 where the link no
        // longer matches.
        let chain = build_chain(1000);
        let mut records = chain.records().to_vec();
        records[500].payload = payload(&[("event_id", "evil")]);
        records[500].payload_hash = hash_payload(&records[500].payload);
        let err = verify_chain(&records, Some(chain.head_hash())).unwrap_err();
        match err {
            VaultError::ChainBroken { first_bad_seq, .. } => assert_eq!(first_bad_seq, 501),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn clumsy_payload_edit_caught_at_its_own_seq() {
        let chain = build_chain(10);
        let mut records = chain.records().to_vec();
        records[4].payload = payload(&[("event_id", "evil")]);
        let err = verify_chain(&records, Some(chain.head_hash())).unwrap_err();
        match err {
            VaultError::ChainBroken { first_bad_seq, .. } => assert_eq!(first_bad_seq, 4),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn deletion_reorder_and_truncation_detected() {
        let chain = build_chain(20);
        let head = chain.head_hash();

        let mut missing = chain.records().to_vec();
        missing.remove(7);
        assert!(verify_chain(&missing, Some(head)).is_err());

        let mut swapped = chain.records().to_vec();
        swapped.swap(3, 4);
        assert!(verify_chain(&swapped, Some(head)).is_err());

        let truncated = &chain.records()[..19];
        assert!(verify_chain(truncated, Some(head)).is_err());
        // Without the head, a clean truncation is invisible by design; the
        // stored head is what pins the suffix.
        assert!(verify_chain(truncated, None).is_ok());
    }

    #[test]
    fn payload_schema_rejects_prose_values() {
        let mut chain = AuditChain::in_memory();
        let err = chain
            .append(
                AuditKind::Ingest,
                payload(&[("note", "heart rate was 72 bpm today")]),
                Timestamp::from_millis(0),
            )
            .unwrap_err();
        assert!(matches!(err, VaultError::PayloadValueInvalid { .. }));

        let err = chain
            .append(
                AuditKind::Ingest,
                payload(&[("Bad Key", "x")]),
                Timestamp::from_millis(0),
            )
            .unwrap_err();
        assert!(matches!(err, VaultError::PayloadKeyInvalid(_)));
    }

    #[test]
    fn file_backed_chain_reloads_and_appends() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("system.jsonl");
        {
            let mut chain = AuditChain::open(&path).unwrap();
            chain
                .append(
                    AuditKind::Rotation,
                    payload(&[("key_id", "k000001")]),
                    Timestamp::from_millis(0),
                )
                .unwrap();
        }
        let mut chain = AuditChain::open(&path).unwrap();
        assert_eq!(chain.len(), 1);
        chain
            .append(
                AuditKind::Rotation,
                payload(&[("key_id", "k000002")]),
                Timestamp::from_millis(1000),
            )
            .unwrap();
        assert!(chain.verify().is_ok());

        let reopened = AuditChain::open(&path).unwrap();
        assert_eq!(reopened.len(), 2);
        assert_eq!(reopened.head_hash(), chain.head_hash());
    }
}
