//! Disk-backed sealed stores, resumable key rotation and scope revocation.
//!
//! Layout of one store directory:
//!
//! ```text
//! <dir>/
//!   keyring.json        wrapped data keys + rotation history
//!   manifest.json       record ids, per-record key id, rewrap cursor
//!   records/<id>.bin    one sealed record per file (bincode)
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::audit::{AuditKind, AuditLog, AuditPayload, SYSTEM_CHAIN};
use super::keyring::{KeyRing, KeyRingState};
use super::{SealedRecord, VaultError};
use crate::ids::KeyId;
use crate::time::Timestamp;

const REWRAP_BATCH: usize = 100;

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
struct Manifest {
    /// record id -> key id currently sealing it.
    records: BTreeMap<String, KeyId>,
    /// Pending rewrap work, persisted so rotation survives a crash.
    rotation: Option<RotationState>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RotationState {
    new_key: KeyId,
    retired_keys: Vec<KeyId>,
    pending: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RotationReport {
    pub new_key: KeyId,
    pub rewrapped: usize,
    pub remaining: usize,
    pub complete: bool,
}

/// One encrypted record store with its own keyring.
pub struct SealedStore {
    dir: PathBuf,
    keyring: KeyRing,
    manifest: Manifest,
}

impl SealedStore {
    /// Opens a store, creating the directory and a fresh keyring on first
    /// use.
    pub fn open(dir: &Path, passphrase: &str, now: Timestamp) -> Result<Self, VaultError> {
        std::fs::create_dir_all(dir.join("records")).map_err(|e| VaultError::io(dir, e))?;
        let keyring_path = dir.join("keyring.json");
        let keyring = if keyring_path.exists() {
            let bytes =
                std::fs::read(&keyring_path).map_err(|e| VaultError::io(&keyring_path, e))?;
            let state: KeyRingState =
                serde_json::from_slice(&bytes).map_err(|e| VaultError::Corrupt {
                    path: keyring_path.display().to_string(),
                    message: e.to_string(),
                })?;
            KeyRing::from_state(passphrase, state)?
        } else {
            KeyRing::new(passphrase, now)
        };
        let manifest_path = dir.join("manifest.json");
        let manifest = if manifest_path.exists() {
            let bytes =
                std::fs::read(&manifest_path).map_err(|e| VaultError::io(&manifest_path, e))?;
            serde_json::from_slice(&bytes).map_err(|e| VaultError::Corrupt {
                path: manifest_path.display().to_string(),
                message: e.to_string(),
            })?
        } else {
            Manifest::default()
        };
        let mut store = SealedStore {
            dir: dir.to_path_buf(),
            keyring,
            manifest,
        };
        store.persist_keyring()?;
        store.persist_manifest()?;
        Ok(store)
    }

    pub fn len(&self) -> usize {
        self.manifest.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.records.is_empty()
    }

    pub fn record_ids(&self) -> impl Iterator<Item = &str> {
        self.manifest.records.keys().map(String::as_str)
    }

    pub fn contains(&self, record_id: &str) -> bool {
        self.manifest.records.contains_key(record_id)
    }

    pub fn keyring(&self) -> &KeyRing {
        &self.keyring
    }

    fn record_path(&self, record_id: &str) -> PathBuf {
        self.dir.join("records").join(format!("{record_id}.bin"))
    }

    fn persist_keyring(&self) -> Result<(), VaultError> {
        let path = self.dir.join("keyring.json");
        let bytes = serde_json::to_vec_pretty(self.keyring.state()).expect("keyring serializes");
        std::fs::write(&path, bytes).map_err(|e| VaultError::io(&path, e))
    }

    fn persist_manifest(&self) -> Result<(), VaultError> {
        let path = self.dir.join("manifest.json");
        let bytes = serde_json::to_vec_pretty(&self.manifest).expect("manifest serializes");
        std::fs::write(&path, bytes).map_err(|e| VaultError::io(&path, e))
    }

    /// Seals and writes a record. Overwrites an existing record of the same
    /// id.
    pub fn put(
        &mut self,
        record_id: &str,
        schema_version: u32,
        plaintext: &[u8],
    ) -> Result<(), VaultError> {
        let sealed = self.keyring.seal(record_id, schema_version, plaintext)?;
        self.write_sealed(&sealed)?;
        self.manifest
            .records
            .insert(record_id.to_string(), sealed.key_id.clone());
        self.persist_manifest()
    }

    fn write_sealed(&self, sealed: &SealedRecord) -> Result<(), VaultError> {
        let path = self.record_path(&sealed.record_id);
        let bytes = bincode::serialize(sealed).expect("sealed record serializes");
        std::fs::write(&path, bytes).map_err(|e| VaultError::io(&path, e))
    }

    fn read_sealed(&self, record_id: &str) -> Result<SealedRecord, VaultError> {
        if !self.contains(record_id) {
            return Err(VaultError::RecordNotFound(record_id.to_string()));
        }
        let path = self.record_path(record_id);
        let bytes = std::fs::read(&path).map_err(|e| VaultError::io(&path, e))?;
        bincode::deserialize(&bytes).map_err(|e| VaultError::Corrupt {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    /// Reads and unseals a record.
    pub fn get(&self, record_id: &str) -> Result<Vec<u8>, VaultError> {
        let sealed = self.read_sealed(record_id)?;
        self.keyring.unseal(&sealed)
    }

    /// Rotates to a fresh data key and rewraps every record, resuming any
    /// rotation that was interrupted.
    pub fn rotate_keys(&mut self, now: Timestamp) -> Result<RotationReport, VaultError> {
        self.rotate_keys_with_limit(now, usize::MAX)
    }

    /// Rotation bounded to at most `limit` rewraps, for crash-recovery
    /// testing and bounded maintenance windows. The rewrap cursor persists
    /// in the manifest, so a later call picks up exactly where this one
    /// stopped.
    pub fn rotate_keys_with_limit(
        &mut self,
        now: Timestamp,
        limit: usize,
    ) -> Result<RotationReport, VaultError> {
        if self.manifest.rotation.is_none() {
            let retired_keys: Vec<KeyId> = self
                .keyring
                .key_ids()
                .filter(|id| {
                    self.keyring
                        .entry(id)
                        .map(|e| !e.is_destroyed())
                        .unwrap_or(false)
                })
                .cloned()
                .collect();
            let new_key = self.keyring.new_data_key(now);
            for key in &retired_keys {
                self.keyring.retire(key, now);
            }
            let pending: Vec<String> = self.manifest.records.keys().cloned().collect();
            self.manifest.rotation = Some(RotationState {
                new_key,
                retired_keys,
                pending,
            });
            self.persist_keyring()?;
            self.persist_manifest()?;
        }

        let state = self.manifest.rotation.clone().unwrap();
        let new_key = state.new_key.clone();
        let mut pending = state.pending.clone();
        let mut rewrapped = 0usize;

        while rewrapped < limit {
            let Some(record_id) = pending.last().cloned() else {
                break;
            };
            let sealed = self.read_sealed(&record_id)?;
            if sealed.key_id != new_key {
                let plain = self.keyring.unseal(&sealed)?;
                let resealed = self.keyring.seal_with(
                    &new_key,
                    &record_id,
                    sealed.schema_version,
                    &plain,
                )?;
                self.write_sealed(&resealed)?;
                self.manifest
                    .records
                    .insert(record_id.clone(), new_key.clone());
            }
            pending.pop();
            rewrapped += 1;
            if rewrapped % REWRAP_BATCH == 0 {
                self.manifest.rotation.as_mut().unwrap().pending = pending.clone();
                self.persist_manifest()?;
            }
        }

        let remaining = pending.len();
        let complete = remaining == 0;
        if complete {
            for key in &state.retired_keys {
                self.keyring.destroy(key);
            }
            self.manifest.rotation = None;
        } else {
            self.manifest.rotation.as_mut().unwrap().pending = pending;
        }
        self.persist_keyring()?;
        self.persist_manifest()?;

        Ok(RotationReport {
            new_key,
            rewrapped,
            remaining,
            complete,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RevocationScope {
    CloudSync,
    ActorCache,
}

impl RevocationScope {
    pub fn dir_name(self) -> &'static str {
        match self {
            RevocationScope::CloudSync => "cloud_sync",
            RevocationScope::ActorCache => "actor_cache",
        }
    }
}

impl fmt::Display for RevocationScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.dir_name())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RevocationReport {
    pub scope: RevocationScope,
    pub keys_destroyed: usize,
    pub records_wiped: usize,
    /// Set when the scope was already revoked; the call is then a no-op.
    pub already_revoked: bool,
}

/// A collection of named sealed stores under one root, plus the audit log.
pub struct Vault {
    root: PathBuf,
    passphrase: String,
    stores: BTreeMap<String, SealedStore>,
    pub audit: AuditLog,
}

impl Vault {
    pub fn open(root: &Path, passphrase: &str) -> Result<Self, VaultError> {
        std::fs::create_dir_all(root).map_err(|e| VaultError::io(root, e))?;
        let audit = AuditLog::persistent(&root.join("audit"))?;
        Ok(Vault {
            root: root.to_path_buf(),
            passphrase: passphrase.to_string(),
            stores: BTreeMap::new(),
            audit,
        })
    }

    /// Opens (creating on demand) the named scope store, e.g. a circle
    /// directory or a sync cache.
    pub fn scope(&mut self, name: &str, now: Timestamp) -> Result<&mut SealedStore, VaultError> {
        if !self.stores.contains_key(name) {
            let store = SealedStore::open(&self.root.join(name), &self.passphrase, now)?;
            self.stores.insert(name.to_string(), store);
        }
        Ok(self.stores.get_mut(name).unwrap())
    }

    fn scope_exists(&self, name: &str) -> bool {
        self.stores.contains_key(name) || self.root.join(name).join("keyring.json").exists()
    }

    /// Destroys the scope's keys; with `wipe`, also deletes its sealed
    /// records. Revoking an already-revoked scope is a warning no-op.
    pub fn revoke_access(
        &mut self,
        scope: RevocationScope,
        wipe: bool,
        now: Timestamp,
    ) -> Result<RevocationReport, VaultError> {
        let name = scope.dir_name();
        if !self.scope_exists(name) {
            return Err(VaultError::UnknownScope(name.to_string()));
        }
        let store = self.scope(name, now)?;
        let keys_destroyed = store.keyring.destroy_all();
        store.persist_keyring()?;
        let already_revoked = keys_destroyed == 0;

        let mut records_wiped = 0;
        if wipe && !already_revoked {
            let ids: Vec<String> = store.manifest.records.keys().cloned().collect();
            for id in ids {
                let path = store.record_path(&id);
                std::fs::remove_file(&path).map_err(|e| VaultError::io(&path, e))?;
                store.manifest.records.remove(&id);
                records_wiped += 1;
            }
            store.persist_manifest()?;
        }

        if !already_revoked {
            let mut payload = AuditPayload::new();
            payload.insert("scope".to_string(), name.to_string());
            payload.insert("keys_destroyed".to_string(), keys_destroyed.to_string());
            payload.insert("records_wiped".to_string(), records_wiped.to_string());
            let kind = if wipe { AuditKind::Wipe } else { AuditKind::Revoke };
            self.audit.chain(SYSTEM_CHAIN)?.append(kind, payload, now)?;
        }

        Ok(RevocationReport {
            scope,
            keys_destroyed,
            records_wiped,
            already_revoked,
        })
    }
}
