//! Data-key management: wrapping under a passphrase-derived master key,
//! rotation bookkeeping and destruction.

use std::collections::BTreeMap;

use chacha20poly1305::aead::{Aead, KeyInit, Payload};
use chacha20poly1305::{XChaCha20Poly1305, XNonce};
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{SealedRecord, VaultError};
use crate::ids::KeyId;
use crate::time::Timestamp;

const NONCE_LEN: usize = 24;
const KEY_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct WrappedKey {
    nonce: Vec<u8>,
    bytes: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataKeyEntry {
    /// Wrapped key material; `None` once the key is destroyed.
    wrapped: Option<WrappedKey>,
    pub created: Timestamp,
    pub retired: Option<Timestamp>,
}

impl DataKeyEntry {
    pub fn is_destroyed(&self) -> bool {
        self.wrapped.is_none()
    }
}

/// Serialized keyring state (everything except the master key itself).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KeyRingState {
    salt: String,
    active: KeyId,
    counter: u64,
    keys: BTreeMap<KeyId, DataKeyEntry>,
}

/// Holds the master key in memory and the wrapped data keys.
///
/// Exactly one key is active at a time; retired keys are retained (and
/// usable) until every record is rewrapped, then destroyed.
pub struct KeyRing {
    master: [u8; KEY_LEN],
    state: KeyRingState,
}

impl KeyRing {
    /// Creates a keyring with a fresh salt and one active data key.
    pub fn new(passphrase: &str, now: Timestamp) -> Self {
        let mut salt = [0u8; 16];
        rand::rngs::OsRng.fill_bytes(&mut salt);
        let master = derive_master(passphrase, &salt);
        let mut ring = KeyRing {
            master,
            state: KeyRingState {
                salt: hex::encode(salt),
                active: KeyId::new(""),
                counter: 0,
                keys: BTreeMap::new(),
            },
        };
        ring.new_data_key(now);
        ring
    }

    /// Reopens a keyring from persisted state.
    pub fn from_state(passphrase: &str, state: KeyRingState) -> Result<Self, VaultError> {
        let salt = hex::decode(&state.salt).map_err(|_| VaultError::Corrupt {
            path: "keyring".to_string(),
            message: "salt is not hex".to_string(),
        })?;
        let master = derive_master(passphrase, &salt);
        let ring = KeyRing { master, state };
        // Fail fast on a wrong passphrase by test-unwrapping the active key.
        let active = ring.state.active.clone();
        ring.unwrap_key(&active)?;
        Ok(ring)
    }

    pub fn state(&self) -> &KeyRingState {
        &self.state
    }

    pub fn active_key_id(&self) -> &KeyId {
        &self.state.active
    }

    pub fn key_ids(&self) -> impl Iterator<Item = &KeyId> {
        self.state.keys.keys()
    }

    pub fn entry(&self, id: &KeyId) -> Option<&DataKeyEntry> {
        self.state.keys.get(id)
    }

    /// Generates, wraps and activates a new data key; returns its id.
    pub fn new_data_key(&mut self, now: Timestamp) -> KeyId {
        self.state.counter += 1;
        let id = KeyId::new(format!("k{:06}", self.state.counter));
        let mut key = [0u8; KEY_LEN];
        rand::rngs::OsRng.fill_bytes(&mut key);
        let mut nonce = [0u8; NONCE_LEN];
        rand::rngs::OsRng.fill_bytes(&mut nonce);
        let cipher = XChaCha20Poly1305::new((&self.master).into());
        let bytes = cipher
            .encrypt(
                XNonce::from_slice(&nonce),
                Payload {
                    msg: &key,
                    aad: id.as_str().as_bytes(),
                },
            )
            .expect("wrapping a fresh key cannot fail");
        self.state.keys.insert(
            id.clone(),
            DataKeyEntry {
                wrapped: Some(WrappedKey {
                    nonce: nonce.to_vec(),
                    bytes,
                }),
                created: now,
                retired: None,
            },
        );
        self.state.active = id.clone();
        id
    }

    pub fn retire(&mut self, id: &KeyId, now: Timestamp) {
        if let Some(entry) = self.state.keys.get_mut(id) {
            entry.retired = Some(now);
        }
    }

    /// Drops the wrapped key material; the key can never decrypt again.
    pub fn destroy(&mut self, id: &KeyId) {
        if let Some(entry) = self.state.keys.get_mut(id) {
            entry.wrapped = None;
        }
    }

    /// Destroys every data key (scope revocation).
    pub fn destroy_all(&mut self) -> usize {
        let mut destroyed = 0;
        for entry in self.state.keys.values_mut() {
            if entry.wrapped.is_some() {
                entry.wrapped = None;
                destroyed += 1;
            }
        }
        destroyed
    }

    fn unwrap_key(&self, id: &KeyId) -> Result<[u8; KEY_LEN], VaultError> {
        let entry = self
            .state
            .keys
            .get(id)
            .ok_or_else(|| VaultError::UnknownKey(id.clone()))?;
        let wrapped = entry
            .wrapped
            .as_ref()
            .ok_or_else(|| VaultError::KeyDestroyed(id.clone()))?;
        let cipher = XChaCha20Poly1305::new((&self.master).into());
        let bytes = cipher
            .decrypt(
                XNonce::from_slice(&wrapped.nonce),
                Payload {
                    msg: wrapped.bytes.as_slice(),
                    aad: id.as_str().as_bytes(),
                },
            )
            .map_err(|_| VaultError::AuthFailure(format!("key {id}")))?;
        let mut key = [0u8; KEY_LEN];
        key.copy_from_slice(&bytes);
        Ok(key)
    }

    /// Seals `plaintext` under the active key with a fresh random nonce.
    pub fn seal(
        &mut self,
        record_id: &str,
        schema_version: u32,
        plaintext: &[u8],
    ) -> Result<SealedRecord, VaultError> {
        self.seal_with(&self.state.active.clone(), record_id, schema_version, plaintext)
    }

    pub fn seal_with(
        &mut self,
        key_id: &KeyId,
        record_id: &str,
        schema_version: u32,
        plaintext: &[u8],
    ) -> Result<SealedRecord, VaultError> {
        let key = self.unwrap_key(key_id)?;
        let mut nonce = [0u8; NONCE_LEN];
        rand::rngs::OsRng.fill_bytes(&mut nonce);
        let cipher = XChaCha20Poly1305::new((&key).into());
        let aad = SealedRecord::associated_data(record_id, schema_version);
        let ciphertext = cipher
            .encrypt(
                XNonce::from_slice(&nonce),
                Payload {
                    msg: plaintext,
                    aad: &aad,
                },
            )
            .map_err(|_| VaultError::AuthFailure(record_id.to_string()))?;
        Ok(SealedRecord {
            record_id: record_id.to_string(),
            schema_version,
            key_id: key_id.clone(),
            nonce: nonce.to_vec(),
            ciphertext,
        })
    }

    /// Opens a sealed record; fails on any ciphertext or associated-data
    /// modification, on unknown keys and on destroyed keys.
    pub fn unseal(&self, record: &SealedRecord) -> Result<Vec<u8>, VaultError> {
        let key = self.unwrap_key(&record.key_id)?;
        let cipher = XChaCha20Poly1305::new((&key).into());
        let aad = SealedRecord::associated_data(&record.record_id, record.schema_version);
        cipher
            .decrypt(
                XNonce::from_slice(&record.nonce),
                Payload {
                    msg: record.ciphertext.as_slice(),
                    aad: &aad,
                },
            )
            .map_err(|_| VaultError::AuthFailure(record.record_id.clone()))
    }
}

fn derive_master(passphrase: &str, salt: &[u8]) -> [u8; KEY_LEN] {
    // Stand-in for a platform keystore: a salted hash of the passphrase.
    let mut hasher = Sha256::new();
    hasher.update(b"kincare-master-v1");
    hasher.update(salt);
    hasher.update(passphrase.as_bytes());
    hasher.finalize().into()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn retired_key_still_unseals_until_destroyed() {
        let t0 = Timestamp::from_millis(0);
        let mut ring = KeyRing::new("pass", t0);
        let old_key = ring.active_key_id().clone();
        let sealed = ring.seal("r1", 1, b"data").unwrap();

        ring.new_data_key(t0.add_minutes(1));
        ring.retire(&old_key, t0.add_minutes(1));
        assert_eq!(ring.unseal(&sealed).unwrap(), b"data");

        ring.destroy(&old_key);
        assert!(matches!(
            ring.unseal(&sealed),
            Err(VaultError::KeyDestroyed(_))
        ));
    }

    #[test]
    fn state_round_trip_preserves_keys() {
        let t0 = Timestamp::from_millis(0);
        let mut ring = KeyRing::new("pass", t0);
        let sealed = ring.seal("r1", 1, b"data").unwrap();
        let state = ring.state().clone();

        let reopened = KeyRing::from_state("pass", state.clone()).unwrap();
        assert_eq!(reopened.unseal(&sealed).unwrap(), b"data");

        assert!(KeyRing::from_state("wrong-pass", state).is_err());
    }

    #[test]
    fn unknown_key_reported() {
        let t0 = Timestamp::from_millis(0);
        let mut ring = KeyRing::new("pass", t0);
        let mut sealed = ring.seal("r1", 1, b"data").unwrap();
        sealed.key_id = KeyId::new("k999999");
        assert!(matches!(
            ring.unseal(&sealed),
            Err(VaultError::UnknownKey(_))
        ));
    }
}
