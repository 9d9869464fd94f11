//! Sealed (encrypted-at-rest) record storage with key rotation, scope
//! revocation and a hash-chained tamper-evident audit log.
//!
//! Records are sealed with XChaCha20-Poly1305 under per-store data keys;
//! data keys are wrapped by a master key derived from a passphrase. The
//! passphrase-derived master stands in for a platform keystore behind the
//! same [`KeyRing`] interface.

mod audit;
mod keyring;
mod store;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use audit::{
    verify_chain, AuditChain, AuditKind, AuditLog, AuditPayload, AuditRecord, ChainStatus,
    GENESIS_HASH,
};
pub use keyring::KeyRing;
pub use store::{RevocationReport, RevocationScope, RotationReport, SealedStore, Vault};

use crate::ids::KeyId;

#[derive(Debug, Error)]
pub enum VaultError {
    #[error("authentication failed for record `{0}`")]
    AuthFailure(String),
    #[error("unknown key `{0}`")]
    UnknownKey(KeyId),
    #[error("key `{0}` has been destroyed")]
    KeyDestroyed(KeyId),
    #[error("record `{0}` not found")]
    RecordNotFound(String),
    #[error("scope `{0}` does not exist")]
    UnknownScope(String),
    #[error("audit payload key `{0}` must be a lowercase identifier")]
    PayloadKeyInvalid(String),
    #[error("audit payload value for `{key}` is not id-safe: `{value}`")]
    PayloadValueInvalid { key: String, value: String },
    #[error("audit chain broken at seq {first_bad_seq}: {reason}")]
    ChainBroken { first_bad_seq: u64, reason: String },
    #[error("audit append out of order: expected seq {expected}, got {got}")]
    SeqOutOfOrder { expected: u64, got: u64 },
    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt vault data at {path}: {message}")]
    Corrupt { path: String, message: String },
}

impl VaultError {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        VaultError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// An encrypted record. The associated data (record id and schema version)
/// is authenticated but not encrypted; flipping any ciphertext or associated
/// byte makes decryption fail.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SealedRecord {
    pub record_id: String,
    pub schema_version: u32,
    pub key_id: KeyId,
    pub nonce: Vec<u8>,
    pub ciphertext: Vec<u8>,
}

impl SealedRecord {
    /// The authenticated associated data for this record.
    pub fn associated_data(record_id: &str, schema_version: u32) -> Vec<u8> {
        format!("{record_id}|v{schema_version}").into_bytes()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seal_unseal_round_trip() {
        let mut ring = KeyRing::new("test-pass", crate::time::Timestamp::from_millis(0));
        let sealed = ring.seal("rec-1", 1, b"profile event bytes").unwrap();
        let plain = ring.unseal(&sealed).unwrap();
        assert_eq!(plain, b"profile event bytes");
    }

    #[test]
    fn single_bit_flip_fails_authentication() {
        let mut ring = KeyRing::new("test-pass", crate::time::Timestamp::from_millis(0));
        let mut sealed = ring.seal("rec-1", 1, b"payload").unwrap();
        sealed.ciphertext[0] ^= 0x01;
        assert!(matches!(
            ring.unseal(&sealed),
            Err(VaultError::AuthFailure(_))
        ));
    }

    #[test]
    fn associated_data_modification_fails_authentication() {
        let mut ring = KeyRing::new("test-pass", crate::time::Timestamp::from_millis(0));
        let mut sealed = ring.seal("rec-1", 1, b"payload").unwrap();
        sealed.schema_version = 2;
        assert!(matches!(
            ring.unseal(&sealed),
            Err(VaultError::AuthFailure(_))
        ));
        let mut sealed2 = ring.seal("rec-1", 1, b"payload").unwrap();
        sealed2.record_id = "rec-2".to_string();
        assert!(matches!(
            ring.unseal(&sealed2),
            Err(VaultError::AuthFailure(_))
        ));
    }

    #[test]
    fn sampled_mutation_sweep_never_decrypts() {
        let mut ring = KeyRing::new("sweep-pass", crate::time::Timestamp::from_millis(0));
        let plaintext = vec![0xA5u8; 256];
        let sealed = ring.seal("rec-sweep", 3, &plaintext).unwrap();
        let n = sealed.ciphertext.len();
        assert!(n >= 64);
        // Sample >= 64 positions spread over the ciphertext, all 8 bit flips
        // at each.
        let mut checked = 0;
        let step = (n / 64).max(1);
        for pos in (0..n).step_by(step) {
            for bit in 0..8 {
                let mut tampered = sealed.clone();
                tampered.ciphertext[pos] ^= 1 << bit;
                assert!(ring.unseal(&tampered).is_err(), "pos {pos} bit {bit}");
            }
            checked += 1;
        }
        assert!(checked >= 64);
    }
}
