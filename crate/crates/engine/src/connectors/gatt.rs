//! Parser for the standard BLE heart-rate-measurement characteristic frame.
//!
//! Byte 0 is the flags byte; bit 0 selects an 8-bit (byte 1) or 16-bit
//! little-endian (bytes 1..3) heart-rate value.

use super::{ConnectorError, RawSample};
use crate::time::Timestamp;

pub const BPM_MIN: f64 = 20.0;
pub const BPM_MAX: f64 = 300.0;

pub fn parse_gatt_heart_rate(
    bytes: &[u8],
    source_id: &str,
    device_ts: Timestamp,
) -> Result<RawSample, ConnectorError> {
    if bytes.len() < 2 {
        return Err(ConnectorError::TruncatedFrame {
            expected: 2,
            got: bytes.len(),
        });
    }
    let flags = bytes[0];
    let bpm = if flags & 0x01 == 0 {
        f64::from(bytes[1])
    } else {
        if bytes.len() < 3 {
            return Err(ConnectorError::TruncatedFrame {
                expected: 3,
                got: bytes.len(),
            });
        }
        f64::from(u16::from_le_bytes([bytes[1], bytes[2]]))
    };
    if !(BPM_MIN..=BPM_MAX).contains(&bpm) {
        return Err(ConnectorError::OutOfRange {
            value: bpm,
            min: BPM_MIN,
            max: BPM_MAX,
        });
    }
    Ok(RawSample {
        source_id: source_id.to_string(),
        metric: "heart_rate".to_string(),
        value: bpm,
        unit: "bpm".to_string(),
        device_ts,
        payload: Some(bytes.to_vec()),
    })
}
