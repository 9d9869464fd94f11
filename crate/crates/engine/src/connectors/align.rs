//! Session-scoped timestamp alignment.
//!
//! Device clocks drift and run ahead or behind the server. The aligner
//! watches `(device_ts - server_ts)` pairs over a session, estimates the
//! device-ahead skew as the running median minus the known timezone offset,
//! and maps device timestamps onto canonical UTC. Both raw timestamps stay
//! in provenance.

use serde::{Deserialize, Serialize};

use super::ConnectorError;
use crate::time::{Timestamp, MILLIS_PER_DAY, MILLIS_PER_MINUTE};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimeAligner {
    tz_offset_minutes: i32,
    /// Observed `(device_ts - server_ts)` deltas in ms for this session.
    deltas: Vec<i64>,
    max_skew_ms: i64,
}

impl TimeAligner {
    pub fn new(tz_offset_minutes: i32) -> Self {
        TimeAligner {
            tz_offset_minutes,
            deltas: Vec::new(),
            max_skew_ms: MILLIS_PER_DAY,
        }
    }

    pub fn with_max_skew_ms(mut self, bound: i64) -> Self {
        self.max_skew_ms = bound;
        self
    }

    /// Estimated device-ahead clock skew in ms (excluding the timezone
    /// offset). Zero until the first observation.
    pub fn skew_ms(&self) -> i64 {
        if self.deltas.is_empty() {
            return 0;
        }
        let mut sorted = self.deltas.clone();
        sorted.sort_unstable();
        let n = sorted.len();
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            (sorted[n / 2 - 1] + sorted[n / 2]) / 2
        };
        median - i64::from(self.tz_offset_minutes) * MILLIS_PER_MINUTE
    }

    pub fn observations(&self) -> usize {
        self.deltas.len()
    }

    /// Feeds one `(device_ts, server receipt)` pair and returns the sample's
    /// canonical UTC timestamp: `device_ts - tz_offset - skew`. A sample
    /// whose implied skew exceeds the bound (default 24 h) is quarantined.
    pub fn align(
        &mut self,
        device_ts: Timestamp,
        server_now: Timestamp,
    ) -> Result<(Timestamp, i64), ConnectorError> {
        let delta = device_ts.since(server_now);
        let implied_skew = delta - i64::from(self.tz_offset_minutes) * MILLIS_PER_MINUTE;
        if implied_skew.abs() > self.max_skew_ms {
            return Err(ConnectorError::SkewBeyondBound {
                skew_ms: implied_skew,
                bound_ms: self.max_skew_ms,
            });
        }
        self.deltas.push(delta);
        let skew = self.skew_ms();
        let canonical = device_ts
            .add_millis(-i64::from(self.tz_offset_minutes) * MILLIS_PER_MINUTE)
            .add_millis(-skew);
        Ok((canonical, skew))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_skew_zero_offset_is_identity() {
        let mut aligner = TimeAligner::new(0);
        let t = Timestamp::from_millis(1_000_000);
        let (canonical, skew) = aligner.align(t, t).unwrap();
        assert_eq!(canonical, t);
        assert_eq!(skew, 0);
    }

    #[test]
    fn five_minute_fast_clock_recovered_within_a_second() {
        // Device runs 5 min ahead; server receipt jitters up to 400 ms.
        let mut aligner = TimeAligner::new(0);
        let skew_ms = 5 * MILLIS_PER_MINUTE;
        let mut worst = 0i64;
        for i in 0..30 {
            let true_ts = Timestamp::from_millis(1_000_000 + i * 60_000);
            let device_ts = true_ts.add_millis(skew_ms);
            let server_now = true_ts.add_millis((i * 37) % 400);
            let (canonical, _) = aligner.align(device_ts, server_now).unwrap();
            if i >= 20 {
                worst = worst.max(canonical.since(true_ts).abs());
            }
        }
        assert!(worst <= 1_000, "worst error {worst} ms");
    }

    #[test]
    fn timezone_offset_removed() {
        // Device stamps local time at UTC+05:30 with no skew.
        let mut aligner = TimeAligner::new(330);
        let true_ts = Timestamp::parse_rfc3339("2025-03-01T08:00:00Z").unwrap();
        let device_ts = true_ts.add_minutes(330);
        let (canonical, skew) = aligner.align(device_ts, true_ts).unwrap();
        assert_eq!(canonical, true_ts);
        assert_eq!(skew, 0);
    }

    #[test]
    fn three_day_skew_quarantined() {
        let mut aligner = TimeAligner::new(0);
        let t = Timestamp::from_millis(0);
        let err = aligner.align(t.add_days(3), t).unwrap_err();
        assert!(matches!(err, ConnectorError::SkewBeyondBound { .. }));
        assert_eq!(aligner.observations(), 0, "quarantined samples are not learned from");
    }
}
