//! The run's event log with a rolling digest.

use thiserror::Error;

use crate::crypto::{Hash32, TlvWriter};
use crate::events::Event;
use crate::Tick;

pub const LOG_HEADER: &str = "# vaspnet event log v1";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogEntry {
    pub tick: Tick,
    pub actor: String,
    pub event: Event,
}

fn chain_digest(prev: &Hash32, tick: Tick, actor: &str, encoded_event: &[u8]) -> Hash32 {
    let record = TlvWriter::new().u64(1, tick).str(2, actor).bytes(3, encoded_event).finish();
    let mut input = Vec::with_capacity(32 + record.len());
    input.extend_from_slice(&prev.0);
    input.extend_from_slice(&record);
    crate::crypto::digest(&input)
}

/// Ordered events; each entry folds into the digest of everything before it.
#[derive(Debug, Clone, Default)]
pub struct EventLog {
    entries: Vec<LogEntry>,
    digest: Hash32,
}

impl EventLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, tick: Tick, actor: &str, event: Event) {
        self.digest = chain_digest(&self.digest, tick, actor, &event.encode());
        self.entries.push(LogEntry { tick, actor: actor.to_string(), event });
    }

    pub fn entries(&self) -> &[LogEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn digest(&self) -> Hash32 {
        self.digest
    }

    /// Header, one `tick<TAB>actor<TAB>kind<TAB>hex` line per event, then
    /// the digest.
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.entries.len() * 96);
        out.push_str(LOG_HEADER);
        out.push('\n');
        for e in &self.entries {
            out.push_str(&format!("{}\t{}\t{}\t{}\n", e.tick, e.actor, e.event.kind(), hex::encode(e.event.encode())));
        }
        out.push_str(&format!("digest\t{}\n", self.digest.to_hex()));
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReplayError {
    #[error("missing log header")]
    MissingHeader,
    #[error("line {0}: malformed entry")]
    Malformed(usize),
    #[error("missing digest line")]
    MissingDigest,
    #[error("digest mismatch: log says {recorded}, entries give {computed}")]
    DigestMismatch { recorded: String, computed: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplaySummary {
    pub events: usize,
    pub last_tick: Tick,
    pub digest: Hash32,
}

/// Re-derives the digest from a log file's entries and compares it with the
/// recorded one.
pub fn replay(text: &str) -> Result<ReplaySummary, ReplayError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l == LOG_HEADER => {}
        _ => return Err(ReplayError::MissingHeader),
    }
    let mut digest = Hash32::default();
    let mut last_tick = 0;
    for (i, line) in lines {
        let n = i + 1;
        // Every line between the header and the digest is one event.
        let events = i - 1;
        let fields: Vec<&str> = line.split('\t').collect();
        if let ["digest", recorded] = fields.as_slice() {
            let computed = digest.to_hex();
            if *recorded != computed {
                return Err(ReplayError::DigestMismatch { recorded: recorded.to_string(), computed });
            }
            return Ok(ReplaySummary { events, last_tick, digest });
        }
        let [tick, actor, _kind, body] = fields.as_slice() else {
            return Err(ReplayError::Malformed(n));
        };
        let tick: Tick = tick.parse().map_err(|_| ReplayError::Malformed(n))?;
        let body = hex::decode(body).map_err(|_| ReplayError::Malformed(n))?;
        digest = chain_digest(&digest, tick, actor, &body);
        last_tick = tick;
    }
    Err(ReplayError::MissingDigest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> EventLog {
        let mut log = EventLog::new();
        log.push(0, "world", Event::LinkDown { link: 0 });
        log.push(4, "vasp-1", Event::LinkUp { link: 0 });
        log
    }

    #[test]
    fn text_round_trips_through_replay() {
        let log = sample();
        let summary = replay(&log.to_text()).unwrap();
        assert_eq!(summary.events, 2);
        assert_eq!(summary.last_tick, 4);
        assert_eq!(summary.digest, log.digest());
    }

    #[test]
    fn digest_depends_on_order_and_content() {
        let mut other = EventLog::new();
        other.push(4, "vasp-1", Event::LinkUp { link: 0 });
        other.push(0, "world", Event::LinkDown { link: 0 });
        assert_ne!(other.digest(), sample().digest());
        assert_ne!(EventLog::new().digest(), sample().digest());
    }

    #[test]
    fn tampered_line_is_caught() {
        let text = sample().to_text().replace("\tvasp-1\t", "\tvasp-2\t");
        assert!(matches!(replay(&text), Err(ReplayError::DigestMismatch { .. })));
        assert_eq!(replay("nope"), Err(ReplayError::MissingHeader));
        let cut: String = sample().to_text().lines().take(2).map(|l| format!("{l}\n")).collect();
        assert_eq!(replay(&cut), Err(ReplayError::MissingDigest));
    }
}
