//! Append-only journal with a SHA-256 digest chain.
//!
//! `digest(n) = SHA-256(digest(n-1) || canonical({seq, kind, payload}))`,
//! with 32 zero bytes before the first entry. The head digest is the state
//! digest.

use alloc::string::String;
use alloc::vec::Vec;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical::{canonical_bytes, canonical_string, from_hex, sha256, to_hex, Hash32, ZERO_HASH};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntryKind {
    Command,
    Observation,
    Determination,
    Action,
    Settlement,
    Authorization,
    Control,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JournalEntry<P> {
    #[serde(with = "crate::intstr")]
    pub seq: u64,
    pub kind: EntryKind,
    pub payload: P,
    pub digest: String,
}

#[derive(Serialize)]
struct Body<'a, P> {
    #[serde(with = "crate::intstr")]
    seq: u64,
    kind: EntryKind,
    payload: &'a P,
}

pub fn entry_digest<P: Serialize>(prev: &Hash32, seq: u64, kind: EntryKind, payload: &P) -> Hash32 {
    sha256(&[prev, &canonical_bytes(&Body { seq, kind, payload })])
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum JournalError {
    #[error("journal chain broken at seq {seq}")]
    ChainBroken { seq: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Journal<P> {
    entries: Vec<JournalEntry<P>>,
    head: Hash32,
}

impl<P> Default for Journal<P> {
    fn default() -> Self {
        Journal { entries: Vec::new(), head: ZERO_HASH }
    }
}

impl<P: Serialize> Journal<P> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn next_seq(&self) -> u64 {
        self.entries.len() as u64 + 1
    }

    pub fn append(&mut self, kind: EntryKind, payload: P) -> &JournalEntry<P> {
        let seq = self.next_seq();
        self.head = entry_digest(&self.head, seq, kind, &payload);
        self.entries.push(JournalEntry { seq, kind, payload, digest: to_hex(&self.head) });
        self.entries.last().expect("just pushed")
    }

    pub fn head(&self) -> Hash32 {
        self.head
    }

    pub fn head_hex(&self) -> String {
        to_hex(&self.head)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[JournalEntry<P>] {
        &self.entries
    }

    pub fn get(&self, seq: u64) -> Option<&JournalEntry<P>> {
        seq.checked_sub(1).and_then(|i| self.entries.get(i as usize))
    }

    /// Entries with `seq >= from`.
    pub fn since(&self, from: u64) -> &[JournalEntry<P>] {
        let start = (from.max(1) - 1).min(self.entries.len() as u64) as usize;
        &self.entries[start..]
    }
}

/// Checks density and the digest chain; returns the head digest.
pub fn verify_entries<P: Serialize>(entries: &[JournalEntry<P>]) -> Result<Hash32, JournalError> {
    let mut prev = ZERO_HASH;
    for (i, e) in entries.iter().enumerate() {
        let seq = i as u64 + 1;
        if e.seq != seq {
            return Err(JournalError::ChainBroken { seq });
        }
        let d = entry_digest(&prev, e.seq, e.kind, &e.payload);
        if to_hex(&d) != e.digest || from_hex(&e.digest) != Some(d) {
            return Err(JournalError::ChainBroken { seq });
        }
        prev = d;
    }
    Ok(prev)
}

pub fn to_line<P: Serialize>(entry: &JournalEntry<P>) -> String {
    canonical_string(entry)
}

/// Parses a JSON-lines journal. Every line must be the canonical encoding of
/// its entry, so any byte-level change is detected even when it decodes to
/// the same value.
pub fn parse_lines<P: Serialize + DeserializeOwned>(text: &str) -> Result<Vec<JournalEntry<P>>, JournalError> {
    let mut out = Vec::new();
    let body = text.strip_suffix('\n').unwrap_or(text);
    if body.is_empty() {
        return Ok(out);
    }
    for (i, line) in body.split('\n').enumerate() {
        let seq = i as u64 + 1;
        let entry: JournalEntry<P> =
            serde_json::from_str(line).map_err(|_| JournalError::ChainBroken { seq })?;
        if to_line(&entry) != line {
            return Err(JournalError::ChainBroken { seq });
        }
        out.push(entry);
    }
    verify_entries(&out)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;
    use alloc::string::ToString;

    #[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
    struct Note {
        text: String,
        #[serde(with = "crate::intstr")]
        n: i64,
    }

    fn sample() -> Journal<Note> {
        let mut j = Journal::new();
        for n in 0..5 {
            j.append(EntryKind::Command, Note { text: format!("note {n}"), n });
        }
        j
    }

    fn text(j: &Journal<Note>) -> String {
        j.entries().iter().map(|e| to_line(e) + "\n").collect()
    }

    #[test]
    fn chain_round_trip() {
        let j = sample();
        assert_eq!(verify_entries(j.entries()), Ok(j.head()));
        let parsed: Vec<JournalEntry<Note>> = parse_lines(&text(&j)).unwrap();
        assert_eq!(parsed, j.entries());
        assert!(parse_lines::<Note>("").unwrap().is_empty());
        assert_eq!(j.since(4).len(), 2);
        assert_eq!(j.since(0).len(), 5);
        assert!(j.since(9).is_empty());
    }

    #[test]
    fn integers_are_strings() {
        let line = to_line(&sample().entries()[0]);
        assert!(line.contains(r#""seq":"1""#), "{line}");
        assert!(line.contains(r#""n":"0""#), "{line}");
    }

    #[test]
    fn every_single_byte_tamper_is_caught() {
        let t = text(&sample());
        let bytes = t.as_bytes();
        for i in 0..bytes.len() - 1 {
            if bytes[i] == b'\n' {
                continue;
            }
            for replacement in [b'0', b'a', b'A', b' ', b'"', b'}'] {
                if replacement == bytes[i] {
                    continue;
                }
                let mut b = bytes.to_vec();
                b[i] = replacement;
                let Ok(s) = core::str::from_utf8(&b) else { continue };
                assert!(parse_lines::<Note>(s).is_err(), "tamper at {i} with {:?}", replacement as char);
            }
        }
    }

    #[test]
    fn reordered_entries_break() {
        let j = sample();
        let mut e = j.entries().to_vec();
        e.swap(1, 2);
        assert_eq!(verify_entries(&e), Err(JournalError::ChainBroken { seq: 2 }));
        let mut e = j.entries().to_vec();
        e[3].payload.text = "edited".to_string();
        assert_eq!(verify_entries(&e), Err(JournalError::ChainBroken { seq: 4 }));
    }
}
