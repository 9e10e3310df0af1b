//! In-process replication: N engines fed from one sequenced oracle ledger,
//! with digests compared after every entry.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use alloc::{format, vec};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical::{canonical_bytes, sha256, to_hex};
use crate::cashflow::Rounding;
use crate::date::CalendarDate;
use crate::engine::{Command, ControlCommand, Engine, EngineError, EngineMode, Entry, Genesis, PendingAuthorization};
use crate::party::PartyId;
use crate::product::ProductRegistry;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum Datum {
    Command { command: Command },
    Control {
        control: ControlCommand,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        by: Option<PartyId>,
    },
    StepDay { date: CalendarDate },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleEntry {
    #[serde(with = "crate::intstr")]
    pub seq: u64,
    /// Opaque label; never used for ordering.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<String>,
    pub datum: Datum,
}

/// Single-writer, append-only.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OracleLedger {
    entries: Vec<OracleEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LedgerError {
    #[error("ledger entry {found} out of sequence, expected {expected}")]
    OutOfSequence { expected: u64, found: u64 },
}

impl OracleLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Rebuilds a ledger read from storage, checking density.
    pub fn from_entries(entries: Vec<OracleEntry>) -> Result<Self, LedgerError> {
        for (i, e) in entries.iter().enumerate() {
            if e.seq != i as u64 + 1 {
                return Err(LedgerError::OutOfSequence { expected: i as u64 + 1, found: e.seq });
            }
        }
        Ok(OracleLedger { entries })
    }

    pub fn append(&mut self, tag: Option<String>, datum: Datum) -> u64 {
        let seq = self.entries.len() as u64 + 1;
        self.entries.push(OracleEntry { seq, tag, datum });
        seq
    }

    pub fn len(&self) -> u64 {
        self.entries.len() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, seq: u64) -> Option<&OracleEntry> {
        seq.checked_sub(1).and_then(|i| self.entries.get(i as usize))
    }

    pub fn entries(&self) -> &[OracleEntry] {
        &self.entries
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FaultProfile {
    None,
    /// Floors period amounts instead of rounding half away from zero.
    PerturbedRounding,
}

impl core::str::FromStr for FaultProfile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "none" => Ok(FaultProfile::None),
            "perturbed-rounding" => Ok(FaultProfile::PerturbedRounding),
            other => Err(format!("unknown fault profile {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplicaState {
    pub replica_id: usize,
    pub digest: String,
    #[serde(with = "crate::intstr")]
    pub cursor: u64,
    pub mode: EngineMode,
}

/// The two journal entries that first disagree, from replica 0 and the
/// first replica that differs from it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DivergenceDiff {
    pub replicas: Vec<usize>,
    /// Journal seq of the first differing entry.
    #[serde(with = "crate::intstr")]
    pub seq: u64,
    /// Oracle ledger entry whose consumption exposed the divergence.
    #[serde(with = "crate::intstr")]
    pub ledger_seq: u64,
    pub reference: Option<Entry>,
    pub divergent: Option<Entry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HarnessError {
    #[error("a harness needs at least one replica")]
    NoReplicas,
    #[error("harness is stopped")]
    HarnessStopped,
    #[error("harness is already stopped")]
    AlreadyStopped,
    #[error("harness is paused; only control entries are accepted")]
    Paused,
    #[error("replicas {replicas:?} diverged at journal seq {seq}", replicas = .0.replicas, seq = .0.seq)]
    DivergenceDetected(DivergenceDiff),
    #[error("authorization fingerprints differ across replicas {0:?}")]
    AuthorizationMismatch(Vec<usize>),
    #[error("date {date} does not follow the last published day step")]
    OutOfOrderDate { date: CalendarDate },
    #[error("ledger seq {0} has not been published")]
    Unpublished(u64),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DigestReport {
    #[serde(with = "crate::intstr")]
    pub cursor: u64,
    pub digest: String,
    pub replicas: Vec<ReplicaState>,
}

/// One open request as seen by every replica.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsolidatedRequest {
    pub fingerprint: String,
    pub request: PendingAuthorization,
}

struct Replica {
    engine: Engine,
    cursor: u64,
}

pub struct Harness {
    ledger: OracleLedger,
    replicas: Vec<Replica>,
    stopped: bool,
    paused: bool,
    last_step: Option<CalendarDate>,
    halted: Option<DivergenceDiff>,
}

impl Harness {
    pub fn spawn(n: usize, genesis: &Genesis, faults: &[(usize, FaultProfile)]) -> Result<Self, HarnessError> {
        Self::spawn_with(n, genesis, faults, &ProductRegistry::standard())
    }

    pub fn spawn_with(
        n: usize,
        genesis: &Genesis,
        faults: &[(usize, FaultProfile)],
        registry: &ProductRegistry,
    ) -> Result<Self, HarnessError> {
        if n == 0 {
            return Err(HarnessError::NoReplicas);
        }
        let mut replicas = Vec::with_capacity(n);
        for id in 0..n {
            let mut engine = Engine::with_registry(genesis.clone(), registry.clone())?;
            for (_, f) in faults.iter().filter(|(r, _)| *r == id) {
                if *f == FaultProfile::PerturbedRounding {
                    engine.set_rounding(Rounding::Floor);
                }
            }
            replicas.push(Replica { engine, cursor: 0 });
        }
        Ok(Harness { ledger: OracleLedger::new(), replicas, stopped: false, paused: false, last_step: None, halted: None })
    }

    pub fn ledger(&self) -> &OracleLedger {
        &self.ledger
    }

    pub fn replica_count(&self) -> usize {
        self.replicas.len()
    }

    pub fn engine(&self, replica: usize) -> Option<&Engine> {
        self.replicas.get(replica).map(|r| &r.engine)
    }

    /// Replica 0, the one surfaced to the gateway.
    pub fn primary(&self) -> &Engine {
        &self.replicas[0].engine
    }

    pub fn cursor(&self) -> u64 {
        self.replicas[0].cursor
    }

    pub fn is_paused(&self) -> bool {
        self.paused
    }

    pub fn is_stopped(&self) -> bool {
        self.stopped
    }

    pub fn divergence(&self) -> Option<&DivergenceDiff> {
        self.halted.as_ref()
    }

    pub fn states(&self) -> Vec<ReplicaState> {
        self.replicas
            .iter()
            .enumerate()
            .map(|(i, r)| ReplicaState {
                replica_id: i,
                digest: r.engine.journal().head_hex(),
                cursor: r.cursor,
                mode: r.engine.mode(),
            })
            .collect()
    }

    pub fn publish(&mut self, datum: Datum) -> Result<u64, HarnessError> {
        self.publish_tagged(None, datum)
    }

    pub fn publish_tagged(&mut self, tag: Option<String>, datum: Datum) -> Result<u64, HarnessError> {
        if self.stopped {
            return Err(HarnessError::HarnessStopped);
        }
        if self.paused && !matches!(datum, Datum::Control { .. }) {
            return Err(HarnessError::Paused);
        }
        match &datum {
            Datum::StepDay { date } => {
                if self.last_step.is_some_and(|l| *date <= l) {
                    return Err(HarnessError::OutOfOrderDate { date: *date });
                }
                self.last_step = Some(*date);
            }
            Datum::Control { control, .. } => match control {
                ControlCommand::Pause => self.paused = true,
                ControlCommand::Resume => self.paused = false,
                ControlCommand::Stop { .. } => self.stopped = true,
            },
            _ => {}
        }
        Ok(self.ledger.append(tag, datum))
    }

    /// Feeds every replica the ledger through `up_to`, comparing digests
    /// after each entry. A paused replica set consumes only control entries.
    pub fn step_all(&mut self, up_to: u64) -> Result<DigestReport, HarnessError> {
        if let Some(d) = &self.halted {
            return Err(HarnessError::DivergenceDetected(d.clone()));
        }
        if up_to > self.ledger.len() {
            return Err(HarnessError::Unpublished(up_to));
        }
        while self.cursor() < up_to {
            let entry = self.ledger.get(self.cursor() + 1).expect("published").clone();
            let mode = self.primary().mode();
            if mode == EngineMode::Stopped {
                break;
            }
            if mode == EngineMode::Paused && !matches!(entry.datum, Datum::Control { .. }) {
                break;
            }
            let mut outcomes = Vec::with_capacity(self.replicas.len());
            for r in &mut self.replicas {
                outcomes.push(apply(&mut r.engine, &entry.datum));
                r.cursor = entry.seq;
            }
            if let Some(diff) = self.compare(entry.seq) {
                self.halted = Some(diff.clone());
                return Err(HarnessError::DivergenceDetected(diff));
            }
            if let Some(Err(e)) = outcomes.into_iter().next() {
                return Err(e.into());
            }
        }
        Ok(self.report())
    }

    /// Publishes and consumes in one go.
    pub fn feed(&mut self, datum: Datum) -> Result<DigestReport, HarnessError> {
        let seq = self.publish(datum)?;
        self.step_all(seq)
    }

    fn report(&self) -> DigestReport {
        DigestReport { cursor: self.cursor(), digest: self.primary().journal().head_hex(), replicas: self.states() }
    }

    fn compare(&self, ledger_seq: u64) -> Option<DivergenceDiff> {
        let reference = &self.replicas[0].engine;
        let head = reference.head_digest();
        let bad: Vec<usize> = (1..self.replicas.len()).filter(|i| self.replicas[*i].engine.head_digest() != head).collect();
        let first = *bad.first()?;
        let other = &self.replicas[first].engine;
        let a = reference.journal().entries();
        let b = other.journal().entries();
        let at = a.iter().zip(b).position(|(x, y)| x.digest != y.digest).unwrap_or(a.len().min(b.len()));
        let mut replicas = vec![0];
        replicas.extend(bad);
        Some(DivergenceDiff {
            replicas,
            seq: at as u64 + 1,
            ledger_seq,
            reference: a.get(at).cloned(),
            divergent: b.get(at).cloned(),
        })
    }

    /// Collapses the replicas' open requests into one set, provided every
    /// replica raised exactly the same requests.
    pub fn consolidate_authorization(&self) -> Result<Vec<ConsolidatedRequest>, HarnessError> {
        let prints: Vec<String> = self.replicas.iter().map(|r| open_fingerprint(&r.engine)).collect();
        let bad: Vec<usize> = (0..prints.len()).filter(|i| prints[*i] != prints[0]).collect();
        if !bad.is_empty() {
            let mut ids = vec![0];
            ids.extend(bad);
            return Err(HarnessError::AuthorizationMismatch(ids));
        }
        Ok(self
            .primary()
            .pending_authorizations()
            .map(|a| ConsolidatedRequest { fingerprint: request_fingerprint(a), request: a.clone() })
            .collect())
    }

    pub fn pause_all(&mut self, by: Option<PartyId>) -> Result<DigestReport, HarnessError> {
        self.control_all(ControlCommand::Pause, by)
    }

    pub fn resume_all(&mut self, by: Option<PartyId>) -> Result<DigestReport, HarnessError> {
        self.control_all(ControlCommand::Resume, by)
    }

    pub fn stop_all(&mut self, reason: &str, by: Option<PartyId>) -> Result<DigestReport, HarnessError> {
        self.control_all(ControlCommand::Stop { reason: reason.to_string() }, by)
    }

    fn control_all(&mut self, control: ControlCommand, by: Option<PartyId>) -> Result<DigestReport, HarnessError> {
        if self.stopped {
            return Err(HarnessError::AlreadyStopped);
        }
        let seq = self.publish(Datum::Control { control, by })?;
        self.step_all(seq)
    }
}

fn apply(engine: &mut Engine, datum: &Datum) -> Result<(), EngineError> {
    match datum {
        Datum::Command { command } => engine.submit(command.clone()).map(|_| ()),
        Datum::Control { control, by } => engine.control(control.clone(), by.clone()).map(|_| ()),
        Datum::StepDay { date } => engine.step_day(*date).map(|_| ()),
    }
}

#[derive(Serialize)]
struct Fingerprinted<'a> {
    request_id: &'a str,
    addressee: &'a str,
    question: &'a str,
    menu: &'a [String],
    subject: &'a crate::engine::AuthorizationSubject,
}

pub fn request_fingerprint(a: &PendingAuthorization) -> String {
    let f = Fingerprinted {
        request_id: &a.request_id,
        addressee: &a.addressee,
        question: &a.question,
        menu: &a.menu,
        subject: &a.subject,
    };
    to_hex(&sha256(&[&canonical_bytes(&f)]))
}

fn open_fingerprint(engine: &Engine) -> String {
    let prints: Vec<String> = engine.pending_authorizations().map(request_fingerprint).collect();
    to_hex(&sha256(&[&canonical_bytes(&prints)]))
}

/// Replays an oracle ledger into a fresh engine.
pub fn replay_ledger(genesis: &Genesis, ledger: &OracleLedger, registry: &ProductRegistry) -> Result<Engine, EngineError> {
    let mut engine = Engine::with_registry(genesis.clone(), registry.clone())?;
    for e in ledger.entries() {
        match engine.mode() {
            EngineMode::Stopped => break,
            EngineMode::Paused if !matches!(e.datum, Datum::Control { .. }) => break,
            _ => {}
        }
        apply(&mut engine, &e.datum)?;
    }
    Ok(engine)
}
