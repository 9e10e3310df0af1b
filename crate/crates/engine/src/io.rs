//! Append-only files: the JSON-lines journal, the oracle ledger and
//! calendar documents.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use sdc_core::calendar::{BusinessDayCalendar, CalendarDocument};
use sdc_core::engine::Entry;
use sdc_core::journal::{parse_lines, to_line, JournalError};
use sdc_core::replica::{LedgerError, OracleEntry, OracleLedger};
use thiserror::Error;

pub const DATA_DIR_ENV: &str = "ENGINE_DATA_DIR";

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Journal {
        path: String,
        #[source]
        source: JournalError,
    },
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("{path}: {source}")]
    Ledger {
        path: String,
        #[source]
        source: LedgerError,
    },
    #[error("{path}: {message}")]
    Calendar { path: String, message: String },
}

fn file_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::File { path: path.display().to_string(), source }
}

/// Persistence root: `$ENGINE_DATA_DIR`, else `./engine-data`.
pub fn data_dir() -> PathBuf {
    std::env::var_os(DATA_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("engine-data"))
}

pub fn write_journal(path: &Path, entries: &[Entry]) -> Result<(), IoError> {
    let mut out = String::new();
    for e in entries {
        out.push_str(&to_line(e));
        out.push('\n');
    }
    fs::write(path, out).map_err(file_err(path))
}

/// Appends entries to an existing journal file, creating it if needed.
pub fn append_journal(path: &Path, entries: &[Entry]) -> Result<(), IoError> {
    let mut f = OpenOptions::new().create(true).append(true).open(path).map_err(file_err(path))?;
    for e in entries {
        writeln!(f, "{}", to_line(e)).map_err(file_err(path))?;
    }
    Ok(())
}

/// Reads a journal file, verifying every line and the digest chain.
pub fn read_journal(path: &Path) -> Result<Vec<Entry>, IoError> {
    let bytes = fs::read(path).map_err(file_err(path))?;
    parse_journal_bytes(&bytes).map_err(|source| IoError::Journal { path: path.display().to_string(), source })
}

/// Parses raw journal bytes. Bytes that are not UTF-8 break the chain at the
/// line that holds them.
pub fn parse_journal_bytes(bytes: &[u8]) -> Result<Vec<Entry>, JournalError> {
    match std::str::from_utf8(bytes) {
        Ok(text) => parse_lines(text),
        Err(e) => {
            let line = bytes[..e.valid_up_to()].iter().filter(|b| **b == b'\n').count();
            Err(JournalError::ChainBroken { seq: line as u64 + 1 })
        }
    }
}

pub fn write_ledger(path: &Path, ledger: &OracleLedger) -> Result<(), IoError> {
    let mut f = File::create(path).map_err(file_err(path))?;
    for e in ledger.entries() {
        let line = serde_json::to_string(e).expect("ledger entries serialize");
        writeln!(f, "{line}").map_err(file_err(path))?;
    }
    Ok(())
}

pub fn read_ledger(path: &Path) -> Result<OracleLedger, IoError> {
    let text = fs::read_to_string(path).map_err(file_err(path))?;
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let e: OracleEntry = serde_json::from_str(line).map_err(|e| IoError::Parse {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        entries.push(e);
    }
    OracleLedger::from_entries(entries).map_err(|source| IoError::Ledger { path: path.display().to_string(), source })
}

/// Loads a `{calendar_id, weekend, holidays, valid_from?, valid_to?}` document.
pub fn load_calendar(path: &Path) -> Result<BusinessDayCalendar, IoError> {
    let text = fs::read_to_string(path).map_err(file_err(path))?;
    let doc: CalendarDocument = serde_json::from_str(&text)
        .map_err(|e| IoError::Calendar { path: path.display().to_string(), message: e.to_string() })?;
    BusinessDayCalendar::try_from(doc)
        .map_err(|e| IoError::Calendar { path: path.display().to_string(), message: e.to_string() })
}
