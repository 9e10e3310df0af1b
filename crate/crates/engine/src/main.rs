use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sdc_core::engine::replay;
use sdc_core::journal::JournalError;
use sdc_core::product::ProductRegistry;
use sdc_core::replica::FaultProfile;
use sdc_engine::gateway::{self, Gateway};
use sdc_engine::io::{self, IoError};
use sdc_engine::scenario::{self, RunOptions, Scenario, ScenarioReport};

#[derive(Parser)]
#[command(name = "engine", version, about = "Deterministic derivatives lifecycle engine")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario file and evaluate its assertions.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 1)]
        replicas: usize,
        /// Fault profile injected into the last replica.
        #[arg(long)]
        fault: Option<FaultProfile>,
        /// Keep serving the HTTP API on this address after the run.
        #[arg(long)]
        serve: Option<String>,
        /// Party credential, `TOKEN=PARTY`; repeatable.
        #[arg(long = "token")]
        tokens: Vec<String>,
        /// Print the report as JSON instead of one line per assertion.
        #[arg(long)]
        json: bool,
    },
    /// Rebuild state from a journal and check it against the recorded head.
    Replay {
        #[arg(long)]
        journal: PathBuf,
    },
    /// Check a journal's digest chain without rebuilding state.
    Verify {
        #[arg(long)]
        journal: PathBuf,
    },
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Cmd::Run { scenario, replicas, fault, serve, tokens, json } => {
            run(&scenario, replicas, fault, serve, &tokens, json)
        }
        Cmd::Replay { journal } => replay_cmd(&journal),
        Cmd::Verify { journal } => verify_cmd(&journal),
    }
}

fn fail(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(2)
}

fn print_report(r: &ScenarioReport) {
    for a in &r.results {
        let mark = if a.passed { "PASS" } else { "FAIL" };
        if a.detail.is_empty() {
            println!("{mark}  {}  {}", a.after, a.label);
        } else {
            println!("{mark}  {}  {}: {}", a.after, a.label, a.detail);
        }
    }
    for e in &r.script_errors {
        println!("SCRIPT  {e}");
    }
    if let Some(d) = &r.divergence {
        println!("DIVERGED  replicas {:?} at journal seq {} (ledger seq {})", d.replicas, d.seq, d.ledger_seq);
    }
    let passed = r.results.iter().filter(|a| a.passed).count();
    println!(
        "{}: {passed}/{} assertions, {} days, {} journal entries, {} replica(s), head {}",
        r.name,
        r.results.len(),
        r.days_stepped,
        r.journal_len,
        r.replicas,
        r.digest
    );
}

fn parse_tokens(args: &[String]) -> Result<BTreeMap<String, String>, String> {
    args.iter()
        .map(|t| match t.split_once('=') {
            Some((tok, party)) if !tok.is_empty() && !party.is_empty() => Ok((tok.to_string(), party.to_string())),
            _ => Err(format!("--token expects TOKEN=PARTY, got {t:?}")),
        })
        .collect()
}

fn run(path: &Path, replicas: usize, fault: Option<FaultProfile>, serve: Option<String>, tokens: &[String], json: bool) -> ExitCode {
    let s = match Scenario::load(path) {
        Ok(s) => s,
        Err(e) => return fail(format!("{}: {e}", path.display())),
    };
    let faults = match fault {
        Some(FaultProfile::None) | None => Vec::new(),
        Some(_) if replicas < 2 => return fail("--fault needs --replicas 2 or more"),
        Some(f) => vec![(replicas - 1, f)],
    };
    let out = match scenario::run(&s, &RunOptions { replicas, faults }) {
        Ok(out) => out,
        Err(e) => return fail(e),
    };
    if json {
        println!("{}", serde_json::to_string_pretty(&out.report).expect("report serializes"));
    } else {
        print_report(&out.report);
    }
    let dir = io::data_dir().join(&s.name);
    if let Err(e) = persist(&dir, &out) {
        return fail(e);
    }
    let Some(addr) = serve else {
        return if out.report.passed { ExitCode::SUCCESS } else { ExitCode::FAILURE };
    };
    let mut creds = s.tokens.clone();
    match parse_tokens(tokens) {
        Ok(t) => creds.extend(t),
        Err(e) => return fail(e),
    }
    if creds.is_empty() {
        for p in &s.parties {
            creds.insert(format!("token-{}", p.party_id), p.party_id.clone());
        }
        eprintln!("no credentials configured; using token-<party> for each party");
    }
    let gw = match Gateway::new(out.harness, creds, s.end.succ(), Some(dir)) {
        Ok(g) => g,
        Err(e) => return fail(e),
    };
    let rt = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => return fail(e),
    };
    eprintln!("serving on {addr}");
    match rt.block_on(gateway::serve(&addr, gw)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e),
    }
}

fn persist(dir: &Path, out: &scenario::Run) -> Result<(), IoError> {
    std::fs::create_dir_all(dir).map_err(|source| IoError::File { path: dir.display().to_string(), source })?;
    io::write_journal(&dir.join("journal.jsonl"), out.harness.primary().journal().entries())?;
    io::write_ledger(&dir.join("ledger.jsonl"), out.harness.ledger())?;
    let report = serde_json::to_string_pretty(&out.report).expect("report serializes");
    let path = dir.join("report.json");
    std::fs::write(&path, report).map_err(|source| IoError::File { path: path.display().to_string(), source })
}

fn broken(e: &IoError) -> Option<u64> {
    match e {
        IoError::Journal { source: JournalError::ChainBroken { seq }, .. } => Some(*seq),
        _ => None,
    }
}

fn replay_cmd(path: &Path) -> ExitCode {
    let entries = match io::read_journal(path) {
        Ok(e) => e,
        Err(e) => {
            return match broken(&e) {
                Some(seq) => {
                    println!("ChainBroken at seq {seq}");
                    ExitCode::FAILURE
                }
                None => fail(e),
            }
        }
    };
    let engine = match replay(&entries, &ProductRegistry::standard()) {
        Ok(e) => e,
        Err(e) => {
            println!("replay failed: {e}");
            return ExitCode::FAILURE;
        }
    };
    let recorded = entries.last().map(|e| e.digest.clone()).unwrap_or_default();
    let live = engine.journal().head_hex();
    println!("entries {}", entries.len());
    println!("mode {:?}", engine.mode());
    if let Some(d) = engine.last_date() {
        println!("last date {d}");
    }
    println!("digest {live}");
    if live == recorded {
        println!("replay digest matches the journal head");
        ExitCode::SUCCESS
    } else {
        println!("replay digest differs from the journal head {recorded}");
        ExitCode::FAILURE
    }
}

fn verify_cmd(path: &Path) -> ExitCode {
    match io::read_journal(path) {
        Ok(entries) => {
            let head = entries.last().map(|e| e.digest.clone()).unwrap_or_default();
            println!("ok: {} entries, head {head}", entries.len());
            ExitCode::SUCCESS
        }
        Err(e) => match broken(&e) {
            Some(seq) => {
                println!("ChainBroken at seq {seq}");
                ExitCode::FAILURE
            }
            None => fail(e),
        },
    }
}
