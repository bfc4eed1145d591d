//! Command-line front end: ingest market JSON, dispatch analyses, emit
//! machine-readable reports.
//!
//! Every run produces one [`RunReport`] on standard output: a canonical
//! JSON document (sorted keys, lowest-terms rationals, trailing newline)
//! carrying the subcommand, a content digest of the input, the tool
//! version, and the analysis result. Identical inputs produce bit-for-bit
//! identical reports — wall-clock timing is therefore reported on standard
//! error, never inside the document.
//!
//! Exit codes: `0` — analysis completed, whatever the verdict; `2` — the
//! input was rejected (unreadable file, malformed JSON, invalid
//! parameters, or an instance over the configured solver budget); `3` — an
//! emitted certificate failed its own re-verification, which is always a
//! bug, never a property of the input.
//!
//! Certificates never leave the process unchecked: witness strategies are
//! replayed through the exact value process, measures through the envelope
//! audit, and priced systems through full re-verification, immediately
//! before printing.

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use num_traits::Signed;
use sha2::{Digest, Sha256};
use spreadbench_core::arbitrage::{detect_arbitrage_with, detect_arbitrage_normalized_with};
use spreadbench_core::crr::{ebamm_interval, generate_tree, na_conditions, CrrParams};
use spreadbench_core::exact_lp::LpOptions;
use spreadbench_core::portfolio::{value_process, value_trace, Strategy};
use spreadbench_core::pricing_systems::{
    build_systems_with, find_cps_with, find_ebamm_with, theorem_equivalence_with, verify_ebamm,
    verify_priced_system, PricedSystem, SystemKind,
};
use spreadbench_core::random::{random_market, seeded_rng, GeneratorConfig};
use spreadbench_core::rational::{format_rational, parse_rational, rational_to_json};
use spreadbench_core::scenario_tree::{
    market_from_json_str, market_to_json, validate, BidAskProcess, Measure, ScenarioTree,
};
use spreadbench_core::{Error as CoreError, Rational};
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

/// Environment variable holding the simplex pivot budget (default 10^6).
pub const MAX_LP_PIVOTS_ENV: &str = "SPREADBENCH_MAX_LP_PIVOTS";

// ───────────────────────────── report & errors ─────────────────────────────

/// The one document a run prints on standard output.
#[derive(Debug, Clone)]
pub struct RunReport {
    /// Subcommand that ran.
    pub command: String,
    /// Lowercase hex SHA-256 of the input: the market file's exact bytes,
    /// or the canonical parameter string for generated inputs.
    pub input_digest: String,
    /// `CARGO_PKG_VERSION` of this binary.
    pub tool_version: String,
    /// Subcommand-specific verdicts and certificates.
    pub result: serde_json::Value,
    /// Wall-clock duration of the analysis. Reported on standard error
    /// only — the printed document stays bit-for-bit reproducible.
    pub timing: Duration,
}

impl RunReport {
    /// The canonical JSON document (timing deliberately excluded).
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "command": self.command,
            "input_digest": self.input_digest,
            "tool_version": self.tool_version,
            "result": self.result,
        })
    }

    /// Pretty canonical form with a trailing newline, ready for stdout.
    pub fn render(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.to_json())
            .expect("report serialization cannot fail");
        s.push('\n');
        s
    }
}

/// Failures, each mapped to its exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// `--help` / `--version`: print the text and exit 0.
    #[error("{0}")]
    HelpRequested(String),
    /// Rejected input (exit 2): flags, files, parameters, or budget.
    #[error("{0}")]
    Input(String),
    /// A certificate failed re-verification (exit 3): always a bug.
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    /// The process exit code this failure maps to.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::HelpRequested(_) => 0,
            CliError::Input(_) => 2,
            CliError::Internal(_) => 3,
        }
    }
}

/// Maps a core error to the exit discipline: internal inconsistencies are
/// bugs (exit 3); everything else rejects the input (exit 2) — including a
/// blown pivot budget, which names the environment variable to raise.
fn lift(err: CoreError) -> CliError {
    match err {
        CoreError::InternalInconsistency(m) => CliError::Internal(m),
        CoreError::PivotBudgetExceeded { budget } => CliError::Input(format!(
            "solver exceeded the pivot budget of {budget}; raise {MAX_LP_PIVOTS_ENV} for \
             instances this large"
        )),
        other => CliError::Input(other.to_string()),
    }
}

// ───────────────────────────── argument grammar ─────────────────────────────

fn rational_arg(s: &str) -> Result<Rational, String> {
    parse_rational(s).map_err(|e| e.to_string())
}

#[derive(Parser, Debug)]
#[command(
    name = "spreadbench",
    version,
    about = "Exact no-arbitrage analyses for finite markets with bid-ask spreads"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Audit every market invariant and report all violations.
    Validate {
        /// Market JSON file.
        market: PathBuf,
    },
    /// Decide arbitrage with two independent LP encodings and, when one
    /// exists, print a replay-verified witness strategy.
    Arbitrage {
        /// Market JSON file.
        market: PathBuf,
    },
    /// Search for a strictly positive bid-ask martingale measure.
    Ebamm {
        /// Market JSON file.
        market: PathBuf,
    },
    /// Build the pinched supermartingale/submartingale pair from a found
    /// measure, or (with --search) look for a full martingale system.
    Cps {
        /// Market JSON file.
        market: PathBuf,
        /// Experimental: search for an exact martingale confined to the
        /// spread instead of building the one-sided pair.
        #[arg(long)]
        search: bool,
    },
    /// Generate a binomial bid-ask market and report its admissibility
    /// interval and factor conditions.
    Crr {
        /// Root bid quote.
        #[arg(long, value_parser = rational_arg, allow_hyphen_values = true)]
        s_bid0: Rational,
        /// Root ask quote.
        #[arg(long, value_parser = rational_arg, allow_hyphen_values = true)]
        s_ask0: Rational,
        /// Up return on the bid side.
        #[arg(long, value_parser = rational_arg, allow_hyphen_values = true)]
        u_bid: Rational,
        /// Down return on the bid side.
        #[arg(long, value_parser = rational_arg, allow_hyphen_values = true)]
        d_bid: Rational,
        /// Up return on the ask side.
        #[arg(long, value_parser = rational_arg, allow_hyphen_values = true)]
        u_ask: Rational,
        /// Down return on the ask side.
        #[arg(long, value_parser = rational_arg, allow_hyphen_values = true)]
        d_ask: Rational,
        /// Physical up probability (verdicts never depend on it).
        #[arg(short = 'p', long = "prob", value_parser = rational_arg,
              allow_hyphen_values = true, default_value = "1/2")]
        p: Rational,
        /// Number of periods.
        #[arg(long, default_value_t = 1)]
        steps: usize,
    },
    /// Evaluate a strategy's exact liquidation values on a market.
    Value {
        /// Market JSON file.
        market: PathBuf,
        /// Strategy JSON file ({"holdings": {node: ["p/q", ...]}}).
        #[arg(long)]
        strategy: PathBuf,
    },
    /// Run detector, measure search, and system construction on seeded
    /// random markets and report their agreement.
    Equivalence {
        /// Number of markets to draw.
        #[arg(long, default_value_t = 100)]
        count: u32,
        /// Base seed; market i uses seed + i.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

// ───────────────────────────── entry point ─────────────────────────────

/// Parses `argv` and runs the requested analysis, measuring its duration.
pub fn execute<I, T>(argv: I) -> Result<RunReport, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv).map_err(|e| match e.kind() {
        ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
            CliError::HelpRequested(e.to_string())
        }
        _ => CliError::Input(e.to_string()),
    })?;
    let options = lp_options_from_env()?;
    let started = Instant::now();
    let (command, input_digest, result) = match cli.command {
        Command::Validate { market } => run_validate(&market)?,
        Command::Arbitrage { market } => run_arbitrage(&market, &options)?,
        Command::Ebamm { market } => run_ebamm(&market, &options)?,
        Command::Cps { market, search } => run_cps(&market, search, &options)?,
        Command::Crr { s_bid0, s_ask0, u_bid, d_bid, u_ask, d_ask, p, steps } => {
            let params = CrrParams { s_bid0, s_ask0, u_bid, u_ask, d_bid, d_ask, p, steps };
            run_crr(&params)?
        }
        Command::Value { market, strategy } => run_value(&market, &strategy)?,
        Command::Equivalence { count, seed } => run_equivalence(count, seed, &options)?,
    };
    Ok(RunReport {
        command,
        input_digest,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        result,
        timing: started.elapsed(),
    })
}

fn lp_options_from_env() -> Result<LpOptions, CliError> {
    match std::env::var(MAX_LP_PIVOTS_ENV) {
        Err(_) => Ok(LpOptions::default()),
        Ok(raw) => {
            let max_pivots = raw.trim().parse::<u64>().map_err(|_| {
                CliError::Input(format!(
                    "{MAX_LP_PIVOTS_ENV} must be a nonnegative integer, got {raw:?}"
                ))
            })?;
            Ok(LpOptions { max_pivots })
        }
    }
}

// ───────────────────────────── input plumbing ─────────────────────────────

fn digest_bytes(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    format!("{:x}", hasher.finalize())
}

/// Reads a market file, returning its parsed content and content digest.
fn read_market(path: &Path) -> Result<(ScenarioTree, BidAskProcess, String), CliError> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
    let digest = digest_bytes(&bytes);
    let text = String::from_utf8(bytes)
        .map_err(|_| CliError::Input(format!("{} is not UTF-8", path.display())))?;
    let (tree, prices) = market_from_json_str(&text).map_err(lift)?;
    Ok((tree, prices, digest))
}

fn measure_json(measure: &Measure) -> serde_json::Value {
    serde_json::Value::Object(
        measure.weights.iter().map(|(k, v)| (k.clone(), rational_to_json(v))).collect(),
    )
}

fn system_json(system: &PricedSystem) -> serde_json::Value {
    let kind = match system.kind {
        SystemKind::Supermartingale => "supermartingale",
        SystemKind::Submartingale => "submartingale",
        SystemKind::Martingale => "martingale",
    };
    serde_json::json!({
        "process": serde_json::Value::Object(
            system
                .process
                .iter()
                .map(|(k, v)| {
                    (k.clone(), serde_json::Value::Array(v.iter().map(rational_to_json).collect()))
                })
                .collect(),
        ),
        "kind": kind,
        "measure": measure_json(&system.measure),
    })
}

// ───────────────────────────── subcommands ─────────────────────────────

type Outcome = (String, String, serde_json::Value);

fn run_validate(path: &Path) -> Result<Outcome, CliError> {
    let (tree, prices, digest) = read_market(path)?;
    let report = validate(&tree, &prices);
    let result = serde_json::json!({
        "pass": report.pass(),
        "violations": report.violations,
    });
    Ok(("validate".into(), digest, result))
}

fn run_arbitrage(path: &Path, options: &LpOptions) -> Result<Outcome, CliError> {
    let (tree, prices, digest) = read_market(path)?;
    let verdict = detect_arbitrage_with(&tree, &prices, options).map_err(lift)?;
    let cross_check = detect_arbitrage_normalized_with(&tree, &prices, options).map_err(lift)?;
    if verdict.has_arbitrage != cross_check.has_arbitrage {
        return Err(CliError::Internal(format!(
            "the two detector encodings disagree (unbounded: {}, normalized: {})",
            verdict.has_arbitrage, cross_check.has_arbitrage
        )));
    }
    if let Some(witness) = &verdict.witness {
        // Replay before printing: nonnegative everywhere, positive somewhere,
        // and exactly the values the verdict claims.
        let values = value_process(&tree, &prices, witness, tree.horizon()).map_err(lift)?;
        let ok = values.values().all(|v| !v.is_negative())
            && values.values().any(|v| v.is_positive())
            && Some(&values) == verdict.witness_values.as_ref();
        if !ok {
            return Err(CliError::Internal(
                "the reported witness does not replay to an arbitrage".into(),
            ));
        }
    }
    Ok(("arbitrage".into(), digest, verdict.to_json()))
}

fn run_ebamm(path: &Path, options: &LpOptions) -> Result<Outcome, CliError> {
    let (tree, prices, digest) = read_market(path)?;
    let result = match find_ebamm_with(&tree, &prices, options).map_err(lift)? {
        None => serde_json::json!({"exists": false}),
        Some(ebamm) => {
            let violations = verify_ebamm(&tree, &prices, &ebamm).map_err(lift)?;
            if !violations.is_empty() {
                return Err(CliError::Internal(format!(
                    "the found measure fails its own audit at {} site(s)",
                    violations.len()
                )));
            }
            ebamm.to_json()
        }
    };
    Ok(("ebamm".into(), digest, result))
}

fn run_cps(path: &Path, search: bool, options: &LpOptions) -> Result<Outcome, CliError> {
    let (tree, prices, digest) = read_market(path)?;
    if search {
        // Experimental: one LP feasibility question per market — does an
        // exact martingale fit inside the spread? Outcomes are recorded,
        // not theorized about.
        let result = match find_cps_with(&tree, &prices, options).map_err(lift)? {
            None => serde_json::json!({"experimental": true, "found": false}),
            Some(system) => {
                let violations = verify_priced_system(&tree, &prices, &system).map_err(lift)?;
                if !violations.is_empty() {
                    return Err(CliError::Internal(format!(
                        "the martingale system fails re-verification: {}",
                        violations.join("; ")
                    )));
                }
                serde_json::json!({
                    "experimental": true,
                    "found": true,
                    "system": system_json(&system),
                })
            }
        };
        return Ok(("cps".into(), digest, result));
    }
    let result = match find_ebamm_with(&tree, &prices, options).map_err(lift)? {
        None => serde_json::json!({"built": false}),
        Some(ebamm) => {
            let (hat, check) = build_systems_with(&tree, &prices, &ebamm, options)
                .map_err(|e| CliError::Internal(format!(
                    "a verified measure must extend to both systems, but: {e}"
                )))?;
            for (name, system) in [("hat", &hat), ("check", &check)] {
                let violations = verify_priced_system(&tree, &prices, system).map_err(lift)?;
                if !violations.is_empty() {
                    return Err(CliError::Internal(format!(
                        "the {name} system fails re-verification: {}",
                        violations.join("; ")
                    )));
                }
            }
            serde_json::json!({
                "built": true,
                "hat": system_json(&hat),
                "check": system_json(&check),
            })
        }
    };
    Ok(("cps".into(), digest, result))
}

fn run_crr(params: &CrrParams) -> Result<Outcome, CliError> {
    // No input file: the digest covers the canonical parameter string, so
    // identical parameters still yield identical reports.
    let canonical = format!(
        "crr?s_bid0={}&s_ask0={}&u_bid={}&u_ask={}&d_bid={}&d_ask={}&p={}&steps={}",
        format_rational(&params.s_bid0),
        format_rational(&params.s_ask0),
        format_rational(&params.u_bid),
        format_rational(&params.u_ask),
        format_rational(&params.d_bid),
        format_rational(&params.d_ask),
        format_rational(&params.p),
        params.steps,
    );
    let digest = digest_bytes(canonical.as_bytes());
    let (tree, prices) = generate_tree(params).map_err(lift)?;
    let interval = ebamm_interval(params).map_err(lift)?;
    let conditions = na_conditions(params).map_err(lift)?;
    let result = serde_json::json!({
        "market": market_to_json(&tree, &prices),
        "interval": {
            "q_lo": rational_to_json(&interval.q_lo),
            "q_hi": rational_to_json(&interval.q_hi),
            "admissible": interval.admissible,
        },
        "conditions": {
            "downside": conditions.downside,
            "upside": conditions.upside,
            "cross": conditions.cross,
            "cross_lhs": rational_to_json(&conditions.cross_lhs),
            "cross_rhs": rational_to_json(&conditions.cross_rhs),
            "holds": conditions.holds,
        },
    });
    Ok(("crr".into(), digest, result))
}

fn run_value(market_path: &Path, strategy_path: &Path) -> Result<Outcome, CliError> {
    let market_bytes = std::fs::read(market_path)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", market_path.display())))?;
    let strategy_bytes = std::fs::read(strategy_path)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", strategy_path.display())))?;
    // The digest covers both inputs: market bytes, then strategy bytes.
    let mut hasher = Sha256::new();
    hasher.update(&market_bytes);
    hasher.update(&strategy_bytes);
    let digest = format!("{:x}", hasher.finalize());

    let text = String::from_utf8(market_bytes)
        .map_err(|_| CliError::Input(format!("{} is not UTF-8", market_path.display())))?;
    let (tree, prices) = market_from_json_str(&text).map_err(lift)?;
    let strategy_doc: serde_json::Value = serde_json::from_slice(&strategy_bytes)
        .map_err(|e| CliError::Input(format!("{}: {e}", strategy_path.display())))?;
    let strategy = Strategy::from_json(&strategy_doc).map_err(lift)?;
    let trace = value_trace(&tree, &prices, &strategy).map_err(lift)?;
    Ok(("value".into(), digest, trace.to_json()))
}

fn run_equivalence(count: u32, seed: u64, options: &LpOptions) -> Result<Outcome, CliError> {
    let canonical = format!("equivalence?count={count}&seed={seed}");
    let digest = digest_bytes(canonical.as_bytes());
    let config = GeneratorConfig::default();
    let mut markets = Vec::with_capacity(count as usize);
    let mut agreements = 0u32;
    for i in 0..count {
        let market_seed = seed + u64::from(i);
        let mut rng = seeded_rng(market_seed);
        let (tree, prices) = random_market(&mut rng, &config);
        let report = theorem_equivalence_with(&tree, &prices, options).map_err(lift)?;
        if !report.agree {
            return Err(CliError::Internal(format!(
                "tripartite equivalence broke on market {i} (seed {market_seed}): \
                 detector={}, measure={}, systems={}",
                report.no_arbitrage, report.ebamm_found, report.systems_built
            )));
        }
        agreements += 1;
        markets.push(serde_json::json!({
            "index": i,
            "seed": market_seed,
            "no_arbitrage": report.no_arbitrage,
            "ebamm_found": report.ebamm_found,
            "systems_built": report.systems_built,
            "agree": report.agree,
        }));
    }
    let result = serde_json::json!({
        "count": count,
        "agreements": agreements,
        "markets": markets,
    });
    Ok(("equivalence".into(), digest, result))
}
