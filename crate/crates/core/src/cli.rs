//! Command-line front end.
//!
//! Exit codes: 0 on success, 2 on usage, configuration or parse errors,
//! 3 when the history is too thin to assess and no overlay answered.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{self, BufReader, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::csvio::{self, LEADING_COLUMNS};
use crate::engine::{Engine, EngineError, KnowledgeSource, SharedKnowledge};
use crate::lkson::{codec, PRIOR_TRUST};
use crate::sim::{self, Model, SimConfig, SweepSpec};
use crate::transaction::{AgentId, Outcome, Transaction, TransactionLog};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_INSUFFICIENT: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "trustlens",
    version,
    about = "Assess transaction risk from local history"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a synthetic sweep and write a results CSV.
    Simulate(SimulateArgs),
    /// Assess one pending transaction against a logged history.
    Assess(AssessArgs),
    /// Normalize an external transaction table into the log format.
    Ingest(IngestArgs),
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Separability values, comma separated or `start:stop:step`.
    #[arg(long, default_value = "0.2,0.4,0.6,0.8")]
    theta: String,
    /// Malicious fractions, comma separated or `start:stop:step`.
    #[arg(long, default_value = "0.1:0.9:0.1")]
    pm: String,
    /// Models: lda, dt, random, feedback, stereo, combined.
    #[arg(long, default_value = "lda,dt,random,feedback,stereo")]
    models: String,
    #[arg(long, env = "TRUSTLENS_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1000)]
    agents: usize,
    /// Evaluated transactions per run.
    #[arg(long, default_value_t = 5000)]
    transactions: usize,
    /// Runs per cell.
    #[arg(long, default_value_t = 10)]
    repeats: usize,
    /// Unevaluated transactions each agent logs first.
    #[arg(long, default_value_t = 10)]
    warmup: usize,
    /// Knowledge providers per agent.
    #[arg(long, default_value_t = 60)]
    providers: usize,
    /// Feature count.
    #[arg(long, default_value_t = 4)]
    d: usize,
}

#[derive(Debug, Args)]
struct AssessArgs {
    /// History CSV: id,counterparty,context,outcome,f1..fd.
    #[arg(long)]
    log: PathBuf,
    /// Candidate features, comma separated.
    #[arg(long, allow_hyphen_values = true)]
    candidate: String,
    #[arg(long)]
    context: String,
    /// Knowledge tuples to fall back on, one per line.
    #[arg(long)]
    overlay: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct IngestArgs {
    #[arg(long)]
    input: PathBuf,
    /// Column mapping, e.g. `id=tid,counterparty=seller,context=category,outcome=rating,features=price|sold|neg`.
    /// Unmapped roles default to the same-named column; features default to all remaining columns.
    #[arg(long)]
    map: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

/// Parses the arguments (program name first) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    run_with(args, &mut io::stdout().lock(), &mut io::stderr().lock())
}

pub fn run_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(err, "{}", e.render());
            return e.exit_code();
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => simulate(a, out),
        Command::Assess(a) => assess(a, out),
        Command::Ingest(a) => ingest(a, out),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(Failure { code, message }) => {
            let _ = writeln!(err, "error: {message}");
            code
        }
    }
}

struct Failure {
    code: i32,
    message: String,
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_USAGE,
        message: message.into(),
    }
}

fn io_failure(path: &std::path::Path, e: io::Error) -> Failure {
    usage(format!("{}: {e}", path.display()))
}

/// Comma list or inclusive `start:stop:step` range.
pub fn parse_values(spec: &str) -> Result<Vec<f64>, String> {
    let number = |s: &str| {
        s.trim()
            .parse::<f64>()
            .map_err(|_| format!("`{}` is not a number", s.trim()))
    };
    if spec.contains(':') {
        let parts: Vec<&str> = spec.split(':').collect();
        let [start, stop, step] = parts[..] else {
            return Err(format!("range `{spec}` must be start:stop:step"));
        };
        let (start, stop, step) = (number(start)?, number(stop)?, number(step)?);
        if step <= 0.0 || !step.is_finite() || stop < start {
            return Err(format!(
                "range `{spec}` must have a positive step and stop >= start"
            ));
        }
        let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
        // Rounding keeps 0.1 + 2 * 0.1 printing and seeding as 0.3.
        Ok((0..count)
            .map(|i| ((start + i as f64 * step) * 1e12).round() / 1e12)
            .collect())
    } else {
        spec.split(',').map(number).collect()
    }
}

fn simulate(a: SimulateArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let thetas = parse_values(&a.theta).map_err(|e| usage(format!("--theta: {e}")))?;
    if thetas.iter().any(|t| !(0.0..=1.0).contains(t)) {
        return Err(usage("theta out of [0,1]"));
    }
    let pms = parse_values(&a.pm).map_err(|e| usage(format!("--pm: {e}")))?;
    if pms.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(usage("p_m out of [0,1]"));
    }
    let models = a
        .models
        .split(',')
        .map(|m| m.parse::<Model>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| usage(e.to_string()))?;
    let spec = SweepSpec {
        base: SimConfig {
            n_agents: a.agents,
            n_transactions: a.transactions,
            warmup: a.warmup,
            providers: a.providers,
            d: a.d,
            seed: a.seed,
            ..SimConfig::default()
        },
        thetas,
        pms,
        models,
        repeats: a.repeats,
    };
    let cells = sim::sweep(&spec).map_err(|e| usage(e.to_string()))?;

    let mut buf = Vec::new();
    sim::write_results_csv(&cells, &mut buf).map_err(|e| io_failure(&a.out, e))?;
    std::fs::write(&a.out, buf).map_err(|e| io_failure(&a.out, e))?;

    let _ = writeln!(
        out,
        "{:<9} {:>6} {:>6} {:>9} {:>9} {:>9} {:>9}",
        "model", "theta", "p_m", "fp", "fn", "overall", "std"
    );
    for cell in &cells {
        let (overall, std) = cell.overall();
        let _ = writeln!(
            out,
            "{:<9} {:>6.2} {:>6.2} {:>9.4} {:>9.4} {:>9.4} {:>9.4}",
            cell.model.name(),
            cell.theta,
            cell.p_m,
            cell.false_positive().0,
            cell.false_negative().0,
            overall,
            std
        );
    }
    let _ = writeln!(out, "wrote {} rows to {}", cells.len(), a.out.display());
    Ok(())
}

fn assess(a: AssessArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let file = File::open(&a.log).map_err(|e| io_failure(&a.log, e))?;
    let log = csvio::read_log(AgentId::new("self"), BufReader::new(file))
        .map_err(|e| usage(format!("{}: {e}", a.log.display())))?;
    let features = parse_values(&a.candidate)
        .ok()
        .filter(|v| !v.is_empty())
        .ok_or_else(|| usage("--candidate must be a comma-separated list of numbers"))?;
    let overlay: Vec<SharedKnowledge> = match &a.overlay {
        Some(path) => {
            let file = File::open(path).map_err(|e| io_failure(path, e))?;
            codec::read_tuples(BufReader::new(file))
                .map_err(|e| usage(format!("{}: {e}", path.display())))?
                .into_iter()
                .map(|tuple| SharedKnowledge {
                    tuple,
                    trust: PRIOR_TRUST,
                })
                .collect()
        }
        None => Vec::new(),
    };
    let candidate = Transaction::pending("candidate", "unknown", a.context.as_str(), features);
    let overlay_ref = a
        .overlay
        .as_ref()
        .map(|_| &overlay as &dyn crate::engine::KnowledgeOverlay);

    let assessment = match Engine::default().assess(&log, &candidate, overlay_ref) {
        Ok(assessment) => assessment,
        Err(e @ EngineError::InsufficientKnowledge { .. }) => {
            return Err(Failure {
                code: EXIT_INSUFFICIENT,
                message: e.to_string(),
            })
        }
        Err(e) => return Err(usage(e.to_string())),
    };
    let (s, u) = assessment.class_counts;
    let _ = writeln!(
        out,
        "context {}: {s} successful, {u} unsuccessful",
        a.context
    );
    if assessment.source == KnowledgeSource::Overlay {
        let _ = writeln!(
            out,
            "knowledge from {} overlay provider(s)",
            assessment.consulted.len()
        );
    }
    for p in &assessment.predictions {
        let _ = writeln!(out, "{}: {} (σ={:.4})", p.algorithm, p.label, p.confidence);
    }
    let c = assessment.chosen;
    let _ = writeln!(
        out,
        "recommendation: {} by {} (σ={:.4})",
        c.label, c.algorithm, c.confidence
    );
    Ok(())
}

/// Column index for each role of the core log format.
struct ColumnMap {
    id: usize,
    counterparty: usize,
    context: usize,
    outcome: usize,
    features: Vec<usize>,
}

fn resolve_map(spec: Option<&str>, header: &csv::StringRecord) -> Result<ColumnMap, String> {
    let mut roles: BTreeMap<String, String> = BTreeMap::new();
    if let Some(spec) = spec {
        for pair in spec.split(',').filter(|p| !p.trim().is_empty()) {
            let (role, column) = pair
                .split_once('=')
                .ok_or_else(|| format!("mapping `{pair}` must be role=column"))?;
            let role = role.trim().to_ascii_lowercase();
            if !LEADING_COLUMNS.contains(&role.as_str()) && role != "features" {
                return Err(format!("unknown role `{role}`"));
            }
            roles.insert(role, column.trim().to_owned());
        }
    }
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| format!("column `{name}` not found in header"))
    };
    let role = |r: &str| find(roles.get(r).map(String::as_str).unwrap_or(r));
    let (id, counterparty, context, outcome) = (
        role("id")?,
        role("counterparty")?,
        role("context")?,
        role("outcome")?,
    );
    let features = match roles.get("features") {
        Some(list) => list
            .split('|')
            .map(|c| find(c.trim()))
            .collect::<Result<Vec<_>, _>>()?,
        None => (0..header.len())
            .filter(|i| ![id, counterparty, context, outcome].contains(i))
            .collect(),
    };
    if features.is_empty() {
        return Err("no feature columns".into());
    }
    Ok(ColumnMap {
        id,
        counterparty,
        context,
        outcome,
        features,
    })
}

/// Accepted outcome spellings, case-insensitive.
pub fn parse_outcome(raw: &str) -> Option<Outcome> {
    match raw.trim().to_ascii_lowercase().as_str() {
        "1" | "positive" | "pos" | "true" | "successful" | "success" | "s" => {
            Some(Outcome::Successful)
        }
        "0" | "negative" | "neg" | "false" | "unsuccessful" | "failure" | "u" => {
            Some(Outcome::Unsuccessful)
        }
        _ => None,
    }
}

fn percent(part: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        100.0 * part as f64 / total as f64
    }
}

fn ingest(a: IngestArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let file = File::open(&a.input).map_err(|e| io_failure(&a.input, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(BufReader::new(file));
    let header = reader
        .headers()
        .map_err(|e| usage(format!("{}: {e}", a.input.display())))?
        .clone();
    let map = resolve_map(a.map.as_deref(), &header).map_err(|e| usage(format!("--map: {e}")))?;

    let mut log = TransactionLog::new(AgentId::new("ingest"), map.features.len());
    let mut seen = HashSet::new();
    let (mut rows, mut missing, mut duplicates) = (0usize, 0usize, 0usize);
    let mut contexts: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| usage(format!("{}: {e}", a.input.display())))?;
        rows += 1;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let outcome = parse_outcome(&record[map.outcome]).ok_or_else(|| {
            usage(format!(
                "line {line}: unrecognised outcome `{}` in column `{}`",
                &record[map.outcome], &header[map.outcome]
            ))
        })?;
        let mut features = Vec::with_capacity(map.features.len());
        for &c in &map.features {
            let raw = &record[c];
            if raw.is_empty() {
                break;
            }
            let value: f64 = raw.parse().map_err(|_| {
                usage(format!(
                    "line {line}: `{raw}` in column `{}` is not a number",
                    &header[c]
                ))
            })?;
            if !value.is_finite() {
                break;
            }
            features.push(value);
        }
        if features.len() < map.features.len() {
            missing += 1;
            continue;
        }
        if !seen.insert(record[map.id].to_owned()) {
            duplicates += 1;
            continue;
        }
        let tx = Transaction::completed(
            &record[map.id],
            &record[map.counterparty],
            &record[map.context],
            features,
            outcome,
        );
        log.push(tx)
            .map_err(|e| usage(format!("line {line}: {e}")))?;
        let entry = contexts.entry(record[map.context].to_owned()).or_default();
        if outcome.is_successful() {
            entry.0 += 1
        } else {
            entry.1 += 1
        }
    }

    let mut buf = Vec::new();
    log.write_csv(&mut buf).map_err(|e| usage(e.to_string()))?;
    std::fs::write(&a.out, buf).map_err(|e| io_failure(&a.out, e))?;

    let (s, u) = log.class_counts();
    let kept = log.len();
    let _ = writeln!(out, "rows read: {rows}, kept: {kept}");
    let _ = writeln!(out, "dropped (missing or non-finite features): {missing}");
    let _ = writeln!(out, "dropped (duplicate id): {duplicates}");
    let _ = writeln!(
        out,
        "outcomes: {s} successful ({:.1}% successful), {u} unsuccessful ({:.1}% unsuccessful)",
        percent(s, kept),
        percent(u, kept)
    );
    for (context, (cs, cu)) in &contexts {
        let _ = writeln!(
            out,
            "context {context}: {} rows, {cs} successful, {cu} unsuccessful",
            cs + cu
        );
    }
    Ok(())
}
