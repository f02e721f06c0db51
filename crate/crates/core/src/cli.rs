//! The `tracelam` command line: run a model with a chosen inference method,
//! evaluate a term on a trace, or run the semantics property suite.
//!
//! Exit codes: 0 on success, 1 on I/O and evaluation errors or failed
//! checks, 2 on usage, parse and translation errors, 3 when inference
//! cannot produce samples (initialization or retry budget exhausted).

use std::ffi::OsString;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;
use thiserror::Error;

use crate::ast::{GeneralizedValue, Term, Value};
use crate::builtins::{BuiltinError, Registry};
use crate::check::run_suite;
use crate::church::{self, ChurchError};
use crate::eval::{EvalError, Evaluator, ForwardRun, DEFAULT_FUEL};
use crate::infer::{Chain, ForwardSamples, InferError, MHConfig, RejectionSampler, Sample, DEFAULT_MAX_RETRIES};
use crate::stats::{summarize, EmpiricalDist, DEFAULT_BINS};
use crate::syntax::{format_const, parse_term, SyntaxError};

#[derive(Debug, Parser)]
#[command(name = "tracelam", version, about = "Trace-based inference for a probabilistic λ-calculus")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample from a model (`.church` query or `.core` term).
    Run(RunArgs),
    /// Run a model on a given trace and report the outcome.
    Eval(EvalArgs),
    /// Run the built-in semantics property suite.
    Check(CheckArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Mh,
    Rejection,
    Forward,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Jsonl,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    pub model: PathBuf,
    #[arg(long, value_enum, default_value = "mh")]
    pub method: Method,
    #[arg(long, default_value_t = 1000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub burn_in: usize,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub thin: u64,
    /// Proposal standard deviation (mh only; default 1.0).
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long, env = "TRACELAM_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_FUEL)]
    pub fuel: u64,
    /// Consecutive rejected runs allowed per rejection sample.
    #[arg(long, default_value_t = DEFAULT_MAX_RETRIES)]
    pub max_retries: u64,
    /// Forward runs allowed to find an initial MH state.
    #[arg(long, default_value_t = 10_000)]
    pub init_retries: u64,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
    /// Write samples here instead of stdout.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    /// Independent chains on separate RNG streams, interleaved in the output.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub chains: u64,
    /// Print the translated core term and exit.
    #[arg(long)]
    pub emit_core: bool,
    /// Write summary statistics of the numeric samples as JSON.
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    pub model: PathBuf,
    /// Comma-separated random choices.
    #[arg(long, default_value = "", allow_hyphen_values = true)]
    pub trace: String,
    #[arg(long, default_value_t = DEFAULT_FUEL)]
    pub fuel: u64,
    /// Log every machine configuration as a JSON line.
    #[arg(long)]
    pub steps: bool,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[arg(long, default_value_t = 1000)]
    pub cases: usize,
    #[arg(long, env = "TRACELAM_SEED", default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Read { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Church { path: PathBuf, source: ChurchError },
    #[error("{path}: {source}")]
    Syntax { path: PathBuf, source: SyntaxError },
    #[error("{path}: {source}")]
    Builtin { path: PathBuf, source: BuiltinError },
    #[error("{path}: the model is not closed: {source}")]
    Open { path: PathBuf, source: EvalError },
    #[error("invalid trace element `{0}`")]
    BadTrace(String),
    #[error("--sigma only applies to --method mh")]
    SigmaWithoutMh,
    #[error(transparent)]
    Infer(#[from] InferError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("writing output: {0}")]
    Io(#[from] io::Error),
    #[error("{0} of {1} properties failed")]
    ChecksFailed(usize, usize),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Church { .. }
            | CliError::Syntax { .. }
            | CliError::Builtin { .. }
            | CliError::Open { .. }
            | CliError::BadTrace(_)
            | CliError::SigmaWithoutMh => 2,
            CliError::Infer(InferError::InitFailure { .. } | InferError::RetryExhausted { .. }) => 3,
            CliError::Infer(InferError::InvalidConfig(_)) => 2,
            _ => 1,
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn main_with(args: impl IntoIterator<Item = OsString>, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(err, "{}", e.render().ansi());
            return e.exit_code();
        }
    };
    match execute(&cli.command, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "tracelam: {e}");
            e.exit_code()
        }
    }
}

fn execute(command: &Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    match command {
        Command::Run(a) => run(a, out, err),
        Command::Eval(a) => eval(a, out),
        Command::Check(a) => check(a, out),
    }
}

/// Loads a model: `.core` files hold a core term, anything else a Church query.
pub fn load_model(path: &Path, reg: &Registry) -> Result<Term, CliError> {
    let src = fs::read_to_string(path).map_err(|source| CliError::Read { path: path.into(), source })?;
    let term = if path.extension().is_some_and(|e| e == "core") {
        parse_term(&src).map_err(|source| CliError::Syntax { path: path.into(), source })?
    } else {
        church::compile(&src, reg).map_err(|source| CliError::Church { path: path.into(), source })?
    };
    if let Some(x) = term.first_free_var() {
        return Err(CliError::Open { path: path.into(), source: crate::ast::OpenTermError(x).into() });
    }
    reg.validate(&term).map_err(|source| CliError::Builtin { path: path.into(), source })?;
    Ok(term)
}

/// Sample value as written to output files: integral constants without a
/// fractional part, other constants in shortest round-trip form, λ-values
/// as core text, and `fail`.
pub fn format_result(g: &GeneralizedValue) -> String {
    match g {
        GeneralizedValue::Val(Value::Const(c)) if c.fract() == 0.0 && c.abs() < 1e15 => format!("{}", *c as i64),
        GeneralizedValue::Val(Value::Const(c)) => format_const(*c),
        GeneralizedValue::Val(v) => v.to_string(),
        GeneralizedValue::Fail => "fail".to_owned(),
    }
}

fn json_number(x: f64) -> serde_json::Value {
    if x.is_finite() {
        json!(x)
    } else {
        json!(format_const(x))
    }
}

fn json_result(g: &GeneralizedValue) -> serde_json::Value {
    match g {
        GeneralizedValue::Val(Value::Const(c)) => json_number(*c),
        other => json!(format_result(other)),
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

/// One output row.
struct Row {
    chain: Option<u64>,
    index: usize,
    value: GeneralizedValue,
    log_weight: f64,
    accepted: bool,
}

impl Row {
    fn from_sample(chain: Option<u64>, s: Sample) -> Row {
        Row {
            chain,
            index: s.index,
            value: GeneralizedValue::Val(s.value),
            log_weight: s.log_weight,
            accepted: s.accepted,
        }
    }

    fn from_forward(chain: Option<u64>, index: usize, r: ForwardRun) -> Row {
        let accepted = r.outcome.result.is_value() && !r.outcome.weight.is_zero();
        Row { chain, index, value: r.outcome.result, log_weight: r.outcome.weight.ln(), accepted }
    }

    fn write(&self, format: Format, out: &mut dyn Write) -> io::Result<()> {
        match format {
            Format::Csv => {
                let value = csv_field(&format_result(&self.value));
                let lw = format_const(self.log_weight);
                match self.chain {
                    Some(c) => writeln!(out, "{c},{},{value},{lw},{}", self.index, self.accepted),
                    None => writeln!(out, "{},{value},{lw},{}", self.index, self.accepted),
                }
            }
            Format::Jsonl => {
                let mut obj = serde_json::Map::new();
                if let Some(c) = self.chain {
                    obj.insert("chain".into(), json!(c));
                }
                obj.insert("index".into(), json!(self.index));
                obj.insert("value".into(), json_result(&self.value));
                obj.insert("log_weight".into(), json_number(self.log_weight));
                obj.insert("accepted".into(), json!(self.accepted));
                writeln!(out, "{}", serde_json::Value::Object(obj))
            }
        }
    }
}

/// A stream of rows from one chain.
type Stream<'a> = Box<dyn Iterator<Item = Result<Row, CliError>> + 'a>;

fn stream<'a>(
    a: &RunArgs,
    method: Method,
    ev: Evaluator<'a>,
    term: &Arc<Term>,
    chain: u64,
    tag: Option<u64>,
) -> Result<Stream<'a>, CliError> {
    Ok(match method {
        Method::Mh => {
            let cfg = MHConfig {
                sigma: a.sigma.unwrap_or(1.0),
                samples: a.samples,
                burn_in: a.burn_in,
                thin: a.thin as usize,
                seed: a.seed,
                fuel: a.fuel,
                init_retries: a.init_retries,
            };
            let chain = Chain::with_stream(ev, term.clone(), cfg, chain)?;
            Box::new(chain.map(move |s| Ok(Row::from_sample(tag, s?))))
        }
        Method::Rejection => {
            let it = RejectionSampler::with_stream(ev, term.clone(), a.samples, a.seed, a.max_retries, chain);
            Box::new(it.map(move |s| Ok(Row::from_sample(tag, s?))))
        }
        Method::Forward => {
            let it = ForwardSamples::with_stream(ev, term.clone(), a.samples, a.seed, chain);
            Box::new(it.enumerate().map(move |(i, r)| Ok(Row::from_forward(tag, i, r?))))
        }
    })
}

fn run(a: &RunArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    if a.sigma.is_some() && a.method != Method::Mh {
        return Err(CliError::SigmaWithoutMh);
    }
    let reg = Registry::standard();
    let term = Arc::new(load_model(&a.model, &reg)?);
    if a.emit_core {
        writeln!(out, "{term}")?;
        return Ok(());
    }
    let ev = Evaluator::new(&reg).with_fuel(a.fuel);
    let mut method = a.method;
    if method == Method::Mh {
        // A run that consumes no choices is the only run, so the model is
        // deterministic and MH has nothing to perturb.
        let probe = Chain::new(
            ev,
            term.clone(),
            MHConfig { samples: 0, seed: a.seed, fuel: a.fuel, init_retries: a.init_retries, ..MHConfig::default() },
        )?;
        if probe.state().trace.is_empty() {
            writeln!(err, "tracelam: warning: the model makes no random choices; using rejection sampling")?;
            method = Method::Rejection;
        }
    }
    let tagged = a.chains > 1;
    let mut streams: Vec<Stream> =
        (0..a.chains).map(|c| stream(a, method, ev, &term, c, tagged.then_some(c))).collect::<Result<_, _>>()?;

    let mut sink: Box<dyn Write> = match &a.output {
        Some(p) => Box::new(BufWriter::new(fs::File::create(p)?)),
        None => Box::new(BufWriter::new(&mut *out)),
    };
    if a.format == Format::Csv {
        writeln!(sink, "{}index,value,log_weight,accepted", if tagged { "chain," } else { "" })?;
    }
    let mut numeric = Vec::new();
    let mut other = 0usize;
    let mut live = true;
    while live {
        live = false;
        for s in &mut streams {
            if let Some(row) = s.next() {
                let row = row?;
                live = true;
                match &row.value {
                    GeneralizedValue::Val(Value::Const(c)) if c.is_finite() => numeric.push(*c),
                    _ => other += 1,
                }
                row.write(a.format, &mut sink)?;
            }
        }
    }
    sink.flush()?;
    drop(sink);
    if let Some(path) = &a.summary {
        let discrete = numeric.iter().all(|c| c.fract() == 0.0);
        let dist = if discrete {
            EmpiricalDist::discrete(numeric)
        } else {
            EmpiricalDist::continuous(numeric).expect("finite values")
        };
        let summary = json!({
            "method": format!("{method:?}").to_lowercase(),
            "non_numeric": other,
            "stats": summarize(&dist, DEFAULT_BINS),
        });
        fs::write(path, serde_json::to_string_pretty(&summary).expect("serializable") + "\n")?;
    }
    Ok(())
}

fn parse_trace(s: &str) -> Result<Vec<f64>, CliError> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| crate::syntax::parse_number(t).ok_or_else(|| CliError::BadTrace(t.to_owned())))
        .collect()
}

#[derive(Serialize)]
struct EvalReport {
    status: String,
    result: serde_json::Value,
    weight: f64,
    log_weight: serde_json::Value,
    steps: u64,
}

fn eval(a: &EvalArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let reg = Registry::standard();
    let term = Arc::new(load_model(&a.model, &reg)?);
    let trace = parse_trace(&a.trace)?;
    let ev = Evaluator::new(&reg).with_fuel(a.fuel);
    let mut out = BufWriter::new(out);
    let mut io_result = Ok(());
    let outcome = ev.run_small_step_observed(&term, &trace, |rec| {
        if a.steps && io_result.is_ok() {
            io_result = serde_json::to_writer(&mut out, rec).map_err(io::Error::from).and_then(|()| writeln!(out));
        }
    })?;
    io_result?;
    let report = EvalReport {
        status: format!("{:?}", outcome.status),
        result: json_result(&outcome.result),
        weight: outcome.weight.value(),
        log_weight: json_number(outcome.weight.ln()),
        steps: outcome.steps,
    };
    serde_json::to_writer(&mut out, &report).map_err(io::Error::from)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

fn check(a: &CheckArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let reports = run_suite(a.cases, a.seed);
    for r in &reports {
        writeln!(out, "{r}")?;
    }
    let failed = reports.iter().filter(|r| !r.ok()).count();
    if failed > 0 {
        return Err(CliError::ChecksFailed(failed, reports.len()));
    }
    Ok(())
}
