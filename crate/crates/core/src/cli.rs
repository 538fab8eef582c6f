//! The `reba` command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 format error, 3 validation or
//! numeric error, 4 I/O error.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use crate::embed::{self, EchoMeanMode, EmbedOptions, EmbedRequest, Method, Pool, Weighting};
use crate::error::RebaError;
use crate::eval::{self, Distance, EvalConfig};
use crate::fusion::{self, FusionStrategy};
use crate::tensor_io::{read_bundle_file, write_bundle_file};
use crate::toy::{init_model, ToyModelSpec};
use crate::vector_file::{embedding_to_json, write_embedding_raw};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_FORMAT: i32 = 2;
pub const EXIT_VALIDATION: i32 = 3;
pub const EXIT_IO: i32 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "reba",
    version,
    about = "Repetition + backward-attention embeddings for causal language models"
)]
struct Cli {
    /// Suppress human-readable progress on stderr.
    #[arg(long, global = true)]
    quiet: bool,
    /// Print a single machine-readable JSON document on stdout.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the built-in toy transformer and write a .reba bundle.
    Toygen(ToygenArgs),
    /// Fuse a bundle's attention stack into one symmetric matrix.
    Fuse(FuseArgs),
    /// Compute a ReBA, Echo or Classical embedding from a bundle.
    Embed(EmbedArgs),
    /// Evaluation protocols.
    #[command(subcommand)]
    Eval(EvalCommand),
}

#[derive(Debug, Args)]
struct ToygenArgs {
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[arg(long, default_value_t = 2)]
    heads: usize,
    #[arg(long, default_value_t = 16)]
    dim: usize,
    #[arg(long, default_value_t = 32)]
    vocab: usize,
    /// Positional table size; defaults to max(256, repeated length).
    #[arg(long)]
    max_pos: Option<usize>,
    /// Whitespace-separated token ids of the base sequence.
    #[arg(long)]
    tokens: String,
    #[arg(long, default_value_t = 1)]
    repeat: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct FuseArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value = "max-all")]
    strategy: FusionStrategy,
    /// Raw dump: two u32 LE (m, m) then row-major f32 LE.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EmbedArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    method: Method,
    #[arg(long)]
    pool: Pool,
    /// 1-based token position in the base sequence (word pooling only).
    #[arg(long)]
    token_index: Option<usize>,
    #[arg(long, default_value = "last-occurrence")]
    echo_mean_mode: EchoMeanMode,
    #[arg(long, default_value = "max-all")]
    strategy: FusionStrategy,
    /// Rescale each token's backward weights to sum to one.
    #[arg(long)]
    normalize: bool,
    /// Embedding JSON; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Additional raw f32 LE dump of the values.
    #[arg(long)]
    raw_out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum EvalCommand {
    /// Four-choice polysemy evaluation over a JSON-lines manifest.
    FourChoice(FourChoiceArgs),
    /// Pearson correlation of embedding-pair cosine similarities with gold scores.
    Pearson(PearsonArgs),
}

#[derive(Debug, Args)]
struct FourChoiceArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    method: Method,
    #[arg(long, default_value = "word")]
    pool: Pool,
    #[arg(long)]
    distance: Distance,
    #[arg(long, default_value = "max-all")]
    strategy: FusionStrategy,
    #[arg(long, default_value = "last-occurrence")]
    echo_mean_mode: EchoMeanMode,
    #[arg(long)]
    normalize: bool,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PearsonArgs {
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Engine(RebaError),
}

impl From<RebaError> for CliError {
    fn from(err: RebaError) -> Self {
        CliError::Engine(err)
    }
}

impl From<std::io::Error> for CliError {
    fn from(err: std::io::Error) -> Self {
        CliError::Engine(RebaError::Io(err))
    }
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Engine(RebaError::Format(_)) => EXIT_FORMAT,
            CliError::Engine(RebaError::Io(_)) => EXIT_IO,
            CliError::Engine(_) => EXIT_VALIDATION,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Engine(RebaError::Format(_)) => "format",
            CliError::Engine(RebaError::Io(_)) => "io",
            CliError::Engine(RebaError::Validation(_)) => "validation",
            CliError::Engine(_) => "numeric",
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Usage(m) => m.clone(),
            CliError::Engine(e) => e.to_string(),
        }
    }
}

type CliResult = Result<(Value, Option<String>), CliError>;

fn parse_tokens(text: &str) -> Result<Vec<u32>, CliError> {
    let tokens = text
        .split_whitespace()
        .map(|t| {
            t.parse::<u32>()
                .map_err(|_| CliError::Usage(format!("invalid token id {t:?}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if tokens.is_empty() {
        return Err(CliError::Usage("--tokens must list at least one id".into()));
    }
    Ok(tokens)
}

fn parent_dir(path: &Path) -> &Path {
    path.parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."))
}

fn toygen(args: &ToygenArgs) -> CliResult {
    let tokens = parse_tokens(&args.tokens)?;
    if args.repeat == 0 {
        return Err(CliError::Usage("--repeat must be at least 1".into()));
    }
    let length = tokens.len() * args.repeat;
    let spec = ToyModelSpec {
        vocab: args.vocab,
        dim: args.dim,
        heads: args.heads,
        layers: args.layers,
        max_pos: args.max_pos.unwrap_or(length.max(256)),
        seed: args.seed,
    };
    let bundle = init_model(spec)?.generate_bundle(&tokens, args.repeat)?;
    let bytes = write_bundle_file(&bundle, &args.out)?;
    let h = &bundle.header;
    let summary = json!({
        "command": "toygen",
        "out": args.out,
        "bytes": bytes,
        "layers": h.layers,
        "heads": h.heads,
        "seq_len": h.seq_len,
        "hidden": h.hidden,
        "base_len": h.base_len,
        "repetitions": h.repetitions,
    });
    let note = format!("wrote {} ({bytes} bytes, m = {})", args.out.display(), h.seq_len);
    Ok((summary, Some(note)))
}

fn fuse(args: &FuseArgs) -> CliResult {
    let bundle = read_bundle_file(&args.input)?;
    let fused = fusion::fuse(&bundle.attentions, args.strategy)?;
    let mut summary = json!({
        "command": "fuse",
        "in": args.input,
        "strategy": args.strategy,
        "size": fused.size(),
        "min": fused.as_slice().iter().copied().fold(f32::INFINITY, f32::min),
        "max": fused.as_slice().iter().copied().fold(f32::NEG_INFINITY, f32::max),
    });
    let note = if let Some(out) = &args.out {
        let mut sink = BufWriter::new(File::create(out)?);
        let bytes = fused.write_raw(&mut sink)?;
        sink.flush()?;
        summary["out"] = json!(out);
        summary["bytes"] = json!(bytes);
        format!("wrote {m}x{m} fused matrix to {}", out.display(), m = fused.size())
    } else {
        format!("fused {m}x{m} matrix ({})", args.strategy, m = fused.size())
    };
    Ok((summary, Some(note)))
}

fn embed_cmd(args: &EmbedArgs, json_mode: bool, stdout: &mut dyn Write) -> CliResult {
    match (args.pool, args.token_index) {
        (Pool::Word, None) => return Err(CliError::Usage("--pool word requires --token-index".into())),
        (Pool::Last | Pool::Mean, Some(_)) => {
            return Err(CliError::Usage("--token-index is only valid with --pool word".into()))
        }
        _ => {}
    }
    let bundle = read_bundle_file(&args.input)?;
    let request = EmbedRequest::for_bundle(&bundle, args.method, args.pool, args.token_index)?;
    let options = EmbedOptions {
        strategy: args.strategy,
        echo_mean_mode: args.echo_mean_mode,
        weighting: if args.normalize {
            Weighting::Normalized
        } else {
            Weighting::Raw
        },
    };
    let embedding = embed::embed(&bundle, &request, &options)?;
    let text = embedding_to_json(&embedding)?;

    let mut summary = json!({
        "command": "embed",
        "method": embedding.method,
        "pool": embedding.pool,
        "k": embedding.k,
        "token_index": embedding.token_index,
        "dim": embedding.dim(),
        "degenerate": embedding.degenerate,
    });
    if let Some(out) = &args.out {
        fs::write(out, format!("{text}\n"))?;
        summary["out"] = json!(out);
    } else if json_mode {
        summary["embedding"] = serde_json::from_str(&text).map_err(RebaError::from)?;
    } else {
        writeln!(stdout, "{text}")?;
    }
    if let Some(raw) = &args.raw_out {
        write_embedding_raw(&embedding, BufWriter::new(File::create(raw)?))?;
        summary["raw_out"] = json!(raw);
    }
    let note = format!(
        "{}-{} {} embedding, dim {}{}",
        embedding.method,
        embedding.k,
        embedding.pool,
        embedding.dim(),
        if embedding.degenerate {
            " (degenerate: all backward weights zero)"
        } else {
            ""
        }
    );
    Ok((summary, Some(note)))
}

fn write_report<T: serde::Serialize>(
    report: &T,
    path: Option<&PathBuf>,
    json_mode: bool,
    stdout: &mut dyn Write,
) -> Result<Option<Value>, CliError> {
    let text = serde_json::to_string_pretty(report).map_err(RebaError::from)?;
    match path {
        Some(p) => {
            fs::write(p, format!("{text}\n"))?;
            Ok(None)
        }
        None if json_mode => Ok(Some(serde_json::to_value(report).map_err(RebaError::from)?)),
        None => {
            writeln!(stdout, "{text}")?;
            Ok(None)
        }
    }
}

fn four_choice(args: &FourChoiceArgs, json_mode: bool, stdout: &mut dyn Write) -> CliResult {
    let manifest = eval::read_manifest(&args.manifest)?;
    let config = EvalConfig {
        method: args.method,
        pool: args.pool,
        distance: args.distance,
        strategy: args.strategy,
        echo_mean_mode: args.echo_mean_mode,
        normalize: args.normalize,
    };
    let report = eval::run_four_choice_eval(&manifest, parent_dir(&args.manifest), &config)?;
    let mut summary = json!({
        "command": "eval four-choice",
        "total": report.total,
        "correct": report.correct,
        "accuracy": report.accuracy,
        "degenerate_options": report.questions.iter().flat_map(|q| q.degenerate).filter(|&d| d).count(),
    });
    if let Some(p) = &args.report {
        summary["report"] = json!(p);
    }
    if let Some(inline) = write_report(&report, args.report.as_ref(), json_mode, stdout)? {
        summary["report"] = inline;
    }
    let note = format!("accuracy {}/{} = {:.4}", report.correct, report.total, report.accuracy);
    Ok((summary, Some(note)))
}

fn pearson_cmd(args: &PearsonArgs, json_mode: bool, stdout: &mut dyn Write) -> CliResult {
    let pairs = eval::parse_pairs(&fs::read_to_string(&args.pairs)?)?;
    let report = eval::run_pearson_eval(&pairs, parent_dir(&args.pairs))?;
    let mut summary = json!({
        "command": "eval pearson",
        "count": report.count,
        "pearson": report.pearson,
    });
    if let Some(p) = &args.report {
        summary["report"] = json!(p);
    }
    if let Some(inline) = write_report(&report, args.report.as_ref(), json_mode, stdout)? {
        summary["report"] = inline;
    }
    let note = format!("pearson r = {:.6} over {} pairs", report.pearson, report.count);
    Ok((summary, Some(note)))
}

/// Runs the CLI with explicit output streams and returns the exit code.
pub fn run_cli_with<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(err) => {
            use clap::error::ErrorKind;
            if matches!(err.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(stdout, "{err}");
                return EXIT_OK;
            }
            if argv.iter().any(|a| a == "--json") {
                let doc = json!({"status": "error", "exit_code": EXIT_USAGE, "kind": "usage", "message": err.to_string().trim()});
                let _ = writeln!(stdout, "{doc}");
            }
            let _ = write!(stderr, "{err}");
            return EXIT_USAGE;
        }
    };

    let result = match &cli.command {
        Command::Toygen(args) => toygen(args),
        Command::Fuse(args) => fuse(args),
        Command::Embed(args) => embed_cmd(args, cli.json, stdout),
        Command::Eval(EvalCommand::FourChoice(args)) => four_choice(args, cli.json, stdout),
        Command::Eval(EvalCommand::Pearson(args)) => pearson_cmd(args, cli.json, stdout),
    };

    match result {
        Ok((summary, note)) => {
            if cli.json {
                let mut doc = json!({"status": "ok"});
                if let (Value::Object(d), Value::Object(s)) = (&mut doc, summary) {
                    d.extend(s);
                }
                let _ = writeln!(stdout, "{doc}");
            }
            if let (false, Some(note)) = (cli.quiet, note) {
                let _ = writeln!(stderr, "{note}");
            }
            EXIT_OK
        }
        Err(err) => {
            let code = err.exit_code();
            if cli.json {
                let doc = json!({"status": "error", "exit_code": code, "kind": err.kind(), "message": err.message()});
                let _ = writeln!(stdout, "{doc}");
            }
            let _ = writeln!(stderr, "reba: {}", err.message());
            code
        }
    }
}

pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_cli_with(argv, &mut stdout.lock(), &mut stderr.lock())
}
