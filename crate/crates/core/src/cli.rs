//! Command-line front end.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::constraint::{self, extract_constraints, ExtractOptions};
use crate::corpus::{load_corpus, training_examples};
use crate::eval::{aggregate, score_snippet};
use crate::kb::{load_kb, KnowledgeBase};
use crate::orchestrator::{run, run_engine, trace_to_jsonl, Engine, EngineOrder, RunConfig};
use crate::snippet::{identify_api_elements, tokenize, IdentifyOptions, Snippet};
use crate::stat::{train, CooccurrenceModel, ExternalPredictor, Predictor};

#[derive(Debug, Parser)]
#[command(
    name = "jtyper",
    version,
    about = "Infer fully qualified types in incomplete Java snippets"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a knowledge-base file and write it in canonical form.
    KbBuild {
        input: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Summarize a knowledge base, or list the candidates for a simple name.
    KbInspect {
        #[arg(long, env = "JTYPER_KB")]
        kb: PathBuf,
        #[arg(long)]
        name: Option<String>,
    },
    /// Fit a co-occurrence model on a labelled corpus directory.
    Train {
        corpus: PathBuf,
        #[arg(long, env = "JTYPER_KB")]
        kb: Option<PathBuf>,
        #[arg(long, default_value_t = 2)]
        eta: u32,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long)]
        include_string: bool,
    },
    /// Infer types for one snippet.
    Infer {
        snippet: PathBuf,
        #[command(flatten)]
        opts: InferArgs,
        /// Also write the per-round trace as JSON lines.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Score a labelled corpus directory.
    Eval {
        corpus: PathBuf,
        #[command(flatten)]
        opts: InferArgs,
        /// Write the JSON-lines report here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Print the extracted constraints and the per-round trace for one snippet.
    Trace {
        snippet: PathBuf,
        #[command(flatten)]
        opts: InferArgs,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Order {
    Cs,
    Sc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

impl Switch {
    fn on(self) -> bool {
        self == Switch::On
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EngineArg {
    Combined,
    Constraint,
    Stat,
}

#[derive(Debug, Clone, Args)]
pub struct InferArgs {
    #[arg(long, env = "JTYPER_KB")]
    pub kb: PathBuf,
    /// Trained co-occurrence model.
    #[arg(long, conflicts_with = "predictor_cmd")]
    pub model: Option<PathBuf>,
    /// Shell command speaking the JSON-lines predictor protocol.
    #[arg(long)]
    pub predictor_cmd: Option<String>,
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    #[arg(long, default_value_t = 10)]
    pub delta: usize,
    #[arg(long, value_enum, default_value_t = Order::Cs)]
    pub order: Order,
    #[arg(long, value_enum, default_value_t = Switch::Off)]
    pub cascaded_calls: Switch,
    #[arg(long, value_enum, default_value_t = Switch::On)]
    pub strict_body_check: Switch,
    #[arg(long, value_enum, default_value_t = Switch::On)]
    pub strict_uniqueness: Switch,
    /// Context window radius in lines; defaults to the predictor's own.
    #[arg(long)]
    pub eta: Option<u32>,
    /// Treat `String` as an API element.
    #[arg(long)]
    pub include_string: bool,
    #[arg(long, value_enum, default_value_t = EngineArg::Combined)]
    pub engine: EngineArg,
}

impl InferArgs {
    pub fn config(&self) -> RunConfig {
        RunConfig {
            k: self.k,
            delta: self.delta,
            order: match self.order {
                Order::Cs => EngineOrder::ConstraintFirst,
                Order::Sc => EngineOrder::StatFirst,
            },
            extract_options: ExtractOptions {
                cascaded_calls: self.cascaded_calls.on(),
                strict_body_check: self.strict_body_check.on(),
                strict_uniqueness: self.strict_uniqueness.on(),
            },
            identify_options: IdentifyOptions {
                exclude_string: !self.include_string,
            },
            eta: self.eta,
        }
    }

    fn engine(&self) -> Engine {
        match self.engine {
            EngineArg::Combined => Engine::Combined,
            EngineArg::Constraint => Engine::ConstraintOnly,
            EngineArg::Stat => Engine::StatOnly,
        }
    }
}

struct Failure(String);

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure(e.to_string())
    }
}

type CliResult = Result<(), Failure>;

fn read_snippet(path: &Path) -> Result<Snippet, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure(format!("{}: {e}", path.display())))?;
    Ok(tokenize(&text))
}

fn load_predictor(opts: &InferArgs) -> Result<Box<dyn Predictor>, Failure> {
    match (&opts.model, &opts.predictor_cmd) {
        (Some(path), _) => Ok(Box::new(CooccurrenceModel::load(path)?)),
        (None, Some(cmd)) => Ok(Box::new(ExternalPredictor::spawn(cmd, opts.eta.unwrap_or(2))?)),
        (None, None) if opts.engine == EngineArg::Constraint => Ok(Box::new(CooccurrenceModel::default())),
        (None, None) => Err(Failure("one of --model or --predictor-cmd is required".into())),
    }
}

fn kb_build(input: &Path, output: Option<&Path>, out: &mut dyn Write, err: &mut dyn Write) -> CliResult {
    let kb = load_kb(input)?;
    if kb.is_empty() {
        writeln!(err, "warning: knowledge base is empty")?;
    }
    if let Some(path) = output {
        std::fs::write(path, kb.to_text()).map_err(|e| Failure(format!("{}: {e}", path.display())))?;
    }
    writeln!(out, "{} types, {} methods", kb.len(), kb.method_count())?;
    Ok(())
}

fn kb_inspect(kb: &KnowledgeBase, name: Option<&str>, out: &mut dyn Write) -> CliResult {
    match name {
        Some(name) => {
            for fqn in crate::kb::candidates_for(kb, name) {
                let e = kb.get(fqn).expect("indexed");
                writeln!(out, "{fqn}\t{}\t{}", e.kind.as_str(), e.library)?;
            }
        }
        None => {
            writeln!(
                out,
                "{} types, {} methods, {} fields, {} supertype edges",
                kb.len(),
                kb.method_count(),
                kb.field_count(),
                kb.edge_count()
            )?;
            let mut libs: BTreeMap<&str, usize> = BTreeMap::new();
            for e in kb.entries() {
                *libs.entry(e.library.as_str()).or_insert(0) += 1;
            }
            for (lib, n) in libs {
                writeln!(out, "{lib}\t{n}")?;
            }
        }
    }
    Ok(())
}

fn train_cmd(
    corpus: &Path,
    kb: Option<&Path>,
    eta: u32,
    output: &Path,
    include_string: bool,
    out: &mut dyn Write,
) -> CliResult {
    let kb = kb.map(load_kb).transpose()?;
    let empty = KnowledgeBase::default();
    let entries = load_corpus(corpus, kb.as_ref().unwrap_or(&empty))?;
    if entries.is_empty() {
        return Err(Failure(format!("{}: no snippets", corpus.display())));
    }
    let options = IdentifyOptions {
        exclude_string: !include_string,
    };
    let examples = training_examples(&entries, kb.as_ref(), &options)?;
    let model = train(&examples, eta);
    std::fs::write(output, model.to_text()).map_err(|e| Failure(format!("{}: {e}", output.display())))?;
    writeln!(
        out,
        "{} snippets, {} types, {} context tokens",
        entries.len(),
        model.known_types().count(),
        model.vocabulary_size()
    )?;
    Ok(())
}

fn infer_cmd(path: &Path, opts: &InferArgs, trace: Option<&Path>, out: &mut dyn Write) -> CliResult {
    let kb = load_kb(&opts.kb)?;
    let predictor = load_predictor(opts)?;
    let snippet = read_snippet(path)?;
    let config = opts.config();
    let combined = if opts.engine == EngineArg::Combined {
        let output = run(&snippet, &kb, predictor.as_ref(), &config)?;
        if let Some(trace_path) = trace {
            std::fs::write(trace_path, trace_to_jsonl(&output.elements, &output.trace))
                .map_err(|e| Failure(format!("{}: {e}", trace_path.display())))?;
        }
        output.combined
    } else {
        run_engine(opts.engine(), &snippet, &kb, predictor.as_ref(), &config)?
    };
    for (e, o) in &combined.per_element {
        writeln!(
            out,
            "{}\t{}\t{}",
            e.key(),
            o.final_fqn.as_deref().unwrap_or("-"),
            o.source.as_str()
        )?;
    }
    Ok(())
}

fn eval_cmd(corpus: &Path, opts: &InferArgs, report: Option<&Path>, out: &mut dyn Write) -> CliResult {
    let kb = load_kb(&opts.kb)?;
    let entries = load_corpus(corpus, &kb)?;
    if entries.is_empty() {
        return Err(Failure(format!("{}: no snippets", corpus.display())));
    }
    let predictor = load_predictor(opts)?;
    let config = opts.config();
    let mut scores = BTreeMap::new();
    let mut libraries = BTreeMap::new();
    for entry in &entries {
        let combined = run_engine(opts.engine(), &entry.snippet, &kb, predictor.as_ref(), &config)?;
        scores.insert(
            entry.id.clone(),
            score_snippet(&combined.answers(), &entry.truth, true)?,
        );
        libraries.insert(entry.id.clone(), entry.truth.library.clone());
    }
    let report_data = aggregate(&scores, &libraries)?;
    write!(out, "{}", report_data.to_table())?;
    if let Some(path) = report {
        std::fs::write(path, report_data.to_jsonl()).map_err(|e| Failure(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

fn trace_cmd(path: &Path, opts: &InferArgs, out: &mut dyn Write) -> CliResult {
    let kb = load_kb(&opts.kb)?;
    let predictor = load_predictor(opts)?;
    let snippet = read_snippet(path)?;
    let config = opts.config();
    let elements = identify_api_elements(&snippet, Some(&kb), &config.identify_options);
    let (constraints, coverage) = extract_constraints(&snippet, &elements, &config.extract_options);
    for (start, end) in coverage.line_ranges(&snippet) {
        writeln!(out, "# covered lines {start}-{end}")?;
    }
    for c in &constraints {
        writeln!(out, "# {}", c.describe(&elements, &constraints))?;
    }
    let domains = constraint::candidate_domains(&kb, &elements, &constraints, &coverage);
    for (e, domain) in elements.iter().zip(&domains) {
        if coverage.covers(e.token_index) {
            writeln!(out, "# domain {}: {}", e.key(), domain.join(" "))?;
        }
    }
    let output = run(&snippet, &kb, predictor.as_ref(), &config)?;
    write!(out, "{}", trace_to_jsonl(&output.elements, &output.trace))?;
    Ok(())
}

fn dispatch(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> CliResult {
    match cli.command {
        Command::KbBuild { input, output } => kb_build(&input, output.as_deref(), out, err),
        Command::KbInspect { kb, name } => kb_inspect(&load_kb(&kb)?, name.as_deref(), out),
        Command::Train {
            corpus,
            kb,
            eta,
            output,
            include_string,
        } => train_cmd(&corpus, kb.as_deref(), eta, &output, include_string, out),
        Command::Infer { snippet, opts, trace } => infer_cmd(&snippet, &opts, trace.as_deref(), out),
        Command::Eval { corpus, opts, report } => eval_cmd(&corpus, &opts, report.as_deref(), out),
        Command::Trace { snippet, opts } => trace_cmd(&snippet, &opts, out),
    }
}

/// Remembers whether the reader of stdout went away, so a closed pipe
/// ends the run quietly.
struct PipeWatch<'a> {
    inner: &'a mut dyn Write,
    closed: bool,
}

impl Write for PipeWatch<'_> {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        let r = self.inner.write(buf);
        self.closed |= matches!(&r, Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe);
        r
    }

    fn flush(&mut self) -> std::io::Result<()> {
        let r = self.inner.flush();
        self.closed |= matches!(&r, Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe);
        r
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run_cli<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = write!(err, "{}", e.render());
            return code;
        }
    };
    let mut out = PipeWatch {
        inner: out,
        closed: false,
    };
    match dispatch(cli, &mut out, err) {
        Ok(()) => 0,
        Err(_) if out.closed => 0,
        Err(Failure(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            1
        }
    }
}
