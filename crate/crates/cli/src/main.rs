//! `pamine`: mine ranked API usage patterns from client call sequences.
//!
//! Exit codes: 0 success, 1 usage error, 2 input error, 3 internal
//! invariant violation.

use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;

use pamine::corpus::{parse_database, ParseOptions, SequenceDatabase, TokenTable};
use pamine::driver::{self, MiningConfig, MiningError};
use pamine::inference::{greedy_cover_cached, SequenceCache};
use pamine::learning::{LearningError, LearningState};
use pamine::output::{self, covering_dump, OutputFormat, OutputMetadata};
use pamine::patternfile::{self, CheckpointCounters};
use pamine::synth::{self, PlantedPattern, PlantingSpec, SynthConfig};

#[derive(Parser)]
#[command(
    name = "pamine",
    version,
    about = "Probabilistic API usage pattern miner"
)]
struct Cli {
    /// Log progress to stderr (repeat for more detail)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Mine ranked patterns from a sequence corpus
    Mine(MineArgs),
    /// Generate a synthetic corpus from planted patterns
    Generate(GenerateArgs),
    /// Re-rank the patterns stored in a checkpoint
    Rank(RankArgs),
    /// Show the inferred covering of one sequence under a checkpoint
    Inspect(InspectArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Tsv,
    Json,
}

impl From<Format> for OutputFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Tsv => OutputFormat::Tsv,
            Format::Json => OutputFormat::Json,
        }
    }
}

#[derive(Args)]
struct OutputArgs {
    /// Output file [default: stdout]
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "tsv")]
    format: Format,
    /// Emit only the N best patterns [default: all]
    #[arg(long, value_name = "N", value_parser = clap::value_parser!(u64).range(1..))]
    top_k: Option<u64>,
}

#[derive(Args)]
struct MineArgs {
    /// Corpus: one client sequence per line, or JSON lines {"id", "calls"}
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    out: OutputArgs,
    /// Recorded in the output metadata; mining itself is deterministic
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads for the E-steps
    #[arg(long, env = "PAMINE_THREADS", default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    threads: u64,
    /// Maximum number of candidate patterns to evaluate
    #[arg(long, default_value_t = 100_000, value_parser = clap::value_parser!(u64).range(1..))]
    max_candidates: u64,
    /// Stop after this many consecutive rejected candidates
    #[arg(long, default_value_t = 500, value_parser = clap::value_parser!(u64).range(1..))]
    rejection_streak: u64,
    /// EM iterations per refit
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    em_iters: u64,
    /// Relative log-likelihood change at which EM stops
    #[arg(long, default_value_t = 1e-6)]
    em_tol: f64,
    /// Drop client sequences with more calls than this
    #[arg(long, default_value_t = 10_000, value_parser = clap::value_parser!(u64).range(1..))]
    max_seq_len: u64,
    /// Wall-clock budget in seconds (makes results timing-dependent) [default: none]
    #[arg(long, value_name = "SECS")]
    time_limit: Option<f64>,
    /// Write a checkpoint here after every round
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Resume from a checkpoint written by an earlier run
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Write every sequence's final covering as JSON lines
    #[arg(long, value_name = "PATH")]
    dump_coverings: Option<PathBuf>,
}

#[derive(Args)]
struct GenerateArgs {
    /// Corpus output file
    #[arg(long)]
    output: PathBuf,
    /// Ground-truth file of planted patterns [default: <output>.planted]
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    sequences: usize,
    #[arg(long, default_value_t = 100)]
    vocab_size: usize,
    /// Number of random planted patterns (ignored with --planted-file)
    #[arg(long, default_value_t = 10)]
    planted: usize,
    /// Planted patterns in pattern-file format (support column ignored)
    #[arg(long)]
    planted_file: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    min_len: usize,
    #[arg(long, default_value_t = 4)]
    max_len: usize,
    #[arg(long, default_value_t = 0.3)]
    min_prob: f64,
    #[arg(long, default_value_t = 0.6)]
    max_prob: f64,
    /// First-occurrence probability of every vocabulary singleton
    #[arg(long, default_value_t = 0.02)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct RankArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Zero-based index of the sequence in the corpus
    #[arg(long)]
    sequence: usize,
    #[arg(long, default_value_t = 10_000)]
    max_seq_len: usize,
}

enum Failure {
    Usage(String),
    Input(String),
    Internal(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Input(_) => 2,
            Failure::Internal(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Input(m) | Failure::Internal(m) => m,
        }
    }
}

impl From<MiningError> for Failure {
    fn from(e: MiningError) -> Self {
        match e {
            MiningError::Config(m) => Failure::Usage(m),
            MiningError::Learning(e) => e.into(),
            e @ MiningError::ThreadPool(_) => Failure::Internal(e.to_string()),
        }
    }
}

impl From<LearningError> for Failure {
    fn from(e: LearningError) -> Self {
        match e {
            LearningError::EmptyDatabase => Failure::Input(e.to_string()),
            LearningError::Inference(_) => Failure::Internal(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).init();

    let result = match cli.command {
        Command::Mine(args) => mine(args),
        Command::Generate(args) => generate(args),
        Command::Rank(args) => rank(args),
        Command::Inspect(args) => inspect(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("pamine: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn load_database(path: &Path, max_len: usize) -> Result<SequenceDatabase, Failure> {
    let file = fs::File::open(path)
        .map_err(|e| Failure::Input(format!("cannot read {}: {e}", path.display())))?;
    let db = parse_database(
        BufReader::new(file),
        &ParseOptions {
            max_sequence_length: max_len,
        },
    )
    .map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    let stats = db.stats();
    log::info!(
        "{}: {} sequences kept, {} empty, {} malformed, {} too long",
        path.display(),
        stats.kept,
        stats.dropped_empty,
        stats.dropped_malformed,
        stats.dropped_too_long
    );
    if db.is_empty() {
        return Err(Failure::Input(format!(
            "{}: no client sequences found",
            path.display()
        )));
    }
    Ok(db)
}

fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path)
        .map_err(|e| Failure::Input(format!("cannot read {}: {e}", path.display())))
}

fn write_output(path: Option<&Path>, text: &str) -> Result<(), Failure> {
    match path {
        Some(p) => fs::write(p, text)
            .map_err(|e| Failure::Input(format!("cannot write {}: {e}", p.display()))),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| Failure::Input(format!("cannot write output: {e}"))),
    }
}

fn mine(args: MineArgs) -> Result<(), Failure> {
    let config = MiningConfig {
        top_k: args.out.top_k.map(|k| k as usize),
        seed: args.seed,
        threads: args.threads as usize,
        max_candidates: args.max_candidates as usize,
        rejection_streak: args.rejection_streak as usize,
        time_limit_secs: args.time_limit,
        em_iters: args.em_iters as usize,
        em_tol: args.em_tol,
        max_sequence_length: args.max_seq_len as usize,
        audit: false,
    };
    config.validate()?;
    let db = load_database(&args.input, config.max_sequence_length)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build()
        .map_err(|e| Failure::Internal(e.to_string()))?;
    let (state, resumed) = match &args.resume {
        Some(path) => {
            let text = read_text(path)?;
            let (pats, counters) = patternfile::read_checkpoint_known(&text, db.tokens())
                .map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
            (
                pool.install(|| LearningState::from_patterns(&db, pats))?,
                counters,
            )
        }
        None => (
            pool.install(|| LearningState::initialize(&db))?,
            CheckpointCounters::default(),
        ),
    };

    let mut checkpoint_error = None;
    let checkpoint_path = args.checkpoint.clone();
    let mut on_round = |state: &LearningState<'_>, stats: &driver::RunStats| {
        if let Some(path) = &checkpoint_path {
            let text =
                patternfile::write_checkpoint(state.patterns(), db.tokens(), &stats.counters());
            if let Err(e) = fs::write(path, text) {
                checkpoint_error.get_or_insert(format!("cannot write {}: {e}", path.display()));
            }
        }
    };
    let run = driver::run_from(state, &config, resumed, &mut on_round)?;
    if let Some(msg) = checkpoint_error {
        return Err(Failure::Input(msg));
    }
    if let Some(path) = &args.checkpoint {
        let text =
            patternfile::write_checkpoint(run.state.patterns(), db.tokens(), &run.stats.counters());
        fs::write(path, text)
            .map_err(|e| Failure::Input(format!("cannot write {}: {e}", path.display())))?;
    }

    let ranked = driver::rank(run.state.patterns(), db.tokens(), config.top_k);
    if ranked.iter().any(|r| r.pattern.len() < 2) {
        return Err(Failure::Internal(
            "singleton pattern in ranked output".into(),
        ));
    }
    let metadata = OutputMetadata {
        config: config.clone(),
        database: db.stats(),
        stats: run.stats,
        convergence: run.stats.convergence.to_string(),
    };
    log::info!(
        "{} after {} proposals ({} accepted), {:.2}s",
        metadata.convergence,
        run.stats.proposals,
        run.stats.accepted,
        run.stats.wall_time_secs
    );
    let text = output::emit(&ranked, args.out.format.into(), Some(&metadata));
    write_output(args.out.output.as_deref(), &text)?;

    if let Some(path) = &args.dump_coverings {
        let mut lines = String::new();
        for (i, seq) in db.sequences().iter().enumerate() {
            let dump = covering_dump(
                seq,
                run.state.covering(i),
                run.state.patterns(),
                db.tokens(),
            );
            lines.push_str(&serde_json::to_string(&dump).expect("serializable"));
            lines.push('\n');
        }
        write_output(Some(path), &lines)?;
    }
    Ok(())
}

fn generate(args: GenerateArgs) -> Result<(), Failure> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(args.seed);
    let planted = match &args.planted_file {
        Some(path) => {
            let mut tokens = TokenTable::new();
            let pats = patternfile::read_pattern_set(&read_text(path)?, &mut tokens)
                .map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
            pats.entries()
                .iter()
                .map(|e| PlantedPattern {
                    tokens: e
                        .pattern
                        .tokens()
                        .iter()
                        .map(|&t| tokens.name(t).to_owned())
                        .collect(),
                    probs: e.probs.clone(),
                })
                .collect()
        }
        None => {
            let spec = PlantingSpec {
                count: args.planted,
                min_len: args.min_len,
                max_len: args.max_len,
                min_prob: args.min_prob,
                max_prob: args.max_prob,
            };
            synth::random_planted(&spec, args.vocab_size, &mut rng)
                .map_err(|e| Failure::Usage(e.to_string()))?
        }
    };
    let config = SynthConfig {
        planted,
        vocab_size: args.vocab_size,
        noise: args.noise,
        n_sequences: args.sequences,
        seed: args.seed,
    };
    let out =
        synth::synth_generate_with(&config, &mut rng).map_err(|e| Failure::Usage(e.to_string()))?;
    let truth = args.truth.clone().unwrap_or_else(|| {
        let mut p = args.output.clone().into_os_string();
        p.push(".planted");
        PathBuf::from(p)
    });
    write_output(Some(&args.output), &out.corpus)?;
    write_output(Some(&truth), &out.truth)?;
    Ok(())
}

fn rank(args: RankArgs) -> Result<(), Failure> {
    let text = read_text(&args.checkpoint)?;
    let mut tokens = TokenTable::new();
    let (pats, _) = patternfile::read_checkpoint(&text, &mut tokens)
        .map_err(|e| Failure::Input(format!("{}: {e}", args.checkpoint.display())))?;
    let ranked = driver::rank(&pats, &tokens, args.out.top_k.map(|k| k as usize));
    write_output(
        args.out.output.as_deref(),
        &output::emit(&ranked, args.out.format.into(), None),
    )
}

fn inspect(args: InspectArgs) -> Result<(), Failure> {
    let db = load_database(&args.input, args.max_seq_len)?;
    let seq = db.sequences().get(args.sequence).ok_or_else(|| {
        Failure::Usage(format!(
            "sequence index {} out of range (corpus has {})",
            args.sequence,
            db.len()
        ))
    })?;
    let text = read_text(&args.checkpoint)?;
    let (pats, _) = patternfile::read_checkpoint_known(&text, db.tokens())
        .map_err(|e| Failure::Input(format!("{}: {e}", args.checkpoint.display())))?;
    let covering = greedy_cover_cached(&seq.tokens, &pats, &mut SequenceCache::new())
        .map_err(|e| Failure::Input(format!("{}: {e}", args.checkpoint.display())))?;
    let dump = covering_dump(seq, &covering, &pats, db.tokens());
    let mut s = serde_json::to_string_pretty(&dump).expect("serializable");
    s.push('\n');
    write_output(None, &s)
}
