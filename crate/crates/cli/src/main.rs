use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use replykit::corpus::{write_jsonl, RawMessage};
use replykit::pipeline::{self, Artifacts, PipelineConfig, PipelineError, ScorerKind};
use replykit::synthetic::{patterned_corpus, patterned_seeds};

#[derive(Parser)]
#[command(name = "replykit", version, about = "Short-reply suggestion pipeline")]
struct Cli {
    /// Pipeline configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides every random seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Recurrent,
    Katz,
}

#[derive(Subcommand)]
enum Command {
    /// Raw corpus and pairs to a vocabulary and preprocessed pairs.
    Ingest,
    /// Canonicalize, cluster, validate and tag the response set.
    BuildResponseSet,
    /// Train the response scorer on the training share of the pairs.
    TrainScorer {
        #[arg(long, value_enum)]
        kind: Option<Kind>,
    },
    /// Train the trigger classifier.
    TrainTrigger,
    /// Set the trigger threshold from held-out scores.
    CalibrateTrigger {
        /// Fraction of held-out messages that should trigger.
        #[arg(long)]
        target: Option<f64>,
    },
    /// Suggestions for one message file, or for JSON lines on stdin.
    Suggest {
        #[arg(long, conflicts_with = "stdin")]
        message_file: Option<PathBuf>,
        #[arg(long)]
        stdin: bool,
        /// Include per-stage timings in the output.
        #[arg(long)]
        timings: bool,
    },
    /// Full evaluation report: JSON on stdout, table on stderr.
    Eval,
    /// Beam match-rate curve and scorer step counts.
    BenchBeam {
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16")]
        beams: Vec<usize>,
    },
    /// Write a generated demo corpus, seeds and config into a directory.
    SynthCorpus {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 5000)]
        pairs: usize,
    },
}

enum Failure {
    Usage(String),
    Data(anyhow::Error),
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Config(m) => Failure::Usage(m),
            e => Failure::Data(e.into()),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Data(e)
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).context("serializing output")?;
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Failure::Data(e.into())),
        _ => Ok(()),
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, Failure> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Failure::Usage("--config is required for this command".into()))?;
    let mut c = PipelineConfig::load(path)?;
    if let Some(s) = cli.seed {
        c.set_seed(s);
    }
    Ok(c)
}

fn suggest(config: &PipelineConfig, file: Option<&Path>, stdin: bool, timings: bool) -> Result<(), Failure> {
    let art = Artifacts::load(config)?;
    let strip = |mut r: pipeline::PipelineResult| {
        if !timings {
            r.timings = None;
        }
        r
    };
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).with_context(|| path.display().to_string())?;
        let msg: RawMessage = serde_json::from_str(&text).with_context(|| format!("{}: bad message", path.display()))?;
        return print_json(&strip(pipeline::run_pipeline(&msg, &art)?));
    }
    if !stdin {
        return Err(Failure::Usage("suggest needs --message-file or --stdin".into()));
    }
    let mut msgs = Vec::new();
    for (n, line) in std::io::stdin().lock().lines().enumerate() {
        let line = line.context("reading stdin")?;
        if line.trim().is_empty() {
            continue;
        }
        let msg: RawMessage = serde_json::from_str(&line).with_context(|| format!("stdin line {}", n + 1))?;
        msgs.push(msg);
    }
    let mut out = std::io::stdout().lock();
    let mut failed = None;
    for (msg, r) in msgs.iter().zip(pipeline::run_batch(&msgs, &art)) {
        let line = match r {
            Ok(r) => serde_json::to_string(&strip(r)),
            Err(e) => {
                let line = serde_json::to_string(&serde_json::json!({"id": msg.id, "error": e.to_string()}));
                failed = Some(e);
                line
            }
        }
        .context("serializing output")?;
        match writeln!(out, "{line}") {
            Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => return Ok(()),
            r => r.context("writing stdout")?,
        }
    }
    match failed {
        Some(e) => Err(e.into()),
        None => Ok(()),
    }
}

fn synth(dir: &Path, n: usize, seed: u64) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).with_context(|| dir.display().to_string())?;
    let c = patterned_corpus(n, seed);
    write_jsonl(&dir.join("corpus.jsonl"), &c.messages).context("writing corpus")?;
    write_jsonl(&dir.join("pairs.jsonl"), &c.pairs).context("writing pairs")?;
    let seeds = serde_json::to_string_pretty(&patterned_seeds()).context("serializing seeds")?;
    std::fs::write(dir.join("seeds.json"), seeds).context("writing seeds")?;
    let mut config = PipelineConfig::default();
    config.set_seed(seed);
    config.ingest.max_vocab = 500;
    config.scorer.recurrent.epochs = 5;
    config.trigger.buckets = 1 << 12;
    config.trigger.hidden = vec![16, 8];
    let path = dir.join("config.toml");
    if !path.exists() {
        std::fs::write(&path, config.to_toml()).context("writing config")?;
    }
    eprintln!("wrote {} messages and {} pairs to {}", c.messages.len(), c.pairs.len(), dir.display());
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(w) = cli.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build_global()
            .map_err(|e| Failure::Usage(e.to_string()))?;
    }
    match &cli.command {
        Command::SynthCorpus { out_dir, pairs } => synth(out_dir, *pairs, cli.seed.unwrap_or(1)),
        Command::Ingest => {
            let out = pipeline::ingest_stage(&load_config(&cli)?)?;
            eprintln!("vocabulary: {} tokens", out.vocab.len());
            print_json(&out.stats)
        }
        Command::BuildResponseSet => print_json(&pipeline::build_response_set_stage(&load_config(&cli)?)?),
        Command::TrainScorer { kind } => {
            let config = load_config(&cli)?;
            let kind = match kind {
                Some(Kind::Recurrent) => ScorerKind::Recurrent,
                Some(Kind::Katz) => ScorerKind::Katz,
                None => config.scorer.kind,
            };
            print_json(&pipeline::train_scorer_stage(&config, kind)?)
        }
        Command::TrainTrigger => print_json(&pipeline::train_trigger_stage(&load_config(&cli)?)?),
        Command::CalibrateTrigger { target } => {
            let config = load_config(&cli)?;
            let target = target.unwrap_or(config.eval.target_trigger_rate);
            if !(0.0..=1.0).contains(&target) {
                return Err(Failure::Usage(format!("--target must lie in [0, 1], got {target}")));
            }
            print_json(&pipeline::calibrate_trigger_stage(&config, target)?)
        }
        Command::Suggest {
            message_file,
            stdin,
            timings,
        } => suggest(&load_config(&cli)?, message_file.as_deref(), *stdin, *timings),
        Command::Eval => {
            let report = pipeline::eval_stage(&load_config(&cli)?)?;
            eprint!("{}", report.table());
            print_json(&report)
        }
        Command::BenchBeam { beams } => {
            if beams.is_empty() || beams.contains(&0) {
                return Err(Failure::Usage("--beams needs sizes >= 1".into()));
            }
            print_json(&pipeline::bench_beam_stage(&load_config(&cli)?, beams)?)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            eprintln!("usage: replykit --config <FILE> <COMMAND>; see --help");
            ExitCode::from(1)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
