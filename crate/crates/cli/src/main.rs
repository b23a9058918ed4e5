//! `hiertpp` — train a hierarchical point-process model on benign activity
//! sessions and rank unseen sessions by how anomalous they look.
//!
//! Subcommands cover the whole pipeline: `synth` and `ingest` produce
//! session JSONL, `train` fits a model and saves a checkpoint, `score`
//! writes ranked fraud reports, `evaluate` runs train→score→ROC end to
//! end, and `grad-check` audits the analytic gradients. Configs are TOML;
//! flags override file values. Log verbosity follows `RUST_LOG`.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use hiertpp::error::{Error, Result};
use hiertpp::eval::{run_experiment, ExperimentConfig};
use hiertpp::ingest::cert::{parse_log_dir, parse_logs, CertConfig};
use hiertpp::ingest::cert::sessionize_streams;
use hiertpp::ingest::synth::SynthConfig;
use hiertpp::model::checkpoint;
use hiertpp::model::gradsuite::gradient_suites;
use hiertpp::model::score::{score_sessions, to_reports, ScoreConfig};
use hiertpp::model::train::{train, TrainConfig};
use hiertpp::scoring::{write_fraud_reports_csv, Alpha, SubScoreStats};
use hiertpp::sessions::{read_sessions_jsonl, write_sessions_jsonl, Label, Session};

#[derive(Parser)]
#[command(
    name = "hiertpp",
    version,
    about = "Session-based anomaly detection with a hierarchical point process"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labelled corpus (train/test JSONL + labels CSV)
    Synth(SynthArgs),
    /// Parse activity-log CSVs into session JSONL + labels CSV
    Ingest(IngestArgs),
    /// Train on benign sessions and save a checkpoint
    Train(TrainArgs),
    /// Score sessions with a trained checkpoint
    Score(ScoreArgs),
    /// Run the full pipeline and write a report directory with ROC curves
    Evaluate(EvaluateArgs),
    /// Compare analytic gradients of both losses against finite differences
    GradCheck(GradCheckArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// TOML file deserializing to the generator config
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory for train.jsonl, test.jsonl, labels.csv
    #[arg(long)]
    out: PathBuf,
    /// Override the config seed
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct IngestArgs {
    /// Log CSVs (logon/email/http/device/file), or one directory holding them
    #[arg(long, num_args = 1.., required = true)]
    logs: Vec<PathBuf>,
    /// Output session JSONL path
    #[arg(long)]
    out: PathBuf,
    /// Output labels CSV path (default: labels.csv next to --out)
    #[arg(long)]
    labels: Option<PathBuf>,
    /// TOML file with clock rules and the internal email domain
    #[arg(long)]
    config: Option<PathBuf>,
    /// File listing malicious user ids, one per line; listed users are
    /// labelled malicious and all others benign. Without it every session
    /// is labelled unknown.
    #[arg(long)]
    malicious: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Benign training sessions (JSONL)
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint output path
    #[arg(long)]
    out: PathBuf,
    /// TOML file deserializing to the training config
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the config seed
    #[arg(long)]
    seed: Option<u64>,
    /// Override the epoch count of both stages
    #[arg(long)]
    epochs: Option<usize>,
    /// Override the learning rate of both stages
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Also write the per-epoch loss curve to this CSV
    #[arg(long)]
    curve: Option<PathBuf>,
    /// Skip fitting benign score statistics into the checkpoint
    #[arg(long)]
    no_stats: bool,
}

#[derive(Args)]
struct ScoreArgs {
    /// Trained checkpoint
    #[arg(long)]
    model: PathBuf,
    /// Sessions to score (JSONL)
    #[arg(long)]
    data: PathBuf,
    /// Output fraud-report CSV
    #[arg(long)]
    out: PathBuf,
    /// TOML file with [score] and [alpha] tables
    #[arg(long)]
    config: Option<PathBuf>,
    /// Combine raw sub-scores instead of standardized ones
    #[arg(long)]
    raw: bool,
    /// Override the decode length cutoff
    #[arg(long)]
    max_decode_len: Option<usize>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// TOML file deserializing to the experiment config (data source,
    /// training, scoring, alpha weights)
    #[arg(long)]
    config: PathBuf,
    /// Report directory to create
    #[arg(long)]
    out: PathBuf,
    /// Override the training seed
    #[arg(long)]
    seed: Option<u64>,
    /// Combine raw sub-scores instead of standardized ones
    #[arg(long)]
    raw_scores: bool,
}

#[derive(Args)]
struct GradCheckArgs {
    /// First seed to check
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of consecutive seeds to check
    #[arg(long, default_value_t = 1)]
    count: u64,
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
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth(args) => run_synth(args),
        Command::Ingest(args) => run_ingest(args),
        Command::Train(args) => run_train(args),
        Command::Score(args) => run_score(args),
        Command::Evaluate(args) => run_evaluate(args),
        Command::GradCheck(args) => run_grad_check(args),
    }
}

fn load_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let as_parse_error = |message: String| Error::Parse {
        location: path.display().to_string(),
        message,
    };
    let text = std::fs::read_to_string(path).map_err(|e| as_parse_error(e.to_string()))?;
    toml::from_str(&text).map_err(|e| as_parse_error(e.to_string()))
}

fn load_toml_or_default<T: serde::de::DeserializeOwned + Default>(
    path: Option<&Path>,
) -> Result<T> {
    path.map_or_else(|| Ok(T::default()), load_toml)
}

fn echo_config<T: Serialize>(what: &str, cfg: &T) -> Result<String> {
    let text = toml::to_string_pretty(cfg)
        .map_err(|e| Error::Validation(format!("config is not representable as TOML: {e}")))?;
    log::info!("resolved {what} config:\n{}", text.trim_end());
    Ok(text)
}

fn run_synth(args: SynthArgs) -> Result<()> {
    let mut cfg: SynthConfig = load_toml_or_default(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    echo_config("synth", &cfg)?;
    let paths = cfg.generate_to_dir(&args.out)?;
    println!("wrote {}", paths.train.display());
    println!("wrote {}", paths.test.display());
    println!("wrote {}", paths.labels.display());
    Ok(())
}

fn run_ingest(args: IngestArgs) -> Result<()> {
    let cfg: CertConfig = load_toml_or_default(args.config.as_deref())?;
    echo_config("ingest", &cfg)?;

    let malicious: BTreeSet<String> = match &args.malicious {
        None => BTreeSet::new(),
        Some(path) => std::fs::read_to_string(path)?
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect(),
    };
    let label_known = args.malicious.is_some();
    let labeler = |user: &str| {
        if malicious.contains(user) {
            Label::Malicious
        } else if label_known {
            Label::Benign
        } else {
            Label::Unknown
        }
    };

    let (streams, parse_stats) = if args.logs.len() == 1 && args.logs[0].is_dir() {
        parse_log_dir(&args.logs[0], &cfg)?
    } else {
        parse_logs(&args.logs, &cfg)?
    };
    let (sessions, session_stats) = sessionize_streams(&streams, labeler)?;
    write_sessions_jsonl(&args.out, &sessions)?;

    let labels_path = args
        .labels
        .unwrap_or_else(|| args.out.parent().unwrap_or(Path::new(".")).join("labels.csv"));
    write_labels_csv(&labels_path, &sessions)?;

    println!(
        "parsed {} rows ({} skipped) into {} events for {} users",
        parse_stats.rows_read, parse_stats.rows_skipped, parse_stats.events, parse_stats.users
    );
    println!(
        "sessionized {} sessions ({} ill-formed, {} events dropped)",
        sessions.len(),
        sessions.iter().filter(|s| s.ill_formed).count(),
        session_stats.dropped_events
    );
    println!("wrote {}", args.out.display());
    println!("wrote {}", labels_path.display());
    Ok(())
}

fn write_labels_csv(path: &Path, sessions: &[Session]) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "user,k,label")?;
    for s in sessions {
        writeln!(out, "{},{},{}", s.user, s.k, s.label)?;
    }
    out.flush()?;
    Ok(())
}

fn run_train(args: TrainArgs) -> Result<()> {
    let mut cfg: TrainConfig = load_toml_or_default(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(epochs) = args.epochs {
        cfg.stage1.epochs = epochs;
        cfg.stage2.epochs = epochs;
    }
    if let Some(lr) = args.learning_rate {
        cfg.stage1.learning_rate = lr;
        cfg.stage2.learning_rate = lr;
    }
    echo_config("train", &cfg)?;

    let sessions = read_sessions_jsonl(&args.data)?;
    let output = train(&sessions, &cfg)?;

    let stats: Option<SubScoreStats> = if args.no_stats {
        None
    } else {
        let score_cfg = ScoreConfig { rules: cfg.rules, ..ScoreConfig::default() };
        let scored = score_sessions(&output.model, &sessions, &score_cfg)?;
        let raw: Vec<_> = scored.iter().map(|s| s.raw).collect();
        Some(SubScoreStats::fit(&raw)?)
    };
    checkpoint::save(&args.out, &output.model, stats.as_ref())?;

    if let Some(curve_path) = &args.curve {
        use std::io::Write;
        let mut out = std::io::BufWriter::new(std::fs::File::create(curve_path)?);
        writeln!(out, "stage,epoch,train_nll,holdout_nll")?;
        for p in &output.curve {
            let holdout = p.holdout_nll.map(|v| v.to_string()).unwrap_or_default();
            writeln!(out, "{},{},{},{}", p.stage, p.epoch, p.train_nll, holdout)?;
        }
        out.flush()?;
        println!("wrote {}", curve_path.display());
    }

    for stage in [1u8, 2] {
        if let Some(last) = output.curve.iter().filter(|p| p.stage == stage).next_back() {
            println!("stage {stage}: final train NLL {:.6}", last.train_nll);
        }
    }
    println!("wrote {}", args.out.display());
    Ok(())
}

#[derive(Default, Serialize, Deserialize)]
#[serde(default)]
struct ScoreFileConfig {
    score: ScoreConfig,
    alpha: Alpha,
}

fn run_score(args: ScoreArgs) -> Result<()> {
    let mut cfg: ScoreFileConfig = load_toml_or_default(args.config.as_deref())?;
    if let Some(cutoff) = args.max_decode_len {
        cfg.score.max_decode_len = cutoff;
    }
    echo_config("score", &cfg)?;

    let ckpt = checkpoint::load(&args.model)?;
    let sessions = read_sessions_jsonl(&args.data)?;
    let scored = score_sessions(&ckpt.model, &sessions, &cfg.score)?;

    let stats = if args.raw {
        None
    } else {
        Some(ckpt.benign_stats.as_ref().ok_or_else(|| {
            Error::Validation(
                "checkpoint carries no benign score statistics; \
                 train without --no-stats or score with --raw"
                    .into(),
            )
        })?)
    };
    let reports = to_reports(&scored, stats, cfg.alpha)?;
    write_fraud_reports_csv(&args.out, &reports)?;
    println!("scored {} sessions from {}", reports.len(), args.data.display());
    println!("wrote {}", args.out.display());
    Ok(())
}

fn run_evaluate(args: EvaluateArgs) -> Result<()> {
    let mut cfg: ExperimentConfig = load_toml(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.train.seed = seed;
    }
    cfg.raw_scores |= args.raw_scores;
    let echo = echo_config("experiment", &cfg)?;

    let outcome = run_experiment(&cfg, &args.out)?;
    std::fs::write(args.out.join("config.toml"), &echo)?;

    for (name, auc) in &outcome.aucs {
        println!("{name} AUC {auc:.4}");
    }
    println!("{} sessions scored", outcome.reports.len());
    println!("wrote {}", args.out.display());
    Ok(())
}

fn run_grad_check(args: GradCheckArgs) -> Result<()> {
    let mut failed = 0usize;
    for seed in args.seed..args.seed.saturating_add(args.count) {
        for outcome in gradient_suites(seed)? {
            let verdict = if outcome.report.passed() { "ok" } else { "FAIL" };
            println!(
                "seed {seed} {} loss: {} coords, max rel err {:.3e} — {verdict}",
                outcome.name, outcome.report.coords_checked, outcome.report.max_rel_err
            );
            for f in &outcome.report.failures {
                println!(
                    "  {}[{}]: analytic {:.6e}, numeric {:.6e}, rel err {:.3e}",
                    f.param, f.index, f.analytic, f.numeric, f.rel_err
                );
            }
            failed += usize::from(!outcome.report.passed());
        }
    }
    if failed > 0 {
        return Err(Error::Numeric(format!(
            "{failed} gradient suite(s) exceeded the 1e-4 relative tolerance"
        )));
    }
    Ok(())
}
