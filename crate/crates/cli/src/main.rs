//! `milbo` command-line tool.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use milbo::checkpoint::Checkpoint;
use milbo::config::{apply_overrides, resolve};
use milbo::gradcheck::grad_check;
use milbo::probe::{linear_probe, ProbeConfig};
use milbo::sweep::{rows_to_csv, run_sweep, SweepGrid};
use milbo::train::{
    embed, read_embeddings_csv, resume, train, write_embeddings_csv, TrainConfig, CHECKPOINT_FILE,
    LOG_FILE,
};
use milbo::{generate_sbm, load_graph, SbmSpec};

/// Environment variable holding the default worker thread count.
const THREADS_ENV: &str = "MILBO_THREADS";
const EMBEDDINGS_FILE: &str = "embeddings.csv";
const RESOLVED_CONFIG_FILE: &str = "config.resolved.json";

#[derive(Debug, Parser)]
#[command(name = "milbo", version, about = "Contrastive subset-sampling graph embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train an encoder and export embeddings of the full graph.
    Train(TrainArgs),
    /// Embed a graph with a checkpointed encoder.
    Embed(EmbedArgs),
    /// Linear-probe evaluation of an embeddings CSV.
    Eval(EvalArgs),
    /// Finite-difference check of the encoder gradients.
    Gradcheck(GradcheckArgs),
    /// Write a stochastic block model data directory.
    Synth(SynthArgs),
    /// Grid over lambda, p_h, p_a (and optionally k, l) with probe accuracy per cell.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// JSON config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set lambda=0.3`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    out: PathBuf,
    /// Continue from a checkpoint written by an earlier run with the same config.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EmbedArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Output CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    probe_config: Option<PathBuf>,
    /// Override a probe config key. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Report JSON; defaults to `eval_report.json` next to the embeddings.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Optional CSV of per-repeat accuracies.
    #[arg(long)]
    repeats_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    /// Data directory; defaults to a 10-node two-block SBM.
    #[arg(long)]
    data: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Optional JSON report.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// JSON SbmSpec.
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SweepArgs {
    /// JSON grid: {"lambda": [...], "p_h": [...], "p_a": [...], "k": [...], "l": [...], "seeds": [...]}.
    #[arg(long)]
    grid: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    probe_config: Option<PathBuf>,
    /// Output CSV, one row per cell.
    #[arg(long)]
    out: PathBuf,
    /// Concurrent cells; defaults to $MILBO_THREADS or 1.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Debug)]
struct CliError {
    category: &'static str,
    message: String,
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // Single line: error[<category>]: <message>
        write!(f, "error[{}]: {}", self.category, self.message.replace('\n', " "))
    }
}

impl From<milbo::Error> for CliError {
    fn from(e: milbo::Error) -> Self {
        Self {
            category: e.category(),
            message: e.to_string(),
        }
    }
}

impl CliError {
    fn io(path: &Path, e: std::io::Error) -> Self {
        Self {
            category: "io",
            message: format!("{}: {e}", path.display()),
        }
    }

    fn numeric(message: String) -> Self {
        Self {
            category: "numeric",
            message,
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help / --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let first = e.to_string();
            let first = first.lines().next().unwrap_or("invalid arguments");
            eprintln!("error[usage]: {}", first.trim_start_matches("error: "));
            return ExitCode::FAILURE;
        }
    };
    configure_threads();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::FAILURE
        }
    }
}

fn env_threads() -> Option<usize> {
    std::env::var(THREADS_ENV).ok()?.parse().ok().filter(|&n| n > 0)
}

fn configure_threads() {
    if let Some(n) = env_threads() {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn run(command: Command) -> CliResult<()> {
    match command {
        Command::Train(args) => cmd_train(args),
        Command::Embed(args) => cmd_embed(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
        Command::Synth(args) => cmd_synth(args),
        Command::Sweep(args) => cmd_sweep(args),
    }
}

fn echo_config<T: Serialize>(label: &str, value: &T) -> CliResult<String> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError {
        category: "config",
        message: e.to_string(),
    })?;
    println!("resolved {label}:\n{text}");
    Ok(text)
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn cmd_train(args: TrainArgs) -> CliResult<()> {
    let mut cfg: TrainConfig = resolve(args.config.config.as_deref(), &args.config.overrides)?;
    cfg.out_dir = Some(args.out.clone());
    let text = echo_config("train config", &cfg)?;

    let g = load_graph(&args.data)?;
    println!(
        "graph: {} nodes, {} edges, {} features",
        g.num_nodes(),
        g.num_edges(),
        g.num_features()
    );
    fs::create_dir_all(&args.out).map_err(|e| CliError::io(&args.out, e))?;
    write_text(&args.out.join(RESOLVED_CONFIG_FILE), &text)?;

    let outcome = match &args.resume {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            println!("resuming from epoch {}", ckpt.epoch);
            resume(&g, &cfg, &ckpt)?
        }
        None => train(&g, &cfg)?,
    };
    let every = (cfg.epochs / 10).max(1);
    for rec in &outcome.log {
        if rec.epoch % every == 0 || rec.epoch + 1 == cfg.epochs {
            println!(
                "epoch {:>5}  total {:.6}  l_cl {:.6}  l_cvc {:.6}  |P| {}  |N| {}",
                rec.epoch, rec.loss.total, rec.loss.l_cl, rec.loss.l_cvc, rec.positives, rec.negatives
            );
        }
    }

    let z = embed(&g, &outcome.params)?;
    let emb_path = args.out.join(EMBEDDINGS_FILE);
    write_embeddings_csv(&emb_path, &z.z)?;
    println!(
        "wrote {}, {}, {}",
        args.out.join(CHECKPOINT_FILE).display(),
        args.out.join(LOG_FILE).display(),
        emb_path.display()
    );
    Ok(())
}

fn cmd_embed(args: EmbedArgs) -> CliResult<()> {
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    echo_config("train config", &ckpt.config)?;
    let g = load_graph(&args.data)?;
    let z = embed(&g, &ckpt.params)?;
    write_embeddings_csv(&args.out, &z.z)?;
    println!(
        "embedded {} nodes into {} dims -> {}",
        z.z.nrows(),
        z.z.ncols(),
        args.out.display()
    );
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> CliResult<()> {
    let cfg: ProbeConfig = resolve(args.probe_config.as_deref(), &args.overrides)?;
    echo_config("probe config", &cfg)?;
    let g = load_graph(&args.data)?;
    let z = read_embeddings_csv(&args.embeddings)?;
    let report = linear_probe(z.view(), g.labels(), g.splits(), &cfg)?;
    println!(
        "accuracy {:.2}% ± {:.2}% over {} repeats (train {}, test {})",
        100.0 * report.mean,
        100.0 * report.std,
        report.accuracies.len(),
        report.train_size,
        report.test_size
    );

    let out = args.out.unwrap_or_else(|| {
        args.embeddings
            .parent()
            .unwrap_or(Path::new("."))
            .join("eval_report.json")
    });
    let json = serde_json::to_string_pretty(&report).map_err(|e| CliError {
        category: "io",
        message: e.to_string(),
    })?;
    write_text(&out, &json)?;
    if let Some(csv) = &args.repeats_csv {
        let mut text = String::from("repeat,accuracy\n");
        for (i, a) in report.accuracies.iter().enumerate() {
            text.push_str(&format!("{i},{a}\n"));
        }
        write_text(csv, &text)?;
    }
    println!("wrote {}", out.display());
    Ok(())
}

/// Defaults for a fast, complete check: narrow encoder, full combined loss.
fn gradcheck_defaults() -> TrainConfig {
    TrainConfig {
        d_hidden: 16,
        d_out: 16,
        lambda: 0.3,
        k: Some(5),
        l: Some(5),
        ..TrainConfig::default()
    }
}

fn gradcheck_fixture() -> SbmSpec {
    SbmSpec {
        blocks: vec![5, 5],
        p_in: 0.6,
        p_out: 0.1,
        feature_noise: 0.5,
        seed: 0,
    }
}

fn cmd_gradcheck(args: GradcheckArgs) -> CliResult<()> {
    let base = match &args.config.config {
        Some(path) => resolve::<TrainConfig>(Some(path), &[])?,
        None => gradcheck_defaults(),
    };
    let cfg = apply_overrides(base, &args.config.overrides)?;
    echo_config("gradcheck config", &cfg)?;
    let g = match &args.data {
        Some(dir) => load_graph(dir)?,
        None => generate_sbm(&gradcheck_fixture())?,
    };
    println!("graph: {} nodes, {} edges", g.num_nodes(), g.num_edges());
    let report = grad_check(&g, &cfg, args.seed)?;
    println!(
        "checked {} parameters, loss {:.6}, max relative error {:.3e} at {}[{}]",
        report.checked, report.loss, report.max_rel_error, report.worst_tensor, report.worst_index
    );
    println!(
        "{} (tolerance {:.0e})",
        if report.passed { "PASS" } else { "FAIL" },
        report.tolerance
    );
    if let Some(out) = &args.out {
        let json = serde_json::to_string_pretty(&report).map_err(|e| CliError {
            category: "io",
            message: e.to_string(),
        })?;
        write_text(out, &json)?;
    }
    if report.passed {
        Ok(())
    } else {
        Err(CliError::numeric(format!(
            "gradient check failed: max relative error {:.3e} > {:.0e}",
            report.max_rel_error, report.tolerance
        )))
    }
}

fn cmd_synth(args: SynthArgs) -> CliResult<()> {
    let spec: SbmSpec = resolve_required(&args.spec)?;
    echo_config("sbm spec", &spec)?;
    let g = generate_sbm(&spec)?;
    g.save(&args.out)?;
    println!(
        "wrote {} nodes, {} edges to {}",
        g.num_nodes(),
        g.num_edges(),
        args.out.display()
    );
    Ok(())
}

fn resolve_required<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError {
        category: "config",
        message: format!("{}: {e}", path.display()),
    })
}

fn cmd_sweep(args: SweepArgs) -> CliResult<()> {
    let base: TrainConfig = resolve(args.config.config.as_deref(), &args.config.overrides)?;
    let probe: ProbeConfig = resolve(args.probe_config.as_deref(), &[])?;
    let grid: SweepGrid = resolve_required(&args.grid)?;
    echo_config("base train config", &base)?;
    echo_config("probe config", &probe)?;
    echo_config("grid", &grid)?;
    let workers = args.workers.or_else(env_threads).unwrap_or(1);

    let g = load_graph(&args.data)?;
    let cells = grid.cells(&base).len();
    println!("sweeping {cells} cells with {workers} worker(s)");
    let rows = run_sweep(&g, &base, &probe, &grid, workers)?;
    for r in &rows {
        println!(
            "lambda {:<5} p_h {:<5} p_a {:<5} -> {:.2}% ± {:.2}%",
            r.cell.lambda,
            r.cell.p_h,
            r.cell.p_a,
            100.0 * r.mean,
            100.0 * r.std
        );
    }
    write_text(&args.out, &rows_to_csv(&rows))?;
    println!("wrote {}", args.out.display());
    Ok(())
}
