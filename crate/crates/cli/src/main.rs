use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

mod bench;
mod commands;
mod config;

#[derive(Parser)]
#[command(name = "lvd", version, about = "Layout-guided video generation toolkit")]
struct Cli {
    /// Settings file (TOML). Defaults to ./lvd.toml when present.
    #[arg(long, global = true, env = "LVD_CONFIG")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ask a language model for a layout.
    GenDsl(GenDslArgs),
    /// Benchmark suite: generate, run, verify, report.
    #[command(subcommand)]
    Bench(bench::BenchCommand),
    /// Run layout guidance on the attention substrate.
    GuideSim(GuideSimArgs),
    /// Report layout problems.
    Validate(DslArg),
    /// Gravity, bounce and perspective checks per object.
    Physics(PhysicsArgs),
    /// Write per-frame and animated SVGs.
    Render(RenderArgs),
    /// Finite-difference check of the energy gradients.
    GradCheck(GradCheckArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Backend {
    Live,
    Replay,
    Scripted,
}

/// Completion backend selection shared by gen-dsl and bench run.
#[derive(Args, Clone)]
pub struct LlmArgs {
    #[arg(long, env = "LVD_MODEL")]
    pub model: Option<String>,
    #[arg(long, env = "LVD_ENDPOINT")]
    pub endpoint: Option<String>,
    /// Directory of recorded completions for the replay backend.
    #[arg(long, env = "LVD_REPLAY_DIR")]
    pub replay_dir: Option<PathBuf>,
    /// Response cache for the live backend.
    #[arg(long, env = "LVD_CACHE_DIR")]
    pub cache_dir: Option<PathBuf>,
    /// JSON array of completions for the scripted backend.
    #[arg(long)]
    pub script: Option<PathBuf>,
}

#[derive(Args)]
pub struct GenDslArgs {
    #[arg(long)]
    pub caption: String,
    #[arg(long, value_enum, env = "LVD_BACKEND")]
    pub backend: Option<Backend>,
    #[command(flatten)]
    pub llm: LlmArgs,
    /// Number of in-context examples.
    #[arg(long, default_value_t = 3, value_parser = parse_example_count)]
    pub examples: usize,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct DslArg {
    /// Layout file, JSON or the text grammar.
    #[arg(long)]
    pub dsl: PathBuf,
}

#[derive(Args)]
pub struct GuideSimArgs {
    #[arg(long)]
    pub dsl: PathBuf,
    /// Latent size, `N` or `HxW`.
    #[arg(long, default_value = "32")]
    pub hw: String,
    #[arg(long, default_value_t = 40)]
    pub steps: usize,
    #[arg(long, default_value_t = 10)]
    pub guided_steps: usize,
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
    #[arg(long, default_value_t = 5.0)]
    pub scale: f64,
    #[arg(long, default_value_t = 0.03)]
    pub com_weight: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Energy trace CSV.
    #[arg(long)]
    pub trace_out: Option<PathBuf>,
    /// Metrics JSON; stdout when omitted.
    #[arg(long)]
    pub metrics_out: Option<PathBuf>,
    /// Writes one attention PGM per frame and object here.
    #[arg(long)]
    pub pgm_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    pub pgm_scale: usize,
}

#[derive(Args)]
pub struct PhysicsArgs {
    #[arg(long)]
    pub dsl: PathBuf,
    /// Only this object.
    #[arg(long)]
    pub id: Option<u32>,
    /// Ground line for the box top edge; defaults to canvas height minus the last box height.
    #[arg(long)]
    pub ground_y: Option<f64>,
    /// Relative tolerance for the perspective check.
    #[arg(long, default_value_t = 0.0)]
    pub eps: f64,
}

#[derive(Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub dsl: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub no_ids: bool,
    #[arg(long)]
    pub no_names: bool,
    #[arg(long, default_value_t = 0)]
    pub palette_seed: u64,
}

#[derive(Args)]
pub struct GradCheckArgs {
    #[arg(long, default_value_t = 5)]
    pub seeds: u64,
    #[arg(long, default_value_t = 20)]
    pub instances: usize,
    #[arg(long, default_value_t = 16)]
    pub size: usize,
    #[arg(long, default_value_t = 1e-5)]
    pub h: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
}

fn parse_example_count(s: &str) -> Result<usize, String> {
    match s {
        "1" | "3" | "5" => Ok(s.parse().expect("digit")),
        _ => Err(format!("expected 1, 3 or 5, got {s:?}")),
    }
}

/// A failed command: exit code plus a short machine-readable kind.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub kind: String,
    pub message: String,
}

impl Failure {
    pub fn new(code: u8, kind: impl Into<String>, message: impl Into<String>) -> Self {
        Self { code, kind: kind.into(), message: message.into() }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Self::new(1, "io", format!("{}: {e}", path.display()))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = config::load(cli.config.as_deref()).and_then(|file| match cli.command {
        Command::GenDsl(a) => commands::gen_dsl(&a, &file),
        Command::Bench(c) => bench::run(c, &file),
        Command::GuideSim(a) => commands::guide_sim(&a),
        Command::Validate(a) => commands::validate(&a),
        Command::Physics(a) => commands::physics(&a),
        Command::Render(a) => commands::render(&a),
        Command::GradCheck(a) => commands::grad_check(&a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", json!({ "error": f.kind, "message": f.message }));
            ExitCode::from(f.code)
        }
    }
}
