use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write as _};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use clap::{Args, Subcommand, ValueEnum};
use lvd_core::benchmark::{
    self, BenchmarkPrompt, DslGenerator, LlmGenerator, MutatorGenerator, OracleGenerator, PromptVerdict, TaskKind, VerdictReport,
};
use lvd_core::dsl;

use crate::commands::{completion_source, emit, create_dir, load_dsl, write};
use crate::config::FileConfig;
use crate::{Backend, Failure, LlmArgs};

#[derive(Subcommand)]
pub enum BenchCommand {
    /// Write the prompt suite as JSONL.
    Gen(GenArgs),
    /// Generate layouts for the suite and verify them.
    Run(RunArgs),
    /// Verify layout files saved by `bench run --save-dsl`.
    Verify(VerifyArgs),
    /// Summarize a verdict JSONL file.
    Report(ReportArgs),
}

/// Which prompts to use: a suite file, or the generated suite for `--seed`.
#[derive(Args)]
pub struct SuiteArgs {
    #[arg(long)]
    pub suite: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Keep only this task.
    #[arg(long, value_parser = parse_task)]
    pub task: Option<TaskKind>,
    /// Stratified subsample of this many prompts per task, drawn with `--seed`.
    #[arg(long)]
    pub per_task: Option<usize>,
}

#[derive(Args)]
pub struct GenArgs {
    #[command(flatten)]
    pub suite: SuiteArgs,
    /// Output file; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum BenchBackend {
    /// Layouts built from the ground truth.
    Oracle,
    /// Oracle layouts mutated to violate the prompt.
    Mutator,
    Live,
    Replay,
    Scripted,
}

#[derive(Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub suite: SuiteArgs,
    #[arg(long, value_enum, default_value = "oracle")]
    pub backend: BenchBackend,
    #[command(flatten)]
    pub llm: LlmArgs,
    #[arg(long, default_value_t = 1)]
    pub generations: u32,
    /// Worker threads; 0 picks the core count.
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
    /// Verdict JSONL.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also save each layout as `<index>_<sample>.json` here.
    #[arg(long)]
    pub save_dsl: Option<PathBuf>,
}

#[derive(Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub suite: SuiteArgs,
    #[arg(long)]
    pub dsl_dir: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub generations: u32,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub verdicts: PathBuf,
    /// CSV row instead of the table.
    #[arg(long)]
    pub csv: bool,
}

fn parse_task(s: &str) -> Result<TaskKind, String> {
    TaskKind::ALL.into_iter().find(|t| t.name() == s).ok_or_else(|| {
        let names: Vec<&str> = TaskKind::ALL.iter().map(|t| t.name()).collect();
        format!("unknown task {s:?}; expected one of {}", names.join(", "))
    })
}

fn bench_failure(e: benchmark::BenchError) -> Failure {
    Failure::new(1, "benchmark", e.to_string())
}

fn load_suite(a: &SuiteArgs) -> Result<Vec<BenchmarkPrompt>, Failure> {
    let mut suite = match &a.suite {
        Some(path) => {
            let f = File::open(path).map_err(|e| Failure::io(path, e))?;
            benchmark::read_suite(BufReader::new(f)).map_err(bench_failure)?
        }
        None => benchmark::generate_suite(a.seed),
    };
    if let Some(n) = a.per_task {
        suite = benchmark::stratified_subsample(&suite, n, a.seed);
    }
    if let Some(task) = a.task {
        suite.retain(|p| p.task == task);
    }
    Ok(suite)
}

fn layout_path(dir: &Path, index: usize, sample: u32) -> PathBuf {
    dir.join(format!("{index:03}_{sample}.json"))
}

fn finish(report: &VerdictReport, out: Option<&Path>) -> Result<(), Failure> {
    if let Some(path) = out {
        let f = File::create(path).map_err(|e| Failure::io(path, e))?;
        let mut w = BufWriter::new(f);
        report.write_jsonl(&mut w).and_then(|_| w.flush()).map_err(|e| Failure::io(path, e))?;
    }
    emit(&report.summary_table());
    Ok(())
}

pub fn run(cmd: BenchCommand, file: &FileConfig) -> Result<(), Failure> {
    match cmd {
        BenchCommand::Gen(a) => {
            let suite = load_suite(&a.suite)?;
            match &a.out {
                Some(path) => {
                    let f = File::create(path).map_err(|e| Failure::io(path, e))?;
                    let mut w = BufWriter::new(f);
                    benchmark::write_suite(&suite, &mut w).map_err(bench_failure)?;
                    w.flush().map_err(|e| Failure::io(path, e))
                }
                None => benchmark::write_suite(&suite, std::io::stdout().lock()).map_err(bench_failure),
            }
        }
        BenchCommand::Run(a) => {
            let suite = load_suite(&a.suite)?;
            let llm_backend = match a.backend {
                BenchBackend::Oracle | BenchBackend::Mutator => None,
                BenchBackend::Live => Some(Backend::Live),
                BenchBackend::Replay => Some(Backend::Replay),
                BenchBackend::Scripted => Some(Backend::Scripted),
            };
            let llm = match llm_backend {
                Some(b) => Some(completion_source(Some(b), &a.llm, file)?),
                None => None,
            };
            let llm_gen = llm.as_ref().map(|(source, config)| LlmGenerator { source: source.as_ref(), config: config.clone() });
            let generator: &dyn DslGenerator = match (a.backend, &llm_gen) {
                (BenchBackend::Oracle, _) => &OracleGenerator,
                (BenchBackend::Mutator, _) => &MutatorGenerator,
                (_, Some(g)) => g,
                (_, None) => unreachable!("llm backends build a generator"),
            };
            if let Some(dir) = &a.save_dsl {
                create_dir(dir)?;
            }
            let save_error: Mutex<Option<Failure>> = Mutex::new(None);
            let on_layout = |index: usize, sample: u32, layout: &dsl::DynamicSceneLayout| {
                if let Some(dir) = &a.save_dsl {
                    if let Err(e) = write(&layout_path(dir, index, sample), dsl::to_json(layout)) {
                        save_error.lock().expect("lock").get_or_insert(e);
                    }
                }
            };
            let report = benchmark::run_benchmark_with(&suite, generator, a.generations, a.jobs, &on_layout).map_err(bench_failure)?;
            if let Some(e) = save_error.into_inner().expect("lock") {
                return Err(e);
            }
            finish(&report, a.out.as_deref())
        }
        BenchCommand::Verify(a) => {
            let suite = load_suite(&a.suite)?;
            let mut verdicts = Vec::new();
            for (index, p) in suite.iter().enumerate() {
                for sample in 0..a.generations {
                    let path = layout_path(&a.dsl_dir, index, sample);
                    let (passed, reason) = if !path.exists() {
                        (false, "missing layout file".to_string())
                    } else {
                        match load_dsl(&path) {
                            Ok(layout) => {
                                let v = benchmark::verify(p, &layout).map_err(bench_failure)?;
                                (v.passed, v.reason)
                            }
                            Err(e) => (false, e.message),
                        }
                    };
                    verdicts.push(PromptVerdict { index, task: p.task, text: p.text.clone(), sample, passed, reason });
                }
            }
            finish(&VerdictReport::from_verdicts(verdicts), a.out.as_deref())
        }
        BenchCommand::Report(a) => {
            let f = File::open(&a.verdicts).map_err(|e| Failure::io(&a.verdicts, e))?;
            let mut verdicts = Vec::new();
            for (n, line) in BufReader::new(f).lines().enumerate() {
                let line = line.map_err(|e| Failure::io(&a.verdicts, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let v: PromptVerdict = serde_json::from_str(&line)
                    .map_err(|e| Failure::new(1, "verdicts", format!("{}:{}: {e}", a.verdicts.display(), n + 1)))?;
                verdicts.push(v);
            }
            let report = VerdictReport::from_verdicts(verdicts);
            if a.csv {
                emit(&report.summary_csv());
            } else {
                emit(&report.summary_table());
            }
            Ok(())
        }
    }
}
