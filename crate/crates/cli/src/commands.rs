use std::io::Write as _;
use std::path::{Path, PathBuf};

use lvd_core::dsl::{self, DynamicSceneLayout};
use lvd_core::energy::EnergyConfig;
use lvd_core::gradcheck;
use lvd_core::guidance::{self, GuidanceError, GuidanceSchedule, GuidanceSetup, SubstrateConfig};
use lvd_core::llm::{self, CompletionSource, LlmConfig, LlmError, Live, Replay, Scripted};
use lvd_core::physics::{self, PhysicsVerdict};
use lvd_core::prompting::{InContextExample, PromptBundle};
use lvd_core::render::{self, SvgOptions};
use serde_json::json;

use crate::config::FileConfig;
use crate::{Backend, DslArg, Failure, GenDslArgs, GradCheckArgs, GuideSimArgs, LlmArgs, PhysicsArgs, RenderArgs};

pub fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), Failure> {
    std::fs::write(path, contents).map_err(|e| Failure::io(path, e))
}

pub fn create_dir(path: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(path).map_err(|e| Failure::io(path, e))
}

/// Writes to stdout; a closed pipe (`lvd ... | head`) is not an error.
pub fn emit(text: &str) {
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn print_json(v: &impl serde::Serialize) {
    emit(&(serde_json::to_string_pretty(v).expect("serializable") + "\n"));
}

/// Reads a layout from JSON or from the text grammar.
pub fn load_dsl(path: &Path) -> Result<DynamicSceneLayout, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
    let parsed = if text.trim_start().starts_with('{') {
        dsl::from_json(&text)
    } else {
        dsl::parse_dsl(&text).map(|p| p.layout)
    };
    parsed.map_err(|e| Failure::new(1, e.kind(), format!("{}: {e}", path.display())))
}

pub fn llm_failure(e: LlmError) -> Failure {
    match e {
        LlmError::AllAttemptsFailed { .. } => Failure::new(2, "all_attempts_failed", e.to_string()),
        LlmError::MissingFixture(_) => Failure::new(3, "missing_fixture", e.to_string()),
        LlmError::Transport(_) => Failure::new(1, "transport", e.to_string()),
        LlmError::ScriptExhausted => Failure::new(1, "script_exhausted", e.to_string()),
        LlmError::InvalidConfig(_) => Failure::new(1, "invalid_config", e.to_string()),
        LlmError::Io(_) => Failure::new(1, "io", e.to_string()),
    }
}

/// Effective LLM settings and completion source.
pub fn completion_source(
    backend: Option<Backend>,
    args: &LlmArgs,
    file: &FileConfig,
) -> Result<(Box<dyn CompletionSource>, LlmConfig), Failure> {
    let mut cfg = file.llm.clone();
    if let Some(m) = &args.model {
        cfg.model = m.clone();
    }
    if let Some(e) = &args.endpoint {
        cfg.endpoint = e.clone();
    }
    let backend = match (backend, file.backend.as_deref()) {
        (Some(b), _) => b,
        (None, Some(name)) => <Backend as clap::ValueEnum>::from_str(name, true)
            .map_err(|_| Failure::new(1, "config", format!("unknown backend {name:?}")))?,
        (None, None) => Backend::Live,
    };
    let source: Box<dyn CompletionSource> = match backend {
        Backend::Live => Box::new(Live::new(&cfg, args.cache_dir.clone().or_else(|| file.cache_dir.clone()))),
        Backend::Replay => {
            let dir = args.replay_dir.clone().or_else(|| file.replay_dir.clone());
            let dir = dir.ok_or_else(|| Failure::new(1, "usage", "replay backend needs --replay-dir"))?;
            Box::new(Replay::new(dir))
        }
        Backend::Scripted => {
            let path = args.script.as_ref().ok_or_else(|| Failure::new(1, "usage", "scripted backend needs --script"))?;
            let text = std::fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
            let items: Vec<String> =
                serde_json::from_str(&text).map_err(|e| Failure::new(1, "usage", format!("{}: {e}", path.display())))?;
            Box::new(Scripted::new(items))
        }
    };
    Ok((source, cfg))
}

fn write_attempts(dir: &Path, attempts: &[llm::GenerationAttempt]) -> Result<(), Failure> {
    let lines: String = attempts.iter().map(|a| serde_json::to_string(a).expect("serializable") + "\n").collect();
    write(&dir.join("attempts.jsonl"), lines)
}

pub fn gen_dsl(a: &GenDslArgs, file: &FileConfig) -> Result<(), Failure> {
    let (source, cfg) = completion_source(a.backend, &a.llm, file)?;
    let examples = InContextExample::select(a.examples, 0).map_err(|e| Failure::new(1, "usage", e.to_string()))?;
    let bundle = PromptBundle::new(a.caption.clone()).map_err(|e| Failure::new(1, "usage", e.to_string()))?.with_examples(examples);
    let hash = llm::prompt_hash(&llm::prompt_text(&bundle.build_messages()));
    create_dir(&a.out)?;
    match llm::generate_dsl(&bundle, &cfg, source.as_ref()) {
        Ok(g) => {
            write_attempts(&a.out, &g.attempts)?;
            let raw = &g.attempts.last().expect("at least one attempt").raw;
            write(&a.out.join("completion.txt"), raw)?;
            write(&a.out.join("reasoning.txt"), g.reasoning.as_deref().unwrap_or(""))?;
            let layout = a.out.join("layout.json");
            write(&layout, dsl::to_json(&g.layout))?;
            print_json(&json!({ "prompt_hash": hash, "attempts": g.attempts.len(), "layout": layout }));
            Ok(())
        }
        Err(e) => {
            if let LlmError::AllAttemptsFailed { attempts, .. } = &e {
                write_attempts(&a.out, attempts)?;
            }
            Err(llm_failure(e))
        }
    }
}

fn parse_hw(s: &str) -> Result<(usize, usize), Failure> {
    let bad = || Failure::new(1, "usage", format!("--hw expects N or HxW, got {s:?}"));
    let parts: Vec<&str> = s.split(['x', 'X']).collect();
    let nums: Vec<usize> = parts.iter().map(|p| p.trim().parse().map_err(|_| bad())).collect::<Result<_, _>>()?;
    match nums[..] {
        [n] => Ok((n, n)),
        [h, w] => Ok((h, w)),
        _ => Err(bad()),
    }
}

fn guidance_failure(e: GuidanceError) -> Failure {
    let kind = match e {
        GuidanceError::EmptyDsl => return Failure::new(2, "empty_dsl", e.to_string()),
        GuidanceError::TooFewFrames(_) => "too_few_frames",
        GuidanceError::InvalidSize(..) => "invalid_size",
        GuidanceError::InvalidSchedule(_) => "invalid_schedule",
        GuidanceError::Energy(_) => "energy",
    };
    Failure::new(1, kind, e.to_string())
}

pub fn guide_sim(a: &GuideSimArgs) -> Result<(), Failure> {
    let dsl = load_dsl(&a.dsl)?;
    let (height, width) = parse_hw(&a.hw)?;
    let schedule = GuidanceSchedule::new(a.steps, a.guided_steps, a.repeats, a.scale).map_err(guidance_failure)?;
    let energy = EnergyConfig { com_weight: a.com_weight, guidance_scale: a.scale, ..Default::default() };
    let setup = GuidanceSetup { schedule, energy, substrate: SubstrateConfig::default(), height, width };
    let run = guidance::run_guidance_with(&dsl, &setup, a.seed, |_, _, _| {}).map_err(guidance_failure)?;

    if let Some(path) = &a.trace_out {
        write(path, guidance::trace_csv(&run.trace))?;
    }
    if let Some(dir) = &a.pgm_dir {
        create_dir(dir)?;
        for (i, slot) in run.state.slots.iter().enumerate() {
            let img = render::render_attention_pgm(run.state.probabilities(i).view(), a.pgm_scale)
                .map_err(|e| Failure::new(1, "render", e.to_string()))?;
            write(&dir.join(format!("frame{:02}_id{}.pgm", slot.frame + 1, slot.id)), img)?;
        }
    }
    let report = json!({
        "seed": a.seed,
        "height": height,
        "width": width,
        "steps": a.steps,
        "guided_steps": a.guided_steps,
        "repeats": a.repeats,
        "scale": a.scale,
        "com_weight": a.com_weight,
        "final_energy": run.final_energy,
        "non_increasing_fraction": run.non_increasing_fraction(),
        "metrics": run.metrics,
    });
    match &a.metrics_out {
        Some(path) => write(path, serde_json::to_string_pretty(&report).expect("serializable") + "\n"),
        None => {
            print_json(&report);
            Ok(())
        }
    }
}

pub fn validate(a: &DslArg) -> Result<(), Failure> {
    let dsl = load_dsl(&a.dsl)?;
    let violations = dsl::validate_dsl(&dsl, dsl.canvas);
    print_json(&json!({ "violations": violations }));
    if violations.is_empty() {
        Ok(())
    } else {
        Err(Failure::new(1, "invalid_layout", format!("{} violations", violations.len())))
    }
}

fn verdict_or_error(r: Result<PhysicsVerdict, physics::PhysicsError>) -> serde_json::Value {
    match r {
        Ok(v) => serde_json::to_value(v).expect("serializable"),
        Err(e) => json!({ "error": e.to_string() }),
    }
}

pub fn physics(a: &PhysicsArgs) -> Result<(), Failure> {
    let dsl = load_dsl(&a.dsl)?;
    let objects: Vec<(u32, String)> = dsl.objects().into_iter().filter(|(id, _)| a.id.is_none_or(|want| want == *id)).collect();
    if objects.is_empty() {
        return Err(Failure::new(1, "unknown_id", format!("no object {:?}", a.id)));
    }
    let mut out = Vec::new();
    for (id, name) in objects {
        let t = dsl.trajectory_of(id).map_err(|e| Failure::new(1, e.kind(), e.to_string()))?;
        let ground = a.ground_y.unwrap_or_else(|| physics::default_ground_y(&t, dsl.canvas));
        out.push(json!({
            "id": id,
            "name": name,
            "gravity": verdict_or_error(physics::check_gravity(&t, ground)),
            "elastic_bounce": verdict_or_error(physics::check_bounce(&t, ground, true)),
            "receding": verdict_or_error(physics::check_perspective(&t, true, a.eps)),
            "approaching": verdict_or_error(physics::check_perspective(&t, false, a.eps)),
        }));
    }
    print_json(&out);
    Ok(())
}

pub fn render(a: &RenderArgs) -> Result<(), Failure> {
    let dsl = load_dsl(&a.dsl)?;
    let opts = SvgOptions { show_ids: !a.no_ids, show_names: !a.no_names, palette_seed: a.palette_seed };
    let r = render::render_dsl_svg(&dsl, &opts);
    create_dir(&a.out)?;
    let mut written: Vec<PathBuf> = Vec::new();
    for (k, svg) in r.frames.iter().enumerate() {
        let path = a.out.join(format!("frame_{:02}.svg", k + 1));
        write(&path, svg)?;
        written.push(path);
    }
    let path = a.out.join("animated.svg");
    write(&path, &r.animated)?;
    written.push(path);
    print_json(&written);
    Ok(())
}

pub fn grad_check(a: &GradCheckArgs) -> Result<(), Failure> {
    let seeds: Vec<u64> = (0..a.seeds).collect();
    let report = gradcheck::run_suite(&seeds, a.instances, a.size, a.h, a.tol);
    print_json(&report);
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::new(1, "gradient_mismatch", format!("relative error at or above {}", a.tol)))
    }
}
