//! Python module `lvd`. Structured results cross the boundary as plain
//! dicts and lists (through the `json` module); layouts stay Rust objects.

use std::path::PathBuf;

use lvd_core::benchmark::{self, BenchmarkPrompt, MutatorGenerator, OracleGenerator};
use lvd_core::dsl::{self, DynamicSceneLayout};
use lvd_core::energy::{self, BoxMask, EnergyConfig};
use lvd_core::gradcheck;
use lvd_core::guidance::{self, GuidanceSchedule, GuidanceSetup, SubstrateConfig};
use lvd_core::llm::{self, CompletionSource, LlmConfig, LlmError, Live, Replay, Scripted};
use lvd_core::physics;
use lvd_core::prompting::{InContextExample, PromptBundle};
use lvd_core::render::{self, SvgOptions};
use ndarray::Array2;
use pyo3::create_exception;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;
use serde::de::DeserializeOwned;
use serde::Serialize;

create_exception!(lvd, DslError, PyValueError, "Layout text or structure is invalid.");
create_exception!(lvd, AllAttemptsFailed, PyRuntimeError, "No completion parsed within the retry budget.");
create_exception!(lvd, MissingFixture, PyRuntimeError, "Replay backend has no recorded completion.");
create_exception!(lvd, LvdError, PyRuntimeError, "Other library failure.");

fn to_py<'py>(py: Python<'py>, v: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(v).map_err(|e| LvdError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn from_py<T: DeserializeOwned>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn dsl_err(e: dsl::DslError) -> PyErr {
    DslError::new_err(e.to_string())
}

fn other(e: impl std::fmt::Display) -> PyErr {
    LvdError::new_err(e.to_string())
}

fn llm_err(e: LlmError) -> PyErr {
    match e {
        LlmError::AllAttemptsFailed { .. } => AllAttemptsFailed::new_err(e.to_string()),
        LlmError::MissingFixture(_) => MissingFixture::new_err(e.to_string()),
        _ => other(e),
    }
}

fn to_array(rows: Vec<Vec<f64>>) -> PyResult<Array2<f64>> {
    let h = rows.len();
    let w = rows.first().map_or(0, Vec::len);
    if h == 0 || w == 0 || rows.iter().any(|r| r.len() != w) {
        return Err(PyValueError::new_err("expected a non-empty rectangular list of rows"));
    }
    Ok(Array2::from_shape_vec((h, w), rows.into_iter().flatten().collect()).expect("shape checked"))
}

fn to_rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

/// `(id, name, x, y, w, h)`
type BoxTuple = (u32, String, i32, i32, i32, i32);

/// A dynamic scene layout: frames of id-linked boxes plus a background keyword.
#[pyclass(name = "Layout", module = "lvd", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct Layout {
    inner: DynamicSceneLayout,
}

#[pymethods]
impl Layout {
    /// Parses completion text (`Frame k: [...]` lines).
    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        dsl::parse_dsl(text).map(|p| Layout { inner: p.layout }).map_err(dsl_err)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        dsl::from_json(text).map(|inner| Layout { inner }).map_err(dsl_err)
    }

    fn to_json(&self) -> String {
        dsl::to_json(&self.inner)
    }

    fn to_text(&self) -> String {
        dsl::serialize_dsl(&self.inner)
    }

    #[getter]
    fn background(&self) -> String {
        self.inner.background.clone()
    }

    #[getter]
    fn num_frames(&self) -> usize {
        self.inner.frames.len()
    }

    #[getter]
    fn canvas(&self) -> (u32, u32) {
        (self.inner.canvas.width, self.inner.canvas.height)
    }

    /// `(id, name)` pairs in id order.
    fn objects(&self) -> Vec<(u32, String)> {
        self.inner.objects()
    }

    /// Boxes of one frame (1-based) as `(id, name, x, y, w, h)`.
    fn boxes(&self, frame: usize) -> PyResult<Vec<BoxTuple>> {
        let f = frame
            .checked_sub(1)
            .and_then(|i| self.inner.frames.get(i))
            .ok_or_else(|| PyValueError::new_err(format!("no frame {frame}")))?;
        Ok(f.boxes.iter().map(|b| (b.id, b.name.clone(), b.x, b.y, b.w, b.h)).collect())
    }

    fn validate<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &dsl::validate_dsl(&self.inner, self.inner.canvas))
    }

    fn interpolate(&self, frames: usize) -> PyResult<Self> {
        dsl::interpolate_frames(&self.inner, frames).map(|inner| Layout { inner }).map_err(dsl_err)
    }

    fn __len__(&self) -> usize {
        self.inner.frames.len()
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!("Layout(frames={}, objects={}, background={:?})", self.inner.frames.len(), self.inner.objects().len(), self.inner.background)
    }
}

fn bundle(caption: &str, examples: usize) -> PyResult<PromptBundle> {
    let ex = InContextExample::select(examples, 0).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(PromptBundle::new(caption).map_err(|e| PyValueError::new_err(e.to_string()))?.with_examples(ex))
}

/// Single-string prompt for `caption`.
#[pyfunction]
#[pyo3(signature = (caption, examples = 3))]
fn build_prompt(caption: &str, examples: usize) -> PyResult<String> {
    Ok(bundle(caption, examples)?.build_merged_prompt())
}

/// Chat messages as `[{"role": ..., "content": ...}]`.
#[pyfunction]
#[pyo3(signature = (caption, examples = 3))]
fn build_messages<'py>(py: Python<'py>, caption: &str, examples: usize) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &bundle(caption, examples)?.build_messages())
}

/// Queries a completion backend (`live`, `replay` or `scripted`) and parses
/// the layout, retrying up to three times.
#[pyfunction]
#[pyo3(signature = (caption, backend = "replay", replay_dir = None, cache_dir = None, script = None, model = None, examples = 3))]
#[allow(clippy::too_many_arguments)]
fn generate_dsl<'py>(
    py: Python<'py>,
    caption: &str,
    backend: &str,
    replay_dir: Option<PathBuf>,
    cache_dir: Option<PathBuf>,
    script: Option<Vec<String>>,
    model: Option<String>,
    examples: usize,
) -> PyResult<(Layout, Option<String>, Bound<'py, PyAny>)> {
    let mut cfg = LlmConfig::default();
    if let Some(m) = model {
        cfg.model = m;
    }
    let source: Box<dyn CompletionSource> = match backend {
        "live" => Box::new(Live::new(&cfg, cache_dir)),
        "replay" => Box::new(Replay::new(replay_dir.ok_or_else(|| PyValueError::new_err("replay needs replay_dir"))?)),
        "scripted" => Box::new(Scripted::new(script.ok_or_else(|| PyValueError::new_err("scripted needs script"))?)),
        other => return Err(PyValueError::new_err(format!("unknown backend {other:?}"))),
    };
    let b = bundle(caption, examples)?;
    let g = py.detach(|| llm::generate_dsl(&b, &cfg, source.as_ref())).map_err(llm_err)?;
    let attempts = to_py(py, &g.attempts)?;
    Ok((Layout { inner: g.layout }, g.reasoning, attempts))
}

fn energy_cfg(com_weight: f64) -> EnergyConfig {
    EnergyConfig { com_weight, ..Default::default() }
}

/// Top-k energy of an attention map against the box `rows x cols`
/// (half-open cell ranges). Returns `(energy, gradient)`.
#[pyfunction]
fn topk_energy(attention: Vec<Vec<f64>>, rows: (usize, usize), cols: (usize, usize)) -> PyResult<(f64, Vec<Vec<f64>>)> {
    let a = to_array(attention)?;
    let (h, w) = a.dim();
    if rows.0 > rows.1 || rows.1 > h || cols.0 > cols.1 || cols.1 > w {
        return Err(PyValueError::new_err("box ranges fall outside the map"));
    }
    let m = BoxMask::new(h, w, rows.0..rows.1, cols.0..cols.1);
    let cfg = EnergyConfig::default();
    let e = energy::e_topk(a.view(), &m, &cfg).map_err(other)?;
    let g = energy::grad_e_topk(a.view(), &m, &cfg).map_err(other)?;
    Ok((e, to_rows(&g)))
}

/// Center of mass `(x, y)` of a map in cell units.
#[pyfunction]
fn center_of_mass(attention: Vec<Vec<f64>>) -> PyResult<(f64, f64)> {
    let p = energy::com_of_map(to_array(attention)?.view()).map_err(other)?;
    Ok((p.x, p.y))
}

/// Runs guidance on the softmax substrate. Returns a dict with `metrics`,
/// `trace`, `final_energy` and, when asked, per-slot `attention` maps.
#[pyfunction]
#[pyo3(signature = (layout, hw = 32, steps = 40, guided_steps = 10, repeats = 5, scale = 5.0, com_weight = 0.03, seed = 0, attention = false))]
#[allow(clippy::too_many_arguments)]
fn run_guidance<'py>(
    py: Python<'py>,
    layout: &Layout,
    hw: usize,
    steps: usize,
    guided_steps: usize,
    repeats: usize,
    scale: f64,
    com_weight: f64,
    seed: u64,
    attention: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let schedule = GuidanceSchedule::new(steps, guided_steps, repeats, scale).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let setup = GuidanceSetup { schedule, energy: energy_cfg(com_weight), substrate: SubstrateConfig::default(), height: hw, width: hw };
    let run = py.detach(|| guidance::run_guidance_with(&layout.inner, &setup, seed, |_, _, _| {})).map_err(other)?;
    let maps: Option<Vec<serde_json::Value>> = attention.then(|| {
        run.state
            .slots
            .iter()
            .enumerate()
            .map(|(i, s)| serde_json::json!({ "frame": s.frame + 1, "id": s.id, "map": to_rows(&run.state.probabilities(i)) }))
            .collect()
    });
    to_py(
        py,
        &serde_json::json!({
            "metrics": run.metrics,
            "trace": run.trace,
            "final_energy": run.final_energy,
            "non_increasing_fraction": run.non_increasing_fraction(),
            "attention": maps,
        }),
    )
}

/// The 500-prompt suite as a list of dicts.
#[pyfunction]
#[pyo3(signature = (seed = 0))]
fn generate_suite<'py>(py: Python<'py>, seed: u64) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &benchmark::generate_suite(seed))
}

/// Verdict for one suite prompt (a dict from `generate_suite`).
#[pyfunction]
fn verify<'py>(py: Python<'py>, prompt: &Bound<'py, PyAny>, layout: &Layout) -> PyResult<Bound<'py, PyAny>> {
    let p: BenchmarkPrompt = from_py(prompt)?;
    to_py(py, &benchmark::verify(&p, &layout.inner).map_err(other)?)
}

/// Ground-truth layout for a suite prompt.
#[pyfunction]
fn oracle_layout(prompt: &Bound<'_, PyAny>) -> PyResult<Layout> {
    let p: BenchmarkPrompt = from_py(prompt)?;
    Ok(Layout { inner: benchmark::synthesize_oracle_dsl(&p) })
}

/// Runs the suite with the `oracle` or `mutator` generator.
#[pyfunction]
#[pyo3(signature = (seed = 0, generator = "oracle", generations = 1, jobs = 0))]
fn run_benchmark<'py>(py: Python<'py>, seed: u64, generator: &str, generations: u32, jobs: usize) -> PyResult<Bound<'py, PyAny>> {
    let suite = benchmark::generate_suite(seed);
    let report = match generator {
        "oracle" => py.detach(|| benchmark::run_benchmark(&suite, &OracleGenerator, generations, jobs)),
        "mutator" => py.detach(|| benchmark::run_benchmark(&suite, &MutatorGenerator, generations, jobs)),
        other => return Err(PyValueError::new_err(format!("unknown generator {other:?}"))),
    }
    .map_err(self::other)?;
    to_py(py, &report)
}

fn trajectory(layout: &Layout, id: u32) -> PyResult<dsl::Trajectory> {
    layout.inner.trajectory_of(id).map_err(dsl_err)
}

#[pyfunction]
#[pyo3(signature = (layout, id, ground_y = None))]
fn check_gravity<'py>(py: Python<'py>, layout: &Layout, id: u32, ground_y: Option<f64>) -> PyResult<Bound<'py, PyAny>> {
    let t = trajectory(layout, id)?;
    let g = ground_y.unwrap_or_else(|| physics::default_ground_y(&t, layout.inner.canvas));
    to_py(py, &physics::check_gravity(&t, g).map_err(other)?)
}

#[pyfunction]
#[pyo3(signature = (layout, id, elastic = true, ground_y = None))]
fn check_bounce<'py>(py: Python<'py>, layout: &Layout, id: u32, elastic: bool, ground_y: Option<f64>) -> PyResult<Bound<'py, PyAny>> {
    let t = trajectory(layout, id)?;
    let g = ground_y.unwrap_or_else(|| physics::default_ground_y(&t, layout.inner.canvas));
    to_py(py, &physics::check_bounce(&t, g, elastic).map_err(other)?)
}

#[pyfunction]
#[pyo3(signature = (layout, id, receding = true, eps = 0.0))]
fn check_perspective<'py>(py: Python<'py>, layout: &Layout, id: u32, receding: bool, eps: f64) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &physics::check_perspective(&trajectory(layout, id)?, receding, eps).map_err(other)?)
}

/// `(per-frame SVGs, animated SVG)`.
#[pyfunction]
#[pyo3(signature = (layout, show_ids = true, show_names = true, palette_seed = 0))]
fn render_svg(layout: &Layout, show_ids: bool, show_names: bool, palette_seed: u64) -> (Vec<String>, String) {
    let r = render::render_dsl_svg(&layout.inner, &SvgOptions { show_ids, show_names, palette_seed });
    (r.frames, r.animated)
}

/// Binary PGM bytes of a nonnegative map.
#[pyfunction]
#[pyo3(signature = (attention, scale = 1))]
fn render_attention_pgm<'py>(py: Python<'py>, attention: Vec<Vec<f64>>, scale: usize) -> PyResult<Bound<'py, PyBytes>> {
    let img = render::render_attention_pgm(to_array(attention)?.view(), scale).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(PyBytes::new(py, &img))
}

/// Finite-difference check of both energy gradients.
#[pyfunction]
#[pyo3(signature = (seeds = 5, instances = 20, size = 16, h = 1e-5, tol = 1e-4))]
fn grad_check<'py>(py: Python<'py>, seeds: u64, instances: usize, size: usize, h: f64, tol: f64) -> PyResult<Bound<'py, PyAny>> {
    let s: Vec<u64> = (0..seeds).collect();
    let report = py.detach(|| gradcheck::run_suite(&s, instances, size, h, tol));
    let mut v = serde_json::to_value(&report).map_err(other)?;
    v["passed"] = report.passed().into();
    to_py(py, &v)
}

/// Layouts of the built-in in-context examples, keyed by caption.
#[pyfunction]
fn example_layouts() -> Vec<(String, Layout)> {
    InContextExample::defaults().into_iter().map(|e| (e.caption.clone(), Layout { inner: e.layout() })).collect()
}

#[pymodule]
pub fn lvd(m: &Bound<'_, PyModule>) -> PyResult<()> {
    let py = m.py();
    m.add_class::<Layout>()?;
    m.add("DslError", py.get_type::<DslError>())?;
    m.add("AllAttemptsFailed", py.get_type::<AllAttemptsFailed>())?;
    m.add("MissingFixture", py.get_type::<MissingFixture>())?;
    m.add("LvdError", py.get_type::<LvdError>())?;
    m.add_function(wrap_pyfunction!(build_prompt, m)?)?;
    m.add_function(wrap_pyfunction!(build_messages, m)?)?;
    m.add_function(wrap_pyfunction!(generate_dsl, m)?)?;
    m.add_function(wrap_pyfunction!(topk_energy, m)?)?;
    m.add_function(wrap_pyfunction!(center_of_mass, m)?)?;
    m.add_function(wrap_pyfunction!(run_guidance, m)?)?;
    m.add_function(wrap_pyfunction!(generate_suite, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add_function(wrap_pyfunction!(oracle_layout, m)?)?;
    m.add_function(wrap_pyfunction!(run_benchmark, m)?)?;
    m.add_function(wrap_pyfunction!(check_gravity, m)?)?;
    m.add_function(wrap_pyfunction!(check_bounce, m)?)?;
    m.add_function(wrap_pyfunction!(check_perspective, m)?)?;
    m.add_function(wrap_pyfunction!(render_svg, m)?)?;
    m.add_function(wrap_pyfunction!(render_attention_pgm, m)?)?;
    m.add_function(wrap_pyfunction!(grad_check, m)?)?;
    m.add_function(wrap_pyfunction!(example_layouts, m)?)?;
    Ok(())
}
