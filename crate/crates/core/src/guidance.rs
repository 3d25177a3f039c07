//! Guidance on a mock attention substrate.
//!
//! Each present (frame, object) pair owns an `H x W` logit slice `z`. Its
//! attention map is `c * softmax(G * z)` where `G` is a small Gaussian blur
//! standing in for the spatial coupling of a real denoiser, and `c` is either
//! `H * W` (mean-one maps, the default) or 1. Guidance runs classifier-style
//! updates `z <- z - sqrt(1 - alpha_bar_t) * scale * dE/dz` during the first
//! steps of the schedule; the remaining steps leave the state untouched.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsl::{DynamicSceneLayout, Point};
use crate::energy::{self, rasterize_mask, BoxMask, EnergyBreakdown, EnergyConfig, EnergyError, FrameTerm};

pub const BETA_START: f64 = 0.00085;
pub const BETA_END: f64 = 0.012;
pub const TRAIN_STEPS: usize = 1000;

#[derive(Debug, Error, PartialEq)]
pub enum GuidanceError {
    #[error("layout has no boxes to guide")]
    EmptyDsl,
    #[error("guidance needs at least 2 frames, found {0}")]
    TooFewFrames(usize),
    #[error("latent must be at least 2x2, got {0}x{1}")]
    InvalidSize(usize, usize),
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error(transparent)]
    Energy(#[from] EnergyError),
}

/// `alpha_bar` per sampling step, noisiest first.
///
/// Betas grow linearly over 1000 training indices; step `t` of `total_steps`
/// reads index `round(999 * (T - 1 - t) / (T - 1))`.
pub fn make_alpha_bar(total_steps: usize) -> Vec<f64> {
    assert!(total_steps >= 1, "total_steps must be positive");
    let last = (TRAIN_STEPS - 1) as f64;
    let mut cum = Vec::with_capacity(TRAIN_STEPS);
    let mut acc = 1.0;
    for i in 0..TRAIN_STEPS {
        acc *= 1.0 - (BETA_START + (BETA_END - BETA_START) * i as f64 / last);
        cum.push(acc);
    }
    if total_steps == 1 {
        return vec![cum[TRAIN_STEPS - 1]];
    }
    let span = (total_steps - 1) as f64;
    (0..total_steps)
        .map(|t| {
            let idx = (last * (span - t as f64) / span + 0.5).floor() as usize;
            cum[idx]
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidanceSchedule {
    pub total_steps: usize,
    pub guided_steps: usize,
    pub repeats_per_step: usize,
    pub alpha_bar: Vec<f64>,
    pub scale: f64,
}

impl Default for GuidanceSchedule {
    fn default() -> Self {
        Self::new(40, 10, 5, 5.0).expect("default schedule is valid")
    }
}

impl GuidanceSchedule {
    pub fn new(total_steps: usize, guided_steps: usize, repeats_per_step: usize, scale: f64) -> Result<Self, GuidanceError> {
        if total_steps == 0 || guided_steps > total_steps {
            return Err(GuidanceError::InvalidSchedule(format!("guided {guided_steps} of {total_steps} steps")));
        }
        if repeats_per_step == 0 {
            return Err(GuidanceError::InvalidSchedule("repeats must be at least 1".into()));
        }
        if !scale.is_finite() || scale < 0.0 {
            return Err(GuidanceError::InvalidSchedule(format!("scale {scale}")));
        }
        Ok(Self { total_steps, guided_steps, repeats_per_step, alpha_bar: make_alpha_bar(total_steps), scale })
    }

    /// `sqrt(1 - alpha_bar_t) * scale`.
    pub fn step_size(&self, t: usize) -> f64 {
        (1.0 - self.alpha_bar[t]).sqrt() * self.scale
    }

    pub fn num_updates(&self) -> usize {
        self.guided_steps * self.repeats_per_step
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Softmax times the cell count, so a uniform map is all ones.
    CellCount,
    /// Plain softmax, summing to 1.
    Unit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubstrateConfig {
    /// Gaussian coupling width in cells; 0 disables it.
    pub coupling_sigma: f64,
    pub normalization: Normalization,
}

impl Default for SubstrateConfig {
    fn default() -> Self {
        Self { coupling_sigma: 1.0, normalization: Normalization::CellCount }
    }
}

/// Normalized 1-D Gaussian taps, radius `floor(3 * sigma + 0.5)`.
fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma + 0.5).floor() as i64;
    let w: Vec<f64> = (-r..=r).map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable blur with zero padding. Symmetric taps make it self-adjoint.
fn blur(x: ArrayView2<'_, f64>, kernel: &[f64]) -> Array2<f64> {
    if kernel.len() == 1 {
        return x.to_owned();
    }
    let r = (kernel.len() / 2) as isize;
    let pass = |src: ArrayView2<'_, f64>, axis: Axis| {
        let mut out = Array2::zeros(src.dim());
        let n = src.len_of(axis) as isize;
        for (mut o, s) in out.lanes_mut(axis).into_iter().zip(src.lanes(axis)) {
            for i in 0..n {
                let mut acc = 0.0;
                for (k, w) in kernel.iter().enumerate() {
                    let j = i + k as isize - r;
                    if (0..n).contains(&j) {
                        acc += w * s[j as usize];
                    }
                }
                o[i as usize] = acc;
            }
        }
        out
    };
    let rows = pass(x, Axis(1));
    pass(rows.view(), Axis(0))
}

fn softmax(y: &Array2<f64>) -> Array2<f64> {
    let m = y.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let mut e = y.mapv(|v| (v - m).exp());
    let s = e.sum();
    e /= s;
    e
}

/// One logit slice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slot {
    /// Position in `dsl.frames`, 0-based.
    pub frame: usize,
    pub id: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubstrateState {
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    pub slots: Vec<Slot>,
    pub logits: Vec<Array2<f64>>,
    pub config: SubstrateConfig,
    kernel: Vec<f64>,
}

impl SubstrateState {
    /// Standard normal logits for every box that covers at least one cell,
    /// drawn in frame order and, within a frame, in box order.
    pub fn init(dsl: &DynamicSceneLayout, height: usize, width: usize, seed: u64, config: SubstrateConfig) -> Result<Self, GuidanceError> {
        if height < 2 || width < 2 {
            return Err(GuidanceError::InvalidSize(height, width));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut slots = Vec::new();
        let mut logits = Vec::new();
        for (f, frame) in dsl.frames.iter().enumerate() {
            for b in &frame.boxes {
                if rasterize_mask(b, dsl.canvas, height, width).is_empty() {
                    continue;
                }
                slots.push(Slot { frame: f, id: b.id });
                logits.push(Array2::from_shape_simple_fn((height, width), || StandardNormal.sample(&mut rng)));
            }
        }
        let kernel = if config.coupling_sigma > 0.0 { gaussian_kernel(config.coupling_sigma) } else { vec![1.0] };
        Ok(Self { height, width, seed, slots, logits, config, kernel })
    }

    pub fn slot_index(&self, frame: usize, id: u32) -> Option<usize> {
        self.slots.iter().position(|s| s.frame == frame && s.id == id)
    }

    /// Softmax of the coupled logits; sums to 1.
    pub fn probabilities(&self, slot: usize) -> Array2<f64> {
        softmax(&blur(self.logits[slot].view(), &self.kernel))
    }

    fn scale(&self) -> f64 {
        match self.config.normalization {
            Normalization::CellCount => (self.height * self.width) as f64,
            Normalization::Unit => 1.0,
        }
    }

    /// The map the energy sees.
    pub fn attention(&self, slot: usize) -> Array2<f64> {
        self.probabilities(slot) * self.scale()
    }

    /// Pulls `dE/dA` back to `dE/dz`: `G * (A . (gA - sum(s . gA)))`.
    fn backprop(&self, probs: &Array2<f64>, grad_a: &Array2<f64>) -> Array2<f64> {
        let c = self.scale();
        let inner: f64 = Zip::from(probs).and(grad_a).fold(0.0, |acc, s, g| acc + s * g);
        let gy = Zip::from(probs).and(grad_a).map_collect(|s, g| c * s * (g - inner));
        blur(gy.view(), &self.kernel)
    }
}

/// `(id, mask)` for every box of `dsl.frames[frame]`.
pub fn objects_in_frame(dsl: &DynamicSceneLayout, frame: usize, height: usize, width: usize) -> Vec<(u32, BoxMask)> {
    dsl.frames
        .get(frame)
        .map(|f| f.boxes.iter().map(|b| (b.id, rasterize_mask(b, dsl.canvas, height, width))).collect())
        .unwrap_or_default()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub repeat: usize,
    pub e_topk: f64,
    pub e_com: f64,
    pub e_total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlotMetrics {
    pub frame: usize,
    pub id: u32,
    pub mass_fraction: f64,
    pub com_error: f64,
    /// Against the same object in the next frame, when present there.
    pub velocity_error: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub min: f64,
    pub mean: f64,
    pub max: f64,
}

impl Aggregate {
    fn of(values: impl IntoIterator<Item = f64>) -> Option<Self> {
        let v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return None;
        }
        Some(Self {
            min: v.iter().copied().fold(f64::INFINITY, f64::min),
            mean: v.iter().sum::<f64>() / v.len() as f64,
            max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundingMetrics {
    pub slots: Vec<SlotMetrics>,
    pub mass_fraction: Aggregate,
    pub com_error: Aggregate,
    pub velocity_error: Option<Aggregate>,
}

fn dist(a: Point, b: Point) -> f64 {
    (a.x - b.x).hypot(a.y - b.y)
}

fn slot_masks(dsl: &DynamicSceneLayout, state: &SubstrateState) -> Vec<BoxMask> {
    state
        .slots
        .iter()
        .map(|s| {
            let b = dsl.frames[s.frame].get(s.id).expect("slot refers to a box");
            rasterize_mask(b, dsl.canvas, state.height, state.width)
        })
        .collect()
}

/// Mass, CoM and CoM-velocity agreement between the current maps and the boxes.
pub fn measure(dsl: &DynamicSceneLayout, state: &SubstrateState) -> Result<GroundingMetrics, GuidanceError> {
    if state.slots.is_empty() {
        return Err(GuidanceError::EmptyDsl);
    }
    let masks = slot_masks(dsl, state);
    let mut centers = Vec::with_capacity(masks.len());
    let mut slots = Vec::with_capacity(masks.len());
    for (i, (slot, mask)) in state.slots.iter().zip(&masks).enumerate() {
        let p = state.probabilities(i);
        let mass = Zip::indexed(&p).fold(0.0, |acc, (r, c), v| if mask.contains(r, c) { acc + v } else { acc });
        let (pa, pm) = (energy::com_of_map(p.view())?, mask.com()?);
        centers.push((pa, pm));
        slots.push(SlotMetrics { frame: slot.frame, id: slot.id, mass_fraction: mass.clamp(0.0, 1.0), com_error: dist(pa, pm), velocity_error: None });
    }
    for i in 0..slots.len() {
        let next = state.slot_index(slots[i].frame + 1, slots[i].id);
        if let Some(j) = next {
            let (pa, pm) = centers[i];
            let (pa1, pm1) = centers[j];
            let va = Point { x: pa1.x - pa.x, y: pa1.y - pa.y };
            let vm = Point { x: pm1.x - pm.x, y: pm1.y - pm.y };
            slots[i].velocity_error = Some(dist(va, vm));
        }
    }
    Ok(GroundingMetrics {
        mass_fraction: Aggregate::of(slots.iter().map(|s| s.mass_fraction)).expect("nonempty"),
        com_error: Aggregate::of(slots.iter().map(|s| s.com_error)).expect("nonempty"),
        velocity_error: Aggregate::of(slots.iter().filter_map(|s| s.velocity_error)),
        slots,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidanceSetup {
    pub schedule: GuidanceSchedule,
    pub energy: EnergyConfig,
    pub substrate: SubstrateConfig,
    pub height: usize,
    pub width: usize,
}

impl Default for GuidanceSetup {
    fn default() -> Self {
        Self {
            schedule: GuidanceSchedule::default(),
            energy: EnergyConfig::default(),
            substrate: SubstrateConfig::default(),
            height: 32,
            width: 32,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GuidanceRun {
    pub state: SubstrateState,
    pub metrics: GroundingMetrics,
    /// Energy before each update.
    pub trace: Vec<TraceRow>,
    /// Energy of the final state.
    pub final_energy: EnergyBreakdown,
}

impl GuidanceRun {
    /// Share of updates after which the energy did not rise.
    pub fn non_increasing_fraction(&self) -> f64 {
        let mut seq: Vec<f64> = self.trace.iter().map(|r| r.e_total).collect();
        seq.push(self.final_energy.e_total);
        if seq.len() < 2 {
            return 1.0;
        }
        let ok = seq.windows(2).filter(|w| w[1] <= w[0] + 1e-12 * w[0].abs().max(1.0)).count();
        ok as f64 / (seq.len() - 1) as f64
    }
}

/// Energy and `dE/dz` for every slot.
pub fn energy_and_grad(
    dsl: &DynamicSceneLayout,
    state: &SubstrateState,
    masks: &[BoxMask],
    cfg: &EnergyConfig,
) -> Result<(EnergyBreakdown, Vec<Array2<f64>>), GuidanceError> {
    let probs: Vec<Array2<f64>> = (0..state.slots.len()).into_par_iter().map(|i| state.probabilities(i)).collect();
    let scale = state.scale();
    let attn: Vec<Array2<f64>> = probs.iter().map(|p| p * scale).collect();

    let ids: Vec<u32> = dsl.objects().into_iter().map(|(id, _)| id).collect();
    let n_frames = dsl.frames.len();
    let mut where_: Vec<Vec<Option<usize>>> = vec![vec![None; n_frames]; ids.len()];
    for (i, s) in state.slots.iter().enumerate() {
        let o = ids.binary_search(&s.id).expect("slot id is a layout object");
        where_[o][s.frame] = Some(i);
    }
    let tracks: Vec<Vec<Option<FrameTerm<'_>>>> = where_
        .iter()
        .map(|row| row.iter().map(|slot| slot.map(|i| FrameTerm { attention: attn[i].view(), mask: &masks[i] })).collect())
        .collect();
    let (e, grads) = energy::total_energy_with_grad(&tracks, cfg)?;

    let mut grad_a: Vec<Option<Array2<f64>>> = vec![None; state.slots.len()];
    for (row, grow) in where_.iter().zip(grads) {
        for (slot, g) in row.iter().zip(grow) {
            if let (Some(i), Some(g)) = (slot, g) {
                grad_a[*i] = Some(g);
            }
        }
    }
    let grad_z = grad_a
        .into_par_iter()
        .zip(probs.par_iter())
        .map(|(g, p)| state.backprop(p, &g.expect("every slot has a gradient")))
        .collect();
    Ok((e, grad_z))
}

/// Runs the schedule from a seeded state. `observer` sees the state after
/// every update as `(step, repeat, state)`.
pub fn run_guidance_with(
    dsl: &DynamicSceneLayout,
    setup: &GuidanceSetup,
    seed: u64,
    mut observer: impl FnMut(usize, usize, &SubstrateState),
) -> Result<GuidanceRun, GuidanceError> {
    if dsl.frames.len() < 2 {
        return Err(GuidanceError::TooFewFrames(dsl.frames.len()));
    }
    setup.energy.validate()?;
    let mut state = SubstrateState::init(dsl, setup.height, setup.width, seed, setup.substrate)?;
    if state.slots.is_empty() {
        return Err(GuidanceError::EmptyDsl);
    }
    let masks = slot_masks(dsl, &state);
    let sched = &setup.schedule;
    let mut trace = Vec::with_capacity(sched.num_updates());
    for step in 0..sched.guided_steps {
        let lr = sched.step_size(step);
        for repeat in 0..sched.repeats_per_step {
            let (e, grads) = energy_and_grad(dsl, &state, &masks, &setup.energy)?;
            trace.push(TraceRow { step, repeat, e_topk: e.e_topk, e_com: e.e_com, e_total: e.e_total });
            if lr != 0.0 {
                for (z, g) in state.logits.iter_mut().zip(&grads) {
                    z.scaled_add(-lr, g);
                }
            }
            observer(step, repeat, &state);
        }
    }
    // steps past the guided window: the mock denoiser leaves the state as is
    let (final_energy, _) = energy_and_grad(dsl, &state, &masks, &setup.energy)?;
    let metrics = measure(dsl, &state)?;
    Ok(GuidanceRun { state, metrics, trace, final_energy })
}

pub fn run_guidance(
    dsl: &DynamicSceneLayout,
    schedule: &GuidanceSchedule,
    cfg: &EnergyConfig,
    height: usize,
    width: usize,
    seed: u64,
) -> Result<GuidanceRun, GuidanceError> {
    let setup = GuidanceSetup { schedule: schedule.clone(), energy: *cfg, substrate: SubstrateConfig::default(), height, width };
    run_guidance_with(dsl, &setup, seed, |_, _, _| {})
}

pub fn trace_csv(trace: &[TraceRow]) -> String {
    let mut out = String::from("step,repeat,e_topk,e_com,e_total\n");
    for r in trace {
        out.push_str(&format!("{},{},{},{},{}\n", r.step, r.repeat, r.e_topk, r.e_com, r.e_total));
    }
    out
}

pub fn metrics_csv(m: &GroundingMetrics) -> String {
    let mut out = String::from("frame,id,mass_fraction,com_error,velocity_error\n");
    for s in &m.slots {
        let v = s.velocity_error.map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!("{},{},{},{},{}\n", s.frame + 1, s.id, s.mass_fraction, s.com_error, v));
    }
    out
}

/// Row sums of a map, top to bottom. Handy for eyeballing vertical placement.
pub fn row_profile(a: &Array2<f64>) -> Array1<f64> {
    a.sum_axis(Axis(1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::{BoundingBox, Frame};

    fn static_dsl(frames: u32) -> DynamicSceneLayout {
        DynamicSceneLayout::new(
            (1..=frames).map(|i| Frame { index: i, boxes: vec![BoundingBox::new(0, "cup", 192, 192, 128, 128)] }).collect(),
            "table",
        )
        .unwrap()
    }

    #[test]
    fn alpha_bar_shape() {
        let ab = make_alpha_bar(40);
        assert_eq!(ab.len(), 40);
        assert!(ab.windows(2).all(|w| w[1] > w[0]));
        assert!((ab[0] - 0.0015789629305514416).abs() < 1e-15);
        assert!(((1.0 - ab[0]).sqrt() - 0.9992102066479548).abs() < 1e-12);
        assert_eq!(make_alpha_bar(1), vec![ab[0]]);
    }

    #[test]
    fn schedule_checks() {
        assert!(GuidanceSchedule::new(10, 11, 5, 5.0).is_err());
        assert!(GuidanceSchedule::new(10, 5, 0, 5.0).is_err());
        assert!(GuidanceSchedule::new(10, 5, 1, -1.0).is_err());
        assert_eq!(GuidanceSchedule::default().num_updates(), 50);
    }

    #[test]
    fn kernel_matches_reference_taps() {
        let k = gaussian_kernel(1.0);
        assert_eq!(k.len(), 7);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!((k[3] - 0.39905028).abs() < 1e-8);
    }

    #[test]
    fn blur_is_self_adjoint() {
        let k = gaussian_kernel(1.0);
        let x = Array2::from_shape_fn((6, 5), |(i, j)| ((i * 7 + j * 3) % 5) as f64 - 2.0);
        let y = Array2::from_shape_fn((6, 5), |(i, j)| ((i + 2 * j) % 4) as f64);
        let lhs = (&blur(x.view(), &k) * &y).sum();
        let rhs = (&x * &blur(y.view(), &k)).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn zero_scale_is_identity() {
        let dsl = static_dsl(3);
        let setup = GuidanceSetup { schedule: GuidanceSchedule::new(40, 10, 5, 0.0).unwrap(), ..Default::default() };
        let run = run_guidance_with(&dsl, &setup, 3, |_, _, _| {}).unwrap();
        let init = SubstrateState::init(&dsl, 32, 32, 3, SubstrateConfig::default()).unwrap();
        assert_eq!(run.state, init);
        assert_eq!(run.metrics, measure(&dsl, &init).unwrap());
        assert_eq!(run.trace.len(), 50);
    }

    #[test]
    fn reproducible() {
        let dsl = static_dsl(2);
        let a = run_guidance(&dsl, &GuidanceSchedule::default(), &EnergyConfig::default(), 16, 16, 9).unwrap();
        let b = run_guidance(&dsl, &GuidanceSchedule::default(), &EnergyConfig::default(), 16, 16, 9).unwrap();
        assert_eq!(a.state, b.state);
        assert_eq!(a.trace, b.trace);
    }

    #[test]
    fn single_frame_rejected() {
        let dsl = static_dsl(1);
        let err = run_guidance(&dsl, &GuidanceSchedule::default(), &EnergyConfig::default(), 16, 16, 0).unwrap_err();
        assert_eq!(err, GuidanceError::TooFewFrames(1));
    }

    #[test]
    fn objects_listing() {
        let dsl = static_dsl(2);
        assert_eq!(objects_in_frame(&dsl, 0, 8, 8).len(), 1);
        assert!(objects_in_frame(&dsl, 5, 8, 8).is_empty());
    }

    #[test]
    fn trace_csv_header() {
        let csv = trace_csv(&[TraceRow { step: 0, repeat: 1, e_topk: -1.0, e_com: 2.0, e_total: -0.94 }]);
        assert_eq!(csv, "step,repeat,e_topk,e_com,e_total\n0,1,-1,2,-0.94\n");
    }
}
