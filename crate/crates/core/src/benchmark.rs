//! Five-task prompt suite, rule-based layout verifier and reports.

use std::fmt;
use std::io::{BufRead, Write};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsl::{BoundingBox, Canvas, DynamicSceneLayout, Frame};
use crate::llm::{generate_dsl_sample, CompletionSource, LlmConfig};
use crate::prompting::PromptBundle;

pub const OBJECTS: [&str; 5] = ["car", "cat", "bird", "ball", "dog"];
pub const COLORS: [&str; 11] = ["red", "orange", "yellow", "green", "blue", "purple", "pink", "brown", "black", "white", "gray"];
pub const SEQUENTIAL_TRIPLES: [[Quadrant; 3]; 4] = [
    [Quadrant::LowerLeft, Quadrant::LowerRight, Quadrant::UpperRight],
    [Quadrant::LowerLeft, Quadrant::UpperLeft, Quadrant::UpperRight],
    [Quadrant::LowerRight, Quadrant::LowerLeft, Quadrant::UpperLeft],
    [Quadrant::LowerRight, Quadrant::UpperRight, Quadrant::UpperLeft],
];
pub const PROMPTS_PER_TASK: usize = 100;
const PREFIX: &str = "A realistic lively video of a scene";

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("prompt truth does not belong to task {0}")]
    UnknownTask(TaskKind),
    #[error("suite line {line}: {source}")]
    SuiteFormat { line: usize, source: serde_json::Error },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("thread pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Numeracy,
    AttributeBinding,
    Visibility,
    SpatialDynamics,
    SequentialActions,
}

impl TaskKind {
    pub const ALL: [TaskKind; 5] =
        [TaskKind::Numeracy, TaskKind::AttributeBinding, TaskKind::Visibility, TaskKind::SpatialDynamics, TaskKind::SequentialActions];

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Numeracy => "numeracy",
            TaskKind::AttributeBinding => "attribute_binding",
            TaskKind::Visibility => "visibility",
            TaskKind::SpatialDynamics => "spatial_dynamics",
            TaskKind::SequentialActions => "sequential_actions",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Half {
    First,
    Second,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    LeftToRight,
    RightToLeft,
}

impl Direction {
    fn words(self) -> (&'static str, &'static str) {
        match self {
            Direction::LeftToRight => ("left", "right"),
            Direction::RightToLeft => ("right", "left"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quadrant {
    UpperLeft,
    UpperRight,
    LowerLeft,
    LowerRight,
}

impl Quadrant {
    pub fn words(self) -> &'static str {
        match self {
            Quadrant::UpperLeft => "upper left",
            Quadrant::UpperRight => "upper right",
            Quadrant::LowerLeft => "lower left",
            Quadrant::LowerRight => "lower right",
        }
    }

    fn is_left(self) -> bool {
        matches!(self, Quadrant::UpperLeft | Quadrant::LowerLeft)
    }

    fn is_upper(self) -> bool {
        matches!(self, Quadrant::UpperLeft | Quadrant::UpperRight)
    }

    /// Quadrant of a point; points on a midline belong to none.
    pub fn of(x: f64, y: f64, canvas: Canvas) -> Option<Quadrant> {
        let (mx, my) = (canvas.width as f64 / 2.0, canvas.height as f64 / 2.0);
        if x == mx || y == my {
            return None;
        }
        Some(match (x < mx, y < my) {
            (true, true) => Quadrant::UpperLeft,
            (false, true) => Quadrant::UpperRight,
            (true, false) => Quadrant::LowerLeft,
            (false, false) => Quadrant::LowerRight,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "template", rename_all = "snake_case")]
pub enum Truth {
    Numeracy { number: u32, object: String },
    AttributeBinding { color1: String, object1: String, color2: String, object2: String },
    Visibility { object: String, half: Half },
    SpatialSingle { object: String, direction: Direction },
    SpatialRelative { object1: String, object2: String, direction: Direction },
    Sequential { object: String, locations: [Quadrant; 3] },
}

fn plural(noun: &str, n: u32) -> String {
    if n == 1 {
        noun.to_string()
    } else {
        format!("{noun}s")
    }
}

impl Truth {
    pub fn task(&self) -> TaskKind {
        match self {
            Truth::Numeracy { .. } => TaskKind::Numeracy,
            Truth::AttributeBinding { .. } => TaskKind::AttributeBinding,
            Truth::Visibility { .. } => TaskKind::Visibility,
            Truth::SpatialSingle { .. } | Truth::SpatialRelative { .. } => TaskKind::SpatialDynamics,
            Truth::Sequential { .. } => TaskKind::SequentialActions,
        }
    }

    /// Caption text from the task template.
    pub fn render(&self) -> String {
        match self {
            Truth::Numeracy { number, object } => format!("{PREFIX} with {number} {}", plural(object, *number)),
            Truth::AttributeBinding { color1, object1, color2, object2 } => {
                format!("{PREFIX} with a {color1} {object1} and a {color2} {object2}")
            }
            Truth::Visibility { object, half } => {
                let h = if *half == Half::First { "first" } else { "second" };
                format!("{PREFIX} in which a {object} appears only in the {h} half of the video")
            }
            Truth::SpatialSingle { object, direction } => {
                let (a, b) = direction.words();
                format!("{PREFIX} with a {object} moving from the {a} to the {b}")
            }
            Truth::SpatialRelative { object1, object2, direction } => {
                let (a, b) = direction.words();
                format!("{PREFIX} with a {object1} moving from the {a} of a {object2} to its {b}")
            }
            Truth::Sequential { object, locations } => format!(
                "{PREFIX} in which a {object} initially on the {} of the scene. It first moves to the {} of the scene and then moves to the {} of the scene.",
                locations[0].words(),
                locations[1].words(),
                locations[2].words()
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkPrompt {
    pub task: TaskKind,
    pub text: String,
    pub truth: Truth,
    pub seed: u64,
}

impl BenchmarkPrompt {
    fn new(truth: Truth, seed: u64) -> Self {
        Self { task: truth.task(), text: truth.render(), truth, seed }
    }
}

fn pick<'a>(rng: &mut ChaCha8Rng, pool: &[&'a str]) -> &'a str {
    pool.choose(rng).expect("pool is nonempty")
}

fn pick_two<'a>(rng: &mut ChaCha8Rng, pool: &[&'a str]) -> (&'a str, &'a str) {
    let a = pick(rng, pool);
    loop {
        let b = pick(rng, pool);
        if b != a {
            return (a, b);
        }
    }
}

fn direction(rng: &mut ChaCha8Rng) -> Direction {
    if rng.random_bool(0.5) {
        Direction::LeftToRight
    } else {
        Direction::RightToLeft
    }
}

fn sample_truth(task: TaskKind, rng: &mut ChaCha8Rng) -> Truth {
    match task {
        TaskKind::Numeracy => Truth::Numeracy { number: rng.random_range(1..=5), object: pick(rng, &OBJECTS).into() },
        TaskKind::AttributeBinding => {
            let (c1, c2) = pick_two(rng, &COLORS);
            let (o1, o2) = pick_two(rng, &OBJECTS);
            Truth::AttributeBinding { color1: c1.into(), object1: o1.into(), color2: c2.into(), object2: o2.into() }
        }
        TaskKind::Visibility => Truth::Visibility {
            object: pick(rng, &OBJECTS).into(),
            half: if rng.random_bool(0.5) { Half::First } else { Half::Second },
        },
        TaskKind::SpatialDynamics => {
            if rng.random_bool(0.5) {
                Truth::SpatialSingle { object: pick(rng, &OBJECTS).into(), direction: direction(rng) }
            } else {
                let (o1, o2) = pick_two(rng, &OBJECTS);
                Truth::SpatialRelative { object1: o1.into(), object2: o2.into(), direction: direction(rng) }
            }
        }
        TaskKind::SequentialActions => Truth::Sequential {
            object: pick(rng, &OBJECTS).into(),
            locations: *SEQUENTIAL_TRIPLES.choose(rng).expect("nonempty"),
        },
    }
}

/// 100 prompts per task, tasks in [`TaskKind::ALL`] order.
pub fn generate_suite(seed: u64) -> Vec<BenchmarkPrompt> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(PROMPTS_PER_TASK * TaskKind::ALL.len());
    for task in TaskKind::ALL {
        for _ in 0..PROMPTS_PER_TASK {
            let truth = sample_truth(task, &mut rng);
            let prompt_seed = rng.random();
            out.push(BenchmarkPrompt::new(truth, prompt_seed));
        }
    }
    out
}

/// The first `per_task` prompts of each task after a seeded shuffle.
pub fn stratified_subsample(suite: &[BenchmarkPrompt], per_task: usize, seed: u64) -> Vec<BenchmarkPrompt> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for task in TaskKind::ALL {
        let mut idx: Vec<usize> = (0..suite.len()).filter(|&i| suite[i].task == task).collect();
        rand::seq::SliceRandom::shuffle(idx.as_mut_slice(), &mut rng);
        idx.truncate(per_task);
        idx.sort_unstable();
        out.extend(idx.into_iter().map(|i| suite[i].clone()));
    }
    out
}

pub fn write_suite(suite: &[BenchmarkPrompt], mut w: impl Write) -> Result<(), BenchError> {
    for p in suite {
        serde_json::to_writer(&mut w, p).map_err(|e| BenchError::Io(e.into()))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_suite(r: impl BufRead) -> Result<Vec<BenchmarkPrompt>, BenchError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| BenchError::SuiteFormat { line: i + 1, source })?);
    }
    Ok(out)
}

// ---- verification ----

fn tokens(name: &str) -> Vec<String> {
    name.to_lowercase().split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).map(str::to_string).collect()
}

fn noun_matches(token: &str, noun: &str) -> bool {
    token == noun || token.strip_suffix('s') == Some(noun)
}

/// Whether a box name mentions `noun` as a whole token, singular or plural.
pub fn names_object(name: &str, noun: &str) -> bool {
    tokens(name).iter().any(|t| noun_matches(t, noun))
}

/// Whether `color` is immediately followed by `noun` in the name.
fn names_colored_object(name: &str, color: &str, noun: &str) -> bool {
    tokens(name).windows(2).any(|w| w[0] == color && noun_matches(&w[1], noun))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub passed: bool,
    pub reason: String,
}

impl Verdict {
    fn pass(reason: impl Into<String>) -> Self {
        Self { passed: true, reason: reason.into() }
    }

    fn fail(reason: impl Into<String>) -> Self {
        Self { passed: false, reason: reason.into() }
    }
}

/// Tunable thresholds of the rule set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerifyRules {
    /// Minimum horizontal CoM travel for single-object motion, as a share of the canvas width.
    pub min_displacement: f64,
}

impl Default for VerifyRules {
    fn default() -> Self {
        Self { min_displacement: 0.25 }
    }
}

fn ids_named(dsl: &DynamicSceneLayout, noun: &str) -> Vec<u32> {
    dsl.objects().into_iter().filter(|(_, n)| names_object(n, noun)).map(|(id, _)| id).collect()
}

pub fn verify(prompt: &BenchmarkPrompt, dsl: &DynamicSceneLayout) -> Result<Verdict, BenchError> {
    verify_with(prompt, dsl, &VerifyRules::default())
}

pub fn verify_with(prompt: &BenchmarkPrompt, dsl: &DynamicSceneLayout, rules: &VerifyRules) -> Result<Verdict, BenchError> {
    if prompt.truth.task() != prompt.task {
        return Err(BenchError::UnknownTask(prompt.task));
    }
    if dsl.frames.is_empty() {
        return Ok(Verdict::fail("layout has no frames"));
    }
    Ok(match &prompt.truth {
        Truth::Numeracy { number, object } => verify_numeracy(dsl, *number, object),
        Truth::AttributeBinding { color1, object1, color2, object2 } => verify_binding(dsl, [(color1, object1), (color2, object2)]),
        Truth::Visibility { object, half } => verify_visibility(dsl, object, *half),
        Truth::SpatialSingle { object, direction } => verify_single(dsl, object, *direction, rules),
        Truth::SpatialRelative { object1, object2, direction } => verify_relative(dsl, object1, object2, *direction),
        Truth::Sequential { object, locations } => verify_sequential(dsl, object, locations),
    })
}

fn verify_numeracy(dsl: &DynamicSceneLayout, number: u32, noun: &str) -> Verdict {
    for f in &dsl.frames {
        let n = f.boxes.iter().filter(|b| names_object(&b.name, noun)).count();
        if n != number as usize {
            return Verdict::fail(format!("frame {} has {n} {noun} boxes, expected {number}", f.index));
        }
    }
    Verdict::pass(format!("{number} {noun} boxes in every frame"))
}

fn verify_binding(dsl: &DynamicSceneLayout, targets: [(&String, &String); 2]) -> Verdict {
    let objects = dsl.objects();
    for (_, name) in &objects {
        for (ci, (color, _)) in targets.iter().enumerate() {
            for (oi, (_, noun)) in targets.iter().enumerate() {
                if ci != oi && targets[ci].0 != targets[oi].0 && names_colored_object(name, color, noun) {
                    return Verdict::fail(format!("box {name:?} binds {color} to {noun}"));
                }
            }
        }
    }
    let holders: Vec<Vec<u32>> = targets
        .iter()
        .map(|(c, o)| objects.iter().filter(|(_, n)| names_colored_object(n, c, o)).map(|(id, _)| *id).collect())
        .collect();
    for (k, (c, o)) in targets.iter().enumerate() {
        if holders[k].is_empty() {
            return Verdict::fail(format!("no box named {c} {o}"));
        }
    }
    let distinct = holders[0].iter().any(|a| holders[1].iter().any(|b| a != b));
    if !distinct {
        return Verdict::fail("both attributes are carried by the same box");
    }
    Verdict::pass("both colored objects present on distinct ids")
}

fn halves(n: usize) -> (std::ops::RangeInclusive<usize>, std::ops::RangeInclusive<usize>) {
    let mid = n.div_ceil(2);
    (1..=mid, mid + 1..=n)
}

fn verify_visibility(dsl: &DynamicSceneLayout, noun: &str, half: Half) -> Verdict {
    let (first, second) = halves(dsl.frames.len());
    let (want, other) = if half == Half::First { (first, second) } else { (second, first) };
    let present = |k: usize| dsl.frames[k - 1].boxes.iter().any(|b| names_object(&b.name, noun));
    if let Some(k) = other.clone().find(|&k| present(k)) {
        return Verdict::fail(format!("{noun} visible in frame {k}, outside the designated half"));
    }
    if !want.clone().any(present) {
        return Verdict::fail(format!("{noun} never visible in the designated half"));
    }
    Verdict::pass(format!("{noun} visible only in frames {}..={}", want.start(), want.end()))
}

/// CoM x at the first and last frames where `id` is present.
fn x_endpoints(dsl: &DynamicSceneLayout, id: u32) -> Option<(f64, f64)> {
    let t = dsl.trajectory_of(id).ok()?;
    let xs = t.xs();
    Some((*xs.first()?, *xs.last()?))
}

fn verify_single(dsl: &DynamicSceneLayout, noun: &str, dir: Direction, rules: &VerifyRules) -> Verdict {
    let ids = ids_named(dsl, noun);
    if ids.is_empty() {
        return Verdict::fail(format!("no {noun} box"));
    }
    let w = dsl.canvas.width as f64;
    let mid = w / 2.0;
    let mut last_reason = String::new();
    for id in ids {
        let Some((x0, x1)) = x_endpoints(dsl, id) else { continue };
        let (a, b) = match dir {
            Direction::LeftToRight => (x0, x1),
            Direction::RightToLeft => (w - x0, w - x1),
        };
        if a < mid && mid < b && b - a >= rules.min_displacement * w {
            return Verdict::pass(format!("id {id} CoM x {x0} -> {x1}"));
        }
        last_reason = format!("id {id} CoM x {x0} -> {x1} does not cross the midline far enough");
    }
    Verdict::fail(last_reason)
}

fn verify_relative(dsl: &DynamicSceneLayout, noun1: &str, noun2: &str, dir: Direction) -> Verdict {
    let (ids1, ids2) = (ids_named(dsl, noun1), ids_named(dsl, noun2));
    if ids1.is_empty() || ids2.is_empty() {
        return Verdict::fail(format!("missing {noun1} or {noun2} box"));
    }
    for &a in &ids1 {
        for &b in &ids2 {
            if a == b {
                continue;
            }
            let both: Vec<(f64, f64)> = dsl
                .frames
                .iter()
                .filter_map(|f| Some((f.get(a)?.com().x, f.get(b)?.com().x)))
                .collect();
            let (Some(first), Some(last)) = (both.first(), both.last()) else { continue };
            let (d0, d1) = (first.0 - first.1, last.0 - last.1);
            let ok = match dir {
                Direction::LeftToRight => d0 < 0.0 && d1 > 0.0,
                Direction::RightToLeft => d0 > 0.0 && d1 < 0.0,
            };
            if ok {
                return Verdict::pass(format!("{noun1} relative x {d0} -> {d1}"));
            }
        }
    }
    Verdict::fail(format!("{noun1} does not pass {noun2} in the stated direction"))
}

fn verify_sequential(dsl: &DynamicSceneLayout, noun: &str, locs: &[Quadrant; 3]) -> Verdict {
    let n = dsl.frames.len();
    if n < 3 {
        return Verdict::fail("need at least 3 frames");
    }
    let quad = |k: usize, id: u32| {
        let b = dsl.frames[k].get(id)?;
        let c = b.com();
        Quadrant::of(c.x, c.y, dsl.canvas)
    };
    for id in ids_named(dsl, noun) {
        if quad(0, id) == Some(locs[0]) && quad(n - 1, id) == Some(locs[2]) && (1..n - 1).any(|k| quad(k, id) == Some(locs[1])) {
            return Verdict::pass(format!("id {id} visits {} -> {} -> {}", locs[0].words(), locs[1].words(), locs[2].words()));
        }
    }
    Verdict::fail(format!("no {noun} visits {} -> {} -> {}", locs[0].words(), locs[1].words(), locs[2].words()))
}

// ---- oracle and mutator ----

const ORACLE_FRAMES: u32 = 6;
const SIDE: i32 = 80;

fn layout(frames: Vec<Vec<BoundingBox>>) -> DynamicSceneLayout {
    let frames = frames.into_iter().enumerate().map(|(i, boxes)| Frame { index: i as u32 + 1, boxes }).collect();
    DynamicSceneLayout::new(frames, "street").expect("oracle layouts are well formed")
}

fn lerp(a: i32, b: i32, k: u32) -> i32 {
    a + (b - a) * k as i32 / (ORACLE_FRAMES as i32 - 1)
}

/// Top-left corner of an 80px box centered in a quadrant of the 512 canvas.
fn quadrant_corner(q: Quadrant) -> (i32, i32) {
    let x = if q.is_left() { 128 } else { 384 };
    let y = if q.is_upper() { 128 } else { 384 };
    (x - SIDE / 2, y - SIDE / 2)
}

/// A small layout on the default canvas that satisfies the prompt.
pub fn synthesize_oracle_dsl(prompt: &BenchmarkPrompt) -> DynamicSceneLayout {
    let frames = 0..ORACLE_FRAMES;
    match &prompt.truth {
        Truth::Numeracy { number, object } => {
            let row: Vec<BoundingBox> =
                (0..*number).map(|i| BoundingBox::new(i, object.clone(), 16 + 96 * i as i32, 216, SIDE, SIDE)).collect();
            layout(frames.map(|_| row.clone()).collect())
        }
        Truth::AttributeBinding { color1, object1, color2, object2 } => {
            let row = vec![
                BoundingBox::new(0, format!("{color1} {object1}"), 64, 216, SIDE, SIDE),
                BoundingBox::new(1, format!("{color2} {object2}"), 368, 216, SIDE, SIDE),
            ];
            layout(frames.map(|_| row.clone()).collect())
        }
        Truth::Visibility { object, half } => {
            let (first, _) = halves(ORACLE_FRAMES as usize);
            layout(
                frames
                    .map(|k| {
                        let in_first = first.contains(&(k as usize + 1));
                        if in_first == (*half == Half::First) {
                            vec![BoundingBox::new(0, object.clone(), 216, 216, SIDE, SIDE)]
                        } else {
                            vec![]
                        }
                    })
                    .collect(),
            )
        }
        Truth::SpatialSingle { object, direction } => {
            let (x0, x1) = if *direction == Direction::LeftToRight { (16, 416) } else { (416, 16) };
            layout(frames.map(|k| vec![BoundingBox::new(0, object.clone(), lerp(x0, x1, k), 216, SIDE, SIDE)]).collect())
        }
        Truth::SpatialRelative { object1, object2, direction } => {
            let (x0, x1) = if *direction == Direction::LeftToRight { (16, 416) } else { (416, 16) };
            layout(
                frames
                    .map(|k| {
                        vec![
                            BoundingBox::new(0, object1.clone(), lerp(x0, x1, k), 120, SIDE, SIDE),
                            BoundingBox::new(1, object2.clone(), 216, 300, SIDE, SIDE),
                        ]
                    })
                    .collect(),
            )
        }
        Truth::Sequential { object, locations } => layout(
            frames
                .map(|k| {
                    let (x, y) = quadrant_corner(locations[(k / 2) as usize]);
                    vec![BoundingBox::new(0, object.clone(), x, y, SIDE, SIDE)]
                })
                .collect(),
        ),
    }
}

fn reverse_frames(dsl: &DynamicSceneLayout) -> DynamicSceneLayout {
    let n = dsl.frames.len();
    let frames = (0..n).map(|k| Frame { index: k as u32 + 1, boxes: dsl.frames[n - 1 - k].boxes.clone() }).collect();
    DynamicSceneLayout::new(frames, dsl.background.clone()).expect("same structure").with_canvas(dsl.canvas).with_fps(dsl.fps)
}

fn swap_words(name: &str, a: &str, b: &str) -> String {
    name.split(' ')
        .map(|t| {
            if t.eq_ignore_ascii_case(a) {
                b.to_string()
            } else if t.eq_ignore_ascii_case(b) {
                a.to_string()
            } else {
                t.to_string()
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// One targeted violation of a layout that satisfies `prompt`: a wrong count
/// in one frame, swapped colors, or time reversal (which moves presence to
/// the other half, flips directions and reorders visited locations).
pub fn mutate_to_fail(prompt: &BenchmarkPrompt, dsl: &DynamicSceneLayout, seed: u64) -> DynamicSceneLayout {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match &prompt.truth {
        Truth::Numeracy { number, object } => {
            let delta = if rng.random_bool(0.5) { 1 } else { -1 };
            mutate_count(dsl, *number, object, delta, rng.random_range(0..dsl.frames.len().max(1)))
        }
        Truth::AttributeBinding { color1, color2, .. } => {
            let mut out = dsl.clone();
            for f in &mut out.frames {
                for b in &mut f.boxes {
                    b.name = swap_words(&b.name, color1, color2);
                }
            }
            out
        }
        _ => reverse_frames(dsl),
    }
}

/// Sets the `noun` count of one frame to `number + delta`; a count of 1 with
/// `delta = -1` becomes 2 instead.
pub fn mutate_count(dsl: &DynamicSceneLayout, number: u32, noun: &str, delta: i32, frame: usize) -> DynamicSceneLayout {
    let mut out = dsl.clone();
    let delta = if number == 1 && delta < 0 { 1 } else { delta };
    let f = &mut out.frames[frame];
    if delta < 0 {
        if let Some(pos) = f.boxes.iter().rposition(|b| names_object(&b.name, noun)) {
            f.boxes.remove(pos);
        }
    } else {
        let next_id = dsl.objects().iter().map(|(id, _)| id + 1).max().unwrap_or(0);
        f.boxes.push(BoundingBox::new(next_id, noun, 216, 336, SIDE, SIDE));
    }
    out
}

// ---- running ----

/// Produces layouts for benchmark prompts.
pub trait DslGenerator: Sync {
    fn generate(&self, prompt: &BenchmarkPrompt, sample: u32) -> Result<DynamicSceneLayout, String>;
}

pub struct OracleGenerator;

impl DslGenerator for OracleGenerator {
    fn generate(&self, prompt: &BenchmarkPrompt, _sample: u32) -> Result<DynamicSceneLayout, String> {
        Ok(synthesize_oracle_dsl(prompt))
    }
}

pub struct MutatorGenerator;

impl DslGenerator for MutatorGenerator {
    fn generate(&self, prompt: &BenchmarkPrompt, sample: u32) -> Result<DynamicSceneLayout, String> {
        Ok(mutate_to_fail(prompt, &synthesize_oracle_dsl(prompt), prompt.seed.wrapping_add(sample as u64)))
    }
}

/// Queries a completion backend with the default prompt for each caption.
pub struct LlmGenerator<'a> {
    pub source: &'a dyn CompletionSource,
    pub config: LlmConfig,
}

impl DslGenerator for LlmGenerator<'_> {
    fn generate(&self, prompt: &BenchmarkPrompt, sample: u32) -> Result<DynamicSceneLayout, String> {
        let bundle = PromptBundle::new(prompt.text.clone()).map_err(|e| e.to_string())?;
        generate_dsl_sample(&bundle, &self.config, self.source, sample).map(|g| g.layout).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptVerdict {
    pub index: usize,
    pub task: TaskKind,
    pub text: String,
    pub sample: u32,
    pub passed: bool,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSummary {
    pub task: TaskKind,
    pub attempted: usize,
    pub passed: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictReport {
    pub tasks: Vec<TaskSummary>,
    /// Unweighted mean of the task rates that had attempts.
    pub average: f64,
    pub verdicts: Vec<PromptVerdict>,
}

impl VerdictReport {
    pub fn from_verdicts(verdicts: Vec<PromptVerdict>) -> Self {
        let tasks: Vec<TaskSummary> = TaskKind::ALL
            .iter()
            .map(|&task| {
                let attempted = verdicts.iter().filter(|v| v.task == task).count();
                let passed = verdicts.iter().filter(|v| v.task == task && v.passed).count();
                let rate = if attempted == 0 { 0.0 } else { passed as f64 / attempted as f64 };
                TaskSummary { task, attempted, passed, rate }
            })
            .collect();
        let active: Vec<f64> = tasks.iter().filter(|t| t.attempted > 0).map(|t| t.rate).collect();
        let average = if active.is_empty() { 0.0 } else { active.iter().sum::<f64>() / active.len() as f64 };
        Self { tasks, average, verdicts }
    }

    pub fn task(&self, task: TaskKind) -> &TaskSummary {
        self.tasks.iter().find(|t| t.task == task).expect("all tasks listed")
    }

    pub fn write_jsonl(&self, mut w: impl Write) -> std::io::Result<()> {
        for v in &self.verdicts {
            serde_json::to_writer(&mut w, v)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Header plus one row of percentages: five tasks then the average.
    pub fn summary_csv(&self) -> String {
        let mut head: Vec<&str> = TaskKind::ALL.iter().map(|t| t.name()).collect();
        head.push("average");
        let mut row: Vec<String> = self.tasks.iter().map(|t| format!("{:.1}", 100.0 * t.rate)).collect();
        row.push(format!("{:.1}", 100.0 * self.average));
        format!("{}\n{}\n", head.join(","), row.join(","))
    }

    pub fn summary_table(&self) -> String {
        let mut out = format!("{:<20} {:>9} {:>7} {:>7}\n", "task", "attempted", "passed", "rate");
        for t in &self.tasks {
            out.push_str(&format!("{:<20} {:>9} {:>7} {:>6.1}%\n", t.task.name(), t.attempted, t.passed, 100.0 * t.rate));
        }
        out.push_str(&format!("{:<20} {:>9} {:>7} {:>6.1}%\n", "average", "", "", 100.0 * self.average));
        out
    }
}

/// Verifies `generations` layouts per prompt. `jobs = 0` uses the rayon
/// default; verdicts always come back in prompt order.
pub fn run_benchmark(
    suite: &[BenchmarkPrompt],
    generator: &dyn DslGenerator,
    generations: u32,
    jobs: usize,
) -> Result<VerdictReport, BenchError> {
    run_benchmark_with(suite, generator, generations, jobs, &|_, _, _| {})
}

/// Like [`run_benchmark`], handing every generated layout to `on_layout` as
/// `(prompt index, sample, layout)` before it is verified.
pub fn run_benchmark_with(
    suite: &[BenchmarkPrompt],
    generator: &dyn DslGenerator,
    generations: u32,
    jobs: usize,
    on_layout: &(dyn Fn(usize, u32, &DynamicSceneLayout) + Sync),
) -> Result<VerdictReport, BenchError> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build().map_err(|e| BenchError::Pool(e.to_string()))?;
    let work: Vec<(usize, u32)> = (0..suite.len()).flat_map(|i| (0..generations).map(move |s| (i, s))).collect();
    let verdicts: Result<Vec<PromptVerdict>, BenchError> = pool.install(|| {
        work.par_iter()
            .map(|&(index, sample)| {
                let p = &suite[index];
                let (passed, reason) = match generator.generate(p, sample) {
                    Ok(dsl) => {
                        on_layout(index, sample, &dsl);
                        let v = verify(p, &dsl)?;
                        (v.passed, v.reason)
                    }
                    Err(e) => (false, format!("generation failed: {e}")),
                };
                Ok(PromptVerdict { index, task: p.task, text: p.text.clone(), sample, passed, reason })
            })
            .collect()
    });
    Ok(VerdictReport::from_verdicts(verdicts?))
}
