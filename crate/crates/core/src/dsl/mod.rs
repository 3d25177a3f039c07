//! Dynamic scene layouts: per-frame, id-linked bounding boxes on a pixel canvas.
//!
//! The text grammar produced by the layout generator looks like
//!
//! ```text
//! Reasoning: A ball is thrown ...
//! Frame 1: [{'id': 0, 'name': 'red ball', 'box': [0, 206, 50, 50]}]
//! Frame 2: [{'id': 0, 'name': 'red ball', 'box': [80, 246, 50, 50]}]
//! Background keyword: garden
//! ```
//!
//! Boxes are `[x, y, w, h]` with a top-left origin and y growing downward.

mod interp;
mod json;
mod parse;
mod validate;

use std::collections::BTreeMap;

use thiserror::Error;

pub use interp::interpolate_frames;
pub use json::{from_json, to_json};
pub use parse::{parse_dsl, serialize_dsl, ParsedCompletion};
pub use validate::{validate_dsl, Violation};

/// Default canvas edge, in pixels.
pub const DEFAULT_CANVAS: u32 = 512;
/// Default layout frame rate.
pub const DEFAULT_FPS: f64 = 2.0;
/// Frame count requested from the layout generator.
pub const DEFAULT_FRAMES: usize = 6;

#[derive(Debug, Error)]
pub enum DslError {
    #[error("empty completion")]
    EmptyCompletion,
    #[error("line {line}: malformed frame line: {reason}")]
    MalformedFrameLine { line: usize, reason: String },
    #[error("frame indices must run 1..N consecutively, found {found:?}")]
    MissingFrames { found: Vec<u32> },
    #[error("frame {frame}: id {id} appears more than once")]
    DuplicateIdInFrame { frame: u32, id: u32 },
    #[error("id {id} is named both {first:?} and {second:?}")]
    InconsistentName { id: u32, first: String, second: String },
    #[error("frame {frame}: box {id} has non-positive size {w}x{h}")]
    InvalidBox { frame: u32, id: u32, w: i32, h: i32 },
    #[error("cannot resample {source_frames} frames to {target}")]
    TargetTooSmall { source_frames: usize, target: usize },
    #[error("unknown object id {0}")]
    UnknownId(u32),
    #[error("invalid canvas {width}x{height}")]
    InvalidCanvas { width: u32, height: u32 },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl DslError {
    /// Stable short name of the variant, for logs.
    pub fn kind(&self) -> &'static str {
        match self {
            DslError::EmptyCompletion => "empty_completion",
            DslError::MalformedFrameLine { .. } => "malformed_frame_line",
            DslError::MissingFrames { .. } => "missing_frames",
            DslError::DuplicateIdInFrame { .. } => "duplicate_id_in_frame",
            DslError::InconsistentName { .. } => "inconsistent_name",
            DslError::InvalidBox { .. } => "invalid_box",
            DslError::TargetTooSmall { .. } => "target_too_small",
            DslError::UnknownId(_) => "unknown_id",
            DslError::InvalidCanvas { .. } => "invalid_canvas",
            DslError::Json(_) => "json",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Canvas {
    pub width: u32,
    pub height: u32,
}

impl Canvas {
    pub fn new(width: u32, height: u32) -> Result<Self, DslError> {
        if width == 0 || height == 0 {
            return Err(DslError::InvalidCanvas { width, height });
        }
        Ok(Self { width, height })
    }
}

impl Default for Canvas {
    fn default() -> Self {
        Self { width: DEFAULT_CANVAS, height: DEFAULT_CANVAS }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoundingBox {
    pub id: u32,
    pub name: String,
    pub x: i32,
    pub y: i32,
    pub w: i32,
    pub h: i32,
}

impl BoundingBox {
    pub fn new(id: u32, name: impl Into<String>, x: i32, y: i32, w: i32, h: i32) -> Self {
        Self { id, name: name.into(), x, y, w, h }
    }

    pub fn area(&self) -> f64 {
        f64::from(self.w) * f64::from(self.h)
    }

    /// Center of mass of the filled rectangle.
    pub fn com(&self) -> Point {
        box_com(self)
    }

    pub fn intersection_area(&self, other: &BoundingBox) -> f64 {
        let ix = (i64::from(self.x + self.w).min(i64::from(other.x + other.w))
            - i64::from(self.x).max(i64::from(other.x)))
        .max(0);
        let iy = (i64::from(self.y + self.h).min(i64::from(other.y + other.h))
            - i64::from(self.y).max(i64::from(other.y)))
        .max(0);
        (ix * iy) as f64
    }

    pub fn iou(&self, other: &BoundingBox) -> f64 {
        let inter = self.intersection_area(other);
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }
}

pub fn box_com(b: &BoundingBox) -> Point {
    Point { x: f64::from(b.x) + f64::from(b.w) / 2.0, y: f64::from(b.y) + f64::from(b.h) / 2.0 }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    /// 1-based.
    pub index: u32,
    pub boxes: Vec<BoundingBox>,
}

impl Frame {
    pub fn get(&self, id: u32) -> Option<&BoundingBox> {
        self.boxes.iter().find(|b| b.id == id)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicSceneLayout {
    pub frames: Vec<Frame>,
    pub background: String,
    pub canvas: Canvas,
    pub fps: f64,
}

impl DynamicSceneLayout {
    /// Builds a layout and checks its structural invariants: consecutive
    /// 1-based frame indices, unique ids per frame, one name per id and
    /// positive box sizes.
    pub fn new(frames: Vec<Frame>, background: impl Into<String>) -> Result<Self, DslError> {
        let dsl = Self {
            frames,
            background: background.into(),
            canvas: Canvas::default(),
            fps: DEFAULT_FPS,
        };
        dsl.check_structure()?;
        Ok(dsl)
    }

    pub fn with_canvas(mut self, canvas: Canvas) -> Self {
        self.canvas = canvas;
        self
    }

    pub fn with_fps(mut self, fps: f64) -> Self {
        self.fps = fps;
        self
    }

    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.iter().all(|f| f.boxes.is_empty())
    }

    pub fn check_structure(&self) -> Result<(), DslError> {
        let indices: Vec<u32> = self.frames.iter().map(|f| f.index).collect();
        if indices.is_empty() || indices.iter().enumerate().any(|(i, &k)| k as usize != i + 1) {
            return Err(DslError::MissingFrames { found: indices });
        }
        let mut names: BTreeMap<u32, &str> = BTreeMap::new();
        for frame in &self.frames {
            for (n, b) in frame.boxes.iter().enumerate() {
                if frame.boxes[..n].iter().any(|o| o.id == b.id) {
                    return Err(DslError::DuplicateIdInFrame { frame: frame.index, id: b.id });
                }
                if b.w <= 0 || b.h <= 0 {
                    return Err(DslError::InvalidBox { frame: frame.index, id: b.id, w: b.w, h: b.h });
                }
                match names.get(&b.id) {
                    Some(&first) if first != b.name => {
                        return Err(DslError::InconsistentName {
                            id: b.id,
                            first: first.to_string(),
                            second: b.name.clone(),
                        })
                    }
                    Some(_) => {}
                    None => {
                        names.insert(b.id, &b.name);
                    }
                }
            }
        }
        Ok(())
    }

    /// All object ids in ascending order, with their names.
    pub fn objects(&self) -> Vec<(u32, String)> {
        let mut out: BTreeMap<u32, String> = BTreeMap::new();
        for b in self.frames.iter().flat_map(|f| &f.boxes) {
            out.entry(b.id).or_insert_with(|| b.name.clone());
        }
        out.into_iter().collect()
    }

    pub fn trajectory_of(&self, id: u32) -> Result<Trajectory, DslError> {
        trajectory_of(self, id)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySample {
    pub frame: u32,
    pub com: Point,
    pub area: f64,
    pub width: f64,
    pub height: f64,
}

/// Per-frame view of one object across a layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub id: u32,
    pub name: String,
    pub samples: Vec<TrajectorySample>,
    pub present: Vec<bool>,
}

impl Trajectory {
    pub fn xs(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.com.x).collect()
    }

    pub fn ys(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.com.y).collect()
    }

    pub fn areas(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.area).collect()
    }
}

pub fn trajectory_of(dsl: &DynamicSceneLayout, id: u32) -> Result<Trajectory, DslError> {
    let mut name = None;
    let mut samples = Vec::new();
    let mut present = Vec::with_capacity(dsl.frames.len());
    for frame in &dsl.frames {
        match frame.get(id) {
            Some(b) => {
                name.get_or_insert_with(|| b.name.clone());
                samples.push(TrajectorySample {
                    frame: frame.index,
                    com: box_com(b),
                    area: b.area(),
                    width: f64::from(b.w),
                    height: f64::from(b.h),
                });
                present.push(true);
            }
            None => present.push(false),
        }
    }
    let name = name.ok_or(DslError::UnknownId(id))?;
    Ok(Trajectory { id, name, samples, present })
}

/// Rounds half-up (toward +inf at .5), as applied to decimal coordinates.
pub(crate) fn round_half_up(v: f64) -> f64 {
    (v + 0.5).floor()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn com_of_ball_box() {
        let b = BoundingBox::new(0, "red ball", 0, 206, 50, 50);
        assert_eq!(box_com(&b), Point { x: 25.0, y: 231.0 });
    }

    #[test]
    fn com_of_full_canvas_box_is_center() {
        let b = BoundingBox::new(0, "bg", 0, 0, 512, 512);
        assert_eq!(box_com(&b), Point { x: 256.0, y: 256.0 });
    }

    #[test]
    fn iou_of_identical_boxes_is_one() {
        let b = BoundingBox::new(0, "a", 10, 10, 30, 40);
        assert_eq!(b.iou(&b.clone()), 1.0);
        let far = BoundingBox::new(1, "b", 100, 100, 5, 5);
        assert_eq!(b.iou(&far), 0.0);
    }

    #[test]
    fn unknown_id_is_reported() {
        let dsl = DynamicSceneLayout::new(
            vec![Frame { index: 1, boxes: vec![BoundingBox::new(0, "a", 0, 0, 5, 5)] }],
            "",
        )
        .unwrap();
        assert!(matches!(dsl.trajectory_of(7), Err(DslError::UnknownId(7))));
    }

    #[test]
    fn structure_rejects_bad_layouts() {
        let dup = vec![Frame {
            index: 1,
            boxes: vec![BoundingBox::new(0, "a", 0, 0, 5, 5), BoundingBox::new(0, "a", 9, 0, 5, 5)],
        }];
        assert!(matches!(
            DynamicSceneLayout::new(dup, ""),
            Err(DslError::DuplicateIdInFrame { frame: 1, id: 0 })
        ));
        let gap = vec![Frame { index: 2, boxes: vec![] }];
        assert!(matches!(DynamicSceneLayout::new(gap, ""), Err(DslError::MissingFrames { .. })));
        let flat = vec![Frame { index: 1, boxes: vec![BoundingBox::new(0, "a", 0, 0, 0, 5)] }];
        assert!(matches!(DynamicSceneLayout::new(flat, ""), Err(DslError::InvalidBox { .. })));
    }

    #[test]
    fn half_up_rounding() {
        assert_eq!(round_half_up(2.5), 3.0);
        assert_eq!(round_half_up(2.49), 2.0);
        assert_eq!(round_half_up(-2.5), -2.0);
    }
}
