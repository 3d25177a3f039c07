//! JSON form: `{frames:[{index,boxes:[{id,name,box:[x,y,w,h]}]}], background, canvas:[w,h], fps}`.

use serde::{Deserialize, Serialize};

use super::{BoundingBox, Canvas, DslError, DynamicSceneLayout, Frame, DEFAULT_FPS};

#[derive(Serialize, Deserialize)]
struct JsonBox {
    id: u32,
    name: String,
    #[serde(rename = "box")]
    bbox: [i32; 4],
}

#[derive(Serialize, Deserialize)]
struct JsonFrame {
    index: u32,
    boxes: Vec<JsonBox>,
}

#[derive(Serialize, Deserialize)]
struct JsonLayout {
    frames: Vec<JsonFrame>,
    #[serde(default)]
    background: String,
    #[serde(default = "default_canvas")]
    canvas: [u32; 2],
    #[serde(default = "default_fps")]
    fps: f64,
}

fn default_canvas() -> [u32; 2] {
    let c = Canvas::default();
    [c.width, c.height]
}

fn default_fps() -> f64 {
    DEFAULT_FPS
}

impl Serialize for DynamicSceneLayout {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        JsonLayout {
            frames: self
                .frames
                .iter()
                .map(|f| JsonFrame {
                    index: f.index,
                    boxes: f
                        .boxes
                        .iter()
                        .map(|b| JsonBox { id: b.id, name: b.name.clone(), bbox: [b.x, b.y, b.w, b.h] })
                        .collect(),
                })
                .collect(),
            background: self.background.clone(),
            canvas: [self.canvas.width, self.canvas.height],
            fps: self.fps,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for DynamicSceneLayout {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = JsonLayout::deserialize(d)?;
        let frames = raw
            .frames
            .into_iter()
            .map(|f| Frame {
                index: f.index,
                boxes: f
                    .boxes
                    .into_iter()
                    .map(|b| BoundingBox { id: b.id, name: b.name, x: b.bbox[0], y: b.bbox[1], w: b.bbox[2], h: b.bbox[3] })
                    .collect(),
            })
            .collect();
        let canvas = Canvas::new(raw.canvas[0], raw.canvas[1]).map_err(serde::de::Error::custom)?;
        DynamicSceneLayout::new(frames, raw.background)
            .map(|l| l.with_canvas(canvas).with_fps(raw.fps))
            .map_err(serde::de::Error::custom)
    }
}

pub fn to_json(dsl: &DynamicSceneLayout) -> String {
    serde_json::to_string_pretty(dsl).expect("layout serializes")
}

pub fn from_json(text: &str) -> Result<DynamicSceneLayout, DslError> {
    Ok(serde_json::from_str(text)?)
}
