//! SVG views of layouts and PGM images of attention maps.

use std::fmt::Write as _;

use ndarray::ArrayView2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsl::{BoundingBox, DynamicSceneLayout, Frame};

#[derive(Debug, Error, PartialEq)]
pub enum RenderError {
    #[error("map has no positive entry")]
    ZeroMass,
    #[error("map has negative or non-finite entries")]
    InvalidMap,
    #[error("scale must be at least 1")]
    InvalidScale,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SvgOptions {
    pub show_ids: bool,
    pub show_names: bool,
    pub palette_seed: u64,
}

impl Default for SvgOptions {
    fn default() -> Self {
        Self { show_ids: true, show_names: true, palette_seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedLayout {
    pub frames: Vec<String>,
    pub animated: String,
}

fn hsl_to_hex(h: f64, s: f64, l: f64) -> String {
    let c = (1.0 - (2.0 * l - 1.0).abs()) * s;
    let hp = h * 6.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = l - c / 2.0;
    let to = |v: f64| ((v + m) * 255.0).round().clamp(0.0, 255.0) as u8;
    format!("#{:02x}{:02x}{:02x}", to(r), to(g), to(b))
}

/// Stable color for an id: hues spaced by the golden ratio, offset by the seed.
pub fn id_color(id: u32, palette_seed: u64) -> String {
    const PHI: f64 = 0.618_033_988_749_895;
    let offset = (palette_seed % 997) as f64 / 997.0;
    let hue = (offset + id as f64 * PHI).fract();
    hsl_to_hex(hue, 0.65, 0.45)
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            _ => out.push(c),
        }
    }
    out
}

fn label(b: &BoundingBox, opts: &SvgOptions) -> Option<String> {
    match (opts.show_ids, opts.show_names) {
        (true, true) => Some(format!("{}: {}", b.id, escape(&b.name))),
        (true, false) => Some(b.id.to_string()),
        (false, true) => Some(escape(&b.name)),
        (false, false) => None,
    }
}

fn header(out: &mut String, dsl: &DynamicSceneLayout) {
    let (w, h) = (dsl.canvas.width, dsl.canvas.height);
    writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#).unwrap();
    writeln!(out, r##"<rect x="0" y="0" width="{w}" height="{h}" fill="#ffffff" stroke="#000000"/>"##).unwrap();
}

fn frame_svg(dsl: &DynamicSceneLayout, frame: &Frame, opts: &SvgOptions) -> String {
    let mut out = String::new();
    header(&mut out, dsl);
    writeln!(out, r##"<text x="6" y="18" font-family="monospace" font-size="14" fill="#000000">frame {} | {}</text>"##, frame.index, escape(&dsl.background)).unwrap();
    for b in &frame.boxes {
        let color = id_color(b.id, opts.palette_seed);
        writeln!(
            out,
            r#"<rect x="{}" y="{}" width="{}" height="{}" fill="{color}" fill-opacity="0.15" stroke="{color}" stroke-width="3"/>"#,
            b.x, b.y, b.w, b.h
        )
        .unwrap();
        if let Some(text) = label(b, opts) {
            writeln!(out, r#"<text x="{}" y="{}" font-family="monospace" font-size="14" fill="{color}">{text}</text>"#, b.x + 4, b.y + 16).unwrap();
        }
    }
    out.push_str("</svg>\n");
    out
}

fn animated_svg(dsl: &DynamicSceneLayout, opts: &SvgOptions) -> String {
    let mut out = String::new();
    header(&mut out, dsl);
    let n = dsl.frames.len();
    if n == 0 {
        out.push_str("</svg>\n");
        return out;
    }
    let dur = n as f64 / dsl.fps;
    let key_times: Vec<String> = (0..n).map(|k| format!("{}", k as f64 / n as f64)).collect();
    let key_times = key_times.join(";");
    let anim = |attr: &str, vals: &[String]| {
        format!(
            r#"<animate attributeName="{attr}" values="{}" keyTimes="{key_times}" dur="{dur}s" calcMode="discrete" repeatCount="indefinite"/>"#,
            vals.join(";")
        )
    };
    for (id, name) in dsl.objects() {
        let color = id_color(id, opts.palette_seed);
        let boxes: Vec<Option<&BoundingBox>> = dsl.frames.iter().map(|f| f.get(id)).collect();
        let first = boxes.iter().flatten().next().expect("object appears somewhere");
        let col = |f: fn(&BoundingBox) -> i32| -> Vec<String> { boxes.iter().map(|b| b.map_or(f(first), f).to_string()).collect() };
        let vis: Vec<String> = boxes.iter().map(|b| if b.is_some() { "visible" } else { "hidden" }.to_string()).collect();
        writeln!(out, r#"<g id="obj-{id}">"#).unwrap();
        writeln!(
            out,
            r#"<rect x="{}" y="{}" width="{}" height="{}" fill="{color}" fill-opacity="0.15" stroke="{color}" stroke-width="3">"#,
            first.x, first.y, first.w, first.h
        )
        .unwrap();
        for (attr, vals) in [("x", col(|b| b.x)), ("y", col(|b| b.y)), ("width", col(|b| b.w)), ("height", col(|b| b.h)), ("visibility", vis.clone())] {
            writeln!(out, "{}", anim(attr, &vals)).unwrap();
        }
        out.push_str("</rect>\n");
        let shown = BoundingBox { name, ..(*first).clone() };
        if let Some(text) = label(&shown, opts) {
            writeln!(out, r#"<text x="{}" y="{}" font-family="monospace" font-size="14" fill="{color}">{text}"#, first.x + 4, first.y + 16).unwrap();
            let tx: Vec<String> = col(|b| b.x + 4);
            let ty: Vec<String> = col(|b| b.y + 16);
            for (attr, vals) in [("x", tx), ("y", ty), ("visibility", vis)] {
                writeln!(out, "{}", anim(attr, &vals)).unwrap();
            }
            out.push_str("</text>\n");
        }
        out.push_str("</g>\n");
    }
    out.push_str("</svg>\n");
    out
}

/// One SVG per frame plus an animated SVG that steps through the frames at
/// the layout's frame rate.
pub fn render_dsl_svg(dsl: &DynamicSceneLayout, opts: &SvgOptions) -> RenderedLayout {
    let frames = dsl.frames.par_iter().map(|f| frame_svg(dsl, f, opts)).collect();
    RenderedLayout { frames, animated: animated_svg(dsl, opts) }
}

/// Binary PGM, max-normalized to 255, each cell drawn as a `scale x scale` block.
pub fn render_attention_pgm(a: ArrayView2<'_, f64>, scale: usize) -> Result<Vec<u8>, RenderError> {
    if scale == 0 {
        return Err(RenderError::InvalidScale);
    }
    if a.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(RenderError::InvalidMap);
    }
    let max = a.fold(0.0_f64, |m, &v| m.max(v));
    if max <= 0.0 {
        return Err(RenderError::ZeroMass);
    }
    let (h, w) = a.dim();
    let mut out = format!("P5\n{} {}\n255\n", w * scale, h * scale).into_bytes();
    for row in a.rows() {
        let line: Vec<u8> =
            row.iter().flat_map(|&v| std::iter::repeat_n((v / max * 255.0).round() as u8, scale)).collect();
        for _ in 0..scale {
            out.extend_from_slice(&line);
        }
    }
    Ok(out)
}
