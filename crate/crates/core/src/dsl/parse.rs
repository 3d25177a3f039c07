use std::fmt::Write as _;

use super::{round_half_up, BoundingBox, DslError, DynamicSceneLayout, Frame};

const REASONING: &str = "Reasoning:";
const BACKGROUND: &str = "Background keyword:";

/// A parsed layout completion plus the reasoning statement that preceded it.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedCompletion {
    pub layout: DynamicSceneLayout,
    pub reasoning: Option<String>,
}

#[derive(PartialEq)]
enum State {
    Preamble,
    Reasoning,
    Frames,
}

/// Parses a raw completion in the `Frame k: [...]` grammar.
///
/// Prose before the `Reasoning:` line (or the first frame line) is skipped;
/// everything after the `Background keyword:` line is ignored.
pub fn parse_dsl(text: &str) -> Result<ParsedCompletion, DslError> {
    if text.trim().is_empty() {
        return Err(DslError::EmptyCompletion);
    }

    let mut state = State::Preamble;
    let mut reasoning: Option<String> = None;
    let mut frames: Vec<Frame> = Vec::new();
    let mut background = String::new();

    for (n, raw) in text.lines().enumerate() {
        let line_no = n + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('-') {
            return Err(malformed(line_no, "lines must not start with '-'"));
        }
        if is_frame_line(line) {
            frames.push(parse_frame_line(line, line_no)?);
            state = State::Frames;
            continue;
        }
        match state {
            State::Preamble => {
                if let Some(rest) = line.strip_prefix(REASONING) {
                    reasoning = Some(rest.trim().to_string());
                    state = State::Reasoning;
                }
            }
            State::Reasoning => {
                let r = reasoning.get_or_insert_with(String::new);
                if !r.is_empty() {
                    r.push(' ');
                }
                r.push_str(line);
            }
            State::Frames => {
                if let Some(rest) = line.strip_prefix(BACKGROUND) {
                    background = rest.trim().to_string();
                    break;
                }
                return Err(malformed(line_no, "expected a frame or background keyword line"));
            }
        }
    }

    let layout = DynamicSceneLayout::new(frames, background)?;
    Ok(ParsedCompletion { layout, reasoning })
}

/// Renders a layout back into the completion grammar (frames and background
/// line, no reasoning, no trailing newline).
pub fn serialize_dsl(dsl: &DynamicSceneLayout) -> String {
    let mut out = String::new();
    for frame in &dsl.frames {
        let _ = write!(out, "Frame {}: [", frame.index);
        for (i, b) in frame.boxes.iter().enumerate() {
            if i > 0 {
                out.push_str(", ");
            }
            let _ = write!(
                out,
                "{{'id': {}, 'name': {}, 'box': [{}, {}, {}, {}]}}",
                b.id,
                quote(&b.name),
                b.x,
                b.y,
                b.w,
                b.h
            );
        }
        out.push_str("]\n");
    }
    let _ = write!(out, "{BACKGROUND} {}", dsl.background);
    out
}

fn quote(s: &str) -> String {
    let mut q = String::with_capacity(s.len() + 2);
    q.push('\'');
    for c in s.chars() {
        match c {
            '\'' => q.push_str("\\'"),
            '\\' => q.push_str("\\\\"),
            _ => q.push(c),
        }
    }
    q.push('\'');
    q
}

fn is_frame_line(line: &str) -> bool {
    line.strip_prefix("Frame")
        .and_then(|rest| rest.chars().next())
        .is_some_and(|c| c.is_ascii_digit() || c.is_whitespace())
}

fn malformed(line: usize, reason: impl Into<String>) -> DslError {
    DslError::MalformedFrameLine { line, reason: reason.into() }
}

fn parse_frame_line(line: &str, line_no: usize) -> Result<Frame, DslError> {
    let rest = line.strip_prefix("Frame").unwrap_or(line).trim_start();
    let colon = rest.find(':').ok_or_else(|| malformed(line_no, "missing ':' after frame index"))?;
    let index: u32 = rest[..colon]
        .trim()
        .parse()
        .map_err(|_| malformed(line_no, format!("bad frame index {:?}", rest[..colon].trim())))?;
    let mut cur = Cursor { src: &rest.as_bytes()[colon + 1..], pos: 0, line: line_no };
    let boxes = cur.record_list(index)?;
    cur.skip_ws();
    if cur.pos != cur.src.len() {
        return Err(cur.err("trailing characters after frame list"));
    }
    Ok(Frame { index, boxes })
}

enum Value {
    Str(String),
    Num(f64),
    List(Vec<f64>),
}

struct Cursor<'a> {
    src: &'a [u8],
    pos: usize,
    line: usize,
}

impl Cursor<'_> {
    fn err(&self, reason: &str) -> DslError {
        malformed(self.line, format!("{reason} (column {})", self.pos + 1))
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn expect(&mut self, c: u8) -> Result<(), DslError> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err(&format!("expected '{}'", c as char)))
        }
    }

    /// Consumes `c` if it is next. Returns whether it was.
    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn record_list(&mut self, frame: u32) -> Result<Vec<BoundingBox>, DslError> {
        self.expect(b'[')?;
        let mut boxes = Vec::new();
        loop {
            if self.eat(b']') {
                return Ok(boxes);
            }
            boxes.push(self.record(frame)?);
            if !self.eat(b',') {
                self.expect(b']')?;
                return Ok(boxes);
            }
        }
    }

    fn record(&mut self, frame: u32) -> Result<BoundingBox, DslError> {
        self.expect(b'{')?;
        let (mut id, mut name, mut coords) = (None, None, None);
        loop {
            if self.eat(b'}') {
                break;
            }
            let key = self.string()?;
            self.expect(b':')?;
            let value = self.value()?;
            match (key.as_str(), value) {
                ("id", Value::Num(v)) if id.is_none() => {
                    if v < 0.0 || v.fract() != 0.0 || v > f64::from(u32::MAX) {
                        return Err(self.err("id must be a nonnegative integer"));
                    }
                    id = Some(v as u32);
                }
                ("name", Value::Str(s)) if name.is_none() => name = Some(s),
                ("box", Value::List(v)) if coords.is_none() => {
                    if v.len() != 4 {
                        return Err(self.err("box must have four coordinates"));
                    }
                    coords = Some(v);
                }
                ("id" | "name" | "box", _) => {
                    return Err(self.err(&format!("bad or repeated value for key '{key}'")))
                }
                _ => return Err(self.err(&format!("unknown key '{key}'"))),
            }
            if !self.eat(b',') {
                self.expect(b'}')?;
                break;
            }
        }
        let (Some(id), Some(name), Some(c)) = (id, name, coords) else {
            return Err(self.err("record needs 'id', 'name' and 'box'"));
        };
        let r = |v: f64| round_half_up(v) as i32;
        let (x, y, w, h) = (r(c[0]), r(c[1]), r(c[2]), r(c[3]));
        if w <= 0 || h <= 0 {
            return Err(DslError::InvalidBox { frame, id, w, h });
        }
        Ok(BoundingBox { id, name, x, y, w, h })
    }

    fn value(&mut self) -> Result<Value, DslError> {
        match self.peek() {
            Some(b'\'' | b'"') => self.string().map(Value::Str),
            Some(b'[') => {
                self.pos += 1;
                let mut nums = Vec::new();
                loop {
                    if self.eat(b']') {
                        break;
                    }
                    nums.push(self.number()?);
                    if !self.eat(b',') {
                        self.expect(b']')?;
                        break;
                    }
                }
                Ok(Value::List(nums))
            }
            _ => self.number().map(Value::Num),
        }
    }

    fn number(&mut self) -> Result<f64, DslError> {
        self.skip_ws();
        let start = self.pos;
        if matches!(self.src.get(self.pos), Some(b'-' | b'+')) {
            self.pos += 1;
        }
        while matches!(self.src.get(self.pos), Some(c) if c.is_ascii_digit() || *c == b'.') {
            self.pos += 1;
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap_or("");
        text.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| self.err(&format!("expected a number, found {text:?}")))
    }

    fn string(&mut self) -> Result<String, DslError> {
        let q = match self.peek() {
            Some(q @ (b'\'' | b'"')) => q,
            _ => return Err(self.err("expected a quoted string")),
        };
        self.pos += 1;
        let mut bytes = Vec::new();
        loop {
            match self.src.get(self.pos) {
                None => return Err(self.err("unterminated string")),
                Some(&c) if c == q => {
                    self.pos += 1;
                    break;
                }
                Some(b'\\') => {
                    let escaped = *self.src.get(self.pos + 1).ok_or_else(|| self.err("dangling escape"))?;
                    bytes.push(escaped);
                    self.pos += 2;
                }
                Some(&c) => {
                    bytes.push(c);
                    self.pos += 1;
                }
            }
        }
        String::from_utf8(bytes).map_err(|_| self.err("invalid utf-8 in string"))
    }
}
