//! The layout-generation prompt: instruction text, in-context examples and the
//! query caption, rendered either as chat messages or as one merged text.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsl::{self, DslError, DynamicSceneLayout};

const DEFAULT_TEMPLATE: &str = include_str!("../data/prompt_template.txt");

const DEFAULT_EXAMPLES: [&str; 3] = [
    include_str!("../data/examples/01_walking_and_jumping.txt"),
    include_str!("../data/examples/02_thrown_ball.txt"),
    include_str!("../data/examples/03_receding_painting.txt"),
];

/// Two additional examples for the five-example configuration. These are
/// local compositions, not part of the reference example set.
const EXTRA_EXAMPLES: [&str; 2] = [
    include_str!("../data/examples/04_extra_hidden_cat.txt"),
    include_str!("../data/examples/05_extra_approaching_car.txt"),
];

const EXAMPLES_SLOT: &str = "{examples}";
const CAPTION_SLOT: &str = "{caption}";
const REASONING_CUE: &str = "Reasoning:";

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("query caption is empty")]
    EmptyCaption,
    #[error("prompt template must contain {0}")]
    MissingSlot(&'static str),
    #[error("malformed in-context example: {0}")]
    MalformedExample(String),
    #[error("in-context example layout: {0}")]
    ExampleLayout(#[from] DslError),
    #[error("unsupported example count {0} (at most 5)")]
    ExampleCount(usize),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Canvas size, frame count and frame rate substituted into the instructions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemplateParams {
    pub width: u32,
    pub height: u32,
    pub frames: u32,
    pub fps: f64,
}

impl Default for TemplateParams {
    fn default() -> Self {
        Self { width: dsl::DEFAULT_CANVAS, height: dsl::DEFAULT_CANVAS, frames: dsl::DEFAULT_FRAMES as u32, fps: dsl::DEFAULT_FPS }
    }
}

/// Prompt text with `{frames}`, `{fps}`, `{width}`, `{height}`, `{examples}`
/// and `{caption}` placeholders.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplate {
    text: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self { text: DEFAULT_TEMPLATE.trim_end().to_string() }
    }
}

impl PromptTemplate {
    pub fn parse(text: &str) -> Result<Self, PromptError> {
        let text = text.trim_end();
        for slot in [EXAMPLES_SLOT, CAPTION_SLOT] {
            if !text.contains(slot) {
                return Err(PromptError::MissingSlot(slot));
            }
        }
        Ok(Self { text: text.to_string() })
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, PromptError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Instruction paragraphs, i.e. everything before the examples slot.
    pub fn system_text(&self, params: &TemplateParams) -> String {
        let head = self.text.split(EXAMPLES_SLOT).next().unwrap_or_default().trim_end();
        head.replace("{frames}", &number_word(params.frames))
            .replace("{fps}", &fps_word(params.fps))
            .replace("{width}", &params.width.to_string())
            .replace("{height}", &params.height.to_string())
    }

    /// The query section with `{caption}` left in place.
    pub fn query_text(&self) -> String {
        self.text.split(EXAMPLES_SLOT).nth(1).unwrap_or_default().trim_start().to_string()
    }
}

fn number_word(n: u32) -> String {
    const WORDS: [&str; 21] = [
        "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten", "eleven",
        "twelve", "thirteen", "fourteen", "fifteen", "sixteen", "seventeen", "eighteen", "nineteen", "twenty",
    ];
    WORDS.get(n as usize).map_or_else(|| n.to_string(), |w| (*w).to_string())
}

fn fps_word(fps: f64) -> String {
    if fps.fract() == 0.0 && (0.0..=20.0).contains(&fps) {
        number_word(fps as u32)
    } else {
        fps.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InContextExample {
    pub caption: String,
    pub reasoning: String,
    /// Frame lines plus the background line.
    pub dsl_text: String,
}

impl InContextExample {
    /// Parses a `Caption: / Reasoning: / Frame ... / Background keyword:` block.
    pub fn parse(text: &str) -> Result<Self, PromptError> {
        let text = text.trim();
        let mut lines = text.lines();
        let caption = lines
            .next()
            .and_then(|l| l.strip_prefix("Caption:"))
            .ok_or_else(|| PromptError::MalformedExample("first line must start with 'Caption:'".into()))?
            .trim()
            .to_string();
        let reasoning = lines
            .next()
            .and_then(|l| l.strip_prefix(REASONING_CUE))
            .ok_or_else(|| PromptError::MalformedExample("second line must start with 'Reasoning:'".into()))?
            .trim()
            .to_string();
        let dsl_text = lines.collect::<Vec<_>>().join("\n");
        dsl::parse_dsl(&dsl_text)?;
        Ok(Self { caption, reasoning, dsl_text })
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, PromptError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// The three reference examples, in order: walking and jumping, thrown ball, receding painting.
    pub fn defaults() -> Vec<Self> {
        DEFAULT_EXAMPLES.iter().map(|t| Self::parse(t).expect("built-in example parses")).collect()
    }

    pub fn extras() -> Vec<Self> {
        EXTRA_EXAMPLES.iter().map(|t| Self::parse(t).expect("built-in example parses")).collect()
    }

    /// `count` examples for the 1/3/5 ablation. A single example is picked by
    /// `offset` among the defaults; larger sets take the defaults first, then
    /// the extras.
    pub fn select(count: usize, offset: usize) -> Result<Vec<Self>, PromptError> {
        let mut all = Self::defaults();
        if count == 1 {
            return Ok(vec![all.swap_remove(offset % all.len())]);
        }
        all.extend(Self::extras());
        if count > all.len() {
            return Err(PromptError::ExampleCount(count));
        }
        all.truncate(count);
        Ok(all)
    }

    pub fn layout(&self) -> DynamicSceneLayout {
        dsl::parse_dsl(&self.dsl_text).expect("validated at construction").layout
    }

    pub fn caption_line(&self) -> String {
        format!("Caption: {}", self.caption)
    }

    /// The assistant turn: reasoning line followed by the layout.
    pub fn response_text(&self) -> String {
        format!("{REASONING_CUE} {}\n{}", self.reasoning, self.dsl_text)
    }

    pub fn render(&self) -> String {
        format!("{}\n{}", self.caption_line(), self.response_text())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        Self { role, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptBundle {
    pub system_text: String,
    pub examples: Vec<InContextExample>,
    pub query_caption: String,
    query_text: String,
}

impl PromptBundle {
    /// Default template and parameters with the three reference examples.
    pub fn new(query_caption: impl Into<String>) -> Result<Self, PromptError> {
        Self::with_template(&PromptTemplate::default(), &TemplateParams::default(), InContextExample::defaults(), query_caption)
    }

    pub fn with_template(
        template: &PromptTemplate,
        params: &TemplateParams,
        examples: Vec<InContextExample>,
        query_caption: impl Into<String>,
    ) -> Result<Self, PromptError> {
        let query_caption = query_caption.into();
        if query_caption.trim().is_empty() {
            return Err(PromptError::EmptyCaption);
        }
        Ok(Self { system_text: template.system_text(params), examples, query_caption, query_text: template.query_text() })
    }

    pub fn with_examples(mut self, examples: Vec<InContextExample>) -> Self {
        self.examples = examples;
        self
    }

    fn query_block(&self) -> String {
        self.query_text.replace(CAPTION_SLOT, &self.query_caption)
    }

    /// Chat layout: one system message, a user/assistant pair per example and
    /// the query as the final user message. The trailing reasoning cue is dropped.
    pub fn build_messages(&self) -> Vec<ChatMessage> {
        let mut msgs = Vec::with_capacity(2 + 2 * self.examples.len());
        msgs.push(ChatMessage::new(Role::System, self.system_text.clone()));
        for ex in &self.examples {
            msgs.push(ChatMessage::new(Role::User, ex.caption_line()));
            msgs.push(ChatMessage::new(Role::Assistant, ex.response_text()));
        }
        let query = self.query_block();
        let query = query.strip_suffix(REASONING_CUE).unwrap_or(&query).trim_end();
        msgs.push(ChatMessage::new(Role::User, query));
        msgs
    }

    /// Every line in one text, ending with the reasoning cue.
    pub fn build_merged_prompt(&self) -> String {
        let mut parts = vec![self.system_text.clone()];
        parts.extend(self.examples.iter().map(InContextExample::render));
        parts.push(self.query_block());
        parts.join("\n\n")
    }
}

/// Joins messages the way the merged prompt lays them out: an assistant turn
/// follows its caption on the next line, everything else is separated by a
/// blank line.
pub fn flatten_messages(messages: &[ChatMessage]) -> String {
    let mut out = String::new();
    for (i, m) in messages.iter().enumerate() {
        if i > 0 {
            out.push_str(if m.role == Role::Assistant { "\n" } else { "\n\n" });
        }
        out.push_str(&m.content);
    }
    out
}
