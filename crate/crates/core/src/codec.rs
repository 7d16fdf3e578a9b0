//! Wire format of the five-turn layered composition protocol.
//!
//! Each turn announces one layer's elements (`element {k}: <image>` or
//! `element {k}: {text}`, or `null` for an empty layer) and expects the
//! layer's attributes back as JSON objects, `{}` for an empty layer.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::chat::IMAGE_TOKEN;
use crate::model::{
    BBox, Canvas, CanvasState, Design, Element, ElementAttributes, Rgb, SemanticRole, TextAlign,
    TextAttributes,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CodecError {
    #[error("malformed JSON: {0}")]
    MalformedJson(String),
    #[error("index {0} was not announced in this layer")]
    UnknownIndex(u32),
    #[error("no record for announced element {0}")]
    MissingElement(u32),
    #[error("more than one record for element {0}")]
    DuplicateRecord(u32),
    #[error("font {0:?} is not in the font vocabulary")]
    OutOfVocabFont(String),
    #[error("record {index:?} is missing required key `{key}`")]
    MissingRequiredKey { key: &'static str, index: Option<u32> },
    #[error("record {index:?}: bad value for `{key}`: {reason}")]
    InvalidValue {
        key: &'static str,
        index: Option<u32>,
        reason: String,
    },
    #[error("turn {turn} needs canvas state G{expected}, got G{actual}")]
    LevelMismatch { turn: usize, expected: u8, actual: u8 },
    #[error("turn {turn} is for the {expected} layer, not {actual}")]
    RoleMismatch {
        turn: usize,
        expected: SemanticRole,
        actual: SemanticRole,
    },
    #[error("element `{element_id}` cannot appear in the {role} layer")]
    PayloadMismatch { role: SemanticRole, element_id: String },
    #[error("element `{0}` has no attributes")]
    MissingAttributes(String),
    #[error("element `{0}` is not part of the design")]
    UnknownElement(String),
}

/// Fonts a model may name. An open vocabulary accepts any family.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FontVocab {
    names: Option<BTreeSet<String>>,
}

impl FontVocab {
    pub fn open() -> Self {
        Self { names: None }
    }

    pub fn from_names<I, S>(names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            names: Some(names.into_iter().map(Into::into).collect()),
        }
    }

    /// One family name per line; blank lines are skipped.
    pub fn parse(text: &str) -> Self {
        Self::from_names(text.lines().map(str::trim).filter(|l| !l.is_empty()))
    }

    pub fn from_file(path: &Path) -> std::io::Result<Self> {
        Ok(Self::parse(&std::fs::read_to_string(path)?))
    }

    pub fn contains(&self, font: &str) -> bool {
        self.names.as_ref().is_none_or(|n| n.contains(font))
    }

    pub fn names(&self) -> Option<&BTreeSet<String>> {
        self.names.as_ref()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerPayload {
    Image,
    Text(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerItem {
    pub index: u32,
    pub element_id: String,
    pub payload: LayerPayload,
}

/// The elements announced for one layer, in announcement order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerInput {
    role: SemanticRole,
    items: Vec<LayerItem>,
}

impl LayerInput {
    pub fn new(role: SemanticRole, items: Vec<LayerItem>) -> Result<Self, CodecError> {
        for item in &items {
            let is_text = matches!(item.payload, LayerPayload::Text(_));
            if is_text != (role == SemanticRole::Text) {
                return Err(CodecError::PayloadMismatch {
                    role,
                    element_id: item.element_id.clone(),
                });
            }
        }
        Ok(Self { role, items })
    }

    pub fn empty(role: SemanticRole) -> Self {
        Self {
            role,
            items: Vec::new(),
        }
    }

    /// Announces `ids` (in that order) using the index table.
    pub fn from_elements(
        role: SemanticRole,
        ids: &[String],
        elements: &[Element],
        indices: &BTreeMap<String, u32>,
    ) -> Result<Self, CodecError> {
        let items = ids
            .iter()
            .map(|id| {
                let e = elements
                    .iter()
                    .find(|e| &e.id == id)
                    .ok_or_else(|| CodecError::UnknownElement(id.clone()))?;
                let index = *indices
                    .get(id)
                    .ok_or_else(|| CodecError::UnknownElement(id.clone()))?;
                let payload = match e.text_content() {
                    Some(t) => LayerPayload::Text(t.to_string()),
                    None => LayerPayload::Image,
                };
                Ok(LayerItem {
                    index,
                    element_id: id.clone(),
                    payload,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(role, items)
    }

    pub fn role(&self) -> SemanticRole {
        self.role
    }

    pub fn items(&self) -> &[LayerItem] {
        &self.items
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn element_id(&self, index: u32) -> Option<&str> {
        self.items
            .iter()
            .find(|i| i.index == index)
            .map(|i| i.element_id.as_str())
    }

    /// The announcement sentence for this layer.
    pub fn text(&self) -> String {
        serialize_layer_input(self)
    }
}

pub fn serialize_layer_input(input: &LayerInput) -> String {
    let mut out = format!("Now predict the {} elements: ", input.role.layer_name());
    if input.items.is_empty() {
        out.push_str("null");
        return out;
    }
    for (n, item) in input.items.iter().enumerate() {
        if n > 0 {
            out.push_str(", ");
        }
        match &item.payload {
            LayerPayload::Image => write!(out, "element {}: {IMAGE_TOKEN}", item.index),
            LayerPayload::Text(t) => write!(out, "element {}: {t}", item.index),
        }
        .expect("writing to a String cannot fail");
    }
    out
}

/// One layer's attribute records, in emission order.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerOutput {
    pub role: SemanticRole,
    pub records: Vec<ElementAttributes>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum JsonStyle {
    /// Four-space indented objects, one key per line.
    #[default]
    Pretty,
    Compact,
}

pub fn serialize_layer_output(out: &LayerOutput) -> String {
    serialize_layer_output_with(out, JsonStyle::Pretty)
}

/// Empty layers serialize to `{}`; otherwise one object per record,
/// separated by newlines, with keys in a fixed order.
pub fn serialize_layer_output_with(out: &LayerOutput, style: JsonStyle) -> String {
    if out.records.is_empty() {
        return "{}".to_string();
    }
    out.records
        .iter()
        .map(|r| serialize_record(r, style))
        .collect::<Vec<_>>()
        .join("\n")
}

fn serialize_record(r: &ElementAttributes, style: JsonStyle) -> String {
    let mut fields: Vec<(&str, String)> = vec![
        ("index", r.index.to_string()),
        ("left", r.bbox.left.to_string()),
        ("top", r.bbox.top.to_string()),
        ("width", r.bbox.width.to_string()),
        ("height", r.bbox.height.to_string()),
    ];
    if let Some(t) = &r.text {
        let sep = match style {
            JsonStyle::Pretty => ", ",
            JsonStyle::Compact => ",",
        };
        fields.extend([
            ("angle", fmt_angle(t.angle)),
            ("font", Value::String(t.font.clone()).to_string()),
            ("font_size", t.font_size.to_string()),
            (
                "color",
                format!("[{}{sep}{}{sep}{}]", t.color[0], t.color[1], t.color[2]),
            ),
            ("text_align", format!("\"{}\"", t.text_align.as_str())),
            ("capitalize", format!("\"{}\"", t.capitalize)),
            ("letter_spacing", fmt_decimal(t.letter_spacing)),
            ("line_height", fmt_decimal(t.line_height)),
        ]);
    }
    match style {
        JsonStyle::Pretty => {
            let body = fields
                .iter()
                .map(|(k, v)| format!("    \"{k}\": {v}"))
                .collect::<Vec<_>>()
                .join(",\n");
            format!("{{\n{body}\n}}")
        }
        JsonStyle::Compact => {
            let body = fields
                .iter()
                .map(|(k, v)| format!("\"{k}\":{v}"))
                .collect::<Vec<_>>()
                .join(",");
            format!("{{{body}}}")
        }
    }
}

/// Shortest round-trip decimal that always carries a fractional part
/// (`0.0`, `1.0`, `1.25`).
pub fn fmt_decimal(v: f64) -> String {
    format!("{v:?}")
}

/// Whole-degree angles print as integers, others as shortest decimals.
pub fn fmt_angle(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v:?}")
    }
}

/// Parses a model's layer answer against the layer it announced.
///
/// Accepts one object, several concatenated objects or an array of
/// objects, optionally inside a markdown code fence. Numeric strings are
/// coerced, unknown keys ignored. Records come back in emission order.
pub fn parse_layer_output(
    text: &str,
    expected: &LayerInput,
    vocab: &FontVocab,
) -> Result<LayerOutput, CodecError> {
    let body = strip_code_fence(text);
    if body.trim().is_empty() {
        return Err(CodecError::MalformedJson("empty response".into()));
    }
    let mut objects = Vec::new();
    for value in serde_json::Deserializer::from_str(body).into_iter::<Value>() {
        match value.map_err(|e| CodecError::MalformedJson(e.to_string()))? {
            Value::Object(o) => objects.push(o),
            Value::Array(items) => {
                for item in items {
                    match item {
                        Value::Object(o) => objects.push(o),
                        other => {
                            return Err(CodecError::MalformedJson(format!(
                                "array item is not an object: {other}"
                            )))
                        }
                    }
                }
            }
            Value::Null => {}
            other => {
                return Err(CodecError::MalformedJson(format!(
                    "expected an object, found {other}"
                )))
            }
        }
    }

    let mut records = Vec::new();
    let mut seen = BTreeSet::new();
    for obj in objects.into_iter().filter(|o| !o.is_empty()) {
        let index = get_u32(&obj, "index", None)?;
        let element_id = expected
            .element_id(index)
            .ok_or(CodecError::UnknownIndex(index))?
            .to_string();
        if !seen.insert(index) {
            return Err(CodecError::DuplicateRecord(index));
        }
        let ix = Some(index);
        let bbox = BBox::new(
            get_i64(&obj, "left", ix)?,
            get_i64(&obj, "top", ix)?,
            get_u32(&obj, "width", ix)?,
            get_u32(&obj, "height", ix)?,
        );
        let text = if expected.role() == SemanticRole::Text {
            Some(parse_text_attributes(&obj, ix, vocab)?)
        } else {
            None
        };
        records.push(ElementAttributes {
            element_id,
            index,
            bbox,
            text,
        });
    }
    if let Some(missing) = expected.items().iter().find(|i| !seen.contains(&i.index)) {
        return Err(CodecError::MissingElement(missing.index));
    }
    Ok(LayerOutput {
        role: expected.role(),
        records,
    })
}

fn strip_code_fence(text: &str) -> &str {
    let Some(start) = text.find("```") else {
        return text.trim();
    };
    let after = &text[start + 3..];
    // Skip a language tag on the fence line.
    let after = match after.find('\n') {
        Some(nl) if after[..nl].trim().chars().all(|c| c.is_ascii_alphanumeric()) => &after[nl + 1..],
        _ => after,
    };
    match after.find("```") {
        Some(end) => after[..end].trim(),
        None => after.trim(),
    }
}

fn parse_text_attributes(
    obj: &Map<String, Value>,
    ix: Option<u32>,
    vocab: &FontVocab,
) -> Result<TextAttributes, CodecError> {
    let font = match require(obj, "font", ix)? {
        Value::String(s) => s.clone(),
        other => return Err(invalid("font", ix, format!("expected a string, found {other}"))),
    };
    if !vocab.contains(&font) {
        return Err(CodecError::OutOfVocabFont(font));
    }
    let font_size = get_u32(obj, "font_size", ix)?;
    if font_size == 0 {
        return Err(invalid("font_size", ix, "must be positive".into()));
    }
    let text_align = match require(obj, "text_align", ix)? {
        Value::String(s) => TextAlign::parse(s)
            .ok_or_else(|| invalid("text_align", ix, format!("unknown alignment {s:?}")))?,
        other => return Err(invalid("text_align", ix, format!("expected a string, found {other}"))),
    };
    let capitalize = match require(obj, "capitalize", ix)? {
        Value::Bool(b) => *b,
        Value::String(s) => match s.trim().to_ascii_lowercase().as_str() {
            "true" => true,
            "false" => false,
            _ => return Err(invalid("capitalize", ix, format!("expected true/false, found {s:?}"))),
        },
        Value::Number(n) if n.as_f64() == Some(0.0) => false,
        Value::Number(n) if n.as_f64() == Some(1.0) => true,
        other => return Err(invalid("capitalize", ix, format!("expected true/false, found {other}"))),
    };
    let letter_spacing = get_f64(obj, "letter_spacing", ix)?;
    if letter_spacing < 0.0 {
        return Err(invalid("letter_spacing", ix, "must be >= 0".into()));
    }
    let line_height = get_f64(obj, "line_height", ix)?;
    if line_height <= 0.0 {
        return Err(invalid("line_height", ix, "must be > 0".into()));
    }
    Ok(TextAttributes {
        angle: get_f64(obj, "angle", ix)?,
        font,
        font_size,
        color: parse_color(require(obj, "color", ix)?, ix)?,
        text_align,
        capitalize,
        letter_spacing,
        line_height,
    })
}

fn parse_color(v: &Value, ix: Option<u32>) -> Result<Rgb, CodecError> {
    match v {
        Value::Array(items) if items.len() == 3 => {
            let mut rgb = [0u8; 3];
            for (slot, item) in rgb.iter_mut().zip(items) {
                let c = number(item).ok_or_else(|| invalid("color", ix, format!("bad channel {item}")))?;
                if !(0.0..=255.0).contains(&c) {
                    return Err(invalid("color", ix, format!("channel {c} outside 0..=255")));
                }
                *slot = c.round() as u8;
            }
            Ok(rgb)
        }
        Value::String(s) if s.starts_with('#') && s.len() == 7 => {
            let hex = hex::decode(&s[1..]).map_err(|e| invalid("color", ix, e.to_string()))?;
            Ok([hex[0], hex[1], hex[2]])
        }
        other => Err(invalid("color", ix, format!("expected [r, g, b], found {other}"))),
    }
}

fn invalid(key: &'static str, index: Option<u32>, reason: String) -> CodecError {
    CodecError::InvalidValue { key, index, reason }
}

fn require<'a>(
    obj: &'a Map<String, Value>,
    key: &'static str,
    index: Option<u32>,
) -> Result<&'a Value, CodecError> {
    obj.get(key)
        .ok_or(CodecError::MissingRequiredKey { key, index })
}

fn number(v: &Value) -> Option<f64> {
    match v {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.trim().parse::<f64>().ok(),
        _ => None,
    }
    .filter(|f| f.is_finite())
}

fn get_f64(obj: &Map<String, Value>, key: &'static str, ix: Option<u32>) -> Result<f64, CodecError> {
    let v = require(obj, key, ix)?;
    number(v).ok_or_else(|| invalid(key, ix, format!("expected a number, found {v}")))
}

fn get_i64(obj: &Map<String, Value>, key: &'static str, ix: Option<u32>) -> Result<i64, CodecError> {
    let v = require(obj, key, ix)?;
    if let Some(i) = v.as_i64() {
        return Ok(i);
    }
    let f = number(v).ok_or_else(|| invalid(key, ix, format!("expected a number, found {v}")))?;
    if f.abs() > 1e12 {
        return Err(invalid(key, ix, format!("{f} is out of range")));
    }
    Ok(f.round() as i64)
}

fn get_u32(obj: &Map<String, Value>, key: &'static str, ix: Option<u32>) -> Result<u32, CodecError> {
    let i = get_i64(obj, key, ix)?;
    u32::try_from(i).map_err(|_| invalid(key, ix, format!("{i} is not a non-negative 32-bit integer")))
}

/// Where the image behind an `<image>` token comes from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ImageSlot {
    CanvasState { level: u8 },
    Element { element_id: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HumanTurn {
    pub text: String,
    pub slots: Vec<ImageSlot>,
}

pub fn canvas_preamble(canvas: &Canvas) -> String {
    format!(
        "a poster of canvas width {}px, canvas height {}px. \
         Please predict step by step according to the semantics of the elements. \
         After each prediction, there will be an intermediate rendering result as a reference to better make the next prediction.",
        canvas.width, canvas.height
    )
}

/// Human message for turn `i` (1-based). Turn 1 opens with the canvas
/// preamble; later turns show the previous canvas state.
pub fn build_turn(
    i: usize,
    canvas: &Canvas,
    input: &LayerInput,
    prev_state: &CanvasState,
) -> Result<HumanTurn, CodecError> {
    build_turn_at(i, canvas, input, prev_state.level, None)
}

/// Like [`build_turn`] but takes the previous level directly, with an
/// optional sentence placed between the canvas clause and the layer
/// announcement.
pub fn build_turn_at(
    i: usize,
    canvas: &Canvas,
    input: &LayerInput,
    prev_level: u8,
    context: Option<&str>,
) -> Result<HumanTurn, CodecError> {
    let expected = SemanticRole::from_order(i as u8).ok_or(CodecError::LevelMismatch {
        turn: i,
        expected: i.saturating_sub(1) as u8,
        actual: prev_level,
    })?;
    if expected != input.role() {
        return Err(CodecError::RoleMismatch {
            turn: i,
            expected,
            actual: input.role(),
        });
    }
    if prev_level as usize + 1 != i {
        return Err(CodecError::LevelMismatch {
            turn: i,
            expected: (i - 1) as u8,
            actual: prev_level,
        });
    }
    let mut text = String::new();
    let mut slots = Vec::new();
    if i == 1 {
        text.push_str(&canvas_preamble(canvas));
        text.push(' ');
    } else {
        text.push_str("current canvas state: <image>. ");
        slots.push(ImageSlot::CanvasState { level: prev_level });
    }
    if let Some(ctx) = context {
        text.push_str(ctx);
        text.push(' ');
    }
    text.push_str(&serialize_layer_input(input));
    slots.extend(
        input
            .items()
            .iter()
            .filter(|item| item.payload == LayerPayload::Image)
            .map(|item| ImageSlot::Element {
                element_id: item.element_id.clone(),
            }),
    );
    Ok(HumanTurn { text, slots })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Turn {
    pub role: SemanticRole,
    pub human: HumanTurn,
    pub assistant: String,
}

/// The five-turn transcript of one design.
#[derive(Debug, Clone, PartialEq)]
pub struct Conversation {
    pub canvas: Canvas,
    pub turns: Vec<Turn>,
}

impl Conversation {
    pub fn preamble(&self) -> String {
        canvas_preamble(&self.canvas)
    }

    /// Plain-text transcript with `HUMAN:` / `ASSISTANT:` labels.
    pub fn to_transcript(&self) -> String {
        let mut out = String::new();
        for (n, turn) in self.turns.iter().enumerate() {
            if n > 0 {
                out.push('\n');
            }
            writeln!(out, "HUMAN: {}", turn.human.text).unwrap();
            writeln!(out, "ASSISTANT:\n{}", turn.assistant).unwrap();
        }
        out
    }

    /// Serializable record; `resolve` maps each image slot to a file reference.
    pub fn to_record(
        &self,
        design_id: &str,
        seed: Option<u64>,
        mut resolve: impl FnMut(&ImageSlot) -> String,
    ) -> ConversationRecord {
        ConversationRecord {
            design_id: design_id.to_string(),
            seed,
            canvas: CanvasSize {
                width: self.canvas.width,
                height: self.canvas.height,
            },
            turns: self
                .turns
                .iter()
                .map(|t| TurnRecord {
                    layer: t.role,
                    human: t.human.text.clone(),
                    assistant: t.assistant.clone(),
                    images: t.human.slots.iter().map(&mut resolve).collect(),
                    slots: t.human.slots.clone(),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CanvasSize {
    pub width: u32,
    pub height: u32,
}

/// One line of a conversation export.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConversationRecord {
    pub design_id: String,
    /// Shuffle seed; absent for identity order.
    pub seed: Option<u64>,
    pub canvas: CanvasSize,
    pub turns: Vec<TurnRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub layer: SemanticRole,
    pub human: String,
    pub assistant: String,
    /// File reference per `<image>` token, in token order.
    pub images: Vec<String>,
    pub slots: Vec<ImageSlot>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shuffle {
    Identity,
    Seeded(u64),
}

impl Shuffle {
    pub fn seed(self) -> Option<u64> {
        match self {
            Shuffle::Identity => None,
            Shuffle::Seeded(s) => Some(s),
        }
    }
}

/// Within-layer orders after shuffling, layer by layer.
pub fn shuffled_layers(design: &Design, shuffle: Shuffle) -> [Vec<String>; 5] {
    let mut rng = shuffle.seed().map(ChaCha8Rng::seed_from_u64);
    SemanticRole::ALL.map(|role| {
        let mut ids = design.plan.layer(role).to_vec();
        if let Some(rng) = rng.as_mut() {
            ids.shuffle(rng);
        }
        ids
    })
}

/// Ground-truth transcript of a fully attributed design. Indices are
/// reassigned contiguously after the within-layer shuffle.
pub fn export_training_conversation(
    design: &Design,
    shuffle: Shuffle,
) -> Result<Conversation, CodecError> {
    let layers = shuffled_layers(design, shuffle);
    let indices: BTreeMap<String, u32> = layers
        .iter()
        .flatten()
        .enumerate()
        .map(|(i, id)| (id.clone(), i as u32))
        .collect();

    let mut turns = Vec::with_capacity(5);
    for (n, (role, ids)) in SemanticRole::ALL.into_iter().zip(&layers).enumerate() {
        let input = LayerInput::from_elements(role, ids, &design.elements, &indices)?;
        let records = ids
            .iter()
            .map(|id| {
                let attrs = design
                    .attributes
                    .get(id)
                    .ok_or_else(|| CodecError::MissingAttributes(id.clone()))?;
                Ok(ElementAttributes {
                    index: indices[id],
                    ..attrs.clone()
                })
            })
            .collect::<Result<Vec<_>, CodecError>>()?;
        let human = build_turn_at(n + 1, &design.canvas, &input, n as u8, None)?;
        turns.push(Turn {
            role,
            human,
            assistant: serialize_layer_output(&LayerOutput { role, records }),
        });
    }
    Ok(Conversation {
        canvas: design.canvas,
        turns,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LayerPlan;
    use image::RgbaImage;

    fn image_items(role: SemanticRole, idx: &[u32]) -> LayerInput {
        LayerInput::new(
            role,
            idx.iter()
                .map(|&i| LayerItem {
                    index: i,
                    element_id: format!("e{i}"),
                    payload: LayerPayload::Image,
                })
                .collect(),
        )
        .unwrap()
    }

    fn text_input() -> LayerInput {
        LayerInput::new(
            SemanticRole::Text,
            vec![
                LayerItem {
                    index: 2,
                    element_id: "e2".into(),
                    payload: LayerPayload::Text("Spring Clean".into()),
                },
                LayerItem {
                    index: 3,
                    element_id: "e3".into(),
                    payload: LayerPayload::Text("Best hacks".into()),
                },
            ],
        )
        .unwrap()
    }

    fn text_record(index: u32, font: &str) -> ElementAttributes {
        ElementAttributes {
            element_id: format!("e{index}"),
            index,
            bbox: BBox::new(272, 547, 537, 68),
            text: Some(TextAttributes {
                angle: 0.0,
                font: font.into(),
                font_size: 68,
                color: [0, 0, 0],
                text_align: TextAlign::Center,
                capitalize: false,
                letter_spacing: 0.0,
                line_height: 1.0,
            }),
        }
    }

    #[test]
    fn layer_input_sentences() {
        assert_eq!(
            serialize_layer_input(&image_items(SemanticRole::Background, &[0])),
            "Now predict the background elements: element 0: <image>"
        );
        assert_eq!(
            serialize_layer_input(&LayerInput::empty(SemanticRole::Underlay)),
            "Now predict the underlay elements: null"
        );
        assert!(serialize_layer_input(&text_input())
            .ends_with("element 2: Spring Clean, element 3: Best hacks"));
        assert_eq!(
            serialize_layer_input(&image_items(SemanticRole::LogoImage, &[1])),
            "Now predict the logo/image elements: element 1: <image>"
        );
    }

    #[test]
    fn payload_must_match_role() {
        let bad = LayerInput::new(
            SemanticRole::Underlay,
            vec![LayerItem {
                index: 0,
                element_id: "x".into(),
                payload: LayerPayload::Text("hi".into()),
            }],
        );
        assert!(matches!(bad, Err(CodecError::PayloadMismatch { .. })));
    }

    #[test]
    fn layer_output_formats() {
        let rec = ElementAttributes {
            element_id: "e0".into(),
            index: 0,
            bbox: BBox::new(3, -5, 1101, 460),
            text: None,
        };
        let out = LayerOutput {
            role: SemanticRole::Background,
            records: vec![rec],
        };
        assert_eq!(
            serialize_layer_output_with(&out, JsonStyle::Compact),
            r#"{"index":0,"left":3,"top":-5,"width":1101,"height":460}"#
        );
        assert_eq!(
            serialize_layer_output(&out),
            "{\n    \"index\": 0,\n    \"left\": 3,\n    \"top\": -5,\n    \"width\": 1101,\n    \"height\": 460\n}"
        );
        let empty = LayerOutput {
            role: SemanticRole::Embellishment,
            records: vec![],
        };
        assert_eq!(serialize_layer_output(&empty), "{}");

        let text = LayerOutput {
            role: SemanticRole::Text,
            records: vec![text_record(3, "Raleway")],
        };
        let s = serialize_layer_output(&text);
        assert!(s.contains("\"font\": \"Raleway\""));
        assert!(s.contains("\"font_size\": 68"));
        assert!(s.contains("\"color\": [0, 0, 0]"));
        assert!(s.contains("\"capitalize\": \"false\""));
        assert!(s.contains("\"letter_spacing\": 0.0"));
        assert!(s.contains("\"angle\": 0,"));
    }

    #[test]
    fn decimal_formats() {
        assert_eq!(fmt_decimal(0.0), "0.0");
        assert_eq!(fmt_decimal(1.0), "1.0");
        assert_eq!(fmt_decimal(1.25), "1.25");
        assert_eq!(fmt_angle(0.0), "0");
        assert_eq!(fmt_angle(-15.0), "-15");
        assert_eq!(fmt_angle(12.5), "12.5");
    }

    #[test]
    fn parse_two_concatenated_objects() {
        let vocab = FontVocab::from_names(["Raleway"]);
        let text = serialize_layer_output(&LayerOutput {
            role: SemanticRole::Text,
            records: vec![text_record(2, "Raleway"), text_record(3, "Raleway")],
        });
        let out = parse_layer_output(&text, &text_input(), &vocab).unwrap();
        let idx: Vec<u32> = out.records.iter().map(|r| r.index).collect();
        assert_eq!(idx, vec![2, 3]);
        assert_eq!(out.records[1].element_id, "e3");
    }

    #[test]
    fn parse_tolerances() {
        let vocab = FontVocab::open();
        let input = image_items(SemanticRole::LogoImage, &[1, 4]);
        let array = r#"```json
[{"index": "4", "left": "10", "top": 2.0, "width": 5, "height": 6, "extra": true},
 {"index": 1, "left": -3, "top": 0, "width": 7, "height": 8}]
```"#;
        let out = parse_layer_output(array, &input, &vocab).unwrap();
        assert_eq!(out.records[0].index, 4);
        assert_eq!(out.records[0].bbox, BBox::new(10, 2, 5, 6));
        assert_eq!(out.records[1].bbox, BBox::new(-3, 0, 7, 8));

        let empty = LayerInput::empty(SemanticRole::Underlay);
        assert!(parse_layer_output("{}", &empty, &vocab).unwrap().records.is_empty());
        assert!(parse_layer_output(" null ", &empty, &vocab).unwrap().records.is_empty());
    }

    #[test]
    fn parse_errors() {
        let vocab = FontVocab::from_names(["Raleway"]);
        let input = image_items(SemanticRole::LogoImage, &[1]);
        assert!(matches!(
            parse_layer_output("{\"index\": 1, \"left\": ", &input, &vocab),
            Err(CodecError::MalformedJson(_))
        ));
        assert!(matches!(
            parse_layer_output("", &input, &vocab),
            Err(CodecError::MalformedJson(_))
        ));
        assert_eq!(
            parse_layer_output(r#"{"index":9,"left":0,"top":0,"width":1,"height":1}"#, &input, &vocab),
            Err(CodecError::UnknownIndex(9))
        );
        assert_eq!(parse_layer_output("{}", &input, &vocab), Err(CodecError::MissingElement(1)));
        assert_eq!(
            parse_layer_output(r#"{"index":1,"left":0,"top":0,"width":1}"#, &input, &vocab),
            Err(CodecError::MissingRequiredKey {
                key: "height",
                index: Some(1)
            })
        );
        assert!(matches!(
            parse_layer_output(r#"{"index":1,"left":0,"top":0,"width":-4,"height":1}"#, &input, &vocab),
            Err(CodecError::InvalidValue { key: "width", .. })
        ));
        let dup = r#"{"index":1,"left":0,"top":0,"width":1,"height":1}{"index":1,"left":0,"top":0,"width":1,"height":1}"#;
        assert_eq!(parse_layer_output(dup, &input, &vocab), Err(CodecError::DuplicateRecord(1)));

        let bad_font = serialize_layer_output(&LayerOutput {
            role: SemanticRole::Text,
            records: vec![text_record(2, "NoSuchFont"), text_record(3, "Raleway")],
        });
        assert_eq!(
            parse_layer_output(&bad_font, &text_input(), &vocab),
            Err(CodecError::OutOfVocabFont("NoSuchFont".into()))
        );
    }

    #[test]
    fn capitalize_accepts_bool_and_string() {
        let vocab = FontVocab::open();
        let input = LayerInput::new(
            SemanticRole::Text,
            vec![LayerItem {
                index: 0,
                element_id: "t".into(),
                payload: LayerPayload::Text("x".into()),
            }],
        )
        .unwrap();
        let base = r##"{"index":0,"left":0,"top":0,"width":1,"height":1,"angle":0,"font":"A","font_size":"12","color":"#ff0000","text_align":"Right","capitalize":CAP,"letter_spacing":1,"line_height":"1.5"}"##;
        for (cap, expect) in [("true", true), ("\"false\"", false), ("\"TRUE\"", true)] {
            let out = parse_layer_output(&base.replace("CAP", cap), &input, &vocab).unwrap();
            let t = out.records[0].text.as_ref().unwrap();
            assert_eq!(t.capitalize, expect);
            assert_eq!(t.color, [255, 0, 0]);
            assert_eq!(t.text_align, TextAlign::Right);
            assert_eq!(t.font_size, 12);
            assert_eq!(t.line_height, 1.5);
        }
    }

    #[test]
    fn turns_and_levels() {
        let canvas = Canvas::new(1080, 1920);
        let t1 = build_turn_at(1, &canvas, &image_items(SemanticRole::Background, &[0]), 0, None).unwrap();
        assert!(t1.text.starts_with("a poster of canvas width 1080px, canvas height 1920px. "));
        assert!(t1.text.ends_with("next prediction. Now predict the background elements: element 0: <image>"));
        assert!(!t1.slots.iter().any(|s| matches!(s, ImageSlot::CanvasState { .. })));

        let mut g3 = CanvasState::blank(&canvas);
        g3.level = 3;
        let t4 = build_turn(4, &canvas, &text_input(), &g3).unwrap();
        assert_eq!(
            t4.text,
            "current canvas state: <image>. Now predict the text elements: element 2: Spring Clean, element 3: Best hacks"
        );
        assert_eq!(t4.slots, vec![ImageSlot::CanvasState { level: 3 }]);

        let g0 = CanvasState::blank(&canvas);
        assert!(matches!(
            build_turn(2, &canvas, &LayerInput::empty(SemanticRole::Underlay), &g0),
            Err(CodecError::LevelMismatch { .. })
        ));
        assert!(matches!(
            build_turn(1, &canvas, &LayerInput::empty(SemanticRole::Underlay), &g0),
            Err(CodecError::RoleMismatch { .. })
        ));
    }

    fn small_design() -> Design {
        let canvas = Canvas::new(200, 100);
        let mut elements = vec![Element::image("bg", RgbaImage::new(2, 2))];
        let mut roles = vec![("bg".to_string(), SemanticRole::Background)];
        for k in 0..4 {
            let id = format!("t{k}");
            elements.push(Element::text(id.clone(), format!("line {k}")));
            roles.push((id, SemanticRole::Text));
        }
        let plan = LayerPlan::from_roles(roles);
        let mut attributes = BTreeMap::new();
        for (i, (_, id)) in plan.placement_order().enumerate() {
            let text = id.starts_with('t').then(|| TextAttributes::new("A", 10 + i as u32));
            attributes.insert(
                id.to_string(),
                ElementAttributes {
                    element_id: id.to_string(),
                    index: i as u32,
                    bbox: BBox::new(i as i64, 0, 10, 10),
                    text,
                },
            );
        }
        Design {
            id: "d".into(),
            canvas,
            elements,
            plan,
            attributes,
        }
    }

    #[test]
    fn export_shapes_and_shuffle() {
        let d = small_design();
        let a = export_training_conversation(&d, Shuffle::Identity).unwrap();
        assert_eq!(a.turns.len(), 5);
        assert_eq!(a.turns[1].assistant, "{}");
        assert_eq!(a.turns[4].assistant, "{}");
        assert!(a.turns[1].human.text.ends_with("null"));

        let s1 = export_training_conversation(&d, Shuffle::Seeded(1)).unwrap();
        let s1b = export_training_conversation(&d, Shuffle::Seeded(1)).unwrap();
        assert_eq!(s1, s1b);
        let differs = (2..50).any(|seed| {
            export_training_conversation(&d, Shuffle::Seeded(seed)).unwrap().turns[3] != a.turns[3]
        });
        assert!(differs);
        // Background never moves out of its layer and keeps index 0.
        for seed in 0..20 {
            let c = export_training_conversation(&d, Shuffle::Seeded(seed)).unwrap();
            assert_eq!(c.turns[0].human.text, a.turns[0].human.text);
            assert_eq!(c.turns[0].assistant, a.turns[0].assistant);
        }
    }

    #[test]
    fn export_requires_attributes() {
        let mut d = small_design();
        d.attributes.remove("t2");
        assert_eq!(
            export_training_conversation(&d, Shuffle::Identity),
            Err(CodecError::MissingAttributes("t2".into()))
        );
    }

    #[test]
    fn vocab_file_format() {
        let v = FontVocab::parse("Raleway\n\n  Montserrat \n");
        assert!(v.contains("Raleway") && v.contains("Montserrat"));
        assert!(!v.contains("raleway"));
        assert!(FontVocab::open().contains("anything"));
    }
}
