//! Layer planning: assigns each element one of the five semantic layers.
//!
//! Text elements are recognized by modality alone. Visual elements are
//! labeled either by a fixed rule cascade over their pixels and size, or
//! by a remote chat model answering the element labeling prompt.

use std::fmt;
use std::sync::Arc;

use image::imageops::FilterType;
use image::RgbaImage;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::chat::{ChatClient, ChatError, ChatMessage, ChatRole, SamplingParams};
use crate::model::{Canvas, Element, LayerPlan, Modality, SemanticRole};

/// Tunables of the rule cascade in [`heuristic_label`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeuristicThresholds {
    /// Intrinsic area / canvas area at or above which an image is a background.
    pub background_area_ratio: f64,
    /// Largest per-channel standard deviation (0..255 scale) of opaque pixels
    /// for an underlay.
    pub underlay_max_channel_std: f64,
    /// Opaque pixels must fill at least this share of their bounding box.
    pub underlay_min_rect_fill: f64,
    /// Intrinsic area / canvas area at or below which an image is an embellishment.
    pub embellishment_area_ratio: f64,
    /// Alpha at or above which a pixel counts as opaque.
    pub opaque_alpha: u8,
}

pub const BACKGROUND_AREA_RATIO: f64 = 0.70;
pub const UNDERLAY_MAX_CHANNEL_STD: f64 = 12.0;
pub const UNDERLAY_MIN_RECT_FILL: f64 = 0.95;
pub const EMBELLISHMENT_AREA_RATIO: f64 = 0.02;
pub const OPAQUE_ALPHA: u8 = 128;

impl Default for HeuristicThresholds {
    fn default() -> Self {
        Self {
            background_area_ratio: BACKGROUND_AREA_RATIO,
            underlay_max_channel_std: UNDERLAY_MAX_CHANNEL_STD,
            underlay_min_rect_fill: UNDERLAY_MIN_RECT_FILL,
            embellishment_area_ratio: EMBELLISHMENT_AREA_RATIO,
            opaque_alpha: OPAQUE_ALPHA,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum HeuristicRule {
    LargeArea,
    FlatRectangle,
    SmallArea,
    Default,
}

impl HeuristicRule {
    pub fn role(self) -> SemanticRole {
        match self {
            HeuristicRule::LargeArea => SemanticRole::Background,
            HeuristicRule::FlatRectangle => SemanticRole::Underlay,
            HeuristicRule::SmallArea => SemanticRole::Embellishment,
            HeuristicRule::Default => SemanticRole::LogoImage,
        }
    }
}

/// Source of remote labels, one element per call.
pub trait ElementLabeler: Send + Sync {
    fn label(&self, prompt: &LabelingPrompt, images: &[Arc<RgbaImage>]) -> Result<String, ChatError>;
}

impl ElementLabeler for ChatClient {
    fn label(&self, prompt: &LabelingPrompt, images: &[Arc<RgbaImage>]) -> Result<String, ChatError> {
        let msg = ChatMessage::with_images(ChatRole::User, &prompt.text, images);
        self.complete(
            &[msg],
            SamplingParams {
                temperature: 0.0,
                top_p: 1.0,
                seed: None,
            },
        )
    }
}

#[derive(Clone)]
pub enum PlannerMode {
    Heuristic,
    Remote(Arc<dyn ElementLabeler>),
    /// Remote labels, degrading to the heuristic per element on any error.
    RemoteWithFallback(Arc<dyn ElementLabeler>),
}

impl fmt::Debug for PlannerMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PlannerMode::Heuristic => "Heuristic",
            PlannerMode::Remote(_) => "Remote",
            PlannerMode::RemoteWithFallback(_) => "RemoteWithFallback",
        })
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("unrecognized label: {0:?}")]
pub struct UnrecognizedLabel(pub String);

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("no elements to plan")]
    NoElements,
    #[error("labeling backend unavailable for `{element_id}`: {source}")]
    RemoteUnavailable { element_id: String, source: ChatError },
    #[error("element `{element_id}`: {source}")]
    Label {
        element_id: String,
        source: UnrecognizedLabel,
    },
}

/// Why an element received its role.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum RoleSource {
    Modality,
    Rule { rule: HeuristicRule },
    Remote { label: String },
    Fallback { rule: HeuristicRule, error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoleDecision {
    pub element_id: String,
    pub role: SemanticRole,
    #[serde(flatten)]
    pub source: RoleSource,
    /// Set when a second background was demoted to logo/image.
    pub demoted: bool,
}

#[derive(Debug, Clone)]
pub struct PlanOutcome {
    pub plan: LayerPlan,
    pub decisions: Vec<RoleDecision>,
}

pub fn plan_layers(
    elements: &[Element],
    canvas: &Canvas,
    mode: &PlannerMode,
) -> Result<LayerPlan, PlanError> {
    plan_layers_explained(elements, canvas, mode, &HeuristicThresholds::default()).map(|o| o.plan)
}

/// Plans layers and reports the rule or label behind each role. Within
/// each layer the input order is kept.
pub fn plan_layers_explained(
    elements: &[Element],
    canvas: &Canvas,
    mode: &PlannerMode,
    thresholds: &HeuristicThresholds,
) -> Result<PlanOutcome, PlanError> {
    if elements.is_empty() {
        return Err(PlanError::NoElements);
    }
    let decide = |e: &Element| -> Result<RoleDecision, PlanError> {
        let (role, source) = match e.modality() {
            Modality::Text => (SemanticRole::Text, RoleSource::Modality),
            Modality::Image => match mode {
                PlannerMode::Heuristic => {
                    let rule = heuristic_rule(e, canvas, thresholds);
                    (rule.role(), RoleSource::Rule { rule })
                }
                PlannerMode::Remote(labeler) => {
                    let label = remote_label(labeler.as_ref(), e)?;
                    let role = parse_label(&label).map_err(|source| PlanError::Label {
                        element_id: e.id.clone(),
                        source,
                    })?;
                    (role, RoleSource::Remote { label })
                }
                PlannerMode::RemoteWithFallback(labeler) => {
                    let attempt = remote_label(labeler.as_ref(), e).and_then(|label| {
                        parse_label(&label)
                            .map(|role| (role, label))
                            .map_err(|source| PlanError::Label {
                                element_id: e.id.clone(),
                                source,
                            })
                    });
                    match attempt {
                        Ok((role, label)) => (role, RoleSource::Remote { label }),
                        Err(err) => {
                            let rule = heuristic_rule(e, canvas, thresholds);
                            log::warn!("{}: remote label failed ({err}); using heuristic", e.id);
                            (
                                rule.role(),
                                RoleSource::Fallback {
                                    rule,
                                    error: err.to_string(),
                                },
                            )
                        }
                    }
                }
            },
        };
        Ok(RoleDecision {
            element_id: e.id.clone(),
            role,
            source,
            demoted: false,
        })
    };

    let mut decisions: Vec<RoleDecision> = match mode {
        PlannerMode::Heuristic => elements.iter().map(decide).collect::<Result<_, _>>()?,
        // Remote calls may finish in any order; collect keeps input order.
        _ => elements.par_iter().map(decide).collect::<Result<_, _>>()?,
    };

    demote_extra_backgrounds(elements, &mut decisions);

    let plan = LayerPlan::from_roles(decisions.iter().map(|d| (d.element_id.clone(), d.role)));
    Ok(PlanOutcome { plan, decisions })
}

/// Keeps the background with the largest intrinsic area (first wins ties)
/// and moves the rest to logo/image.
fn demote_extra_backgrounds(elements: &[Element], decisions: &mut [RoleDecision]) {
    let mut keep: Option<(usize, u64)> = None;
    for (i, d) in decisions.iter().enumerate() {
        if d.role == SemanticRole::Background {
            let area = elements[i].intrinsic_area();
            if keep.is_none_or(|(_, best)| area > best) {
                keep = Some((i, area));
            }
        }
    }
    let Some((keep, _)) = keep else { return };
    for (i, d) in decisions.iter_mut().enumerate() {
        if d.role == SemanticRole::Background && i != keep {
            d.role = SemanticRole::LogoImage;
            d.demoted = true;
        }
    }
}

fn remote_label(labeler: &dyn ElementLabeler, e: &Element) -> Result<String, PlanError> {
    let bitmap = e.bitmap().expect("remote labeling is only used for image elements");
    let req = LabelingRequest::element_only(thumbnail(bitmap, THUMBNAIL_MAX_SIDE));
    let prompt = build_labeling_prompt(&req);
    let images = prompt.resolve(&req);
    labeler
        .label(&prompt, &images)
        .map_err(|source| PlanError::RemoteUnavailable {
            element_id: e.id.clone(),
            source,
        })
}

pub const THUMBNAIL_MAX_SIDE: u32 = 512;

/// Downscales so the longer side is at most `max_side`; smaller bitmaps
/// are returned unchanged.
pub fn thumbnail(img: &RgbaImage, max_side: u32) -> Arc<RgbaImage> {
    let (w, h) = img.dimensions();
    let longest = w.max(h);
    if longest <= max_side || longest == 0 {
        return Arc::new(img.clone());
    }
    let scale = max_side as f64 / longest as f64;
    let nw = ((w as f64 * scale).round() as u32).max(1);
    let nh = ((h as f64 * scale).round() as u32).max(1);
    Arc::new(image::imageops::resize(img, nw, nh, FilterType::Triangle))
}

pub fn heuristic_label(e: &Element, canvas: &Canvas) -> SemanticRole {
    heuristic_rule(e, canvas, &HeuristicThresholds::default()).role()
}

/// First matching rule of the cascade: large area, flat rectangle, small
/// area, otherwise logo/image.
pub fn heuristic_rule(e: &Element, canvas: &Canvas, t: &HeuristicThresholds) -> HeuristicRule {
    let ratio = e.intrinsic_area() as f64 / canvas.area() as f64;
    if ratio >= t.background_area_ratio {
        return HeuristicRule::LargeArea;
    }
    if let Some(bitmap) = e.bitmap() {
        if is_flat_rectangle(bitmap, t) {
            return HeuristicRule::FlatRectangle;
        }
    }
    if ratio <= t.embellishment_area_ratio {
        return HeuristicRule::SmallArea;
    }
    HeuristicRule::Default
}

fn is_flat_rectangle(img: &RgbaImage, t: &HeuristicThresholds) -> bool {
    let mut n = 0u64;
    let mut sum = [0f64; 3];
    let mut sum_sq = [0f64; 3];
    let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0u32, 0u32);
    for (x, y, p) in img.enumerate_pixels() {
        if p.0[3] < t.opaque_alpha {
            continue;
        }
        n += 1;
        for c in 0..3 {
            let v = p.0[c] as f64;
            sum[c] += v;
            sum_sq[c] += v * v;
        }
        x0 = x0.min(x);
        y0 = y0.min(y);
        x1 = x1.max(x);
        y1 = y1.max(y);
    }
    if n == 0 {
        return false;
    }
    let footprint = (x1 - x0 + 1) as u64 * (y1 - y0 + 1) as u64;
    if (n as f64) < t.underlay_min_rect_fill * footprint as f64 {
        return false;
    }
    (0..3).all(|c| {
        let mean = sum[c] / n as f64;
        let var = (sum_sq[c] / n as f64 - mean * mean).max(0.0);
        var.sqrt() <= t.underlay_max_channel_std
    })
}

/// Extra context available when labeling elements of a finished design.
#[derive(Debug, Clone)]
pub struct TrainingContext {
    pub design: Option<Arc<RgbaImage>>,
    pub canvas_width: u32,
    pub canvas_height: u32,
    pub element_width: u32,
    pub element_height: u32,
}

#[derive(Debug, Clone)]
pub struct LabelingRequest {
    pub element: Arc<RgbaImage>,
    pub training: Option<TrainingContext>,
}

impl LabelingRequest {
    pub fn element_only(element: Arc<RgbaImage>) -> Self {
        Self {
            element,
            training: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelSlot {
    Design,
    Element,
}

/// Prompt text plus the images its `<image>` tokens stand for, in order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelingPrompt {
    pub text: String,
    pub slots: Vec<LabelSlot>,
}

impl LabelingPrompt {
    pub fn resolve(&self, req: &LabelingRequest) -> Vec<Arc<RgbaImage>> {
        self.slots
            .iter()
            .filter_map(|slot| match slot {
                LabelSlot::Element => Some(req.element.clone()),
                LabelSlot::Design => req.training.as_ref()?.design.clone(),
            })
            .collect()
    }
}

const LABELING_PROMPT_BODY: &str = "\
You are an excellent graphic designer.
Your task is to determine the role of the given element, which is rendered as an image.
There are 4 possible options: Background, Underlay, Logo/Image or Embellishment.
Please refer to the detailed descriptions below to make your prediction.

Background: The foundational layer of the design, typically large in size and covering the entire canvas. It may consist of a solid color, gradient, landscape image, or similar visual foundation.

Underlay: A supportive layer placed beneath key content, often used to create contrast or highlight the main design elements, such as borders, buttons, color overlays, and so on.

Logo/Image: A core visual element that represents a brand, product, or entity. It combines both imagery and logo elements to capture attention and convey the primary message.

Embellishment: Decorative elements that enhance visual appeal without conveying core information. These elements add style to the design. Note that they are usually small in size.

When you respond, please output only one word from the 4 options.
Do not include any additional explanations or irrelevant information.

";

const ELEMENT_ONLY_TAIL: &str = "The element is <image>. Please predict the given element role:";

/// Builds the element labeling prompt. With a training context that
/// includes the design raster, the closing request is replaced by the
/// variant that also shows the design and both sizes.
pub fn build_labeling_prompt(req: &LabelingRequest) -> LabelingPrompt {
    let mut text = String::from(LABELING_PROMPT_BODY);
    match req.training.as_ref().filter(|t| t.design.is_some()) {
        Some(ctx) => {
            text.push_str(&format!(
                "The overall design is <image>.\n\
                 The canvas width is {}px, canvas height is {}px.\n\
                 The element is <image>.\n\
                 The element width is {}px, element height is {}px.\n\
                 Please also consider the provided canvas and element width/height, as they might be helpful in making a decision.\n\
                 Please predict the given element role:",
                ctx.canvas_width, ctx.canvas_height, ctx.element_width, ctx.element_height
            ));
            LabelingPrompt {
                text,
                slots: vec![LabelSlot::Design, LabelSlot::Element],
            }
        }
        None => {
            text.push_str(ELEMENT_ONLY_TAIL);
            LabelingPrompt {
                text,
                slots: vec![LabelSlot::Element],
            }
        }
    }
}

pub fn parse_label(response: &str) -> Result<SemanticRole, UnrecognizedLabel> {
    let cleaned = response
        .trim()
        .trim_matches(|c: char| matches!(c, '.' | '"' | '\'' | '*' | '`'))
        .trim()
        .to_ascii_lowercase();
    match cleaned.as_str() {
        "background" => Ok(SemanticRole::Background),
        "underlay" => Ok(SemanticRole::Underlay),
        "logo/image" | "logo" | "image" | "logo / image" => Ok(SemanticRole::LogoImage),
        "embellishment" => Ok(SemanticRole::Embellishment),
        _ => Err(UnrecognizedLabel(response.to_string())),
    }
}
