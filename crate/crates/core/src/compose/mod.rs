//! Layer-by-layer composition: five turns, each answered by a backend,
//! parsed, rendered onto the canvas and fed back into the next turn.

pub mod backend;
pub mod heuristic;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::Instant;

use image::RgbaImage;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::chat::{ChatMessage, ChatRole, SamplingParams};
use crate::codec::{
    build_turn_at, parse_layer_output, serialize_layer_output, serialize_layer_output_with,
    CodecError, Conversation, FontVocab, ImageSlot, JsonStyle, LayerInput, LayerOutput, Turn,
};
use crate::model::{
    validate_elements_and_plan, Canvas, CanvasState, Design, ElementAttributes, ElementContent,
    LayerPlan, SemanticRole, Violation,
};
use crate::render::{blank_state, composite_layer, FontStore, RenderError, RenderOptions};

pub use backend::{Backend, BackendError, Capabilities, LayerRequest, RemoteChatBackend, ReplayBackend};
pub use heuristic::HeuristicComposer;

#[derive(Debug, Clone)]
pub struct ComposeOptions {
    pub temperature: f64,
    pub top_p: f64,
    /// Parse-repair attempts per layer after the first answer.
    pub retries: usize,
    /// Base seed; variant `i` of a sample uses `seed + i`.
    pub seed: u64,
    pub vocab: FontVocab,
    pub render: RenderOptions,
    pub fonts: Arc<FontStore>,
}

impl Default for ComposeOptions {
    fn default() -> Self {
        Self {
            temperature: 0.7,
            top_p: 0.95,
            retries: 2,
            seed: 0,
            vocab: FontVocab::open(),
            render: RenderOptions::default(),
            fonts: Arc::new(FontStore::builtin()),
        }
    }
}

#[derive(Debug, Error)]
pub enum ComposeError {
    #[error("design is not composable: {}", join(.0))]
    InvalidDesign(Vec<Violation>),
    #[error("layer {layer} of the given prefix is not fully attributed")]
    InvalidPrefix { layer: SemanticRole },
    #[error("prefix length {0} is outside 0..=5")]
    BadPrefix(usize),
    #[error("backend `{backend}` cannot sample distinct variants")]
    SamplingUnsupported { backend: String },
    #[error("{layer} layer: backend failed: {source}")]
    Backend {
        layer: SemanticRole,
        #[source]
        source: BackendError,
    },
    #[error("{layer} layer: unusable answer after {attempts} attempts: {source}")]
    Parse {
        layer: SemanticRole,
        attempts: usize,
        #[source]
        source: CodecError,
    },
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Render(#[from] RenderError),
}

fn join(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerTrace {
    pub layer: SemanticRole,
    /// Copied from the input design instead of asking the backend.
    pub given: bool,
    pub calls: usize,
    pub retries: usize,
    pub elapsed_ms: u64,
}

#[derive(Debug, Clone)]
pub struct CompositionTrace {
    pub backend: String,
    pub conversation: Conversation,
    /// G0 through G5.
    pub states: Vec<CanvasState>,
    pub layers: Vec<LayerTrace>,
}

#[derive(Debug, Clone)]
pub struct Composition {
    pub design: Design,
    pub trace: CompositionTrace,
}

impl Composition {
    pub fn final_state(&self) -> &CanvasState {
        self.trace.states.last().expect("G0 is always present")
    }
}

#[derive(Debug, Clone)]
enum LayerMode {
    /// All members keep their input attributes; the turn is replayed.
    Given,
    /// Ask for `ids`; `context` is an extra sentence in the human turn.
    Query { ids: Vec<String>, context: Option<String> },
}

struct Job<'a> {
    design: &'a Design,
    modes: [LayerMode; 5],
    /// Attributes known up front (given layers and kept members).
    placed: BTreeMap<String, ElementAttributes>,
    indices: BTreeMap<String, u32>,
    variant: Option<u64>,
}

const REPAIR_PREFIX: &str = "The previous answer could not be used";

fn repair_message(role: SemanticRole, err: &CodecError) -> String {
    let keys = if role == SemanticRole::Text {
        "index, left, top, width, height, angle, font, font_size, color, text_align, capitalize, letter_spacing, line_height"
    } else {
        "index, left, top, width, height"
    };
    format!(
        "{REPAIR_PREFIX} ({err}). Answer again with one JSON object per announced element, \
         each with the keys {keys}, and nothing else."
    )
}

fn slot_images(
    slots: &[ImageSlot],
    state: &Arc<RgbaImage>,
    design: &Design,
) -> Vec<Arc<RgbaImage>> {
    slots
        .iter()
        .map(|slot| match slot {
            ImageSlot::CanvasState { .. } => state.clone(),
            ImageSlot::Element { element_id } => match design.element(element_id).map(|e| &e.content) {
                Some(ElementContent::Image(img)) => img.bitmap.clone(),
                _ => Arc::new(RgbaImage::new(1, 1)),
            },
        })
        .collect()
}

fn run(job: Job<'_>, backend: &dyn Backend, opts: &ComposeOptions) -> Result<Composition, ComposeError> {
    let Job {
        design,
        modes,
        mut placed,
        indices,
        variant,
    } = job;
    let canvas = design.canvas;
    let sampling = SamplingParams {
        temperature: opts.temperature,
        top_p: opts.top_p,
        seed: variant,
    };
    let mut messages: Vec<ChatMessage> = Vec::new();
    let mut states = vec![blank_state(&canvas, &opts.render)];
    let mut turns = Vec::with_capacity(5);
    let mut layers = Vec::with_capacity(5);
    let mut working = Design {
        attributes: BTreeMap::new(),
        ..design.clone()
    };

    for (n, (role, mode)) in SemanticRole::ALL.into_iter().zip(&modes).enumerate() {
        let turn_no = n + 1;
        let started = Instant::now();
        let prev = states.last().expect("G0 present").clone();
        let (ids, context, given) = match mode {
            LayerMode::Given => (design.plan.layer(role).to_vec(), None, true),
            LayerMode::Query { ids, context } => (ids.clone(), context.clone(), false),
        };
        let input = LayerInput::from_elements(role, &ids, &design.elements, &indices)?;
        let human = build_turn_at(turn_no, &canvas, &input, prev.level, context.as_deref())?;
        let state_img = Arc::new(prev.image.clone());
        messages.push(ChatMessage::with_images(
            ChatRole::User,
            &human.text,
            &slot_images(&human.slots, &state_img, design),
        ));

        let (assistant, records, calls, retries) = if given {
            let records: Vec<ElementAttributes> = ids.iter().map(|id| placed[id].clone()).collect();
            let text = serialize_layer_output(&LayerOutput {
                role,
                records: records.clone(),
            });
            (text, records, 0, 0)
        } else {
            let mut attempt_msgs = messages.clone();
            let mut attempt = 0;
            loop {
                let req = LayerRequest {
                    turn: turn_no,
                    attempt,
                    role,
                    input: &input,
                    messages: &attempt_msgs,
                    canvas: &canvas,
                    elements: &design.elements,
                    plan: &design.plan,
                    state: &prev,
                    placed: &placed,
                    sampling,
                    variant,
                };
                let answer = backend
                    .respond(&req)
                    .map_err(|source| ComposeError::Backend { layer: role, source })?;
                match parse_layer_output(&answer, &input, &opts.vocab) {
                    Ok(out) => break (answer, out.records, attempt + 1, attempt),
                    Err(err) if attempt < opts.retries => {
                        log::warn!("{role} layer: retrying after unusable answer: {err}");
                        attempt_msgs.push(ChatMessage::text(ChatRole::Assistant, answer));
                        attempt_msgs.push(ChatMessage::text(ChatRole::User, repair_message(role, &err)));
                        attempt += 1;
                    }
                    Err(source) => {
                        return Err(ComposeError::Parse {
                            layer: role,
                            attempts: attempt + 1,
                            source,
                        })
                    }
                }
            }
        };
        messages.push(ChatMessage::text(ChatRole::Assistant, assistant.clone()));
        for r in records {
            placed.insert(r.element_id.clone(), r);
        }
        for id in design.plan.layer(role) {
            if let Some(a) = placed.get(id) {
                working.attributes.insert(id.clone(), a.clone());
            }
        }
        states.push(composite_layer(&prev, &working, &opts.fonts, &opts.render)?);
        turns.push(Turn {
            role,
            human,
            assistant,
        });
        layers.push(LayerTrace {
            layer: role,
            given,
            calls,
            retries,
            elapsed_ms: started.elapsed().as_millis() as u64,
        });
    }

    Ok(Composition {
        design: working,
        trace: CompositionTrace {
            backend: backend.name().to_string(),
            conversation: Conversation { canvas, turns },
            states,
            layers,
        },
    })
}

fn check_structure(design: &Design) -> Result<(), ComposeError> {
    let v = validate_elements_and_plan(design);
    if v.is_empty() {
        Ok(())
    } else {
        Err(ComposeError::InvalidDesign(v))
    }
}

fn query_all(design: &Design) -> [LayerMode; 5] {
    SemanticRole::ALL.map(|role| LayerMode::Query {
        ids: design.plan.layer(role).to_vec(),
        context: None,
    })
}

/// Composes every layer of `design` from its elements and plan. Existing
/// attributes are ignored.
pub fn compose(design: &Design, backend: &dyn Backend, opts: &ComposeOptions) -> Result<Composition, ComposeError> {
    compose_variant(design, backend, opts, None)
}

fn compose_variant(
    design: &Design,
    backend: &dyn Backend,
    opts: &ComposeOptions,
    variant: Option<u64>,
) -> Result<Composition, ComposeError> {
    check_structure(design)?;
    run(
        Job {
            design,
            modes: query_all(design),
            placed: BTreeMap::new(),
            indices: design.plan.contiguous_indices(),
            variant,
        },
        backend,
        opts,
    )
}

/// Keeps layers `1..=k` as given and composes the rest.
pub fn compose_partial(
    design: &Design,
    k: usize,
    backend: &dyn Backend,
    opts: &ComposeOptions,
) -> Result<Composition, ComposeError> {
    if k > 5 {
        return Err(ComposeError::BadPrefix(k));
    }
    check_structure(design)?;
    let mut placed = BTreeMap::new();
    let mut indices = BTreeMap::new();
    for role in &SemanticRole::ALL[..k] {
        for id in design.plan.layer(*role) {
            let a = design
                .attributes
                .get(id)
                .filter(|a| a.element_id == *id && (a.text.is_some() == (*role == SemanticRole::Text)))
                .ok_or(ComposeError::InvalidPrefix { layer: *role })?;
            indices.insert(id.clone(), a.index);
            placed.insert(id.clone(), a.clone());
        }
    }
    let taken: BTreeSet<u32> = indices.values().copied().collect();
    if taken.len() != indices.len() {
        return Err(ComposeError::InvalidPrefix {
            layer: SemanticRole::ALL[k.saturating_sub(1)],
        });
    }
    let mut free = (0u32..).filter(|i| !taken.contains(i));
    for role in &SemanticRole::ALL[k..] {
        for id in design.plan.layer(*role) {
            indices.insert(id.clone(), free.next().expect("unbounded range"));
        }
    }
    let mut modes = query_all(design);
    for m in &mut modes[..k] {
        *m = LayerMode::Given;
    }
    run(
        Job {
            design,
            modes,
            placed,
            indices,
            variant: None,
        },
        backend,
        opts,
    )
}

/// `n` independent compositions. One sample is a plain [`compose`];
/// more need a backend that can sample.
pub fn sample_variants(
    design: &Design,
    n: usize,
    backend: &dyn Backend,
    opts: &ComposeOptions,
) -> Result<Vec<Composition>, ComposeError> {
    match n {
        0 => return Ok(Vec::new()),
        1 => return Ok(vec![compose(design, backend, opts)?]),
        _ => {}
    }
    let caps = backend.capabilities();
    if !caps.sampling {
        return Err(ComposeError::SamplingUnsupported {
            backend: backend.name().to_string(),
        });
    }
    let one = |i: usize| compose_variant(design, backend, opts, Some(opts.seed.wrapping_add(i as u64)));
    if caps.parallel {
        (0..n).into_par_iter().map(one).collect()
    } else {
        (0..n).map(one).collect()
    }
}

/// Adds `new_elements` (planned by `new_plan`) to a fully attributed
/// design, keeping every existing placement.
pub fn fill_elements(
    base: &Design,
    new_elements: Vec<crate::model::Element>,
    new_plan: &LayerPlan,
    backend: &dyn Backend,
    opts: &ComposeOptions,
) -> Result<Composition, ComposeError> {
    let mut design = base.clone();
    design.elements.extend(new_elements);
    design.plan = base.plan.merged(new_plan);
    check_structure(&design)?;

    let placed = base.attributes.clone();
    for role in SemanticRole::ALL {
        if !base.layer_is_attributed(role) {
            return Err(ComposeError::InvalidPrefix { layer: role });
        }
    }
    let mut indices: BTreeMap<String, u32> = placed.iter().map(|(id, a)| (id.clone(), a.index)).collect();
    let mut next = indices.values().max().map_or(0, |m| m + 1);
    let modes = SemanticRole::ALL.map(|role| {
        let fresh: Vec<String> = new_plan.layer(role).to_vec();
        if fresh.is_empty() {
            return LayerMode::Given;
        }
        for id in &fresh {
            indices.insert(id.clone(), next);
            next += 1;
        }
        let kept: Vec<ElementAttributes> = base.layer_attributes(role).into_iter().cloned().collect();
        let context = (!kept.is_empty()).then(|| {
            let json = serialize_layer_output_with(&LayerOutput { role, records: kept }, JsonStyle::Compact);
            format!("Already placed {} elements: {}.", role.layer_name(), json.replace('\n', " "))
        });
        LayerMode::Query { ids: fresh, context }
    });
    run(
        Job {
            design: &design,
            modes,
            placed,
            indices,
            variant: None,
        },
        backend,
        opts,
    )
}

/// Recomposes the same elements and plan on a canvas of another size.
pub fn resize_compose(
    design: &Design,
    canvas: Canvas,
    backend: &dyn Backend,
    opts: &ComposeOptions,
) -> Result<Composition, ComposeError> {
    let resized = Design {
        canvas: canvas.with_background(design.canvas.background_color),
        attributes: BTreeMap::new(),
        ..design.clone()
    };
    compose(&resized, backend, opts)
}
