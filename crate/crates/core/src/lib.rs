//! Layer-by-layer composition of graphic designs from multimodal elements.
//!
//! Elements are planned into five semantic layers (background, underlay,
//! logo/image, text, embellishment), attributed one layer at a time by a
//! pluggable chat-style backend that sees the rendered canvas so far, and
//! finally rendered and scored with layout metrics.

pub mod chat;
pub mod cli;
pub mod codec;
pub mod compose;
pub mod dataset;
pub mod metrics;
pub mod model;
pub mod planner;
pub mod render;
pub mod saliency;

pub use model::{
    area, intersect, validate_design, BBox, Canvas, CanvasState, Design, Element, ElementAttributes,
    ElementContent, LayerPlan, Modality, SemanticRole, TextAlign, TextAttributes, Violation,
};
