//! Raster compositor for canvas states G0..G5.
//!
//! Layers are drawn in placement order onto a blank canvas; inside a
//! layer elements follow the plan order. Image elements are resampled
//! bilinearly into their box and alpha-composited; text goes through
//! [`text::render_text`].

pub mod text;

use std::sync::{Arc, Mutex};

use image::{Rgba, RgbaImage};
use thiserror::Error;

use crate::model::{BBox, Canvas, CanvasState, Design, ElementContent, Rgb, SemanticRole};

pub use text::{layout_text, render_text, FontStore, LineLayout, PlacedGlyph, TextLayout};

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("element `{0}` has no attributes")]
    MissingAttributes(String),
    #[error("text element `{0}` has no text attributes")]
    MissingTextAttributes(String),
    #[error("element `{0}` is in the plan but not in the design")]
    UnknownElement(String),
    #[error("cannot load font: {0}")]
    FontLoadFailure(String),
    #[error("level {0} is outside 0..=5")]
    BadLevel(u8),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FontSubstitution {
    pub requested: String,
    pub used: String,
}

pub type SubstitutionLog = Arc<Mutex<Vec<FontSubstitution>>>;

#[derive(Debug, Clone)]
pub struct RenderOptions {
    /// Glyph antialiasing. Off gives hard 0/1 glyph coverage.
    pub antialias: bool,
    /// Overrides the canvas background color.
    pub background: Option<Rgb>,
    pub substitutions: Option<SubstitutionLog>,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            antialias: true,
            background: None,
            substitutions: None,
        }
    }
}

impl RenderOptions {
    pub fn aliased() -> Self {
        Self {
            antialias: false,
            ..Self::default()
        }
    }

    pub(crate) fn record_substitution(&self, requested: &str, used: &str) {
        if let Some(log) = &self.substitutions {
            log.lock().unwrap().push(FontSubstitution {
                requested: requested.to_string(),
                used: used.to_string(),
            });
        }
    }
}

pub fn blank_state(canvas: &Canvas, opts: &RenderOptions) -> CanvasState {
    let canvas = match opts.background {
        Some(bg) => canvas.with_background(bg),
        None => *canvas,
    };
    CanvasState::blank(&canvas)
}

/// Renders layers `1..=upto` of `design` onto a blank canvas.
pub fn render_state(
    design: &Design,
    upto: u8,
    store: &FontStore,
    opts: &RenderOptions,
) -> Result<CanvasState, RenderError> {
    if upto > 5 {
        return Err(RenderError::BadLevel(upto));
    }
    let mut state = blank_state(&design.canvas, opts);
    for _ in 0..upto {
        state = composite_layer(&state, design, store, opts)?;
    }
    Ok(state)
}

/// Draws the next layer (`prev.level + 1`) over `prev`.
pub fn composite_layer(
    prev: &CanvasState,
    design: &Design,
    store: &FontStore,
    opts: &RenderOptions,
) -> Result<CanvasState, RenderError> {
    let level = prev.level + 1;
    let role = SemanticRole::from_order(level).ok_or(RenderError::BadLevel(level))?;
    let mut image = prev.image.clone();
    draw_layer(&mut image, design, role, store, opts)?;
    Ok(CanvasState { level, image })
}

/// Draws every element of `role` onto `target` in plan order.
pub fn draw_layer(
    target: &mut RgbaImage,
    design: &Design,
    role: SemanticRole,
    store: &FontStore,
    opts: &RenderOptions,
) -> Result<(), RenderError> {
    for id in design.plan.layer(role) {
        draw_element(target, design, id, store, opts)?;
    }
    Ok(())
}

pub fn draw_element(
    target: &mut RgbaImage,
    design: &Design,
    id: &str,
    store: &FontStore,
    opts: &RenderOptions,
) -> Result<(), RenderError> {
    let element = design
        .element(id)
        .ok_or_else(|| RenderError::UnknownElement(id.to_string()))?;
    let attrs = design
        .attributes
        .get(id)
        .ok_or_else(|| RenderError::MissingAttributes(id.to_string()))?;
    match &element.content {
        ElementContent::Image(img) => draw_image(target, &img.bitmap, &attrs.bbox),
        ElementContent::Text(t) => {
            let ta = attrs
                .text
                .as_ref()
                .ok_or_else(|| RenderError::MissingTextAttributes(id.to_string()))?;
            render_text(target, t, ta, &attrs.bbox, store, opts);
        }
    }
    Ok(())
}

/// Resamples `src` to the box size (bilinear, premultiplied alpha) and
/// composites it over `target`, clipped to the target bounds.
pub fn draw_image(target: &mut RgbaImage, src: &RgbaImage, bbox: &BBox) {
    let (sw, sh) = src.dimensions();
    if bbox.width == 0 || bbox.height == 0 || sw == 0 || sh == 0 {
        return;
    }
    let bounds = BBox::new(0, 0, target.width(), target.height());
    let Some(clip) = bbox.intersect(&bounds) else {
        return;
    };
    let sx = sw as f64 / bbox.width as f64;
    let sy = sh as f64 / bbox.height as f64;
    for y in clip.top..clip.bottom() {
        let v = ((y - bbox.top) as f64 + 0.5) * sy - 0.5;
        let (y0, y1, fy) = axis_taps(v, sh);
        for x in clip.left..clip.right() {
            let u = ((x - bbox.left) as f64 + 0.5) * sx - 0.5;
            let (x0, x1, fx) = axis_taps(u, sw);
            let p00 = premultiplied(src.get_pixel(x0, y0));
            let p10 = premultiplied(src.get_pixel(x1, y0));
            let p01 = premultiplied(src.get_pixel(x0, y1));
            let p11 = premultiplied(src.get_pixel(x1, y1));
            let mut px = [0f64; 4];
            for c in 0..4 {
                let top = p00[c] + (p10[c] - p00[c]) * fx;
                let bottom = p01[c] + (p11[c] - p01[c]) * fx;
                px[c] = top + (bottom - top) * fy;
            }
            blend_premultiplied(target.get_pixel_mut(x as u32, y as u32), px);
        }
    }
}

fn axis_taps(coord: f64, len: u32) -> (u32, u32, f64) {
    let max = (len - 1) as f64;
    let c = coord.clamp(0.0, max);
    let i0 = c.floor();
    let i1 = (i0 + 1.0).min(max);
    (i0 as u32, i1 as u32, c - i0)
}

fn premultiplied(p: &Rgba<u8>) -> [f64; 4] {
    let a = p.0[3] as f64 / 255.0;
    [p.0[0] as f64 * a, p.0[1] as f64 * a, p.0[2] as f64 * a, p.0[3] as f64]
}

/// Source-over with a premultiplied source (color 0..255, alpha 0..255).
pub(crate) fn blend_premultiplied(dst: &mut Rgba<u8>, src: [f64; 4]) {
    let a = src[3] / 255.0;
    if a <= 0.0 {
        return;
    }
    let da = dst.0[3] as f64 / 255.0;
    let out_a = a + da * (1.0 - a);
    for c in 0..3 {
        let d = dst.0[c] as f64 * da;
        let premul = src[c] + d * (1.0 - a);
        let straight = if out_a > 0.0 { premul / out_a } else { 0.0 };
        dst.0[c] = straight.round().clamp(0.0, 255.0) as u8;
    }
    dst.0[3] = (out_a * 255.0).round().clamp(0.0, 255.0) as u8;
}

/// Fills with a straight color at coverage `alpha` in 0..=1.
pub(crate) fn blend_color(dst: &mut Rgba<u8>, color: Rgb, alpha: f64) {
    if alpha <= 0.0 {
        return;
    }
    let a = alpha.min(1.0);
    blend_premultiplied(
        dst,
        [
            color[0] as f64 * a,
            color[1] as f64 * a,
            color[2] as f64 * a,
            a * 255.0,
        ],
    );
}
