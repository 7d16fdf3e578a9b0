//! Deterministic rule-based backend for running the protocol offline.
//!
//! Layout bands as fractions of the canvas height:
//! images 0.13..0.52, text (and the underlays beneath it) 0.56..0.88,
//! embellishments in the corners. The background always covers the
//! whole canvas.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::backend::{Backend, BackendError, Capabilities, LayerRequest};
use crate::codec::{serialize_layer_output, LayerOutput, LayerPayload};
use crate::model::{BBox, Element, ElementAttributes, Rgb, SemanticRole, TextAlign, TextAttributes};
use crate::render::{layout_text, FontStore};

const IMAGE_BAND: (f64, f64) = (0.13, 0.52);
const TEXT_BAND: (f64, f64) = (0.56, 0.88);
const UNDERLAY_WIDTH: f64 = 0.9;
const TEXT_MAX_WIDTH: f64 = 0.9;
const TEXT_MIN_WIDTH: f64 = 0.4;
const CORNER_MARGIN: f64 = 0.03;
const CORNER_SIZE: f64 = 0.08;
/// Font size of the k-th text as a fraction of canvas height.
const FONT_LADDER: [f64; 6] = [0.055, 0.04, 0.032, 0.026, 0.022, 0.018];
const LINE_HEIGHT: f64 = 1.2;
/// Variant jitter: box offset as a fraction of the canvas side.
const JITTER: f64 = 0.02;
/// Smallest box area as a fraction of the canvas; twice the validity floor.
const MIN_BOX_AREA: f64 = 0.002;

#[derive(Debug, Clone)]
pub struct HeuristicComposer {
    font: String,
    fonts: Arc<FontStore>,
}

impl HeuristicComposer {
    /// `font` is written into every text record and used to measure lines.
    pub fn new(font: impl Into<String>, fonts: Arc<FontStore>) -> Self {
        Self {
            font: font.into(),
            fonts,
        }
    }

    pub fn font(&self) -> &str {
        &self.font
    }
}

impl Default for HeuristicComposer {
    fn default() -> Self {
        Self::new(crate::render::text::FALLBACK_FAMILY, Arc::new(FontStore::builtin()))
    }
}

struct Ctx {
    w: f64,
    h: f64,
    rng: Option<ChaCha8Rng>,
}

impl Ctx {
    fn jitter(&mut self, b: BBox) -> BBox {
        let Some(rng) = self.rng.as_mut() else {
            return b;
        };
        let dx = rng.gen_range(-JITTER..=JITTER) * self.w;
        let dy = rng.gen_range(-JITTER..=JITTER) * self.h;
        BBox::new(b.left + dx.round() as i64, b.top + dy.round() as i64, b.width, b.height)
    }

    /// Scales `(w, h)` up, keeping its aspect, to at least [`MIN_BOX_AREA`].
    fn at_least(&self, (w, h): (f64, f64)) -> (f64, f64) {
        let need = MIN_BOX_AREA * self.w * self.h;
        if w * h >= need {
            return (w, h);
        }
        let k = (need / (w * h)).sqrt();
        (w * k, h * k)
    }

    fn scale(&mut self) -> f64 {
        self.rng.as_mut().map_or(1.0, |r| r.gen_range(0.9..=1.1))
    }
}

fn fit(e: &Element, box_w: f64, box_h: f64) -> (f64, f64) {
    let aspect = if e.intrinsic_width == 0 || e.intrinsic_height == 0 {
        1.0
    } else {
        (e.intrinsic_width as f64 / e.intrinsic_height as f64).clamp(0.25, 4.0)
    };
    let (mut w, mut h) = (box_w, box_w / aspect);
    if h > box_h {
        h = box_h;
        w = h * aspect;
    }
    (w.max(1.0), h.max(1.0))
}

fn centered(cx: f64, cy: f64, w: f64, h: f64) -> BBox {
    BBox::new(
        (cx - w / 2.0).round() as i64,
        (cy - h / 2.0).round() as i64,
        w.round().max(1.0) as u32,
        h.round().max(1.0) as u32,
    )
}

/// Mean Rec. 601 luma of the state pixels under `b`, 0..1.
fn luminance_under(req: &LayerRequest<'_>, b: &BBox) -> f64 {
    let Some(clip) = b.clip_to(req.canvas) else {
        let [r, g, bl] = req.canvas.background_color;
        return (0.299 * r as f64 + 0.587 * g as f64 + 0.114 * bl as f64) / 255.0;
    };
    let mut sum = 0.0;
    for y in clip.top..clip.bottom() {
        for x in clip.left..clip.right() {
            let p = req.state.image.get_pixel(x as u32, y as u32).0;
            sum += 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64;
        }
    }
    sum / clip.area() as f64 / 255.0
}

fn contrast_color(luma: f64) -> Rgb {
    if luma > 0.5 {
        [0, 0, 0]
    } else {
        [255, 255, 255]
    }
}

impl HeuristicComposer {
    fn place_layer(&self, req: &LayerRequest<'_>) -> Vec<ElementAttributes> {
        let canvas = req.canvas;
        let mut ctx = Ctx {
            w: canvas.width as f64,
            h: canvas.height as f64,
            rng: req
                .variant
                .map(|v| ChaCha8Rng::seed_from_u64(v.wrapping_mul(31).wrapping_add(req.turn as u64))),
        };
        let items = req.input.items();
        let element = |id: &str| req.elements.iter().find(|e| e.id == id).expect("announced element exists");
        // Members of this layer already placed (element filling).
        let existing: Vec<&ElementAttributes> = req
            .plan
            .layer(req.role)
            .iter()
            .filter_map(|id| req.placed.get(id))
            .collect();

        let record = |id: &str, index: u32, bbox: BBox| ElementAttributes {
            element_id: id.to_string(),
            index,
            bbox,
            text: None,
        };

        match req.role {
            SemanticRole::Background => items
                .iter()
                .map(|it| record(&it.element_id, it.index, canvas.bbox()))
                .collect(),
            SemanticRole::Underlay => {
                let total = existing.len() + items.len();
                let (top, bottom) = (TEXT_BAND.0 * ctx.h, TEXT_BAND.1 * ctx.h);
                let slot = (bottom - top) / total as f64;
                items
                    .iter()
                    .enumerate()
                    .map(|(k, it)| {
                        let (w, h) = ctx.at_least(fit(element(&it.element_id), UNDERLAY_WIDTH * ctx.w, slot * 0.9));
                        let cy = top + slot * ((existing.len() + k) as f64 + 0.5);
                        let b = centered(ctx.w / 2.0, cy, w, h);
                        record(&it.element_id, it.index, ctx.jitter(b))
                    })
                    .collect()
            }
            SemanticRole::LogoImage => self.place_images(req, &mut ctx, &existing),
            SemanticRole::Text => self.place_texts(req, &mut ctx, &existing),
            SemanticRole::Embellishment => {
                let min_side = ctx.w.min(ctx.h);
                let (m, s) = (CORNER_MARGIN * min_side, CORNER_SIZE * min_side);
                items
                    .iter()
                    .enumerate()
                    .map(|(k, it)| {
                        let slot = existing.len() + k;
                        let (corner, ring) = (slot % 4, (slot / 4) as f64);
                        let (w, h) = ctx.at_least(fit(element(&it.element_id), s, s));
                        let step = ring * (w.max(s) + m);
                        let left = if corner % 2 == 0 { m + step } else { ctx.w - m - w - step };
                        let top = if corner < 2 { m } else { ctx.h - m - h };
                        let b = BBox::new(left.round() as i64, top.round() as i64, w.round() as u32, h.round() as u32);
                        record(&it.element_id, it.index, ctx.jitter(b))
                    })
                    .collect()
            }
        }
    }

    fn place_images(
        &self,
        req: &LayerRequest<'_>,
        ctx: &mut Ctx,
        existing: &[&ElementAttributes],
    ) -> Vec<ElementAttributes> {
        let items = req.input.items();
        let element = |id: &str| req.elements.iter().find(|e| e.id == id).expect("announced element exists");
        let (band_top, band_bottom) = (IMAGE_BAND.0 * ctx.h, IMAGE_BAND.1 * ctx.h);
        let mut out = Vec::with_capacity(items.len());

        // The largest new image gets the hero slot unless images exist already.
        let mut order: Vec<usize> = (0..items.len()).collect();
        order.sort_by_key(|&k| std::cmp::Reverse(element(&items[k].element_id).intrinsic_area()));
        let mut rest = order.as_slice();
        // Existing images already fill the hero slot and the first grid cells.
        let first_cell = existing.len().saturating_sub(1);
        let grid_count = if existing.is_empty() {
            items.len().saturating_sub(1)
        } else {
            first_cell + items.len()
        };
        let hero_bottom = if grid_count == 0 {
            band_bottom
        } else {
            band_top + (band_bottom - band_top) * 0.66
        };
        if existing.is_empty() {
            if let Some((&hero, tail)) = rest.split_first() {
                let it = &items[hero];
                let (w, h) = ctx.at_least(fit(element(&it.element_id), 0.84 * ctx.w, hero_bottom - band_top));
                let b = centered(ctx.w / 2.0, band_top + (hero_bottom - band_top) / 2.0, w, h);
                out.push((hero, ctx.jitter(b)));
                rest = tail;
            }
        }
        if grid_count > 0 {
            let cols = grid_count.min(4);
            let rows = grid_count.div_ceil(cols);
            let (gx, gw) = (0.08 * ctx.w, 0.84 * ctx.w);
            let (cw, ch) = (gw / cols as f64, (band_bottom - hero_bottom) / rows as f64);
            for (n, &k) in rest.iter().enumerate() {
                let cell = first_cell + n;
                let (r, c) = (cell / cols, cell % cols);
                let (w, h) = ctx.at_least(fit(element(&items[k].element_id), cw * 0.85, ch * 0.85));
                let b = centered(gx + cw * (c as f64 + 0.5), hero_bottom + ch * (r as f64 + 0.5), w, h);
                out.push((k, ctx.jitter(b)));
            }
        }
        out.sort_by_key(|(k, _)| *k);
        out.into_iter()
            .map(|(k, bbox)| ElementAttributes {
                element_id: items[k].element_id.clone(),
                index: items[k].index,
                bbox,
                text: None,
            })
            .collect()
    }

    fn place_texts(
        &self,
        req: &LayerRequest<'_>,
        ctx: &mut Ctx,
        existing: &[&ElementAttributes],
    ) -> Vec<ElementAttributes> {
        let items = req.input.items();
        if items.is_empty() {
            return Vec::new();
        }
        let (face, _) = self.fonts.lookup(&self.font);
        let max_w = TEXT_MAX_WIDTH * ctx.w;
        let mut band_top = TEXT_BAND.0 * ctx.h;
        if let Some(lowest) = existing.iter().map(|a| a.bbox.bottom()).max() {
            band_top = band_top.max(lowest as f64 + 0.01 * ctx.h);
        }
        let band_bottom = (TEXT_BAND.1 * ctx.h).max(band_top + 0.05 * ctx.h);
        let jitter_scale = ctx.scale();

        let texts: Vec<&str> = items
            .iter()
            .map(|it| match &it.payload {
                LayerPayload::Text(t) => t.as_str(),
                LayerPayload::Image => "",
            })
            .collect();
        let measure = |text: &str, size: u32| -> f64 {
            let attrs = TextAttributes {
                line_height: LINE_HEIGHT,
                ..TextAttributes::new(self.font.clone(), size)
            };
            layout_text(text, &attrs, &BBox::default(), face)
                .lines
                .iter()
                .map(|l| l.advance)
                .fold(0.0, f64::max)
        };

        let rung = existing.len();
        let mut sizes: Vec<f64> = (0..items.len())
            .map(|k| FONT_LADDER[(rung + k).min(FONT_LADDER.len() - 1)] * ctx.h * jitter_scale)
            .collect();
        let lines: Vec<f64> = texts.iter().map(|t| t.split('\n').count() as f64).collect();
        for _ in 0..3 {
            for (k, size) in sizes.iter_mut().enumerate() {
                let adv = measure(texts[k], size.round().max(1.0) as u32);
                if adv > max_w {
                    *size *= max_w / adv;
                }
            }
            let total: f64 = sizes
                .iter()
                .zip(&lines)
                .map(|(s, n)| s * LINE_HEIGHT * n + 0.25 * s)
                .sum();
            let avail = band_bottom - band_top;
            if total <= avail {
                break;
            }
            for s in &mut sizes {
                *s *= avail / total;
            }
        }

        let mut y = band_top;
        items
            .iter()
            .enumerate()
            .map(|(k, it)| {
                let size = sizes[k].round().max(1.0) as u32;
                let adv = measure(texts[k], size);
                let w = (adv.ceil() + 2.0).clamp(TEXT_MIN_WIDTH * ctx.w, max_w.max(TEXT_MIN_WIDTH * ctx.w));
                let h = (size as f64 * LINE_HEIGHT * lines[k]).ceil().max(1.0);
                let b = ctx.jitter(BBox::new(
                    ((ctx.w - w) / 2.0).round() as i64,
                    y.round() as i64,
                    w as u32,
                    h as u32,
                ));
                y += h + 0.25 * size as f64;
                let color = contrast_color(luminance_under(req, &b));
                ElementAttributes {
                    element_id: it.element_id.clone(),
                    index: it.index,
                    bbox: b,
                    text: Some(TextAttributes {
                        angle: 0.0,
                        font: self.font.clone(),
                        font_size: size,
                        color,
                        text_align: TextAlign::Center,
                        capitalize: false,
                        letter_spacing: 0.0,
                        line_height: LINE_HEIGHT,
                    }),
                }
            })
            .collect()
    }
}

impl Backend for HeuristicComposer {
    fn name(&self) -> &str {
        "heuristic"
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            sampling: true,
            parallel: true,
        }
    }

    fn respond(&self, req: &LayerRequest<'_>) -> Result<String, BackendError> {
        let records = self.place_layer(req);
        Ok(serialize_layer_output(&LayerOutput {
            role: req.role,
            records,
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fit_clamps_extreme_aspect() {
        let e = Element::image("e", image::RgbaImage::new(1000, 10));
        let (w, h) = fit(&e, 100.0, 100.0);
        assert_eq!((w, h), (100.0, 25.0));
        let (w, h) = fit(&Element::text("t", "x"), 50.0, 20.0);
        assert_eq!((w, h), (20.0, 20.0));
    }

    #[test]
    fn contrast_picks_black_on_light() {
        assert_eq!(contrast_color(0.9), [0, 0, 0]);
        assert_eq!(contrast_color(0.1), [255, 255, 255]);
    }
}
