//! Typography: font lookup, line layout and glyph rasterization.

use std::collections::HashMap;
use std::path::Path;

use ab_glyph::{point, Font, FontArc, GlyphId, PxScale, ScaleFont};
use image::RgbaImage;

use super::{blend_color, RenderError, RenderOptions};
use crate::model::{BBox, TextAlign, TextAttributes};

static FALLBACK_FONT: &[u8] = include_bytes!("../../assets/fonts/DejaVuSans.ttf");
pub const FALLBACK_FAMILY: &str = "DejaVu Sans";

/// Font faces by family name plus a fallback used for unknown families.
#[derive(Clone)]
pub struct FontStore {
    faces: HashMap<String, FontArc>,
    fallback: FontArc,
    fallback_name: String,
}

impl std::fmt::Debug for FontStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mut names: Vec<_> = self.faces.keys().collect();
        names.sort();
        f.debug_struct("FontStore")
            .field("faces", &names)
            .field("fallback", &self.fallback_name)
            .finish()
    }
}

fn normalize(name: &str) -> String {
    name.chars()
        .filter(|c| !matches!(c, ' ' | '-' | '_'))
        .flat_map(char::to_lowercase)
        .collect()
}

impl FontStore {
    /// Only the bundled fallback face.
    pub fn builtin() -> Self {
        Self {
            faces: HashMap::new(),
            fallback: FontArc::try_from_slice(FALLBACK_FONT).expect("bundled font parses"),
            fallback_name: FALLBACK_FAMILY.to_string(),
        }
    }

    /// Loads every `.ttf`/`.otf` in `dir`, keyed by file stem. Unreadable
    /// files are skipped with a warning.
    pub fn from_dir(dir: &Path) -> Result<Self, RenderError> {
        let mut store = Self::builtin();
        let entries = std::fs::read_dir(dir)
            .map_err(|e| RenderError::FontLoadFailure(format!("{}: {e}", dir.display())))?;
        let mut paths: Vec<_> = entries.filter_map(|e| e.ok().map(|e| e.path())).collect();
        paths.sort();
        for path in paths {
            let ext = path
                .extension()
                .and_then(|e| e.to_str())
                .map(str::to_ascii_lowercase);
            if !matches!(ext.as_deref(), Some("ttf" | "otf")) {
                continue;
            }
            let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
                continue;
            };
            match std::fs::read(&path).map_err(|e| e.to_string()).and_then(|bytes| {
                FontArc::try_from_vec(bytes).map_err(|e| e.to_string())
            }) {
                Ok(face) => {
                    store.faces.insert(stem.to_string(), face);
                }
                Err(e) => log::warn!("skipping font {}: {e}", path.display()),
            }
        }
        Ok(store)
    }

    /// Replaces the fallback face with the font file at `path`.
    pub fn with_fallback_file(mut self, path: &Path) -> Result<Self, RenderError> {
        let bytes = std::fs::read(path)
            .map_err(|e| RenderError::FontLoadFailure(format!("{}: {e}", path.display())))?;
        self.fallback = FontArc::try_from_vec(bytes)
            .map_err(|e| RenderError::FontLoadFailure(format!("{}: {e}", path.display())))?;
        self.fallback_name = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("fallback")
            .to_string();
        Ok(self)
    }

    pub fn insert(&mut self, family: impl Into<String>, face: FontArc) {
        self.faces.insert(family.into(), face);
    }

    pub fn families(&self) -> impl Iterator<Item = &str> {
        self.faces.keys().map(String::as_str)
    }

    pub fn fallback_name(&self) -> &str {
        &self.fallback_name
    }

    /// Face for `family` (exact, then case/space-insensitive), or the
    /// fallback with `substituted = true`.
    pub fn lookup(&self, family: &str) -> (&FontArc, bool) {
        if let Some(face) = self.faces.get(family) {
            return (face, false);
        }
        let wanted = normalize(family);
        let mut matches: Vec<_> = self
            .faces
            .iter()
            .filter(|(name, _)| normalize(name) == wanted)
            .collect();
        matches.sort_by(|a, b| a.0.cmp(b.0));
        match matches.first() {
            Some((_, face)) => (face, false),
            None => (&self.fallback, true),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlacedGlyph {
    pub ch: char,
    pub id: GlyphId,
    /// Pen position on the baseline, before rotation.
    pub x: f64,
    pub baseline: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineLayout {
    pub left: f64,
    pub advance: f64,
    pub baseline: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextLayout {
    pub glyphs: Vec<PlacedGlyph>,
    pub lines: Vec<LineLayout>,
    pub scale: PxScale,
    /// Counter-clockwise degrees about `center`, applied after placement.
    pub angle: f64,
    pub center: (f64, f64),
}

/// Pixel scale at which one em equals `font_size` pixels.
pub fn em_scale(face: &FontArc, font_size: f64) -> PxScale {
    let upem = face.units_per_em().unwrap_or(1000.0);
    PxScale::from((font_size * face.height_unscaled() as f64 / upem as f64) as f32)
}

/// Places glyphs line by line. Lines break only at `\n`; nothing wraps.
/// Line advance is the sum of glyph advances plus `letter_spacing`
/// between consecutive glyphs; baseline `k` sits at
/// `top + ascent + k * font_size * line_height`.
pub fn layout_text(text: &str, attrs: &TextAttributes, bbox: &BBox, face: &FontArc) -> TextLayout {
    let text = if attrs.capitalize {
        text.to_uppercase()
    } else {
        text.to_string()
    };
    let font_size = attrs.font_size as f64;
    let scale = em_scale(face, font_size);
    let scaled = face.as_scaled(scale);
    let ascent = scaled.ascent() as f64;
    let line_step = font_size * attrs.line_height;

    let mut glyphs = Vec::new();
    let mut lines = Vec::new();
    for (k, line) in text.split('\n').enumerate() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        let ids: Vec<(char, GlyphId)> = line.chars().map(|c| (c, face.glyph_id(c))).collect();
        let glyph_sum: f64 = ids.iter().map(|(_, id)| scaled.h_advance(*id) as f64).sum();
        let gaps = ids.len().saturating_sub(1) as f64;
        let advance = glyph_sum + attrs.letter_spacing * gaps;
        let left = bbox.left as f64
            + match attrs.text_align {
                TextAlign::Left => 0.0,
                TextAlign::Center => (bbox.width as f64 - advance) / 2.0,
                TextAlign::Right => bbox.width as f64 - advance,
            };
        let baseline = bbox.top as f64 + ascent + k as f64 * line_step;
        let mut pen = left;
        for (ch, id) in ids {
            glyphs.push(PlacedGlyph {
                ch,
                id,
                x: pen,
                baseline,
            });
            pen += scaled.h_advance(id) as f64 + attrs.letter_spacing;
        }
        lines.push(LineLayout {
            left,
            advance,
            baseline,
        });
    }
    TextLayout {
        glyphs,
        lines,
        scale,
        angle: attrs.angle,
        center: (
            bbox.left as f64 + bbox.width as f64 / 2.0,
            bbox.top as f64 + bbox.height as f64 / 2.0,
        ),
    }
}

/// Glyph coverage in layout space on an integer pixel grid.
struct Coverage {
    x0: i64,
    y0: i64,
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Coverage {
    fn build(layout: &TextLayout, face: &FontArc) -> Option<Self> {
        let outlined: Vec<_> = layout
            .glyphs
            .iter()
            .filter_map(|g| {
                face.outline_glyph(
                    g.id
                        .with_scale_and_position(layout.scale, point(g.x as f32, g.baseline as f32)),
                )
            })
            .collect();
        let (mut x0, mut y0, mut x1, mut y1) = (i64::MAX, i64::MAX, i64::MIN, i64::MIN);
        for og in &outlined {
            let b = og.px_bounds();
            x0 = x0.min(b.min.x as i64);
            y0 = y0.min(b.min.y as i64);
            x1 = x1.max(b.max.x as i64);
            y1 = y1.max(b.max.y as i64);
        }
        if outlined.is_empty() || x1 <= x0 || y1 <= y0 {
            return None;
        }
        let (width, height) = ((x1 - x0) as usize, (y1 - y0) as usize);
        let mut data = vec![0f32; width * height];
        for og in &outlined {
            let b = og.px_bounds();
            let (ox, oy) = (b.min.x as i64 - x0, b.min.y as i64 - y0);
            og.draw(|gx, gy, c| {
                let (x, y) = (ox + gx as i64, oy + gy as i64);
                if x >= 0 && y >= 0 && (x as usize) < width && (y as usize) < height {
                    let cell = &mut data[y as usize * width + x as usize];
                    *cell = (*cell + c).min(1.0);
                }
            });
        }
        Some(Self {
            x0,
            y0,
            width,
            height,
            data,
        })
    }

    fn at(&self, x: i64, y: i64) -> f32 {
        if x < 0 || y < 0 || x as usize >= self.width || y as usize >= self.height {
            return 0.0;
        }
        self.data[y as usize * self.width + x as usize]
    }

    /// Bilinear sample at a continuous position (pixel centers at +0.5).
    fn sample(&self, x: f64, y: f64) -> f32 {
        let (u, v) = (x - self.x0 as f64 - 0.5, y - self.y0 as f64 - 0.5);
        let (iu, iv) = (u.floor(), v.floor());
        let (fu, fv) = ((u - iu) as f32, (v - iv) as f32);
        let (iu, iv) = (iu as i64, iv as i64);
        let top = self.at(iu, iv) * (1.0 - fu) + self.at(iu + 1, iv) * fu;
        let bottom = self.at(iu, iv + 1) * (1.0 - fu) + self.at(iu + 1, iv + 1) * fu;
        top * (1.0 - fv) + bottom * fv
    }

    fn nearest(&self, x: f64, y: f64) -> f32 {
        self.at(x.floor() as i64 - self.x0, y.floor() as i64 - self.y0)
    }
}

/// Rasterizes `text` in `attrs.color`, falling back to the store's
/// default face (and logging it) when the family is missing.
pub fn render_text(
    target: &mut RgbaImage,
    text: &str,
    attrs: &TextAttributes,
    bbox: &BBox,
    store: &FontStore,
    opts: &RenderOptions,
) {
    let (face, substituted) = store.lookup(&attrs.font);
    if substituted {
        log::warn!(
            "font family {:?} not found; substituting {:?}",
            attrs.font,
            store.fallback_name()
        );
        opts.record_substitution(&attrs.font, store.fallback_name());
    }
    let layout = layout_text(text, attrs, bbox, face);
    let Some(cov) = Coverage::build(&layout, face) else {
        return;
    };
    let shade = |c: f32| -> f64 {
        if opts.antialias {
            c as f64
        } else if c >= 0.5 {
            1.0
        } else {
            0.0
        }
    };
    let (tw, th) = (target.width() as i64, target.height() as i64);

    if layout.angle == 0.0 {
        for cy in 0..cov.height as i64 {
            let y = cov.y0 + cy;
            if y < 0 || y >= th {
                continue;
            }
            for cx in 0..cov.width as i64 {
                let x = cov.x0 + cx;
                if x < 0 || x >= tw {
                    continue;
                }
                let a = shade(cov.at(cx, cy));
                blend_color(target.get_pixel_mut(x as u32, y as u32), attrs.color, a);
            }
        }
        return;
    }

    // Rotate the coverage box corners to find the destination hull, then
    // pull each destination pixel back into layout space.
    let theta = layout.angle.to_radians();
    let (sin, cos) = theta.sin_cos();
    let (cx, cy) = layout.center;
    let forward = |x: f64, y: f64| {
        let (dx, dy) = (x - cx, y - cy);
        (cx + dx * cos + dy * sin, cy - dx * sin + dy * cos)
    };
    let corners = [
        (cov.x0 as f64, cov.y0 as f64),
        ((cov.x0 + cov.width as i64) as f64, cov.y0 as f64),
        (cov.x0 as f64, (cov.y0 + cov.height as i64) as f64),
        ((cov.x0 + cov.width as i64) as f64, (cov.y0 + cov.height as i64) as f64),
    ]
    .map(|(x, y)| forward(x, y));
    let min_x = corners.iter().map(|c| c.0).fold(f64::INFINITY, f64::min).floor() as i64;
    let max_x = corners.iter().map(|c| c.0).fold(f64::NEG_INFINITY, f64::max).ceil() as i64;
    let min_y = corners.iter().map(|c| c.1).fold(f64::INFINITY, f64::min).floor() as i64;
    let max_y = corners.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max).ceil() as i64;
    for y in min_y.max(0)..max_y.min(th) {
        for x in min_x.max(0)..max_x.min(tw) {
            let (px, py) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
            let sx = cx + px * cos - py * sin;
            let sy = cy + px * sin + py * cos;
            let c = if opts.antialias {
                cov.sample(sx, sy)
            } else {
                cov.nearest(sx, sy)
            };
            blend_color(target.get_pixel_mut(x as u32, y as u32), attrs.color, shade(c));
        }
    }
}
