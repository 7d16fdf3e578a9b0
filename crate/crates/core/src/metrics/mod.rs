//! Layout quality metrics.
//!
//! Geometry metrics (Val, Ove, Ali, Und_l, Und_s) work on boxes clipped to
//! the canvas and normalized by its size. Content metrics (Uti, Occ, Rea)
//! count pixels against a saliency map or the rendered canvas G3.
//! Which elements take part in each metric is fixed by [`POLICY`].

pub mod report;

use image::RgbaImage;
use thiserror::Error;

use crate::model::{BBox, Canvas, Design, SemanticRole};
use crate::saliency::{SaliencyError, SaliencyMap};

pub use report::{evaluate_corpus, DesignScores, MetricMeans, SaliencyDir, SaliencyProvider, ScoreReport, SpectralResidual};

/// Element eligibility and thresholds shared by all metrics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Eligibility {
    /// Minimum clipped area, as a fraction of the canvas, for a valid element.
    pub min_area_ratio: f64,
    pub underlays_in_overlap: bool,
    pub underlays_in_alignment: bool,
    /// Saliency below this counts as free space for Uti.
    pub utility_threshold: f32,
    /// Clamp for Ali: distances are capped at `1 - epsilon`.
    pub alignment_epsilon: f64,
}

/// Backgrounds never take part. Underlays are left out of Ove and Ali.
pub const POLICY: Eligibility = Eligibility {
    min_area_ratio: 0.001,
    underlays_in_overlap: false,
    underlays_in_alignment: false,
    utility_threshold: 0.5,
    alignment_epsilon: 1e-6,
};

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("design has no scorable (non-background) elements")]
    NoScorableElements,
    #[error("saliency map has no pixels below the utility threshold")]
    EmptyNonSalientRegion,
    #[error("element `{0}` has no attributes")]
    MissingAttributes(String),
    #[error("raster is {got:?}, canvas is {want:?}")]
    RasterSize { got: (u32, u32), want: (u32, u32) },
    #[error(transparent)]
    Saliency(#[from] SaliencyError),
}

/// A non-background element as the metrics see it.
#[derive(Debug, Clone, Copy)]
struct Scored {
    role: SemanticRole,
    /// Clipped to the canvas; `None` when fully off-canvas.
    clip: Option<BBox>,
}

impl Scored {
    fn valid(&self, canvas: &Canvas) -> bool {
        self.clip
            .is_some_and(|b| b.area() as f64 >= POLICY.min_area_ratio * canvas.area() as f64)
    }
}

fn scorable(design: &Design) -> Result<Vec<Scored>, MetricError> {
    design
        .plan
        .placement_order()
        .filter(|(role, _)| *role != SemanticRole::Background)
        .map(|(role, id)| {
            let a = design
                .attributes
                .get(id)
                .ok_or_else(|| MetricError::MissingAttributes(id.to_string()))?;
            Ok(Scored {
                role,
                clip: a.bbox.clip_to(&design.canvas),
            })
        })
        .collect()
}

/// Clipped boxes of valid scorable elements, filtered by role.
fn valid_boxes(design: &Design, keep: impl Fn(SemanticRole) -> bool) -> Result<Vec<BBox>, MetricError> {
    Ok(scorable(design)?
        .into_iter()
        .filter(|s| keep(s.role) && s.valid(&design.canvas))
        .filter_map(|s| s.clip)
        .collect())
}

/// `[left, x-center, right]` and `[top, y-center, bottom]` in unit coordinates.
fn axes(b: &BBox, canvas: &Canvas) -> [f64; 6] {
    let (w, h) = (canvas.width as f64, canvas.height as f64);
    let (l, r) = (b.left as f64 / w, b.right() as f64 / w);
    let (t, bt) = (b.top as f64 / h, b.bottom() as f64 / h);
    [l, (l + r) / 2.0, r, t, (t + bt) / 2.0, bt]
}

fn unit_area(b: &BBox, canvas: &Canvas) -> f64 {
    (b.width as f64 / canvas.width as f64) * (b.height as f64 / canvas.height as f64)
}

fn overlap_ratio(inner: &BBox, outer: &BBox, canvas: &Canvas) -> f64 {
    inner
        .intersect(outer)
        .map_or(0.0, |i| unit_area(&i, canvas) / unit_area(inner, canvas))
}

/// Share of scorable elements whose clipped area is at least 0.1% of the canvas.
pub fn score_validity(design: &Design) -> Result<f64, MetricError> {
    let s = scorable(design)?;
    if s.is_empty() {
        return Err(MetricError::NoScorableElements);
    }
    let valid = s.iter().filter(|e| e.valid(&design.canvas)).count();
    Ok(valid as f64 / s.len() as f64)
}

/// Mean over pairs of intersection area over the smaller box's area.
pub fn score_overlap(design: &Design) -> Result<f64, MetricError> {
    let boxes = valid_boxes(design, |r| POLICY.underlays_in_overlap || r != SemanticRole::Underlay)?;
    let c = &design.canvas;
    let (mut sum, mut pairs) = (0.0, 0usize);
    for i in 0..boxes.len() {
        for j in i + 1..boxes.len() {
            let (a, b) = (&boxes[i], &boxes[j]);
            let inter = a.intersect(b).map_or(0.0, |x| unit_area(&x, c));
            sum += inter / unit_area(a, c).min(unit_area(b, c));
            pairs += 1;
        }
    }
    Ok(if pairs == 0 { 0.0 } else { sum / pairs as f64 })
}

/// Mean of `-ln(1 - d)` where `d` is each element's closest same-axis
/// distance to any other element over the six alignment axes.
pub fn score_alignment(design: &Design) -> Result<f64, MetricError> {
    let boxes = valid_boxes(design, |r| POLICY.underlays_in_alignment || r != SemanticRole::Underlay)?;
    if boxes.len() < 2 {
        return Ok(0.0);
    }
    let ax: Vec<[f64; 6]> = boxes.iter().map(|b| axes(b, &design.canvas)).collect();
    let total: f64 = (0..ax.len())
        .map(|i| {
            let (me, ax) = (&ax[i], &ax);
            let d = (0..ax.len())
                .filter(|&j| j != i)
                .flat_map(|j| (0..6).map(move |k| (me[k] - ax[j][k]).abs()))
                .fold(f64::INFINITY, f64::min)
                .clamp(0.0, 1.0 - POLICY.alignment_epsilon);
            -(1.0 - d).ln()
        })
        .sum();
    Ok(total / ax.len() as f64)
}

/// `(Und_l, Und_s)`, or `None` when the design has no valid underlay.
pub fn score_underlay(design: &Design) -> Result<Option<(f64, f64)>, MetricError> {
    let underlays = valid_boxes(design, |r| r == SemanticRole::Underlay)?;
    if underlays.is_empty() {
        return Ok(None);
    }
    let others = valid_boxes(design, |r| r != SemanticRole::Underlay)?;
    let c = &design.canvas;
    let (mut loose, mut strict) = (0.0, 0.0);
    for u in &underlays {
        loose += others.iter().map(|e| overlap_ratio(e, u, c)).fold(0.0, f64::max);
        if others.iter().any(|e| u.contains(e)) {
            strict += 1.0;
        }
    }
    let n = underlays.len() as f64;
    Ok(Some((loose / n, strict / n)))
}

/// Union of the clipped boxes of all scorable elements, row-major.
fn coverage(design: &Design) -> Result<Vec<bool>, MetricError> {
    let (w, h) = (design.canvas.width as usize, design.canvas.height as usize);
    let mut mask = vec![false; w * h];
    for b in scorable(design)?.into_iter().filter_map(|s| s.clip) {
        for y in b.top as usize..b.bottom() as usize {
            mask[y * w + b.left as usize..y * w + b.right() as usize].fill(true);
        }
    }
    Ok(mask)
}

/// Share of the non-salient pixels covered by some element.
pub fn score_utility(design: &Design, saliency: &SaliencyMap) -> Result<f64, MetricError> {
    saliency.check_size(design.canvas.width, design.canvas.height)?;
    let mask = coverage(design)?;
    let (mut free, mut used) = (0usize, 0usize);
    for (covered, &s) in mask.iter().zip(saliency.values()) {
        if s < POLICY.utility_threshold {
            free += 1;
            used += usize::from(*covered);
        }
    }
    if free == 0 {
        return Err(MetricError::EmptyNonSalientRegion);
    }
    Ok(used as f64 / free as f64)
}

/// Mean saliency under the union of element boxes.
pub fn score_occlusion(design: &Design, saliency: &SaliencyMap) -> Result<f64, MetricError> {
    saliency.check_size(design.canvas.width, design.canvas.height)?;
    let mask = coverage(design)?;
    let (mut sum, mut n) = (0.0f64, 0usize);
    for (covered, &s) in mask.iter().zip(saliency.values()) {
        if *covered {
            sum += s as f64;
            n += 1;
        }
    }
    Ok(if n == 0 { 0.0 } else { sum / n as f64 })
}

/// Grayscale in [0, 1].
fn gray(raster: &RgbaImage) -> Vec<f64> {
    raster
        .pixels()
        .map(|p| (0.299 * p.0[0] as f64 + 0.587 * p.0[1] as f64 + 0.114 * p.0[2] as f64) / 255.0)
        .collect()
}

/// Central-difference gradient magnitude with replicated borders.
pub fn gradient_magnitude(raster: &RgbaImage) -> Vec<f64> {
    let (w, h) = (raster.width() as usize, raster.height() as usize);
    let g = gray(raster);
    let at = |x: usize, y: usize| g[y * w + x];
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let gx = (at((x + 1).min(w - 1), y) - at(x.saturating_sub(1), y)) / 2.0;
            let gy = (at(x, (y + 1).min(h - 1)) - at(x, y.saturating_sub(1))) / 2.0;
            out[y * w + x] = gx.hypot(gy);
        }
    }
    out
}

/// Mean over text elements of the mean background gradient under each
/// text box. `background` is G3, the canvas before the text layer.
/// Text boxes entirely off the canvas contribute 0.
pub fn score_readability(design: &Design, background: &RgbaImage) -> Result<f64, MetricError> {
    let want = (design.canvas.width, design.canvas.height);
    if background.dimensions() != want {
        return Err(MetricError::RasterSize {
            got: background.dimensions(),
            want,
        });
    }
    let texts = design.plan.layer(SemanticRole::Text);
    if texts.is_empty() {
        return Ok(0.0);
    }
    let grad = gradient_magnitude(background);
    let w = design.canvas.width as usize;
    let mut total = 0.0;
    for id in texts {
        let a = design
            .attributes
            .get(id)
            .ok_or_else(|| MetricError::MissingAttributes(id.clone()))?;
        if let Some(b) = a.bbox.clip_to(&design.canvas) {
            let mut s = 0.0;
            for y in b.top as usize..b.bottom() as usize {
                s += grad[y * w + b.left as usize..y * w + b.right() as usize].iter().sum::<f64>();
            }
            total += s / b.area() as f64;
        }
    }
    Ok(total / texts.len() as f64)
}
