//! Per-design and corpus-level score reports.

use std::fmt::Write as _;
use std::path::PathBuf;

use image::RgbaImage;
use rayon::prelude::*;
use serde::Serialize;

use super::{
    score_alignment, score_occlusion, score_overlap, score_readability, score_underlay, score_utility,
    score_validity, MetricError,
};
use crate::model::{Design, SemanticRole};
use crate::render::{composite_layer, render_state, FontStore, RenderOptions};
use crate::saliency::{compute_saliency, SaliencyError, SaliencyMap};

/// Supplies the saliency map of a design given its rendered background G1.
pub trait SaliencyProvider: Send + Sync {
    fn saliency(&self, design: &Design, background: &RgbaImage) -> Result<SaliencyMap, SaliencyError>;
}

/// Spectral-residual saliency of the background.
#[derive(Debug, Clone, Copy, Default)]
pub struct SpectralResidual;

impl SaliencyProvider for SpectralResidual {
    fn saliency(&self, _design: &Design, background: &RgbaImage) -> Result<SaliencyMap, SaliencyError> {
        Ok(compute_saliency(background))
    }
}

/// Reads `{dir}/{design_id}.png`, computing spectral residual saliency
/// for designs without a file.
#[derive(Debug, Clone)]
pub struct SaliencyDir {
    pub dir: PathBuf,
}

impl SaliencyProvider for SaliencyDir {
    fn saliency(&self, design: &Design, background: &RgbaImage) -> Result<SaliencyMap, SaliencyError> {
        let path = self.dir.join(format!("{}.png", design.id));
        if path.is_file() {
            let map = SaliencyMap::load_png(&path)?;
            map.check_size(design.canvas.width, design.canvas.height)?;
            Ok(map)
        } else {
            log::debug!("no saliency file for {}, using spectral residual", design.id);
            Ok(compute_saliency(background))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DesignScores {
    pub design_id: String,
    pub elements: usize,
    pub val: f64,
    pub ove: f64,
    pub ali: f64,
    /// Absent when the design has no valid underlay.
    pub und_l: Option<f64>,
    pub und_s: Option<f64>,
    /// Absent when every pixel is salient.
    pub uti: Option<f64>,
    pub occ: f64,
    pub rea: f64,
}

/// Arithmetic means over the designs where each metric is defined.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MetricMeans {
    pub val: Option<f64>,
    pub ove: Option<f64>,
    pub ali: Option<f64>,
    pub und_l: Option<f64>,
    pub und_s: Option<f64>,
    pub uti: Option<f64>,
    pub occ: Option<f64>,
    pub rea: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DesignFailure {
    pub design_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreReport {
    pub designs: Vec<DesignScores>,
    pub mean: MetricMeans,
    pub failures: Vec<DesignFailure>,
}

pub const COLUMNS: [&str; 8] = ["Val", "Ove", "Ali", "Und_l", "Und_s", "Uti", "Occ", "Rea"];

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let (sum, n) = values.flatten().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

impl DesignScores {
    fn row(&self) -> [Option<f64>; 8] {
        [
            Some(self.val),
            Some(self.ove),
            Some(self.ali),
            self.und_l,
            self.und_s,
            self.uti,
            Some(self.occ),
            Some(self.rea),
        ]
    }
}

impl MetricMeans {
    pub fn from_scores(scores: &[DesignScores]) -> Self {
        let col = |k: usize| mean(scores.iter().map(|s| s.row()[k]));
        Self {
            val: col(0),
            ove: col(1),
            ali: col(2),
            und_l: col(3),
            und_s: col(4),
            uti: col(5),
            occ: col(6),
            rea: col(7),
        }
    }

    fn row(&self) -> [Option<f64>; 8] {
        [self.val, self.ove, self.ali, self.und_l, self.und_s, self.uti, self.occ, self.rea]
    }
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"))
}

impl ScoreReport {
    pub fn from_scores(designs: Vec<DesignScores>, failures: Vec<DesignFailure>) -> Self {
        let mean = MetricMeans::from_scores(&designs);
        Self {
            designs,
            mean,
            failures,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One row per design, then a `mean` row. Undefined values are empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("design_id,elements");
        for c in COLUMNS {
            write!(out, ",{}", c.to_lowercase()).unwrap();
        }
        out.push('\n');
        let fmt = |v: Option<f64>| v.map_or_else(String::new, |x| format!("{x}"));
        for d in &self.designs {
            write!(out, "{},{}", csv_field(&d.design_id), d.elements).unwrap();
            for v in d.row() {
                write!(out, ",{}", fmt(v)).unwrap();
            }
            out.push('\n');
        }
        write!(out, "mean,{}", self.designs.iter().map(|d| d.elements).sum::<usize>()).unwrap();
        for v in self.mean.row() {
            write!(out, ",{}", fmt(v)).unwrap();
        }
        out.push('\n');
        out
    }

    /// Aligned text table; `per_design` adds one row per design above the mean.
    pub fn to_table(&self, per_design: bool) -> String {
        let mut rows: Vec<(String, [Option<f64>; 8])> = Vec::new();
        if per_design {
            rows.extend(self.designs.iter().map(|d| (d.design_id.clone(), d.row())));
        }
        rows.push((format!("mean (n={})", self.designs.len()), self.mean.row()));
        let name_w = rows.iter().map(|r| r.0.len()).max().unwrap_or(0).max("design".len());
        let mut out = format!("{:<name_w$}", "design");
        for c in COLUMNS {
            write!(out, "  {c:>7}").unwrap();
        }
        out.push('\n');
        for (name, vals) in rows {
            write!(out, "{name:<name_w$}").unwrap();
            for v in vals {
                write!(out, "  {:>7}", cell(v)).unwrap();
            }
            out.push('\n');
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Scores one design. Content metrics render G1 (for saliency) and G3.
pub fn score_design(
    design: &Design,
    saliency: &dyn SaliencyProvider,
    fonts: &FontStore,
) -> Result<DesignScores, String> {
    let opts = RenderOptions::default();
    let g1 = render_state(design, 1, fonts, &opts).map_err(|e| e.to_string())?;
    let g2 = composite_layer(&g1, design, fonts, &opts).map_err(|e| e.to_string())?;
    let g3 = composite_layer(&g2, design, fonts, &opts).map_err(|e| e.to_string())?;
    let sal = saliency.saliency(design, &g1.image).map_err(|e| e.to_string())?;
    let und = score_underlay(design).map_err(|e| e.to_string())?;
    let uti = match score_utility(design, &sal) {
        Ok(u) => Some(u),
        Err(MetricError::EmptyNonSalientRegion) => None,
        Err(e) => return Err(e.to_string()),
    };
    let m = |r: Result<f64, MetricError>| r.map_err(|e| e.to_string());
    Ok(DesignScores {
        design_id: design.id.clone(),
        elements: design
            .plan
            .placement_order()
            .filter(|(r, _)| *r != SemanticRole::Background)
            .count(),
        val: m(score_validity(design))?,
        ove: m(score_overlap(design))?,
        ali: m(score_alignment(design))?,
        und_l: und.map(|u| u.0),
        und_s: und.map(|u| u.1),
        uti,
        occ: m(score_occlusion(design, &sal))?,
        rea: m(score_readability(design, &g3.image))?,
    })
}

/// Scores every design in parallel; results keep the input order.
pub fn evaluate_corpus(designs: &[Design], saliency: &dyn SaliencyProvider, fonts: &FontStore) -> ScoreReport {
    let results: Vec<Result<DesignScores, DesignFailure>> = designs
        .par_iter()
        .map(|d| {
            score_design(d, saliency, fonts).map_err(|error| DesignFailure {
                design_id: d.id.clone(),
                error,
            })
        })
        .collect();
    let (mut ok, mut failed) = (Vec::new(), Vec::new());
    for r in results {
        match r {
            Ok(s) => ok.push(s),
            Err(f) => failed.push(f),
        }
    }
    ScoreReport::from_scores(ok, failed)
}
