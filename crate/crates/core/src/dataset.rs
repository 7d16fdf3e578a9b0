//! Design corpora on disk and the rendered-state cache.
//!
//! A corpus is a directory `{root}/{split}/*.json`, one design per file,
//! with image paths relative to `root`:
//!
//! ```json
//! {
//!   "id": "poster-1",
//!   "canvas": {"width": 1080, "height": 1920, "background_color": [255, 255, 255]},
//!   "elements": [
//!     {"id": "bg", "modality": "image", "image_path": "assets/bg.png", "role": "background",
//!      "attributes": {"index": 0, "left": 0, "top": 0, "width": 1080, "height": 1920}},
//!     {"id": "title", "modality": "text", "text": "Spring Clean", "role": "text",
//!      "attributes": {"index": 1, "left": 98, "top": 375, "width": 874, "height": 125,
//!                     "angle": 0, "font": "Raleway", "font_size": 125, "color": [29, 29, 27],
//!                     "text_align": "center", "capitalize": false,
//!                     "letter_spacing": 0.0, "line_height": 1.0}}
//!   ]
//! }
//! ```
//!
//! `role` and `attributes` are optional. Elements without a role are
//! planned with the heuristic planner. An optional top-level `plan` object
//! (`{"background": [ids], ...}`) fixes the order inside each layer when it
//! differs from the element order.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{
    validate_design, validate_elements_and_plan, BBox, Canvas, CanvasState, Design, Element, ElementAttributes,
    ElementContent, LayerPlan, Modality, Rgb, SemanticRole, TextAlign, TextAttributes, Violation,
};
use crate::planner::{plan_layers, PlannerMode};
use crate::render::{blank_state, composite_layer, FontStore, RenderError, RenderOptions};

/// Designs with more elements than this are dropped from training corpora.
pub const MAX_ELEMENTS: usize = 25;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{record}: schema error: {detail}")]
    Schema { record: String, detail: String },
    #[error("missing asset {0}")]
    MissingAsset(PathBuf),
    #[error("{record}: invalid design: {}", .violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid { record: String, violations: Vec<Violation> },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{design}: {source}")]
    Render {
        design: String,
        #[source]
        source: RenderError,
    },
    #[error("{0}: {1}")]
    Image(PathBuf, String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CanvasRecord {
    pub width: u32,
    pub height: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub background_color: Option<Rgb>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeRecord {
    pub index: u32,
    pub left: i64,
    pub top: i64,
    pub width: u32,
    pub height: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub angle: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub font: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub font_size: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub color: Option<Rgb>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text_align: Option<TextAlign>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capitalize: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub letter_spacing: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub line_height: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElementRecord {
    pub id: String,
    pub modality: Modality,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intrinsic_width: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intrinsic_height: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<SemanticRole>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attributes: Option<AttributeRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignRecord {
    pub id: String,
    pub canvas: CanvasRecord,
    pub elements: Vec<ElementRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<BTreeMap<SemanticRole, Vec<String>>>,
}

fn schema(record: &str, detail: impl Into<String>) -> DatasetError {
    DatasetError::Schema {
        record: record.to_string(),
        detail: detail.into(),
    }
}

fn attributes_from_record(rec: &ElementRecord, a: &AttributeRecord, design: &str) -> Result<ElementAttributes, DatasetError> {
    let bbox = BBox::new(a.left, a.top, a.width, a.height);
    let text = match rec.modality {
        Modality::Image => None,
        Modality::Text => {
            let need = |name: &str| schema(design, format!("element `{}`: attributes lack `{name}`", rec.id));
            Some(TextAttributes {
                angle: a.angle.ok_or_else(|| need("angle"))?,
                font: a.font.clone().ok_or_else(|| need("font"))?,
                font_size: a.font_size.ok_or_else(|| need("font_size"))?,
                color: a.color.ok_or_else(|| need("color"))?,
                text_align: a.text_align.ok_or_else(|| need("text_align"))?,
                capitalize: a.capitalize.ok_or_else(|| need("capitalize"))?,
                letter_spacing: a.letter_spacing.ok_or_else(|| need("letter_spacing"))?,
                line_height: a.line_height.ok_or_else(|| need("line_height"))?,
            })
        }
    };
    Ok(ElementAttributes {
        element_id: rec.id.clone(),
        index: a.index,
        bbox,
        text,
    })
}

fn attributes_to_record(a: &ElementAttributes) -> AttributeRecord {
    let t = a.text.as_ref();
    AttributeRecord {
        index: a.index,
        left: a.bbox.left,
        top: a.bbox.top,
        width: a.bbox.width,
        height: a.bbox.height,
        angle: t.map(|t| t.angle),
        font: t.map(|t| t.font.clone()),
        font_size: t.map(|t| t.font_size),
        color: t.map(|t| t.color),
        text_align: t.map(|t| t.text_align),
        capitalize: t.map(|t| t.capitalize),
        letter_spacing: t.map(|t| t.letter_spacing),
        line_height: t.map(|t| t.line_height),
    }
}

/// Builds a design from a record, loading images relative to `asset_root`.
/// Attributes may be missing; structure (ids, plan, modalities) must hold.
pub fn design_from_record(record: &DesignRecord, asset_root: &Path) -> Result<Design, DatasetError> {
    let id = record.id.as_str();
    let mut canvas = Canvas::try_new(record.canvas.width, record.canvas.height)
        .ok_or_else(|| schema(id, "canvas dimensions must be at least 1px"))?;
    if let Some(bg) = record.canvas.background_color {
        canvas = canvas.with_background(bg);
    }

    let mut elements = Vec::with_capacity(record.elements.len());
    let mut attributes = BTreeMap::new();
    for rec in &record.elements {
        let mut e = match rec.modality {
            Modality::Text => {
                let text = rec
                    .text
                    .as_ref()
                    .ok_or_else(|| schema(id, format!("text element `{}` has no `text`", rec.id)))?;
                Element::text(&rec.id, text)
            }
            Modality::Image => {
                let rel = rec
                    .image_path
                    .as_ref()
                    .ok_or_else(|| schema(id, format!("image element `{}` has no `image_path`", rec.id)))?;
                let path = asset_root.join(rel);
                if !path.is_file() {
                    return Err(DatasetError::MissingAsset(path));
                }
                let bitmap = image::open(&path)
                    .map_err(|e| DatasetError::Image(path.clone(), e.to_string()))?
                    .to_rgba8();
                Element::image(&rec.id, bitmap).with_source(rel)
            }
        };
        if let (Some(w), Some(h)) = (rec.intrinsic_width, rec.intrinsic_height) {
            e = e.with_intrinsic_size(w, h);
        }
        if let Some(a) = &rec.attributes {
            attributes.insert(rec.id.clone(), attributes_from_record(rec, a, id)?);
        }
        elements.push(e);
    }

    let plan = match &record.plan {
        Some(layers) => {
            let mut plan = LayerPlan::new();
            for (role, ids) in layers {
                for e in ids {
                    plan.push(e, *role);
                }
            }
            plan
        }
        None if record.elements.iter().all(|e| e.role.is_none()) && !elements.is_empty() => {
            plan_layers(&elements, &canvas, &PlannerMode::Heuristic).map_err(|e| schema(id, e.to_string()))?
        }
        None => {
            let mut plan = LayerPlan::new();
            for (rec, e) in record.elements.iter().zip(&elements) {
                let role = rec
                    .role
                    .unwrap_or_else(|| crate::planner::heuristic_label(e, &canvas));
                plan.push(&rec.id, role);
            }
            plan
        }
    };

    let design = Design {
        id: record.id.clone(),
        canvas,
        elements,
        plan,
        attributes,
    };
    let violations = validate_elements_and_plan(&design);
    if !violations.is_empty() {
        return Err(DatasetError::Invalid {
            record: record.id.clone(),
            violations,
        });
    }
    Ok(design)
}

/// Record for `design`. Image elements without a source path are given
/// `assets/{design}/{element}.png`; `write_assets` then writes them.
pub fn design_to_record(design: &Design) -> DesignRecord {
    let elements: Vec<ElementRecord> = design
        .elements
        .iter()
        .map(|e| {
            let (text, image_path) = match &e.content {
                ElementContent::Text(t) => (Some(t.clone()), None),
                ElementContent::Image(img) => (
                    None,
                    Some(
                        img.source
                            .clone()
                            .unwrap_or_else(|| default_asset_path(&design.id, &e.id)),
                    ),
                ),
            };
            let default_size = match &e.content {
                ElementContent::Image(img) => (img.bitmap.width(), img.bitmap.height()),
                ElementContent::Text(_) => (0, 0),
            };
            let custom = (e.intrinsic_width, e.intrinsic_height) != default_size;
            ElementRecord {
                id: e.id.clone(),
                modality: e.modality(),
                text,
                image_path,
                intrinsic_width: custom.then_some(e.intrinsic_width),
                intrinsic_height: custom.then_some(e.intrinsic_height),
                role: design.plan.role_of(&e.id),
                attributes: design.attributes.get(&e.id).map(attributes_to_record),
            }
        })
        .collect();

    // Keep the layer order explicitly only when element order would lose it.
    let implied: Vec<Vec<&str>> = SemanticRole::ALL
        .iter()
        .map(|r| {
            elements
                .iter()
                .filter(|e| e.role == Some(*r))
                .map(|e| e.id.as_str())
                .collect()
        })
        .collect();
    let differs = SemanticRole::ALL
        .iter()
        .zip(&implied)
        .any(|(r, ids)| design.plan.layer(*r).iter().map(String::as_str).ne(ids.iter().copied()));
    let plan = differs.then(|| {
        SemanticRole::ALL
            .iter()
            .filter(|r| !design.plan.layer(**r).is_empty())
            .map(|r| (*r, design.plan.layer(*r).to_vec()))
            .collect()
    });

    let white = Canvas::new(1, 1).background_color;
    DesignRecord {
        id: design.id.clone(),
        canvas: CanvasRecord {
            width: design.canvas.width,
            height: design.canvas.height,
            background_color: (design.canvas.background_color != white).then_some(design.canvas.background_color),
        },
        elements,
        plan,
    }
}

fn default_asset_path(design: &str, element: &str) -> String {
    format!("assets/{}/{}.png", safe_name(design), safe_name(element))
}

/// File-system safe version of an id.
pub fn safe_name(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect()
}

/// Writes `bytes` to `path` through a temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), DatasetError> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let tmp = dir.join(format!(
        ".{}.{}.tmp",
        path.file_name().and_then(|n| n.to_str()).unwrap_or("out"),
        std::process::id()
    ));
    let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
    f.write_all(bytes).map_err(io_err(&tmp))?;
    f.sync_all().map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn png_bytes(img: &image::RgbaImage, path: &Path) -> Result<Vec<u8>, DatasetError> {
    let mut buf = Vec::new();
    img.write_to(&mut std::io::Cursor::new(&mut buf), image::ImageFormat::Png)
        .map_err(|e| DatasetError::Image(path.to_path_buf(), e.to_string()))?;
    Ok(buf)
}

/// Writes the design JSON to `json_path` and any image assets that do not
/// exist yet under `asset_root`.
pub fn save_design(design: &Design, json_path: &Path, asset_root: &Path) -> Result<DesignRecord, DatasetError> {
    let record = design_to_record(design);
    for (e, rec) in design.elements.iter().zip(&record.elements) {
        if let (ElementContent::Image(img), Some(rel)) = (&e.content, &rec.image_path) {
            let path = asset_root.join(rel);
            if !path.is_file() {
                write_atomic(&path, &png_bytes(&img.bitmap, &path)?)?;
            }
        }
    }
    let json = serde_json::to_string_pretty(&record).expect("record serializes");
    write_atomic(json_path, format!("{json}\n").as_bytes())?;
    Ok(record)
}

/// Reads one design file; structure is checked, attributes may be absent.
pub fn load_design(json_path: &Path, asset_root: &Path) -> Result<Design, DatasetError> {
    let text = fs::read_to_string(json_path).map_err(io_err(json_path))?;
    let name = json_path.display().to_string();
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| schema(&name, e.to_string()))?;
    let record_name = value
        .get("id")
        .and_then(|v| v.as_str())
        .map_or(name, str::to_string);
    let record: DesignRecord = serde_json::from_value(value).map_err(|e| schema(&record_name, e.to_string()))?;
    design_from_record(&record, asset_root)
}

/// Elements of a manifest file: a design record whose elements carry no
/// attributes. Returns the design with a heuristic plan where roles are missing.
pub fn load_elements(json_path: &Path, asset_root: &Path) -> Result<Design, DatasetError> {
    let mut d = load_design(json_path, asset_root)?;
    d.attributes.clear();
    Ok(d)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DroppedDesign {
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CorpusManifest {
    pub split: Option<String>,
    pub design_count: usize,
    /// Element count -> number of designs.
    pub element_histogram: BTreeMap<usize, usize>,
    pub fonts: BTreeSet<String>,
    pub dropped: Vec<DroppedDesign>,
}

impl CorpusManifest {
    pub fn from_designs(split: Option<&str>, designs: &[Design]) -> Self {
        let mut m = Self {
            split: split.map(str::to_string),
            design_count: designs.len(),
            ..Self::default()
        };
        for d in designs {
            *m.element_histogram.entry(d.elements.len()).or_default() += 1;
            m.fonts
                .extend(d.attributes.values().filter_map(|a| a.text.as_ref().map(|t| t.font.clone())));
        }
        m
    }

    /// Removes `dropped` from the counts and records why.
    pub fn record_dropped(&mut self, dropped: &[Design], reason: &str) {
        for d in dropped {
            self.design_count -= 1;
            if let Some(n) = self.element_histogram.get_mut(&d.elements.len()) {
                *n -= 1;
                if *n == 0 {
                    self.element_histogram.remove(&d.elements.len());
                }
            }
            self.dropped.push(DroppedDesign {
                id: d.id.clone(),
                reason: reason.to_string(),
            });
        }
    }
}

/// Loads every `*.json` design under `{root}/{split}` (or `root` itself),
/// sorted by file name. Each design must pass full validation.
pub fn load_corpus(root: &Path, split: Option<&str>) -> Result<(Vec<Design>, CorpusManifest), DatasetError> {
    let dir = split.map_or_else(|| root.to_path_buf(), |s| root.join(s));
    let mut files: Vec<PathBuf> = fs::read_dir(&dir)
        .map_err(io_err(&dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json") && p.is_file())
        .collect();
    files.sort();
    let designs = files
        .par_iter()
        .map(|p| {
            let d = load_design(p, root)?;
            let violations = validate_design(&d);
            if violations.is_empty() {
                Ok(d)
            } else {
                Err(DatasetError::Invalid {
                    record: d.id,
                    violations,
                })
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    let manifest = CorpusManifest::from_designs(split, &designs);
    Ok((designs, manifest))
}

/// Splits `designs` into those with at most `max` elements and the rest.
pub fn filter_by_element_count(designs: Vec<Design>, max: usize) -> (Vec<Design>, Vec<Design>) {
    designs.into_iter().partition(|d| d.elements.len() <= max)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheEntry {
    /// Content hash of the inputs to this state.
    pub hash: String,
    /// Path relative to the cache directory.
    pub file: String,
    /// SHA-256 of the PNG file.
    pub sha256: String,
}

/// Design id -> level (1..=5) -> entry.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheIndex {
    pub designs: BTreeMap<String, BTreeMap<u8, CacheEntry>>,
}

impl CacheIndex {
    pub const FILE: &'static str = "index.json";

    pub fn load(cache_dir: &Path) -> Self {
        let path = cache_dir.join(Self::FILE);
        match fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str(&text).unwrap_or_else(|e| {
                log::warn!("ignoring unreadable cache index {}: {e}", path.display());
                Self::default()
            }),
            Err(_) => Self::default(),
        }
    }

    pub fn state_path(&self, cache_dir: &Path, design_id: &str, level: u8) -> Option<PathBuf> {
        self.designs
            .get(design_id)
            .and_then(|m| m.get(&level))
            .map(|e| cache_dir.join(&e.file))
    }
}

#[derive(Debug, Clone, Default)]
pub struct CacheReport {
    pub index: CacheIndex,
    /// `(design id, level)` for every state rendered in this run.
    pub rendered: Vec<(String, u8)>,
    pub hits: usize,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn element_digest(e: &Element) -> String {
    let mut h = Sha256::new();
    match &e.content {
        ElementContent::Text(t) => {
            h.update(b"text\0");
            h.update(t.as_bytes());
        }
        ElementContent::Image(img) => {
            h.update(b"image\0");
            h.update(img.bitmap.width().to_le_bytes());
            h.update(img.bitmap.height().to_le_bytes());
            h.update(img.bitmap.as_raw());
        }
    }
    hex::encode(h.finalize())
}

/// Hash chain `h[0..=5]`: `h[i]` covers the canvas, render settings and
/// every layer up to `i`, so editing layer `i` changes `h[i..]` only.
pub fn state_hashes(design: &Design, opts: &RenderOptions) -> Result<[String; 6], DatasetError> {
    let mut h0 = Sha256::new();
    h0.update(b"layered-design state v1\0");
    h0.update(serde_json::to_vec(&design.canvas).expect("canvas serializes"));
    h0.update([u8::from(opts.antialias)]);
    h0.update(serde_json::to_vec(&opts.background).expect("color serializes"));
    let mut out: [String; 6] = Default::default();
    out[0] = hex::encode(h0.finalize());
    for role in SemanticRole::ALL {
        let i = role.order() as usize;
        let mut h = Sha256::new();
        h.update(out[i - 1].as_bytes());
        h.update(role.key().as_bytes());
        for id in design.plan.layer(role) {
            let e = design.element(id).ok_or_else(|| DatasetError::Invalid {
                record: design.id.clone(),
                violations: vec![Violation::PlannedUnknownElement(id.clone())],
            })?;
            h.update(b"\0");
            h.update(id.as_bytes());
            h.update(element_digest(e).as_bytes());
            h.update(serde_json::to_vec(&design.attributes.get(id)).expect("attributes serialize"));
        }
        out[i] = hex::encode(h.finalize());
    }
    Ok(out)
}

fn cached_valid(cache_dir: &Path, entry: &CacheEntry, hash: &str) -> bool {
    entry.hash == hash
        && fs::read(cache_dir.join(&entry.file)).is_ok_and(|bytes| sha256_hex(&bytes) == entry.sha256)
}

/// Renders G1..G5 of each design into `cache_dir`, reusing entries whose
/// content hash and file checksum still match. Writes `index.json`.
pub fn cache_states(
    designs: &[Design],
    fonts: &FontStore,
    cache_dir: &Path,
    opts: &RenderOptions,
) -> Result<CacheReport, DatasetError> {
    fs::create_dir_all(cache_dir).map_err(io_err(cache_dir))?;
    let old = CacheIndex::load(cache_dir);
    let index = Mutex::new(CacheIndex::default());
    let rendered = Mutex::new(Vec::new());
    let hits = Mutex::new(0usize);

    designs.par_iter().try_for_each(|design| -> Result<(), DatasetError> {
        let hashes = state_hashes(design, opts)?;
        let previous = old.designs.get(&design.id);
        let mut entries = BTreeMap::new();
        let mut state: Option<CanvasState> = None;
        for level in 1..=5u8 {
            let hash = &hashes[level as usize];
            if let Some(entry) = previous.and_then(|m| m.get(&level)) {
                if cached_valid(cache_dir, entry, hash) {
                    entries.insert(level, entry.clone());
                    *hits.lock().unwrap() += 1;
                    state = None;
                    continue;
                }
            }
            let prev = match state.take() {
                Some(s) => s,
                None if level == 1 => blank_state(&design.canvas, opts),
                None => {
                    let path = cache_dir.join(&entries[&(level - 1)].file);
                    let image = image::open(&path)
                        .map_err(|e| DatasetError::Image(path.clone(), e.to_string()))?
                        .to_rgba8();
                    CanvasState { level: level - 1, image }
                }
            };
            let next = composite_layer(&prev, design, fonts, opts).map_err(|source| DatasetError::Render {
                design: design.id.clone(),
                source,
            })?;
            let file = format!("{}/G{level}-{}.png", safe_name(&design.id), &hash[..16]);
            let path = cache_dir.join(&file);
            let bytes = png_bytes(&next.image, &path)?;
            write_atomic(&path, &bytes)?;
            if let Some(stale) = previous.and_then(|m| m.get(&level)).filter(|e| e.file != file) {
                let _ = fs::remove_file(cache_dir.join(&stale.file));
            }
            entries.insert(
                level,
                CacheEntry {
                    hash: hash.clone(),
                    file,
                    sha256: sha256_hex(&bytes),
                },
            );
            rendered.lock().unwrap().push((design.id.clone(), level));
            state = Some(next);
        }
        index.lock().unwrap().designs.insert(design.id.clone(), entries);
        Ok(())
    })?;

    let index = index.into_inner().unwrap();
    let json = serde_json::to_string_pretty(&index).expect("index serializes");
    write_atomic(&cache_dir.join(CacheIndex::FILE), json.as_bytes())?;
    let mut rendered = rendered.into_inner().unwrap();
    rendered.sort();
    Ok(CacheReport {
        index,
        rendered,
        hits: hits.into_inner().unwrap(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{Rgba, RgbaImage};

    fn sample(id: &str, extra_texts: usize) -> Design {
        let mut elements = vec![
            Element::image("bg", RgbaImage::from_pixel(16, 16, Rgba([10, 200, 10, 255]))),
            Element::text("t0", "Hello"),
        ];
        let mut plan = LayerPlan::from_roles([("bg", SemanticRole::Background), ("t0", SemanticRole::Text)]);
        for k in 0..extra_texts {
            let tid = format!("x{k}");
            elements.push(Element::text(&tid, "more"));
            plan.push(&tid, SemanticRole::Text);
        }
        let mut attributes = BTreeMap::new();
        for (i, (_, eid)) in plan.placement_order().enumerate() {
            let text = (eid != "bg").then(|| TextAttributes::new("DejaVu Sans", 10));
            attributes.insert(
                eid.to_string(),
                ElementAttributes {
                    element_id: eid.to_string(),
                    index: i as u32,
                    bbox: if eid == "bg" {
                        BBox::new(0, 0, 64, 48)
                    } else {
                        BBox::new(4, 4 + i as i64, 40, 12)
                    },
                    text,
                },
            );
        }
        Design {
            id: id.into(),
            canvas: Canvas::new(64, 48),
            elements,
            plan,
            attributes,
        }
    }

    #[test]
    fn save_then_load_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let mut d = sample("poster 1", 2);
        d.plan.set_layer_order(SemanticRole::Text, vec!["x1".into(), "t0".into(), "x0".into()]);
        let json = dir.path().join("test/poster.json");
        let rec = save_design(&d, &json, dir.path()).unwrap();
        assert!(rec.plan.is_some());
        assert_eq!(rec.elements[0].image_path.as_deref(), Some("assets/poster_1/bg.png"));
        let back = load_design(&json, dir.path()).unwrap();
        assert_eq!(back, d);
        // A second save reuses the asset and gives the same record.
        assert_eq!(save_design(&back, &json, dir.path()).unwrap().elements, rec.elements);
    }

    #[test]
    fn schema_and_asset_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.json");
        fs::write(&p, r#"{"id": "a", "canvas": {"width": 10}, "elements": []}"#).unwrap();
        let err = load_design(&p, dir.path()).unwrap_err();
        assert!(matches!(&err, DatasetError::Schema { record, detail } if record == "a" && detail.contains("height")), "{err}");
        fs::write(
            &p,
            r#"{"id": "a", "canvas": {"width": 10, "height": 10},
                "elements": [{"id": "e", "modality": "image", "image_path": "nope.png"}]}"#,
        )
        .unwrap();
        assert!(matches!(load_design(&p, dir.path()), Err(DatasetError::MissingAsset(_))));
    }

    #[test]
    fn missing_roles_are_planned() {
        let dir = tempfile::tempdir().unwrap();
        let d = sample("p", 0);
        let mut rec = design_to_record(&d);
        for e in &mut rec.elements {
            e.role = None;
            e.attributes = None;
        }
        save_design(&d, &dir.path().join("x.json"), dir.path()).unwrap();
        let back = design_from_record(&rec, dir.path()).unwrap();
        assert_eq!(back.plan.role_of("t0"), Some(SemanticRole::Text));
        assert!(back.plan.role_of("bg").is_some());
    }

    #[test]
    fn corpus_histogram_and_filter() {
        let dir = tempfile::tempdir().unwrap();
        for (id, extra) in [("a", 0), ("b", 2), ("c", 2)] {
            save_design(&sample(id, extra), &dir.path().join(format!("test/{id}.json")), dir.path()).unwrap();
        }
        let (designs, mut manifest) = load_corpus(dir.path(), Some("test")).unwrap();
        assert_eq!(designs.iter().map(|d| d.id.as_str()).collect::<Vec<_>>(), ["a", "b", "c"]);
        assert_eq!(manifest.element_histogram, BTreeMap::from([(2, 1), (4, 2)]));
        assert_eq!(manifest.fonts, BTreeSet::from(["DejaVu Sans".to_string()]));
        let (kept, dropped) = filter_by_element_count(designs, 3);
        assert_eq!((kept.len(), dropped.len()), (1, 2));
        manifest.record_dropped(&dropped, "more than 3 elements");
        assert_eq!(manifest.design_count, 1);
        assert_eq!(manifest.element_histogram, BTreeMap::from([(2, 1)]));
        assert_eq!(filter_by_element_count(Vec::new(), 25), (Vec::new(), Vec::new()));
    }

    #[test]
    fn filter_boundary_is_inclusive() {
        let keep = sample("k", MAX_ELEMENTS - 2);
        let drop = sample("d", MAX_ELEMENTS - 1);
        assert_eq!((keep.elements.len(), drop.elements.len()), (25, 26));
        let (kept, dropped) = filter_by_element_count(vec![keep, drop], MAX_ELEMENTS);
        assert_eq!(kept[0].id, "k");
        assert_eq!(dropped[0].id, "d");
    }

    #[test]
    fn cache_is_incremental() {
        let dir = tempfile::tempdir().unwrap();
        let fonts = FontStore::builtin();
        let opts = RenderOptions::default();
        let mut d = sample("p", 1);
        let first = cache_states(std::slice::from_ref(&d), &fonts, dir.path(), &opts).unwrap();
        assert_eq!(first.rendered.len(), 5);
        assert_eq!(first.hits, 0);
        for level in 1..=5 {
            let entry = &first.index.designs["p"][&level];
            let bytes = fs::read(dir.path().join(&entry.file)).unwrap();
            assert_eq!(sha256_hex(&bytes), entry.sha256);
        }
        let again = cache_states(std::slice::from_ref(&d), &fonts, dir.path(), &opts).unwrap();
        assert!(again.rendered.is_empty());
        assert_eq!(again.hits, 5);

        // Editing a text attribute invalidates G4 and G5 only.
        d.attributes.get_mut("x0").unwrap().bbox.top += 3;
        let edited = cache_states(std::slice::from_ref(&d), &fonts, dir.path(), &opts).unwrap();
        assert_eq!(edited.rendered, vec![("p".to_string(), 4), ("p".to_string(), 5)]);
        let g4 = image::open(edited.index.state_path(dir.path(), "p", 4).unwrap()).unwrap().to_rgba8();
        let fresh = crate::render::render_state(&d, 4, &fonts, &opts).unwrap();
        assert_eq!(g4, fresh.image);

        // A corrupted file is re-rendered.
        let g2 = edited.index.state_path(dir.path(), "p", 2).unwrap();
        fs::write(&g2, b"junk").unwrap();
        let repaired = cache_states(std::slice::from_ref(&d), &fonts, dir.path(), &opts).unwrap();
        assert_eq!(repaired.rendered, vec![("p".to_string(), 2)]);
    }
}
