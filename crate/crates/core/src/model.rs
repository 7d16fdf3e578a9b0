//! Canvases, elements, attributes and layer plans, plus the integer box
//! geometry shared by the planner, renderer and metrics.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use image::RgbaImage;
use serde::{Deserialize, Serialize};

pub type Rgb = [u8; 3];

pub const WHITE: Rgb = [255, 255, 255];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Canvas {
    pub width: u32,
    pub height: u32,
    #[serde(default = "default_background")]
    pub background_color: Rgb,
}

fn default_background() -> Rgb {
    WHITE
}

impl Canvas {
    /// White canvas. Panics on a zero dimension.
    pub fn new(width: u32, height: u32) -> Self {
        Self::try_new(width, height).expect("canvas dimensions must be at least 1px")
    }

    pub fn try_new(width: u32, height: u32) -> Option<Self> {
        (width >= 1 && height >= 1).then_some(Self {
            width,
            height,
            background_color: WHITE,
        })
    }

    pub fn with_background(mut self, color: Rgb) -> Self {
        self.background_color = color;
        self
    }

    pub fn area(&self) -> u64 {
        self.width as u64 * self.height as u64
    }

    pub fn bbox(&self) -> BBox {
        BBox::new(0, 0, self.width, self.height)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Image,
    Text,
}

/// Raster payload of an image element. `source` is the asset path the
/// bitmap was loaded from, kept so designs can be written back out.
#[derive(Debug, Clone)]
pub struct ImageContent {
    pub bitmap: Arc<RgbaImage>,
    pub source: Option<String>,
}

impl PartialEq for ImageContent {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.bitmap, &other.bitmap) || *self.bitmap == *other.bitmap
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ElementContent {
    Image(ImageContent),
    Text(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Element {
    pub id: String,
    pub content: ElementContent,
    /// Intrinsic size in pixels; for images this defaults to the bitmap size.
    pub intrinsic_width: u32,
    pub intrinsic_height: u32,
}

impl Element {
    pub fn image(id: impl Into<String>, bitmap: RgbaImage) -> Self {
        let (w, h) = bitmap.dimensions();
        Self {
            id: id.into(),
            content: ElementContent::Image(ImageContent {
                bitmap: Arc::new(bitmap),
                source: None,
            }),
            intrinsic_width: w,
            intrinsic_height: h,
        }
    }

    pub fn text(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            content: ElementContent::Text(text.into()),
            intrinsic_width: 0,
            intrinsic_height: 0,
        }
    }

    pub fn with_source(mut self, path: impl Into<String>) -> Self {
        if let ElementContent::Image(img) = &mut self.content {
            img.source = Some(path.into());
        }
        self
    }

    pub fn with_intrinsic_size(mut self, width: u32, height: u32) -> Self {
        self.intrinsic_width = width;
        self.intrinsic_height = height;
        self
    }

    pub fn modality(&self) -> Modality {
        match self.content {
            ElementContent::Image(_) => Modality::Image,
            ElementContent::Text(_) => Modality::Text,
        }
    }

    pub fn bitmap(&self) -> Option<&RgbaImage> {
        match &self.content {
            ElementContent::Image(img) => Some(&img.bitmap),
            ElementContent::Text(_) => None,
        }
    }

    pub fn text_content(&self) -> Option<&str> {
        match &self.content {
            ElementContent::Text(t) => Some(t),
            ElementContent::Image(_) => None,
        }
    }

    pub fn intrinsic_area(&self) -> u64 {
        self.intrinsic_width as u64 * self.intrinsic_height as u64
    }
}

/// Semantic layer of an element. The discriminant is the placement order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SemanticRole {
    Background = 1,
    Underlay = 2,
    #[serde(alias = "logo/image", alias = "logo", alias = "image")]
    LogoImage = 3,
    Text = 4,
    Embellishment = 5,
}

impl SemanticRole {
    pub const ALL: [SemanticRole; 5] = [
        SemanticRole::Background,
        SemanticRole::Underlay,
        SemanticRole::LogoImage,
        SemanticRole::Text,
        SemanticRole::Embellishment,
    ];

    pub fn order(self) -> u8 {
        self as u8
    }

    pub fn from_order(order: u8) -> Option<Self> {
        Self::ALL.get((order as usize).checked_sub(1)?).copied()
    }

    /// Layer name as it appears in protocol turns.
    pub fn layer_name(self) -> &'static str {
        match self {
            SemanticRole::Background => "background",
            SemanticRole::Underlay => "underlay",
            SemanticRole::LogoImage => "logo/image",
            SemanticRole::Text => "text",
            SemanticRole::Embellishment => "embellishment",
        }
    }

    /// Snake-case key used in plan and design JSON.
    pub fn key(self) -> &'static str {
        match self {
            SemanticRole::Background => "background",
            SemanticRole::Underlay => "underlay",
            SemanticRole::LogoImage => "logo_image",
            SemanticRole::Text => "text",
            SemanticRole::Embellishment => "embellishment",
        }
    }

    fn index(self) -> usize {
        self as usize - 1
    }
}

impl fmt::Display for SemanticRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.layer_name())
    }
}

/// Axis-aligned box in canvas pixels. `left`/`top` may be negative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct BBox {
    pub left: i64,
    pub top: i64,
    pub width: u32,
    pub height: u32,
}

impl BBox {
    pub const fn new(left: i64, top: i64, width: u32, height: u32) -> Self {
        Self {
            left,
            top,
            width,
            height,
        }
    }

    pub fn right(&self) -> i64 {
        self.left + self.width as i64
    }

    pub fn bottom(&self) -> i64 {
        self.top + self.height as i64
    }

    pub fn area(&self) -> u64 {
        area(self)
    }

    pub fn intersect(&self, other: &BBox) -> Option<BBox> {
        intersect(self, other)
    }

    pub fn contains(&self, other: &BBox) -> bool {
        self.left <= other.left
            && self.top <= other.top
            && self.right() >= other.right()
            && self.bottom() >= other.bottom()
    }

    /// Part of the box that lies on the canvas.
    pub fn clip_to(&self, canvas: &Canvas) -> Option<BBox> {
        intersect(self, &canvas.bbox())
    }
}

/// Intersection of two boxes; `None` when the interiors are disjoint
/// (edge or corner contact has zero area).
pub fn intersect(a: &BBox, b: &BBox) -> Option<BBox> {
    let left = a.left.max(b.left);
    let top = a.top.max(b.top);
    let right = a.right().min(b.right());
    let bottom = a.bottom().min(b.bottom());
    if right <= left || bottom <= top {
        return None;
    }
    Some(BBox::new(left, top, (right - left) as u32, (bottom - top) as u32))
}

pub fn area(b: &BBox) -> u64 {
    b.width as u64 * b.height as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TextAlign {
    Left,
    Center,
    Right,
}

impl TextAlign {
    pub fn as_str(self) -> &'static str {
        match self {
            TextAlign::Left => "left",
            TextAlign::Center => "center",
            TextAlign::Right => "right",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "left" => Some(TextAlign::Left),
            "center" | "centre" => Some(TextAlign::Center),
            "right" => Some(TextAlign::Right),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextAttributes {
    /// Degrees, counter-clockwise, about the box center.
    pub angle: f64,
    pub font: String,
    pub font_size: u32,
    pub color: Rgb,
    pub text_align: TextAlign,
    pub capitalize: bool,
    /// Pixels added between consecutive glyphs.
    pub letter_spacing: f64,
    /// Multiplier of `font_size`.
    pub line_height: f64,
}

impl TextAttributes {
    pub fn new(font: impl Into<String>, font_size: u32) -> Self {
        Self {
            angle: 0.0,
            font: font.into(),
            font_size,
            color: [0, 0, 0],
            text_align: TextAlign::Left,
            capitalize: false,
            letter_spacing: 0.0,
            line_height: 1.0,
        }
    }

    /// Names of the numeric rules this record breaks.
    pub fn broken_rules(&self) -> Vec<&'static str> {
        let mut rules = Vec::new();
        if self.font_size == 0 {
            rules.push("font_size > 0");
        }
        if !(self.line_height > 0.0 && self.line_height.is_finite()) {
            rules.push("line_height > 0");
        }
        if !(self.letter_spacing >= 0.0 && self.letter_spacing.is_finite()) {
            rules.push("letter_spacing >= 0");
        }
        if !self.angle.is_finite() {
            rules.push("angle finite");
        }
        rules
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElementAttributes {
    pub element_id: String,
    pub index: u32,
    pub bbox: BBox,
    pub text: Option<TextAttributes>,
}

/// Assignment of every element to one semantic layer, with the order of
/// elements inside each layer.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LayerPlan {
    assignment: BTreeMap<String, SemanticRole>,
    ordering: [Vec<String>; 5],
}

impl LayerPlan {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a plan from `(id, role)` pairs; within-layer order follows
    /// the input order. A repeated id keeps its first role.
    pub fn from_roles<I, S>(roles: I) -> Self
    where
        I: IntoIterator<Item = (S, SemanticRole)>,
        S: Into<String>,
    {
        let mut plan = Self::new();
        for (id, role) in roles {
            plan.push(id, role);
        }
        plan
    }

    /// Appends `id` to the end of `role`'s layer. Returns false if the id
    /// was already planned.
    pub fn push(&mut self, id: impl Into<String>, role: SemanticRole) -> bool {
        let id = id.into();
        if self.assignment.contains_key(&id) {
            return false;
        }
        self.assignment.insert(id.clone(), role);
        self.ordering[role.index()].push(id);
        true
    }

    pub fn role_of(&self, id: &str) -> Option<SemanticRole> {
        self.assignment.get(id).copied()
    }

    pub fn layer(&self, role: SemanticRole) -> &[String] {
        &self.ordering[role.index()]
    }

    pub fn set_layer_order(&mut self, role: SemanticRole, ids: Vec<String>) {
        debug_assert!(ids.iter().all(|id| self.role_of(id) == Some(role)));
        self.ordering[role.index()] = ids;
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn assignment(&self) -> &BTreeMap<String, SemanticRole> {
        &self.assignment
    }

    /// All element ids in placement order (layer by layer).
    pub fn placement_order(&self) -> impl Iterator<Item = (SemanticRole, &str)> {
        SemanticRole::ALL
            .into_iter()
            .flat_map(move |role| self.layer(role).iter().map(move |id| (role, id.as_str())))
    }

    /// Global serialization indices: contiguous from 0 in placement order.
    pub fn contiguous_indices(&self) -> BTreeMap<String, u32> {
        self.placement_order()
            .enumerate()
            .map(|(i, (_, id))| (id.to_string(), i as u32))
            .collect()
    }

    /// Merges `other` into a copy of `self`, appending its members to the
    /// end of each layer.
    pub fn merged(&self, other: &LayerPlan) -> LayerPlan {
        let mut out = self.clone();
        for (role, id) in other.placement_order() {
            out.push(id, role);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub id: String,
    pub canvas: Canvas,
    pub elements: Vec<Element>,
    pub plan: LayerPlan,
    pub attributes: BTreeMap<String, ElementAttributes>,
}

impl Design {
    pub fn element(&self, id: &str) -> Option<&Element> {
        self.elements.iter().find(|e| e.id == id)
    }

    pub fn role_of(&self, id: &str) -> Option<SemanticRole> {
        self.plan.role_of(id)
    }

    /// Attribute records of one layer in plan order; elements without
    /// attributes are skipped.
    pub fn layer_attributes(&self, role: SemanticRole) -> Vec<&ElementAttributes> {
        self.plan
            .layer(role)
            .iter()
            .filter_map(|id| self.attributes.get(id))
            .collect()
    }

    pub fn layer_is_attributed(&self, role: SemanticRole) -> bool {
        self.plan
            .layer(role)
            .iter()
            .all(|id| self.attributes.contains_key(id))
    }
}

/// Rendered intermediate design: layers with placement order `<= level`
/// are baked in.
#[derive(Debug, Clone, PartialEq)]
pub struct CanvasState {
    pub level: u8,
    pub image: RgbaImage,
}

impl CanvasState {
    pub fn blank(canvas: &Canvas) -> Self {
        let [r, g, b] = canvas.background_color;
        Self {
            level: 0,
            image: RgbaImage::from_pixel(canvas.width, canvas.height, image::Rgba([r, g, b, 255])),
        }
    }

    pub fn baked_layers(&self) -> BTreeSet<SemanticRole> {
        SemanticRole::ALL
            .into_iter()
            .filter(|r| r.order() <= self.level)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Violation {
    InvalidCanvas,
    DuplicateElementId(String),
    EmptyText(String),
    NotPlanned(String),
    PlannedUnknownElement(String),
    RoleModalityMismatch(String),
    MultipleBackgrounds(Vec<String>),
    MissingAttributes(String),
    AttributesForUnknownElement(String),
    AttributeIdMismatch(String),
    MissingTextAttrs(String),
    UnexpectedTextAttrs(String),
    InvalidTextAttrs { element_id: String, rule: &'static str },
    DuplicateIndex(u32),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::InvalidCanvas => write!(f, "canvas dimensions must be >= 1px"),
            Violation::DuplicateElementId(id) => write!(f, "{id}: duplicate element id"),
            Violation::EmptyText(id) => write!(f, "{id}: text content is blank"),
            Violation::NotPlanned(id) => write!(f, "{id}: element has no layer"),
            Violation::PlannedUnknownElement(id) => write!(f, "{id}: plan names an unknown element"),
            Violation::RoleModalityMismatch(id) => {
                write!(f, "{id}: text role and text modality disagree")
            }
            Violation::MultipleBackgrounds(ids) => {
                write!(f, "more than one background: {}", ids.join(", "))
            }
            Violation::MissingAttributes(id) => write!(f, "{id}: no attributes"),
            Violation::AttributesForUnknownElement(id) => {
                write!(f, "{id}: attributes for an unknown element")
            }
            Violation::AttributeIdMismatch(id) => {
                write!(f, "{id}: attribute record carries another element id")
            }
            Violation::MissingTextAttrs(id) => write!(f, "{id}: text element lacks text attributes"),
            Violation::UnexpectedTextAttrs(id) => {
                write!(f, "{id}: image element carries text attributes")
            }
            Violation::InvalidTextAttrs { element_id, rule } => {
                write!(f, "{element_id}: text attributes break `{rule}`")
            }
            Violation::DuplicateIndex(i) => write!(f, "index {i} used more than once"),
        }
    }
}

/// Checks every structural invariant of a fully attributed design.
/// The result is sorted, so equal designs give equal lists.
pub fn validate_design(d: &Design) -> Vec<Violation> {
    let mut out = validate_elements_and_plan(d);
    let known: BTreeSet<&str> = d.elements.iter().map(|e| e.id.as_str()).collect();

    for e in &d.elements {
        match d.attributes.get(&e.id) {
            None => out.push(Violation::MissingAttributes(e.id.clone())),
            Some(attrs) => {
                if attrs.element_id != e.id {
                    out.push(Violation::AttributeIdMismatch(e.id.clone()));
                }
                match (e.modality(), &attrs.text) {
                    (Modality::Text, None) => out.push(Violation::MissingTextAttrs(e.id.clone())),
                    (Modality::Image, Some(_)) => {
                        out.push(Violation::UnexpectedTextAttrs(e.id.clone()))
                    }
                    (Modality::Text, Some(t)) => {
                        for rule in t.broken_rules() {
                            out.push(Violation::InvalidTextAttrs {
                                element_id: e.id.clone(),
                                rule,
                            });
                        }
                    }
                    (Modality::Image, None) => {}
                }
            }
        }
    }
    for id in d.attributes.keys() {
        if !known.contains(id.as_str()) {
            out.push(Violation::AttributesForUnknownElement(id.clone()));
        }
    }
    let mut seen = BTreeSet::new();
    let mut dup = BTreeSet::new();
    for attrs in d.attributes.values() {
        if !seen.insert(attrs.index) {
            dup.insert(attrs.index);
        }
    }
    out.extend(dup.into_iter().map(Violation::DuplicateIndex));

    out.sort();
    out.dedup();
    out
}

/// Invariants that hold before any attributes exist: canvas, element
/// identity, text content and the layer plan.
pub fn validate_elements_and_plan(d: &Design) -> Vec<Violation> {
    let mut out = Vec::new();
    if d.canvas.width == 0 || d.canvas.height == 0 {
        out.push(Violation::InvalidCanvas);
    }
    let mut ids = BTreeSet::new();
    for e in &d.elements {
        if !ids.insert(e.id.as_str()) {
            out.push(Violation::DuplicateElementId(e.id.clone()));
        }
        if let Some(t) = e.text_content() {
            if t.trim().is_empty() {
                out.push(Violation::EmptyText(e.id.clone()));
            }
        }
        match d.plan.role_of(&e.id) {
            None => out.push(Violation::NotPlanned(e.id.clone())),
            Some(role) => {
                if (role == SemanticRole::Text) != (e.modality() == Modality::Text) {
                    out.push(Violation::RoleModalityMismatch(e.id.clone()));
                }
            }
        }
    }
    for id in d.plan.assignment().keys() {
        if !ids.contains(id.as_str()) {
            out.push(Violation::PlannedUnknownElement(id.clone()));
        }
    }
    let backgrounds = d.plan.layer(SemanticRole::Background);
    if backgrounds.len() > 1 {
        out.push(Violation::MultipleBackgrounds(backgrounds.to_vec()));
    }
    out.sort();
    out.dedup();
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(l: i64, t: i64, w: u32, h: u32) -> BBox {
        BBox::new(l, t, w, h)
    }

    #[test]
    fn intersect_examples() {
        assert_eq!(intersect(&b(0, 0, 10, 10), &b(5, 5, 10, 10)), Some(b(5, 5, 5, 5)));
        assert_eq!(intersect(&b(0, 0, 10, 10), &b(10, 0, 5, 5)), None);
        let canvas = Canvas::new(1080, 1920);
        assert_eq!(
            b(-78, 378, 1228, 1842).clip_to(&canvas),
            Some(b(0, 378, 1080, 1542))
        );
    }

    #[test]
    fn area_examples() {
        assert_eq!(area(&b(0, 0, 10, 10)), 100);
        assert_eq!(area(&b(3, -5, 1101, 460)), 506_460);
        assert_eq!(area(&b(0, 0, 0, 7)), 0);
    }

    #[test]
    fn degenerate_boxes_never_intersect() {
        assert_eq!(intersect(&b(0, 0, 0, 7), &b(0, 0, 10, 10)), None);
    }

    #[test]
    fn role_order_round_trips() {
        for role in SemanticRole::ALL {
            assert_eq!(SemanticRole::from_order(role.order()), Some(role));
        }
        assert_eq!(SemanticRole::from_order(0), None);
        assert_eq!(SemanticRole::from_order(6), None);
    }

    #[test]
    fn plan_keeps_first_role_and_input_order() {
        let mut plan = LayerPlan::from_roles([
            ("a", SemanticRole::Text),
            ("b", SemanticRole::Background),
            ("c", SemanticRole::Text),
        ]);
        assert!(!plan.push("a", SemanticRole::Underlay));
        assert_eq!(plan.layer(SemanticRole::Text), ["a", "c"]);
        let idx = plan.contiguous_indices();
        assert_eq!((idx["b"], idx["a"], idx["c"]), (0, 1, 2));
    }

    fn tiny_design() -> Design {
        let canvas = Canvas::new(100, 100);
        let bg = Element::image("bg", RgbaImage::new(4, 4));
        let txt = Element::text("t", "hello");
        let plan = LayerPlan::from_roles([("bg", SemanticRole::Background), ("t", SemanticRole::Text)]);
        let mut attributes = BTreeMap::new();
        attributes.insert(
            "bg".to_string(),
            ElementAttributes {
                element_id: "bg".into(),
                index: 0,
                bbox: canvas.bbox(),
                text: None,
            },
        );
        attributes.insert(
            "t".to_string(),
            ElementAttributes {
                element_id: "t".into(),
                index: 1,
                bbox: b(10, 10, 50, 20),
                text: Some(TextAttributes::new("Raleway", 20)),
            },
        );
        Design {
            id: "tiny".into(),
            canvas,
            elements: vec![bg, txt],
            plan,
            attributes,
        }
    }

    #[test]
    fn well_formed_design_has_no_violations() {
        assert!(validate_design(&tiny_design()).is_empty());
    }

    #[test]
    fn missing_text_attrs_reported() {
        let mut d = tiny_design();
        d.attributes.get_mut("t").unwrap().text = None;
        assert_eq!(validate_design(&d), vec![Violation::MissingTextAttrs("t".into())]);
    }

    #[test]
    fn duplicate_index_reported() {
        let mut d = tiny_design();
        d.attributes.get_mut("bg").unwrap().index = 2;
        d.attributes.get_mut("t").unwrap().index = 2;
        assert_eq!(validate_design(&d), vec![Violation::DuplicateIndex(2)]);
    }

    #[test]
    fn role_modality_and_background_rules() {
        let mut d = tiny_design();
        d.elements.push(Element::image("bg2", RgbaImage::new(2, 2)));
        d.plan.push("bg2", SemanticRole::Background);
        d.attributes.insert(
            "bg2".into(),
            ElementAttributes {
                element_id: "bg2".into(),
                index: 5,
                bbox: b(0, 0, 1, 1),
                text: None,
            },
        );
        let v = validate_design(&d);
        assert!(v.contains(&Violation::MultipleBackgrounds(vec!["bg".into(), "bg2".into()])));

        let mut d = tiny_design();
        d.plan = LayerPlan::from_roles([("bg", SemanticRole::Text), ("t", SemanticRole::Text)]);
        assert!(validate_design(&d).contains(&Violation::RoleModalityMismatch("bg".into())));
    }

    #[test]
    fn blank_text_and_bad_typography() {
        let mut d = tiny_design();
        d.elements[1] = Element::text("t", "   ");
        d.attributes.get_mut("t").unwrap().text.as_mut().unwrap().line_height = 0.0;
        let v = validate_design(&d);
        assert!(v.contains(&Violation::EmptyText("t".into())));
        assert!(v.contains(&Violation::InvalidTextAttrs {
            element_id: "t".into(),
            rule: "line_height > 0"
        }));
    }

    #[test]
    fn blank_state_has_no_baked_layers() {
        let s = CanvasState::blank(&Canvas::new(3, 2));
        assert!(s.baked_layers().is_empty());
        assert!(s.image.pixels().all(|p| p.0 == [255, 255, 255, 255]));
        let s = CanvasState { level: 3, ..s };
        assert_eq!(s.baked_layers().len(), 3);
    }
}

#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    fn arb_box() -> impl Strategy<Value = BBox> {
        (-50i64..50, -50i64..50, 0u32..60, 0u32..60).prop_map(|(l, t, w, h)| BBox::new(l, t, w, h))
    }

    proptest! {
        #[test]
        fn intersect_commutes(a in arb_box(), b in arb_box()) {
            prop_assert_eq!(intersect(&a, &b), intersect(&b, &a));
        }

        #[test]
        fn intersect_self_is_identity(a in arb_box()) {
            prop_assume!(area(&a) > 0);
            prop_assert_eq!(intersect(&a, &a), Some(a));
        }

        #[test]
        fn intersection_area_bounded(a in arb_box(), b in arb_box()) {
            let i = intersect(&a, &b).map(|x| area(&x)).unwrap_or(0);
            prop_assert!(i <= area(&a).min(area(&b)));
        }
    }
}
