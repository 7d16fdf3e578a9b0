//! Shared fixtures and random generators for the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use image::{Rgba, RgbaImage};
use layered_design::codec::{CanvasSize, ConversationRecord, TurnRecord};
use layered_design::dataset::load_design;
use layered_design::{BBox, Canvas, Design, Element, ElementAttributes, LayerPlan, SemanticRole, TextAlign, TextAttributes};
use rand::Rng;

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn worked_dir() -> PathBuf {
    fixtures().join("worked_example")
}

/// Set `BLESS=1` to rewrite generated fixtures instead of comparing.
pub fn blessing() -> bool {
    std::env::var_os("BLESS").is_some()
}

/// Compares `bytes` with the fixture at `path`, or rewrites it when blessing.
pub fn check_fixture(path: &Path, bytes: &[u8]) {
    if blessing() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(path, bytes).unwrap();
        return;
    }
    let want = std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e} (run with BLESS=1)", path.display()));
    assert!(want == bytes, "{} is stale (run with BLESS=1)", path.display());
}

pub fn png_bytes(img: &RgbaImage) -> Vec<u8> {
    let mut buf = Vec::new();
    img.write_to(&mut std::io::Cursor::new(&mut buf), image::ImageFormat::Png)
        .unwrap();
    buf
}

/// Header artwork: large enough to be planned as the background.
pub fn header_asset() -> RgbaImage {
    RgbaImage::from_fn(1080, 1600, |_, y| {
        let t = y as f32 / 1599.0;
        Rgba([
            (236.0 - 40.0 * t) as u8,
            (226.0 - 20.0 * t) as u8,
            (196.0 + 30.0 * t) as u8,
            255,
        ])
    })
}

/// Photo stand-in: soft colored discs on a warm ground.
pub fn photo_asset() -> RgbaImage {
    let spots = [(180.0, 260.0, 150.0, [70, 140, 90]), (430.0, 600.0, 210.0, [200, 90, 70])];
    RgbaImage::from_fn(614, 921, |x, y| {
        let mut c = [245.0f32, 238.0, 225.0];
        for (cx, cy, r, col) in spots {
            let d2 = (x as f32 - cx).powi(2) + (y as f32 - cy).powi(2);
            let w = (-d2 / (2.0 * r * r)).exp();
            for k in 0..3 {
                c[k] = c[k] * (1.0 - w) + col[k] as f32 * w;
            }
        }
        Rgba([c[0] as u8, c[1] as u8, c[2] as u8, 255])
    })
}

pub fn worked_design() -> Design {
    let dir = worked_dir();
    load_design(&dir.join("design.json"), &dir).expect("worked example loads")
}

/// The hand-transcribed worked conversation.
pub fn worked_transcript() -> String {
    std::fs::read_to_string(worked_dir().join("transcript.txt")).unwrap()
}

/// Reads a `HUMAN:` / `ASSISTANT:` transcript into a replayable record.
pub fn transcript_record(design_id: &str, canvas: &Canvas, text: &str) -> ConversationRecord {
    let mut turns = Vec::new();
    for (n, block) in text.split("HUMAN: ").skip(1).enumerate() {
        let (human, assistant) = block.split_once("\nASSISTANT:\n").expect("assistant label");
        turns.push(TurnRecord {
            layer: SemanticRole::ALL[n],
            human: human.to_string(),
            assistant: assistant.trim_end_matches('\n').to_string(),
            images: Vec::new(),
            slots: Vec::new(),
        });
    }
    ConversationRecord {
        design_id: design_id.to_string(),
        seed: None,
        canvas: CanvasSize {
            width: canvas.width,
            height: canvas.height,
        },
        turns,
    }
}

const WORDS: [&str; 10] = ["Spring", "Sale", "Best", "hacks", "Open", "Day", "Fresh", "Menu", "Jazz", "Night"];

pub fn random_text(rng: &mut impl Rng) -> String {
    let n = rng.gen_range(1..=3);
    (0..n).map(|_| WORDS[rng.gen_range(0..WORDS.len())]).collect::<Vec<_>>().join(" ")
}

/// Small image with a random mix of flat fill, stripes and transparency.
pub fn random_bitmap(rng: &mut impl Rng, max_side: u32) -> RgbaImage {
    let (w, h) = (rng.gen_range(1..=max_side), rng.gen_range(1..=max_side));
    let a: [u8; 4] = [rng.gen(), rng.gen(), rng.gen(), rng.gen_range(0..=255)];
    let b: [u8; 4] = [rng.gen(), rng.gen(), rng.gen(), 255];
    let stripe = rng.gen_range(1..=4);
    RgbaImage::from_fn(w, h, |x, y| Rgba(if (x + y) / stripe % 2 == 0 { a } else { b }))
}

pub fn random_text_attrs(rng: &mut impl Rng, max_size: u32) -> TextAttributes {
    TextAttributes {
        angle: [0.0, 0.0, 15.0, -30.0, 90.0][rng.gen_range(0..5)],
        font: ["DejaVu Sans", "Raleway"][rng.gen_range(0..2)].to_string(),
        font_size: rng.gen_range(1..=max_size),
        color: [rng.gen(), rng.gen(), rng.gen()],
        text_align: [TextAlign::Left, TextAlign::Center, TextAlign::Right][rng.gen_range(0..3)],
        capitalize: rng.gen(),
        letter_spacing: rng.gen_range(0..4) as f64 * 0.5,
        line_height: [0.8, 1.0, 1.2, 1.5][rng.gen_range(0..4)],
    }
}

/// Elements with a valid plan: at most one background, texts in the text layer.
pub fn random_elements(rng: &mut impl Rng, count: usize, max_bitmap: u32) -> (Vec<Element>, LayerPlan) {
    let mut elements = Vec::new();
    let mut plan = LayerPlan::new();
    let mut has_background = false;
    for i in 0..count {
        let id = format!("e{i}");
        let role = loop {
            let r = SemanticRole::ALL[rng.gen_range(0..5)];
            if r != SemanticRole::Background || !has_background {
                break r;
            }
        };
        has_background |= role == SemanticRole::Background;
        let e = if role == SemanticRole::Text {
            Element::text(&id, random_text(rng))
        } else {
            Element::image(&id, random_bitmap(rng, max_bitmap))
        };
        elements.push(e);
        plan.push(id, role);
    }
    (elements, plan)
}

/// A fully attributed design with random boxes that may leave the canvas.
pub fn random_design(rng: &mut impl Rng, id: &str, max_side: u32, max_elements: usize) -> Design {
    let canvas = Canvas::new(rng.gen_range(1..=max_side), rng.gen_range(1..=max_side))
        .with_background([rng.gen(), rng.gen(), rng.gen()]);
    let count = rng.gen_range(1..=max_elements);
    let (elements, plan) = random_elements(rng, count, 12);
    let indices = plan.contiguous_indices();
    let (w, h) = (canvas.width as i64, canvas.height as i64);
    let attributes: BTreeMap<String, ElementAttributes> = elements
        .iter()
        .map(|e| {
            let bbox = BBox::new(
                rng.gen_range(-w / 4..=w),
                rng.gen_range(-h / 4..=h),
                rng.gen_range(0..=canvas.width + 4),
                rng.gen_range(0..=canvas.height + 4),
            );
            let text = e
                .text_content()
                .map(|_| random_text_attrs(rng, (canvas.height / 3).max(1)));
            let attrs = ElementAttributes {
                element_id: e.id.clone(),
                index: indices[&e.id],
                bbox,
                text,
            };
            (e.id.clone(), attrs)
        })
        .collect();
    Design {
        id: id.to_string(),
        canvas,
        elements,
        plan,
        attributes,
    }
}
