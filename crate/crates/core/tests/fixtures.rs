//! Generated fixtures stay in sync with their generators.
//! Regenerate with `BLESS=1 cargo test -p layered-design --test fixtures`.

mod common;

use common::*;
use layered_design::render::{render_state, FontStore, RenderOptions};

#[test]
fn assets_match_generators() {
    let dir = worked_dir().join("assets");
    check_fixture(&dir.join("header.png"), &png_bytes(&header_asset()));
    check_fixture(&dir.join("photo.png"), &png_bytes(&photo_asset()));
}

#[test]
fn replay_record_matches_transcript() {
    let design = worked_design();
    let record = transcript_record(&design.id, &design.canvas, &worked_transcript());
    let line = format!("{}\n", serde_json::to_string(&record).unwrap());
    check_fixture(&worked_dir().join("conversation.jsonl"), line.as_bytes());
}

#[test]
fn golden_render_is_current() {
    let design = worked_design();
    let g5 = render_state(&design, 5, &FontStore::builtin(), &RenderOptions::aliased()).unwrap();
    check_fixture(&worked_dir().join("golden_g5.png"), &png_bytes(&g5.image));
}
