//! Binding logic against the worked-example fixture, without an interpreter.

use std::path::PathBuf;

use layered_design_py::api;

fn fixture() -> (String, PathBuf) {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/worked_example");
    (std::fs::read_to_string(dir.join("design.json")).unwrap(), dir)
}

#[test]
fn loads_validates_and_renders() {
    let (json, root) = fixture();
    let d = api::load(&json, &root).unwrap();
    assert!(api::violations(&d).is_empty());
    let png = api::render_png(&d, 5, true).unwrap();
    let golden = std::fs::read(root.join("golden_g5.png")).unwrap();
    assert!(png == golden);
    assert!(api::load("{}", &root).is_err());
}

#[test]
fn wire_helpers_match_the_transcript() {
    let (json, root) = fixture();
    let d = api::load(&json, &root).unwrap();
    let transcript = std::fs::read_to_string(root.join("transcript.txt")).unwrap();
    assert_eq!(api::transcript(&d, None).unwrap(), transcript);
    let text = api::serialize_layer(&d, "text").unwrap();
    assert!(transcript.contains(&text));
    let compact = text.split_whitespace().collect::<Vec<_>>().join("");
    assert_eq!(api::normalize_answer(&d, "text", &compact).unwrap(), text);
    assert_eq!(
        api::announce(&d, "text").unwrap(),
        "Now predict the text elements: element 2: Spring Clean, element 3: Best hacks"
    );
    assert!(api::role("foreground").is_err());
}

#[test]
fn plans_composes_and_scores() {
    let (json, root) = fixture();
    let d = api::load(&json, &root).unwrap();
    let plan = api::plan(&d).unwrap();
    assert_eq!(plan["background"], ["header"]);
    assert_eq!(plan["text"], ["title", "subtitle"]);
    let composed = api::compose_heuristic(&d, 0).unwrap();
    assert!(api::violations(&composed).is_empty());
    let s = api::scores(&composed).unwrap();
    assert_eq!(s.val, 1.0);
    assert!(api::to_json(&composed).contains("\"spring-clean\""));
}
