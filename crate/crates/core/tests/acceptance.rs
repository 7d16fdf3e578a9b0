//! End-to-end acceptance checks, one result line per criterion.
//!
//! Lines go straight to stderr so they show up in captured test runs.

mod common;

use std::io::Write as _;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use common::*;
use layered_design::codec::{
    export_training_conversation, parse_layer_output, serialize_layer_output_with, FontVocab, JsonStyle, LayerInput,
    LayerItem, LayerOutput, LayerPayload, Shuffle,
};
use layered_design::compose::{
    compose, compose_partial, Backend, BackendError, Capabilities, ComposeOptions, HeuristicComposer, LayerRequest,
    ReplayBackend,
};
use layered_design::dataset::{filter_by_element_count, MAX_ELEMENTS};
use layered_design::metrics::{
    self, score_alignment, score_overlap, score_underlay, score_validity, SpectralResidual, POLICY,
};
use layered_design::planner::{plan_layers_explained, HeuristicThresholds, PlannerMode};
use layered_design::render::{blank_state, draw_element, render_state, FontStore, RenderOptions};
use layered_design::{validate_design, BBox, Canvas, Design, Element, ElementAttributes, SemanticRole, TextAttributes};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn report(n: u8, outcome: &Outcome) {
    let line = match outcome {
        Ok(note) => format!("criterion {n}: PASS {note}\n"),
        Err(why) => format!("criterion {n}: FAIL {why}\n"),
    };
    std::io::stderr().write_all(line.as_bytes()).unwrap();
}

fn ensure(ok: bool, why: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(why())
    }
}

fn without_attributes(d: &Design) -> Design {
    Design {
        attributes: Default::default(),
        ..d.clone()
    }
}

fn criterion_1() -> Outcome {
    let design = worked_design();
    let got = export_training_conversation(&design, Shuffle::Identity)
        .map_err(|e| e.to_string())?
        .to_transcript();
    let want = worked_transcript();
    if got == want {
        return Ok(format!("({} bytes identical)", want.len()));
    }
    let at = got.bytes().zip(want.bytes()).take_while(|(a, b)| a == b).count();
    Err(format!("transcripts differ at byte {at}"))
}

fn random_layer(rng: &mut ChaCha8Rng) -> (LayerInput, LayerOutput) {
    let role = SemanticRole::ALL[rng.gen_range(0..5)];
    let n = rng.gen_range(0..4);
    let base = rng.gen_range(0..40u32);
    let mut items = Vec::new();
    let mut records = Vec::new();
    for k in 0..n {
        let id = format!("el{k}");
        let index = base + k;
        let text = (role == SemanticRole::Text).then(|| TextAttributes {
            angle: rng.gen_range(-360.0..360.0),
            letter_spacing: rng.gen_range(0.0..40.0),
            line_height: rng.gen_range(0.05..4.0),
            ..random_text_attrs(rng, 400)
        });
        let payload = match text {
            Some(_) => LayerPayload::Text(random_text(rng)),
            None => LayerPayload::Image,
        };
        items.push(LayerItem {
            index,
            element_id: id.clone(),
            payload,
        });
        records.push(ElementAttributes {
            element_id: id,
            index,
            bbox: BBox::new(
                rng.gen_range(-5000..5000),
                rng.gen_range(-5000..5000),
                rng.gen_range(0..5000),
                rng.gen_range(0..5000),
            ),
            text,
        });
    }
    (LayerInput::new(role, items).unwrap(), LayerOutput { role, records })
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let vocab = FontVocab::open();
    for case in 0..10_000 {
        let (input, out) = random_layer(&mut rng);
        let style = if case % 2 == 0 { JsonStyle::Pretty } else { JsonStyle::Compact };
        let text = serialize_layer_output_with(&out, style);
        let parsed = parse_layer_output(&text, &input, &vocab).map_err(|e| format!("case {case}: {e}"))?;
        ensure(parsed == out, || format!("case {case}: records changed:\n{text}"))?;
        ensure(serialize_layer_output_with(&parsed, style) == text, || {
            format!("case {case}: text changed")
        })?;
    }
    Ok("(10000 layers, both JSON styles)".into())
}

/// Every element drawn in placement order straight onto the blank canvas.
fn full_render(d: &Design, fonts: &FontStore, opts: &RenderOptions) -> image::RgbaImage {
    let mut img = blank_state(&d.canvas, opts).image;
    for (_, id) in d.plan.placement_order() {
        draw_element(&mut img, d, id, fonts, opts).unwrap();
    }
    img
}

fn criterion_3() -> Outcome {
    let fonts = FontStore::builtin();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for n in 0..100 {
        let d = random_design(&mut rng, &format!("r{n}"), 96, 8);
        for opts in [RenderOptions::default(), RenderOptions::aliased()] {
            let inc = render_state(&d, 5, &fonts, &opts).map_err(|e| e.to_string())?;
            let again = render_state(&d, 5, &fonts, &opts).map_err(|e| e.to_string())?;
            ensure(inc.image == full_render(&d, &fonts, &opts), || {
                format!("design {n}: incremental and full renders differ")
            })?;
            ensure(inc == again, || format!("design {n}: repeat render differs"))?;
        }
    }
    Ok("(100 designs, antialias on and off)".into())
}

fn criterion_4() -> Outcome {
    let design = worked_design();
    let replay = ReplayBackend::from_jsonl(&worked_dir().join("conversation.jsonl"), Some(&design.id))
        .map_err(|e| e.to_string())?;
    let opts = ComposeOptions {
        render: RenderOptions::aliased(),
        ..ComposeOptions::default()
    };
    let c = compose(&without_attributes(&design), &replay, &opts).map_err(|e| e.to_string())?;
    ensure(c.design.attributes == design.attributes, || "replayed attributes differ".into())?;
    let golden = std::fs::read(worked_dir().join("golden_g5.png")).map_err(|e| e.to_string())?;
    ensure(png_bytes(&c.final_state().image) == golden, || "G5 differs from the golden PNG".into())?;
    Ok("(attributes equal, G5 byte-identical)".into())
}

/// Wraps a backend and counts its calls.
struct Counting<B> {
    inner: B,
    calls: AtomicUsize,
}

impl<B: Backend> Backend for Counting<B> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn capabilities(&self) -> Capabilities {
        self.inner.capabilities()
    }

    fn respond(&self, req: &LayerRequest<'_>) -> Result<String, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.respond(req)
    }
}

fn check_partial(design: &Design, backend: impl Backend, label: &str) -> Result<(), String> {
    let truth = export_training_conversation(design, Shuffle::Identity).map_err(|e| e.to_string())?;
    let counting = Counting {
        inner: backend,
        calls: AtomicUsize::new(0),
    };
    for k in [1usize, 3, 5] {
        counting.calls.store(0, Ordering::SeqCst);
        let c = compose_partial(design, k, &counting, &ComposeOptions::default())
            .map_err(|e| format!("{label} k={k}: {e}"))?;
        for i in 0..k {
            ensure(c.trace.conversation.turns[i].assistant == truth.turns[i].assistant, || {
                format!("{label} k={k}: given turn {} changed", i + 1)
            })?;
        }
        let calls = counting.calls.load(Ordering::SeqCst);
        ensure(calls == 5 - k, || format!("{label} k={k}: {calls} backend calls"))?;
    }
    Ok(())
}

fn criterion_7() -> Outcome {
    let design = worked_design();
    let replay = ReplayBackend::from_jsonl(&worked_dir().join("conversation.jsonl"), None).unwrap();
    check_partial(&design, replay, "worked example")?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for n in 0..20 {
        let d = random_design(&mut rng, &format!("p{n}"), 200, 8);
        check_partial(&d, HeuristicComposer::default(), &d.id)?;
    }
    Ok("(replay and 20 heuristic designs, k in 1,3,5)".into())
}

/// Pixel sets of the valid boxes, after the same role filter as the metric.
fn pixel_boxes(d: &Design, keep: impl Fn(SemanticRole) -> bool) -> Vec<Vec<bool>> {
    let (w, h) = (d.canvas.width as i64, d.canvas.height as i64);
    let min_px = POLICY.min_area_ratio * (w * h) as f64;
    d.plan
        .placement_order()
        .filter(|(r, _)| *r != SemanticRole::Background && keep(*r))
        .map(|(_, id)| {
            let b = d.attributes[id].bbox;
            (0..w * h)
                .map(|p| {
                    let (x, y) = (p % w, p / w);
                    x >= b.left && x < b.right() && y >= b.top && y < b.bottom()
                })
                .collect::<Vec<bool>>()
        })
        .filter(|m| m.iter().filter(|&&v| v).count() as f64 >= min_px && m.iter().any(|&v| v))
        .collect()
}

fn count(m: &[bool]) -> usize {
    m.iter().filter(|&&v| v).count()
}

fn both(a: &[bool], b: &[bool]) -> usize {
    a.iter().zip(b).filter(|(x, y)| **x && **y).count()
}

/// Six alignment coordinates, doubled so centers stay integral.
fn doubled_axes(b: &BBox, c: &Canvas) -> [(i64, i64); 6] {
    let cb = b.clip_to(c).unwrap();
    let (w, h) = (c.width as i64 * 2, c.height as i64 * 2);
    [
        (cb.left * 2, w),
        (cb.left + cb.right(), w),
        (cb.right() * 2, w),
        (cb.top * 2, h),
        (cb.top + cb.bottom(), h),
        (cb.bottom() * 2, h),
    ]
}

fn exhaustive_alignment(d: &Design) -> f64 {
    let min_px = POLICY.min_area_ratio * d.canvas.area() as f64;
    let boxes: Vec<BBox> = d
        .plan
        .placement_order()
        .filter(|(r, _)| !matches!(r, SemanticRole::Background | SemanticRole::Underlay))
        .map(|(_, id)| d.attributes[id].bbox)
        .filter(|b| b.clip_to(&d.canvas).is_some_and(|c| c.area() as f64 >= min_px))
        .collect();
    if boxes.len() < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    for (i, a) in boxes.iter().enumerate() {
        let mut best = f64::INFINITY;
        for (j, b) in boxes.iter().enumerate() {
            if i == j {
                continue;
            }
            let (pa, pb) = (doubled_axes(a, &d.canvas), doubled_axes(b, &d.canvas));
            for axis in 0..6 {
                let d = (pa[axis].0 - pb[axis].0).abs() as f64 / pa[axis].1 as f64;
                best = best.min(d);
            }
        }
        total += -(1.0 - best.min(1.0 - POLICY.alignment_epsilon)).ln();
    }
    total / boxes.len() as f64
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let fonts = FontStore::builtin();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut scored = 0;
    for n in 0..500 {
        let d = random_design(&mut rng, &format!("m{n}"), 64, 5);
        let has_scorable = d.plan.placement_order().any(|(r, _)| r != SemanticRole::Background);
        if !has_scorable {
            ensure(score_validity(&d).is_err(), || format!("design {n}: no elements but Val defined"))?;
            continue;
        }
        scored += 1;

        let ove = score_overlap(&d).unwrap();
        let boxes = pixel_boxes(&d, |r| r != SemanticRole::Underlay);
        let (mut sum, mut pairs, mut tol) = (0.0, 0, 0.0f64);
        for i in 0..boxes.len() {
            for j in i + 1..boxes.len() {
                let small = count(&boxes[i]).min(count(&boxes[j]));
                sum += both(&boxes[i], &boxes[j]) as f64 / small as f64;
                tol = tol.max(2.0 / small as f64);
                pairs += 1;
            }
        }
        let pix = if pairs == 0 { 0.0 } else { sum / pairs as f64 };
        ensure((ove - pix).abs() <= tol.max(1e-12), || format!("design {n}: Ove {ove} vs pixels {pix}"))?;

        let und = score_underlay(&d).unwrap();
        let unders = pixel_boxes(&d, |r| r == SemanticRole::Underlay);
        let others = pixel_boxes(&d, |r| r != SemanticRole::Underlay);
        match und {
            None => ensure(unders.is_empty(), || format!("design {n}: Und missing"))?,
            Some((l, s)) => {
                let mut loose = 0.0;
                let mut strict = 0.0;
                let mut tol = 1e-12f64;
                for u in &unders {
                    loose += others
                        .iter()
                        .map(|e| both(e, u) as f64 / count(e) as f64)
                        .fold(0.0, f64::max);
                    if others.iter().any(|e| both(e, u) == count(e)) {
                        strict += 1.0;
                    }
                    for e in &others {
                        tol = tol.max(2.0 / count(e).min(count(u)) as f64);
                    }
                }
                let k = unders.len() as f64;
                ensure((l - loose / k).abs() <= tol, || format!("design {n}: Und_l {l} vs {}", loose / k))?;
                ensure((s - strict / k).abs() <= 1e-12, || format!("design {n}: Und_s {s} vs {}", strict / k))?;
            }
        }

        let ali = score_alignment(&d).unwrap();
        let want = exhaustive_alignment(&d);
        ensure((ali - want).abs() <= 1e-9, || format!("design {n}: Ali {ali} vs {want}"))?;

        let s = metrics::report::score_design(&d, &SpectralResidual, &fonts).map_err(|e| format!("design {n}: {e}"))?;
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        ensure(unit(s.val), || format!("design {n}: Val {}", s.val))?;
        ensure(s.uti.is_none_or(unit), || format!("design {n}: Uti {:?}", s.uti))?;
        ensure(unit(s.occ), || format!("design {n}: Occ {}", s.occ))?;
        ensure(s.rea.is_finite() && s.rea >= 0.0, || format!("design {n}: Rea {}", s.rea))?;
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 60.0, || format!("took {secs:.1}s"))?;
    Ok(format!("({scored} scored designs in {secs:.1}s)"))
}

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let backend = HeuristicComposer::default();
    let opts = ComposeOptions::default();
    let mut overlaps = Vec::new();
    for n in 0..200 {
        let canvas = Canvas::new(rng.gen_range(200..=1200), rng.gen_range(200..=1600));
        let count = rng.gen_range(2..=8);
        let (elements, plan) = loop {
            let (e, p) = random_elements(&mut rng, count, 300);
            if p.placement_order().any(|(r, _)| r != SemanticRole::Background) {
                break (e, p);
            }
        };
        let design = Design {
            id: format!("h{n}"),
            canvas,
            elements,
            plan,
            attributes: Default::default(),
        };
        let c = compose(&design, &backend, &opts).map_err(|e| format!("set {n}: {e}"))?;
        let d = &c.design;
        let violations = validate_design(d);
        ensure(violations.is_empty(), || format!("set {n}: {violations:?}"))?;
        for id in d.plan.layer(SemanticRole::Background) {
            ensure(d.attributes[id].bbox == canvas.bbox(), || format!("set {n}: background not full-bleed"))?;
        }
        let val = score_validity(d).unwrap();
        ensure(val == 1.0, || format!("set {n}: Val {val}"))?;
        overlaps.push(score_overlap(d).unwrap());
    }
    let mean = overlaps.iter().sum::<f64>() / overlaps.len() as f64;
    ensure(mean <= 0.15, || format!("mean Ove {mean:.4}"))?;
    Ok(format!("(200 sets, mean Ove {mean:.4})"))
}

fn criterion_9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let canvas = Canvas::new(1080, 1920);
    let (elements, _) = random_elements(&mut rng, 12, 900);
    let plan_once = || {
        let o = plan_layers_explained(&elements, &canvas, &PlannerMode::Heuristic, &HeuristicThresholds::default())
            .unwrap();
        (o.plan, serde_json::to_string(&o.decisions).unwrap())
    };
    let first = plan_once();
    for run in 1..1000 {
        ensure(plan_once() == first, || format!("run {run} differs"))?;
    }

    let sized = |n: usize| Design {
        id: format!("n{n}"),
        canvas,
        elements: (0..n).map(|i| Element::text(format!("t{i}"), "x")).collect(),
        plan: layered_design::LayerPlan::from_roles((0..n).map(|i| (format!("t{i}"), SemanticRole::Text))),
        attributes: Default::default(),
    };
    let (kept, dropped) = filter_by_element_count(vec![sized(25), sized(26)], MAX_ELEMENTS);
    ensure(kept.len() == 1 && kept[0].elements.len() == 25, || "25-element design dropped".into())?;
    ensure(dropped.len() == 1 && dropped[0].elements.len() == 26, || "26-element design kept".into())?;
    Ok("(1000 identical plans; 25 kept, 26 dropped)".into())
}

#[test]
fn acceptance_criteria() {
    let results: Vec<(u8, Outcome)> = vec![
        (1, criterion_1()),
        (2, criterion_2()),
        (3, criterion_3()),
        (4, criterion_4()),
        (6, criterion_6()),
        (7, criterion_7()),
        (8, criterion_8()),
        (9, criterion_9()),
    ];
    let mut failed = Vec::new();
    for (n, outcome) in &results {
        if *n == 6 {
            let line = "criterion 5: NOT RUN (reference corpus unavailable; criterion 6 stands in)\n";
            std::io::stderr().write_all(line.as_bytes()).unwrap();
        }
        report(*n, outcome);
        if outcome.is_err() {
            failed.push(*n);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
