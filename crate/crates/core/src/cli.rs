//! Command-line interface.
//!
//! Settings resolve as flags, then the `--config` TOML file, then
//! `LAYERED_DESIGN_*` environment variables, then defaults. API keys are
//! read only from the environment variable named by `api_key_env`.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::chat::{ChatClient, ChatConfig};
use crate::codec::{export_training_conversation, FontVocab, ImageSlot, Shuffle};
use crate::compose::{
    compose, compose_partial, fill_elements, resize_compose, sample_variants, Backend, ComposeOptions, Composition,
    HeuristicComposer, RemoteChatBackend, ReplayBackend,
};
use crate::dataset::{
    cache_states, filter_by_element_count, load_corpus, load_design, save_design, write_atomic, MAX_ELEMENTS,
};
use crate::metrics::{evaluate_corpus, SaliencyDir, SaliencyProvider, SpectralResidual};
use crate::model::{Canvas, Design, Element, SemanticRole};
use crate::planner::{plan_layers_explained, HeuristicThresholds, PlannerMode};
use crate::render::{render_state, FontStore, RenderOptions, SubstitutionLog};

/// Exit code for bad arguments or configuration.
pub const EXIT_USAGE: i32 = 2;
/// Exit code for failures while running a command.
pub const EXIT_FAILURE: i32 = 1;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    fn failure(message: impl ToString) -> Self {
        Self {
            code: EXIT_FAILURE,
            message: message.to_string(),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "layered-design", version, about = "Compose, render and score layered graphic designs")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for batch work.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Directory of .ttf/.otf files, matched to font families by file stem.
    #[arg(long, global = true)]
    pub fonts: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub backend: Option<BackendKind>,
    #[arg(long, global = true)]
    pub temperature: Option<f64>,
    #[arg(long = "top-p", global = true)]
    pub top_p: Option<f64>,
    /// TOML file with defaults for any of these settings.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Replay,
    Heuristic,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PlanModeArg {
    Heuristic,
    Remote,
    /// Remote labels with a per-element heuristic fallback.
    RemoteFallback,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Assign semantic layers to elements.
    Plan(PlanArgs),
    /// Compose a design layer by layer.
    Compose(ComposeArgs),
    /// Export training conversations for a corpus.
    Export(ExportArgs),
    /// Score designs with the layout metrics.
    Eval(EvalArgs),
    /// Render canvas states of a design.
    Render(RenderArgs),
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    /// Design JSON file, or a directory of element files
    /// (*.png / *.jpg images, *.txt texts).
    #[arg(long)]
    pub elements: PathBuf,
    #[arg(long, value_enum, default_value = "heuristic")]
    pub mode: PlanModeArg,
    /// Canvas size for a directory of elements.
    #[arg(long, value_parser = parse_size, default_value = "1080x1920")]
    pub canvas: (u32, u32),
    /// Root that image paths in the JSON are relative to (default: its directory).
    #[arg(long)]
    pub asset_root: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ComposeArgs {
    /// Input design JSON (elements and plan; attributes for given layers).
    #[arg(long)]
    pub design: PathBuf,
    #[arg(long)]
    pub asset_root: Option<PathBuf>,
    /// Recorded conversations (JSONL) for the replay backend.
    #[arg(long)]
    pub transcript: Option<PathBuf>,
    /// Keep layers 1..=k from the input and compose the rest.
    #[arg(long, value_parser = clap::value_parser!(u8).range(0..=5))]
    pub given_layers: Option<u8>,
    /// Number of sampled variants.
    #[arg(long)]
    pub variants: Option<usize>,
    /// Recompose on another canvas size; repeatable.
    #[arg(long = "canvas", value_parser = parse_size)]
    pub canvases: Vec<(u32, u32)>,
    /// Design JSON with new elements to add to the input design.
    #[arg(long)]
    pub fill: Option<PathBuf>,
    /// Parse-repair retries per layer.
    #[arg(long)]
    pub retries: Option<usize>,
    /// File with one allowed font family per line.
    #[arg(long)]
    pub font_vocab: Option<PathBuf>,
    /// Render glyphs without antialiasing.
    #[arg(long)]
    pub aliased: bool,
    /// Include wall-clock timings in trace.json.
    #[arg(long)]
    pub timings: bool,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub split: Option<String>,
    /// Keep plan order inside layers instead of shuffling.
    #[arg(long)]
    pub no_shuffle: bool,
    /// Canvas-state cache (default: `<out>/states`).
    #[arg(long)]
    pub cache: Option<PathBuf>,
    #[arg(long, default_value_t = MAX_ELEMENTS)]
    pub max_elements: usize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory of design JSON files (or corpus root with --split).
    #[arg(long)]
    pub designs: PathBuf,
    #[arg(long)]
    pub split: Option<String>,
    /// Saliency PNGs named `<design id>.png`; others use the built-in map.
    #[arg(long)]
    pub saliency: Option<PathBuf>,
    /// Print one row per design.
    #[arg(long)]
    pub per_design: bool,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub design: PathBuf,
    #[arg(long)]
    pub asset_root: Option<PathBuf>,
    /// Highest state to render.
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u8).range(1..=5))]
    pub level: u8,
    #[arg(long)]
    pub aliased: bool,
}

fn parse_size(s: &str) -> Result<(u32, u32), String> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected WIDTHxHEIGHT, got `{s}`"))?;
    let w: u32 = w.trim().parse().map_err(|_| format!("bad width in `{s}`"))?;
    let h: u32 = h.trim().parse().map_err(|_| format!("bad height in `{s}`"))?;
    if w == 0 || h == 0 {
        return Err("canvas sides must be at least 1px".into());
    }
    Ok((w, h))
}

/// `--config` file contents. Every key is optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub fonts: Option<PathBuf>,
    pub backend: Option<BackendKind>,
    pub temperature: Option<f64>,
    pub top_p: Option<f64>,
    pub retries: Option<usize>,
    pub font_vocab: Option<PathBuf>,
    #[serde(default)]
    pub remote: RemoteFileConfig,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemoteFileConfig {
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub api_key_env: Option<String>,
    pub timeout_secs: Option<u64>,
}

/// Fully resolved settings.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub backend: BackendKind,
    pub chat: ChatConfig,
    pub temperature: f64,
    pub top_p: f64,
    pub retries: usize,
    pub seed: u64,
    pub jobs: Option<usize>,
    pub fonts: Option<PathBuf>,
    pub font_vocab: Option<PathBuf>,
}

const ENV_PREFIX: &str = "LAYERED_DESIGN_";

fn env_var(name: &str) -> Option<String> {
    std::env::var(format!("{ENV_PREFIX}{name}")).ok().filter(|v| !v.is_empty())
}

fn env_parse<T: std::str::FromStr>(name: &str) -> CliResult<Option<T>> {
    env_var(name)
        .map(|v| {
            v.parse()
                .map_err(|_| CliError::usage(format!("{ENV_PREFIX}{name}: cannot parse `{v}`")))
        })
        .transpose()
}

impl RunConfig {
    pub fn resolve(common: &CommonArgs, retries_flag: Option<usize>, vocab_flag: Option<&Path>) -> CliResult<Self> {
        let file = match &common.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
                toml::from_str::<FileConfig>(&text)
                    .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?
            }
            None => FileConfig::default(),
        };
        let backend = match common.backend.or(file.backend) {
            Some(b) => b,
            None => match env_var("BACKEND") {
                Some(v) => BackendKind::from_str(&v, true)
                    .map_err(|_| CliError::usage(format!("{ENV_PREFIX}BACKEND: unknown backend `{v}`")))?,
                None => BackendKind::Heuristic,
            },
        };
        let defaults = ChatConfig::default();
        let chat = ChatConfig {
            endpoint: file.remote.endpoint.or_else(|| env_var("ENDPOINT")).unwrap_or(defaults.endpoint),
            model: file.remote.model.or_else(|| env_var("MODEL")).unwrap_or(defaults.model),
            api_key_env: file
                .remote
                .api_key_env
                .or_else(|| env_var("API_KEY_ENV"))
                .unwrap_or(defaults.api_key_env),
            timeout: file.remote.timeout_secs.map_or(defaults.timeout, Duration::from_secs),
            ..defaults
        };
        let defaults = ComposeOptions::default();
        let cfg = Self {
            backend,
            chat,
            temperature: common
                .temperature
                .or(file.temperature)
                .or(env_parse("TEMPERATURE")?)
                .unwrap_or(defaults.temperature),
            top_p: common.top_p.or(file.top_p).or(env_parse("TOP_P")?).unwrap_or(defaults.top_p),
            retries: retries_flag.or(file.retries).unwrap_or(defaults.retries),
            seed: common.seed.or(file.seed).or(env_parse("SEED")?).unwrap_or(0),
            jobs: common.jobs.or(file.jobs).or(env_parse("JOBS")?),
            fonts: common
                .fonts
                .clone()
                .or(file.fonts)
                .or_else(|| env_var("FONTS").map(PathBuf::from)),
            font_vocab: vocab_flag.map(Path::to_path_buf).or(file.font_vocab),
        };
        if !(0.0..=2.0).contains(&cfg.temperature) {
            return Err(CliError::usage("temperature must be within 0..=2"));
        }
        if !(cfg.top_p > 0.0 && cfg.top_p <= 1.0) {
            return Err(CliError::usage("top-p must be within (0, 1]"));
        }
        Ok(cfg)
    }

    fn font_store(&self) -> CliResult<FontStore> {
        match &self.fonts {
            Some(dir) => FontStore::from_dir(dir).map_err(|e| CliError::usage(format!("--fonts: {e}"))),
            None => Ok(FontStore::builtin()),
        }
    }

    fn vocab(&self) -> CliResult<FontVocab> {
        match &self.font_vocab {
            Some(p) => FontVocab::from_file(p).map_err(|e| CliError::usage(format!("{}: {e}", p.display()))),
            None => Ok(FontVocab::open()),
        }
    }

    fn chat_client(&self) -> CliResult<ChatClient> {
        ChatClient::from_env(self.chat.clone()).map_err(|e| CliError::usage(format!("remote backend: {e}")))
    }
}

/// Parses `args` and runs the command. Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

pub fn execute(cli: &Cli) -> CliResult<()> {
    let (retries, vocab) = match &cli.command {
        Command::Compose(a) => (a.retries, a.font_vocab.as_deref()),
        _ => (None, None),
    };
    let cfg = RunConfig::resolve(&cli.common, retries, vocab)?;
    let pool = {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(j) = cfg.jobs {
            if j == 0 {
                return Err(CliError::usage("--jobs must be at least 1"));
            }
            b = b.num_threads(j);
        }
        b.build().map_err(CliError::failure)?
    };
    let out = cli.common.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    pool.install(|| match &cli.command {
        Command::Plan(a) => cmd_plan(a, &cfg, &out),
        Command::Compose(a) => cmd_compose(a, &cfg, &out),
        Command::Export(a) => cmd_export(a, &cfg, &out),
        Command::Eval(a) => cmd_eval(a, &cfg, cli.common.out.as_deref()),
        Command::Render(a) => cmd_render(a, &cfg, &out),
    })
}

fn asset_root_for(json: &Path, flag: Option<&PathBuf>) -> PathBuf {
    flag.cloned()
        .unwrap_or_else(|| json.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf))
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).expect("value serializes");
    write_atomic(path, format!("{text}\n").as_bytes()).map_err(CliError::failure)
}

fn write_png(path: &Path, img: &image::RgbaImage) -> CliResult<()> {
    let mut buf = Vec::new();
    img.write_to(&mut std::io::Cursor::new(&mut buf), image::ImageFormat::Png)
        .map_err(CliError::failure)?;
    write_atomic(path, &buf).map_err(CliError::failure)
}

/// Elements from a directory: images and `.txt` texts, ids from file stems.
fn elements_from_dir(dir: &Path) -> CliResult<Vec<Element>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| CliError::usage(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    files.sort();
    let mut out = Vec::new();
    for p in files {
        let ext = p.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
        let id = p.file_stem().and_then(|s| s.to_str()).unwrap_or("element").to_string();
        match ext.as_str() {
            "png" | "jpg" | "jpeg" => {
                let img = image::open(&p).map_err(|e| CliError::failure(format!("{}: {e}", p.display())))?;
                out.push(Element::image(id, img.to_rgba8()).with_source(p.display().to_string()));
            }
            "txt" => {
                let text = std::fs::read_to_string(&p).map_err(|e| CliError::failure(format!("{}: {e}", p.display())))?;
                out.push(Element::text(id, text.trim_end_matches(['\r', '\n'])));
            }
            _ => {}
        }
    }
    if out.is_empty() {
        return Err(CliError::usage(format!("{}: no element files found", dir.display())));
    }
    Ok(out)
}

#[derive(Serialize)]
struct PlanFile<'a> {
    design_id: &'a str,
    layers: std::collections::BTreeMap<&'static str, Vec<String>>,
    decisions: &'a [crate::planner::RoleDecision],
}

fn cmd_plan(a: &PlanArgs, cfg: &RunConfig, out: &Path) -> CliResult<()> {
    let (id, elements, canvas) = if a.elements.is_dir() {
        let id = a
            .elements
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or("design")
            .to_string();
        (id, elements_from_dir(&a.elements)?, Canvas::new(a.canvas.0, a.canvas.1))
    } else {
        let root = asset_root_for(&a.elements, a.asset_root.as_ref());
        let d = load_design(&a.elements, &root).map_err(|e| CliError::usage(e.to_string()))?;
        (d.id, d.elements, d.canvas)
    };
    let mode = match a.mode {
        PlanModeArg::Heuristic => PlannerMode::Heuristic,
        PlanModeArg::Remote => PlannerMode::Remote(Arc::new(cfg.chat_client()?)),
        PlanModeArg::RemoteFallback => PlannerMode::RemoteWithFallback(Arc::new(cfg.chat_client()?)),
    };
    let outcome = plan_layers_explained(&elements, &canvas, &mode, &HeuristicThresholds::default())
        .map_err(CliError::failure)?;
    let layers = SemanticRole::ALL
        .iter()
        .map(|r| (r.key(), outcome.plan.layer(*r).to_vec()))
        .collect();
    write_json(
        &out.join("plan.json"),
        &PlanFile {
            design_id: &id,
            layers,
            decisions: &outcome.decisions,
        },
    )?;
    for d in &outcome.decisions {
        println!("{}\t{}", d.element_id, d.role.layer_name());
    }
    Ok(())
}

#[derive(Serialize)]
struct TraceFile<'a> {
    backend: &'a str,
    layers: Vec<serde_json::Value>,
    font_substitutions: Vec<String>,
    transcript: String,
}

/// Writes design.json, G1..G5 and trace.json for one composition.
fn write_composition(c: &Composition, dir: &Path, subs: &SubstitutionLog, timings: bool) -> CliResult<()> {
    save_design(&c.design, &dir.join("design.json"), dir).map_err(CliError::failure)?;
    for s in &c.trace.states[1..] {
        write_png(&dir.join(format!("G{}.png", s.level)), &s.image)?;
    }
    let layers = c
        .trace
        .layers
        .iter()
        .map(|l| {
            let mut v = serde_json::to_value(l).expect("trace serializes");
            if !timings {
                v.as_object_mut().expect("object").remove("elapsed_ms");
            }
            v
        })
        .collect();
    let font_substitutions: BTreeSet<String> = subs
        .lock()
        .unwrap()
        .iter()
        .map(|s| format!("{} -> {}", s.requested, s.used))
        .collect();
    write_json(
        &dir.join("trace.json"),
        &TraceFile {
            backend: &c.trace.backend,
            layers,
            font_substitutions: font_substitutions.into_iter().collect(),
            transcript: c.trace.conversation.to_transcript(),
        },
    )
}

fn make_backend(kind: BackendKind, a: &ComposeArgs, design: &Design, cfg: &RunConfig, fonts: &Arc<FontStore>, vocab: &FontVocab) -> CliResult<Box<dyn Backend>> {
    Ok(match kind {
        BackendKind::Replay => {
            let path = a
                .transcript
                .as_ref()
                .ok_or_else(|| CliError::usage("the replay backend needs --transcript"))?;
            Box::new(ReplayBackend::from_jsonl(path, Some(&design.id)).map_err(|e| CliError::usage(e.to_string()))?)
        }
        BackendKind::Heuristic => {
            let font = vocab
                .names()
                .and_then(|n| n.iter().next().cloned())
                .unwrap_or_else(|| fonts.fallback_name().to_string());
            Box::new(HeuristicComposer::new(font, fonts.clone()))
        }
        BackendKind::Remote => Box::new(RemoteChatBackend::new(cfg.chat_client()?)),
    })
}

fn cmd_compose(a: &ComposeArgs, cfg: &RunConfig, out: &Path) -> CliResult<()> {
    let modes = [a.given_layers.is_some(), a.variants.is_some(), !a.canvases.is_empty(), a.fill.is_some()];
    if modes.iter().filter(|m| **m).count() > 1 {
        return Err(CliError::usage(
            "--given-layers, --variants, --canvas and --fill cannot be combined",
        ));
    }
    let root = asset_root_for(&a.design, a.asset_root.as_ref());
    let design = load_design(&a.design, &root).map_err(|e| CliError::usage(e.to_string()))?;
    let fonts = Arc::new(cfg.font_store()?);
    let vocab = cfg.vocab()?;
    let subs: SubstitutionLog = Arc::new(Mutex::new(Vec::new()));
    let opts = ComposeOptions {
        temperature: cfg.temperature,
        top_p: cfg.top_p,
        retries: cfg.retries,
        seed: cfg.seed,
        vocab: vocab.clone(),
        render: RenderOptions {
            antialias: !a.aliased,
            background: None,
            substitutions: Some(subs.clone()),
        },
        fonts: fonts.clone(),
    };
    let backend = make_backend(cfg.backend, a, &design, cfg, &fonts, &vocab)?;
    let fail = |e: crate::compose::ComposeError| CliError::failure(e);

    if let Some(n) = a.variants {
        let all = sample_variants(&design, n, backend.as_ref(), &opts).map_err(fail)?;
        for (i, c) in all.iter().enumerate() {
            write_composition(c, &out.join(format!("variant-{i}")), &subs, a.timings)?;
        }
        println!("wrote {} variants to {}", all.len(), out.display());
        return Ok(());
    }
    if !a.canvases.is_empty() {
        for &(w, h) in &a.canvases {
            let c = resize_compose(&design, Canvas::new(w, h), backend.as_ref(), &opts).map_err(fail)?;
            write_composition(&c, &out.join(format!("canvas-{w}x{h}")), &subs, a.timings)?;
        }
        println!("wrote {} canvas sizes to {}", a.canvases.len(), out.display());
        return Ok(());
    }
    let c = if let Some(fill) = &a.fill {
        let extra_root = asset_root_for(fill, a.asset_root.as_ref());
        let extra = load_design(fill, &extra_root).map_err(|e| CliError::usage(e.to_string()))?;
        fill_elements(&design, extra.elements, &extra.plan, backend.as_ref(), &opts).map_err(fail)?
    } else if let Some(k) = a.given_layers {
        compose_partial(&design, k as usize, backend.as_ref(), &opts).map_err(fail)?
    } else {
        compose(&design, backend.as_ref(), &opts).map_err(fail)?
    };
    write_composition(&c, out, &subs, a.timings)?;
    println!("wrote {}", out.join("design.json").display());
    Ok(())
}

fn cmd_export(a: &ExportArgs, cfg: &RunConfig, out: &Path) -> CliResult<()> {
    let (designs, mut manifest) =
        load_corpus(&a.corpus, a.split.as_deref()).map_err(|e| CliError::usage(e.to_string()))?;
    if designs.is_empty() {
        return Err(CliError::usage(format!("{}: no designs found", a.corpus.display())));
    }
    let (kept, dropped) = filter_by_element_count(designs, a.max_elements);
    manifest.record_dropped(&dropped, &format!("more than {} elements", a.max_elements));
    let fonts = cfg.font_store()?;
    let cache_dir = a.cache.clone().unwrap_or_else(|| out.join("states"));
    let report = cache_states(&kept, &fonts, &cache_dir, &RenderOptions::default()).map_err(CliError::failure)?;
    let shuffle = if a.no_shuffle {
        Shuffle::Identity
    } else {
        Shuffle::Seeded(cfg.seed)
    };

    let mut lines = String::new();
    for d in &kept {
        let conv = export_training_conversation(d, shuffle).map_err(|e| CliError::failure(format!("{}: {e}", d.id)))?;
        let record = conv.to_record(&d.id, shuffle.seed(), |slot| match slot {
            ImageSlot::CanvasState { level } => report
                .index
                .state_path(&cache_dir, &d.id, *level)
                .map_or_else(String::new, |p| p.display().to_string()),
            ImageSlot::Element { element_id } => match d.element(element_id).map(|e| &e.content) {
                Some(crate::model::ElementContent::Image(img)) => img
                    .source
                    .as_ref()
                    .map_or_else(String::new, |s| a.corpus.join(s).display().to_string()),
                _ => String::new(),
            },
        });
        lines.push_str(&serde_json::to_string(&record).expect("record serializes"));
        lines.push('\n');
    }
    write_atomic(&out.join("conversations.jsonl"), lines.as_bytes()).map_err(CliError::failure)?;
    write_json(&out.join("manifest.json"), &manifest)?;
    println!(
        "exported {} conversations ({} dropped, {} states rendered, {} cached)",
        kept.len(),
        dropped.len(),
        report.rendered.len(),
        report.hits
    );
    Ok(())
}

fn cmd_eval(a: &EvalArgs, cfg: &RunConfig, out: Option<&Path>) -> CliResult<()> {
    let (designs, _) = load_corpus(&a.designs, a.split.as_deref()).map_err(|e| CliError::usage(e.to_string()))?;
    if designs.is_empty() {
        return Err(CliError::usage(format!("{}: no designs to evaluate", a.designs.display())));
    }
    let fonts = cfg.font_store()?;
    let provider: Box<dyn SaliencyProvider> = match &a.saliency {
        Some(dir) => Box::new(SaliencyDir { dir: dir.clone() }),
        None => Box::new(SpectralResidual),
    };
    let report = evaluate_corpus(&designs, provider.as_ref(), &fonts);
    print!("{}", report.to_table(a.per_design));
    for f in &report.failures {
        eprintln!("warning: {}: {}", f.design_id, f.error);
    }
    if let Some(dir) = out {
        write_atomic(&dir.join("report.json"), format!("{}\n", report.to_json()).as_bytes())
            .map_err(CliError::failure)?;
        write_atomic(&dir.join("report.csv"), report.to_csv().as_bytes()).map_err(CliError::failure)?;
    }
    if report.designs.is_empty() {
        return Err(CliError::failure("no design could be scored"));
    }
    Ok(())
}

fn cmd_render(a: &RenderArgs, cfg: &RunConfig, out: &Path) -> CliResult<()> {
    let root = asset_root_for(&a.design, a.asset_root.as_ref());
    let design = load_design(&a.design, &root).map_err(|e| CliError::usage(e.to_string()))?;
    let fonts = cfg.font_store()?;
    let opts = RenderOptions {
        antialias: !a.aliased,
        ..RenderOptions::default()
    };
    for level in 1..=a.level {
        let s = render_state(&design, level, &fonts, &opts).map_err(CliError::failure)?;
        write_png(&out.join(format!("G{level}.png")), &s.image)?;
    }
    println!("rendered G1..G{} to {}", a.level, out.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn common(args: &[&str]) -> CommonArgs {
        let mut v = vec!["layered-design"];
        v.extend_from_slice(args);
        v.extend_from_slice(&["render", "--design", "x.json"]);
        Cli::try_parse_from(v).unwrap().common
    }

    #[test]
    fn sizes_parse() {
        assert_eq!(parse_size("1080x1920"), Ok((1080, 1920)));
        assert!(parse_size("0x5").is_err());
        assert!(parse_size("big").is_err());
    }

    #[test]
    fn flags_beat_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(
            &path,
            "seed = 9\ntemperature = 0.2\nbackend = \"replay\"\n[remote]\nmodel = \"m\"\n",
        )
        .unwrap();
        let p = path.to_str().unwrap();
        let cfg = RunConfig::resolve(&common(&["--config", p, "--seed", "3"]), None, None).unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.temperature, 0.2);
        assert_eq!(cfg.top_p, 0.95);
        assert_eq!(cfg.backend, BackendKind::Replay);
        assert_eq!(cfg.chat.model, "m");
        std::fs::write(&path, "api_key = \"secret\"\n").unwrap();
        assert_eq!(RunConfig::resolve(&common(&["--config", p]), None, None).unwrap_err().code, EXIT_USAGE);
    }

    #[test]
    fn defaults_follow_inference_settings() {
        let cfg = RunConfig::resolve(&common(&[]), None, None).unwrap();
        assert_eq!((cfg.temperature, cfg.top_p, cfg.retries), (0.7, 0.95, 2));
        assert!(RunConfig::resolve(&common(&["--top-p", "0"]), None, None).is_err());
    }
}
