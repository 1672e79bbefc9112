//! `dfm`: dataset generation, segmentation, rule-based modification,
//! verification, evaluation and benchmarking of 2D housing profiles.
//!
//! Exit codes: 0 success, 1 domain error (including violations under
//! `--strict`), 2 usage or I/O error.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use dfm_core::datasetgen::{self, DatasetKind, ExampleDetail, GenConfig, Manifest};
use dfm_core::evaluate::{self, DetectionResult, GroundTruth, Prediction, Violation};
use dfm_core::geometry::WallKind;
use dfm_core::parallel;
use dfm_core::pipeline::{
    self, ExternalCommand, FeatureRequest, IdentityBackend, Magnification, ModificationBackend, PipelineOptions,
    PipelineReport, RuleOracle,
};
use dfm_core::raster::{MaskStyle, PixelBox, Raster};
use dfm_core::rules::RulePolicy;
use dfm_core::segmenter::{self, DetectedFeature};
use dfm_core::DfmError;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use config::{CliConfig, Format, PolicyKind};

const SCHEMA_VERSION: u32 = 1;
/// Per-design latencies of the learned pipeline, seconds.
const BASELINE_SEGMENTATION_S: f64 = 0.79;
const BASELINE_TRANSLATION_S: f64 = 0.026;

/// Bad flags or config contents; exits with 2.
#[derive(Debug)]
pub struct Usage(pub String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

#[derive(Parser)]
#[command(name = "dfm", version, about = "Design-for-manufacturability engine for 2D housing profiles")]
struct Cli {
    /// JSON file with default settings; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed for every stochastic step.
    #[arg(long, global = true, env = "DFM_SEED")]
    seed: Option<u64>,
    /// Worker threads for corpus-level work (0 = all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a segmentation or translation dataset.
    Gen(GenArgs),
    /// Detect and classify walls in a part image.
    Segment(SegmentArgs),
    /// Apply the rule oracle to one feature-frame raster.
    Modify(ModifyArgs),
    /// Segment, modify and reassemble a part image.
    Pipeline(PipelineArgs),
    /// Check a part image against the manufacturability rules.
    Verify(VerifyArgs),
    /// Detection AP of a generated dataset.
    Eval(EvalArgs),
    /// Per-design latency against the learned pipeline.
    Bench(BenchArgs),
    /// Side-by-side before/after sheet.
    Render(RenderArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum DatasetArg {
    #[value(alias = "seg")]
    Segmentation,
    #[value(alias = "trans")]
    Translation,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    kind: Option<DatasetArg>,
    #[arg(long)]
    n: Option<usize>,
    /// Walls per part, 3 or 5.
    #[arg(long)]
    walls: Option<usize>,
    #[arg(long)]
    mask_style: Option<MaskStyle>,
    /// Fraction of walls generated already manufacturable.
    #[arg(long)]
    manufacturable: Option<f64>,
    /// Bottom-thickness multiplier range, `LO,HI`.
    #[arg(long, value_parser = parse_range)]
    jitter: Option<[f64; 2]>,
    /// Translation datasets: a single wall kind.
    #[arg(long)]
    wall_kind: Option<WallKind>,
    /// Also write colour-coded masks.
    #[arg(long)]
    visualize: bool,
    #[arg(long, value_enum)]
    policy: Option<PolicyKind>,
}

#[derive(Args)]
struct SegmentArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    mask_style: Option<MaskStyle>,
    /// Duplicate-filter IOU threshold.
    #[arg(long)]
    iou: Option<f64>,
}

#[derive(Args)]
struct ModifyArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    kind: WallKind,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    policy: Option<PolicyKind>,
    #[arg(long)]
    strict: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Rule,
    Identity,
    External,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Where to write the modified part image.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "rule")]
    backend: BackendArg,
    /// Program for the external backend, run as `PROGRAM ARGS... IN KIND OUT`.
    #[arg(long)]
    command: Option<PathBuf>,
    #[arg(long = "arg", allow_hyphen_values = true)]
    args: Vec<String>,
    /// Write the JSON report here.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Write a before/after sheet here.
    #[arg(long)]
    sheet: Option<PathBuf>,
    #[arg(long)]
    mask_style: Option<MaskStyle>,
    #[arg(long, value_enum)]
    magnification: Option<MagnificationArg>,
    /// Modify features concurrently.
    #[arg(long)]
    parallel_features: bool,
    #[arg(long, value_enum)]
    policy: Option<PolicyKind>,
    /// Exit 1 when the output still has violations.
    #[arg(long)]
    strict: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum MagnificationArg {
    Normalized,
    Canonical,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Exit 1 when any violation is found.
    #[arg(long)]
    strict: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Directory written by `gen`.
    #[arg(long)]
    dataset: PathBuf,
    /// Shift each predicted box edge by up to this many pixels (seeded).
    #[arg(long)]
    jitter_px: Option<i32>,
    /// Also run the rule-oracle pipeline and count verifier-clean outputs.
    #[arg(long)]
    pipeline: bool,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 50)]
    n: usize,
    #[arg(long, default_value_t = 3)]
    walls: usize,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Second image; the rule-oracle pipeline output is used when absent.
    #[arg(long)]
    after: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    policy: Option<PolicyKind>,
}

fn parse_range(s: &str) -> Result<[f64; 2], String> {
    let parts: Vec<&str> = s.split(',').collect();
    let [lo, hi] = parts.as_slice() else {
        return Err(format!("expected LO,HI, got {s:?}"));
    };
    let num = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("{v:?}: {e}"));
    Ok([num(lo)?, num(hi)?])
}

/// Flags and config merged.
struct Ctx {
    file: CliConfig,
    seed: Option<u64>,
    threads: usize,
    format: Format,
}

impl Ctx {
    fn seed(&self, what: &str) -> anyhow::Result<u64> {
        self.seed
            .ok_or_else(|| Usage(format!("{what} needs a seed: pass --seed, set DFM_SEED or add \"seed\" to the config")).into())
    }

    fn policy(&self, flag: Option<PolicyKind>) -> anyhow::Result<RulePolicy> {
        let mut p = match flag.or(self.file.policy).unwrap_or_default() {
            PolicyKind::Midpoint => RulePolicy::midpoint(),
            PolicyKind::Seeded => RulePolicy::seeded(self.seed("the seeded policy")?),
        };
        if let Some(b) = self.file.bounds {
            p.bounds = b;
        }
        Ok(p)
    }

    fn pipeline_options(&self) -> PipelineOptions {
        self.file.pipeline.unwrap_or_default()
    }

    fn emit<T: Serialize>(&self, value: &T, text: impl FnOnce() -> String) -> anyhow::Result<()> {
        match self.format {
            Format::Json => println!("{}", serde_json::to_string_pretty(value)?),
            Format::Text => println!("{}", text()),
        }
        Ok(())
    }
}

fn load(path: &Path) -> anyhow::Result<Raster> {
    Ok(Raster::load_png(path)?)
}

fn violation_line(v: &Violation) -> String {
    format!(
        "  wall {}: {:?} measured {:.3}, allowed [{:.3}, {:.3}]",
        v.wall_index, v.rule_id, v.measured, v.allowed[0], v.allowed[1]
    )
}

fn violation_lines(vs: &[Violation]) -> String {
    vs.iter().map(violation_line).collect::<Vec<_>>().join("\n")
}

fn gen(ctx: &Ctx, a: &GenArgs) -> anyhow::Result<ExitCode> {
    let mut cfg = match (a.kind, &ctx.file.gen) {
        (_, Some(c)) => c.clone(),
        (Some(DatasetArg::Translation), None) => GenConfig::translation(None),
        _ => GenConfig::default(),
    };
    match a.kind {
        Some(DatasetArg::Translation) if cfg.dataset != DatasetKind::Translation => {
            cfg = GenConfig { n_examples: cfg.n_examples, ..GenConfig::translation(cfg.wall_kind) }
        }
        Some(DatasetArg::Segmentation) => cfg.dataset = DatasetKind::Segmentation,
        _ => {}
    }
    cfg.master_seed = ctx.seed("gen")?;
    if let Some(n) = a.n {
        cfg.n_examples = n;
    }
    if let Some(w) = a.walls {
        cfg.walls_per_part = w;
    }
    if let Some(m) = a.mask_style {
        cfg.mask_style = m;
    }
    if let Some(f) = a.manufacturable {
        cfg.manufacturable_fraction = f;
    }
    if a.jitter.is_some() {
        cfg.scale_jitter = a.jitter;
    }
    if a.wall_kind.is_some() {
        cfg.wall_kind = a.wall_kind;
    }
    cfg.write_visualization |= a.visualize;
    if a.policy.is_some() || ctx.file.policy.is_some() || ctx.file.bounds.is_some() {
        cfg.policy = ctx.policy(a.policy)?;
    }
    if let Err(e) = cfg.validate() {
        return Err(Usage(e.to_string()).into());
    }
    let manifest = parallel::with_threads(ctx.threads, || datasetgen::write_dataset(&a.out, &cfg))?;
    #[derive(Serialize)]
    struct Out<'a> {
        schema_version: u32,
        out: &'a Path,
        examples: usize,
        rejections: datasetgen::Rejections,
    }
    let out = Out {
        schema_version: SCHEMA_VERSION,
        out: &a.out,
        examples: manifest.examples.len(),
        rejections: manifest.rejections,
    };
    ctx.emit(&out, || format!("wrote {} examples to {}", out.examples, a.out.display()))?;
    Ok(ExitCode::SUCCESS)
}

fn detect(image: &Raster, style: MaskStyle, iou: f64) -> anyhow::Result<Vec<DetectedFeature>> {
    let mut d = segmenter::filter_duplicates(&segmenter::detect_walls(image, style)?, iou);
    d.sort_by_key(|f| (f.bbox.x0, f.bbox.x1));
    Ok(d)
}

fn segment(ctx: &Ctx, a: &SegmentArgs) -> anyhow::Result<ExitCode> {
    let opts = ctx.pipeline_options();
    let image = load(&a.input)?;
    let features = detect(&image, a.mask_style.unwrap_or(opts.mask_style), a.iou.unwrap_or(opts.iou_threshold))?;
    #[derive(Serialize)]
    struct Out<'a> {
        schema_version: u32,
        features: &'a [DetectedFeature],
    }
    ctx.emit(&Out { schema_version: SCHEMA_VERSION, features: &features }, || {
        let mut s = format!("{} walls", features.len());
        for f in &features {
            let b = f.bbox;
            s += &format!("\n  {:<5} box [{}, {}) x [{}, {}) score {:.3}", f.kind.name(), b.x0, b.x1, b.y0, b.y1, f.score);
        }
        s
    })?;
    Ok(ExitCode::SUCCESS)
}

fn modify(ctx: &Ctx, a: &ModifyArgs) -> anyhow::Result<ExitCode> {
    let feature = load(&a.input)?;
    let policy = ctx.policy(a.policy)?;
    let request = FeatureRequest::standalone(&feature, a.kind, &policy)?;
    let out = RuleOracle.modify(&request)?;
    out.save_png(&a.out)?;
    let before = evaluate::verify(&feature)?;
    let after = evaluate::verify(&out)?;
    #[derive(Serialize)]
    struct Out<'a> {
        schema_version: u32,
        kind: WallKind,
        unchanged: bool,
        violations_before: &'a [Violation],
        violations_after: &'a [Violation],
    }
    let report = Out {
        schema_version: SCHEMA_VERSION,
        kind: a.kind,
        unchanged: out == feature,
        violations_before: &before,
        violations_after: &after,
    };
    ctx.emit(&report, || {
        format!("{} violations before, {} after; wrote {}", before.len(), after.len(), a.out.display())
    })?;
    Ok(strict_code(a.strict, &after))
}

fn strict_code(strict: bool, violations: &[Violation]) -> ExitCode {
    if strict && !violations.is_empty() {
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    }
}

fn run_pipeline(image: &Raster, backend: &dyn ModificationBackend, policy: &RulePolicy, opts: &PipelineOptions) -> anyhow::Result<(Raster, PipelineReport)> {
    let (out, mut report) = pipeline::run_with(image, backend, policy, opts)?;
    // Timing would make reports differ between identical runs.
    report.elapsed_ms = None;
    Ok((out, report))
}

fn pipeline_cmd(ctx: &Ctx, a: &PipelineArgs) -> anyhow::Result<ExitCode> {
    let image = load(&a.input)?;
    let policy = ctx.policy(a.policy)?;
    let mut opts = ctx.pipeline_options();
    if let Some(m) = a.mask_style {
        opts.mask_style = m;
    }
    match a.magnification {
        Some(MagnificationArg::Normalized) => opts.magnification = Magnification::Normalized,
        Some(MagnificationArg::Canonical) => opts.magnification = Magnification::Canonical,
        None => {}
    }
    opts.parallel |= a.parallel_features;
    let external;
    let backend: &dyn ModificationBackend = match a.backend {
        BackendArg::Rule => &RuleOracle,
        BackendArg::Identity => &IdentityBackend,
        BackendArg::External => {
            let Some(program) = a.command.clone() else {
                return Err(Usage("--backend external needs --command".into()).into());
            };
            external = ExternalCommand { program, args: a.args.clone() };
            &external
        }
    };
    let (out, report) = parallel::with_threads(ctx.threads, || run_pipeline(&image, backend, &policy, &opts))?;
    if let Some(p) = &a.out {
        out.save_png(p)?;
    }
    if let Some(p) = &a.sheet {
        pipeline::write_sheet(&image, &out, p)?;
    }
    if let Some(p) = &a.report {
        fs::write(p, serde_json::to_string_pretty(&report)?).with_context(|| format!("writing {}", p.display()))?;
    }
    ctx.emit(&report, || {
        let mut s = format!(
            "{} walls via {} backend, {} in output, {} violations",
            report.wall_count,
            report.backend,
            report.output_wall_count,
            report.violations.len()
        );
        for f in &report.features {
            s += &format!("\n  {} {:<5} {}", f.index, f.kind.name(), if f.unchanged { "unchanged" } else { "modified" });
        }
        if !report.violations.is_empty() {
            s += "\n";
            s += &violation_lines(&report.violations);
        }
        s
    })?;
    Ok(strict_code(a.strict, &report.violations))
}

fn verify(ctx: &Ctx, a: &VerifyArgs) -> anyhow::Result<ExitCode> {
    let image = load(&a.input)?;
    let walls = evaluate::verify_walls(&image)?;
    let violations: Vec<Violation> = walls.iter().flat_map(|(_, v)| v.iter().copied()).collect();
    #[derive(Serialize)]
    struct Out<'a> {
        schema_version: u32,
        walls: usize,
        clean: bool,
        violations: &'a [Violation],
    }
    let out = Out {
        schema_version: SCHEMA_VERSION,
        walls: walls.len(),
        clean: violations.is_empty(),
        violations: &violations,
    };
    ctx.emit(&out, || {
        if violations.is_empty() {
            format!("{} walls, no violations", walls.len())
        } else {
            format!("{} walls, {} violations\n{}", walls.len(), violations.len(), violation_lines(&violations))
        }
    })?;
    Ok(strict_code(a.strict, &violations))
}

fn jitter_box(b: PixelBox, px: i32, rng: &mut ChaCha8Rng) -> PixelBox {
    let mut d = || rng.gen_range(-px..=px);
    let (x0, y0) = (b.x0 + d(), b.y0 + d());
    let (x1, y1) = (b.x1 + d(), b.y1 + d());
    PixelBox::new(x0.min(x1 - 1), y0.min(y1 - 1), x1.max(x0 + 1), y1.max(y0 + 1))
}

fn eval(ctx: &Ctx, a: &EvalArgs) -> anyhow::Result<ExitCode> {
    let path = a.dataset.join("manifest.json");
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let manifest: Manifest = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if manifest.config.dataset != DatasetKind::Segmentation {
        bail!(Usage("eval needs a segmentation dataset".into()));
    }
    let seed = match a.jitter_px {
        Some(_) => Some(ctx.seed("box jitter")?),
        None => None,
    };
    let opts = ctx.pipeline_options();
    let policy = ctx.policy(None)?;
    struct One {
        result: DetectionResult,
        kind_agree: usize,
        clean: Option<bool>,
    }
    let per = |i: usize| -> anyhow::Result<One> {
        let rec = &manifest.examples[i];
        let ExampleDetail::Segmentation { annotation, .. } = &rec.detail else {
            bail!("example {} is not a segmentation record", rec.index);
        };
        let image = load(&a.dataset.join(&rec.files[0]))?;
        let found = detect(&image, manifest.config.mask_style, opts.iou_threshold)?;
        let kind_agree = found.len() == annotation.walls.len()
            && found.iter().zip(&annotation.walls).all(|(f, w)| f.kind == w.kind);
        let mut rng = ChaCha8Rng::seed_from_u64(seed.map_or(0, |s| datasetgen::example_seed(s, rec.index)));
        let predictions = found
            .iter()
            .map(|f| Prediction {
                bbox: a.jitter_px.map_or(f.bbox, |px| jitter_box(f.bbox, px, &mut rng)),
                kind: f.kind,
                score: f.score,
            })
            .collect();
        let ground_truth = annotation.walls.iter().map(|w| GroundTruth { bbox: w.bbox, kind: w.kind }).collect();
        let clean = if a.pipeline {
            Some(run_pipeline(&image, &RuleOracle, &policy, &opts)?.1.is_clean())
        } else {
            None
        };
        Ok(One {
            result: DetectionResult { predictions, ground_truth },
            kind_agree: usize::from(kind_agree),
            clean,
        })
    };
    let all = parallel::with_threads(ctx.threads, || parallel::map_indexed(manifest.examples.len(), per))
        .into_iter()
        .collect::<anyhow::Result<Vec<_>>>()?;
    let results: Vec<DetectionResult> = all.iter().map(|o| o.result.clone()).collect();
    let table = evaluate::ap_table(&results)?;
    #[derive(Serialize)]
    struct Out {
        schema_version: u32,
        designs: usize,
        walls: usize,
        detected: usize,
        designs_kind_agree: usize,
        ap: evaluate::ApTable,
        #[serde(skip_serializing_if = "Option::is_none")]
        pipeline_clean: Option<usize>,
    }
    let out = Out {
        schema_version: SCHEMA_VERSION,
        designs: all.len(),
        walls: results.iter().map(|r| r.ground_truth.len()).sum(),
        detected: results.iter().map(|r| r.predictions.len()).sum(),
        designs_kind_agree: all.iter().map(|o| o.kind_agree).sum(),
        ap: table,
        pipeline_clean: a.pipeline.then(|| all.iter().filter(|o| o.clean == Some(true)).count()),
    };
    ctx.emit(&out, || {
        let mut s = format!(
            "{} designs, {}/{} walls detected, kinds agree on {} designs\n{}",
            out.designs, out.detected, out.walls, out.designs_kind_agree, out.ap
        );
        if let Some(c) = out.pipeline_clean {
            s += &format!("\npipeline output verifier-clean on {c}/{} designs", out.designs);
        }
        s
    })?;
    Ok(ExitCode::SUCCESS)
}

fn bench(ctx: &Ctx, a: &BenchArgs) -> anyhow::Result<ExitCode> {
    let cfg = GenConfig {
        master_seed: ctx.seed("bench")?,
        n_examples: a.n,
        walls_per_part: a.walls,
        ..GenConfig::default()
    };
    if let Err(e) = cfg.validate() {
        return Err(Usage(e.to_string()).into());
    }
    let images = parallel::with_threads(ctx.threads, || {
        parallel::map_indexed(a.n, |i| datasetgen::sample_checked(datasetgen::example_seed(cfg.master_seed, i), &cfg).map(|s| s.1))
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;
    let opts = ctx.pipeline_options();
    let policy = ctx.policy(None)?;
    let n = a.n as f64;

    let t = Instant::now();
    for img in &images {
        detect(img, opts.mask_style, opts.iou_threshold)?;
    }
    let segmentation = t.elapsed().as_secs_f64() / n;
    let t = Instant::now();
    let mut clean = 0;
    for img in &images {
        clean += usize::from(run_pipeline(img, &RuleOracle, &policy, &opts)?.1.is_clean());
    }
    let end_to_end = t.elapsed().as_secs_f64() / n;
    let modification = (end_to_end - segmentation).max(0.0);
    let t = Instant::now();
    let threaded = parallel::with_threads(ctx.threads, || {
        parallel::map_indexed(images.len(), |i| run_pipeline(&images[i], &RuleOracle, &policy, &opts).map(|r| r.1.is_clean()))
    });
    let parallel_wall = t.elapsed().as_secs_f64() / n;
    for r in threaded {
        r?;
    }

    #[derive(Serialize)]
    struct Row {
        stage: &'static str,
        seconds_per_design: f64,
        baseline_seconds: f64,
        speedup: f64,
    }
    let row = |stage, s: f64, base: f64| Row { stage, seconds_per_design: s, baseline_seconds: base, speedup: base / s.max(1e-12) };
    let rows = vec![
        row("segmentation", segmentation, BASELINE_SEGMENTATION_S),
        row("modification", modification, BASELINE_TRANSLATION_S),
        row("end-to-end", end_to_end, BASELINE_SEGMENTATION_S + BASELINE_TRANSLATION_S),
    ];
    #[derive(Serialize)]
    struct Out {
        schema_version: u32,
        designs: usize,
        walls_per_part: usize,
        verifier_clean: usize,
        parallel_feature: bool,
        threads: usize,
        threaded_seconds_per_design: f64,
        rows: Vec<Row>,
    }
    let out = Out {
        schema_version: SCHEMA_VERSION,
        designs: a.n,
        walls_per_part: a.walls,
        verifier_clean: clean,
        parallel_feature: parallel::is_parallel(),
        threads: ctx.threads,
        threaded_seconds_per_design: parallel_wall,
        rows,
    };
    ctx.emit(&out, || {
        let mut s = format!("{} designs, {} walls each, single-threaded\n", out.designs, out.walls_per_part);
        s += &format!("{:<14} {:>14} {:>14} {:>10}\n", "stage", "s/design", "baseline s", "speedup");
        for r in &out.rows {
            s += &format!("{:<14} {:>14.5} {:>14.3} {:>9.1}x\n", r.stage, r.seconds_per_design, r.baseline_seconds, r.speedup);
        }
        s += &format!(
            "threaded end-to-end: {:.5} s/design; verifier-clean outputs {}/{}",
            out.threaded_seconds_per_design, out.verifier_clean, out.designs
        );
        s
    })?;
    Ok(ExitCode::SUCCESS)
}

fn render(ctx: &Ctx, a: &RenderArgs) -> anyhow::Result<ExitCode> {
    let before = load(&a.input)?;
    let after = match &a.after {
        Some(p) => load(p)?,
        None => run_pipeline(&before, &RuleOracle, &ctx.policy(a.policy)?, &ctx.pipeline_options())?.0,
    };
    pipeline::write_sheet(&before, &after, &a.out)?;
    #[derive(Serialize)]
    struct Out<'a> {
        schema_version: u32,
        out: &'a Path,
        differing_pixels: usize,
    }
    let out = Out { schema_version: SCHEMA_VERSION, out: &a.out, differing_pixels: before.diff_count(&after) };
    ctx.emit(&out, || format!("wrote {} ({} pixels differ)", a.out.display(), out.differing_pixels))?;
    Ok(ExitCode::SUCCESS)
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    let file = match &cli.config {
        Some(p) => CliConfig::load(p)?,
        None => CliConfig::default(),
    };
    let ctx = Ctx {
        seed: cli.seed.or(file.seed),
        threads: cli.threads.or(file.threads).unwrap_or(0),
        format: cli.format.or(file.format).unwrap_or_default(),
        file,
    };
    match &cli.command {
        Command::Gen(a) => gen(&ctx, a),
        Command::Segment(a) => segment(&ctx, a),
        Command::Modify(a) => modify(&ctx, a),
        Command::Pipeline(a) => pipeline_cmd(&ctx, a),
        Command::Verify(a) => verify(&ctx, a),
        Command::Eval(a) => eval(&ctx, a),
        Command::Bench(a) => bench(&ctx, a),
        Command::Render(a) => render(&ctx, a),
    }
}

/// 2 for usage and I/O failures, 1 for everything the engine rejects.
fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.is::<Usage>() || cause.is::<std::io::Error>() || cause.is::<serde_json::Error>() {
            return 2;
        }
        if let Some(d) = cause.downcast_ref::<DfmError>() {
            return match d {
                DfmError::Io { .. } | DfmError::Image { .. } | DfmError::Json(_) => 2,
                _ => 1,
            };
        }
    }
    2
}

/// The error chain, skipping causes already spelled out by their parent.
fn message(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out += ": ";
            }
            out += &text;
        }
    }
    out
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", message(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
