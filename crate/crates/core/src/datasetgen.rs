//! Seeded generator for the segmentation dataset (part image, instance mask,
//! annotations) and the translation dataset (unmanufacturable feature, its
//! manufacturable label).

use std::path::{Path, PathBuf};

use rand::distributions::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DfmError, Result};
use crate::evaluate;
use crate::geometry::{self, FrameSpec, PartDesign, PartEnd, UnitScale, WallKind, WallSpec};
use crate::parallel;
use crate::raster::{self, MaskStyle, PixelBox, Raster};
use crate::rules::{self, splitmix64, RulePolicy};

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_SEGMENTATION_EXAMPLES: usize = 5000;
pub const DEFAULT_TRANSLATION_EXAMPLES: usize = 4000;
pub const MAX_ATTEMPTS: usize = 1000;
const MAX_SUBSTREAMS: u64 = 16;
const MAX_VERIFY_RETRIES: usize = 200;

// Sampling ranges, in bottom-wall thicknesses.
pub const THIN_WIDTH: [f64; 2] = [0.2, 1.0];
pub const THICK_WIDTH: [f64; 2] = [1.2, 3.0];
pub const SIDE_WIDTH: [f64; 2] = [0.3, 1.6];
pub const HEIGHT: [f64; 2] = [2.5, 6.5];
/// Feature-frame walls must stay below its 6.1-unit top.
pub const FEATURE_HEIGHT: [f64; 2] = [2.5, 4.8];
/// Five treated walls leave room for at most one narrow thick wall.
pub const FIVE_WALL_THICK_WIDTH: [f64; 2] = [1.2, 1.6];
/// Smallest raw footprint gap between neighbouring walls.
pub const MIN_GAP: f64 = 0.8;
const SPAN_HALF: f64 = 4.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    #[default]
    Segmentation,
    Translation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub dataset: DatasetKind,
    pub master_seed: u64,
    pub n_examples: usize,
    pub walls_per_part: usize,
    pub mask_style: MaskStyle,
    pub manufacturable_fraction: f64,
    /// Multiplier range on the bottom thickness (segmentation only).
    pub scale_jitter: Option<[f64; 2]>,
    pub policy: RulePolicy,
    /// Translation datasets: one kind, or all three in rotation when `None`.
    pub wall_kind: Option<WallKind>,
    pub write_visualization: bool,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            dataset: DatasetKind::Segmentation,
            master_seed: 0,
            n_examples: DEFAULT_SEGMENTATION_EXAMPLES,
            walls_per_part: 3,
            mask_style: MaskStyle::Long,
            manufacturable_fraction: 0.0,
            scale_jitter: None,
            policy: RulePolicy::midpoint(),
            wall_kind: None,
            write_visualization: false,
        }
    }
}

impl GenConfig {
    pub fn translation(kind: Option<WallKind>) -> Self {
        GenConfig {
            dataset: DatasetKind::Translation,
            n_examples: DEFAULT_TRANSLATION_EXAMPLES,
            wall_kind: kind,
            ..GenConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DfmError::InvalidParameter(m));
        if self.n_examples == 0 {
            return bad("n_examples must be positive".into());
        }
        if self.walls_per_part != 3 && self.walls_per_part != 5 {
            return bad(format!("walls_per_part must be 3 or 5, got {}", self.walls_per_part));
        }
        if !(0.0..=1.0).contains(&self.manufacturable_fraction) {
            return bad(format!("manufacturable_fraction {} outside [0, 1]", self.manufacturable_fraction));
        }
        if let Some([lo, hi]) = self.scale_jitter {
            if !(0.5 <= lo && lo <= hi && hi <= 2.0) {
                return bad(format!("scale_jitter [{lo}, {hi}] must lie inside [0.5, 2.0]"));
            }
        }
        Ok(())
    }
}

/// Seed of example `index`, independent of generation order.
pub fn example_seed(master_seed: u64, index: usize) -> u64 {
    splitmix64(master_seed ^ splitmix64(index as u64))
}

fn uniform(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    let u: f64 = rng.sample(Open01);
    r[0] + (r[1] - r[0]) * u
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledDesign {
    pub design: PartDesign,
    /// Bottom-thickness multiplier; 1 for canonical designs.
    pub jitter: f64,
    pub manufacturable: Vec<bool>,
    /// Placement attempts used.
    pub attempts: usize,
}

/// Walls made manufacturable where `which` says so.
fn apply_rules(design: &PartDesign, which: &[bool], policy: &RulePolicy) -> Result<PartDesign> {
    let t = design.bottom_thickness;
    let walls = design
        .walls
        .iter()
        .zip(which)
        .enumerate()
        .map(|(i, (w, &m))| if m { rules::make_manufacturable(w, t, &policy.derive(i as u64)) } else { Ok(*w) })
        .collect::<Result<Vec<_>>>()?;
    Ok(PartDesign {
        walls,
        ..design.clone()
    })
}

/// Layout conditions that keep every wall separable: detection runs stay
/// apart, no expanded crop box reaches a neighbouring raw wall for either mask
/// style, treated walls keep clear of each other, and every crop fits the
/// feature frame.
fn layout_ok(raw: &PartDesign, full: &PartDesign) -> bool {
    if geometry::profile_polygon(raw).is_err() || geometry::profile_polygon(full).is_err() {
        return false;
    }
    let (Ok(re), Ok(fe), Ok((band_l, band_r))) =
        (geometry::wall_extents(raw), geometry::wall_extents(full), geometry::band_extent(full))
    else {
        return false;
    };
    let t = raw.bottom_thickness;
    let px = UnitScale::part().units_per_pixel();
    let margin = (crate::segmenter::EXPAND_MARGIN + 2) as f64 * px;
    let mut bounds = vec![band_l];
    for i in 0..re.len().saturating_sub(1) {
        let gap = re[i + 1].left - re[i].right;
        if gap < (0.5 * t + margin).max(2.0 * margin) || fe[i + 1].left - fe[i].right < 4.0 * px {
            return false;
        }
        bounds.push(0.5 * (re[i].right + re[i + 1].left));
    }
    bounds.push(band_r);
    // Normalized crops must fit the 6.6-unit frame with room for flare.
    let limit = (6.6 - 0.3) * t - 2.0 * margin;
    bounds.windows(2).all(|b| b[1] - b[0] <= limit)
}

/// One rejection-sampled design. Fails with `PlacementFailure` after
/// [`MAX_ATTEMPTS`] tries.
pub fn sample_design(rng: &mut ChaCha8Rng, config: &GenConfig) -> Result<SampledDesign> {
    config.validate()?;
    let n = config.walls_per_part;
    let px = UnitScale::part().units_per_pixel();
    let margin = (crate::segmenter::EXPAND_MARGIN + 2) as f64 * px;
    for attempt in 1..=MAX_ATTEMPTS {
        let j = config.scale_jitter.map_or(1.0, |r| if r[0] == r[1] { r[0] } else { uniform(rng, r) });
        // Span shrinks with thin bottoms so layouts stay unit-relative, and is
        // capped by the frame for thick ones.
        let s = SPAN_HALF * j.min(1.0);
        let h_max = HEIGHT[1].min(7.6 / j - 1.0);
        let heights: Vec<f64> = (0..n).map(|_| j * uniform(rng, [HEIGHT[0], h_max])).collect();
        let thick_range = if n == 5 { FIVE_WALL_THICK_WIDTH } else { THICK_WIDTH };
        let mut raw: Vec<WallSpec> = Vec::with_capacity(n);
        raw.push(WallSpec::side(PartEnd::Left, -s, j * uniform(rng, SIDE_WIDTH), heights[0]));
        for h in &heights[1..n - 1] {
            raw.push(if rng.gen_bool(0.5) {
                WallSpec::thin(0.0, j * uniform(rng, THIN_WIDTH), *h)
            } else {
                WallSpec::thick(0.0, j * uniform(rng, thick_range), *h)
            });
        }
        raw.push(WallSpec::side(PartEnd::Right, s, j * uniform(rng, SIDE_WIDTH), heights[n - 1]));
        let manufacturable: Vec<bool> = (0..n).map(|_| rng.gen_bool(config.manufacturable_fraction)).collect();
        let weights: Vec<f64> = (0..n - 1).map(|_| -(rng.sample::<f64, _>(Open01)).ln()).collect();

        let Ok(full) = raw
            .iter()
            .enumerate()
            .map(|(i, w)| rules::make_manufacturable(w, j, &config.policy.derive(i as u64)))
            .collect::<Result<Vec<_>>>()
        else {
            continue;
        };
        for (i, m) in manufacturable.iter().enumerate() {
            if *m {
                raw[i] = full[i];
            }
        }
        // Base footprint reach left and right of the center, fillets included.
        let reach = |w: &WallSpec| {
            let (_, _, lb, rb) = w.faces();
            let r = w.treatment.base_fillet_radius;
            (w.center_x - lb + r, rb + r - w.center_x)
        };
        let rr: Vec<(f64, f64)> = raw.iter().map(reach).collect();
        let fr: Vec<(f64, f64)> = full.iter().map(reach).collect();
        let gaps_min: Vec<f64> = (0..n - 1)
            .map(|k| {
                let pad = (fr[k].1 - rr[k].1) + (fr[k + 1].0 - rr[k + 1].0);
                (MIN_GAP * j).max(0.5 * j + margin).max(2.0 * margin).max(pad + 5.0 * px)
            })
            .collect();
        let left_inner = raw[0].center_x + rr[0].1;
        let right_inner = raw[n - 1].center_x - rr[n - 1].0;
        let interior: f64 = rr[1..n - 1].iter().map(|r| r.0 + r.1).sum();
        let slack = (right_inner - left_inner) - interior - gaps_min.iter().sum::<f64>();
        if slack < 0.0 {
            continue;
        }
        let wsum: f64 = weights.iter().sum();
        let mut x = left_inner;
        for k in 1..n - 1 {
            x += gaps_min[k - 1] + slack * weights[k - 1] / wsum;
            raw[k].center_x = x + rr[k].0;
            x = raw[k].center_x + rr[k].1;
        }
        let raw = PartDesign {
            bottom_thickness: j,
            bottom_span: [-s, s],
            walls: raw,
            frame: FrameSpec::part(),
        };
        let Ok(full) = apply_rules(&raw, &vec![true; n], &config.policy) else {
            continue;
        };
        if !layout_ok(&raw, &full) {
            continue;
        }
        if raster::rasterize_default(&raw).is_err() || raster::rasterize_default(&full).is_err() {
            continue;
        }
        return Ok(SampledDesign {
            design: raw,
            jitter: j,
            manufacturable,
            attempts: attempt,
        });
    }
    Err(DfmError::PlacementFailure { attempts: MAX_ATTEMPTS })
}

/// Rejection counts recorded while generating.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Rejections {
    /// Placement sub-streams abandoned after `MAX_ATTEMPTS` tries.
    pub placement_restarts: usize,
    /// Designs whose verifier findings disagreed with their manufacturable flags.
    pub verify_mismatch: usize,
    /// Designs where the verifier saw a different number of walls.
    pub wall_count_mismatch: usize,
}

impl Rejections {
    fn add(&mut self, o: &Rejections) {
        self.placement_restarts += o.placement_restarts;
        self.verify_mismatch += o.verify_mismatch;
        self.wall_count_mismatch += o.wall_count_mismatch;
    }
}

/// Sample with sub-stream restarts and the generation-time verifier check:
/// flagged walls must verify clean, the others must violate some rule.
pub fn sample_checked(seed: u64, config: &GenConfig) -> Result<(SampledDesign, Raster, Rejections)> {
    let mut rej = Rejections::default();
    let mut stream = 0u64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_VERIFY_RETRIES {
        let s = match sample_design(&mut rng, config) {
            Ok(s) => s,
            Err(DfmError::PlacementFailure { .. }) if stream + 1 < MAX_SUBSTREAMS => {
                rej.placement_restarts += 1;
                stream += 1;
                rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(stream);
                continue;
            }
            Err(e) => return Err(e),
        };
        let image = raster::rasterize(&s.design, &FrameSpec::part(), UnitScale::part())?;
        let violations = evaluate::verify(&image)?;
        let runs = {
            let band = crate::segmenter::find_bottom_band(&image)?;
            crate::segmenter::wall_runs(&image, &band).len()
        };
        if runs != s.design.walls.len() {
            rej.wall_count_mismatch += 1;
            continue;
        }
        let consistent = s.manufacturable.iter().enumerate().all(|(i, &m)| {
            let bad = violations.iter().any(|v| v.wall_index == i);
            m != bad
        });
        if !consistent {
            rej.verify_mismatch += 1;
            continue;
        }
        return Ok((s, image, rej));
    }
    Err(DfmError::PlacementFailure { attempts: MAX_VERIFY_RETRIES })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WallAnnotation {
    pub kind: WallKind,
    pub code: u8,
    #[serde(rename = "box")]
    pub bbox: PixelBox,
    pub manufacturable: bool,
    pub spec: WallSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub bottom_thickness: f64,
    pub walls: Vec<WallAnnotation>,
}

/// Image, instance mask and annotation of one design in the part frame.
pub fn gen_segmentation_example(design: &PartDesign, style: MaskStyle) -> Result<(Raster, Raster, Annotation)> {
    let image = raster::rasterize(design, &FrameSpec::part(), UnitScale::part())?;
    let mask = raster::render_mask_with(design, style, &FrameSpec::part(), UnitScale::part())?;
    let codes = raster::mask_codes(design)?;
    let policy = RulePolicy::midpoint();
    let walls = design
        .walls
        .iter()
        .zip(&codes)
        .map(|(w, &code)| {
            let bbox = mask.box_where(|v| v == code).ok_or_else(|| {
                DfmError::Geometry(format!("wall with code {code} has no pixels"))
            })?;
            Ok(WallAnnotation {
                kind: w.kind,
                code,
                bbox,
                manufacturable: rules::is_compliant(w, design.bottom_thickness, &policy),
                spec: *w,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((
        image,
        mask,
        Annotation {
            bottom_thickness: design.bottom_thickness,
            walls,
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranslationPair {
    #[serde(skip)]
    pub input: Raster,
    #[serde(skip)]
    pub label: Raster,
    pub kind: WallKind,
    pub manufacturable: bool,
    pub input_spec: WallSpec,
    pub label_spec: WallSpec,
}

fn feature_design(w: WallSpec) -> PartDesign {
    let half = 3.3;
    let span = match w.outer_end {
        Some(PartEnd::Left) => [w.center_x - w.top_width / 2.0, half],
        Some(PartEnd::Right) => [-half, w.center_x + w.top_width / 2.0],
        None => [-half, half],
    };
    PartDesign {
        bottom_thickness: 1.0,
        bottom_span: span,
        walls: vec![w],
        frame: FrameSpec::feature(),
    }
}

fn render_feature(w: WallSpec) -> Result<Raster> {
    raster::rasterize(&feature_design(w), &FrameSpec::feature(), UnitScale::feature())
}

fn sample_feature_wall(kind: WallKind, rng: &mut ChaCha8Rng) -> WallSpec {
    let h = uniform(rng, FEATURE_HEIGHT);
    match kind {
        WallKind::Thin => WallSpec::thin(uniform(rng, [-0.3, 0.3]), uniform(rng, THIN_WIDTH), h),
        WallKind::Thick => WallSpec::thick(uniform(rng, [-0.3, 0.3]), uniform(rng, THICK_WIDTH), h),
        WallKind::Side => {
            let w = uniform(rng, SIDE_WIDTH);
            let inset = uniform(rng, [0.4, 1.0]);
            if rng.gen_bool(0.5) {
                WallSpec::side(PartEnd::Left, -3.3 + inset, w, h)
            } else {
                WallSpec::side(PartEnd::Right, 3.3 - inset, w, h)
            }
        }
    }
}

/// Single-wall feature-frame pair; the label is the rule-oracle rewrite, or
/// the input itself when the input is already manufacturable.
pub fn gen_translation_pair(kind: WallKind, rng: &mut ChaCha8Rng, config: &GenConfig) -> Result<TranslationPair> {
    for _ in 0..MAX_VERIFY_RETRIES {
        let raw = sample_feature_wall(kind, rng);
        let policy = config.policy.derive(rng.gen());
        let manufacturable = rng.gen_bool(config.manufacturable_fraction);
        let label_spec = rules::make_manufacturable(&raw, 1.0, &policy)?;
        let input_spec = if manufacturable { label_spec } else { raw };
        let (Ok(input), Ok(label)) = (render_feature(input_spec), render_feature(label_spec)) else {
            continue;
        };
        let label_clean = evaluate::verify(&label)?.is_empty();
        let input_clean = evaluate::verify(&input)?.is_empty();
        if !label_clean || input_clean != manufacturable {
            continue;
        }
        return Ok(TranslationPair {
            input,
            label,
            kind,
            manufacturable,
            input_spec,
            label_spec,
        });
    }
    Err(DfmError::PlacementFailure { attempts: MAX_VERIFY_RETRIES })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ExampleDetail {
    Segmentation {
        jitter: f64,
        annotation: Annotation,
        design: PartDesign,
    },
    Translation(TranslationPair),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleRecord {
    pub index: usize,
    pub seed: u64,
    pub files: Vec<String>,
    pub detail: ExampleDetail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub config: GenConfig,
    pub rejections: Rejections,
    pub examples: Vec<ExampleRecord>,
}

/// Generated example, rasters included.
pub struct Example {
    pub record: ExampleRecord,
    pub rasters: Vec<(String, Raster)>,
    pub rejections: Rejections,
}

fn file_name(dir: &str, index: usize) -> String {
    format!("{dir}/{index:06}.png")
}

/// Example `index` of a dataset, generated from its own seed.
pub fn gen_example(config: &GenConfig, index: usize) -> Result<Example> {
    let seed = example_seed(config.master_seed, index);
    match config.dataset {
        DatasetKind::Segmentation => {
            let (s, _, rejections) = sample_checked(seed, config)?;
            let (image, mask, annotation) = gen_segmentation_example(&s.design, config.mask_style)?;
            let mut rasters = vec![(file_name("images", index), image), (file_name("masks", index), mask.clone())];
            if config.write_visualization {
                rasters.push((file_name("masks_vis", index), mask.visualization()));
            }
            Ok(Example {
                record: ExampleRecord {
                    index,
                    seed,
                    files: rasters.iter().map(|r| r.0.clone()).collect(),
                    detail: ExampleDetail::Segmentation {
                        jitter: s.jitter,
                        annotation,
                        design: s.design,
                    },
                },
                rasters,
                rejections,
            })
        }
        DatasetKind::Translation => {
            let kind = config.wall_kind.unwrap_or(WallKind::ALL[index % 3]);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pair = gen_translation_pair(kind, &mut rng, config)?;
            let rasters = vec![
                (file_name("input", index), pair.input.clone()),
                (file_name("label", index), pair.label.clone()),
            ];
            Ok(Example {
                record: ExampleRecord {
                    index,
                    seed,
                    files: rasters.iter().map(|r| r.0.clone()).collect(),
                    detail: ExampleDetail::Translation(pair),
                },
                rasters,
                rejections: Rejections::default(),
            })
        }
    }
}

/// Generate every example and write PNGs plus `manifest.json` into `dir`.
pub fn write_dataset(dir: impl AsRef<Path>, config: &GenConfig) -> Result<Manifest> {
    config.validate()?;
    let dir = dir.as_ref();
    let subdirs: &[&str] = match config.dataset {
        DatasetKind::Segmentation if config.write_visualization => &["images", "masks", "masks_vis"],
        DatasetKind::Segmentation => &["images", "masks"],
        DatasetKind::Translation => &["input", "label"],
    };
    for sub in subdirs {
        let p = dir.join(sub);
        std::fs::create_dir_all(&p).map_err(|e| DfmError::io(&p, e))?;
    }
    let results = parallel::map_indexed(config.n_examples, |i| -> Result<(ExampleRecord, Rejections)> {
        let ex = gen_example(config, i)?;
        for (name, r) in &ex.rasters {
            r.save_png(dir.join(name))?;
        }
        Ok((ex.record, ex.rejections))
    });
    let mut examples = Vec::with_capacity(config.n_examples);
    let mut rejections = Rejections::default();
    for r in results {
        let (rec, rej) = r?;
        rejections.add(&rej);
        examples.push(rec);
    }
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        config: config.clone(),
        rejections,
        examples,
    };
    let path: PathBuf = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(&path, json).map_err(|e| DfmError::io(&path, e))?;
    Ok(manifest)
}
