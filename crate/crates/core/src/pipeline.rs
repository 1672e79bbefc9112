//! Segment, crop, modify, paste. Backends work on single-feature rasters in
//! the feature frame, so a learned model can replace the rule oracle.

use std::path::PathBuf;
use std::process::Command;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{DfmError, Result};
use crate::evaluate::{self, Violation};
use crate::geometry::{self, FrameSpec, PartDesign, PartEnd, UnitScale, WallKind, WallSpec};
use crate::parallel;
use crate::raster::{self, CropTransform, MaskStyle, PixelBox, Raster, SIZE};
use crate::rules::{self, RulePolicy};
use crate::segmenter::{self, BottomBand, DetectedFeature, WallRun};

pub const SCHEMA_VERSION: u32 = 1;

/// One feature handed to a backend.
#[derive(Debug, Clone, Copy)]
pub struct FeatureRequest<'a> {
    pub index: usize,
    pub feature: &'a Raster,
    pub kind: WallKind,
    /// Feature-frame pixels covered by source content; the rest is padding.
    pub content: PixelBox,
    /// Bottom-wall thickness of the source part in feature-frame pixels.
    pub scale: UnitScale,
    pub policy: &'a RulePolicy,
    /// The wall verified clean in the source image.
    pub source_clean: bool,
    /// Where the feature came from in the part image.
    pub transform: CropTransform,
}

impl<'a> FeatureRequest<'a> {
    /// Request for a feature raster with no source part: the whole frame is
    /// content and the scale comes from the feature's own bottom band.
    pub fn standalone(feature: &'a Raster, kind: WallKind, policy: &'a RulePolicy) -> Result<Self> {
        let full = PixelBox::new(0, 0, SIZE as i32, SIZE as i32);
        Ok(FeatureRequest {
            index: 0,
            feature,
            kind,
            content: full,
            scale: segmenter::estimate_unit_scale(feature)?,
            policy,
            source_clean: false,
            transform: CropTransform {
                source_box: full,
                scale_factor: 1.0,
                dest_offset: [0.0, 0.0],
            },
        })
    }
}

pub trait ModificationBackend: Sync {
    fn name(&self) -> &str;
    /// A binary 256×256 raster in the feature frame.
    fn modify(&self, request: &FeatureRequest<'_>) -> Result<Raster>;
}

/// `fit_wall_spec` → `make_manufacturable` → rasterize. Features that
/// already verify clean are returned unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct RuleOracle;

#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityBackend;

/// Runs `program args... <input.png> <kind> <output.png>` per feature.
#[derive(Debug, Clone)]
pub struct ExternalCommand {
    pub program: PathBuf,
    pub args: Vec<String>,
}

impl ModificationBackend for IdentityBackend {
    fn name(&self) -> &str {
        "identity"
    }

    fn modify(&self, request: &FeatureRequest<'_>) -> Result<Raster> {
        Ok(request.feature.clone())
    }
}

impl ModificationBackend for ExternalCommand {
    fn name(&self) -> &str {
        "external"
    }

    fn modify(&self, request: &FeatureRequest<'_>) -> Result<Raster> {
        let dir = tempfile::tempdir().map_err(|e| DfmError::io(std::env::temp_dir(), e))?;
        let input = dir.path().join("input.png");
        let output = dir.path().join("output.png");
        request.feature.save_png(&input)?;
        let status = Command::new(&self.program)
            .args(&self.args)
            .arg(&input)
            .arg(request.kind.name())
            .arg(&output)
            .status()
            .map_err(|e| DfmError::io(&self.program, e))?;
        if !status.success() {
            return Err(DfmError::Backend(format!("{} exited with {status}", self.program.display())));
        }
        let out = Raster::load_png(&output)?;
        let pixels = out.pixels().iter().map(|&p| if p >= 128 { raster::FOREGROUND } else { 0 }).collect();
        Raster::from_pixels(pixels)
    }
}

impl ModificationBackend for RuleOracle {
    fn name(&self) -> &str {
        "rule"
    }

    fn modify(&self, request: &FeatureRequest<'_>) -> Result<Raster> {
        let feature = request.feature;
        if request.source_clean || evaluate::verify(feature)?.is_empty() {
            return Ok(feature.clone());
        }
        let scale = request.scale;
        let band = segmenter::find_bottom_band(feature)?;
        let spec = fit_wall_spec(feature, request.kind, scale)?;
        let spec = rules::make_manufacturable(&spec, 1.0, request.policy)?;
        let span = feature_span(&spec, &band, &request.content, scale);
        let part = render_part(&spec, span, &band, scale, &request.transform)?;
        Ok(raster::resample_to_feature(&part, &request.transform, PixelBox::new(0, 0, SIZE as i32, SIZE as i32)))
    }
}

fn col_x(col: f64, upp: f64) -> f64 {
    (col - 0.5 * SIZE as f64) * upp
}

/// Median of per-row outer spans `(first, last_exclusive)` over the middle rows.
fn middle_spans(feature: &Raster, run: &WallRun, band: &BottomBand) -> Vec<(f64, f64)> {
    segmenter::middle_rows(run, band)
        .filter_map(|r| run.row_span(feature, r))
        .map(|(a, b)| (a as f64, (b + 1) as f64))
        .collect()
}

/// Recover a sharp wall from a feature raster. Side walls keep the side of
/// the band they sit on.
pub fn fit_wall_spec(feature: &Raster, kind: WallKind, scale: UnitScale) -> Result<WallSpec> {
    let band = segmenter::find_bottom_band(feature).map_err(|e| match e {
        DfmError::EmptyImage => DfmError::NoWallFound,
        other => other,
    })?;
    let runs = segmenter::wall_runs(feature, &band);
    let run = match runs.as_slice() {
        [] => return Err(DfmError::NoWallFound),
        [r] => *r,
        _ => return Err(DfmError::MultipleWalls(runs.len())),
    };
    let upp = scale.units_per_pixel();
    let spans = middle_spans(feature, &run, &band);
    let mut lefts: Vec<f64> = spans.iter().map(|s| s.0).collect();
    let mut rights: Vec<f64> = spans.iter().map(|s| s.1).collect();
    let left = segmenter::median(&mut lefts).unwrap_or(run.first_col as f64);
    let right = segmenter::median(&mut rights).unwrap_or((run.last_col + 1) as f64);
    let width = segmenter::median_width_px(feature, &run, &band) * upp;
    let height = (band.top_row - run.top_row) as f64 * upp;
    Ok(match kind {
        WallKind::Side => {
            let gap_left = run.first_col.saturating_sub(band.left_col);
            let gap_right = band.right_col.saturating_sub(run.last_col);
            if gap_left <= gap_right {
                WallSpec::side(PartEnd::Left, col_x(left, upp), width, height)
            } else {
                WallSpec::side(PartEnd::Right, col_x(right, upp), width, height)
            }
        }
        WallKind::Thin => WallSpec::thin(col_x(0.5 * (left + right), upp), width, height),
        WallKind::Thick => WallSpec::thick(col_x(0.5 * (left + right), upp), width, height),
    })
}

/// Bottom span for a rewritten feature: a little past the content edge where
/// the band runs off it, the observed end elsewhere, the outer face
/// for side walls.
fn feature_span(spec: &WallSpec, band: &BottomBand, content: &PixelBox, scale: UnitScale) -> [f64; 2] {
    let upp = scale.units_per_pixel();
    let touches_left = band.left_col as i32 <= content.x0 + 1;
    let touches_right = band.right_col as i32 + 2 >= content.x1;
    // Past the content edge the band continues; leave room for one fillet.
    let reach = 2.0 * spec.treatment.base_fillet_radius + upp;
    let mut lo = match touches_left {
        true => col_x(content.x0 as f64, upp) - reach,
        false => col_x(band.left_col as f64, upp),
    };
    let mut hi = match touches_right {
        true => col_x(content.x1 as f64, upp) + reach,
        false => col_x((band.right_col + 1) as f64, upp),
    };
    match spec.outer_end {
        Some(PartEnd::Left) => lo = spec.center_x - spec.top_width / 2.0,
        Some(PartEnd::Right) => hi = spec.center_x + spec.top_width / 2.0,
        None => {}
    }
    [lo, hi]
}

/// Rasterize one wall, given in feature-frame units, at part resolution so
/// it pastes back through `t` without resampling loss.
fn render_part(spec: &WallSpec, span: [f64; 2], band: &BottomBand, scale: UnitScale, t: &CropTransform) -> Result<Raster> {
    let part_scale = UnitScale::new(scale.units_per_pixel() * t.scale_factor)?;
    let upp = part_scale.units_per_pixel();
    let shift = t.to_part([0.5 * SIZE as f64, 0.0])[0] * upp;
    let edge = t.to_part([0.0, (band.bottom_row + 1) as f64])[1].round();
    let width = SIZE as f64 * upp;
    let frame = FrameSpec::new([0.0, width], [-(SIZE as f64 - edge) * upp, edge * upp])?;
    let mut wall = *spec;
    wall.center_x += shift;
    let design = PartDesign {
        bottom_thickness: 1.0,
        bottom_span: [(span[0] + shift).max(0.0), (span[1] + shift).min(width)],
        walls: vec![wall],
        frame,
    };
    let poly = geometry::profile_polygon(&design)?;
    Ok(raster::rasterize_polygon(&poly, geometry::Point::new(0.0, frame.y_range[1]), part_scale))
}

/// How crops are magnified into the feature frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Magnification {
    /// The part's measured bottom thickness becomes one feature-frame unit.
    #[default]
    Normalized,
    /// Fixed 10/6.6, exact only for canonical-scale parts.
    Canonical,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineOptions {
    pub mask_style: MaskStyle,
    pub iou_threshold: f64,
    pub margin: i32,
    pub magnification: Magnification,
    /// Modify features concurrently when the `parallel` feature is enabled.
    pub parallel: bool,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            mask_style: MaskStyle::Long,
            iou_threshold: segmenter::DUPLICATE_IOU,
            margin: segmenter::EXPAND_MARGIN,
            magnification: Magnification::Normalized,
            parallel: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureReport {
    pub index: usize,
    pub kind: WallKind,
    pub score: f64,
    #[serde(rename = "box")]
    pub bbox: PixelBox,
    pub expanded_box: PixelBox,
    pub transform: CropTransform,
    pub backend: String,
    /// Backend output equals its input.
    pub unchanged: bool,
    pub clamped: bool,
    pub overflow_pixels: usize,
    /// Output violations attributed to this feature.
    pub violations: Vec<Violation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub schema_version: u32,
    pub backend: String,
    pub wall_count: usize,
    pub features: Vec<FeatureReport>,
    /// Walls the verifier finds in the output.
    pub output_wall_count: usize,
    pub violations: Vec<Violation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elapsed_ms: Option<f64>,
}

impl PipelineReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn run(image: &Raster, backend: &dyn ModificationBackend, policy: &RulePolicy) -> Result<(Raster, PipelineReport)> {
    run_with(image, backend, policy, &PipelineOptions::default())
}

/// Columns whose foreground leaves the band within `b`: the wall footprint
/// the paste may clear. Falls back to the whole box.
fn footprint(image: &Raster, band: &BottomBand, b: &PixelBox) -> PixelBox {
    let above = band.top_row.checked_sub(1);
    let cols: Vec<i32> = (b.x0..b.x1)
        .filter(|&c| above.is_some_and(|r| image.is_fg(c as usize, r)))
        .collect();
    match (cols.first(), cols.last()) {
        (Some(&lo), Some(&hi)) => PixelBox::new((lo - 1).max(b.x0), b.y0, (hi + 2).min(b.x1), b.y1),
        _ => *b,
    }
}

struct Prepared {
    detection: DetectedFeature,
    expanded: PixelBox,
    feature: Raster,
    transform: CropTransform,
    content: PixelBox,
    scale: UnitScale,
    source_clean: bool,
}

pub fn run_with(
    image: &Raster,
    backend: &dyn ModificationBackend,
    policy: &RulePolicy,
    options: &PipelineOptions,
) -> Result<(Raster, PipelineReport)> {
    let start = Instant::now();
    if !image.is_binary() {
        return Err(DfmError::InvalidParameter("pipeline input must be a binary raster".into()));
    }
    policy.check()?;
    let band = segmenter::find_bottom_band(image)?;
    let mut detections = segmenter::filter_duplicates(&segmenter::detect_walls(image, options.mask_style)?, options.iou_threshold);
    detections.sort_by_key(|d| (d.bbox.x0, d.bbox.x1));
    let source = evaluate::verify_walls(image)?;
    let magnification = match options.magnification {
        Magnification::Normalized => SIZE as f64 / (6.6 * band.thickness_px as f64),
        Magnification::Canonical => raster::FEATURE_MAGNIFICATION,
    };

    let prepared = detections
        .into_iter()
        .enumerate()
        .map(|(i, d)| {
            let expanded = segmenter::expand_box(d.bbox, options.margin);
            // Tall or wide boxes are shrunk just enough to fit the frame.
            let fit = (SIZE as f64 / expanded.width() as f64)
                .min(raster::feature_band_edge_row() / (band.bottom_row as i32 + 1 - expanded.y0) as f64);
            let mag = magnification.min(fit * (1.0 - 1e-9));
            let (feature, transform) =
                raster::crop_to_feature_frame_at(image, expanded, mag).map_err(|e| e.in_feature(i))?;
            let [x0, y0] = transform.to_feature([expanded.x0 as f64, expanded.y0 as f64]);
            let [x1, y1] = transform.to_feature([expanded.x1 as f64, expanded.y1 as f64]);
            let content = PixelBox::new(x0.round() as i32, y0.round() as i32, x1.round() as i32, y1.round() as i32);
            let source_clean = source
                .iter()
                .find(|(r, _)| d.bbox.x0 <= r.first_col as i32 && (r.last_col as i32) < d.bbox.x1)
                .is_some_and(|(_, v)| v.is_empty());
            Ok(Prepared {
                scale: UnitScale::new(1.0 / (band.thickness_px as f64 * transform.scale_factor))?,
                source_clean,
                detection: d,
                expanded,
                feature,
                transform,
                content,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let modify = |i: usize| -> Result<Raster> {
        let p = &prepared[i];
        let local = policy.derive(i as u64);
        let request = FeatureRequest {
            index: i,
            feature: &p.feature,
            kind: p.detection.kind,
            content: p.content,
            scale: p.scale,
            policy: &local,
            source_clean: p.source_clean,
            transform: p.transform,
        };
        let out = backend.modify(&request).map_err(|e| e.in_feature(i))?;
        if !out.is_binary() {
            return Err(DfmError::Backend(format!("{} returned a non-binary raster", backend.name())).in_feature(i));
        }
        Ok(out)
    };
    let outputs = if options.parallel {
        parallel::map_indexed(prepared.len(), modify)
    } else {
        parallel::map_sequential(prepared.len(), modify)
    };

    let mut canvas = image.clone();
    let mut features = Vec::with_capacity(prepared.len());
    for (i, (p, out)) in prepared.iter().zip(outputs).enumerate() {
        let out = out?;
        let replace = footprint(image, &band, &p.expanded);
        let (next, stats) = raster::paste_replacing(&canvas, &out, &p.transform, replace);
        canvas = next;
        features.push(FeatureReport {
            index: i,
            kind: p.detection.kind,
            score: p.detection.score,
            bbox: p.detection.bbox,
            expanded_box: p.expanded,
            transform: p.transform,
            backend: backend.name().to_string(),
            unchanged: out == p.feature,
            clamped: stats.clamped,
            overflow_pixels: stats.overflow_pixels,
            violations: Vec::new(),
        });
    }

    let violations = evaluate::verify(&canvas)?;
    let output_wall_count = segmenter::find_bottom_band(&canvas)
        .map(|b| segmenter::wall_runs(&canvas, &b).len())
        .unwrap_or(0);
    if output_wall_count == features.len() {
        for v in &violations {
            features[v.wall_index].violations.push(*v);
        }
    }
    let report = PipelineReport {
        schema_version: SCHEMA_VERSION,
        backend: backend.name().to_string(),
        wall_count: features.len(),
        features,
        output_wall_count,
        violations,
        elapsed_ms: Some(start.elapsed().as_secs_f64() * 1e3),
    };
    Ok((canvas, report))
}

/// Before/after sheet of one pipeline run.
pub fn write_sheet(before: &Raster, after: &Raster, path: impl AsRef<std::path::Path>) -> Result<()> {
    raster::save_sheet(before, after, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::rasterize_default;

    fn part(walls: Vec<WallSpec>) -> PartDesign {
        PartDesign {
            bottom_thickness: 1.0,
            bottom_span: [-4.8, 4.8],
            walls,
            frame: FrameSpec::part(),
        }
    }

    fn fig1_part() -> PartDesign {
        part(vec![
            WallSpec::side(PartEnd::Left, -4.8, 0.6, 4.0),
            WallSpec::thin(0.0, 0.5, 6.0),
            WallSpec::side(PartEnd::Right, 4.8, 0.6, 4.0),
        ])
    }

    fn single(w: WallSpec) -> Raster {
        let d = PartDesign {
            bottom_thickness: 1.0,
            bottom_span: [-3.3, 3.3],
            walls: vec![w],
            frame: FrameSpec::feature(),
        };
        raster::rasterize(&d, &FrameSpec::feature(), UnitScale::feature()).unwrap()
    }

    #[test]
    fn fit_recovers_sharp_thin_wall() {
        let scale = UnitScale::feature();
        let r = single(WallSpec::thin(0.0, 0.5, 4.0));
        let s = fit_wall_spec(&r, WallKind::Thin, scale).unwrap();
        let px = scale.units_per_pixel();
        assert!((s.top_width - 0.5).abs() <= px, "{}", s.top_width);
        assert!((s.height - 4.0).abs() <= px, "{}", s.height);
        assert!(s.center_x.abs() <= px);
    }

    #[test]
    fn standalone_oracle_fixes_a_feature() {
        let f = single(WallSpec::thin(0.0, 0.3, 4.5));
        assert!(!evaluate::verify(&f).unwrap().is_empty());
        let policy = RulePolicy::midpoint();
        let req = FeatureRequest::standalone(&f, WallKind::Thin, &policy).unwrap();
        let out = RuleOracle.modify(&req).unwrap();
        assert!(evaluate::verify(&out).unwrap().is_empty(), "{:?}", evaluate::verify(&out));
    }

    #[test]
    fn fit_errors() {
        let scale = UnitScale::feature();
        let band_only = raster::rasterize(
            &PartDesign {
                bottom_thickness: 1.0,
                bottom_span: [-3.3, 3.3],
                walls: vec![],
                frame: FrameSpec::feature(),
            },
            &FrameSpec::feature(),
            scale,
        )
        .unwrap();
        assert!(matches!(fit_wall_spec(&band_only, WallKind::Thin, scale), Err(DfmError::NoWallFound)));
        let two = raster::rasterize(
            &PartDesign {
                bottom_thickness: 1.0,
                bottom_span: [-3.3, 3.3],
                walls: vec![WallSpec::thin(-1.5, 0.5, 3.0), WallSpec::thin(1.5, 0.5, 3.0)],
                frame: FrameSpec::feature(),
            },
            &FrameSpec::feature(),
            scale,
        )
        .unwrap();
        assert!(matches!(fit_wall_spec(&two, WallKind::Thin, scale), Err(DfmError::MultipleWalls(2))));
    }

    #[test]
    fn rule_oracle_on_fig1_part() {
        let image = rasterize_default(&fig1_part()).unwrap();
        let (out, report) = run(&image, &RuleOracle, &RulePolicy::midpoint()).unwrap();
        assert_eq!(report.wall_count, 3);
        assert!(report.violations.is_empty(), "{:?}", report.violations);
        let band = segmenter::find_bottom_band(&out).unwrap();
        let runs = segmenter::wall_runs(&out, &band);
        let m = evaluate::measure_run(
            &out,
            &out.mirrored(),
            &band,
            &runs[1],
            UnitScale::new(1.0 / band.thickness_px as f64).unwrap(),
        );
        assert!((m.height - 4.0).abs() < 0.1, "{}", m.height);
        // Outward flare passes the detected box of both side walls.
        let (l, r) = (report.features[0].bbox, report.features[2].bbox);
        let rows = 0..SIZE;
        assert!(rows.clone().any(|row| (0..l.x0 as usize).any(|c| out.is_fg(c, row))));
        assert!(rows.clone().any(|row| (r.x1 as usize..SIZE).any(|c| out.is_fg(c, row))));
    }

    #[test]
    fn identity_backend_keeps_image() {
        let image = rasterize_default(&fig1_part()).unwrap();
        let (out, report) = run(&image, &IdentityBackend, &RulePolicy::midpoint()).unwrap();
        assert_eq!(report.features.len(), 3);
        assert!(out.diff_count(&image) as f64 <= 0.01 * image.count_nonzero() as f64);
    }

    #[test]
    fn manufacturable_part_is_left_alone() {
        let d = fig1_part();
        let walls = d
            .walls
            .iter()
            .map(|w| rules::make_manufacturable(w, 1.0, &RulePolicy::midpoint()).unwrap())
            .collect();
        let image = rasterize_default(&PartDesign { walls, ..d }).unwrap();
        assert!(evaluate::verify(&image).unwrap().is_empty());
        let (out, report) = run(&image, &RuleOracle, &RulePolicy::midpoint()).unwrap();
        assert!(report.features.iter().all(|f| f.unchanged));
        assert!(out.diff_count(&image) as f64 <= 0.01 * image.count_nonzero() as f64);
    }

    #[test]
    fn deterministic_and_parallel_agree() {
        let image = rasterize_default(&fig1_part()).unwrap();
        let policy = RulePolicy::midpoint();
        let (a, ra) = run(&image, &RuleOracle, &policy).unwrap();
        let opts = PipelineOptions {
            parallel: true,
            ..PipelineOptions::default()
        };
        let (b, rb) = run_with(&image, &RuleOracle, &policy, &opts).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra.features, rb.features);
    }

    #[test]
    fn short_masks_keep_band_between_features() {
        let image = rasterize_default(&fig1_part()).unwrap();
        let opts = PipelineOptions {
            mask_style: MaskStyle::Short,
            ..PipelineOptions::default()
        };
        let (out, report) = run_with(&image, &RuleOracle, &RulePolicy::midpoint(), &opts).unwrap();
        assert!(report.violations.is_empty(), "{:?}", report.violations);
        let band = segmenter::find_bottom_band(&image).unwrap();
        for c in band.left_col..=band.right_col {
            assert!(out.is_fg(c, band.bottom_row), "gap at column {c}");
        }
    }

    #[test]
    fn non_binary_input_rejected() {
        let mut image = rasterize_default(&fig1_part()).unwrap();
        image.set(0, 0, 7);
        assert!(run(&image, &RuleOracle, &RulePolicy::midpoint()).is_err());
    }
}
