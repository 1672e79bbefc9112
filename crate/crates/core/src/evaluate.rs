//! Raster measurement and rule verification, detection metrics, and the
//! least-squares adversarial losses.

use serde::{Deserialize, Serialize};

use crate::error::{DfmError, Result};
use crate::geometry::{UnitScale, WallKind};
use crate::raster::{PixelBox, Raster, SIZE};
use crate::rules::RuleBounds;
use crate::segmenter::{self, median, BottomBand, WallRun};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WallMeasurement {
    pub kind: WallKind,
    pub width_top: f64,
    pub width_base: f64,
    pub height: f64,
    pub draft_deg_left: f64,
    pub draft_deg_right: f64,
    /// Smaller of the two top-corner radii.
    pub top_round_radius: f64,
    /// Smaller of the two base-fillet radii, inner face only for side walls.
    pub base_fillet_radius: f64,
    pub top_round_radii: [f64; 2],
    pub base_fillet_radii: [f64; 2],
    pub cored: bool,
    pub shell_thickness: Option<f64>,
    /// Rows used by each face fit.
    pub fit_rows: usize,
    /// Outer side for side walls.
    pub outer_is_left: Option<bool>,
}

/// Least-squares line `x = a + b * y`.
fn fit_line(pts: &[(f64, f64)]) -> Option<(f64, f64)> {
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return None;
    }
    let (sy, sx) = pts.iter().fold((0.0, 0.0), |(sy, sx), &(y, x)| (sy + y, sx + x));
    let (my, mx) = (sy / n, sx / n);
    let (mut syy, mut sxy) = (0.0, 0.0);
    for &(y, x) in pts {
        syy += (y - my) * (y - my);
        sxy += (y - my) * (x - mx);
    }
    if syy <= 0.0 {
        return None;
    }
    let b = sxy / syy;
    Some((mx - b * my, b))
}

#[derive(Clone, Copy, PartialEq)]
enum Corner {
    /// Convex round between the face and the wall top.
    Top,
    /// Concave fillet between the face and the band top.
    Base,
}

/// Radius of an arc tangent to the face line and to a horizontal line near
/// `level`, by grid search over radius and line height. Points are `(x, y)` in
/// pixels; arc centers stay left of `limit`.
fn fit_corner(pts: &[(f64, f64)], face: &impl Fn(f64) -> f64, corner: Corner, level: f64, limit: f64, max_r: f64) -> f64 {
    let cost = |r: f64, yl: f64| -> f64 {
        let (cx, cy) = match corner {
            Corner::Top => ((face(yl + r) + r).min(limit), yl + r),
            Corner::Base => (face(yl - r) - r, yl - r),
        };
        pts.iter()
            .map(|&(px, py)| {
                let d = match corner {
                    Corner::Top if py < cy && px < cx => (px - cx).hypot(py - cy) - r,
                    Corner::Top if py >= cy => px - face(py),
                    Corner::Base if py > cy && px > cx => (px - cx).hypot(py - cy) - r,
                    Corner::Base if py <= cy => px - face(py),
                    _ => py - yl,
                };
                d.abs().min(2.0).powi(2)
            })
            .sum()
    };
    let search = |r_range: (f64, f64, f64), y_range: (f64, f64, f64)| -> (f64, f64) {
        let mut best = (f64::INFINITY, 0.0, level);
        let mut r = r_range.0.max(0.0);
        while r <= r_range.1 + 1e-9 {
            let mut yl = y_range.0;
            while yl <= y_range.1 + 1e-9 {
                let c = cost(r, yl);
                if c < best.0 {
                    best = (c, r, yl);
                }
                yl += y_range.2;
            }
            r += r_range.2;
        }
        (best.1, best.2)
    };
    if pts.len() < 3 {
        return 0.0;
    }
    let (r, yl) = search((0.0, max_r, 0.5), (level - 0.5, level + 0.5, 0.25));
    let (r, yl) = search((r - 0.5, (r + 0.5).min(max_r), 0.1), (yl - 0.25, yl + 0.25, 0.05));
    search((r - 0.1, (r + 0.1).min(max_r), 0.02), (yl - 0.05, yl + 0.05, 0.01)).0
}

/// Corner-free rows for face fitting: the middle 60% of the wall, shrunk
/// further so corner arcs up to 0.7 units stay out.
fn fit_rows(run: &WallRun, band: &BottomBand, ppu: f64) -> std::ops::Range<usize> {
    let h = (band.top_row - run.top_row) as f64;
    let skip = (0.2 * h).max(0.7 * ppu).ceil() as usize;
    let lo = run.top_row + skip;
    let hi = band.top_row.saturating_sub(skip);
    if hi >= lo + 3 {
        lo..hi
    } else {
        segmenter::middle_rows(run, band)
    }
}

struct LeftFace {
    /// Edge x at pixel-row center `y`: `a + b * y`.
    line: (f64, f64),
    rows: usize,
    top_radius: f64,
    base_radius: f64,
}

fn measure_left_face(image: &Raster, run: &WallRun, band: &BottomBand, ppu: f64, center: f64) -> LeftFace {
    let edge = |r: usize| run.row_span(image, r).map(|(a, _)| (r as f64 + 0.5, a as f64));
    let fit = |rows: std::ops::Range<usize>| {
        let pts: Vec<(f64, f64)> = rows.filter_map(edge).collect();
        let line = fit_line(&pts).unwrap_or_else(|| (pts.first().map_or(run.first_col as f64, |p| p.1), 0.0));
        (line, pts.len())
    };
    let (mut line, mut rows) = fit(fit_rows(run, band, ppu));
    let (mut top_px, mut base_px) = corner_radii(image, run, band, ppu, center, line);
    // Refit over the whole straight stretch between the two arcs.
    let straight = (run.top_row + top_px.ceil() as usize + 1)..band.top_row.saturating_sub(base_px.ceil() as usize + 1);
    if straight.len() > rows.max(2) {
        (line, rows) = fit(straight);
        (top_px, base_px) = corner_radii(image, run, band, ppu, center, line);
    }
    LeftFace {
        line,
        rows,
        top_radius: top_px / ppu,
        base_radius: base_px / ppu,
    }
}

/// Top round and base fillet radii, in pixels, left of a face line.
fn corner_radii(image: &Raster, run: &WallRun, band: &BottomBand, ppu: f64, center: f64, line: (f64, f64)) -> (f64, f64) {
    let face = |y: f64| line.0 + line.1 * y;
    let window = ppu.ceil() as usize;
    let top = run.top_row;
    let t = band.top_row;

    // Convex top corner: boundary points near the top, outside the apex half.
    let mut corner = Vec::new();
    for r in top..(top + window + 2).min(t) {
        if let Some((a, _)) = run.row_span(image, r) {
            if (a as f64) < center {
                corner.push((a as f64, r as f64 + 0.5));
            }
        }
    }
    let c0 = face(top as f64).floor().max(0.0) as usize;
    for c in c0..((c0 + window + 2).min(SIZE)) {
        if (c as f64 + 0.5) >= center {
            break;
        }
        if let Some(r) = (top..t).find(|&r| image.is_fg(c, r)) {
            corner.push((c as f64 + 0.5, r as f64));
        }
    }
    let top_px = fit_corner(&corner, &face, Corner::Top, top as f64, center, 1.0 * ppu);

    // Concave base fillet, with a few band-only columns for the band line.
    let mut corner = Vec::new();
    for r in t.saturating_sub(window + 2).max(top)..t {
        if let Some((a, _)) = run.row_span(image, r) {
            corner.push((a as f64, r as f64 + 0.5));
        }
    }
    let face_base = face(t as f64).floor().max(0.0) as usize;
    for c in run.first_col.saturating_sub(3)..face_base.min(SIZE) {
        if let Some(r) = (t.saturating_sub(window + 2)..=t).find(|&r| image.is_fg(c, r)) {
            corner.push((c as f64 + 0.5, r as f64));
        }
    }
    let base_px = fit_corner(&corner, &face, Corner::Base, t as f64, f64::INFINITY, 1.0 * ppu);
    (top_px, base_px)
}

fn mirror_run(run: &WallRun) -> WallRun {
    WallRun {
        first_col: SIZE - 1 - run.last_col,
        last_col: SIZE - 1 - run.first_col,
        top_row: run.top_row,
    }
}

fn mirror_band(band: &BottomBand) -> BottomBand {
    BottomBand {
        left_col: SIZE - 1 - band.right_col,
        right_col: SIZE - 1 - band.left_col,
        ..*band
    }
}

/// Measure one wall run. Lengths are in units of `scale`.
pub fn measure_run(image: &Raster, mirrored: &Raster, band: &BottomBand, run: &WallRun, scale: UnitScale) -> WallMeasurement {
    let ppu = scale.pixels_per_unit();
    let upp = scale.units_per_pixel();
    let kind = segmenter::classify_with(image, run, band, upp);
    let top_center = run
        .row_span(image, run.top_row)
        .map_or(0.5 * (run.first_col + run.last_col + 1) as f64, |(a, b)| 0.5 * (a + b + 1) as f64);
    let left = measure_left_face(image, run, band, ppu, top_center);
    let mrun = mirror_run(run);
    let mband = mirror_band(band);
    let right = measure_left_face(mirrored, &mrun, &mband, ppu, SIZE as f64 - top_center);

    let top_y = run.top_row as f64;
    let base_y = band.top_row as f64;
    let xl = |y: f64| left.line.0 + left.line.1 * y;
    let xr = |y: f64| SIZE as f64 - (right.line.0 + right.line.1 * y);
    let width_top = (xr(top_y) - xl(top_y)) * upp;
    let width_base = (xr(base_y) - xl(base_y)) * upp;

    let draft_left = (-left.line.1).atan().to_degrees().max(0.0);
    let draft_right = (-right.line.1).atan().to_degrees().max(0.0);

    let outer_is_left = (kind == WallKind::Side).then(|| run.first_col <= band.left_col + 1);
    let base_radii = [left.base_radius, right.base_radius];
    let base_fillet_radius = match outer_is_left {
        Some(true) => base_radii[1],
        Some(false) => base_radii[0],
        None => base_radii[0].min(base_radii[1]),
    };

    // Coring: two or more foreground segments across most fit rows.
    let rows = fit_rows(run, band, ppu);
    let n_rows = rows.len();
    let mut shells = Vec::new();
    let mut split_rows = 0;
    for r in rows {
        let mut segs = Vec::new();
        let mut c = run.first_col;
        while c <= run.last_col {
            if image.is_fg(c, r) {
                let s = c;
                while c <= run.last_col && image.is_fg(c, r) {
                    c += 1;
                }
                segs.push(c - s);
            } else {
                c += 1;
            }
        }
        if segs.len() >= 2 {
            split_rows += 1;
            shells.push(segs[0] as f64);
            shells.push(*segs.last().unwrap() as f64);
        }
    }
    let cored = n_rows > 0 && 2 * split_rows >= n_rows;
    let shell_thickness = if cored { median(&mut shells).map(|s| s * upp) } else { None };

    WallMeasurement {
        kind,
        width_top,
        width_base,
        height: (band.top_row - run.top_row) as f64 * upp,
        draft_deg_left: draft_left,
        draft_deg_right: draft_right,
        top_round_radius: left.top_radius.min(right.top_radius),
        base_fillet_radius,
        top_round_radii: [left.top_radius, right.top_radius],
        base_fillet_radii: base_radii,
        cored,
        shell_thickness,
        fit_rows: left.rows.min(right.rows),
        outer_is_left,
    }
}

/// Measure the single wall of a feature image.
pub fn measure_wall(feature: &Raster, scale: UnitScale) -> Result<WallMeasurement> {
    let band = segmenter::find_bottom_band(feature)?;
    let runs = segmenter::wall_runs(feature, &band);
    match runs.len() {
        0 => Err(DfmError::NoWallFound),
        1 => Ok(measure_run(feature, &feature.mirrored(), &band, &runs[0], scale)),
        n => Err(DfmError::MultipleWalls(n)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RuleId {
    AspectRatio,
    ThinWidth,
    SideWidth,
    ThickShell,
    DraftAngle,
    CornerRound,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub rule_id: RuleId,
    pub wall_index: usize,
    pub measured: f64,
    pub allowed: [f64; 2],
}

/// Measurement slack used by [`verify`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Fixed part of the draft tolerance, degrees.
    pub draft_deg: f64,
    /// Extra draft slack per unit of `atan(1 / fit_rows)`: a one-pixel edge
    /// shift over the fitted rows.
    pub draft_quantization: f64,
    pub height_px: f64,
    pub width_px: f64,
    pub radius_range: [f64; 2],
    /// Slack, in pixels, on the half-width bound of a narrow top.
    pub apex_radius_px: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            draft_deg: 0.25,
            draft_quantization: DRAFT_QUANTIZATION,
            height_px: 2.0,
            width_px: 1.0,
            radius_range: [0.3, 0.7],
            apex_radius_px: 1.5,
        }
    }
}

/// Smallest value, plus a small margin, at which seeded rule-oracle outputs
/// stop reporting draft violations; sharp walls are still flagged.
pub const DRAFT_QUANTIZATION: f64 = 0.8;

impl Tolerances {
    pub fn draft_for_rows(&self, rows: usize) -> f64 {
        self.draft_deg + self.draft_quantization * (1.0 / rows.max(1) as f64).atan().to_degrees()
    }
}

pub fn verify(image: &Raster) -> Result<Vec<Violation>> {
    verify_with(image, &RuleBounds::default(), &Tolerances::default())
}

/// Measure every wall and compare against the rule bounds in bottom-thickness units.
pub fn verify_with(image: &Raster, bounds: &RuleBounds, tol: &Tolerances) -> Result<Vec<Violation>> {
    let band = segmenter::find_bottom_band(image).map_err(|e| match e {
        DfmError::EmptyImage => DfmError::NoBottomWall,
        other => other,
    })?;
    let scale = UnitScale::new(1.0 / band.thickness_px as f64)?;
    let upp = scale.units_per_pixel();
    let mirrored = image.mirrored();
    let mut out = Vec::new();
    for (i, run) in segmenter::wall_runs(image, &band).iter().enumerate() {
        let m = measure_run(image, &mirrored, &band, run, scale);
        check_wall(i, &m, bounds, tol, upp, &mut out);
    }
    Ok(out)
}

/// Wall runs of `image`, each with its own violations.
pub fn verify_walls(image: &Raster) -> Result<Vec<(WallRun, Vec<Violation>)>> {
    let band = segmenter::find_bottom_band(image).map_err(|e| match e {
        DfmError::EmptyImage => DfmError::NoBottomWall,
        other => other,
    })?;
    let violations = verify(image)?;
    Ok(segmenter::wall_runs(image, &band)
        .into_iter()
        .enumerate()
        .map(|(i, run)| (run, violations.iter().filter(|v| v.wall_index == i).copied().collect()))
        .collect())
}

fn check_wall(i: usize, m: &WallMeasurement, b: &RuleBounds, tol: &Tolerances, upp: f64, out: &mut Vec<Violation>) {
    let mut check = |rule_id: RuleId, measured: f64, allowed: [f64; 2]| {
        if !(measured >= allowed[0] - 1e-9 && measured <= allowed[1] + 1e-9) {
            out.push(Violation {
                rule_id,
                wall_index: i,
                measured,
                allowed,
            });
        }
    };
    let wpx = tol.width_px * upp;
    let dtol = tol.draft_for_rows(m.fit_rows);
    match m.kind {
        WallKind::Thin | WallKind::Thick => {
            check(RuleId::AspectRatio, m.height, [0.0, b.aspect_max + tol.height_px * upp]);
            if m.kind == WallKind::Thin {
                check(RuleId::ThinWidth, m.width_top, [b.width_range[0] - wpx, b.width_range[1] + wpx]);
            } else {
                let range = [b.shell_range[0] - wpx, b.shell_range[1] + wpx];
                check(RuleId::ThickShell, m.shell_thickness.unwrap_or(0.0), range);
            }
            let target = b.draft_internal_deg;
            check(RuleId::DraftAngle, m.draft_deg_left, [target - dtol, target + dtol]);
            check(RuleId::DraftAngle, m.draft_deg_right, [target - dtol, target + dtol]);
            for r in m.base_fillet_radii {
                check(RuleId::CornerRound, r, tol.radius_range);
            }
        }
        WallKind::Side => {
            check(RuleId::SideWidth, m.width_top, [b.side_width - wpx, b.side_width + wpx]);
            let target = b.draft_side_deg;
            let outer = if m.outer_is_left == Some(true) { m.draft_deg_left } else { m.draft_deg_right };
            check(RuleId::DraftAngle, outer, [target - dtol, target + dtol]);
            check(RuleId::CornerRound, m.base_fillet_radius, tol.radius_range);
        }
    }
    // A narrow top cannot hold the full radius; its rounds meet at the apex.
    let lo = tol.radius_range[0].min(m.width_top / 2.0 - tol.apex_radius_px * upp).max(0.0);
    for r in m.top_round_radii {
        check(RuleId::CornerRound, r, [lo, tol.radius_range[1]]);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    #[serde(rename = "box")]
    pub bbox: PixelBox,
    pub kind: WallKind,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    #[serde(rename = "box")]
    pub bbox: PixelBox,
    pub kind: WallKind,
}

/// Detections and annotations of one design.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DetectionResult {
    pub predictions: Vec<Prediction>,
    pub ground_truth: Vec<GroundTruth>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AreaBucket {
    All,
    Small,
    Medium,
    Large,
}

impl AreaBucket {
    pub fn contains(self, area: i64) -> bool {
        const S: i64 = 32 * 32;
        const L: i64 = 96 * 96;
        match self {
            AreaBucket::All => true,
            AreaBucket::Small => area < S,
            AreaBucket::Medium => (S..=L).contains(&area),
            AreaBucket::Large => area > L,
        }
    }
}

pub const IOU_THRESHOLDS: [f64; 10] = [0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95];

/// Greedy matching by descending score; returns, per prediction, the matched
/// ground-truth index if its IOU reaches the threshold.
fn match_design(r: &DetectionResult, thr: f64) -> Vec<(usize, Option<usize>)> {
    let mut order: Vec<usize> = (0..r.predictions.len()).collect();
    order.sort_by(|&a, &b| r.predictions[b].score.total_cmp(&r.predictions[a].score).then(a.cmp(&b)));
    let mut used = vec![false; r.ground_truth.len()];
    order
        .into_iter()
        .map(|pi| {
            let p = &r.predictions[pi];
            let best = r
                .ground_truth
                .iter()
                .enumerate()
                .filter(|(gi, g)| !used[*gi] && g.kind == p.kind)
                .map(|(gi, g)| (gi, segmenter::iou(&p.bbox, &g.bbox)))
                .fold(None::<(usize, f64)>, |acc, (gi, v)| match acc {
                    Some((_, bv)) if bv >= v => acc,
                    _ => Some((gi, v)),
                });
            match best {
                Some((gi, v)) if v >= thr => {
                    used[gi] = true;
                    (pi, Some(gi))
                }
                _ => (pi, None),
            }
        })
        .collect()
}

/// Per-design precision averaged over designs, in percent. `None` if no
/// design has ground truth in `bucket`.
pub fn bucket_precision(results: &[DetectionResult], thr: f64, bucket: AreaBucket) -> Result<Option<f64>> {
    if results.iter().all(|r| r.ground_truth.is_empty()) {
        return Err(DfmError::EmptyGroundTruth);
    }
    let mut sum = 0.0;
    let mut designs = 0usize;
    for r in results {
        if !r.ground_truth.iter().any(|g| bucket.contains(g.bbox.area())) {
            continue;
        }
        let (mut tp, mut fp) = (0usize, 0usize);
        for (pi, m) in match_design(r, thr) {
            let area = match m {
                Some(gi) => r.ground_truth[gi].bbox.area(),
                None => r.predictions[pi].bbox.area(),
            };
            if !bucket.contains(area) {
                continue;
            }
            if m.is_some() {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        designs += 1;
        if tp + fp > 0 {
            sum += 100.0 * tp as f64 / (tp + fp) as f64;
        }
    }
    Ok((designs > 0).then(|| sum / designs as f64))
}

pub fn average_precision(results: &[DetectionResult], iou_threshold: f64) -> Result<f64> {
    Ok(bucket_precision(results, iou_threshold, AreaBucket::All)?.unwrap_or(0.0))
}

/// Mean of the bucket's AP over IOU thresholds 0.50..=0.95.
pub fn mean_average_precision(results: &[DetectionResult], bucket: AreaBucket) -> Result<Option<f64>> {
    let mut total = 0.0;
    for thr in IOU_THRESHOLDS {
        match bucket_precision(results, thr, bucket)? {
            Some(v) => total += v,
            None => return Ok(None),
        }
    }
    Ok(Some(total / IOU_THRESHOLDS.len() as f64))
}

/// Row layout of the detection results table. Absent buckets are `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApTable {
    pub ap: f64,
    pub ap50: f64,
    pub ap75: f64,
    pub ap_small: Option<f64>,
    pub ap_medium: Option<f64>,
    pub ap_large: Option<f64>,
}

pub fn ap_table(results: &[DetectionResult]) -> Result<ApTable> {
    Ok(ApTable {
        ap: mean_average_precision(results, AreaBucket::All)?.unwrap_or(0.0),
        ap50: average_precision(results, 0.50)?,
        ap75: average_precision(results, 0.75)?,
        ap_small: mean_average_precision(results, AreaBucket::Small)?,
        ap_medium: mean_average_precision(results, AreaBucket::Medium)?,
        ap_large: mean_average_precision(results, AreaBucket::Large)?,
    })
}

impl std::fmt::Display for ApTable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let cell = |v: Option<f64>| v.map_or_else(|| "absent".to_string(), |v| format!("{v:.1}"));
        writeln!(f, "{:>8} {:>8} {:>8} {:>8} {:>8} {:>8}", "AP", "AP50", "AP75", "APs", "APm", "APl")?;
        write!(
            f,
            "{:>8.1} {:>8.1} {:>8.1} {:>8} {:>8} {:>8}",
            self.ap,
            self.ap50,
            self.ap75,
            cell(self.ap_small),
            cell(self.ap_medium),
            cell(self.ap_large)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    /// Plain sums over samples and pixels.
    #[default]
    Sum,
    /// Each term divided by its count.
    Mean,
}

fn reduce(sum: f64, n: usize, reduction: Reduction) -> f64 {
    match reduction {
        Reduction::Sum => sum,
        Reduction::Mean => sum / n as f64,
    }
}

pub fn lsgan_d_loss(d_real: &[f64], d_fake: &[f64]) -> Result<f64> {
    lsgan_d_loss_with(d_real, d_fake, Reduction::Sum)
}

/// `sum (d_real - 1)^2 + sum d_fake^2`.
pub fn lsgan_d_loss_with(d_real: &[f64], d_fake: &[f64], reduction: Reduction) -> Result<f64> {
    if d_real.is_empty() || d_fake.is_empty() {
        return Err(DfmError::InvalidParameter("discriminator outputs must be nonempty".into()));
    }
    let real: f64 = d_real.iter().map(|d| (d - 1.0) * (d - 1.0)).sum();
    let fake: f64 = d_fake.iter().map(|d| d * d).sum();
    Ok(reduce(real, d_real.len(), reduction) + reduce(fake, d_fake.len(), reduction))
}

pub fn lsgan_g_loss(d_fake: &[f64], g_out: &[u8], target: &[u8], lambda: f64) -> Result<f64> {
    lsgan_g_loss_with(d_fake, g_out, target, lambda, Reduction::Sum)
}

/// `sum (d_fake - 1)^2 + lambda * |g_out - target|_1`, intensities scaled to [0, 1].
pub fn lsgan_g_loss_with(d_fake: &[f64], g_out: &[u8], target: &[u8], lambda: f64, reduction: Reduction) -> Result<f64> {
    if d_fake.is_empty() {
        return Err(DfmError::InvalidParameter("discriminator outputs must be nonempty".into()));
    }
    if !(lambda >= 0.0) {
        return Err(DfmError::InvalidParameter(format!("lambda must be nonnegative, got {lambda}")));
    }
    if g_out.len() != target.len() || g_out.is_empty() {
        return Err(DfmError::ShapeMismatch(format!("{} vs {} pixels", g_out.len(), target.len())));
    }
    let adv: f64 = d_fake.iter().map(|d| (d - 1.0) * (d - 1.0)).sum();
    let l1: f64 = g_out
        .iter()
        .zip(target)
        .map(|(&a, &b)| (a as f64 - b as f64).abs() / 255.0)
        .sum();
    Ok(reduce(adv, d_fake.len(), reduction) + lambda * reduce(l1, g_out.len(), reduction))
}
