//! Classical wall segmentation of binary part images, box IOU, duplicate
//! filtering and box expansion.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DfmError, Result};
use crate::geometry::{UnitScale, WallKind};
use crate::raster::{MaskStyle, Raster, FOREGROUND, SIZE};

pub use crate::raster::PixelBox;

/// Widths at or below this many units are thin walls.
pub const THIN_THICK_THRESHOLD: f64 = 1.1;
pub const DUPLICATE_IOU: f64 = 0.2;
pub const EXPAND_MARGIN: i32 = 5;

/// Intersection over union with integer pixel counts.
pub fn iou(a: &PixelBox, b: &PixelBox) -> f64 {
    let inter = a.intersection(b).map_or(0, |i| i.area());
    let union = a.area() + b.area() - inter;
    if union <= 0 {
        return 0.0;
    }
    inter as f64 / union as f64
}

/// Horizontal base plate located in an image. Rows and columns are inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BottomBand {
    pub top_row: usize,
    pub bottom_row: usize,
    pub thickness_px: usize,
    pub left_col: usize,
    pub right_col: usize,
}

pub fn find_bottom_band(image: &Raster) -> Result<BottomBand> {
    let bottom = (0..SIZE).rev().find(|&r| image.row(r).iter().any(|&p| p != 0)).ok_or(DfmError::EmptyImage)?;
    // Vertical run length of every column that reaches the bottom row.
    let mut runs: Vec<usize> = Vec::new();
    for col in 0..SIZE {
        let Some(low) = (0..=bottom).rev().find(|&r| image.is_fg(col, r)) else {
            continue;
        };
        if low + 1 < bottom {
            continue;
        }
        let len = (0..=low).rev().take_while(|&r| image.is_fg(col, r)).count();
        runs.push(len);
    }
    if runs.len() < 3 {
        return Err(DfmError::NoBottomWall);
    }
    let mut sorted = runs.clone();
    sorted.sort_unstable();
    let base = sorted[2];
    // Most common length near the low end, so one-pixel resampling ridges are ignored.
    let mut best = (0usize, base);
    for len in base..=base + 2 {
        let count = runs.iter().filter(|&&r| r == len).count();
        if count > best.0 || (count == best.0 && len > best.1) {
            best = (count, len);
        }
    }
    let thickness = best.1;
    let top = bottom + 1 - thickness;
    let in_band = |c: usize| (top..=bottom).any(|r| image.is_fg(c, r));
    let left = (0..SIZE).find(|&c| in_band(c)).ok_or(DfmError::NoBottomWall)?;
    let right = (0..SIZE).rev().find(|&c| in_band(c)).ok_or(DfmError::NoBottomWall)?;
    Ok(BottomBand {
        top_row: top,
        bottom_row: bottom,
        thickness_px: thickness,
        left_col: left,
        right_col: right,
    })
}

/// Units are bottom-wall thicknesses.
pub fn estimate_unit_scale(image: &Raster) -> Result<UnitScale> {
    let band = find_bottom_band(image).map_err(|e| match e {
        DfmError::EmptyImage => DfmError::NoBottomWall,
        other => other,
    })?;
    UnitScale::new(1.0 / band.thickness_px as f64)
}

/// Contiguous columns holding foreground above the band. Columns are inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WallRun {
    pub first_col: usize,
    pub last_col: usize,
    pub top_row: usize,
}

impl WallRun {
    pub fn width_px(&self) -> usize {
        self.last_col + 1 - self.first_col
    }

    /// Outer foreground extent of one row, restricted to the run's columns.
    pub fn row_span(&self, image: &Raster, row: usize) -> Option<(usize, usize)> {
        let first = (self.first_col..=self.last_col).find(|&c| image.is_fg(c, row))?;
        let last = (self.first_col..=self.last_col).rev().find(|&c| image.is_fg(c, row))?;
        Some((first, last))
    }
}

pub fn wall_runs(image: &Raster, band: &BottomBand) -> Vec<WallRun> {
    let occupied: Vec<Option<usize>> = (0..SIZE)
        .map(|c| (0..band.top_row).find(|&r| image.is_fg(c, r)))
        .collect();
    let mut runs = Vec::new();
    let mut c = 0;
    while c < SIZE {
        if occupied[c].is_none() {
            c += 1;
            continue;
        }
        let start = c;
        let mut top = usize::MAX;
        while c < SIZE {
            match occupied[c] {
                Some(r) => top = top.min(r),
                None => break,
            }
            c += 1;
        }
        if c - start >= 2 {
            runs.push(WallRun {
                first_col: start,
                last_col: c - 1,
                top_row: top,
            });
        }
    }
    runs
}

/// Rows of the middle 60% of a wall's height.
pub(crate) fn middle_rows(run: &WallRun, band: &BottomBand) -> std::ops::Range<usize> {
    let h = band.top_row - run.top_row;
    let skip = ((h as f64) * 0.2).round() as usize;
    let lo = run.top_row + skip;
    let hi = band.top_row - skip;
    if hi > lo + 1 {
        lo..hi
    } else {
        run.top_row..band.top_row
    }
}

pub(crate) fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

/// Median outer width (px) over the middle rows.
pub(crate) fn median_width_px(image: &Raster, run: &WallRun, band: &BottomBand) -> f64 {
    let mut widths: Vec<f64> = middle_rows(run, band)
        .filter_map(|r| run.row_span(image, r))
        .map(|(a, b)| (b + 1 - a) as f64)
        .collect();
    median(&mut widths).unwrap_or(run.width_px() as f64)
}

pub(crate) fn classify(image: &Raster, run: &WallRun, band: &BottomBand) -> WallKind {
    classify_with(image, run, band, 1.0 / band.thickness_px as f64)
}

/// Side if the run reaches the part's horizontal extremes, else by median width.
pub fn classify_with(image: &Raster, run: &WallRun, band: &BottomBand, upp: f64) -> WallKind {
    if run.first_col <= band.left_col + 1 || run.last_col + 1 >= band.right_col {
        return WallKind::Side;
    }
    if median_width_px(image, run, band) * upp <= THIN_THICK_THRESHOLD {
        WallKind::Thin
    } else {
        WallKind::Thick
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectedFeature {
    pub kind: WallKind,
    #[serde(rename = "box")]
    pub bbox: PixelBox,
    #[serde(skip)]
    pub mask: Raster,
    pub score: f64,
}

/// Column territories `[lo, hi)` split at midpoints between runs.
fn run_territories(runs: &[WallRun]) -> Vec<(usize, usize)> {
    let n = runs.len();
    (0..n)
        .map(|i| {
            let lo = if i == 0 { 0 } else { (runs[i - 1].last_col + 1 + runs[i].first_col) / 2 };
            let hi = if i + 1 == n { SIZE } else { (runs[i].last_col + 1 + runs[i + 1].first_col) / 2 };
            (lo, hi)
        })
        .collect()
}

/// One feature per run above the bottom band.
pub fn detect_walls(image: &Raster, style: MaskStyle) -> Result<Vec<DetectedFeature>> {
    let band = find_bottom_band(image)?;
    let runs = wall_runs(image, &band);
    let terr = run_territories(&runs);
    let margin = (0.5 * band.thickness_px as f64).round() as usize;
    let mut out = Vec::with_capacity(runs.len());
    for (run, &(lo, hi)) in runs.iter().zip(&terr) {
        let kind = classify(image, run, &band);
        let mut mask = Raster::new();
        let strip = (run.first_col.saturating_sub(margin), (run.last_col + margin).min(SIZE - 1));
        for row in 0..=band.bottom_row {
            for col in lo..hi {
                if !image.is_fg(col, row) {
                    continue;
                }
                let labeled = row < band.top_row
                    || match style {
                        MaskStyle::Long => true,
                        MaskStyle::Short => col >= strip.0 && col <= strip.1,
                    };
                if labeled {
                    mask.set(col, row, FOREGROUND);
                }
            }
        }
        let Some(bbox) = mask.nonzero_box() else {
            continue;
        };
        out.push(DetectedFeature {
            kind,
            bbox,
            mask,
            score: 1.0,
        });
    }
    Ok(out)
}

/// Drop the lower-scored member of every pair with IOU above `iou_threshold`.
pub fn filter_duplicates(features: &[DetectedFeature], iou_threshold: f64) -> Vec<DetectedFeature> {
    let n = features.len();
    let mut removed = vec![false; n];
    for i in 0..n {
        for j in (i + 1)..n {
            if iou(&features[i].bbox, &features[j].bbox) > iou_threshold {
                if features[i].score < features[j].score {
                    removed[i] = true;
                } else {
                    removed[j] = true;
                }
            }
        }
    }
    features
        .iter()
        .zip(&removed)
        .filter(|(_, &r)| !r)
        .map(|(f, _)| f.clone())
        .collect()
}

pub fn expand_box(b: PixelBox, margin: i32) -> PixelBox {
    PixelBox::new(
        (b.x0 - margin).max(0),
        (b.y0 - margin).max(0),
        (b.x1 + margin).min(SIZE as i32),
        (b.y1 + margin).min(SIZE as i32),
    )
}

/// Replace oracle scores by seeded draws in `[lo, 1]`, for exercising
/// filtering and AP on imperfect inputs.
pub fn perturb_scores(features: &[DetectedFeature], seed: u64, lo: f64) -> Vec<DetectedFeature> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lo = lo.clamp(0.0, 1.0);
    features
        .iter()
        .map(|f| DetectedFeature {
            score: rng.gen_range(lo..=1.0),
            ..f.clone()
        })
        .collect()
}
