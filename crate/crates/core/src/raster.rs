//! 256x256 grayscale rasters: part images, feature crops, and instance masks.
//!
//! Pixel `(col, row)` has its center at
//! `(x0 + (col + 0.5) * upp, y1 - (row + 0.5) * upp)` for a frame with lower-left
//! corner `(x0, y0)` and top edge `y1`. A pixel is foreground iff its center
//! lies strictly inside the outline.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{DfmError, Result};
use crate::geometry::{self, FrameSpec, PartDesign, Point, Polygon, UnitScale};

pub const SIZE: usize = 256;
pub const FOREGROUND: u8 = 255;

/// Part-to-feature magnification between the two canonical scales.
pub const FEATURE_MAGNIFICATION: f64 = 10.0 / 6.6;

/// Feature-frame row coordinate of the bottom-wall lower edge (0.5 units up).
pub fn feature_band_edge_row() -> f64 {
    SIZE as f64 - 0.5 / UnitScale::feature().units_per_pixel()
}

#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Raster {
    pixels: Vec<u8>,
}

impl std::fmt::Debug for Raster {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Raster")
            .field("nonzero", &self.count_nonzero())
            .field("bbox", &self.nonzero_box())
            .finish()
    }
}

impl Default for Raster {
    fn default() -> Self {
        Raster::new()
    }
}

impl Raster {
    pub fn new() -> Self {
        Raster {
            pixels: vec![0; SIZE * SIZE],
        }
    }

    pub fn filled(value: u8) -> Self {
        Raster {
            pixels: vec![value; SIZE * SIZE],
        }
    }

    pub fn from_pixels(pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != SIZE * SIZE {
            return Err(DfmError::ShapeMismatch(format!(
                "expected {} pixels, got {}",
                SIZE * SIZE,
                pixels.len()
            )));
        }
        Ok(Raster { pixels })
    }

    pub fn width(&self) -> usize {
        SIZE
    }

    pub fn height(&self) -> usize {
        SIZE
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> u8 {
        self.pixels[row * SIZE + col]
    }

    #[inline]
    pub fn set(&mut self, col: usize, row: usize, v: u8) {
        self.pixels[row * SIZE + col] = v;
    }

    #[inline]
    pub fn is_fg(&self, col: usize, row: usize) -> bool {
        self.pixels[row * SIZE + col] != 0
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn row(&self, row: usize) -> &[u8] {
        &self.pixels[row * SIZE..(row + 1) * SIZE]
    }

    pub fn count_nonzero(&self) -> usize {
        self.pixels.iter().filter(|&&p| p != 0).count()
    }

    pub fn count_value(&self, v: u8) -> usize {
        self.pixels.iter().filter(|&&p| p == v).count()
    }

    pub fn is_binary(&self) -> bool {
        self.pixels.iter().all(|&p| p == 0 || p == FOREGROUND)
    }

    /// Number of pixels whose foreground status differs.
    pub fn diff_count(&self, other: &Raster) -> usize {
        self.pixels
            .iter()
            .zip(&other.pixels)
            .filter(|(a, b)| (**a != 0) != (**b != 0))
            .count()
    }

    pub fn mirrored(&self) -> Raster {
        let mut out = Raster::new();
        for row in 0..SIZE {
            for col in 0..SIZE {
                out.set(SIZE - 1 - col, row, self.get(col, row));
            }
        }
        out
    }

    /// Tight box of nonzero pixels.
    pub fn nonzero_box(&self) -> Option<PixelBox> {
        self.box_where(|v| v != 0)
    }

    pub fn box_where(&self, pred: impl Fn(u8) -> bool) -> Option<PixelBox> {
        let (mut x0, mut y0, mut x1, mut y1) = (SIZE, SIZE, 0, 0);
        for row in 0..SIZE {
            for col in 0..SIZE {
                if pred(self.get(col, row)) {
                    x0 = x0.min(col);
                    x1 = x1.max(col + 1);
                    y0 = y0.min(row);
                    y1 = y1.max(row + 1);
                }
            }
        }
        (x1 > x0).then(|| PixelBox::new(x0 as i32, y0 as i32, x1 as i32, y1 as i32))
    }

    /// Mask brightened by 8x for viewing.
    pub fn visualization(&self) -> Raster {
        Raster {
            pixels: self.pixels.iter().map(|&p| p.saturating_mul(8)).collect(),
        }
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let img = image::GrayImage::from_raw(SIZE as u32, SIZE as u32, self.pixels.clone())
            .expect("raster buffer has the right size");
        img.save_with_format(path, image::ImageFormat::Png).map_err(|e| image_err(path, e))
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Raster> {
        let path = path.as_ref();
        let img = image::open(path).map_err(|e| image_err(path, e))?;
        let gray = img.to_luma8();
        if gray.width() as usize != SIZE || gray.height() as usize != SIZE {
            return Err(DfmError::ShapeMismatch(format!(
                "{}: expected 256x256, got {}x{}",
                path.display(),
                gray.width(),
                gray.height()
            )));
        }
        Raster::from_pixels(gray.into_raw())
    }
}

fn image_err(path: &Path, e: image::ImageError) -> DfmError {
    match e {
        image::ImageError::IoError(io) => DfmError::io(path, io),
        other => DfmError::Image {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    }
}

/// Side-by-side before/after sheet (512x256) for visual inspection.
pub fn save_sheet(before: &Raster, after: &Raster, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut img = image::GrayImage::new((2 * SIZE + 4) as u32, SIZE as u32);
    for row in 0..SIZE {
        for col in 0..SIZE {
            img.put_pixel(col as u32, row as u32, image::Luma([before.get(col, row)]));
            img.put_pixel((col + SIZE + 4) as u32, row as u32, image::Luma([after.get(col, row)]));
        }
        for k in 0..4 {
            img.put_pixel((SIZE + k) as u32, row as u32, image::Luma([128]));
        }
    }
    img.save_with_format(path, image::ImageFormat::Png).map_err(|e| image_err(path, e))
}

/// Half-open pixel rectangle `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PixelBox {
    pub x0: i32,
    pub y0: i32,
    pub x1: i32,
    pub y1: i32,
}

impl PixelBox {
    pub const fn new(x0: i32, y0: i32, x1: i32, y1: i32) -> Self {
        PixelBox { x0, y0, x1, y1 }
    }

    pub fn is_valid(&self) -> bool {
        self.x0 < self.x1 && self.y0 < self.y1
    }

    pub fn width(&self) -> i32 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> i32 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> i64 {
        if self.is_valid() {
            self.width() as i64 * self.height() as i64
        } else {
            0
        }
    }

    pub fn intersection(&self, o: &PixelBox) -> Option<PixelBox> {
        let b = PixelBox::new(self.x0.max(o.x0), self.y0.max(o.y0), self.x1.min(o.x1), self.y1.min(o.y1));
        b.is_valid().then_some(b)
    }

    pub fn clamped(&self) -> Option<PixelBox> {
        self.intersection(&PixelBox::new(0, 0, SIZE as i32, SIZE as i32))
    }

    pub fn contains(&self, col: i32, row: i32) -> bool {
        col >= self.x0 && col < self.x1 && row >= self.y0 && row < self.y1
    }
}

/// Geometry of one crop into the feature frame: `feature = dest_offset + scale_factor * (part - source_box.origin)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropTransform {
    pub source_box: PixelBox,
    pub scale_factor: f64,
    pub dest_offset: [f64; 2],
}

impl CropTransform {
    pub fn to_feature(&self, part: [f64; 2]) -> [f64; 2] {
        [
            self.dest_offset[0] + self.scale_factor * (part[0] - self.source_box.x0 as f64),
            self.dest_offset[1] + self.scale_factor * (part[1] - self.source_box.y0 as f64),
        ]
    }

    pub fn to_part(&self, feature: [f64; 2]) -> [f64; 2] {
        [
            self.source_box.x0 as f64 + (feature[0] - self.dest_offset[0]) / self.scale_factor,
            self.source_box.y0 as f64 + (feature[1] - self.dest_offset[1]) / self.scale_factor,
        ]
    }
}

/// Pixel-center scan conversion of a polygon. `origin` is the frame's top-left
/// corner in design units.
pub fn rasterize_polygon(poly: &Polygon, origin: Point, scale: UnitScale) -> Raster {
    let upp = scale.units_per_pixel();
    let pts = poly.flatten(0.25 * upp);
    let n = pts.len();
    let mut out = Raster::new();
    let mut xs: Vec<f64> = Vec::with_capacity(32);
    let eps = 1e-9;
    for row in 0..SIZE {
        let y = origin.y - (row as f64 + 0.5) * upp;
        xs.clear();
        for i in 0..n {
            let a = pts[i];
            let b = pts[(i + 1) % n];
            if (a.y <= y && y < b.y) || (b.y <= y && y < a.y) {
                xs.push(a.x + (y - a.y) * (b.x - a.x) / (b.y - a.y));
            }
        }
        xs.sort_by(f64::total_cmp);
        for pair in xs.chunks_exact(2) {
            let (lo, hi) = (pair[0] + eps, pair[1] - eps);
            let first = (((lo - origin.x) / upp - 0.5).floor() as i64 + 1).max(0);
            let last = (((hi - origin.x) / upp - 0.5).ceil() as i64 - 1).min(SIZE as i64 - 1);
            let mut col = (first - 1).max(0);
            while col <= last {
                let xc = origin.x + (col as f64 + 0.5) * upp;
                if xc > lo && xc < hi {
                    out.set(col as usize, row, FOREGROUND);
                }
                col += 1;
            }
        }
    }
    out
}

fn frame_origin(frame: &FrameSpec) -> Point {
    Point::new(frame.x_range[0], frame.y_range[1])
}

fn check_fits(design: &PartDesign, frame: &FrameSpec, scale: UnitScale) -> Result<()> {
    let (l, r) = geometry::band_extent(design)?;
    let top = design
        .walls
        .iter()
        .map(|w| design.bottom_thickness + w.height)
        .fold(design.bottom_thickness, f64::max);
    let covered_w = SIZE as f64 * scale.units_per_pixel();
    let x_hi = frame.x_range[1].min(frame.x_range[0] + covered_w);
    let y_lo = frame.y_range[0].max(frame.y_range[1] - covered_w);
    if l < frame.x_range[0] || r > x_hi || 0.0 < y_lo || top > frame.y_range[1] {
        return Err(DfmError::FrameOverflow(format!(
            "design spans x [{l:.3}, {r:.3}], y [0, {top:.3}]; frame covers x [{:.3}, {x_hi:.3}], y [{y_lo:.3}, {:.3}]",
            frame.x_range[0], frame.y_range[1]
        )));
    }
    Ok(())
}

/// Binary image of a design: 255 inside the treated profile, 0 elsewhere.
pub fn rasterize(design: &PartDesign, frame: &FrameSpec, scale: UnitScale) -> Result<Raster> {
    check_fits(design, frame, scale)?;
    let poly = geometry::profile_polygon(design)?;
    Ok(rasterize_polygon(&poly, frame_origin(frame), scale))
}

/// Image of a design in its own frame at 256 pixels across.
pub fn rasterize_default(design: &PartDesign) -> Result<Raster> {
    let scale = UnitScale::new(design.frame.width() / SIZE as f64)?;
    rasterize(design, &design.frame, scale)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskStyle {
    /// Bottom wall split among instances at midpoints between walls.
    #[default]
    Long,
    /// Only a bottom strip under each wall (plus 0.5 unit margin) is labeled.
    Short,
}

impl std::str::FromStr for MaskStyle {
    type Err = DfmError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "long" => Ok(MaskStyle::Long),
            "short" => Ok(MaskStyle::Short),
            other => Err(DfmError::InvalidParameter(format!("unknown mask style {other:?}"))),
        }
    }
}

/// Per-wall mask codes: tens digit is the wall kind, ones digit the instance (1-9, left to right per kind).
pub fn mask_codes(design: &PartDesign) -> Result<Vec<u8>> {
    let mut counters = [0u8; 4];
    design
        .walls
        .iter()
        .map(|w| {
            let d = w.kind.digit();
            counters[d as usize] += 1;
            if counters[d as usize] > 9 {
                return Err(DfmError::TooManyWalls(w.kind.name().into()));
            }
            Ok(10 * d + counters[d as usize])
        })
        .collect()
}

/// Column-space territories `[lo, hi)` (design units) for each wall.
pub(crate) fn territories(design: &PartDesign) -> Result<Vec<[f64; 2]>> {
    let ext = geometry::wall_extents(design)?;
    let n = ext.len();
    Ok((0..n)
        .map(|i| {
            let lo = if i == 0 { f64::NEG_INFINITY } else { 0.5 * (ext[i - 1].right + ext[i].left) };
            let hi = if i + 1 == n { f64::INFINITY } else { 0.5 * (ext[i].right + ext[i + 1].left) };
            [lo, hi]
        })
        .collect())
}

pub fn render_mask(design: &PartDesign, style: MaskStyle) -> Result<Raster> {
    let scale = UnitScale::new(design.frame.width() / SIZE as f64)?;
    render_mask_with(design, style, &design.frame, scale)
}

pub fn render_mask_with(design: &PartDesign, style: MaskStyle, frame: &FrameSpec, scale: UnitScale) -> Result<Raster> {
    let codes = mask_codes(design)?;
    let image = rasterize(design, frame, scale)?;
    let ext = geometry::wall_extents(design)?;
    let terr = territories(design)?;
    let t = design.bottom_thickness;
    let upp = scale.units_per_pixel();
    let origin = frame_origin(frame);
    let mut mask = Raster::new();
    if codes.is_empty() {
        return Ok(mask);
    }
    for row in 0..SIZE {
        let y = origin.y - (row as f64 + 0.5) * upp;
        for col in 0..SIZE {
            if !image.is_fg(col, row) {
                continue;
            }
            let x = origin.x + (col as f64 + 0.5) * upp;
            let Some(i) = terr.iter().position(|r| x >= r[0] && x < r[1]) else {
                continue;
            };
            let labeled = match style {
                MaskStyle::Long => true,
                MaskStyle::Short => y > t || (x >= ext[i].left - 0.5 * t && x <= ext[i].right + 0.5 * t),
            };
            if labeled {
                mask.set(col, row, codes[i]);
            }
        }
    }
    Ok(mask)
}

fn bilinear_fg(src: &Raster, x: f64, y: f64, bounds: &PixelBox) -> bool {
    // `x`, `y` in pixel-center coordinates; samples clamp to `bounds`.
    let fx = x.floor();
    let fy = y.floor();
    let (ax, ay) = (x - fx, y - fy);
    let clamp_x = |v: i64| v.clamp(bounds.x0 as i64, bounds.x1 as i64 - 1) as usize;
    let clamp_y = |v: i64| v.clamp(bounds.y0 as i64, bounds.y1 as i64 - 1) as usize;
    let (x0, x1) = (clamp_x(fx as i64), clamp_x(fx as i64 + 1));
    let (y0, y1) = (clamp_y(fy as i64), clamp_y(fy as i64 + 1));
    let v = |c: usize, r: usize| if src.is_fg(c, r) { 255.0 } else { 0.0 };
    let top = v(x0, y0) * (1.0 - ax) + v(x1, y0) * ax;
    let bot = v(x0, y1) * (1.0 - ax) + v(x1, y1) * ax;
    top * (1.0 - ay) + bot * ay >= 128.0
}

/// Crop at the canonical part-to-feature magnification.
pub fn crop_to_feature_frame(image: &Raster, bbox: PixelBox) -> Result<(Raster, CropTransform)> {
    crop_to_feature_frame_at(image, bbox, FEATURE_MAGNIFICATION)
}

/// Crop `bbox`, magnify by `scale_factor`, center horizontally and put the
/// bottom-wall lower edge 0.5 units above the feature-frame bottom.
pub fn crop_to_feature_frame_at(image: &Raster, bbox: PixelBox, scale_factor: f64) -> Result<(Raster, CropTransform)> {
    let b = bbox
        .clamped()
        .ok_or_else(|| DfmError::InvalidParameter(format!("box {bbox:?} does not intersect the image")))?;
    if !(scale_factor > 0.0) {
        return Err(DfmError::InvalidParameter(format!("scale factor {scale_factor}")));
    }
    let (w, h) = (b.width() as f64, b.height() as f64);
    let lowest = (b.y0..b.y1)
        .rev()
        .find(|&r| (b.x0..b.x1).any(|c| image.is_fg(c as usize, r as usize)));
    let dx = 0.5 * SIZE as f64 - scale_factor * w / 2.0;
    let dy = match lowest {
        Some(r) => feature_band_edge_row() - scale_factor * ((r + 1 - b.y0) as f64),
        None => SIZE as f64 - scale_factor * h,
    };
    let slack = 1e-9;
    if dx < -slack
        || dy < -slack
        || dx + scale_factor * w > SIZE as f64 + slack
        || dy + scale_factor * h > SIZE as f64 + slack
    {
        return Err(DfmError::CropTooLarge {
            width: scale_factor * w,
            height: scale_factor * h,
        });
    }
    let t = CropTransform {
        source_box: b,
        scale_factor,
        dest_offset: [dx, dy],
    };
    if lowest.is_none() {
        return Ok((Raster::new(), t));
    }
    Ok((resample_to_feature(image, &t, b), t))
}

/// Sample `image` into the feature frame through `t`, reading only inside `bounds`.
pub fn resample_to_feature(image: &Raster, t: &CropTransform, bounds: PixelBox) -> Raster {
    let mut out = Raster::new();
    let b = bounds;
    for fr in 0..SIZE {
        for fc in 0..SIZE {
            let [px, py] = t.to_part([fc as f64 + 0.5, fr as f64 + 0.5]);
            if px < b.x0 as f64 || px >= b.x1 as f64 || py < b.y0 as f64 || py >= b.y1 as f64 {
                continue;
            }
            if bilinear_fg(image, px - 0.5, py - 0.5, &b) {
                out.set(fc, fr, FOREGROUND);
            }
        }
    }
    out
}

/// Outcome of pasting one feature back.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PasteStats {
    /// Foreground pixels written outside the source box onto background.
    pub overflow_pixels: usize,
    /// Feature content fell beyond the canvas edge and was dropped.
    pub clamped: bool,
}

pub fn paste_from_feature_frame(canvas: &Raster, feature: &Raster, t: &CropTransform) -> Raster {
    paste_with_stats(canvas, feature, t).0
}

/// Replace `t.source_box` with the inverse-mapped feature; beyond the box (same rows)
/// only foreground is written, so outward growth survives without erasing neighbours.
pub fn paste_with_stats(canvas: &Raster, feature: &Raster, t: &CropTransform) -> (Raster, PasteStats) {
    paste_replacing(canvas, feature, t, t.source_box)
}

/// Like [`paste_with_stats`], but background is written only inside `replace`;
/// elsewhere in the box foreground is merged.
pub fn paste_replacing(canvas: &Raster, feature: &Raster, t: &CropTransform, replace: PixelBox) -> (Raster, PasteStats) {
    let mut out = canvas.clone();
    let mut stats = PasteStats::default();
    let b = t.source_box;
    let full = PixelBox::new(0, 0, SIZE as i32, SIZE as i32);
    for row in b.y0..b.y1 {
        for col in 0..SIZE as i32 {
            let [fx, fy] = t.to_feature([col as f64 + 0.5, row as f64 + 0.5]);
            let in_box = col >= b.x0 && col < b.x1;
            if !(0.0..SIZE as f64).contains(&fx) || !(0.0..SIZE as f64).contains(&fy) {
                if in_box && replace.contains(col, row) {
                    out.set(col as usize, row as usize, 0);
                }
                continue;
            }
            let fg = bilinear_fg(feature, fx - 0.5, fy - 0.5, &full);
            if in_box && (fg || replace.contains(col, row)) {
                out.set(col as usize, row as usize, if fg { FOREGROUND } else { 0 });
            } else if fg {
                if !canvas.is_fg(col as usize, row as usize) {
                    stats.overflow_pixels += 1;
                }
                out.set(col as usize, row as usize, FOREGROUND);
            }
        }
    }
    // Feature columns that map past either canvas edge.
    let left_edge = t.to_feature([0.0, 0.0])[0];
    let right_edge = t.to_feature([SIZE as f64, 0.0])[0];
    let row_lo = t.to_feature([0.0, b.y0 as f64])[1].floor().max(0.0) as usize;
    let row_hi = (t.to_feature([0.0, b.y1 as f64])[1].ceil() as usize).min(SIZE);
    'scan: for fr in row_lo..row_hi {
        for fc in 0..SIZE {
            let x = fc as f64 + 0.5;
            if (x < left_edge || x > right_edge) && feature.is_fg(fc, fr) {
                stats.clamped = true;
                break 'scan;
            }
        }
    }
    (out, stats)
}
