//! Physical-unit description of housing profiles and their realization as
//! closed outlines made of line and circular-arc edges.
//!
//! Coordinates are in design units with `y` pointing up. The bottom wall
//! occupies `y in [0, bottom_thickness]` and vertical walls stand on its top
//! surface. Outlines are counterclockwise and carry exact arcs; flattening
//! into chords only happens when rasterizing.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{DfmError, Result};

const EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }

    fn add(self, o: Point) -> Point {
        Point::new(self.x + o.x, self.y + o.y)
    }

    fn scale(self, k: f64) -> Point {
        Point::new(self.x * k, self.y * k)
    }

    fn dot(self, o: Point) -> f64 {
        self.x * o.x + self.y * o.y
    }

    fn cross(self, o: Point) -> f64 {
        self.x * o.y - self.y * o.x
    }

    fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    fn dist(self, o: Point) -> f64 {
        self.sub(o).norm()
    }
}

/// Design units per pixel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitScale {
    units_per_pixel: f64,
}

impl UnitScale {
    pub fn new(units_per_pixel: f64) -> Result<Self> {
        if !(units_per_pixel > 0.0) || !units_per_pixel.is_finite() {
            return Err(DfmError::InvalidParameter(format!(
                "units_per_pixel must be positive, got {units_per_pixel}"
            )));
        }
        Ok(UnitScale { units_per_pixel })
    }

    /// Whole-part images: 10 units across 256 pixels.
    pub fn part() -> Self {
        UnitScale {
            units_per_pixel: 10.0 / 256.0,
        }
    }

    /// Single-feature images: 6.6 units across 256 pixels.
    pub fn feature() -> Self {
        UnitScale {
            units_per_pixel: 6.6 / 256.0,
        }
    }

    pub fn units_per_pixel(self) -> f64 {
        self.units_per_pixel
    }

    pub fn pixels_per_unit(self) -> f64 {
        1.0 / self.units_per_pixel
    }
}

/// Axis-aligned window of the design plane that an image covers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameSpec {
    pub x_range: [f64; 2],
    pub y_range: [f64; 2],
}

impl FrameSpec {
    pub fn new(x_range: [f64; 2], y_range: [f64; 2]) -> Result<Self> {
        if !(x_range[1] > x_range[0]) || !(y_range[1] > y_range[0]) {
            return Err(DfmError::InvalidParameter(format!(
                "empty frame {x_range:?} x {y_range:?}"
            )));
        }
        Ok(FrameSpec { x_range, y_range })
    }

    pub fn part() -> Self {
        FrameSpec {
            x_range: [-5.0, 5.0],
            y_range: [-2.0, 8.0],
        }
    }

    /// The bottom-wall lower edge (`y = 0`) sits 0.5 units above the frame bottom.
    pub fn feature() -> Self {
        FrameSpec {
            x_range: [-3.3, 3.3],
            y_range: [-0.5, 6.1],
        }
    }

    pub fn width(&self) -> f64 {
        self.x_range[1] - self.x_range[0]
    }

    pub fn height(&self) -> f64 {
        self.y_range[1] - self.y_range[0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WallKind {
    Thin,
    Thick,
    Side,
}

impl WallKind {
    pub const ALL: [WallKind; 3] = [WallKind::Thin, WallKind::Thick, WallKind::Side];

    /// Tens digit of the mask code.
    pub fn digit(self) -> u8 {
        match self {
            WallKind::Thin => 1,
            WallKind::Thick => 2,
            WallKind::Side => 3,
        }
    }

    pub fn from_digit(d: u8) -> Option<Self> {
        match d {
            1 => Some(WallKind::Thin),
            2 => Some(WallKind::Thick),
            3 => Some(WallKind::Side),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            WallKind::Thin => "thin",
            WallKind::Thick => "thick",
            WallKind::Side => "side",
        }
    }
}

impl std::fmt::Display for WallKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for WallKind {
    type Err = DfmError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "thin" => Ok(WallKind::Thin),
            "thick" => Ok(WallKind::Thick),
            "side" => Ok(WallKind::Side),
            other => Err(DfmError::InvalidParameter(format!("unknown wall kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DraftDirection {
    /// Base wider than the top on both faces (internal walls).
    #[default]
    Inward,
    /// Outer face of a side wall flares away from the part.
    Outward,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoreOpening {
    #[default]
    FromBelow,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoreSpec {
    /// Uniform wall thickness left around the slot.
    pub shell_thickness: f64,
    pub opening: CoreOpening,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Treatment {
    pub draft_deg: f64,
    pub draft_direction: DraftDirection,
    pub base_fillet_radius: f64,
    pub top_round_radius: f64,
    pub core: Option<CoreSpec>,
}

impl Treatment {
    pub fn is_sharp(&self) -> bool {
        self.draft_deg == 0.0
            && self.base_fillet_radius == 0.0
            && self.top_round_radius == 0.0
            && self.core.is_none()
    }
}

/// Which end of the bottom wall a side wall closes off.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartEnd {
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WallSpec {
    pub kind: WallKind,
    pub center_x: f64,
    pub top_width: f64,
    /// Measured from the top surface of the bottom wall.
    pub height: f64,
    pub treatment: Treatment,
    /// Required for side walls; their outer face is flush with this end at the top.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outer_end: Option<PartEnd>,
}

impl WallSpec {
    pub fn thin(center_x: f64, top_width: f64, height: f64) -> Self {
        WallSpec {
            kind: WallKind::Thin,
            center_x,
            top_width,
            height,
            treatment: Treatment::default(),
            outer_end: None,
        }
    }

    pub fn thick(center_x: f64, top_width: f64, height: f64) -> Self {
        WallSpec {
            kind: WallKind::Thick,
            ..WallSpec::thin(center_x, top_width, height)
        }
    }

    /// Side wall whose outer face sits at `end_x`, the matching end of the bottom span.
    pub fn side(end: PartEnd, end_x: f64, top_width: f64, height: f64) -> Self {
        let center_x = match end {
            PartEnd::Left => end_x + top_width / 2.0,
            PartEnd::Right => end_x - top_width / 2.0,
        };
        WallSpec {
            kind: WallKind::Side,
            center_x,
            top_width,
            height,
            treatment: Treatment::default(),
            outer_end: Some(end),
        }
    }

    pub fn with_treatment(mut self, treatment: Treatment) -> Self {
        self.treatment = treatment;
        self
    }

    /// Horizontal offset of a drafted face over the full wall height.
    pub fn draft_run(&self) -> f64 {
        self.height * self.treatment.draft_deg.to_radians().tan()
    }

    /// Top and base x-positions of both faces: `(left_top, right_top, left_base, right_base)`.
    pub fn faces(&self) -> (f64, f64, f64, f64) {
        let lt = self.center_x - self.top_width / 2.0;
        let rt = self.center_x + self.top_width / 2.0;
        let run = self.draft_run();
        match (self.kind, self.outer_end, self.treatment.draft_direction) {
            (WallKind::Side, Some(PartEnd::Left), DraftDirection::Outward) => (lt, rt, lt - run, rt),
            (WallKind::Side, Some(PartEnd::Left), DraftDirection::Inward) => (lt, rt, lt, rt + run),
            (WallKind::Side, Some(PartEnd::Right), DraftDirection::Outward) => (lt, rt, lt, rt + run),
            (WallKind::Side, Some(PartEnd::Right), DraftDirection::Inward) => (lt, rt, lt - run, rt),
            _ => (lt, rt, lt - run, rt + run),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartDesign {
    pub bottom_thickness: f64,
    pub bottom_span: [f64; 2],
    /// Ordered left to right.
    pub walls: Vec<WallSpec>,
    pub frame: FrameSpec,
}

impl PartDesign {
    pub fn mirrored(&self) -> PartDesign {
        let mut walls: Vec<WallSpec> = self
            .walls
            .iter()
            .rev()
            .map(|w| {
                let mut m = *w;
                m.center_x = -w.center_x;
                m.outer_end = w.outer_end.map(|e| match e {
                    PartEnd::Left => PartEnd::Right,
                    PartEnd::Right => PartEnd::Left,
                });
                m
            })
            .collect();
        walls.shrink_to_fit();
        PartDesign {
            bottom_thickness: self.bottom_thickness,
            bottom_span: [-self.bottom_span[1], -self.bottom_span[0]],
            walls,
            frame: FrameSpec {
                x_range: [-self.frame.x_range[1], -self.frame.x_range[0]],
                y_range: self.frame.y_range,
            },
        }
    }

    pub fn count_kind(&self, kind: WallKind) -> usize {
        self.walls.iter().filter(|w| w.kind == kind).count()
    }
}

/// Boundary edge from a vertex to the next one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Edge {
    Line,
    /// Circular arc; `sweep` is signed, counterclockwise positive.
    Arc { center: Point, radius: f64, sweep: f64 },
}

/// Closed outline. Edge `i` runs from `vertices[i]` to `vertices[(i + 1) % n]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polygon {
    pub vertices: Vec<Point>,
    pub edges: Vec<Edge>,
}

impl Polygon {
    pub fn from_points(points: Vec<Point>) -> Self {
        let edges = vec![Edge::Line; points.len()];
        Polygon {
            vertices: points,
            edges,
        }
    }

    /// Axis-aligned rectangle, counterclockwise from the lower-left corner.
    pub fn rectangle(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Polygon::from_points(vec![
            Point::new(x0, y0),
            Point::new(x1, y0),
            Point::new(x1, y1),
            Point::new(x0, y1),
        ])
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    fn next(&self, i: usize) -> Point {
        self.vertices[(i + 1) % self.vertices.len()]
    }

    pub fn arc_count(&self) -> usize {
        self.edges.iter().filter(|e| matches!(e, Edge::Arc { .. })).count()
    }

    /// Signed area; positive for counterclockwise outlines. Arc edges add
    /// their exact circular segment.
    pub fn signed_area(&self) -> f64 {
        let n = self.vertices.len();
        let mut twice = 0.0;
        let mut segments = 0.0;
        for i in 0..n {
            let a = self.vertices[i];
            let b = self.next(i);
            twice += a.cross(b);
            if let Edge::Arc { radius, sweep, .. } = self.edges[i] {
                segments += 0.5 * radius * radius * (sweep - sweep.sin());
            }
        }
        0.5 * twice + segments
    }

    /// Enclosed area; fails if the outline crosses itself.
    pub fn area(&self) -> Result<f64> {
        if !self.is_simple() {
            return Err(DfmError::Geometry("polygon is self-intersecting".into()));
        }
        Ok(self.signed_area().abs())
    }

    /// Chord approximation with arc sagitta at most `tolerance`.
    pub fn flatten(&self, tolerance: f64) -> Vec<Point> {
        let mut out = Vec::with_capacity(self.vertices.len() * 4);
        for (i, edge) in self.edges.iter().enumerate() {
            let a = self.vertices[i];
            out.push(a);
            if let Edge::Arc {
                center,
                radius,
                sweep,
            } = *edge
            {
                let steps = arc_steps(radius, sweep, tolerance);
                let start = (a.y - center.y).atan2(a.x - center.x);
                for k in 1..steps {
                    let t = start + sweep * (k as f64) / (steps as f64);
                    out.push(Point::new(center.x + radius * t.cos(), center.y + radius * t.sin()));
                }
            }
        }
        out
    }

    /// True when no two non-adjacent flattened edges intersect.
    pub fn is_simple(&self) -> bool {
        if self.vertices.len() < 3 {
            return false;
        }
        let pts = self.flatten_coarse();
        let n = pts.len();
        for i in 0..n {
            let (a, b) = (pts[i], pts[(i + 1) % n]);
            if a.dist(b) < 1e-12 {
                return false;
            }
            for j in (i + 2)..n {
                if i == 0 && j == n - 1 {
                    continue;
                }
                let (c, d) = (pts[j], pts[(j + 1) % n]);
                if segments_intersect(a, b, c, d) {
                    return false;
                }
            }
        }
        true
    }

    fn flatten_coarse(&self) -> Vec<Point> {
        let mut out = Vec::with_capacity(self.vertices.len() * 3);
        for (i, edge) in self.edges.iter().enumerate() {
            let a = self.vertices[i];
            out.push(a);
            if let Edge::Arc { center, radius, sweep } = *edge {
                let start = (a.y - center.y).atan2(a.x - center.x);
                for k in 1..6 {
                    let t = start + sweep * (k as f64) / 6.0;
                    out.push(Point::new(center.x + radius * t.cos(), center.y + radius * t.sin()));
                }
            }
        }
        out
    }

    /// Interior angle (degrees) at each vertex joining two line edges;
    /// `None` where an arc is involved.
    pub fn corner_angles_deg(&self) -> Vec<Option<f64>> {
        let n = self.vertices.len();
        (0..n)
            .map(|i| {
                let prev = (i + n - 1) % n;
                if matches!(self.edges[prev], Edge::Arc { .. }) || matches!(self.edges[i], Edge::Arc { .. }) {
                    return None;
                }
                let u = self.vertices[i].sub(self.vertices[prev]);
                let v = self.next(i).sub(self.vertices[i]);
                let turn = u.cross(v).atan2(u.dot(v));
                Some(180.0 - turn.to_degrees())
            })
            .collect()
    }

    /// Largest angle (radians) between an arc's end tangent and the adjacent
    /// line edge, over all arc/line junctions.
    pub fn max_tangency_error(&self) -> f64 {
        let n = self.vertices.len();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            if let Edge::Arc {
                center, sweep, ..
            } = self.edges[i]
            {
                let a = self.vertices[i];
                let b = self.next(i);
                let ccw = sweep.signum();
                let ra = a.sub(center);
                let rb = b.sub(center);
                let ta = Point::new(-ra.y * ccw, ra.x * ccw);
                let tb = Point::new(-rb.y * ccw, rb.x * ccw);
                let prev = (i + n - 1) % n;
                if matches!(self.edges[prev], Edge::Line) {
                    let dir = a.sub(self.vertices[prev]);
                    worst = worst.max(angle_between(dir, ta));
                }
                let nxt = (i + 1) % n;
                if matches!(self.edges[nxt], Edge::Line) {
                    let dir = self.next(nxt).sub(b);
                    worst = worst.max(angle_between(tb, dir));
                }
            }
        }
        worst
    }
}

fn angle_between(u: Point, v: Point) -> f64 {
    u.cross(v).atan2(u.dot(v)).abs()
}

pub(crate) fn arc_steps(radius: f64, sweep: f64, tolerance: f64) -> usize {
    if radius <= tolerance {
        return 1;
    }
    let max_step = 2.0 * (1.0 - tolerance / radius).clamp(-1.0, 1.0).acos();
    ((sweep.abs() / max_step).ceil() as usize).max(1)
}

fn orient(a: Point, b: Point, c: Point) -> f64 {
    b.sub(a).cross(c.sub(a))
}

fn on_segment(a: Point, b: Point, p: Point) -> bool {
    p.x >= a.x.min(b.x) - 1e-12
        && p.x <= a.x.max(b.x) + 1e-12
        && p.y >= a.y.min(b.y) - 1e-12
        && p.y <= a.y.max(b.y) + 1e-12
}

fn segments_intersect(a: Point, b: Point, c: Point, d: Point) -> bool {
    let d1 = orient(c, d, a);
    let d2 = orient(c, d, b);
    let d3 = orient(a, b, c);
    let d4 = orient(a, b, d);
    if ((d1 > 1e-15 && d2 < -1e-15) || (d1 < -1e-15 && d2 > 1e-15))
        && ((d3 > 1e-15 && d4 < -1e-15) || (d3 < -1e-15 && d4 > 1e-15))
    {
        return true;
    }
    (d1.abs() <= 1e-15 && on_segment(c, d, a))
        || (d2.abs() <= 1e-15 && on_segment(c, d, b))
        || (d3.abs() <= 1e-15 && on_segment(a, b, c))
        || (d4.abs() <= 1e-15 && on_segment(a, b, d))
}

/// Area of a polygon, including arc segments.
pub fn polygon_area(p: &Polygon) -> Result<f64> {
    p.area()
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum CornerMode {
    Sharp,
    /// Concave base junction; radius must fit or construction fails.
    Fillet,
    /// Convex top corner or slot corner; radius shrinks to what fits.
    Round,
}

#[derive(Debug, Clone, Copy)]
struct Corner {
    p: Point,
    radius: f64,
    mode: CornerMode,
}

impl Corner {
    fn sharp(x: f64, y: f64) -> Self {
        Corner {
            p: Point::new(x, y),
            radius: 0.0,
            mode: CornerMode::Sharp,
        }
    }

    fn fillet(x: f64, y: f64, radius: f64) -> Self {
        Corner {
            p: Point::new(x, y),
            radius,
            mode: CornerMode::Fillet,
        }
    }

    fn round(x: f64, y: f64, radius: f64) -> Self {
        Corner {
            p: Point::new(x, y),
            radius,
            mode: CornerMode::Round,
        }
    }
}

/// Above-band horizontal extent of one wall, fillet tangent points included.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WallExtent {
    pub left: f64,
    pub right: f64,
}

fn validate_treatment(w: &WallSpec, index: usize) -> Result<()> {
    let t = &w.treatment;
    let bad = |msg: &str| Err(DfmError::Geometry(format!("wall {index}: {msg}")));
    if !(w.top_width > 0.0) || !(w.height > 0.0) {
        return bad("top_width and height must be positive");
    }
    if !(0.0..=5.0).contains(&t.draft_deg) {
        return bad("draft must lie in [0, 5] degrees");
    }
    if !(0.0..=1.0).contains(&t.base_fillet_radius) || !(0.0..=1.0).contains(&t.top_round_radius) {
        return bad("radii must lie in [0, 1]");
    }
    if t.core.is_some() && w.kind != WallKind::Thick {
        return bad("only thick walls can be cored");
    }
    if w.kind == WallKind::Side && w.outer_end.is_none() {
        return bad("side wall needs an outer end");
    }
    Ok(())
}

struct Layout<'a> {
    left: Option<&'a WallSpec>,
    right: Option<&'a WallSpec>,
    interior: Vec<&'a WallSpec>,
    left_end: f64,
    right_end: f64,
}

fn layout(design: &PartDesign) -> Result<Layout<'_>> {
    let [x0, x1] = design.bottom_span;
    if !(x1 > x0) {
        return Err(DfmError::Geometry("bottom span is empty".into()));
    }
    if !(design.bottom_thickness > 0.0) {
        return Err(DfmError::Geometry("bottom thickness must be positive".into()));
    }
    for (i, w) in design.walls.iter().enumerate() {
        validate_treatment(w, i)?;
    }
    for k in WallKind::ALL {
        if design.count_kind(k) > 9 {
            return Err(DfmError::TooManyWalls(k.name().into()));
        }
    }
    let n = design.walls.len();
    let mut left = None;
    let mut right = None;
    let mut interior = Vec::new();
    for (i, w) in design.walls.iter().enumerate() {
        match (w.kind, w.outer_end) {
            (WallKind::Side, Some(PartEnd::Left)) if i == 0 => {
                if (w.center_x - (x0 + w.top_width / 2.0)).abs() > 1e-6 {
                    return Err(DfmError::Geometry("left side wall is not flush with the span end".into()));
                }
                left = Some(w);
            }
            (WallKind::Side, Some(PartEnd::Right)) if i + 1 == n && !(i == 0 && left.is_some()) => {
                if (w.center_x - (x1 - w.top_width / 2.0)).abs() > 1e-6 {
                    return Err(DfmError::Geometry("right side wall is not flush with the span end".into()));
                }
                right = Some(w);
            }
            (WallKind::Side, _) => {
                return Err(DfmError::Geometry(format!("side wall {i} is not at its end of the part")));
            }
            _ => interior.push(w),
        }
    }
    let left_end = left.map_or(x0, |w| w.faces().2.min(x0));
    let right_end = right.map_or(x1, |w| w.faces().3.max(x1));

    // Base footprints must be ordered and disjoint.
    let mut prev_right = left_end;
    for (i, w) in design.walls.iter().enumerate() {
        let (_, _, lb, rb) = w.faces();
        let lo = if w.kind == WallKind::Side && w.outer_end == Some(PartEnd::Left) { x0.min(lb) } else { lb };
        if lo < prev_right - EPS {
            return Err(DfmError::Overlap(format!("wall {i} overlaps its left neighbour or the span end")));
        }
        prev_right = rb;
    }
    if prev_right > right_end + EPS {
        return Err(DfmError::Overlap("last wall extends beyond the span end".into()));
    }
    Ok(Layout {
        left,
        right,
        interior,
        left_end,
        right_end,
    })
}

fn slot_corners(w: &WallSpec, t: f64, out: &mut Vec<Corner>) -> Result<()> {
    let Some(core) = w.treatment.core else {
        return Ok(());
    };
    let s = core.shell_thickness;
    let theta = w.treatment.draft_deg.to_radians();
    let (tan, cos) = (theta.tan(), theta.cos());
    let (lt, rt, _, _) = w.faces();
    let top = t + w.height;
    let ys = top - s;
    if !(s > 0.0) || ys <= EPS {
        return Err(DfmError::Geometry("core shell leaves no slot".into()));
    }
    let left_face = |y: f64| lt + s / cos - (top - y) * tan;
    let right_face = |y: f64| rt - s / cos + (top - y) * tan;
    if right_face(ys) - left_face(ys) <= EPS {
        return Err(DfmError::Geometry("core shell is thicker than half the wall".into()));
    }
    let r = w.treatment.base_fillet_radius;
    out.push(Corner::sharp(left_face(0.0), 0.0));
    out.push(Corner::round(left_face(ys), ys, r));
    out.push(Corner::round(right_face(ys), ys, r));
    out.push(Corner::sharp(right_face(0.0), 0.0));
    Ok(())
}

fn corner_outline(design: &PartDesign) -> Result<Vec<Corner>> {
    let t = design.bottom_thickness;
    let [x0, x1] = design.bottom_span;
    let lay = layout(design)?;
    let mut c = Vec::new();

    c.push(Corner::sharp(lay.left_end, 0.0));
    for w in design.walls.iter().filter(|w| w.treatment.core.is_some()) {
        slot_corners(w, t, &mut c)?;
    }
    c.push(Corner::sharp(lay.right_end, 0.0));

    let wall_top = |w: &WallSpec, c: &mut Vec<Corner>, outer_sharp_left: bool, outer_sharp_right: bool| {
        let (lt, rt, lb, rb) = w.faces();
        let h = t + w.height;
        let fr = w.treatment.base_fillet_radius;
        let tr = w.treatment.top_round_radius;
        if outer_sharp_right {
            c.push(Corner::sharp(rb, t));
        } else {
            c.push(Corner::fillet(rb, t, fr));
        }
        c.push(Corner::round(rt, h, tr));
        c.push(Corner::round(lt, h, tr));
        if outer_sharp_left {
            c.push(Corner::sharp(lb, t));
        } else {
            c.push(Corner::fillet(lb, t, fr));
        }
    };

    match lay.right {
        Some(w) => wall_top(w, &mut c, false, true),
        None => c.push(Corner::sharp(x1, t)),
    }
    for w in lay.interior.iter().rev() {
        wall_top(w, &mut c, false, false);
    }
    match lay.left {
        Some(w) => wall_top(w, &mut c, true, false),
        None => c.push(Corner::sharp(x0, t)),
    }
    Ok(drop_collinear(c))
}

fn drop_collinear(mut c: Vec<Corner>) -> Vec<Corner> {
    loop {
        let n = c.len();
        let mut removed = false;
        for i in 0..n {
            let prev = c[(i + n - 1) % n].p;
            let next = c[(i + 1) % n].p;
            let u = c[i].p.sub(prev);
            let v = next.sub(c[i].p);
            let degenerate = u.norm() < 1e-12 || v.norm() < 1e-12;
            let straight = u.cross(v).abs() <= 1e-12 * u.norm() * v.norm() && u.dot(v) > 0.0;
            if degenerate || (straight && c[i].mode == CornerMode::Sharp) || (straight && c[i].radius == 0.0) {
                c.remove(i);
                removed = true;
                break;
            }
        }
        if !removed {
            return c;
        }
    }
}

/// Replace rounded corners by tangent arcs.
fn build_polygon(corners: &[Corner]) -> Result<Polygon> {
    let n = corners.len();
    let mut vertices: Vec<Point> = Vec::with_capacity(n * 2);
    let mut edges: Vec<Edge> = Vec::with_capacity(n * 2);
    let push = |p: Point, e: Edge, vertices: &mut Vec<Point>, edges: &mut Vec<Edge>| {
        if let Some(last) = vertices.last() {
            if last.dist(p) < 1e-12 && matches!(edges.last(), Some(Edge::Line)) {
                vertices.pop();
                edges.pop();
            }
        }
        vertices.push(p);
        edges.push(e);
    };
    for i in 0..n {
        let prev = corners[(i + n - 1) % n].p;
        let next = corners[(i + 1) % n].p;
        let cur = corners[i];
        let u_raw = cur.p.sub(prev);
        let v_raw = next.sub(cur.p);
        let (len_in, len_out) = (u_raw.norm(), v_raw.norm());
        let u = u_raw.scale(1.0 / len_in);
        let v = v_raw.scale(1.0 / len_out);
        let turn = u.cross(v).atan2(u.dot(v));
        let half_tan = (turn.abs() / 2.0).tan();
        let mut r = cur.radius;
        if cur.mode == CornerMode::Sharp || r <= 0.0 || turn.abs() < 1e-12 {
            push(cur.p, Edge::Line, &mut vertices, &mut edges);
            continue;
        }
        let limit = 0.5 * len_in.min(len_out) / half_tan;
        match cur.mode {
            CornerMode::Fillet if r > limit + 1e-12 => {
                return Err(DfmError::Geometry(format!(
                    "fillet radius {r:.4} exceeds half of an adjacent edge at ({:.4}, {:.4})",
                    cur.p.x, cur.p.y
                )));
            }
            CornerMode::Round => r = r.min(limit),
            _ => {}
        }
        let d = r * half_tan;
        let t1 = cur.p.sub(u.scale(d));
        let t2 = cur.p.add(v.scale(d));
        let side = turn.signum();
        let normal = Point::new(-u.y * side, u.x * side);
        let center = t1.add(normal.scale(r));
        push(
            t1,
            Edge::Arc {
                center,
                radius: r,
                sweep: turn,
            },
            &mut vertices,
            &mut edges,
        );
        push(t2, Edge::Line, &mut vertices, &mut edges);
    }
    if vertices.len() > 1 && vertices[0].dist(*vertices.last().unwrap()) < 1e-12 && matches!(edges.last(), Some(Edge::Line)) {
        vertices.pop();
        edges.pop();
    }
    Ok(Polygon { vertices, edges })
}

/// The outline of the bottom wall united with every wall, treatments applied.
pub fn profile_polygon(design: &PartDesign) -> Result<Polygon> {
    let corners = corner_outline(design)?;
    let poly = build_polygon(&corners)?;
    if !poly.is_simple() {
        return Err(DfmError::Overlap("treated walls intersect".into()));
    }
    if poly.signed_area() <= 0.0 {
        return Err(DfmError::Geometry("outline is not counterclockwise".into()));
    }
    Ok(poly)
}

/// Horizontal extent of each wall above the bottom band, in wall order.
pub fn wall_extents(design: &PartDesign) -> Result<Vec<WallExtent>> {
    let lay = layout(design)?;
    let corners = corner_outline(design)?;
    let t = design.bottom_thickness;
    let fillet_reach = |x: f64, radius: f64| -> f64 {
        // Tangent distance of a fillet sitting at (x, t).
        corners
            .iter()
            .enumerate()
            .find(|(_, c)| (c.p.x - x).abs() < 1e-12 && (c.p.y - t).abs() < 1e-12 && c.mode == CornerMode::Fillet)
            .map(|(i, _)| {
                let n = corners.len();
                let prev = corners[(i + n - 1) % n].p;
                let next = corners[(i + 1) % n].p;
                let u = corners[i].p.sub(prev);
                let v = next.sub(corners[i].p);
                let turn = u.cross(v).atan2(u.dot(v)).abs();
                radius * (turn / 2.0).tan()
            })
            .unwrap_or(0.0)
    };
    Ok(design
        .walls
        .iter()
        .map(|w| {
            let (_, _, lb, rb) = w.faces();
            let fr = w.treatment.base_fillet_radius;
            let left = match (w.kind, w.outer_end) {
                (WallKind::Side, Some(PartEnd::Left)) => lay.left_end,
                _ => lb - fillet_reach(lb, fr),
            };
            let right = match (w.kind, w.outer_end) {
                (WallKind::Side, Some(PartEnd::Right)) => lay.right_end,
                _ => rb + fillet_reach(rb, fr),
            };
            WallExtent { left, right }
        })
        .collect())
}

/// Horizontal extent of the bottom wall including any side-wall flare.
pub fn band_extent(design: &PartDesign) -> Result<(f64, f64)> {
    let lay = layout(design)?;
    Ok((lay.left_end, lay.right_end))
}

/// Full circle made of four quarter arcs.
pub fn circle(center: Point, radius: f64) -> Polygon {
    let pts = [
        Point::new(center.x + radius, center.y),
        Point::new(center.x, center.y + radius),
        Point::new(center.x - radius, center.y),
        Point::new(center.x, center.y - radius),
    ];
    Polygon {
        vertices: pts.to_vec(),
        edges: vec![
            Edge::Arc {
                center,
                radius,
                sweep: PI / 2.0
            };
            4
        ],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_design(walls: Vec<WallSpec>) -> PartDesign {
        PartDesign {
            bottom_thickness: 1.0,
            bottom_span: [-4.8, 4.8],
            walls,
            frame: FrameSpec::part(),
        }
    }

    fn drafted(mut w: WallSpec, deg: f64, dir: DraftDirection) -> WallSpec {
        w.treatment.draft_deg = deg;
        w.treatment.draft_direction = dir;
        w
    }

    #[test]
    fn unit_square_area() {
        let sq = Polygon::rectangle(0.0, 0.0, 1.0, 1.0);
        assert!((polygon_area(&sq).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn filleted_rectangle_area() {
        // Exact deficit oracle: each 90 degree corner loses (1 - pi/4) r^2.
        let c = [
            Corner::round(0.0, 0.0, 0.5),
            Corner::round(2.0, 0.0, 0.5),
            Corner::round(2.0, 3.0, 0.5),
            Corner::round(0.0, 3.0, 0.5),
        ];
        let p = build_polygon(&c).unwrap();
        let expected = 6.0 - (4.0 - PI) * 0.25;
        assert!((polygon_area(&p).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 5.7854).abs() < 1e-4);
        assert!(p.max_tangency_error() < 1e-9);
    }

    #[test]
    fn four_arc_circle_is_pi() {
        let c = circle(Point::new(0.3, -0.2), 1.0);
        assert!((polygon_area(&c).unwrap() - PI).abs() < 1e-9);
    }

    #[test]
    fn self_intersection_is_rejected() {
        let bow = Polygon::from_points(vec![
            Point::new(0.0, 0.0),
            Point::new(1.0, 1.0),
            Point::new(1.0, 0.0),
            Point::new(0.0, 1.0),
        ]);
        assert!(matches!(polygon_area(&bow), Err(DfmError::Geometry(_))));
    }

    #[test]
    fn sharp_design_is_rectilinear() {
        let d = base_design(vec![
            WallSpec::side(PartEnd::Left, -4.8, 0.8, 4.0),
            WallSpec::thin(0.0, 0.5, 3.0),
            WallSpec::side(PartEnd::Right, 4.8, 1.2, 5.0),
        ]);
        let p = profile_polygon(&d).unwrap();
        assert_eq!(p.arc_count(), 0);
        for a in p.corner_angles_deg() {
            let a = a.unwrap();
            assert!((a - 90.0).abs() < 1e-9 || (a - 270.0).abs() < 1e-9, "angle {a}");
        }
        // band 9.6 + walls 0.8*4 + 0.5*3 + 1.2*5
        let expected = 9.6 + 3.2 + 1.5 + 6.0;
        assert!((p.area().unwrap() - expected).abs() < 1e-9);
    }

    #[test]
    fn inward_draft_widens_base() {
        let w = drafted(WallSpec::thin(0.0, 0.5, 4.0), 1.0, DraftDirection::Inward);
        let (lt, rt, lb, rb) = w.faces();
        assert!((rt - lt - 0.5).abs() < 1e-12);
        // tan(1 deg) = 0.0174551
        assert!((rb - lb - (0.5 + 2.0 * 4.0 * 0.017_455_064_928_217_585)).abs() < 1e-12);
        assert!((rb - lb - 0.6396).abs() < 5e-5);
    }

    #[test]
    fn side_outward_draft_flares_outer_face_only() {
        let w = drafted(WallSpec::side(PartEnd::Left, -4.8, 1.0, 5.0), 1.5, DraftDirection::Outward);
        let (lt, rt, lb, rb) = w.faces();
        assert_eq!(rt, rb);
        let run = lt - lb;
        assert!((run - 5.0 * 1.5f64.to_radians().tan()).abs() < 1e-12);
        assert!((run - 0.1309).abs() < 5e-5);
        let d = base_design(vec![w]);
        let (le, _) = band_extent(&d).unwrap();
        assert!((le - (-4.8 - run)).abs() < 1e-12);
        profile_polygon(&d).unwrap();
    }

    #[test]
    fn draft_monotonically_increases_area() {
        let mut last = 0.0;
        for k in 0..=10 {
            let w = drafted(WallSpec::thin(0.0, 0.5, 4.0), k as f64 * 0.5, DraftDirection::Inward);
            let a = profile_polygon(&base_design(vec![w])).unwrap().area().unwrap();
            assert!(a > last);
            last = a;
        }
    }

    #[test]
    fn top_round_removes_exact_corner_pair_deficit() {
        let sharp = WallSpec::thick(0.0, 2.0, 3.0);
        let mut rounded = sharp;
        rounded.treatment.top_round_radius = 0.4;
        let a0 = profile_polygon(&base_design(vec![sharp])).unwrap().area().unwrap();
        let a1 = profile_polygon(&base_design(vec![rounded])).unwrap().area().unwrap();
        assert!((a0 - a1 - (4.0 - PI) / 2.0 * 0.16).abs() < 1e-12);
    }

    #[test]
    fn fully_treated_walls_are_tangent_continuous() {
        let t = Treatment {
            draft_deg: 1.0,
            draft_direction: DraftDirection::Inward,
            base_fillet_radius: 0.5,
            top_round_radius: 0.5,
            core: None,
        };
        let mut thick = WallSpec::thick(1.5, 2.0, 4.0).with_treatment(t);
        thick.treatment.core = Some(CoreSpec {
            shell_thickness: 0.5,
            opening: CoreOpening::FromBelow,
        });
        let side_t = Treatment {
            draft_deg: 1.5,
            draft_direction: DraftDirection::Outward,
            ..t
        };
        let d = base_design(vec![
            WallSpec::side(PartEnd::Left, -4.8, 1.0, 4.5).with_treatment(side_t),
            WallSpec::thin(-1.5, 0.5, 4.0).with_treatment(t),
            thick,
            WallSpec::side(PartEnd::Right, 4.8, 1.0, 4.5).with_treatment(side_t),
        ]);
        let p = profile_polygon(&d).unwrap();
        assert!(p.arc_count() > 10);
        assert!(p.max_tangency_error() < 1e-9);
        assert!(p.area().unwrap() > 9.6);
    }

    #[test]
    fn thin_top_round_clamps_to_full_round() {
        let t = Treatment {
            top_round_radius: 0.5,
            ..Treatment::default()
        };
        let d = base_design(vec![WallSpec::thin(0.0, 0.5, 3.0).with_treatment(t)]);
        let p = profile_polygon(&d).unwrap();
        // Both corners collapse into arcs of radius 0.25 meeting at the apex.
        let radii: Vec<f64> = p
            .edges
            .iter()
            .filter_map(|e| match e {
                Edge::Arc { radius, .. } => Some(*radius),
                _ => None,
            })
            .collect();
        assert_eq!(radii.len(), 2);
        for r in radii {
            assert!((r - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn oversized_base_fillet_is_an_error() {
        let t = Treatment {
            base_fillet_radius: 0.5,
            ..Treatment::default()
        };
        let d = base_design(vec![
            WallSpec::thin(-0.4, 0.2, 3.0).with_treatment(t),
            WallSpec::thin(0.4, 0.2, 3.0).with_treatment(t),
        ]);
        assert!(matches!(profile_polygon(&d), Err(DfmError::Geometry(_))));
    }

    #[test]
    fn overlapping_walls_are_an_error() {
        let d = base_design(vec![WallSpec::thick(0.0, 2.0, 3.0), WallSpec::thin(0.5, 0.5, 3.0)]);
        assert!(matches!(profile_polygon(&d), Err(DfmError::Overlap(_))));
    }

    #[test]
    fn profile_is_deterministic_and_mirrors() {
        let t = Treatment {
            draft_deg: 1.0,
            base_fillet_radius: 0.45,
            top_round_radius: 0.55,
            ..Treatment::default()
        };
        let d = base_design(vec![
            WallSpec::side(PartEnd::Left, -4.8, 0.7, 3.0),
            WallSpec::thin(0.9, 0.5, 3.5).with_treatment(t),
            WallSpec::side(PartEnd::Right, 4.8, 1.3, 4.1),
        ]);
        let a = profile_polygon(&d).unwrap();
        let b = profile_polygon(&d).unwrap();
        assert_eq!(a, b);
        let m = profile_polygon(&d.mirrored()).unwrap();
        assert!((a.area().unwrap() - m.area().unwrap()).abs() < 1e-12);
    }

    #[test]
    fn extents_include_fillets() {
        let t = Treatment {
            base_fillet_radius: 0.5,
            ..Treatment::default()
        };
        let d = base_design(vec![WallSpec::thin(0.0, 0.5, 3.0).with_treatment(t)]);
        let e = wall_extents(&d).unwrap();
        assert!((e[0].left + 0.75).abs() < 1e-12);
        assert!((e[0].right - 0.75).abs() < 1e-12);
    }
}
