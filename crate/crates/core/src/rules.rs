//! Injection-molding rule engine.
//!
//! Maps a wall to a manufacturable one in a fixed order: aspect ratio, coring
//! (thick walls), draft, rounds. Dimensions already inside their allowed
//! range are never rewritten, so compliant walls pass through unchanged.

use rand::distributions::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DfmError, Result};
use crate::geometry::{CoreOpening, CoreSpec, DraftDirection, PartEnd, WallKind, WallSpec};

const TOL: f64 = 1e-9;

/// How a rewritten dimension is chosen inside its allowed range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    #[default]
    Midpoint,
    SeededUniform(u64),
}

impl Target {
    /// Value in `range`; seeded draws lie strictly inside it.
    fn pick(self, range: [f64; 2], stream: u64) -> f64 {
        match self {
            Target::Midpoint => 0.5 * (range[0] + range[1]),
            Target::SeededUniform(seed) => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(stream);
                let u: f64 = rng.sample(Open01);
                range[0] + (range[1] - range[0]) * u
            }
        }
    }
}

const STREAM_WIDTH: u64 = 1;
const STREAM_SHELL: u64 = 2;
const STREAM_FILLET: u64 = 3;
const STREAM_ROUND: u64 = 4;

/// Rule limits, all relative to the bottom-wall thickness except angles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RuleBounds {
    pub aspect_max: f64,
    pub width_range: [f64; 2],
    pub side_width: f64,
    pub shell_range: [f64; 2],
    pub draft_internal_deg: f64,
    pub draft_side_deg: f64,
    pub round_range: [f64; 2],
}

impl Default for RuleBounds {
    fn default() -> Self {
        RuleBounds {
            aspect_max: 4.0,
            width_range: [0.4, 0.6],
            side_width: 1.0,
            shell_range: [0.4, 0.6],
            draft_internal_deg: 1.0,
            draft_side_deg: 1.5,
            round_range: [0.4, 0.6],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RulePolicy {
    pub width_target: Target,
    pub round_radius_target: Target,
    pub bounds: RuleBounds,
}

impl RulePolicy {
    pub fn midpoint() -> Self {
        RulePolicy::default()
    }

    pub fn seeded(seed: u64) -> Self {
        RulePolicy {
            width_target: Target::SeededUniform(seed),
            round_radius_target: Target::SeededUniform(seed.wrapping_add(0x9E37_79B9_7F4A_7C15)),
            bounds: RuleBounds::default(),
        }
    }

    /// Independent seeded draws for another wall; midpoint targets are unchanged.
    pub fn derive(&self, salt: u64) -> RulePolicy {
        let mix = |t: Target| match t {
            Target::Midpoint => Target::Midpoint,
            Target::SeededUniform(s) => Target::SeededUniform(splitmix64(s ^ splitmix64(salt))),
        };
        RulePolicy {
            width_target: mix(self.width_target),
            round_radius_target: mix(self.round_radius_target),
            bounds: self.bounds,
        }
    }

    pub fn check(&self) -> Result<()> {
        let b = &self.bounds;
        let ok_range = |r: [f64; 2]| r[0] > 0.0 && r[0] <= r[1];
        if !(b.aspect_max > 0.0)
            || !ok_range(b.width_range)
            || !ok_range(b.shell_range)
            || !ok_range(b.round_range)
            || !(b.side_width > 0.0)
            || !(0.0..=5.0).contains(&b.draft_internal_deg)
            || !(0.0..=5.0).contains(&b.draft_side_deg)
        {
            return Err(DfmError::Geometry(format!("inconsistent rule bounds {b:?}")));
        }
        Ok(())
    }
}

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn inside(v: f64, range: [f64; 2]) -> bool {
    v >= range[0] - TOL && v <= range[1] + TOL
}

fn scaled(range: [f64; 2], k: f64) -> [f64; 2] {
    [range[0] * k, range[1] * k]
}

/// Height cap for internal walls and width limits for thin and side walls.
pub fn enforce_aspect_ratio(wall: &WallSpec, bottom: f64, policy: &RulePolicy) -> WallSpec {
    let b = &policy.bounds;
    let mut out = *wall;
    match wall.kind {
        WallKind::Thin | WallKind::Thick => {
            if wall.height > b.aspect_max * bottom + TOL {
                out.height = b.aspect_max * bottom;
            }
            if wall.kind == WallKind::Thin {
                let range = scaled(b.width_range, bottom);
                if !inside(wall.top_width, range) {
                    out.top_width = policy.width_target.pick(range, STREAM_WIDTH);
                }
            }
        }
        WallKind::Side => {
            let target = b.side_width * bottom;
            if (wall.top_width - target).abs() > TOL {
                let outer = match wall.outer_end {
                    Some(PartEnd::Left) => wall.center_x - wall.top_width / 2.0,
                    Some(PartEnd::Right) => wall.center_x + wall.top_width / 2.0,
                    None => wall.center_x,
                };
                out.top_width = target;
                out.center_x = match wall.outer_end {
                    Some(PartEnd::Left) => outer + target / 2.0,
                    Some(PartEnd::Right) => outer - target / 2.0,
                    None => wall.center_x,
                };
            }
        }
    }
    out
}

/// Hollow a thick wall from below, leaving a uniform shell.
pub fn core_thick_wall(wall: &WallSpec, bottom: f64, policy: &RulePolicy) -> Result<WallSpec> {
    if wall.kind != WallKind::Thick {
        return Err(DfmError::NotThick { index: 0 });
    }
    let range = scaled(policy.bounds.shell_range, bottom);
    let mut out = *wall;
    let keep = wall.treatment.core.is_some_and(|c| inside(c.shell_thickness, range));
    if !keep {
        out.treatment.core = Some(CoreSpec {
            shell_thickness: policy.width_target.pick(range, STREAM_SHELL),
            opening: CoreOpening::FromBelow,
        });
    }
    Ok(out)
}

pub fn add_draft(wall: &WallSpec, policy: &RulePolicy) -> WallSpec {
    let mut out = *wall;
    match wall.kind {
        WallKind::Thin | WallKind::Thick => {
            out.treatment.draft_deg = policy.bounds.draft_internal_deg;
            out.treatment.draft_direction = DraftDirection::Inward;
        }
        WallKind::Side => {
            out.treatment.draft_deg = policy.bounds.draft_side_deg;
            out.treatment.draft_direction = DraftDirection::Outward;
        }
    }
    out
}

/// Base fillets and top rounds for a unit-thickness bottom wall. The same
/// radius also rounds core slot corners.
pub fn round_corners(wall: &WallSpec, policy: &RulePolicy) -> WallSpec {
    round_corners_scaled(wall, 1.0, policy)
}

/// Radii relative to the bottom thickness, so the rule is unit-invariant.
pub fn round_corners_scaled(wall: &WallSpec, bottom: f64, policy: &RulePolicy) -> WallSpec {
    let range = scaled(policy.bounds.round_range, bottom);
    let mut out = *wall;
    if !inside(wall.treatment.base_fillet_radius, range) {
        out.treatment.base_fillet_radius = policy.round_radius_target.pick(range, STREAM_FILLET);
    }
    if !inside(wall.treatment.top_round_radius, range) {
        out.treatment.top_round_radius = policy.round_radius_target.pick(range, STREAM_ROUND);
    }
    out
}

/// Full rule sequence for one wall.
pub fn make_manufacturable(wall: &WallSpec, bottom: f64, policy: &RulePolicy) -> Result<WallSpec> {
    policy.check()?;
    if !(bottom > 0.0) {
        return Err(DfmError::InvalidParameter(format!("bottom thickness {bottom}")));
    }
    let mut w = enforce_aspect_ratio(wall, bottom, policy);
    if w.kind == WallKind::Thick {
        w = core_thick_wall(&w, bottom, policy)?;
    }
    w = add_draft(&w, policy);
    Ok(round_corners_scaled(&w, bottom, policy))
}

/// True when the rule sequence would leave the wall untouched.
pub fn is_compliant(wall: &WallSpec, bottom: f64, policy: &RulePolicy) -> bool {
    make_manufacturable(wall, bottom, policy).is_ok_and(|m| m == *wall)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Treatment;
    use proptest::prelude::*;

    fn mid() -> RulePolicy {
        RulePolicy::midpoint()
    }

    #[test]
    fn thin_wall_aspect_and_width() {
        let w = enforce_aspect_ratio(&WallSpec::thin(0.0, 0.25, 6.0), 1.0, &mid());
        assert_eq!((w.top_width, w.height), (0.5, 4.0));
        let ok = WallSpec::thin(0.0, 0.45, 3.0);
        assert_eq!(enforce_aspect_ratio(&ok, 1.0, &mid()), ok);
    }

    #[test]
    fn height_at_bound_is_compliant() {
        let w = WallSpec::thick(0.0, 2.0, 4.0);
        assert_eq!(enforce_aspect_ratio(&w, 1.0, &mid()).height, 4.0);
    }

    #[test]
    fn side_wall_keeps_height_and_outer_face() {
        let w = WallSpec::side(PartEnd::Left, -4.8, 1.7, 5.0);
        let out = enforce_aspect_ratio(&w, 1.0, &mid());
        assert_eq!(out.top_width, 1.0);
        assert_eq!(out.height, 5.0);
        assert!((out.center_x - (-4.3)).abs() < 1e-12);
        let r = WallSpec::side(PartEnd::Right, 4.8, 0.3, 5.0);
        let out = enforce_aspect_ratio(&r, 1.0, &mid());
        assert!((out.center_x - 4.3).abs() < 1e-12);
    }

    #[test]
    fn coring_thick_walls() {
        let w = core_thick_wall(&WallSpec::thick(0.0, 2.0, 4.0), 1.0, &mid()).unwrap();
        let s = w.treatment.core.unwrap().shell_thickness;
        assert_eq!(s, 0.5);
        assert!((w.top_width - 2.0 * s - 1.0).abs() < 1e-12);
        let w = core_thick_wall(&WallSpec::thick(0.0, 1.2, 4.0), 1.0, &mid()).unwrap();
        assert!((w.top_width - 2.0 * w.treatment.core.unwrap().shell_thickness - 0.2).abs() < 1e-12);
        assert!(matches!(
            core_thick_wall(&WallSpec::thin(0.0, 0.5, 3.0), 1.0, &mid()),
            Err(DfmError::NotThick { .. })
        ));
    }

    #[test]
    fn draft_targets() {
        let t = add_draft(&WallSpec::thin(0.0, 0.5, 3.0), &mid());
        assert_eq!((t.treatment.draft_deg, t.treatment.draft_direction), (1.0, DraftDirection::Inward));
        let s = add_draft(&WallSpec::side(PartEnd::Right, 4.8, 1.0, 3.0), &mid());
        assert_eq!((s.treatment.draft_deg, s.treatment.draft_direction), (1.5, DraftDirection::Outward));
        assert_eq!(add_draft(&t, &mid()), t);
    }

    #[test]
    fn round_targets() {
        let r = round_corners(&WallSpec::thin(0.0, 0.5, 3.0), &mid());
        assert_eq!(r.treatment.base_fillet_radius, 0.5);
        assert_eq!(r.treatment.top_round_radius, 0.5);
        assert_eq!(round_corners(&r, &mid()), r);
        let p = RulePolicy::seeded(7);
        let a = round_corners(&WallSpec::thin(0.0, 0.5, 3.0), &p);
        let b = round_corners(&WallSpec::thin(0.0, 0.5, 3.0), &p);
        assert_eq!(a, b);
        for v in [a.treatment.base_fillet_radius, a.treatment.top_round_radius] {
            assert!(v > 0.4 && v < 0.6);
        }
    }

    #[test]
    fn composed_examples() {
        let w = make_manufacturable(&WallSpec::thin(0.0, 0.25, 6.0), 1.0, &mid()).unwrap();
        let expected = WallSpec::thin(0.0, 0.5, 4.0).with_treatment(Treatment {
            draft_deg: 1.0,
            draft_direction: DraftDirection::Inward,
            base_fillet_radius: 0.5,
            top_round_radius: 0.5,
            core: None,
        });
        assert_eq!(w, expected);
        assert_eq!(make_manufacturable(&w, 1.0, &mid()).unwrap(), w);

        let k = make_manufacturable(&WallSpec::thick(0.0, 2.0, 5.5), 1.0, &mid()).unwrap();
        assert_eq!(k.height, 4.0);
        assert_eq!(k.top_width, 2.0);
        assert_eq!(k.treatment.core.unwrap().shell_thickness, 0.5);
        assert_eq!(k.treatment.draft_deg, 1.0);
        assert_eq!(k.treatment.base_fillet_radius, 0.5);
        assert_eq!(k.treatment.top_round_radius, 0.5);
    }

    #[test]
    fn inconsistent_bounds_are_rejected() {
        let mut p = mid();
        p.bounds.round_range = [0.6, 0.4];
        assert!(matches!(
            make_manufacturable(&WallSpec::thin(0.0, 0.5, 3.0), 1.0, &p),
            Err(DfmError::Geometry(_))
        ));
    }

    fn any_wall() -> impl Strategy<Value = WallSpec> {
        (0u8..3, 0.1f64..3.0, 1.0f64..7.0, -1.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0, 0.0f64..3.0).prop_map(
            |(k, w, h, cx, fr, tr, draft)| {
                let mut spec = match k {
                    0 => WallSpec::thin(cx, w, h),
                    1 => WallSpec::thick(cx, w.max(1.2), h),
                    _ => WallSpec::side(PartEnd::Left, -4.8, w, h),
                };
                spec.treatment.base_fillet_radius = fr;
                spec.treatment.top_round_radius = tr;
                spec.treatment.draft_deg = draft;
                spec
            },
        )
    }

    proptest! {
        #[test]
        fn make_manufacturable_is_idempotent(w in any_wall(), bottom in 0.7f64..1.4, seed in any::<u64>()) {
            for p in [mid(), RulePolicy::seeded(seed)] {
                let once = make_manufacturable(&w, bottom, &p).unwrap();
                let twice = make_manufacturable(&once, bottom, &p).unwrap();
                prop_assert_eq!(once, twice);
            }
        }

        #[test]
        fn seeded_draws_are_strictly_inside(seed in any::<u64>()) {
            let p = RulePolicy::seeded(seed);
            let w = make_manufacturable(&WallSpec::thick(0.0, 2.5, 6.0), 1.0, &p).unwrap();
            let t = w.treatment;
            for v in [t.base_fillet_radius, t.top_round_radius, t.core.unwrap().shell_thickness] {
                prop_assert!(v > 0.4 && v < 0.6);
            }
            let thin = make_manufacturable(&WallSpec::thin(0.0, 0.1, 6.0), 1.0, &p).unwrap();
            prop_assert!(thin.top_width > 0.4 && thin.top_width < 0.6);
        }

        #[test]
        fn compliant_walls_are_untouched(w in any_wall(), seed in any::<u64>()) {
            let p = RulePolicy::seeded(seed);
            let m = make_manufacturable(&w, 1.0, &p).unwrap();
            // A compliant wall run under a different seed must not be resampled.
            prop_assert_eq!(make_manufacturable(&m, 1.0, &RulePolicy::seeded(seed ^ 1)).unwrap(), m);
            prop_assert_eq!(make_manufacturable(&m, 1.0, &mid()).unwrap(), m);
            prop_assert!(is_compliant(&m, 1.0, &mid()));
        }
    }
}
