//! Testcase definitions, the three default testcases and the seeded
//! generator for secret variations.
//!
//! Suite generation is reproducible from `(SuiteSpec, seed)`: every random
//! draw for testcase `i` comes from ChaCha8 seeded with
//! `seed_from_u64(seed)` on stream `i`.

use std::f64::consts::FRAC_PI_4;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crane::CraneParams;
use crate::planner::{plan_path, PlannerOptions};
use crate::regions::{Ellipse, Point, Rect, Region, MAX_OBSTACLES};

/// Figure units to meters for the default layouts.
const LAYOUT_SCALE: f64 = 0.1;

pub const DEFAULT_T_FINAL: f64 = 5.0;
pub const DEFAULT_TS: f64 = 0.05;
pub const DEFAULT_EPS_T: f64 = 0.02;
pub const DEFAULT_EPS_R: f64 = 0.01;
/// Minimum signed margin of start and target inside the region.
pub const CLEARANCE: f64 = 0.05;

/// Work budgets, 1.5× the work of the reference controller on each family's
/// default testcase (see `reference_work` in the acceptance tests).
pub const W_MAX_WEDGE: f64 = 0.679;
pub const W_MAX_EDGE_CIRCLES: f64 = 0.361;
pub const W_MAX_REGION_ELLIPSES: f64 = 0.403;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TestcaseError {
    #[error("testcase `{name}` is invalid: {reason}")]
    Invalid { name: String, reason: String },
    #[error("generator exhausted its retry budget for class {0}")]
    RetriesExhausted(PerturbationClass),
    #[error("suite must contain at least one testcase")]
    EmptySuite,
    #[error("unknown shape family `{0}`")]
    UnknownFamily(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeFamily {
    Wedge,
    EdgeCircles,
    RegionEllipses,
}

impl ShapeFamily {
    pub const ALL: [ShapeFamily; 3] = [ShapeFamily::Wedge, ShapeFamily::EdgeCircles, ShapeFamily::RegionEllipses];

    pub fn as_str(&self) -> &'static str {
        match self {
            ShapeFamily::Wedge => "wedge",
            ShapeFamily::EdgeCircles => "edge_circles",
            ShapeFamily::RegionEllipses => "region_ellipses",
        }
    }

    /// Perturbation classes that make sense for the family; the wedge has no
    /// obstacles to add.
    pub fn classes(&self) -> &'static [PerturbationClass] {
        use PerturbationClass::*;
        match self {
            ShapeFamily::Wedge => &[RegionScale, MovedTarget, ParamPerturbation],
            _ => &[RegionScale, MovedTarget, MoreObstacles, ParamPerturbation],
        }
    }
}

impl fmt::Display for ShapeFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ShapeFamily {
    type Err = TestcaseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| TestcaseError::UnknownFamily(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationClass {
    RegionScale,
    MovedTarget,
    MoreObstacles,
    ParamPerturbation,
}

impl fmt::Display for PerturbationClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            PerturbationClass::RegionScale => "region_scale",
            PerturbationClass::MovedTarget => "moved_target",
            PerturbationClass::MoreObstacles => "more_obstacles",
            PerturbationClass::ParamPerturbation => "param_perturbation",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Testcase {
    pub name: String,
    pub family: ShapeFamily,
    pub region: Region,
    pub start: Point,
    pub target: Point,
    pub t_final: f64,
    pub ts: f64,
    pub eps_t: f64,
    pub eps_r: f64,
    pub w_max: f64,
    pub param_perturbation: f64,
    pub seed: u64,
    /// Standard deviation per measured channel `(x, y, θ, ψ)`.
    #[serde(default)]
    pub measurement_noise_std: [f64; 4],
    /// Which generator class produced this testcase; `None` for defaults.
    #[serde(default)]
    pub class: Option<PerturbationClass>,
}

impl Testcase {
    pub fn samples(&self) -> usize {
        (self.t_final / self.ts).round() as usize
    }

    pub fn validate(&self) -> Result<(), TestcaseError> {
        let fail = |reason: String| TestcaseError::Invalid { name: self.name.clone(), reason };
        self.region.validate().map_err(|e| fail(e.to_string()))?;
        for (label, p) in [("start", self.start), ("target", self.target)] {
            let margin = self.region.signed_margin(p);
            if !self.region.contains(p) || margin < CLEARANCE - 1e-12 {
                return Err(fail(format!("{label} margin {margin:.4} below clearance {CLEARANCE}")));
            }
        }
        if !(self.ts > 0.0 && self.t_final > 0.0) {
            return Err(fail("timing must be positive".into()));
        }
        let ratio = self.t_final / self.ts;
        if (ratio - ratio.round()).abs() > 1e-9 || ratio.round() < 1.0 {
            return Err(fail(format!("t_final {} is not a multiple of ts {}", self.t_final, self.ts)));
        }
        if !(self.eps_t > 0.0 && self.eps_r > 0.0 && self.w_max > 0.0) {
            return Err(fail("tolerances and work budget must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.param_perturbation) {
            return Err(fail("parameter perturbation must lie in [0, 1)".into()));
        }
        if self.measurement_noise_std.iter().any(|s| !(*s >= 0.0)) {
            return Err(fail("noise standard deviations must be nonnegative".into()));
        }
        Ok(())
    }
}

/// What a controller is allowed to see of a testcase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PublicTestcase {
    pub name: String,
    pub family: ShapeFamily,
    pub region: Region,
    pub start: Point,
    pub target: Point,
    pub t_final: f64,
    pub ts: f64,
    pub eps_t: f64,
    pub eps_r: f64,
    pub w_max: f64,
    /// Always the nominal model, whatever the plant actually uses.
    pub params: CraneParams,
}

pub fn public_view(tc: &Testcase) -> PublicTestcase {
    PublicTestcase {
        name: tc.name.clone(),
        family: tc.family,
        region: tc.region.clone(),
        start: tc.start,
        target: tc.target,
        t_final: tc.t_final,
        ts: tc.ts,
        eps_t: tc.eps_t,
        eps_r: tc.eps_r,
        w_max: tc.w_max,
        params: CraneParams::nominal(),
    }
}

fn s(p: Point) -> Point {
    [p[0] * LAYOUT_SCALE, p[1] * LAYOUT_SCALE]
}

/// Left and right wedge arms: rectangles at ±45° meeting at the apex.
fn wedge_region(width_scale: f64) -> Region {
    let half_len = 2.0 * std::f64::consts::SQRT_2 * LAYOUT_SCALE;
    let half_width = std::f64::consts::FRAC_1_SQRT_2 * LAYOUT_SCALE * width_scale;
    Region::WedgeUnion {
        rects: [
            Rect::new(s([3.5, 2.5]), [half_len, half_width], FRAC_PI_4),
            Rect::new(s([6.5, 2.5]), [half_len, half_width], -FRAC_PI_4),
        ],
    }
}

/// Diamond-shaped outer rectangle shared by the obstacle families.
fn diamond() -> Rect {
    let half = 2.0 * std::f64::consts::SQRT_2 * LAYOUT_SCALE;
    Rect::new(s([5.0, 1.0]), [half, half], FRAC_PI_4)
}

fn edge_circles() -> Vec<Ellipse> {
    vec![
        // Centered on the bottom corner where the two lower edges meet.
        Ellipse::circle(s([5.0, -3.0]), 0.44),
        Ellipse::circle(s([3.0, 3.0]), 0.07),
    ]
}

fn region_ellipses() -> Vec<Ellipse> {
    vec![
        Ellipse::circle(s([5.0, 1.0]), 0.1),
        Ellipse::circle(s([3.0, -1.0]), 0.1),
        Ellipse::new(s([5.0, 4.0]), [0.05, 0.1], 0.0),
    ]
}

fn default_region(family: ShapeFamily) -> Region {
    match family {
        ShapeFamily::Wedge => wedge_region(1.0),
        ShapeFamily::EdgeCircles => Region::RectMinusObstacles { rect: diamond(), obstacles: edge_circles() },
        ShapeFamily::RegionEllipses => Region::RectMinusObstacles { rect: diamond(), obstacles: region_ellipses() },
    }
}

pub fn default_w_max(family: ShapeFamily) -> f64 {
    match family {
        ShapeFamily::Wedge => W_MAX_WEDGE,
        ShapeFamily::EdgeCircles => W_MAX_EDGE_CIRCLES,
        ShapeFamily::RegionEllipses => W_MAX_REGION_ELLIPSES,
    }
}

/// The published testcase of each family: start at the filled circle
/// `(2, 1)`, target at the empty square `(8, 1)` in figure units.
pub fn default_testcase(family: ShapeFamily) -> Testcase {
    Testcase {
        name: format!("{family}-default"),
        family,
        region: default_region(family),
        start: s([2.0, 1.0]),
        target: s([8.0, 1.0]),
        t_final: DEFAULT_T_FINAL,
        ts: DEFAULT_TS,
        eps_t: DEFAULT_EPS_T,
        eps_r: DEFAULT_EPS_R,
        w_max: default_w_max(family),
        param_perturbation: 0.0,
        seed: 0,
        measurement_noise_std: [0.0; 4],
        class: None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteSpec {
    pub family: ShapeFamily,
    pub count: usize,
    pub seed: u64,
    /// Multiplier range for the region width (narrowing/widening).
    pub region_scale_range: [f64; 2],
    /// Target signed-margin range for moved targets.
    pub target_clearance_range: [f64; 2],
    /// Maximum distance a moved target may travel from the default target.
    pub target_shift_max: f64,
    /// Total obstacle count range for the obstacle class.
    pub obstacle_count_range: [usize; 2],
    pub param_perturbation_range: [f64; 2],
    pub max_retries: usize,
}

impl SuiteSpec {
    pub fn new(family: ShapeFamily, count: usize, seed: u64) -> Self {
        Self {
            family,
            count,
            seed,
            region_scale_range: [0.8, 1.3],
            target_clearance_range: [CLEARANCE, 0.065],
            target_shift_max: 0.15,
            obstacle_count_range: [1, MAX_OBSTACLES],
            param_perturbation_range: [0.05, 0.2],
            max_retries: 2000,
        }
    }
}

impl Default for SuiteSpec {
    fn default() -> Self {
        Self::new(ShapeFamily::RegionEllipses, 32, 0)
    }
}

/// Scales the region's free width about its own geometry.
fn scaled_region(family: ShapeFamily, factor: f64) -> Region {
    match family {
        ShapeFamily::Wedge => wedge_region(factor),
        _ => {
            let base = diamond();
            let rect = Rect::new(base.center, [base.half_widths[0] * factor, base.half_widths[1] * factor], base.rotation);
            let obstacles = match default_region(family) {
                Region::RectMinusObstacles { obstacles, .. } => obstacles
                    .into_iter()
                    .map(|e| {
                        let c = [
                            base.center[0] + (e.center[0] - base.center[0]) * factor,
                            base.center[1] + (e.center[1] - base.center[1]) * factor,
                        ];
                        Ellipse::new(c, [e.semi_axes[0] * factor, e.semi_axes[1] * factor], e.rotation)
                    })
                    .collect(),
                _ => unreachable!("obstacle families use a rectangle with obstacles"),
            };
            Region::RectMinusObstacles { rect, obstacles }
        }
    }
}

fn random_obstacle(family: ShapeFamily, rect: &Rect, rng: &mut ChaCha8Rng) -> Ellipse {
    match family {
        ShapeFamily::EdgeCircles => {
            // Circle centered on a random point of a random edge.
            let corners = rect.corners();
            let k = rng.gen_range(0..4);
            let (a, b) = (corners[k], corners[(k + 1) % 4]);
            let t: f64 = rng.gen_range(0.0..1.0);
            let c = [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
            Ellipse::circle(c, rng.gen_range(0.03..0.12))
        }
        _ => {
            let q = [
                rng.gen_range(-rect.half_widths[0]..rect.half_widths[0]),
                rng.gen_range(-rect.half_widths[1]..rect.half_widths[1]),
            ];
            Ellipse::new(
                rect.to_world(q),
                [rng.gen_range(0.02..0.08), rng.gen_range(0.02..0.08)],
                rng.gen_range(0.0..std::f64::consts::PI),
            )
        }
    }
}

/// A testcase is only kept if a collision-free route with some clearance
/// exists, so no secret testcase is unsolvable by construction.
fn route_exists(tc: &Testcase) -> bool {
    let opts = PlannerOptions { cell_size: 0.01, clearance: 0.02, n_via: 8 };
    plan_path(&tc.region, tc.start, tc.target, &opts).is_ok()
}

fn draw_variant(
    spec: &SuiteSpec,
    class: PerturbationClass,
    index: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Testcase, TestcaseError> {
    let base = default_testcase(spec.family);
    let base_target_margin = base.region.signed_margin(base.target);
    for _ in 0..spec.max_retries {
        let mut tc = base.clone();
        tc.name = format!("{}-{index:03}-{class}", spec.family);
        tc.class = Some(class);
        tc.seed = rng.gen();
        match class {
            PerturbationClass::RegionScale => {
                let [lo, hi] = spec.region_scale_range;
                let mut factor = rng.gen_range(lo..=hi);
                if (factor - 1.0).abs() < 0.02 {
                    factor = if factor < 1.0 { 0.98 } else { 1.02 };
                }
                tc.region = scaled_region(spec.family, factor);
            }
            PerturbationClass::MovedTarget => {
                let [lo, hi] = spec.target_clearance_range;
                let hi = hi.min(base_target_margin - 1e-6);
                let angle = rng.gen_range(0.0..std::f64::consts::TAU);
                let dist = rng.gen_range(0.0..spec.target_shift_max);
                let cand = [base.target[0] + dist * angle.cos(), base.target[1] + dist * angle.sin()];
                let m = tc.region.signed_margin(cand);
                if !(m >= lo && m < hi) {
                    continue;
                }
                tc.target = cand;
            }
            PerturbationClass::MoreObstacles => {
                let Region::RectMinusObstacles { rect, obstacles } = &mut tc.region else {
                    return Err(TestcaseError::RetriesExhausted(class));
                };
                let [lo, hi] = spec.obstacle_count_range;
                let lo = lo.max(obstacles.len() + 1);
                let hi = hi.min(MAX_OBSTACLES);
                if lo > hi {
                    return Err(TestcaseError::RetriesExhausted(class));
                }
                let total = rng.gen_range(lo..=hi);
                while obstacles.len() < total {
                    obstacles.push(random_obstacle(spec.family, rect, rng));
                }
            }
            PerturbationClass::ParamPerturbation => {
                let [lo, hi] = spec.param_perturbation_range;
                tc.param_perturbation = rng.gen_range(lo..=hi);
            }
        }
        if tc.validate().is_ok() && route_exists(&tc) {
            return Ok(tc);
        }
    }
    Err(TestcaseError::RetriesExhausted(class))
}

/// Default testcase first, then `count − 1` variations cycling through the
/// family's perturbation classes.
pub fn generate_suite(spec: &SuiteSpec) -> Result<Vec<Testcase>, TestcaseError> {
    if spec.count == 0 {
        return Err(TestcaseError::EmptySuite);
    }
    let mut suite = vec![default_testcase(spec.family)];
    let classes = spec.family.classes();
    for index in 1..spec.count {
        let class = classes[(index - 1) % classes.len()];
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(index as u64);
        suite.push(draw_variant(spec, class, index, &mut rng)?);
    }
    Ok(suite)
}

/// On-disk suite: the testcases plus the generator settings that made them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteFile {
    pub generator: Option<SuiteSpec>,
    pub rng: String,
    pub testcases: Vec<Testcase>,
}

pub const RNG_DESCRIPTION: &str = "chacha8: ChaCha8Rng::seed_from_u64(seed), stream = testcase index";

impl SuiteFile {
    pub fn new(generator: Option<SuiteSpec>, testcases: Vec<Testcase>) -> Self {
        Self { generator, rng: RNG_DESCRIPTION.to_string(), testcases }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_stable() {
        for family in ShapeFamily::ALL {
            let tc = default_testcase(family);
            tc.validate().unwrap();
            assert!(tc.region.contains(tc.start) && tc.region.contains(tc.target));
            assert_eq!(tc.t_final, 5.0);
            assert_eq!(tc, default_testcase(family));
            assert_eq!(tc.samples(), 100);
        }
    }

    #[test]
    fn public_view_hides_perturbation() {
        let mut tc = default_testcase(ShapeFamily::RegionEllipses);
        tc.param_perturbation = 0.2;
        tc.measurement_noise_std = [0.001; 4];
        let view = public_view(&tc);
        assert_eq!(view.params, CraneParams::nominal());
        assert_eq!(view.region, tc.region);
        assert_eq!(view.target, tc.target);
        let json = serde_json::to_string(&view).unwrap();
        assert!(!json.contains("param_perturbation"));
        assert!(!json.contains("noise"));
    }

    #[test]
    fn family_names_round_trip() {
        for f in ShapeFamily::ALL {
            assert_eq!(f.as_str().parse::<ShapeFamily>().unwrap(), f);
        }
        assert!("triangle".parse::<ShapeFamily>().is_err());
    }

    #[test]
    fn validation_catches_bad_timing() {
        let mut tc = default_testcase(ShapeFamily::Wedge);
        tc.t_final = 5.01;
        assert!(tc.validate().is_err());
        let mut tc = default_testcase(ShapeFamily::Wedge);
        tc.start = [0.0, 0.0];
        assert!(tc.validate().is_err());
    }

    #[test]
    fn empty_suite_rejected() {
        assert_eq!(generate_suite(&SuiteSpec::new(ShapeFamily::Wedge, 0, 1)), Err(TestcaseError::EmptySuite));
    }

    #[test]
    fn small_suites_for_every_family() {
        for family in ShapeFamily::ALL {
            let suite = generate_suite(&SuiteSpec::new(family, 9, 3)).unwrap();
            assert_eq!(suite.len(), 9);
            assert_eq!(suite[0], default_testcase(family));
            for tc in &suite {
                tc.validate().unwrap();
            }
        }
    }

    #[test]
    fn pathological_knobs_exhaust_retries() {
        let mut spec = SuiteSpec::new(ShapeFamily::Wedge, 2, 0);
        spec.region_scale_range = [0.1, 0.2];
        spec.max_retries = 20;
        assert_eq!(
            generate_suite(&spec),
            Err(TestcaseError::RetriesExhausted(PerturbationClass::RegionScale))
        );
    }
}
