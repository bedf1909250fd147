//! Allowed-region geometry: a rectangle, a union of two rotated rectangles
//! (the wedge), or a rectangle with elliptical obstacles removed.
//!
//! All sets are closed: boundary points are allowed.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Point = [f64; 2];

/// Slack on boundary comparisons so analytically constructed boundary
/// points survive rounding.
pub const BOUNDARY_TOL: f64 = 1e-12;

pub const MAX_OBSTACLES: usize = 10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RegionError {
    #[error("point ({0}, {1}) lies outside both wedge rectangles")]
    OutsideWedge(f64, f64),
    #[error("region is not a wedge union")]
    NotAWedge,
    #[error("invalid region geometry: {0}")]
    Invalid(String),
}

fn rotate(v: Point, angle: f64) -> Point {
    let (s, c) = angle.sin_cos();
    [c * v[0] - s * v[1], s * v[0] + c * v[1]]
}

fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub center: Point,
    pub half_widths: Point,
    /// Counter-clockwise rotation of the local axes, radians.
    pub rotation: f64,
}

impl Rect {
    pub fn new(center: Point, half_widths: Point, rotation: f64) -> Self {
        Self { center, half_widths, rotation }
    }

    pub fn axis_aligned(center: Point, half_widths: Point) -> Self {
        Self::new(center, half_widths, 0.0)
    }

    pub fn to_local(&self, p: Point) -> Point {
        rotate(sub(p, self.center), -self.rotation)
    }

    pub fn to_world(&self, q: Point) -> Point {
        let r = rotate(q, self.rotation);
        [r[0] + self.center[0], r[1] + self.center[1]]
    }

    pub fn corners(&self) -> [Point; 4] {
        let [hx, hy] = self.half_widths;
        [[hx, hy], [-hx, hy], [-hx, -hy], [hx, -hy]].map(|q| self.to_world(q))
    }

    pub fn contains(&self, p: Point) -> bool {
        let q = self.to_local(p);
        q[0].abs() <= self.half_widths[0] + BOUNDARY_TOL && q[1].abs() <= self.half_widths[1] + BOUNDARY_TOL
    }

    /// Distance to the boundary when inside (positive), minus the Euclidean
    /// distance to the rectangle when outside.
    pub fn signed_margin(&self, p: Point) -> f64 {
        let q = self.to_local(p);
        let dx = q[0].abs() - self.half_widths[0];
        let dy = q[1].abs() - self.half_widths[1];
        if dx <= 0.0 && dy <= 0.0 {
            -dx.max(dy)
        } else {
            -(dx.max(0.0).hypot(dy.max(0.0)))
        }
    }

    fn validate(&self) -> Result<(), RegionError> {
        let ok = self.half_widths.iter().all(|h| *h > 0.0 && h.is_finite())
            && self.center.iter().all(|c| c.is_finite())
            && self.rotation.is_finite();
        if ok {
            Ok(())
        } else {
            Err(RegionError::Invalid(format!("bad rectangle {self:?}")))
        }
    }
}

/// One half-space `aᵀ p ≤ b` with unit normal `a`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HalfSpace {
    pub a: Point,
    pub b: f64,
}

impl HalfSpace {
    pub fn slack(&self, p: Point) -> f64 {
        self.b - dot(self.a, p)
    }
}

/// Four half-spaces whose intersection is `rect`: `+x', −x', +y', −y'` in
/// the rectangle's local frame.
pub fn rect_halfspaces(rect: &Rect) -> [HalfSpace; 4] {
    let ex = rotate([1.0, 0.0], rect.rotation);
    let ey = rotate([0.0, 1.0], rect.rotation);
    let [hx, hy] = rect.half_widths;
    let c = rect.center;
    [
        HalfSpace { a: ex, b: dot(ex, c) + hx },
        HalfSpace { a: [-ex[0], -ex[1]], b: -dot(ex, c) + hx },
        HalfSpace { a: ey, b: dot(ey, c) + hy },
        HalfSpace { a: [-ey[0], -ey[1]], b: -dot(ey, c) + hy },
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub center: Point,
    pub semi_axes: Point,
    pub rotation: f64,
}

impl Ellipse {
    pub fn new(center: Point, semi_axes: Point, rotation: f64) -> Self {
        Self { center, semi_axes, rotation }
    }

    pub fn circle(center: Point, radius: f64) -> Self {
        Self::new(center, [radius, radius], 0.0)
    }

    /// `M` in `g(p) = (p − c)ᵀ M (p − c) − 1`, row-major 2×2.
    pub fn shape_matrix(&self) -> [[f64; 2]; 2] {
        let (s, c) = self.rotation.sin_cos();
        let (ia, ib) = (1.0 / self.semi_axes[0].powi(2), 1.0 / self.semi_axes[1].powi(2));
        [
            [c * c * ia + s * s * ib, c * s * (ia - ib)],
            [c * s * (ia - ib), s * s * ia + c * c * ib],
        ]
    }

    /// Unsigned Euclidean distance from `p` to the ellipse boundary.
    pub fn boundary_distance(&self, p: Point) -> f64 {
        let q = rotate(sub(p, self.center), -self.rotation);
        let (mut e0, mut e1) = (self.semi_axes[0], self.semi_axes[1]);
        let (mut y0, mut y1) = (q[0].abs(), q[1].abs());
        if e0 < e1 {
            std::mem::swap(&mut e0, &mut e1);
            std::mem::swap(&mut y0, &mut y1);
        }
        distance_point_ellipse(e0, e1, y0, y1)
    }

    fn validate(&self) -> Result<(), RegionError> {
        let ok = self.semi_axes.iter().all(|h| *h > 0.0 && h.is_finite())
            && self.center.iter().all(|c| c.is_finite())
            && self.rotation.is_finite();
        if ok {
            Ok(())
        } else {
            Err(RegionError::Invalid(format!("bad ellipse {self:?}")))
        }
    }
}

/// Residual `g(p)` and its gradient `2 M (p − c)`. Negative inside the
/// obstacle, zero on its boundary, positive outside.
pub fn ellipse_residual(e: &Ellipse, p: Point) -> (f64, Point) {
    let m = e.shape_matrix();
    let d = sub(p, e.center);
    let md = [m[0][0] * d[0] + m[0][1] * d[1], m[1][0] * d[0] + m[1][1] * d[1]];
    (dot(d, md) - 1.0, [2.0 * md[0], 2.0 * md[1]])
}

// Eberly's bisection for the closest point on an axis-aligned ellipse,
// first quadrant, e0 >= e1.
fn distance_point_ellipse(e0: f64, e1: f64, y0: f64, y1: f64) -> f64 {
    if y1 > 0.0 {
        if y0 > 0.0 {
            let z0 = y0 / e0;
            let z1 = y1 / e1;
            let g = z0 * z0 + z1 * z1 - 1.0;
            if g != 0.0 {
                let r0 = (e0 / e1).powi(2);
                let sbar = ellipse_root(r0, z0, z1, g);
                let x0 = r0 * y0 / (sbar + r0);
                let x1 = y1 / (sbar + 1.0);
                (x0 - y0).hypot(x1 - y1)
            } else {
                0.0
            }
        } else {
            (y1 - e1).abs()
        }
    } else {
        let numer0 = e0 * y0;
        let denom0 = e0 * e0 - e1 * e1;
        if numer0 < denom0 {
            let xde0 = numer0 / denom0;
            let x0 = e0 * xde0;
            let x1 = e1 * (1.0 - xde0 * xde0).max(0.0).sqrt();
            (x0 - y0).hypot(x1)
        } else {
            (y0 - e0).abs()
        }
    }
}

fn ellipse_root(r0: f64, z0: f64, z1: f64, g: f64) -> f64 {
    let n0 = r0 * z0;
    let mut s0 = z1 - 1.0;
    let mut s1 = if g < 0.0 { 0.0 } else { n0.hypot(z1) - 1.0 };
    let mut s = 0.0;
    for _ in 0..256 {
        s = 0.5 * (s0 + s1);
        if s == s0 || s == s1 {
            break;
        }
        let ratio0 = n0 / (s + r0);
        let ratio1 = z1 / (s + 1.0);
        let gs = ratio0 * ratio0 + ratio1 * ratio1 - 1.0;
        if gs > 0.0 {
            s0 = s;
        } else if gs < 0.0 {
            s1 = s;
        } else {
            break;
        }
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Region {
    SingleRect { rect: Rect },
    /// Allowed iff inside at least one of the two rectangles.
    WedgeUnion { rects: [Rect; 2] },
    RectMinusObstacles { rect: Rect, obstacles: Vec<Ellipse> },
}

impl Region {
    pub fn validate(&self) -> Result<(), RegionError> {
        match self {
            Region::SingleRect { rect } => rect.validate(),
            Region::WedgeUnion { rects } => {
                rects[0].validate()?;
                rects[1].validate()?;
                let overlap = rects[0].corners().iter().any(|c| rects[1].contains(*c))
                    || rects[1].corners().iter().any(|c| rects[0].contains(*c));
                if overlap {
                    Ok(())
                } else {
                    Err(RegionError::Invalid("wedge rectangles do not overlap".into()))
                }
            }
            Region::RectMinusObstacles { rect, obstacles } => {
                rect.validate()?;
                if obstacles.len() > MAX_OBSTACLES {
                    return Err(RegionError::Invalid(format!(
                        "{} obstacles, at most {MAX_OBSTACLES} allowed",
                        obstacles.len()
                    )));
                }
                obstacles.iter().try_for_each(Ellipse::validate)
            }
        }
    }

    pub fn rects(&self) -> Vec<Rect> {
        match self {
            Region::SingleRect { rect } | Region::RectMinusObstacles { rect, .. } => vec![*rect],
            Region::WedgeUnion { rects } => rects.to_vec(),
        }
    }

    pub fn obstacles(&self) -> &[Ellipse] {
        match self {
            Region::RectMinusObstacles { obstacles, .. } => obstacles,
            _ => &[],
        }
    }

    /// Axis-aligned bounding box `(min, max)` of the outer rectangle(s).
    pub fn bounding_box(&self) -> (Point, Point) {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for r in self.rects() {
            for c in r.corners() {
                for k in 0..2 {
                    lo[k] = lo[k].min(c[k]);
                    hi[k] = hi[k].max(c[k]);
                }
            }
        }
        (lo, hi)
    }

    pub fn contains(&self, p: Point) -> bool {
        match self {
            Region::SingleRect { rect } => rect.contains(p),
            Region::WedgeUnion { rects } => rects[0].contains(p) || rects[1].contains(p),
            Region::RectMinusObstacles { rect, obstacles } => {
                rect.contains(p) && obstacles.iter().all(|e| ellipse_residual(e, p).0 >= -BOUNDARY_TOL)
            }
        }
    }

    /// Positive inside, negative outside; magnitude approximates the distance
    /// to the allowed-set boundary (exact for a single rectangle and for
    /// points outside a wedge, a lower bound inside a wedge).
    pub fn signed_margin(&self, p: Point) -> f64 {
        let m = match self {
            Region::SingleRect { rect } => rect.signed_margin(p),
            Region::WedgeUnion { rects } => rects[0].signed_margin(p).max(rects[1].signed_margin(p)),
            Region::RectMinusObstacles { rect, obstacles } => {
                obstacles.iter().fold(rect.signed_margin(p), |m, e| {
                    let (g, _) = ellipse_residual(e, p);
                    let d = e.boundary_distance(p);
                    m.min(if g >= 0.0 { d } else { -d })
                })
            }
        };
        // Keep the sign consistent with `contains` inside the boundary slack.
        if self.contains(p) {
            m.max(0.0)
        } else if m >= 0.0 {
            -f64::MIN_POSITIVE
        } else {
            m
        }
    }

    /// Index of the wedge rectangle holding `p` with the larger margin
    /// (lower index on ties).
    pub fn active_rect(&self, p: Point) -> Result<usize, RegionError> {
        let Region::WedgeUnion { rects } = self else {
            return Err(RegionError::NotAWedge);
        };
        active_rect(rects, p)
    }
}

pub fn active_rect(rects: &[Rect; 2], p: Point) -> Result<usize, RegionError> {
    let m0 = rects[0].signed_margin(p);
    let m1 = rects[1].signed_margin(p);
    if !rects[0].contains(p) && !rects[1].contains(p) {
        return Err(RegionError::OutsideWedge(p[0], p[1]));
    }
    Ok(if m1 > m0 { 1 } else { 0 })
}
