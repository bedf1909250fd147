use serde::{Deserialize, Serialize};

use crate::crane::STATE_DIM;
use crate::regions::Point;

/// Piecewise-linear path traversed with a minimum-jerk time law, arriving at
/// the last point at `t_arrive` and holding there.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferencePath {
    pub points: Vec<Point>,
    pub t_arrive: f64,
    cumulative: Vec<f64>,
}

impl ReferencePath {
    pub fn new(points: Vec<Point>, t_arrive: f64) -> Self {
        assert!(!points.is_empty(), "reference path needs at least one point");
        let mut cumulative = vec![0.0];
        for w in points.windows(2) {
            let d = ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt();
            cumulative.push(cumulative.last().unwrap() + d);
        }
        Self { points, t_arrive: t_arrive.max(f64::EPSILON), cumulative }
    }

    pub fn length(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    /// Arc length and its rate at time `t`.
    fn progress(&self, t: f64) -> (f64, f64) {
        let tau = (t / self.t_arrive).clamp(0.0, 1.0);
        let s = tau * tau * tau * (10.0 - 15.0 * tau + 6.0 * tau * tau);
        let ds = if (0.0..1.0).contains(&tau) {
            30.0 * tau * tau * (1.0 - tau) * (1.0 - tau) / self.t_arrive
        } else {
            0.0
        };
        (s * self.length(), ds * self.length())
    }

    /// Position and unit tangent at arc length `s`.
    fn locate(&self, s: f64) -> (Point, Point) {
        if self.points.len() == 1 || self.length() == 0.0 {
            return (self.points[0], [0.0, 0.0]);
        }
        let seg = self.cumulative.partition_point(|&c| c < s).clamp(1, self.points.len() - 1);
        let (a, b) = (self.points[seg - 1], self.points[seg]);
        let len = self.cumulative[seg] - self.cumulative[seg - 1];
        if len == 0.0 {
            return (a, [0.0, 0.0]);
        }
        let t = ((s - self.cumulative[seg - 1]) / len).clamp(0.0, 1.0);
        let dir = [(b[0] - a[0]) / len, (b[1] - a[1]) / len];
        ([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])], dir)
    }

    /// Reference state `(x, ẋ, y, ẏ, 0, 0, 0, 0)` at time `t`.
    pub fn state_at(&self, t: f64) -> [f64; STATE_DIM] {
        let (s, v) = self.progress(t);
        let (p, dir) = self.locate(s);
        [p[0], v * dir[0], p[1], v * dir[1], 0.0, 0.0, 0.0, 0.0]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_and_hold() {
        let r = ReferencePath::new(vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]], 2.0);
        assert_eq!(r.state_at(0.0), [0.0; STATE_DIM]);
        let end = r.state_at(2.0);
        assert!((end[0] - 1.0).abs() < 1e-12 && (end[2] - 1.0).abs() < 1e-12);
        assert_eq!(r.state_at(5.0)[1], 0.0);
        let mid = r.state_at(1.0);
        assert!((mid[0] - 1.0).abs() < 1e-12 && mid[2].abs() < 1e-12);
    }

    #[test]
    fn velocity_matches_finite_difference() {
        let r = ReferencePath::new(vec![[0.0, 0.0], [0.3, 0.4]], 3.0);
        let h = 1e-6;
        for t in [0.3, 1.1, 2.2] {
            let (a, b) = (r.state_at(t - h), r.state_at(t + h));
            let s = r.state_at(t);
            assert!(((b[0] - a[0]) / (2.0 * h) - s[1]).abs() < 1e-6);
            assert!(((b[2] - a[2]) / (2.0 * h) - s[3]).abs() < 1e-6);
        }
    }
}
