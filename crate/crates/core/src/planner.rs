//! Grid A* through a region, used to pick via points around obstacles and to
//! reject generated testcases without any collision-free route.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use thiserror::Error;

use crate::regions::{Point, Region};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlannerOptions {
    pub cell_size: f64,
    /// Minimum signed margin required at every visited cell.
    pub clearance: f64,
    /// Number of evenly spaced points in the returned path (at least 2).
    pub n_via: usize,
}

impl Default for PlannerOptions {
    fn default() -> Self {
        Self { cell_size: 0.01, clearance: 0.03, n_via: 16 }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlannerError {
    #[error("planner options are invalid")]
    InvalidOptions,
    #[error("no route with the requested clearance")]
    NoRoute,
}

#[derive(PartialEq)]
struct Node {
    f: f64,
    idx: usize,
}

impl Eq for Node {}

impl Ord for Node {
    fn cmp(&self, other: &Self) -> Ordering {
        other.f.total_cmp(&self.f).then_with(|| other.idx.cmp(&self.idx))
    }
}

impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn dist(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Straight segment check at a spacing of a quarter cell.
fn segment_clear(region: &Region, a: Point, b: Point, clearance: f64, h: f64) -> bool {
    let n = ((dist(a, b) / (0.25 * h)).ceil() as usize).max(1);
    (0..=n).all(|k| {
        let t = k as f64 / n as f64;
        region.signed_margin([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]) >= clearance
    })
}

/// Shortest 8-connected grid path from `start` to `goal`, shortcut-smoothed
/// and resampled to `n_via` points equally spaced in arc length. The first
/// and last points are exactly `start` and `goal`.
pub fn plan_path(region: &Region, start: Point, goal: Point, opts: &PlannerOptions) -> Result<Vec<Point>, PlannerError> {
    if !(opts.cell_size > 0.0) || opts.n_via < 2 || !opts.clearance.is_finite() {
        return Err(PlannerError::InvalidOptions);
    }
    let h = opts.cell_size;
    let (lo, hi) = region.bounding_box();
    let nx = ((hi[0] - lo[0]) / h).ceil() as usize + 1;
    let ny = ((hi[1] - lo[1]) / h).ceil() as usize + 1;
    let cell = |i: usize, j: usize| [lo[0] + i as f64 * h, lo[1] + j as f64 * h];
    let free: Vec<bool> = (0..nx * ny)
        .map(|k| region.signed_margin(cell(k % nx, k / nx)) >= opts.clearance)
        .collect();

    let nearest_free = |p: Point| -> Option<usize> {
        let mut cand: Vec<usize> = (0..nx * ny).filter(|&k| free[k]).collect();
        cand.sort_by(|&a, &b| dist(p, cell(a % nx, a / nx)).total_cmp(&dist(p, cell(b % nx, b / nx))));
        cand.into_iter()
            .take(64)
            .find(|&k| segment_clear(region, p, cell(k % nx, k / nx), opts.clearance.min(0.0), h))
    };
    let s = nearest_free(start).ok_or(PlannerError::NoRoute)?;
    let g = nearest_free(goal).ok_or(PlannerError::NoRoute)?;

    let mut cost = vec![f64::INFINITY; nx * ny];
    let mut parent = vec![usize::MAX; nx * ny];
    let mut heap = BinaryHeap::new();
    let goal_pt = cell(g % nx, g / nx);
    cost[s] = 0.0;
    heap.push(Node { f: dist(cell(s % nx, s / nx), goal_pt), idx: s });
    while let Some(Node { idx, .. }) = heap.pop() {
        if idx == g {
            break;
        }
        let (i, j) = ((idx % nx) as i64, (idx / nx) as i64);
        for (di, dj) in [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)] {
            let (ni, nj) = (i + di, j + dj);
            if ni < 0 || nj < 0 || ni >= nx as i64 || nj >= ny as i64 {
                continue;
            }
            let k = nj as usize * nx + ni as usize;
            if !free[k] {
                continue;
            }
            let c = cost[idx] + h * ((di * di + dj * dj) as f64).sqrt();
            if c < cost[k] {
                cost[k] = c;
                parent[k] = idx;
                heap.push(Node { f: c + dist(cell(ni as usize, nj as usize), goal_pt), idx: k });
            }
        }
    }
    if !cost[g].is_finite() {
        return Err(PlannerError::NoRoute);
    }

    let mut raw = vec![goal];
    let mut k = g;
    while k != usize::MAX {
        raw.push(cell(k % nx, k / nx));
        k = parent[k];
    }
    raw.push(start);
    raw.reverse();

    // Greedy shortcutting: jump to the farthest point still visible.
    let mut smooth = vec![raw[0]];
    let mut a = 0;
    while a < raw.len() - 1 {
        let mut b = raw.len() - 1;
        while b > a + 1 && !segment_clear(region, raw[a], raw[b], opts.clearance, h) {
            b -= 1;
        }
        smooth.push(raw[b]);
        a = b;
    }
    Ok(resample(&smooth, opts.n_via))
}

/// Points equally spaced in arc length along a polyline.
pub fn resample(poly: &[Point], n: usize) -> Vec<Point> {
    let mut cum = vec![0.0];
    for w in poly.windows(2) {
        cum.push(cum.last().unwrap() + dist(w[0], w[1]));
    }
    let total = *cum.last().unwrap();
    if total == 0.0 || poly.len() < 2 {
        return vec![poly[0]; n.max(1)];
    }
    (0..n)
        .map(|k| {
            let target = total * k as f64 / (n - 1) as f64;
            let seg = cum.partition_point(|&c| c < target).clamp(1, poly.len() - 1);
            let (a, b) = (poly[seg - 1], poly[seg]);
            let len = cum[seg] - cum[seg - 1];
            let t = if len > 0.0 { ((target - cum[seg - 1]) / len).clamp(0.0, 1.0) } else { 0.0 };
            [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
        })
        .collect()
}
