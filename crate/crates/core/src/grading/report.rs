//! Report bundle: per-testcase plots and violation listings plus an
//! aggregate summary.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{CompletionReport, Marks, Violation};
use crate::crane::payload_position;
use crate::harness::Trajectory;
use crate::regions::{Point, Region};
use crate::testcases::Testcase;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RenderOutcome {
    pub written: Vec<PathBuf>,
    pub errors: Vec<(PathBuf, String)>,
}

impl RenderOutcome {
    fn write(&mut self, path: PathBuf, contents: &[u8]) {
        match fs::write(&path, contents) {
            Ok(()) => self.written.push(path),
            Err(e) => self.errors.push((path, e.to_string())),
        }
    }
}

fn f(v: f64) -> String {
    format!("{v:.5}")
}

fn polyline_d(points: impl Iterator<Item = Point>) -> String {
    let mut d = String::new();
    for (i, p) in points.enumerate() {
        let _ = write!(d, "{}{} {} ", if i == 0 { "M" } else { "L" }, f(p[0]), f(p[1]));
    }
    d.trim_end().to_string()
}

/// Plot of the region (white allowed set, grey obstacles), cart and payload
/// paths, the start (filled circle) and the target (empty square). World
/// coordinates are used directly, with the y axis flipped.
pub fn render_svg(tc: &Testcase, traj: &Trajectory) -> String {
    let (lo, hi) = tc.region.bounding_box();
    let pad = 0.05 * (hi[0] - lo[0]).max(hi[1] - lo[1]);
    let (x0, y0) = (lo[0] - pad, lo[1] - pad);
    let (w, h) = (hi[0] - lo[0] + 2.0 * pad, hi[1] - lo[1] + 2.0 * pad);
    let stroke = f(0.004 * w.max(h));
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="600" height="{}" viewBox="{} {} {} {}">"#,
        (600.0 * h / w).round(),
        f(x0),
        f(-(y0 + h)),
        f(w),
        f(h)
    );
    let _ = writeln!(s, r##"<rect x="{}" y="{}" width="{}" height="{}" fill="#bbbbbb"/>"##, f(x0), f(-(y0 + h)), f(w), f(h));
    let _ = writeln!(s, r#"<g transform="scale(1,-1)">"#);
    for r in tc.region.rects() {
        let pts: Vec<String> = r.corners().iter().map(|c| format!("{},{}", f(c[0]), f(c[1]))).collect();
        let _ = writeln!(s, r#"<polygon class="region" points="{}" fill="white" stroke="black" stroke-width="{stroke}"/>"#, pts.join(" "));
    }
    if let Region::RectMinusObstacles { obstacles, .. } = &tc.region {
        for e in obstacles {
            let _ = writeln!(
                s,
                r##"<ellipse class="obstacle" cx="{}" cy="{}" rx="{}" ry="{}" transform="rotate({} {} {})" fill="#bbbbbb" stroke="black" stroke-width="{stroke}"/>"##,
                f(e.center[0]),
                f(e.center[1]),
                f(e.semi_axes[0]),
                f(e.semi_axes[1]),
                f(e.rotation.to_degrees()),
                f(e.center[0]),
                f(e.center[1]),
            );
        }
    }
    let cart = polyline_d(traj.true_states.iter().map(|st| st.cart_position()));
    let payload = polyline_d(traj.true_states.iter().map(|st| payload_position(st, &traj.plant_params)));
    let _ = writeln!(s, r#"<path class="cart" d="{cart}" fill="none" stroke="blue" stroke-width="{stroke}"/>"#);
    let _ = writeln!(
        s,
        r#"<path class="payload" d="{payload}" fill="none" stroke="red" stroke-width="{stroke}" stroke-dasharray="{} {}"/>"#,
        f(0.01 * w),
        f(0.005 * w)
    );
    let r = f(0.012 * w.max(h));
    let _ = writeln!(s, r#"<circle class="start" cx="{}" cy="{}" r="{r}" fill="black"/>"#, f(tc.start[0]), f(tc.start[1]));
    let side = 0.024 * w.max(h);
    let _ = writeln!(
        s,
        r#"<rect class="target" x="{}" y="{}" width="{}" height="{}" fill="none" stroke="black" stroke-width="{stroke}"/>"#,
        f(tc.target[0] - side / 2.0),
        f(tc.target[1] - side / 2.0),
        f(side),
        f(side)
    );
    s.push_str("</g>\n</svg>\n");
    s
}

/// Human-readable listing of one testcase's verdict and violations.
pub fn violations_text(report: &CompletionReport) -> String {
    let mut s = String::new();
    let verdict = if report.overall_ok { "PASS" } else { "FAIL" };
    let _ = writeln!(s, "testcase {}: {verdict}", report.testcase);
    let yn = |b: bool| if b { "ok" } else { "failed" };
    let _ = writeln!(s, "  equilibrium:     {}", yn(report.equilibrium_ok));
    let _ = writeln!(s, "  input interval:  {}", yn(report.input_interval_ok));
    let _ = writeln!(s, "  work:            {} ({:.4} J of {:.4} J)", yn(report.work_ok), report.work, report.w_max);
    let _ = writeln!(s, "  constraints:     {}", yn(report.constraints_ok));
    if report.violations.is_empty() {
        s.push_str("no violations\n");
    } else {
        let _ = writeln!(s, "{} violation(s):", report.violations.len());
        for v in &report.violations {
            let _ = writeln!(
                s,
                "  [{}] t = {:.3} s, magnitude {:.6}: {}",
                v.kind.as_str(),
                v.time,
                v.magnitude,
                v.description
            );
        }
    }
    s
}

#[derive(Serialize)]
struct ViolationFile<'a> {
    testcase: &'a str,
    overall_ok: bool,
    violations: &'a [Violation],
}

#[derive(Serialize)]
struct SummaryEntry<'a> {
    testcase: &'a str,
    overall_ok: bool,
    equilibrium_ok: bool,
    input_interval_ok: bool,
    work_ok: bool,
    constraints_ok: bool,
    work: f64,
    violations: usize,
}

#[derive(Serialize)]
struct Summary<'a> {
    testcases: usize,
    passed: usize,
    results: Vec<SummaryEntry<'a>>,
}

fn json<T: Serialize>(v: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(v).expect("report types serialize");
    out.push(b'\n');
    out
}

/// Writes `out_dir/<testcase>/{trajectory.csv, trajectory.json,
/// trajectory.svg, violations.json, violations.txt}`, `out_dir/summary.json`
/// and, when marks are given, `out_dir/marks.json`. Failures are collected
/// per file; rendering carries on.
pub fn render_report(
    testcases: &[Testcase],
    trajectories: &[Trajectory],
    reports: &[CompletionReport],
    marks: Option<&Marks>,
    out_dir: &Path,
) -> RenderOutcome {
    let mut out = RenderOutcome::default();
    if let Err(e) = fs::create_dir_all(out_dir) {
        out.errors.push((out_dir.to_path_buf(), e.to_string()));
        return out;
    }
    for ((tc, traj), report) in testcases.iter().zip(trajectories).zip(reports) {
        let dir = out_dir.join(&tc.name);
        if let Err(e) = fs::create_dir_all(&dir) {
            out.errors.push((dir, e.to_string()));
            continue;
        }
        let mut csv = Vec::new();
        match traj.write_csv(&mut csv) {
            Ok(()) => out.write(dir.join("trajectory.csv"), &csv),
            Err(e) => out.errors.push((dir.join("trajectory.csv"), e.to_string())),
        }
        out.write(dir.join("trajectory.json"), &json(traj));
        out.write(dir.join("trajectory.svg"), render_svg(tc, traj).as_bytes());
        let vf = ViolationFile { testcase: &tc.name, overall_ok: report.overall_ok, violations: &report.violations };
        out.write(dir.join("violations.json"), &json(&vf));
        out.write(dir.join("violations.txt"), violations_text(report).as_bytes());
    }
    let summary = Summary {
        testcases: reports.len(),
        passed: reports.iter().filter(|r| r.overall_ok).count(),
        results: reports
            .iter()
            .map(|r| SummaryEntry {
                testcase: &r.testcase,
                overall_ok: r.overall_ok,
                equilibrium_ok: r.equilibrium_ok,
                input_interval_ok: r.input_interval_ok,
                work_ok: r.work_ok,
                constraints_ok: r.constraints_ok,
                work: r.work,
                violations: r.violations.len(),
            })
            .collect(),
    };
    out.write(out_dir.join("summary.json"), &json(&summary));
    if let Some(m) = marks {
        out.write(out_dir.join("marks.json"), &json(m));
    }
    out
}
