//! From cell orderings to timed planar trajectories and step/turn programs.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cell::Cell;
use crate::error::{domain, Error, Result};

/// Arc-length spacing used when discretizing a path for timing.
pub const DS: f64 = 0.05;
/// Angular spacing of in-place rotation samples.
const ROTATION_STEP: f64 = PI / 36.0;

/// Wraps an angle into `(−π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedLimits {
    pub v_max: f64,
    pub a_max: f64,
    pub omega_max: f64,
}

impl Default for SpeedLimits {
    fn default() -> Self {
        Self {
            v_max: 0.8,
            a_max: 0.5,
            omega_max: 0.9,
        }
    }
}

impl SpeedLimits {
    pub fn validate(&self) -> Result<()> {
        if [self.v_max, self.a_max, self.omega_max]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0)
        {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "speed limits must be positive: {self:?}"
            )))
        }
    }
}

/// `min(v_max, ω_max/|κ|)`; zero curvature leaves only `v_max`.
pub fn velocity_limit(curvature: f64, limits: &SpeedLimits) -> f64 {
    if curvature == 0.0 {
        limits.v_max
    } else {
        limits.v_max.min(limits.omega_max / curvature.abs())
    }
}

/// Metric polyline through cell centers with axis-aligned segments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaypointPath {
    pub points: Vec<(f64, f64)>,
}

fn center(c: Cell, cell_size: f64) -> (f64, f64) {
    (
        cell_size * (c.x as f64 + 0.5),
        cell_size * (c.y as f64 + 0.5),
    )
}

/// Drops repeated cells and inserts an L-corner (x first, then y) wherever
/// consecutive cells differ in both coordinates.
pub fn expand_cells(cells: &[Cell]) -> Vec<Cell> {
    let mut out: Vec<Cell> = Vec::with_capacity(cells.len());
    for &c in cells {
        let Some(&prev) = out.last() else {
            out.push(c);
            continue;
        };
        if c == prev {
            continue;
        }
        if c.x != prev.x && c.y != prev.y {
            out.push(Cell::new(c.x, prev.y));
        }
        out.push(c);
    }
    out
}

/// Cell centers of [`expand_cells`] in visiting order.
pub fn cells_to_waypoints(cells: &[Cell], cell_size: f64) -> Result<WaypointPath> {
    if cells.is_empty() {
        return domain("cannot build a path from an empty cell ordering");
    }
    if !(cell_size > 0.0 && cell_size.is_finite()) {
        return domain(format!("cell size must be positive, got {cell_size}"));
    }
    Ok(WaypointPath {
        points: expand_cells(cells)
            .into_iter()
            .map(|c| center(c, cell_size))
            .collect(),
    })
}

impl WaypointPath {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn segment_lengths(&self) -> Vec<f64> {
        self.points
            .windows(2)
            .map(|w| (w[1].0 - w[0].0).hypot(w[1].1 - w[0].1))
            .collect()
    }

    /// Cumulative arc length at each waypoint.
    pub fn arc_lengths(&self) -> Vec<f64> {
        let mut s = vec![0.0];
        for d in self.segment_lengths() {
            s.push(s.last().unwrap() + d);
        }
        s
    }

    pub fn total_length(&self) -> f64 {
        self.segment_lengths().iter().sum()
    }

    /// Tangent heading of each segment.
    pub fn headings(&self) -> Vec<f64> {
        self.points
            .windows(2)
            .map(|w| (w[1].1 - w[0].1).atan2(w[1].0 - w[0].0))
            .collect()
    }

    /// Curvature at each waypoint: zero on straight runs and at the ends,
    /// infinite where the heading changes.
    pub fn curvatures(&self) -> Vec<f64> {
        let h = self.headings();
        let mut k = vec![0.0; self.points.len()];
        for i in 1..h.len() {
            if wrap_angle(h[i] - h[i - 1]).abs() > 1e-9 {
                k[i] = f64::INFINITY;
            }
        }
        k
    }

    pub fn is_axis_aligned(&self) -> bool {
        self.points
            .windows(2)
            .all(|w| (w[0].0 == w[1].0) != (w[0].1 == w[1].1))
    }

    /// Inserts points so that no segment is longer than `step`, keeping
    /// every original vertex.
    pub fn resampled(&self, step: f64) -> Result<WaypointPath> {
        if !(step > 0.0) {
            return domain(format!("resample step must be positive, got {step}"));
        }
        let mut points = vec![self.points[0]];
        for w in self.points.windows(2) {
            let d = (w[1].0 - w[0].0).hypot(w[1].1 - w[0].1);
            let n = (d / step - 1e-9).ceil().max(1.0) as usize;
            for k in 1..=n {
                let f = k as f64 / n as f64;
                points.push((
                    w[0].0 + f * (w[1].0 - w[0].0),
                    w[0].1 + f * (w[1].1 - w[0].1),
                ));
            }
        }
        Ok(WaypointPath { points })
    }
}

/// Discretized speed profile along a path.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityProfile {
    pub s: Vec<f64>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub heading: Vec<f64>,
    pub v_limit: Vec<f64>,
    pub v: Vec<f64>,
    /// Samples where the path turns in place.
    pub corner: Vec<bool>,
    pub a_max: f64,
}

impl VelocityProfile {
    /// First constraint broken by the current speeds, if any.
    pub fn violation(&self, tol: f64) -> Option<usize> {
        let n = self.v.len();
        if self.v[0] > tol || self.v[n - 1] > tol {
            return Some(if self.v[0] > tol { 0 } else { n - 1 });
        }
        for i in 0..n {
            if self.v[i] > self.v_limit[i] + tol {
                return Some(i);
            }
            if i + 1 < n {
                let ds = self.s[i + 1] - self.s[i];
                if (self.v[i + 1].powi(2) - self.v[i].powi(2)).abs() > 2.0 * self.a_max * ds + tol {
                    return Some(i);
                }
            }
        }
        None
    }
}

/// Forward/backward pass over the path sampled at spacing at most [`DS`],
/// with zero speed at both ends and at every corner.
pub fn velocity_profile(path: &WaypointPath, limits: &SpeedLimits) -> Result<VelocityProfile> {
    limits.validate()?;
    if path.points.len() < 2 {
        return domain("velocity profile needs at least two waypoints");
    }
    let headings = path.headings();
    let curv = path.curvatures();
    let mut p = VelocityProfile {
        s: vec![0.0],
        x: vec![path.points[0].0],
        y: vec![path.points[0].1],
        heading: vec![headings[0]],
        v_limit: vec![0.0],
        v: Vec::new(),
        corner: vec![false],
        a_max: limits.a_max,
    };
    for (seg, w) in path.points.windows(2).enumerate() {
        let d = (w[1].0 - w[0].0).hypot(w[1].1 - w[0].1);
        let n = (d / DS - 1e-9).ceil().max(1.0) as usize;
        let s0 = *p.s.last().unwrap();
        for k in 1..=n {
            let f = k as f64 / n as f64;
            p.s.push(s0 + f * d);
            p.x.push(w[0].0 + f * (w[1].0 - w[0].0));
            p.y.push(w[0].1 + f * (w[1].1 - w[0].1));
            p.heading.push(headings[seg]);
            let vertex = k == n;
            let is_corner = vertex && curv[seg + 1].is_infinite();
            let kappa = if vertex { curv[seg + 1] } else { 0.0 };
            p.v_limit.push(if is_corner {
                0.0
            } else {
                velocity_limit(kappa, limits)
            });
            p.corner.push(is_corner);
        }
    }
    let n = p.s.len();
    *p.v_limit.last_mut().unwrap() = 0.0;
    let mut v = p.v_limit.clone();
    v[0] = 0.0;
    for i in 0..n - 1 {
        let ds = p.s[i + 1] - p.s[i];
        v[i + 1] = v[i + 1].min((v[i] * v[i] + 2.0 * limits.a_max * ds).sqrt());
    }
    for i in (0..n - 1).rev() {
        let ds = p.s[i + 1] - p.s[i];
        v[i] = v[i].min((v[i + 1] * v[i + 1] + 2.0 * limits.a_max * ds).sqrt());
    }
    p.v = v;
    Ok(p)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Se2Sample {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedSe2Trajectory {
    pub reference_time: f64,
    pub frame_label: String,
    pub samples: Vec<Se2Sample>,
}

impl TimedSe2Trajectory {
    pub fn duration(&self) -> f64 {
        match (self.samples.first(), self.samples.last()) {
            (Some(a), Some(b)) => b.t - a.t,
            _ => 0.0,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Time for a constant-acceleration move over `ds` between two speeds.
fn interval_time(ds: f64, v0: f64, v1: f64, a_max: f64) -> f64 {
    if v0 + v1 > 0.0 {
        2.0 * ds / (v0 + v1)
    } else {
        // Stop-to-stop over a tiny gap: accelerate then brake.
        2.0 * (ds / a_max).sqrt()
    }
}

fn push_rotation(samples: &mut Vec<Se2Sample>, from: f64, to: f64, omega_max: f64) {
    let delta = wrap_angle(to - from);
    if delta.abs() < 1e-12 {
        return;
    }
    let steps = (delta.abs() / ROTATION_STEP - 1e-9).ceil().max(1.0) as usize;
    let dt = delta.abs() / omega_max / steps as f64;
    let last = *samples.last().unwrap();
    for k in 1..=steps {
        samples.push(Se2Sample {
            t: last.t + dt * k as f64,
            x: last.x,
            y: last.y,
            theta: wrap_angle(from + delta * k as f64 / steps as f64),
        });
    }
}

/// Timed trajectory that stops and rotates in place at each corner.
pub fn time_parameterize(
    path: &WaypointPath,
    limits: &SpeedLimits,
    reference_time: f64,
    frame_label: &str,
) -> Result<TimedSe2Trajectory> {
    limits.validate()?;
    if path.is_empty() {
        return domain("cannot time an empty path");
    }
    let mut samples = Vec::new();
    if path.points.len() < 2 {
        let (x, y) = path.points[0];
        samples.push(Se2Sample {
            t: reference_time,
            x,
            y,
            theta: 0.0,
        });
        return Ok(TimedSe2Trajectory {
            reference_time,
            frame_label: frame_label.to_string(),
            samples,
        });
    }
    let p = velocity_profile(path, limits)?;
    samples.push(Se2Sample {
        t: reference_time,
        x: p.x[0],
        y: p.y[0],
        theta: wrap_angle(p.heading[0]),
    });
    for i in 0..p.s.len() - 1 {
        let dt = interval_time(p.s[i + 1] - p.s[i], p.v[i], p.v[i + 1], limits.a_max);
        let t = samples.last().unwrap().t + dt;
        samples.push(Se2Sample {
            t,
            x: p.x[i + 1],
            y: p.y[i + 1],
            theta: wrap_angle(p.heading[i + 1]),
        });
        if p.corner[i + 1] {
            push_rotation(
                &mut samples,
                p.heading[i + 1],
                p.heading[i + 2],
                limits.omega_max,
            );
        }
    }
    Ok(TimedSe2Trajectory {
        reference_time,
        frame_label: frame_label.to_string(),
        samples,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    Empty,
    Monotonicity,
    Speed,
    Acceleration,
    TurnRate,
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::Empty => "empty",
            Self::Monotonicity => "monotonicity",
            Self::Speed => "speed",
            Self::Acceleration => "acceleration",
            Self::TurnRate => "turn_rate",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    /// Index of the sample that ends the offending interval.
    pub index: usize,
    pub value: f64,
    pub limit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub passed: bool,
    pub violation: Option<Violation>,
}

/// Tolerance added to every limit during validation.
pub const VALIDATION_TOL: f64 = 1e-6;

/// Checks monotone time, interval speed, acceleration between interval
/// speeds (starting and ending at rest) and turn rate.
pub fn validate_trajectory(traj: &TimedSe2Trajectory, limits: &SpeedLimits) -> ValidationReport {
    let fail = |kind, index, value, limit| ValidationReport {
        passed: false,
        violation: Some(Violation {
            kind,
            index,
            value,
            limit,
        }),
    };
    let s = &traj.samples;
    if s.is_empty() {
        return fail(ViolationKind::Empty, 0, 0.0, 1.0);
    }
    let mut speeds = Vec::with_capacity(s.len());
    let mut dts = Vec::with_capacity(s.len());
    for i in 1..s.len() {
        let dt = s[i].t - s[i - 1].t;
        if !(dt > 0.0) {
            return fail(ViolationKind::Monotonicity, i, dt, 0.0);
        }
        let v = (s[i].x - s[i - 1].x).hypot(s[i].y - s[i - 1].y) / dt;
        if v > limits.v_max + VALIDATION_TOL {
            return fail(ViolationKind::Speed, i, v, limits.v_max);
        }
        let w = wrap_angle(s[i].theta - s[i - 1].theta).abs() / dt;
        if w > limits.omega_max + VALIDATION_TOL {
            return fail(ViolationKind::TurnRate, i, w, limits.omega_max);
        }
        speeds.push(v);
        dts.push(dt);
    }
    if !speeds.is_empty() {
        let n = speeds.len();
        let check = |index: usize, dv: f64, dt: f64| {
            let a = dv.abs() / dt;
            (a > limits.a_max + VALIDATION_TOL).then_some((index, a))
        };
        let mut hit = check(1, speeds[0], dts[0] / 2.0);
        for j in 1..n {
            if hit.is_some() {
                break;
            }
            hit = check(
                j + 1,
                speeds[j] - speeds[j - 1],
                (dts[j] + dts[j - 1]) / 2.0,
            );
        }
        if hit.is_none() {
            hit = check(n, speeds[n - 1], dts[n - 1] / 2.0);
        }
        if let Some((index, a)) = hit {
            return fail(ViolationKind::Acceleration, index, a, limits.a_max);
        }
    }
    ValidationReport {
        passed: true,
        violation: None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Primitive {
    /// `count` turns of `degrees` each (signed).
    Turn { degrees: i32, count: u32 },
    /// `count` straight steps of `step` meters.
    Forward { step: f64, count: u32 },
}

impl fmt::Display for Primitive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Turn { degrees, count } => write!(f, "TURN {degrees:+} x{count}"),
            Self::Forward { step, count } => write!(f, "FWD {step} x{count}"),
        }
    }
}

impl FromStr for Primitive {
    type Err = Error;

    fn from_str(line: &str) -> Result<Self> {
        let bad = || Error::Domain(format!("malformed primitive line {line:?}"));
        let parts: Vec<&str> = line.split_whitespace().collect();
        let [op, amount, count] = parts.as_slice() else {
            return Err(bad());
        };
        let count: u32 = count
            .strip_prefix('x')
            .ok_or_else(bad)?
            .parse()
            .map_err(|_| bad())?;
        match *op {
            "TURN" => Ok(Self::Turn {
                degrees: amount.parse().map_err(|_| bad())?,
                count,
            }),
            "FWD" => {
                let step: f64 = amount.parse().map_err(|_| bad())?;
                if !(step > 0.0) {
                    return Err(bad());
                }
                Ok(Self::Forward { step, count })
            }
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrimitiveProgram {
    pub start: Pose,
    pub commands: Vec<Primitive>,
}

impl PrimitiveProgram {
    /// One command per line.
    pub fn to_text(&self) -> String {
        self.commands.iter().map(|c| format!("{c}\n")).collect()
    }

    pub fn parse(text: &str, start: Pose) -> Result<Self> {
        let commands = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::parse)
            .collect::<Result<_>>()?;
        Ok(Self { start, commands })
    }

    /// Pose after every unit primitive, starting with the start pose.
    pub fn replay(&self) -> Vec<Pose> {
        let mut pose = self.start;
        let mut out = vec![pose];
        for c in &self.commands {
            match *c {
                Primitive::Turn { degrees, count } => {
                    for _ in 0..count {
                        pose.theta = wrap_angle(pose.theta + (degrees as f64).to_radians());
                        out.push(pose);
                    }
                }
                Primitive::Forward { step, count } => {
                    for _ in 0..count {
                        pose.x += step * pose.theta.cos();
                        pose.y += step * pose.theta.sin();
                        out.push(pose);
                    }
                }
            }
        }
        out
    }
}

/// Discrete turn/step program that follows `path` from `start_heading`.
///
/// Each leg turns by whole multiples of `turn_deg` toward the next waypoint
/// (rounding the turn count up) and then steps forward `⌈d/step⌉` times,
/// measuring from the pose reached so far.
pub fn to_primitives(
    path: &WaypointPath,
    start_heading: f64,
    step: f64,
    turn_deg: i32,
) -> Result<PrimitiveProgram> {
    if path.is_empty() {
        return domain("cannot build primitives for an empty path");
    }
    if !(step > 0.0) || turn_deg <= 0 {
        return domain("step length and turn resolution must be positive");
    }
    let turn = (turn_deg as f64).to_radians();
    let (x0, y0) = path.points[0];
    let start = Pose {
        x: x0,
        y: y0,
        theta: wrap_angle(start_heading),
    };
    let mut pose = start;
    let mut commands = Vec::new();
    for &(gx, gy) in &path.points[1..] {
        let d = (gx - pose.x).hypot(gy - pose.y);
        if d < 1e-9 {
            continue;
        }
        let err = wrap_angle((gy - pose.y).atan2(gx - pose.x) - pose.theta);
        let k = (err.abs() / turn - 1e-9).ceil().max(0.0) as u32;
        if k > 0 {
            let sign = if err > 0.0 { 1 } else { -1 };
            commands.push(Primitive::Turn {
                degrees: sign * turn_deg,
                count: k,
            });
            pose.theta = wrap_angle(pose.theta + sign as f64 * turn * k as f64);
        }
        let n = (d / step - 1e-9).ceil() as u32;
        commands.push(Primitive::Forward { step, count: n });
        pose.x += n as f64 * step * pose.theta.cos();
        pose.y += n as f64 * step * pose.theta.sin();
    }
    Ok(PrimitiveProgram { start, commands })
}
