//! Leader speed profiles: piecewise-linear time→speed maps built from
//! schedules, CSV files or inline knots, plus speed perturbations.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dynamics::{max_acceleration, MAX_DECELERATION};
use crate::error::{Error, Result};
use crate::model::REFERENCE_SPEED;

/// Speed of the first reduced-speed state.
pub const REDUCED_SPEED_LOW: f64 = 19.69;
/// Speed of the second reduced-speed state.
pub const REDUCED_SPEED_MID: f64 = 24.15;

/// Piecewise-linear speed profile through `(t, v)` knots. Held constant
/// outside the knot range.
#[derive(Debug, Clone, PartialEq)]
pub struct LeaderProfile {
    times: Vec<f64>,
    speeds: Vec<f64>,
    /// Distance travelled from the first knot up to each knot.
    distance: Vec<f64>,
}

impl LeaderProfile {
    pub fn new(knots: &[(f64, f64)]) -> Result<Self> {
        if knots.is_empty() {
            return Err(Error::Profile("profile has no points".into()));
        }
        for (i, &(t, v)) in knots.iter().enumerate() {
            if !t.is_finite() || !v.is_finite() || v < 0.0 {
                return Err(Error::Profile(format!(
                    "point {i} ({t}, {v}) must be finite with non-negative speed"
                )));
            }
            if i > 0 && t <= knots[i - 1].0 {
                return Err(Error::Profile(format!(
                    "times must be strictly increasing (point {i} at {t} s)"
                )));
            }
        }
        let times: Vec<f64> = knots.iter().map(|k| k.0).collect();
        let speeds: Vec<f64> = knots.iter().map(|k| k.1).collect();
        let mut distance = Vec::with_capacity(knots.len());
        distance.push(0.0);
        for i in 1..knots.len() {
            let d = distance[i - 1] + 0.5 * (speeds[i - 1] + speeds[i]) * (times[i] - times[i - 1]);
            distance.push(d);
        }
        Ok(Self {
            times,
            speeds,
            distance,
        })
    }

    pub fn constant(speed: f64, duration: f64) -> Self {
        Self::new(&[(0.0, speed), (duration.max(f64::MIN_POSITIVE), speed)])
            .expect("constant profile is well formed")
    }

    pub fn knots(&self) -> Vec<(f64, f64)> {
        self.times.iter().copied().zip(self.speeds.iter().copied()).collect()
    }

    pub fn start_time(&self) -> f64 {
        self.times[0]
    }

    pub fn end_time(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn covers(&self, from: f64, to: f64) -> bool {
        self.start_time() <= from && self.end_time() >= to
    }

    /// Index of the segment [t_i, t_{i+1}) containing `t`.
    fn segment(&self, t: f64) -> Option<usize> {
        if self.times.len() < 2 || t < self.times[0] || t >= self.end_time() {
            return None;
        }
        let i = self.times.partition_point(|&x| x <= t);
        Some(i - 1)
    }

    pub fn speed(&self, t: f64) -> f64 {
        match self.segment(t) {
            Some(i) => {
                let (t0, t1) = (self.times[i], self.times[i + 1]);
                let (v0, v1) = (self.speeds[i], self.speeds[i + 1]);
                v0 + (v1 - v0) * (t - t0) / (t1 - t0)
            }
            None if t < self.times[0] => self.speeds[0],
            None => *self.speeds.last().unwrap(),
        }
    }

    /// Slope of the segment containing `t` (right-continuous).
    pub fn acceleration(&self, t: f64) -> f64 {
        match self.segment(t) {
            Some(i) => (self.speeds[i + 1] - self.speeds[i]) / (self.times[i + 1] - self.times[i]),
            None => 0.0,
        }
    }

    /// Distance travelled since t = 0.
    pub fn position(&self, t: f64) -> f64 {
        self.distance_from_start(t) - self.distance_from_start(0.0)
    }

    fn distance_from_start(&self, t: f64) -> f64 {
        if t <= self.times[0] {
            return self.speeds[0] * (t - self.times[0]);
        }
        match self.segment(t) {
            Some(i) => {
                let v = self.speed(t);
                self.distance[i] + 0.5 * (self.speeds[i] + v) * (t - self.times[i])
            }
            None => {
                let last = self.times.len() - 1;
                self.distance[last] + self.speeds[last] * (t - self.times[last])
            }
        }
    }

    pub fn min_speed(&self) -> f64 {
        self.speeds.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_speed(&self) -> f64 {
        self.speeds.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Adds the pulses of `spec` and clamps the result to `[0, max_speed]`.
    pub fn with_perturbation(&self, spec: &PerturbationSpec, max_speed: f64) -> LeaderProfile {
        if spec.pulses.is_empty() {
            return self.clone();
        }
        let mut ts: Vec<f64> = self.times.clone();
        for p in &spec.pulses {
            ts.extend([p.onset, p.onset + p.ramp, p.onset + 2.0 * p.ramp]);
        }
        ts.sort_by(f64::total_cmp);
        ts.dedup();
        let knots: Vec<(f64, f64)> = ts
            .into_iter()
            .map(|t| {
                let v = self.speed(t) + spec.offset(t);
                (t, v.clamp(0.0, max_speed))
            })
            .collect();
        LeaderProfile::new(&knots).expect("perturbed knots stay ordered")
    }

    /// Reads a two-column CSV with header `t_s,v_mps`.
    pub fn from_csv_path(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv_reader(file)
    }

    pub fn from_csv_reader<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers()?.clone();
        let names: Vec<&str> = headers.iter().map(str::trim).collect();
        if names != ["t_s", "v_mps"] {
            return Err(Error::Profile(format!(
                "expected header t_s,v_mps, found {}",
                names.join(",")
            )));
        }
        let mut knots = Vec::new();
        for row in rdr.deserialize() {
            let (t, v): (f64, f64) = row?;
            knots.push((t, v));
        }
        Self::new(&knots)
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["t_s", "v_mps"])?;
        for (t, v) in self.knots() {
            w.write_record([t.to_string(), v.to_string()])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// How a schedule segment moves from the previous speed to its target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransitionKind {
    /// Ramp at the truck's limits from the start of the segment, then hold.
    #[default]
    DynamicsLimited,
    /// Ramp linearly across the whole segment.
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSegment {
    pub start: f64,
    pub end: f64,
    /// Speed to reach in this segment (m/s).
    pub target: f64,
}

/// Contiguous speed targets covering the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderSchedule {
    pub initial_speed: f64,
    pub segments: Vec<ScheduleSegment>,
    #[serde(default)]
    pub transition: TransitionKind,
}

impl LeaderSchedule {
    /// Cruise at 31.44 m/s with two reduced-speed zones (19.69 m/s from
    /// 158 s to 240 s and 24.15 m/s from 569 s to 634 s) over 900 s.
    pub fn reference() -> Self {
        let seg = |start, end, target| ScheduleSegment { start, end, target };
        Self {
            initial_speed: REFERENCE_SPEED,
            segments: vec![
                seg(0.0, 149.0, REFERENCE_SPEED),
                seg(149.0, 158.0, REDUCED_SPEED_LOW),
                seg(158.0, 240.0, REDUCED_SPEED_LOW),
                seg(240.0, 359.0, REFERENCE_SPEED),
                seg(359.0, 562.0, REFERENCE_SPEED),
                seg(562.0, 569.0, REDUCED_SPEED_MID),
                seg(569.0, 634.0, REDUCED_SPEED_MID),
                seg(634.0, 712.0, REFERENCE_SPEED),
                seg(712.0, 900.0, REFERENCE_SPEED),
            ],
            transition: TransitionKind::DynamicsLimited,
        }
    }

    /// A single constant-speed segment.
    pub fn constant(speed: f64, duration: f64) -> Self {
        Self {
            initial_speed: speed,
            segments: vec![ScheduleSegment {
                start: 0.0,
                end: duration,
                target: speed,
            }],
            transition: TransitionKind::DynamicsLimited,
        }
    }

    pub fn duration(&self) -> f64 {
        self.segments.last().map_or(0.0, |s| s.end)
    }

    fn check_contiguous(&self) -> Result<()> {
        if self.segments.is_empty() {
            return Err(Error::Profile("schedule has no segments".into()));
        }
        if self.segments[0].start != 0.0 {
            return Err(Error::Profile("schedule must start at 0 s".into()));
        }
        for (i, s) in self.segments.iter().enumerate() {
            if !(s.end > s.start) || s.target < 0.0 || !s.target.is_finite() {
                return Err(Error::Profile(format!("segment {i} is malformed: {s:?}")));
            }
            if i > 0 && s.start != self.segments[i - 1].end {
                return Err(Error::Profile(format!(
                    "segment {i} starts at {} s but the previous one ends at {} s",
                    s.start,
                    self.segments[i - 1].end
                )));
            }
        }
        Ok(())
    }

    /// Expands the schedule into a piecewise-linear profile.
    pub fn generate(&self) -> Result<LeaderProfile> {
        self.check_contiguous()?;
        let mut knots = vec![(0.0, self.initial_speed)];
        let mut speed = self.initial_speed;
        for (index, seg) in self.segments.iter().enumerate() {
            if seg.target != speed {
                match self.transition {
                    TransitionKind::Linear => {}
                    TransitionKind::DynamicsLimited => {
                        let ramp = ramp_knots(speed, seg.target, seg.start);
                        let reached = ramp.last().map_or(seg.start, |k| k.0);
                        if reached > seg.end + 1e-9 {
                            return Err(Error::InfeasibleSegment {
                                index,
                                start: seg.start,
                                end: seg.end,
                                target: seg.target,
                            });
                        }
                        push_knots(&mut knots, ramp);
                    }
                }
            }
            push_knots(&mut knots, [(seg.end, seg.target)]);
            speed = seg.target;
        }
        LeaderProfile::new(&knots)
    }
}

fn push_knots(knots: &mut Vec<(f64, f64)>, extra: impl IntoIterator<Item = (f64, f64)>) {
    for (t, v) in extra {
        let last = knots.last().unwrap();
        if t > last.0 + 1e-12 {
            knots.push((t, v));
        } else if t >= last.0 - 1e-12 {
            knots.last_mut().unwrap().1 = v;
        }
    }
}

/// Knots of a maximum-rate ramp from `from` to `to` starting at `t0`.
/// Upward ramps follow the speed-banded acceleration caps, downward ramps
/// brake at the fixed deceleration limit.
fn ramp_knots(from: f64, to: f64, t0: f64) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    if to < from {
        out.push((t0 + (from - to) / MAX_DECELERATION, to));
        return out;
    }
    const EDGES: [f64; 5] = [4.4, 8.9, 13.3, 17.8, 22.2];
    let (mut t, mut v) = (t0, from);
    while v < to {
        let cap = max_acceleration(v);
        let next_edge = EDGES.iter().copied().find(|&e| e > v).unwrap_or(f64::INFINITY);
        let stop = next_edge.min(to);
        t += (stop - v) / cap;
        v = stop;
        out.push((t, v));
    }
    out
}

/// Trapezoidal profile for gain tuning: cruise, linear brake to the low
/// reduced speed, hold, linear climb back, hold. Total 200 s.
pub fn gain_design_profile() -> LeaderProfile {
    LeaderProfile::new(&gain_design_knots()).expect("design knots are ordered")
}

/// Breakpoints of [`gain_design_profile`].
pub fn gain_design_knots() -> Vec<(f64, f64)> {
    vec![
        (0.0, REFERENCE_SPEED),
        (20.0, REFERENCE_SPEED),
        (30.0, REDUCED_SPEED_LOW),
        (70.0, REDUCED_SPEED_LOW),
        (170.0, REFERENCE_SPEED),
        (200.0, REFERENCE_SPEED),
    ]
}

/// Triangular speed pulse: linear change to `magnitude` over `ramp`
/// seconds from `onset`, then linear recovery over another `ramp`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedPulse {
    pub onset: f64,
    /// Signed peak speed change (m/s).
    pub magnitude: f64,
    pub ramp: f64,
}

impl SpeedPulse {
    pub fn offset(&self, t: f64) -> f64 {
        let x = (t - self.onset) / self.ramp;
        if !(0.0..=2.0).contains(&x) {
            0.0
        } else if x <= 1.0 {
            self.magnitude * x
        } else {
            self.magnitude * (2.0 - x)
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub pulses: Vec<SpeedPulse>,
}

impl PerturbationSpec {
    pub fn single(onset: f64, magnitude: f64, ramp: f64) -> Self {
        Self {
            pulses: vec![SpeedPulse {
                onset,
                magnitude,
                ramp,
            }],
        }
    }

    pub fn offset(&self, t: f64) -> f64 {
        self.pulses.iter().map(|p| p.offset(t)).sum()
    }

    pub fn validate(&self, duration: f64) -> Result<()> {
        for (i, p) in self.pulses.iter().enumerate() {
            if !(p.onset >= 0.0 && p.onset <= duration) || !(p.ramp > 0.0) || !p.magnitude.is_finite() {
                return Err(Error::Profile(format!(
                    "pulse {i} must start within [0, {duration}] s with a positive ramp: {p:?}"
                )));
            }
        }
        Ok(())
    }
}

/// Where a scenario's leader profile comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LeaderProfileSource {
    /// `[[t, v], ...]`.
    Inline(Vec<[f64; 2]>),
    Schedule(LeaderSchedule),
    /// Two-column CSV; relative paths resolve against the scenario file.
    Path(PathBuf),
}

impl LeaderProfileSource {
    pub fn build(&self) -> Result<LeaderProfile> {
        match self {
            LeaderProfileSource::Inline(pairs) => {
                let knots: Vec<(f64, f64)> = pairs.iter().map(|p| (p[0], p[1])).collect();
                LeaderProfile::new(&knots)
            }
            LeaderProfileSource::Schedule(s) => s.generate(),
            LeaderProfileSource::Path(p) => LeaderProfile::from_csv_path(p),
        }
    }

    /// Makes a relative CSV path absolute against `base`.
    pub fn resolve_relative_to(&mut self, base: &Path) {
        if let LeaderProfileSource::Path(p) = self {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}
