//! Shared value objects for the platoon: truck physics, powertrain, control
//! gains, spacing policy and the scenario that ties them together.
//!
//! Units are SI throughout: metres, seconds, m/s, m/s², kilograms, newtons.

use serde::{Deserialize, Serialize};

use crate::dynamics::ClosedLoopForm;
use crate::integrator::DelayEvaluation;
use crate::error::{Error, Result, Violation};
use crate::profile::{LeaderProfile, LeaderProfileSource, PerturbationSpec};

/// Air-density constant of the aerodynamic drag term (sea level, 15 °C).
pub const AIR_CONST: f64 = 0.047285;

/// Default truck length (semi-tractor trailer).
pub const DEFAULT_TRUCK_LENGTH: f64 = 16.15;

/// Initial speed of every truck in the reference evaluation runs.
pub const REFERENCE_SPEED: f64 = 31.44;

/// 75 mph posted limit used as the default maximum speed.
pub const DEFAULT_MAX_SPEED: f64 = 33.528;

/// Tolerance used when deciding whether a delay sits on the step grid.
const GRID_TOL: f64 = 1e-9;

/// Physical constants of a heavy-duty truck.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruckParams {
    /// Total mass (kg).
    pub mass: f64,
    /// Frontal area (m²).
    pub frontal_area: f64,
    pub drag_coeff: f64,
    pub rolling_coeff: f64,
    pub rolling_c2: f64,
    pub rolling_c3: f64,
    #[serde(default = "default_air_const")]
    pub air_const: f64,
    /// Roadway altitude (m).
    pub altitude: f64,
    /// Bumper-to-bumper length (m).
    #[serde(default = "default_length")]
    pub length: f64,
}

fn default_air_const() -> f64 {
    AIR_CONST
}

fn default_length() -> f64 {
    DEFAULT_TRUCK_LENGTH
}

impl Default for TruckParams {
    /// Semi-tractor trailer with radial tyres at 50 m altitude.
    fn default() -> Self {
        Self {
            mass: 40_000.0,
            frontal_area: 10.0,
            drag_coeff: 0.70,
            rolling_coeff: 1.5,
            rolling_c2: 0.0328,
            rolling_c3: 4.575,
            air_const: AIR_CONST,
            altitude: 50.0,
            length: DEFAULT_TRUCK_LENGTH,
        }
    }
}

impl TruckParams {
    pub fn validate_into(&self, prefix: &str, out: &mut Vec<Violation>) {
        let f = |name: &str| format!("{prefix}.{name}");
        check_finite(out, &f("mass"), self.mass);
        if !(self.mass > 0.0) {
            out.push(Violation::new(f("mass"), format!("M > 0 (got {})", self.mass)));
        }
        if !(self.frontal_area > 0.0) {
            out.push(Violation::new(
                f("frontal_area"),
                format!("A > 0 (got {})", self.frontal_area),
            ));
        }
        if !(self.drag_coeff > 0.0 && self.drag_coeff <= 2.0) {
            out.push(Violation::new(
                f("drag_coeff"),
                format!("C_d in (0, 2] (got {})", self.drag_coeff),
            ));
        }
        if !(self.length > 0.0) {
            out.push(Violation::new(f("length"), format!("l > 0 (got {})", self.length)));
        }
        if !(self.altitude >= 0.0) {
            out.push(Violation::new(
                f("altitude"),
                format!("H >= 0 (got {})", self.altitude),
            ));
        }
        for (name, v) in [
            ("rolling_coeff", self.rolling_coeff),
            ("rolling_c2", self.rolling_c2),
            ("rolling_c3", self.rolling_c3),
            ("air_const", self.air_const),
        ] {
            check_finite(out, &f(name), v);
        }
    }
}

/// Lumped powertrain lag and dead time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowertrainParams {
    /// First-order lag time constant T_e (s).
    pub lag: f64,
    /// Pure delay Δ (s).
    pub delay: f64,
}

impl PowertrainParams {
    pub fn new(lag: f64, delay: f64) -> Self {
        Self { lag, delay }
    }

    pub fn validate_into(&self, prefix: &str, out: &mut Vec<Violation>) {
        if !(self.lag > 0.0 && self.lag.is_finite()) {
            out.push(Violation::new(
                format!("{prefix}.lag"),
                format!("T_e > 0 (got {})", self.lag),
            ));
        }
        if !(self.delay >= 0.0 && self.delay.is_finite()) {
            out.push(Violation::new(
                format!("{prefix}.delay"),
                format!("delay >= 0 (got {})", self.delay),
            ));
        }
    }
}

impl Default for PowertrainParams {
    fn default() -> Self {
        Self::new(0.1, 0.1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Asymmetric,
    Symmetric,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Asymmetric => "asym",
            ModelKind::Symmetric => "sym",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "asym" | "asymmetric" => Ok(ModelKind::Asymmetric),
            "sym" | "symmetric" => Ok(ModelKind::Symmetric),
            other => Err(format!("unknown model '{other}' (expected asym or sym)")),
        }
    }
}

/// Feedback gains of the bilateral control law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlGains {
    /// Relative distance gain (s⁻²).
    #[serde(rename = "k_d1")]
    pub kd1: f64,
    /// Time-gap gain (s⁻²); zero for the symmetric model.
    #[serde(rename = "k_d2")]
    pub kd2: f64,
    /// Relative speed gain (s⁻¹).
    #[serde(rename = "k_v")]
    pub kv: f64,
    /// Desired-speed feedback gain (s⁻¹).
    #[serde(rename = "k_c")]
    pub kc: f64,
    pub model_kind: ModelKind,
}

impl ControlGains {
    /// Asymmetric gains with the distance and time-gap gains tied together.
    pub fn asymmetric(kd: f64, kv: f64, kc: f64) -> Self {
        Self {
            kd1: kd,
            kd2: kd,
            kv,
            kc,
            model_kind: ModelKind::Asymmetric,
        }
    }

    pub fn symmetric(kd: f64, kv: f64, kc: f64) -> Self {
        Self {
            kd1: kd,
            kd2: 0.0,
            kv,
            kc,
            model_kind: ModelKind::Symmetric,
        }
    }

    /// Reference asymmetric gain set.
    pub fn reference_asymmetric() -> Self {
        Self::asymmetric(1.9589, 0.52, 0.04)
    }

    /// Reference symmetric gain set.
    pub fn reference_symmetric() -> Self {
        Self::symmetric(0.8322, 1.6170, 9.927e-4)
    }

    pub fn reference(kind: ModelKind) -> Self {
        match kind {
            ModelKind::Asymmetric => Self::reference_asymmetric(),
            ModelKind::Symmetric => Self::reference_symmetric(),
        }
    }

    pub fn validate_into(&self, prefix: &str, out: &mut Vec<Violation>) {
        for (name, v) in [
            ("k_d1", self.kd1),
            ("k_d2", self.kd2),
            ("k_v", self.kv),
            ("k_c", self.kc),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                out.push(Violation::new(
                    format!("{prefix}.{name}"),
                    format!("{name} >= 0 (got {v})"),
                ));
            }
        }
        let symmetric = self.model_kind == ModelKind::Symmetric;
        if symmetric != (self.kd2 == 0.0) {
            out.push(Violation::new(
                format!("{prefix}.model_kind"),
                format!(
                    "model_kind = symmetric iff k_d2 = 0 (model_kind {:?}, k_d2 {})",
                    self.model_kind, self.kd2
                ),
            ));
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut v = Vec::new();
        self.validate_into("gains", &mut v);
        into_result(v)
    }
}

/// Constant time-gap spacing policy with speed targets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGapPolicy {
    /// Desired time gap T_g,des (s).
    #[serde(rename = "T_g_des")]
    pub desired_time_gap: f64,
    /// Desired cruise speed (m/s).
    #[serde(rename = "v_des")]
    pub desired_speed: f64,
    /// Speed above which no positive acceleration is allowed (m/s).
    #[serde(rename = "v_max")]
    pub max_speed: f64,
}

impl TimeGapPolicy {
    pub fn new(desired_time_gap: f64, desired_speed: f64, max_speed: f64) -> Self {
        Self {
            desired_time_gap,
            desired_speed,
            max_speed,
        }
    }

    /// Policy used by the reference runs: cruise at 31.44 m/s under a 75 mph limit.
    pub fn reference(desired_time_gap: f64) -> Self {
        Self::new(desired_time_gap, REFERENCE_SPEED, DEFAULT_MAX_SPEED)
    }

    pub fn desired_gap(&self, speed: f64) -> f64 {
        speed * self.desired_time_gap
    }

    pub fn validate_into(&self, prefix: &str, out: &mut Vec<Violation>) {
        if !(self.desired_time_gap > 0.0 && self.desired_time_gap.is_finite()) {
            out.push(Violation::new(
                format!("{prefix}.T_g_des"),
                format!("T_g_des > 0 (got {})", self.desired_time_gap),
            ));
        }
        if !(self.desired_speed > 0.0) {
            out.push(Violation::new(
                format!("{prefix}.v_des"),
                format!("v_des > 0 (got {})", self.desired_speed),
            ));
        }
        if !(self.desired_speed <= self.max_speed && self.max_speed.is_finite()) {
            out.push(Violation::new(
                format!("{prefix}.v_max"),
                format!(
                    "v_des <= v_max (got v_des {}, v_max {})",
                    self.desired_speed, self.max_speed
                ),
            ));
        }
    }
}

/// Longitudinal state of a truck; position is the front bumper.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TruckState {
    pub position: f64,
    pub speed: f64,
    pub acceleration: f64,
}

impl TruckState {
    pub fn new(position: f64, speed: f64, acceleration: f64) -> Self {
        Self {
            position,
            speed,
            acceleration,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.speed >= 0.0 && self.acceleration.is_finite() && self.position.is_finite()
    }
}

/// Bumper gap between a leading truck and the truck behind it.
pub fn bumper_gap(leading_position: f64, subject_position: f64, length: f64) -> f64 {
    leading_position - subject_position - length
}

/// How the last real truck obtains the follower half of the bilateral law.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LastTruckPolicy {
    /// A software-only truck trails the platoon under a unidirectional law.
    #[default]
    VirtualFollower,
    /// The last truck drops its follower terms altogether.
    OneSided,
}

fn default_gap_offset() -> f64 {
    5.0
}

fn default_stride() -> usize {
    1
}

/// A complete platoon experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlatoonScenario {
    /// Number of follower trucks N (the leader is extra).
    pub follower_count: usize,
    #[serde(default)]
    pub truck_params: TruckParams,
    pub powertrain: PowertrainParams,
    pub gains: ControlGains,
    pub policy: TimeGapPolicy,
    pub leader_profile: LeaderProfileSource,
    /// Extra initial spacing added to every desired gap (m).
    #[serde(default = "default_gap_offset")]
    pub initial_gap_offset: f64,
    /// Simulated time (s).
    pub duration: f64,
    /// Integration step h (s).
    pub step: f64,
    #[serde(default)]
    pub last_truck_policy: LastTruckPolicy,
    /// Initial follower speed; the leader profile's initial speed when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_speed: Option<f64>,
    #[serde(default)]
    pub closed_loop: ClosedLoopForm,
    #[serde(default)]
    pub delay_evaluation: DelayEvaluation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbation: Option<PerturbationSpec>,
    /// Keep every n-th step in the recorded trace. Metrics always see every step.
    #[serde(default = "default_stride")]
    pub record_stride: usize,
}

impl PlatoonScenario {
    /// Five followers behind the reference leader schedule, 900 s at 1 ms.
    pub fn reference(kind: ModelKind, powertrain: PowertrainParams, desired_time_gap: f64) -> Self {
        Self {
            follower_count: 5,
            truck_params: TruckParams::default(),
            powertrain,
            gains: ControlGains::reference(kind),
            policy: TimeGapPolicy::reference(desired_time_gap),
            leader_profile: LeaderProfileSource::Schedule(
                crate::profile::LeaderSchedule::reference(),
            ),
            initial_gap_offset: 5.0,
            duration: 900.0,
            step: 0.001,
            last_truck_policy: LastTruckPolicy::VirtualFollower,
            initial_speed: None,
            closed_loop: ClosedLoopForm::default(),
            delay_evaluation: DelayEvaluation::default(),
            perturbation: None,
            record_stride: 1,
        }
    }

    pub fn step_count(&self) -> usize {
        (self.duration / self.step).round() as usize
    }

    pub fn delay_steps(&self) -> usize {
        (self.powertrain.delay / self.step).round() as usize
    }

    /// Leader profile with any perturbation applied.
    pub fn build_leader_profile(&self) -> Result<LeaderProfile> {
        let base = self.leader_profile.build()?;
        Ok(match &self.perturbation {
            Some(p) => base.with_perturbation(p, self.policy.max_speed),
            None => base,
        })
    }

    /// Checks every invariant and returns the full list of violations.
    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.follower_count < 1 {
            out.push(Violation::new("follower_count", "N >= 1 (got 0)"));
        }
        self.truck_params.validate_into("truck_params", &mut out);
        self.powertrain.validate_into("powertrain", &mut out);
        self.gains.validate_into("gains", &mut out);
        self.policy.validate_into("policy", &mut out);
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            out.push(Violation::new(
                "duration",
                format!("duration > 0 (got {})", self.duration),
            ));
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            out.push(Violation::new("step", format!("h > 0 (got {})", self.step)));
        } else if self.powertrain.delay >= 0.0 && !is_grid_multiple(self.powertrain.delay, self.step)
        {
            out.push(Violation::new(
                "powertrain.delay",
                format!(
                    "delay not multiple of step (delay {}, step {})",
                    self.powertrain.delay, self.step
                ),
            ));
        }
        if !self.initial_gap_offset.is_finite() {
            out.push(Violation::new("initial_gap_offset", "must be finite"));
        }
        if let Some(v0) = self.initial_speed {
            if !(v0 >= 0.0 && v0.is_finite()) {
                out.push(Violation::new(
                    "initial_speed",
                    format!("initial speed >= 0 (got {v0})"),
                ));
            }
        }
        if let Some(p) = &self.perturbation {
            if let Err(e) = p.validate(self.duration) {
                out.push(Violation::new("perturbation", e.to_string()));
            }
        }
        if self.record_stride == 0 {
            out.push(Violation::new("record_stride", "record_stride >= 1 (got 0)"));
        }
        match self.build_leader_profile() {
            Ok(profile) => {
                if self.duration > 0.0 && !profile.covers(0.0, self.duration) {
                    out.push(Violation::new(
                        "leader_profile",
                        format!(
                            "profile covers [{}, {}] but the run needs [0, {}]",
                            profile.start_time(),
                            profile.end_time(),
                            self.duration
                        ),
                    ));
                }
            }
            Err(e) => out.push(Violation::new("leader_profile", e.to_string())),
        }
        out
    }

    /// Returns the scenario unchanged when every invariant holds.
    pub fn validate(self) -> Result<Self> {
        let v = self.violations();
        if v.is_empty() {
            Ok(self)
        } else {
            Err(Error::Invalid(v))
        }
    }
}

/// True when `value` is an integer multiple of `step` up to rounding.
pub fn is_grid_multiple(value: f64, step: f64) -> bool {
    let ratio = value / step;
    (ratio - ratio.round()).abs() <= GRID_TOL * ratio.abs().max(1.0)
}

fn check_finite(out: &mut Vec<Violation>, field: &str, v: f64) {
    if !v.is_finite() {
        out.push(Violation::new(field, format!("must be finite (got {v})")));
    }
}

fn into_result(v: Vec<Violation>) -> Result<()> {
    if v.is_empty() {
        Ok(())
    } else {
        Err(Error::Invalid(v))
    }
}
