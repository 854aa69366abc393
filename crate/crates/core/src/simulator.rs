//! Closed-loop platoon simulation: a kinematic leader, bilateral followers
//! on the nonlinear plant, and an optional virtual tail truck.

use std::io::Write;
use std::ops::ControlFlow;

use serde::{Deserialize, Serialize};

use crate::controllers::{follower_control, virtual_follower_control, NeighborObservation};
use crate::dynamics::{clamp_acceleration, plant_derivatives, ClosedLoopForm, LinearizedCoeffs};
use crate::error::{Error, Result};
use crate::integrator::{integrate, DelayEvaluation, DelaySystem, HistoryBuffer, IntegrationSettings, PreHistory, Termination};
use crate::metrics::{time_gap, MetricsAccumulator, MetricsSummary, DEFAULT_WARMUP};
use crate::model::{
    ControlGains, LastTruckPolicy, PlatoonScenario, PowertrainParams, TimeGapPolicy, TruckParams, TruckState,
};
use crate::profile::LeaderProfile;

/// Per-run settings that do not belong to the scenario itself.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    /// Transient excluded from the post-warm-up maxima (s).
    pub warmup: f64,
    /// Stop the run once the post-warm-up max SSTE exceeds this.
    pub abort_max_sste: Option<f64>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            warmup: DEFAULT_WARMUP,
            abort_max_sste: None,
        }
    }
}

/// The coupled platoon as a delay system. Vehicle 0 is the leader,
/// 1..=N the followers and N + 1 the virtual truck when present. Positions
/// are stored relative to a frame moving at `frame_speed`.
struct PlatoonSystem<'a> {
    followers: usize,
    virtual_tail: bool,
    coeffs: LinearizedCoeffs,
    powertrain: PowertrainParams,
    gains: ControlGains,
    policy: TimeGapPolicy,
    length: f64,
    form: ClosedLoopForm,
    profile: &'a LeaderProfile,
}

impl PlatoonSystem<'_> {
    fn vehicles(&self) -> usize {
        self.followers + 1 + usize::from(self.virtual_tail)
    }

    #[inline]
    fn gap(&self, x: &[f64], i: usize) -> f64 {
        x[3 * (i - 1)] - x[3 * i] - self.length
    }

    /// Command of follower `i` from the (delayed) state `obs`.
    #[inline]
    fn command(&self, obs: &[f64], i: usize) -> f64 {
        let lead_gap = self.gap(obs, i);
        let own = obs[3 * i + 1];
        let lead = obs[3 * (i - 1) + 1];
        let has_follower = i < self.followers || self.virtual_tail;
        let o = if has_follower {
            NeighborObservation::bilateral(lead_gap, self.gap(obs, i + 1), lead, own, obs[3 * (i + 1) + 1])
        } else {
            NeighborObservation::one_sided(lead_gap, lead, own)
        };
        follower_control(&o, &self.gains, &self.policy)
    }

    #[inline]
    fn virtual_command(&self, x: &[f64]) -> f64 {
        let i = self.followers + 1;
        virtual_follower_control(self.gap(x, i), x[3 * (i - 1) + 1], x[3 * i + 1], &self.gains, &self.policy)
    }
}

impl DelaySystem for PlatoonSystem<'_> {
    fn dim(&self) -> usize {
        3 * self.vehicles()
    }

    fn derivatives(&self, t: f64, x: &[f64], delayed: &[f64], out: &mut [f64]) {
        let frame = self.profile.speed(0.0);
        out[0] = x[1] - frame;
        out[1] = self.profile.acceleration(t);
        out[2] = 0.0;
        for i in 1..=self.followers {
            let uc = self.command(delayed, i);
            let s = TruckState::new(x[3 * i], x[3 * i + 1], x[3 * i + 2]);
            let u = self.form.plant_input(&s, uc, &self.coeffs, &self.powertrain);
            let (_, dv, da) = plant_derivatives(&s, u, &self.coeffs, &self.powertrain);
            out[3 * i] = s.speed - frame;
            out[3 * i + 1] = dv;
            out[3 * i + 2] = da;
        }
        if self.virtual_tail {
            let j = 3 * (self.followers + 1);
            out[j] = x[j + 1] - frame;
            out[j + 1] = self.virtual_command(x);
            out[j + 2] = 0.0;
        }
    }
}

/// Recorded channels of a run (every `record_stride`-th step plus the
/// last one) and its aggregate metrics. Truck 0 is the leader; the virtual
/// truck is not recorded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationTrace {
    pub step: f64,
    pub record_stride: usize,
    pub truck_length: f64,
    pub desired_time_gap: f64,
    pub time: Vec<f64>,
    /// `[truck][record]`.
    pub position: Vec<Vec<f64>>,
    pub speed: Vec<Vec<f64>>,
    /// Plant acceleration state.
    pub acceleration: Vec<Vec<f64>>,
    /// Exogenous command u_c acting at each time; the leader's entry is its
    /// profile acceleration.
    pub control: Vec<Vec<f64>>,
    pub sste: Vec<f64>,
    pub ssse: Vec<f64>,
    pub status: Termination,
    /// Time at which the run ended.
    pub end_time: f64,
    pub final_state: Vec<TruckState>,
    pub metrics: MetricsSummary,
}

impl SimulationTrace {
    fn new(trucks: usize, scenario: &PlatoonScenario, warmup: f64) -> Self {
        Self {
            step: scenario.step,
            record_stride: scenario.record_stride,
            truck_length: scenario.truck_params.length,
            desired_time_gap: scenario.policy.desired_time_gap,
            time: Vec::new(),
            position: vec![Vec::new(); trucks],
            speed: vec![Vec::new(); trucks],
            acceleration: vec![Vec::new(); trucks],
            control: vec![Vec::new(); trucks],
            sste: Vec::new(),
            ssse: Vec::new(),
            status: Termination::Completed,
            end_time: 0.0,
            final_state: Vec::new(),
            metrics: MetricsAccumulator::new(scenario.policy.desired_time_gap, warmup).finish(),
        }
    }

    pub fn len(&self) -> usize {
        self.time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time.is_empty()
    }

    /// Leader plus followers.
    pub fn truck_count(&self) -> usize {
        self.position.len()
    }

    pub fn follower_count(&self) -> usize {
        self.truck_count() - 1
    }

    /// Bumper gap in front of follower `i` (1-based) at record `k`.
    pub fn gap(&self, i: usize, k: usize) -> f64 {
        self.position[i - 1][k] - self.position[i][k] - self.truck_length
    }

    pub fn time_gap(&self, i: usize, k: usize) -> f64 {
        time_gap(self.gap(i, k), self.speed[i][k])
    }

    pub fn time_gaps(&self, k: usize) -> Vec<f64> {
        (1..self.truck_count()).map(|i| self.time_gap(i, k)).collect()
    }

    pub fn speeds(&self, k: usize) -> Vec<f64> {
        self.speed.iter().map(|v| v[k]).collect()
    }

    /// SSTE at record `k`.
    pub fn sste_at(&self, k: usize) -> f64 {
        self.sste[k]
    }

    /// SSSE at record `k`.
    pub fn ssse_at(&self, k: usize) -> f64 {
        self.ssse[k]
    }

    /// Largest |gap − T_g·v| over all followers and records.
    pub fn max_gap_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for k in 0..self.len() {
            for i in 1..self.truck_count() {
                let e = self.gap(i, k) - self.desired_time_gap * self.speed[i][k];
                worst = worst.max(e.abs());
            }
        }
        worst
    }

    /// Records whose time lies in `[from, to]`.
    pub fn window(&self, from: f64, to: f64) -> std::ops::Range<usize> {
        let lo = self.time.partition_point(|&t| t < from - 1e-9);
        let hi = self.time.partition_point(|&t| t <= to + 1e-9);
        lo..hi.max(lo)
    }

    /// Peak |v_i − v_ref| over a window, with `v_ref` the truck's speed at
    /// the start of the window.
    pub fn peak_speed_deviation(&self, truck: usize, from: f64, to: f64) -> f64 {
        let r = self.window(from, to);
        if r.is_empty() {
            return 0.0;
        }
        let base = self.speed[truck][r.start];
        self.speed[truck][r].iter().map(|v| (v - base).abs()).fold(0.0, f64::max)
    }

    /// CSV with `t_s`, then `p_i_m, v_i_mps, a_i_mps2, u_i_mps2` per truck
    /// (leader as truck 0), then `sste_s2, ssse_mps2`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t_s".to_string()];
        for i in 0..self.truck_count() {
            header.extend([
                format!("p_{i}_m"),
                format!("v_{i}_mps"),
                format!("a_{i}_mps2"),
                format!("u_{i}_mps2"),
            ]);
        }
        header.extend(["sste_s2".to_string(), "ssse_mps2".to_string()]);
        w.write_record(&header)?;
        let mut row = Vec::with_capacity(header.len());
        for k in 0..self.len() {
            row.clear();
            row.push(self.time[k].to_string());
            for i in 0..self.truck_count() {
                row.push(self.position[i][k].to_string());
                row.push(self.speed[i][k].to_string());
                row.push(self.acceleration[i][k].to_string());
                row.push(self.control[i][k].to_string());
            }
            row.push(self.sste[k].to_string());
            row.push(self.ssse[k].to_string());
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io("<trace csv>", e))?;
        Ok(())
    }
}

/// Validates `scenario` and runs it with default options.
pub fn run_platoon(scenario: &PlatoonScenario) -> Result<SimulationTrace> {
    run_platoon_with(scenario, &RunOptions::default())
}

/// Validates `scenario` and runs it.
pub fn run_platoon_with(scenario: &PlatoonScenario, options: &RunOptions) -> Result<SimulationTrace> {
    let violations = scenario.violations();
    if !violations.is_empty() {
        return Err(Error::Invalid(violations));
    }
    let profile = scenario.build_leader_profile()?;
    Ok(simulate(scenario, &profile, options))
}

/// Initial platoon in steady cruise: followers `initial_gap_offset` metres
/// beyond their desired gaps, plant acceleration balancing resistance.
pub fn initial_state(scenario: &PlatoonScenario, profile: &LeaderProfile) -> Vec<f64> {
    let n = scenario.follower_count;
    let virtual_tail = scenario.last_truck_policy == LastTruckPolicy::VirtualFollower;
    let coeffs = LinearizedCoeffs::from_params(&scenario.truck_params);
    let l = scenario.truck_params.length;
    let v_lead = profile.speed(0.0);
    let v0 = scenario.initial_speed.unwrap_or(v_lead);
    let mut x = vec![0.0, v_lead, profile.acceleration(0.0)];
    let mut p = 0.0;
    for _ in 0..n {
        p -= l + scenario.policy.desired_gap(v0) + scenario.initial_gap_offset;
        x.extend([p, v0, coeffs.specific_resistance(v0)]);
    }
    if virtual_tail {
        p -= l + scenario.policy.desired_gap(v0) + scenario.initial_gap_offset;
        x.extend([p, v0, 0.0]);
    }
    x
}

fn simulate(scenario: &PlatoonScenario, profile: &LeaderProfile, options: &RunOptions) -> SimulationTrace {
    let n = scenario.follower_count;
    let system = PlatoonSystem {
        followers: n,
        virtual_tail: scenario.last_truck_policy == LastTruckPolicy::VirtualFollower,
        coeffs: LinearizedCoeffs::from_params(&scenario.truck_params),
        powertrain: scenario.powertrain,
        gains: scenario.gains,
        policy: scenario.policy,
        length: scenario.truck_params.length,
        form: scenario.closed_loop,
        profile,
    };
    let frame = profile.speed(0.0);
    let h = scenario.step;
    let steps = scenario.step_count();
    let d = scenario.delay_steps();
    let stride = scenario.record_stride.max(1);
    let x0 = initial_state(scenario, profile);

    let mut trace = SimulationTrace::new(n + 1, scenario, options.warmup);
    let mut acc = MetricsAccumulator::new(scenario.policy.desired_time_gap, options.warmup);
    let mut speeds = vec![0.0; n];
    let mut gaps = vec![0.0; n];
    let mut delayed = vec![0.0; x0.len()];

    // Scores step `k` and records it when due; returns whether a collision occurred.
    let mut visit = |k: usize,
                     t: f64,
                     x: &[f64],
                     delayed: &[f64],
                     acc: &mut MetricsAccumulator,
                     trace: &mut SimulationTrace|
     -> bool {
        let mut collided = false;
        for i in 1..=n {
            let g = system.gap(x, i);
            collided |= g <= 0.0;
            speeds[i - 1] = x[3 * i + 1];
            gaps[i - 1] = time_gap(g, x[3 * i + 1]);
        }
        let (e_t, e_v) = acc.observe(t, x[1], &speeds, &gaps);
        if k % stride == 0 || k == steps {
            trace.time.push(t);
            for i in 0..=n {
                trace.position[i].push(x[3 * i] + frame * t);
                trace.speed[i].push(x[3 * i + 1]);
                trace.acceleration[i].push(x[3 * i + 2]);
                let u = if i == 0 { x[2] } else { system.command(delayed, i) };
                trace.control[i].push(u);
            }
            trace.sste.push(e_t);
            trace.ssse.push(e_v);
        }
        collided
    };

    let pre = PreHistory::CoMoving(frame);
    let history0 = HistoryBuffer::for_delay(&x0, h, d, pre);
    history0
        .sample_step(-(d as i64), &mut delayed)
        .expect("pre-history is always available");
    let collided_at_start = visit(0, 0.0, &x0, if d == 0 { &x0 } else { &delayed }, &mut acc, &mut trace);

    let (state, status) = if collided_at_start {
        (x0.clone(), Termination::Collision)
    } else {
        let settings = IntegrationSettings {
            step: h,
            steps,
            delay_steps: d,
            pre_history: pre,
            delay_evaluation: scenario.delay_evaluation,
        };
        let abort = options.abort_max_sste;
        integrate(&system, &x0, &settings, |k, t, x, history| {
            x[0] = profile.position(t) - frame * t;
            x[1] = profile.speed(t);
            x[2] = profile.acceleration(t);
            for i in 1..=n {
                let v = x[3 * i + 1].max(0.0);
                let rho = system.coeffs.specific_resistance(v);
                x[3 * i + 1] = v;
                x[3 * i + 2] = clamp_acceleration(x[3 * i + 2] - rho, v, &system.policy) + rho;
            }
            if system.virtual_tail {
                x[3 * (n + 1) + 2] = system.virtual_command(x);
            }
            let due = k % stride == 0 || k == steps;
            let obs: &[f64] = if d == 0 {
                x
            } else {
                if due {
                    history
                        .sample_step(k as i64 - d as i64, &mut delayed)
                        .expect("history depth covers the delay");
                }
                &delayed
            };
            if visit(k, t, x, obs, &mut acc, &mut trace) {
                return ControlFlow::Break(Termination::Collision);
            }
            match abort {
                Some(limit) if acc.max_sste() > limit => ControlFlow::Break(Termination::Aborted),
                _ => ControlFlow::Continue(()),
            }
        })
    };

    trace.status = status;
    trace.end_time = acc.finish().steps.saturating_sub(1) as f64 * h;
    trace.metrics = acc.finish();
    trace.final_state = (0..=n)
        .map(|i| TruckState::new(state[3 * i] + frame * trace.end_time, state[3 * i + 1], state[3 * i + 2]))
        .collect();
    if !status.is_completed() && trace.time.last() != Some(&trace.end_time) && status != Termination::Diverged {
        // keep the step at which the run stopped
        trace.time.push(trace.end_time);
        for i in 0..=n {
            trace.position[i].push(trace.final_state[i].position);
            trace.speed[i].push(state[3 * i + 1]);
            trace.acceleration[i].push(state[3 * i + 2]);
            trace.control[i].push(f64::NAN);
        }
        trace.sste.push(f64::NAN);
        trace.ssse.push(f64::NAN);
    }
    trace
}

/// Drives one truck through the nonlinear plant under full drift
/// cancellation and, side by side, through the ideal closed loop
/// `v̈ = u_c(t − Δ)/T_e`, both from steady cruise at `v0`. Returns the
/// largest speed difference seen. No actuator limits are applied.
pub fn linearization_deviation(
    truck: &TruckParams,
    powertrain: &PowertrainParams,
    command: impl Fn(f64) -> f64,
    v0: f64,
    duration: f64,
    step: f64,
) -> f64 {
    struct Pair<'a, F> {
        coeffs: LinearizedCoeffs,
        powertrain: PowertrainParams,
        command: &'a F,
    }
    impl<F: Fn(f64) -> f64> DelaySystem for Pair<'_, F> {
        fn dim(&self) -> usize {
            6
        }
        fn derivatives(&self, t: f64, x: &[f64], _d: &[f64], out: &mut [f64]) {
            let uc = (self.command)(t - self.powertrain.delay);
            let s = TruckState::new(x[0], x[1], x[2]);
            let u = ClosedLoopForm::Jerk.plant_input(&s, uc, &self.coeffs, &self.powertrain);
            let (dp, dv, da) = plant_derivatives(&s, u, &self.coeffs, &self.powertrain);
            out[0] = dp;
            out[1] = dv;
            out[2] = da;
            // linear model state: (p, v, v̇)
            out[3] = x[4];
            out[4] = x[5];
            out[5] = ClosedLoopForm::Jerk.linear_jerk(x[5], uc, self.powertrain.lag);
        }
    }
    let coeffs = LinearizedCoeffs::from_params(truck);
    let sys = Pair {
        coeffs,
        powertrain: *powertrain,
        command: &command,
    };
    let x0 = [0.0, v0, coeffs.specific_resistance(v0), 0.0, v0, 0.0];
    let settings = IntegrationSettings {
        step,
        steps: (duration / step).round() as usize,
        delay_steps: 0,
        pre_history: PreHistory::Constant,
        delay_evaluation: DelayEvaluation::Frozen,
    };
    let mut worst: f64 = 0.0;
    integrate(&sys, &x0, &settings, |_, _, x, _| {
        worst = worst.max((x[1] - x[4]).abs());
        ControlFlow::Continue(())
    });
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelKind, REFERENCE_SPEED};
    use crate::profile::{LeaderProfileSource, LeaderSchedule};

    fn constant_scenario(kind: ModelKind, duration: f64) -> PlatoonScenario {
        let mut s = PlatoonScenario::reference(kind, PowertrainParams::new(0.1, 0.1), 0.8);
        s.leader_profile = LeaderProfileSource::Schedule(LeaderSchedule::constant(REFERENCE_SPEED, duration));
        s.duration = duration;
        s
    }

    #[test]
    fn trace_length_and_spacing() {
        let mut s = constant_scenario(ModelKind::Asymmetric, 2.0);
        s.step = 0.01;
        let tr = run_platoon(&s).unwrap();
        assert_eq!(tr.len(), 201);
        assert_eq!(tr.status, Termination::Completed);
        for w in tr.time.windows(2) {
            assert!((w[1] - w[0] - 0.01).abs() < 1e-12);
        }
        s.record_stride = 50;
        let sparse = run_platoon(&s).unwrap();
        assert_eq!(sparse.len(), 5);
        assert_eq!(sparse.metrics, tr.metrics);
    }

    #[test]
    fn zero_duration_is_single_record() {
        let mut s = constant_scenario(ModelKind::Asymmetric, 10.0);
        s.duration = 1e-12;
        let violations = s.violations();
        assert!(violations.is_empty(), "{violations:?}");
        let tr = run_platoon(&s).unwrap();
        assert_eq!(tr.len(), 1);
    }

    #[test]
    fn equilibrium_is_invariant() {
        for kind in [ModelKind::Asymmetric, ModelKind::Symmetric] {
            let mut s = constant_scenario(kind, 20.0);
            s.initial_gap_offset = 0.0;
            let tr = run_platoon(&s).unwrap();
            assert!(tr.status.is_completed());
            assert!(tr.max_gap_error() < 1e-9, "{kind:?}: {}", tr.max_gap_error());
        }
    }

    #[test]
    fn leader_tracks_profile_exactly() {
        let mut s = PlatoonScenario::reference(ModelKind::Asymmetric, PowertrainParams::new(0.1, 0.1), 0.8);
        s.duration = 200.0;
        s.step = 0.01;
        s.record_stride = 10;
        let profile = s.build_leader_profile().unwrap();
        let tr = run_platoon(&s).unwrap();
        for (k, &t) in tr.time.iter().enumerate() {
            assert!((tr.speed[0][k] - profile.speed(t)).abs() <= 1e-12);
        }
    }

    #[test]
    fn deterministic() {
        let mut s = constant_scenario(ModelKind::Asymmetric, 30.0);
        s.step = 0.01;
        let a = run_platoon(&s).unwrap();
        let b = run_platoon(&s).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_scenario_is_rejected() {
        let mut s = constant_scenario(ModelKind::Asymmetric, 10.0);
        s.policy.desired_time_gap = 0.0;
        assert!(matches!(run_platoon(&s), Err(Error::Invalid(_))));
    }

    #[test]
    fn linearized_and_nonlinear_plants_agree() {
        let pt = PowertrainParams::new(0.1, 0.1);
        let cmd = |t: f64| 0.02 * (0.7 * t).sin();
        let dev = linearization_deviation(&TruckParams::default(), &pt, cmd, 25.0, 10.0, 0.001);
        assert!(dev < 1e-6, "{dev}");
    }
}
