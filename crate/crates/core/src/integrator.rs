//! Fixed-step RK4 for delay differential systems whose delay is a whole
//! number of steps, with a ring-buffer history for the delayed arguments.

use std::ops::ControlFlow;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::TruckState;

/// A system `ẋ(t) = F(t, x(t), x(t − Δ))`.
pub trait DelaySystem {
    fn dim(&self) -> usize;

    /// Writes `ẋ` into `out`. `delayed` is the state one delay earlier; for a
    /// zero delay it is `state` itself.
    fn derivatives(&self, t: f64, state: &[f64], delayed: &[f64], out: &mut [f64]);
}

/// How the state is extended before t = 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PreHistory {
    /// x(t) = x(0).
    Constant,
    /// The state is a list of (p, v, a) triples in steady cruise:
    /// p(t) = p₀ + v₀·t, v = v₀, a = 0.
    Cruise,
    /// Steady cruise with positions measured in a frame moving at the
    /// given speed: p(t) = p₀ + (v₀ − frame)·t.
    CoMoving(f64),
}

/// How the delayed argument is evaluated inside one RK4 step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DelayEvaluation {
    /// Sampled once at t − Δ and held for the whole step.
    #[default]
    Frozen,
    /// Sampled at every stage time, linearly interpolated between stored
    /// steps. Requires Δ ≥ h.
    Interpolated,
}

/// Past states on the step grid, deep enough to serve the largest delay.
#[derive(Debug, Clone)]
pub struct HistoryBuffer {
    dim: usize,
    depth: usize,
    step: f64,
    initial: Vec<f64>,
    pre_history: PreHistory,
    ring: Vec<f64>,
    newest: i64,
}

impl HistoryBuffer {
    /// A buffer holding `initial` as step 0 and retaining `depth` steps.
    pub fn new(initial: &[f64], step: f64, depth: usize, pre_history: PreHistory) -> Self {
        let dim = initial.len();
        let depth = depth.max(1);
        let mut ring = vec![0.0; dim * depth];
        ring[..dim].copy_from_slice(initial);
        Self {
            dim,
            depth,
            step,
            initial: initial.to_vec(),
            pre_history,
            ring,
            newest: 0,
        }
    }

    /// Buffer deep enough for a delay of `delay_steps` steps.
    pub fn for_delay(initial: &[f64], step: f64, delay_steps: usize, pre_history: PreHistory) -> Self {
        Self::new(initial, step, delay_steps + 1, pre_history)
    }

    pub fn newest_step(&self) -> i64 {
        self.newest
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn push(&mut self, state: &[f64]) {
        debug_assert_eq!(state.len(), self.dim);
        self.newest += 1;
        let slot = (self.newest as usize) % self.depth;
        self.ring[slot * self.dim..(slot + 1) * self.dim].copy_from_slice(state);
    }

    /// Writes the state at grid step `k` into `out`. Negative steps come from
    /// the pre-history.
    pub fn sample_step(&self, k: i64, out: &mut [f64]) -> Result<()> {
        if k < 0 {
            self.pre_history_at(k as f64 * self.step, out);
            return Ok(());
        }
        let oldest = (self.newest - self.depth as i64 + 1).max(0);
        if k < oldest || k > self.newest {
            return Err(Error::HistoryDepth {
                requested: k,
                oldest,
            });
        }
        let slot = (k as usize) % self.depth;
        out.copy_from_slice(&self.ring[slot * self.dim..(slot + 1) * self.dim]);
        Ok(())
    }

    /// Writes the state at time `t` into `out`; `t` must lie on the grid.
    pub fn sample_delayed(&self, t: f64, out: &mut [f64]) -> Result<()> {
        let ratio = t / self.step;
        let k = ratio.round();
        if (ratio - k).abs() > 1e-6 {
            return Err(Error::OffGrid(t));
        }
        self.sample_step(k as i64, out)
    }

    /// State at fractional step `s` by linear interpolation of the grid.
    pub fn sample_fractional(&self, s: f64, out: &mut [f64]) -> Result<()> {
        let lo = s.floor();
        let frac = s - lo;
        self.sample_step(lo as i64, out)?;
        if frac > 0.0 {
            let mut hi = vec![0.0; self.dim];
            self.sample_step(lo as i64 + 1, &mut hi)?;
            for (o, h) in out.iter_mut().zip(&hi) {
                *o += frac * (h - *o);
            }
        }
        Ok(())
    }

    /// Position, speed and acceleration of vehicle `index` for a state made
    /// of (p, v, a) triples.
    pub fn sample_vehicle(&self, index: usize, t: f64) -> Result<TruckState> {
        let mut buf = vec![0.0; self.dim];
        self.sample_delayed(t, &mut buf)?;
        Ok(TruckState::new(buf[3 * index], buf[3 * index + 1], buf[3 * index + 2]))
    }

    fn pre_history_at(&self, t: f64, out: &mut [f64]) {
        out.copy_from_slice(&self.initial);
        let frame = match self.pre_history {
            PreHistory::Constant => return,
            PreHistory::Cruise => 0.0,
            PreHistory::CoMoving(frame) => frame,
        };
        for tri in out.chunks_exact_mut(3) {
            tri[0] += (tri[1] - frame) * t;
            tri[2] = 0.0;
        }
    }
}

/// Scratch space for [`rk4_step`], reused across steps.
#[derive(Debug, Clone)]
pub struct Rk4Workspace {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    stage: Vec<f64>,
    delayed: [Vec<f64>; 3],
}

impl Rk4Workspace {
    pub fn new(dim: usize) -> Self {
        Self {
            k1: vec![0.0; dim],
            k2: vec![0.0; dim],
            k3: vec![0.0; dim],
            k4: vec![0.0; dim],
            stage: vec![0.0; dim],
            delayed: [vec![0.0; dim], vec![0.0; dim], vec![0.0; dim]],
        }
    }
}

/// Delayed arguments for the three distinct RK4 stage times
/// (t, t + h/2, t + h). `None` means zero delay: use the stage state.
#[derive(Debug, Clone, Copy)]
pub enum StageDelays<'a> {
    None,
    Frozen(&'a [f64]),
    Staged([&'a [f64]; 3]),
}

/// One classical RK4 step of `state` from `t` to `t + h`, in place.
pub fn rk4_step<S: DelaySystem + ?Sized>(
    system: &S,
    state: &mut [f64],
    t: f64,
    h: f64,
    delays: StageDelays<'_>,
    ws: &mut Rk4Workspace,
) {
    let (d0, dmid, dend): (Option<&[f64]>, Option<&[f64]>, Option<&[f64]>) = match delays {
        StageDelays::None => (None, None, None),
        StageDelays::Frozen(d) => (Some(d), Some(d), Some(d)),
        StageDelays::Staged([a, b, c]) => (Some(a), Some(b), Some(c)),
    };
    let Rk4Workspace {
        k1,
        k2,
        k3,
        k4,
        stage,
        ..
    } = ws;

    system.derivatives(t, state, d0.unwrap_or(state), k1);

    for ((s, x), k) in stage.iter_mut().zip(state.iter()).zip(k1.iter()) {
        *s = x + 0.5 * h * k;
    }
    system.derivatives(t + 0.5 * h, stage, dmid.unwrap_or(stage), k2);

    for ((s, x), k) in stage.iter_mut().zip(state.iter()).zip(k2.iter()) {
        *s = x + 0.5 * h * k;
    }
    system.derivatives(t + 0.5 * h, stage, dmid.unwrap_or(stage), k3);

    for ((s, x), k) in stage.iter_mut().zip(state.iter()).zip(k3.iter()) {
        *s = x + h * k;
    }
    system.derivatives(t + h, stage, dend.unwrap_or(stage), k4);

    for i in 0..state.len() {
        state[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

/// Why an integration run stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Completed,
    Collision,
    Diverged,
    /// Stopped on request of the observer (e.g. a score threshold was hit).
    Aborted,
}

impl Termination {
    pub fn is_completed(self) -> bool {
        self == Termination::Completed
    }
}

/// Settings for [`integrate`].
#[derive(Debug, Clone, Copy)]
pub struct IntegrationSettings {
    pub step: f64,
    pub steps: usize,
    pub delay_steps: usize,
    pub pre_history: PreHistory,
    pub delay_evaluation: DelayEvaluation,
}

/// Integrates `system` from `x0` for `settings.steps` steps.
///
/// After every step the observer receives the step index, time, a
/// mutable view of the new state (for projections such as actuator
/// limits) and the history up to the previous step, and may stop the run.
/// The (possibly modified) state is what enters the history. A non-finite
/// state ends the run as diverged.
pub fn integrate<S, F>(
    system: &S,
    x0: &[f64],
    settings: &IntegrationSettings,
    mut observer: F,
) -> (Vec<f64>, Termination)
where
    S: DelaySystem + ?Sized,
    F: FnMut(usize, f64, &mut [f64], &HistoryBuffer) -> ControlFlow<Termination>,
{
    let dim = system.dim();
    assert_eq!(x0.len(), dim, "initial state has the wrong dimension");
    let h = settings.step;
    let d = settings.delay_steps as i64;
    let mut state = x0.to_vec();
    let mut history = HistoryBuffer::for_delay(x0, h, settings.delay_steps, settings.pre_history);
    let mut ws = Rk4Workspace::new(dim);
    let interpolate = settings.delay_evaluation == DelayEvaluation::Interpolated && d > 0;

    for k in 0..settings.steps {
        let t = k as f64 * h;
        let k = k as i64;
        if d == 0 {
            rk4_step(system, &mut state, t, h, StageDelays::None, &mut ws);
        } else if interpolate {
            let mut bufs = std::mem::take(&mut ws.delayed);
            history
                .sample_step(k - d, &mut bufs[0])
                .and_then(|_| history.sample_fractional((k - d) as f64 + 0.5, &mut bufs[1]))
                .and_then(|_| history.sample_step(k - d + 1, &mut bufs[2]))
                .expect("history depth covers the delay");
            rk4_step(
                system,
                &mut state,
                t,
                h,
                StageDelays::Staged([&bufs[0], &bufs[1], &bufs[2]]),
                &mut ws,
            );
            ws.delayed = bufs;
        } else {
            let mut buf = std::mem::take(&mut ws.delayed[0]);
            history
                .sample_step(k - d, &mut buf)
                .expect("history depth covers the delay");
            rk4_step(system, &mut state, t, h, StageDelays::Frozen(&buf), &mut ws);
            ws.delayed[0] = buf;
        }

        if state.iter().any(|x| !x.is_finite()) {
            return (state, Termination::Diverged);
        }
        let next = (k + 1) as usize;
        if let ControlFlow::Break(reason) = observer(next, next as f64 * h, &mut state, &history) {
            return (state, reason);
        }
        history.push(&state);
    }
    (state, Termination::Completed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    struct Decay;
    impl DelaySystem for Decay {
        fn dim(&self) -> usize {
            1
        }
        fn derivatives(&self, _t: f64, state: &[f64], _d: &[f64], out: &mut [f64]) {
            out[0] = -state[0];
        }
    }

    struct Zero;
    impl DelaySystem for Zero {
        fn dim(&self) -> usize {
            3
        }
        fn derivatives(&self, _t: f64, _s: &[f64], _d: &[f64], out: &mut [f64]) {
            out.fill(0.0);
        }
    }

    fn settings(step: f64, steps: usize, delay_steps: usize) -> IntegrationSettings {
        IntegrationSettings {
            step,
            steps,
            delay_steps,
            pre_history: PreHistory::Constant,
            delay_evaluation: DelayEvaluation::Frozen,
        }
    }

    #[test]
    fn zero_delay_returns_current_state() {
        let mut buf = HistoryBuffer::for_delay(&[0.0, 31.44, 0.0], 0.001, 0, PreHistory::Cruise);
        buf.push(&[1.0, 2.0, 3.0]);
        let s = buf.sample_vehicle(0, 0.001).unwrap();
        assert_eq!(s, TruckState::new(1.0, 2.0, 3.0));
    }

    #[test]
    fn pre_history_is_steady_cruise() {
        let buf = HistoryBuffer::for_delay(&[100.0, 31.44, 0.2], 0.001, 100, PreHistory::Cruise);
        // t = 0.05 with a 0.1 s delay
        let s = buf.sample_vehicle(0, 0.05 - 0.1).unwrap();
        assert_eq!(s.speed, 31.44);
        assert_eq!(s.acceleration, 0.0);
        assert_relative_eq!(s.position, 100.0 - 31.44 * 0.05, epsilon = 1e-12);
    }

    #[test]
    fn grid_aligned_lookup_is_exact() {
        let h = 0.001;
        let mut buf = HistoryBuffer::for_delay(&[0.0], h, 100, PreHistory::Constant);
        for k in 1..=200 {
            buf.push(&[k as f64]);
        }
        let mut out = [0.0];
        buf.sample_delayed(0.2 - 0.1, &mut out).unwrap();
        assert_eq!(out[0], 100.0);
        assert!(matches!(
            buf.sample_step(50, &mut out),
            Err(Error::HistoryDepth { requested: 50, .. })
        ));
        assert!(matches!(buf.sample_delayed(0.1005, &mut out), Err(Error::OffGrid(_))));
    }

    #[test]
    fn exponential_decay() {
        let (x, status) = integrate(&Decay, &[1.0], &settings(1e-3, 1000, 0), |_, _, _, _| {
            ControlFlow::Continue(())
        });
        assert!(status.is_completed());
        assert!((x[0] - (-1.0f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn fixed_point() {
        let x0 = [1.0, -2.0, 3.5];
        let (x, _) = integrate(&Zero, &x0, &settings(0.01, 100, 3), |_, _, _, _| ControlFlow::Continue(()));
        assert_eq!(x, x0);
    }

    #[test]
    fn fourth_order_convergence() {
        let exact = (-1.0f64).exp();
        let err = |h: f64| {
            let n = (1.0 / h).round() as usize;
            let (x, _) = integrate(&Decay, &[1.0], &settings(h, n, 0), |_, _, _, _| ControlFlow::Continue(()));
            (x[0] - exact).abs()
        };
        let hs = [0.1, 0.05, 0.025, 0.0125];
        for w in hs.windows(2) {
            let ratio = err(w[0]) / err(w[1]);
            assert!((14.0..18.0).contains(&ratio), "ratio {ratio} at h = {}", w[0]);
        }
    }

    #[test]
    fn observer_can_stop_and_project() {
        let (x, status) = integrate(&Decay, &[1.0], &settings(0.01, 100, 0), |k, _, s, _| {
            s[0] = s[0].max(0.5);
            if k == 10 {
                ControlFlow::Break(Termination::Collision)
            } else {
                ControlFlow::Continue(())
            }
        });
        assert_eq!(status, Termination::Collision);
        assert!(x[0] >= 0.5);
    }

    struct Blowup;
    impl DelaySystem for Blowup {
        fn dim(&self) -> usize {
            1
        }
        fn derivatives(&self, _t: f64, s: &[f64], _d: &[f64], out: &mut [f64]) {
            out[0] = s[0] * s[0] * 1e10;
        }
    }

    #[test]
    fn non_finite_state_diverges() {
        let (_, status) = integrate(&Blowup, &[1e100], &settings(1.0, 10, 0), |_, _, _, _| ControlFlow::Continue(()));
        assert_eq!(status, Termination::Diverged);
    }
}
