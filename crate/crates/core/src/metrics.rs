//! Evaluation quantities: per-step squared time-gap and speed errors,
//! tuning fitness components, and the minimum-achievable time-gap search.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrator::Termination;
use crate::model::{ModelKind, PlatoonScenario, PowertrainParams, REFERENCE_SPEED};
use crate::profile::{LeaderProfileSource, LeaderSchedule, PerturbationSpec, SpeedPulse};
use crate::simulator::{run_platoon_with, RunOptions, SimulationTrace};

/// Speeds below this floor are raised to it when measuring time gaps.
pub const TIME_GAP_SPEED_FLOOR: f64 = 0.1;

/// Transient excluded from max-SSTE scoring (s).
pub const DEFAULT_WARMUP: f64 = 50.0;

/// Max SSTE below which a time gap counts as maintained (s²).
pub const SSTE_THRESHOLD: f64 = 1e-2;

/// Measured time gap: bumper gap over the follower's floored speed.
#[inline]
pub fn time_gap(gap: f64, speed: f64) -> f64 {
    gap / speed.max(TIME_GAP_SPEED_FLOOR)
}

/// Sum of squared time-gap errors over the followers.
pub fn sste(time_gaps: &[f64], desired: f64) -> f64 {
    time_gaps.iter().map(|tg| (tg - desired).powi(2)).sum()
}

/// Sum of squared speed differences between consecutive trucks, starting
/// with the leader and the first follower.
pub fn ssse(leader_speed: f64, follower_speeds: &[f64]) -> f64 {
    let mut prev = leader_speed;
    let mut acc = 0.0;
    for &v in follower_speeds {
        acc += (prev - v).powi(2);
        prev = v;
    }
    acc
}

/// Speed-tracking fitness at one step: √(SSSE/N).
pub fn speed_fitness(ssse: f64, followers: usize) -> f64 {
    (ssse / followers as f64).sqrt()
}

/// How the time-gap fitness aggregates per-follower errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GapFitnessForm {
    /// Σ √(e_j²/N), i.e. Σ|e_j| / √N.
    #[default]
    Literal,
    /// √(Σ e_j² / N).
    Rmse,
}

/// Time-gap fitness at one step.
pub fn gap_fitness(time_gaps: &[f64], desired: f64, form: GapFitnessForm) -> f64 {
    let n = time_gaps.len() as f64;
    match form {
        GapFitnessForm::Literal => time_gaps
            .iter()
            .map(|tg| ((tg - desired).powi(2) / n).sqrt())
            .sum(),
        GapFitnessForm::Rmse => (sste(time_gaps, desired) / n).sqrt(),
    }
}

/// Running statistics over a simulation, fed once per integration step.
#[derive(Debug, Clone)]
pub struct MetricsAccumulator {
    desired: f64,
    warmup: f64,
    steps: usize,
    sum_y1: f64,
    sum_y2: f64,
    sum_y2_rmse: f64,
    max_sste: f64,
    max_sste_all: f64,
    max_ssse: f64,
    max_ssse_all: f64,
}

impl MetricsAccumulator {
    pub fn new(desired_time_gap: f64, warmup: f64) -> Self {
        Self {
            desired: desired_time_gap,
            warmup,
            steps: 0,
            sum_y1: 0.0,
            sum_y2: 0.0,
            sum_y2_rmse: 0.0,
            max_sste: 0.0,
            max_sste_all: 0.0,
            max_ssse: 0.0,
            max_ssse_all: 0.0,
        }
    }

    /// Records one step and returns its (SSTE, SSSE).
    pub fn observe(&mut self, t: f64, leader_speed: f64, follower_speeds: &[f64], time_gaps: &[f64]) -> (f64, f64) {
        let e_t = sste(time_gaps, self.desired);
        let e_v = ssse(leader_speed, follower_speeds);
        self.steps += 1;
        self.sum_y1 += speed_fitness(e_v, follower_speeds.len());
        self.sum_y2 += gap_fitness(time_gaps, self.desired, GapFitnessForm::Literal);
        self.sum_y2_rmse += (e_t / time_gaps.len() as f64).sqrt();
        self.max_sste_all = self.max_sste_all.max(e_t);
        self.max_ssse_all = self.max_ssse_all.max(e_v);
        if t >= self.warmup {
            self.max_sste = self.max_sste.max(e_t);
            self.max_ssse = self.max_ssse.max(e_v);
        }
        (e_t, e_v)
    }

    /// Max SSTE after the warm-up so far.
    pub fn max_sste(&self) -> f64 {
        self.max_sste
    }

    pub fn finish(&self) -> MetricsSummary {
        let n = self.steps.max(1) as f64;
        MetricsSummary {
            steps: self.steps,
            warmup: self.warmup,
            max_sste: self.max_sste,
            max_ssse: self.max_ssse,
            max_sste_all: self.max_sste_all,
            max_ssse_all: self.max_ssse_all,
            y1: self.sum_y1 / n,
            y2: self.sum_y2 / n,
            y2_rmse: self.sum_y2_rmse / n,
        }
    }
}

/// Aggregates of a run. Maxima without the `_all` suffix exclude the warm-up.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub steps: usize,
    pub warmup: f64,
    pub max_sste: f64,
    pub max_ssse: f64,
    pub max_sste_all: f64,
    pub max_ssse_all: f64,
    /// Time mean of the speed-tracking fitness (m/s).
    pub y1: f64,
    /// Time mean of the literal time-gap fitness (s).
    pub y2: f64,
    /// Time mean of the conventional time-gap RMSE (s).
    pub y2_rmse: f64,
}

impl MetricsSummary {
    pub fn y2_with(&self, form: GapFitnessForm) -> f64 {
        match form {
            GapFitnessForm::Literal => self.y2,
            GapFitnessForm::Rmse => self.y2_rmse,
        }
    }
}

/// Outcome of one grid point of a time-gap search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGapTrial {
    pub time_gap: f64,
    pub status: Termination,
    /// Post-warm-up max SSTE. For runs stopped early this is a lower bound.
    pub max_sste: f64,
}

impl TimeGapTrial {
    fn maintained(&self) -> bool {
        self.status.is_completed() && self.max_sste < SSTE_THRESHOLD
    }
}

/// Settings of [`min_achievable_tg`].
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGapSearch {
    pub grid: Vec<f64>,
    pub warmup: f64,
    /// Runs stop once max SSTE passes this. Must exceed `SSTE_THRESHOLD`
    /// by more than 10% so that stopping never changes the answer.
    pub abort_sste: Option<f64>,
    /// Worker threads; `None` reads `PLATOON_LAB_THREADS`.
    pub threads: Option<usize>,
}

impl Default for TimeGapSearch {
    fn default() -> Self {
        Self {
            grid: default_time_gap_grid(),
            warmup: DEFAULT_WARMUP,
            abort_sste: Some(10.0 * SSTE_THRESHOLD),
            threads: None,
        }
    }
}

/// 0.5 s to 3.0 s in 0.1 s steps.
pub fn default_time_gap_grid() -> Vec<f64> {
    (5..=30).map(|k| k as f64 / 10.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGapSearchResult {
    /// `None` when no grid point qualifies.
    pub min_time_gap: Option<f64>,
    /// Every evaluated grid point in ascending order.
    pub trials: Vec<TimeGapTrial>,
}

impl TimeGapSearchResult {
    pub fn max_sste_at_min(&self) -> Option<f64> {
        let tg = self.min_time_gap?;
        self.trials.iter().find(|t| t.time_gap == tg).map(|t| t.max_sste)
    }
}

/// Number of worker threads: explicit value, else `PLATOON_LAB_THREADS`,
/// else rayon's default.
pub fn worker_threads(explicit: Option<usize>) -> usize {
    explicit
        .or_else(|| std::env::var("PLATOON_LAB_THREADS").ok()?.parse().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(rayon::current_num_threads)
}

/// Runs `f` over `items` on a pool of `threads` workers, keeping input order.
pub fn par_map_ordered<T, R, F>(items: &[T], threads: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    if threads <= 1 || items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(pool) => pool.install(|| items.par_iter().map(&f).collect()),
        Err(_) => items.iter().map(f).collect(),
    }
}

/// Smallest grid time gap whose run completes with post-warm-up max SSTE
/// under the threshold and whose max SSTE is within 10% of the next two
/// grid points' values.
///
/// Grid points are evaluated in ascending batches so the search stops
/// shortly after the answer is known.
pub fn min_achievable_tg(template: &PlatoonScenario, search: &TimeGapSearch) -> Result<TimeGapSearchResult> {
    let mut grid = search.grid.clone();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let threads = worker_threads(search.threads);
    let options = RunOptions {
        warmup: search.warmup,
        abort_max_sste: search.abort_sste,
    };
    let mut trials: Vec<TimeGapTrial> = Vec::with_capacity(grid.len());
    let mut next = 0;
    while next < grid.len() {
        let batch_len = threads.max(3).min(grid.len() - next);
        let batch = &grid[next..next + batch_len];
        let results = par_map_ordered(batch, threads, |&tg| {
            let mut s = template.clone();
            s.policy.desired_time_gap = tg;
            s.record_stride = usize::MAX;
            let out = run_platoon_with(&s, &options)?;
            Ok::<_, Error>(TimeGapTrial {
                time_gap: tg,
                status: out.status,
                max_sste: out.metrics.max_sste,
            })
        });
        for r in results {
            trials.push(r?);
        }
        next += batch_len;
        if let Some(tg) = select_min_time_gap(&trials, trials.len() == grid.len()) {
            return Ok(TimeGapSearchResult {
                min_time_gap: Some(tg),
                trials,
            });
        }
    }
    Ok(TimeGapSearchResult {
        min_time_gap: None,
        trials,
    })
}

/// Applies the selection rule to ascending trials. With `complete` false
/// a candidate needs both successors evaluated; at the end of the grid the
/// available successors suffice.
pub fn select_min_time_gap(trials: &[TimeGapTrial], complete: bool) -> Option<f64> {
    for (i, t) in trials.iter().enumerate() {
        if !t.maintained() {
            continue;
        }
        let followers = &trials[i + 1..trials.len().min(i + 3)];
        if followers.len() < 2 && !complete {
            return None;
        }
        let steady = followers
            .iter()
            .all(|f| f.status.is_completed() && (f.max_sste - t.max_sste).abs() <= 0.1 * t.max_sste.max(f.max_sste));
        if steady {
            return Some(t.time_gap);
        }
    }
    None
}

/// One row of the sweep table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lag: f64,
    pub delay: f64,
    pub model: ModelKind,
    pub min_time_gap: Option<f64>,
    pub max_sste: Option<f64>,
    /// Reference value to compare against, when one is known.
    pub expected: Option<f64>,
    pub trials: Vec<TimeGapTrial>,
}

impl SweepRow {
    /// True when a reference value exists and the result is missing or
    /// more than `tolerance` away from it.
    pub fn off_target(&self, tolerance: f64) -> bool {
        match (self.expected, self.min_time_gap) {
            (Some(e), Some(m)) => (m - e).abs() > tolerance + 1e-9,
            (Some(_), None) => true,
            _ => false,
        }
    }
}

/// Runs the time-gap search for each (lag, delay) cell of `cells`.
pub fn sweep(
    template: &PlatoonScenario,
    model: ModelKind,
    cells: &[(f64, f64)],
    search: &TimeGapSearch,
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(cells.len());
    for &(lag, delay) in cells {
        let mut s = template.clone();
        s.powertrain = PowertrainParams::new(lag, delay);
        if s.gains.model_kind != model {
            s.gains = crate::model::ControlGains::reference(model);
        }
        let s = s.validate()?;
        let r = min_achievable_tg(&s, search)?;
        rows.push(SweepRow {
            lag,
            delay,
            model,
            min_time_gap: r.min_time_gap,
            max_sste: r.max_sste_at_min(),
            expected: match model {
                ModelKind::Asymmetric => reference_min_time_gap(lag, delay),
                ModelKind::Symmetric => None,
            },
            trials: r.trials,
        });
    }
    Ok(rows)
}

/// Minimum time gaps reported for the asymmetric law, keyed by (lag, delay).
pub const REFERENCE_MIN_TIME_GAPS: [((f64, f64), f64); 7] = [
    ((0.1, 0.1), 0.8),
    ((0.1, 0.2), 1.0),
    ((0.2, 0.1), 1.0),
    ((0.2, 0.2), 1.5),
    ((0.2, 0.3), 1.9),
    ((0.3, 0.2), 2.1),
    ((0.3, 0.3), 2.5),
];

pub fn reference_min_time_gap(lag: f64, delay: f64) -> Option<f64> {
    REFERENCE_MIN_TIME_GAPS
        .iter()
        .find(|((l, d), _)| (l - lag).abs() < 1e-9 && (d - delay).abs() < 1e-9)
        .map(|(_, tg)| *tg)
}

/// Writes `T_e_s,delta_s,model,min_tg_s,max_sste_s2` plus the reference
/// value and an off-target flag. Unachievable cells read `not_achievable`.
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], tolerance: f64, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "T_e_s",
        "delta_s",
        "model",
        "min_tg_s",
        "max_sste_s2",
        "expected_tg_s",
        "off_target",
    ])?;
    for r in rows {
        let min = r.min_time_gap.map_or("not_achievable".to_string(), |v| format!("{v:.1}"));
        let sste = r.max_sste.map_or(String::new(), |v| format!("{v:e}"));
        let expected = r.expected.map_or(String::new(), |v| format!("{v:.1}"));
        w.write_record([
            format!("{}", r.lag),
            format!("{}", r.delay),
            r.model.as_str().to_string(),
            min,
            sste,
            expected,
            r.off_target(tolerance).to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<sweep csv>", e))?;
    Ok(())
}

/// Peak speed deviations after a leader pulse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationResponse {
    pub onset: f64,
    pub status: Termination,
    pub leader_peak: f64,
    /// Follower peaks in platoon order.
    pub follower_peaks: Vec<f64>,
    /// Each follower's peak is at most its predecessor's.
    pub non_increasing: bool,
}

/// Constant-speed leader at the reference speed with a single pulse.
pub fn perturbation_scenario(
    model: ModelKind,
    powertrain: PowertrainParams,
    desired_time_gap: f64,
    pulse: SpeedPulse,
    duration: f64,
) -> PlatoonScenario {
    let mut s = PlatoonScenario::reference(model, powertrain, desired_time_gap);
    s.leader_profile = LeaderProfileSource::Schedule(LeaderSchedule::constant(REFERENCE_SPEED, duration));
    s.duration = duration;
    s.perturbation = Some(PerturbationSpec { pulses: vec![pulse] });
    s
}

/// Runs `scenario` and measures each truck's peak |v − v(onset)| from the
/// first pulse onset to the end of the run.
pub fn perturbation_response(scenario: &PlatoonScenario) -> Result<PerturbationResponse> {
    let onset = first_pulse_onset(scenario)?;
    let trace = run_platoon_with(scenario, &RunOptions::default())?;
    Ok(perturbation_peaks(&trace, onset))
}

pub fn first_pulse_onset(scenario: &PlatoonScenario) -> Result<f64> {
    scenario
        .perturbation
        .as_ref()
        .and_then(|p| p.pulses.iter().map(|p| p.onset).reduce(f64::min))
        .ok_or_else(|| Error::Profile("perturbation run needs at least one pulse".into()))
}

pub fn perturbation_peaks(trace: &SimulationTrace, onset: f64) -> PerturbationResponse {
    let end = trace.end_time;
    let peaks: Vec<f64> = (0..trace.truck_count()).map(|i| trace.peak_speed_deviation(i, onset, end)).collect();
    let non_increasing = peaks.windows(2).skip(1).all(|w| w[1] <= w[0] + 1e-9);
    PerturbationResponse {
        onset,
        status: trace.status,
        leader_peak: peaks[0],
        non_increasing: non_increasing && trace.status.is_completed(),
        follower_peaks: peaks[1..].to_vec(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn sste_examples() {
        assert_eq!(sste(&[0.8; 5], 0.8), 0.0);
        assert_relative_eq!(sste(&[0.9, 0.8, 0.8, 0.8, 0.8], 0.8), 0.01, epsilon = 1e-15);
        assert_relative_eq!(sste(&[0.9; 5], 0.8), 0.05, epsilon = 1e-15);
    }

    #[test]
    fn ssse_examples() {
        assert_eq!(ssse(31.44, &[31.44; 5]), 0.0);
        assert_eq!(ssse(30.0, &[28.0, 30.0, 30.0, 30.0, 30.0]), 8.0);
        // cascade v_j = v_L − j·δ
        let d = 0.5;
        let v: Vec<f64> = (1..=5).map(|j| 30.0 - j as f64 * d).collect();
        assert_relative_eq!(ssse(30.0, &v), 5.0 * d * d, epsilon = 1e-12);
    }

    #[test]
    fn fitness_examples() {
        assert_eq!(speed_fitness(0.0, 5), 0.0);
        assert_relative_eq!(speed_fitness(8.0, 5), 1.6f64.sqrt(), epsilon = 1e-15);
        let gaps = [0.9, 0.8, 0.8, 0.8, 0.8];
        assert_relative_eq!(
            gap_fitness(&gaps, 0.8, GapFitnessForm::Literal),
            0.1 / 5f64.sqrt(),
            epsilon = 1e-14
        );
        let spread = [0.9, 0.7, 0.8, 0.8, 0.8];
        assert_relative_eq!(
            gap_fitness(&spread, 0.8, GapFitnessForm::Literal),
            0.2 / 5f64.sqrt(),
            epsilon = 1e-14
        );
        assert_relative_eq!(
            gap_fitness(&spread, 0.8, GapFitnessForm::Rmse),
            (0.02f64 / 5.0).sqrt(),
            epsilon = 1e-14
        );
    }

    #[test]
    fn accumulator_means_and_warmup() {
        let mut acc = MetricsAccumulator::new(0.8, 50.0);
        for k in 0..100 {
            let t = k as f64;
            let tg = if t < 50.0 { [1.8, 0.8] } else { [0.9, 0.8] };
            acc.observe(t, 30.0, &[28.0, 30.0], &tg);
        }
        let m = acc.finish();
        assert_eq!(m.steps, 100);
        assert_relative_eq!(m.max_sste, 0.01, epsilon = 1e-12);
        assert_relative_eq!(m.max_sste_all, 1.0, epsilon = 1e-12);
        assert_relative_eq!(m.y1, 2.0, epsilon = 1e-12);
        assert_relative_eq!(m.max_ssse, 8.0);
    }

    #[test]
    fn time_gap_floor() {
        assert_eq!(time_gap(10.0, 0.0), 100.0);
        assert_eq!(time_gap(25.152, 31.44), 0.8);
    }

    fn trial(tg: f64, sste: f64) -> TimeGapTrial {
        TimeGapTrial {
            time_gap: tg,
            status: Termination::Completed,
            max_sste: sste,
        }
    }

    #[test]
    fn selection_rule() {
        let trials = [
            trial(0.5, 1.0),
            trial(0.6, 5e-3),
            trial(0.7, 2e-3),
            trial(0.8, 1.9e-3),
            trial(0.9, 1.85e-3),
        ];
        // 0.6 is under threshold but still changing
        assert_eq!(select_min_time_gap(&trials, true), Some(0.7));
        // not enough successors yet
        assert_eq!(select_min_time_gap(&trials[..3], false), None);
        // at the grid end the remaining successors suffice
        assert_eq!(select_min_time_gap(&trials[3..], true), Some(0.8));
        let never = [trial(0.5, 1.0), trial(0.6, 0.5)];
        assert_eq!(select_min_time_gap(&never, true), None);
    }

    #[test]
    fn collided_successor_blocks_selection() {
        let mut t = [trial(1.0, 1e-3), trial(1.1, 1e-3), trial(1.2, 1e-3)];
        t[2].status = Termination::Collision;
        assert_eq!(select_min_time_gap(&t, true), None);
    }

    #[test]
    fn reference_table_lookup() {
        assert_eq!(reference_min_time_gap(0.3, 0.3), Some(2.5));
        assert_eq!(reference_min_time_gap(0.1, 0.3), None);
    }

    #[test]
    fn grid_is_inclusive() {
        let g = default_time_gap_grid();
        assert_eq!(g.len(), 26);
        assert_eq!(g[0], 0.5);
        assert_eq!(g[25], 3.0);
        assert_eq!(g[3], 0.8);
    }
}
