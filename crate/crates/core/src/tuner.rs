//! Genetic-algorithm search for control gains on the design profile.
//!
//! The genome is `(k_d, k_v, k_c)`. The asymmetric model ties
//! `k_d1 = k_d2 = k_d`; the symmetric model fixes `k_d2 = 0`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Violation};
use crate::integrator::Termination;
use crate::metrics::{par_map_ordered, worker_threads, GapFitnessForm};
use crate::model::{ControlGains, LastTruckPolicy, ModelKind, PlatoonScenario, PowertrainParams, TimeGapPolicy, TruckParams};
use crate::profile::{gain_design_knots, LeaderProfileSource};
use crate::simulator::{run_platoon_with, RunOptions};
use crate::stability::{local_conditions, string_stability_check, FrequencyGrid, GapErrorParams};

/// Fitness floor given to infeasible candidates.
pub const PENALTY: f64 = 1e6;

/// Time gap the gains are designed for (s).
pub const DESIGN_TIME_GAP: f64 = 0.8;

pub const GENOME_LEN: usize = 3;

/// What makes a candidate admissible.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeasibilityRule {
    /// The design run completes and, for the asymmetric model, the gap error
    /// gain stays below one over the frequency grid.
    #[default]
    Simulated,
    /// The two printed local-stability conditions, taken literally, on top of
    /// a completed run. No positive gain set satisfies them.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainBounds {
    pub kd: [f64; 2],
    pub kv: [f64; 2],
    pub kc: [f64; 2],
}

impl Default for GainBounds {
    fn default() -> Self {
        Self { kd: [1e-4, 5.0], kv: [1e-4, 5.0], kc: [1e-4, 5.0] }
    }
}

impl GainBounds {
    pub fn as_array(&self) -> [[f64; 2]; GENOME_LEN] {
        [self.kd, self.kv, self.kc]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GAConfig {
    pub population_size: usize,
    pub generations: usize,
    pub tournament_size: usize,
    pub crossover_rate: f64,
    /// Per-gene mutation probability.
    pub mutation_rate: f64,
    /// Mutation standard deviation as a fraction of the bound width.
    pub mutation_scale: f64,
    pub elitism_count: usize,
    pub gain_bounds: GainBounds,
    /// Weights on (y1, y2).
    pub weights: [f64; 2],
    pub seed: u64,
    pub gap_fitness: GapFitnessForm,
    pub feasibility: FeasibilityRule,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
}

impl Default for GAConfig {
    fn default() -> Self {
        Self {
            population_size: 50,
            generations: 100,
            tournament_size: 3,
            crossover_rate: 0.9,
            mutation_rate: 0.2,
            mutation_scale: 0.1,
            elitism_count: 2,
            gain_bounds: GainBounds::default(),
            weights: [0.5, 0.5],
            seed: 2024,
            gap_fitness: GapFitnessForm::Literal,
            feasibility: FeasibilityRule::Simulated,
            threads: None,
        }
    }
}

impl GAConfig {
    pub fn violations(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        if self.population_size < 2 {
            v.push(Violation::new("population_size", "population_size >= 2"));
        }
        if self.tournament_size == 0 {
            v.push(Violation::new("tournament_size", "tournament_size >= 1"));
        }
        if self.elitism_count > self.population_size {
            v.push(Violation::new("elitism_count", "elitism_count <= population_size"));
        }
        for (name, r) in [("crossover_rate", self.crossover_rate), ("mutation_rate", self.mutation_rate)] {
            if !(0.0..=1.0).contains(&r) {
                v.push(Violation::new(name, format!("{name} in [0, 1] (got {r})")));
            }
        }
        if !(self.mutation_scale >= 0.0 && self.mutation_scale.is_finite()) {
            v.push(Violation::new("mutation_scale", "mutation_scale >= 0"));
        }
        for (name, [lo, hi]) in ["k_d", "k_v", "k_c"].into_iter().zip(self.gain_bounds.as_array()) {
            if !(lo >= 0.0 && lo < hi && hi.is_finite()) {
                v.push(Violation::new(
                    format!("gain_bounds.{name}"),
                    format!("0 <= lower < upper (got [{lo}, {hi}])"),
                ));
            }
        }
        let [w1, w2] = self.weights;
        if !(w1 >= 0.0 && w2 >= 0.0 && (w1 + w2 - 1.0).abs() < 1e-9) {
            v.push(Violation::new("weights", format!("weights >= 0 summing to 1 (got {w1}, {w2})")));
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() { Ok(()) } else { Err(Error::Invalid(v)) }
    }
}

pub fn genome_to_gains(genome: &[f64; GENOME_LEN], kind: ModelKind) -> ControlGains {
    let [kd, kv, kc] = *genome;
    match kind {
        ModelKind::Asymmetric => ControlGains::asymmetric(kd, kv, kc),
        ModelKind::Symmetric => ControlGains::symmetric(kd, kv, kc),
    }
}

/// Score of one genome. Lower is better.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub fitness: f64,
    pub feasible: bool,
    pub y1: f64,
    pub y2: f64,
    pub status: Termination,
}

impl Evaluation {
    /// A feasible score with no simulation behind it.
    pub fn plain(fitness: f64) -> Self {
        Self { fitness, feasible: true, y1: f64::NAN, y2: f64::NAN, status: Termination::Completed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub genome: [f64; GENOME_LEN],
    pub gains: ControlGains,
    pub evaluation: Evaluation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub generation: usize,
    pub best_fitness: f64,
    pub mean_fitness: f64,
    pub feasible_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaOutcome {
    /// Best feasible candidate seen, or the best overall when none was feasible.
    pub best: Candidate,
    pub history: Vec<GenerationStats>,
    pub evaluations: usize,
}

/// Tuning scenario: five followers behind the design profile at the design
/// time gap, 200 s at 1 ms.
pub fn design_scenario(kind: ModelKind, powertrain: PowertrainParams) -> PlatoonScenario {
    let knots = gain_design_knots().into_iter().map(|(t, v)| [t, v]).collect();
    PlatoonScenario {
        follower_count: 5,
        truck_params: TruckParams::default(),
        powertrain,
        gains: ControlGains::reference(kind),
        policy: TimeGapPolicy::reference(DESIGN_TIME_GAP),
        leader_profile: LeaderProfileSource::Inline(knots),
        initial_gap_offset: 5.0,
        duration: 200.0,
        step: 0.001,
        last_truck_policy: LastTruckPolicy::VirtualFollower,
        initial_speed: None,
        closed_loop: Default::default(),
        delay_evaluation: Default::default(),
        perturbation: None,
        record_stride: usize::MAX,
    }
}

/// Simulates `gains` on `scenario` and scores the run. Infeasible candidates
/// get `PENALTY` plus a distance to feasibility.
pub fn evaluate_candidate(gains: &ControlGains, scenario: &PlatoonScenario, config: &GAConfig) -> Result<Evaluation> {
    let mut s = scenario.clone();
    s.gains = *gains;
    s.record_stride = usize::MAX;
    let trace = run_platoon_with(&s, &RunOptions::default())?;
    let y1 = trace.metrics.y1;
    let y2 = trace.metrics.y2_with(config.gap_fitness);
    let [w1, w2] = config.weights;

    let mut distance = 0.0;
    if !trace.status.is_completed() {
        // Earlier failures are further away.
        distance += 1.0 + (1.0 - trace.end_time / s.duration).max(0.0);
    }
    match config.feasibility {
        FeasibilityRule::Simulated => {
            if gains.model_kind == ModelKind::Asymmetric {
                let p = GapErrorParams::from_gains(gains, &s.powertrain, s.policy.desired_time_gap);
                let r = string_stability_check(&p, &FrequencyGrid::default());
                distance += (r.sup_magnitude - 1.0).max(0.0);
                if !r.stable && r.sup_magnitude <= 1.0 {
                    distance += f64::EPSILON;
                }
            }
        }
        FeasibilityRule::Literal => {
            let r = local_conditions(gains, s.powertrain.lag, s.policy.desired_time_gap);
            if !r.literal_conditions_hold() {
                distance += r.max_real_part.max(0.0) + f64::EPSILON;
            }
        }
    }
    let feasible = distance == 0.0;
    let raw = w1 * y1 + w2 * y2;
    let fitness = if feasible && raw.is_finite() { raw } else { PENALTY + distance };
    Ok(Evaluation { fitness, feasible: feasible && raw.is_finite(), y1, y2, status: trace.status })
}

/// Gain search on the design scenario.
pub fn ga_optimize(config: &GAConfig, kind: ModelKind, powertrain: PowertrainParams) -> Result<GaOutcome> {
    config.validate()?;
    let scenario = design_scenario(kind, powertrain);
    scenario.clone().validate()?;
    ga_optimize_with(config, kind, |genome| {
        evaluate_candidate(&genome_to_gains(genome, kind), &scenario, config).unwrap_or(Evaluation {
            fitness: f64::INFINITY,
            feasible: false,
            y1: f64::NAN,
            y2: f64::NAN,
            status: Termination::Diverged,
        })
    })
}

/// The generational loop with an arbitrary fitness function.
pub fn ga_optimize_with<F>(config: &GAConfig, kind: ModelKind, fitness: F) -> Result<GaOutcome>
where
    F: Fn(&[f64; GENOME_LEN]) -> Evaluation + Sync,
{
    config.validate()?;
    let bounds = config.gain_bounds.as_array();
    let threads = worker_threads(config.threads);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let evaluate = |genomes: &[[f64; GENOME_LEN]]| -> Vec<Candidate> {
        let evals = par_map_ordered(genomes, threads, &fitness);
        genomes
            .iter()
            .zip(evals)
            .map(|(g, evaluation)| Candidate { genome: *g, gains: genome_to_gains(g, kind), evaluation })
            .collect()
    };

    let initial: Vec<[f64; GENOME_LEN]> = (0..config.population_size)
        .map(|_| std::array::from_fn(|i| rng.random_range(bounds[i][0]..=bounds[i][1])))
        .collect();
    let mut population = evaluate(&initial);
    let mut evaluations = population.len();
    let mut history = vec![stats(0, &population)];
    let mut best = pick_best(&population, None);

    let width: [f64; GENOME_LEN] = std::array::from_fn(|i| bounds[i][1] - bounds[i][0]);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");

    for generation in 1..=config.generations {
        let mut order: Vec<usize> = (0..population.len()).collect();
        order.sort_by(|&a, &b| {
            population[a].evaluation.fitness.total_cmp(&population[b].evaluation.fitness)
        });
        let elites: Vec<Candidate> = order.iter().take(config.elitism_count).map(|&i| population[i].clone()).collect();

        let mut offspring = Vec::with_capacity(config.population_size - elites.len());
        while offspring.len() < config.population_size - elites.len() {
            let a = &population[tournament(&population, config.tournament_size, &mut rng)].genome;
            let b = &population[tournament(&population, config.tournament_size, &mut rng)].genome;
            let mut child = *a;
            if rng.random::<f64>() < config.crossover_rate {
                for i in 0..GENOME_LEN {
                    let (lo, hi) = (a[i].min(b[i]), a[i].max(b[i]));
                    let pad = 0.1 * (hi - lo);
                    child[i] = rng.random_range(lo - pad..=hi + pad).clamp(bounds[i][0], bounds[i][1]);
                }
            }
            for i in 0..GENOME_LEN {
                if rng.random::<f64>() < config.mutation_rate {
                    let step: f64 = normal.sample(&mut rng) * config.mutation_scale * width[i];
                    child[i] = (child[i] + step).clamp(bounds[i][0], bounds[i][1]);
                }
            }
            offspring.push(child);
        }
        let children = evaluate(&offspring);
        evaluations += children.len();
        population = elites.into_iter().chain(children).collect();
        history.push(stats(generation, &population));
        best = pick_best(&population, Some(best));
    }

    Ok(GaOutcome { best, history, evaluations })
}

fn tournament<R: Rng>(population: &[Candidate], size: usize, rng: &mut R) -> usize {
    let mut winner = rng.random_range(0..population.len());
    for _ in 1..size {
        let c = rng.random_range(0..population.len());
        if population[c].evaluation.fitness < population[winner].evaluation.fitness {
            winner = c;
        }
    }
    winner
}

fn stats(generation: usize, population: &[Candidate]) -> GenerationStats {
    let fits = population.iter().map(|c| c.evaluation.fitness);
    GenerationStats {
        generation,
        best_fitness: fits.clone().fold(f64::INFINITY, f64::min),
        mean_fitness: fits.sum::<f64>() / population.len() as f64,
        feasible_count: population.iter().filter(|c| c.evaluation.feasible).count(),
    }
}

/// Feasible beats infeasible, then lower fitness wins. Ties keep the incumbent.
fn pick_best(population: &[Candidate], incumbent: Option<Candidate>) -> Candidate {
    let better = |a: &Candidate, b: &Candidate| {
        (a.evaluation.feasible && !b.evaluation.feasible)
            || (a.evaluation.feasible == b.evaluation.feasible && a.evaluation.fitness < b.evaluation.fitness)
    };
    let mut best = incumbent.unwrap_or_else(|| population[0].clone());
    for c in population {
        if better(c, &best) {
            best = c.clone();
        }
    }
    best
}

/// JSON report of a tuning run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningReport {
    pub config: GAConfig,
    pub model_kind: ModelKind,
    pub powertrain: PowertrainParams,
    pub desired_time_gap: f64,
    pub design_profile_knots: Vec<[f64; 2]>,
    pub history: Vec<GenerationStats>,
    pub evaluations: usize,
    pub best: Candidate,
    /// Same as `best.gains`; loadable as a scenario's gains.
    pub gains: ControlGains,
}

impl TuningReport {
    pub fn new(config: &GAConfig, kind: ModelKind, powertrain: PowertrainParams, outcome: GaOutcome) -> Self {
        Self {
            config: config.clone(),
            model_kind: kind,
            powertrain,
            desired_time_gap: DESIGN_TIME_GAP,
            design_profile_knots: gain_design_knots().into_iter().map(|(t, v)| [t, v]).collect(),
            history: outcome.history,
            evaluations: outcome.evaluations,
            gains: outcome.best.gains,
            best: outcome.best,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic(target: [f64; 3]) -> impl Fn(&[f64; 3]) -> Evaluation + Sync {
        move |g| Evaluation::plain(g.iter().zip(target).map(|(x, t)| (x - t).powi(2)).sum())
    }

    fn small(seed: u64) -> GAConfig {
        GAConfig { seed, threads: Some(1), ..GAConfig::default() }
    }

    #[test]
    fn zero_generations_returns_best_initial() {
        let cfg = GAConfig { generations: 0, ..small(1) };
        let out = ga_optimize_with(&cfg, ModelKind::Asymmetric, quadratic([1.0, 2.0, 3.0])).unwrap();
        assert_eq!(out.history.len(), 1);
        assert_eq!(out.evaluations, 50);
        assert_eq!(out.best.evaluation.fitness, out.history[0].best_fitness);
    }

    #[test]
    fn surrogate_converges_and_best_never_rises() {
        let target = [1.2, 0.7, 3.3];
        for seed in [1, 2, 3] {
            let cfg = GAConfig { generations: 50, ..small(seed) };
            let out = ga_optimize_with(&cfg, ModelKind::Asymmetric, quadratic(target)).unwrap();
            for w in out.history.windows(2) {
                assert!(w[1].best_fitness <= w[0].best_fitness);
            }
            let dist = out.best.genome.iter().zip(target).map(|(x, t)| (x - t).powi(2)).sum::<f64>().sqrt();
            assert!(dist < 1e-2, "seed {seed}: distance {dist}");
        }
    }

    #[test]
    fn reproducible_for_a_seed() {
        let cfg = GAConfig { generations: 5, ..small(9) };
        let a = ga_optimize_with(&cfg, ModelKind::Symmetric, quadratic([1.0, 1.0, 1.0])).unwrap();
        let b = ga_optimize_with(&cfg, ModelKind::Symmetric, quadratic([1.0, 1.0, 1.0])).unwrap();
        // Evaluation carries NaN metrics, so compare the parts that matter.
        assert_eq!(a.history, b.history);
        assert_eq!(a.best.genome, b.best.genome);
        assert_eq!(a.best.gains.kd2, 0.0);
    }

    #[test]
    fn genomes_stay_in_bounds_and_tied() {
        let cfg = GAConfig { generations: 10, mutation_rate: 1.0, mutation_scale: 2.0, ..small(4) };
        let out = ga_optimize_with(&cfg, ModelKind::Asymmetric, quadratic([10.0, -1.0, 0.0])).unwrap();
        let g = out.best.gains;
        assert_eq!(g.kd1, g.kd2);
        for (x, [lo, hi]) in out.best.genome.iter().zip(cfg.gain_bounds.as_array()) {
            assert!(*x >= lo && *x <= hi);
        }
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = GAConfig { population_size: 1, elitism_count: 0, weights: [0.6, 0.6], ..GAConfig::default() };
        let err = cfg.validate().unwrap_err();
        assert_eq!(err.violations().len(), 2);
    }

    #[test]
    fn reference_gains_score_below_penalty() {
        let mut s = design_scenario(ModelKind::Asymmetric, PowertrainParams::new(0.1, 0.1));
        s.duration = 40.0;
        let e = evaluate_candidate(&ControlGains::reference_asymmetric(), &s, &GAConfig::default()).unwrap();
        assert!(e.feasible && e.fitness < PENALTY && e.fitness > 0.0, "{e:?}");
        let lit = GAConfig { feasibility: FeasibilityRule::Literal, ..GAConfig::default() };
        let e = evaluate_candidate(&ControlGains::reference_asymmetric(), &s, &lit).unwrap();
        assert!(!e.feasible && e.fitness >= PENALTY);
    }
}
