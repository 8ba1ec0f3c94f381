//! The era loop: at each era onset the realized prefixes are extracted from
//! the previously chosen plan, the population is repaired, the inner EMOA
//! runs for its evaluation budget and a decision maker picks the plan that
//! vehicles follow until the next onset.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evolution::{initialize, mutate, select, EraContext, EvoParams, ParamError, Population};
use crate::genotype::{decode, extract_prefix, Individual, Objectives, RealizedPrefix, TourPlan};
use crate::instance::Instance;
use crate::localsearch::{local_search, LsParams};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid run configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Params(#[from] ParamError),
    #[error("decision index {index} outside 1..={mu}")]
    InvalidChoice { index: usize, mu: usize },
    #[error("run aborted by the decision maker")]
    Aborted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DmPolicy {
    AutoD { d: f64 },
    Interactive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default = "default_eras")]
    pub n_eras: usize,
    /// Era length; `None` derives it from the latest request time.
    #[serde(default)]
    pub delta: Option<f64>,
    pub n_vehicles: usize,
    pub dm_policy: DmPolicy,
    #[serde(default)]
    pub evo: EvoParams,
    #[serde(default)]
    pub ls: LsParams,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub honor_release: bool,
}

fn default_eras() -> usize {
    7
}

impl RunConfig {
    pub fn new(n_vehicles: usize, dm_policy: DmPolicy, evo: EvoParams, seed: u64) -> Self {
        Self {
            n_eras: default_eras(),
            delta: None,
            n_vehicles,
            dm_policy,
            evo,
            ls: LsParams::default(),
            seed,
            honor_release: false,
        }
    }

    pub fn validate(&self) -> Result<(), RunError> {
        if self.n_eras < 1 {
            return Err(RunError::Config("n_eras must be at least 1".into()));
        }
        if self.n_vehicles < 1 {
            return Err(RunError::Config("n_vehicles must be at least 1".into()));
        }
        if let Some(delta) = self.delta {
            if !(delta >= 0.0 && delta.is_finite()) {
                return Err(RunError::Config(format!("invalid era length {delta}")));
            }
        }
        if let DmPolicy::AutoD { d } = self.dm_policy {
            if !(0.0..=1.0).contains(&d) {
                return Err(RunError::Config(format!("d must lie in [0, 1], got {d}")));
            }
        }
        self.evo.validate()?;
        Ok(())
    }

    pub fn era_length(&self, inst: &Instance) -> Result<f64, RunError> {
        match self.delta {
            Some(delta) => Ok(delta),
            None => era_length(inst, self.n_eras),
        }
    }
}

/// `ceil(max request time / n_eras)`.
pub fn era_length(inst: &Instance, n_eras: usize) -> Result<f64, RunError> {
    let max_r = inst.max_request_time().ok_or_else(|| {
        RunError::Config("instance has no dynamic customers; set the era length explicitly".into())
    })?;
    Ok((max_r / n_eras as f64).ceil())
}

/// 1-based position picked by the d-strategy out of `mu` sorted members.
pub fn d_strategy_index(d: f64, mu: usize) -> usize {
    // guard against 0.7 * 100 = 70.00000000000001
    let k = (d * mu as f64 - 1e-9).ceil();
    (k.max(1.0) as usize).min(mu)
}

/// Indices of `pop` sorted by ascending f1, then f2, then position.
pub fn sorted_order(pop: &[Individual]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..pop.len()).collect();
    order.sort_by(|&a, &b| {
        let (x, y) = (pop[a].fitness(), pop[b].fitness());
        x.f1.total_cmp(&y.f1).then(x.f2.cmp(&y.f2)).then(a.cmp(&b))
    });
    order
}

/// What a decision maker sees at the end of an era.
#[derive(Debug, Clone, Copy)]
pub struct EraView<'a> {
    pub era: usize,
    pub n_eras: usize,
    pub t: f64,
    pub delta: f64,
    /// Final population in the decision maker's sort order.
    pub population: &'a [Individual],
    pub context: &'a EraContext,
    pub upper_bound_f2: usize,
    pub instance: &'a Instance,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DecisionError {
    #[error("decision aborted")]
    Aborted,
}

pub trait DecisionMaker {
    /// 1-based index into `view.population`.
    fn choose(&mut self, view: &EraView<'_>) -> Result<usize, DecisionError>;

    /// Called with every completed era record.
    fn observe(&mut self, _record: &EraRecord) {}
}

#[derive(Debug, Clone, Copy)]
pub struct AutoDecision {
    pub d: f64,
}

impl DecisionMaker for AutoDecision {
    fn choose(&mut self, view: &EraView<'_>) -> Result<usize, DecisionError> {
        Ok(d_strategy_index(self.d, view.population.len()))
    }
}

/// Replays a fixed list of 1-based choices, one per era.
#[derive(Debug, Clone, Default)]
pub struct ScriptedDecisions {
    pub choices: Vec<usize>,
    next: usize,
}

impl ScriptedDecisions {
    pub fn new(choices: Vec<usize>) -> Self {
        Self { choices, next: 0 }
    }
}

impl DecisionMaker for ScriptedDecisions {
    fn choose(&mut self, _view: &EraView<'_>) -> Result<usize, DecisionError> {
        let choice = self.choices.get(self.next).copied().ok_or(DecisionError::Aborted)?;
        self.next += 1;
        Ok(choice)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EraRecord {
    pub era: usize,
    pub t: f64,
    pub delta: f64,
    /// Final population, sorted as presented to the decision maker.
    pub population: Vec<Individual>,
    /// 1-based.
    pub chosen_index: usize,
    pub chosen_plan: TourPlan,
    pub chosen_objectives: Objectives,
    pub upper_bound_f2: usize,
    /// Dynamic customers that had not requested yet; adding this to an
    /// in-era f2 counts every dynamic customer left unserved.
    pub unrevealed_dynamic: usize,
    pub prefix: RealizedPrefix,
    pub evaluations: usize,
    pub rng_state_digest: String,
}

impl EraRecord {
    pub fn objectives(&self) -> Vec<Objectives> {
        self.population.iter().map(Individual::fitness).collect()
    }

    /// Non-dominated, deduplicated population objectives with f2 counted
    /// over all dynamic customers.
    pub fn front_total(&self) -> Vec<(f64, f64)> {
        let pts: Vec<(f64, f64)> = self
            .objectives()
            .iter()
            .map(|o| (o.f1, (o.f2 + self.unrevealed_dynamic) as f64))
            .collect();
        crate::metrics::non_dominated(&pts)
    }

    pub fn chosen_total(&self) -> (f64, f64) {
        (
            self.chosen_objectives.f1,
            (self.chosen_objectives.f2 + self.unrevealed_dynamic) as f64,
        )
    }

    pub fn fixed_count(&self) -> usize {
        self.prefix.fixed_count()
    }

    pub fn to_log_line(&self, run_id: &str) -> EraLogLine {
        let objectives = self.objectives();
        let points: Vec<(f64, f64)> = objectives.iter().map(Objectives::as_point).collect();
        let front = objectives
            .iter()
            .map(|o| FrontEntry {
                f1: o.f1,
                f2: o.f2,
                dominated: points.iter().any(|&p| crate::evolution::dominates(p, o.as_point())),
            })
            .collect();
        EraLogLine {
            run_id: run_id.to_string(),
            era: self.era,
            t: self.t,
            front,
            chosen_index: self.chosen_index,
            chosen_plan: self.chosen_plan.to_ids(),
            chosen_f1: self.chosen_objectives.f1,
            chosen_f2: self.chosen_objectives.f2,
            upper_bound_f2: self.upper_bound_f2,
            unrevealed_dynamic: self.unrevealed_dynamic,
            realized: TourPlan {
                tours: self.prefix.prefixes.clone(),
            }
            .to_ids(),
            rng_state_digest: self.rng_state_digest.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontEntry {
    pub f1: f64,
    pub f2: usize,
    pub dominated: bool,
}

/// One line of the JSON-lines run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EraLogLine {
    pub run_id: String,
    pub era: usize,
    pub t: f64,
    pub front: Vec<FrontEntry>,
    pub chosen_index: usize,
    pub chosen_plan: Vec<Vec<usize>>,
    pub chosen_f1: f64,
    pub chosen_f2: usize,
    pub upper_bound_f2: usize,
    pub unrevealed_dynamic: usize,
    pub realized: Vec<Vec<usize>>,
    pub rng_state_digest: String,
}

impl EraLogLine {
    pub fn front_total(&self) -> Vec<(f64, f64)> {
        let pts: Vec<(f64, f64)> = self
            .front
            .iter()
            .map(|e| (e.f1, (e.f2 + self.unrevealed_dynamic) as f64))
            .collect();
        crate::metrics::non_dominated(&pts)
    }

    pub fn chosen_total(&self) -> (f64, f64) {
        (self.chosen_f1, (self.chosen_f2 + self.unrevealed_dynamic) as f64)
    }
}

/// Non-dominated result of a static run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontApproximation {
    pub points: Vec<Objectives>,
    pub members: Vec<Individual>,
    pub evaluations: usize,
}

impl FrontApproximation {
    pub fn from_population(pop: &[Individual], evaluations: usize) -> Self {
        let order = sorted_order(pop);
        let mut points: Vec<Objectives> = Vec::new();
        let mut members = Vec::new();
        for i in order {
            let o = pop[i].fitness();
            let dominated = pop.iter().any(|y| y.fitness().dominates(&o));
            if !dominated && !points.contains(&o) {
                points.push(o);
                members.push(pop[i].clone());
            }
        }
        Self {
            points,
            members,
            evaluations,
        }
    }

    pub fn as_points(&self) -> Vec<(f64, f64)> {
        self.points.iter().map(Objectives::as_point).collect()
    }
}

fn rng_digest(rng: &ChaCha8Rng) -> String {
    format!("{:016x}-{:032x}", rng.get_stream(), rng.get_word_pos())
}

/// One era's inner EMOA: mutation, scheduled local search, NSGA-II
/// survival. Returns the final population and the evaluations spent.
pub fn evolve(
    mut population: Population,
    ctx: &EraContext,
    inst: &Instance,
    evo: &EvoParams,
    ls: &LsParams,
    rng: &mut ChaCha8Rng,
) -> (Population, usize) {
    for x in population.iter_mut() {
        ctx.evaluate(x, inst);
    }
    let mut evaluations = population.len();
    let generations = evo.generations();
    let ls_at = evo.ls_schedule.generations(generations);
    for g in 0..generations {
        let seeds: Vec<u64> = (0..population.len()).map(|_| rng.random()).collect();
        let mut offspring: Population = population
            .iter()
            .zip(seeds)
            .map(|(x, seed)| {
                let mut sub = ChaCha8Rng::seed_from_u64(seed);
                let mut y = mutate(x, ctx, evo.p_swap, evo.n_swap, &mut sub);
                ctx.evaluate(&mut y, inst);
                y
            })
            .collect();
        evaluations += offspring.len();
        if ls_at.contains(&g) {
            offspring = offspring
                .par_iter()
                .map(|y| local_search(y, ctx, inst, ls))
                .collect();
            evaluations += offspring.len();
        }
        population.extend(offspring);
        population = select(population, evo.mu);
    }
    (population, evaluations)
}

pub fn run_demoa(
    inst: &Instance,
    cfg: &RunConfig,
    dm: &mut dyn DecisionMaker,
) -> Result<Vec<EraRecord>, RunError> {
    cfg.validate()?;
    let delta = cfg.era_length(inst)?;
    let n_v = cfg.n_vehicles;
    let mu = cfg.evo.mu;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut plan = TourPlan::empty(n_v);
    let mut population: Population = Vec::new();
    let mut records = Vec::with_capacity(cfg.n_eras);

    for era in 1..=cfg.n_eras {
        let t = (era - 1) as f64 * delta;
        let prefix = extract_prefix(&plan, inst, t, cfg.honor_release);
        let ctx = EraContext::new(inst, prefix, t, delta, cfg.honor_release);
        population = initialize(mu, &ctx, &population, inst, &mut rng);
        let (evolved, evaluations) = evolve(population, &ctx, inst, &cfg.evo, &cfg.ls, &mut rng);
        let order = sorted_order(&evolved);
        let mut slots: Vec<Option<Individual>> = evolved.into_iter().map(Some).collect();
        let sorted: Population = order
            .into_iter()
            .map(|i| slots[i].take().expect("permutation"))
            .collect();
        let upper_bound_f2 = ctx.upper_bound_f2(inst);

        let view = EraView {
            era,
            n_eras: cfg.n_eras,
            t,
            delta,
            population: &sorted,
            context: &ctx,
            upper_bound_f2,
            instance: inst,
        };
        let k = dm.choose(&view).map_err(|_| RunError::Aborted)?;
        if k < 1 || k > sorted.len() {
            return Err(RunError::InvalidChoice {
                index: k,
                mu: sorted.len(),
            });
        }
        let chosen = &sorted[k - 1];
        plan = decode(chosen, n_v);
        let record = EraRecord {
            era,
            t,
            delta,
            chosen_index: k,
            chosen_plan: plan.clone(),
            chosen_objectives: chosen.fitness(),
            upper_bound_f2,
            unrevealed_dynamic: ctx.unrevealed_dynamic(inst),
            prefix: ctx.prefix.clone(),
            evaluations,
            rng_state_digest: rng_digest(&rng),
            population: sorted.clone(),
        };
        dm.observe(&record);
        records.push(record);
        population = sorted;
    }
    Ok(records)
}

/// Single static era with every request known up front and release times
/// honored in the tour lengths.
pub fn run_clairvoyant(
    inst: &Instance,
    cfg: &RunConfig,
    budget: usize,
) -> Result<FrontApproximation, RunError> {
    let evo = EvoParams {
        evals_per_era: budget,
        ..cfg.evo.clone()
    };
    evo.validate()?;
    if cfg.n_vehicles < 1 {
        return Err(RunError::Config("n_vehicles must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let ctx = EraContext::clairvoyant(inst, cfg.n_vehicles);
    let population = initialize(evo.mu, &ctx, &[], inst, &mut rng);
    let (population, evaluations) = evolve(population, &ctx, inst, &evo, &cfg.ls, &mut rng);
    Ok(FrontApproximation::from_population(&population, evaluations))
}

/// Checks the per-run era invariants: the f2 upper bound never grows and
/// the realized set only grows.
pub fn check_era_monotonicity(records: &[EraRecord]) -> Result<(), String> {
    for pair in records.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        if b.upper_bound_f2 > a.upper_bound_f2 {
            return Err(format!(
                "upper bound grew from {} to {} at era {}",
                a.upper_bound_f2, b.upper_bound_f2, b.era
            ));
        }
        for (v, (pa, pb)) in a.prefix.prefixes.iter().zip(&b.prefix.prefixes).enumerate() {
            if pb.len() < pa.len() || pb[..pa.len()] != pa[..] {
                return Err(format!("vehicle {v} realized tour shrank at era {}", b.era));
            }
        }
    }
    Ok(())
}
