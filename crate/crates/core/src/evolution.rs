//! Variation and survival selection: population initialization with template
//! repair, the three-part mutation and NSGA-II (mu + lambda) selection.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::genotype::{evaluate, Individual, Objectives, RealizedPrefix, VehicleId};
use crate::instance::{CustomerKind, Instance, NodeId};

pub type Population = Vec<Individual>;

/// Generations at which local search runs within one era.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LsSchedule {
    pub first: bool,
    pub half: bool,
    pub last: bool,
}

impl LsSchedule {
    pub const ALWAYS_KEY_POINTS: LsSchedule = LsSchedule {
        first: true,
        half: true,
        last: true,
    };
    pub const NEVER: LsSchedule = LsSchedule {
        first: false,
        half: false,
        last: false,
    };

    /// Sorted, deduplicated generation indices out of `generations`.
    pub fn generations(&self, generations: usize) -> Vec<usize> {
        if generations == 0 {
            return Vec::new();
        }
        let mut out = Vec::new();
        if self.first {
            out.push(0);
        }
        if self.half {
            out.push(generations / 2);
        }
        if self.last {
            out.push(generations - 1);
        }
        out.sort_unstable();
        out.dedup();
        out
    }
}

impl Default for LsSchedule {
    fn default() -> Self {
        Self::ALWAYS_KEY_POINTS
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvoParams {
    pub mu: usize,
    pub p_swap: f64,
    pub n_swap: usize,
    pub evals_per_era: usize,
    pub ls_schedule: LsSchedule,
}

impl Default for EvoParams {
    fn default() -> Self {
        Self {
            mu: 100,
            p_swap: 0.6,
            n_swap: 10,
            evals_per_era: 65_000,
            ls_schedule: LsSchedule::default(),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ParamError {
    #[error("population size must be at least 2, got {0}")]
    Mu(usize),
    #[error("swap probability must lie in [0, 1], got {0}")]
    SwapProbability(f64),
    #[error("swap count must be at least 1")]
    SwapCount,
    #[error("evaluation budget {budget} is smaller than the population size {mu}")]
    Budget { budget: usize, mu: usize },
}

impl EvoParams {
    pub fn validate(&self) -> Result<(), ParamError> {
        if self.mu < 2 {
            return Err(ParamError::Mu(self.mu));
        }
        if !(0.0..=1.0).contains(&self.p_swap) {
            return Err(ParamError::SwapProbability(self.p_swap));
        }
        if self.n_swap < 1 {
            return Err(ParamError::SwapCount);
        }
        if self.evals_per_era < self.mu {
            return Err(ParamError::Budget {
                budget: self.evals_per_era,
                mu: self.mu,
            });
        }
        Ok(())
    }

    /// Generation count that fits the budget. The initial population, every
    /// offspring and every local-search pass each cost one evaluation per
    /// individual.
    pub fn generations(&self) -> usize {
        let mut g = (self.evals_per_era / self.mu).saturating_sub(1);
        while g > 0 && (1 + g + self.ls_schedule.generations(g).len()) * self.mu > self.evals_per_era
        {
            g -= 1;
        }
        g
    }
}

/// Everything the operators need to know about the current era.
#[derive(Debug, Clone, PartialEq)]
pub struct EraContext {
    pub t: f64,
    pub n_vehicles: usize,
    pub prefix: RealizedPrefix,
    /// Per customer: dynamic and requested by `t`.
    pub requested: Vec<bool>,
    pub new_requests: Vec<NodeId>,
    pub available_dynamic: Vec<NodeId>,
    pub available_all: Vec<NodeId>,
    pub open_vehicles: Vec<VehicleId>,
    pub honor_release: bool,
}

impl EraContext {
    /// Context at era onset `t`; requests in `(t - delta, t]` are new.
    pub fn new(
        inst: &Instance,
        prefix: RealizedPrefix,
        t: f64,
        delta: f64,
        honor_release: bool,
    ) -> Self {
        let n = inst.n_customers();
        let mut requested = vec![false; n];
        let mut new_requests = Vec::new();
        let mut available_dynamic = Vec::new();
        let mut available_all = Vec::new();
        for (c, was_requested) in requested.iter_mut().enumerate() {
            let cust = inst.customer(c);
            let visible = match cust.kind {
                CustomerKind::Dynamic => {
                    let r = cust.request_time;
                    let seen = r <= t;
                    *was_requested = seen;
                    if seen && r > t - delta {
                        new_requests.push(c);
                    }
                    seen
                }
                _ => true,
            };
            if visible && !prefix.fixed[c] {
                available_all.push(c);
                if cust.kind == CustomerKind::Dynamic {
                    available_dynamic.push(c);
                }
            }
        }
        let open_vehicles = prefix.open_vehicles();
        Self {
            t,
            n_vehicles: prefix.n_vehicles(),
            prefix,
            requested,
            new_requests,
            available_dynamic,
            available_all,
            open_vehicles,
            honor_release,
        }
    }

    pub fn first_era(inst: &Instance, n_vehicles: usize, honor_release: bool) -> Self {
        Self::new(
            inst,
            RealizedPrefix::empty(inst, n_vehicles),
            0.0,
            0.0,
            honor_release,
        )
    }

    /// Static view with every dynamic customer known up front and release
    /// times honored.
    pub fn clairvoyant(inst: &Instance, n_vehicles: usize) -> Self {
        Self::new(
            inst,
            RealizedPrefix::empty(inst, n_vehicles),
            f64::INFINITY,
            0.0,
            true,
        )
    }

    pub fn evaluate(&self, ind: &mut Individual, inst: &Instance) -> Objectives {
        let obj = evaluate(
            ind,
            inst,
            self.n_vehicles,
            &self.prefix,
            self.t,
            self.honor_release,
        );
        ind.set_objectives(obj);
        obj
    }

    /// Largest number of dynamic customers that can still remain unserved
    /// at the end of the day.
    pub fn upper_bound_f2(&self, inst: &Instance) -> usize {
        inst.n_dynamic() - self.prefix.served_dynamic(inst)
    }

    /// Dynamic customers that have not requested service yet.
    pub fn unrevealed_dynamic(&self, inst: &Instance) -> usize {
        inst.n_dynamic() - self.requested.iter().filter(|&&r| r).count()
    }

    pub fn check_feasible(&self, ind: &Individual, inst: &Instance) -> Result<(), Violation> {
        let n = inst.n_customers();
        if ind.len() != n || ind.vehicle.len() != n || ind.active.len() != n || !ind.is_permutation()
        {
            return Err(Violation::Malformed);
        }
        for c in 0..n {
            if ind.vehicle[c] >= self.n_vehicles {
                return Err(Violation::Malformed);
            }
            match inst.customer(c).kind {
                CustomerKind::Mandatory if !ind.active[c] => {
                    return Err(Violation::MandatoryInactive(c))
                }
                CustomerKind::Dynamic if ind.active[c] && !self.requested[c] => {
                    return Err(Violation::PrematureActivation(c))
                }
                _ => {}
            }
            if !self.prefix.fixed[c] && ind.active[c] && self.prefix.closed[ind.vehicle[c]] {
                return Err(Violation::ClosedVehicle(c));
            }
        }
        for (v, fixed) in self.prefix.prefixes.iter().enumerate() {
            for &c in fixed {
                if !ind.active[c] || ind.vehicle[c] != v {
                    return Err(Violation::PrefixNotFixed(c));
                }
            }
        }
        let plan = crate::genotype::decode(ind, self.n_vehicles);
        for (v, fixed) in self.prefix.prefixes.iter().enumerate() {
            if plan.tours[v].len() < fixed.len() || plan.tours[v][..fixed.len()] != fixed[..] {
                return Err(Violation::PrefixOrder(v));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum Violation {
    #[error("genotype vectors are malformed")]
    Malformed,
    #[error("realized customer {0} is inactive or on the wrong vehicle")]
    PrefixNotFixed(NodeId),
    #[error("vehicle {0} does not start with its realized prefix")]
    PrefixOrder(VehicleId),
    #[error("dynamic customer {0} is active before requesting service")]
    PrematureActivation(NodeId),
    #[error("mandatory customer {0} is inactive")]
    MandatoryInactive(NodeId),
    #[error("customer {0} is assigned to a vehicle that already finished")]
    ClosedVehicle(NodeId),
}

/// Builds the era's starting population: random individuals when
/// `template` is empty, otherwise repaired copies of the template.
///
/// Panics if a non-empty template does not hold exactly `mu` individuals.
pub fn initialize<R: Rng + ?Sized>(
    mu: usize,
    ctx: &EraContext,
    template: &[Individual],
    inst: &Instance,
    rng: &mut R,
) -> Population {
    assert!(
        template.is_empty() || template.len() == mu,
        "template holds {} individuals, expected {mu}",
        template.len()
    );
    let n = inst.n_customers();
    if template.is_empty() {
        return (0..mu)
            .map(|_| {
                let vehicle = (0..n)
                    .map(|_| rng.random_range(0..ctx.n_vehicles))
                    .collect();
                let active = (0..n).map(|c| !inst.is_dynamic(c)).collect();
                let mut perm: Vec<NodeId> = (0..n).collect();
                perm.shuffle(rng);
                Individual::new(vehicle, active, perm)
            })
            .collect();
    }
    template.iter().map(|x| repair(x, ctx, inst, rng)).collect()
}

/// Embeds the realized prefixes into a template individual and randomly
/// activates new requests.
pub fn repair<R: Rng + ?Sized>(
    template: &Individual,
    ctx: &EraContext,
    inst: &Instance,
    rng: &mut R,
) -> Individual {
    let prefix = &ctx.prefix;
    let mut x = template.clone();
    x.invalidate();
    for (v, fixed) in prefix.prefixes.iter().enumerate() {
        for &c in fixed {
            x.active[c] = true;
            x.vehicle[c] = v;
        }
    }
    for c in 0..x.len() {
        if prefix.fixed[c] || !prefix.closed[x.vehicle[c]] {
            continue;
        }
        match ctx.open_vehicles.choose(rng) {
            Some(&v) => x.vehicle[c] = v,
            None => {
                assert!(
                    inst.is_dynamic(c),
                    "mandatory customer {c} left over after every vehicle finished"
                );
                x.active[c] = false;
            }
        }
    }
    let mut perm: Vec<NodeId> = prefix.prefixes.iter().flatten().copied().collect();
    perm.extend(x.perm.iter().copied().filter(|&c| !prefix.fixed[c]));
    x.perm = perm;
    if !ctx.open_vehicles.is_empty() {
        for &c in &ctx.new_requests {
            if !prefix.fixed[c] && rng.random_bool(0.5) {
                x.active[c] = true;
            }
        }
    }
    x
}

fn rate(set_size: usize) -> f64 {
    if set_size == 0 {
        0.0
    } else {
        1.0 / set_size as f64
    }
}

/// Offspring of `parent`: activation flips, vehicle changes and swaps
/// restricted to available customers. The parent is left untouched.
pub fn mutate<R: Rng + ?Sized>(
    parent: &Individual,
    ctx: &EraContext,
    p_swap: f64,
    n_swap: usize,
    rng: &mut R,
) -> Individual {
    let mut y = parent.clone();
    y.invalidate();

    if !ctx.open_vehicles.is_empty() {
        let p_a = rate(ctx.available_dynamic.len());
        for &c in &ctx.available_dynamic {
            if rng.random::<f64>() < p_a {
                y.active[c] = !y.active[c];
            }
        }
    }

    let p_v = rate(ctx.available_all.len());
    for &c in &ctx.available_all {
        if rng.random::<f64>() < p_v {
            let current = y.vehicle[c];
            let others = ctx.open_vehicles.iter().filter(|&&v| v != current).count();
            if others > 0 {
                let pick = rng.random_range(0..others);
                y.vehicle[c] = *ctx
                    .open_vehicles
                    .iter()
                    .filter(|&&v| v != current)
                    .nth(pick)
                    .expect("index within range");
            }
        }
    }

    let avail = &ctx.available_all;
    if avail.len() >= 2 && rng.random::<f64>() <= p_swap {
        let mut pos = y.positions();
        for _ in 0..n_swap {
            let i = rng.random_range(0..avail.len());
            let mut j = rng.random_range(0..avail.len() - 1);
            if j >= i {
                j += 1;
            }
            let (a, b) = (avail[i], avail[j]);
            y.perm.swap(pos[a], pos[b]);
            pos.swap(a, b);
        }
    }
    y
}

#[inline]
pub fn dominates(a: (f64, f64), b: (f64, f64)) -> bool {
    a.0 <= b.0 && a.1 <= b.1 && (a.0 < b.0 || a.1 < b.1)
}

/// Fast non-dominated sorting; fronts in rank order, indices ascending
/// within each front.
pub fn nds_sort(points: &[(f64, f64)]) -> Vec<Vec<usize>> {
    let n = points.len();
    let mut dominated_by: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut counts = vec![0usize; n];
    for i in 0..n {
        for j in (i + 1)..n {
            if dominates(points[i], points[j]) {
                dominated_by[i].push(j);
                counts[j] += 1;
            } else if dominates(points[j], points[i]) {
                dominated_by[j].push(i);
                counts[i] += 1;
            }
        }
    }
    let mut fronts = Vec::new();
    let mut current: Vec<usize> = (0..n).filter(|&i| counts[i] == 0).collect();
    while !current.is_empty() {
        let mut next = Vec::new();
        for &i in &current {
            for &j in &dominated_by[i] {
                counts[j] -= 1;
                if counts[j] == 0 {
                    next.push(j);
                }
            }
        }
        next.sort_unstable();
        fronts.push(std::mem::replace(&mut current, next));
    }
    fronts
}

/// Crowding distance of each member of `front` (same order as `front`).
pub fn crowding_distance(points: &[(f64, f64)], front: &[usize]) -> Vec<f64> {
    let m = front.len();
    let mut dist = vec![0.0; m];
    if m <= 2 {
        return vec![f64::INFINITY; m];
    }
    for objective in 0..2 {
        let value = |k: usize| {
            let p = points[front[k]];
            if objective == 0 {
                p.0
            } else {
                p.1
            }
        };
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| value(a).total_cmp(&value(b)).then(front[a].cmp(&front[b])));
        let lo = value(order[0]);
        let hi = value(order[m - 1]);
        dist[order[0]] = f64::INFINITY;
        dist[order[m - 1]] = f64::INFINITY;
        if hi > lo {
            for k in 1..m - 1 {
                dist[order[k]] += (value(order[k + 1]) - value(order[k - 1])) / (hi - lo);
            }
        }
    }
    dist
}

/// Indices of the `mu` survivors in selection order.
pub fn select_indices(points: &[(f64, f64)], mu: usize) -> Vec<usize> {
    let mut survivors = Vec::with_capacity(mu);
    for front in nds_sort(points) {
        if survivors.len() == mu {
            break;
        }
        let room = mu - survivors.len();
        if front.len() <= room {
            survivors.extend(front);
        } else {
            let dist = crowding_distance(points, &front);
            let mut order: Vec<usize> = (0..front.len()).collect();
            order.sort_by(|&a, &b| dist[b].total_cmp(&dist[a]).then(front[a].cmp(&front[b])));
            survivors.extend(order.into_iter().take(room).map(|k| front[k]));
        }
    }
    survivors
}

/// NSGA-II environmental selection; every individual must be evaluated.
pub fn select(union: Population, mu: usize) -> Population {
    let points: Vec<(f64, f64)> = union.iter().map(|x| x.fitness().as_point()).collect();
    let keep = select_indices(&points, mu);
    let mut slots: Vec<Option<Individual>> = union.into_iter().map(Some).collect();
    keep.into_iter()
        .map(|i| slots[i].take().expect("each survivor selected once"))
        .collect()
}
