//! Three-vector encoding of a multi-vehicle solution and its bi-objective
//! evaluation.
//!
//! An [`Individual`] stores, per customer, the assigned vehicle, an
//! activation bit and its position in a global permutation. The tour of a
//! vehicle is the permutation filtered to the active customers of that
//! vehicle.

use serde::{Deserialize, Serialize};

use crate::instance::{Instance, NodeId};

pub type VehicleId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Objectives {
    /// Maximum vehicle completion time.
    pub f1: f64,
    /// Requested dynamic customers left unserved.
    pub f2: usize,
}

impl Objectives {
    pub fn new(f1: f64, f2: usize) -> Self {
        Self { f1, f2 }
    }

    /// Pareto dominance under minimization of both objectives.
    pub fn dominates(&self, other: &Objectives) -> bool {
        (self.f1 <= other.f1 && self.f2 <= other.f2) && (self.f1 < other.f1 || self.f2 < other.f2)
    }

    pub fn as_point(&self) -> (f64, f64) {
        (self.f1, self.f2 as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Individual {
    pub vehicle: Vec<VehicleId>,
    pub active: Vec<bool>,
    pub perm: Vec<NodeId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    objectives: Option<Objectives>,
}

impl Individual {
    pub fn new(vehicle: Vec<VehicleId>, active: Vec<bool>, perm: Vec<NodeId>) -> Self {
        debug_assert_eq!(vehicle.len(), active.len());
        debug_assert_eq!(vehicle.len(), perm.len());
        Self {
            vehicle,
            active,
            perm,
            objectives: None,
        }
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    pub fn objectives(&self) -> Option<Objectives> {
        self.objectives
    }

    /// Cached objectives; panics when the individual was never evaluated.
    pub fn fitness(&self) -> Objectives {
        self.objectives
            .expect("individual must be evaluated before selection")
    }

    pub fn set_objectives(&mut self, obj: Objectives) {
        self.objectives = Some(obj);
    }

    pub fn invalidate(&mut self) {
        self.objectives = None;
    }

    pub fn is_permutation(&self) -> bool {
        let mut seen = vec![false; self.perm.len()];
        for &c in &self.perm {
            if c >= seen.len() || seen[c] {
                return false;
            }
            seen[c] = true;
        }
        true
    }

    /// Position of every customer in `perm`.
    pub fn positions(&self) -> Vec<usize> {
        let mut pos = vec![0; self.perm.len()];
        for (i, &c) in self.perm.iter().enumerate() {
            pos[c] = i;
        }
        pos
    }
}

/// One ordered customer list per vehicle; depots are implicit.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TourPlan {
    pub tours: Vec<Vec<NodeId>>,
}

impl TourPlan {
    pub fn empty(n_vehicles: usize) -> Self {
        Self {
            tours: vec![Vec::new(); n_vehicles],
        }
    }

    pub fn n_vehicles(&self) -> usize {
        self.tours.len()
    }

    /// Customer ids in 1-based notation, as written to logs.
    pub fn to_ids(&self) -> Vec<Vec<usize>> {
        self.tours
            .iter()
            .map(|t| t.iter().map(|&c| c + 1).collect())
            .collect()
    }
}

pub fn decode(ind: &Individual, n_vehicles: usize) -> TourPlan {
    let mut tours = vec![Vec::new(); n_vehicles];
    for &c in &ind.perm {
        if ind.active[c] {
            tours[ind.vehicle[c]].push(c);
        }
    }
    TourPlan { tours }
}

/// Completion time of an open tour that starts at `start_from` at
/// `start_time`, visits `tour` in order and ends at the end depot.
///
/// With `honor_release` the vehicle waits at a customer until its request
/// time. A vehicle that never leaves the start depot costs 0.
pub fn tour_length(
    tour: &[NodeId],
    inst: &Instance,
    start_from: NodeId,
    start_time: f64,
    honor_release: bool,
) -> f64 {
    if tour.is_empty() && start_from == inst.start_depot() {
        return 0.0;
    }
    let mut clock = start_time;
    let mut prev = start_from;
    for &c in tour {
        clock += inst.distance(prev, c);
        if honor_release {
            clock = clock.max(inst.request_time(c));
        }
        prev = c;
    }
    clock + inst.distance(prev, inst.end_depot())
}

/// Arrival time at each customer of a tour driven from the start depot at
/// time 0.
pub fn arrival_times(tour: &[NodeId], inst: &Instance, honor_release: bool) -> Vec<f64> {
    let mut clock = 0.0;
    let mut prev = inst.start_depot();
    tour.iter()
        .map(|&c| {
            clock += inst.distance(prev, c);
            if honor_release {
                clock = clock.max(inst.request_time(c));
            }
            prev = c;
            clock
        })
        .collect()
}

/// The irreversible part of a plan at a point in time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealizedPrefix {
    pub prefixes: Vec<Vec<NodeId>>,
    pub fixed: Vec<bool>,
    pub vehicle_of: Vec<Option<VehicleId>>,
    pub last_node: Vec<NodeId>,
    pub elapsed: Vec<f64>,
    /// Vehicle already reached the end depot; it accepts no further customers.
    pub closed: Vec<bool>,
}

impl RealizedPrefix {
    pub fn empty(inst: &Instance, n_vehicles: usize) -> Self {
        Self {
            prefixes: vec![Vec::new(); n_vehicles],
            fixed: vec![false; inst.n_customers()],
            vehicle_of: vec![None; inst.n_customers()],
            last_node: vec![inst.start_depot(); n_vehicles],
            elapsed: vec![0.0; n_vehicles],
            closed: vec![false; n_vehicles],
        }
    }

    pub fn n_vehicles(&self) -> usize {
        self.prefixes.len()
    }

    pub fn fixed_count(&self) -> usize {
        self.prefixes.iter().map(Vec::len).sum()
    }

    pub fn is_fixed(&self, c: NodeId) -> bool {
        self.fixed[c]
    }

    pub fn open_vehicles(&self) -> Vec<VehicleId> {
        (0..self.n_vehicles()).filter(|&v| !self.closed[v]).collect()
    }

    /// Fixed dynamic customers.
    pub fn served_dynamic(&self, inst: &Instance) -> usize {
        self.prefixes
            .iter()
            .flatten()
            .filter(|&&c| inst.is_dynamic(c))
            .count()
    }
}

pub fn extract_prefix(plan: &TourPlan, inst: &Instance, t: f64, honor_release: bool) -> RealizedPrefix {
    let n_v = plan.n_vehicles();
    let mut out = RealizedPrefix::empty(inst, n_v);
    for (v, tour) in plan.tours.iter().enumerate() {
        let arrivals = arrival_times(tour, inst, honor_release);
        let len = arrivals.iter().take_while(|&&a| a <= t).count();
        let prefix = tour[..len].to_vec();
        for &c in &prefix {
            out.fixed[c] = true;
            out.vehicle_of[c] = Some(v);
        }
        if len > 0 {
            out.last_node[v] = prefix[len - 1];
            out.elapsed[v] = arrivals[len - 1];
        }
        if len == tour.len() && !tour.is_empty() {
            let completion = tour_length(tour, inst, inst.start_depot(), 0.0, honor_release);
            out.closed[v] = completion <= t;
        }
        out.prefixes[v] = prefix;
    }
    out
}

/// Evaluates both objectives. Customers with request time `<= t` count as
/// requested; pass `f64::INFINITY` to treat every dynamic customer as
/// requested.
///
/// Panics if a vehicle's decoded tour does not start with its realized
/// prefix: operators must never produce such individuals.
pub fn evaluate(
    ind: &Individual,
    inst: &Instance,
    n_vehicles: usize,
    prefix: &RealizedPrefix,
    t: f64,
    honor_release: bool,
) -> Objectives {
    let plan = decode(ind, n_vehicles);
    let mut f1: f64 = 0.0;
    for (v, tour) in plan.tours.iter().enumerate() {
        let fixed = &prefix.prefixes[v];
        assert!(
            tour.len() >= fixed.len() && tour[..fixed.len()] == fixed[..],
            "vehicle {v} tour does not embed its realized prefix"
        );
        let rest = &tour[fixed.len()..];
        let length = tour_length(
            rest,
            inst,
            prefix.last_node[v],
            prefix.elapsed[v],
            honor_release,
        );
        f1 = f1.max(length);
    }
    let f2 = inst
        .dynamic_customers()
        .filter(|&c| inst.request_time(c) <= t && !ind.active[c])
        .count();
    Objectives::new(f1, f2)
}
