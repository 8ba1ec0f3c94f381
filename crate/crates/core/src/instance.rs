//! Problem instances: customers, depots, request times and the derived
//! distance matrix, plus the benchmark generator and JSON file I/O.
//!
//! Node indices are 0-based. For an instance with `n` nodes, indices
//! `0..n-2` are customers, `n-2` is the start depot and `n-1` the end depot.
//! Files carry 1-based `id`s, matching the conventional notation.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type NodeId = usize;

#[derive(Debug, Error)]
pub enum InstanceError {
    #[error("invalid generator configuration: {0}")]
    Config(String),
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid instance: {0}")]
    Validation(String),
    #[error("could not place clustered points: {0}")]
    Placement(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CustomerKind {
    Mandatory,
    Dynamic,
    StartDepot,
    EndDepot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Customer {
    pub x: f64,
    pub y: f64,
    pub kind: CustomerKind,
    pub request_time: f64,
}

impl Customer {
    pub fn new(x: f64, y: f64, kind: CustomerKind, request_time: f64) -> Self {
        Self {
            x,
            y,
            kind,
            request_time,
        }
    }

    pub fn is_dynamic(&self) -> bool {
        self.kind == CustomerKind::Dynamic
    }
}

/// A validated instance with its dense distance matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    name: String,
    customers: Vec<Customer>,
    n_mandatory: usize,
    n_dynamic: usize,
    distance: Vec<f64>,
    meta: Option<serde_json::Value>,
}

impl Instance {
    /// Builds an instance from nodes laid out as customers followed by the
    /// start depot and the end depot.
    pub fn new(name: impl Into<String>, customers: Vec<Customer>) -> Result<Self, InstanceError> {
        let n = customers.len();
        if n < 3 {
            return Err(InstanceError::Validation(format!(
                "need at least one customer and two depots, got {n} nodes"
            )));
        }
        let mut n_mandatory = 0;
        let mut n_dynamic = 0;
        let mut starts = 0;
        let mut ends = 0;
        for (i, c) in customers.iter().enumerate() {
            if !c.x.is_finite() || !c.y.is_finite() {
                return Err(InstanceError::Validation(format!(
                    "node {} has non-finite coordinates",
                    i + 1
                )));
            }
            if !c.request_time.is_finite() || c.request_time < 0.0 {
                return Err(InstanceError::Validation(format!(
                    "node {} has invalid request time {}",
                    i + 1,
                    c.request_time
                )));
            }
            match c.kind {
                CustomerKind::Dynamic => {
                    if c.request_time <= 0.0 {
                        return Err(InstanceError::Validation(format!(
                            "dynamic customer {} must have a positive request time",
                            i + 1
                        )));
                    }
                    n_dynamic += 1;
                }
                other => {
                    if c.request_time != 0.0 {
                        return Err(InstanceError::Validation(format!(
                            "node {} of kind {:?} must have request time 0",
                            i + 1,
                            other
                        )));
                    }
                    match other {
                        CustomerKind::Mandatory => n_mandatory += 1,
                        CustomerKind::StartDepot => starts += 1,
                        CustomerKind::EndDepot => ends += 1,
                        CustomerKind::Dynamic => unreachable!(),
                    }
                }
            }
        }
        if starts != 1 || ends != 1 {
            return Err(InstanceError::Validation(format!(
                "expected exactly one start and one end depot, found {starts} and {ends}"
            )));
        }
        if customers[n - 2].kind != CustomerKind::StartDepot
            || customers[n - 1].kind != CustomerKind::EndDepot
        {
            return Err(InstanceError::Validation(
                "the start and end depot must be the last two nodes".into(),
            ));
        }
        let mut distance = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let d = (customers[i].x - customers[j].x).hypot(customers[i].y - customers[j].y);
                distance[i * n + j] = d;
                distance[j * n + i] = d;
            }
        }
        Ok(Self {
            name: name.into(),
            customers,
            n_mandatory,
            n_dynamic,
            distance,
            meta: None,
        })
    }

    pub fn with_meta(mut self, meta: serde_json::Value) -> Self {
        self.meta = Some(meta);
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn meta(&self) -> Option<&serde_json::Value> {
        self.meta.as_ref()
    }

    /// Total node count including both depots.
    pub fn n_nodes(&self) -> usize {
        self.customers.len()
    }

    /// Number of non-depot customers, the genotype length.
    pub fn n_customers(&self) -> usize {
        self.customers.len() - 2
    }

    pub fn n_mandatory(&self) -> usize {
        self.n_mandatory
    }

    pub fn n_dynamic(&self) -> usize {
        self.n_dynamic
    }

    pub fn start_depot(&self) -> NodeId {
        self.customers.len() - 2
    }

    pub fn end_depot(&self) -> NodeId {
        self.customers.len() - 1
    }

    pub fn customers(&self) -> &[Customer] {
        &self.customers
    }

    pub fn customer(&self, node: NodeId) -> &Customer {
        &self.customers[node]
    }

    pub fn request_time(&self, node: NodeId) -> f64 {
        self.customers[node].request_time
    }

    pub fn is_dynamic(&self, node: NodeId) -> bool {
        self.customers[node].is_dynamic()
    }

    #[inline]
    pub fn distance(&self, a: NodeId, b: NodeId) -> f64 {
        self.distance[a * self.customers.len() + b]
    }

    pub fn dynamic_customers(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.n_customers()).filter(|&i| self.customers[i].is_dynamic())
    }

    pub fn mandatory_customers(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.n_customers()).filter(|&i| self.customers[i].kind == CustomerKind::Mandatory)
    }

    pub fn max_request_time(&self) -> Option<f64> {
        self.dynamic_customers()
            .map(|i| self.customers[i].request_time)
            .reduce(f64::max)
    }

    /// Copy with coordinates and request times multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self, InstanceError> {
        let customers = self
            .customers
            .iter()
            .map(|c| Customer::new(c.x * factor, c.y * factor, c.kind, c.request_time * factor))
            .collect();
        let mut out = Instance::new(self.name.clone(), customers)?;
        out.meta = self.meta.clone();
        Ok(out)
    }

    pub fn to_json(&self) -> String {
        let file = InstanceFile {
            name: self.name.clone(),
            n: self.customers.len(),
            customers: self
                .customers
                .iter()
                .enumerate()
                .map(|(i, c)| CustomerRecord {
                    id: i + 1,
                    x: c.x,
                    y: c.y,
                    kind: c.kind,
                    request_time: Some(c.request_time),
                })
                .collect(),
            meta: self.meta.clone(),
        };
        serde_json::to_string_pretty(&file).expect("instance serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, InstanceError> {
        let file: InstanceFile = serde_json::from_str(text).map_err(|e| InstanceError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        if file.n != file.customers.len() {
            return Err(InstanceError::Validation(format!(
                "declared n = {} but {} customers listed",
                file.n,
                file.customers.len()
            )));
        }
        let mut customers = Vec::with_capacity(file.n);
        for (i, rec) in file.customers.into_iter().enumerate() {
            if rec.id != i + 1 {
                return Err(InstanceError::Validation(format!(
                    "customer at position {} has id {}, expected {}",
                    i + 1,
                    rec.id,
                    i + 1
                )));
            }
            let request_time = match (rec.kind, rec.request_time) {
                (_, Some(r)) => r,
                (CustomerKind::Dynamic, None) => {
                    return Err(InstanceError::Validation(format!(
                        "dynamic customer {} is missing request_time",
                        rec.id
                    )))
                }
                (_, None) => 0.0,
            };
            customers.push(Customer::new(rec.x, rec.y, rec.kind, request_time));
        }
        let mut inst = Instance::new(file.name, customers)?;
        inst.meta = file.meta;
        Ok(inst)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct InstanceFile {
    name: String,
    n: usize,
    customers: Vec<CustomerRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    meta: Option<serde_json::Value>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CustomerRecord {
    id: usize,
    x: f64,
    y: f64,
    kind: CustomerKind,
    #[serde(default)]
    request_time: Option<f64>,
}

pub fn save_instance(inst: &Instance, path: impl AsRef<Path>) -> Result<(), InstanceError> {
    fs::write(path, inst.to_json())?;
    Ok(())
}

pub fn load_instance(path: impl AsRef<Path>) -> Result<Instance, InstanceError> {
    let text = fs::read_to_string(path)?;
    Instance::from_json(&text)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "clusters", rename_all = "snake_case")]
pub enum Topology {
    Uniform,
    Clustered(usize),
}

impl std::fmt::Display for Topology {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Topology::Uniform => write!(f, "uniform"),
            Topology::Clustered(k) => write!(f, "clustered:{k}"),
        }
    }
}

impl std::str::FromStr for Topology {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once(':') {
            None if s == "uniform" => Ok(Topology::Uniform),
            Some(("clustered", k)) => k
                .parse::<usize>()
                .map(Topology::Clustered)
                .map_err(|_| format!("invalid cluster count in '{s}'")),
            _ => Err(format!(
                "unknown topology '{s}', expected 'uniform' or 'clustered:<k>'"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    /// Customers excluding the two depots.
    pub n_total: usize,
    pub topology: Topology,
    pub dynamic_ratio: f64,
    #[serde(default = "default_horizon")]
    pub request_horizon: f64,
    pub seed: u64,
    #[serde(default = "default_box")]
    pub bounding_box: f64,
}

fn default_horizon() -> f64 {
    1000.0
}

fn default_box() -> f64 {
    1000.0
}

impl GeneratorConfig {
    pub fn new(n_total: usize, topology: Topology, dynamic_ratio: f64, seed: u64) -> Self {
        Self {
            n_total,
            topology,
            dynamic_ratio,
            request_horizon: default_horizon(),
            seed,
            bounding_box: default_box(),
        }
    }

    pub fn validate(&self) -> Result<(), InstanceError> {
        if self.n_total < 4 {
            return Err(InstanceError::Config(format!(
                "n_total must be at least 4, got {}",
                self.n_total
            )));
        }
        if !(0.0..=1.0).contains(&self.dynamic_ratio) {
            return Err(InstanceError::Config(format!(
                "dynamic_ratio must lie in [0, 1], got {}",
                self.dynamic_ratio
            )));
        }
        if !(self.request_horizon > 0.0 && self.request_horizon.is_finite()) {
            return Err(InstanceError::Config("request_horizon must be positive".into()));
        }
        if !(self.bounding_box > 0.0 && self.bounding_box.is_finite()) {
            return Err(InstanceError::Config("bounding_box must be positive".into()));
        }
        if let Topology::Clustered(k) = self.topology {
            if k == 0 || k > self.n_total {
                return Err(InstanceError::Config(format!(
                    "cluster count must be in 1..={}, got {k}",
                    self.n_total
                )));
            }
        }
        Ok(())
    }

    /// Canonical file stem, e.g. `clustered5_n98_d50_s1`.
    pub fn default_name(&self) -> String {
        let topo = match self.topology {
            Topology::Uniform => "uniform".to_string(),
            Topology::Clustered(k) => format!("clustered{k}"),
        };
        format!(
            "{topo}_n{}_d{}_s{}",
            self.n_total,
            (self.dynamic_ratio * 100.0).round() as i64,
            self.seed
        )
    }

    pub fn n_dynamic(&self) -> usize {
        (self.dynamic_ratio * self.n_total as f64).round() as usize
    }
}

/// Cluster layout of a generated clustered instance.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterLayout {
    pub centers: Vec<(f64, f64)>,
    /// Cluster index for every customer (depots excluded).
    pub membership: Vec<usize>,
}

pub fn generate_instance(cfg: &GeneratorConfig) -> Result<Instance, InstanceError> {
    generate_with_layout(cfg).map(|(inst, _)| inst)
}

const MAX_PLACEMENT_ATTEMPTS: usize = 1_000_000;

pub fn generate_with_layout(
    cfg: &GeneratorConfig,
) -> Result<(Instance, Option<ClusterLayout>), InstanceError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let side = cfg.bounding_box;
    let n = cfg.n_total;

    let (points, layout) = match cfg.topology {
        Topology::Uniform => {
            let pts = (0..n)
                .map(|_| (rng.random::<f64>() * side, rng.random::<f64>() * side))
                .collect::<Vec<_>>();
            (pts, None)
        }
        Topology::Clustered(k) => {
            let centers = latin_hypercube_centers(k, side, &mut rng);
            let sigma = side / (4.0 * k as f64);
            let normal = Normal::new(0.0, sigma).expect("positive spread");
            let base = n / k;
            let mut membership = Vec::with_capacity(n);
            for c in 0..k {
                membership.extend(std::iter::repeat_n(c, base));
            }
            for r in 0..(n - base * k) {
                membership.push(r % k);
            }
            let mut pts = Vec::with_capacity(n);
            for &c in &membership {
                let (cx, cy) = centers[c];
                let mut placed = None;
                for _ in 0..MAX_PLACEMENT_ATTEMPTS {
                    let x = cx + normal.sample(&mut rng);
                    let y = cy + normal.sample(&mut rng);
                    if !(0.0..=side).contains(&x) || !(0.0..=side).contains(&y) {
                        continue;
                    }
                    if nearest_center_strict(&centers, (x, y)) == Some(c) {
                        placed = Some((x, y));
                        break;
                    }
                }
                pts.push(placed.ok_or_else(|| {
                    InstanceError::Placement(format!("cluster {c} rejected every sample"))
                })?);
            }
            (pts, Some(ClusterLayout { centers, membership }))
        }
    };

    let start = (rng.random::<f64>() * side, rng.random::<f64>() * side);
    let end = (rng.random::<f64>() * side, rng.random::<f64>() * side);

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut dynamic = vec![false; n];
    for &i in order.iter().take(cfg.n_dynamic()) {
        dynamic[i] = true;
    }

    let mut customers = Vec::with_capacity(n + 2);
    for (i, &(x, y)) in points.iter().enumerate() {
        if dynamic[i] {
            // (0, horizon]
            let r = cfg.request_horizon * (1.0 - rng.random::<f64>());
            customers.push(Customer::new(x, y, CustomerKind::Dynamic, r));
        } else {
            customers.push(Customer::new(x, y, CustomerKind::Mandatory, 0.0));
        }
    }
    customers.push(Customer::new(start.0, start.1, CustomerKind::StartDepot, 0.0));
    customers.push(Customer::new(end.0, end.1, CustomerKind::EndDepot, 0.0));

    let meta = serde_json::to_value(cfg).expect("config serializes");
    let inst = Instance::new(cfg.default_name(), customers)?.with_meta(meta);
    Ok((inst, layout))
}

/// One center per stratum on each axis, strata paired by random permutation.
fn latin_hypercube_centers(k: usize, side: f64, rng: &mut impl Rng) -> Vec<(f64, f64)> {
    let width = side / k as f64;
    let mut xs: Vec<usize> = (0..k).collect();
    let mut ys: Vec<usize> = (0..k).collect();
    xs.shuffle(rng);
    ys.shuffle(rng);
    xs.iter()
        .zip(&ys)
        .map(|(&sx, &sy)| {
            (
                (sx as f64 + rng.random::<f64>()) * width,
                (sy as f64 + rng.random::<f64>()) * width,
            )
        })
        .collect()
}

/// Index of the unique nearest center; `None` on an exact tie.
pub fn nearest_center_strict(centers: &[(f64, f64)], p: (f64, f64)) -> Option<usize> {
    let mut best = None;
    let mut best_d = f64::INFINITY;
    let mut tie = false;
    for (i, &(cx, cy)) in centers.iter().enumerate() {
        let d = (p.0 - cx).hypot(p.1 - cy);
        if d < best_d {
            best_d = d;
            best = Some(i);
            tie = false;
        } else if d == best_d {
            tie = true;
        }
    }
    if tie {
        None
    } else {
        best
    }
}

/// The 50-instance benchmark layout: 10 uniform plus 10 for each cluster
/// count in {2, 3, 5, 10}; half of every group at 50 % dynamic customers,
/// half at 75 %.
pub fn corpus_configs(n_total: usize, seed_base: u64) -> Vec<GeneratorConfig> {
    let topologies = [
        Topology::Uniform,
        Topology::Clustered(2),
        Topology::Clustered(3),
        Topology::Clustered(5),
        Topology::Clustered(10),
    ];
    let mut out = Vec::with_capacity(50);
    let mut seed = seed_base;
    for topo in topologies {
        for ratio in [0.5, 0.75] {
            for _ in 0..5 {
                out.push(GeneratorConfig::new(n_total, topo, ratio, seed));
                seed += 1;
            }
        }
    }
    out
}
