//! Per-vehicle path improvement with the realized prefix held fixed.
//!
//! Each vehicle's free customers form a Hamiltonian path problem anchored at
//! the vehicle's last realized node and the end depot. The default backend
//! improves the path with 2-opt and Or-opt moves; an external TSP solver
//! can be plugged in through a plain-text matrix exchange, in which case the
//! path problem is first reduced to a round trip.

use std::fs;
use std::io::Write as _;
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::evolution::EraContext;
use crate::genotype::{decode, tour_length, Individual};
use crate::instance::{Instance, NodeId};

const EPS: f64 = 1e-10;

/// Fixed-endpoint Hamiltonian path over a vehicle's free customers.
///
/// Local indices: 0 is the start anchor, `1..=k` the free nodes in the
/// order of `nodes`, `k + 1` the end anchor.
#[derive(Debug, Clone, PartialEq)]
pub struct HppTask {
    pub start_anchor: NodeId,
    pub end_anchor: NodeId,
    pub nodes: Vec<NodeId>,
    submatrix: Vec<f64>,
}

impl HppTask {
    pub fn new(inst: &Instance, start_anchor: NodeId, end_anchor: NodeId, nodes: Vec<NodeId>) -> Self {
        debug_assert!(!nodes.contains(&start_anchor) && !nodes.contains(&end_anchor));
        let mut all = Vec::with_capacity(nodes.len() + 2);
        all.push(start_anchor);
        all.extend_from_slice(&nodes);
        all.push(end_anchor);
        let dim = all.len();
        let mut submatrix = vec![0.0; dim * dim];
        for (i, &a) in all.iter().enumerate() {
            for (j, &b) in all.iter().enumerate() {
                submatrix[i * dim + j] = inst.distance(a, b);
            }
        }
        Self {
            start_anchor,
            end_anchor,
            nodes,
            submatrix,
        }
    }

    pub fn n_free(&self) -> usize {
        self.nodes.len()
    }

    fn dim(&self) -> usize {
        self.nodes.len() + 2
    }

    /// Distance between two local indices.
    #[inline]
    pub fn cost(&self, i: usize, j: usize) -> f64 {
        self.submatrix[i * self.dim() + j]
    }

    /// Path length of `order`, a permutation of `0..k` indexing `nodes`.
    pub fn path_cost(&self, order: &[usize]) -> f64 {
        let mut prev = 0;
        let mut total = 0.0;
        for &o in order {
            total += self.cost(prev, o + 1);
            prev = o + 1;
        }
        total + self.cost(prev, self.dim() - 1)
    }

    pub fn order_to_nodes(&self, order: &[usize]) -> Vec<NodeId> {
        order.iter().map(|&o| self.nodes[o]).collect()
    }
}

/// Square cost matrix of a round-trip problem.
#[derive(Debug, Clone, PartialEq)]
pub struct TspMatrix {
    pub dim: usize,
    pub cost: Vec<f64>,
    /// Cost of a forbidden arc, larger than the sum of all other entries.
    pub forbidden: f64,
    pub symmetric: bool,
}

impl TspMatrix {
    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.cost[i * self.dim + j]
    }

    pub fn tour_cost(&self, tour: &[usize]) -> f64 {
        (0..tour.len())
            .map(|i| self.at(tour[i], tour[(i + 1) % tour.len()]))
            .sum()
    }
}

fn finite_sum(task: &HppTask) -> f64 {
    let dim = task.dim();
    let mut s = 0.0;
    for i in 0..dim {
        for j in 0..dim {
            if i != j {
                s += task.cost(i, j);
            }
        }
    }
    s
}

/// Directed reduction on `k + 2` cities: the arc end -> start is free, every
/// other arc leaving the end anchor and the arc start -> end are forbidden,
/// so an optimal round trip is `start, path..., end` closed by the free arc.
pub fn hpp_to_tsp_matrix(task: &HppTask) -> TspMatrix {
    let dim = task.dim();
    let end = dim - 1;
    let omega = finite_sum(task) + 1.0;
    let mut cost = task.submatrix.clone();
    for j in 0..dim {
        if j != end {
            cost[end * dim + j] = omega;
        }
    }
    cost[end * dim] = 0.0;
    cost[end] = omega;
    TspMatrix {
        dim,
        cost,
        forbidden: omega,
        symmetric: false,
    }
}

/// Symmetric reduction on `k + 3` cities: a dummy city joined to both
/// anchors at zero cost and to every free node at the forbidden cost.
pub fn hpp_to_symmetric_tsp_matrix(task: &HppTask) -> TspMatrix {
    let inner = task.dim();
    let dim = inner + 1;
    let dummy = inner;
    let end = inner - 1;
    let omega = finite_sum(task) + 1.0;
    let mut cost = vec![0.0; dim * dim];
    for i in 0..inner {
        for j in 0..inner {
            cost[i * dim + j] = task.cost(i, j);
        }
    }
    for j in 1..end {
        cost[dummy * dim + j] = omega;
        cost[j * dim + dummy] = omega;
    }
    cost[end] = omega;
    cost[end * dim] = omega;
    TspMatrix {
        dim,
        cost,
        forbidden: omega,
        symmetric: true,
    }
}

/// Recovers the path order (indices into `task.nodes`) from a round trip
/// over either reduction. `None` if the tour is not a valid permutation or
/// uses a forbidden connection.
pub fn tsp_tour_to_order(matrix: &TspMatrix, tour: &[usize]) -> Option<Vec<usize>> {
    let dim = matrix.dim;
    if tour.len() != dim {
        return None;
    }
    let mut seen = vec![false; dim];
    for &c in tour {
        if c >= dim || seen[c] {
            return None;
        }
        seen[c] = true;
    }
    let pos_start = tour.iter().position(|&c| c == 0)?;
    let rotated: Vec<usize> = (0..dim).map(|i| tour[(pos_start + i) % dim]).collect();
    let (end, walk) = if matrix.symmetric {
        let dummy = dim - 1;
        let end = dim - 2;
        // travel away from the dummy
        let walk: Vec<usize> = if rotated[dim - 1] == dummy {
            rotated[..dim - 1].to_vec()
        } else if rotated[1] == dummy {
            std::iter::once(0)
                .chain(rotated[2..].iter().rev().copied())
                .collect()
        } else {
            return None;
        };
        (end, walk)
    } else {
        (dim - 1, rotated)
    };
    if *walk.last()? != end {
        return None;
    }
    Some(walk[1..walk.len() - 1].iter().map(|&c| c - 1).collect())
}

/// Configuration of an external round-trip solver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalSolver {
    pub executable: PathBuf,
    #[serde(default)]
    pub args: Vec<String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_concurrency")]
    pub max_concurrent: usize,
    /// Result file numbers cities from 1.
    #[serde(default)]
    pub one_based: bool,
}

fn default_timeout_ms() -> u64 {
    10_000
}

fn default_concurrency() -> usize {
    1
}

impl ExternalSolver {
    pub fn new(executable: impl Into<PathBuf>) -> Self {
        Self {
            executable: executable.into(),
            args: Vec::new(),
            timeout_ms: default_timeout_ms(),
            max_concurrent: default_concurrency(),
            one_based: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Backend {
    #[default]
    Internal,
    External(ExternalSolver),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LsParams {
    #[serde(default)]
    pub backend: Backend,
    /// Cap on applied improving moves per path; defaults to `2 k^2`.
    #[serde(default)]
    pub max_moves: Option<usize>,
}

impl LsParams {
    pub fn budget_for(&self, k: usize) -> usize {
        self.max_moves.unwrap_or(2 * k * k).max(1)
    }
}

/// Improves `initial_order` (a permutation of `0..k`); the result never
/// costs more than the input.
pub fn improve_path(task: &HppTask, initial_order: &[usize], budget: usize, backend: &Backend) -> Vec<usize> {
    let improved = match backend {
        Backend::Internal => internal_improve(task, initial_order, budget),
        Backend::External(solver) => match external_improve(task, solver) {
            Ok(order) => {
                // polish the solver's answer with the internal moves
                internal_improve(task, &order, budget)
            }
            Err(err) => {
                log::warn!("external solver failed ({err}); falling back to internal moves");
                internal_improve(task, initial_order, budget)
            }
        },
    };
    if task.path_cost(&improved) <= task.path_cost(initial_order) {
        improved
    } else {
        initial_order.to_vec()
    }
}

/// First-improvement 2-opt and Or-opt on the open path until no move
/// improves or `budget` moves have been applied.
fn internal_improve(task: &HppTask, initial_order: &[usize], budget: usize) -> Vec<usize> {
    let k = initial_order.len();
    if k < 2 {
        return initial_order.to_vec();
    }
    let end = k + 1;
    let mut seq: Vec<usize> = Vec::with_capacity(k + 2);
    seq.push(0);
    seq.extend(initial_order.iter().map(|&o| o + 1));
    seq.push(end);
    let mut moves = 0;
    while moves < budget {
        if two_opt_step(task, &mut seq) || or_opt_step(task, &mut seq) {
            moves += 1;
        } else {
            break;
        }
    }
    seq[1..seq.len() - 1].iter().map(|&c| c - 1).collect()
}

fn two_opt_step(task: &HppTask, seq: &mut [usize]) -> bool {
    let n = seq.len();
    for i in 0..n - 3 {
        let (a, b) = (seq[i], seq[i + 1]);
        for j in (i + 2)..n - 1 {
            let (c, d) = (seq[j], seq[j + 1]);
            let delta = task.cost(a, c) + task.cost(b, d) - task.cost(a, b) - task.cost(c, d);
            if delta < -EPS {
                seq[i + 1..=j].reverse();
                return true;
            }
        }
    }
    false
}

fn or_opt_step(task: &HppTask, seq: &mut Vec<usize>) -> bool {
    let n = seq.len();
    for len in 1..=3 {
        // segment seq[i..i+len] of interior nodes
        for i in 1..n.saturating_sub(len) {
            if i + len > n - 1 {
                break;
            }
            let prev = seq[i - 1];
            let next = seq[i + len];
            let first = seq[i];
            let last = seq[i + len - 1];
            let removal = task.cost(prev, first) + task.cost(last, next) - task.cost(prev, next);
            // insertion edge (seq[p], seq[p + 1]) outside the segment
            for p in 0..n - 1 {
                if p + 1 >= i && p < i + len {
                    continue;
                }
                let (u, w) = (seq[p], seq[p + 1]);
                let base = task.cost(u, w);
                let forward = task.cost(u, first) + task.cost(last, w) - base;
                let backward = task.cost(u, last) + task.cost(first, w) - base;
                let (gain, reversed) = if backward < forward {
                    (removal - backward, true)
                } else {
                    (removal - forward, false)
                };
                if gain > EPS {
                    let mut segment: Vec<usize> = seq.drain(i..i + len).collect();
                    if reversed {
                        segment.reverse();
                    }
                    let insert_at = if p < i { p + 1 } else { p + 1 - len };
                    seq.splice(insert_at..insert_at, segment);
                    return true;
                }
            }
        }
    }
    false
}

static SLOTS: (Mutex<usize>, Condvar) = (Mutex::new(0), Condvar::new());
static SEQ: AtomicU64 = AtomicU64::new(0);

struct SlotGuard;

impl SlotGuard {
    fn acquire(limit: usize) -> Self {
        let (lock, cvar) = &SLOTS;
        let mut in_use = lock.lock().unwrap_or_else(|e| e.into_inner());
        while *in_use >= limit.max(1) {
            in_use = cvar.wait(in_use).unwrap_or_else(|e| e.into_inner());
        }
        *in_use += 1;
        SlotGuard
    }
}

impl Drop for SlotGuard {
    fn drop(&mut self) {
        let (lock, cvar) = &SLOTS;
        let mut in_use = lock.lock().unwrap_or_else(|e| e.into_inner());
        *in_use -= 1;
        cvar.notify_one();
    }
}

/// Writes the exchange matrix: the dimension on the first line, then one
/// row per city of costs scaled by 1000 and rounded.
pub fn write_exchange_matrix(matrix: &TspMatrix) -> String {
    let scaled: Vec<i64> = matrix
        .cost
        .iter()
        .map(|&c| if c == matrix.forbidden { -1 } else { (c * 1000.0).round() as i64 })
        .collect();
    let omega: i64 = scaled.iter().filter(|&&c| c > 0).sum::<i64>() + 1;
    let mut out = format!("{}\n", matrix.dim);
    for i in 0..matrix.dim {
        let row: Vec<String> = (0..matrix.dim)
            .map(|j| {
                let c = scaled[i * matrix.dim + j];
                if c < 0 { omega } else { c }.to_string()
            })
            .collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

/// First non-empty line of a result file as city indices.
pub fn parse_exchange_tour(text: &str, one_based: bool) -> Result<Vec<usize>, String> {
    let line = text
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .ok_or("empty result file")?;
    line.split_whitespace()
        .map(|tok| {
            let v: usize = tok.parse().map_err(|_| format!("bad city index '{tok}'"))?;
            if one_based {
                v.checked_sub(1).ok_or_else(|| "city index 0 in 1-based tour".to_string())
            } else {
                Ok(v)
            }
        })
        .collect()
}

fn external_improve(task: &HppTask, solver: &ExternalSolver) -> Result<Vec<usize>, String> {
    let matrix = hpp_to_symmetric_tsp_matrix(task);
    let _slot = SlotGuard::acquire(solver.max_concurrent);
    let stem = format!(
        "demoa-hpp-{}-{}",
        std::process::id(),
        SEQ.fetch_add(1, Ordering::Relaxed)
    );
    let dir = std::env::temp_dir();
    let matrix_path = dir.join(format!("{stem}.mat"));
    let tour_path = dir.join(format!("{stem}.tour"));
    let result = (|| {
        let mut f = fs::File::create(&matrix_path).map_err(|e| e.to_string())?;
        f.write_all(write_exchange_matrix(&matrix).as_bytes())
            .map_err(|e| e.to_string())?;
        drop(f);
        let mut child = Command::new(&solver.executable)
            .args(&solver.args)
            .arg(&matrix_path)
            .arg(&tour_path)
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| format!("cannot start {}: {e}", solver.executable.display()))?;
        let deadline = Instant::now() + Duration::from_millis(solver.timeout_ms);
        loop {
            match child.try_wait().map_err(|e| e.to_string())? {
                Some(status) if status.success() => break,
                Some(status) => return Err(format!("solver exited with {status}")),
                None if Instant::now() >= deadline => {
                    let _ = child.kill();
                    let _ = child.wait();
                    return Err("solver timed out".into());
                }
                None => std::thread::sleep(Duration::from_millis(5)),
            }
        }
        let text = fs::read_to_string(&tour_path).map_err(|e| e.to_string())?;
        let tour = parse_exchange_tour(&text, solver.one_based)?;
        tsp_tour_to_order(&matrix, &tour).ok_or_else(|| "solver tour is not a valid path".into())
    })();
    let _ = fs::remove_file(&matrix_path);
    let _ = fs::remove_file(&tour_path);
    result
}

/// Re-orders each vehicle's free active customers; vehicles, activation and
/// realized prefixes stay as they are. The returned individual is evaluated.
pub fn local_search(ind: &Individual, ctx: &EraContext, inst: &Instance, params: &LsParams) -> Individual {
    let mut out = ind.clone();
    let plan = decode(ind, ctx.n_vehicles);
    let pos = ind.positions();
    for (v, tour) in plan.tours.iter().enumerate() {
        let fixed_len = ctx.prefix.prefixes[v].len();
        let free = &tour[fixed_len..];
        if free.len() < 2 {
            continue;
        }
        let start = ctx.prefix.last_node[v];
        let task = HppTask::new(inst, start, inst.end_depot(), free.to_vec());
        let initial: Vec<usize> = (0..free.len()).collect();
        let order = improve_path(&task, &initial, params.budget_for(free.len()), &params.backend);
        if order == initial {
            continue;
        }
        let candidate = task.order_to_nodes(&order);
        let elapsed = ctx.prefix.elapsed[v];
        let before = tour_length(free, inst, start, elapsed, ctx.honor_release);
        let after = tour_length(&candidate, inst, start, elapsed, ctx.honor_release);
        if after > before {
            continue;
        }
        let mut slots: Vec<usize> = free.iter().map(|&c| pos[c]).collect();
        slots.sort_unstable();
        for (slot, c) in slots.into_iter().zip(candidate) {
            out.perm[slot] = c;
        }
    }
    out.invalidate();
    ctx.evaluate(&mut out, inst);
    out
}
