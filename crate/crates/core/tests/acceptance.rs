//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Run with `cargo test -p demoa-core --test acceptance`.

use std::collections::BTreeMap;
use std::time::Instant;

use demoa_core::evolution::{initialize, mutate, nds_sort, select_indices, EraContext, EvoParams, Population};
use demoa_core::experiment::{read_log, run_experiment, CellKind, CellManifest, ExperimentSpec, InstanceSource};
use demoa_core::fixtures::{grid_example, grid_example_individual, GRID_EXAMPLE_T};
use demoa_core::genotype::{decode, extract_prefix, tour_length, TourPlan};
use demoa_core::instance::{generate_instance, Customer, CustomerKind, GeneratorConfig, Instance, Topology};
use demoa_core::localsearch::{hpp_to_symmetric_tsp_matrix, hpp_to_tsp_matrix, local_search, HppTask, LsParams};
use demoa_core::metrics::{hypervolume_2d, non_dominated, read_csv, rank_sum_test, HvRow, Point};
use demoa_core::orchestrator::{era_length, run_clairvoyant, run_demoa, AutoDecision, DmPolicy, RunConfig};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn encoding_golden() -> Outcome {
    let inst = grid_example();
    let ind = grid_example_individual();
    let plan = decode(&ind, 2);
    check(plan.to_ids() == vec![vec![1, 5, 3], vec![6]], || {
        format!("decoded {:?}", plan.to_ids())
    })?;
    let prefix = extract_prefix(&plan, &inst, GRID_EXAMPLE_T, false);
    check(
        prefix.prefixes == vec![vec![0, 4], vec![5]],
        || format!("prefixes {:?}", prefix.prefixes),
    )?;
    let ctx = EraContext::new(&inst, prefix, GRID_EXAMPLE_T, GRID_EXAMPLE_T, false);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100 {
        let repaired = initialize(1, &ctx, std::slice::from_ref(&ind), &inst, &mut rng).remove(0);
        ctx.check_feasible(&repaired, &inst).map_err(|v| v.to_string())?;
        let tours = decode(&repaired, 2).to_ids();
        check(tours[0].starts_with(&[1, 5]) && tours[1].starts_with(&[6]), || {
            format!("repaired tours {tours:?}")
        })?;
    }
    Ok("T1=(1,5,3) T2=(6); 100 repairs embed (1,5) and (6)".into())
}

/// An era context reached by running a few random eras on a random
/// instance, plus a population valid for it.
fn random_context(rng: &mut ChaCha8Rng) -> (Instance, EraContext, Population) {
    let n = rng.random_range(4..=24);
    let topology = if rng.random_bool(0.5) {
        Topology::Uniform
    } else {
        Topology::Clustered(rng.random_range(1..=3.min(n)))
    };
    let ratio = *[0.0, 0.25, 0.5, 0.75, 1.0].choose(rng).unwrap();
    let inst = generate_instance(&GeneratorConfig::new(n, topology, ratio, rng.random())).unwrap();
    let n_v = rng.random_range(1..=3);
    let delta = era_length(&inst, 7).unwrap_or(150.0).max(1.0) * rng.random_range(0.5..3.0);
    let honor = rng.random_bool(0.3);
    let mu = 4;
    let eras = rng.random_range(1..=7);
    let mut plan = TourPlan::empty(n_v);
    let mut pop: Population = Vec::new();
    let mut ctx = EraContext::first_era(&inst, n_v, honor);
    for era in 0..eras {
        let t = era as f64 * delta;
        let prefix = extract_prefix(&plan, &inst, t, honor);
        ctx = EraContext::new(&inst, prefix, t, delta, honor);
        pop = initialize(mu, &ctx, &pop, &inst, rng);
        for x in pop.iter_mut() {
            *x = mutate(x, &ctx, 0.6, rng.random_range(0..12), rng);
        }
        plan = decode(pop.choose(rng).unwrap(), n_v);
    }
    // the deciding step of the last era moves everyone forward once more
    let t = eras as f64 * delta;
    let prefix = extract_prefix(&plan, &inst, t, honor);
    let next = EraContext::new(&inst, prefix, t, delta, honor);
    if rng.random_bool(0.5) {
        (inst, next, pop)
    } else {
        let pop = pop.iter().map(|x| mutate(x, &ctx, 0.6, 10, rng)).collect();
        (inst, ctx, pop)
    }
}

fn feasibility_closure() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut triples = 0;
    let mut violations = Vec::new();
    while triples < 10_000 {
        let (inst, ctx, template) = random_context(&mut rng);
        // the template may belong to the previous era; initialize repairs it
        let mut current = initialize(template.len(), &ctx, &template, &inst, &mut rng);
        for x in &current {
            triples += 1;
            if let Err(v) = ctx.check_feasible(x, &inst) {
                violations.push(format!("initialize: {v}"));
            }
        }
        for _ in 0..2 {
            let parent = current.choose(&mut rng).unwrap().clone();
            let child = mutate(&parent, &ctx, rng.random(), rng.random_range(0..15), &mut rng);
            triples += 1;
            if let Err(v) = ctx.check_feasible(&child, &inst) {
                violations.push(format!("mutate: {v}"));
            }
            current.push(child);
        }
    }
    check(violations.is_empty(), || {
        format!("{} violations, first: {}", violations.len(), violations[0])
    })?;
    Ok(format!("{triples} triples, 0 violations"))
}

fn mutation_expectation() -> Outcome {
    let inst = generate_instance(&GeneratorConfig::new(40, Topology::Uniform, 0.5, 77)).unwrap();
    let t = inst.max_request_time().unwrap();
    let ctx = EraContext::new(&inst, demoa_core::RealizedPrefix::empty(&inst, 3), t, t, false);
    check(
        ctx.available_dynamic.len() >= 10 && ctx.available_all.len() >= 10,
        || "sets too small".into(),
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let parent = initialize(1, &ctx, &[], &inst, &mut rng).remove(0);
    let calls = 50_000;
    let (mut flips, mut moves) = (0usize, 0usize);
    for _ in 0..calls {
        let child = mutate(&parent, &ctx, 0.0, 0, &mut rng);
        flips += (0..inst.n_customers()).filter(|&c| child.active[c] != parent.active[c]).count();
        moves += (0..inst.n_customers()).filter(|&c| child.vehicle[c] != parent.vehicle[c]).count();
    }
    let (mf, mv) = (flips as f64 / calls as f64, moves as f64 / calls as f64);
    check((0.9..=1.1).contains(&mf) && (0.9..=1.1).contains(&mv), || {
        format!("mean flips {mf:.4}, mean reassignments {mv:.4}")
    })?;
    Ok(format!(
        "|D_av|={} |C_av|={}: mean flips {mf:.4}, mean reassignments {mv:.4}",
        ctx.available_dynamic.len(),
        ctx.available_all.len()
    ))
}

fn dominates(a: Point, b: Point) -> bool {
    a.0 <= b.0 && a.1 <= b.1 && (a.0 < b.0 || a.1 < b.1)
}

/// Rank by repeated peeling of the non-dominated set.
fn brute_ranks(points: &[Point]) -> Vec<usize> {
    let mut rank = vec![0; points.len()];
    let mut left: Vec<usize> = (0..points.len()).collect();
    let mut r = 0;
    while !left.is_empty() {
        let front: Vec<usize> = left
            .iter()
            .copied()
            .filter(|&i| !left.iter().any(|&j| dominates(points[j], points[i])))
            .collect();
        for &i in &front {
            rank[i] = r;
        }
        left.retain(|i| !front.contains(i));
        r += 1;
    }
    rank
}

fn nsga_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    for trial in 0..1000 {
        let n = rng.random_range(1..=200);
        let grid = rng.random_range(3..50) as f64;
        let points: Vec<Point> = (0..n)
            .map(|_| {
                (
                    (rng.random::<f64>() * grid).floor(),
                    (rng.random::<f64>() * grid).floor(),
                )
            })
            .collect();
        let expected = brute_ranks(&points);
        let mut got = vec![usize::MAX; n];
        for (r, front) in nds_sort(&points).iter().enumerate() {
            for &i in front {
                got[i] = r;
            }
        }
        check(got == expected, || format!("trial {trial}: ranks differ"))?;
        let mu = rng.random_range(1..=n);
        let survivors = select_indices(&points, mu);
        check(survivors.len() == mu, || format!("trial {trial}: {} survivors", survivors.len()))?;
        for &s in &survivors {
            for j in 0..n {
                if dominates(points[j], points[s]) {
                    check(survivors.contains(&j), || {
                        format!("trial {trial}: dominator {j} of survivor {s} dropped")
                    })?;
                }
            }
        }
    }
    Ok("1000 sets: ranks match brute force, no dominator of a survivor dropped".into())
}

fn next_permutation(v: &mut [usize]) -> bool {
    if v.len() < 2 {
        return false;
    }
    let mut i = v.len() - 1;
    while i > 0 && v[i - 1] >= v[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = v.len() - 1;
    while v[j] <= v[i - 1] {
        j -= 1;
    }
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}

fn exhaustive_tsp(matrix: &demoa_core::localsearch::TspMatrix) -> f64 {
    let mut rest: Vec<usize> = (1..matrix.dim).collect();
    let mut best = f64::INFINITY;
    loop {
        let mut tour = Vec::with_capacity(matrix.dim);
        tour.push(0);
        tour.extend_from_slice(&rest);
        best = best.min(matrix.tour_cost(&tour));
        if !next_permutation(&mut rest) {
            return best;
        }
    }
}

fn exhaustive_hpp(task: &HppTask) -> f64 {
    let mut order: Vec<usize> = (0..task.n_free()).collect();
    let mut best = f64::INFINITY;
    loop {
        best = best.min(task.path_cost(&order));
        if !next_permutation(&mut order) {
            return best;
        }
    }
}

fn random_points_instance(rng: &mut ChaCha8Rng, k: usize) -> Instance {
    let mut customers: Vec<Customer> = (0..k + 1)
        .map(|_| Customer::new(rng.random_range(0.0..100.0), rng.random_range(0.0..100.0), CustomerKind::Mandatory, 0.0))
        .collect();
    customers.push(Customer::new(rng.random_range(0.0..100.0), rng.random_range(0.0..100.0), CustomerKind::StartDepot, 0.0));
    customers.push(Customer::new(rng.random_range(0.0..100.0), rng.random_range(0.0..100.0), CustomerKind::EndDepot, 0.0));
    Instance::new("hpp", customers).unwrap()
}

fn hpp_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for trial in 0..500 {
        let k = rng.random_range(1..=7);
        let inst = random_points_instance(&mut rng, k);
        // start from a customer half the time, as later eras do
        let start = if rng.random_bool(0.5) { inst.start_depot() } else { k };
        let task = HppTask::new(&inst, start, inst.end_depot(), (0..k).collect());
        let hpp = exhaustive_hpp(&task);
        for (name, matrix) in [
            ("directed", hpp_to_tsp_matrix(&task)),
            ("symmetric", hpp_to_symmetric_tsp_matrix(&task)),
        ] {
            if name == "symmetric" && k > 6 && trial % 4 != 0 {
                continue;
            }
            let tsp = exhaustive_tsp(&matrix);
            let rel = (tsp - hpp).abs() / hpp.abs().max(1e-12);
            worst = worst.max(rel);
            check(rel <= 1e-9, || format!("trial {trial} {name}: tsp {tsp} vs hpp {hpp}"))?;
        }
    }
    Ok(format!("500 tasks (k<=7), worst relative gap {worst:.2e}"))
}

fn ls_contract() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let params = LsParams::default();
    let mut improved = 0;
    for trial in 0..1000 {
        let (inst, ctx, pop) = random_context(&mut rng);
        let mut x = initialize(pop.len(), &ctx, &pop, &inst, &mut rng).remove(0);
        ctx.evaluate(&mut x, &inst);
        let y = local_search(&x, &ctx, &inst, &params);
        let (a, b) = (x.fitness(), y.fitness());
        check(b.f1 <= a.f1, || format!("trial {trial}: f1 {} -> {}", a.f1, b.f1))?;
        check(b.f2 == a.f2 && y.active == x.active && y.vehicle == x.vehicle, || {
            format!("trial {trial}: f2/active/vehicle changed")
        })?;
        let plan = decode(&y, ctx.n_vehicles);
        for (v, pre) in ctx.prefix.prefixes.iter().enumerate() {
            check(plan.tours[v].starts_with(pre), || format!("trial {trial}: prefix of vehicle {v} changed"))?;
        }
        if b.f1 < a.f1 {
            improved += 1;
        }
    }
    Ok(format!("1000 individuals, contract holds, {improved} strictly improved"))
}

fn hv_oracle() -> Outcome {
    let worked = hypervolume_2d(&[(0.0, 2.0), (2.0, 1.0), (3.0, 0.0)], (4.0, 3.0));
    check(worked == 7.0, || format!("worked example gave {worked}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let samples = 100_000;
    let mut worst_z: f64 = 0.0;
    for trial in 0..100 {
        let n = rng.random_range(1..=15);
        let reference = (rng.random_range(5.0..20.0), rng.random_range(5.0..20.0));
        let front: Vec<Point> = (0..n)
            .map(|_| (rng.random_range(0.0..reference.0), rng.random_range(0.0..reference.1)))
            .collect();
        let exact = hypervolume_2d(&front, reference);
        let hits = (0..samples)
            .filter(|_| {
                let z = (rng.random_range(0.0..reference.0), rng.random_range(0.0..reference.1));
                front.iter().any(|p| p.0 <= z.0 && p.1 <= z.1)
            })
            .count();
        let area = reference.0 * reference.1;
        let q = hits as f64 / samples as f64;
        let sigma = area * (q * (1.0 - q) / samples as f64).sqrt();
        let z = (exact - q * area).abs() / sigma.max(1e-12);
        worst_z = worst_z.max(z);
        check(z <= 3.0, || format!("trial {trial}: exact {exact}, estimate {}, z {z:.2}", q * area))?;
    }
    Ok(format!("worked example 7.0; 100 fronts within 3 sigma (max {worst_z:.2})"))
}

/// Best f1 for each number of skipped dynamic customers, by enumerating
/// every active subset, assignment and order.
fn exhaustive_front(inst: &Instance, n_v: usize) -> Vec<Point> {
    let dynamic: Vec<usize> = inst.dynamic_customers().collect();
    let mandatory: Vec<usize> = inst.mandatory_customers().collect();
    let mut best: BTreeMap<usize, f64> = BTreeMap::new();
    for mask in 0u32..(1 << dynamic.len()) {
        let mut active = mandatory.clone();
        active.extend(dynamic.iter().enumerate().filter(|(i, _)| mask >> i & 1 == 1).map(|(_, &c)| c));
        active.sort_unstable();
        let f2 = dynamic.len() - mask.count_ones() as usize;
        let mut order = active.clone();
        let mut min_f1 = f64::INFINITY;
        loop {
            // cut the order into n_v consecutive tours
            let mut cuts = vec![0usize; n_v - 1];
            loop {
                let mut bounds = vec![0];
                bounds.extend_from_slice(&cuts);
                bounds.push(order.len());
                if bounds.windows(2).all(|w| w[0] <= w[1]) {
                    let f1 = bounds
                        .windows(2)
                        .map(|w| tour_length(&order[w[0]..w[1]], inst, inst.start_depot(), 0.0, true))
                        .fold(0.0, f64::max);
                    min_f1 = min_f1.min(f1);
                }
                let mut i = 0;
                while i < cuts.len() {
                    cuts[i] += 1;
                    if cuts[i] <= order.len() {
                        break;
                    }
                    cuts[i] = 0;
                    i += 1;
                }
                if i == cuts.len() {
                    break;
                }
            }
            if !next_permutation(&mut order) {
                break;
            }
        }
        let e = best.entry(f2).or_insert(f64::INFINITY);
        *e = e.min(min_f1);
    }
    non_dominated(&best.into_iter().map(|(f2, f1)| (f1, f2 as f64)).collect::<Vec<_>>())
}

fn tiny_convergence() -> Outcome {
    let mut hits = 0;
    let mut ratios = Vec::new();
    for i in 0..20u64 {
        let inst = generate_instance(&GeneratorConfig::new(6, Topology::Uniform, 0.5, 500 + i)).unwrap();
        let n_v = 1 + (i as usize % 2);
        let oracle = exhaustive_front(&inst, n_v);
        let evo = EvoParams {
            mu: 20,
            evals_per_era: 20_000,
            ..EvoParams::default()
        };
        let cfg = RunConfig::new(n_v, DmPolicy::AutoD { d: 0.5 }, evo, 1000 + i);
        let front = run_clairvoyant(&inst, &cfg, 20_000).map_err(|e| e.to_string())?;
        let found = front.as_points();
        let max_f1 = oracle.iter().chain(&found).map(|p| p.0).fold(0.0, f64::max);
        let reference = (max_f1 + 1.0, inst.n_dynamic() as f64 + 1.0);
        let ratio = hypervolume_2d(&found, reference) / hypervolume_2d(&oracle, reference);
        if ratio >= 0.9 {
            hits += 1;
        }
        ratios.push(ratio);
    }
    let min = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    check(hits >= 18, || format!("{hits}/20 instances reach 90% (min ratio {min:.3})"))?;
    Ok(format!("{hits}/20 instances reach 90% of the oracle HV (min ratio {min:.3})"))
}

struct DeskRuns {
    dir: tempfile::TempDir,
    spec: ExperimentSpec,
}

fn desk_spec(dir: &std::path::Path) -> ExperimentSpec {
    ExperimentSpec {
        instances: vec![
            InstanceSource::Generate(GeneratorConfig::new(30, Topology::Uniform, 0.5, 101)),
            InstanceSource::Generate(GeneratorConfig::new(30, Topology::Clustered(2), 0.5, 102)),
            InstanceSource::Generate(GeneratorConfig::new(30, Topology::Clustered(3), 0.75, 103)),
        ],
        vehicle_counts: vec![1, 2, 3],
        d_values: vec![0.25, 0.5, 0.75],
        replications: 10,
        clairvoyant_budget: 10_000,
        output_dir: dir.join("desk"),
        seed_base: 2024,
        evo: EvoParams {
            mu: 30,
            evals_per_era: 6_000,
            ..EvoParams::default()
        },
        ls: LsParams::default(),
        n_eras: 7,
        delta: None,
        honor_release: false,
        clairvoyant_replications: 1,
        margin: demoa_core::metrics::DEFAULT_MARGIN,
    }
}

fn run_desk() -> Result<DeskRuns, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let spec = desk_spec(dir.path());
    run_experiment(&spec, None).map_err(|e| e.to_string())?;
    Ok(DeskRuns { dir, spec })
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn desk_trend(desk: &DeskRuns) -> Outcome {
    let text = std::fs::read_to_string(desk.spec.output_dir.join("hv_classical.csv")).map_err(|e| e.to_string())?;
    let rows: Vec<HvRow> = read_csv(&text).map_err(|e| e.to_string())?;
    let mut by: BTreeMap<String, BTreeMap<usize, Vec<f64>>> = BTreeMap::new();
    for r in rows {
        by.entry(r.instance).or_default().entry(r.n_vehicles).or_default().push(r.hv);
    }
    let mut notes = Vec::new();
    let mut problems = Vec::new();
    for (inst, per) in &by {
        let (h1, h2, h3) = (mean(&per[&1]), mean(&per[&2]), mean(&per[&3]));
        let p = rank_sum_test(&per[&2], &per[&1]).map_err(|e| e.to_string())?.p_value;
        notes.push(format!("{inst}: HV {h1:.0}/{h2:.0}/{h3:.0} p(2v1)={p:.1e}"));
        if !(p < 0.05 && h2 > h1) {
            problems.push(format!("{inst}: 2 vs 1 not significant (p={p:.3})"));
        }
        if h3 < h2 {
            problems.push(format!("{inst}: mean HV(3) {h3:.1} < HV(2) {h2:.1}"));
        }
        if h3 - h2 >= h2 - h1 {
            problems.push(format!("{inst}: gain 2->3 {:.1} not below 1->2 {:.1}", h3 - h2, h2 - h1));
        }
    }
    check(problems.is_empty(), || problems.join("; "))?;
    Ok(notes.join("; "))
}

fn dm_greediness(desk: &DeskRuns) -> Outcome {
    let text = std::fs::read_to_string(desk.spec.output_dir.join("summary.json")).map_err(|e| e.to_string())?;
    let summary: demoa_core::experiment::Summary = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    let mut per_d: BTreeMap<u64, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for g in &summary.groups {
        let e = per_d.entry(g.d.to_bits()).or_default();
        e.0.push(g.mean_final_f1);
        e.1.push(g.mean_final_f2);
    }
    let mut ds: Vec<(f64, f64, f64)> = per_d
        .iter()
        .map(|(d, (f1, f2))| (f64::from_bits(*d), mean(f1), mean(f2)))
        .collect();
    ds.sort_by(|a, b| a.0.total_cmp(&b.0));
    let line = ds
        .iter()
        .map(|(d, f1, f2)| format!("d={d}: f1 {f1:.1} f2 {f2:.2}"))
        .collect::<Vec<_>>()
        .join(", ");
    let ok = ds.windows(2).all(|w| w[1].2 <= w[0].2 && w[1].1 >= w[0].1);
    check(ok, || format!("not monotone: {line}"))?;
    Ok(line)
}

fn era_monotonicity(desk: &DeskRuns) -> Outcome {
    let out = &desk.spec.output_dir;
    let manifest: CellManifest =
        serde_json::from_str(&std::fs::read_to_string(out.join("cells.json")).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
    let mut logs = 0;
    for cell in manifest.cells.iter().filter(|c| c.kind == CellKind::Demoa) {
        let lines = read_log(&out.join(&cell.output)).map_err(|e| e.to_string())?;
        check(lines.len() == desk.spec.n_eras, || format!("{}: {} eras", cell.output.display(), lines.len()))?;
        for w in lines.windows(2) {
            check(w[1].upper_bound_f2 <= w[0].upper_bound_f2, || {
                format!("{}: upper bound grew at era {}", cell.output.display(), w[1].era)
            })?;
            for (a, b) in w[0].realized.iter().zip(&w[1].realized) {
                check(b.starts_with(a), || format!("{}: realized set shrank at era {}", cell.output.display(), w[1].era))?;
            }
        }
        logs += 1;
    }
    // replay a few cells from their seeds and compare the logs byte for byte
    let instances: Vec<Instance> = manifest
        .instances
        .iter()
        .map(|n| demoa_core::load_instance(out.join("instances").join(format!("{n}.json"))).unwrap())
        .collect();
    let mut replays = 0;
    for cell in manifest.cells.iter().filter(|c| c.kind == CellKind::Demoa).step_by(45) {
        let inst = &instances[manifest.instances.iter().position(|n| *n == cell.instance).unwrap()];
        let d = cell.d.unwrap();
        let cfg = RunConfig {
            n_eras: desk.spec.n_eras,
            delta: desk.spec.delta,
            n_vehicles: cell.n_vehicles,
            dm_policy: DmPolicy::AutoD { d },
            evo: desk.spec.evo.clone(),
            ls: desk.spec.ls.clone(),
            seed: cell.seed,
            honor_release: desk.spec.honor_release,
        };
        let a = run_demoa(inst, &cfg, &mut AutoDecision { d }).map_err(|e| e.to_string())?;
        let b = run_demoa(inst, &cfg, &mut AutoDecision { d }).map_err(|e| e.to_string())?;
        check(a == b, || format!("{}: same-seed records differ", cell.output.display()))?;
        let run_id = format!("{}/nv{}/d{}/r{}", cell.instance, cell.n_vehicles, d, cell.rep);
        let text: String = a
            .iter()
            .map(|r| serde_json::to_string(&r.to_log_line(&run_id)).unwrap() + "\n")
            .collect();
        let logged = std::fs::read_to_string(out.join(&cell.output)).map_err(|e| e.to_string())?;
        check(text == logged, || format!("{}: replay differs from log", cell.output.display()))?;
        replays += 1;
    }
    let _ = &desk.dir;
    Ok(format!("{logs} logged runs monotone; {replays} replays bit-identical"))
}

fn interactive_equivalence() -> Outcome {
    use demoa_core::session::{SessionManager, SessionStatus};
    use std::time::Duration;
    let inst = generate_instance(&GeneratorConfig::new(20, Topology::Uniform, 0.5, 9)).unwrap();
    let m = SessionManager::new();
    let name = m.register_instance(inst.clone());
    let evo = EvoParams {
        mu: 20,
        evals_per_era: 2_000,
        ..EvoParams::default()
    };
    let mut cfg = RunConfig::new(2, DmPolicy::Interactive, evo, 5);
    cfg.n_eras = 3;
    let id = m.create_session(&name, cfg.clone()).map_err(|e| e.to_string())?;
    for _ in 0..cfg.n_eras {
        m.wait_until_settled(&id, Duration::from_secs(120)).map_err(|e| e.to_string())?;
        let view = m.get_state(&id).map_err(|e| e.to_string())?;
        let pick = view.pending.ok_or("no pending decision")?.ghosts[1].index;
        m.decide(&id, None, pick).map_err(|e| e.to_string())?;
    }
    let status = m.wait_until_settled(&id, Duration::from_secs(120)).map_err(|e| e.to_string())?;
    check(status == SessionStatus::Finished, || format!("session ended {status:?}"))?;
    let mut auto_cfg = cfg.clone();
    auto_cfg.dm_policy = DmPolicy::AutoD { d: 0.5 };
    let auto = run_demoa(&inst, &auto_cfg, &mut AutoDecision { d: 0.5 }).map_err(|e| e.to_string())?;
    check(m.history(&id).map_err(|e| e.to_string())? == auto, || "records differ".into())?;
    Ok("3-era scripted session equals AutoD(0.5)".into())
}

fn main() {
    let mut failures = 0;
    let mut report = |name: &str, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let outcome = f();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(msg) => println!("PASS {name} ({secs:.1}s): {msg}"),
            Err(msg) => {
                failures += 1;
                println!("FAIL {name} ({secs:.1}s): {msg}");
            }
        }
    };
    report("encoding-golden", &mut encoding_golden);
    report("feasibility-closure", &mut feasibility_closure);
    report("mutation-expectation", &mut mutation_expectation);
    report("nsga2-oracle", &mut nsga_oracle);
    report("hpp-reduction-oracle", &mut hpp_oracle);
    report("local-search-contract", &mut ls_contract);
    report("hypervolume-oracle", &mut hv_oracle);
    report("tiny-convergence", &mut tiny_convergence);

    let start = Instant::now();
    match run_desk() {
        Ok(desk) => {
            println!("desk-scale matrix finished in {:.1}s", start.elapsed().as_secs_f64());
            report("desk-scale-trend", &mut || desk_trend(&desk));
            report("dm-greediness-trend", &mut || dm_greediness(&desk));
            report("era-monotonicity", &mut || era_monotonicity(&desk));
        }
        Err(e) => {
            for name in ["desk-scale-trend", "dm-greediness-trend", "era-monotonicity"] {
                report(name, &mut || Err(format!("desk matrix failed: {e}")));
            }
        }
    }
    report("interactive-equivalence (secondary)", &mut interactive_equivalence);

    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
