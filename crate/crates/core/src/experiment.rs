//! Batch experiments: the full (instance × vehicles × d × replication)
//! matrix, clairvoyant baselines, and the metric pass over their outputs.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evolution::EvoParams;
use crate::instance::{generate_instance, load_instance, save_instance, GeneratorConfig, Instance, InstanceError};
use crate::localsearch::LsParams;
use crate::metrics::{
    chopped_hv_comparison, f1_measure, rank_sum_test, score_fronts, write_csv, F1Row, FinalFront, HvMode, HvRow,
    MetricsError, Point,
};
use crate::orchestrator::{run_clairvoyant, run_demoa, AutoDecision, DmPolicy, EraLogLine, RunConfig};

/// Name of the cell-seed derivation, written into every summary.
pub const SEED_SCHEME: &str = "splitmix64-chain-v1";
pub const WORKERS_ENV: &str = "DEMOA_WORKERS";

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid experiment spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Instance(#[from] InstanceError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("all {0} cells failed")]
    AllFailed(usize),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InstanceSource {
    Path(PathBuf),
    Generate(GeneratorConfig),
}

fn default_eras() -> usize {
    7
}

fn default_one() -> usize {
    1
}

fn default_margin() -> Point {
    crate::metrics::DEFAULT_MARGIN
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub instances: Vec<InstanceSource>,
    pub vehicle_counts: Vec<usize>,
    pub d_values: Vec<f64>,
    pub replications: usize,
    pub clairvoyant_budget: usize,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed_base: u64,
    #[serde(default)]
    pub evo: EvoParams,
    #[serde(default)]
    pub ls: LsParams,
    #[serde(default = "default_eras")]
    pub n_eras: usize,
    #[serde(default)]
    pub delta: Option<f64>,
    #[serde(default)]
    pub honor_release: bool,
    #[serde(default = "default_one")]
    pub clairvoyant_replications: usize,
    #[serde(default = "default_margin")]
    pub margin: Point,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::Spec(m));
        if self.instances.is_empty() {
            return bad("no instances".into());
        }
        if self.replications < 1 {
            return bad("replications must be at least 1".into());
        }
        if self.clairvoyant_replications < 1 {
            return bad("clairvoyant_replications must be at least 1".into());
        }
        if self.vehicle_counts.is_empty() || self.vehicle_counts.contains(&0) {
            return bad("vehicle_counts must be nonempty and positive".into());
        }
        if self.d_values.is_empty() || self.d_values.iter().any(|d| !(0.0..=1.0).contains(d)) {
            return bad("d_values must be nonempty and lie in [0, 1]".into());
        }
        for src in &self.instances {
            if let InstanceSource::Path(p) = src {
                if !p.exists() {
                    return bad(format!("instance file {} does not exist", p.display()));
                }
            }
        }
        self.evo.validate().map_err(|e| ExperimentError::Spec(e.to_string()))?;
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self, ExperimentError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|source| ExperimentError::Json {
            path: path.to_path_buf(),
            source,
        })
    }

    fn run_config(&self, n_vehicles: usize, d: f64, seed: u64) -> RunConfig {
        RunConfig {
            n_eras: self.n_eras,
            delta: self.delta,
            n_vehicles,
            dm_policy: DmPolicy::AutoD { d },
            evo: self.evo.clone(),
            ls: self.ls.clone(),
            seed,
            honor_release: self.honor_release,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellKind {
    Demoa,
    Clairvoyant,
}

/// Seed of one cell, chained through splitmix64 over its coordinates.
pub fn cell_seed(seed_base: u64, kind: CellKind, instance: usize, n_vehicles: usize, d_index: usize, rep: usize) -> u64 {
    let tag = match kind {
        CellKind::Demoa => 1,
        CellKind::Clairvoyant => 2,
    };
    [tag, instance as u64, n_vehicles as u64, d_index as u64, rep as u64]
        .iter()
        .fold(splitmix64(seed_base), |h, &x| splitmix64(h ^ splitmix64(x)))
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Writes through a sibling temp file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let n = TMP_COUNTER.fetch_add(1, Ordering::Relaxed);
    let file_name = path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{file_name}.{}.{n}.tmp", std::process::id()));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub kind: CellKind,
    pub instance: String,
    pub n_vehicles: usize,
    pub d: Option<f64>,
    pub rep: usize,
    pub seed: u64,
    /// Relative to the output directory.
    pub output: PathBuf,
    #[serde(default)]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellManifest {
    pub seed_scheme: String,
    pub instances: Vec<String>,
    #[serde(default = "default_margin")]
    pub margin: Point,
    pub cells: Vec<Cell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClairvoyantFile {
    pub instance: String,
    pub n_vehicles: usize,
    pub rep: usize,
    pub seed: u64,
    pub evaluations: usize,
    pub front: Vec<Point>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub instance: String,
    pub n_vehicles: usize,
    pub d: f64,
    pub runs: usize,
    pub mean_hv_chopped: f64,
    pub mean_hv_classical: f64,
    pub mean_final_f1: f64,
    pub mean_final_f2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairTest {
    pub instance: String,
    pub d: f64,
    pub n_vehicles_a: usize,
    pub n_vehicles_b: usize,
    pub u: f64,
    pub p_value: f64,
    pub exact: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub seed_scheme: String,
    pub cells_total: usize,
    pub cells_failed: Vec<String>,
    pub groups: Vec<GroupSummary>,
    /// Classical HV compared between every pair of vehicle counts.
    pub rank_sum: Vec<PairTest>,
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect()
}

fn load_sources(spec: &ExperimentSpec) -> Result<Vec<(String, Instance)>, ExperimentError> {
    let mut out: Vec<(String, Instance)> = Vec::new();
    for src in &spec.instances {
        let inst = match src {
            InstanceSource::Path(p) => load_instance(p)?,
            InstanceSource::Generate(cfg) => generate_instance(cfg)?,
        };
        let mut name = sanitize(inst.name());
        if out.iter().any(|(n, _)| *n == name) {
            name = format!("{name}_{}", out.len());
        }
        out.push((name, inst));
    }
    Ok(out)
}

pub fn worker_count() -> Option<usize> {
    std::env::var(WORKERS_ENV).ok()?.parse().ok().filter(|&n| n > 0)
}

/// Runs every cell, then the metric pass. `workers` overrides the
/// environment.
pub fn run_experiment(spec: &ExperimentSpec, workers: Option<usize>) -> Result<Summary, ExperimentError> {
    spec.validate()?;
    let out = &spec.output_dir;
    fs::create_dir_all(out).map_err(io_err(out))?;
    let instances = load_sources(spec)?;
    let inst_dir = out.join("instances");
    fs::create_dir_all(&inst_dir).map_err(io_err(&inst_dir))?;
    for (name, inst) in &instances {
        save_instance(inst, inst_dir.join(format!("{name}.json")))?;
    }

    let mut cells = Vec::new();
    for (i, (name, _)) in instances.iter().enumerate() {
        for &n_v in &spec.vehicle_counts {
            for (di, &d) in spec.d_values.iter().enumerate() {
                for rep in 0..spec.replications {
                    cells.push(Cell {
                        kind: CellKind::Demoa,
                        instance: name.clone(),
                        n_vehicles: n_v,
                        d: Some(d),
                        rep,
                        seed: cell_seed(spec.seed_base, CellKind::Demoa, i, n_v, di, rep),
                        output: PathBuf::from(format!("logs/{name}/nv{n_v}_d{d}_r{rep}.jsonl")),
                        error: None,
                    });
                }
            }
            for rep in 0..spec.clairvoyant_replications {
                cells.push(Cell {
                    kind: CellKind::Clairvoyant,
                    instance: name.clone(),
                    n_vehicles: n_v,
                    d: None,
                    rep,
                    seed: cell_seed(spec.seed_base, CellKind::Clairvoyant, i, n_v, 0, rep),
                    output: PathBuf::from(format!("clairvoyant/{name}_nv{n_v}_r{rep}.json")),
                    error: None,
                });
            }
        }
    }

    let lookup: BTreeMap<&str, &Instance> = instances.iter().map(|(n, i)| (n.as_str(), i)).collect();
    let run_cell = |cell: &Cell| -> Result<(), String> {
        let inst = lookup[cell.instance.as_str()];
        let path = out.join(&cell.output);
        match cell.kind {
            CellKind::Demoa => {
                let d = cell.d.expect("demoa cell has d");
                let cfg = spec.run_config(cell.n_vehicles, d, cell.seed);
                let records = run_demoa(inst, &cfg, &mut AutoDecision { d }).map_err(|e| e.to_string())?;
                let run_id = format!("{}/nv{}/d{}/r{}", cell.instance, cell.n_vehicles, d, cell.rep);
                let mut text = String::new();
                for r in &records {
                    text.push_str(&serde_json::to_string(&r.to_log_line(&run_id)).map_err(|e| e.to_string())?);
                    text.push('\n');
                }
                write_atomic(&path, text.as_bytes()).map_err(|e| e.to_string())
            }
            CellKind::Clairvoyant => {
                let cfg = spec.run_config(cell.n_vehicles, 0.5, cell.seed);
                let front = run_clairvoyant(inst, &cfg, spec.clairvoyant_budget).map_err(|e| e.to_string())?;
                let file = ClairvoyantFile {
                    instance: cell.instance.clone(),
                    n_vehicles: cell.n_vehicles,
                    rep: cell.rep,
                    seed: cell.seed,
                    evaluations: front.evaluations,
                    front: front.as_points(),
                };
                let text = serde_json::to_string_pretty(&file).map_err(|e| e.to_string())?;
                write_atomic(&path, text.as_bytes()).map_err(|e| e.to_string())
            }
        }
    };

    let execute = || -> Vec<Option<String>> { cells.par_iter().map(|c| run_cell(c).err()).collect() };
    let errors = match workers.or_else(worker_count) {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| ExperimentError::Spec(format!("worker pool: {e}")))?
            .install(execute),
        None => execute(),
    };
    for (cell, err) in cells.iter_mut().zip(errors) {
        if let Some(e) = &err {
            log::error!("cell {} failed: {e}", cell.output.display());
        }
        cell.error = err;
    }
    let failed = cells.iter().filter(|c| c.error.is_some()).count();
    let manifest = CellManifest {
        seed_scheme: SEED_SCHEME.into(),
        instances: instances.iter().map(|(n, _)| n.clone()).collect(),
        margin: spec.margin,
        cells,
    };
    let path = out.join("cells.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest json");
    write_atomic(&path, text.as_bytes()).map_err(io_err(&path))?;
    if failed == manifest.cells.len() {
        return Err(ExperimentError::AllFailed(failed));
    }
    compute_metrics(out)
}

pub fn read_log(path: &Path) -> Result<Vec<EraLogLine>, ExperimentError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l).map_err(|source| ExperimentError::Json {
                path: path.to_path_buf(),
                source,
            })
        })
        .collect()
}

struct DemoaRun {
    instance: String,
    n_vehicles: usize,
    d: f64,
    rep: usize,
    front: FinalFront,
    chosen: Point,
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        f64::NAN
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Recomputes hv.csv, hv_classical.csv, f1_measure.csv, summary.csv and
/// summary.json from the cell outputs under `dir`.
pub fn compute_metrics(dir: &Path) -> Result<Summary, ExperimentError> {
    let manifest_path = dir.join("cells.json");
    let text = fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?;
    let manifest: CellManifest = serde_json::from_str(&text).map_err(|source| ExperimentError::Json {
        path: manifest_path.clone(),
        source,
    })?;

    let mut runs: Vec<DemoaRun> = Vec::new();
    let mut clair: BTreeMap<(String, usize), Vec<Vec<Point>>> = BTreeMap::new();
    for cell in manifest.cells.iter().filter(|c| c.error.is_none()) {
        let path = dir.join(&cell.output);
        match cell.kind {
            CellKind::Demoa => {
                let log = read_log(&path)?;
                let Some(last) = log.last() else { continue };
                runs.push(DemoaRun {
                    instance: cell.instance.clone(),
                    n_vehicles: cell.n_vehicles,
                    d: cell.d.unwrap_or(f64::NAN),
                    rep: cell.rep,
                    front: FinalFront {
                        points: last.front_total(),
                        upper_bound_f2: last.upper_bound_f2,
                    },
                    chosen: last.chosen_total(),
                });
            }
            CellKind::Clairvoyant => {
                let text = fs::read_to_string(&path).map_err(io_err(&path))?;
                let file: ClairvoyantFile = serde_json::from_str(&text).map_err(|source| ExperimentError::Json {
                    path: path.clone(),
                    source,
                })?;
                clair.entry((file.instance, file.n_vehicles)).or_default().push(file.front);
            }
        }
    }

    // group keys in a stable order
    let mut groups: BTreeMap<(String, usize, u64), Vec<usize>> = BTreeMap::new();
    for (i, r) in runs.iter().enumerate() {
        groups
            .entry((r.instance.clone(), r.n_vehicles, r.d.to_bits()))
            .or_default()
            .push(i);
    }

    let mut hv_rows = Vec::new();
    let mut f1_rows = Vec::new();
    let mut chopped_hv = vec![f64::NAN; runs.len()];
    for ((instance, n_v, d_bits), members) in &groups {
        let d = f64::from_bits(*d_bits);
        let Some(emoa) = clair.get(&(instance.clone(), *n_v)) else {
            continue;
        };
        let demoa: Vec<FinalFront> = members.iter().map(|&i| runs[i].front.clone()).collect();
        let cmp = chopped_hv_comparison(&demoa, emoa, manifest.margin, HvMode::Chopped)?;
        for (&i, s) in members.iter().zip(&cmp.demoa) {
            chopped_hv[i] = s.hv;
            hv_rows.push(HvRow {
                instance: instance.clone(),
                algorithm: "demoa".into(),
                n_vehicles: *n_v,
                d: Some(d),
                run: runs[i].rep,
                hv: s.hv,
                indicator_hv: s.indicator,
            });
        }
        for (rep, s) in cmp.emoa.iter().enumerate() {
            hv_rows.push(HvRow {
                instance: instance.clone(),
                algorithm: "emoa".into(),
                n_vehicles: *n_v,
                d: Some(d),
                run: rep,
                hv: s.hv,
                indicator_hv: s.indicator,
            });
        }
        let reference: Vec<Point> = emoa.iter().flatten().copied().collect();
        for &i in members {
            for (f2, delta_f1) in f1_measure(&runs[i].front.points, &reference).entries {
                f1_rows.push(F1Row {
                    instance: instance.clone(),
                    n_vehicles: *n_v,
                    d,
                    run: runs[i].rep,
                    f2,
                    delta_f1,
                });
            }
        }
    }

    // classical HV: one reference per instance over all of its DEMOA runs
    let mut classical_hv = vec![f64::NAN; runs.len()];
    let mut classical_rows = Vec::new();
    let mut by_instance: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in runs.iter().enumerate() {
        by_instance.entry(r.instance.as_str()).or_default().push(i);
    }
    for members in by_instance.values() {
        let fronts: Vec<Vec<Point>> = members.iter().map(|&i| runs[i].front.points.clone()).collect();
        let (_, _, samples) = score_fronts(&fronts, None, manifest.margin);
        for (&i, s) in members.iter().zip(samples) {
            classical_hv[i] = s.hv;
            classical_rows.push(HvRow {
                instance: runs[i].instance.clone(),
                algorithm: "demoa".into(),
                n_vehicles: runs[i].n_vehicles,
                d: Some(runs[i].d),
                run: runs[i].rep,
                hv: s.hv,
                indicator_hv: s.indicator,
            });
        }
    }

    let mut group_summaries = Vec::new();
    for ((instance, n_v, d_bits), members) in &groups {
        let pick = |v: &[f64]| members.iter().map(|&i| v[i]).collect::<Vec<_>>();
        group_summaries.push(GroupSummary {
            instance: instance.clone(),
            n_vehicles: *n_v,
            d: f64::from_bits(*d_bits),
            runs: members.len(),
            mean_hv_chopped: mean(&pick(&chopped_hv)),
            mean_hv_classical: mean(&pick(&classical_hv)),
            mean_final_f1: mean(&members.iter().map(|&i| runs[i].chosen.0).collect::<Vec<_>>()),
            mean_final_f2: mean(&members.iter().map(|&i| runs[i].chosen.1).collect::<Vec<_>>()),
        });
    }

    let mut rank_sum = Vec::new();
    let mut by_instance_d: BTreeMap<(String, u64), BTreeMap<usize, Vec<f64>>> = BTreeMap::new();
    for (i, r) in runs.iter().enumerate() {
        by_instance_d
            .entry((r.instance.clone(), r.d.to_bits()))
            .or_default()
            .entry(r.n_vehicles)
            .or_default()
            .push(classical_hv[i]);
    }
    for ((instance, d_bits), per_nv) in &by_instance_d {
        let keys: Vec<usize> = per_nv.keys().copied().collect();
        for (ai, &a) in keys.iter().enumerate() {
            for &b in &keys[ai + 1..] {
                let t = rank_sum_test(&per_nv[&a], &per_nv[&b])?;
                rank_sum.push(PairTest {
                    instance: instance.clone(),
                    d: f64::from_bits(*d_bits),
                    n_vehicles_a: a,
                    n_vehicles_b: b,
                    u: t.u,
                    p_value: t.p_value,
                    exact: t.exact,
                });
            }
        }
    }

    let summary = Summary {
        seed_scheme: manifest.seed_scheme.clone(),
        cells_total: manifest.cells.len(),
        cells_failed: manifest
            .cells
            .iter()
            .filter(|c| c.error.is_some())
            .map(|c| c.output.display().to_string())
            .collect(),
        groups: group_summaries,
        rank_sum,
    };

    let csv_file = |name: &str, write: &dyn Fn(&mut Vec<u8>) -> Result<(), MetricsError>| {
        let mut buf = Vec::new();
        write(&mut buf)?;
        let path = dir.join(name);
        write_atomic(&path, &buf).map_err(io_err(&path))
    };
    csv_file("hv.csv", &|b| write_csv(&hv_rows, b))?;
    csv_file("hv_classical.csv", &|b| write_csv(&classical_rows, b))?;
    csv_file("f1_measure.csv", &|b| write_csv(&f1_rows, b))?;
    csv_file("summary.csv", &|b| write_csv(&summary.groups, b))?;
    let path = dir.join("summary.json");
    let text = serde_json::to_string_pretty(&summary).expect("summary json");
    write_atomic(&path, text.as_bytes()).map_err(io_err(&path))?;
    Ok(summary)
}
