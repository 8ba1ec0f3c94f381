use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use demoa_core::experiment::{compute_metrics, run_experiment, ExperimentSpec, Summary, WORKERS_ENV};
use demoa_core::instance::{corpus_configs, generate_instance, load_instance, save_instance, GeneratorConfig, Topology};
use demoa_core::session::SessionManager;

#[derive(Debug, Parser)]
#[command(name = "demoa", version, about = "Dynamic bi-objective multi-vehicle routing optimizer")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write generated instance files.
    Generate(GenerateArgs),
    /// Run an experiment matrix described by a JSON spec.
    Run(RunArgs),
    /// Recompute metric CSVs and the summary of a finished run directory.
    Metrics(MetricsArgs),
    /// Serve interactive decision sessions over HTTP.
    Serve(ServeArgs),
}

fn ratio(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("'{s}' is not a number"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{v} is outside [0, 1]"))
    }
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Customers excluding depots.
    #[arg(long, default_value_t = 98)]
    pub n: usize,
    /// `uniform` or `clustered:<k>`.
    #[arg(long, default_value = "uniform")]
    pub topology: Topology,
    /// Fraction of dynamic customers.
    #[arg(long, default_value_t = 0.5, value_parser = ratio)]
    pub dynamic: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 1000.0)]
    pub horizon: f64,
    #[arg(long = "box", default_value_t = 1000.0)]
    pub bounding_box: f64,
    /// Write the 50-instance corpus instead; `--seed` becomes the seed base.
    #[arg(long)]
    pub corpus: bool,
    #[arg(long, short, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Experiment spec (JSON).
    pub spec: PathBuf,
    /// Overrides the spec's output directory.
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long, env = WORKERS_ENV)]
    pub workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    /// Output directory of an earlier `run`.
    pub dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
    /// Instance files or directories of instance files to offer.
    #[arg(long = "instances", num_args = 1..)]
    pub instances: Vec<PathBuf>,
    /// Directory for per-era session snapshots; sessions found there are
    /// resumed on start.
    #[arg(long)]
    pub snapshots: Option<PathBuf>,
}

pub fn generate(args: &GenerateArgs) -> Result<Vec<PathBuf>> {
    let configs = if args.corpus {
        corpus_configs(args.n, args.seed)
    } else {
        vec![GeneratorConfig {
            n_total: args.n,
            topology: args.topology,
            dynamic_ratio: args.dynamic,
            request_horizon: args.horizon,
            seed: args.seed,
            bounding_box: args.bounding_box,
        }]
    };
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let mut written = Vec::new();
    for cfg in configs {
        let inst = generate_instance(&cfg)?;
        let path = args.out.join(format!("{}.json", cfg.default_name()));
        save_instance(&inst, &path).with_context(|| format!("writing {}", path.display()))?;
        written.push(path);
    }
    Ok(written)
}

pub fn run(args: &RunArgs) -> Result<Summary> {
    let mut spec = ExperimentSpec::from_file(&args.spec)?;
    if let Some(dir) = &args.output_dir {
        spec.output_dir = dir.clone();
    }
    Ok(run_experiment(&spec, args.workers)?)
}

pub fn metrics(args: &MetricsArgs) -> Result<Summary> {
    Ok(compute_metrics(&args.dir)?)
}

fn instance_files(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(p)
                .with_context(|| format!("reading {}", p.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "json"))
                .collect();
            found.sort();
            files.extend(found);
        } else if p.exists() {
            files.push(p.clone());
        } else {
            bail!("{} does not exist", p.display());
        }
    }
    Ok(files)
}

pub fn session_manager(args: &ServeArgs) -> Result<Arc<SessionManager>> {
    let manager = match &args.snapshots {
        Some(dir) => SessionManager::with_snapshots(dir),
        None => SessionManager::new(),
    };
    for file in instance_files(&args.instances)? {
        let inst = load_instance(&file).with_context(|| format!("loading {}", file.display()))?;
        log::info!("instance {} from {}", inst.name(), file.display());
        manager.register_instance(inst);
    }
    for id in manager.restore_all()? {
        log::info!("resumed session {id}");
    }
    Ok(Arc::new(manager))
}

pub async fn serve(args: &ServeArgs) -> Result<()> {
    let manager = session_manager(args)?;
    let listener = tokio::net::TcpListener::bind(args.addr)
        .await
        .with_context(|| format!("binding {}", args.addr))?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, crate::server::router(manager))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

pub fn print_manifest(paths: &[PathBuf]) {
    for p in paths {
        println!("{}", p.display());
    }
}

pub fn print_summary(summary: &Summary, dir: &Path) {
    println!(
        "{} cells ({} failed); outputs in {}",
        summary.cells_total,
        summary.cells_failed.len(),
        dir.display()
    );
    for t in &summary.rank_sum {
        println!(
            "{} d={} vehicles {} vs {}: U={} p={:.3e}",
            t.instance, t.d, t.n_vehicles_a, t.n_vehicles_b, t.u, t.p_value
        );
    }
}
