use clap::Parser;
use demoa_cli::commands::{self, Cli, Command};
use demoa_core::experiment::ExperimentSpec;

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match &cli.command {
        Command::Generate(args) => commands::print_manifest(&commands::generate(args)?),
        Command::Run(args) => {
            let summary = commands::run(args)?;
            let dir = match &args.output_dir {
                Some(d) => d.clone(),
                None => ExperimentSpec::from_file(&args.spec)?.output_dir,
            };
            commands::print_summary(&summary, &dir);
        }
        Command::Metrics(args) => commands::print_summary(&commands::metrics(args)?, &args.dir),
        Command::Serve(args) => {
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(commands::serve(args))?;
        }
    }
    Ok(())
}
