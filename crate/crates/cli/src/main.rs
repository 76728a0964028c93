use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use divprompt_cli::compare::compare;
use divprompt_cli::{run_scenario, run_sweep, scenario_gateway, CliError, Report, Scenario};
use divprompt_core::gateway::{BackendKind, Confusion};
use divprompt_core::sensitivity::{to_csv, SweepConfig};
use divprompt_core::{GatewayConfig, SamplingMode};
use divprompt_server::{Backend, ServeArgs};

#[derive(Parser)]
#[command(name = "divprompt", version, about = "Diversity-controlled prompt generation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file and print its report.
    Run(RunArgs),
    /// Sweep classifier accuracy and print predicted vs actual alignment.
    Sensitivity(SweepArgs),
    /// Compare reports of runs of the same scenario.
    Compare {
        #[arg(required = true, num_args = 2..)]
        reports: Vec<PathBuf>,
    },
    /// Serve the HTTP API.
    Serve(ServeArgs),
}

#[derive(Args)]
struct RunArgs {
    scenario: PathBuf,
    /// Write the report here instead of stdout.
    #[arg(long, short)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Backend::Mock)]
    backend: Backend,
    #[arg(long, default_value = "http://127.0.0.1:8001")]
    image_endpoint: String,
    #[arg(long, default_value = "http://127.0.0.1:8002")]
    llm_endpoint: String,
    #[arg(long, default_value = "http://127.0.0.1:8003")]
    embed_endpoint: String,
    #[arg(long, default_value_t = 30_000)]
    timeout_ms: u64,
}

fn accuracy(s: &str) -> Result<f64, String> {
    let q: f64 = s.parse().map_err(|_| format!("{s:?} is not a number"))?;
    if (0.0..=1.0).contains(&q) {
        Ok(q)
    } else {
        Err(format!("accuracy {q} outside [0, 1]"))
    }
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, value_delimiter = ',', value_parser = accuracy, default_values_t = [1.0, 0.8, 0.6, 0.4])]
    accuracies: Vec<f64>,
    #[arg(long, default_value_t = 200)]
    images: usize,
    #[arg(long, default_value_t = 5)]
    labels: usize,
    #[arg(long, default_value_t = 12)]
    attributes: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
    /// How a misclassified image is relabelled.
    #[arg(long, value_enum, default_value = "attractor")]
    confusion: ConfusionArg,
    #[arg(long)]
    iid: bool,
    #[arg(long, value_enum, default_value_t = Backend::Mock)]
    backend: Backend,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum ConfusionArg {
    Uniform,
    Attractor,
}

fn run(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Run(args) => {
            let scenario = Scenario::load(&args.scenario)?;
            let overrides = matches!(args.backend, Backend::Http).then(|| GatewayConfig {
                backend: BackendKind::Http,
                image_endpoint: args.image_endpoint,
                llm_endpoint: args.llm_endpoint,
                embed_endpoint: args.embed_endpoint,
                timeout_ms: args.timeout_ms,
                ..GatewayConfig::default()
            });
            let gateway = scenario_gateway(&scenario, overrides.as_ref())?;
            let (_, report) = run_scenario(&scenario, gateway)?;
            match args.out {
                Some(path) => std::fs::write(path, report.render())?,
                None => print!("{}", report.render()),
            }
        }
        Command::Sensitivity(args) => {
            let config = SweepConfig {
                accuracies: args.accuracies,
                images: args.images,
                labels: args.labels,
                attributes: args.attributes,
                seed: args.seed,
                sigma: args.sigma,
                confusion: match args.confusion {
                    ConfusionArg::Uniform => Confusion::Uniform,
                    ConfusionArg::Attractor => Confusion::Attractor,
                },
                mode: if args.iid { SamplingMode::Iid } else { SamplingMode::Quota },
            };
            let backend = match args.backend {
                Backend::Mock => BackendKind::Mock,
                Backend::Http => BackendKind::Http,
            };
            print!("{}", to_csv(&run_sweep(&config, backend)?));
        }
        Command::Compare { reports } => {
            let mut runs = Vec::new();
            for path in reports {
                let text = std::fs::read_to_string(&path).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
                let report = Report::parse(&text)?;
                report.check_consistency()?;
                runs.push((path.display().to_string(), report));
            }
            print!("{}", compare(&runs)?);
        }
        Command::Serve(args) => {
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(divprompt_server::serve(&args)).map_err(|e| CliError::Serve(e.to_string()))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
