use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use modexp::optimizer::Method;
use modexp::pipeline::{
    cmd_expand, cmd_gradcheck, cmd_nlml_scan, cmd_simulate, output_dir, GradcheckRequest, RunConfig, ScanRequest,
};

/// Gaussian-process expansion of sparsely measured mode shapes.
#[derive(Parser, Debug)]
#[command(name = "modexp", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// JSON run configuration; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Measurement noise seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    method: Option<Method>,
    /// Weight of the orthogonality penalty.
    #[arg(long, global = true)]
    lambda: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve the building model and sample noisy sensor data.
    Simulate,
    /// Expand measured modes to every floor.
    Expand {
        /// Directory written by `simulate`.
        #[arg(long)]
        input: PathBuf,
    },
    /// Tabulate the NLML of one mode over beta at fixed gamma.
    NlmlScan {
        #[arg(long)]
        input: PathBuf,
        /// Mode number, starting at 1.
        #[arg(long)]
        mode: usize,
        /// Fixed gamma; defaults to the joint-fit optimum of that mode.
        #[arg(long)]
        gamma: Option<f64>,
        /// Defaults to the lower beta bound.
        #[arg(long)]
        beta_min: Option<f64>,
        /// Defaults to the upper beta bound.
        #[arg(long)]
        beta_max: Option<f64>,
        #[arg(long, default_value_t = 200)]
        points: usize,
    },
    /// Compare analytic gradients with central differences.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        points: usize,
        /// Seed of the random audit points.
        #[arg(long, default_value_t = 1)]
        point_seed: u64,
        #[arg(long, hide = true)]
        corrupt_gradient: bool,
    },
}

fn load_config(common: &Common) -> modexp::Result<RunConfig> {
    let mut config = match &common.config {
        Some(path) => RunConfig::from_json_file(path)?,
        None => RunConfig::default(),
    };
    if let Some(out) = &common.out {
        config.out = out.clone();
    }
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(method) = common.method {
        config.method = method;
    }
    if let Some(lambda) = common.lambda {
        config.lambda = lambda;
    }
    config.validate()?;
    Ok(config)
}

fn run(cli: Cli) -> modexp::Result<ExitCode> {
    let config = load_config(&cli.common)?;
    let out = output_dir(cli.common.out.as_ref(), &config);
    match cli.command {
        Command::Simulate => {
            let sim = cmd_simulate(&config, &out)?;
            println!(
                "simulated {} floors, {} modes, {} sensors -> {}",
                sim.truth.n_floors(),
                sim.truth.n_modes(),
                sim.measurements.n_sensors(),
                out.display()
            );
        }
        Command::Expand { input } => {
            let result = cmd_expand(&config, &input, &out)?;
            let report = &result.report;
            for (j, h) in report.hyperparameters.iter().enumerate() {
                let mut line = format!("mode {}: gamma {:.4} beta {:.4}", h.mode, h.gamma, h.beta);
                if let Some(m) = report.metrics.as_ref().map(|m| m[j]) {
                    line += &format!("  MAC {:.4} RMSE {:.3e} coverage {:.2}", m.mac, m.rmse, m.coverage);
                }
                println!("{line}");
            }
            if let Some(b) = report.balance {
                println!(
                    "lambda*P = {:.6e}, sum NLML = {:.6e}, ratio {:.3}",
                    b.weighted_penalty,
                    b.nlml_sum,
                    b.weighted_penalty / b.nlml_sum.abs()
                );
            }
            println!("wrote {}", out.display());
        }
        Command::NlmlScan {
            input,
            mode,
            gamma,
            beta_min,
            beta_max,
            points,
        } => {
            let request = ScanRequest {
                mode,
                gamma,
                beta_min: beta_min.unwrap_or(config.bounds.beta.0),
                beta_max: beta_max.unwrap_or(config.bounds.beta.1),
                points,
            };
            let s = cmd_nlml_scan(&config, &input, &out, &request)?;
            println!(
                "mode {} at gamma {:.4}: plateau {} (window ratio {}), interior minimum {} at beta {:.4}",
                s.mode,
                s.gamma,
                s.plateau,
                s.window_ratio.map_or("n/a".into(), |r| format!("{r:.4}")),
                s.interior_minimum,
                s.argmin_beta
            );
        }
        Command::Gradcheck {
            points,
            point_seed,
            corrupt_gradient,
        } => {
            let request = GradcheckRequest {
                points,
                point_seed,
                corrupt_gradient,
            };
            let r = cmd_gradcheck(&config, &out, &request)?;
            for (j, e) in r.nlml_max_relative_error.iter().enumerate() {
                println!("nlml mode {}: max relative error {e:.3e}", j + 1);
            }
            if let Some(e) = r.joint_max_relative_error {
                println!("joint objective: max relative error {e:.3e}");
            }
            if !r.passed {
                eprintln!("gradient check failed");
                return Ok(ExitCode::from(1));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
