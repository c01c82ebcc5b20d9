use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tumorgrowth_cli::config::RunConfig;
use tumorgrowth_cli::pipeline::{self, TRAINED_VARIANTS};
use tumorgrowth_cli::CliError;

#[derive(Parser)]
#[command(
    name = "tumorgrowth",
    version,
    about = "Tumor growth modelling with Gompertz, Neural ODE and UDE models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; defaults apply to missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Subject id; overrides the configured subject list.
    #[arg(long, global = true)]
    subject: Option<u32>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for network initialisation.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the sigmoid interpolant and write it with the measurements.
    Interpolate,
    /// Solve the fixed-parameter Gompertz baseline.
    Gompertz,
    /// Train the Neural ODE.
    TrainNode,
    /// Train the UDE.
    TrainUde,
    /// Run the forecast suite.
    Forecast,
    /// Recover closed-form dynamics from trained models (trains them if no
    /// checkpoint exists).
    Recover,
    /// Run every stage for every configured subject.
    RunAll,
    /// Print the effective configuration as TOML.
    ShowConfig,
}

fn load_config(common: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.subject {
        cfg.subjects = vec![s];
    }
    if let Some(o) = &common.out {
        cfg.output_dir = o.clone();
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = load_config(&cli.common)?;
    if let Command::ShowConfig = cli.command {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    if let Command::RunAll = cli.command {
        let outcome = pipeline::run_all(&cfg)?;
        for r in &outcome.reports {
            for (name, rec) in [("node", &r.recovery_node), ("ude", &r.recovery_ude)] {
                if let Some(rec) = rec {
                    println!("subject {} {name}: {}", r.subject, rec.expression);
                }
            }
            for e in &r.errors {
                eprintln!("subject {} [{}]: {}", r.subject, e.stage, e.message);
            }
        }
        for (s, e) in &outcome.failures {
            eprintln!("subject {s}: {e}");
        }
        let stage_errors = outcome.reports.iter().any(|r| !r.errors.is_empty());
        if !outcome.failures.is_empty() || stage_errors {
            return Err(CliError::Stage {
                stage: "run-all",
                message: "one or more subjects or stages failed".into(),
            });
        }
        return Ok(());
    }

    pipeline::check_subjects(&cfg, &cfg.subjects)?;
    for &subject in &cfg.subjects {
        let data = pipeline::prepare(&cfg, subject)?;
        let dir = pipeline::subject_dir(&cfg, subject);
        match cli.command {
            Command::Interpolate => {
                pipeline::write_interpolation(&dir, &data)?;
                println!("subject {subject}: interpolant written to {}", dir.display());
            }
            Command::Gompertz => {
                let g = pipeline::run_gompertz(&cfg, &dir, &data)?;
                println!(
                    "subject {subject}: Gompertz MSE vs interpolant {:.6e} mm³²",
                    g.mse_vs_interpolant
                );
            }
            Command::TrainNode | Command::TrainUde => {
                let variant = if matches!(cli.command, Command::TrainNode) {
                    "node"
                } else {
                    "ude"
                };
                let (_, s) = pipeline::run_training(&cfg, &dir, &data, variant)?;
                println!(
                    "subject {subject} {variant}: loss {:.6e} -> {:.6e} in {} epochs",
                    s.initial_loss, s.final_loss, s.epochs
                );
            }
            Command::Forecast => {
                for row in pipeline::run_forecasts(&cfg, &dir, &data)? {
                    match &row.error {
                        None => println!(
                            "subject {subject} {} {}: train {:.6e} test {:.6e}",
                            row.variant, row.fraction, row.train_loss, row.test_mse
                        ),
                        Some(e) => eprintln!("subject {subject} {} {} [forecast]: {e}", row.variant, row.fraction),
                    }
                }
            }
            Command::Recover => {
                for variant in TRAINED_VARIANTS {
                    let model = match pipeline::load_model(&dir, variant)? {
                        Some(m) => m,
                        None => pipeline::run_training(&cfg, &dir, &data, variant)?.0,
                    };
                    let rec = pipeline::run_recovery(&cfg, &dir, &data, variant, &model)?;
                    println!("subject {subject} {variant}: {}", rec.expression);
                }
            }
            Command::RunAll | Command::ShowConfig => unreachable!(),
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error [{}]: {e}", e.stage());
            ExitCode::FAILURE
        }
    }
}
