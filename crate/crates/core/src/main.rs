use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use superlab::config::{check_fields, default_example_params, parse_config, run};
use superlab::model::{list_examples, registry_example, ExampleId};

#[derive(Parser)]
#[command(name = "superlab", version, about = "Monte Carlo laboratory for superdiffusion laws of large numbers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the seed in the config file.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides `output.dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List the registry examples.
    ListExamples,
    /// Check analytic derivatives of every registry field (or of one config's model).
    CheckFields {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1e-5)]
        tol: f64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(w) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(w.max(1)).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match cli.command {
        Command::Run { config, seed, out } => {
            let mut cfg = match parse_config(&config) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            match run(&cfg, out.as_deref()) {
                Ok(outcome) => {
                    for w in &outcome.result.warnings {
                        eprintln!("warning: {w}");
                    }
                    for f in &outcome.result.flags {
                        println!("{} {}: {}", if f.passed { "PASS" } else { "FAIL" }, f.name, f.detail);
                    }
                    println!("artifacts written to {}", outcome.out_dir.display());
                    match outcome.result.first_failure() {
                        None => ExitCode::SUCCESS,
                        Some(f) => {
                            eprintln!("first failed flag: {}", f.name);
                            ExitCode::from(1)
                        }
                    }
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(2)
                }
            }
        }
        Command::ListExamples => {
            println!("id\texample\tlambda_c\talpha growth\tconstraints\ttransformed motion");
            for e in list_examples() {
                println!(
                    "{}\t{}\t{}\t{}\t{}\t{}",
                    e.id, e.example, e.lambda_formula, e.alpha_growth, e.constraints, e.transformed_motion
                );
            }
            ExitCode::SUCCESS
        }
        Command::CheckFields { config, tol } => {
            let models = match config {
                Some(path) => parse_config(&path).and_then(|c| registry_example(c.model.id, &c.model.params())).map(|m| vec![m]),
                None => ExampleId::ALL
                    .iter()
                    .map(|id| registry_example(*id, &default_example_params(*id)))
                    .collect(),
            };
            let models = match models {
                Ok(m) => m,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
            };
            let mut ok = true;
            for m in &models {
                for c in check_fields(m, tol) {
                    ok &= c.passed;
                    println!(
                        "{} {}.{} [{}]: max deviation {:.16e}",
                        if c.passed { "PASS" } else { "FAIL" },
                        c.model,
                        c.field,
                        c.descriptor,
                        c.deviation
                    );
                }
            }
            if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
    }
}
