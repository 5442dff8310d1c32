//! Command-line front end: validate problem configs, build suspended
//! fields, run the verification suite, trace return-map orbits, and sweep
//! scaled corrections.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use suspension::{suspension_build, TorusPoint};
use suspension_cli::config::ProblemConfig;
use suspension_cli::{pipeline, report};

#[derive(Parser)]
#[command(
    name = "suspension",
    version,
    about = "Build volume-preserving suspensions of torus maps and verify them"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Parse a problem config and report whether it is well formed.
    Validate { config: PathBuf },
    /// Run the construction and summarize the built field.
    Build { config: PathBuf },
    /// Run the construction plus the full residual suite; print the report.
    Verify { config: PathBuf },
    /// Iterate the return map from a start point, comparing against exact
    /// target-map iterates. Emits CSV.
    Trace {
        config: PathBuf,
        /// Comma-separated start coordinates, e.g. --x0 0.1,0.25
        #[arg(long)]
        x0: String,
        /// Number of returns.
        #[arg(long, default_value_t = 10)]
        n: usize,
    },
    /// Rebuild with the correction scaled by each factor and report
    /// sup-norm deviations from the base field. Emits CSV.
    Perturb {
        config: PathBuf,
        /// Comma-separated scale factors, e.g. --scales 0.2,0.1,0.05
        #[arg(long)]
        scales: String,
    },
}

fn main() -> ExitCode {
    if let Ok(val) = std::env::var("SUSPENSION_THREADS") {
        match val.parse::<usize>() {
            Ok(n) if n > 0 => {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global()
                    .ok();
            }
            _ => {
                eprintln!("warning: ignoring SUSPENSION_THREADS={val:?} (want a positive integer)");
            }
        }
    }
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn parse_number_list(text: &str, what: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .with_context(|| format!("bad {what} entry {s:?}"))
        })
        .collect()
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.cmd {
        Cmd::Validate { config } => {
            let cfg = ProblemConfig::from_path(&config)?;
            println!("config ok");
            println!("dimension = {}", cfg.problem.dimension);
            println!("map factors = {}", cfg.map.factor.len());
            println!("flow h = {}", report::num(cfg.flow.h));
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Build { config } => {
            let cfg = ProblemConfig::from_path(&config)?;
            let v = cfg.field_tm()?;
            let correction = cfg.correction()?;
            let flow = cfg.flow_config()?;
            match suspension_build(&v, &correction, flow) {
                Ok(u) => {
                    println!("construction ok");
                    println!(
                        "section flow = {}",
                        if u.family().has_closed_form_sigma() {
                            "closed-form"
                        } else {
                            "numeric"
                        }
                    );
                    println!("density floor = {}", report::num(u.rho_floor()));
                    Ok(ExitCode::SUCCESS)
                }
                Err(e) => {
                    eprintln!("{e}");
                    Ok(ExitCode::from(1))
                }
            }
        }
        Cmd::Verify { config } => {
            let cfg = ProblemConfig::from_path(&config)?;
            let run = pipeline::run_pipeline(&cfg)?;
            let text = report::render(&run.body, &run.timings);
            print!("{text}");
            if let Some(path) = &cfg.output.report {
                fs::write(path, &text)
                    .with_context(|| format!("writing report {}", path.display()))?;
            }
            if let Some(dir) = &cfg.output.tables {
                fs::create_dir_all(dir)
                    .with_context(|| format!("creating table dir {}", dir.display()))?;
                for (name, content) in &run.tables {
                    fs::write(dir.join(name), content)
                        .with_context(|| format!("writing table {name}"))?;
                }
            }
            Ok(if run.all_passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            })
        }
        Cmd::Trace { config, x0, n } => {
            let cfg = ProblemConfig::from_path(&config)?;
            if n == 0 {
                bail!("--n must be at least 1");
            }
            let coords = parse_number_list(&x0, "--x0")?;
            if coords.len() != cfg.problem.dimension {
                bail!(
                    "--x0 has {} coordinates, config dimension is {}",
                    coords.len(),
                    cfg.problem.dimension
                );
            }
            let start = TorusPoint::new(coords)?;
            let v = cfg.field_tm()?;
            let correction = cfg.correction()?;
            let flow = cfg.flow_config()?;
            match suspension_build(&v, &correction, flow) {
                Ok(u) => {
                    println!("k,{},residual", pipeline::axis_header(cfg.problem.dimension));
                    for (k, p, resid) in pipeline::trace_orbit(&u, &flow, &start, n)? {
                        let coords = p
                            .coords()
                            .iter()
                            .map(|c| format!("{c:.6}"))
                            .collect::<Vec<_>>()
                            .join(",");
                        println!("{k},{coords},{resid:.12e}");
                    }
                    Ok(ExitCode::SUCCESS)
                }
                Err(e) => {
                    eprintln!("{e}");
                    Ok(ExitCode::from(1))
                }
            }
        }
        Cmd::Perturb { config, scales } => {
            let cfg = ProblemConfig::from_path(&config)?;
            let list = parse_number_list(&scales, "--scales")?;
            if list.is_empty() {
                bail!("--scales needs at least one factor");
            }
            let v = cfg.field_tm()?;
            let correction = cfg.correction()?;
            let flow = cfg.flow_config()?;
            match pipeline::perturbation_ladder(&v, &correction, &list, flow) {
                Ok(ladder) => {
                    println!("scale,deviation,decay_vs_previous");
                    let mut prev: Option<f64> = None;
                    for (s, dev) in ladder {
                        let ratio = match prev {
                            Some(p) if dev > 0.0 => format!("{:.6}", p / dev),
                            _ => String::new(),
                        };
                        println!("{s},{dev:.12e},{ratio}");
                        prev = Some(dev);
                    }
                    Ok(ExitCode::SUCCESS)
                }
                Err(e) => {
                    eprintln!("{e:#}");
                    Ok(ExitCode::from(1))
                }
            }
        }
    }
}
