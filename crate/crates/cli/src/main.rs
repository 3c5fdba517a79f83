use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use waddle_core::harness::{
    contact_schedule, gradient_check, percentile, run_noise_trials, run_push_sweep,
    run_scenario, schedule_csv, ControllerKind, PushSpec, ScenarioConfig,
};

#[derive(Parser)]
#[command(name = "waddle", about = "Planar biped locomotion sandbox", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scenario; exits nonzero on config errors or a simulation
    /// abort (a controlled fall is still a normal exit).
    Run {
        scenario: PathBuf,
        /// Write the per-tick JSONL log here.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Write the contact schedule (normal force > 1 N) CSV here.
        #[arg(long)]
        schedule: Option<PathBuf>,
        /// Override the scenario's controller variant.
        #[arg(long)]
        controller: Option<String>,
        /// Override the scenario duration (seconds).
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Grids of runs: push recovery or noise/model-error trials.
    Sweep {
        scenario: PathBuf,
        /// Sweep axis: "push" or "noise".
        #[arg(long)]
        axis: String,
        /// Seeds per cell (noise axis).
        #[arg(long, default_value_t = 10)]
        trials: usize,
        /// Comma-separated controller variants to compare.
        #[arg(long, default_value = "combined,hlip-only")]
        controllers: String,
        #[arg(long, default_value_t = 0.01)]
        sigma_x: f64,
        #[arg(long, default_value_t = 0.1)]
        sigma_m: f64,
        /// Write the per-cell CSV here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare tracker Jacobians against finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 3)]
        points: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Control-stack timing percentiles over a scenario.
    Bench {
        scenario: PathBuf,
        #[arg(long, default_value_t = 200)]
        ticks: usize,
    },
}

fn parse_controller(s: &str) -> Result<ControllerKind, String> {
    match s {
        "hlip-only" => Ok(ControllerKind::HlipOnly),
        "cimpc-only" => Ok(ControllerKind::CimpcOnly),
        "combined" => Ok(ControllerKind::Combined),
        other => Err(format!("unknown controller {other:?}")),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, Box<dyn std::error::Error>> {
    match cli.cmd {
        Cmd::Run { scenario, log, schedule, controller, duration } => {
            let mut cfg = ScenarioConfig::from_file(&scenario)?;
            if let Some(c) = controller {
                cfg.controller = parse_controller(&c)?;
            }
            if let Some(d) = duration {
                cfg.duration = d;
            }
            let result = run_scenario(&cfg)?;
            if let Some(path) = log {
                result.write_jsonl(&path)?;
            }
            if let Some(path) = schedule {
                std::fs::write(&path, schedule_csv(&contact_schedule(&result, 1.0)))?;
            }
            println!("{}", serde_json::to_string_pretty(&result.summary)?);
            if result.summary.aborted {
                eprintln!("simulation aborted (non-finite state)");
                return Ok(ExitCode::FAILURE);
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Sweep { scenario, axis, trials, controllers, sigma_x, sigma_m, out } => {
            let cfg = ScenarioConfig::from_file(&scenario)?;
            let ctrls: Vec<ControllerKind> = controllers
                .split(',')
                .map(|s| parse_controller(s.trim()))
                .collect::<Result<_, _>>()?;
            let table = match axis.as_str() {
                "push" => run_push_sweep(&cfg, &PushSpec::default(), &ctrls),
                "noise" => {
                    let seeds: Vec<u64> = (0..trials as u64).collect();
                    run_noise_trials(&cfg, sigma_x, sigma_m, &seeds, &ctrls)
                }
                other => return Err(format!("unknown sweep axis {other:?}").into()),
            };
            for &c in &ctrls {
                let (ok, total) = table.successes(c, None);
                println!("{c}: {ok}/{total}");
            }
            if let Some(path) = out {
                std::fs::write(&path, table.to_csv())?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Gradcheck { points, seed } => {
            let report = gradient_check(seed, points);
            println!("{}", serde_json::to_string_pretty(&report)?);
            let ok = report.max_rel_err < 1e-4 && report.band_ok;
            println!("{}", if ok { "PASS" } else { "FAIL" });
            Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Cmd::Bench { scenario, ticks } => {
            let mut cfg = ScenarioConfig::from_file(&scenario)?;
            cfg.duration = ticks as f64 * cfg.control_period;
            cfg.log_every = 1;
            let result = run_scenario(&cfg)?;
            let mut times: Vec<f64> = result.records.iter().map(|r| r.solve_ms).collect();
            // the first tick pays one-time setup; report it separately
            let first = times.first().copied().unwrap_or(0.0);
            let mut rest: Vec<f64> = times.split_off(1.min(times.len()));
            println!("ticks: {}", rest.len());
            println!("first: {first:.3} ms");
            if !rest.is_empty() {
                println!("p50:   {:.3} ms", percentile(&mut rest, 0.5));
                println!("p99:   {:.3} ms", percentile(&mut rest, 0.99));
                println!("max:   {:.3} ms", percentile(&mut rest, 1.0));
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}
