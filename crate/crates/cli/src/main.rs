use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use vistrack::gradcheck::{run_audit, AuditConfig};
use vistrack::sim::config::ScenarioConfig;
use vistrack::sim::{run_scenario, ReplanRecord};
use vistrack::ssdf::bench::{bench_scene, bundled_scenes};
use vistrack::ssdf::SsdfConfig;

const OK: u8 = 0;
const CONFIG_ERROR: u8 = 1;
const DEGRADED: u8 = 2;
const GRADIENT_BREACH: u8 = 3;

#[derive(Parser)]
#[command(
    name = "vistrack",
    version,
    about = "Visibility-aware swarm target tracking"
)]
struct Cli {
    /// Raise log verbosity (repeatable); RUST_LOG takes precedence.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and write metrics.json and timeseries.csv.
    Run {
        scenario: PathBuf,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Runs a scenario with named terms disabled: cost weights by name, or
    /// `kino_search` for the front-end.
    Ablate {
        scenario: PathBuf,
        #[arg(long = "without", required = true)]
        without: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Times incremental against brute-force field construction.
    BenchSsdf {
        /// CSV destination; the table is also printed.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        reps: usize,
    },
    /// Compares every analytic gradient with central differences.
    Gradcheck {
        /// JSON report destination.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        instances: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, hide = true)]
        corrupt: bool,
    },
    /// Prints a forest scenario to start from.
    Template {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Trees per square meter.
        #[arg(long, default_value_t = 1.0 / 32.0)]
        density: f64,
        /// Target speed (m/s).
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
        #[arg(long, default_value_t = 60.0)]
        duration: f64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let code = match cli.command {
        Command::Run {
            scenario,
            seed,
            out,
        } => simulate(&scenario, seed, &out, &[]),
        Command::Ablate {
            scenario,
            without,
            seed,
            out,
        } => simulate(&scenario, seed, &out, &without),
        Command::BenchSsdf { out, reps } => bench(out.as_deref(), reps),
        Command::Gradcheck {
            out,
            instances,
            seed,
            corrupt,
        } => gradcheck(out.as_deref(), instances, seed, corrupt),
        Command::Template {
            seed,
            density,
            speed,
            duration,
        } => {
            println!(
                "{}",
                ScenarioConfig::forest(seed, density, speed, duration).to_json()
            );
            OK
        }
    };
    ExitCode::from(code)
}

fn load(path: &Path) -> Result<ScenarioConfig, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    ScenarioConfig::from_json(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn disable(cfg: &mut ScenarioConfig, term: &str) -> bool {
    match term {
        "kino_search" => {
            cfg.planner.front_end = false;
            true
        }
        _ => cfg.weights.zero(term),
    }
}

fn simulate(path: &Path, seed: Option<u64>, out: &Path, without: &[String]) -> u8 {
    let mut cfg = match load(path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return CONFIG_ERROR;
        }
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    for term in without {
        if !disable(&mut cfg, term) {
            eprintln!("error: unknown term `{term}`");
            return CONFIG_ERROR;
        }
    }
    let (output, report) = match run_scenario(&cfg) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return CONFIG_ERROR;
        }
    };
    let written = fs::create_dir_all(out)
        .and_then(|_| {
            fs::write(
                out.join("metrics.json"),
                serde_json::to_string_pretty(&report).expect("report serialises"),
            )
        })
        .and_then(|_| fs::write(out.join("timeseries.csv"), &output.timeseries))
        .and_then(|_| fs::write(out.join("replans.csv"), replans_csv(&output.replans)));
    if let Err(e) = written {
        eprintln!("error: writing to {}: {e}", out.display());
        return CONFIG_ERROR;
    }
    let m = &report.metrics;
    println!(
        "theta_avg {:.3}  theta_wrst {}  gamma_vis {:.3}%  d_avg {:.3} m  collisions {}  replan mean {:.1} ms",
        m.theta_avg, m.theta_wrst, m.gamma_vis, m.d_avg, report.collisions, report.replans.mean_ms
    );
    if report.degraded {
        eprintln!(
            "degraded run: {} reused and {} hover cycles",
            report.replans.reused, report.replans.hover
        );
        DEGRADED
    } else {
        OK
    }
}

fn replans_csv(records: &[ReplanRecord]) -> String {
    let mut s = String::from(
        "t,agent,status,teammates,ssdf_ms,search_ms,corridor_ms,optimize_ms,total_ms\n",
    );
    for r in records {
        let mates: Vec<String> = r.teammates.iter().map(|m| m.to_string()).collect();
        let status = serde_json::to_value(r.status).expect("status serialises");
        s.push_str(&format!(
            "{:.4},{},{},{},{:.3},{:.3},{:.3},{:.3},{:.3}\n",
            r.t,
            r.agent,
            status.as_str().unwrap_or_default(),
            mates.join(" "),
            r.timings.ssdf_ms,
            r.timings.search_ms,
            r.timings.corridor_ms,
            r.timings.optimize_ms,
            r.timings.total_ms
        ));
    }
    s
}

fn bench(out: Option<&Path>, reps: usize) -> u8 {
    let cfg = SsdfConfig::default();
    let mut csv = String::from("scene,method,time_ms,cum_error_rad\n");
    for scene in bundled_scenes() {
        for row in bench_scene(&scene, &cfg, reps) {
            csv.push_str(&format!(
                "{},{},{:.3},{:.3e}\n",
                row.scene, row.method, row.time_ms, row.cum_error_rad
            ));
        }
    }
    print!("{csv}");
    if let Some(path) = out {
        if let Err(e) = fs::write(path, &csv) {
            eprintln!("error: writing {}: {e}", path.display());
            return CONFIG_ERROR;
        }
    }
    OK
}

fn gradcheck(out: Option<&Path>, instances: usize, seed: u64, corrupt: bool) -> u8 {
    let results = run_audit(&AuditConfig {
        instances,
        seed,
        corrupt,
        ..AuditConfig::default()
    });
    for r in &results {
        println!(
            "{:<20} {:>4} instances  max rel err {:.3e}  {}",
            r.name,
            r.instances,
            r.max_rel_error,
            if r.passed { "ok" } else { "FAIL" }
        );
    }
    if let Some(path) = out {
        let json = serde_json::to_string_pretty(&results).expect("results serialise");
        if let Err(e) = fs::write(path, json) {
            eprintln!("error: writing {}: {e}", path.display());
            return CONFIG_ERROR;
        }
    }
    if results.iter().all(|r| r.passed) {
        OK
    } else {
        GRADIENT_BREACH
    }
}
