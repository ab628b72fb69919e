use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use ofcluster::harness::metrics::metrics;
use ofcluster::harness::sweep::{sweep_scenario, FaultSpace};
use ofcluster::harness::{check, run, Scenario, Trace};

#[derive(Parser)]
#[command(name = "ofcluster", version, about = "Simulate and check an OpenFlow controller cluster")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario and write its trace and metrics.
    Run {
        scenario: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory [env: OFCLUSTER_OUT, default: out]
        #[arg(long)]
        out: Option<PathBuf>,
        /// Metrics format.
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
    /// Re-check every invariant on a recorded trace.
    Check { trace: PathBuf },
    /// Run a scenario under many seeds; scenarios without events get a random
    /// fault schedule per seed.
    Sweep {
        scenario: PathBuf,
        #[arg(long, default_value_t = 100)]
        seeds: u64,
        #[arg(long, default_value_t = 0)]
        first_seed: u64,
    },
}

fn load_scenario(path: &Path) -> Result<Scenario, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    Scenario::from_json(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn cmd_run(path: &Path, seed: u64, out: Option<PathBuf>, format: Format) -> Result<bool, String> {
    let sc = load_scenario(path)?;
    let out = out
        .or_else(|| std::env::var_os("OFCLUSTER_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&out).map_err(|e| format!("{}: {e}", out.display()))?;
    let trace = run(&sc, seed);
    let stem = if sc.name.is_empty() { "run" } else { &sc.name };
    let write = |name: String, body: String| {
        let p = out.join(name);
        fs::write(&p, body).map_err(|e| format!("{}: {e}", p.display()))
    };
    write(format!("{stem}.trace.jsonl"), trace.to_jsonl())?;
    let m = metrics(&trace);
    match format {
        Format::Csv => write(format!("{stem}.metrics.csv"), m.to_csv())?,
        Format::Json => write(
            format!("{stem}.metrics.json"),
            serde_json::to_string_pretty(&m).expect("metrics serialize"),
        )?,
    }
    let verdict = check(&trace);
    let summary = trace.summary().expect("run ends with a summary");
    println!(
        "{stem}: seed={seed} events={} quiescent={} live={:?} masters={:?}",
        summary.events_processed, summary.quiescent, summary.live_controllers, summary.masters
    );
    print!("{verdict}");
    println!("wrote {}", out.display());
    Ok(verdict.passed())
}

fn cmd_check(path: &Path) -> Result<bool, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let trace = Trace::from_jsonl(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    let verdict = check(&trace);
    print!("{verdict}");
    Ok(verdict.passed())
}

fn cmd_sweep(path: &Path, seeds: u64, first: u64) -> Result<bool, String> {
    let sc = load_scenario(path)?;
    let results = sweep_scenario(&sc, first..first + seeds, &FaultSpace::default());
    let mut failed = 0;
    for r in results.iter().filter(|r| !r.passed()) {
        failed += 1;
        let why = r
            .verdict
            .checks
            .iter()
            .find(|c| !c.passed)
            .map_or("did not settle".to_string(), |c| {
                format!("{}: {:?}", c.name, c.first_violation.as_ref().map(|v| &v.message))
            });
        println!("seed {} FAIL {why}", r.seed);
    }
    println!("{} seeds, {} passed, {} failed", results.len(), results.len() - failed, failed);
    Ok(failed == 0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Run {
            scenario,
            seed,
            out,
            format,
        } => cmd_run(&scenario, seed, out, format),
        Cmd::Check { trace } => cmd_check(&trace),
        Cmd::Sweep {
            scenario,
            seeds,
            first_seed,
        } => cmd_sweep(&scenario, seeds, first_seed),
    };
    match res {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
