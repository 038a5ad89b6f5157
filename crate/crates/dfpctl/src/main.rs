//! `dfpctl`: runs system configurations, benchmarks the middleware and
//! queries environment stores.
//!
//! Exit codes: 0 success, 1 runtime fault (or an empty query), 2 invalid
//! configuration or unreadable input.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dfp_core::app_acc::{self, AccApp, AccError, AccSection};
use dfp_core::envmodel::{EnvError, EnvStore, OddQuery};
use dfp_core::middleware::arena::DEFAULT_SLOT_SIZE;
use dfp_core::middleware::bench::{run_bench, BenchPath};
use dfp_core::platform::{MetricsReport, Runtime, SystemConfig};
use log::{error, info};

/// Simulated duration when neither `--duration` nor a scenario sets one.
const DEFAULT_DURATION_S: f64 = 10.0;

#[derive(Parser)]
#[command(
    name = "dfpctl",
    version,
    about = "Run, benchmark and inspect a vehicle software stack"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Validate a system config, run it and write a metrics report.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Simulated seconds (default: the ACC scenario's duration, else 10).
        #[arg(long)]
        duration: Option<f64>,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Report path; side files (`.firing.jsonl`, `.fsm.jsonl`,
        /// `.trajectory.jsonl`) are written next to it. Without it the
        /// report goes to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare zero-copy and copying delivery latency across payload sizes.
    Bench {
        /// Payload sizes in bytes; K and M suffixes are binary (1K = 1024).
        #[arg(long, value_delimiter = ',', num_args = 1.., value_parser = parse_size,
              default_values = ["1K", "64K", "1M", "4M"])]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
    },
    /// Print the records of an environment store matching a token query.
    QueryEnv {
        #[arg(long)]
        store: PathBuf,
        /// Query tokens; each argument may hold several, separated by spaces or commas.
        #[arg(long, num_args = 1.., required = true)]
        tokens: Vec<String>,
    },
}

fn parse_size(s: &str) -> Result<usize, String> {
    let t = s.trim();
    let upper = t.to_ascii_uppercase();
    let (digits, mult) = if let Some(d) = upper
        .strip_suffix("KIB")
        .or_else(|| upper.strip_suffix('K'))
    {
        (d, 1usize << 10)
    } else if let Some(d) = upper
        .strip_suffix("MIB")
        .or_else(|| upper.strip_suffix('M'))
    {
        (d, 1 << 20)
    } else {
        (upper.strip_suffix('B').unwrap_or(&upper), 1)
    };
    digits
        .trim()
        .parse::<usize>()
        .ok()
        .and_then(|n| n.checked_mul(mult))
        .ok_or_else(|| format!("invalid size {t:?}"))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DFP_LOG", "error"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let code = match cli.cmd {
        Cmd::Run {
            config,
            duration,
            seed,
            out,
        } => cmd_run(&config, duration, seed, out.as_deref()),
        Cmd::Bench { sizes, samples } => cmd_bench(&sizes, samples),
        Cmd::QueryEnv { store, tokens } => cmd_query_env(&store, &tokens),
    };
    ExitCode::from(code)
}

fn cmd_run(config: &Path, duration: Option<f64>, seed: Option<u64>, out: Option<&Path>) -> u8 {
    if let Some(d) = duration {
        if !(d.is_finite() && d > 0.0) {
            eprintln!("error: --duration must be positive, got {d}");
            return 2;
        }
    }
    let cfg = match SystemConfig::load(config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    let section = match AccSection::from_config(&cfg) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    let mut rt = match Runtime::new(cfg, seed, &[&AccApp]) {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    info!("config {} valid, seed {}", config.display(), rt.seed());

    let mut trajectory = None;
    let (acc, fault) = match &section {
        Some(sec) => match app_acc::run(&mut rt, duration) {
            Ok(tr) => {
                let s = tr.summary(&sec.config, None);
                trajectory = Some(tr);
                (Some(s), None)
            }
            Err(AccError::Collision {
                t, trajectory: tr, ..
            }) => {
                let s = tr.summary(&sec.config, Some(t));
                trajectory = Some(tr);
                (Some(s), Some(format!("collision at t = {t:.2} s")))
            }
            Err(e) => (None, Some(e.to_string())),
        },
        None => match rt.run_for(duration.unwrap_or(DEFAULT_DURATION_S)) {
            Ok(()) => (None, None),
            Err(e) => (None, Some(e.to_string())),
        },
    };
    let report = rt.report(
        acc.map(|s| serde_json::to_value(s).expect("summary serializes")),
        fault.clone(),
    );

    let written = match out {
        Some(path) => write_outputs(path, &rt, &report, trajectory.as_ref()),
        None => {
            print!("{}", report.to_json());
            Ok(())
        }
    };
    if let Err(e) = written {
        eprintln!("error: {e}");
        return 1;
    }
    if out.is_some() {
        print_summary(&report);
    }
    match fault {
        Some(f) => {
            error!("run faulted: {f}");
            eprintln!("fault: {f}");
            1
        }
        None => 0,
    }
}

fn side_path(out: &Path, suffix: &str) -> PathBuf {
    out.with_extension(suffix)
}

fn write_outputs(
    out: &Path,
    rt: &Runtime,
    report: &MetricsReport,
    trajectory: Option<&app_acc::Trajectory>,
) -> std::io::Result<()> {
    let with_ctx = |p: &Path, r: std::io::Result<()>| {
        r.map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", p.display())))
    };
    with_ctx(out, fs::write(out, report.to_json()))?;
    let lines = |v: &[String]| v.iter().map(|l| format!("{l}\n")).collect::<String>();
    let firing = side_path(out, "firing.jsonl");
    with_ctx(&firing, fs::write(&firing, lines(rt.firing_log())))?;
    let fsm = side_path(out, "fsm.jsonl");
    with_ctx(&fsm, fs::write(&fsm, lines(&rt.fsm_trace_lines())))?;
    if let Some(tr) = trajectory {
        let p = side_path(out, "trajectory.jsonl");
        with_ctx(&p, fs::write(&p, tr.to_jsonl()))?;
    }
    Ok(())
}

fn print_summary(r: &MetricsReport) {
    println!(
        "seed {}  rounds {}  sim time {:.2} s  config {}",
        r.seed,
        r.rounds,
        r.sim_time_s,
        &r.config_hash[..12.min(r.config_hash.len())]
    );
    println!(
        "{:<24} {:>8} {:>8} {:>8}",
        "node", "fired", "restarts", "state"
    );
    for (name, n) in &r.nodes {
        println!("{name:<24} {:>8} {:>8} {:>8}", n.fired, n.restarts, n.state);
    }
    let mode: Vec<String> = r
        .fsm
        .final_mode
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect();
    println!(
        "mode: {}  (trace {} steps)",
        mode.join(" "),
        r.fsm.trace_len
    );
    println!("env records: {}", r.env.records);
    if let Some(acc) = &r.acc {
        println!(
            "acc: min gap {} m, final gap error {} m",
            acc["min_gap_m"], acc["final_gap_error_m"]
        );
    }
    if let Some(f) = &r.fault {
        println!("fault: {f}");
    }
}

fn human_size(n: usize) -> String {
    if n >= 1 << 20 && n.is_multiple_of(1 << 20) {
        format!("{}M", n >> 20)
    } else if n >= 1 << 10 && n.is_multiple_of(1 << 10) {
        format!("{}K", n >> 10)
    } else {
        n.to_string()
    }
}

fn cmd_bench(sizes: &[usize], samples: usize) -> u8 {
    if sizes.is_empty() || samples == 0 {
        eprintln!("error: need at least one size and one sample");
        return 2;
    }
    let report = match run_bench(sizes, samples, DEFAULT_SLOT_SIZE) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    println!(
        "{:<10} {:>8} {:>8} {:>12} {:>12}",
        "path", "size", "samples", "median_ns", "p99_ns"
    );
    for row in &report.rows {
        let path = match row.path {
            BenchPath::ZeroCopy => "zero-copy",
            BenchPath::Copying => "copying",
        };
        println!(
            "{path:<10} {:>8} {:>8} {:>12} {:>12}",
            human_size(row.size),
            row.samples,
            row.median_ns,
            row.p99_ns
        );
    }
    println!(
        "zero-copy ratio (largest:smallest): {:.3}",
        report.zero_copy_ratio
    );
    println!(
        "copying ratio (largest:smallest): {:.3}",
        report.copying_ratio
    );
    0
}

fn cmd_query_env(store: &Path, tokens: &[String]) -> u8 {
    let store = match EnvStore::load(store) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    let toks: Vec<&str> = tokens
        .iter()
        .flat_map(|t| t.split(|c: char| c.is_whitespace() || c == ','))
        .filter(|t| !t.is_empty())
        .collect();
    match store.query(&OddQuery::tokens(&toks)) {
        Ok(records) => {
            for r in records {
                println!("{}", serde_json::to_string(&r).expect("record serializes"));
            }
            0
        }
        Err(e @ EnvError::EmptyQuery) => {
            eprintln!("error: {e}");
            1
        }
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

#[cfg(test)]
mod tests {
    use super::parse_size;

    #[test]
    fn sizes() {
        assert_eq!(parse_size("0"), Ok(0));
        assert_eq!(parse_size("1K"), Ok(1024));
        assert_eq!(parse_size("64k"), Ok(65536));
        assert_eq!(parse_size("4MiB"), Ok(4 << 20));
        assert_eq!(parse_size("100B"), Ok(100));
        assert!(parse_size("lots").is_err());
    }
}
