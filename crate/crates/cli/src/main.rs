use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use pathcache::harness::output::{read_report, write_outputs, OutputOptions};
use pathcache::harness::{execute, ScenarioConfig};
use pathcache::metrics::{average_decomposition, compare_runs, traffic_reduction, HTTP_ONLY};
use pathcache::topology::{load_topology, validate_reference_profile, NodeKind};
use pathcache::{DeploymentMode, RunReport};

#[derive(Parser)]
#[command(name = "pathcache", version, about = "Simulate on-path sensor data caching")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its report files.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// legacy, edge_only or edge_plus_core; overrides the config.
        #[arg(long)]
        mode: Option<DeploymentMode>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; defaults to the config's `output_dir`, then
        /// `out/<name>-<mode>`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the signaling message trace (trace.csv).
        #[arg(long)]
        trace: bool,
        /// Also write the final cache snapshot (caches.json).
        #[arg(long)]
        snapshot: bool,
        /// Also write the gateway's readings (readings.jsonl).
        #[arg(long)]
        dump_readings: bool,
    },
    /// Compare report.json files of the same scenario; the first is the baseline.
    Compare {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        /// Print the full comparison as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Check a topology file.
    ValidateTopology {
        file: PathBuf,
        /// Also check the reference link-rate profile (10 Mb/s uplink,
        /// 100 Mb/s core, 1 Gb/s edge, two core links per edge).
        #[arg(long)]
        reference: bool,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            config,
            mode,
            seed,
            out,
            trace,
            snapshot,
            dump_readings,
        } => {
            let opts = OutputOptions {
                trace,
                cache_snapshot: snapshot,
                readings: dump_readings,
            };
            run(&config, mode, seed, out, opts)
        }
        Command::Compare { reports, json } => compare(&reports, json),
        Command::ValidateTopology { file, reference } => validate(&file, reference),
    }
}

fn run(
    config: &Path,
    mode: Option<DeploymentMode>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    opts: OutputOptions,
) -> Result<()> {
    let mut cfg = ScenarioConfig::load(config)?;
    if let Some(m) = mode {
        cfg.mode = m;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let dir = match (out, &cfg.output_dir) {
        (Some(d), _) => d,
        (None, Some(d)) => cfg.resolve(d),
        (None, None) => PathBuf::from("out").join(format!("{}-{}", cfg.name, cfg.mode)),
    };
    let run = execute(&cfg)?;
    let written = write_outputs(&dir, &run, opts)?;
    print_summary(&run.report);
    for p in written {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn print_summary(r: &RunReport) {
    let totals = r.totals();
    println!("scenario {} mode {} seed {}", r.shape.name, r.mode, r.seed);
    println!("requests {}", r.requests.len());
    if let Ok(m) = average_decomposition(r) {
        println!(
            "mean download {:.3} s (creation {:.4}, signaling {:.3}, processing {:.3}, http {:.3})",
            m.total, m.t_creation, m.t_signaling, m.t_processing, m.t_http
        );
    }
    let times = &r.series.download_times;
    let max = times.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = times.iter().copied().fold(f64::INFINITY, f64::min);
    println!("download time min {min:.3} s max {max:.3} s");
    println!(
        "byte-hops http {} signaling {} bundle {}",
        totals.http, totals.signaling, totals.bundle
    );
    let warnings: usize = r.requests.iter().map(|q| q.warnings.len()).sum();
    if warnings > 0 {
        println!("warnings {warnings} (see report.json)");
    }
}

fn compare(paths: &[PathBuf], json: bool) -> Result<()> {
    let reports = paths
        .iter()
        .map(|p| read_report(p))
        .collect::<Result<Vec<_>, _>>()?;
    let cmp = compare_runs(&reports)?;
    if json {
        println!("{}", cmp.to_json());
        return Ok(());
    }
    println!(
        "{:<16} {:>10} {:>10} {:>10} {:>10} {:>10} {:>16} {:>10}",
        "mode", "mean_s", "creation", "signaling", "process", "http", "http_byte_hops", "reduction"
    );
    for (i, r) in reports.iter().enumerate() {
        let m = &cmp.means[i];
        let http = cmp.http_curves[i].last().copied().unwrap_or(0);
        println!(
            "{:<16} {:>10.3} {:>10.4} {:>10.3} {:>10.3} {:>10.3} {:>16} {:>9.1}%",
            r.mode.as_str(),
            m.total,
            m.t_creation,
            m.t_signaling,
            m.t_processing,
            m.t_http,
            http,
            cmp.reduction_vs_first[i] * 100.0
        );
    }
    // saving between consecutive programmable runs, e.g. edge_only -> edge_plus_core
    for w in reports.windows(2) {
        if w[0].mode.is_programmable() && w[1].mode.is_programmable() {
            let a = w[0].totals().filtered(HTTP_ONLY);
            let b = w[1].totals().filtered(HTTP_ONLY);
            println!(
                "{} -> {}: {} byte-hops saved ({:.1}%)",
                w[0].mode,
                w[1].mode,
                a as i128 - b as i128,
                traffic_reduction(&w[0], &w[1])? * 100.0
            );
        }
    }
    Ok(())
}

fn validate(file: &Path, reference: bool) -> Result<()> {
    let text = std::fs::read_to_string(file).with_context(|| format!("reading {}", file.display()))?;
    let t = load_topology(&text).with_context(|| format!("invalid topology {}", file.display()))?;
    println!(
        "{}: {} nodes ({} core, {} edge, {} end, {} control), {} links, gateway {}",
        file.display(),
        t.nodes().count(),
        t.kind_count(NodeKind::Core),
        t.kind_count(NodeKind::Edge),
        t.kind_count(NodeKind::End),
        t.kind_count(NodeKind::Control),
        t.links().len(),
        t.gateway()
    );
    if reference {
        let profile = validate_reference_profile(&t);
        for v in &profile.violations {
            println!("violation: {v}");
        }
        if !profile.is_clean() {
            bail!("{} reference-profile violations", profile.violations.len());
        }
        println!("reference profile ok");
    }
    Ok(())
}
