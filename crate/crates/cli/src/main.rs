//! Command-line driver: single runs, convergence studies and marker-only
//! tracking, with JSON/CSV/SVG output.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;
use log::{error, info};
use serde_json::json;

use oseen_cutfem::geometry::fit_periodic_spline;
use oseen_cutfem::harness::{convergence_study, interface_distance, reference_flow, CaseId};
use oseen_cutfem::solver::{track_interface, FlowCase, InterfaceSnapshot, RunConfig, RunResult};
use oseen_cutfem::{Error, Result};

#[derive(Parser, Debug)]
#[command(
    name = "oseen-cutfem",
    version,
    about = "Unfitted Oseen solver with a tracked interface",
    allow_negative_numbers = true
)]
struct Cli {
    /// Velocity degree and BDF order.
    #[arg(long, value_parser = clap::value_parser!(u8).range(2..=4))]
    k: u8,

    /// Cells per side of the unit square (h = tau = 1/nc).
    #[arg(long, default_value_t = 16)]
    nc: usize,

    /// Final time.
    #[arg(long = "T", default_value_t = 1.5)]
    t_final: f64,

    /// Nitsche penalty.
    #[arg(long, default_value_t = 1e3)]
    gamma0: f64,

    /// Ghost-penalty scale.
    #[arg(long, default_value_t = 1.0)]
    gamma1: f64,

    #[arg(long, default_value = "oseen-paper", value_parser = parse_case)]
    case: CaseId,

    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,

    /// Comma-separated snapshot times.
    #[arg(long, value_delimiter = ',')]
    snapshots: Vec<f64>,

    /// Volume quadrature order (default 2k + 2).
    #[arg(long)]
    quad_order: Option<usize>,

    /// Recorded in the config; every run is deterministic.
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Marker spacing factor in eta = c * tau^max(1, k/3).
    #[arg(long, default_value_t = 0.5)]
    eta_factor: f64,

    /// Convergence study over nc = 16, 32 instead of a single run.
    #[arg(long, conflicts_with = "levels")]
    study: bool,

    /// Add nc = 64 to the study.
    #[arg(long, requires = "study")]
    fine: bool,

    /// Convergence study over explicit levels, e.g. 8,16,32.
    #[arg(long, value_delimiter = ',')]
    levels: Vec<usize>,
}

fn parse_case(s: &str) -> std::result::Result<CaseId, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

enum Outcome {
    Ok,
    Failed,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::Failed) => ExitCode::from(1),
        Err(Error::Config(msg)) => {
            eprintln!("error: invalid configuration: {msg}");
            ExitCode::from(2)
        }
        Err(e) => {
            error!("{e}");
            ExitCode::from(1)
        }
    }
}

fn config(cli: &Cli) -> RunConfig {
    let mut cfg = RunConfig::new(cli.k as usize, cli.nc, cli.t_final);
    cfg.gamma0 = cli.gamma0;
    cfg.gamma1 = cli.gamma1;
    cfg.eta_factor = cli.eta_factor;
    cfg.quad_order = cli.quad_order;
    cfg.seed = cli.seed;
    cfg.snapshot_times = cli.snapshots.clone();
    cfg
}

fn execute(cli: &Cli) -> Result<Outcome> {
    let cfg = config(cli);
    let case = cli.case.build(cfg.k);
    fs::create_dir_all(&cli.out)?;
    if cli.case == CaseId::TrackingOnly {
        return tracking(cli, cfg, case.as_ref());
    }
    let levels = if !cli.levels.is_empty() {
        cli.levels.clone()
    } else if cli.study {
        if cli.fine {
            vec![16, 32, 64]
        } else {
            vec![16, 32]
        }
    } else {
        let result = oseen_cutfem::solver::run(&cfg, case.as_ref())?;
        write_result(&cli.out, &result)?;
        println!(
            "{} k={} nc={} T={}: e_u0={:.4e} e_u1={:.4e} e_p0={:.4e} e_p1={:.4e}",
            result.case,
            cfg.k,
            cfg.nc,
            cfg.t_final,
            result.errors.eu0,
            result.errors.eu1,
            result.errors.ep0,
            result.errors.ep1
        );
        return Ok(report_failure(&result));
    };
    let (table, results) = convergence_study(&cfg, case.as_ref(), &levels)?;
    let mut outcome = Outcome::Ok;
    for r in &results {
        write_result(&cli.out, r)?;
        if let Outcome::Failed = report_failure(r) {
            outcome = Outcome::Failed;
        }
    }
    fs::write(
        cli.out.join(format!("eoc_{}_k{}.csv", case.name(), cfg.k)),
        table.to_csv(),
    )?;
    print!("{table}");
    Ok(outcome)
}

fn report_failure(r: &RunResult) -> Outcome {
    match &r.failure {
        Some(msg) => {
            error!("nc={} failed: {msg}", r.config.nc);
            Outcome::Failed
        }
        None => Outcome::Ok,
    }
}

fn stem(case: &str, cfg: &RunConfig) -> String {
    format!("{case}_k{}_nc{}", cfg.k, cfg.nc)
}

fn write_result(dir: &Path, r: &RunResult) -> Result<()> {
    let stem = stem(&r.case, &r.config);
    fs::write(
        dir.join(format!("{stem}.json")),
        serde_json::to_string_pretty(r)?,
    )?;
    fs::write(
        dir.join(format!("{stem}_diagnostics.csv")),
        r.diagnostics_csv(),
    )?;
    write_snapshots(dir, &stem, &r.snapshots)?;
    info!("wrote {}/{stem}.*", dir.display());
    Ok(())
}

fn write_snapshots(dir: &Path, stem: &str, snaps: &[InterfaceSnapshot]) -> Result<()> {
    for s in snaps {
        let name = format!("{stem}_interface_step{:05}", s.step);
        fs::write(dir.join(format!("{name}.csv")), s.to_csv())?;
        fs::write(dir.join(format!("{name}.svg")), s.to_svg(512.0))?;
    }
    Ok(())
}

/// Markers only: no flow solve, snapshots at the requested times
/// (default 0, 0.5, 1, 1.5) and the interface error against a fine
/// reference flow at `T`.
fn tracking(cli: &Cli, mut cfg: RunConfig, case: &dyn FlowCase) -> Result<Outcome> {
    if cfg.snapshot_times.is_empty() {
        cfg.snapshot_times = vec![0.0, 0.5, 1.0, 1.5];
    }
    cfg.validate(case.nu())?;
    let tau = cfg.tau();
    let steps = cfg.num_steps();
    let chains = track_interface(case, cfg.k, tau, steps, cfg.eta())?;
    let mut snaps = Vec::new();
    let mut areas = Vec::with_capacity(chains.len());
    for (n, chain) in chains.iter().enumerate() {
        let s = fit_periodic_spline(chain)?;
        let t = n as f64 * tau;
        areas.push(s.enclosed_area());
        if cfg
            .snapshot_times
            .iter()
            .any(|&x| (x - t).abs() < 0.5 * tau)
        {
            snaps.push(InterfaceSnapshot::from_spline(n, t, &s));
        }
    }
    let last = fit_periodic_spline(chains.last().expect("initial chain"))?;
    let exact = reference_flow(case, steps as f64 * tau, 20 * steps.max(50));
    let err = interface_distance(case, &last, &exact);

    let stem = stem("tracking-only", &cfg);
    let mut csv = String::from("step,time,markers,enclosed_area\n");
    for (n, (c, a)) in chains.iter().zip(&areas).enumerate() {
        csv.push_str(&format!(
            "{n},{:.12e},{},{a:.12e}\n",
            n as f64 * tau,
            c.len()
        ));
    }
    fs::write(cli.out.join(format!("{stem}_markers.csv")), csv)?;
    write_snapshots(&cli.out, &stem, &snaps)?;
    let summary = json!({
        "case": "tracking-only",
        "config": cfg,
        "config_hash": cfg.hash(),
        "steps": steps,
        "interface_error": err,
        "final_markers": chains.last().map(|c| c.len()),
        "snapshots": snaps,
    });
    fs::write(
        cli.out.join(format!("{stem}.json")),
        serde_json::to_string_pretty(&summary)?,
    )?;
    println!(
        "tracking-only k={} nc={} T={}: interface error {err:.4e}",
        cfg.k, cfg.nc, cfg.t_final
    );
    Ok(Outcome::Ok)
}
