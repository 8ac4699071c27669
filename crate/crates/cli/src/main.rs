//! `spinshield`: batch driver for the spin-cluster coherence experiments.

mod config;
mod error;
mod output;

use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::json;
use spinshield::dynamics::{evolve, IntegratorConfig};
use spinshield::experiments::{
    calibrate_pair_convention, compare_extremes, heat_comparison, linspace, measure, reproduce_table, sweep,
    CalibrationReport, Protection, Settings, SweepGrid, SweepStatistic, TableId, TableKind, TABLE_COLUMNS, TABLE_SIZES,
};
use spinshield::metrics::{MetricName, Observable};
use spinshield::model::{ClusterSpec, NoiseChannel, PairConvention};
use spinshield::topology::{enumerate_buffer_graphs, extreme_geometry, geometry_count, BufferGraph, Extreme};

use config::{resolve_geometry, CommonArgs, ConventionChoice, Resolved};
use error::CliError;
use output::{csv_string, to_json, write_atomic};

#[derive(Debug, Parser)]
#[command(name = "spinshield", version, about = "Coherence protection of a central spin by buffer-spin networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// List buffer graphs on N labelled vertices within the planar edge cap.
    Enumerate {
        /// Keep only planar graphs.
        #[arg(long)]
        planar: bool,
        /// One representative per isomorphism class.
        #[arg(long = "up-to-iso")]
        up_to_iso: bool,
    },
    /// Integrate one cluster and write the metric time series.
    Simulate {
        #[arg(long, value_delimiter = ',')]
        metrics: Option<Vec<String>>,
    },
    /// Protection times of one cluster.
    ProtectionTime {
        #[arg(long, value_delimiter = ',')]
        metrics: Option<Vec<String>>,
    },
    /// Empty versus maximal geometries over a range of buffer sizes.
    Compare {
        /// Buffer sizes N, default 2..=6.
        #[arg(long = "n-range", value_delimiter = ',')]
        n_range: Option<Vec<usize>>,
    },
    /// Window-mean C_L1 over a (g, γ) grid.
    Sweep {
        #[arg(long = "g-values", value_delimiter = ',')]
        g_values: Option<Vec<f64>>,
        #[arg(long = "gamma-values", value_delimiter = ',')]
        gamma_values: Option<Vec<f64>>,
        /// Second geometry to subtract cellwise.
        #[arg(long)]
        minus: Option<String>,
        /// Buffer size for `--minus empty|maximal`.
        #[arg(long = "minus-n")]
        minus_n: Option<usize>,
    },
    /// Heat exchanged by the central spin for the empty and maximal geometries.
    Heat {
        /// Fraction of the erasure cost whose arrival time is compared.
        #[arg(long)]
        fraction: Option<f64>,
    },
    /// Recompute one of the four comparison tables.
    ReproduceTable {
        /// I, II, III or IV.
        table: String,
    },
}

#[derive(Serialize)]
struct Summary<'a, T: Serialize> {
    command: &'a str,
    code_version: &'static str,
    seedless: bool,
    settings: &'a Settings,
    pair_convention: PairConvention,
    calibration: Option<&'a CalibrationReport>,
    files: Vec<String>,
    result: T,
}

struct Run {
    resolved: Resolved,
    calibration: Option<CalibrationReport>,
}

impl Run {
    fn settings(&self) -> &Settings {
        &self.resolved.settings
    }

    fn write(&self, name: &str, contents: &str, files: &mut Vec<String>) -> Result<(), CliError> {
        write_atomic(&self.resolved.output_dir, name, contents)?;
        files.push(name.to_string());
        Ok(())
    }

    fn finish<T: Serialize>(&self, command: &str, mut files: Vec<String>, result: T) -> Result<(), CliError> {
        let name = format!("{command}_summary.json");
        files.push(name.clone());
        let summary = Summary {
            command,
            code_version: env!("CARGO_PKG_VERSION"),
            seedless: true,
            settings: self.settings(),
            pair_convention: self.settings().pair_convention,
            calibration: self.calibration.as_ref(),
            files,
            result,
        };
        let text = to_json(&summary);
        write_atomic(&self.resolved.output_dir, &name, &text)?;
        println!("{}", serde_json::to_string(&json!({ "summary": self.resolved.output_dir.join(&name) })).unwrap());
        Ok(())
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            e.exit();
        }
        Err(e) => {
            let err = CliError::Parse(e.to_string().trim().to_string());
            eprintln!("{}", err.record());
            std::process::exit(err.exit_code());
        }
    };
    if let Err(err) = run(cli) {
        eprintln!("{}", err.record());
        std::process::exit(err.exit_code());
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let table = match &cli.command {
        Command::ReproduceTable { table } => {
            Some(table.parse::<TableId>().map_err(|e| CliError::Parse(e.to_string()))?)
        }
        _ => None,
    };
    let channel = table.map_or(NoiseChannel::Thermal, TableId::channel);
    let resolved = Resolved::build(&cli.common, channel)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(resolved.jobs.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Validation(format!("thread pool: {e}")))?;
    pool.install(|| dispatch(cli.command, resolved, table))
}

fn dispatch(command: Command, resolved: Resolved, table: Option<TableId>) -> Result<(), CliError> {
    let mut run = Run {
        resolved,
        calibration: None,
    };
    let simulates = !matches!(command, Command::Enumerate { .. });
    if simulates && run.resolved.convention == ConventionChoice::Calibrate && !run.resolved.dry_run {
        let mut base = Settings {
            initial_buffer: run.settings().initial_buffer,
            ..Settings::default()
        };
        base.dt = run.settings().dt;
        base.frame = run.settings().frame;
        let report = calibrate_pair_convention(&base)?;
        match report.chosen {
            Some(c) => run.resolved.settings.pair_convention = c,
            None => eprintln!("calibration: no convention within tolerance; keeping {}", run.settings().pair_convention),
        }
        run.calibration = Some(report);
    }
    match command {
        Command::Enumerate { planar, up_to_iso } => cmd_enumerate(&run, planar, up_to_iso),
        Command::Simulate { metrics } => cmd_simulate(&run, metrics),
        Command::ProtectionTime { metrics } => cmd_protection(&run, metrics),
        Command::Compare { n_range } => cmd_compare(&run, n_range),
        Command::Sweep {
            g_values,
            gamma_values,
            minus,
            minus_n,
        } => cmd_sweep(&run, g_values, gamma_values, minus, minus_n),
        Command::Heat { fraction } => cmd_heat(&run, fraction),
        Command::ReproduceTable { .. } => cmd_table(&run, table.expect("parsed above")),
    }
}

fn parse_metrics(flag: Option<Vec<String>>, file: &Option<Vec<MetricName>>, default: &[MetricName]) -> Result<Vec<MetricName>, CliError> {
    match flag {
        Some(names) => names
            .iter()
            .map(|m| m.trim().parse::<MetricName>().map_err(|e| CliError::Parse(e.to_string())))
            .collect(),
        None => Ok(file.clone().unwrap_or_else(|| default.to_vec())),
    }
}

fn cluster(run: &Run) -> Result<(ClusterSpec, IntegratorConfig), CliError> {
    let spec = run.settings().spec(run.resolved.graph()?);
    spec.validate().map_err(|e| CliError::Validation(e.to_string()))?;
    let cfg = run.settings().integrator(&spec)?;
    Ok((spec, cfg))
}

fn cluster_for(settings: &Settings, graph: BufferGraph) -> Result<(ClusterSpec, IntegratorConfig), CliError> {
    let spec = settings.spec(graph);
    spec.validate().map_err(|e| CliError::Validation(e.to_string()))?;
    let cfg = settings.integrator(&spec)?;
    Ok((spec, cfg))
}

fn dry_run(steps: u64, runs: usize) -> Result<(), CliError> {
    println!(
        "{}",
        json!({ "dry_run": true, "valid": true, "runs": runs, "estimated_steps": steps })
    );
    Ok(())
}

fn cmd_enumerate(run: &Run, planar: bool, up_to_iso: bool) -> Result<(), CliError> {
    let n = run
        .resolved
        .n
        .ok_or_else(|| CliError::Validation("enumerate needs --n".into()))?;
    let count = geometry_count(n).map_err(|e| CliError::Validation(e.to_string()))?;
    if run.resolved.dry_run {
        println!("{}", json!({ "dry_run": true, "valid": true, "geometry_count": count.to_string() }));
        return Ok(());
    }
    let graphs = enumerate_buffer_graphs(n, planar, up_to_iso).map_err(|e| CliError::Validation(e.to_string()))?;
    for g in &graphs {
        println!("{g}");
    }
    let rows = graphs
        .iter()
        .enumerate()
        .map(|(k, g)| vec![k.to_string(), g.edge_count().to_string(), g.to_string()]);
    let mut files = Vec::new();
    run.write(&format!("graphs_n{n}.csv"), &csv_string(&["index", "edge_count", "graph"], rows), &mut files)?;
    run.finish(
        "enumerate",
        files,
        json!({ "n": n, "planar": planar, "up_to_iso": up_to_iso, "listed": graphs.len(), "geometry_count": count.to_string() }),
    )
}

fn cmd_simulate(run: &Run, metrics: Option<Vec<String>>) -> Result<(), CliError> {
    let metrics = parse_metrics(metrics, &run.resolved.metrics, &MetricName::TABLE)?;
    let (spec, cfg) = cluster(run)?;
    if run.resolved.dry_run {
        return dry_run(cfg.total_steps(), 1);
    }
    let observables: Vec<Observable> = metrics.iter().map(|&m| Observable::central(m)).collect();
    let ev = evolve(&spec, &cfg, &observables)?;
    let last: Vec<String> = metrics
        .iter()
        .map(|m| format!("{m}={:e}", ev.series.column(m.key()).and_then(|c| c.last()).copied().unwrap_or(f64::NAN)))
        .collect();
    println!("t={} {}", ev.final_time, last.join(" "));
    let mut files = Vec::new();
    run.write("timeseries.csv", &ev.series.to_csv(), &mut files)?;
    run.finish(
        "simulate",
        files,
        json!({ "spec": spec, "integrator": cfg, "samples": ev.series.len(), "diagnostics": ev.diagnostics }),
    )
}

fn cmd_protection(run: &Run, metrics: Option<Vec<String>>) -> Result<(), CliError> {
    let metrics = parse_metrics(metrics, &run.resolved.metrics, &[MetricName::CohL1])?;
    let (spec, cfg) = cluster(run)?;
    if run.resolved.dry_run {
        return dry_run(cfg.total_steps(), 1);
    }
    let s = run.settings();
    let m = measure(&spec, &cfg, &metrics, s.threshold, &[], s.window)?;
    let n_total = spec.n_spins().to_string();
    let geometry = spec.graph.to_string();
    let rows: Vec<Vec<String>> = m
        .protection
        .iter()
        .map(|p| {
            let (time, until) = match p.outcome {
                Protection::Detected { time, confirmed_until } => (time.to_string(), confirmed_until.to_string()),
                Protection::NotDetected { .. } => (String::new(), String::new()),
            };
            println!("{} {}: protection_time={time} confirmed_until={until}", spec.graph, p.metric);
            vec![n_total.clone(), geometry.clone(), p.metric.to_string(), p.threshold.to_string(), time, until]
        })
        .collect();
    let header = ["n_total", "geometry", "metric", "threshold", "protection_time", "confirmed_until"];
    let mut files = Vec::new();
    run.write("protection_time.csv", &csv_string(&header, rows), &mut files)?;
    run.finish("protection-time", files, json!({ "spec": spec, "integrator": cfg, "measurement": m }))
}

fn buffer_range(run: &Run, flag: Option<Vec<usize>>) -> Vec<usize> {
    flag.or(run.resolved.n_range.clone()).unwrap_or_else(|| (2..=6).collect())
}

fn estimate_extremes(settings: &Settings, n_buffers: &[usize]) -> Result<u64, CliError> {
    let mut steps = 0;
    for &n in n_buffers {
        for which in [Extreme::Empty, Extreme::Maximal] {
            let graph = extreme_geometry(n, which).map_err(|e| CliError::Validation(e.to_string()))?;
            steps += cluster_for(settings, graph)?.1.total_steps();
        }
    }
    Ok(steps)
}

fn cmd_compare(run: &Run, n_range: Option<Vec<usize>>) -> Result<(), CliError> {
    let buffers = buffer_range(run, n_range);
    let metrics = run.resolved.metrics.clone().unwrap_or_else(|| MetricName::TABLE.to_vec());
    if run.resolved.dry_run {
        return dry_run(estimate_extremes(run.settings(), &buffers)?, 2 * buffers.len());
    }
    let cmp = compare_extremes(&buffers, &metrics, &metrics, run.settings())?;
    for r in &cmp.runs {
        let cells: Vec<String> = r
            .measurement
            .protection
            .iter()
            .map(|p| format!("{}={}", p.metric, p.time().map_or("-".into(), |t| t.to_string())))
            .collect();
        println!("N+1={} {}: {}", r.n_total, r.geometry, cells.join(" "));
    }
    let argmax: Vec<_> = metrics
        .iter()
        .map(|&m| json!({ "metric": m, "protection_argmax_maximal": cmp.protection_argmax(m, Extreme::Maximal), "window_argmax_maximal": cmp.window_argmax(m, Extreme::Maximal) }))
        .collect();
    let mut files = Vec::new();
    run.write("protection_times.csv", &cmp.protection_csv(None), &mut files)?;
    run.write("window_means.csv", &cmp.window_csv(), &mut files)?;
    run.finish("compare", files, json!({ "argmax": argmax, "runs": cmp.runs }))
}

fn cmd_sweep(
    run: &Run,
    g_values: Option<Vec<f64>>,
    gamma_values: Option<Vec<f64>>,
    minus: Option<String>,
    minus_n: Option<usize>,
) -> Result<(), CliError> {
    let r = &run.resolved;
    let geometry = resolve_geometry(r.geometry.as_deref(), r.n.or(Some(4)))?;
    let grid = SweepGrid {
        g_values: g_values.or(r.g_values.clone()).unwrap_or_else(|| linspace(0.001, 0.004, 5)),
        gamma_values: gamma_values
            .or(r.gamma_values.clone())
            .unwrap_or_else(|| linspace(0.00025, 0.001, 5)),
        geometry,
        statistic: SweepStatistic::WindowMeanL1,
    };
    grid.validate()?;
    let minus = minus
        .or(r.minus.clone())
        .map(|m| resolve_geometry(Some(&m), minus_n))
        .transpose()?;
    let geometries: Vec<&BufferGraph> = std::iter::once(&grid.geometry).chain(minus.as_ref()).collect();
    for g in &geometries {
        run.settings().spec((*g).clone()).validate().map_err(|e| CliError::Validation(e.to_string()))?;
    }
    if run.resolved.dry_run {
        let mut steps = 0;
        let mut local = *run.settings();
        local.t_max = local.window.1;
        for g in &geometries {
            for &gv in &grid.g_values {
                for &gm in &grid.gamma_values {
                    local.g = gv;
                    local.noise.gamma = gm;
                    steps += cluster_for(&local, (*g).clone())?.1.total_steps();
                }
            }
        }
        return dry_run(steps, geometries.len() * grid.g_values.len() * grid.gamma_values.len());
    }
    let main = sweep(&grid, run.settings())?;
    let mut files = Vec::new();
    run.write("sweep.csv", &main.to_csv(), &mut files)?;
    let mut failures = main.failures();
    let mut difference = None;
    if let Some(other) = minus {
        let other_grid = SweepGrid {
            geometry: other,
            ..grid.clone()
        };
        let sub = sweep(&other_grid, run.settings())?;
        failures += sub.failures();
        let diff = main.difference(&sub)?;
        run.write("sweep_minus.csv", &sub.to_csv(), &mut files)?;
        run.write("sweep_difference.csv", &diff.to_csv(), &mut files)?;
        difference = Some(diff);
    }
    let shown = difference.as_ref().unwrap_or(&main);
    for c in &shown.cells {
        match &c.value {
            Ok(v) => println!("g={} gamma={} value={v:e}", c.g, c.gamma),
            Err(e) => println!("g={} gamma={} failed: {e}", c.g, c.gamma),
        }
    }
    run.finish(
        "sweep",
        files,
        json!({ "grid": grid, "failed_cells": failures, "cells": main.cells, "difference": difference.map(|d| d.cells) }),
    )
}

fn cmd_heat(run: &Run, fraction: Option<f64>) -> Result<(), CliError> {
    let n = run.resolved.n.unwrap_or(4);
    let fraction = fraction.unwrap_or(run.resolved.fraction);
    if run.resolved.dry_run {
        if !(2..=5).contains(&n) {
            return Err(CliError::Validation(format!("heat comparison needs N in 2..=5, got {n}")));
        }
        return dry_run(estimate_extremes(run.settings(), &[n])?, 2);
    }
    let h = heat_comparison(n, run.settings(), fraction)?;
    for t in [&h.empty, &h.maximal] {
        println!(
            "{}: Q(final)={} reach({fraction}*E_c)={}",
            t.geometry,
            t.final_heat,
            t.reach_time.map_or("-".into(), |x| x.to_string())
        );
    }
    let mut files = Vec::new();
    run.write("heat.csv", &h.to_csv(), &mut files)?;
    run.finish(
        "heat",
        files,
        json!({
            "n_buffer": n,
            "erasure_cost": h.erasure_cost,
            "fraction": fraction,
            "final_heat": { "empty": h.empty.final_heat, "maximal": h.maximal.final_heat },
            "reach_time": { "empty": h.empty.reach_time, "maximal": h.maximal.reach_time },
            "delay": h.delay(),
            "converged": h.both_converged(),
        }),
    )
}

fn cmd_table(run: &Run, table: TableId) -> Result<(), CliError> {
    if run.settings().noise.channel != table.channel() {
        return Err(CliError::Validation(format!("table {table} needs the {} channel", table.channel())));
    }
    let buffers: Vec<usize> = TABLE_SIZES.iter().map(|n| n - 1).collect();
    if run.resolved.dry_run {
        let mut local = *run.settings();
        if table.kind() == TableKind::WindowMean {
            local.t_max = local.window.1;
        }
        return dry_run(estimate_extremes(&local, &buffers)?, 2 * buffers.len());
    }
    let rep = reproduce_table(table, run.settings())?;
    for (n, values) in &rep.rows {
        let cells: Vec<String> = values
            .iter()
            .map(|v| v.map_or("-".to_string(), |v| format!("{v:.4e}")))
            .collect();
        println!("N+1={n}: {}", cells.join(" "));
    }
    let deviations: Vec<_> = rep
        .rows
        .iter()
        .flat_map(|(n, _)| {
            let rep = &rep;
            TABLE_COLUMNS.iter().map(move |&(m, which)| {
                let value = rep.value(*n, m, which);
                let reference = rep.reference_value(*n, m, which);
                let rel = value.zip(reference).map(|(v, r)| (v - r) / r);
                json!({ "n_total": n, "metric": m, "geometry": which, "value": value, "reference": reference, "relative_deviation": rel })
            })
        })
        .collect();
    let mut files = Vec::new();
    run.write(&format!("table_{table}.csv"), &rep.to_csv(), &mut files)?;
    run.write(&format!("table_{table}_long.csv"), &rep.to_long_csv(), &mut files)?;
    run.finish("reproduce-table", files, json!({ "table": table, "cells": deviations }))
}
