//! Command-line front end for the splitting-selection toolkit.
//!
//! Emits plot-ready CSV or JSON: analytic curves, the per-Q optimum table,
//! p_e sweeps with Monte Carlo columns, simulation reports, and single-run
//! protocol traces. No plotting dependency; pipe the output anywhere.

// Validation guards are written `!(x > 0.0)` so NaN inputs are rejected
// along with non-positive ones.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use splitsel::analysis::{
    avg_slots_asym_markov, avg_slots_asym_markov_truncated, avg_slots_asym_recursive_truncated,
    avg_slots_finite, avg_slots_q2_markov, avg_slots_q_recursive, upper_bound, SeriesControl,
};
use splitsel::metrics::{metric_model, DiscreteMetricModel};
use splitsel::montecarlo::{estimate, estimate_discrete, estimate_model, trace_run, MetricSource};
use splitsel::optimize::{greedy_gap, optimal_pe, table1_with, DEFAULT_XTOL};

#[derive(Parser)]
#[command(
    name = "splitsel",
    version,
    about = "Splitting-based best-Q node selection: analysis, optimization, and simulation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Output format.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Write the output to FILE instead of stdout.
    #[arg(long, global = true, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Analytic average slots; finite-population value when --n is given,
    /// asymptotic otherwise (with the chain form alongside for Q = 1, 2).
    Analyze(AnalyzeArgs),
    /// Optimum contention load and average slots for Q = 1..=QMAX.
    Table(TableArgs),
    /// Sweep the contention load, pairing analytic and simulated columns.
    Sweep(SweepArgs),
    /// Monte Carlo estimate, or a single-run protocol trace with --trace.
    Simulate(SimulateArgs),
    /// Optimum contention load for one Q, with the greedy-setting penalty.
    Optimize(OptimizeArgs),
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Contention load parameter.
    #[arg(long)]
    pe: f64,
    /// Number of nodes to select.
    #[arg(long, default_value_t = 1)]
    q: u32,
    /// Finite population size; omit for the asymptotic value.
    #[arg(long)]
    n: Option<u64>,
    /// Series truncation tolerance.
    #[arg(long, default_value_t = SeriesControl::DEFAULT_TOL)]
    tol: f64,
}

#[derive(Args)]
struct TableArgs {
    /// Largest selection count to tabulate.
    #[arg(long)]
    qmax: u32,
    /// Search bracket for the optimum, as LOW,HIGH.
    #[arg(long, value_parser = parse_bracket, default_value = "0.5,2.0")]
    bracket: (f64, f64),
    /// Optimum location tolerance.
    #[arg(long, default_value_t = DEFAULT_XTOL)]
    xtol: f64,
    /// Series truncation tolerance.
    #[arg(long, default_value_t = SeriesControl::DEFAULT_TOL)]
    tol: f64,
}

#[derive(Args)]
struct SweepArgs {
    /// First contention load of the grid.
    #[arg(long)]
    pe_from: f64,
    /// Last contention load of the grid (inclusive).
    #[arg(long)]
    pe_to: f64,
    /// Grid step.
    #[arg(long)]
    pe_step: f64,
    /// Number of nodes to select.
    #[arg(long, default_value_t = 1)]
    q: u32,
    /// Population sizes to simulate, comma separated; omit for
    /// analytic-only rows.
    #[arg(long, value_delimiter = ',')]
    n: Vec<u64>,
    /// Monte Carlo trials per grid point.
    #[arg(long, default_value_t = 1_000_000)]
    trials: u64,
    /// Seed for the per-trial random streams.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Also emit the closed-form upper bound at this tangent point plus the
    /// 4-term truncated lower bounds (Q = 1 only).
    #[arg(long, value_name = "K0")]
    bounds: Option<f64>,
    /// Series truncation tolerance.
    #[arg(long, default_value_t = SeriesControl::DEFAULT_TOL)]
    tol: f64,
}

#[derive(Args)]
struct SimulateArgs {
    /// Population size.
    #[arg(long)]
    n: u64,
    /// Number of nodes to select.
    #[arg(long, default_value_t = 1)]
    q: u32,
    /// Contention load parameter.
    #[arg(long)]
    pe: f64,
    /// Monte Carlo trials.
    #[arg(long, default_value_t = 1_000_000)]
    trials: u64,
    /// Seed for the per-trial random streams.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Discrete metric pmf, comma separated (e.g. 0.2,0.5,0.3); metrics are
    /// made continuous by proportional expansion.
    #[arg(long, value_delimiter = ',', value_name = "P1,P2,...")]
    pmf: Vec<f64>,
    /// Continuous metric model from the built-in registry (uniform,
    /// exponential); sampling goes through the model's CCDF instead of the
    /// direct normalized path.
    #[arg(long, value_name = "NAME", conflicts_with = "pmf")]
    model: Option<String>,
    /// Run a single instance and emit its protocol transcript instead of
    /// aggregate statistics.
    #[arg(long)]
    trace: bool,
}

#[derive(Args)]
struct OptimizeArgs {
    /// Number of nodes to select.
    #[arg(long)]
    q: u32,
    /// Search bracket for the optimum, as LOW,HIGH.
    #[arg(long, value_parser = parse_bracket, default_value = "0.5,2.0")]
    bracket: (f64, f64),
    /// Optimum location tolerance.
    #[arg(long, default_value_t = DEFAULT_XTOL)]
    xtol: f64,
    /// Series truncation tolerance.
    #[arg(long, default_value_t = SeriesControl::DEFAULT_TOL)]
    tol: f64,
}

fn parse_bracket(s: &str) -> Result<(f64, f64), String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        return Err("expected LOW,HIGH".into());
    }
    let low: f64 = parts[0].trim().parse().map_err(|_| "LOW is not a number")?;
    let high: f64 = parts[1]
        .trim()
        .parse()
        .map_err(|_| "HIGH is not a number")?;
    Ok((low, high))
}

/// Rendered cell. Floats are rounded to 6 significant digits before either
/// rendering, so CSV and JSON carry identical values.
#[derive(Clone)]
enum Cell {
    Empty,
    Int(u64),
    Float(f64),
    Str(String),
}

struct OutTable {
    columns: &'static [&'static str],
    rows: Vec<Vec<Cell>>,
}

fn sig_round(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let digits = 5 - x.abs().log10().floor() as i32;
    let factor = 10f64.powi(digits);
    (x * factor).round() / factor
}

fn sig_string(x: f64) -> String {
    if x == 0.0 {
        return "0.00000".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let decimals = (5 - x.abs().log10().floor() as i32).max(0) as usize;
    format!("{:.*}", decimals, sig_round(x))
}

fn render(table: &OutTable, format: Format) -> String {
    match format {
        Format::Csv => {
            let mut out = String::new();
            out.push_str(&table.columns.join(","));
            out.push('\n');
            for row in &table.rows {
                let line: Vec<String> = row
                    .iter()
                    .map(|cell| match cell {
                        Cell::Empty => String::new(),
                        Cell::Int(v) => v.to_string(),
                        Cell::Float(v) => sig_string(*v),
                        Cell::Str(s) => s.clone(),
                    })
                    .collect();
                out.push_str(&line.join(","));
                out.push('\n');
            }
            out
        }
        Format::Json => {
            use serde_json::{Map, Number, Value};
            let rows: Vec<Value> = table
                .rows
                .iter()
                .map(|row| {
                    let mut obj = Map::new();
                    for (name, cell) in table.columns.iter().zip(row) {
                        let value = match cell {
                            Cell::Empty => Value::Null,
                            Cell::Int(v) => Value::Number((*v).into()),
                            Cell::Float(v) => Number::from_f64(sig_round(*v))
                                .map(Value::Number)
                                .unwrap_or(Value::Null),
                            Cell::Str(s) => Value::String(s.clone()),
                        };
                        obj.insert((*name).to_string(), value);
                    }
                    Value::Object(obj)
                })
                .collect();
            let mut out = serde_json::to_string_pretty(&Value::Array(rows)).expect("json");
            out.push('\n');
            out
        }
    }
}

fn series_control(tol: f64) -> Result<SeriesControl> {
    SeriesControl::with_tol(tol).map_err(|e| anyhow!("--tol: {e}"))
}

fn cmd_analyze(args: &AnalyzeArgs) -> Result<OutTable> {
    if !(args.pe > 0.0) {
        bail!("--pe must be positive (got {})", args.pe);
    }
    if args.q < 1 {
        bail!("--q must be at least 1");
    }
    let ctl = series_control(args.tol)?;
    let columns: &[&str] = &["pe", "q", "n", "slots", "slots_markov", "abs_diff"];
    let (n_cell, slots, markov) = match args.n {
        Some(n) => {
            if args.q != 1 {
                bail!("--n: the finite-population expression covers --q 1 only");
            }
            let v = avg_slots_finite(n, args.pe).with_context(|| "--n/--pe")?;
            (Cell::Int(n), v, None)
        }
        None => {
            let v = avg_slots_q_recursive(args.q, args.pe, &ctl)?;
            let markov = match args.q {
                1 => Some(avg_slots_asym_markov(args.pe, &ctl)?),
                2 => Some(avg_slots_q2_markov(args.pe, &ctl)?),
                _ => None,
            };
            (Cell::Empty, v, markov)
        }
    };
    let (markov_cell, diff_cell) = match markov {
        Some(m) => (Cell::Float(m), Cell::Float((m - slots).abs())),
        None => (Cell::Empty, Cell::Empty),
    };
    Ok(OutTable {
        columns,
        rows: vec![vec![
            Cell::Float(args.pe),
            Cell::Int(args.q as u64),
            n_cell,
            Cell::Float(slots),
            markov_cell,
            diff_cell,
        ]],
    })
}

fn cmd_table(args: &TableArgs) -> Result<OutTable> {
    let ctl = series_control(args.tol)?;
    let rows = table1_with(args.qmax, args.bracket, args.xtol, &ctl)
        .with_context(|| "--qmax/--bracket/--xtol")?;
    Ok(OutTable {
        columns: &["q", "pe_star", "m_star", "improvement_pct"],
        rows: rows
            .iter()
            .map(|row| {
                vec![
                    Cell::Int(row.q as u64),
                    Cell::Float(row.p_e_star),
                    Cell::Float(row.m_star),
                    row.improvement
                        .map(|f| Cell::Float(100.0 * f))
                        .unwrap_or(Cell::Empty),
                ]
            })
            .collect(),
    })
}

fn cmd_sweep(args: &SweepArgs) -> Result<OutTable> {
    if !(args.pe_step > 0.0) {
        bail!("--pe-step must be positive (got {})", args.pe_step);
    }
    if args.pe_to < args.pe_from || !(args.pe_from > 0.0) {
        bail!(
            "--pe-from/--pe-to define an empty or invalid range ({}, {})",
            args.pe_from,
            args.pe_to
        );
    }
    let ctl = series_control(args.tol)?;
    let steps = ((args.pe_to - args.pe_from) / args.pe_step + 1e-9).floor() as usize;
    let grid: Vec<f64> = (0..=steps)
        .map(|i| args.pe_from + i as f64 * args.pe_step)
        .collect();
    if grid.is_empty() {
        bail!("--pe-from/--pe-to/--pe-step produce an empty grid");
    }
    if args.bounds.is_some() && args.q != 1 {
        bail!("--bounds applies to --q 1 only");
    }
    let populations: Vec<Option<u64>> = if args.n.is_empty() {
        vec![None]
    } else {
        args.n.iter().map(|&n| Some(n)).collect()
    };

    let columns: &[&str] = &[
        "pe",
        "n",
        "q",
        "analytic",
        "simulated",
        "ci95",
        "bound_upper",
        "lower_eq2",
        "lower_eq3",
    ];
    let mut rows = Vec::new();
    for &pe in &grid {
        let bounds = args
            .bounds
            .map(|k0| -> Result<(f64, f64, f64)> {
                Ok((
                    upper_bound(pe, k0).with_context(|| "--bounds")?,
                    avg_slots_asym_recursive_truncated(pe, 4)?,
                    avg_slots_asym_markov_truncated(pe, 4)?,
                ))
            })
            .transpose()?;
        for &n in &populations {
            let analytic = match (n, args.q) {
                (Some(n), 1) => avg_slots_finite(n, pe).with_context(|| "--n/--pe")?,
                _ => avg_slots_q_recursive(args.q, pe, &ctl).with_context(|| "--q/--pe")?,
            };
            let (sim_cell, ci_cell) = match n {
                Some(n) => {
                    let stats = estimate(n, args.q, pe, args.trials, args.seed)
                        .with_context(|| "--n/--q/--trials")?;
                    (
                        Cell::Float(stats.mean_slots),
                        Cell::Float(stats.ci95_half_width),
                    )
                }
                None => (Cell::Empty, Cell::Empty),
            };
            let (ub, l2, l3) = match bounds {
                Some((ub, l2, l3)) => (Cell::Float(ub), Cell::Float(l2), Cell::Float(l3)),
                None => (Cell::Empty, Cell::Empty, Cell::Empty),
            };
            rows.push(vec![
                Cell::Float(pe),
                n.map(Cell::Int).unwrap_or(Cell::Empty),
                Cell::Int(args.q as u64),
                Cell::Float(analytic),
                sim_cell,
                ci_cell,
                ub,
                l2,
                l3,
            ]);
        }
    }
    Ok(OutTable { columns, rows })
}

fn parse_pmf(values: &[f64]) -> Result<Option<DiscreteMetricModel>> {
    if values.is_empty() {
        return Ok(None);
    }
    DiscreteMetricModel::new(values.to_vec())
        .map(Some)
        .map_err(|e| anyhow!("--pmf: {e}"))
}

fn cmd_simulate(args: &SimulateArgs) -> Result<OutTable> {
    if !(args.pe > 0.0) {
        bail!("--pe must be positive (got {})", args.pe);
    }
    if args.q as u64 > args.n {
        bail!("--q must not exceed --n ({} > {})", args.q, args.n);
    }
    let pmf = parse_pmf(&args.pmf)?;
    let model = args
        .model
        .as_deref()
        .map(|name| {
            metric_model(name).ok_or_else(|| {
                anyhow!("--model: unknown metric model '{name}' (try uniform, exponential)")
            })
        })
        .transpose()?;
    let source = match (&pmf, &model) {
        (Some(pmf), _) => MetricSource::Discrete(pmf),
        (None, Some(model)) => MetricSource::Model(model.as_ref()),
        (None, None) => MetricSource::Uniform,
    };

    if args.trace {
        let (_, transcript) = trace_run(source, args.n, args.q, args.pe, args.seed)
            .with_context(|| "--n/--q/--pe")?;
        return Ok(OutTable {
            columns: &[
                "slot_index",
                "interval_start",
                "interval_width",
                "sigma",
                "feedback",
                "selected_count",
            ],
            rows: transcript
                .iter()
                .map(|entry| {
                    vec![
                        Cell::Int(entry.slot),
                        Cell::Float(entry.interval_start),
                        Cell::Float(entry.interval_width),
                        Cell::Str(entry.half.to_string()),
                        Cell::Str(entry.feedback.to_string()),
                        Cell::Int(entry.selected_count as u64),
                    ]
                })
                .collect(),
        });
    }

    let stats = match (&pmf, &model) {
        (Some(pmf), _) => estimate_discrete(pmf, args.n, args.q, args.pe, args.trials, args.seed),
        (None, Some(model)) => estimate_model(
            model.as_ref(),
            args.n,
            args.q,
            args.pe,
            args.trials,
            args.seed,
        ),
        (None, None) => estimate(args.n, args.q, args.pe, args.trials, args.seed),
    }
    .with_context(|| "--n/--q/--trials")?;
    Ok(OutTable {
        columns: &["n", "q", "pe", "mean", "stderr", "ci95", "trials", "seed"],
        rows: vec![vec![
            Cell::Int(args.n),
            Cell::Int(args.q as u64),
            Cell::Float(args.pe),
            Cell::Float(stats.mean_slots),
            Cell::Float(stats.std_error),
            Cell::Float(stats.ci95_half_width),
            Cell::Int(stats.trials),
            Cell::Int(stats.seed),
        ]],
    })
}

fn cmd_optimize(args: &OptimizeArgs) -> Result<OutTable> {
    let ctl = series_control(args.tol)?;
    let row = optimal_pe(args.q, args.bracket, args.xtol, &ctl)
        .with_context(|| "--q/--bracket/--xtol")?;
    let gap = greedy_gap(args.q, &ctl)?;
    Ok(OutTable {
        columns: &[
            "q",
            "pe_star",
            "m_star",
            "improvement_pct",
            "greedy_gap_pct",
        ],
        rows: vec![vec![
            Cell::Int(row.q as u64),
            Cell::Float(row.p_e_star),
            Cell::Float(row.m_star),
            row.improvement
                .map(|f| Cell::Float(100.0 * f))
                .unwrap_or(Cell::Empty),
            Cell::Float(100.0 * gap),
        ]],
    })
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let table = match &cli.command {
        Command::Analyze(args) => cmd_analyze(args)?,
        Command::Table(args) => cmd_table(args)?,
        Command::Sweep(args) => cmd_sweep(args)?,
        Command::Simulate(args) => cmd_simulate(args)?,
        Command::Optimize(args) => cmd_optimize(args)?,
    };
    let rendered = render(&table, cli.format);
    match &cli.out {
        Some(path) => std::fs::write(path, rendered)
            .with_context(|| format!("--out: cannot write {}", path.display()))?,
        None => print!("{rendered}"),
    }
    Ok(())
}
