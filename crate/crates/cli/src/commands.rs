//! Implementations of the five subcommands.

use crate::config_file::FileConfig;
use crate::output::RunSummary;
use crate::{PartitionArgs, ReportArgs, RunArgs, SweepArgs};
use anyhow::{bail, Context, Result};
use fgdro_core::datagen::{dirichlet_partition, imbalance_from_sizes, DirichletPartitionSpec};
use fgdro_core::metrics::{read_history_csv, write_history_csv};
use fgdro_core::validation::run_all_checks;
use fgdro_core::{validate_config, EngineOptions, FederationRun, ProxDiagnostic};
use serde::Serialize;
use std::fmt::Write as _;
use std::path::Path;
use std::process::ExitCode;

const SWEEP_KEYS: [&str; 5] = ["rounds", "local_steps", "lambda", "cvar_k", "eta"];

fn engine_options(args: &RunArgs) -> Result<EngineOptions> {
    let inner_step_size = args
        .inner_step_size
        .unwrap_or(0.5 / (1.0 + args.rho_hat));
    Ok(EngineOptions {
        parallel: args.parallel,
        iterate_log_stride: args.iterate_log,
        record_round_states: false,
        measure_wall_time: args.timing,
        prox: ProxDiagnostic::new(args.rho_hat, args.inner_steps, inner_step_size)?,
    })
}

/// Apply overrides and the optional schedule, then validate. Violations
/// are fatal and name the offending fields.
fn effective_config(
    mut file_cfg: FileConfig,
    overrides: &[String],
    schedule: Option<&str>,
) -> Result<FileConfig> {
    for entry in overrides {
        let (key, value) = entry
            .split_once('=')
            .with_context(|| format!("override {entry:?} is not key=value"))?;
        file_cfg.run.set_field(key.trim(), value.trim())?;
    }
    match schedule {
        None => {}
        Some("paper") => file_cfg.run.apply_paper_schedule(),
        Some(other) => bail!("unknown schedule {other:?} (supported: paper)"),
    }
    let violations = validate_config(&file_cfg.run);
    if !violations.is_empty() {
        let list: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
        bail!("invalid configuration: {}", list.join("; "));
    }
    Ok(file_cfg)
}

fn execute_run(file_cfg: &FileConfig, options: &EngineOptions) -> Result<FederationRun> {
    let (clients, initial_w) = file_cfg.build_clients()?;
    Ok(fgdro_core::run(&file_cfg.run, clients, &initial_w, options)?)
}

fn write_artifacts(
    out_dir: &Path,
    file_cfg: &FileConfig,
    overrides: &[String],
    schedule: Option<&str>,
    run: &FederationRun,
) -> Result<RunSummary> {
    std::fs::create_dir_all(out_dir)?;
    write_history_csv(&out_dir.join("metrics.csv"), &run.history)?;
    let summary = RunSummary::new(file_cfg, overrides, schedule, run);
    summary.save(&out_dir.join("summary.json"))?;
    run.to_checkpoint().save(&out_dir.join("checkpoint.json"))?;
    Ok(summary)
}

pub fn cmd_run(args: &RunArgs) -> Result<ExitCode> {
    let file_cfg = effective_config(
        FileConfig::load(&args.config)?,
        &args.overrides,
        args.schedule.as_deref(),
    )?;
    let options = engine_options(args)?;
    let run = execute_run(&file_cfg, &options)?;
    let summary = write_artifacts(
        &args.out,
        &file_cfg,
        &args.overrides,
        args.schedule.as_deref(),
        &run,
    )?;

    let last = run.history.last().unwrap();
    println!(
        "run {} algorithm {} rounds {} local_steps {}",
        summary.run_id, file_cfg.run.algorithm, file_cfg.run.rounds, file_cfg.run.local_steps
    );
    println!("final worst_client_loss {}", last.worst_client_loss);
    println!("final avg_client_loss {}", last.avg_client_loss);
    println!("final objective_value {}", last.objective_value);
    println!("final stationarity {}", last.exact_grad_norm_sq);
    println!("comm_scalars_cumulative {}", last.comm_scalars_cumulative);
    println!("artifacts in {}", args.out.display());
    Ok(ExitCode::SUCCESS)
}

struct SweepCell {
    name: String,
    assignments: Vec<(String, String)>,
}

fn sweep_grid(vary: &[String]) -> Result<Vec<SweepCell>> {
    if vary.is_empty() {
        bail!("sweep requires at least one --vary key=v1,v2,...");
    }
    let mut axes: Vec<(String, Vec<String>)> = Vec::new();
    for entry in vary {
        let (key, values) = entry
            .split_once('=')
            .with_context(|| format!("--vary {entry:?} is not key=v1,v2,..."))?;
        let key = key.trim().to_string();
        if !SWEEP_KEYS.contains(&key.as_str()) {
            bail!("--vary supports {SWEEP_KEYS:?}, got {key:?}");
        }
        let values: Vec<String> = values.split(',').map(|v| v.trim().to_string()).collect();
        if values.is_empty() || values.iter().any(|v| v.is_empty()) {
            bail!("--vary {key} has an empty value list");
        }
        axes.push((key, values));
    }

    let mut cells = vec![SweepCell { name: String::new(), assignments: Vec::new() }];
    for (key, values) in &axes {
        let mut next = Vec::with_capacity(cells.len() * values.len());
        for cell in &cells {
            for value in values {
                let mut assignments = cell.assignments.clone();
                assignments.push((key.clone(), value.clone()));
                let mut name = cell.name.clone();
                if !name.is_empty() {
                    name.push('_');
                }
                write!(name, "{key}={value}").unwrap();
                next.push(SweepCell { name, assignments });
            }
        }
        cells = next;
    }
    Ok(cells)
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<ExitCode> {
    let base = FileConfig::load(&args.run.config)?;
    let cells = sweep_grid(&args.vary)?;
    std::fs::create_dir_all(&args.run.out)?;

    let varied_keys: Vec<String> = {
        let mut keys = Vec::new();
        for cell in &cells[..1] {
            for (k, _) in &cell.assignments {
                keys.push(k.clone());
            }
        }
        keys
    };

    let mut index = String::new();
    write!(
        index,
        "cell,{},status,objective_value,exact_grad_norm_sq,worst_client_loss,avg_client_loss,comm_scalars_cumulative\n",
        varied_keys.join(",")
    )?;

    let mut failures = 0usize;
    for cell in &cells {
        let outcome = (|| -> Result<RunSummary> {
            let mut file_cfg = base.clone();
            for (key, value) in &cell.assignments {
                file_cfg.run.set_field(key, value)?;
            }
            if let Some(budget) = args.budget {
                let steps = file_cfg.run.local_steps as u64;
                file_cfg.run.rounds = (budget / steps).max(1) as u32;
            }
            let file_cfg = effective_config(
                file_cfg,
                &args.run.overrides,
                args.run.schedule.as_deref(),
            )?;
            let options = engine_options(&args.run)?;
            let run = execute_run(&file_cfg, &options)?;
            write_artifacts(
                &args.run.out.join(&cell.name),
                &file_cfg,
                &args.run.overrides,
                args.run.schedule.as_deref(),
                &run,
            )
        })();

        let values: Vec<&str> = cell.assignments.iter().map(|(_, v)| v.as_str()).collect();
        match outcome {
            Ok(summary) => {
                let m = &summary.final_metrics;
                writeln!(
                    index,
                    "{},{},ok,{},{},{},{},{}",
                    cell.name,
                    values.join(","),
                    m.objective_value,
                    m.exact_grad_norm_sq,
                    m.worst_client_loss,
                    m.avg_client_loss,
                    m.comm_scalars_cumulative
                )?;
                println!("cell {} ok", cell.name);
            }
            Err(err) => {
                failures += 1;
                writeln!(index, "{},{},error,,,,,", cell.name, values.join(","))?;
                println!("cell {} error: {err:#}", cell.name);
            }
        }
    }

    std::fs::write(args.run.out.join("index.csv"), index)?;
    println!(
        "sweep complete: {} cells, {} failed, index in {}",
        cells.len(),
        failures,
        args.run.out.join("index.csv").display()
    );
    Ok(if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

pub fn cmd_validate() -> Result<ExitCode> {
    let outcomes = run_all_checks();
    let mut failed = 0usize;
    for outcome in &outcomes {
        let tag = if outcome.passed { "PASS" } else { "FAIL" };
        println!("[{tag}] {}: {}", outcome.name, outcome.detail);
        if !outcome.passed {
            failed += 1;
        }
    }
    println!("{} checks, {} failed", outcomes.len(), failed);
    Ok(if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

#[derive(Serialize)]
struct PartitionOutput {
    alpha: f64,
    num_clients: usize,
    seed: u64,
    client_sizes: Vec<usize>,
    empty_clients: Vec<usize>,
    client_imbalance_ratio: f64,
    class_imbalance_ratio: Option<f64>,
    assignments: Vec<Vec<usize>>,
}

pub fn cmd_partition(args: &PartitionArgs) -> Result<ExitCode> {
    let labels: Vec<u32> = match (&args.labels_csv, args.classes, args.samples) {
        (Some(path), _, _) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("cannot read {}", path.display()))?;
            text.lines()
                .filter(|l| !l.trim().is_empty())
                .map(|l| {
                    l.trim()
                        .parse::<u32>()
                        .with_context(|| format!("bad label line {l:?}"))
                })
                .collect::<Result<_>>()?
        }
        (None, Some(classes), Some(samples)) => {
            if classes == 0 {
                bail!("--classes must be positive");
            }
            (0..samples).map(|i| (i % classes) as u32).collect()
        }
        _ => bail!("provide either --labels-csv or both --classes and --samples"),
    };

    let spec = DirichletPartitionSpec {
        alpha: args.alpha,
        num_clients: args.clients,
        labels: labels.clone(),
        seed: args.seed,
    };
    let partition = dirichlet_partition(&spec)?;
    let client_sizes: Vec<usize> = partition.assignments.iter().map(|a| a.len()).collect();
    let report = imbalance_from_sizes(&client_sizes, Some(&labels))?;

    let output = PartitionOutput {
        alpha: args.alpha,
        num_clients: args.clients,
        seed: args.seed,
        client_sizes: client_sizes.clone(),
        empty_clients: partition.empty_clients.clone(),
        client_imbalance_ratio: report.client_imbalance_ratio,
        class_imbalance_ratio: report.class_imbalance_ratio,
        assignments: partition.assignments,
    };

    println!("partition of {} samples over {} clients (alpha {})", labels.len(), args.clients, args.alpha);
    println!("client sizes {client_sizes:?}");
    if !output.empty_clients.is_empty() {
        println!("warning: empty clients {:?}", output.empty_clients);
    }
    println!("client_imbalance_ratio {}", output.client_imbalance_ratio);
    match output.class_imbalance_ratio {
        Some(r) => println!("class_imbalance_ratio {r}"),
        None => println!("class_imbalance_ratio n/a"),
    }
    if let Some(out) = &args.out {
        std::fs::write(out, serde_json::to_string_pretty(&output)?)?;
        println!("wrote {}", out.display());
    }
    Ok(ExitCode::SUCCESS)
}

pub fn cmd_report(args: &ReportArgs) -> Result<ExitCode> {
    if args.dirs.is_empty() {
        bail!("report requires at least one run directory");
    }
    let mut rows = Vec::new();
    for dir in &args.dirs {
        let csv_path = dir.join("metrics.csv");
        let history = read_history_csv(&csv_path)
            .with_context(|| format!("cannot read metrics from {}", dir.display()))?;
        let last = history
            .last()
            .with_context(|| format!("{} has an empty metrics history", dir.display()))?
            .clone();
        let algorithm = RunSummary::load(&dir.join("summary.json"))
            .map(|s| s.algorithm)
            .unwrap_or_else(|_| "?".to_string());
        let name = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| dir.display().to_string());
        rows.push((name, algorithm, last));
    }

    let header = format!(
        "{:<24} {:<14} {:>14} {:>14} {:>14} {:>14}",
        "run", "algorithm", "worst_loss", "avg_loss", "grad_diag", "comm_scalars"
    );
    println!("{header}");
    let mut csv = String::from("run,algorithm,worst_client_loss,avg_client_loss,exact_grad_norm_sq,comm_scalars_cumulative\n");
    for (name, algorithm, m) in &rows {
        println!(
            "{:<24} {:<14} {:>14.6e} {:>14.6e} {:>14.6e} {:>14}",
            name, algorithm, m.worst_client_loss, m.avg_client_loss, m.exact_grad_norm_sq,
            m.comm_scalars_cumulative
        );
        writeln!(
            csv,
            "{},{},{},{},{},{}",
            name, algorithm, m.worst_client_loss, m.avg_client_loss, m.exact_grad_norm_sq,
            m.comm_scalars_cumulative
        )?;
    }
    if let Some(out) = &args.out {
        std::fs::write(out, csv)?;
        println!("wrote {}", out.display());
    }
    Ok(ExitCode::SUCCESS)
}
