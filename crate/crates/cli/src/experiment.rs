use std::path::Path;

use draec::config::RunConfig;
use draec::metrics::{evaluate, run_and_evaluate, MetricsReport};
use draec::pipeline::{
    process_signals, AlgorithmVariant, Estimator, PipelineOptions, Topology, TraceMode,
};
use draec::scene::generate_scene;
use rayon::prelude::*;

use crate::evaluate::append_csv;
use crate::grid::{run_config, Cell, ExperimentSpec, GridArgs, Job};
use crate::{io_error, CliError, CliResult, ConfigArgs};

pub const RUNS_CSV: &str = "runs.csv";
pub const TABLE_CSV: &str = "table.csv";
pub const CURVES_CSV: &str = "erle_curves.csv";
pub const PARTIAL: &str = "PARTIAL";

pub const TABLE_HEADER: [&str; 12] = [
    "rt60",
    "ser_db",
    "sir_db",
    "variant",
    "trials",
    "sier_improvement_mean_db",
    "sier_improvement_std_db",
    "sdr_improvement_mean_db",
    "sdr_improvement_std_db",
    "erle_steady_mean_db",
    "erle_steady_std_db",
    "sier_ordering",
];

fn run_job(
    spec: &ExperimentSpec,
    run: &RunConfig,
    variants: &[AlgorithmVariant],
    job: &Job,
) -> draec::Result<Vec<MetricsReport>> {
    let cfg = spec.scene_config(&run.scene, &job.cell);
    let scene = generate_scene(&cfg, run.stft.sample_rate_hz, job.seed)?;
    variants
        .iter()
        .map(|v| {
            let mut r = run.clone();
            r.variant = *v;
            run_and_evaluate(&scene, &r, *v).map(|(_, report)| report)
        })
        .collect()
}

fn run_tracking(
    spec: &ExperimentSpec,
    run: &RunConfig,
    variants: &[AlgorithmVariant],
) -> draec::Result<Vec<MetricsReport>> {
    let cfg = spec.tracking_config(&run.scene);
    let scene = generate_scene(&cfg, run.stft.sample_rate_hz, spec.seed)?;
    let opts = PipelineOptions {
        trace: TraceMode::Off,
    };
    variants
        .iter()
        .map(|v| {
            let processed = process_signals(&scene.mics, &scene.playback, run, *v, &opts)?;
            evaluate(&scene, &processed, run, v.name())
        })
        .collect()
}

/// Sample mean and standard deviation (n - 1); absent values are skipped.
fn mean_std(values: impl Iterator<Item = Option<f64>>) -> (Option<f64>, Option<f64>) {
    let v: Vec<f64> = values.flatten().collect();
    if v.is_empty() {
        return (None, None);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let std = if v.len() > 1 {
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (Some(mean), Some(std))
}

fn fmt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_default()
}

/// Whether mean SIER gain of the joint filter beats AEC-then-DR, which in
/// turn beats DR-then-AEC, for one estimator.
fn ordering(means: &[(AlgorithmVariant, Option<f64>)], estimator: Estimator) -> &'static str {
    let get = |t: Topology| {
        means
            .iter()
            .find(|(v, _)| *v == AlgorithmVariant::new(estimator, t))
            .and_then(|(_, m)| *m)
    };
    match (
        get(Topology::Joint),
        get(Topology::AecThenDr),
        get(Topology::DrThenAec),
    ) {
        (Some(j), Some(a), Some(d)) if j >= a && a >= d => "holds",
        (Some(_), Some(_), Some(_)) => "violated",
        _ => "n/a",
    }
}

fn table_rows(
    cell: &Cell,
    variants: &[AlgorithmVariant],
    trials: &[&Vec<MetricsReport>],
) -> Vec<Vec<String>> {
    let stats: Vec<_> = variants
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let pick =
                |f: fn(&MetricsReport) -> Option<f64>| mean_std(trials.iter().map(|t| f(&t[i])));
            (
                *v,
                pick(|r| r.sier_improvement_db),
                pick(|r| r.sdr_improvement_db),
                pick(|r| r.erle_steady_db),
            )
        })
        .collect();
    let sier_means: Vec<_> = stats.iter().map(|s| (s.0, s.1 .0)).collect();
    stats
        .iter()
        .map(|(v, sier, sdr, erle)| {
            vec![
                format!("{}", cell.rt60),
                format!("{}", cell.ser_db),
                cell.sir_db.map(|s| s.to_string()).unwrap_or_default(),
                v.name().to_string(),
                trials.len().to_string(),
                fmt(sier.0),
                fmt(sier.1),
                fmt(sdr.0),
                fmt(sdr.1),
                fmt(erle.0),
                fmt(erle.1),
                ordering(&sier_means, v.estimator).to_string(),
            ]
        })
        .collect()
}

fn write_curves(path: &Path, reports: &[MetricsReport]) -> CliResult<()> {
    let rows: Vec<Vec<String>> = reports
        .iter()
        .flat_map(|r| {
            r.erle_curve.iter().map(move |p| {
                vec![
                    r.variant.clone(),
                    format!("{:.4}", p.time_s),
                    format!("{:.4}", p.erle_db),
                    fmt(r.change_point_s),
                ]
            })
        })
        .collect();
    append_csv(
        path,
        &rows,
        &["variant", "time_s", "erle_db", "change_point_s"],
    )
}

fn remove_if_present(path: &Path) -> CliResult<()> {
    match std::fs::remove_file(path) {
        Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(io_error(path, e)),
        _ => Ok(()),
    }
}

pub fn run(config: &ConfigArgs, grid: &GridArgs, no_tracking: bool, out: &Path) -> CliResult<()> {
    let run = run_config(config)?;
    let mut spec = grid.resolve()?;
    spec.tracking &= !no_tracking;
    let variants = spec.validate()?;
    std::fs::create_dir_all(out).map_err(|e| io_error(out, e))?;
    for name in [RUNS_CSV, TABLE_CSV, CURVES_CSV, PARTIAL] {
        remove_if_present(&out.join(name))?;
    }
    let spec_text = toml::to_string(&spec).map_err(|e| CliError::runtime("spec", e.to_string()))?;
    std::fs::write(out.join("spec.toml"), spec_text).map_err(|e| io_error(out, e))?;
    std::fs::write(out.join("config.toml"), run.to_toml()?).map_err(|e| io_error(out, e))?;

    let jobs = spec.jobs();
    let (results, tracking) = rayon::join(
        || {
            jobs.par_iter()
                .map(|job| run_job(&spec, &run, &variants, job))
                .collect::<Vec<_>>()
        },
        || spec.tracking.then(|| run_tracking(&spec, &run, &variants)),
    );

    let mut failures = Vec::new();
    let mut run_rows = Vec::new();
    for (job, result) in jobs.iter().zip(&results) {
        match result {
            Ok(reports) => {
                for r in reports {
                    let mut row = vec![job.cell_index.to_string(), job.trial.to_string()];
                    row.extend(r.csv_record());
                    run_rows.push(row);
                }
            }
            Err(e) => failures.push(format!(
                "cell {} trial {} (seed {}): {}: {e}",
                job.cell_index,
                job.trial,
                job.seed,
                e.kind()
            )),
        }
    }
    let mut header = vec!["cell", "trial"];
    header.extend(MetricsReport::CSV_HEADER);
    append_csv(&out.join(RUNS_CSV), &run_rows, &header)?;

    // Only cells whose every trial succeeded enter the table.
    let mut table = Vec::new();
    for (c, cell) in spec.cells().iter().enumerate() {
        let trials: Vec<&Vec<MetricsReport>> = jobs
            .iter()
            .zip(&results)
            .filter(|(j, _)| j.cell_index == c)
            .map(|(_, r)| r.as_ref().ok())
            .collect::<Option<_>>()
            .unwrap_or_default();
        if !trials.is_empty() {
            table.extend(table_rows(cell, &variants, &trials));
        }
    }
    append_csv(&out.join(TABLE_CSV), &table, &TABLE_HEADER)?;

    match tracking {
        Some(Ok(reports)) => write_curves(&out.join(CURVES_CSV), &reports)?,
        Some(Err(e)) => failures.push(format!("tracking run: {}: {e}", e.kind())),
        None => {}
    }

    if !failures.is_empty() {
        let path = out.join(PARTIAL);
        std::fs::write(&path, failures.join("\n") + "\n").map_err(|e| io_error(&path, e))?;
        return Err(CliError::runtime(
            "partial",
            format!(
                "{} of {} runs failed, partial results in {}; first: {}",
                failures.len(),
                jobs.len() + usize::from(spec.tracking),
                out.display(),
                failures[0]
            ),
        ));
    }
    println!(
        "{} table rows written to {}",
        table.len(),
        out.join(TABLE_CSV).display()
    );
    Ok(())
}
