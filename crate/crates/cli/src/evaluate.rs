use std::fs::OpenOptions;
use std::path::{Path, PathBuf};

use clap::Args;
use draec::config::{load_config, RunConfig};
use draec::io::{read_trace, read_wav, write_wav, Encoding};
use draec::metrics::{evaluate, interior, MetricsReport};
use draec::pipeline::{FilterTrace, PipelineOutput, ProcessedAudio};
use draec::scene::{load_scene, Scene};
use draec::stft;

use crate::grid::run_config;
use crate::process::{ENHANCED, RUN_CONFIG, TRACE};
use crate::{io_error, CliError, CliResult, ConfigArgs};

pub const METRICS_JSON: &str = "metrics.json";
pub const METRICS_CSV: &str = "metrics.csv";

#[derive(Args)]
pub struct EvaluateArgs {
    /// Scene directory with ground-truth stems.
    #[arg(long, value_name = "DIR")]
    pub scene: PathBuf,
    /// A run directory written by `process`, a directory of run directories,
    /// or the scene directory itself to score the unprocessed mixture.
    #[arg(long, value_name = "DIR")]
    pub processed: PathBuf,
    /// Score this WAV instead of the run's enhanced output (no shadow metrics).
    #[arg(long, value_name = "WAV")]
    pub estimate: Option<PathBuf>,
    /// CSV file to append one row per run to [default: <processed>/metrics.csv].
    #[arg(long, value_name = "FILE")]
    pub csv: Option<PathBuf>,
    /// JSON report path for a single run [default: <run>/metrics.json].
    #[arg(long, value_name = "FILE")]
    pub json: Option<PathBuf>,
    /// Write 16-bit reference/estimate pairs (first microphone, interior
    /// region) for external perceptual scoring.
    #[arg(long, value_name = "DIR")]
    pub export_pairs: Option<PathBuf>,
}

enum Source {
    /// Output of `process`, with its config and optionally a full trace.
    Run(PathBuf),
    /// An arbitrary estimate file.
    Estimate(PathBuf),
    /// The microphone mixture scored as its own estimate.
    Unprocessed,
}

/// One scored run: what to label it and where its report goes.
struct Target {
    source: Source,
    json: PathBuf,
}

fn discover(args: &EvaluateArgs) -> CliResult<Vec<Target>> {
    let p = &args.processed;
    if let Some(est) = &args.estimate {
        return Ok(vec![Target {
            source: Source::Estimate(est.clone()),
            json: args.json.clone().unwrap_or_else(|| p.join(METRICS_JSON)),
        }]);
    }
    if p.join(ENHANCED).is_file() {
        return Ok(vec![Target {
            source: Source::Run(p.clone()),
            json: args.json.clone().unwrap_or_else(|| p.join(METRICS_JSON)),
        }]);
    }
    let mut runs: Vec<PathBuf> = std::fs::read_dir(p)
        .map_err(|e| io_error(p, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|d| d.join(ENHANCED).is_file())
        .collect();
    runs.sort();
    if !runs.is_empty() {
        if args.json.is_some() && runs.len() > 1 {
            return Err(CliError::usage(
                "usage",
                "--json needs a single run directory",
            ));
        }
        return Ok(runs
            .into_iter()
            .map(|r| Target {
                json: args.json.clone().unwrap_or_else(|| r.join(METRICS_JSON)),
                source: Source::Run(r),
            })
            .collect());
    }
    if p.join("mics.wav").is_file() {
        return Ok(vec![Target {
            source: Source::Unprocessed,
            json: args.json.clone().unwrap_or_else(|| p.join(METRICS_JSON)),
        }]);
    }
    Err(CliError::runtime(
        "missing",
        format!(
            "{}: no {ENHANCED}, run directories or mics.wav found",
            p.display()
        ),
    ))
}

fn read_estimate(path: &Path, scene: &Scene) -> CliResult<Vec<Vec<f64>>> {
    let (data, spec) = read_wav(path)?;
    if spec.sample_rate != scene.meta.sample_rate {
        return Err(CliError::runtime(
            "wav",
            format!(
                "{}: sample rate {} Hz, scene is {} Hz",
                path.display(),
                spec.sample_rate,
                scene.meta.sample_rate
            ),
        ));
    }
    Ok(data)
}

fn score(
    target: &Target,
    scene: &Scene,
    base: &RunConfig,
    overrides: &[String],
) -> CliResult<MetricsReport> {
    let (run, label, enhanced, weights) = match &target.source {
        Source::Run(dir) => {
            let cfg_path = dir.join(RUN_CONFIG);
            let run = if cfg_path.is_file() {
                load_config(Some(&cfg_path), overrides).map_err(CliError::config)?
            } else {
                base.clone()
            };
            let trace_path = dir.join(TRACE);
            let weights = if trace_path.is_file() {
                Some(read_trace(&trace_path)?)
            } else {
                None
            };
            let label = run.variant.name().to_string();
            let enhanced = read_estimate(&dir.join(ENHANCED), scene)?;
            (run, label, enhanced, weights)
        }
        Source::Estimate(path) => {
            let label = path
                .file_stem()
                .map_or("estimate".into(), |s| s.to_string_lossy().into_owned());
            (base.clone(), label, read_estimate(path, scene)?, None)
        }
        // No stages: the replayed filters are the identity.
        Source::Unprocessed => (
            base.clone(),
            "unprocessed".to_string(),
            scene.mics.clone(),
            Some(FilterTrace {
                bulk_delay: 0,
                stages: Vec::new(),
            }),
        ),
    };
    let spectrum = stft::analyze(&enhanced, &run.stft)?;
    let processed = ProcessedAudio {
        enhanced,
        intermediate: None,
        output: PipelineOutput {
            enhanced: spectrum,
            intermediate: None,
            norms: None,
            weights,
        },
    };
    let report = evaluate(scene, &processed, &run, &label)?;
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| CliError::runtime("json", e.to_string()))?;
    std::fs::write(&target.json, json).map_err(|e| io_error(&target.json, e))?;
    Ok(report)
}

fn export_pair(
    dir: &Path,
    scene: &Scene,
    label: &str,
    estimate: &[f64],
    run: &RunConfig,
) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    let r = interior(scene.len(), &run.stft);
    let fs = scene.meta.sample_rate;
    let reference = scene.stems.target_image[0][r.clone()].to_vec();
    write_wav(
        &dir.join("reference.wav"),
        &[reference],
        fs,
        Encoding::Pcm16,
    )?;
    write_wav(
        &dir.join(format!("{label}.wav")),
        &[estimate[r].to_vec()],
        fs,
        Encoding::Pcm16,
    )?;
    Ok(())
}

/// Appends rows to `path`, writing the header first when the file is new.
pub fn append_csv(path: &Path, rows: &[Vec<String>], header: &[&str]) -> CliResult<()> {
    let fresh = std::fs::metadata(path).map_or(true, |m| m.len() == 0);
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| io_error(path, e))?;
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(file);
    let err = |e: csv::Error| io_error(path, e);
    if fresh {
        w.write_record(header).map_err(err)?;
    }
    for row in rows {
        w.write_record(row).map_err(err)?;
    }
    w.flush().map_err(|e| io_error(path, e))
}

pub fn csv_header() -> Vec<&'static str> {
    let mut h = vec!["scene"];
    h.extend(MetricsReport::CSV_HEADER);
    h
}

pub fn run(config: &ConfigArgs, args: &EvaluateArgs) -> CliResult<()> {
    let base = run_config(config)?;
    let scene = load_scene(&args.scene)?;
    let targets = discover(args)?;
    let mut rows = Vec::new();
    for target in &targets {
        let report = score(target, &scene, &base, &config.overrides)?;
        if let Some(dir) = &args.export_pairs {
            let estimate = match &target.source {
                Source::Run(d) => read_estimate(&d.join(ENHANCED), &scene)?,
                Source::Estimate(p) => read_estimate(p, &scene)?,
                Source::Unprocessed => scene.mics.clone(),
            };
            export_pair(dir, &scene, &report.variant, &estimate[0], &base)?;
        }
        let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.2} dB"));
        println!(
            "{}: ERLE {} SDR {} SIER gain {}",
            report.variant,
            fmt(report.erle_steady_db),
            fmt(report.sdr_db),
            fmt(report.sier_improvement_db)
        );
        let mut row = vec![args.scene.display().to_string()];
        row.extend(report.csv_record());
        rows.push(row);
    }
    let csv_path = args
        .csv
        .clone()
        .unwrap_or_else(|| args.processed.join(METRICS_CSV));
    append_csv(&csv_path, &rows, &csv_header())
}
