use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use draec::io::{write_trace, write_wav, Encoding};
use draec::pipeline::{process_wav, AlgorithmVariant, NormTrace, PipelineOptions, TraceMode};

use crate::grid::run_config;
use crate::{io_error, CliError, CliResult, ConfigArgs};

pub const ENHANCED: &str = "enhanced.wav";
pub const INTERMEDIATE: &str = "intermediate.wav";
pub const TRACE: &str = "trace.bin";
pub const NORMS: &str = "norms.csv";
pub const RUN_CONFIG: &str = "run.toml";

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TraceArg {
    Off,
    /// Mean weight norms every `--norm-stride` frames.
    Norms,
    /// Every per-frame filter, needed for shadow metrics.
    Full,
}

#[derive(Args)]
#[command(group(clap::ArgGroup::new("input").required(true).args(["scene", "mics"])))]
pub struct ProcessArgs {
    /// Scene directory written by `simulate`.
    #[arg(long, value_name = "DIR", conflicts_with_all = ["mics", "playback"])]
    pub scene: Option<PathBuf>,
    /// Multichannel microphone WAV.
    #[arg(long, value_name = "WAV", requires = "playback")]
    pub mics: Option<PathBuf>,
    /// Mono loudspeaker playback WAV.
    #[arg(long, value_name = "WAV", requires = "mics")]
    pub playback: Option<PathBuf>,
    /// Variants, comma separated, or `all`. Defaults to the configured variant.
    #[arg(long, value_delimiter = ',', value_name = "LIST")]
    pub variant: Vec<String>,
    #[arg(long, value_enum, default_value_t = TraceArg::Norms)]
    pub trace: TraceArg,
    #[arg(long, default_value_t = 10, value_name = "FRAMES")]
    pub norm_stride: usize,
    /// Output directory; each variant writes into its own subdirectory.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

pub fn parse_variants(
    names: &[String],
    fallback: AlgorithmVariant,
) -> CliResult<Vec<AlgorithmVariant>> {
    if names.is_empty() {
        return Ok(vec![fallback]);
    }
    if names.iter().any(|n| n == "all") {
        return Ok(AlgorithmVariant::all().to_vec());
    }
    let mut out: Vec<AlgorithmVariant> = Vec::new();
    for n in names {
        let v: AlgorithmVariant = n.parse().map_err(CliError::config)?;
        if !out.contains(&v) {
            out.push(v);
        }
    }
    Ok(out)
}

fn write_norms(path: &Path, norms: &NormTrace) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_error(path, e))?;
    let err = |e: csv::Error| io_error(path, e);
    w.write_record(["stage", "frame", "mic", "mean_norm"])
        .map_err(err)?;
    for stage in 0..norms.stages.len() {
        for snap in 0..norms.snapshots() {
            for mic in 0..norms.mics {
                w.write_record([
                    stage.to_string(),
                    (snap * norms.stride).to_string(),
                    mic.to_string(),
                    norms.mean_norm(stage, snap, mic).to_string(),
                ])
                .map_err(err)?;
            }
        }
    }
    w.flush().map_err(|e| io_error(path, e))
}

pub fn run(config: &ConfigArgs, args: &ProcessArgs) -> CliResult<()> {
    let run = run_config(config)?;
    let variants = parse_variants(&args.variant, run.variant)?;
    let (mics, playback) = match (&args.scene, &args.mics, &args.playback) {
        (Some(dir), _, _) => (dir.join("mics.wav"), dir.join("playback.wav")),
        (None, Some(m), Some(p)) => (m.clone(), p.clone()),
        _ => {
            return Err(CliError::usage(
                "usage",
                "give --scene or both --mics and --playback",
            ))
        }
    };
    let trace = match args.trace {
        TraceArg::Off => TraceMode::Off,
        TraceArg::Full => TraceMode::Full,
        TraceArg::Norms if args.norm_stride == 0 => {
            return Err(CliError::usage("usage", "--norm-stride must be at least 1"))
        }
        TraceArg::Norms => TraceMode::Norms {
            stride: args.norm_stride,
        },
    };
    let opts = PipelineOptions { trace };
    for variant in variants {
        let dir = args.out.join(variant.name());
        std::fs::create_dir_all(&dir).map_err(|e| io_error(&dir, e))?;
        let mut cfg = run.clone();
        cfg.variant = variant;
        let processed = process_wav(&mics, &playback, &dir.join(ENHANCED), &cfg, variant, &opts)?;
        if let Some(mid) = &processed.intermediate {
            write_wav(
                &dir.join(INTERMEDIATE),
                mid,
                cfg.stft.sample_rate_hz,
                Encoding::Float32,
            )?;
        }
        if let Some(weights) = &processed.output.weights {
            write_trace(&dir.join(TRACE), weights)?;
        }
        if let Some(norms) = &processed.output.norms {
            write_norms(&dir.join(NORMS), norms)?;
        }
        let path = dir.join(RUN_CONFIG);
        std::fs::write(&path, cfg.to_toml()?).map_err(|e| io_error(&path, e))?;
        println!("{}: {}", variant.name(), dir.display());
    }
    Ok(())
}
