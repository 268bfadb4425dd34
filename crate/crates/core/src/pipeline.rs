//! Frame-synchronous orchestration of the filter variants.
//!
//! A pipeline is an ordered list of stages. Each stage filters its
//! M-channel input with a regressor built from the (delayed) playback and the
//! delayed history of that same input, per microphone and per bin:
//!
//! * joint: one stage with playback and history taps,
//! * AEC then DR: playback-only stage, then a history-only stage fed by the
//!   echo-cancelled signals,
//! * DR then AEC: history-only stage on the raw microphones, then a
//!   playback-only stage.
//!
//! Stages with no taps are identity and are skipped, so a cascade with an
//! empty stage is the same computation as the corresponding single stage.
//! Bins are independent and run in parallel; frames within a bin are
//! sequential.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adaptive::{kalman_step, rls_step, DraecConfig, FilterState, Regressor, TapLayout};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::io;
use crate::stft::{self, Spectrogram};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Kalman,
    Rls,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    Joint,
    AecThenDr,
    DrThenAec,
}

/// One of the six estimator/topology combinations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AlgorithmVariant {
    pub estimator: Estimator,
    pub topology: Topology,
}

impl AlgorithmVariant {
    pub const fn new(estimator: Estimator, topology: Topology) -> Self {
        Self {
            estimator,
            topology,
        }
    }

    pub fn all() -> [AlgorithmVariant; 6] {
        use Estimator::*;
        use Topology::*;
        [
            Self::new(Kalman, Joint),
            Self::new(Kalman, DrThenAec),
            Self::new(Kalman, AecThenDr),
            Self::new(Rls, Joint),
            Self::new(Rls, DrThenAec),
            Self::new(Rls, AecThenDr),
        ]
    }

    /// Stable identifier, e.g. `kalman-joint`, `rls-aec-dr`.
    pub fn name(&self) -> &'static str {
        use Estimator::*;
        use Topology::*;
        match (self.estimator, self.topology) {
            (Kalman, Joint) => "kalman-joint",
            (Kalman, AecThenDr) => "kalman-aec-dr",
            (Kalman, DrThenAec) => "kalman-dr-aec",
            (Rls, Joint) => "rls-joint",
            (Rls, AecThenDr) => "rls-aec-dr",
            (Rls, DrThenAec) => "rls-dr-aec",
        }
    }
}

impl fmt::Display for AlgorithmVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AlgorithmVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AlgorithmVariant::all()
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                Error::config(
                    "variant",
                    format!(
                        "unknown variant {s:?}, expected one of {}",
                        AlgorithmVariant::all()
                            .iter()
                            .map(|v| v.name())
                            .collect::<Vec<_>>()
                            .join(", ")
                    ),
                )
            })
    }
}

impl Serialize for AlgorithmVariant {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for AlgorithmVariant {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// What to record while filtering.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceMode {
    Off,
    /// Weight norms every `stride` frames.
    Norms {
        stride: usize,
    },
    /// Every posterior weight vector, enabling shadow filtering.
    Full,
}

impl Default for TraceMode {
    fn default() -> Self {
        TraceMode::Norms { stride: 10 }
    }
}

/// Posterior weights of one stage, laid out as `[bin][frame][mic][tap]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StageTrace {
    pub layout: TapLayout,
    pub bins: usize,
    pub frames: usize,
    pub weights: Vec<Complex64>,
}

impl StageTrace {
    #[inline]
    fn offset(&self, bin: usize, frame: usize, mic: usize) -> usize {
        let l = self.layout.len();
        ((bin * self.frames + frame) * self.layout.channels + mic) * l
    }

    /// Weight vector used for `(bin, frame, mic)`.
    pub fn weights_at(&self, bin: usize, frame: usize, mic: usize) -> &[Complex64] {
        let start = self.offset(bin, frame, mic);
        &self.weights[start..start + self.layout.len()]
    }
}

/// Full-stride record of every stage's weights.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterTrace {
    pub bulk_delay: usize,
    pub stages: Vec<StageTrace>,
}

impl FilterTrace {
    /// Replays the recorded filters on a new input.
    ///
    /// Returns the output of every stage; the last entry is the final output.
    /// A missing playback reads as silence.
    pub fn apply(
        &self,
        input: &Spectrogram,
        playback: Option<&Spectrogram>,
    ) -> Result<Vec<Spectrogram>> {
        let (channels, frames, bins) = input.shape();
        let zero;
        let playback = match playback {
            Some(p) => p,
            None => {
                zero = Spectrogram::zeros(1, frames, bins);
                &zero
            }
        };
        check_playback(input, playback)?;
        let playback = delay_frames(playback, self.bulk_delay);

        let mut outputs: Vec<Spectrogram> = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            let current = outputs.last().unwrap_or(input);
            if stage.layout.channels != channels || stage.bins != bins || stage.frames != frames {
                return Err(Error::Trace(format!(
                    "trace covers {} channels x {} frames x {} bins, input is {:?}",
                    stage.layout.channels,
                    stage.frames,
                    stage.bins,
                    input.shape()
                )));
            }
            let per_bin: Vec<Vec<Vec<Complex64>>> = (0..bins)
                .into_par_iter()
                .map(|f| {
                    let x = playback.bin_series(0, f);
                    let hist: Vec<Vec<Complex64>> =
                        (0..channels).map(|m| current.bin_series(m, f)).collect();
                    let mut z = Regressor::zeros(stage.layout.len());
                    let mut out = vec![vec![ZERO; frames]; channels];
                    for t in 0..frames {
                        z.fill(&stage.layout, t, &x, &hist);
                        for (m, series) in out.iter_mut().enumerate() {
                            let w = stage.weights_at(f, t, m);
                            let filtered = w
                                .iter()
                                .zip(z.as_slice())
                                .fold(ZERO, |acc, (a, b)| acc + a.conj() * b);
                            series[t] = hist[m][t] - filtered;
                        }
                    }
                    out
                })
                .collect();
            outputs.push(scatter(&per_bin, channels, frames, bins));
        }
        if outputs.is_empty() {
            outputs.push(input.clone());
        }
        Ok(outputs)
    }
}

/// Per-stage weight norms sampled every `stride` frames, laid out as
/// `[snapshot][mic][bin]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormTrace {
    pub stride: usize,
    pub mics: usize,
    pub bins: usize,
    pub stages: Vec<Vec<f64>>,
}

impl NormTrace {
    pub fn snapshots(&self) -> usize {
        self.stages
            .first()
            .map_or(0, |s| s.len() / (self.mics * self.bins).max(1))
    }

    /// Mean weight norm across bins for `(stage, snapshot, mic)`.
    pub fn mean_norm(&self, stage: usize, snapshot: usize, mic: usize) -> f64 {
        let start = (snapshot * self.mics + mic) * self.bins;
        let s = &self.stages[stage][start..start + self.bins];
        s.iter().sum::<f64>() / self.bins as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    /// Per-microphone target estimate.
    pub enhanced: Spectrogram,
    /// First-stage output of a two-stage cascade.
    pub intermediate: Option<Spectrogram>,
    pub norms: Option<NormTrace>,
    pub weights: Option<FilterTrace>,
}

/// Options that do not change the filtered signal.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PipelineOptions {
    pub trace: TraceMode,
}

fn stage_layouts(topology: Topology, cfg: &DraecConfig) -> Vec<TapLayout> {
    let aec = TapLayout {
        history_taps: 0,
        ..cfg.layout()
    };
    let dr = TapLayout {
        playback_taps: 0,
        ..cfg.layout()
    };
    let stages = match topology {
        Topology::Joint => vec![cfg.layout()],
        Topology::AecThenDr => vec![aec, dr],
        Topology::DrThenAec => vec![dr, aec],
    };
    stages.into_iter().filter(|s| !s.is_empty()).collect()
}

fn check_playback(mics: &Spectrogram, playback: &Spectrogram) -> Result<()> {
    if playback.channels() != 1 {
        return Err(Error::ShapeMismatch(format!(
            "playback must have one channel, got {}",
            playback.channels()
        )));
    }
    if playback.frames() != mics.frames() || playback.bins() != mics.bins() {
        return Err(Error::ShapeMismatch(format!(
            "playback has {} frames x {} bins, microphones {} x {}",
            playback.frames(),
            playback.bins(),
            mics.frames(),
            mics.bins()
        )));
    }
    Ok(())
}

fn check_inputs(mics: &Spectrogram, playback: &Spectrogram, cfg: &DraecConfig) -> Result<()> {
    cfg.validate()?;
    if mics.channels() != cfg.mics {
        return Err(Error::ShapeMismatch(format!(
            "configured for {} microphones, got {}",
            cfg.mics,
            mics.channels()
        )));
    }
    check_playback(mics, playback)
}

fn delay_frames(spec: &Spectrogram, delay: usize) -> Spectrogram {
    if delay == 0 {
        return spec.clone();
    }
    let (channels, frames, bins) = spec.shape();
    let mut out = Spectrogram::zeros(channels, frames, bins);
    for c in 0..channels {
        for t in delay..frames {
            for f in 0..bins {
                out.set(c, t, f, spec.get(c, t - delay, f));
            }
        }
    }
    out
}

fn scatter(
    per_bin: &[Vec<Vec<Complex64>>],
    channels: usize,
    frames: usize,
    bins: usize,
) -> Spectrogram {
    let mut out = Spectrogram::zeros(channels, frames, bins);
    for (f, series) in per_bin.iter().enumerate() {
        for (m, s) in series.iter().enumerate() {
            out.set_bin_series(m, f, s);
        }
    }
    out
}

struct BinResult {
    out: Vec<Vec<Complex64>>,
    weights: Vec<Complex64>,
    norms: Vec<f64>,
}

struct Stage<'a> {
    layout: TapLayout,
    input: &'a Spectrogram,
    playback: &'a Spectrogram,
    cfg: &'a DraecConfig,
    estimator: Estimator,
    trace: TraceMode,
}

impl Stage<'_> {
    fn process_bin(&self, f: usize) -> Result<BinResult> {
        let channels = self.input.channels();
        let frames = self.input.frames();
        let l = self.layout.len();
        let x = self.playback.bin_series(0, f);
        let hist: Vec<Vec<Complex64>> =
            (0..channels).map(|m| self.input.bin_series(m, f)).collect();
        let mut states = (0..channels)
            .map(|_| FilterState::new(l, self.cfg))
            .collect::<Result<Vec<_>>>()?;

        let record_weights = self.trace == TraceMode::Full;
        let mut weights = if record_weights {
            Vec::with_capacity(frames * channels * l)
        } else {
            Vec::new()
        };
        let mut norms = Vec::new();
        let mut out = vec![vec![ZERO; frames]; channels];
        let mut z = Regressor::zeros(l);

        for t in 0..frames {
            z.fill(&self.layout, t, &x, &hist);
            for (m, state) in states.iter_mut().enumerate() {
                let y = hist[m][t];
                let step = match self.estimator {
                    Estimator::Kalman => kalman_step(state, &z, y, self.cfg)?,
                    Estimator::Rls => rls_step(state, &z, y, self.cfg)?,
                };
                out[m][t] = step.s_hat;
                // After a step w_prev holds the posterior weights of this frame.
                if record_weights {
                    weights.extend_from_slice(&state.w_prev);
                }
                if let TraceMode::Norms { stride } = self.trace {
                    if t % stride.max(1) == 0 {
                        norms.push(
                            state
                                .w_prev
                                .iter()
                                .map(|w| w.norm_sqr())
                                .sum::<f64>()
                                .sqrt(),
                        );
                    }
                }
            }
        }
        Ok(BinResult {
            out,
            weights,
            norms,
        })
    }

    fn run(&self) -> Result<(Spectrogram, Option<StageTrace>, Option<Vec<f64>>)> {
        let (channels, frames, bins) = self.input.shape();
        let results = (0..bins)
            .into_par_iter()
            .map(|f| self.process_bin(f))
            .collect::<Result<Vec<_>>>()?;

        let mut out = Spectrogram::zeros(channels, frames, bins);
        for (f, r) in results.iter().enumerate() {
            for (m, s) in r.out.iter().enumerate() {
                out.set_bin_series(m, f, s);
            }
        }

        let trace = (self.trace == TraceMode::Full).then(|| StageTrace {
            layout: self.layout,
            bins,
            frames,
            weights: results
                .iter()
                .flat_map(|r| r.weights.iter().copied())
                .collect(),
        });

        let norms = match self.trace {
            TraceMode::Norms { stride } => {
                let snapshots = frames.div_ceil(stride.max(1));
                let mut n = vec![0.0; snapshots * channels * bins];
                for (f, r) in results.iter().enumerate() {
                    for s in 0..snapshots {
                        for m in 0..channels {
                            n[(s * channels + m) * bins + f] = r.norms[s * channels + m];
                        }
                    }
                }
                Some(n)
            }
            _ => None,
        };
        Ok((out, trace, norms))
    }
}

fn run_stages(
    layouts: &[TapLayout],
    mics: &Spectrogram,
    playback: &Spectrogram,
    cfg: &DraecConfig,
    estimator: Estimator,
    opts: &PipelineOptions,
) -> Result<PipelineOutput> {
    check_inputs(mics, playback, cfg)?;
    let playback = delay_frames(playback, cfg.bulk_delay);

    let mut outputs: Vec<Spectrogram> = Vec::with_capacity(layouts.len());
    let mut traces = Vec::new();
    let mut norms = Vec::new();
    for layout in layouts {
        let input = outputs.last().unwrap_or(mics);
        let stage = Stage {
            layout: *layout,
            input,
            playback: &playback,
            cfg,
            estimator,
            trace: opts.trace,
        };
        let (out, trace, n) = stage.run()?;
        traces.extend(trace);
        norms.extend(n);
        outputs.push(out);
    }

    let intermediate = if outputs.len() > 1 {
        Some(outputs[0].clone())
    } else {
        None
    };
    let enhanced = outputs.pop().unwrap_or_else(|| mics.clone());
    Ok(PipelineOutput {
        enhanced,
        intermediate,
        norms: match opts.trace {
            TraceMode::Norms { stride } => Some(NormTrace {
                stride,
                mics: mics.channels(),
                bins: mics.bins(),
                stages: norms,
            }),
            _ => None,
        },
        weights: (opts.trace == TraceMode::Full).then_some(FilterTrace {
            bulk_delay: cfg.bulk_delay,
            stages: traces,
        }),
    })
}

/// Unified filter over playback and delayed microphone taps.
pub fn run_joint(
    mics: &Spectrogram,
    playback: &Spectrogram,
    cfg: &DraecConfig,
    estimator: Estimator,
    opts: &PipelineOptions,
) -> Result<PipelineOutput> {
    run_stages(
        &stage_layouts(Topology::Joint, cfg),
        mics,
        playback,
        cfg,
        estimator,
        opts,
    )
}

/// Echo cancellation, then multichannel prediction on the echo-cancelled
/// signals.
pub fn run_aec_then_dr(
    mics: &Spectrogram,
    playback: &Spectrogram,
    cfg: &DraecConfig,
    estimator: Estimator,
    opts: &PipelineOptions,
) -> Result<PipelineOutput> {
    run_stages(
        &stage_layouts(Topology::AecThenDr, cfg),
        mics,
        playback,
        cfg,
        estimator,
        opts,
    )
}

/// Multichannel prediction on the raw microphones, then echo cancellation.
pub fn run_dr_then_aec(
    mics: &Spectrogram,
    playback: &Spectrogram,
    cfg: &DraecConfig,
    estimator: Estimator,
    opts: &PipelineOptions,
) -> Result<PipelineOutput> {
    run_stages(
        &stage_layouts(Topology::DrThenAec, cfg),
        mics,
        playback,
        cfg,
        estimator,
        opts,
    )
}

/// Playback taps only.
pub fn run_aec_only(
    mics: &Spectrogram,
    playback: &Spectrogram,
    cfg: &DraecConfig,
    estimator: Estimator,
    opts: &PipelineOptions,
) -> Result<PipelineOutput> {
    let layout = TapLayout {
        history_taps: 0,
        ..cfg.layout()
    };
    let layouts: Vec<_> = [layout].into_iter().filter(|l| !l.is_empty()).collect();
    run_stages(&layouts, mics, playback, cfg, estimator, opts)
}

/// Delayed microphone taps only.
pub fn run_dr_only(
    mics: &Spectrogram,
    playback: &Spectrogram,
    cfg: &DraecConfig,
    estimator: Estimator,
    opts: &PipelineOptions,
) -> Result<PipelineOutput> {
    let layout = TapLayout {
        playback_taps: 0,
        ..cfg.layout()
    };
    let layouts: Vec<_> = [layout].into_iter().filter(|l| !l.is_empty()).collect();
    run_stages(&layouts, mics, playback, cfg, estimator, opts)
}

pub fn run_variant(
    variant: AlgorithmVariant,
    mics: &Spectrogram,
    playback: &Spectrogram,
    cfg: &DraecConfig,
    opts: &PipelineOptions,
) -> Result<PipelineOutput> {
    let run = match variant.topology {
        Topology::Joint => run_joint,
        Topology::AecThenDr => run_aec_then_dr,
        Topology::DrThenAec => run_dr_then_aec,
    };
    run(mics, playback, cfg, variant.estimator, opts)
}

/// Enhanced time signals from an end-to-end run.
#[derive(Debug, Clone)]
pub struct ProcessedAudio {
    pub enhanced: Vec<Vec<f64>>,
    pub intermediate: Option<Vec<Vec<f64>>>,
    pub output: PipelineOutput,
}

/// Pads or truncates every channel to `len` samples.
pub(crate) fn fit_length(mut signal: Vec<Vec<f64>>, len: usize) -> Vec<Vec<f64>> {
    for c in &mut signal {
        c.resize(len, 0.0);
    }
    signal
}

/// Analysis, filtering and synthesis of in-memory signals.
pub fn process_signals(
    mics: &[Vec<f64>],
    playback: &[f64],
    run: &RunConfig,
    variant: AlgorithmVariant,
    opts: &PipelineOptions,
) -> Result<ProcessedAudio> {
    let len = mics.first().map_or(0, |c| c.len());
    if playback.len() != len {
        return Err(Error::ShapeMismatch(format!(
            "playback has {} samples, microphones {}",
            playback.len(),
            len
        )));
    }
    let mic_spec = stft::analyze(mics, &run.stft)?;
    let play_spec = stft::analyze(&[playback.to_vec()], &run.stft)?;
    let output = run_variant(variant, &mic_spec, &play_spec, &run.filter, opts)?;
    let enhanced = fit_length(stft::synthesize(&output.enhanced, &run.stft)?, len);
    let intermediate = match &output.intermediate {
        Some(s) => Some(fit_length(stft::synthesize(s, &run.stft)?, len)),
        None => None,
    };
    Ok(ProcessedAudio {
        enhanced,
        intermediate,
        output,
    })
}

/// Reads a microphone WAV (M channels) and a playback WAV (1 channel),
/// processes them and writes the enhanced M-channel WAV to `out_path`.
pub fn process_wav(
    mic_path: &Path,
    playback_path: &Path,
    out_path: &Path,
    run: &RunConfig,
    variant: AlgorithmVariant,
    opts: &PipelineOptions,
) -> Result<ProcessedAudio> {
    let (mics, mic_spec) = io::read_wav(mic_path)?;
    let (playback, play_spec) = io::read_wav(playback_path)?;
    for (path, spec) in [(mic_path, &mic_spec), (playback_path, &play_spec)] {
        if spec.sample_rate != run.stft.sample_rate_hz {
            return Err(Error::Wav {
                path: path.to_path_buf(),
                reason: format!(
                    "sample rate {} Hz does not match configured {} Hz",
                    spec.sample_rate, run.stft.sample_rate_hz
                ),
            });
        }
    }
    if mics.len() != run.filter.mics {
        return Err(Error::Wav {
            path: mic_path.to_path_buf(),
            reason: format!(
                "{} channels, configuration expects {} microphones",
                mics.len(),
                run.filter.mics
            ),
        });
    }
    if playback.len() != 1 {
        return Err(Error::Wav {
            path: playback_path.to_path_buf(),
            reason: format!("playback must be mono, got {} channels", playback.len()),
        });
    }
    let processed = process_signals(&mics, &playback[0], run, variant, opts)?;
    io::write_wav(
        out_path,
        &processed.enhanced,
        run.stft.sample_rate_hz,
        io::Encoding::Float32,
    )?;
    Ok(processed)
}
