//! Objective measures: ERLE over time, projection SDR and SIER via shadow
//! filtering, plus the evaluation harness that ties scenes and pipeline runs
//! to a [`MetricsReport`].
//!
//! Shadow filtering replays the recorded filter sequence on each ground-truth
//! stem. Because every stage is linear in its input for a fixed weight
//! sequence, the per-stem outputs add up to the mixture output.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::pipeline::{
    fit_length, process_signals, AlgorithmVariant, PipelineOptions, PipelineOutput, ProcessedAudio,
    TraceMode,
};
use crate::scene::signals::fft_convolve;
use crate::scene::Scene;
use crate::stft::{self, Spectrogram, StftConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    pub erle_window_s: f64,
    pub erle_hop_s: f64,
    /// Length of the FIR distortion allowed by the SDR projection.
    pub sdr_taps: usize,
    pub sdr_cap_db: f64,
    /// Cap for ERLE and SIER.
    pub power_cap_db: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            erle_window_s: 1.0,
            erle_hop_s: 0.25,
            sdr_taps: 32,
            sdr_cap_db: 60.0,
            power_cap_db: 80.0,
        }
    }
}

impl MetricsConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |key: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(
                    format!("metrics.{key}"),
                    "must be positive and finite",
                ))
            }
        };
        positive("erle_window_s", self.erle_window_s)?;
        positive("erle_hop_s", self.erle_hop_s)?;
        positive("sdr_cap_db", self.sdr_cap_db)?;
        positive("power_cap_db", self.power_cap_db)?;
        if self.sdr_taps == 0 {
            return Err(Error::config("metrics.sdr_taps", "must be at least 1"));
        }
        Ok(())
    }
}

fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// `10 log10(num / den)` limited to `[-cap, cap]`; `0/0` reads as 0 dB.
pub fn capped_ratio_db(num: f64, den: f64, cap: f64) -> f64 {
    if num == 0.0 && den == 0.0 {
        0.0
    } else if den == 0.0 {
        cap
    } else if num == 0.0 {
        -cap
    } else {
        (10.0 * (num / den).log10()).clamp(-cap, cap)
    }
}

/// One point of a sliding-window ERLE curve; `time_s` is the window center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErlePoint {
    pub time_s: f64,
    pub erle_db: f64,
}

/// Sliding-window `10 log10(P_in / P_out)`.
pub fn erle(
    input: &[f64],
    output: &[f64],
    sample_rate: u32,
    window_s: f64,
    hop_s: f64,
    cap_db: f64,
) -> Result<Vec<ErlePoint>> {
    if input.len() != output.len() {
        return Err(Error::Metric(format!(
            "ERLE needs equal lengths, got {} and {}",
            input.len(),
            output.len()
        )));
    }
    let fs = sample_rate as f64;
    let win = (window_s * fs).round() as usize;
    let hop = (hop_s * fs).round() as usize;
    if win == 0 || hop == 0 {
        return Err(Error::Metric(
            "ERLE window and hop must span samples".into(),
        ));
    }
    let mut curve = Vec::new();
    let mut start = 0;
    while start + win <= input.len() {
        let p_in = energy(&input[start..start + win]);
        let p_out = energy(&output[start..start + win]);
        curve.push(ErlePoint {
            time_s: (start as f64 + win as f64 / 2.0) / fs,
            erle_db: capped_ratio_db(p_in, p_out, cap_db),
        });
        start += hop;
    }
    Ok(curve)
}

/// Mean ERLE over the final quarter of the curve.
pub fn erle_steady(curve: &[ErlePoint]) -> Option<f64> {
    if curve.is_empty() {
        return None;
    }
    let tail = &curve[curve.len() * 3 / 4..];
    let tail = if tail.is_empty() { curve } else { tail };
    Some(tail.iter().map(|p| p.erle_db).sum::<f64>() / tail.len() as f64)
}

/// SDR with an allowed FIR distortion of `taps` taps: the estimate is
/// projected onto the span of delayed copies of the reference and
/// `10 log10(|proj|^2 / |estimate - proj|^2)` is returned, capped at `cap_db`.
pub fn sdr(reference: &[f64], estimate: &[f64], taps: usize, cap_db: f64) -> Result<f64> {
    let n = reference.len();
    if estimate.len() != n {
        return Err(Error::Metric(format!(
            "SDR needs equal lengths, got {} and {}",
            n,
            estimate.len()
        )));
    }
    if taps == 0 {
        return Err(Error::Metric("SDR needs at least one tap".into()));
    }
    if reference.iter().all(|v| *v == 0.0) {
        return Err(Error::Metric("SDR reference is silent".into()));
    }
    let taps = taps.min(n);
    // Gram matrix of the delayed references over the signal support:
    // G[i][j] = sum_{m=0}^{n-1-i} r[m] r[m - (j - i)] for j >= i.
    let mut gram = DMatrix::<f64>::zeros(taps, taps);
    for k in 0..taps {
        let g: f64 = (k..n).map(|m| reference[m] * reference[m - k]).sum();
        gram[(0, k)] = g;
    }
    for i in 1..taps {
        for j in i..taps {
            gram[(i, j)] = gram[(i - 1, j - 1)] - reference[n - i] * reference[n - j];
        }
    }
    for i in 0..taps {
        for j in 0..i {
            gram[(i, j)] = gram[(j, i)];
        }
    }
    let rhs = DVector::from_iterator(
        taps,
        (0..taps).map(|k| (k..n).map(|m| estimate[m] * reference[m - k]).sum::<f64>()),
    );
    let ridge = 1e-12 * gram.diagonal().max();
    let h = match gram.clone().cholesky() {
        Some(c) => c.solve(&rhs),
        None => {
            let mut reg = gram;
            for i in 0..taps {
                reg[(i, i)] += ridge;
            }
            reg.lu()
                .solve(&rhs)
                .ok_or_else(|| Error::Metric("SDR projection is singular".into()))?
        }
    };
    let proj = fft_convolve(reference, h.as_slice());
    let err: f64 = estimate
        .iter()
        .zip(&proj)
        .map(|(e, p)| (e - p).powi(2))
        .sum();
    Ok(capped_ratio_db(energy(&proj), err, cap_db))
}

/// One stem fed to [`shadow_decompose`]; `driven` stems see the playback.
pub struct StemInput<'a> {
    pub spectrum: &'a Spectrogram,
    pub driven: bool,
}

/// Replays the recorded filters on each stem. The stem driven by the
/// playback receives the real playback, all others a silent one.
pub fn shadow_decompose(
    run: &PipelineOutput,
    stems: &[StemInput<'_>],
    playback: &Spectrogram,
) -> Result<Vec<Spectrogram>> {
    let trace = run.weights.as_ref().ok_or_else(|| {
        Error::Trace("shadow filtering needs a full per-frame filter trace".into())
    })?;
    stems
        .iter()
        .map(|s| {
            let outs = trace.apply(s.spectrum, s.driven.then_some(playback))?;
            Ok(outs.into_iter().last().expect("at least one output"))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sier {
    pub input_db: f64,
    pub output_db: f64,
    pub improvement_db: f64,
}

/// Component signals for one side (input or output) of a SIER measurement.
pub struct SierParts<'a> {
    pub target: &'a [f64],
    pub interference: &'a [f64],
    pub echo: &'a [f64],
}

impl SierParts<'_> {
    fn ratio_db(&self, cap_db: f64) -> f64 {
        capped_ratio_db(
            energy(self.target),
            energy(self.interference) + energy(self.echo),
            cap_db,
        )
    }
}

/// Target to interference-plus-echo ratio before and after processing.
pub fn sier(input: &SierParts<'_>, output: &SierParts<'_>, cap_db: f64) -> Sier {
    let input_db = input.ratio_db(cap_db);
    let output_db = output.ratio_db(cap_db);
    Sier {
        input_db,
        output_db,
        improvement_db: output_db - input_db,
    }
}

/// Machine-readable evaluation of one (scene, variant) run; `variant` is a
/// variant name or a free label such as `unprocessed`. Scalar metrics
/// are averaged over microphones and computed on the interior region that
/// excludes one frame at each end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub variant: String,
    pub scene_seed: u64,
    pub rt60: f64,
    pub ser_db: Option<f64>,
    pub sir_db: Option<f64>,
    pub snr_db: f64,
    pub single_talk: bool,
    pub echo_model: String,
    pub change_point_s: Option<f64>,
    pub erle_curve: Vec<ErlePoint>,
    pub erle_steady_db: Option<f64>,
    pub sdr_input_db: Option<f64>,
    pub sdr_db: Option<f64>,
    pub sdr_improvement_db: Option<f64>,
    pub sier_input_db: Option<f64>,
    pub sier_db: Option<f64>,
    pub sier_improvement_db: Option<f64>,
}

impl MetricsReport {
    pub const CSV_HEADER: [&'static str; 15] = [
        "variant",
        "scene_seed",
        "rt60",
        "ser_db",
        "sir_db",
        "snr_db",
        "single_talk",
        "echo_model",
        "erle_steady_db",
        "sdr_input_db",
        "sdr_db",
        "sdr_improvement_db",
        "sier_input_db",
        "sier_db",
        "sier_improvement_db",
    ];

    /// Fields in [`Self::CSV_HEADER`] order; absent values are empty.
    pub fn csv_record(&self) -> Vec<String> {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_default();
        vec![
            self.variant.clone(),
            self.scene_seed.to_string(),
            self.rt60.to_string(),
            opt(self.ser_db),
            opt(self.sir_db),
            self.snr_db.to_string(),
            self.single_talk.to_string(),
            self.echo_model.clone(),
            opt(self.erle_steady_db),
            opt(self.sdr_input_db),
            opt(self.sdr_db),
            opt(self.sdr_improvement_db),
            opt(self.sier_input_db),
            opt(self.sier_db),
            opt(self.sier_improvement_db),
        ]
    }
}

/// Samples `[frame_len, len - frame_len)`.
pub fn interior(len: usize, stft: &StftConfig) -> std::ops::Range<usize> {
    let edge = stft.frame_len.min(len / 2);
    edge..len - edge
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Per-stem time-domain outputs of a run with a full trace.
#[derive(Debug, Clone)]
pub struct ShadowOutputs {
    pub target: Vec<Vec<f64>>,
    pub echo: Vec<Vec<f64>>,
    pub interference: Vec<Vec<f64>>,
    pub noise: Vec<Vec<f64>>,
}

impl ShadowOutputs {
    pub fn sum(&self) -> Vec<Vec<f64>> {
        (0..self.target.len())
            .map(|m| {
                (0..self.target[m].len())
                    .map(|n| {
                        self.target[m][n]
                            + self.echo[m][n]
                            + self.interference[m][n]
                            + self.noise[m][n]
                    })
                    .collect()
            })
            .collect()
    }
}

/// Shadow-filters every mixture stem of `scene` through `run`.
pub fn shadow_outputs(
    scene: &Scene,
    run: &PipelineOutput,
    stft_cfg: &StftConfig,
) -> Result<ShadowOutputs> {
    let len = scene.len();
    let playback = stft::analyze(std::slice::from_ref(&scene.playback), stft_cfg)?;
    let stems = &scene.stems;
    let specs = [
        (stft::analyze(&stems.full_target_image, stft_cfg)?, false),
        (stft::analyze(&stems.echo_image, stft_cfg)?, true),
        (stft::analyze(&stems.interference_image, stft_cfg)?, false),
        (stft::analyze(&stems.noise, stft_cfg)?, false),
    ];
    let inputs: Vec<StemInput<'_>> = specs
        .iter()
        .map(|(s, driven)| StemInput {
            spectrum: s,
            driven: *driven,
        })
        .collect();
    let mut outs = shadow_decompose(run, &inputs, &playback)?
        .into_iter()
        .map(|s| Ok(fit_length(stft::synthesize(&s, stft_cfg)?, len)))
        .collect::<Result<Vec<_>>>()?;
    let noise = outs.pop().unwrap();
    let interference = outs.pop().unwrap();
    let echo = outs.pop().unwrap();
    let target = outs.pop().unwrap();
    Ok(ShadowOutputs {
        target,
        echo,
        interference,
        noise,
    })
}

/// Computes every metric for a processed scene. SIER and the double-talk
/// ERLE need a full trace; without one they are absent.
///
/// ERLE compares microphone and output in single-talk scenes. With a
/// near-end talker present it compares the echo stem with its shadow output.
pub fn evaluate(
    scene: &Scene,
    processed: &ProcessedAudio,
    run: &RunConfig,
    label: &str,
) -> Result<MetricsReport> {
    let len = scene.len();
    let mics = scene.mics.len();
    if processed.enhanced.len() != mics || processed.enhanced.iter().any(|c| c.len() != len) {
        return Err(Error::ShapeMismatch(format!(
            "processed output does not match the {mics}-channel, {len}-sample scene"
        )));
    }
    let cfg = &run.metrics;
    let fs = scene.meta.sample_rate;
    let region = interior(len, &run.stft);
    let shadow = match &processed.output.weights {
        Some(_) => Some(shadow_outputs(scene, &processed.output, &run.stft)?),
        None => None,
    };

    let (erle_in, erle_out) = if scene.meta.single_talk {
        (&scene.mics[0], &processed.enhanced[0])
    } else if let Some(sh) = &shadow {
        (&scene.stems.echo_image[0], &sh.echo[0])
    } else {
        (&scene.mics[0], &processed.enhanced[0])
    };
    let erle_curve = if scene.meta.single_talk || shadow.is_some() {
        erle(
            &erle_in[region.clone()],
            &erle_out[region.clone()],
            fs,
            cfg.erle_window_s,
            cfg.erle_hop_s,
            cfg.power_cap_db,
        )?
        .into_iter()
        .map(|p| ErlePoint {
            time_s: p.time_s + region.start as f64 / fs as f64,
            ..p
        })
        .collect()
    } else {
        Vec::new()
    };
    let erle_steady_db = erle_steady(&erle_curve);

    let (mut sdr_in, mut sdr_out) = (Vec::new(), Vec::new());
    if !scene.meta.single_talk {
        for m in 0..mics {
            let reference = &scene.stems.target_image[m][region.clone()];
            sdr_in.push(sdr(
                reference,
                &scene.mics[m][region.clone()],
                cfg.sdr_taps,
                cfg.sdr_cap_db,
            )?);
            sdr_out.push(sdr(
                reference,
                &processed.enhanced[m][region.clone()],
                cfg.sdr_taps,
                cfg.sdr_cap_db,
            )?);
        }
    }
    let sdr_input_db = mean(&sdr_in);
    let sdr_db = mean(&sdr_out);

    let sier_values: Vec<Sier> = match (&shadow, scene.meta.single_talk) {
        (Some(sh), false) => (0..mics)
            .map(|m| {
                let r = region.clone();
                sier(
                    &SierParts {
                        target: &scene.stems.full_target_image[m][r.clone()],
                        interference: &scene.stems.interference_image[m][r.clone()],
                        echo: &scene.stems.echo_image[m][r.clone()],
                    },
                    &SierParts {
                        target: &sh.target[m][r.clone()],
                        interference: &sh.interference[m][r.clone()],
                        echo: &sh.echo[m][r],
                    },
                    cfg.power_cap_db,
                )
            })
            .collect(),
        _ => Vec::new(),
    };
    let sier_input_db = mean(&sier_values.iter().map(|s| s.input_db).collect::<Vec<_>>());
    let sier_db = mean(&sier_values.iter().map(|s| s.output_db).collect::<Vec<_>>());

    Ok(MetricsReport {
        variant: label.to_string(),
        scene_seed: scene.meta.seed,
        rt60: scene.meta.rt60,
        ser_db: scene.meta.ser_db,
        sir_db: scene.meta.sir_db,
        snr_db: scene.meta.snr_db,
        single_talk: scene.meta.single_talk,
        echo_model: scene.meta.echo_model.clone(),
        change_point_s: scene.meta.change_point.map(|c| c as f64 / fs as f64),
        erle_curve,
        erle_steady_db,
        sdr_input_db,
        sdr_db,
        sdr_improvement_db: sdr_db.zip(sdr_input_db).map(|(o, i)| o - i),
        sier_input_db,
        sier_db,
        sier_improvement_db: sier_db.zip(sier_input_db).map(|(o, i)| o - i),
    })
}

/// Processes `scene` with `variant` (recording a full trace) and evaluates it.
pub fn run_and_evaluate(
    scene: &Scene,
    run: &RunConfig,
    variant: AlgorithmVariant,
) -> Result<(ProcessedAudio, MetricsReport)> {
    let opts = PipelineOptions {
        trace: TraceMode::Full,
    };
    let processed = process_signals(&scene.mics, &scene.playback, run, variant, &opts)?;
    let report = evaluate(scene, &processed, run, variant.name())?;
    Ok((processed, report))
}
