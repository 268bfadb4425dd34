//! Multichannel STFT analysis and overlap-add synthesis.
//!
//! Frames are windowed with a square-root Hann (sine) window, zero-padded at
//! the tail to `fft_size` and transformed. Only the non-negative frequency
//! bins are stored. Synthesis applies the same window and overlap-adds, which
//! reconstructs the input exactly wherever a sample is covered by
//! `frame_len / hop` frames.

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StftConfig {
    pub sample_rate_hz: u32,
    pub frame_len: usize,
    pub hop: usize,
    pub fft_size: usize,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            sample_rate_hz: 16_000,
            frame_len: 512,
            hop: 256,
            fft_size: 1024,
        }
    }
}

impl StftConfig {
    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn frame_duration_s(&self) -> f64 {
        self.frame_len as f64 / self.sample_rate_hz as f64
    }

    /// Number of frames produced for a signal of `len` samples.
    pub fn frames_for(&self, len: usize) -> usize {
        if len < self.frame_len {
            0
        } else {
            (len - self.frame_len) / self.hop + 1
        }
    }

    /// Number of samples covered by `frames` frames.
    pub fn samples_for(&self, frames: usize) -> usize {
        if frames == 0 {
            0
        } else {
            (frames - 1) * self.hop + self.frame_len
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_rate_hz == 0 {
            return Err(Error::config("stft.sample_rate_hz", "must be positive"));
        }
        if self.frame_len < 2 {
            return Err(Error::config("stft.frame_len", "must be at least 2"));
        }
        if self.hop == 0
            || !self.frame_len.is_multiple_of(self.hop)
            || self.frame_len / self.hop < 2
        {
            return Err(Error::config(
                "stft.hop",
                format!(
                    "must divide frame_len ({}) with at least 2 frames of overlap",
                    self.frame_len
                ),
            ));
        }
        if self.fft_size < self.frame_len {
            return Err(Error::config(
                "stft.fft_size",
                format!("must be >= frame_len ({})", self.frame_len),
            ));
        }
        Ok(())
    }

    /// Analysis/synthesis window, `sin(pi (n + 1/2) / N)`.
    pub fn window(&self) -> Vec<f64> {
        let n = self.frame_len as f64;
        (0..self.frame_len)
            .map(|i| (PI * (i as f64 + 0.5) / n).sin())
            .collect()
    }

    /// Sum of squared windows overlapping any interior sample.
    fn overlap_gain(&self) -> f64 {
        self.frame_len as f64 / (2.0 * self.hop as f64)
    }
}

/// Complex STFT frames indexed by (channel, frame, bin).
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    channels: usize,
    frames: usize,
    bins: usize,
    data: Vec<Complex64>,
}

impl Spectrogram {
    pub fn zeros(channels: usize, frames: usize, bins: usize) -> Self {
        Self {
            channels,
            frames,
            bins,
            data: vec![Complex64::new(0.0, 0.0); channels * frames * bins],
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.frames, self.bins)
    }

    #[inline]
    fn index(&self, channel: usize, frame: usize, bin: usize) -> usize {
        debug_assert!(channel < self.channels && frame < self.frames && bin < self.bins);
        (channel * self.frames + frame) * self.bins + bin
    }

    #[inline]
    pub fn get(&self, channel: usize, frame: usize, bin: usize) -> Complex64 {
        self.data[self.index(channel, frame, bin)]
    }

    #[inline]
    pub fn set(&mut self, channel: usize, frame: usize, bin: usize, value: Complex64) {
        let i = self.index(channel, frame, bin);
        self.data[i] = value;
    }

    /// All bins of one frame.
    pub fn frame(&self, channel: usize, frame: usize) -> &[Complex64] {
        let start = self.index(channel, frame, 0);
        &self.data[start..start + self.bins]
    }

    /// The time series of one bin.
    pub fn bin_series(&self, channel: usize, bin: usize) -> Vec<Complex64> {
        (0..self.frames)
            .map(|t| self.get(channel, t, bin))
            .collect()
    }

    pub fn set_bin_series(&mut self, channel: usize, bin: usize, series: &[Complex64]) {
        assert_eq!(series.len(), self.frames);
        for (t, &v) in series.iter().enumerate() {
            self.set(channel, t, bin, v);
        }
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum()
    }

    /// A new spectrogram holding only `channel`.
    pub fn select_channel(&self, channel: usize) -> Spectrogram {
        let len = self.frames * self.bins;
        let start = channel * len;
        Spectrogram {
            channels: 1,
            frames: self.frames,
            bins: self.bins,
            data: self.data[start..start + len].to_vec(),
        }
    }

    /// Element-wise sum; shapes must agree.
    pub fn add(&self, other: &Spectrogram) -> Result<Spectrogram> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch(format!(
                "cannot add spectrograms {:?} and {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Spectrogram { data, ..*self })
    }

    pub fn scale(&self, factor: f64) -> Spectrogram {
        Spectrogram {
            data: self.data.iter().map(|v| v * factor).collect(),
            ..*self
        }
    }
}

/// Forward transform of equal-length channels.
pub fn analyze(signal: &[Vec<f64>], cfg: &StftConfig) -> Result<Spectrogram> {
    cfg.validate()?;
    let channels = signal.len();
    if channels == 0 {
        return Err(Error::ShapeMismatch("no channels to analyze".into()));
    }
    let len = signal[0].len();
    if signal.iter().any(|c| c.len() != len) {
        return Err(Error::ShapeMismatch(
            "all channels must have the same length".into(),
        ));
    }
    if len < cfg.frame_len {
        return Err(Error::SignalTooShort {
            len,
            needed: cfg.frame_len,
        });
    }

    let frames = cfg.frames_for(len);
    let bins = cfg.bins();
    let window = cfg.window();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(cfg.fft_size);
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut buf = vec![Complex64::new(0.0, 0.0); cfg.fft_size];
    let mut spec = Spectrogram::zeros(channels, frames, bins);

    for (c, x) in signal.iter().enumerate() {
        for t in 0..frames {
            let start = t * cfg.hop;
            for (n, slot) in buf.iter_mut().enumerate() {
                *slot = if n < cfg.frame_len {
                    Complex64::new(x[start + n] * window[n], 0.0)
                } else {
                    Complex64::new(0.0, 0.0)
                };
            }
            fft.process_with_scratch(&mut buf, &mut scratch);
            let offset = spec.index(c, t, 0);
            spec.data[offset..offset + bins].copy_from_slice(&buf[..bins]);
        }
    }
    Ok(spec)
}

/// Inverse transform with windowed overlap-add.
///
/// Output length is `(frames - 1) * hop + frame_len`.
pub fn synthesize(spec: &Spectrogram, cfg: &StftConfig) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    if spec.bins != cfg.bins() {
        return Err(Error::ShapeMismatch(format!(
            "spectrogram has {} bins but fft_size {} implies {}",
            spec.bins,
            cfg.fft_size,
            cfg.bins()
        )));
    }
    let len = cfg.samples_for(spec.frames);
    let window = cfg.window();
    let norm = 1.0 / (cfg.fft_size as f64 * cfg.overlap_gain());
    let ifft = FftPlanner::<f64>::new().plan_fft_inverse(cfg.fft_size);
    let mut scratch = vec![Complex64::new(0.0, 0.0); ifft.get_inplace_scratch_len()];
    let mut buf = vec![Complex64::new(0.0, 0.0); cfg.fft_size];
    let half = cfg.fft_size / 2;

    let mut out = vec![vec![0.0; len]; spec.channels];
    for (c, y) in out.iter_mut().enumerate() {
        for t in 0..spec.frames {
            let frame = spec.frame(c, t);
            buf[..spec.bins].copy_from_slice(frame);
            // Hermitian completion; DC and Nyquist are forced real.
            buf[0].im = 0.0;
            if cfg.fft_size.is_multiple_of(2) {
                buf[half].im = 0.0;
            }
            for k in 1..cfg.fft_size - half {
                buf[cfg.fft_size - k] = frame[k].conj();
            }
            ifft.process_with_scratch(&mut buf, &mut scratch);
            let start = t * cfg.hop;
            for n in 0..cfg.frame_len {
                y[start + n] += buf[n].re * window[n] * norm;
            }
        }
    }
    Ok(out)
}
