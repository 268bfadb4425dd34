//! STFT-domain scenes that follow the multichannel autoregressive echo model
//! exactly:
//!
//! `Y_m(t) = S_m(t) + sum_n sum_l C[m][n][l] Y_n(t - delay - l) + sum_l B[m][l] X(t - l)`
//!
//! with white `S` and `X` and no modeling error, so the generating filter is
//! known per (microphone, bin).

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::stft::Spectrogram;

#[derive(Debug, Clone, PartialEq)]
pub struct ArSceneConfig {
    pub frames: usize,
    pub bins: usize,
    pub mics: usize,
    pub playback_taps: usize,
    pub history_taps: usize,
    pub delay: usize,
    /// Upper bound on `sum_{n,l} |C[m][n][l]|` for each `m`; below 1 keeps the
    /// recursion stable.
    pub ar_gain: f64,
    /// RMS magnitude of each echo tap.
    pub echo_tap_rms: f64,
    pub seed: u64,
}

impl Default for ArSceneConfig {
    fn default() -> Self {
        Self {
            frames: 1875,
            bins: 513,
            mics: 2,
            playback_taps: 5,
            history_taps: 5,
            delay: 2,
            ar_gain: 0.6,
            echo_tap_rms: 0.5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ArScene {
    pub mics: Spectrogram,
    pub playback: Spectrogram,
    /// `S_m(t)` per microphone.
    pub target: Spectrogram,
    /// Echo taps `B[bin][m][l]`, flattened.
    pub echo_taps: Vec<Complex64>,
    /// AR taps `C[bin][m][n][l]`, flattened.
    pub ar_taps: Vec<Complex64>,
    cfg: ArSceneConfig,
}

fn complex_normal(rng: &mut ChaCha8Rng, std: f64) -> Complex64 {
    let s = std / 2f64.sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re * s, im * s)
}

impl ArScene {
    pub fn generate(cfg: &ArSceneConfig) -> ArScene {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let (m_count, frames, bins) = (cfg.mics, cfg.frames, cfg.bins);
        let (lx, ly, delay) = (cfg.playback_taps, cfg.history_taps, cfg.delay);

        let mut echo_taps = Vec::with_capacity(bins * m_count * lx);
        let mut ar_taps = Vec::with_capacity(bins * m_count * m_count * ly);
        for _ in 0..bins {
            for _ in 0..m_count {
                for _ in 0..lx {
                    echo_taps.push(complex_normal(&mut rng, cfg.echo_tap_rms));
                }
                let mut row: Vec<Complex64> = (0..m_count * ly)
                    .map(|_| complex_normal(&mut rng, 1.0))
                    .collect();
                let total: f64 = row.iter().map(|c| c.norm()).sum();
                if total > 0.0 {
                    let g = cfg.ar_gain * rng.random_range(0.5..1.0) / total;
                    row.iter_mut().for_each(|c| *c *= g);
                }
                ar_taps.extend(row);
            }
        }

        let mut playback = Spectrogram::zeros(1, frames, bins);
        let mut target = Spectrogram::zeros(m_count, frames, bins);
        for v in playback.data_mut() {
            *v = complex_normal(&mut rng, 1.0);
        }
        for v in target.data_mut() {
            *v = complex_normal(&mut rng, 1.0);
        }

        let mut mics = Spectrogram::zeros(m_count, frames, bins);
        for f in 0..bins {
            for t in 0..frames {
                for m in 0..m_count {
                    let mut y = target.get(m, t, f);
                    for l in 0..lx {
                        if l <= t {
                            y += echo_taps[(f * m_count + m) * lx + l] * playback.get(0, t - l, f);
                        }
                    }
                    for n in 0..m_count {
                        for l in 0..ly {
                            let back = delay + l;
                            if back <= t {
                                let c = ar_taps[((f * m_count + m) * m_count + n) * ly + l];
                                y += c * mics.get(n, t - back, f);
                            }
                        }
                    }
                    mics.set(m, t, f, y);
                }
            }
        }

        ArScene {
            mics,
            playback,
            target,
            echo_taps,
            ar_taps,
            cfg: cfg.clone(),
        }
    }

    /// The unified weight vector that recovers `S_m` exactly: conjugated
    /// echo taps followed by conjugated AR taps, microphone-major.
    pub fn true_weights(&self, bin: usize, mic: usize) -> Vec<Complex64> {
        let c = &self.cfg;
        let (m_count, lx, ly) = (c.mics, c.playback_taps, c.history_taps);
        let mut w = Vec::with_capacity(lx + m_count * ly);
        for l in 0..lx {
            w.push(self.echo_taps[(bin * m_count + mic) * lx + l].conj());
        }
        for n in 0..m_count {
            for l in 0..ly {
                w.push(self.ar_taps[((bin * m_count + mic) * m_count + n) * ly + l].conj());
            }
        }
        w
    }

    pub fn config(&self) -> &ArSceneConfig {
        &self.cfg
    }
}
