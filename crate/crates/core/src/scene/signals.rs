//! Deterministic source material and convolution helpers.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::FftPlanner;

/// Speech-like test signal: syllable-length bursts of noise and glottal pulses
/// shaped by two time-varying formant resonators, separated by short pauses.
/// Normalized to `rms`.
pub fn speech_like(len: usize, sample_rate: u32, rms: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fs = sample_rate as f64;
    let mut out = vec![0.0; len];
    let mut pos = 0usize;
    while pos < len {
        let pause = if rng.random_bool(0.25) {
            rng.random_range(0.08..0.3)
        } else {
            rng.random_range(0.01..0.04)
        };
        pos += (pause * fs) as usize;
        let syllable = (rng.random_range(0.12..0.35) * fs) as usize;
        let voiced = rng.random_bool(0.75);
        let f0 = rng.random_range(90.0..220.0);
        let formants = [
            (
                rng.random_range(300.0..900.0),
                rng.random_range(60.0..120.0),
            ),
            (
                rng.random_range(900.0..2600.0),
                rng.random_range(90.0..180.0),
            ),
        ];
        // Two cascaded second-order resonators.
        let coeffs: Vec<(f64, f64)> = formants
            .iter()
            .map(|&(f, bw)| {
                let r = (-PI * bw / fs).exp();
                (-2.0 * r * (2.0 * PI * f / fs).cos(), r * r)
            })
            .collect();
        let mut state = [[0.0f64; 2]; 2];
        let period = (fs / f0) as usize;
        for n in 0..syllable {
            let i = pos + n;
            if i >= len {
                break;
            }
            let noise: f64 = StandardNormal.sample(&mut rng);
            let mut v = if voiced {
                let pulse = if n % period.max(1) == 0 { 4.0 } else { 0.0 };
                pulse + 0.2 * noise
            } else {
                noise
            };
            for (s, (a1, a2)) in state.iter_mut().zip(&coeffs) {
                let y = v - a1 * s[0] - a2 * s[1];
                s[1] = s[0];
                s[0] = y;
                v = y;
            }
            let envelope = (PI * n as f64 / syllable as f64).sin();
            out[i] = v * envelope;
        }
        pos += syllable;
    }
    normalize_rms(&mut out, rms);
    out
}

pub fn white_noise(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| StandardNormal.sample(&mut rng)).collect()
}

pub fn power(x: &[f64]) -> f64 {
    if x.is_empty() {
        0.0
    } else {
        x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
    }
}

pub fn normalize_rms(x: &mut [f64], rms: f64) {
    let p = power(x);
    if p > 0.0 {
        let g = rms / p.sqrt();
        x.iter_mut().for_each(|v| *v *= g);
    }
}

/// Linear convolution truncated to `x.len()` samples.
pub fn fft_convolve(x: &[f64], h: &[f64]) -> Vec<f64> {
    if x.is_empty() || h.is_empty() {
        return vec![0.0; x.len()];
    }
    let n = (x.len() + h.len() - 1).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let pad = |s: &[f64]| -> Vec<Complex64> {
        let mut v: Vec<Complex64> = s.iter().map(|&r| Complex64::new(r, 0.0)).collect();
        v.resize(n, Complex64::new(0.0, 0.0));
        v
    };
    let mut a = pad(x);
    let mut b = pad(h);
    fwd.process(&mut a);
    fwd.process(&mut b);
    for (p, q) in a.iter_mut().zip(&b) {
        *p *= q;
    }
    inv.process(&mut a);
    a[..x.len()].iter().map(|v| v.re / n as f64).collect()
}
