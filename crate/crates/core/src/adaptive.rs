//! Per-(microphone, bin) adaptive filter kernels.
//!
//! The filter models one microphone's STFT coefficients in one frequency bin
//! as a linear function of a regressor that stacks recent playback frames and
//! delayed microphone frames. The weights follow a first-order Markov model
//! and are tracked by a Kalman filter, with exponentially weighted RLS as the
//! baseline. Both recursions operate on the same [`FilterState`].

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Hyperparameters of the unified echo-cancellation / dereverberation filter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DraecConfig {
    /// Playback taps per bin, in frames.
    pub playback_taps: usize,
    /// Delayed-microphone taps per microphone, in frames.
    pub history_taps: usize,
    /// Prediction delay in frames between the current frame and the first
    /// microphone tap.
    pub delay: usize,
    pub mics: usize,
    /// State transition scalar of the Markov weight model.
    pub transition: f64,
    /// Process-noise floor.
    pub eta: f64,
    /// Source PSD smoothing factor.
    pub alpha: f64,
    /// RLS forgetting factor.
    pub lambda: f64,
    pub psd_floor: f64,
    /// Diagonal of the initial error covariance.
    pub init_covariance: f64,
    /// Initial source PSD.
    pub init_psd: f64,
    /// Pins the process-noise variance instead of estimating it.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fixed_process_noise: Option<f64>,
    /// Pins the source PSD instead of estimating it.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fixed_source_psd: Option<f64>,
    /// Frames by which playback is delayed before filtering.
    pub bulk_delay: usize,
}

impl Default for DraecConfig {
    fn default() -> Self {
        Self {
            playback_taps: 5,
            history_taps: 5,
            delay: 2,
            mics: 2,
            transition: 1.0,
            eta: 1e-4,
            alpha: 0.8,
            lambda: 0.9995,
            psd_floor: 1e-10,
            init_covariance: 1.0,
            init_psd: 1.0,
            fixed_process_noise: None,
            fixed_source_psd: None,
            bulk_delay: 0,
        }
    }
}

impl DraecConfig {
    /// Length of the unified weight vector.
    pub fn filter_len(&self) -> usize {
        self.playback_taps + self.mics * self.history_taps
    }

    pub fn layout(&self) -> TapLayout {
        TapLayout {
            playback_taps: self.playback_taps,
            history_taps: self.history_taps,
            channels: self.mics,
            delay: self.delay,
        }
    }

    pub fn validate(&self) -> Result<()> {
        fn check(ok: bool, key: &str, reason: &str) -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(Error::config(format!("filter.{key}"), reason))
            }
        }
        check(self.mics >= 1, "mics", "must be at least 1")?;
        check(
            self.filter_len() >= 1,
            "playback_taps",
            "playback_taps + mics * history_taps must be at least 1",
        )?;
        check(self.delay >= 1, "delay", "must be at least 1 frame")?;
        check(self.transition.is_finite(), "transition", "must be finite")?;
        check(
            self.eta >= 0.0 && self.eta.is_finite(),
            "eta",
            "must be finite and >= 0",
        )?;
        check(
            self.alpha > 0.0 && self.alpha <= 1.0,
            "alpha",
            "must lie in (0, 1]",
        )?;
        check(
            self.lambda > 0.0 && self.lambda <= 1.0,
            "lambda",
            "must lie in (0, 1]",
        )?;
        check(
            self.psd_floor > 0.0 && self.psd_floor.is_finite(),
            "psd_floor",
            "must be finite and > 0",
        )?;
        check(
            self.init_covariance >= 0.0 && self.init_covariance.is_finite(),
            "init_covariance",
            "must be finite and >= 0",
        )?;
        check(
            self.init_psd > 0.0 && self.init_psd.is_finite(),
            "init_psd",
            "must be finite and > 0",
        )?;
        if let Some(v) = self.fixed_process_noise {
            check(
                v >= 0.0 && v.is_finite(),
                "fixed_process_noise",
                "must be finite and >= 0",
            )?;
        }
        if let Some(v) = self.fixed_source_psd {
            check(
                v > 0.0 && v.is_finite(),
                "fixed_source_psd",
                "must be finite and > 0",
            )?;
        }
        Ok(())
    }
}

/// Shape of a regressor: playback taps followed by per-channel delayed taps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TapLayout {
    pub playback_taps: usize,
    pub history_taps: usize,
    pub channels: usize,
    pub delay: usize,
}

impl TapLayout {
    pub fn len(&self) -> usize {
        self.playback_taps + self.channels * self.history_taps
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Stacked regressor `[X(t) .. X(t-Lx+1), Y_1(t-D) .. Y_1(t-D-Ly+1), .., Y_M(..)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Regressor(Vec<Complex64>);

impl Regressor {
    pub fn zeros(len: usize) -> Self {
        Regressor(vec![ZERO; len])
    }

    pub fn from_vec(v: Vec<Complex64>) -> Self {
        Regressor(v)
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Refills the regressor for frame `t` from per-bin frame series. Frames
    /// before 0 read as zero.
    pub fn fill(
        &mut self,
        layout: &TapLayout,
        t: usize,
        playback: &[Complex64],
        history: &[Vec<Complex64>],
    ) {
        self.0.resize(layout.len(), ZERO);
        let lag = |series: &[Complex64], back: usize| -> Complex64 {
            if back <= t {
                series[t - back]
            } else {
                ZERO
            }
        };
        let mut i = 0;
        for l in 0..layout.playback_taps {
            self.0[i] = lag(playback, l);
            i += 1;
        }
        for series in history.iter().take(layout.channels) {
            for l in 0..layout.history_taps {
                self.0[i] = lag(series, layout.delay + l);
                i += 1;
            }
        }
    }
}

/// Builds `z(t)` from explicit histories.
///
/// `playback_history[l]` is `X(t - l)` and `mic_history[n][l]` is
/// `Y_n(t - delay - l)`. Missing entries are zero.
pub fn build_regressor(
    playback_history: &[Complex64],
    mic_history: &[&[Complex64]],
    cfg: &DraecConfig,
) -> Regressor {
    let mut z = Vec::with_capacity(cfg.filter_len());
    let take = |src: &[Complex64], n: usize, z: &mut Vec<Complex64>| {
        z.extend((0..n).map(|l| src.get(l).copied().unwrap_or(ZERO)));
    };
    take(playback_history, cfg.playback_taps, &mut z);
    for n in 0..cfg.mics {
        take(
            mic_history.get(n).copied().unwrap_or(&[]),
            cfg.history_taps,
            &mut z,
        );
    }
    Regressor(z)
}

/// Weight estimate and error covariance of one (microphone, bin) filter.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    /// Predicted weights `w(t|t-1)`.
    pub w_pred: Vec<Complex64>,
    /// Predicted error covariance, row-major `L x L`.
    pub phi_pred: Vec<Complex64>,
    /// Posterior weights of the previous frame.
    pub w_prev: Vec<Complex64>,
    /// Source PSD used by the most recent gain.
    pub phi_s_hat: f64,
    /// Posterior PSD recursion.
    pub phi_recursive: f64,
    /// Process-noise variance used by the most recent prediction.
    pub phi_u: f64,
    pz: Vec<Complex64>,
}

impl FilterState {
    /// Zero weights, `init_covariance * I`, unit PSD trackers.
    pub fn new(len: usize, cfg: &DraecConfig) -> Result<Self> {
        if len == 0 {
            return Err(Error::config(
                "filter.playback_taps",
                "filter length must be at least 1",
            ));
        }
        let mut phi_pred = vec![ZERO; len * len];
        for i in 0..len {
            phi_pred[i * len + i] = Complex64::new(cfg.init_covariance, 0.0);
        }
        Ok(Self {
            w_pred: vec![ZERO; len],
            phi_pred,
            w_prev: vec![ZERO; len],
            phi_s_hat: cfg.init_psd,
            phi_recursive: cfg.init_psd,
            phi_u: cfg.eta,
            pz: vec![ZERO; len],
        })
    }

    pub fn len(&self) -> usize {
        self.w_pred.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w_pred.is_empty()
    }

    #[inline]
    pub fn covariance(&self, row: usize, col: usize) -> Complex64 {
        self.phi_pred[row * self.len() + col]
    }

    /// Replaces the weights, e.g. to freeze a known filter.
    pub fn set_weights(&mut self, w: &[Complex64]) {
        assert_eq!(w.len(), self.len());
        self.w_pred.copy_from_slice(w);
        self.w_prev.copy_from_slice(w);
    }

    fn symmetrize(&mut self) {
        let l = self.len();
        for i in 0..l {
            let d = self.phi_pred[i * l + i];
            self.phi_pred[i * l + i] = (d + d.conj()) * 0.5;
            for j in i + 1..l {
                let a = self.phi_pred[i * l + j];
                let b = self.phi_pred[j * l + i];
                self.phi_pred[i * l + j] = (a + b.conj()) * 0.5;
                self.phi_pred[j * l + i] = (b + a.conj()) * 0.5;
            }
        }
    }

    /// `pz = Phi z`, returns `z^H Phi z`.
    fn project(&mut self, z: &[Complex64]) -> f64 {
        let l = self.len();
        let mut quad = ZERO;
        for i in 0..l {
            let row = &self.phi_pred[i * l..(i + 1) * l];
            let acc = row.iter().zip(z).fold(ZERO, |acc, (p, zj)| acc + p * zj);
            self.pz[i] = acc;
            quad += z[i].conj() * acc;
        }
        quad.re
    }

    /// `Phi -= k (Phi z)^H`; valid because `Phi` is Hermitian.
    fn downdate(&mut self, gain: &[Complex64]) {
        let l = self.len();
        for i in 0..l {
            let ki = gain[i];
            let row = &mut self.phi_pred[i * l..(i + 1) * l];
            for (p, pzj) in row.iter_mut().zip(&self.pz) {
                *p -= ki * pzj.conj();
            }
        }
    }
}

/// Output of one filter step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    /// Posterior estimate `Y - w_hat^H z`.
    pub s_hat: Complex64,
    /// Prior error `Y - w(t|t-1)^H z`.
    pub s_prior: Complex64,
    pub gain: Vec<Complex64>,
}

/// Fresh state for the unified filter of `cfg`.
pub fn init_state(cfg: &DraecConfig) -> Result<FilterState> {
    FilterState::new(cfg.filter_len(), cfg)
}

/// `(1/L) |w_new - w_old|^2 + eta`.
pub fn estimate_process_noise(w_new: &[Complex64], w_old: &[Complex64], eta: f64) -> f64 {
    assert_eq!(w_new.len(), w_old.len());
    if w_new.is_empty() {
        return eta;
    }
    let change: f64 = w_new
        .iter()
        .zip(w_old)
        .map(|(a, b)| (a - b).norm_sqr())
        .sum();
    change / w_new.len() as f64 + eta
}

#[inline]
fn smooth_psd(prev: f64, power: f64, alpha: f64, floor: f64) -> f64 {
    (alpha * prev + (1.0 - alpha) * power).max(floor)
}

/// Both source PSD recursions from the previous posterior PSD.
///
/// Returns `(phi_s_hat, phi_new)` where the first uses the prior error and
/// the second the posterior estimate.
pub fn estimate_psd(
    phi_prev: f64,
    s_prior: Complex64,
    s_post: Complex64,
    alpha: f64,
    psd_floor: f64,
) -> (f64, f64) {
    (
        smooth_psd(phi_prev, s_prior.norm_sqr(), alpha, psd_floor),
        smooth_psd(phi_prev, s_post.norm_sqr(), alpha, psd_floor),
    )
}

#[inline]
fn dot_h(w: &[Complex64], z: &[Complex64]) -> Complex64 {
    w.iter().zip(z).fold(ZERO, |acc, (a, b)| acc + a.conj() * b)
}

fn check_inputs(state: &FilterState, z: &Regressor, y: Complex64) -> Result<()> {
    if z.len() != state.len() {
        return Err(Error::ShapeMismatch(format!(
            "regressor length {} does not match filter length {}",
            z.len(),
            state.len()
        )));
    }
    if !(y.re.is_finite() && y.im.is_finite()) {
        return Err(Error::NonFinite("observation"));
    }
    if z.0.iter().any(|v| !(v.re.is_finite() && v.im.is_finite())) {
        return Err(Error::NonFinite("regressor"));
    }
    Ok(())
}

/// One Kalman update followed by the prediction for the next frame.
pub fn kalman_step(
    state: &mut FilterState,
    z: &Regressor,
    y: Complex64,
    cfg: &DraecConfig,
) -> Result<StepOutput> {
    check_inputs(state, z, y)?;
    let z = z.as_slice();

    let s_prior = y - dot_h(&state.w_pred, z);
    let phi_s = match cfg.fixed_source_psd {
        Some(v) => v,
        None => smooth_psd(
            state.phi_recursive,
            s_prior.norm_sqr(),
            cfg.alpha,
            cfg.psd_floor,
        ),
    };

    let quad = state.project(z);
    let denom = (phi_s + quad).max(cfg.psd_floor);
    let gain: Vec<Complex64> = state.pz.iter().map(|p| p / denom).collect();

    let mut w_hat = state.w_pred.clone();
    let correction = s_prior.conj();
    for (w, k) in w_hat.iter_mut().zip(&gain) {
        *w += k * correction;
    }
    state.downdate(&gain);
    state.symmetrize();

    let s_hat = y - dot_h(&w_hat, z);
    state.phi_s_hat = phi_s;
    state.phi_recursive = smooth_psd(
        state.phi_recursive,
        s_hat.norm_sqr(),
        cfg.alpha,
        cfg.psd_floor,
    );

    state.phi_u = match cfg.fixed_process_noise {
        Some(v) => v,
        None => estimate_process_noise(&w_hat, &state.w_prev, cfg.eta),
    };

    // Predict.
    let a = cfg.transition;
    let l = state.len();
    for (pred, (prev, w)) in state
        .w_pred
        .iter_mut()
        .zip(state.w_prev.iter_mut().zip(&w_hat))
    {
        *prev = *w;
        *pred = w * a;
    }
    if a != 1.0 {
        let a2 = a * a;
        state.phi_pred.iter_mut().for_each(|p| *p *= a2);
    }
    for i in 0..l {
        state.phi_pred[i * l + i].re += state.phi_u;
    }

    Ok(StepOutput {
        s_hat,
        s_prior,
        gain,
    })
}

/// One exponentially weighted RLS step. `phi_pred` holds the inverse
/// correlation matrix and `w_pred` the current weights.
pub fn rls_step(
    state: &mut FilterState,
    z: &Regressor,
    y: Complex64,
    cfg: &DraecConfig,
) -> Result<StepOutput> {
    check_inputs(state, z, y)?;
    let z = z.as_slice();

    let s_prior = y - dot_h(&state.w_pred, z);
    let quad = state.project(z);
    let denom = (cfg.lambda + quad).max(cfg.psd_floor);
    let gain: Vec<Complex64> = state.pz.iter().map(|p| p / denom).collect();

    let correction = s_prior.conj();
    for ((w, prev), k) in state
        .w_pred
        .iter_mut()
        .zip(state.w_prev.iter_mut())
        .zip(&gain)
    {
        *prev = *w;
        *w += k * correction;
    }
    state.downdate(&gain);
    if cfg.lambda != 1.0 {
        let inv = 1.0 / cfg.lambda;
        state.phi_pred.iter_mut().for_each(|p| *p *= inv);
    }
    state.symmetrize();

    let s_hat = y - dot_h(&state.w_pred, z);
    state.phi_s_hat = state.phi_recursive;
    state.phi_recursive = smooth_psd(
        state.phi_recursive,
        s_hat.norm_sqr(),
        cfg.alpha,
        cfg.psd_floor,
    );
    state.phi_u = estimate_process_noise(&state.w_pred, &state.w_prev, 0.0);
    state.w_prev.copy_from_slice(&state.w_pred);

    Ok(StepOutput {
        s_hat,
        s_prior,
        gain,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn rand_c(rng: &mut ChaCha8Rng) -> Complex64 {
        c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    }

    fn scalar_cfg() -> DraecConfig {
        DraecConfig {
            playback_taps: 1,
            history_taps: 0,
            mics: 1,
            fixed_source_psd: Some(1.0),
            ..DraecConfig::default()
        }
    }

    #[test]
    fn defaults() {
        let cfg = DraecConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.filter_len(), 15);
        assert_eq!(cfg.delay, 2);
        assert_eq!(cfg.eta, 1e-4);
        assert_eq!(cfg.alpha, 0.8);
        assert_eq!(cfg.transition, 1.0);
    }

    #[test]
    fn validation_names_the_field() {
        let cfg = DraecConfig {
            alpha: 1.5,
            ..DraecConfig::default()
        };
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("alpha"), "{msg}");
        let cfg = DraecConfig {
            delay: 0,
            ..DraecConfig::default()
        };
        assert!(cfg.validate().unwrap_err().to_string().contains("delay"));
        let cfg = DraecConfig {
            playback_taps: 0,
            history_taps: 0,
            ..DraecConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn zero_history_gives_zero_regressor() {
        let cfg = DraecConfig::default();
        let z = build_regressor(&[], &[], &cfg);
        assert_eq!(z.len(), 15);
        assert!(z.as_slice().iter().all(|v| *v == ZERO));
    }

    #[test]
    fn regressor_block_order() {
        let cfg = DraecConfig {
            playback_taps: 2,
            history_taps: 1,
            mics: 2,
            delay: 2,
            ..DraecConfig::default()
        };
        let x = [c(1.0, 0.0), c(2.0, 0.0)];
        let y1 = [c(10.0, 0.0)];
        let y2 = [c(20.0, 0.0)];
        let z = build_regressor(&x, &[&y1, &y2], &cfg);
        assert_eq!(z.as_slice(), &[x[0], x[1], y1[0], y2[0]]);

        // Same layout through the frame-series path: X(t), X(t-1), Y1(t-2), Y2(t-2).
        let t = 5;
        let play: Vec<Complex64> = (0..8).map(|i| c(i as f64, 0.0)).collect();
        let hist: Vec<Vec<Complex64>> = (1..=2)
            .map(|m| (0..8).map(|i| c(i as f64, m as f64)).collect())
            .collect();
        let mut z = Regressor::zeros(0);
        z.fill(&cfg.layout(), t, &play, &hist);
        assert_eq!(z.as_slice(), &[play[5], play[4], hist[0][3], hist[1][3]]);
    }

    #[test]
    fn init_state_defaults() {
        let cfg = DraecConfig::default();
        let s = init_state(&cfg).unwrap();
        assert_eq!(s.len(), 15);
        assert!(s.w_pred.iter().all(|v| *v == ZERO));
        for i in 0..15 {
            for j in 0..15 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert_eq!(s.covariance(i, j), c(want, 0.0));
            }
        }
        assert_eq!(init_state(&cfg).unwrap(), s);

        let minimal = DraecConfig {
            playback_taps: 0,
            history_taps: 1,
            mics: 1,
            ..DraecConfig::default()
        };
        assert_eq!(init_state(&minimal).unwrap().len(), 1);

        let empty = DraecConfig {
            playback_taps: 0,
            history_taps: 0,
            ..DraecConfig::default()
        };
        assert!(init_state(&empty).is_err());
    }

    #[test]
    fn scalar_kalman_step_by_hand() {
        let cfg = scalar_cfg();
        let mut s = init_state(&cfg).unwrap();
        let out = kalman_step(
            &mut s,
            &Regressor::from_vec(vec![c(1.0, 0.0)]),
            c(1.0, 0.0),
            &cfg,
        )
        .unwrap();
        assert_eq!(out.s_prior, c(1.0, 0.0));
        assert!((out.gain[0] - c(0.5, 0.0)).norm() < 1e-15);
        assert!((s.w_prev[0] - c(0.5, 0.0)).norm() < 1e-15);
        assert!((out.s_hat - c(0.5, 0.0)).norm() < 1e-15);
        // Posterior covariance 0.5, then predict adds phi_u.
        let phi_u = 0.25 + cfg.eta;
        assert!((s.covariance(0, 0).re - (0.5 + phi_u)).abs() < 1e-15);
    }

    #[test]
    fn zero_regressor_freezes_weights() {
        let cfg = DraecConfig::default();
        let mut s = init_state(&cfg).unwrap();
        let w0: Vec<Complex64> = (0..15).map(|i| c(i as f64 * 0.1, -0.2)).collect();
        s.set_weights(&w0);
        let before = s.phi_pred.clone();
        let y = c(0.3, -0.7);
        let out = kalman_step(&mut s, &Regressor::zeros(15), y, &cfg).unwrap();
        assert!(out.gain.iter().all(|k| *k == ZERO));
        assert_eq!(out.s_hat, y);
        assert_eq!(s.w_pred, w0);
        for i in 0..15 {
            for j in 0..15 {
                let mut want = before[i * 15 + j];
                if i == j {
                    want.re += cfg.eta;
                }
                assert_eq!(s.covariance(i, j), want);
            }
        }

        let mut r = init_state(&cfg).unwrap();
        r.set_weights(&w0);
        let out = rls_step(&mut r, &Regressor::zeros(15), y, &cfg).unwrap();
        assert_eq!(out.s_hat, y);
        assert_eq!(r.w_pred, w0);
    }

    #[test]
    fn non_finite_inputs_are_rejected() {
        let cfg = scalar_cfg();
        let mut s = init_state(&cfg).unwrap();
        let z = Regressor::from_vec(vec![c(1.0, 0.0)]);
        assert!(matches!(
            kalman_step(&mut s, &z, c(f64::NAN, 0.0), &cfg),
            Err(Error::NonFinite(_))
        ));
        let bad = Regressor::from_vec(vec![c(f64::INFINITY, 0.0)]);
        assert!(rls_step(&mut s, &bad, c(0.0, 0.0), &cfg).is_err());
        let wrong = Regressor::zeros(3);
        assert!(matches!(
            kalman_step(&mut s, &wrong, c(0.0, 0.0), &cfg),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn process_noise_formula() {
        let w = vec![c(0.3, 0.1); 15];
        assert_eq!(estimate_process_noise(&w, &w, 1e-4), 1e-4);
        // |dw|^2 = 0.15 spread over 15 taps.
        let old = vec![ZERO; 15];
        let new = vec![c(0.1, 0.0); 15];
        assert!((estimate_process_noise(&new, &old, 1e-4) - 0.0101).abs() < 1e-15);
        let scaled: Vec<Complex64> = new.iter().map(|v| v * 3.0).collect();
        let base = estimate_process_noise(&new, &old, 1e-4) - 1e-4;
        let big = estimate_process_noise(&scaled, &old, 1e-4) - 1e-4;
        assert!((big - 9.0 * base).abs() < 1e-14);
    }

    #[test]
    fn psd_recursions() {
        let (hat, _) = estimate_psd(0.7, c(5.0, 0.0), c(1.0, 1.0), 1.0, 1e-10);
        assert_eq!(hat, 0.7);
        let (hat, new) = estimate_psd(1.0, c(2f64.sqrt(), 0.0), c(0.0, 1.0), 0.8, 1e-10);
        assert!((hat - 1.2).abs() < 1e-12);
        assert!((new - 1.0).abs() < 1e-12);

        let mut phi = 1.0;
        let mut steps = 0;
        while phi > 1e-10 {
            let next = estimate_psd(phi, ZERO, ZERO, 0.8, 1e-10).1;
            if next > 1e-10 {
                assert!((next - 0.8 * phi).abs() < 1e-20);
            }
            phi = next;
            steps += 1;
            assert!(steps < 200);
        }
        assert_eq!(phi, 1e-10);
    }

    #[test]
    fn gain_identity_and_posterior_error() {
        let cfg = DraecConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut s = init_state(&cfg).unwrap();
        for _ in 0..300 {
            let z = Regressor::from_vec((0..15).map(|_| rand_c(&mut rng)).collect());
            let y = rand_c(&mut rng);
            let prior = s.clone();
            let out = kalman_step(&mut s, &z, y, &cfg).unwrap();

            let zv = z.as_slice();
            let pz: Vec<Complex64> = (0..15)
                .map(|i| (0..15).map(|j| prior.covariance(i, j) * zv[j]).sum())
                .collect();
            let quad: f64 = zv.iter().zip(&pz).map(|(a, b)| (a.conj() * b).re).sum();
            let denom = s.phi_s_hat + quad;
            let scale: f64 = pz.iter().map(|v| v.norm()).fold(0.0, f64::max);
            for (k, p) in out.gain.iter().zip(&pz) {
                assert!((k * denom - p).norm() <= 1e-10 * scale);
            }
            let expected = out.s_prior * (s.phi_s_hat / denom);
            assert!((out.s_hat - expected).norm() <= 1e-10 * out.s_prior.norm().max(1e-300));
        }
    }

    #[test]
    fn rls_converges_on_static_scalar_system() {
        let cfg = DraecConfig {
            playback_taps: 1,
            history_taps: 0,
            mics: 1,
            lambda: 1.0,
            init_covariance: 100.0,
            ..DraecConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut s = init_state(&cfg).unwrap();
        let mut zs = Vec::new();
        for _ in 0..200 {
            let zt = rand_c(&mut rng);
            zs.push(zt);
            // Y = w^H z with w = 0.5.
            rls_step(&mut s, &Regressor::from_vec(vec![zt]), zt * 0.5, &cfg).unwrap();
        }
        let w = s.w_pred[0];
        assert!((w - c(0.5, 0.0)).norm() <= 1e-3);

        // Regularized batch least squares with prior weight 1/Phi(0).
        let energy: f64 = zs.iter().map(|v| v.norm_sqr()).sum();
        let cross: f64 = zs.iter().map(|v| v.norm_sqr() * 0.5).sum();
        let batch = cross / (0.01 + energy);
        assert!((w.re - batch).abs() < 1e-10 && w.im.abs() < 1e-10);
    }
}
