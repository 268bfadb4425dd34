//! Image-source room impulse responses for a shoebox room.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SPEED_OF_SOUND: f64 = 343.0;

/// Half-width of the windowed-sinc fractional delay kernel (8 taps total).
const SINC_HALF_WIDTH: i64 = 4;

pub type Position = [f64; 3];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomSpec {
    pub dimensions: Position,
    pub rt60: f64,
    pub source_pos: Position,
    pub loudspeaker_pos: Position,
    pub mic_pos: Vec<Position>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interferer_pos: Option<Position>,
    pub sample_rate: u32,
    pub max_rir_len: usize,
}

impl RoomSpec {
    pub fn volume(&self) -> f64 {
        self.dimensions.iter().product()
    }

    pub fn surface(&self) -> f64 {
        let [x, y, z] = self.dimensions;
        2.0 * (x * y + x * z + y * z)
    }

    pub fn contains(&self, p: &Position) -> bool {
        p.iter()
            .zip(&self.dimensions)
            .all(|(v, d)| *v > 0.0 && v < d)
    }

    /// Uniform wall absorption from Sabine's formula; errors when the
    /// requested decay is too fast for the room.
    pub fn sabine_absorption(&self) -> Result<f64> {
        if self.rt60 < 0.0 || !self.rt60.is_finite() {
            return Err(Error::Room(format!("rt60 must be >= 0, got {}", self.rt60)));
        }
        if self.rt60 == 0.0 {
            return Ok(1.0);
        }
        let absorption = 0.161 * self.volume() / (self.surface() * self.rt60);
        if absorption > 1.0 {
            return Err(Error::Room(format!(
                "rt60 {} s is too short for a {:?} m room (Sabine absorption {absorption:.3} > 1)",
                self.rt60, self.dimensions
            )));
        }
        Ok(absorption)
    }

    /// Uniform wall reflection coefficient.
    ///
    /// An image-source field in a shoebox decays more slowly than the
    /// diffuse-field formulas predict, because the late tail is dominated by
    /// images along the longest axis. Starting from Sabine's value, the
    /// coefficient is therefore tuned by bisection until the Schroeder decay
    /// of a reference response between two fixed interior points matches the
    /// requested rt60.
    pub fn reflection_coefficient(&self) -> Result<f64> {
        let absorption = self.sabine_absorption()?;
        if self.rt60 == 0.0 {
            return Ok(0.0);
        }
        let sabine = (1.0 - absorption).sqrt();
        if sabine == 0.0 {
            return Ok(0.0);
        }
        let d = self.dimensions;
        let src = [0.31 * d[0], 0.43 * d[1], 0.52 * d[2]];
        let mic = [0.67 * d[0], 0.58 * d[1], 0.41 * d[2]];
        let probe = RoomSpec {
            max_rir_len: ((1.5 * self.rt60 * self.sample_rate as f64).ceil() as usize).max(64),
            ..self.clone()
        };
        let measure = |decay: f64| -> f64 {
            let rir = rir_with_reflection(&probe, (-decay).exp(), &src, &mic);
            schroeder_t60(&rir, self.sample_rate).unwrap_or(0.0)
        };
        // The measured T60 falls as the per-reflection decay grows.
        let mut lo = -sabine.ln();
        let mut hi = lo;
        while measure(lo) < self.rt60 {
            lo /= 2.0;
            if lo < 1e-6 {
                return Ok((-lo).exp());
            }
        }
        while measure(hi) > self.rt60 {
            hi *= 2.0;
            if hi > 50.0 {
                return Ok((-hi).exp());
            }
        }
        for _ in 0..30 {
            let mid = (lo * hi).sqrt();
            if measure(mid) > self.rt60 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi / lo < 1.002 {
                break;
            }
        }
        Ok((-(lo * hi).sqrt()).exp())
    }

    pub fn validate(&self) -> Result<()> {
        if self.dimensions.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
            return Err(Error::Room(format!(
                "room dimensions must be positive, got {:?}",
                self.dimensions
            )));
        }
        let named = [
            ("source", Some(self.source_pos)),
            ("loudspeaker", Some(self.loudspeaker_pos)),
            ("interferer", self.interferer_pos),
        ];
        for (name, pos) in named {
            if let Some(p) = pos {
                if !self.contains(&p) {
                    return Err(Error::Room(format!(
                        "{name} position {p:?} is outside the room"
                    )));
                }
            }
        }
        if self.mic_pos.is_empty() {
            return Err(Error::Room("at least one microphone is required".into()));
        }
        for (i, p) in self.mic_pos.iter().enumerate() {
            if !self.contains(p) {
                return Err(Error::Room(format!(
                    "microphone {i} at {p:?} is outside the room"
                )));
            }
            for q in &self.mic_pos[..i] {
                if distance(p, q) <= 0.0 {
                    return Err(Error::Room("microphones must not coincide".into()));
                }
            }
        }
        if self.sample_rate == 0 || self.max_rir_len == 0 {
            return Err(Error::Room(
                "sample rate and RIR length must be positive".into(),
            ));
        }
        self.sabine_absorption().map(|_| ())
    }

    /// Direct-path delay in (fractional) samples.
    pub fn direct_delay(&self, src: &Position, mic: &Position) -> f64 {
        distance(src, mic) / SPEED_OF_SOUND * self.sample_rate as f64
    }
}

pub fn distance(a: &Position, b: &Position) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Adds `gain * delta(n - delay)` using an 8-tap Hann-windowed sinc.
fn add_fractional_impulse(rir: &mut [f64], delay: f64, gain: f64) {
    let base = delay.floor() as i64;
    for n in base - SINC_HALF_WIDTH + 1..=base + SINC_HALF_WIDTH {
        if n < 0 || n as usize >= rir.len() {
            continue;
        }
        let x = n as f64 - delay;
        let window = 0.5 * (1.0 + (PI * x / SINC_HALF_WIDTH as f64).cos());
        rir[n as usize] += gain * sinc(x) * window;
    }
}

/// Image-method impulse response from `src` to `mic` with uniform walls.
///
/// Each image contributes `beta^reflections / (4 pi d)` at delay `d / c`.
pub fn image_method_rir(spec: &RoomSpec, src: &Position, mic: &Position) -> Result<Vec<f64>> {
    check_inside(spec, src, mic)?;
    let beta = spec.reflection_coefficient()?;
    Ok(rir_with_reflection(spec, beta, src, mic))
}

fn check_inside(spec: &RoomSpec, src: &Position, mic: &Position) -> Result<()> {
    if !spec.contains(src) || !spec.contains(mic) {
        return Err(Error::Room(format!(
            "positions {src:?} and {mic:?} must lie inside {:?}",
            spec.dimensions
        )));
    }
    Ok(())
}

/// Responses for several (source, microphone) pairs sharing one
/// reflection coefficient.
pub fn image_method_rirs(spec: &RoomSpec, pairs: &[(Position, Position)]) -> Result<Vec<Vec<f64>>> {
    for (src, mic) in pairs {
        check_inside(spec, src, mic)?;
    }
    let beta = spec.reflection_coefficient()?;
    Ok(pairs
        .iter()
        .map(|(src, mic)| rir_with_reflection(spec, beta, src, mic))
        .collect())
}

/// Image-method response for a given reflection coefficient.
pub fn rir_with_reflection(spec: &RoomSpec, beta: f64, src: &Position, mic: &Position) -> Vec<f64> {
    let fs = spec.sample_rate as f64;
    let mut rir = vec![0.0; spec.max_rir_len];
    let max_dist = (spec.max_rir_len as f64 + SINC_HALF_WIDTH as f64) / fs * SPEED_OF_SOUND;
    let dims = spec.dimensions;
    let range = |d: f64| -> i64 {
        if beta == 0.0 {
            0
        } else {
            (max_dist / (2.0 * d)).ceil() as i64 + 1
        }
    };
    let (rx, ry, rz) = (range(dims[0]), range(dims[1]), range(dims[2]));

    // Per-axis image offsets and reflection counts.
    let axis = |k: usize, n: i64, p: i64| -> (f64, i32) {
        let pos = (1 - 2 * p) as f64 * src[k] + 2.0 * n as f64 * dims[k] - mic[k];
        let refl = ((n - p).abs() + n.abs()) as i32;
        (pos, refl)
    };

    for nx in -rx..=rx {
        for px in 0..2 {
            let (dx, ref_x) = axis(0, nx, px);
            if dx.abs() > max_dist {
                continue;
            }
            for ny in -ry..=ry {
                for py in 0..2 {
                    let (dy, ref_y) = axis(1, ny, py);
                    if dx.hypot(dy) > max_dist {
                        continue;
                    }
                    for nz in -rz..=rz {
                        for pz in 0..2 {
                            let (dz, ref_z) = axis(2, nz, pz);
                            let refl = ref_x + ref_y + ref_z;
                            if beta == 0.0 && refl > 0 {
                                continue;
                            }
                            let d = (dx * dx + dy * dy + dz * dz).sqrt();
                            if d > max_dist {
                                continue;
                            }
                            let gain = beta.powi(refl) / (4.0 * PI * d);
                            add_fractional_impulse(&mut rir, d / SPEED_OF_SOUND * fs, gain);
                        }
                    }
                }
            }
        }
    }
    rir
}

/// Reverberation time from Schroeder backward integration, fitting the
/// energy decay curve between -5 and -25 dB and extrapolating to -60 dB.
pub fn schroeder_t60(rir: &[f64], sample_rate: u32) -> Option<f64> {
    let mut edc = vec![0.0; rir.len()];
    let mut acc = 0.0;
    for (i, v) in rir.iter().enumerate().rev() {
        acc += v * v;
        edc[i] = acc;
    }
    let total = edc.first().copied()?;
    if total <= 0.0 {
        return None;
    }
    let (mut sx, mut sy, mut sxx, mut sxy, mut n) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (i, e) in edc.iter().enumerate() {
        let db = 10.0 * (e / total).log10();
        if (-25.0..=-5.0).contains(&db) {
            let t = i as f64 / sample_rate as f64;
            sx += t;
            sy += db;
            sxx += t * t;
            sxy += t * db;
            n += 1.0;
        }
    }
    if n < 2.0 {
        return None;
    }
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    (slope < 0.0).then(|| -60.0 / slope)
}
