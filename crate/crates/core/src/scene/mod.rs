//! Synthetic acoustic scenes with ground-truth stems.
//!
//! A scene places a near-end talker, a loudspeaker, an optional interferer and
//! an M-microphone array in a shoebox room, convolves each source with its
//! image-method impulse responses and mixes the images at requested
//! signal-to-echo, signal-to-interference and signal-to-noise ratios. All
//! ratios are measured on the full-utterance power of the first microphone.

pub mod ar;
pub mod rir;
pub mod signals;

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{self, Encoding};

pub use ar::{ArScene, ArSceneConfig};
pub use rir::{
    image_method_rir, image_method_rirs, rir_with_reflection, schroeder_t60, Position, RoomSpec,
    SPEED_OF_SOUND,
};
use signals::{fft_convolve, power, speech_like, white_noise};

/// Early-reflection window kept in the target reference, in seconds.
pub const EARLY_WINDOW_S: f64 = 0.05;

/// Parameters of the random scene generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub duration_s: f64,
    pub rt60: f64,
    /// Signal-to-echo ratio; absent means no near-end talker (single talk).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ser_db: Option<f64>,
    /// Signal-to-interference ratio; absent means no interferer.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sir_db: Option<f64>,
    /// Signal-to-noise ratio of white sensor noise; `inf` disables noise.
    pub snr_db: f64,
    /// Loudspeaker hard-clipping level; absent means linear playback.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clip_threshold: Option<f64>,
    /// Concatenate a second scene with a different geometry.
    pub path_change: bool,
    pub room_min: Position,
    pub room_max: Position,
    pub mics: usize,
    pub mic_spacing: f64,
    /// Loudspeaker distance range to the nearest microphone.
    pub speaker_distance: [f64; 2],
    /// Talker and interferer distance range to the array center.
    pub source_distance: [f64; 2],
    pub source_rms: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            duration_s: 8.0,
            rt60: 0.3,
            ser_db: Some(-10.0),
            sir_db: None,
            snr_db: 30.0,
            clip_threshold: None,
            path_change: false,
            room_min: [4.0, 3.0, 2.5],
            room_max: [8.0, 6.0, 3.5],
            mics: 2,
            mic_spacing: 0.06,
            speaker_distance: [0.05, 0.15],
            source_distance: [1.0, 3.0],
            source_rms: 0.1,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, reason: &str| Err(Error::config(format!("scene.{key}"), reason));
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return bad("duration_s", "must be positive");
        }
        if !(self.rt60 >= 0.0 && self.rt60.is_finite()) {
            return bad("rt60", "must be finite and >= 0");
        }
        if self.snr_db.is_nan() {
            return bad("snr_db", "must be a number or inf");
        }
        if let Some(c) = self.clip_threshold {
            if !(c > 0.0) {
                return bad("clip_threshold", "must be > 0");
            }
        }
        if self.mics == 0 {
            return bad("mics", "must be at least 1");
        }
        if !(self.mic_spacing > 0.0) {
            return bad("mic_spacing", "must be > 0");
        }
        for k in 0..3 {
            if !(self.room_min[k] > 1.0 && self.room_min[k] <= self.room_max[k]) {
                return bad(
                    "room_min",
                    "each dimension must exceed 1 m and not exceed room_max",
                );
            }
        }
        if !(self.speaker_distance[0] > 0.0 && self.speaker_distance[0] <= self.speaker_distance[1])
        {
            return bad("speaker_distance", "must be an increasing positive range");
        }
        if !(self.source_distance[0] > 0.0 && self.source_distance[0] <= self.source_distance[1]) {
            return bad("source_distance", "must be an increasing positive range");
        }
        if !(self.source_rms > 0.0) {
            return bad("source_rms", "must be > 0");
        }
        Ok(())
    }
}

/// Ground-truth components; each is `[mic][sample]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Stems {
    /// Direct path plus early reflections of the talker.
    pub target_image: Vec<Vec<f64>>,
    pub full_target_image: Vec<Vec<f64>>,
    pub echo_image: Vec<Vec<f64>>,
    pub interference_image: Vec<Vec<f64>>,
    pub noise: Vec<Vec<f64>>,
}

impl Stems {
    /// Stems that add up to the mixture, with their names.
    pub fn mixture_parts(&self) -> [(&'static str, &Vec<Vec<f64>>); 4] {
        [
            ("full_target_image", &self.full_target_image),
            ("echo_image", &self.echo_image),
            ("interference_image", &self.interference_image),
            ("noise", &self.noise),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneMeta {
    pub seed: u64,
    pub sample_rate: u32,
    pub samples: usize,
    pub mics: usize,
    pub rt60: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ser_db: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sir_db: Option<f64>,
    pub snr_db: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip_threshold: Option<f64>,
    /// True when there is no near-end talker.
    pub single_talk: bool,
    /// Echo is synthesized by linear convolution (optionally clipped), not recorded.
    pub echo_model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub change_point: Option<usize>,
    pub room: RoomSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub room_after_change: Option<RoomSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub mics: Vec<Vec<f64>>,
    pub playback: Vec<f64>,
    pub stems: Stems,
    pub meta: SceneMeta,
}

impl Scene {
    pub fn len(&self) -> usize {
        self.playback.len()
    }

    pub fn is_empty(&self) -> bool {
        self.playback.is_empty()
    }
}

/// Requested mixing levels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneLevels {
    pub ser_db: Option<f64>,
    pub sir_db: Option<f64>,
    pub snr_db: f64,
    pub clip_threshold: Option<f64>,
}

/// Memoryless hard clip at `±clip_threshold`.
pub fn loudspeaker_nonlinearity(x: &[f64], clip_threshold: f64) -> Vec<f64> {
    assert!(clip_threshold > 0.0, "clip threshold must be positive");
    x.iter()
        .map(|v| v.clamp(-clip_threshold, clip_threshold))
        .collect()
}

fn scale_for_ratio(reference_power: f64, power: f64, ratio_db: f64) -> f64 {
    (reference_power / (power * 10f64.powf(ratio_db / 10.0))).sqrt()
}

fn scaled(x: &[Vec<f64>], g: f64) -> Vec<Vec<f64>> {
    x.iter()
        .map(|c| c.iter().map(|v| v * g).collect())
        .collect()
}

/// Convolves the sources with their room responses and mixes them at the
/// requested levels.
pub fn synthesize_scene(
    speech: &[f64],
    interference: Option<&[f64]>,
    playback: &[f64],
    room: &RoomSpec,
    levels: SceneLevels,
    seed: u64,
) -> Result<Scene> {
    room.validate()?;
    let len = playback.len();
    if speech.len() != len || interference.is_some_and(|i| i.len() != len) {
        return Err(Error::Scene("source signals must have equal length".into()));
    }
    if levels.sir_db.is_some() != (interference.is_some() && room.interferer_pos.is_some()) {
        return Err(Error::Scene(
            "an interferer needs a signal, a position and a requested SIR".into(),
        ));
    }
    let fs = room.sample_rate as f64;
    let mics = room.mic_pos.len();
    let early_len = (EARLY_WINDOW_S * fs).round();

    let driven = match levels.clip_threshold {
        Some(c) => loudspeaker_nonlinearity(playback, c),
        None => playback.to_vec(),
    };

    let mut full_target = Vec::with_capacity(mics);
    let mut early_target = Vec::with_capacity(mics);
    let mut echo = Vec::with_capacity(mics);
    let mut interf = Vec::with_capacity(mics);
    let beta = room.reflection_coefficient()?;
    for mic in &room.mic_pos {
        let h = rir_with_reflection(room, beta, &room.source_pos, mic);
        let cutoff =
            ((room.direct_delay(&room.source_pos, mic) + early_len).ceil() as usize).min(h.len());
        full_target.push(fft_convolve(speech, &h));
        early_target.push(fft_convolve(speech, &h[..cutoff]));
        let he = rir_with_reflection(room, beta, &room.loudspeaker_pos, mic);
        echo.push(fft_convolve(&driven, &he));
        interf.push(match (interference, room.interferer_pos) {
            (Some(sig), Some(pos)) => {
                fft_convolve(sig, &rir_with_reflection(room, beta, &pos, mic))
            }
            _ => vec![0.0; len],
        });
    }

    let p_target = power(&full_target[0]);
    let p_echo = power(&echo[0]);
    let echo_gain = match levels.ser_db {
        Some(ser) => {
            if p_target == 0.0 {
                return Err(Error::Scene(format!(
                    "target is silent but SER {ser} dB was requested"
                )));
            }
            if p_echo == 0.0 {
                return Err(Error::Scene(
                    "echo is silent but an SER was requested".into(),
                ));
            }
            scale_for_ratio(p_target, p_echo, ser)
        }
        None => 1.0,
    };
    let echo = scaled(&echo, echo_gain);

    let interf = match levels.sir_db {
        Some(sir) => {
            let p = power(&interf[0]);
            if p_target == 0.0 || p == 0.0 {
                return Err(Error::Scene(
                    "SIR needs a non-silent target and interferer".into(),
                ));
            }
            scaled(&interf, scale_for_ratio(p_target, p, sir))
        }
        None => interf,
    };

    let reference = if p_target > 0.0 {
        p_target
    } else {
        power(&echo[0])
    };
    let noise = if levels.snr_db.is_infinite() && levels.snr_db > 0.0 {
        vec![vec![0.0; len]; mics]
    } else {
        let raw: Vec<Vec<f64>> = (0..mics)
            .map(|m| white_noise(len, seed.wrapping_add(1 + m as u64)))
            .collect();
        let p = power(&raw[0]);
        if reference == 0.0 || p == 0.0 {
            return Err(Error::Scene(
                "noise level needs a non-silent reference".into(),
            ));
        }
        scaled(&raw, scale_for_ratio(reference, p, levels.snr_db))
    };

    let mixture: Vec<Vec<f64>> = (0..mics)
        .map(|m| {
            (0..len)
                .map(|n| full_target[m][n] + echo[m][n] + interf[m][n] + noise[m][n])
                .collect()
        })
        .collect();

    Ok(Scene {
        mics: mixture,
        playback: playback.to_vec(),
        stems: Stems {
            target_image: early_target,
            full_target_image: full_target,
            echo_image: echo,
            interference_image: interf,
            noise,
        },
        meta: SceneMeta {
            seed,
            sample_rate: room.sample_rate,
            samples: len,
            mics,
            rt60: room.rt60,
            ser_db: levels.ser_db,
            sir_db: levels.sir_db,
            snr_db: levels.snr_db,
            clip_threshold: levels.clip_threshold,
            single_talk: p_target == 0.0,
            echo_model: if levels.clip_threshold.is_some() {
                "synthetic-clipped".into()
            } else {
                "synthetic-linear".into()
            },
            change_point: None,
            room: room.clone(),
            room_after_change: None,
        },
    })
}

fn concat(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().chain(y).copied().collect())
        .collect()
}

/// Hard concatenation of two scenes; the junction is the change point.
pub fn apply_path_change(a: &Scene, b: &Scene) -> Result<Scene> {
    if a.meta.sample_rate != b.meta.sample_rate || a.mics.len() != b.mics.len() {
        return Err(Error::ShapeMismatch(format!(
            "cannot join scenes with {} ch @ {} Hz and {} ch @ {} Hz",
            a.mics.len(),
            a.meta.sample_rate,
            b.mics.len(),
            b.meta.sample_rate
        )));
    }
    if a.meta.single_talk != b.meta.single_talk {
        return Err(Error::Scene(
            "cannot join a single-talk scene with a double-talk scene".into(),
        ));
    }
    let stems = Stems {
        target_image: concat(&a.stems.target_image, &b.stems.target_image),
        full_target_image: concat(&a.stems.full_target_image, &b.stems.full_target_image),
        echo_image: concat(&a.stems.echo_image, &b.stems.echo_image),
        interference_image: concat(&a.stems.interference_image, &b.stems.interference_image),
        noise: concat(&a.stems.noise, &b.stems.noise),
    };
    let mut meta = a.meta.clone();
    meta.samples = a.len() + b.len();
    meta.change_point = Some(a.len());
    meta.room_after_change = Some(b.meta.room.clone());
    Ok(Scene {
        mics: concat(&a.mics, &b.mics),
        playback: a.playback.iter().chain(&b.playback).copied().collect(),
        stems,
        meta,
    })
}

fn uniform_in(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn inside_with_margin(p: &Position, dims: &Position, margin: f64) -> bool {
    p.iter()
        .zip(dims)
        .all(|(v, d)| *v > margin && *v < d - margin)
}

/// Draws a room and smart-speaker geometry.
pub fn sample_room(cfg: &SceneConfig, sample_rate: u32, rng: &mut ChaCha8Rng) -> Result<RoomSpec> {
    for _ in 0..1000 {
        let dims: Position =
            std::array::from_fn(|k| uniform_in(rng, cfg.room_min[k], cfg.room_max[k]));
        let center = [
            uniform_in(rng, 0.5, dims[0] - 0.5),
            uniform_in(rng, 0.5, dims[1] - 0.5),
            uniform_in(rng, 0.7, (dims[2] - 0.5).min(1.3)),
        ];
        let axis = uniform_in(rng, 0.0, PI);
        let span = cfg.mic_spacing * (cfg.mics as f64 - 1.0);
        let mic_pos: Vec<Position> = (0..cfg.mics)
            .map(|i| {
                let off = i as f64 * cfg.mic_spacing - span / 2.0;
                [
                    center[0] + off * axis.cos(),
                    center[1] + off * axis.sin(),
                    center[2],
                ]
            })
            .collect();

        let nearest = |p: &Position| {
            mic_pos
                .iter()
                .map(|m| rir::distance(p, m))
                .fold(f64::INFINITY, f64::min)
        };
        let speaker = {
            let r = uniform_in(rng, cfg.speaker_distance[0], cfg.speaker_distance[1]);
            let az = uniform_in(rng, 0.0, 2.0 * PI);
            let dz = uniform_in(rng, -0.05, 0.0);
            let p = [
                mic_pos[0][0] + r * az.cos(),
                mic_pos[0][1] + r * az.sin(),
                mic_pos[0][2] + dz,
            ];
            let d = nearest(&p);
            (d >= cfg.speaker_distance[0] && d <= cfg.speaker_distance[1]).then_some(p)
        };
        let place_source = |rng: &mut ChaCha8Rng| {
            let r = uniform_in(rng, cfg.source_distance[0], cfg.source_distance[1]);
            let az = uniform_in(rng, 0.0, 2.0 * PI);
            let z = uniform_in(rng, 1.1, 1.8).min(dims[2] - 0.3);
            let p = [center[0] + r * az.cos(), center[1] + r * az.sin(), z];
            inside_with_margin(&p, &dims, 0.3).then_some(p)
        };
        let source = place_source(rng);
        let interferer = place_source(rng);
        let (Some(loudspeaker_pos), Some(source_pos), Some(interferer_pos)) =
            (speaker, source, interferer)
        else {
            continue;
        };
        if !mic_pos.iter().all(|m| inside_with_margin(m, &dims, 0.2)) {
            continue;
        }
        let max_rir_len = ((1.2 * cfg.rt60 * sample_rate as f64).ceil() as usize).max(2048);
        let room = RoomSpec {
            dimensions: dims,
            rt60: cfg.rt60,
            source_pos,
            loudspeaker_pos,
            mic_pos,
            interferer_pos: Some(interferer_pos),
            sample_rate,
            max_rir_len,
        };
        if room.validate().is_ok() {
            return Ok(room);
        }
    }
    Err(Error::Room(
        "could not place sources inside the sampled rooms; check scene ranges".into(),
    ))
}

fn generate_segment(cfg: &SceneConfig, sample_rate: u32, seed: u64) -> Result<Scene> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let room = sample_room(cfg, sample_rate, &mut rng)?;
    let len = (cfg.duration_s * sample_rate as f64).round() as usize;
    let speech_seed: u64 = rng.random();
    let playback_seed: u64 = rng.random();
    let interferer_seed: u64 = rng.random();
    let noise_seed: u64 = rng.random();

    let speech = match cfg.ser_db {
        Some(_) => speech_like(len, sample_rate, cfg.source_rms, speech_seed),
        None => vec![0.0; len],
    };
    let playback = speech_like(len, sample_rate, cfg.source_rms, playback_seed);
    let interference = cfg
        .sir_db
        .map(|_| speech_like(len, sample_rate, cfg.source_rms, interferer_seed));
    let room = if cfg.sir_db.is_some() {
        room
    } else {
        RoomSpec {
            interferer_pos: None,
            ..room
        }
    };
    let mut scene = synthesize_scene(
        &speech,
        interference.as_deref(),
        &playback,
        &room,
        SceneLevels {
            ser_db: cfg.ser_db,
            sir_db: cfg.sir_db,
            snr_db: cfg.snr_db,
            clip_threshold: cfg.clip_threshold,
        },
        noise_seed,
    )?;
    scene.meta.seed = seed;
    Ok(scene)
}

/// Random scene from `cfg`; identical seeds give identical scenes. With
/// `path_change` two independently drawn segments are concatenated.
pub fn generate_scene(cfg: &SceneConfig, sample_rate: u32, seed: u64) -> Result<Scene> {
    cfg.validate()?;
    let first = generate_segment(cfg, sample_rate, seed)?;
    if !cfg.path_change {
        return Ok(first);
    }
    let second = generate_segment(cfg, sample_rate, seed ^ 0x9e37_79b9_7f4a_7c15)?;
    apply_path_change(&first, &second)
}

const STEM_FILES: [&str; 5] = [
    "target_image",
    "full_target_image",
    "echo_image",
    "interference_image",
    "noise",
];

/// Writes `mics.wav`, `playback.wav`, one WAV per stem and `meta.toml`.
pub fn save_scene(dir: &Path, scene: &Scene) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let fs = scene.meta.sample_rate;
    io::write_wav(&dir.join("mics.wav"), &scene.mics, fs, Encoding::Float32)?;
    io::write_wav(
        &dir.join("playback.wav"),
        std::slice::from_ref(&scene.playback),
        fs,
        Encoding::Float32,
    )?;
    let stems = &scene.stems;
    let parts = [
        &stems.target_image,
        &stems.full_target_image,
        &stems.echo_image,
        &stems.interference_image,
        &stems.noise,
    ];
    for (name, data) in STEM_FILES.iter().zip(parts) {
        io::write_wav(
            &dir.join(format!("{name}.wav")),
            data,
            fs,
            Encoding::Float32,
        )?;
    }
    let meta = toml::to_string(&scene.meta).map_err(|e| Error::Scene(e.to_string()))?;
    let path = dir.join("meta.toml");
    std::fs::write(&path, meta).map_err(|e| Error::io(path, e))
}

pub fn load_scene(dir: &Path) -> Result<Scene> {
    let path = dir.join("meta.toml");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let meta: SceneMeta = toml::from_str(&text).map_err(|e| Error::Parse {
        path: path.clone(),
        reason: e.message().to_string(),
    })?;
    let read = |name: &str| -> Result<Vec<Vec<f64>>> {
        let p = dir.join(format!("{name}.wav"));
        let (data, _) = io::read_wav(&p)?;
        if data.first().map_or(0, |c| c.len()) != meta.samples {
            return Err(Error::Scene(format!(
                "{} does not have {} samples",
                p.display(),
                meta.samples
            )));
        }
        Ok(data)
    };
    let mics = read("mics")?;
    let playback = read("playback")?.swap_remove(0);
    let mut stems: Vec<Vec<Vec<f64>>> =
        STEM_FILES.iter().map(|n| read(n)).collect::<Result<_>>()?;
    let noise = stems.pop().unwrap();
    let interference_image = stems.pop().unwrap();
    let echo_image = stems.pop().unwrap();
    let full_target_image = stems.pop().unwrap();
    let target_image = stems.pop().unwrap();
    Ok(Scene {
        mics,
        playback,
        stems: Stems {
            target_image,
            full_target_image,
            echo_image,
            interference_image,
            noise,
        },
        meta,
    })
}
