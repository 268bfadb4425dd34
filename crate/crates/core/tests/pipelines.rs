use draec::adaptive::DraecConfig;
use draec::config::RunConfig;
use draec::metrics::erle;
use draec::pipeline::{
    process_signals, process_wav, run_aec_then_dr, run_dr_only, run_dr_then_aec, AlgorithmVariant,
    Estimator, PipelineOptions, TraceMode,
};
use draec::scene::signals::white_noise;
use draec::scene::{generate_scene, SceneConfig};
use draec::stft::{self, Spectrogram, StftConfig};

fn off() -> PipelineOptions {
    PipelineOptions {
        trace: TraceMode::Off,
    }
}

fn echo_only(rt60: f64, clip: Option<f64>, seed: u64) -> draec::scene::Scene {
    let cfg = SceneConfig {
        duration_s: 8.0,
        rt60,
        ser_db: None,
        snr_db: f64::INFINITY,
        clip_threshold: clip,
        ..SceneConfig::default()
    };
    generate_scene(&cfg, 16_000, seed).unwrap()
}

#[test]
fn aec_stage_cancels_linear_echo() {
    let scene = echo_only(0.0, None, 31);
    let run = RunConfig::default();
    let variant: AlgorithmVariant = "kalman-aec-dr".parse().unwrap();
    let out = process_signals(&scene.mics, &scene.playback, &run, variant, &off()).unwrap();
    let stage1 = out.intermediate.unwrap();
    let from = 5 * 16_000;
    let to = scene.len() - run.stft.frame_len;
    for m in 0..scene.mics.len() {
        let res: f64 = stage1[m][from..to].iter().map(|v| v * v).sum();
        let echo: f64 = scene.stems.echo_image[m][from..to]
            .iter()
            .map(|v| v * v)
            .sum();
        let db = 10.0 * (res / echo).log10();
        assert!(db <= -20.0, "mic {m}: residual echo {db:.1} dB");
    }
}

#[test]
fn zero_playback_makes_aec_then_dr_a_dr_only_run() {
    let cfg = StftConfig::default();
    let x = vec![white_noise(8000, 1), white_noise(8000, 2)];
    let mics = stft::analyze(&x, &cfg).unwrap();
    let play = Spectrogram::zeros(1, mics.frames(), mics.bins());
    let filter = DraecConfig::default();
    for est in [Estimator::Kalman, Estimator::Rls] {
        let cascade = run_aec_then_dr(&mics, &play, &filter, est, &off()).unwrap();
        let dr = run_dr_only(&mics, &play, &filter, est, &off()).unwrap();
        assert_eq!(cascade.enhanced, dr.enhanced);
        assert_eq!(cascade.intermediate.unwrap(), mics);
    }
}

#[test]
fn zero_mics_give_zero_output() {
    let mics = Spectrogram::zeros(2, 40, 513);
    let cfg = StftConfig::default();
    let play = stft::analyze(&[white_noise(40 * 256 + 256, 3)], &cfg).unwrap();
    let out = run_dr_then_aec(
        &mics,
        &play,
        &DraecConfig::default(),
        Estimator::Kalman,
        &off(),
    )
    .unwrap();
    assert!(out.enhanced.data().iter().all(|v| v.norm() == 0.0));
}

#[test]
fn process_wav_silence_identity_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let mic_path = dir.path().join("mics.wav");
    let play_path = dir.path().join("play.wav");
    let run = RunConfig::default();
    let variant: AlgorithmVariant = "kalman-joint".parse().unwrap();

    let silence = vec![vec![0.0; 16_000]; 2];
    draec::io::write_wav(&mic_path, &silence, 16_000, draec::io::Encoding::Float32).unwrap();
    draec::io::write_wav(
        &play_path,
        &[vec![0.0; 16_000]],
        16_000,
        draec::io::Encoding::Float32,
    )
    .unwrap();
    let out = process_wav(
        &mic_path,
        &play_path,
        &dir.path().join("a.wav"),
        &run,
        variant,
        &off(),
    )
    .unwrap();
    assert!(out.enhanced.iter().flatten().all(|v| *v == 0.0));

    // A filter that can never adapt is the identity path.
    let mics = vec![white_noise(32_000, 4), white_noise(32_000, 5)];
    let play = white_noise(32_000, 6);
    draec::io::write_wav(&mic_path, &mics, 16_000, draec::io::Encoding::Float32).unwrap();
    draec::io::write_wav(&play_path, &[play], 16_000, draec::io::Encoding::Float32).unwrap();
    let mut frozen = run.clone();
    frozen.filter.eta = 0.0;
    frozen.filter.init_covariance = 0.0;
    let out = process_wav(
        &mic_path,
        &play_path,
        &dir.path().join("b.wav"),
        &frozen,
        variant,
        &off(),
    )
    .unwrap();
    let (read_mics, _) = draec::io::read_wav(&mic_path).unwrap();
    let edge = run.stft.frame_len;
    for m in 0..2 {
        let x = &read_mics[m][edge..32_000 - edge];
        let y = &out.enhanced[m][edge..32_000 - edge];
        let err: f64 = x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum();
        let sig: f64 = x.iter().map(|a| a * a).sum();
        assert!(10.0 * (err / sig).log10() <= -50.0);
    }

    for name in ["c.wav", "d.wav"] {
        process_wav(
            &mic_path,
            &play_path,
            &dir.path().join(name),
            &run,
            variant,
            &off(),
        )
        .unwrap();
    }
    let c = std::fs::read(dir.path().join("c.wav")).unwrap();
    let d = std::fs::read(dir.path().join("d.wav")).unwrap();
    assert_eq!(c, d);
}

#[test]
fn process_wav_rejects_mismatched_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let mic_path = dir.path().join("mics.wav");
    let play_path = dir.path().join("play.wav");
    let run = RunConfig::default();
    let variant: AlgorithmVariant = "rls-joint".parse().unwrap();
    let out = dir.path().join("o.wav");

    draec::io::write_wav(
        &mic_path,
        &[vec![0.0; 4000]],
        16_000,
        draec::io::Encoding::Pcm16,
    )
    .unwrap();
    draec::io::write_wav(
        &play_path,
        &[vec![0.0; 4000]],
        16_000,
        draec::io::Encoding::Pcm16,
    )
    .unwrap();
    let err = process_wav(&mic_path, &play_path, &out, &run, variant, &off()).unwrap_err();
    assert!(err.to_string().contains("microphones"), "{err}");

    draec::io::write_wav(
        &mic_path,
        &[vec![0.0; 4000], vec![0.0; 4000]],
        8000,
        draec::io::Encoding::Pcm16,
    )
    .unwrap();
    let err = process_wav(&mic_path, &play_path, &out, &run, variant, &off()).unwrap_err();
    assert!(err.to_string().contains("sample rate"), "{err}");

    let err = process_wav(
        &dir.path().join("missing.wav"),
        &play_path,
        &out,
        &run,
        variant,
        &off(),
    )
    .unwrap_err();
    assert_eq!(err.kind(), "wav");
}

#[test]
fn path_change_drops_then_recovers_erle() {
    let a = echo_only(0.3, None, 41);
    let b = echo_only(0.3, None, 42);
    let scene = draec::scene::apply_path_change(&a, &b).unwrap();
    let run = RunConfig::default();
    let variant: AlgorithmVariant = "kalman-joint".parse().unwrap();
    let out = process_signals(&scene.mics, &scene.playback, &run, variant, &off()).unwrap();
    let curve = erle(&scene.mics[0], &out.enhanced[0], 16_000, 1.0, 0.25, 80.0).unwrap();
    let cp = scene.meta.change_point.unwrap() as f64 / 16_000.0;
    let before = curve
        .iter()
        .filter(|p| p.time_s > cp - 2.5 && p.time_s + 0.5 <= cp)
        .map(|p| p.erle_db)
        .fold(f64::NEG_INFINITY, f64::max);
    let dip = curve
        .iter()
        .filter(|p| (p.time_s - 0.5 - cp).abs() <= 0.5)
        .map(|p| p.erle_db)
        .fold(f64::INFINITY, f64::min);
    assert!(before - dip >= 10.0, "before {before:.1}, dip {dip:.1}");
}

#[test]
fn clipping_lowers_linear_erle() {
    let run = RunConfig::default();
    let variant: AlgorithmVariant = "kalman-aec-dr".parse().unwrap();
    let mut steady = Vec::new();
    for clip in [None, Some(0.05)] {
        let scene = echo_only(0.0, clip, 51);
        let out = process_signals(&scene.mics, &scene.playback, &run, variant, &off()).unwrap();
        let curve = erle(
            &scene.mics[0],
            &out.intermediate.unwrap()[0],
            16_000,
            1.0,
            0.25,
            80.0,
        )
        .unwrap();
        steady.push(draec::metrics::erle_steady(&curve).unwrap());
    }
    assert!(steady[1] < steady[0] - 3.0, "{steady:?}");
}
