//! Acceptance run: one PASS/FAIL line per criterion, with runtime against
//! its budget. Exits nonzero if any criterion fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use draec::adaptive::{kalman_step, rls_step, DraecConfig, FilterState, Regressor};
use draec::config::RunConfig;
use draec::metrics::{erle, run_and_evaluate, shadow_outputs};
use draec::pipeline::{
    process_signals, run_aec_only, run_aec_then_dr, run_dr_only, run_dr_then_aec, run_joint,
    AlgorithmVariant, Estimator, FilterTrace, PipelineOptions, StageTrace, TraceMode,
};
use draec::scene::signals::{power, white_noise};
use draec::scene::{
    apply_path_change, generate_scene, image_method_rir, schroeder_t60, ArScene, ArSceneConfig,
    RoomSpec, SceneConfig,
};
use draec::stft::{self, Spectrogram, StftConfig};

struct Outcome {
    pass: bool,
    detail: String,
}

fn rand_c(rng: &mut ChaCha8Rng) -> Complex64 {
    Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
}

fn opts(trace: TraceMode) -> PipelineOptions {
    PipelineOptions { trace }
}

fn kalman_rls_equivalence() -> Outcome {
    let cfg = DraecConfig {
        transition: 1.0,
        fixed_process_noise: Some(0.0),
        fixed_source_psd: Some(1.0),
        lambda: 1.0,
        init_covariance: 1.0,
        ..DraecConfig::default()
    };
    assert_eq!(cfg.filter_len(), 15);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut k = FilterState::new(15, &cfg).unwrap();
    let mut r = FilterState::new(15, &cfg).unwrap();
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let z = Regressor::from_vec((0..15).map(|_| rand_c(&mut rng)).collect());
        let y = rand_c(&mut rng);
        let a = kalman_step(&mut k, &z, y, &cfg).unwrap();
        let b = rls_step(&mut r, &z, y, &cfg).unwrap();
        worst = worst.max((a.s_hat - b.s_hat).norm());
    }
    Outcome {
        pass: worst <= 1e-8,
        detail: format!("max |S_kalman - S_rls| = {worst:.2e} (<= 1e-8)"),
    }
}

fn stft_round_trip() -> Outcome {
    let cfg = StftConfig::default();
    let x = white_noise(160_000, 2);
    let spec = stft::analyze(std::slice::from_ref(&x), &cfg).unwrap();
    let y = stft::synthesize(&spec, &cfg).unwrap().remove(0);
    let r = cfg.frame_len..y.len() - cfg.frame_len;
    let err: f64 = r.clone().map(|n| (y[n] - x[n]).powi(2)).sum();
    let sig: f64 = r.map(|n| x[n] * x[n]).sum();
    let db = 10.0 * (err / sig).log10();
    Outcome {
        pass: db <= -50.0,
        detail: format!("10 s white noise, interior error {db:.1} dB (<= -50 dB)"),
    }
}

fn covariance_health() -> Outcome {
    let cfg = DraecConfig::default();
    let l = cfg.filter_len();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut state = FilterState::new(l, &cfg).unwrap();
    let mut hermitian = true;
    let mut min_eig = f64::INFINITY;
    for _ in 0..10_000 {
        let z = Regressor::from_vec((0..l).map(|_| rand_c(&mut rng)).collect());
        let y = rand_c(&mut rng);
        kalman_step(&mut state, &z, y, &cfg).unwrap();
        let m = DMatrix::from_fn(l, l, |i, j| state.covariance(i, j));
        hermitian &= m == m.adjoint();
        min_eig = min_eig.min(m.symmetric_eigenvalues().min());
    }
    Outcome {
        pass: hermitian && min_eig >= -1e-10,
        detail: format!(
            "10^4 steps at L={l}: exactly Hermitian = {hermitian}, min eigenvalue {min_eig:.3e} (>= -1e-10)"
        ),
    }
}

fn residual_db(target: &Spectrogram, est: &Spectrogram, from: usize) -> f64 {
    let (mics, frames, bins) = target.shape();
    let (mut err, mut sig) = (0.0, 0.0);
    for m in 0..mics {
        for t in from..frames {
            for f in 0..bins {
                let s = target.get(m, t, f);
                err += (est.get(m, t, f) - s).norm_sqr();
                sig += s.norm_sqr();
            }
        }
    }
    10.0 * (err / sig).log10()
}

fn ar_oracle() -> Outcome {
    // 30 s at 16 kHz with a 256-sample hop.
    let scene = ArScene::generate(&ArSceneConfig {
        frames: 1875,
        seed: 4,
        ..ArSceneConfig::default()
    });
    let (mics, frames, bins) = scene.mics.shape();
    let base = DraecConfig::default();

    let layout = base.layout();
    let mut weights = Vec::with_capacity(bins * frames * mics * layout.len());
    for f in 0..bins {
        let true_w: Vec<Vec<Complex64>> = (0..mics).map(|m| scene.true_weights(f, m)).collect();
        for _ in 0..frames {
            for w in &true_w {
                weights.extend_from_slice(w);
            }
        }
    }
    let frozen = FilterTrace {
        bulk_delay: 0,
        stages: vec![StageTrace {
            layout,
            bins,
            frames,
            weights,
        }],
    };
    let s_frozen = frozen
        .apply(&scene.mics, Some(&scene.playback))
        .unwrap()
        .remove(0);
    let frozen_err = s_frozen
        .data()
        .iter()
        .zip(scene.target.data())
        .map(|(a, b)| (a - b).norm())
        .fold(0.0, f64::max);

    // The scene is stationary with unit-variance white sources, so the
    // matched state-space model has no process noise and unit source PSD.
    let matched = DraecConfig {
        fixed_process_noise: Some(0.0),
        fixed_source_psd: Some(1.0),
        ..base.clone()
    };
    let tail = frames * 4 / 5;
    let run = |cfg: &DraecConfig| {
        let out = run_joint(
            &scene.mics,
            &scene.playback,
            cfg,
            Estimator::Kalman,
            &opts(TraceMode::Off),
        )
        .unwrap();
        residual_db(&scene.target, &out.enhanced, tail)
    };
    let adaptive = run(&matched);
    let with_defaults = run(&base);
    Outcome {
        pass: frozen_err <= 1e-9 && adaptive <= -20.0,
        detail: format!(
            "frozen true filter max |S_hat - S| = {frozen_err:.1e}; adaptive joint Kalman (matched noise model) residual {adaptive:.2} dB over last 20% (<= -20 dB); with default estimators {with_defaults:.2} dB"
        ),
    }
}

fn echo_tracking() -> Outcome {
    let cfg = SceneConfig {
        duration_s: 8.0,
        rt60: 0.3,
        ser_db: None,
        ..SceneConfig::default()
    };
    let a = generate_scene(&cfg, 16_000, 21).unwrap();
    let b = generate_scene(&cfg, 16_000, 22).unwrap();
    let scene = apply_path_change(&a, &b).unwrap();
    let run = RunConfig::default();
    let variant: AlgorithmVariant = "kalman-joint".parse().unwrap();
    let out = process_signals(
        &scene.mics,
        &scene.playback,
        &run,
        variant,
        &opts(TraceMode::Off),
    )
    .unwrap();
    let curve = erle(&scene.mics[0], &out.enhanced[0], 16_000, 1.0, 0.25, 80.0).unwrap();
    let cp = scene.meta.change_point.unwrap() as f64 / 16_000.0;
    let mean = |pts: Vec<f64>| pts.iter().sum::<f64>() / pts.len().max(1) as f64;
    // Windows are 1 s long; a window centered at c covers [c - 0.5, c + 0.5].
    let steady = mean(
        curve
            .iter()
            .filter(|p| p.time_s - 0.5 >= 5.0 && p.time_s + 0.5 <= cp)
            .map(|p| p.erle_db)
            .collect(),
    );
    let after_change = curve
        .iter()
        .filter(|p| p.time_s + 0.5 > cp && p.time_s - 0.5 <= cp + 0.5)
        .map(|p| p.erle_db)
        .fold(f64::INFINITY, f64::min);
    let drop = steady - after_change;
    let recovered = curve
        .iter()
        .filter(|p| p.time_s - 0.5 >= cp && p.time_s + 0.5 <= cp + 3.0)
        .map(|p| p.erle_db)
        .fold(f64::NEG_INFINITY, f64::max);
    Outcome {
        pass: steady >= 20.0 && drop >= 10.0 && recovered >= 15.0,
        detail: format!(
            "steady ERLE {steady:.1} dB (>= 20), drop after change {drop:.1} dB (>= 10), best ERLE within 3 s {recovered:.1} dB (>= 15)"
        ),
    }
}

fn sier_ordering() -> Outcome {
    let names = [
        "kalman-joint",
        "kalman-aec-dr",
        "kalman-dr-aec",
        "rls-joint",
    ];
    let trials = 5;
    let mut means = [0.0; 4];
    for trial in 0..trials {
        let cfg = SceneConfig {
            rt60: 0.3,
            ser_db: Some(-10.0),
            sir_db: Some(0.0),
            ..SceneConfig::default()
        };
        let scene = generate_scene(&cfg, 16_000, 100 + trial).unwrap();
        let run = RunConfig::default();
        for (i, n) in names.iter().enumerate() {
            let (_, report) = run_and_evaluate(&scene, &run, n.parse().unwrap()).unwrap();
            means[i] += report.sier_improvement_db.unwrap() / trials as f64;
        }
    }
    let [joint, aec_dr, dr_aec, rls] = means;
    let chain = joint >= aec_dr && aec_dr >= dr_aec;
    let vs_rls = joint >= rls;
    Outcome {
        pass: chain && vs_rls,
        detail: format!(
            "mean SIER improvement over {trials} trials: kalman-joint {joint:.2}, kalman-aec-dr {aec_dr:.2}, kalman-dr-aec {dr_aec:.2}, rls-joint {rls:.2} dB; cascade ordering {}, joint >= rls {}",
            if chain { "holds" } else { "violated" },
            if vs_rls { "holds" } else { "violated" }
        ),
    }
}

fn topology_collapse() -> Outcome {
    let cfg = SceneConfig {
        duration_s: 2.0,
        sir_db: Some(0.0),
        ..SceneConfig::default()
    };
    let scene = generate_scene(&cfg, 16_000, 7).unwrap();
    let stft_cfg = StftConfig::default();
    let mics = stft::analyze(&scene.mics, &stft_cfg).unwrap();
    let play = stft::analyze(std::slice::from_ref(&scene.playback), &stft_cfg).unwrap();
    let o = opts(TraceMode::Off);
    let mut all = true;
    for est in [Estimator::Kalman, Estimator::Rls] {
        let no_hist = DraecConfig {
            history_taps: 0,
            ..DraecConfig::default()
        };
        let aec = run_aec_only(&mics, &play, &no_hist, est, &o)
            .unwrap()
            .enhanced;
        all &= run_joint(&mics, &play, &no_hist, est, &o).unwrap().enhanced == aec;
        all &= run_aec_then_dr(&mics, &play, &no_hist, est, &o)
            .unwrap()
            .enhanced
            == aec;

        let no_play = DraecConfig {
            playback_taps: 0,
            ..DraecConfig::default()
        };
        let dr = run_dr_only(&mics, &play, &no_play, est, &o)
            .unwrap()
            .enhanced;
        all &= run_joint(&mics, &play, &no_play, est, &o).unwrap().enhanced == dr;
        all &= run_dr_then_aec(&mics, &play, &no_play, est, &o)
            .unwrap()
            .enhanced
            == dr;
    }
    Outcome {
        pass: all,
        detail: format!("joint/cascade with L_Y=0 vs AEC-only and L_X=0 vs DR-only, both estimators: bit-identical = {all}"),
    }
}

fn scene_fidelity() -> Outcome {
    let cfg = SceneConfig {
        duration_s: 4.0,
        rt60: 0.3,
        ser_db: Some(-10.0),
        sir_db: Some(0.0),
        snr_db: 30.0,
        ..SceneConfig::default()
    };
    let scene = generate_scene(&cfg, 16_000, 8).unwrap();
    let s = &scene.stems;
    let pt = power(&s.full_target_image[0]);
    let db = |p: f64| 10.0 * (pt / p).log10();
    let ratio_err = [
        (db(power(&s.echo_image[0])) - -10.0).abs(),
        db(power(&s.interference_image[0])).abs(),
        (db(power(&s.noise[0])) - 30.0).abs(),
    ]
    .into_iter()
    .fold(0.0, f64::max);

    let mut t60_err = 0.0f64;
    for rt60 in [0.3, 0.6] {
        let room = RoomSpec {
            dimensions: [6.0, 5.0, 3.0],
            rt60,
            source_pos: [2.0, 2.5, 1.5],
            loudspeaker_pos: [4.0, 2.0, 1.2],
            mic_pos: vec![[4.0, 2.1, 1.2], [4.06, 2.1, 1.2]],
            interferer_pos: None,
            sample_rate: 16_000,
            max_rir_len: (1.2 * rt60 * 16_000.0) as usize,
        };
        let rir = image_method_rir(&room, &room.source_pos, &room.mic_pos[0]).unwrap();
        let t60 = schroeder_t60(&rir, 16_000).unwrap();
        t60_err = t60_err.max((t60 / rt60 - 1.0).abs());
    }

    let changed = SceneConfig {
        path_change: true,
        duration_s: 2.0,
        ..cfg
    };
    let mut additivity = 0.0f64;
    for sc in [&scene, &generate_scene(&changed, 16_000, 9).unwrap()] {
        let peak = sc.mics.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
        for m in 0..sc.mics.len() {
            for n in 0..sc.len() {
                let st = &sc.stems;
                let sum = st.full_target_image[m][n]
                    + st.echo_image[m][n]
                    + st.interference_image[m][n]
                    + st.noise[m][n];
                additivity = additivity.max((sc.mics[m][n] - sum).abs() / peak);
            }
        }
    }
    Outcome {
        pass: ratio_err <= 0.01 && t60_err <= 0.2 && additivity <= 1e-6,
        detail: format!(
            "SER/SIR/SNR max error {ratio_err:.2e} dB (<= 0.01), T60 max relative error {:.1}% (<= 20%), stem additivity {additivity:.1e} (<= 1e-6)",
            100.0 * t60_err
        ),
    }
}

fn shadow_linearity() -> Outcome {
    let cfg = SceneConfig {
        duration_s: 3.0,
        sir_db: Some(0.0),
        ..SceneConfig::default()
    };
    let scene = generate_scene(&cfg, 16_000, 10).unwrap();
    let run = RunConfig::default();
    let mut worst = 0.0f64;
    for variant in AlgorithmVariant::all() {
        let out = process_signals(
            &scene.mics,
            &scene.playback,
            &run,
            variant,
            &opts(TraceMode::Full),
        )
        .unwrap();
        let shadow = shadow_outputs(&scene, &out.output, &run.stft).unwrap();
        let sum = shadow.sum();
        let range = run.stft.frame_len..scene.len() - run.stft.frame_len;
        for m in 0..sum.len() {
            let err: f64 = range
                .clone()
                .map(|n| (sum[m][n] - out.enhanced[m][n]).powi(2))
                .sum();
            let sig: f64 = range.clone().map(|n| out.enhanced[m][n].powi(2)).sum();
            worst = worst.max((err / sig).sqrt());
        }
    }
    Outcome {
        pass: worst <= 1e-6,
        detail: format!(
            "six variants, max relative |sum of stem outputs - output| = {worst:.1e} (<= 1e-6)"
        ),
    }
}

fn main() -> ExitCode {
    type Check = fn() -> Outcome;
    let criteria: [(&str, Check, Duration); 9] = [
        (
            "Kalman/RLS equivalence",
            kalman_rls_equivalence,
            Duration::from_secs(1),
        ),
        ("STFT round trip", stft_round_trip, Duration::from_secs(1)),
        (
            "covariance health",
            covariance_health,
            Duration::from_secs(30),
        ),
        ("AR-oracle exactness", ar_oracle, Duration::from_secs(120)),
        (
            "echo-only tracking",
            echo_tracking,
            Duration::from_secs(120),
        ),
        ("SIER ordering", sier_ordering, Duration::from_secs(600)),
        (
            "degenerate collapse",
            topology_collapse,
            Duration::from_secs(30),
        ),
        ("scene fidelity", scene_fidelity, Duration::from_secs(60)),
        (
            "shadow-filter linearity",
            shadow_linearity,
            Duration::from_secs(60),
        ),
    ];
    let mut failed = 0;
    for (i, (name, check, budget)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = check();
        let elapsed = start.elapsed();
        let in_time = elapsed <= *budget;
        let pass = outcome.pass && in_time;
        if !pass {
            failed += 1;
        }
        println!(
            "criterion {}: {} | {name}: {} | runtime {:.2} s (budget {} s)",
            i + 1,
            if pass { "PASS" } else { "FAIL" },
            outcome.detail,
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
    }
    println!(
        "acceptance: {} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
