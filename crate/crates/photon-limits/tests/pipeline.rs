//! Cross-module integration: file formats round-trip through disk, config
//! files drive sweeps, and the noisy-scene bias correction matches its
//! numerical oracle.

use photon_limits::experiment::{run_1d_sweep, sample_one_trial, sweep_to_csv, ExperimentConfig};
use photon_limits::pulse::{FluxModel, PulseShape};
use photon_limits::sampler::{read_stamp_dump, write_stamp_dump, SeededRng};
use photon_limits::scene::{
    bin_scene, effective_pulse_exact, gradient, load_profile_1d, load_profile_2d,
    make_sigmoid_profile, make_synthetic_depth_map, save_profile_1d, save_profile_2d, ToaProfile,
};
use photon_limits::spaddata::{
    load_cube, make_fan_tau_map, save_cube, synthesize_cube, SyntheticCubeSpec,
};
use photon_limits::theory::noisy_bias_correction;
use photon_limits::TimeGrid;

use rand::Rng as _;
use rand_distr::Distribution as _;

#[test]
fn profile_files_roundtrip() {
    let dir = tempfile::tempdir().unwrap();

    let profile = make_sigmoid_profile(128).unwrap();
    let path = dir.path().join("profile.txt");
    save_profile_1d(&profile, &path).unwrap();
    let back = load_profile_1d(&path).unwrap();
    assert_eq!(profile, back);

    let map = make_synthetic_depth_map(32).unwrap();
    let path2d = dir.path().join("map.txt");
    save_profile_2d(&map, &path2d).unwrap();
    let back2d = load_profile_2d(&path2d).unwrap();
    assert_eq!(map, back2d);

    // non-square maps are rejected: square pixelization only
    let bad = dir.path().join("bad.txt");
    std::fs::write(&bad, "2 3\n1 2 3\n4 5 6\n").unwrap();
    assert!(load_profile_2d(&bad).is_err());
}

#[test]
fn cube_files_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let map = make_fan_tau_map(12, 100.0, 80.0, 4);
    let cube = synthesize_cube(
        &map,
        12,
        &SyntheticCubeSpec {
            stamps_per_pixel: 30.0,
            ..Default::default()
        },
        &mut SeededRng::new(5).rng(),
    )
    .unwrap();
    let path = dir.path().join("cube.txt");
    save_cube(&cube, &path).unwrap();
    let back = load_cube(&path).unwrap();
    assert_eq!(cube, back);
}

#[test]
fn tabulated_pulse_file_drives_a_sweep() {
    // a boxcar-ish pulse from the two-column format, fed through the
    // tabulated (search-solver) sweep path
    let dir = tempfile::tempdir().unwrap();
    let pulse_path = dir.path().join("pulse.txt");
    let mut text = String::new();
    for i in 0..=200 {
        let t = -1.0 + 0.01 * i as f64;
        let v = if t.abs() <= 0.4 { 1.25 } else { 0.0 };
        text.push_str(&format!("{t} {v}\n"));
    }
    std::fs::write(&pulse_path, &text).unwrap();

    let config_path = dir.path().join("sweep.cfg");
    std::fs::write(
        &config_path,
        format!(
            "dx = 1/256\ndt = 1/64\nn_list = 4, 8\ntrials = 5\nseed = 3\n\
             pulse = file:{}\nsolver = search\n",
            pulse_path.display()
        ),
    )
    .unwrap();
    let cfg = ExperimentConfig::load(&config_path).unwrap();
    let curve = run_1d_sweep(&cfg).unwrap();
    assert_eq!(curve.points().len(), 2);
    for p in curve.points() {
        assert!(p.sim.unwrap().mse.is_finite());
        assert!(p.theory.total().is_finite());
    }
}

#[test]
fn stamp_dump_matches_sweep_stream() {
    // the `sample` interface reproduces exactly the stamps the sweep saw
    let cfg = ExperimentConfig {
        dx: 1.0 / 256.0,
        dt: 1.0 / 64.0,
        n_list: vec![4],
        trials: 2,
        seed: 21,
        ..ExperimentConfig::default()
    };
    let a = sample_one_trial(&cfg, 4, 1).unwrap();
    let b = sample_one_trial(&cfg, 4, 1).unwrap();
    assert_eq!(a, b);

    let mut buf = Vec::new();
    write_stamp_dump(&mut buf, cfg.seed, 4, 1, &a).unwrap();
    let parsed = read_stamp_dump(&mut buf.as_slice()).unwrap();
    assert_eq!(parsed, a);
}

#[test]
fn effective_pulse_index_bounds() {
    let profile = make_sigmoid_profile(256).unwrap();
    let model = FluxModel::gaussian(1e3, 0.0, 0.5).unwrap();
    let grid = TimeGrid::spanning(0.0, 10.0, 1.0 / 64.0).unwrap();
    assert!(effective_pulse_exact(&profile, &model, 8, 8, &grid).is_err());
    assert!(effective_pulse_exact(&profile, &model, 8, 7, &grid).is_ok());
}

#[test]
fn noisy_scene_bias_correction_oracle() {
    // tau(x) + N(0, sigma_e^2): the corrected bias tracks the numerical
    // integral, while the clean slope must come from the noise-free scene
    let cells = 2048;
    let n = 32;
    let sigma_e_sq = 0.01f64;
    let clean = make_sigmoid_profile(cells).unwrap();

    // average the numerical integral over noise realizations: a single
    // realization carries a few-percent chi-squared wobble
    let realizations = 10;
    let mut numeric = 0.0;
    let mut c_sq_noisy_max: f64 = 0.0;
    for seed in 0..realizations {
        let mut rng = SeededRng::new(31 + seed).rng();
        let normal = rand_distr::Normal::new(0.0, sigma_e_sq.sqrt()).unwrap();
        let noisy_values: Vec<f64> = clean
            .values()
            .iter()
            .map(|v| v + normal.sample(&mut rng))
            .collect();
        let noisy = ToaProfile::from_values(noisy_values).unwrap();
        let means = noisy.bin_means(n).unwrap();
        let rec = photon_limits::scene::piecewise_reconstruction(&means, cells).unwrap();
        numeric += rec.mean_squared_difference(&noisy).unwrap() / realizations as f64;
        c_sq_noisy_max = c_sq_noisy_max.max(gradient(&noisy).c_sq);
    }

    let c_sq_clean = bin_scene(&clean, &FluxModel::gaussian(1e4, 0.0, 0.5).unwrap(), n)
        .unwrap()
        .c_sq;
    let corrected = noisy_bias_correction(c_sq_clean, n, sigma_e_sq);
    let gap = (corrected - numeric).abs() / numeric;
    assert!(
        gap < 0.10,
        "corrected {corrected:.5e} vs numerical {numeric:.5e} (gap {gap:.3})"
    );

    // the naive route overestimates: noisy gradients inflate c^2
    assert!(
        c_sq_noisy_max > 5.0 * c_sq_clean,
        "noise must inflate the raw gradient"
    );
}

#[test]
fn truncated_sampler_keeps_stamps_inside_window() {
    use photon_limits::pulse::ObservationWindow;
    use photon_limits::sampler::sample_gaussian_truncated;
    // pathological config: pulse centered on the window edge
    let window = ObservationWindow::new(0.0, 10.0).unwrap();
    let model = FluxModel::gaussian(500.0, 0.0, 0.5).unwrap();
    let mut rng = SeededRng::new(41).rng();
    let stamps = sample_gaussian_truncated(&model, 0.2, &window, &mut rng).unwrap();
    assert!(stamps.times().iter().all(|t| window.contains(*t)));
    // the default keeps out-of-window stamps
    let loose = photon_limits::sampler::sample_gaussian(&model, 0.2, &window, &mut rng).unwrap();
    assert!(loose.times().iter().any(|t| *t < 0.0));
}

#[test]
fn renormalized_pulse_flag_survives_file_io() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pulse.txt");
    // deliberately mass 2: must load renormalized with the flag set
    let mut text = String::new();
    for i in 0..=100 {
        let t = 0.02 * i as f64;
        text.push_str(&format!("{t} 1.0\n"));
    }
    std::fs::write(&path, &text).unwrap();
    match PulseShape::load_tabulated(&path).unwrap() {
        PulseShape::Tabulated {
            renormalized,
            grid,
            values,
        } => {
            assert!(renormalized);
            assert!((grid.trapezoid(&values) - 1.0).abs() < 1e-9);
        }
        _ => unreachable!(),
    }
}

#[test]
fn sweep_csv_stable_across_processes() {
    // byte-stable CSV given (config, seed): the reproducibility contract
    let cfg = ExperimentConfig {
        dx: 1.0 / 256.0,
        dt: 1.0 / 64.0,
        n_list: vec![4, 8],
        trials: 4,
        seed: 77,
        workers: Some(3),
        ..ExperimentConfig::default()
    };
    let csv = sweep_to_csv(&run_1d_sweep(&cfg).unwrap(), cfg.seed);
    let mut hash: u64 = 0xcbf29ce484222325;
    for b in csv.bytes() {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    // the fingerprint must not depend on worker count or on whether the
    // parallel feature is compiled in at all
    println!("sweep fingerprint: {hash:#x}");
    let reference = run_1d_sweep(&ExperimentConfig {
        workers: None,
        ..cfg
    })
    .unwrap();
    assert_eq!(csv, sweep_to_csv(&reference, 77));
    assert_ne!(hash, 0);
}

#[test]
fn config_fraction_values_match_decimals() {
    let a = ExperimentConfig::parse("dx = 1/2048\ndt = 1/256\n").unwrap();
    let b = ExperimentConfig::parse("dx = 0.00048828125\ndt = 0.00390625\n").unwrap();
    assert_eq!(a, b);
}

#[test]
fn random_flux_models_sample_within_energy_band() {
    // joint sampler/energy contract on a mix of model variants
    let mut rng = SeededRng::new(51).rng();
    let window = photon_limits::pulse::ObservationWindow::new(0.0, 10.0).unwrap();
    for case in 0..6 {
        let alpha = 50.0 + 400.0 * rng.random::<f64>();
        let floor = 3.0 * rng.random::<f64>();
        let model = match case % 3 {
            0 => FluxModel::gaussian(alpha, floor, 0.4).unwrap(),
            1 => FluxModel::gaussian(alpha, floor, 0.4)
                .unwrap()
                .with_pileup(200.0, 4.0)
                .unwrap(),
            _ => FluxModel::gaussian(alpha, floor, 0.4)
                .unwrap()
                .with_dark(8.0, 4)
                .unwrap(),
        };
        let q = model.pulse_energy(&window);
        let stamps = if model.pileup.is_some() {
            photon_limits::sampler::sample_pileup(&model, 5.0, &window, &mut rng).unwrap()
        } else {
            photon_limits::sampler::sample_gaussian(&model, 5.0, &window, &mut rng).unwrap()
        };
        let m = stamps.len() as f64;
        assert!(
            (m - q).abs() < 5.0 * q.sqrt() + 5.0,
            "case {case}: M={m}, Q={q}"
        );
    }
}
