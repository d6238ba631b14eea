//! `photon-limits` — command-line front end for the resolution-noise
//! trade-off engine.
//!
//! Sweep commands read a flat `key = value` config file, run the Monte
//! Carlo harness, and emit CSV (and optionally SVG) artifacts. Outputs are
//! reproducible byte-for-byte for a fixed `(config, seed)`.
//!
//! Exit codes: 0 on success, 1 on configuration/usage errors, 2 on
//! runtime errors. `PHOTON_LIMITS_THREADS` caps the worker count.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use photon_limits::estimator::{estimate, LikelihoodContext, SolverOptions};
use photon_limits::experiment::{
    convert_units, run_1d_sweep, run_2d_sweep, run_ablation, run_noise_floor_sweep, run_pileup,
    sample_one_trial, sweep_to_csv, sweep_to_svg, theory_point, ExperimentConfig, PhysicalUnits,
};
use photon_limits::sampler::{read_stamp_dump, write_stamp_dump, SeededRng};
use photon_limits::scene::{load_profile_2d, make_synthetic_depth_map};
use photon_limits::spaddata::{
    binned_bootstrap_mse, bootstrap_mse_to_csv, load_cube, pseudo_ground_truth, reject_outliers,
    save_cube, RejectOptions,
};
use photon_limits::theory::SweepCurve;
use photon_limits::PixelFlux;

#[derive(Parser)]
#[command(
    name = "photon-limits",
    version,
    about = "Single-photon LiDAR resolution-noise trade-off: simulation and theory"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct SweepArgs {
    /// Config file (flat `key = value`); defaults apply when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output CSV path
    #[arg(long)]
    out: Option<PathBuf>,
    /// Optional SVG line plot of theory vs simulation
    #[arg(long)]
    svg: Option<PathBuf>,
    /// Override the config seed
    #[arg(long)]
    seed: Option<u64>,
    /// Override the trial count
    #[arg(long)]
    trials: Option<usize>,
    /// Override the solver: gradient, search, or zero
    #[arg(long)]
    solver: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// 1D MSE-vs-N sweep with the matching theory overlay
    Sweep1d(SweepArgs),
    /// Same sweep with full and simplified theory overlays
    Ablation(SweepArgs),
    /// 2D depth-map sweep (square N x N binning, mean estimator)
    Sweep2d {
        #[command(flatten)]
        args: SweepArgs,
        /// Depth map file (`H W` header); a synthetic map is used when omitted
        #[arg(long)]
        map: Option<PathBuf>,
        /// Side length of the synthetic map
        #[arg(long, default_value_t = 256)]
        map_cells: usize,
    },
    /// Pile-up sweep (needs pileup_beta and pileup_gamma in the config)
    Pileup(SweepArgs),
    /// Family of sweeps over the noise-floor levels in lambda_b_list
    FloorSweep(SweepArgs),
    /// Draw one trial of photon stamps and dump them as `pixel t` lines
    Sample {
        #[command(flatten)]
        args: SweepArgs,
        /// Pixel count
        #[arg(long)]
        n: usize,
        /// Trial index within the sweep stream
        #[arg(long, default_value_t = 0)]
        trial: usize,
    },
    /// Per-pixel ML estimation on a stamp dump
    Estimate {
        #[command(flatten)]
        args: SweepArgs,
        /// Stamp dump produced by `sample`
        #[arg(long)]
        stamps: PathBuf,
    },
    /// Clean a timestamp cube: outlier rejection and retention report
    Preprocess {
        /// Input cube (`# H W frames tdc_resolution` header)
        #[arg(long)]
        cube: PathBuf,
        /// Cleaned cube output path
        #[arg(long)]
        out: PathBuf,
        /// Pulse width guess driving the crop windows
        #[arg(long)]
        sigma_t: f64,
    },
    /// Binned-bootstrap MSE curve on a cleaned cube
    Bootstrap {
        /// Cleaned cube
        #[arg(long)]
        cube: PathBuf,
        /// Binning factors, e.g. 1,2,4,8
        #[arg(long, default_value = "1,2,4,8")]
        bins: String,
        /// Stamps drawn per pixel per resample
        #[arg(long, default_value_t = 3)]
        k: usize,
        #[arg(long, default_value_t = 100)]
        resamples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output CSV path
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Convert between physical sensor units and grid units
    Units {
        /// Array width in millimeters
        #[arg(long)]
        array_mm: Option<f64>,
        /// Spatial grid points across the array
        #[arg(long)]
        grid: Option<usize>,
        /// Grid cells per super-pixel
        #[arg(long)]
        group: Option<usize>,
        /// Observation window in nanoseconds
        #[arg(long)]
        window_ns: Option<f64>,
        /// Temporal grid points across the window
        #[arg(long)]
        time_points: Option<usize>,
        /// Pulse width in time points
        #[arg(long)]
        sigma_t_points: Option<f64>,
    },
    /// Closed-form (or numerical) prediction at one pixel count
    Theory {
        #[command(flatten)]
        args: SweepArgs,
        #[arg(long)]
        n: usize,
    },
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // usage problems are configuration errors
            let _ = write!(std::io::stderr(), "{e}");
            std::process::exit(if e.use_stderr() { 1 } else { 0 });
        }
    };
    std::process::exit(match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            match e.downcast_ref::<photon_limits::Error>() {
                Some(photon_limits::Error::Config(_)) | Some(photon_limits::Error::Parse(_)) => 1,
                _ => 2,
            }
        }
    });
}

fn load_config(args: &SweepArgs) -> anyhow::Result<ExperimentConfig> {
    load_config_inner(args, false)
}

fn load_config_inner(
    args: &SweepArgs,
    skip_scene_warnings: bool,
) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(trials) = args.trials {
        cfg.trials = trials;
    }
    if let Some(solver) = &args.solver {
        cfg.solver = solver.parse::<photon_limits::Solver>()?;
    }
    if let Ok(threads) = std::env::var("PHOTON_LIMITS_THREADS") {
        let cap: usize = threads.parse().map_err(|_| {
            photon_limits::Error::Config(format!("bad PHOTON_LIMITS_THREADS {threads:?}"))
        })?;
        if cap > 0 {
            cfg.workers = Some(cfg.workers.map_or(cap, |w| w.min(cap)));
        }
    }
    for warning in cfg.validate()? {
        // the 1D scene is irrelevant to map-driven 2D runs
        if skip_scene_warnings && warning.contains("scene delays") {
            continue;
        }
        eprintln!("warning: {warning}");
    }
    Ok(cfg)
}

fn warn_if_map_near_window(map: &photon_limits::scene::ToaProfile2d, cfg: &ExperimentConfig) {
    let (lo, hi) = map.min_max();
    if lo - 3.0 * cfg.sigma_t < cfg.t_min || hi + 3.0 * cfg.sigma_t > cfg.t_max {
        eprintln!(
            "warning: map delays [{lo}, {hi}] sit near the window edge; \
             the well-inside-window assumption is strained"
        );
    }
}

fn write_artifact(path: &Path, contents: &str) -> anyhow::Result<()> {
    std::fs::write(path, contents)?;
    Ok(())
}

fn emit_curve(
    curve: &SweepCurve,
    cfg: &ExperimentConfig,
    args: &SweepArgs,
    title: &str,
) -> anyhow::Result<()> {
    let csv = sweep_to_csv(curve, cfg.seed);
    match &args.out {
        Some(path) => write_artifact(path, &csv)?,
        None => print!("{csv}"),
    }
    if let Some(path) = &args.svg {
        write_artifact(path, &sweep_to_svg(curve, title))?;
    }
    Ok(())
}

fn summarize(curve: &SweepCurve, label: &str) {
    if let Some(n) = curve.simulated_minimizer() {
        let mse = curve
            .points()
            .iter()
            .find(|p| p.theory.n == n)
            .and_then(|p| p.sim.map(|s| s.mse))
            .unwrap_or(f64::NAN);
        println!("{label}: simulated minimum at N={n} (mse={mse:.4e})");
    } else if let Some(n) = curve.theory_minimizer() {
        println!("{label}: theoretical minimum at N={n}");
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    let ext = path.extension().and_then(|s| s.to_str()).unwrap_or("csv");
    path.with_file_name(format!("{stem}{suffix}.{ext}"))
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Sweep1d(args) => {
            let cfg = load_config(&args)?;
            let curve = run_1d_sweep(&cfg)?;
            emit_curve(&curve, &cfg, &args, "1D MSE vs N")?;
            summarize(&curve, "sweep1d");
        }
        Command::Ablation(args) => {
            let cfg = load_config(&args)?;
            let curves = run_ablation(&cfg)?;
            let out = args
                .out
                .clone()
                .unwrap_or_else(|| PathBuf::from("ablation.csv"));
            write_artifact(&out, &sweep_to_csv(&curves.full, cfg.seed))?;
            let simplified_path = with_suffix(&out, "_simplified");
            write_artifact(
                &simplified_path,
                &sweep_to_csv(&curves.simplified, cfg.seed),
            )?;
            if let Some(svg) = &args.svg {
                write_artifact(svg, &sweep_to_svg(&curves.full, "ablation (full model)"))?;
                write_artifact(
                    &with_suffix(svg, "_simplified"),
                    &sweep_to_svg(&curves.simplified, "ablation (simplified model)"),
                )?;
            }
            summarize(&curves.full, "ablation");
            println!(
                "ablation: wrote {} and {}",
                out.display(),
                simplified_path.display()
            );
        }
        Command::Sweep2d {
            args,
            map,
            map_cells,
        } => {
            let cfg = load_config_inner(&args, true)?;
            let depth = match map {
                Some(path) => load_profile_2d(path)?,
                None => make_synthetic_depth_map(map_cells)?,
            };
            warn_if_map_near_window(&depth, &cfg);
            let curve = run_2d_sweep(&cfg, &depth)?;
            emit_curve(&curve, &cfg, &args, "2D MSE vs N")?;
            summarize(&curve, "sweep2d");
        }
        Command::Pileup(args) => {
            let cfg = load_config(&args)?;
            let curve = run_pileup(&cfg)?;
            emit_curve(&curve, &cfg, &args, "pile-up MSE vs N")?;
            summarize(&curve, "pileup");
        }
        Command::FloorSweep(args) => {
            let cfg = load_config(&args)?;
            let curves = run_noise_floor_sweep(&cfg)?;
            let out = args
                .out
                .clone()
                .unwrap_or_else(|| PathBuf::from("floor_sweep.csv"));
            let mut written = Vec::new();
            for (lambda_b, curve) in &curves {
                let path = with_suffix(&out, &format!("_lb{lambda_b}"));
                write_artifact(&path, &sweep_to_csv(curve, cfg.seed))?;
                if let Some(svg) = &args.svg {
                    write_artifact(
                        &with_suffix(svg, &format!("_lb{lambda_b}")),
                        &sweep_to_svg(curve, &format!("noise floor {lambda_b}")),
                    )?;
                }
                written.push(path.display().to_string());
            }
            println!("floor-sweep: wrote {}", written.join(", "));
        }
        Command::Sample { args, n, trial } => {
            let cfg = load_config(&args)?;
            let stamps = sample_one_trial(&cfg, n, trial)?;
            let mut buf = Vec::new();
            write_stamp_dump(&mut buf, cfg.seed, n, trial, &stamps)?;
            match &args.out {
                Some(path) => std::fs::write(path, &buf)?,
                None => std::io::stdout().write_all(&buf)?,
            }
            println!(
                "sample: {} stamps across {n} pixels (trial {trial})",
                stamps.len()
            );
        }
        Command::Estimate { args, stamps } => {
            let cfg = load_config(&args)?;
            let dump =
                read_stamp_dump(&mut std::io::BufReader::new(std::fs::File::open(&stamps)?))?;
            let n_pixels = dump.iter().map(|(p, _)| p + 1).max().unwrap_or(0);
            let mut per_pixel: Vec<Vec<f64>> = vec![Vec::new(); n_pixels];
            for (pixel, t) in dump {
                per_pixel[pixel].push(t);
            }
            let flux = PixelFlux::gaussian(cfg.alpha0, cfg.sigma_t, cfg.lambda_b)?;
            let window = cfg.window()?;
            let opts = SolverOptions::for_grid_dt(cfg.dt);
            let mut lines = String::new();
            let mut estimated = 0;
            for (pixel, times) in per_pixel.iter().enumerate() {
                if times.is_empty() {
                    continue;
                }
                let ctx = LikelihoodContext::new(&flux, times, window)?;
                let est = estimate(&ctx, cfg.solver, &opts)?;
                lines.push_str(&format!("{pixel} {}\n", est.tau_hat));
                estimated += 1;
            }
            match &args.out {
                Some(path) => write_artifact(path, &lines)?,
                None => print!("{lines}"),
            }
            println!(
                "estimate: solved {estimated} pixels with the {} solver",
                cfg.solver
            );
        }
        Command::Preprocess { cube, out, sigma_t } => {
            let raw = load_cube(&cube)?;
            let before = raw.total_stamps();
            let clean = reject_outliers(&raw, sigma_t, &RejectOptions::default())?;
            let after = clean.total_stamps();
            save_cube(&clean, &out)?;
            println!(
                "preprocess: retained {after}/{before} stamps ({:.1}%), wrote {}",
                100.0 * after as f64 / before.max(1) as f64,
                out.display()
            );
        }
        Command::Bootstrap {
            cube,
            bins,
            k,
            resamples,
            seed,
            out,
        } => {
            let clean = load_cube(&cube)?;
            let bins: Vec<usize> = bins
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<usize>()
                        .map_err(|_| photon_limits::Error::Config(format!("bad bin {s:?}")))
                })
                .collect::<photon_limits::Result<_>>()?;
            let gt = pseudo_ground_truth(&clean);
            let mut rng = SeededRng::new(seed).rng();
            let rows = binned_bootstrap_mse(&clean, &gt, &bins, k, resamples, &mut rng)?;
            let csv = bootstrap_mse_to_csv(&rows);
            match &out {
                Some(path) => write_artifact(path, &csv)?,
                None => print!("{csv}"),
            }
            if let Some(best) = rows.iter().min_by(|a, b| a.mse_sim.total_cmp(&b.mse_sim)) {
                println!(
                    "bootstrap: best N={} (b={}, mse={:.4e}, coverage-based theory {:.4e})",
                    best.n_effective, best.bin, best.mse_sim, best.mse_theory
                );
            }
        }
        Command::Units {
            array_mm,
            grid,
            group,
            window_ns,
            time_points,
            sigma_t_points,
        } => {
            let got = convert_units(&PhysicalUnits {
                array_width_mm: array_mm,
                grid_points: grid,
                group_size: group,
                window_ns,
                time_points,
                sigma_t_points,
            });
            let mut printed = false;
            if let Some(v) = got.cell_um {
                println!("grid cell = {v:.4} um");
                printed = true;
            }
            if let (Some(cells), Some(um), Some(unit)) =
                (got.sigma_x_cells, got.sigma_x_um, got.sigma_x_unit)
            {
                println!(
                    "super-pixel = {:.2} um",
                    got.super_pixel_um.unwrap_or(f64::NAN)
                );
                println!("sigma_x = {cells:.4} cells = {um:.2} um = {unit:.6} unit space");
                printed = true;
            }
            if let Some(v) = got.dt_ns {
                println!("time point = {v:.4} ns");
                printed = true;
            }
            if let (Some(ns), Some(w_ns), Some(w_pts)) =
                (got.sigma_t_ns, got.pulse_width_ns, got.pulse_width_points)
            {
                println!("sigma_t = {ns:.4} ns; pulse width 6 sigma_t = {w_pts:.0} points = {w_ns:.2} ns");
                printed = true;
            }
            if !printed {
                return Err(photon_limits::Error::Config(
                    "units needs --array-mm with --grid (and --group), \
                     or --window-ns with --time-points (and --sigma-t-points)"
                        .into(),
                )
                .into());
            }
        }
        Command::Theory { args, n } => {
            let cfg = load_config(&args)?;
            let p = theory_point(&cfg, n)?;
            println!(
                "N={n}: bias={:.6e} variance={:.6e} total={:.6e}",
                p.bias,
                p.variance,
                p.total()
            );
        }
    }
    Ok(())
}
