//! `pelt`: simulate photon-count LIDAR data, unmix signal from background,
//! and reconstruct reflectivity and depth images.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::RunConfig;
use pelt_core::estimate::{depth_pml_traced, reflectivity_pml_traced, TRACE_CSV_HEADER};
use pelt_core::experiments::{
    mc_cluster_validation, mc_depth_threshold, mse_db, rmse_m, run_sweep, select_best,
    SweepSpec, BEST_CSV_HEADER, CLUSTER_CSV_HEADER, DEPTH_THRESHOLD_CSV_HEADER,
    SWEEP_CSV_HEADER,
};
use pelt_core::model::NclTable;
use pelt_core::sim::{load_scene, piecewise_scene, simulate, SimulationSpec};
use pelt_core::unmix::{unmix_image, IterationDiag};
use pelt_core::{formats, Error, Result};

#[derive(Parser)]
#[command(name = "pelt", about = "photon-efficient LIDAR toolkit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Key-value config file; flags and overrides take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master RNG seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads (never changes numerical results).
    #[arg(long)]
    threads: Option<usize>,
    /// Extra `dotted.key=value` overrides.
    #[arg(value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a detection set from a scene.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Output detection file (PECD).
        #[arg(long)]
        out: PathBuf,
        /// Optional ground-truth label sidecar (PECL).
        #[arg(long)]
        labels_out: Option<PathBuf>,
        /// Optional ground-truth image dump (FGRD pair <stem>.alpha/.depth).
        #[arg(long)]
        truth_out: Option<PathBuf>,
    },
    /// Print the minimum-cluster-size rule as CSV.
    NclTable {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Window detections, censor background, and estimate reflectivity.
    Unmix {
        #[command(flatten)]
        common: Common,
        /// Input detection file (PECD).
        #[arg(long)]
        detections: PathBuf,
        /// Output window-result file (PEWR).
        #[arg(long)]
        out: PathBuf,
        /// Output reflectivity image (FGRD; PGM written alongside).
        #[arg(long)]
        alpha_out: PathBuf,
        /// Optional per-iteration diagnostics CSV.
        #[arg(long)]
        diag_out: Option<PathBuf>,
    },
    /// Penalized-ML reflectivity and depth from window results.
    Estimate {
        #[command(flatten)]
        common: Common,
        /// Input window-result file (PEWR).
        #[arg(long)]
        windows: PathBuf,
        #[arg(long)]
        alpha_out: PathBuf,
        #[arg(long)]
        depth_out: PathBuf,
        /// Optional solver trace CSV (reflectivity then depth rows).
        #[arg(long)]
        trace_out: Option<PathBuf>,
    },
    /// Metrics of an estimate against ground truth.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        truth_alpha: PathBuf,
        #[arg(long)]
        truth_depth: PathBuf,
        #[arg(long)]
        est_alpha: PathBuf,
        #[arg(long)]
        est_depth: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Monte Carlo studies: cluster probabilities or depth thresholding.
    Mc {
        #[command(flatten)]
        common: Common,
        /// "cluster" or "depth".
        #[arg(long)]
        kind: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Full pipeline comparison across SBR/ppp/beta grids.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        /// Optional best-beta summary CSV.
        #[arg(long)]
        best_out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => ExitCode::from(2),
                Error::Data(_) | Error::Io(_) => ExitCode::from(3),
                Error::Numerical(_) => ExitCode::from(4),
            }
        }
    }
}

fn init_threads(common: &Common) -> Result<()> {
    if let Some(n) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn load_config(common: &Common) -> Result<RunConfig> {
    if let Some(path) = &common.config {
        if !path.exists() {
            return Err(Error::Config(format!(
                "config file {} does not exist",
                path.display()
            )));
        }
    }
    RunConfig::load(common.config.as_deref(), &common.overrides)
}

fn scene_from_config(cfg: &RunConfig) -> Result<pelt_core::model::Scene> {
    match cfg.get_str("scene.kind", "piecewise").as_str() {
        "piecewise" => {
            let w = cfg.get_usize("scene.width", 128)?;
            let h = cfg.get_usize("scene.height", 128)?;
            if w == 0 || h == 0 {
                return Err(Error::Config("scene dimensions must be positive".into()));
            }
            Ok(piecewise_scene(w, h))
        }
        "files" => {
            let alpha = cfg.require_str("scene.alpha_path")?;
            let depth = cfg.require_str("scene.depth_path")?;
            for p in [&alpha, &depth] {
                if !Path::new(p).exists() {
                    return Err(Error::Config(format!("scene input {p} does not exist")));
                }
            }
            load_scene(
                Path::new(&alpha),
                Path::new(&depth),
                cfg.get_f64("scene.z_offset", 0.0)?,
                cfg.get_f64("scene.z_scale", 1.0)?,
                cfg.get_f64("scene.z_max", 12.0)?,
            )
        }
        other => Err(Error::Config(format!(
            "scene.kind must be 'piecewise' or 'files', got '{other}'"
        ))),
    }
}

/// FGRD plus a 16-bit PGM alongside for viewing.
fn write_image(path: &Path, width: usize, height: usize, scale: f64, values: &[f64]) -> Result<()> {
    formats::write_fgrd(path, width, height, scale, values)?;
    let max = values.iter().cloned().fold(0.0, f64::max).max(1e-12);
    formats::write_pgm(&path.with_extension("pgm"), width, height, values, max)?;
    Ok(())
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Simulate { common, out, labels_out, truth_out } => {
            init_threads(&common)?;
            let cfg = load_config(&common)?;
            let scene = scene_from_config(&cfg)?;
            let spec = SimulationSpec {
                scene,
                config: cfg.acquisition()?,
                target_signal_ppp: cfg.get_f64("sim.ppp", 2.0)?,
                target_sbr: cfg.get_f64("sim.sbr", 1.0)?,
                seed: common.seed,
            };
            cfg.finish()?;
            let sim = simulate(&spec)?;
            formats::write_pecd(&out, &sim.detections)?;
            if let Some(path) = labels_out {
                formats::write_pecl(&path, sim.detections.width, sim.detections.height, &sim.labels)?;
            }
            if let Some(stem) = truth_out {
                let s = &spec.scene;
                write_image(&stem.with_extension("alpha.fgrd"), s.width, s.height, 1.0, &s.alpha)?;
                write_image(&stem.with_extension("depth.fgrd"), s.width, s.height, 1.0, &s.depth)?;
            }
            Ok(())
        }
        Command::NclTable { common, out } => {
            init_threads(&common)?;
            let cfg = load_config(&common)?;
            let acq = cfg.acquisition()?;
            let tau_fa = cfg.get_f64("unmix.tau_fa", 0.01)?;
            let max_rate = cfg.get_f64("table.max_rate", 100.0)?;
            cfg.finish()?;
            let table = NclTable::build(tau_fa, acq.t_wind_over_t_r(), max_rate)?;
            formats::write_ncl_table_csv(&out, &table)
        }
        Command::Unmix { common, detections, out, alpha_out, diag_out } => {
            init_threads(&common)?;
            let cfg = load_config(&common)?;
            let acq = cfg.acquisition()?;
            let unmix_params = cfg.unmix_params(common.seed)?;
            let pml = cfg.pml_params()?;
            cfg.finish()?;
            let det = formats::read_pecd(
                &detections,
                acq.t_p_ps,
                acq.pulse_sigma_ps,
                acq.t_wind_ps,
            )?;
            let table = NclTable::build(
                unmix_params.tau_fa,
                det.config.t_wind_over_t_r(),
                (f64::from(det.config.n_r) * det.config.b_total).max(1.0).min(200.0),
            )?;
            let result = unmix_image(&det, &unmix_params, &pml, &table)?;
            formats::write_windows(&out, det.width, det.height, &det.config, &result.results)?;
            write_image(&alpha_out, det.width, det.height, 1.0, &result.alpha_pml)?;
            if let Some(path) = diag_out {
                let rows: Vec<String> =
                    result.diagnostics.iter().map(IterationDiag::csv_row).collect();
                formats::write_csv(&path, IterationDiag::CSV_HEADER, &rows)?;
            }
            Ok(())
        }
        Command::Estimate { common, windows, alpha_out, depth_out, trace_out } => {
            init_threads(&common)?;
            let cfg = load_config(&common)?;
            let pml = cfg.pml_params()?;
            cfg.finish()?;
            // the window file carries the calibrated acquisition rates
            let (width, height, acq, results) = formats::read_windows(&windows)?;
            let k_max: Vec<f64> = results.iter().map(|r| r.k_max as f64).collect();
            let n_sp: Vec<f64> = results.iter().map(|r| r.n_sp as f64).collect();
            let (alpha, trace_a) =
                reflectivity_pml_traced(&k_max, &n_sp, width, height, &acq, &pml)?;
            let (depth, trace_z) = depth_pml_traced(&results, width, height, &acq, &pml)?;
            write_image(&alpha_out, width, height, 1.0, &alpha)?;
            write_image(&depth_out, width, height, 1.0, &depth)?;
            if let Some(path) = trace_out {
                let rows: Vec<String> = trace_a
                    .iter()
                    .map(|(i, o, s)| format!("alpha,{i},{o},{s}"))
                    .chain(trace_z.iter().map(|(i, o, s)| format!("depth,{i},{o},{s}")))
                    .collect();
                formats::write_csv(&path, &format!("image,{TRACE_CSV_HEADER}"), &rows)?;
            }
            Ok(())
        }
        Command::Evaluate { common, truth_alpha, truth_depth, est_alpha, est_depth, out } => {
            init_threads(&common)?;
            let cfg = load_config(&common)?;
            cfg.finish()?;
            let (w, h, ta) = formats::read_grid_auto(&truth_alpha)?;
            let (w2, h2, tz) = formats::read_grid_auto(&truth_depth)?;
            let (w3, h3, ea) = formats::read_grid_auto(&est_alpha)?;
            let (w4, h4, ez) = formats::read_grid_auto(&est_depth)?;
            if [(w2, h2), (w3, h3), (w4, h4)].iter().any(|d| *d != (w, h)) {
                return Err(Error::Data("image dimensions disagree".into()));
            }
            let rows = vec![
                format!("alpha_mse_db,{}", mse_db(&ta, &ea)),
                format!("depth_rmse_m,{}", rmse_m(&tz, &ez)),
            ];
            formats::write_csv(&out, "metric,value", &rows)
        }
        Command::Mc { common, kind, out } => {
            init_threads(&common)?;
            let cfg = load_config(&common)?;
            let acq = cfg.acquisition()?;
            match kind.as_str() {
                "cluster" => {
                    let noise = cfg.get_f64_list("mc.noise_rates", &[1.0, 2.0, 5.0, 10.0, 20.0])?;
                    let signal = cfg.get_f64_list("mc.signal_rates", &[2.0, 5.0, 10.0])?;
                    let n_cls = cfg.get_usize_list("mc.n_cls", &[2, 3, 4, 5, 6])?;
                    let trials = cfg.get_usize("mc.trials", 100_000)?;
                    cfg.finish()?;
                    let rows = mc_cluster_validation(
                        &noise, &signal, &n_cls, trials, &acq, common.seed,
                    )?;
                    let lines: Vec<String> = rows.iter().map(|r| r.csv_row()).collect();
                    formats::write_csv(&out, CLUSTER_CSV_HEADER, &lines)
                }
                "depth" => {
                    let alphas = cfg.get_f64_list(
                        "mc.alphas",
                        &[0.01, 0.0316, 0.1, 0.316, 1.0, 3.16, 10.0],
                    )?;
                    let sbrs = cfg.get_f64_list("mc.sbrs", &[0.04, 0.2, 1.0])?;
                    let trials = cfg.get_usize("mc.trials", 1000)?;
                    let step = cfg.get_f64("pml.depth_grid_step_ps", 10.0)?;
                    cfg.finish()?;
                    let rows =
                        mc_depth_threshold(&alphas, &sbrs, trials, &acq, step, common.seed)?;
                    let lines: Vec<String> = rows.iter().map(|r| r.csv_row()).collect();
                    formats::write_csv(&out, DEPTH_THRESHOLD_CSV_HEADER, &lines)
                }
                other => Err(Error::Config(format!(
                    "mc kind must be 'cluster' or 'depth', got '{other}'"
                ))),
            }
        }
        Command::Sweep { common, out, best_out } => {
            init_threads(&common)?;
            let cfg = load_config(&common)?;
            let acq = cfg.acquisition()?;
            let scene = scene_from_config(&cfg)?;
            let unmix_params = cfg.unmix_params(common.seed)?;
            let pml = cfg.pml_params()?;
            let spec = SweepSpec {
                sbr_values: cfg.get_f64_list("sweep.sbrs", &[0.04, 0.2, 1.0])?,
                ppp_values: cfg.get_f64_list("sweep.ppps", &[2.0, 3.0])?,
                trials: cfg.get_usize("sweep.trials", 10)?,
                beta_alpha_grid: cfg.get_f64_list(
                    "sweep.beta_alphas",
                    &SweepSpec::default_beta_grid(0.1, 20.0),
                )?,
                beta_z_grid: cfg.get_f64_list(
                    "sweep.beta_zs",
                    &SweepSpec::default_beta_grid(0.1, 20.0),
                )?,
                seed: common.seed,
            };
            cfg.finish()?;
            let rows = run_sweep(&spec, &scene, &acq, &unmix_params, &pml)?;
            let lines: Vec<String> = rows.iter().map(|r| r.csv_row()).collect();
            formats::write_csv(&out, SWEEP_CSV_HEADER, &lines)?;
            if let Some(path) = best_out {
                let best = select_best(&rows);
                let lines: Vec<String> = best.iter().map(|r| r.csv_row()).collect();
                formats::write_csv(&path, BEST_CSV_HEADER, &lines)?;
            }
            Ok(())
        }
    }
}
