//! Metrics and study harnesses: cluster-probability Monte Carlo, the depth
//! thresholding study, and the full SBR/ppp comparison sweep of baseline,
//! unmixed, and oracle pipelines.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimate::{
    depth_ml_logmatched, depth_pml, oracle_pipeline, reflectivity_cml_binomial, PmlParams,
};
use crate::model::{AcquisitionConfig, NclTable, Scene, C_M_PER_PS};
use crate::sim::{pixel_rng, sample_poisson, simulate, stream, SimulationSpec};
use crate::unmix::{find_best_window, unmix_image, TieBreak, UnmixParams};

/// dB floor reported when the estimate is exact.
pub const MSE_DB_FLOOR: f64 = -300.0;

/// 10 log10 of the per-pixel mean squared error.
pub fn mse_db(truth: &[f64], estimate: &[f64]) -> f64 {
    assert_eq!(truth.len(), estimate.len());
    assert!(!truth.is_empty());
    let mse = truth
        .iter()
        .zip(estimate)
        .map(|(t, e)| (t - e) * (t - e))
        .sum::<f64>()
        / truth.len() as f64;
    if mse <= 0.0 {
        MSE_DB_FLOOR
    } else {
        (10.0 * mse.log10()).max(MSE_DB_FLOOR)
    }
}

/// Root of the per-pixel mean squared error, meters.
pub fn rmse_m(truth: &[f64], estimate: &[f64]) -> f64 {
    assert_eq!(truth.len(), estimate.len());
    assert!(!truth.is_empty());
    (truth
        .iter()
        .zip(estimate)
        .map(|(t, e)| (t - e) * (t - e))
        .sum::<f64>()
        / truth.len() as f64)
        .sqrt()
}

// ---------------------------------------------------------------------------
// Cluster-probability Monte Carlo
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClusterKind {
    Noise,
    Signal,
}

#[derive(Debug, Clone)]
pub struct ClusterValidationRow {
    pub kind: ClusterKind,
    pub rate: f64,
    pub n_cl: usize,
    pub trials: usize,
    /// Monte Carlo frequency of k_max >= n_cl.
    pub frequency: f64,
    /// The closed-form counterpart (noise: approximation; signal: lower
    /// bound).
    pub theory: f64,
}

pub const CLUSTER_CSV_HEADER: &str = "kind,rate,n_cl,trials,frequency,theory";

impl ClusterValidationRow {
    pub fn csv_row(&self) -> String {
        let kind = match self.kind {
            ClusterKind::Noise => "noise",
            ClusterKind::Signal => "signal",
        };
        format!(
            "{},{},{},{},{},{}",
            kind, self.rate, self.n_cl, self.trials, self.frequency, self.theory
        )
    }
}

/// Monte Carlo check of the cluster-probability formulas: per trial, draw
/// detections for a single pixel (uniform for noise, pulse-shaped for
/// signal), scan for the max-occupancy window, and record how often it
/// reaches each candidate minimum cluster size.
pub fn mc_cluster_validation(
    noise_rates: &[f64],
    signal_rates: &[f64],
    n_cls: &[usize],
    trials: usize,
    config: &AcquisitionConfig,
    seed: u64,
) -> Result<Vec<ClusterValidationRow>> {
    if trials == 0 {
        return Err(Error::Config("trials must be >= 1".into()));
    }
    config.validate()?;
    let t_wind = config.t_wind_ps as u64;
    let t_r = config.t_r_ps as u64;
    let sigma = config.pulse_sigma_ps;
    let max_ncl = n_cls.iter().copied().max().unwrap_or(2);

    let mut cells: Vec<(ClusterKind, f64, u32)> = Vec::new();
    for (i, &r) in noise_rates.iter().enumerate() {
        cells.push((ClusterKind::Noise, r, i as u32));
    }
    for (i, &r) in signal_rates.iter().enumerate() {
        cells.push((ClusterKind::Signal, r, (noise_rates.len() + i) as u32));
    }

    let counts: Vec<Vec<usize>> = cells
        .par_iter()
        .map(|&(kind, rate, cell)| {
            let mut rng = pixel_rng(seed, cell, 0, stream::SIGNAL_COUNT);
            let mut reached = vec![0usize; max_ncl + 1];
            let mut times: Vec<u64> = Vec::new();
            for _ in 0..trials {
                times.clear();
                let n = sample_poisson(&mut rng, rate);
                match kind {
                    ClusterKind::Noise => {
                        for _ in 0..n {
                            times.push(rng.gen_range(0..t_r));
                        }
                    }
                    ClusterKind::Signal => {
                        // pulse centered mid-period; draws essentially never fold
                        let center = t_r as f64 / 2.0;
                        for _ in 0..n {
                            let g = crate::sim::sample_standard_normal(&mut rng);
                            let t = (center + sigma * g).rem_euclid(t_r as f64);
                            times.push(t as u64);
                        }
                    }
                }
                times.sort_unstable();
                let k_max = find_best_window(&times, t_wind, TieBreak::Earliest, None)
                    .map_or(0, |(k, _)| k);
                for (n_cl, slot) in reached.iter_mut().enumerate() {
                    if k_max >= n_cl {
                        *slot += 1;
                    }
                }
            }
            reached
        })
        .collect();

    let mut rows = Vec::new();
    for ((kind, rate, _), reached) in cells.iter().zip(&counts) {
        for &n_cl in n_cls {
            let theory = match kind {
                ClusterKind::Noise => crate::model::noise_cluster_probability(
                    n_cl as u32,
                    *rate,
                    config.t_wind_over_t_r(),
                )?,
                ClusterKind::Signal => crate::model::signal_cluster_probability(
                    n_cl as u32,
                    *rate,
                    config.t_wind_ps,
                    config.pulse_sigma_ps,
                )?,
            };
            rows.push(ClusterValidationRow {
                kind: *kind,
                rate: *rate,
                n_cl,
                trials,
                frequency: reached[n_cl.min(reached.len() - 1)] as f64 / trials as f64,
                theory,
            });
        }
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Depth thresholding study
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct DepthThresholdRow {
    pub alpha: f64,
    pub sbr: f64,
    pub trials: usize,
    pub mean_signal: f64,
    pub rmse_m: f64,
}

pub const DEPTH_THRESHOLD_CSV_HEADER: &str = "alpha,sbr,trials,mean_signal,rmse_m";

impl DepthThresholdRow {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.alpha, self.sbr, self.trials, self.mean_signal, self.rmse_m
        )
    }
}

/// Single-pixel Monte Carlo of the ML (log-matched filter) depth estimate
/// across signal strength and SBR, exposing the estimator's threshold
/// knee. Empty draws fall back to the midrange guess z_max / 2.
pub fn mc_depth_threshold(
    alpha_grid: &[f64],
    sbr_grid: &[f64],
    trials: usize,
    config: &AcquisitionConfig,
    depth_grid_step_ps: f64,
    seed: u64,
) -> Result<Vec<DepthThresholdRow>> {
    if trials == 0 {
        return Err(Error::Config("trials must be >= 1".into()));
    }
    config.validate()?;
    let t_r = config.t_r_ps;
    let z_max = 0.5 * C_M_PER_PS * t_r;
    let true_z = 0.31 * z_max; // arbitrary interior truth, off any gridline bias
    let center = 2.0 * true_z / C_M_PER_PS;
    let sigma = config.pulse_sigma_ps;
    let n_r = f64::from(config.n_r);

    let mut cells: Vec<(usize, usize)> = Vec::new();
    for ai in 0..alpha_grid.len() {
        for si in 0..sbr_grid.len() {
            cells.push((ai, si));
        }
    }
    let rows: Vec<DepthThresholdRow> = cells
        .par_iter()
        .map(|&(ai, si)| {
            let alpha = alpha_grid[ai];
            let sbr = sbr_grid[si];
            let signal_per_pulse = config.eta_s() * alpha;
            // per-pixel SBR: background rate scales with the signal
            let b = if sbr.is_infinite() { 0.0 } else { signal_per_pulse / sbr };
            let mut cell_config = config.clone();
            cell_config.b_total = b;
            let mut rng = pixel_rng(seed, ai as u32, si as u32, stream::SIGNAL_COUNT);
            let mut sq_sum = 0.0;
            let mut times: Vec<u64> = Vec::new();
            for _ in 0..trials {
                times.clear();
                let m = sample_poisson(&mut rng, n_r * signal_per_pulse);
                for _ in 0..m {
                    let g = crate::sim::sample_standard_normal(&mut rng);
                    let t = (center + sigma * g).rem_euclid(t_r);
                    times.push(t as u64);
                }
                let nb = sample_poisson(&mut rng, n_r * b);
                for _ in 0..nb {
                    times.push(rng.gen_range(0..t_r as u64));
                }
                times.sort_unstable();
                let z = depth_ml_logmatched(&times, &cell_config, depth_grid_step_ps)
                    .unwrap_or(0.5 * z_max);
                sq_sum += (z - true_z) * (z - true_z);
            }
            DepthThresholdRow {
                alpha,
                sbr,
                trials,
                mean_signal: n_r * signal_per_pulse,
                rmse_m: (sq_sum / trials as f64).sqrt(),
            }
        })
        .collect();
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Full comparison sweep
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub sbr_values: Vec<f64>,
    pub ppp_values: Vec<f64>,
    pub trials: usize,
    pub beta_alpha_grid: Vec<f64>,
    pub beta_z_grid: Vec<f64>,
    pub seed: u64,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be >= 1".into()));
        }
        if self.sbr_values.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Config("all sbr values must be positive".into()));
        }
        if self.ppp_values.iter().any(|p| !(*p > 0.0)) {
            return Err(Error::Config("all ppp values must be positive".into()));
        }
        if self.beta_alpha_grid.is_empty() || self.beta_z_grid.is_empty() {
            return Err(Error::Config("beta grids must be nonempty".into()));
        }
        Ok(())
    }

    /// 8 log-spaced points per decade range by default.
    pub fn default_beta_grid(lo: f64, hi: f64) -> Vec<f64> {
        let n = 8;
        (0..n)
            .map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Baseline,
    Unmixed,
    Oracle,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Baseline => "baseline",
            Method::Unmixed => "unmixed",
            Method::Oracle => "oracle",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub sbr: f64,
    pub ppp: f64,
    pub trial: usize,
    pub method: Method,
    pub beta_alpha: f64,
    pub beta_z: f64,
    pub mse_alpha_db: f64,
    pub rmse_z_m: f64,
}

pub const SWEEP_CSV_HEADER: &str =
    "sbr,ppp,trial,method,beta_alpha,beta_z,mse_alpha_db,rmse_z_m";

impl SweepRow {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.sbr,
            self.ppp,
            self.trial,
            self.method.as_str(),
            self.beta_alpha,
            self.beta_z,
            self.mse_alpha_db,
            self.rmse_z_m
        )
    }
}

fn mix_cell_seed(seed: u64, si: usize, pi: usize, trial: usize) -> u64 {
    // distinct stream per sweep cell; simulate() then derives per-pixel
    // streams from this
    let mut z = seed
        ^ (si as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
        ^ (pi as u64).wrapping_mul(0xbf58_476d_1ce4_e5b9)
        ^ (trial as u64).wrapping_mul(0x94d0_49bb_1331_11eb);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z ^ (z >> 27)
}

/// Full pipeline comparison per (SBR, ppp, trial): baseline count image +
/// log-matched depth, the unmixing pipeline across the beta grids, and the
/// signal-labeled oracle. Long-form rows; every cell derives its RNG
/// stream from (seed, cell coordinates) only.
pub fn run_sweep(
    spec: &SweepSpec,
    scene: &Scene,
    base_config: &AcquisitionConfig,
    unmix_params: &UnmixParams,
    pml_base: &PmlParams,
) -> Result<Vec<SweepRow>> {
    spec.validate()?;
    scene.validate()?;
    let mut rows = Vec::new();
    for (si, &sbr) in spec.sbr_values.iter().enumerate() {
        for (pi, &ppp) in spec.ppp_values.iter().enumerate() {
            for trial in 0..spec.trials {
                let sim_spec = SimulationSpec {
                    scene: scene.clone(),
                    config: base_config.clone(),
                    target_signal_ppp: ppp,
                    target_sbr: sbr,
                    seed: mix_cell_seed(spec.seed, si, pi, trial),
                };
                let sim = simulate(&sim_spec)?;
                let config = &sim.detections.config;
                let det = &sim.detections;

                // --- baseline: per-pixel count CML + log-matched depth ---
                let z_mid = 0.25 * C_M_PER_PS * config.t_r_ps;
                let alpha_base: Vec<f64> = det
                    .times
                    .par_iter()
                    .map(|ts| {
                        reflectivity_cml_binomial(ts.len() as u32, config).unwrap_or(0.0)
                    })
                    .collect();
                let depth_base: Vec<f64> = det
                    .times
                    .par_iter()
                    .map(|ts| {
                        depth_ml_logmatched(ts, config, pml_base.depth_grid_step_ps)
                            .unwrap_or(z_mid)
                    })
                    .collect();
                rows.push(SweepRow {
                    sbr,
                    ppp,
                    trial,
                    method: Method::Baseline,
                    beta_alpha: 0.0,
                    beta_z: 0.0,
                    mse_alpha_db: mse_db(&scene.alpha, &alpha_base),
                    rmse_z_m: rmse_m(&scene.depth, &depth_base),
                });

                // --- unmixed pipeline over the beta grids ---
                // eager entries only up to the single-pixel rate; borrowed
                // superpixel rates hit the lookup fallback, memoized per
                // size inside unmix_image
                let ncl_table = NclTable::build(
                    unmix_params.tau_fa,
                    config.t_wind_over_t_r(),
                    (f64::from(config.n_r) * config.b_total).max(1.0).min(200.0),
                )?;
                for &beta_alpha in &spec.beta_alpha_grid {
                    let pml = PmlParams { beta_alpha, ..pml_base.clone() };
                    let out = unmix_image(det, unmix_params, &pml, &ncl_table)?;
                    let mse_a = mse_db(&scene.alpha, &out.alpha_pml);
                    for &beta_z in &spec.beta_z_grid {
                        let pml_z = PmlParams { beta_z, ..pml_base.clone() };
                        let depth = depth_pml(
                            &out.results,
                            det.width,
                            det.height,
                            config,
                            &pml_z,
                        )?;
                        rows.push(SweepRow {
                            sbr,
                            ppp,
                            trial,
                            method: Method::Unmixed,
                            beta_alpha,
                            beta_z,
                            mse_alpha_db: mse_a,
                            rmse_z_m: rmse_m(&scene.depth, &depth),
                        });
                    }
                }

                // --- oracle on true signal labels ---
                for &beta_alpha in &spec.beta_alpha_grid {
                    for &beta_z in &spec.beta_z_grid {
                        let pml = PmlParams {
                            beta_alpha,
                            beta_z,
                            ..pml_base.clone()
                        };
                        let (alpha_o, depth_o) =
                            oracle_pipeline(det, &sim.labels, &pml)?;
                        rows.push(SweepRow {
                            sbr,
                            ppp,
                            trial,
                            method: Method::Oracle,
                            beta_alpha,
                            beta_z,
                            mse_alpha_db: mse_db(&scene.alpha, &alpha_o),
                            rmse_z_m: rmse_m(&scene.depth, &depth_o),
                        });
                    }
                }
            }
        }
    }
    Ok(rows)
}

/// Per (sbr, ppp, method): the trial-averaged row at the best beta pair,
/// judged separately for reflectivity (MSE) and depth (RMSE).
#[derive(Debug, Clone)]
pub struct BestRow {
    pub sbr: f64,
    pub ppp: f64,
    pub method: Method,
    pub best_beta_alpha: f64,
    pub mean_mse_alpha_db: f64,
    pub best_beta_z: f64,
    pub mean_rmse_z_m: f64,
}

pub const BEST_CSV_HEADER: &str =
    "sbr,ppp,method,best_beta_alpha,mean_mse_alpha_db,best_beta_z,mean_rmse_z_m";

impl BestRow {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.sbr,
            self.ppp,
            self.method.as_str(),
            self.best_beta_alpha,
            self.mean_mse_alpha_db,
            self.best_beta_z,
            self.mean_rmse_z_m
        )
    }
}

pub fn select_best(rows: &[SweepRow]) -> Vec<BestRow> {
    use std::collections::BTreeMap;
    // key by bit patterns so f64 grid values can index a map
    type Key = (u64, u64, &'static str);
    let mut alpha_groups: BTreeMap<(Key, u64), (f64, usize)> = BTreeMap::new();
    let mut z_groups: BTreeMap<(Key, u64), (f64, usize)> = BTreeMap::new();
    for r in rows {
        let key: Key = (r.sbr.to_bits(), r.ppp.to_bits(), r.method.as_str());
        let ae = alpha_groups
            .entry((key, r.beta_alpha.to_bits()))
            .or_insert((0.0, 0));
        ae.0 += r.mse_alpha_db;
        ae.1 += 1;
        let ze = z_groups.entry((key, r.beta_z.to_bits())).or_insert((0.0, 0));
        ze.0 += r.rmse_z_m;
        ze.1 += 1;
    }
    let mut keys: Vec<Key> = alpha_groups.keys().map(|(k, _)| *k).collect();
    keys.dedup();
    keys.iter()
        .map(|&key| {
            let best_a = alpha_groups
                .iter()
                .filter(|((k, _), _)| *k == key)
                .map(|((_, b), (sum, n))| (f64::from_bits(*b), sum / *n as f64))
                .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
                .unwrap();
            let best_z = z_groups
                .iter()
                .filter(|((k, _), _)| *k == key)
                .map(|((_, b), (sum, n))| (f64::from_bits(*b), sum / *n as f64))
                .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
                .unwrap();
            let method = match key.2 {
                "baseline" => Method::Baseline,
                "unmixed" => Method::Unmixed,
                _ => Method::Oracle,
            };
            BestRow {
                sbr: f64::from_bits(key.0),
                ppp: f64::from_bits(key.1),
                method,
                best_beta_alpha: best_a.0,
                mean_mse_alpha_db: best_a.1,
                best_beta_z: best_z.0,
                mean_rmse_z_m: best_z.1,
            }
        })
        .collect()
}

/// Trials at SBR <= 1 where the oracle's depth RMSE exceeded the unmixed
/// pipeline's at matched (sbr, ppp, trial, beta_z). The oracle usually
/// wins, but censoring plus TV inpainting can beat noisy single-detection
/// oracle pixels on piecewise-constant scenes, so violations are reported
/// rather than treated as errors.
pub fn oracle_violations(rows: &[SweepRow]) -> Vec<String> {
    let mut flags = Vec::new();
    for o in rows.iter().filter(|r| r.method == Method::Oracle && r.sbr <= 1.0) {
        for u in rows.iter().filter(|r| {
            r.method == Method::Unmixed
                && r.sbr == o.sbr
                && r.ppp == o.ppp
                && r.trial == o.trial
                && r.beta_z == o.beta_z
        }) {
            if o.rmse_z_m > u.rmse_z_m {
                flags.push(format!(
                    "sbr={} ppp={} trial={} beta_z={}: oracle {} > unmixed {}",
                    o.sbr, o.ppp, o.trial, o.beta_z, o.rmse_z_m, u.rmse_z_m
                ));
            }
        }
    }
    flags
}
