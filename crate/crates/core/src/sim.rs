//! Detection-data generation from a scene, plus scene ingestion.
//!
//! Per-pixel randomness comes from counter-based stream derivation: every
//! (seed, x, y, stream) tuple is hashed into an independent ChaCha8 state,
//! so results are bit-identical regardless of pixel iteration order or
//! thread count.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::formats;
use crate::model::{AcquisitionConfig, DetectionSet, Scene, C_M_PER_PS};

/// RNG stream ids, one per independent random quantity at a pixel.
pub mod stream {
    pub const SIGNAL_COUNT: u32 = 0;
    pub const SIGNAL_TIMES: u32 = 1;
    pub const BACKGROUND_COUNT: u32 = 2;
    pub const BACKGROUND_TIMES: u32 = 3;
    pub const TIE_BREAK: u32 = 4;
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives an independent RNG for one (pixel, stream) pair.
pub fn pixel_rng(seed: u64, x: u32, y: u32, stream_id: u32) -> ChaCha8Rng {
    let mut state = seed
        ^ (u64::from(x).wrapping_mul(0x9e37_79b9_7f4a_7c15))
        ^ (u64::from(y).wrapping_mul(0xc2b2_ae3d_27d4_eb4f))
        ^ (u64::from(stream_id) << 32);
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Poisson sampling by inversion; exact and deterministic given the rng.
pub fn sample_poisson<R: Rng>(rng: &mut R, lambda: f64) -> u64 {
    debug_assert!(lambda >= 0.0);
    if lambda == 0.0 {
        return 0;
    }
    // Chunked inversion stays exact for the moderate rates used here
    // (lambda <= ~100 after superpixel amplification) without the
    // floating-point underflow of a single pass.
    let mut remaining = lambda;
    let mut total = 0u64;
    while remaining > 30.0 {
        total += inversion_poisson(rng, 30.0);
        remaining -= 30.0;
    }
    total + inversion_poisson(rng, remaining)
}

fn inversion_poisson<R: Rng>(rng: &mut R, lambda: f64) -> u64 {
    let mut u: f64 = rng.gen();
    let mut p = (-lambda).exp();
    let mut k = 0u64;
    while u > p {
        u -= p;
        k += 1;
        p *= lambda / k as f64;
        if k > 100_000 {
            break;
        }
    }
    k
}

/// Box-Muller draw.
pub fn sample_standard_normal<R: Rng>(rng: &mut R) -> f64 {
    // Box-Muller; one value per call keeps the stream layout simple.
    let u1: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Everything needed to generate one detection set.
#[derive(Debug, Clone)]
pub struct SimulationSpec {
    pub scene: Scene,
    pub config: AcquisitionConfig,
    /// Desired mean signal photons per pixel over the dwell.
    pub target_signal_ppp: f64,
    /// Desired scene-wide signal-to-background ratio; infinity means no
    /// background.
    pub target_sbr: f64,
    pub seed: u64,
}

impl SimulationSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.target_signal_ppp > 0.0) {
            return Err(Error::Config("target_signal_ppp must be positive".into()));
        }
        if !(self.target_sbr > 0.0) {
            return Err(Error::Config("target_sbr must be positive".into()));
        }
        self.scene.validate()?;
        Ok(())
    }
}

/// Illuminations needed for the average pixel to produce one signal photon.
pub const ILLUMINATIONS_PER_SIGNAL_PHOTON: f64 = 500.0;

/// Completes the timing config with rates meeting the ppp/SBR targets:
/// the mean pixel needs 500 illuminations per signal photon, so
/// n_r = 500 * ppp, eta*S = 1/(500 * mean_alpha), and B follows from SBR.
pub fn calibrate_rates(spec: &SimulationSpec) -> Result<AcquisitionConfig> {
    spec.validate()?;
    let mean_alpha = spec.scene.mean_alpha();
    if !(mean_alpha > 0.0) {
        return Err(Error::Config("scene reflectivity has nonpositive mean".into()));
    }
    let mut config = spec.config.clone();
    let eta_s = 1.0 / (ILLUMINATIONS_PER_SIGNAL_PHOTON * mean_alpha);
    config.s_total = eta_s / config.eta;
    config.n_r = (ILLUMINATIONS_PER_SIGNAL_PHOTON * spec.target_signal_ppp).round() as u32;
    config.b_total = if spec.target_sbr.is_infinite() {
        0.0
    } else {
        // scene-mean signal per period is 1/500; SBR = signal / (n_r B)
        1.0 / (ILLUMINATIONS_PER_SIGNAL_PHOTON * spec.target_sbr)
    };
    config.validate()?;
    spec.scene.check_against(&config)?;
    config.check_low_flux(spec.scene.max_alpha())?;
    Ok(config)
}

/// A generated detection set and its ground-truth unmixing labels.
///
/// Labels are aligned with the sorted per-pixel timestamps; they exist for
/// oracle experiments only and are written to a sidecar file, never into
/// the detection data itself.
#[derive(Debug, Clone)]
pub struct Simulated {
    pub detections: DetectionSet,
    /// Per pixel, per detection: 0 = background, 1 = signal.
    pub labels: Vec<Vec<u8>>,
}

/// Generates folded detections for every pixel under the calibrated config.
pub fn simulate(spec: &SimulationSpec) -> Result<Simulated> {
    let config = calibrate_rates(spec)?;
    let scene = &spec.scene;
    let t_r = config.t_r_ps;
    let t_r_int = t_r as u64;
    let n_r = f64::from(config.n_r);
    let eta_s = config.eta_s();
    let sigma = config.pulse_sigma_ps;
    let seed = spec.seed;

    let pixels: Vec<(Vec<u64>, Vec<u8>)> = (0..scene.len())
        .into_par_iter()
        .map(|idx| {
            let x = (idx % scene.width) as u32;
            let y = (idx / scene.width) as u32;
            let alpha = scene.alpha[idx];
            let depth = scene.depth[idx];
            let center = 2.0 * depth / C_M_PER_PS;

            let m = {
                let mut rng = pixel_rng(seed, x, y, stream::SIGNAL_COUNT);
                sample_poisson(&mut rng, n_r * eta_s * alpha)
            };
            let mut events: Vec<(u64, u8)> = Vec::with_capacity(m as usize + 4);
            {
                let mut rng = pixel_rng(seed, x, y, stream::SIGNAL_TIMES);
                for _ in 0..m {
                    // redraw tails outside the repetition period rather than
                    // wrapping: wrapped tails would fabricate early clusters
                    let t = loop {
                        let t = center + sigma * sample_standard_normal(&mut rng);
                        let rounded = t.round();
                        if rounded >= 0.0 && (rounded as u64) < t_r_int {
                            break rounded as u64;
                        }
                    };
                    events.push((t, 1));
                }
            }
            let n = {
                let mut rng = pixel_rng(seed, x, y, stream::BACKGROUND_COUNT);
                sample_poisson(&mut rng, n_r * config.b_total)
            };
            {
                let mut rng = pixel_rng(seed, x, y, stream::BACKGROUND_TIMES);
                for _ in 0..n {
                    let t = (rng.gen::<f64>() * t_r) as u64;
                    events.push((t.min(t_r_int - 1), 0));
                }
            }
            events.sort_unstable();
            let times = events.iter().map(|(t, _)| *t).collect();
            let labels = events.iter().map(|(_, l)| *l).collect();
            (times, labels)
        })
        .collect();

    let mut times = Vec::with_capacity(pixels.len());
    let mut labels = Vec::with_capacity(pixels.len());
    for (t, l) in pixels {
        if t.len() > config.n_r as usize {
            return Err(Error::Numerical(
                "pixel detection count exceeded n_r; config too close to flux limit".into(),
            ));
        }
        times.push(t);
        labels.push(l);
    }

    let detections = DetectionSet {
        width: scene.width,
        height: scene.height,
        times,
        config,
    };
    Ok(Simulated { detections, labels })
}

/// Reads a scene from a reflectivity file and a depth file.
///
/// Reflectivity comes from an 8/16-bit PGM normalized to [0, 1]. Depth is
/// either a PGM (values affine-mapped by `z_offset + norm * z_scale`) or a
/// float-grid file holding meters directly (then shifted by `z_offset` and
/// scaled by `z_scale`).
pub fn load_scene(
    alpha_path: &std::path::Path,
    depth_path: &std::path::Path,
    z_offset: f64,
    z_scale: f64,
    z_max: f64,
) -> Result<Scene> {
    let (aw, ah, alpha) = formats::read_pgm_normalized(alpha_path)?;
    let (dw, dh, depth_raw) = formats::read_grid_auto(depth_path)?;
    if (aw, ah) != (dw, dh) {
        return Err(Error::Data(format!(
            "dimension mismatch: reflectivity {aw}x{ah}, depth {dw}x{dh}"
        )));
    }
    let depth: Vec<f64> = depth_raw.iter().map(|v| z_offset + v * z_scale).collect();
    Scene::new(aw, ah, alpha, depth, z_max)
}

/// A small piecewise-constant test scene: quadrants of distinct
/// reflectivity and depth plus one inset rectangle, mimicking the
/// piecewise structure of natural depth maps.
pub fn piecewise_scene(width: usize, height: usize) -> Scene {
    let blocks = [(0.4, 1.8), (0.7, 2.6), (1.0, 3.4), (0.55, 2.2)];
    let mut alpha = vec![0.0; width * height];
    let mut depth = vec![0.0; width * height];
    for y in 0..height {
        for x in 0..width {
            let q = usize::from(x >= width / 2) + 2 * usize::from(y >= height / 2);
            let (a, z) = blocks[q];
            let idx = y * width + x;
            alpha[idx] = a;
            depth[idx] = z;
        }
    }
    // inset rectangle spanning the quadrant boundary
    let (x0, x1) = (width * 3 / 8, width * 5 / 8);
    let (y0, y1) = (height * 3 / 8, height * 5 / 8);
    for y in y0..y1 {
        for x in x0..x1 {
            let idx = y * width + x;
            alpha[idx] = 0.85;
            depth[idx] = 3.0;
        }
    }
    Scene { width, height, alpha, depth, z_max: 12.0 }
}
