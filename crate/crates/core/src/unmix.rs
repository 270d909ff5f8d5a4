//! Adaptive windowing, superpixel formation, and the iteration driver that
//! grows the borrowing neighborhood until every pixel has a reliable
//! cluster or the neighborhood limit is reached.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimate::{reflectivity_pml, PmlParams};
use crate::model::{DetectionSet, NclTable};
use crate::sim::{pixel_rng, stream};

/// Outcome of windowing one (possibly augmented) detection list.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowResult {
    /// Largest window occupancy.
    pub k_max: usize,
    /// Start time of the chosen window, picoseconds; absent for empty lists.
    pub window_start: Option<u64>,
    /// Detection times retained inside the chosen window.
    pub retained: Vec<u64>,
    /// Number of pixels that contributed to the windowed list.
    pub n_sp: usize,
    /// Whether k_max met the minimum cluster size for this noise rate.
    pub reliable: bool,
}

impl WindowResult {
    fn empty(n_sp: usize) -> Self {
        WindowResult { k_max: 0, window_start: None, retained: Vec::new(), n_sp, reliable: false }
    }
}

/// How to resolve ties between windows of equal occupancy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TieBreak {
    /// Choose uniformly at random among the tied windows (seeded).
    SeededRandom,
    /// Always take the earliest anchor; bit-reproducible without RNG state.
    Earliest,
}

#[derive(Debug, Clone)]
pub struct UnmixParams {
    /// False-acceptance threshold for noise clusters.
    pub tau_fa: f64,
    /// Reflectivity tolerance for superpixel membership.
    pub tau_sp: f64,
    /// Largest Chebyshev borrowing distance.
    pub d_sp_max: u32,
    pub tie_break: TieBreak,
    /// Seed for the tie-break streams.
    pub seed: u64,
}

impl Default for UnmixParams {
    fn default() -> Self {
        // published operating point
        UnmixParams {
            tau_fa: 0.01,
            tau_sp: 0.05,
            d_sp_max: 3,
            tie_break: TieBreak::SeededRandom,
            seed: 0,
        }
    }
}

impl UnmixParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_fa > 0.0 && self.tau_fa < 1.0) {
            return Err(Error::Config("tau_fa must be in (0, 1)".into()));
        }
        if !(self.tau_sp > 0.0) {
            return Err(Error::Config("tau_sp must be positive".into()));
        }
        Ok(())
    }
}

/// Scans windows anchored at each detection and returns the maximal
/// occupancy with the chosen anchor. Two-pointer sweep, O(k).
pub fn find_best_window(
    times: &[u64],
    t_wind_ps: u64,
    tie_break: TieBreak,
    rng: Option<&mut ChaCha8Rng>,
) -> Option<(usize, u64)> {
    if times.is_empty() {
        return None;
    }
    debug_assert!(times.windows(2).all(|w| w[0] <= w[1]));
    let n = times.len();
    let mut best = 0usize;
    let mut j = 0usize;
    let mut occupancy = vec![0usize; n];
    for i in 0..n {
        if j < i {
            j = i;
        }
        while j < n && times[j] < times[i] + t_wind_ps {
            j += 1;
        }
        occupancy[i] = j - i;
        best = best.max(j - i);
    }
    let tied: Vec<usize> = (0..n).filter(|&i| occupancy[i] == best).collect();
    let anchor = match (tie_break, tied.len()) {
        (_, 1) => tied[0],
        (TieBreak::Earliest, _) => tied[0],
        (TieBreak::SeededRandom, m) => match rng {
            Some(rng) => tied[rng.gen_range(0..m)],
            None => tied[0],
        },
    };
    Some((best, times[anchor]))
}

/// Windows one pixel's detection list and applies the minimum-cluster-size
/// reliability rule at noise rate n_sp * n_r * B.
pub fn censor_pixel(
    times: &[u64],
    n_sp: usize,
    ncl_table: &NclTable,
    detections_config: &crate::model::AcquisitionConfig,
    tie_break: TieBreak,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<WindowResult> {
    let config = detections_config;
    let noise_rate = n_sp as f64 * f64::from(config.n_r) * config.b_total;
    let n_cl = ncl_table.lookup(noise_rate)? as usize;
    censor_with_ncl(times, n_sp, n_cl, config.t_wind_ps as u64, tie_break, rng)
}

/// The windowing half of [`censor_pixel`], with the cluster size already
/// resolved. Lets callers that censor many pixels at the same effective
/// noise rate pay for the table lookup once.
pub fn censor_with_ncl(
    times: &[u64],
    n_sp: usize,
    n_cl: usize,
    t_wind: u64,
    tie_break: TieBreak,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<WindowResult> {
    match find_best_window(times, t_wind, tie_break, rng) {
        None => Ok(WindowResult::empty(n_sp)),
        Some((k_max, start)) => {
            let retained: Vec<u64> = times
                .iter()
                .copied()
                .filter(|t| *t >= start && *t < start + t_wind)
                .collect();
            debug_assert_eq!(retained.len(), k_max);
            Ok(WindowResult {
                k_max,
                window_start: Some(start),
                retained,
                n_sp,
                reliable: k_max >= n_cl,
            })
        }
    }
}

/// All pixels within Chebyshev distance d_sp of the center whose PML
/// reflectivity is within tau_sp of the center's. Always contains the
/// center; clipped at image borders.
pub fn form_superpixel(
    center: (usize, usize),
    alpha_pml: &[f64],
    width: usize,
    height: usize,
    d_sp: u32,
    tau_sp: f64,
) -> Vec<(usize, usize)> {
    let (cx, cy) = center;
    let d = d_sp as usize;
    let a_center = alpha_pml[cy * width + cx];
    let x0 = cx.saturating_sub(d);
    let x1 = (cx + d).min(width - 1);
    let y0 = cy.saturating_sub(d);
    let y1 = (cy + d).min(height - 1);
    let mut members = Vec::with_capacity((x1 - x0 + 1) * (y1 - y0 + 1));
    for y in y0..=y1 {
        for x in x0..=x1 {
            if (x, y) == (cx, cy) || (alpha_pml[y * width + x] - a_center).abs() <= tau_sp {
                members.push((x, y));
            }
        }
    }
    members
}

/// Multiset union of member detection lists, sorted.
pub fn aggregate_detections(
    members: &[(usize, usize)],
    detections: &DetectionSet,
) -> (Vec<u64>, usize) {
    assert!(!members.is_empty());
    let total: usize = members.iter().map(|&(x, y)| detections.pixel(x, y).len()).sum();
    let mut merged = Vec::with_capacity(total);
    for &(x, y) in members {
        merged.extend_from_slice(detections.pixel(x, y));
    }
    merged.sort_unstable();
    (merged, members.len())
}

/// One row of the per-iteration diagnostics CSV.
#[derive(Debug, Clone, Copy)]
pub struct IterationDiag {
    pub iteration: u32,
    pub d_sp: u32,
    pub fraction_reliable: f64,
    pub mean_n_sp: f64,
    pub mean_k_max: f64,
}

impl IterationDiag {
    pub const CSV_HEADER: &'static str =
        "iteration,d_sp,fraction_reliable,mean_n_sp,mean_k_max";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.iteration, self.d_sp, self.fraction_reliable, self.mean_n_sp, self.mean_k_max
        )
    }
}

#[derive(Debug, Clone)]
pub struct UnmixOutput {
    pub results: Vec<WindowResult>,
    /// PML reflectivity from the final iteration.
    pub alpha_pml: Vec<f64>,
    pub diagnostics: Vec<IterationDiag>,
}

/// Runs the full unmixing loop: window, estimate reflectivity, form
/// superpixels, re-aggregate, growing d_sp each iteration. Pixels freeze
/// their result the iteration they first pass the cluster rule.
pub fn unmix_image(
    detections: &DetectionSet,
    params: &UnmixParams,
    pml: &PmlParams,
    ncl_table: &NclTable,
) -> Result<UnmixOutput> {
    params.validate()?;
    let config = &detections.config;
    let width = detections.width;
    let height = detections.height;
    let n_pix = width * height;

    // Aggregated (list, n_sp) per pixel; starts as each pixel's own list.
    let mut aggregated: Vec<(Vec<u64>, usize)> =
        detections.times.iter().map(|ts| (ts.clone(), 1usize)).collect();
    let mut results: Vec<WindowResult> = vec![WindowResult::empty(1); n_pix];
    let mut frozen = vec![false; n_pix];
    let mut alpha_pml = vec![0.0; n_pix];
    let mut diagnostics = Vec::new();

    for d_sp in 0..=params.d_sp_max {
        // resolve the cluster-size rule once per distinct superpixel size
        // (at most (2 d_sp + 1)^2 of them) instead of once per pixel —
        // the rate can exceed the precomputed table and fall back to a
        // fresh computation
        let mut ncl_by_nsp: std::collections::HashMap<usize, usize> =
            std::collections::HashMap::new();
        for (_, n_sp) in &aggregated {
            if let std::collections::hash_map::Entry::Vacant(e) = ncl_by_nsp.entry(*n_sp) {
                let rate = *n_sp as f64 * f64::from(config.n_r) * config.b_total;
                e.insert(ncl_table.lookup(rate)? as usize);
            }
        }

        // window every still-unreliable pixel on its current aggregation
        let fresh: Vec<Option<WindowResult>> = (0..n_pix)
            .into_par_iter()
            .map(|idx| -> Result<Option<WindowResult>> {
                if frozen[idx] {
                    return Ok(None);
                }
                let (times, n_sp) = &aggregated[idx];
                let mut rng = pixel_rng(
                    params.seed.wrapping_add(u64::from(d_sp)),
                    (idx % width) as u32,
                    (idx / width) as u32,
                    stream::TIE_BREAK,
                );
                let n_cl = ncl_by_nsp
                    .get(n_sp)
                    .copied()
                    .expect("n_cl precomputed for every superpixel size");
                let wr = censor_with_ncl(
                    times,
                    *n_sp,
                    n_cl,
                    config.t_wind_ps as u64,
                    params.tie_break,
                    Some(&mut rng),
                )?;
                Ok(Some(wr))
            })
            .collect::<Result<_>>()?;
        for (idx, wr) in fresh.into_iter().enumerate() {
            if let Some(wr) = wr {
                frozen[idx] = wr.reliable;
                results[idx] = wr;
            }
        }

        // reflectivity PML on the current k_max / n_sp grids
        let k_max: Vec<f64> = results.iter().map(|r| r.k_max as f64).collect();
        let n_sp: Vec<f64> = results.iter().map(|r| r.n_sp as f64).collect();
        alpha_pml = reflectivity_pml(&k_max, &n_sp, width, height, config, pml)?;

        let reliable_count = frozen.iter().filter(|f| **f).count();
        diagnostics.push(IterationDiag {
            iteration: d_sp,
            d_sp,
            fraction_reliable: reliable_count as f64 / n_pix as f64,
            mean_n_sp: results.iter().map(|r| r.n_sp as f64).sum::<f64>() / n_pix as f64,
            mean_k_max: results.iter().map(|r| r.k_max as f64).sum::<f64>() / n_pix as f64,
        });

        if reliable_count == n_pix || d_sp == params.d_sp_max {
            break;
        }

        // re-form superpixels for unreliable pixels with the fresh
        // reflectivity and the next neighborhood size
        let next_aggregated: Vec<Option<(Vec<u64>, usize)>> = (0..n_pix)
            .into_par_iter()
            .map(|idx| {
                if frozen[idx] {
                    return None;
                }
                let center = (idx % width, idx / width);
                let members = form_superpixel(
                    center,
                    &alpha_pml,
                    width,
                    height,
                    d_sp + 1,
                    params.tau_sp,
                );
                Some(aggregate_detections(&members, detections))
            })
            .collect();
        for (idx, agg) in next_aggregated.into_iter().enumerate() {
            if let Some(agg) = agg {
                aggregated[idx] = agg;
            }
        }
    }

    Ok(UnmixOutput { results, alpha_pml, diagnostics })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::AcquisitionConfig;
    use rand::Rng;
    use rand::SeedableRng;

    fn table() -> NclTable {
        NclTable::build(0.01, 0.0054, 60.0).unwrap()
    }

    #[test]
    fn best_window_hand_enumeration() {
        let times = [100u64, 200, 350, 5000];
        let (k, start) = find_best_window(&times, 540, TieBreak::Earliest, None).unwrap();
        assert_eq!((k, start), (3, 100));
    }

    #[test]
    fn best_window_empty_list() {
        assert_eq!(find_best_window(&[], 540, TieBreak::Earliest, None), None);
    }

    /// Brute-force O(k^2) window scan as oracle for the two-pointer sweep.
    #[test]
    fn best_window_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        for _ in 0..10_000 {
            let n = rng.gen_range(0..30);
            let mut times: Vec<u64> = (0..n).map(|_| rng.gen_range(0..100_000u64)).collect();
            times.sort_unstable();
            let t_wind = 540u64;
            let brute = times
                .iter()
                .map(|&a| times.iter().filter(|&&t| t >= a && t < a + t_wind).count())
                .max()
                .unwrap_or(0);
            let got = find_best_window(&times, t_wind, TieBreak::Earliest, None)
                .map(|(k, _)| k)
                .unwrap_or(0);
            assert_eq!(got, brute, "times {times:?}");
        }
    }

    #[test]
    fn censor_empty_pixel_is_unreliable() {
        let config = AcquisitionConfig::standard();
        let wr = censor_pixel(&[], 1, &table(), &config, TieBreak::Earliest, None).unwrap();
        assert_eq!(wr.k_max, 0);
        assert!(!wr.reliable);
    }

    #[test]
    fn censor_dense_cluster_is_reliable() {
        let mut config = AcquisitionConfig::standard();
        config.b_total = 0.01; // noise rate 10 -> n_cl around 4
        let times: Vec<u64> = (0..10).map(|i| 40_000 + i * 25).collect();
        let wr = censor_pixel(&times, 1, &table(), &config, TieBreak::Earliest, None).unwrap();
        assert!(wr.reliable);
        assert_eq!(wr.retained, times);
        assert_eq!(wr.k_max, 10);
    }

    /// Pure-noise pixels must be declared reliable with frequency below
    /// tau_FA.
    #[test]
    fn false_acceptance_bounded_on_pure_noise() {
        let mut config = AcquisitionConfig::standard();
        config.b_total = 0.002; // noise rate nu = 2
        let ncl_table = table();
        let trials = 100_000usize;
        let mut rng = ChaCha8Rng::seed_from_u64(5150);
        let mut accepted = 0usize;
        for _ in 0..trials {
            let n = crate::sim::sample_poisson(&mut rng, 2.0);
            let mut times: Vec<u64> = (0..n).map(|_| rng.gen_range(0..100_000u64)).collect();
            times.sort_unstable();
            let wr =
                censor_pixel(&times, 1, &ncl_table, &config, TieBreak::Earliest, None).unwrap();
            if wr.reliable {
                accepted += 1;
            }
        }
        let frac = accepted as f64 / trials as f64;
        let stderr = (0.01 * 0.99 / trials as f64).sqrt();
        assert!(frac <= 0.01 + 3.0 * stderr, "false acceptance {frac}");
    }

    #[test]
    fn superpixel_d0_is_center_only() {
        let alpha = vec![0.5; 9];
        assert_eq!(form_superpixel((1, 1), &alpha, 3, 3, 0, 0.05), vec![(1, 1)]);
    }

    #[test]
    fn superpixel_constant_alpha_full_neighborhood() {
        let alpha = vec![0.5; 9];
        let members = form_superpixel((1, 1), &alpha, 3, 3, 1, 0.05);
        assert_eq!(members.len(), 9);
    }

    #[test]
    fn superpixel_step_edge_excludes_far_side() {
        // 3x3, left column dark (0.0), rest bright (1.0)
        let alpha = vec![0.0, 1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0];
        let members = form_superpixel((0, 1), &alpha, 3, 3, 1, 0.05);
        assert_eq!(members, vec![(0, 0), (0, 1), (0, 2)]);
    }

    #[test]
    fn superpixel_clips_at_borders() {
        let alpha = vec![0.5; 9];
        let members = form_superpixel((0, 0), &alpha, 3, 3, 1, 0.05);
        assert_eq!(members.len(), 4);
    }

    #[test]
    fn aggregation_conserves_counts_and_order() {
        let config = AcquisitionConfig::standard();
        let detections = DetectionSet {
            width: 2,
            height: 1,
            times: vec![vec![10, 500, 900], vec![5, 20, 600, 800, 950]],
            config,
        };
        let (merged, n_sp) = aggregate_detections(&[(0, 0), (1, 0)], &detections);
        assert_eq!(n_sp, 2);
        assert_eq!(merged.len(), 8);
        let mut resorted = merged.clone();
        resorted.sort_unstable();
        assert_eq!(merged, resorted);
    }
}
