//! Domain types and the detection-process probability model.
//!
//! The cluster probabilities follow from uniform order statistics: given n
//! background detections in a repetition period, the gap between the k-th
//! and (k+m)-th detections is Beta(m, n+1-m) after rescaling by the period.
//! Signal clusters are lower-bounded by counting detections in a window
//! centered at the true depth, where each detection lands with a fixed
//! binomial probability.

use crate::error::{Error, Result};
use crate::special::{binomial_cdf, ln_gamma, normal_cdf, poisson_pmf, reg_inc_beta};

/// Speed of light in meters per picosecond.
pub const C_M_PER_PS: f64 = 2.997_924_58e-4;

/// Poisson sums are truncated once the remaining tail mass drops below this.
pub const POISSON_TAIL_EPS: f64 = 1e-12;

/// Timing and rate constants of one acquisition.
#[derive(Debug, Clone, PartialEq)]
pub struct AcquisitionConfig {
    /// Pulse repetition period, picoseconds.
    pub t_r_ps: f64,
    /// RMS pulse width, picoseconds.
    pub t_p_ps: f64,
    /// Gaussian pulse standard deviation, picoseconds (default t_p / 2).
    pub pulse_sigma_ps: f64,
    /// Window duration, picoseconds (default 2 * t_p).
    pub t_wind_ps: f64,
    /// Illumination repetitions per pixel.
    pub n_r: u32,
    /// Detector quantum efficiency, in [0, 1).
    pub eta: f64,
    /// Integrated pulse energy S; per-pulse mean signal detections at
    /// alpha = 1 is eta * S.
    pub s_total: f64,
    /// Mean background + dark detections per repetition period.
    pub b_total: f64,
}

impl AcquisitionConfig {
    /// Paper-measured timing constants: T_p = 270 ps, T_r = 100 ns,
    /// eta = 0.35, T_wind = 2 T_p, sigma = T_p / 2. Rates are left at
    /// placeholder values and normally filled in by calibration.
    pub fn standard() -> Self {
        AcquisitionConfig {
            t_r_ps: 100_000.0,
            t_p_ps: 270.0,
            pulse_sigma_ps: 135.0,
            t_wind_ps: 540.0,
            n_r: 1000,
            eta: 0.35,
            s_total: 0.002 / 0.35,
            b_total: 0.0,
        }
    }

    /// Fraction of the repetition period covered by one window.
    pub fn t_wind_over_t_r(&self) -> f64 {
        self.t_wind_ps / self.t_r_ps
    }

    /// Per-pulse mean signal detections at alpha = 1.
    pub fn eta_s(&self) -> f64 {
        self.eta * self.s_total
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_wind_ps > self.t_p_ps) {
            return Err(Error::Config(format!(
                "t_wind ({} ps) must exceed t_p ({} ps)",
                self.t_wind_ps, self.t_p_ps
            )));
        }
        if !(self.t_wind_ps < self.t_r_ps / 10.0) {
            return Err(Error::Config(format!(
                "t_wind ({} ps) must be well below t_r ({} ps): require t_wind < t_r/10",
                self.t_wind_ps, self.t_r_ps
            )));
        }
        if self.n_r < 1 {
            return Err(Error::Config("n_r must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.eta) {
            return Err(Error::Config(format!("eta ({}) must be in [0, 1)", self.eta)));
        }
        if !(self.s_total > 0.0) {
            return Err(Error::Config("s_total must be positive".into()));
        }
        if !(self.b_total >= 0.0) {
            return Err(Error::Config("b_total must be nonnegative".into()));
        }
        if !(self.pulse_sigma_ps > 0.0) {
            return Err(Error::Config("pulse_sigma must be positive".into()));
        }
        Ok(())
    }

    /// Low-flux check for the largest reflectivity in a scene: per-period
    /// detection probability must stay below 0.1, with a warning threshold
    /// at 0.05. Returns the worst-case per-period rate.
    pub fn check_low_flux(&self, alpha_max: f64) -> Result<f64> {
        let rate = self.eta_s() * alpha_max + self.b_total;
        if rate >= 0.1 {
            return Err(Error::Config(format!(
                "per-period detection rate {rate:.4} violates the low-flux regime (>= 0.1)"
            )));
        }
        Ok(rate)
    }
}

/// Paired reflectivity and depth images.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub width: usize,
    pub height: usize,
    /// Reflectivity, row-major, nonnegative.
    pub alpha: Vec<f64>,
    /// Depth in meters, row-major, each in [0, z_max).
    pub depth: Vec<f64>,
    /// Maximum unambiguous depth, meters.
    pub z_max: f64,
}

impl Scene {
    pub fn new(
        width: usize,
        height: usize,
        alpha: Vec<f64>,
        depth: Vec<f64>,
        z_max: f64,
    ) -> Result<Self> {
        let scene = Scene { width, height, alpha, depth, z_max };
        scene.validate()?;
        Ok(scene)
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn mean_alpha(&self) -> f64 {
        self.alpha.iter().sum::<f64>() / self.len() as f64
    }

    pub fn max_alpha(&self) -> f64 {
        self.alpha.iter().cloned().fold(0.0, f64::max)
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha.len() != self.width * self.height
            || self.depth.len() != self.width * self.height
        {
            return Err(Error::Data("scene grid sizes disagree with dimensions".into()));
        }
        if self.alpha.iter().any(|a| !(*a >= 0.0)) {
            return Err(Error::Data("scene reflectivity must be nonnegative".into()));
        }
        if self.depth.iter().any(|z| !(*z >= 0.0 && *z < self.z_max)) {
            return Err(Error::Data("scene depth must lie in [0, z_max)".into()));
        }
        Ok(())
    }

    /// No distance aliasing: 2 z_max / c < T_r.
    pub fn check_against(&self, config: &AcquisitionConfig) -> Result<()> {
        if 2.0 * self.z_max / C_M_PER_PS >= config.t_r_ps {
            return Err(Error::Config(format!(
                "z_max {} m aliases: 2 z_max / c >= t_r ({} ps)",
                self.z_max, config.t_r_ps
            )));
        }
        Ok(())
    }
}

/// Per-pixel folded photon detection timestamps.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionSet {
    pub width: usize,
    pub height: usize,
    /// Per-pixel sorted timestamps in picoseconds, each in [0, t_r).
    pub times: Vec<Vec<u64>>,
    pub config: AcquisitionConfig,
}

impl DetectionSet {
    pub fn pixel(&self, x: usize, y: usize) -> &[u64] {
        &self.times[y * self.width + x]
    }

    pub fn total_count(&self) -> usize {
        self.times.iter().map(Vec::len).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.times.len() != self.width * self.height {
            return Err(Error::Data("detection grid size disagrees with dimensions".into()));
        }
        let t_r = self.config.t_r_ps as u64;
        for (idx, ts) in self.times.iter().enumerate() {
            if ts.len() > self.config.n_r as usize {
                return Err(Error::Data(format!(
                    "pixel {idx}: count {} exceeds n_r {}",
                    ts.len(),
                    self.config.n_r
                )));
            }
            if ts.windows(2).any(|w| w[0] > w[1]) {
                return Err(Error::Data(format!("pixel {idx}: timestamps not sorted")));
            }
            if ts.iter().any(|t| *t >= t_r) {
                return Err(Error::Data(format!("pixel {idx}: timestamp outside [0, t_r)")));
            }
        }
        Ok(())
    }
}

/// Log of the unnormalized Gaussian pulse shape at a given offset from the
/// peak: -t^2 / (2 sigma^2). Normalization constants are omitted
/// consistently; they shift objectives by constants.
pub fn gaussian_pulse_logdensity(t_offset_ps: f64, pulse_sigma_ps: f64) -> f64 {
    debug_assert!(pulse_sigma_ps > 0.0);
    let u = t_offset_ps / pulse_sigma_ps;
    -0.5 * u * u
}

/// Independence-approximated probability that background detections alone
/// form a cluster of at least `n_cl` inside some window of duration
/// `t_wind_over_t_r * T_r`, given Poisson(noise_rate) detections per
/// acquisition.
pub fn noise_cluster_probability(
    n_cl: u32,
    noise_rate: f64,
    t_wind_over_t_r: f64,
) -> Result<f64> {
    if n_cl < 2 {
        return Err(Error::Config(
            "n_cl must be at least 2: a single detection is not a cluster".into(),
        ));
    }
    if !(noise_rate >= 0.0) {
        return Err(Error::Config("noise_rate must be nonnegative".into()));
    }
    if !(t_wind_over_t_r > 0.0 && t_wind_over_t_r < 1.0) {
        return Err(Error::Config("t_wind_over_t_r must be in (0, 1)".into()));
    }
    if noise_rate == 0.0 {
        return Ok(0.0);
    }

    let a = (n_cl - 1) as f64;
    let mut total = 0.0;
    let mut cdf_below = (0..u64::from(n_cl))
        .map(|n| poisson_pmf(n, noise_rate))
        .sum::<f64>();
    let mut n = u64::from(n_cl);
    loop {
        let pn = poisson_pmf(n, noise_rate);
        cdf_below += pn;
        // gap between detections k and k + (n_cl - 1) is Beta(n_cl - 1, n + 2 - n_cl)
        let gap_cdf = reg_inc_beta(t_wind_over_t_r, a, (n + 1) as f64 - a);
        let candidates = (n - u64::from(n_cl) + 1) as i32;
        total += pn * (1.0 - (1.0 - gap_cdf).powi(candidates));
        if 1.0 - cdf_below < POISSON_TAIL_EPS {
            break;
        }
        n += 1;
    }
    Ok(total.clamp(0.0, 1.0))
}

/// Probability that a window of duration `t_wind` centered at the true
/// depth contains at least `n_cl` signal detections, given
/// Poisson(signal_rate) signal detections per acquisition. A lower bound on
/// cluster occurrence: off-center windows are not considered.
pub fn signal_cluster_probability(
    n_cl: u32,
    signal_rate: f64,
    t_wind_ps: f64,
    pulse_sigma_ps: f64,
) -> Result<f64> {
    if n_cl < 2 {
        return Err(Error::Config(
            "n_cl must be at least 2: a single detection is not a cluster".into(),
        ));
    }
    if !(signal_rate >= 0.0) {
        return Err(Error::Config("signal_rate must be nonnegative".into()));
    }
    if !(t_wind_ps > 0.0 && pulse_sigma_ps > 0.0) {
        return Err(Error::Config("t_wind and pulse_sigma must be positive".into()));
    }
    if signal_rate == 0.0 {
        return Ok(0.0);
    }

    let p_wind = centered_window_mass(t_wind_ps, pulse_sigma_ps);
    let mut total = 0.0;
    let mut cdf_below = (0..u64::from(n_cl))
        .map(|m| poisson_pmf(m, signal_rate))
        .sum::<f64>();
    let mut m = u64::from(n_cl);
    loop {
        let pm = poisson_pmf(m, signal_rate);
        cdf_below += pm;
        total += pm * (1.0 - binomial_cdf(u64::from(n_cl) - 1, m, p_wind));
        if 1.0 - cdf_below < POISSON_TAIL_EPS {
            break;
        }
        m += 1;
    }
    Ok(total.clamp(0.0, 1.0))
}

/// Probability that one signal detection lands in a window of duration
/// `t_wind` centered at the true depth: Phi(T_wind/(2 sigma)) - Phi(-T_wind/(2 sigma)).
pub fn centered_window_mass(t_wind_ps: f64, pulse_sigma_ps: f64) -> f64 {
    let half = t_wind_ps / (2.0 * pulse_sigma_ps);
    normal_cdf(half) - normal_cdf(-half)
}

/// Exact total-variation distance between the per-pixel count laws of the
/// two detection models: Binomial(n_r, 1 - exp(-rate)) per-period success
/// versus Poisson(n_r * rate). In the low-flux regime (rate << 1) these
/// are interchangeable; this quantifies how close.
pub fn count_model_tv_distance(n_r: u32, per_period_rate: f64) -> f64 {
    let n = f64::from(n_r);
    let p = 1.0 - (-per_period_rate).exp();
    let lambda = n * per_period_rate;
    let ln_fact_n = ln_gamma(n + 1.0);
    let (ln_p, ln_q) = (p.ln(), (1.0 - p).ln());
    let mut tv = 0.0;
    for k in 0..=n_r {
        let kf = f64::from(k);
        let binom = if p <= 0.0 {
            if k == 0 { 1.0 } else { 0.0 }
        } else {
            (ln_fact_n - ln_gamma(kf + 1.0) - ln_gamma(n - kf + 1.0)
                + kf * ln_p
                + (n - kf) * ln_q)
                .exp()
        };
        tv += (binom - poisson_pmf(u64::from(k), lambda)).abs();
    }
    // the Poisson tail beyond n_r has no binomial mass
    let pois_tail: f64 =
        1.0 - (0..=u64::from(n_r)).map(|k| poisson_pmf(k, lambda)).sum::<f64>();
    0.5 * (tv + pois_tail.max(0.0))
}

/// Smallest cluster size n_cl >= 2 whose noise-cluster probability falls
/// below `tau_fa`.
pub fn min_cluster_size(noise_rate: f64, tau_fa: f64, t_wind_over_t_r: f64) -> Result<u32> {
    if !(tau_fa > 0.0 && tau_fa < 1.0) {
        return Err(Error::Config("tau_fa must be in (0, 1)".into()));
    }
    // The Poisson tail makes the search bounded: beyond
    // rate + 20 sqrt(rate) + 2 the cluster probability is already tiny.
    let bound = (noise_rate + 20.0 * noise_rate.sqrt() + 3.0).ceil() as u32;
    let mut n_cl = 2u32;
    loop {
        if noise_cluster_probability(n_cl, noise_rate, t_wind_over_t_r)? < tau_fa {
            return Ok(n_cl);
        }
        n_cl += 1;
        if n_cl > bound {
            return Err(Error::Numerical(format!(
                "min_cluster_size search exceeded bound {bound} at rate {noise_rate}"
            )));
        }
    }
}

/// Precomputed minimum cluster size as a function of effective noise rate.
///
/// Keys are the noise rate quantized *upward* to a grid of step
/// [`NclTable::RATE_STEP`], which keeps the false-acceptance guarantee
/// conservative (the rule is non-decreasing in the rate).
#[derive(Debug, Clone)]
pub struct NclTable {
    pub tau_fa: f64,
    pub t_wind_over_t_r: f64,
    /// Sorted (quantized rate, n_cl) pairs.
    entries: Vec<(f64, u32)>,
}

impl NclTable {
    pub const RATE_STEP: f64 = 0.1;

    pub fn new(tau_fa: f64, t_wind_over_t_r: f64) -> Result<Self> {
        if !(tau_fa > 0.0 && tau_fa < 1.0) {
            return Err(Error::Config("tau_fa must be in (0, 1)".into()));
        }
        if !(t_wind_over_t_r > 0.0 && t_wind_over_t_r < 1.0) {
            return Err(Error::Config("t_wind_over_t_r must be in (0, 1)".into()));
        }
        Ok(NclTable { tau_fa, t_wind_over_t_r, entries: Vec::new() })
    }

    fn quantize_up(rate: f64) -> f64 {
        if rate <= 0.0 {
            return 0.0;
        }
        (rate / Self::RATE_STEP).ceil() * Self::RATE_STEP
    }

    /// Builds the table eagerly for all quantized rates up to `max_rate`.
    pub fn build(tau_fa: f64, t_wind_over_t_r: f64, max_rate: f64) -> Result<Self> {
        let mut table = Self::new(tau_fa, t_wind_over_t_r)?;
        let steps = (Self::quantize_up(max_rate) / Self::RATE_STEP).round() as usize;
        for i in 0..=steps {
            let rate = i as f64 * Self::RATE_STEP;
            let n_cl = min_cluster_size(rate, tau_fa, t_wind_over_t_r)?;
            table.entries.push((rate, n_cl));
        }
        Ok(table)
    }

    /// Minimum cluster size at the given (unquantized) noise rate.
    pub fn lookup(&self, noise_rate: f64) -> Result<u32> {
        let key = Self::quantize_up(noise_rate);
        match self.entries.binary_search_by(|(r, _)| r.partial_cmp(&key).unwrap()) {
            Ok(idx) => Ok(self.entries[idx].1),
            Err(_) => min_cluster_size(key, self.tau_fa, self.t_wind_over_t_r),
        }
    }

    pub fn entries(&self) -> &[(f64, u32)] {
        &self.entries
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const T_WIND_OVER_T_R: f64 = 540.0 / 100_000.0;

    /// Frozen against an independent exact summation (Python mpmath-free
    /// double-precision reference, both pmfs in log space).
    #[test]
    fn count_model_tv_distance_values() {
        let tol = 1e-9;
        assert!((count_model_tv_distance(1000, 0.002) - 5.416_118_032e-4).abs() < tol);
        assert!((count_model_tv_distance(1000, 0.005) - 2.195_527_200e-3).abs() < tol);
        assert!((count_model_tv_distance(1000, 0.01) - 6.266_738_943e-3).abs() < tol);
        assert_eq!(count_model_tv_distance(1000, 0.0), 0.0);
    }

    #[test]
    fn count_model_tv_distance_monotone_in_rate() {
        let mut prev = 0.0;
        for i in 1..=20 {
            let tv = count_model_tv_distance(1000, i as f64 * 0.001);
            assert!(tv > prev);
            prev = tv;
        }
    }

    #[test]
    fn pulse_logdensity_values() {
        assert_eq!(gaussian_pulse_logdensity(0.0, 135.0), 0.0);
        assert!((gaussian_pulse_logdensity(135.0, 135.0) + 0.5).abs() < 1e-14);
        assert!((gaussian_pulse_logdensity(270.0, 135.0) + 2.0).abs() < 1e-14);
    }

    #[test]
    fn noise_cluster_zero_rate_is_zero() {
        for n_cl in 2..8 {
            assert_eq!(noise_cluster_probability(n_cl, 0.0, T_WIND_OVER_T_R).unwrap(), 0.0);
        }
    }

    #[test]
    fn noise_cluster_rejects_singletons() {
        assert!(noise_cluster_probability(1, 5.0, T_WIND_OVER_T_R).is_err());
        assert!(signal_cluster_probability(1, 5.0, 540.0, 135.0).is_err());
    }

    #[test]
    fn noise_cluster_large_ncl_is_negligible() {
        let p = noise_cluster_probability(12, 5.0, T_WIND_OVER_T_R).unwrap();
        assert!(p < 1e-6, "p = {p}");
    }

    /// Monte Carlo oracle: n ~ Poisson(rate) uniform detections, full
    /// window scan via the max adjacent-run occupancy.
    fn mc_noise_cluster(n_cl: u32, rate: f64, trials: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut hits = 0usize;
        for _ in 0..trials {
            let n = sample_poisson(&mut rng, rate);
            if n < n_cl as usize {
                continue;
            }
            let mut t: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
            t.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mut best = 0usize;
            let mut j = 0usize;
            for i in 0..n {
                if j < i {
                    j = i;
                }
                while j < n && t[j] < t[i] + T_WIND_OVER_T_R {
                    j += 1;
                }
                best = best.max(j - i);
            }
            if best >= n_cl as usize {
                hits += 1;
            }
        }
        hits as f64 / trials as f64
    }

    fn sample_poisson(rng: &mut ChaCha8Rng, lambda: f64) -> usize {
        // inversion by sequential search; fine for the small rates used here
        let mut u: f64 = rng.gen();
        let mut p = (-lambda).exp();
        let mut k = 0usize;
        while u > p && k < 10_000 {
            u -= p;
            k += 1;
            p *= lambda / k as f64;
        }
        k
    }

    #[test]
    fn noise_cluster_matches_monte_carlo() {
        // mirrors the published setup: T_wind/T_r = 540 ps / 100 ns
        let p = noise_cluster_probability(2, 10.0, T_WIND_OVER_T_R).unwrap();
        let p_mc = mc_noise_cluster(2, 10.0, 100_000, 11);
        assert!((p - p_mc).abs() <= 0.02, "theory {p}, mc {p_mc}");
    }

    #[test]
    fn signal_cluster_window_mass() {
        // window of 2 T_p covers > 95% of the pulse mass
        let p_wind = centered_window_mass(540.0, 135.0);
        assert!((p_wind - 0.954).abs() < 1e-3, "p_wind = {p_wind}");
    }

    #[test]
    fn signal_cluster_saturates_at_high_rate() {
        let p = signal_cluster_probability(2, 10.0, 540.0, 135.0).unwrap();
        assert!((1.0 - p) < 1e-3, "p = {p}");
    }

    /// Monte Carlo signal-cluster frequency with a full window scan; the
    /// theory considers only the centered window, so it must be a lower
    /// bound up to MC noise.
    #[test]
    fn signal_cluster_is_lower_bound() {
        let sigma = 135.0;
        let t_wind = 540.0;
        let p = signal_cluster_probability(3, 0.5, t_wind, sigma).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let trials = 100_000;
        let mut hits = 0usize;
        for _ in 0..trials {
            let m = sample_poisson(&mut rng, 0.5);
            if m < 2 {
                continue;
            }
            let mut t: Vec<f64> = (0..m)
                .map(|_| {
                    // Box-Muller
                    let u1: f64 = rng.gen::<f64>().max(1e-12);
                    let u2: f64 = rng.gen();
                    sigma * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
                })
                .collect();
            t.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mut best = 0usize;
            let mut j = 0usize;
            for i in 0..m {
                if j < i {
                    j = i;
                }
                while j < m && t[j] < t[i] + t_wind {
                    j += 1;
                }
                best = best.max(j - i);
            }
            if best >= 3 {
                hits += 1;
            }
        }
        let p_mc = hits as f64 / trials as f64;
        assert!(p <= p_mc + 0.02, "theory {p} not a lower bound of mc {p_mc}");
    }

    #[test]
    fn noise_cluster_monotone_in_rate_and_ncl() {
        let rates = [0.5, 1.0, 2.0, 5.0, 10.0, 20.0];
        for n_cl in 2..7 {
            let mut prev = -1.0;
            for &rate in &rates {
                let p = noise_cluster_probability(n_cl, rate, T_WIND_OVER_T_R).unwrap();
                assert!(p >= prev - 1e-12, "not monotone in rate at n_cl {n_cl}");
                prev = p;
            }
        }
        for &rate in &rates {
            let mut prev = 2.0;
            for n_cl in 2..7 {
                let p = noise_cluster_probability(n_cl, rate, T_WIND_OVER_T_R).unwrap();
                assert!(p <= prev + 1e-12, "not monotone in n_cl at rate {rate}");
                prev = p;
            }
        }
    }

    #[test]
    fn signal_cluster_monotone_in_rate_and_window() {
        let mut prev = -1.0;
        for &rate in &[0.2, 0.5, 1.0, 2.0, 5.0, 10.0] {
            let p = signal_cluster_probability(3, rate, 540.0, 135.0).unwrap();
            assert!(p >= prev, "not monotone in rate");
            prev = p;
        }
        let mut prev = -1.0;
        for &t_wind in &[200.0, 400.0, 540.0, 800.0] {
            let p = signal_cluster_probability(3, 1.0, t_wind, 135.0).unwrap();
            assert!(p >= prev, "not monotone in window");
            prev = p;
        }
    }

    #[test]
    fn min_cluster_size_zero_noise() {
        assert_eq!(min_cluster_size(0.0, 0.01, T_WIND_OVER_T_R).unwrap(), 2);
    }

    #[test]
    fn min_cluster_size_brackets_threshold() {
        let n = min_cluster_size(10.0, 0.01, T_WIND_OVER_T_R).unwrap();
        assert!(noise_cluster_probability(n, 10.0, T_WIND_OVER_T_R).unwrap() < 0.01);
        assert!(noise_cluster_probability(n - 1, 10.0, T_WIND_OVER_T_R).unwrap() >= 0.01);
    }

    #[test]
    fn min_cluster_size_monotone() {
        let a = min_cluster_size(1.0, 0.01, T_WIND_OVER_T_R).unwrap();
        let b = min_cluster_size(20.0, 0.01, T_WIND_OVER_T_R).unwrap();
        assert!(a <= b);
    }

    #[test]
    fn ncl_table_bracketing_invariant() {
        let table = NclTable::build(0.01, T_WIND_OVER_T_R, 30.0).unwrap();
        let mut prev = 0u32;
        for &(rate, n_cl) in table.entries() {
            assert!(n_cl >= prev, "table rule not monotone");
            prev = n_cl;
            if rate == 0.0 {
                assert_eq!(n_cl, 2);
                continue;
            }
            assert!(noise_cluster_probability(n_cl, rate, T_WIND_OVER_T_R).unwrap() < 0.01);
            if n_cl > 2 {
                assert!(
                    noise_cluster_probability(n_cl - 1, rate, T_WIND_OVER_T_R).unwrap() >= 0.01
                );
            }
        }
    }

    #[test]
    fn ncl_table_lookup_quantizes_upward() {
        let table = NclTable::build(0.01, T_WIND_OVER_T_R, 30.0).unwrap();
        // 9.95 quantizes to 10.0
        assert_eq!(table.lookup(9.95).unwrap(), table.lookup(10.0).unwrap());
        // a rate above the prebuilt range still resolves
        assert!(table.lookup(45.0).unwrap() >= table.lookup(30.0).unwrap());
    }
}
