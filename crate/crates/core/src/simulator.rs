//! Monte Carlo model of the heralded-photon experiment.
//!
//! Each laser pulse may raise a heralding count; a fraction `xi` of those are
//! genuine. Every heralded gate is paired with the following, non-heralded
//! gate. Both see the same accidental background; the genuine gates also carry
//! the heralded photon, detected with probability `gamma`. The detected photon
//! number sets the amplitude through a Gaussian response per photon number.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::calibrate;
use crate::error::{domain, CalibError, Result};
use crate::histogram::{
    build_histogram, extract_counts, fit_mixture_with, AmplitudeHistogram, FitOptions,
    GaussianPeak, DEFAULT_BINS,
};
use crate::model::{
    estimate_xi, EfficiencyEstimate, EstimateSource, HeraldStats, PhotonNumberDistribution,
};

const HERALD_STREAM: u64 = 1;
const ON_STREAM: u64 = 2;
const OFF_STREAM: u64 = 3;
const PURITY_STREAM: u64 = 4;

/// Detector response to `n` photons.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakShape {
    pub center: f64,
    pub width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub gamma_true: f64,
    pub xi_true: f64,
    /// Probability that a laser pulse raises a heralding count.
    pub herald_prob: f64,
    /// Mean of the Poisson accidental photon number per gate.
    pub background_mean: f64,
    /// Explicit accidental photon-number law, overriding `background_mean`.
    #[serde(default)]
    pub background_table: Option<Vec<f64>>,
    /// Response per photon number. Beyond the list, centers continue the
    /// spacing of the last two entries and widths repeat the last one.
    pub peak_model: Vec<PeakShape>,
    pub n_pulses: u64,
    /// Laser period in microseconds.
    pub rep_period: f64,
    /// Detector pulse duration in microseconds.
    pub detector_recovery: f64,
    pub seed: u64,
}

impl ExperimentConfig {
    /// Settings of a TES calibration run: 40 kHz pulses, 10.4 us detector
    /// pulses, five hours of data (about 11 million heralds) and a background
    /// whose vacuum probability matches the reference background counts.
    pub fn reference_scale() -> Self {
        let q0 = 5.103e6 / (5.103e6 + 1.4600e4 + 23.9);
        Self {
            gamma_true: 0.00709,
            xi_true: 0.98794,
            herald_prob: 0.015_28,
            background_mean: -f64::ln(q0),
            background_table: None,
            peak_model: vec![
                PeakShape {
                    center: 0.0,
                    width: 0.09,
                },
                PeakShape {
                    center: 1.0,
                    width: 0.11,
                },
                PeakShape {
                    center: 2.0,
                    width: 0.12,
                },
            ],
            n_pulses: 720_000_000,
            rep_period: 25.0,
            detector_recovery: 10.4,
            seed: 1,
        }
    }

    /// Sets `n_pulses` so that about `heralds` heralding counts are expected.
    pub fn with_expected_heralds(mut self, heralds: f64) -> Self {
        self.n_pulses = (heralds / self.herald_prob).round() as u64;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("gamma_true", self.gamma_true),
            ("xi_true", self.xi_true),
            ("herald_prob", self.herald_prob),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(CalibError::Config(format!("{name} = {v} outside [0, 1]")));
            }
        }
        if !(self.background_mean >= 0.0 && self.background_mean.is_finite()) {
            return Err(CalibError::Config(format!(
                "background_mean = {} must be finite and >= 0",
                self.background_mean
            )));
        }
        if let Some(t) = &self.background_table {
            PhotonNumberDistribution::from_weights(t)
                .map_err(|e| CalibError::Config(format!("background_table: {e}")))?;
        }
        if !(self.rep_period > 0.0) {
            return Err(CalibError::Config(format!(
                "rep_period = {} must be positive",
                self.rep_period
            )));
        }
        if !(self.detector_recovery >= 0.0) {
            return Err(CalibError::Config("detector_recovery must be >= 0".into()));
        }
        if self.peak_model.len() < 2 {
            return Err(CalibError::Config(
                "peak_model needs at least two photon numbers".into(),
            ));
        }
        if self
            .peak_model
            .iter()
            .any(|p| !(p.width > 0.0 && p.center.is_finite()))
        {
            return Err(CalibError::Config("peak widths must be positive".into()));
        }
        Ok(())
    }

    /// Accidental photon-number law per gate.
    pub fn background(&self) -> Result<PhotonNumberDistribution> {
        match &self.background_table {
            Some(t) => PhotonNumberDistribution::from_weights(t),
            None => {
                // truncate once the Poisson tail drops below double precision
                let mu = self.background_mean;
                let mut term = (-mu).exp();
                let mut max_n = 1;
                while max_n < 200 && ((max_n as f64) < mu || term > 1e-18) {
                    max_n += 1;
                    term *= mu / max_n as f64;
                }
                PhotonNumberDistribution::poisson(mu, max_n)
            }
        }
    }

    pub fn peak_shape(&self, n: usize) -> PeakShape {
        let m = self.peak_model.len();
        if n < m {
            return self.peak_model[n];
        }
        let last = self.peak_model[m - 1];
        let spacing = last.center - self.peak_model[m - 2].center;
        PeakShape {
            center: last.center + spacing * (n - (m - 1)) as f64,
            width: last.width,
        }
    }
}

/// Outcome of the pile-up guard.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PileupReport {
    pub rep_period: f64,
    pub detector_recovery: f64,
    pub margin: f64,
    pub pass: bool,
}

/// The laser period must be at least the detector pulse duration, otherwise
/// photons land on the tail of the previous pulse.
pub fn check_pileup(config: &ExperimentConfig) -> PileupReport {
    PileupReport {
        rep_period: config.rep_period,
        detector_recovery: config.detector_recovery,
        margin: config.rep_period - config.detector_recovery,
        pass: config.rep_period >= config.detector_recovery,
    }
}

/// Ground-truth counters of one simulated run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tallies {
    pub pulses: u64,
    pub heralds: u64,
    pub true_heralds: u64,
    pub false_heralds: u64,
    pub heralded_detections: u64,
    pub heralded_misses: u64,
    pub on_background_photons: u64,
    pub off_background_photons: u64,
    /// Detected photon number per heralded gate, indexed by photon number.
    pub on_photon_numbers: Vec<u64>,
    /// Detected photon number per paired non-heralded gate.
    pub off_photon_numbers: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawRun {
    pub on_amplitudes: Vec<f64>,
    pub off_amplitudes: Vec<f64>,
    pub tallies: Tallies,
}

struct BackgroundSampler {
    cdf: Vec<f64>,
}

impl BackgroundSampler {
    fn new(d: &PhotonNumberDistribution) -> Self {
        let mut acc = 0.0;
        let cdf = d
            .probs()
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        Self { cdf }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        self.cdf
            .iter()
            .position(|&c| u < c)
            .unwrap_or(self.cdf.len() - 1)
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn bump(hist: &mut Vec<u64>, n: usize) {
    if hist.len() <= n {
        hist.resize(n + 1, 0);
    }
    hist[n] += 1;
}

/// Simulates one run. Identical configurations give identical runs.
pub fn simulate_run(config: &ExperimentConfig) -> Result<RawRun> {
    config.validate()?;
    let pileup = check_pileup(config);
    if !pileup.pass {
        return Err(CalibError::Config(format!(
            "pile-up check failed: rep_period {} us < detector_recovery {} us",
            pileup.rep_period, pileup.detector_recovery
        )));
    }
    let sampler = BackgroundSampler::new(&config.background()?);

    let mut herald_rng = stream(config.seed, HERALD_STREAM);
    let mut on_rng = stream(config.seed, ON_STREAM);
    let mut off_rng = stream(config.seed, OFF_STREAM);

    let heralds = Binomial::new(config.n_pulses, config.herald_prob)
        .map_err(|e| CalibError::Config(e.to_string()))?
        .sample(&mut herald_rng);

    let mut tallies = Tallies {
        pulses: config.n_pulses,
        heralds,
        ..Tallies::default()
    };
    let mut on_amplitudes = Vec::with_capacity(heralds as usize);
    let mut off_amplitudes = Vec::with_capacity(heralds as usize);

    let amplitude = |rng: &mut ChaCha8Rng, n: usize| {
        let shape = config.peak_shape(n);
        let z: f64 = rng.sample(StandardNormal);
        shape.center + shape.width * z
    };

    for _ in 0..heralds {
        let genuine = herald_rng.random::<f64>() < config.xi_true;

        let background = sampler.sample(&mut on_rng);
        tallies.on_background_photons += background as u64;
        let mut n = background;
        if genuine {
            tallies.true_heralds += 1;
            if on_rng.random::<f64>() < config.gamma_true {
                tallies.heralded_detections += 1;
                n += 1;
            } else {
                tallies.heralded_misses += 1;
            }
        } else {
            tallies.false_heralds += 1;
        }
        bump(&mut tallies.on_photon_numbers, n);
        on_amplitudes.push(amplitude(&mut on_rng, n));

        let n_off = sampler.sample(&mut off_rng);
        tallies.off_background_photons += n_off as u64;
        bump(&mut tallies.off_photon_numbers, n_off);
        off_amplitudes.push(amplitude(&mut off_rng, n_off));
    }

    Ok(RawRun {
        on_amplitudes,
        off_amplitudes,
        tallies,
    })
}

/// Per-pulse dark/stray herald probability that makes the expected purity
/// `1 - E[n_off]/E[n_on]` equal `xi` for a down-conversion herald
/// probability `herald_prob`.
pub fn dark_rate_for_purity(herald_prob: f64, xi: f64) -> f64 {
    let false_frac = 1.0 - xi;
    let denom = 1.0 - false_frac * (1.0 - herald_prob);
    if denom <= 0.0 {
        1.0
    } else {
        (false_frac * herald_prob / denom).clamp(0.0, 1.0)
    }
}

/// Heralding counts with the pump on (down-conversion plus dark/stray
/// counts) and with the pump rotated away (dark/stray counts only), over
/// `n_pulses` pulses each.
pub fn simulate_herald_stats(config: &ExperimentConfig, dark_rate: f64) -> Result<HeraldStats> {
    config.validate()?;
    if !(0.0..=1.0).contains(&dark_rate) {
        return Err(domain(format!("dark_rate {dark_rate} outside [0, 1]")));
    }
    let mut rng = stream(config.seed, PURITY_STREAM);
    let p_on = 1.0 - (1.0 - config.herald_prob) * (1.0 - dark_rate);
    let binom =
        |p: f64| Binomial::new(config.n_pulses, p).map_err(|e| CalibError::Config(e.to_string()));
    let n_on = binom(p_on)?.sample(&mut rng) as f64;
    let n_off = binom(dark_rate)?.sample(&mut rng) as f64;
    if n_on == 0.0 {
        return Err(domain("no heralding counts with the pump on"));
    }
    // a statistical fluctuation can push n_off past n_on when the source is dark
    HeraldStats::poisson(n_on, n_off.min(n_on))
}

/// Settings for the end-to-end closure pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosureOptions {
    pub bins: usize,
    pub n_peaks: usize,
    /// Worker threads; `None` uses the available parallelism. Left out of
    /// reports since results do not depend on it.
    #[serde(skip)]
    pub jobs: Option<usize>,
    /// Seed the fit from the configured detector response instead of the
    /// automatic local-maxima search.
    pub init_from_config: bool,
}

impl Default for ClosureOptions {
    fn default() -> Self {
        Self {
            bins: DEFAULT_BINS,
            n_peaks: 3,
            jobs: None,
            init_from_config: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub heralds: u64,
    pub estimates: Vec<EfficiencyEstimate>,
    pub on_fit_ratio: Option<f64>,
    pub off_fit_ratio: Option<f64>,
    /// Set when a pipeline stage failed for this seed.
    pub error: Option<String>,
    /// Per-estimator failures that did not stop the pipeline.
    pub estimator_failures: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub source: EstimateSource,
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation across seeds.
    pub spread: f64,
    pub standard_error: f64,
    pub mean_claimed_uncertainty: f64,
    pub bias: f64,
    pub pull_mean: f64,
    pub pull_variance: f64,
    pub out_of_range: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosureReport {
    pub config: ExperimentConfig,
    pub options: ClosureOptions,
    pub gamma_true: f64,
    pub n_seeds: usize,
    pub completed: usize,
    pub summaries: Vec<EstimatorSummary>,
    pub seeds: Vec<SeedOutcome>,
}

impl ClosureReport {
    pub fn summary(&self, source: EstimateSource) -> Option<&EstimatorSummary> {
        self.summaries.iter().find(|s| s.source == source)
    }

    pub fn completion_fraction(&self) -> f64 {
        self.completed as f64 / self.n_seeds as f64
    }
}

/// Seed of the `k`-th closure run, derived from the base seed.
pub fn derived_seed(base: u64, k: usize) -> u64 {
    // splitmix64 finalizer
    let mut z = base.wrapping_add((k as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn init_from_response(
    config: &ExperimentConfig,
    hist: &AmplitudeHistogram,
    n_peaks: usize,
) -> Vec<GaussianPeak> {
    let centers = hist.centers();
    let width = hist.bin_width();
    (0..n_peaks)
        .map(|n| {
            let shape = config.peak_shape(n);
            let k = (((shape.center - hist.edges()[0]) / width).floor().max(0.0) as usize)
                .min(centers.len() - 1);
            GaussianPeak::new(hist.counts()[k].max(0.5), shape.center, shape.width)
        })
        .collect()
}

/// Simulation, histogramming, fitting and calibration for one seed.
pub fn run_pipeline(config: &ExperimentConfig, options: &ClosureOptions) -> Result<SeedOutcome> {
    let run = simulate_run(config)?;
    let herald = simulate_herald_stats(
        config,
        dark_rate_for_purity(config.herald_prob, config.xi_true),
    )?;
    let xi = estimate_xi(&herald)?;

    let lo = run
        .on_amplitudes
        .iter()
        .chain(&run.off_amplitudes)
        .copied()
        .fold(f64::INFINITY, f64::min);
    let hi = run
        .on_amplitudes
        .iter()
        .chain(&run.off_amplitudes)
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let range = (hi > lo).then_some((lo, hi));
    let h_on = build_histogram(&run.on_amplitudes, options.bins, range)?;
    let h_off = build_histogram(&run.off_amplitudes, options.bins, range)?;

    let fit = |h: &AmplitudeHistogram| {
        let mut opts = FitOptions::new(options.n_peaks);
        if options.init_from_config {
            opts.init = Some(init_from_response(config, h, options.n_peaks));
        }
        fit_mixture_with(h, &opts)
    };
    let f_on = fit(&h_on)?;
    let f_off = fit(&h_off)?;
    let c_on = extract_counts(&f_on, h_on.bin_width())?;
    let c_off = extract_counts(&f_off, h_off.bin_width())?;
    let result = calibrate(&c_on, &c_off, &xi, None)?;

    Ok(SeedOutcome {
        seed: config.seed,
        heralds: run.tallies.heralds,
        estimates: result.estimates,
        on_fit_ratio: f_on.quality.map(|q| q.ratio),
        off_fit_ratio: f_off.quality.map(|q| q.ratio),
        error: None,
        estimator_failures: result.failures.iter().map(|f| f.message.clone()).collect(),
    })
}

fn summarize(
    source: EstimateSource,
    gamma_true: f64,
    seeds: &[SeedOutcome],
) -> Option<EstimatorSummary> {
    let values: Vec<(f64, f64, bool)> = seeds
        .iter()
        .filter(|s| s.error.is_none())
        .filter_map(|s| s.estimates.iter().find(|e| e.source == source))
        .filter_map(|e| e.u_gamma.map(|u| (e.gamma, u, e.out_of_range)))
        .collect();
    let n = values.len();
    if n == 0 {
        return None;
    }
    let nf = n as f64;
    let mean = values.iter().map(|v| v.0).sum::<f64>() / nf;
    let spread = if n > 1 {
        (values.iter().map(|v| (v.0 - mean).powi(2)).sum::<f64>() / (nf - 1.0)).sqrt()
    } else {
        0.0
    };
    let pulls: Vec<f64> = values
        .iter()
        .filter(|v| v.1 > 0.0)
        .map(|v| (v.0 - gamma_true) / v.1)
        .collect();
    let np = pulls.len() as f64;
    let pull_mean = if np > 0.0 {
        pulls.iter().sum::<f64>() / np
    } else {
        f64::NAN
    };
    let pull_variance = if np > 1.0 {
        pulls.iter().map(|p| (p - pull_mean).powi(2)).sum::<f64>() / (np - 1.0)
    } else {
        f64::NAN
    };
    Some(EstimatorSummary {
        source,
        n,
        mean,
        spread,
        standard_error: spread / nf.sqrt(),
        mean_claimed_uncertainty: values.iter().map(|v| v.1).sum::<f64>() / nf,
        bias: mean - gamma_true,
        pull_mean,
        pull_variance,
        out_of_range: values.iter().filter(|v| v.2).count(),
    })
}

/// Runs the pipeline for `n_seeds` derived seeds and summarizes bias,
/// spread and pulls per estimator. Stage failures are recorded per seed.
pub fn closure_test(
    config: &ExperimentConfig,
    n_seeds: usize,
    options: &ClosureOptions,
) -> Result<ClosureReport> {
    if n_seeds < 2 {
        return Err(domain(format!(
            "closure needs at least 2 seeds, got {n_seeds}"
        )));
    }
    config.validate()?;
    let run_all = || -> Vec<SeedOutcome> {
        (0..n_seeds)
            .into_par_iter()
            .map(|k| {
                let cfg = config.clone().with_seed(derived_seed(config.seed, k));
                run_pipeline(&cfg, options).unwrap_or_else(|e| SeedOutcome {
                    seed: cfg.seed,
                    heralds: 0,
                    estimates: Vec::new(),
                    on_fit_ratio: None,
                    off_fit_ratio: None,
                    error: Some(e.to_string()),
                    estimator_failures: Vec::new(),
                })
            })
            .collect()
    };
    let seeds = match options.jobs {
        Some(jobs) => rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build()
            .map_err(|e| CalibError::Config(e.to_string()))?
            .install(run_all),
        None => run_all(),
    };

    let sources = (0..options.n_peaks)
        .map(EstimateSource::PhotonNumber)
        .chain(std::iter::once(EstimateSource::Klyshko));
    let summaries = sources
        .filter_map(|s| summarize(s, config.gamma_true, &seeds))
        .collect();
    Ok(ClosureReport {
        config: config.clone(),
        options: options.clone(),
        gamma_true: config.gamma_true,
        n_seeds,
        completed: seeds.iter().filter(|s| s.error.is_none()).count(),
        summaries,
        seeds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentConfig {
        ExperimentConfig {
            gamma_true: 0.3,
            xi_true: 0.9,
            herald_prob: 0.1,
            background_mean: 0.2,
            background_table: None,
            peak_model: vec![
                PeakShape {
                    center: 0.0,
                    width: 0.1,
                },
                PeakShape {
                    center: 1.0,
                    width: 0.12,
                },
            ],
            n_pulses: 20_000,
            rep_period: 25.0,
            detector_recovery: 10.4,
            seed: 7,
        }
    }

    #[test]
    fn pileup_guard() {
        let mut c = small();
        let r = check_pileup(&c);
        assert!(r.pass);
        assert!((r.margin - 14.6).abs() < 1e-12);
        c.rep_period = 5.0;
        assert!(!check_pileup(&c).pass);
        assert!(matches!(simulate_run(&c), Err(CalibError::Config(_))));
        c.rep_period = 10.4;
        let r = check_pileup(&c);
        assert!(r.pass);
        assert_eq!(r.margin, 0.0);
    }

    #[test]
    fn peak_shapes_extrapolate_linearly() {
        let c = small();
        let s = c.peak_shape(4);
        assert!((s.center - 4.0).abs() < 1e-12);
        assert_eq!(s.width, 0.12);
    }

    #[test]
    fn config_validation() {
        let mut c = small();
        c.xi_true = 1.5;
        assert!(c.validate().is_err());
        let mut c = small();
        c.background_mean = -1.0;
        assert!(c.validate().is_err());
        let mut c = small();
        c.peak_model.truncate(1);
        assert!(c.validate().is_err());
    }

    #[test]
    fn tallies_are_consistent() {
        let run = simulate_run(&small()).unwrap();
        let t = &run.tallies;
        assert_eq!(t.heralded_detections + t.heralded_misses, t.true_heralds);
        assert_eq!(t.true_heralds + t.false_heralds, t.heralds);
        assert!(t.heralded_detections <= t.true_heralds);
        assert_eq!(run.on_amplitudes.len() as u64, t.heralds);
        assert_eq!(run.off_amplitudes.len() as u64, t.heralds);
        assert_eq!(t.on_photon_numbers.iter().sum::<u64>(), t.heralds);
        assert_eq!(t.off_photon_numbers.iter().sum::<u64>(), t.heralds);
    }

    #[test]
    fn dark_source_yields_vacuum_only() {
        let mut c = small();
        c.gamma_true = 0.0;
        c.background_mean = 0.0;
        let run = simulate_run(&c).unwrap();
        assert_eq!(run.tallies.on_photon_numbers, vec![run.tallies.heralds]);
        assert_eq!(run.tallies.off_photon_numbers, vec![run.tallies.heralds]);
        assert!(run.on_amplitudes.iter().all(|a| a.abs() < 0.1 * 7.0));
    }

    #[test]
    fn runs_are_deterministic() {
        let a = simulate_run(&small()).unwrap();
        let b = simulate_run(&small()).unwrap();
        assert_eq!(a, b);
        let c = simulate_run(&small().with_seed(8)).unwrap();
        assert_ne!(a.on_amplitudes, c.on_amplitudes);
    }

    #[test]
    fn herald_stats_edge_cases() {
        let c = small();
        let h = simulate_herald_stats(&c, 0.0).unwrap();
        assert_eq!(h.n_off, 0.0);
        assert_eq!(estimate_xi(&h).unwrap().xi, 1.0);
        assert!(simulate_herald_stats(&c, 1.5).is_err());
    }

    #[test]
    fn dark_rate_reproduces_purity() {
        let p = 0.0153;
        let d = dark_rate_for_purity(p, 0.98794);
        let on = 1.0 - (1.0 - p) * (1.0 - d);
        assert!((1.0 - d / on - 0.98794).abs() < 1e-12);
        assert_eq!(dark_rate_for_purity(p, 1.0), 0.0);
    }

    #[test]
    fn background_table_overrides_poisson() {
        let mut c = small();
        c.background_table = Some(vec![0.5, 0.5]);
        assert_eq!(c.background().unwrap().probs(), &[0.5, 0.5]);
        c.background_table = None;
        let b = c.background().unwrap();
        assert!((b.prob(0) - (-0.2f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn derived_seeds_differ() {
        let s: Vec<u64> = (0..10).map(|k| derived_seed(3, k)).collect();
        let mut d = s.clone();
        d.sort_unstable();
        d.dedup();
        assert_eq!(d.len(), 10);
    }

    #[test]
    fn closure_needs_two_seeds() {
        assert!(closure_test(&small(), 1, &ClosureOptions::default()).is_err());
    }
}
