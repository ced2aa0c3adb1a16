//! Pulse-amplitude histograms and their Gaussian-mixture fits.
//!
//! Each photon number produces a Gaussian peak in the amplitude histogram.
//! Fitting the sum of peaks and integrating each one turns a histogram into
//! per-photon-number event counts.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{domain, CalibError, Result};
use crate::lm::{self, LeastSquaresProblem, LmSettings};
use crate::model::CountVector;

/// Default number of bins spanning the observed amplitude range.
pub const DEFAULT_BINS: usize = 200;
/// Fits below this ratio of reduced chi-square to reduced total sum of
/// squares count as good.
pub const GOOD_FIT_RATIO: f64 = 1e-4;

/// Event count below which a peak's center and width are held fixed.
pub const DEFAULT_MIN_FREE_COUNT: f64 = 100.0;

const UNIFORM_TOL: f64 = 1e-9;
const SQRT_TAU: f64 = 2.506_628_274_631_000_5;

/// Fixed-width binned amplitudes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmplitudeHistogram {
    edges: Vec<f64>,
    counts: Vec<f64>,
    /// Samples below the first edge.
    pub underflow: u64,
    /// Samples above the last edge.
    pub overflow: u64,
}

impl AmplitudeHistogram {
    /// Histogram from explicit edges (length `counts.len() + 1`).
    pub fn from_edges(edges: Vec<f64>, counts: Vec<f64>) -> Result<Self> {
        if counts.len() < 2 || edges.len() != counts.len() + 1 {
            return Err(domain(format!(
                "need n >= 2 bins and n + 1 edges, got {} bins and {} edges",
                counts.len(),
                edges.len()
            )));
        }
        if let Some(c) = counts.iter().find(|c| !(c.is_finite() && **c >= 0.0)) {
            return Err(domain(format!("bin count {c} must be finite and >= 0")));
        }
        let n = counts.len();
        let width = (edges[n] - edges[0]) / n as f64;
        if !(width > 0.0 && width.is_finite()) {
            return Err(domain("bin edges must be strictly increasing"));
        }
        for (k, pair) in edges.windows(2).enumerate() {
            let w = pair[1] - pair[0];
            if !(w > 0.0) {
                return Err(domain(format!("bin edges not increasing at bin {k}")));
            }
            if ((w - width) / width).abs() > UNIFORM_TOL {
                return Err(domain(format!(
                    "bin {k} has width {w}, expected uniform width {width}"
                )));
            }
        }
        Ok(Self {
            edges,
            counts,
            underflow: 0,
            overflow: 0,
        })
    }

    /// Histogram from uniformly spaced bin centers.
    pub fn from_centers(centers: &[f64], counts: Vec<f64>) -> Result<Self> {
        if centers.len() != counts.len() {
            return Err(domain("centers and counts differ in length"));
        }
        if centers.len() < 2 {
            return Err(domain("need at least two bins"));
        }
        let n = centers.len();
        let width = (centers[n - 1] - centers[0]) / (n - 1) as f64;
        if !(width > 0.0 && width.is_finite()) {
            return Err(domain("bin centers must be strictly increasing"));
        }
        for (k, c) in centers.iter().enumerate() {
            let expected = centers[0] + width * k as f64;
            if ((c - expected) / width).abs() > UNIFORM_TOL * n as f64 {
                return Err(domain(format!(
                    "bin center {c} at index {k} breaks uniform spacing {width}"
                )));
            }
        }
        let lo = centers[0] - 0.5 * width;
        let edges = (0..=n).map(|k| lo + width * k as f64).collect();
        Self::from_edges(edges, counts)
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn counts(&self) -> &[f64] {
        &self.counts
    }

    pub fn n_bins(&self) -> usize {
        self.counts.len()
    }

    pub fn bin_width(&self) -> f64 {
        (self.edges[self.counts.len()] - self.edges[0]) / self.counts.len() as f64
    }

    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|e| 0.5 * (e[0] + e[1])).collect()
    }

    /// Sum of in-range bin contents.
    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }

    pub fn nonempty_bins(&self) -> usize {
        self.counts.iter().filter(|c| **c > 0.0).count()
    }

    /// Same counts on edges multiplied by `k`.
    pub fn rescaled(&self, k: f64) -> Result<Self> {
        if !(k > 0.0) {
            return Err(domain("scale factor must be positive"));
        }
        let mut h = Self::from_edges(
            self.edges.iter().map(|e| e * k).collect(),
            self.counts.clone(),
        )?;
        h.underflow = self.underflow;
        h.overflow = self.overflow;
        Ok(h)
    }
}

/// Bins `samples` into `n_bins` fixed-width bins over `range`, or over the
/// observed span when no range is given.
pub fn build_histogram(
    samples: &[f64],
    n_bins: usize,
    range: Option<(f64, f64)>,
) -> Result<AmplitudeHistogram> {
    if n_bins < 2 {
        return Err(domain(format!("need at least 2 bins, got {n_bins}")));
    }
    if samples.is_empty() {
        return Err(domain("no samples to bin"));
    }
    if samples.iter().any(|s| !s.is_finite()) {
        return Err(domain("samples contain a non-finite value"));
    }
    let (lo, hi) = match range {
        Some((lo, hi)) => {
            if !(hi > lo) {
                return Err(domain(format!("empty range [{lo}, {hi}]")));
            }
            (lo, hi)
        }
        None => {
            let lo = samples.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if hi > lo {
                (lo, hi)
            } else {
                (lo - 0.5, hi + 0.5)
            }
        }
    };
    let width = (hi - lo) / n_bins as f64;
    let mut counts = vec![0.0; n_bins];
    let (mut underflow, mut overflow) = (0u64, 0u64);
    for &s in samples {
        if s < lo {
            underflow += 1;
        } else if s > hi {
            overflow += 1;
        } else {
            let k = (((s - lo) / width) as usize).min(n_bins - 1);
            counts[k] += 1.0;
        }
    }
    if counts.iter().all(|c| *c == 0.0) {
        return Err(domain("no samples inside the histogram range"));
    }
    let edges = (0..=n_bins)
        .map(|k| lo + (hi - lo) * (k as f64 / n_bins as f64))
        .collect();
    let mut hist = AmplitudeHistogram::from_edges(edges, counts)?;
    hist.underflow = underflow;
    hist.overflow = overflow;
    Ok(hist)
}

/// One Gaussian component: height in counts per bin, center and width in
/// amplitude units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianPeak {
    pub amplitude: f64,
    pub center: f64,
    pub sigma: f64,
    #[serde(default)]
    pub u_amplitude: f64,
    #[serde(default)]
    pub u_center: f64,
    #[serde(default)]
    pub u_sigma: f64,
}

impl GaussianPeak {
    pub fn new(amplitude: f64, center: f64, sigma: f64) -> Self {
        Self {
            amplitude,
            center,
            sigma,
            u_amplitude: 0.0,
            u_center: 0.0,
            u_sigma: 0.0,
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let z = (x - self.center) / self.sigma;
        self.amplitude * (-0.5 * z * z).exp()
    }

    /// Integral of the peak, in counts times amplitude units.
    pub fn area(&self) -> f64 {
        self.amplitude * self.sigma * SQRT_TAU
    }
}

/// Goodness-of-fit summary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitQuality {
    pub reduced_chi_square: f64,
    pub reduced_total_sum_of_squares: f64,
    pub ratio: f64,
    pub degrees_of_freedom: usize,
}

impl FitQuality {
    pub fn is_good(&self) -> bool {
        self.ratio < GOOD_FIT_RATIO
    }
}

/// Per-bin variance model used by the least-squares fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitWeighting {
    /// Every bin weighted equally; covariance scaled by the residual variance.
    Uniform,
    /// Poisson variances taken from the fitted model (floored at one count),
    /// iterated to a fixed point.
    #[default]
    Poisson,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub n_peaks: usize,
    /// Explicit starting peaks. Overrides automatic seeding.
    pub init: Option<Vec<GaussianPeak>>,
    pub weighting: FitWeighting,
    /// Adds a constant baseline to the model.
    pub with_offset: bool,
    pub max_iterations: usize,
    pub tolerance: f64,
    /// Minimum distance in bins between automatically seeded peaks.
    pub min_separation_bins: usize,
    /// Peaks holding fewer events than this near their starting position
    /// keep the starting center and width; only the amplitude is fitted.
    pub min_free_count: f64,
}

impl FitOptions {
    pub fn new(n_peaks: usize) -> Self {
        Self {
            n_peaks,
            init: None,
            weighting: FitWeighting::default(),
            with_offset: false,
            max_iterations: 200,
            tolerance: 1e-10,
            min_separation_bins: 3,
            min_free_count: DEFAULT_MIN_FREE_COUNT,
        }
    }

    pub fn with_init(mut self, init: Vec<GaussianPeak>) -> Self {
        self.init = Some(init);
        self
    }
}

/// Result of a mixture fit. Peaks are sorted by center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureFit {
    pub peaks: Vec<GaussianPeak>,
    /// Baseline level when the offset term is enabled.
    pub offset: Option<f64>,
    /// Parameter covariance, ordered `(A, x, sigma)` per peak, then offset.
    pub covariance: Vec<Vec<f64>>,
    pub quality: Option<FitQuality>,
    pub weighting: FitWeighting,
    pub iterations: usize,
}

impl MixtureFit {
    pub fn eval(&self, x: f64) -> f64 {
        self.peaks.iter().map(|p| p.eval(x)).sum::<f64>() + self.offset.unwrap_or(0.0)
    }

    pub fn n_params(&self) -> usize {
        3 * self.peaks.len() + usize::from(self.offset.is_some())
    }
}

/// Works on the free parameters only; fixed ones are taken from `template`.
struct MixtureProblem<'a> {
    x: &'a [f64],
    y: &'a [f64],
    sqrt_w: Vec<f64>,
    n_peaks: usize,
    with_offset: bool,
    min_sigma: f64,
    /// Allowed center interval per peak.
    windows: Vec<(f64, f64)>,
    template: DVector<f64>,
    free: Vec<usize>,
}

impl MixtureProblem<'_> {
    fn expand(&self, free: &DVector<f64>) -> DVector<f64> {
        let mut p = self.template.clone();
        for (v, &k) in free.iter().zip(&self.free) {
            p[k] = *v;
        }
        p
    }

    fn restrict(&self, full: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.free.len(), self.free.iter().map(|&k| full[k]))
    }

    fn full_jacobian(&self, p: &DVector<f64>) -> DMatrix<f64> {
        let mut j = DMatrix::zeros(self.x.len(), p.len());
        for (row, (&x, &w)) in self.x.iter().zip(&self.sqrt_w).enumerate() {
            for k in 0..self.n_peaks {
                let (a, c, s) = (p[3 * k], p[3 * k + 1], p[3 * k + 2]);
                let d = x - c;
                let e = (-0.5 * d * d / (s * s)).exp();
                let g = a * e;
                j[(row, 3 * k)] = -w * e;
                j[(row, 3 * k + 1)] = -w * g * d / (s * s);
                j[(row, 3 * k + 2)] = -w * g * d * d / (s * s * s);
            }
            if self.with_offset {
                j[(row, 3 * self.n_peaks)] = -w;
            }
        }
        j
    }

    fn model(&self, p: &DVector<f64>, x: f64) -> f64 {
        let mut m = if self.with_offset {
            p[3 * self.n_peaks]
        } else {
            0.0
        };
        for k in 0..self.n_peaks {
            let (a, c, s) = (p[3 * k], p[3 * k + 1], p[3 * k + 2]);
            let z = (x - c) / s;
            m += a * (-0.5 * z * z).exp();
        }
        m
    }
}

impl LeastSquaresProblem for MixtureProblem<'_> {
    fn residuals(&self, free: &DVector<f64>) -> DVector<f64> {
        let p = self.expand(free);
        DVector::from_iterator(
            self.x.len(),
            self.x
                .iter()
                .zip(self.y)
                .zip(&self.sqrt_w)
                .map(|((&x, &y), &w)| w * (y - self.model(&p, x))),
        )
    }

    fn jacobian(&self, free: &DVector<f64>) -> DMatrix<f64> {
        self.full_jacobian(&self.expand(free))
            .select_columns(&self.free)
    }

    fn project(&self, free: &mut DVector<f64>) {
        for (v, &k) in free.iter_mut().zip(&self.free) {
            if k >= 3 * self.n_peaks {
                continue;
            }
            let peak = k / 3;
            *v = match k % 3 {
                0 => v.max(0.0),
                1 => v.clamp(self.windows[peak].0, self.windows[peak].1),
                _ => v.max(self.min_sigma),
            };
        }
    }
}

/// Events within two widths of `peak`'s center, corrected for the tails.
fn content_near(hist: &AmplitudeHistogram, peak: &GaussianPeak) -> f64 {
    let inside: f64 = hist
        .centers()
        .iter()
        .zip(hist.counts())
        .filter(|(x, _)| (*x - peak.center).abs() <= 2.0 * peak.sigma)
        .map(|(_, n)| n)
        .sum();
    inside / 0.954_499_736_103_641_6
}

fn moving_average(values: &[f64], half: usize) -> Vec<f64> {
    let n = values.len();
    (0..n)
        .map(|k| {
            let lo = k.saturating_sub(half);
            let hi = (k + half).min(n - 1);
            values[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect()
}

/// Seeds `n_peaks` Gaussians at the tallest local maxima of the smoothed
/// histogram that are at least `min_separation` bins apart.
pub fn seed_peaks(
    hist: &AmplitudeHistogram,
    n_peaks: usize,
    min_separation: usize,
) -> Result<Vec<GaussianPeak>> {
    let sep = min_separation.max(1);
    let smooth = moving_average(hist.counts(), sep);
    let n = smooth.len();
    let mut candidates: Vec<usize> = (0..n)
        .filter(|&k| {
            let lo = k.saturating_sub(sep);
            let hi = (k + sep).min(n - 1);
            smooth[k] > 0.0
                && (lo..=hi).all(|j| smooth[j] < smooth[k] || (smooth[j] == smooth[k] && j >= k))
        })
        .collect();
    candidates.sort_by(|&a, &b| smooth[b].total_cmp(&smooth[a]).then(a.cmp(&b)));

    let mut chosen: Vec<usize> = Vec::with_capacity(n_peaks);
    for k in candidates {
        if chosen.iter().all(|&c| c.abs_diff(k) >= sep) {
            chosen.push(k);
            if chosen.len() == n_peaks {
                break;
            }
        }
    }
    if chosen.len() < n_peaks {
        return Err(CalibError::Initialization {
            found: chosen.len(),
            needed: n_peaks,
        });
    }
    chosen.sort_unstable();

    let width = hist.bin_width();
    let centers = hist.centers();
    Ok(chosen
        .into_iter()
        .map(|k| {
            let half = 0.5 * smooth[k];
            let left = (0..k)
                .rev()
                .find(|&j| smooth[j] < half)
                .map_or(k, |j| k - j);
            let right = (k + 1..n)
                .find(|&j| smooth[j] < half)
                .map_or(n - 1 - k, |j| j - k);
            let hwhm = 0.5 * (left + right) as f64 * width;
            let sigma = (hwhm / 1.177_410_022_515_474_7).max(width);
            GaussianPeak::new(hist.counts()[k].max(smooth[k]), centers[k], sigma)
        })
        .collect())
}

fn pack(peaks: &[GaussianPeak], offset: Option<f64>) -> DVector<f64> {
    let mut v: Vec<f64> = peaks
        .iter()
        .flat_map(|p| [p.amplitude, p.center, p.sigma])
        .collect();
    if let Some(o) = offset {
        v.push(o);
    }
    DVector::from_vec(v)
}

fn poisson_sqrt_weights(variances: impl Iterator<Item = f64>) -> Vec<f64> {
    variances.map(|v| 1.0 / v.max(1.0).sqrt()).collect()
}

fn invert_normal(j: &DMatrix<f64>) -> DMatrix<f64> {
    let normal = j.transpose() * j;
    let inv = match normal.clone().cholesky() {
        Some(ch) => ch.inverse(),
        None => normal
            .pseudo_inverse(1e-14)
            .unwrap_or_else(|_| DMatrix::zeros(j.ncols(), j.ncols())),
    };
    (&inv + inv.transpose()) * 0.5
}

const MAX_REWEIGHTS: usize = 30;
const REWEIGHT_TOL: f64 = 1e-12;

/// Fits `n_peaks` Gaussians with default options.
pub fn fit_mixture(
    hist: &AmplitudeHistogram,
    n_peaks: usize,
    init: Option<&[GaussianPeak]>,
) -> Result<MixtureFit> {
    let mut opts = FitOptions::new(n_peaks);
    opts.init = init.map(<[GaussianPeak]>::to_vec);
    fit_mixture_with(hist, &opts)
}

/// Levenberg-Marquardt fit of a Gaussian mixture to a histogram.
pub fn fit_mixture_with(hist: &AmplitudeHistogram, opts: &FitOptions) -> Result<MixtureFit> {
    let n_peaks = opts.n_peaks;
    if n_peaks == 0 {
        return Err(domain("need at least one peak"));
    }
    if hist.nonempty_bins() < 3 * n_peaks {
        return Err(domain(format!(
            "{} nonempty bins cannot constrain {} peaks",
            hist.nonempty_bins(),
            n_peaks
        )));
    }
    let init = match &opts.init {
        Some(init) => {
            if init.len() != n_peaks {
                return Err(domain(format!(
                    "{} initial peaks given for a {}-peak fit",
                    init.len(),
                    n_peaks
                )));
            }
            if init
                .iter()
                .any(|p| !(p.sigma > 0.0) || !p.amplitude.is_finite())
            {
                return Err(domain("initial peaks need finite amplitude and sigma > 0"));
            }
            init.clone()
        }
        None => seed_peaks(hist, n_peaks, opts.min_separation_bins)?,
    };
    let mut init = init;
    init.sort_by(|a, b| a.center.total_cmp(&b.center));

    let x = hist.centers();
    let y = hist.counts();
    let width = hist.bin_width();
    let start_offset = opts.with_offset.then_some(0.0);
    let template = pack(&init, start_offset);

    // each center stays between the midpoints to its neighbours' starts
    let (lo, hi) = (hist.edges()[0], hist.edges()[hist.n_bins()]);
    let windows = (0..n_peaks)
        .map(|k| {
            let left = if k == 0 {
                lo
            } else {
                0.5 * (init[k - 1].center + init[k].center)
            };
            let right = if k + 1 == n_peaks {
                hi
            } else {
                0.5 * (init[k].center + init[k + 1].center)
            };
            (left, right)
        })
        .collect();
    let mut free = Vec::with_capacity(template.len());
    for (k, peak) in init.iter().enumerate() {
        free.push(3 * k);
        if content_near(hist, peak) >= opts.min_free_count {
            free.extend([3 * k + 1, 3 * k + 2]);
        }
    }
    if opts.with_offset {
        free.push(3 * n_peaks);
    }

    let mut problem = MixtureProblem {
        x: &x,
        y,
        sqrt_w: vec![1.0; x.len()],
        n_peaks,
        with_offset: opts.with_offset,
        min_sigma: 0.25 * width,
        windows,
        template,
        free,
    };
    let mut params = problem.restrict(&problem.template);
    if opts.weighting == FitWeighting::Poisson {
        problem.sqrt_w = if opts.init.is_some() {
            let model: Vec<f64> = x
                .iter()
                .map(|&xi| problem.model(&problem.template, xi))
                .collect();
            poisson_sqrt_weights(model.into_iter())
        } else {
            poisson_sqrt_weights(y.iter().copied())
        };
    }

    let settings = LmSettings {
        max_iterations: opts.max_iterations,
        tolerance: opts.tolerance,
    };
    let mut iterations = 0;
    let rounds = match opts.weighting {
        FitWeighting::Uniform => 1,
        FitWeighting::Poisson => MAX_REWEIGHTS,
    };
    let mut cost = 0.0;
    for round in 0..rounds {
        let out = lm::minimize(&problem, params.clone(), settings);
        iterations += out.iterations;
        if !out.converged {
            return Err(CalibError::FitFailure {
                iterations,
                last_residual: out.cost,
            });
        }
        let change = out
            .params
            .iter()
            .zip(params.iter())
            .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE))
            .fold(0.0, f64::max);
        params = out.params;
        cost = out.cost;
        if round + 1 == rounds || (round > 0 && change < REWEIGHT_TOL) {
            break;
        }
        let full = problem.expand(&params);
        let model: Vec<f64> = x.iter().map(|&xi| problem.model(&full, xi)).collect();
        problem.sqrt_w = poisson_sqrt_weights(model.into_iter());
    }

    let jac = problem.jacobian(&params);
    let mut free_cov = invert_normal(&jac);
    if opts.weighting == FitWeighting::Uniform {
        let dof = x.len().saturating_sub(params.len()).max(1);
        free_cov *= cost / dof as f64;
    }
    let params = problem.expand(&params);
    // fixed parameters carry no fit uncertainty
    let mut cov = DMatrix::zeros(params.len(), params.len());
    for (a, &i) in problem.free.iter().enumerate() {
        for (b, &j) in problem.free.iter().enumerate() {
            cov[(i, j)] = free_cov[(a, b)];
        }
    }

    // sort peaks by center and permute the covariance to match
    let mut order: Vec<usize> = (0..n_peaks).collect();
    order.sort_by(|&a, &b| params[3 * a + 1].total_cmp(&params[3 * b + 1]));
    let mut index_map: Vec<usize> = order
        .iter()
        .flat_map(|&k| [3 * k, 3 * k + 1, 3 * k + 2])
        .collect();
    if opts.with_offset {
        index_map.push(3 * n_peaks);
    }
    let covariance: Vec<Vec<f64>> = index_map
        .iter()
        .map(|&r| index_map.iter().map(|&c| cov[(r, c)]).collect())
        .collect();
    let peaks: Vec<GaussianPeak> = order
        .iter()
        .enumerate()
        .map(|(slot, &k)| GaussianPeak {
            amplitude: params[3 * k],
            center: params[3 * k + 1],
            sigma: params[3 * k + 2],
            u_amplitude: covariance[3 * slot][3 * slot].max(0.0).sqrt(),
            u_center: covariance[3 * slot + 1][3 * slot + 1].max(0.0).sqrt(),
            u_sigma: covariance[3 * slot + 2][3 * slot + 2].max(0.0).sqrt(),
        })
        .collect();

    let mut fit = MixtureFit {
        peaks,
        offset: opts.with_offset.then(|| params[3 * n_peaks]),
        covariance,
        quality: None,
        weighting: opts.weighting,
        iterations,
    };
    fit.quality = assess_quality(&fit, hist).ok();
    Ok(fit)
}

/// Event counts per peak: area over bin width, with uncertainties from the
/// amplitude-width block of the fit covariance.
pub fn extract_counts(fit: &MixtureFit, bin_width: f64) -> Result<CountVector> {
    if !(bin_width > 0.0) {
        return Err(domain(format!("bin width {bin_width} must be positive")));
    }
    let mut counts = Vec::with_capacity(fit.peaks.len());
    let mut uncertainties = Vec::with_capacity(fit.peaks.len());
    for (k, p) in fit.peaks.iter().enumerate() {
        let scale = SQRT_TAU / bin_width;
        let d_a = p.sigma * scale;
        let d_s = p.amplitude * scale;
        let cov = &fit.covariance;
        let (ia, is) = (3 * k, 3 * k + 2);
        let var = d_a * d_a * cov[ia][ia] + d_s * d_s * cov[is][is] + 2.0 * d_a * d_s * cov[ia][is];
        counts.push(p.area() / bin_width);
        uncertainties.push(var.max(0.0).sqrt());
    }
    CountVector::new(counts, uncertainties)
}

/// Reduced chi-square (Poisson variances floored at one) against the reduced
/// total sum of squares about the mean bin content.
pub fn assess_quality(fit: &MixtureFit, hist: &AmplitudeHistogram) -> Result<FitQuality> {
    let n_params = fit.n_params();
    let nonempty = hist.nonempty_bins();
    if nonempty <= n_params {
        return Err(domain(format!(
            "{nonempty} nonempty bins leave no degrees of freedom for {n_params} parameters"
        )));
    }
    let dof = nonempty - n_params;
    let chi2: f64 = hist
        .centers()
        .iter()
        .zip(hist.counts())
        .map(|(&x, &n)| (n - fit.eval(x)).powi(2) / n.max(1.0))
        .sum();
    let mean = hist.total() / hist.n_bins() as f64;
    let tss: f64 = hist.counts().iter().map(|n| (n - mean).powi(2)).sum();
    let reduced_chi_square = chi2 / dof as f64;
    let reduced_total_sum_of_squares = tss / (hist.n_bins() - 1) as f64;
    let ratio = if reduced_chi_square == 0.0 {
        0.0
    } else {
        reduced_chi_square / reduced_total_sum_of_squares
    };
    Ok(FitQuality {
        reduced_chi_square,
        reduced_total_sum_of_squares,
        ratio,
        degrees_of_freedom: dof,
    })
}

/// Peak height, in counts per bin, of a Gaussian holding `count` events.
pub fn peak_height_for_count(count: f64, sigma: f64, bin_width: f64) -> f64 {
    count * bin_width / (sigma * SQRT_TAU)
}
