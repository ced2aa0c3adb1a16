//! Heralded-detection model and its closed-form efficiency estimators.
//!
//! A heralding count is genuine with probability `xi`. In a genuine gate the
//! heralded photon is detected with probability `gamma` and adds one to the
//! accidental photon number drawn from the background distribution; a false
//! herald sees the background alone. Inverting that mixture bin by bin gives
//! one efficiency estimate per photon number.

use serde::{Deserialize, Serialize};

use crate::error::{domain, CalibError, Result};

const NORMALIZATION_TOL: f64 = 1e-12;

/// Probability of detecting `i` photons in a gate, for `i = 0..=K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct PhotonNumberDistribution {
    probs: Vec<f64>,
}

impl PhotonNumberDistribution {
    /// Builds a distribution from probabilities that already sum to one.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(domain("distribution needs at least one bin"));
        }
        if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(domain(format!("probability {p} outside [0, 1]")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > NORMALIZATION_TOL {
            return Err(domain(format!("probabilities sum to {sum}, not 1")));
        }
        Ok(Self { probs })
    }

    /// Normalizes non-negative weights into a distribution.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(domain(format!(
                "weight {w} is not a finite non-negative number"
            )));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(domain("weights sum to zero"));
        }
        Self::new(weights.iter().map(|w| w / total).collect())
    }

    /// Point mass at photon number `n`, with support `0..=n`.
    pub fn delta(n: usize) -> Self {
        let mut probs = vec![0.0; n + 1];
        probs[n] = 1.0;
        Self { probs }
    }

    /// Poisson distribution with the given mean, truncated at `max_n` and
    /// renormalized.
    pub fn poisson(mean: f64, max_n: usize) -> Result<Self> {
        if !(mean >= 0.0 && mean.is_finite()) {
            return Err(domain(format!(
                "Poisson mean {mean} must be finite and >= 0"
            )));
        }
        let mut weights = Vec::with_capacity(max_n + 1);
        let mut term = (-mean).exp();
        for n in 0..=max_n {
            weights.push(term);
            term *= mean / (n + 1) as f64;
        }
        Self::from_weights(&weights)
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Largest photon number in the support.
    pub fn max_photon_number(&self) -> usize {
        self.probs.len() - 1
    }

    /// `P(i)`, zero outside the support.
    pub fn prob(&self, i: usize) -> f64 {
        self.probs.get(i).copied().unwrap_or(0.0)
    }

    /// Probability of at least one detected photon.
    pub fn click_probability(&self) -> f64 {
        1.0 - self.probs[0]
    }
}

impl TryFrom<Vec<f64>> for PhotonNumberDistribution {
    type Error = CalibError;

    fn try_from(probs: Vec<f64>) -> Result<Self> {
        Self::new(probs)
    }
}

impl From<PhotonNumberDistribution> for Vec<f64> {
    fn from(d: PhotonNumberDistribution) -> Self {
        d.probs
    }
}

/// Event counts per detected photon number with standard uncertainties.
///
/// Counts come from fitted peak integrals, so they are real-valued.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountVector {
    counts: Vec<f64>,
    uncertainties: Vec<f64>,
}

impl CountVector {
    pub fn new(counts: Vec<f64>, uncertainties: Vec<f64>) -> Result<Self> {
        if counts.len() != uncertainties.len() {
            return Err(domain(format!(
                "{} counts but {} uncertainties",
                counts.len(),
                uncertainties.len()
            )));
        }
        if counts.is_empty() {
            return Err(domain("count vector is empty"));
        }
        if let Some(c) = counts.iter().find(|c| !(c.is_finite() && **c >= 0.0)) {
            return Err(domain(format!("count {c} must be finite and >= 0")));
        }
        if let Some(u) = uncertainties
            .iter()
            .find(|u| !(u.is_finite() && **u >= 0.0))
        {
            return Err(domain(format!("uncertainty {u} must be finite and >= 0")));
        }
        Ok(Self {
            counts,
            uncertainties,
        })
    }

    /// Counts with Poisson uncertainties `sqrt(count)`.
    pub fn poisson(counts: Vec<f64>) -> Result<Self> {
        let u = counts.iter().map(|c| c.max(0.0).sqrt()).collect();
        Self::new(counts, u)
    }

    pub fn counts(&self) -> &[f64] {
        &self.counts
    }

    pub fn uncertainties(&self) -> &[f64] {
        &self.uncertainties
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }

    pub fn scaled(&self, k: f64) -> Result<Self> {
        Self::new(
            self.counts.iter().map(|c| c * k).collect(),
            self.uncertainties.iter().map(|u| u * k.abs()).collect(),
        )
    }
}

/// Heralding-detector counts with the pump on and with down-conversion
/// extinguished.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeraldStats {
    pub n_on: f64,
    pub n_off: f64,
    pub u_n_on: f64,
    pub u_n_off: f64,
}

impl HeraldStats {
    pub fn new(n_on: f64, n_off: f64, u_n_on: f64, u_n_off: f64) -> Result<Self> {
        if !(n_on > 0.0 && n_on.is_finite()) {
            return Err(domain(format!("n_on = {n_on} must be positive")));
        }
        if !(n_off >= 0.0) {
            return Err(domain(format!("n_off = {n_off} must be >= 0")));
        }
        if n_off > n_on {
            return Err(domain(format!(
                "n_off = {n_off} exceeds n_on = {n_on}; purity would be negative"
            )));
        }
        if !(u_n_on >= 0.0 && u_n_off >= 0.0) {
            return Err(domain("count uncertainties must be >= 0"));
        }
        Ok(Self {
            n_on,
            n_off,
            u_n_on,
            u_n_off,
        })
    }

    /// Counts with Poisson uncertainties.
    pub fn poisson(n_on: f64, n_off: f64) -> Result<Self> {
        Self::new(n_on, n_off, n_on.max(0.0).sqrt(), n_off.max(0.0).sqrt())
    }
}

/// Probability that a heralding count is genuine.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeraldPurity {
    pub xi: f64,
    pub u_xi: f64,
}

impl HeraldPurity {
    pub fn new(xi: f64, u_xi: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&xi) {
            return Err(domain(format!("purity {xi} outside [0, 1]")));
        }
        if !(u_xi >= 0.0 && u_xi.is_finite()) {
            return Err(domain(format!("purity uncertainty {u_xi} must be >= 0")));
        }
        Ok(Self { xi, u_xi })
    }
}

/// Which estimator produced an efficiency value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "index")]
pub enum EstimateSource {
    PhotonNumber(usize),
    Klyshko,
    WeightedMean,
}

impl std::fmt::Display for EstimateSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::PhotonNumber(i) => write!(f, "gamma{i}"),
            Self::Klyshko => f.write_str("gamma_klyshko"),
            Self::WeightedMean => f.write_str("weighted_mean"),
        }
    }
}

/// An efficiency value, stored as a fraction.
///
/// Values outside `[0, 1]` are kept as computed and flagged.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyEstimate {
    pub gamma: f64,
    pub u_gamma: Option<f64>,
    pub source: EstimateSource,
    pub out_of_range: bool,
}

impl EfficiencyEstimate {
    pub fn new(gamma: f64, source: EstimateSource) -> Self {
        Self {
            gamma,
            u_gamma: None,
            source,
            out_of_range: !(0.0..=1.0).contains(&gamma),
        }
    }

    pub fn with_uncertainty(mut self, u: f64) -> Result<Self> {
        if !(u >= 0.0 && u.is_finite()) {
            return Err(domain(format!("uncertainty {u} must be finite and >= 0")));
        }
        self.u_gamma = Some(u);
        Ok(self)
    }

    pub fn percent(&self) -> f64 {
        self.gamma * 100.0
    }
}

/// Split of the total efficiency into path transmittance and detector
/// efficiency. Annotation only; nothing here measures `tau`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyDecomposition {
    pub tau: f64,
    pub eta: f64,
}

impl EfficiencyDecomposition {
    pub fn new(tau: f64, eta: f64) -> Result<Self> {
        for (name, v) in [("tau", tau), ("eta", eta)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(domain(format!("{name} = {v} outside [0, 1]")));
            }
        }
        Ok(Self { tau, eta })
    }

    pub fn gamma(&self) -> f64 {
        self.tau * self.eta
    }

    pub fn reproduces(&self, gamma: f64, tol: f64) -> bool {
        (self.gamma() - gamma).abs() <= tol
    }
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(domain(format!("{name} = {v} outside [0, 1]")))
    }
}

/// Photon-number distribution in heralded gates, given the efficiency, the
/// herald purity and the accidental background. The support grows by one.
pub fn forward_distribution(
    gamma: f64,
    xi: f64,
    background: &PhotonNumberDistribution,
) -> Result<PhotonNumberDistribution> {
    check_unit("gamma", gamma)?;
    check_unit("xi", xi)?;
    let k = background.max_photon_number();
    let mut probs = Vec::with_capacity(k + 2);
    for i in 0..=k + 1 {
        let here = background.prob(i);
        let below = if i == 0 { 0.0 } else { background.prob(i - 1) };
        // xi[(1-g)here + g below] + (1-xi)here, regrouped so the estimators'
        // subtraction of `here` recovers the shift with a single rounding
        let p = here + xi * gamma * (below - here);
        // rounding can push an exact 0 or 1 a hair outside the unit interval
        probs.push(p.clamp(0.0, 1.0));
    }
    PhotonNumberDistribution::new(probs)
}

/// `P(i) = C(i) / sum_j C(j)`.
pub fn counts_to_distribution(c: &CountVector) -> Result<PhotonNumberDistribution> {
    let total = c.total();
    if !(total > 0.0) {
        return Err(domain("total count is zero"));
    }
    let probs: Vec<f64> = c.counts().iter().map(|n| n / total).collect();
    // skip the strict sum check: the division already normalizes to rounding
    Ok(PhotonNumberDistribution { probs })
}

/// Herald purity `1 - n_off/n_on` with first-order uncertainty.
pub fn estimate_xi(h: &HeraldStats) -> Result<HeraldPurity> {
    if !(h.n_on > 0.0) {
        return Err(domain("n_on must be positive"));
    }
    if h.n_off > h.n_on {
        return Err(domain("n_off exceeds n_on"));
    }
    let ratio = h.n_off / h.n_on;
    let d_on = h.n_off / (h.n_on * h.n_on);
    let d_off = 1.0 / h.n_on;
    let u = ((d_on * h.u_n_on).powi(2) + (d_off * h.u_n_off).powi(2)).sqrt();
    HeraldPurity::new(1.0 - ratio, u)
}

/// Efficiency estimate from photon-number bin `i`.
///
/// Bin 0 compares the no-detection probabilities; bin `i >= 1` compares the
/// excess in bin `i` with the background step `P(i-1) - P(i)`. The returned
/// estimate carries no uncertainty; use [`crate::uncertainty`] for that.
pub fn estimate_gamma(
    i: usize,
    p_on: &PhotonNumberDistribution,
    p_off: &PhotonNumberDistribution,
    xi: &HeraldPurity,
) -> Result<EfficiencyEstimate> {
    if !(xi.xi > 0.0) {
        return Err(domain("herald purity is zero"));
    }
    let gamma = if i == 0 {
        let q0 = p_off.prob(0);
        if q0 == 0.0 {
            return Err(CalibError::UninformativeBin {
                index: 0,
                reason: "background P(0) is zero".into(),
            });
        }
        (q0 - p_on.prob(0)) / (xi.xi * q0)
    } else {
        let step = p_off.prob(i - 1) - p_off.prob(i);
        if step == 0.0 {
            return Err(CalibError::UninformativeBin {
                index: i,
                reason: format!("background P({}) equals P({i})", i - 1),
            });
        }
        (p_on.prob(i) - p_off.prob(i)) / (xi.xi * step)
    };
    Ok(EfficiencyEstimate::new(
        gamma,
        EstimateSource::PhotonNumber(i),
    ))
}

/// Click/no-click estimate: accidental-subtracted click probability divided
/// by the herald purity.
pub fn klyshko_estimate(
    p_on: &PhotonNumberDistribution,
    p_off: &PhotonNumberDistribution,
    xi: &HeraldPurity,
) -> Result<EfficiencyEstimate> {
    if !(xi.xi > 0.0) {
        return Err(domain("herald purity is zero"));
    }
    let gamma = (p_on.click_probability() - p_off.click_probability()) / xi.xi;
    Ok(EfficiencyEstimate::new(gamma, EstimateSource::Klyshko))
}

/// Inverse-variance weighted mean with `u = (sum 1/u_i^2)^(-1/2)`.
pub fn weighted_mean(estimates: &[EfficiencyEstimate]) -> Result<EfficiencyEstimate> {
    if estimates.is_empty() {
        return Err(domain("weighted mean of an empty list"));
    }
    let mut sum_w = 0.0;
    let mut sum_wx = 0.0;
    for e in estimates {
        let u = match e.u_gamma {
            Some(u) if u > 0.0 => u,
            _ => {
                return Err(domain(format!(
                    "estimate {} has no positive uncertainty",
                    e.source
                )))
            }
        };
        let w = 1.0 / (u * u);
        sum_w += w;
        sum_wx += w * e.gamma;
    }
    EfficiencyEstimate::new(sum_wx / sum_w, EstimateSource::WeightedMean)
        .with_uncertainty(sum_w.sqrt().recip())
}
