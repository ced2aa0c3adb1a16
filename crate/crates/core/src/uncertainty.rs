//! First-order propagation of standard uncertainties through the efficiency
//! estimators, with per-input contribution budgets.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{domain, CalibError, Result};
use crate::model::{
    counts_to_distribution, estimate_gamma, klyshko_estimate, CountVector, EstimateSource,
    HeraldPurity,
};

const COVARIANCE_TOL: f64 = 1e-9;
/// Allowed disagreement between analytic and finite-difference gradients.
pub const GRADIENT_TOL: f64 = 1e-6;

/// Named input quantities with standard uncertainties and an optional full
/// covariance over the same ordering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputVector {
    names: Vec<String>,
    values: Vec<f64>,
    uncertainties: Vec<f64>,
    covariance: Option<Vec<Vec<f64>>>,
}

impl InputVector {
    pub fn new(names: Vec<String>, values: Vec<f64>, uncertainties: Vec<f64>) -> Result<Self> {
        if names.len() != values.len() || values.len() != uncertainties.len() {
            return Err(domain(format!(
                "{} names, {} values, {} uncertainties",
                names.len(),
                values.len(),
                uncertainties.len()
            )));
        }
        if let Some(u) = uncertainties
            .iter()
            .find(|u| !(u.is_finite() && **u >= 0.0))
        {
            return Err(domain(format!("uncertainty {u} must be finite and >= 0")));
        }
        Ok(Self {
            names,
            values,
            uncertainties,
            covariance: None,
        })
    }

    /// The layout the estimators expect: heralded counts `C0..CK`, background
    /// counts `Cbg0..CbgK`, then `xi`.
    pub fn from_counts(on: &CountVector, off: &CountVector, xi: &HeraldPurity) -> Result<Self> {
        if on.len() != off.len() {
            return Err(domain(format!(
                "heralded and background count vectors differ in length ({} vs {})",
                on.len(),
                off.len()
            )));
        }
        let n = on.len();
        let names = (0..n)
            .map(|i| format!("C{i}"))
            .chain((0..n).map(|i| format!("Cbg{i}")))
            .chain(std::iter::once("xi".to_string()))
            .collect();
        let values = on
            .counts()
            .iter()
            .chain(off.counts())
            .copied()
            .chain(std::iter::once(xi.xi))
            .collect();
        let unc = on
            .uncertainties()
            .iter()
            .chain(off.uncertainties())
            .copied()
            .chain(std::iter::once(xi.u_xi))
            .collect();
        Self::new(names, values, unc)
    }

    /// Attaches a full covariance. It must be symmetric positive semidefinite
    /// with a diagonal equal to the squared uncertainties.
    pub fn with_covariance(mut self, cov: Vec<Vec<f64>>) -> Result<Self> {
        let n = self.len();
        if cov.len() != n || cov.iter().any(|r| r.len() != n) {
            return Err(domain(format!("covariance must be {n}x{n}")));
        }
        let scale = cov
            .iter()
            .flatten()
            .fold(0.0f64, |m, v| m.max(v.abs()))
            .max(f64::MIN_POSITIVE);
        for i in 0..n {
            let var = self.uncertainties[i].powi(2);
            if (cov[i][i] - var).abs() > COVARIANCE_TOL * var.max(cov[i][i].abs()) {
                return Err(domain(format!(
                    "covariance diagonal {} for {} does not match u^2 = {var}",
                    cov[i][i], self.names[i]
                )));
            }
            for j in 0..i {
                if (cov[i][j] - cov[j][i]).abs() > COVARIANCE_TOL * scale {
                    return Err(domain(format!("covariance not symmetric at ({i}, {j})")));
                }
            }
        }
        let m = DMatrix::from_fn(n, n, |i, j| 0.5 * (cov[i][j] + cov[j][i]));
        let min_eig = SymmetricEigen::new(m).eigenvalues.min();
        if min_eig < -COVARIANCE_TOL * scale {
            return Err(domain(format!(
                "covariance is not positive semidefinite (eigenvalue {min_eig:e})"
            )));
        }
        self.covariance = Some(cov);
        Ok(self)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn uncertainties(&self) -> &[f64] {
        &self.uncertainties
    }

    pub fn covariance(&self) -> Option<&[Vec<f64>]> {
        self.covariance.as_deref()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Same quantities with all uncertainties set to zero.
    pub fn exact(&self) -> Self {
        Self {
            names: self.names.clone(),
            values: self.values.clone(),
            uncertainties: vec![0.0; self.len()],
            covariance: None,
        }
    }
}

/// A scalar measurement function with a closed-form gradient.
pub trait Estimator {
    fn target(&self) -> String;

    fn value(&self, q: &[f64]) -> Result<f64>;

    fn analytic_gradient(&self, q: &[f64]) -> Result<Vec<f64>>;
}

/// Efficiency estimator over the `[C.., Cbg.., xi]` layout with `bins`
/// photon-number bins per count vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaEstimator {
    pub source: EstimateSource,
    pub bins: usize,
}

impl GammaEstimator {
    pub fn photon_number(i: usize, bins: usize) -> Self {
        Self {
            source: EstimateSource::PhotonNumber(i),
            bins,
        }
    }

    pub fn klyshko(bins: usize) -> Self {
        Self {
            source: EstimateSource::Klyshko,
            bins,
        }
    }

    fn split<'a>(&self, q: &'a [f64]) -> Result<(&'a [f64], &'a [f64], f64)> {
        if q.len() != 2 * self.bins + 1 {
            return Err(domain(format!(
                "expected {} inputs for {} bins, got {}",
                2 * self.bins + 1,
                self.bins,
                q.len()
            )));
        }
        Ok((
            &q[..self.bins],
            &q[self.bins..2 * self.bins],
            q[2 * self.bins],
        ))
    }
}

/// Derivative of `p_j = c_j / sum(c)` with respect to every `c_k`.
fn normalized_gradient(counts: &[f64], j: usize) -> Vec<f64> {
    let total: f64 = counts.iter().sum();
    let p = counts[j] / total;
    (0..counts.len())
        .map(|k| (f64::from(u8::from(k == j)) - p) / total)
        .collect()
}

impl Estimator for GammaEstimator {
    fn target(&self) -> String {
        self.source.to_string()
    }

    fn value(&self, q: &[f64]) -> Result<f64> {
        let (on, off, xi) = self.split(q)?;
        let p_on = counts_to_distribution(&CountVector::new(on.to_vec(), vec![0.0; on.len()])?)?;
        let p_off = counts_to_distribution(&CountVector::new(off.to_vec(), vec![0.0; off.len()])?)?;
        let purity = HeraldPurity::new(xi, 0.0)?;
        let estimate = match self.source {
            EstimateSource::PhotonNumber(i) => estimate_gamma(i, &p_on, &p_off, &purity)?,
            EstimateSource::Klyshko => klyshko_estimate(&p_on, &p_off, &purity)?,
            EstimateSource::WeightedMean => {
                return Err(domain("use WeightedMeanEstimator for the combined value"))
            }
        };
        Ok(estimate.gamma)
    }

    fn analytic_gradient(&self, q: &[f64]) -> Result<Vec<f64>> {
        let (on, off, xi) = self.split(q)?;
        let n = self.bins;
        let s_on: f64 = on.iter().sum();
        let s_off: f64 = off.iter().sum();
        if !(s_on > 0.0 && s_off > 0.0) {
            return Err(domain("count totals must be positive"));
        }
        if !(xi > 0.0) {
            return Err(domain("herald purity is zero"));
        }
        let p = |i: usize| on.get(i).map_or(0.0, |c| c / s_on);
        let b = |i: usize| off.get(i).map_or(0.0, |c| c / s_off);
        let dp = |i: usize| {
            if i < n {
                normalized_gradient(on, i)
            } else {
                vec![0.0; n]
            }
        };
        let db = |i: usize| {
            if i < n {
                normalized_gradient(off, i)
            } else {
                vec![0.0; n]
            }
        };

        let mut grad = vec![0.0; 2 * n + 1];
        match self.source {
            EstimateSource::PhotonNumber(0) => {
                // gamma0 = (1 - p0/b0) / xi
                let (p0, b0) = (p(0), b(0));
                if b0 == 0.0 {
                    return Err(CalibError::UninformativeBin {
                        index: 0,
                        reason: "background P(0) is zero".into(),
                    });
                }
                let gamma = (b0 - p0) / (xi * b0);
                for (k, d) in dp(0).into_iter().enumerate() {
                    grad[k] = -d / (xi * b0);
                }
                for (k, d) in db(0).into_iter().enumerate() {
                    grad[n + k] = p0 / (xi * b0 * b0) * d;
                }
                grad[2 * n] = -gamma / xi;
            }
            EstimateSource::PhotonNumber(i) => {
                // gamma_i = (p_i - b_i) / (xi (b_{i-1} - b_i))
                let step = b(i - 1) - b(i);
                if step == 0.0 {
                    return Err(CalibError::UninformativeBin {
                        index: i,
                        reason: format!("background P({}) equals P({i})", i - 1),
                    });
                }
                let excess = p(i) - b(i);
                let gamma = excess / (xi * step);
                for (k, d) in dp(i).into_iter().enumerate() {
                    grad[k] = d / (xi * step);
                }
                let (db_here, db_below) = (db(i), db(i - 1));
                for k in 0..n {
                    let d_excess = -db_here[k];
                    let d_step = db_below[k] - db_here[k];
                    grad[n + k] = (d_excess * step - excess * d_step) / (xi * step * step);
                }
                grad[2 * n] = -gamma / xi;
            }
            EstimateSource::Klyshko => {
                // gamma_K = (b0 - p0) / xi
                let gamma = (b(0) - p(0)) / xi;
                for (k, d) in dp(0).into_iter().enumerate() {
                    grad[k] = -d / xi;
                }
                for (k, d) in db(0).into_iter().enumerate() {
                    grad[n + k] = d / xi;
                }
                grad[2 * n] = -gamma / xi;
            }
            EstimateSource::WeightedMean => {
                return Err(domain("use WeightedMeanEstimator for the combined value"))
            }
        }
        Ok(grad)
    }
}

/// Fixed-weight linear combination of efficiency estimators.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedMeanEstimator {
    pub components: Vec<GammaEstimator>,
    /// Normalized weights, one per component.
    pub weights: Vec<f64>,
}

impl WeightedMeanEstimator {
    /// Inverse-variance weights from the components' standard uncertainties.
    pub fn from_uncertainties(components: Vec<GammaEstimator>, u: &[f64]) -> Result<Self> {
        if components.len() != u.len() || components.is_empty() {
            return Err(domain("one uncertainty per component required"));
        }
        if u.iter().any(|u| !(*u > 0.0)) {
            return Err(domain("weighted mean needs positive uncertainties"));
        }
        let raw: Vec<f64> = u.iter().map(|u| 1.0 / (u * u)).collect();
        let total: f64 = raw.iter().sum();
        Ok(Self {
            components,
            weights: raw.into_iter().map(|w| w / total).collect(),
        })
    }
}

impl Estimator for WeightedMeanEstimator {
    fn target(&self) -> String {
        EstimateSource::WeightedMean.to_string()
    }

    fn value(&self, q: &[f64]) -> Result<f64> {
        self.components
            .iter()
            .zip(&self.weights)
            .map(|(c, w)| c.value(q).map(|v| w * v))
            .sum()
    }

    fn analytic_gradient(&self, q: &[f64]) -> Result<Vec<f64>> {
        let mut grad = vec![0.0; q.len()];
        for (c, w) in self.components.iter().zip(&self.weights) {
            for (g, d) in grad.iter_mut().zip(c.analytic_gradient(q)?) {
                *g += w * d;
            }
        }
        Ok(grad)
    }
}

/// Finite-difference step for a quantity of magnitude `q`.
pub fn fd_step(q: f64) -> f64 {
    (1e-6 * q.abs()).max(1e-10)
}

/// Central finite-difference gradient. Falls back to a one-sided difference
/// where a step would leave the estimator's domain, e.g. a count of zero.
pub fn numeric_gradient<E: Estimator + ?Sized>(f: &E, at: &[f64]) -> Result<Vec<f64>> {
    let finite = |r: Result<f64>| r.ok().filter(|v| v.is_finite());
    let centre = finite(f.value(at));
    let mut q = at.to_vec();
    let mut grad = Vec::with_capacity(at.len());
    for k in 0..at.len() {
        let h = fd_step(at[k]);
        q[k] = at[k] + h;
        let up = finite(f.value(&q));
        q[k] = at[k] - h;
        let down = finite(f.value(&q));
        q[k] = at[k];
        let d = match (up, down, centre) {
            (Some(u), Some(d), _) => (u - d) / (2.0 * h),
            (Some(u), None, Some(c)) => (u - c) / h,
            (None, Some(d), Some(c)) => (c - d) / h,
            _ => {
                return Err(domain(format!(
                    "estimator undefined near input {k} = {}",
                    at[k]
                )))
            }
        };
        grad.push(d);
    }
    Ok(grad)
}

/// Gradient of `f` at `at`, computed analytically and cross-checked against
/// central finite differences.
///
/// Each component must agree to [`GRADIENT_TOL`] relative to the larger of
/// its own magnitude and `max_j |q_j df/dq_j| / |q_k|`. The second term keeps
/// components that are tiny next to the others from failing on rounding
/// noise in the difference quotient.
pub fn jacobian<E: Estimator + ?Sized>(f: &E, at: &InputVector) -> Result<Vec<f64>> {
    let q = at.values();
    let analytic = f.analytic_gradient(q)?;
    if analytic.len() != q.len() {
        return Err(domain("gradient length does not match the inputs"));
    }
    let numeric = numeric_gradient(f, q)?;
    let elasticity = analytic
        .iter()
        .zip(q)
        .map(|(g, v)| (g * v).abs())
        .fold(0.0f64, f64::max);
    for (k, (&a, &n)) in analytic.iter().zip(&numeric).enumerate() {
        let scale = a
            .abs()
            .max(n.abs())
            .max(elasticity / q[k].abs().max(fd_step(q[k])));
        if (a - n).abs() > GRADIENT_TOL * scale {
            return Err(CalibError::NumericalInstability {
                quantity: at.names()[k].clone(),
                analytic: a,
                numeric: n,
            });
        }
    }
    Ok(analytic)
}

/// Signed contribution of one input to a combined uncertainty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contribution {
    pub quantity: String,
    /// `df/dq * u(q)`, same units as the target.
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyBudget {
    pub target: String,
    pub contributions: Vec<Contribution>,
    pub combined: f64,
    /// True when the combined value used a full covariance.
    pub correlated: bool,
}

impl UncertaintyBudget {
    pub fn contribution(&self, quantity: &str) -> Option<f64> {
        self.contributions
            .iter()
            .find(|c| c.quantity == quantity)
            .map(|c| c.value)
    }

    /// Root-sum-square of the contributions.
    pub fn quadrature_sum(&self) -> f64 {
        self.contributions
            .iter()
            .map(|c| c.value * c.value)
            .sum::<f64>()
            .sqrt()
    }
}

/// `u^2 = g^T Sigma g`, using the full covariance when one is attached.
pub fn propagate(
    target: &str,
    gradient: &[f64],
    inputs: &InputVector,
) -> Result<UncertaintyBudget> {
    if gradient.len() != inputs.len() {
        return Err(domain(format!(
            "gradient has {} entries, inputs have {}",
            gradient.len(),
            inputs.len()
        )));
    }
    let contributions: Vec<Contribution> = inputs
        .names()
        .iter()
        .zip(gradient)
        .zip(inputs.uncertainties())
        .map(|((name, g), u)| Contribution {
            quantity: name.clone(),
            value: g * u,
        })
        .collect();
    let variance = match inputs.covariance() {
        Some(cov) => gradient
            .iter()
            .enumerate()
            .map(|(i, gi)| {
                gradient
                    .iter()
                    .enumerate()
                    .map(|(j, gj)| gi * cov[i][j] * gj)
                    .sum::<f64>()
            })
            .sum::<f64>(),
        None => contributions.iter().map(|c| c.value * c.value).sum(),
    };
    Ok(UncertaintyBudget {
        target: target.to_string(),
        contributions,
        combined: variance.max(0.0).sqrt(),
        correlated: inputs.covariance().is_some(),
    })
}

/// Gradient check followed by propagation.
pub fn budget_for<E: Estimator + ?Sized>(f: &E, inputs: &InputVector) -> Result<UncertaintyBudget> {
    let g = jacobian(f, inputs)?;
    propagate(&f.target(), &g, inputs)
}

/// Mean of repeated measurements with the covariance of that mean.
///
/// The sample covariance uses `1/(n-1)`; the returned covariance and
/// uncertainties are those of the mean, i.e. divided by `n`.
pub fn covariance_from_repeats(runs: &[InputVector]) -> Result<InputVector> {
    if runs.len() < 2 {
        return Err(domain(format!("need at least 2 runs, got {}", runs.len())));
    }
    let names = runs[0].names().to_vec();
    if runs.iter().any(|r| r.names() != names.as_slice()) {
        return Err(domain("runs do not share the same quantity ordering"));
    }
    let n = runs.len() as f64;
    let dim = names.len();
    let mean: Vec<f64> = (0..dim)
        .map(|k| runs.iter().map(|r| r.values()[k]).sum::<f64>() / n)
        .collect();
    let mut cov = vec![vec![0.0; dim]; dim];
    for i in 0..dim {
        for j in 0..=i {
            let s: f64 = runs
                .iter()
                .map(|r| (r.values()[i] - mean[i]) * (r.values()[j] - mean[j]))
                .sum();
            let c = s / (n - 1.0) / n;
            cov[i][j] = c;
            cov[j][i] = c;
        }
    }
    let u = (0..dim).map(|k| cov[k][k].max(0.0).sqrt()).collect();
    InputVector::new(names, mean, u)?.with_covariance(cov)
}
