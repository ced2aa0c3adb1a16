//! Counts to efficiencies: every per-photon-number estimate, the
//! click/no-click cross-check, their budgets and the weighted mean.

use serde::{Deserialize, Serialize};

use crate::error::{CalibError, Result};
use crate::model::{
    counts_to_distribution, estimate_gamma, klyshko_estimate, weighted_mean, CountVector,
    EfficiencyEstimate, EstimateSource, HeraldPurity,
};
use crate::uncertainty::{
    budget_for, GammaEstimator, InputVector, UncertaintyBudget, WeightedMeanEstimator,
};

/// An estimator that could not be evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorFailure {
    pub source: EstimateSource,
    pub uninformative: bool,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub p_on: Vec<f64>,
    pub p_off: Vec<f64>,
    pub xi: HeraldPurity,
    pub inputs: InputVector,
    /// `gamma_0..gamma_K` that could be evaluated, then the Klyshko value.
    pub estimates: Vec<EfficiencyEstimate>,
    pub weighted_mean: Option<EfficiencyEstimate>,
    pub budgets: Vec<UncertaintyBudget>,
    pub failures: Vec<EstimatorFailure>,
}

impl CalibrationResult {
    pub fn estimate(&self, source: EstimateSource) -> Option<&EfficiencyEstimate> {
        self.estimates.iter().find(|e| e.source == source)
    }

    pub fn budget(&self, source: EstimateSource) -> Option<&UncertaintyBudget> {
        let name = source.to_string();
        self.budgets.iter().find(|b| b.target == name)
    }

    pub fn has_uninformative_bin(&self) -> bool {
        self.failures.iter().any(|f| f.uninformative)
    }
}

fn failure(source: EstimateSource, err: &CalibError) -> EstimatorFailure {
    EstimatorFailure {
        source,
        uninformative: matches!(err, CalibError::UninformativeBin { .. }),
        message: err.to_string(),
    }
}

/// Runs every estimator on heralded (`on`) and background (`off`) counts.
///
/// Per-estimator failures are collected rather than aborting; errors in the
/// shared inputs (mismatched lengths, empty totals, bad covariance) abort.
pub fn calibrate(
    on: &CountVector,
    off: &CountVector,
    xi: &HeraldPurity,
    covariance: Option<Vec<Vec<f64>>>,
) -> Result<CalibrationResult> {
    let p_on = counts_to_distribution(on)?;
    let p_off = counts_to_distribution(off)?;
    let mut inputs = InputVector::from_counts(on, off, xi)?;
    if let Some(cov) = covariance {
        inputs = inputs.with_covariance(cov)?;
    }
    let bins = on.len();

    let mut estimates = Vec::new();
    let mut budgets = Vec::new();
    let mut failures = Vec::new();
    let mut mean_parts = Vec::new();

    let sources = (0..bins)
        .map(EstimateSource::PhotonNumber)
        .chain(std::iter::once(EstimateSource::Klyshko));
    for source in sources {
        let point = match source {
            EstimateSource::PhotonNumber(i) => estimate_gamma(i, &p_on, &p_off, xi),
            _ => klyshko_estimate(&p_on, &p_off, xi),
        };
        let estimator = GammaEstimator { source, bins };
        let outcome = point.and_then(|e| {
            let budget = budget_for(&estimator, &inputs)?;
            Ok((e.with_uncertainty(budget.combined)?, budget))
        });
        match outcome {
            Ok((estimate, budget)) => {
                if let EstimateSource::PhotonNumber(_) = source {
                    mean_parts.push((estimator, estimate));
                }
                estimates.push(estimate);
                budgets.push(budget);
            }
            Err(err) => failures.push(failure(source, &err)),
        }
    }

    let combinable: Vec<_> = mean_parts
        .iter()
        .filter(|(_, e)| e.u_gamma.is_some_and(|u| u > 0.0))
        .collect();
    let weighted = if combinable.is_empty() {
        None
    } else {
        let ests: Vec<EfficiencyEstimate> = combinable.iter().map(|(_, e)| *e).collect();
        let mean = weighted_mean(&ests)?;
        let u: Vec<f64> = ests.iter().filter_map(|e| e.u_gamma).collect();
        let wm = WeightedMeanEstimator::from_uncertainties(
            combinable.iter().map(|(f, _)| *f).collect(),
            &u,
        )?;
        match budget_for(&wm, &inputs) {
            Ok(b) => budgets.push(b),
            Err(err) => failures.push(failure(EstimateSource::WeightedMean, &err)),
        }
        Some(mean)
    };

    Ok(CalibrationResult {
        p_on: p_on.probs().to_vec(),
        p_off: p_off.probs().to_vec(),
        xi: *xi,
        inputs,
        estimates,
        weighted_mean: weighted,
        budgets,
        failures,
    })
}
