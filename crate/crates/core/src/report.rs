//! Report rendering. Efficiencies are fractions everywhere else; they become
//! percentages only here.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::calibration::CalibrationResult;
use crate::histogram::{FitQuality, MixtureFit};
use crate::model::{CountVector, EfficiencyEstimate, EstimateSource};
use crate::simulator::ClosureReport;

/// Run details that legitimately differ between identical invocations.
/// Kept apart from the results so reports can be compared byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub tool: String,
    pub version: String,
    pub generated_at_unix: u64,
}

impl Metadata {
    pub fn now() -> Self {
        let secs = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            generated_at_unix: secs,
        }
    }
}

fn decimals_for_uncertainty(u: f64) -> usize {
    if !(u > 0.0 && u.is_finite()) {
        return 0;
    }
    let mut d = (-u.log10().floor()) as i32;
    // rounding may carry into the next digit, e.g. 0.0096 -> 0.01
    let rounded = (u * 10f64.powi(d)).round();
    if rounded >= 10.0 {
        d -= 1;
    }
    d.max(0) as usize
}

fn decimals_for_value(v: f64) -> usize {
    if v == 0.0 || !v.is_finite() {
        return 3;
    }
    (2 - v.abs().log10().floor() as i32).max(0) as usize
}

/// Renders a value and optional uncertainty: the uncertainty with one
/// significant digit and the value aligned to it, or three significant
/// digits when there is no uncertainty.
pub fn format_value(value: f64, u: Option<f64>) -> String {
    match u {
        Some(u) if u > 0.0 => {
            let d = decimals_for_uncertainty(u);
            format!("{value:.d$} ± {u:.d$}")
        }
        _ => {
            let d = decimals_for_value(value);
            format!("{value:.d$}")
        }
    }
}

/// An efficiency in percent, e.g. `0.708 ± 0.006 %`.
pub fn format_efficiency(e: &EfficiencyEstimate) -> String {
    let mut s = format_value(e.gamma * 100.0, e.u_gamma.map(|u| u * 100.0));
    s.push_str(" %");
    if e.out_of_range {
        s.push_str(" [out of range]");
    }
    s
}

/// A number with one significant digit, as in a contribution column.
pub fn format_contribution(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let exp = v.abs().log10().floor() as i32;
    if (-3..=2).contains(&exp) {
        let d = (-exp).max(0) as usize;
        format!("{v:.d$}")
    } else {
        format!("{v:.0e}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderedEstimate {
    pub source: EstimateSource,
    pub percent: String,
}

/// A histogram fit as recorded in a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub label: String,
    pub n_bins: usize,
    pub bin_width: f64,
    pub range: (f64, f64),
    pub fit: MixtureFit,
    pub counts: CountVector,
}

impl FitRecord {
    pub fn quality(&self) -> Option<FitQuality> {
        self.fit.quality
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub metadata: Metadata,
    /// Empty when counts were supplied directly.
    pub fits: Vec<FitRecord>,
    pub result: CalibrationResult,
    pub rendered: Vec<RenderedEstimate>,
    pub warnings: Vec<String>,
}

impl CalibrationReport {
    pub fn new(metadata: Metadata, result: CalibrationResult) -> Self {
        let rendered = result
            .estimates
            .iter()
            .chain(result.weighted_mean.iter())
            .map(|e| RenderedEstimate {
                source: e.source,
                percent: format_efficiency(e),
            })
            .collect();
        let warnings = result
            .estimates
            .iter()
            .chain(result.weighted_mean.iter())
            .filter_map(|e| {
                if e.out_of_range {
                    Some(format!("{} = {} is outside [0, 1]", e.source, e.gamma))
                } else if e.u_gamma.is_some_and(|u| e.gamma.abs() <= u) || e.gamma == 0.0 {
                    Some(format!("{} is consistent with zero efficiency", e.source))
                } else {
                    None
                }
            })
            .collect();
        Self {
            metadata,
            fits: Vec::new(),
            result,
            rendered,
            warnings,
        }
    }

    pub fn with_fits(mut self, fits: Vec<FitRecord>) -> Self {
        self.fits = fits;
        self
    }
}

fn budget_targets(result: &CalibrationResult) -> Vec<&str> {
    result.budgets.iter().map(|b| b.target.as_str()).collect()
}

/// Budget table in CSV: one row per input quantity with its value, standard
/// uncertainty and signed contribution (in %) to every estimator, then one
/// row per estimator with its value and combined uncertainty (in %).
pub fn budget_csv(result: &CalibrationResult) -> String {
    let targets = budget_targets(result);
    let mut out = String::from("quantity,value,standard_uncertainty");
    for t in &targets {
        let _ = write!(out, ",contribution_{t}_percent");
    }
    out.push('\n');
    let inputs = &result.inputs;
    for (k, name) in inputs.names().iter().enumerate() {
        let _ = write!(
            out,
            "{name},{},{}",
            inputs.values()[k],
            inputs.uncertainties()[k]
        );
        for b in &result.budgets {
            let _ = write!(out, ",{}", b.contributions[k].value * 100.0);
        }
        out.push('\n');
    }
    for b in &result.budgets {
        let value = result
            .estimates
            .iter()
            .chain(result.weighted_mean.iter())
            .find(|e| e.source.to_string() == b.target)
            .map(|e| e.gamma * 100.0);
        let _ = write!(
            out,
            "{}_percent,{},",
            b.target,
            value.map_or(String::new(), |v| v.to_string())
        );
        for other in &targets {
            if *other == b.target {
                let _ = write!(out, ",{}", b.combined * 100.0);
            } else {
                out.push(',');
            }
        }
        out.push('\n');
    }
    out
}

/// The same table rounded for reading.
pub fn budget_text(result: &CalibrationResult) -> String {
    let targets = budget_targets(result);
    let mut out = format!("{:<10} {:>12} {:>12}", "quantity", "value", "std.unc.");
    for t in &targets {
        let _ = write!(out, " {:>15}", format!("{t} (%)"));
    }
    out.push('\n');
    let inputs = &result.inputs;
    for (k, name) in inputs.names().iter().enumerate() {
        let _ = write!(
            out,
            "{:<10} {:>12} {:>12}",
            name,
            format!("{:.5e}", inputs.values()[k]),
            format!("{:.2e}", inputs.uncertainties()[k])
        );
        for b in &result.budgets {
            let _ = write!(
                out,
                " {:>15}",
                format_contribution(b.contributions[k].value * 100.0)
            );
        }
        out.push('\n');
    }
    out.push('\n');
    for e in result.estimates.iter().chain(result.weighted_mean.iter()) {
        let _ = writeln!(
            out,
            "{:<14} = {}",
            e.source.to_string(),
            format_efficiency(e)
        );
    }
    for f in &result.failures {
        let _ = writeln!(out, "{:<14} : {}", f.source.to_string(), f.message);
    }
    out
}

/// Human-readable closure summary.
pub fn closure_text(report: &ClosureReport) -> String {
    let mut out = format!(
        "closure: {}/{} seeds completed, gamma_true = {:.5} %\n",
        report.completed,
        report.n_seeds,
        report.gamma_true * 100.0
    );
    let _ = writeln!(
        out,
        "{:<14} {:>4} {:>12} {:>12} {:>12} {:>12} {:>10} {:>10} {:>6}",
        "estimator",
        "n",
        "mean (%)",
        "spread (%)",
        "<u> (%)",
        "bias (%)",
        "pull mean",
        "pull var",
        "oor"
    );
    for s in &report.summaries {
        let _ = writeln!(
            out,
            "{:<14} {:>4} {:>12.6} {:>12.6} {:>12.6} {:>12.6} {:>10.3} {:>10.3} {:>6}",
            s.source.to_string(),
            s.n,
            s.mean * 100.0,
            s.spread * 100.0,
            s.mean_claimed_uncertainty * 100.0,
            s.bias * 100.0,
            s.pull_mean,
            s.pull_variance,
            s.out_of_range
        );
    }
    for seed in report.seeds.iter().filter(|s| s.error.is_some()) {
        let _ = writeln!(
            out,
            "seed {} failed: {}",
            seed.seed,
            seed.error.as_deref().unwrap_or("")
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn value_aligned_to_uncertainty() {
        assert_eq!(format_value(0.707681, Some(0.00567)), "0.708 ± 0.006");
        assert_eq!(format_value(0.65318, Some(0.0435)), "0.65 ± 0.04");
        assert_eq!(format_value(0.70889, Some(0.00212)), "0.709 ± 0.002");
        assert_eq!(format_value(0.7076, Some(0.0096)), "0.71 ± 0.01");
        assert_eq!(format_value(0.707681, None), "0.708");
        assert_eq!(format_value(12.345, None), "12.3");
    }

    #[test]
    fn contributions_keep_one_digit() {
        assert_eq!(format_contribution(-0.00273), "-0.003");
        assert_eq!(format_contribution(0.0417), "0.04");
        assert_eq!(format_contribution(1.18e-4), "1e-4");
        assert_eq!(format_contribution(0.0), "0");
    }

    #[test]
    fn flags_out_of_range() {
        let e = EfficiencyEstimate::new(-0.001, EstimateSource::PhotonNumber(0));
        assert!(format_efficiency(&e).ends_with("[out of range]"));
    }
}
