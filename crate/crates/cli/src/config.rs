//! TOML configuration files.
//!
//! Experiment files describe a simulated run:
//!
//! ```toml
//! seed = 1
//! n_pulses = 65_000_000        # or: expected_heralds = 1e6
//!
//! [source]
//! gamma_true = 0.00709
//! xi_true = 0.98794
//! herald_prob = 0.01528
//! background_mean = 0.00286    # or: background_table = [0.997, 0.003]
//!
//! [timing]
//! rep_period_us = 25.0
//! detector_recovery_us = 10.4
//!
//! [[detector.peaks]]
//! center = 0.0
//! width = 0.09
//! ```
//!
//! Pipeline files describe a calibration; paths are relative to the file:
//!
//! ```toml
//! [input]              # histogram or amplitude CSVs
//! on = "on.csv"
//! off = "off.csv"
//!
//! [counts]             # pre-extracted counts, used with --bypass-fit
//! on = [5.069e6, 5.02e4, 118]
//! on_uncertainty = [1.4e4, 200, 6]
//! off = [5.103e6, 1.46e4, 23.9]
//! off_uncertainty = [1.4e4, 150, 1.5]
//!
//! [herald]             # either n_on and n_off, or xi and u_xi
//! xi = 0.98794
//! u_xi = 7e-5
//!
//! [fit]
//! peaks = 3
//! bins = 200
//! weighting = "poisson"
//!
//! [report]
//! out = "report"
//! formats = ["json", "csv", "txt"]
//! covariance = "covariance.csv"
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use pnrcal::histogram::{FitWeighting, GaussianPeak, DEFAULT_BINS};
use pnrcal::model::{CountVector, HeraldPurity, HeraldStats};
use pnrcal::simulator::{check_pileup, ExperimentConfig, PeakShape};
use serde::Deserialize;

use crate::error::{CliError, CliResult};

/// Name of the field in a serde "missing field `x`" or "unknown field `x`"
/// message.
fn field_in_message(msg: &str) -> Option<String> {
    for marker in ["missing field `", "unknown field `"] {
        if let Some(start) = msg.find(marker) {
            let rest = &msg[start + marker.len()..];
            return rest.find('`').map(|end| rest[..end].to_string());
        }
    }
    None
}

fn parse_toml<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| {
        let msg = format!("{}: {}", path.display(), e.message());
        match field_in_message(e.message()) {
            Some(field) => CliError::config_field(field, msg),
            None => CliError::config(msg),
        }
    })
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExperimentFile {
    seed: Option<u64>,
    n_pulses: Option<u64>,
    expected_heralds: Option<f64>,
    source: SourceSection,
    timing: TimingSection,
    detector: DetectorSection,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SourceSection {
    gamma_true: f64,
    xi_true: f64,
    herald_prob: f64,
    background_mean: Option<f64>,
    background_table: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TimingSection {
    rep_period_us: f64,
    detector_recovery_us: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DetectorSection {
    peaks: Vec<PeakShape>,
}

/// Loads an experiment file. `seed_override` replaces the file's seed and
/// makes it optional there.
pub fn load_experiment(path: &Path, seed_override: Option<u64>) -> CliResult<ExperimentConfig> {
    let file: ExperimentFile = parse_toml(path)?;
    let seed = seed_override
        .or(file.seed)
        .ok_or_else(|| CliError::config_field("seed", "missing field `seed` (or pass --seed)"))?;
    let n_pulses = match (file.n_pulses, file.expected_heralds) {
        (Some(n), None) => n,
        (None, Some(h)) => {
            if !(h > 0.0 && h.is_finite()) {
                return Err(CliError::config_field(
                    "expected_heralds",
                    "must be positive",
                ));
            }
            (h / file.source.herald_prob).round() as u64
        }
        (Some(_), Some(_)) => {
            return Err(CliError::config_field(
                "n_pulses",
                "give either n_pulses or expected_heralds, not both",
            ))
        }
        (None, None) => {
            return Err(CliError::config_field(
                "n_pulses",
                "missing field `n_pulses` (or expected_heralds)",
            ))
        }
    };
    let background_mean = match (file.source.background_mean, &file.source.background_table) {
        (Some(m), None) => m,
        (None, Some(_)) => 0.0,
        _ => {
            return Err(CliError::config_field(
                "background_mean",
                "give exactly one of background_mean and background_table",
            ))
        }
    };
    let config = ExperimentConfig {
        gamma_true: file.source.gamma_true,
        xi_true: file.source.xi_true,
        herald_prob: file.source.herald_prob,
        background_mean,
        background_table: file.source.background_table,
        peak_model: file.detector.peaks,
        n_pulses,
        rep_period: file.timing.rep_period_us,
        detector_recovery: file.timing.detector_recovery_us,
        seed,
    };
    config.validate()?;
    let pileup = check_pileup(&config);
    if !pileup.pass {
        return Err(CliError::config_field(
            "timing.rep_period_us",
            format!(
                "pile-up check failed: rep_period {} us < detector_recovery {} us",
                pileup.rep_period, pileup.detector_recovery
            ),
        ));
    }
    Ok(config)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PipelineFile {
    input: Option<InputSection>,
    counts: Option<CountsSection>,
    herald: HeraldSection,
    #[serde(default)]
    fit: FitSection,
    #[serde(default)]
    report: ReportSection,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct InputSection {
    on: PathBuf,
    off: PathBuf,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CountsSection {
    on: Vec<f64>,
    on_uncertainty: Option<Vec<f64>>,
    off: Vec<f64>,
    off_uncertainty: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeraldSection {
    n_on: Option<f64>,
    n_off: Option<f64>,
    xi: Option<f64>,
    u_xi: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FitSection {
    peaks: Option<usize>,
    bins: Option<usize>,
    weighting: Option<FitWeighting>,
    #[serde(default)]
    offset: bool,
    init: Option<Vec<InitPeak>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct InitPeak {
    amplitude: f64,
    center: f64,
    sigma: f64,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReportSection {
    out: Option<PathBuf>,
    formats: Option<Vec<ReportFormat>>,
    covariance: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
    Txt,
}

/// How the purity enters the calibration.
#[derive(Debug, Clone, PartialEq)]
pub enum HeraldInput {
    Counts(HeraldStats),
    Purity(HeraldPurity),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitSettings {
    pub peaks: Option<usize>,
    pub bins: usize,
    pub weighting: FitWeighting,
    pub offset: bool,
    pub init: Option<Vec<GaussianPeak>>,
}

/// A validated pipeline file with paths resolved against its directory.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub inputs: Option<(PathBuf, PathBuf)>,
    pub counts: Option<(CountVector, CountVector)>,
    pub herald: HeraldInput,
    pub fit: FitSettings,
    pub out: Option<PathBuf>,
    pub formats: Vec<ReportFormat>,
    pub covariance: Option<PathBuf>,
}

fn count_vector(name: &str, counts: Vec<f64>, u: Option<Vec<f64>>) -> CliResult<CountVector> {
    let built = match u {
        Some(u) => CountVector::new(counts, u),
        None => CountVector::poisson(counts),
    };
    built.map_err(|e| CliError::config_field(format!("counts.{name}"), e.to_string()))
}

pub fn load_pipeline(path: &Path) -> CliResult<PipelineConfig> {
    let file: PipelineFile = parse_toml(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let resolve = |p: PathBuf| if p.is_absolute() { p } else { base.join(p) };

    let herald = match file.herald {
        HeraldSection {
            n_on: Some(n_on),
            n_off: Some(n_off),
            xi: None,
            u_xi: None,
        } => HeraldInput::Counts(
            HeraldStats::poisson(n_on, n_off)
                .map_err(|e| CliError::config_field("herald.n_on", e.to_string()))?,
        ),
        HeraldSection {
            n_on: None,
            n_off: None,
            xi: Some(xi),
            u_xi,
        } => HeraldInput::Purity(
            HeraldPurity::new(xi, u_xi.unwrap_or(0.0))
                .map_err(|e| CliError::config_field("herald.xi", e.to_string()))?,
        ),
        _ => {
            return Err(CliError::config_field(
                "herald",
                "give exactly one of (n_on, n_off) and (xi, u_xi)",
            ))
        }
    };

    let counts = match file.counts {
        Some(c) => Some((
            count_vector("on", c.on, c.on_uncertainty)?,
            count_vector("off", c.off, c.off_uncertainty)?,
        )),
        None => None,
    };
    let inputs = file.input.map(|i| (resolve(i.on), resolve(i.off)));
    if inputs.is_none() && counts.is_none() {
        return Err(CliError::config_field(
            "input",
            "missing section `input` (or `counts`)",
        ));
    }
    if let Some((on, off)) = &inputs {
        for (field, p) in [("input.on", on), ("input.off", off)] {
            if !p.is_file() {
                return Err(CliError::config_field(
                    field,
                    format!("{} does not exist", p.display()),
                ));
            }
        }
    }

    let fit = FitSettings {
        peaks: file.fit.peaks,
        bins: file.fit.bins.unwrap_or(DEFAULT_BINS),
        weighting: file.fit.weighting.unwrap_or_default(),
        offset: file.fit.offset,
        init: file.fit.init.map(|v| {
            v.into_iter()
                .map(|p| GaussianPeak::new(p.amplitude, p.center, p.sigma))
                .collect()
        }),
    };
    if fit.peaks == Some(0) {
        return Err(CliError::config_field("fit.peaks", "must be at least 1"));
    }
    if fit.bins < 2 {
        return Err(CliError::config_field("fit.bins", "must be at least 2"));
    }
    let covariance = file.report.covariance.map(resolve);
    if let Some(p) = &covariance {
        if !p.is_file() {
            return Err(CliError::config_field(
                "report.covariance",
                format!("{} does not exist", p.display()),
            ));
        }
    }
    Ok(PipelineConfig {
        inputs,
        counts,
        herald,
        fit,
        out: file.report.out.map(resolve),
        formats: file
            .report
            .formats
            .unwrap_or_else(|| vec![ReportFormat::Json, ReportFormat::Csv, ReportFormat::Txt]),
        covariance,
    })
}

/// Reads a covariance CSV: header `quantity,<name>,...` then one row per
/// quantity. Rows and columns are reordered to `names`.
pub fn load_covariance(path: &Path, names: &[String]) -> CliResult<Vec<Vec<f64>>> {
    let bad =
        |msg: String| CliError::config_field("covariance", format!("{}: {msg}", path.display()));
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| bad(e.to_string()))?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| bad(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.first().map(String::as_str) != Some("quantity") {
        return Err(bad("first column must be `quantity`".into()));
    }
    let columns = &header[1..];
    let mut rows: Vec<(String, Vec<f64>)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let values = rec
            .iter()
            .skip(1)
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|_| bad(format!("'{v}' is not a number")))
            })
            .collect::<CliResult<Vec<f64>>>()?;
        if values.len() != columns.len() {
            return Err(bad(format!("row {} has {} values", &rec[0], values.len())));
        }
        rows.push((rec[0].to_string(), values));
    }
    let index = |name: &str, among: &[String]| {
        among
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| bad(format!("quantity {name} is missing")))
    };
    let row_names: Vec<String> = rows.iter().map(|r| r.0.clone()).collect();
    let mut cov = vec![vec![0.0; names.len()]; names.len()];
    for (i, a) in names.iter().enumerate() {
        let r = index(a, &row_names)?;
        for (j, b) in names.iter().enumerate() {
            cov[i][j] = rows[r].1[index(b, columns)?];
        }
    }
    Ok(cov)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, text).unwrap();
        p
    }

    const EXPERIMENT: &str = r#"
seed = 4
expected_heralds = 1000.0

[source]
gamma_true = 0.3
xi_true = 0.9
herald_prob = 0.1
background_mean = 0.2

[timing]
rep_period_us = 25.0
detector_recovery_us = 10.4

[[detector.peaks]]
center = 0.0
width = 0.1

[[detector.peaks]]
center = 1.0
width = 0.12
"#;

    #[test]
    fn experiment_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "e.toml", EXPERIMENT);
        let c = load_experiment(&p, None).unwrap();
        assert_eq!(c.seed, 4);
        assert_eq!(c.n_pulses, 10_000);
        assert_eq!(c.peak_model.len(), 2);
        assert_eq!(load_experiment(&p, Some(9)).unwrap().seed, 9);
    }

    #[test]
    fn missing_seed_names_the_field() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "e.toml", &EXPERIMENT.replace("seed = 4", ""));
        let e = load_experiment(&p, None).unwrap_err();
        assert_eq!(e.field.as_deref(), Some("seed"));
        let p = write(
            dir.path(),
            "f.toml",
            &EXPERIMENT.replace("gamma_true = 0.3", ""),
        );
        let e = load_experiment(&p, None).unwrap_err();
        assert_eq!(e.field.as_deref(), Some("gamma_true"));
    }

    #[test]
    fn pileup_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "e.toml", &EXPERIMENT.replace("25.0", "5.0"));
        let e = load_experiment(&p, None).unwrap_err();
        assert_eq!(e.kind.code(), 2);
        assert!(e.message.contains("pile-up"), "{}", e.message);
    }

    #[test]
    fn herald_needs_exactly_one_form() {
        let dir = tempfile::tempdir().unwrap();
        let base = "[counts]\non = [10.0, 1.0]\noff = [10.0, 0.5]\n";
        let both = format!("{base}[herald]\nn_on = 100.0\nn_off = 1.0\nxi = 0.9\n");
        let e = load_pipeline(&write(dir.path(), "a.toml", &both)).unwrap_err();
        assert_eq!(e.field.as_deref(), Some("herald"));
        let ok = format!("{base}[herald]\nn_on = 100.0\nn_off = 1.0\n");
        let c = load_pipeline(&write(dir.path(), "b.toml", &ok)).unwrap();
        assert!(matches!(c.herald, HeraldInput::Counts(_)));
    }

    #[test]
    fn referenced_files_must_exist() {
        let dir = tempfile::tempdir().unwrap();
        let text = "[input]\non = \"on.csv\"\noff = \"off.csv\"\n[herald]\nxi = 0.9\n";
        let p = write(dir.path(), "p.toml", text);
        let e = load_pipeline(&p).unwrap_err();
        assert_eq!(e.field.as_deref(), Some("input.on"));
        write(dir.path(), "on.csv", "amplitude\n1\n");
        write(dir.path(), "off.csv", "amplitude\n1\n");
        let c = load_pipeline(&p).unwrap();
        assert_eq!(c.inputs.unwrap().0, dir.path().join("on.csv"));
    }

    #[test]
    fn covariance_is_reordered_by_name() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "c.csv", "quantity,b,a\na,2,1\nb,4,2\n");
        let names = vec!["a".to_string(), "b".to_string()];
        let cov = load_covariance(&p, &names).unwrap();
        assert_eq!(cov, vec![vec![1.0, 2.0], vec![2.0, 4.0]]);
        let missing = vec!["a".to_string(), "c".to_string()];
        assert!(load_covariance(&p, &missing).is_err());
    }
}
