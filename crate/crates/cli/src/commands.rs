use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use pnrcal::calibration::{calibrate, CalibrationResult};
use pnrcal::histogram::{
    build_histogram, extract_counts, fit_mixture_with, AmplitudeHistogram, FitOptions,
    GOOD_FIT_RATIO,
};
use pnrcal::io::{read_amplitude_data, write_raw_run, AmplitudeData};
use pnrcal::model::{estimate_xi, CountVector, HeraldPurity};
use pnrcal::report::{
    budget_csv, budget_text, closure_text, format_value, CalibrationReport, FitRecord, Metadata,
};
use pnrcal::simulator::{closure_test, simulate_run, ClosureOptions, ClosureReport};
use pnrcal::uncertainty::InputVector;
use pnrcal::CalibError;
use serde::Serialize;

use crate::config::{
    load_covariance, load_experiment, load_pipeline, FitSettings, HeraldInput, PipelineConfig,
    ReportFormat,
};
use crate::error::{quote, CliError, CliResult, ExitKind};

const DEFAULT_PEAKS: usize = 3;
const MIN_CLOSURE_COMPLETION: f64 = 0.9;

/// Efficiency calibration of photon-number-resolving detectors.
///
/// Exit codes: 0 success, 1 runtime error, 2 usage or configuration error,
/// 3 fit failure (or closure completed for fewer than 90 % of seeds),
/// 4 an estimator hit an uninformative bin (reports are still written).
#[derive(Debug, Parser)]
#[command(name = "pnrcal", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one heralded run and write on.csv, off.csv and truth.json.
    Simulate(SimulateArgs),
    /// Fit a Gaussian mixture to one histogram or amplitude file.
    Fit(FitArgs),
    /// Run the full calibration and write report.json, budget.csv and budget.txt.
    Calibrate(CalibrateArgs),
    /// Like calibrate, but print the uncertainty budget and write only the budget files.
    Budget(CalibrateArgs),
    /// Repeat simulate-fit-calibrate over many seeds and summarize bias and pulls.
    Closure(ClosureArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Experiment file (TOML).
    pub config: PathBuf,
    /// Overrides the seed in the file.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output run directory.
    #[arg(long, default_value = "run")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Histogram CSV (`bin_center,count`) or amplitude CSV (`amplitude`).
    pub input: PathBuf,
    /// Number of bins when the input holds raw amplitudes.
    #[arg(long, default_value_t = pnrcal::histogram::DEFAULT_BINS)]
    pub bins: usize,
    /// Number of Gaussian peaks.
    #[arg(long, default_value_t = DEFAULT_PEAKS)]
    pub peaks: usize,
    /// Output directory for fit.json.
    #[arg(long, default_value = "fit")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Pipeline file (TOML).
    pub config: PathBuf,
    /// Take counts from the [counts] section instead of fitting histograms.
    #[arg(long)]
    pub bypass_fit: bool,
    /// Input covariance CSV; overrides [report] covariance.
    #[arg(long)]
    pub covariance: Option<PathBuf>,
    /// Overrides [fit] bins.
    #[arg(long)]
    pub bins: Option<usize>,
    /// Overrides [fit] peaks.
    #[arg(long)]
    pub peaks: Option<usize>,
    /// Output directory; overrides [report] out.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ClosureArgs {
    /// Experiment file (TOML).
    pub config: PathBuf,
    /// Number of seeds (at least 2).
    #[arg(long)]
    pub seeds: usize,
    /// Overrides the base seed in the file.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long, default_value_t = pnrcal::histogram::DEFAULT_BINS)]
    pub bins: usize,
    #[arg(long, default_value_t = DEFAULT_PEAKS)]
    pub peaks: usize,
    /// Output directory for closure.json and closure.txt.
    #[arg(long, default_value = "closure")]
    pub out: PathBuf,
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Simulate(a) => simulate(&a),
        Command::Fit(a) => fit(&a),
        Command::Calibrate(a) => calibrate_cmd(&a, false),
        Command::Budget(a) => calibrate_cmd(&a, true),
        Command::Closure(a) => closure(&a),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn warn(kind: &str, fields: &[(&str, String)]) {
    let mut line = format!("warning={kind}");
    for (k, v) in fields {
        line.push_str(&format!(" {k}={v}"));
    }
    eprintln!("{line}");
}

fn simulate(args: &SimulateArgs) -> CliResult<()> {
    let config = load_experiment(&args.config, args.seed)?;
    let run = simulate_run(&config)?;
    write_raw_run(&args.out, &config, &run)?;
    let t = &run.tallies;
    println!("pulses          {}", t.pulses);
    println!(
        "heralds         {} ({} true, {} false)",
        t.heralds, t.true_heralds, t.false_heralds
    );
    println!(
        "detected        {} of the true heralds",
        t.heralded_detections
    );
    println!("on  photon numbers {:?}", t.on_photon_numbers);
    println!("off photon numbers {:?}", t.off_photon_numbers);
    println!("wrote {}", args.out.display());
    Ok(())
}

fn fit_error(label: &str, e: CalibError) -> CliError {
    CliError {
        field: Some(label.to_string()),
        ..CliError::fit(e.to_string())
    }
}

fn fit_histogram(
    label: &str,
    hist: &AmplitudeHistogram,
    opts: &FitOptions,
) -> CliResult<FitRecord> {
    let fit = fit_mixture_with(hist, opts).map_err(|e| fit_error(label, e))?;
    let counts = extract_counts(&fit, hist.bin_width()).map_err(|e| fit_error(label, e))?;
    if let Some(q) = fit.quality.filter(|q| !q.is_good()) {
        warn(
            "fit_quality",
            &[
                ("histogram", label.to_string()),
                ("ratio", q.ratio.to_string()),
                ("threshold", GOOD_FIT_RATIO.to_string()),
            ],
        );
    }
    let edges = hist.edges();
    Ok(FitRecord {
        label: label.to_string(),
        n_bins: hist.n_bins(),
        bin_width: hist.bin_width(),
        range: (edges[0], edges[edges.len() - 1]),
        fit,
        counts,
    })
}

fn print_fit(record: &FitRecord) {
    println!(
        "{} histogram: {} bins of width {}",
        record.label, record.n_bins, record.bin_width
    );
    for (n, p) in record.fit.peaks.iter().enumerate() {
        println!(
            "  peak {n}: center {}  sigma {}  count {}",
            format_value(p.center, Some(p.u_center)),
            format_value(p.sigma, Some(p.u_sigma)),
            format_value(
                record.counts.counts()[n],
                Some(record.counts.uncertainties()[n])
            ),
        );
    }
    if let Some(q) = record.fit.quality {
        println!(
            "  reduced chi2 {:.4}  ratio {:.3e}  ({})",
            q.reduced_chi_square,
            q.ratio,
            if q.is_good() { "good" } else { "poor" }
        );
    }
}

fn fit(args: &FitArgs) -> CliResult<()> {
    let hist = match read_amplitude_data(&args.input)? {
        AmplitudeData::Histogram(h) => h,
        AmplitudeData::Samples(s) => build_histogram(&s, args.bins, None)?,
    };
    let record = fit_histogram("input", &hist, &FitOptions::new(args.peaks))?;
    fs::create_dir_all(&args.out)?;
    #[derive(Serialize)]
    struct FitDocument<'a> {
        metadata: Metadata,
        input: String,
        record: &'a FitRecord,
    }
    write_json(
        &args.out.join("fit.json"),
        &FitDocument {
            metadata: Metadata::now(),
            input: args.input.display().to_string(),
            record: &record,
        },
    )?;
    print_fit(&record);
    Ok(())
}

/// Loads the ON and OFF inputs as histograms. Raw amplitudes are binned
/// over their common range so both histograms share edges.
fn load_histograms(
    on: &Path,
    off: &Path,
    bins: usize,
) -> CliResult<(AmplitudeHistogram, AmplitudeHistogram)> {
    let on = read_amplitude_data(on)?;
    let off = read_amplitude_data(off)?;
    let range = match (&on, &off) {
        (AmplitudeData::Samples(a), AmplitudeData::Samples(b)) => {
            let lo = a.iter().chain(b).copied().fold(f64::INFINITY, f64::min);
            let hi = a.iter().chain(b).copied().fold(f64::NEG_INFINITY, f64::max);
            (hi > lo).then_some((lo, hi))
        }
        _ => None,
    };
    let to_hist = |d: AmplitudeData| match d {
        AmplitudeData::Histogram(h) => Ok(h),
        AmplitudeData::Samples(s) => build_histogram(&s, bins, range),
    };
    Ok((to_hist(on)?, to_hist(off)?))
}

fn fit_options(settings: &FitSettings, peaks: usize) -> FitOptions {
    let mut opts = FitOptions::new(peaks);
    opts.weighting = settings.weighting;
    opts.with_offset = settings.offset;
    opts.init = settings.init.clone();
    opts
}

struct Counts {
    on: CountVector,
    off: CountVector,
    fits: Vec<FitRecord>,
}

fn obtain_counts(cfg: &PipelineConfig, args: &CalibrateArgs) -> CliResult<Counts> {
    if args.bypass_fit {
        let (on, off) = cfg.counts.clone().ok_or_else(|| {
            CliError::config_field("counts", "--bypass-fit needs a [counts] section")
        })?;
        return Ok(Counts {
            on,
            off,
            fits: Vec::new(),
        });
    }
    let (on_path, off_path) = cfg.inputs.as_ref().ok_or_else(|| {
        CliError::config_field(
            "input",
            "missing section `input` (use --bypass-fit for [counts])",
        )
    })?;
    let bins = args.bins.unwrap_or(cfg.fit.bins);
    let peaks = args.peaks.or(cfg.fit.peaks).unwrap_or(DEFAULT_PEAKS);
    if bins < 2 || peaks == 0 {
        return Err(CliError::config("need --bins >= 2 and --peaks >= 1"));
    }
    let (h_on, h_off) = load_histograms(on_path, off_path, bins)?;
    let opts = fit_options(&cfg.fit, peaks);
    let on = fit_histogram("on", &h_on, &opts)?;
    let off = fit_histogram("off", &h_off, &opts)?;
    Ok(Counts {
        on: on.counts.clone(),
        off: off.counts.clone(),
        fits: vec![on, off],
    })
}

fn purity(herald: &HeraldInput) -> CliResult<HeraldPurity> {
    match herald {
        HeraldInput::Purity(p) => Ok(*p),
        HeraldInput::Counts(stats) => {
            estimate_xi(stats).map_err(|e| CliError::config_field("herald", e.to_string()))
        }
    }
}

fn as_config_error(e: CalibError) -> CliError {
    match e {
        CalibError::Domain(msg) => CliError::config(msg),
        other => other.into(),
    }
}

fn run_calibration(
    cfg: &PipelineConfig,
    args: &CalibrateArgs,
) -> CliResult<(CalibrationResult, Vec<FitRecord>)> {
    let counts = obtain_counts(cfg, args)?;
    let xi = purity(&cfg.herald)?;
    let covariance = match args.covariance.as_ref().or(cfg.covariance.as_ref()) {
        Some(path) => {
            let inputs =
                InputVector::from_counts(&counts.on, &counts.off, &xi).map_err(as_config_error)?;
            Some(load_covariance(path, inputs.names())?)
        }
        None => None,
    };
    let result = calibrate(&counts.on, &counts.off, &xi, covariance).map_err(as_config_error)?;
    Ok((result, counts.fits))
}

fn uninformative_error(result: &CalibrationResult) -> CliResult<()> {
    let failed: Vec<String> = result
        .failures
        .iter()
        .filter(|f| f.uninformative)
        .map(|f| f.source.to_string())
        .collect();
    if failed.is_empty() {
        return Ok(());
    }
    Err(CliError {
        field: Some(failed.join(",")),
        ..CliError::new(
            ExitKind::Uninformative,
            format!(
                "uninformative bin for {}; report written",
                failed.join(", ")
            ),
        )
    })
}

fn calibrate_cmd(args: &CalibrateArgs, budget_only: bool) -> CliResult<()> {
    let cfg = load_pipeline(&args.config)?;
    let (result, fits) = run_calibration(&cfg, args)?;
    let out = args
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("report"));
    fs::create_dir_all(&out)?;

    let wants = |f: ReportFormat| budget_only || cfg.formats.contains(&f);
    if wants(ReportFormat::Csv) {
        fs::write(out.join("budget.csv"), budget_csv(&result))?;
    }
    if wants(ReportFormat::Txt) {
        fs::write(out.join("budget.txt"), budget_text(&result))?;
    }

    if budget_only {
        print!("{}", budget_text(&result));
    } else {
        let report = CalibrationReport::new(Metadata::now(), result.clone()).with_fits(fits);
        if cfg.formats.contains(&ReportFormat::Json) {
            write_json(&out.join("report.json"), &report)?;
        }
        for r in &report.rendered {
            println!("{:<14} = {}", r.source.to_string(), r.percent);
        }
        for f in &report.result.failures {
            println!("{:<14} : {}", f.source.to_string(), f.message);
        }
        for w in &report.warnings {
            warn("estimate", &[("message", quote(w))]);
        }
    }
    uninformative_error(&result)
}

#[derive(Serialize)]
struct ClosureDocument<'a> {
    metadata: Metadata,
    closure: &'a ClosureReport,
}

fn closure(args: &ClosureArgs) -> CliResult<()> {
    if args.seeds < 2 {
        return Err(CliError::config_field(
            "seeds",
            format!("closure needs at least 2 seeds, got {}", args.seeds),
        ));
    }
    if args.jobs == Some(0) {
        return Err(CliError::config_field("jobs", "must be at least 1"));
    }
    let config = load_experiment(&args.config, args.seed)?;
    let options = ClosureOptions {
        bins: args.bins,
        n_peaks: args.peaks,
        jobs: args.jobs,
        ..ClosureOptions::default()
    };
    let report = closure_test(&config, args.seeds, &options)?;
    fs::create_dir_all(&args.out)?;
    write_json(
        &args.out.join("closure.json"),
        &ClosureDocument {
            metadata: Metadata::now(),
            closure: &report,
        },
    )?;
    let text = closure_text(&report);
    fs::write(args.out.join("closure.txt"), &text)?;
    print!("{text}");
    let fraction = report.completion_fraction();
    if fraction < MIN_CLOSURE_COMPLETION {
        return Err(CliError::new(
            ExitKind::Fit,
            format!(
                "closure completed for {} of {} seeds (below {} %)",
                report.completed,
                report.n_seeds,
                MIN_CLOSURE_COMPLETION * 100.0
            ),
        ));
    }
    Ok(())
}
