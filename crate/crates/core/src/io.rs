//! File formats: histogram and amplitude CSVs, and run directories.
//!
//! * histogram CSV: header `bin_center,count`, uniformly spaced centers
//! * amplitude CSV: single column `amplitude`
//! * run directory: `on.csv`, `off.csv` (amplitude CSVs) and `truth.json`

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CalibError, Result};
use crate::histogram::AmplitudeHistogram;
use crate::simulator::{ExperimentConfig, RawRun, Tallies};

/// Contents of an input file, told apart by its header.
#[derive(Debug, Clone, PartialEq)]
pub enum AmplitudeData {
    Histogram(AmplitudeHistogram),
    Samples(Vec<f64>),
}

fn parse_f64(field: &str, line: usize) -> Result<f64> {
    field
        .trim()
        .parse()
        .map_err(|_| CalibError::Parse(format!("line {line}: '{field}' is not a number")))
}

pub fn read_histogram_csv<R: Read>(reader: R) -> Result<AmplitudeHistogram> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.len() != 2 || &headers[0] != "bin_center" || &headers[1] != "count" {
        return Err(CalibError::Parse(format!(
            "expected header 'bin_center,count', found '{}'",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut centers = Vec::new();
    let mut counts = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        centers.push(parse_f64(&rec[0], k + 2)?);
        counts.push(parse_f64(&rec[1], k + 2)?);
    }
    AmplitudeHistogram::from_centers(&centers, counts)
}

pub fn write_histogram_csv<W: Write>(writer: W, hist: &AmplitudeHistogram) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["bin_center", "count"])?;
    for (c, n) in hist.centers().iter().zip(hist.counts()) {
        w.write_record([c.to_string(), n.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_amplitudes_csv<R: Read>(reader: R) -> Result<Vec<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.len() != 1 || &headers[0] != "amplitude" {
        return Err(CalibError::Parse(format!(
            "expected header 'amplitude', found '{}'",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    rdr.records()
        .enumerate()
        .map(|(k, rec)| parse_f64(&rec?[0], k + 2))
        .collect()
}

pub fn write_amplitudes_csv<W: Write>(writer: W, samples: &[f64]) -> Result<()> {
    let mut w = std::io::BufWriter::new(writer);
    writeln!(w, "amplitude")?;
    for s in samples {
        writeln!(w, "{s}")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a histogram or amplitude CSV, dispatching on the header line.
pub fn read_amplitude_data(path: &Path) -> Result<AmplitudeData> {
    let text = fs::read_to_string(path)?;
    let header = text.lines().next().unwrap_or("").trim();
    if header.starts_with("bin_center") {
        read_histogram_csv(text.as_bytes()).map(AmplitudeData::Histogram)
    } else if header == "amplitude" {
        read_amplitudes_csv(text.as_bytes()).map(AmplitudeData::Samples)
    } else {
        Err(CalibError::Parse(format!(
            "{}: unrecognized header '{header}'",
            path.display()
        )))
    }
}

/// `truth.json` of a run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTruth {
    pub config: ExperimentConfig,
    pub tallies: Tallies,
}

pub fn write_raw_run(dir: &Path, config: &ExperimentConfig, run: &RawRun) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_amplitudes_csv(fs::File::create(dir.join("on.csv"))?, &run.on_amplitudes)?;
    write_amplitudes_csv(fs::File::create(dir.join("off.csv"))?, &run.off_amplitudes)?;
    let truth = RunTruth {
        config: config.clone(),
        tallies: run.tallies.clone(),
    };
    let mut json = serde_json::to_string_pretty(&truth)?;
    json.push('\n');
    fs::write(dir.join("truth.json"), json)?;
    Ok(())
}

pub fn read_raw_run(dir: &Path) -> Result<(RunTruth, RawRun)> {
    let truth: RunTruth = serde_json::from_str(&fs::read_to_string(dir.join("truth.json"))?)?;
    let on = read_amplitudes_csv(fs::File::open(dir.join("on.csv"))?)?;
    let off = read_amplitudes_csv(fs::File::open(dir.join("off.csv"))?)?;
    let run = RawRun {
        on_amplitudes: on,
        off_amplitudes: off,
        tallies: truth.tallies.clone(),
    };
    Ok((truth, run))
}
