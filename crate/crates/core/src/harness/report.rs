use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::metrics::{bootstrap_ci, iqm, MetricBundle, MetricSeries};
use super::HarnessError;

pub const LONG_CSV: &str = "metrics_long.csv";
pub const MANIFEST: &str = "manifest.txt";
const BOOTSTRAP_RESAMPLES: usize = 1000;

#[derive(Clone, Debug, PartialEq)]
pub struct RunManifest {
    pub version: String,
    pub seeds: Vec<u64>,
    /// `key = value` lines of the configuration shared by every seed.
    pub config_text: String,
}

impl RunManifest {
    pub fn new(config_text: String, seeds: Vec<u64>) -> Self {
        Self {
            version: format!("wimle {}", env!("CARGO_PKG_VERSION")),
            seeds,
            config_text,
        }
    }

    pub fn render(&self) -> String {
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        format!(
            "version = {}\nseeds = {}\n\n[config]\n{}",
            self.version,
            seeds.join(","),
            self.config_text
        )
    }
}

fn io(path: &Path, e: std::io::Error) -> HarnessError {
    HarnessError::Io(format!("{}: {e}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<(), HarnessError> {
    fs::write(path, text).map_err(|e| io(path, e))
}

/// Table for one metric: `step,iqm,ci_low,ci_high,seed_<s>...`. The interval
/// is left blank when fewer than two seeds report the step.
pub fn metric_table(series: &[&MetricSeries]) -> Result<String, HarnessError> {
    let steps: BTreeSet<u64> = series.iter().flat_map(|s| s.points.iter().map(|p| p.0)).collect();
    let mut out = String::from("step,iqm,ci_low,ci_high");
    for s in series {
        write!(out, ",seed_{}", s.seed).expect("writing to a String");
    }
    out.push('\n');
    let lookup = |s: &MetricSeries, step: u64| {
        s.points
            .binary_search_by_key(&step, |p| p.0)
            .ok()
            .map(|i| s.points[i].1)
    };
    for (t, step) in steps.iter().enumerate() {
        let vals: Vec<Option<f64>> = series.iter().map(|s| lookup(s, *step)).collect();
        let present: Vec<f64> = vals.iter().flatten().copied().collect();
        let point = iqm(&present)?;
        let ci = if present.len() >= 2 {
            let per_seed: Vec<Vec<f64>> = present.iter().map(|v| vec![*v]).collect();
            Some(bootstrap_ci(&per_seed, 0.95, BOOTSTRAP_RESAMPLES, t as u64)?[0])
        } else {
            None
        };
        write!(out, "{step},{point}").expect("writing to a String");
        match ci {
            Some((lo, hi)) => write!(out, ",{lo},{hi}"),
            None => write!(out, ",,"),
        }
        .expect("writing to a String");
        for v in vals {
            match v {
                Some(v) => write!(out, ",{v}"),
                None => write!(out, ","),
            }
            .expect("writing to a String");
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn long_table(bundle: &MetricBundle) -> String {
    let mut out = String::from("metric,seed,step,value\n");
    for s in bundle.series() {
        for (step, v) in &s.points {
            writeln!(out, "{},{},{step},{v}", s.name, s.seed).expect("writing to a String");
        }
    }
    out
}

/// Writes the manifest, one table per metric and the long-format table.
/// Returns the written paths, manifest first.
pub fn emit_report(bundle: &MetricBundle, dir: &Path, manifest: &RunManifest) -> Result<Vec<PathBuf>, HarnessError> {
    fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    let mut written = Vec::new();
    let path = dir.join(MANIFEST);
    write(&path, &manifest.render())?;
    written.push(path);
    if bundle.is_empty() {
        return Ok(written);
    }
    for name in bundle.metric_names() {
        let path = dir.join(format!("{name}.csv"));
        write(&path, &metric_table(&bundle.of_metric(&name))?)?;
        written.push(path);
    }
    let path = dir.join(LONG_CSV);
    write(&path, &long_table(bundle))?;
    written.push(path);
    Ok(written)
}

fn parse_f64(s: &str, line: usize) -> Result<f64, HarnessError> {
    s.parse()
        .map_err(|_| HarnessError::Metric(format!("line {line}: bad number '{s}'")))
}

pub fn parse_long_table(text: &str) -> Result<MetricBundle, HarnessError> {
    let mut bundle = MetricBundle::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(HarnessError::Metric(format!("line {}: expected 4 fields", n + 1)));
        }
        let seed = f[1]
            .parse()
            .map_err(|_| HarnessError::Metric(format!("line {}: bad seed", n + 1)))?;
        let step = f[2]
            .parse()
            .map_err(|_| HarnessError::Metric(format!("line {}: bad step", n + 1)))?;
        bundle.record(f[0], seed, step, parse_f64(f[3], n + 1)?)?;
    }
    Ok(bundle)
}

/// Recovers the per-seed series of one metric table.
pub fn parse_metric_table(name: &str, text: &str) -> Result<Vec<MetricSeries>, HarnessError> {
    let mut lines = text.lines();
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| HarnessError::Metric("empty table".into()))?
        .split(',')
        .collect();
    let mut out: Vec<MetricSeries> = header[4..]
        .iter()
        .map(|h| {
            h.strip_prefix("seed_")
                .and_then(|s| s.parse().ok())
                .map(|seed| MetricSeries::new(name, seed))
                .ok_or_else(|| HarnessError::Metric(format!("bad column '{h}'")))
        })
        .collect::<Result<_, _>>()?;
    for (n, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        let step: u64 = f[0]
            .parse()
            .map_err(|_| HarnessError::Metric(format!("line {}: bad step", n + 2)))?;
        for (s, cell) in out.iter_mut().zip(&f[4..]) {
            if !cell.is_empty() {
                s.push(step, parse_f64(cell, n + 2)?)?;
            }
        }
    }
    Ok(out)
}
