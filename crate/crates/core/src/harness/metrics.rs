use std::collections::BTreeMap;

use rand::Rng;

use super::HarnessError;
use crate::rng::RngStreams;

/// `(env step, value)` records of one metric for one seed.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricSeries {
    pub name: String,
    pub seed: u64,
    pub points: Vec<(u64, f64)>,
}

impl MetricSeries {
    pub fn new(name: impl Into<String>, seed: u64) -> Self {
        Self {
            name: name.into(),
            seed,
            points: Vec::new(),
        }
    }

    /// Appends a record; steps must be strictly increasing.
    pub fn push(&mut self, step: u64, value: f64) -> Result<(), HarnessError> {
        if let Some(&(last, _)) = self.points.last() {
            if step <= last {
                return Err(HarnessError::Metric(format!(
                    "{}: step {step} after {last} is not increasing",
                    self.name
                )));
            }
        }
        self.points.push((step, value));
        Ok(())
    }

    pub fn values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.1).collect()
    }

    pub fn last_values(&self, n: usize) -> Vec<f64> {
        let start = self.points.len().saturating_sub(n);
        self.points[start..].iter().map(|p| p.1).collect()
    }
}

/// All series of a run or of several runs, keyed by `(metric, seed)`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricBundle {
    series: BTreeMap<(String, u64), MetricSeries>,
}

impl MetricBundle {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }

    pub fn record(&mut self, name: &str, seed: u64, step: u64, value: f64) -> Result<(), HarnessError> {
        self.series
            .entry((name.to_string(), seed))
            .or_insert_with(|| MetricSeries::new(name, seed))
            .push(step, value)
    }

    pub fn insert(&mut self, s: MetricSeries) {
        self.series.insert((s.name.clone(), s.seed), s);
    }

    pub fn merge(&mut self, other: MetricBundle) {
        for (_, s) in other.series {
            self.insert(s);
        }
    }

    pub fn get(&self, name: &str, seed: u64) -> Option<&MetricSeries> {
        self.series.get(&(name.to_string(), seed))
    }

    pub fn metric_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.series.keys().map(|k| k.0.clone()).collect();
        names.dedup();
        names
    }

    pub fn seeds(&self, name: &str) -> Vec<u64> {
        self.series.keys().filter(|k| k.0 == name).map(|k| k.1).collect()
    }

    pub fn series(&self) -> impl Iterator<Item = &MetricSeries> {
        self.series.values()
    }

    pub fn of_metric(&self, name: &str) -> Vec<&MetricSeries> {
        self.series.values().filter(|s| s.name == name).collect()
    }
}

/// Interquartile mean: the mean over the middle half of the sorted sample.
/// Sorted item `i` covers `[i, i+1]` and is weighted by its overlap with
/// `[n/4, 3n/4]`, so quartile boundaries falling inside an item trim it
/// fractionally.
pub fn iqm(values: &[f64]) -> Result<f64, HarnessError> {
    if values.is_empty() {
        return Err(HarnessError::Metric("interquartile mean of an empty sample".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let (lo, hi) = (n / 4.0, 3.0 * n / 4.0);
    let mut acc = 0.0;
    for (i, x) in v.iter().enumerate() {
        let overlap = (hi.min(i as f64 + 1.0) - lo.max(i as f64)).max(0.0);
        acc += overlap * x;
    }
    Ok(acc / (hi - lo))
}

/// Linear-interpolated empirical quantile of sorted data.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

fn percentile_interval(mut stats: Vec<f64>, confidence: f64) -> (f64, f64) {
    stats.sort_by(f64::total_cmp);
    let a = (1.0 - confidence) / 2.0;
    (quantile_sorted(&stats, a), quantile_sorted(&stats, 1.0 - a))
}

fn check_bootstrap(seeds: usize, confidence: f64, resamples: usize) -> Result<(), HarnessError> {
    if seeds < 2 {
        return Err(HarnessError::Metric(format!("bootstrap needs at least 2 seeds, got {seeds}")));
    }
    if !(confidence > 0.0 && confidence < 1.0) || resamples == 0 {
        return Err(HarnessError::Metric("confidence must lie in (0, 1) with ≥ 1 resample".into()));
    }
    Ok(())
}

/// Percentile-bootstrap interval of the IQM over seeds, for each step.
/// `per_seed[s][t]` is seed `s` at step index `t`; seeds are resampled with
/// replacement and the same resampled seed set is used at every step.
pub fn bootstrap_ci(
    per_seed: &[Vec<f64>],
    confidence: f64,
    resamples: usize,
    seed: u64,
) -> Result<Vec<(f64, f64)>, HarnessError> {
    check_bootstrap(per_seed.len(), confidence, resamples)?;
    let steps = per_seed[0].len();
    if per_seed.iter().any(|s| s.len() != steps) {
        return Err(HarnessError::Metric("seed series have different lengths".into()));
    }
    let n = per_seed.len();
    let mut rng = RngStreams::new(seed).stream("bootstrap");
    let mut stats = vec![Vec::with_capacity(resamples); steps];
    let mut pick = vec![0.0; n];
    for _ in 0..resamples {
        let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        for (t, st) in stats.iter_mut().enumerate() {
            for (p, &i) in pick.iter_mut().zip(&idx) {
                *p = per_seed[i][t];
            }
            st.push(iqm(&pick)?);
        }
    }
    Ok(stats.into_iter().map(|s| percentile_interval(s, confidence)).collect())
}

/// Percentile-bootstrap interval of `IQM(a) − IQM(b)`, resampling each group's
/// seeds independently.
pub fn bootstrap_difference_ci(
    a: &[f64],
    b: &[f64],
    confidence: f64,
    resamples: usize,
    seed: u64,
) -> Result<(f64, f64), HarnessError> {
    check_bootstrap(a.len().min(b.len()), confidence, resamples)?;
    let mut rng = RngStreams::new(seed).stream("bootstrap-difference");
    let draw = |v: &[f64], rng: &mut crate::rng::StreamRng| -> Result<f64, HarnessError> {
        let s: Vec<f64> = (0..v.len()).map(|_| v[rng.random_range(0..v.len())]).collect();
        iqm(&s)
    };
    let mut stats = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        stats.push(draw(a, &mut rng)? - draw(b, &mut rng)?);
    }
    Ok(percentile_interval(stats, confidence))
}
