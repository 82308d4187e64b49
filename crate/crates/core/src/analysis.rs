//! Accuracy, ranked-output variance, correlation, cost profiling and logit export.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{assemble_batch, build_batches, Dataset};
use crate::error::{Error, Result};
use crate::losses::log_softmax_into;
use crate::nn::Mode;
use crate::tensor::Tensor;
use crate::train::{Network, Trainer};

/// Column order of the metrics CSV.
pub const METRICS_COLUMNS: [&str; 7] = [
    "epoch",
    "split",
    "top1_accuracy",
    "mean_loss",
    "ranked_output_variance",
    "seconds_per_iteration",
    "learning_rate",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    /// 1-based epoch number.
    pub epoch: usize,
    pub split: String,
    pub top1_accuracy: f64,
    pub mean_loss: f64,
    pub ranked_output_variance: f64,
    pub seconds_per_iteration: f64,
    pub learning_rate: f64,
}

/// Append-only per-epoch log with at most one row per `(epoch, split)`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsLog {
    rows: Vec<MetricsRow>,
}

impl MetricsLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, row: MetricsRow) -> Result<()> {
        if self.rows.iter().any(|r| r.epoch == row.epoch && r.split == row.split) {
            return Err(Error::invalid(format!(
                "metrics row for epoch {} split `{}` already recorded",
                row.epoch, row.split
            )));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn rows(&self) -> &[MetricsRow] {
        &self.rows
    }

    pub fn split(&self, split: &str) -> Vec<&MetricsRow> {
        self.rows.iter().filter(|r| r.split == split).collect()
    }

    pub fn last(&self, split: &str) -> Option<&MetricsRow> {
        self.rows.iter().rev().find(|r| r.split == split)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        if self.rows.is_empty() {
            w.write_record(METRICS_COLUMNS)?;
        }
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let headers = r.headers()?.clone();
        if headers.iter().ne(METRICS_COLUMNS) {
            return Err(Error::invalid(format!(
                "{}: unexpected columns {:?}",
                path.display(),
                headers.iter().collect::<Vec<_>>()
            )));
        }
        let mut log = MetricsLog::new();
        for row in r.deserialize() {
            log.push(row?)?;
        }
        Ok(log)
    }
}

/// Fraction of rows whose first maximal logit is at the label.
pub fn top1_accuracy(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    if logits.batch() == 0 {
        return Err(Error::invalid("top-1 accuracy of an empty batch"));
    }
    if logits.shape().len() != 2 || logits.batch() != labels.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("[{}, K]", labels.len()),
            actual: format!("{:?}", logits.shape()),
        });
    }
    let correct = (0..labels.len()).filter(|&i| argmax(logits.item(i)) == labels[i]).count();
    Ok(correct as f64 / labels.len() as f64)
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum VarianceSpace {
    /// Raw logits.
    #[default]
    Logits,
    /// Softmax probabilities at temperature 1.
    Probabilities,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VarianceReport {
    /// Population variance of each rank position across samples.
    pub per_position: Vec<f64>,
    pub mean: f64,
}

/// Sorts each row ascending and takes the population variance per rank position.
pub fn ranked_output_variance(logits: &Tensor) -> Result<VarianceReport> {
    ranked_output_variance_in(logits, VarianceSpace::Logits)
}

pub fn ranked_output_variance_in(logits: &Tensor, space: VarianceSpace) -> Result<VarianceReport> {
    let n = logits.batch();
    if n < 2 || logits.shape().len() != 2 {
        return Err(Error::invalid(format!(
            "ranked output variance needs >= 2 rows of a [N, K] batch, got {:?}",
            logits.shape()
        )));
    }
    let k = logits.item_len();
    let mut ranked = Vec::with_capacity(n * k);
    let mut buf = vec![0.0; k];
    for i in 0..n {
        match space {
            VarianceSpace::Logits => buf.copy_from_slice(logits.item(i)),
            VarianceSpace::Probabilities => {
                log_softmax_into(logits.item(i), 1.0, &mut buf);
                buf.iter_mut().for_each(|v| *v = v.exp());
            }
        }
        buf.sort_by(f64::total_cmp);
        ranked.extend_from_slice(&buf);
    }
    let per_position: Vec<f64> = (0..k)
        .map(|j| {
            let mean = (0..n).map(|i| ranked[i * k + j]).sum::<f64>() / n as f64;
            (0..n).map(|i| (ranked[i * k + j] - mean).powi(2)).sum::<f64>() / n as f64
        })
        .collect();
    let mean = per_position.iter().sum::<f64>() / k as f64;
    Ok(VarianceReport { per_position, mean })
}

/// Pearson product-moment correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 3 {
        return Err(Error::invalid(format!(
            "pearson needs two equal-length series of >= 3 points, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::invalid("pearson input contains non-finite values"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("one of the series is constant".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ProfileOptions {
    pub warmup: usize,
    pub iterations: usize,
}

impl Default for ProfileOptions {
    fn default() -> Self {
        Self { warmup: 10, iterations: 50 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProfileReport {
    /// Mean over the measured iterations.
    pub seconds_per_iteration: f64,
    /// Less sensitive to preemption by other processes than the mean.
    pub median_seconds_per_iteration: f64,
    /// Trainable parameters, including the auxiliary classifier when attached.
    pub parameter_count: usize,
    pub checkpoint_bytes: usize,
    pub iterations: usize,
}

/// Feeds one trainer its own batch stream and records per-step wall time.
struct StepTimer<'a> {
    trainer: &'a mut Trainer,
    dataset: &'a Dataset,
    rng: ChaCha8Rng,
    batches: Vec<Vec<usize>>,
    epoch: usize,
    times: Vec<f64>,
}

impl<'a> StepTimer<'a> {
    fn new(trainer: &'a mut Trainer, dataset: &'a Dataset) -> Self {
        let seed = trainer.config().batch.shuffle_seed;
        Self {
            trainer,
            dataset,
            rng: ChaCha8Rng::seed_from_u64(seed),
            batches: Vec::new(),
            epoch: 0,
            times: Vec::new(),
        }
    }

    fn tick(&mut self, record: bool) -> Result<()> {
        if self.batches.is_empty() {
            self.batches = build_batches(self.dataset.len(), &self.trainer.config().batch, self.epoch)?;
            self.batches.reverse();
            self.epoch += 1;
        }
        let indices = self.batches.pop().expect("non-empty");
        let policy = self.trainer.config().augmentation;
        let (x, labels) = assemble_batch(self.dataset, &indices, policy.as_ref(), &mut self.rng);
        let start = Instant::now();
        self.trainer.step(&x, &labels)?;
        if record {
            self.times.push(start.elapsed().as_secs_f64());
        }
        Ok(())
    }

    fn report(mut self) -> ProfileReport {
        let n = self.times.len();
        let mean = self.times.iter().sum::<f64>() / n as f64;
        self.times.sort_by(f64::total_cmp);
        let median =
            if n.is_multiple_of(2) { (self.times[n / 2 - 1] + self.times[n / 2]) / 2.0 } else { self.times[n / 2] };
        ProfileReport {
            seconds_per_iteration: mean,
            median_seconds_per_iteration: median,
            parameter_count: self.trainer.network().parameter_count(),
            checkpoint_bytes: self.trainer.checkpoint("profile").payload_bytes().len(),
            iterations: n,
        }
    }
}

fn check_options(options: &ProfileOptions) -> Result<()> {
    if options.iterations < 50 {
        return Err(Error::invalid(format!("profiling needs >= 50 measured iterations, got {}", options.iterations)));
    }
    Ok(())
}

/// Times training steps (forward, loss, backward, update). Batch assembly is excluded.
pub fn profile_run(trainer: &mut Trainer, dataset: &Dataset, options: ProfileOptions) -> Result<ProfileReport> {
    check_options(&options)?;
    let mut timer = StepTimer::new(trainer, dataset);
    for i in 0..options.warmup + options.iterations {
        timer.tick(i >= options.warmup)?;
    }
    Ok(timer.report())
}

/// Profiles two trainers with their steps interleaved one-for-one, so slow drifts in machine
/// speed affect both alike. Useful for overhead ratios.
pub fn profile_pair(
    first: &mut Trainer,
    second: &mut Trainer,
    dataset: &Dataset,
    options: ProfileOptions,
) -> Result<(ProfileReport, ProfileReport)> {
    check_options(&options)?;
    let mut a = StepTimer::new(first, dataset);
    let mut b = StepTimer::new(second, dataset);
    for i in 0..options.warmup + options.iterations {
        a.tick(i >= options.warmup)?;
        b.tick(i >= options.warmup)?;
    }
    Ok((a.report(), b.report()))
}

/// Writes one line per sample, `label logit_0 ... logit_{K-1}`, after a `#` header.
pub fn export_logits(network: &mut Network, dataset: &Dataset, path: &Path, batch_size: usize) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let k = network.num_classes();
    let header: Vec<String> =
        std::iter::once("label".to_string()).chain((0..k).map(|j| format!("logit_{j}"))).collect();
    writeln!(w, "# {}", header.join(" ")).map_err(|e| Error::io(path, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let indices: Vec<usize> = (0..dataset.len()).collect();
    for chunk in indices.chunks(batch_size.max(1)) {
        let (x, labels) = assemble_batch(dataset, chunk, None, &mut rng);
        let logits = network.forward_main(&x, Mode::Eval)?;
        for (i, y) in labels.iter().enumerate() {
            let mut line = y.to_string();
            for v in logits.item(i) {
                line.push(' ');
                line.push_str(&format!("{v:.16e}"));
            }
            writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Parses a file written by [`export_logits`].
pub fn read_logits_dump(path: &Path) -> Result<(Vec<usize>, Vec<Vec<f64>>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut labels = Vec::new();
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let bad = || Error::invalid(format!("{}:{}: malformed logits row", path.display(), n + 1));
        let mut fields = line.split_whitespace();
        labels.push(fields.next().ok_or_else(bad)?.parse().map_err(|_| bad())?);
        rows.push(fields.map(|f| f.parse::<f64>().map_err(|_| bad())).collect::<Result<Vec<_>>>()?);
    }
    Ok((labels, rows))
}
