//! Final-state evaluation: accuracy, confusion, class bias and memory tables.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::network::Model;
use crate::tensor::Tensor;

/// Counts and rates derived from one pass over a labelled test set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// Overall accuracy over the union test set, in percent.
    pub faa: f64,
    /// Unweighted mean of `per_class_accuracy`, in percent.
    pub class_mean_accuracy: f64,
    pub per_class_accuracy: Vec<f64>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<u64>>,
    pub predicted_class_distribution: Vec<f64>,
    pub test_count: u64,
}

impl Evaluation {
    pub fn from_predictions(
        labels: &[usize],
        predictions: &[usize],
        classes: usize,
    ) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Dataset("empty test set".into()));
        }
        if labels.len() != predictions.len() {
            return Err(Error::ShapeMismatch {
                expected: vec![labels.len()],
                actual: vec![predictions.len()],
            });
        }
        let mut confusion = vec![vec![0u64; classes]; classes];
        for (&y, &p) in labels.iter().zip(predictions) {
            if y >= classes || p >= classes {
                return Err(Error::Dataset(format!(
                    "class index outside [0, {classes})"
                )));
            }
            confusion[y][p] += 1;
        }
        Ok(Self::from_confusion(confusion))
    }

    pub fn from_confusion(confusion: Vec<Vec<u64>>) -> Self {
        let classes = confusion.len();
        let total: u64 = confusion.iter().flatten().sum();
        let correct: u64 = (0..classes).map(|c| confusion[c][c]).sum();
        let per_class_accuracy: Vec<f64> = confusion
            .iter()
            .enumerate()
            .map(|(c, row)| {
                let n: u64 = row.iter().sum();
                if n == 0 {
                    0.0
                } else {
                    100.0 * row[c] as f64 / n as f64
                }
            })
            .collect();
        let present: Vec<f64> = confusion
            .iter()
            .zip(&per_class_accuracy)
            .filter(|(row, _)| row.iter().sum::<u64>() > 0)
            .map(|(_, &a)| a)
            .collect();
        let predicted_class_distribution = (0..classes)
            .map(|p| confusion.iter().map(|row| row[p]).sum::<u64>() as f64 / total as f64)
            .collect();
        Self {
            faa: 100.0 * correct as f64 / total as f64,
            class_mean_accuracy: present.iter().sum::<f64>() / present.len().max(1) as f64,
            per_class_accuracy,
            confusion,
            predicted_class_distribution,
            test_count: total,
        }
    }

    /// Accuracy restricted to test samples whose true class is in `classes`.
    pub fn accuracy_on(&self, classes: &[usize]) -> f64 {
        let (mut n, mut ok) = (0u64, 0u64);
        for &c in classes {
            n += self.confusion[c].iter().sum::<u64>();
            ok += self.confusion[c][c];
        }
        if n == 0 {
            0.0
        } else {
            100.0 * ok as f64 / n as f64
        }
    }
}

/// Argmax predictions (ties to the lower class) of the full model on `ds`.
pub fn predict(
    model: &Model,
    ds: &LabeledDataset,
    steps: usize,
    batch_size: usize,
) -> Result<Vec<usize>> {
    let indices: Vec<usize> = (0..ds.len()).collect();
    let mut out = Vec::with_capacity(ds.len());
    for chunk in indices.chunks(batch_size.max(1)) {
        let x = ds.batch(chunk, steps)?;
        let (scores, _) = model.forward(&x)?;
        out.extend(scores.argmax_rows());
    }
    Ok(out)
}

/// Argmax predictions of the classifier on precomputed `[T, N, ...]` latents.
pub fn predict_latents(model: &Model, latents: &Tensor, batch_size: usize) -> Result<Vec<usize>> {
    let n = latents.shape()[1];
    let swapped = latents.swap_leading_axes();
    let per = swapped.row_len();
    let mut out = Vec::with_capacity(n);
    let mut start = 0;
    while start < n {
        let end = (start + batch_size.max(1)).min(n);
        let mut shape = swapped.shape().to_vec();
        shape[0] = end - start;
        let chunk = Tensor::new(shape, swapped.data()[start * per..end * per].to_vec())?
            .swap_leading_axes();
        out.extend(model.classify_from_latent(&chunk)?.argmax_rows());
        start = end;
    }
    Ok(out)
}

pub fn evaluate(
    model: &Model,
    ds: &LabeledDataset,
    steps: usize,
    batch_size: usize,
) -> Result<Evaluation> {
    if ds.is_empty() {
        return Err(Error::Dataset("empty test set".into()));
    }
    let preds = predict(model, ds, steps, batch_size)?;
    Evaluation::from_predictions(ds.labels(), &preds, model.spec.num_classes)
}

/// Fraction of all test predictions assigned to `recent_classes`.
pub fn recency_bias(eval: &Evaluation, recent_classes: &[usize]) -> f64 {
    recent_classes
        .iter()
        .map(|&c| eval.predicted_class_distribution[c])
        .sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StorageKind {
    /// Raw inputs at the reference precision.
    Naive,
    /// Latents at the reference precision.
    LatentFloat,
    /// Latents at one bit per element.
    Binary,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemoryRow {
    pub kind: StorageKind,
    pub bits: u64,
    pub bytes: u64,
    /// `naive_bits / bits`, reported as `1:compression`; `None` for an empty buffer.
    pub compression: Option<f64>,
}

/// Storage needed for `samples` buffer entries under each encoding.
pub fn memory_report(
    samples: u64,
    input_elements: u64,
    latent_elements: u64,
    precision_bits: u32,
) -> [MemoryRow; 3] {
    let p = u64::from(precision_bits);
    let rows = [
        (StorageKind::Naive, samples * input_elements * p),
        (StorageKind::LatentFloat, samples * latent_elements * p),
        (StorageKind::Binary, samples * latent_elements),
    ];
    let naive = rows[0].1;
    rows.map(|(kind, bits)| MemoryRow {
        kind,
        bits,
        bytes: bits.div_ceil(8),
        compression: (bits > 0).then(|| naive as f64 / bits as f64),
    })
}

/// Everything recorded about one finished run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub strategy: String,
    pub seed: u64,
    pub faa: f64,
    pub class_mean_accuracy: f64,
    pub per_class_accuracy: Vec<f64>,
    pub confusion: Vec<Vec<u64>>,
    pub predicted_class_distribution: Vec<f64>,
    pub last_task_classes: Vec<usize>,
    pub last_task_accuracy: f64,
    pub recency_bias: f64,
    pub buffer_entries: u64,
    pub buffer_payload_bytes: u64,
    pub buffer_header_bytes: u64,
    pub test_count: u64,
    pub tie_break: String,
    /// Flattened `key = value` echo of the configuration that produced the run.
    pub config: Vec<(String, String)>,
    pub wallclock_seconds: f64,
}

pub const TIE_BREAK: &str = "lowest_class_index";

impl MetricsReport {
    /// Flat `key = value` document, one entry per line.
    pub fn to_key_value(&self) -> String {
        let mut s = String::new();
        let list = |v: &[f64]| {
            v.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        let _ = writeln!(s, "strategy = {}", self.strategy);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "faa = {}", self.faa);
        let _ = writeln!(s, "class_mean_accuracy = {}", self.class_mean_accuracy);
        let _ = writeln!(s, "per_class_accuracy = {}", list(&self.per_class_accuracy));
        let _ = writeln!(
            s,
            "predicted_class_distribution = {}",
            list(&self.predicted_class_distribution)
        );
        let last: Vec<String> = self
            .last_task_classes
            .iter()
            .map(|c| c.to_string())
            .collect();
        let _ = writeln!(s, "last_task_classes = {}", last.join(","));
        let _ = writeln!(s, "last_task_accuracy = {}", self.last_task_accuracy);
        let _ = writeln!(s, "recency_bias = {}", self.recency_bias);
        let _ = writeln!(s, "buffer_entries = {}", self.buffer_entries);
        let _ = writeln!(s, "buffer_payload_bytes = {}", self.buffer_payload_bytes);
        let _ = writeln!(s, "buffer_header_bytes = {}", self.buffer_header_bytes);
        let _ = writeln!(s, "test_count = {}", self.test_count);
        let _ = writeln!(s, "tie_break = {}", self.tie_break);
        for (k, v) in &self.config {
            let _ = writeln!(s, "config.{k} = {v}");
        }
        let _ = writeln!(s, "wallclock_seconds = {}", self.wallclock_seconds);
        s
    }

    /// Confusion matrix as CSV with a header row of predicted classes.
    pub fn confusion_csv(&self) -> String {
        let classes = self.confusion.len();
        let mut s = String::from("true\\pred");
        for p in 0..classes {
            let _ = write!(s, ",{p}");
        }
        s.push('\n');
        for (t, row) in self.confusion.iter().enumerate() {
            let _ = write!(s, "{t}");
            for v in row {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_two_class() {
        let e = Evaluation::from_predictions(&[0, 1, 1, 0], &[0, 1, 1, 0], 2).unwrap();
        assert_eq!(e.faa, 100.0);
        assert_eq!(e.confusion, vec![vec![2, 0], vec![0, 2]]);
    }

    #[test]
    fn constant_classifier_on_balanced_ten() {
        let labels: Vec<usize> = (0..100).map(|i| i % 10).collect();
        let e = Evaluation::from_predictions(&labels, &[0; 100], 10).unwrap();
        assert_eq!(e.faa, 10.0);
        assert_eq!(e.predicted_class_distribution[0], 1.0);
        assert_eq!(e.class_mean_accuracy, 10.0);
        assert_eq!(recency_bias(&e, &[8, 9]), 0.0);
        assert_eq!(recency_bias(&e, &[0]), 1.0);
    }

    #[test]
    fn uniform_predictions_bias() {
        let labels: Vec<usize> = (0..100).map(|i| i % 10).collect();
        let preds: Vec<usize> = (0..100).map(|i| (i + 3) % 10).collect();
        let e = Evaluation::from_predictions(&labels, &preds, 10).unwrap();
        assert!((recency_bias(&e, &[8, 9]) - 0.2).abs() < 1e-12);
        let s: f64 = e.predicted_class_distribution.iter().sum();
        assert!((s - 1.0).abs() < 1e-9);
    }

    #[test]
    fn empty_test_set_is_an_error() {
        assert!(Evaluation::from_predictions(&[], &[], 3).is_err());
    }

    #[test]
    fn memory_rows() {
        let rows = memory_report(10, 784, 32_768, 32);
        assert_eq!(rows[1].bits, 32 * rows[2].bits);
        assert_eq!(rows[0].compression, Some(1.0));
        let empty = memory_report(0, 784, 32_768, 32);
        assert!(empty
            .iter()
            .all(|r| r.bytes == 0 && r.compression.is_none()));
    }

    #[test]
    fn confusion_csv_layout() {
        let e = Evaluation::from_predictions(&[0, 1], &[1, 1], 2).unwrap();
        let r = MetricsReport {
            strategy: "x".into(),
            seed: 0,
            faa: e.faa,
            class_mean_accuracy: e.class_mean_accuracy,
            per_class_accuracy: e.per_class_accuracy.clone(),
            confusion: e.confusion.clone(),
            predicted_class_distribution: e.predicted_class_distribution.clone(),
            last_task_classes: vec![1],
            last_task_accuracy: 100.0,
            recency_bias: 1.0,
            buffer_entries: 0,
            buffer_payload_bytes: 0,
            buffer_header_bytes: 0,
            test_count: 2,
            tie_break: TIE_BREAK.into(),
            config: vec![("a".into(), "1".into())],
            wallclock_seconds: 0.5,
        };
        assert_eq!(r.confusion_csv(), "true\\pred,0,1\n0,0,1\n1,0,1\n");
        assert!(r.to_key_value().contains("config.a = 1\n"));
    }
}
