use serde::{Deserialize, Serialize};

/// Objective applied to the time-averaged class scores.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Softmax cross-entropy with the scores as logits.
    #[default]
    CrossEntropy,
    /// Squared error between the scores (firing rates) and one-hot targets,
    /// averaged over samples and classes.
    RateMse,
}

impl LossKind {
    /// Mean loss over the rows of `scores` `[N, classes]` and its gradient.
    pub fn evaluate(self, scores: &[f64], labels: &[usize], classes: usize) -> (f64, Vec<f64>) {
        match self {
            LossKind::CrossEntropy => cross_entropy(scores, labels, classes),
            LossKind::RateMse => rate_mse(scores, labels, classes),
        }
    }
}

/// Mean softmax cross-entropy over rows of `scores` and its gradient.
pub fn cross_entropy(scores: &[f64], labels: &[usize], classes: usize) -> (f64, Vec<f64>) {
    let n = labels.len();
    let mut grad = vec![0.0; scores.len()];
    let mut loss = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        let row = &scores[r * classes..(r + 1) * classes];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_z = max + sum.ln();
        loss += log_z - row[y];
        for c in 0..classes {
            let p = (row[c] - log_z).exp();
            grad[r * classes + c] = (p - if c == y { 1.0 } else { 0.0 }) / n as f64;
        }
    }
    (loss / n as f64, grad)
}

/// Mean squared error against one-hot targets and its gradient.
pub fn rate_mse(scores: &[f64], labels: &[usize], classes: usize) -> (f64, Vec<f64>) {
    let count = (labels.len() * classes) as f64;
    let mut grad = vec![0.0; scores.len()];
    let mut loss = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        for c in 0..classes {
            let i = r * classes + c;
            let d = scores[i] - if c == y { 1.0 } else { 0.0 };
            loss += d * d;
            grad[i] = 2.0 * d / count;
        }
    }
    (loss / count, grad)
}
