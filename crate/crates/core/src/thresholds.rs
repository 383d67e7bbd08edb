//! Per-class clean/noisy thresholds, recomputed once per epoch from the
//! averaged predictions of both networks.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, AsmError, Result};
use crate::numerics::argmax;

/// Starting clean threshold for every class; the noisy one is its complement.
pub const INITIAL_CLEAN_THRESHOLD: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdTable {
    pub t_clean: Vec<f64>,
    pub t_noisy: Vec<f64>,
    /// Epoch the table was computed at; `-1` for the initial table.
    pub epoch: i64,
}

impl ThresholdTable {
    pub fn num_classes(&self) -> usize {
        self.t_clean.len()
    }

    pub fn validate(&self) -> Result<()> {
        check_len("t_noisy", self.t_clean.len(), self.t_noisy.len())?;
        for (k, (&c, &n)) in self.t_clean.iter().zip(&self.t_noisy).enumerate() {
            if !(c > 0.0 && c <= 1.0) {
                return Err(AsmError::config(format!(
                    "t_clean[{k}] = {c} outside (0, 1]"
                )));
            }
            if n != 1.0 - c {
                return Err(AsmError::config(format!(
                    "t_noisy[{k}] = {n} is not 1 - t_clean[{k}]"
                )));
            }
        }
        Ok(())
    }
}

pub fn init_thresholds(k: usize) -> Result<ThresholdTable> {
    if k < 2 {
        return Err(AsmError::config(format!(
            "need at least 2 classes, got {k}"
        )));
    }
    Ok(ThresholdTable {
        t_clean: vec![INITIAL_CLEAN_THRESHOLD; k],
        t_noisy: vec![1.0 - INITIAL_CLEAN_THRESHOLD; k],
        epoch: -1,
    })
}

/// One prediction pass over a sample set: averaged probabilities of the two
/// networks plus the quantities derived from them.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochPredictions {
    k: usize,
    probs: Vec<f64>,
    confidence: Vec<f64>,
    label_confidence: Vec<f64>,
    predicted: Vec<usize>,
    labels: Vec<usize>,
}

impl EpochPredictions {
    /// `probs` is row-major `N x k`; each row is an averaged probability vector.
    pub fn new(k: usize, probs: Vec<f64>, labels: Vec<usize>) -> Result<Self> {
        if k < 2 {
            return Err(AsmError::config(format!(
                "need at least 2 classes, got {k}"
            )));
        }
        check_len("prediction rows", labels.len() * k, probs.len())?;
        if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
            return Err(AsmError::Label {
                label: bad,
                classes: k,
            });
        }
        let mut confidence = Vec::with_capacity(labels.len());
        let mut label_confidence = Vec::with_capacity(labels.len());
        let mut predicted = Vec::with_capacity(labels.len());
        for (row, &y) in probs.chunks_exact(k).zip(&labels) {
            let top = argmax(row);
            predicted.push(top);
            confidence.push(row[top]);
            label_confidence.push(row[y]);
        }
        Ok(Self {
            k,
            probs,
            confidence,
            label_confidence,
            predicted,
            labels,
        })
    }

    /// Averages two per-network prediction matrices row by row.
    pub fn from_pair(k: usize, p1: &[f64], p2: &[f64], labels: Vec<usize>) -> Result<Self> {
        check_len("second network predictions", p1.len(), p2.len())?;
        let avg = p1.iter().zip(p2).map(|(a, b)| 0.5 * (a + b)).collect();
        Self::new(k, avg, labels)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn probs(&self, i: usize) -> &[f64] {
        &self.probs[i * self.k..(i + 1) * self.k]
    }

    /// Max entry of each averaged vector.
    pub fn confidence(&self) -> &[f64] {
        &self.confidence
    }

    /// Averaged probability of each sample's given label. Equals
    /// [`confidence`](Self::confidence) wherever the prediction matches the label.
    pub fn label_confidence(&self) -> &[f64] {
        &self.label_confidence
    }

    pub fn predicted(&self) -> &[usize] {
        &self.predicted
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }
}

/// Clean threshold of class `k` = mean confidence of the samples labelled `k`
/// that are also predicted as `k`. Classes without any such sample keep the
/// previous table's values.
pub fn compute_thresholds(
    preds: &EpochPredictions,
    k: usize,
    previous: &ThresholdTable,
    epoch: i64,
) -> Result<ThresholdTable> {
    if preds.is_empty() {
        return Err(AsmError::config(
            "no predictions to compute thresholds from",
        ));
    }
    if preds.num_classes() != k || previous.num_classes() != k {
        return Err(AsmError::config(format!(
            "class count mismatch: predictions {}, previous table {}, requested {k}",
            preds.num_classes(),
            previous.num_classes()
        )));
    }

    let mut sums = vec![0.0; k];
    let mut counts = vec![0usize; k];
    for i in 0..preds.len() {
        let y = preds.labels[i];
        if preds.predicted[i] == y {
            sums[y] += preds.confidence[i];
            counts[y] += 1;
        }
    }

    let mut table = previous.clone();
    table.epoch = epoch;
    for class in 0..k {
        if counts[class] > 0 {
            let t = sums[class] / counts[class] as f64;
            table.t_clean[class] = t;
            table.t_noisy[class] = 1.0 - t;
        }
    }
    Ok(table)
}
