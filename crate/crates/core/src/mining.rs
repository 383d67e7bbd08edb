//! Three-way split of the training set by confidence against the per-class
//! thresholds of the sample's given label.
//!
//! - clean: `s > t_clean[y]`
//! - noisy: `s < t_noisy[y]`
//! - ambiguous: everything else, boundaries included
//!
//! `s` is chosen by [`ScoreRule`]. The default scores a sample by the averaged
//! probability of its given label; the max-entry rule is kept for comparison.
//! Both agree on every sample whose prediction matches its label.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, AsmError, Result};
use crate::numerics::argmax;
use crate::thresholds::{EpochPredictions, ThresholdTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    Clean,
    Ambiguous,
    Noisy,
}

impl Subset {
    pub fn as_str(self) -> &'static str {
        match self {
            Subset::Clean => "clean",
            Subset::Ambiguous => "ambiguous",
            Subset::Noisy => "noisy",
        }
    }

    /// Bucket for a single confidence value against one class's thresholds.
    pub fn classify(confidence: f64, t_clean: f64, t_noisy: f64) -> Self {
        if confidence > t_clean {
            Subset::Clean
        } else if confidence < t_noisy {
            Subset::Noisy
        } else {
            Subset::Ambiguous
        }
    }
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which per-sample score is compared against the thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreRule {
    /// Averaged probability of the given label.
    #[default]
    GivenLabel,
    /// Max entry of the averaged probability vector, whatever class it belongs to.
    Max,
}

impl ScoreRule {
    pub fn scores<'a>(&self, preds: &'a EpochPredictions) -> &'a [f64] {
        match self {
            ScoreRule::GivenLabel => preds.label_confidence(),
            ScoreRule::Max => preds.confidence(),
        }
    }
}

/// Max entry of the averaged probability vector.
pub fn confidence(p1: &[f64], p2: &[f64]) -> Result<f64> {
    check_len("second probability vector", p1.len(), p2.len())?;
    let avg: Vec<f64> = p1.iter().zip(p2).map(|(a, b)| 0.5 * (a + b)).collect();
    Ok(avg[argmax(&avg)])
}

/// Disjoint cover of `0..N` by sample subset. Index lists are ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub clean: Vec<usize>,
    pub ambiguous: Vec<usize>,
    pub noisy: Vec<usize>,
    pub epoch: i64,
    assignment: Vec<Subset>,
}

impl Partition {
    pub fn from_assignment(assignment: Vec<Subset>, epoch: i64) -> Self {
        let mut clean = Vec::new();
        let mut ambiguous = Vec::new();
        let mut noisy = Vec::new();
        for (i, s) in assignment.iter().enumerate() {
            match s {
                Subset::Clean => clean.push(i),
                Subset::Ambiguous => ambiguous.push(i),
                Subset::Noisy => noisy.push(i),
            }
        }
        Self {
            clean,
            ambiguous,
            noisy,
            epoch,
            assignment,
        }
    }

    /// Every sample in the clean subset.
    pub fn all_clean(n: usize, epoch: i64) -> Self {
        Self::from_assignment(vec![Subset::Clean; n], epoch)
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn subset_of(&self, i: usize) -> Subset {
        self.assignment[i]
    }

    pub fn assignment(&self) -> &[Subset] {
        &self.assignment
    }

    pub fn sizes(&self) -> SubsetSizes {
        SubsetSizes {
            clean: self.clean.len(),
            ambiguous: self.ambiguous.len(),
            noisy: self.noisy.len(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsetSizes {
    pub clean: usize,
    pub ambiguous: usize,
    pub noisy: usize,
}

impl SubsetSizes {
    pub fn total(&self) -> usize {
        self.clean + self.ambiguous + self.noisy
    }
}

pub fn partition(
    preds: &EpochPredictions,
    thresholds: &ThresholdTable,
    rule: ScoreRule,
) -> Result<Partition> {
    let k = thresholds.num_classes();
    if preds.num_classes() != k {
        return Err(AsmError::config(format!(
            "threshold table has {k} classes, predictions have {}",
            preds.num_classes()
        )));
    }
    let assignment = preds
        .labels()
        .iter()
        .zip(rule.scores(preds))
        .map(|(&y, &s)| {
            if y >= k {
                return Err(AsmError::Label {
                    label: y,
                    classes: k,
                });
            }
            Ok(Subset::classify(
                s,
                thresholds.t_clean[y],
                thresholds.t_noisy[y],
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Partition::from_assignment(assignment, thresholds.epoch))
}

/// How well the noisy subset recovers injected label noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MiningQuality {
    /// |noisy ∩ mask| / |noisy|, 0 when the noisy subset is empty.
    pub precision: f64,
    /// |noisy ∩ mask| / |mask|, 0 when nothing was injected.
    pub recall: f64,
    pub true_positives: usize,
    pub mined_noisy: usize,
    pub injected: usize,
    /// Fraction of injected-noise samples in each subset (zeros when nothing was injected).
    pub injected_in_clean: f64,
    pub injected_in_ambiguous: f64,
    pub injected_in_noisy: f64,
}

pub fn mining_quality(part: &Partition, noise_mask: &[bool]) -> Result<MiningQuality> {
    check_len("noise mask", part.len(), noise_mask.len())?;
    let mut counts = [0usize; 3];
    for (s, _) in part.assignment.iter().zip(noise_mask).filter(|(_, &m)| m) {
        counts[*s as usize] += 1;
    }
    let injected = counts.iter().sum::<usize>();
    let tp = counts[Subset::Noisy as usize];
    let mined = part.noisy.len();
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok(MiningQuality {
        precision: ratio(tp, mined),
        recall: ratio(tp, injected),
        true_positives: tp,
        mined_noisy: mined,
        injected,
        injected_in_clean: ratio(counts[Subset::Clean as usize], injected),
        injected_in_ambiguous: ratio(counts[Subset::Ambiguous as usize], injected),
        injected_in_noisy: ratio(tp, injected),
    })
}
