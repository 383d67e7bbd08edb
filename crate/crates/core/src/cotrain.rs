//! Co-training loop: warm-up epochs of plain two-network cross-entropy, then
//! per-epoch threshold learning, three-way mining and the tri-regularized
//! objective.
//!
//! Randomness comes from three seeds: one per network initialization and one
//! for the data stream. The data seed drives two independent generators, one
//! for batch order and one for augmentations, so the batch schedule never
//! depends on how many augmentations an epoch happened to draw.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{augment, AugmentMode, AugmentationPolicy, NoisyDataset, Split};
use crate::error::{AsmError, Result};
use crate::losses::{self, LossWeights, RampSchedule};
use crate::mining::{self, MiningQuality, Partition, ScoreRule, Subset, SubsetSizes};
use crate::numerics::{adam_step, argmax, AdamState, DenseNet, GradientBundle};
use crate::thresholds::{self, EpochPredictions, ThresholdTable};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Number of trailing epochs averaged into the summary accuracy.
pub const SUMMARY_WINDOW: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: u32,
    pub warmup_epochs: u32,
    pub batch_size: usize,
    pub lr: f64,
    /// Per-epoch exponential learning-rate decay.
    pub lr_gamma: f64,
    pub weight_decay: f64,
    pub ramp: RampSchedule,
    pub weights: LossWeights,
    pub hidden: Vec<usize>,
    pub augmentation: AugmentationPolicy,
    pub seed_net1: u64,
    pub seed_net2: u64,
    pub seed_data: u64,
    pub stop_weak_gradient: bool,
    pub mining_score: ScoreRule,
    /// Write a checkpoint every this many epochs; 0 keeps only the final one.
    pub checkpoint_every: u32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            warmup_epochs: 10,
            batch_size: 128,
            lr: 0.001,
            lr_gamma: 0.9,
            weight_decay: 1e-4,
            ramp: RampSchedule::default(),
            weights: LossWeights::default(),
            hidden: vec![64, 32],
            augmentation: AugmentationPolicy::default(),
            seed_net1: 1,
            seed_net2: 2,
            seed_data: 3,
            stop_weak_gradient: false,
            mining_score: ScoreRule::default(),
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(AsmError::config("epochs must be positive"));
        }
        if self.warmup_epochs > self.epochs {
            return Err(AsmError::config(format!(
                "warmup_epochs ({}) exceeds epochs ({})",
                self.warmup_epochs, self.epochs
            )));
        }
        if self.batch_size == 0 {
            return Err(AsmError::config("batch_size must be at least 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(AsmError::config(format!(
                "lr must be positive, got {}",
                self.lr
            )));
        }
        if !(self.lr_gamma > 0.0 && self.lr_gamma <= 1.0) {
            return Err(AsmError::config(format!(
                "lr_gamma must lie in (0, 1], got {}",
                self.lr_gamma
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(AsmError::config(format!(
                "weight_decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        self.ramp.validate()?;
        if self.ramp.e_r > self.epochs {
            return Err(AsmError::config(format!(
                "ramp.e_r ({}) exceeds epochs ({})",
                self.ramp.e_r, self.epochs
            )));
        }
        self.weights.validate()?;
        self.augmentation.validate()?;
        if self.hidden.contains(&0) {
            return Err(AsmError::config("hidden layer widths must be positive"));
        }
        Ok(())
    }

    /// True when every epoch is a warm-up epoch, i.e. plain co-trained cross-entropy.
    pub fn is_baseline(&self) -> bool {
        self.warmup_epochs >= self.epochs
    }

    /// Same schedule with mining switched off.
    pub fn baseline(&self) -> Self {
        Self {
            warmup_epochs: self.epochs,
            ..self.clone()
        }
    }

    /// Replaces the three seeds with streams derived from one base seed.
    pub fn reseeded(&self, base: u64) -> Self {
        Self {
            seed_net1: derive_seed(base, 1),
            seed_net2: derive_seed(base, 2),
            seed_data: derive_seed(base, 3),
            ..self.clone()
        }
    }

    pub fn lr_at(&self, epoch: u32) -> f64 {
        self.lr * self.lr_gamma.powi(epoch as i32)
    }

    pub fn layer_dims(&self, input: usize, classes: usize) -> Vec<usize> {
        let mut dims = vec![input];
        dims.extend(&self.hidden);
        dims.push(classes);
        dims
    }
}

/// SplitMix64 finalizer over `(base, stream)`.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base
        .wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(stream.wrapping_mul(0xbf58_476d_1ce4_e5b9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Two identically shaped networks with their own optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct DualNet {
    pub nets: [DenseNet; 2],
    pub optimizers: [AdamState; 2],
}

impl DualNet {
    pub fn new(layer_dims: &[usize], seed1: u64, seed2: u64) -> Result<Self> {
        let a = DenseNet::new(layer_dims, seed1)?;
        let b = DenseNet::new(layer_dims, seed2)?;
        Ok(Self::from_nets(a, b))
    }

    pub fn from_nets(a: DenseNet, b: DenseNet) -> Self {
        let optimizers = [AdamState::new(&a), AdamState::new(&b)];
        Self {
            nets: [a, b],
            optimizers,
        }
    }
}

/// Row-major `N x K` softmax outputs of one network over every row of `ds`.
pub fn predict_all(net: &DenseNet, ds: &NoisyDataset) -> Result<Vec<f64>> {
    let rows: Vec<Vec<f64>> = (0..ds.len())
        .into_par_iter()
        .map(|i| net.forward(ds.row(i)))
        .collect::<Result<_>>()?;
    Ok(rows.concat())
}

/// Averaged predictions of both networks on un-augmented inputs, scored
/// against the given labels.
pub fn prediction_pass(dual: &DualNet, ds: &NoisyDataset) -> Result<EpochPredictions> {
    let p1 = predict_all(&dual.nets[0], ds)?;
    let p2 = predict_all(&dual.nets[1], ds)?;
    EpochPredictions::from_pair(ds.num_classes(), &p1, &p2, ds.given_labels().to_vec())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub net1: f64,
    pub net2: f64,
    pub ensemble: f64,
}

/// Accuracy against the true labels; the ensemble takes the argmax of the
/// averaged probabilities (ties to the lowest class index).
pub fn evaluate(dual: &DualNet, ds: &NoisyDataset) -> Result<Accuracy> {
    if ds.is_empty() {
        return Err(AsmError::config("cannot evaluate on an empty split"));
    }
    let k = ds.num_classes();
    let p1 = predict_all(&dual.nets[0], ds)?;
    let p2 = predict_all(&dual.nets[1], ds)?;
    let mut hits = [0usize; 3];
    for (i, &y) in ds.true_labels().iter().enumerate() {
        let a = &p1[i * k..(i + 1) * k];
        let b = &p2[i * k..(i + 1) * k];
        let avg: Vec<f64> = a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect();
        hits[0] += (argmax(a) == y) as usize;
        hits[1] += (argmax(b) == y) as usize;
        hits[2] += (argmax(&avg) == y) as usize;
    }
    let n = ds.len() as f64;
    Ok(Accuracy {
        net1: hits[0] as f64 / n,
        net2: hits[1] as f64 / n,
        ensemble: hits[2] as f64 / n,
    })
}

/// Shuffled index order split into consecutive batches.
pub fn epoch_batches(n: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch_size).map(|c| c.to_vec()).collect()
}

/// Per-term losses of one batch (each averaged over its members).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub sup: f64,
    #[serde(rename = "mut")]
    pub mutual: f64,
    pub usc: f64,
    pub total: f64,
}

/// Settings one optimization step needs besides the data.
#[derive(Debug, Clone, Copy)]
pub struct StepSettings {
    pub lr: f64,
    pub weight_decay: f64,
    pub lambda: f64,
    pub weights: LossWeights,
    pub augmentation: AugmentationPolicy,
    pub stop_weak_gradient: bool,
}

/// One Adam step on both networks for the samples in `batch`.
///
/// Clean members contribute the two-network cross-entropy, ambiguous members
/// the mutual loss (scaled by omega) and noisy members the label-free
/// weak/strong consistency loss (scaled by gamma). Each term is the mean over
/// its own members and vanishes when the batch has none. Gradients are
/// accumulated in batch order.
pub fn batch_step(
    dual: &mut DualNet,
    train: &NoisyDataset,
    batch: &[usize],
    part: &Partition,
    settings: &StepSettings,
    aug_rng: &mut ChaCha8Rng,
) -> Result<LossBreakdown> {
    let count = |s: Subset| batch.iter().filter(|&&i| part.subset_of(i) == s).count();
    let (n_clean, n_amb, n_noisy) = (
        count(Subset::Clean),
        count(Subset::Ambiguous),
        count(Subset::Noisy),
    );
    let inv = |n: usize| if n == 0 { 0.0 } else { 1.0 / n as f64 };
    let clean_scale = inv(n_clean);
    let amb_scale = settings.weights.omega * inv(n_amb);
    let noisy_scale = settings.weights.gamma * inv(n_noisy);

    let [net1, net2] = &dual.nets;
    let mut g1 = GradientBundle::zeros_like(net1);
    let mut g2 = GradientBundle::zeros_like(net2);
    let (mut sup, mut mutual, mut usc) = (0.0, 0.0, 0.0);
    let scaled = |g: Vec<f64>, s: f64| -> Vec<f64> { g.into_iter().map(|v| v * s).collect() };

    for &i in batch {
        let x = train.row(i);
        let y = train.given_labels()[i];
        match part.subset_of(i) {
            Subset::Clean => {
                let t1 = net1.forward_trace(x)?;
                let t2 = net2.forward_trace(x)?;
                sup += losses::supervised_loss(t1.probs(), t2.probs(), y)?;
                let (a, b) = losses::supervised_loss_grad(t1.probs(), t2.probs(), y)?;
                net1.accumulate(&t1, &scaled(a, clean_scale), &mut g1)?;
                net2.accumulate(&t2, &scaled(b, clean_scale), &mut g2)?;
            }
            Subset::Ambiguous => {
                let t1 = net1.forward_trace(x)?;
                let t2 = net2.forward_trace(x)?;
                let lambda = settings.lambda;
                mutual += losses::mutual_loss(t1.probs(), t2.probs(), y, lambda)?;
                let (a, b) = losses::mutual_loss_grad(t1.probs(), t2.probs(), y, lambda)?;
                net1.accumulate(&t1, &scaled(a, amb_scale), &mut g1)?;
                net2.accumulate(&t2, &scaled(b, amb_scale), &mut g2)?;
            }
            Subset::Noisy => {
                let weak = augment(x, &settings.augmentation, AugmentMode::Weak, aug_rng);
                let strong = augment(x, &settings.augmentation, AugmentMode::Strong, aug_rng);
                let w1 = net1.forward_trace(&weak)?;
                let s1 = net1.forward_trace(&strong)?;
                let w2 = net2.forward_trace(&weak)?;
                let s2 = net2.forward_trace(&strong)?;
                usc += losses::consistency_loss(w1.probs(), s1.probs(), w2.probs(), s2.probs())?;
                let [gw1, gs1, gw2, gs2] = losses::consistency_loss_grad(
                    w1.probs(),
                    s1.probs(),
                    w2.probs(),
                    s2.probs(),
                    settings.stop_weak_gradient,
                )?;
                net1.accumulate(&w1, &scaled(gw1, noisy_scale), &mut g1)?;
                net1.accumulate(&s1, &scaled(gs1, noisy_scale), &mut g1)?;
                net2.accumulate(&w2, &scaled(gw2, noisy_scale), &mut g2)?;
                net2.accumulate(&s2, &scaled(gs2, noisy_scale), &mut g2)?;
            }
        }
    }

    let breakdown = {
        let sup = sup * inv(n_clean);
        let mutual = mutual * inv(n_amb);
        let usc = usc * inv(n_noisy);
        LossBreakdown {
            sup,
            mutual,
            usc,
            total: losses::total_loss(sup, mutual, usc, &settings.weights)?,
        }
    };
    g1.loss = breakdown.total;
    g2.loss = breakdown.total;

    let [net1, net2] = &mut dual.nets;
    let [opt1, opt2] = &mut dual.optimizers;
    adam_step(net1, opt1, &g1, settings.lr, settings.weight_decay)?;
    adam_step(net2, opt2, &g2, settings.lr, settings.weight_decay)?;
    Ok(breakdown)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Warmup,
    Asm,
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: u32,
    pub phase: Phase,
    pub lr: f64,
    /// Mutual-loss weight used this epoch (mining epochs only).
    pub lambda: Option<f64>,
    pub test_accuracy: Accuracy,
    pub subsets: Option<SubsetSizes>,
    pub mining: Option<MiningQuality>,
    pub losses: LossBreakdown,
    pub thresholds: Option<ThresholdTable>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    /// Last completed epoch; -1 before training.
    pub epoch: i64,
    pub seed_data: u64,
    pub nets: [DenseNet; 2],
}

impl Checkpoint {
    pub fn validated(self) -> Result<Self> {
        if self.version != CHECKPOINT_VERSION {
            return Err(AsmError::config(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                self.version
            )));
        }
        let [a, b] = self.nets;
        let (a, b) = (a.validated()?, b.validated()?);
        if a.layer_dims() != b.layer_dims() {
            return Err(AsmError::config("checkpoint networks differ in shape"));
        }
        Ok(Self {
            nets: [a, b],
            ..self
        })
    }

    pub fn into_dual(self) -> DualNet {
        let [a, b] = self.nets;
        DualNet::from_nets(a, b)
    }
}

/// Stateful runner over one dataset. Epoch `e < warmup_epochs` is a warm-up
/// epoch, every later one a mining epoch.
#[derive(Debug, Clone)]
pub struct Trainer {
    cfg: TrainConfig,
    train: NoisyDataset,
    test: NoisyDataset,
    dual: DualNet,
    thresholds: ThresholdTable,
    partition: Option<Partition>,
    order_rng: ChaCha8Rng,
    aug_rng: ChaCha8Rng,
    epoch: u32,
}

impl Trainer {
    pub fn new(ds: &NoisyDataset, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let train = ds.select(Split::Train);
        let test = ds.select(Split::Test);
        if train.is_empty() {
            return Err(AsmError::config("dataset has no training rows"));
        }
        if test.is_empty() {
            return Err(AsmError::config("dataset has no test rows"));
        }
        if cfg.seed_net1 == cfg.seed_net2 {
            tracing::warn!(
                seed = cfg.seed_net1,
                "both networks share one init seed; co-training loses its two views"
            );
        }
        let dims = cfg.layer_dims(ds.dim(), ds.num_classes());
        let dual = DualNet::new(&dims, cfg.seed_net1, cfg.seed_net2)?;
        let mut aug_rng = ChaCha8Rng::seed_from_u64(cfg.seed_data);
        aug_rng.set_stream(1);
        Ok(Self {
            cfg: cfg.clone(),
            thresholds: thresholds::init_thresholds(ds.num_classes())?,
            train,
            test,
            dual,
            partition: None,
            order_rng: ChaCha8Rng::seed_from_u64(cfg.seed_data),
            aug_rng,
            epoch: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn dual(&self) -> &DualNet {
        &self.dual
    }

    pub fn train_set(&self) -> &NoisyDataset {
        &self.train
    }

    pub fn test_set(&self) -> &NoisyDataset {
        &self.test
    }

    pub fn thresholds(&self) -> &ThresholdTable {
        &self.thresholds
    }

    /// Partition used by the most recent mining epoch.
    pub fn partition(&self) -> Option<&Partition> {
        self.partition.as_ref()
    }

    /// Index of the next epoch to run.
    pub fn epoch(&self) -> u32 {
        self.epoch
    }

    pub fn is_finished(&self) -> bool {
        self.epoch >= self.cfg.epochs
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            epoch: self.epoch as i64 - 1,
            seed_data: self.cfg.seed_data,
            nets: self.dual.nets.clone(),
        }
    }

    fn settings(&self, lambda: f64) -> StepSettings {
        StepSettings {
            lr: self.cfg.lr_at(self.epoch),
            weight_decay: self.cfg.weight_decay,
            lambda,
            weights: self.cfg.weights,
            augmentation: self.cfg.augmentation,
            stop_weak_gradient: self.cfg.stop_weak_gradient,
        }
    }

    fn run_batches(&mut self, part: &Partition, lambda: f64) -> Result<LossBreakdown> {
        let batches = epoch_batches(self.train.len(), self.cfg.batch_size, &mut self.order_rng);
        let settings = self.settings(lambda);
        let mut sum = LossBreakdown::default();
        for batch in &batches {
            let b = batch_step(
                &mut self.dual,
                &self.train,
                batch,
                part,
                &settings,
                &mut self.aug_rng,
            )
            .map_err(|e| match e {
                AsmError::NumericFault(msg) => {
                    AsmError::NumericFault(format!("epoch {}: {msg}", self.epoch))
                }
                other => other,
            })?;
            sum.sup += b.sup;
            sum.mutual += b.mutual;
            sum.usc += b.usc;
            sum.total += b.total;
        }
        let n = batches.len() as f64;
        Ok(LossBreakdown {
            sup: sum.sup / n,
            mutual: sum.mutual / n,
            usc: sum.usc / n,
            total: sum.total / n,
        })
    }

    /// Plain two-network cross-entropy over every training sample.
    pub fn warmup_epoch(&mut self) -> Result<EpochReport> {
        let part = Partition::all_clean(self.train.len(), self.epoch as i64);
        let lr = self.cfg.lr_at(self.epoch);
        let losses = self.run_batches(&part, 0.0)?;
        let report = EpochReport {
            epoch: self.epoch,
            phase: Phase::Warmup,
            lr,
            lambda: None,
            test_accuracy: evaluate(&self.dual, &self.test)?,
            subsets: None,
            mining: None,
            losses,
            thresholds: None,
        };
        self.epoch += 1;
        Ok(report)
    }

    /// Prediction pass, threshold update, partition, then the tri-regularized batches.
    pub fn asm_epoch(&mut self) -> Result<EpochReport> {
        let epoch = self.epoch;
        let k = self.train.num_classes();
        let preds = prediction_pass(&self.dual, &self.train)?;
        self.thresholds =
            thresholds::compute_thresholds(&preds, k, &self.thresholds, epoch as i64)?;
        let part = mining::partition(&preds, &self.thresholds, self.cfg.mining_score)?;
        let sizes = part.sizes();
        if sizes.total() != self.train.len() {
            return Err(AsmError::NumericFault(format!(
                "epoch {epoch}: partition covers {} of {} samples",
                sizes.total(),
                self.train.len()
            )));
        }
        let quality = mining::mining_quality(&part, self.train.noise_mask())?;
        let lambda = self.cfg.ramp.lambda(epoch);
        let lr = self.cfg.lr_at(epoch);
        let losses = self.run_batches(&part, lambda)?;
        tracing::debug!(
            epoch,
            clean = sizes.clean,
            ambiguous = sizes.ambiguous,
            noisy = sizes.noisy,
            precision = quality.precision,
            recall = quality.recall,
            "mined"
        );
        let report = EpochReport {
            epoch,
            phase: Phase::Asm,
            lr,
            lambda: Some(lambda),
            test_accuracy: evaluate(&self.dual, &self.test)?,
            subsets: Some(sizes),
            mining: Some(quality),
            losses,
            thresholds: Some(self.thresholds.clone()),
        };
        self.partition = Some(part);
        self.epoch += 1;
        Ok(report)
    }

    pub fn run_epoch(&mut self) -> Result<EpochReport> {
        if self.is_finished() {
            return Err(AsmError::config("training schedule already complete"));
        }
        if self.epoch < self.cfg.warmup_epochs {
            self.warmup_epoch()
        } else {
            self.asm_epoch()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Baseline,
    Asm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub mode: Mode,
    pub epochs: u32,
    /// Mean ensemble test accuracy over the last five epochs.
    pub last5_accuracy: f64,
    pub last5_net1: f64,
    pub last5_net2: f64,
    pub final_accuracy: Accuracy,
    pub final_mining: Option<MiningQuality>,
    pub final_subsets: Option<SubsetSizes>,
    pub threshold_trajectory: Vec<ThresholdTable>,
}

impl TrainSummary {
    pub fn from_reports(cfg: &TrainConfig, reports: &[EpochReport]) -> Result<Self> {
        let last = reports
            .last()
            .ok_or_else(|| AsmError::config("no epochs were run"))?;
        let tail = &reports[reports.len().saturating_sub(SUMMARY_WINDOW)..];
        let mean = |f: fn(&Accuracy) -> f64| {
            tail.iter().map(|r| f(&r.test_accuracy)).sum::<f64>() / tail.len() as f64
        };
        Ok(Self {
            mode: if cfg.is_baseline() {
                Mode::Baseline
            } else {
                Mode::Asm
            },
            epochs: cfg.epochs,
            last5_accuracy: mean(|a| a.ensemble),
            last5_net1: mean(|a| a.net1),
            last5_net2: mean(|a| a.net2),
            final_accuracy: last.test_accuracy,
            final_mining: last.mining,
            final_subsets: last.subsets,
            threshold_trajectory: reports
                .iter()
                .filter_map(|r| r.thresholds.clone())
                .collect(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub reports: Vec<EpochReport>,
    pub summary: TrainSummary,
    pub checkpoint: Checkpoint,
}

/// Full schedule; `on_epoch` sees the trainer after each epoch (for logging
/// and checkpoints) and can abort the run by returning an error.
pub fn train_with<F>(ds: &NoisyDataset, cfg: &TrainConfig, mut on_epoch: F) -> Result<TrainOutcome>
where
    F: FnMut(&Trainer, &EpochReport) -> Result<()>,
{
    let mut trainer = Trainer::new(ds, cfg)?;
    let mut reports = Vec::with_capacity(cfg.epochs as usize);
    while !trainer.is_finished() {
        let report = trainer.run_epoch()?;
        tracing::info!(
            epoch = report.epoch,
            phase = ?report.phase,
            acc = report.test_accuracy.ensemble,
            loss = report.losses.total,
            "epoch done"
        );
        on_epoch(&trainer, &report)?;
        reports.push(report);
    }
    let summary = TrainSummary::from_reports(cfg, &reports)?;
    Ok(TrainOutcome {
        reports,
        summary,
        checkpoint: trainer.checkpoint(),
    })
}

pub fn train(ds: &NoisyDataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(ds, cfg, |_, _| Ok(()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedRecord {
    pub seed: u64,
    pub seed_net1: u64,
    pub seed_net2: u64,
    pub seed_data: u64,
    pub baseline_accuracy: f64,
    pub asm_accuracy: f64,
    /// `asm_accuracy - baseline_accuracy`.
    pub gap: f64,
    pub mining: Option<MiningQuality>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation (0 for a single run).
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareAggregate {
    pub runs: usize,
    pub baseline_accuracy: MeanStd,
    pub asm_accuracy: MeanStd,
    pub gap: MeanStd,
    pub positive_gaps: usize,
    pub noisy_precision: Option<MeanStd>,
    pub noisy_recall: Option<MeanStd>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub records: Vec<PairedRecord>,
    pub aggregate: CompareAggregate,
}

/// Baseline and mining runs on the same data and schedule for each base seed.
pub fn compare(ds: &NoisyDataset, cfg: &TrainConfig, seeds: &[u64]) -> Result<CompareReport> {
    compare_with(ds, cfg, seeds, |_, _, _| Ok(()))
}

/// Like [`compare`], handing every finished run to `on_run(seed, mode, outcome)`.
pub fn compare_with<F>(
    ds: &NoisyDataset,
    cfg: &TrainConfig,
    seeds: &[u64],
    on_run: F,
) -> Result<CompareReport>
where
    F: Fn(u64, Mode, &TrainOutcome) -> Result<()> + Sync,
{
    if seeds.is_empty() {
        return Err(AsmError::config("compare needs at least one seed"));
    }
    cfg.validate()?;
    let records = seeds
        .par_iter()
        .map(|&seed| {
            let asm_cfg = cfg.reseeded(seed);
            let base_cfg = asm_cfg.baseline();
            let base = train(ds, &base_cfg)?;
            on_run(seed, Mode::Baseline, &base)?;
            let asm = train(ds, &asm_cfg)?;
            on_run(seed, Mode::Asm, &asm)?;
            Ok(PairedRecord {
                seed,
                seed_net1: asm_cfg.seed_net1,
                seed_net2: asm_cfg.seed_net2,
                seed_data: asm_cfg.seed_data,
                baseline_accuracy: base.summary.last5_accuracy,
                asm_accuracy: asm.summary.last5_accuracy,
                gap: asm.summary.last5_accuracy - base.summary.last5_accuracy,
                mining: asm.summary.final_mining,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let pick = |f: fn(&PairedRecord) -> f64| records.iter().map(f).collect::<Vec<_>>();
    let mined: Vec<&MiningQuality> = records.iter().filter_map(|r| r.mining.as_ref()).collect();
    let mining_stat = |f: fn(&MiningQuality) -> f64| {
        (!mined.is_empty()).then(|| MeanStd::of(&mined.iter().map(|m| f(m)).collect::<Vec<_>>()))
    };
    let aggregate = CompareAggregate {
        runs: records.len(),
        baseline_accuracy: MeanStd::of(&pick(|r| r.baseline_accuracy)),
        asm_accuracy: MeanStd::of(&pick(|r| r.asm_accuracy)),
        gap: MeanStd::of(&pick(|r| r.gap)),
        positive_gaps: records.iter().filter(|r| r.gap > 0.0).count(),
        noisy_precision: mining_stat(|m| m.precision),
        noisy_recall: mining_stat(|m| m.recall),
    };
    Ok(CompareReport { records, aggregate })
}
