//! Independent oracles shared by the integration suites.
#![allow(dead_code)]

use asm_core::cotrain::{
    batch_step, epoch_batches, prediction_pass, DualNet, EpochReport, StepSettings, TrainConfig,
};
use asm_core::data::{NoisyDataset, Split};
use asm_core::losses;
use asm_core::mining::{self, Partition, Subset};
use asm_core::numerics::DenseNet;
use asm_core::thresholds::{compute_thresholds, init_thresholds, ThresholdTable};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const FD_REL_TOL: f64 = 1e-4;
/// Denominator floor so that parameters with (near) zero gradient are judged
/// by absolute error; central differences at h = 1e-5 carry ~1e-11 round-off.
pub const FD_FLOOR: f64 = 1e-6;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random point of the open simplex, optionally sharpened toward one corner.
pub fn random_probs(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let sharp = rng.gen_range(0.5..6.0);
    let raw: Vec<f64> = (0..k).map(|_| (rng.gen::<f64>() * sharp).exp()).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

pub fn random_input(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect()
}

/// A scalar objective of two networks' parameters.
pub type Objective<'a> = dyn Fn(&DenseNet, &DenseNet) -> f64 + 'a;

/// Largest relative error between `analytic` (flattened net1 then net2
/// gradients) and central differences of `f`.
pub fn max_fd_error(nets: &[DenseNet; 2], analytic: &[f64], f: &Objective<'_>) -> f64 {
    let n1 = nets[0].num_params();
    let mut worst: f64 = 0.0;
    for (which, net) in nets.iter().enumerate() {
        let base = net.params_flat();
        for j in 0..base.len() {
            let eval = |delta: f64| {
                let mut p = base.clone();
                p[j] += delta;
                let mut moved = net.clone();
                moved.set_params_flat(&p).unwrap();
                if which == 0 {
                    f(&moved, &nets[1])
                } else {
                    f(&nets[0], &moved)
                }
            };
            let numeric = (eval(FD_STEP) - eval(-FD_STEP)) / (2.0 * FD_STEP);
            let a = analytic[which * n1 + j];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FD_FLOOR);
            worst = worst.max(err);
        }
    }
    worst
}

/// One random gradient-check fixture: two small nets, a labelled input and a
/// weak/strong pair of views.
pub struct GradFixture {
    pub nets: [DenseNet; 2],
    pub x: Vec<f64>,
    pub xw: Vec<f64>,
    pub xs: Vec<f64>,
    pub y: usize,
    pub lambda: f64,
    pub omega: f64,
    pub gamma: f64,
}

impl GradFixture {
    pub fn new(seed: u64) -> Self {
        let mut r = rng(seed);
        let k = r.gen_range(2..=5);
        let d = r.gen_range(2..=6);
        let dims = vec![d, r.gen_range(3..=7), r.gen_range(3..=6), k];
        Self {
            nets: [
                DenseNet::new(&dims, seed.wrapping_mul(31) + 1).unwrap(),
                DenseNet::new(&dims, seed.wrapping_mul(31) + 2).unwrap(),
            ],
            x: random_input(&mut r, d),
            xw: random_input(&mut r, d),
            xs: random_input(&mut r, d),
            y: r.gen_range(0..k),
            lambda: r.gen_range(0.0..=1.0),
            omega: r.gen_range(0.0..2.0),
            gamma: r.gen_range(0.0..2.0),
        }
    }

    fn grads(&self, x: &[f64], up: [&[f64]; 2]) -> Vec<f64> {
        let mut g = self.nets[0].backward(x, up[0]).unwrap().flat();
        g.extend(self.nets[1].backward(x, up[1]).unwrap().flat());
        g
    }

    fn add(a: &mut [f64], b: &[f64], s: f64) {
        for (a, b) in a.iter_mut().zip(b) {
            *a += s * b;
        }
    }

    /// `(name, max relative error)` for every loss term and their composition.
    pub fn check_all(&self) -> Vec<(&'static str, f64)> {
        let (x, xw, xs, y, lambda) = (&self.x, &self.xw, &self.xs, self.y, self.lambda);
        let mut out = Vec::new();

        let p1 = self.nets[0].forward(x).unwrap();
        let p2 = self.nets[1].forward(x).unwrap();

        let ce1 = losses::cross_entropy_grad(&p1, y).unwrap();
        let zero = vec![0.0; p1.len()];
        let g = self.grads(x, [&ce1, &zero]);
        out.push((
            "cross_entropy",
            max_fd_error(&self.nets, &g, &|a, _| {
                losses::cross_entropy(&a.forward(x).unwrap(), y).unwrap()
            }),
        ));

        let (s1, s2) = losses::supervised_loss_grad(&p1, &p2, y).unwrap();
        let g_sup = self.grads(x, [&s1, &s2]);
        out.push((
            "supervised",
            max_fd_error(&self.nets, &g_sup, &|a, b| {
                losses::supervised_loss(&a.forward(x).unwrap(), &b.forward(x).unwrap(), y).unwrap()
            }),
        ));

        let (k1, k2) = losses::symmetric_kl_grad(&p1, &p2).unwrap();
        let g = self.grads(x, [&k1, &k2]);
        out.push((
            "symmetric_kl",
            max_fd_error(&self.nets, &g, &|a, b| {
                losses::symmetric_kl(&a.forward(x).unwrap(), &b.forward(x).unwrap()).unwrap()
            }),
        ));

        let (m1, m2) = losses::mutual_loss_grad(&p1, &p2, y, lambda).unwrap();
        let g_mut = self.grads(x, [&m1, &m2]);
        out.push((
            "mutual",
            max_fd_error(&self.nets, &g_mut, &|a, b| {
                losses::mutual_loss(&a.forward(x).unwrap(), &b.forward(x).unwrap(), y, lambda)
                    .unwrap()
            }),
        ));

        let usc = |a: &DenseNet, b: &DenseNet| {
            losses::consistency_loss(
                &a.forward(xw).unwrap(),
                &a.forward(xs).unwrap(),
                &b.forward(xw).unwrap(),
                &b.forward(xs).unwrap(),
            )
            .unwrap()
        };
        let [pw1, ps1, pw2, ps2] = [
            self.nets[0].forward(xw).unwrap(),
            self.nets[0].forward(xs).unwrap(),
            self.nets[1].forward(xw).unwrap(),
            self.nets[1].forward(xs).unwrap(),
        ];
        let [gw1, gs1, gw2, gs2] =
            losses::consistency_loss_grad(&pw1, &ps1, &pw2, &ps2, false).unwrap();
        let mut g_usc = self.grads(xw, [&gw1, &gw2]);
        Self::add(&mut g_usc, &self.grads(xs, [&gs1, &gs2]), 1.0);
        out.push(("consistency", max_fd_error(&self.nets, &g_usc, &usc)));

        let (omega, gamma) = (self.omega, self.gamma);
        let mut g_total = g_sup.clone();
        Self::add(&mut g_total, &g_mut, omega);
        Self::add(&mut g_total, &g_usc, gamma);
        let w = losses::LossWeights { omega, gamma };
        out.push((
            "total",
            max_fd_error(&self.nets, &g_total, &|a, b| {
                let (qa, qb) = (a.forward(x).unwrap(), b.forward(x).unwrap());
                losses::total_loss(
                    losses::supervised_loss(&qa, &qb, y).unwrap(),
                    losses::mutual_loss(&qa, &qb, y, lambda).unwrap(),
                    usc(a, b),
                    &w,
                )
                .unwrap()
            }),
        ));
        out
    }
}

/// Filter-and-mean thresholds computed straight from the two networks' raw outputs.
pub fn brute_thresholds(
    k: usize,
    p1: &[f64],
    p2: &[f64],
    labels: &[usize],
    previous: &ThresholdTable,
) -> (Vec<f64>, Vec<f64>) {
    let mut t_clean = previous.t_clean.clone();
    let mut t_noisy = previous.t_noisy.clone();
    for class in 0..k {
        let mut sum = 0.0;
        let mut n = 0usize;
        for (i, &y) in labels.iter().enumerate() {
            let avg: Vec<f64> = (0..k)
                .map(|j| 0.5 * (p1[i * k + j] + p2[i * k + j]))
                .collect();
            let mut best = 0;
            for j in 1..k {
                if avg[j] > avg[best] {
                    best = j;
                }
            }
            if y == class && best == class {
                sum += avg[best];
                n += 1;
            }
        }
        if n > 0 {
            t_clean[class] = sum / n as f64;
            t_noisy[class] = 1.0 - sum / n as f64;
        }
    }
    (t_clean, t_noisy)
}

/// Random prediction instance: per-network probability rows and labels that
/// agree with the averaged argmax about `agree` of the time.
pub fn random_instance(
    r: &mut ChaCha8Rng,
    n: usize,
    k: usize,
    agree: f64,
) -> (Vec<f64>, Vec<f64>, Vec<usize>) {
    let mut p1 = Vec::with_capacity(n * k);
    let mut p2 = Vec::with_capacity(n * k);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let a = random_probs(r, k);
        let b = random_probs(r, k);
        let avg: Vec<f64> = a.iter().zip(&b).map(|(a, b)| 0.5 * (a + b)).collect();
        let top = asm_core::numerics::argmax(&avg);
        labels.push(if r.gen::<f64>() < agree {
            top
        } else {
            r.gen_range(0..k)
        });
        p1.extend(a);
        p2.extend(b);
    }
    (p1, p2, labels)
}

/// Runs `epochs` ASM epochs after a warm-up the way a trainer would, except
/// that each batch is first stripped down to its clean members. Returns the
/// networks after every epoch.
pub fn clean_only_reference(ds: &NoisyDataset, cfg: &TrainConfig) -> Vec<DualNet> {
    let train = ds.select(Split::Train);
    let dims = cfg.layer_dims(ds.dim(), ds.num_classes());
    let mut dual = DualNet::new(&dims, cfg.seed_net1, cfg.seed_net2).unwrap();
    let mut order = ChaCha8Rng::seed_from_u64(cfg.seed_data);
    // Clean-only batches never augment; the stream is only there to satisfy the signature.
    let mut aug = ChaCha8Rng::seed_from_u64(cfg.seed_data);
    aug.set_stream(1);
    let mut thresholds = init_thresholds(ds.num_classes()).unwrap();
    let everyone = Partition::all_clean(train.len(), 0);
    let mut snapshots = Vec::new();

    for epoch in 0..cfg.epochs {
        let settings = StepSettings {
            lr: cfg.lr_at(epoch),
            weight_decay: cfg.weight_decay,
            lambda: 0.0,
            weights: cfg.weights,
            augmentation: cfg.augmentation,
            stop_weak_gradient: cfg.stop_weak_gradient,
        };
        let keep: Vec<bool> = if epoch < cfg.warmup_epochs {
            vec![true; train.len()]
        } else {
            let preds = prediction_pass(&dual, &train).unwrap();
            thresholds =
                compute_thresholds(&preds, ds.num_classes(), &thresholds, epoch as i64).unwrap();
            let part = mining::partition(&preds, &thresholds, cfg.mining_score).unwrap();
            part.assignment()
                .iter()
                .map(|&s| s == Subset::Clean)
                .collect()
        };
        for batch in epoch_batches(train.len(), cfg.batch_size, &mut order) {
            let clean: Vec<usize> = batch.into_iter().filter(|&i| keep[i]).collect();
            batch_step(&mut dual, &train, &clean, &everyone, &settings, &mut aug).unwrap();
        }
        snapshots.push(dual.clone());
    }
    snapshots
}

pub fn params_bits(dual: &DualNet) -> Vec<u64> {
    dual.nets
        .iter()
        .flat_map(|n| n.params_flat())
        .map(f64::to_bits)
        .collect()
}

pub fn reports_json(reports: &[EpochReport]) -> String {
    reports
        .iter()
        .map(|r| serde_json::to_string(r).unwrap())
        .collect::<Vec<_>>()
        .join("\n")
}
