//! Synthetic Gaussian-cluster datasets with boundary ("ambiguous") samples,
//! symmetric label-noise injection, feature-space augmentations and CSV I/O.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, AsmError, Result};

/// Mixing weight range toward a foreign center for ambiguous samples.
pub const AMBIGUOUS_MIX: (f64, f64) = (0.35, 0.65);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// Generation parameters; also the JSON schema of `asm gen-data` configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub k: usize,
    pub d: usize,
    /// Training samples per class.
    pub n_per_class: usize,
    /// Test samples per class.
    pub n_test_per_class: usize,
    pub separation: f64,
    pub ambiguous_fraction: f64,
    pub noise_ratio: f64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            k: 3,
            d: 8,
            n_per_class: 1000,
            n_test_per_class: 300,
            separation: 6.0,
            ambiguous_fraction: 0.2,
            noise_ratio: 0.0,
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(AsmError::config(format!(
                "k must be at least 2, got {}",
                self.k
            )));
        }
        if self.d < 2 {
            return Err(AsmError::config(format!(
                "d must be at least 2, got {}",
                self.d
            )));
        }
        if self.d + 1 < self.k {
            return Err(AsmError::config(format!(
                "d = {} cannot host a {}-class simplex (need d >= k - 1)",
                self.d, self.k
            )));
        }
        if self.n_per_class == 0 {
            return Err(AsmError::config("n_per_class must be positive"));
        }
        if !(self.separation > 0.0 && self.separation.is_finite()) {
            return Err(AsmError::config(format!(
                "separation must be positive, got {}",
                self.separation
            )));
        }
        if !(0.0..1.0).contains(&self.ambiguous_fraction) {
            return Err(AsmError::config(format!(
                "ambiguous_fraction must lie in [0, 1), got {}",
                self.ambiguous_fraction
            )));
        }
        if !(0.0..1.0).contains(&self.noise_ratio) {
            return Err(AsmError::config(format!(
                "noise_ratio must lie in [0, 1), got {}",
                self.noise_ratio
            )));
        }
        Ok(())
    }

    /// Clusters plus injected noise, both derived from `seed`.
    pub fn build(&self) -> Result<NoisyDataset> {
        let clean = generate_clusters(self)?;
        inject_symmetric_noise(&clean, self.noise_ratio, noise_seed(self.seed))
    }
}

fn noise_seed(seed: u64) -> u64 {
    seed ^ 0x9e37_79b9_7f4a_7c15
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoisyDataset {
    k: usize,
    d: usize,
    /// Row-major `N x d`.
    features: Vec<f64>,
    given_labels: Vec<usize>,
    true_labels: Vec<usize>,
    noise_mask: Vec<bool>,
    split: Vec<Split>,
}

impl NoisyDataset {
    pub fn new(
        k: usize,
        d: usize,
        features: Vec<f64>,
        given_labels: Vec<usize>,
        true_labels: Vec<usize>,
        split: Vec<Split>,
    ) -> Result<Self> {
        if k < 2 {
            return Err(AsmError::config(format!(
                "need at least 2 classes, got {k}"
            )));
        }
        let n = given_labels.len();
        check_len("feature matrix", n * d, features.len())?;
        check_len("true labels", n, true_labels.len())?;
        check_len("split tags", n, split.len())?;
        for &y in given_labels.iter().chain(&true_labels) {
            if y >= k {
                return Err(AsmError::Label {
                    label: y,
                    classes: k,
                });
            }
        }
        let noise_mask = given_labels
            .iter()
            .zip(&true_labels)
            .map(|(g, t)| g != t)
            .collect();
        Ok(Self {
            k,
            d,
            features,
            given_labels,
            true_labels,
            noise_mask,
            split,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.given_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.given_labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.d..(i + 1) * self.d]
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn given_labels(&self) -> &[usize] {
        &self.given_labels
    }

    pub fn true_labels(&self) -> &[usize] {
        &self.true_labels
    }

    pub fn noise_mask(&self) -> &[bool] {
        &self.noise_mask
    }

    pub fn splits(&self) -> &[Split] {
        &self.split
    }

    pub fn count(&self, split: Split) -> usize {
        self.split.iter().filter(|&&s| s == split).count()
    }

    pub fn noisy_count(&self) -> usize {
        self.noise_mask.iter().filter(|&&m| m).count()
    }

    /// Rows of one split, in their original order.
    pub fn select(&self, split: Split) -> NoisyDataset {
        self.select_rows(
            &(0..self.len())
                .filter(|&i| self.split[i] == split)
                .collect::<Vec<_>>(),
        )
    }

    pub fn select_rows(&self, rows: &[usize]) -> NoisyDataset {
        let mut features = Vec::with_capacity(rows.len() * self.d);
        for &i in rows {
            features.extend_from_slice(self.row(i));
        }
        NoisyDataset {
            k: self.k,
            d: self.d,
            features,
            given_labels: rows.iter().map(|&i| self.given_labels[i]).collect(),
            true_labels: rows.iter().map(|&i| self.true_labels[i]).collect(),
            noise_mask: rows.iter().map(|&i| self.noise_mask[i]).collect(),
            split: rows.iter().map(|&i| self.split[i]).collect(),
        }
    }
}

/// `k` points in `R^d` with all pairwise distances equal to `separation`.
///
/// Built from the centered standard basis of `R^k`, expressed in an
/// orthonormal basis of its `(k-1)`-dimensional span and zero-padded.
pub fn simplex_centers(k: usize, d: usize, separation: f64) -> Vec<Vec<f64>> {
    let centered: Vec<Vec<f64>> = (0..k)
        .map(|i| {
            (0..k)
                .map(|j| if i == j { 1.0 } else { 0.0 } - 1.0 / k as f64)
                .collect()
        })
        .collect();
    // Gram-Schmidt over the first k-1 centered vectors.
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(k - 1);
    for v in centered.iter().take(k - 1) {
        let mut u = v.clone();
        for b in &basis {
            let dot: f64 = u.iter().zip(b).map(|(a, b)| a * b).sum();
            for (ui, bi) in u.iter_mut().zip(b) {
                *ui -= dot * bi;
            }
        }
        let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        basis.push(u.into_iter().map(|x| x / norm).collect());
    }
    let scale = separation / std::f64::consts::SQRT_2;
    centered
        .iter()
        .map(|v| {
            let mut c = vec![0.0; d];
            for (slot, b) in c.iter_mut().zip(&basis) {
                *slot = scale * v.iter().zip(b).map(|(a, b)| a * b).sum::<f64>();
            }
            c
        })
        .collect()
}

/// Gaussian clusters on a regular simplex; a fraction of every class is drawn
/// around a point between its own center and a random foreign one.
pub fn generate_clusters(cfg: &GenConfig) -> Result<NoisyDataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let centers = simplex_centers(cfg.k, cfg.d, cfg.separation);

    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut split = Vec::new();
    for (tag, per_class) in [
        (Split::Train, cfg.n_per_class),
        (Split::Test, cfg.n_test_per_class),
    ] {
        let mut rows: Vec<(usize, Vec<f64>)> = Vec::with_capacity(per_class * cfg.k);
        let n_amb = (cfg.ambiguous_fraction * per_class as f64).round() as usize;
        for class in 0..cfg.k {
            for i in 0..per_class {
                let mean: Vec<f64> = if i < n_amb {
                    let mut other = rng.gen_range(0..cfg.k - 1);
                    if other >= class {
                        other += 1;
                    }
                    let w = rng.gen_range(AMBIGUOUS_MIX.0..AMBIGUOUS_MIX.1);
                    centers[class]
                        .iter()
                        .zip(&centers[other])
                        .map(|(a, b)| (1.0 - w) * a + w * b)
                        .collect()
                } else {
                    centers[class].clone()
                };
                let x = mean
                    .iter()
                    .map(|m| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        m + z
                    })
                    .collect();
                rows.push((class, x));
            }
        }
        rows.shuffle(&mut rng);
        for (class, x) in rows {
            labels.push(class);
            features.extend(x);
            split.push(tag);
        }
    }
    NoisyDataset::new(cfg.k, cfg.d, features, labels.clone(), labels, split)
}

/// Flips exactly `floor(ratio * N_train)` training labels, each to a uniformly
/// chosen different class. Test rows are never touched.
pub fn inject_symmetric_noise(ds: &NoisyDataset, ratio: f64, seed: u64) -> Result<NoisyDataset> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(AsmError::config(format!(
            "noise ratio must lie in [0, 1), got {ratio}"
        )));
    }
    if ds.noise_mask.iter().any(|&m| m) {
        return Err(AsmError::config("dataset already carries injected noise"));
    }
    let train: Vec<usize> = (0..ds.len())
        .filter(|&i| ds.split[i] == Split::Train)
        .collect();
    let flips = (ratio * train.len() as f64).floor() as usize;
    let mut out = ds.clone();
    if flips == 0 {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = sample(&mut rng, train.len(), flips).into_vec();
    chosen.sort_unstable();
    for pos in chosen {
        let i = train[pos];
        let truth = out.true_labels[i];
        let mut label = rng.gen_range(0..ds.k - 1);
        if label >= truth {
            label += 1;
        }
        out.given_labels[i] = label;
        out.noise_mask[i] = true;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AugmentMode {
    Weak,
    Strong,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationPolicy {
    pub weak_sigma: f64,
    pub strong_sigma: f64,
    /// Per-coordinate zeroing probability of the strong view.
    pub mask_prob: f64,
}

impl Default for AugmentationPolicy {
    fn default() -> Self {
        Self {
            weak_sigma: 0.1,
            strong_sigma: 0.5,
            mask_prob: 0.2,
        }
    }
}

impl AugmentationPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.weak_sigma >= 0.0 && self.weak_sigma.is_finite()) {
            return Err(AsmError::config(format!(
                "augmentation.weak_sigma must be non-negative, got {}",
                self.weak_sigma
            )));
        }
        if !(self.strong_sigma >= self.weak_sigma && self.strong_sigma.is_finite()) {
            return Err(AsmError::config(format!(
                "augmentation.strong_sigma ({}) must be finite and at least weak_sigma ({})",
                self.strong_sigma, self.weak_sigma
            )));
        }
        if !(0.0..=1.0).contains(&self.mask_prob) {
            return Err(AsmError::config(format!(
                "augmentation.mask_prob must lie in [0, 1], got {}",
                self.mask_prob
            )));
        }
        Ok(())
    }
}

/// Weak: Gaussian jitter. Strong: larger jitter, then random coordinate masking.
pub fn augment<R: Rng + ?Sized>(
    x: &[f64],
    policy: &AugmentationPolicy,
    mode: AugmentMode,
    rng: &mut R,
) -> Vec<f64> {
    let sigma = match mode {
        AugmentMode::Weak => policy.weak_sigma,
        AugmentMode::Strong => policy.strong_sigma,
    };
    // sigma is validated finite and non-negative
    let noise = Normal::new(0.0, sigma).expect("valid sigma");
    x.iter()
        .map(|v| {
            let jittered = v + noise.sample(rng);
            if mode == AugmentMode::Strong && rng.gen::<f64>() < policy.mask_prob {
                0.0
            } else {
                jittered
            }
        })
        .collect()
}

const CSV_FIXED_COLUMNS: [&str; 5] = ["id", "split", "given_label", "true_label", "is_noisy"];

pub fn save_csv(ds: &NoisyDataset, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| AsmError::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let map_csv = |e: csv::Error| AsmError::io(path, std::io::Error::other(e));

    let mut header: Vec<String> = CSV_FIXED_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend((0..ds.d).map(|j| format!("f{j}")));
    w.write_record(&header).map_err(map_csv)?;
    for i in 0..ds.len() {
        let mut rec = vec![
            i.to_string(),
            ds.split[i].as_str().to_string(),
            ds.given_labels[i].to_string(),
            ds.true_labels[i].to_string(),
            ds.noise_mask[i].to_string(),
        ];
        // `Display` for f64 prints the shortest string that parses back exactly.
        rec.extend(ds.row(i).iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(map_csv)?;
    }
    let mut inner = w
        .into_inner()
        .map_err(|e| AsmError::io(path, e.into_error()))?;
    inner.flush().map_err(|e| AsmError::io(path, e))
}

/// Loads a dataset CSV. With `k = None` the class count is inferred as
/// `max label + 1` (at least 2).
pub fn load_csv(path: &Path, k: Option<usize>) -> Result<NoisyDataset> {
    let file = File::open(path).map_err(|e| AsmError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_reader(file);
    let mut records = reader.records();

    let parse_err = |line: u64, message: String| AsmError::Parse { line, message };

    let header = match records.next() {
        None => return Err(parse_err(1, "empty file, expected a header row".into())),
        Some(r) => r.map_err(|e| parse_err(1, e.to_string()))?,
    };
    let cols: Vec<&str> = header.iter().collect();
    if cols.len() < CSV_FIXED_COLUMNS.len() + 1 || cols[..5] != CSV_FIXED_COLUMNS {
        return Err(parse_err(
            1,
            format!("header must start with {CSV_FIXED_COLUMNS:?} followed by f0..fD-1"),
        ));
    }
    let d = cols.len() - CSV_FIXED_COLUMNS.len();
    for (j, c) in cols[5..].iter().enumerate() {
        if *c != format!("f{j}") {
            return Err(parse_err(1, format!("expected column f{j}, found {c:?}")));
        }
    }

    let mut features = Vec::new();
    let mut given = Vec::new();
    let mut truth = Vec::new();
    let mut mask = Vec::new();
    let mut split = Vec::new();
    for rec in records {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != cols.len() {
            return Err(parse_err(
                line,
                format!("expected {} fields, found {}", cols.len(), rec.len()),
            ));
        }
        let field = |j: usize| rec.get(j).unwrap().trim();
        field(0)
            .parse::<usize>()
            .map_err(|e| parse_err(line, format!("id {:?}: {e}", field(0))))?;
        split.push(match field(1) {
            "train" => Split::Train,
            "test" => Split::Test,
            other => return Err(parse_err(line, format!("unknown split {other:?}"))),
        });
        let label = |j: usize, name: &str| -> Result<usize> {
            let v: usize = field(j)
                .parse()
                .map_err(|e| parse_err(line, format!("{name} {:?}: {e}", field(j))))?;
            if let Some(k) = k {
                if v >= k {
                    return Err(parse_err(
                        line,
                        format!("{name} {v} out of range for {k} classes"),
                    ));
                }
            }
            Ok(v)
        };
        let g = label(2, "given_label")?;
        let t = label(3, "true_label")?;
        let noisy: bool = field(4)
            .parse()
            .map_err(|e| parse_err(line, format!("is_noisy {:?}: {e}", field(4))))?;
        if noisy != (g != t) {
            return Err(parse_err(
                line,
                format!("is_noisy = {noisy} disagrees with labels {g}/{t}"),
            ));
        }
        for j in 0..d {
            let v: f64 = field(5 + j)
                .parse()
                .map_err(|e| parse_err(line, format!("f{j} {:?}: {e}", field(5 + j))))?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("f{j} is not finite")));
            }
            features.push(v);
        }
        given.push(g);
        truth.push(t);
        mask.push(noisy);
    }
    if given.is_empty() {
        return Err(parse_err(2, "no data rows".into()));
    }
    let k = match k {
        Some(k) => k,
        None => given
            .iter()
            .chain(&truth)
            .max()
            .map_or(2, |m| (m + 1).max(2)),
    };
    NoisyDataset::new(k, d, features, given, truth, split)
}
