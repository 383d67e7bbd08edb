//! Generator, noise injection, augmentation and CSV persistence.

mod common;

use asm_core::data::{
    augment, generate_clusters, inject_symmetric_noise, load_csv, save_csv, simplex_centers,
    AugmentMode, AugmentationPolicy, GenConfig, NoisyDataset, Split,
};
use asm_core::numerics::{argmax, softmax};
use asm_core::AsmError;
use common::rng;

/// 0.99 quantile of the chi-square distribution with 15 degrees of freedom.
const CHI2_15DF_P01: f64 = 30.578;

#[test]
fn flipped_labels_are_uniform_over_other_classes() {
    let k = 5;
    let ds = GenConfig {
        k,
        n_per_class: 4000,
        n_test_per_class: 1,
        noise_ratio: 0.3,
        seed: 17,
        ..GenConfig::default()
    }
    .build()
    .unwrap();
    // For each true class the flipped label should be uniform over the k - 1
    // others: k tables of k - 1 cells, k * (k - 2) = 15 degrees of freedom.
    let mut table = vec![vec![0usize; k]; k];
    for i in 0..ds.len() {
        if ds.noise_mask()[i] {
            let (t, g) = (ds.true_labels()[i], ds.given_labels()[i]);
            assert_ne!(t, g);
            table[t][g] += 1;
        }
    }
    let mut chi2 = 0.0;
    for (t, row) in table.iter().enumerate() {
        let n: usize = row.iter().sum();
        let expected = n as f64 / (k - 1) as f64;
        for (g, &o) in row.iter().enumerate() {
            if g != t {
                chi2 += (o as f64 - expected).powi(2) / expected;
            }
        }
    }
    assert!(chi2 < CHI2_15DF_P01, "chi2 = {chi2}");
}

#[test]
fn injection_is_exact_and_leaves_test_rows_alone() {
    let clean = generate_clusters(&GenConfig {
        n_per_class: 500,
        n_test_per_class: 100,
        k: 2,
        ..GenConfig::default()
    })
    .unwrap();
    assert_eq!(clean.count(Split::Train), 1000);
    let noisy = inject_symmetric_noise(&clean, 0.3, 1).unwrap();
    assert_eq!(noisy.noisy_count(), 300);
    for i in 0..noisy.len() {
        let flipped = noisy.given_labels()[i] != noisy.true_labels()[i];
        assert_eq!(flipped, noisy.noise_mask()[i]);
        if noisy.splits()[i] == Split::Test {
            assert!(!flipped);
        }
    }
    assert_eq!(inject_symmetric_noise(&clean, 0.0, 1).unwrap(), clean);
    assert!(matches!(
        inject_symmetric_noise(&noisy, 0.1, 2),
        Err(AsmError::Config(_))
    ));
    assert!(inject_symmetric_noise(&clean, 1.0, 2).is_err());
}

#[test]
fn generation_is_deterministic_and_sized() {
    let cfg = GenConfig {
        n_per_class: 100,
        n_test_per_class: 0,
        ..GenConfig::default()
    };
    let a = cfg.build().unwrap();
    assert_eq!(a.len(), 300);
    assert_eq!(a.noisy_count(), 0);
    assert_eq!(a, cfg.build().unwrap());
    assert_ne!(a, GenConfig { seed: 1, ..cfg }.build().unwrap());
}

#[test]
fn simplex_centers_are_equidistant() {
    for (k, d, sep) in [(2, 2, 3.0), (3, 8, 6.0), (5, 4, 20.0), (7, 6, 1.5)] {
        let c = simplex_centers(k, d, sep);
        for i in 0..k {
            for j in i + 1..k {
                let dist: f64 = c[i].iter().zip(&c[j]).map(|(a, b)| (a - b).powi(2)).sum();
                assert!(
                    (dist.sqrt() - sep).abs() < 1e-9,
                    "k={k} d={d}: {}",
                    dist.sqrt()
                );
            }
        }
    }
}

/// Multinomial logistic regression by full-batch gradient descent.
fn fit_softmax_regression(ds: &NoisyDataset, iters: usize, lr: f64) -> Vec<Vec<f64>> {
    let (k, d) = (ds.num_classes(), ds.dim());
    let mut w = vec![vec![0.0; d + 1]; k];
    let n = ds.len() as f64;
    for _ in 0..iters {
        let mut grad = vec![vec![0.0; d + 1]; k];
        for i in 0..ds.len() {
            let x = ds.row(i);
            let logits: Vec<f64> = w
                .iter()
                .map(|wc| wc[d] + wc[..d].iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
                .collect();
            let p = softmax(&logits);
            for c in 0..k {
                let g = p[c] - f64::from(u8::from(ds.given_labels()[i] == c));
                for j in 0..d {
                    grad[c][j] += g * x[j] / n;
                }
                grad[c][d] += g / n;
            }
        }
        for c in 0..k {
            for j in 0..=d {
                w[c][j] -= lr * grad[c][j];
            }
        }
    }
    w
}

#[test]
fn far_clusters_are_linearly_separable() {
    let ds = GenConfig {
        separation: 20.0,
        ambiguous_fraction: 0.0,
        n_per_class: 300,
        n_test_per_class: 300,
        seed: 4,
        ..GenConfig::default()
    }
    .build()
    .unwrap();
    let w = fit_softmax_regression(&ds.select(Split::Train), 200, 0.05);
    let test = ds.select(Split::Test);
    let d = test.dim();
    let hits = (0..test.len())
        .filter(|&i| {
            let x = test.row(i);
            let logits: Vec<f64> = w
                .iter()
                .map(|wc| wc[d] + wc[..d].iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
                .collect();
            argmax(&logits) == test.true_labels()[i]
        })
        .count();
    let acc = hits as f64 / test.len() as f64;
    assert!(acc >= 0.99, "held-out accuracy {acc}");
}

#[test]
fn weak_augmentation_variance_matches_sigma() {
    let policy = AugmentationPolicy::default();
    let x = [0.5, -1.0, 2.0, 0.0];
    let mut r = rng(3);
    let n = 10_000;
    let draws: Vec<Vec<f64>> = (0..n)
        .map(|_| augment(&x, &policy, AugmentMode::Weak, &mut r))
        .collect();
    let target = policy.weak_sigma.powi(2);
    for j in 0..x.len() {
        let mean = draws.iter().map(|v| v[j]).sum::<f64>() / n as f64;
        let var = draws.iter().map(|v| (v[j] - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(
            (var - target).abs() <= 0.05 * target,
            "coord {j}: {var} vs {target}"
        );
    }
}

#[test]
fn augmentation_edge_cases() {
    let x = vec![1.0, -2.0, 3.5];
    let mut r = rng(5);
    let still = AugmentationPolicy {
        weak_sigma: 0.0,
        ..AugmentationPolicy::default()
    };
    assert_eq!(augment(&x, &still, AugmentMode::Weak, &mut r), x);
    let erase = AugmentationPolicy {
        mask_prob: 1.0,
        ..AugmentationPolicy::default()
    };
    assert_eq!(
        augment(&x, &erase, AugmentMode::Strong, &mut r),
        vec![0.0; 3]
    );
}

#[test]
fn csv_round_trip_is_lossless() {
    let ds = GenConfig {
        n_per_class: 40,
        n_test_per_class: 10,
        k: 4,
        d: 5,
        noise_ratio: 0.25,
        seed: 8,
        ..GenConfig::default()
    }
    .build()
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ds.csv");
    save_csv(&ds, &path).unwrap();
    let back = load_csv(&path, Some(4)).unwrap();
    assert_eq!(back, ds);
    let bits = |d: &NoisyDataset| d.features().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&back), bits(&ds));
}

#[test]
fn csv_rejects_out_of_range_label_with_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    std::fs::write(
        &path,
        "id,split,given_label,true_label,is_noisy,f0,f1\n\
         0,train,0,0,false,0.1,0.2\n\
         1,train,2,2,false,0.3,0.4\n",
    )
    .unwrap();
    match load_csv(&path, Some(2)) {
        Err(AsmError::Parse { line, .. }) => assert_eq!(line, 3),
        other => panic!("expected parse error, got {other:?}"),
    }
    std::fs::write(&path, "").unwrap();
    assert!(matches!(load_csv(&path, None), Err(AsmError::Parse { .. })));
}
