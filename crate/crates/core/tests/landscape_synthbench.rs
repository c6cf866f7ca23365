mod common;

use common::{class_means, rng};
use flatland::data::{BONA_FIDE, SPOOF};
use flatland::landscape::{evaluate_grid, grid_axis, sample_directions, Normalization};
use flatland::metrics::{compute_eer, ScoreSet};
use flatland::model::{weighted_cross_entropy, ClassWeights, MlpModel, MlpSpec};
use flatland::synthbench::{
    generate_matched_test, generate_shifted_test, generate_train, ShiftAxis, ShiftSpec, TaskSpec,
};
use flatland::{Activation, Dataset, Tensor};
use rand::Rng;

/// A 1 -> 2 linear model has four parameters; fixing two of them to zero in
/// the directions leaves a two-parameter slice.
#[test]
fn grid_matches_direct_loss_evaluation() {
    let spec = MlpSpec::new(vec![1, 2], Activation::Relu).unwrap();
    let model = MlpModel::zeros(spec).unwrap();
    let w = vec![0.8, -0.5, 0.1, -0.1];
    let model = model
        .with_params(model.params().with_values(w.clone()).unwrap())
        .unwrap();
    let mut r = rng(4);
    let xs: Vec<f64> = (0..40).map(|_| r.random_range(-2.0..2.0)).collect();
    let ys: Vec<usize> = xs.iter().map(|x| usize::from(*x < 0.3)).collect();
    let data = Dataset::new("toy", 1, xs.clone(), ys.clone()).unwrap();

    let mut dirs = sample_directions(&model, 9, Normalization::None).unwrap();
    dirs.d1 = dirs.d1.with_values(vec![1.0, 0.0, 0.0, 0.0]).unwrap();
    dirs.d2 = dirs.d2.with_values(vec![0.0, 1.0, 0.0, 0.0]).unwrap();
    let grid = evaluate_grid(&model, &data, &dirs, 2.0, 9, ClassWeights::default()).unwrap();

    for (i, a) in grid.alphas.iter().enumerate() {
        for (j, b) in grid.betas.iter().enumerate() {
            let (w0, w1) = (w[0] + a, w[1] + b);
            let mut total = 0.0;
            for (x, y) in xs.iter().zip(&ys) {
                let l0 = w0 * x + w[2];
                let l1 = w1 * x + w[3];
                let m = l0.max(l1);
                let lse = m + ((l0 - m).exp() + (l1 - m).exp()).ln();
                let nll = lse - if *y == 0 { l0 } else { l1 };
                total += if *y == 0 { 0.9 } else { 0.1 } * nll;
            }
            let want = total / xs.len() as f64;
            let got = grid.losses[i][j].unwrap();
            assert!((got - want).abs() <= 1e-12, "({a}, {b}): {got} vs {want}");
        }
    }
    assert_eq!(grid.center().unwrap().to_bits(), grid.origin_loss.to_bits());
}

#[test]
fn refinement_shares_exact_values() {
    let task = TaskSpec {
        n_train: 100,
        n_eval: 128,
        ..TaskSpec::default()
    };
    let data = generate_matched_test(&task).unwrap().dataset;
    let model = MlpModel::init(MlpSpec::new(vec![20, 4, 2], Activation::Tanh).unwrap(), 2).unwrap();
    let dirs = sample_directions(&model, 5, Normalization::Filter).unwrap();
    let coarse = evaluate_grid(&model, &data, &dirs, 1.0, 5, ClassWeights::default()).unwrap();
    let fine = evaluate_grid(&model, &data, &dirs, 1.0, 9, ClassWeights::default()).unwrap();
    for i in 0..5 {
        for j in 0..5 {
            assert_eq!(coarse.losses[i][j], fine.losses[2 * i][2 * j]);
        }
    }
    assert_eq!(grid_axis(1.0, 41)[20], 0.0);
}

#[test]
fn raw_directions_have_chi_distributed_block_norms() {
    // Block norms of standard Gaussian vectors of length k have E[norm^2] = k.
    let model = MlpModel::init(MlpSpec::new(vec![20, 16, 2], Activation::Relu).unwrap(), 0).unwrap();
    let entries = model.params().layout().entries().to_vec();
    let mut sums = vec![0.0; entries.len()];
    let trials = 200;
    for seed in 0..trials {
        let d = sample_directions(&model, seed, Normalization::None).unwrap();
        for (k, e) in entries.iter().enumerate() {
            sums[k] += d.d1.block(e).iter().map(|v| v * v).sum::<f64>();
        }
    }
    for (k, e) in entries.iter().enumerate() {
        let mean = sums[k] / trials as f64;
        let len = e.len() as f64;
        // Standard error of the mean of a chi-square(k) is sqrt(2k / trials).
        let se = (2.0 * len / trials as f64).sqrt();
        assert!((mean - len).abs() < 5.0 * se, "{}: {mean} vs {len}", e.name);
    }
}

fn task() -> TaskSpec {
    TaskSpec::default()
}

#[test]
fn speaker_shift_preserves_class_means() {
    let t = task();
    let matched = generate_matched_test(&t).unwrap().dataset;
    for level in [2, 4, 16] {
        let s = generate_shifted_test(&t, &ShiftSpec::new(ShiftAxis::Speaker, level))
            .unwrap()
            .dataset;
        for label in [BONA_FIDE, SPOOF] {
            let a = class_means(&matched, label);
            let b = class_means(&s, label);
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() <= 0.05, "level {level} label {label}: {x} vs {y}");
            }
        }
    }
}

#[test]
fn channel_groups_have_distinct_statistics() {
    let t = task();
    let g = generate_shifted_test(&t, &ShiftSpec::new(ShiftAxis::Channel, 3)).unwrap();
    assert_eq!(g.provenance.channel_seeds.len(), 3);
    let mut seeds = g.provenance.channel_seeds.clone();
    seeds.dedup();
    assert_eq!(seeds.len(), 3);
    let d = &g.dataset;
    let means: Vec<Vec<f64>> = (0..3)
        .map(|grp| {
            let idx: Vec<usize> = (0..d.len()).filter(|i| i % 3 == grp).collect();
            let mut m = vec![0.0; d.dim()];
            for &i in &idx {
                m.iter_mut()
                    .zip(d.sample(i).0)
                    .for_each(|(a, v)| *a += v / idx.len() as f64);
            }
            m
        })
        .collect();
    let mut total = 0.0;
    for a in 0..3 {
        for b in a + 1..3 {
            total += means[a]
                .iter()
                .zip(&means[b])
                .map(|(x, y)| (x - y).powi(2))
                .sum::<f64>()
                .sqrt();
        }
    }
    assert!(total / 3.0 > 0.0);
}

#[test]
fn sample_counts_do_not_depend_on_attack_level() {
    let t = task();
    let counts: Vec<(usize, usize)> = (0..=t.max_attack_level)
        .map(|l| {
            let d = generate_shifted_test(&t, &ShiftSpec::new(ShiftAxis::Attack, l))
                .unwrap()
                .dataset;
            (d.count_label(BONA_FIDE), d.count_label(SPOOF))
        })
        .collect();
    assert!(counts.iter().all(|c| *c == counts[0]));
}

/// Plain logistic regression on the raw features, fitted by full-batch
/// gradient descent, as an independent learnability check.
#[test]
fn linear_probe_learns_the_matched_task() {
    let t = task();
    let train = generate_train(&t).unwrap().dataset;
    let test = generate_matched_test(&t).unwrap().dataset;
    let dim = train.dim();
    let mut w = vec![0.0; dim + 1];
    for _ in 0..300 {
        let mut g = vec![0.0; dim + 1];
        for i in 0..train.len() {
            let (x, y) = train.sample(i);
            let z = w[dim] + x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
            let p = 1.0 / (1.0 + (-z).exp());
            let target = if y == BONA_FIDE { 1.0 } else { 0.0 };
            for k in 0..dim {
                g[k] += (p - target) * x[k];
            }
            g[dim] += p - target;
        }
        for k in 0..=dim {
            w[k] -= 0.5 * g[k] / train.len() as f64;
        }
    }
    let scores: Vec<f64> = (0..test.len())
        .map(|i| w[dim] + test.sample(i).0.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>())
        .collect();
    let eer = compute_eer(&ScoreSet::from_labeled(&scores, test.labels()).unwrap())
        .unwrap()
        .eer;
    assert!(eer < 0.3, "probe EER {eer}");
}

#[test]
fn untrained_models_score_near_chance() {
    let t = task();
    let test = generate_matched_test(&t).unwrap().dataset;
    let spec = MlpSpec::new(vec![20, 128, 2], Activation::Relu).unwrap();
    let mut total = 0.0;
    for seed in 0..10 {
        let m = MlpModel::init(spec.clone(), seed).unwrap();
        let logits = m.forward(&test.as_batch().unwrap()).unwrap();
        let (l, _) = weighted_cross_entropy(&logits, test.labels(), ClassWeights::default()).unwrap();
        assert!(l.is_finite());
        let scores: Vec<f64> = (0..test.len()).map(|i| logits.row(i)[0] - logits.row(i)[1]).collect();
        total += compute_eer(&ScoreSet::from_labeled(&scores, test.labels()).unwrap())
            .unwrap()
            .eer;
    }
    let _ = Tensor::zeros(vec![1, 1]);
    assert!((total / 10.0 - 0.5).abs() <= 0.1, "mean EER {}", total / 10.0);
}

#[test]
fn chunked_dataset_loss_equals_single_batch_loss() {
    let t = TaskSpec { n_eval: 1000, ..task() };
    let data = generate_matched_test(&t).unwrap().dataset;
    let model = MlpModel::init(MlpSpec::new(vec![20, 8, 2], Activation::Relu).unwrap(), 3).unwrap();
    let w = model.params().clone();
    let chunked = flatland::landscape::dataset_loss(&model, &w, &data, ClassWeights::default()).unwrap();
    let whole = model.loss(&data.as_batch().unwrap(), ClassWeights::default()).unwrap();
    assert_eq!(chunked.to_bits(), whole.to_bits());
}
