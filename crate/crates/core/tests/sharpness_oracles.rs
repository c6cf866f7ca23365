mod common;

use common::{grid_sharpness, random_case, NumericObjective};
use flatland::model::{ClassWeights, MlpModel, MlpSpec};
use flatland::sharpness::{batch_sharpness, dataset_sharpness, sharpness_of, SharpnessConfig};
use flatland::synthbench::{generate_matched_test, TaskSpec};
use flatland::{Activation, Dataset, ParamVector};

fn toy_losses() -> Vec<(&'static str, common::ToyLoss, Vec<f64>)> {
    let data = [(0.5, -1.0, 1.0), (-1.5, 0.3, -1.0), (2.0, 1.0, 1.0), (0.2, -0.7, -1.0)];
    vec![
        (
            "logistic-2",
            Box::new(move |w: &[f64]| {
                data.iter()
                    .map(|(a, b, y)| (1.0 + (-(y * (w[0] * a + w[1] * b))).exp()).ln())
                    .sum::<f64>()
                    / 4.0
            }),
            vec![0.4, -0.2],
        ),
        (
            "wavy-2",
            Box::new(|w: &[f64]| (3.0 * w[0]).sin() * (2.0 * w[1]).cos() + 0.5 * w[0] * w[0]),
            vec![0.1, 0.3],
        ),
        (
            "quartic-3",
            Box::new(|w: &[f64]| {
                w[0].powi(4) - w[0] * w[1] + 0.5 * w[1] * w[1] + (w[2] - 0.2).powi(2) * (1.0 + w[0] * w[0])
            }),
            vec![0.3, -0.1, 0.5],
        ),
        (
            "saddle-3",
            Box::new(|w: &[f64]| w[0] * w[0] - w[1] * w[1] + 0.3 * w[2].powi(3)),
            vec![0.0, 0.0, 0.0],
        ),
    ]
}

#[test]
fn estimator_matches_dense_grid_search_on_tiny_models() {
    for (name, f, w0) in toy_losses() {
        for rho in [0.05, 0.3] {
            let (oracle, points) = grid_sharpness(&*f, &w0, rho);
            assert!(points >= 10_000);
            let cfg = SharpnessConfig {
                rho,
                ascent_steps: 50,
                restarts: 5,
                ..SharpnessConfig::default()
            };
            let est = sharpness_of(&NumericObjective(&f), &ParamVector::from_slice(&w0), &cfg, 3)
                .unwrap()
                .value;
            let rel = (est - oracle).abs() / oracle;
            assert!(rel <= 0.02, "{name} rho {rho}: estimate {est} vs grid {oracle}");
        }
    }
}

#[test]
fn larger_radius_is_never_flatter() {
    for seed in 0..20 {
        let (model, batch) = random_case(300 + seed, Activation::Relu);
        let small = SharpnessConfig::default().with_rho(0.01);
        let large = SharpnessConfig::default().with_rho(0.05);
        let a = batch_sharpness(&model, &batch, &small).unwrap();
        let b = batch_sharpness(&model, &batch, &large).unwrap();
        assert!(a <= b, "seed {seed}: {a} > {b}");
    }
}

fn small_task() -> Dataset {
    let task = TaskSpec {
        n_train: 200,
        n_eval: 256,
        ..TaskSpec::default()
    };
    generate_matched_test(&task).unwrap().dataset
}

#[test]
fn scaling_output_logits_sharpens() {
    let data = small_task();
    let spec = MlpSpec::new(vec![20, 8, 2], Activation::Tanh).unwrap();
    let cfg = SharpnessConfig::default();
    for seed in 0..3 {
        let a = MlpModel::init(spec.clone(), seed).unwrap();
        let mut vals = a.params().values().to_vec();
        for e in a
            .params()
            .layout()
            .entries()
            .iter()
            .filter(|e| e.name.starts_with("layer1"))
        {
            vals[e.range()].iter_mut().for_each(|v| *v *= 10.0);
        }
        let b = a.with_params(a.params().with_values(vals).unwrap()).unwrap();
        let sa = dataset_sharpness(&a, &data, &cfg).unwrap().mean;
        let sb = dataset_sharpness(&b, &data, &cfg).unwrap().mean;
        assert!(sb >= sa, "seed {seed}: {sb} < {sa}");
    }
}

#[test]
fn single_batch_dataset_and_duplication() {
    let data = small_task();
    let spec = MlpSpec::new(vec![20, 6, 2], Activation::Relu).unwrap();
    let model = MlpModel::init(spec, 1).unwrap();
    let cfg = SharpnessConfig::default();

    let one = data.gather(&(0..32).collect::<Vec<_>>()).unwrap();
    let one_ds = Dataset::new("one", 20, one.features().data().to_vec(), one.labels().to_vec()).unwrap();
    let rep = dataset_sharpness(&model, &one_ds, &cfg).unwrap();
    assert_eq!(rep.per_batch.len(), 1);
    assert_eq!(rep.mean, batch_sharpness(&model, &one, &cfg).unwrap());

    let twice = data.concat(&data).unwrap();
    let r1 = dataset_sharpness(&model, &data, &cfg).unwrap();
    let r2 = dataset_sharpness(&model, &twice, &cfg).unwrap();
    assert_eq!(r2.per_batch.len(), 2 * r1.per_batch.len());
    assert!((r1.mean - r2.mean).abs() <= 1e-15 * r1.mean.max(1.0));
    assert!(r1.per_batch.iter().all(|v| *v >= 0.0));
}

#[test]
fn class_weights_follow_the_config() {
    let (model, batch) = random_case(5, Activation::Tanh);
    let mut cfg = SharpnessConfig::default();
    let base = batch_sharpness(&model, &batch, &cfg).unwrap();
    cfg.class_weights = ClassWeights::default().scaled(2.0);
    let doubled = batch_sharpness(&model, &batch, &cfg).unwrap();
    // The loss doubles everywhere, so the maximizer is unchanged.
    assert!((doubled - 2.0 * base).abs() <= 1e-9 * doubled.max(1e-12));
}
