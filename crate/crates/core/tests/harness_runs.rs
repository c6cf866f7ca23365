mod common;

use flatland::harness::benchmark::{load_runs, results_csv};
use flatland::harness::run::{run_dir, scores_csv, train_or_load, RESULT_FILE, TIMING_FILE};
use flatland::harness::*;
use flatland::metrics::{compute_eer, ScoreSet};
use flatland::sharpness::SharpnessConfig;
use flatland::synthbench::{generate_train, ShiftAxis, ShiftSpec, TaskSpec};
use flatland::{checkpoint, Dataset};

fn small(dir: &std::path::Path) -> ExperimentConfig {
    ExperimentConfig {
        task: TaskSpec {
            n_train: 400,
            n_eval: 200,
            ..TaskSpec::default()
        },
        shifts: vec![ShiftSpec::new(ShiftAxis::Channel, 3)],
        model: ModelConfig {
            hidden: vec![16],
            ..ModelConfig::default()
        },
        epochs: 3,
        seeds: vec![0, 1],
        sharpness: SharpnessConfig {
            ascent_steps: 3,
            restarts: 1,
            ..SharpnessConfig::default()
        },
        output_dir: dir.to_path_buf(),
        ..ExperimentConfig::default()
    }
}

#[test]
fn same_seed_gives_identical_models() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path());
    let train = generate_train(&cfg.task).unwrap().dataset;
    let a = train_model(&cfg, &train, 7).unwrap();
    let b = train_model(&cfg, &train, 7).unwrap();
    let c = train_model(&cfg, &train, 8).unwrap();
    assert_eq!(a.model.params().values(), b.model.params().values());
    assert_eq!(a.log_csv(), b.log_csv());
    assert_ne!(a.model.fingerprint(), c.model.fingerprint());
}

#[test]
fn sam_with_zero_perturbation_reproduces_adam() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    let train = generate_train(&cfg.task).unwrap().dataset;
    let adam = train_model(&cfg, &train, 3).unwrap().model;
    cfg.optimizer = OptimizerChoice::Sam {
        rho: 0.05,
        adam: default_adam(),
        force_zero_perturbation: true,
    };
    let sam = train_model(&cfg, &train, 3).unwrap().model;
    let bits = |m: &flatland::model::MlpModel| m.params().values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&adam), bits(&sam));
}

#[test]
fn zero_epochs_stays_at_chance() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    cfg.epochs = 0;
    cfg.model.hidden = vec![128];
    let train = generate_train(&cfg.task).unwrap().dataset;
    let test = &build_test_sets(&cfg.task, &["matched".into()], &[]).unwrap()[0];
    let eers: Vec<f64> = (0..10)
        .map(|s| {
            let out = train_model(&cfg, &train, s).unwrap();
            assert!(out.log.is_empty());
            dataset_eer(&out.model, test).unwrap().eer
        })
        .collect();
    let mean = eers.iter().sum::<f64>() / eers.len() as f64;
    assert!((mean - 0.5).abs() <= 0.1, "mean EER {mean}");
}

#[test]
fn reruns_write_identical_results() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = cmd_train(&small(a.path()), 1).unwrap();
    let rb = cmd_train(&small(b.path()), 1).unwrap();
    assert_eq!(ra, rb);
    for f in [RESULT_FILE, "checkpoint.json", "train_log.csv"] {
        let x = std::fs::read(run_dir(a.path(), &ra.run_id).join(f)).unwrap();
        let y = std::fs::read(run_dir(b.path(), &rb.run_id).join(f)).unwrap();
        assert_eq!(x, y, "{f} differs");
    }
    assert!(run_dir(a.path(), &ra.run_id).join(TIMING_FILE).exists());
    // The stored config records its own output directory, so only its hash
    // is expected to agree.
    let stored = ExperimentConfig::load(&run_dir(b.path(), &rb.run_id).join("config.toml")).unwrap();
    assert_eq!(stored.hash(), ra.config_hash);
    assert_eq!(
        ra.tests.iter().map(|t| t.test_set.as_str()).collect::<Vec<_>>(),
        ["matched", "channel-3"]
    );
}

#[test]
fn stored_runs_are_reused() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path());
    let first = train_or_load(&cfg, 0).unwrap();
    let path = run_dir(dir.path(), &first.run_id).join(RESULT_FILE);
    let before = std::fs::metadata(&path).unwrap().modified().unwrap();
    let again = train_or_load(&cfg, 0).unwrap();
    assert_eq!(first, again);
    assert_eq!(before, std::fs::metadata(&path).unwrap().modified().unwrap());
}

#[test]
fn exported_scores_reproduce_the_reported_eer() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path());
    let r = cmd_train(&cfg, 0).unwrap();
    let model = checkpoint::load(&run_dir(dir.path(), &r.run_id).join(&r.checkpoint)).unwrap();
    let test = &build_test_sets(&cfg.task, &["channel-3".into()], &cfg.shifts).unwrap()[0];
    let csv = scores_csv(&model, test).unwrap();
    let (mut scores, mut labels) = (Vec::new(), Vec::new());
    for line in csv.lines().skip(1) {
        let (s, l) = line.split_once(',').unwrap();
        scores.push(s.parse::<f64>().unwrap());
        labels.push(l.parse::<usize>().unwrap());
    }
    let eer = compute_eer(&ScoreSet::from_labeled(&scores, &labels).unwrap()).unwrap();
    assert_eq!(eer.eer, r.test("channel-3").unwrap().eer);
    let report = cmd_evaluate(&model, std::slice::from_ref(test)).unwrap();
    assert_eq!(report[0].eer, eer.eer);
}

/// Swapping the two labels and negating the score leaves the EER unchanged,
/// so a model whose output layer is negated scores the flipped set alike.
#[test]
fn label_flip_with_negated_output_is_symmetric() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path());
    let train = generate_train(&cfg.task).unwrap().dataset;
    let model = train_model(&cfg, &train, 0).unwrap().model;
    let test = &build_test_sets(&cfg.task, &["matched".into()], &[]).unwrap()[0];
    let flipped = Dataset::new(
        "flipped",
        test.dim(),
        test.features().to_vec(),
        test.labels().iter().map(|l| 1 - l).collect(),
    )
    .unwrap();
    let layout = model.params().layout().clone();
    let last = &layout.entries()[layout.entries().len() - 2..];
    let mut w = model.params().values().to_vec();
    for e in last {
        for v in &mut w[e.offset..e.offset + e.len()] {
            *v = -*v;
        }
    }
    let negated = model.with_params(model.params().with_values(w).unwrap()).unwrap();
    let a = dataset_eer(&model, test).unwrap().eer;
    let b = dataset_eer(&negated, &flipped).unwrap().eer;
    assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
}

#[test]
fn table_aggregates_match_a_recomputation() {
    let dir = tempfile::tempdir().unwrap();
    let bench = BenchmarkConfig {
        version: CONFIG_VERSION,
        base: small(dir.path()),
        systems: vec![SystemEntry {
            name: "mlp16".into(),
            hidden: vec![16],
            activation: flatland::Activation::Relu,
            rho: 0.05,
        }],
        curves: vec![],
    };
    let out = cmd_benchmark(&bench).unwrap();
    let runs = load_runs(dir.path()).unwrap();
    assert_eq!(runs.len(), 4);
    for row in &out.table.rows {
        let vals: Vec<f64> = runs
            .iter()
            .filter(|r| r.system == row.system && r.optimizer == row.optimizer)
            .map(|r| r.test(&row.test_set).unwrap().eer)
            .collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert_eq!(row.n_runs, 2);
        assert!((row.eer_mean - mean).abs() <= 1e-12);
        assert!((row.eer_std - std).abs() <= 1e-12);
    }
    assert_eq!(results_csv(&runs).lines().count(), 1 + 4 * 2);
}
