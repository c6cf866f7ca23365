//! Single-run commands: train, evaluate, sharpness and landscape.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::harness::config::ExperimentConfig;
use crate::harness::train::{dataset_eer, score_dataset, train_model};
use crate::io::{read_json, write_atomic, write_json};
use crate::landscape::{evaluate_grid, sample_directions, LandscapeGrid, Normalization};
use crate::metrics::EerResult;
use crate::model::{ClassWeights, MlpModel};
use crate::sharpness::{dataset_sharpness, SharpnessConfig, SharpnessReport};
use crate::synthbench::{generate_shifted_test, generate_train, ShiftAxis, ShiftSpec, TaskSpec};

pub const RESULT_FILE: &str = "result.json";
pub const TIMING_FILE: &str = "timing.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const CONFIG_FILE: &str = "config.toml";
pub const RUNS_DIR: &str = "runs";

/// Parses `matched` or `<axis>-<level>`.
pub fn parse_test_set(name: &str) -> Result<ShiftSpec> {
    if name == "matched" {
        return Ok(ShiftSpec::new(ShiftAxis::Attack, 0));
    }
    let (axis, level) = name
        .rsplit_once('-')
        .ok_or_else(|| Error::Parse(format!("test set `{name}` is not `matched` or `<axis>-<level>`")))?;
    let level: usize = level
        .parse()
        .map_err(|_| Error::Parse(format!("bad level in test set `{name}`")))?;
    Ok(ShiftSpec::new(axis.parse()?, level))
}

/// Generates the named evaluation sets. Shifts listed in `overrides` supply
/// magnitudes for matching names.
pub fn build_test_sets(task: &TaskSpec, names: &[String], overrides: &[ShiftSpec]) -> Result<Vec<Dataset>> {
    names
        .iter()
        .map(|n| {
            let spec = overrides
                .iter()
                .find(|s| &s.name() == n)
                .cloned()
                .map_or_else(|| parse_test_set(n), Ok)?;
            let mut d = generate_shifted_test(task, &spec)?.dataset;
            d.name = n.clone();
            Ok(d)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestSetResult {
    pub test_set: String,
    pub eer: f64,
    pub threshold: f64,
    pub sharpness_mean: f64,
    pub sharpness_std: f64,
}

/// Outcome of one training run. Paths are relative to the run directory
/// and the wall time lives in a separate file, so reruns serialize
/// identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub run_id: String,
    pub config_hash: String,
    pub seed: u64,
    pub system: String,
    pub optimizer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    pub model_fingerprint: String,
    pub steps: usize,
    pub final_train_loss: f64,
    pub tests: Vec<TestSetResult>,
    pub train_log: PathBuf,
    pub checkpoint: PathBuf,
}

impl RunResult {
    pub fn test(&self, name: &str) -> Option<&TestSetResult> {
        self.tests.iter().find(|t| t.test_set == name)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Timing {
    pub wall_seconds: f64,
}

pub fn run_dir(output_dir: &Path, run_id: &str) -> PathBuf {
    output_dir.join(RUNS_DIR).join(run_id)
}

/// Trains one seed, evaluates every configured test set and writes the
/// checkpoint, step log, config and result into the run directory.
pub fn cmd_train(cfg: &ExperimentConfig, seed: u64) -> Result<RunResult> {
    cfg.validate()?;
    let started = std::time::Instant::now();
    let train = generate_train(&cfg.task)?.dataset;
    let outcome = train_model(cfg, &train, seed)?;
    let tests = build_test_sets(&cfg.task, &cfg.test_set_names(), &cfg.shifts)?;
    let results = tests
        .iter()
        .map(|d| evaluate_one(&outcome.model, d, &cfg.sharpness))
        .collect::<Result<Vec<_>>>()?;

    let run_id = cfg.run_id(seed);
    let dir = run_dir(&cfg.output_dir, &run_id);
    checkpoint::save(&outcome.model, &dir.join(CHECKPOINT_FILE))?;
    write_atomic(&dir.join(TRAIN_LOG_FILE), outcome.log_csv().as_bytes())?;
    write_atomic(&dir.join(CONFIG_FILE), cfg.to_toml()?.as_bytes())?;
    let result = RunResult {
        run_id,
        config_hash: cfg.hash(),
        seed,
        system: cfg.system_label(),
        optimizer: cfg.optimizer.tag().into(),
        rho: cfg.optimizer.rho(),
        model_fingerprint: outcome.model.fingerprint(),
        steps: outcome.log.len(),
        final_train_loss: outcome.log.last().map_or(f64::NAN, |r| r.loss_w),
        tests: results,
        train_log: TRAIN_LOG_FILE.into(),
        checkpoint: CHECKPOINT_FILE.into(),
    };
    write_json(&dir.join(RESULT_FILE), &result)?;
    write_json(
        &dir.join(TIMING_FILE),
        &Timing {
            wall_seconds: started.elapsed().as_secs_f64(),
        },
    )?;
    Ok(result)
}

/// Loads a stored run if one exists for `(cfg, seed)`, otherwise trains it.
pub fn train_or_load(cfg: &ExperimentConfig, seed: u64) -> Result<RunResult> {
    let path = run_dir(&cfg.output_dir, &cfg.run_id(seed)).join(RESULT_FILE);
    if path.exists() {
        return read_json(&path);
    }
    cmd_train(cfg, seed)
}

fn evaluate_one(model: &MlpModel, dataset: &Dataset, sharp: &SharpnessConfig) -> Result<TestSetResult> {
    let eer = dataset_eer(model, dataset)?;
    let s = dataset_sharpness(model, dataset, sharp)?;
    Ok(TestSetResult {
        test_set: dataset.name.clone(),
        eer: eer.eer,
        threshold: eer.threshold,
        sharpness_mean: s.mean,
        sharpness_std: s.std,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationEntry {
    pub test_set: String,
    pub n_bona: usize,
    pub n_spoof: usize,
    pub eer: f64,
    pub threshold: f64,
}

impl EvaluationEntry {
    fn new(name: &str, r: &EerResult) -> Self {
        Self {
            test_set: name.into(),
            n_bona: r.n_bona,
            n_spoof: r.n_spoof,
            eer: r.eer,
            threshold: r.threshold,
        }
    }
}

/// EER of a checkpoint on each dataset.
pub fn cmd_evaluate(model: &MlpModel, datasets: &[Dataset]) -> Result<Vec<EvaluationEntry>> {
    datasets
        .iter()
        .map(|d| Ok(EvaluationEntry::new(&d.name, &dataset_eer(model, d)?)))
        .collect()
}

/// `score,label` rows for exporting raw scores.
pub fn scores_csv(model: &MlpModel, dataset: &Dataset) -> Result<String> {
    let scores = score_dataset(model, dataset)?;
    let mut out = String::from("score,label\n");
    for (s, l) in scores.iter().zip(dataset.labels()) {
        out.push_str(&format!("{s:?},{l}\n"));
    }
    Ok(out)
}

pub fn cmd_sharpness(model: &MlpModel, dataset: &Dataset, cfg: &SharpnessConfig) -> Result<SharpnessReport> {
    dataset_sharpness(model, dataset, cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandscapeParams {
    pub half_range: f64,
    pub resolution: usize,
    pub normalization: Normalization,
    pub direction_seed: u64,
    pub class_weights: ClassWeights,
}

impl Default for LandscapeParams {
    fn default() -> Self {
        Self {
            half_range: 1.0,
            resolution: 41,
            normalization: Normalization::Filter,
            direction_seed: 0,
            class_weights: ClassWeights::default(),
        }
    }
}

/// Grid summary stored next to the long-format CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandscapeSummary {
    pub dataset: String,
    pub model: String,
    pub params: LandscapeParams,
    pub origin_loss: f64,
    pub spread: f64,
    pub overflow_points: usize,
    pub zeroed_blocks: Vec<String>,
}

pub fn cmd_landscape(
    model: &MlpModel,
    dataset: &Dataset,
    p: &LandscapeParams,
) -> Result<(LandscapeGrid, LandscapeSummary)> {
    let dirs = sample_directions(model, p.direction_seed, p.normalization)?;
    let grid = evaluate_grid(model, dataset, &dirs, p.half_range, p.resolution, p.class_weights)?;
    let summary = LandscapeSummary {
        dataset: dataset.name.clone(),
        model: model.fingerprint(),
        params: p.clone(),
        origin_loss: grid.origin_loss,
        spread: grid.spread(),
        overflow_points: grid.overflow_count(),
        zeroed_blocks: dirs.zeroed_blocks.clone(),
    };
    Ok((grid, summary))
}

/// Writes the training set, the matched set and each named shift as CSV,
/// with a provenance JSON per file.
pub fn cmd_gen_data(task: &TaskSpec, shifts: &[ShiftSpec], out: &Path) -> Result<Vec<PathBuf>> {
    let mut sets = vec![generate_train(task)?];
    sets.push(generate_shifted_test(task, &ShiftSpec::new(ShiftAxis::Attack, 0))?);
    for s in shifts {
        sets.push(generate_shifted_test(task, s)?);
    }
    let mut written = Vec::new();
    for g in &sets {
        let name = match (&g.provenance.split, &g.provenance.shift) {
            (crate::synthbench::Split::Train, _) => "train".to_string(),
            (_, None) => "matched".to_string(),
            (_, Some(s)) => s.name(),
        };
        let csv = out.join(format!("{name}.csv"));
        write_atomic(&csv, g.dataset.to_csv().as_bytes())?;
        write_json(&out.join(format!("{name}.provenance.json")), &g.provenance)?;
        written.push(csv);
    }
    Ok(written)
}
