//! Multi-run orchestration: the Adam/SAM results table, sharpness-vs-level
//! curves, cross-system correlation and the rho sweep.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::harness::config::{ExperimentConfig, ModelConfig, OptimizerChoice, CONFIG_VERSION};
use crate::harness::run::{build_test_sets, run_dir, train_or_load, RunResult, RESULT_FILE, RUNS_DIR};
use crate::io::{read_json, write_atomic, write_json};
use crate::metrics::{correlate_systems, CorrelationReport, SystemPoint};
use crate::model::Activation;
use crate::sharpness::{dataset_sharpness, mean_std};
use crate::synthbench::{ShiftAxis, ShiftSpec};

pub const RESULTS_CSV: &str = "results.csv";
pub const TABLE_CSV: &str = "table.csv";
pub const TABLE_MD: &str = "table.md";
pub const CURVES_CSV: &str = "mismatch_curves.csv";
pub const CORRELATION_JSON: &str = "correlation.json";
pub const CORRELATION_CSV: &str = "correlation.csv";
pub const SCATTER_CSV: &str = "scatter.csv";
pub const RHO_SWEEP_CSV: &str = "rho_sweep.csv";
pub const RHO_CHOICE_JSON: &str = "rho_choice.json";

/// One architecture trained with both Adam and SAM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemEntry {
    pub name: String,
    pub hidden: Vec<usize>,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    /// SAM radius used for this system.
    pub rho: f64,
}

fn default_activation() -> Activation {
    Activation::Relu
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveAxis {
    pub axis: ShiftAxis,
    pub levels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub version: u32,
    /// Shared settings; `system`, `model` and `optimizer` are replaced per
    /// system, and `shifts` lists the table's test sets.
    pub base: ExperimentConfig,
    pub systems: Vec<SystemEntry>,
    #[serde(default)]
    pub curves: Vec<CurveAxis>,
}

impl BenchmarkConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&crate::io::read_text(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "benchmark version {} is not supported (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        if self.systems.is_empty() {
            return Err(Error::Config("benchmark lists no systems".into()));
        }
        let mut hashes = BTreeSet::new();
        for cfg in self.experiments() {
            cfg.validate()?;
            if !hashes.insert(cfg.hash()) {
                return Err(Error::Config(format!(
                    "system `{}` duplicates another system's settings",
                    cfg.system
                )));
            }
        }
        Ok(())
    }

    /// Adam and SAM experiment for every system, in listing order.
    pub fn experiments(&self) -> Vec<ExperimentConfig> {
        let mut out = Vec::new();
        for s in &self.systems {
            let mut cfg = self.base.clone();
            cfg.system = s.name.clone();
            cfg.model = ModelConfig {
                hidden: s.hidden.clone(),
                activation: s.activation,
            };
            let adam = self.base.optimizer.adam().clone();
            cfg.optimizer = OptimizerChoice::Adam { adam: adam.clone() };
            out.push(cfg.clone());
            cfg.optimizer = OptimizerChoice::Sam {
                rho: s.rho,
                adam,
                force_zero_perturbation: false,
            };
            out.push(cfg);
        }
        out
    }
}

/// Runs every (experiment, seed) pair, reusing stored results. Runs are
/// independent and execute in parallel; the returned list follows
/// experiment then seed order.
pub fn run_all(experiments: &[ExperimentConfig]) -> Result<Vec<RunResult>> {
    let jobs: Vec<(&ExperimentConfig, u64)> = experiments
        .iter()
        .flat_map(|c| c.seeds.iter().map(move |&s| (c, s)))
        .collect();
    jobs.par_iter().map(|(c, s)| train_or_load(c, *s)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub system: String,
    pub optimizer: String,
    pub test_set: String,
    pub n_runs: usize,
    pub eer_mean: f64,
    pub eer_std: f64,
    pub sharpness_mean: f64,
    pub sharpness_std: f64,
    /// Lowest mean EER among the optimizers of this system on this test set.
    pub bold: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsTable {
    pub rows: Vec<TableRow>,
}

impl ResultsTable {
    /// Groups runs by (system, optimizer, test set) in first-seen order.
    /// Standard deviations are population values over seeds.
    pub fn from_runs(runs: &[RunResult]) -> Self {
        let mut keys: Vec<(String, String, String)> = Vec::new();
        for r in runs {
            for t in &r.tests {
                let k = (r.system.clone(), r.optimizer.clone(), t.test_set.clone());
                if !keys.contains(&k) {
                    keys.push(k);
                }
            }
        }
        let mut rows: Vec<TableRow> = keys
            .into_iter()
            .map(|(system, optimizer, test_set)| {
                let hits: Vec<_> = runs
                    .iter()
                    .filter(|r| r.system == system && r.optimizer == optimizer)
                    .filter_map(|r| r.test(&test_set))
                    .collect();
                let (eer_mean, eer_std) = mean_std(&hits.iter().map(|t| t.eer).collect::<Vec<_>>());
                let (sharpness_mean, sharpness_std) =
                    mean_std(&hits.iter().map(|t| t.sharpness_mean).collect::<Vec<_>>());
                TableRow {
                    system,
                    optimizer,
                    test_set,
                    n_runs: hits.len(),
                    eer_mean,
                    eer_std,
                    sharpness_mean,
                    sharpness_std,
                    bold: false,
                }
            })
            .collect();
        for i in 0..rows.len() {
            let best = rows
                .iter()
                .filter(|o| o.system == rows[i].system && o.test_set == rows[i].test_set)
                .map(|o| o.eer_mean)
                .fold(f64::INFINITY, f64::min);
            rows[i].bold = rows[i].eer_mean == best;
        }
        Self { rows }
    }

    pub fn get(&self, system: &str, optimizer: &str, test_set: &str) -> Option<&TableRow> {
        self.rows
            .iter()
            .find(|r| r.system == system && r.optimizer == optimizer && r.test_set == test_set)
    }

    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("system,optimizer,test_set,n_runs,eer_mean,eer_std,sharpness_mean,sharpness_std,bold\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{:?},{:?},{:?},{:?},{}\n",
                r.system,
                r.optimizer,
                r.test_set,
                r.n_runs,
                r.eer_mean,
                r.eer_std,
                r.sharpness_mean,
                r.sharpness_std,
                u8::from(r.bold)
            ));
        }
        out
    }

    /// Systems as rows, test sets as columns, EER in percent as
    /// `mean ± std`, with the better optimizer in bold.
    pub fn to_markdown(&self) -> String {
        let mut tests: Vec<&str> = Vec::new();
        let mut lines: Vec<(&str, &str)> = Vec::new();
        for r in &self.rows {
            if !tests.contains(&r.test_set.as_str()) {
                tests.push(&r.test_set);
            }
            if !lines.contains(&(r.system.as_str(), r.optimizer.as_str())) {
                lines.push((&r.system, &r.optimizer));
            }
        }
        let mut out = format!("| system | optimizer | {} |\n", tests.join(" | "));
        out.push_str(&format!("|---|---|{}\n", "---|".repeat(tests.len())));
        for (system, opt) in lines {
            let cells: Vec<String> = tests
                .iter()
                .map(|t| match self.get(system, opt, t) {
                    Some(r) => {
                        let cell = format!("{:.2} ± {:.2}", 100.0 * r.eer_mean, 100.0 * r.eer_std);
                        if r.bold {
                            format!("**{cell}**")
                        } else {
                            cell
                        }
                    }
                    None => "-".into(),
                })
                .collect();
            out.push_str(&format!("| {system} | {opt} | {} |\n", cells.join(" | ")));
        }
        out
    }
}

/// One row per run and test set.
pub fn results_csv(runs: &[RunResult]) -> String {
    let mut out = String::from("run_id,system,optimizer,rho,seed,test_set,eer,sharpness_mean,sharpness_std\n");
    for r in runs {
        let rho = r.rho.map(|v| format!("{v:?}")).unwrap_or_default();
        for t in &r.tests {
            out.push_str(&format!(
                "{},{},{},{},{},{},{:?},{:?},{:?}\n",
                r.run_id, r.system, r.optimizer, rho, r.seed, t.test_set, t.eer, t.sharpness_mean, t.sharpness_std
            ));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub system: String,
    pub optimizer: String,
    pub axis: ShiftAxis,
    pub level: usize,
    pub n_runs: usize,
    pub sharpness_mean: f64,
    pub sharpness_std: f64,
}

/// Mean dataset sharpness across seeds at each level of each curve axis.
pub fn mismatch_curves(
    experiments: &[ExperimentConfig],
    runs: &[RunResult],
    curves: &[CurveAxis],
) -> Result<Vec<CurvePoint>> {
    let Some(first) = experiments.first() else {
        return Ok(Vec::new());
    };
    let specs: Vec<ShiftSpec> = curves
        .iter()
        .flat_map(|c| c.levels.iter().map(|&l| ShiftSpec::new(c.axis, l)))
        .collect();
    let names: Vec<String> = specs.iter().map(|s| s.name()).collect();
    let sets = build_test_sets(&first.task, &names, &[])?;

    let mut points = Vec::new();
    for cfg in experiments {
        let models = cfg
            .seeds
            .iter()
            .map(|&s| {
                let run = runs
                    .iter()
                    .find(|r| r.run_id == cfg.run_id(s))
                    .ok_or_else(|| Error::Config(format!("missing run {}", cfg.run_id(s))))?;
                checkpoint::load(&run_dir(&cfg.output_dir, &run.run_id).join(&run.checkpoint))
            })
            .collect::<Result<Vec<_>>>()?;
        let per_set: Vec<Vec<f64>> = sets
            .par_iter()
            .map(|d| {
                models
                    .iter()
                    .map(|m| dataset_sharpness(m, d, &cfg.sharpness).map(|r| r.mean))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;
        for (spec, vals) in specs.iter().zip(per_set) {
            let (mean, std) = mean_std(&vals);
            points.push(CurvePoint {
                system: cfg.system_label(),
                optimizer: cfg.optimizer.tag().into(),
                axis: spec.axis,
                level: spec.level,
                n_runs: vals.len(),
                sharpness_mean: mean,
                sharpness_std: std,
            });
        }
    }
    Ok(points)
}

pub fn curves_csv(points: &[CurvePoint]) -> String {
    let mut out = String::from("system,optimizer,axis,level,n_runs,sharpness_mean,sharpness_std\n");
    for p in points {
        out.push_str(&format!(
            "{},{},{},{},{},{:?},{:?}\n",
            p.system,
            p.optimizer,
            p.axis.name(),
            p.level,
            p.n_runs,
            p.sharpness_mean,
            p.sharpness_std
        ));
    }
    out
}

#[derive(Debug, Clone)]
pub struct BenchmarkOutput {
    pub runs: Vec<RunResult>,
    pub table: ResultsTable,
    pub curves: Vec<CurvePoint>,
}

/// Trains the whole matrix and writes results, table and curve files into
/// the base output directory.
pub fn cmd_benchmark(cfg: &BenchmarkConfig) -> Result<BenchmarkOutput> {
    cfg.validate()?;
    let experiments = cfg.experiments();
    let runs = run_all(&experiments)?;
    let table = ResultsTable::from_runs(&runs);
    let curves = mismatch_curves(&experiments, &runs, &cfg.curves)?;
    let out = &cfg.base.output_dir;
    write_atomic(&out.join(RESULTS_CSV), results_csv(&runs).as_bytes())?;
    write_atomic(&out.join(TABLE_CSV), table.to_csv().as_bytes())?;
    write_atomic(&out.join(TABLE_MD), table.to_markdown().as_bytes())?;
    write_atomic(&out.join(CURVES_CSV), curves_csv(&curves).as_bytes())?;
    Ok(BenchmarkOutput { runs, table, curves })
}

/// Every stored run under `dir`, ordered by run id.
pub fn load_runs(dir: &Path) -> Result<Vec<RunResult>> {
    let runs_dir = dir.join(RUNS_DIR);
    let mut paths: Vec<PathBuf> = std::fs::read_dir(&runs_dir)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", runs_dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path().join(RESULT_FILE)))
        .filter(|p| p.exists())
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Empty(format!("no runs under {}", runs_dir.display())));
    }
    paths.iter().map(|p| read_json(p)).collect()
}

/// Label of a run as a point in the cross-system scatter.
pub fn point_label(r: &RunResult) -> String {
    match r.rho {
        Some(rho) => format!("{}-{}{rho}-s{}", r.system, r.optimizer, r.seed),
        None => format!("{}-{}-s{}", r.system, r.optimizer, r.seed),
    }
}

/// Correlation of sharpness and EER across runs, per test set. With no
/// explicit list, every test set present in all runs is used.
pub fn correlate_runs(runs: &[RunResult], test_sets: &[String]) -> Result<Vec<CorrelationReport>> {
    let names: Vec<String> = if test_sets.is_empty() {
        runs.first()
            .map(|r| r.tests.iter().map(|t| t.test_set.clone()))
            .into_iter()
            .flatten()
            .filter(|n| runs.iter().all(|r| r.test(n).is_some()))
            .collect()
    } else {
        test_sets.to_vec()
    };
    names
        .iter()
        .map(|name| {
            let points = runs
                .iter()
                .map(|r| {
                    let t = r
                        .test(name)
                        .ok_or_else(|| Error::Config(format!("run {} has no test set {name}", r.run_id)))?;
                    Ok(SystemPoint {
                        system: point_label(r),
                        optimizer: r.optimizer.clone(),
                        sharpness: t.sharpness_mean,
                        eer: t.eer,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            correlate_systems(name, &points)
        })
        .collect()
}

/// Test sets as rows and the three coefficients with p-values as columns.
pub fn correlation_csv(reports: &[CorrelationReport]) -> String {
    let mut out = String::from("test_set,n,pcc,p_pcc,sig_pcc,srcc,p_srcc,sig_srcc,ktau,p_ktau,sig_ktau\n");
    for r in reports {
        out.push_str(&format!(
            "{},{},{:?},{:?},{},{:?},{:?},{},{:?},{:?},{}\n",
            r.test_set,
            r.n,
            r.pcc,
            r.p_pcc,
            r.sig_pcc.marker(),
            r.srcc,
            r.p_srcc,
            r.sig_srcc.marker(),
            r.ktau,
            r.p_ktau,
            r.sig_ktau.marker()
        ));
    }
    out
}

pub fn scatter_csv(reports: &[CorrelationReport]) -> String {
    let mut out = format!("{}\n", CorrelationReport::SCATTER_HEADER);
    for r in reports {
        for row in r.scatter_rows() {
            out.push_str(&row);
            out.push('\n');
        }
    }
    out
}

/// Reads stored runs and writes the correlation JSON, table and scatter.
pub fn cmd_correlate(results_dir: &Path, test_sets: &[String]) -> Result<Vec<CorrelationReport>> {
    let runs = load_runs(results_dir)?;
    let reports = correlate_runs(&runs, test_sets)?;
    write_json(&results_dir.join(CORRELATION_JSON), &reports)?;
    write_atomic(&results_dir.join(CORRELATION_CSV), correlation_csv(&reports).as_bytes())?;
    write_atomic(&results_dir.join(SCATTER_CSV), scatter_csv(&reports).as_bytes())?;
    Ok(reports)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhoCandidate {
    pub rho: f64,
    pub eer_mean: f64,
    pub eer_std: f64,
    pub sharpness_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhoChoice {
    pub system: String,
    pub selection_set: String,
    pub candidates: Vec<RhoCandidate>,
    pub chosen: f64,
}

/// Trains SAM at each radius and keeps the one with the lowest mean EER on
/// `selection_set`; ties go to the earlier candidate.
pub fn cmd_rho_sweep(base: &ExperimentConfig, rhos: &[f64], selection_set: &str) -> Result<RhoChoice> {
    if rhos.is_empty() {
        return Err(Error::Config("rho sweep needs at least one candidate".into()));
    }
    let experiments: Vec<ExperimentConfig> = rhos
        .iter()
        .map(|&rho| {
            let mut c = base.clone();
            c.optimizer = OptimizerChoice::Sam {
                rho,
                adam: base.optimizer.adam().clone(),
                force_zero_perturbation: false,
            };
            if !c.test_set_names().iter().any(|n| n == selection_set) {
                c.shifts.push(crate::harness::run::parse_test_set(selection_set)?);
            }
            c.validate()?;
            Ok(c)
        })
        .collect::<Result<_>>()?;
    let runs = run_all(&experiments)?;
    let candidates = rhos
        .iter()
        .map(|&rho| {
            let hits: Vec<_> = runs
                .iter()
                .filter(|r| r.rho == Some(rho))
                .filter_map(|r| r.test(selection_set))
                .collect();
            let (eer_mean, eer_std) = mean_std(&hits.iter().map(|t| t.eer).collect::<Vec<_>>());
            let (sharpness_mean, _) = mean_std(&hits.iter().map(|t| t.sharpness_mean).collect::<Vec<_>>());
            RhoCandidate {
                rho,
                eer_mean,
                eer_std,
                sharpness_mean,
            }
        })
        .collect::<Vec<_>>();
    let chosen = candidates
        .iter()
        .fold(None::<&RhoCandidate>, |best, c| match best {
            Some(b) if b.eer_mean <= c.eer_mean => Some(b),
            _ => Some(c),
        })
        .map(|c| c.rho)
        .expect("non-empty");
    let choice = RhoChoice {
        system: base.system_label(),
        selection_set: selection_set.into(),
        candidates,
        chosen,
    };
    let mut csv = String::from("rho,eer_mean,eer_std,sharpness_mean,chosen\n");
    for c in &choice.candidates {
        csv.push_str(&format!(
            "{:?},{:?},{:?},{:?},{}\n",
            c.rho,
            c.eer_mean,
            c.eer_std,
            c.sharpness_mean,
            u8::from(c.rho == chosen)
        ));
    }
    write_atomic(&base.output_dir.join(RHO_SWEEP_CSV), csv.as_bytes())?;
    write_json(&base.output_dir.join(RHO_CHOICE_JSON), &choice)?;
    Ok(choice)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::run::TestSetResult;

    fn run(system: &str, opt: &str, seed: u64, eers: &[(&str, f64)]) -> RunResult {
        RunResult {
            run_id: format!("{system}-{opt}-s{seed}"),
            config_hash: "h".into(),
            seed,
            system: system.into(),
            optimizer: opt.into(),
            rho: (opt == "sam").then_some(0.05),
            model_fingerprint: String::new(),
            steps: 0,
            final_train_loss: 0.0,
            tests: eers
                .iter()
                .map(|(n, e)| TestSetResult {
                    test_set: n.to_string(),
                    eer: *e,
                    threshold: 0.0,
                    sharpness_mean: *e * 2.0,
                    sharpness_std: 0.0,
                })
                .collect(),
            train_log: "l".into(),
            checkpoint: "c".into(),
        }
    }

    #[test]
    fn table_aggregates_and_bolds() {
        let runs = vec![
            run("a", "adam", 0, &[("matched", 0.2), ("attack-4", 0.3)]),
            run("a", "adam", 1, &[("matched", 0.4), ("attack-4", 0.5)]),
            run("a", "sam", 0, &[("matched", 0.1), ("attack-4", 0.6)]),
            run("a", "sam", 1, &[("matched", 0.3), ("attack-4", 0.6)]),
        ];
        let t = ResultsTable::from_runs(&runs);
        assert_eq!(t.rows.len(), 4);
        let r = t.get("a", "adam", "matched").unwrap();
        assert!((r.eer_mean - 0.3).abs() < 1e-12 && (r.eer_std - 0.1).abs() < 1e-12);
        assert!(!r.bold);
        assert!(t.get("a", "sam", "matched").unwrap().bold);
        assert!(t.get("a", "adam", "attack-4").unwrap().bold);
        let md = t.to_markdown();
        assert!(md.contains("**20.00 ± 10.00**"));
        assert_eq!(results_csv(&runs).lines().count(), 9);
    }

    #[test]
    fn correlation_over_runs() {
        let runs: Vec<_> = (0..6)
            .map(|i| {
                run(
                    "s",
                    if i % 2 == 0 { "adam" } else { "sam" },
                    i,
                    &[("matched", 0.1 + i as f64 * 0.01)],
                )
            })
            .collect();
        let reps = correlate_runs(&runs, &[]).unwrap();
        assert_eq!(reps.len(), 1);
        assert!((reps[0].srcc - 1.0).abs() < 1e-12);
        assert_eq!(scatter_csv(&reps).lines().count(), 7);
        assert!(correlate_runs(&runs, &["attack-1".into()]).is_err());
    }
}
