//! `flatland`: train and evaluate spoofing countermeasures with Adam or SAM
//! and relate their sharpness to EER under domain shift.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use flatland::harness::{self, BenchmarkConfig, ExperimentConfig, LandscapeParams};
use flatland::io::{write_atomic, write_json};
use flatland::landscape::Normalization;
use flatland::sharpness::SharpnessConfig;
use flatland::{checkpoint, Dataset, Error, Result};

/// Like `print!`, but a closed stdout (e.g. piped into `head`) is not an
/// error worth panicking over.
macro_rules! out {
    ($($arg:tt)*) => {{
        use std::io::Write;
        let _ = write!(std::io::stdout(), $($arg)*);
    }};
}

const EXIT_USAGE: u8 = 1;
const EXIT_NUMERICAL: u8 = 2;

#[derive(Parser)]
#[command(
    name = "flatland",
    version,
    about = "Sharpness and generalization of spoofing countermeasures"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one run per seed and evaluate every configured test set.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Seeds to run; defaults to the config's list.
        #[arg(long = "seed")]
        seeds: Vec<u64>,
        /// Overrides the config's output directory.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// EER of a checkpoint on each test set.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        /// Write `score,label` rows for the first dataset here.
        #[arg(long)]
        scores_out: Option<PathBuf>,
        /// Write the JSON report here as well as to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// m-sharpness of a checkpoint on one dataset.
    Sharpness {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = 0.05)]
        rho: f64,
        #[arg(long, default_value_t = 32)]
        batch_size: usize,
        #[arg(long, default_value_t = 20)]
        ascent_steps: usize,
        #[arg(long, default_value_t = 3)]
        restarts: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory for `sharpness.json` and `sharpness.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Loss grid along two random normalized directions.
    Landscape {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = 1.0)]
        half_range: f64,
        #[arg(long, default_value_t = 41)]
        resolution: usize,
        /// filter, global or none.
        #[arg(long, default_value = "filter")]
        normalization: String,
        #[arg(long, default_value_t = 0)]
        direction_seed: u64,
        /// Directory for `landscape.csv` and `landscape.json`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the Adam/SAM matrix and write the results table and curves.
    Benchmark {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Correlate sharpness with EER across the runs in a results directory.
    Correlate {
        #[arg(long)]
        results: PathBuf,
        /// Test sets to correlate; defaults to every set shared by all runs.
        #[arg(long = "test-set")]
        test_sets: Vec<String>,
    },
    /// Write the synthetic training and evaluation sets as CSV.
    GenData {
        #[arg(long)]
        config: PathBuf,
        /// Extra shifted sets (`<axis>-<level>`) beyond the config's.
        #[arg(long = "shift")]
        shifts: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train SAM at several radii and keep the best on a selection set.
    RhoSweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "rho", default_values_t = [0.05, 0.01, 0.005, 0.001])]
        rhos: Vec<f64>,
        #[arg(long, default_value = "matched")]
        select: String,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

/// Where evaluation data comes from: generated test sets or CSV files.
#[derive(Args)]
struct DataArgs {
    /// Experiment config whose task generates `--test-set`s.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `matched` or `<axis>-<level>`.
    #[arg(long = "test-set")]
    test_sets: Vec<String>,
    /// CSV files with `feature_*` columns and a `label` column.
    #[arg(long = "data")]
    data: Vec<PathBuf>,
}

impl DataArgs {
    fn load(&self) -> Result<Vec<Dataset>> {
        let mut out = Vec::new();
        if !self.test_sets.is_empty() {
            let path = self
                .config
                .as_ref()
                .ok_or_else(|| Error::Config("--test-set needs --config".into()))?;
            let cfg = ExperimentConfig::load(path)?;
            out.extend(harness::build_test_sets(&cfg.task, &self.test_sets, &cfg.shifts)?);
        }
        for p in &self.data {
            let name = p
                .file_stem()
                .map_or("data".into(), |s| s.to_string_lossy().into_owned());
            out.push(Dataset::from_csv(name, &flatland::io::read_text(p)?)?);
        }
        if out.is_empty() {
            return Err(Error::Config(
                "no data: pass --test-set with --config, or --data".into(),
            ));
        }
        Ok(out)
    }

    fn load_one(&self) -> Result<Dataset> {
        let mut sets = self.load()?;
        if sets.len() != 1 {
            return Err(Error::Config(format!("expected one dataset, got {}", sets.len())));
        }
        Ok(sets.remove(0))
    }
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<()> {
    out!("{}\n", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn load_config(path: &Path, output: Option<PathBuf>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(o) = output {
        cfg.output_dir = o;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, seeds, output } => {
            let cfg = load_config(&config, output)?;
            let seeds = if seeds.is_empty() { cfg.seeds.clone() } else { seeds };
            for seed in seeds {
                let r = harness::cmd_train(&cfg, seed)?;
                let eers: Vec<String> = r.tests.iter().map(|t| format!("{}={:.4}", t.test_set, t.eer)).collect();
                out!("{} {} seed {}: {}\n", r.run_id, r.optimizer, seed, eers.join(" "));
            }
        }
        Command::Evaluate {
            checkpoint: ck,
            data,
            scores_out,
            out,
        } => {
            let model = checkpoint::load(&ck)?;
            let sets = data.load()?;
            if let Some(p) = scores_out {
                write_atomic(&p, harness::run::scores_csv(&model, &sets[0])?.as_bytes())?;
            }
            let report = harness::cmd_evaluate(&model, &sets)?;
            if let Some(p) = out {
                write_json(&p, &report)?;
            }
            print_json(&report)?;
        }
        Command::Sharpness {
            checkpoint: ck,
            data,
            rho,
            batch_size,
            ascent_steps,
            restarts,
            seed,
            out,
        } => {
            let model = checkpoint::load(&ck)?;
            let set = data.load_one()?;
            let cfg = SharpnessConfig {
                rho,
                batch_size,
                ascent_steps,
                restarts,
                seed,
                ..SharpnessConfig::default()
            };
            let report = harness::cmd_sharpness(&model, &set, &cfg)?;
            if let Some(dir) = out {
                write_json(&dir.join("sharpness.json"), &report)?;
                write_atomic(&dir.join("sharpness.csv"), report.csv_summary().as_bytes())?;
            }
            out!("{}", report.csv_summary());
        }
        Command::Landscape {
            checkpoint: ck,
            data,
            half_range,
            resolution,
            normalization,
            direction_seed,
            out,
        } => {
            let model = checkpoint::load(&ck)?;
            let set = data.load_one()?;
            let params = LandscapeParams {
                half_range,
                resolution,
                normalization: normalization.parse::<Normalization>()?,
                direction_seed,
                ..LandscapeParams::default()
            };
            let (grid, summary) = harness::cmd_landscape(&model, &set, &params)?;
            write_atomic(&out.join("landscape.csv"), grid.to_csv().as_bytes())?;
            write_json(&out.join("landscape.json"), &summary)?;
            print_json(&summary)?;
        }
        Command::Benchmark { config, output } => {
            let mut cfg = BenchmarkConfig::load(&config)?;
            if let Some(o) = output {
                cfg.base.output_dir = o;
            }
            let result = harness::cmd_benchmark(&cfg)?;
            out!("{}", result.table.to_markdown());
        }
        Command::Correlate { results, test_sets } => {
            let reports = harness::cmd_correlate(&results, &test_sets)?;
            out!("{}", harness::benchmark::correlation_csv(&reports));
        }
        Command::GenData { config, shifts, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let mut all = cfg.shifts.clone();
            for s in &shifts {
                let spec = harness::parse_test_set(s)?;
                if !all.iter().any(|x| x.name() == spec.name()) {
                    all.push(spec);
                }
            }
            all.retain(|s| s.level > 0);
            for p in harness::cmd_gen_data(&cfg.task, &all, &out)? {
                out!("{}\n", p.display());
            }
        }
        Command::RhoSweep {
            config,
            rhos,
            select,
            output,
        } => {
            let cfg = load_config(&config, output)?;
            let choice = harness::cmd_rho_sweep(&cfg, &rhos, &select)?;
            print_json(&choice)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { EXIT_NUMERICAL } else { EXIT_USAGE })
        }
    }
}
