//! Synthetic bona fide / spoof tasks with four controllable mismatch axes.
//!
//! Bona fide samples come from a small Gaussian mixture near the origin and
//! spoofed samples from `n_train_attacks` Gaussian "attack" clusters placed
//! at distance `spoof_separation` in random directions. Every test set
//! starts from the same matched draw (component assignment plus standard
//! normal noise per sample); a shift is a deterministic operation on that
//! draw:
//!
//! * `language`: every sample moves by one fixed offset of norm
//!   `level * magnitude`;
//! * `attack`: spoof samples are split into `max_attack_level` slots and the
//!   first `level` slots are redrawn from clusters never used in training,
//!   keeping the sample count fixed;
//! * `channel`: sample `i` goes to condition `i % level`; condition `g` is
//!   the linear map `I + magnitude * (g + 1) * R_g / sqrt(d)` plus Gaussian
//!   noise of std `0.5 * magnitude * (g + 1)`, so later conditions are harsher;
//! * `speaker`: each mixture component splits into `level` subclusters with
//!   centered offsets of std `magnitude` and shrunken within-subcluster
//!   spread, preserving each component's mean and (approximately) its
//!   covariance.
//!
//! Random streams are keyed by role and index, so attack clusters used for
//! testing never coincide with training ones.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, BONA_FIDE, SPOOF};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaskSpec {
    pub feature_dim: usize,
    pub n_train: usize,
    pub n_eval: usize,
    pub n_train_attacks: usize,
    /// Fraction of bona fide samples.
    pub class_balance: f64,
    pub base_seed: u64,
    pub bona_components: usize,
    pub spoof_separation: f64,
    pub cluster_std: f64,
    pub max_attack_level: usize,
    pub max_channel_level: usize,
    pub max_speaker_level: usize,
    pub max_language_level: usize,
    /// Probability that a training label is flipped. Evaluation labels are
    /// always clean.
    pub train_label_noise: f64,
}

impl Default for TaskSpec {
    fn default() -> Self {
        Self {
            feature_dim: 20,
            n_train: 4000,
            n_eval: 2000,
            n_train_attacks: 6,
            class_balance: 0.5,
            base_seed: 0,
            bona_components: 2,
            spoof_separation: 3.0,
            cluster_std: 1.0,
            max_attack_level: 4,
            max_channel_level: 8,
            max_speaker_level: 16,
            max_language_level: 8,
            train_label_noise: 0.1,
        }
    }
}

/// Smallest batch size the size invariant is checked against.
pub const MIN_BATCH: usize = 32;

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("task spec: {m}")));
        if self.feature_dim == 0 {
            return bad("feature_dim must be positive");
        }
        if self.n_train_attacks == 0 || self.bona_components == 0 {
            return bad("need at least one attack cluster and one bona fide component");
        }
        if self.n_train < 2 * MIN_BATCH || self.n_eval < 2 * MIN_BATCH {
            return bad("n_train and n_eval must be at least twice the batch size");
        }
        if !(self.class_balance > 0.0 && self.class_balance < 1.0) {
            return bad("class_balance must lie strictly between 0 and 1");
        }
        if !(self.spoof_separation >= 0.0 && self.cluster_std > 0.0) {
            return bad("separation must be non-negative and cluster_std positive");
        }
        if !(0.0..0.5).contains(&self.train_label_noise) {
            return bad("train_label_noise must lie in [0, 0.5)");
        }
        if self.max_attack_level == 0 {
            return bad("max_attack_level must be positive");
        }
        Ok(())
    }

    fn max_level(&self, axis: ShiftAxis) -> usize {
        match axis {
            ShiftAxis::Language => self.max_language_level,
            ShiftAxis::Attack => self.max_attack_level,
            ShiftAxis::Channel => self.max_channel_level,
            ShiftAxis::Speaker => self.max_speaker_level,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShiftAxis {
    Language,
    Attack,
    Channel,
    Speaker,
}

impl ShiftAxis {
    pub const ALL: [ShiftAxis; 4] = [
        ShiftAxis::Language,
        ShiftAxis::Attack,
        ShiftAxis::Channel,
        ShiftAxis::Speaker,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ShiftAxis::Language => "language",
            ShiftAxis::Attack => "attack",
            ShiftAxis::Channel => "channel",
            ShiftAxis::Speaker => "speaker",
        }
    }

    fn default_magnitude(self) -> f64 {
        match self {
            ShiftAxis::Language => 0.75,
            ShiftAxis::Attack => 0.0,
            ShiftAxis::Channel => 0.3,
            ShiftAxis::Speaker => 0.5,
        }
    }
}

impl std::str::FromStr for ShiftAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ShiftAxis::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown shift axis `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftSpec {
    pub axis: ShiftAxis,
    pub level: usize,
    /// Axis-specific strength; see the module docs. Unused for `attack`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub magnitude: Option<f64>,
}

impl ShiftSpec {
    pub fn new(axis: ShiftAxis, level: usize) -> Self {
        Self {
            axis,
            level,
            magnitude: None,
        }
    }

    pub fn magnitude(&self) -> f64 {
        self.magnitude.unwrap_or_else(|| self.axis.default_magnitude())
    }

    /// Test-set name, e.g. `attack-3`; level 0 is `matched`.
    pub fn name(&self) -> String {
        if self.level == 0 {
            "matched".into()
        } else {
            format!("{}-{}", self.axis.name(), self.level)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub task: TaskSpec,
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shift: Option<ShiftSpec>,
    /// Unseen attack cluster ids present (attack axis only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub unseen_attacks: Vec<usize>,
    /// Seed of each channel condition's transform (channel axis only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub channel_seeds: Vec<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedDataset {
    pub dataset: Dataset,
    pub provenance: Provenance,
}

impl GeneratedDataset {
    /// Rebuilds the dataset from its provenance alone.
    pub fn regenerate(provenance: &Provenance) -> Result<Self> {
        match (&provenance.split, &provenance.shift) {
            (Split::Train, _) => generate_train(&provenance.task),
            (Split::Eval, None) => generate_shifted_test(&provenance.task, &ShiftSpec::new(ShiftAxis::Attack, 0)),
            (Split::Eval, Some(s)) => generate_shifted_test(&provenance.task, s),
        }
    }
}

/// Means and per-coordinate scales of every cluster in the task.
struct World {
    bona: Vec<Cluster>,
    seen: Vec<Cluster>,
}

struct Cluster {
    mean: Vec<f64>,
    scale: Vec<f64>,
}

fn random_direction(seed: u64, ns: &str, idx: u64, dim: usize) -> Vec<f64> {
    let mut rng = stream(seed, ns, idx);
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn cluster_scale(task: &TaskSpec, ns: &str, idx: u64) -> Vec<f64> {
    let mut rng = stream(task.base_seed, ns, idx);
    (0..task.feature_dim)
        .map(|_| task.cluster_std * rng.random_range(0.8..1.2))
        .collect()
}

fn spoof_cluster(task: &TaskSpec, ns: &str, idx: u64) -> Cluster {
    let dir = random_direction(task.base_seed, &format!("{ns}-dir"), idx, task.feature_dim);
    Cluster {
        mean: dir.iter().map(|d| d * task.spoof_separation).collect(),
        scale: cluster_scale(task, &format!("{ns}-scale"), idx),
    }
}

fn unseen_cluster(task: &TaskSpec, idx: usize) -> Cluster {
    spoof_cluster(task, "unseen-attack", idx as u64)
}

impl World {
    fn new(task: &TaskSpec) -> Self {
        let bona = (0..task.bona_components as u64)
            .map(|c| {
                let mut rng = stream(task.base_seed, "bona-mean", c);
                Cluster {
                    mean: (0..task.feature_dim)
                        .map(|_| 0.5 * Distribution::<f64>::sample(&StandardNormal, &mut rng))
                        .collect(),
                    scale: cluster_scale(task, "bona-scale", c),
                }
            })
            .collect();
        let seen = (0..task.n_train_attacks as u64)
            .map(|a| spoof_cluster(task, "seen-attack", a))
            .collect();
        Self { bona, seen }
    }

    fn cluster(&self, label: usize, comp: usize) -> &Cluster {
        if label == BONA_FIDE {
            &self.bona[comp]
        } else {
            &self.seen[comp]
        }
    }
}

/// One matched sample before any shift.
struct Draw {
    label: usize,
    comp: usize,
    /// Position among samples of the same label.
    rank_in_class: usize,
    /// Position among samples of the same (label, component).
    rank_in_comp: usize,
    z: Vec<f64>,
}

fn draw_samples(task: &TaskSpec, world: &World, n: usize, ns: &str) -> Vec<Draw> {
    let mut rng = stream(task.base_seed, ns, 0);
    let n_bona = ((n as f64) * task.class_balance).round() as usize;
    let mut labels: Vec<usize> = std::iter::repeat_n(BONA_FIDE, n_bona)
        .chain(std::iter::repeat_n(SPOOF, n - n_bona))
        .collect();
    labels.shuffle(&mut rng);
    let mut class_count = [0usize; 2];
    let mut comp_count = [vec![0usize; world.bona.len()], vec![0usize; world.seen.len()]];
    labels
        .into_iter()
        .map(|label| {
            let k = comp_count[label].len();
            let comp = rng.random_range(0..k);
            let z = (0..task.feature_dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let d = Draw {
                label,
                comp,
                rank_in_class: class_count[label],
                rank_in_comp: comp_count[label][comp],
                z,
            };
            class_count[label] += 1;
            comp_count[label][comp] += 1;
            d
        })
        .collect()
}

fn render(c: &Cluster, z: &[f64], spread: f64) -> Vec<f64> {
    c.mean
        .iter()
        .zip(&c.scale)
        .zip(z)
        .map(|((m, s), z)| m + spread * s * z)
        .collect()
}

fn assemble(name: String, dim: usize, rows: Vec<(Vec<f64>, usize)>) -> Result<Dataset> {
    let mut feats = Vec::with_capacity(rows.len() * dim);
    let mut labels = Vec::with_capacity(rows.len());
    for (x, y) in rows {
        feats.extend(x);
        labels.push(y);
    }
    Dataset::new(name, dim, feats, labels)
}

/// Training set: bona fide mixture plus the seen attack clusters.
pub fn generate_train(task: &TaskSpec) -> Result<GeneratedDataset> {
    task.validate()?;
    let world = World::new(task);
    let mut noise = stream(task.base_seed, "train-label-noise", 0);
    let rows = draw_samples(task, &world, task.n_train, "train-samples")
        .into_iter()
        .map(|d| {
            let x = render(world.cluster(d.label, d.comp), &d.z, 1.0);
            let flip = noise.random::<f64>() < task.train_label_noise;
            (x, if flip { 1 - d.label } else { d.label })
        })
        .collect();
    Ok(GeneratedDataset {
        dataset: assemble("train".into(), task.feature_dim, rows)?,
        provenance: Provenance {
            task: task.clone(),
            split: Split::Train,
            shift: None,
            unseen_attacks: vec![],
            channel_seeds: vec![],
        },
    })
}

/// Matched evaluation set (level 0 of every axis).
pub fn generate_matched_test(task: &TaskSpec) -> Result<GeneratedDataset> {
    generate_shifted_test(task, &ShiftSpec::new(ShiftAxis::Attack, 0))
}

/// Evaluation set under one mismatch axis at the given level.
pub fn generate_shifted_test(task: &TaskSpec, shift: &ShiftSpec) -> Result<GeneratedDataset> {
    task.validate()?;
    let max = task.max_level(shift.axis);
    if shift.level > max {
        return Err(Error::Config(format!(
            "{} level {} exceeds the configured maximum {}",
            shift.axis.name(),
            shift.level,
            max
        )));
    }
    let mag = shift.magnitude();
    if !(mag >= 0.0 && mag.is_finite()) {
        return Err(Error::Config(format!(
            "shift magnitude must be non-negative, got {mag}"
        )));
    }
    if shift.axis == ShiftAxis::Speaker && mag >= 1.0 {
        return Err(Error::Config("speaker magnitude must be below 1".into()));
    }
    let world = World::new(task);
    let draws = draw_samples(task, &world, task.n_eval, "eval-samples");
    let dim = task.feature_dim;
    let mut prov = Provenance {
        task: task.clone(),
        split: Split::Eval,
        shift: (shift.level > 0).then(|| shift.clone()),
        unseen_attacks: vec![],
        channel_seeds: vec![],
    };
    let level = shift.level;
    let matched = |d: &Draw| render(world.cluster(d.label, d.comp), &d.z, 1.0);

    let rows: Vec<(Vec<f64>, usize)> = if level == 0 {
        draws.iter().map(|d| (matched(d), d.label)).collect()
    } else {
        match shift.axis {
            ShiftAxis::Language => {
                let dir = random_direction(task.base_seed, "language-offset", 0, dim);
                let off: Vec<f64> = dir.iter().map(|v| v * level as f64 * mag).collect();
                draws
                    .iter()
                    .map(|d| {
                        let x = matched(d).iter().zip(&off).map(|(a, b)| a + b).collect();
                        (x, d.label)
                    })
                    .collect()
            }
            ShiftAxis::Attack => {
                let slots = task.max_attack_level;
                let unseen: Vec<Cluster> = (0..level).map(|k| unseen_cluster(task, k)).collect();
                prov.unseen_attacks = (0..level).collect();
                draws
                    .iter()
                    .map(|d| {
                        let slot = d.rank_in_class % slots;
                        if d.label == SPOOF && slot < level {
                            (render(&unseen[slot], &d.z, 1.0), d.label)
                        } else {
                            (matched(d), d.label)
                        }
                    })
                    .collect()
            }
            ShiftAxis::Channel => {
                let seeds: Vec<u64> = (0..level as u64)
                    .map(|g| derive_seed(task.base_seed, "channel-transform", g))
                    .collect();
                let transforms: Vec<Vec<f64>> = seeds
                    .iter()
                    .enumerate()
                    .map(|(g, &s)| {
                        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(s);
                        let sev = mag * (g + 1) as f64 / (dim as f64).sqrt();
                        let mut a = vec![0.0; dim * dim];
                        for r in 0..dim {
                            for c in 0..dim {
                                let e: f64 = StandardNormal.sample(&mut rng);
                                a[r * dim + c] = sev * e + if r == c { 1.0 } else { 0.0 };
                            }
                        }
                        a
                    })
                    .collect();
                prov.channel_seeds = seeds;
                let mut noise = stream(task.base_seed, "channel-noise", level as u64);
                draws
                    .iter()
                    .enumerate()
                    .map(|(i, d)| {
                        let g = i % level;
                        let x = matched(d);
                        let a = &transforms[g];
                        let sd = 0.5 * mag * (g + 1) as f64;
                        let y = (0..dim)
                            .map(|r| {
                                let e: f64 = StandardNormal.sample(&mut noise);
                                (0..dim).map(|c| a[r * dim + c] * x[c]).sum::<f64>() + sd * e
                            })
                            .collect();
                        (y, d.label)
                    })
                    .collect()
            }
            ShiftAxis::Speaker => {
                let tau = mag;
                let l = level as f64;
                let within = (1.0 - tau * tau * (l - 1.0) / l).sqrt();
                let offsets = |label: usize, comp: usize| -> Vec<Vec<f64>> {
                    let ns = if label == BONA_FIDE {
                        "speaker-bona"
                    } else {
                        "speaker-spoof"
                    };
                    let mut rng = stream(task.base_seed, ns, comp as u64);
                    let mut offs: Vec<Vec<f64>> = (0..level)
                        .map(|_| (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect())
                        .collect();
                    let c = world.cluster(label, comp);
                    for j in 0..dim {
                        let mean = offs.iter().map(|o| o[j]).sum::<f64>() / l;
                        for o in offs.iter_mut() {
                            o[j] = (o[j] - mean) * tau * c.scale[j];
                        }
                    }
                    offs
                };
                let bona_offs: Vec<_> = (0..world.bona.len()).map(|c| offsets(BONA_FIDE, c)).collect();
                let spoof_offs: Vec<_> = (0..world.seen.len()).map(|c| offsets(SPOOF, c)).collect();
                draws
                    .iter()
                    .map(|d| {
                        let offs = if d.label == BONA_FIDE { &bona_offs } else { &spoof_offs };
                        let o = &offs[d.comp][d.rank_in_comp % level];
                        let base = render(world.cluster(d.label, d.comp), &d.z, within);
                        (base.iter().zip(o).map(|(a, b)| a + b).collect(), d.label)
                    })
                    .collect()
            }
        }
    };
    Ok(GeneratedDataset {
        dataset: assemble(shift.name(), dim, rows)?,
        provenance: prov,
    })
}
