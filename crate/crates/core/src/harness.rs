//! Experiment runner: OT/RT/SD runs over repetitions, noisy environments,
//! normalized loss curves and scenario comparisons.
//!
//! Output files (all with fixed headers):
//!
//! | file | header |
//! |------|--------|
//! | `<stem>.csv` | `epoch,positive_loss,opposite_loss,composite_loss,normalized_loss,train_accuracy,test_accuracy` |
//! | `<stem>_curve.csv` | `epoch,normalized_loss,degenerate` |
//! | `<stem>_noise.csv` | `index,original,corrupted` |
//! | `<stem>.meta.toml` | effective config, final accuracy, wall time |
//! | `comparison.csv` | `scenario,source,repetitions,mean_accuracy,std_accuracy,delta_vs_ot_pp` |
//! | `comparison_curves.csv` | `epoch,<scenario>...` |
//!
//! `<stem>` is `<dataset>_<scenario>_rep<r>_seed<s>`. Everything except the
//! `.meta.toml` sidecar (which holds the wall time) is a pure function of the
//! config and seed.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::datasets::{
    inject_colony_noise, load_cifar_dir, load_idx_dir, synth_blobs, BlobSpec, CifarVariant, Dataset, NoiseManifest,
    Split,
};
use crate::error::{Error, Result};
use crate::loss::{CompositeLossConfig, Reduction};
use crate::network::{self, MlpModel, SolverConfig, SolverKind, MLP3_HIDDEN};
use crate::rng::SeededRng;
use crate::sampler::Scenario;
use crate::taxonomy::SemanticPrior;

// Sub-stream indices for `SeededRng::derive`.
const STREAM_BLOBS_TRAIN: u64 = 1;
const STREAM_BLOBS_TEST: u64 = 2;
const STREAM_NOISE: u64 = 3;

/// Where the data comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DatasetSpec {
    FashionMnist {
        data_dir: PathBuf,
        #[serde(skip_serializing_if = "Option::is_none")]
        train_limit: Option<usize>,
        #[serde(skip_serializing_if = "Option::is_none")]
        test_limit: Option<usize>,
    },
    Cifar10 {
        data_dir: PathBuf,
        #[serde(skip_serializing_if = "Option::is_none")]
        train_limit: Option<usize>,
        #[serde(skip_serializing_if = "Option::is_none")]
        test_limit: Option<usize>,
    },
    Cifar100 {
        data_dir: PathBuf,
        #[serde(skip_serializing_if = "Option::is_none")]
        train_limit: Option<usize>,
        #[serde(skip_serializing_if = "Option::is_none")]
        test_limit: Option<usize>,
    },
    /// Gaussian blobs; the generator supplies the colony prior.
    Blobs {
        classes: usize,
        colonies: usize,
        per_class: usize,
        test_per_class: usize,
        dim: usize,
        separation: f64,
        std_dev: f64,
    },
}

impl DatasetSpec {
    pub const NAMES: [&'static str; 4] = ["fashion-mnist", "cifar10", "cifar100", "blobs"];

    pub fn name(&self) -> &'static str {
        match self {
            DatasetSpec::FashionMnist { .. } => "fashion-mnist",
            DatasetSpec::Cifar10 { .. } => "cifar10",
            DatasetSpec::Cifar100 { .. } => "cifar100",
            DatasetSpec::Blobs { .. } => "blobs",
        }
    }

    pub fn blob_spec(&self) -> Option<BlobSpec> {
        match *self {
            DatasetSpec::Blobs {
                classes,
                colonies,
                per_class,
                dim,
                separation,
                std_dev,
                ..
            } => {
                let mut spec = BlobSpec::balanced(classes, colonies, per_class, separation);
                spec.dim = dim;
                spec.std_dev = std_dev;
                Some(spec)
            }
            _ => None,
        }
    }
}

/// Train/test splits plus the prior the data generator supplies, if any.
#[derive(Debug, Clone)]
pub struct LoadedData {
    pub train: Dataset,
    pub test: Dataset,
    pub generated_prior: Option<SemanticPrior>,
}

/// Loads (or synthesizes) both splits. Blob data depends only on `seed`.
pub fn load_data(spec: &DatasetSpec, seed: u64) -> Result<LoadedData> {
    let limit = |ds: Dataset, n: Option<usize>| match n {
        Some(n) => ds.head(n),
        None => ds,
    };
    let (train, test, generated_prior) = match spec {
        DatasetSpec::FashionMnist {
            data_dir,
            train_limit,
            test_limit,
        } => (
            limit(load_idx_dir(data_dir, Split::Train)?, *train_limit),
            limit(load_idx_dir(data_dir, Split::Test)?, *test_limit),
            None,
        ),
        DatasetSpec::Cifar10 {
            data_dir,
            train_limit,
            test_limit,
        }
        | DatasetSpec::Cifar100 {
            data_dir,
            train_limit,
            test_limit,
        } => {
            let variant = if matches!(spec, DatasetSpec::Cifar10 { .. }) {
                CifarVariant::Cifar10
            } else {
                CifarVariant::Cifar100
            };
            (
                limit(load_cifar_dir(data_dir, variant, Split::Train)?, *train_limit),
                limit(load_cifar_dir(data_dir, variant, Split::Test)?, *test_limit),
                None,
            )
        }
        DatasetSpec::Blobs { test_per_class, .. } => {
            let mut blob = spec.blob_spec().expect("blob spec");
            let (train, prior) = synth_blobs(&blob, Split::Train, &mut SeededRng::derive(seed, 0, STREAM_BLOBS_TRAIN))?;
            blob.per_class = *test_per_class;
            let (test, _) = synth_blobs(&blob, Split::Test, &mut SeededRng::derive(seed, 0, STREAM_BLOBS_TEST))?;
            (train, test, Some(prior))
        }
    };
    Ok(LoadedData {
        train,
        test,
        generated_prior,
    })
}

/// Fully resolved experiment settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    /// Builtin prior name or path to a taxonomy file.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub taxonomy: Option<String>,
    pub hidden: Vec<usize>,
    pub seed: u64,
    pub noise_ratio: f64,
    pub repetitions: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    pub dataset: DatasetSpec,
    pub loss: CompositeLossConfig,
    pub solver: SolverConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            scenario: Scenario::Sd,
            taxonomy: None,
            hidden: MLP3_HIDDEN.to_vec(),
            seed: 0,
            noise_ratio: 0.0,
            repetitions: 3,
            out_dir: None,
            dataset: DatasetSpec::FashionMnist {
                data_dir: PathBuf::from("data/fashion-mnist"),
                train_limit: None,
                test_limit: None,
            },
            loss: CompositeLossConfig::default(),
            solver: SolverConfig::adam(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.repetitions == 0 {
            return Err(Error::InvalidArgument("repetitions must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.noise_ratio) {
            return Err(Error::InvalidArgument(format!(
                "noise ratio {} outside [0, 1)",
                self.noise_ratio
            )));
        }
        let generated = matches!(self.dataset, DatasetSpec::Blobs { .. });
        if self.taxonomy.is_none() && !generated {
            if self.scenario == Scenario::Sd {
                return Err(Error::InvalidArgument("the SD scenario requires a taxonomy".into()));
            }
            if self.noise_ratio > 0.0 {
                return Err(Error::InvalidArgument(
                    "within-colony label noise requires a taxonomy".into(),
                ));
            }
        }
        self.loss.validate()?;
        self.solver.validate()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let overrides = ConfigOverrides::from_toml(text)?;
        ExperimentConfig::resolve(&[overrides])
    }

    /// Applies override layers in order (later layers win) on top of the defaults.
    pub fn resolve(layers: &[ConfigOverrides]) -> Result<Self> {
        let merged = layers
            .iter()
            .fold(ConfigOverrides::default(), |acc, layer| acc.merge(layer.clone()));
        merged.apply()
    }
}

/// One layer of optional settings: a config file or the command line.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigOverrides {
    pub scenario: Option<Scenario>,
    pub taxonomy: Option<String>,
    pub hidden: Option<Vec<usize>>,
    pub seed: Option<u64>,
    pub noise_ratio: Option<f64>,
    pub repetitions: Option<usize>,
    pub out_dir: Option<PathBuf>,
    pub dataset: DatasetOverrides,
    pub loss: LossOverrides,
    pub solver: SolverOverrides,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetOverrides {
    pub kind: Option<String>,
    pub data_dir: Option<PathBuf>,
    pub train_limit: Option<usize>,
    pub test_limit: Option<usize>,
    pub classes: Option<usize>,
    pub colonies: Option<usize>,
    pub per_class: Option<usize>,
    pub test_per_class: Option<usize>,
    pub dim: Option<usize>,
    pub separation: Option<f64>,
    pub std_dev: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossOverrides {
    pub alpha1: Option<f64>,
    pub alpha2: Option<f64>,
    pub prob_clamp: Option<f64>,
    pub reduction: Option<Reduction>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOverrides {
    pub kind: Option<SolverKind>,
    pub learning_rate: Option<f64>,
    pub momentum: Option<f64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub eps: Option<f64>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
}

macro_rules! take_later {
    ($base:expr, $later:expr; $($field:ident),+) => {
        $( $base.$field = $later.$field.or($base.$field.take()); )+
    };
}

impl ConfigOverrides {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Validation(format!("config: {e}")))
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::read_file(path, e))?;
        ConfigOverrides::from_toml(&text)
    }

    /// Fields set in `later` replace those in `self`.
    pub fn merge(mut self, later: ConfigOverrides) -> Self {
        take_later!(self, later; scenario, taxonomy, hidden, seed, noise_ratio, repetitions, out_dir);
        take_later!(self.dataset, later.dataset; kind, data_dir, train_limit, test_limit, classes, colonies,
            per_class, test_per_class, dim, separation, std_dev);
        take_later!(self.loss, later.loss; alpha1, alpha2, prob_clamp, reduction);
        take_later!(self.solver, later.solver; kind, learning_rate, momentum, beta1, beta2, eps, batch_size, epochs);
        self
    }

    fn apply(self) -> Result<ExperimentConfig> {
        let d = ExperimentConfig::default();
        let ds = self.dataset;
        let kind = ds.kind.as_deref().unwrap_or("fashion-mnist");
        let dir = |default: &str| ds.data_dir.clone().unwrap_or_else(|| PathBuf::from(default));
        let dataset = match kind {
            "fashion-mnist" => DatasetSpec::FashionMnist {
                data_dir: dir("data/fashion-mnist"),
                train_limit: ds.train_limit,
                test_limit: ds.test_limit,
            },
            "cifar10" => DatasetSpec::Cifar10 {
                data_dir: dir("data/cifar10"),
                train_limit: ds.train_limit,
                test_limit: ds.test_limit,
            },
            "cifar100" => DatasetSpec::Cifar100 {
                data_dir: dir("data/cifar100"),
                train_limit: ds.train_limit,
                test_limit: ds.test_limit,
            },
            "blobs" => {
                let classes = ds.classes.unwrap_or(6);
                let colonies = ds.colonies.unwrap_or(2);
                let per_class = ds.per_class.unwrap_or(300);
                let separation = ds.separation.unwrap_or(1.0);
                let min_dim = BlobSpec::balanced(classes, colonies, per_class, separation).min_dim();
                DatasetSpec::Blobs {
                    classes,
                    colonies,
                    per_class,
                    test_per_class: ds.test_per_class.unwrap_or(per_class / 2),
                    dim: ds.dim.unwrap_or(min_dim),
                    separation,
                    std_dev: ds.std_dev.unwrap_or(1.0),
                }
            }
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown dataset \"{other}\" (expected one of {})",
                    DatasetSpec::NAMES.join(", ")
                )))
            }
        };

        let solver_kind = self.solver.kind.unwrap_or(d.solver.kind);
        let base = SolverConfig::for_kind(solver_kind);
        let s = self.solver;
        let solver = SolverConfig {
            kind: solver_kind,
            learning_rate: s.learning_rate.unwrap_or(base.learning_rate),
            momentum: s.momentum.unwrap_or(base.momentum),
            beta1: s.beta1.unwrap_or(base.beta1),
            beta2: s.beta2.unwrap_or(base.beta2),
            eps: s.eps.unwrap_or(base.eps),
            batch_size: s.batch_size.unwrap_or(base.batch_size),
            epochs: s.epochs.unwrap_or(base.epochs),
        };
        let loss = CompositeLossConfig {
            alpha1: self.loss.alpha1.unwrap_or(d.loss.alpha1),
            alpha2: self.loss.alpha2.unwrap_or(d.loss.alpha2),
            prob_clamp: self.loss.prob_clamp.unwrap_or(d.loss.prob_clamp),
            reduction: self.loss.reduction.unwrap_or(d.loss.reduction),
        };
        let cfg = ExperimentConfig {
            scenario: self.scenario.unwrap_or(d.scenario),
            taxonomy: self.taxonomy,
            hidden: self.hidden.unwrap_or(d.hidden),
            seed: self.seed.unwrap_or(d.seed),
            noise_ratio: self.noise_ratio.unwrap_or(d.noise_ratio),
            repetitions: self.repetitions.unwrap_or(d.repetitions),
            out_dir: self.out_dir,
            dataset,
            loss,
            solver,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Prior used for sampling and noise: the named taxonomy, else the generator's,
/// else every class in its own colony (under which SD sampling coincides with RT).
pub fn resolve_prior(cfg: &ExperimentConfig, data: &LoadedData) -> Result<SemanticPrior> {
    let c = data.train.class_count();
    let prior = match (&cfg.taxonomy, &data.generated_prior) {
        (Some(t), _) => SemanticPrior::resolve(t)?,
        (None, Some(p)) => p.clone(),
        (None, None) => SemanticPrior::new(c, None, (0..c).map(|i| (format!("class{i}"), vec![i])))?,
    };
    if prior.class_count() != c {
        return Err(Error::InvalidArgument(format!(
            "taxonomy has {} classes, dataset has {c}",
            prior.class_count()
        )));
    }
    Ok(prior)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRow {
    pub epoch: usize,
    pub positive: f64,
    pub opposite: f64,
    pub composite: f64,
    pub normalized: f64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub scenario: Scenario,
    pub repetition: usize,
    pub seed: u64,
    pub rows: Vec<EpochRow>,
    pub final_accuracy: f64,
    pub wall_time_secs: f64,
    /// Effective config, with `scenario` and `seed` set to this run's values.
    pub config: ExperimentConfig,
    /// The composite loss was constant, so `normalized` is all zeros.
    pub normalization_degenerate: bool,
    pub sampler_draws: u64,
    /// Row-major `c × c` counts of sampled `(true, opposite)` pairs.
    pub pair_counts: Vec<u64>,
    pub noise: Option<NoiseManifest>,
}

pub const RECORD_CSV_HEADER: [&str; 7] = [
    "epoch",
    "positive_loss",
    "opposite_loss",
    "composite_loss",
    "normalized_loss",
    "train_accuracy",
    "test_accuracy",
];

pub const CURVE_CSV_HEADER: [&str; 3] = ["epoch", "normalized_loss", "degenerate"];

pub const COMPARISON_CSV_HEADER: [&str; 6] = [
    "scenario",
    "source",
    "repetitions",
    "mean_accuracy",
    "std_accuracy",
    "delta_vs_ot_pp",
];

impl RunRecord {
    pub fn stem(&self) -> String {
        format!(
            "{}_{}_rep{}_seed{}",
            self.config.dataset.name(),
            self.scenario,
            self.repetition,
            self.seed
        )
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(RECORD_CSV_HEADER)?;
        for r in &self.rows {
            w.write_record([
                r.epoch.to_string(),
                r.positive.to_string(),
                r.opposite.to_string(),
                r.composite.to_string(),
                r.normalized.to_string(),
                r.train_accuracy.to_string(),
                r.test_accuracy.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Sidecar holding everything that is not byte-reproducible, plus the config snapshot.
    pub fn meta_toml(&self) -> String {
        #[derive(Serialize)]
        struct Meta<'a> {
            final_accuracy: f64,
            wall_time_secs: f64,
            normalization_degenerate: bool,
            sampler_draws: u64,
            config: &'a ExperimentConfig,
        }
        toml::to_string(&Meta {
            final_accuracy: self.final_accuracy,
            wall_time_secs: self.wall_time_secs,
            normalization_degenerate: self.normalization_degenerate,
            sampler_draws: self.sampler_draws,
            config: &self.config,
        })
        .expect("meta serializes")
    }

    /// Writes the record, its curve, noise manifest and sidecar into `dir`.
    pub fn persist(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let stem = self.stem();
        self.write_csv(BufWriter::new(File::create(dir.join(format!("{stem}.csv")))?))?;
        emit_curves(
            self,
            BufWriter::new(File::create(dir.join(format!("{stem}_curve.csv")))?),
        )?;
        if let Some(m) = &self.noise {
            m.write_csv(BufWriter::new(File::create(dir.join(format!("{stem}_noise.csv")))?))?;
        }
        fs::write(dir.join(format!("{stem}.meta.toml")), self.meta_toml())?;
        Ok(())
    }
}

/// Per-run min-max scaling to `[0, 1]`. A zero range yields zeros and `true`.
pub fn normalize_curve(values: &[f64]) -> (Vec<f64>, bool) {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    if values.is_empty() || range.is_nan() || range <= 0.0 {
        return (vec![0.0; values.len()], true);
    }
    (values.iter().map(|v| (v - lo) / range).collect(), false)
}

/// CSV of `(epoch, normalized composite loss, degenerate flag)`.
pub fn emit_curves<W: Write>(record: &RunRecord, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CURVE_CSV_HEADER)?;
    let flag = u8::from(record.normalization_degenerate).to_string();
    for r in &record.rows {
        w.write_record([r.epoch.to_string(), r.normalized.to_string(), flag.clone()])?;
    }
    w.flush()?;
    Ok(())
}

/// One training run for repetition `rep` on already loaded data.
pub fn run_repetition(
    cfg: &ExperimentConfig,
    data: &LoadedData,
    prior: &SemanticPrior,
    rep: usize,
) -> Result<RunRecord> {
    let start = Instant::now();
    let seed = cfg.seed + rep as u64;
    let (train, noise) = if cfg.noise_ratio > 0.0 {
        let mut noise_rng = SeededRng::derive(seed, 0, STREAM_NOISE);
        let (noisy, manifest) = inject_colony_noise(&data.train, prior, cfg.noise_ratio, &mut noise_rng)?;
        (noisy, Some(manifest))
    } else {
        (data.train.clone(), None)
    };

    let mut rng = SeededRng::new(seed);
    let mut model = MlpModel::new(train.dim(), &cfg.hidden, train.class_count(), &mut rng);
    let log = network::train(
        &mut model,
        &train,
        Some(&data.test),
        prior,
        cfg.scenario,
        &cfg.solver,
        &cfg.loss,
        &mut rng,
    )?;

    let composite: Vec<f64> = log.epochs.iter().map(|e| e.composite).collect();
    let (normalized, degenerate) = normalize_curve(&composite);
    let rows: Vec<EpochRow> = log
        .epochs
        .iter()
        .zip(&normalized)
        .map(|(e, &n)| EpochRow {
            epoch: e.epoch,
            positive: e.positive,
            opposite: e.opposite,
            composite: e.composite,
            normalized: n,
            train_accuracy: e.train_accuracy,
            test_accuracy: e.test_accuracy.expect("test split evaluated"),
        })
        .collect();
    let final_accuracy = rows.last().map_or(0.0, |r| r.test_accuracy);
    if degenerate {
        log::warn!(
            "{} rep {rep}: constant composite loss, curve normalization degenerate",
            cfg.scenario
        );
    }
    let mut snapshot = cfg.clone();
    snapshot.seed = seed;
    snapshot.repetitions = 1;
    Ok(RunRecord {
        scenario: cfg.scenario,
        repetition: rep,
        seed,
        rows,
        final_accuracy,
        wall_time_secs: start.elapsed().as_secs_f64(),
        config: snapshot,
        normalization_degenerate: degenerate,
        sampler_draws: log.sampler_draws,
        pair_counts: log.pair_counts,
        noise,
    })
}

/// Runs every repetition (seeds `seed + rep`), persisting records when `out_dir` is set.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RunRecord>> {
    cfg.validate()?;
    let data = load_data(&cfg.dataset, cfg.seed)?;
    let prior = resolve_prior(cfg, &data)?;
    run_on(cfg, &data, &prior)
}

fn run_on(cfg: &ExperimentConfig, data: &LoadedData, prior: &SemanticPrior) -> Result<Vec<RunRecord>> {
    (0..cfg.repetitions)
        .map(|rep| {
            let record = run_repetition(cfg, data, prior, rep)?;
            log::info!(
                "{} {} rep {rep} (seed {}): accuracy {:.4} in {:.1}s",
                cfg.dataset.name(),
                cfg.scenario,
                record.seed,
                record.final_accuracy,
                record.wall_time_secs
            );
            if let Some(dir) = &cfg.out_dir {
                record.persist(dir)?;
            }
            Ok(record)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSummary {
    pub scenario: Scenario,
    pub repetitions: usize,
    pub mean_accuracy: f64,
    /// Sample standard deviation; zero for a single repetition.
    pub std_accuracy: f64,
    /// `100 · (mean − mean_OT)`, when OT was run.
    pub delta_vs_ot_pp: Option<f64>,
}

/// Published full-scale figure kept alongside measured rows for context.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceRow {
    pub scenario: Scenario,
    pub accuracy: f64,
}

/// Full-scale MLP-3/adam accuracies on Fashion-MNIST (α1 = 1, α2 = 0.5).
pub const FASHION_MNIST_REFERENCE: [(Scenario, f64); 3] =
    [(Scenario::Ot, 0.915), (Scenario::Rt, 0.9177), (Scenario::Sd, 0.9178)];

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub summaries: Vec<ScenarioSummary>,
    pub reference: Vec<ReferenceRow>,
    /// `curves[e][k]`: mean normalized loss of `summaries[k]` at epoch `e + 1`.
    pub curves: Vec<Vec<f64>>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Mean ± std final accuracy per scenario and epoch-aligned mean normalized curves.
pub fn compare_scenarios(records: &BTreeMap<Scenario, Vec<RunRecord>>) -> Result<Comparison> {
    let first = records
        .values()
        .flat_map(|v| v.first())
        .next()
        .ok_or_else(|| Error::InvalidArgument("no records to compare".into()))?;
    let reference_cfg = &first.config;
    for (scenario, runs) in records {
        if runs.is_empty() {
            return Err(Error::InvalidArgument(format!("no records for {scenario}")));
        }
        for r in runs {
            let c = &r.config;
            let mismatch = if r.scenario != *scenario {
                Some("scenario key")
            } else if c.dataset != reference_cfg.dataset {
                Some("dataset")
            } else if c.solver != reference_cfg.solver {
                Some("solver")
            } else if c.hidden != reference_cfg.hidden {
                Some("architecture")
            } else if c.noise_ratio != reference_cfg.noise_ratio {
                Some("noise ratio")
            } else {
                None
            };
            if let Some(what) = mismatch {
                return Err(Error::InvalidArgument(format!(
                    "mismatched configs: {scenario} rep {} differs in {what}",
                    r.repetition
                )));
            }
        }
    }

    let ot_mean = records
        .get(&Scenario::Ot)
        .map(|runs| mean_std(&runs.iter().map(|r| r.final_accuracy).collect::<Vec<_>>()).0);
    let summaries: Vec<ScenarioSummary> = records
        .iter()
        .map(|(&scenario, runs)| {
            let acc: Vec<f64> = runs.iter().map(|r| r.final_accuracy).collect();
            let (mean, std) = mean_std(&acc);
            ScenarioSummary {
                scenario,
                repetitions: runs.len(),
                mean_accuracy: mean,
                std_accuracy: std,
                delta_vs_ot_pp: ot_mean.map(|ot| 100.0 * (mean - ot)),
            }
        })
        .collect();

    let epochs = reference_cfg.solver.epochs;
    let curves = (0..epochs)
        .map(|e| {
            records
                .values()
                .map(|runs| runs.iter().map(|r| r.rows[e].normalized).sum::<f64>() / runs.len() as f64)
                .collect()
        })
        .collect();

    let reference = if matches!(reference_cfg.dataset, DatasetSpec::FashionMnist { .. }) {
        FASHION_MNIST_REFERENCE
            .iter()
            .map(|&(scenario, accuracy)| ReferenceRow { scenario, accuracy })
            .collect()
    } else {
        Vec::new()
    };
    Ok(Comparison {
        summaries,
        reference,
        curves,
    })
}

impl Comparison {
    pub fn summary(&self, scenario: Scenario) -> Option<&ScenarioSummary> {
        self.summaries.iter().find(|s| s.scenario == scenario)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(COMPARISON_CSV_HEADER)?;
        for s in &self.summaries {
            w.write_record([
                s.scenario.to_string(),
                "measured".into(),
                s.repetitions.to_string(),
                s.mean_accuracy.to_string(),
                s.std_accuracy.to_string(),
                s.delta_vs_ot_pp.map(|d| d.to_string()).unwrap_or_default(),
            ])?;
        }
        let ot = self
            .reference
            .iter()
            .find(|r| r.scenario == Scenario::Ot)
            .map(|r| r.accuracy);
        for r in &self.reference {
            w.write_record([
                r.scenario.to_string(),
                "reference".into(),
                String::new(),
                r.accuracy.to_string(),
                String::new(),
                ot.map(|ot| (100.0 * (r.accuracy - ot)).to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_curves_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["epoch".to_string()];
        header.extend(self.summaries.iter().map(|s| s.scenario.to_string()));
        w.write_record(&header)?;
        for (e, row) in self.curves.iter().enumerate() {
            let mut rec = vec![(e + 1).to_string()];
            rec.extend(row.iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs `cfg` once per scenario on shared data, then writes
/// `comparison.csv` and `comparison_curves.csv` when `out_dir` is set.
pub fn run_comparison(
    cfg: &ExperimentConfig,
    scenarios: &[Scenario],
) -> Result<(BTreeMap<Scenario, Vec<RunRecord>>, Comparison)> {
    let mut base = cfg.clone();
    let data = load_data(&cfg.dataset, cfg.seed)?;
    let mut records = BTreeMap::new();
    for &scenario in scenarios {
        base.scenario = scenario;
        base.validate()?;
        let prior = resolve_prior(&base, &data)?;
        records.insert(scenario, run_on(&base, &data, &prior)?);
    }
    let comparison = compare_scenarios(&records)?;
    if let Some(dir) = &cfg.out_dir {
        fs::create_dir_all(dir)?;
        comparison.write_csv(BufWriter::new(File::create(dir.join("comparison.csv"))?))?;
        comparison.write_curves_csv(BufWriter::new(File::create(dir.join("comparison_curves.csv"))?))?;
    }
    Ok((records, comparison))
}

/// Feature columns `x0..x{d-1}` followed by `label`.
pub fn write_dataset_csv<W: Write>(ds: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = (0..ds.dim()).map(|j| format!("x{j}")).collect();
    header.push("label".into());
    w.write_record(&header)?;
    for i in 0..ds.len() {
        let mut rec: Vec<String> = ds.row(i).iter().map(f32::to_string).collect();
        rec.push(ds.labels()[i].to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
