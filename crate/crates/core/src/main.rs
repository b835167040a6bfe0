use std::fs::{self, File};
use std::io::{self, BufWriter};
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use scdl_core::datasets::{inject_colony_noise, synth_blobs, BlobSpec, Split};
use scdl_core::harness::{
    self, load_data, resolve_prior, ConfigOverrides, DatasetOverrides, ExperimentConfig, LossOverrides, SolverOverrides,
};
use scdl_core::loss::CompositeLossConfig;
use scdl_core::network::SolverKind;
use scdl_core::theory;
use scdl_core::{Scenario, SeededRng};

#[derive(Parser)]
#[command(
    name = "scdl",
    version,
    about = "Opposite-label training with semantic colony priors"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one scenario for the configured number of repetitions.
    Train(ExperimentArgs),
    /// Train several scenarios on the same data and write a comparison table.
    Compare {
        #[command(flatten)]
        args: ExperimentArgs,
        /// Comma-separated scenarios to run.
        #[arg(long, value_delimiter = ',', default_value = "OT,RT,SD")]
        scenarios: Vec<Scenario>,
    },
    /// Check risk-minimizer agreement with the Bayes classifier on random discrete instances.
    VerifyTheory(TheoryArgs),
    /// Corrupt a training split within colonies and write the manifest.
    InjectNoise(ExperimentArgs),
    /// Write synthetic blob train/test CSVs and their taxonomy.
    MakeSynth(SynthArgs),
}

#[derive(Args, Clone)]
struct ExperimentArgs {
    /// TOML config file; command-line flags take precedence over its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// fashion-mnist, cifar10, cifar100 or blobs.
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    scenario: Option<Scenario>,
    /// Builtin prior name or taxonomy file path.
    #[arg(long)]
    taxonomy: Option<String>,
    #[arg(long)]
    alpha1: Option<f64>,
    #[arg(long)]
    alpha2: Option<f64>,
    #[arg(long)]
    solver: Option<SolverKind>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    noise_ratio: Option<f64>,
    /// Output directory (a file path for inject-noise).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Use only the first N training samples.
    #[arg(long)]
    train_limit: Option<usize>,
    #[arg(long)]
    test_limit: Option<usize>,
}

impl ExperimentArgs {
    fn overrides(&self) -> ConfigOverrides {
        ConfigOverrides {
            scenario: self.scenario,
            taxonomy: self.taxonomy.clone(),
            seed: self.seed,
            noise_ratio: self.noise_ratio,
            repetitions: self.reps,
            out_dir: self.out.clone(),
            dataset: DatasetOverrides {
                kind: self.dataset.clone(),
                data_dir: self.data_dir.clone(),
                train_limit: self.train_limit,
                test_limit: self.test_limit,
                ..Default::default()
            },
            loss: LossOverrides {
                alpha1: self.alpha1,
                alpha2: self.alpha2,
                ..Default::default()
            },
            solver: SolverOverrides {
                kind: self.solver,
                learning_rate: self.lr,
                batch_size: self.batch_size,
                epochs: self.epochs,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut layers = Vec::new();
        if let Some(path) = &self.config {
            layers.push(ConfigOverrides::from_file(path)?);
        }
        layers.push(self.overrides());
        Ok(ExperimentConfig::resolve(&layers)?)
    }
}

#[derive(Args)]
struct TheoryArgs {
    #[arg(long, default_value_t = 100)]
    instances: usize,
    #[arg(long, default_value_t = 6)]
    max_support: usize,
    #[arg(long, default_value_t = 5)]
    max_classes: usize,
    #[arg(long, default_value_t = 1.0)]
    alpha1: f64,
    #[arg(long, default_value_t = 0.5)]
    alpha2: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV report path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 6)]
    classes: usize,
    #[arg(long, default_value_t = 2)]
    colonies: usize,
    #[arg(long, default_value_t = 300)]
    per_class: usize,
    #[arg(long, default_value_t = 150)]
    test_per_class: usize,
    /// Defaults to the smallest dimension that fits the layout.
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    separation: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "synth")]
    out: PathBuf,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Train(args) => {
            let cfg = args.resolve()?;
            let records = harness::run_experiment(&cfg)?;
            for r in &records {
                println!(
                    "{} rep {} seed {}: test accuracy {:.4}, final loss {:.5}, {:.1}s",
                    r.scenario,
                    r.repetition,
                    r.seed,
                    r.final_accuracy,
                    r.rows.last().map_or(f64::NAN, |row| row.composite),
                    r.wall_time_secs
                );
            }
        }
        Command::Compare { args, scenarios } => {
            let cfg = args.resolve()?;
            if scenarios.is_empty() {
                bail!("no scenarios given");
            }
            let (_, cmp) = harness::run_comparison(&cfg, &scenarios)?;
            cmp.write_csv(io::stdout().lock())?;
        }
        Command::VerifyTheory(a) => {
            let cfg = CompositeLossConfig::new(a.alpha1, a.alpha2)?;
            let rows = theory::theorem1_suite(a.instances, a.max_support, a.max_classes, &cfg, a.seed)?;
            match &a.out {
                Some(path) => theory::write_theory_csv(&rows, BufWriter::new(File::create(path)?))?,
                None => theory::write_theory_csv(&rows, io::stdout().lock())?,
            }
            let agree = rows.iter().filter(|r| r.report.agreement).count();
            eprintln!("{agree}/{} instances agree with the Bayes classifier", rows.len());
        }
        Command::InjectNoise(args) => {
            let cfg = args.resolve()?;
            if cfg.noise_ratio <= 0.0 {
                bail!("--noise-ratio must be positive");
            }
            let data = load_data(&cfg.dataset, cfg.seed)?;
            let prior = resolve_prior(&cfg, &data)?;
            let (_, manifest) =
                inject_colony_noise(&data.train, &prior, cfg.noise_ratio, &mut SeededRng::new(cfg.seed))?;
            let path = cfg.out_dir.unwrap_or_else(|| PathBuf::from("noise_manifest.csv"));
            manifest.write_csv(BufWriter::new(
                File::create(&path).with_context(|| format!("creating {}", path.display()))?,
            ))?;
            eprintln!(
                "corrupted {} of {} labels -> {}",
                manifest.len(),
                data.train.len(),
                path.display()
            );
        }
        Command::MakeSynth(a) => {
            let mut spec = BlobSpec::balanced(a.classes, a.colonies, a.per_class, a.separation);
            if let Some(d) = a.dim {
                spec.dim = d;
            }
            fs::create_dir_all(&a.out)?;
            let (train, prior) = synth_blobs(&spec, Split::Train, &mut SeededRng::derive(a.seed, 0, 1))?;
            spec.per_class = a.test_per_class;
            let (test, _) = synth_blobs(&spec, Split::Test, &mut SeededRng::derive(a.seed, 0, 2))?;
            harness::write_dataset_csv(&train, BufWriter::new(File::create(a.out.join("train.csv"))?))?;
            harness::write_dataset_csv(&test, BufWriter::new(File::create(a.out.join("test.csv"))?))?;
            fs::write(a.out.join("taxonomy.txt"), prior.to_text())?;
            eprintln!(
                "wrote {} train / {} test samples to {}",
                train.len(),
                test.len(),
                a.out.display()
            );
        }
    }
    Ok(())
}
