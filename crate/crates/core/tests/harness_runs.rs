use std::fs;
use std::path::Path;

use scdl_core::datasets::{CifarVariant, NoiseManifest};
use scdl_core::harness::{self, ConfigOverrides, ExperimentConfig, RECORD_CSV_HEADER};
use scdl_core::{ClassId, Scenario, SeededRng, SemanticPrior};

fn blobs(scenario: Scenario) -> ExperimentConfig {
    let layer = ConfigOverrides::from_toml(
        r#"
        hidden = [16]
        repetitions = 1
        [dataset]
        kind = "blobs"
        classes = 6
        colonies = 3
        per_class = 60
        [solver]
        epochs = 2
        "#,
    )
    .unwrap();
    let mut cfg = ExperimentConfig::resolve(&[layer]).unwrap();
    cfg.scenario = scenario;
    cfg
}

#[test]
fn sampler_instrumentation_per_scenario() {
    let ot = &harness::run_experiment(&blobs(Scenario::Ot)).unwrap()[0];
    assert_eq!(ot.sampler_draws, 0);
    assert!(ot.pair_counts.is_empty());

    let sd = &harness::run_experiment(&blobs(Scenario::Sd)).unwrap()[0];
    let data = harness::load_data(&sd.config.dataset, sd.config.seed).unwrap();
    let prior = data.generated_prior.unwrap();
    assert_eq!(sd.sampler_draws, 2 * 360);
    assert_eq!(sd.pair_counts.iter().sum::<u64>(), sd.sampler_draws);
    for y in 0..6 {
        for j in 0..6 {
            if prior.same_colony(ClassId(y), ClassId(j)) {
                assert_eq!(sd.pair_counts[y * 6 + j], 0, "same-colony pair ({y}, {j})");
            }
        }
    }

    let rt = &harness::run_experiment(&blobs(Scenario::Rt)).unwrap()[0];
    assert!((0..6).all(|y| rt.pair_counts[y * 6 + y] == 0));
    // Same-colony, non-identical pairs are allowed under RT and occur.
    assert!(rt.pair_counts[1] > 0);
}

#[test]
fn scenarios_share_initialization_and_batches() {
    // With alpha2 = 0 the opposite term vanishes, so SD reproduces OT exactly.
    let mut ot = blobs(Scenario::Ot);
    ot.loss.alpha2 = 0.0;
    let mut sd = ot.clone();
    sd.scenario = Scenario::Sd;
    let a = harness::run_experiment(&ot).unwrap();
    let b = harness::run_experiment(&sd).unwrap();
    assert_eq!(a[0].final_accuracy, b[0].final_accuracy);
    assert_eq!(a[0].rows[1].positive, b[0].rows[1].positive);
}

fn write_cifar10_dir(dir: &Path, per_batch: usize) {
    let mut rng = SeededRng::new(8);
    let mut batch = |n: usize| {
        let mut out = Vec::new();
        for i in 0..n {
            out.push((i % 10) as u8);
            out.extend((0..3072).map(|_| rng.below(256) as u8));
        }
        out
    };
    for b in 1..=5 {
        fs::write(dir.join(format!("data_batch_{b}.bin")), batch(per_batch)).unwrap();
    }
    fs::write(dir.join("test_batch.bin"), batch(per_batch)).unwrap();
}

#[test]
fn noisy_cifar10_run_emits_manifest() {
    let data = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    write_cifar10_dir(data.path(), 40);
    let layer = ConfigOverrides::from_toml(&format!(
        "taxonomy = \"cifar10\"\nnoise_ratio = 0.1\nhidden = [8]\nrepetitions = 1\nout_dir = {:?}\n\
         [dataset]\nkind = \"cifar10\"\ndata_dir = {:?}\n[solver]\nepochs = 1\n",
        out.path(),
        data.path()
    ))
    .unwrap();
    let cfg = ExperimentConfig::resolve(&[layer]).unwrap();
    let runs = harness::run_experiment(&cfg).unwrap();
    assert_eq!(runs[0].rows.len(), 1);

    let stem = "cifar10_SD_rep0_seed0";
    let record = fs::read_to_string(out.path().join(format!("{stem}.csv"))).unwrap();
    assert_eq!(record.lines().next().unwrap(), RECORD_CSV_HEADER.join(","));
    let manifest = NoiseManifest::read_csv(
        fs::File::open(out.path().join(format!("{stem}_noise.csv"))).unwrap(),
        0.1,
    )
    .unwrap();
    assert_eq!(manifest.len(), 20);
    let prior = SemanticPrior::builtin("cifar10").unwrap();
    for k in 0..manifest.len() {
        assert!(prior.same_colony(manifest.original_labels[k], manifest.corrupted_labels[k]));
        assert_ne!(manifest.original_labels[k], manifest.corrupted_labels[k]);
    }
    let meta = fs::read_to_string(out.path().join(format!("{stem}.meta.toml"))).unwrap();
    assert!(meta.contains("wall_time_secs"));
    assert!(meta.contains("kind = \"cifar10\""));
    assert_eq!(CifarVariant::Cifar10.record_len(), 3073);
}

#[test]
fn missing_inputs_are_reported() {
    let mut cfg = ExperimentConfig::resolve(&[ConfigOverrides::from_toml(
        "taxonomy = \"fashion-mnist\"\n[dataset]\ndata_dir = \"/nonexistent/fmnist\"",
    )
    .unwrap()])
    .unwrap();
    let err = harness::run_experiment(&cfg).unwrap_err().to_string();
    assert!(err.contains("/nonexistent/fmnist"), "{err}");

    cfg.taxonomy = None;
    assert!(cfg.validate().unwrap_err().to_string().contains("requires a taxonomy"));
    cfg.scenario = Scenario::Ot;
    cfg.validate().unwrap();
    cfg.noise_ratio = 0.1;
    assert!(cfg.validate().is_err());
}

#[test]
fn taxonomy_class_count_must_match() {
    let mut cfg = blobs(Scenario::Sd);
    cfg.taxonomy = Some("cifar10".into());
    let err = harness::run_experiment(&cfg).unwrap_err().to_string();
    assert!(err.contains("taxonomy has 10 classes"), "{err}");
}
