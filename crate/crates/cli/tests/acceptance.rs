//! Acceptance criteria owned by the CLI: dataset training targets
//! (criterion 9) and byte-identical report reproduction (criterion 10).
//!
//! The TREC and IMDB checks need the real corpora under `data/`; run
//! `scripts/fetch_trec.sh` (network required) and re-run with
//! `cargo test -p idattn-cli --test acceptance -- --ignored`. The
//! synthetic training sanity check always runs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use idattn_cli::commands::{cmd_atilde_sweep, cmd_rank_sweep, cmd_train, WeightsSource};
use idattn_cli::config::{preset_config, Preset, RunConfig};

use idattn::encoder::Variant;
use rand::Rng;

fn criterion_line(n: &str, pass: bool, detail: &str) {
    println!(
        "criterion {n}: {} - {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
}

fn workspace_path(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn write_manifest(dir: &Path, train: &Path, test: &Path, seed: u64) -> PathBuf {
    let manifest = serde_json::json!({
        "train_path": train,
        "test_path": test,
        "label_column": "label",
        "text_column": "text",
        "delimiter": ",",
        "valid_fraction": 0.3,
        "split_seed": seed,
        "min_freq": 1,
    });
    let path = dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest).unwrap()).unwrap();
    path
}

/// Two-class synthetic corpus with class-specific token pools plus
/// shared fillers; learnable in a few epochs, impossible to ace by
/// majority vote.
fn synth_corpus(dir: &Path, n_train: usize, n_test: usize, seed: u64) -> PathBuf {
    let mut rng = idattn::net::init::seeded_rng(seed);
    let pos = ["good", "great", "lovely", "superb", "charming", "delight"];
    let neg = ["bad", "awful", "dull", "boring", "poor", "dreadful"];
    let filler = ["movie", "plot", "scene", "actor", "film", "story", "the", "a"];

    let mut make = |n: usize| {
        let mut csv = String::from("label,text\n");
        for i in 0..n {
            let label = i % 2;
            let pool: &[&str] = if label == 0 { &neg } else { &pos };
            let len = rng.gen_range(5..10);
            let mut words = Vec::with_capacity(len);
            for _ in 0..len {
                if rng.gen_bool(0.6) {
                    words.push(pool[rng.gen_range(0..pool.len())]);
                } else {
                    words.push(filler[rng.gen_range(0..filler.len())]);
                }
            }
            let sentiment = if label == 0 { "neg" } else { "pos" };
            writeln!(csv, "{sentiment},{}", words.join(" ")).unwrap();
        }
        csv
    };

    let train = dir.join("train.csv");
    std::fs::write(&train, make(n_train)).unwrap();
    let test = dir.join("test.csv");
    std::fs::write(&test, make(n_test)).unwrap();
    write_manifest(dir, &train, &test, seed)
}

fn small_config(out_dir: PathBuf, manifest: PathBuf, variant: Variant, seed: u64) -> RunConfig {
    let mut cfg = preset_config(Preset::Desk);
    cfg.encoder.d_e = 32;
    cfg.encoder.h = 4;
    cfg.encoder.d_k = 4;
    cfg.encoder.d_v = match variant {
        Variant::Con => 8,
        Variant::Add => 32,
    };
    cfg.encoder.variant = variant;
    cfg.encoder.d_s_max = 32;
    cfg.encoder.ffn_hidden = 32;
    cfg.optim.epochs = 5;
    cfg.optim.batch_size = 32;
    cfg.seed = seed;
    cfg.dataset = Some(manifest);
    cfg.out_dir = out_dir;
    cfg
}

/// Always-on slice of criterion 9: on a synthetic separable corpus both
/// variants must clear the majority baseline by >= 15 accuracy points
/// within 5 epochs, exercising ingestion, batching, training and
/// evaluation end to end.
#[test]
fn criterion_9_training_sanity_synthetic() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth_corpus(dir.path(), 240, 60, 0x91);

    let mut details = Vec::new();
    let mut all_pass = true;
    for (variant, tag) in [(Variant::Con, "con"), (Variant::Add, "add")] {
        let cfg = small_config(
            dir.path().join(format!("run_{tag}")),
            manifest.clone(),
            variant,
            0x92,
        );
        let summary = cmd_train(&cfg).unwrap();
        let metrics: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&summary.metrics_path).unwrap())
                .unwrap();
        let majority = metrics["majority_baseline_test"].as_f64().unwrap();
        let acc = summary.test_accuracy.unwrap();
        let ok = acc >= majority + 0.15;
        details.push(format!(
            "{tag}: test acc {acc:.3} vs majority {majority:.3}"
        ));
        all_pass &= ok;
    }
    criterion_line(
        "9 (synthetic sanity)",
        all_pass,
        &details.join("; "),
    );
    assert!(all_pass, "{details:?}");
}

/// Overfit oracle: a 32-example subset must reach train accuracy 1.0
/// given enough epochs.
#[test]
fn criterion_9_overfit_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth_corpus(dir.path(), 32, 8, 0x93);
    let mut cfg = small_config(dir.path().join("overfit"), manifest, Variant::Con, 0x94);
    cfg.optim.epochs = 200;
    cfg.optim.batch_size = 8;
    let summary = cmd_train(&cfg).unwrap();
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&summary.metrics_path).unwrap()).unwrap();
    let train_acc = metrics["epochs"]
        .as_array()
        .unwrap()
        .last()
        .unwrap()["train_accuracy"]
        .as_f64()
        .unwrap();
    let pass = train_acc >= 1.0;
    criterion_line("9 (overfit oracle)", pass, &format!("final train accuracy {train_acc}"));
    assert!(pass, "expected to overfit 32 examples, got {train_acc}");
}

fn trec_config(variant: Variant, d_k: usize, out: &Path) -> RunConfig {
    let mut cfg = preset_config(Preset::Paper);
    cfg.encoder.variant = variant;
    cfg.encoder.d_k = d_k;
    cfg.encoder.d_v = match variant {
        Variant::Con => cfg.encoder.d_e / cfg.encoder.h,
        Variant::Add => cfg.encoder.d_e,
    };
    // TREC questions are short; d_s_max = 64 covers every example.
    cfg.encoder.d_s_max = 64;
    cfg.seed = 0x77EC;
    cfg.dataset = Some(workspace_path("data/trec/manifest.json"));
    cfg.out_dir = out.to_path_buf();
    cfg
}

/// Criterion 9a - TREC question classification, Con variant with
/// d_k = 1, paper-scale dimensions, 20 epochs: test accuracy within
/// 0.836 ± 0.05.
#[test]
#[ignore = "needs data/trec (no network in the build sandbox); run scripts/fetch_trec.sh first"]
fn criterion_9a_trec_con_dk1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = trec_config(Variant::Con, 1, dir.path());
    let summary = cmd_train(&cfg).unwrap();
    let acc = summary.test_accuracy.unwrap();
    let pass = (acc - 0.836).abs() <= 0.05;
    criterion_line("9a (TREC con d_k=1)", pass, &format!("test accuracy {acc:.3} vs 0.836 +/- 0.05"));
    assert!(pass, "test accuracy {acc}");
}

/// Criterion 9b - TREC, Add variant with d_k = 4: 0.835 ± 0.05.
#[test]
#[ignore = "needs data/trec (no network in the build sandbox); run scripts/fetch_trec.sh first"]
fn criterion_9b_trec_add_dk4() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = trec_config(Variant::Add, 4, dir.path());
    let summary = cmd_train(&cfg).unwrap();
    let acc = summary.test_accuracy.unwrap();
    let pass = (acc - 0.835).abs() <= 0.05;
    criterion_line("9b (TREC add d_k=4)", pass, &format!("test accuracy {acc:.3} vs 0.835 +/- 0.05"));
    assert!(pass, "test accuracy {acc}");
}

/// Criterion 9c - 2000-example IMDB subset: both variants beat the
/// majority baseline by >= 15 points after 5 epochs (desk scale).
#[test]
#[ignore = "needs data/imdb2k (no network in the build sandbox); see README for the fetch recipe"]
fn criterion_9c_imdb_subset_substitute() {
    let manifest = workspace_path("data/imdb2k/manifest.json");
    let dir = tempfile::tempdir().unwrap();
    let mut all_pass = true;
    let mut details = Vec::new();
    for (variant, tag) in [(Variant::Con, "con"), (Variant::Add, "add")] {
        let mut cfg = preset_config(Preset::Desk);
        cfg.encoder.variant = variant;
        cfg.encoder.d_v = match variant {
            Variant::Con => cfg.encoder.d_e / cfg.encoder.h,
            Variant::Add => cfg.encoder.d_e,
        };
        cfg.optim.epochs = 5;
        cfg.seed = 0x9C;
        cfg.dataset = Some(manifest.clone());
        cfg.out_dir = dir.path().join(tag);
        let summary = cmd_train(&cfg).unwrap();
        let metrics: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&summary.metrics_path).unwrap())
                .unwrap();
        let majority = metrics["majority_baseline_test"].as_f64().unwrap();
        let acc = summary.test_accuracy.unwrap();
        details.push(format!("{tag}: {acc:.3} vs majority {majority:.3}"));
        all_pass &= acc >= majority + 0.15;
    }
    criterion_line("9c (IMDB-2k substitute)", all_pass, &details.join("; "));
    assert!(all_pass, "{details:?}");
}

/// Criterion 10 - determinism: identical seed and config reproduce
/// byte-identical reports for every report-writing command.
#[test]
fn criterion_10_byte_identical_reports() {
    let dir = tempfile::tempdir().unwrap();

    let mut base = preset_config(Preset::Desk);
    base.encoder.d_e = 32;
    base.encoder.h = 4;
    base.encoder.d_k = 4;
    base.encoder.d_v = 8;
    base.encoder.d_s_max = 24;
    base.encoder.ffn_hidden = 16;
    base.encoder.vocab_size = 100;
    base.seed = 0xA10;

    // Identical inputs means identical out_dir too: it is echoed into
    // the provenance header, so each command runs twice into the same
    // directory with the bytes captured in between.
    let run_sweeps = || -> (Vec<u8>, Vec<u8>, Vec<u8>, Vec<u8>) {
        let mut cfg = base.clone();
        cfg.out_dir = dir.path().join("sweeps");
        let rank_path =
            cmd_rank_sweep(&cfg, &[4, 8, 12, 16], 10, 0, &WeightsSource::RandomInit).unwrap();
        let out2 = cmd_atilde_sweep(&cfg, 10, 14, 6, &WeightsSource::RandomInit).unwrap();
        (
            std::fs::read(rank_path).unwrap(),
            std::fs::read(out2.csv_path).unwrap(),
            std::fs::read(out2.analysis_json_path).unwrap(),
            std::fs::read(out2.analysis_csv_path).unwrap(),
        )
    };

    let a = run_sweeps();
    let b = run_sweeps();
    let sweeps_equal = a == b;

    // Training byte-determinism, metrics and checkpoint alike.
    let manifest = synth_corpus(dir.path(), 60, 12, 0xA11);
    let run_train = || -> (Vec<u8>, Vec<u8>) {
        let mut cfg = small_config(
            dir.path().join("train"),
            manifest.clone(),
            Variant::Con,
            0xA12,
        );
        cfg.optim.epochs = 2;
        let summary = cmd_train(&cfg).unwrap();
        (
            std::fs::read(summary.metrics_path).unwrap(),
            std::fs::read(summary.checkpoint_path).unwrap(),
        )
    };
    let t1 = run_train();
    let t2 = run_train();
    let train_equal = t1 == t2;

    // The configs land inside the reports (provenance echo).
    let rank_csv = String::from_utf8(a.0.clone()).unwrap();
    let has_provenance = rank_csv.starts_with("# config: ")
        && rank_csv.contains("\n# seed: ")
        && rank_csv.contains("\n# build: ");

    let pass = sweeps_equal && train_equal && has_provenance;
    criterion_line(
        "10",
        pass,
        &format!(
            "sweep reports byte-identical: {sweeps_equal}; train outputs byte-identical: \
             {train_equal}; provenance headers present: {has_provenance}"
        ),
    );
    assert!(pass);
}
