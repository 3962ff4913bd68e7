//! The five experiment commands. Every artifact embeds the resolved
//! config, seed and build id, and contains no timestamps, so identical
//! invocations produce byte-identical files.

use std::fmt::Write as _;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use idattn::data::{load_dataset, sample_by_length, DatasetManifest, TextDataset};
use idattn::encoder::{EncoderModel, UNK_INDEX};
use idattn::identifiability::{
    check_constraints, construct_atilde_softmax, AnalysisReport, AnalysisRow, SampleRecord,
};
use idattn::linalg::{numerical_rank, Matrix, RANK_EPS};
use idattn::net::init;
use idattn::train::{train, TrainOptions, TrainReport};

use crate::config::RunConfig;
use crate::CliError;

pub const BUILD_ID: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

/// Where model weights come from for analysis commands.
#[derive(Debug, Clone)]
pub enum WeightsSource {
    RandomInit,
    Checkpoint(PathBuf),
}

impl WeightsSource {
    pub fn from_flags(random_init: bool, checkpoint: Option<PathBuf>) -> Result<Self, CliError> {
        match (random_init, checkpoint) {
            (true, None) => Ok(WeightsSource::RandomInit),
            (false, Some(p)) => Ok(WeightsSource::Checkpoint(p)),
            (true, Some(_)) => Err(CliError::Invalid(
                "--random-init and --checkpoint are mutually exclusive".into(),
            )),
            (false, None) => Err(CliError::Invalid(
                "pass --random-init or --checkpoint <file>".into(),
            )),
        }
    }
}

fn provenance(cfg: &RunConfig) -> String {
    let compact = serde_json::to_string(cfg).expect("config serializes");
    format!(
        "# config: {compact}\n# seed: {}\n# build: {BUILD_ID}\n",
        cfg.seed
    )
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// Builds the model (and dataset, when a manifest is configured) for the
/// analysis commands. With a dataset present, vocabulary and class count
/// come from the data so checkpoints line up.
fn prepare(
    cfg: &RunConfig,
    source: &WeightsSource,
) -> Result<(EncoderModel, Option<TextDataset>), CliError> {
    let ds = match &cfg.dataset {
        Some(path) => Some(load_dataset(&DatasetManifest::from_file(path)?)?),
        None => None,
    };
    let mut enc = cfg.encoder.clone();
    if let Some(ds) = &ds {
        enc.vocab_size = ds.vocab.len();
        enc.n_classes = ds.n_classes;
    }
    enc.validate()?;
    let mut model = EncoderModel::new(enc, cfg.seed)?;
    if let WeightsSource::Checkpoint(path) = source {
        model.store.load_checkpoint_file(path)?;
    }
    Ok((model, ds))
}

/// Seeded token sequences of length `d_s`: dataset samples when data is
/// configured, otherwise uniform random indices over the vocabulary.
/// The boolean flags a shortfall of qualifying dataset examples.
fn input_sequences(
    model: &EncoderModel,
    ds: Option<&TextDataset>,
    d_s: usize,
    n: usize,
    seed: u64,
) -> (Vec<Vec<usize>>, bool) {
    match ds {
        Some(ds) => {
            let sample = sample_by_length(ds, d_s, n, seed);
            (sample.sequences, sample.shortfall)
        }
        None => {
            let mut rng = init::seeded_rng(seed);
            let vocab = model.config().vocab_size;
            let seqs = (0..n)
                .map(|_| {
                    (0..d_s)
                        .map(|_| rng.gen_range(UNK_INDEX + 1..vocab))
                        .collect()
                })
                .collect();
            (seqs, false)
        }
    }
}

#[derive(Debug, Serialize)]
pub struct TrainSummary {
    pub metrics_path: PathBuf,
    pub checkpoint_path: PathBuf,
    pub best_epoch: usize,
    pub test_accuracy: Option<f64>,
}

/// Trains the classifier from a dataset manifest, then writes
/// `metrics.json` and the best-validation-epoch `checkpoint.bin`.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainSummary, CliError> {
    let manifest_path = cfg
        .dataset
        .as_ref()
        .ok_or_else(|| CliError::Invalid("train needs --manifest <dataset.json>".into()))?;
    let ds = load_dataset(&DatasetManifest::from_file(manifest_path)?)?;

    let mut enc = cfg.encoder.clone();
    enc.vocab_size = ds.vocab.len();
    enc.n_classes = ds.n_classes;
    enc.validate()?;
    let mut resolved = cfg.clone();
    resolved.encoder = enc.clone();

    let mut model = EncoderModel::new(enc, cfg.seed)?;
    let opts = TrainOptions {
        adam: cfg.optim.adam(),
        epochs: cfg.optim.epochs,
        batch_size: cfg.optim.batch_size,
        clip_len: cfg.encoder.d_s_max,
        seed: init::derive_seed(cfg.seed, 0x7000),
    };
    let report: TrainReport = train(&mut model, &ds, &opts)?;

    let metrics = json!({
        "config": resolved,
        "seed": cfg.seed,
        "build": BUILD_ID,
        "n_examples": ds.examples.len(),
        "vocab_size": ds.vocab.len(),
        "best_epoch": report.best_epoch,
        "test_accuracy": report.test_accuracy,
        "majority_baseline_train": report.majority_baseline_train,
        "majority_baseline_test": report.majority_baseline_test,
        "epochs": report.epochs,
    });
    let metrics_path = cfg.out_dir.join("metrics.json");
    write_text(&metrics_path, &serde_json::to_string_pretty(&metrics)?)?;

    let checkpoint_path = cfg.out_dir.join("checkpoint.bin");
    model.store.save_checkpoint(&checkpoint_path)?;

    Ok(TrainSummary {
        metrics_path,
        checkpoint_path,
        best_epoch: report.best_epoch,
        test_accuracy: report.test_accuracy,
    })
}

/// Numerical rank of the chosen head's `T` across sequence lengths.
/// Writes `rank_sweep.csv` with columns `d_s,mean_rank,mean_nullity`.
pub fn cmd_rank_sweep(
    cfg: &RunConfig,
    d_s_list: &[usize],
    n_samples: usize,
    head: usize,
    source: &WeightsSource,
) -> Result<PathBuf, CliError> {
    if d_s_list.is_empty() {
        return Err(CliError::Invalid("--d-s-list must not be empty".into()));
    }
    let (model, ds) = prepare(cfg, source)?;
    if let Some(&bad) = d_s_list.iter().find(|&&d| d > model.config().d_s_max) {
        return Err(CliError::Invalid(format!(
            "d_s {bad} exceeds d_s_max {}",
            model.config().d_s_max
        )));
    }
    if head >= model.config().h {
        return Err(CliError::Invalid(format!(
            "head {head} out of range for {} heads",
            model.config().h
        )));
    }

    struct Row {
        d_s: usize,
        used: usize,
        mean_rank: f64,
        mean_nullity: f64,
        shortfall: bool,
    }

    let rows: Vec<Result<Row, CliError>> = d_s_list
        .par_iter()
        .map(|&d_s| {
            let (seqs, shortfall) = input_sequences(
                &model,
                ds.as_ref(),
                d_s,
                n_samples,
                init::derive_seed(cfg.seed, 0xA000 + d_s as u64),
            );
            let mut rank_sum = 0usize;
            let mut nullity_sum = 0usize;
            for seq in &seqs {
                let t = model.head_t(head, seq)?;
                let report = numerical_rank(&t, RANK_EPS)?;
                rank_sum += report.numerical_rank;
                nullity_sum += report.nullity;
            }
            let used = seqs.len();
            Ok(Row {
                d_s,
                used,
                mean_rank: rank_sum as f64 / used.max(1) as f64,
                mean_nullity: nullity_sum as f64 / used.max(1) as f64,
                shortfall,
            })
        })
        .collect();

    let mut csv = provenance(cfg);
    csv.push_str("d_s,mean_rank,mean_nullity\n");
    for row in rows {
        let row = row?;
        if row.shortfall {
            writeln!(
                csv,
                "# warning: d_s={}: only {} of {} requested samples qualified",
                row.d_s, row.used, n_samples
            )
            .expect("string write");
        }
        writeln!(csv, "{},{},{}", row.d_s, row.mean_rank, row.mean_nullity)
            .expect("string write");
    }

    let path = cfg.out_dir.join("rank_sweep.csv");
    write_text(&path, &csv)?;
    Ok(path)
}

pub struct AtildeSweepOutput {
    pub csv_path: PathBuf,
    pub analysis_json_path: PathBuf,
    pub analysis_csv_path: PathBuf,
}

/// Softmax-case construction sweep over `d_s_from..=d_s_to`: per d_s,
/// builds `n_atilde` alternative attention matrices from the first
/// head's (A, T), reconstructs logits with the minimal-rank shift, and
/// records the mean reconstructed rank and the phase-1 pass rate.
///
/// Writes `atilde_sweep.csv` (`d_s,mean_rank_A_l,d_k,p4_pass_rate`;
/// lengths with a trivial null space get an `identifiable` marker row),
/// plus the full `analysis.json` and the flat `analysis_flat.csv`.
pub fn cmd_atilde_sweep(
    cfg: &RunConfig,
    d_s_from: usize,
    d_s_to: usize,
    n_atilde: usize,
    source: &WeightsSource,
) -> Result<AtildeSweepOutput, CliError> {
    if d_s_from == 0 || d_s_from > d_s_to {
        return Err(CliError::Invalid(format!(
            "bad d_s range {d_s_from}..={d_s_to}"
        )));
    }
    let (model, ds) = prepare(cfg, source)?;
    if d_s_to > model.config().d_s_max {
        return Err(CliError::Invalid(format!(
            "d_s {d_s_to} exceeds d_s_max {}",
            model.config().d_s_max
        )));
    }
    let d_k = model.config().d_k;

    struct PerDs {
        row: AnalysisRow,
        samples: Vec<SampleRecord>,
        identifiable: bool,
        p4_pass_rate: f64,
    }

    let per_ds: Vec<Result<PerDs, CliError>> = (d_s_from..=d_s_to)
        .collect::<Vec<usize>>()
        .par_iter()
        .map(|&d_s| {
            let (seqs, _) = input_sequences(
                &model,
                ds.as_ref(),
                d_s,
                1,
                init::derive_seed(cfg.seed, 0xB000 + d_s as u64),
            );
            let seq = seqs.first().ok_or_else(|| {
                CliError::Invalid(format!("no input sequence of length {d_s} available"))
            })?;
            let w = model.embed_tokens(seq)?;
            let cap = model.head_forward(0, &w)?;

            let rank_t = numerical_rank(&cap.t, RANK_EPS)?;
            let t1 = cap.t.augment_ones();
            let rank_t1 = numerical_rank(&t1, RANK_EPS)?;

            let results = construct_atilde_softmax(
                &cap.a,
                &cap.t,
                d_k,
                n_atilde,
                init::derive_seed(cfg.seed, 0xC000 + d_s as u64),
            )?;

            let identifiable = results.is_empty();
            let (mean_rank_a_l, p4_pass_rate) = if identifiable {
                (None, 0.0)
            } else {
                let rank_sum: usize = results.iter().map(|r| r.reconstructed_rank).sum();
                let p4_passes = results.iter().filter(|r| r.report.p4_rank.pass).count();
                (
                    Some(rank_sum as f64 / results.len() as f64),
                    p4_passes as f64 / results.len() as f64,
                )
            };

            let samples = results
                .iter()
                .enumerate()
                .map(|(i, r)| SampleRecord {
                    d_s,
                    sample: i,
                    p1: r.report.p1_nonneg.pass,
                    p2: r.report.p2_nullspace.pass,
                    p3: r.report.p3_rowsum.pass,
                    p4: r.report.p4_rank.pass,
                    nontrivial: r.nontrivial,
                    reconstructed_rank: r.reconstructed_rank,
                })
                .collect();

            Ok(PerDs {
                row: AnalysisRow {
                    d_s,
                    measured_rank_t: rank_t.numerical_rank as f64,
                    nullity_t: rank_t.nullity as f64,
                    nullity_t1: rank_t1.nullity as f64,
                    mean_rank_a_l,
                    d_k,
                },
                samples,
                identifiable,
                p4_pass_rate,
            })
        })
        .collect();

    let mut csv = provenance(cfg);
    csv.push_str("d_s,mean_rank_A_l,d_k,p4_pass_rate\n");
    let mut rows = Vec::new();
    let mut samples = Vec::new();
    for item in per_ds {
        let item = item?;
        if item.identifiable {
            writeln!(csv, "{},identifiable,{},identifiable", item.row.d_s, d_k)
                .expect("string write");
        } else {
            writeln!(
                csv,
                "{},{},{},{}",
                item.row.d_s,
                item.row.mean_rank_a_l.unwrap_or(0.0),
                d_k,
                item.p4_pass_rate
            )
            .expect("string write");
        }
        rows.push(item.row);
        samples.extend(item.samples);
    }

    let report = AnalysisReport {
        config: serde_json::to_value(cfg)?,
        seed: cfg.seed,
        rows,
        samples,
    };

    let csv_path = cfg.out_dir.join("atilde_sweep.csv");
    write_text(&csv_path, &csv)?;
    let analysis_json_path = cfg.out_dir.join("analysis.json");
    write_text(&analysis_json_path, &report.to_json())?;
    let analysis_csv_path = cfg.out_dir.join("analysis_flat.csv");
    write_text(&analysis_csv_path, &report.to_flat_csv())?;

    Ok(AtildeSweepOutput {
        csv_path,
        analysis_json_path,
        analysis_csv_path,
    })
}

/// Runs the constraint checker on matrices dumped as CSV and returns the
/// report as a JSON string.
pub fn cmd_check(
    a_path: &Path,
    atilde_path: &Path,
    t_path: &Path,
    d_k: usize,
) -> Result<String, CliError> {
    let read = |p: &Path| -> Result<Matrix, CliError> {
        let file = std::fs::File::open(p)?;
        Ok(Matrix::read_csv(BufReader::new(file))?)
    };
    let a = read(a_path)?;
    let atilde = read(atilde_path)?;
    let t = read(t_path)?;
    let report = check_constraints(&a, &atilde, &t, d_k)?;
    let doc = json!({
        "build": BUILD_ID,
        "d_k": d_k,
        "inputs": {
            "a": a_path.display().to_string(),
            "atilde": atilde_path.display().to_string(),
            "t": t_path.display().to_string(),
        },
        "report": report,
    });
    Ok(serde_json::to_string_pretty(&doc)?)
}

/// Forwards one sequence and dumps every per-head capture matrix under
/// `<out_dir>/captures/`.
pub fn cmd_dump_captures(
    cfg: &RunConfig,
    tokens: Option<Vec<usize>>,
    d_s: Option<usize>,
    source: &WeightsSource,
) -> Result<PathBuf, CliError> {
    let (model, ds) = prepare(cfg, source)?;
    let seq: Vec<usize> = match (tokens, d_s) {
        (Some(t), _) if !t.is_empty() => t,
        (_, Some(d_s)) => {
            let (seqs, _) = input_sequences(
                &model,
                ds.as_ref(),
                d_s,
                1,
                init::derive_seed(cfg.seed, 0xD000 + d_s as u64),
            );
            seqs.into_iter().next().ok_or_else(|| {
                CliError::Invalid(format!("no input sequence of length {d_s} available"))
            })?
        }
        _ => {
            return Err(CliError::Invalid(
                "pass --tokens i,j,k or --d-s <len>".into(),
            ))
        }
    };

    let (_, captures) = model.forward_capture(&seq)?;
    let dir = cfg.out_dir.join("captures");
    std::fs::create_dir_all(&dir)?;
    EncoderModel::dump_captures(&dir, &captures)?;

    let tokens_line = seq
        .iter()
        .map(usize::to_string)
        .collect::<Vec<_>>()
        .join(",");
    write_text(&dir.join("tokens.csv"), &format!("{tokens_line}\n"))?;
    Ok(dir)
}
