//! Seeded training loop for the encoder classifier.
//!
//! Batches are processed as a fixed number of contiguous chunks; each
//! chunk accumulates example gradients sequentially on its own thread
//! and the chunk buffers are merged in chunk order, so the loss
//! trajectory is bit-identical no matter how the threads are scheduled.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{make_batches, Split, TextDataset};
use crate::encoder::{argmax, EncoderError, EncoderModel};
use crate::net::{init, AdamParams, GradBuffer, NetError, Tape};

/// Chunk count for the deterministic batch reduction. Fixed rather than
/// derived from the thread pool so results do not depend on core count.
const GRAD_CHUNKS: usize = 4;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Data(#[from] crate::data::DataError),
    #[error("model expects {model} classes but dataset has {dataset}")]
    ClassMismatch { model: usize, dataset: usize },
    #[error("model vocab_size {model} is smaller than dataset vocabulary {dataset}")]
    VocabTooSmall { model: usize, dataset: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainOptions {
    pub adam: AdamParams,
    pub epochs: usize,
    pub batch_size: usize,
    /// Sequences are clipped to this many leading tokens.
    pub clip_len: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub valid_accuracy: Option<f64>,
    pub test_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochMetrics>,
    /// Epoch with the best validation accuracy (earliest on ties).
    pub best_epoch: usize,
    /// Test accuracy measured at the best-validation epoch.
    pub test_accuracy: Option<f64>,
    pub majority_baseline_train: f64,
    pub majority_baseline_test: f64,
}

/// Trains in place. On return the model holds the parameters of the
/// best-validation epoch (the final ones if no validation examples
/// exist), and the report carries the per-epoch trajectory.
pub fn train(
    model: &mut EncoderModel,
    ds: &TextDataset,
    opts: &TrainOptions,
) -> Result<TrainReport, TrainError> {
    if model.config().n_classes != ds.n_classes {
        return Err(TrainError::ClassMismatch {
            model: model.config().n_classes,
            dataset: ds.n_classes,
        });
    }
    if model.config().vocab_size < ds.vocab.len() {
        return Err(TrainError::VocabTooSmall {
            model: model.config().vocab_size,
            dataset: ds.vocab.len(),
        });
    }

    let mut epochs = Vec::with_capacity(opts.epochs);
    let mut best: Option<(f64, usize)> = None;
    let mut best_store = model.store.clone();

    for epoch in 0..opts.epochs {
        let batches = make_batches(
            ds,
            Split::Train,
            opts.batch_size,
            opts.clip_len,
            init::derive_seed(opts.seed, 0x5000 + epoch as u64),
        )?;

        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        let mut seen = 0usize;
        for batch in &batches {
            let (grads, batch_loss, batch_correct) =
                batch_gradients(model, &batch.sequences, &batch.labels)?;
            let scale = 1.0 / batch.labels.len() as f64;
            model.store.accumulate_gradients(&grads, scale);
            model.store.adam_step(&opts.adam);
            loss_sum += batch_loss;
            correct += batch_correct;
            seen += batch.labels.len();
        }

        let valid_accuracy = evaluate(model, ds, Split::Valid, opts.clip_len)?;
        let test_accuracy = evaluate(model, ds, Split::Test, opts.clip_len)?;

        let improved = match (valid_accuracy, best) {
            (Some(v), None) => Some(v),
            (Some(v), Some((b, _))) if v > b => Some(v),
            _ => None,
        };
        if let Some(v) = improved {
            best = Some((v, epoch));
            best_store = model.store.clone();
        }

        epochs.push(EpochMetrics {
            epoch,
            train_loss: loss_sum / seen.max(1) as f64,
            train_accuracy: correct as f64 / seen.max(1) as f64,
            valid_accuracy,
            test_accuracy,
        });
    }

    let best_epoch = best.map(|(_, e)| e).unwrap_or(opts.epochs.saturating_sub(1));
    if best.is_some() {
        model.store = best_store;
    }
    let test_accuracy = epochs.get(best_epoch).and_then(|m| m.test_accuracy);

    Ok(TrainReport {
        epochs,
        best_epoch,
        test_accuracy,
        majority_baseline_train: ds.majority_rate(Split::Train),
        majority_baseline_test: ds.majority_rate(Split::Test),
    })
}

/// Summed (not averaged) gradients, loss and correct-prediction count
/// over one batch. Chunk layout and merge order are fixed, so the result
/// is independent of thread scheduling.
fn batch_gradients(
    model: &EncoderModel,
    sequences: &[Vec<usize>],
    labels: &[usize],
) -> Result<(GradBuffer, f64, usize), TrainError> {
    let n = sequences.len();
    let chunk_size = n.div_ceil(GRAD_CHUNKS).max(1);
    let jobs: Vec<(usize, usize)> = (0..n)
        .step_by(chunk_size)
        .map(|start| (start, (start + chunk_size).min(n)))
        .collect();

    let partials: Vec<Result<(GradBuffer, f64, usize), TrainError>> = jobs
        .par_iter()
        .map(|&(start, end)| {
            let mut buf = GradBuffer::zeros_like(&model.store);
            let mut loss_sum = 0.0;
            let mut correct = 0usize;
            for i in start..end {
                let mut tape = Tape::new(&model.store);
                let logits = model.tape_logits(&mut tape, &sequences[i])?;
                let loss = tape.cross_entropy(logits, &labels[i..=i])?;
                tape.backward(loss, &mut buf)?;
                loss_sum += tape.scalar(loss);
                if argmax(tape.value(logits).row(0)) == labels[i] {
                    correct += 1;
                }
            }
            Ok((buf, loss_sum, correct))
        })
        .collect();

    let mut total = GradBuffer::zeros_like(&model.store);
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    for partial in partials {
        let (buf, l, c) = partial?;
        total.merge(&buf);
        loss_sum += l;
        correct += c;
    }
    Ok((total, loss_sum, correct))
}

/// Accuracy over one split (None when the split is empty). Sequences are
/// clipped like training inputs.
pub fn evaluate(
    model: &EncoderModel,
    ds: &TextDataset,
    split: Split,
    clip_len: usize,
) -> Result<Option<f64>, TrainError> {
    let indices = ds.split_indices(split);
    if indices.is_empty() {
        return Ok(None);
    }
    let correct: Result<usize, EncoderError> = indices
        .par_iter()
        .map(|&i| {
            let e = &ds.examples[i];
            let clipped = &e.tokens[..e.tokens.len().min(clip_len)];
            Ok((model.predict(clipped)? == e.label) as usize)
        })
        .sum();
    Ok(Some(correct? as f64 / indices.len() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Example, Vocab};
    use crate::encoder::{EncoderConfig, Variant};

    /// Synthetic two-class corpus: class 0 draws from one token pool,
    /// class 1 from another, with shared filler tokens.
    pub(crate) fn synth_dataset(n: usize, seed: u64, test_fraction: f64) -> TextDataset {
        use rand::Rng;
        let mut rng = init::seeded_rng(seed);
        let words: Vec<String> = (0..30).map(|i| format!("w{i}")).collect();
        let mut rows: Vec<(Vec<String>, usize)> = Vec::with_capacity(n);
        for i in 0..n {
            let label = i % 2;
            let len = rng.gen_range(4..9);
            let mut tokens = Vec::with_capacity(len);
            for _ in 0..len {
                let pool = if rng.gen_bool(0.7) {
                    // Class-specific pool.
                    if label == 0 { 0..10 } else { 10..20 }
                } else {
                    20..30
                };
                let ix = rng.gen_range(pool);
                tokens.push(words[ix].clone());
            }
            rows.push((tokens, label));
        }
        let vocab = Vocab::build(rows.iter().map(|(t, _)| t.as_slice()), 1);
        let n_test = (n as f64 * test_fraction).round() as usize;
        let examples = rows
            .iter()
            .enumerate()
            .map(|(i, (tokens, label))| Example {
                tokens: vocab.encode(tokens),
                label: *label,
                split: if i < n_test {
                    Split::Test
                } else if i < n_test + n / 5 {
                    Split::Valid
                } else {
                    Split::Train
                },
            })
            .collect();
        TextDataset {
            examples,
            vocab,
            n_classes: 2,
            label_names: vec!["zero".into(), "one".into()],
        }
    }

    fn tiny_config(ds: &TextDataset) -> EncoderConfig {
        EncoderConfig {
            d_e: 16,
            d_k: 4,
            d_v: 8,
            h: 2,
            d_s_max: 16,
            variant: Variant::Con,
            ffn_hidden: 16,
            n_classes: ds.n_classes,
            vocab_size: ds.vocab.len(),
        }
    }

    #[test]
    fn overfits_a_tiny_subset() {
        let ds = synth_dataset(32, 4, 0.0);
        let mut model = EncoderModel::new(tiny_config(&ds), 5).unwrap();
        let opts = TrainOptions {
            adam: AdamParams::default(),
            epochs: 60,
            batch_size: 8,
            clip_len: 16,
            seed: 6,
        };
        let report = train(&mut model, &ds, &opts).unwrap();
        let final_acc = report.epochs.last().unwrap().train_accuracy;
        assert!(
            final_acc > 0.99,
            "expected to overfit, got train accuracy {final_acc}"
        );
        assert!(final_acc > ds.majority_rate(Split::Train));
    }

    #[test]
    fn loss_trajectory_is_bitwise_deterministic() {
        let run = || {
            let ds = synth_dataset(24, 9, 0.25);
            let mut model = EncoderModel::new(tiny_config(&ds), 11).unwrap();
            let opts = TrainOptions {
                adam: AdamParams::default(),
                epochs: 3,
                batch_size: 7,
                clip_len: 16,
                seed: 12,
            };
            let report = train(&mut model, &ds, &opts).unwrap();
            report
                .epochs
                .iter()
                .map(|m| m.train_loss)
                .collect::<Vec<f64>>()
        };
        let a = run();
        let b = run();
        assert_eq!(a, b, "loss trajectories diverged");
    }

    #[test]
    fn rejects_mismatched_class_count() {
        let ds = synth_dataset(10, 1, 0.0);
        let mut cfg = tiny_config(&ds);
        cfg.n_classes = 5;
        let mut model = EncoderModel::new(cfg, 1).unwrap();
        let opts = TrainOptions {
            adam: AdamParams::default(),
            epochs: 1,
            batch_size: 4,
            clip_len: 16,
            seed: 0,
        };
        assert!(matches!(
            train(&mut model, &ds, &opts),
            Err(TrainError::ClassMismatch { .. })
        ));
    }

    #[test]
    fn best_epoch_tracks_validation() {
        let ds = synth_dataset(40, 2, 0.2);
        let mut model = EncoderModel::new(tiny_config(&ds), 3).unwrap();
        let opts = TrainOptions {
            adam: AdamParams::default(),
            epochs: 4,
            batch_size: 8,
            clip_len: 16,
            seed: 4,
        };
        let report = train(&mut model, &ds, &opts).unwrap();
        let best_valid = report.epochs[report.best_epoch].valid_accuracy.unwrap();
        for m in &report.epochs {
            assert!(m.valid_accuracy.unwrap() <= best_valid + 1e-12);
        }
        assert_eq!(
            report.test_accuracy,
            report.epochs[report.best_epoch].test_accuracy
        );
    }
}
