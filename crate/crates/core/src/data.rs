//! Text-classification data pipeline: normalization, tokenization,
//! vocabulary, label encoding, the 70/30 train/validation split, length
//! clipping and batching.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::net::init;

/// Reserved vocabulary slots.
pub const PAD_INDEX: usize = 0;
pub const UNK_INDEX: usize = 1;
const RESERVED: [&str; 2] = ["<pad>", "<unk>"];

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("column {0:?} not found in header")]
    MissingColumn(String),
    #[error("test label {0:?} never appeared in the training file")]
    UnknownLabel(String),
    #[error("corpus is empty after tokenization")]
    EmptyCorpus,
    #[error("batch_size must be >= 1")]
    BadBatchSize,
    #[error("manifest: {0}")]
    Manifest(String),
}

/// Lowercases and strips special characters: anything outside [a-z0-9]
/// becomes whitespace, except an apostrophe sitting between two
/// alphanumerics, which stays attached to its word. Tokens are the
/// whitespace-separated remains.
pub fn normalize_and_tokenize(text: &str) -> Vec<String> {
    let lowered: Vec<char> = text.chars().flat_map(char::to_lowercase).collect();
    let keep_plain = |c: char| c.is_ascii_lowercase() || c.is_ascii_digit();
    let mut cleaned = String::with_capacity(lowered.len());
    for (i, &c) in lowered.iter().enumerate() {
        let intra_word_apostrophe = c == '\''
            && i > 0
            && keep_plain(lowered[i - 1])
            && lowered.get(i + 1).copied().is_some_and(keep_plain);
        cleaned.push(if keep_plain(c) || intra_word_apostrophe {
            c
        } else {
            ' '
        });
    }
    cleaned.split_whitespace().map(str::to_owned).collect()
}

/// Token → index map with reserved PAD (0) and UNK (1) slots. Indices
/// are assigned frequency-descending with lexicographic tiebreak, which
/// makes two builds over the same corpus identical.
#[derive(Debug, Clone)]
pub struct Vocab {
    token_to_idx: HashMap<String, usize>,
    idx_to_token: Vec<String>,
}

impl Vocab {
    pub fn build<'a, I>(corpus: I, min_freq: usize) -> Vocab
    where
        I: IntoIterator<Item = &'a [String]>,
    {
        let mut freq: HashMap<&str, usize> = HashMap::new();
        for tokens in corpus {
            for t in tokens {
                *freq.entry(t.as_str()).or_insert(0) += 1;
            }
        }
        let mut entries: Vec<(&str, usize)> = freq
            .into_iter()
            .filter(|&(_, n)| n >= min_freq.max(1))
            .collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

        let mut idx_to_token: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        idx_to_token.extend(entries.iter().map(|(t, _)| t.to_string()));
        let token_to_idx = idx_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocab {
            token_to_idx,
            idx_to_token,
        }
    }

    pub fn len(&self) -> usize {
        self.idx_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.idx_to_token.len() <= RESERVED.len()
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.token_to_idx.get(token).copied()
    }

    pub fn token(&self, index: usize) -> &str {
        &self.idx_to_token[index]
    }

    /// Unknown tokens map to [`UNK_INDEX`].
    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens
            .iter()
            .map(|t| self.index_of(t).unwrap_or(UNK_INDEX))
            .collect()
    }

    pub fn decode(&self, indices: &[usize]) -> Vec<&str> {
        indices.iter().map(|&i| self.token(i)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

#[derive(Debug, Clone)]
pub struct Example {
    pub tokens: Vec<usize>,
    pub label: usize,
    pub split: Split,
}

#[derive(Debug, Clone)]
pub struct TextDataset {
    pub examples: Vec<Example>,
    pub vocab: Vocab,
    pub n_classes: usize,
    pub label_names: Vec<String>,
}

impl TextDataset {
    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        (0..self.examples.len())
            .filter(|&i| self.examples[i].split == split)
            .collect()
    }

    /// Most frequent class rate within a split — the majority baseline.
    pub fn majority_rate(&self, split: Split) -> f64 {
        let mut counts = vec![0usize; self.n_classes];
        let mut total = 0usize;
        for e in self.examples.iter().filter(|e| e.split == split) {
            counts[e.label] += 1;
            total += 1;
        }
        if total == 0 {
            return 0.0;
        }
        counts.into_iter().max().unwrap_or(0) as f64 / total as f64
    }
}

/// Where and how to read a dataset: CSV/TSV with a header, one label
/// column and one text column. Labels map to class indices in
/// first-seen order over the training file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub train_path: PathBuf,
    #[serde(default)]
    pub test_path: Option<PathBuf>,
    #[serde(default = "default_label_column")]
    pub label_column: String,
    #[serde(default = "default_text_column")]
    pub text_column: String,
    /// Field delimiter; "," or "\t".
    #[serde(default = "default_delimiter")]
    pub delimiter: String,
    /// Fraction of the training file flagged as validation.
    #[serde(default = "default_valid_fraction")]
    pub valid_fraction: f64,
    #[serde(default)]
    pub split_seed: u64,
    #[serde(default = "default_min_freq")]
    pub min_freq: usize,
}

fn default_label_column() -> String {
    "label".into()
}
fn default_text_column() -> String {
    "text".into()
}
fn default_delimiter() -> String {
    ",".into()
}
fn default_valid_fraction() -> f64 {
    0.3
}
fn default_min_freq() -> usize {
    1
}

impl DatasetManifest {
    pub fn from_file(path: &Path) -> Result<Self, DataError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| DataError::Manifest(e.to_string()))
    }

    fn delimiter_byte(&self) -> Result<u8, DataError> {
        let mut bytes = self.delimiter.bytes();
        match (bytes.next(), bytes.next()) {
            (Some(b), None) => Ok(b),
            _ => Err(DataError::Manifest(format!(
                "delimiter must be a single byte, got {:?}",
                self.delimiter
            ))),
        }
    }
}

fn read_rows(
    path: &Path,
    delimiter: u8,
    label_col: &str,
    text_col: &str,
) -> Result<Vec<(String, String)>, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .flexible(false)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    let label_ix = headers
        .iter()
        .position(|h| h == label_col)
        .ok_or_else(|| DataError::MissingColumn(label_col.to_string()))?;
    let text_ix = headers
        .iter()
        .position(|h| h == text_col)
        .ok_or_else(|| DataError::MissingColumn(text_col.to_string()))?;
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record?;
        out.push((
            record.get(label_ix).unwrap_or("").to_string(),
            record.get(text_ix).unwrap_or("").to_string(),
        ));
    }
    Ok(out)
}

/// Loads, tokenizes and splits a dataset. The 70/30 validation split is
/// a pure function of (split_seed, training-file bytes): the file hash
/// is folded into the shuffle seed, so editing the file reshuffles while
/// reloading the same file never does.
pub fn load_dataset(manifest: &DatasetManifest) -> Result<TextDataset, DataError> {
    let delim = manifest.delimiter_byte()?;
    let train_rows = read_rows(
        &manifest.train_path,
        delim,
        &manifest.label_column,
        &manifest.text_column,
    )?;

    let mut label_names: Vec<String> = Vec::new();
    let mut label_ids: HashMap<String, usize> = HashMap::new();
    let mut tokenized: Vec<(Vec<String>, usize)> = Vec::new();
    for (label, text) in &train_rows {
        let id = *label_ids.entry(label.clone()).or_insert_with(|| {
            label_names.push(label.clone());
            label_names.len() - 1
        });
        let tokens = normalize_and_tokenize(text);
        if !tokens.is_empty() {
            tokenized.push((tokens, id));
        }
    }
    if tokenized.is_empty() {
        return Err(DataError::EmptyCorpus);
    }

    let vocab = Vocab::build(tokenized.iter().map(|(t, _)| t.as_slice()), manifest.min_freq);

    // Seeded, file-hash-bound permutation; the first 30% become valid.
    let file_bytes = std::fs::read(&manifest.train_path)?;
    let digest = Sha256::digest(&file_bytes);
    let hash64 = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
    let mut order: Vec<usize> = (0..tokenized.len()).collect();
    let mut rng = init::seeded_rng(manifest.split_seed ^ hash64);
    order.shuffle(&mut rng);
    let n_valid = (tokenized.len() as f64 * manifest.valid_fraction).round() as usize;
    let mut split_of = vec![Split::Train; tokenized.len()];
    for &ix in order.iter().take(n_valid) {
        split_of[ix] = Split::Valid;
    }

    let mut examples: Vec<Example> = tokenized
        .iter()
        .zip(&split_of)
        .map(|((tokens, label), &split)| Example {
            tokens: vocab.encode(tokens),
            label: *label,
            split,
        })
        .collect();

    if let Some(test_path) = &manifest.test_path {
        let test_rows = read_rows(test_path, delim, &manifest.label_column, &manifest.text_column)?;
        for (label, text) in &test_rows {
            let id = *label_ids
                .get(label)
                .ok_or_else(|| DataError::UnknownLabel(label.clone()))?;
            let tokens = normalize_and_tokenize(text);
            if tokens.is_empty() {
                continue;
            }
            examples.push(Example {
                tokens: vocab.encode(&tokens),
                label: id,
                split: Split::Test,
            });
        }
    }

    Ok(TextDataset {
        examples,
        vocab,
        n_classes: label_names.len(),
        label_names,
    })
}

/// One training batch: sequences clipped to `clip_len` and padded with
/// PAD to the longest sequence *in the batch*.
#[derive(Debug, Clone)]
pub struct Batch {
    pub sequences: Vec<Vec<usize>>,
    pub labels: Vec<usize>,
}

/// Seeded batch construction over one split. The permutation is a pure
/// function of the seed, so epochs can derive per-epoch seeds.
pub fn make_batches(
    ds: &TextDataset,
    split: Split,
    batch_size: usize,
    clip_len: usize,
    seed: u64,
) -> Result<Vec<Batch>, DataError> {
    if batch_size == 0 {
        return Err(DataError::BadBatchSize);
    }
    let mut indices = ds.split_indices(split);
    let mut rng = init::seeded_rng(seed);
    indices.shuffle(&mut rng);

    let mut batches = Vec::with_capacity(indices.len().div_ceil(batch_size));
    for chunk in indices.chunks(batch_size) {
        let mut sequences: Vec<Vec<usize>> = chunk
            .iter()
            .map(|&i| {
                let t = &ds.examples[i].tokens;
                t[..t.len().min(clip_len)].to_vec()
            })
            .collect();
        let max_len = sequences.iter().map(Vec::len).max().unwrap_or(0);
        for s in &mut sequences {
            s.resize(max_len, PAD_INDEX);
        }
        let labels = chunk.iter().map(|&i| ds.examples[i].label).collect();
        batches.push(Batch { sequences, labels });
    }
    Ok(batches)
}

/// Seeded sample of `n` examples with at least `d_s` tokens, each
/// clipped to exactly `d_s`. `shortfall` flags that fewer than `n`
/// qualified (all of them are returned).
#[derive(Debug, Clone)]
pub struct LengthSample {
    pub sequences: Vec<Vec<usize>>,
    pub shortfall: bool,
}

pub fn sample_by_length(ds: &TextDataset, d_s: usize, n: usize, seed: u64) -> LengthSample {
    let mut qualifying: Vec<usize> = (0..ds.examples.len())
        .filter(|&i| ds.examples[i].tokens.len() >= d_s)
        .collect();
    let mut rng = init::seeded_rng(seed);
    qualifying.shuffle(&mut rng);
    let shortfall = qualifying.len() < n;
    let take = qualifying.len().min(n);
    let sequences = qualifying[..take]
        .iter()
        .map(|&i| ds.examples[i].tokens[..d_s].to_vec())
        .collect();
    LengthSample {
        sequences,
        shortfall,
    }
}
