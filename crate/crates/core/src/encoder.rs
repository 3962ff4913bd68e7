//! Single Transformer encoder layer with capture hooks.
//!
//! Two head-combination variants are supported: `Con` concatenates the
//! per-head `A·V` blocks and applies one d_e×d_e linear map; `Add` keeps
//! d_v = d_e, sums the per-head `A·V` matrices and applies the same kind
//! of map. Either way each head owns an effective output transform
//! `T = V·D_head` (`D_head` is the head's row block of the combining
//! matrix for `Con`, the whole matrix for `Add`), and the head output is
//! `H = A·T` — the object the identifiability analysis works on.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{LinalgError, Matrix};
use crate::net::{self, init, NetError, NodeId, ParamId, ParamStore, Tape};

pub use crate::data::{PAD_INDEX, UNK_INDEX};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Concatenate head outputs, then one d_e×d_e linear map.
    Con,
    /// d_v = d_e; sum head outputs, then one d_e×d_e linear map.
    Add,
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Variant::Con => write!(f, "con"),
            Variant::Add => write!(f, "add"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub d_e: usize,
    pub d_k: usize,
    pub d_v: usize,
    pub h: usize,
    pub d_s_max: usize,
    pub variant: Variant,
    pub ffn_hidden: usize,
    pub n_classes: usize,
    pub vocab_size: usize,
}

impl EncoderConfig {
    /// Checks the per-variant dimensional invariants: `Con` ties
    /// d_v = d_e/h (d_k stays free); `Add` requires d_v = d_e and
    /// d_s_max ≤ d_e for the identifiable regime.
    pub fn validate(&self) -> Result<(), EncoderError> {
        let positive = [
            ("d_e", self.d_e),
            ("d_k", self.d_k),
            ("d_v", self.d_v),
            ("h", self.h),
            ("d_s_max", self.d_s_max),
            ("ffn_hidden", self.ffn_hidden),
            ("n_classes", self.n_classes),
            ("vocab_size", self.vocab_size),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(EncoderError::InvalidConfig(format!("{name} must be > 0")));
            }
        }
        if self.vocab_size <= UNK_INDEX {
            return Err(EncoderError::InvalidConfig(
                "vocab_size must cover the reserved PAD/UNK indices".into(),
            ));
        }
        match self.variant {
            Variant::Con => {
                if !self.d_e.is_multiple_of(self.h) {
                    return Err(EncoderError::InvalidConfig(format!(
                        "con variant needs h ({}) to divide d_e ({})",
                        self.h, self.d_e
                    )));
                }
                if self.d_v != self.d_e / self.h {
                    return Err(EncoderError::InvalidConfig(format!(
                        "con variant needs d_v = d_e/h = {}, got {}",
                        self.d_e / self.h,
                        self.d_v
                    )));
                }
            }
            Variant::Add => {
                if self.d_v != self.d_e {
                    return Err(EncoderError::InvalidConfig(format!(
                        "add variant needs d_v = d_e = {}, got {}",
                        self.d_e, self.d_v
                    )));
                }
                if self.d_s_max > self.d_e {
                    return Err(EncoderError::InvalidConfig(format!(
                        "add variant needs d_s_max ({}) <= d_e ({})",
                        self.d_s_max, self.d_e
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("empty token sequence")]
    EmptySequence,
    #[error("sequence length {len} exceeds d_s_max {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Shape(#[from] LinalgError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Per-head snapshot of everything the identifiability analysis needs.
#[derive(Debug, Clone)]
pub struct HeadCapture {
    pub q: Matrix,
    pub k: Matrix,
    pub v: Matrix,
    /// Pre-softmax attention logits `Q·Kᵀ/√d_q`.
    pub a_logits: Matrix,
    /// Rowwise softmax of the logits.
    pub a: Matrix,
    /// Effective output transform `V·D_head` (d_s×d_e).
    pub t: Matrix,
    /// Head output `A·T` (d_s×d_e).
    pub h: Matrix,
}

struct HeadIds {
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    bk: ParamId,
    wv: ParamId,
    bv: ParamId,
}

struct Ids {
    tok: ParamId,
    pos: ParamId,
    heads: Vec<HeadIds>,
    combine_w: ParamId,
    combine_b: ParamId,
    norm1_gain: ParamId,
    norm1_bias: ParamId,
    ffn1_w: ParamId,
    ffn1_b: ParamId,
    ffn2_w: ParamId,
    ffn2_b: ParamId,
    norm2_gain: ParamId,
    norm2_bias: ParamId,
    cls_w: ParamId,
    cls_b: ParamId,
}

/// One encoder layer plus embedding tables and the classification head.
pub struct EncoderModel {
    config: EncoderConfig,
    pub store: ParamStore,
    ids: Ids,
}

impl EncoderModel {
    /// Builds a seeded model. Token and positional embeddings are drawn
    /// from N(0,1); every linear layer uses uniform fan-in init. The
    /// parameter creation order fixes the random stream, so identical
    /// (config, seed) pairs give identical weights.
    pub fn new(config: EncoderConfig, seed: u64) -> Result<Self, EncoderError> {
        config.validate()?;
        let mut rng = init::seeded_rng(seed);
        let mut store = ParamStore::new();
        let d_e = config.d_e;

        let tok = store.add(
            "tok_embed",
            init::normal_matrix(&mut rng, config.vocab_size, d_e),
        );
        let pos = store.add(
            "pos_embed",
            init::normal_matrix(&mut rng, config.d_s_max, d_e),
        );

        let mut heads = Vec::with_capacity(config.h);
        for i in 0..config.h {
            let wq = store.add(
                format!("head{i}.wq"),
                init::uniform_fan_in(&mut rng, d_e, d_e, config.d_k),
            );
            let bq = store.add(
                format!("head{i}.bq"),
                init::uniform_fan_in(&mut rng, d_e, 1, config.d_k),
            );
            let wk = store.add(
                format!("head{i}.wk"),
                init::uniform_fan_in(&mut rng, d_e, d_e, config.d_k),
            );
            let bk = store.add(
                format!("head{i}.bk"),
                init::uniform_fan_in(&mut rng, d_e, 1, config.d_k),
            );
            let wv = store.add(
                format!("head{i}.wv"),
                init::uniform_fan_in(&mut rng, d_e, d_e, config.d_v),
            );
            let bv = store.add(
                format!("head{i}.bv"),
                init::uniform_fan_in(&mut rng, d_e, 1, config.d_v),
            );
            heads.push(HeadIds {
                wq,
                bq,
                wk,
                bk,
                wv,
                bv,
            });
        }

        let combine_w = store.add("combine.w", init::uniform_fan_in(&mut rng, d_e, d_e, d_e));
        let combine_b = store.add("combine.b", init::uniform_fan_in(&mut rng, d_e, 1, d_e));
        let norm1_gain = store.add("norm1.gain", Matrix::new(1, d_e, vec![1.0; d_e]).unwrap());
        let norm1_bias = store.add("norm1.bias", Matrix::zeros(1, d_e));
        let ffn1_w = store.add(
            "ffn1.w",
            init::uniform_fan_in(&mut rng, d_e, d_e, config.ffn_hidden),
        );
        let ffn1_b = store.add(
            "ffn1.b",
            init::uniform_fan_in(&mut rng, d_e, 1, config.ffn_hidden),
        );
        let ffn2_w = store.add(
            "ffn2.w",
            init::uniform_fan_in(&mut rng, config.ffn_hidden, config.ffn_hidden, d_e),
        );
        let ffn2_b = store.add(
            "ffn2.b",
            init::uniform_fan_in(&mut rng, config.ffn_hidden, 1, d_e),
        );
        let norm2_gain = store.add("norm2.gain", Matrix::new(1, d_e, vec![1.0; d_e]).unwrap());
        let norm2_bias = store.add("norm2.bias", Matrix::zeros(1, d_e));
        let cls_w = store.add(
            "cls.w",
            init::uniform_fan_in(&mut rng, d_e, d_e, config.n_classes),
        );
        let cls_b = store.add(
            "cls.b",
            init::uniform_fan_in(&mut rng, d_e, 1, config.n_classes),
        );

        Ok(Self {
            config,
            store,
            ids: Ids {
                tok,
                pos,
                heads,
                combine_w,
                combine_b,
                norm1_gain,
                norm1_bias,
                ffn1_w,
                ffn1_b,
                ffn2_w,
                ffn2_b,
                norm2_gain,
                norm2_bias,
                cls_w,
                cls_b,
            },
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    fn value(&self, id: ParamId) -> &Matrix {
        &self.store.get(id).value
    }

    /// Embeds a token sequence and adds positional vectors. Indices at or
    /// beyond the vocabulary map to the reserved UNK index.
    pub fn embed_tokens(&self, tokens: &[usize]) -> Result<Matrix, EncoderError> {
        if tokens.is_empty() {
            return Err(EncoderError::EmptySequence);
        }
        if tokens.len() > self.config.d_s_max {
            return Err(EncoderError::SequenceTooLong {
                len: tokens.len(),
                max: self.config.d_s_max,
            });
        }
        let tok = self.value(self.ids.tok);
        let pos = self.value(self.ids.pos);
        let mut out = Matrix::zeros(tokens.len(), self.config.d_e);
        for (r, &raw) in tokens.iter().enumerate() {
            let ix = if raw < self.config.vocab_size {
                raw
            } else {
                UNK_INDEX
            };
            for (o, (t, p)) in out
                .row_mut(r)
                .iter_mut()
                .zip(tok.row(ix).iter().zip(pos.row(r)))
            {
                *o = t + p;
            }
        }
        Ok(out)
    }

    /// The head's effective transform `D_head`: its row block of the
    /// combining matrix for `Con`, the entire matrix for `Add`.
    pub fn head_transform(&self, head: usize) -> Matrix {
        let w = self.value(self.ids.combine_w);
        match self.config.variant {
            Variant::Con => w.row_block(head * self.config.d_v, (head + 1) * self.config.d_v),
            Variant::Add => w.clone(),
        }
    }

    /// Full per-head forward from embedded tokens, capturing every
    /// identifiability-relevant matrix.
    pub fn head_forward(&self, head: usize, w: &Matrix) -> Result<HeadCapture, EncoderError> {
        if w.rows() > self.config.d_s_max {
            return Err(EncoderError::SequenceTooLong {
                len: w.rows(),
                max: self.config.d_s_max,
            });
        }
        let ids = &self.ids.heads[head];
        let q = linear(w, self.value(ids.wq), self.value(ids.bq))?;
        let k = linear(w, self.value(ids.wk), self.value(ids.bk))?;
        let v = linear(w, self.value(ids.wv), self.value(ids.bv))?;
        let (a_logits, a) = attention_weights(&q, &k)?;
        let t = v.matmul(&self.head_transform(head))?;
        let h = a.matmul(&t)?;
        Ok(HeadCapture {
            q,
            k,
            v,
            a_logits,
            a,
            t,
            h,
        })
    }

    /// Only the head's `T = V·D_head` — the cheap path for rank sweeps,
    /// skipping queries, keys and attention entirely.
    pub fn head_t(&self, head: usize, tokens: &[usize]) -> Result<Matrix, EncoderError> {
        let w = self.embed_tokens(tokens)?;
        let ids = &self.ids.heads[head];
        let v = linear(&w, self.value(ids.wv), self.value(ids.bv))?;
        Ok(v.matmul(&self.head_transform(head))?)
    }

    /// Multi-head combination from captures: `Con` concatenates the
    /// per-head `A·V` blocks then applies the d_e×d_e map; `Add` sums
    /// them first. The map's bias is added once.
    pub fn combine_heads(&self, captures: &[HeadCapture]) -> Result<Matrix, EncoderError> {
        let avs: Vec<Matrix> = captures
            .iter()
            .map(|c| c.a.matmul(&c.v))
            .collect::<Result<_, _>>()?;
        let pre = stack_or_sum(&avs, self.config.variant)?;
        let out = pre.matmul(self.value(self.ids.combine_w))?;
        Ok(add_row_broadcast(
            &out,
            self.value(self.ids.combine_b).row(0),
        ))
    }

    /// The other factorization of the same map: transform each head's
    /// `A·V` by its own `D_head` slice, then sum (bias added once).
    pub fn combine_heads_linear_then_sum(
        &self,
        captures: &[HeadCapture],
    ) -> Result<Matrix, EncoderError> {
        let mut acc: Option<Matrix> = None;
        for (i, c) in captures.iter().enumerate() {
            let av = c.a.matmul(&c.v)?;
            let part = av.matmul(&self.head_transform(i))?;
            acc = Some(match acc {
                None => part,
                Some(prev) => prev.add(&part)?,
            });
        }
        let acc = acc.ok_or(EncoderError::EmptySequence)?;
        Ok(add_row_broadcast(
            &acc,
            self.value(self.ids.combine_b).row(0),
        ))
    }

    /// Feed-forward sub-layer, following the layer formulas literally:
    /// `y1 = Linear1(Norm(t + head_out))`, `y2 = Norm(t + ReLU(Linear2(y1)))`.
    pub fn ffn_sublayer(&self, tokens: &Matrix, head_out: &Matrix) -> Result<Matrix, EncoderError> {
        let residual = tokens.add(head_out)?;
        let normed = net::layer_norm(
            &residual,
            self.value(self.ids.norm1_gain).row(0),
            self.value(self.ids.norm1_bias).row(0),
        )?;
        let y1 = linear(
            &normed,
            self.value(self.ids.ffn1_w),
            self.value(self.ids.ffn1_b),
        )?;
        let inner = linear(&y1, self.value(self.ids.ffn2_w), self.value(self.ids.ffn2_b))?;
        let activated = net::relu(&inner);
        let residual2 = tokens.add(&activated)?;
        Ok(net::layer_norm(
            &residual2,
            self.value(self.ids.norm2_gain).row(0),
            self.value(self.ids.norm2_bias).row(0),
        )?)
    }

    /// Encoder-layer forward returning the token outputs together with
    /// all per-head captures.
    pub fn forward_capture(
        &self,
        tokens: &[usize],
    ) -> Result<(Matrix, Vec<HeadCapture>), EncoderError> {
        let w = self.embed_tokens(tokens)?;
        let captures: Vec<HeadCapture> = (0..self.config.h)
            .map(|i| self.head_forward(i, &w))
            .collect::<Result<_, _>>()?;
        let combined = self.combine_heads(&captures)?;
        let out = self.ffn_sublayer(&w, &combined)?;
        Ok((out, captures))
    }

    /// Class logits for one token sequence: encoder output of the first
    /// token through the classification layer.
    pub fn classify(&self, tokens: &[usize]) -> Result<Vec<f64>, EncoderError> {
        let w = self.embed_tokens(tokens)?;
        let mut avs = Vec::with_capacity(self.config.h);
        for ids in &self.ids.heads {
            let q = linear(&w, self.value(ids.wq), self.value(ids.bq))?;
            let k = linear(&w, self.value(ids.wk), self.value(ids.bk))?;
            let v = linear(&w, self.value(ids.wv), self.value(ids.bv))?;
            let (_, a) = attention_weights(&q, &k)?;
            avs.push(a.matmul(&v)?);
        }
        let pre = stack_or_sum(&avs, self.config.variant)?;
        let combined = add_row_broadcast(
            &pre.matmul(self.value(self.ids.combine_w))?,
            self.value(self.ids.combine_b).row(0),
        );
        let out = self.ffn_sublayer(&w, &combined)?;
        let first = Matrix::new(1, out.cols(), out.row(0).to_vec())?;
        let logits = linear(&first, self.value(self.ids.cls_w), self.value(self.ids.cls_b))?;
        Ok(logits.row(0).to_vec())
    }

    pub fn predict(&self, tokens: &[usize]) -> Result<usize, EncoderError> {
        Ok(argmax(&self.classify(tokens)?))
    }

    /// Tape forward mirroring [`EncoderModel::classify`] op for op, so
    /// training sees bit-identical values to the pure path.
    pub fn tape_logits(&self, tape: &mut Tape<'_>, tokens: &[usize]) -> Result<NodeId, EncoderError> {
        if tokens.is_empty() {
            return Err(EncoderError::EmptySequence);
        }
        if tokens.len() > self.config.d_s_max {
            return Err(EncoderError::SequenceTooLong {
                len: tokens.len(),
                max: self.config.d_s_max,
            });
        }
        let clamped: Vec<usize> = tokens
            .iter()
            .map(|&t| if t < self.config.vocab_size { t } else { UNK_INDEX })
            .collect();
        let positions: Vec<usize> = (0..tokens.len()).collect();

        let tok = tape.param(self.ids.tok);
        let pos = tape.param(self.ids.pos);
        let ze = tape.embed(tok, &clamped)?;
        let pe = tape.embed(pos, &positions)?;
        let w = tape.add(ze, pe)?;

        let mut avs = Vec::with_capacity(self.config.h);
        let scale = 1.0 / (self.config.d_k as f64).sqrt();
        for ids in &self.ids.heads {
            let q = tape_linear(tape, w, ids.wq, ids.bq)?;
            let k = tape_linear(tape, w, ids.wk, ids.bk)?;
            let v = tape_linear(tape, w, ids.wv, ids.bv)?;
            let logits = tape.matmul_nt(q, k)?;
            let scaled = tape.scale(logits, scale);
            let a = tape.softmax_rows(scaled);
            avs.push(tape.matmul(a, v)?);
        }
        let pre = match self.config.variant {
            Variant::Con => tape.concat_cols(&avs)?,
            Variant::Add => tape.add_n(&avs)?,
        };
        let combined = tape_linear(tape, pre, self.ids.combine_w, self.ids.combine_b)?;

        let res1 = tape.add(w, combined)?;
        let n1g = tape.param(self.ids.norm1_gain);
        let n1b = tape.param(self.ids.norm1_bias);
        let normed = tape.layer_norm(res1, n1g, n1b)?;
        let y1 = tape_linear(tape, normed, self.ids.ffn1_w, self.ids.ffn1_b)?;
        let inner = tape_linear(tape, y1, self.ids.ffn2_w, self.ids.ffn2_b)?;
        let activated = tape.relu(inner);
        let res2 = tape.add(w, activated)?;
        let n2g = tape.param(self.ids.norm2_gain);
        let n2b = tape.param(self.ids.norm2_bias);
        let out = tape.layer_norm(res2, n2g, n2b)?;

        let first = tape.select_row(out, 0);
        Ok(tape_linear(tape, first, self.ids.cls_w, self.ids.cls_b)?)
    }

    /// Writes every capture matrix as `head{i}_{Q|K|V|Alogits|A|T|H}.csv`
    /// under `dir`.
    pub fn dump_captures(dir: &Path, captures: &[HeadCapture]) -> Result<(), EncoderError> {
        std::fs::create_dir_all(dir)?;
        for (i, c) in captures.iter().enumerate() {
            for (tag, m) in [
                ("Q", &c.q),
                ("K", &c.k),
                ("V", &c.v),
                ("Alogits", &c.a_logits),
                ("A", &c.a),
                ("T", &c.t),
                ("H", &c.h),
            ] {
                let path = dir.join(format!("head{i}_{tag}.csv"));
                let file = std::fs::File::create(path)?;
                m.write_csv(std::io::BufWriter::new(file))?;
            }
        }
        Ok(())
    }
}

/// Attention weights from projected queries and keys:
/// `A_logits = Q·Kᵀ/√d_q`, `A = softmax_rows(A_logits)`.
pub fn attention_weights(q: &Matrix, k: &Matrix) -> Result<(Matrix, Matrix), EncoderError> {
    if q.cols() != k.cols() || q.rows() != k.rows() {
        return Err(EncoderError::Shape(LinalgError::DimMismatch {
            op: "attention_weights",
            lhs: (q.rows(), q.cols()),
            rhs: (k.rows(), k.cols()),
        }));
    }
    let a_logits = q.matmul_nt(k)?.scale(1.0 / (q.cols() as f64).sqrt());
    let a = net::softmax_rows(&a_logits);
    Ok((a_logits, a))
}

pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

fn stack_or_sum(avs: &[Matrix], variant: Variant) -> Result<Matrix, LinalgError> {
    let mut acc = avs[0].clone();
    for av in &avs[1..] {
        acc = match variant {
            Variant::Con => acc.hstack(av)?,
            Variant::Add => acc.add(av)?,
        };
    }
    Ok(acc)
}

fn linear(x: &Matrix, w: &Matrix, b: &Matrix) -> Result<Matrix, LinalgError> {
    Ok(add_row_broadcast(&x.matmul(w)?, b.row(0)))
}

fn add_row_broadcast(m: &Matrix, bias: &[f64]) -> Matrix {
    let mut out = m.clone();
    for r in 0..out.rows() {
        for (o, b) in out.row_mut(r).iter_mut().zip(bias) {
            *o += b;
        }
    }
    out
}

fn tape_linear(tape: &mut Tape<'_>, x: NodeId, w: ParamId, b: ParamId) -> Result<NodeId, NetError> {
    let wn = tape.param(w);
    let bn = tape.param(b);
    let xw = tape.matmul(x, wn)?;
    tape.add_row(xw, bn)
}
