//! Reverse-mode autodiff over matrices. A tape records each operation's
//! inputs and output value during the forward pass; `backward` walks the
//! nodes in reverse creation order (reverse topological order, since a
//! node can only reference earlier nodes) exactly once, accumulating
//! parameter gradients into a [`GradBuffer`].

use crate::linalg::Matrix;

use super::ops;
use super::params::{GradBuffer, ParamId, ParamStore};
use super::NetError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

enum Payload {
    Owned(Matrix),
    Param(ParamId),
}

enum Op {
    Input,
    Param,
    /// Row gather from an embedding table node.
    Embed { table: NodeId, indices: Vec<usize> },
    MatMul { a: NodeId, b: NodeId },
    /// `a · bᵀ` (used for query–key products).
    MatMulNt { a: NodeId, b: NodeId },
    /// Broadcast-add a 1×cols bias row to every row of `a`.
    AddRow { a: NodeId, bias: NodeId },
    Add { a: NodeId, b: NodeId },
    Scale { a: NodeId, k: f64 },
    SoftmaxRows { a: NodeId },
    LayerNorm { a: NodeId, gain: NodeId, bias: NodeId },
    Relu { a: NodeId },
    ConcatCols { parts: Vec<NodeId> },
    AddN { parts: Vec<NodeId> },
    SelectRow { a: NodeId, row: usize },
    CrossEntropy { logits: NodeId, labels: Vec<usize> },
}

struct Node {
    op: Op,
    payload: Payload,
}

pub struct Tape<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
}

impl<'s> Tape<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::new(),
        }
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        match &self.nodes[id.0].payload {
            Payload::Owned(m) => m,
            Payload::Param(p) => &self.store.get(*p).value,
        }
    }

    fn push(&mut self, op: Op, value: Matrix) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            op,
            payload: Payload::Owned(value),
        });
        id
    }

    pub fn input(&mut self, m: Matrix) -> NodeId {
        self.push(Op::Input, m)
    }

    pub fn param(&mut self, id: ParamId) -> NodeId {
        let node = NodeId(self.nodes.len());
        self.nodes.push(Node {
            op: Op::Param,
            payload: Payload::Param(id),
        });
        node
    }

    pub fn embed(&mut self, table: NodeId, indices: &[usize]) -> Result<NodeId, NetError> {
        let t = self.value(table);
        let mut out = Matrix::zeros(indices.len(), t.cols());
        for (r, &ix) in indices.iter().enumerate() {
            if ix >= t.rows() {
                return Err(NetError::EmbedIndex {
                    index: ix,
                    rows: t.rows(),
                });
            }
            out.row_mut(r).copy_from_slice(t.row(ix));
        }
        Ok(self.push(
            Op::Embed {
                table,
                indices: indices.to_vec(),
            },
            out,
        ))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NetError> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(Op::MatMul { a, b }, v))
    }

    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NetError> {
        let v = self.value(a).matmul_nt(self.value(b))?;
        Ok(self.push(Op::MatMulNt { a, b }, v))
    }

    pub fn add_row(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId, NetError> {
        let av = self.value(a);
        let bv = self.value(bias);
        if bv.rows() != 1 || bv.cols() != av.cols() {
            return Err(NetError::Shape(crate::linalg::LinalgError::DimMismatch {
                op: "add_row",
                lhs: (av.rows(), av.cols()),
                rhs: (bv.rows(), bv.cols()),
            }));
        }
        let mut out = av.clone();
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(bv.row(0)) {
                *o += b;
            }
        }
        Ok(self.push(Op::AddRow { a, bias }, out))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NetError> {
        let v = self.value(a).add(self.value(b))?;
        Ok(self.push(Op::Add { a, b }, v))
    }

    pub fn scale(&mut self, a: NodeId, k: f64) -> NodeId {
        let v = self.value(a).scale(k);
        self.push(Op::Scale { a, k }, v)
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let v = ops::softmax_rows(self.value(a));
        self.push(Op::SoftmaxRows { a }, v)
    }

    pub fn layer_norm(
        &mut self,
        a: NodeId,
        gain: NodeId,
        bias: NodeId,
    ) -> Result<NodeId, NetError> {
        let v = ops::layer_norm(
            self.value(a),
            self.value(gain).row(0),
            self.value(bias).row(0),
        )?;
        Ok(self.push(Op::LayerNorm { a, gain, bias }, v))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = ops::relu(self.value(a));
        self.push(Op::Relu { a }, v)
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId, NetError> {
        let mut acc = self.value(parts[0]).clone();
        for &p in &parts[1..] {
            acc = acc.hstack(self.value(p))?;
        }
        Ok(self.push(
            Op::ConcatCols {
                parts: parts.to_vec(),
            },
            acc,
        ))
    }

    pub fn add_n(&mut self, parts: &[NodeId]) -> Result<NodeId, NetError> {
        let mut acc = self.value(parts[0]).clone();
        for &p in &parts[1..] {
            acc = acc.add(self.value(p))?;
        }
        Ok(self.push(
            Op::AddN {
                parts: parts.to_vec(),
            },
            acc,
        ))
    }

    pub fn select_row(&mut self, a: NodeId, row: usize) -> NodeId {
        let v = self.value(a);
        let out = Matrix::new(1, v.cols(), v.row(row).to_vec()).expect("row is finite");
        self.push(Op::SelectRow { a, row }, out)
    }

    /// Scalar (1×1) mean cross-entropy node.
    pub fn cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId, NetError> {
        let loss = ops::cross_entropy(self.value(logits), labels)?;
        Ok(self.push(
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
            },
            Matrix::new(1, 1, vec![loss]).expect("finite loss"),
        ))
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        let v = self.value(id);
        debug_assert_eq!((v.rows(), v.cols()), (1, 1));
        v.get(0, 0)
    }

    /// Backpropagates from the scalar node `out`, adding parameter
    /// gradients into `buf`. Gradients accumulate additively when a
    /// parameter feeds several nodes.
    pub fn backward(&self, out: NodeId, buf: &mut GradBuffer) -> Result<(), NetError> {
        if out.0 >= self.nodes.len() {
            return Err(NetError::BackwardBeforeForward);
        }
        let ov = self.value(out);
        if ov.rows() != 1 || ov.cols() != 1 {
            return Err(NetError::NonScalarLoss {
                rows: ov.rows(),
                cols: ov.cols(),
            });
        }

        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(Matrix::new(1, 1, vec![1.0]).expect("finite"));

        for id in (0..=out.0).rev() {
            let Some(g) = grads[id].take() else {
                continue;
            };
            let g = &g;
            match &self.nodes[id].op {
                Op::Input => {}
                Op::Param => {
                    if let Payload::Param(pid) = self.nodes[id].payload {
                        buf.add_to(pid, g);
                    }
                }
                Op::Embed { table, indices } => {
                    // Scatter-add rows of g into the table gradient.
                    if let Payload::Param(pid) = self.nodes[table.0].payload {
                        for (r, &ix) in indices.iter().enumerate() {
                            buf.add_row_to(pid, ix, g.row(r));
                        }
                    } else {
                        let t = self.value(*table);
                        let mut gt = Matrix::zeros(t.rows(), t.cols());
                        for (r, &ix) in indices.iter().enumerate() {
                            for (dst, src) in gt.row_mut(ix).iter_mut().zip(g.row(r)) {
                                *dst += src;
                            }
                        }
                        accumulate(&mut grads, *table, gt);
                    }
                }
                Op::MatMul { a, b } => {
                    let ga = g.matmul_nt(self.value(*b))?;
                    let gb = self.value(*a).transpose().matmul(g)?;
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::MatMulNt { a, b } => {
                    let ga = g.matmul(self.value(*b))?;
                    let gb = g.transpose().matmul(self.value(*a))?;
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::AddRow { a, bias } => {
                    let mut gb = Matrix::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (dst, src) in gb.row_mut(0).iter_mut().zip(g.row(r)) {
                            *dst += src;
                        }
                    }
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *bias, gb);
                }
                Op::Add { a, b } => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g.clone());
                }
                Op::Scale { a, k } => {
                    accumulate(&mut grads, *a, g.scale(*k));
                }
                Op::SoftmaxRows { a } => {
                    let y = self.value(id_of(id));
                    let gx = ops::softmax_rows_backward(y, g);
                    accumulate(&mut grads, *a, gx);
                }
                Op::LayerNorm { a, gain, bias } => {
                    let (gx, dgain, dbias) =
                        ops::layer_norm_backward(self.value(*a), self.value(*gain).row(0), g);
                    accumulate(&mut grads, *a, gx);
                    accumulate(
                        &mut grads,
                        *gain,
                        Matrix::new(1, dgain.len(), dgain).expect("finite"),
                    );
                    accumulate(
                        &mut grads,
                        *bias,
                        Matrix::new(1, dbias.len(), dbias).expect("finite"),
                    );
                }
                Op::Relu { a } => {
                    let gx = ops::relu_backward(self.value(*a), g);
                    accumulate(&mut grads, *a, gx);
                }
                Op::ConcatCols { parts } => {
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.value(p).cols();
                        accumulate(&mut grads, p, g.columns(offset, offset + w));
                        offset += w;
                    }
                }
                Op::AddN { parts } => {
                    for &p in parts {
                        accumulate(&mut grads, p, g.clone());
                    }
                }
                Op::SelectRow { a, row } => {
                    let av = self.value(*a);
                    let mut gx = Matrix::zeros(av.rows(), av.cols());
                    gx.row_mut(*row).copy_from_slice(g.row(0));
                    accumulate(&mut grads, *a, gx);
                }
                Op::CrossEntropy { logits, labels } => {
                    let gl = ops::cross_entropy_backward(self.value(*logits), labels)
                        .scale(g.get(0, 0));
                    accumulate(&mut grads, *logits, gl);
                }
            }
        }

        Ok(())
    }
}

fn id_of(raw: usize) -> NodeId {
    NodeId(raw)
}

fn accumulate(grads: &mut [Option<Matrix>], id: NodeId, g: Matrix) {
    match &mut grads[id.0] {
        Some(existing) => {
            for (dst, src) in existing.data_mut().iter_mut().zip(g.data()) {
                *dst += src;
            }
        }
        slot => *slot = Some(g),
    }
}
