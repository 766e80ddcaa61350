//! Wengert tape: reverse-mode AD via operation recording.
//!
//! Every op validates shapes, computes its value eagerly, and appends one
//! node with input ids, the output id, and what backward needs. `backward`
//! consumes the tape, replays nodes in reverse exactly once, and returns
//! the gradients of all grad-requiring leaves.
//!
//! One tape is owned by exactly one training step; batch parallelism uses
//! independent tapes whose leaf gradients are summed by the caller.

use crate::dtype::Element;
use crate::error::{Result, TensorError};
use crate::kernels;
use crate::tensor::{strides_of, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Per-token pair-rotation angles for the rope op, shared across heads.
/// `cos`/`sin` are row-major `[tokens, pairs]`.
#[derive(Debug, Clone)]
pub struct RotationTable<E> {
    pub tokens: usize,
    pub pairs: usize,
    pub cos: Vec<E>,
    pub sin: Vec<E>,
}

impl<E: Element> RotationTable<E> {
    pub fn from_angles(tokens: usize, pairs: usize, angles: &[f64]) -> Self {
        assert_eq!(angles.len(), tokens * pairs, "angle table size mismatch");
        RotationTable {
            tokens,
            pairs,
            cos: angles.iter().map(|&a| E::from_f64(a.cos())).collect(),
            sin: angles.iter().map(|&a| E::from_f64(a.sin())).collect(),
        }
    }

    /// Table with every angle negated (the inverse rotation).
    pub fn inverse(&self) -> Self {
        RotationTable {
            tokens: self.tokens,
            pairs: self.pairs,
            cos: self.cos.clone(),
            sin: self.sin.iter().map(|&s| E::zero() - s).collect(),
        }
    }
}

struct Slot<E: Element> {
    value: Tensor<E>,
    needs_grad: bool,
}

const MATMUL: &str = "matmul";

/// Batched matmul geometry resolved at record time.
#[derive(Debug, Clone)]
struct GemmDims {
    m: usize,
    k: usize,
    n: usize,
    out_batch: Vec<usize>,
    a_batch: Vec<usize>,
    b_batch: Vec<usize>,
}

enum Node<E: Element> {
    Leaf,
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Scale { x: usize, c: E },
    AddConst { x: usize },
    AddBias { x: usize, bias: usize },
    MulBias { x: usize, bias: usize },
    MatMul { a: usize, b: usize, dims: GemmDims },
    MatMulTransB { a: usize, b: usize, dims: GemmDims },
    Reshape { x: usize },
    Permute { x: usize, perm: Vec<usize> },
    Concat0 { parts: Vec<usize> },
    Slice0 { x: usize, start: usize },
    Softmax { x: usize, axis: usize },
    RmsNorm { x: usize, gain: usize, inv_rms: Vec<E> },
    Silu { x: usize },
    Gelu { x: usize },
    Rope { x: usize, table: RotationTable<E> },
    GatherRows { table: usize, ids: Vec<usize> },
    SumAll { x: usize },
}

impl<E: Element> Node<E> {
    fn name(&self) -> &'static str {
        match self {
            Node::Leaf => "leaf",
            Node::Add { .. } => "add",
            Node::Sub { .. } => "sub",
            Node::Mul { .. } => "mul",
            Node::Scale { .. } => "scale",
            Node::AddConst { .. } => "add_const",
            Node::AddBias { .. } => "add_bias",
            Node::MulBias { .. } => "mul_bias",
            Node::MatMul { .. } => "matmul",
            Node::MatMulTransB { .. } => "matmul_transb",
            Node::Reshape { .. } => "reshape",
            Node::Permute { .. } => "permute",
            Node::Concat0 { .. } => "concat0",
            Node::Slice0 { .. } => "slice0",
            Node::Softmax { .. } => "softmax",
            Node::RmsNorm { .. } => "rms_norm",
            Node::Silu { .. } => "silu",
            Node::Gelu { .. } => "gelu",
            Node::Rope { .. } => "rope",
            Node::GatherRows { .. } => "gather_rows",
            Node::SumAll { .. } => "sum_all",
        }
    }
}

struct NodeRec<E: Element> {
    out: usize,
    op: Node<E>,
}

/// Gradient store returned by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients<E: Element> {
    grads: Vec<Option<Tensor<E>>>,
}

impl<E: Element> Gradients<E> {
    pub fn get(&self, v: Var) -> Option<&Tensor<E>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<E>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

pub struct Tape<E: Element> {
    slots: Vec<Slot<E>>,
    nodes: Vec<NodeRec<E>>,
}

impl<E: Element> Default for Tape<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Element> Tape<E> {
    pub fn new() -> Self {
        Tape {
            slots: Vec::new(),
            nodes: Vec::new(),
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn value(&self, v: Var) -> &Tensor<E> {
        &self.slots[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.slots[v.0].value.shape()
    }

    fn check(&self, v: Var, op: &'static str) -> Result<()> {
        if v.0 >= self.slots.len() {
            return Err(TensorError::IndexOutOfBounds {
                op,
                index: v.0,
                extent: self.slots.len(),
            });
        }
        Ok(())
    }

    fn push(&mut self, value: Tensor<E>, needs_grad: bool, op: Node<E>) -> Result<Var> {
        #[cfg(debug_assertions)]
        {
            if !value.is_finite() {
                return Err(TensorError::NonFinite { op: op.name() });
            }
        }
        let id = self.slots.len();
        self.slots.push(Slot { value, needs_grad });
        self.nodes.push(NodeRec { out: id, op });
        Ok(Var(id))
    }

    fn needs(&self, v: Var) -> bool {
        self.slots[v.0].needs_grad
    }

    // ── Leaves ──────────────────────────────────────────────────────

    pub fn leaf(&mut self, value: Tensor<E>, requires_grad: bool) -> Result<Var> {
        self.push(value, requires_grad, Node::Leaf)
    }

    /// Leaf that never receives gradient (targets, masks, inputs).
    pub fn constant(&mut self, value: Tensor<E>) -> Result<Var> {
        self.leaf(value, false)
    }

    // ── Elementwise ─────────────────────────────────────────────────

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a, "add")?;
        self.check(b, "add")?;
        self.same_shape(a, b, "add")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        let ng = self.needs(a) || self.needs(b);
        self.push(t, ng, Node::Add { a: a.0, b: b.0 })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a, "sub")?;
        self.check(b, "sub")?;
        self.same_shape(a, b, "sub")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x - y)
            .collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        let ng = self.needs(a) || self.needs(b);
        self.push(t, ng, Node::Sub { a: a.0, b: b.0 })
    }

    /// Hadamard product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a, "mul")?;
        self.check(b, "mul")?;
        self.same_shape(a, b, "mul")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        let ng = self.needs(a) || self.needs(b);
        self.push(t, ng, Node::Mul { a: a.0, b: b.0 })
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        self.check(x, "scale")?;
        let c = E::from_f64(c);
        let t = self.value(x).map(|v| v * c);
        let ng = self.needs(x);
        self.push(t, ng, Node::Scale { x: x.0, c })
    }

    pub fn add_const(&mut self, x: Var, c: f64) -> Result<Var> {
        self.check(x, "add_const")?;
        let c = E::from_f64(c);
        let t = self.value(x).map(|v| v + c);
        let ng = self.needs(x);
        self.push(t, ng, Node::AddConst { x: x.0 })
    }

    /// `x[..., d] + bias[d]`, bias broadcast over leading axes.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        self.check(x, "add_bias")?;
        self.check(bias, "add_bias")?;
        let d = self.bias_dim(x, bias, "add_bias")?;
        let xv = self.value(x).data();
        let bv = self.value(bias).data();
        let data = xv
            .iter()
            .enumerate()
            .map(|(i, &v)| v + bv[i % d])
            .collect();
        let t = Tensor::new(self.shape(x).to_vec(), data)?;
        let ng = self.needs(x) || self.needs(bias);
        self.push(t, ng, Node::AddBias { x: x.0, bias: bias.0 })
    }

    /// `x[..., d] * bias[d]`, bias broadcast over leading axes.
    pub fn mul_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        self.check(x, "mul_bias")?;
        self.check(bias, "mul_bias")?;
        let d = self.bias_dim(x, bias, "mul_bias")?;
        let xv = self.value(x).data();
        let bv = self.value(bias).data();
        let data = xv
            .iter()
            .enumerate()
            .map(|(i, &v)| v * bv[i % d])
            .collect();
        let t = Tensor::new(self.shape(x).to_vec(), data)?;
        let ng = self.needs(x) || self.needs(bias);
        self.push(t, ng, Node::MulBias { x: x.0, bias: bias.0 })
    }

    fn bias_dim(&self, x: Var, bias: Var, op: &'static str) -> Result<usize> {
        let xs = self.shape(x);
        let bs = self.shape(bias);
        let last = xs.last().copied().unwrap_or(1);
        if bs.len() != 1 || bs[0] != last {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: xs.to_vec(),
                rhs: bs.to_vec(),
            });
        }
        Ok(last)
    }

    // ── Linear algebra ──────────────────────────────────────────────

    fn gemm_dims(&self, a: Var, b: Var, trans_b: bool) -> Result<GemmDims> {
        let asp = self.shape(a);
        let bsp = self.shape(b);
        if asp.len() < 2 || bsp.len() < 2 {
            return Err(TensorError::InvalidShape {
                op: MATMUL,
                shape: if asp.len() < 2 { asp.to_vec() } else { bsp.to_vec() },
                reason: "matmul operands need rank >= 2".into(),
            });
        }
        let (m, ka) = (asp[asp.len() - 2], asp[asp.len() - 1]);
        let (kb, n) = if trans_b {
            (bsp[bsp.len() - 1], bsp[bsp.len() - 2])
        } else {
            (bsp[bsp.len() - 2], bsp[bsp.len() - 1])
        };
        if ka != kb {
            return Err(TensorError::ShapeMismatch {
                op: MATMUL,
                lhs: asp.to_vec(),
                rhs: bsp.to_vec(),
            });
        }
        let a_batch = asp[..asp.len() - 2].to_vec();
        let b_batch = bsp[..bsp.len() - 2].to_vec();
        let out_batch = broadcast_batch(&a_batch, &b_batch).ok_or_else(|| {
            TensorError::ShapeMismatch {
                op: MATMUL,
                lhs: asp.to_vec(),
                rhs: bsp.to_vec(),
            }
        })?;
        Ok(GemmDims {
            m,
            k: ka,
            n,
            out_batch,
            a_batch,
            b_batch,
        })
    }

    /// Batched `A[.., m, k] @ B[.., k, n]` with broadcastable batch dims.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a, MATMUL)?;
        self.check(b, MATMUL)?;
        let dims = self.gemm_dims(a, b, false)?;
        let batch: usize = dims.out_batch.iter().product();
        let a_off = block_offsets(&dims.out_batch, &dims.a_batch);
        let b_off = block_offsets(&dims.out_batch, &dims.b_batch);
        let (m, k, n) = (dims.m, dims.k, dims.n);
        let mut out = vec![E::zero(); batch * m * n];
        let av = self.value(a).data();
        let bv = self.value(b).data();
        for i in 0..batch {
            kernels::matmul_acc(
                &av[a_off[i] * m * k..(a_off[i] + 1) * m * k],
                &bv[b_off[i] * k * n..(b_off[i] + 1) * k * n],
                &mut out[i * m * n..(i + 1) * m * n],
                m,
                k,
                n,
            );
        }
        let mut shape = dims.out_batch.clone();
        shape.push(m);
        shape.push(n);
        let t = Tensor::new(shape, out)?;
        let ng = self.needs(a) || self.needs(b);
        self.push(t, ng, Node::MatMul { a: a.0, b: b.0, dims })
    }

    /// Batched `A[.., m, k] @ B[.., n, k]^T`.
    pub fn matmul_transb(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a, MATMUL)?;
        self.check(b, MATMUL)?;
        let dims = self.gemm_dims(a, b, true)?;
        let batch: usize = dims.out_batch.iter().product();
        let a_off = block_offsets(&dims.out_batch, &dims.a_batch);
        let b_off = block_offsets(&dims.out_batch, &dims.b_batch);
        let (m, k, n) = (dims.m, dims.k, dims.n);
        let mut out = vec![E::zero(); batch * m * n];
        let av = self.value(a).data();
        let bv = self.value(b).data();
        for i in 0..batch {
            kernels::matmul_transb_acc(
                &av[a_off[i] * m * k..(a_off[i] + 1) * m * k],
                &bv[b_off[i] * n * k..(b_off[i] + 1) * n * k],
                &mut out[i * m * n..(i + 1) * m * n],
                m,
                k,
                n,
            );
        }
        let mut shape = dims.out_batch.clone();
        shape.push(m);
        shape.push(n);
        let t = Tensor::new(shape, out)?;
        let ng = self.needs(a) || self.needs(b);
        self.push(t, ng, Node::MatMulTransB { a: a.0, b: b.0, dims })
    }

    // ── Shape ───────────────────────────────────────────────────────

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        self.check(x, "reshape")?;
        let t = self.value(x).clone().reshaped(shape)?;
        let ng = self.needs(x);
        self.push(t, ng, Node::Reshape { x: x.0 })
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        self.check(x, "permute")?;
        let rank = self.value(x).rank();
        let mut seen = vec![false; rank];
        if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
            return Err(TensorError::InvalidShape {
                op: "permute",
                shape: self.shape(x).to_vec(),
                reason: format!("invalid permutation {perm:?}"),
            });
        }
        let t = permute_data(self.value(x), perm);
        let ng = self.needs(x);
        self.push(
            t,
            ng,
            Node::Permute {
                x: x.0,
                perm: perm.to_vec(),
            },
        )
    }

    /// Concatenate along axis 0. All parts must agree on trailing dims.
    pub fn concat0(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(TensorError::InvalidShape {
                op: "concat0",
                shape: vec![],
                reason: "empty part list".into(),
            });
        }
        for &p in parts {
            self.check(p, "concat0")?;
        }
        let tail = self.shape(parts[0])[1..].to_vec();
        let mut rows = 0usize;
        for &p in parts {
            let s = self.shape(p);
            if s.is_empty() || s[1..] != tail[..] {
                return Err(TensorError::ShapeMismatch {
                    op: "concat0",
                    lhs: self.shape(parts[0]).to_vec(),
                    rhs: s.to_vec(),
                });
            }
            rows += s[0];
        }
        let mut data = Vec::with_capacity(rows * tail.iter().product::<usize>());
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let mut shape = vec![rows];
        shape.extend_from_slice(&tail);
        let t = Tensor::new(shape, data)?;
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(
            t,
            ng,
            Node::Concat0 {
                parts: parts.iter().map(|p| p.0).collect(),
            },
        )
    }

    /// Rows `[start, start+len)` along axis 0.
    pub fn slice0(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        self.check(x, "slice0")?;
        let s = self.shape(x);
        if s.is_empty() || start + len > s[0] {
            return Err(TensorError::IndexOutOfBounds {
                op: "slice0",
                index: start + len,
                extent: s.first().copied().unwrap_or(0),
            });
        }
        let row: usize = s[1..].iter().product();
        let data = self.value(x).data()[start * row..(start + len) * row].to_vec();
        let mut shape = vec![len];
        shape.extend_from_slice(&s[1..]);
        let t = Tensor::new(shape, data)?;
        let ng = self.needs(x);
        self.push(t, ng, Node::Slice0 { x: x.0, start })
    }

    // ── Nonlinear ───────────────────────────────────────────────────

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check(x, "softmax")?;
        let s = self.shape(x).to_vec();
        if axis >= s.len() {
            return Err(TensorError::InvalidParameter {
                name: "axis",
                value: axis as f64,
                reason: "softmax axis out of range",
            });
        }
        let mut data = self.value(x).data().to_vec();
        softmax_axis(&mut data, &s, axis);
        let t = Tensor::new(s, data)?;
        let ng = self.needs(x);
        self.push(t, ng, Node::Softmax { x: x.0, axis })
    }

    /// `x / sqrt(mean(x^2, last axis) + eps) * gain`.
    pub fn rms_norm(&mut self, x: Var, gain: Var, eps: f64) -> Result<Var> {
        self.check(x, "rms_norm")?;
        self.check(gain, "rms_norm")?;
        if eps < 0.0 || !eps.is_finite() {
            return Err(TensorError::InvalidParameter {
                name: "eps",
                value: eps,
                reason: "rms_norm eps must be finite and >= 0",
            });
        }
        let d = self.bias_dim(x, gain, "rms_norm")?;
        let rows = self.value(x).numel() / d;
        let mut out = vec![E::zero(); rows * d];
        let mut inv_rms = vec![E::zero(); rows];
        let xv = self.value(x).data();
        let gv = self.value(gain).data();
        let e = E::from_f64(eps);
        for r in 0..rows {
            inv_rms[r] = kernels::rms_norm_row(&xv[r * d..(r + 1) * d], gv, e, &mut out[r * d..(r + 1) * d]);
        }
        let t = Tensor::new(self.shape(x).to_vec(), out)?;
        let ng = self.needs(x) || self.needs(gain);
        self.push(
            t,
            ng,
            Node::RmsNorm {
                x: x.0,
                gain: gain.0,
                inv_rms,
            },
        )
    }

    pub fn silu(&mut self, x: Var) -> Result<Var> {
        self.check(x, "silu")?;
        let t = self.value(x).map(kernels::silu);
        let ng = self.needs(x);
        self.push(t, ng, Node::Silu { x: x.0 })
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        self.check(x, "gelu")?;
        let t = self.value(x).map(kernels::gelu);
        let ng = self.needs(x);
        self.push(t, ng, Node::Gelu { x: x.0 })
    }

    /// Rotate channel pairs of `x[tokens, heads, d_head]` by per-token
    /// angles shared across heads. Norm of every pair is preserved.
    pub fn rope(&mut self, x: Var, table: &RotationTable<E>) -> Result<Var> {
        self.check(x, "rope")?;
        let s = self.shape(x).to_vec();
        if s.len() != 3 || s[2] % 2 != 0 {
            return Err(TensorError::InvalidShape {
                op: "rope",
                shape: s,
                reason: "expected [tokens, heads, even d_head]".into(),
            });
        }
        let (tokens, heads, dh) = (s[0], s[1], s[2]);
        if table.tokens != tokens || table.pairs != dh / 2 {
            return Err(TensorError::InvalidShape {
                op: "rope",
                shape: s,
                reason: format!(
                    "rotation table is [{}x{}], need [{}x{}]",
                    table.tokens,
                    table.pairs,
                    tokens,
                    dh / 2
                ),
            });
        }
        let t = rope_apply(self.value(x), table, tokens, heads, dh)?;
        let ng = self.needs(x);
        self.push(
            t,
            ng,
            Node::Rope {
                x: x.0,
                table: table.clone(),
            },
        )
    }

    /// `out[i, :] = table[ids[i], :]` for a rank-2 table.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        self.check(table, "gather_rows")?;
        let s = self.shape(table);
        if s.len() != 2 {
            return Err(TensorError::InvalidShape {
                op: "gather_rows",
                shape: s.to_vec(),
                reason: "table must be rank 2".into(),
            });
        }
        let (rows, d) = (s[0], s[1]);
        let mut data = Vec::with_capacity(ids.len() * d);
        let tv = self.value(table).data();
        for &id in ids {
            if id >= rows {
                return Err(TensorError::IndexOutOfBounds {
                    op: "gather_rows",
                    index: id,
                    extent: rows,
                });
            }
            data.extend_from_slice(&tv[id * d..(id + 1) * d]);
        }
        let t = Tensor::new(vec![ids.len(), d], data)?;
        let ng = self.needs(table);
        self.push(
            t,
            ng,
            Node::GatherRows {
                table: table.0,
                ids: ids.to_vec(),
            },
        )
    }

    /// Sum of all elements, as a rank-0 tensor.
    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        self.check(x, "sum_all")?;
        let mut acc = E::zero();
        for &v in self.value(x).data() {
            acc = acc + v;
        }
        let ng = self.needs(x);
        self.push(Tensor::scalar(acc), ng, Node::SumAll { x: x.0 })
    }

    // ── Backward ────────────────────────────────────────────────────

    /// Reverse pass from a scalar loss. Consumes the tape; every reachable
    /// grad-requiring leaf gets `d loss / d leaf` in the returned store.
    pub fn backward(self, loss: Var) -> Result<Gradients<E>> {
        self.check(loss, "backward")?;
        if self.value(loss).numel() != 1 {
            return Err(TensorError::NonScalarLoss {
                shape: self.shape(loss).to_vec(),
            });
        }
        let mut grads: Vec<Option<Vec<E>>> = (0..self.slots.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![E::one()]);

        for rec in self.nodes.iter().rev() {
            if !self.slots[rec.out].needs_grad {
                continue;
            }
            let out_grad = match grads[rec.out].take() {
                Some(g) => g,
                None => continue,
            };
            self.apply_backward(rec, &out_grad, &mut grads);
            // consumers all sit later on the tape and have already been
            // replayed, so interior grads are complete here; only leaf
            // grads are kept, which halves peak memory
            if matches!(rec.op, Node::Leaf) {
                grads[rec.out] = Some(out_grad);
            }
        }

        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                g.map(|data| Tensor::new(self.slots[i].value.shape().to_vec(), data).expect("grad shape"))
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn accumulate(grads: &mut [Option<Vec<E>>], slot: usize, numel: usize, f: impl FnOnce(&mut [E])) {
        let g = grads[slot].get_or_insert_with(|| vec![E::zero(); numel]);
        f(g);
    }

    fn apply_backward(&self, rec: &NodeRec<E>, og: &[E], grads: &mut [Option<Vec<E>>]) {
        let val = |id: usize| self.slots[id].value.data();
        let numel = |id: usize| self.slots[id].value.numel();
        let needs = |id: usize| self.slots[id].needs_grad;
        match &rec.op {
            Node::Leaf => {}
            Node::Add { a, b } => {
                if needs(*a) {
                    Self::accumulate(grads, *a, numel(*a), |g| {
                        for (gv, &o) in g.iter_mut().zip(og) {
                            *gv += o;
                        }
                    });
                }
                if needs(*b) {
                    Self::accumulate(grads, *b, numel(*b), |g| {
                        for (gv, &o) in g.iter_mut().zip(og) {
                            *gv += o;
                        }
                    });
                }
            }
            Node::Sub { a, b } => {
                if needs(*a) {
                    Self::accumulate(grads, *a, numel(*a), |g| {
                        for (gv, &o) in g.iter_mut().zip(og) {
                            *gv += o;
                        }
                    });
                }
                if needs(*b) {
                    Self::accumulate(grads, *b, numel(*b), |g| {
                        for (gv, &o) in g.iter_mut().zip(og) {
                            *gv -= o;
                        }
                    });
                }
            }
            Node::Mul { a, b } => {
                if needs(*a) {
                    let bv = val(*b);
                    Self::accumulate(grads, *a, numel(*a), |g| {
                        for i in 0..g.len() {
                            g[i] += og[i] * bv[i];
                        }
                    });
                }
                if needs(*b) {
                    let av = val(*a);
                    Self::accumulate(grads, *b, numel(*b), |g| {
                        for i in 0..g.len() {
                            g[i] += og[i] * av[i];
                        }
                    });
                }
            }
            Node::Scale { x, c } => {
                if needs(*x) {
                    Self::accumulate(grads, *x, numel(*x), |g| {
                        for (gv, &o) in g.iter_mut().zip(og) {
                            *gv += o * *c;
                        }
                    });
                }
            }
            Node::AddConst { x } => {
                if needs(*x) {
                    Self::accumulate(grads, *x, numel(*x), |g| {
                        for (gv, &o) in g.iter_mut().zip(og) {
                            *gv += o;
                        }
                    });
                }
            }
            Node::AddBias { x, bias } => {
                let d = numel(*bias);
                if needs(*x) {
                    Self::accumulate(grads, *x, numel(*x), |g| {
                        for (gv, &o) in g.iter_mut().zip(og) {
                            *gv += o;
                        }
                    });
                }
                if needs(*bias) {
                    Self::accumulate(grads, *bias, d, |g| {
                        for (i, &o) in og.iter().enumerate() {
                            g[i % d] += o;
                        }
                    });
                }
            }
            Node::MulBias { x, bias } => {
                let d = numel(*bias);
                if needs(*x) {
                    let bv = val(*bias);
                    Self::accumulate(grads, *x, numel(*x), |g| {
                        for (i, &o) in og.iter().enumerate() {
                            g[i] += o * bv[i % d];
                        }
                    });
                }
                if needs(*bias) {
                    let xv = val(*x);
                    Self::accumulate(grads, *bias, d, |g| {
                        for (i, &o) in og.iter().enumerate() {
                            g[i % d] += o * xv[i];
                        }
                    });
                }
            }
            Node::MatMul { a, b, dims } => {
                let (m, k, n) = (dims.m, dims.k, dims.n);
                let batch: usize = dims.out_batch.iter().product();
                let a_off = block_offsets(&dims.out_batch, &dims.a_batch);
                let b_off = block_offsets(&dims.out_batch, &dims.b_batch);
                if needs(*a) {
                    let bv = val(*b);
                    Self::accumulate(grads, *a, numel(*a), |g| {
                        for i in 0..batch {
                            // dA += dC @ B^T
                            kernels::matmul_transb_acc(
                                &og[i * m * n..(i + 1) * m * n],
                                &bv[b_off[i] * k * n..(b_off[i] + 1) * k * n],
                                &mut g[a_off[i] * m * k..(a_off[i] + 1) * m * k],
                                m,
                                n,
                                k,
                            );
                        }
                    });
                }
                if needs(*b) {
                    let av = val(*a);
                    Self::accumulate(grads, *b, numel(*b), |g| {
                        for i in 0..batch {
                            // dB += A^T @ dC
                            kernels::matmul_transa_acc(
                                &av[a_off[i] * m * k..(a_off[i] + 1) * m * k],
                                &og[i * m * n..(i + 1) * m * n],
                                &mut g[b_off[i] * k * n..(b_off[i] + 1) * k * n],
                                m,
                                k,
                                n,
                            );
                        }
                    });
                }
            }
            Node::MatMulTransB { a, b, dims } => {
                let (m, k, n) = (dims.m, dims.k, dims.n);
                let batch: usize = dims.out_batch.iter().product();
                let a_off = block_offsets(&dims.out_batch, &dims.a_batch);
                let b_off = block_offsets(&dims.out_batch, &dims.b_batch);
                if needs(*a) {
                    let bv = val(*b);
                    Self::accumulate(grads, *a, numel(*a), |g| {
                        for i in 0..batch {
                            // dA += dC @ B
                            kernels::matmul_acc(
                                &og[i * m * n..(i + 1) * m * n],
                                &bv[b_off[i] * n * k..(b_off[i] + 1) * n * k],
                                &mut g[a_off[i] * m * k..(a_off[i] + 1) * m * k],
                                m,
                                n,
                                k,
                            );
                        }
                    });
                }
                if needs(*b) {
                    let av = val(*a);
                    Self::accumulate(grads, *b, numel(*b), |g| {
                        for i in 0..batch {
                            // dB += dC^T @ A
                            kernels::matmul_transa_acc(
                                &og[i * m * n..(i + 1) * m * n],
                                &av[a_off[i] * m * k..(a_off[i] + 1) * m * k],
                                &mut g[b_off[i] * n * k..(b_off[i] + 1) * n * k],
                                m,
                                n,
                                k,
                            );
                        }
                    });
                }
            }
            Node::Reshape { x } => {
                if needs(*x) {
                    Self::accumulate(grads, *x, numel(*x), |g| {
                        for (gv, &o) in g.iter_mut().zip(og) {
                            *gv += o;
                        }
                    });
                }
            }
            Node::Permute { x, perm } => {
                if needs(*x) {
                    let in_shape = self.slots[*x].value.shape();
                    let scatter = permute_offsets(in_shape, perm);
                    Self::accumulate(grads, *x, numel(*x), |g| {
                        for (lin, &off) in scatter.iter().enumerate() {
                            g[lin] += og[off];
                        }
                    });
                }
            }
            Node::Concat0 { parts } => {
                let mut cursor = 0usize;
                for &p in parts {
                    let len = numel(p);
                    if needs(p) {
                        let seg = &og[cursor..cursor + len];
                        Self::accumulate(grads, p, len, |g| {
                            for (gv, &o) in g.iter_mut().zip(seg) {
                                *gv += o;
                            }
                        });
                    }
                    cursor += len;
                }
            }
            Node::Slice0 { x, start } => {
                if needs(*x) {
                    let row: usize = self.slots[*x].value.shape()[1..].iter().product();
                    let offset = start * row;
                    Self::accumulate(grads, *x, numel(*x), |g| {
                        for (i, &o) in og.iter().enumerate() {
                            g[offset + i] += o;
                        }
                    });
                }
            }
            Node::Softmax { x, axis } => {
                if needs(*x) {
                    let y = &self.slots[rec.out].value;
                    let shape = y.shape().to_vec();
                    let yv = y.data();
                    let dx = softmax_backward(og, yv, &shape, *axis);
                    Self::accumulate(grads, *x, numel(*x), |g| {
                        for (gv, o) in g.iter_mut().zip(dx) {
                            *gv += o;
                        }
                    });
                }
            }
            Node::RmsNorm { x, gain, inv_rms } => {
                let xv = val(*x);
                let gv_ = val(*gain);
                let d = gv_.len();
                let rows = xv.len() / d;
                let dinv = E::from_f64(1.0 / d as f64);
                if needs(*x) {
                    Self::accumulate(grads, *x, xv.len(), |g| {
                        for r in 0..rows {
                            let xr = &xv[r * d..(r + 1) * d];
                            let or = &og[r * d..(r + 1) * d];
                            let rr = inv_rms[r];
                            let mut s = E::zero();
                            for i in 0..d {
                                s = s + or[i] * gv_[i] * xr[i];
                            }
                            let coef = rr * rr * rr * s * dinv;
                            let gr = &mut g[r * d..(r + 1) * d];
                            for i in 0..d {
                                gr[i] += gv_[i] * rr * or[i] - coef * xr[i];
                            }
                        }
                    });
                }
                if needs(*gain) {
                    Self::accumulate(grads, *gain, d, |g| {
                        for r in 0..rows {
                            let xr = &xv[r * d..(r + 1) * d];
                            let or = &og[r * d..(r + 1) * d];
                            let rr = inv_rms[r];
                            for i in 0..d {
                                g[i] += or[i] * xr[i] * rr;
                            }
                        }
                    });
                }
            }
            Node::Silu { x } => {
                if needs(*x) {
                    let xv = val(*x);
                    Self::accumulate(grads, *x, xv.len(), |g| {
                        for i in 0..g.len() {
                            g[i] += og[i] * kernels::silu_grad(xv[i]);
                        }
                    });
                }
            }
            Node::Gelu { x } => {
                if needs(*x) {
                    let xv = val(*x);
                    Self::accumulate(grads, *x, xv.len(), |g| {
                        for i in 0..g.len() {
                            g[i] += og[i] * kernels::gelu_grad(xv[i]);
                        }
                    });
                }
            }
            Node::Rope { x, table } => {
                if needs(*x) {
                    let shape = self.slots[*x].value.shape();
                    let (tokens, heads, dh) = (shape[0], shape[1], shape[2]);
                    let inv = table.inverse();
                    Self::accumulate(grads, *x, tokens * heads * dh, |g| {
                        let pairs = dh / 2;
                        let mut tmp = vec![E::zero(); dh];
                        for t in 0..tokens {
                            let cos = &inv.cos[t * pairs..(t + 1) * pairs];
                            let sin = &inv.sin[t * pairs..(t + 1) * pairs];
                            for h in 0..heads {
                                let base = (t * heads + h) * dh;
                                kernels::rotate_pairs_row(&og[base..base + dh], cos, sin, &mut tmp);
                                for i in 0..dh {
                                    g[base + i] += tmp[i];
                                }
                            }
                        }
                    });
                }
            }
            Node::GatherRows { table, ids } => {
                if needs(*table) {
                    let d = self.slots[*table].value.shape()[1];
                    Self::accumulate(grads, *table, numel(*table), |g| {
                        for (i, &id) in ids.iter().enumerate() {
                            let src = &og[i * d..(i + 1) * d];
                            let dst = &mut g[id * d..(id + 1) * d];
                            for (dv, &s) in dst.iter_mut().zip(src) {
                                *dv += s;
                            }
                        }
                    });
                }
            }
            Node::SumAll { x } => {
                if needs(*x) {
                    let o = og[0];
                    Self::accumulate(grads, *x, numel(*x), |g| {
                        for gv in g.iter_mut() {
                            *gv += o;
                        }
                    });
                }
            }
        }
    }
}

// ── Free helpers ────────────────────────────────────────────────────

fn broadcast_batch(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let len = a.len().max(b.len());
    let mut out = vec![0usize; len];
    for i in 0..len {
        let da = dim_right(a, len, i);
        let db = dim_right(b, len, i);
        if da == db || da == 1 || db == 1 {
            out[i] = da.max(db);
        } else {
            return None;
        }
    }
    Some(out)
}

fn dim_right(shape: &[usize], len: usize, i: usize) -> usize {
    let pad = len - shape.len();
    if i < pad {
        1
    } else {
        shape[i - pad]
    }
}

/// For each linear index of `out_batch`, the linear block index into an
/// operand with (right-aligned) batch shape `op_batch` (stride 0 on
/// broadcast dims).
fn block_offsets(out_batch: &[usize], op_batch: &[usize]) -> Vec<usize> {
    let total: usize = out_batch.iter().product();
    let len = out_batch.len();
    let mut op_shape = vec![1usize; len];
    op_shape[len - op_batch.len()..].copy_from_slice(op_batch);
    let op_strides = strides_of(&op_shape);
    let out_strides = strides_of(out_batch);
    (0..total)
        .map(|lin| {
            let mut rem = lin;
            let mut acc = 0usize;
            for d in 0..len {
                let idx = rem / out_strides[d];
                rem %= out_strides[d];
                if op_shape[d] != 1 {
                    acc += idx * op_strides[d];
                }
            }
            acc
        })
        .collect()
}

fn permute_data<E: Element>(t: &Tensor<E>, perm: &[usize]) -> Tensor<E> {
    let out_shape: Vec<usize> = perm.iter().map(|&p| t.shape()[p]).collect();
    let offsets = permute_offsets(t.shape(), perm);
    let src = t.data();
    let mut out = vec![E::zero(); src.len()];
    for (lin, &off) in offsets.iter().enumerate() {
        out[off] = src[lin];
    }
    Tensor::new(out_shape, out).expect("permute shape")
}

/// For each linear input index, the linear output index under `perm`.
fn permute_offsets(in_shape: &[usize], perm: &[usize]) -> Vec<usize> {
    let rank = in_shape.len();
    let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
    let in_strides = strides_of(in_shape);
    let out_strides = strides_of(&out_shape);
    // input dim d sits at output axis q where perm[q] == d
    let mut out_axis_of = vec![0usize; rank];
    for (q, &p) in perm.iter().enumerate() {
        out_axis_of[p] = q;
    }
    let total: usize = in_shape.iter().product();
    (0..total)
        .map(|lin| {
            let mut rem = lin;
            let mut off = 0usize;
            for d in 0..rank {
                let idx = rem / in_strides[d];
                rem %= in_strides[d];
                off += idx * out_strides[out_axis_of[d]];
            }
            off
        })
        .collect()
}

fn softmax_axis<E: Element>(data: &mut [E], shape: &[usize], axis: usize) {
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    if inner == 1 {
        for o in 0..outer {
            kernels::softmax_lane(&mut data[o * len..(o + 1) * len]);
        }
    } else {
        let mut lane = vec![E::zero(); len];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                for j in 0..len {
                    lane[j] = data[base + j * inner];
                }
                kernels::softmax_lane(&mut lane);
                for j in 0..len {
                    data[base + j * inner] = lane[j];
                }
            }
        }
    }
}

fn softmax_backward<E: Element>(og: &[E], y: &[E], shape: &[usize], axis: usize) -> Vec<E> {
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let mut dx = vec![E::zero(); og.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let mut s = E::zero();
            for j in 0..len {
                let idx = base + j * inner;
                s = s + og[idx] * y[idx];
            }
            for j in 0..len {
                let idx = base + j * inner;
                dx[idx] = (og[idx] - s) * y[idx];
            }
        }
    }
    dx
}

fn rope_apply<E: Element>(
    x: &Tensor<E>,
    table: &RotationTable<E>,
    tokens: usize,
    heads: usize,
    dh: usize,
) -> Result<Tensor<E>> {
    let pairs = dh / 2;
    let src = x.data();
    let mut out = vec![E::zero(); src.len()];
    for t in 0..tokens {
        let cos = &table.cos[t * pairs..(t + 1) * pairs];
        let sin = &table.sin[t * pairs..(t + 1) * pairs];
        for h in 0..heads {
            let base = (t * heads + h) * dh;
            kernels::rotate_pairs_row(&src[base..base + dh], cos, sin, &mut out[base..base + dh]);
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t2(rows: &[&[f64]]) -> Tensor<f64> {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let mut tape = Tape::<f64>::new();
        let i2 = tape.constant(t2(&[&[1.0, 0.0], &[0.0, 1.0]])).unwrap();
        let out = tape.matmul(i2, i2).unwrap();
        assert_eq!(tape.value(out).data(), &[1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn matmul_hand_case() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(t2(&[&[1.0, 2.0], &[3.0, 4.0]])).unwrap();
        let b = tape.constant(t2(&[&[0.0], &[1.0]])).unwrap();
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).shape(), &[2, 1]);
        assert_eq!(tape.value(c).data(), &[2.0, 4.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::zeros(vec![2, 3])).unwrap();
        let b = tape.constant(Tensor::zeros(vec![4, 2])).unwrap();
        let err = tape.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[4, 2]"), "{msg}");
    }

    #[test]
    fn batched_matmul_broadcasts_rhs() {
        // a: [2, 2, 3], b: [3, 2] -> out [2, 2, 2]
        let mut tape = Tape::<f64>::new();
        let a = tape
            .constant(Tensor::new(vec![2, 2, 3], (0..12).map(f64::from).collect()).unwrap())
            .unwrap();
        let b = tape
            .constant(Tensor::new(vec![3, 2], (0..6).map(f64::from).collect()).unwrap())
            .unwrap();
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).shape(), &[2, 2, 2]);
        // block 0 checked by hand: [[0,1,2],[3,4,5]] @ [[0,1],[2,3],[4,5]]
        assert_eq!(&tape.value(c).data()[..4], &[10.0, 13.0, 28.0, 40.0]);
    }

    #[test]
    fn softmax_symmetry_and_stability() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_vec(vec![0.0, 0.0, 0.0])).unwrap();
        let y = tape.softmax(x, 0).unwrap();
        for &v in tape.value(y).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let big = tape.constant(Tensor::from_vec(vec![1000.0, 1000.0])).unwrap();
        let yb = tape.softmax(big, 0).unwrap();
        assert_eq!(tape.value(yb).data(), &[0.5, 0.5]);
    }

    #[test]
    fn backward_sum_gives_ones() {
        let mut tape = Tape::<f64>::new();
        let w = tape
            .leaf(Tensor::from_vec(vec![1.0, -2.0, 0.5]), true)
            .unwrap();
        let loss = tape.sum_all(w).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(w).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_quadratic_gives_w() {
        let mut tape = Tape::<f64>::new();
        let w = tape
            .leaf(Tensor::from_vec(vec![1.5, -0.25, 3.0]), true)
            .unwrap();
        let sq = tape.mul(w, w).unwrap();
        let half = tape.scale(sq, 0.5).unwrap();
        let loss = tape.sum_all(half).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(w).unwrap().data(), &[1.5, -0.25, 3.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = Tape::<f64>::new();
        let w = tape.leaf(Tensor::from_vec(vec![1.0, 2.0]), true).unwrap();
        let err = tape.backward(w).unwrap_err();
        assert!(matches!(err, TensorError::NonScalarLoss { .. }));
    }

    #[test]
    fn gather_rows_accumulates_duplicate_ids() {
        let mut tape = Tape::<f64>::new();
        let table = tape
            .leaf(t2(&[&[1.0, 2.0], &[3.0, 4.0]]), true)
            .unwrap();
        let out = tape.gather_rows(table, &[0, 0, 1]).unwrap();
        let s = tape.sum_all(out).unwrap();
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.get(table).unwrap().data(), &[2.0, 2.0, 1.0, 1.0]);
    }

    #[test]
    fn permute_round_trip() {
        let mut tape = Tape::<f64>::new();
        let x = tape
            .constant(Tensor::new(vec![2, 3, 4], (0..24).map(f64::from).collect()).unwrap())
            .unwrap();
        let p = tape.permute(x, &[2, 0, 1]).unwrap();
        assert_eq!(tape.value(p).shape(), &[4, 2, 3]);
        let back = tape.permute(p, &[1, 2, 0]).unwrap();
        assert_eq!(tape.value(back).data(), tape.value(x).data());
    }

    #[test]
    fn concat_slice_round_trip() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(t2(&[&[1.0, 2.0]])).unwrap();
        let b = tape.constant(t2(&[&[3.0, 4.0], &[5.0, 6.0]])).unwrap();
        let c = tape.concat0(&[a, b]).unwrap();
        assert_eq!(tape.value(c).shape(), &[3, 2]);
        let s = tape.slice0(c, 1, 2).unwrap();
        assert_eq!(tape.value(s).data(), &[3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn rms_norm_unit_and_zero_cases() {
        let mut tape = Tape::<f64>::new();
        let ones = tape.constant(Tensor::ones(vec![4])).unwrap();
        let gain = tape.constant(Tensor::ones(vec![4])).unwrap();
        // eps = 0 is allowed; the error case is eps < 0
        let y = tape.rms_norm(ones, gain, 0.0).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 1.0, 1.0, 1.0]);

        let zeros = tape.constant(Tensor::zeros(vec![4])).unwrap();
        let z = tape.rms_norm(zeros, gain, 1e-6).unwrap();
        assert_eq!(tape.value(z).data(), &[0.0, 0.0, 0.0, 0.0]);

        assert!(tape.rms_norm(ones, gain, -1.0).is_err());
    }

    #[test]
    fn determinism_bit_identical() {
        let run = || {
            let mut tape = Tape::<f64>::new();
            let x = tape
                .constant(Tensor::from_vec(vec![0.3, -1.7, 2.9, 0.01]))
                .unwrap();
            let y = tape.softmax(x, 0).unwrap();
            let g = tape.gelu(y).unwrap();
            tape.value(g).data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }
}
