//! Reverse-mode tape over dense `f64` arrays.
//!
//! Every primitive pushes a node holding its forward value and the inputs it
//! read. [`Tape::backward`] walks the nodes in reverse insertion order, which
//! is a valid reverse topological order because a node can only reference
//! nodes recorded before it. Adjoints are only propagated into nodes that
//! (transitively) depend on a `requires_grad` leaf.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use super::array::{last_of, rows_of};
use super::{DArray, NumericsError};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Primitive kinds, used for diagnostics and fault injection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    Add,
    Sub,
    Mul,
    AddRow,
    Scale,
    AddScalar,
    MatMul,
    Transpose,
    Reshape,
    ConcatLast,
    ConcatRows,
    SliceRows,
    SliceLast,
    Sum,
    Mean,
    Abs,
    Square,
    Gelu,
    Softmax,
    LayerNorm,
    Embedding,
}

impl OpKind {
    pub const ALL: [OpKind; 22] = [
        OpKind::Leaf,
        OpKind::Add,
        OpKind::Sub,
        OpKind::Mul,
        OpKind::AddRow,
        OpKind::Scale,
        OpKind::AddScalar,
        OpKind::MatMul,
        OpKind::Transpose,
        OpKind::Reshape,
        OpKind::ConcatLast,
        OpKind::ConcatRows,
        OpKind::SliceRows,
        OpKind::SliceLast,
        OpKind::Sum,
        OpKind::Mean,
        OpKind::Abs,
        OpKind::Square,
        OpKind::Gelu,
        OpKind::Softmax,
        OpKind::LayerNorm,
        OpKind::Embedding,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::AddRow => "add_row",
            OpKind::Scale => "scale",
            OpKind::AddScalar => "add_scalar",
            OpKind::MatMul => "matmul",
            OpKind::Transpose => "transpose",
            OpKind::Reshape => "reshape",
            OpKind::ConcatLast => "concat_last",
            OpKind::ConcatRows => "concat_rows",
            OpKind::SliceRows => "slice_rows",
            OpKind::SliceLast => "slice_last",
            OpKind::Sum => "sum",
            OpKind::Mean => "mean",
            OpKind::Abs => "abs",
            OpKind::Square => "square",
            OpKind::Gelu => "gelu",
            OpKind::Softmax => "softmax",
            OpKind::LayerNorm => "layer_norm",
            OpKind::Embedding => "embedding",
        }
    }
}

impl std::fmt::Display for OpKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    ConcatLast(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    SliceLast(Var, usize),
    Sum(Var),
    Mean(Var),
    Abs(Var),
    Square(Var),
    Gelu(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Embedding {
        table: Var,
        indices: Vec<usize>,
    },
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::AddRow(..) => OpKind::AddRow,
            Op::Scale(..) => OpKind::Scale,
            Op::AddScalar(..) => OpKind::AddScalar,
            Op::MatMul(..) => OpKind::MatMul,
            Op::Transpose(..) => OpKind::Transpose,
            Op::Reshape(..) => OpKind::Reshape,
            Op::ConcatLast(..) => OpKind::ConcatLast,
            Op::ConcatRows(..) => OpKind::ConcatRows,
            Op::SliceRows(..) => OpKind::SliceRows,
            Op::SliceLast(..) => OpKind::SliceLast,
            Op::Sum(..) => OpKind::Sum,
            Op::Mean(..) => OpKind::Mean,
            Op::Abs(..) => OpKind::Abs,
            Op::Square(..) => OpKind::Square,
            Op::Gelu(..) => OpKind::Gelu,
            Op::Softmax(..) => OpKind::Softmax,
            Op::LayerNorm { .. } => OpKind::LayerNorm,
            Op::Embedding { .. } => OpKind::Embedding,
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

/// Records primitive operations and replays their adjoints.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    /// Accumulated gradients of `requires_grad` leaves, indexed by node.
    grads: Vec<Option<Vec<f64>>>,
    fault: Option<(OpKind, f64)>,
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every node recorded after the first `len`. Vars past `len` become invalid.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
        self.grads.truncate(len);
    }

    /// Scales every adjoint emitted by `kind` by `factor`. Negative control
    /// for the gradient checker; never set outside of tests and `check`.
    #[doc(hidden)]
    pub fn inject_adjoint_fault(&mut self, kind: OpKind, factor: f64) {
        self.fault = Some((kind, factor));
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Copies a node out as a plain array (no gradient tracking).
    pub fn to_array(&self, v: Var) -> DArray {
        let n = &self.nodes[v.0];
        DArray::new(&n.shape, n.value.clone()).expect("tape node shape is consistent")
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Resets all accumulated leaf gradients to zero.
    pub fn zero_grad(&mut self) {
        for g in self.grads.iter_mut().flatten() {
            g.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Records `array` as a leaf; gradients are tracked iff `array.requires_grad`.
    pub fn leaf(&mut self, array: &DArray) -> Var {
        self.push(
            array.shape().to_vec(),
            array.values().to_vec(),
            Op::Leaf,
            array.requires_grad,
        )
    }

    pub fn param(&mut self, shape: &[usize], values: Vec<f64>) -> Result<Var, NumericsError> {
        let a = DArray::new(shape, values)?;
        Ok(self.push(a.shape().to_vec(), a.values().to_vec(), Op::Leaf, true))
    }

    pub fn constant(&mut self, shape: &[usize], values: Vec<f64>) -> Result<Var, NumericsError> {
        let a = DArray::new(shape, values)?;
        Ok(self.push(a.shape().to_vec(), a.values().to_vec(), Op::Leaf, false))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), NumericsError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(NumericsError::Dimension {
                op,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        Ok(())
    }

    fn zip_with(
        &mut self,
        a: Var,
        b: Var,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Var {
        let value = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(&x, &y)| f(x, y))
            .collect();
        let rg = self.rg(&[a, b]);
        self.push(self.shape(a).to_vec(), value, op, rg)
    }

    fn map(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let value = self.nodes[a.0].value.iter().map(|&x| f(x)).collect();
        let rg = self.rg(&[a]);
        self.push(self.shape(a).to_vec(), value, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.same_shape("add", a, b)?;
        Ok(self.zip_with(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y))
    }

    /// `x + bias` with `bias` broadcast over the rows of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var, NumericsError> {
        let n = last_of(self.shape(x));
        if self.nodes[bias.0].value.len() != n {
            return Err(NumericsError::Dimension {
                op: "add_row",
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(bias).to_vec(),
            });
        }
        let b = &self.nodes[bias.0].value;
        let value = self.nodes[x.0]
            .value
            .iter()
            .enumerate()
            .map(|(i, &v)| v + b[i % n])
            .collect();
        let rg = self.rg(&[x, bias]);
        Ok(self.push(self.shape(x).to_vec(), value, Op::AddRow(x, bias), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.map(a, Op::Scale(a, c), |x| c * x)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.map(a, Op::AddScalar(a), |x| x + c)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(NumericsError::Dimension {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let value = matmul_raw(&self.nodes[a.0].value, &self.nodes[b.0].value, m, k, n);
        let rg = self.rg(&[a, b]);
        Ok(self.push(vec![m, n], value, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, NumericsError> {
        let s = self.shape(a);
        let (r, c) = match s.len() {
            1 => (1, s[0]),
            2 => (s[0], s[1]),
            _ => {
                return Err(NumericsError::Shape(format!(
                    "transpose expects a 1-D or 2-D array, got {s:?}"
                )))
            }
        };
        let value = transpose_raw(&self.nodes[a.0].value, r, c);
        let rg = self.rg(&[a]);
        Ok(self.push(vec![c, r], value, Op::Transpose(a), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, NumericsError> {
        let n: usize = shape.iter().product();
        if n != self.nodes[a.0].value.len() {
            return Err(NumericsError::Dimension {
                op: "reshape",
                lhs: self.shape(a).to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let value = self.nodes[a.0].value.clone();
        let rg = self.rg(&[a]);
        Ok(self.push(shape.to_vec(), value, Op::Reshape(a), rg))
    }

    /// Concatenates along the last dimension; all parts must share the row count.
    pub fn concat_last(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let first = *parts
            .first()
            .ok_or_else(|| NumericsError::Shape("concat of zero arrays".into()))?;
        let rows = rows_of(self.shape(first));
        for &p in parts {
            if rows_of(self.shape(p)) != rows {
                return Err(NumericsError::Dimension {
                    op: "concat_last",
                    lhs: self.shape(first).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
        }
        let widths: Vec<usize> = parts.iter().map(|&p| last_of(self.shape(p))).collect();
        let total: usize = widths.iter().sum();
        let mut value = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                value.extend_from_slice(&self.nodes[p.0].value[r * w..(r + 1) * w]);
            }
        }
        let mut shape = self.shape(first).to_vec();
        if shape.is_empty() {
            shape.push(total);
        } else {
            *shape.last_mut().unwrap() = total;
        }
        let rg = self.rg(parts);
        Ok(self.push(shape, value, Op::ConcatLast(parts.to_vec()), rg))
    }

    /// Stacks row blocks; all parts must share the last dimension.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let first = *parts
            .first()
            .ok_or_else(|| NumericsError::Shape("concat of zero arrays".into()))?;
        let n = last_of(self.shape(first));
        let mut rows = 0;
        for &p in parts {
            if last_of(self.shape(p)) != n {
                return Err(NumericsError::Dimension {
                    op: "concat_rows",
                    lhs: self.shape(first).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
            rows += rows_of(self.shape(p));
        }
        let mut value = Vec::with_capacity(rows * n);
        for &p in parts {
            value.extend_from_slice(&self.nodes[p.0].value);
        }
        let rg = self.rg(parts);
        Ok(self.push(vec![rows, n], value, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Rows `start..end` of `a` viewed as `rows × last_dim`.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var, NumericsError> {
        let rows = rows_of(self.shape(a));
        let n = last_of(self.shape(a));
        if start >= end || end > rows {
            return Err(NumericsError::Range(format!(
                "row slice {start}..{end} of {:?}",
                self.shape(a)
            )));
        }
        let value = self.nodes[a.0].value[start * n..end * n].to_vec();
        let rg = self.rg(&[a]);
        Ok(self.push(vec![end - start, n], value, Op::SliceRows(a, start), rg))
    }

    /// Columns `start..end` of the last dimension.
    pub fn slice_last(&mut self, a: Var, start: usize, end: usize) -> Result<Var, NumericsError> {
        let rows = rows_of(self.shape(a));
        let n = last_of(self.shape(a));
        if start >= end || end > n {
            return Err(NumericsError::Range(format!(
                "column slice {start}..{end} of {:?}",
                self.shape(a)
            )));
        }
        let src = &self.nodes[a.0].value;
        let mut value = Vec::with_capacity(rows * (end - start));
        for r in 0..rows {
            value.extend_from_slice(&src[r * n + start..r * n + end]);
        }
        let mut shape = self.shape(a).to_vec();
        *shape.last_mut().unwrap() = end - start;
        let rg = self.rg(&[a]);
        Ok(self.push(shape, value, Op::SliceLast(a, start), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.nodes[a.0].value.iter().sum();
        let rg = self.rg(&[a]);
        self.push(vec![1], vec![s], Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = &self.nodes[a.0].value;
        let m = v.iter().sum::<f64>() / v.len().max(1) as f64;
        let rg = self.rg(&[a]);
        self.push(vec![1], vec![m], Op::Mean(a), rg)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.map(a, Op::Abs(a), f64::abs)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.map(a, Op::Square(a), |x| x * x)
    }

    /// Exact GELU, `x·Φ(x)`.
    pub fn gelu(&mut self, a: Var) -> Var {
        self.map(a, Op::Gelu(a), |x| x * normal_cdf(x))
    }

    /// Row-wise softmax over the last dimension with max subtraction.
    /// Entries equal to `-inf` receive probability exactly zero.
    pub fn softmax(&mut self, a: Var) -> Var {
        let n = last_of(self.shape(a));
        let src = &self.nodes[a.0].value;
        let mut value = vec![0.0; src.len()];
        for (row, out) in src.chunks(n).zip(value.chunks_mut(n)) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for (o, &x) in out.iter_mut().zip(row) {
                *o = (x - max).exp();
                total += *o;
            }
            out.iter_mut().for_each(|o| *o /= total);
        }
        let rg = self.rg(&[a]);
        self.push(self.shape(a).to_vec(), value, Op::Softmax(a), rg)
    }

    /// Layer normalisation over the last dimension followed by `gain ⊙ · + bias`.
    pub fn layer_norm(
        &mut self,
        x: Var,
        gain: Var,
        bias: Var,
        eps: f64,
    ) -> Result<Var, NumericsError> {
        let n = last_of(self.shape(x));
        if n == 0 || self.nodes[x.0].value.is_empty() {
            return Err(NumericsError::Dimension {
                op: "layer_norm",
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(gain).to_vec(),
            });
        }
        for p in [gain, bias] {
            if self.nodes[p.0].value.len() != n {
                return Err(NumericsError::Dimension {
                    op: "layer_norm",
                    lhs: self.shape(x).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
        }
        let src = &self.nodes[x.0].value;
        let g = &self.nodes[gain.0].value;
        let b = &self.nodes[bias.0].value;
        let rows = src.len() / n;
        let mut xhat = vec![0.0; src.len()];
        let mut inv_std = vec![0.0; rows];
        let mut value = vec![0.0; src.len()];
        for r in 0..rows {
            let row = &src[r * n..(r + 1) * n];
            let mu = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std[r] = inv;
            for j in 0..n {
                let h = (row[j] - mu) * inv;
                xhat[r * n + j] = h;
                value[r * n + j] = g[j] * h + b[j];
            }
        }
        let rg = self.rg(&[x, gain, bias]);
        Ok(self.push(
            self.shape(x).to_vec(),
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// Gathers rows of a `V × d` table.
    pub fn embedding(&mut self, table: Var, indices: &[usize]) -> Result<Var, NumericsError> {
        let s = self.shape(table);
        if s.len() != 2 {
            return Err(NumericsError::Shape(format!(
                "embedding table must be 2-D, got {s:?}"
            )));
        }
        let (vocab, d) = (s[0], s[1]);
        if let Some(&bad) = indices.iter().find(|&&i| i >= vocab) {
            return Err(NumericsError::Range(format!(
                "embedding index {bad} outside table of {vocab} rows"
            )));
        }
        let src = &self.nodes[table.0].value;
        let mut value = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            value.extend_from_slice(&src[i * d..(i + 1) * d]);
        }
        let rg = self.rg(&[table]);
        Ok(self.push(
            vec![indices.len(), d],
            value,
            Op::Embedding {
                table,
                indices: indices.to_vec(),
            },
            rg,
        ))
    }

    /// Propagates adjoints from the scalar `loss` into every `requires_grad`
    /// leaf. Leaf gradients accumulate across calls until [`Tape::zero_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<(), NumericsError> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(NumericsError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let Tape {
            nodes,
            grads,
            fault,
        } = self;
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &nodes[idx];
            let kind = node.op.kind();
            let scale = match fault {
                Some((k, f)) if *k == kind => *f,
                _ => 1.0,
            };
            let mut send = |v: Var, delta: Vec<f64>| {
                if !nodes[v.0].requires_grad {
                    return;
                }
                let delta = if scale != 1.0 {
                    delta.into_iter().map(|d| d * scale).collect()
                } else {
                    delta
                };
                match &mut adj[v.0] {
                    Some(acc) => acc.iter_mut().zip(&delta).for_each(|(a, d)| *a += d),
                    slot @ None => *slot = Some(delta),
                }
            };
            let needs = |v: Var| nodes[v.0].requires_grad;
            let val = |v: Var| nodes[v.0].value.as_slice();

            match &node.op {
                Op::Leaf => {
                    if node.requires_grad {
                        match &mut grads[idx] {
                            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, d)| *a += d),
                            slot @ None => *slot = Some(g),
                        }
                    }
                }
                Op::Add(a, b) => {
                    if needs(*b) {
                        send(*b, g.clone());
                    }
                    send(*a, g);
                }
                Op::Sub(a, b) => {
                    if needs(*b) {
                        send(*b, g.iter().map(|x| -x).collect());
                    }
                    send(*a, g);
                }
                Op::Mul(a, b) => {
                    if needs(*a) {
                        send(*a, g.iter().zip(val(*b)).map(|(g, y)| g * y).collect());
                    }
                    if needs(*b) {
                        send(*b, g.iter().zip(val(*a)).map(|(g, x)| g * x).collect());
                    }
                }
                Op::AddRow(x, bias) => {
                    if needs(*bias) {
                        let n = val(*bias).len();
                        let mut db = vec![0.0; n];
                        for (i, gi) in g.iter().enumerate() {
                            db[i % n] += gi;
                        }
                        send(*bias, db);
                    }
                    send(*x, g);
                }
                Op::Scale(a, c) => send(*a, g.iter().map(|x| c * x).collect()),
                Op::AddScalar(a) => send(*a, g),
                Op::MatMul(a, b) => {
                    let (m, k) = (nodes[a.0].shape[0], nodes[a.0].shape[1]);
                    let n = nodes[b.0].shape[1];
                    if needs(*a) {
                        // dA = G · Bᵀ
                        let bt = transpose_raw(val(*b), k, n);
                        send(*a, matmul_raw(&g, &bt, m, n, k));
                    }
                    if needs(*b) {
                        // dB = Aᵀ · G
                        let at = transpose_raw(val(*a), m, k);
                        send(*b, matmul_raw(&at, &g, k, m, n));
                    }
                }
                Op::Transpose(a) => {
                    let (c, r) = (node.shape[0], node.shape[1]);
                    send(*a, transpose_raw(&g, c, r));
                }
                Op::Reshape(a) => send(*a, g),
                Op::ConcatLast(parts) => {
                    let total = last_of(&node.shape);
                    let rows = g.len() / total.max(1);
                    let mut offset = 0;
                    for &p in parts {
                        let w = last_of(&nodes[p.0].shape);
                        if needs(p) {
                            let mut d = Vec::with_capacity(rows * w);
                            for r in 0..rows {
                                d.extend_from_slice(&g[r * total + offset..r * total + offset + w]);
                            }
                            send(p, d);
                        }
                        offset += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let len = nodes[p.0].value.len();
                        if needs(p) {
                            send(p, g[offset..offset + len].to_vec());
                        }
                        offset += len;
                    }
                }
                Op::SliceRows(a, start) => {
                    let n = last_of(&node.shape);
                    let mut d = vec![0.0; val(*a).len()];
                    d[start * n..start * n + g.len()].copy_from_slice(&g);
                    send(*a, d);
                }
                Op::SliceLast(a, start) => {
                    let src_n = last_of(&nodes[a.0].shape);
                    let w = last_of(&node.shape);
                    let mut d = vec![0.0; val(*a).len()];
                    for (r, chunk) in g.chunks(w).enumerate() {
                        d[r * src_n + start..r * src_n + start + w].copy_from_slice(chunk);
                    }
                    send(*a, d);
                }
                Op::Sum(a) => send(*a, vec![g[0]; val(*a).len()]),
                Op::Mean(a) => {
                    let n = val(*a).len();
                    send(*a, vec![g[0] / n as f64; n]);
                }
                Op::Abs(a) => send(
                    *a,
                    g.iter()
                        .zip(val(*a))
                        .map(|(g, &x)| if x > 0.0 { *g } else if x < 0.0 { -g } else { 0.0 })
                        .collect(),
                ),
                Op::Square(a) => send(
                    *a,
                    g.iter().zip(val(*a)).map(|(g, x)| 2.0 * x * g).collect(),
                ),
                Op::Gelu(a) => send(
                    *a,
                    g.iter()
                        .zip(val(*a))
                        .map(|(g, &x)| g * (normal_cdf(x) + x * normal_pdf(x)))
                        .collect(),
                ),
                Op::Softmax(a) => {
                    let n = last_of(&node.shape);
                    let y = &node.value;
                    let mut d = vec![0.0; y.len()];
                    for ((yr, gr), dr) in y.chunks(n).zip(g.chunks(n)).zip(d.chunks_mut(n)) {
                        let dot: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                        for j in 0..n {
                            dr[j] = yr[j] * (gr[j] - dot);
                        }
                    }
                    send(*a, d);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    let n = last_of(&node.shape);
                    let gv = val(*gain);
                    if needs(*gain) {
                        let mut dg = vec![0.0; n];
                        for (i, gi) in g.iter().enumerate() {
                            dg[i % n] += gi * xhat[i];
                        }
                        send(*gain, dg);
                    }
                    if needs(*bias) {
                        let mut db = vec![0.0; n];
                        for (i, gi) in g.iter().enumerate() {
                            db[i % n] += gi;
                        }
                        send(*bias, db);
                    }
                    if needs(*x) {
                        let mut dx = vec![0.0; g.len()];
                        let nf = n as f64;
                        for (r, &inv) in inv_std.iter().enumerate() {
                            let o = r * n;
                            let mut sum_dh = 0.0;
                            let mut sum_dh_h = 0.0;
                            for j in 0..n {
                                let dh = g[o + j] * gv[j];
                                sum_dh += dh;
                                sum_dh_h += dh * xhat[o + j];
                            }
                            for j in 0..n {
                                let dh = g[o + j] * gv[j];
                                dx[o + j] = inv / nf * (nf * dh - sum_dh - xhat[o + j] * sum_dh_h);
                            }
                        }
                        send(*x, dx);
                    }
                }
                Op::Embedding { table, indices } => {
                    let d = last_of(&node.shape);
                    let mut dt = vec![0.0; val(*table).len()];
                    for (r, &i) in indices.iter().enumerate() {
                        for j in 0..d {
                            dt[i * d + j] += g[r * d + j];
                        }
                    }
                    send(*table, dt);
                }
            }
        }
        Ok(())
    }
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    out
}

pub(crate) fn transpose_raw(a: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a[i * c + j];
        }
    }
    out
}
