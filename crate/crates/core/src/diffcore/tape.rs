//! Operation tape for reverse-mode differentiation.
//!
//! Every operation appends one node holding its output value and the ids of
//! its inputs. Node ids are assigned in creation order, so the tape is
//! topologically sorted by construction and [`Tape::backward`] is a single
//! reverse sweep.
//!
//! Parameter leaves borrow their values from a [`ParamStore`]; nothing is
//! copied until an operation produces a new value.

use std::borrow::Cow;
use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use super::tensor::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "sigmoid" => Ok(Activation::Sigmoid),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::Config(format!("unknown activation `{other}`"))),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
        })
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param { store: u64, id: ParamId },
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    Act(Var, Activation),
    EmbeddingBag {
        table: Var,
        ids: Vec<usize>,
        offsets: Vec<usize>,
    },
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Slice {
        input: Var,
        axis: usize,
        start: usize,
    },
    Reshape(Var),
    SumAxis {
        input: Var,
        axis: usize,
    },
    Softmax(Var),
    Expand {
        input: Var,
        times: usize,
    },
    WeightedPool {
        weights: Var,
        seq: Var,
    },
    Sum(Var),
    Bce {
        logits: Var,
        targets: Vec<f64>,
        weights: Vec<f64>,
        norm: f64,
    },
    Huber {
        pred: Var,
        targets: Vec<f64>,
        weights: Vec<f64>,
        delta: f64,
        norm: f64,
    },
    MeanSquaredDiff(Var, Var),
}

struct Node<'a> {
    shape: Vec<usize>,
    value: Cow<'a, [f64]>,
    op: Op,
    needs_grad: bool,
}

/// Splits `shape` around `axis` into (outer, dim, inner) extents.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Gradients produced by one backward sweep.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<(u64, ParamId, Var)>,
}

impl Gradients {
    /// Gradient with respect to `var`, or `None` when the loss does not depend on it.
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    /// Gradients of the parameters of `store` (or of any clone of it)
    /// reached by the sweep.
    pub fn params<'g>(&'g self, store: &ParamStore) -> impl Iterator<Item = (ParamId, &'g [f64])> + 'g {
        let key = store.key();
        self.params
            .iter()
            .filter(move |&&(s, _, _)| s == key)
            .filter_map(|&(_, id, v)| self.grads[v.0].as_deref().map(|g| (id, g)))
    }
}

#[derive(Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
    param_vars: HashMap<(usize, ParamId), Var>,
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            param_vars: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, inputs: &[Var]) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            shape,
            value: Cow::Owned(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a tensor as a leaf; gradients are tracked when `requires_grad` is set.
    pub fn leaf(&mut self, tensor: &Tensor) -> Var {
        self.nodes.push(Node {
            shape: tensor.shape().to_vec(),
            value: Cow::Owned(tensor.values().to_vec()),
            op: Op::Leaf,
            needs_grad: tensor.requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant leaf (never receives a gradient).
    pub fn constant(&mut self, shape: Vec<usize>, values: Vec<f64>) -> Result<Var> {
        let t = Tensor::new(shape, values)?;
        Ok(self.leaf(&t))
    }

    /// Borrows a parameter from `store`; repeated calls return the same node.
    pub fn param(&mut self, store: &'a ParamStore, id: ParamId) -> Var {
        let key = (store as *const ParamStore as usize, id);
        if let Some(&v) = self.param_vars.get(&key) {
            return v;
        }
        let t = store.get(id);
        self.nodes.push(Node {
            shape: t.shape().to_vec(),
            value: Cow::Borrowed(t.values()),
            op: Op::Param { store: store.key(), id },
            needs_grad: t.requires_grad,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(key, v);
        v
    }

    pub fn param_named(&mut self, store: &'a ParamStore, name: &str) -> Result<Var> {
        let id = store.id(name)?;
        Ok(self.param(store, id))
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        Tensor::new(self.shape(v).to_vec(), self.value(v).to_vec()).expect("tape node shape")
    }

    // ----- forward operations -------------------------------------------

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Dimension {
                op: "matmul",
                lhs: sa,
                rhs: sb,
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let (av, bv) = (self.value(a), self.value(b));
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let x = av[i * k + p];
                if x == 0.0 {
                    continue;
                }
                let brow = &bv[p * n..(p + 1) * n];
                row.iter_mut().zip(brow).for_each(|(o, &w)| *o += x * w);
            }
        }
        Ok(self.push(vec![m, n], out, Op::MatMul(a, b), &[a, b]))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Dimension {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        self.push(shape, out, op, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        Ok(self.zip_with(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y))
    }

    /// `x[..., n] + bias[n]`, broadcasting over leading dimensions.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x).to_vec(), self.shape(bias).to_vec());
        let n = *sx.last().unwrap();
        if sb.len() != 1 || sb[0] != n {
            return Err(Error::Dimension {
                op: "add_bias",
                lhs: sx,
                rhs: sb,
            });
        }
        let bv = self.value(bias);
        let out = self
            .value(x)
            .chunks_exact(n)
            .flat_map(|row| row.iter().zip(bv).map(|(a, b)| a + b))
            .collect();
        Ok(self.push(sx, out, Op::AddBias(x, bias), &[x, bias]))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let out = self.value(x).iter().map(|v| v * factor).collect();
        let shape = self.shape(x).to_vec();
        self.push(shape, out, Op::Scale(x, factor), &[x])
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        let f = match kind {
            Activation::Relu => |v: f64| v.max(0.0),
            Activation::Sigmoid => sigmoid,
            Activation::Tanh => f64::tanh,
        };
        let out = self.value(x).iter().map(|&v| f(v)).collect();
        let shape = self.shape(x).to_vec();
        self.push(shape, out, Op::Act(x, kind), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Relu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Tanh)
    }

    /// Gathers rows of `table[V, d]`; `field` names the feature in index errors.
    pub fn embedding_lookup(&mut self, table: Var, indices: &[usize], field: &str) -> Result<Var> {
        if indices.is_empty() {
            return Err(Error::Precondition(format!(
                "embedding lookup for `{field}` with no indices"
            )));
        }
        let offsets: Vec<usize> = (0..=indices.len()).collect();
        self.embedding_bag(table, indices, &offsets, field)
    }

    /// Sum-pooled lookup: output row `b` is the sum of the rows
    /// `ids[offsets[b]..offsets[b + 1]]` (an empty bag yields zeros).
    pub fn embedding_bag(
        &mut self,
        table: Var,
        ids: &[usize],
        offsets: &[usize],
        field: &str,
    ) -> Result<Var> {
        let st = self.shape(table).to_vec();
        if st.len() != 2 {
            return Err(Error::Shape(format!(
                "embedding table for `{field}` must be 2-d, got {st:?}"
            )));
        }
        if offsets.len() < 2
            || offsets[0] != 0
            || *offsets.last().unwrap() != ids.len()
            || offsets.windows(2).any(|w| w[0] > w[1])
        {
            return Err(Error::Shape(format!("malformed bag offsets for `{field}`")));
        }
        let (rows, d) = (st[0], st[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(Error::Index {
                field: field.to_string(),
                index: bad,
                size: rows,
            });
        }
        let n = offsets.len() - 1;
        let tv = self.value(table);
        let mut out = vec![0.0; n * d];
        for b in 0..n {
            let dst = &mut out[b * d..(b + 1) * d];
            for &id in &ids[offsets[b]..offsets[b + 1]] {
                dst.iter_mut()
                    .zip(&tv[id * d..(id + 1) * d])
                    .for_each(|(o, v)| *o += v);
            }
        }
        let op = Op::EmbeddingBag {
            table,
            ids: ids.to_vec(),
            offsets: offsets.to_vec(),
        };
        Ok(self.push(vec![n, d], out, op, &[table]))
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = xs
            .first()
            .ok_or_else(|| Error::Shape("concat of zero tensors".into()))?;
        let s0 = self.shape(*first).to_vec();
        if axis >= s0.len() {
            return Err(Error::Shape(format!("concat axis {axis} for shape {s0:?}")));
        }
        let mut total = 0;
        for &x in xs {
            let s = self.shape(x);
            let compatible = s.len() == s0.len()
                && s.iter()
                    .zip(&s0)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::Dimension {
                    op: "concat",
                    lhs: s0,
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let mut shape = s0.clone();
        shape[axis] = total;
        let (outer, _, inner) = split_axis(&shape, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &x in xs {
                let w = self.shape(x)[axis] * inner;
                out.extend_from_slice(&self.value(x)[o * w..(o + 1) * w]);
            }
        }
        let op = Op::Concat {
            inputs: xs.to_vec(),
            axis,
        };
        Ok(self.push(shape, out, op, xs))
    }

    /// Takes `len` entries starting at `start` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || len == 0 || start + len > s[axis] {
            return Err(Error::Shape(format!(
                "slice [{start}, {}) on axis {axis} of {s:?}",
                start + len
            )));
        }
        let (outer, dim, inner) = split_axis(&s, axis);
        let xv = self.value(x);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * dim * inner + start * inner;
            out.extend_from_slice(&xv[base..base + len * inner]);
        }
        let mut shape = s;
        shape[axis] = len;
        Ok(self.push(shape, out, Op::Slice { input: x, axis, start }, &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != self.value(x).len() || shape.contains(&0) {
            return Err(Error::Dimension {
                op: "reshape",
                lhs: self.shape(x).to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let out = self.value(x).to_vec();
        Ok(self.push(shape.to_vec(), out, Op::Reshape(x), &[x]))
    }

    /// Sums out `axis`, dropping it from the shape (a 1-d input gives a `[1]` scalar).
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() {
            return Err(Error::Shape(format!("sum axis {axis} for shape {s:?}")));
        }
        let (outer, dim, inner) = split_axis(&s, axis);
        let xv = self.value(x);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            let dst = &mut out[o * inner..(o + 1) * inner];
            for k in 0..dim {
                let base = (o * dim + k) * inner;
                dst.iter_mut()
                    .zip(&xv[base..base + inner])
                    .for_each(|(a, b)| *a += b);
            }
        }
        let mut shape = s;
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        Ok(self.push(shape, out, Op::SumAxis { input: x, axis }, &[x]))
    }

    /// Column-wise sum over the sequence axis: `[..., K, d] -> [..., d]`.
    pub fn sum_pool(&mut self, seq: Var) -> Result<Var> {
        let rank = self.shape(seq).len();
        if rank < 2 {
            return Err(Error::Precondition(format!(
                "sum_pool needs a [.., K, d] sequence, got {:?}",
                self.shape(seq)
            )));
        }
        self.sum_axis(seq, rank - 2)
    }

    /// Softmax over the last axis, with max subtraction.
    pub fn softmax(&mut self, x: Var) -> Var {
        let s = self.shape(x).to_vec();
        let n = *s.last().unwrap();
        let mut out = Vec::with_capacity(self.value(x).len());
        for row in self.value(x).chunks_exact(n) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let start = out.len();
            out.extend(row.iter().map(|v| (v - max).exp()));
            let z: f64 = out[start..].iter().sum();
            out[start..].iter_mut().for_each(|v| *v /= z);
        }
        self.push(s, out, Op::Softmax(x), &[x])
    }

    /// Repeats each row: `[B, d] -> [B, times, d]`.
    pub fn expand(&mut self, x: Var, times: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 || times == 0 {
            return Err(Error::Shape(format!("expand {times} of {s:?}")));
        }
        let (b, d) = (s[0], s[1]);
        let xv = self.value(x);
        let mut out = Vec::with_capacity(b * times * d);
        for row in xv.chunks_exact(d) {
            for _ in 0..times {
                out.extend_from_slice(row);
            }
        }
        Ok(self.push(vec![b, times, d], out, Op::Expand { input: x, times }, &[x]))
    }

    /// `out[b] = sum_k weights[b, k] * seq[b, k, :]`.
    pub fn weighted_pool(&mut self, weights: Var, seq: Var) -> Result<Var> {
        let (sw, ss) = (self.shape(weights).to_vec(), self.shape(seq).to_vec());
        if sw.len() != 2 || ss.len() != 3 || sw[0] != ss[0] || sw[1] != ss[1] {
            return Err(Error::Dimension {
                op: "weighted_pool",
                lhs: sw,
                rhs: ss,
            });
        }
        let (b, k, d) = (ss[0], ss[1], ss[2]);
        let (wv, sv) = (self.value(weights), self.value(seq));
        let mut out = vec![0.0; b * d];
        for i in 0..b {
            let dst = &mut out[i * d..(i + 1) * d];
            for j in 0..k {
                let w = wv[i * k + j];
                let row = &sv[(i * k + j) * d..(i * k + j + 1) * d];
                dst.iter_mut().zip(row).for_each(|(o, v)| *o += w * v);
            }
        }
        Ok(self.push(vec![b, d], out, Op::WeightedPool { weights, seq }, &[weights, seq]))
    }

    /// Sum of all elements as a `[1]` scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().sum();
        self.push(vec![1], vec![s], Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len() as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// Weighted sum of per-element binary cross-entropy on logits, divided by `norm`.
    ///
    /// Targets may be soft (any value in `[0, 1]`). Uses the log-sigmoid form
    /// `softplus(z) - t z`, so the gradient is `w (sigmoid(z) - t) / norm`.
    pub fn bce_with_logits(
        &mut self,
        logits: Var,
        targets: &[f64],
        weights: &[f64],
        norm: f64,
    ) -> Result<Var> {
        let n = self.value(logits).len();
        if targets.len() != n || weights.len() != n {
            return Err(Error::Dimension {
                op: "bce_with_logits",
                lhs: vec![n],
                rhs: vec![targets.len(), weights.len()],
            });
        }
        if let Some(t) = targets.iter().find(|t| !(0.0..=1.0).contains(*t)) {
            return Err(Error::Data(format!("cross-entropy target {t} outside [0, 1]")));
        }
        if !(norm > 0.0) {
            return Err(Error::Precondition(format!("loss normalizer {norm} must be positive")));
        }
        let loss: f64 = self
            .value(logits)
            .iter()
            .zip(targets)
            .zip(weights)
            .map(|((&z, &t), &w)| w * (softplus(z) - t * z))
            .sum::<f64>()
            / norm;
        let op = Op::Bce {
            logits,
            targets: targets.to_vec(),
            weights: weights.to_vec(),
            norm,
        };
        Ok(self.push(vec![1], vec![loss], op, &[logits]))
    }

    /// Weighted sum of Huber losses divided by `norm`.
    pub fn huber(
        &mut self,
        pred: Var,
        targets: &[f64],
        weights: &[f64],
        delta: f64,
        norm: f64,
    ) -> Result<Var> {
        if !(delta > 0.0) {
            return Err(Error::Config(format!("huber delta must be positive, got {delta}")));
        }
        if !(norm > 0.0) {
            return Err(Error::Precondition(format!("loss normalizer {norm} must be positive")));
        }
        let n = self.value(pred).len();
        if targets.len() != n || weights.len() != n {
            return Err(Error::Dimension {
                op: "huber",
                lhs: vec![n],
                rhs: vec![targets.len(), weights.len()],
            });
        }
        let loss: f64 = self
            .value(pred)
            .iter()
            .zip(targets)
            .zip(weights)
            .map(|((&p, &t), &w)| w * huber_value(p - t, delta))
            .sum::<f64>()
            / norm;
        let op = Op::Huber {
            pred,
            targets: targets.to_vec(),
            weights: weights.to_vec(),
            delta,
            norm,
        };
        Ok(self.push(vec![1], vec![loss], op, &[pred]))
    }

    /// Mean of squared elementwise differences; gradients reach both inputs.
    pub fn mean_squared_diff(&mut self, u: Var, v: Var) -> Result<Var> {
        self.same_shape("mean_squared_diff", u, v)?;
        let n = self.value(u).len() as f64;
        let loss = self
            .value(u)
            .iter()
            .zip(self.value(v))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n;
        Ok(self.push(vec![1], vec![loss], Op::MeanSquaredDiff(u, v), &[u, v]))
    }

    // ----- reverse sweep -------------------------------------------------

    /// Propagates gradients from the scalar `loss` back to every node.
    ///
    /// The tape is left untouched, so calling this twice yields the same
    /// gradients; accumulation across calls happens in
    /// [`ParamStore::accumulate`].
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let params = self
            .param_vars
            .values()
            .filter(|v| v.0 <= loss.0)
            .map(|&v| match self.nodes[v.0].op {
                Op::Param { store, id } => (store, id, v),
                _ => unreachable!("param cache points at a non-param node"),
            })
            .collect::<Vec<_>>();
        let mut params = params;
        params.sort_by_key(|&(store, id, v)| (store, id, v.0));
        for (i, g) in grads.iter_mut().enumerate() {
            if g.is_some() && !self.nodes[i].needs_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads, params })
    }

    fn propagate(&self, node: &Node<'_>, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let needs = |v: Var| self.nodes[v.0].needs_grad;
        match &node.op {
            Op::Leaf | Op::Param { .. } => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let (av, bv) = (self.value(*a), self.value(*b));
                if needs(*a) {
                    let ga = slot(grads, *a, m * k);
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &bv[p * n..(p + 1) * n];
                            ga[i * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                }
                if needs(*b) {
                    let gb = slot(grads, *b, k * n);
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let x = av[i * k + p];
                            if x == 0.0 {
                                continue;
                            }
                            gb[p * n..(p + 1) * n]
                                .iter_mut()
                                .zip(grow)
                                .for_each(|(o, y)| *o += x * y);
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if needs(v) {
                        add_into(slot(grads, v, g.len()), g, 1.0);
                    }
                }
            }
            Op::Sub(a, b) => {
                if needs(*a) {
                    add_into(slot(grads, *a, g.len()), g, 1.0);
                }
                if needs(*b) {
                    add_into(slot(grads, *b, g.len()), g, -1.0);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if needs(*a) {
                    let ga = slot(grads, *a, g.len());
                    for i in 0..g.len() {
                        ga[i] += g[i] * bv[i];
                    }
                }
                if needs(*b) {
                    let gb = slot(grads, *b, g.len());
                    for i in 0..g.len() {
                        gb[i] += g[i] * av[i];
                    }
                }
            }
            Op::AddBias(x, b) => {
                if needs(*x) {
                    add_into(slot(grads, *x, g.len()), g, 1.0);
                }
                if needs(*b) {
                    let n = self.shape(*b)[0];
                    let gb = slot(grads, *b, n);
                    for row in g.chunks_exact(n) {
                        add_into(gb, row, 1.0);
                    }
                }
            }
            Op::Scale(x, f) => {
                if needs(*x) {
                    add_into(slot(grads, *x, g.len()), g, *f);
                }
            }
            Op::Act(x, kind) => {
                if needs(*x) {
                    let y = &node.value;
                    let gx = slot(grads, *x, g.len());
                    for i in 0..g.len() {
                        let dy = match kind {
                            Activation::Relu => {
                                if y[i] > 0.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                            Activation::Sigmoid => y[i] * (1.0 - y[i]),
                            Activation::Tanh => 1.0 - y[i] * y[i],
                        };
                        gx[i] += g[i] * dy;
                    }
                }
            }
            Op::EmbeddingBag {
                table,
                ids,
                offsets,
            } => {
                if needs(*table) {
                    let st = self.shape(*table);
                    let d = st[1];
                    let gt = slot(grads, *table, st[0] * d);
                    for b in 0..offsets.len() - 1 {
                        let src = &g[b * d..(b + 1) * d];
                        for &id in &ids[offsets[b]..offsets[b + 1]] {
                            add_into(&mut gt[id * d..(id + 1) * d], src, 1.0);
                        }
                    }
                }
            }
            Op::Concat { inputs, axis } => {
                let (outer, total, inner) = split_axis(&node.shape, *axis);
                let mut offset = 0;
                for &x in inputs {
                    let w = self.shape(x)[*axis] * inner;
                    if needs(x) {
                        let gx = slot(grads, x, outer * w);
                        for o in 0..outer {
                            let src = &g[o * total * inner + offset..o * total * inner + offset + w];
                            add_into(&mut gx[o * w..(o + 1) * w], src, 1.0);
                        }
                    }
                    offset += w;
                }
            }
            Op::Slice { input, axis, start } => {
                if needs(*input) {
                    let s = self.shape(*input);
                    let (outer, dim, inner) = split_axis(s, *axis);
                    let len = node.shape[*axis];
                    let gx = slot(grads, *input, outer * dim * inner);
                    for o in 0..outer {
                        let base = o * dim * inner + start * inner;
                        add_into(
                            &mut gx[base..base + len * inner],
                            &g[o * len * inner..(o + 1) * len * inner],
                            1.0,
                        );
                    }
                }
            }
            Op::Reshape(x) => {
                if needs(*x) {
                    add_into(slot(grads, *x, g.len()), g, 1.0);
                }
            }
            Op::SumAxis { input, axis } => {
                if needs(*input) {
                    let (outer, dim, inner) = split_axis(self.shape(*input), *axis);
                    let gx = slot(grads, *input, outer * dim * inner);
                    for o in 0..outer {
                        let src = &g[o * inner..(o + 1) * inner];
                        for k in 0..dim {
                            let base = (o * dim + k) * inner;
                            add_into(&mut gx[base..base + inner], src, 1.0);
                        }
                    }
                }
            }
            Op::Softmax(x) => {
                if needs(*x) {
                    let n = *node.shape.last().unwrap();
                    let gx = slot(grads, *x, g.len());
                    for ((gy, y), gxr) in g
                        .chunks_exact(n)
                        .zip(node.value.chunks_exact(n))
                        .zip(gx.chunks_exact_mut(n))
                    {
                        let dot: f64 = gy.iter().zip(y).map(|(a, b)| a * b).sum();
                        for i in 0..n {
                            gxr[i] += y[i] * (gy[i] - dot);
                        }
                    }
                }
            }
            Op::Expand { input, times } => {
                if needs(*input) {
                    let d = self.shape(*input)[1];
                    let gx = slot(grads, *input, g.len() / times);
                    for (i, block) in g.chunks_exact(times * d).enumerate() {
                        for row in block.chunks_exact(d) {
                            add_into(&mut gx[i * d..(i + 1) * d], row, 1.0);
                        }
                    }
                }
            }
            Op::WeightedPool { weights, seq } => {
                let ss = self.shape(*seq);
                let (b, k, d) = (ss[0], ss[1], ss[2]);
                let (wv, sv) = (self.value(*weights), self.value(*seq));
                if needs(*weights) {
                    let gw = slot(grads, *weights, b * k);
                    for i in 0..b {
                        let gi = &g[i * d..(i + 1) * d];
                        for j in 0..k {
                            let row = &sv[(i * k + j) * d..(i * k + j + 1) * d];
                            gw[i * k + j] += gi.iter().zip(row).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                }
                if needs(*seq) {
                    let gs = slot(grads, *seq, b * k * d);
                    for i in 0..b {
                        let gi = &g[i * d..(i + 1) * d];
                        for j in 0..k {
                            let w = wv[i * k + j];
                            add_into(&mut gs[(i * k + j) * d..(i * k + j + 1) * d], gi, w);
                        }
                    }
                }
            }
            Op::Sum(x) => {
                if needs(*x) {
                    let n = self.value(*x).len();
                    slot(grads, *x, n).iter_mut().for_each(|v| *v += g[0]);
                }
            }
            Op::Bce {
                logits,
                targets,
                weights,
                norm,
            } => {
                if needs(*logits) {
                    let z = self.value(*logits);
                    let gz = slot(grads, *logits, z.len());
                    for i in 0..z.len() {
                        gz[i] += g[0] * weights[i] * (sigmoid(z[i]) - targets[i]) / norm;
                    }
                }
            }
            Op::Huber {
                pred,
                targets,
                weights,
                delta,
                norm,
            } => {
                if needs(*pred) {
                    let p = self.value(*pred);
                    let gp = slot(grads, *pred, p.len());
                    for i in 0..p.len() {
                        let e = (p[i] - targets[i]).clamp(-delta, *delta);
                        gp[i] += g[0] * weights[i] * e / norm;
                    }
                }
            }
            Op::MeanSquaredDiff(u, v) => {
                let (uv, vv) = (self.value(*u), self.value(*v));
                let n = uv.len() as f64;
                if needs(*u) {
                    let gu = slot(grads, *u, uv.len());
                    for i in 0..uv.len() {
                        gu[i] += g[0] * 2.0 * (uv[i] - vv[i]) / n;
                    }
                }
                if needs(*v) {
                    let gv = slot(grads, *v, vv.len());
                    for i in 0..vv.len() {
                        gv[i] -= g[0] * 2.0 * (uv[i] - vv[i]) / n;
                    }
                }
            }
        }
    }
}

pub fn huber_value(e: f64, delta: f64) -> f64 {
    let a = e.abs();
    if a <= delta {
        0.5 * e * e
    } else {
        delta * a - 0.5 * delta * delta
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64], factor: f64) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += factor * s);
}
