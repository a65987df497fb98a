//! Minimal reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Graph`] records every operation of one forward pass in insertion
//! order. Insertion order is a topological order, so [`Graph::backward`]
//! walks the nodes in reverse exactly once and accumulates adjoints into
//! the inputs of each node.
//!
//! Broadcasting is limited to scalar-with-tensor for `add` and `mul`; the
//! bias add of a linear layer is its own op ([`Graph::add_row`]).

use crate::error::{Error, Result};
use crate::tensor::{self, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    AddRow(Var, Var),
    Softmax(Var),
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
    Combine {
        code: Var,
        items: Vec<Var>,
    },
    Slice(Var),
    ConcatCols(Var, Var),
    Gather {
        src: Var,
        indices: Vec<usize>,
    },
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Arithmetic counters, for checking that a merged forward pass costs the
/// same regardless of how many weight copies were merged.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct OpCounters {
    /// Multiply-accumulates of forward matrix products.
    pub forward_macs: u64,
    /// Multiply-accumulates spent merging weight copies (forward).
    pub merge_macs: u64,
    /// Multiply-accumulates spent in backward passes.
    pub backward_macs: u64,
}

impl OpCounters {
    pub fn total(&self) -> u64 {
        self.forward_macs + self.merge_macs + self.backward_macs
    }
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    visits: Vec<u32>,
    counters: OpCounters,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn counters(&self) -> OpCounters {
        self.counters
    }

    /// A trainable leaf; its gradient is available after `backward`.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A constant leaf (data, labels, frozen weights).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient of the last `backward` call's output with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// How many times `backward` processed each node.
    pub fn visit_counts(&self) -> &[u32] {
        &self.visits
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = tensor::matmul(self.value(a), self.value(b))?;
        let (p, q) = self.value(a).dims2();
        let r = self.value(b).cols();
        self.counters.forward_macs += (p * q * r) as u64;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = tensor::transpose(self.value(a))?;
        let rg = self.needs(a);
        Ok(self.push(out, Op::Transpose(a), rg))
    }

    fn binary_shape(&self, op: &'static str, a: Var, b: Var) -> Result<Vec<usize>> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() == tb.shape() || tb.is_scalar() {
            Ok(ta.shape().to_vec())
        } else if ta.is_scalar() {
            Ok(tb.shape().to_vec())
        } else {
            Err(Error::shape(
                op,
                format!("{:?} vs {:?}", ta.shape(), tb.shape()),
            ))
        }
    }

    fn elementwise(&self, a: Var, b: Var, shape: Vec<usize>, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a).data(), self.value(b).data());
        let n: usize = shape.iter().product();
        let at = |i: usize| if ta.len() == 1 { ta[0] } else { ta[i] };
        let bt = |i: usize| if tb.len() == 1 { tb[0] } else { tb[i] };
        let data = (0..n).map(|i| f(at(i), bt(i))).collect();
        Tensor::new(shape, data).expect("shape checked")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.binary_shape("add", a, b)?;
        let out = self.elementwise(a, b, shape, |x, y| x + y);
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.binary_shape("mul", a, b)?;
        let out = self.elementwise(a, b, shape, |x, y| x * y);
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let t = self.value(a);
        let out = Tensor::new(t.shape().to_vec(), t.data().iter().map(|v| v * factor).collect())
            .expect("same shape");
        let rg = self.needs(a);
        self.push(out, Op::Scale(a, factor), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = tensor::relu(self.value(a));
        let rg = self.needs(a);
        self.push(out, Op::Relu(a), rg)
    }

    /// Adds a bias vector to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let out = tensor::add_row(self.value(a), self.value(bias))?;
        let rg = self.needs(a) || self.needs(bias);
        Ok(self.push(out, Op::AddRow(a, bias), rg))
    }

    /// Softmax over a vector, or over each row of a matrix.
    pub fn softmax(&mut self, a: Var) -> Var {
        let out = tensor::softmax_rows(self.value(a));
        let rg = self.needs(a);
        self.push(out, Op::Softmax(a), rg)
    }

    /// Mean negative log-likelihood of `labels` under row-wise softmax of
    /// `logits` (`[b×C]`, or `[C]` for a single row).
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let t = self.value(logits);
        let (b, c) = t.dims2();
        if labels.len() != b {
            return Err(Error::shape(
                "cross_entropy",
                format!("{} labels for {} rows", labels.len(), b),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::Input(format!("label {bad} out of range for {c} classes")));
        }
        let probs = tensor::softmax_rows(t);
        let mut loss = 0.0;
        for (i, &label) in labels.iter().enumerate() {
            let row = t.row(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[label];
        }
        loss /= b as f64;
        let rg = self.needs(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs: probs.into_data(),
            },
            rg,
        ))
    }

    /// Convex merge `Σ_k code[k] · items[k]` of equally shaped tensors.
    pub fn combine(&mut self, code: Var, items: &[Var]) -> Result<Var> {
        let coeffs = self.value(code).data().to_vec();
        if coeffs.len() != items.len() || items.is_empty() {
            return Err(Error::shape(
                "combine",
                format!("{} coefficients for {} items", coeffs.len(), items.len()),
            ));
        }
        let shape = self.value(items[0]).shape().to_vec();
        if items.iter().any(|&v| self.value(v).shape() != shape.as_slice()) {
            return Err(Error::shape("combine", "items differ in shape"));
        }
        let mut out: Vec<f64> = self.value(items[0]).data().iter().map(|v| coeffs[0] * v).collect();
        for (k, &item) in items.iter().enumerate().skip(1) {
            for (o, v) in out.iter_mut().zip(self.value(item).data()) {
                *o += coeffs[k] * v;
            }
        }
        self.counters.merge_macs += (out.len() * items.len()) as u64;
        let rg = self.needs(code) || items.iter().any(|&v| self.needs(v));
        let out = Tensor::new(shape, out)?;
        Ok(self.push(
            out,
            Op::Combine {
                code,
                items: items.to_vec(),
            },
            rg,
        ))
    }

    /// Leftmost `rows × cols` block (matrices) or first `cols` entries
    /// (vectors; pass `rows = 1`).
    pub fn slice(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let out = tensor::slice_leading(self.value(a), rows, cols)?;
        let rg = self.needs(a);
        Ok(self.push(out, Op::Slice(a), rg))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (ra, ca) = ta.dims2();
        let (rb, cb) = tb.dims2();
        if ra != rb {
            return Err(Error::shape("concat_cols", format!("{ra} rows vs {rb} rows")));
        }
        let mut data = Vec::with_capacity(ra * (ca + cb));
        for i in 0..ra {
            data.extend_from_slice(ta.row(i));
            data.extend_from_slice(tb.row(i));
        }
        let shape = if ta.shape().len() == 1 && tb.shape().len() == 1 {
            vec![ca + cb]
        } else {
            vec![ra, ca + cb]
        };
        let out = Tensor::new(shape, data)?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::ConcatCols(a, b), rg))
    }

    /// Picks entries by flat index into a new vector.
    pub fn gather(&mut self, src: Var, indices: &[usize]) -> Result<Var> {
        let t = self.value(src);
        if indices.is_empty() {
            return Err(Error::shape("gather", "no indices"));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= t.len()) {
            return Err(Error::shape("gather", format!("index {bad} out of {}", t.len())));
        }
        let out = Tensor::vector(indices.iter().map(|&i| t.data()[i]).collect())?;
        let rg = self.needs(src);
        Ok(self.push(
            out,
            Op::Gather {
                src,
                indices: indices.to_vec(),
            },
            rg,
        ))
    }

    /// Row `r` of a matrix as a vector.
    pub fn row(&mut self, src: Var, r: usize) -> Result<Var> {
        let c = self.value(src).cols();
        let indices: Vec<usize> = (r * c..(r + 1) * c).collect();
        self.gather(src, &indices)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.needs(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Reverse pass from a scalar output. Gradients of earlier `backward`
    /// calls are discarded.
    pub fn backward(&mut self, output: Var) -> Result<()> {
        if !self.value(output).is_scalar() {
            return Err(Error::shape(
                "backward",
                format!("output must be scalar, got {:?}", self.value(output).shape()),
            ));
        }
        let n = self.nodes.len();
        self.grads = vec![None; n];
        self.visits = vec![0; n];
        self.grads[output.0] = Some(vec![1.0]);

        for i in (0..=output.0).rev() {
            let Some(upstream) = self.grads[i].take() else {
                continue;
            };
            self.visits[i] += 1;
            self.propagate(i, &upstream)?;
            self.grads[i] = Some(upstream);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, contribution: Vec<f64>) {
        if !self.needs(v) {
            return;
        }
        match &mut self.grads[v.0] {
            Some(g) => {
                for (a, b) in g.iter_mut().zip(contribution) {
                    *a += b;
                }
            }
            slot @ None => *slot = Some(contribution),
        }
    }

    fn propagate(&mut self, i: usize, up: &[f64]) -> Result<()> {
        if !self.nodes[i].requires_grad {
            return Ok(());
        }
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        let result = self.propagate_op(i, &op, up);
        self.nodes[i].op = op;
        result
    }

    fn propagate_op(&mut self, i: usize, op: &Op, up: &[f64]) -> Result<()> {
        match op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let (p, q) = self.value(a).dims2();
                let r = self.value(b).cols();
                let dc = Tensor::matrix(p, r, up.to_vec())?;
                let da = if self.needs(a) {
                    self.counters.backward_macs += (p * q * r) as u64;
                    Some(tensor::matmul(&dc, &tensor::transpose(self.value(b))?)?.into_data())
                } else {
                    None
                };
                let db = if self.needs(b) {
                    self.counters.backward_macs += (p * q * r) as u64;
                    Some(tensor::matmul(&tensor::transpose(self.value(a))?, &dc)?.into_data())
                } else {
                    None
                };
                if let Some(da) = da {
                    self.accumulate(a, da);
                }
                if let Some(db) = db {
                    self.accumulate(b, db);
                }
            }
            &Op::Transpose(a) => {
                let out_shape = self.nodes[i].value.shape().to_vec();
                let g = Tensor::new(out_shape, up.to_vec())?;
                let ga = tensor::transpose(&g)?.into_data();
                self.accumulate(a, ga);
            }
            &Op::Add(a, b) => {
                let ga = reduce_for(self.value(a), up, |_| 1.0);
                let gb = reduce_for(self.value(b), up, |_| 1.0);
                self.accumulate(a, ga);
                self.accumulate(b, gb);
            }
            &Op::Mul(a, b) => {
                let (ta, tb) = (self.value(a).clone(), self.value(b).clone());
                let at = |j: usize| if ta.len() == 1 { ta.data()[0] } else { ta.data()[j] };
                let bt = |j: usize| if tb.len() == 1 { tb.data()[0] } else { tb.data()[j] };
                let ga = reduce_for(&ta, up, bt);
                let gb = reduce_for(&tb, up, at);
                self.accumulate(a, ga);
                self.accumulate(b, gb);
            }
            &Op::Scale(a, f) => {
                let ga = up.iter().map(|g| g * f).collect();
                self.accumulate(a, ga);
            }
            &Op::Relu(a) => {
                // Subgradient at exactly zero is 0.
                let ga = self
                    .value(a)
                    .data()
                    .iter()
                    .zip(up)
                    .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
                    .collect();
                self.accumulate(a, ga);
            }
            &Op::AddRow(a, bias) => {
                let (r, c) = self.value(a).dims2();
                let mut gb = vec![0.0; c];
                for row in 0..r {
                    for (g, &u) in gb.iter_mut().zip(&up[row * c..(row + 1) * c]) {
                        *g += u;
                    }
                }
                self.accumulate(a, up.to_vec());
                self.accumulate(bias, gb);
            }
            &Op::Softmax(a) => {
                let y = &self.nodes[i].value;
                let (r, c) = y.dims2();
                let mut ga = vec![0.0; r * c];
                for row in 0..r {
                    let ys = &y.data()[row * c..(row + 1) * c];
                    let us = &up[row * c..(row + 1) * c];
                    let dot: f64 = ys.iter().zip(us).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        ga[row * c + j] = ys[j] * (us[j] - dot);
                    }
                }
                self.accumulate(a, ga);
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let logits = *logits;
                let b = labels.len();
                let c = probs.len() / b;
                let scale = up[0] / b as f64;
                let mut g: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                for (row, &label) in labels.iter().enumerate() {
                    g[row * c + label] -= scale;
                }
                self.accumulate(logits, g);
            }
            Op::Combine { code, items } => {
                let code = *code;
                let coeffs = self.value(code).data().to_vec();
                let len = up.len();
                if self.needs(code) {
                    let gc: Vec<f64> = items
                        .iter()
                        .map(|&v| self.value(v).data().iter().zip(up).map(|(a, b)| a * b).sum())
                        .collect();
                    self.counters.backward_macs += (len * items.len()) as u64;
                    self.accumulate(code, gc);
                }
                for (k, &item) in items.iter().enumerate() {
                    if self.needs(item) {
                        self.counters.backward_macs += len as u64;
                        let gk = up.iter().map(|g| coeffs[k] * g).collect();
                        self.accumulate(item, gk);
                    }
                }
            }
            &Op::Slice(a) => {
                let src = self.value(a);
                let (_, sc) = src.dims2();
                let (or, oc) = self.nodes[i].value.dims2();
                let mut ga = vec![0.0; src.len()];
                for row in 0..or {
                    ga[row * sc..row * sc + oc].copy_from_slice(&up[row * oc..(row + 1) * oc]);
                }
                self.accumulate(a, ga);
            }
            &Op::ConcatCols(a, b) => {
                let (r, ca) = self.value(a).dims2();
                let cb = self.value(b).cols();
                let mut ga = Vec::with_capacity(r * ca);
                let mut gb = Vec::with_capacity(r * cb);
                for row in 0..r {
                    let u = &up[row * (ca + cb)..(row + 1) * (ca + cb)];
                    ga.extend_from_slice(&u[..ca]);
                    gb.extend_from_slice(&u[ca..]);
                }
                self.accumulate(a, ga);
                self.accumulate(b, gb);
            }
            Op::Gather { src, indices } => {
                let src = *src;
                let mut g = vec![0.0; self.value(src).len()];
                for (&idx, &u) in indices.iter().zip(up) {
                    g[idx] += u;
                }
                self.accumulate(src, g);
            }
            &Op::Sum(a) => {
                let g = vec![up[0]; self.value(a).len()];
                self.accumulate(a, g);
            }
        }
        Ok(())
    }
}

/// Adjoint of a possibly-broadcast scalar operand: elementwise
/// `up[j] * partial(j)`, summed when the operand is a scalar.
fn reduce_for(operand: &Tensor, up: &[f64], partial: impl Fn(usize) -> f64) -> Vec<f64> {
    if operand.len() == up.len() {
        up.iter().enumerate().map(|(j, g)| g * partial(j)).collect()
    } else {
        vec![up.iter().enumerate().map(|(j, g)| g * partial(j)).sum()]
    }
}
