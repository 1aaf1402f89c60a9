//! Reverse-mode differentiation over a linear tape.
//!
//! A [`Tape`] records every operation applied to [`Var`] handles during the
//! forward pass. [`Tape::backward`] replays it in reverse and returns one
//! gradient per parameter of the [`ParamStore`] the tape was built from.
//! Constants (data batches, stop-gradient targets) are plain leaves and
//! receive no gradient.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{softmax_in_place, Tensor};

pub type ParamId = usize;

/// Named, ordered collection of trainable tensors.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        self.values.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (i, n.as_str(), v))
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }
}

/// One gradient tensor per parameter, shaped like the parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    grads: Vec<Tensor>,
}

impl Gradients {
    pub fn zeros_like(params: &ParamStore) -> Self {
        Gradients {
            grads: params.values.iter().map(|t| Tensor::zeros(t.shape())).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.grads[id]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.grads[id]
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.grads.iter().enumerate()
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Exp(Var),
    Log { x: Var, floor: f64 },
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    NormalizeRows { x: Var, eps: f64 },
    ConcatCols(Var, Var),
    Sum(Var),
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_shapes: Vec<Vec<usize>>,
}

impl Tape {
    /// A tape whose gradients are reported against `params`.
    pub fn new(params: &ParamStore) -> Self {
        Tape {
            nodes: Vec::new(),
            param_shapes: params.values.iter().map(|t| t.shape().to_vec()).collect(),
        }
    }

    /// A tape with no trainable parameters; useful for evaluating losses on
    /// constant inputs.
    pub fn constants_only() -> Self {
        Tape::default()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, name: &'static str) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite {
                context: format!("output of `{name}`"),
            });
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, params: &ParamStore, id: ParamId) -> Var {
        debug_assert!(id < self.param_shapes.len(), "parameter {id} outside tape's store");
        self.nodes.push(Node {
            value: params.get(id).clone(),
            op: Op::Param(id),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        self.push(v, Op::MatMul(a, b), "matmul")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).transpose()?;
        self.push(v, Op::Transpose(a), "transpose")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).add(self.value(b))?;
        self.push(v, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).sub(self.value(b))?;
        self.push(v, Op::Sub(a, b), "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).mul(self.value(b))?;
        self.push(v, Op::Mul(a, b), "mul")
    }

    /// Adds a length-`n` bias to every row of an `r × n` matrix.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let xv = self.value(x);
        let bv = self.value(bias);
        let (r, c) = xv.dims2("add_row")?;
        if bv.len() != c {
            return Err(Error::shape(
                "add_row",
                format!("bias of {} values for {c} columns", bv.len()),
            ));
        }
        let mut out = xv.clone();
        for i in 0..r {
            for (o, b) in out.row_slice_mut(i).iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        self.push(out, Op::AddRow(x, bias), "add_row")
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let v = self.value(x).scale(c);
        self.push(v, Op::Scale(x, c), "scale")
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).map(|a| a.max(0.0));
        self.push(v, Op::Relu(x), "relu")
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).map(f64::exp);
        self.push(v, Op::Exp(x), "exp")
    }

    /// `ln(max(x, floor))`; entries at or below the floor get zero gradient.
    pub fn log(&mut self, x: Var, floor: f64) -> Result<Var> {
        let v = self.value(x).map(|a| a.max(floor).ln());
        self.push(v, Op::Log { x, floor }, "log")
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).softmax_rows()?;
        self.push(v, Op::SoftmaxRows(x), "softmax_rows")
    }

    pub fn log_softmax_rows(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).log_softmax_rows()?;
        self.push(v, Op::LogSoftmaxRows(x), "log_softmax_rows")
    }

    /// Scales each row to unit L2 norm. Rows with norm below `eps` are
    /// divided by `eps` instead, so a zero row maps to zero.
    pub fn normalize_rows(&mut self, x: Var, eps: f64) -> Result<Var> {
        let xv = self.value(x);
        let (r, _) = xv.dims2("normalize_rows")?;
        let mut out = xv.clone();
        for i in 0..r {
            let row = out.row_slice_mut(i);
            let n = crate::tensor::l2_norm(row).max(eps);
            for v in row.iter_mut() {
                *v /= n;
            }
        }
        self.push(out, Op::NormalizeRows { x, eps }, "normalize_rows")
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).concat_cols(self.value(b))?;
        self.push(v, Op::ConcatCols(a, b), "concat_cols")
    }

    /// Sum of all entries as a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let v = Tensor::scalar(self.value(x).sum());
        self.push(v, Op::Sum(x), "sum")
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len().max(1) as f64;
        let s = self.sum(x)?;
        self.scale(s, 1.0 / n)
    }

    /// Gradient of the scalar `loss` with respect to every parameter.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::NotScalar(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(lv.shape(), 1.0));
        let mut out: Vec<Option<Tensor>> = vec![None; self.param_shapes.len()];

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => accumulate(&mut out[*id], g)?,
                Op::MatMul(a, b) => {
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    let ga = g.matmul(&bv.transpose()?)?;
                    let gb = av.transpose()?.matmul(&g)?;
                    accumulate(&mut grads[a.0], ga)?;
                    accumulate(&mut grads[b.0], gb)?;
                }
                Op::Transpose(a) => accumulate(&mut grads[a.0], g.transpose()?)?,
                Op::Add(a, b) => {
                    accumulate(&mut grads[a.0], g.clone())?;
                    accumulate(&mut grads[b.0], g)?;
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads[b.0], g.scale(-1.0))?;
                    accumulate(&mut grads[a.0], g)?;
                }
                Op::Mul(a, b) => {
                    let ga = g.mul(self.value(*b))?;
                    let gb = g.mul(self.value(*a))?;
                    accumulate(&mut grads[a.0], ga)?;
                    accumulate(&mut grads[b.0], gb)?;
                }
                Op::AddRow(x, bias) => {
                    let (r, c) = g.dims2("add_row backward")?;
                    let mut gb = vec![0.0; c];
                    for i in 0..r {
                        for (s, v) in gb.iter_mut().zip(g.row_slice(i)) {
                            *s += v;
                        }
                    }
                    let gb = Tensor::new(self.value(*bias).shape().to_vec(), gb)?;
                    accumulate(&mut grads[bias.0], gb)?;
                    accumulate(&mut grads[x.0], g)?;
                }
                Op::Scale(x, c) => accumulate(&mut grads[x.0], g.scale(*c))?,
                Op::Relu(x) => {
                    let gx = g.zip_with(self.value(*x), "relu backward", |gi, xi| {
                        if xi > 0.0 {
                            gi
                        } else {
                            0.0
                        }
                    })?;
                    accumulate(&mut grads[x.0], gx)?;
                }
                Op::Exp(x) => {
                    let gx = g.mul(&node.value)?;
                    accumulate(&mut grads[x.0], gx)?;
                }
                Op::Log { x, floor } => {
                    let floor = *floor;
                    let gx = g.zip_with(self.value(*x), "log backward", |gi, xi| {
                        if xi > floor {
                            gi / xi
                        } else {
                            0.0
                        }
                    })?;
                    accumulate(&mut grads[x.0], gx)?;
                }
                Op::SoftmaxRows(x) => {
                    // dx = y ⊙ (g − <g, y>) per row
                    let y = &node.value;
                    let (r, _) = y.dims2("softmax backward")?;
                    let mut gx = g.clone();
                    for i in 0..r {
                        let yr = y.row_slice(i);
                        let s = crate::tensor::dot(g.row_slice(i), yr);
                        for (o, &yi) in gx.row_slice_mut(i).iter_mut().zip(yr) {
                            *o = yi * (*o - s);
                        }
                    }
                    accumulate(&mut grads[x.0], gx)?;
                }
                Op::LogSoftmaxRows(x) => {
                    // dx = g − softmax(x) · Σ g
                    let xv = self.value(*x);
                    let (r, _) = xv.dims2("log_softmax backward")?;
                    let mut gx = g.clone();
                    for i in 0..r {
                        let mut p = xv.row_slice(i).to_vec();
                        softmax_in_place(&mut p);
                        let s: f64 = g.row_slice(i).iter().sum();
                        for (o, pi) in gx.row_slice_mut(i).iter_mut().zip(p) {
                            *o -= pi * s;
                        }
                    }
                    accumulate(&mut grads[x.0], gx)?;
                }
                Op::NormalizeRows { x, eps } => {
                    // for n > eps: dx = (g − y <g, y>) / n
                    let xv = self.value(*x);
                    let y = &node.value;
                    let (r, _) = xv.dims2("normalize backward")?;
                    let mut gx = g.clone();
                    for i in 0..r {
                        let n = crate::tensor::l2_norm(xv.row_slice(i));
                        if n > *eps {
                            let yr = y.row_slice(i);
                            let s = crate::tensor::dot(g.row_slice(i), yr);
                            for (o, &yi) in gx.row_slice_mut(i).iter_mut().zip(yr) {
                                *o = (*o - yi * s) / n;
                            }
                        } else {
                            for o in gx.row_slice_mut(i) {
                                *o /= eps;
                            }
                        }
                    }
                    accumulate(&mut grads[x.0], gx)?;
                }
                Op::ConcatCols(a, b) => {
                    let (r, c) = g.dims2("concat backward")?;
                    let ca = self.value(*a).cols();
                    let mut ga = Vec::with_capacity(r * ca);
                    let mut gb = Vec::with_capacity(r * (c - ca));
                    for i in 0..r {
                        let row = g.row_slice(i);
                        ga.extend_from_slice(&row[..ca]);
                        gb.extend_from_slice(&row[ca..]);
                    }
                    accumulate(&mut grads[a.0], Tensor::new(vec![r, ca], ga)?)?;
                    accumulate(&mut grads[b.0], Tensor::new(vec![r, c - ca], gb)?)?;
                }
                Op::Sum(x) => {
                    let gx = Tensor::full(self.value(*x).shape(), g.item()?);
                    accumulate(&mut grads[x.0], gx)?;
                }
            }
        }

        let grads = out
            .into_iter()
            .zip(&self.param_shapes)
            .map(|(g, shape)| g.unwrap_or_else(|| Tensor::zeros(shape)))
            .collect();
        Ok(Gradients { grads })
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) -> Result<()> {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => {
            *slot = Some(g);
            Ok(())
        }
    }
}
