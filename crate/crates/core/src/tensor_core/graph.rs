//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every intermediate value in creation order, which is
//! also a topological order, so the backward sweep is a single reverse scan.
//! One graph belongs to one thread of execution.

use crate::encoders::position_weights;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor_core::ops::{self, ActivationKind, NormMode, RunningStats};
use crate::tensor_core::Tensor;

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Activation(Var, ActivationKind),
    Softmax(Var),
    Concat(Vec<Var>),
    StackRows(Vec<Var>),
    SliceRows(Var, usize),
    Row(Var, usize),
    Gather(Var, Vec<usize>),
    MeanRows(Var),
    Sum(Vec<Var>),
    Conv1d(Var, Var, Var),
    MaxPool(Var, Vec<usize>),
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        mode: NormMode,
    },
    Cosine(Var, Var, T),
    PositionalEncode(Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value.data()[0]
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = ops::matmul(self.value(a), self.value(b))?;
        let g = self.any_grad(&[a, b]);
        Ok(self.push(y, Op::MatMul(a, b), g))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let y = self.value(a).transpose()?;
        let g = self.any_grad(&[a]);
        Ok(self.push(y, Op::Transpose(a), g))
    }

    fn binary(&mut self, a: Var, b: Var, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(Error::dim(op, x.shape(), y.shape()));
        }
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        Tensor::new(x.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.binary(a, b, "add", |p, q| p + q)?;
        let g = self.any_grad(&[a, b]);
        Ok(self.push(y, Op::Add(a, b), g))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.binary(a, b, "sub", |p, q| p - q)?;
        let g = self.any_grad(&[a, b]);
        Ok(self.push(y, Op::Sub(a, b), g))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.binary(a, b, "mul", |p, q| p * q)?;
        let g = self.any_grad(&[a, b]);
        Ok(self.push(y, Op::Mul(a, b), g))
    }

    /// Adds vector `row` to every row of matrix `m`.
    pub fn add_row(&mut self, m: Var, row: Var) -> Result<Var> {
        let (rows, cols) = self.value(m).dims2()?;
        if self.shape(row) != [cols] {
            return Err(Error::dim("add_row", self.shape(m), self.shape(row)));
        }
        let r = self.value(row).data().to_vec();
        let mut y = self.value(m).clone();
        for i in 0..rows {
            for (o, &v) in y.data_mut()[i * cols..(i + 1) * cols].iter_mut().zip(&r) {
                *o += v;
            }
        }
        let g = self.any_grad(&[m, row]);
        Ok(self.push(y, Op::AddRow(m, row), g))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let y = self.value(a).scale(c);
        let g = self.any_grad(&[a]);
        self.push(y, Op::Scale(a, c), g)
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Var {
        let y = self.value(a).map(|x| x + c);
        let g = self.any_grad(&[a]);
        self.push(y, Op::AddScalar(a), g)
    }

    pub fn activation(&mut self, a: Var, kind: ActivationKind) -> Result<Var> {
        let y = ops::activation(self.value(a), kind)?;
        let g = self.any_grad(&[a]);
        Ok(self.push(y, Op::Activation(a, kind), g))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.activation(a, ActivationKind::Tanh)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.activation(a, ActivationKind::Relu)
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let y = ops::softmax(self.value(a))?;
        let g = self.any_grad(&[a]);
        Ok(self.push(y, Op::Softmax(a), g))
    }

    /// Concatenates vectors end to end.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let mut data = Vec::new();
        for &p in parts {
            let v = self.value(p);
            if v.rank() != 1 {
                return Err(Error::Shape(format!("concat expects vectors, got {:?}", v.shape())));
            }
            data.extend_from_slice(v.data());
        }
        if data.is_empty() {
            return Err(Error::EmptyInput("concat"));
        }
        let g = self.any_grad(parts);
        Ok(self.push(Tensor::vector(data), Op::Concat(parts.to_vec()), g))
    }

    /// Stacks equally long vectors into the rows of a matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var> {
        let first = rows.first().ok_or(Error::EmptyInput("stack_rows"))?;
        let width = self.value(*first).len();
        let mut data = Vec::with_capacity(rows.len() * width);
        for &r in rows {
            let v = self.value(r);
            if v.rank() != 1 || v.len() != width {
                return Err(Error::dim("stack_rows", &[width], v.shape()));
            }
            data.extend_from_slice(v.data());
        }
        let y = Tensor::new(vec![rows.len(), width], data)?;
        let g = self.any_grad(rows);
        Ok(self.push(y, Op::StackRows(rows.to_vec()), g))
    }

    /// Rows `start..start + len` of a matrix.
    pub fn slice_rows(&mut self, m: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = self.value(m).dims2()?;
        if len == 0 || start + len > rows {
            return Err(Error::Shape(format!(
                "row slice {start}..{} out of range for {rows} rows",
                start + len
            )));
        }
        let data = self.value(m).data()[start * cols..(start + len) * cols].to_vec();
        let y = Tensor::new(vec![len, cols], data)?;
        let g = self.any_grad(&[m]);
        Ok(self.push(y, Op::SliceRows(m, start), g))
    }

    /// Row `i` of a matrix as a vector.
    pub fn row(&mut self, m: Var, i: usize) -> Result<Var> {
        let (rows, _) = self.value(m).dims2()?;
        if i >= rows {
            return Err(Error::Shape(format!("row {i} out of range for {rows} rows")));
        }
        let y = Tensor::vector(self.value(m).row(i).to_vec());
        let g = self.any_grad(&[m]);
        Ok(self.push(y, Op::Row(m, i), g))
    }

    /// Selects rows of a table by index (embedding lookup).
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (rows, cols) = self.value(table).dims2()?;
        if ids.is_empty() {
            return Err(Error::EmptyInput("gather"));
        }
        let mut data = Vec::with_capacity(ids.len() * cols);
        for &id in ids {
            if id >= rows {
                return Err(Error::Shape(format!("gather index {id} out of range for {rows} rows")));
            }
            data.extend_from_slice(self.value(table).row(id));
        }
        let y = Tensor::new(vec![ids.len(), cols], data)?;
        let g = self.any_grad(&[table]);
        Ok(self.push(y, Op::Gather(table, ids.to_vec()), g))
    }

    pub fn mean_rows(&mut self, m: Var) -> Result<Var> {
        let (rows, cols) = self.value(m).dims2()?;
        let mut acc = vec![T::zero(); cols];
        for r in self.value(m).data().chunks(cols) {
            for (a, &v) in acc.iter_mut().zip(r) {
                *a += v;
            }
        }
        let n = T::of(rows as f64);
        acc.iter_mut().for_each(|a| *a /= n);
        let g = self.any_grad(&[m]);
        Ok(self.push(Tensor::vector(acc), Op::MeanRows(m), g))
    }

    pub fn sum(&mut self, terms: &[Var]) -> Result<Var> {
        let first = terms.first().ok_or(Error::EmptyInput("sum"))?;
        let mut acc = self.value(*first).clone();
        for &t in &terms[1..] {
            let v = self.value(t);
            if v.shape() != acc.shape() {
                return Err(Error::dim("sum", acc.shape(), v.shape()));
            }
            acc.add_assign(v);
        }
        let g = self.any_grad(terms);
        Ok(self.push(acc, Op::Sum(terms.to_vec()), g))
    }

    pub fn conv1d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = ops::conv1d(self.value(x), self.value(w), self.value(b))?;
        let g = self.any_grad(&[x, w, b]);
        Ok(self.push(y, Op::Conv1d(x, w, b), g))
    }

    pub fn maxpool1d(&mut self, x: Var) -> Result<Var> {
        let (y, idx) = ops::maxpool1d(self.value(x))?;
        let g = self.any_grad(&[x]);
        Ok(self.push(y, Op::MaxPool(x, idx), g))
    }

    pub fn batchnorm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: &mut RunningStats<T>,
        mode: NormMode,
    ) -> Result<Var> {
        let (y, cache) =
            ops::batchnorm_forward(self.value(x), self.value(gamma), self.value(beta), stats, mode)?;
        let g = self.any_grad(&[x, gamma, beta]);
        Ok(self.push(
            y,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat: cache.xhat,
                inv_std: cache.inv_std,
                mode,
            },
            g,
        ))
    }

    /// Cosine similarity as a one-element tensor; `eps == 0` is strict.
    pub fn cosine(&mut self, a: Var, b: Var, eps: T) -> Result<Var> {
        let c = ops::cosine_similarity_eps(self.value(a), self.value(b), eps)?;
        let g = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::scalar(c), Op::Cosine(a, b, eps), g))
    }

    /// Order-aware weighted sum of the rows of an `L×d` matrix.
    pub fn positional_encode(&mut self, elems: Var) -> Result<Var> {
        let y = crate::encoders::positional_encode(self.value(elems))?;
        let g = self.any_grad(&[elems]);
        Ok(self.push(y, Op::PositionalEncode(elems), g))
    }

    /// Reverse sweep from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.shape(loss), T::one()));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, delta: Tensor<T>) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        }
    }

    /// Hands the gradient buffer of `v` to `f`, allocating it on first use.
    fn accumulate_with(&self, grads: &mut [Option<Tensor<T>>], v: Var, f: impl FnOnce(&mut [T])) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        let slot = &mut grads[v.0];
        if slot.is_none() {
            *slot = Some(Tensor::zeros(self.shape(v)));
        }
        f(slot.as_mut().expect("allocated").data_mut());
    }

    fn propagate(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let out = &self.nodes[i].value;
        let gd = g.data();
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (p, q, r, _) = ops::matmul_dims(av.shape(), bv.shape())?;
                // dA[p×q] = G[p×r] · Bᵀ
                self.accumulate_with(grads, *a, |da| {
                    let bd = bv.data();
                    for ii in 0..p {
                        let grow = &gd[ii * r..(ii + 1) * r];
                        for k in 0..q {
                            let brow = &bd[k * r..(k + 1) * r];
                            let s: T = grow.iter().zip(brow).map(|(&x, &y)| x * y).sum();
                            da[ii * q + k] += s;
                        }
                    }
                });
                // dB[q×r] = Aᵀ · G
                self.accumulate_with(grads, *b, |db| {
                    let ad = av.data();
                    for ii in 0..p {
                        let grow = &gd[ii * r..(ii + 1) * r];
                        for k in 0..q {
                            let aik = ad[ii * q + k];
                            if aik == T::zero() {
                                continue;
                            }
                            for (o, &gv) in db[k * r..(k + 1) * r].iter_mut().zip(grow) {
                                *o += aik * gv;
                            }
                        }
                    }
                });
            }
            Op::Transpose(a) => self.accumulate(grads, *a, g.transpose()?),
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.scale(-T::one()));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                self.accumulate_with(grads, *a, |d| {
                    for ((o, &gv), &y) in d.iter_mut().zip(gd).zip(bv.data()) {
                        *o += gv * y;
                    }
                });
                self.accumulate_with(grads, *b, |d| {
                    for ((o, &gv), &x) in d.iter_mut().zip(gd).zip(av.data()) {
                        *o += gv * x;
                    }
                });
            }
            Op::AddRow(m, row) => {
                self.accumulate(grads, *m, g.clone());
                let cols = self.value(*row).len();
                self.accumulate_with(grads, *row, |d| {
                    for r in gd.chunks(cols) {
                        for (o, &v) in d.iter_mut().zip(r) {
                            *o += v;
                        }
                    }
                });
            }
            Op::Scale(a, c) => self.accumulate(grads, *a, g.scale(*c)),
            Op::AddScalar(a) => self.accumulate(grads, *a, g.clone()),
            Op::Activation(a, kind) => {
                let kind = *kind;
                let xv = self.value(*a);
                self.accumulate_with(grads, *a, |d| match kind {
                    ActivationKind::Tanh => {
                        for ((o, &gv), &y) in d.iter_mut().zip(gd).zip(out.data()) {
                            *o += gv * (T::one() - y * y);
                        }
                    }
                    ActivationKind::Relu => {
                        for ((o, &gv), &x) in d.iter_mut().zip(gd).zip(xv.data()) {
                            if x > T::zero() {
                                *o += gv;
                            }
                        }
                    }
                });
            }
            Op::Softmax(a) => {
                let y = out.data();
                let dot: T = y.iter().zip(gd).map(|(&p, &q)| p * q).sum();
                self.accumulate_with(grads, *a, |d| {
                    for ((o, &yv), &gv) in d.iter_mut().zip(y).zip(gd) {
                        *o += yv * (gv - dot);
                    }
                });
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    let piece = &gd[off..off + n];
                    self.accumulate_with(grads, p, |d| {
                        for (o, &v) in d.iter_mut().zip(piece) {
                            *o += v;
                        }
                    });
                    off += n;
                }
            }
            Op::StackRows(rows) => {
                let w = self.value(rows[0]).len();
                for (k, &r) in rows.iter().enumerate() {
                    let piece = &gd[k * w..(k + 1) * w];
                    self.accumulate_with(grads, r, |d| {
                        for (o, &v) in d.iter_mut().zip(piece) {
                            *o += v;
                        }
                    });
                }
            }
            Op::SliceRows(m, start) => {
                let cols = self.value(*m).shape()[1];
                let off = start * cols;
                self.accumulate_with(grads, *m, |d| {
                    for (o, &v) in d[off..off + gd.len()].iter_mut().zip(gd) {
                        *o += v;
                    }
                });
            }
            Op::Row(m, r) => {
                let cols = gd.len();
                let off = r * cols;
                self.accumulate_with(grads, *m, |d| {
                    for (o, &v) in d[off..off + cols].iter_mut().zip(gd) {
                        *o += v;
                    }
                });
            }
            Op::Gather(table, ids) => {
                let cols = self.value(*table).shape()[1];
                self.accumulate_with(grads, *table, |d| {
                    for (k, &id) in ids.iter().enumerate() {
                        for (o, &v) in d[id * cols..(id + 1) * cols].iter_mut().zip(&gd[k * cols..(k + 1) * cols]) {
                            *o += v;
                        }
                    }
                });
            }
            Op::MeanRows(m) => {
                let rows = self.value(*m).shape()[0];
                let inv = T::one() / T::of(rows as f64);
                self.accumulate_with(grads, *m, |d| {
                    for r in d.chunks_mut(gd.len()) {
                        for (o, &v) in r.iter_mut().zip(gd) {
                            *o += v * inv;
                        }
                    }
                });
            }
            Op::Sum(terms) => {
                for &t in terms {
                    self.accumulate(grads, t, g.clone());
                }
            }
            Op::Conv1d(x, w, b) => self.conv1d_backward(*x, *w, *b, gd, grads)?,
            Op::MaxPool(x, idx) => {
                self.accumulate_with(grads, *x, |d| {
                    for (&src, &v) in idx.iter().zip(gd) {
                        d[src] += v;
                    }
                });
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                mode,
            } => {
                let (b, f) = self.value(*x).dims2()?;
                let gam = self.value(*gamma).data();
                self.accumulate_with(grads, *beta, |d| {
                    for r in gd.chunks(f) {
                        for (o, &v) in d.iter_mut().zip(r) {
                            *o += v;
                        }
                    }
                });
                self.accumulate_with(grads, *gamma, |d| {
                    for (r, h) in gd.chunks(f).zip(xhat.chunks(f)) {
                        for ((o, &v), &hv) in d.iter_mut().zip(r).zip(h) {
                            *o += v * hv;
                        }
                    }
                });
                let mode = *mode;
                self.accumulate_with(grads, *x, |d| match mode {
                    NormMode::Eval => {
                        for (k, (o, &v)) in d.iter_mut().zip(gd).enumerate() {
                            let j = k % f;
                            *o += v * gam[j] * inv_std[j];
                        }
                    }
                    NormMode::Train => {
                        let n = T::of(b as f64);
                        let mut sum_dh = vec![T::zero(); f];
                        let mut sum_dh_h = vec![T::zero(); f];
                        for (k, (&v, &h)) in gd.iter().zip(xhat).enumerate() {
                            let j = k % f;
                            let dh = v * gam[j];
                            sum_dh[j] += dh;
                            sum_dh_h[j] += dh * h;
                        }
                        for (k, (o, (&v, &h))) in d.iter_mut().zip(gd.iter().zip(xhat)).enumerate() {
                            let j = k % f;
                            let dh = v * gam[j];
                            *o += inv_std[j] / n * (n * dh - sum_dh[j] - h * sum_dh_h[j]);
                        }
                    }
                });
            }
            Op::Cosine(a, b, eps) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (na, nb) = (av.norm().max(*eps), bv.norm().max(*eps));
                let c = out.data()[0];
                let gv = gd[0];
                let inv = T::one() / (na * nb);
                // norms below the floor are constants, so drop the c·x/|x|² term
                let ka = if av.norm() > *eps { c / (na * na) } else { T::zero() };
                let kb = if bv.norm() > *eps { c / (nb * nb) } else { T::zero() };
                self.accumulate_with(grads, *a, |d| {
                    for ((o, &x), &y) in d.iter_mut().zip(av.data()).zip(bv.data()) {
                        *o += gv * (y * inv - ka * x);
                    }
                });
                self.accumulate_with(grads, *b, |d| {
                    for ((o, &x), &y) in d.iter_mut().zip(av.data()).zip(bv.data()) {
                        *o += gv * (x * inv - kb * y);
                    }
                });
            }
            Op::PositionalEncode(m) => {
                let (l, dim) = self.value(*m).dims2()?;
                let weights: Tensor<T> = position_weights(l, dim);
                self.accumulate_with(grads, *m, |d| {
                    for (o, (&w, k)) in d.iter_mut().zip(weights.data().iter().zip((0..dim).cycle())) {
                        *o += w * gd[k];
                    }
                });
            }
        }
        Ok(())
    }

    fn conv1d_backward(
        &self,
        x: Var,
        w: Var,
        b: Var,
        gd: &[T],
        grads: &mut [Option<Tensor<T>>],
    ) -> Result<()> {
        let (xv, wv) = (self.value(x), self.value(w));
        let (t_len, c_in, k, c_out) = ops::conv_dims(xv.shape(), wv.shape(), self.shape(b))?;
        let half = k / 2;
        self.accumulate_with(grads, b, |d| {
            for r in gd.chunks(c_out) {
                for (o, &v) in d.iter_mut().zip(r) {
                    *o += v;
                }
            }
        });
        let taps = |t: usize| {
            (0..k).filter_map(move |dk| (t + dk).checked_sub(half).filter(|&s| s < t_len).map(|s| (dk, s)))
        };
        self.accumulate_with(grads, w, |dw| {
            let xd = xv.data();
            for t in 0..t_len {
                let grow = &gd[t * c_out..(t + 1) * c_out];
                for (dk, src) in taps(t) {
                    for c in 0..c_in {
                        let xval = xd[src * c_in + c];
                        if xval == T::zero() {
                            continue;
                        }
                        let base = (dk * c_in + c) * c_out;
                        for (o, &gv) in dw[base..base + c_out].iter_mut().zip(grow) {
                            *o += xval * gv;
                        }
                    }
                }
            }
        });
        self.accumulate_with(grads, x, |dx| {
            let wd = wv.data();
            for t in 0..t_len {
                let grow = &gd[t * c_out..(t + 1) * c_out];
                for (dk, src) in taps(t) {
                    for c in 0..c_in {
                        let base = (dk * c_in + c) * c_out;
                        let s: T = wd[base..base + c_out].iter().zip(grow).map(|(&a, &g)| a * g).sum();
                        dx[src * c_in + c] += s;
                    }
                }
            }
        });
        Ok(())
    }
}
