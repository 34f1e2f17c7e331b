use std::collections::HashMap;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};

use super::{ParamId, ParamStore, Real, Tensor};
use crate::error::{shape_err, Error, Result};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed)
}

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    idx: usize,
    tape: u64,
}

/// Parameter-free primitives addressable by name.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Primitive {
    Add,
    Sub,
    Mul,
    MatMul,
    Concat,
    Relu,
    Sigmoid,
    Tanh,
    Mean,
    Sum,
    AddBias,
}

impl FromStr for Primitive {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "add" => Primitive::Add,
            "sub" => Primitive::Sub,
            "mul" => Primitive::Mul,
            "matmul" => Primitive::MatMul,
            "concat" | "concat_last_axis" => Primitive::Concat,
            "relu" => Primitive::Relu,
            "sigmoid" => Primitive::Sigmoid,
            "tanh" => Primitive::Tanh,
            "mean" => Primitive::Mean,
            "sum" => Primitive::Sum,
            "add_bias" | "broadcast_add" => Primitive::AddBias,
            other => return Err(Error::UnknownPrimitive(other.to_string())),
        })
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    MatMul(usize, usize),
    Concat(Vec<usize>),
    GatherRows(usize, Vec<usize>),
    Relu(usize),
    Sigmoid(usize),
    Tanh(usize),
    MaxGroups { src: usize, argmax: Vec<usize> },
    Mean(usize),
    Sum(usize),
    AddBias(usize, usize),
    Scale(usize, T),
    Reshape(usize),
    Softmax { src: usize, outer: usize, len: usize, inner: usize },
    CrossEntropy { src: usize, targets: Vec<Option<usize>>, probs: Vec<T>, count: usize },
    SmoothL1 { src: usize, delta: T },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records operations in creation order for reverse-mode differentiation.
///
/// Creation order is a topological order, so backward is a single reverse
/// sweep. [`Tape::clear`] invalidates every outstanding [`Var`].
#[derive(Debug)]
pub struct Tape<T> {
    id: u64,
    nodes: Vec<Node<T>>,
    params: HashMap<ParamId, Var>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn softmax_dims(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let len = shape[axis];
    let inner = shape[axis + 1..].iter().product();
    (outer, len, inner)
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            id: fresh_id(),
            nodes: Vec::new(),
            params: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every node. Existing handles become stale.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.params.clear();
        self.id = fresh_id();
    }

    fn check(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.idx >= self.nodes.len() {
            return Err(Error::StaleHandle);
        }
        Ok(v.idx)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var {
            idx: self.nodes.len() - 1,
            tape: self.id,
        }
    }

    fn rg(&self, idx: usize) -> bool {
        self.nodes[idx].requires_grad
    }

    /// Differentiable leaf.
    pub fn var(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Non-differentiable leaf.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Binds a parameter as a leaf; repeated calls return the same handle.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.value(id).clone(), Op::Leaf, store.is_trainable(id));
        self.params.insert(id, v);
        v
    }

    /// The variable a parameter is bound to on this tape, if it was used.
    pub fn param_var(&self, id: ParamId) -> Option<Var> {
        self.params.get(&id).copied()
    }

    pub(crate) fn bound_params(&self) -> impl Iterator<Item = (ParamId, Var)> + '_ {
        self.params.iter().map(|(&p, &v)| (p, v))
    }

    pub fn value(&self, v: Var) -> Result<&Tensor<T>> {
        let i = self.check(v)?;
        Ok(&self.nodes[i].value)
    }

    pub fn shape(&self, v: Var) -> Result<&[usize]> {
        Ok(self.value(v)?.shape())
    }

    /// Applies a parameter-free primitive by kind.
    pub fn forward_primitive(&mut self, kind: Primitive, inputs: &[Var]) -> Result<Var> {
        let unary = |inputs: &[Var]| -> Result<Var> {
            match inputs {
                [a] => Ok(*a),
                _ => Err(Error::InvalidArgument(format!("{kind:?} takes one input"))),
            }
        };
        let binary = |inputs: &[Var]| -> Result<(Var, Var)> {
            match inputs {
                [a, b] => Ok((*a, *b)),
                _ => Err(Error::InvalidArgument(format!("{kind:?} takes two inputs"))),
            }
        };
        match kind {
            Primitive::Add => binary(inputs).and_then(|(a, b)| self.add(a, b)),
            Primitive::Sub => binary(inputs).and_then(|(a, b)| self.sub(a, b)),
            Primitive::Mul => binary(inputs).and_then(|(a, b)| self.mul(a, b)),
            Primitive::MatMul => binary(inputs).and_then(|(a, b)| self.matmul(a, b)),
            Primitive::AddBias => binary(inputs).and_then(|(a, b)| self.add_bias(a, b)),
            Primitive::Concat => self.concat(inputs),
            Primitive::Relu => unary(inputs).and_then(|a| self.relu(a)),
            Primitive::Sigmoid => unary(inputs).and_then(|a| self.sigmoid(a)),
            Primitive::Tanh => unary(inputs).and_then(|a| self.tanh(a)),
            Primitive::Mean => unary(inputs).and_then(|a| self.mean(a)),
            Primitive::Sum => unary(inputs).and_then(|a| self.sum(a)),
        }
    }

    fn zip_same(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<(usize, usize, Tensor<T>)> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (va, vb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        if va.shape() != vb.shape() {
            return Err(shape_err(op, format!("{:?} vs {:?}", va.shape(), vb.shape())));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        Ok((ia, ib, Tensor::new(va.shape().to_vec(), data)?))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib, out) = self.zip_same("add", a, b, |x, y| x + y)?;
        let rg = self.rg(ia) || self.rg(ib);
        Ok(self.push(out, Op::Add(ia, ib), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib, out) = self.zip_same("sub", a, b, |x, y| x - y)?;
        let rg = self.rg(ia) || self.rg(ib);
        Ok(self.push(out, Op::Sub(ia, ib), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib, out) = self.zip_same("mul", a, b, |x, y| x * y)?;
        let rg = self.rg(ia) || self.rg(ib);
        Ok(self.push(out, Op::Mul(ia, ib), rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (va, vb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        if va.shape().len() != 2 || vb.shape().len() != 2 || va.shape()[1] != vb.shape()[0] {
            return Err(shape_err("matmul", format!("{:?} x {:?}", va.shape(), vb.shape())));
        }
        let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
        let mut out = vec![T::zero(); m * n];
        T::gemm(m, k, n, va.data(), (k as isize, 1), vb.data(), (n as isize, 1), T::zero(), &mut out);
        let rg = self.rg(ia) || self.rg(ib);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(ia, ib), rg))
    }

    /// Concatenation along the last axis; leading axes must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Empty("concat inputs".into()));
        }
        let idx: Vec<usize> = parts.iter().map(|&p| self.check(p)).collect::<Result<_>>()?;
        let lead = self.nodes[idx[0]].value.shape()[..self.nodes[idx[0]].value.shape().len() - 1].to_vec();
        for &i in &idx {
            let s = self.nodes[i].value.shape();
            if s[..s.len() - 1] != lead[..] {
                return Err(shape_err("concat", format!("leading axes {:?} vs {:?}", &s[..s.len() - 1], lead)));
            }
        }
        let rows = self.nodes[idx[0]].value.rows();
        let width: usize = idx.iter().map(|&i| self.nodes[i].value.cols()).sum();
        let mut data = Vec::with_capacity(rows * width);
        for r in 0..rows {
            for &i in &idx {
                data.extend_from_slice(self.nodes[i].value.row(r));
            }
        }
        let mut shape = lead;
        shape.push(width);
        let rg = idx.iter().any(|&i| self.rg(i));
        Ok(self.push(Tensor::new(shape, data)?, Op::Concat(idx), rg))
    }

    /// Selects rows (last axis kept) by index; repeats allowed.
    pub fn gather_rows(&mut self, src: Var, rows: &[usize]) -> Result<Var> {
        let is = self.check(src)?;
        let v = &self.nodes[is].value;
        if rows.is_empty() {
            return Err(Error::Empty("gather_rows index list".into()));
        }
        let n = v.rows();
        let c = v.cols();
        let mut data = Vec::with_capacity(rows.len() * c);
        for &r in rows {
            if r >= n {
                return Err(Error::IndexOutOfRange { index: r, len: n });
            }
            data.extend_from_slice(v.row(r));
        }
        let rg = self.rg(is);
        Ok(self.push(Tensor::new(vec![rows.len(), c], data)?, Op::GatherRows(is, rows.to_vec()), rg))
    }

    fn map_unary(&mut self, a: Var, f: impl Fn(T) -> T, op: impl FnOnce(usize) -> Op<T>) -> Result<Var> {
        let ia = self.check(a)?;
        let v = &self.nodes[ia].value;
        let out = Tensor::new(v.shape().to_vec(), v.data().iter().map(|&x| f(x)).collect())?;
        let rg = self.rg(ia);
        Ok(self.push(out, op(ia), rg))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.map_unary(a, |x| if x > T::zero() { x } else { T::zero() }, Op::Relu)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.map_unary(a, |x| T::one() / (T::one() + (-x).exp()), Op::Sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.map_unary(a, |x| x.tanh(), Op::Tanh)
    }

    pub fn scale(&mut self, a: Var, c: T) -> Result<Var> {
        self.map_unary(a, |x| x * c, |i| Op::Scale(i, c))
    }

    /// Elementwise smooth-L1 (Huber with threshold `delta`).
    pub fn smooth_l1(&mut self, a: Var, delta: T) -> Result<Var> {
        let half = T::from_f64_lossy(0.5);
        self.map_unary(
            a,
            |x| {
                let ax = x.abs();
                if ax < delta {
                    half * x * x / delta
                } else {
                    ax - half * delta
                }
            },
            |src| Op::SmoothL1 { src, delta },
        )
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let ia = self.check(a)?;
        let out = self.nodes[ia].value.clone().reshape(shape)?;
        let rg = self.rg(ia);
        Ok(self.push(out, Op::Reshape(ia), rg))
    }

    /// Max over consecutive groups of `group` rows: `[g·n, c] -> [n, c]`.
    pub fn max_groups(&mut self, a: Var, group: usize) -> Result<Var> {
        let ia = self.check(a)?;
        let v = &self.nodes[ia].value;
        if group == 0 || v.rows() % group != 0 {
            return Err(shape_err("max_groups", format!("{} rows not divisible into groups of {group}", v.rows())));
        }
        let (rows, c) = (v.rows(), v.cols());
        let n = rows / group;
        let mut out = Vec::with_capacity(n * c);
        let mut argmax = Vec::with_capacity(n * c);
        for g in 0..n {
            for j in 0..c {
                let mut best = g * group;
                for r in g * group + 1..(g + 1) * group {
                    if v.data()[r * c + j] > v.data()[best * c + j] {
                        best = r;
                    }
                }
                out.push(v.data()[best * c + j]);
                argmax.push(best);
            }
        }
        let rg = self.rg(ia);
        Ok(self.push(Tensor::new(vec![n, c], out)?, Op::MaxGroups { src: ia, argmax }, rg))
    }

    /// Mean of all elements, as a scalar.
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let v = &self.nodes[ia].value;
        let s: T = v.data().iter().copied().sum();
        let out = Tensor::scalar(s / T::from_usize(v.len()).unwrap());
        let rg = self.rg(ia);
        Ok(self.push(out, Op::Mean(ia), rg))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let s: T = self.nodes[ia].value.data().iter().copied().sum();
        let rg = self.rg(ia);
        Ok(self.push(Tensor::scalar(s), Op::Sum(ia), rg))
    }

    /// Adds a bias vector of the last-axis width to every row.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(bias)?);
        let (va, vb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        if vb.len() != va.cols() {
            return Err(shape_err("add_bias", format!("bias {:?} for input {:?}", vb.shape(), va.shape())));
        }
        let c = va.cols();
        let data = va.data().iter().enumerate().map(|(i, &x)| x + vb.data()[i % c]).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.rg(ia) || self.rg(ib);
        Ok(self.push(out, Op::AddBias(ia, ib), rg))
    }

    /// Softmax along `axis`, computed with max subtraction.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let ia = self.check(a)?;
        let v = &self.nodes[ia].value;
        if axis >= v.shape().len() {
            return Err(Error::InvalidArgument(format!("softmax axis {axis} for shape {:?}", v.shape())));
        }
        if v.data().iter().any(|x| x.is_nan()) {
            return Err(Error::NonFinite("softmax input".into()));
        }
        let (outer, len, inner) = softmax_dims(v.shape(), axis);
        let mut out = v.data().to_vec();
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| (o * len + k) * inner + i;
                let mut mx = T::neg_infinity();
                for k in 0..len {
                    mx = mx.max(out[at(k)]);
                }
                let mut z = T::zero();
                for k in 0..len {
                    let e = (out[at(k)] - mx).exp();
                    out[at(k)] = e;
                    z += e;
                }
                for k in 0..len {
                    out[at(k)] = out[at(k)] / z;
                }
            }
        }
        let out = Tensor::new(v.shape().to_vec(), out)?;
        let rg = self.rg(ia);
        Ok(self.push(out, Op::Softmax { src: ia, outer, len, inner }, rg))
    }

    /// Mean row-wise cross-entropy of `logits` viewed as `[rows, K]`.
    ///
    /// Rows whose target is `None` are ignored; with no labelled rows the
    /// loss is exactly zero.
    pub fn cross_entropy_rows(&mut self, logits: Var, targets: &[Option<usize>]) -> Result<Var> {
        let il = self.check(logits)?;
        let v = &self.nodes[il].value;
        let (rows, k) = (v.rows(), v.cols());
        if targets.len() != rows {
            return Err(shape_err("cross_entropy", format!("{} targets for {rows} rows", targets.len())));
        }
        if v.data().iter().any(|x| x.is_nan()) {
            return Err(Error::NonFinite("cross_entropy logits".into()));
        }
        let mut probs = vec![T::zero(); rows * k];
        let mut total = T::zero();
        let mut count = 0;
        for (r, t) in targets.iter().enumerate() {
            let Some(t) = *t else { continue };
            if t >= k {
                return Err(Error::IndexOutOfRange { index: t, len: k });
            }
            let row = v.row(r);
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let z: T = row.iter().map(|&x| (x - mx).exp()).sum();
            let lse = mx + z.ln();
            total += lse - row[t];
            for j in 0..k {
                probs[r * k + j] = (row[j] - lse).exp();
            }
            count += 1;
        }
        let loss = if count == 0 {
            T::zero()
        } else {
            total / T::from_usize(count).unwrap()
        };
        let rg = self.rg(il);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                src: il,
                targets: targets.to_vec(),
                probs,
                count,
            },
            rg,
        ))
    }

    /// `-log softmax(logits)[target]` for a single logit vector.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let il = self.check(logits)?;
        let k = self.nodes[il].value.len();
        if target >= k {
            return Err(Error::IndexOutOfRange { index: target, len: k });
        }
        let flat = self.reshape(logits, &[1, k])?;
        self.cross_entropy_rows(flat, &[Some(target)])
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let il = self.check(loss)?;
        if self.nodes[il].value.len() != 1 {
            return Err(Error::NotScalar(self.nodes[il].value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[il] = Some(vec![T::one()]);

        fn acc<T: Real>(grads: &mut [Option<Vec<T>>], nodes: &[Node<T>], i: usize, f: impl FnOnce(&mut [T])) {
            if !nodes[i].requires_grad {
                return;
            }
            let g = grads[i].get_or_insert_with(|| vec![T::zero(); nodes[i].value.len()]);
            f(g);
        }

        for i in (0..=il).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let nodes = &self.nodes;
            let out = &nodes[i].value;
            match &nodes[i].op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    acc(&mut grads, nodes, *a, |ga| ga.iter_mut().zip(&g).for_each(|(x, &y)| *x += y));
                    acc(&mut grads, nodes, *b, |gb| gb.iter_mut().zip(&g).for_each(|(x, &y)| *x += y));
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, nodes, *a, |ga| ga.iter_mut().zip(&g).for_each(|(x, &y)| *x += y));
                    acc(&mut grads, nodes, *b, |gb| gb.iter_mut().zip(&g).for_each(|(x, &y)| *x = *x - y));
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (nodes[*a].value.data(), nodes[*b].value.data());
                    acc(&mut grads, nodes, *a, |ga| {
                        for j in 0..ga.len() {
                            ga[j] += g[j] * vb[j];
                        }
                    });
                    acc(&mut grads, nodes, *b, |gb| {
                        for j in 0..gb.len() {
                            gb[j] += g[j] * va[j];
                        }
                    });
                }
                Op::MatMul(a, b) => {
                    let (va, vb) = (&nodes[*a].value, &nodes[*b].value);
                    let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
                    // dA = G · B^T, dB = A^T · G
                    acc(&mut grads, nodes, *a, |ga| {
                        T::gemm(m, n, k, &g, (n as isize, 1), vb.data(), (1, n as isize), T::one(), ga)
                    });
                    acc(&mut grads, nodes, *b, |gb| {
                        T::gemm(k, m, n, va.data(), (1, k as isize), &g, (n as isize, 1), T::one(), gb)
                    });
                }
                Op::Concat(parts) => {
                    let rows = out.rows();
                    let width = out.cols();
                    let mut offset = 0;
                    for &p in parts {
                        let c = nodes[p].value.cols();
                        acc(&mut grads, nodes, p, |gp| {
                            for r in 0..rows {
                                for j in 0..c {
                                    gp[r * c + j] += g[r * width + offset + j];
                                }
                            }
                        });
                        offset += c;
                    }
                }
                Op::GatherRows(src, rows) => {
                    let c = out.cols();
                    acc(&mut grads, nodes, *src, |gs| {
                        for (o, &r) in rows.iter().enumerate() {
                            for j in 0..c {
                                gs[r * c + j] += g[o * c + j];
                            }
                        }
                    });
                }
                Op::Relu(a) => {
                    let va = nodes[*a].value.data();
                    acc(&mut grads, nodes, *a, |ga| {
                        for j in 0..ga.len() {
                            if va[j] > T::zero() {
                                ga[j] += g[j];
                            }
                        }
                    });
                }
                Op::Sigmoid(a) => {
                    let s = out.data();
                    acc(&mut grads, nodes, *a, |ga| {
                        for j in 0..ga.len() {
                            ga[j] += g[j] * s[j] * (T::one() - s[j]);
                        }
                    });
                }
                Op::Tanh(a) => {
                    let t = out.data();
                    acc(&mut grads, nodes, *a, |ga| {
                        for j in 0..ga.len() {
                            ga[j] += g[j] * (T::one() - t[j] * t[j]);
                        }
                    });
                }
                Op::Scale(a, c) => {
                    acc(&mut grads, nodes, *a, |ga| ga.iter_mut().zip(&g).for_each(|(x, &y)| *x += y * *c));
                }
                Op::SmoothL1 { src, delta } => {
                    let va = nodes[*src].value.data();
                    acc(&mut grads, nodes, *src, |ga| {
                        for j in 0..ga.len() {
                            let x = va[j];
                            let d = if x.abs() < *delta { x / *delta } else { x.signum() };
                            ga[j] += g[j] * d;
                        }
                    });
                }
                Op::Reshape(a) => {
                    acc(&mut grads, nodes, *a, |ga| ga.iter_mut().zip(&g).for_each(|(x, &y)| *x += y));
                }
                Op::MaxGroups { src, argmax } => {
                    let c = out.cols();
                    acc(&mut grads, nodes, *src, |gs| {
                        for (o, &r) in argmax.iter().enumerate() {
                            gs[r * c + o % c] += g[o];
                        }
                    });
                }
                Op::Mean(a) => {
                    let n = T::from_usize(nodes[*a].value.len()).unwrap();
                    acc(&mut grads, nodes, *a, |ga| ga.iter_mut().for_each(|x| *x += g[0] / n));
                }
                Op::Sum(a) => {
                    acc(&mut grads, nodes, *a, |ga| ga.iter_mut().for_each(|x| *x += g[0]));
                }
                Op::AddBias(a, b) => {
                    let c = out.cols();
                    acc(&mut grads, nodes, *a, |ga| ga.iter_mut().zip(&g).for_each(|(x, &y)| *x += y));
                    acc(&mut grads, nodes, *b, |gb| {
                        for (j, &y) in g.iter().enumerate() {
                            gb[j % c] += y;
                        }
                    });
                }
                Op::Softmax { src, outer, len, inner } => {
                    let s = out.data();
                    acc(&mut grads, nodes, *src, |ga| {
                        for o in 0..*outer {
                            for ii in 0..*inner {
                                let at = |k: usize| (o * len + k) * inner + ii;
                                let dot: T = (0..*len).map(|k| g[at(k)] * s[at(k)]).sum();
                                for k in 0..*len {
                                    ga[at(k)] += s[at(k)] * (g[at(k)] - dot);
                                }
                            }
                        }
                    });
                }
                Op::CrossEntropy { src, targets, probs, count } => {
                    if *count > 0 {
                        let k = nodes[*src].value.cols();
                        let scale = g[0] / T::from_usize(*count).unwrap();
                        acc(&mut grads, nodes, *src, |ga| {
                            for (r, t) in targets.iter().enumerate() {
                                let Some(t) = *t else { continue };
                                for j in 0..k {
                                    let onehot = if j == t { T::one() } else { T::zero() };
                                    ga[r * k + j] += scale * (probs[r * k + j] - onehot);
                                }
                            }
                        });
                    }
                }
            }
            grads[i] = Some(g);
        }

        Ok(Gradients {
            tape: self.id,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
            grads,
        })
    }
}

/// Result of [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients<T> {
    tape: u64,
    shapes: Vec<Vec<usize>>,
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient with respect to `v`; `None` if `v` does not influence the loss
    /// or does not require gradients.
    pub fn get(&self, v: Var) -> Option<Tensor<T>> {
        if v.tape != self.tape {
            return None;
        }
        let g = self.grads.get(v.idx)?.as_ref()?;
        Some(Tensor::new(self.shapes[v.idx].clone(), g.clone()).expect("gradient shape"))
    }

    pub(crate) fn raw(&self, v: Var) -> Option<&[T]> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get(v.idx)?.as_deref()
    }

    /// Gradient with respect to `v`, zeros when untouched.
    pub fn wrt(&self, v: Var) -> Result<Tensor<T>> {
        if v.tape != self.tape || v.idx >= self.shapes.len() {
            return Err(Error::StaleHandle);
        }
        Ok(self.get(v).unwrap_or_else(|| Tensor::zeros(&self.shapes[v.idx])))
    }
}
