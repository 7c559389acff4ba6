//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Tape`] records every operation as it is evaluated. Nodes are appended
//! in evaluation order, so the node list is already topologically sorted and
//! [`Tape::backward`] is a single reverse sweep.
//!
//! Parameters are not copied onto the tape: a parameter leaf borrows its value
//! from the [`ParamStore`] and its gradient is reported per [`ParamId`].

use std::sync::atomic::{AtomicU32, Ordering};

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{dot, sigmoid, Real, Tensor};

static NEXT_TAPE: AtomicU32 = AtomicU32::new(1);

/// Lower/upper clamp applied to probabilities inside the cross-entropy loss.
pub const PROB_EPS: f64 = 1e-7;

/// Handle to a value recorded on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u32,
    idx: u32,
}

impl Var {
    fn i(self) -> usize {
        self.idx as usize
    }
}

#[derive(Clone, Debug)]
enum Op<F> {
    Input,
    Param(ParamId),
    MatMul(usize, usize),
    MatVec(usize, usize),
    Affine(usize, usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, F),
    Tanh(usize),
    Sigmoid(usize),
    Relu(usize),
    Concat(Vec<usize>),
    Stack(Vec<usize>),
    Sum(usize),
    Mean(usize),
    MeanRows(usize, Option<Vec<bool>>),
    Row(usize, usize),
    Slice(usize, usize),
    Gather(usize, Vec<usize>),
    Softmax(usize),
    Bce(usize, F),
}

struct Node<F> {
    op: Op<F>,
    // `None` only for parameter leaves, whose value lives in the store.
    value: Option<Tensor<F>>,
}

pub struct Tape<'p, F: Real> {
    id: u32,
    params: Option<&'p ParamStore<F>>,
    param_vars: Vec<Option<Var>>,
    nodes: Vec<Node<F>>,
}

/// Gradients produced by one backward sweep.
pub struct Gradients<F> {
    tape: u32,
    nodes: Vec<Option<Vec<F>>>,
    params: Vec<Option<Vec<F>>>,
}

impl<F: Real> Gradients<F> {
    /// Gradient of the loss with respect to `v`, if `v` is reachable from the loss.
    pub fn wrt(&self, v: Var) -> Option<&[F]> {
        if v.tape != self.tape {
            return None;
        }
        self.nodes.get(v.i()).and_then(|g| g.as_deref())
    }

    pub fn param(&self, id: ParamId) -> Option<&[F]> {
        self.params.get(id.index()).and_then(|g| g.as_deref())
    }

    /// Moves parameter gradients out, indexed by [`ParamId::index`].
    pub fn into_param_grads(self) -> Vec<Option<Vec<F>>> {
        self.params
    }
}

fn shape_err(op: &'static str, a: &[usize], b: &[usize]) -> Error {
    Error::Shape {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    }
}

impl<'p, F: Real> Tape<'p, F> {
    /// A tape with no parameter store; only [`Tape::input`] leaves are available.
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            params: None,
            param_vars: Vec::new(),
            nodes: Vec::new(),
        }
    }

    pub fn with_params(params: &'p ParamStore<F>) -> Self {
        Tape {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            params: Some(params),
            param_vars: vec![None; params.len()],
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op<F>, value: Tensor<F>) -> Var {
        self.nodes.push(Node {
            op,
            value: Some(value),
        });
        Var {
            tape: self.id,
            idx: (self.nodes.len() - 1) as u32,
        }
    }

    fn check(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.i() >= self.nodes.len() {
            return Err(Error::Detached);
        }
        Ok(v.i())
    }

    fn val(&self, i: usize) -> &Tensor<F> {
        match &self.nodes[i].value {
            Some(t) => t,
            None => match self.nodes[i].op {
                Op::Param(id) => self.params.expect("parameter tape").value(id),
                _ => unreachable!("only parameter leaves are stored externally"),
            },
        }
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        self.val(self.check(v).expect("var belongs to this tape"))
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    /// A differentiable leaf holding `t`.
    pub fn input(&mut self, t: Tensor<F>) -> Var {
        self.push(Op::Input, t)
    }

    /// Leaf for a stored parameter. Repeated calls return the same variable.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.index()] {
            return v;
        }
        assert!(self.params.is_some(), "tape has no parameter store");
        self.nodes.push(Node {
            op: Op::Param(id),
            value: None,
        });
        let v = Var {
            tape: self.id,
            idx: (self.nodes.len() - 1) as u32,
        };
        self.param_vars[id.index()] = Some(v);
        v
    }

    /// `a · b` with `a` of shape `[m, k]` (or a `[k]` row vector) and `b` of shape `[k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let out = matmul_values(self.val(ia), self.val(ib), None)?;
        Ok(self.push(Op::MatMul(ia, ib), out))
    }

    /// `x · w + b`; `x` is `[k]` or `[m, k]`, `w` is `[k, n]`, `b` is `[n]`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (ix, iw, ib) = (self.check(x)?, self.check(w)?, self.check(b)?);
        let out = matmul_values(self.val(ix), self.val(iw), Some(self.val(ib)))?;
        Ok(self.push(Op::Affine(ix, iw, ib), out))
    }

    /// Matrix `[n, d]` times vector `[d]`, giving `[n]`.
    pub fn matvec(&mut self, m: Var, v: Var) -> Result<Var> {
        let (im, iv) = (self.check(m)?, self.check(v)?);
        let (mt, vt) = (self.val(im), self.val(iv));
        if mt.rank() != 2 || vt.rank() != 1 || mt.cols() != vt.len() {
            return Err(shape_err("matvec", mt.shape(), vt.shape()));
        }
        let out: Vec<F> = (0..mt.rows()).map(|r| dot(mt.row(r), vt.data())).collect();
        Ok(self.push(Op::MatVec(im, iv), Tensor::vector(out)))
    }

    fn zip(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(F, F) -> F) -> Result<(usize, usize, Tensor<F>)> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (ta, tb) = (self.val(ia), self.val(ib));
        if ta.shape() != tb.shape() {
            return Err(shape_err(name, ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        Ok((ia, ib, Tensor::new(ta.shape().to_vec(), data)?))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib, out) = self.zip(a, b, "add", |x, y| x + y)?;
        Ok(self.push(Op::Add(ia, ib), out))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib, out) = self.zip(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(Op::Sub(ia, ib), out))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib, out) = self.zip(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(Op::Mul(ia, ib), out))
    }

    pub fn scale(&mut self, a: Var, c: F) -> Result<Var> {
        let ia = self.check(a)?;
        let out = self.map_value(ia, |x| x * c);
        Ok(self.push(Op::Scale(ia, c), out))
    }

    fn map_value(&self, i: usize, f: impl Fn(F) -> F) -> Tensor<F> {
        let t = self.val(i);
        Tensor::new(t.shape().to_vec(), t.data().iter().map(|x| f(*x)).collect()).expect("same shape")
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let out = self.map_value(ia, F::tanh);
        Ok(self.push(Op::Tanh(ia), out))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let out = self.map_value(ia, sigmoid);
        Ok(self.push(Op::Sigmoid(ia), out))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let out = self.map_value(ia, |x| if x > F::zero() { x } else { F::zero() });
        Ok(self.push(Op::Relu(ia), out))
    }

    /// Concatenates vectors end to end.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let mut idx = Vec::with_capacity(parts.len());
        let mut data = Vec::new();
        for &p in parts {
            let i = self.check(p)?;
            let t = self.val(i);
            if t.rank() != 1 {
                return Err(shape_err("concat", t.shape(), &[]));
            }
            data.extend_from_slice(t.data());
            idx.push(i);
        }
        if idx.is_empty() {
            return Err(Error::invalid("concat of nothing"));
        }
        Ok(self.push(Op::Concat(idx), Tensor::vector(data)))
    }

    /// Stacks vectors (one row each) and matrices into one matrix.
    pub fn stack(&mut self, parts: &[Var]) -> Result<Var> {
        let mut idx = Vec::with_capacity(parts.len());
        let mut data = Vec::new();
        let mut rows = 0;
        let mut cols = None;
        for &p in parts {
            let i = self.check(p)?;
            let t = self.val(i);
            if t.rank() > 2 {
                return Err(shape_err("stack", t.shape(), &[]));
            }
            match cols {
                None => cols = Some(t.cols()),
                Some(c) if c != t.cols() => return Err(shape_err("stack", &[c], t.shape())),
                _ => {}
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
            idx.push(i);
        }
        let cols = cols.ok_or_else(|| Error::invalid("stack of nothing"))?;
        Ok(self.push(Op::Stack(idx), Tensor::new(vec![rows, cols], data)?))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let s = self.val(ia).data().iter().copied().sum();
        Ok(self.push(Op::Sum(ia), Tensor::scalar(s)))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let t = self.val(ia);
        let s: F = t.data().iter().copied().sum();
        let m = s / F::of(t.len() as f64);
        Ok(self.push(Op::Mean(ia), Tensor::scalar(m)))
    }

    /// Mean of the rows of a matrix, restricted to rows where `mask` is true.
    pub fn mean_rows(&mut self, a: Var, mask: Option<&[bool]>) -> Result<Var> {
        let ia = self.check(a)?;
        let t = self.val(ia);
        if t.rank() != 2 {
            return Err(shape_err("mean_rows", t.shape(), &[]));
        }
        if let Some(m) = mask {
            if m.len() != t.rows() {
                return Err(shape_err("mean_rows", t.shape(), &[m.len()]));
            }
        }
        let keep = |r: usize| mask.is_none_or(|m| m[r]);
        let n = (0..t.rows()).filter(|&r| keep(r)).count();
        if n == 0 {
            return Err(Error::AllMasked);
        }
        let mut out = vec![F::zero(); t.cols()];
        for r in (0..t.rows()).filter(|&r| keep(r)) {
            for (o, x) in out.iter_mut().zip(t.row(r)) {
                *o = *o + *x;
            }
        }
        let inv = F::of(n as f64);
        out.iter_mut().for_each(|o| *o = *o / inv);
        Ok(self.push(Op::MeanRows(ia, mask.map(<[bool]>::to_vec)), Tensor::vector(out)))
    }

    /// Row `r` of a matrix as a vector.
    pub fn row(&mut self, a: Var, r: usize) -> Result<Var> {
        let ia = self.check(a)?;
        let t = self.val(ia);
        if t.rank() != 2 || r >= t.rows() {
            return Err(shape_err("row", t.shape(), &[r]));
        }
        let out = Tensor::vector(t.row(r).to_vec());
        Ok(self.push(Op::Row(ia, r), out))
    }

    /// Elements `start..end` of a vector.
    pub fn slice(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let ia = self.check(a)?;
        let t = self.val(ia);
        if t.rank() != 1 || start >= end || end > t.len() {
            return Err(shape_err("slice", t.shape(), &[start, end]));
        }
        let out = Tensor::vector(t.data()[start..end].to_vec());
        Ok(self.push(Op::Slice(ia, start), out))
    }

    /// Selects rows of `table` by index; repeated indices share gradient accumulation.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let it = self.check(table)?;
        let t = self.val(it);
        if t.rank() != 2 {
            return Err(shape_err("gather", t.shape(), &[]));
        }
        if ids.is_empty() {
            return Err(Error::invalid("gather of no rows"));
        }
        let mut data = Vec::with_capacity(ids.len() * t.cols());
        for &id in ids {
            if id >= t.rows() {
                return Err(Error::TokenOutOfRange { id, vocab: t.rows() });
            }
            data.extend_from_slice(t.row(id));
        }
        let out = Tensor::new(vec![ids.len(), t.cols()], data)?;
        Ok(self.push(Op::Gather(it, ids.to_vec()), out))
    }

    /// Max-stabilized softmax of a vector; masked entries come out exactly zero.
    pub fn softmax(&mut self, a: Var, mask: Option<&[bool]>) -> Result<Var> {
        let ia = self.check(a)?;
        let t = self.val(ia);
        if t.rank() != 1 {
            return Err(shape_err("softmax", t.shape(), &[]));
        }
        let out = softmax_values(t.data(), mask)?;
        Ok(self.push(Op::Softmax(ia), Tensor::vector(out)))
    }

    /// Binary cross-entropy of a probability against a 0/1 label.
    pub fn bce(&mut self, p: Var, label: F) -> Result<Var> {
        let ip = self.check(p)?;
        let t = self.val(ip);
        if t.len() != 1 {
            return Err(shape_err("bce", t.shape(), &[1]));
        }
        let loss = bce_value(t.data()[0], label);
        Ok(self.push(Op::Bce(ip, label), Tensor::scalar(loss)))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<F>> {
        let il = self.check(loss)?;
        let lt = self.val(il);
        if lt.len() != 1 {
            return Err(Error::invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                lt.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<F>>> = vec![None; il + 1];
        grads[il] = Some(vec![F::one()]);
        let n_params = self.params.map_or(0, |p| p.len());
        let mut param_grads: Vec<Option<Vec<F>>> = vec![None; n_params];

        for i in (0..=il).rev() {
            let Some(g) = grads[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Input => {}
                Op::Param(id) => {
                    accumulate(&mut param_grads[id.index()], &g);
                }
                Op::MatMul(a, b) => {
                    matmul_grads(&mut grads, (*a, self.val(*a)), (*b, self.val(*b)), &g);
                }
                Op::Affine(x, w, b) => {
                    matmul_grads(&mut grads, (*x, self.val(*x)), (*w, self.val(*w)), &g);
                    let n = self.val(*b).len();
                    let gb = grads_slot(&mut grads, *b, n);
                    for chunk in g.chunks(n) {
                        for (o, v) in gb.iter_mut().zip(chunk) {
                            *o = *o + *v;
                        }
                    }
                }
                Op::MatVec(m, v) => {
                    let (mt, vt) = (self.val(*m), self.val(*v));
                    let d = vt.len();
                    let mut gm = vec![F::zero(); mt.len()];
                    let mut gv = vec![F::zero(); d];
                    for (r, gr) in g.iter().enumerate() {
                        let row = mt.row(r);
                        let grow = &mut gm[r * d..(r + 1) * d];
                        for k in 0..d {
                            grow[k] = *gr * vt.data()[k];
                            gv[k] = gv[k] + *gr * row[k];
                        }
                    }
                    add_into(&mut grads, *m, gm);
                    add_into(&mut grads, *v, gv);
                }
                Op::Add(a, b) => {
                    add_into(&mut grads, *a, g.clone());
                    add_into(&mut grads, *b, g.clone());
                }
                Op::Sub(a, b) => {
                    let neg = g.iter().map(|x| -*x).collect();
                    add_into(&mut grads, *a, g.clone());
                    add_into(&mut grads, *b, neg);
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (self.val(*a).data(), self.val(*b).data());
                    let ga = g.iter().zip(tb).map(|(x, y)| *x * *y).collect();
                    let gb = g.iter().zip(ta).map(|(x, y)| *x * *y).collect();
                    add_into(&mut grads, *a, ga);
                    add_into(&mut grads, *b, gb);
                }
                Op::Scale(a, c) => {
                    add_into(&mut grads, *a, g.iter().map(|x| *x * *c).collect());
                }
                Op::Tanh(a) => {
                    let y = self.val(i).data();
                    let ga = g.iter().zip(y).map(|(d, y)| *d * (F::one() - *y * *y)).collect();
                    add_into(&mut grads, *a, ga);
                }
                Op::Sigmoid(a) => {
                    let y = self.val(i).data();
                    let ga = g.iter().zip(y).map(|(d, y)| *d * *y * (F::one() - *y)).collect();
                    add_into(&mut grads, *a, ga);
                }
                Op::Relu(a) => {
                    let x = self.val(*a).data();
                    let ga = g
                        .iter()
                        .zip(x)
                        .map(|(d, x)| if *x > F::zero() { *d } else { F::zero() })
                        .collect();
                    add_into(&mut grads, *a, ga);
                }
                Op::Concat(parts) | Op::Stack(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let n = self.val(p).len();
                        add_range(&mut grads, p, n, 0, &g[off..off + n]);
                        off += n;
                    }
                }
                Op::Sum(a) => {
                    let n = self.val(*a).len();
                    add_into(&mut grads, *a, vec![g[0]; n]);
                }
                Op::Mean(a) => {
                    let n = self.val(*a).len();
                    add_into(&mut grads, *a, vec![g[0] / F::of(n as f64); n]);
                }
                Op::MeanRows(a, mask) => {
                    let t = self.val(*a);
                    let keep = |r: usize| mask.as_ref().is_none_or(|m| m[r]);
                    let n = (0..t.rows()).filter(|&r| keep(r)).count();
                    let inv = F::of(n as f64);
                    let mut ga = vec![F::zero(); t.len()];
                    for r in (0..t.rows()).filter(|&r| keep(r)) {
                        for (o, d) in ga[r * t.cols()..(r + 1) * t.cols()].iter_mut().zip(&g) {
                            *o = *d / inv;
                        }
                    }
                    add_into(&mut grads, *a, ga);
                }
                Op::Row(a, r) => {
                    let t = self.val(*a);
                    add_range(&mut grads, *a, t.len(), r * t.cols(), &g);
                }
                Op::Slice(a, start) => {
                    let n = self.val(*a).len();
                    add_range(&mut grads, *a, n, *start, &g);
                }
                Op::Gather(t, ids) => {
                    let cols = self.val(*t).cols();
                    let slot = grads_slot(&mut grads, *t, self.val(*t).len());
                    for (k, &id) in ids.iter().enumerate() {
                        for c in 0..cols {
                            slot[id * cols + c] = slot[id * cols + c] + g[k * cols + c];
                        }
                    }
                }
                Op::Softmax(a) => {
                    let y = self.val(i).data();
                    let inner = dot(&g, y);
                    let ga = g.iter().zip(y).map(|(d, y)| *y * (*d - inner)).collect();
                    add_into(&mut grads, *a, ga);
                }
                Op::Bce(p, label) => {
                    let pc = clamp_prob(self.val(*p).data()[0]);
                    let y = *label;
                    let dp = -(y / pc) + (F::one() - y) / (F::one() - pc);
                    add_into(&mut grads, *p, vec![g[0] * dp]);
                }
            }
            grads[i] = Some(g);
        }
        Ok(Gradients {
            tape: self.id,
            nodes: grads,
            params: param_grads,
        })
    }
}

impl<F: Real> Default for Tape<'_, F> {
    fn default() -> Self {
        Self::new()
    }
}

fn grads_slot<F: Real>(grads: &mut [Option<Vec<F>>], i: usize, len: usize) -> &mut Vec<F> {
    grads[i].get_or_insert_with(|| vec![F::zero(); len])
}

/// Adds `g` into `grads[i][offset..]`, creating a zero gradient of `len` first if needed.
fn add_range<F: Real>(grads: &mut [Option<Vec<F>>], i: usize, len: usize, offset: usize, g: &[F]) {
    let slot = grads_slot(grads, i, len);
    for (a, x) in slot[offset..offset + g.len()].iter_mut().zip(g) {
        *a = *a + *x;
    }
}

fn add_into<F: Real>(grads: &mut [Option<Vec<F>>], i: usize, g: Vec<F>) {
    match &mut grads[i] {
        Some(acc) => {
            for (a, x) in acc.iter_mut().zip(&g) {
                *a = *a + *x;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

fn accumulate<F: Real>(slot: &mut Option<Vec<F>>, g: &[F]) {
    match slot {
        Some(acc) => {
            for (a, x) in acc.iter_mut().zip(g) {
                *a = *a + *x;
            }
        }
        None => *slot = Some(g.to_vec()),
    }
}

fn matmul_values<F: Real>(a: &Tensor<F>, b: &Tensor<F>, bias: Option<&Tensor<F>>) -> Result<Tensor<F>> {
    if a.rank() > 2 || b.rank() != 2 || a.cols() != b.rows() {
        return Err(shape_err("matmul", a.shape(), b.shape()));
    }
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    if let Some(bias) = bias {
        if bias.rank() != 1 || bias.len() != n {
            return Err(shape_err("affine bias", b.shape(), bias.shape()));
        }
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![F::zero(); m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = ad[i * k + p];
            let brow = &bd[p * n..(p + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o = *o + av * *bv;
            }
        }
        if let Some(bias) = bias {
            for (o, bv) in orow.iter_mut().zip(bias.data()) {
                *o = *o + *bv;
            }
        }
    }
    let shape = if a.rank() == 1 { vec![n] } else { vec![m, n] };
    Tensor::new(shape, out)
}

/// Dot product with eight independent partial sums, summed pairwise at the end.
fn dot_lanes<F: Real>(a: &[F], b: &[F]) -> F {
    let mut acc = [F::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] = acc[l] + x[l] * y[l];
        }
    }
    let mut tail = F::zero();
    for (x, y) in ra.iter().zip(rb) {
        tail = tail + *x * *y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// Accumulates `∂/∂a` into `ga` and `∂/∂b` into `gb` for `a · b` with upstream `g`.
fn matmul_backward_into<F: Real>(a: &Tensor<F>, b: &Tensor<F>, g: &[F], ga: &mut [F], gb: &mut [F]) {
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let (ad, bd) = (a.data(), b.data());
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            ga[i * k + p] = ga[i * k + p] + dot_lanes(grow, &bd[p * n..(p + 1) * n]);
            let av = ad[i * k + p];
            if av == F::zero() {
                continue;
            }
            for (o, gv) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                *o = *o + av * *gv;
            }
        }
    }
}

/// Gradient slots of two nodes, created as zeros when absent.
fn two_slots<F: Real>(
    grads: &mut [Option<Vec<F>>],
    (i, li): (usize, usize),
    (j, lj): (usize, usize),
) -> (&mut [F], &mut [F]) {
    debug_assert!(i != j);
    grads_slot(grads, i, li);
    grads_slot(grads, j, lj);
    let (lo, hi) = grads.split_at_mut(i.max(j));
    let (first, second) = (lo[i.min(j)].as_mut().unwrap(), hi[0].as_mut().unwrap());
    if i < j {
        (first, second)
    } else {
        (second, first)
    }
}

fn matmul_grads<F: Real>(grads: &mut [Option<Vec<F>>], a: (usize, &Tensor<F>), b: (usize, &Tensor<F>), g: &[F]) {
    if a.0 == b.0 {
        let mut ga = vec![F::zero(); a.1.len()];
        let mut gb = vec![F::zero(); b.1.len()];
        matmul_backward_into(a.1, b.1, g, &mut ga, &mut gb);
        add_into(grads, a.0, ga);
        add_into(grads, b.0, gb);
        return;
    }
    let (ga, gb) = two_slots(grads, (a.0, a.1.len()), (b.0, b.1.len()));
    matmul_backward_into(a.1, b.1, g, ga, gb);
}

/// Max-stabilized softmax over the unmasked entries of `scores`.
pub fn softmax_values<F: Real>(scores: &[F], mask: Option<&[bool]>) -> Result<Vec<F>> {
    if let Some(m) = mask {
        if m.len() != scores.len() {
            return Err(shape_err("softmax mask", &[scores.len()], &[m.len()]));
        }
    }
    if scores.iter().any(|x| x.is_nan()) {
        return Err(Error::NonFinite("softmax input".into()));
    }
    let keep = |i: usize| mask.is_none_or(|m| m[i]);
    let mut max = None;
    for (i, &s) in scores.iter().enumerate() {
        if keep(i) && max.is_none_or(|m| s > m) {
            max = Some(s);
        }
    }
    let max = max.ok_or(Error::AllMasked)?;
    let mut out: Vec<F> = scores
        .iter()
        .enumerate()
        .map(|(i, &s)| if keep(i) { (s - max).exp() } else { F::zero() })
        .collect();
    let total: F = out.iter().copied().sum();
    out.iter_mut().for_each(|x| *x = *x / total);
    Ok(out)
}

fn clamp_prob<F: Real>(p: F) -> F {
    let eps = F::of(PROB_EPS);
    p.max(eps).min(F::one() - eps)
}

/// `-(y ln p + (1 - y) ln(1 - p))` with `p` clamped to `[1e-7, 1 - 1e-7]`.
pub fn bce_value<F: Real>(p: F, label: F) -> F {
    let pc = clamp_prob(p);
    -(label * pc.ln() + (F::one() - label) * (F::one() - pc).ln())
}
