//! Reverse-mode automatic differentiation over a linear tape.
//!
//! A [`Tape`] borrows a [`ParamStore`] immutably, records every primitive
//! operation in creation order and, on [`Tape::backward`], walks the record
//! in reverse to produce a [`Gradients`] value keyed by parameter. The store
//! is never mutated by the tape; callers fold gradients back with
//! [`ParamStore::accumulate`].
//!
//! Creation order is a topological order (an operation can only reference
//! existing nodes), so the reverse sweep visits every node exactly once.
//! Parameter values are referenced, not copied, and each parameter gets at
//! most one node per tape.

use std::sync::atomic::{AtomicBool, Ordering};

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

static FAULT_TANH_BACKWARD: AtomicBool = AtomicBool::new(false);

/// Test hook: corrupts the tanh vector-Jacobian product so that gradient
/// checks can be shown to catch a broken backward rule.
#[doc(hidden)]
pub fn set_fault_injection(on: bool) {
    FAULT_TANH_BACKWARD.store(on, Ordering::SeqCst);
}

/// Handle to a node on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatVec(Var, Var),
    MatMul(Var, Var),
    VecMat(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Hadamard(Var, Var),
    Min(Var, Var),
    Affine(Var, f64),
    ScaleBy(Var, Var),
    Tanh(Var),
    Sigmoid(Var),
    Log(Var),
    Softmax(Var),
    Concat(Vec<Var>),
    Slice(Var, usize),
    StackRows(Vec<Var>),
    Row(Var, usize),
    MaxRows(Var, Vec<usize>),
    Sum(Var),
    Nll(Var, usize),
    Pad(Var),
    ScatterAdd(Var, Vec<usize>),
}

enum Value {
    Owned(Tensor),
    Param(ParamId),
}

struct Node {
    value: Value,
    op: Op,
    needs_grad: bool,
}

/// Per-parameter gradients produced by one backward pass.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.grads.get(id.index()).and_then(|g| g.as_deref())
    }

    /// Elementwise sum, in place.
    pub fn add_assign(&mut self, other: &Gradients) {
        if self.grads.len() < other.grads.len() {
            self.grads.resize(other.grads.len(), None);
        }
        for (mine, theirs) in self.grads.iter_mut().zip(&other.grads) {
            if let Some(t) = theirs {
                match mine {
                    Some(m) => m.iter_mut().zip(t).for_each(|(a, b)| *a += b),
                    None => *mine = Some(t.clone()),
                }
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.grads.iter_mut().flatten() {
            g.iter_mut().for_each(|v| *v *= s);
        }
    }
}

/// Operation record for one forward pass.
pub struct Tape<'a> {
    store: &'a ParamStore,
    nodes: Vec<Node>,
    param_nodes: Vec<Option<Var>>,
}

fn shape_err(op: &'static str, a: &[usize], b: &[usize]) -> Error {
    Error::Shape {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    }
}

fn add_into(buf: &mut Option<Vec<f64>>, len: usize) -> &mut Vec<f64> {
    buf.get_or_insert_with(|| vec![0.0; len])
}

impl<'a> Tape<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::with_capacity(1024),
            param_nodes: vec![None; store.len()],
        }
    }

    pub fn store(&self) -> &'a ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn tensor(&self, v: Var) -> &Tensor {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self.store.value(*id),
        }
    }

    pub fn value(&self, v: Var) -> &[f64] {
        self.tensor(v).data()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.tensor(v).shape()
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.tensor(v).item()
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        self.tensor(v).clone()
    }

    fn push(&mut self, op: &'static str, t: Tensor, kind: Op, needs_grad: bool) -> Result<Var> {
        if !t.is_finite() {
            return Err(Error::NonFinite { op: op.to_string() });
        }
        self.nodes.push(Node {
            value: Value::Owned(t),
            op: kind,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Constant input; receives no gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(t),
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn zeros(&mut self, n: usize) -> Var {
        self.constant(Tensor::zeros(&[n]))
    }

    /// Node for a stored parameter; created once per tape.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_nodes[id.index()] {
            return v;
        }
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Param(id),
            needs_grad: self.store.is_trainable(id),
        });
        let v = Var(self.nodes.len() - 1);
        self.param_nodes[id.index()] = Some(v);
        v
    }

    /// Copy of `v`'s value as a constant (stop-gradient).
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.to_tensor(v);
        self.constant(t)
    }

    /// `A[r,c] · x[c] -> [r]`
    pub fn matvec(&mut self, a: Var, x: Var) -> Result<Var> {
        let (sa, sx) = (self.shape(a), self.shape(x));
        if sa.len() != 2 || sx.len() != 1 || sa[1] != sx[0] {
            return Err(shape_err("matvec", sa, sx));
        }
        let (r, c) = (sa[0], sa[1]);
        let (av, xv) = (self.value(a), self.value(x));
        let out: Vec<f64> = (0..r)
            .map(|i| {
                av[i * c..(i + 1) * c]
                    .iter()
                    .zip(xv)
                    .map(|(p, q)| p * q)
                    .sum()
            })
            .collect();
        let ng = self.ng(a) || self.ng(x);
        self.push("matvec", Tensor::vector(out), Op::MatVec(a, x), ng)
    }

    /// `A[r,c] · B[c,k] -> [r,k]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err("matmul", sa, sb));
        }
        let (r, c, k) = (sa[0], sa[1], sb[1]);
        let (av, bv) = (self.value(a), self.value(b));
        let mut out = vec![0.0; r * k];
        for i in 0..r {
            let orow = &mut out[i * k..(i + 1) * k];
            for j in 0..c {
                let aij = av[i * c + j];
                if aij == 0.0 {
                    continue;
                }
                for (o, bjk) in orow.iter_mut().zip(&bv[j * k..(j + 1) * k]) {
                    *o += aij * bjk;
                }
            }
        }
        let ng = self.ng(a) || self.ng(b);
        self.push("matmul", Tensor::new(vec![r, k], out)?, Op::MatMul(a, b), ng)
    }

    /// `w[r] · M[r,c] -> [c]`, the weighted sum of the rows of `M`.
    pub fn vecmat(&mut self, w: Var, m: Var) -> Result<Var> {
        let (sw, sm) = (self.shape(w), self.shape(m));
        if sw.len() != 1 || sm.len() != 2 || sw[0] != sm[0] {
            return Err(shape_err("vecmat", sw, sm));
        }
        let (r, c) = (sm[0], sm[1]);
        let (wv, mv) = (self.value(w), self.value(m));
        let mut out = vec![0.0; c];
        for i in 0..r {
            let wi = wv[i];
            for (o, x) in out.iter_mut().zip(&mv[i * c..(i + 1) * c]) {
                *o += wi * x;
            }
        }
        let ng = self.ng(w) || self.ng(m);
        self.push("vecmat", Tensor::vector(out), Op::VecMat(w, m), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err("add", sa, sb));
        }
        let shape = sa.to_vec();
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x + y)
            .collect();
        let ng = self.ng(a) || self.ng(b);
        self.push("add", Tensor::new(shape, out)?, Op::Add(a, b), ng)
    }

    /// Adds the vector `v[c]` to every row of `m[r,c]`.
    pub fn add_row(&mut self, m: Var, v: Var) -> Result<Var> {
        let (sm, sv) = (self.shape(m), self.shape(v));
        if sm.len() != 2 || sv.len() != 1 || sm[1] != sv[0] {
            return Err(shape_err("add_row", sm, sv));
        }
        let shape = sm.to_vec();
        let c = sm[1];
        let vv = self.value(v);
        let out = self
            .value(m)
            .iter()
            .enumerate()
            .map(|(k, x)| x + vv[k % c])
            .collect();
        let ng = self.ng(m) || self.ng(v);
        self.push("add_row", Tensor::new(shape, out)?, Op::AddRow(m, v), ng)
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err("hadamard", sa, sb));
        }
        let shape = sa.to_vec();
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x * y)
            .collect();
        let ng = self.ng(a) || self.ng(b);
        self.push("hadamard", Tensor::new(shape, out)?, Op::Hadamard(a, b), ng)
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn min(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err("min", sa, sb));
        }
        let shape = sa.to_vec();
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x.min(*y))
            .collect();
        let ng = self.ng(a) || self.ng(b);
        self.push("min", Tensor::new(shape, out)?, Op::Min(a, b), ng)
    }

    /// `scale * x + shift`
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let out = self.value(x).iter().map(|v| scale * v + shift).collect();
        let ng = self.ng(x);
        self.push("affine", Tensor::new(shape, out)?, Op::Affine(x, scale), ng)
    }

    /// Multiplies tensor `x` by the scalar node `s` (shape `[1]`).
    pub fn scale_by(&mut self, x: Var, s: Var) -> Result<Var> {
        if self.shape(s) != [1] {
            return Err(shape_err("scale_by", self.shape(x), self.shape(s)));
        }
        let k = self.scalar(s);
        let shape = self.shape(x).to_vec();
        let out = self.value(x).iter().map(|v| k * v).collect();
        let ng = self.ng(x) || self.ng(s);
        self.push("scale_by", Tensor::new(shape, out)?, Op::ScaleBy(x, s), ng)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let out = self.value(x).iter().map(|v| v.tanh()).collect();
        let ng = self.ng(x);
        self.push("tanh", Tensor::new(shape, out)?, Op::Tanh(x), ng)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let out = self.value(x).iter().map(|&v| sigmoid(v)).collect();
        let ng = self.ng(x);
        self.push("sigmoid", Tensor::new(shape, out)?, Op::Sigmoid(x), ng)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let out = self.value(x).iter().map(|v| v.ln()).collect();
        let ng = self.ng(x);
        self.push("log", Tensor::new(shape, out)?, Op::Log(x), ng)
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        self.masked_softmax(x, None)
    }

    /// Softmax over a vector; positions where `mask[i]` is false get exactly
    /// zero probability.
    pub fn masked_softmax(&mut self, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        let sx = self.shape(x);
        if sx.len() != 1 {
            return Err(shape_err("softmax", sx, &[]));
        }
        if let Some(m) = mask {
            if m.len() != sx[0] {
                return Err(shape_err("softmax", sx, &[m.len()]));
            }
            if !m.iter().any(|&b| b) {
                return Err(Error::usage("softmax over a fully masked vector"));
            }
        }
        let keep = |i: usize| mask.is_none_or(|m| m[i]);
        let xv = self.value(x);
        let mx = xv
            .iter()
            .enumerate()
            .filter(|(i, _)| keep(*i))
            .map(|(_, v)| *v)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut out: Vec<f64> = xv
            .iter()
            .enumerate()
            .map(|(i, v)| if keep(i) { (v - mx).exp() } else { 0.0 })
            .collect();
        let z: f64 = out.iter().sum();
        out.iter_mut().for_each(|v| *v /= z);
        let ng = self.ng(x);
        self.push("softmax", Tensor::vector(out), Op::Softmax(x), ng)
    }

    /// Concatenates vectors.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let mut out = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            if s.len() != 1 {
                return Err(shape_err("concat", s, &[]));
            }
            out.extend_from_slice(self.value(p));
        }
        if out.is_empty() {
            return Err(Error::usage("concat of nothing"));
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push("concat", Tensor::vector(out), Op::Concat(parts.to_vec()), ng)
    }

    /// `x[start .. start + len]` of a vector.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let sx = self.shape(x);
        if sx.len() != 1 || len == 0 || start + len > sx[0] {
            return Err(shape_err("slice", sx, &[start, len]));
        }
        let out = self.value(x)[start..start + len].to_vec();
        let ng = self.ng(x);
        self.push("slice", Tensor::vector(out), Op::Slice(x, start), ng)
    }

    /// Stacks equal-length vectors as the rows of a matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var> {
        if rows.is_empty() {
            return Err(Error::usage("stack of no rows"));
        }
        let c = self.shape(rows[0]).to_vec();
        let mut out = Vec::with_capacity(rows.len() * c[0]);
        for &r in rows {
            if self.shape(r) != c.as_slice() || c.len() != 1 {
                return Err(shape_err("stack_rows", &c, self.shape(r)));
            }
            out.extend_from_slice(self.value(r));
        }
        let ng = rows.iter().any(|&r| self.ng(r));
        let t = Tensor::new(vec![rows.len(), c[0]], out)?;
        self.push("stack_rows", t, Op::StackRows(rows.to_vec()), ng)
    }

    /// Row `i` of a matrix as a vector (embedding lookup).
    pub fn row(&mut self, table: Var, i: usize) -> Result<Var> {
        let st = self.shape(table);
        if st.len() != 2 || i >= st[0] {
            return Err(shape_err("embedding_lookup", st, &[i]));
        }
        let out = self.tensor(table).row(i).to_vec();
        let ng = self.ng(table);
        self.push("embedding_lookup", Tensor::vector(out), Op::Row(table, i), ng)
    }

    /// Columnwise maximum over the rows of a matrix; ties go to the first row.
    pub fn max_rows(&mut self, m: Var) -> Result<Var> {
        let sm = self.shape(m);
        if sm.len() != 2 {
            return Err(shape_err("max_rows", sm, &[]));
        }
        let (r, c) = (sm[0], sm[1]);
        let mv = self.value(m);
        let mut arg = vec![0usize; c];
        let mut out = mv[..c].to_vec();
        for i in 1..r {
            for j in 0..c {
                if mv[i * c + j] > out[j] {
                    out[j] = mv[i * c + j];
                    arg[j] = i;
                }
            }
        }
        let ng = self.ng(m);
        self.push("max_rows", Tensor::vector(out), Op::MaxRows(m, arg), ng)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s: f64 = self.value(x).iter().sum();
        let ng = self.ng(x);
        self.push("sum", Tensor::scalar(s), Op::Sum(x), ng)
    }

    /// Sum of scalar nodes.
    pub fn sum_scalars(&mut self, xs: &[Var]) -> Result<Var> {
        let mut acc = match xs.first() {
            Some(&x) => x,
            None => return Ok(self.constant(Tensor::scalar(0.0))),
        };
        for &x in &xs[1..] {
            acc = self.add(acc, x)?;
        }
        Ok(acc)
    }

    /// `-ln p[target]` for a probability vector `p`.
    pub fn nll(&mut self, p: Var, target: usize) -> Result<Var> {
        let sp = self.shape(p);
        if sp.len() != 1 || target >= sp[0] {
            return Err(shape_err("negative_log_likelihood", sp, &[target]));
        }
        let v = -self.value(p)[target].ln();
        let ng = self.ng(p);
        self.push("negative_log_likelihood", Tensor::scalar(v), Op::Nll(p, target), ng)
    }

    /// Appends `extra` zeros to a vector.
    pub fn pad(&mut self, x: Var, extra: usize) -> Result<Var> {
        let sx = self.shape(x);
        if sx.len() != 1 {
            return Err(shape_err("pad", sx, &[extra]));
        }
        let mut out = self.value(x).to_vec();
        out.resize(out.len() + extra, 0.0);
        let ng = self.ng(x);
        self.push("pad", Tensor::vector(out), Op::Pad(x), ng)
    }

    /// `y[ids[i]] += x[i]` into a fresh vector of length `size`.
    pub fn scatter_add(&mut self, x: Var, ids: &[usize], size: usize) -> Result<Var> {
        let sx = self.shape(x);
        if sx.len() != 1 || sx[0] != ids.len() || ids.iter().any(|&i| i >= size) {
            return Err(shape_err("scatter_add", sx, &[ids.len(), size]));
        }
        let mut out = vec![0.0; size];
        for (v, &i) in self.value(x).iter().zip(ids) {
            out[i] += v;
        }
        let ng = self.ng(x);
        self.push("scatter_add", Tensor::vector(out), Op::ScatterAdd(x, ids.to_vec()), ng)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.shape(loss) != [1] {
            return Err(Error::usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        if !self.scalar(loss).is_finite() {
            return Err(Error::NonFinite {
                op: "loss".to_string(),
            });
        }
        let fault = FAULT_TANH_BACKWARD.load(Ordering::SeqCst);
        let mut grads: Vec<Option<Vec<f64>>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![1.0]);
        let mut out = Gradients {
            grads: vec![None; self.store.len()],
        };

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            let y = self.tensor(Var(i)).data();
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => out.grads[id.index()] = Some(g),
                Op::MatVec(a, x) => {
                    let c = self.shape(*x)[0];
                    let (av, xv) = (self.value(*a), self.value(*x));
                    if self.ng(*a) {
                        let ga = add_into(&mut grads[a.0], av.len());
                        for (r, gr) in g.iter().enumerate() {
                            if *gr == 0.0 {
                                continue;
                            }
                            for (d, xj) in ga[r * c..(r + 1) * c].iter_mut().zip(xv) {
                                *d += gr * xj;
                            }
                        }
                    }
                    if self.ng(*x) {
                        let gx = add_into(&mut grads[x.0], c);
                        for (r, gr) in g.iter().enumerate() {
                            for (d, arj) in gx.iter_mut().zip(&av[r * c..(r + 1) * c]) {
                                *d += gr * arj;
                            }
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    let (r, c) = (self.shape(*a)[0], self.shape(*a)[1]);
                    let k = self.shape(*b)[1];
                    let (av, bv) = (self.value(*a), self.value(*b));
                    if self.ng(*a) {
                        let ga = add_into(&mut grads[a.0], r * c);
                        for i2 in 0..r {
                            for j in 0..c {
                                let mut s = 0.0;
                                for l in 0..k {
                                    s += g[i2 * k + l] * bv[j * k + l];
                                }
                                ga[i2 * c + j] += s;
                            }
                        }
                    }
                    if self.ng(*b) {
                        let gb = add_into(&mut grads[b.0], c * k);
                        for i2 in 0..r {
                            for j in 0..c {
                                let aij = av[i2 * c + j];
                                for l in 0..k {
                                    gb[j * k + l] += aij * g[i2 * k + l];
                                }
                            }
                        }
                    }
                }
                Op::VecMat(w, m) => {
                    let (r, c) = (self.shape(*m)[0], self.shape(*m)[1]);
                    let (wv, mv) = (self.value(*w), self.value(*m));
                    if self.ng(*w) {
                        let gw = add_into(&mut grads[w.0], r);
                        for (i2, d) in gw.iter_mut().enumerate() {
                            *d += mv[i2 * c..(i2 + 1) * c]
                                .iter()
                                .zip(&g)
                                .map(|(a, b)| a * b)
                                .sum::<f64>();
                        }
                    }
                    if self.ng(*m) {
                        let gm = add_into(&mut grads[m.0], r * c);
                        for i2 in 0..r {
                            for (d, gj) in gm[i2 * c..(i2 + 1) * c].iter_mut().zip(&g) {
                                *d += wv[i2] * gj;
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    for v in [a, b] {
                        if self.ng(*v) {
                            let gv = add_into(&mut grads[v.0], g.len());
                            gv.iter_mut().zip(&g).for_each(|(d, x)| *d += x);
                        }
                    }
                }
                Op::AddRow(m, v) => {
                    let c = self.shape(*v)[0];
                    if self.ng(*m) {
                        let gm = add_into(&mut grads[m.0], g.len());
                        gm.iter_mut().zip(&g).for_each(|(d, x)| *d += x);
                    }
                    if self.ng(*v) {
                        let gv = add_into(&mut grads[v.0], c);
                        for (k, x) in g.iter().enumerate() {
                            gv[k % c] += x;
                        }
                    }
                }
                Op::Hadamard(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    if self.ng(*a) {
                        let ga = add_into(&mut grads[a.0], g.len());
                        for k in 0..g.len() {
                            ga[k] += g[k] * bv[k];
                        }
                    }
                    if self.ng(*b) {
                        let gb = add_into(&mut grads[b.0], g.len());
                        for k in 0..g.len() {
                            gb[k] += g[k] * av[k];
                        }
                    }
                }
                Op::Min(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    if self.ng(*a) {
                        let ga = add_into(&mut grads[a.0], g.len());
                        for k in 0..g.len() {
                            if av[k] <= bv[k] {
                                ga[k] += g[k];
                            }
                        }
                    }
                    if self.ng(*b) {
                        let gb = add_into(&mut grads[b.0], g.len());
                        for k in 0..g.len() {
                            if av[k] > bv[k] {
                                gb[k] += g[k];
                            }
                        }
                    }
                }
                Op::Affine(x, s) => {
                    let gx = add_into(&mut grads[x.0], g.len());
                    gx.iter_mut().zip(&g).for_each(|(d, v)| *d += s * v);
                }
                Op::ScaleBy(x, s) => {
                    let k = self.scalar(*s);
                    let xv = self.value(*x);
                    if self.ng(*x) {
                        let gx = add_into(&mut grads[x.0], g.len());
                        gx.iter_mut().zip(&g).for_each(|(d, v)| *d += k * v);
                    }
                    if self.ng(*s) {
                        let gs = add_into(&mut grads[s.0], 1);
                        gs[0] += g.iter().zip(xv).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
                Op::Tanh(x) => {
                    let gx = add_into(&mut grads[x.0], g.len());
                    for k in 0..g.len() {
                        let d = if fault { 1.0 } else { 1.0 - y[k] * y[k] };
                        gx[k] += g[k] * d;
                    }
                }
                Op::Sigmoid(x) => {
                    let gx = add_into(&mut grads[x.0], g.len());
                    for k in 0..g.len() {
                        gx[k] += g[k] * y[k] * (1.0 - y[k]);
                    }
                }
                Op::Log(x) => {
                    let xv = self.value(*x);
                    let gx = add_into(&mut grads[x.0], g.len());
                    for k in 0..g.len() {
                        gx[k] += g[k] / xv[k];
                    }
                }
                Op::Softmax(x) => {
                    let dot: f64 = g.iter().zip(y).map(|(a, b)| a * b).sum();
                    let gx = add_into(&mut grads[x.0], g.len());
                    for k in 0..g.len() {
                        gx[k] += y[k] * (g[k] - dot);
                    }
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let n = self.shape(*p)[0];
                        if self.ng(*p) {
                            let gp = add_into(&mut grads[p.0], n);
                            gp.iter_mut()
                                .zip(&g[off..off + n])
                                .for_each(|(d, v)| *d += v);
                        }
                        off += n;
                    }
                }
                Op::Slice(x, start) => {
                    let n = self.shape(*x)[0];
                    let gx = add_into(&mut grads[x.0], n);
                    gx[*start..*start + g.len()]
                        .iter_mut()
                        .zip(&g)
                        .for_each(|(d, v)| *d += v);
                }
                Op::StackRows(rows) => {
                    let c = self.shape(rows[0])[0];
                    for (r, v) in rows.iter().enumerate() {
                        if self.ng(*v) {
                            let gv = add_into(&mut grads[v.0], c);
                            gv.iter_mut()
                                .zip(&g[r * c..(r + 1) * c])
                                .for_each(|(d, x)| *d += x);
                        }
                    }
                }
                Op::Row(t, r) => {
                    let c = self.shape(*t)[1];
                    let n = self.tensor(*t).len();
                    let gt = add_into(&mut grads[t.0], n);
                    gt[r * c..(r + 1) * c]
                        .iter_mut()
                        .zip(&g)
                        .for_each(|(d, v)| *d += v);
                }
                Op::MaxRows(m, arg) => {
                    let c = self.shape(*m)[1];
                    let n = self.tensor(*m).len();
                    let gm = add_into(&mut grads[m.0], n);
                    for (j, &r) in arg.iter().enumerate() {
                        gm[r * c + j] += g[j];
                    }
                }
                Op::Sum(x) => {
                    let n = self.tensor(*x).len();
                    let gx = add_into(&mut grads[x.0], n);
                    gx.iter_mut().for_each(|d| *d += g[0]);
                }
                Op::Nll(p, t) => {
                    let pv = self.value(*p);
                    let gp = add_into(&mut grads[p.0], pv.len());
                    gp[*t] -= g[0] / pv[*t];
                }
                Op::Pad(x) => {
                    let n = self.shape(*x)[0];
                    let gx = add_into(&mut grads[x.0], n);
                    gx.iter_mut().zip(&g[..n]).for_each(|(d, v)| *d += v);
                }
                Op::ScatterAdd(x, ids) => {
                    let gx = add_into(&mut grads[x.0], ids.len());
                    for (d, &k) in gx.iter_mut().zip(ids) {
                        *d += g[k];
                    }
                }
            }
        }
        Ok(out)
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::Init;

    fn store_with(values: &[(&str, Tensor)]) -> ParamStore {
        let mut s = ParamStore::new(0);
        for (name, t) in values {
            let id = s.add(name, t.shape(), Init::Zeros).unwrap();
            s.set_value(id, t.clone()).unwrap();
        }
        s
    }

    #[test]
    fn softmax_of_equal_inputs_is_uniform() {
        let s = ParamStore::new(0);
        let mut t = Tape::new(&s);
        let x = t.constant(Tensor::vector(vec![0.0; 3]));
        let y = t.softmax(x).unwrap();
        for v in t.value(y) {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_two_values() {
        let s = ParamStore::new(0);
        let mut t = Tape::new(&s);
        let x = t.constant(Tensor::vector(vec![1.0, 2.0]));
        let y = t.softmax(x).unwrap();
        assert!((t.value(y)[0] - 0.26894).abs() < 1e-5);
        assert!((t.value(y)[1] - 0.73106).abs() < 1e-5);
    }

    #[test]
    fn masked_softmax_zeroes_masked_and_rejects_full_mask() {
        let s = ParamStore::new(0);
        let mut t = Tape::new(&s);
        let x = t.constant(Tensor::vector(vec![5.0, 1.0, 1.0]));
        let y = t.masked_softmax(x, Some(&[false, true, true])).unwrap();
        assert_eq!(t.value(y), &[0.0, 0.5, 0.5]);
        assert!(matches!(
            t.masked_softmax(x, Some(&[false, false, false])),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn tanh_of_zero_is_zero() {
        let s = ParamStore::new(0);
        let mut t = Tape::new(&s);
        let x = t.zeros(4);
        let y = t.tanh(x).unwrap();
        assert!(t.value(y).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let s = ParamStore::new(0);
        let mut t = Tape::new(&s);
        let a = t.constant(Tensor::matrix(2, 3, vec![0.0; 6]).unwrap());
        let x = t.zeros(2);
        let err = t.matvec(a, x).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[2]"), "{msg}");
    }

    #[test]
    fn non_finite_output_is_an_error() {
        let s = ParamStore::new(0);
        let mut t = Tape::new(&s);
        let x = t.zeros(2);
        assert!(t.log(x).unwrap_err().is_numeric());
    }

    #[test]
    fn sum_of_parameter_has_unit_gradient() {
        let s = store_with(&[("p", Tensor::vector(vec![0.3, -1.2, 4.0]))]);
        let mut t = Tape::new(&s);
        let p = t.param(ParamId(0));
        let l = t.sum(p).unwrap();
        let g = t.backward(l).unwrap();
        assert_eq!(g.get(ParamId(0)).unwrap(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn sum_of_squares_has_gradient_two_p() {
        let vals = vec![0.3, -1.2, 4.0];
        let s = store_with(&[("p", Tensor::vector(vals.clone()))]);
        let mut t = Tape::new(&s);
        let p = t.param(ParamId(0));
        let sq = t.hadamard(p, p).unwrap();
        let l = t.sum(sq).unwrap();
        let g = t.backward(l).unwrap();
        for (gi, v) in g.get(ParamId(0)).unwrap().iter().zip(&vals) {
            assert_eq!(*gi, 2.0 * v);
        }
    }

    #[test]
    fn unused_parameter_gets_no_gradient() {
        let s = store_with(&[
            ("a", Tensor::vector(vec![1.0, 2.0])),
            ("b", Tensor::vector(vec![3.0, 4.0])),
        ]);
        let mut t = Tape::new(&s);
        let a = t.param(ParamId(0));
        let _b = t.param(ParamId(1));
        let l = t.sum(a).unwrap();
        let g = t.backward(l).unwrap();
        assert!(g.get(ParamId(1)).is_none());
        let mut s2 = s.clone();
        s2.accumulate(&g);
        assert!(s2.get(ParamId(1)).grad.as_ref().unwrap().data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn backward_requires_scalar() {
        let s = ParamStore::new(0);
        let mut t = Tape::new(&s);
        let x = t.zeros(3);
        assert!(matches!(t.backward(x), Err(Error::Usage(_))));
    }

    #[test]
    fn repeated_accumulation_adds() {
        let s = store_with(&[("p", Tensor::vector(vec![1.0, 2.0]))]);
        let mut t = Tape::new(&s);
        let p = t.param(ParamId(0));
        let l = t.sum(p).unwrap();
        let g = t.backward(l).unwrap();
        let mut s2 = s.clone();
        s2.accumulate(&g);
        s2.accumulate(&g);
        assert_eq!(s2.get(ParamId(0)).grad.as_ref().unwrap().data(), &[2.0, 2.0]);
        s2.zero_grad();
        assert!(!s2.has_grads());
    }
}
