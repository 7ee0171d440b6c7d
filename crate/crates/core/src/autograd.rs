//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every forward op in creation order, which is also a
//! topological order, so `backward` is a single reverse sweep. Graphs are
//! cheap to build and are meant to live for one forward/backward pass on one
//! thread; parallel training builds one graph per example.
//!
//! Any op whose output is not finite poisons the graph. Values are still
//! produced so the caller can inspect them, but [`Graph::backward`] and
//! [`Graph::check_finite`] report the first offending op.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{self, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    MatMul(usize, usize),
    MatMulT(usize, usize),
    Add(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    Affine(usize, T),
    Tanh(usize),
    Sigmoid(usize),
    Gelu(usize),
    Softmax(usize),
    LayerNorm { x: usize, gain: usize, bias: usize, xhat: Vec<T>, inv: Vec<T> },
    GatherRows { table: usize, ids: Vec<usize> },
    SliceCols { x: usize, start: usize },
    ConcatCols(Vec<usize>),
    PairwiseAdd(usize, usize),
    Reshape(usize),
    MulConst(usize, Vec<T>),
    SelectSum { x: usize, sets: Vec<Vec<usize>> },
    NegLog { x: usize, floor: T },
    CrossEntropy { logits: usize, targets: Vec<usize>, probs: Vec<T> },
    Sum(usize),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    leaf_grads: Vec<Option<Tensor<T>>>,
    poisoned: Option<&'static str>,
    clamped: usize,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), leaf_grads: Vec::new(), poisoned: None, clamped: 0 }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of probabilities floored by [`Graph::neg_log`].
    pub fn clamped(&self) -> usize {
        self.clamped
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool, name: &'static str) -> Var {
        if self.poisoned.is_none() && !value.is_finite() {
            self.poisoned = Some(name);
        }
        self.nodes.push(Node { value, op, requires_grad });
        self.leaf_grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.nodes[i].requires_grad)
    }

    /// A leaf whose gradient is tracked.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true, "param")
    }

    /// A leaf treated as a constant.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false, "constant")
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.leaf_grads[v.0].as_ref()
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.leaf_grads {
            *g = None;
        }
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.poisoned {
            Some(op) => Err(Error::NonFinite { op }),
            None => Ok(()),
        }
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let rg = self.needs(&[a.0, b.0]);
        Ok(self.push(out, Op::MatMul(a.0, b.0), rg, "matmul"))
    }

    /// `a @ b^T`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul_t(self.value(b))?;
        let rg = self.needs(&[a.0, b.0]);
        Ok(self.push(out, Op::MatMulT(a.0, b.0), rg, "matmul_t"))
    }

    fn zip_with(&self, a: Var, b: Var, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(Error::shape(op, format!("{:?} vs {:?}", x.shape(), y.shape())));
        }
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        Tensor::new(x.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with(a, b, "add", |p, q| p + q)?;
        let rg = self.needs(&[a.0, b.0]);
        Ok(self.push(out, Op::Add(a.0, b.0), rg, "add"))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with(a, b, "mul", |p, q| p * q)?;
        let rg = self.needs(&[a.0, b.0]);
        Ok(self.push(out, Op::Mul(a.0, b.0), rg, "mul"))
    }

    /// Adds a vector of length `cols` to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (x, b) = (self.value(a), self.value(bias));
        if b.len() != x.cols() {
            return Err(Error::shape("add_row", format!("{:?} + {:?}", x.shape(), b.shape())));
        }
        let mut out = x.clone();
        for r in 0..out.rows() {
            for (o, &bv) in out.row_mut(r).iter_mut().zip(b.data()) {
                *o += bv;
            }
        }
        let rg = self.needs(&[a.0, bias.0]);
        Ok(self.push(out, Op::AddRow(a.0, bias.0), rg, "add_row"))
    }

    /// `scale * a + shift`.
    pub fn affine(&mut self, a: Var, scale: T, shift: T) -> Var {
        let mut out = self.value(a).clone();
        for v in out.data_mut() {
            *v = *v * scale + shift;
        }
        let rg = self.needs(&[a.0]);
        self.push(out, Op::Affine(a.0, scale), rg, "affine")
    }

    pub fn scale(&mut self, a: Var, scale: T) -> Var {
        self.affine(a, scale, T::zero())
    }

    fn map(&mut self, a: Var, f: impl Fn(T) -> T, op: Op<T>, name: &'static str) -> Var {
        let mut out = self.value(a).clone();
        for v in out.data_mut() {
            *v = f(*v);
        }
        let rg = self.needs(&[a.0]);
        self.push(out, op, rg, name)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, |v| v.tanh(), Op::Tanh(a.0), "tanh")
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, tensor::sigmoid, Op::Sigmoid(a.0), "sigmoid")
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        self.map(a, tensor::gelu, Op::Gelu(a.0), "gelu")
    }

    /// Softmax along the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        self.softmax_inner(a, false)
    }

    /// Row softmax where row `i` only sees columns `0..=i`; masked entries are exactly 0.
    pub fn causal_softmax(&mut self, a: Var) -> Result<Var> {
        self.softmax_inner(a, true)
    }

    fn softmax_inner(&mut self, a: Var, causal: bool) -> Result<Var> {
        let x = self.value(a);
        if x.data().iter().any(|v| v.is_nan()) {
            return Err(Error::NonFinite { op: "softmax" });
        }
        let mut out = x.clone();
        let cols = out.cols();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let visible = if causal { (r + 1).min(cols) } else { cols };
            tensor::softmax_in_place(&mut row[..visible]);
            for v in &mut row[visible..] {
                *v = T::zero();
            }
        }
        let rg = self.needs(&[a.0]);
        Ok(self.push(out, Op::Softmax(a.0), rg, "softmax"))
    }

    /// Row-wise layer norm with learned `gain`/`bias` of length `cols`.
    pub fn layer_norm(&mut self, a: Var, gain: Var, bias: Var, eps: T) -> Result<Var> {
        let x = self.value(a);
        let (g, b) = (self.value(gain), self.value(bias));
        let cols = x.cols();
        if cols == 0 {
            return Err(Error::Empty("layer_norm"));
        }
        if g.len() != cols || b.len() != cols {
            return Err(Error::shape("layer_norm", format!("{:?} with gain {:?}", x.shape(), g.shape())));
        }
        let mut out = Tensor::zeros(x.shape());
        let mut xhat = Vec::with_capacity(x.len());
        let mut inv = Vec::with_capacity(x.rows());
        for r in 0..x.rows() {
            let (h, s) = tensor::normalize(x.row(r), eps);
            for (c, o) in out.row_mut(r).iter_mut().enumerate() {
                *o = h[c] * g.data()[c] + b.data()[c];
            }
            xhat.extend(h);
            inv.push(s);
        }
        let rg = self.needs(&[a.0, gain.0, bias.0]);
        Ok(self.push(out, Op::LayerNorm { x: a.0, gain: gain.0, bias: bias.0, xhat, inv }, rg, "layer_norm"))
    }

    /// Rows `ids` of a `[rows x cols]` table.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let cols = t.cols();
        let mut data = Vec::with_capacity(ids.len() * cols);
        for &i in ids {
            if i >= t.rows() {
                return Err(Error::IdOutOfRange { id: i as u32, size: t.rows() });
            }
            data.extend_from_slice(t.row(i));
        }
        let out = Tensor::new(vec![ids.len(), cols], data)?;
        let rg = self.needs(&[table.0]);
        Ok(self.push(out, Op::GatherRows { table: table.0, ids: ids.to_vec() }, rg, "gather_rows"))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let x = self.value(a);
        if start + len > x.cols() {
            return Err(Error::shape("slice_cols", format!("{start}+{len} > {}", x.cols())));
        }
        let rows = x.rows();
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&x.row(r)[start..start + len]);
        }
        let out = Tensor::new(vec![rows, len], data)?;
        let rg = self.needs(&[a.0]);
        Ok(self.push(out, Op::SliceCols { x: a.0, start }, rg, "slice_cols"))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows();
        if parts.iter().any(|&p| self.value(p).rows() != rows) {
            return Err(Error::shape("concat_cols", "row counts differ"));
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let out = Tensor::new(vec![rows, cols], data)?;
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let rg = self.needs(&ids);
        Ok(self.push(out, Op::ConcatCols(ids), rg, "concat_cols"))
    }

    /// For `a: [n x h]` and `b: [m x h]`, row `t * m + l` of the output is `a_t + b_l`.
    pub fn pairwise_add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        let h = x.cols();
        if y.cols() != h {
            return Err(Error::shape("pairwise_add", format!("{:?} vs {:?}", x.shape(), y.shape())));
        }
        let (n, m) = (x.rows(), y.rows());
        let mut data = Vec::with_capacity(n * m * h);
        for t in 0..n {
            let xt = x.row(t);
            for l in 0..m {
                data.extend(xt.iter().zip(y.row(l)).map(|(&p, &q)| p + q));
            }
        }
        let out = Tensor::new(vec![n * m, h], data)?;
        let rg = self.needs(&[a.0, b.0]);
        Ok(self.push(out, Op::PairwiseAdd(a.0, b.0), rg, "pairwise_add"))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).clone().reshape(shape)?;
        let rg = self.needs(&[a.0]);
        Ok(self.push(out, Op::Reshape(a.0), rg, "reshape"))
    }

    /// Elementwise product with a constant mask (used for dropout).
    pub fn mul_const(&mut self, a: Var, mask: Vec<T>) -> Result<Var> {
        let x = self.value(a);
        if mask.len() != x.len() {
            return Err(Error::shape("mul_const", format!("{} vs {}", x.len(), mask.len())));
        }
        let data = x.data().iter().zip(&mask).map(|(&p, &q)| p * q).collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        let rg = self.needs(&[a.0]);
        Ok(self.push(out, Op::MulConst(a.0, mask), rg, "mul_const"))
    }

    /// `out[t] = sum of a[t, c] over c in sets[t]`; an empty set yields 0.
    pub fn select_sum(&mut self, a: Var, sets: Vec<Vec<usize>>) -> Result<Var> {
        let x = self.value(a);
        if sets.len() != x.rows() {
            return Err(Error::shape("select_sum", format!("{} sets for {} rows", sets.len(), x.rows())));
        }
        let mut out = Vec::with_capacity(sets.len());
        for (t, set) in sets.iter().enumerate() {
            let row = x.row(t);
            let mut acc = T::zero();
            for &c in set {
                if c >= row.len() {
                    return Err(Error::shape("select_sum", format!("column {c} >= {}", row.len())));
                }
                acc += row[c];
            }
            out.push(acc);
        }
        let rg = self.needs(&[a.0]);
        Ok(self.push(Tensor::vector(out), Op::SelectSum { x: a.0, sets }, rg, "select_sum"))
    }

    /// `-ln(max(a, floor))`, counting how many entries hit the floor.
    pub fn neg_log(&mut self, a: Var, floor: T) -> Var {
        let mut hits = 0;
        let mut out = self.value(a).clone();
        for v in out.data_mut() {
            if *v < floor || v.is_nan() {
                hits += 1;
                *v = floor;
            }
            *v = -v.ln();
        }
        self.clamped += hits;
        let rg = self.needs(&[a.0]);
        self.push(out, Op::NegLog { x: a.0, floor }, rg, "neg_log")
    }

    /// Per-row negative log-likelihood of `targets` under `softmax(logits)`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let x = self.value(logits);
        if targets.len() != x.rows() {
            return Err(Error::shape("cross_entropy", format!("{} targets for {} rows", targets.len(), x.rows())));
        }
        if x.data().iter().any(|v| v.is_nan()) {
            return Err(Error::NonFinite { op: "cross_entropy" });
        }
        let cols = x.cols();
        let mut probs = x.data().to_vec();
        let mut out = Vec::with_capacity(targets.len());
        for (r, &t) in targets.iter().enumerate() {
            if t >= cols {
                return Err(Error::IdOutOfRange { id: t as u32, size: cols });
            }
            let row = &mut probs[r * cols..(r + 1) * cols];
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
            out.push(lse - row[t]);
            tensor::softmax_in_place(row);
        }
        let rg = self.needs(&[logits.0]);
        Ok(self.push(
            Tensor::vector(out),
            Op::CrossEntropy { logits: logits.0, targets: targets.to_vec(), probs },
            rg,
            "cross_entropy",
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum::<T>();
        let rg = self.needs(&[a.0]);
        self.push(Tensor::scalar(s), Op::Sum(a.0), rg, "sum")
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1);
        let s = self.sum(a);
        self.scale(s, T::one() / T::from_usize(n).unwrap())
    }

    /// Reverse sweep from a scalar `loss`. Leaf gradients accumulate across calls
    /// until [`Graph::zero_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        self.check_finite()?;
        if self.value(loss).len() != 1 {
            return Err(Error::shape("backward", format!("loss has shape {:?}", self.shape(loss))));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(self.shape(loss)));

        for i in (0..=loss.0).rev() {
            let Some(gy) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[i].op {
                match &mut self.leaf_grads[i] {
                    Some(acc) => acc.add_assign(&gy),
                    slot => *slot = Some(gy),
                }
                continue;
            }
            self.propagate(i, &gy, &mut grads);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, gy: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let nodes = &self.nodes;
        let val = |j: usize| &nodes[j].value;
        let rg = |j: usize| nodes[j].requires_grad;
        macro_rules! acc {
            ($j:expr) => {{
                let j = $j;
                grads[j].get_or_insert_with(|| Tensor::zeros(nodes[j].value.shape()))
            }};
        }

        match &nodes[i].op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let (x, w) = (val(a), val(b));
                let (n, k, m) = (x.rows(), x.cols(), w.cols());
                if rg(a) {
                    let ga = acc!(a);
                    T::gemm(n, m, k, T::one(), gy.data(), m as isize, 1, w.data(), 1, m as isize,
                        T::one(), ga.data_mut(), k as isize, 1);
                }
                if rg(b) {
                    let gb = acc!(b);
                    T::gemm(k, n, m, T::one(), x.data(), 1, k as isize, gy.data(), m as isize, 1,
                        T::one(), gb.data_mut(), m as isize, 1);
                }
            }
            &Op::MatMulT(a, b) => {
                // y = x w^T, x: [n x k], w: [m x k]
                let (x, w) = (val(a), val(b));
                let (n, k, m) = (x.rows(), x.cols(), w.rows());
                if rg(a) {
                    let ga = acc!(a);
                    T::gemm(n, m, k, T::one(), gy.data(), m as isize, 1, w.data(), k as isize, 1,
                        T::one(), ga.data_mut(), k as isize, 1);
                }
                if rg(b) {
                    let gb = acc!(b);
                    T::gemm(m, n, k, T::one(), gy.data(), 1, m as isize, x.data(), k as isize, 1,
                        T::one(), gb.data_mut(), k as isize, 1);
                }
            }
            &Op::Add(a, b) => {
                for j in [a, b] {
                    if rg(j) {
                        acc!(j).add_assign(gy);
                    }
                }
            }
            &Op::Mul(a, b) => {
                if rg(a) {
                    let ga = acc!(a);
                    for ((g, &d), &o) in ga.data_mut().iter_mut().zip(gy.data()).zip(val(b).data()) {
                        *g += d * o;
                    }
                }
                if rg(b) {
                    let gb = acc!(b);
                    for ((g, &d), &o) in gb.data_mut().iter_mut().zip(gy.data()).zip(val(a).data()) {
                        *g += d * o;
                    }
                }
            }
            &Op::AddRow(a, b) => {
                if rg(a) {
                    acc!(a).add_assign(gy);
                }
                if rg(b) {
                    let gb = acc!(b);
                    for r in 0..gy.rows() {
                        for (g, &d) in gb.data_mut().iter_mut().zip(gy.row(r)) {
                            *g += d;
                        }
                    }
                }
            }
            &Op::Affine(a, scale) => {
                let ga = acc!(a);
                for (g, &d) in ga.data_mut().iter_mut().zip(gy.data()) {
                    *g += d * scale;
                }
            }
            &Op::Tanh(a) => {
                let y = &nodes[i].value;
                let ga = acc!(a);
                for ((g, &d), &o) in ga.data_mut().iter_mut().zip(gy.data()).zip(y.data()) {
                    *g += d * (T::one() - o * o);
                }
            }
            &Op::Sigmoid(a) => {
                let y = &nodes[i].value;
                let ga = acc!(a);
                for ((g, &d), &o) in ga.data_mut().iter_mut().zip(gy.data()).zip(y.data()) {
                    *g += d * o * (T::one() - o);
                }
            }
            &Op::Gelu(a) => {
                let x = val(a);
                let ga = acc!(a);
                for ((g, &d), &v) in ga.data_mut().iter_mut().zip(gy.data()).zip(x.data()) {
                    *g += d * tensor::gelu_grad(v);
                }
            }
            &Op::Softmax(a) => {
                let y = &nodes[i].value;
                let ga = acc!(a);
                let cols = y.cols();
                for r in 0..y.rows() {
                    let (yr, dr) = (y.row(r), gy.row(r));
                    let dot = yr.iter().zip(dr).map(|(&p, &q)| p * q).sum::<T>();
                    let gr = &mut ga.data_mut()[r * cols..(r + 1) * cols];
                    for c in 0..cols {
                        gr[c] += yr[c] * (dr[c] - dot);
                    }
                }
            }
            Op::LayerNorm { x, gain, bias, xhat, inv } => {
                let (x, gain, bias) = (*x, *gain, *bias);
                let cols = val(x).cols();
                let rows = val(x).rows();
                let g = val(gain).data();
                if rg(gain) {
                    let gg = acc!(gain);
                    for r in 0..rows {
                        for c in 0..cols {
                            gg.data_mut()[c] += gy.data()[r * cols + c] * xhat[r * cols + c];
                        }
                    }
                }
                if rg(bias) {
                    let gb = acc!(bias);
                    for r in 0..rows {
                        for c in 0..cols {
                            gb.data_mut()[c] += gy.data()[r * cols + c];
                        }
                    }
                }
                if rg(x) {
                    let gx = acc!(x);
                    let n = T::from_usize(cols).unwrap();
                    let mut dxhat = vec![T::zero(); cols];
                    for r in 0..rows {
                        let h = &xhat[r * cols..(r + 1) * cols];
                        for c in 0..cols {
                            dxhat[c] = gy.data()[r * cols + c] * g[c];
                        }
                        let s1 = dxhat.iter().copied().sum::<T>();
                        let s2 = dxhat.iter().zip(h).map(|(&p, &q)| p * q).sum::<T>();
                        let out = &mut gx.data_mut()[r * cols..(r + 1) * cols];
                        for c in 0..cols {
                            out[c] += inv[r] / n * (n * dxhat[c] - s1 - h[c] * s2);
                        }
                    }
                }
            }
            Op::GatherRows { table, ids } => {
                let gt = acc!(*table);
                let cols = gt.cols();
                for (r, &id) in ids.iter().enumerate() {
                    let dst = &mut gt.data_mut()[id * cols..(id + 1) * cols];
                    for (g, &d) in dst.iter_mut().zip(gy.row(r)) {
                        *g += d;
                    }
                }
            }
            &Op::SliceCols { x, start } => {
                let gx = acc!(x);
                let len = gy.cols();
                let cols = gx.cols();
                for r in 0..gy.rows() {
                    let dst = &mut gx.data_mut()[r * cols + start..r * cols + start + len];
                    for (g, &d) in dst.iter_mut().zip(gy.row(r)) {
                        *g += d;
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let width = val(p).cols();
                    if rg(p) {
                        let gp = acc!(p);
                        for r in 0..gy.rows() {
                            let src = &gy.row(r)[offset..offset + width];
                            for (g, &d) in gp.row_mut(r).iter_mut().zip(src) {
                                *g += d;
                            }
                        }
                    }
                    offset += width;
                }
            }
            &Op::PairwiseAdd(a, b) => {
                let (n, m) = (val(a).rows(), val(b).rows());
                if rg(a) {
                    let ga = acc!(a);
                    for t in 0..n {
                        for l in 0..m {
                            for (g, &d) in ga.row_mut(t).iter_mut().zip(gy.row(t * m + l)) {
                                *g += d;
                            }
                        }
                    }
                }
                if rg(b) {
                    let gb = acc!(b);
                    for t in 0..n {
                        for l in 0..m {
                            for (g, &d) in gb.row_mut(l).iter_mut().zip(gy.row(t * m + l)) {
                                *g += d;
                            }
                        }
                    }
                }
            }
            &Op::Reshape(a) => {
                let ga = acc!(a);
                for (g, &d) in ga.data_mut().iter_mut().zip(gy.data()) {
                    *g += d;
                }
            }
            Op::MulConst(a, mask) => {
                let ga = acc!(*a);
                for ((g, &d), &k) in ga.data_mut().iter_mut().zip(gy.data()).zip(mask) {
                    *g += d * k;
                }
            }
            Op::SelectSum { x, sets } => {
                let gx = acc!(*x);
                for (t, set) in sets.iter().enumerate() {
                    let d = gy.data()[t];
                    let row = gx.row_mut(t);
                    for &c in set {
                        row[c] += d;
                    }
                }
            }
            &Op::NegLog { x, floor } => {
                let xv = val(x);
                let gx = acc!(x);
                for ((g, &d), &v) in gx.data_mut().iter_mut().zip(gy.data()).zip(xv.data()) {
                    if v >= floor {
                        *g -= d / v;
                    }
                }
            }
            Op::CrossEntropy { logits, targets, probs } => {
                let gx = acc!(*logits);
                let cols = gx.cols();
                for (r, &t) in targets.iter().enumerate() {
                    let d = gy.data()[r];
                    let row = &mut gx.data_mut()[r * cols..(r + 1) * cols];
                    for c in 0..cols {
                        row[c] += d * probs[r * cols + c];
                    }
                    row[t] -= d;
                }
            }
            &Op::Sum(a) => {
                let d = gy.item();
                let ga = acc!(a);
                for g in ga.data_mut() {
                    *g += d;
                }
            }
        }
    }
}
