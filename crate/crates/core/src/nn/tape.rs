//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every primitive applied during a forward pass. A single
//! call to [`Tape::backward`] then walks the record in reverse and returns the
//! gradient of a `1 x 1` loss with respect to every parameter leaf that was
//! loaded with [`Tape::param`]. Parameters loaded with [`Tape::frozen`] act as
//! constants: gradients still flow *through* them to other inputs but are not
//! accumulated for them.
//!
//! Binary elementwise ops broadcast their right operand when it is `1 x 1`,
//! `1 x n` (a row) or `m x 1` (a column).

use std::sync::atomic::{AtomicU64, Ordering};

use super::params::{Gradients, ParamId, ParamStore};
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

static NEXT_TAPE: AtomicU64 = AtomicU64::new(1);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var {
    tape: u64,
    idx: usize,
}

#[derive(Clone, Debug)]
enum Op<F> {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    Scale(Var, F),
    AddConst(Var),
    Relu(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Softplus(Var),
    NormalCdf(Var),
    Clamp(Var, F, F),
    Minimum(Var, Var),
    SumRows(Var),
    SumCols(Var),
    SumAll(Var),
    MeanAll(Var),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    Reshape(Var),
    MaskedSoftmax(Var, Vec<bool>),
    Gather(Var, Vec<usize>),
}

#[derive(Clone, Debug)]
struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    needs_grad: bool,
}

#[derive(Debug)]
pub struct Tape<F> {
    id: u64,
    nodes: Vec<Node<F>>,
}

/// Result of a backward pass.
#[derive(Debug)]
pub struct Backward<F> {
    pub params: Gradients<F>,
    tape: u64,
    node_grads: Vec<Option<Tensor<F>>>,
}

impl<F: Real> Backward<F> {
    /// Gradient with respect to an input created by [`Tape::input`].
    pub fn wrt(&self, v: Var) -> Option<&Tensor<F>> {
        if v.tape != self.tape {
            return None;
        }
        self.node_grads.get(v.idx).and_then(|g| g.as_ref())
    }
}

impl<F: Real> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

#[inline]
fn bcast_index(b: (usize, usize), r: usize, c: usize) -> usize {
    match b {
        (1, 1) => 0,
        (1, _) => c,
        (_, 1) => r,
        (_, cols) => r * cols + c,
    }
}

fn check_bcast(a: (usize, usize), b: (usize, usize)) -> bool {
    b == a || b == (1, 1) || (b.0 == 1 && b.1 == a.1) || (b.1 == 1 && b.0 == a.0)
}

fn accumulate<F: Real>(slot: &mut Option<Tensor<F>>, g: Tensor<F>) {
    match slot {
        Some(t) => {
            for (a, b) in t.data.iter_mut().zip(g.data) {
                *a += b;
            }
        }
        None => *slot = Some(g),
    }
}

/// Reduce a full-shape gradient onto a broadcast operand shape.
fn reduce_to<F: Real>(g: &Tensor<F>, shape: (usize, usize)) -> Tensor<F> {
    if g.shape() == shape {
        return g.clone();
    }
    let mut out = Tensor::zeros(shape.0, shape.1);
    for r in 0..g.rows {
        for c in 0..g.cols {
            out.data[bcast_index(shape, r, c)] += g.at(r, c);
        }
    }
    out
}

pub fn softplus<F: Real>(x: F) -> F {
    x.max(F::zero()) + (-x.abs()).exp().ln_1p()
}

pub fn normal_cdf<F: Real>(x: F) -> F {
    F::c(0.5 * libm::erfc(-x.f64() / std::f64::consts::SQRT_2))
}

pub fn normal_pdf<F: Real>(x: F) -> F {
    let x = x.f64();
    F::c((-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt())
}

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn check(&self, v: Var) -> Result<()> {
        if v.tape != self.id || v.idx >= self.nodes.len() {
            return Err(Error::NoTapeActive);
        }
        Ok(())
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var {
            tape: self.id,
            idx: self.nodes.len() - 1,
        }
    }

    #[inline]
    fn node(&self, v: Var) -> &Node<F> {
        debug_assert_eq!(v.tape, self.id, "variable from another tape");
        &self.nodes[v.idx]
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.node(v).value.shape()
    }

    fn ng(&self, v: Var) -> bool {
        self.node(v).needs_grad
    }

    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf whose gradient is reported by [`Backward::wrt`].
    pub fn input(&mut self, value: Tensor<F>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn param(&mut self, store: &ParamStore<F>, id: ParamId) -> Var {
        self.push(store.get(id).clone(), Op::Param(id), true)
    }

    pub fn frozen(&mut self, store: &ParamStore<F>, id: ParamId) -> Var {
        self.push(store.get(id).clone(), Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b), false, false);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::MatMul(a, b), ng)
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(F, F) -> F, op: Op<F>) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert!(
            check_bcast(av.shape(), bv.shape()),
            "cannot broadcast {:?} onto {:?}",
            bv.shape(),
            av.shape()
        );
        let bs = bv.shape();
        let out = Tensor::from_fn(av.rows, av.cols, |r, c| {
            f(av.at(r, c), bv.data[bcast_index(bs, r, c)])
        });
        let ng = self.ng(a) || self.ng(b);
        self.push(out, op, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x / y, Op::Div(a, b))
    }

    fn unary(&mut self, a: Var, f: impl Fn(F) -> F, op: Op<F>) -> Var {
        let out = self.value(a).map(f);
        let ng = self.ng(a);
        self.push(out, op, ng)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(a, |x| -x, Op::Neg(a))
    }

    pub fn scale(&mut self, a: Var, s: F) -> Var {
        self.unary(a, |x| x * s, Op::Scale(a, s))
    }

    pub fn add_const(&mut self, a: Var, s: F) -> Var {
        self.unary(a, |x| x + s, Op::AddConst(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(F::zero()), Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.tanh(), Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.exp(), Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.ln(), Op::Log(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, softplus, Op::Softplus(a))
    }

    pub fn normal_cdf(&mut self, a: Var) -> Var {
        self.unary(a, normal_cdf, Op::NormalCdf(a))
    }

    pub fn clamp(&mut self, a: Var, lo: F, hi: F) -> Var {
        self.unary(a, |x| x.max(lo).min(hi), Op::Clamp(a, lo, hi))
    }

    pub fn minimum(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "minimum needs equal shapes");
        self.binary(a, b, |x, y| if x <= y { x } else { y }, Op::Minimum(a, b))
    }

    pub fn sum_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let mut out = Tensor::zeros(1, av.cols);
        for r in 0..av.rows {
            for (o, &x) in out.data.iter_mut().zip(av.row_slice(r)) {
                *o += x;
            }
        }
        let ng = self.ng(a);
        self.push(out, Op::SumRows(a), ng)
    }

    pub fn sum_cols(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let out = Tensor::from_fn(av.rows, 1, |r, _| av.row_slice(r).iter().copied().sum());
        let ng = self.ng(a);
        self.push(out, Op::SumCols(a), ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: F = self.value(a).data.iter().copied().sum();
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::SumAll(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let s: F = av.data.iter().copied().sum();
        let m = s / F::c(av.len() as f64);
        let ng = self.ng(a);
        self.push(Tensor::scalar(m), Op::MeanAll(a), ng)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let av = self.value(a);
        assert!(start + len <= av.cols, "column slice out of range");
        let out = Tensor::from_fn(av.rows, len, |r, c| av.at(r, start + c));
        let ng = self.ng(a);
        self.push(out, Op::SliceCols(a, start), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.shape(parts[0]).0;
        let cols: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut out = Tensor::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.rows, rows, "concat row mismatch");
            for r in 0..rows {
                out.data[r * cols + off..r * cols + off + pv.cols].copy_from_slice(pv.row_slice(r));
            }
            off += pv.cols;
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(out, Op::ConcatCols(parts.to_vec()), ng)
    }

    /// Reinterpret the row-major buffer with a new shape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let av = self.value(a);
        assert_eq!(av.len(), rows * cols, "reshape size mismatch");
        let out = Tensor {
            rows,
            cols,
            data: av.data.clone(),
        };
        let ng = self.ng(a);
        self.push(out, Op::Reshape(a), ng)
    }

    /// Row-wise softmax over the entries where `mask` is true; masked-out
    /// entries are exactly zero. `mask` is row-major with the shape of `a`.
    pub fn masked_softmax(&mut self, a: Var, mask: Vec<bool>) -> Var {
        let av = self.value(a);
        assert_eq!(mask.len(), av.len(), "mask size mismatch");
        let mut out = Tensor::zeros(av.rows, av.cols);
        for r in 0..av.rows {
            let row = av.row_slice(r);
            let m = &mask[r * av.cols..(r + 1) * av.cols];
            let mx = row
                .iter()
                .zip(m)
                .filter(|(_, &k)| k)
                .map(|(&x, _)| x)
                .fold(F::neg_infinity(), F::max);
            let mut z = F::zero();
            for c in 0..av.cols {
                if m[c] {
                    let e = (row[c] - mx).exp();
                    out.data[r * av.cols + c] = e;
                    z += e;
                }
            }
            for c in 0..av.cols {
                out.data[r * av.cols + c] = out.data[r * av.cols + c] / z;
            }
        }
        let ng = self.ng(a);
        self.push(out, Op::MaskedSoftmax(a, mask), ng)
    }

    /// Pick one column per row: `out[r] = a[r, idx[r]]`, shape `m x 1`.
    pub fn gather(&mut self, a: Var, idx: Vec<usize>) -> Var {
        let av = self.value(a);
        assert_eq!(idx.len(), av.rows);
        let out = Tensor::from_fn(av.rows, 1, |r, _| av.at(r, idx[r]));
        let ng = self.ng(a);
        self.push(out, Op::Gather(a, idx), ng)
    }

    /// Gradients of the scalar `loss` with respect to every parameter leaf.
    pub fn backward(&self, loss: Var) -> Result<Backward<F>> {
        self.check(loss)?;
        if self.shape(loss) != (1, 1) {
            return Err(Error::ShapeMismatch(format!(
                "loss must be 1x1, got {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor<F>>> = vec![None; loss.idx + 1];
        grads[loss.idx] = Some(Tensor::scalar(F::one()));
        let mut params = Gradients::default();

        for i in (0..=loss.idx).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            let y = &node.value;
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::Param(id) => {
                    match params.grads.get_mut(id) {
                        Some(t) => {
                            for (a, &b) in t.data.iter_mut().zip(&g.data) {
                                *a += b;
                            }
                        }
                        None => {
                            params.grads.insert(*id, g);
                        }
                    }
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    if self.ng(*a) {
                        accumulate(&mut grads[a.idx], g.matmul(bv, false, true));
                    }
                    if self.ng(*b) {
                        accumulate(&mut grads[b.idx], av.matmul(&g, true, false));
                    }
                }
                Op::Add(a, b) | Op::Sub(a, b) => {
                    let sign = if matches!(node.op, Op::Sub(..)) {
                        -F::one()
                    } else {
                        F::one()
                    };
                    if self.ng(*b) {
                        let gb = reduce_to(&g, self.shape(*b)).map(|x| x * sign);
                        accumulate(&mut grads[b.idx], gb);
                    }
                    if self.ng(*a) {
                        accumulate(&mut grads[a.idx], g);
                    }
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let bs = bv.shape();
                    if self.ng(*a) {
                        let ga = Tensor::from_fn(g.rows, g.cols, |r, c| {
                            g.at(r, c) * bv.data[bcast_index(bs, r, c)]
                        });
                        accumulate(&mut grads[a.idx], ga);
                    }
                    if self.ng(*b) {
                        let full = Tensor::from_fn(g.rows, g.cols, |r, c| g.at(r, c) * av.at(r, c));
                        accumulate(&mut grads[b.idx], reduce_to(&full, bs));
                    }
                }
                Op::Div(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let bs = bv.shape();
                    if self.ng(*a) {
                        let ga = Tensor::from_fn(g.rows, g.cols, |r, c| {
                            g.at(r, c) / bv.data[bcast_index(bs, r, c)]
                        });
                        accumulate(&mut grads[a.idx], ga);
                    }
                    if self.ng(*b) {
                        let full = Tensor::from_fn(g.rows, g.cols, |r, c| {
                            let d = bv.data[bcast_index(bs, r, c)];
                            -g.at(r, c) * av.at(r, c) / (d * d)
                        });
                        accumulate(&mut grads[b.idx], reduce_to(&full, bs));
                    }
                }
                Op::Neg(a) => accumulate(&mut grads[a.idx], g.map(|x| -x)),
                Op::Scale(a, s) => {
                    let s = *s;
                    accumulate(&mut grads[a.idx], g.map(|x| x * s))
                }
                Op::AddConst(a) => accumulate(&mut grads[a.idx], g),
                Op::Relu(a) => {
                    let av = self.value(*a);
                    accumulate(&mut grads[a.idx], zip_map(&g, av, |gv, x| {
                        if x > F::zero() {
                            gv
                        } else {
                            F::zero()
                        }
                    }));
                }
                Op::Tanh(a) => {
                    accumulate(&mut grads[a.idx], zip_map(&g, y, |gv, t| gv * (F::one() - t * t)))
                }
                Op::Exp(a) => accumulate(&mut grads[a.idx], zip_map(&g, y, |gv, e| gv * e)),
                Op::Log(a) => {
                    let av = self.value(*a);
                    accumulate(&mut grads[a.idx], zip_map(&g, av, |gv, x| gv / x))
                }
                Op::Square(a) => {
                    let av = self.value(*a);
                    accumulate(&mut grads[a.idx], zip_map(&g, av, |gv, x| gv * F::c(2.0) * x))
                }
                Op::Softplus(a) => {
                    let av = self.value(*a);
                    accumulate(&mut grads[a.idx], zip_map(&g, av, |gv, x| {
                        gv / (F::one() + (-x).exp())
                    }))
                }
                Op::NormalCdf(a) => {
                    let av = self.value(*a);
                    accumulate(&mut grads[a.idx], zip_map(&g, av, |gv, x| gv * normal_pdf(x)))
                }
                Op::Clamp(a, lo, hi) => {
                    let (lo, hi) = (*lo, *hi);
                    let av = self.value(*a);
                    accumulate(&mut grads[a.idx], zip_map(&g, av, |gv, x| {
                        if x >= lo && x <= hi {
                            gv
                        } else {
                            F::zero()
                        }
                    }))
                }
                Op::Minimum(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    if self.ng(*a) {
                        let ga = Tensor::from_fn(g.rows, g.cols, |r, c| {
                            if av.at(r, c) <= bv.at(r, c) {
                                g.at(r, c)
                            } else {
                                F::zero()
                            }
                        });
                        accumulate(&mut grads[a.idx], ga);
                    }
                    if self.ng(*b) {
                        let gb = Tensor::from_fn(g.rows, g.cols, |r, c| {
                            if av.at(r, c) <= bv.at(r, c) {
                                F::zero()
                            } else {
                                g.at(r, c)
                            }
                        });
                        accumulate(&mut grads[b.idx], gb);
                    }
                }
                Op::SumRows(a) => {
                    let (rows, cols) = self.shape(*a);
                    accumulate(&mut grads[a.idx], Tensor::from_fn(rows, cols, |_, c| g.data[c]));
                }
                Op::SumCols(a) => {
                    let (rows, cols) = self.shape(*a);
                    accumulate(&mut grads[a.idx], Tensor::from_fn(rows, cols, |r, _| g.data[r]));
                }
                Op::SumAll(a) => {
                    let (rows, cols) = self.shape(*a);
                    accumulate(&mut grads[a.idx], Tensor::filled(rows, cols, g.item()));
                }
                Op::MeanAll(a) => {
                    let (rows, cols) = self.shape(*a);
                    let v = g.item() / F::c((rows * cols) as f64);
                    accumulate(&mut grads[a.idx], Tensor::filled(rows, cols, v));
                }
                Op::SliceCols(a, start) => {
                    let (rows, cols) = self.shape(*a);
                    let start = *start;
                    let ga = Tensor::from_fn(rows, cols, |r, c| {
                        if c >= start && c < start + g.cols {
                            g.at(r, c - start)
                        } else {
                            F::zero()
                        }
                    });
                    accumulate(&mut grads[a.idx], ga);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let (rows, cols) = self.shape(*p);
                        if self.ng(*p) {
                            let gp = Tensor::from_fn(rows, cols, |r, c| g.at(r, off + c));
                            accumulate(&mut grads[p.idx], gp);
                        }
                        off += cols;
                    }
                }
                Op::Reshape(a) => {
                    let (rows, cols) = self.shape(*a);
                    accumulate(
                        &mut grads[a.idx],
                        Tensor {
                            rows,
                            cols,
                            data: g.data,
                        },
                    );
                }
                Op::MaskedSoftmax(a, mask) => {
                    let mut ga = Tensor::zeros(y.rows, y.cols);
                    for r in 0..y.rows {
                        let yr = y.row_slice(r);
                        let gr = g.row_slice(r);
                        let dot: F = yr.iter().zip(gr).map(|(&p, &q)| p * q).sum();
                        for c in 0..y.cols {
                            if mask[r * y.cols + c] {
                                ga.data[r * y.cols + c] = yr[c] * (gr[c] - dot);
                            }
                        }
                    }
                    accumulate(&mut grads[a.idx], ga);
                }
                Op::Gather(a, idx) => {
                    let (rows, cols) = self.shape(*a);
                    let mut ga = Tensor::zeros(rows, cols);
                    for (r, &c) in idx.iter().enumerate() {
                        ga.data[r * cols + c] = g.data[r];
                    }
                    accumulate(&mut grads[a.idx], ga);
                }
            }
        }

        Ok(Backward {
            params,
            tape: self.id,
            node_grads: grads,
        })
    }
}

fn zip_map<F: Real>(g: &Tensor<F>, x: &Tensor<F>, f: impl Fn(F, F) -> F) -> Tensor<F> {
    Tensor {
        rows: g.rows,
        cols: g.cols,
        data: g.data.iter().zip(&x.data).map(|(&a, &b)| f(a, b)).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::check_gradients;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sum_of_squares_gradient_is_twice_the_weights() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("w", Tensor::row(&[1.0, -2.0, 0.5])).unwrap();
        let mut tape = Tape::new();
        let w = tape.param(&store, id);
        let sq = tape.square(w);
        let loss = tape.sum(sq);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.params.get(id).unwrap().data, vec![2.0, -4.0, 1.0]);
    }

    #[test]
    fn constant_loss_has_no_parameter_gradient() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("w", Tensor::row(&[1.0, 2.0])).unwrap();
        let mut tape = Tape::new();
        let _w = tape.param(&store, id);
        let c = tape.constant(Tensor::scalar(3.0));
        let g = tape.backward(c).unwrap();
        let dense = g.params.dense(&store, id);
        assert!(dense.data.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn foreign_variable_is_rejected() {
        let mut a = Tape::<f64>::new();
        let v = a.constant(Tensor::scalar(1.0));
        let b = Tape::<f64>::new();
        assert!(matches!(b.backward(v), Err(Error::NoTapeActive)));
        let nonscalar = a.constant(Tensor::zeros(1, 2));
        assert!(matches!(a.backward(nonscalar), Err(Error::ShapeMismatch(_))));
    }

    /// Exercises every primitive in one smooth composite loss.
    fn composite(tape: &mut Tape<f64>, store: &ParamStore<f64>, ids: &[ParamId]) -> Var {
        let x = tape.param(store, ids[0]); // 3x4
        let w = tape.param(store, ids[1]); // 4x5
        let b = tape.param(store, ids[2]); // 1x5
        let col = tape.param(store, ids[3]); // 3x1
        let xw = tape.matmul(x, w);
        let h = tape.add(xw, b);
        let t = tape.tanh(h);
        let m = tape.mul(t, col);
        let sp = tape.softplus(m);
        let e = tape.exp(sp);
        let l = tape.log(e);
        let d = tape.div(l, col);
        let r = tape.reshape(d, 5, 3);
        let s = tape.slice_cols(r, 1, 2);
        let sq = tape.square(s);
        let cdf = tape.normal_cdf(sq);
        let c2 = tape.concat_cols(&[cdf, s]);
        let sm = tape.masked_softmax(c2, (0..20).map(|i| i % 4 != 3).collect());
        let g = tape.gather(c2, vec![0, 1, 2, 3, 0]);
        let gs = tape.scale(g, 1.7);
        let rows = tape.sum_rows(sm);
        let cols = tape.sum_cols(c2);
        let lhs = tape.sub(cols, gs);
        let mn = tape.minimum(lhs, gs);
        let neg = tape.neg(mn);
        let shifted = tape.add_const(neg, 0.3);
        let cl = tape.clamp(shifted, -100.0, 100.0);
        let a = tape.mean(cl);
        let bsum = tape.sum(rows);
        let prod = tape.mul(rows, a);
        let p = tape.sum(prod);
        let tot = tape.add(p, bsum);
        let lifted = tape.add_const(tot, 50.0);
        tape.relu(lifted)
    }

    #[test]
    fn every_primitive_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut store = ParamStore::<f64>::new();
        let shapes = [(3, 4), (4, 5), (1, 5), (3, 1)];
        let ids: Vec<_> = shapes
            .iter()
            .enumerate()
            .map(|(i, &(r, c))| {
                let t = Tensor::from_fn(r, c, |_, _| rng.random_range(0.2..1.2));
                store.add(format!("p{i}"), t).unwrap()
            })
            .collect();
        let mut tape = Tape::new();
        let loss = composite(&mut tape, &store, &ids);
        assert!(tape.value(loss).item() > 0.0);
        let g = tape.backward(loss).unwrap();
        let report = check_gradients(
            &store,
            &g.params,
            |s| {
                let mut t = Tape::new();
                let l = composite(&mut t, s, &ids);
                t.value(l).item()
            },
            1e-5,
            1e-6,
            1,
        );
        assert!(report.max_rel_err < 1e-6, "{report:?}");
        assert!(report.checked > 30);
    }

    #[test]
    fn gradient_through_input_leaf() {
        let mut tape = Tape::<f64>::new();
        let x = tape.input(Tensor::row(&[1.0, 3.0]));
        let y = tape.square(x);
        let l = tape.sum(y);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.wrt(x).unwrap().data, vec![2.0, 6.0]);
    }
}
