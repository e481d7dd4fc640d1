use std::cell::{Ref, RefCell};

use rand::Rng;

use super::{Real, Tensor};
use crate::error::{Error, Result};

/// The operation that produced a node. Leaves carry no operation.
#[derive(Debug)]
enum Op<F> {
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, F),
    AddRow(usize, usize),
    MatMul(usize, usize),
    Transpose(usize),
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    SliceRows { src: usize, start: usize },
    SliceCols { src: usize, start: usize },
    BroadcastRows(usize),
    SoftmaxMasked(usize),
    LayerNorm {
        x: usize,
        gain: usize,
        bias: usize,
        xhat: Vec<F>,
        inv_std: Vec<F>,
    },
    MulConst { src: usize, factors: Vec<F> },
    Gelu(usize),
    Gather { table: usize, ids: Vec<usize> },
    Sum(usize),
    CrossEntropy {
        logits: usize,
        targets: Vec<Option<usize>>,
        probs: Vec<F>,
    },
    BceWithLogits {
        logits: usize,
        targets: Vec<F>,
        mask: Vec<bool>,
        inv_count: F,
    },
}

#[derive(Debug)]
struct Node<F> {
    value: Tensor<F>,
    op: Option<Op<F>>,
    requires_grad: bool,
}

/// Records operations for one forward pass.
///
/// Single-threaded by construction; build a new tape per step.
#[derive(Debug, Default)]
pub struct Tape<F> {
    nodes: RefCell<Vec<Node<F>>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, F> {
    tape: &'t Tape<F>,
    id: usize,
}

impl<F> std::fmt::Debug for Var<'_, F> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var({})", self.id)
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Trainable leaf; receives gradients on backward.
    pub fn param(&self, t: Tensor<F>) -> Var<'_, F> {
        self.push(t, None, true)
    }

    /// Non-trainable leaf (inputs, masks, frozen values).
    pub fn constant(&self, t: Tensor<F>) -> Var<'_, F> {
        self.push(t, None, false)
    }

    fn push(&self, mut value: Tensor<F>, op: Option<Op<F>>, requires_grad: bool) -> Var<'_, F> {
        value.zero_grad();
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn requires(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    fn derived(&self, value: Tensor<F>, op: Op<F>, parents: &[usize]) -> Var<'_, F> {
        let rg = self.requires(parents);
        self.push(value, Some(op), rg)
    }

    fn with<R>(&self, id: usize, f: impl FnOnce(&Tensor<F>) -> R) -> R {
        f(&self.nodes.borrow()[id].value)
    }

    /// Concatenates 2-D values along the last dimension.
    pub fn concat_cols<'t>(&'t self, parts: &[Var<'t, F>]) -> Result<Var<'t, F>> {
        let ids: Vec<usize> = parts.iter().map(|v| v.id).collect();
        let out = {
            let nodes = self.nodes.borrow();
            let first = nodes[*ids.first().ok_or_else(|| {
                Error::InvalidInput("concat of zero tensors".into())
            })?]
            .value
            .dims2();
            let rows = first.0;
            let mut widths = Vec::with_capacity(ids.len());
            for &i in &ids {
                let (r, c) = nodes[i].value.dims2();
                if r != rows {
                    return Err(Error::shape(
                        "concat_cols",
                        nodes[ids[0]].value.shape(),
                        nodes[i].value.shape(),
                    ));
                }
                widths.push(c);
            }
            let total: usize = widths.iter().sum();
            let mut data = Vec::with_capacity(rows * total);
            for r in 0..rows {
                for &i in &ids {
                    data.extend_from_slice(nodes[i].value.row(r));
                }
            }
            Tensor::new(vec![rows, total], data)?
        };
        Ok(self.derived(out, Op::ConcatCols(ids.clone()), &ids))
    }

    /// Stacks 2-D values along the first dimension.
    pub fn concat_rows<'t>(&'t self, parts: &[Var<'t, F>]) -> Result<Var<'t, F>> {
        let ids: Vec<usize> = parts.iter().map(|v| v.id).collect();
        let out = {
            let nodes = self.nodes.borrow();
            let first = *ids
                .first()
                .ok_or_else(|| Error::InvalidInput("concat of zero tensors".into()))?;
            let cols = nodes[first].value.dims2().1;
            let mut rows = 0;
            let mut data = Vec::new();
            for &i in &ids {
                let (r, c) = nodes[i].value.dims2();
                if c != cols {
                    return Err(Error::shape(
                        "concat_rows",
                        nodes[first].value.shape(),
                        nodes[i].value.shape(),
                    ));
                }
                rows += r;
                data.extend_from_slice(nodes[i].value.data());
            }
            Tensor::new(vec![rows, cols], data)?
        };
        Ok(self.derived(out, Op::ConcatRows(ids.clone()), &ids))
    }

    /// Row lookup `table[ids[r]]`, the embedding primitive.
    pub fn gather<'t>(&'t self, table: Var<'t, F>, ids: &[usize]) -> Result<Var<'t, F>> {
        let out = self.with(table.id, |t| {
            let (n, c) = t.dims2();
            let mut data = Vec::with_capacity(ids.len() * c);
            for &i in ids {
                if i >= n {
                    return Err(Error::Index(format!("gather index {i} >= {n} rows")));
                }
                data.extend_from_slice(t.row(i));
            }
            Tensor::new(vec![ids.len(), c], data)
        })?;
        Ok(self.derived(
            out,
            Op::Gather {
                table: table.id,
                ids: ids.to_vec(),
            },
            &[table.id],
        ))
    }

    /// Gradient accumulated on a node, if any.
    pub fn grad(&self, v: Var<'_, F>) -> Option<Vec<F>> {
        self.nodes.borrow()[v.id].value.grad().map(<[F]>::to_vec)
    }

    /// Reverse pass from a scalar loss. Gradients of leaves accumulate across
    /// calls.
    pub fn backward(&self, loss: Var<'_, F>) -> Result<()> {
        let mut nodes = self.nodes.borrow_mut();
        if !nodes[loss.id].value.is_scalar() {
            return Err(Error::InvalidInput(format!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[loss.id].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<F>>> = Vec::new();
        grads.resize_with(loss.id + 1, || None);
        grads[loss.id] = Some(vec![F::one()]);

        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            if !nodes[id].requires_grad {
                continue;
            }
            match &nodes[id].op {
                None => {
                    nodes[id].value.accumulate_grad(&g)?;
                }
                Some(op) => backprop(op, &g, &nodes[id].value, &nodes, &mut grads),
            }
        }
        Ok(())
    }
}

fn acc<F: Real>(grads: &mut [Option<Vec<F>>], nodes: &[Node<F>], id: usize, f: impl FnOnce(&mut [F])) {
    if !nodes[id].requires_grad {
        return;
    }
    let n = nodes[id].value.len();
    let buf = grads[id].get_or_insert_with(|| vec![F::zero(); n]);
    f(buf);
}

fn backprop<F: Real>(
    op: &Op<F>,
    g: &[F],
    out: &Tensor<F>,
    nodes: &[Node<F>],
    grads: &mut [Option<Vec<F>>],
) {
    let val = |id: usize| &nodes[id].value;
    match op {
        Op::Add(a, b) => {
            acc(grads, nodes, *a, |ga| add_into(ga, g));
            acc(grads, nodes, *b, |gb| add_into(gb, g));
        }
        Op::Sub(a, b) => {
            acc(grads, nodes, *a, |ga| add_into(ga, g));
            acc(grads, nodes, *b, |gb| gb.iter_mut().zip(g).for_each(|(x, &y)| *x -= y));
        }
        Op::Mul(a, b) => {
            let (va, vb) = (val(*a).data(), val(*b).data());
            acc(grads, nodes, *a, |ga| {
                ga.iter_mut().zip(g.iter().zip(vb)).for_each(|(x, (&gi, &bi))| *x += gi * bi)
            });
            acc(grads, nodes, *b, |gb| {
                gb.iter_mut().zip(g.iter().zip(va)).for_each(|(x, (&gi, &ai))| *x += gi * ai)
            });
        }
        Op::Scale(a, c) => {
            acc(grads, nodes, *a, |ga| ga.iter_mut().zip(g).for_each(|(x, &y)| *x += *c * y));
        }
        Op::AddRow(a, bias) => {
            let (_, c) = out.dims2();
            acc(grads, nodes, *a, |ga| add_into(ga, g));
            acc(grads, nodes, *bias, |gb| {
                for row in g.chunks(c) {
                    add_into(gb, row);
                }
            });
        }
        Op::MatMul(a, b) => {
            let (m, k) = val(*a).dims2();
            let n = val(*b).dims2().1;
            let (va, vb) = (val(*a).data(), val(*b).data());
            // dA = G B^T
            acc(grads, nodes, *a, |ga| {
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        let brow = &vb[p * n..(p + 1) * n];
                        ga[i * k + p] += dot(grow, brow);
                    }
                }
            });
            // dB = A^T G
            acc(grads, nodes, *b, |gb| {
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        let aip = va[i * k + p];
                        if aip == F::zero() {
                            continue;
                        }
                        axpy(&mut gb[p * n..(p + 1) * n], aip, grow);
                    }
                }
            });
        }
        Op::Transpose(a) => {
            let (r, c) = val(*a).dims2();
            acc(grads, nodes, *a, |ga| {
                for i in 0..r {
                    for j in 0..c {
                        ga[i * c + j] += g[j * r + i];
                    }
                }
            });
        }
        Op::ConcatCols(ids) => {
            let (rows, total) = out.dims2();
            let mut offset = 0;
            for &id in ids {
                let c = val(id).dims2().1;
                acc(grads, nodes, id, |gi| {
                    for r in 0..rows {
                        add_into(
                            &mut gi[r * c..(r + 1) * c],
                            &g[r * total + offset..r * total + offset + c],
                        );
                    }
                });
                offset += c;
            }
        }
        Op::ConcatRows(ids) => {
            let mut offset = 0;
            for &id in ids {
                let n = val(id).len();
                acc(grads, nodes, id, |gi| add_into(gi, &g[offset..offset + n]));
                offset += n;
            }
        }
        Op::SliceRows { src, start } => {
            let c = val(*src).dims2().1;
            acc(grads, nodes, *src, |gs| add_into(&mut gs[start * c..start * c + g.len()], g));
        }
        Op::SliceCols { src, start } => {
            let (rows, c) = val(*src).dims2();
            let w = out.dims2().1;
            acc(grads, nodes, *src, |gs| {
                for r in 0..rows {
                    add_into(&mut gs[r * c + start..r * c + start + w], &g[r * w..(r + 1) * w]);
                }
            });
        }
        Op::BroadcastRows(a) => {
            let c = val(*a).len();
            acc(grads, nodes, *a, |ga| {
                for row in g.chunks(c) {
                    add_into(ga, row);
                }
            });
        }
        Op::SoftmaxMasked(a) => {
            let (_, c) = out.dims2();
            let y = out.data();
            acc(grads, nodes, *a, |ga| {
                for ((gr, yr), dst) in g.chunks(c).zip(y.chunks(c)).zip(ga.chunks_mut(c)) {
                    let s = dot(gr, yr);
                    for j in 0..c {
                        dst[j] += yr[j] * (gr[j] - s);
                    }
                }
            });
        }
        Op::LayerNorm {
            x,
            gain,
            bias,
            xhat,
            inv_std,
        } => {
            let c = out.dims2().1;
            let gamma = val(*gain).data();
            acc(grads, nodes, *bias, |gb| {
                for row in g.chunks(c) {
                    add_into(gb, row);
                }
            });
            acc(grads, nodes, *gain, |gg| {
                for (gr, xr) in g.chunks(c).zip(xhat.chunks(c)) {
                    for j in 0..c {
                        gg[j] += gr[j] * xr[j];
                    }
                }
            });
            let n = F::of(c as f64);
            acc(grads, nodes, *x, |gx| {
                let mut dxhat = vec![F::zero(); c];
                for (r, (gr, xr)) in g.chunks(c).zip(xhat.chunks(c)).enumerate() {
                    for j in 0..c {
                        dxhat[j] = gr[j] * gamma[j];
                    }
                    let s1: F = dxhat.iter().copied().sum();
                    let s2: F = dxhat.iter().zip(xr).map(|(&d, &h)| d * h).sum();
                    let k = inv_std[r] / n;
                    for j in 0..c {
                        gx[r * c + j] += k * (n * dxhat[j] - s1 - xr[j] * s2);
                    }
                }
            });
        }
        Op::MulConst { src, factors } => {
            acc(grads, nodes, *src, |gs| {
                gs.iter_mut().zip(g.iter().zip(factors)).for_each(|(x, (&gi, &f))| *x += gi * f)
            });
        }
        Op::Gelu(a) => {
            let xs = val(*a).data();
            acc(grads, nodes, *a, |ga| {
                for ((dst, &gi), &x) in ga.iter_mut().zip(g).zip(xs) {
                    *dst += gi * gelu_grad(x);
                }
            });
        }
        Op::Gather { table, ids } => {
            let c = val(*table).dims2().1;
            acc(grads, nodes, *table, |gt| {
                for (r, &i) in ids.iter().enumerate() {
                    add_into(&mut gt[i * c..(i + 1) * c], &g[r * c..(r + 1) * c]);
                }
            });
        }
        Op::Sum(a) => {
            let g0 = g[0];
            acc(grads, nodes, *a, |ga| ga.iter_mut().for_each(|x| *x += g0));
        }
        Op::CrossEntropy {
            logits,
            targets,
            probs,
        } => {
            let c = val(*logits).dims2().1;
            let g0 = g[0];
            acc(grads, nodes, *logits, |gl| {
                for (r, t) in targets.iter().enumerate() {
                    let Some(t) = *t else { continue };
                    for j in 0..c {
                        let onehot = if j == t { F::one() } else { F::zero() };
                        gl[r * c + j] += g0 * (probs[r * c + j] - onehot);
                    }
                }
            });
        }
        Op::BceWithLogits {
            logits,
            targets,
            mask,
            inv_count,
        } => {
            let xs = val(*logits).data();
            let k = g[0] * *inv_count;
            acc(grads, nodes, *logits, |gl| {
                for i in 0..xs.len() {
                    if mask[i] {
                        gl[i] += k * (sigmoid(xs[i]) - targets[i]);
                    }
                }
            });
        }
    }
}

#[inline]
fn add_into<F: Real>(dst: &mut [F], src: &[F]) {
    dst.iter_mut().zip(src).for_each(|(a, &b)| *a += b);
}

#[inline]
fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    a.iter().zip(b).fold(F::zero(), |s, (&x, &y)| s + x * y)
}

#[inline]
fn axpy<F: Real>(dst: &mut [F], a: F, x: &[F]) {
    dst.iter_mut().zip(x).for_each(|(d, &v)| *d += a * v);
}

fn sigmoid<F: Real>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

fn gelu<F: Real>(x: F) -> F {
    let c = F::of(GELU_C);
    let a = F::of(GELU_A);
    let u = c * (x + a * x * x * x);
    F::of(0.5) * x * (F::one() + u.tanh())
}

fn gelu_grad<F: Real>(x: F) -> F {
    let c = F::of(GELU_C);
    let a = F::of(GELU_A);
    let half = F::of(0.5);
    let t = (c * (x + a * x * x * x)).tanh();
    half * (F::one() + t) + half * x * (F::one() - t * t) * c * (F::one() + F::of(3.0) * a * x * x)
}

/// Row-wise softmax restricted to `mask`; masked entries are exactly zero.
pub(crate) fn softmax_rows<F: Real>(x: &[F], cols: usize, mask: &[bool]) -> Vec<F> {
    let mut out = vec![F::zero(); x.len()];
    for (row, dst) in x.chunks(cols).zip(out.chunks_mut(cols)) {
        let m = row
            .iter()
            .zip(mask)
            .filter(|(_, &ok)| ok)
            .fold(F::neg_infinity(), |m, (&v, _)| m.max(v));
        let mut z = F::zero();
        for j in 0..cols {
            if mask[j] {
                let e = (row[j] - m).exp();
                dst[j] = e;
                z += e;
            }
        }
        for v in dst.iter_mut() {
            *v /= z;
        }
    }
    out
}

impl<'t, F: Real> Var<'t, F> {
    pub fn tape(&self) -> &'t Tape<F> {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    /// Borrow of the recorded value. Do not hold across further ops.
    pub fn value(&self) -> Ref<'t, Tensor<F>> {
        Ref::map(self.tape.nodes.borrow(), |n| &n[self.id].value)
    }

    pub fn to_tensor(&self) -> Tensor<F> {
        let mut t = self.value().clone();
        t.zero_grad();
        t
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn dims2(&self) -> (usize, usize) {
        self.value().dims2()
    }

    pub fn item(&self) -> F {
        self.value().item()
    }

    pub fn grad(&self) -> Option<Vec<F>> {
        self.tape.grad(*self)
    }

    fn same_shape(&self, other: &Var<'t, F>, op: &'static str) -> Result<()> {
        let (a, b) = (self.shape(), other.shape());
        if a != b {
            return Err(Error::shape(op, &a, &b));
        }
        Ok(())
    }

    fn zip_with(&self, other: &Var<'t, F>, f: impl Fn(F, F) -> F) -> Result<Tensor<F>> {
        let nodes = self.tape.nodes.borrow();
        let (a, b) = (&nodes[self.id].value, &nodes[other.id].value);
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(a.shape().to_vec(), data)
    }

    fn map(&self, f: impl Fn(F) -> F) -> Result<Tensor<F>> {
        self.tape.with(self.id, |t| {
            Tensor::new(t.shape().to_vec(), t.data().iter().map(|&v| f(v)).collect())
        })
    }

    pub fn add(&self, other: Var<'t, F>) -> Result<Var<'t, F>> {
        self.same_shape(&other, "add")?;
        let out = self.zip_with(&other, |a, b| a + b)?;
        Ok(self.tape.derived(out, Op::Add(self.id, other.id), &[self.id, other.id]))
    }

    pub fn sub(&self, other: Var<'t, F>) -> Result<Var<'t, F>> {
        self.same_shape(&other, "sub")?;
        let out = self.zip_with(&other, |a, b| a - b)?;
        Ok(self.tape.derived(out, Op::Sub(self.id, other.id), &[self.id, other.id]))
    }

    /// Elementwise product.
    pub fn mul(&self, other: Var<'t, F>) -> Result<Var<'t, F>> {
        self.same_shape(&other, "mul")?;
        let out = self.zip_with(&other, |a, b| a * b)?;
        Ok(self.tape.derived(out, Op::Mul(self.id, other.id), &[self.id, other.id]))
    }

    pub fn scale(&self, c: F) -> Result<Var<'t, F>> {
        let out = self.map(|v| v * c)?;
        Ok(self.tape.derived(out, Op::Scale(self.id, c), &[self.id]))
    }

    /// Adds a bias vector to every row.
    pub fn add_row(&self, bias: Var<'t, F>) -> Result<Var<'t, F>> {
        let out = {
            let nodes = self.tape.nodes.borrow();
            let (x, b) = (&nodes[self.id].value, &nodes[bias.id].value);
            let (_, c) = x.dims2();
            if b.len() != c {
                return Err(Error::shape("add_row", x.shape(), b.shape()));
            }
            let data = x
                .data()
                .chunks(c)
                .flat_map(|row| row.iter().zip(b.data()).map(|(&v, &w)| v + w))
                .collect();
            Tensor::new(x.shape().to_vec(), data)?
        };
        Ok(self.tape.derived(out, Op::AddRow(self.id, bias.id), &[self.id, bias.id]))
    }

    pub fn matmul(&self, other: Var<'t, F>) -> Result<Var<'t, F>> {
        let out = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id].value, &nodes[other.id].value);
            let (m, k) = a.dims2();
            let (k2, n) = b.dims2();
            if k != k2 || b.shape().len() > 2 {
                return Err(Error::shape("matmul", a.shape(), b.shape()));
            }
            let (va, vb) = (a.data(), b.data());
            let mut data = vec![F::zero(); m * n];
            for i in 0..m {
                let dst = &mut data[i * n..(i + 1) * n];
                for p in 0..k {
                    let aip = va[i * k + p];
                    if aip != F::zero() {
                        axpy(dst, aip, &vb[p * n..(p + 1) * n]);
                    }
                }
            }
            Tensor::new(vec![m, n], data)?
        };
        Ok(self.tape.derived(out, Op::MatMul(self.id, other.id), &[self.id, other.id]))
    }

    /// `x W + b`.
    pub fn affine(&self, w: Var<'t, F>, b: Var<'t, F>) -> Result<Var<'t, F>> {
        self.matmul(w)?.add_row(b)
    }

    pub fn t(&self) -> Result<Var<'t, F>> {
        let out = self.tape.with(self.id, |x| {
            let (r, c) = x.dims2();
            let mut data = vec![F::zero(); r * c];
            for i in 0..r {
                for j in 0..c {
                    data[j * r + i] = x.data()[i * c + j];
                }
            }
            Tensor::new(vec![c, r], data)
        })?;
        Ok(self.tape.derived(out, Op::Transpose(self.id), &[self.id]))
    }

    pub fn concat_cols(&self, other: Var<'t, F>) -> Result<Var<'t, F>> {
        self.tape.concat_cols(&[*self, other])
    }

    pub fn slice_rows(&self, start: usize, len: usize) -> Result<Var<'t, F>> {
        let out = self.tape.with(self.id, |x| {
            let (r, c) = x.dims2();
            if len == 0 || start + len > r {
                return Err(Error::Index(format!("row slice {start}..{} of {r}", start + len)));
            }
            Tensor::new(vec![len, c], x.data()[start * c..(start + len) * c].to_vec())
        })?;
        Ok(self
            .tape
            .derived(out, Op::SliceRows { src: self.id, start }, &[self.id]))
    }

    pub fn slice_cols(&self, start: usize, len: usize) -> Result<Var<'t, F>> {
        let out = self.tape.with(self.id, |x| {
            let (r, c) = x.dims2();
            if len == 0 || start + len > c {
                return Err(Error::Index(format!("column slice {start}..{} of {c}", start + len)));
            }
            let data = x
                .data()
                .chunks(c)
                .flat_map(|row| row[start..start + len].iter().copied())
                .collect();
            Tensor::new(vec![r, len], data)
        })?;
        Ok(self
            .tape
            .derived(out, Op::SliceCols { src: self.id, start }, &[self.id]))
    }

    /// Copies a vector into `rows` identical rows.
    pub fn broadcast_rows(&self, rows: usize) -> Result<Var<'t, F>> {
        let out = self.tape.with(self.id, |x| {
            let (r, c) = x.dims2();
            if r != 1 {
                return Err(Error::shape("broadcast_rows", x.shape(), &[1, c]));
            }
            Tensor::new(vec![rows, c], x.data().repeat(rows))
        })?;
        Ok(self.tape.derived(out, Op::BroadcastRows(self.id), &[self.id]))
    }

    /// Softmax over the last dimension, restricted to positions where
    /// `mask` is true. The same column mask applies to every row.
    pub fn softmax_masked(&self, mask: &[bool]) -> Result<Var<'t, F>> {
        let out = self.tape.with(self.id, |x| {
            let c = x.dims2().1;
            if mask.len() != c {
                return Err(Error::shape("softmax_masked", x.shape(), &[mask.len()]));
            }
            if !mask.iter().any(|&m| m) {
                return Err(Error::InvalidInput(
                    "softmax over a fully masked row is undefined".into(),
                ));
            }
            Tensor::new(x.shape().to_vec(), softmax_rows(x.data(), c, mask))
        })?;
        Ok(self.tape.derived(out, Op::SoftmaxMasked(self.id), &[self.id]))
    }

    /// Row-wise layer normalization followed by a per-column affine.
    pub fn layer_norm(&self, gain: Var<'t, F>, bias: Var<'t, F>, eps: F) -> Result<Var<'t, F>> {
        let (out, xhat, inv_std) = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id].value;
            let (g, b) = (&nodes[gain.id].value, &nodes[bias.id].value);
            let (r, c) = x.dims2();
            if g.len() != c || b.len() != c {
                return Err(Error::shape("layer_norm", x.shape(), g.shape()));
            }
            let n = F::of(c as f64);
            let mut xhat = Vec::with_capacity(r * c);
            let mut inv_std = Vec::with_capacity(r);
            let mut data = Vec::with_capacity(r * c);
            for row in x.data().chunks(c) {
                let mean = row.iter().copied().sum::<F>() / n;
                let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / n;
                let is = F::one() / (var + eps).sqrt();
                inv_std.push(is);
                for ((&v, &gj), &bj) in row.iter().zip(g.data()).zip(b.data()) {
                    let h = (v - mean) * is;
                    xhat.push(h);
                    data.push(h * gj + bj);
                }
            }
            (Tensor::new(x.shape().to_vec(), data)?, xhat, inv_std)
        };
        Ok(self.tape.derived(
            out,
            Op::LayerNorm {
                x: self.id,
                gain: gain.id,
                bias: bias.id,
                xhat,
                inv_std,
            },
            &[self.id, gain.id, bias.id],
        ))
    }

    /// Inverted dropout. With `rng = None` (inference) or `rate = 0` this is
    /// the identity and records nothing.
    pub fn dropout<R: Rng + ?Sized>(&self, rate: f64, rng: Option<&mut R>) -> Result<Var<'t, F>> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidInput(format!("dropout rate {rate} not in [0, 1)")));
        }
        let Some(rng) = rng else { return Ok(*self) };
        if rate == 0.0 {
            return Ok(*self);
        }
        let n = self.value().len();
        let keep = F::of(1.0 / (1.0 - rate));
        let factors: Vec<F> = (0..n)
            .map(|_| if rng.gen::<f64>() < rate { F::zero() } else { keep })
            .collect();
        let out = self.tape.with(self.id, |x| {
            let data = x.data().iter().zip(&factors).map(|(&v, &f)| v * f).collect();
            Tensor::new(x.shape().to_vec(), data)
        })?;
        Ok(self.tape.derived(
            out,
            Op::MulConst {
                src: self.id,
                factors,
            },
            &[self.id],
        ))
    }

    pub fn gelu(&self) -> Result<Var<'t, F>> {
        let out = self.map(gelu)?;
        Ok(self.tape.derived(out, Op::Gelu(self.id), &[self.id]))
    }

    pub fn sum(&self) -> Result<Var<'t, F>> {
        let s = self.value().data().iter().copied().sum();
        Ok(self.tape.derived(Tensor::scalar(s), Op::Sum(self.id), &[self.id]))
    }

    /// Sum over rows of `-log softmax(row)[target]`. Rows whose target is
    /// `None` contribute nothing.
    pub fn cross_entropy(&self, targets: &[Option<usize>]) -> Result<Var<'t, F>> {
        let (loss, probs) = self.tape.with(self.id, |x| {
            let (r, c) = x.dims2();
            if targets.len() != r {
                return Err(Error::shape("cross_entropy", x.shape(), &[targets.len()]));
            }
            let probs = softmax_rows(x.data(), c, &vec![true; c]);
            let mut loss = F::zero();
            for (i, t) in targets.iter().enumerate() {
                let Some(t) = *t else { continue };
                if t >= c {
                    return Err(Error::Index(format!("target class {t} >= {c} classes")));
                }
                let row = x.row(i);
                let m = row.iter().fold(F::neg_infinity(), |m, &v| m.max(v));
                let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<F>().ln();
                loss += lse - row[t];
            }
            Ok((loss, probs))
        })?;
        Ok(self.tape.derived(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits: self.id,
                targets: targets.to_vec(),
                probs,
            },
            &[self.id],
        ))
    }

    /// `(1/count) * sum_masked BCE(sigmoid(x), y)`, evaluated as
    /// `max(x, 0) - x y + log(1 + exp(-|x|))`.
    pub fn bce_with_logits(&self, targets: &[F], mask: &[bool], count: usize) -> Result<Var<'t, F>> {
        if count == 0 {
            return Err(Error::InvalidInput(
                "binary cross entropy over zero elements".into(),
            ));
        }
        let loss = self.tape.with(self.id, |x| {
            if targets.len() != x.len() || mask.len() != x.len() {
                return Err(Error::shape("bce_with_logits", x.shape(), &[targets.len()]));
            }
            let mut s = F::zero();
            for ((&v, &y), &m) in x.data().iter().zip(targets).zip(mask) {
                if m {
                    s += v.max(F::zero()) - v * y + (F::one() + (-v.abs()).exp()).ln();
                }
            }
            Ok(s / F::of(count as f64))
        })?;
        Ok(self.tape.derived(
            Tensor::scalar(loss),
            Op::BceWithLogits {
                logits: self.id,
                targets: targets.to_vec(),
                mask: mask.to_vec(),
                inv_count: F::one() / F::of(count as f64),
            },
            &[self.id],
        ))
    }
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), v.to_vec()).unwrap()
    }

    #[test]
    fn matmul_zero_annihilates() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(t(&[3, 4], &(0..12).map(|i| i as f64 - 5.0).collect::<Vec<_>>()));
        let c = a.matmul(b).unwrap();
        assert_eq!(c.shape(), vec![2, 4]);
        assert!(c.value().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        let msg = a.matmul(b).unwrap_err().to_string();
        assert!(msg.contains("matmul") && msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn affine_identity_is_identity() {
        let tape = Tape::new();
        let x = tape.constant(t(&[2, 3], &[1.0, -2.0, 3.0, 0.5, 0.0, 7.0]));
        let mut eye = vec![0.0; 9];
        for i in 0..3 {
            eye[i * 3 + i] = 1.0;
        }
        let w = tape.constant(t(&[3, 3], &eye));
        let b = tape.constant(Tensor::zeros(&[3]));
        let y = x.affine(w, b).unwrap();
        assert_eq!(y.value().data(), x.value().data());
    }

    #[test]
    fn concat_cols_widths_add() {
        let tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::zeros(&[4, 8]));
        let b = tape.constant(Tensor::full(&[4, 3], 1.0));
        let c = a.concat_cols(b).unwrap();
        assert_eq!(c.shape(), vec![4, 11]);
        assert_eq!(c.value().row(2)[8..], [1.0, 1.0, 1.0]);
        let bad = tape.constant(Tensor::zeros(&[3, 3]));
        assert!(a.concat_cols(bad).is_err());
    }

    #[test]
    fn softmax_masked_examples() {
        let tape = Tape::new();
        let x = tape.constant(t(&[1, 3], &[0.7, 0.7, 0.7]));
        let y = x.softmax_masked(&[true, true, true]).unwrap();
        for &v in y.value().data() {
            assert_abs_diff_eq!(v, 1.0 / 3.0, epsilon = 1e-15);
        }

        let x = tape.constant(t(&[1, 2], &[0.0, 0.0]));
        let y = x.softmax_masked(&[true, false]).unwrap();
        assert_eq!(y.value().data(), &[1.0, 0.0]);

        let x = tape.constant(t(&[1, 3], &[2f64.ln(), 0.0, 0.0]));
        let y = x.softmax_masked(&[true; 3]).unwrap();
        let v = y.value();
        assert_abs_diff_eq!(v.data()[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(v.data()[1], 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(v.data()[2], 0.25, epsilon = 1e-15);
    }

    #[test]
    fn softmax_all_masked_is_error() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(&[2, 2]));
        assert!(x.softmax_masked(&[false, false]).is_err());
    }

    #[test]
    fn layer_norm_examples() {
        let tape = Tape::new();
        let ones = tape.constant(Tensor::full(&[2], 1.0));
        let zeros = tape.constant(Tensor::zeros(&[2]));
        let x = tape.constant(t(&[1, 2], &[3.0, 3.0]));
        let y = x.layer_norm(ones, zeros, 1e-5).unwrap();
        assert_eq!(y.value().data(), &[0.0, 0.0]);

        let x = tape.constant(t(&[1, 2], &[-1.0, 1.0]));
        let y = x.layer_norm(ones, zeros, 1e-12).unwrap();
        assert_abs_diff_eq!(y.value().data()[0], -1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(y.value().data()[1], 1.0, epsilon = 1e-9);

        let c = tape.constant(Tensor::full(&[2], 4.5));
        let x = tape.constant(t(&[1, 2], &[-8.0, 2.0]));
        let y = x.layer_norm(zeros, c, 1e-5).unwrap();
        assert_eq!(y.value().data(), &[4.5, 4.5]);
    }

    #[test]
    fn dropout_identity_cases() {
        let tape = Tape::new();
        let x = tape.constant(t(&[1, 4], &[1.0, 2.0, 3.0, 4.0]));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let y = x.dropout(0.0, Some(&mut rng)).unwrap();
        assert_eq!(y.id(), x.id());
        let y = x.dropout::<ChaCha8Rng>(0.1, None).unwrap();
        assert_eq!(y.id(), x.id());
        assert!(x.dropout(1.0, Some(&mut rng)).is_err());
    }

    #[test]
    fn dropout_preserves_mean() {
        let tape = Tape::new();
        let n = 200_000;
        let x = tape.constant(Tensor::full(&[1, n], 2.0));
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let y = x.dropout(0.5, Some(&mut rng)).unwrap();
        let v = y.value();
        let mean = v.data().iter().sum::<f64>() / n as f64;
        // each element is 0 or 4: std of the mean is 2 / sqrt(n)
        assert!((mean - 2.0).abs() < 5.0 * 2.0 / (n as f64).sqrt(), "{mean}");
        assert!(v.data().iter().all(|&e| e == 0.0 || e == 4.0));
    }

    #[test]
    fn cross_entropy_examples() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::full(&[1, 4], 0.3));
        assert_abs_diff_eq!(x.cross_entropy(&[Some(2)]).unwrap().item(), 4f64.ln(), epsilon = 1e-12);

        let x = tape.constant(t(&[1, 3], &[60.0, 0.0, 0.0]));
        assert_abs_diff_eq!(x.cross_entropy(&[Some(0)]).unwrap().item(), 0.0, epsilon = 1e-12);

        let x = tape.constant(t(&[1, 2], &[1.0, 0.0]));
        let e = std::f64::consts::E;
        let expect = -(e / (e + 1.0)).ln();
        assert_abs_diff_eq!(x.cross_entropy(&[Some(0)]).unwrap().item(), expect, epsilon = 1e-12);
        assert_abs_diff_eq!(expect, 0.3133, epsilon = 1e-4);

        assert!(x.cross_entropy(&[Some(2)]).is_err());
    }

    #[test]
    fn bce_examples() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[2, 3]));
        let y = [1.0, 0.0, 1.0, 1.0, 0.0, 0.0];
        let l = x.bce_with_logits(&y, &[true; 6], 6).unwrap();
        assert_abs_diff_eq!(l.item(), 2f64.ln(), epsilon = 1e-12);

        let x = tape.constant(t(&[1, 1], &[3f64.ln()]));
        let l = x.bce_with_logits(&[1.0], &[true], 1).unwrap();
        assert_abs_diff_eq!(l.item(), -(0.75f64).ln(), epsilon = 1e-12);

        let x = tape.constant(t(&[1, 2], &[40.0, -40.0]));
        let l = x.bce_with_logits(&[1.0, 0.0], &[true; 2], 2).unwrap();
        assert_abs_diff_eq!(l.item(), 0.0, epsilon = 1e-12);

        assert!(x.bce_with_logits(&[1.0, 0.0], &[true; 2], 0).is_err());
    }

    #[test]
    fn backward_simple_cases() {
        let tape = Tape::new();
        let x = tape.param(t(&[2, 3], &[0.1, -0.4, 2.0, 1.0, 1.0, -3.0]));
        let loss = x.softmax_masked(&[true; 3]).unwrap().sum().unwrap();
        tape.backward(loss).unwrap();
        for g in x.grad().unwrap() {
            assert_abs_diff_eq!(g, 0.0, epsilon = 1e-15);
        }

        let tape = Tape::new();
        let x = tape.param(t(&[2, 2], &[0.1, -0.4, 2.0, 1.0]));
        let loss = x.sum().unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0; 4]);
        tape.backward(loss).unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0; 4]);

        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn constants_get_no_grad() {
        let tape = Tape::new();
        let x = tape.constant(t(&[1, 2], &[1.0, 2.0]));
        let w = tape.param(t(&[2, 1], &[1.0, 1.0]));
        let loss = x.matmul(w).unwrap().sum().unwrap();
        tape.backward(loss).unwrap();
        assert!(x.grad().is_none());
        assert_eq!(w.grad().unwrap(), vec![1.0, 2.0]);
    }
}
