//! Dense `f64` tensors and a tape for reverse-mode differentiation.
//!
//! Every primitive appends one node to a [`Tape`]. Nodes are stored in
//! creation order, which is already a topological order, so the backward
//! sweep is a single reverse pass over the node list. Values are row-major;
//! a "matrix" is any rank-2 tensor and a "vector" is rank 1. Scalars have an
//! empty shape.
//!
//! Broadcasting is deliberately narrow: the right operand of `add`, `sub`
//! and `mul` may either match the left operand exactly, match its last
//! dimension (row broadcast), or hold a single element.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {shape:?} needs {expected} values, got {}", data.len()),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn full(shape: Vec<usize>, value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Size of the last dimension (1 for scalars).
    pub fn last_dim(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    /// Number of rows when viewed as a matrix of `last_dim` columns.
    pub fn rows(&self) -> usize {
        self.data.len().checked_div(self.last_dim()).unwrap_or(0)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.last_dim();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Bcast {
    Same,
    Row,
    Scalar,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var, Bcast),
    Sub(Var, Var, Bcast),
    Mul(Var, Var, Bcast),
    Relu(Var),
    Exp(Var),
    Sigmoid(Var),
    Log(Var, f64),
    NegAbsDiff(Var, Var),
    Concat(Vec<Var>),
    MeanRows(Var),
    Sum(Var),
    Scale(Var, f64),
    AddScalar(Var),
    GroupedSoftmax(Var, Vec<usize>),
    Gather(Var, Vec<usize>),
    SegmentSum(Var, Vec<usize>),
    NeighborMean {
        x: Var,
        src: Vec<usize>,
        dst: Vec<usize>,
        inv_deg: Vec<f64>,
    },
    MulCol(Var, Var),
    Mask(Var, Vec<f64>),
    Reshape(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    tracked: bool,
}

/// Records primitive applications for one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// An input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn is_tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    /// Gradient of the last backward pass, if `v` received one.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient of `v`, or zeros when `v` did not influence the loss.
    pub fn grad_or_zeros(&self, v: Var) -> Vec<f64> {
        self.grad(v)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; self.value(v).len()])
    }

    fn push(&mut self, value: Tensor, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn tracked_any(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].tracked)
    }

    fn bcast(&self, op: &'static str, a: Var, b: Var) -> Result<Bcast> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() == tb.shape() {
            Ok(Bcast::Same)
        } else if tb.rank() == 1 && ta.rank() >= 1 && tb.len() == ta.last_dim() {
            Ok(Bcast::Row)
        } else if tb.len() == 1 {
            Ok(Bcast::Scalar)
        } else {
            Err(Error::shape(
                op,
                format!("cannot broadcast {:?} onto {:?}", tb.shape(), ta.shape()),
            ))
        }
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        mk: impl Fn(Var, Var, Bcast) -> Op,
    ) -> Result<Var> {
        let mode = self.bcast(name, a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let c = ta.last_dim().max(1);
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let y = match mode {
                    Bcast::Same => tb.data()[i],
                    Bcast::Row => tb.data()[i % c],
                    Bcast::Scalar => tb.data()[0],
                };
                f(x, y)
            })
            .collect();
        let out = Tensor {
            shape: ta.shape().to_vec(),
            data,
        };
        let tracked = self.tracked_any(&[a, b]);
        Ok(self.push(out, mk(a, b, mode), tracked))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let ta = self.value(a);
        let out = Tensor {
            shape: ta.shape().to_vec(),
            data: ta.data().iter().map(|&x| f(x)).collect(),
        };
        let tracked = self.tracked_any(&[a]);
        self.push(out, op, tracked)
    }

    /// `[m,k] x [k,n] -> [m,n]`; a vector on either side is treated as a
    /// single row (left) or single column (right) and that axis is dropped.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = match ta.rank() {
            1 => (1, ta.len()),
            2 => (ta.shape()[0], ta.shape()[1]),
            _ => return Err(Error::shape("matmul", format!("lhs {:?}", ta.shape()))),
        };
        let (k2, n) = match tb.rank() {
            1 => (tb.len(), 1),
            2 => (tb.shape()[0], tb.shape()[1]),
            _ => return Err(Error::shape("matmul", format!("rhs {:?}", tb.shape()))),
        };
        if k != k2 {
            return Err(Error::shape(
                "matmul",
                format!("{:?} x {:?}", ta.shape(), tb.shape()),
            ));
        }
        let mut out = vec![0.0; m * n];
        let (ad, bd) = (ta.data(), tb.data());
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let av = ad[i * k + p];
                if av == 0.0 {
                    continue;
                }
                let brow = &bd[p * n..(p + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
        let shape = match (ta.rank(), tb.rank()) {
            (1, 1) => vec![],
            (1, _) => vec![n],
            (_, 1) => vec![m],
            _ => vec![m, n],
        };
        let tracked = self.tracked_any(&[a, b]);
        Ok(self.push(Tensor { shape, data: out }, Op::MatMul(a, b), tracked))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| if x > 0.0 { x } else { 0.0 }, Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    /// Natural log. Inputs must be positive.
    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Log(a, 0.0))
    }

    /// `ln(max(x, floor))`; the gradient is zero where the floor is active.
    pub fn log_clamped(&mut self, a: Var, floor: f64) -> Var {
        self.unary(a, |x| x.max(floor).ln(), Op::Log(a, floor))
    }

    /// `exp(-|a - b|)` elementwise; shapes must match.
    pub fn neg_abs_diff(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(
                "neg_abs_diff",
                format!("{:?} vs {:?}", ta.shape(), tb.shape()),
            ));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| (-(x - y).abs()).exp())
            .collect();
        let out = Tensor {
            shape: ta.shape().to_vec(),
            data,
        };
        let tracked = self.tracked_any(&[a, b]);
        Ok(self.push(out, Op::NegAbsDiff(a, b), tracked))
    }

    /// Concatenate along the last dimension. All leading dimensions must agree.
    pub fn concat_last(&mut self, xs: &[Var]) -> Result<Var> {
        let first = xs
            .first()
            .ok_or_else(|| Error::shape("concat_last", "no inputs"))?;
        let lead = {
            let s = self.value(*first).shape();
            s[..s.len().saturating_sub(1)].to_vec()
        };
        let rows: usize = lead.iter().product();
        let mut widths = Vec::with_capacity(xs.len());
        for &x in xs {
            let t = self.value(x);
            if t.rank() == 0 || t.shape()[..t.rank() - 1] != lead[..] {
                return Err(Error::shape(
                    "concat_last",
                    format!("leading dims {:?} vs {:?}", t.shape(), lead),
                ));
            }
            widths.push(t.last_dim());
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&x, &w) in xs.iter().zip(&widths) {
                data.extend_from_slice(&self.value(x).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let tracked = self.tracked_any(xs);
        Ok(self.push(Tensor { shape, data }, Op::Concat(xs.to_vec()), tracked))
    }

    /// Mean over rows: `[m,n] -> [n]`, `[m] -> scalar`. Zero rows give zeros.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        let (m, n, shape) = match ta.rank() {
            1 => (ta.len(), 1, vec![]),
            2 => (ta.shape()[0], ta.shape()[1], vec![ta.shape()[1]]),
            _ => return Err(Error::shape("mean_rows", format!("{:?}", ta.shape()))),
        };
        let mut data = vec![0.0; n];
        if m > 0 {
            for r in 0..m {
                for (o, &x) in data.iter_mut().zip(&ta.data()[r * n..(r + 1) * n]) {
                    *o += x;
                }
            }
            let inv = 1.0 / m as f64;
            data.iter_mut().for_each(|o| *o *= inv);
        }
        let tracked = self.tracked_any(&[a]);
        Ok(self.push(Tensor { shape, data }, Op::MeanRows(a), tracked))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let tracked = self.tracked_any(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), tracked)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| c * x, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x + c, Op::AddScalar(a))
    }

    /// Softmax computed independently within each group of a vector.
    /// `groups[i]` is the group of element `i`.
    pub fn grouped_softmax(&mut self, a: Var, groups: &[usize]) -> Result<Var> {
        let ta = self.value(a);
        if ta.rank() != 1 || ta.len() != groups.len() {
            return Err(Error::shape(
                "grouped_softmax",
                format!("{:?} with {} group ids", ta.shape(), groups.len()),
            ));
        }
        let data = grouped_softmax_values(ta.data(), groups);
        let tracked = self.tracked_any(&[a]);
        Ok(self.push(
            Tensor::vector(data),
            Op::GroupedSoftmax(a, groups.to_vec()),
            tracked,
        ))
    }

    /// Select rows of a matrix (or elements of a vector).
    pub fn gather(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let ta = self.value(a);
        if ta.rank() == 0 || ta.rank() > 2 {
            return Err(Error::shape("gather", format!("{:?}", ta.shape())));
        }
        let rows = ta.shape()[0];
        let c = if ta.rank() == 2 { ta.shape()[1] } else { 1 };
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            if i >= rows {
                return Err(Error::shape("gather", format!("row {i} of {rows}")));
            }
            data.extend_from_slice(&ta.data()[i * c..(i + 1) * c]);
        }
        let shape = if ta.rank() == 2 {
            vec![idx.len(), c]
        } else {
            vec![idx.len()]
        };
        let tracked = self.tracked_any(&[a]);
        Ok(self.push(Tensor { shape, data }, Op::Gather(a, idx.to_vec()), tracked))
    }

    /// Sum rows (or elements) into `n` buckets: `out[seg[i]] += a[i]`.
    pub fn segment_sum(&mut self, a: Var, seg: &[usize], n: usize) -> Result<Var> {
        let ta = self.value(a);
        if ta.rank() == 0 || ta.rank() > 2 || ta.shape()[0] != seg.len() {
            return Err(Error::shape(
                "segment_sum",
                format!("{:?} with {} segment ids", ta.shape(), seg.len()),
            ));
        }
        let c = if ta.rank() == 2 { ta.shape()[1] } else { 1 };
        let mut data = vec![0.0; n * c];
        for (i, &s) in seg.iter().enumerate() {
            if s >= n {
                return Err(Error::shape("segment_sum", format!("segment {s} of {n}")));
            }
            for (o, &x) in data[s * c..(s + 1) * c]
                .iter_mut()
                .zip(&ta.data()[i * c..(i + 1) * c])
            {
                *o += x;
            }
        }
        let shape = if ta.rank() == 2 { vec![n, c] } else { vec![n] };
        let tracked = self.tracked_any(&[a]);
        Ok(self.push(Tensor { shape, data }, Op::SegmentSum(a, seg.to_vec()), tracked))
    }

    /// For every target `v`, the mean of rows `x[src[e]]` over edges with
    /// `dst[e] == v`; targets without edges get a zero row. Equivalent to a
    /// gather followed by a segment mean, without materialising the gathered
    /// edge matrix.
    pub fn neighbor_mean(&mut self, x: Var, src: &[usize], dst: &[usize], n: usize) -> Result<Var> {
        let tx = self.value(x);
        if tx.rank() != 2 || src.len() != dst.len() {
            return Err(Error::shape(
                "neighbor_mean",
                format!("{:?} with {}/{} endpoints", tx.shape(), src.len(), dst.len()),
            ));
        }
        let (rows, c) = (tx.shape()[0], tx.shape()[1]);
        let mut deg = vec![0usize; n];
        for (&s, &d) in src.iter().zip(dst) {
            if s >= rows || d >= n {
                return Err(Error::shape("neighbor_mean", format!("edge {s}->{d}")));
            }
            deg[d] += 1;
        }
        let inv_deg: Vec<f64> = deg
            .iter()
            .map(|&k| if k == 0 { 0.0 } else { 1.0 / k as f64 })
            .collect();
        let mut data = vec![0.0; n * c];
        for (&s, &d) in src.iter().zip(dst) {
            let w = inv_deg[d];
            for (o, &v) in data[d * c..(d + 1) * c]
                .iter_mut()
                .zip(&tx.data()[s * c..(s + 1) * c])
            {
                *o += w * v;
            }
        }
        let tracked = self.tracked_any(&[x]);
        let op = Op::NeighborMean {
            x,
            src: src.to_vec(),
            dst: dst.to_vec(),
            inv_deg,
        };
        Ok(self.push(
            Tensor {
                shape: vec![n, c],
                data,
            },
            op,
            tracked,
        ))
    }

    /// Scale row `i` of `a` by `w[i]`.
    pub fn mul_col(&mut self, a: Var, w: Var) -> Result<Var> {
        let (ta, tw) = (self.value(a), self.value(w));
        if ta.rank() != 2 || tw.rank() != 1 || ta.shape()[0] != tw.len() {
            return Err(Error::shape(
                "mul_col",
                format!("{:?} by {:?}", ta.shape(), tw.shape()),
            ));
        }
        let c = ta.shape()[1];
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x * tw.data()[i / c])
            .collect();
        let out = Tensor {
            shape: ta.shape().to_vec(),
            data,
        };
        let tracked = self.tracked_any(&[a, w]);
        Ok(self.push(out, Op::MulCol(a, w), tracked))
    }

    /// Multiply by a fixed mask (dropout). The mask already carries the
    /// inverse keep-probability scaling.
    pub fn mask(&mut self, a: Var, mask: Vec<f64>) -> Result<Var> {
        let ta = self.value(a);
        if ta.len() != mask.len() {
            return Err(Error::shape(
                "mask",
                format!("{} values, {} mask entries", ta.len(), mask.len()),
            ));
        }
        let data = ta.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let out = Tensor {
            shape: ta.shape().to_vec(),
            data,
        };
        let tracked = self.tracked_any(&[a]);
        Ok(self.push(out, Op::Mask(a, mask), tracked))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let ta = self.value(a);
        let out = Tensor::new(shape, ta.data().to_vec())?;
        let tracked = self.tracked_any(&[a]);
        Ok(self.push(out, Op::Reshape(a), tracked))
    }

    /// Back-propagate from a scalar loss.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got {:?}", self.value(loss).shape()),
            ));
        }
        self.backward_from(loss, &[1.0])
    }

    /// Back-propagate an explicit upstream gradient for `out`.
    pub fn backward_from(&mut self, out: Var, seed: &[f64]) -> Result<()> {
        if seed.len() != self.value(out).len() {
            return Err(Error::shape(
                "backward",
                format!("seed of {} for {:?}", seed.len(), self.value(out).shape()),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[out.0] = Some(seed.to_vec());
        for i in (0..=out.0).rev() {
            let Some(g) = grads[i].take() else {
                continue;
            };
            if !self.nodes[i].tracked {
                continue;
            }
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = &node.value;
        let nodes = &self.nodes;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !nodes[v.0].tracked {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
                let (m, k) = if ta.rank() == 1 {
                    (1, ta.len())
                } else {
                    (ta.shape()[0], ta.shape()[1])
                };
                let n = if tb.rank() == 1 { 1 } else { tb.shape()[1] };
                let (ad, bd) = (ta.data(), tb.data());
                // dA = G B^T
                acc(*a, &mut |ga| {
                    for r in 0..m {
                        let grow = &g[r * n..(r + 1) * n];
                        for p in 0..k {
                            let brow = &bd[p * n..(p + 1) * n];
                            let s: f64 = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                            ga[r * k + p] += s;
                        }
                    }
                });
                // dB = A^T G
                acc(*b, &mut |gb| {
                    for r in 0..m {
                        let grow = &g[r * n..(r + 1) * n];
                        for p in 0..k {
                            let av = ad[r * k + p];
                            if av == 0.0 {
                                continue;
                            }
                            for (o, &x) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *o += av * x;
                            }
                        }
                    }
                });
            }
            Op::Add(a, b, mode) | Op::Sub(a, b, mode) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                acc(*a, &mut |ga| {
                    ga.iter_mut().zip(g).for_each(|(o, x)| *o += x);
                });
                let c = out.last_dim().max(1);
                acc(*b, &mut |gb| reduce_bcast(gb, g, *mode, c, |_| sign));
            }
            Op::Mul(a, b, mode) => {
                let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
                let c = out.last_dim().max(1);
                let bval = |j: usize| match mode {
                    Bcast::Same => tb.data()[j],
                    Bcast::Row => tb.data()[j % c],
                    Bcast::Scalar => tb.data()[0],
                };
                acc(*a, &mut |ga| {
                    for (j, o) in ga.iter_mut().enumerate() {
                        *o += g[j] * bval(j);
                    }
                });
                acc(*b, &mut |gb| reduce_bcast(gb, g, *mode, c, |j| ta.data()[j]));
            }
            Op::Relu(a) => {
                let ta = &nodes[a.0].value;
                acc(*a, &mut |ga| {
                    for (j, o) in ga.iter_mut().enumerate() {
                        if ta.data()[j] > 0.0 {
                            *o += g[j];
                        }
                    }
                });
            }
            Op::Exp(a) => acc(*a, &mut |ga| {
                for (j, o) in ga.iter_mut().enumerate() {
                    *o += g[j] * out.data()[j];
                }
            }),
            Op::Sigmoid(a) => acc(*a, &mut |ga| {
                for (j, o) in ga.iter_mut().enumerate() {
                    let s = out.data()[j];
                    *o += g[j] * s * (1.0 - s);
                }
            }),
            Op::Log(a, floor) => {
                let ta = &nodes[a.0].value;
                acc(*a, &mut |ga| {
                    for (j, o) in ga.iter_mut().enumerate() {
                        let x = ta.data()[j];
                        if x >= *floor {
                            *o += g[j] / x;
                        }
                    }
                });
            }
            Op::NegAbsDiff(a, b) => {
                let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
                let sgn = |j: usize| {
                    let d = ta.data()[j] - tb.data()[j];
                    if d > 0.0 {
                        1.0
                    } else if d < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                };
                acc(*a, &mut |ga| {
                    for (j, o) in ga.iter_mut().enumerate() {
                        *o -= g[j] * out.data()[j] * sgn(j);
                    }
                });
                acc(*b, &mut |gb| {
                    for (j, o) in gb.iter_mut().enumerate() {
                        *o += g[j] * out.data()[j] * sgn(j);
                    }
                });
            }
            Op::Concat(xs) => {
                let total = out.last_dim();
                let rows = out.rows();
                let mut offset = 0;
                for x in xs {
                    let w = nodes[x.0].value.last_dim();
                    acc(*x, &mut |gx| {
                        for r in 0..rows {
                            for c in 0..w {
                                gx[r * w + c] += g[r * total + offset + c];
                            }
                        }
                    });
                    offset += w;
                }
            }
            Op::MeanRows(a) => {
                let ta = &nodes[a.0].value;
                let n = out.len();
                let m = ta.len().checked_div(n).unwrap_or(0);
                if m > 0 {
                    let inv = 1.0 / m as f64;
                    acc(*a, &mut |ga| {
                        for (j, o) in ga.iter_mut().enumerate() {
                            *o += g[j % n] * inv;
                        }
                    });
                }
            }
            Op::Sum(a) => acc(*a, &mut |ga| ga.iter_mut().for_each(|o| *o += g[0])),
            Op::Scale(a, c) => acc(*a, &mut |ga| {
                ga.iter_mut().zip(g).for_each(|(o, x)| *o += c * x);
            }),
            Op::AddScalar(a) | Op::Reshape(a) => acc(*a, &mut |ga| {
                ga.iter_mut().zip(g).for_each(|(o, x)| *o += x);
            }),
            Op::GroupedSoftmax(a, groups) => {
                let n_groups = groups.iter().max().map_or(0, |m| m + 1);
                let mut dot = vec![0.0; n_groups];
                for (j, &grp) in groups.iter().enumerate() {
                    dot[grp] += g[j] * out.data()[j];
                }
                acc(*a, &mut |ga| {
                    for (j, o) in ga.iter_mut().enumerate() {
                        *o += out.data()[j] * (g[j] - dot[groups[j]]);
                    }
                });
            }
            Op::Gather(a, idx) => {
                let c = out.last_dim().max(1);
                let c = if out.rank() == 1 { 1 } else { c };
                acc(*a, &mut |ga| {
                    for (r, &i) in idx.iter().enumerate() {
                        for k in 0..c {
                            ga[i * c + k] += g[r * c + k];
                        }
                    }
                });
            }
            Op::SegmentSum(a, seg) => {
                let c = if out.rank() == 1 { 1 } else { out.last_dim() };
                acc(*a, &mut |ga| {
                    for (r, &s) in seg.iter().enumerate() {
                        for k in 0..c {
                            ga[r * c + k] += g[s * c + k];
                        }
                    }
                });
            }
            Op::NeighborMean {
                x,
                src,
                dst,
                inv_deg,
            } => {
                let c = out.last_dim();
                acc(*x, &mut |gx| {
                    for (&s, &d) in src.iter().zip(dst) {
                        let w = inv_deg[d];
                        for k in 0..c {
                            gx[s * c + k] += w * g[d * c + k];
                        }
                    }
                });
            }
            Op::MulCol(a, w) => {
                let (ta, tw) = (&nodes[a.0].value, &nodes[w.0].value);
                let c = ta.shape()[1];
                acc(*a, &mut |ga| {
                    for (j, o) in ga.iter_mut().enumerate() {
                        *o += g[j] * tw.data()[j / c];
                    }
                });
                acc(*w, &mut |gw| {
                    for (r, o) in gw.iter_mut().enumerate() {
                        let s: f64 = (0..c).map(|k| g[r * c + k] * ta.data()[r * c + k]).sum();
                        *o += s;
                    }
                });
            }
            Op::Mask(a, mask) => acc(*a, &mut |ga| {
                for (j, o) in ga.iter_mut().enumerate() {
                    *o += g[j] * mask[j];
                }
            }),
        }
    }

    /// Smallest distance of any kink input (relu argument, `|a-b|` argument,
    /// clamped-log argument) from its kink. Finite-difference checks are only
    /// meaningful when this is comfortably larger than the step size.
    pub fn kink_margin(&self) -> f64 {
        let mut margin = f64::INFINITY;
        for node in &self.nodes {
            match &node.op {
                Op::Relu(a) => {
                    for &x in self.value(*a).data() {
                        margin = margin.min(x.abs());
                    }
                }
                Op::NegAbsDiff(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    for (x, y) in ta.data().iter().zip(tb.data()) {
                        // identical inputs sit exactly on the kink but stay
                        // there under perturbation of shared upstream values
                        let d = (x - y).abs();
                        if d > 0.0 {
                            margin = margin.min(d);
                        }
                    }
                }
                Op::Log(a, floor) if *floor > 0.0 => {
                    for &x in self.value(*a).data() {
                        margin = margin.min((x - floor).abs());
                    }
                }
                _ => {}
            }
        }
        margin
    }
}

fn reduce_bcast(gb: &mut [f64], g: &[f64], mode: Bcast, c: usize, coef: impl Fn(usize) -> f64) {
    match mode {
        Bcast::Same => {
            for (j, o) in gb.iter_mut().enumerate() {
                *o += g[j] * coef(j);
            }
        }
        Bcast::Row => {
            for (j, &x) in g.iter().enumerate() {
                gb[j % c] += x * coef(j);
            }
        }
        Bcast::Scalar => {
            gb[0] += g.iter().enumerate().map(|(j, &x)| x * coef(j)).sum::<f64>();
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Max-shifted softmax within groups. Empty input gives empty output.
pub fn grouped_softmax_values(x: &[f64], groups: &[usize]) -> Vec<f64> {
    let n_groups = groups.iter().max().map_or(0, |m| m + 1);
    let mut max = vec![f64::NEG_INFINITY; n_groups];
    for (&v, &g) in x.iter().zip(groups) {
        max[g] = max[g].max(v);
    }
    let e: Vec<f64> = x
        .iter()
        .zip(groups)
        .map(|(&v, &g)| (v - max[g]).exp())
        .collect();
    let mut denom = vec![0.0; n_groups];
    for (&v, &g) in e.iter().zip(groups) {
        denom[g] += v;
    }
    e.iter().zip(groups).map(|(&v, &g)| v / denom[g]).collect()
}
