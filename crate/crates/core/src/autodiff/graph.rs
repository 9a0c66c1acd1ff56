use crate::error::{Error, Result};

use super::Tensor;

/// Handle to a node recorded on a [`Graph`].
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
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Log(Var),
    Exp(Var),
    Pow(Var, f64),
    Softmax(Var),
    LogSoftmax(Var),
    ConcatCols(Var, Var),
    ConcatRows(Var, Var),
    SliceRows(Var, usize),
    Gather(Var, Vec<usize>),
    Sum(Var),
    MeanMasked(Var, Vec<f64>),
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Append-only tape. Nodes are pushed in evaluation order, so the tape order is
/// already a topological order and backward is a single reverse sweep.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`, `None` if `v` does not
    /// require gradients. Leaves with no path to the loss get exact zeros.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

fn check_rank2(op: &'static str, t: &Tensor) -> Result<()> {
    if t.is_rank2() {
        Ok(())
    } else {
        Err(Error::Shape {
            op,
            lhs: t.shape().to_vec(),
            rhs: vec![],
        })
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(Error::Shape {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        })
    }
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    let data = t.data().iter().map(|&x| f(x)).collect();
    Tensor::new(t.shape().to_vec(), data).expect("shape preserved")
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::new(a.shape().to_vec(), data).expect("shape preserved")
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

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(Op::Leaf, t, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(Op::Leaf, t, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::MatMul(a, b), out, rg))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        check_rank2("transpose", self.value(x))?;
        let out = self.value(x).transpose();
        let rg = self.rg(x);
        Ok(self.push(Op::Transpose(x), out, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", self.value(a), self.value(b))?;
        let out = zip(self.value(a), self.value(b), |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Add(a, b), out, rg))
    }

    /// `x + bias` with a `1 x n` bias added to every row of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        if !xv.is_rank2() || bv.shape() != [1, xv.cols()] {
            return Err(Error::Shape {
                op: "add_row",
                lhs: xv.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let n = xv.cols();
        let mut out = xv.clone();
        for (i, o) in out.data_mut().iter_mut().enumerate() {
            *o += bv.data()[i % n];
        }
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(Op::AddRow(x, bias), out, rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("mul", self.value(a), self.value(b))?;
        let out = zip(self.value(a), self.value(b), |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Mul(a, b), out, rg))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = map(self.value(x), |v| v * c);
        let rg = self.rg(x);
        self.push(Op::Scale(x, c), out, rg)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let out = map(self.value(x), |v| v + c);
        let rg = self.rg(x);
        self.push(Op::AddScalar(x), out, rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = map(self.value(x), |v| if v > 0.0 { v } else { 0.0 });
        let rg = self.rg(x);
        self.push(Op::Relu(x), out, rg)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        if self.value(x).data().iter().any(|&v| v.is_nan() || v <= 0.0) {
            return Err(Error::NonFinite("log of non-positive input".into()));
        }
        let out = map(self.value(x), f64::ln);
        let rg = self.rg(x);
        Ok(self.push(Op::Log(x), out, rg))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let out = map(self.value(x), f64::exp);
        let rg = self.rg(x);
        self.push(Op::Exp(x), out, rg)
    }

    pub fn pow(&mut self, x: Var, p: f64) -> Result<Var> {
        let out = map(self.value(x), |v| v.powf(p));
        if !out.is_finite() {
            return Err(Error::NonFinite(format!("pow(x, {p})")));
        }
        let rg = self.rg(x);
        Ok(self.push(Op::Pow(x, p), out, rg))
    }

    /// Row-wise softmax, computed after subtracting the row maximum.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        self.softmax_rows_masked(x, None)
    }

    /// Row-wise softmax over the columns where `keep` is true. Dropped columns
    /// get probability exactly zero (equivalent to a `-inf` logit). A row with
    /// no kept column is all zeros.
    pub fn softmax_rows_masked(&mut self, x: Var, keep: Option<&[bool]>) -> Result<Var> {
        let xv = self.value(x);
        check_rank2("softmax_rows", xv)?;
        if !xv.is_finite() {
            return Err(Error::NonFinite("softmax_rows input".into()));
        }
        let n = xv.cols();
        if let Some(keep) = keep {
            if keep.len() != n {
                return Err(Error::Shape {
                    op: "softmax_rows_masked",
                    lhs: xv.shape().to_vec(),
                    rhs: vec![keep.len()],
                });
            }
        }
        let kept = |j: usize| keep.is_none_or(|k| k[j]);
        let mut out = Tensor::zeros_like(xv);
        for r in 0..xv.rows() {
            let row = xv.row(r);
            let max = (0..n)
                .filter(|&j| kept(j))
                .map(|j| row[j])
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                continue;
            }
            let dst = &mut out.data_mut()[r * n..(r + 1) * n];
            let mut total = 0.0;
            for j in 0..n {
                if kept(j) {
                    dst[j] = (row[j] - max).exp();
                    total += dst[j];
                }
            }
            for d in dst.iter_mut() {
                *d /= total;
            }
        }
        let rg = self.rg(x);
        Ok(self.push(Op::Softmax(x), out, rg))
    }

    pub fn log_softmax_rows(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        check_rank2("log_softmax_rows", xv)?;
        if !xv.is_finite() {
            return Err(Error::NonFinite("log_softmax_rows input".into()));
        }
        let n = xv.cols();
        let mut out = xv.clone();
        for r in 0..xv.rows() {
            let row = &mut out.data_mut()[r * n..(r + 1) * n];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        let rg = self.rg(x);
        Ok(self.push(Op::LogSoftmax(x), out, rg))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if !av.is_rank2() || !bv.is_rank2() || av.rows() != bv.rows() {
            return Err(Error::Shape {
                op: "concat_cols",
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let (m, na, nb) = (av.rows(), av.cols(), bv.cols());
        let mut data = Vec::with_capacity(m * (na + nb));
        for r in 0..m {
            data.extend_from_slice(av.row(r));
            data.extend_from_slice(bv.row(r));
        }
        let out = Tensor::from_rows(m, na + nb, data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::ConcatCols(a, b), out, rg))
    }

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if !av.is_rank2() || !bv.is_rank2() || av.cols() != bv.cols() {
            return Err(Error::Shape {
                op: "concat_rows",
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let mut data = av.data().to_vec();
        data.extend_from_slice(bv.data());
        let out = Tensor::from_rows(av.rows() + bv.rows(), av.cols(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::ConcatRows(a, b), out, rg))
    }

    /// Rows `start..end` of `x`.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let xv = self.value(x);
        if !xv.is_rank2() || start >= end || end > xv.rows() {
            return Err(Error::Shape {
                op: "slice_rows",
                lhs: xv.shape().to_vec(),
                rhs: vec![start, end],
            });
        }
        let n = xv.cols();
        let out = Tensor::from_rows(end - start, n, xv.data()[start * n..end * n].to_vec())?;
        let rg = self.rg(x);
        Ok(self.push(Op::SliceRows(x, start), out, rg))
    }

    /// Picks column `index[r]` from each row `r`, giving an `m x 1` tensor.
    pub fn gather_cols(&mut self, x: Var, index: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        if !xv.is_rank2() || index.len() != xv.rows() || index.iter().any(|&c| c >= xv.cols()) {
            return Err(Error::Shape {
                op: "gather_cols",
                lhs: xv.shape().to_vec(),
                rhs: vec![index.len()],
            });
        }
        let data = index
            .iter()
            .enumerate()
            .map(|(r, &c)| xv.get(r, c))
            .collect();
        let out = Tensor::from_rows(index.len(), 1, data)?;
        let rg = self.rg(x);
        Ok(self.push(Op::Gather(x, index.to_vec()), out, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        self.push(Op::Sum(x), Tensor::scalar(s), rg)
    }

    /// Mean of the entries of `x` whose mask value is 1.
    pub fn mean_masked(&mut self, x: Var, mask: &[f64]) -> Result<Var> {
        let xv = self.value(x);
        if mask.len() != xv.numel() {
            return Err(Error::Shape {
                op: "mean_masked",
                lhs: xv.shape().to_vec(),
                rhs: vec![mask.len()],
            });
        }
        if mask.iter().any(|&m| m != 0.0 && m != 1.0) {
            return Err(Error::InvalidTensor("mean_masked mask must be 0/1".into()));
        }
        let count: f64 = mask.iter().sum();
        if count == 0.0 {
            return Err(Error::EmptyMask("mean_masked"));
        }
        let s: f64 = xv.data().iter().zip(mask).map(|(v, m)| v * m).sum();
        let rg = self.rg(x);
        Ok(self.push(
            Op::MeanMasked(x, mask.to_vec()),
            Tensor::scalar(s / count),
            rg,
        ))
    }

    /// Reverse sweep from a scalar `loss`. Gradients accumulate additively over
    /// fan-out.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::new(lv.shape().to_vec(), vec![1.0])?);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }

        for (idx, node) in self.nodes.iter().enumerate() {
            if !node.requires_grad {
                grads[idx] = None;
            } else if grads[idx].is_none() {
                grads[idx] = Some(Tensor::zeros_like(&node.value));
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let mut acc = |v: Var, d: Tensor| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&d),
                slot @ None => *slot = Some(d),
            }
        };
        let val = |v: Var| &self.nodes[v.0].value;

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.rg(*a) {
                    acc(*a, g.matmul(&val(*b).transpose()).expect("matmul grad"));
                }
                if self.rg(*b) {
                    acc(*b, val(*a).transpose().matmul(g).expect("matmul grad"));
                }
            }
            Op::Transpose(x) => acc(*x, g.transpose()),
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::AddRow(x, bias) => {
                acc(*x, g.clone());
                let n = g.cols();
                let mut db = Tensor::zeros(1, n);
                for (i, v) in g.data().iter().enumerate() {
                    db.data_mut()[i % n] += v;
                }
                acc(*bias, db);
            }
            Op::Mul(a, b) => {
                acc(*a, zip(g, val(*b), |g, y| g * y));
                acc(*b, zip(g, val(*a), |g, x| g * x));
            }
            Op::Scale(x, c) => acc(*x, map(g, |g| g * c)),
            Op::AddScalar(x) => acc(*x, g.clone()),
            Op::Relu(x) => acc(*x, zip(g, val(*x), |g, x| if x > 0.0 { g } else { 0.0 })),
            Op::Log(x) => acc(*x, zip(g, val(*x), |g, x| g / x)),
            Op::Exp(x) => acc(*x, zip(g, &node.value, |g, y| g * y)),
            Op::Pow(x, p) => {
                let p = *p;
                let d = zip(g, val(*x), |g, x| {
                    if p == 0.0 || (x == 0.0 && p < 1.0) {
                        0.0
                    } else {
                        g * p * x.powf(p - 1.0)
                    }
                });
                acc(*x, d)
            }
            Op::Softmax(x) => {
                let y = &node.value;
                let n = y.cols();
                let mut d = Tensor::zeros_like(y);
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        d.data_mut()[r * n + j] = yr[j] * (gr[j] - dot);
                    }
                }
                acc(*x, d)
            }
            Op::LogSoftmax(x) => {
                let y = &node.value;
                let n = y.cols();
                let mut d = Tensor::zeros_like(y);
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let gsum: f64 = gr.iter().sum();
                    for j in 0..n {
                        d.data_mut()[r * n + j] = gr[j] - yr[j].exp() * gsum;
                    }
                }
                acc(*x, d)
            }
            Op::ConcatCols(a, b) => {
                let na = val(*a).cols();
                let nb = val(*b).cols();
                let mut da = Vec::with_capacity(g.rows() * na);
                let mut db = Vec::with_capacity(g.rows() * nb);
                for r in 0..g.rows() {
                    let row = g.row(r);
                    da.extend_from_slice(&row[..na]);
                    db.extend_from_slice(&row[na..]);
                }
                acc(*a, Tensor::from_rows(g.rows(), na, da).expect("split"));
                acc(*b, Tensor::from_rows(g.rows(), nb, db).expect("split"));
            }
            Op::ConcatRows(a, b) => {
                let split = val(*a).numel();
                let (ma, mb) = (val(*a).rows(), val(*b).rows());
                acc(
                    *a,
                    Tensor::from_rows(ma, g.cols(), g.data()[..split].to_vec()).expect("split"),
                );
                acc(
                    *b,
                    Tensor::from_rows(mb, g.cols(), g.data()[split..].to_vec()).expect("split"),
                );
            }
            Op::SliceRows(x, start) => {
                let mut d = Tensor::zeros_like(val(*x));
                let n = g.cols();
                d.data_mut()[start * n..start * n + g.numel()].copy_from_slice(g.data());
                acc(*x, d)
            }
            Op::Gather(x, index) => {
                let mut d = Tensor::zeros_like(val(*x));
                let n = d.cols();
                for (r, &c) in index.iter().enumerate() {
                    d.data_mut()[r * n + c] += g.data()[r];
                }
                acc(*x, d)
            }
            Op::Sum(x) => {
                let xv = val(*x);
                let d = Tensor::new(xv.shape().to_vec(), vec![g.item(); xv.numel()]);
                acc(*x, d.expect("sum shape"))
            }
            Op::MeanMasked(x, mask) => {
                let count: f64 = mask.iter().sum();
                let gv = g.item() / count;
                let data = mask.iter().map(|m| m * gv).collect();
                acc(
                    *x,
                    Tensor::new(val(*x).shape().to_vec(), data).expect("mask shape"),
                )
            }
        }
    }
}
