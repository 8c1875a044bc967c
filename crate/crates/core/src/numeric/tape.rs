//! Recorded-tape reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Tape`] borrows a [`ParamStore`] for the duration of one forward pass.
//! Every operation appends a node holding its value; [`Tape::backward`]
//! walks the nodes in reverse and returns the gradient of a scalar loss with
//! respect to each parameter that was read.
//!
//! Matrix-shaped operations treat a rank-1 `[n]` value as the row `[1, n]`.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::numeric::params::{Gradients, ParamId, ParamStore};
use crate::numeric::tensor::{check_finite, logistic, matmul_raw, softplus, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MatMul(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    Logistic(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Abs(Var),
    LeakyRelu(Var, f64),
    LogLogisticDeriv(Var),
    MaxConst(Var, f64),
    Sum(Var),
    RowSum(Var),
    LogSumExp(Var),
    SliceCols(Var, usize, usize),
    SliceRows(Var, usize),
    ConcatCols(Var, Var),
    GatherCols(Var, Vec<usize>),
    RepeatRows(Var),
    TriAffine { h: Var, x: Var, k: usize },
    TriLogDiag { h: Var, k: usize },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Param(_) => "param",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::MatMul(..) => "matmul",
            Op::AddRow(..) => "add_row",
            Op::MulCol(..) => "mul_col",
            Op::Scale(..) => "scale",
            Op::AddConst(..) => "add_const",
            Op::Logistic(_) => "logistic",
            Op::Tanh(_) => "tanh",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::Abs(_) => "abs",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::LogLogisticDeriv(_) => "log_logistic_deriv",
            Op::MaxConst(..) => "max_const",
            Op::Sum(_) => "sum",
            Op::RowSum(_) => "row_sum",
            Op::LogSumExp(_) => "log_sum_exp",
            Op::SliceCols(..) => "slice_cols",
            Op::SliceRows(..) => "slice_rows",
            Op::ConcatCols(..) => "concat_cols",
            Op::GatherCols(..) => "gather_cols",
            Op::RepeatRows(..) => "repeat_rows",
            Op::TriAffine { .. } => "tri_affine",
            Op::TriLogDiag { .. } => "tri_log_diag",
        }
    }
}

struct Node {
    value: Option<Tensor>,
    op: Op,
}

/// Offset of row `i` of a packed lower-triangular matrix.
#[inline]
pub(crate) fn tri_offset(i: usize) -> usize {
    i * (i + 1) / 2
}

/// Number of hidden entries consumed by a `k`-dimensional triangular affine map.
pub fn tri_affine_width(k: usize) -> usize {
    k * (k + 1) / 2 + k
}

pub struct Tape<'s> {
    store: Option<&'s ParamStore>,
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

impl<'s> Tape<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Tape {
            store: Some(store),
            nodes: Vec::new(),
            params: HashMap::new(),
        }
    }

    /// A tape over constants only.
    pub fn detached() -> Tape<'static> {
        Tape {
            store: None,
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

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.store.expect("param node without store").value(*id),
            _ => unreachable!("node without value"),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        self.value(v).dims2()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_raw(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op) -> Result<Var> {
        let t = Tensor::from_parts(shape, data, op.name())?;
        Ok(self.push(t, op))
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Reads a parameter; repeated reads share one node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        assert!(self.store.is_some(), "detached tape cannot read parameters");
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
        });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(id, v);
        v
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    fn zip(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        self.same_shape(op.name(), a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let shape = va.shape().to_vec();
        self.push_raw(shape, data, op)
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let va = self.value(a);
        let data = va.data().iter().map(|&x| f(x)).collect();
        let shape = va.shape().to_vec();
        self.push_raw(shape, data, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::dim("matmul", format!("{sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let data = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        self.push_raw(vec![m, n], data, Op::MatMul(a, b))
    }

    /// `a[N, n] + b` with `b` of shape `[n]` or `[1, n]` added to every row.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.dims(a);
        let (br, bc) = self.dims(b);
        if br != 1 || bc != c {
            return Err(Error::dim(
                "add_row",
                format!("{:?} + row {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let mut data = va.to_vec();
        for row in data.chunks_exact_mut(c) {
            row.iter_mut().zip(vb).for_each(|(x, y)| *x += y);
        }
        let shape = self.shape(a).to_vec();
        debug_assert_eq!(data.len(), r * c);
        self.push_raw(shape, data, Op::AddRow(a, b))
    }

    /// Multiplies each row of `a[N, n]` by the matching entry of `col[N, 1]`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (r, c) = self.dims(a);
        if self.value(col).len() != r {
            return Err(Error::dim(
                "mul_col",
                format!("{:?} * col {:?}", self.shape(a), self.shape(col)),
            ));
        }
        let (va, vc) = (self.value(a).data(), self.value(col).data());
        let mut data = va.to_vec();
        for (row, s) in data.chunks_exact_mut(c).zip(vc) {
            row.iter_mut().for_each(|x| *x *= s);
        }
        let shape = self.shape(a).to_vec();
        self.push_raw(shape, data, Op::MulCol(a, col))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary(a, Op::Scale(a, c), |x| x * c)
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary(a, Op::AddConst(a), |x| x + c)
    }

    /// `1 - a`.
    pub fn one_minus(&mut self, a: Var) -> Result<Var> {
        let n = self.scale(a, -1.0)?;
        self.add_const(n, 1.0)
    }

    pub fn logistic(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Logistic(a), logistic)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(v) = self.value(a).data().iter().find(|&&v| v <= 0.0) {
            return Err(Error::domain("log", format!("non-positive input {v}")));
        }
        self.unary(a, Op::Log(a), f64::ln)
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Abs(a), f64::abs)
    }

    pub fn leaky_relu(&mut self, a: Var, alpha: f64) -> Result<Var> {
        self.unary(a, Op::LeakyRelu(a, alpha), |x| if x >= 0.0 { x } else { alpha * x })
    }

    /// `ln σ'(a) = ln σ(a) + ln σ(-a)`, evaluated without cancellation.
    pub fn log_logistic_deriv(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::LogLogisticDeriv(a), |x| -softplus(x) - softplus(-x))
    }

    pub fn max_const(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary(a, Op::MaxConst(a, c), |x| x.max(c))
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).sum();
        self.push_raw(vec![1], vec![s], Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len() as f64;
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n)
    }

    /// Per-row sums, shape `[N, 1]`.
    pub fn row_sum(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.dims(a);
        let data = self
            .value(a)
            .data()
            .chunks_exact(c)
            .map(|row| row.iter().sum())
            .collect();
        self.push_raw(vec![r, 1], data, Op::RowSum(a))
    }

    /// `ln Σ exp(a)` over all elements, shape `[1]`.
    pub fn log_sum_exp(&mut self, a: Var) -> Result<Var> {
        let d = self.value(a).data();
        let m = d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = d.iter().map(|x| (x - m).exp()).sum();
        self.push_raw(vec![1], vec![m + s.ln()], Op::LogSumExp(a))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (r, c) = self.dims(a);
        if start >= end || end > c {
            return Err(Error::dim(
                "slice_cols",
                format!("columns {start}..{end} of {:?}", self.shape(a)),
            ));
        }
        let data = self
            .value(a)
            .data()
            .chunks_exact(c)
            .flat_map(|row| row[start..end].iter().copied())
            .collect();
        self.push_raw(vec![r, end - start], data, Op::SliceCols(a, start, end))
    }

    /// Rows `start..end` of a 2-D value.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (r, c) = self.dims(a);
        if start >= end || end > r {
            return Err(Error::dim(
                "slice_rows",
                format!("rows {start}..{end} of {:?}", self.shape(a)),
            ));
        }
        let data = self.value(a).data()[start * c..end * c].to_vec();
        self.push_raw(vec![end - start, c], data, Op::SliceRows(a, start))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ra, ca) = self.dims(a);
        let (rb, cb) = self.dims(b);
        if ra != rb {
            return Err(Error::dim(
                "concat_cols",
                format!("{:?} | {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let mut data = Vec::with_capacity(ra * (ca + cb));
        for i in 0..ra {
            data.extend_from_slice(&va[i * ca..(i + 1) * ca]);
            data.extend_from_slice(&vb[i * cb..(i + 1) * cb]);
        }
        self.push_raw(vec![ra, ca + cb], data, Op::ConcatCols(a, b))
    }

    /// `out[:, j] = a[:, perm[j]]`.
    pub fn gather_cols(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        let (r, c) = self.dims(a);
        if perm.iter().any(|&p| p >= c) {
            return Err(Error::dim("gather_cols", "index out of range"));
        }
        let va = self.value(a).data();
        let mut data = Vec::with_capacity(r * perm.len());
        for row in va.chunks_exact(c) {
            data.extend(perm.iter().map(|&p| row[p]));
        }
        self.push_raw(vec![r, perm.len()], data, Op::GatherCols(a, perm.to_vec()))
    }

    /// Tiles a single row `n` times.
    pub fn repeat_rows(&mut self, a: Var, n: usize) -> Result<Var> {
        let (r, c) = self.dims(a);
        if r != 1 || n == 0 {
            return Err(Error::dim(
                "repeat_rows",
                format!("expected one row, got {:?}", self.shape(a)),
            ));
        }
        let row = self.value(a).data();
        let data = row.iter().copied().cycle().take(n * c).collect();
        self.push_raw(vec![n, c], data, Op::RepeatRows(a))
    }

    /// Row-wise triangular affine map read from a packed hidden vector.
    ///
    /// Each row of `h` (shape `[N, H]` or `[1, H]`, broadcast over rows) holds a
    /// lower-triangular `k×k` matrix packed row by row (row `i` has `i + 1`
    /// entries, its last entry being the log of the diagonal) followed by a
    /// bias of length `k`. Returns `u = W x + b` for each row of `x[N, k]`.
    pub fn tri_affine(&mut self, h: Var, x: Var, k: usize) -> Result<Var> {
        let (hr, hc) = self.dims(h);
        let (xr, xc) = self.dims(x);
        if xc != k || hc < tri_affine_width(k) || (hr != xr && hr != 1) {
            return Err(Error::dim(
                "tri_affine",
                format!("hidden {:?}, input {:?}, k = {k}", self.shape(h), self.shape(x)),
            ));
        }
        let (vh, vx) = (self.value(h).data(), self.value(x).data());
        let nw = tri_offset(k);
        let mut data = vec![0.0; xr * k];
        for r in 0..xr {
            let hrow = &vh[(if hr == 1 { 0 } else { r }) * hc..][..hc];
            let xrow = &vx[r * k..(r + 1) * k];
            for i in 0..k {
                let off = tri_offset(i);
                let mut u = hrow[nw + i] + hrow[off + i].exp() * xrow[i];
                for j in 0..i {
                    u += hrow[off + j] * xrow[j];
                }
                data[r * k + i] = u;
            }
        }
        self.push_raw(vec![xr, k], data, Op::TriAffine { h, x, k })
    }

    /// Per-row `Σ_i ln W_ii` of the packed triangular matrix, shape `[N, 1]`.
    pub fn tri_log_diag(&mut self, h: Var, k: usize) -> Result<Var> {
        let (hr, hc) = self.dims(h);
        if hc < tri_affine_width(k) {
            return Err(Error::dim("tri_log_diag", format!("hidden {:?}, k = {k}", self.shape(h))));
        }
        let vh = self.value(h).data();
        let data = (0..hr)
            .map(|r| (0..k).map(|i| vh[r * hc + tri_offset(i) + i]).sum())
            .collect();
        self.push_raw(vec![hr, 1], data, Op::TriLogDiag { h, k })
    }

    /// Gradient of the scalar `loss` with respect to every parameter read.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let grads = self.run_backward(loss)?;
        let mut out = Gradients::default();
        for (i, node) in self.nodes.iter().enumerate() {
            if let Op::Param(id) = node.op {
                let g = match &grads[i] {
                    Some(g) => Tensor::from_parts(self.value(Var(i)).shape().to_vec(), g.clone(), "backward")?,
                    None => Tensor::zeros(self.value(Var(i)).shape()),
                };
                out.entries.push((id, g));
            }
        }
        out.entries.sort_by_key(|(id, _)| *id);
        Ok(out)
    }

    /// Gradient of `loss` with respect to arbitrary tape values.
    pub fn gradient_wrt(&self, loss: Var, vars: &[Var]) -> Result<Vec<Tensor>> {
        let grads = self.run_backward(loss)?;
        vars.iter()
            .map(|&v| {
                let shape = self.value(v).shape().to_vec();
                match &grads[v.0] {
                    Some(g) => Tensor::from_parts(shape, g.clone(), "backward"),
                    None => Ok(Tensor::zeros(&shape)),
                }
            })
            .collect()
    }

    fn run_backward(&self, loss: Var) -> Result<Vec<Option<Vec<f64>>>> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            check_finite(&format!("backward through {}", self.nodes[i].op.name()), &g)?;
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(grads)
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let out = self.value(Var(i)).data();
        macro_rules! slot {
            ($v:expr) => {{
                let v: Var = $v;
                let len = self.value(v).len();
                grads[v.0].get_or_insert_with(|| vec![0.0; len])
            }};
        }

        match &self.nodes[i].op {
            Op::Leaf | Op::Param(_) => {}
            Op::Add(a, b) => {
                add_into(slot!(*a), g);
                add_into(slot!(*b), g);
            }
            Op::Sub(a, b) => {
                add_into(slot!(*a), g);
                slot!(*b).iter_mut().zip(g).for_each(|(s, x)| *s -= x);
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                slot!(*a).iter_mut().zip(g.iter().zip(vb)).for_each(|(s, (x, y))| *s += x * y);
                slot!(*b).iter_mut().zip(g.iter().zip(va)).for_each(|(s, (x, y))| *s += x * y);
            }
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k) = (va.shape()[0], va.shape()[1]);
                let n = vb.shape()[1];
                let (da, db) = (va.data(), vb.data());
                let ga = slot!(*a);
                for r in 0..m {
                    let grow = &g[r * n..(r + 1) * n];
                    for p in 0..k {
                        let brow = &db[p * n..(p + 1) * n];
                        ga[r * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                    }
                }
                let gb = slot!(*b);
                for r in 0..m {
                    let grow = &g[r * n..(r + 1) * n];
                    for p in 0..k {
                        let av = da[r * k + p];
                        if av == 0.0 {
                            continue;
                        }
                        gb[p * n..(p + 1) * n].iter_mut().zip(grow).for_each(|(s, x)| *s += av * x);
                    }
                }
            }
            Op::AddRow(a, b) => {
                add_into(slot!(*a), g);
                let c = self.value(*b).len();
                let gb = slot!(*b);
                for row in g.chunks_exact(c) {
                    add_into(gb, row);
                }
            }
            Op::MulCol(a, col) => {
                let c = self.value(*a).cols();
                let (va, vc) = (self.value(*a).data(), self.value(*col).data());
                let ga = slot!(*a);
                for (r, s) in vc.iter().enumerate() {
                    for j in 0..c {
                        ga[r * c + j] += g[r * c + j] * s;
                    }
                }
                let gc = slot!(*col);
                for r in 0..vc.len() {
                    gc[r] += (0..c).map(|j| g[r * c + j] * va[r * c + j]).sum::<f64>();
                }
            }
            Op::Scale(a, c) => {
                slot!(*a).iter_mut().zip(g).for_each(|(s, x)| *s += c * x);
            }
            Op::AddConst(a) => add_into(slot!(*a), g),
            Op::Logistic(a) => {
                slot!(*a).iter_mut().zip(g.iter().zip(out)).for_each(|(s, (x, y))| *s += x * y * (1.0 - y));
            }
            Op::Tanh(a) => {
                slot!(*a).iter_mut().zip(g.iter().zip(out)).for_each(|(s, (x, y))| *s += x * (1.0 - y * y));
            }
            Op::Exp(a) => {
                slot!(*a).iter_mut().zip(g.iter().zip(out)).for_each(|(s, (x, y))| *s += x * y);
            }
            Op::Log(a) => {
                let va = self.value(*a).data();
                slot!(*a).iter_mut().zip(g.iter().zip(va)).for_each(|(s, (x, y))| *s += x / y);
            }
            Op::Abs(a) => {
                let va = self.value(*a).data();
                slot!(*a).iter_mut().zip(g.iter().zip(va)).for_each(|(s, (x, y))| {
                    if *y > 0.0 {
                        *s += x
                    } else if *y < 0.0 {
                        *s -= x
                    }
                });
            }
            Op::LeakyRelu(a, alpha) => {
                let va = self.value(*a).data();
                slot!(*a)
                    .iter_mut()
                    .zip(g.iter().zip(va))
                    .for_each(|(s, (x, y))| *s += if *y >= 0.0 { *x } else { alpha * x });
            }
            Op::LogLogisticDeriv(a) => {
                let va = self.value(*a).data();
                slot!(*a)
                    .iter_mut()
                    .zip(g.iter().zip(va))
                    .for_each(|(s, (x, y))| *s += x * (1.0 - 2.0 * logistic(*y)));
            }
            Op::MaxConst(a, c) => {
                let va = self.value(*a).data();
                slot!(*a).iter_mut().zip(g.iter().zip(va)).for_each(|(s, (x, y))| {
                    if y > c {
                        *s += x
                    }
                });
            }
            Op::Sum(a) => {
                let g0 = g[0];
                slot!(*a).iter_mut().for_each(|s| *s += g0);
            }
            Op::RowSum(a) => {
                let c = self.value(*a).cols();
                let ga = slot!(*a);
                for (row, x) in ga.chunks_exact_mut(c).zip(g) {
                    row.iter_mut().for_each(|s| *s += x);
                }
            }
            Op::LogSumExp(a) => {
                let lse = out[0];
                let va = self.value(*a).data();
                slot!(*a).iter_mut().zip(va).for_each(|(s, y)| *s += g[0] * (y - lse).exp());
            }
            Op::SliceCols(a, start, end) => {
                let c = self.value(*a).cols();
                let w = end - start;
                let ga = slot!(*a);
                for (r, grow) in g.chunks_exact(w).enumerate() {
                    add_into(&mut ga[r * c + start..r * c + end], grow);
                }
            }
            Op::SliceRows(a, start) => {
                let c = self.value(*a).cols();
                add_into(&mut slot!(*a)[start * c..start * c + g.len()], &g);
            }
            Op::ConcatCols(a, b) => {
                let ca = self.value(*a).cols();
                let cb = self.value(*b).cols();
                let rows = g.len() / (ca + cb);
                {
                    let ga = slot!(*a);
                    for r in 0..rows {
                        add_into(&mut ga[r * ca..(r + 1) * ca], &g[r * (ca + cb)..r * (ca + cb) + ca]);
                    }
                }
                let gb = slot!(*b);
                for r in 0..rows {
                    add_into(&mut gb[r * cb..(r + 1) * cb], &g[r * (ca + cb) + ca..(r + 1) * (ca + cb)]);
                }
            }
            Op::GatherCols(a, perm) => {
                let c = self.value(*a).cols();
                let w = perm.len();
                let ga = slot!(*a);
                for (r, grow) in g.chunks_exact(w).enumerate() {
                    for (j, &p) in perm.iter().enumerate() {
                        ga[r * c + p] += grow[j];
                    }
                }
            }
            Op::RepeatRows(a) => {
                let c = self.value(*a).len();
                let ga = slot!(*a);
                for row in g.chunks_exact(c) {
                    add_into(ga, row);
                }
            }
            Op::TriAffine { h, x, k } => {
                let k = *k;
                let (vh, vx) = (self.value(*h), self.value(*x));
                let (hr, hc) = vh.dims2();
                let xr = vx.rows();
                let (dh, dx) = (vh.data(), vx.data());
                let nw = tri_offset(k);
                {
                    let gx = slot!(*x);
                    for r in 0..xr {
                        let hrow = &dh[(if hr == 1 { 0 } else { r }) * hc..][..hc];
                        for i in 0..k {
                            let gi = g[r * k + i];
                            let off = tri_offset(i);
                            gx[r * k + i] += gi * hrow[off + i].exp();
                            for j in 0..i {
                                gx[r * k + j] += gi * hrow[off + j];
                            }
                        }
                    }
                }
                let gh = slot!(*h);
                for r in 0..xr {
                    let hbase = (if hr == 1 { 0 } else { r }) * hc;
                    let xrow = &dx[r * k..(r + 1) * k];
                    for i in 0..k {
                        let gi = g[r * k + i];
                        let off = tri_offset(i);
                        gh[hbase + nw + i] += gi;
                        gh[hbase + off + i] += gi * xrow[i] * dh[hbase + off + i].exp();
                        for j in 0..i {
                            gh[hbase + off + j] += gi * xrow[j];
                        }
                    }
                }
            }
            Op::TriLogDiag { h, k } => {
                let hc = self.value(*h).cols();
                let gh = slot!(*h);
                for (r, x) in g.iter().enumerate() {
                    for i in 0..*k {
                        gh[r * hc + tri_offset(i) + i] += x;
                    }
                }
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}
