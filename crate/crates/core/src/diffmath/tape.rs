//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! Every primitive evaluates its forward value eagerly and, when tracing is
//! enabled, appends a record holding the operation kind and its input node
//! ids. [`Tape::backward`] walks the records in reverse and returns a fresh
//! [`Gradients`] map; the tape itself holds no gradient state, so repeated
//! calls give identical results.

use crate::diffmath::tensor::Tensor;
use crate::error::{Result, WadgError};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    DivCol(Var, Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Sqrt(Var),
    Sum(Var),
    Mean(Var),
    SumRows(Var),
    Scale(Var, f64),
    AddScalar(Var),
    LogSumExpRows(Var),
    Log1pSumExp(Var, Tensor),
    Gather(Var, Vec<usize>),
    SliceRows(Var, usize),
    SelectRows(Var, Vec<usize>),
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Append-only operation record.
#[derive(Clone, Debug)]
pub struct Tape {
    nodes: Vec<Node>,
    tracing: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> WadgError {
    WadgError::ShapeMismatch {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

fn need_rank2(op: &'static str, a: &Tensor) -> Result<(usize, usize)> {
    match a.shape() {
        [r, c] => Ok((*r, *c)),
        _ => Err(WadgError::ShapeMismatch {
            op,
            left: a.shape().to_vec(),
            right: vec![],
        }),
    }
}

fn zip_with(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape")
}

fn check_finite(op: &'static str, t: Tensor) -> Result<Tensor> {
    if t.is_finite() {
        Ok(t)
    } else {
        Err(WadgError::Domain {
            op,
            detail: "result is not finite".into(),
        })
    }
}

/// Numerically stable `ln Σ exp(x)` over a slice, optionally including an
/// implicit extra zero term (`ln(1 + Σ exp(x))`).
pub fn log_sum_exp_slice(xs: impl Iterator<Item = f64> + Clone, with_one: bool) -> f64 {
    let mut max = if with_one { 0.0 } else { f64::NEG_INFINITY };
    for x in xs.clone() {
        max = max.max(x);
    }
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let mut acc = if with_one { (-max).exp() } else { 0.0 };
    for x in xs {
        acc += (x - max).exp();
    }
    max + acc.ln()
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            tracing: true,
        }
    }

    /// A tape that evaluates values but records no backward information.
    pub fn untraced() -> Self {
        Self {
            nodes: Vec::new(),
            tracing: false,
        }
    }

    pub fn is_tracing(&self) -> bool {
        self.tracing
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Input or parameter node.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let op = if self.tracing { op } else { Op::Leaf };
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        need_rank2("transpose", self.value(a))?;
        let out = self.value(a).transpose();
        Ok(self.push(out, Op::Transpose(a)))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch(op, ta, tb));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = zip_with(self.value(a), self.value(b), |x, y| x + y);
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = zip_with(self.value(a), self.value(b), |x, y| x - y);
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = zip_with(self.value(a), self.value(b), |x, y| x * y);
        Ok(self.push(out, Op::Mul(a, b)))
    }

    /// `[r×c] + [1×c]`, broadcasting the row vector over every row.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (ta, tr) = (self.value(a), self.value(row));
        let (r, c) = need_rank2("add_row", ta)?;
        if tr.shape() != [1, c] {
            return Err(mismatch("add_row", ta, tr));
        }
        let mut data = ta.data().to_vec();
        for i in 0..r {
            for (o, &b) in data[i * c..(i + 1) * c].iter_mut().zip(tr.data()) {
                *o += b;
            }
        }
        let out = Tensor::matrix(r, c, data)?;
        Ok(self.push(out, Op::AddRow(a, row)))
    }

    fn col_broadcast(
        &mut self,
        op: &'static str,
        a: Var,
        col: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let (ta, tc) = (self.value(a), self.value(col));
        let (r, c) = need_rank2(op, ta)?;
        if tc.shape() != [r, 1] {
            return Err(mismatch(op, ta, tc));
        }
        let mut data = ta.data().to_vec();
        for i in 0..r {
            let s = tc.data()[i];
            for o in &mut data[i * c..(i + 1) * c] {
                *o = f(*o, s);
            }
        }
        Tensor::matrix(r, c, data)
    }

    /// `[r×c] ⊙ [r×1]`, scaling each row.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let out = self.col_broadcast("mul_col", a, col, |x, s| x * s)?;
        Ok(self.push(out, Op::MulCol(a, col)))
    }

    /// `[r×c] / [r×1]`, dividing each row.
    pub fn div_col(&mut self, a: Var, col: Var) -> Result<Var> {
        if let Some(bad) = self.value(col).data().iter().find(|v| **v == 0.0) {
            return Err(WadgError::Domain {
                op: "div_col",
                detail: format!("division by {bad}"),
            });
        }
        let out = self.col_broadcast("div_col", a, col, |x, s| x / s)?;
        Ok(self.push(out, Op::DivCol(a, col)))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        Ok(self.push(out, Op::Relu(a)))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let out = check_finite("exp", self.value(a).map(f64::exp))?;
        Ok(self.push(out, Op::Exp(a)))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(bad) = self.value(a).data().iter().find(|v| !(**v > 0.0)) {
            return Err(WadgError::Domain {
                op: "log",
                detail: format!("non-positive input {bad}"),
            });
        }
        let out = self.value(a).map(f64::ln);
        Ok(self.push(out, Op::Log(a)))
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        if let Some(bad) = self.value(a).data().iter().find(|v| !(**v > 0.0)) {
            return Err(WadgError::Domain {
                op: "sqrt",
                detail: format!("non-positive input {bad}"),
            });
        }
        let out = self.value(a).map(f64::sqrt);
        Ok(self.push(out, Op::Sqrt(a)))
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(a).sum());
        Ok(self.push(out, Op::Sum(a)))
    }

    /// Mean of all entries, as a scalar.
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(WadgError::Domain {
                op: "mean",
                detail: "empty tensor".into(),
            });
        }
        let out = Tensor::scalar(t.sum() / t.len() as f64);
        Ok(self.push(out, Op::Mean(a)))
    }

    /// Per-row sums, `[r×c] -> [r×1]`.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let (r, _) = need_rank2("sum_rows", t)?;
        let data = (0..r).map(|i| t.row(i).iter().sum()).collect();
        let out = Tensor::matrix(r, 1, data)?;
        Ok(self.push(out, Op::SumRows(a)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let out = self.value(a).map(|x| x * c);
        Ok(self.push(out, Op::Scale(a, c)))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let out = self.value(a).map(|x| x + c);
        Ok(self.push(out, Op::AddScalar(a)))
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.scale(a, -1.0)
    }

    /// Max-stabilized `ln Σ_j exp(a_ij)` per row: `[r×c] -> [r×1]`, or a
    /// scalar for a rank-1 input.
    pub fn log_sum_exp_rows(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let out = match t.shape() {
            [_] => Tensor::scalar(log_sum_exp_slice(t.data().iter().copied(), false)),
            [r, _] => {
                let data = (0..*r)
                    .map(|i| log_sum_exp_slice(t.row(i).iter().copied(), false))
                    .collect();
                Tensor::matrix(*r, 1, data)?
            }
            _ => return Err(mismatch("log_sum_exp", t, t)),
        };
        let out = check_finite("log_sum_exp", out)?;
        Ok(self.push(out, Op::LogSumExpRows(a)))
    }

    /// Per row `ln(1 + Σ_j mask_ij · exp(a_ij))` for a 0/1 `mask`, computed
    /// with max subtraction so large exponents never overflow.
    pub fn log1p_sum_exp_masked(&mut self, a: Var, mask: Tensor) -> Result<Var> {
        let t = self.value(a);
        let (r, c) = need_rank2("log1p_sum_exp_masked", t)?;
        if mask.shape() != t.shape() {
            return Err(mismatch("log1p_sum_exp_masked", t, &mask));
        }
        let data = (0..r)
            .map(|i| {
                let row = t.row(i);
                let m = &mask.data()[i * c..(i + 1) * c];
                let picked = row
                    .iter()
                    .zip(m)
                    .filter(|(_, &mk)| mk != 0.0)
                    .map(|(&x, _)| x);
                log_sum_exp_slice(picked, true)
            })
            .collect();
        let out = check_finite("log1p_sum_exp_masked", Tensor::matrix(r, 1, data)?)?;
        Ok(self.push(out, Op::Log1pSumExp(a, mask)))
    }

    /// Picks `a[i, idx[i]]` per row: `[r×c] -> [r×1]`.
    pub fn gather(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let t = self.value(a);
        let (r, c) = need_rank2("gather", t)?;
        if idx.len() != r {
            return Err(WadgError::ShapeMismatch {
                op: "gather",
                left: t.shape().to_vec(),
                right: vec![idx.len()],
            });
        }
        if let Some(&bad) = idx.iter().find(|&&j| j >= c) {
            return Err(WadgError::Domain {
                op: "gather",
                detail: format!("column {bad} out of range for {c} columns"),
            });
        }
        let data = idx.iter().enumerate().map(|(i, &j)| t.get2(i, j)).collect();
        let out = Tensor::matrix(r, 1, data)?;
        Ok(self.push(out, Op::Gather(a, idx.to_vec())))
    }

    /// Rows `[start, end)`.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(a);
        let (r, _) = need_rank2("slice_rows", t)?;
        if start > end || end > r {
            return Err(WadgError::Domain {
                op: "slice_rows",
                detail: format!("range {start}..{end} outside {r} rows"),
            });
        }
        let out = t.slice_rows(start, end);
        Ok(self.push(out, Op::SliceRows(a, start)))
    }

    /// Rows picked by index (repeats allowed), `[r×c] -> [idx.len()×c]`.
    pub fn select_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let t = self.value(a);
        let (r, _) = need_rank2("select_rows", t)?;
        if let Some(&bad) = idx.iter().find(|&&i| i >= r) {
            return Err(WadgError::Domain {
                op: "select_rows",
                detail: format!("row {bad} out of range for {r} rows"),
            });
        }
        let out = t.select_rows(idx);
        Ok(self.push(out, Op::SelectRows(a, idx.to_vec())))
    }

    /// Gradients of the scalar `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let root = self
            .nodes
            .get(loss.0)
            .ok_or(WadgError::UnknownNode(loss.0))?;
        if root.value.len() != 1 {
            return Err(WadgError::NonScalar(root.value.shape().to_vec()));
        }
        if !self.tracing {
            return Err(WadgError::Config("backward on an untraced tape".into()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::filled(root.value.shape(), 1.0));

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            self.propagate(node, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let ga = Tensor::matmul_raw(g, &val(*b).transpose());
                let gb = Tensor::matmul_raw(&val(*a).transpose(), g);
                accumulate(grads, *a, ga);
                accumulate(grads, *b, gb);
            }
            Op::Transpose(a) => accumulate(grads, *a, g.transpose()),
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                accumulate(grads, *a, zip_with(g, val(*b), |x, y| x * y));
                accumulate(grads, *b, zip_with(g, val(*a), |x, y| x * y));
            }
            Op::AddRow(a, row) => {
                accumulate(grads, *a, g.clone());
                let (r, c) = g.dims2().expect("rank 2");
                let mut gr = vec![0.0; c];
                for i in 0..r {
                    for (o, &x) in gr.iter_mut().zip(g.row(i)) {
                        *o += x;
                    }
                }
                accumulate(grads, *row, Tensor::matrix(1, c, gr).expect("row"));
            }
            Op::MulCol(a, col) => {
                let (ta, tc) = (val(*a), val(*col));
                let (r, c) = ta.dims2().expect("rank 2");
                let mut ga = g.clone();
                let mut gc = vec![0.0; r];
                for i in 0..r {
                    let s = tc.data()[i];
                    for j in 0..c {
                        let k = i * c + j;
                        ga.data_mut()[k] = g.data()[k] * s;
                        gc[i] += g.data()[k] * ta.data()[k];
                    }
                }
                accumulate(grads, *a, ga);
                accumulate(grads, *col, Tensor::matrix(r, 1, gc).expect("col"));
            }
            Op::DivCol(a, col) => {
                let (ta, tc) = (val(*a), val(*col));
                let (r, c) = ta.dims2().expect("rank 2");
                let mut ga = g.clone();
                let mut gc = vec![0.0; r];
                for i in 0..r {
                    let s = tc.data()[i];
                    for j in 0..c {
                        let k = i * c + j;
                        ga.data_mut()[k] = g.data()[k] / s;
                        gc[i] -= g.data()[k] * ta.data()[k] / (s * s);
                    }
                }
                accumulate(grads, *a, ga);
                accumulate(grads, *col, Tensor::matrix(r, 1, gc).expect("col"));
            }
            Op::Relu(a) => {
                let ga = zip_with(g, val(*a), |x, y| if y > 0.0 { x } else { 0.0 });
                accumulate(grads, *a, ga);
            }
            Op::Exp(a) => accumulate(grads, *a, zip_with(g, &node.value, |x, y| x * y)),
            Op::Log(a) => accumulate(grads, *a, zip_with(g, val(*a), |x, y| x / y)),
            Op::Sqrt(a) => accumulate(grads, *a, zip_with(g, &node.value, |x, y| x / (2.0 * y))),
            Op::Sum(a) => {
                let s = g.data()[0];
                accumulate(grads, *a, Tensor::filled(val(*a).shape(), s));
            }
            Op::Mean(a) => {
                let t = val(*a);
                let s = g.data()[0] / t.len() as f64;
                accumulate(grads, *a, Tensor::filled(t.shape(), s));
            }
            Op::SumRows(a) => {
                let t = val(*a);
                let (r, c) = t.dims2().expect("rank 2");
                let data = (0..r)
                    .flat_map(|i| std::iter::repeat_n(g.data()[i], c))
                    .collect();
                accumulate(grads, *a, Tensor::matrix(r, c, data).expect("shape"));
            }
            Op::Scale(a, c) => accumulate(grads, *a, g.map(|x| x * c)),
            Op::AddScalar(a) => accumulate(grads, *a, g.clone()),
            Op::LogSumExpRows(a) => {
                let t = val(*a);
                let (r, c) = t.dims2().expect("rank <= 2");
                let mut ga = vec![0.0; r * c];
                for i in 0..r {
                    let lse = node.value.data()[i];
                    for j in 0..c {
                        ga[i * c + j] = g.data()[i] * (t.data()[i * c + j] - lse).exp();
                    }
                }
                let ga = Tensor::new(t.shape().to_vec(), ga).expect("shape");
                accumulate(grads, *a, ga);
            }
            Op::Log1pSumExp(a, mask) => {
                let t = val(*a);
                let (r, c) = t.dims2().expect("rank 2");
                let mut ga = vec![0.0; r * c];
                for i in 0..r {
                    let y = node.value.data()[i];
                    for j in 0..c {
                        let k = i * c + j;
                        if mask.data()[k] != 0.0 {
                            ga[k] = g.data()[i] * (t.data()[k] - y).exp();
                        }
                    }
                }
                accumulate(grads, *a, Tensor::matrix(r, c, ga).expect("shape"));
            }
            Op::Gather(a, idx) => {
                let t = val(*a);
                let mut ga = Tensor::zeros(t.shape());
                let c = t.cols();
                for (i, &j) in idx.iter().enumerate() {
                    ga.data_mut()[i * c + j] = g.data()[i];
                }
                accumulate(grads, *a, ga);
            }
            Op::SliceRows(a, start) => {
                let t = val(*a);
                let c = t.cols();
                let mut ga = Tensor::zeros(t.shape());
                ga.data_mut()[start * c..start * c + g.len()].copy_from_slice(g.data());
                accumulate(grads, *a, ga);
            }
            Op::SelectRows(a, idx) => {
                let t = val(*a);
                let c = t.cols();
                let mut ga = Tensor::zeros(t.shape());
                for (k, &i) in idx.iter().enumerate() {
                    for j in 0..c {
                        ga.data_mut()[i * c + j] += g.data()[k * c + j];
                    }
                }
                accumulate(grads, *a, ga);
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(acc) => {
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

/// Result of [`Tape::backward`]: one gradient per node reachable from the loss.
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `v`, or `None` when `v` does not influence the loss.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient for `v`, materializing zeros when the loss does not depend on it.
    pub fn get_or_zeros(&self, v: Var, tape: &Tape) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(tape.value(v).shape()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn approx(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn matmul_by_identity() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::from_rows(&[vec![1., 2.], vec![3., 4.]]).unwrap());
        let i = t.leaf(Tensor::from_rows(&[vec![1., 0.], vec![0., 1.]]).unwrap());
        let p = t.matmul(a, i).unwrap();
        assert_eq!(t.value(p).data(), &[1., 2., 3., 4.]);
    }

    #[test]
    fn relu_clamps_negatives_and_zero() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![-1., 0., 2.]));
        let y = t.relu(x).unwrap();
        assert_eq!(t.value(y).data(), &[0., 0., 2.]);
        let s = t.sum(y).unwrap();
        let g = t.backward(s).unwrap();
        // subgradient at exactly zero is zero
        assert_eq!(g.get(x).unwrap().data(), &[0., 0., 1.]);
    }

    #[test]
    fn log_sum_exp_of_two_zeros_is_ln2() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![0., 0.]));
        let y = t.log_sum_exp_rows(x).unwrap();
        assert!(approx(t.value(y).item().unwrap(), 2f64.ln(), 1e-15));
    }

    #[test]
    fn log_sum_exp_survives_large_inputs() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::matrix(1, 2, vec![1000., 1000.]).unwrap());
        let y = t.log_sum_exp_rows(x).unwrap();
        assert!(approx(t.value(y).data()[0], 1000. + 2f64.ln(), 1e-9));
    }

    #[test]
    fn log_of_nonpositive_is_a_domain_error() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![1., 0.]));
        assert!(matches!(t.log(x), Err(WadgError::Domain { .. })));
    }

    #[test]
    fn shape_errors_name_both_shapes() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::zeros(&[2, 3]));
        let b = t.leaf(Tensor::zeros(&[3, 2]));
        let msg = t.add(a, b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[3, 2]"), "{msg}");
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![3., -1., 7.]));
        let s = t.sum(x).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1., 1., 1.]);
        assert_eq!(g.get(s).unwrap().data(), &[1.0]);
    }

    #[test]
    fn backward_of_mean_square() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![1., 2.]));
        let sq = t.mul(x, x).unwrap();
        let m = t.mean(sq).unwrap();
        let g = t.backward(m).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1., 2.]);
    }

    #[test]
    fn unused_leaf_has_zero_gradient() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![1., 2.]));
        let p = t.leaf(Tensor::vector(vec![5.]));
        let s = t.sum(x).unwrap();
        let g = t.backward(s).unwrap();
        assert!(g.get(p).is_none());
        assert_eq!(g.get_or_zeros(p, &t).data(), &[0.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![1., 2.]));
        assert!(matches!(t.backward(x), Err(WadgError::NonScalar(_))));
    }

    #[test]
    fn repeated_backward_is_identical() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::matrix(2, 2, vec![0.3, -0.2, 1.5, 0.7]).unwrap());
        let e = t.exp(x).unwrap();
        let y = t.mul(e, x).unwrap();
        let s = t.sum(y).unwrap();
        let g1 = t.backward(s).unwrap();
        let g2 = t.backward(s).unwrap();
        assert_eq!(g1.get(x), g2.get(x));
    }

    #[test]
    fn untraced_values_match_traced() {
        let build = |t: &mut Tape| {
            let x = t.leaf(Tensor::matrix(2, 3, vec![0.1, -2., 3., 0.5, 0.25, -0.75]).unwrap());
            let w = t.leaf(Tensor::matrix(3, 2, vec![1., -1., 0.5, 2., -0.3, 0.8]).unwrap());
            let h = t.matmul(x, w).unwrap();
            let r = t.relu(h).unwrap();
            let l = t.log_sum_exp_rows(r).unwrap();
            t.value(l).clone()
        };
        let mut traced = Tape::new();
        let mut plain = Tape::untraced();
        let a = build(&mut traced);
        let b = build(&mut plain);
        assert_eq!(a.data(), b.data());
        assert!(!traced.is_empty());
    }
}
