//! Reverse-mode automatic differentiation on a tape of dense f64 tensors.
//!
//! Every operation appends one node to a [`Tape`]; node inputs always precede
//! the node itself, so the tape order is already topological. [`Var::backward`]
//! seeds the scalar output with gradient 1 and walks the tape once in reverse,
//! accumulating into each parent. Gradients are deterministic: the same tape
//! yields bit-identical gradients on every backward pass.
//!
//! Each op validates shapes, checks its domain, and verifies the result is
//! finite before the node is recorded; NaN or Inf from finite inputs is an
//! error, never a silent value.

use std::cell::RefCell;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Gradient rule for one node: given the node's output gradient, produce one
/// gradient buffer per parent, in parent order.
type BackFn = Box<dyn Fn(&[f64]) -> Vec<Vec<f64>>>;

struct BackwardStep {
    parents: Vec<usize>,
    back: BackFn,
}

struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    step: Option<BackwardStep>,
}

#[derive(Default)]
struct TapeInner {
    nodes: Vec<Node>,
}

/// Growable op record shared by the [`Var`] handles built on it.
#[derive(Clone, Default)]
pub struct Tape {
    inner: Rc<RefCell<TapeInner>>,
}

/// Handle to one tape node.
#[derive(Clone)]
pub struct Var {
    tape: Tape,
    id: usize,
}

impl std::fmt::Debug for Var {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Differentiable input node.
    pub fn leaf(&self, value: Tensor, requires_grad: bool) -> Var {
        let mut inner = self.inner.borrow_mut();
        let id = inner.nodes.len();
        inner.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            step: None,
        });
        Var {
            tape: self.clone(),
            id,
        }
    }

    /// Input node that never receives gradient.
    pub fn constant(&self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Records `value` as the result of an op over `parents`, with `back`
    /// mapping the output gradient to one buffer per parent. The hook for
    /// fused ops defined outside this module.
    pub(crate) fn push_op(
        &self,
        name: &'static str,
        parents: &[&Var],
        value: Tensor,
        back: BackFn,
    ) -> Result<Var> {
        for p in parents {
            if !Rc::ptr_eq(&self.inner, &p.tape.inner) {
                return Err(Error::domain(name, "inputs recorded on different tapes"));
            }
        }
        if !value.all_finite() {
            return Err(Error::non_finite(name));
        }
        let requires = {
            let inner = self.inner.borrow();
            parents.iter().any(|p| inner.nodes[p.id].requires_grad)
        };
        let mut inner = self.inner.borrow_mut();
        let id = inner.nodes.len();
        inner.nodes.push(Node {
            value,
            grad: None,
            requires_grad: requires,
            step: requires.then(|| BackwardStep {
                parents: parents.iter().map(|p| p.id).collect(),
                back,
            }),
        });
        Ok(Var {
            tape: self.clone(),
            id,
        })
    }
}

impl Var {
    pub fn tape(&self) -> Tape {
        self.tape.clone()
    }

    pub fn value(&self) -> Tensor {
        self.tape.inner.borrow().nodes[self.id].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.inner.borrow().nodes[self.id].value.shape().to_vec()
    }

    pub fn item(&self) -> Result<f64> {
        self.tape.inner.borrow().nodes[self.id].value.item()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.inner.borrow().nodes[self.id].requires_grad
    }

    /// Gradient accumulated by the last [`Var::backward`] call, if any.
    pub fn grad(&self) -> Option<Tensor> {
        let inner = self.tape.inner.borrow();
        let node = &inner.nodes[self.id];
        node.grad.as_ref().map(|g| {
            Tensor::new(node.value.shape().to_vec(), g.clone()).expect("grad matches value shape")
        })
    }

    /// Reverse pass from this scalar. Resets all gradients first, so repeated
    /// calls on the same tape are bit-identical.
    pub fn backward(&self) -> Result<()> {
        {
            let inner = self.tape.inner.borrow();
            if !inner.nodes[self.id].value.is_scalar() {
                return Err(Error::shape(
                    "backward",
                    format!(
                        "backward needs a scalar root, got shape {:?}",
                        inner.nodes[self.id].value.shape()
                    ),
                ));
            }
            if !inner.nodes[self.id].requires_grad {
                return Err(Error::domain(
                    "backward",
                    "root does not depend on any differentiable leaf",
                ));
            }
        }
        let mut inner = self.tape.inner.borrow_mut();
        for node in inner.nodes.iter_mut() {
            node.grad = node
                .requires_grad
                .then(|| vec![0.0; node.value.len()]);
        }
        inner.nodes[self.id].grad.as_mut().expect("root grad")[0] = 1.0;

        for i in (0..inner.nodes.len()).rev() {
            let (before, rest) = inner.nodes.split_at_mut(i);
            let node = &rest[0];
            let (Some(step), Some(dy)) = (&node.step, &node.grad) else {
                continue;
            };
            let parent_grads = (step.back)(dy);
            debug_assert_eq!(parent_grads.len(), step.parents.len());
            for (slot, &pid) in step.parents.iter().enumerate() {
                let parent = &mut before[pid];
                if !parent.requires_grad {
                    continue;
                }
                let acc = parent.grad.as_mut().expect("parent grad allocated");
                for (a, g) in acc.iter_mut().zip(&parent_grads[slot]) {
                    *a += g;
                }
            }
        }
        Ok(())
    }

    fn with_value<T>(&self, f: impl FnOnce(&Tensor) -> T) -> T {
        f(&self.tape.inner.borrow().nodes[self.id].value)
    }

    fn same_shape(&self, other: &Var, op: &'static str) -> Result<Vec<usize>> {
        let a = self.shape();
        let b = other.shape();
        if a != b {
            return Err(Error::shape(op, format!("shapes {:?} and {:?}", a, b)));
        }
        Ok(a)
    }

    fn unary_elementwise(
        &self,
        name: &'static str,
        f: impl Fn(f64) -> f64,
        // dy, x, y -> dx, elementwise
        dfdx: impl Fn(f64, f64, f64) -> f64 + 'static,
    ) -> Result<Var> {
        let (shape, x) = self.with_value(|t| (t.shape().to_vec(), t.data().to_vec()));
        let y: Vec<f64> = x.iter().map(|&v| f(v)).collect();
        let y_saved = y.clone();
        let x_saved = x;
        self.tape.push_op(
            name,
            &[self],
            Tensor::new(shape, y)?,
            Box::new(move |dy| {
                vec![dy
                    .iter()
                    .zip(&x_saved)
                    .zip(&y_saved)
                    .map(|((&d, &xv), &yv)| dfdx(d, xv, yv))
                    .collect()]
            }),
        )
    }

    pub fn neg(&self) -> Result<Var> {
        self.unary_elementwise("neg", |v| -v, |d, _, _| -d)
    }

    pub fn tanh(&self) -> Result<Var> {
        self.unary_elementwise("tanh", f64::tanh, |d, _, y| d * (1.0 - y * y))
    }

    pub fn sigmoid(&self) -> Result<Var> {
        self.unary_elementwise("sigmoid", sigmoid, |d, _, y| d * y * (1.0 - y))
    }

    pub fn softplus(&self) -> Result<Var> {
        self.unary_elementwise("softplus", softplus, |d, x, _| d * sigmoid(x))
    }

    pub fn exp(&self) -> Result<Var> {
        self.unary_elementwise("exp", f64::exp, |d, _, y| d * y)
    }

    pub fn log(&self) -> Result<Var> {
        if self.with_value(|t| t.data().iter().any(|&v| v <= 0.0)) {
            return Err(Error::domain("log", "requires strictly positive inputs"));
        }
        self.unary_elementwise("log", f64::ln, |d, x, _| d / x)
    }

    pub fn sqrt(&self) -> Result<Var> {
        if self.with_value(|t| t.data().iter().any(|&v| v <= 0.0)) {
            return Err(Error::domain("sqrt", "requires strictly positive inputs"));
        }
        self.unary_elementwise("sqrt", f64::sqrt, |d, _, y| d / (2.0 * y))
    }

    pub fn add_scalar(&self, c: f64) -> Result<Var> {
        self.unary_elementwise("add_scalar", move |v| v + c, |d, _, _| d)
    }

    pub fn mul_scalar(&self, c: f64) -> Result<Var> {
        self.unary_elementwise("mul_scalar", move |v| v * c, move |d, _, _| d * c)
    }

    fn binary_elementwise(
        &self,
        other: &Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        // dy, a, b -> (da, db) elementwise
        dfd: impl Fn(f64, f64, f64) -> (f64, f64) + 'static,
    ) -> Result<Var> {
        let shape = self.same_shape(other, name)?;
        let a = self.with_value(|t| t.data().to_vec());
        let b = other.with_value(|t| t.data().to_vec());
        let y: Vec<f64> = a.iter().zip(&b).map(|(&x, &z)| f(x, z)).collect();
        self.tape.push_op(
            name,
            &[self, other],
            Tensor::new(shape, y)?,
            Box::new(move |dy| {
                let mut da = Vec::with_capacity(dy.len());
                let mut db = Vec::with_capacity(dy.len());
                for ((&d, &x), &z) in dy.iter().zip(&a).zip(&b) {
                    let (ga, gb) = dfd(d, x, z);
                    da.push(ga);
                    db.push(gb);
                }
                vec![da, db]
            }),
        )
    }

    pub fn add(&self, other: &Var) -> Result<Var> {
        self.binary_elementwise(other, "add", |a, b| a + b, |d, _, _| (d, d))
    }

    pub fn sub(&self, other: &Var) -> Result<Var> {
        self.binary_elementwise(other, "sub", |a, b| a - b, |d, _, _| (d, -d))
    }

    pub fn mul(&self, other: &Var) -> Result<Var> {
        self.binary_elementwise(other, "mul", |a, b| a * b, |d, a, b| (d * b, d * a))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&self) -> Result<Var> {
        let (n, total) = self.with_value(|t| (t.len(), t.data().iter().sum::<f64>()));
        self.tape.push_op(
            "sum",
            &[self],
            Tensor::scalar(total),
            Box::new(move |dy| vec![vec![dy[0]; n]]),
        )
    }

    /// Inner product of two equal-length vectors, as a scalar.
    pub fn dot(&self, other: &Var) -> Result<Var> {
        let shape = self.same_shape(other, "dot")?;
        if shape.len() != 1 {
            return Err(Error::shape("dot", format!("expected vectors, got {:?}", shape)));
        }
        let a = self.with_value(|t| t.data().to_vec());
        let b = other.with_value(|t| t.data().to_vec());
        let s: f64 = a.iter().zip(&b).map(|(x, z)| x * z).sum();
        self.tape.push_op(
            "dot",
            &[self, other],
            Tensor::scalar(s),
            Box::new(move |dy| {
                let d = dy[0];
                vec![
                    b.iter().map(|&z| d * z).collect(),
                    a.iter().map(|&x| d * x).collect(),
                ]
            }),
        )
    }

    /// Matrix product of an `m x k` and a `k x n` matrix.
    pub fn matmul(&self, other: &Var) -> Result<Var> {
        let (m, k) = self.with_value(|t| (t.rows(), t.cols()));
        let (m, k) = (m?, k?);
        let (k2, n) = other.with_value(|t| (t.rows(), t.cols()));
        let (k2, n) = (k2?, n?);
        if k != k2 {
            return Err(Error::shape(
                "matmul",
                format!("inner dims {} and {} differ", k, k2),
            ));
        }
        let a = self.with_value(|t| t.data().to_vec());
        let b = other.with_value(|t| t.data().to_vec());
        let mut y = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let aip = a[i * k + p];
                if aip == 0.0 {
                    continue;
                }
                let brow = &b[p * n..(p + 1) * n];
                let yrow = &mut y[i * n..(i + 1) * n];
                for j in 0..n {
                    yrow[j] += aip * brow[j];
                }
            }
        }
        self.tape.push_op(
            "matmul",
            &[self, other],
            Tensor::matrix(m, n, y)?,
            Box::new(move |dy| {
                // dA = dY B^T, dB = A^T dY
                let mut da = vec![0.0; m * k];
                for i in 0..m {
                    for p in 0..k {
                        let mut acc = 0.0;
                        for j in 0..n {
                            acc += dy[i * n + j] * b[p * n + j];
                        }
                        da[i * k + p] = acc;
                    }
                }
                let mut db = vec![0.0; k * n];
                for p in 0..k {
                    for i in 0..m {
                        let aip = a[i * k + p];
                        if aip == 0.0 {
                            continue;
                        }
                        for j in 0..n {
                            db[p * n + j] += aip * dy[i * n + j];
                        }
                    }
                }
                vec![da, db]
            }),
        )
    }

    pub fn transpose(&self) -> Result<Var> {
        let (m, n) = self.with_value(|t| (t.rows(), t.cols()));
        let (m, n) = (m?, n?);
        let x = self.with_value(|t| t.data().to_vec());
        let mut y = vec![0.0; n * m];
        for i in 0..m {
            for j in 0..n {
                y[j * m + i] = x[i * n + j];
            }
        }
        self.tape.push_op(
            "transpose",
            &[self],
            Tensor::matrix(n, m, y)?,
            Box::new(move |dy| {
                let mut dx = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..n {
                        dx[i * n + j] = dy[j * m + i];
                    }
                }
                vec![dx]
            }),
        )
    }

    /// `M x` for an `m x n` matrix and an `n` vector.
    pub fn matvec(&self, x: &Var) -> Result<Var> {
        let (m, n) = self.with_value(|t| (t.rows(), t.cols()));
        let (m, n) = (m?, n?);
        let xs = x.shape();
        if xs != [n] {
            return Err(Error::shape(
                "matvec",
                format!("matrix {}x{} with vector {:?}", m, n, xs),
            ));
        }
        let mdat = self.with_value(|t| t.data().to_vec());
        let xdat = x.with_value(|t| t.data().to_vec());
        let y: Vec<f64> = (0..m)
            .map(|i| {
                mdat[i * n..(i + 1) * n]
                    .iter()
                    .zip(&xdat)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect();
        self.tape.push_op(
            "matvec",
            &[self, x],
            Tensor::vector(y),
            Box::new(move |dy| {
                let mut dm = vec![0.0; m * n];
                let mut dx = vec![0.0; n];
                for i in 0..m {
                    let d = dy[i];
                    for j in 0..n {
                        dm[i * n + j] = d * xdat[j];
                        dx[j] += d * mdat[i * n + j];
                    }
                }
                vec![dm, dx]
            }),
        )
    }

    /// `a^T M` for an `m` vector and an `m x n` matrix.
    pub fn vecmat(&self, m: &Var) -> Result<Var> {
        let (rows, n) = m.with_value(|t| (t.rows(), t.cols()));
        let (rows, n) = (rows?, n?);
        let ashape = self.shape();
        if ashape != [rows] {
            return Err(Error::shape(
                "vecmat",
                format!("vector {:?} with matrix {}x{}", ashape, rows, n),
            ));
        }
        let a = self.with_value(|t| t.data().to_vec());
        let mdat = m.with_value(|t| t.data().to_vec());
        let mut y = vec![0.0; n];
        for i in 0..rows {
            let ai = a[i];
            if ai == 0.0 {
                continue;
            }
            for j in 0..n {
                y[j] += ai * mdat[i * n + j];
            }
        }
        self.tape.push_op(
            "vecmat",
            &[self, m],
            Tensor::vector(y),
            Box::new(move |dy| {
                let mut da = vec![0.0; rows];
                let mut dm = vec![0.0; rows * n];
                for i in 0..rows {
                    let mut acc = 0.0;
                    for j in 0..n {
                        acc += dy[j] * mdat[i * n + j];
                        dm[i * n + j] = a[i] * dy[j];
                    }
                    da[i] = acc;
                }
                vec![da, dm]
            }),
        )
    }

    /// Adds a length-`d` bias vector to every row of an `n x d` matrix. The
    /// only broadcast the engine supports.
    pub fn add_row_bias(&self, bias: &Var) -> Result<Var> {
        let (n, d) = self.with_value(|t| (t.rows(), t.cols()));
        let (n, d) = (n?, d?);
        if bias.shape() != [d] {
            return Err(Error::shape(
                "add_row_bias",
                format!("matrix {}x{} with bias {:?}", n, d, bias.shape()),
            ));
        }
        let x = self.with_value(|t| t.data().to_vec());
        let b = bias.with_value(|t| t.data().to_vec());
        let y: Vec<f64> = x
            .iter()
            .enumerate()
            .map(|(idx, &v)| v + b[idx % d])
            .collect();
        self.tape.push_op(
            "add_row_bias",
            &[self, bias],
            Tensor::matrix(n, d, y)?,
            Box::new(move |dy| {
                let mut db = vec![0.0; d];
                for (idx, &g) in dy.iter().enumerate() {
                    db[idx % d] += g;
                }
                vec![dy.to_vec(), db]
            }),
        )
    }

    /// Columns `[start, start+len)` of a matrix.
    pub fn slice_cols(&self, start: usize, len: usize) -> Result<Var> {
        let (n, d) = self.with_value(|t| (t.rows(), t.cols()));
        let (n, d) = (n?, d?);
        if start + len > d || len == 0 {
            return Err(Error::shape(
                "slice_cols",
                format!("slice [{}, {}) of {} columns", start, start + len, d),
            ));
        }
        let x = self.with_value(|t| t.data().to_vec());
        let mut y = Vec::with_capacity(n * len);
        for i in 0..n {
            y.extend_from_slice(&x[i * d + start..i * d + start + len]);
        }
        self.tape.push_op(
            "slice_cols",
            &[self],
            Tensor::matrix(n, len, y)?,
            Box::new(move |dy| {
                let mut dx = vec![0.0; n * d];
                for i in 0..n {
                    dx[i * d + start..i * d + start + len]
                        .copy_from_slice(&dy[i * len..(i + 1) * len]);
                }
                vec![dx]
            }),
        )
    }

    /// Softmax over a vector. Max-subtracted, so arbitrarily large inputs
    /// stay finite; the result sums to 1.
    pub fn softmax(&self) -> Result<Var> {
        let shape = self.shape();
        if shape.len() != 1 || shape[0] == 0 {
            return Err(Error::shape(
                "softmax",
                format!("expected non-empty vector, got {:?}", shape),
            ));
        }
        let x = self.with_value(|t| t.data().to_vec());
        let s = softmax_slice(&x);
        let s_saved = s.clone();
        self.tape.push_op(
            "softmax",
            &[self],
            Tensor::vector(s),
            Box::new(move |dy| {
                vec![softmax_backward_row(dy, &s_saved)]
            }),
        )
    }

    /// Row-wise softmax over a matrix.
    pub fn softmax_rows(&self) -> Result<Var> {
        let (n, d) = self.with_value(|t| (t.rows(), t.cols()));
        let (n, d) = (n?, d?);
        if d == 0 {
            return Err(Error::shape("softmax_rows", "zero columns".to_string()));
        }
        let x = self.with_value(|t| t.data().to_vec());
        let mut y = Vec::with_capacity(n * d);
        for i in 0..n {
            y.extend(softmax_slice(&x[i * d..(i + 1) * d]));
        }
        let y_saved = y.clone();
        self.tape.push_op(
            "softmax_rows",
            &[self],
            Tensor::matrix(n, d, y)?,
            Box::new(move |dy| {
                let mut dx = Vec::with_capacity(n * d);
                for i in 0..n {
                    dx.extend(softmax_backward_row(
                        &dy[i * d..(i + 1) * d],
                        &y_saved[i * d..(i + 1) * d],
                    ));
                }
                vec![dx]
            }),
        )
    }

    /// Row-wise layer normalization with per-column gain and bias. Each row
    /// is centered and scaled by 1/sqrt(var + eps) with population variance.
    pub fn layer_norm(&self, gain: &Var, bias: &Var, eps: f64) -> Result<Var> {
        let (n, d) = self.with_value(|t| (t.rows(), t.cols()));
        let (n, d) = (n?, d?);
        if gain.shape() != [d] || bias.shape() != [d] {
            return Err(Error::shape(
                "layer_norm",
                format!(
                    "matrix {}x{} with gain {:?} and bias {:?}",
                    n,
                    d,
                    gain.shape(),
                    bias.shape()
                ),
            ));
        }
        let x = self.with_value(|t| t.data().to_vec());
        let g = gain.with_value(|t| t.data().to_vec());
        let b = bias.with_value(|t| t.data().to_vec());
        let mut y = vec![0.0; n * d];
        let mut xhat = vec![0.0; n * d];
        let mut inv_std = vec![0.0; n];
        for i in 0..n {
            let row = &x[i * d..(i + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std[i] = inv;
            for j in 0..d {
                let xh = (row[j] - mean) * inv;
                xhat[i * d + j] = xh;
                y[i * d + j] = g[j] * xh + b[j];
            }
        }
        self.tape.push_op(
            "layer_norm",
            &[self, gain, bias],
            Tensor::matrix(n, d, y)?,
            Box::new(move |dy| {
                let mut dx = vec![0.0; n * d];
                let mut dg = vec![0.0; d];
                let mut db = vec![0.0; d];
                for i in 0..n {
                    let xh = &xhat[i * d..(i + 1) * d];
                    let dyr = &dy[i * d..(i + 1) * d];
                    let mut mean_dxhat = 0.0;
                    let mut mean_dxhat_xhat = 0.0;
                    for j in 0..d {
                        let dxh = dyr[j] * g[j];
                        mean_dxhat += dxh;
                        mean_dxhat_xhat += dxh * xh[j];
                        dg[j] += dyr[j] * xh[j];
                        db[j] += dyr[j];
                    }
                    mean_dxhat /= d as f64;
                    mean_dxhat_xhat /= d as f64;
                    for j in 0..d {
                        let dxh = dyr[j] * g[j];
                        dx[i * d + j] = (dxh - mean_dxhat - xh[j] * mean_dxhat_xhat) * inv_std[i];
                    }
                }
                vec![dx, dg, db]
            }),
        )
    }
}

/// Horizontal concatenation of matrices with equal row counts.
pub fn concat_cols(parts: &[Var]) -> Result<Var> {
    if parts.is_empty() {
        return Err(Error::shape("concat_cols", "no inputs".to_string()));
    }
    let n = parts[0].value().rows()?;
    let widths: Vec<usize> = parts
        .iter()
        .map(|p| {
            let t = p.value();
            if t.rows()? != n {
                return Err(Error::shape(
                    "concat_cols",
                    format!("row counts differ: {} vs {}", n, t.rows()?),
                ));
            }
            t.cols()
        })
        .collect::<Result<_>>()?;
    let total: usize = widths.iter().sum();
    let datas: Vec<Vec<f64>> = parts.iter().map(|p| p.value().into_data()).collect();
    let mut y = Vec::with_capacity(n * total);
    for i in 0..n {
        for (part, w) in datas.iter().zip(&widths) {
            y.extend_from_slice(&part[i * w..(i + 1) * w]);
        }
    }
    let widths_saved = widths.clone();
    let parent_refs: Vec<&Var> = parts.iter().collect();
    parts[0].tape.push_op(
        "concat_cols",
        &parent_refs,
        Tensor::matrix(n, total, y)?,
        Box::new(move |dy| {
            let mut grads: Vec<Vec<f64>> =
                widths_saved.iter().map(|w| vec![0.0; n * w]).collect();
            for i in 0..n {
                let mut off = 0;
                for (slot, &w) in widths_saved.iter().enumerate() {
                    grads[slot][i * w..(i + 1) * w]
                        .copy_from_slice(&dy[i * total + off..i * total + off + w]);
                    off += w;
                }
            }
            grads
        }),
    )
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softplus: `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn softmax_slice(x: &[f64]) -> Vec<f64> {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn softmax_backward_row(dy: &[f64], s: &[f64]) -> Vec<f64> {
    let dot: f64 = dy.iter().zip(s).map(|(d, v)| d * v).sum();
    dy.iter().zip(s).map(|(d, v)| v * (d - dot)).collect()
}

/// Central-difference gradient of `f` at `x0` with step `h`, one coordinate
/// at a time. Shares no code with the tape, so it works as an independent
/// oracle for any scalar-valued function.
pub fn central_difference<F>(x0: &[f64], h: f64, mut f: F) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let mut x = x0.to_vec();
    let mut grad = vec![0.0; x0.len()];
    for i in 0..x0.len() {
        let orig = x[i];
        x[i] = orig + h;
        let fp = f(&x)?;
        x[i] = orig - h;
        let fm = f(&x)?;
        x[i] = orig;
        grad[i] = (fp - fm) / (2.0 * h);
    }
    Ok(grad)
}

/// Relative error |a - b| / max(|a|, |b|, floor). The floor keeps near-zero
/// gradient comparisons meaningful as absolute comparisons.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}
