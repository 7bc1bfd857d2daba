//! Reverse-mode gradient tape over dense tensors.
//!
//! A [`Tape`] records every primitive applied to [`Var`] handles; calling
//! [`Var::backward`] on a scalar output accumulates gradients for every
//! recorded node exactly once, in reverse topological order. Every op output
//! is checked for NaN/Inf and trips a [`crate::Error::NumericFault`] carrying
//! the op name and, when set, the training step.

use std::cell::RefCell;
use std::rc::Rc;

use super::dense::{self, Tensor};
use crate::stats::sigmoid;
use crate::{Error, Result};

/// Elementwise nonlinearity used between network layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Swish,
    Tanh,
    Gelu,
}

const INV_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

impl Activation {
    pub fn apply_scalar(self, x: f64) -> f64 {
        match self {
            Activation::Swish => x * sigmoid(x),
            Activation::Tanh => x.tanh(),
            Activation::Gelu => x * 0.5 * (1.0 + libm::erf(x * INV_SQRT_2)),
        }
    }

    pub fn grad_scalar(self, x: f64) -> f64 {
        match self {
            Activation::Swish => {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Gelu => {
                let cdf = 0.5 * (1.0 + libm::erf(x * INV_SQRT_2));
                let pdf = INV_SQRT_2PI * (-0.5 * x * x).exp();
                cdf + x * pdf
            }
        }
    }

    pub fn apply(self, t: &Tensor) -> Tensor {
        t.map(|v| self.apply_scalar(v))
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Swish => "swish",
            Activation::Tanh => "tanh",
            Activation::Gelu => "gelu",
        }
    }
}

enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    Exp(usize),
    Ln(usize),
    Sqrt(usize),
    Act(usize, Activation),
    Scale(usize, f64),
    AddConst(usize, f64),
    MulConst(usize, Tensor),
    MulScalarVar { a: usize, s: usize },
    AddScalarVar { a: usize, s: usize },
    MulColVec { a: usize, v: usize },
    MatMul { a: usize, b: usize },
    MatMulNt { a: usize, b: usize },
    AppendOnesCol(usize),
    Conv2dMat { x: usize, w: usize, kh: usize, kw: usize },
    AvgPool2(usize),
    Reshape(usize),
    Sum(usize),
    CatLogProbSum { logits: usize, labels: Vec<usize> },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Neg(..) => "neg",
            Op::Exp(..) => "exp",
            Op::Ln(..) => "ln",
            Op::Sqrt(..) => "sqrt",
            Op::Act(..) => "activation",
            Op::Scale(..) => "scale",
            Op::AddConst(..) => "add_const",
            Op::MulConst(..) => "mul_const",
            Op::MulScalarVar { .. } => "mul_scalar_var",
            Op::AddScalarVar { .. } => "add_scalar_var",
            Op::MulColVec { .. } => "mul_col_vec",
            Op::MatMul { .. } => "matmul",
            Op::MatMulNt { .. } => "matmul_nt",
            Op::AppendOnesCol(..) => "append_ones_col",
            Op::Conv2dMat { .. } => "conv2d",
            Op::AvgPool2(..) => "avgpool2",
            Op::Reshape(..) => "reshape",
            Op::Sum(..) => "sum",
            Op::CatLogProbSum { .. } => "categorical_logprob_sum",
        }
    }
}

struct TapeInner {
    values: Vec<Tensor>,
    ops: Vec<Op>,
    step: Option<u64>,
}

/// Recording tape. Cheap to clone (shared handle), confined to one thread.
#[derive(Clone)]
pub struct Tape {
    inner: Rc<RefCell<TapeInner>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            inner: Rc::new(RefCell::new(TapeInner {
                values: Vec::new(),
                ops: Vec::new(),
                step: None,
            })),
        }
    }

    /// Tag subsequent faults with a training step index.
    pub fn set_step(&self, step: u64) {
        self.inner.borrow_mut().step = Some(step);
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Introduce a differentiable leaf.
    pub fn leaf(&self, value: Tensor) -> Result<Var> {
        self.push(value, Op::Leaf)
    }

    fn push(&self, value: Tensor, op: Op) -> Result<Var> {
        let mut inner = self.inner.borrow_mut();
        if let Some(index) = value.first_nonfinite() {
            return Err(Error::NumericFault {
                op: op.name(),
                index,
                step: inner.step,
            });
        }
        let id = inner.values.len();
        inner.values.push(value);
        inner.ops.push(op);
        Ok(Var {
            tape: self.clone(),
            id,
        })
    }
}

/// Handle to one tape node.
#[derive(Clone)]
pub struct Var {
    tape: Tape,
    id: usize,
}

macro_rules! binary_elementwise {
    ($name:ident, $opname:literal, $variant:ident, $f:expr) => {
        pub fn $name(&self, other: &Var) -> Result<Var> {
            let value = {
                let inner = self.tape.inner.borrow();
                let a = &inner.values[self.id];
                let b = &inner.values[other.id];
                if a.shape() != b.shape() {
                    return Err(Error::ShapeMismatch {
                        op: $opname,
                        lhs: a.shape().to_vec(),
                        rhs: b.shape().to_vec(),
                    });
                }
                let data = a
                    .data()
                    .iter()
                    .zip(b.data().iter())
                    .map(|(&x, &y)| ($f)(x, y))
                    .collect();
                Tensor::from_vec(a.shape(), data)?
            };
            self.tape.push(value, Op::$variant(self.id, other.id))
        }
    };
}

macro_rules! unary_elementwise {
    ($name:ident, $variant:ident, $f:expr) => {
        pub fn $name(&self) -> Result<Var> {
            let value = {
                let inner = self.tape.inner.borrow();
                inner.values[self.id].map($f)
            };
            self.tape.push(value, Op::$variant(self.id))
        }
    };
}

impl Var {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.inner.borrow().values[self.id].shape().to_vec()
    }

    pub fn value(&self) -> Tensor {
        self.tape.inner.borrow().values[self.id].clone()
    }

    pub fn item(&self) -> Result<f64> {
        self.tape.inner.borrow().values[self.id].item()
    }

    binary_elementwise!(add, "add", Add, |x, y| x + y);
    binary_elementwise!(sub, "sub", Sub, |x, y| x - y);
    binary_elementwise!(mul, "mul", Mul, |x, y| x * y);
    binary_elementwise!(div, "div", Div, |x, y| x / y);

    unary_elementwise!(neg, Neg, |x| -x);
    unary_elementwise!(exp, Exp, f64::exp);
    unary_elementwise!(ln, Ln, f64::ln);
    unary_elementwise!(sqrt, Sqrt, f64::sqrt);

    pub fn activation(&self, kind: Activation) -> Result<Var> {
        let value = {
            let inner = self.tape.inner.borrow();
            kind.apply(&inner.values[self.id])
        };
        self.tape.push(value, Op::Act(self.id, kind))
    }

    pub fn scale(&self, c: f64) -> Result<Var> {
        let value = {
            let inner = self.tape.inner.borrow();
            inner.values[self.id].map(|x| c * x)
        };
        self.tape.push(value, Op::Scale(self.id, c))
    }

    pub fn add_const(&self, c: f64) -> Result<Var> {
        let value = {
            let inner = self.tape.inner.borrow();
            inner.values[self.id].map(|x| x + c)
        };
        self.tape.push(value, Op::AddConst(self.id, c))
    }

    /// Elementwise product with a fixed (non-differentiated) tensor, e.g. a
    /// dropout mask or a batch of standard-normal draws.
    pub fn mul_const(&self, t: &Tensor) -> Result<Var> {
        let value = {
            let inner = self.tape.inner.borrow();
            let a = &inner.values[self.id];
            if a.shape() != t.shape() {
                return Err(Error::ShapeMismatch {
                    op: "mul_const",
                    lhs: a.shape().to_vec(),
                    rhs: t.shape().to_vec(),
                });
            }
            let data = a
                .data()
                .iter()
                .zip(t.data().iter())
                .map(|(&x, &y)| x * y)
                .collect();
            Tensor::from_vec(a.shape(), data)?
        };
        self.tape.push(value, Op::MulConst(self.id, t.clone()))
    }

    /// Broadcast multiply by a one-element node.
    pub fn mul_scalar_var(&self, s: &Var) -> Result<Var> {
        let value = {
            let inner = self.tape.inner.borrow();
            let sv = inner.values[s.id].item()?;
            inner.values[self.id].map(|x| x * sv)
        };
        self.tape.push(
            value,
            Op::MulScalarVar {
                a: self.id,
                s: s.id,
            },
        )
    }

    /// Broadcast add of a one-element node.
    pub fn add_scalar_var(&self, s: &Var) -> Result<Var> {
        let value = {
            let inner = self.tape.inner.borrow();
            let sv = inner.values[s.id].item()?;
            inner.values[self.id].map(|x| x + sv)
        };
        self.tape.push(
            value,
            Op::AddScalarVar {
                a: self.id,
                s: s.id,
            },
        )
    }

    /// Scale row `i` of a 2-d tensor by `v[i]`.
    pub fn mul_col_vec(&self, v: &Var) -> Result<Var> {
        let value = {
            let inner = self.tape.inner.borrow();
            let a = &inner.values[self.id];
            let col = &inner.values[v.id];
            if a.ndim() != 2 || col.ndim() != 1 || col.shape()[0] != a.rows() {
                return Err(Error::ShapeMismatch {
                    op: "mul_col_vec",
                    lhs: a.shape().to_vec(),
                    rhs: col.shape().to_vec(),
                });
            }
            let (r, c) = (a.rows(), a.cols());
            let mut data = vec![0.0; r * c];
            for i in 0..r {
                let s = col.data()[i];
                for j in 0..c {
                    data[i * c + j] = a.data()[i * c + j] * s;
                }
            }
            Tensor::from_vec(&[r, c], data)?
        };
        self.tape.push(
            value,
            Op::MulColVec {
                a: self.id,
                v: v.id,
            },
        )
    }

    pub fn matmul(&self, other: &Var) -> Result<Var> {
        let value = {
            let inner = self.tape.inner.borrow();
            dense::matmul(&inner.values[self.id], &inner.values[other.id])?
        };
        self.tape.push(
            value,
            Op::MatMul {
                a: self.id,
                b: other.id,
            },
        )
    }

    /// `self · otherᵀ` — the affine-layer core for row-major batches.
    pub fn matmul_nt(&self, other: &Var) -> Result<Var> {
        let value = {
            let inner = self.tape.inner.borrow();
            dense::matmul_nt(&inner.values[self.id], &inner.values[other.id])?
        };
        self.tape.push(
            value,
            Op::MatMulNt {
                a: self.id,
                b: other.id,
            },
        )
    }

    /// Append a constant all-ones column (the bias input).
    pub fn append_ones_col(&self) -> Result<Var> {
        let value = {
            let inner = self.tape.inner.borrow();
            let a = &inner.values[self.id];
            if a.ndim() != 2 {
                return Err(Error::BadShape {
                    op: "append_ones_col",
                    shape: a.shape().to_vec(),
                    why: "expected a 2-d tensor".into(),
                });
            }
            let (r, c) = (a.rows(), a.cols());
            let mut data = vec![0.0; r * (c + 1)];
            for i in 0..r {
                data[i * (c + 1)..i * (c + 1) + c]
                    .copy_from_slice(&a.data()[i * c..(i + 1) * c]);
                data[i * (c + 1) + c] = 1.0;
            }
            Tensor::from_vec(&[r, c + 1], data)?
        };
        self.tape.push(value, Op::AppendOnesCol(self.id))
    }

    /// Batched valid cross-correlation with matrix-form weights
    /// (`[f × (c·kh·kw + 1)]`, bias folded as the last column).
    pub fn conv2d_mat(&self, wmat: &Var, kh: usize, kw: usize) -> Result<Var> {
        let value = {
            let inner = self.tape.inner.borrow();
            dense::conv2d_mat(&inner.values[self.id], &inner.values[wmat.id], kh, kw)?
        };
        self.tape.push(
            value,
            Op::Conv2dMat {
                x: self.id,
                w: wmat.id,
                kh,
                kw,
            },
        )
    }

    pub fn avgpool2(&self) -> Result<Var> {
        let value = {
            let inner = self.tape.inner.borrow();
            dense::avgpool2(&inner.values[self.id])?
        };
        self.tape.push(value, Op::AvgPool2(self.id))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var> {
        let value = {
            let inner = self.tape.inner.borrow();
            inner.values[self.id].reshaped(shape)?
        };
        self.tape.push(value, Op::Reshape(self.id))
    }

    /// Sum of all entries, as a one-element node.
    pub fn sum(&self) -> Result<Var> {
        let value = {
            let inner = self.tape.inner.borrow();
            Tensor::scalar(inner.values[self.id].data().iter().sum())
        };
        self.tape.push(value, Op::Sum(self.id))
    }

    /// Σ over rows of `logits[row, labels[row]] − logsumexp(logits[row, :])`.
    pub fn categorical_logprob_sum(&self, labels: &[usize]) -> Result<Var> {
        let value = {
            let inner = self.tape.inner.borrow();
            let logits = &inner.values[self.id];
            if logits.ndim() != 2 || logits.rows() != labels.len() {
                return Err(Error::BadShape {
                    op: "categorical_logprob_sum",
                    shape: logits.shape().to_vec(),
                    why: format!("need [batch × classes] with batch = {}", labels.len()),
                });
            }
            let classes = logits.cols();
            let mut total = 0.0;
            for (r, &y) in labels.iter().enumerate() {
                if y >= classes {
                    return Err(Error::BadShape {
                        op: "categorical_logprob_sum",
                        shape: logits.shape().to_vec(),
                        why: format!("label {y} out of range for {classes} classes"),
                    });
                }
                let row = &logits.data()[r * classes..(r + 1) * classes];
                total += row[y] - crate::stats::logsumexp(row);
            }
            Tensor::scalar(total)
        };
        self.tape.push(
            value,
            Op::CatLogProbSum {
                logits: self.id,
                labels: labels.to_vec(),
            },
        )
    }

    /// Reverse pass from this (scalar) node.
    pub fn backward(&self) -> Result<Gradients> {
        let grads = {
            let inner = self.tape.inner.borrow();
            if inner.values[self.id].len() != 1 {
                return Err(Error::BadShape {
                    op: "backward",
                    shape: inner.values[self.id].shape().to_vec(),
                    why: "backward root must be scalar".into(),
                });
            }
            inner.backward_from(self.id)?
        };
        Ok(Gradients {
            tape: self.tape.clone(),
            grads,
        })
    }
}

/// Per-node gradients produced by [`Var::backward`].
pub struct Gradients {
    tape: Tape,
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient with respect to `v` (zeros if `v` does not influence the root).
    pub fn wrt(&self, v: &Var) -> Tensor {
        match &self.grads[v.id] {
            Some(g) => g.clone(),
            None => Tensor::zeros(self.tape.inner.borrow().values[v.id].shape()),
        }
    }
}

impl TapeInner {
    fn backward_from(&self, root: usize) -> Result<Vec<Option<Tensor>>> {
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(self.values.len());
        grads.resize_with(self.values.len(), || None);
        grads[root] = Some(Tensor::filled(self.values[root].shape(), 1.0));

        for id in (0..=root).rev() {
            let go = match &grads[id] {
                Some(g) => g.clone(),
                None => continue,
            };
            match &self.ops[id] {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    acc(&mut grads, *a, &self.values[*a], go.clone());
                    acc(&mut grads, *b, &self.values[*b], go);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *a, &self.values[*a], go.clone());
                    acc(&mut grads, *b, &self.values[*b], go.map(|g| -g));
                }
                Op::Mul(a, b) => {
                    let da = zip(&go, &self.values[*b], |g, v| g * v);
                    let db = zip(&go, &self.values[*a], |g, v| g * v);
                    acc(&mut grads, *a, &self.values[*a], da);
                    acc(&mut grads, *b, &self.values[*b], db);
                }
                Op::Div(a, b) => {
                    let va = &self.values[*a];
                    let vb = &self.values[*b];
                    let da = zip(&go, vb, |g, y| g / y);
                    let db_data: Vec<f64> = go
                        .data()
                        .iter()
                        .zip(va.data().iter().zip(vb.data().iter()))
                        .map(|(&g, (&x, &y))| -g * x / (y * y))
                        .collect();
                    acc(&mut grads, *a, va, da);
                    acc(
                        &mut grads,
                        *b,
                        vb,
                        Tensor::from_vec(vb.shape(), db_data).expect("shape preserved"),
                    );
                }
                Op::Neg(a) => acc(&mut grads, *a, &self.values[*a], go.map(|g| -g)),
                Op::Exp(a) => {
                    let da = zip(&go, &self.values[id], |g, out| g * out);
                    acc(&mut grads, *a, &self.values[*a], da);
                }
                Op::Ln(a) => {
                    let da = zip(&go, &self.values[*a], |g, x| g / x);
                    acc(&mut grads, *a, &self.values[*a], da);
                }
                Op::Sqrt(a) => {
                    let da = zip(&go, &self.values[id], |g, out| g / (2.0 * out));
                    acc(&mut grads, *a, &self.values[*a], da);
                }
                Op::Act(a, kind) => {
                    let da = zip(&go, &self.values[*a], |g, x| g * kind.grad_scalar(x));
                    acc(&mut grads, *a, &self.values[*a], da);
                }
                Op::Scale(a, c) => {
                    acc(&mut grads, *a, &self.values[*a], go.map(|g| c * g))
                }
                Op::AddConst(a, _) => acc(&mut grads, *a, &self.values[*a], go),
                Op::MulConst(a, t) => {
                    let da = zip(&go, t, |g, v| g * v);
                    acc(&mut grads, *a, &self.values[*a], da);
                }
                Op::MulScalarVar { a, s } => {
                    let sv = self.values[*s].data()[0];
                    let da = go.map(|g| g * sv);
                    let ds: f64 = go
                        .data()
                        .iter()
                        .zip(self.values[*a].data().iter())
                        .map(|(&g, &x)| g * x)
                        .sum();
                    acc(&mut grads, *a, &self.values[*a], da);
                    acc(&mut grads, *s, &self.values[*s], Tensor::scalar(ds));
                }
                Op::AddScalarVar { a, s } => {
                    let ds: f64 = go.data().iter().sum();
                    acc(&mut grads, *a, &self.values[*a], go);
                    acc(&mut grads, *s, &self.values[*s], Tensor::scalar(ds));
                }
                Op::MulColVec { a, v } => {
                    let va = &self.values[*a];
                    let vv = &self.values[*v];
                    let (r, c) = (va.rows(), va.cols());
                    let mut da = vec![0.0; r * c];
                    let mut dv = vec![0.0; r];
                    for i in 0..r {
                        let s = vv.data()[i];
                        for j in 0..c {
                            let g = go.data()[i * c + j];
                            da[i * c + j] = g * s;
                            dv[i] += g * va.data()[i * c + j];
                        }
                    }
                    acc(
                        &mut grads,
                        *a,
                        va,
                        Tensor::from_vec(&[r, c], da).expect("shape preserved"),
                    );
                    acc(
                        &mut grads,
                        *v,
                        vv,
                        Tensor::from_vec(&[r], dv).expect("shape preserved"),
                    );
                }
                Op::MatMul { a, b } => {
                    let da = dense::matmul_nt(&go, &self.values[*b])?;
                    let db = dense::matmul_tn(&self.values[*a], &go)?;
                    acc(&mut grads, *a, &self.values[*a], da);
                    acc(&mut grads, *b, &self.values[*b], db);
                }
                Op::MatMulNt { a, b } => {
                    let da = dense::matmul(&go, &self.values[*b])?;
                    let db = dense::matmul_tn(&go, &self.values[*a])?;
                    acc(&mut grads, *a, &self.values[*a], da);
                    acc(&mut grads, *b, &self.values[*b], db);
                }
                Op::AppendOnesCol(a) => {
                    let va = &self.values[*a];
                    let (r, c) = (va.rows(), va.cols());
                    let mut da = vec![0.0; r * c];
                    for i in 0..r {
                        da[i * c..(i + 1) * c]
                            .copy_from_slice(&go.data()[i * (c + 1)..i * (c + 1) + c]);
                    }
                    acc(
                        &mut grads,
                        *a,
                        va,
                        Tensor::from_vec(&[r, c], da).expect("shape preserved"),
                    );
                }
                Op::Conv2dMat { x, w, kh, kw } => {
                    let (dx, dw) =
                        dense::conv2d_mat_backward(&self.values[*x], &self.values[*w], *kh, *kw, &go);
                    acc(&mut grads, *x, &self.values[*x], dx);
                    acc(&mut grads, *w, &self.values[*w], dw);
                }
                Op::AvgPool2(a) => {
                    let va = &self.values[*a];
                    let nd = va.ndim();
                    let w = va.shape()[nd - 1];
                    let h = va.shape()[nd - 2];
                    let lead: usize = va.shape()[..nd - 2].iter().product();
                    let (oh, ow) = (h / 2, w / 2);
                    let mut da = vec![0.0; va.len()];
                    for l in 0..lead {
                        for i in 0..oh {
                            for j in 0..ow {
                                let g = 0.25 * go.data()[(l * oh + i) * ow + j];
                                let base = l * h * w;
                                da[base + (2 * i) * w + 2 * j] += g;
                                da[base + (2 * i) * w + 2 * j + 1] += g;
                                da[base + (2 * i + 1) * w + 2 * j] += g;
                                da[base + (2 * i + 1) * w + 2 * j + 1] += g;
                            }
                        }
                    }
                    acc(
                        &mut grads,
                        *a,
                        va,
                        Tensor::from_vec(va.shape(), da).expect("shape preserved"),
                    );
                }
                Op::Reshape(a) => {
                    let va = &self.values[*a];
                    let da = go.reshaped(va.shape()).expect("same element count");
                    acc(&mut grads, *a, va, da);
                }
                Op::Sum(a) => {
                    let va = &self.values[*a];
                    let g = go.data()[0];
                    acc(&mut grads, *a, va, Tensor::filled(va.shape(), g));
                }
                Op::CatLogProbSum { logits, labels } => {
                    let vl = &self.values[*logits];
                    let g = go.data()[0];
                    let classes = vl.cols();
                    let mut da = vec![0.0; vl.len()];
                    for (r, &y) in labels.iter().enumerate() {
                        let row = &vl.data()[r * classes..(r + 1) * classes];
                        let lse = crate::stats::logsumexp(row);
                        for j in 0..classes {
                            let softmax = (row[j] - lse).exp();
                            let indicator = if j == y { 1.0 } else { 0.0 };
                            da[r * classes + j] = g * (indicator - softmax);
                        }
                    }
                    acc(
                        &mut grads,
                        *logits,
                        vl,
                        Tensor::from_vec(vl.shape(), da).expect("shape preserved"),
                    );
                }
            }
        }
        Ok(grads)
    }
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    debug_assert_eq!(a.shape(), b.shape());
    let data = a
        .data()
        .iter()
        .zip(b.data().iter())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::from_vec(a.shape(), data).expect("shape preserved")
}

fn acc(grads: &mut [Option<Tensor>], id: usize, value: &Tensor, delta: Tensor) {
    match &mut grads[id] {
        Some(g) => g.add_assign(&delta),
        slot @ None => {
            debug_assert_eq!(value.shape(), delta.shape());
            *slot = Some(delta);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0)).unwrap();
        let y = x.mul(&x).unwrap();
        let g = y.backward().unwrap();
        assert_eq!(g.wrt(&x).data()[0], 6.0);
    }

    #[test]
    fn swish_gradient_at_zero_is_half() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(0.0)).unwrap();
        let y = x.activation(Activation::Swish).unwrap().sum().unwrap();
        let g = y.backward().unwrap();
        assert!((g.wrt(&x).data()[0] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn swish_values() {
        assert_eq!(Activation::Swish.apply_scalar(0.0), 0.0);
        assert_eq!(Activation::Tanh.apply_scalar(0.0), 0.0);
        assert!((Activation::Swish.apply_scalar(1.0) - 0.731_058_6).abs() < 1e-7);
    }

    #[test]
    fn backward_requires_scalar_root() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(&[2, 2])).unwrap();
        assert!(x.backward().is_err());
    }

    #[test]
    fn nonfinite_output_trips_fault() {
        let tape = Tape::new();
        tape.set_step(17);
        let x = tape.leaf(Tensor::scalar(-1.0)).unwrap();
        match x.ln() {
            Err(Error::NumericFault { op, step, .. }) => {
                assert_eq!(op, "ln");
                assert_eq!(step, Some(17));
            }
            other => panic!("expected numeric fault, got {:?}", other.map(|v| v.shape())),
        }
    }

    #[test]
    fn matmul_shape_mismatch_reports_shapes() {
        let tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(&[2, 3])).unwrap();
        let b = tape.leaf(Tensor::zeros(&[4, 5])).unwrap();
        assert!(matches!(
            a.matmul(&b),
            Err(Error::ShapeMismatch { lhs, rhs, .. }) if lhs == vec![2, 3] && rhs == vec![4, 5]
        ));
    }

    #[test]
    fn fan_out_accumulates_once_per_use() {
        // f(x) = x·x + x → f'(3) = 7
        let tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0)).unwrap();
        let y = x.mul(&x).unwrap().add(&x).unwrap();
        let g = y.backward().unwrap();
        assert_eq!(g.wrt(&x).data()[0], 7.0);
    }
}
