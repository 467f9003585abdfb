//! Wengert-list reverse-mode differentiation over [`Tensor`] values.
//!
//! Every operation evaluates eagerly, appends its result to the tape and
//! remembers which rule to apply on the way back. Because a node can only
//! reference nodes that already exist, the tape is always in topological
//! order and a single reverse sweep suffices.

use super::kernels::{self, ConvGeom};
use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A differentiable operation whose forward pass is computed by the caller.
///
/// `backward` receives the input values, the recorded output and the
/// upstream gradient, and returns one optional gradient per input.
pub trait CustomOp<T: Scalar>: Send + Sync {
    fn name(&self) -> &'static str;

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad: &Tensor<T>,
    ) -> Vec<Option<Tensor<T>>>;
}

/// Deliberate corruption of a backward rule, used as a negative control for
/// gradient checking.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// Scales the left-operand gradient of every matmul by 1.5.
    MatmulBackward,
}

enum Op<T: Scalar> {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Exp(Var),
    Relu(Var),
    Square(Var),
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    SoftmaxRows(Var),
    AddLast(Var, Var),
    MulLast(Var, Var),
    SliceCols { input: Var, start: usize },
    Conv2d { input: Var, kernels: Var, geom: ConvGeom },
    Custom { inputs: Vec<Var>, op: Box<dyn CustomOp<T>> },
}

impl<T: Scalar> Op<T> {
    fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf => vec![],
            MatMul(a, b) | Add(a, b) | Sub(a, b) | Mul(a, b) | AddLast(a, b) | MulLast(a, b) => {
                vec![*a, *b]
            }
            Transpose(a) | Scale(a, _) | AddScalar(a) | Exp(a) | Relu(a) | Square(a) | Sum(a)
            | Mean(a) | Reshape(a) | SoftmaxRows(a) => vec![*a],
            SliceCols { input, .. } => vec![*input],
            Conv2d { input, kernels, .. } => vec![*input, *kernels],
            Custom { inputs, .. } => inputs.clone(),
        }
    }
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Recording of a forward computation.
///
/// A tape is confined to one thread of work; independent tapes can be
/// built concurrently on disjoint data.
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
    fault: Option<Fault>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by one call to [`Tape::backward`].
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the seeded output with respect to `var`, if `var` is reachable.
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Like [`Gradients::get`] but substitutes zeros for unreachable nodes.
    pub fn get_or_zeros(&self, tape: &Tape<T>, var: Var) -> Tensor<T> {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(tape.value(var).shape()))
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor<T>>], var: Var, g: Tensor<T>) {
    match &mut grads[var.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            fault: None,
        }
    }

    pub fn with_fault(fault: Fault) -> Self {
        Self {
            nodes: Vec::new(),
            fault: Some(fault),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    /// Nodes that `var` was computed from.
    pub fn inputs_of(&self, var: Var) -> Vec<Var> {
        self.nodes[var.0].op.inputs()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Registers an input or parameter.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Records a caller-computed output together with its backward rule.
    pub fn custom(&mut self, inputs: &[Var], output: Tensor<T>, op: impl CustomOp<T> + 'static) -> Var {
        self.push(
            output,
            Op::Custom {
                inputs: inputs.to_vec(),
                op: Box::new(op),
            },
        )
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose()?;
        Ok(self.push(out, Op::Transpose(a)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let out = self.value(a).map(|x| x * s);
        self.push(out, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: T) -> Var {
        let out = self.value(a).map(|x| x + s);
        self.push(out, Op::AddScalar(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(T::exp);
        self.push(out, Op::Exp(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(T::zero()));
        self.push(out, Op::Relu(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x * x);
        self.push(out, Op::Square(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(out, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let out = Tensor::scalar(v.sum() / T::of(v.len() as f64));
        self.push(out, Op::Mean(a))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).clone().reshaped(shape)?;
        Ok(self.push(out, Op::Reshape(a)))
    }

    /// Softmax along the last axis of a matrix.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        let (r, c) = v.dims2()?;
        if !v.is_finite() {
            return Err(Error::Numeric("softmax_rows received a non-finite input".into()));
        }
        let out = Tensor::new(&[r, c], kernels::softmax_rows(v.data(), r, c))?;
        Ok(self.push(out, Op::SoftmaxRows(a)))
    }

    fn last_dim_check(&self, a: Var, v: Var, op: &'static str) -> Result<usize> {
        let sa = self.shape(a);
        let sv = self.shape(v);
        let last = *sa.last().ok_or_else(|| Error::dim(op, sa, sv))?;
        if sv != [last] {
            return Err(Error::dim(op, sa, sv));
        }
        Ok(last)
    }

    /// `a + v` with `v` broadcast along the last axis of `a` (bias add).
    pub fn add_last(&mut self, a: Var, v: Var) -> Result<Var> {
        let c = self.last_dim_check(a, v, "add_last")?;
        let vv = self.value(v).data().to_vec();
        let mut out = self.value(a).clone();
        for (k, x) in out.data_mut().iter_mut().enumerate() {
            *x += vv[k % c];
        }
        Ok(self.push(out, Op::AddLast(a, v)))
    }

    /// `a ⊙ v` with `v` broadcast along the last axis of `a`.
    pub fn mul_last(&mut self, a: Var, v: Var) -> Result<Var> {
        let c = self.last_dim_check(a, v, "mul_last")?;
        let vv = self.value(v).data().to_vec();
        let mut out = self.value(a).clone();
        for (k, x) in out.data_mut().iter_mut().enumerate() {
            *x *= vv[k % c];
        }
        Ok(self.push(out, Op::MulLast(a, v)))
    }

    /// Columns `start..start+width` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Result<Var> {
        let v = self.value(a);
        let (r, c) = v.dims2()?;
        if start + width > c {
            return Err(Error::dim("slice_cols", v.shape(), &[start, width]));
        }
        let d = v.data();
        let mut out = Vec::with_capacity(r * width);
        for i in 0..r {
            out.extend_from_slice(&d[i * c + start..i * c + start + width]);
        }
        let out = Tensor::new(&[r, width], out)?;
        Ok(self.push(out, Op::SliceCols { input: a, start }))
    }

    /// Cross-correlation of an `h×w×c` input with `kh×kw×c×c'` kernels.
    pub fn conv2d(&mut self, input: Var, kernels: Var, stride: usize, padding: usize) -> Result<Var> {
        if stride == 0 {
            return Err(Error::Config("conv2d stride must be positive".into()));
        }
        let si = self.shape(input);
        let sk = self.shape(kernels);
        let (h, w, c) = match si[..] {
            [h, w, c] => (h, w, c),
            _ => return Err(Error::dim("conv2d input (h×w×c)", si, sk)),
        };
        let (kh, kw, kc, c_out) = match sk[..] {
            [a, b, c, d] => (a, b, c, d),
            _ => return Err(Error::dim("conv2d kernels (kh×kw×c×c')", si, sk)),
        };
        if kc != c {
            return Err(Error::dim("conv2d channels", si, sk));
        }
        if kh > h + 2 * padding || kw > w + 2 * padding {
            return Err(Error::Config(format!(
                "conv2d kernel {kh}×{kw} does not fit input {h}×{w} with padding {padding}"
            )));
        }
        let geom = ConvGeom {
            h,
            w,
            c,
            kh,
            kw,
            c_out,
            stride,
            padding,
            out_h: (h + 2 * padding - kh) / stride + 1,
            out_w: (w + 2 * padding - kw) / stride + 1,
        };
        let cols = kernels::im2col(self.value(input).data(), &geom);
        let mut out = vec![T::zero(); geom.positions() * c_out];
        kernels::matmul_acc(
            &cols,
            self.value(kernels).data(),
            &mut out,
            geom.positions(),
            geom.patch_len(),
            c_out,
        );
        let out = Tensor::new(&[geom.out_h, geom.out_w, c_out], out)?;
        Ok(self.push(out, Op::Conv2d { input, kernels, geom }))
    }

    /// Reverse sweep seeded with 1 at the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let seed = self.value(loss);
        if seed.len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar seed, got shape {:?}",
                seed.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(seed.shape(), T::one()));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.backward_node(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn backward_node(&self, idx: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let node = &self.nodes[idx];
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let (m, n) = av.dims2()?;
                let p = bv.shape()[1];
                let mut da = vec![T::zero(); m * n];
                kernels::matmul_a_bt_acc(g.data(), bv.data(), &mut da, m, p, n);
                if self.fault == Some(Fault::MatmulBackward) {
                    da.iter_mut().for_each(|x| *x *= T::of(1.5));
                }
                let mut db = vec![T::zero(); n * p];
                kernels::matmul_at_b_acc(av.data(), g.data(), &mut db, m, n, p);
                accumulate(grads, *a, Tensor::new(&[m, n], da)?);
                accumulate(grads, *b, Tensor::new(&[n, p], db)?);
            }
            Op::Transpose(a) => accumulate(grads, *a, g.transpose()?),
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                accumulate(grads, *a, g.zip_map(self.value(*b), |x, y| x * y)?);
                accumulate(grads, *b, g.zip_map(self.value(*a), |x, y| x * y)?);
            }
            Op::Scale(a, s) => {
                let s = *s;
                accumulate(grads, *a, g.map(|x| x * s));
            }
            Op::AddScalar(a) => accumulate(grads, *a, g.clone()),
            Op::Exp(a) => accumulate(grads, *a, g.zip_map(out, |x, y| x * y)?),
            Op::Relu(a) => accumulate(
                grads,
                *a,
                g.zip_map(self.value(*a), |x, y| if y > T::zero() { x } else { T::zero() })?,
            ),
            Op::Square(a) => accumulate(
                grads,
                *a,
                g.zip_map(self.value(*a), |x, y| T::of(2.0) * x * y)?,
            ),
            Op::Sum(a) => {
                let s = g.data()[0];
                accumulate(grads, *a, Tensor::full(self.shape(*a), s));
            }
            Op::Mean(a) => {
                let n = T::of(self.value(*a).len() as f64);
                let s = g.data()[0] / n;
                accumulate(grads, *a, Tensor::full(self.shape(*a), s));
            }
            Op::Reshape(a) => accumulate(grads, *a, g.clone().reshaped(self.shape(*a))?),
            Op::SoftmaxRows(a) => {
                let (r, c) = out.dims2()?;
                let s = out.data();
                let gd = g.data();
                let mut da = vec![T::zero(); r * c];
                for i in 0..r {
                    let row = i * c..(i + 1) * c;
                    let dot: T = s[row.clone()].iter().zip(&gd[row.clone()]).map(|(&x, &y)| x * y).sum();
                    for k in row {
                        da[k] = s[k] * (gd[k] - dot);
                    }
                }
                accumulate(grads, *a, Tensor::new(&[r, c], da)?);
            }
            Op::AddLast(a, v) => {
                let c = self.value(*v).len();
                let mut dv = vec![T::zero(); c];
                for (k, &x) in g.data().iter().enumerate() {
                    dv[k % c] += x;
                }
                accumulate(grads, *a, g.clone());
                accumulate(grads, *v, Tensor::new(&[c], dv)?);
            }
            Op::MulLast(a, v) => {
                let vv = self.value(*v).data();
                let av = self.value(*a).data();
                let c = vv.len();
                let mut da = g.clone();
                let mut dv = vec![T::zero(); c];
                for (k, x) in da.data_mut().iter_mut().enumerate() {
                    dv[k % c] += *x * av[k];
                    *x *= vv[k % c];
                }
                accumulate(grads, *a, da);
                accumulate(grads, *v, Tensor::new(&[c], dv)?);
            }
            Op::SliceCols { input, start } => {
                let (r, c) = self.value(*input).dims2()?;
                let width = g.shape()[1];
                let mut da = Tensor::zeros(&[r, c]);
                let d = da.data_mut();
                for i in 0..r {
                    d[i * c + start..i * c + start + width]
                        .copy_from_slice(&g.data()[i * width..(i + 1) * width]);
                }
                accumulate(grads, *input, da);
            }
            Op::Conv2d { input, kernels: kv, geom } => {
                let kern = self.value(*kv);
                let plen = geom.patch_len();
                let pos = geom.positions();
                let mut dcols = vec![T::zero(); pos * plen];
                kernels::matmul_a_bt_acc(g.data(), kern.data(), &mut dcols, pos, geom.c_out, plen);
                let dinput = kernels::col2im(&dcols, geom);
                let cols = kernels::im2col(self.value(*input).data(), geom);
                let mut dk = vec![T::zero(); plen * geom.c_out];
                kernels::matmul_at_b_acc(&cols, g.data(), &mut dk, pos, plen, geom.c_out);
                accumulate(grads, *input, Tensor::new(self.shape(*input), dinput)?);
                accumulate(grads, *kv, Tensor::new(kern.shape(), dk)?);
            }
            Op::Custom { inputs, op } => {
                let vals: Vec<&Tensor<T>> = inputs.iter().map(|v| self.value(*v)).collect();
                let gs = op.backward(&vals, out, g);
                if gs.len() != inputs.len() {
                    return Err(Error::Usage(format!(
                        "custom op {} returned {} gradients for {} inputs",
                        op.name(),
                        gs.len(),
                        inputs.len()
                    )));
                }
                for (v, gi) in inputs.iter().zip(gs) {
                    if let Some(gi) = gi {
                        if gi.shape() != self.shape(*v) {
                            return Err(Error::dim(op.name(), gi.shape(), self.shape(*v)));
                        }
                        accumulate(grads, *v, gi);
                    }
                }
            }
        }
        Ok(())
    }
}
