//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Tape`] owns every value computed during a forward pass together with
//! the operation that produced it. Nodes are appended in evaluation order, so
//! the tape is always topologically sorted and [`Tape::backward`] is a single
//! reverse sweep that visits each node once.
//!
//! Only the operations the simulator, controller and loss need are provided.
//! Every op validates shapes and fails with [`Error::NonFinite`] as soon as a
//! NaN or infinity appears.
//!
//! ```
//! use rdsteer::autodiff::Tape;
//! use rdsteer::Tensor;
//!
//! let mut tape = Tape::<f64>::new();
//! let x = tape.leaf(Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap());
//! let sq = tape.mul(x, x).unwrap();
//! let loss = tape.sum(sq).unwrap();
//! tape.backward(loss).unwrap();
//! assert_eq!(tape.grad(x).unwrap().data(), &[2.0, 4.0, 6.0]);
//! ```

pub(crate) mod fft;
pub(crate) mod kernels;

use std::sync::Arc;

use rustfft::num_complex::Complex;

pub use fft::Fft2;
use kernels::ConvDims;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T: Real> {
    Leaf,
    Constant,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, T),
    Offset(Var),
    Abs(Var),
    Tanh(Var),
    Relu(Var),
    Clamp(Var, T, T),
    Sum(Var),
    Mean(Var),
    AddN(Vec<Var>),
    Stencil(Var, [T; 9]),
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Var,
    },
    Concat(Vec<Var>),
    Select(Var, usize),
    PowerSpectrum {
        input: Var,
        plan: Arc<Fft2<T>>,
        spectrum: Vec<Complex<T>>,
    },
    WeightedSum(Var, Arc<Vec<T>>),
}

struct Node<T: Real> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Recorded computation graph plus gradient accumulators for its leaves.
pub struct Tape<T: Real> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn check_finite<T: Real>(op: &'static str, data: &[T]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { op, step: None })
    }
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d = *d + *s;
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers a differentiable input.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push_raw(value, Op::Leaf, true)
    }

    /// Registers an input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_raw(value, Op::Constant, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Scalar value of a single-element node.
    pub fn item(&self, v: Var) -> Result<T> {
        self.value(v).item()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Clears all leaf gradient accumulators.
    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    fn push_raw(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn push(
        &mut self,
        name: &'static str,
        shape: Vec<usize>,
        data: Vec<T>,
        op: Op<T>,
        parents: &[Var],
    ) -> Result<Var> {
        check_finite(name, &data)?;
        let needs_grad = parents.iter().any(|p| self.nodes[p.0].needs_grad);
        Ok(self.push_raw(Tensor::from_parts(shape, data), op, needs_grad))
    }

    fn same_shape(&self, name: &str, a: Var, b: Var) -> Result<Vec<usize>> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::config(format!(
                "{name}: shape mismatch {sa:?} vs {sb:?}"
            )));
        }
        Ok(sa.to_vec())
    }

    fn zip_with(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        op: Op<T>,
        f: impl Fn(T, T) -> T,
    ) -> Result<Var> {
        let shape = self.same_shape(name, a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        self.push(name, shape, data, op, &[a, b])
    }

    fn map(&mut self, name: &'static str, a: Var, op: Op<T>, f: impl Fn(T) -> T) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let data = self.value(a).data().iter().map(|&x| f(x)).collect();
        self.push(name, shape, data, op, &[a])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("div", a, b, Op::Div(a, b), |x, y| x / y)
    }

    /// `c * a` for a constant `c`.
    pub fn scale(&mut self, a: Var, c: T) -> Result<Var> {
        self.map("scale", a, Op::Scale(a, c), |x| x * c)
    }

    /// `a + c` for a constant `c`.
    pub fn offset(&mut self, a: Var, c: T) -> Result<Var> {
        self.map("offset", a, Op::Offset(a), |x| x + c)
    }

    /// Absolute value; the subgradient at zero is taken as zero.
    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.map("abs", a, Op::Abs(a), |x| x.abs())
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.mul(a, a)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.map("tanh", a, Op::Tanh(a), |x| x.tanh())
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.map("relu", a, Op::Relu(a), |x| x.max(T::zero()))
    }

    /// Clamps to `[lo, hi]`. Gradient is 1 strictly inside the interval and
    /// 0 where the value saturates.
    pub fn clamp(&mut self, a: Var, lo: T, hi: T) -> Result<Var> {
        if !(lo < hi) {
            return Err(Error::config(format!(
                "clamp: lo ({lo}) must be < hi ({hi})"
            )));
        }
        self.map("clamp", a, Op::Clamp(a, lo, hi), |x| x.max(lo).min(hi))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).sum();
        self.push("sum", Vec::new(), vec![s], Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let m = self.value(a).mean();
        self.push("mean", Vec::new(), vec![m], Op::Mean(a), &[a])
    }

    /// Elementwise sum of equally shaped nodes.
    pub fn add_n(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs
            .first()
            .ok_or_else(|| Error::Usage("add_n of nothing".into()))?;
        let shape = self.shape(first).to_vec();
        let mut data = vec![T::zero(); self.value(first).len()];
        for &x in xs {
            self.same_shape("add_n", first, x)?;
            add_into(&mut data, self.value(x).data());
        }
        self.push("add_n", shape, data, Op::AddN(xs.to_vec()), xs)
    }

    /// Mean of equally shaped nodes.
    pub fn mean_n(&mut self, xs: &[Var]) -> Result<Var> {
        let s = self.add_n(xs)?;
        self.scale(s, T::one() / T::lit(xs.len() as f64))
    }

    fn spatial(&self, name: &str, a: Var) -> Result<(usize, usize, usize)> {
        let s = self.shape(a);
        match *s {
            [h, w] if h > 0 && w > 0 => Ok((1, h, w)),
            [c, h, w] if h > 0 && w > 0 => Ok((c, h, w)),
            _ => Err(Error::config(format!(
                "{name}: expected [H,W] or [C,H,W], got {s:?}"
            ))),
        }
    }

    /// Fixed 3x3 stencil (row-major weights) on each plane, reflect padded.
    pub fn stencil3x3(&mut self, a: Var, weights: [T; 9]) -> Result<Var> {
        let (c, h, w) = self.spatial("stencil3x3", a)?;
        let data = kernels::stencil_forward(self.value(a).data(), &weights, c, h, w);
        let shape = self.shape(a).to_vec();
        self.push("stencil3x3", shape, data, Op::Stencil(a, weights), &[a])
    }

    /// 3x3 "same" cross-correlation with reflect padding.
    /// `input: [C_in,H,W]`, `kernel: [C_out,C_in,3,3]`, `bias: [C_out]`.
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var) -> Result<Var> {
        let dims = self.conv_dims(input, kernel, bias)?;
        let data = kernels::conv2d_forward(
            self.value(input).data(),
            self.value(kernel).data(),
            self.value(bias).data(),
            dims,
        );
        self.push(
            "conv2d",
            vec![dims.c_out, dims.h, dims.w],
            data,
            Op::Conv2d {
                input,
                kernel,
                bias,
            },
            &[input, kernel, bias],
        )
    }

    fn conv_dims(&self, input: Var, kernel: Var, bias: Var) -> Result<ConvDims> {
        let (si, sk, sb) = (self.shape(input), self.shape(kernel), self.shape(bias));
        let (c_in, h, w) = match *si {
            [c, h, w] => (c, h, w),
            _ => {
                return Err(Error::config(format!(
                    "conv2d: input must be [C,H,W], got {si:?}"
                )))
            }
        };
        let c_out = match *sk {
            [co, ci, 3, 3] if ci == c_in => co,
            _ => {
                return Err(Error::config(format!(
                    "conv2d: kernel must be [C_out,{c_in},3,3], got {sk:?}"
                )))
            }
        };
        if sb != [c_out] {
            return Err(Error::config(format!(
                "conv2d: bias must be [{c_out}], got {sb:?}"
            )));
        }
        if h == 0 || w == 0 {
            return Err(Error::config("conv2d: empty spatial extent"));
        }
        Ok(ConvDims { c_in, c_out, h, w })
    }

    /// Stacks equally shaped nodes along a new leading axis.
    pub fn stack(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs
            .first()
            .ok_or_else(|| Error::Usage("stack of nothing".into()))?;
        let mut shape = vec![xs.len()];
        shape.extend_from_slice(self.shape(first));
        let mut data = Vec::with_capacity(shape.iter().product());
        for &x in xs {
            self.same_shape("stack", first, x)?;
            data.extend_from_slice(self.value(x).data());
        }
        self.push("stack", shape, data, Op::Concat(xs.to_vec()), xs)
    }

    /// Picks entry `i` of the leading axis.
    pub fn select(&mut self, a: Var, i: usize) -> Result<Var> {
        let s = self.shape(a);
        if s.is_empty() || i >= s[0] {
            return Err(Error::config(format!(
                "select: index {i} out of range for {s:?}"
            )));
        }
        let inner: usize = s[1..].iter().product();
        let shape = s[1..].to_vec();
        let data = self.value(a).data()[i * inner..(i + 1) * inner].to_vec();
        self.push("select", shape, data, Op::Select(a, i), &[a])
    }

    /// DC-free power spectrum of an `[H,W]` field:
    /// `P = |DFT2(f - mean f)|^2 / (H*W)^2`, with `P[0,0] = 0`.
    pub fn power_spectrum(&mut self, a: Var, plan: &Arc<Fft2<T>>) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 2 || (s[0], s[1]) != plan.dims() {
            return Err(Error::config(format!(
                "power_spectrum: field {s:?} does not match plan {:?}",
                plan.dims()
            )));
        }
        let x = self.value(a);
        let mean = x.mean();
        let centered: Vec<T> = x.data().iter().map(|&v| v - mean).collect();
        let mut spectrum = plan.forward_real(&centered);
        spectrum[0] = Complex::new(T::zero(), T::zero());
        let n = T::lit(centered.len() as f64);
        let norm = T::one() / (n * n);
        let data = spectrum.iter().map(|c| c.norm_sqr() * norm).collect();
        self.push(
            "power_spectrum",
            s,
            data,
            Op::PowerSpectrum {
                input: a,
                plan: Arc::clone(plan),
                spectrum,
            },
            &[a],
        )
    }

    /// `sum_i weights[i] * a[i]`, a scalar.
    pub fn weighted_sum(&mut self, a: Var, weights: &Arc<Vec<T>>) -> Result<Var> {
        if weights.len() != self.value(a).len() {
            return Err(Error::config(format!(
                "weighted_sum: {} weights for {} elements",
                weights.len(),
                self.value(a).len()
            )));
        }
        let s = self
            .value(a)
            .data()
            .iter()
            .zip(weights.iter())
            .fold(T::zero(), |acc, (&x, &m)| acc + x * m);
        self.push(
            "weighted_sum",
            Vec::new(),
            vec![s],
            Op::WeightedSum(a, Arc::clone(weights)),
            &[a],
        )
    }

    /// Reverse sweep from a scalar `loss`. Leaf gradients are *added* to any
    /// existing accumulators; call [`Tape::zero_grad`] between passes to reset.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::Usage("backward on an empty tape".into()));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut adj: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        adj[loss.0] = Some(vec![T::one()]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            check_finite("backward", &g)?;
            match &node.op {
                Op::Leaf => match &mut self.grads[idx] {
                    Some(acc) => add_into(acc.data_mut(), &g),
                    slot => *slot = Some(Tensor::from_parts(node.value.shape().to_vec(), g)),
                },
                Op::Constant => {}
                op => self.backprop_op(op, &node.value, &g, &mut adj),
            }
        }
        Ok(())
    }

    fn backprop_op(&self, op: &Op<T>, out: &Tensor<T>, g: &[T], adj: &mut [Option<Vec<T>>]) {
        let nodes = &self.nodes;
        let val = |v: &Var| nodes[v.0].value.data();
        // Accumulate into a parent's adjoint through `f(slot)`, skipping
        // parents that cannot reach a leaf.
        let mut acc = |v: &Var, f: &mut dyn FnMut(&mut [T])| {
            let p = &nodes[v.0];
            if p.needs_grad {
                let slot = adj[v.0].get_or_insert_with(|| vec![T::zero(); p.value.len()]);
                f(slot);
            }
        };
        match op {
            Op::Leaf | Op::Constant => unreachable!(),
            Op::Add(a, b) => {
                acc(a, &mut |s| add_into(s, g));
                acc(b, &mut |s| add_into(s, g));
            }
            Op::Sub(a, b) => {
                acc(a, &mut |s| add_into(s, g));
                acc(b, &mut |s| {
                    s.iter_mut().zip(g).for_each(|(d, &gi)| *d = *d - gi)
                });
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(a), val(b));
                acc(a, &mut |s| {
                    for i in 0..s.len() {
                        s[i] = s[i] + g[i] * vb[i];
                    }
                });
                acc(b, &mut |s| {
                    for i in 0..s.len() {
                        s[i] = s[i] + g[i] * va[i];
                    }
                });
            }
            Op::Div(a, b) => {
                let (va, vb) = (val(a), val(b));
                acc(a, &mut |s| {
                    for i in 0..s.len() {
                        s[i] = s[i] + g[i] / vb[i];
                    }
                });
                acc(b, &mut |s| {
                    for i in 0..s.len() {
                        s[i] = s[i] - g[i] * va[i] / (vb[i] * vb[i]);
                    }
                });
            }
            Op::Scale(a, c) => acc(a, &mut |s| {
                s.iter_mut().zip(g).for_each(|(d, &gi)| *d = *d + gi * *c)
            }),
            Op::Offset(a) => acc(a, &mut |s| add_into(s, g)),
            Op::Abs(a) => {
                let va = val(a);
                acc(a, &mut |s| {
                    for i in 0..s.len() {
                        let sign = if va[i] > T::zero() {
                            T::one()
                        } else if va[i] < T::zero() {
                            -T::one()
                        } else {
                            T::zero()
                        };
                        s[i] = s[i] + g[i] * sign;
                    }
                })
            }
            Op::Tanh(a) => {
                let y = out.data();
                acc(a, &mut |s| {
                    for i in 0..s.len() {
                        s[i] = s[i] + g[i] * (T::one() - y[i] * y[i]);
                    }
                })
            }
            Op::Relu(a) => {
                let va = val(a);
                acc(a, &mut |s| {
                    for i in 0..s.len() {
                        if va[i] > T::zero() {
                            s[i] = s[i] + g[i];
                        }
                    }
                })
            }
            Op::Clamp(a, lo, hi) => {
                let va = val(a);
                acc(a, &mut |s| {
                    for i in 0..s.len() {
                        if va[i] > *lo && va[i] < *hi {
                            s[i] = s[i] + g[i];
                        }
                    }
                })
            }
            Op::Sum(a) => acc(a, &mut |s| s.iter_mut().for_each(|d| *d = *d + g[0])),
            Op::Mean(a) => {
                let gi = g[0] / T::lit(val(a).len() as f64);
                acc(a, &mut |s| s.iter_mut().for_each(|d| *d = *d + gi))
            }
            Op::AddN(xs) => {
                for x in xs {
                    acc(x, &mut |s| add_into(s, g));
                }
            }
            Op::Stencil(a, weights) => {
                let (planes, h, w) = spatial_dims(nodes[a.0].value.shape());
                acc(a, &mut |s| {
                    kernels::stencil_adjoint(g, weights, planes, h, w, s)
                });
            }
            Op::Conv2d {
                input,
                kernel,
                bias,
            } => {
                let si = nodes[input.0].value.shape();
                let dims = ConvDims {
                    c_in: si[0],
                    c_out: nodes[bias.0].value.len(),
                    h: si[1],
                    w: si[2],
                };
                let (xi, xk) = (val(input), val(kernel));
                acc(input, &mut |s| {
                    kernels::conv2d_adjoint(xi, xk, g, dims, Some(s), None, None)
                });
                acc(kernel, &mut |s| {
                    kernels::conv2d_adjoint(xi, xk, g, dims, None, Some(s), None)
                });
                acc(bias, &mut |s| {
                    kernels::conv2d_adjoint(xi, xk, g, dims, None, None, Some(s))
                });
            }
            Op::Concat(xs) => {
                let inner = g.len() / xs.len();
                for (k, x) in xs.iter().enumerate() {
                    acc(x, &mut |s| add_into(s, &g[k * inner..(k + 1) * inner]));
                }
            }
            Op::Select(a, i) => {
                let inner = g.len();
                acc(a, &mut |s| {
                    add_into(&mut s[*i * inner..(*i + 1) * inner], g)
                });
            }
            Op::PowerSpectrum {
                input,
                plan,
                spectrum,
            } => {
                // d/dx_j sum_k G_k |F_k|^2 / N^2 = (2/N^2) Re( DFT(G * conj F) )_j,
                // then project out the mean (the input was centred).
                let n = T::lit(g.len() as f64);
                let mut z: Vec<Complex<T>> = spectrum
                    .iter()
                    .zip(g)
                    .map(|(f, &gk)| f.conj() * gk)
                    .collect();
                z[0] = Complex::new(T::zero(), T::zero());
                plan.forward(&mut z);
                let scale = T::lit(2.0) / (n * n);
                let grad: Vec<T> = z.iter().map(|c| c.re * scale).collect();
                let gmean = grad.iter().copied().sum::<T>() / n;
                acc(input, &mut |s| {
                    for i in 0..s.len() {
                        s[i] = s[i] + grad[i] - gmean;
                    }
                })
            }
            Op::WeightedSum(a, weights) => acc(a, &mut |s| {
                for i in 0..s.len() {
                    s[i] = s[i] + g[0] * weights[i];
                }
            }),
        }
    }
}

fn spatial_dims(shape: &[usize]) -> (usize, usize, usize) {
    match *shape {
        [h, w] => (1, h, w),
        [c, h, w] => (c, h, w),
        _ => unreachable!("validated at record time"),
    }
}
