//! Recording tape and differentiable tensor handles.
//!
//! A [`Tape`] owns every intermediate value of one computation as an
//! append-only node list; node inputs always precede the node, so a single
//! reverse sweep implements backpropagation. The sweep emits gradients as
//! *new tape nodes* built from the same operation set, which makes gradients
//! themselves differentiable: calling backward on a function of a gradient
//! (the gradient-penalty term) is just a second sweep over the grown tape.

use std::cell::RefCell;
use std::rc::Rc;

use super::kernels;
use super::{Real, Tensor, TensorError};

/// Recorded operation. Inputs are node indices into the owning tape.
#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    PowConst(usize, f64),
    Sqrt(usize),
    /// Square root whose derivative at exactly zero is taken as zero.
    /// Used for batch-statistic roots, where a zero-variance entry is a
    /// legitimate value and must not poison the backward pass.
    SqrtSafe(usize),
    /// 1/x with the convention 0 at x == 0 (closes SqrtSafe under
    /// differentiation).
    RecipOrZero(usize),
    LeakyRelu(usize, f64),
    /// gy * (x >= 0 ? 1 : slope); the backward rule of LeakyRelu, recorded
    /// as its own primitive so it can be differentiated again.
    LeakyReluGrad {
        x: usize,
        gy: usize,
        slope: f64,
    },
    ReduceSum(usize),
    Broadcast(usize),
    Reshape(usize),
    ConcatChannels(usize, usize),
    SliceChannels {
        x: usize,
        start: usize,
        len: usize,
    },
    PadChannels {
        x: usize,
        before: usize,
    },
    Upsample2x(usize),
    DownsampleAvg2x(usize),
    ConvFwd {
        x: usize,
        w: usize,
        pad: usize,
    },
    ConvDx {
        g: usize,
        w: usize,
        pad: usize,
    },
    ConvDw {
        x: usize,
        g: usize,
        pad: usize,
    },
    AddBias {
        x: usize,
        b: usize,
    },
}

fn op_inputs(op: &Op, buf: &mut Vec<usize>) {
    buf.clear();
    match *op {
        Op::Leaf => {}
        Op::Add(a, b)
        | Op::Sub(a, b)
        | Op::Mul(a, b)
        | Op::Div(a, b)
        | Op::ConcatChannels(a, b) => {
            buf.push(a);
            buf.push(b);
        }
        Op::Scale(a, _)
        | Op::AddScalar(a)
        | Op::PowConst(a, _)
        | Op::Sqrt(a)
        | Op::SqrtSafe(a)
        | Op::RecipOrZero(a)
        | Op::LeakyRelu(a, _)
        | Op::Broadcast(a)
        | Op::Reshape(a)
        | Op::Upsample2x(a)
        | Op::DownsampleAvg2x(a) => buf.push(a),
        Op::LeakyReluGrad { x, gy, .. } => {
            buf.push(x);
            buf.push(gy);
        }
        Op::ReduceSum(x) | Op::SliceChannels { x, .. } | Op::PadChannels { x, .. } => {
            buf.push(x)
        }
        Op::ConvFwd { x, w, .. } => {
            buf.push(x);
            buf.push(w);
        }
        Op::ConvDx { g, w, .. } => {
            buf.push(g);
            buf.push(w);
        }
        Op::ConvDw { x, g, .. } => {
            buf.push(x);
            buf.push(g);
        }
        Op::AddBias { x, b } => {
            buf.push(x);
            buf.push(b);
        }
    }
}

struct Node<E> {
    value: Rc<Tensor<E>>,
    op: Op,
    requires_grad: bool,
}

struct TapeInner<E> {
    nodes: Vec<Node<E>>,
}

/// Recording graph for one forward/backward computation.
#[derive(Clone)]
pub struct Tape<E: Real> {
    inner: Rc<RefCell<TapeInner<E>>>,
}

impl<E: Real> Default for Tape<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Real> Tape<E> {
    pub fn new() -> Self {
        Tape {
            inner: Rc::new(RefCell::new(TapeInner { nodes: Vec::new() })),
        }
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records `value` as a leaf. With `requires_grad`, gradients flow into
    /// it; otherwise it acts as a constant.
    pub fn leaf(&self, value: &Tensor<E>, requires_grad: bool) -> Result<Var<E>, TensorError> {
        self.leaf_owned(value.clone(), requires_grad)
    }

    pub fn leaf_owned(
        &self,
        value: Tensor<E>,
        requires_grad: bool,
    ) -> Result<Var<E>, TensorError> {
        self.push("leaf", Op::Leaf, value, requires_grad)
    }

    fn push(
        &self,
        op_name: &'static str,
        op: Op,
        value: Tensor<E>,
        requires_grad: bool,
    ) -> Result<Var<E>, TensorError> {
        if !value.all_finite() {
            return Err(TensorError::NonFinite { op: op_name });
        }
        let mut inner = self.inner.borrow_mut();
        let id = inner.nodes.len();
        inner.nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
        });
        Ok(Var {
            tape: self.clone(),
            id,
        })
    }

    fn value(&self, id: usize) -> Rc<Tensor<E>> {
        Rc::clone(&self.inner.borrow().nodes[id].value)
    }

    fn requires_grad(&self, id: usize) -> bool {
        self.inner.borrow().nodes[id].requires_grad
    }

    fn same_tape(&self, other: &Tape<E>) -> Result<(), TensorError> {
        if Rc::ptr_eq(&self.inner, &other.inner) {
            Ok(())
        } else {
            Err(TensorError::CrossTape)
        }
    }
}

/// Handle to one tape node.
#[derive(Clone)]
pub struct Var<E: Real> {
    tape: Tape<E>,
    id: usize,
}

/// Gradients produced by one backward sweep, addressable by the variable
/// they belong to. Gradients are tape nodes and can be differentiated again.
pub struct GradMap<E: Real> {
    tape: Tape<E>,
    grads: Vec<Option<Var<E>>>,
}

impl<E: Real> GradMap<E> {
    /// Gradient node for `v`, if any reached it.
    pub fn get(&self, v: &Var<E>) -> Option<Var<E>> {
        self.tape.same_tape(&v.tape).ok()?;
        self.grads.get(v.id).and_then(|g| g.clone())
    }

    /// Gradient values for `v` as a plain tensor.
    pub fn get_tensor(&self, v: &Var<E>) -> Option<Tensor<E>> {
        self.get(v).map(|g| g.to_tensor())
    }
}

impl<E: Real> Var<E> {
    pub fn tape(&self) -> &Tape<E> {
        &self.tape
    }

    /// Shared view of the node's value.
    pub fn tensor(&self) -> Rc<Tensor<E>> {
        self.tape.value(self.id)
    }

    /// Detached copy of the node's value.
    pub fn to_tensor(&self) -> Tensor<E> {
        (*self.tensor()).clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tensor().shape().to_vec()
    }

    pub fn numel(&self) -> usize {
        self.tensor().numel()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad(self.id)
    }

    pub fn scalar(&self) -> Result<E, TensorError> {
        self.tensor().scalar_value()
    }

    fn unary(
        &self,
        name: &'static str,
        op: Op,
        value: Tensor<E>,
    ) -> Result<Var<E>, TensorError> {
        let rg = self.requires_grad();
        self.tape.push(name, op, value, rg)
    }

    fn binary(
        &self,
        other: &Var<E>,
        name: &'static str,
        op: Op,
        value: Tensor<E>,
    ) -> Result<Var<E>, TensorError> {
        let rg = self.requires_grad() || other.requires_grad();
        self.tape.push(name, op, value, rg)
    }

    fn zip_same_shape(
        &self,
        other: &Var<E>,
        name: &'static str,
        f: impl Fn(E, E) -> E,
    ) -> Result<Tensor<E>, TensorError> {
        self.tape.same_tape(&other.tape)?;
        let a = self.tensor();
        let b = other.tensor();
        if a.shape() != b.shape() {
            return Err(TensorError::ShapeMismatch {
                op: name,
                detail: format!("{:?} vs {:?}", a.shape(), b.shape()),
            });
        }
        let data = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(a.shape().to_vec(), data)
    }

    pub fn add(&self, other: &Var<E>) -> Result<Var<E>, TensorError> {
        let v = self.zip_same_shape(other, "add", |a, b| a + b)?;
        self.binary(other, "add", Op::Add(self.id, other.id), v)
    }

    pub fn sub(&self, other: &Var<E>) -> Result<Var<E>, TensorError> {
        let v = self.zip_same_shape(other, "sub", |a, b| a - b)?;
        self.binary(other, "sub", Op::Sub(self.id, other.id), v)
    }

    pub fn mul(&self, other: &Var<E>) -> Result<Var<E>, TensorError> {
        let v = self.zip_same_shape(other, "mul", |a, b| a * b)?;
        self.binary(other, "mul", Op::Mul(self.id, other.id), v)
    }

    /// Elementwise division. A zero divisor produces a non-finite result and
    /// is reported as an error; callers wanting an epsilon add it themselves.
    pub fn div(&self, other: &Var<E>) -> Result<Var<E>, TensorError> {
        let v = self.zip_same_shape(other, "div", |a, b| a / b)?;
        self.binary(other, "div", Op::Div(self.id, other.id), v)
    }

    pub fn scale(&self, c: f64) -> Result<Var<E>, TensorError> {
        let k = E::from_f64(c);
        let t = self.tensor();
        let v = Tensor::new(t.shape().to_vec(), t.data().iter().map(|&x| x * k).collect())?;
        self.unary("scale", Op::Scale(self.id, c), v)
    }

    pub fn neg(&self) -> Result<Var<E>, TensorError> {
        self.scale(-1.0)
    }

    pub fn add_scalar(&self, c: f64) -> Result<Var<E>, TensorError> {
        let k = E::from_f64(c);
        let t = self.tensor();
        let v = Tensor::new(t.shape().to_vec(), t.data().iter().map(|&x| x + k).collect())?;
        self.unary("add_scalar", Op::AddScalar(self.id), v)
    }

    pub fn powf_const(&self, p: f64) -> Result<Var<E>, TensorError> {
        let k = E::from_f64(p);
        let t = self.tensor();
        let v = Tensor::new(
            t.shape().to_vec(),
            t.data().iter().map(|&x| x.powf(k)).collect(),
        )?;
        self.unary("pow", Op::PowConst(self.id, p), v)
    }

    /// Square root; differentiating at an exact zero reports an error.
    pub fn sqrt(&self) -> Result<Var<E>, TensorError> {
        let t = self.tensor();
        let v = Tensor::new(
            t.shape().to_vec(),
            t.data().iter().map(|&x| x.sqrt()).collect(),
        )?;
        self.unary("sqrt", Op::Sqrt(self.id), v)
    }

    /// Square root whose gradient at an exact zero input is defined as zero.
    pub fn sqrt_safe(&self) -> Result<Var<E>, TensorError> {
        let t = self.tensor();
        let v = Tensor::new(
            t.shape().to_vec(),
            t.data().iter().map(|&x| x.sqrt()).collect(),
        )?;
        self.unary("sqrt_safe", Op::SqrtSafe(self.id), v)
    }

    fn recip_or_zero(&self) -> Result<Var<E>, TensorError> {
        let t = self.tensor();
        let v = Tensor::new(
            t.shape().to_vec(),
            t.data()
                .iter()
                .map(|&x| if x == E::ZERO { E::ZERO } else { E::ONE / x })
                .collect(),
        )?;
        self.unary("recip_or_zero", Op::RecipOrZero(self.id), v)
    }

    pub fn leaky_relu(&self, slope: f64) -> Result<Var<E>, TensorError> {
        if !(0.0..1.0).contains(&slope) || slope <= 0.0 {
            return Err(TensorError::InvalidArg {
                op: "leaky_relu",
                detail: format!("slope {slope} outside (0, 1)"),
            });
        }
        let k = E::from_f64(slope);
        let t = self.tensor();
        let v = Tensor::new(
            t.shape().to_vec(),
            t.data()
                .iter()
                .map(|&x| if x >= E::ZERO { x } else { x * k })
                .collect(),
        )?;
        self.unary("leaky_relu", Op::LeakyRelu(self.id, slope), v)
    }

    fn leaky_relu_grad(x: &Var<E>, gy: &Var<E>, slope: f64) -> Result<Var<E>, TensorError> {
        let k = E::from_f64(slope);
        let v = x.zip_same_shape(gy, "leaky_relu_grad", |xv, gv| {
            if xv >= E::ZERO {
                gv
            } else {
                gv * k
            }
        })?;
        // only the gy side is differentiable; the gate is constant a.e.
        let rg = gy.requires_grad();
        x.tape.push(
            "leaky_relu_grad",
            Op::LeakyReluGrad {
                x: x.id,
                gy: gy.id,
                slope,
            },
            v,
            rg,
        )
    }

    /// Keep-dims sum over `axes`.
    pub fn reduce_sum(&self, axes: &[usize]) -> Result<Var<E>, TensorError> {
        let v = kernels::reduce_sum(&self.tensor(), axes)?;
        self.unary("reduce_sum", Op::ReduceSum(self.id), v)
    }

    /// Keep-dims arithmetic mean over `axes`.
    pub fn reduce_mean(&self, axes: &[usize]) -> Result<Var<E>, TensorError> {
        let shape = self.shape();
        let sum = self.reduce_sum(axes)?;
        let count: usize = axes.iter().map(|&a| shape[a]).product();
        sum.scale(1.0 / count as f64)
    }

    pub fn sum_all(&self) -> Result<Var<E>, TensorError> {
        let rank = self.shape().len();
        self.reduce_sum(&(0..rank).collect::<Vec<_>>())
    }

    pub fn mean_all(&self) -> Result<Var<E>, TensorError> {
        let rank = self.shape().len();
        self.reduce_mean(&(0..rank).collect::<Vec<_>>())
    }

    pub fn broadcast_to(&self, target: &[usize]) -> Result<Var<E>, TensorError> {
        if self.shape() == target {
            return Ok(self.clone());
        }
        let v = kernels::broadcast_to(&self.tensor(), target)?;
        self.unary("broadcast_to", Op::Broadcast(self.id), v)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<E>, TensorError> {
        let v = self.tensor().reshaped(shape.to_vec())?;
        self.unary("reshape", Op::Reshape(self.id), v)
    }

    pub fn concat_channels(&self, other: &Var<E>) -> Result<Var<E>, TensorError> {
        self.tape.same_tape(&other.tape)?;
        let v = kernels::concat_channels(&self.tensor(), &other.tensor())?;
        self.binary(
            other,
            "concat_channels",
            Op::ConcatChannels(self.id, other.id),
            v,
        )
    }

    pub fn slice_channels(&self, start: usize, len: usize) -> Result<Var<E>, TensorError> {
        let v = kernels::slice_channels(&self.tensor(), start, len)?;
        self.unary(
            "slice_channels",
            Op::SliceChannels {
                x: self.id,
                start,
                len,
            },
            v,
        )
    }

    fn pad_channels(&self, before: usize, after: usize) -> Result<Var<E>, TensorError> {
        let v = kernels::pad_channels(&self.tensor(), before, after)?;
        self.unary(
            "pad_channels",
            Op::PadChannels {
                x: self.id,
                before,
            },
            v,
        )
    }

    pub fn upsample_nearest_2x(&self) -> Result<Var<E>, TensorError> {
        let v = kernels::upsample_nearest_2x(&self.tensor())?;
        self.unary("upsample_nearest_2x", Op::Upsample2x(self.id), v)
    }

    pub fn downsample_avg_2x(&self) -> Result<Var<E>, TensorError> {
        let v = kernels::downsample_avg_2x(&self.tensor())?;
        self.unary("downsample_avg_2x", Op::DownsampleAvg2x(self.id), v)
    }

    /// Stride-1 cross-correlation with `w: [k, k, c_in, c_out]`.
    pub fn conv2d(&self, w: &Var<E>, pad: usize) -> Result<Var<E>, TensorError> {
        self.tape.same_tape(&w.tape)?;
        let v = kernels::conv2d_fwd(&self.tensor(), &w.tensor(), pad)?;
        self.binary(
            w,
            "conv2d",
            Op::ConvFwd {
                x: self.id,
                w: w.id,
                pad,
            },
            v,
        )
    }

    /// Full-overlap transposed convolution: treats `self` as the output-side
    /// signal, `w: [k, k, c_out, c_in]`. Maps `1x1` latents to `k x k` maps.
    pub fn conv2d_transposed(&self, w: &Var<E>, pad: usize) -> Result<Var<E>, TensorError> {
        self.tape.same_tape(&w.tape)?;
        let v = kernels::conv2d_dx(&self.tensor(), &w.tensor(), pad)?;
        self.binary(
            w,
            "conv2d_transposed",
            Op::ConvDx {
                g: self.id,
                w: w.id,
                pad,
            },
            v,
        )
    }

    fn conv2d_wgrad(x: &Var<E>, g: &Var<E>, kernel: usize, pad: usize) -> Result<Var<E>, TensorError> {
        x.tape.same_tape(&g.tape)?;
        let v = kernels::conv2d_dw(&x.tensor(), &g.tensor(), kernel, pad)?;
        x.binary(
            g,
            "conv2d_wgrad",
            Op::ConvDw {
                x: x.id,
                g: g.id,
                pad,
            },
            v,
        )
    }

    /// Adds a rank-1 `[c]` bias over the channel axis of a rank-4 tensor.
    pub fn add_bias(&self, b: &Var<E>) -> Result<Var<E>, TensorError> {
        self.tape.same_tape(&b.tape)?;
        let x = self.tensor();
        let bias = b.tensor();
        if x.rank() != 4 || bias.rank() != 1 || bias.shape()[0] != x.shape()[3] {
            return Err(TensorError::ShapeMismatch {
                op: "add_bias",
                detail: format!("input {:?}, bias {:?}", x.shape(), bias.shape()),
            });
        }
        let c = bias.shape()[0];
        let mut data = Vec::with_capacity(x.numel());
        for (i, &v) in x.data().iter().enumerate() {
            data.push(v + bias.data()[i % c]);
        }
        let v = Tensor::new(x.shape().to_vec(), data)?;
        self.binary(
            b,
            "add_bias",
            Op::AddBias {
                x: self.id,
                b: b.id,
            },
            v,
        )
    }

    /// Backpropagates from this scalar into every differentiable node.
    pub fn backward(&self) -> Result<GradMap<E>, TensorError> {
        self.backward_impl(None)
    }

    /// Backpropagates only along paths that reach the `wrt` targets; used to
    /// keep the inner gradient-penalty pass from building unused weight
    /// gradients.
    pub fn backward_wrt(&self, wrt: &[&Var<E>]) -> Result<GradMap<E>, TensorError> {
        self.backward_impl(Some(wrt))
    }

    fn backward_impl(&self, wrt: Option<&[&Var<E>]>) -> Result<GradMap<E>, TensorError> {
        let loss_value = self.tensor();
        if loss_value.numel() != 1 {
            return Err(TensorError::NotScalar {
                numel: loss_value.numel(),
            });
        }
        let n = self.tape.len();
        let mut active = vec![false; n];
        match wrt {
            None => {
                let inner = self.tape.inner.borrow();
                for (i, node) in inner.nodes.iter().enumerate() {
                    active[i] = node.requires_grad;
                }
            }
            Some(targets) => {
                for t in targets {
                    self.tape.same_tape(&t.tape)?;
                    active[t.id] = true;
                }
                let inner = self.tape.inner.borrow();
                let mut buf = Vec::new();
                for i in 0..n {
                    if active[i] {
                        continue;
                    }
                    op_inputs(&inner.nodes[i].op, &mut buf);
                    active[i] = buf.iter().any(|&j| active[j]);
                }
            }
        }
        if !active[self.id] {
            return Err(TensorError::DetachedGraph);
        }

        let mut grads: Vec<Option<Var<E>>> = vec![None; n];
        let seed = Tensor::full(loss_value.shape().to_vec(), E::ONE);
        grads[self.id] = Some(self.tape.leaf_owned(seed, false)?);

        for i in (0..=self.id).rev() {
            let Some(gy) = grads[i].clone() else { continue };
            let op = self.tape.inner.borrow().nodes[i].op.clone();
            let out = Var {
                tape: self.tape.clone(),
                id: i,
            };
            self.apply_vjp(i, &op, &out, &gy, &active, &mut grads)?;
        }

        Ok(GradMap {
            tape: self.tape.clone(),
            grads,
        })
    }

    fn var(&self, id: usize) -> Var<E> {
        Var {
            tape: self.tape.clone(),
            id,
        }
    }

    fn apply_vjp(
        &self,
        _id: usize,
        op: &Op,
        out: &Var<E>,
        gy: &Var<E>,
        active: &[bool],
        grads: &mut Vec<Option<Var<E>>>,
    ) -> Result<(), TensorError> {
        let give = |grads: &mut Vec<Option<Var<E>>>,
                        target: usize,
                        g: Var<E>|
         -> Result<(), TensorError> {
            let slot = &mut grads[target];
            *slot = Some(match slot.take() {
                None => g,
                Some(prev) => prev.add(&g)?,
            });
            Ok(())
        };
        match *op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if active[a] {
                    give(grads, a, gy.clone())?;
                }
                if active[b] {
                    give(grads, b, gy.clone())?;
                }
            }
            Op::Sub(a, b) => {
                if active[a] {
                    give(grads, a, gy.clone())?;
                }
                if active[b] {
                    give(grads, b, gy.neg()?)?;
                }
            }
            Op::Mul(a, b) => {
                if active[a] {
                    give(grads, a, gy.mul(&self.var(b))?)?;
                }
                if active[b] {
                    give(grads, b, gy.mul(&self.var(a))?)?;
                }
            }
            Op::Div(a, b) => {
                let bv = self.var(b);
                if active[a] {
                    give(grads, a, gy.div(&bv)?)?;
                }
                if active[b] {
                    // d(a/b)/db = -a/b^2 = -out/b
                    give(grads, b, gy.mul(out)?.div(&bv)?.neg()?)?;
                }
            }
            Op::Scale(a, c) => {
                if active[a] {
                    give(grads, a, gy.scale(c)?)?;
                }
            }
            Op::AddScalar(a) => {
                if active[a] {
                    give(grads, a, gy.clone())?;
                }
            }
            Op::PowConst(a, p) => {
                if active[a] {
                    let g = self.var(a).powf_const(p - 1.0)?.scale(p)?.mul(gy)?;
                    give(grads, a, g)?;
                }
            }
            Op::Sqrt(a) => {
                if active[a] {
                    give(grads, a, gy.div(&out.scale(2.0)?)?)?;
                }
            }
            Op::SqrtSafe(a) => {
                if active[a] {
                    let g = gy.mul(&out.recip_or_zero()?.scale(0.5)?)?;
                    give(grads, a, g)?;
                }
            }
            Op::RecipOrZero(a) => {
                if active[a] {
                    // d(1/x)/dx = -1/x^2 = -out^2, and 0 stays 0
                    give(grads, a, gy.mul(&out.mul(out)?.neg()?)?)?;
                }
            }
            Op::LeakyRelu(a, slope) => {
                if active[a] {
                    give(grads, a, Var::leaky_relu_grad(&self.var(a), gy, slope)?)?;
                }
            }
            Op::LeakyReluGrad { x, gy: g, slope } => {
                // gradient w.r.t. the gate input is zero a.e.; only the gy
                // operand propagates
                if active[g] {
                    give(grads, g, Var::leaky_relu_grad(&self.var(x), gy, slope)?)?;
                }
            }
            Op::ReduceSum(x) => {
                if active[x] {
                    let shape = self.var(x).shape();
                    give(grads, x, gy.broadcast_to(&shape)?)?;
                }
            }
            Op::Broadcast(x) => {
                if active[x] {
                    let src = self.var(x).shape();
                    let dst = out.shape();
                    let axes: Vec<usize> = (0..src.len())
                        .filter(|&i| src[i] == 1 && dst[i] != 1)
                        .collect();
                    give(grads, x, gy.reduce_sum(&axes)?)?;
                }
            }
            Op::Reshape(x) => {
                if active[x] {
                    let shape = self.var(x).shape();
                    give(grads, x, gy.reshape(&shape)?)?;
                }
            }
            Op::ConcatChannels(a, b) => {
                let ca = self.var(a).shape()[3];
                let cb = self.var(b).shape()[3];
                if active[a] {
                    give(grads, a, gy.slice_channels(0, ca)?)?;
                }
                if active[b] {
                    give(grads, b, gy.slice_channels(ca, cb)?)?;
                }
            }
            Op::SliceChannels { x, start, len } => {
                if active[x] {
                    let c = self.var(x).shape()[3];
                    give(grads, x, gy.pad_channels(start, c - start - len)?)?;
                }
            }
            Op::PadChannels { x, before, .. } => {
                if active[x] {
                    let c = self.var(x).shape()[3];
                    give(grads, x, gy.slice_channels(before, c)?)?;
                }
            }
            Op::Upsample2x(x) => {
                if active[x] {
                    give(grads, x, gy.downsample_avg_2x()?.scale(4.0)?)?;
                }
            }
            Op::DownsampleAvg2x(x) => {
                if active[x] {
                    give(grads, x, gy.upsample_nearest_2x()?.scale(0.25)?)?;
                }
            }
            Op::ConvFwd { x, w, pad } => {
                if active[x] {
                    give(grads, x, gy.conv2d_transposed(&self.var(w), pad)?)?;
                }
                if active[w] {
                    let k = self.var(w).shape()[0];
                    give(grads, w, Var::conv2d_wgrad(&self.var(x), gy, k, pad)?)?;
                }
            }
            Op::ConvDx { g, w, pad } => {
                if active[g] {
                    give(grads, g, gy.conv2d(&self.var(w), pad)?)?;
                }
                if active[w] {
                    let k = self.var(w).shape()[0];
                    give(grads, w, Var::conv2d_wgrad(gy, &self.var(g), k, pad)?)?;
                }
            }
            Op::ConvDw { x, g, pad } => {
                if active[x] {
                    give(grads, x, self.var(g).conv2d_transposed(gy, pad)?)?;
                }
                if active[g] {
                    give(grads, g, self.var(x).conv2d(gy, pad)?)?;
                }
            }
            Op::AddBias { x, b } => {
                if active[x] {
                    give(grads, x, gy.clone())?;
                }
                if active[b] {
                    let c = self.var(b).shape()[0];
                    give(grads, b, gy.reduce_sum(&[0, 1, 2])?.reshape(&[c])?)?;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tensor(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn add_and_scalar_annihilator() {
        let tape = Tape::<f64>::new();
        let a = tape.leaf(&tensor(&[2], &[1.0, 2.0]), false).unwrap();
        let b = tape.leaf(&tensor(&[2], &[3.0, 4.0]), false).unwrap();
        assert_eq!(a.add(&b).unwrap().to_tensor().data(), &[4.0, 6.0]);
        let m = tape.leaf(&tensor(&[2], &[2.0, 3.0]), false).unwrap();
        assert_eq!(m.scale(0.0).unwrap().to_tensor().data(), &[0.0, 0.0]);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let tape = Tape::<f64>::new();
        let a = tape.leaf(&tensor(&[2], &[1.0, 2.0]), false).unwrap();
        let b = tape.leaf(&tensor(&[3], &[1.0, 2.0, 3.0]), false).unwrap();
        assert!(matches!(
            a.add(&b),
            Err(TensorError::ShapeMismatch { op: "add", .. })
        ));
    }

    #[test]
    fn division_by_exact_zero_is_an_error() {
        let tape = Tape::<f64>::new();
        let a = tape.leaf(&tensor(&[2], &[1.0, 2.0]), false).unwrap();
        let b = tape.leaf(&tensor(&[2], &[1.0, 0.0]), false).unwrap();
        assert!(matches!(
            a.div(&b),
            Err(TensorError::NonFinite { op: "div" })
        ));
    }

    #[test]
    fn cross_tape_is_rejected() {
        let t1 = Tape::<f64>::new();
        let t2 = Tape::<f64>::new();
        let a = t1.leaf(&tensor(&[1], &[1.0]), false).unwrap();
        let b = t2.leaf(&tensor(&[1], &[1.0]), false).unwrap();
        assert!(matches!(a.add(&b), Err(TensorError::CrossTape)));
    }

    #[test]
    fn sqrt_value_and_gradient() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(&tensor(&[1], &[4.0]), true).unwrap();
        let y = x.sqrt().unwrap();
        assert_eq!(y.to_tensor().data(), &[2.0]);
        let grads = y.sum_all().unwrap().backward().unwrap();
        assert_eq!(grads.get_tensor(&x).unwrap().data(), &[0.25]);
    }

    #[test]
    fn sum_backward_is_ones() {
        let tape = Tape::<f64>::new();
        let w = tape.leaf(&tensor(&[5], &[1.0, -2.0, 3.0, 0.5, 9.0]), true).unwrap();
        let grads = w.sum_all().unwrap().backward().unwrap();
        assert_eq!(grads.get_tensor(&w).unwrap().data(), &[1.0; 5]);
    }

    #[test]
    fn half_mean_square_gradient() {
        // loss = mean(w^2) / 2 at w = [1, 2] has gradient w / n = [0.5, 1.0]
        let tape = Tape::<f64>::new();
        let w = tape.leaf(&tensor(&[2], &[1.0, 2.0]), true).unwrap();
        let loss = w.mul(&w).unwrap().mean_all().unwrap().scale(0.5).unwrap();
        let grads = loss.backward().unwrap();
        assert_eq!(grads.get_tensor(&w).unwrap().data(), &[0.5, 1.0]);
    }

    #[test]
    fn mean_backward_distributes_count() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(&tensor(&[4], &[1.0, 2.0, 3.0, 4.0]), true).unwrap();
        let m = x.mean_all().unwrap();
        assert_eq!(m.to_tensor().data(), &[2.5]);
        let grads = m.backward().unwrap();
        assert_eq!(grads.get_tensor(&x).unwrap().data(), &[0.25; 4]);
    }

    #[test]
    fn reduce_mean_rejects_empty_axes() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(&tensor(&[4], &[1.0; 4]), false).unwrap();
        assert!(x.reduce_mean(&[]).is_err());
    }

    #[test]
    fn channel_mean_of_constant_stays_constant() {
        let tape = Tape::<f64>::new();
        let x = tape
            .leaf(&Tensor::full(vec![2, 1, 1, 4], 3.25), false)
            .unwrap();
        let m = x.reduce_mean(&[3]).unwrap();
        assert_eq!(m.shape(), vec![2, 1, 1, 1]);
        assert_eq!(m.to_tensor().data(), &[3.25, 3.25]);
    }

    #[test]
    fn double_backward_through_square() {
        // g = d(sum(w^2))/dw = 2w; loss2 = sum(g^2) => dloss2/dw = 8w
        let tape = Tape::<f64>::new();
        let w = tape.leaf(&tensor(&[2], &[1.0, 2.0]), true).unwrap();
        let loss = w.mul(&w).unwrap().sum_all().unwrap();
        let g = loss.backward().unwrap().get(&w).unwrap();
        assert_eq!(g.to_tensor().data(), &[2.0, 4.0]);
        let loss2 = g.mul(&g).unwrap().sum_all().unwrap();
        let grads2 = loss2.backward().unwrap();
        assert_eq!(grads2.get_tensor(&w).unwrap().data(), &[8.0, 16.0]);
    }

    #[test]
    fn leaky_relu_values_and_gradient() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(&tensor(&[3], &[-1.0, 2.0, -3.0]), true).unwrap();
        let y = x.leaky_relu(0.2).unwrap();
        let yd = y.to_tensor();
        assert!((yd.data()[0] + 0.2).abs() < 1e-12);
        assert_eq!(yd.data()[1], 2.0);
        let grads = y.sum_all().unwrap().backward().unwrap();
        let g = grads.get_tensor(&x).unwrap();
        assert_eq!(g.data(), &[0.2, 1.0, 0.2]);
    }

    #[test]
    fn upsample_downsample_gradients() {
        let tape = Tape::<f64>::new();
        let x = tape
            .leaf(&tensor(&[1, 2, 2, 1], &[1.0, 2.0, 3.0, 4.0]), true)
            .unwrap();
        let up = x.upsample_nearest_2x().unwrap();
        let grads = up.sum_all().unwrap().backward().unwrap();
        assert_eq!(grads.get_tensor(&x).unwrap().data(), &[4.0; 4]);

        let tape = Tape::<f64>::new();
        let x = tape
            .leaf(&tensor(&[1, 2, 2, 1], &[1.0, 2.0, 3.0, 4.0]), true)
            .unwrap();
        let down = x.downsample_avg_2x().unwrap();
        let grads = down.sum_all().unwrap().backward().unwrap();
        assert_eq!(grads.get_tensor(&x).unwrap().data(), &[0.25; 4]);
    }

    #[test]
    fn backward_requires_scalar_and_connection() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(&tensor(&[2], &[1.0, 2.0]), true).unwrap();
        assert!(matches!(
            x.backward(),
            Err(TensorError::NotScalar { numel: 2 })
        ));
        let c = tape.leaf(&tensor(&[1], &[1.0]), false).unwrap();
        assert!(matches!(
            c.sum_all().unwrap().backward(),
            Err(TensorError::DetachedGraph)
        ));
    }

    #[test]
    fn gradient_accumulates_over_reuse() {
        // y = x * x + x => dy/dx = 2x + 1
        let tape = Tape::<f64>::new();
        let x = tape.leaf(&tensor(&[1], &[3.0]), true).unwrap();
        let y = x.mul(&x).unwrap().add(&x).unwrap().sum_all().unwrap();
        let grads = y.backward().unwrap();
        assert_eq!(grads.get_tensor(&x).unwrap().data(), &[7.0]);
    }

    #[test]
    fn wrt_pruning_matches_full_backward() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(&tensor(&[2], &[0.3, -0.7]), true).unwrap();
        let w = tape.leaf(&tensor(&[2], &[1.5, 2.5]), true).unwrap();
        let loss = x.mul(&w).unwrap().sum_all().unwrap();
        let full = loss.backward().unwrap();
        let pruned = loss.backward_wrt(&[&x]).unwrap();
        assert_eq!(
            full.get_tensor(&x).unwrap().data(),
            pruned.get_tensor(&x).unwrap().data()
        );
        assert!(pruned.get(&w).is_none());
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let run = || {
            let mut rng = crate::rng::Rng::seed_from_u64(99);
            let tape = Tape::<f32>::new();
            let x = tape
                .leaf(&Tensor::<f32>::randn(vec![2, 4, 4, 3], &mut rng), true)
                .unwrap();
            let w = tape
                .leaf(&Tensor::<f32>::randn(vec![3, 3, 3, 2], &mut rng), true)
                .unwrap();
            let y = x.conv2d(&w, 1).unwrap().leaky_relu(0.2).unwrap();
            let loss = y.mul(&y).unwrap().mean_all().unwrap();
            let grads = loss.backward().unwrap();
            (
                loss.to_tensor().data().to_vec(),
                grads.get_tensor(&x).unwrap().data().to_vec(),
                grads.get_tensor(&w).unwrap().data().to_vec(),
            )
        };
        let (l1, gx1, gw1) = run();
        let (l2, gx2, gw2) = run();
        assert!(l1.iter().zip(&l2).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert!(gx1.iter().zip(&gx2).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert!(gw1.iter().zip(&gw2).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn sqrt_safe_zero_input_gives_zero_gradient() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(&tensor(&[2], &[0.0, 4.0]), true).unwrap();
        let y = x.sqrt_safe().unwrap();
        assert_eq!(y.to_tensor().data(), &[0.0, 2.0]);
        let grads = y.sum_all().unwrap().backward().unwrap();
        assert_eq!(grads.get_tensor(&x).unwrap().data(), &[0.0, 0.25]);
    }
}
