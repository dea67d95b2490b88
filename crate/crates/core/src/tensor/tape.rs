use serde::{Deserialize, Serialize};

use super::kernels::{self, ConvGeometry, Layout};
use super::{Result, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    /// Output spatial size `ceil(h / stride)`, zero padding split evenly
    /// with the extra row/column at the bottom/right.
    Same,
    /// No padding: `floor((h - kh) / stride) + 1`.
    Valid,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Dense {
        input: Var,
        weight: Var,
        bias: Option<Var>,
    },
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        geometry: ConvGeometry,
        cols: Option<Vec<f64>>,
    },
    MaxPool2 {
        input: Var,
        argmax: Vec<usize>,
    },
    Relu {
        input: Var,
    },
    Sigmoid {
        input: Var,
    },
    Concat {
        inputs: Vec<Var>,
    },
    Reshape {
        input: Var,
    },
    Add {
        lhs: Var,
        rhs: Var,
    },
    Scale {
        input: Var,
        factor: f64,
    },
    Sum {
        input: Var,
    },
    Mse {
        pred: Var,
        target: Var,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// Records a forward computation so it can be differentiated in reverse.
///
/// A tape is built fresh for every forward pass. Nodes are appended in
/// execution order, and [`Tape::backward`] walks them once in reverse.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    /// Registers an input or parameter.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn check(&self, var: Var) -> Result<&Node> {
        self.nodes.get(var.0).ok_or(TensorError::UnknownVar(var.0))
    }

    fn finish(&mut self, op_name: &'static str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: op_name });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push(value, requires_grad, op))
    }

    /// `input · weight (+ bias)` for a rank-1 input of length `n_in` and a
    /// `[n_in, n_out]` weight.
    pub fn dense(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let x = self.check(input)?.value.clone_shape();
        let w = self.check(weight)?.value.clone_shape();
        if x.len() != 1 || w.len() != 2 || w[0] != x[0] {
            return Err(TensorError::ShapeMismatch {
                op: "dense",
                detail: format!("input {x:?} vs weight {w:?}"),
            });
        }
        let (n_in, n_out) = (w[0], w[1]);
        let mut out = vec![0.0; n_out];
        if let Some(b) = bias {
            let b = &self.check(b)?.value;
            if b.shape() != [n_out] {
                return Err(TensorError::ShapeMismatch {
                    op: "dense",
                    detail: format!("bias {:?} vs {n_out} outputs", b.shape()),
                });
            }
            out.copy_from_slice(b.data());
        }
        kernels::gemm(
            1,
            n_in,
            n_out,
            self.value(input).data(),
            Layout::Plain,
            self.value(weight).data(),
            Layout::Plain,
            if bias.is_some() { 1.0 } else { 0.0 },
            &mut out,
        );
        let inputs: Vec<Var> = [Some(input), Some(weight), bias].into_iter().flatten().collect();
        self.finish(
            "dense",
            Tensor::new(vec![n_out], out)?,
            Op::Dense {
                input,
                weight,
                bias,
            },
            &inputs,
        )
    }

    /// Cross-correlation of an `h×w×c_in` input with a `kh×kw×c_in×c_out`
    /// kernel.
    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        padding: Padding,
    ) -> Result<Var> {
        let x = self.check(input)?.value.clone_shape();
        let k = self.check(kernel)?.value.clone_shape();
        if x.len() != 3 || k.len() != 4 || k[2] != x[2] {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                detail: format!("input {x:?} vs kernel {k:?}"),
            });
        }
        let geometry = conv_geometry(&x, &k, stride, padding)?;
        if let Some(b) = bias {
            let b = &self.check(b)?.value;
            if b.shape() != [geometry.c_out] {
                return Err(TensorError::ShapeMismatch {
                    op: "conv2d",
                    detail: format!("bias {:?} vs {} channels", b.shape(), geometry.c_out),
                });
            }
        }
        let cols = kernels::im2col(self.value(input).data(), &geometry);
        let pixels = geometry.out_pixels();
        let mut out = vec![0.0; pixels * geometry.c_out];
        if let Some(b) = bias {
            let b = self.value(b).data();
            for row in out.chunks_exact_mut(geometry.c_out) {
                row.copy_from_slice(b);
            }
        }
        kernels::gemm(
            pixels,
            geometry.patch_len(),
            geometry.c_out,
            &cols,
            Layout::Plain,
            self.value(kernel).data(),
            Layout::Plain,
            if bias.is_some() { 1.0 } else { 0.0 },
            &mut out,
        );
        let keep_cols = self.requires_grad(kernel);
        let inputs: Vec<Var> = [Some(input), Some(kernel), bias].into_iter().flatten().collect();
        self.finish(
            "conv2d",
            Tensor::new(vec![geometry.out_h, geometry.out_w, geometry.c_out], out)?,
            Op::Conv2d {
                input,
                kernel,
                bias,
                geometry,
                cols: keep_cols.then_some(cols),
            },
            &inputs,
        )
    }

    /// 2×2 max pooling with stride 2 over an `h×w×c` input.
    pub fn maxpool2(&mut self, input: Var) -> Result<Var> {
        let x = self.check(input)?.value.clone_shape();
        if x.len() != 3 {
            return Err(TensorError::ShapeMismatch {
                op: "maxpool2",
                detail: format!("expected h×w×c, got {x:?}"),
            });
        }
        let (h, w, c) = (x[0], x[1], x[2]);
        if h % 2 != 0 || w % 2 != 0 {
            return Err(TensorError::OddPoolInput { h, w });
        }
        let (out, argmax) = kernels::maxpool2(self.value(input).data(), h, w, c);
        self.finish(
            "maxpool2",
            Tensor::new(vec![h / 2, w / 2, c], out)?,
            Op::MaxPool2 { input, argmax },
            &[input],
        )
    }

    pub fn relu(&mut self, input: Var) -> Result<Var> {
        let x = &self.check(input)?.value;
        let out: Vec<f64> = x.data().iter().map(|&v| v.max(0.0)).collect();
        let value = Tensor::new(x.shape().to_vec(), out)?;
        self.finish("relu", value, Op::Relu { input }, &[input])
    }

    pub fn sigmoid(&mut self, input: Var) -> Result<Var> {
        let x = &self.check(input)?.value;
        let out: Vec<f64> = x.data().iter().map(|&v| kernels::sigmoid(v)).collect();
        let value = Tensor::new(x.shape().to_vec(), out)?;
        self.finish("sigmoid", value, Op::Sigmoid { input }, &[input])
    }

    /// Joins rank-1 tensors end to end, preserving order.
    pub fn concat(&mut self, inputs: &[Var]) -> Result<Var> {
        if inputs.is_empty() {
            return Err(TensorError::EmptyConcat);
        }
        let mut out = Vec::new();
        for &v in inputs {
            let t = &self.check(v)?.value;
            if t.rank() != 1 {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    detail: format!("inputs must be rank-1, got {:?}", t.shape()),
                });
            }
            out.extend_from_slice(t.data());
        }
        let value = Tensor::new(vec![out.len()], out)?;
        self.finish(
            "concat",
            value,
            Op::Concat {
                inputs: inputs.to_vec(),
            },
            inputs,
        )
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let value = self.check(input)?.value.clone().reshape(shape)?;
        self.finish("reshape", value, Op::Reshape { input }, &[input])
    }

    pub fn flatten(&mut self, input: Var) -> Result<Var> {
        let n = self.check(input)?.value.numel();
        self.reshape(input, &[n])
    }

    pub fn add(&mut self, lhs: Var, rhs: Var) -> Result<Var> {
        let a = &self.check(lhs)?.value;
        let b = &self.check(rhs)?.value;
        if a.shape() != b.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "add",
                detail: format!("{:?} vs {:?}", a.shape(), b.shape()),
            });
        }
        let out = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(a.shape().to_vec(), out)?;
        self.finish("add", value, Op::Add { lhs, rhs }, &[lhs, rhs])
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Result<Var> {
        let x = &self.check(input)?.value;
        let out = x.data().iter().map(|v| v * factor).collect();
        let value = Tensor::new(x.shape().to_vec(), out)?;
        self.finish("scale", value, Op::Scale { input, factor }, &[input])
    }

    pub fn sum(&mut self, input: Var) -> Result<Var> {
        let total = self.check(input)?.value.data().iter().sum();
        self.finish("sum", Tensor::scalar(total), Op::Sum { input }, &[input])
    }

    /// Mean of squared differences, as a `[1]` tensor.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let p = &self.check(pred)?.value;
        let t = &self.check(target)?.value;
        if p.shape() != t.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "mse",
                detail: format!("{:?} vs {:?}", p.shape(), t.shape()),
            });
        }
        let n = p.numel() as f64;
        let loss = p
            .data()
            .iter()
            .zip(t.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n;
        self.finish("mse", Tensor::scalar(loss), Op::Mse { pred, target }, &[pred, target])
    }

    /// Propagates `d loss / d v` to every recorded value that requires a
    /// gradient. Gradients from multiple consumers are summed.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        let loss_node = self.check(loss)?;
        if loss_node.value.numel() != 1 {
            return Err(TensorError::NonScalarLoss(loss_node.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if loss_node.requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(upstream) = grads[idx].take() else {
                continue;
            };
            self.backprop_node(node, &upstream, &mut grads);
            grads[idx] = Some(upstream);
        }
        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, node)| {
                g.filter(|_| node.requires_grad)
                    .map(|g| Tensor::new(node.value.shape().to_vec(), g).expect("gradient shape"))
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, node: &Node, upstream: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Dense {
                input,
                weight,
                bias,
            } => {
                let w = self.value(*weight);
                let (n_in, n_out) = (w.shape()[0], w.shape()[1]);
                if let Some(g) = self.grad_slot(*input, grads) {
                    kernels::gemm(1, n_out, n_in, upstream, Layout::Plain, w.data(), Layout::Transposed, 1.0, g);
                }
                if let Some(g) = self.grad_slot(*weight, grads) {
                    let x = self.value(*input).data();
                    kernels::gemm(n_in, 1, n_out, x, Layout::Plain, upstream, Layout::Plain, 1.0, g);
                }
                if let Some(b) = bias {
                    if let Some(g) = self.grad_slot(*b, grads) {
                        add_assign(g, upstream);
                    }
                }
            }
            Op::Conv2d {
                input,
                kernel,
                bias,
                geometry,
                cols,
            } => {
                let pixels = geometry.out_pixels();
                let patch = geometry.patch_len();
                if let Some(g) = self.grad_slot(*kernel, grads) {
                    let cols = cols.as_ref().expect("conv2d saved columns for kernel grad");
                    kernels::gemm(patch, pixels, geometry.c_out, cols, Layout::Transposed, upstream, Layout::Plain, 1.0, g);
                }
                if self.nodes[input.0].requires_grad {
                    let k = self.value(*kernel).data();
                    let mut dcols = vec![0.0; pixels * patch];
                    kernels::gemm(pixels, geometry.c_out, patch, upstream, Layout::Plain, k, Layout::Transposed, 0.0, &mut dcols);
                    let g = self.grad_slot(*input, grads).expect("input requires grad");
                    kernels::col2im_add(&dcols, geometry, g);
                }
                if let Some(b) = bias {
                    if let Some(g) = self.grad_slot(*b, grads) {
                        for row in upstream.chunks_exact(geometry.c_out) {
                            add_assign(g, row);
                        }
                    }
                }
            }
            Op::MaxPool2 { input, argmax } => {
                if let Some(g) = self.grad_slot(*input, grads) {
                    for (&src, &dy) in argmax.iter().zip(upstream) {
                        g[src] += dy;
                    }
                }
            }
            Op::Relu { input } => {
                let x = self.value(*input).data();
                if let Some(g) = self.grad_slot(*input, grads) {
                    for ((g, &dy), &x) in g.iter_mut().zip(upstream).zip(x) {
                        if x > 0.0 {
                            *g += dy;
                        }
                    }
                }
            }
            Op::Sigmoid { input } => {
                let y = node.value.data();
                if let Some(g) = self.grad_slot(*input, grads) {
                    for ((g, &dy), &y) in g.iter_mut().zip(upstream).zip(y) {
                        *g += dy * y * (1.0 - y);
                    }
                }
            }
            Op::Concat { inputs } => {
                let mut offset = 0;
                for &v in inputs {
                    let n = self.value(v).numel();
                    if let Some(g) = self.grad_slot(v, grads) {
                        add_assign(g, &upstream[offset..offset + n]);
                    }
                    offset += n;
                }
            }
            Op::Reshape { input } => {
                if let Some(g) = self.grad_slot(*input, grads) {
                    add_assign(g, upstream);
                }
            }
            Op::Add { lhs, rhs } => {
                for v in [lhs, rhs] {
                    if let Some(g) = self.grad_slot(*v, grads) {
                        add_assign(g, upstream);
                    }
                }
            }
            Op::Scale { input, factor } => {
                if let Some(g) = self.grad_slot(*input, grads) {
                    for (g, dy) in g.iter_mut().zip(upstream) {
                        *g += dy * factor;
                    }
                }
            }
            Op::Sum { input } => {
                if let Some(g) = self.grad_slot(*input, grads) {
                    for g in g.iter_mut() {
                        *g += upstream[0];
                    }
                }
            }
            Op::Mse { pred, target } => {
                let p = self.value(*pred).data();
                let t = self.value(*target).data();
                let scale = 2.0 * upstream[0] / p.len() as f64;
                if let Some(g) = self.grad_slot(*pred, grads) {
                    for ((g, p), t) in g.iter_mut().zip(p).zip(t) {
                        *g += scale * (p - t);
                    }
                }
                if let Some(g) = self.grad_slot(*target, grads) {
                    for ((g, p), t) in g.iter_mut().zip(p).zip(t) {
                        *g -= scale * (p - t);
                    }
                }
            }
        }
    }

    /// Mutable gradient buffer for `var`, allocated on first use; `None` when
    /// the value does not require a gradient.
    fn grad_slot<'g>(&self, var: Var, grads: &'g mut [Option<Vec<f64>>]) -> Option<&'g mut [f64]> {
        let node = &self.nodes[var.0];
        if !node.requires_grad {
            return None;
        }
        Some(
            grads[var.0]
                .get_or_insert_with(|| vec![0.0; node.value.numel()])
                .as_mut_slice(),
        )
    }
}

fn add_assign(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn conv_geometry(x: &[usize], k: &[usize], stride: usize, padding: Padding) -> Result<ConvGeometry> {
    if stride == 0 {
        return Err(TensorError::ZeroStride);
    }
    let (h, w, c_in) = (x[0], x[1], x[2]);
    let (kh, kw, c_out) = (k[0], k[1], k[3]);
    let too_large = TensorError::KernelTooLarge { kh, kw, h, w };
    let (out_h, out_w, pad_top, pad_left) = match padding {
        Padding::Valid => {
            if kh > h || kw > w {
                return Err(too_large);
            }
            ((h - kh) / stride + 1, (w - kw) / stride + 1, 0, 0)
        }
        Padding::Same => {
            let out_h = h.div_ceil(stride);
            let out_w = w.div_ceil(stride);
            let pad_h = ((out_h - 1) * stride + kh).saturating_sub(h);
            let pad_w = ((out_w - 1) * stride + kw).saturating_sub(w);
            if kh > h + pad_h || kw > w + pad_w {
                return Err(too_large);
            }
            (out_h, out_w, pad_h / 2, pad_w / 2)
        }
    };
    Ok(ConvGeometry {
        h,
        w,
        c_in,
        kh,
        kw,
        c_out,
        stride,
        pad_top,
        pad_left,
        out_h,
        out_w,
    })
}

/// Output spatial size of a convolution, without running it.
pub(crate) fn conv_output_hw(
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: Padding,
) -> Result<(usize, usize)> {
    let g = conv_geometry(&[h, w, 1], &[kh, kw, 1, 1], stride, padding)?;
    Ok((g.out_h, g.out_w))
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`, or `None` if `var` did
    /// not require a gradient or does not influence the loss.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

impl Tensor {
    fn clone_shape(&self) -> Vec<usize> {
        self.shape().to_vec()
    }
}
