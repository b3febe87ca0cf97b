use super::kernels::{self, ConvDims};
use super::{Element, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
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
    Conv2d { input: Var, weight: Var, bias: Var, dims: ConvDims },
    Relu { input: Var },
    MaxPool2 { input: Var, argmax: Vec<u32> },
    Upsample2 { input: Var },
    CropConcat { skip: Var, up: Var, dy: usize, dx: usize },
    Gather { field: Var, coords: Vec<(usize, usize)> },
    PairLoss { anchors: Var, partners: Var, offsets: Vec<[f64; 2]>, tau: f64, lambda: f64 },
}

#[derive(Debug)]
struct Node {
    op: Op,
    requires_grad: bool,
}

/// Wengert list: one node per value, appended in forward order and replayed
/// in reverse by [`Tape::backward`]. Confined to a single step and thread.
#[derive(Debug)]
pub struct Tape<T: Element = f32> {
    values: Vec<Tensor<T>>,
    nodes: Vec<Node>,
    trace: Vec<usize>,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Self {
            values: Vec::new(),
            nodes: Vec::new(),
            trace: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op, requires_grad: bool) -> Var {
        self.values.push(value);
        self.nodes.push(Node { op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.values[v.0]
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.values[v.0].grad()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Vec<T>> {
        self.values[v.0].take_grad()
    }

    /// Moves a value out of the tape, leaving an empty tensor behind.
    pub fn take_value(&mut self, v: Var) -> Tensor<T> {
        std::mem::replace(&mut self.values[v.0], Tensor::zeros(&[0]))
    }

    /// Node indices visited by the last backward pass, in visit order.
    pub fn trace(&self) -> &[usize] {
        &self.trace
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn conv2d_valid(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        const OP: &str = "conv2d_valid";
        let (c, h, w) = self.value(input).dims3(OP)?;
        let (f, wc, k) = match self.value(weight).shape()[..] {
            [f, wc, k1, k2] if k1 == k2 => (f, wc, k1),
            ref s => return Err(Error::shape(OP, "weights [F, C, k, k]", format!("{s:?}"))),
        };
        if wc != c {
            return Err(Error::shape(OP, format!("{c} weight input channels"), format!("{wc}")));
        }
        if k != 1 && k != 3 {
            return Err(Error::precondition(OP, format!("kernel size {k} not in {{1, 3}}")));
        }
        if self.value(bias).shape() != [f] {
            return Err(Error::shape(OP, format!("bias [{f}]"), format!("{:?}", self.value(bias).shape())));
        }
        if h < k || w < k {
            return Err(Error::precondition(OP, format!("input {h}x{w} smaller than kernel {k}")));
        }
        let dims = ConvDims { c, h, w, f, k };
        let out = kernels::conv_forward(self.value(input).data(), self.value(weight).data(), self.value(bias).data(), dims);
        let value = Tensor::new(vec![f, dims.ho(), dims.wo()], out)?;
        let rg = self.needs(&[input, weight, bias]);
        Ok(self.push(value, Op::Conv2d { input, weight, bias, dims }, rg))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let src = self.value(input);
        let value = Tensor {
            shape: src.shape().to_vec(),
            data: src.data().iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect(),
            grad: None,
        };
        let rg = self.needs(&[input]);
        self.push(value, Op::Relu { input }, rg)
    }

    pub fn maxpool2(&mut self, input: Var) -> Result<Var> {
        const OP: &str = "maxpool2";
        let (c, h, w) = self.value(input).dims3(OP)?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::precondition(OP, format!("spatial dims {h}x{w} must be even")));
        }
        let (out, argmax) = kernels::maxpool2_forward(self.value(input).data(), c, h, w);
        let value = Tensor::new(vec![c, h / 2, w / 2], out)?;
        let rg = self.needs(&[input]);
        Ok(self.push(value, Op::MaxPool2 { input, argmax }, rg))
    }

    pub fn upsample_nearest2(&mut self, input: Var) -> Result<Var> {
        let (c, h, w) = self.value(input).dims3("upsample_nearest2")?;
        let out = kernels::upsample2_forward(self.value(input).data(), c, h, w);
        let value = Tensor::new(vec![c, 2 * h, 2 * w], out)?;
        let rg = self.needs(&[input]);
        Ok(self.push(value, Op::Upsample2 { input }, rg))
    }

    /// Center-crops `skip` to the spatial size of `up` and stacks channels
    /// `[skip, up]`.
    pub fn crop_concat(&mut self, skip: Var, up: Var) -> Result<Var> {
        const OP: &str = "crop_concat";
        let (c1, h1, w1) = self.value(skip).dims3(OP)?;
        let (c2, h2, w2) = self.value(up).dims3(OP)?;
        if h1 < h2 || w1 < w2 {
            return Err(Error::precondition(OP, format!("skip {h1}x{w1} smaller than {h2}x{w2}")));
        }
        let (dy, dx) = ((h1 - h2) / 2, (w1 - w2) / 2);
        let cropped = self.value(skip).crop3(dy, dx, h2, w2)?;
        let mut data = cropped.into_data();
        data.extend_from_slice(self.value(up).data());
        let value = Tensor::new(vec![c1 + c2, h2, w2], data)?;
        let rg = self.needs(&[skip, up]);
        Ok(self.push(value, Op::CropConcat { skip, up, dy, dx }, rg))
    }

    /// Reads the channel vector at each `(row, col)`; output `[N, C]`.
    pub fn gather_coords(&mut self, field: Var, coords: &[(usize, usize)]) -> Result<Var> {
        const OP: &str = "gather_coords";
        let (c, h, w) = self.value(field).dims3(OP)?;
        let src = self.value(field).data();
        let mut out = Vec::with_capacity(coords.len() * c);
        for &(row, col) in coords {
            if row >= h || col >= w {
                return Err(Error::OutOfBounds { op: OP, row, col, height: h, width: w });
            }
            for ch in 0..c {
                out.push(src[(ch * h + row) * w + col]);
            }
        }
        let value = Tensor::new(vec![coords.len(), c], out)?;
        let rg = self.needs(&[field]);
        Ok(self.push(value, Op::Gather { field, coords: coords.to_vec() }, rg))
    }

    /// Scalar `sum_n sigma(d_n - (a_n - b_n)) + lambda * sum_n |a_n|` for
    /// gathered anchor/partner embeddings `[N, 2]` and spatial offsets
    /// `d_n = anchor_n - partner_n`.
    pub fn pair_loss(&mut self, anchors: Var, partners: Var, offsets: &[[f64; 2]], tau: f64, lambda: f64) -> Result<Var> {
        const OP: &str = "pair_loss";
        let n = offsets.len();
        for v in [anchors, partners] {
            if self.value(v).shape() != [n, 2] {
                return Err(Error::shape(OP, format!("[{n}, 2]"), format!("{:?}", self.value(v).shape())));
            }
        }
        if tau <= 0.0 {
            return Err(Error::precondition(OP, "tau must be positive"));
        }
        let total = kernels::pair_loss_forward(self.value(anchors).data(), self.value(partners).data(), offsets, tau, lambda);
        let value = Tensor::scalar(T::from_f64_lossy(total));
        let rg = self.needs(&[anchors, partners]);
        Ok(self.push(
            value,
            Op::PairLoss { anchors, partners, offsets: offsets.to_vec(), tau, lambda },
            rg,
        ))
    }

    /// Backpropagates from a scalar root with seed gradient 1.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.value(root).numel() != 1 {
            return Err(Error::shape("backward", "scalar root", format!("{:?}", self.value(root).shape())));
        }
        self.backward_with(root, vec![T::one()])
    }

    /// Backpropagates from `root` with an explicit upstream gradient.
    pub fn backward_with(&mut self, root: Var, seed: Vec<T>) -> Result<()> {
        self.values[root.0].set_grad(seed)?;
        self.trace.clear();
        for i in (0..=root.0).rev() {
            if !self.nodes[i].requires_grad || self.values[i].grad().is_none() {
                continue;
            }
            self.trace.push(i);
            let (before, rest) = self.values.split_at_mut(i);
            let out = &rest[0];
            let gy = out.grad().expect("checked above");
            backprop_node(&self.nodes, &self.nodes[i].op, before, out, gy);
        }
        Ok(())
    }
}

fn grad_target<'a, T: Element>(nodes: &[Node], values: &'a mut [Tensor<T>], v: Var) -> Option<&'a mut Vec<T>> {
    if nodes[v.0].requires_grad {
        Some(values[v.0].grad_mut_or_zero())
    } else {
        None
    }
}

fn backprop_node<T: Element>(nodes: &[Node], op: &Op, before: &mut [Tensor<T>], out: &Tensor<T>, gy: &[T]) {
    match op {
        Op::Leaf => {}
        Op::Conv2d { input, weight, bias, dims } => {
            let mut dw = take_or_zero(nodes, before, *weight);
            let mut db = take_or_zero(nodes, before, *bias);
            let mut dx = take_or_zero(nodes, before, *input);
            let mut dw_scratch = Vec::new();
            let mut db_scratch = Vec::new();
            kernels::conv_backward(
                before[input.0].data(),
                before[weight.0].data(),
                gy,
                *dims,
                dx.as_deref_mut(),
                dw.as_mut().unwrap_or_else(|| {
                    dw_scratch.resize(before[weight.0].numel(), T::zero());
                    &mut dw_scratch
                }),
                db.as_mut().unwrap_or_else(|| {
                    db_scratch.resize(before[bias.0].numel(), T::zero());
                    &mut db_scratch
                }),
            );
            restore(before, *weight, dw);
            restore(before, *bias, db);
            restore(before, *input, dx);
        }
        Op::Relu { input } => {
            if let Some(g) = grad_target(nodes, before, *input) {
                for ((gi, &o), &u) in g.iter_mut().zip(out.data()).zip(gy) {
                    if o > T::zero() {
                        *gi += u;
                    }
                }
            }
        }
        Op::MaxPool2 { input, argmax } => {
            if let Some(g) = grad_target(nodes, before, *input) {
                for (&idx, &u) in argmax.iter().zip(gy) {
                    g[idx as usize] += u;
                }
            }
        }
        Op::Upsample2 { input } => {
            let (c, h, w) = (out.shape()[0], out.shape()[1] / 2, out.shape()[2] / 2);
            if let Some(g) = grad_target(nodes, before, *input) {
                kernels::upsample2_backward(gy, c, h, w, g);
            }
        }
        Op::CropConcat { skip, up, dy, dx } => {
            let (h2, w2) = (out.shape()[1], out.shape()[2]);
            let plane = h2 * w2;
            let (c1, h1, w1) = {
                let s = before[skip.0].shape();
                (s[0], s[1], s[2])
            };
            if let Some(g) = grad_target(nodes, before, *skip) {
                for ch in 0..c1 {
                    for y in 0..h2 {
                        let dst = (ch * h1 + y + dy) * w1 + dx;
                        let src = ch * plane + y * w2;
                        for (a, &b) in g[dst..dst + w2].iter_mut().zip(&gy[src..src + w2]) {
                            *a += b;
                        }
                    }
                }
            }
            if let Some(g) = grad_target(nodes, before, *up) {
                for (a, &b) in g.iter_mut().zip(&gy[c1 * plane..]) {
                    *a += b;
                }
            }
        }
        Op::Gather { field, coords } => {
            let (c, h, w) = {
                let s = before[field.0].shape();
                (s[0], s[1], s[2])
            };
            if let Some(g) = grad_target(nodes, before, *field) {
                for (n, &(row, col)) in coords.iter().enumerate() {
                    for ch in 0..c {
                        g[(ch * h + row) * w + col] += gy[n * c + ch];
                    }
                }
            }
        }
        Op::PairLoss { anchors, partners, offsets, tau, lambda } => {
            let mut ga = take_or_zero(nodes, before, *anchors);
            let mut gb = take_or_zero(nodes, before, *partners);
            kernels::pair_loss_backward(
                before[anchors.0].data(),
                before[partners.0].data(),
                offsets,
                *tau,
                *lambda,
                gy[0].as_f64(),
                ga.as_deref_mut(),
                gb.as_deref_mut(),
            );
            restore(before, *anchors, ga);
            restore(before, *partners, gb);
        }
    }
}

/// Detaches the gradient buffer of `v` (zero-initialized) when it needs one.
fn take_or_zero<T: Element>(nodes: &[Node], values: &mut [Tensor<T>], v: Var) -> Option<Vec<T>> {
    if nodes[v.0].requires_grad {
        let n = values[v.0].numel();
        Some(values[v.0].take_grad().unwrap_or_else(|| vec![T::zero(); n]))
    } else {
        None
    }
}

fn restore<T: Element>(values: &mut [Tensor<T>], v: Var, grad: Option<Vec<T>>) {
    if let Some(g) = grad {
        values[v.0].grad = Some(g);
    }
}
