//! Append-only tape of executed operations with reverse-mode gradients.

use super::kernels::{self, ConvGeom};
use super::tensor::{Shape, Tensor};
use crate::error::{check_dim, Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        geom: ConvGeom,
    },
    Relu(Var),
    BilinearSample {
        image: Var,
        flow: Var,
    },
    AvgDownsample2(Var),
    BilinearUpsample2(Var),
    Concat(Vec<Var>),
    Slice {
        input: Var,
        start: usize,
        end: usize,
    },
    Add(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    Mse {
        pred: Var,
        target: Var,
    },
}

struct Node {
    shape: Shape,
    data: Vec<f64>,
    needs_grad: bool,
    op: Op,
}

/// A single forward pass. Build it, call [`Graph::backward`] once.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of the leaves that required them, indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<f64>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
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

    fn push(&mut self, shape: Shape, data: Vec<f64>, needs_grad: bool, op: Op) -> Var {
        debug_assert_eq!(data.len(), shape.numel());
        self.nodes.push(Node {
            shape,
            data,
            needs_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a leaf; it receives a gradient iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let shape = t.shape();
        let rg = t.requires_grad();
        self.push(shape, t.into_data(), rg, Op::Leaf)
    }

    /// Leaf copied from a borrowed tensor.
    pub fn leaf_ref(&mut self, t: &Tensor) -> Var {
        self.push(t.shape(), t.data().to_vec(), t.requires_grad(), Op::Leaf)
    }

    pub fn constant(&mut self, shape: Shape, data: Vec<f64>) -> Result<Var> {
        let t = Tensor::from_vec(shape, data)?;
        Ok(self.leaf(t))
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].shape
    }

    pub fn data(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].data
    }

    pub fn value(&self, v: Var) -> Tensor {
        let node = &self.nodes[v.0];
        Tensor::from_vec(node.shape, node.data.clone()).expect("node data matches shape")
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].data[0]
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, stride: usize, padding: usize) -> Result<Var> {
        let is = self.shape(input);
        let ws = self.shape(weight);
        let bs = self.shape(bias);
        const OP: &str = "conv2d";
        check_dim(OP, "kernel width", ws.w, ws.h)?;
        if ws.h.is_multiple_of(2) {
            return Err(Error::invalid(format!("conv2d: kernel size {} must be odd", ws.h)));
        }
        if stride == 0 {
            return Err(Error::invalid("conv2d: stride must be positive"));
        }
        check_dim(OP, "input channels", is.c, ws.c)?;
        check_dim(OP, "bias length", bs.numel(), ws.n)?;
        if is.h + 2 * padding < ws.h || is.w + 2 * padding < ws.w {
            return Err(Error::invalid(format!(
                "conv2d: kernel {} larger than padded input {}x{}",
                ws.h,
                is.h + 2 * padding,
                is.w + 2 * padding
            )));
        }
        let geom = ConvGeom {
            input: is,
            c_out: ws.n,
            k: ws.h,
            stride,
            pad: padding,
        };
        let out = kernels::conv2d_forward(&geom, self.data(input), self.data(weight), self.data(bias));
        let needs = self.needs(input) || self.needs(weight) || self.needs(bias);
        Ok(self.push(
            geom.out_shape(),
            out,
            needs,
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            },
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.data(x).iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
        let needs = self.needs(x);
        self.push(self.shape(x), out, needs, Op::Relu(x))
    }

    /// Samples `image` at (x + dx, y + dy) with bilinear weights; coordinates
    /// outside the frame are clamped to the border.
    pub fn bilinear_sample(&mut self, image: Var, flow: Var) -> Result<Var> {
        let is = self.shape(image);
        let fs = self.shape(flow);
        const OP: &str = "bilinear_sample";
        check_dim(OP, "flow channels", fs.c, 2)?;
        check_dim(OP, "flow batch", fs.n, is.n)?;
        check_dim(OP, "flow height", fs.h, is.h)?;
        check_dim(OP, "flow width", fs.w, is.w)?;
        let out = kernels::bilinear_sample_forward(is, self.data(image), self.data(flow));
        let needs = self.needs(image) || self.needs(flow);
        Ok(self.push(is, out, needs, Op::BilinearSample { image, flow }))
    }

    pub fn avg_downsample2(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if !s.h.is_multiple_of(2) || !s.w.is_multiple_of(2) {
            return Err(Error::invalid(format!(
                "avg_downsample2: spatial dims {}x{} must be even",
                s.h, s.w
            )));
        }
        let out = kernels::avg_downsample2_forward(s, self.data(x));
        let needs = self.needs(x);
        Ok(self.push(
            Shape::new(s.n, s.c, s.h / 2, s.w / 2),
            out,
            needs,
            Op::AvgDownsample2(x),
        ))
    }

    /// Doubles spatial size; the corner samples of the coarse grid land on
    /// the corners of the fine grid.
    pub fn bilinear_upsample2(&mut self, x: Var) -> Var {
        let s = self.shape(x);
        let out = kernels::bilinear_upsample2_forward(s, self.data(x));
        let needs = self.needs(x);
        self.push(
            Shape::new(s.n, s.c, s.h * 2, s.w * 2),
            out,
            needs,
            Op::BilinearUpsample2(x),
        )
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = match parts.first() {
            Some(&v) => self.shape(v),
            None => return Err(Error::invalid("concat_channels: no inputs")),
        };
        let mut c_total = 0;
        for &p in parts {
            let s = self.shape(p);
            const OP: &str = "concat_channels";
            check_dim(OP, "batch", s.n, first.n)?;
            check_dim(OP, "height", s.h, first.h)?;
            check_dim(OP, "width", s.w, first.w)?;
            c_total += s.c;
        }
        let plane = first.plane();
        let mut out = Vec::with_capacity(first.n * c_total * plane);
        for n in 0..first.n {
            for &p in parts {
                let c = self.shape(p).c;
                out.extend_from_slice(&self.data(p)[n * c * plane..(n + 1) * c * plane]);
            }
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        let shape = Shape::new(first.n, c_total, first.h, first.w);
        Ok(self.push(shape, out, needs, Op::Concat(parts.to_vec())))
    }

    /// Splits channels into `[0, split)` and `[split, c)`.
    pub fn slice_channels(&mut self, x: Var, split: usize) -> Result<(Var, Var)> {
        let c = self.shape(x).c;
        if split == 0 || split >= c {
            return Err(Error::invalid(format!("slice_channels: split {split} outside 1..{c}")));
        }
        let a = self.slice_range(x, 0, split);
        let b = self.slice_range(x, split, c);
        Ok((a, b))
    }

    fn slice_range(&mut self, x: Var, start: usize, end: usize) -> Var {
        let s = self.shape(x);
        let plane = s.plane();
        let src = self.data(x);
        let mut out = Vec::with_capacity(s.n * (end - start) * plane);
        for n in 0..s.n {
            out.extend_from_slice(&src[(n * s.c + start) * plane..(n * s.c + end) * plane]);
        }
        let needs = self.needs(x);
        self.push(
            Shape::new(s.n, end - start, s.h, s.w),
            out,
            needs,
            Op::Slice { input: x, start, end },
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sa != sb {
            return Err(Error::invalid(format!("add: shapes {sa} and {sb} differ")));
        }
        let out = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x + y).collect();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(sa, out, needs, Op::Add(a, b)))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let out = self.data(x).iter().map(|v| v * factor).collect();
        let needs = self.needs(x);
        self.push(self.shape(x), out, needs, Op::Scale(x, factor))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.data(x).iter().sum();
        let needs = self.needs(x);
        self.push(Shape::scalar(), vec![total], needs, Op::Sum(x))
    }

    /// Mean squared error. The target is treated as a constant.
    pub fn mse_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        let sp = self.shape(pred);
        let st = self.shape(target);
        if sp != st {
            return Err(Error::invalid(format!("mse_loss: shapes {sp} and {st} differ")));
        }
        let count = sp.numel() as f64;
        let sq: f64 = self
            .data(pred)
            .iter()
            .zip(self.data(target))
            .map(|(p, t)| (p - t) * (p - t))
            .sum();
        let needs = self.needs(pred);
        Ok(self.push(Shape::scalar(), vec![sq / count], needs, Op::Mse { pred, target }))
    }

    /// Runs reverse accumulation from a scalar `loss`, consuming the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::invalid("backward: loss does not belong to this graph"));
        }
        let ls = self.shape(loss);
        if ls.numel() != 1 {
            return Err(Error::invalid(format!(
                "backward: loss has shape {ls}, expected a scalar"
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                grads[idx] = None;
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(go) = grads[idx].take() else {
                continue;
            };
            self.propagate(&node.op, node, &go, &mut grads);
        }

        // keep only leaf gradients
        for (g, node) in grads.iter_mut().zip(&self.nodes) {
            if !matches!(node.op, Op::Leaf) || !node.needs_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, g: Vec<f64>) {
        if !self.needs(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => {
                for (e, x) in existing.iter_mut().zip(&g) {
                    *e += x;
                }
            }
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, op: &Op, node: &Node, go: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            } => {
                let want_in = self.needs(*input);
                let want_p = self.needs(*weight) || self.needs(*bias);
                let (gi, gw, gb) =
                    kernels::conv2d_backward(geom, self.data(*input), self.data(*weight), go, want_in, want_p);
                if let Some(gi) = gi {
                    self.accumulate(grads, *input, gi);
                }
                if let Some(gw) = gw {
                    self.accumulate(grads, *weight, gw);
                }
                if let Some(gb) = gb {
                    self.accumulate(grads, *bias, gb);
                }
            }
            Op::Relu(x) => {
                let g = self
                    .data(*x)
                    .iter()
                    .zip(go)
                    .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
                    .collect();
                self.accumulate(grads, *x, g);
            }
            Op::BilinearSample { image, flow } => {
                let (gi, gf) = kernels::bilinear_sample_backward(
                    self.shape(*image),
                    self.data(*image),
                    self.data(*flow),
                    go,
                    self.needs(*image),
                    self.needs(*flow),
                );
                if let Some(gi) = gi {
                    self.accumulate(grads, *image, gi);
                }
                if let Some(gf) = gf {
                    self.accumulate(grads, *flow, gf);
                }
            }
            Op::AvgDownsample2(x) => {
                let g = kernels::avg_downsample2_backward(self.shape(*x), go);
                self.accumulate(grads, *x, g);
            }
            Op::BilinearUpsample2(x) => {
                let g = kernels::bilinear_upsample2_backward(self.shape(*x), go);
                self.accumulate(grads, *x, g);
            }
            Op::Concat(parts) => {
                let s = node.shape;
                let plane = s.plane();
                let mut offset = 0;
                for &p in parts {
                    let c = self.shape(p).c;
                    if self.needs(p) {
                        let mut g = Vec::with_capacity(s.n * c * plane);
                        for n in 0..s.n {
                            let start = (n * s.c + offset) * plane;
                            g.extend_from_slice(&go[start..start + c * plane]);
                        }
                        self.accumulate(grads, p, g);
                    }
                    offset += c;
                }
            }
            Op::Slice { input, start, end } => {
                let s = self.shape(*input);
                let plane = s.plane();
                let width = end - start;
                let mut g = vec![0.0; s.numel()];
                for n in 0..s.n {
                    let dst = (n * s.c + start) * plane;
                    g[dst..dst + width * plane].copy_from_slice(&go[n * width * plane..(n + 1) * width * plane]);
                }
                self.accumulate(grads, *input, g);
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, go.to_vec());
                self.accumulate(grads, *b, go.to_vec());
            }
            Op::Scale(x, f) => {
                let g = go.iter().map(|v| v * f).collect();
                self.accumulate(grads, *x, g);
            }
            Op::Sum(x) => {
                let g = vec![go[0]; self.shape(*x).numel()];
                self.accumulate(grads, *x, g);
            }
            Op::Mse { pred, target } => {
                let count = self.shape(*pred).numel() as f64;
                let k = 2.0 * go[0] / count;
                let g = self
                    .data(*pred)
                    .iter()
                    .zip(self.data(*target))
                    .map(|(p, t)| k * (p - t))
                    .collect();
                self.accumulate(grads, *pred, g);
            }
        }
    }
}
