//! Named parameter storage and the conv layer handle used by every subnet.

use rand_chacha::ChaCha8Rng;

use crate::engine::{init, Gradients, Graph, Shape, Tensor, Var};
use crate::error::{Error, Result};

/// Ordered, named parameter tensors. Order is insertion order and is part
/// of the checkpoint layout.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

/// Graph handles for every entry of a [`ParamSet`], same order.
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: usize) -> Var {
        self.vars[id]
    }
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) -> usize {
        self.names.push(name.into());
        self.tensors.push(tensor);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index_of(name).map(move |i| &mut self.tensors[i])
    }

    pub fn tensor(&self, id: usize) -> &Tensor {
        &self.tensors[id]
    }

    pub fn tensor_mut(&mut self, id: usize) -> &mut Tensor {
        &mut self.tensors[id]
    }

    /// Sets `requires_grad` on every entry by name predicate.
    pub fn set_trainable(&mut self, pred: impl Fn(&str) -> bool) {
        for (name, t) in self.names.iter().zip(&mut self.tensors) {
            t.set_requires_grad(pred(name));
            if !t.requires_grad() {
                t.clear_grad();
            }
        }
    }

    pub fn bind(&self, g: &mut Graph) -> Bound {
        Bound {
            vars: self.tensors.iter().map(|t| g.leaf_ref(t)).collect(),
        }
    }

    /// Moves leaf gradients out of `grads` into the trainable tensors.
    pub fn store_grads(&mut self, grads: &mut Gradients, bound: &Bound) -> Result<()> {
        for (t, &v) in self.tensors.iter_mut().zip(&bound.vars) {
            if !t.requires_grad() {
                continue;
            }
            let g = grads.take(v).unwrap_or_else(|| vec![0.0; t.data().len()]);
            t.set_grad(g)?;
        }
        Ok(())
    }

    pub fn trainable_mut(&mut self) -> Vec<&mut Tensor> {
        self.tensors.iter_mut().filter(|t| t.requires_grad()).collect()
    }

    /// Copies values of every entry whose name exists in `src`.
    /// Shapes must agree.
    pub fn load_from(&mut self, src: &ParamSet) -> Result<usize> {
        let mut copied = 0;
        for (name, t) in self.names.iter().zip(&mut self.tensors) {
            if let Some(s) = src.get(name) {
                if s.shape() != t.shape() {
                    return Err(Error::Checkpoint(format!(
                        "parameter {name}: stored shape {} does not match {}",
                        s.shape(),
                        t.shape()
                    )));
                }
                t.data_mut().copy_from_slice(s.data());
                copied += 1;
            }
        }
        Ok(copied)
    }

    /// Copy of the entries accepted by `pred`, frozen and without gradients.
    pub fn filtered(&self, pred: impl Fn(&str) -> bool) -> ParamSet {
        let mut out = ParamSet::new();
        for (n, t) in self.iter() {
            if pred(n) {
                let mut t = t.clone();
                t.clear_grad();
                t.set_requires_grad(false);
                out.push(n, t);
            }
        }
        out
    }
}

/// Square-kernel, stride-1, same-size convolution.
#[derive(Clone, Copy, Debug)]
pub struct ConvLayer {
    pub weight: usize,
    pub bias: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
}

impl ConvLayer {
    pub fn new(
        params: &mut ParamSet,
        rng: &mut ChaCha8Rng,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        zero_init: bool,
    ) -> Self {
        let w = if zero_init {
            Tensor::zeros(Shape::new(c_out, c_in, k, k))
        } else {
            init::glorot_conv(rng, c_out, c_in, k)
        };
        let b = Tensor::zeros(init::bias_shape(c_out));
        ConvLayer {
            weight: params.push(format!("{name}.weight"), w),
            bias: params.push(format!("{name}.bias"), b),
            c_in,
            c_out,
            k,
        }
    }

    pub fn forward(&self, g: &mut Graph, bound: &Bound, x: Var) -> Result<Var> {
        g.conv2d(x, bound.var(self.weight), bound.var(self.bias), 1, (self.k - 1) / 2)
    }
}
