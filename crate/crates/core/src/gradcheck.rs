//! Central finite-difference checks of analytic gradients.
//!
//! [`op_suite`] covers every differentiable graph op; [`network_suite`]
//! covers motion compensation and the full forward pass with the joint
//! loss, on 8×8 fixtures with every parameter randomised.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::engine::{Graph, Shape, Tensor, Var};
use crate::error::Result;
use crate::mc::mc_loss;
use crate::net::{Model, NetConfig};
use crate::params::{Bound, ParamSet};

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-6;
/// Denominator floor so gradients that are zero up to rounding compare
/// absolutely.
const FLOOR: f64 = 1e-4;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Report {
    pub checked: usize,
    /// Coordinates whose one-sided slopes disagree (a kink lies within
    /// one step).
    pub skipped: usize,
    pub worst: f64,
}

impl Report {
    /// Within tolerance, something was checked, and at most 5% of the
    /// coordinates were skipped.
    pub fn passed(&self) -> bool {
        self.checked > 0 && self.skipped * 20 <= self.checked + self.skipped && self.worst <= TOLERANCE
    }

    fn compare(&mut self, analytic: f64, f0: f64, fp: f64, fm: f64) {
        let central = (fp - fm) / (2.0 * STEP);
        let fwd = (fp - f0) / STEP;
        let bwd = (f0 - fm) / STEP;
        // smooth points differ by about STEP·f'', far below this
        if (fwd - bwd).abs() > 1e-3 * fwd.abs().max(bwd.abs()).max(1.0) {
            self.skipped += 1;
            return;
        }
        let rel = (analytic - central).abs() / analytic.abs().max(central.abs()).max(FLOOR);
        self.checked += 1;
        self.worst = self.worst.max(rel);
    }
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: Shape, lo: f64, hi: f64) -> Tensor {
    let data = (0..shape.numel()).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::from_vec(shape, data).expect("length matches shape")
}

/// Checks d loss / d leaf for every element of every leaf.
pub fn check_leaves(leaves: &[Tensor], f: impl Fn(&mut Graph, &[Var]) -> Result<Var>) -> Result<Report> {
    let eval = |ts: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ts.iter().map(|t| g.leaf_ref(t)).collect();
        let loss = f(&mut g, &vars)?;
        Ok(g.scalar(loss))
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = leaves.iter().map(|t| g.leaf(t.clone().with_grad())).collect();
    let loss = f(&mut g, &vars)?;
    let f0 = g.scalar(loss);
    let mut grads = g.backward(loss)?;
    let mut report = Report::default();
    let mut work = leaves.to_vec();
    for (li, v) in vars.iter().enumerate() {
        let grad = grads.take(*v).unwrap_or_else(|| vec![0.0; leaves[li].data().len()]);
        for (j, &a) in grad.iter().enumerate() {
            let x = leaves[li].data()[j];
            work[li].data_mut()[j] = x + STEP;
            let fp = eval(&work)?;
            work[li].data_mut()[j] = x - STEP;
            let fm = eval(&work)?;
            work[li].data_mut()[j] = x;
            report.compare(a, f0, fp, fm);
        }
    }
    Ok(report)
}

type ModelLoss<'a> = dyn Fn(&Model, &mut Graph, &Bound, &[Var]) -> Result<Var> + 'a;

/// Checks every parameter element of `model` and the first `n_diff`
/// inputs; the remaining inputs enter as constants.
pub fn check_model(model: &Model, inputs: &[Tensor], n_diff: usize, f: &ModelLoss) -> Result<Report> {
    let eval = |params: &ParamSet, ins: &[Tensor]| -> Result<f64> {
        let mut m = model.clone();
        m.params = params.clone();
        let mut g = Graph::new();
        let b = m.params.bind(&mut g);
        let vars: Vec<Var> = ins.iter().map(|t| g.leaf_ref(t)).collect();
        let loss = f(&m, &mut g, &b, &vars)?;
        Ok(g.scalar(loss))
    };
    let mut m = model.clone();
    m.params.set_trainable(|_| true);
    let mut g = Graph::new();
    let b = m.params.bind(&mut g);
    let in_vars: Vec<Var> = inputs
        .iter()
        .enumerate()
        .map(|(k, t)| {
            if k < n_diff {
                g.leaf(t.clone().with_grad())
            } else {
                g.leaf_ref(t)
            }
        })
        .collect();
    let loss = f(&m, &mut g, &b, &in_vars)?;
    let f0 = g.scalar(loss);
    let mut grads = g.backward(loss)?;
    m.params.store_grads(&mut grads, &b)?;

    let mut report = Report::default();
    let mut params = model.params.clone();
    for i in 0..params.len() {
        let analytic = m.params.tensor(i).grad().expect("stored above").to_vec();
        for (j, &a) in analytic.iter().enumerate() {
            let x = params.tensor(i).data()[j];
            params.tensor_mut(i).data_mut()[j] = x + STEP;
            let fp = eval(&params, inputs)?;
            params.tensor_mut(i).data_mut()[j] = x - STEP;
            let fm = eval(&params, inputs)?;
            params.tensor_mut(i).data_mut()[j] = x;
            report.compare(a, f0, fp, fm);
        }
    }
    let mut work = inputs.to_vec();
    for (k, v) in in_vars.iter().enumerate().take(n_diff) {
        let grad = grads.take(*v).unwrap_or_else(|| vec![0.0; inputs[k].data().len()]);
        for (j, &a) in grad.iter().enumerate() {
            let x = inputs[k].data()[j];
            work[k].data_mut()[j] = x + STEP;
            let fp = eval(&model.params, &work)?;
            work[k].data_mut()[j] = x - STEP;
            let fm = eval(&model.params, &work)?;
            work[k].data_mut()[j] = x;
            report.compare(a, f0, fp, fm);
        }
    }
    Ok(report)
}

/// mse against a fixed random target turns any op output into a scalar
/// with a non-trivial upstream gradient.
fn mse_head(g: &mut Graph, out: Var) -> Result<Var> {
    let s = g.shape(out);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let t = random_tensor(&mut rng, s, -1.0, 1.0);
    let t = g.constant(s, t.into_data())?;
    g.mse_loss(out, t)
}

pub fn op_suite() -> Result<Vec<(String, Report)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut out = Vec::new();
    for (stride, pad, k, h, w) in [(1, 1, 3, 6, 5), (2, 1, 3, 8, 8), (1, 0, 1, 4, 4), (2, 2, 5, 7, 6)] {
        let x = random_tensor(&mut rng, Shape::new(2, 3, h, w), -1.0, 1.0);
        let wt = random_tensor(&mut rng, Shape::new(2, 3, k, k), -0.5, 0.5);
        let b = random_tensor(&mut rng, Shape::new(1, 2, 1, 1), -0.5, 0.5);
        let r = check_leaves(&[x, wt, b], |g, v| {
            let y = g.conv2d(v[0], v[1], v[2], stride, pad)?;
            mse_head(g, y)
        })?;
        out.push((format!("conv2d k{k} stride{stride} pad{pad}"), r));
    }

    let x = random_tensor(&mut rng, Shape::new(1, 2, 5, 5), -1.0, 1.0);
    let wt = random_tensor(&mut rng, Shape::new(3, 2, 3, 3), -0.5, 0.5);
    let b = Tensor::zeros(Shape::new(1, 3, 1, 1));
    let r = check_leaves(&[x, wt, b], |g, v| {
        let y = g.conv2d(v[0], v[1], v[2], 1, 1)?;
        Ok(g.sum(y))
    })?;
    out.push(("sum(conv2d)".into(), r));

    let mut x = random_tensor(&mut rng, Shape::new(1, 2, 4, 4), -1.0, 1.0);
    for v in x.data_mut() {
        if v.abs() < 1e-3 {
            *v = 0.5;
        }
    }
    let r = check_leaves(&[x], |g, v| {
        let y = g.relu(v[0]);
        mse_head(g, y)
    })?;
    out.push(("relu".into(), r));

    // flows up to ±2.3 px: mostly interior samples plus some border clamps
    let img = random_tensor(&mut rng, Shape::new(2, 2, 6, 7), 0.0, 1.0);
    let flow = random_tensor(&mut rng, Shape::new(2, 2, 6, 7), -2.3, 2.3);
    let r = check_leaves(&[img, flow], |g, v| {
        let y = g.bilinear_sample(v[0], v[1])?;
        mse_head(g, y)
    })?;
    out.push(("bilinear_sample".into(), r));

    let x = random_tensor(&mut rng, Shape::new(2, 2, 8, 6), -1.0, 1.0);
    let r = check_leaves(&[x], |g, v| {
        let y = g.avg_downsample2(v[0])?;
        mse_head(g, y)
    })?;
    out.push(("avg_downsample2".into(), r));

    for shape in [Shape::new(1, 2, 3, 4), Shape::new(1, 1, 1, 3)] {
        let x = random_tensor(&mut rng, shape, -1.0, 1.0);
        let r = check_leaves(&[x], |g, v| {
            let y = g.bilinear_upsample2(v[0]);
            mse_head(g, y)
        })?;
        out.push((format!("bilinear_upsample2 {shape}"), r));
    }

    let a = random_tensor(&mut rng, Shape::new(1, 2, 3, 3), -1.0, 1.0);
    let b = random_tensor(&mut rng, Shape::new(1, 3, 3, 3), -1.0, 1.0);
    let r = check_leaves(&[a.clone(), b], |g, v| {
        let c = g.concat_channels(&[v[0], v[1], v[0]])?;
        let (lo, hi) = g.slice_channels(c, 4)?;
        let lo = g.scale(lo, -1.5);
        let hi_head = mse_head(g, hi)?;
        let lo_head = mse_head(g, lo)?;
        g.add(hi_head, lo_head)
    })?;
    out.push(("concat/slice/scale/add".into(), r));

    let c = random_tensor(&mut rng, Shape::new(1, 2, 3, 3), -1.0, 1.0);
    let r = check_leaves(&[a, c], |g, v| {
        let s = g.add(v[0], v[1])?;
        let s = g.add(s, v[0])?;
        mse_head(g, s)
    })?;
    out.push(("add with reuse".into(), r));

    let x = random_tensor(&mut rng, Shape::new(2, 1, 3, 3), -1.0, 1.0);
    let r = check_leaves(&[x], |g, v| mse_head(g, v[0]))?;
    out.push(("mse_loss".into(), r));
    Ok(out)
}

pub fn small_net() -> NetConfig {
    NetConfig {
        channels: 4,
        blocks: 2,
        slice_split: 2,
        mc_channels: 3,
    }
}

/// Model with every parameter randomised, including the zero-initialised
/// output layers, so no path has a trivially zero gradient.
pub fn randomised_model(seed: u64) -> Result<Model> {
    let mut model = Model::new(small_net(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    for i in 0..model.params.len() {
        // flow outputs are in pixels: keep them small so samples stay interior
        let amp = if model.params.names()[i].starts_with("mc.") {
            0.15
        } else {
            0.4
        };
        for v in model.params.tensor_mut(i).data_mut() {
            *v = rng.gen_range(-amp..amp);
        }
    }
    Ok(model)
}

fn frames(seed: u64, n: usize) -> Vec<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| random_tensor(&mut rng, Shape::new(1, 1, 8, 8), 0.1, 0.9))
        .collect()
}

pub fn network_suite() -> Result<Vec<(String, Report)>> {
    let mut out = Vec::new();
    let model = randomised_model(11)?;
    // inputs: target, neighbour (differentiable), raw target (constant)
    let r = check_model(&model, &frames(12, 3), 2, &|m, g, b, v| {
        let c = m.net.mc.compensate(g, b, v[0], v[1])?;
        mc_loss(g, v[2], &[v[1]], &[c.total_flow])
    })?;
    out.push(("compensate + mc_loss".into(), r));

    let model = randomised_model(21)?;
    // inputs: prev, target, next (differentiable), raw target/prev/next
    let r = check_model(&model, &frames(22, 6), 3, &|m, g, b, v| {
        let o = m.net.sdts_forward(g, b, v[0], v[1], v[2])?;
        let me = mc_loss(g, v[3], &[v[4], v[5]], &[o.prev.total_flow, o.next.total_flow])?;
        let enet = g.mse_loss(o.recon, v[3])?;
        let enet = g.scale(enet, 0.01);
        g.add(me, enet)
    })?;
    out.push(("sdts_forward joint loss".into(), r));
    Ok(out)
}
