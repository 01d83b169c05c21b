//! Motion compensation: coarse (x4), fine (x2) and still (x1) flow branches.
//!
//! The fine branch sees the neighbour warped by the coarse flow and the
//! still branch sees it warped by coarse + fine; the three branch outputs
//! are summed and the neighbour is resampled once with the total.

use rand_chacha::ChaCha8Rng;

use crate::engine::{Graph, Var};
use crate::error::{check_dim, Error, Result};
use crate::params::{Bound, ConvLayer, ParamSet};

/// Five 3x3 convs, ReLU between, linear 2-channel output whose weights
/// start at zero.
#[derive(Clone, Debug)]
pub struct FlowEstimator {
    layers: Vec<ConvLayer>,
}

pub const ESTIMATOR_DEPTH: usize = 5;

impl FlowEstimator {
    fn new(params: &mut ParamSet, rng: &mut ChaCha8Rng, name: &str, c_in: usize, hidden: usize) -> Self {
        let mut layers = Vec::with_capacity(ESTIMATOR_DEPTH);
        let mut c = c_in;
        for i in 0..ESTIMATOR_DEPTH {
            let last = i + 1 == ESTIMATOR_DEPTH;
            let c_out = if last { 2 } else { hidden };
            layers.push(ConvLayer::new(
                params,
                rng,
                &format!("{name}.conv{i}"),
                c,
                c_out,
                3,
                last,
            ));
            c = c_out;
        }
        FlowEstimator { layers }
    }

    pub fn forward(&self, g: &mut Graph, b: &Bound, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, b, h)?;
            if i + 1 < self.layers.len() {
                h = g.relu(h);
            }
        }
        Ok(h)
    }

    pub fn output_layer(&self) -> &ConvLayer {
        self.layers.last().expect("estimator has layers")
    }
}

/// Layout of the three estimator networks inside a [`ParamSet`].
#[derive(Clone, Debug)]
pub struct McParams {
    pub coarse: FlowEstimator,
    pub fine: FlowEstimator,
    pub still: FlowEstimator,
}

/// Every intermediate of one compensation pass.
#[derive(Clone, Copy, Debug)]
pub struct Compensation {
    pub warped: Var,
    pub total_flow: Var,
    pub coarse_flow: Var,
    pub fine_flow: Var,
    pub still_flow: Var,
}

fn check_pair(g: &Graph, target: Var, other: Var, op: &'static str) -> Result<()> {
    let a = g.shape(target);
    let b = g.shape(other);
    check_dim(op, "batch", b.n, a.n)?;
    check_dim(op, "channels", b.c, a.c)?;
    check_dim(op, "height", b.h, a.h)?;
    check_dim(op, "width", b.w, a.w)
}

impl McParams {
    pub fn new(params: &mut ParamSet, rng: &mut ChaCha8Rng, hidden: usize) -> Self {
        McParams {
            coarse: FlowEstimator::new(params, rng, "mc.coarse", 2, hidden),
            fine: FlowEstimator::new(params, rng, "mc.fine", 4, hidden),
            still: FlowEstimator::new(params, rng, "mc.still", 2, hidden),
        }
    }

    /// Flow from a x4-reduced pyramid level, returned at full resolution in
    /// full-resolution pixel units.
    pub fn estimate_flow_coarse(&self, g: &mut Graph, b: &Bound, target: Var, neighbor: Var) -> Result<Var> {
        check_pair(g, target, neighbor, "estimate_flow_coarse")?;
        let s = g.shape(target);
        if !s.h.is_multiple_of(4) || !s.w.is_multiple_of(4) {
            return Err(Error::invalid(format!(
                "estimate_flow_coarse: {}x{} is not a multiple of 4",
                s.w, s.h
            )));
        }
        let t2 = g.avg_downsample2(target)?;
        let t4 = g.avg_downsample2(t2)?;
        let n2 = g.avg_downsample2(neighbor)?;
        let n4 = g.avg_downsample2(n2)?;
        let x = g.concat_channels(&[t4, n4])?;
        let low = self.coarse.forward(g, b, x)?;
        let up = g.bilinear_upsample2(low);
        let up = g.scale(up, 2.0);
        let up = g.bilinear_upsample2(up);
        Ok(g.scale(up, 2.0))
    }

    /// Residual flow at half resolution, refining `coarse_flow`.
    pub fn estimate_flow_fine(
        &self,
        g: &mut Graph,
        b: &Bound,
        target: Var,
        neighbor_coarse_warped: Var,
        coarse_flow: Var,
    ) -> Result<Var> {
        check_pair(g, target, neighbor_coarse_warped, "estimate_flow_fine")?;
        let s = g.shape(target);
        let fs = g.shape(coarse_flow);
        check_dim("estimate_flow_fine", "flow channels", fs.c, 2)?;
        check_dim("estimate_flow_fine", "flow height", fs.h, s.h)?;
        check_dim("estimate_flow_fine", "flow width", fs.w, s.w)?;
        let x = g.concat_channels(&[target, neighbor_coarse_warped, coarse_flow])?;
        let x = g.avg_downsample2(x)?;
        let low = self.fine.forward(g, b, x)?;
        let up = g.bilinear_upsample2(low);
        Ok(g.scale(up, 2.0))
    }

    /// Full-resolution residual flow for near-static content.
    pub fn estimate_flow_still(&self, g: &mut Graph, b: &Bound, target: Var, neighbor_fine_warped: Var) -> Result<Var> {
        check_pair(g, target, neighbor_fine_warped, "estimate_flow_still")?;
        let x = g.concat_channels(&[target, neighbor_fine_warped])?;
        self.still.forward(g, b, x)
    }

    /// Warps `neighbor` onto `target`.
    pub fn compensate(&self, g: &mut Graph, b: &Bound, target: Var, neighbor: Var) -> Result<Compensation> {
        let coarse = self.estimate_flow_coarse(g, b, target, neighbor)?;
        let coarse_warped = g.bilinear_sample(neighbor, coarse)?;
        let fine = self.estimate_flow_fine(g, b, target, coarse_warped, coarse)?;
        let cf = g.add(coarse, fine)?;
        let fine_warped = g.bilinear_sample(neighbor, cf)?;
        let still = self.estimate_flow_still(g, b, target, fine_warped)?;
        let total = g.add(cf, still)?;
        let warped = g.bilinear_sample(neighbor, total)?;
        Ok(Compensation {
            warped,
            total_flow: total,
            coarse_flow: coarse,
            fine_flow: fine,
            still_flow: still,
        })
    }
}

/// Elementwise sum of the three branch flows.
pub fn compose_total_flow(g: &mut Graph, coarse: Var, fine: Var, still: Var) -> Result<Var> {
    let cf = g.add(coarse, fine)?;
    g.add(cf, still)
}

/// Sum over neighbours of MSE between the flow-warped raw neighbour and the
/// raw target.
pub fn mc_loss(g: &mut Graph, raw_target: Var, raw_neighbors: &[Var], flows: &[Var]) -> Result<Var> {
    if raw_neighbors.len() != flows.len() {
        return Err(Error::invalid(format!(
            "mc_loss: {} neighbours but {} flows",
            raw_neighbors.len(),
            flows.len()
        )));
    }
    if raw_neighbors.is_empty() {
        return Err(Error::invalid("mc_loss: no neighbours"));
    }
    let mut total: Option<Var> = None;
    for (&nb, &flow) in raw_neighbors.iter().zip(flows) {
        let warped = g.bilinear_sample(nb, flow)?;
        let term = g.mse_loss(warped, raw_target)?;
        total = Some(match total {
            Some(t) => g.add(t, term)?,
            None => term,
        });
    }
    Ok(total.expect("at least one neighbour"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{Shape, Tensor};
    use rand::SeedableRng;

    fn setup(hidden: usize) -> (ParamSet, McParams) {
        let mut ps = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mc = McParams::new(&mut ps, &mut rng, hidden);
        (ps, mc)
    }

    fn frame_var(g: &mut Graph, seed: u64, n: usize, h: usize, w: usize) -> Var {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n * h * w).map(|_| rng.gen::<f64>()).collect();
        g.constant(Shape::new(n, 1, h, w), data).unwrap()
    }

    fn uniform_flow(g: &mut Graph, dx: f64, dy: f64, h: usize, w: usize) -> Var {
        let mut d = vec![dx; h * w];
        d.extend(vec![dy; h * w]);
        g.constant(Shape::new(1, 2, h, w), d).unwrap()
    }

    #[test]
    fn zero_init_branches_give_zero_flow_and_identity() {
        let (ps, mc) = setup(4);
        let mut g = Graph::new();
        let b = ps.bind(&mut g);
        let t = frame_var(&mut g, 1, 2, 8, 8);
        let n = frame_var(&mut g, 2, 2, 8, 8);
        let c = mc.compensate(&mut g, &b, t, n).unwrap();
        for v in [c.coarse_flow, c.fine_flow, c.still_flow, c.total_flow] {
            assert_eq!(g.shape(v), Shape::new(2, 2, 8, 8));
            assert!(g.data(v).iter().all(|&x| x == 0.0));
        }
        assert_eq!(g.data(c.warped), g.data(n));
    }

    #[test]
    fn dimension_checks() {
        let (ps, mc) = setup(4);
        let mut g = Graph::new();
        let b = ps.bind(&mut g);
        let t = frame_var(&mut g, 1, 1, 8, 8);
        let n = frame_var(&mut g, 2, 1, 8, 12);
        assert!(mc.estimate_flow_coarse(&mut g, &b, t, n).is_err());
        let odd = frame_var(&mut g, 3, 1, 6, 6);
        assert!(mc.estimate_flow_coarse(&mut g, &b, odd, odd).is_err());
        assert!(mc.estimate_flow_still(&mut g, &b, t, n).is_err());
    }

    #[test]
    fn composition_sums_branches() {
        let mut g = Graph::new();
        let a = uniform_flow(&mut g, 2.0, 0.0, 4, 4);
        let b = uniform_flow(&mut g, -0.5, 0.0, 4, 4);
        let c = uniform_flow(&mut g, 0.25, 0.0, 4, 4);
        let z = uniform_flow(&mut g, 0.0, 0.0, 4, 4);
        let t = compose_total_flow(&mut g, a, b, c).unwrap();
        assert!(g.data(t)[..16].iter().all(|&v| v == 1.75));
        assert!(g.data(t)[16..].iter().all(|&v| v == 0.0));
        let same = compose_total_flow(&mut g, a, z, z).unwrap();
        assert_eq!(g.data(same), g.data(a));
        let zz = compose_total_flow(&mut g, z, z, z).unwrap();
        assert!(g.data(zz).iter().all(|&v| v == 0.0));
        let bad = uniform_flow(&mut g, 0.0, 0.0, 4, 8);
        assert!(compose_total_flow(&mut g, a, bad, c).is_err());
    }

    #[test]
    fn mc_loss_cases() {
        let mut g = Graph::new();
        let t = frame_var(&mut g, 5, 1, 8, 8);
        let zero = uniform_flow(&mut g, 0.0, 0.0, 8, 8);
        let l = mc_loss(&mut g, t, &[t], &[zero]).unwrap();
        assert_eq!(g.scalar(l), 0.0);

        let n = frame_var(&mut g, 6, 1, 8, 8);
        let l = mc_loss(&mut g, t, &[n], &[zero]).unwrap();
        let plain = g.mse_loss(n, t).unwrap();
        assert_eq!(g.scalar(l), g.scalar(plain));

        assert!(mc_loss(&mut g, t, &[n, n], &[zero]).is_err());
    }

    #[test]
    fn mc_loss_zero_for_aligning_flow() {
        let clip = crate::codec::synth_clip(crate::codec::SynthKind::Translate, 3, 8, 8, 1.0, 3).unwrap();
        let mut g = Graph::new();
        let target = g.leaf(Tensor::from_vec(Shape::new(1, 1, 8, 8), clip.frames[1].data().to_vec()).unwrap());
        let prev = g.leaf(Tensor::from_vec(Shape::new(1, 1, 8, 8), clip.frames[0].data().to_vec()).unwrap());
        // target(x) = prev(x - 1); the leftmost column has no source
        let flow = uniform_flow(&mut g, -1.0, 0.0, 8, 8);
        let warped = g.bilinear_sample(prev, flow).unwrap();
        for y in 0..8 {
            for x in 1..8 {
                assert_eq!(g.data(warped)[y * 8 + x], g.data(target)[y * 8 + x]);
            }
        }
        let l = mc_loss(&mut g, target, &[target], &[flow]).unwrap();
        assert!(g.scalar(l) >= 0.0);
    }
}
