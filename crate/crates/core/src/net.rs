//! Full enhancement network: per-neighbour motion compensation, slow fusion
//! and the residual-slice-block enhancement subnet.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::clip::{frames_to_var, var_to_frames, Frame};
use crate::engine::{Graph, Var};
use crate::error::{check_dim, Error, Result};
use crate::mc::{Compensation, McParams};
use crate::params::{Bound, ConvLayer, ParamSet};

/// Prev-HQF and next-HQF references.
pub const NEIGHBORS: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NetConfig {
    pub channels: usize,
    pub blocks: usize,
    pub slice_split: usize,
    /// Hidden width of each flow estimator.
    pub mc_channels: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            channels: 32,
            blocks: 4,
            slice_split: 16,
            mc_channels: 16,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels < 2 {
            return Err(Error::Config(format!("channels {} must be >= 2", self.channels)));
        }
        if self.slice_split == 0 || self.slice_split >= self.channels {
            return Err(Error::Config(format!(
                "slice_split {} must lie in 1..{}",
                self.slice_split, self.channels
            )));
        }
        if self.blocks == 0 {
            return Err(Error::Config("blocks must be >= 1".into()));
        }
        if self.mc_channels == 0 {
            return Err(Error::Config("mc_channels must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct FusionParams {
    pub lift: ConvLayer,
    pub pair_prev: ConvLayer,
    pub pair_next: ConvLayer,
    pub merge: ConvLayer,
}

#[derive(Clone, Debug)]
pub struct ResSliceBlock {
    pub split: usize,
    pub conv_a: ConvLayer,
    pub conv_b: ConvLayer,
    pub merge: ConvLayer,
}

#[derive(Clone, Debug)]
pub struct EnetParams {
    pub head: ConvLayer,
    pub blocks: Vec<ResSliceBlock>,
    pub tail: ConvLayer,
}

/// Handles into the parameter set for every subnet.
#[derive(Clone, Debug)]
pub struct SdtsParams {
    pub mc: McParams,
    pub fusion: FusionParams,
    pub enet: EnetParams,
}

/// Outputs of [`SdtsParams::sdts_forward`].
#[derive(Clone, Copy, Debug)]
pub struct SdtsOutput {
    pub recon: Var,
    pub prev: Compensation,
    pub next: Compensation,
}

impl SdtsParams {
    pub fn new(params: &mut ParamSet, rng: &mut ChaCha8Rng, cfg: &NetConfig) -> Self {
        let mc = McParams::new(params, rng, cfg.mc_channels);
        let c = cfg.channels;
        let fusion = FusionParams {
            lift: ConvLayer::new(params, rng, "fusion.lift", 1, c, 3, false),
            pair_prev: ConvLayer::new(params, rng, "fusion.pair_prev", 2 * c, c, 3, false),
            pair_next: ConvLayer::new(params, rng, "fusion.pair_next", 2 * c, c, 3, false),
            merge: ConvLayer::new(params, rng, "fusion.merge", 2 * c, c, 3, false),
        };
        let head = ConvLayer::new(params, rng, "enet.head", c, c, 3, false);
        let long = c - cfg.slice_split;
        let blocks = (0..cfg.blocks)
            .map(|i| ResSliceBlock {
                split: cfg.slice_split,
                conv_a: ConvLayer::new(params, rng, &format!("enet.block{i}.conv_a"), long, long, 3, false),
                conv_b: ConvLayer::new(params, rng, &format!("enet.block{i}.conv_b"), long, long, 3, false),
                merge: ConvLayer::new(params, rng, &format!("enet.block{i}.merge"), c, c, 1, false),
            })
            .collect();
        let tail = ConvLayer::new(params, rng, "enet.tail", c, 1, 3, true);
        SdtsParams {
            mc,
            fusion,
            enet: EnetParams { head, blocks, tail },
        }
    }

    /// Hierarchical merge: lift each frame, fuse (prev, target) and
    /// (target, next), then fuse the two pair features.
    pub fn slow_fuse(&self, g: &mut Graph, b: &Bound, target: Var, warped_prev: Var, warped_next: Var) -> Result<Var> {
        let ts = g.shape(target);
        for v in [warped_prev, warped_next] {
            let s = g.shape(v);
            check_dim("slow_fuse", "batch", s.n, ts.n)?;
            check_dim("slow_fuse", "channels", s.c, ts.c)?;
            check_dim("slow_fuse", "height", s.h, ts.h)?;
            check_dim("slow_fuse", "width", s.w, ts.w)?;
        }
        let f = &self.fusion;
        let lift = |g: &mut Graph, x: Var| -> Result<Var> {
            let h = f.lift.forward(g, b, x)?;
            Ok(g.relu(h))
        };
        let lp = lift(g, warped_prev)?;
        let lt = lift(g, target)?;
        let ln = lift(g, warped_next)?;
        let x = g.concat_channels(&[lp, lt])?;
        let a = f.pair_prev.forward(g, b, x)?;
        let a = g.relu(a);
        let x = g.concat_channels(&[lt, ln])?;
        let c = f.pair_next.forward(g, b, x)?;
        let c = g.relu(c);
        let x = g.concat_channels(&[a, c])?;
        let m = f.merge.forward(g, b, x)?;
        Ok(g.relu(m))
    }

    pub fn enet_forward(&self, g: &mut Graph, b: &Bound, fused: Var, target: Var) -> Result<Var> {
        let fs = g.shape(fused);
        let ts = g.shape(target);
        check_dim("enet_forward", "channels", fs.c, self.enet.head.c_in)?;
        check_dim("enet_forward", "height", ts.h, fs.h)?;
        check_dim("enet_forward", "width", ts.w, fs.w)?;
        let h = self.enet.head.forward(g, b, fused)?;
        let mut h = g.relu(h);
        for block in &self.enet.blocks {
            h = block.forward(g, b, h)?;
        }
        let residual = self.enet.tail.forward(g, b, h)?;
        g.add(residual, target)
    }

    /// Compensates both references onto `target`, fuses and enhances.
    pub fn sdts_forward(&self, g: &mut Graph, b: &Bound, prev: Var, target: Var, next: Var) -> Result<SdtsOutput> {
        let cp = self.mc.compensate(g, b, target, prev)?;
        let cn = self.mc.compensate(g, b, target, next)?;
        let fused = self.slow_fuse(g, b, target, cp.warped, cn.warped)?;
        let recon = self.enet_forward(g, b, fused, target)?;
        Ok(SdtsOutput {
            recon,
            prev: cp,
            next: cn,
        })
    }
}

impl ResSliceBlock {
    /// Only the channels past `split` go through the conv stages; the rest
    /// bypass them and rejoin at the concatenation.
    pub fn forward(&self, g: &mut Graph, b: &Bound, x: Var) -> Result<Var> {
        check_dim("res_slice_block", "channels", g.shape(x).c, self.merge.c_in)?;
        let (short, long) = g.slice_channels(x, self.split)?;
        let l = self.conv_a.forward(g, b, long)?;
        let l = g.relu(l);
        let l = self.conv_b.forward(g, b, l)?;
        let l = g.relu(l);
        let cat = g.concat_channels(&[short, l])?;
        let merged = self.merge.forward(g, b, cat)?;
        g.add(merged, x)
    }
}

/// Parameters plus architecture for one model variant.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: NetConfig,
    pub params: ParamSet,
    pub net: SdtsParams,
}

impl Model {
    /// Glorot-initialised weights, zero biases; the flow-estimator output
    /// layers and the enhancement tail start at zero so the untrained model
    /// is the identity on the target frame.
    pub fn new(config: NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let net = SdtsParams::new(&mut params, &mut rng, &config);
        Ok(Model { config, params, net })
    }

    pub fn is_mc_param(name: &str) -> bool {
        name.starts_with("mc.")
    }

    /// Enhances one target frame given its two reference frames (8-bit units).
    pub fn enhance(&self, prev: &Frame, target: &Frame, next: &Frame) -> Result<Frame> {
        target.same_dims(prev, "enhance")?;
        target.same_dims(next, "enhance")?;
        let mut g = Graph::new();
        let b = self.params.bind(&mut g);
        let p = frames_to_var(&mut g, &[prev])?;
        let t = frames_to_var(&mut g, &[target])?;
        let n = frames_to_var(&mut g, &[next])?;
        let out = self.net.sdts_forward(&mut g, &b, p, t, n)?;
        Ok(var_to_frames(&g, out.recon)?.remove(0))
    }

    /// Warped neighbour and total flow for one target/neighbour pair.
    pub fn compensate_frame(&self, target: &Frame, neighbor: &Frame) -> Result<(Frame, Vec<f64>)> {
        target.same_dims(neighbor, "compensate")?;
        let mut g = Graph::new();
        let b = self.params.bind(&mut g);
        let t = frames_to_var(&mut g, &[target])?;
        let n = frames_to_var(&mut g, &[neighbor])?;
        let c = self.net.mc.compensate(&mut g, &b, t, n)?;
        let warped = var_to_frames(&g, c.warped)?.remove(0);
        Ok((warped, g.data(c.total_flow).to_vec()))
    }
}
