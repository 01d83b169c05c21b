//! Three-phase training, frame routing and training-pair sampling.
//!
//! Phase 1 fits the flow estimators with the warped-raw-neighbour loss,
//! phase 2 fits fusion and enhancement with the estimators frozen, and
//! phase 3 fine-tunes everything on `L_ME + λ₂·L_ENet`. Epochs are counted
//! globally across the three phases so the learning-rate schedule is a
//! single function of the epoch index.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Checkpoint;
use crate::clip::{frames_to_var, Clip, Frame, Label};
use crate::engine::{AdamState, Graph, Var};
use crate::error::{Error, Result};
use crate::mc::mc_loss;
use crate::net::{Model, NetConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    Mc,
    Lqf,
    Hqf,
}

impl Variant {
    pub fn for_label(label: Label) -> Self {
        match label {
            Label::Hqf => Variant::Hqf,
            Label::Lqf => Variant::Lqf,
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            Variant::Mc => 0,
            Variant::Lqf => 1,
            Variant::Hqf => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Variant::Mc),
            1 => Ok(Variant::Lqf),
            2 => Ok(Variant::Hqf),
            t => Err(Error::Checkpoint(format!("unknown variant tag {t}"))),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Mc => "mc",
            Variant::Lqf => "lqf",
            Variant::Hqf => "hqf",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mc" => Ok(Variant::Mc),
            "lqf" => Ok(Variant::Lqf),
            "hqf" => Ok(Variant::Hqf),
            other => Err(Error::Config(format!("unknown variant {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub decay_epoch: usize,
    pub decay_factor: f64,
    pub total_epochs: usize,
    pub lambda2: f64,
    pub patch_size: usize,
    pub seed: u64,
    /// Epochs spent in phases 1, 2 and 3; must sum to `total_epochs`.
    pub phase_epochs: [usize; 3],
    pub steps_per_epoch: usize,
    pub period: usize,
    /// Frame class the trained model serves (lqf or hqf).
    pub variant: Variant,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 8,
            lr: 1e-4,
            decay_epoch: 10,
            decay_factor: 10.0,
            total_epochs: 30,
            lambda2: 0.01,
            patch_size: 32,
            seed: 0,
            phase_epochs: [10, 10, 10],
            steps_per_epoch: 24,
            period: 4,
            variant: Variant::Lqf,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !self.lr.is_finite() || self.lr < 0.0 {
            return bad(format!("lr {} must be a finite non-negative number", self.lr));
        }
        if self.decay_factor.is_nan() || self.decay_factor <= 0.0 {
            return bad(format!("decay_factor {} must be positive", self.decay_factor));
        }
        if self.lambda2.is_nan() || self.lambda2 <= 0.0 {
            return bad(format!("lambda2 {} must be positive", self.lambda2));
        }
        if self.patch_size == 0 || !self.patch_size.is_multiple_of(4) {
            return bad(format!(
                "patch_size {} must be a positive multiple of 4",
                self.patch_size
            ));
        }
        if self.phase_epochs.iter().sum::<usize>() != self.total_epochs {
            return bad(format!(
                "phase epochs {:?} do not sum to total_epochs {}",
                self.phase_epochs, self.total_epochs
            ));
        }
        if self.steps_per_epoch == 0 {
            return bad("steps_per_epoch must be >= 1".into());
        }
        if self.period < 2 {
            return bad(format!("period {} must be >= 2", self.period));
        }
        if self.variant == Variant::Mc {
            return bad("training variant must be lqf or hqf".into());
        }
        Ok(())
    }

    /// Global epoch range of phase `phase` (1-based).
    pub fn phase_range(&self, phase: usize) -> std::ops::Range<usize> {
        let start: usize = self.phase_epochs[..phase - 1].iter().sum();
        start..start + self.phase_epochs[phase - 1]
    }
}

/// Step decay: `lr` before `decay_epoch`, `lr / decay_factor` from then on.
pub fn lr_schedule(epoch: usize, cfg: &TrainConfig) -> Result<f64> {
    if epoch >= cfg.total_epochs {
        return Err(Error::invalid(format!(
            "epoch {epoch} is past the end of training ({} epochs)",
            cfg.total_epochs
        )));
    }
    if epoch < cfg.decay_epoch {
        Ok(cfg.lr)
    } else {
        Ok(cfg.lr / cfg.decay_factor)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Route {
    pub model: Variant,
    pub prev: usize,
    pub next: usize,
}

/// Picks the model and the nearest HQF references for frame `index`.
/// Missing references at the clip ends fall back to the nearest HQF on the
/// other side (or the frame itself at index 0).
pub fn route_frame(index: usize, period: usize, n_frames: usize) -> Result<Route> {
    if period == 0 {
        return Err(Error::invalid("route_frame: period must be positive"));
    }
    if index >= n_frames {
        return Err(Error::invalid(format!(
            "route_frame: index {index} out of range for {n_frames} frames"
        )));
    }
    let last_hqf = period * ((n_frames - 1) / period);
    if index.is_multiple_of(period) {
        let prev = index.checked_sub(period).unwrap_or(index);
        let next = (index + period).min(last_hqf);
        return Ok(Route {
            model: Variant::Hqf,
            prev,
            next,
        });
    }
    let prev = period * ((index - 1) / period);
    let next = (period * (index + 1).div_ceil(period)).min(last_hqf);
    Ok(Route {
        model: Variant::Lqf,
        prev,
        next,
    })
}

/// Co-located patches for one training sample.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingPair {
    pub target_index: usize,
    pub prev_index: usize,
    pub next_index: usize,
    pub origin: (usize, usize),
    pub label: Label,
    pub raw_target: Frame,
    pub target: Frame,
    pub prev: Frame,
    pub next: Frame,
    pub raw_prev: Frame,
    pub raw_next: Frame,
}

/// Random-access source of seeded training pairs for one model variant.
/// Pair `i` depends only on (seed, i), so phases run separately draw the
/// same samples as a combined run.
pub struct TrainingData<'a> {
    raw: &'a Clip,
    degraded: &'a Clip,
    candidates: Vec<usize>,
    seed: u64,
    patch: usize,
    period: usize,
}

pub fn build_pairs<'a>(raw: &'a Clip, degraded: &'a Clip, cfg: &TrainConfig) -> Result<TrainingData<'a>> {
    raw.check_aligned(degraded, "build_pairs")?;
    if raw.len() < cfg.period + 1 {
        return Err(Error::invalid(format!(
            "build_pairs: clip has {} frames, need at least period + 1 = {}",
            raw.len(),
            cfg.period + 1
        )));
    }
    let (w, h) = raw.dims().expect("non-empty");
    if cfg.patch_size > w || cfg.patch_size > h {
        return Err(Error::invalid(format!(
            "build_pairs: patch {} larger than frame {w}x{h}",
            cfg.patch_size
        )));
    }
    let mut candidates = Vec::new();
    for i in 0..raw.len() {
        if route_frame(i, cfg.period, raw.len())?.model == cfg.variant {
            candidates.push(i);
        }
    }
    if candidates.is_empty() {
        return Err(Error::invalid(format!(
            "build_pairs: clip has no {} frames",
            cfg.variant
        )));
    }
    Ok(TrainingData {
        raw,
        degraded,
        candidates,
        seed: cfg.seed,
        patch: cfg.patch_size,
        period: cfg.period,
    })
}

impl<'a> TrainingData<'a> {
    pub fn pair(&self, index: u64) -> TrainingPair {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        let t = self.candidates[rng.gen_range(0..self.candidates.len())];
        let (w, h) = self.raw.dims().expect("non-empty");
        let ox = rng.gen_range(0..=w - self.patch);
        let oy = rng.gen_range(0..=h - self.patch);
        let r = route_frame(t, self.period, self.raw.len()).expect("candidate index in range");
        let crop = |f: &Frame| f.crop(ox, oy, self.patch, self.patch).expect("patch inside frame");
        TrainingPair {
            target_index: t,
            prev_index: r.prev,
            next_index: r.next,
            origin: (ox, oy),
            label: self.degraded.labels[t],
            raw_target: crop(&self.raw.frames[t]),
            target: crop(&self.degraded.frames[t]),
            prev: crop(&self.degraded.frames[r.prev]),
            next: crop(&self.degraded.frames[r.next]),
            raw_prev: crop(&self.raw.frames[r.prev]),
            raw_next: crop(&self.raw.frames[r.next]),
        }
    }

    /// Infinite deterministic stream starting at pair 0.
    pub fn stream(&self) -> impl Iterator<Item = TrainingPair> + '_ {
        (0u64..).map(move |i| self.pair(i))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRow {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub loss_me: f64,
    pub loss_enet: f64,
    pub loss_total: f64,
}

/// Per-step losses. Terms that are not part of a phase's objective are
/// logged as zero, so `loss_total == loss_me + λ₂·loss_enet` on every row.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossLog {
    pub rows: Vec<LossRow>,
}

pub const LOSS_LOG_HEADER: &str = "step,epoch,lr,loss_me,loss_enet,loss_total";

impl LossLog {
    pub fn to_csv(&self) -> String {
        let mut s = format!("{LOSS_LOG_HEADER}\n");
        for r in &self.rows {
            // `{}` prints the shortest representation that round-trips
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.step, r.epoch, r.lr, r.loss_me, r.loss_enet, r.loss_total
            ));
        }
        s
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(LOSS_LOG_HEADER) {
            return Err(Error::invalid("loss log: missing header"));
        }
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(Error::invalid(format!("loss log line {}: expected 6 fields", i + 2)));
            }
            let num = |s: &str| -> Result<f64> {
                s.parse()
                    .map_err(|_| Error::invalid(format!("loss log line {}: bad number {s:?}", i + 2)))
            };
            let int = |s: &str| -> Result<usize> {
                s.parse()
                    .map_err(|_| Error::invalid(format!("loss log line {}: bad integer {s:?}", i + 2)))
            };
            rows.push(LossRow {
                step: int(f[0])?,
                epoch: int(f[1])?,
                lr: num(f[2])?,
                loss_me: num(f[3])?,
                loss_enet: num(f[4])?,
                loss_total: num(f[5])?,
            });
        }
        Ok(LossLog { rows })
    }

    pub fn last_good(&self) -> String {
        self.rows
            .last()
            .map(|r| format!("step {} (epoch {}, loss {})", r.step, r.epoch, r.loss_total))
            .unwrap_or_else(|| "none".into())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Phase {
    Motion,
    Enhance,
    Joint,
}

struct StepLoss {
    me: f64,
    enet: f64,
    total: f64,
}

fn batch_loss(model: &mut Model, pairs: &[TrainingPair], phase: Phase, lambda2: f64) -> Result<StepLoss> {
    let mut g = Graph::new();
    let b = model.params.bind(&mut g);
    let stack = |g: &mut Graph, pick: fn(&TrainingPair) -> &Frame| -> Result<Var> {
        let frames: Vec<&Frame> = pairs.iter().map(pick).collect();
        frames_to_var(g, &frames)
    };
    let target = stack(&mut g, |p| &p.target)?;
    let prev = stack(&mut g, |p| &p.prev)?;
    let next = stack(&mut g, |p| &p.next)?;
    let raw_target = stack(&mut g, |p| &p.raw_target)?;

    let (loss, me, enet) = match phase {
        Phase::Motion => {
            let raw_prev = stack(&mut g, |p| &p.raw_prev)?;
            let raw_next = stack(&mut g, |p| &p.raw_next)?;
            let cp = model.net.mc.compensate(&mut g, &b, target, prev)?;
            let cn = model.net.mc.compensate(&mut g, &b, target, next)?;
            let me = mc_loss(
                &mut g,
                raw_target,
                &[raw_prev, raw_next],
                &[cp.total_flow, cn.total_flow],
            )?;
            (me, g.scalar(me), 0.0)
        }
        Phase::Enhance => {
            let out = model.net.sdts_forward(&mut g, &b, prev, target, next)?;
            let enet = g.mse_loss(out.recon, raw_target)?;
            let weighted = g.scale(enet, lambda2);
            (weighted, 0.0, g.scalar(enet))
        }
        Phase::Joint => {
            let raw_prev = stack(&mut g, |p| &p.raw_prev)?;
            let raw_next = stack(&mut g, |p| &p.raw_next)?;
            let out = model.net.sdts_forward(&mut g, &b, prev, target, next)?;
            let me = mc_loss(
                &mut g,
                raw_target,
                &[raw_prev, raw_next],
                &[out.prev.total_flow, out.next.total_flow],
            )?;
            let enet = g.mse_loss(out.recon, raw_target)?;
            let weighted = g.scale(enet, lambda2);
            let total = g.add(me, weighted)?;
            (total, g.scalar(me), g.scalar(enet))
        }
    };
    let total = g.scalar(loss);
    if !total.is_finite() {
        return Ok(StepLoss { me, enet, total });
    }
    let mut grads = g.backward(loss)?;
    model.params.store_grads(&mut grads, &b)?;
    Ok(StepLoss { me, enet, total })
}

/// Optimises the trainable subset of `model` over the epochs of `phase`.
/// `observer` sees every logged row and may stop training early by
/// returning `false`.
fn run_phase(
    model: &mut Model,
    data: &TrainingData,
    cfg: &TrainConfig,
    phase: Phase,
    epochs: std::ops::Range<usize>,
    log: &mut LossLog,
    observer: &mut dyn FnMut(&LossRow) -> bool,
) -> Result<()> {
    match phase {
        Phase::Motion => model.params.set_trainable(Model::is_mc_param),
        Phase::Enhance => model.params.set_trainable(|n| !Model::is_mc_param(n)),
        Phase::Joint => model.params.set_trainable(|_| true),
    }
    let mut adam = AdamState::new(cfg.lr);
    for epoch in epochs {
        adam.lr = lr_schedule(epoch, cfg)?;
        for s in 0..cfg.steps_per_epoch {
            let step = epoch * cfg.steps_per_epoch + s;
            let first = (step * cfg.batch_size) as u64;
            let pairs: Vec<TrainingPair> = (0..cfg.batch_size as u64).map(|j| data.pair(first + j)).collect();
            let l = batch_loss(model, &pairs, phase, cfg.lambda2)?;
            if !l.total.is_finite() || !l.me.is_finite() || !l.enet.is_finite() {
                return Err(Error::Diverged {
                    step,
                    last_good: log.last_good(),
                });
            }
            let mut params = model.params.trainable_mut();
            adam.step(&mut params)?;
            let row = LossRow {
                step,
                epoch,
                lr: adam.lr,
                loss_me: l.me,
                loss_enet: l.enet,
                loss_total: l.total,
            };
            log.rows.push(row);
            if !observer(&row) {
                model.params.set_trainable(|_| false);
                return Ok(());
            }
        }
    }
    model.params.set_trainable(|_| false);
    Ok(())
}

fn model_from(ck: &Checkpoint) -> Result<Model> {
    let mut model = Model::new(ck.net, 0)?;
    model.params.load_from(&ck.params)?;
    Ok(model)
}

pub fn train_phase1(data: &TrainingData, cfg: &TrainConfig, net: &NetConfig, log: &mut LossLog) -> Result<Checkpoint> {
    cfg.validate()?;
    let mut model = Model::new(*net, cfg.seed)?;
    let range = cfg.phase_range(1);
    run_phase(&mut model, data, cfg, Phase::Motion, range.clone(), log, &mut |_| true)?;
    let params = model.params.filtered(Model::is_mc_param);
    Ok(Checkpoint {
        variant: Variant::Mc,
        net: *net,
        params,
        train: cfg.clone(),
        epoch: range.end,
        provenance: vec![format!(
            "phase1 seed={} epochs={}..{}",
            cfg.seed, range.start, range.end
        )],
    })
}

pub fn train_phase2(data: &TrainingData, mc: &Checkpoint, cfg: &TrainConfig, log: &mut LossLog) -> Result<Checkpoint> {
    cfg.validate()?;
    if mc.variant != Variant::Mc {
        return Err(Error::Checkpoint(format!(
            "phase 2 needs an mc checkpoint, got {}",
            mc.variant
        )));
    }
    let mut model = Model::new(mc.net, cfg.seed)?;
    let copied = model.params.load_from(&mc.params)?;
    let expected = model.params.names().iter().filter(|n| Model::is_mc_param(n)).count();
    if copied != expected {
        return Err(Error::Checkpoint(format!(
            "mc checkpoint holds {copied} of {expected} motion parameters"
        )));
    }
    let range = cfg.phase_range(2);
    run_phase(&mut model, data, cfg, Phase::Enhance, range.clone(), log, &mut |_| true)?;
    let mut provenance = mc.provenance.clone();
    provenance.push(format!(
        "phase2 seed={} epochs={}..{}",
        cfg.seed, range.start, range.end
    ));
    Ok(Checkpoint {
        variant: cfg.variant,
        net: mc.net,
        params: model.params.filtered(|_| true),
        train: cfg.clone(),
        epoch: range.end,
        provenance,
    })
}

/// Joint fine-tuning from a full (phase-2 or final) checkpoint. The
/// observer can stop training early; see [`finetune_from`].
pub fn train_phase3_observed(
    data: &TrainingData,
    partial: &Checkpoint,
    cfg: &TrainConfig,
    log: &mut LossLog,
    observer: &mut dyn FnMut(&LossRow) -> bool,
) -> Result<Checkpoint> {
    cfg.validate()?;
    if partial.variant == Variant::Mc {
        return Err(Error::Checkpoint("phase 3 needs a full checkpoint, got mc".into()));
    }
    let mut model = model_from(partial)?;
    if model.params.len() != partial.params.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint holds {} parameters, model needs {}",
            partial.params.len(),
            model.params.len()
        )));
    }
    let range = cfg.phase_range(3);
    run_phase(&mut model, data, cfg, Phase::Joint, range.clone(), log, observer)?;
    let mut provenance = partial.provenance.clone();
    provenance.push(format!(
        "phase3 seed={} epochs={}..{}",
        cfg.seed, range.start, range.end
    ));
    Ok(Checkpoint {
        variant: cfg.variant,
        net: partial.net,
        params: model.params.filtered(|_| true),
        train: cfg.clone(),
        epoch: range.end,
        provenance,
    })
}

pub fn train_phase3(
    data: &TrainingData,
    partial: &Checkpoint,
    cfg: &TrainConfig,
    log: &mut LossLog,
) -> Result<Checkpoint> {
    train_phase3_observed(data, partial, cfg, log, &mut |_| true)
}

pub fn train_all(data: &TrainingData, cfg: &TrainConfig, net: &NetConfig, log: &mut LossLog) -> Result<Checkpoint> {
    let mc = train_phase1(data, cfg, net, log)?;
    let partial = train_phase2(data, &mc, cfg, log)?;
    train_phase3(data, &partial, cfg, log)
}

/// Warm start: copies every parameter from `src` and runs phase 3 on new data.
pub fn finetune_from(
    src: &Checkpoint,
    data: &TrainingData,
    cfg: &TrainConfig,
    net: &NetConfig,
    log: &mut LossLog,
    observer: &mut dyn FnMut(&LossRow) -> bool,
) -> Result<Checkpoint> {
    if src.net != *net {
        return Err(Error::Checkpoint(format!(
            "source network config {:?} does not match {:?}",
            src.net, net
        )));
    }
    let mut base = src.clone();
    base.variant = cfg.variant;
    base.provenance
        .push(format!("finetune_from variant={} digest={}", src.variant, src.digest()));
    train_phase3_observed(data, &base, cfg, log, observer)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{degrade_clip, synth_clip, Preset, SynthKind};

    #[test]
    fn schedule_values() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_schedule(0, &cfg).unwrap(), 1e-4);
        assert_eq!(lr_schedule(9, &cfg).unwrap(), 1e-4);
        assert_eq!(lr_schedule(10, &cfg).unwrap(), 1e-5);
        assert_eq!(lr_schedule(29, &cfg).unwrap(), 1e-5);
        assert!(lr_schedule(30, &cfg).is_err());
    }

    #[test]
    fn routing_examples() {
        let r = |i, n| route_frame(i, 4, n).unwrap();
        assert_eq!(
            r(5, 16),
            Route {
                model: Variant::Lqf,
                prev: 4,
                next: 8
            }
        );
        assert_eq!(
            r(8, 16),
            Route {
                model: Variant::Hqf,
                prev: 4,
                next: 12
            }
        );
        assert_eq!(
            r(0, 16),
            Route {
                model: Variant::Hqf,
                prev: 0,
                next: 4
            }
        );
        assert_eq!(
            r(12, 16),
            Route {
                model: Variant::Hqf,
                prev: 8,
                next: 12
            }
        );
        assert_eq!(
            r(14, 16),
            Route {
                model: Variant::Lqf,
                prev: 12,
                next: 12
            }
        );
        assert_eq!(
            r(7, 16),
            Route {
                model: Variant::Lqf,
                prev: 4,
                next: 8
            }
        );
        assert!(route_frame(16, 4, 16).is_err());
    }

    #[test]
    fn routing_partitions_frames() {
        for n in 1..30 {
            for p in 2..6 {
                for i in 0..n {
                    let r = route_frame(i, p, n).unwrap();
                    assert_eq!(r.model == Variant::Hqf, i % p == 0);
                    assert!(r.prev.is_multiple_of(p) && r.next.is_multiple_of(p));
                    assert!(r.prev <= i && r.next < n);
                }
            }
        }
    }

    #[test]
    fn config_checks() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            patch_size: 30,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            phase_epochs: [10, 10, 5],
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        assert_eq!(TrainConfig::default().phase_range(3), 20..30);
    }

    fn clips() -> (Clip, Clip) {
        let raw = synth_clip(SynthKind::Translate, 9, 16, 16, 1.0, 3).unwrap();
        let deg = degrade_clip(&raw, &Preset::Q37.config()).unwrap();
        (raw, deg)
    }

    #[test]
    fn pairs_are_routed_crops() {
        let (raw, deg) = clips();
        let cfg = TrainConfig {
            patch_size: 8,
            ..TrainConfig::default()
        };
        let data = build_pairs(&raw, &deg, &cfg).unwrap();
        for p in data.stream().take(40) {
            let r = route_frame(p.target_index, 4, 9).unwrap();
            assert_eq!(r.model, Variant::Lqf);
            assert_eq!((p.prev_index, p.next_index), (r.prev, r.next));
            let (ox, oy) = p.origin;
            assert_eq!(p.raw_target.at(3, 2), raw.frames[p.target_index].at(ox + 3, oy + 2));
            assert_eq!(p.prev.at(0, 7), deg.frames[p.prev_index].at(ox, oy + 7));
            assert_eq!(p.raw_next, raw.frames[p.next_index].crop(ox, oy, 8, 8).unwrap());
            assert_eq!(p.label, Label::Lqf);
        }
        let again = build_pairs(&raw, &deg, &cfg).unwrap();
        assert!(data.stream().take(20).eq(again.stream().take(20)));
    }

    #[test]
    fn pairs_reject_short_clip() {
        let raw = synth_clip(SynthKind::Still, 4, 8, 8, 0.0, 3).unwrap();
        let deg = degrade_clip(&raw, &Preset::Q37.config()).unwrap();
        let cfg = TrainConfig {
            patch_size: 8,
            ..TrainConfig::default()
        };
        assert!(build_pairs(&raw, &deg, &cfg).is_err());
    }

    #[test]
    fn loss_log_round_trip() {
        let log = LossLog {
            rows: vec![LossRow {
                step: 3,
                epoch: 1,
                lr: 1e-5,
                loss_me: 0.1 + 0.2,
                loss_enet: 1.0 / 3.0,
                loss_total: 0.1 + 0.2 + 0.01 * (1.0 / 3.0),
            }],
        };
        assert_eq!(LossLog::parse_csv(&log.to_csv()).unwrap(), log);
        assert!(LossLog::parse_csv("nope\n").is_err());
    }
}
