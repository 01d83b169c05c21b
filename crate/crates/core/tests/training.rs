//! Training-loop contracts on small fixtures.

use sdts::checkpoint::Checkpoint;
use sdts::codec::{degrade_clip, synth_clip, Preset, SynthKind};
use sdts::params::ParamSet;
use sdts::trainer::*;
use sdts::{Clip, NetConfig};

fn net() -> NetConfig {
    NetConfig {
        channels: 8,
        blocks: 2,
        slice_split: 4,
        mc_channels: 6,
    }
}

fn small_cfg(steps: usize) -> TrainConfig {
    TrainConfig {
        batch_size: 2,
        patch_size: 16,
        steps_per_epoch: steps,
        phase_epochs: [2, 2, 2],
        total_epochs: 6,
        decay_epoch: 2,
        seed: 5,
        ..TrainConfig::default()
    }
}

fn clips(kind: SynthKind, n: usize, size: usize, shift: f64, preset: Preset) -> (Clip, Clip) {
    let raw = synth_clip(kind, n, size, size, shift, 8).unwrap();
    let deg = degrade_clip(&raw, &preset.config()).unwrap();
    (raw, deg)
}

fn bits(p: &ParamSet) -> Vec<u64> {
    p.tensors()
        .iter()
        .flat_map(|t| t.data().iter().map(|v| v.to_bits()))
        .collect()
}

#[test]
fn joint_loss_identity_and_schedule_in_log() {
    let (raw, deg) = clips(SynthKind::Translate, 9, 16, 1.0, Preset::Q37);
    let cfg = small_cfg(2);
    let data = build_pairs(&raw, &deg, &cfg).unwrap();
    let mut log = LossLog::default();
    let ck = train_all(&data, &cfg, &net(), &mut log).unwrap();
    assert_eq!(log.rows.len(), 12);
    for (i, r) in log.rows.iter().enumerate() {
        assert_eq!(r.step, i);
        assert_eq!(r.epoch, i / 2);
        assert_eq!(r.lr, lr_schedule(r.epoch, &cfg).unwrap());
        let expect = r.loss_me + 0.01 * r.loss_enet;
        assert!(
            (r.loss_total - expect).abs() <= f64::EPSILON * expect.abs(),
            "row {i}: {} vs {}",
            r.loss_total,
            expect
        );
    }
    assert!(log.rows[..4].iter().all(|r| r.loss_enet == 0.0 && r.loss_me > 0.0));
    assert!(log.rows[4..8].iter().all(|r| r.loss_me == 0.0 && r.loss_enet > 0.0));
    assert!(log.rows[8..].iter().all(|r| r.loss_me > 0.0 && r.loss_enet > 0.0));
    assert_eq!(ck.variant, Variant::Lqf);
    assert_eq!(ck.epoch, 6);
    assert_eq!(ck.provenance.len(), 3);
    assert_eq!(LossLog::parse_csv(&log.to_csv()).unwrap(), log);
}

#[test]
fn training_is_bit_deterministic() {
    let (raw, deg) = clips(SynthKind::Translate, 9, 16, 1.0, Preset::Q37);
    let cfg = TrainConfig {
        variant: Variant::Hqf,
        ..small_cfg(1)
    };
    let run = || {
        let data = build_pairs(&raw, &deg, &cfg).unwrap();
        let mut log = LossLog::default();
        let ck = train_all(&data, &cfg, &net(), &mut log).unwrap();
        (ck.to_bytes(), log.to_csv())
    };
    assert_eq!(run(), run());
}

#[test]
fn separate_phases_match_combined_run() {
    let (raw, deg) = clips(SynthKind::Translate, 9, 16, 1.0, Preset::Q37);
    let cfg = small_cfg(1);
    let data = build_pairs(&raw, &deg, &cfg).unwrap();
    let mut all = LossLog::default();
    let combined = train_all(&data, &cfg, &net(), &mut all).unwrap();

    let mut log = LossLog::default();
    let mc = train_phase1(&data, &cfg, &net(), &mut log).unwrap();
    let mc = Checkpoint::from_bytes(&mc.to_bytes()).unwrap();
    let partial = train_phase2(&data, &mc, &cfg, &mut log).unwrap();
    let partial = Checkpoint::from_bytes(&partial.to_bytes()).unwrap();
    let fin = train_phase3(&data, &partial, &cfg, &mut log).unwrap();
    assert_eq!(fin.to_bytes(), combined.to_bytes());
    assert_eq!(log, all);
}

#[test]
fn phase2_freezes_motion_parameters() {
    let (raw, deg) = clips(SynthKind::Translate, 9, 16, 1.0, Preset::Q37);
    let cfg = small_cfg(2);
    let data = build_pairs(&raw, &deg, &cfg).unwrap();
    let mut log = LossLog::default();
    let mc = train_phase1(&data, &cfg, &net(), &mut log).unwrap();
    assert!(mc.params.names().iter().all(|n| n.starts_with("mc.")));
    let partial = train_phase2(&data, &mc, &cfg, &mut log).unwrap();
    let after = partial.params.filtered(|n| n.starts_with("mc."));
    assert_eq!(bits(&after), bits(&mc.params));
    let enet_before = Checkpoint::init(Variant::Lqf, net(), cfg.clone()).unwrap();
    let changed = partial
        .params
        .iter()
        .filter(|(n, _)| !n.starts_with("mc."))
        .any(|(n, t)| t.data() != enet_before.params.get(n).unwrap().data());
    assert!(changed);
}

#[test]
fn phase2_rejects_wrong_checkpoint() {
    let (raw, deg) = clips(SynthKind::Translate, 9, 16, 1.0, Preset::Q37);
    let cfg = small_cfg(1);
    let data = build_pairs(&raw, &deg, &cfg).unwrap();
    let full = Checkpoint::init(Variant::Lqf, net(), cfg.clone()).unwrap();
    assert!(train_phase2(&data, &full, &cfg, &mut LossLog::default()).is_err());
    let mut mc = Checkpoint::init(Variant::Mc, net(), cfg.clone()).unwrap();
    assert!(train_phase3(&data, &mc, &cfg, &mut LossLog::default()).is_err());
    mc.params = ParamSet::new();
    assert!(train_phase2(&data, &mc, &cfg, &mut LossLog::default()).is_err());
}

#[test]
fn phase1_on_still_clip_keeps_zero_loss() {
    let (raw, deg) = clips(SynthKind::Still, 9, 16, 0.0, Preset::Q37);
    let cfg = small_cfg(3);
    let data = build_pairs(&raw, &deg, &cfg).unwrap();
    let mut log = LossLog::default();
    let mc = train_phase1(&data, &cfg, &net(), &mut log).unwrap();
    let first = log.rows[0].loss_me;
    let last = log.rows.last().unwrap().loss_me;
    assert!(last <= 1e-4 * first.max(1e-12) || last == 0.0, "{first} -> {last}");
    let m = mc.motion_model().unwrap();
    let (_, flow) = m.compensate_frame(&deg.frames[1], &deg.frames[0]).unwrap();
    let mean_abs = flow.iter().map(|v| v.abs()).sum::<f64>() / flow.len() as f64;
    assert!(mean_abs < 0.1, "mean |flow| {mean_abs}");
}

#[test]
fn phase1_halves_translate_loss() {
    let (raw, deg) = clips(SynthKind::Translate, 9, 16, 2.0, Preset::Q37);
    let cfg = TrainConfig {
        period: 2,
        batch_size: 4,
        phase_epochs: [10, 0, 0],
        total_epochs: 10,
        decay_epoch: 10,
        ..small_cfg(10)
    };
    let data = build_pairs(&raw, &deg, &cfg).unwrap();
    let mut log = LossLog::default();
    train_phase1(&data, &cfg, &NetConfig::default(), &mut log).unwrap();
    let first = log.rows[0].loss_me;
    let tail: Vec<f64> = log.rows[log.rows.len() - 10..].iter().map(|r| r.loss_me).collect();
    let last = tail.iter().sum::<f64>() / tail.len() as f64;
    assert!(last < 0.5 * first, "{first} -> {last}");
}

/// Three frames with period 2: the only LQF target is frame 1 and the
/// patch covers the frame, so every batch is the same.
fn single_pair_fixture(preset: Preset) -> (Clip, Clip) {
    clips(SynthKind::Translate, 3, 16, 1.0, preset)
}

fn single_pair_cfg() -> TrainConfig {
    TrainConfig {
        period: 2,
        batch_size: 1,
        ..small_cfg(6)
    }
}

#[test]
fn phase2_loss_strictly_decreases_on_single_pair() {
    let (raw, deg) = single_pair_fixture(Preset::Q37);
    let cfg = single_pair_cfg();
    let data = build_pairs(&raw, &deg, &cfg).unwrap();
    let mut log = LossLog::default();
    let mc = train_phase1(&data, &cfg, &net(), &mut log).unwrap();
    let mut p2 = LossLog::default();
    train_phase2(&data, &mc, &cfg, &mut p2).unwrap();
    let first_epoch: Vec<f64> = p2.rows.iter().filter(|r| r.epoch == 2).map(|r| r.loss_enet).collect();
    assert_eq!(first_epoch.len(), 6);
    for w in first_epoch.windows(2) {
        assert!(w[1] < w[0], "{first_epoch:?}");
    }
}

#[test]
fn finetune_with_zero_lr_is_a_no_op() {
    let (raw, deg) = single_pair_fixture(Preset::Q37);
    let cfg = single_pair_cfg();
    let data = build_pairs(&raw, &deg, &cfg).unwrap();
    let mut log = LossLog::default();
    let src = train_all(&data, &cfg, &net(), &mut log).unwrap();
    let zero = TrainConfig { lr: 0.0, ..cfg.clone() };
    let out = finetune_from(&src, &data, &zero, &net(), &mut LossLog::default(), &mut |_| true).unwrap();
    assert_eq!(bits(&out.params), bits(&src.params));
    assert_eq!(out.provenance.len(), src.provenance.len() + 2);
    assert!(out.provenance[src.provenance.len()].contains(&src.digest()));

    let other = NetConfig {
        channels: 6,
        slice_split: 3,
        ..net()
    };
    assert!(finetune_from(&src, &data, &cfg, &other, &mut LossLog::default(), &mut |_| true).is_err());
}

#[test]
fn warm_start_reaches_target_in_half_the_steps() {
    let (raw37, deg37) = single_pair_fixture(Preset::Q37);
    let (raw32, deg32) = single_pair_fixture(Preset::Q32);
    let cfg = single_pair_cfg();

    let d37 = build_pairs(&raw37, &deg37, &cfg).unwrap();
    let q37 = train_all(&d37, &cfg, &net(), &mut LossLog::default()).unwrap();

    let d32 = build_pairs(&raw32, &deg32, &cfg).unwrap();
    let mut scratch = LossLog::default();
    train_all(&d32, &cfg, &net(), &mut scratch).unwrap();
    let scratch_steps = scratch.rows.len();
    let target = scratch.rows.last().unwrap().loss_total;

    let mut warm = LossLog::default();
    let mut reached = None;
    finetune_from(&q37, &d32, &cfg, &net(), &mut warm, &mut |r| {
        if r.loss_total <= target {
            reached = Some(r.step);
            return false;
        }
        true
    })
    .unwrap();
    let first = warm.rows.first().unwrap().step;
    let used = reached
        .map(|s| s - first + 1)
        .expect("warm start never reached the target");
    assert!(
        used * 2 <= scratch_steps,
        "warm start took {used} steps, scratch {scratch_steps}"
    );
}
