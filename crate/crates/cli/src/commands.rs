use std::fs;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use sdts::checkpoint::Checkpoint;
use sdts::codec::{degrade_clip, synth_clip, Preset, SynthKind};
use sdts::config::RunConfig;
use sdts::eval::{enhance_clip, fluctuation_plot, MetricsReport};
use sdts::frame_io::{load_clip, load_raw_y, pad_clip, save_clip, ClipManifest};
use sdts::trainer::{build_pairs, route_frame, train_all, train_phase1, train_phase2, train_phase3, LossLog, Variant};
use sdts::{Clip, NetConfig, Role};

use crate::outputs::Outputs;
use crate::{
    ConfigArgs, DegradeArgs, EnhanceArgs, EvalArgs, InitArgs, Kind, PhaseArg, SynthArgs, TrainArgs, TrainVariant,
    VariantArg,
};

fn run_config(args: &ConfigArgs, base: RunConfig) -> Result<RunConfig> {
    let mut rc = base;
    if let Some(path) = &args.config {
        rc.apply_file(path)?;
    }
    for kv in &args.overrides {
        let (k, v) = kv
            .split_once('=')
            .with_context(|| format!("--set expects KEY=VALUE, got {kv:?}"))?;
        rc.set(k, v).with_context(|| format!("--set {kv}"))?;
    }
    Ok(rc)
}

fn echo(pairs: impl IntoIterator<Item = (String, String)>) {
    for (k, v) in pairs {
        eprintln!("config {k}={v}");
    }
}

fn echo_run_config(rc: &RunConfig) {
    for line in rc.effective().lines() {
        eprintln!("config {line}");
    }
}

fn path_kv(key: &str, path: &Path) -> (String, String) {
    (key.to_string(), path.display().to_string())
}

fn load(dir: &Path, role: Role) -> Result<Clip> {
    Ok(load_clip(&ClipManifest::new(dir, role))?)
}

/// Writes `clip` to `dir`, recording every file before it is written.
fn save(clip: &Clip, dir: &Path, role: Role, out: &mut Outputs) -> Result<()> {
    let manifest = ClipManifest::new(dir, role);
    out.dir(dir)?;
    for i in 0..clip.len() {
        out.file(&manifest.frame_path(i)?)?;
    }
    out.file(&dir.join(sdts::frame_io::LABELS_FILE))?;
    save_clip(clip, &manifest)?;
    Ok(())
}

/// The labels sidecar is the record of which frames were coded as HQF;
/// routing with a different period would silently pair the wrong frames.
fn check_labels(clip: &Clip, period: usize, what: &str) -> Result<()> {
    for (i, &label) in clip.labels.iter().enumerate() {
        let routed = route_frame(i, period, clip.len())?.model;
        ensure!(
            Variant::for_label(label) == routed,
            "{what}: frame {i} is labelled {label} but period {period} routes it to the {routed} model"
        );
    }
    Ok(())
}

fn check_net(ck: &Checkpoint, net: &NetConfig, path: &Path) -> Result<()> {
    ensure!(
        ck.net == *net,
        "{}: checkpoint network {:?} does not match the configured {:?}",
        path.display(),
        ck.net,
        net
    );
    Ok(())
}

pub fn degrade(a: &DegradeArgs) -> Result<()> {
    let mut base = RunConfig::default();
    if let Some(p) = &a.preset {
        base.degrade = p.parse::<Preset>()?.config();
    }
    let mut rc = run_config(&a.config, base)?;
    if let Some(p) = a.period {
        rc.set("period", &p.to_string())?;
    }
    rc.degrade.validate()?;
    echo_run_config(&rc);

    let raw = if a.input.is_file() {
        let (w, h) = a.dims.context("a raw 4:2:0 input needs --dims WIDTHxHEIGHT")?;
        let count = match a.frames {
            Some(n) => n,
            None => {
                let len = fs::metadata(&a.input)
                    .with_context(|| a.input.display().to_string())?
                    .len() as usize;
                len / (w * h + 2 * (w / 2) * (h / 2))
            }
        };
        load_raw_y(&a.input, w, h, count)?
    } else {
        let mut m = ClipManifest::new(&a.input, Role::Raw);
        m.dims = a.dims;
        m.count = a.frames;
        load_clip(&m)?
    };
    // the codec works on whole blocks; padding is cropped again on save
    let padded = pad_clip(&raw, rc.degrade.block_size);
    let degraded = degrade_clip(&padded, &rc.degrade)?;

    let mut out = Outputs::default();
    save(&degraded, &a.output, Role::Degraded, &mut out)?;
    out.commit();
    let hqf = degraded.labels.iter().filter(|l| **l == sdts::Label::Hqf).count();
    println!(
        "degraded {} frames ({hqf} HQF) into {}",
        degraded.len(),
        a.output.display()
    );
    Ok(())
}

pub fn synth(a: &SynthArgs) -> Result<()> {
    let kind = match a.kind {
        Kind::Translate => SynthKind::Translate,
        Kind::Still => SynthKind::Still,
        Kind::Ramp => SynthKind::Ramp,
    };
    echo([
        ("frames".to_string(), a.frames.to_string()),
        ("dims".to_string(), format!("{}x{}", a.dims.0, a.dims.1)),
        ("shift".to_string(), a.shift.to_string()),
        ("seed".to_string(), a.seed.to_string()),
    ]);
    let (w, h) = a.dims;
    let clip = synth_clip(kind, a.frames, h, w, a.shift, a.seed)?;
    let mut out = Outputs::default();
    save(&clip, &a.output, Role::Raw, &mut out)?;
    out.commit();
    println!("wrote {} frames to {}", clip.len(), a.output.display());
    Ok(())
}

pub fn init(a: &InitArgs) -> Result<()> {
    let mut rc = run_config(&a.config, RunConfig::default())?;
    if let Some(s) = a.seed {
        rc.train.seed = s;
    }
    let variant = match a.variant {
        VariantArg::Mc => Variant::Mc,
        VariantArg::Lqf => Variant::Lqf,
        VariantArg::Hqf => Variant::Hqf,
    };
    if variant != Variant::Mc {
        rc.train.variant = variant;
    }
    rc.validate()?;
    echo_run_config(&rc);
    let ck = Checkpoint::init(variant, rc.net, rc.train)?;
    let mut out = Outputs::default();
    ck.save(&out.file(&a.out)?)?;
    out.commit();
    println!("wrote {variant} checkpoint {} digest={}", a.out.display(), ck.digest());
    Ok(())
}

pub fn train(a: &TrainArgs) -> Result<()> {
    if a.mc_ckpt.is_some() && a.phase != PhaseArg::Two {
        bail!("--mc-ckpt is only used by --phase 2");
    }
    if a.partial_ckpt.is_some() && a.phase != PhaseArg::Three {
        bail!("--partial-ckpt is only used by --phase 3");
    }
    let mut rc = run_config(&a.config, RunConfig::default())?;
    if let Some(v) = a.variant {
        rc.train.variant = match v {
            TrainVariant::Lqf => Variant::Lqf,
            TrainVariant::Hqf => Variant::Hqf,
        };
    }
    if let Some(s) = a.seed {
        rc.train.seed = s;
    }
    rc.validate()?;
    echo_run_config(&rc);

    let raw = load(&a.raw, Role::Raw)?;
    let degraded = load(&a.degraded, Role::Degraded)?;
    check_labels(&degraded, rc.train.period, &a.degraded.display().to_string())?;
    let data = build_pairs(&raw, &degraded, &rc.train)?;
    let cfg = &rc.train;
    let mut log = LossLog::default();
    let ck = match a.phase {
        PhaseArg::One => train_phase1(&data, cfg, &rc.net, &mut log)?,
        PhaseArg::Two => {
            let path = a.mc_ckpt.as_deref().expect("required by clap");
            let mc = Checkpoint::load(path)?;
            check_net(&mc, &rc.net, path)?;
            train_phase2(&data, &mc, cfg, &mut log)?
        }
        PhaseArg::Three => {
            let path = a.partial_ckpt.as_deref().expect("required by clap");
            let partial = Checkpoint::load(path)?;
            check_net(&partial, &rc.net, path)?;
            train_phase3(&data, &partial, cfg, &mut log)?
        }
        PhaseArg::All => train_all(&data, cfg, &rc.net, &mut log)?,
    };

    let log_path = a.log.clone().unwrap_or_else(|| {
        let mut s = a.out.clone().into_os_string();
        s.push(".loss.csv");
        s.into()
    });
    let mut out = Outputs::default();
    ck.save(&out.file(&a.out)?)?;
    let log_path = out.file(&log_path)?;
    fs::write(&log_path, log.to_csv()).with_context(|| log_path.display().to_string())?;
    out.commit();
    if let Some(last) = log.rows.last() {
        println!(
            "step {} epoch {} loss_total {} loss_me {} loss_enet {}",
            last.step, last.epoch, last.loss_total, last.loss_me, last.loss_enet
        );
    }
    println!(
        "wrote {} checkpoint {} (epoch {}) digest={}",
        ck.variant,
        a.out.display(),
        ck.epoch,
        ck.digest()
    );
    Ok(())
}

pub fn enhance(a: &EnhanceArgs) -> Result<()> {
    echo([
        path_kv("degraded", &a.degraded),
        path_kv("ckpt_lqf", &a.ckpt_lqf),
        path_kv("ckpt_hqf", &a.ckpt_hqf),
        ("period".to_string(), a.period.to_string()),
    ]);
    let lqf = Checkpoint::load(&a.ckpt_lqf)?;
    let hqf = Checkpoint::load(&a.ckpt_hqf)?;
    for (ck, want, path) in [(&lqf, Variant::Lqf, &a.ckpt_lqf), (&hqf, Variant::Hqf, &a.ckpt_hqf)] {
        ensure!(
            ck.variant == want,
            "{}: expected a {want} checkpoint, found {}",
            path.display(),
            ck.variant
        );
    }
    check_net(&hqf, &lqf.net, &a.ckpt_hqf)?;
    let (lqf, hqf) = (lqf.to_model()?, hqf.to_model()?);

    let degraded = load(&a.degraded, Role::Degraded)?;
    check_labels(&degraded, a.period, &a.degraded.display().to_string())?;
    let enhanced = enhance_clip(&degraded, Some(&lqf), Some(&hqf), a.period)?;
    for r in &enhanced.routes {
        println!(
            "route frame={} model={} prev={} next={}",
            r.frame, r.model, r.prev, r.next
        );
    }
    let mut out = Outputs::default();
    save(&enhanced.clip, &a.output, Role::Enhanced, &mut out)?;
    out.commit();
    println!("enhanced {} frames into {}", enhanced.clip.len(), a.output.display());
    Ok(())
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let mut flags = vec![
        path_kv("raw", &a.raw),
        path_kv("degraded", &a.degraded),
        path_kv("enhanced", &a.enhanced),
        path_kv("report", &a.report),
    ];
    if let Some(p) = &a.plot {
        flags.push(path_kv("plot", p));
    }
    echo(flags);
    let raw = load(&a.raw, Role::Raw)?;
    let degraded = load(&a.degraded, Role::Degraded)?;
    let enhanced = load(&a.enhanced, Role::Enhanced)?;
    ensure!(
        enhanced.labels == degraded.labels || enhanced.len() != degraded.len(),
        "{}: labels disagree with {}",
        a.enhanced.display(),
        a.degraded.display()
    );
    let report = MetricsReport::from_clips(&raw, &degraded, &enhanced)?;

    let mut out = Outputs::default();
    report.write_csv(&out.file(&a.report)?)?;
    if let Some(p) = &a.plot {
        fluctuation_plot(&report, &out.file(p)?)?;
    }
    out.commit();
    let mean = report.mean_delta().context("empty report")?;
    for label in [sdts::Label::Hqf, sdts::Label::Lqf] {
        if let Some(m) = report.mean_delta_for(label) {
            println!("mean ΔPSNR {label} {m:.6} dB");
        }
    }
    println!("mean ΔPSNR {mean:.6} dB");
    Ok(())
}
