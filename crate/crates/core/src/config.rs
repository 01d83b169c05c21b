//! Flat `key=value` run configuration covering training, network and
//! degradation settings.

use std::path::Path;

use crate::codec::DegradeConfig;
use crate::error::{Error, Result};
use crate::net::NetConfig;
use crate::trainer::{TrainConfig, Variant};

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

/// Sets one TrainConfig field. Returns `Ok(false)` for keys it does not own.
pub fn set_train_key(cfg: &mut TrainConfig, key: &str, value: &str) -> Result<bool> {
    match key {
        "batch_size" => cfg.batch_size = parse(key, value)?,
        "lr" => cfg.lr = parse(key, value)?,
        "decay_epoch" => cfg.decay_epoch = parse(key, value)?,
        "decay_factor" => cfg.decay_factor = parse(key, value)?,
        "total_epochs" => cfg.total_epochs = parse(key, value)?,
        "lambda2" => cfg.lambda2 = parse(key, value)?,
        "patch_size" => cfg.patch_size = parse(key, value)?,
        "seed" => cfg.seed = parse(key, value)?,
        "phase1_epochs" => cfg.phase_epochs[0] = parse(key, value)?,
        "phase2_epochs" => cfg.phase_epochs[1] = parse(key, value)?,
        "phase3_epochs" => cfg.phase_epochs[2] = parse(key, value)?,
        "steps_per_epoch" => cfg.steps_per_epoch = parse(key, value)?,
        "period" => cfg.period = parse(key, value)?,
        "variant" => cfg.variant = value.trim().parse::<Variant>()?,
        _ => return Ok(false),
    }
    Ok(true)
}

pub fn train_config_to_kv(cfg: &TrainConfig) -> Vec<(&'static str, String)> {
    vec![
        ("batch_size", cfg.batch_size.to_string()),
        ("lr", cfg.lr.to_string()),
        ("decay_epoch", cfg.decay_epoch.to_string()),
        ("decay_factor", cfg.decay_factor.to_string()),
        ("total_epochs", cfg.total_epochs.to_string()),
        ("lambda2", cfg.lambda2.to_string()),
        ("patch_size", cfg.patch_size.to_string()),
        ("seed", cfg.seed.to_string()),
        ("phase1_epochs", cfg.phase_epochs[0].to_string()),
        ("phase2_epochs", cfg.phase_epochs[1].to_string()),
        ("phase3_epochs", cfg.phase_epochs[2].to_string()),
        ("steps_per_epoch", cfg.steps_per_epoch.to_string()),
        ("period", cfg.period.to_string()),
        ("variant", cfg.variant.to_string()),
    ]
}

/// Rebuilds a TrainConfig from a complete key set (as stored in checkpoints).
pub fn train_config_from_kv(kv: &[(String, String)]) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    let mut seen = std::collections::BTreeSet::new();
    for (k, v) in kv {
        if !set_train_key(&mut cfg, k, v)? {
            return Err(Error::Config(format!("unknown key {k:?}")));
        }
        seen.insert(k.as_str());
    }
    for (k, _) in train_config_to_kv(&cfg) {
        if !seen.contains(k) {
            return Err(Error::Config(format!("missing key {k:?}")));
        }
    }
    Ok(cfg)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub net: NetConfig,
    pub degrade: DegradeConfig,
}

impl RunConfig {
    /// Applies one override. `period` drives both degradation and routing.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim();
        if key == "period" {
            self.degrade.period = parse(key, value)?;
        }
        if set_train_key(&mut self.train, key, value)? {
            return Ok(());
        }
        match key {
            "channels" => self.net.channels = parse(key, value)?,
            "blocks" => self.net.blocks = parse(key, value)?,
            "slice_split" => self.net.slice_split = parse(key, value)?,
            "mc_channels" => self.net.mc_channels = parse(key, value)?,
            "block_size" => self.degrade.block_size = parse(key, value)?,
            "q_high" => self.degrade.q_high = parse(key, value)?,
            "q_low" => self.degrade.q_low = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Applies every `key=value` line of `text`; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got {line:?}", i + 1)))?;
            self.set(k, v)
                .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.net.validate()?;
        self.degrade.validate()
    }

    /// Every effective value, in a stable order, as `key=value` lines.
    pub fn effective(&self) -> String {
        let mut kv: Vec<(&str, String)> = train_config_to_kv(&self.train);
        kv.extend([
            ("channels", self.net.channels.to_string()),
            ("blocks", self.net.blocks.to_string()),
            ("slice_split", self.net.slice_split.to_string()),
            ("mc_channels", self.net.mc_channels.to_string()),
            ("block_size", self.degrade.block_size.to_string()),
            ("q_high", self.degrade.q_high.to_string()),
            ("q_low", self.degrade.q_low.to_string()),
        ]);
        kv.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}
