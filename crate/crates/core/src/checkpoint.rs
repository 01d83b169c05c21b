//! Binary checkpoint format.
//!
//! Layout (all integers little-endian):
//! `"SDTS"`, u32 version, u8 variant tag, NetConfig as four u32
//! (channels, blocks, slice_split, mc_channels), u32 metadata length +
//! UTF-8 `key=value` lines, u32 entry count, then per entry: u32 name
//! length, UTF-8 name, u32 rank, rank × u32 dims, f64 payload.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::config::{train_config_from_kv, train_config_to_kv};
use crate::engine::{Shape, Tensor};
use crate::error::{Error, Result};
use crate::net::{Model, NetConfig};
use crate::params::ParamSet;
use crate::trainer::{TrainConfig, Variant};

pub const MAGIC: &[u8; 4] = b"SDTS";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub variant: Variant,
    pub net: NetConfig,
    pub params: ParamSet,
    pub train: TrainConfig,
    /// Global epoch count reached when the checkpoint was written.
    pub epoch: usize,
    /// One line per training stage that produced these weights.
    pub provenance: Vec<String>,
}

impl Checkpoint {
    /// Untrained weights for `variant` (identity network for lqf/hqf).
    pub fn init(variant: Variant, net: NetConfig, train: TrainConfig) -> Result<Self> {
        let model = Model::new(net, train.seed)?;
        let params = match variant {
            Variant::Mc => model.params.filtered(Model::is_mc_param),
            _ => model.params.filtered(|_| true),
        };
        let provenance = vec![format!("init seed={}", train.seed)];
        Ok(Checkpoint {
            variant,
            net,
            params,
            train,
            epoch: 0,
            provenance,
        })
    }

    /// Builds a model and fills it from the stored parameters. Only full
    /// checkpoints carry every parameter the model needs.
    pub fn to_model(&self) -> Result<Model> {
        if self.variant == Variant::Mc {
            return Err(Error::Checkpoint("mc checkpoint cannot run enhancement".into()));
        }
        let mut model = Model::new(self.net, 0)?;
        let copied = model.params.load_from(&self.params)?;
        if copied != model.params.len() || copied != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {} parameters, model needs {}",
                self.params.len(),
                model.params.len()
            )));
        }
        Ok(model)
    }

    /// Model whose motion-compensation parameters come from this
    /// checkpoint; works for mc checkpoints as well as full ones.
    pub fn motion_model(&self) -> Result<Model> {
        let mut model = Model::new(self.net, 0)?;
        model.params.load_from(&self.params)?;
        let missing = model
            .params
            .names()
            .iter()
            .filter(|n| Model::is_mc_param(n) && self.params.index_of(n).is_none())
            .count();
        if missing > 0 {
            return Err(Error::Checkpoint(format!(
                "checkpoint lacks {missing} motion parameters"
            )));
        }
        Ok(model)
    }

    fn metadata(&self) -> String {
        let mut s = String::new();
        for (k, v) in train_config_to_kv(&self.train) {
            s.push_str(&format!("{k}={v}\n"));
        }
        s.push_str(&format!("epoch={}\n", self.epoch));
        for p in &self.provenance {
            s.push_str(&format!("provenance={p}\n"));
        }
        s
    }

    /// Metadata lines as (key, value) pairs, in file order.
    pub fn metadata_pairs(&self) -> Vec<(String, String)> {
        self.metadata()
            .lines()
            .filter_map(|l| l.split_once('=').map(|(k, v)| (k.to_string(), v.to_string())))
            .collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(MAGIC);
        put_u32(&mut b, VERSION);
        b.push(self.variant.tag());
        for v in [
            self.net.channels,
            self.net.blocks,
            self.net.slice_split,
            self.net.mc_channels,
        ] {
            put_u32(&mut b, v as u32);
        }
        let meta = self.metadata();
        put_u32(&mut b, meta.len() as u32);
        b.extend_from_slice(meta.as_bytes());
        put_u32(&mut b, self.params.len() as u32);
        for (name, t) in self.params.iter() {
            put_u32(&mut b, name.len() as u32);
            b.extend_from_slice(name.as_bytes());
            let dims = t.shape().dims();
            put_u32(&mut b, dims.len() as u32);
            for d in dims {
                put_u32(&mut b, d as u32);
            }
            for &x in t.data() {
                b.extend_from_slice(&x.to_le_bytes());
            }
        }
        b
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Checkpoint("bad magic, not a checkpoint file".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {version}")));
        }
        let variant = Variant::from_tag(r.take(1)?[0])?;
        let net = NetConfig {
            channels: r.u32()? as usize,
            blocks: r.u32()? as usize,
            slice_split: r.u32()? as usize,
            mc_channels: r.u32()? as usize,
        };
        net.validate()?;
        let meta_len = r.u32()? as usize;
        let meta =
            std::str::from_utf8(r.take(meta_len)?).map_err(|_| Error::Checkpoint("metadata is not UTF-8".into()))?;
        let mut kv = Vec::new();
        let mut epoch = None;
        let mut provenance = Vec::new();
        for line in meta.lines() {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Checkpoint(format!("bad metadata line {line:?}")))?;
            match k {
                "epoch" => epoch = Some(v.parse().map_err(|_| Error::Checkpoint(format!("bad epoch {v:?}")))?),
                "provenance" => provenance.push(v.to_string()),
                _ => kv.push((k.to_string(), v.to_string())),
            }
        }
        let train = train_config_from_kv(&kv).map_err(|e| Error::Checkpoint(format!("metadata: {e}")))?;
        let epoch = epoch.ok_or_else(|| Error::Checkpoint("metadata lacks epoch".into()))?;

        let count = r.u32()? as usize;
        let mut params = ParamSet::new();
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?
                .to_string();
            let rank = r.u32()? as usize;
            if rank != 4 {
                return Err(Error::Checkpoint(format!("parameter {name}: rank {rank}, expected 4")));
            }
            let d: Vec<usize> = (0..4).map(|_| r.u32().map(|x| x as usize)).collect::<Result<_>>()?;
            let shape = Shape::new(d[0], d[1], d[2], d[3]);
            let raw = r.take(shape.numel() * 8)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            if params.index_of(&name).is_some() {
                return Err(Error::Checkpoint(format!("duplicate parameter {name}")));
            }
            params.push(name, Tensor::from_vec(shape, data)?);
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Checkpoint {
            variant,
            net,
            params,
            train,
            epoch,
            provenance,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// SHA-256 of the serialized checkpoint, hex encoded.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }
}

fn put_u32(b: &mut Vec<u8>, v: u32) {
    b.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}
