//! Flat binary checkpoint format.
//!
//! ```text
//! magic    8 bytes  "FLITCKPT"
//! version  u32
//! count    u32
//! count × { name_len u32, name UTF-8, rank u32, dims u32 × rank, values f32 × Π dims }
//! ```
//!
//! All integers and floats are little-endian. Architecture hyperparameters
//! travel as `meta.*` tensors so a checkpoint is self-describing.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::config::{Activation, InspirerConfig, TargetConfig};
use super::{InspirerModel, Network, TargetModel};
use crate::autodiff::{Real, Tensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"FLITCKPT";
const VERSION: u32 = 1;
const KIND_INSPIRER: f32 = 0.0;
const KIND_TARGET: f32 = 1.0;

/// A model restored from disk.
#[derive(Clone, Debug, PartialEq)]
pub enum CheckpointModel {
    Inspirer(InspirerModel<Real>),
    Target(TargetModel<Real>),
}

impl CheckpointModel {
    pub fn network(&self) -> &dyn Network<Real> {
        match self {
            CheckpointModel::Inspirer(m) => m,
            CheckpointModel::Target(m) => m,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CheckpointModel::Inspirer(_) => "inspirer",
            CheckpointModel::Target(_) => "target",
        }
    }
}

impl From<InspirerModel<Real>> for CheckpointModel {
    fn from(m: InspirerModel<Real>) -> Self {
        CheckpointModel::Inspirer(m)
    }
}

impl From<TargetModel<Real>> for CheckpointModel {
    fn from(m: TargetModel<Real>) -> Self {
        CheckpointModel::Target(m)
    }
}

fn meta(name: &str, values: &[f64]) -> (String, Tensor<Real>) {
    (
        format!("meta.{name}"),
        Tensor::vector(values.iter().map(|&v| v as Real).collect()),
    )
}

fn entries(model: &CheckpointModel) -> Vec<(String, Tensor<Real>)> {
    let mut out = Vec::new();
    match model {
        CheckpointModel::Inspirer(m) => {
            let c = &m.config;
            out.push(meta("kind", &[KIND_INSPIRER as f64]));
            for (k, v) in [
                ("layers", c.layers),
                ("hidden", c.hidden),
                ("heads", c.heads),
                ("ff_dim", c.ff_dim),
                ("vocab_size", c.vocab_size),
                ("max_len", c.max_len),
                ("classes", c.classes),
                ("mlp_hidden", c.mlp_hidden),
                ("projection_dim", c.projection_dim),
            ] {
                out.push(meta(k, &[v as f64]));
            }
            out.push(meta("dropout", &[c.dropout]));
        }
        CheckpointModel::Target(m) => {
            let c = &m.config;
            out.push(meta("kind", &[KIND_TARGET as f64]));
            let sizes: Vec<f64> = c.filter_sizes.iter().map(|&k| k as f64).collect();
            out.push(meta("filter_sizes", &sizes));
            for (k, v) in [
                ("channels", c.channels),
                ("emb_dim", c.emb_dim),
                ("vocab_size", c.vocab_size),
                ("classes", c.classes),
                ("projection_dim", c.projection_dim),
            ] {
                out.push(meta(k, &[v as f64]));
            }
            out.push(meta("activation", &[c.projection_activation.code() as f64]));
            out.push(meta("dropout", &[c.dropout]));
        }
    }
    for p in model.network().params().iter() {
        out.push((p.name.clone(), p.value.clone()));
    }
    out
}

pub fn write_checkpoint<W: Write>(w: &mut W, model: &CheckpointModel) -> std::io::Result<()> {
    let list = entries(model);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(list.len() as u32).to_le_bytes())?;
    for (name, t) in &list {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn save_checkpoint(path: &Path, model: &CheckpointModel) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    write_checkpoint(&mut w, model)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|e| Error::Format(format!("truncated checkpoint: {e}")))?;
    Ok(u32::from_le_bytes(b))
}

struct Entries(Vec<(String, Tensor<Real>)>);

impl Entries {
    fn get(&self, name: &str) -> Result<&Tensor<Real>> {
        self.0
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Format(format!("checkpoint lacks {name}")))
    }

    fn scalar(&self, name: &str) -> Result<f64> {
        Ok(self.get(&format!("meta.{name}"))?.data()[0] as f64)
    }

    /// A rate stored in f32, recovered through its shortest decimal form so
    /// values such as 0.1 come back as the same f64.
    fn rate(&self, name: &str) -> Result<f64> {
        let v = self.get(&format!("meta.{name}"))?.data()[0];
        v.to_string()
            .parse()
            .map_err(|_| Error::Format(format!("meta.{name} is not a number: {v}")))
    }

    fn usize(&self, name: &str) -> Result<usize> {
        let v = self.scalar(name)?;
        if v < 0.0 || v.fract() != 0.0 {
            return Err(Error::Format(format!("meta.{name} is not a count: {v}")));
        }
        Ok(v as usize)
    }
}

pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<CheckpointModel> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|e| Error::Format(format!("truncated checkpoint: {e}")))?;
    if &magic != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let count = read_u32(r)? as usize;
    let mut list = Vec::with_capacity(count);
    for _ in 0..count {
        let len = read_u32(r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)
            .map_err(|e| Error::Format(format!("truncated name: {e}")))?;
        let name = String::from_utf8(name).map_err(|e| Error::Format(e.to_string()))?;
        let rank = read_u32(r)? as usize;
        let dims = (0..rank)
            .map(|_| read_u32(r).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel: usize = dims.iter().product();
        let mut raw = vec![0u8; numel * 4];
        r.read_exact(&mut raw)
            .map_err(|e| Error::Format(format!("truncated tensor {name}: {e}")))?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let t = Tensor::new(dims, data).map_err(|e| Error::Format(format!("{name}: {e}")))?;
        list.push((name, t));
    }
    let e = Entries(list);
    let mut model = match e.scalar("kind")? as f32 {
        KIND_INSPIRER => CheckpointModel::Inspirer(InspirerModel::new(
            InspirerConfig {
                layers: e.usize("layers")?,
                hidden: e.usize("hidden")?,
                heads: e.usize("heads")?,
                ff_dim: e.usize("ff_dim")?,
                vocab_size: e.usize("vocab_size")?,
                max_len: e.usize("max_len")?,
                classes: e.usize("classes")?,
                mlp_hidden: e.usize("mlp_hidden")?,
                projection_dim: e.usize("projection_dim")?,
                dropout: e.rate("dropout")?,
            },
            0,
        )?),
        KIND_TARGET => CheckpointModel::Target(TargetModel::new(
            TargetConfig {
                filter_sizes: e.get("meta.filter_sizes")?.data().iter().map(|&v| v as usize).collect(),
                channels: e.usize("channels")?,
                emb_dim: e.usize("emb_dim")?,
                vocab_size: e.usize("vocab_size")?,
                classes: e.usize("classes")?,
                projection_dim: e.usize("projection_dim")?,
                projection_activation: Activation::from_code(e.usize("activation")? as u32)?,
                dropout: e.rate("dropout")?,
            },
            0,
        )?),
        other => return Err(Error::Format(format!("unknown model kind {other}"))),
    };
    let expected = e.0.iter().filter(|(n, _)| !n.starts_with("meta.")).count();
    let store = match &mut model {
        CheckpointModel::Inspirer(m) => &mut m.params,
        CheckpointModel::Target(m) => &mut m.params,
    };
    if expected != store.len() {
        return Err(Error::Format(format!(
            "checkpoint has {expected} parameter tensors, architecture needs {}",
            store.len()
        )));
    }
    for p in store.params_mut() {
        let t = e.get(&p.name)?;
        if t.shape() != p.value.shape() {
            return Err(Error::Format(format!(
                "{}: stored shape {:?}, expected {:?}",
                p.name,
                t.shape(),
                p.value.shape()
            )));
        }
        p.value = t.clone();
    }
    Ok(model)
}

pub fn load_checkpoint(path: &Path) -> Result<CheckpointModel> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&mut BufReader::new(f))
}
