//! Checkpoint files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "KDDICKPT"
//! version    u32      1
//! config     u32 length + UTF-8 `key=value` lines (the run configuration)
//! meta       u32 length + UTF-8 `key=value` lines (dimensions, training
//!                     summary, vocabulary digests)
//! count      u32      number of parameter tensors
//! per tensor:
//!   name     u32 length + UTF-8
//!   ndim     u32
//!   dims     ndim x u64
//!   values   prod(dims) x f64
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::graph::CombinedNetwork;
use crate::model::{Model, ModelDims};
use crate::params::ParamSet;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"KDDICKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointMeta {
    pub num_nodes: usize,
    pub num_relations: usize,
    pub num_classes: usize,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_valid_loss: f64,
    pub node_vocab_sha256: String,
    pub relation_vocab_sha256: String,
}

impl CheckpointMeta {
    pub fn for_network(net: &CombinedNetwork) -> Self {
        Self {
            num_nodes: net.num_nodes(),
            num_relations: net.vocab().relations.len(),
            num_classes: net.ddi_relations().len(),
            epochs_run: 0,
            best_epoch: 0,
            best_valid_loss: f64::NAN,
            node_vocab_sha256: net.vocab().nodes.digest(),
            relation_vocab_sha256: net.vocab().relations.digest(),
        }
    }

    fn to_text(&self) -> String {
        format!(
            "num_nodes={}\nnum_relations={}\nnum_classes={}\nepochs_run={}\nbest_epoch={}\nbest_valid_loss={:?}\nnode_vocab_sha256={}\nrelation_vocab_sha256={}\n",
            self.num_nodes,
            self.num_relations,
            self.num_classes,
            self.epochs_run,
            self.best_epoch,
            self.best_valid_loss,
            self.node_vocab_sha256,
            self.relation_vocab_sha256
        )
    }

    fn from_text(text: &str) -> Result<Self> {
        let mut m = Self {
            num_nodes: 0,
            num_relations: 0,
            num_classes: 0,
            epochs_run: 0,
            best_epoch: 0,
            best_valid_loss: f64::NAN,
            node_vocab_sha256: String::new(),
            relation_vocab_sha256: String::new(),
        };
        let bad = |k: &str| Error::Checkpoint(format!("bad metadata value for `{k}`"));
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Checkpoint(format!("bad metadata line `{line}`")))?;
            match k {
                "num_nodes" => m.num_nodes = v.parse().map_err(|_| bad(k))?,
                "num_relations" => m.num_relations = v.parse().map_err(|_| bad(k))?,
                "num_classes" => m.num_classes = v.parse().map_err(|_| bad(k))?,
                "epochs_run" => m.epochs_run = v.parse().map_err(|_| bad(k))?,
                "best_epoch" => m.best_epoch = v.parse().map_err(|_| bad(k))?,
                "best_valid_loss" => m.best_valid_loss = v.parse().map_err(|_| bad(k))?,
                "node_vocab_sha256" => m.node_vocab_sha256 = v.to_owned(),
                "relation_vocab_sha256" => m.relation_vocab_sha256 = v.to_owned(),
                _ => {}
            }
        }
        Ok(m)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub meta: CheckpointMeta,
    pub model: Model,
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend((s.len() as u32).to_le_bytes());
    out.extend(s.as_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .at
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let s = &self.buf[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("invalid UTF-8".into()))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend(MAGIC);
        out.extend(VERSION.to_le_bytes());
        put_str(&mut out, &self.config.to_text());
        put_str(&mut out, &self.meta.to_text());
        out.extend((self.model.params.len() as u32).to_le_bytes());
        for (name, t) in self.model.params.iter() {
            put_str(&mut out, name);
            out.extend((t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend((d as u64).to_le_bytes());
            }
            for &x in t.data() {
                out.extend(x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, at: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let config = RunConfig::from_text(&r.string()?)?;
        let meta = CheckpointMeta::from_text(&r.string()?)?;
        let count = r.u32()?;
        let mut params = ParamSet::new();
        for _ in 0..count {
            let name = r.string()?;
            if params.id(&name).is_some() {
                return Err(Error::Checkpoint(format!("duplicate parameter `{name}`")));
            }
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let len = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let len = len.ok_or_else(|| Error::Checkpoint(format!("shape overflow in `{name}`")))?;
            let raw = r.take(len.checked_mul(8).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            params.add(name, Tensor::new(shape, data)?);
        }
        if r.at != buf.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        let dims = ModelDims {
            num_nodes: meta.num_nodes,
            num_relations: meta.num_relations,
            num_classes: meta.num_classes,
            dim: config.dim,
            layers: config.layers,
        };
        let model = Model::from_params(dims, params)?;
        Ok(Self { config, meta, model })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut buf = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut buf))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf)
    }

    /// Refuse to pair the checkpoint with a network built from other data.
    pub fn check_network(&self, net: &CombinedNetwork) -> Result<()> {
        let here = CheckpointMeta::for_network(net);
        if here.node_vocab_sha256 != self.meta.node_vocab_sha256
            || here.relation_vocab_sha256 != self.meta.relation_vocab_sha256
        {
            return Err(Error::Data(
                "checkpoint vocabularies do not match this data directory".into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let config = RunConfig {
            dim: 3,
            layers: 1,
            ..RunConfig::default()
        };
        let dims = ModelDims {
            num_nodes: 4,
            num_relations: 3,
            num_classes: 2,
            dim: 3,
            layers: 1,
        };
        Checkpoint {
            config,
            meta: CheckpointMeta {
                num_nodes: 4,
                num_relations: 3,
                num_classes: 2,
                epochs_run: 7,
                best_epoch: 4,
                best_valid_loss: 1.25,
                node_vocab_sha256: "ab".into(),
                relation_vocab_sha256: "cd".into(),
            },
            model: Model::new(dims, 3),
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let c = sample();
        let back = Checkpoint::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes(), c.to_bytes());
    }

    #[test]
    fn header_layout() {
        let b = sample().to_bytes();
        assert_eq!(&b[..8], b"KDDICKPT");
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 1);
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let b = sample().to_bytes();
        assert!(Checkpoint::from_bytes(&b[..b.len() - 3]).is_err());
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut extra = b;
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
    }
}
