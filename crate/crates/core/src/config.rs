//! Run configuration as a flat `key=value` text file.

use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::subgraph::{ExtractConfig, SubgraphMode};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Task {
    /// Exactly one relation per pair; softmax output.
    Multiclass,
    /// Any subset of relations per pair; sigmoid output with negatives.
    Multilabel,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Multiclass => "multiclass",
            Task::Multilabel => "multilabel",
        })
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multiclass" => Ok(Task::Multiclass),
            "multilabel" => Ok(Task::Multilabel),
            other => Err(Error::Config(format!("unknown task `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
}

impl fmt::Display for Reduction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Reduction::Sum => "sum",
            Reduction::Mean => "mean",
        })
    }
}

impl FromStr for Reduction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(Reduction::Sum),
            "mean" => Ok(Reduction::Mean),
            other => Err(Error::Config(format!("unknown loss reduction `{other}`"))),
        }
    }
}

/// Every hyperparameter of a run. Defaults follow the published settings.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    /// Enclosing-subgraph hop count K.
    pub hops: usize,
    /// Maximum drug-flow path length P.
    pub max_path_len: usize,
    /// Encoder layers L.
    pub layers: usize,
    /// Embedding width d.
    pub dim: usize,
    /// Structure refinement iterations T.
    pub iterations: usize,
    pub alpha: f64,
    pub gamma: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub dropout: f64,
    pub batch_size: usize,
    pub task: Task,
    pub seed: u64,
    pub node_cap: usize,
    pub random_nodes: usize,
    pub subgraph_mode: SubgraphMode,
    pub loss_reduction: Reduction,
    pub resample_negatives: bool,
    pub kg_fraction: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            hops: 2,
            max_path_len: 4,
            layers: 2,
            dim: 32,
            iterations: 3,
            alpha: 0.5,
            gamma: 0.1,
            lr: 5e-3,
            weight_decay: 1e-5,
            max_epochs: 50,
            patience: 10,
            dropout: 0.2,
            batch_size: 256,
            task: Task::Multiclass,
            seed: 0,
            node_cap: 256,
            random_nodes: 16,
            subgraph_mode: SubgraphMode::Knowledge,
            loss_reduction: Reduction::Sum,
            resample_negatives: true,
            kg_fraction: 1.0,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value `{value}` for `{key}`")))
}

impl RunConfig {
    /// Set one key. Unknown keys are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "hops" | "K" => self.hops = parse(key, v)?,
            "max_path_len" | "P" => self.max_path_len = parse(key, v)?,
            "layers" | "L" => self.layers = parse(key, v)?,
            "dim" | "d" => self.dim = parse(key, v)?,
            "iterations" | "T" => self.iterations = parse(key, v)?,
            "alpha" => self.alpha = parse(key, v)?,
            "gamma" => self.gamma = parse(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "weight_decay" => self.weight_decay = parse(key, v)?,
            "max_epochs" => self.max_epochs = parse(key, v)?,
            "patience" => self.patience = parse(key, v)?,
            "dropout" => self.dropout = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "task" => self.task = v.parse()?,
            "seed" => self.seed = parse(key, v)?,
            "node_cap" => self.node_cap = parse(key, v)?,
            "random_nodes" => self.random_nodes = parse(key, v)?,
            "subgraph_mode" => self.subgraph_mode = v.parse()?,
            "loss_reduction" => self.loss_reduction = v.parse()?,
            "resample_negatives" => self.resample_negatives = parse(key, v)?,
            "kg_fraction" => self.kg_fraction = parse(key, v)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Apply `key=value` lines on top of `self`; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", i + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        kv("hops", self.hops.to_string());
        kv("max_path_len", self.max_path_len.to_string());
        kv("layers", self.layers.to_string());
        kv("dim", self.dim.to_string());
        kv("iterations", self.iterations.to_string());
        kv("alpha", format!("{:?}", self.alpha));
        kv("gamma", format!("{:?}", self.gamma));
        kv("lr", format!("{:?}", self.lr));
        kv("weight_decay", format!("{:?}", self.weight_decay));
        kv("max_epochs", self.max_epochs.to_string());
        kv("patience", self.patience.to_string());
        kv("dropout", format!("{:?}", self.dropout));
        kv("batch_size", self.batch_size.to_string());
        kv("task", self.task.to_string());
        kv("seed", self.seed.to_string());
        kv("node_cap", self.node_cap.to_string());
        kv("random_nodes", self.random_nodes.to_string());
        kv("subgraph_mode", self.subgraph_mode.to_string());
        kv("loss_reduction", self.loss_reduction.to_string());
        kv("resample_negatives", self.resample_negatives.to_string());
        kv("kg_fraction", format!("{:?}", self.kg_fraction));
        s
    }

    // negated comparisons also reject NaN
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("hops", self.hops),
            ("max_path_len", self.max_path_len),
            ("layers", self.layers),
            ("dim", self.dim),
            ("iterations", self.iterations),
            ("max_epochs", self.max_epochs),
            ("patience", self.patience),
            ("batch_size", self.batch_size),
            ("node_cap", self.node_cap),
        ];
        for (k, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("`{k}` must be positive")));
            }
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha {} outside [0,1]", self.alpha)));
        }
        if !(self.gamma >= 0.0) {
            return Err(Error::Config(format!("gamma {} must be >= 0", self.gamma)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0,1)", self.dropout)));
        }
        if !(self.lr > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config("lr must be > 0 and weight_decay >= 0".into()));
        }
        if !(self.kg_fraction >= 0.0 && self.kg_fraction <= 1.0) {
            return Err(Error::Config(format!("kg_fraction {} outside [0,1]", self.kg_fraction)));
        }
        Ok(())
    }

    pub fn extract_config(&self) -> ExtractConfig {
        ExtractConfig {
            hops: self.hops,
            max_path_len: self.max_path_len,
            node_cap: self.node_cap,
            random_nodes: self.random_nodes,
            seed: self.seed,
        }
    }
}
