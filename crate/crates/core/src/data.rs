//! Prepared dataset directories.
//!
//! A data directory holds `train.txt`, `valid.txt`, `test.txt` (DDI triples)
//! and `kg.txt` (external knowledge graph triples), all tab-separated
//! `head relation tail`, plus a `manifest.txt` written by `preprocess`.
//! Files are loaded in that order, which fixes the vocabulary ids.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::{
    build_combined_network, filter_one_relation_per_pair, filter_relation_rank_window, load_triples, sample_fraction,
    split_ddi, write_triples, CombinedNetwork, FactTriplet, SplitSet, Vocabularies,
};
use crate::synthetic::PlantedData;

pub const TRAIN_FILE: &str = "train.txt";
pub const VALID_FILE: &str = "valid.txt";
pub const TEST_FILE: &str = "test.txt";
pub const KG_FILE: &str = "kg.txt";
pub const MANIFEST_FILE: &str = "manifest.txt";

#[derive(Clone, Debug)]
pub struct Dataset {
    pub vocab: Vocabularies,
    pub splits: SplitSet,
    pub kg: Vec<FactTriplet>,
}

impl Dataset {
    pub fn load(dir: &Path) -> Result<Self> {
        let mut vocab = Vocabularies::new();
        let splits = SplitSet {
            train: load_triples(&dir.join(TRAIN_FILE), &mut vocab)?,
            valid: load_triples(&dir.join(VALID_FILE), &mut vocab)?,
            test: load_triples(&dir.join(TEST_FILE), &mut vocab)?,
        };
        let kg_path = dir.join(KG_FILE);
        let kg = if kg_path.exists() {
            load_triples(&kg_path, &mut vocab)?
        } else {
            Vec::new()
        };
        Ok(Self { vocab, splits, kg })
    }

    /// Write the split files and a manifest. The vocabulary is rebuilt on
    /// load, so ids may be renumbered but labels are preserved.
    pub fn write(&self, dir: &Path, notes: &str) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_triples(&dir.join(TRAIN_FILE), &self.splits.train, &self.vocab)?;
        write_triples(&dir.join(VALID_FILE), &self.splits.valid, &self.vocab)?;
        write_triples(&dir.join(TEST_FILE), &self.splits.test, &self.vocab)?;
        write_triples(&dir.join(KG_FILE), &self.kg, &self.vocab)?;
        let mut m = String::new();
        let _ = writeln!(m, "train={}", self.splits.train.len());
        let _ = writeln!(m, "valid={}", self.splits.valid.len());
        let _ = writeln!(m, "test={}", self.splits.test.len());
        let _ = writeln!(m, "kg={}", self.kg.len());
        m.push_str(notes);
        let path = dir.join(MANIFEST_FILE);
        std::fs::write(&path, m).map_err(|e| Error::io(&path, e))
    }

    /// Combined network over the training split and a seeded fraction of
    /// the KG.
    pub fn network(&self, kg_fraction: f64, seed: u64) -> CombinedNetwork {
        let kg = sample_fraction(&self.kg, kg_fraction, seed);
        build_combined_network(self.vocab.clone(), &self.splits, &kg)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PreprocessOptions {
    pub one_relation_per_pair: bool,
    /// `(rank_start, rank_end, min_triples)` relation filter.
    pub rank_window: Option<(usize, usize, usize)>,
    pub ratios: (u32, u32, u32),
    pub seed: u64,
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        Self {
            one_relation_per_pair: false,
            rank_window: None,
            ratios: (7, 1, 2),
            seed: 0,
        }
    }
}

/// Filter and split raw DDI triples; the KG is kept whole (leakage removal
/// happens when the combined network is built).
pub fn prepare(vocab: Vocabularies, ddi: &[FactTriplet], kg: Vec<FactTriplet>, opts: &PreprocessOptions) -> Result<Dataset> {
    let mut ddi = ddi.to_vec();
    if opts.one_relation_per_pair {
        ddi = filter_one_relation_per_pair(&ddi);
    }
    if let Some((a, b, min)) = opts.rank_window {
        ddi = filter_relation_rank_window(&ddi, a, b, min);
    }
    let splits = split_ddi(&ddi, opts.ratios, opts.seed)?;
    Ok(Dataset { vocab, splits, kg })
}

pub fn preprocess_files(ddi_path: &Path, kg_path: Option<&Path>, opts: &PreprocessOptions) -> Result<Dataset> {
    let mut vocab = Vocabularies::new();
    let ddi = load_triples(ddi_path, &mut vocab)?;
    let kg = match kg_path {
        Some(p) => load_triples(p, &mut vocab)?,
        None => Vec::new(),
    };
    prepare(vocab, &ddi, kg, opts)
}

pub fn from_planted(data: PlantedData, opts: &PreprocessOptions) -> Result<Dataset> {
    prepare(data.vocab, &data.ddi, data.kg, opts)
}
