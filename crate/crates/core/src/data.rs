//! Dataset ingestion, vocabulary filtering, synthetic generation and
//! checkpoint persistence.
//!
//! Records are UTF-8 JSON lines:
//!
//! ```text
//! {"font_id": "f0001", "features": [0.1, ...], "tags": ["bold", "serif"], "split": "train"}
//! ```
//!
//! Checkpoints are the ASCII magic `HCE1`, a little-endian `u32` header
//! length, a JSON header ([`CheckpointMeta`]), then every trainable block in
//! [`BLOCK_NAMES`] order as little-endian IEEE-754 `f32`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::Curvature;
use crate::model::{FontRecord, ModelDims, ModelParams, TagSet, Vocabulary, BLOCK_NAMES, NUM_BLOCKS};
use crate::rng::{stream, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Disjoint record-index lists.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Splits {
    pub fn get(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    fn get_mut(&mut self, split: Split) -> &mut Vec<usize> {
        match split {
            Split::Train => &mut self.train,
            Split::Val => &mut self.val,
            Split::Test => &mut self.test,
        }
    }

    /// Which split owns each record index.
    fn assignment(&self, n: usize) -> Vec<Option<Split>> {
        let mut out = vec![None; n];
        for s in [Split::Train, Split::Val, Split::Test] {
            for &i in self.get(s) {
                out[i] = Some(s);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub records: Vec<FontRecord>,
    pub vocab: Vocabulary,
    pub splits: Splits,
}

impl Dataset {
    pub fn feature_dim(&self) -> usize {
        self.records.first().map_or(0, |r| r.features.len())
    }

    pub fn split_records(&self, split: Split) -> impl Iterator<Item = &FontRecord> {
        self.splits.get(split).iter().map(|&i| &self.records[i])
    }

    pub fn find_font(&self, font_id: &str) -> Result<&FontRecord> {
        self.records
            .iter()
            .find(|r| r.font_id == font_id)
            .ok_or_else(|| Error::UnknownFont(font_id.to_owned()))
    }

    fn check_invariants(&self) -> Result<()> {
        let n = self.records.len();
        let mut seen = vec![false; n];
        for s in [Split::Train, Split::Val, Split::Test] {
            for &i in self.splits.get(s) {
                if i >= n || std::mem::replace(&mut seen[i], true) {
                    return Err(Error::invalid("splits must partition the records"));
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::invalid("splits must partition the records"));
        }
        for r in &self.records {
            if r.tags.ids().iter().any(|&t| t as usize >= self.vocab.len()) {
                return Err(Error::invalid(format!(
                    "font {} has a tag outside the vocabulary",
                    r.font_id
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordLine {
    font_id: String,
    features: Vec<f64>,
    tags: Vec<String>,
    split: Split,
}

/// Reads a JSON-lines records file. Every tag seen in any split enters the
/// vocabulary; use [`build_vocab`] to apply a frequency threshold.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path)?;
    read_dataset(BufReader::new(file), path)
}

pub fn read_dataset(reader: impl BufRead, path: &Path) -> Result<Dataset> {
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_owned(),
        line,
        msg,
    };
    let mut lines = Vec::new();
    let mut feature_dim = None;
    let mut ids = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RecordLine = serde_json::from_str(&line).map_err(|e| parse_err(lineno, e.to_string()))?;
        let m = *feature_dim.get_or_insert(rec.features.len());
        if rec.features.len() != m {
            return Err(parse_err(
                lineno,
                format!(
                    "feature length {} differs from the first record's {m}",
                    rec.features.len()
                ),
            ));
        }
        if m == 0 {
            return Err(parse_err(lineno, "empty feature vector".into()));
        }
        if rec.features.iter().any(|v| !v.is_finite()) {
            return Err(parse_err(lineno, "non-finite feature".into()));
        }
        if rec.tags.is_empty() {
            return Err(parse_err(lineno, "record has no tags".into()));
        }
        if !ids.insert(rec.font_id.clone()) {
            return Err(parse_err(lineno, format!("duplicate font id {:?}", rec.font_id)));
        }
        lines.push(rec);
    }

    // vocabulary over every tag, ordered by train frequency then name
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for rec in &lines {
        for t in &rec.tags {
            let c = counts.entry(t.as_str()).or_insert(0);
            if rec.split == Split::Train {
                *c += 1;
            }
        }
    }
    let vocab = Vocabulary::new(ordered_tags(&counts, 0))?;

    let mut splits = Splits::default();
    let mut records = Vec::with_capacity(lines.len());
    for rec in lines {
        let tag_ids: Vec<u32> = rec
            .tags
            .iter()
            .map(|t| vocab.id(t).expect("tag indexed above"))
            .collect();
        splits.get_mut(rec.split).push(records.len());
        records.push(FontRecord {
            font_id: rec.font_id,
            features: rec.features,
            tags: TagSet::new(tag_ids)?,
        });
    }
    require_nonempty_splits(&splits)?;
    let ds = Dataset { records, vocab, splits };
    ds.check_invariants()?;
    Ok(ds)
}

fn require_nonempty_splits(splits: &Splits) -> Result<()> {
    for (s, name) in [
        (Split::Train, "train split"),
        (Split::Val, "val split"),
        (Split::Test, "test split"),
    ] {
        if splits.get(s).is_empty() {
            return Err(Error::Empty(name));
        }
    }
    Ok(())
}

fn ordered_tags(counts: &HashMap<&str, usize>, min_count: usize) -> Vec<String> {
    let mut kept: Vec<(&str, usize)> = counts
        .iter()
        .filter(|(_, &c)| c >= min_count)
        .map(|(&t, &c)| (t, c))
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    kept.into_iter().map(|(t, _)| t.to_owned()).collect()
}

/// Writes `dataset` as JSON lines, one record per line in index order.
pub fn write_dataset(path: impl AsRef<Path>, dataset: &Dataset) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let owner = dataset.splits.assignment(dataset.records.len());
    for (rec, split) in dataset.records.iter().zip(owner) {
        let line = RecordLine {
            font_id: rec.font_id.clone(),
            features: rec.features.clone(),
            tags: dataset.vocab.names(&rec.tags),
            split: split.ok_or_else(|| Error::invalid("record outside every split"))?,
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Keeps tags seen at least `min_count` times among training records,
/// re-indexes the vocabulary (descending train frequency, then name), and
/// drops records left without tags.
pub fn build_vocab(dataset: &Dataset, min_count: usize) -> Result<Dataset> {
    if min_count == 0 {
        return Err(Error::invalid("min_count must be at least 1"));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for r in dataset.split_records(Split::Train) {
        for &t in r.tags.ids() {
            *counts.entry(dataset.vocab.name(t)).or_insert(0) += 1;
        }
    }
    let vocab = Vocabulary::new(ordered_tags(&counts, min_count))?;
    if vocab.is_empty() {
        return Err(Error::Empty("vocabulary after frequency filtering"));
    }
    restrict_to_vocab(dataset, &vocab)
}

/// Re-expresses every record over `vocab`, dropping unknown tags and any
/// record whose tag set becomes empty.
pub fn restrict_to_vocab(dataset: &Dataset, vocab: &Vocabulary) -> Result<Dataset> {
    let owner = dataset.splits.assignment(dataset.records.len());
    let mut records = Vec::new();
    let mut splits = Splits::default();
    for (rec, split) in dataset.records.iter().zip(owner) {
        let ids: Vec<u32> = rec
            .tags
            .ids()
            .iter()
            .filter_map(|&t| vocab.id(dataset.vocab.name(t)))
            .collect();
        let Ok(tags) = TagSet::new(ids) else { continue };
        let split = split.ok_or_else(|| Error::invalid("record outside every split"))?;
        splits.get_mut(split).push(records.len());
        records.push(FontRecord {
            font_id: rec.font_id.clone(),
            features: rec.features.clone(),
            tags,
        });
    }
    require_nonempty_splits(&splits)?;
    Ok(Dataset {
        records,
        vocab: vocab.clone(),
        splits,
    })
}

// ---------------------------------------------------------------------------
// Synthetic data

/// Parameters of the clustered synthetic generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    /// Latent style prototypes.
    pub n_clusters: usize,
    pub n_fonts: usize,
    pub n_tags: usize,
    /// Number of clusters each tag covers (1 = most specific).
    pub coverage: Vec<usize>,
    /// Standard deviation of per-font feature noise.
    pub noise: f64,
    pub feature_dim: usize,
    /// Cap on tags per font.
    pub max_tags: usize,
    /// Fractions of fonts in the validation and test splits.
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl SynthConfig {
    /// 8 clusters, 800 fonts, 60 tags with log-spaced coverage in [1, 8],
    /// 32 feature dimensions, at most 8 tags per font.
    pub fn synthetic_small(seed: u64) -> Self {
        SynthConfig {
            n_clusters: 8,
            n_fonts: 800,
            n_tags: 60,
            coverage: log_spaced_coverage(60, 8),
            noise: 0.5,
            feature_dim: 32,
            max_tags: 8,
            val_fraction: 0.1,
            test_fraction: 0.1,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid(format!("synthetic config: {m}")));
        if self.n_clusters == 0 || self.n_fonts == 0 || self.feature_dim == 0 || self.max_tags == 0 {
            return bad("sizes must be positive");
        }
        if self.n_tags < self.n_clusters {
            return bad("need at least as many tags as clusters");
        }
        if self.coverage.len() != self.n_tags {
            return bad("coverage must list one count per tag");
        }
        if self.coverage.iter().any(|&c| c == 0 || c > self.n_clusters) {
            return bad("coverage counts must lie in [1, n_clusters]");
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad("noise must be non-negative");
        }
        let (v, t) = (self.val_fraction, self.test_fraction);
        if !(v > 0.0 && t > 0.0 && v + t < 1.0) {
            return bad("split fractions must be positive and leave a training split");
        }
        Ok(())
    }
}

/// Per-tag coverage counts spaced geometrically from 1 to `n_clusters`.
pub fn log_spaced_coverage(n_tags: usize, n_clusters: usize) -> Vec<usize> {
    if n_tags == 1 {
        return vec![1];
    }
    let top = (n_clusters as f64).ln();
    (0..n_tags)
        .map(|j| {
            let x = (top * j as f64 / (n_tags - 1) as f64).exp().round() as usize;
            x.clamp(1, n_clusters)
        })
        .collect()
}

/// A generated dataset with its ground truth.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub dataset: Dataset,
    /// Tag name -> number of clusters it covers.
    pub specificity: BTreeMap<String, usize>,
    /// Cluster of each record.
    pub clusters: Vec<usize>,
}

/// Clustered fonts with tags whose cluster coverage sets their specificity.
///
/// Each font is its cluster prototype plus Gaussian noise. A font draws its
/// tags from the tags covering its cluster; tags are dealt round-robin
/// within each cluster first, so every covering tag is carried by at least
/// one font of every cluster it covers.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<SyntheticData> {
    cfg.validate()?;
    let mut rng = stream(cfg.seed, Stream::Synth);

    let prototypes: Vec<Vec<f64>> = (0..cfg.n_clusters)
        .map(|_| (0..cfg.feature_dim).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect();

    // coverage sets: cluster -> covering tags
    let mut cluster_tags: Vec<Vec<u32>> = vec![Vec::new(); cfg.n_clusters];
    for (t, &count) in cfg.coverage.iter().enumerate() {
        for c in index::sample(&mut rng, cfg.n_clusters, count) {
            cluster_tags[c].push(t as u32);
        }
    }
    for tags in &mut cluster_tags {
        tags.sort_unstable();
    }

    let clusters: Vec<usize> = (0..cfg.n_fonts).map(|i| i % cfg.n_clusters).collect();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); cfg.n_clusters];
    for (i, &c) in clusters.iter().enumerate() {
        members[c].push(i);
    }
    for (c, fonts) in members.iter().enumerate() {
        let available = cluster_tags[c].len();
        if available == 0 {
            return Err(Error::invalid(format!(
                "infeasible profile: no tag covers cluster {c}, so its fonts would have no tags"
            )));
        }
        if fonts.len() < available {
            return Err(Error::invalid(format!(
                "infeasible profile: cluster {c} has {} fonts for {available} covering tags",
                fonts.len()
            )));
        }
    }

    let mut tag_sets: Vec<Vec<u32>> = vec![Vec::new(); cfg.n_fonts];
    for (c, fonts) in members.iter().enumerate() {
        let pool = &cluster_tags[c];
        let mut dealt = pool.clone();
        dealt.shuffle(&mut rng);
        for (k, &f) in fonts.iter().enumerate() {
            let seed_tag = dealt[k % dealt.len()];
            let cap = cfg.max_tags.min(pool.len());
            let lo = 2.min(cap);
            let size = rng.random_range(lo..=cap);
            let mut set = vec![seed_tag];
            let others: Vec<u32> = pool.iter().copied().filter(|&t| t != seed_tag).collect();
            for j in index::sample(&mut rng, others.len(), size - 1) {
                set.push(others[j]);
            }
            tag_sets[f] = set;
        }
    }

    let features: Vec<Vec<f64>> = clusters
        .iter()
        .map(|&c| {
            prototypes[c]
                .iter()
                .map(|p| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    p + cfg.noise * z
                })
                .collect()
        })
        .collect();

    let mut order: Vec<usize> = (0..cfg.n_fonts).collect();
    order.shuffle(&mut rng);
    let n_val = ((cfg.n_fonts as f64 * cfg.val_fraction).round() as usize).max(1);
    let n_test = ((cfg.n_fonts as f64 * cfg.test_fraction).round() as usize).max(1);
    if n_val + n_test >= cfg.n_fonts {
        return Err(Error::invalid("synthetic config: too few fonts for three splits"));
    }
    let mut splits = Splits {
        val: order[..n_val].to_vec(),
        test: order[n_val..n_val + n_test].to_vec(),
        train: order[n_val + n_test..].to_vec(),
    };
    splits.train.sort_unstable();
    splits.val.sort_unstable();
    splits.test.sort_unstable();

    let names: Vec<String> = (0..cfg.n_tags).map(|t| format!("tag{t:03}")).collect();
    let vocab = Vocabulary::new(names.clone())?;
    let records = (0..cfg.n_fonts)
        .map(|i| {
            Ok(FontRecord {
                font_id: format!("font{i:05}"),
                features: features[i].clone(),
                tags: TagSet::new(tag_sets[i].clone())?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let specificity = names.into_iter().zip(cfg.coverage.iter().copied()).collect();
    let dataset = Dataset { records, vocab, splits };
    dataset.check_invariants()?;
    Ok(SyntheticData {
        dataset,
        specificity,
        clusters,
    })
}

pub fn write_specificity(path: impl AsRef<Path>, table: &BTreeMap<String, usize>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, table)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_specificity(path: impl AsRef<Path>) -> Result<BTreeMap<String, usize>> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

// ---------------------------------------------------------------------------
// Checkpoints

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"HCE1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockInfo {
    pub name: String,
    pub len: usize,
}

/// JSON header of a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub dims: ModelDims,
    pub curvature: Curvature,
    pub cone_k: f64,
    pub seed: u64,
    pub step: usize,
    /// Tag names in id order.
    pub vocab: Vec<String>,
    /// Layout of the binary payload, for readers in other languages.
    #[serde(default)]
    pub blocks: Vec<BlockInfo>,
}

pub fn save_checkpoint(params: &ModelParams, meta: &CheckpointMeta, path: impl AsRef<Path>) -> Result<()> {
    if meta.dims != params.dims {
        return Err(Error::Format("metadata dimensions differ from the parameters".into()));
    }
    let mut meta = meta.clone();
    meta.curvature = params.curvature;
    meta.cone_k = params.cone_k;
    meta.blocks = BLOCK_NAMES
        .iter()
        .zip(params.blocks())
        .map(|(n, b)| BlockInfo {
            name: (*n).to_owned(),
            len: b.len(),
        })
        .collect();
    let header = serde_json::to_vec(&meta)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&(header.len() as u32).to_le_bytes())?;
    w.write_all(&header)?;
    for block in params.blocks() {
        for &v in block {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(ModelParams, CheckpointMeta)> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    decode_checkpoint(&bytes)
}

/// Loads a checkpoint and checks it against the dimensions the caller
/// expects.
pub fn load_checkpoint_expecting(path: impl AsRef<Path>, dims: &ModelDims) -> Result<(ModelParams, CheckpointMeta)> {
    let (p, meta) = load_checkpoint(path)?;
    if &p.dims != dims {
        return Err(Error::Format(format!(
            "checkpoint dimensions {:?} do not match the requested {:?}",
            p.dims, dims
        )));
    }
    Ok((p, meta))
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(ModelParams, CheckpointMeta)> {
    let fmt = |m: &str| Error::Format(m.to_owned());
    if bytes.len() < 8 {
        return Err(fmt("file too short for a checkpoint header"));
    }
    if &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(fmt("bad magic; not an HCE1 checkpoint"));
    }
    let header_len = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let body_start = 8 + header_len;
    if bytes.len() < body_start {
        return Err(fmt("truncated header"));
    }
    let meta: CheckpointMeta =
        serde_json::from_slice(&bytes[8..body_start]).map_err(|e| Error::Format(format!("header: {e}")))?;
    if meta.vocab.len() != meta.dims.vocab_size {
        return Err(fmt("vocabulary length differs from dims.vocab_size"));
    }
    let mut params = ModelParams::zeros(meta.dims, meta.curvature, meta.cone_k);
    let lengths = ModelParams::block_lengths(&meta.dims);
    if !meta.blocks.is_empty() {
        let declared: Vec<usize> = meta.blocks.iter().map(|b| b.len).collect();
        if meta.blocks.len() != NUM_BLOCKS || declared != lengths {
            return Err(fmt("block layout does not match the declared dimensions"));
        }
    }
    let expected: usize = lengths.iter().sum::<usize>() * 4;
    let payload = &bytes[body_start..];
    if payload.len() < expected {
        return Err(fmt("truncated parameter payload"));
    }
    if payload.len() > expected {
        return Err(fmt("trailing bytes after parameter payload"));
    }
    let mut values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64);
    for block in params.blocks_mut() {
        for v in block.iter_mut() {
            *v = values.next().expect("length checked");
        }
    }
    Ok((params, meta))
}
