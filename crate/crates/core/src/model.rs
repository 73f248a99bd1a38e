//! Encoders from font features and tag sets to hyperboloid points.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::{exp_map_origin, Curvature, LorentzPoint, TangentAtOrigin};
use crate::rng::{stream, Stream};

/// Lower clamp on the contrastive temperature.
pub const TAU_MIN: f64 = 0.01;
/// Upper clamp on the contrastive temperature.
pub const TAU_MAX: f64 = 1.0;
/// Temperature at initialization.
pub const TAU_INIT: f64 = 0.07;

/// Ordered tag vocabulary with dense integer ids.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Vocabulary {
    tags: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    pub fn new(tags: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tags.len());
        for (i, t) in tags.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::invalid(format!("duplicate vocabulary tag {t:?}")));
            }
        }
        Ok(Vocabulary { tags, index })
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn id(&self, tag: &str) -> Option<u32> {
        self.index.get(tag).copied()
    }

    pub fn name(&self, id: u32) -> &str {
        &self.tags[id as usize]
    }

    pub fn tags(&self) -> &[String] {
        &self.tags
    }

    pub fn names(&self, set: &TagSet) -> Vec<String> {
        set.ids().iter().map(|&i| self.name(i).to_owned()).collect()
    }
}

/// Non-empty sorted set of tag ids.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<u32>", into = "Vec<u32>")]
pub struct TagSet(Vec<u32>);

impl TagSet {
    /// Canonicalizes (sorts, dedups) `ids`. Fails on an empty set.
    pub fn new(mut ids: Vec<u32>) -> Result<Self> {
        ids.sort_unstable();
        ids.dedup();
        if ids.is_empty() {
            return Err(Error::Empty("tag set"));
        }
        Ok(TagSet(ids))
    }

    /// As [`TagSet::new`], additionally checking every id against a
    /// vocabulary size.
    pub fn with_vocab(ids: Vec<u32>, vocab_size: usize) -> Result<Self> {
        let set = TagSet::new(ids)?;
        if let Some(&bad) = set.0.iter().find(|&&i| i as usize >= vocab_size) {
            return Err(Error::invalid(format!(
                "tag id {bad} out of range for vocabulary of {vocab_size}"
            )));
        }
        Ok(set)
    }

    pub fn singleton(id: u32) -> Self {
        TagSet(vec![id])
    }

    pub fn ids(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, id: u32) -> bool {
        self.0.binary_search(&id).is_ok()
    }

    pub fn is_subset_of(&self, other: &TagSet) -> bool {
        self.0.iter().all(|&i| other.contains(i))
    }

    /// Size of the intersection with `other`.
    pub fn overlap(&self, other: &TagSet) -> usize {
        let (mut i, mut j, mut n) = (0, 0, 0);
        while i < self.0.len() && j < other.0.len() {
            match self.0[i].cmp(&other.0[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    n += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        n
    }
}

impl TryFrom<Vec<u32>> for TagSet {
    type Error = Error;

    fn try_from(ids: Vec<u32>) -> Result<Self> {
        TagSet::new(ids)
    }
}

impl From<TagSet> for Vec<u32> {
    fn from(s: TagSet) -> Vec<u32> {
        s.0
    }
}

/// A font's feature vector and its annotated tags.
#[derive(Debug, Clone, PartialEq)]
pub struct FontRecord {
    pub font_id: String,
    pub features: Vec<f64>,
    pub tags: TagSet,
}

/// Architecture sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDims {
    /// Vocabulary size `V`.
    pub vocab_size: usize,
    /// Font feature length `m`.
    pub feature_dim: usize,
    /// Tag-table row length `m_t`.
    pub tag_dim: usize,
    /// Hyperbolic dimension `d`.
    pub embed_dim: usize,
    /// Width of the hidden layer in both encoders.
    pub hidden_dim: usize,
}

impl ModelDims {
    /// Dimensions with the default hidden width `2d`.
    pub fn new(vocab_size: usize, feature_dim: usize, tag_dim: usize, embed_dim: usize) -> Self {
        ModelDims {
            vocab_size,
            feature_dim,
            tag_dim,
            embed_dim,
            hidden_dim: 2 * embed_dim,
        }
    }

    fn validate(&self) -> Result<()> {
        let all = [
            self.vocab_size,
            self.feature_dim,
            self.tag_dim,
            self.embed_dim,
            self.hidden_dim,
        ];
        if all.contains(&0) {
            return Err(Error::invalid(format!("model dimensions must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// Fully connected layer, row-major `weight[out][in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn init(in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        Dense {
            in_dim,
            out_dim,
            weight: (0..in_dim * out_dim).map(|_| rng.random_range(-bound..bound)).collect(),
            bias: vec![0.0; out_dim],
        }
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Dense {
            in_dim,
            out_dim,
            weight: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.weight
            .chunks_exact(self.in_dim)
            .zip(&self.bias)
            .map(|(row, b)| b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
            .collect()
    }
}

/// One tanh hidden layer followed by a linear output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub hidden: Dense,
    pub output: Dense,
}

impl Mlp {
    fn init(in_dim: usize, hidden: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        Mlp {
            hidden: Dense::init(in_dim, hidden, rng),
            output: Dense::init(hidden, out_dim, rng),
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let h: Vec<f64> = self.hidden.forward(x).into_iter().map(f64::tanh).collect();
        self.output.forward(&h)
    }
}

/// Names of the trainable parameter blocks, in storage order.
pub const BLOCK_NAMES: [&str; NUM_BLOCKS] = [
    "tag_table",
    "set_encoder.hidden.weight",
    "set_encoder.hidden.bias",
    "set_encoder.output.weight",
    "set_encoder.output.bias",
    "font_encoder.hidden.weight",
    "font_encoder.hidden.bias",
    "font_encoder.output.weight",
    "font_encoder.output.bias",
    "log_scale_font",
    "log_scale_imp",
    "log_temperature",
];

/// Whether decoupled weight decay applies to each block.
pub const BLOCK_DECAY: [bool; NUM_BLOCKS] = [
    true, true, false, true, false, true, false, true, false, false, false, false,
];

/// Number of trainable blocks.
pub const NUM_BLOCKS: usize = 12;

/// Index of the log-temperature block.
pub const TEMPERATURE_BLOCK: usize = 11;

/// Every trainable parameter plus the fixed geometry constants.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub dims: ModelDims,
    /// `V x m_t`, row per tag.
    pub tag_table: Vec<f64>,
    pub set_encoder: Mlp,
    pub font_encoder: Mlp,
    pub log_scale_font: f64,
    pub log_scale_imp: f64,
    pub log_temperature: f64,
    pub curvature: Curvature,
    pub cone_k: f64,
}

/// Seeded initialization: scaled-uniform encoder weights, zero biases,
/// uniform tag table, output scales `1/sqrt(d)` and temperature 0.07.
pub fn init_params(dims: ModelDims, curvature: Curvature, cone_k: f64, seed: u64) -> Result<ModelParams> {
    dims.validate()?;
    if !(cone_k.is_finite() && cone_k > 0.0) {
        return Err(Error::invalid(format!("cone constant must be positive, got {cone_k}")));
    }
    let mut rng = stream(seed, Stream::Init);
    let tag_table = (0..dims.vocab_size * dims.tag_dim)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let set_encoder = Mlp::init(dims.tag_dim, dims.hidden_dim, dims.embed_dim, &mut rng);
    let font_encoder = Mlp::init(dims.feature_dim, dims.hidden_dim, dims.embed_dim, &mut rng);
    let log_scale = (1.0 / (dims.embed_dim as f64).sqrt()).ln();
    Ok(ModelParams {
        dims,
        tag_table,
        set_encoder,
        font_encoder,
        log_scale_font: log_scale,
        log_scale_imp: log_scale,
        log_temperature: TAU_INIT.ln(),
        curvature,
        cone_k,
    })
}

impl ModelParams {
    /// Contrastive temperature `exp(log_temperature)`.
    pub fn temperature(&self) -> f64 {
        self.log_temperature.exp()
    }

    pub fn font_scale(&self) -> f64 {
        self.log_scale_font.exp()
    }

    pub fn imp_scale(&self) -> f64 {
        self.log_scale_imp.exp()
    }

    /// Trainable blocks in [`BLOCK_NAMES`] order.
    pub fn blocks(&self) -> [&[f64]; NUM_BLOCKS] {
        [
            &self.tag_table,
            &self.set_encoder.hidden.weight,
            &self.set_encoder.hidden.bias,
            &self.set_encoder.output.weight,
            &self.set_encoder.output.bias,
            &self.font_encoder.hidden.weight,
            &self.font_encoder.hidden.bias,
            &self.font_encoder.output.weight,
            &self.font_encoder.output.bias,
            std::slice::from_ref(&self.log_scale_font),
            std::slice::from_ref(&self.log_scale_imp),
            std::slice::from_ref(&self.log_temperature),
        ]
    }

    pub fn blocks_mut(&mut self) -> [&mut [f64]; NUM_BLOCKS] {
        [
            &mut self.tag_table,
            &mut self.set_encoder.hidden.weight,
            &mut self.set_encoder.hidden.bias,
            &mut self.set_encoder.output.weight,
            &mut self.set_encoder.output.bias,
            &mut self.font_encoder.hidden.weight,
            &mut self.font_encoder.hidden.bias,
            &mut self.font_encoder.output.weight,
            &mut self.font_encoder.output.bias,
            std::slice::from_mut(&mut self.log_scale_font),
            std::slice::from_mut(&mut self.log_scale_imp),
            std::slice::from_mut(&mut self.log_temperature),
        ]
    }

    /// Expected length of each block for these dimensions.
    pub fn block_lengths(dims: &ModelDims) -> [usize; NUM_BLOCKS] {
        let (v, m, mt, d, h) = (
            dims.vocab_size,
            dims.feature_dim,
            dims.tag_dim,
            dims.embed_dim,
            dims.hidden_dim,
        );
        [v * mt, h * mt, h, d * h, d, h * m, h, d * h, d, 1, 1, 1]
    }

    /// All-zero parameters with the given dimensions (used for decoding).
    pub fn zeros(dims: ModelDims, curvature: Curvature, cone_k: f64) -> Self {
        ModelParams {
            dims,
            tag_table: vec![0.0; dims.vocab_size * dims.tag_dim],
            set_encoder: Mlp {
                hidden: Dense::zeros(dims.tag_dim, dims.hidden_dim),
                output: Dense::zeros(dims.hidden_dim, dims.embed_dim),
            },
            font_encoder: Mlp {
                hidden: Dense::zeros(dims.feature_dim, dims.hidden_dim),
                output: Dense::zeros(dims.hidden_dim, dims.embed_dim),
            },
            log_scale_font: 0.0,
            log_scale_imp: 0.0,
            log_temperature: TAU_INIT.ln(),
            curvature,
            cone_k,
        }
    }

    pub fn num_parameters(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    /// Tangent vector of a font, before the exponential map.
    pub fn font_tangent(&self, features: &[f64]) -> Result<TangentAtOrigin> {
        if features.len() != self.dims.feature_dim {
            return Err(Error::DimensionMismatch {
                what: "font features",
                expected: self.dims.feature_dim,
                got: features.len(),
            });
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("font features"));
        }
        let scale = self.font_scale();
        let out = self.font_encoder.forward(features);
        TangentAtOrigin::new(out.into_iter().map(|v| v * scale).collect())
    }

    /// Mean of the tag-table rows of `tags`.
    pub fn pool_tags(&self, tags: &TagSet) -> Result<Vec<f64>> {
        if tags.is_empty() {
            return Err(Error::Empty("tag set"));
        }
        let mt = self.dims.tag_dim;
        let mut pooled = vec![0.0; mt];
        for &id in tags.ids() {
            if id as usize >= self.dims.vocab_size {
                return Err(Error::invalid(format!(
                    "tag id {id} out of range for vocabulary of {}",
                    self.dims.vocab_size
                )));
            }
            let row = &self.tag_table[id as usize * mt..(id as usize + 1) * mt];
            for (p, r) in pooled.iter_mut().zip(row) {
                *p += r;
            }
        }
        let n = tags.len() as f64;
        pooled.iter_mut().for_each(|p| *p /= n);
        Ok(pooled)
    }

    /// Tangent vector of a tag set, before the exponential map.
    pub fn tagset_tangent(&self, tags: &TagSet) -> Result<TangentAtOrigin> {
        let pooled = self.pool_tags(tags)?;
        let scale = self.imp_scale();
        let out = self.set_encoder.forward(&pooled);
        TangentAtOrigin::new(out.into_iter().map(|v| v * scale).collect())
    }

    pub fn encode_font(&self, features: &[f64]) -> Result<LorentzPoint> {
        exp_map_origin(&self.font_tangent(features)?, self.curvature)
    }

    pub fn encode_tagset(&self, tags: &TagSet) -> Result<LorentzPoint> {
        exp_map_origin(&self.tagset_tangent(tags)?, self.curvature)
    }
}

/// Anything that can place fonts and tag sets on the hyperboloid.
pub trait Embedder: Sync {
    fn curvature(&self) -> Curvature;
    fn embed_font(&self, features: &[f64]) -> Result<LorentzPoint>;
    fn embed_tags(&self, tags: &TagSet) -> Result<LorentzPoint>;
}

impl Embedder for ModelParams {
    fn curvature(&self) -> Curvature {
        self.curvature
    }

    fn embed_font(&self, features: &[f64]) -> Result<LorentzPoint> {
        self.encode_font(features)
    }

    fn embed_tags(&self, tags: &TagSet) -> Result<LorentzPoint> {
        self.encode_tagset(tags)
    }
}
