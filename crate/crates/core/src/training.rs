//! Subset sampling, reverse-mode gradients of the objective, AdamW and the
//! training loop.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::cones::{ConeConfig, COINCIDENT_GAP, DENOM_EPS};
use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::losses::{total_loss, EmbeddedBatch, LossBreakdown, LossConfig};
use crate::manifold::{euclidean_norm, Curvature, SMALL_NORM};
use crate::model::{ModelParams, TagSet, BLOCK_DECAY, NUM_BLOCKS, TAU_MAX, TAU_MIN, TEMPERATURE_BLOCK};
use crate::rng::{stream, Stream};

/// How the lower-specificity subset of a tag set is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum SubsetPolicy {
    /// Size uniform over `1..=K-1`, then a uniform subset of that size.
    #[default]
    UniformProper,
    /// Keep each tag independently with probability `p`, redrawing until
    /// the result is a non-empty proper subset.
    Bernoulli(f64),
}

impl fmt::Display for SubsetPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SubsetPolicy::UniformProper => f.write_str("uniform_proper"),
            SubsetPolicy::Bernoulli(p) => write!(f, "bernoulli({p})"),
        }
    }
}

impl FromStr for SubsetPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "uniform_proper" {
            return Ok(SubsetPolicy::UniformProper);
        }
        let p = s
            .strip_prefix("bernoulli(")
            .and_then(|r| r.strip_suffix(')'))
            .and_then(|r| r.trim().parse::<f64>().ok())
            .ok_or_else(|| Error::invalid(format!("unknown subset policy {s:?}")))?;
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::invalid(format!(
                "bernoulli probability must lie in (0, 1), got {p}"
            )));
        }
        Ok(SubsetPolicy::Bernoulli(p))
    }
}

impl TryFrom<String> for SubsetPolicy {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<SubsetPolicy> for String {
    fn from(p: SubsetPolicy) -> String {
        p.to_string()
    }
}

/// Draws a subset description of `tags`.
///
/// A singleton is returned unchanged; larger sets yield a non-empty proper
/// subset.
pub fn sample_subset(tags: &TagSet, policy: SubsetPolicy, rng: &mut impl Rng) -> Result<TagSet> {
    let k = tags.len();
    if k == 0 {
        return Err(Error::Empty("tag set"));
    }
    if k == 1 {
        return Ok(tags.clone());
    }
    let ids = tags.ids();
    let chosen: Vec<u32> = match policy {
        SubsetPolicy::UniformProper => {
            let size = rng.random_range(1..k);
            index::sample(rng, k, size).into_iter().map(|i| ids[i]).collect()
        }
        SubsetPolicy::Bernoulli(p) => loop {
            let kept: Vec<u32> = ids.iter().copied().filter(|_| rng.random::<f64>() < p).collect();
            if !kept.is_empty() && kept.len() < k {
                break kept;
            }
        },
    };
    TagSet::new(chosen)
}

/// One mini-batch with its sampled subsets held fixed.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingBatch {
    pub features: Vec<Vec<f64>>,
    pub tags: Vec<TagSet>,
    pub subsets: Vec<TagSet>,
}

impl TrainingBatch {
    /// Assembles a batch from records, drawing a fresh subset for each.
    pub fn sample<'a>(
        records: impl IntoIterator<Item = &'a crate::model::FontRecord>,
        policy: SubsetPolicy,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut batch = TrainingBatch {
            features: Vec::new(),
            tags: Vec::new(),
            subsets: Vec::new(),
        };
        for r in records {
            batch.subsets.push(sample_subset(&r.tags, policy, rng)?);
            batch.features.push(r.features.clone());
            batch.tags.push(r.tags.clone());
        }
        if batch.features.is_empty() {
            return Err(Error::Empty("batch"));
        }
        Ok(batch)
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    fn check(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::Empty("batch"));
        }
        if self.tags.len() != self.len() || self.subsets.len() != self.len() {
            return Err(Error::invalid("batch fields must have equal lengths"));
        }
        Ok(())
    }
}

fn cone_of(params: &ModelParams) -> Result<ConeConfig> {
    ConeConfig::new(params.cone_k, params.curvature)
}

/// Objective value on the plain `f64` path.
pub fn batch_loss(params: &ModelParams, batch: &TrainingBatch, loss_cfg: &LossConfig) -> Result<LossBreakdown> {
    batch.check()?;
    let embedded = EmbeddedBatch {
        fonts: batch
            .features
            .iter()
            .map(|f| params.encode_font(f))
            .collect::<Result<_>>()?,
        imps: batch
            .tags
            .iter()
            .map(|t| params.encode_tagset(t))
            .collect::<Result<_>>()?,
        sub_imps: batch
            .subsets
            .iter()
            .map(|t| params.encode_tagset(t))
            .collect::<Result<_>>()?,
    };
    total_loss(&embedded, params.temperature(), loss_cfg, &cone_of(params)?)
}

/// Gradient of the objective, one block per trainable parameter field in
/// [`crate::model::BLOCK_NAMES`] order. Curvature and the cone constant are
/// not trainable and have no entry.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub blocks: [Vec<f64>; NUM_BLOCKS],
}

impl GradientSet {
    pub fn zeros_like(params: &ModelParams) -> Self {
        GradientSet {
            blocks: params.blocks().map(|b| vec![0.0; b.len()]),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.blocks.iter().flatten().all(|g| g.is_finite())
    }

    pub fn flat(&self) -> impl Iterator<Item = f64> + '_ {
        self.blocks.iter().flatten().copied()
    }
}

/// Samples subsets for `records`, then returns the objective and its exact
/// gradient with those subsets held fixed.
pub fn compute_gradients<'a>(
    params: &ModelParams,
    records: impl IntoIterator<Item = &'a crate::model::FontRecord>,
    loss_cfg: &LossConfig,
    policy: SubsetPolicy,
    rng: &mut impl Rng,
) -> Result<(LossBreakdown, GradientSet)> {
    let batch = TrainingBatch::sample(records, policy, rng)?;
    loss_and_gradients(params, &batch, loss_cfg)
}

/// Objective and gradient for a batch whose subsets are already drawn.
pub fn loss_and_gradients(
    params: &ModelParams,
    batch: &TrainingBatch,
    loss_cfg: &LossConfig,
) -> Result<(LossBreakdown, GradientSet)> {
    batch.check()?;
    loss_cfg.validate()?;
    let cone = cone_of(params)?;
    let mut g = Graph::new(params);
    let out = g.objective(params, batch, loss_cfg, &cone)?;
    if !out.total_value.is_finite() {
        return Err(Error::NonFinite("total loss"));
    }
    let adj = g.tape.gradient(out.total);
    let mut grads = GradientSet::zeros_like(params);
    let mut offset = 0;
    for block in grads.blocks.iter_mut() {
        let n = block.len();
        block.copy_from_slice(&adj[offset..offset + n]);
        offset += n;
    }
    if !grads.is_finite() {
        return Err(Error::NonFinite("gradient"));
    }
    Ok((out.breakdown, grads))
}

#[derive(Clone)]
struct TapePoint {
    space: Vec<Var>,
    time: Var,
}

struct Objective {
    total: Var,
    total_value: f64,
    breakdown: LossBreakdown,
}

/// Computation graph of the objective. Parameter leaves come first, so a
/// leaf's tape index equals its flat parameter offset.
struct Graph {
    tape: Tape,
    blocks: [Vec<Var>; NUM_BLOCKS],
    c: Curvature,
}

impl Graph {
    fn new(params: &ModelParams) -> Self {
        let mut tape = Tape::with_capacity(1 << 16, 1 << 18);
        let blocks = params.blocks().map(|b| b.iter().map(|&v| tape.leaf(v)).collect());
        Graph {
            tape,
            blocks,
            c: params.curvature,
        }
    }

    fn dense_const(&mut self, w: usize, b: usize, x: &[f64]) -> Vec<Var> {
        let in_dim = x.len();
        let (tape, blocks) = (&mut self.tape, &self.blocks);
        blocks[w]
            .chunks_exact(in_dim)
            .zip(&blocks[b])
            .map(|(row, &bias)| tape.affine_const(row, x, bias))
            .collect()
    }

    fn dense(&mut self, w: usize, b: usize, x: &[Var]) -> Vec<Var> {
        let in_dim = x.len();
        let (tape, blocks) = (&mut self.tape, &self.blocks);
        blocks[w]
            .chunks_exact(in_dim)
            .zip(&blocks[b])
            .map(|(row, &bias)| tape.affine(row, x, bias))
            .collect()
    }

    fn tanh_all(&mut self, xs: Vec<Var>) -> Vec<Var> {
        xs.into_iter().map(|x| self.tape.tanh(x)).collect()
    }

    fn encode_font(&mut self, features: &[f64], scale: Var) -> TapePoint {
        let h = self.dense_const(5, 6, features);
        let h = self.tanh_all(h);
        let out = self.dense(7, 8, &h);
        let v: Vec<Var> = out.into_iter().map(|o| self.tape.mul(o, scale)).collect();
        self.exp_map(v)
    }

    fn encode_tagset(&mut self, tags: &TagSet, mt: usize, scale: Var) -> TapePoint {
        let w = vec![1.0 / tags.len() as f64; tags.len()];
        let pooled: Vec<Var> = (0..mt)
            .map(|j| {
                let col: Vec<Var> = tags
                    .ids()
                    .iter()
                    .map(|&t| self.blocks[0][t as usize * mt + j])
                    .collect();
                self.tape.weighted_sum(&col, &w)
            })
            .collect();
        let h = self.dense(1, 2, &pooled);
        let h = self.tanh_all(h);
        let out = self.dense(3, 4, &h);
        let v: Vec<Var> = out.into_iter().map(|o| self.tape.mul(o, scale)).collect();
        self.exp_map(v)
    }

    fn encode_cached<'b>(
        &mut self,
        cache: &mut HashMap<&'b TagSet, TapePoint>,
        tags: &'b TagSet,
        mt: usize,
        scale: Var,
    ) -> TapePoint {
        if let Some(p) = cache.get(tags) {
            return p.clone();
        }
        let p = self.encode_tagset(tags, mt, scale);
        cache.insert(tags, p.clone());
        p
    }

    /// Exponential map at the origin, mirroring the `f64` implementation
    /// including its small-norm series branch.
    fn exp_map(&mut self, v: Vec<Var>) -> TapePoint {
        let sc = self.c.sqrt();
        let r = self.tape.norm(&v);
        let rv = self.tape.value(r);
        let z = sc * rv;
        let (sinhc, dsinhc, cosh, sinh) = if rv < SMALL_NORM {
            let z2 = z * z;
            (1.0 + z2 / 6.0, z / 3.0, 1.0 + 0.5 * z2, z)
        } else {
            let (sh, ch) = (z.sinh(), z.cosh());
            let d = if z < 1e-2 {
                z / 3.0 + z * z * z / 30.0
            } else {
                (z * ch - sh) / (z * z)
            };
            (sh / z, d, ch, sh)
        };
        let s = self.tape.custom(sinhc, &[(r, sc * dsinhc)]);
        let time = self.tape.custom(cosh / sc, &[(r, sinh)]);
        let space = v.into_iter().map(|vi| self.tape.mul(s, vi)).collect();
        TapePoint { space, time }
    }

    fn inner(&mut self, x: &TapePoint, y: &TapePoint) -> Var {
        let xs: Vec<f64> = x.space.iter().map(|&v| self.tape.value(v)).collect();
        let ys: Vec<f64> = y.space.iter().map(|&v| self.tape.value(v)).collect();
        let (xt, yt) = (self.tape.value(x.time), self.tape.value(y.time));
        let value = xs.iter().zip(&ys).map(|(a, b)| a * b).sum::<f64>() - xt * yt;
        let mut edges = Vec::with_capacity(2 * xs.len() + 2);
        for i in 0..xs.len() {
            edges.push((x.space[i], ys[i]));
            edges.push((y.space[i], xs[i]));
        }
        edges.push((x.time, -yt));
        edges.push((y.time, -xt));
        self.tape.custom(value, &edges)
    }

    fn distance(&mut self, x: &TapePoint, y: &TapePoint) -> Var {
        let c = self.c.get();
        let inner = self.inner(x, y);
        let arg = self.tape.scale(inner, -c);
        let a = self.tape.acosh_clamped(arg);
        let sc = self.c.sqrt();
        let v = self.tape.value(a) / sc;
        self.tape.custom(v, &[(a, 1.0 / sc)])
    }

    fn contrastive(&mut self, queries: &[TapePoint], keys: &[TapePoint], tau: Var) -> Var {
        let mut rows = Vec::with_capacity(queries.len());
        for (n, q) in queries.iter().enumerate() {
            let logits: Vec<Var> = keys
                .iter()
                .map(|k| {
                    let d = self.distance(q, k);
                    let neg = self.tape.scale(d, -1.0);
                    self.tape.div(neg, tau)
                })
                .collect();
            let lse = self.tape.log_sum_exp(&logits);
            rows.push(self.tape.sub(lse, logits[n]));
        }
        self.tape.sum(&rows)
    }

    /// Hinge violation of `y` against the cone at `x`; `None` for a pair
    /// treated as coincident.
    fn violation(&mut self, x: &TapePoint, y: &TapePoint, cone: &ConeConfig) -> Result<Option<Var>> {
        let sc = self.c.sqrt();
        let xn = self.tape.norm(&x.space);
        let xnv = self.tape.value(xn);
        if xnv == 0.0 {
            return Err(Error::DegenerateApex);
        }
        let inner = self.inner(x, y);
        let q = self.tape.scale(inner, self.c.get());
        let qv = self.tape.value(q);
        let gap = qv * qv - 1.0;
        if gap.abs() <= COINCIDENT_GAP {
            return Ok(None);
        }
        let qq = self.tape.mul(q, q);
        let g = self.tape.offset(qq, -1.0);
        let root_v = (gap.max(0.0) + DENOM_EPS).sqrt();
        let root = if gap > 0.0 {
            self.tape.custom(root_v, &[(g, 0.5 / root_v)])
        } else {
            self.tape.custom(root_v, &[])
        };
        let xtq = self.tape.mul(x.time, q);
        let numer = self.tape.add(y.time, xtq);
        let denom = self.tape.mul(xn, root);
        let ratio = self.tape.div(numer, denom);
        let ext = self.tape.acos_clamped(ratio);
        let sv = 2.0 * cone.k / (sc * xnv);
        let s = self.tape.custom(sv, &[(xn, -sv / xnv)]);
        let aper = self.tape.asin_clamped(s);
        let diff = self.tape.sub(ext, aper);
        Ok(Some(self.tape.relu(diff)))
    }

    fn entailment(&mut self, apexes: &[TapePoint], members: &[TapePoint], cone: &ConeConfig) -> Result<Var> {
        let mut terms = Vec::with_capacity(apexes.len());
        for (x, y) in apexes.iter().zip(members) {
            if let Some(v) = self.violation(x, y, cone)? {
                terms.push(v);
            }
        }
        Ok(self.tape.sum(&terms))
    }

    fn objective(
        &mut self,
        params: &ModelParams,
        batch: &TrainingBatch,
        cfg: &LossConfig,
        cone: &ConeConfig,
    ) -> Result<Objective> {
        for f in &batch.features {
            // shape and finiteness checks shared with the f64 path
            params.font_tangent(f)?;
        }
        for t in batch.tags.iter().chain(&batch.subsets) {
            params.pool_tags(t)?;
        }
        let font_scale = self.tape.exp(self.blocks[9][0]);
        let imp_scale = self.tape.exp(self.blocks[10][0]);
        let tau = self.tape.exp(self.blocks[TEMPERATURE_BLOCK][0]);
        let tau_v = self.tape.value(tau);
        if tau_v.is_nan() || tau_v <= 0.0 || tau_v.is_infinite() {
            return Err(Error::invalid(format!("temperature must be positive, got {tau_v}")));
        }

        let fonts: Vec<TapePoint> = batch.features.iter().map(|f| self.encode_font(f, font_scale)).collect();
        let mut cache: HashMap<&TagSet, TapePoint> = HashMap::new();
        let mt = params.dims.tag_dim;
        let imps: Vec<TapePoint> = batch
            .tags
            .iter()
            .map(|t| self.encode_cached(&mut cache, t, mt, imp_scale))
            .collect();
        let subs: Vec<TapePoint> = batch
            .subsets
            .iter()
            .map(|t| self.encode_cached(&mut cache, t, mt, imp_scale))
            .collect();

        let (w_if, w_sub, w_fi) = cfg.contrastive_weights();
        let cont_if = self.contrastive(&imps, &fonts, tau);
        let cont_fi = self.contrastive(&fonts, &imps, tau);
        let mut terms = vec![cont_if];
        let mut weights = vec![w_if];
        let cont_sub = if cfg.enable_sub_contrastive {
            let v = self.contrastive(&subs, &fonts, tau);
            terms.push(v);
            weights.push(w_sub);
            Some(v)
        } else {
            None
        };
        terms.push(cont_fi);
        weights.push(w_fi);
        let cont = self.tape.weighted_sum(&terms, &weights);

        let mut parts = vec![cont];
        let mut lambdas = vec![1.0];
        let ent_if = if cfg.ent_if_active() {
            let v = self.entailment(&imps, &fonts, cone)?;
            parts.push(v);
            lambdas.push(cfg.lambda1);
            Some(v)
        } else {
            None
        };
        let ent_sub = if cfg.ent_sub_active() {
            let v = self.entailment(&subs, &imps, cone)?;
            parts.push(v);
            lambdas.push(cfg.lambda2);
            Some(v)
        } else {
            None
        };
        let total = self.tape.weighted_sum(&parts, &lambdas);

        let val = |v: Option<Var>| v.map_or(0.0, |v| self.tape.value(v));
        let breakdown = LossBreakdown {
            cont_if: self.tape.value(cont_if),
            cont_sub: val(cont_sub),
            cont_fi: self.tape.value(cont_fi),
            cont: self.tape.value(cont),
            ent_if: val(ent_if),
            ent_sub: val(ent_sub),
            total: self.tape.value(total),
        };
        Ok(Objective {
            total,
            total_value: breakdown.total,
            breakdown,
        })
    }
}

// ---------------------------------------------------------------------------
// Optimizer

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: [Vec<f64>; NUM_BLOCKS],
    pub v: [Vec<f64>; NUM_BLOCKS],
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        AdamState {
            step: 0,
            m: params.blocks().map(|b| vec![0.0; b.len()]),
            v: params.blocks().map(|b| vec![0.0; b.len()]),
        }
    }
}

/// One AdamW update. Decoupled decay touches the tag table and encoder
/// weight matrices only. The temperature is clamped to its range afterwards.
pub fn optimizer_step(
    params: &mut ModelParams,
    grads: &GradientSet,
    state: &mut AdamState,
    learning_rate: f64,
    weight_decay: f64,
) -> Result<()> {
    for (i, (p, g)) in params.blocks().iter().zip(&grads.blocks).enumerate() {
        if p.len() != g.len() || state.m[i].len() != p.len() || state.v[i].len() != p.len() {
            return Err(Error::DimensionMismatch {
                what: crate::model::BLOCK_NAMES[i],
                expected: p.len(),
                got: g.len(),
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - ADAM_BETA1.powi(t);
    let bc2 = 1.0 - ADAM_BETA2.powi(t);
    for (i, p) in params.blocks_mut().into_iter().enumerate() {
        let decay = if BLOCK_DECAY[i] {
            learning_rate * weight_decay
        } else {
            0.0
        };
        let (m, v, g) = (&mut state.m[i], &mut state.v[i], &grads.blocks[i]);
        for j in 0..p.len() {
            m[j] = ADAM_BETA1 * m[j] + (1.0 - ADAM_BETA1) * g[j];
            v[j] = ADAM_BETA2 * v[j] + (1.0 - ADAM_BETA2) * g[j] * g[j];
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            p[j] -= decay * p[j];
            p[j] -= learning_rate * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
    params.log_temperature = params.log_temperature.clamp(TAU_MIN.ln(), TAU_MAX.ln());
    Ok(())
}

// ---------------------------------------------------------------------------
// Training loop

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    /// Optimizer steps.
    pub steps: usize,
    pub seed: u64,
    pub subset_policy: SubsetPolicy,
    /// Validation and checkpoint interval in steps; 0 evaluates only at the
    /// start and the end.
    pub eval_every: usize,
    /// Fill `wall_ms` in the metrics log. Off by default so that logs are
    /// reproducible byte for byte.
    pub record_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-5,
            batch_size: 32,
            weight_decay: 0.2,
            steps: 1000,
            seed: 0,
            subset_policy: SubsetPolicy::UniformProper,
            eval_every: 100,
            record_wall_time: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::invalid("weight_decay must be non-negative"));
        }
        Ok(())
    }
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    #[serde(rename = "L_cont")]
    pub l_cont: f64,
    #[serde(rename = "L_ent_if")]
    pub l_ent_if: f64,
    #[serde(rename = "L_ent_sub")]
    pub l_ent_sub: f64,
    pub total: f64,
    pub tau: f64,
    /// `[font, impression]` output scales.
    pub scales: [f64; 2],
    pub wall_ms: u64,
    /// Mean per-example validation objective, on evaluation steps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_total: Option<f64>,
}

/// A validation measurement taken after `step` optimizer updates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub step: usize,
    pub val_total: f64,
}

/// Step of the evaluation with the lowest validation loss; ties go to the
/// earliest.
pub fn select_checkpoint(evals: &[Evaluation]) -> Result<usize> {
    let mut best: Option<Evaluation> = None;
    for e in evals {
        match best {
            Some(b) if e.val_total.is_nan() || e.val_total >= b.val_total => {}
            _ => best = Some(*e),
        }
    }
    best.map(|b| b.step).ok_or(Error::Empty("evaluation log"))
}

/// Receives metrics and checkpoints as training proceeds.
pub trait TrainObserver {
    fn on_step(&mut self, _record: &StepRecord) -> Result<()> {
        Ok(())
    }

    fn on_checkpoint(&mut self, _step: usize, _params: &ModelParams) -> Result<()> {
        Ok(())
    }
}

/// Observer that ignores everything.
pub struct NoObserver;

impl TrainObserver for NoObserver {}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters at the selected checkpoint.
    pub best: ModelParams,
    pub best_step: usize,
    /// Parameters after the last step.
    pub last: ModelParams,
    pub log: Vec<StepRecord>,
    pub evaluations: Vec<Evaluation>,
}

/// Mean per-example objective over the validation split, with subsets drawn
/// from a stream that is re-seeded for every evaluation.
pub fn validation_loss(
    params: &ModelParams,
    dataset: &Dataset,
    batch_size: usize,
    loss_cfg: &LossConfig,
    policy: SubsetPolicy,
    seed: u64,
) -> Result<f64> {
    let idx = dataset.splits.get(Split::Val);
    if idx.is_empty() {
        return Err(Error::Empty("val split"));
    }
    let mut rng = stream(seed, Stream::Validation);
    let mut total = 0.0;
    for chunk in idx.chunks(batch_size) {
        let batch = TrainingBatch::sample(chunk.iter().map(|&i| &dataset.records[i]), policy, &mut rng)?;
        total += batch_loss(params, &batch, loss_cfg)?.total;
    }
    Ok(total / idx.len() as f64)
}

/// Runs AdamW from `init` for `cfg.steps` steps over the training split.
///
/// Each epoch visits the training records in a fresh seeded order; a
/// trailing partial batch is dropped unless the split is smaller than one
/// batch. The returned `best` parameters minimize validation loss among the
/// evaluated checkpoints.
pub fn train(
    dataset: &Dataset,
    init: ModelParams,
    cfg: &TrainConfig,
    loss_cfg: &LossConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    loss_cfg.validate()?;
    let train_idx = dataset.splits.get(Split::Train).to_vec();
    if train_idx.is_empty() {
        return Err(Error::Empty("train split"));
    }
    let batch = cfg.batch_size.min(train_idx.len());
    let mut params = init;
    let mut state = AdamState::new(&params);
    let mut order_rng = stream(cfg.seed, Stream::Batching);
    let mut subset_rng = stream(cfg.seed, Stream::Subsets);
    let started = Instant::now();

    let evaluate = |p: &ModelParams| validation_loss(p, dataset, cfg.batch_size, loss_cfg, cfg.subset_policy, cfg.seed);
    let mut evaluations = vec![Evaluation {
        step: 0,
        val_total: evaluate(&params)?,
    }];
    observer.on_checkpoint(0, &params)?;
    let mut best = params.clone();

    let mut log = Vec::with_capacity(cfg.steps);
    let mut order = train_idx.clone();
    let mut cursor = order.len();
    for step in 1..=cfg.steps {
        if cursor + batch > order.len() {
            order.copy_from_slice(&train_idx);
            order.shuffle(&mut order_rng);
            cursor = 0;
        }
        let members = &order[cursor..cursor + batch];
        cursor += batch;

        let tb = TrainingBatch::sample(
            members.iter().map(|&i| &dataset.records[i]),
            cfg.subset_policy,
            &mut subset_rng,
        )?;
        let (loss, grads) = loss_and_gradients(&params, &tb, loss_cfg).map_err(|e| Error::Divergence {
            step,
            msg: e.to_string(),
        })?;
        let tau = params.temperature();
        let scales = [params.font_scale(), params.imp_scale()];
        optimizer_step(&mut params, &grads, &mut state, cfg.learning_rate, cfg.weight_decay)?;
        if params.blocks().iter().any(|b| b.iter().any(|v| !v.is_finite())) {
            return Err(Error::Divergence {
                step,
                msg: "non-finite parameter after update".into(),
            });
        }

        let eval_now = step == cfg.steps || (cfg.eval_every > 0 && step % cfg.eval_every == 0);
        let val_total = if eval_now {
            let v = evaluate(&params).map_err(|e| Error::Divergence {
                step,
                msg: format!("validation: {e}"),
            })?;
            evaluations.push(Evaluation { step, val_total: v });
            Some(v)
        } else {
            None
        };
        let record = StepRecord {
            step,
            l_cont: loss.cont,
            l_ent_if: loss.ent_if,
            l_ent_sub: loss.ent_sub,
            total: loss.total,
            tau,
            scales,
            wall_ms: if cfg.record_wall_time {
                started.elapsed().as_millis() as u64
            } else {
                0
            },
            val_total,
        };
        observer.on_step(&record)?;
        log.push(record);
        if eval_now {
            observer.on_checkpoint(step, &params)?;
            if select_checkpoint(&evaluations)? == step {
                best = params.clone();
            }
        }
    }
    let best_step = select_checkpoint(&evaluations)?;
    Ok(TrainOutcome {
        best,
        best_step,
        last: params,
        log,
        evaluations,
    })
}

/// Norm of the concatenated gradient, for diagnostics.
pub fn gradient_norm(grads: &GradientSet) -> f64 {
    let flat: Vec<f64> = grads.flat().collect();
    euclidean_norm(&flat)
}
