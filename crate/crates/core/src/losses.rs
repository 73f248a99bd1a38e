//! Training objective: distance-based contrastive terms plus entailment-cone
//! penalties.

use serde::{Deserialize, Serialize};

use crate::cones::{aperture_of_norm, exterior_angle_unchecked, ConeConfig};
use crate::error::{Error, Result};
use crate::manifold::{distance_unchecked, Curvature, LorentzPoint};

/// Weights and ablation switches for the total objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    /// Weight on the impression-to-font entailment term.
    pub lambda1: f64,
    /// Weight on the subset-to-impression entailment term.
    pub lambda2: f64,
    pub enable_sub_contrastive: bool,
    pub enable_ent_if: bool,
    pub enable_ent_sub: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda1: 0.1,
            lambda2: 0.1,
            enable_sub_contrastive: true,
            enable_ent_if: true,
            enable_ent_sub: true,
        }
    }
}

impl LossConfig {
    /// The bidirectional contrastive baseline with every extra term off.
    pub fn contrastive_only() -> Self {
        LossConfig {
            enable_sub_contrastive: false,
            enable_ent_if: false,
            enable_ent_sub: false,
            ..LossConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) || !self.lambda1.is_finite() || !self.lambda2.is_finite() {
            return Err(Error::invalid("loss weights must be finite and non-negative"));
        }
        Ok(())
    }

    pub(crate) fn ent_if_active(&self) -> bool {
        self.enable_ent_if && self.lambda1 > 0.0
    }

    pub(crate) fn ent_sub_active(&self) -> bool {
        self.enable_ent_sub && self.lambda2 > 0.0
    }

    /// Weights on the (impression->font, subset->font, font->impression)
    /// contrastive terms.
    pub fn contrastive_weights(&self) -> (f64, f64, f64) {
        if self.enable_sub_contrastive {
            (0.25, 0.25, 0.5)
        } else {
            (0.5, 0.0, 0.5)
        }
    }
}

/// Embeddings of one mini-batch: fonts, their full tag sets, and sampled
/// subsets, aligned by index.
#[derive(Debug, Clone)]
pub struct EmbeddedBatch {
    pub fonts: Vec<LorentzPoint>,
    pub imps: Vec<LorentzPoint>,
    pub sub_imps: Vec<LorentzPoint>,
}

impl EmbeddedBatch {
    pub fn len(&self) -> usize {
        self.fonts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fonts.is_empty()
    }

    fn validate(&self, c: Curvature) -> Result<()> {
        let b = self.fonts.len();
        if b == 0 {
            return Err(Error::Empty("batch"));
        }
        for (what, n) in [
            ("batch impressions", self.imps.len()),
            ("batch subsets", self.sub_imps.len()),
        ] {
            if n != b {
                return Err(Error::DimensionMismatch {
                    what,
                    expected: b,
                    got: n,
                });
            }
        }
        let d = self.fonts[0].dim();
        for p in self.fonts.iter().chain(&self.imps).chain(&self.sub_imps) {
            if p.dim() != d {
                return Err(Error::DimensionMismatch {
                    what: "batch point",
                    expected: d,
                    got: p.dim(),
                });
            }
            p.validate(c)?;
        }
        Ok(())
    }
}

/// Per-term values of the objective.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub cont_if: f64,
    pub cont_sub: f64,
    pub cont_fi: f64,
    /// Weighted contrastive combination.
    pub cont: f64,
    pub ent_if: f64,
    pub ent_sub: f64,
    pub total: f64,
}

/// `-sum_n log softmax_m(-d(q_n, k_m) / tau)[n]`.
pub fn contrastive_loss(queries: &[LorentzPoint], keys: &[LorentzPoint], tau: f64, c: Curvature) -> Result<f64> {
    if queries.len() != keys.len() {
        return Err(Error::DimensionMismatch {
            what: "contrastive keys",
            expected: queries.len(),
            got: keys.len(),
        });
    }
    if queries.is_empty() {
        return Err(Error::Empty("contrastive batch"));
    }
    if tau.is_nan() || tau <= 0.0 || tau.is_infinite() {
        return Err(Error::invalid(format!("temperature must be positive, got {tau}")));
    }
    let d = queries[0].dim();
    for p in queries.iter().chain(keys) {
        if p.dim() != d {
            return Err(Error::DimensionMismatch {
                what: "contrastive point",
                expected: d,
                got: p.dim(),
            });
        }
        p.validate(c)?;
    }
    Ok(contrastive_unchecked(queries, keys, tau, c))
}

fn contrastive_unchecked(queries: &[LorentzPoint], keys: &[LorentzPoint], tau: f64, c: Curvature) -> f64 {
    let mut logits = vec![0.0; keys.len()];
    let mut total = 0.0;
    for (n, q) in queries.iter().enumerate() {
        for (l, k) in logits.iter_mut().zip(keys) {
            *l = -distance_unchecked(q, k, c) / tau;
        }
        total += log_sum_exp(&logits) - logits[n];
    }
    total
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Weighted combination of the three contrastive directions.
pub fn contrastive_total(batch: &EmbeddedBatch, tau: f64, c: Curvature, cfg: &LossConfig) -> Result<f64> {
    batch.validate(c)?;
    Ok(contrastive_terms(batch, tau, c, cfg)?.cont)
}

fn contrastive_terms(batch: &EmbeddedBatch, tau: f64, c: Curvature, cfg: &LossConfig) -> Result<LossBreakdown> {
    if tau.is_nan() || tau <= 0.0 || tau.is_infinite() {
        return Err(Error::invalid(format!("temperature must be positive, got {tau}")));
    }
    let (w_if, w_sub, w_fi) = cfg.contrastive_weights();
    let cont_if = contrastive_unchecked(&batch.imps, &batch.fonts, tau, c);
    let cont_fi = contrastive_unchecked(&batch.fonts, &batch.imps, tau, c);
    let cont_sub = if cfg.enable_sub_contrastive {
        contrastive_unchecked(&batch.sub_imps, &batch.fonts, tau, c)
    } else {
        0.0
    };
    Ok(LossBreakdown {
        cont_if,
        cont_sub,
        cont_fi,
        cont: w_if * cont_if + w_sub * cont_sub + w_fi * cont_fi,
        ..LossBreakdown::default()
    })
}

/// Sum of cone violations over aligned `(apex, member)` pairs.
///
/// A member that coincides with its apex sits at the cone's tip and
/// contributes zero.
pub fn entailment_batch(apexes: &[LorentzPoint], members: &[LorentzPoint], cone: &ConeConfig) -> Result<f64> {
    if apexes.len() != members.len() {
        return Err(Error::DimensionMismatch {
            what: "entailment members",
            expected: apexes.len(),
            got: members.len(),
        });
    }
    let mut total = 0.0;
    for (x, y) in apexes.iter().zip(members) {
        if x.dim() != y.dim() {
            return Err(Error::DimensionMismatch {
                what: "entailment pair",
                expected: x.dim(),
                got: y.dim(),
            });
        }
        x.validate(cone.curvature)?;
        y.validate(cone.curvature)?;
        total += pair_violation(x, y, cone)?;
    }
    Ok(total)
}

fn pair_violation(x: &LorentzPoint, y: &LorentzPoint, cone: &ConeConfig) -> Result<f64> {
    let aper = aperture_of_norm(x.space_norm(), cone)?;
    match exterior_angle_unchecked(x, y, cone.curvature) {
        Ok(ext) => Ok((ext - aper).max(0.0)),
        Err(Error::DegeneratePair { .. }) => Ok(0.0),
        Err(e) => Err(e),
    }
}

/// Full objective `L_cont + lambda1 * L_ent(I->F) + lambda2 * L_ent(~I->I)`.
pub fn total_loss(batch: &EmbeddedBatch, tau: f64, cfg: &LossConfig, cone: &ConeConfig) -> Result<LossBreakdown> {
    cfg.validate()?;
    let c = cone.curvature;
    batch.validate(c)?;
    let mut out = contrastive_terms(batch, tau, c, cfg)?;
    if cfg.ent_if_active() {
        out.ent_if = entailment_batch(&batch.imps, &batch.fonts, cone)?;
    }
    if cfg.ent_sub_active() {
        out.ent_sub = entailment_batch(&batch.sub_imps, &batch.imps, cone)?;
    }
    out.total = out.cont + cfg.lambda1 * out.ent_if + cfg.lambda2 * out.ent_sub;
    if !out.total.is_finite() {
        return Err(Error::NonFinite("total loss"));
    }
    Ok(out)
}
