//! Interpretability studies: radial distance histograms, geodesic traversal
//! from the origin to a font, and per-tag style specificity.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::manifold::{distance_unchecked, geodesic_point_from_origin, radial_distance, LorentzPoint};
use crate::model::{Embedder, TagSet, Vocabulary};
use crate::rng::{stream, Stream};
use crate::training::{sample_subset, SubsetPolicy};

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Distances from the origin of test fonts, their tag sets, and one sampled
/// subset per font, with shared fixed-width bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialHistogram {
    pub fonts: Vec<f64>,
    pub tag_sets: Vec<f64>,
    pub subsets: Vec<f64>,
    /// Means of the three samples, in the order above.
    pub means: [f64; 3],
    /// `bins + 1` edges from 0 to the largest distance.
    pub edges: Vec<f64>,
    pub counts: [Vec<usize>; 3],
}

impl RadialHistogram {
    /// One row per bin: `lo,hi,fonts,tag_sets,subsets`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_lo,bin_hi,fonts,tag_sets,subsets\n");
        for i in 0..self.edges.len().saturating_sub(1) {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                self.edges[i],
                self.edges[i + 1],
                self.counts[0][i],
                self.counts[1][i],
                self.counts[2][i]
            );
        }
        out
    }
}

pub fn radial_histogram(
    model: &dyn Embedder,
    dataset: &Dataset,
    policy: SubsetPolicy,
    bins: usize,
    seed: u64,
) -> Result<RadialHistogram> {
    if bins == 0 {
        return Err(Error::invalid("histogram needs at least one bin"));
    }
    let idx = dataset.splits.get(Split::Test);
    if idx.is_empty() {
        return Err(Error::Empty("test split"));
    }
    let c = model.curvature();
    let mut rng = stream(seed, Stream::Histogram);
    let subsets: Vec<TagSet> = idx
        .iter()
        .map(|&i| sample_subset(&dataset.records[i].tags, policy, &mut rng))
        .collect::<Result<_>>()?;
    let rows = idx
        .par_iter()
        .zip(&subsets)
        .map(|(&i, sub)| {
            let r = &dataset.records[i];
            Ok([
                radial_distance(&model.embed_font(&r.features)?, c)?,
                radial_distance(&model.embed_tags(&r.tags)?, c)?,
                radial_distance(&model.embed_tags(sub)?, c)?,
            ])
        })
        .collect::<Result<Vec<[f64; 3]>>>()?;
    let fonts: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    let tag_sets: Vec<f64> = rows.iter().map(|r| r[1]).collect();
    let subsets: Vec<f64> = rows.iter().map(|r| r[2]).collect();

    let top = rows.iter().flatten().copied().fold(0.0, f64::max);
    let width = if top > 0.0 { top / bins as f64 } else { 1.0 };
    let edges: Vec<f64> = (0..=bins).map(|i| i as f64 * width).collect();
    let count = |xs: &[f64]| {
        let mut h = vec![0usize; bins];
        for &x in xs {
            h[((x / width) as usize).min(bins - 1)] += 1;
        }
        h
    };
    Ok(RadialHistogram {
        means: [mean(&fonts), mean(&tag_sets), mean(&subsets)],
        counts: [count(&fonts), count(&tag_sets), count(&subsets)],
        fonts,
        tag_sets,
        subsets,
        edges,
    })
}

/// Random-masking settings for the traversal candidate pool.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PoolConfig {
    /// Masked variants drawn per record.
    pub rounds: usize,
    /// Per-tag keep probability.
    pub keep_prob: f64,
    pub max_size: usize,
}

impl Default for PoolConfig {
    fn default() -> Self {
        PoolConfig {
            rounds: 30,
            keep_prob: 0.5,
            max_size: 100_000,
        }
    }
}

/// Unique tag sets obtained by randomly masking every record's tags.
/// Empty masks are discarded; the pool stops growing at `max_size`.
pub fn build_candidate_pool(dataset: &Dataset, cfg: &PoolConfig, seed: u64) -> Result<Vec<TagSet>> {
    if !(cfg.keep_prob > 0.0 && cfg.keep_prob <= 1.0) {
        return Err(Error::invalid(format!(
            "keep probability must lie in (0, 1], got {}",
            cfg.keep_prob
        )));
    }
    let mut rng = stream(seed, Stream::Pool);
    let mut seen = HashSet::new();
    let mut pool = Vec::new();
    'records: for r in &dataset.records {
        for _ in 0..cfg.rounds {
            if pool.len() >= cfg.max_size {
                break 'records;
            }
            let kept: Vec<u32> = r
                .tags
                .ids()
                .iter()
                .copied()
                .filter(|_| rng.random::<f64>() < cfg.keep_prob)
                .collect();
            let Ok(set) = TagSet::new(kept) else { continue };
            if seen.insert(set.clone()) {
                pool.push(set);
            }
        }
    }
    if pool.is_empty() {
        return Err(Error::Empty("candidate pool"));
    }
    Ok(pool)
}

/// Pool tag sets with their embeddings, computed once.
pub struct EmbeddedPool {
    pub sets: Vec<TagSet>,
    pub points: Vec<LorentzPoint>,
}

impl EmbeddedPool {
    pub fn new(model: &dyn Embedder, sets: Vec<TagSet>) -> Result<Self> {
        if sets.is_empty() {
            return Err(Error::Empty("candidate pool"));
        }
        let points = sets
            .par_iter()
            .map(|s| model.embed_tags(s))
            .collect::<Result<Vec<_>>>()?;
        Ok(EmbeddedPool { sets, points })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub pool_index: usize,
    pub tags: Vec<String>,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraversalStep {
    pub t: f64,
    /// Distance of the query point from the origin.
    pub radius: f64,
    /// Nearest pool sets, closest first.
    pub neighbors: Vec<Neighbor>,
}

/// Walks the geodesic from the origin to the font at `n_points` evenly
/// spaced fractions and retrieves the `top_k` nearest pool tag sets at
/// each, ties broken by pool index.
pub fn traverse(
    model: &dyn Embedder,
    dataset: &Dataset,
    font_id: &str,
    pool: &EmbeddedPool,
    n_points: usize,
    top_k: usize,
) -> Result<Vec<TraversalStep>> {
    if n_points < 2 {
        return Err(Error::invalid("traversal needs at least two points"));
    }
    if top_k == 0 {
        return Err(Error::invalid("top_k must be at least 1"));
    }
    let record = dataset.find_font(font_id)?;
    let c = model.curvature();
    let target = model.embed_font(&record.features)?;
    (0..n_points)
        .into_par_iter()
        .map(|k| {
            let t = k as f64 / (n_points - 1) as f64;
            let q = geodesic_point_from_origin(&target, t, c)?;
            let mut scored: Vec<(f64, usize)> = pool
                .points
                .iter()
                .enumerate()
                .map(|(j, p)| (distance_unchecked(&q, p, c), j))
                .collect();
            let k_eff = top_k.min(scored.len());
            let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            if k_eff < scored.len() {
                scored.select_nth_unstable_by(k_eff, cmp);
                scored.truncate(k_eff);
            }
            scored.sort_by(cmp);
            Ok(TraversalStep {
                t,
                radius: radial_distance(&q, c)?,
                neighbors: scored
                    .into_iter()
                    .map(|(d, j)| Neighbor {
                        pool_index: j,
                        tags: dataset.vocab.names(&pool.sets[j]),
                        distance: d,
                    })
                    .collect(),
            })
        })
        .collect()
}

/// Mean top-1 retrieved cardinality over `t <= early` and over `t >= late`.
pub fn granularity_split(steps: &[TraversalStep], early: f64, late: f64) -> (f64, f64) {
    let card = |keep: &dyn Fn(f64) -> bool| {
        let xs: Vec<f64> = steps
            .iter()
            .filter(|s| keep(s.t))
            .filter_map(|s| s.neighbors.first())
            .map(|n| n.tags.len() as f64)
            .collect();
        mean(&xs)
    };
    (card(&|t| t <= early + 1e-12), card(&|t| t >= late - 1e-12))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Group {
    Near,
    Mid,
    Far,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecificityRow {
    pub tag: String,
    pub distance: f64,
    pub group: Group,
    /// Clusters covered, when ground truth is known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coverage: Option<usize>,
}

/// Tags sorted by descending distance from the origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecificityTable {
    pub rows: Vec<SpecificityRow>,
}

impl SpecificityTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("tag,distance,group,coverage\n");
        for r in &self.rows {
            let cov = r.coverage.map(|c| c.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{},{:?},{}", r.tag, r.distance, r.group, cov);
        }
        out
    }

    /// Attaches ground-truth coverage by tag name.
    pub fn with_coverage(mut self, truth: &BTreeMap<String, usize>) -> Self {
        for r in &mut self.rows {
            r.coverage = truth.get(&r.tag).copied();
        }
        self
    }

    /// Spearman correlation between distance and negated coverage over the
    /// rows that have ground truth.
    pub fn coverage_correlation(&self) -> Result<f64> {
        let (d, s): (Vec<f64>, Vec<f64>) = self
            .rows
            .iter()
            .filter_map(|r| r.coverage.map(|c| (r.distance, -(c as f64))))
            .unzip();
        spearman(&d, &s)
    }
}

/// Tertile sizes over `n` items, remainder to the lower groups.
fn tertile_sizes(n: usize) -> [usize; 3] {
    let base = n / 3;
    let rem = n % 3;
    [base + usize::from(rem > 0), base + usize::from(rem > 1), base]
}

/// Radial distance of every vocabulary tag as a singleton set, grouped into
/// Near, Mid and Far tertiles of ascending distance. Remainders go to the
/// lower groups, and a tag tied with the top of a lower group joins it.
pub fn tag_specificity(model: &dyn Embedder, vocab: &Vocabulary) -> Result<SpecificityTable> {
    if vocab.is_empty() {
        return Err(Error::Empty("vocabulary"));
    }
    let c = model.curvature();
    let dist = (0..vocab.len() as u32)
        .into_par_iter()
        .map(|t| radial_distance(&model.embed_tags(&TagSet::singleton(t))?, c))
        .collect::<Result<Vec<f64>>>()?;
    let mut order: Vec<usize> = (0..vocab.len()).collect();
    order.sort_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(a.cmp(&b)));
    let sizes = tertile_sizes(order.len());
    let mut groups = vec![Group::Near; order.len()];
    let mut pos = 0;
    for (g, size) in [Group::Near, Group::Mid, Group::Far].into_iter().zip(sizes) {
        for &i in &order[pos..pos + size] {
            groups[i] = g;
        }
        pos += size;
    }
    for w in 1..order.len() {
        let (prev, cur) = (order[w - 1], order[w]);
        if dist[cur] == dist[prev] {
            groups[cur] = groups[prev];
        }
    }
    let rows = order
        .iter()
        .rev()
        .map(|&i| SpecificityRow {
            tag: vocab.name(i as u32).to_owned(),
            distance: dist[i],
            group: groups[i],
            coverage: None,
        })
        .collect();
    Ok(SpecificityTable { rows })
}

/// Ranks starting at 1, ties sharing their average rank.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation: Pearson correlation of average ranks.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            what: "spearman samples",
            expected: a.len(),
            got: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(Error::invalid("spearman correlation needs at least two samples"));
    }
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let (ma, mb) = (mean(&ra), mean(&rb));
    let (mut num, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        num += (x - ma) * (y - mb);
        va += (x - ma).powi(2);
        vb += (y - mb).powi(2);
    }
    if va == 0.0 || vb == 0.0 {
        return Err(Error::invalid(
            "spearman correlation is undefined for a constant sample",
        ));
    }
    Ok(num / (va * vb).sqrt())
}
