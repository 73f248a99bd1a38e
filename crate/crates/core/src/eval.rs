//! Bidirectional retrieval metrics: mean average precision for single- and
//! multi-tag queries, and nDCG@k with graded tag-set agreement.

use std::collections::{BTreeSet, HashSet};
use std::fmt;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::manifold::{distance_unchecked, Curvature, LorentzPoint};
use crate::model::{Embedder, TagSet};
use crate::rng::{stream, Stream};

/// Candidates ordered by ascending distance to a query, ties by id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ranking {
    pub query: usize,
    pub candidates: Vec<usize>,
}

impl Ranking {
    /// Ranks `(id, point)` candidates by geodesic distance to `query_point`.
    pub fn by_distance(
        query: usize,
        query_point: &LorentzPoint,
        candidates: &[(usize, LorentzPoint)],
        c: Curvature,
    ) -> Self {
        let mut scored: Vec<(f64, usize)> = candidates
            .iter()
            .map(|(id, p)| (distance_unchecked(query_point, p, c), *id))
            .collect();
        scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        Ranking {
            query,
            candidates: scored.into_iter().map(|(_, id)| id).collect(),
        }
    }
}

/// Mean over relevant items of the precision at their rank.
pub fn average_precision(ranking: &Ranking, relevant: &BTreeSet<usize>) -> Result<f64> {
    if relevant.is_empty() {
        return Err(Error::Empty("relevant set"));
    }
    let universe: HashSet<usize> = ranking.candidates.iter().copied().collect();
    if universe.len() != ranking.candidates.len() {
        return Err(Error::invalid("ranking has duplicate candidates"));
    }
    if !relevant.iter().all(|r| universe.contains(r)) {
        return Err(Error::invalid("relevant items must be ranked candidates"));
    }
    let flags: Vec<bool> = ranking.candidates.iter().map(|c| relevant.contains(c)).collect();
    Ok(ap_from_flags(&flags).expect("relevant set is non-empty"))
}

/// AP of a ranked relevance pattern; `None` when nothing is relevant.
pub fn ap_from_flags(flags: &[bool]) -> Option<f64> {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, &rel) in flags.iter().enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    (hits > 0).then(|| sum / hits as f64)
}

/// Graded agreement between a query tag set and a candidate tag set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gain {
    /// `|q ∩ c| / |q|`
    Recall,
    /// `|q ∩ c| / |c|`
    Precision,
    F1,
}

impl Gain {
    pub const ALL: [Gain; 3] = [Gain::Recall, Gain::Precision, Gain::F1];

    pub fn relevance(self, query: &TagSet, candidate: &TagSet) -> f64 {
        if query.is_empty() || candidate.is_empty() {
            return 0.0;
        }
        let overlap = query.overlap(candidate) as f64;
        let recall = overlap / query.len() as f64;
        let precision = overlap / candidate.len() as f64;
        match self {
            Gain::Recall => recall,
            Gain::Precision => precision,
            Gain::F1 if overlap == 0.0 => 0.0,
            Gain::F1 => 2.0 * precision * recall / (precision + recall),
        }
    }
}

/// How a relevance value turns into a DCG gain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DcgForm {
    /// `rel / log2(i + 1)`
    #[default]
    Linear,
    /// `(2^rel - 1) / log2(i + 1)`
    Exponential,
}

impl DcgForm {
    fn gain(self, rel: f64) -> f64 {
        match self {
            DcgForm::Linear => rel,
            DcgForm::Exponential => rel.exp2() - 1.0,
        }
    }
}

/// DCG@k over relevances in ranked order.
pub fn dcg_at_k(rels: &[f64], k: usize, form: DcgForm) -> f64 {
    rels.iter()
        .take(k)
        .enumerate()
        .map(|(i, &r)| form.gain(r) / ((i + 2) as f64).log2())
        .sum()
}

/// nDCG@k for relevances in ranked order; the ideal ordering sorts every
/// candidate's relevance. `None` when the ideal DCG is zero.
pub fn ndcg_from_relevances(rels: &[f64], k: usize, form: DcgForm) -> Option<f64> {
    let mut ideal = rels.to_vec();
    ideal.sort_by(|a, b| b.total_cmp(a));
    let idcg = dcg_at_k(&ideal, k, form);
    if idcg <= 0.0 {
        return None;
    }
    Some((dcg_at_k(rels, k, form) / idcg).min(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    /// Tag sets query fonts.
    #[serde(rename = "i2f")]
    ImpressionToFont,
    /// Fonts query tag sets.
    #[serde(rename = "f2i")]
    FontToImpression,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Cutoff for nDCG.
    pub k: usize,
    pub dcg: DcgForm,
    /// Query subsets drawn per test tag set for multi-tag mAP.
    pub multi_subsets: usize,
    pub multi_min: usize,
    pub multi_max: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            k: 100,
            dcg: DcgForm::Linear,
            multi_subsets: 5,
            multi_min: 2,
            multi_max: 5,
        }
    }
}

impl EvalConfig {
    fn validate(&self) -> Result<()> {
        if self.k == 0 || self.multi_subsets == 0 || self.multi_min < 1 || self.multi_min > self.multi_max {
            return Err(Error::invalid(format!("invalid evaluation settings {self:?}")));
        }
        Ok(())
    }
}

/// Test-split fonts and tag sets placed on the hyperboloid once.
pub struct EmbeddedSplit {
    pub c: Curvature,
    /// `(record index, tags, point)` per test font.
    pub fonts: Vec<(usize, TagSet, LorentzPoint)>,
}

impl EmbeddedSplit {
    pub fn new(model: &dyn Embedder, dataset: &Dataset, split: Split) -> Result<Self> {
        let idx = dataset.splits.get(split);
        if idx.is_empty() {
            return Err(Error::Empty("evaluation split"));
        }
        let fonts = idx
            .par_iter()
            .map(|&i| {
                let r = &dataset.records[i];
                Ok((i, r.tags.clone(), model.embed_font(&r.features)?))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(EmbeddedSplit {
            c: model.curvature(),
            fonts,
        })
    }

    fn candidates(&self) -> Vec<(usize, LorentzPoint)> {
        self.fonts.iter().map(|(i, _, p)| (*i, p.clone())).collect()
    }
}

/// Mean AP over tag-set queries against the split's fonts, where a font is
/// relevant when its tags contain the query. Queries without a relevant
/// font are skipped. Returns the mean and the number of scored queries.
pub fn map_for_queries(model: &dyn Embedder, split: &EmbeddedSplit, queries: &[TagSet]) -> Result<(f64, usize)> {
    let candidates = split.candidates();
    let scores = queries
        .par_iter()
        .enumerate()
        .map(|(qi, q)| {
            let flags_by_id: Vec<(usize, bool)> = split.fonts.iter().map(|(i, t, _)| (*i, q.is_subset_of(t))).collect();
            if !flags_by_id.iter().any(|f| f.1) {
                return Ok(None);
            }
            let point = model.embed_tags(q)?;
            let ranking = Ranking::by_distance(qi, &point, &candidates, split.c);
            let relevant: BTreeSet<usize> = flags_by_id.iter().filter(|f| f.1).map(|f| f.0).collect();
            average_precision(&ranking, &relevant).map(Some)
        })
        .collect::<Result<Vec<Option<f64>>>>()?;
    mean_of_scored(scores.into_iter().flatten())
}

fn mean_of_scored(scores: impl Iterator<Item = f64>) -> Result<(f64, usize)> {
    let (mut sum, mut n) = (0.0, 0usize);
    for s in scores {
        sum += s;
        n += 1;
    }
    if n == 0 {
        return Err(Error::Empty("valid queries"));
    }
    Ok((sum / n as f64, n))
}

/// Every vocabulary tag as a singleton query.
pub fn map_single(model: &dyn Embedder, dataset: &Dataset) -> Result<f64> {
    let split = EmbeddedSplit::new(model, dataset, Split::Test)?;
    Ok(map_single_on(model, dataset, &split)?.0)
}

fn map_single_on(model: &dyn Embedder, dataset: &Dataset, split: &EmbeddedSplit) -> Result<(f64, usize)> {
    let queries: Vec<TagSet> = (0..dataset.vocab.len() as u32).map(TagSet::singleton).collect();
    map_for_queries(model, split, &queries)
}

/// Multi-tag query sets: per test tag set with at least `multi_min` tags,
/// `multi_subsets` draws of size uniform in `[multi_min, min(multi_max, K)]`,
/// deduplicated in order of first appearance.
pub fn multi_tag_queries(dataset: &Dataset, cfg: &EvalConfig, seed: u64) -> Result<Vec<TagSet>> {
    let mut rng = stream(seed, Stream::EvalQueries);
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for r in dataset.split_records(Split::Test) {
        let k = r.tags.len();
        if k < cfg.multi_min {
            continue;
        }
        let hi = cfg.multi_max.min(k);
        for _ in 0..cfg.multi_subsets {
            let size = rng.random_range(cfg.multi_min..=hi);
            let picks = rand::seq::index::sample(&mut rng, k, size);
            let q = TagSet::new(picks.into_iter().map(|i| r.tags.ids()[i]).collect())?;
            if seen.insert(q.clone()) {
                out.push(q);
            }
        }
    }
    Ok(out)
}

pub fn map_multi(model: &dyn Embedder, dataset: &Dataset, seed: u64) -> Result<f64> {
    let split = EmbeddedSplit::new(model, dataset, Split::Test)?;
    let queries = multi_tag_queries(dataset, &EvalConfig::default(), seed)?;
    Ok(map_for_queries(model, &split, &queries)?.0)
}

/// nDCG@k for all three gains in one direction, each averaged over the
/// queries with a non-zero ideal DCG.
pub fn ndcg_all_gains(
    model: &dyn Embedder,
    split: &EmbeddedSplit,
    direction: Direction,
    k: usize,
    form: DcgForm,
) -> Result<GainScores> {
    let c = split.c;
    let per_query: Vec<[Option<f64>; 3]> = match direction {
        Direction::ImpressionToFont => {
            let candidates = split.candidates();
            let tags_of: std::collections::HashMap<usize, &TagSet> =
                split.fonts.iter().map(|(i, t, _)| (*i, t)).collect();
            split
                .fonts
                .par_iter()
                .map(|(qi, q, _)| {
                    let point = model.embed_tags(q)?;
                    let ranking = Ranking::by_distance(*qi, &point, &candidates, c);
                    Ok(Gain::ALL.map(|g| {
                        let rels: Vec<f64> = ranking
                            .candidates
                            .iter()
                            .map(|id| g.relevance(q, tags_of[id]))
                            .collect();
                        ndcg_from_relevances(&rels, k, form)
                    }))
                })
                .collect::<Result<_>>()?
        }
        Direction::FontToImpression => {
            let mut seen = HashSet::new();
            let unique: Vec<&TagSet> = split.fonts.iter().map(|f| &f.1).filter(|t| seen.insert(*t)).collect();
            let candidates = unique
                .par_iter()
                .enumerate()
                .map(|(j, t)| Ok((j, model.embed_tags(t)?)))
                .collect::<Result<Vec<_>>>()?;
            split
                .fonts
                .par_iter()
                .map(|(qi, q, point)| {
                    let ranking = Ranking::by_distance(*qi, point, &candidates, c);
                    Gain::ALL.map(|g| {
                        let rels: Vec<f64> = ranking.candidates.iter().map(|&j| g.relevance(q, unique[j])).collect();
                        ndcg_from_relevances(&rels, k, form)
                    })
                })
                .map(Ok)
                .collect::<Result<_>>()?
        }
    };
    let column = |gi: usize| mean_of_scored(per_query.iter().filter_map(|s| s[gi]));
    let (recall, n) = column(0)?;
    Ok(GainScores {
        recall,
        precision: column(1)?.0,
        f1: column(2)?.0,
        queries: n,
    })
}

/// nDCG@k for one direction and gain.
pub fn ndcg_at_k(model: &dyn Embedder, dataset: &Dataset, direction: Direction, gain: Gain, k: usize) -> Result<f64> {
    let split = EmbeddedSplit::new(model, dataset, Split::Test)?;
    let scores = ndcg_all_gains(model, &split, direction, k, DcgForm::Linear)?;
    Ok(match gain {
        Gain::Recall => scores.recall,
        Gain::Precision => scores.precision,
        Gain::F1 => scores.f1,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainScores {
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    /// Queries with a non-zero ideal DCG.
    pub queries: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub map_single: f64,
    pub map_multi: f64,
    pub ndcg_i2f: GainScores,
    pub ndcg_f2i: GainScores,
    pub single_queries: usize,
    pub multi_queries: usize,
    pub k: usize,
    pub seed: u64,
}

/// All seven retrieval numbers on the test split.
pub fn eval_report(model: &dyn Embedder, dataset: &Dataset, seed: u64, cfg: &EvalConfig) -> Result<EvalReport> {
    cfg.validate()?;
    let split = EmbeddedSplit::new(model, dataset, Split::Test)?;
    let (map_single, single_queries) = map_single_on(model, dataset, &split)?;
    let queries = multi_tag_queries(dataset, cfg, seed)?;
    let (map_multi, multi_queries) = map_for_queries(model, &split, &queries)?;
    Ok(EvalReport {
        map_single,
        map_multi,
        ndcg_i2f: ndcg_all_gains(model, &split, Direction::ImpressionToFont, cfg.k, cfg.dcg)?,
        ndcg_f2i: ndcg_all_gains(model, &split, Direction::FontToImpression, cfg.k, cfg.dcg)?,
        single_queries,
        multi_queries,
        k: cfg.k,
        seed,
    })
}

impl EvalReport {
    pub fn values(&self) -> [f64; 8] {
        [
            self.map_single,
            self.map_multi,
            self.ndcg_i2f.recall,
            self.ndcg_i2f.precision,
            self.ndcg_i2f.f1,
            self.ndcg_f2i.recall,
            self.ndcg_f2i.precision,
            self.ndcg_f2i.f1,
        ]
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let k = self.k;
        writeln!(
            f,
            "{:>10} {:>10} | {:^29} | {:^29}",
            "mAP",
            "mAP",
            format!("I->F nDCG@{k}"),
            format!("F->I nDCG@{k}")
        )?;
        writeln!(
            f,
            "{:>10} {:>10} | {:>9} {:>9} {:>9} | {:>9} {:>9} {:>9}",
            "single", "multi", "recall", "precision", "F1", "recall", "precision", "F1"
        )?;
        let v = self.values();
        writeln!(
            f,
            "{:>10.4} {:>10.4} | {:>9.4} {:>9.4} {:>9.4} | {:>9.4} {:>9.4} {:>9.4}",
            v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7]
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SynthConfig};
    use crate::manifold::lift_spatial;
    use crate::model::{init_params, FontRecord, ModelDims, Vocabulary};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::collections::HashMap;

    /// Brute force: for each relevant item, count relevant items ranked at
    /// or above it.
    fn ap_oracle(flags: &[bool]) -> f64 {
        let positions: Vec<usize> = (0..flags.len()).filter(|&i| flags[i]).collect();
        let mut total = 0.0;
        for &p in &positions {
            let above = positions.iter().filter(|&&q| q <= p).count();
            total += above as f64 / (p + 1) as f64;
        }
        total / positions.len() as f64
    }

    #[test]
    fn ap_examples() {
        let r = Ranking {
            query: 0,
            candidates: (0..10).collect(),
        };
        assert_eq!(average_precision(&r, &(0..10).collect()).unwrap(), 1.0);
        assert_eq!(average_precision(&r, &[1].into()).unwrap(), 0.5);
        assert!(average_precision(&r, &BTreeSet::new()).is_err());
        assert!(average_precision(&r, &[42].into()).is_err());
    }

    #[test]
    fn ap_matches_oracle_on_every_pattern_up_to_eight() {
        for n in 1..=8usize {
            for mask in 1u32..(1 << n) {
                let flags: Vec<bool> = (0..n).map(|i| mask >> i & 1 == 1).collect();
                assert_abs_diff_eq!(ap_from_flags(&flags).unwrap(), ap_oracle(&flags), epsilon = 1e-12);
            }
        }
    }

    proptest! {
        #[test]
        fn ap_matches_oracle_on_random_rankings(flags in prop::collection::vec(any::<bool>(), 9..60)) {
            prop_assume!(flags.iter().any(|&f| f));
            prop_assert!((ap_from_flags(&flags).unwrap() - ap_oracle(&flags)).abs() <= 1e-12);
        }

        #[test]
        fn ndcg_is_a_fraction(rels in prop::collection::vec(0.0f64..=1.0, 1..40), k in 1usize..50) {
            if let Some(v) = ndcg_from_relevances(&rels, k, DcgForm::Linear) {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }

    #[test]
    fn ndcg_hand_worked_case() {
        let rels = [0.5, 1.0, 0.0, 0.25, 0.75];
        let dcg = 0.5 + 1.0 / 3f64.log2() + 0.25 / 5f64.log2() + 0.75 / 6f64.log2();
        let idcg = 1.0 + 0.75 / 3f64.log2() + 0.5 / 2.0 + 0.25 / 5f64.log2();
        assert_abs_diff_eq!(dcg_at_k(&rels, 5, DcgForm::Linear), 1.528738498515712, epsilon = 1e-12);
        assert_abs_diff_eq!(dcg, 1.528738498515712, epsilon = 1e-12);
        assert_abs_diff_eq!(idcg, 1.8308664546969413, epsilon = 1e-12);
        assert_abs_diff_eq!(
            ndcg_from_relevances(&rels, 5, DcgForm::Linear).unwrap(),
            0.8349808881985116,
            epsilon = 1e-12
        );
        // truncation at k = 3 uses the top three ideal relevances
        assert_abs_diff_eq!(
            ndcg_from_relevances(&rels, 3, DcgForm::Linear).unwrap(),
            1.1309297535714575 / 1.723197315178593,
            epsilon = 1e-12
        );
    }

    #[test]
    fn ndcg_sorted_and_flat_cases() {
        assert_eq!(
            ndcg_from_relevances(&[1.0, 0.7, 0.2, 0.0], 100, DcgForm::Linear),
            Some(1.0)
        );
        assert_eq!(ndcg_from_relevances(&[0.3; 6], 4, DcgForm::Exponential), Some(1.0));
        assert_eq!(ndcg_from_relevances(&[0.0; 3], 4, DcgForm::Linear), None);
        assert!(ndcg_from_relevances(&[0.0, 1.0], 100, DcgForm::Linear).unwrap() < 1.0);
    }

    #[test]
    fn graded_relevance() {
        let q = TagSet::new(vec![1, 2, 3, 4]).unwrap();
        let c = TagSet::new(vec![3, 4, 9]).unwrap();
        assert_abs_diff_eq!(Gain::Recall.relevance(&q, &c), 0.5);
        assert_abs_diff_eq!(Gain::Precision.relevance(&q, &c), 2.0 / 3.0);
        assert_abs_diff_eq!(Gain::F1.relevance(&q, &c), 4.0 / 7.0, epsilon = 1e-15);
        assert_eq!(Gain::F1.relevance(&q, &TagSet::singleton(7)), 0.0);
    }

    #[test]
    fn ties_break_by_candidate_id() {
        let c = Curvature::default();
        let q = LorentzPoint::origin(2, c);
        let p = lift_spatial(vec![0.3, 0.0], c).unwrap();
        let p2 = lift_spatial(vec![0.0, 0.3], c).unwrap();
        let r = Ranking::by_distance(0, &q, &[(7, p.clone()), (2, p2), (5, p)], c);
        assert_eq!(r.candidates, vec![2, 5, 7]);
    }

    /// Looks up hand-placed points.
    struct Table {
        fonts: HashMap<Vec<u64>, LorentzPoint>,
        tags: HashMap<TagSet, LorentzPoint>,
    }

    impl Embedder for Table {
        fn curvature(&self) -> Curvature {
            Curvature::default()
        }
        fn embed_font(&self, features: &[f64]) -> Result<LorentzPoint> {
            Ok(self.fonts[&features.iter().map(|f| f.to_bits()).collect::<Vec<_>>()].clone())
        }
        fn embed_tags(&self, tags: &TagSet) -> Result<LorentzPoint> {
            self.tags
                .get(tags)
                .cloned()
                .ok_or_else(|| Error::invalid("unplaced tag set"))
        }
    }

    fn toy_dataset(records: Vec<(Vec<f64>, Vec<u32>)>, vocab: &[&str]) -> Dataset {
        let n = records.len();
        Dataset {
            records: records
                .into_iter()
                .enumerate()
                .map(|(i, (features, tags))| FontRecord {
                    font_id: format!("f{i}"),
                    features,
                    tags: TagSet::new(tags).unwrap(),
                })
                .collect(),
            vocab: Vocabulary::new(vocab.iter().map(|s| s.to_string()).collect()).unwrap(),
            splits: crate::data::Splits {
                train: vec![],
                val: vec![],
                test: (0..n).collect(),
            },
        }
    }

    #[test]
    fn perfect_toy_embedding_scores_one() {
        let c = Curvature::default();
        let a = lift_spatial(vec![2.0, 0.0], c).unwrap();
        let b = lift_spatial(vec![-2.0, 0.0], c).unwrap();
        let ds = toy_dataset(vec![(vec![0.0], vec![0]), (vec![1.0], vec![1])], &["x", "y"]);
        let model = Table {
            fonts: [(vec![0f64.to_bits()], a.clone()), (vec![1f64.to_bits()], b.clone())].into(),
            tags: [(TagSet::singleton(0), a), (TagSet::singleton(1), b)].into(),
        };
        assert_eq!(map_single(&model, &ds).unwrap(), 1.0);
        for dir in [Direction::ImpressionToFont, Direction::FontToImpression] {
            for g in Gain::ALL {
                assert_abs_diff_eq!(ndcg_at_k(&model, &ds, dir, g, 100).unwrap(), 1.0);
            }
        }
    }

    #[test]
    fn shared_tag_everywhere_scores_one() {
        let ds = toy_dataset(
            vec![
                (vec![0.0], vec![0, 1]),
                (vec![1.0], vec![0, 1, 2]),
                (vec![2.0], vec![0, 1]),
            ],
            &["a", "b", "c"],
        );
        let params = init_params(ModelDims::new(3, 1, 2, 2), Curvature::default(), 0.1, 0).unwrap();
        let split = EmbeddedSplit::new(&params, &ds, Split::Test).unwrap();
        let (ap, n) = map_for_queries(&params, &split, &[TagSet::new(vec![0, 1]).unwrap()]).unwrap();
        assert_eq!((ap, n), (1.0, 1));
        // tag 0 alone is carried by every font
        let (ap, _) = map_for_queries(&params, &split, &[TagSet::singleton(0)]).unwrap();
        assert_eq!(ap, 1.0);
    }

    #[test]
    fn queries_without_relevant_fonts_are_skipped() {
        let ds = toy_dataset(vec![(vec![0.0], vec![0]), (vec![1.0], vec![0])], &["a", "b"]);
        let params = init_params(ModelDims::new(2, 1, 2, 2), Curvature::default(), 0.1, 0).unwrap();
        let split = EmbeddedSplit::new(&params, &ds, Split::Test).unwrap();
        let (_, n) = map_single_on(&params, &ds, &split).unwrap();
        assert_eq!(n, 1);
        assert!(matches!(
            map_for_queries(&params, &split, &[TagSet::singleton(1)]),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn multi_queries_follow_the_size_rule() {
        let s = generate_synthetic(&SynthConfig::synthetic_small(2)).unwrap();
        let cfg = EvalConfig::default();
        let q = multi_tag_queries(&s.dataset, &cfg, 9).unwrap();
        assert!(!q.is_empty());
        let unique: HashSet<&TagSet> = q.iter().collect();
        assert_eq!(unique.len(), q.len());
        assert!(q.iter().all(|t| (2..=5).contains(&t.len())));
        assert_eq!(q, multi_tag_queries(&s.dataset, &cfg, 9).unwrap());
    }

    #[test]
    fn report_is_bounded_and_reproducible() {
        let s = generate_synthetic(&SynthConfig::synthetic_small(4)).unwrap();
        let ds = &s.dataset;
        let params = init_params(
            ModelDims::new(ds.vocab.len(), ds.feature_dim(), 8, 8),
            Curvature::default(),
            0.1,
            3,
        )
        .unwrap();
        let a = eval_report(&params, ds, 1, &EvalConfig::default()).unwrap();
        let b = eval_report(&params, ds, 1, &EvalConfig::default()).unwrap();
        assert_eq!(a, b);
        assert!(a.values().iter().all(|v| (0.0..=1.0).contains(v)));
        let table = a.to_string();
        assert_eq!(table.lines().count(), 3);
        assert_eq!(
            serde_json::from_str::<EvalReport>(&serde_json::to_string(&a).unwrap()).unwrap(),
            a
        );
    }
}
