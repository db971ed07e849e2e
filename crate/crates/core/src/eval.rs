//! The 12-direction retrieval protocol.
//!
//! Every view of the eval pool is embedded once. For a direction `q -> g`,
//! query `i` is the `q`-view of sample `i` and its gold is the `g`-view of
//! the same sample; the gallery is the full `g`-view of the pool, gold
//! included. Ties in score are broken toward the lower gallery index.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::data::TripleBatch;
use crate::embedding::{dot, EmbeddingSet};
use crate::error::{Error, Result};
use crate::modality::{Modality, ViewSet};
use crate::model::{encode_modality, encode_subset, ParameterSet};

/// A query view and a disjoint target view.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Direction {
    pub query: ViewSet,
    pub target: ViewSet,
}

impl Direction {
    /// The valid cells in report column order.
    pub const ALL: [Direction; 12] = [
        Direction::new(ViewSet::T, ViewSet::V),
        Direction::new(ViewSet::V, ViewSet::T),
        Direction::new(ViewSet::T, ViewSet::A),
        Direction::new(ViewSet::A, ViewSet::T),
        Direction::new(ViewSet::V, ViewSet::A),
        Direction::new(ViewSet::A, ViewSet::V),
        Direction::new(ViewSet::T, ViewSet::VA),
        Direction::new(ViewSet::VA, ViewSet::T),
        Direction::new(ViewSet::A, ViewSet::TV),
        Direction::new(ViewSet::TV, ViewSet::A),
        Direction::new(ViewSet::V, ViewSet::TA),
        Direction::new(ViewSet::TA, ViewSet::V),
    ];

    pub const fn new(query: ViewSet, target: ViewSet) -> Self {
        Self { query, target }
    }

    /// Both views are proper, nonempty and disjoint. With three modalities
    /// this admits single↔single, single→dual and dual→single only.
    pub fn is_valid(query: ViewSet, target: ViewSet) -> bool {
        let proper = |v: ViewSet| !v.is_empty() && v.len() < 3;
        proper(query) && proper(target) && query.is_disjoint(target)
    }

    /// Every valid pair of views, in report column order.
    pub fn enumerate() -> Vec<Direction> {
        let mut found: Vec<Direction> = ViewSet::all()
            .flat_map(|q| ViewSet::all().map(move |t| (q, t)))
            .filter(|&(q, t)| Self::is_valid(q, t))
            .map(|(q, t)| Direction::new(q, t))
            .collect();
        found.sort_by_key(|d| Self::ALL.iter().position(|a| a == d).unwrap_or(usize::MAX));
        found
    }

    /// Both endpoints are single modalities.
    pub fn is_single(self) -> bool {
        self.query.len() == 1 && self.target.len() == 1
    }

    pub fn label(self) -> String {
        format!("{}->{}", self.query, self.target)
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}->{}", self.query, self.target)
    }
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (q, t) = s
            .split_once("->")
            .ok_or_else(|| Error::InvalidArgument(format!("direction `{s}` must look like `t->av`")))?;
        let (q, t) = (q.parse::<ViewSet>()?, t.parse::<ViewSet>()?);
        if !Self::is_valid(q, t) {
            return Err(Error::InvalidArgument(format!("`{s}` is not a valid direction")));
        }
        Ok(Direction::new(q, t))
    }
}

impl Serialize for Direction {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Direction {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Source of query-to-gallery similarity scores for a pool.
pub trait Scoring: Sync {
    fn pool_size(&self) -> usize;

    /// Scores of query row `i` (in `query` view) against every row of the
    /// `target` view, indexed by gallery row.
    fn score_row(&self, query: ViewSet, i: usize, target: ViewSet) -> Vec<f64>;
}

/// The embedded views of one pool, keyed by view.
#[derive(Clone, Debug, PartialEq)]
pub struct PoolViews {
    views: BTreeMap<ViewSet, EmbeddingSet>,
}

/// The six views the 12 directions need.
pub const POOL_VIEWS: [ViewSet; 6] = [
    ViewSet::T,
    ViewSet::V,
    ViewSet::A,
    ViewSet::VA,
    ViewSet::TA,
    ViewSet::TV,
];

impl PoolViews {
    /// Builds a pool from precomputed views; all must have the same rows and width.
    pub fn from_views(views: impl IntoIterator<Item = (ViewSet, EmbeddingSet)>) -> Result<Self> {
        let views: BTreeMap<_, _> = views.into_iter().collect();
        let mut shape = None;
        for (v, e) in &views {
            let s = (e.len(), e.dim());
            match shape {
                None => shape = Some(s),
                Some(first) if first != s => {
                    return Err(Error::DimensionMismatch {
                        what: format!("view `{v}` rows"),
                        expected: first.0,
                        got: s.0,
                    })
                }
                _ => {}
            }
        }
        Ok(Self { views })
    }

    pub fn get(&self, view: ViewSet) -> Result<&EmbeddingSet> {
        self.views
            .get(&view)
            .ok_or_else(|| Error::InvalidArgument(format!("pool has no `{view}` view")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ViewSet, &EmbeddingSet)> {
        self.views.iter().map(|(v, e)| (*v, e))
    }

    pub fn len(&self) -> usize {
        self.views.values().next().map_or(0, EmbeddingSet::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.views.values().next().map_or(0, EmbeddingSet::dim)
    }
}

impl Scoring for PoolViews {
    fn pool_size(&self) -> usize {
        self.len()
    }

    fn score_row(&self, query: ViewSet, i: usize, target: ViewSet) -> Vec<f64> {
        let q = self.views[&query].row(i);
        let g = &self.views[&target];
        (0..g.len()).map(|j| dot(q, g.row(j))).collect()
    }
}

/// Embeds the six retrieval views of `pool`.
pub fn embed_pool(params: &ParameterSet, pool: &TripleBatch) -> Result<PoolViews> {
    if pool.is_empty() {
        return Err(Error::PoolTooSmall { need: 1, got: 0 });
    }
    let views = POOL_VIEWS
        .par_iter()
        .map(|&view| {
            let e = match view.as_single() {
                Some(m) => encode_modality(params, m, pool.modality(m))?,
                None => {
                    let inputs: Vec<(Modality, &crate::Tensor)> =
                        view.modalities().map(|m| (m, pool.modality(m))).collect();
                    encode_subset(params, &inputs)?
                }
            };
            Ok((view, e))
        })
        .collect::<Result<Vec<_>>>()?;
    PoolViews::from_views(views)
}

/// 1-based rank of `gold` under descending score, ties to the lower index.
pub fn rank_from_scores(scores: &[f64], gold: usize) -> usize {
    let g = scores[gold];
    1 + scores
        .iter()
        .enumerate()
        .filter(|&(j, &s)| s > g || (s == g && j < gold))
        .count()
}

/// Index of the best-scoring row, ties to the lower index.
pub fn top1_from_scores(scores: &[f64]) -> usize {
    let mut best = 0;
    for (j, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = j;
        }
    }
    best
}

/// Rank of gallery row `gold` for query `q`, scored by dot product.
pub fn rank_query(q: &[f64], gallery: &EmbeddingSet, gold: usize) -> Result<usize> {
    if gold >= gallery.len() {
        return Err(Error::InvalidArgument(format!(
            "gold index {gold} outside gallery of {}",
            gallery.len()
        )));
    }
    if q.len() != gallery.dim() {
        return Err(Error::DimensionMismatch {
            what: "query width".into(),
            expected: gallery.dim(),
            got: q.len(),
        });
    }
    let scores: Vec<f64> = (0..gallery.len()).map(|j| dot(q, gallery.row(j))).collect();
    Ok(rank_from_scores(&scores, gold))
}

/// `1/log2(rank+1)` inside the top 10, zero beyond.
pub fn ndcg_at_10(rank: usize) -> Result<f64> {
    if rank < 1 {
        return Err(Error::InvalidArgument("rank is 1-based".into()));
    }
    Ok(if rank <= 10 {
        1.0 / ((rank + 1) as f64).log2()
    } else {
        0.0
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionMetrics {
    pub direction: Direction,
    /// Recall in percent, one entry per report `ks`.
    pub recall: Vec<f64>,
    /// Mean NDCG@10 in percent.
    pub ndcg_at_10: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub ks: Vec<usize>,
    pub pool_size: usize,
    pub directions: Vec<DirectionMetrics>,
    /// Mean R@1 over the six single↔single directions.
    pub avg_single: f64,
    /// Mean R@1 over the six directions with a dual endpoint.
    pub avg_dual: f64,
    pub avg_all: f64,
}

impl RetrievalReport {
    pub fn get(&self, d: Direction) -> Option<&DirectionMetrics> {
        self.directions.iter().find(|m| m.direction == d)
    }

    /// R@k for direction `d`, if `k` was evaluated.
    pub fn recall_at(&self, d: Direction, k: usize) -> Option<f64> {
        let i = self.ks.iter().position(|&x| x == k)?;
        self.get(d).map(|m| m.recall[i])
    }

    /// `[12 × R@1, avg_single, avg_dual, avg_all]`, the table row layout.
    pub fn row(&self) -> Vec<f64> {
        let r1 = self.ks.iter().position(|&k| k == 1).unwrap_or(0);
        self.directions
            .iter()
            .map(|m| m.recall[r1])
            .chain([self.avg_single, self.avg_dual, self.avg_all])
            .collect()
    }
}

/// Checks `ks` is a strictly increasing list that includes 1.
pub fn validate_ks(ks: &[usize]) -> Result<()> {
    if ks.first() != Some(&1) || ks.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(format!(
            "recall cutoffs must be strictly increasing and start at 1, got {ks:?}"
        )));
    }
    Ok(())
}

/// Per-query gold ranks for one direction, in query order.
pub fn direction_ranks<S: Scoring + ?Sized>(scorer: &S, d: Direction) -> Vec<usize> {
    (0..scorer.pool_size())
        .into_par_iter()
        .map(|i| rank_from_scores(&scorer.score_row(d.query, i, d.target), i))
        .collect()
}

/// Builds the report from per-direction rank lists (query order).
pub fn report_from_ranks(ks: &[usize], ranks: &[(Direction, Vec<usize>)]) -> Result<RetrievalReport> {
    validate_ks(ks)?;
    let n = ranks.first().map_or(0, |(_, r)| r.len());
    if n == 0 {
        return Err(Error::PoolTooSmall { need: 1, got: 0 });
    }
    let mut directions = Vec::with_capacity(ranks.len());
    for (d, r) in ranks {
        let recall = ks
            .iter()
            .map(|&k| 100.0 * r.iter().filter(|&&x| x <= k).count() as f64 / n as f64)
            .collect();
        let mut ndcg = 0.0;
        for &x in r {
            ndcg += ndcg_at_10(x)?;
        }
        directions.push(DirectionMetrics {
            direction: *d,
            recall,
            ndcg_at_10: 100.0 * ndcg / n as f64,
        });
    }
    let mean = |pick: &dyn Fn(&DirectionMetrics) -> bool| {
        let cells: Vec<f64> = directions.iter().filter(|m| pick(m)).map(|m| m.recall[0]).collect();
        cells.iter().sum::<f64>() / cells.len() as f64
    };
    let avg_single = mean(&|m| m.direction.is_single());
    let avg_dual = mean(&|m| !m.direction.is_single());
    let avg_all = mean(&|_| true);
    Ok(RetrievalReport {
        ks: ks.to_vec(),
        pool_size: n,
        directions,
        avg_single,
        avg_dual,
        avg_all,
    })
}

/// Runs all 12 directions against any scorer.
pub fn evaluate_scoring<S: Scoring + ?Sized>(scorer: &S, ks: &[usize]) -> Result<RetrievalReport> {
    validate_ks(ks)?;
    let n = scorer.pool_size();
    let need = *ks.last().expect("validated nonempty");
    if n < need {
        return Err(Error::PoolTooSmall { need, got: n });
    }
    let ranks: Vec<(Direction, Vec<usize>)> = Direction::ALL
        .iter()
        .map(|&d| (d, direction_ranks(scorer, d)))
        .collect();
    report_from_ranks(ks, &ranks)
}

/// Embeds `pool` and evaluates all 12 directions.
pub fn evaluate_benchmark(params: &ParameterSet, pool: &TripleBatch, ks: &[usize]) -> Result<RetrievalReport> {
    validate_ks(ks)?;
    let need = *ks.last().expect("validated nonempty");
    if pool.len() < need {
        return Err(Error::PoolTooSmall { need, got: pool.len() });
    }
    evaluate_scoring(&embed_pool(params, pool)?, ks)
}
