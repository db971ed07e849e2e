//! Embedding-geometry diagnostics: the matched-vs-shifted triple-cosine
//! gap and top-1 attractor concentration.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::{dot, EmbeddingSet};
use crate::error::{Error, Result};
use crate::eval::{top1_from_scores, Direction, PoolViews, Scoring};
use crate::modality::ViewSet;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeometryReport {
    pub intra_mean: f64,
    pub inter_mean: f64,
    pub gap: f64,
}

/// Mean of the three pairwise dot products of a triple.
pub fn triple_cosine(t: &[f64], v: &[f64], a: &[f64]) -> f64 {
    (dot(t, v) + dot(t, a) + dot(v, a)) / 3.0
}

/// Intra pairs the three views of sample `i`; inter pairs text `i` with
/// video and audio of sample `i + 1`, wrapping at the end.
pub fn triple_cosine_report(t: &EmbeddingSet, v: &EmbeddingSet, a: &EmbeddingSet) -> Result<GeometryReport> {
    let n = t.len();
    if v.len() != n || a.len() != n {
        return Err(Error::DimensionMismatch {
            what: "view rows".into(),
            expected: n,
            got: if v.len() != n { v.len() } else { a.len() },
        });
    }
    if n < 2 {
        return Err(Error::PoolTooSmall { need: 2, got: n });
    }
    let mut intra = 0.0;
    let mut inter = 0.0;
    for i in 0..n {
        let j = (i + 1) % n;
        intra += triple_cosine(t.row(i), v.row(i), a.row(i));
        inter += triple_cosine(t.row(i), v.row(j), a.row(j));
    }
    let intra_mean = intra / n as f64;
    let inter_mean = inter / n as f64;
    Ok(GeometryReport {
        intra_mean,
        inter_mean,
        gap: intra_mean - inter_mean,
    })
}

/// Geometry of the single-modal views of an embedded pool.
pub fn pool_geometry(pool: &PoolViews) -> Result<GeometryReport> {
    triple_cosine_report(pool.get(ViewSet::T)?, pool.get(ViewSet::V)?, pool.get(ViewSet::A)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttractorReport {
    pub direction: Direction,
    pub pool_size: usize,
    pub k: usize,
    /// Distinct top-1 targets over pool size.
    pub top1_coverage_fraction: f64,
    /// Share of queries whose top-1 is one of the `k` most frequent top-1 targets.
    pub topk_mass: f64,
    /// The `k` most frequent top-1 targets as `(gallery index, count)`.
    pub top_targets: Vec<(usize, usize)>,
}

/// Top-1 gallery index per query, in query order.
pub fn top1_targets<S: Scoring + ?Sized>(scorer: &S, d: Direction) -> Vec<usize> {
    (0..scorer.pool_size())
        .into_par_iter()
        .map(|i| top1_from_scores(&scorer.score_row(d.query, i, d.target)))
        .collect()
}

/// Concentration statistics from a list of top-1 targets. Equal counts
/// are ordered by lower gallery index.
pub fn attractor_from_targets(direction: Direction, top1: &[usize], k: usize) -> Result<AttractorReport> {
    let n = top1.len();
    if n == 0 {
        return Err(Error::PoolTooSmall { need: 1, got: 0 });
    }
    if k == 0 {
        return Err(Error::InvalidArgument("attractor K must be positive".into()));
    }
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &t in top1 {
        *counts.entry(t).or_default() += 1;
    }
    let mut ranked: Vec<(usize, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let coverage = ranked.len() as f64 / n as f64;
    ranked.truncate(k);
    let mass = ranked.iter().map(|&(_, c)| c).sum::<usize>() as f64 / n as f64;
    Ok(AttractorReport {
        direction,
        pool_size: n,
        k,
        top1_coverage_fraction: coverage,
        topk_mass: mass,
        top_targets: ranked,
    })
}

pub fn attractor_report<S: Scoring + ?Sized>(scorer: &S, direction: Direction, k: usize) -> Result<AttractorReport> {
    attractor_from_targets(direction, &top1_targets(scorer, direction), k)
}
