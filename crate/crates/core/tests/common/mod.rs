//! Scalar reference implementations shared by the integration tests.
//! Everything here works on plain `Vec<Vec<f64>>` with explicit loops and
//! does not call into the library's loss or ranking code.

#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use trimodal::autodiff::{Graph, NodeId};
use trimodal::eval::{PoolViews, POOL_VIEWS};
use trimodal::objectives::{
    build_hard_negative, joint_similarity, loss_la, loss_ld, loss_lt, BatchEmbeddings, HardNegativePlan, LossConfig,
};
use trimodal::Tensor;
use trimodal::{EmbeddingSet, ViewSet};

pub type Rows = Vec<Vec<f64>>;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for k in 0..a.len() {
        s += a[k] * b[k];
    }
    s
}

pub fn random_unit_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Rows {
    (0..n)
        .map(|_| {
            let v: Vec<f64> = (0..d)
                .map(|_| Distribution::<f64>::sample(&StandardNormal, rng))
                .collect();
            let norm = dot(&v, &v).sqrt();
            v.iter().map(|x| x / norm).collect()
        })
        .collect()
}

/// Rows with entries `±1/2` in width 4: unit norm, exact dot products, many ties.
pub fn tied_unit_rows(rng: &mut ChaCha8Rng, n: usize) -> Rows {
    (0..n)
        .map(|_| (0..4).map(|_| if rng.random::<bool>() { 0.5 } else { -0.5 }).collect())
        .collect()
}

pub fn to_tensor(rows: &Rows) -> Tensor {
    Tensor::from_rows(rows).expect("rectangular rows")
}

pub fn to_set(rows: &Rows) -> EmbeddingSet {
    EmbeddingSet::new(to_tensor(rows)).expect("unit rows")
}

pub fn rows_of(e: &EmbeddingSet) -> Rows {
    (0..e.len()).map(|i| e.row(i).to_vec()).collect()
}

// ---- losses ----

/// `-(1/B) Σ_i log( exp(a_i·b_i/τ) / Σ_j exp(a_i·b_j/τ) )`
pub fn infonce(a: &Rows, b: &Rows, tau: f64) -> f64 {
    let n = a.len();
    let mut total = 0.0;
    for i in 0..n {
        let mut denom = 0.0;
        for j in 0..n {
            denom += (dot(&a[i], &b[j]) / tau).exp();
        }
        total += -((dot(&a[i], &b[i]) / tau).exp() / denom).ln();
    }
    total / n as f64
}

pub fn symmetric_infonce(a: &Rows, b: &Rows, tau: f64) -> f64 {
    0.5 * (infonce(a, b, tau) + infonce(b, a, tau))
}

/// Sum over the pairs (T,V), (T,A), (V,A).
pub fn loss_pairwise(z: &[Rows; 3], tau: f64) -> f64 {
    symmetric_infonce(&z[0], &z[1], tau) + symmetric_infonce(&z[0], &z[2], tau) + symmetric_infonce(&z[1], &z[2], tau)
}

pub fn loss_distill(z: &[Rows; 3], joint: &Rows, tau: f64) -> f64 {
    (0..3).map(|m| symmetric_infonce(&z[m], joint, tau)).sum::<f64>() / 3.0
}

/// Six-term average of cross-modal dot products between tuple `x` and tuple `y`.
pub fn tuple_similarity(x: [&[f64]; 3], y: [&[f64]; 3]) -> f64 {
    let mut s = 0.0;
    for m in 0..3 {
        for n in 0..3 {
            if m != n {
                s += dot(x[m], y[n]);
            }
        }
    }
    s / 6.0
}

pub fn tuple(z: &[Rows; 3], i: usize) -> [&[f64]; 3] {
    [&z[0][i], &z[1][i], &z[2][i]]
}

/// Anchor `i` with slot `slot` taken from sample `sigma[i]`.
pub fn perturbed<'a>(z: &'a [Rows; 3], i: usize, slot: usize, sigma: &[usize]) -> [&'a [f64]; 3] {
    let mut t = tuple(z, i);
    t[slot] = &z[slot][sigma[i]];
    t
}

pub fn similarity_grid(z: &[Rows; 3]) -> Rows {
    let n = z[0].len();
    (0..n)
        .map(|i| (0..n).map(|j| tuple_similarity(tuple(z, i), tuple(z, j))).collect())
        .collect()
}

/// Tuple InfoNCE with `B + 1` denominator terms.
pub fn loss_tuple(z: &[Rows; 3], slot: usize, sigma: &[usize], tau: f64) -> f64 {
    let n = z[0].len();
    let mut total = 0.0;
    for i in 0..n {
        let pos = tuple_similarity(tuple(z, i), tuple(z, i));
        let mut denom = 0.0;
        for j in 0..n {
            denom += (tuple_similarity(tuple(z, i), tuple(z, j)) / tau).exp();
        }
        denom += (tuple_similarity(tuple(z, i), perturbed(z, i, slot, sigma)) / tau).exp();
        total += -((pos / tau).exp() / denom).ln();
    }
    total / n as f64
}

// ---- library side, evaluated on constant embeddings ----

pub struct LibraryLosses {
    pub la: f64,
    pub ld: f64,
    pub lt: f64,
    pub grid: Rows,
    pub hard: Vec<f64>,
}

fn scalar(g: &mut Graph, id: NodeId) -> f64 {
    g.evaluate(id, &BTreeMap::<String, Tensor>::new())
        .expect("evaluates")
        .item()
        .expect("scalar")
}

pub fn library_losses(z: &[Rows; 3], joint: &Rows, plan: &HardNegativePlan, cfg: &LossConfig) -> LibraryLosses {
    let mut g = Graph::new();
    let single = [0, 1, 2].map(|m| g.constant(to_tensor(&z[m])));
    let joint = g.constant(to_tensor(joint));
    let be = BatchEmbeddings { single, joint };
    let la = loss_la(&mut g, &be, cfg);
    let ld = loss_ld(&mut g, &be, cfg);
    let lt = loss_lt(&mut g, &be, plan, cfg).expect("valid plan");
    let hard = build_hard_negative(&mut g, &be, plan).expect("valid plan");
    let s = joint_similarity(&mut g, &be, &hard);
    let leaves = BTreeMap::<String, Tensor>::new();
    let grid = g.evaluate(s.grid, &leaves).expect("evaluates").clone();
    let hard = g.evaluate(s.hard, &leaves).expect("evaluates").data().to_vec();
    LibraryLosses {
        la: scalar(&mut g, la),
        ld: scalar(&mut g, ld),
        lt: scalar(&mut g, lt),
        grid: (0..grid.rows()).map(|i| grid.row(i).to_vec()).collect(),
        hard,
    }
}

pub fn library_infonce(a: &Rows, b: &Rows, tau: f64) -> f64 {
    let mut g = Graph::new();
    let (x, y) = (g.constant(to_tensor(a)), g.constant(to_tensor(b)));
    let l = trimodal::objectives::infonce(&mut g, x, y, tau);
    scalar(&mut g, l)
}

// ---- retrieval ----

/// Rank of `gold` after fully sorting by (score desc, index asc).
pub fn sorted_rank(scores: &[f64], gold: usize) -> usize {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    order.iter().position(|&j| j == gold).unwrap() + 1
}

pub fn ndcg(rank: usize) -> f64 {
    if rank <= 10 {
        1.0 / ((rank + 1) as f64).log2()
    } else {
        0.0
    }
}

/// Recall per k (percent) and NDCG@10 (percent) for `query -> target` rows.
pub fn direction_metrics(query: &Rows, target: &Rows, ks: &[usize]) -> (Vec<f64>, f64) {
    let n = query.len();
    let ranks: Vec<usize> = (0..n)
        .map(|i| {
            let scores: Vec<f64> = target.iter().map(|g| dot(&query[i], g)).collect();
            sorted_rank(&scores, i)
        })
        .collect();
    let recall = ks
        .iter()
        .map(|&k| 100.0 * ranks.iter().filter(|&&r| r <= k).count() as f64 / n as f64)
        .collect();
    let mut total = 0.0;
    for &r in &ranks {
        total += ndcg(r);
    }
    (recall, 100.0 * total / n as f64)
}

pub struct Pool {
    pub views: BTreeMap<ViewSet, Rows>,
}

impl Pool {
    pub fn random(rng: &mut ChaCha8Rng, n: usize, d: usize, tied: bool) -> Self {
        let views = POOL_VIEWS
            .iter()
            .map(|&v| {
                let rows = if tied {
                    tied_unit_rows(rng, n)
                } else {
                    random_unit_rows(rng, n, d)
                };
                (v, rows)
            })
            .collect();
        Self { views }
    }

    pub fn library(&self) -> PoolViews {
        PoolViews::from_views(self.views.iter().map(|(v, r)| (*v, to_set(r)))).expect("consistent pool")
    }
}

/// Exact occupancy statistics for `n` uniform draws into `n` bins: expected
/// covered fraction and its standard deviation.
pub fn coverage_null(n: usize) -> (f64, f64) {
    let nf = n as f64;
    let p1 = (1.0 - 1.0 / nf).powi(n as i32);
    let p2 = (1.0 - 2.0 / nf).powi(n as i32);
    let mean = 1.0 - p1;
    // variance of the number of empty bins
    let var = nf * p1 + nf * (nf - 1.0) * p2 - nf * nf * p1 * p1;
    (mean, var.sqrt() / nf)
}
