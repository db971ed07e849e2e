//! Contrastive objectives over one batch of tri-modal embeddings.
//!
//! Every function appends nodes to a caller-owned [`Graph`] and returns
//! the id of a scalar loss node; nothing is evaluated here. All losses
//! take unit-norm `B×d` embedding nodes.
//!
//! * pairwise alignment: symmetric InfoNCE summed over the pairs
//!   `(T,V), (T,A), (V,A)`;
//! * distillation: symmetric InfoNCE between each single-modal embedding
//!   and a stop-gradient copy of the joint embedding, averaged over
//!   modalities;
//! * tuple InfoNCE: softmax over the averaged six cross-modal cosines of
//!   index pairs, with one modality-cycled hard negative per anchor.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use trimodal_autodiff::{Graph, NodeId};

use crate::error::{Error, Result};
use crate::modality::Modality;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Temperature of the pairwise and distillation InfoNCE terms.
    pub tau: f64,
    /// Temperature of the tuple InfoNCE term.
    pub tau_t: f64,
    pub lambda_d: f64,
    pub lambda_t: f64,
    pub lambda_a: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            tau: 0.01,
            tau_t: 0.01,
            lambda_d: 1.0,
            lambda_t: 1.0,
            lambda_a: 1.0,
        }
    }
}

impl LossConfig {
    pub fn with_weights(mut self, lambda_d: f64, lambda_t: f64, lambda_a: f64) -> Self {
        self.lambda_d = lambda_d;
        self.lambda_t = lambda_t;
        self.lambda_a = lambda_a;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau_t > 0.0) {
            return Err(Error::Config(format!(
                "temperatures must be positive: tau={}, tau_t={}",
                self.tau, self.tau_t
            )));
        }
        for (name, v) in [
            ("lambda_d", self.lambda_d),
            ("lambda_t", self.lambda_t),
            ("lambda_a", self.lambda_a),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be nonnegative, got {v}")));
            }
        }
        Ok(())
    }
}

/// Graph nodes holding `z^(T)`, `z^(V)`, `z^(A)` and the joint `z^(TVA)`
/// for one batch.
#[derive(Clone, Copy, Debug)]
pub struct BatchEmbeddings {
    pub single: [NodeId; 3],
    pub joint: NodeId,
}

impl BatchEmbeddings {
    pub fn get(&self, m: Modality) -> NodeId {
        self.single[m.index()]
    }
}

/// Single-modal embeddings of the perturbed tuples `ĩ`.
#[derive(Clone, Copy, Debug)]
pub struct PerturbedTuple {
    pub single: [NodeId; 3],
}

/// Shuffled slot and derangement for one training step.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HardNegativePlan {
    pub step: u64,
    pub slot: Modality,
    pub sigma: Vec<usize>,
}

impl HardNegativePlan {
    pub fn draw<R: Rng + ?Sized>(step: u64, batch_size: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            step,
            slot: Modality::for_step(step),
            sigma: sample_derangement(batch_size, rng)?,
        })
    }

    /// Checks that `sigma` is a fixed-point-free permutation and that the
    /// slot agrees with the step.
    pub fn validate(&self) -> Result<()> {
        let n = self.sigma.len();
        if n < 2 {
            return Err(Error::DerangementUndefined(n));
        }
        let mut seen = vec![false; n];
        for (i, &s) in self.sigma.iter().enumerate() {
            if s >= n || seen[s] || s == i {
                return Err(Error::InvalidArgument(format!("{:?} is not a derangement", self.sigma)));
            }
            seen[s] = true;
        }
        if self.slot != Modality::for_step(self.step) {
            return Err(Error::InvalidArgument(format!(
                "slot {} does not match step {}",
                self.slot, self.step
            )));
        }
        Ok(())
    }
}

/// Uniform permutation of `0..n` with no fixed point, by rejection.
pub fn sample_derangement<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Vec<usize>> {
    if n < 2 {
        return Err(Error::DerangementUndefined(n));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    loop {
        perm.shuffle(rng);
        if perm.iter().enumerate().all(|(i, &p)| i != p) {
            return Ok(perm);
        }
    }
}

/// One-directional InfoNCE of `anchor` against `target` (both `B×d`):
/// `-(1/B) Σ_i log softmax_j(a_i·t_j/τ)[i]`.
pub fn infonce(g: &mut Graph, anchor: NodeId, target: NodeId, tau: f64) -> NodeId {
    let target_t = g.transpose(target);
    let sims = g.matmul(anchor, target_t);
    let logits = g.scale(sims, 1.0 / tau);
    let lse = g.logsumexp_rows(logits);
    let pos = g.row_dot(anchor, target);
    let pos = g.scale(pos, 1.0 / tau);
    let per_anchor = g.sub(lse, pos);
    g.mean(per_anchor)
}

/// Mean of the two InfoNCE directions.
pub fn symmetric_infonce(g: &mut Graph, a: NodeId, b: NodeId, tau: f64) -> NodeId {
    let ab = infonce(g, a, b, tau);
    let ba = infonce(g, b, a, tau);
    let both = g.add(ab, ba);
    g.scale(both, 0.5)
}

pub fn loss_la(g: &mut Graph, be: &BatchEmbeddings, cfg: &LossConfig) -> NodeId {
    let terms: Vec<NodeId> = Modality::PAIRS
        .iter()
        .map(|&(m, n)| symmetric_infonce(g, be.get(m), be.get(n), cfg.tau))
        .collect();
    sum_nodes(g, &terms)
}

pub fn loss_ld(g: &mut Graph, be: &BatchEmbeddings, cfg: &LossConfig) -> NodeId {
    let teacher = g.stop_gradient(be.joint);
    let terms: Vec<NodeId> = Modality::ALL
        .iter()
        .map(|&m| symmetric_infonce(g, be.get(m), teacher, cfg.tau))
        .collect();
    let total = sum_nodes(g, &terms);
    g.scale(total, 1.0 / Modality::ALL.len() as f64)
}

/// Replaces slot `plan.slot` of every anchor with sample `σ(i)`'s
/// embedding. The two untouched slots reuse the anchor nodes.
pub fn build_hard_negative(g: &mut Graph, be: &BatchEmbeddings, plan: &HardNegativePlan) -> Result<PerturbedTuple> {
    plan.validate()?;
    let mut single = be.single;
    let slot = plan.slot.index();
    single[slot] = g.permute_rows(single[slot], plan.sigma.clone());
    Ok(PerturbedTuple { single })
}

/// Nodes of the joint similarity `s(i, j)`.
#[derive(Clone, Copy, Debug)]
pub struct JointSimilarity {
    /// `B×B` grid `s(i, j)`.
    pub grid: NodeId,
    /// `B×1` matched scores `s(i, i)`.
    pub matched: NodeId,
    /// `B×1` anchor-vs-hard-negative scores `s(i, ĩ)`.
    pub hard: NodeId,
}

const ORDERED_PAIRS: [(Modality, Modality); 6] = [
    (Modality::Text, Modality::Video),
    (Modality::Text, Modality::Audio),
    (Modality::Video, Modality::Text),
    (Modality::Video, Modality::Audio),
    (Modality::Audio, Modality::Text),
    (Modality::Audio, Modality::Video),
];

/// `s(i, j) = 1/6 Σ_{m≠m'} z_i^(m)·z_j^(m')`, plus its diagonal and the
/// hard-negative column.
pub fn joint_similarity(g: &mut Graph, be: &BatchEmbeddings, hard: &PerturbedTuple) -> JointSimilarity {
    let norm = 1.0 / ORDERED_PAIRS.len() as f64;
    let mut grid_terms = Vec::with_capacity(6);
    let mut matched_terms = Vec::with_capacity(6);
    let mut hard_terms = Vec::with_capacity(6);
    for (m, n) in ORDERED_PAIRS {
        let zm = be.get(m);
        let zn = be.get(n);
        let zn_t = g.transpose(zn);
        grid_terms.push(g.matmul(zm, zn_t));
        matched_terms.push(g.row_dot(zm, zn));
        hard_terms.push(g.row_dot(zm, hard.single[n.index()]));
    }
    let grid = sum_nodes(g, &grid_terms);
    let matched = sum_nodes(g, &matched_terms);
    let hard_sum = sum_nodes(g, &hard_terms);
    JointSimilarity {
        grid: g.scale(grid, norm),
        matched: g.scale(matched, norm),
        hard: g.scale(hard_sum, norm),
    }
}

/// Tuple InfoNCE with the denominator over all `B` grid terms plus the
/// one hard-negative term.
pub fn loss_lt(g: &mut Graph, be: &BatchEmbeddings, plan: &HardNegativePlan, cfg: &LossConfig) -> Result<NodeId> {
    if plan.sigma.len() < 2 {
        return Err(Error::BatchTooSmall {
            need: 2,
            got: plan.sigma.len(),
        });
    }
    let hard = build_hard_negative(g, be, plan)?;
    let s = joint_similarity(g, be, &hard);
    let all = g.concat_cols(&[s.grid, s.hard]);
    let logits = g.scale(all, 1.0 / cfg.tau_t);
    let lse = g.logsumexp_rows(logits);
    let pos = g.scale(s.matched, 1.0 / cfg.tau_t);
    let per_anchor = g.sub(lse, pos);
    Ok(g.mean(per_anchor))
}

/// Loss nodes of one full objective.
#[derive(Clone, Copy, Debug)]
pub struct LossNodes {
    pub total: NodeId,
    pub la: NodeId,
    pub ld: NodeId,
    pub lt: NodeId,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub la: f64,
    pub ld: f64,
    pub lt: f64,
    pub total: f64,
}

impl LossNodes {
    /// Reads the evaluated component values back out of the graph.
    pub fn breakdown(&self, g: &Graph) -> Result<LossBreakdown> {
        let read =
            |id: NodeId| {
                g.value(id).and_then(|t| t.item()).ok_or(Error::Autodiff(
                    trimodal_autodiff::AutodiffError::NotEvaluated(id.index()),
                ))
            };
        Ok(LossBreakdown {
            la: read(self.la)?,
            ld: read(self.ld)?,
            lt: read(self.lt)?,
            total: read(self.total)?,
        })
    }
}

/// `λ_D L_D + λ_T L_T + λ_A L_A`.
pub fn total_loss(g: &mut Graph, be: &BatchEmbeddings, plan: &HardNegativePlan, cfg: &LossConfig) -> Result<LossNodes> {
    cfg.validate()?;
    let la = loss_la(g, be, cfg);
    let ld = loss_ld(g, be, cfg);
    let lt = loss_lt(g, be, plan, cfg)?;
    let wd = g.scale(ld, cfg.lambda_d);
    let wt = g.scale(lt, cfg.lambda_t);
    let wa = g.scale(la, cfg.lambda_a);
    let total = sum_nodes(g, &[wd, wt, wa]);
    Ok(LossNodes { total, la, ld, lt })
}

fn sum_nodes(g: &mut Graph, nodes: &[NodeId]) -> NodeId {
    let mut acc = nodes[0];
    for &n in &nodes[1..] {
        acc = g.add(acc, n);
    }
    acc
}
