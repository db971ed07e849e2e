//! Finite-difference checks of the training objectives through the full
//! encoder stack, over many random small instances.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use trimodal_autodiff::{grad_check, GradCheckOptions, GradCheckReport, Graph, Tensor};

use crate::error::Result;
use crate::modality::Modality;
use crate::model::{init_params, ModelConfig, ModelGraph};
use crate::objectives::{total_loss, BatchEmbeddings, HardNegativePlan, LossConfig};

/// Which scalar a check differentiates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckTarget {
    LinearLayer,
    Pairwise,
    Distill,
    Tuple,
    Total,
}

impl CheckTarget {
    pub const OBJECTIVES: [CheckTarget; 4] = [
        CheckTarget::Pairwise,
        CheckTarget::Distill,
        CheckTarget::Tuple,
        CheckTarget::Total,
    ];
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteSettings {
    pub instances: usize,
    pub batch_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub input_dim: usize,
    pub tau: f64,
    pub seed: u64,
}

impl Default for SuiteSettings {
    fn default() -> Self {
        Self {
            instances: 20,
            batch_size: 4,
            embed_dim: 8,
            hidden_dim: 6,
            input_dim: 5,
            tau: 0.5,
            seed: 42,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetSummary {
    pub target: CheckTarget,
    pub instances: usize,
    pub elements_checked: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub settings: SuiteSettings,
    pub targets: Vec<TargetSummary>,
}

impl SuiteReport {
    pub fn max_rel_error(&self) -> f64 {
        self.targets.iter().map(|t| t.max_rel_error).fold(0.0, f64::max)
    }
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::matrix(rows, cols, data).expect("shape")
}

/// `sum(gelu(x W + b))` over a random linear layer.
pub fn check_linear_layer(seed: u64, options: GradCheckOptions) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = Graph::new();
    let x = g.constant(uniform(&mut rng, 3, 4));
    let w = g.leaf("w");
    let b = g.leaf("b");
    let xw = g.matmul(x, w);
    let y = g.add(xw, b);
    let act = g.gelu(y);
    let root = g.sum(act);
    let leaves = BTreeMap::from([
        ("w".to_string(), uniform(&mut rng, 4, 5)),
        ("b".to_string(), uniform(&mut rng, 1, 5)),
    ]);
    Ok(grad_check(&mut g, root, &leaves, options)?)
}

/// Checks the four objectives on one random instance: fresh model init,
/// random inputs, random step and derangement.
pub fn check_objectives(
    settings: &SuiteSettings,
    instance: u64,
    options: GradCheckOptions,
) -> Result<Vec<(CheckTarget, GradCheckReport)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    rng.set_stream(instance);
    let config = ModelConfig {
        input_dim: [settings.input_dim; 3],
        hidden_dim: settings.hidden_dim,
        embed_dim: settings.embed_dim,
        seed: rng.random(),
        ..ModelConfig::default()
    };
    let params = init_params(&config)?;
    let b = settings.batch_size;
    let mut mg = ModelGraph::new(&config);
    let mut inputs = Vec::new();
    for m in Modality::ALL {
        let x = uniform(&mut rng, b, settings.input_dim);
        inputs.push((m, mg.input(m, &x)?));
    }
    let single = [0, 1, 2].map(|i| mg.encode_modality(inputs[i].0, inputs[i].1));
    let joint = mg.encode_subset(&inputs)?;
    let be = BatchEmbeddings { single, joint };
    let plan = HardNegativePlan::draw(rng.random_range(0..3), b, &mut rng)?;
    let cfg = LossConfig {
        tau: settings.tau,
        tau_t: settings.tau,
        ..LossConfig::default()
    };
    let nodes = total_loss(&mut mg.graph, &be, &plan, &cfg)?;
    let mut out = Vec::new();
    for (target, root) in [
        (CheckTarget::Pairwise, nodes.la),
        (CheckTarget::Distill, nodes.ld),
        (CheckTarget::Tuple, nodes.lt),
        (CheckTarget::Total, nodes.total),
    ] {
        out.push((target, grad_check(&mut mg.graph, root, params.tensors(), options)?));
    }
    Ok(out)
}

/// Runs the linear-layer check plus every objective on every instance.
pub fn run_suite(settings: &SuiteSettings) -> Result<SuiteReport> {
    let options = GradCheckOptions::default();
    let mut summaries: BTreeMap<CheckTarget, TargetSummary> = BTreeMap::new();
    let mut record = |target: CheckTarget, r: &GradCheckReport| {
        let s = summaries.entry(target).or_insert(TargetSummary {
            target,
            instances: 0,
            elements_checked: 0,
            max_rel_error: 0.0,
            max_abs_error: 0.0,
        });
        s.instances += 1;
        s.elements_checked += r.elements_checked;
        s.max_rel_error = s.max_rel_error.max(r.max_rel_error);
        s.max_abs_error = s.max_abs_error.max(r.max_abs_error);
    };
    for i in 0..settings.instances as u64 {
        record(
            CheckTarget::LinearLayer,
            &check_linear_layer(settings.seed.wrapping_add(i), options)?,
        );
        for (target, report) in check_objectives(settings, i, options)? {
            record(target, &report);
        }
    }
    Ok(SuiteReport {
        settings: settings.clone(),
        targets: summaries.into_values().collect(),
    })
}
