//! The per-step training algorithm and the epoch loop around it.
//!
//! One step runs, in order: three single-modal encoder passes and one
//! joint pass; pairwise alignment; distillation against the
//! stop-gradient joint embedding; the cycled hard-negative plan; the
//! tuple loss; and a parameter update on the weighted total.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use trimodal_autodiff::{Gradients, Tensor};

use crate::data::{Corpus, TripleBatch};
use crate::error::{Error, Result};
use crate::io;
use crate::modality::Modality;
use crate::model::{init_params, write_checkpoint, ModelConfig, ModelGraph, ParameterSet};
use crate::objectives::{total_loss, BatchEmbeddings, HardNegativePlan, LossBreakdown, LossConfig};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled (AdamW-style) weight decay; ignored by SGD.
    pub weight_decay: f64,
    pub steps: u64,
    pub batch_size: usize,
    /// Seeds the data shuffle and the derangement streams.
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            weight_decay: 0.0,
            steps: 500,
            batch_size: 64,
            seed: 42,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if self.batch_size < 2 {
            return Err(Error::Config(format!(
                "batch size must be at least 2, got {}",
                self.batch_size
            )));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("adam betas must lie in [0, 1)".into()));
        }
        if !(self.eps > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config(
                "eps must be positive and weight decay nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// Adam moments; unused by SGD.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    first: BTreeMap<String, Tensor>,
    second: BTreeMap<String, Tensor>,
}

/// Applies one update. Parameters without a gradient entry are treated as
/// having zero gradient.
pub fn optimizer_step(
    params: &mut ParameterSet,
    grads: &Gradients,
    cfg: &OptimizerConfig,
    state: &mut OptimizerState,
) -> Result<()> {
    for (name, g) in grads {
        let p = params
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("gradient for unknown parameter `{name}`")))?;
        if p.shape() != g.shape() {
            return Err(Error::DimensionMismatch {
                what: format!("gradient of `{name}`"),
                expected: p.numel(),
                got: g.numel(),
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    for (name, p) in params.tensors_mut().iter_mut() {
        let zero;
        let g = match grads.get(name) {
            Some(g) => g,
            None => {
                zero = Tensor::zeros_like(p);
                &zero
            }
        };
        match cfg.kind {
            OptimizerKind::Sgd => {
                for (w, &gi) in p.data_mut().iter_mut().zip(g.data()) {
                    *w -= cfg.lr * gi;
                }
            }
            OptimizerKind::Adam => {
                let m = state.first.entry(name.clone()).or_insert_with(|| Tensor::zeros_like(g));
                let v = state
                    .second
                    .entry(name.clone())
                    .or_insert_with(|| Tensor::zeros_like(g));
                let bc1 = 1.0 - cfg.beta1.powi(t);
                let bc2 = 1.0 - cfg.beta2.powi(t);
                for (((w, &gi), mi), vi) in p
                    .data_mut()
                    .iter_mut()
                    .zip(g.data())
                    .zip(m.data_mut())
                    .zip(v.data_mut())
                {
                    *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
                    *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
                    let m_hat = *mi / bc1;
                    let v_hat = *vi / bc2;
                    *w -= cfg.lr * (m_hat / (v_hat.sqrt() + cfg.eps) + cfg.weight_decay * *w);
                }
            }
        }
    }
    Ok(())
}

/// Loss values, gradients and bookkeeping for one forward/backward pass.
#[derive(Clone, Debug)]
pub struct StepGradients {
    pub breakdown: LossBreakdown,
    pub grads: Gradients,
    pub encoder_passes: usize,
}

/// Builds the full objective for `batch`, evaluates it and backpropagates.
pub fn loss_and_gradients(
    params: &ParameterSet,
    batch: &TripleBatch,
    plan: &HardNegativePlan,
    loss_cfg: &LossConfig,
) -> Result<StepGradients> {
    let mut mg = ModelGraph::new(params.config());
    let inputs = [
        mg.input(Modality::Text, batch.modality(Modality::Text))?,
        mg.input(Modality::Video, batch.modality(Modality::Video))?,
        mg.input(Modality::Audio, batch.modality(Modality::Audio))?,
    ];
    let single = [
        mg.encode_modality(Modality::Text, inputs[0]),
        mg.encode_modality(Modality::Video, inputs[1]),
        mg.encode_modality(Modality::Audio, inputs[2]),
    ];
    let joint = mg.encode_subset(&[
        (Modality::Text, inputs[0]),
        (Modality::Video, inputs[1]),
        (Modality::Audio, inputs[2]),
    ])?;
    let be = BatchEmbeddings { single, joint };
    let nodes = total_loss(&mut mg.graph, &be, plan, loss_cfg)?;
    let encoder_passes = mg.passes();
    mg.graph.evaluate(nodes.total, params)?;
    let breakdown = nodes.breakdown(&mg.graph)?;
    let grads = mg.graph.backprop(nodes.total)?;
    Ok(StepGradients {
        breakdown,
        grads,
        encoder_passes,
    })
}

#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub breakdown: LossBreakdown,
    pub plan: HardNegativePlan,
    pub encoder_passes: usize,
}

/// One training step at global step `step`. Updates `params` in place.
pub fn train_step<R: Rng + ?Sized>(
    params: &mut ParameterSet,
    state: &mut OptimizerState,
    batch: &TripleBatch,
    step: u64,
    loss_cfg: &LossConfig,
    opt_cfg: &OptimizerConfig,
    rng: &mut R,
) -> Result<StepOutcome> {
    if batch.len() < 2 {
        return Err(Error::BatchTooSmall {
            need: 2,
            got: batch.len(),
        });
    }
    let plan = HardNegativePlan::draw(step, batch.len(), rng)?;
    let out = loss_and_gradients(params, batch, &plan, loss_cfg)?;
    optimizer_step(params, &out.grads, opt_cfg, state)?;
    Ok(StepOutcome {
        breakdown: out.breakdown,
        plan,
        encoder_passes: out.encoder_passes,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub slot: Modality,
    pub losses: LossBreakdown,
}

#[derive(Clone, Debug)]
pub struct TrainRunRecord {
    pub history: Vec<StepRecord>,
    pub params: ParameterSet,
    pub loss: LossConfig,
    pub optim: OptimizerConfig,
    pub wall_clock_secs: f64,
}

const SHUFFLE_STREAM: u64 = 1;
const DERANGEMENT_STREAM: u64 = 2;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Trains from a fresh initialization for `opt_cfg.steps` steps.
///
/// The train split is reshuffled at each epoch boundary; an incomplete
/// trailing batch is dropped. The step counter is global, so the
/// hard-negative cycle runs unbroken across epochs.
pub fn run_training(
    corpus: &Corpus,
    model_cfg: &ModelConfig,
    loss_cfg: &LossConfig,
    opt_cfg: &OptimizerConfig,
) -> Result<TrainRunRecord> {
    loss_cfg.validate()?;
    opt_cfg.validate()?;
    let n = corpus.train.len();
    if n < opt_cfg.batch_size {
        return Err(Error::BatchTooSmall {
            need: opt_cfg.batch_size,
            got: n,
        });
    }
    let started = Instant::now();
    let mut params = init_params(model_cfg)?;
    let mut state = OptimizerState::default();
    let mut shuffle_rng = stream_rng(opt_cfg.seed, SHUFFLE_STREAM);
    let mut hn_rng = stream_rng(opt_cfg.seed, DERANGEMENT_STREAM);

    let mut order: Vec<usize> = (0..n).collect();
    let mut cursor = n;
    let mut history = Vec::with_capacity(opt_cfg.steps as usize);
    for step in 0..opt_cfg.steps {
        if cursor + opt_cfg.batch_size > n {
            order.shuffle(&mut shuffle_rng);
            cursor = 0;
        }
        let batch = corpus.train.select(&order[cursor..cursor + opt_cfg.batch_size]);
        cursor += opt_cfg.batch_size;
        let out = train_step(&mut params, &mut state, &batch, step, loss_cfg, opt_cfg, &mut hn_rng)?;
        history.push(StepRecord {
            step,
            slot: out.plan.slot,
            losses: out.breakdown,
        });
    }
    Ok(TrainRunRecord {
        history,
        params,
        loss: loss_cfg.clone(),
        optim: opt_cfg.clone(),
        wall_clock_secs: started.elapsed().as_secs_f64(),
    })
}

impl TrainRunRecord {
    /// `step,l_a,l_d,l_t,total` with shortest round-trip float formatting.
    pub fn history_csv(&self) -> String {
        let mut out = String::from("step,l_a,l_d,l_t,total\n");
        for r in &self.history {
            let l = &r.losses;
            writeln!(out, "{},{},{},{},{}", r.step, l.la, l.ld, l.lt, l.total).expect("string write");
        }
        out
    }

    /// Mean of one loss component over a window of steps.
    pub fn mean_loss(&self, range: std::ops::Range<usize>, pick: impl Fn(&LossBreakdown) -> f64) -> f64 {
        let window = &self.history[range];
        window.iter().map(|r| pick(&r.losses)).sum::<f64>() / window.len() as f64
    }

    /// Writes `checkpoint.json`/`.bin`, `history.csv` and `manifest.json`
    /// under `dir`. `provenance` (corpus hash, run seed) lands in the manifest.
    pub fn write_artifacts(&self, dir: &Path, provenance: serde_json::Value) -> Result<()> {
        let ckpt = write_checkpoint(
            &dir.join("checkpoint.json"),
            &self.params,
            serde_json::json!({ "loss": self.loss, "optim": self.optim }),
        )?;
        io::atomic_write(&dir.join("history.csv"), self.history_csv().as_bytes())?;
        let manifest = serde_json::json!({
            "kind": "train_run",
            "model": self.params.config(),
            "loss": self.loss,
            "optim": self.optim,
            "steps": self.history.len(),
            "checkpoint_sha256": ckpt.sha256,
            "wall_clock_secs": self.wall_clock_secs,
            "provenance": provenance,
        });
        io::write_json(&dir.join("manifest.json"), &manifest)
    }
}
