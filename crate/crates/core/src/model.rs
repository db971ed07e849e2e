//! Toy tri-modal encoder.
//!
//! Each modality has a two-layer trunk (`Linear → act → Linear`) producing
//! pre-normalization features. A single-modal embedding applies that
//! modality's own linear projection and normalizes. A subset embedding
//! mean-pools the trunk features of the present modalities and runs them
//! through the shared fusion head (`Linear → act → Linear`) before
//! normalizing. The fusion head is therefore the only parameter group on
//! the joint path that the single-modal paths never touch.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use trimodal_autodiff::{Graph, LeafSource, NodeId, Tensor};

use crate::embedding::EmbeddingSet;
use crate::error::{Error, Result};
use crate::io::{self, DType};
use crate::modality::Modality;

/// Prefix shared by every fusion-head parameter name.
pub const FUSION_PREFIX: &str = "fusion.";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Gelu,
    Relu,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Raw feature width per modality, in `T, V, A` order.
    pub input_dim: [usize; 3],
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub activation: Activation,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_dim: [16; 3],
            hidden_dim: 64,
            embed_dim: 32,
            activation: Activation::Gelu,
            seed: 42,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim.contains(&0) || self.hidden_dim == 0 || self.embed_dim == 0 {
            return Err(Error::Config(format!(
                "model dims must be positive: input {:?}, hidden {}, embed {}",
                self.input_dim, self.hidden_dim, self.embed_dim
            )));
        }
        Ok(())
    }

    pub fn input_dim(&self, m: Modality) -> usize {
        self.input_dim[m.index()]
    }

    /// Parameter names and shapes in initialization order.
    pub fn parameter_layout(&self) -> Vec<(String, [usize; 2])> {
        let h = self.hidden_dim;
        let d = self.embed_dim;
        let mut layout = Vec::new();
        for m in Modality::ALL {
            let p = m.code();
            layout.push((format!("{p}.w1"), [self.input_dim(m), h]));
            layout.push((format!("{p}.b1"), [1, h]));
            layout.push((format!("{p}.w2"), [h, h]));
            layout.push((format!("{p}.b2"), [1, h]));
            layout.push((format!("{p}.proj_w"), [h, d]));
            layout.push((format!("{p}.proj_b"), [1, d]));
        }
        layout.push((format!("{FUSION_PREFIX}w1"), [h, h]));
        layout.push((format!("{FUSION_PREFIX}b1"), [1, h]));
        layout.push((format!("{FUSION_PREFIX}w2"), [h, d]));
        layout.push((format!("{FUSION_PREFIX}b2"), [1, d]));
        layout
    }
}

/// Named parameter tensors together with the config that shaped them.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterSet {
    config: ModelConfig,
    tensors: BTreeMap<String, Tensor>,
}

impl ParameterSet {
    /// Assembles a parameter set, checking names and shapes against the layout.
    pub fn from_tensors(config: ModelConfig, tensors: BTreeMap<String, Tensor>) -> Result<Self> {
        config.validate()?;
        let layout = config.parameter_layout();
        if layout.len() != tensors.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} parameter tensors, got {}",
                layout.len(),
                tensors.len()
            )));
        }
        for (name, shape) in &layout {
            let t = tensors
                .get(name)
                .ok_or_else(|| Error::InvalidArgument(format!("missing parameter `{name}`")))?;
            if t.shape() != shape {
                return Err(Error::InvalidArgument(format!(
                    "parameter `{name}` has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
            if !t.is_finite() {
                return Err(Error::InvalidArgument(format!("parameter `{name}` is not finite")));
            }
        }
        Ok(Self { config, tensors })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn tensors(&self) -> &BTreeMap<String, Tensor> {
        &self.tensors
    }

    pub(crate) fn tensors_mut(&mut self) -> &mut BTreeMap<String, Tensor> {
        &mut self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn is_fusion(name: &str) -> bool {
        name.starts_with(FUSION_PREFIX)
    }

    /// Names of the parameters owned by one modality's encoder.
    pub fn encoder_names(&self, m: Modality) -> Vec<&str> {
        let prefix = format!("{}.", m.code());
        self.tensors
            .keys()
            .filter(|k| k.starts_with(&prefix))
            .map(String::as_str)
            .collect()
    }

    pub fn fusion_names(&self) -> Vec<&str> {
        self.tensors
            .keys()
            .filter(|k| Self::is_fusion(k))
            .map(String::as_str)
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }
}

impl LeafSource for ParameterSet {
    fn lookup(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }
}

/// Writes parameters as little-endian `f32` in layout order. `extra` is
/// merged into the manifest metadata next to the model config.
pub fn write_checkpoint(path: &Path, params: &ParameterSet, extra: serde_json::Value) -> Result<io::Manifest> {
    let layout = params.config().parameter_layout();
    let tensors: Vec<(&str, &Tensor)> = layout
        .iter()
        .map(|(name, _)| (name.as_str(), &params.tensors[name]))
        .collect();
    let meta = serde_json::json!({
        "kind": "checkpoint",
        "model": params.config(),
        "extra": extra,
    });
    io::write_tensors(path, &tensors, DType::F32, meta)
}

pub fn read_checkpoint(path: &Path) -> Result<ParameterSet> {
    let (manifest, tensors) = io::read_tensors(path)?;
    let config: ModelConfig = serde_json::from_value(manifest.meta["model"].clone())
        .map_err(|e| Error::CorruptArtifact(format!("checkpoint model config: {e}")))?;
    ParameterSet::from_tensors(config, tensors.into_iter().collect())
        .map_err(|e| Error::CorruptArtifact(format!("checkpoint: {e}")))
}

/// Deterministic init: weights uniform in `±1/sqrt(fan_in)`, biases zero.
///
/// Values are drawn as `f32` so a checkpoint of the initial state
/// reproduces it bitwise.
pub fn init_params(config: &ModelConfig) -> Result<ParameterSet> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut tensors = BTreeMap::new();
    for (name, [rows, cols]) in config.parameter_layout() {
        let tensor = if rows == 1 {
            Tensor::zeros(1, cols)
        } else {
            let bound = 1.0 / (rows as f64).sqrt();
            let data = (0..rows * cols)
                .map(|_| f32_within(rng.random_range(-bound..bound), bound))
                .collect();
            Tensor::matrix(rows, cols, data)?
        };
        tensors.insert(name, tensor);
    }
    ParameterSet::from_tensors(config.clone(), tensors)
}

/// Rounds to the nearest `f32`, stepping one ulp toward zero if rounding
/// crossed `bound`.
fn f32_within(value: f64, bound: f64) -> f64 {
    let mut v = value as f32;
    if (v as f64).abs() > bound {
        v = f32::from_bits(v.to_bits() - 1);
    }
    v as f64
}

/// Graph builder for encoder passes over one [`Graph`]; counts passes so
/// callers can check how many encoder forwards a step performed.
pub struct ModelGraph {
    pub graph: Graph,
    config: ModelConfig,
    input_rows: BTreeMap<NodeId, usize>,
    passes: usize,
}

impl ModelGraph {
    pub fn new(config: &ModelConfig) -> Self {
        Self {
            graph: Graph::new(),
            config: config.clone(),
            input_rows: BTreeMap::new(),
            passes: 0,
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Number of encoder passes (single-modal or subset) built so far.
    pub fn passes(&self) -> usize {
        self.passes
    }

    /// Adds a raw feature batch for modality `m` as a constant.
    pub fn input(&mut self, m: Modality, x: &Tensor) -> Result<NodeId> {
        let expected = self.config.input_dim(m);
        if !x.is_matrix() || x.cols() != expected {
            return Err(Error::DimensionMismatch {
                what: format!("{m} input width"),
                expected,
                got: if x.is_matrix() { x.cols() } else { x.numel() },
            });
        }
        let id = self.graph.constant(x.clone());
        self.input_rows.insert(id, x.rows());
        Ok(id)
    }

    fn activate(&mut self, x: NodeId) -> NodeId {
        match self.config.activation {
            Activation::Gelu => self.graph.gelu(x),
            Activation::Relu => self.graph.relu(x),
        }
    }

    fn linear(&mut self, x: NodeId, prefix: &str, w: &str, b: &str) -> NodeId {
        let w = self.graph.leaf(&format!("{prefix}{w}"));
        let b = self.graph.leaf(&format!("{prefix}{b}"));
        let xw = self.graph.matmul(x, w);
        self.graph.add(xw, b)
    }

    /// Pre-normalization trunk features for one modality.
    fn trunk(&mut self, m: Modality, x: NodeId) -> NodeId {
        let prefix = format!("{}.", m.code());
        let h = self.linear(x, &prefix, "w1", "b1");
        let h = self.activate(h);
        self.linear(h, &prefix, "w2", "b2")
    }

    /// `z^(m) = normalize(trunk_m(x) P_m + c_m)`.
    pub fn encode_modality(&mut self, m: Modality, x: NodeId) -> NodeId {
        self.passes += 1;
        let features = self.trunk(m, x);
        let prefix = format!("{}.", m.code());
        let projected = self.linear(features, &prefix, "proj_w", "proj_b");
        self.graph.l2_normalize(projected)
    }

    /// Joint embedding of the supplied modalities. Trunk features are
    /// summed in `T, V, A` order whatever order the inputs arrive in.
    pub fn encode_subset(&mut self, inputs: &[(Modality, NodeId)]) -> Result<NodeId> {
        if inputs.is_empty() {
            return Err(Error::EmptySubset);
        }
        let mut ordered = inputs.to_vec();
        ordered.sort_by_key(|(m, _)| *m);
        for pair in ordered.windows(2) {
            if pair[0].0 == pair[1].0 {
                return Err(Error::InvalidArgument(format!("modality {} supplied twice", pair[0].0)));
            }
        }
        let rows: Vec<usize> = ordered
            .iter()
            .filter_map(|(_, id)| self.input_rows.get(id).copied())
            .collect();
        if let Some(&first) = rows.first() {
            if let Some(&bad) = rows.iter().find(|&&r| r != first) {
                return Err(Error::DimensionMismatch {
                    what: "subset batch size".into(),
                    expected: first,
                    got: bad,
                });
            }
        }

        self.passes += 1;
        let mut pooled: Option<NodeId> = None;
        for &(m, x) in &ordered {
            let f = self.trunk(m, x);
            pooled = Some(match pooled {
                None => f,
                Some(acc) => self.graph.add(acc, f),
            });
        }
        let mut pooled = pooled.expect("nonempty");
        if ordered.len() > 1 {
            pooled = self.graph.scale(pooled, 1.0 / ordered.len() as f64);
        }
        let h = self.linear(pooled, FUSION_PREFIX, "w1", "b1");
        let h = self.activate(h);
        let out = self.linear(h, FUSION_PREFIX, "w2", "b2");
        Ok(self.graph.l2_normalize(out))
    }
}

/// Embeds one modality of a raw batch.
pub fn encode_modality(params: &ParameterSet, m: Modality, x: &Tensor) -> Result<EmbeddingSet> {
    let mut mg = ModelGraph::new(params.config());
    let input = mg.input(m, x)?;
    let z = mg.encode_modality(m, input);
    let value = mg.graph.evaluate(z, params)?.clone();
    EmbeddingSet::new(value)
}

/// Embeds a nonempty subset of modalities through the fusion head.
pub fn encode_subset(params: &ParameterSet, inputs: &[(Modality, &Tensor)]) -> Result<EmbeddingSet> {
    let mut mg = ModelGraph::new(params.config());
    let nodes = inputs
        .iter()
        .map(|&(m, x)| Ok((m, mg.input(m, x)?)))
        .collect::<Result<Vec<_>>>()?;
    let z = mg.encode_subset(&nodes)?;
    let value = mg.graph.evaluate(z, params)?.clone();
    EmbeddingSet::new(value)
}
