//! Define-then-run computation graph with reverse-mode differentiation.
//!
//! Nodes are appended through the builder methods on [`Graph`] and are
//! evaluated lazily by [`Graph::evaluate`]. Named leaves are bound at
//! evaluation time from any [`LeafSource`], so the same graph can be
//! re-evaluated under perturbed bindings (see [`crate::grad_check`]).

use std::collections::{BTreeMap, HashMap};

use crate::error::{AutodiffError, Result};
use crate::ops::{self, Op};
use crate::tensor::Tensor;

/// Index of a node inside one [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Anything that can resolve a leaf name to a tensor.
pub trait LeafSource {
    fn lookup(&self, name: &str) -> Option<&Tensor>;
}

impl LeafSource for BTreeMap<String, Tensor> {
    fn lookup(&self, name: &str) -> Option<&Tensor> {
        self.get(name)
    }
}

impl LeafSource for HashMap<String, Tensor> {
    fn lookup(&self, name: &str) -> Option<&Tensor> {
        self.get(name)
    }
}

/// Gradients of a scalar root with respect to every named leaf reachable
/// from it. Leaves reachable only through a stop-gradient hold zeros.
pub type Gradients = BTreeMap<String, Tensor>;

#[derive(Clone, Debug)]
pub struct Node {
    op: Op,
    inputs: Vec<NodeId>,
    value: Option<Tensor>,
    grad: Option<Tensor>,
}

impl Node {
    pub fn op(&self) -> &Op {
        &self.op
    }

    pub fn inputs(&self) -> &[NodeId] {
        &self.inputs
    }

    pub fn value(&self) -> Option<&Tensor> {
        self.value.as_ref()
    }

    pub fn grad(&self) -> Option<&Tensor> {
        self.grad.as_ref()
    }
}

#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    leaves: BTreeMap<String, NodeId>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> Result<&Node> {
        self.nodes.get(id.0).ok_or(AutodiffError::UnknownNode(id.0))
    }

    pub fn value(&self, id: NodeId) -> Option<&Tensor> {
        self.nodes.get(id.0).and_then(|n| n.value.as_ref())
    }

    pub fn grad(&self, id: NodeId) -> Option<&Tensor> {
        self.nodes.get(id.0).and_then(|n| n.grad.as_ref())
    }

    /// Ids of every named leaf, in name order.
    pub fn leaves(&self) -> impl Iterator<Item = (&str, NodeId)> {
        self.leaves.iter().map(|(k, v)| (k.as_str(), *v))
    }

    fn push(&mut self, op: Op, inputs: Vec<NodeId>) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            op,
            inputs,
            value: None,
            grad: None,
        });
        id
    }

    /// Named leaf; asking for the same name twice returns the same node,
    /// so fan-out gradients accumulate on one tensor.
    pub fn leaf(&mut self, name: &str) -> NodeId {
        if let Some(&id) = self.leaves.get(name) {
            return id;
        }
        let id = self.push(Op::Leaf(name.to_string()), Vec::new());
        self.leaves.insert(name.to_string(), id);
        id
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Constant(value), Vec::new())
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::MatMul, vec![a, b])
    }

    /// Elementwise sum; `b` may also be a `1×n` row broadcast over `a`.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Add, vec![a, b])
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let neg = self.scale(b, -1.0);
        self.add(a, neg)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Mul, vec![a, b])
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        self.push(Op::Scale(factor), vec![a])
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Exp, vec![a])
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Log, vec![a])
    }

    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Gelu, vec![a])
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Relu, vec![a])
    }

    /// Sum of all elements, as a `1×1` tensor.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Sum, vec![a])
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Mean, vec![a])
    }

    /// Per-row sum: `m×n → m×1`.
    pub fn row_sum(&mut self, a: NodeId) -> NodeId {
        self.push(Op::RowSum, vec![a])
    }

    /// Per-row inner product of two equally shaped matrices.
    pub fn row_dot(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let prod = self.mul(a, b);
        self.row_sum(prod)
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Transpose, vec![a])
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        self.push(Op::ConcatCols, parts.to_vec())
    }

    pub fn l2_normalize(&mut self, a: NodeId) -> NodeId {
        self.push(Op::L2Normalize, vec![a])
    }

    /// Forward identity, backward zero.
    pub fn stop_gradient(&mut self, a: NodeId) -> NodeId {
        self.push(Op::StopGradient, vec![a])
    }

    /// Max-shifted log-sum-exp of each row: `m×n → m×1`.
    pub fn logsumexp_rows(&mut self, a: NodeId) -> NodeId {
        self.push(Op::LogSumExpRows, vec![a])
    }

    /// Row `i` of the output is row `perm[i]` of the input.
    pub fn permute_rows(&mut self, a: NodeId, perm: Vec<usize>) -> NodeId {
        self.push(Op::PermuteRows(perm), vec![a])
    }

    /// Rewires one input of an existing node. Used for graph surgery; the
    /// result is validated (including for cycles) on the next evaluation.
    pub fn replace_input(&mut self, node: NodeId, slot: usize, input: NodeId) -> Result<()> {
        let n = self.nodes.get_mut(node.0).ok_or(AutodiffError::UnknownNode(node.0))?;
        let target = n.inputs.get_mut(slot).ok_or(AutodiffError::Domain {
            op: "replace_input",
            detail: format!("node {} has no input slot {slot}", node.0),
        })?;
        *target = input;
        Ok(())
    }

    /// Nodes reachable from `root`, inputs before consumers.
    pub fn topo_order(&self, root: NodeId) -> Result<Vec<NodeId>> {
        const FRESH: u8 = 0;
        const OPEN: u8 = 1;
        const DONE: u8 = 2;
        if root.0 >= self.nodes.len() {
            return Err(AutodiffError::UnknownNode(root.0));
        }
        let mut state = vec![FRESH; self.nodes.len()];
        let mut order = Vec::new();
        // (node, index of next input to visit)
        let mut stack = vec![(root, 0usize)];
        state[root.0] = OPEN;
        while let Some((id, next)) = stack.pop() {
            let inputs = &self.nodes[id.0].inputs;
            if next < inputs.len() {
                stack.push((id, next + 1));
                let child = inputs[next];
                if child.0 >= self.nodes.len() {
                    return Err(AutodiffError::UnknownNode(child.0));
                }
                match state[child.0] {
                    FRESH => {
                        state[child.0] = OPEN;
                        stack.push((child, 0));
                    }
                    OPEN => return Err(AutodiffError::Cycle { node: child.0 }),
                    _ => {}
                }
            } else {
                state[id.0] = DONE;
                order.push(id);
            }
        }
        Ok(order)
    }

    /// Evaluates every node reachable from `root` and returns the root value.
    pub fn evaluate(&mut self, root: NodeId, leaves: &impl LeafSource) -> Result<&Tensor> {
        self.evaluate_with(root, leaves, &BTreeMap::new())
    }

    /// Like [`Graph::evaluate`], but stop-gradient nodes listed in `frozen`
    /// output the given tensor instead of their input's value.
    pub fn evaluate_with(
        &mut self,
        root: NodeId,
        leaves: &impl LeafSource,
        frozen: &BTreeMap<NodeId, Tensor>,
    ) -> Result<&Tensor> {
        let order = self.topo_order(root)?;
        for &id in &order {
            let value = {
                let node = &self.nodes[id.0];
                match &node.op {
                    Op::Leaf(name) => leaves
                        .lookup(name)
                        .cloned()
                        .ok_or_else(|| AutodiffError::UnboundLeaf(name.clone()))?,
                    Op::Constant(t) => t.clone(),
                    Op::StopGradient if frozen.contains_key(&id) => frozen[&id].clone(),
                    op => {
                        let inputs: Vec<&Tensor> = node
                            .inputs
                            .iter()
                            .map(|i| self.nodes[i.0].value.as_ref().ok_or(AutodiffError::NotEvaluated(i.0)))
                            .collect::<Result<_>>()?;
                        ops::forward(op, &inputs)?
                    }
                }
            };
            let node = &mut self.nodes[id.0];
            node.value = Some(value);
            node.grad = None;
        }
        Ok(self.nodes[root.0].value.as_ref().expect("root evaluated"))
    }

    /// Reverse pass from a scalar root. Every reachable node gets its
    /// gradient cached; the returned map holds the named leaves.
    ///
    /// Contributions into a node are summed in ascending consumer id, so
    /// the result does not depend on traversal order.
    pub fn backprop(&mut self, root: NodeId) -> Result<Gradients> {
        let order = self.topo_order(root)?;
        for &id in &order {
            if self.nodes[id.0].value.is_none() {
                return Err(AutodiffError::NotEvaluated(id.0));
            }
        }
        let root_value = self.nodes[root.0].value.as_ref().expect("checked");
        if !root_value.is_scalar() {
            return Err(AutodiffError::NonScalarRoot(root_value.shape().to_vec()));
        }

        let mut pending: BTreeMap<NodeId, Vec<(NodeId, Tensor)>> = BTreeMap::new();
        pending.insert(root, vec![(root, Tensor::new(root_value.shape().to_vec(), vec![1.0])?)]);

        for &id in order.iter().rev() {
            let grad = {
                let node = &self.nodes[id.0];
                let value = node.value.as_ref().expect("checked");
                let mut contributions = pending.remove(&id).unwrap_or_default();
                contributions.sort_by_key(|(consumer, _)| *consumer);
                let mut total = Tensor::zeros_like(value);
                for (_, g) in &contributions {
                    total.add_assign(g)?;
                }
                total
            };

            let input_grads = {
                let node = &self.nodes[id.0];
                let inputs: Vec<&Tensor> = node
                    .inputs
                    .iter()
                    .map(|i| self.nodes[i.0].value.as_ref().expect("checked"))
                    .collect();
                let output = node.value.as_ref().expect("checked");
                ops::backward(&node.op, &inputs, output, &grad)?
            };
            let input_ids = self.nodes[id.0].inputs.clone();
            for (input, g) in input_ids.into_iter().zip(input_grads) {
                if let Some(g) = g {
                    pending.entry(input).or_default().push((id, g));
                }
            }
            self.nodes[id.0].grad = Some(grad);
        }

        let reachable: std::collections::BTreeSet<NodeId> = order.into_iter().collect();
        let mut out = Gradients::new();
        for (name, id) in &self.leaves {
            if reachable.contains(id) {
                let g = self.nodes[id.0].grad.clone().expect("reachable leaf has grad");
                out.insert(name.clone(), g);
            }
        }
        Ok(out)
    }

    /// Ids of every stop-gradient node reachable from `root`.
    pub fn stop_gradient_nodes(&self, root: NodeId) -> Result<Vec<NodeId>> {
        Ok(self
            .topo_order(root)?
            .into_iter()
            .filter(|id| matches!(self.nodes[id.0].op, Op::StopGradient))
            .collect())
    }
}
