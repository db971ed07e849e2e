//! Central finite-difference check of backprop gradients.

use std::collections::BTreeMap;

use crate::error::Result;
use crate::graph::{Graph, NodeId};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub step: f64,
    /// Denominator floor for the relative error, so that near-zero
    /// gradients are compared on an absolute scale.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            floor: 1e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Leaf name and flat index of the worst element.
    pub worst: Option<(String, usize)>,
    pub elements_checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error <= tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares backprop against central differences for every element of
/// every named leaf reachable from `root`.
///
/// Stop-gradient nodes are held at their unperturbed values while
/// differencing, which is exactly the function backprop differentiates.
/// Failures are reported, not raised; errors only come from evaluation.
pub fn grad_check(
    graph: &mut Graph,
    root: NodeId,
    leaves: &BTreeMap<String, Tensor>,
    options: GradCheckOptions,
) -> Result<GradCheckReport> {
    graph.evaluate(root, leaves)?;
    let analytic = graph.backprop(root)?;
    let frozen: BTreeMap<NodeId, Tensor> = graph
        .stop_gradient_nodes(root)?
        .into_iter()
        .map(|id| (id, graph.value(id).expect("evaluated").clone()))
        .collect();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst: None,
        elements_checked: 0,
    };
    let mut perturbed = leaves.clone();
    for (name, grad) in &analytic {
        let n = leaves[name].numel();
        for idx in 0..n {
            let original = leaves[name].data()[idx];
            let mut eval_at = |v: f64| -> Result<f64> {
                perturbed.get_mut(name).expect("bound").data_mut()[idx] = v;
                let out = graph.evaluate_with(root, &perturbed, &frozen)?;
                Ok(out.data()[0])
            };
            let plus = eval_at(original + options.step)?;
            let minus = eval_at(original - options.step)?;
            perturbed.get_mut(name).expect("bound").data_mut()[idx] = original;

            let numeric = (plus - minus) / (2.0 * options.step);
            let a = grad.data()[idx];
            let abs = (a - numeric).abs();
            let rel = relative_error(a, numeric, options.floor);
            report.max_abs_error = report.max_abs_error.max(abs);
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = rel.max(report.max_rel_error);
                report.worst = Some((name.clone(), idx));
            }
            report.elements_checked += 1;
        }
    }
    // leave caches consistent with the unperturbed bindings
    graph.evaluate(root, leaves)?;
    graph.backprop(root)?;
    Ok(report)
}
