//! Forward and vector-Jacobian rules for every primitive.

use crate::error::{AutodiffError, Result};
use crate::tensor::Tensor;

/// Rows with a norm at or below this are rejected by `L2Normalize`.
pub const NORM_EPSILON: f64 = 1e-12;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    Leaf(String),
    Constant(Tensor),
    MatMul,
    Add,
    Mul,
    Scale(f64),
    Exp,
    Log,
    Gelu,
    Relu,
    Sum,
    Mean,
    RowSum,
    Transpose,
    ConcatCols,
    L2Normalize,
    StopGradient,
    LogSumExpRows,
    PermuteRows(Vec<usize>),
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Leaf(_) => "leaf",
            Op::Constant(_) => "constant",
            Op::MatMul => "matmul",
            Op::Add => "add",
            Op::Mul => "mul",
            Op::Scale(_) => "scale",
            Op::Exp => "exp",
            Op::Log => "log",
            Op::Gelu => "gelu",
            Op::Relu => "relu",
            Op::Sum => "sum",
            Op::Mean => "mean",
            Op::RowSum => "row_sum",
            Op::Transpose => "transpose",
            Op::ConcatCols => "concat_cols",
            Op::L2Normalize => "l2_normalize",
            Op::StopGradient => "stop_gradient",
            Op::LogSumExpRows => "logsumexp_rows",
            Op::PermuteRows(_) => "permute_rows",
        }
    }
}

/// tanh approximation of GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

pub fn gelu_derivative(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

fn require_matrix(op: &'static str, t: &Tensor) -> Result<()> {
    if t.is_matrix() {
        Ok(())
    } else {
        Err(AutodiffError::Domain {
            op,
            detail: format!("expected a matrix, got shape {:?}", t.shape()),
        })
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(AutodiffError::ShapeMismatch {
            op,
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        })
    }
}

fn is_row_broadcast(a: &Tensor, b: &Tensor) -> bool {
    a.is_matrix() && b.is_matrix() && b.rows() == 1 && a.rows() != 1 && b.cols() == a.cols()
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape")
}

fn row_sums(t: &Tensor) -> Tensor {
    let data = (0..t.rows()).map(|i| t.row(i).iter().sum()).collect();
    Tensor::matrix(t.rows(), 1, data).expect("rows x 1")
}

fn checked_finite(op: &'static str, t: Tensor) -> Result<Tensor> {
    if t.is_finite() {
        Ok(t)
    } else {
        Err(AutodiffError::Domain {
            op,
            detail: "non-finite result".into(),
        })
    }
}

pub(crate) fn forward(op: &Op, inputs: &[&Tensor]) -> Result<Tensor> {
    match op {
        Op::Leaf(_) | Op::Constant(_) => unreachable!("leaves are bound by the graph"),
        Op::MatMul => inputs[0].matmul(inputs[1]),
        Op::Add => {
            let (a, b) = (inputs[0], inputs[1]);
            if a.shape() == b.shape() {
                Ok(zip_map(a, b, |x, y| x + y))
            } else if is_row_broadcast(a, b) {
                let mut out = a.clone();
                for i in 0..out.rows() {
                    for (o, &v) in out.row_mut(i).iter_mut().zip(b.data()) {
                        *o += v;
                    }
                }
                Ok(out)
            } else {
                Err(AutodiffError::ShapeMismatch {
                    op: "add",
                    left: a.shape().to_vec(),
                    right: b.shape().to_vec(),
                })
            }
        }
        Op::Mul => {
            same_shape("mul", inputs[0], inputs[1])?;
            Ok(zip_map(inputs[0], inputs[1], |x, y| x * y))
        }
        Op::Scale(c) => Ok(inputs[0].map(|v| c * v)),
        Op::Exp => checked_finite("exp", inputs[0].map(f64::exp)),
        Op::Log => {
            if let Some(bad) = inputs[0].data().iter().find(|&&v| v <= 0.0) {
                return Err(AutodiffError::Domain {
                    op: "log",
                    detail: format!("non-positive input {bad}"),
                });
            }
            Ok(inputs[0].map(f64::ln))
        }
        Op::Gelu => Ok(inputs[0].map(gelu)),
        Op::Relu => Ok(inputs[0].map(|v| v.max(0.0))),
        Op::Sum => Ok(Tensor::scalar(inputs[0].data().iter().sum())),
        Op::Mean => {
            let n = inputs[0].numel();
            if n == 0 {
                return Err(AutodiffError::Domain {
                    op: "mean",
                    detail: "empty tensor".into(),
                });
            }
            Ok(Tensor::scalar(inputs[0].data().iter().sum::<f64>() / n as f64))
        }
        Op::RowSum => {
            require_matrix("row_sum", inputs[0])?;
            Ok(row_sums(inputs[0]))
        }
        Op::Transpose => {
            require_matrix("transpose", inputs[0])?;
            Ok(inputs[0].transpose())
        }
        Op::ConcatCols => {
            let first = inputs.first().ok_or(AutodiffError::Domain {
                op: "concat_cols",
                detail: "no inputs".into(),
            })?;
            for t in inputs {
                require_matrix("concat_cols", t)?;
                if t.rows() != first.rows() {
                    return Err(AutodiffError::ShapeMismatch {
                        op: "concat_cols",
                        left: first.shape().to_vec(),
                        right: t.shape().to_vec(),
                    });
                }
            }
            let rows = first.rows();
            let cols: usize = inputs.iter().map(|t| t.cols()).sum();
            let mut data = Vec::with_capacity(rows * cols);
            for i in 0..rows {
                for t in inputs {
                    data.extend_from_slice(t.row(i));
                }
            }
            Tensor::matrix(rows, cols, data)
        }
        Op::L2Normalize => {
            let x = inputs[0];
            require_matrix("l2_normalize", x)?;
            let mut out = x.clone();
            for i in 0..x.rows() {
                let norm = x.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm.is_nan() || norm <= NORM_EPSILON {
                    return Err(AutodiffError::DegenerateEmbedding { row: i, norm });
                }
                for v in out.row_mut(i) {
                    *v /= norm;
                }
            }
            Ok(out)
        }
        Op::StopGradient => Ok(inputs[0].clone()),
        Op::LogSumExpRows => {
            let x = inputs[0];
            require_matrix("logsumexp_rows", x)?;
            if x.cols() == 0 {
                return Err(AutodiffError::Domain {
                    op: "logsumexp_rows",
                    detail: "zero columns".into(),
                });
            }
            let data = (0..x.rows())
                .map(|i| {
                    let row = x.row(i);
                    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
                })
                .collect();
            checked_finite("logsumexp_rows", Tensor::matrix(x.rows(), 1, data)?)
        }
        Op::PermuteRows(perm) => {
            let x = inputs[0];
            require_matrix("permute_rows", x)?;
            validate_permutation(perm, x.rows())?;
            let mut data = Vec::with_capacity(x.numel());
            for &src in perm {
                data.extend_from_slice(x.row(src));
            }
            Tensor::matrix(x.rows(), x.cols(), data)
        }
    }
}

fn validate_permutation(perm: &[usize], n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    if perm.len() != n {
        return Err(AutodiffError::Domain {
            op: "permute_rows",
            detail: format!("permutation of length {} for {n} rows", perm.len()),
        });
    }
    for &p in perm {
        if p >= n || seen[p] {
            return Err(AutodiffError::Domain {
                op: "permute_rows",
                detail: format!("{perm:?} is not a permutation of 0..{n}"),
            });
        }
        seen[p] = true;
    }
    Ok(())
}

/// Gradient contribution for each input, `None` where nothing flows.
pub(crate) fn backward(op: &Op, inputs: &[&Tensor], output: &Tensor, grad: &Tensor) -> Result<Vec<Option<Tensor>>> {
    Ok(match op {
        Op::Leaf(_) | Op::Constant(_) => Vec::new(),
        Op::MatMul => {
            let (a, b) = (inputs[0], inputs[1]);
            vec![Some(grad.matmul(&b.transpose())?), Some(a.transpose().matmul(grad)?)]
        }
        Op::Add => {
            let (a, b) = (inputs[0], inputs[1]);
            let gb = if a.shape() == b.shape() {
                grad.clone()
            } else {
                let mut acc = Tensor::zeros(1, b.cols());
                for i in 0..grad.rows() {
                    for (o, &g) in acc.data_mut().iter_mut().zip(grad.row(i)) {
                        *o += g;
                    }
                }
                acc
            };
            vec![Some(grad.clone()), Some(gb)]
        }
        Op::Mul => vec![
            Some(zip_map(grad, inputs[1], |g, b| g * b)),
            Some(zip_map(grad, inputs[0], |g, a| g * a)),
        ],
        Op::Scale(c) => vec![Some(grad.map(|g| c * g))],
        Op::Exp => vec![Some(zip_map(grad, output, |g, y| g * y))],
        Op::Log => vec![Some(zip_map(grad, inputs[0], |g, x| g / x))],
        Op::Gelu => vec![Some(zip_map(grad, inputs[0], |g, x| g * gelu_derivative(x)))],
        Op::Relu => vec![Some(zip_map(grad, inputs[0], |g, x| if x > 0.0 { g } else { 0.0 }))],
        Op::Sum => {
            let g = grad.data()[0];
            vec![Some(inputs[0].map(|_| g))]
        }
        Op::Mean => {
            let g = grad.data()[0] / inputs[0].numel() as f64;
            vec![Some(inputs[0].map(|_| g))]
        }
        Op::RowSum => {
            let x = inputs[0];
            let mut out = Tensor::zeros_like(x);
            for i in 0..x.rows() {
                let g = grad.data()[i];
                out.row_mut(i).fill(g);
            }
            vec![Some(out)]
        }
        Op::Transpose => vec![Some(grad.transpose())],
        Op::ConcatCols => {
            let mut offset = 0;
            let mut parts = Vec::with_capacity(inputs.len());
            for t in inputs {
                let mut part = Tensor::zeros_like(t);
                for i in 0..t.rows() {
                    part.row_mut(i).copy_from_slice(&grad.row(i)[offset..offset + t.cols()]);
                }
                offset += t.cols();
                parts.push(Some(part));
            }
            parts
        }
        Op::L2Normalize => {
            let x = inputs[0];
            let mut out = Tensor::zeros_like(x);
            for i in 0..x.rows() {
                let norm = x.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
                let y = output.row(i);
                let g = grad.row(i);
                let proj: f64 = y.iter().zip(g).map(|(a, b)| a * b).sum();
                for ((o, &yi), &gi) in out.row_mut(i).iter_mut().zip(y).zip(g) {
                    *o = (gi - yi * proj) / norm;
                }
            }
            vec![Some(out)]
        }
        Op::StopGradient => vec![None],
        Op::LogSumExpRows => {
            let x = inputs[0];
            let mut out = Tensor::zeros_like(x);
            for i in 0..x.rows() {
                let lse = output.data()[i];
                let g = grad.data()[i];
                for (o, &v) in out.row_mut(i).iter_mut().zip(x.row(i)) {
                    *o = g * (v - lse).exp();
                }
            }
            vec![Some(out)]
        }
        Op::PermuteRows(perm) => {
            let x = inputs[0];
            let mut out = Tensor::zeros_like(x);
            for (i, &src) in perm.iter().enumerate() {
                for (o, &g) in out.row_mut(src).iter_mut().zip(grad.row(i)) {
                    *o += g;
                }
            }
            vec![Some(out)]
        }
    })
}
