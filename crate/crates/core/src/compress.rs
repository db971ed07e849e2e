//! Post-hoc compression of embedded pools: dimension selection followed
//! by int8 scalar quantization or sign hashing, and re-evaluation.
//!
//! One [`CompressionSpec`] and one seed drive every view of a pool, so
//! queries and galleries always keep the same dimensions.

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::{dot, EmbeddingSet};
use crate::error::{Error, Result};
use crate::eval::{evaluate_scoring, PoolViews, RetrievalReport, Scoring};
use crate::io::{self, DType, RawArray};
use crate::modality::ViewSet;
use crate::Tensor;

/// Number of dimension-selection seeds averaged by [`evaluate_compressed`].
pub const DIM_SEEDS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase", deny_unknown_fields)]
pub enum DimSelect {
    None,
    /// Keep dimensions `0..k`.
    Front {
        k: usize,
    },
    /// Keep `k` dimensions drawn without replacement from the seed.
    Random {
        k: usize,
    },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quantize {
    #[default]
    Fp32,
    Int8,
    Binary,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompressionSpec {
    pub dims: DimSelect,
    #[serde(default)]
    pub quantize: Quantize,
    /// First dimension-selection seed; evaluation uses `seed..seed + 5`.
    #[serde(default)]
    pub seed: u64,
}

impl CompressionSpec {
    pub fn none() -> Self {
        Self {
            dims: DimSelect::None,
            quantize: Quantize::Fp32,
            seed: 0,
        }
    }

    /// Short label such as `random-256-int8`.
    pub fn label(&self) -> String {
        let dims = match self.dims {
            DimSelect::None => "none".to_string(),
            DimSelect::Front { k } => format!("front-{k}"),
            DimSelect::Random { k } => format!("random-{k}"),
        };
        let q = match self.quantize {
            Quantize::Fp32 => "fp32",
            Quantize::Int8 => "int8",
            Quantize::Binary => "binary",
        };
        format!("{dims}-{q}")
    }

    /// Output width for input width `d`.
    pub fn output_dim(&self, d: usize) -> Result<usize> {
        let k = match self.dims {
            DimSelect::None => d,
            DimSelect::Front { k } | DimSelect::Random { k } => k,
        };
        if k == 0 || k > d {
            return Err(Error::InvalidArgument(format!("cannot keep {k} of {d} dimensions")));
        }
        if self.quantize == Quantize::Binary && k % 8 != 0 {
            return Err(Error::InvalidArgument(format!(
                "binary codes need a multiple of 8 dimensions, got {k}"
            )));
        }
        Ok(k)
    }
}

/// Stored bytes per vector, excluding any per-row scale.
pub fn code_bytes_per_vector(quantize: Quantize, k: usize) -> usize {
    match quantize {
        Quantize::Fp32 => 4 * k,
        Quantize::Int8 => k,
        Quantize::Binary => k.div_ceil(8),
    }
}

/// Kept dimension indices, ascending.
pub fn selection_indices(dims: DimSelect, d: usize, seed: u64) -> Result<Vec<usize>> {
    let indices = match dims {
        DimSelect::None => (0..d).collect(),
        DimSelect::Front { k } => {
            check_k(k, d)?;
            (0..k).collect()
        }
        DimSelect::Random { k } => {
            check_k(k, d)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut idx = rand::seq::index::sample(&mut rng, d, k).into_vec();
            idx.sort_unstable();
            idx
        }
    };
    Ok(indices)
}

fn check_k(k: usize, d: usize) -> Result<()> {
    if k == 0 || k > d {
        return Err(Error::InvalidArgument(format!("cannot keep {k} of {d} dimensions")));
    }
    Ok(())
}

/// Applies the dimension selection. `none` returns the input unchanged;
/// otherwise rows are re-normalized when `renormalize` is set.
pub fn select_dims(e: &Tensor, dims: DimSelect, seed: u64, renormalize: bool) -> Result<Tensor> {
    if dims == DimSelect::None {
        return Ok(e.clone());
    }
    let idx = selection_indices(dims, e.cols(), seed)?;
    let mut data = Vec::with_capacity(e.rows() * idx.len());
    for i in 0..e.rows() {
        let row = e.row(i);
        data.extend(idx.iter().map(|&j| row[j]));
    }
    let selected = Tensor::matrix(e.rows(), idx.len(), data)?;
    if renormalize {
        Ok(EmbeddingSet::normalize(selected)?.into_matrix())
    } else {
        Ok(selected)
    }
}

/// Symmetric per-row int8 codes: `scale = max|x| / 127`.
#[derive(Clone, Debug, PartialEq)]
pub struct Int8Codes {
    pub rows: usize,
    pub k: usize,
    pub codes: Vec<i8>,
    pub scales: Vec<f64>,
    /// Rows that were all zero; their codes and scale are zero.
    pub zero_rows: Vec<usize>,
}

pub fn quantize_int8(e: &Tensor) -> Result<Int8Codes> {
    if !e.is_finite() {
        return Err(Error::InvalidArgument("cannot quantize non-finite values".into()));
    }
    let (rows, k) = (e.rows(), e.cols());
    let mut codes = Vec::with_capacity(rows * k);
    let mut scales = Vec::with_capacity(rows);
    let mut zero_rows = Vec::new();
    for i in 0..rows {
        let row = e.row(i);
        let max = row.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if max == 0.0 {
            zero_rows.push(i);
            scales.push(0.0);
            codes.extend(std::iter::repeat_n(0i8, k));
            continue;
        }
        let scale = max / 127.0;
        scales.push(scale);
        codes.extend(row.iter().map(|v| (v / scale).round().clamp(-127.0, 127.0) as i8));
    }
    Ok(Int8Codes {
        rows,
        k,
        codes,
        scales,
        zero_rows,
    })
}

impl Int8Codes {
    pub fn row(&self, i: usize) -> &[i8] {
        &self.codes[i * self.k..(i + 1) * self.k]
    }

    pub fn dequantize(&self) -> Tensor {
        let data = (0..self.rows)
            .flat_map(|i| {
                let s = self.scales[i];
                self.row(i).iter().map(move |&c| c as f64 * s)
            })
            .collect();
        Tensor::matrix(self.rows, self.k, data).expect("consistent shape")
    }
}

/// Sign bits packed eight per byte, most significant bit first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryCodes {
    pub rows: usize,
    pub k: usize,
    pub bits: Vec<u8>,
}

pub fn binarize(e: &Tensor) -> Result<BinaryCodes> {
    let (rows, k) = (e.rows(), e.cols());
    if k % 8 != 0 {
        return Err(Error::InvalidArgument(format!(
            "binary codes need a multiple of 8 dimensions, got {k}"
        )));
    }
    let mut bits = vec![0u8; rows * k / 8];
    for i in 0..rows {
        for (j, &v) in e.row(i).iter().enumerate() {
            if v >= 0.0 {
                bits[i * k / 8 + j / 8] |= 0x80 >> (j % 8);
            }
        }
    }
    Ok(BinaryCodes { rows, k, bits })
}

impl BinaryCodes {
    pub fn row(&self, i: usize) -> &[u8] {
        let w = self.k / 8;
        &self.bits[i * w..(i + 1) * w]
    }

    /// `k − 2·hamming`, in `[−k, k]`.
    pub fn similarity(&self, a: &[u8], b: &[u8]) -> i64 {
        let hamming: u32 = a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum();
        self.k as i64 - 2 * hamming as i64
    }
}

/// One view after compression, ready to score.
#[derive(Clone, Debug, PartialEq)]
pub enum CompressedView {
    Float(Tensor),
    Int8 { codes: Int8Codes, dequantized: Tensor },
    Binary(BinaryCodes),
}

impl CompressedView {
    pub fn rows(&self) -> usize {
        match self {
            CompressedView::Float(t) => t.rows(),
            CompressedView::Int8 { codes, .. } => codes.rows,
            CompressedView::Binary(b) => b.rows,
        }
    }

    pub fn zero_rows(&self) -> usize {
        match self {
            CompressedView::Int8 { codes, .. } => codes.zero_rows.len(),
            _ => 0,
        }
    }
}

/// A pool after one spec and one dimension seed.
#[derive(Clone, Debug, PartialEq)]
pub struct CompressedPool {
    pub spec: CompressionSpec,
    pub seed: u64,
    views: BTreeMap<ViewSet, CompressedView>,
}

pub fn compress_pool(pool: &PoolViews, spec: &CompressionSpec, seed: u64) -> Result<CompressedPool> {
    spec.output_dim(pool.dim())?;
    let renormalize = spec.quantize != Quantize::Binary;
    let views = pool
        .iter()
        .map(|(v, e)| {
            let selected = select_dims(e.matrix(), spec.dims, seed, renormalize)?;
            let view = match spec.quantize {
                Quantize::Fp32 => CompressedView::Float(selected),
                Quantize::Int8 => {
                    let codes = quantize_int8(&selected)?;
                    let dequantized = codes.dequantize();
                    CompressedView::Int8 { codes, dequantized }
                }
                Quantize::Binary => CompressedView::Binary(binarize(&selected)?),
            };
            Ok((v, view))
        })
        .collect::<Result<_>>()?;
    Ok(CompressedPool {
        spec: *spec,
        seed,
        views,
    })
}

impl CompressedPool {
    pub fn view(&self, v: ViewSet) -> Option<&CompressedView> {
        self.views.get(&v)
    }

    pub fn zero_rows(&self) -> usize {
        self.views.values().map(CompressedView::zero_rows).sum()
    }

    /// Writes codes (and scales for int8) for every view as one artifact.
    pub fn write_index(&self, path: &Path, meta: serde_json::Value) -> Result<io::Manifest> {
        let mut arrays = Vec::new();
        for (v, view) in &self.views {
            match view {
                CompressedView::Float(t) => arrays.push(RawArray::from_tensor(&format!("{v}.values"), t, DType::F64)?),
                CompressedView::Int8 { codes, .. } => {
                    arrays.push(RawArray::from_i8(
                        &format!("{v}.codes"),
                        vec![codes.rows, codes.k],
                        &codes.codes,
                    ));
                    let scales = Tensor::new(vec![codes.rows], codes.scales.clone())?;
                    arrays.push(RawArray::from_tensor(&format!("{v}.scales"), &scales, DType::F64)?);
                }
                CompressedView::Binary(b) => {
                    arrays.push(RawArray::from_u8(&format!("{v}.bits"), vec![b.rows, b.k / 8], &b.bits))
                }
            }
        }
        let meta = serde_json::json!({
            "kind": "compressed_index",
            "spec": self.spec,
            "dim_seed": self.seed,
            "extra": meta,
        });
        io::write_arrays(path, &arrays, meta)
    }
}

impl Scoring for CompressedPool {
    fn pool_size(&self) -> usize {
        self.views.values().next().map_or(0, CompressedView::rows)
    }

    fn score_row(&self, query: ViewSet, i: usize, target: ViewSet) -> Vec<f64> {
        match (&self.views[&query], &self.views[&target]) {
            (CompressedView::Float(q), CompressedView::Float(g))
            | (CompressedView::Int8 { dequantized: q, .. }, CompressedView::Int8 { dequantized: g, .. }) => {
                (0..g.rows()).map(|j| dot(q.row(i), g.row(j))).collect()
            }
            (CompressedView::Binary(q), CompressedView::Binary(g)) => {
                let qi = q.row(i);
                (0..g.rows).map(|j| g.similarity(qi, g.row(j)) as f64).collect()
            }
            _ => unreachable!("one spec compresses every view alike"),
        }
    }
}

/// Mean and sample standard deviation, accumulated in input order.
pub fn mean_std(values: impl IntoIterator<Item = f64>) -> (f64, f64) {
    let (mut n, mut mean, mut m2) = (0usize, 0.0, 0.0);
    for x in values {
        n += 1;
        let delta = x - mean;
        mean += delta / n as f64;
        m2 += delta * (x - mean);
    }
    let std = if n > 1 { (m2 / (n - 1) as f64).sqrt() } else { 0.0 };
    (mean, std)
}

/// Field-wise mean and std over reports with identical layout.
pub fn aggregate_reports(reports: &[RetrievalReport]) -> Result<(RetrievalReport, RetrievalReport)> {
    let first = reports
        .first()
        .ok_or_else(|| Error::InvalidArgument("no reports to aggregate".into()))?;
    for r in reports {
        let same_dirs = r.directions.len() == first.directions.len()
            && r.directions
                .iter()
                .zip(&first.directions)
                .all(|(a, b)| a.direction == b.direction);
        if !same_dirs || r.ks != first.ks {
            return Err(Error::InvalidArgument(
                "reports disagree on directions or recall cutoffs".into(),
            ));
        }
    }
    let stat = |pick: &dyn Fn(&RetrievalReport) -> f64| mean_std(reports.iter().map(pick));
    let mut mean = first.clone();
    let mut std = first.clone();
    for d in 0..first.directions.len() {
        for (ki, _) in first.ks.iter().enumerate() {
            let (mu, sd) = stat(&|r| r.directions[d].recall[ki]);
            mean.directions[d].recall[ki] = mu;
            std.directions[d].recall[ki] = sd;
        }
        (mean.directions[d].ndcg_at_10, std.directions[d].ndcg_at_10) = stat(&|r| r.directions[d].ndcg_at_10);
    }
    (mean.avg_single, std.avg_single) = stat(&|r| r.avg_single);
    (mean.avg_dual, std.avg_dual) = stat(&|r| r.avg_dual);
    (mean.avg_all, std.avg_all) = stat(&|r| r.avg_all);
    Ok((mean, std))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompressedReport {
    pub spec: CompressionSpec,
    pub dim: usize,
    pub code_bytes_per_vector: usize,
    pub dim_seeds: Vec<u64>,
    pub mean: RetrievalReport,
    pub std: RetrievalReport,
    pub per_seed: Vec<RetrievalReport>,
    /// All-zero rows met by int8 quantization, summed over views and seeds.
    pub zero_rows: usize,
}

/// Compresses and re-evaluates the pool once per dimension seed
/// (`spec.seed .. spec.seed + 5`), in parallel.
pub fn evaluate_compressed(pool: &PoolViews, spec: &CompressionSpec, ks: &[usize]) -> Result<CompressedReport> {
    let k = spec.output_dim(pool.dim())?;
    let seeds: Vec<u64> = (0..DIM_SEEDS as u64).map(|s| spec.seed + s).collect();
    let results = seeds
        .par_iter()
        .map(|&seed| {
            let compressed = compress_pool(pool, spec, seed)?;
            Ok((evaluate_scoring(&compressed, ks)?, compressed.zero_rows()))
        })
        .collect::<Result<Vec<_>>>()?;
    let zero_rows = results.iter().map(|r| r.1).sum();
    let per_seed: Vec<RetrievalReport> = results.into_iter().map(|r| r.0).collect();
    let (mean, std) = aggregate_reports(&per_seed)?;
    Ok(CompressedReport {
        spec: *spec,
        dim: k,
        code_bytes_per_vector: code_bytes_per_vector(spec.quantize, k),
        dim_seeds: seeds,
        mean,
        std,
        per_seed,
        zero_rows,
    })
}
