//! Loss-weight ablation: pairwise only, then distillation added, then the
//! tuple loss added, each trained for every configured seed and compared
//! against the untrained model.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::compress::mean_std;
use crate::config::RunConfig;
use crate::data::Corpus;
use crate::diagnostics::{pool_geometry, GeometryReport};
use crate::error::Result;
use crate::eval::{embed_pool, evaluate_scoring, RetrievalReport};
use crate::model::{init_params, ParameterSet};
use crate::report::{metrics_table, MetricsTable, TableRow};
use crate::trainer::{run_training, TrainRunRecord};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub name: &'static str,
    pub lambda_d: f64,
    pub lambda_t: f64,
    pub lambda_a: f64,
}

pub const VARIANTS: [Variant; 3] = [
    Variant {
        name: "pairwise",
        lambda_d: 0.0,
        lambda_t: 0.0,
        lambda_a: 1.0,
    },
    Variant {
        name: "distill+pairwise",
        lambda_d: 1.0,
        lambda_t: 0.0,
        lambda_a: 1.0,
    },
    Variant {
        name: "full",
        lambda_d: 1.0,
        lambda_t: 1.0,
        lambda_a: 1.0,
    },
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub report: RetrievalReport,
    pub geometry: GeometryReport,
}

#[derive(Clone, Debug)]
pub struct VariantOutcome {
    pub variant: Variant,
    pub seeds: Vec<SeedOutcome>,
    /// Full training records, in seed order.
    pub runs: Vec<TrainRunRecord>,
}

impl VariantOutcome {
    /// Mean and sample std of AVG-all across seeds.
    pub fn avg_all(&self) -> (f64, f64) {
        mean_std(self.seeds.iter().map(|s| s.report.avg_all))
    }
}

#[derive(Clone, Debug)]
pub struct AblationOutcome {
    pub untrained: Vec<SeedOutcome>,
    pub variants: Vec<VariantOutcome>,
}

/// Embeds and scores the eval split under `params`.
pub fn score_params(params: &ParameterSet, corpus: &Corpus, ks: &[usize]) -> Result<(RetrievalReport, GeometryReport)> {
    let pool = embed_pool(params, &corpus.eval)?;
    Ok((evaluate_scoring(&pool, ks)?, pool_geometry(&pool)?))
}

/// Trains every variant for every seed (in parallel) and scores them.
pub fn run_ablation(cfg: &RunConfig, corpus: &Corpus) -> Result<AblationOutcome> {
    cfg.validate()?;
    let ks = &cfg.eval.ks;
    let untrained = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let (model, _) = cfg.for_seed(seed);
            let (report, geometry) = score_params(&init_params(&model)?, corpus, ks)?;
            Ok(SeedOutcome { seed, report, geometry })
        })
        .collect::<Result<Vec<_>>>()?;

    let jobs: Vec<(usize, u64)> = (0..VARIANTS.len())
        .flat_map(|v| cfg.seeds.iter().map(move |&s| (v, s)))
        .collect();
    let results = jobs
        .par_iter()
        .map(|&(v, seed)| {
            let variant = VARIANTS[v];
            let (model, optim) = cfg.for_seed(seed);
            let loss = cfg
                .loss
                .clone()
                .with_weights(variant.lambda_d, variant.lambda_t, variant.lambda_a);
            let run = run_training(corpus, &model, &loss, &optim)?;
            let (report, geometry) = score_params(&run.params, corpus, ks)?;
            Ok((SeedOutcome { seed, report, geometry }, run))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut results = results.into_iter();
    let variants = VARIANTS
        .iter()
        .map(|&variant| {
            let (seeds, runs) = results.by_ref().take(cfg.seeds.len()).unzip();
            VariantOutcome { variant, seeds, runs }
        })
        .collect();
    Ok(AblationOutcome { untrained, variants })
}

/// One pass/fail ordering check between two rows of the ablation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderingCheck {
    pub lower: String,
    pub upper: String,
    pub lower_mean: f64,
    pub upper_mean: f64,
    /// Larger of the two across-seed standard deviations.
    pub std: f64,
    pub passed: bool,
}

fn ordering(lower: &str, l: (f64, f64), upper: &str, u: (f64, f64)) -> OrderingCheck {
    let std = l.1.max(u.1);
    OrderingCheck {
        lower: lower.into(),
        upper: upper.into(),
        lower_mean: l.0,
        upper_mean: u.0,
        std,
        passed: u.0 - l.0 > std,
    }
}

/// Per-seed geometry comparison for one trained variant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeometryCheck {
    pub variant: String,
    pub seed: u64,
    pub untrained_gap: f64,
    pub trained_gap: f64,
    pub passed: bool,
}

impl AblationOutcome {
    pub fn untrained_avg_all(&self) -> (f64, f64) {
        mean_std(self.untrained.iter().map(|s| s.report.avg_all))
    }

    pub fn variant(&self, name: &str) -> Option<&VariantOutcome> {
        self.variants.iter().find(|v| v.variant.name == name)
    }

    /// Untrained < pairwise < distill+pairwise, each by more than the
    /// larger seed std. The tuple-loss step is reported, not required.
    pub fn ordering_checks(&self) -> Vec<OrderingCheck> {
        let v = &self.variants;
        vec![
            ordering("untrained", self.untrained_avg_all(), v[0].variant.name, v[0].avg_all()),
            ordering(v[0].variant.name, v[0].avg_all(), v[1].variant.name, v[1].avg_all()),
        ]
    }

    /// Full minus distill+pairwise, for reporting only.
    pub fn tuple_loss_delta(&self) -> f64 {
        self.variants[2].avg_all().0 - self.variants[1].avg_all().0
    }

    /// For every trained variant and seed: the trained gap is positive and
    /// exceeds the untrained gap of the same seed.
    pub fn geometry_checks(&self) -> Vec<GeometryCheck> {
        let mut checks = Vec::new();
        for v in &self.variants {
            for (trained, base) in v.seeds.iter().zip(&self.untrained) {
                let (t, u) = (trained.geometry.gap, base.geometry.gap);
                checks.push(GeometryCheck {
                    variant: v.variant.name.into(),
                    seed: trained.seed,
                    untrained_gap: u,
                    trained_gap: t,
                    passed: t > 0.0 && t > u,
                });
            }
        }
        checks
    }

    /// Seed-mean R@1 rows, one per variant.
    pub fn variant_table(&self) -> Result<MetricsTable> {
        let mut table = MetricsTable {
            columns: crate::report::columns(),
            rows: Vec::new(),
            mean: None,
            std: None,
        };
        let groups = std::iter::once(("untrained", &self.untrained))
            .chain(self.variants.iter().map(|v| (v.variant.name, &v.seeds)));
        for (name, seeds) in groups {
            let reports: Vec<(String, &RetrievalReport)> = seeds
                .iter()
                .map(|s| (format!("{name}/{}", s.seed), &s.report))
                .collect();
            let per_seed = metrics_table(&reports)?;
            let values = match per_seed.mean {
                Some(mean) => mean.values,
                None => per_seed.rows[0].values.clone(),
            };
            table.rows.push(TableRow {
                label: name.into(),
                values,
            });
        }
        Ok(table)
    }

    /// Row-over-row differences of the seed means, starting from untrained.
    pub fn delta_table(&self) -> Result<MetricsTable> {
        let variants = self.variant_table()?;
        let rows = variants
            .rows
            .windows(2)
            .map(|w| TableRow {
                label: format!("{} - {}", w[1].label, w[0].label),
                values: w[1].values.iter().zip(&w[0].values).map(|(a, b)| a - b).collect(),
            })
            .collect();
        Ok(MetricsTable {
            columns: variants.columns,
            rows,
            mean: None,
            std: None,
        })
    }

    /// Everything but the parameter tensors, as JSON.
    pub fn summary_json(&self, cfg: &RunConfig) -> Result<serde_json::Value> {
        let variants: Vec<serde_json::Value> = self
            .variants
            .iter()
            .map(|v| {
                let (mean, std) = v.avg_all();
                serde_json::json!({
                    "variant": v.variant,
                    "avg_all_mean": mean,
                    "avg_all_std": std,
                    "seeds": v.seeds,
                })
            })
            .collect();
        let (u_mean, u_std) = self.untrained_avg_all();
        Ok(serde_json::json!({
            "kind": "ablation",
            "config": cfg,
            "untrained": { "avg_all_mean": u_mean, "avg_all_std": u_std, "seeds": self.untrained },
            "variants": variants,
            "table": self.variant_table()?,
            "deltas": self.delta_table()?,
            "ordering_checks": self.ordering_checks(),
            "geometry_checks": self.geometry_checks(),
            "tuple_loss_delta": self.tuple_loss_delta(),
        }))
    }
}
