//! Acceptance suite: one pass/fail line per criterion, non-zero exit if
//! any criterion fails. Runs with a custom harness so the lines always
//! show up in `cargo test` output.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use trimodal::ablation::{run_ablation, AblationOutcome};
use trimodal::compress::{
    compress_pool, evaluate_compressed, quantize_int8, CompressionSpec, DimSelect, Quantize, DIM_SEEDS,
};
use trimodal::config::RunConfig;
use trimodal::data::{generate_corpus, Corpus, GenConfig, TripleBatch};
use trimodal::diagnostics::{attractor_from_targets, attractor_report, top1_targets};
use trimodal::eval::{embed_pool, evaluate_benchmark, evaluate_scoring, ndcg_at_10, Direction, PoolViews, POOL_VIEWS};
use trimodal::gradcheck::{run_suite, CheckTarget, SuiteSettings};
use trimodal::model::{init_params, write_checkpoint, ModelConfig, ModelGraph, ParameterSet};
use trimodal::objectives::{loss_ld, loss_lt, sample_derangement, BatchEmbeddings, HardNegativePlan, LossConfig};
use trimodal::trainer::{loss_and_gradients, run_training, OptimizerConfig, OptimizerKind};
use trimodal::{Modality, Tensor};

type Verdict = Result<String, String>;
type SharedCheck = fn(&EndToEnd) -> Verdict;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| Distribution::<f64>::sample(&StandardNormal, rng))
        .collect();
    Tensor::matrix(rows, cols, data).expect("shape")
}

// 1
fn gradient_correctness() -> Verdict {
    let started = Instant::now();
    let settings = SuiteSettings::default();
    ensure(
        settings.batch_size == 4 && settings.embed_dim == 8 && settings.tau == 0.5 && settings.instances == 20,
        || format!("unexpected suite settings {settings:?}"),
    )?;
    let report = run_suite(&settings).map_err(|e| e.to_string())?;
    let elapsed = started.elapsed();
    let mut parts = Vec::new();
    for target in CheckTarget::OBJECTIVES {
        let t = report
            .targets
            .iter()
            .find(|t| t.target == target)
            .ok_or_else(|| format!("{target:?} missing"))?;
        ensure(t.instances == 20, || {
            format!("{target:?} ran {} instances", t.instances)
        })?;
        ensure(t.max_rel_error <= 1e-4, || {
            format!("{target:?} max rel error {:.3e}", t.max_rel_error)
        })?;
        parts.push(format!("{:?} {:.1e}", target, t.max_rel_error));
    }
    ensure(elapsed < Duration::from_secs(120), || format!("took {elapsed:?}"))?;
    Ok(format!("{} ({:.1}s)", parts.join(", "), elapsed.as_secs_f64()))
}

// 2
fn stop_gradient_isolation() -> Verdict {
    let cfg = ModelConfig::default();
    let mut checked = 0;
    for batch in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + batch);
        let params = init_params(&ModelConfig {
            seed: batch,
            ..cfg.clone()
        })
        .map_err(|e| e.to_string())?;
        let b = 8;
        let x = [0, 1, 2].map(|_| normal_matrix(&mut rng, b, 16));
        let mut mg = ModelGraph::new(&cfg);
        let inputs: Vec<_> = Modality::ALL
            .iter()
            .map(|&m| (m, mg.input(m, &x[m.index()]).expect("width")))
            .collect();
        let single = [0, 1, 2].map(|i| mg.encode_modality(inputs[i].0, inputs[i].1));
        let joint = mg.encode_subset(&inputs).map_err(|e| e.to_string())?;
        let be = BatchEmbeddings { single, joint };
        let ld = loss_ld(&mut mg.graph, &be, &LossConfig::default());
        mg.graph.evaluate(ld, &params).map_err(|e| e.to_string())?;
        let grads = mg.graph.backprop(ld).map_err(|e| e.to_string())?;
        for name in params.fusion_names() {
            let zero = grads.get(name).is_none_or(|g| g.data().iter().all(|&v| v == 0.0));
            ensure(zero, || format!("batch {batch}: {name} has nonzero gradient"))?;
            checked += 1;
        }
        let encoder_moves = grads
            .iter()
            .filter(|(n, _)| !ParameterSet::is_fusion(n))
            .any(|(_, g)| g.data().iter().any(|&v| v != 0.0));
        ensure(encoder_moves, || format!("batch {batch}: encoders got no gradient"))?;

        // same through the training step with only the distillation weight on
        let tb = TripleBatch {
            ids: (0..b as u64).collect(),
            x: x.clone(),
        };
        let plan = HardNegativePlan::draw(batch, b, &mut rng).map_err(|e| e.to_string())?;
        let only_ld = LossConfig {
            lambda_d: 1.0,
            lambda_t: 0.0,
            lambda_a: 0.0,
            ..LossConfig::default()
        };
        let step = loss_and_gradients(&params, &tb, &plan, &only_ld).map_err(|e| e.to_string())?;
        for name in params.fusion_names() {
            let zero = step.grads.get(name).is_none_or(|g| g.data().iter().all(|&v| v == 0.0));
            ensure(zero, || format!("batch {batch}: training step moves {name}"))?;
        }
    }
    Ok(format!("{checked} fusion tensors exactly zero across 10 batches"))
}

// 3
fn derangement_and_cycle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10_000 {
        let n = rng.random_range(2..=64);
        let sigma = sample_derangement(n, &mut rng).map_err(|e| e.to_string())?;
        let mut seen = vec![false; n];
        for (i, &s) in sigma.iter().enumerate() {
            ensure(s != i, || format!("fixed point in {sigma:?}"))?;
            ensure(!seen[s], || format!("{sigma:?} is not a permutation"))?;
            seen[s] = true;
        }
    }
    let draws = 10_000;
    let mut counts: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
    for _ in 0..draws {
        *counts
            .entry(sample_derangement(3, &mut rng).map_err(|e| e.to_string())?)
            .or_default() += 1;
    }
    ensure(counts.len() == 2, || {
        format!("B=3 gave {} distinct derangements", counts.len())
    })?;
    let sigma = (0.25 / draws as f64).sqrt();
    let mut freqs = Vec::new();
    for (perm, c) in &counts {
        let f = *c as f64 / draws as f64;
        ensure((f - 0.5).abs() <= 3.0 * sigma, || format!("{perm:?} frequency {f}"))?;
        freqs.push(format!("{f:.4}"));
    }
    let planned: String = (0..9u64)
        .map(|t| {
            HardNegativePlan::draw(t, 4, &mut rng)
                .map(|p| p.slot.code())
                .unwrap_or('?')
        })
        .collect();
    // also through the training loop, across epoch boundaries
    let corpus = generate_corpus(&GenConfig {
        n_train: 8,
        n_eval: 2,
        latent_dim: 2,
        input_dim: [3, 3, 3],
        ..GenConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let run = run_training(
        &corpus,
        &ModelConfig {
            input_dim: [3, 3, 3],
            hidden_dim: 4,
            embed_dim: 4,
            ..ModelConfig::default()
        },
        &LossConfig::default(),
        &OptimizerConfig {
            kind: OptimizerKind::Sgd,
            lr: 0.01,
            steps: 9,
            batch_size: 4,
            ..OptimizerConfig::default()
        },
    )
    .map_err(|e| e.to_string())?;
    let trained: String = run.history.iter().map(|r| r.slot.code()).collect();
    ensure(planned == "tvatvatva" && trained == "tvatvatva", || {
        format!("slot sequences {planned} / {trained}")
    })?;
    Ok(format!(
        "10^4 derangements fixed-point free; B=3 frequencies {}; slots {trained}",
        freqs.join("/")
    ))
}

// 4
fn loss_formula_oracles() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for inst in 0..50 {
        let b = rng.random_range(2..=6);
        let d = rng.random_range(2..=8);
        let tau = rng.random_range(0.05..1.0);
        let tau_t = rng.random_range(0.05..1.0);
        let z = [0, 1, 2].map(|_| random_unit_rows(&mut rng, b, d));
        let joint = random_unit_rows(&mut rng, b, d);
        let step = rng.random_range(0..3u64);
        let plan = HardNegativePlan::draw(step, b, &mut rng).map_err(|e| e.to_string())?;
        let cfg = LossConfig {
            tau,
            tau_t,
            ..LossConfig::default()
        };
        let lib = library_losses(&z, &joint, &plan, &cfg);
        let mut diffs = vec![
            (
                "infonce",
                (library_infonce(&z[0], &z[2], tau) - infonce(&z[0], &z[2], tau)).abs(),
            ),
            ("pairwise", (lib.la - loss_pairwise(&z, tau)).abs()),
            (
                "tuple",
                (lib.lt - loss_tuple(&z, plan.slot.index(), &plan.sigma, tau_t)).abs(),
            ),
        ];
        let grid = similarity_grid(&z);
        let mut grid_err: f64 = 0.0;
        for i in 0..b {
            for j in 0..b {
                grid_err = grid_err.max((lib.grid[i][j] - grid[i][j]).abs());
            }
            let hard = tuple_similarity(tuple(&z, i), perturbed(&z, i, plan.slot.index(), &plan.sigma));
            grid_err = grid_err.max((lib.hard[i] - hard).abs());
        }
        diffs.push(("joint similarity", grid_err));
        for (name, diff) in diffs {
            ensure(diff <= 1e-10, || {
                format!("instance {inst}: {name} differs by {diff:.3e}")
            })?;
            worst = worst.max(diff);
        }
    }
    Ok(format!("50 instances, worst deviation {worst:.1e}"))
}

// 5
fn closed_form_values() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let single = random_unit_rows(&mut rng, 1, 6);
    let other = random_unit_rows(&mut rng, 1, 6);
    let b1 = library_infonce(&single, &other, 0.07);
    ensure(b1 == 0.0, || format!("B=1 InfoNCE {b1}"))?;
    let same = vec![vec![0.6, 0.8]; 2];
    let z = [same.clone(), same.clone(), same.clone()];
    let plan = HardNegativePlan {
        step: 0,
        slot: Modality::Text,
        sigma: vec![1, 0],
    };
    let lt = library_losses(&z, &same, &plan, &LossConfig::default()).lt;
    ensure((lt - 3f64.ln()).abs() <= 1e-10, || format!("identical-tuple loss {lt}"))?;
    let ndcg = [1, 3, 11].map(|r| ndcg_at_10(r).expect("rank >= 1"));
    ensure(ndcg == [1.0, 0.5, 0.0], || format!("NDCG@10 {ndcg:?}"))?;
    Ok(format!(
        "B=1 InfoNCE {b1}, identical-tuple loss - ln 3 = {:.1e}, NDCG {ndcg:?}",
        lt - 3f64.ln()
    ))
}

// 6
fn retrieval_oracle() -> Verdict {
    ensure(Direction::enumerate().len() == 12, || "direction count".into())?;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let ks = [1, 5, 10];
    let mut tied_pools = 0;
    for p in 0..50 {
        let n = rng.random_range(10..=64);
        let tied = p % 2 == 0;
        tied_pools += usize::from(tied);
        let d = rng.random_range(2..=16);
        let pool = Pool::random(&mut rng, n, d, tied);
        let report = evaluate_scoring(&pool.library(), &ks).map_err(|e| e.to_string())?;
        ensure(report.directions.len() == 12, || "report width".into())?;
        for m in &report.directions {
            let (recall, ndcg) =
                direction_metrics(&pool.views[&m.direction.query], &pool.views[&m.direction.target], &ks);
            ensure(m.recall == recall && m.ndcg_at_10 == ndcg, || {
                format!(
                    "pool {p} {}: {:?}/{} vs {:?}/{}",
                    m.direction, m.recall, m.ndcg_at_10, recall, ndcg
                )
            })?;
        }
    }
    // the same comparison through model embedding
    let corpus = generate_corpus(&GenConfig {
        n_train: 10,
        n_eval: 48,
        ..GenConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let params = init_params(&ModelConfig::default()).map_err(|e| e.to_string())?;
    let pool = embed_pool(&params, &corpus.eval).map_err(|e| e.to_string())?;
    let report = evaluate_benchmark(&params, &corpus.eval, &ks).map_err(|e| e.to_string())?;
    for m in &report.directions {
        let (recall, ndcg) = direction_metrics(
            &rows_of(pool.get(m.direction.query).expect("view")),
            &rows_of(pool.get(m.direction.target).expect("view")),
            &ks,
        );
        ensure(m.recall == recall && m.ndcg_at_10 == ndcg, || {
            format!("model pool {}: mismatch", m.direction)
        })?;
    }
    Ok(format!(
        "50 pools ({tied_pools} tie-heavy) + 1 model pool exact; 12 directions"
    ))
}

// 7
fn slack_modality_targeting() -> Verdict {
    let cfg = ModelConfig::default();
    let b = 8;
    let mut wins = 0;
    let mut ratios = Vec::new();
    for c in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(7000 + c);
        let base = init_params(&ModelConfig { seed: c, ..cfg.clone() }).map_err(|e| e.to_string())?;
        // video encoder := text encoder, so T and V embed identically
        let mut tensors = base.tensors().clone();
        for (name, t) in base.tensors() {
            if let Some(rest) = name.strip_prefix("t.") {
                tensors.insert(format!("v.{rest}"), t.clone());
            }
        }
        let params = ParameterSet::from_tensors(cfg.clone(), tensors).map_err(|e| e.to_string())?;
        let x_tv = normal_matrix(&mut rng, b, 16);
        let x_a = normal_matrix(&mut rng, b, 16);
        let mut mg = ModelGraph::new(&cfg);
        let it = mg.input(Modality::Text, &x_tv).map_err(|e| e.to_string())?;
        let iv = mg.input(Modality::Video, &x_tv).map_err(|e| e.to_string())?;
        let ia = mg.input(Modality::Audio, &x_a).map_err(|e| e.to_string())?;
        let single = [
            mg.encode_modality(Modality::Text, it),
            mg.encode_modality(Modality::Video, iv),
            mg.encode_modality(Modality::Audio, ia),
        ];
        let be = BatchEmbeddings {
            single,
            joint: single[0],
        };
        let plan = HardNegativePlan::draw(2, b, &mut rng).map_err(|e| e.to_string())?;
        ensure(plan.slot == Modality::Audio, || "step 2 must shuffle audio".into())?;
        let lt = loss_lt(&mut mg.graph, &be, &plan, &LossConfig::default()).map_err(|e| e.to_string())?;
        mg.graph.evaluate(lt, &params).map_err(|e| e.to_string())?;
        let grads = mg.graph.backprop(lt).map_err(|e| e.to_string())?;
        let norm = |m: Modality| {
            params
                .encoder_names(m)
                .iter()
                .filter_map(|n| grads.get(*n))
                .flat_map(|g| g.data().iter())
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt()
        };
        let (t, v, a) = (norm(Modality::Text), norm(Modality::Video), norm(Modality::Audio));
        if a > t && a > v {
            wins += 1;
        }
        ratios.push(a / t.max(v));
    }
    ensure(wins >= 18, || format!("audio largest in {wins}/20"))?;
    let min = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(format!("audio gradient largest in {wins}/20 (min ratio {min:.2})"))
}

struct EndToEnd {
    cfg: RunConfig,
    corpus: Corpus,
    outcome: AblationOutcome,
    elapsed: Duration,
}

// 8
fn directional_ablation(e2e: &EndToEnd) -> Verdict {
    ensure(e2e.cfg.seeds == [42, 43, 44], || "seeds".into())?;
    ensure(
        e2e.corpus.train.len() == 2048 && e2e.corpus.eval.len() == 256 && e2e.cfg.model.embed_dim == 32,
        || "regime".into(),
    )?;
    let mut parts = Vec::new();
    let mut failed = Vec::new();
    for c in e2e.outcome.ordering_checks() {
        parts.push(format!(
            "{} {:.2} < {} {:.2} (std {:.2})",
            c.lower, c.lower_mean, c.upper, c.upper_mean, c.std
        ));
        if !c.passed {
            failed.push(format!("{} vs {}", c.lower, c.upper));
        }
    }
    let delta = e2e.outcome.tuple_loss_delta();
    ensure(e2e.elapsed < Duration::from_secs(900), || {
        format!("took {:?}", e2e.elapsed)
    })?;
    ensure(failed.is_empty(), || {
        format!("ordering failed: {}; {}", failed.join(", "), parts.join("; "))
    })?;
    Ok(format!(
        "{}; tuple-loss delta {delta:+.2} (reported); {:.0}s",
        parts.join("; "),
        e2e.elapsed.as_secs_f64()
    ))
}

// 9
fn geometry_gap(e2e: &EndToEnd) -> Verdict {
    let checks = e2e.outcome.geometry_checks();
    ensure(checks.len() == 9, || format!("{} geometry checks", checks.len()))?;
    let failed: Vec<String> = checks
        .iter()
        .filter(|c| !c.passed)
        .map(|c| {
            format!(
                "{}/{}: {:.4} vs {:.4}",
                c.variant, c.seed, c.trained_gap, c.untrained_gap
            )
        })
        .collect();
    ensure(failed.is_empty(), || failed.join("; "))?;
    let full: Vec<String> = checks
        .iter()
        .filter(|c| c.variant == "full")
        .map(|c| format!("{}: {:+.3} -> {:+.3}", c.seed, c.untrained_gap, c.trained_gap))
        .collect();
    Ok(format!(
        "all 9 trained runs widen the gap; full model {}",
        full.join(", ")
    ))
}

// 10
fn compression_pipeline(e2e: &EndToEnd) -> Verdict {
    let full = e2e.outcome.variant("full").ok_or("full variant missing")?;
    let pool = embed_pool(&full.runs[0].params, &e2e.corpus.eval).map_err(|e| e.to_string())?;
    let ks = &e2e.cfg.eval.ks;

    // (a)
    let plain = evaluate_scoring(&pool, ks).map_err(|e| e.to_string())?;
    let none = evaluate_compressed(&pool, &CompressionSpec::none(), ks).map_err(|e| e.to_string())?;
    let a = serde_json::to_vec(&plain).expect("json") == serde_json::to_vec(&none.mean).expect("json");
    ensure(a, || "(none, fp32) report differs from uncompressed".into())?;

    // (b)
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let rows = 10_000;
    let mut x = normal_matrix(&mut rng, rows, 32);
    for i in 0..rows {
        let scale = 10f64.powf(rng.random_range(-3.0..3.0));
        for v in x.row_mut(i) {
            *v *= scale;
        }
    }
    let codes = quantize_int8(&x).map_err(|e| e.to_string())?;
    let back = codes.dequantize();
    let mut worst: f64 = 0.0;
    for i in 0..rows {
        let s = codes.scales[i];
        for (orig, rec) in x.row(i).iter().zip(back.row(i)) {
            let err = (orig - rec).abs();
            ensure(err <= s / 2.0, || format!("row {i}: error {err} > scale/2 {}", s / 2.0))?;
            worst = worst.max(err / s);
        }
    }

    // (c)
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let wide = PoolViews::from_views(POOL_VIEWS.map(|v| (v, to_set(&random_unit_rows(&mut rng, 2, 1024)))))
        .map_err(|e| e.to_string())?;
    let mut sizes = Vec::new();
    for (quantize, k, suffix, expect) in [
        (Quantize::Int8, 1024, "codes", 1024),
        (Quantize::Binary, 512, "bits", 64),
    ] {
        let spec = CompressionSpec {
            dims: DimSelect::Random { k },
            quantize,
            seed: 0,
        };
        let manifest = compress_pool(&wide, &spec, 0)
            .and_then(|c| c.write_index(&dir.path().join(format!("{k}.json")), serde_json::Value::Null))
            .map_err(|e| e.to_string())?;
        let entry = manifest
            .arrays
            .iter()
            .find(|e| e.name == format!("t.{suffix}"))
            .ok_or("code array missing")?;
        let per_vector = entry.byte_len() / entry.shape[0];
        ensure(per_vector == expect, || {
            format!("{quantize:?}/{k}: {per_vector} bytes per vector")
        })?;
        sizes.push(format!("{quantize:?}/{k} = {per_vector} B"));
    }

    // (d)
    let spec = CompressionSpec {
        dims: DimSelect::Random { k: 16 },
        quantize: Quantize::Int8,
        seed: 0,
    };
    let comp = evaluate_compressed(&pool, &spec, ks).map_err(|e| e.to_string())?;
    let distinct: std::collections::BTreeSet<_> = comp.dim_seeds.iter().collect();
    ensure(
        DIM_SEEDS == 5 && comp.per_seed.len() == 5 && distinct.len() == 5,
        || format!("{} dim seeds", comp.per_seed.len()),
    )?;
    let mean_all = comp.per_seed.iter().map(|r| r.avg_all).sum::<f64>() / 5.0;
    ensure((mean_all - comp.mean.avg_all).abs() < 1e-12, || {
        "mean over seeds".into()
    })?;
    Ok(format!(
        "none/fp32 byte-identical; int8 worst error {worst:.3}·scale over 10^4 rows; {}; random-16-int8 over 5 seeds: {:.2} ± {:.2}",
        sizes.join(", "),
        comp.mean.avg_all,
        comp.std.avg_all
    ))
}

// 11
fn attractor_null() -> Verdict {
    let n = 256;
    let (expect, sigma) = coverage_null(n);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let pool = Pool::random(&mut rng, n, 32, false).library();
    let mut lo: f64 = 1.0;
    let mut hi: f64 = 0.0;
    for d in Direction::ALL {
        let r = attractor_report(&pool, d, 3).map_err(|e| e.to_string())?;
        let c = r.top1_coverage_fraction;
        ensure((c - expect).abs() <= 3.0 * sigma, || {
            format!("{d}: coverage {c:.4}, expected {expect:.4} ± {:.4}", 3.0 * sigma)
        })?;
        lo = lo.min(c);
        hi = hi.max(c);
    }
    // collapsed gallery: every query's best match is gallery row 0
    let mut views: BTreeMap<_, _> = POOL_VIEWS
        .iter()
        .map(|&v| (v, random_unit_rows(&mut rng, n, 32)))
        .collect();
    let hub = views[&trimodal::ViewSet::T][0].clone();
    for row in views.get_mut(&trimodal::ViewSet::V).expect("view") {
        *row = hub.clone();
    }
    let collapsed = Pool { views }.library();
    let d = Direction::ALL[1]; // v -> t
    let targets = top1_targets(&collapsed, d);
    let r = attractor_from_targets(d, &targets, 1).map_err(|e| e.to_string())?;
    ensure(r.topk_mass == 1.0, || format!("collapsed top-1 mass {}", r.topk_mass))?;
    Ok(format!(
        "coverage {lo:.3}..{hi:.3} within {expect:.3} ± {:.3} on all 12 directions; collapsed top-1 mass {}, coverage {:.4}",
        3.0 * sigma,
        r.topk_mass,
        r.top1_coverage_fraction
    ))
}

// 12
fn determinism(e2e: &EndToEnd) -> Verdict {
    let full = e2e.outcome.variant("full").ok_or("full variant missing")?;
    let first = &full.runs[0];
    let (model, optim) = e2e.cfg.for_seed(42);
    ensure(first.optim.seed == 42, || "first run is not seed 42".into())?;
    let again = run_training(&e2e.corpus, &model, &e2e.cfg.loss, &optim).map_err(|e| e.to_string())?;
    ensure(first.history_csv() == again.history_csv(), || {
        "history CSV differs".into()
    })?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut bytes = Vec::new();
    for (name, run) in [("a", first), ("b", &again)] {
        // same file name in separate directories: the manifest records the blob name
        let sub = dir.path().join(name);
        std::fs::create_dir(&sub).map_err(|e| e.to_string())?;
        let path = sub.join("checkpoint.json");
        write_checkpoint(&path, &run.params, serde_json::Value::Null).map_err(|e| e.to_string())?;
        let blob = std::fs::read(trimodal::io::blob_path(&path)).map_err(|e| e.to_string())?;
        let manifest = std::fs::read(&path).map_err(|e| e.to_string())?;
        bytes.push((blob, manifest));
    }
    ensure(bytes[0] == bytes[1], || "checkpoint bytes differ".into())?;
    // the checkpoint loses nothing relative to the in-memory parameters
    let reread =
        trimodal::model::read_checkpoint(&dir.path().join("a").join("checkpoint.json")).map_err(|e| e.to_string())?;
    let max_diff = reread
        .iter()
        .map(|(n, t)| {
            t.max_abs_diff(first.params.get(n).expect("same layout"))
                .expect("same shape")
        })
        .fold(0.0, f64::max);
    Ok(format!(
        "history ({} rows) and checkpoint ({} bytes) identical; f32 checkpoint deviation {max_diff:.1e}",
        again.history.len(),
        bytes[0].0.len()
    ))
}

fn run_criterion(id: u32, name: &str, f: impl FnOnce() -> Verdict) -> bool {
    let started = Instant::now();
    let verdict = match catch_unwind(AssertUnwindSafe(f)) {
        Ok(v) => v,
        Err(panic) => Err(panic
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into())),
    };
    let secs = started.elapsed().as_secs_f64();
    match &verdict {
        Ok(detail) => println!("criterion {id:>2} PASS {name}: {detail} [{secs:.1}s]"),
        Err(detail) => println!("criterion {id:>2} FAIL {name}: {detail} [{secs:.1}s]"),
    }
    verdict.is_ok()
}

fn end_to_end() -> Result<EndToEnd, String> {
    let started = Instant::now();
    let cfg = RunConfig::default();
    let corpus = generate_corpus(&cfg.gen).map_err(|e| e.to_string())?;
    let outcome = run_ablation(&cfg, &corpus).map_err(|e| e.to_string())?;
    Ok(EndToEnd {
        cfg,
        corpus,
        outcome,
        elapsed: started.elapsed(),
    })
}

fn main() -> ExitCode {
    // `cargo test -- --list` and similar harness probes
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return ExitCode::SUCCESS;
    }
    println!("running acceptance criteria");
    let mut passed = vec![
        run_criterion(1, "gradient correctness", gradient_correctness),
        run_criterion(2, "stop-gradient isolation", stop_gradient_isolation),
        run_criterion(3, "derangements and slot cycle", derangement_and_cycle),
        run_criterion(4, "loss formula oracles", loss_formula_oracles),
        run_criterion(5, "closed-form values", closed_form_values),
        run_criterion(6, "retrieval oracle", retrieval_oracle),
        run_criterion(7, "slack-modality gradient", slack_modality_targeting),
    ];

    let e2e = catch_unwind(end_to_end).unwrap_or_else(|_| Err("end-to-end run panicked".into()));
    let shared: [(u32, &str, SharedCheck); 4] = [
        (8, "end-to-end ablation ordering", directional_ablation),
        (9, "triple-cosine gap", geometry_gap),
        (10, "compression pipeline", compression_pipeline),
        (12, "determinism", determinism),
    ];
    for (id, name, f) in shared {
        if id == 12 {
            passed.push(run_criterion(11, "attractor null", attractor_null));
        }
        passed.push(match &e2e {
            Ok(run) => run_criterion(id, name, || f(run)),
            Err(e) => run_criterion(id, name, || Err(format!("end-to-end run failed: {e}"))),
        });
    }

    let failures = passed.iter().filter(|p| !**p).count();
    println!(
        "acceptance: {} of {} criteria passed",
        passed.len() - failures,
        passed.len()
    );
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
