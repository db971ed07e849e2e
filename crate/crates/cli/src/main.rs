//! `trimodal` command line: gen-data → train → eval → compress → diagnose,
//! plus the loss ablation and the gradient-check suite.
//!
//! Exit codes: 0 success, 1 usage, 2 runtime failure, 3 failed check
//! (`grad-check`, `ablate --check`). Failures print one line,
//! `error[<kind>]: <message>`, on stderr. Rayon honours
//! `RAYON_NUM_THREADS` for the thread count.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use trimodal::ablation::run_ablation;
use trimodal::compress::compress_pool;
use trimodal::compress::evaluate_compressed;
use trimodal::config::RunConfig;
use trimodal::data::{generate_corpus, read_corpus, write_corpus, Corpus};
use trimodal::diagnostics::{attractor_report, pool_geometry};
use trimodal::eval::{embed_pool, evaluate_scoring};
use trimodal::gradcheck::{run_suite, SuiteSettings};
use trimodal::io::{self, Manifest};
use trimodal::model::read_checkpoint;
use trimodal::report::metrics_table;
use trimodal::trainer::run_training;
use trimodal::Error;

// Writes to stdout, ignoring a closed pipe (e.g. `| head`).
macro_rules! say {
    ($($arg:tt)*) => {{
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

macro_rules! say_raw {
    ($($arg:tt)*) => {{
        let _ = write!(std::io::stdout(), $($arg)*);
    }};
}

#[derive(Parser)]
#[command(name = "trimodal", version, about = "Tri-modal contrastive retrieval at desk scale")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> Result<RunConfig, Failure> {
        Ok(match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        })
    }
}

#[derive(Args)]
struct ModelInputs {
    /// Corpus manifest written by `gen-data`.
    #[arg(long)]
    corpus: PathBuf,
    /// Checkpoint manifest written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus.
    GenData {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model; writes checkpoint, history.csv and manifest.json.
    Train {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Training seed; defaults to the first configured seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides `optim.steps`.
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Score all 12 retrieval directions on the eval split.
    Eval {
        #[command(flatten)]
        config: ConfigArg,
        #[command(flatten)]
        inputs: ModelInputs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-evaluate under each configured compression spec.
    Compress {
        #[command(flatten)]
        config: ConfigArg,
        #[command(flatten)]
        inputs: ModelInputs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Triple-cosine geometry and attractor concentration.
    Diagnose {
        #[command(flatten)]
        config: ConfigArg,
        #[command(flatten)]
        inputs: ModelInputs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train every loss variant for every seed and tabulate.
    Ablate {
        #[command(flatten)]
        config: ConfigArg,
        /// Corpus manifest; generated from the config when omitted.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Exit 3 unless the variant ordering and geometry checks pass.
        #[arg(long)]
        check: bool,
    },
    /// Finite-difference check of every objective; exit 3 above tolerance.
    GradCheck {
        #[arg(long, default_value_t = 20)]
        instances: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        /// Also write the suite report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum Failure {
    Runtime(Error),
    Check(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Runtime(e)) => {
            eprintln!("error[{}]: {}", e.kind(), single_line(&e.to_string()));
            ExitCode::from(2)
        }
        Err(Failure::Check(msg)) => {
            eprintln!("error[check_failed]: {}", single_line(&msg));
            ExitCode::from(3)
        }
    }
}

fn single_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::GenData { config, out } => {
            let cfg = config.load()?;
            let corpus = generate_corpus(&cfg.gen)?;
            let manifest = write_corpus(&out, &corpus)?;
            say!(
                "wrote {} ({} train, {} eval, sha256 {})",
                out.display(),
                corpus.train.len(),
                corpus.eval.len(),
                manifest.sha256
            );
        }
        Command::Train {
            config,
            corpus,
            out,
            seed,
            steps,
        } => {
            let mut cfg = config.load()?;
            if let Some(steps) = steps {
                cfg.optim.steps = steps;
            }
            let seed = seed.unwrap_or(cfg.seeds[0]);
            let (data, corpus_manifest) = read_corpus(&corpus)?;
            check_corpus(&cfg, &data)?;
            let (model, optim) = cfg.for_seed(seed);
            let record = run_training(&data, &model, &cfg.loss, &optim)?;
            staged(&out, |dir| {
                record.write_artifacts(
                    dir,
                    json!({
                        "seed": seed,
                        "corpus_sha256": corpus_manifest.sha256,
                        "config": cfg,
                    }),
                )
            })?;
            if let Some(last) = record.history.last() {
                let l = last.losses;
                say!(
                    "trained {} steps: l_a {:.4} l_d {:.4} l_t {:.4} total {:.4}",
                    record.history.len(),
                    l.la,
                    l.ld,
                    l.lt,
                    l.total
                );
            }
            say!("wrote {}", out.display());
        }
        Command::Eval { config, inputs, out } => {
            let cfg = config.load()?;
            let loaded = load_inputs(&inputs)?;
            let pool = embed_pool(&loaded.params, &loaded.corpus.eval)?;
            let report = evaluate_scoring(&pool, &cfg.eval.ks)?;
            io::write_json(
                &out,
                &json!({
                    "kind": "retrieval_report",
                    "report": report,
                    "seed": loaded.params.config().seed,
                    "provenance": loaded.provenance(),
                    "config": cfg,
                }),
            )?;
            say_raw!("{}", metrics_table(&[("eval".into(), &report)])?.render());
            say!("wrote {}", out.display());
        }
        Command::Compress { config, inputs, out } => {
            let cfg = config.load()?;
            let loaded = load_inputs(&inputs)?;
            let pool = embed_pool(&loaded.params, &loaded.corpus.eval)?;
            staged(&out, |dir| {
                let mut rows = Vec::new();
                for spec in &cfg.compress {
                    let label = spec.label();
                    let report = evaluate_compressed(&pool, spec, &cfg.eval.ks)?;
                    compress_pool(&pool, spec, spec.seed)?
                        .write_index(&dir.join(format!("{label}.index.json")), loaded.provenance())?;
                    io::write_json(
                        &dir.join(format!("{label}.json")),
                        &json!({
                            "kind": "compressed_report",
                            "report": report,
                            "seed": loaded.params.config().seed,
                            "provenance": loaded.provenance(),
                        }),
                    )?;
                    rows.push((label, report.mean));
                }
                let table_rows: Vec<(String, &_)> = rows.iter().map(|(l, r)| (l.clone(), r)).collect();
                let table = metrics_table(&table_rows)?;
                io::atomic_write(&dir.join("table.txt"), table.render().as_bytes())?;
                say_raw!("{}", table.render());
                Ok(())
            })?;
            say!("wrote {}", out.display());
        }
        Command::Diagnose { config, inputs, out } => {
            let cfg = config.load()?;
            let loaded = load_inputs(&inputs)?;
            let pool = embed_pool(&loaded.params, &loaded.corpus.eval)?;
            let geometry = pool_geometry(&pool)?;
            let attractors = cfg
                .diagnose
                .attractor_directions
                .iter()
                .map(|&d| attractor_report(&pool, d, cfg.diagnose.attractor_k))
                .collect::<Result<Vec<_>, _>>()?;
            staged(&out, |dir| {
                io::write_json(
                    &dir.join("geometry.json"),
                    &json!({
                        "kind": "geometry",
                        "geometry": geometry,
                        "provenance": loaded.provenance(),
                    }),
                )?;
                io::write_json(
                    &dir.join("attractors.json"),
                    &json!({
                        "kind": "attractors",
                        "attractors": attractors,
                        "provenance": loaded.provenance(),
                    }),
                )
            })?;
            say!(
                "intra {:.4} inter {:.4} gap {:.4}",
                geometry.intra_mean,
                geometry.inter_mean,
                geometry.gap
            );
            for a in &attractors {
                say!(
                    "{:<6} coverage {:.3} top{} mass {:.3}",
                    a.direction.label(),
                    a.top1_coverage_fraction,
                    a.k,
                    a.topk_mass
                );
            }
            say!("wrote {}", out.display());
        }
        Command::Ablate {
            config,
            corpus,
            out,
            check,
        } => {
            let cfg = config.load()?;
            let data = match &corpus {
                Some(path) => read_corpus(path)?.0,
                None => generate_corpus(&cfg.gen)?,
            };
            check_corpus(&cfg, &data)?;
            let outcome = run_ablation(&cfg, &data)?;
            let table = outcome.variant_table()?;
            let deltas = outcome.delta_table()?;
            let text = format!("{}\n{}", table.render(), deltas.render());
            staged(&out, |dir| {
                io::write_json(&dir.join("ablation.json"), &outcome.summary_json(&cfg)?)?;
                io::atomic_write(&dir.join("table.txt"), text.as_bytes())
            })?;
            say_raw!("{text}");
            let mut failed = Vec::new();
            for c in outcome.ordering_checks() {
                say!(
                    "{} {:.2} < {} {:.2} (std {:.2}): {}",
                    c.lower,
                    c.lower_mean,
                    c.upper,
                    c.upper_mean,
                    c.std,
                    if c.passed { "ok" } else { "FAILED" }
                );
                if !c.passed {
                    failed.push(format!("{} not above {}", c.upper, c.lower));
                }
            }
            for c in outcome.geometry_checks() {
                if !c.passed {
                    failed.push(format!(
                        "{} seed {} gap {:.4} vs untrained {:.4}",
                        c.variant, c.seed, c.trained_gap, c.untrained_gap
                    ));
                }
            }
            say!("tuple-loss delta (reported only): {:+.2}", outcome.tuple_loss_delta());
            if check && !failed.is_empty() {
                return Err(Failure::Check(failed.join("; ")));
            }
        }
        Command::GradCheck {
            instances,
            seed,
            tolerance,
            out,
        } => {
            let settings = SuiteSettings {
                instances,
                seed,
                ..SuiteSettings::default()
            };
            let report = run_suite(&settings)?;
            for t in &report.targets {
                say!(
                    "{:<13} instances {:>3} elements {:>7} max rel error {:.3e}",
                    serde_json::to_value(t.target)
                        .map_err(Error::from)?
                        .as_str()
                        .unwrap_or("?"),
                    t.instances,
                    t.elements_checked,
                    t.max_rel_error
                );
            }
            let max = report.max_rel_error();
            say!("max relative error {max:.3e}");
            if let Some(path) = out {
                io::write_json(&path, &report)?;
            }
            if !(max <= tolerance) {
                return Err(Failure::Check(format!(
                    "max relative error {max:.3e} exceeds {tolerance:.1e}"
                )));
            }
        }
    }
    Ok(())
}

struct Loaded {
    corpus: Corpus,
    params: trimodal::model::ParameterSet,
    corpus_manifest: Manifest,
    checkpoint_manifest: Manifest,
}

impl Loaded {
    fn provenance(&self) -> serde_json::Value {
        json!({
            "corpus_sha256": self.corpus_manifest.sha256,
            "checkpoint_sha256": self.checkpoint_manifest.sha256,
            "model": self.params.config(),
        })
    }
}

fn load_inputs(inputs: &ModelInputs) -> Result<Loaded, Failure> {
    let (corpus, corpus_manifest) = read_corpus(&inputs.corpus)?;
    let params = read_checkpoint(&inputs.checkpoint)?;
    let checkpoint_manifest: Manifest = io::read_json(&inputs.checkpoint)?;
    if params.config().input_dim != corpus.config.input_dim {
        return Err(Error::DimensionMismatch {
            what: "checkpoint input width".into(),
            expected: corpus.config.input_dim[0],
            got: params.config().input_dim[0],
        }
        .into());
    }
    Ok(Loaded {
        corpus,
        params,
        corpus_manifest,
        checkpoint_manifest,
    })
}

fn check_corpus(cfg: &RunConfig, corpus: &Corpus) -> Result<(), Failure> {
    if corpus.config.input_dim != cfg.model.input_dim {
        return Err(Error::Config(format!(
            "corpus widths {:?} do not match model input widths {:?}",
            corpus.config.input_dim, cfg.model.input_dim
        ))
        .into());
    }
    Ok(())
}

/// Runs `write` against a sibling staging directory, then moves each file
/// into `out`. Nothing lands in `out` if `write` fails.
fn staged(out: &Path, write: impl FnOnce(&Path) -> trimodal::Result<()>) -> Result<(), Failure> {
    let name = out
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    let staging = out.with_file_name(format!(".{name}.staging-{}", std::process::id()));
    let io_err = |p: &Path, e: std::io::Error| Error::Io {
        path: p.to_path_buf(),
        source: e,
    };
    fs::create_dir_all(&staging).map_err(|e| io_err(&staging, e))?;
    let result = write(&staging).and_then(|()| {
        fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
        for entry in fs::read_dir(&staging).map_err(|e| io_err(&staging, e))? {
            let entry = entry.map_err(|e| io_err(&staging, e))?;
            let target = out.join(entry.file_name());
            fs::rename(entry.path(), &target).map_err(|e| io_err(&target, e))?;
        }
        Ok(())
    });
    let _ = fs::remove_dir_all(&staging);
    result.map_err(Failure::from)
}
