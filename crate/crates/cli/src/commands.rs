use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use dagcn::build_cds_graph;
use dagcn::data::{
    generate_synthetic, parse_log, split_sequences, write_labels, write_log, ParsedLog, Split,
};
use dagcn::eval::evaluate as evaluate_checkpoint;
use dagcn::model::{Checkpoint, CheckpointMeta, ParamId, PropagationPlan};
use dagcn::training::{
    finite_difference_check, toy_problem, train_with, GradCheckOptions, TrainingPair,
};
use serde_json::json;

use crate::config::{read_kv_file, synthetic_spec, RunConfig};
use crate::manifest::{variant_name, RunManifest};
use crate::{ConfigFlags, SplitName, UserError};

pub const SEED_ENV: &str = "DAGCN_SEED";

fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map(Some).map_err(|_| {
            UserError::new(format!("{SEED_ENV} must be an unsigned integer, got '{v}'")).into()
        }),
        Err(_) => Ok(None),
    }
}

/// Defaults, then the config file, then flags, then `DAGCN_SEED`.
fn resolve(base: RunConfig, config: Option<&Path>, flags: &ConfigFlags) -> Result<RunConfig> {
    let mut cfg = base;
    let mut entries = match config {
        Some(p) => read_kv_file(p)?,
        None => Vec::new(),
    };
    entries.extend(flags.entries());
    cfg.apply(&entries)?;
    if let Some(seed) = env_seed()? {
        cfg.train.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn read_log(path: &Path) -> Result<ParsedLog> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let parsed =
        parse_log(BufReader::new(file)).with_context(|| format!("reading {}", path.display()))?;
    for r in &parsed.rejected {
        eprintln!("{}:{}: skipped: {}", path.display(), r.line, r.reason);
    }
    if parsed.sequences.is_empty() {
        return Err(UserError::new(format!("{}: no valid sequences", path.display())).into());
    }
    Ok(parsed)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn split_sizes(split: &Split) -> serde_json::Value {
    json!({ "train": split.train.len(), "valid": split.valid.len(), "test": split.test.len() })
}

/// Exports the graph of every sequence in the log.
pub fn build_graph(
    input: &Path,
    out: &Path,
    config: Option<&Path>,
    flags: &ConfigFlags,
    threads: Option<usize>,
) -> Result<()> {
    let cfg = resolve(RunConfig::default(), config, flags)?;
    let log = read_log(input)?;
    let graph = build_cds_graph(&log.sequences, log.vocab.sizes(), &cfg.graph)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    for (name, text) in graph.export_tsv(&log.vocab) {
        write_file(&out.join(name), text.as_bytes())?;
    }
    let stats = serde_json::to_string_pretty(&graph.stats()).expect("stats serialize");
    write_file(&out.join("stats.json"), (stats + "\n").as_bytes())?;

    let mut m = RunManifest::new("build-graph", cfg.train.seed, threads)
        .path("input", input)
        .path("out", out);
    if let Some(c) = config {
        m = m.path("config", c);
    }
    m.variant =
        Some(variant_name(cfg.model.use_attention, cfg.graph.include_sequential_edges).into());
    m.extra = json!({ "sequences": log.sequences.len(), "rejected_lines": log.rejected.len() });
    m.config = Some(cfg);
    m.write(&out.join("manifest.json"))
}

pub fn train(
    input: &Path,
    config: Option<&Path>,
    out: &Path,
    flags: &ConfigFlags,
    threads: Option<usize>,
) -> Result<()> {
    let cfg = resolve(RunConfig::default(), config, flags)?;
    let log = read_log(input)?;
    let sizes = log.vocab.sizes();
    let split = split_sequences(&log.sequences, cfg.split.tuple(), cfg.train.seed)?;
    let graph = build_cds_graph(&split.train, sizes, &cfg.graph)?;

    let log_path = sibling(out, ".log.jsonl");
    let mut log_file = create(&log_path)?;
    let mut log_err = None;
    let outcome = train_with(
        &split.train,
        &split.valid,
        &graph,
        &cfg.model,
        &cfg.train,
        |e| {
            let line = serde_json::to_string(e).expect("log entry serializes");
            if let Err(err) = writeln!(log_file, "{line}") {
                log_err.get_or_insert(err);
            }
            eprintln!(
                "epoch {:>3}  loss {:.5}  val mrr@5 {:.4}  val recall@5 {:.4}",
                e.epoch, e.train_loss, e.val_mrr5, e.val_recall5
            );
        },
    )?;
    if let Some(e) = log_err {
        return Err(anyhow::Error::new(e).context(format!("writing {}", log_path.display())));
    }
    log_file
        .flush()
        .with_context(|| format!("writing {}", log_path.display()))?;

    let mut m = RunManifest::new("train", cfg.train.seed, threads)
        .path("input", input)
        .path("out", out);
    if let Some(c) = config {
        m = m.path("config", c);
    }
    m.variant =
        Some(variant_name(cfg.model.use_attention, cfg.graph.include_sequential_edges).into());
    m.extra = json!({
        "split_sizes": split_sizes(&split),
        "rejected_lines": log.rejected.len(),
        "best_epoch": outcome.best_epoch,
        "epochs_run": outcome.log.len(),
    });
    let (model, seed) = (cfg.model.clone(), cfg.train.seed);
    m.config = Some(cfg);
    let ckpt = Checkpoint {
        meta: CheckpointMeta {
            config: model,
            sizes,
            seed,
            manifest: m.to_json(),
        },
        params: outcome.params,
    };
    let mut w = create(out)?;
    ckpt.write_to(&mut w)
        .with_context(|| format!("writing {}", out.display()))?;
    eprintln!(
        "best epoch {} (val mrr@5 {:.4}), wrote {}",
        outcome.best_epoch,
        outcome.best_val_mrr5,
        out.display()
    );
    Ok(())
}

pub fn evaluate(
    ckpt_path: &Path,
    input: &Path,
    split_name: SplitName,
    threads: Option<usize>,
) -> Result<()> {
    let bytes =
        std::fs::read(ckpt_path).with_context(|| format!("reading {}", ckpt_path.display()))?;
    let ckpt = Checkpoint::read_from(&bytes[..])
        .with_context(|| format!("loading {}", ckpt_path.display()))?;
    let trained: RunManifest = serde_json::from_value(ckpt.meta.manifest.clone()).map_err(|e| {
        UserError::new(format!(
            "{}: missing run manifest: {e}",
            ckpt_path.display()
        ))
    })?;
    let cfg = trained.config.ok_or_else(|| {
        UserError::new(format!("{}: manifest has no config", ckpt_path.display()))
    })?;

    let log = read_log(input)?;
    let split = split_sequences(&log.sequences, cfg.split.tuple(), ckpt.meta.seed)?;
    let graph = build_cds_graph(&split.train, log.vocab.sizes(), &cfg.graph)?;
    let seqs = match split_name {
        SplitName::Train => &split.train,
        SplitName::Valid => &split.valid,
        SplitName::Test => &split.test,
    };
    let report = evaluate_checkpoint(&ckpt, &graph, seqs)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&report).expect("report serializes")
    );

    let mut m = RunManifest::new("evaluate", ckpt.meta.seed, threads)
        .path("ckpt", ckpt_path)
        .path("input", input);
    m.variant = trained.variant;
    m.extra = json!({ "split": split_name.name(), "split_sizes": split_sizes(&split) });
    m.config = Some(cfg);
    m.write(&sibling(
        ckpt_path,
        &format!(".{}.manifest.json", split_name.name()),
    ))
}

pub fn gen_synth(spec_path: &Path, out: &Path, threads: Option<usize>) -> Result<()> {
    let mut spec = synthetic_spec(&read_kv_file(spec_path)?)?;
    if let Some(seed) = env_seed()? {
        spec.rng_seed = seed;
    }
    let corpus = generate_synthetic(&spec)?;
    write_file(out, write_log(&corpus.vocab, &corpus.sequences).as_bytes())?;
    write_file(
        &sibling(out, ".labels"),
        write_labels(&corpus.labels).as_bytes(),
    )?;
    let mut m = RunManifest::new("gen-synth", spec.rng_seed, threads)
        .path("spec", spec_path)
        .path("out", out);
    m.extra = serde_json::to_value(&spec).expect("spec serializes");
    m.write(&sibling(out, ".manifest.json"))
}

/// Toy models default to width 8 unless the config says otherwise.
fn toy_base() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.model.d = 8;
    cfg.model.d_prime = 8;
    cfg
}

pub fn grad_check(
    config: Option<&Path>,
    inject_fault: bool,
    tolerance: f64,
    flags: &ConfigFlags,
    threads: Option<usize>,
) -> Result<()> {
    let cfg = resolve(toy_base(), config, flags)?;
    let toy = toy_problem(&cfg.model, cfg.train.seed)?;
    let plan = PropagationPlan::new(&toy.graph, cfg.model.h);
    let pairs: Vec<&TrainingPair> = toy.pairs.iter().collect();
    let opts = GradCheckOptions {
        seed: cfg.train.seed,
        domain_weight: cfg.train.domain_weight,
        inject_fault: inject_fault.then_some(ParamId::W1),
        ..Default::default()
    };
    let report = finite_difference_check(&toy.params, &plan, &cfg.model, &pairs, &opts)?;
    let passed = report.passes(tolerance);

    let mut m = RunManifest::new("grad-check", cfg.train.seed, threads);
    if let Some(c) = config {
        m = m.path("config", c);
    }
    m.extra = json!({ "inject_fault": inject_fault, "tolerance": tolerance, "eps": opts.eps });
    m.config = Some(cfg);
    let out = json!({ "manifest": m, "passed": passed, "report": report });
    println!(
        "{}",
        serde_json::to_string_pretty(&out).expect("report serializes")
    );
    eprintln!(
        "max relative error {:.3e} (tolerance {:.1e}): {}",
        report.max_rel_error,
        tolerance,
        if passed { "PASS" } else { "FAIL" }
    );
    if passed {
        Ok(())
    } else {
        Err(anyhow::anyhow!("gradient check failed"))
    }
}
