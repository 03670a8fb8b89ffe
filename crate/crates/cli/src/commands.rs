use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde_json::{json, Value};
use tracing::{info, warn};

use attrsearch_core::bench::{benchmark, StrategySpec};
use attrsearch_core::checkpoint::{
    platt_sidecar_path, write_json, DqnCheckpoint, EmbeddingCheckpoint, PlattCheckpoint,
};
use attrsearch_core::dataset::{default_schema, generate_synthetic, Dataset, Split};
use attrsearch_core::dqn::{state_dim, train_dqn as fit_dqn, QNetwork};
use attrsearch_core::eer::PlattSet;
use attrsearch_core::embedding::{satisfaction_by_attribute, satisfaction_rate, train};
use attrsearch_core::gallery::Gallery;
use attrsearch_core::sampling::{sample_query_target_pairs, sample_triplets, Triplet};
use attrsearch_core::session::{run_session, Engine, Strategy};
use attrsearch_server::{AppState, ServerOptions};

use crate::config::RunConfig;
use crate::error::CliError;

type Result<T> = std::result::Result<T, CliError>;

/// Provenance block stored in every artifact.
fn run_info(command: &str, cfg: &RunConfig, inputs: Value) -> Value {
    json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "inputs": inputs,
        "config": cfg,
    })
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn load_model(path: &Path, dataset: &Dataset) -> Result<EmbeddingCheckpoint> {
    let ck = EmbeddingCheckpoint::load(path)?;
    ck.check_dataset(dataset)?;
    Ok(ck)
}

fn load_platt(model: &Path, ck: &EmbeddingCheckpoint) -> Result<Option<PlattSet>> {
    let path = platt_sidecar_path(model);
    if !path.exists() {
        return Ok(None);
    }
    let p = PlattCheckpoint::load(&path)?;
    if p.schema_fingerprint != ck.schema_fingerprint {
        return Err(CliError::Invalid(format!(
            "{} was fitted for a different schema",
            path.display()
        )));
    }
    Ok(Some(p.platt))
}

fn load_dqn(path: &Path, ck: &EmbeddingCheckpoint) -> Result<QNetwork> {
    let d = DqnCheckpoint::load(path)?;
    d.check_embedding(ck)?;
    Ok(d.network)
}

fn split_has_items(dataset: &Dataset, split: Split) -> bool {
    !dataset.indices(Some(split)).is_empty()
}

fn triplets(
    dataset: &Dataset,
    cfg: &RunConfig,
    split: Split,
    per_attribute: usize,
) -> Result<Vec<Triplet>> {
    let mut out = Vec::new();
    for a in 0..dataset.schema().len() {
        out.extend(sample_triplets(
            dataset,
            Some(split),
            a,
            per_attribute,
            cfg.sampling.triplet_seed(split, a),
        )?);
    }
    Ok(out)
}

fn pairs(
    gallery: &Gallery,
    dataset: &Dataset,
    split: Split,
    per_attribute: usize,
    seed: u64,
) -> Result<Vec<(usize, usize)>> {
    let sampled = sample_query_target_pairs(dataset, Some(split), per_attribute, seed)?;
    gallery
        .pair_positions(&sampled)
        .ok_or_else(|| CliError::Failed("sampled pairs fall outside the gallery".into()))
}

pub fn gen_data(cfg: &RunConfig, out: &Path) -> Result<()> {
    let dataset = generate_synthetic(&default_schema(), &cfg.data)?;
    let header = run_info("gen-data", cfg, Value::Null);
    write_text(out, &format!("# {header}\n{}", dataset.to_text()))?;
    let count = |s| dataset.indices(Some(s)).len();
    println!(
        "wrote {} ({} items: {} train, {} val, {} test)",
        out.display(),
        dataset.len(),
        count(Split::Train),
        count(Split::Val),
        count(Split::Test)
    );
    Ok(())
}

pub fn train_emb(cfg: &RunConfig, data: &Path, out: &Path) -> Result<()> {
    let dataset = Dataset::load(data)?;
    let s = &cfg.sampling;
    let tr = triplets(&dataset, cfg, Split::Train, s.triplets_per_attribute)?;
    let va = if split_has_items(&dataset, Split::Val) {
        triplets(&dataset, cfg, Split::Val, s.val_triplets_per_attribute)?
    } else {
        Vec::new()
    };
    info!(
        train = tr.len(),
        val = va.len(),
        variant = cfg.embedding.variant().label(),
        "training embedding"
    );
    let (model, log) = train(&dataset, &tr, &va, &cfg.embedding)?;
    if split_has_items(&dataset, Split::Test) {
        let te = triplets(&dataset, cfg, Split::Test, s.test_triplets_per_attribute)?;
        println!(
            "held-out triplet satisfaction: {:.2}%",
            100.0 * satisfaction_rate(&model, &dataset, &te)?
        );
    }

    let schema = dataset.schema().clone();
    let gallery = Gallery::from_split(&model, &dataset, Some(Split::Train));
    let run = run_info("train-emb", cfg, json!({ "data": data }));
    EmbeddingCheckpoint::new(schema.clone(), model, cfg.embedding.clone(), log, run).save(out)?;
    println!("wrote {}", out.display());

    let platt = PlattSet::fit(&gallery, s.platt_pairs_per_attribute, s.platt_seed())?;
    let sidecar = platt_sidecar_path(out);
    PlattCheckpoint::new(&schema, platt, s.platt_pairs_per_attribute, s.platt_seed())
        .save(&sidecar)?;
    println!("wrote {}", sidecar.display());
    Ok(())
}

pub fn eval_emb(
    cfg: &RunConfig,
    data: &Path,
    models: &[PathBuf],
    split: Split,
    json_out: Option<&Path>,
) -> Result<()> {
    let dataset = Dataset::load(data)?;
    let te = triplets(
        &dataset,
        cfg,
        split,
        cfg.sampling.test_triplets_per_attribute,
    )?;
    let names: Vec<&str> = dataset
        .schema()
        .attributes()
        .iter()
        .map(|a| a.name.as_str())
        .collect();
    let mut rows = Vec::new();
    for path in models {
        let ck = load_model(path, &dataset)?;
        let per_attribute = satisfaction_by_attribute(&ck.model, &dataset, &te);
        let overall = satisfaction_rate(&ck.model, &dataset, &te)?;
        rows.push((path, ck.config.variant(), per_attribute, overall));
    }

    let labels: Vec<String> = rows
        .iter()
        .map(|(path, variant, _, _)| {
            let clash = rows.iter().filter(|r| r.1 == *variant).count() > 1;
            if clash {
                format!("{} [{}]", variant.label(), path.display())
            } else {
                variant.label().to_string()
            }
        })
        .collect();
    let width = labels.iter().map(String::len).max().unwrap_or(6).max(6);
    println!(
        "triplet satisfaction (%) on the {split} split, {} triplets",
        te.len()
    );
    let mut head = format!("{:<width$}", "Method");
    for n in &names {
        head.push_str(&format!(" {:>10}", n));
    }
    head.push_str(&format!(" {:>10}", "Overall"));
    println!("{head}");
    for (label, (_, _, per, overall)) in labels.iter().zip(&rows) {
        let mut line = format!("{label:<width$}");
        for r in per {
            match r {
                Some(r) => line.push_str(&format!(" {:>10.2}", r * 100.0)),
                None => line.push_str(&format!(" {:>10}", "-")),
            }
        }
        line.push_str(&format!(" {:>10.2}", overall * 100.0));
        println!("{line}");
    }

    if let Some(out) = json_out {
        let models: Vec<Value> = rows
            .iter()
            .zip(&labels)
            .map(|((path, variant, per, overall), label)| {
                let per: serde_json::Map<String, Value> = names.iter().zip(per).map(|(n, r)| (n.to_string(), json!(r))).collect();
                json!({ "model": path, "variant": variant, "label": label, "per_attribute": per, "overall": overall })
            })
            .collect();
        let doc = json!({
            "split": split,
            "triplets": te.len(),
            "models": models,
            "run": run_info("eval-emb", cfg, json!({ "data": data, "models": models_paths(&rows) })),
        });
        write_json(out, &doc)?;
        println!("wrote {}", out.display());
    }
    Ok(())
}

fn models_paths<T, U, V>(rows: &[(&PathBuf, T, U, V)]) -> Vec<PathBuf> {
    rows.iter().map(|r| r.0.clone()).collect()
}

pub fn train_dqn(cfg: &RunConfig, data: &Path, model: &Path, out: &Path) -> Result<()> {
    let dataset = Dataset::load(data)?;
    let ck = load_model(model, &dataset)?;
    let gallery = Arc::new(Gallery::from_split(&ck.model, &dataset, Some(Split::Train)));
    let train_pairs = pairs(
        &gallery,
        &dataset,
        Split::Train,
        cfg.sampling.train_pairs_per_attribute,
        cfg.sampling.train_pair_seed(),
    )?;
    info!(
        pairs = train_pairs.len(),
        episodes = cfg.dqn.episodes,
        "training Q-network"
    );
    let (net, log) = fit_dqn(gallery, &train_pairs, &cfg.dqn)?;

    let tail = &log.episodes[log.episodes.len().saturating_sub(50)..];
    if !tail.is_empty() {
        let mean = tail.iter().map(|e| e.steps as f64).sum::<f64>() / tail.len() as f64;
        println!(
            "last {} episodes: {mean:.2} mean steps, {} optimisation steps",
            tail.len(),
            log.optimisation_steps
        );
    }
    let episodes = with_suffix(out, ".episodes.jsonl");
    let file = File::create(&episodes)
        .map_err(|e| CliError::Io(format!("{}: {e}", episodes.display())))?;
    let mut w = BufWriter::new(file);
    log.write_jsonl(&mut w)?;
    w.flush()?;

    let run = run_info("train-dqn", cfg, json!({ "data": data, "model": model }));
    DqnCheckpoint::new(
        dataset.schema(),
        ck.model.embedding_dim,
        net,
        cfg.dqn.clone(),
        log,
        run,
    )
    .save(out)?;
    println!("wrote {}", out.display());
    println!("wrote {}", episodes.display());
    Ok(())
}

struct Loaded {
    dataset: Dataset,
    checkpoint: EmbeddingCheckpoint,
    engine: Engine,
}

fn engine(data: &Path, model: &Path, dqn: Option<&Path>, split: Option<Split>) -> Result<Loaded> {
    let dataset = Dataset::load(data)?;
    let checkpoint = load_model(model, &dataset)?;
    let gallery = Arc::new(Gallery::from_split(&checkpoint.model, &dataset, split));
    if gallery.is_empty() {
        return Err(CliError::Usage(format!(
            "the {} split has no items",
            split.map_or("full", Split::as_str)
        )));
    }
    let mut engine = Engine::new(gallery);
    match load_platt(model, &checkpoint)? {
        Some(p) => engine = engine.with_platt(p),
        None => {
            warn!(sidecar = %platt_sidecar_path(model).display(), "no Platt calibration; the eer strategy is unavailable")
        }
    }
    if let Some(path) = dqn {
        engine = engine.with_dqn(load_dqn(path, &checkpoint)?);
    }
    Ok(Loaded {
        dataset,
        checkpoint,
        engine,
    })
}

fn require(engine: &Engine, strategy: Strategy) -> Result<()> {
    engine.supports(strategy).map_err(|e| {
        let hint = match strategy {
            Strategy::Eer => "; run train-emb to produce the Platt sidecar",
            Strategy::Dqn => "; pass --dqn",
            _ => "",
        };
        CliError::Usage(format!("{e}{hint}"))
    })
}

pub struct SimulateArgs<'a> {
    pub data: &'a Path,
    pub model: &'a Path,
    pub dqn: Option<&'a Path>,
    pub strategy: Strategy,
    pub pair: Option<(String, String)>,
    pub split: Split,
    pub log: Option<&'a Path>,
}

pub fn simulate(cfg: &RunConfig, a: &SimulateArgs<'_>) -> Result<()> {
    let loaded = engine(a.data, a.model, a.dqn, Some(a.split))?;
    let engine = &loaded.engine;
    require(engine, a.strategy)?;
    let g = &engine.gallery;
    let (q, t) = match &a.pair {
        Some((q, t)) => {
            let pos = |id: &str| {
                g.position_of(id).ok_or_else(|| {
                    CliError::Usage(format!("item {id} is not in the {} split", a.split))
                })
            };
            (pos(q)?, pos(t)?)
        }
        None => pairs(
            g,
            &loaded.dataset,
            a.split,
            1,
            cfg.sampling.test_pair_seed(),
        )?[0],
    };
    let outcome = run_session(engine, q, t, a.strategy, cfg.bench.max_steps)?;
    let summary = format!(
        "{}: {:?} after {} steps (query {}, target {}, ranks {:?})",
        a.strategy.label(),
        outcome.status,
        outcome.steps,
        g.id(q),
        g.id(t),
        outcome.rank_curve
    );
    let jsonl = outcome.log.to_jsonl();
    match a.log {
        Some(path) => {
            write_text(path, &jsonl)?;
            let run = run_info(
                "simulate",
                cfg,
                json!({ "data": a.data, "model": a.model, "dqn": a.dqn, "strategy": a.strategy, "split": a.split, "query": g.id(q), "target": g.id(t) }),
            );
            let sidecar = with_suffix(path, ".run.json");
            write_json(&sidecar, &run)?;
            println!("{summary}");
            println!("wrote {}", path.display());
        }
        None => {
            print!("{jsonl}");
            eprintln!("{summary}");
        }
    }
    Ok(())
}

fn slug(label: &str) -> String {
    let s: String = label
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() {
                c.to_ascii_lowercase()
            } else {
                '-'
            }
        })
        .collect();
    s.split('-')
        .filter(|p| !p.is_empty())
        .collect::<Vec<_>>()
        .join("-")
}

pub fn bench(
    cfg: &RunConfig,
    data: &Path,
    model: &Path,
    dqn: Option<&Path>,
    out_dir: &Path,
) -> Result<()> {
    let b = &cfg.bench;
    if b.strategies.is_empty() {
        return Err(CliError::Usage("no strategies to benchmark".into()));
    }
    let loaded = engine(data, model, dqn, Some(b.split))?;
    let base = loaded.engine;
    for &s in &b.strategies {
        require(&base, s)?;
    }
    let g = base.gallery.clone();
    let test_pairs = pairs(
        &g,
        &loaded.dataset,
        b.split,
        cfg.sampling.test_pairs_per_attribute,
        cfg.sampling.test_pair_seed(),
    )?;

    let slots = base.candidates_per_attribute;
    let untrained = QNetwork::init(
        state_dim(slots, g.embedding_dim(), g.n_attributes()),
        cfg.dqn.hidden,
        slots,
        cfg.dqn.seed,
    );
    let untrained_engine = base.clone().with_dqn(untrained);
    let mut specs = Vec::new();
    for &strategy in &b.strategies {
        let label = match strategy {
            Strategy::Nn => "NN",
            Strategy::Fcs => "FCS",
            Strategy::Eer => "FCS+EER",
            Strategy::Dqn => "FCS+DQN",
        };
        if strategy == Strategy::Dqn && b.untrained_dqn {
            specs.push(StrategySpec {
                label: "FCS+DQN (untrained)".into(),
                strategy,
                engine: &untrained_engine,
            });
        }
        specs.push(StrategySpec {
            label: label.into(),
            strategy,
            engine: &base,
        });
    }
    info!(
        pairs = test_pairs.len(),
        strategies = specs.len(),
        "benchmarking"
    );
    let (mut report, logs) = benchmark(&specs, &test_pairs, b.max_steps, cfg.sampling.seed)?;
    report.config = run_info(
        "bench",
        cfg,
        json!({ "data": data, "model": model, "dqn": dqn, "embedding_run": loaded.checkpoint.run }),
    );

    print!("{}", report.table());
    fs::create_dir_all(out_dir.join("logs"))
        .map_err(|e| CliError::Io(format!("{}: {e}", out_dir.display())))?;
    write_json(out_dir.join("report.json"), &report)?;
    write_text(&out_dir.join("curves.csv"), &report.curve_csv())?;
    for (spec, logs) in specs.iter().zip(&logs) {
        let text: String = logs.iter().map(|l| l.to_jsonl()).collect();
        write_text(
            &out_dir
                .join("logs")
                .join(format!("{}.jsonl", slug(&spec.label))),
            &text,
        )?;
    }
    println!("wrote {}", out_dir.display());
    Ok(())
}

pub fn serve(cfg: &RunConfig, data: &Path, model: &Path, dqn: Option<&Path>) -> Result<()> {
    let s = &cfg.serve;
    let addr: SocketAddr = s
        .addr
        .parse()
        .map_err(|e| CliError::Usage(format!("bad address {}: {e}", s.addr)))?;
    let loaded = engine(data, model, dqn, s.split)?;
    require(&loaded.engine, s.strategy)?;
    let options = ServerOptions {
        default_strategy: s.strategy,
        max_steps: s.max_steps,
        log_dir: s.log_dir.clone(),
        ui_dir: s.ui_dir.clone(),
        asset_url_template: s.asset_url.clone(),
        seed: s.seed,
    };
    let state = Arc::new(AppState::new(
        loaded.engine,
        Arc::new(loaded.dataset),
        options,
    )?);
    let restored = state.restore()?;
    if restored > 0 {
        info!(restored, "replayed session logs");
    }
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(attrsearch_server::serve(state, addr))?;
    Ok(())
}
