//! Subcommand implementations.
//!
//! Commands read TSV datasets and checkpoints, run the library, and write
//! CSV/JSON outputs. All file outputs are free of wall-clock data, so a rerun
//! with identical inputs and seed reproduces them byte for byte; progress
//! notes on stderr may carry timings unless `--deterministic` is set.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use tkge::checkpoint::{load_checkpoint, save_checkpoint, SavedModel};
use tkge::config::{load_config, FileConfig};
use tkge::curvature::{
    estimate_all, propose_signature, Aggregation, CurvatureHistogram, PsiFormula, SampleMode,
};
use tkge::data::{augment_reciprocal, build_dataset, load_tsv, Dataset, Quadruple};
use tkge::eval::{query_ranks, top_candidates, FilterIndex, FilterMode, Metrics, TieMode};
use tkge::grad::{fd_check, Sample};
use tkge::model::{ModelConfig, ModelParams};
use tkge::product::ProductSignature;
use tkge::rng::{stream, Domain};
use tkge::train::{fit, signature_search, TrainConfig};
use tkge::{Error, Result};

use crate::{
    EstimateArgs, EvaluateArgs, ExportArgs, ExportKind, FdCheckArgs, PredictArgs, SearchArgs,
    TrainArgs,
};

fn usage(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn load_file_config(path: &Option<PathBuf>) -> Result<FileConfig> {
    match path {
        Some(p) => load_config(p),
        None => Ok(FileConfig::default()),
    }
}

/// Resolve one dataset path with flag > config file precedence.
fn pick_path(flag: &Option<PathBuf>, file: &Option<String>) -> Option<PathBuf> {
    flag.clone().or_else(|| file.as_ref().map(PathBuf::from))
}

fn require(p: Option<PathBuf>, what: &str) -> Result<PathBuf> {
    p.ok_or_else(|| usage(format!("{what} is required (flag or config file)")))
}

/// Load the given splits into one indexed dataset. Missing optional splits
/// are treated as empty.
fn load_dataset(train: &Path, valid: Option<&Path>, test: Option<&Path>) -> Result<Dataset> {
    let train_facts = load_tsv(train)?;
    let valid_facts = match valid {
        Some(p) => load_tsv(p)?,
        None => Vec::new(),
    };
    let test_facts = match test {
        Some(p) => load_tsv(p)?,
        None => Vec::new(),
    };
    build_dataset(&train_facts, &valid_facts, &test_facts)
}

/// A checkpoint only answers queries in the id space it was trained in, so
/// any dataset passed next to one must carry the exact same vocabularies.
fn check_vocabs(ds: &Dataset, saved: &SavedModel) -> Result<()> {
    if ds.entities.labels() != saved.entities.labels() {
        return Err(usage(
            "dataset entities do not match the checkpoint vocabulary; \
             pass the splits the model was trained on",
        ));
    }
    if ds.predicates.labels() != saved.predicates.labels() {
        return Err(usage(
            "dataset predicates do not match the checkpoint vocabulary",
        ));
    }
    if ds.timestamps != saved.timestamps {
        return Err(usage(
            "dataset timestamps do not match the checkpoint vocabulary",
        ));
    }
    Ok(())
}

/// Evaluation report with the schema shared by `train` and `evaluate`.
#[derive(Debug, Serialize)]
struct Report {
    mrr: f64,
    hits1: f64,
    hits3: f64,
    hits10: f64,
    n_queries: usize,
    filter: FilterMode,
    tie: TieMode,
}

impl Report {
    fn new(m: &Metrics, filter: FilterMode, tie: TieMode) -> Report {
        Report {
            mrr: m.mrr,
            hits1: m.hits_at_1,
            hits3: m.hits_at_3,
            hits10: m.hits_at_10,
            n_queries: m.num_queries,
            filter,
            tie,
        }
    }
}

fn note_elapsed(started: Instant, deterministic: bool) {
    if !deterministic {
        eprintln!("elapsed: {:.1}s", started.elapsed().as_secs_f64());
    }
}

/// Shared front half of `estimate-curvature` and `propose-signature`.
fn run_estimate(a: &EstimateArgs) -> Result<CurvatureHistogram> {
    let file = load_file_config(&a.config)?;
    let train = require(pick_path(&a.train, &file.train), "--train")?;
    let valid = pick_path(&a.valid, &file.valid);
    let test = pick_path(&a.test, &file.test);
    let dataset = load_dataset(&train, valid.as_deref(), test.as_deref())?;

    let mode = if a.exhaustive {
        SampleMode::Exhaustive
    } else {
        SampleMode::Sampled {
            n_iter: a.n_iter.or(file.n_iter).unwrap_or(1000),
        }
    };
    let seed = a.seed.or(file.seed).unwrap_or(0);
    let formula = a.formula.or(file.formula).unwrap_or_default();
    let aggregation = a.mode.or(file.aggregation).unwrap_or_default();
    let hist = estimate_all(
        &dataset.train,
        dataset.num_timestamps(),
        mode,
        seed,
        formula,
        aggregation,
    );
    if hist.entries.is_empty() {
        return Err(Error::Numeric(
            "no timestamp slice produced a curvature estimate".into(),
        ));
    }
    Ok(hist)
}

fn write_histogram(out: &Option<PathBuf>, hist: &CurvatureHistogram) -> Result<()> {
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("curvature.csv"), hist.to_csv())?;
    }
    Ok(())
}

pub fn estimate_curvature(a: EstimateArgs, deterministic: bool) -> Result<()> {
    let started = Instant::now();
    let hist = run_estimate(&a)?;
    write_histogram(&a.out, &hist)?;
    println!("{}", serde_json::to_string_pretty(&hist.summary())?);
    note_elapsed(started, deterministic);
    Ok(())
}

pub fn propose(a: EstimateArgs, dim: usize, max_components: usize, deterministic: bool) -> Result<()> {
    let started = Instant::now();
    let hist = run_estimate(&a)?;
    write_histogram(&a.out, &hist)?;
    let sig = propose_signature(&hist, dim, max_components)?;
    eprintln!("{}", serde_json::to_string(&hist.summary())?);
    println!("{sig}");
    note_elapsed(started, deterministic);
    Ok(())
}

/// Fully resolved run configuration: flag > config file > built-in default.
struct ResolvedRun {
    train: PathBuf,
    valid: Option<PathBuf>,
    test: Option<PathBuf>,
    out: Option<PathBuf>,
    model: ModelConfig,
    tc: TrainConfig,
    filter: FilterMode,
    tie: TieMode,
}

fn resolve_run(a: &TrainArgs) -> Result<ResolvedRun> {
    let file = load_file_config(&a.config)?;
    let sig_text = a
        .signature
        .clone()
        .or_else(|| file.signature.clone())
        .ok_or_else(|| usage("--signature is required (flag or config file)"))?;
    let signature: ProductSignature = sig_text.parse()?;
    let model = ModelConfig {
        signature,
        repr: a.repr.or(file.repr).unwrap_or_default(),
        score: a.score.or(file.score).unwrap_or_default(),
        time_scale: a.time_scale.or(file.time_scale).unwrap_or_default(),
    };
    let base = file.train_config(TrainConfig::default());
    let tc = TrainConfig {
        lr: a.lr.unwrap_or(base.lr),
        negatives: a.negatives.unwrap_or(base.negatives),
        batch_size: a.batch_size.unwrap_or(base.batch_size),
        max_epochs: a.max_epochs.unwrap_or(base.max_epochs),
        validate_every: a.validate_every.unwrap_or(base.validate_every),
        patience: a.patience.unwrap_or(base.patience),
        seed: a.seed.unwrap_or(base.seed),
    };
    tc.validate()?;
    Ok(ResolvedRun {
        train: require(pick_path(&a.train, &file.train), "--train")?,
        valid: pick_path(&a.valid, &file.valid),
        test: pick_path(&a.test, &file.test),
        out: pick_path(&a.out, &file.out),
        model,
        tc,
        filter: a.filter.or(file.filter).unwrap_or_default(),
        tie: a.tie.or(file.tie).unwrap_or_default(),
    })
}

pub fn train(a: TrainArgs, deterministic: bool) -> Result<()> {
    let started = Instant::now();
    let r = resolve_run(&a)?;
    let dataset = load_dataset(&r.train, r.valid.as_deref(), r.test.as_deref())?;
    eprintln!("{}", serde_json::to_string(&dataset.summary())?);

    let outcome = fit(&dataset, &r.model, &r.tc, r.filter, r.tie)?;
    eprintln!(
        "epochs run: {}, best epoch: {}, stopped early: {}",
        outcome.epochs_run, outcome.checkpoint.epoch, outcome.stopped_early
    );

    let report = Report::new(&outcome.best_metrics, r.filter, r.tie);
    if let Some(out) = &r.out {
        fs::create_dir_all(out)?;
        save_checkpoint(
            out,
            &outcome.checkpoint,
            &dataset.entities,
            &dataset.predicates,
            &dataset.timestamps,
        )?;
        let mut log = String::new();
        for rec in &outcome.log {
            log.push_str(&serde_json::to_string(rec)?);
            log.push('\n');
        }
        fs::write(out.join("train.log"), log)?;
        let mut metrics = serde_json::to_string_pretty(&report)?;
        metrics.push('\n');
        fs::write(out.join("metrics.json"), metrics)?;
    }
    println!("{}", serde_json::to_string_pretty(&report)?);
    note_elapsed(started, deterministic);
    Ok(())
}

pub fn evaluate(a: EvaluateArgs, deterministic: bool) -> Result<()> {
    let started = Instant::now();
    let saved = load_checkpoint(&a.checkpoint)?;
    let train = require(a.train.clone(), "--train")?;
    let dataset = load_dataset(&train, a.valid.as_deref(), a.test.as_deref())?;
    check_vocabs(&dataset, &saved)?;

    let num_raw = dataset.num_raw_predicates();
    let queries = augment_reciprocal(dataset.split(a.split), num_raw);
    if queries.is_empty() {
        return Err(usage(format!("split '{}' has no quadruples", a.split)));
    }
    let train_aug = augment_reciprocal(&dataset.train, num_raw);
    let valid_aug = augment_reciprocal(&dataset.valid, num_raw);
    let test_aug = augment_reciprocal(&dataset.test, num_raw);
    let filter = FilterIndex::build(&[&train_aug, &valid_aug, &test_aug]);

    let ckpt = &saved.checkpoint;
    let ranks = query_ranks(
        &ckpt.params,
        &ckpt.model,
        &queries,
        &filter,
        ckpt.num_timestamps,
        a.filter,
        a.tie,
    )?;
    if let Some(path) = &a.per_query {
        // Augmentation interleaves (original, reciprocal) pairs, so parity
        // recovers the query direction.
        let mut csv = String::from("query_id,direction,rank\n");
        for (i, r) in ranks.iter().enumerate() {
            let direction = if i % 2 == 0 { "tail" } else { "head" };
            csv.push_str(&format!("{},{},{}\n", i / 2, direction, r));
        }
        fs::write(path, csv)?;
    }
    let report = Report::new(&Metrics::from_ranks(&ranks), a.filter, a.tie);
    println!("{}", serde_json::to_string_pretty(&report)?);
    note_elapsed(started, deterministic);
    Ok(())
}

/// A query pattern `s,p,?,t` (object prediction) or `?,p,o,t` (subject
/// prediction, answered through the reciprocal predicate).
fn parse_query(text: &str, saved: &SavedModel) -> Result<Quadruple> {
    let parts: Vec<&str> = text.split(',').collect();
    let [s, p, o, t] = parts.as_slice() else {
        return Err(usage(format!(
            "query must have four comma-separated fields 's,p,?,t' or '?,p,o,t', got '{text}'"
        )));
    };
    let predicate = saved
        .predicates
        .get(p)
        .ok_or_else(|| usage(format!("unknown predicate label '{p}'")))?;
    let timestamp = saved
        .timestamps
        .iter()
        .position(|l| l == t)
        .ok_or_else(|| usage(format!("unknown timestamp label '{t}'")))?
        as u32;
    let entity = |label: &str| {
        saved
            .entities
            .get(label)
            .ok_or_else(|| usage(format!("unknown entity label '{label}'")))
    };
    let num_raw = saved.predicates.len() as u32;
    match (*s, *o) {
        ("?", "?") => Err(usage("query has two holes; exactly one of s/o must be '?'")),
        ("?", o) => Ok(Quadruple {
            s: entity(o)?,
            p: predicate + num_raw,
            o: 0,
            t: timestamp,
        }),
        (s, "?") => Ok(Quadruple {
            s: entity(s)?,
            p: predicate,
            o: 0,
            t: timestamp,
        }),
        _ => Err(usage("query has no hole; exactly one of s/o must be '?'")),
    }
}

pub fn predict(a: PredictArgs) -> Result<()> {
    let saved = load_checkpoint(&a.checkpoint)?;
    let q = parse_query(&a.query, &saved)?;

    let filter = match &a.train {
        Some(train) => {
            let dataset = load_dataset(train, a.valid.as_deref(), a.test.as_deref())?;
            check_vocabs(&dataset, &saved)?;
            let num_raw = dataset.num_raw_predicates();
            let train_aug = augment_reciprocal(&dataset.train, num_raw);
            let valid_aug = augment_reciprocal(&dataset.valid, num_raw);
            let test_aug = augment_reciprocal(&dataset.test, num_raw);
            FilterIndex::build(&[&train_aug, &valid_aug, &test_aug])
        }
        None => FilterIndex::build(&[]),
    };
    let ckpt = &saved.checkpoint;
    let rows = top_candidates(
        &ckpt.params,
        &ckpt.model,
        q,
        &filter,
        ckpt.num_timestamps,
        a.filter,
        a.topk,
    )?;
    for (rank, (entity, score)) in rows.iter().enumerate() {
        println!("{}\t{}\t{}", rank + 1, saved.entities.label(*entity), score);
    }
    Ok(())
}

fn export_degree_distance(saved: &SavedModel, train: &Path) -> Result<String> {
    let facts = load_tsv(train)?;
    let mut degree = vec![0usize; saved.entities.len()];
    for f in &facts {
        for label in [&f.s, &f.o] {
            let id = saved
                .entities
                .get(label)
                .ok_or_else(|| usage(format!("unknown entity label '{label}' in {}", train.display())))?;
            degree[id as usize] += 1;
        }
    }
    let ckpt = &saved.checkpoint;
    let sig = &ckpt.model.signature;
    let origin = vec![0.0; sig.total_dim()];
    let nt = ckpt.num_timestamps;
    let mut csv = String::from("entity,degree,mean_distance,var_distance\n");
    for e in 0..saved.entities.len() {
        if degree[e] == 0 {
            continue;
        }
        let mut dists = Vec::with_capacity(nt);
        for t in 0..nt {
            let pt = ckpt.params.entity_point_at(&ckpt.model, e as u32, t as u32, nt);
            dists.push(sig.distance_sq(&pt, &origin)?.sqrt());
        }
        let mean = dists.iter().sum::<f64>() / nt as f64;
        let var = dists.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / nt as f64;
        csv.push_str(&format!(
            "{},{},{},{}\n",
            saved.entities.label(e as u32),
            degree[e],
            mean,
            var
        ));
    }
    Ok(csv)
}

fn export_velocity_norms(saved: &SavedModel) -> Result<String> {
    let params = &saved.checkpoint.params;
    let d = params.dim;
    let mut csv = String::from("entity,velocity_norm\n");
    for e in 0..saved.entities.len() {
        let v = &params.entity_velocity[e * d..(e + 1) * d];
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        csv.push_str(&format!("{},{}\n", saved.entities.label(e as u32), norm));
    }
    Ok(csv)
}

pub fn export(a: ExportArgs) -> Result<()> {
    let saved = load_checkpoint(&a.checkpoint)?;
    let csv = match a.kind {
        ExportKind::DegreeDistance => {
            let train = require(a.train.clone(), "--train")?;
            export_degree_distance(&saved, &train)?
        }
        ExportKind::VelocityNorms => export_velocity_norms(&saved)?,
    };
    match &a.out {
        Some(path) => fs::write(path, csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}

pub fn fd_check_cmd(a: FdCheckArgs) -> Result<()> {
    let signature: ProductSignature = a.signature.parse()?;
    let cfg = ModelConfig {
        signature,
        repr: a.repr.unwrap_or_default(),
        score: a.score.unwrap_or_default(),
        time_scale: a.time_scale.unwrap_or_default(),
    };
    if a.entities < 2 || a.predicates == 0 || a.timestamps == 0 || a.samples == 0 {
        return Err(usage("fd-check needs >= 2 entities and nonzero predicates/timestamps/samples"));
    }
    let params = ModelParams::init(a.entities, a.predicates, &cfg, a.seed);
    // A deterministic batch covering both predicate directions; negatives
    // come from the dedicated RNG domain.
    let num_preds = 2 * a.predicates;
    let samples: Vec<Sample> = (0..a.samples)
        .map(|i| {
            let quad = Quadruple {
                s: ((3 * i + 1) % a.entities) as u32,
                p: (i % num_preds) as u32,
                o: ((5 * i + 2) % a.entities) as u32,
                t: ((2 * i + 1) % a.timestamps) as u32,
            };
            let mut rng = stream(a.seed, Domain::FdCheck, i as u64, 1);
            let mut negatives = Vec::new();
            tkge::data::sample_negatives(&mut rng, a.entities, quad.o, a.negatives, &mut negatives);
            Sample { quad, negatives }
        })
        .collect();

    let report = fd_check(
        &params,
        &cfg,
        a.timestamps,
        &samples,
        a.probes,
        a.seed,
        a.h,
        a.tolerance,
    )?;
    for b in &report.per_block {
        println!("{}\tchecked {}\tmax_rel_err {:.3e}", b.block, b.checked, b.max_rel_err);
    }
    println!(
        "checked {} coordinates, skipped {} near boundaries, max rel err {:.3e} (tolerance {:.1e})",
        report.checked, report.skipped_boundary, report.max_rel_err, report.tolerance
    );
    if !report.passed() {
        return Err(Error::Numeric(format!(
            "finite-difference check failed at {} (rel err {:.3e} > {:.1e})",
            report.worst_coordinate, report.max_rel_err, report.tolerance
        )));
    }
    println!("fd check passed");
    Ok(())
}

pub fn search(a: SearchArgs, deterministic: bool) -> Result<()> {
    let started = Instant::now();
    let r = resolve_search(&a)?;
    let dataset = load_dataset(&r.run.train, r.run.valid.as_deref(), r.run.test.as_deref())?;

    let candidates = if !a.candidate.is_empty() {
        a.candidate
            .iter()
            .map(|s| s.parse::<ProductSignature>())
            .collect::<Result<Vec<_>>>()?
    } else {
        let hist = estimate_all(
            &dataset.train,
            dataset.num_timestamps(),
            SampleMode::Sampled { n_iter: r.n_iter },
            r.run.tc.seed,
            PsiFormula::default(),
            Aggregation::default(),
        );
        if hist.entries.is_empty() {
            return Err(Error::Numeric(
                "no timestamp slice produced a curvature estimate".into(),
            ));
        }
        vec![propose_signature(&hist, a.dim, a.max_components)?]
    };
    let base = ModelConfig {
        signature: candidates[0].clone(),
        ..r.run.model.clone()
    };
    let budget = a.budget.unwrap_or(candidates.len());
    let results = signature_search(
        &dataset,
        &candidates,
        budget,
        &base,
        &r.run.tc,
        r.run.filter,
        r.run.tie,
    )?;

    #[derive(Serialize)]
    struct Row {
        signature: String,
        val_mrr: f64,
        best_epoch: usize,
        jittered: bool,
    }
    let rows: Vec<Row> = results
        .iter()
        .map(|s| Row {
            signature: s.signature.to_string(),
            val_mrr: s.val_mrr,
            best_epoch: s.best_epoch,
            jittered: s.jittered,
        })
        .collect();
    for (i, row) in rows.iter().enumerate() {
        println!(
            "{}\t{}\t{}\t{}\t{}",
            i + 1,
            row.signature,
            row.val_mrr,
            row.best_epoch,
            if row.jittered { "jittered" } else { "verbatim" }
        );
    }
    if let Some(out) = &r.run.out {
        fs::create_dir_all(out)?;
        let mut text = serde_json::to_string_pretty(&rows)?;
        text.push('\n');
        fs::write(out.join("search.json"), text)?;
    }
    note_elapsed(started, deterministic);
    Ok(())
}

struct ResolvedSearch {
    run: ResolvedRun,
    n_iter: usize,
}

fn resolve_search(a: &SearchArgs) -> Result<ResolvedSearch> {
    // The search shares the train command's configuration surface; a
    // placeholder signature satisfies the resolver when candidates are
    // given explicitly or proposed from the data.
    let mut train_args = a.train_args.clone();
    if train_args.signature.is_none() {
        train_args.signature = Some("E2@0".into());
    }
    let run = resolve_run(&train_args)?;
    let file = load_file_config(&a.train_args.config)?;
    Ok(ResolvedSearch {
        run,
        n_iter: a.n_iter.or(file.n_iter).unwrap_or(1000),
    })
}
