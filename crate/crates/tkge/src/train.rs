//! Riemannian SGD training with early stopping on validation MRR.
//!
//! Parameters live in two regimes. Points on curved manifolds (entity
//! initial embeddings and predicate translations, per component with
//! K != 0) follow true RSGD: the Euclidean gradient is rescaled by the
//! inverse metric, `g * ((1 + K ||x||^2) / 2)^2`, and applied through the
//! exponential map at the point. Everything else (velocities, diagonal
//! stretches, biases, periodic blocks, and K = 0 components) lives in flat
//! space and takes plain SGD steps.
//!
//! Each epoch shuffles the reciprocal-augmented training quadruples with a
//! per-epoch RNG stream and walks them in batches; one parameter update is
//! applied per batch. Negative objects are drawn from a stream keyed by
//! `(seed, epoch, augmented quad index)`, so a quadruple's negatives do
//! not depend on its position in the shuffle. Training is single-threaded
//! by construction and defines the reference trajectories; callers may
//! parallelize across runs, and evaluation parallelizes internally in a
//! worker-count-independent way.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::data::{augment_reciprocal, sample_negatives, Dataset, Quadruple};
use crate::error::{Error, Result};
use crate::eval::{evaluate, FilterIndex, FilterMode, Metrics, TieMode};
use crate::geometry::{self, Curvature, EPS_BOUND};
use crate::grad::{accumulate_batch, GradientSet, Sample};
use crate::model::{ModelConfig, ModelParams};
use crate::product::ProductSignature;
use crate::rng::{stream, Domain};
use crate::scalar::norm_sq;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub negatives: usize,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub validate_every: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 50.0,
            negatives: 50,
            batch_size: 256,
            max_epochs: 500,
            validate_every: 50,
            patience: 3,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// All knobs must be positive (`max_epochs` 0 is allowed: evaluate the
    /// initialization and stop).
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        for (name, v) in [
            ("negatives", self.negatives),
            ("batch_size", self.batch_size),
            ("validate_every", self.validate_every),
            ("patience", self.patience),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

/// Inverse-metric rescaling of a Euclidean gradient at point `x`. Flat
/// components pass through unchanged; the K -> 0 limit of the formula
/// would be 1/4, a documented discontinuity shared with the distance
/// convention.
pub fn riemannian_rescale(g: &mut [f64], x: &[f64], k: Curvature) {
    if k.is_flat() {
        return;
    }
    let lam_inv = (1.0 + k.get() * norm_sq(x)) / 2.0;
    let factor = lam_inv * lam_inv;
    for gi in g.iter_mut() {
        *gi *= factor;
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepStats {
    /// Components whose retraction landed on the hyperbolic clamp radius.
    pub clamped_components: usize,
}

fn plain_step(x: &mut [f64], g: &[f64], lr: f64) {
    for (xi, &gi) in x.iter_mut().zip(g) {
        *xi -= lr * gi;
    }
}

fn check_finite(x: &[f64], block: &str) -> Result<()> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: format!("parameter block {block} after update"),
        });
    }
    Ok(())
}

/// RSGD update of one manifold-point row (all components of one entity
/// initial or predicate translation). Returns how many components hit the
/// domain clamp.
fn manifold_row_step(
    x: &mut [f64],
    g: &[f64],
    sig: &ProductSignature,
    lr: f64,
    block: &str,
) -> Result<usize> {
    let mut clamped = 0;
    for (ci, c) in sig.components().iter().enumerate() {
        let r = sig.range(ci);
        let k = c.curvature;
        if k.is_flat() {
            plain_step(&mut x[r.clone()], &g[r], lr);
            continue;
        }
        let mut v: Vec<f64> = g[r.clone()].iter().map(|&gi| -lr * gi).collect();
        riemannian_rescale(&mut v, &x[r.clone()], k);
        let new = geometry::exp_map(&x[r.clone()], &v, k)?;
        if k.is_hyperbolic() {
            // The radial clamp lands exactly on (1 - EPS_BOUND) / sqrt(|K|);
            // organic results essentially never do.
            let target = (1.0 - EPS_BOUND) / (-k.get()).sqrt();
            if (norm_sq(&new).sqrt() - target).abs() <= 1e-12 * target {
                clamped += 1;
            }
        }
        x[r].copy_from_slice(&new);
    }
    check_finite(x, block)?;
    Ok(clamped)
}

/// One optimizer step from accumulated batch gradients. Touched rows only.
pub fn rsgd_step(
    params: &mut ModelParams,
    grads: &GradientSet,
    cfg: &ModelConfig,
    lr: f64,
) -> Result<StepStats> {
    let sig = &cfg.signature;
    let d = params.dim;
    let mut stats = StepStats::default();

    for &e in &grads.touched_entities {
        let e = e as usize;
        let r = e * d..(e + 1) * d;
        stats.clamped_components += manifold_row_step(
            &mut params.entity_initial[r.clone()],
            &grads.entity_initial[r.clone()],
            sig,
            lr,
            "entity_initial",
        )?;
        if cfg.repr.uses_velocity() {
            plain_step(
                &mut params.entity_velocity[r.clone()],
                &grads.entity_velocity[r.clone()],
                lr,
            );
            check_finite(&params.entity_velocity[r.clone()], "entity_velocity")?;
        }
        params.bias_subj[e] -= lr * grads.bias_subj[e];
        params.bias_obj[e] -= lr * grads.bias_obj[e];
        if !params.bias_subj[e].is_finite() || !params.bias_obj[e].is_finite() {
            return Err(Error::NonFinite {
                what: "parameter block biases after update".into(),
            });
        }
        if let Some(per) = params.periodic.as_mut() {
            plain_step(&mut per.amplitude[r.clone()], &grads.periodic_amplitude[r.clone()], lr);
            plain_step(&mut per.frequency[r.clone()], &grads.periodic_frequency[r.clone()], lr);
            plain_step(&mut per.phase[r.clone()], &grads.periodic_phase[r.clone()], lr);
            check_finite(&per.amplitude[r.clone()], "periodic_amplitude")?;
            check_finite(&per.frequency[r.clone()], "periodic_frequency")?;
            check_finite(&per.phase[r], "periodic_phase")?;
        }
    }

    for &p in &grads.touched_predicates {
        let p = p as usize;
        let r = p * d..(p + 1) * d;
        plain_step(&mut params.pred_diag[r.clone()], &grads.pred_diag[r.clone()], lr);
        check_finite(&params.pred_diag[r.clone()], "pred_diag")?;
        stats.clamped_components += manifold_row_step(
            &mut params.pred_translation[r.clone()],
            &grads.pred_translation[r],
            sig,
            lr,
            "pred_translation",
        )?;
    }
    Ok(stats)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Prediction-weighted mean BCE over the epoch.
    pub mean_loss: f64,
    pub clamp_count: usize,
}

/// One full pass: shuffle, batch, accumulate, step. `grads` is a reusable
/// scratch buffer shaped like `params`; it is cleared per batch.
#[allow(clippy::too_many_arguments)]
pub fn train_epoch(
    params: &mut ModelParams,
    cfg: &ModelConfig,
    train_aug: &[Quadruple],
    num_timestamps: usize,
    tc: &TrainConfig,
    epoch: usize,
    grads: &mut GradientSet,
) -> Result<EpochStats> {
    if train_aug.is_empty() {
        return Err(Error::Config("empty training split".into()));
    }
    let mut order: Vec<u32> = (0..train_aug.len() as u32).collect();
    order.shuffle(&mut stream(tc.seed, Domain::Shuffle, epoch as u64, 0));

    let mut loss_sum = 0.0;
    let mut preds = 0usize;
    let mut clamp_count = 0usize;
    let mut negatives = Vec::with_capacity(tc.negatives);
    for chunk in order.chunks(tc.batch_size) {
        let mut batch = Vec::with_capacity(chunk.len());
        for &idx in chunk {
            let quad = train_aug[idx as usize];
            let mut rng = stream(tc.seed, Domain::Negatives, epoch as u64, idx as u64);
            sample_negatives(
                &mut rng,
                params.num_entities,
                quad.o,
                tc.negatives,
                &mut negatives,
            );
            batch.push(Sample {
                quad,
                negatives: negatives.clone(),
            });
        }
        grads.clear();
        let stats = accumulate_batch(params, cfg, num_timestamps, &batch, grads)?;
        let step = rsgd_step(params, grads, cfg, tc.lr)?;
        loss_sum += stats.loss * stats.num_predictions as f64;
        preds += stats.num_predictions;
        clamp_count += step.clamped_components;
    }
    Ok(EpochStats {
        epoch,
        mean_loss: loss_sum / preds as f64,
        clamp_count,
    })
}

/// Best model found by [`fit`], with enough context to score queries.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub params: ModelParams,
    /// Epoch the best parameters were validated at.
    pub epoch: usize,
    pub best_val_mrr: f64,
    pub seed: u64,
    pub num_timestamps: usize,
}

/// One line of the training log (line-delimited JSON downstream).
#[derive(Debug, Clone, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_loss: Option<f64>,
    pub clamp_count: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_mrr: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochRecord>,
    pub stopped_early: bool,
    pub epochs_run: usize,
    /// Metrics of the best validation.
    pub best_metrics: Metrics,
}

/// Train with early stopping: validate every `validate_every` epochs (and
/// at the final epoch), keep the best parameters by validation MRR, stop
/// after `patience` consecutive non-improving validations. The validation
/// filter sees all three splits.
pub fn fit(
    dataset: &Dataset,
    cfg: &ModelConfig,
    tc: &TrainConfig,
    filter_mode: FilterMode,
    tie: TieMode,
) -> Result<FitOutcome> {
    tc.validate()?;
    let num_raw = dataset.num_raw_predicates();
    let train_aug = augment_reciprocal(&dataset.train, num_raw);
    let valid_aug = augment_reciprocal(&dataset.valid, num_raw);
    let test_aug = augment_reciprocal(&dataset.test, num_raw);
    if valid_aug.is_empty() {
        return Err(Error::Config("empty validation split".into()));
    }
    let filter = FilterIndex::build(&[&train_aug, &valid_aug, &test_aug]);
    let nt = dataset.num_timestamps();

    let mut params = ModelParams::init(dataset.num_entities(), num_raw, cfg, tc.seed);
    let mut grads = GradientSet::zeros_like(&params);

    let mut best: Option<(ModelParams, usize, Metrics)> = None;
    let mut strikes = 0usize;
    let mut log = Vec::new();
    let mut stopped_early = false;
    let mut epochs_run = 0usize;

    let validate = |params: &ModelParams,
                        epoch: usize,
                        best: &mut Option<(ModelParams, usize, Metrics)>,
                        strikes: &mut usize|
     -> Result<f64> {
        let m = evaluate(params, cfg, &valid_aug, &filter, nt, filter_mode, tie)?;
        let improved = best.as_ref().is_none_or(|(_, _, b)| m.mrr > b.mrr);
        if improved {
            *best = Some((params.clone(), epoch, m));
            *strikes = 0;
        } else {
            *strikes += 1;
        }
        log::info!(
            "epoch {epoch}: val mrr {:.4}{}",
            m.mrr,
            if improved { " (best)" } else { "" }
        );
        Ok(m.mrr)
    };

    if tc.max_epochs == 0 {
        let mrr = validate(&params, 0, &mut best, &mut strikes)?;
        log.push(EpochRecord {
            epoch: 0,
            mean_loss: None,
            clamp_count: 0,
            val_mrr: Some(mrr),
        });
    }

    for epoch in 1..=tc.max_epochs {
        let stats = train_epoch(&mut params, cfg, &train_aug, nt, tc, epoch, &mut grads)?;
        epochs_run = epoch;
        let mut record = EpochRecord {
            epoch,
            mean_loss: Some(stats.mean_loss),
            clamp_count: stats.clamp_count,
            val_mrr: None,
        };
        if epoch % tc.validate_every == 0 || epoch == tc.max_epochs {
            let mrr = validate(&params, epoch, &mut best, &mut strikes)?;
            record.val_mrr = Some(mrr);
            log.push(record);
            if strikes >= tc.patience {
                stopped_early = true;
                break;
            }
        } else {
            log.push(record);
        }
    }

    let (best_params, best_epoch, best_metrics) =
        best.expect("at least one validation ran");
    Ok(FitOutcome {
        checkpoint: Checkpoint {
            model: cfg.clone(),
            params: best_params,
            epoch: best_epoch,
            best_val_mrr: best_metrics.mrr,
            seed: tc.seed,
            num_timestamps: nt,
        },
        log,
        stopped_early,
        epochs_run,
        best_metrics,
    })
}

#[derive(Debug, Clone)]
pub struct SearchResult {
    pub signature: ProductSignature,
    pub jittered: bool,
    pub val_mrr: f64,
    pub best_epoch: usize,
}

/// Train `budget` configurations and rank them by validation MRR. The
/// first pass walks the candidate list verbatim; once candidates are
/// exhausted, further rounds multiply each curved component's curvature by
/// a lognormal jitter drawn from a stream keyed by the configuration
/// index, exploring around the proposed values without changing signs.
#[allow(clippy::too_many_arguments)]
pub fn signature_search(
    dataset: &Dataset,
    candidates: &[ProductSignature],
    budget: usize,
    base: &ModelConfig,
    tc: &TrainConfig,
    filter_mode: FilterMode,
    tie: TieMode,
) -> Result<Vec<SearchResult>> {
    if candidates.is_empty() || budget == 0 {
        return Err(Error::Config("need at least one candidate and budget >= 1".into()));
    }
    let normal: Normal<f64> = Normal::new(0.0, 1.0).expect("valid stddev");
    let mut results = Vec::with_capacity(budget);
    for j in 0..budget {
        let template = &candidates[j % candidates.len()];
        let jittered = j >= candidates.len();
        let signature = if jittered {
            let mut rng = stream(tc.seed, Domain::Search, j as u64, 0);
            let comps: Result<Vec<_>> = template
                .components()
                .iter()
                .map(|c| {
                    let k = c.curvature.get();
                    let jit = if k == 0.0 {
                        Curvature::ZERO
                    } else {
                        Curvature::new(k * (0.25 * normal.sample(&mut rng)).exp())?
                    };
                    crate::product::ComponentSpec::new(c.dim, jit)
                })
                .collect();
            ProductSignature::new(comps?)?
        } else {
            template.clone()
        };
        let mut cfg = base.clone();
        cfg.signature = signature.clone();
        let outcome = fit(dataset, &cfg, tc, filter_mode, tie)?;
        log::info!(
            "search {j}: {signature} -> val mrr {:.4}",
            outcome.best_metrics.mrr
        );
        results.push(SearchResult {
            signature,
            jittered,
            val_mrr: outcome.best_metrics.mrr,
            best_epoch: outcome.checkpoint.epoch,
        });
    }
    // Stable sort: ties keep earlier (unjittered-first) configurations up.
    results.sort_by(|a, b| b.val_mrr.partial_cmp(&a.val_mrr).expect("finite MRR"));
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::TimeScale;
    use crate::grad::batch_loss;
    use crate::model::{ReprVariant, ScoreVariant};

    fn cfg(sig: &str) -> ModelConfig {
        ModelConfig::new(sig.parse::<ProductSignature>().unwrap())
    }

    #[test]
    fn rescale_frozen_examples() {
        let k = Curvature::new(-1.0).unwrap();
        let mut g = vec![1.0, 2.0];
        riemannian_rescale(&mut g, &[0.0, 0.0], k);
        assert_eq!(g, vec![0.25, 0.5]);

        let mut g = vec![1.0];
        riemannian_rescale(&mut g, &[0.5, 0.0], k);
        assert!((g[0] - 0.140625).abs() < 1e-15);

        let mut g = vec![1.0, 2.0];
        riemannian_rescale(&mut g, &[0.5, 0.0], Curvature::ZERO);
        assert_eq!(g, vec![1.0, 2.0]);
    }

    fn manual_grads(params: &ModelParams) -> GradientSet {
        GradientSet::zeros_like(params)
    }

    #[test]
    fn rsgd_origin_step_matches_hand_computation() {
        // Hyperbolic origin, g = (0.4, 0), lr = 1: rescale gives 0.1, and
        // exp_0 of (-0.1, 0) is (-tanh(0.1), 0).
        let cfg = cfg("P2@-1");
        let mut params = ModelParams::init(2, 1, &cfg, 1);
        params.entity_initial[..2].copy_from_slice(&[0.0, 0.0]);
        let mut grads = manual_grads(&params);
        grads.entity_initial[0] = 0.4;
        grads.touched_entities.push(0);
        rsgd_step(&mut params, &grads, &cfg, 1.0).unwrap();
        assert!((params.entity_initial[0] + 0.1f64.tanh()).abs() < 1e-12);
        assert!((params.entity_initial[0] + 0.099668).abs() < 1e-6);
        assert_eq!(params.entity_initial[1], 0.0);
    }

    #[test]
    fn euclidean_step_is_plain_sgd() {
        let cfg = cfg("E2@0");
        let mut params = ModelParams::init(2, 1, &cfg, 1);
        params.entity_initial[..2].copy_from_slice(&[0.3, 0.7]);
        let mut grads = manual_grads(&params);
        grads.entity_initial[0] = 1.0;
        grads.touched_entities.push(0);
        rsgd_step(&mut params, &grads, &cfg, 0.1).unwrap();
        assert!((params.entity_initial[0] - 0.2).abs() < 1e-15);
        assert_eq!(params.entity_initial[1], 0.7);
    }

    #[test]
    fn zero_gradient_leaves_params_bitwise_unchanged() {
        let cfg = cfg("P3@-0.7,S2@0.5,E2@0");
        let mut params = ModelParams::init(3, 1, &cfg, 2);
        let before = params.clone();
        let mut grads = manual_grads(&params);
        grads.touched_entities.extend([0, 1, 2]);
        grads.touched_predicates.extend([0, 1]);
        rsgd_step(&mut params, &grads, &cfg, 50.0).unwrap();
        assert_eq!(params, before);
    }

    #[test]
    fn steps_keep_points_in_domain() {
        let cfg = cfg("P2@-2,S2@1");
        let mut params = ModelParams::init(4, 1, &cfg, 3);
        let mut grads = manual_grads(&params);
        // Aggressive fixed gradients for several steps.
        grads.touched_entities.extend([0, 1, 2, 3]);
        grads.touched_predicates.extend([0, 1]);
        for i in 0..grads.entity_initial.len() {
            grads.entity_initial[i] = if i % 2 == 0 { 3.0 } else { -2.0 };
        }
        for i in 0..grads.pred_translation.len() {
            grads.pred_translation[i] = 1.5;
        }
        for _ in 0..25 {
            rsgd_step(&mut params, &grads, &cfg, 10.0).unwrap();
        }
        for e in 0..4 {
            let r = e * 4..(e + 1) * 4;
            cfg.signature.validate(&params.entity_initial[r]).unwrap();
        }
        for p in 0..2 {
            let r = p * 4..(p + 1) * 4;
            cfg.signature.validate(&params.pred_translation[r]).unwrap();
        }
    }

    fn tiny_quads() -> Vec<Quadruple> {
        vec![
            Quadruple { s: 0, p: 0, o: 1, t: 0 },
            Quadruple { s: 1, p: 0, o: 2, t: 1 },
            Quadruple { s: 2, p: 1, o: 3, t: 2 },
            Quadruple { s: 3, p: 1, o: 0, t: 0 },
        ]
    }

    #[test]
    fn repeated_steps_on_fixed_batch_reduce_loss() {
        // lr scaled down 10x from the default, with the default negative count
        // so per-prediction gradient seeds stay in the regime the default lr
        // was sized for.
        let quads = [
            Quadruple { s: 0, p: 0, o: 1, t: 0 },
            Quadruple { s: 2, p: 0, o: 3, t: 1 },
            Quadruple { s: 4, p: 1, o: 5, t: 2 },
            Quadruple { s: 6, p: 1, o: 7, t: 0 },
        ];
        let negatives_per_group = TrainConfig::default().negatives;
        let mut decreased = 0;
        for init_seed in 0..100u64 {
            let cfg = cfg("P2@-1,E2@0");
            let mut params = ModelParams::init(60, 2, &cfg, init_seed);
            let mut grads = GradientSet::zeros_like(&params);
            let batch: Vec<Sample> = quads
                .into_iter()
                .map(|quad| {
                    let mut rng = stream(init_seed, Domain::Negatives, 0, quad.s as u64);
                    let mut negatives = Vec::new();
                    sample_negatives(&mut rng, 60, quad.o, negatives_per_group, &mut negatives);
                    Sample { quad, negatives }
                })
                .collect();
            let (before, _) = batch_loss(&params, &cfg, 3, &batch).unwrap();
            for _ in 0..10 {
                grads.clear();
                accumulate_batch(&params, &cfg, 3, &batch, &mut grads).unwrap();
                rsgd_step(&mut params, &grads, &cfg, 5.0).unwrap();
            }
            let (after, _) = batch_loss(&params, &cfg, 3, &batch).unwrap();
            if after < before {
                decreased += 1;
            }
        }
        assert!(decreased >= 95, "loss decreased in only {decreased}/100 runs");
    }

    fn tiny_dataset() -> Dataset {
        Dataset {
            entities: crate::data::Vocab::from_labels(
                (0..4).map(|i| format!("e{i}")).collect(),
            )
            .unwrap(),
            predicates: crate::data::Vocab::from_labels(vec!["r0".into(), "r1".into()])
                .unwrap(),
            timestamps: vec!["0".into(), "1".into(), "2".into()],
            time_keys: Vec::new(),
            train: tiny_quads(),
            valid: vec![Quadruple { s: 0, p: 1, o: 2, t: 1 }],
            test: vec![Quadruple { s: 1, p: 0, o: 3, t: 2 }],
        }
    }

    fn quick_tc(seed: u64) -> TrainConfig {
        TrainConfig {
            lr: 5.0,
            negatives: 3,
            batch_size: 4,
            max_epochs: 2,
            validate_every: 1,
            patience: 10,
            seed,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn epoch_loss_decreases_for_most_seeds() {
        let mut improved = 0;
        for seed in 0..5u64 {
            let dataset = tiny_dataset();
            let cfg = cfg("P2@-1,E2@0");
            let tc = quick_tc(seed);
            let train_aug = augment_reciprocal(&dataset.train, 2);
            let mut params = ModelParams::init(4, 2, &cfg, seed);
            let mut grads = GradientSet::zeros_like(&params);
            let e1 = train_epoch(&mut params, &cfg, &train_aug, 3, &tc, 1, &mut grads).unwrap();
            let e2 = train_epoch(&mut params, &cfg, &train_aug, 3, &tc, 2, &mut grads).unwrap();
            if e2.mean_loss < e1.mean_loss {
                improved += 1;
            }
        }
        assert!(improved >= 4, "loss fell across epochs for only {improved}/5 seeds");
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let run = |seed: u64| -> Vec<f64> {
            let dataset = tiny_dataset();
            let cfg = cfg("P2@-1,E2@0");
            let tc = quick_tc(seed);
            fit(&dataset, &cfg, &tc, FilterMode::TimeAware, TieMode::Mean)
                .unwrap()
                .log
                .iter()
                .filter_map(|r| r.mean_loss)
                .collect()
        };
        assert_eq!(run(7), run(7));
        assert_ne!(run(7), run(8));
    }

    #[test]
    fn single_batch_when_batch_size_covers_dataset() {
        let dataset = tiny_dataset();
        let cfg = cfg("P2@-1");
        let mut tc = quick_tc(1);
        tc.batch_size = 1000;
        let train_aug = augment_reciprocal(&dataset.train, 2);
        let mut params = ModelParams::init(4, 2, &cfg, 1);
        let mut grads = GradientSet::zeros_like(&params);
        // One batch of 8 augmented quads, (3 + 1) predictions each.
        let stats = train_epoch(&mut params, &cfg, &train_aug, 3, &tc, 1, &mut grads).unwrap();
        assert!(stats.mean_loss.is_finite());
        assert_eq!(grads.touched_predicates.len(), 4);
    }

    #[test]
    fn fit_with_zero_epochs_returns_validated_initialization() {
        let dataset = tiny_dataset();
        let cfg = cfg("P2@-1,E2@0");
        let mut tc = quick_tc(3);
        tc.max_epochs = 0;
        let out = fit(&dataset, &cfg, &tc, FilterMode::TimeAware, TieMode::Mean).unwrap();
        assert_eq!(out.epochs_run, 0);
        assert_eq!(out.checkpoint.epoch, 0);
        let want = ModelParams::init(4, 2, &cfg, 3);
        assert_eq!(out.checkpoint.params, want);
        assert!(out.checkpoint.best_val_mrr > 0.0);
        assert_eq!(out.log.len(), 1);
        assert!(out.log[0].val_mrr.is_some());
    }

    #[test]
    fn fit_stops_after_patience_non_improving_validations() {
        let dataset = tiny_dataset();
        let cfg = cfg("P2@-1");
        // An effectively zero learning rate freezes the scores, so every
        // validation after the first is exactly non-improving.
        let tc = TrainConfig {
            lr: 1e-15,
            negatives: 2,
            batch_size: 8,
            max_epochs: 10,
            validate_every: 1,
            patience: 2,
            seed: 5,
        };
        let out = fit(&dataset, &cfg, &tc, FilterMode::TimeAware, TieMode::Mean).unwrap();
        assert!(out.stopped_early);
        assert_eq!(out.epochs_run, 3);
        assert_eq!(out.checkpoint.epoch, 1);
    }

    #[test]
    fn search_budget_one_trains_first_candidate_verbatim() {
        let dataset = tiny_dataset();
        let base = ModelConfig::new("P2@-1".parse().unwrap());
        let candidates: Vec<ProductSignature> =
            vec!["P2@-1,E2@0".parse().unwrap(), "E4@0".parse().unwrap()];
        let mut tc = quick_tc(2);
        tc.max_epochs = 1;
        let results = signature_search(
            &dataset,
            &candidates,
            1,
            &base,
            &tc,
            FilterMode::TimeAware,
            TieMode::Mean,
        )
        .unwrap();
        assert_eq!(results.len(), 1);
        assert!(!results[0].jittered);
        assert_eq!(results[0].signature.to_string(), "P2@-1,E2@0");
    }

    #[test]
    fn search_is_deterministic_and_sorted() {
        let dataset = tiny_dataset();
        let base = ModelConfig::new("P2@-1".parse().unwrap());
        let candidates: Vec<ProductSignature> =
            vec!["P2@-1".parse().unwrap(), "E2@0".parse().unwrap()];
        let mut tc = quick_tc(2);
        tc.max_epochs = 1;
        let run = || {
            signature_search(
                &dataset,
                &candidates,
                4,
                &base,
                &tc,
                FilterMode::TimeAware,
                TieMode::Mean,
            )
            .unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.len(), 4);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.signature.to_string(), y.signature.to_string());
            assert_eq!(x.val_mrr, y.val_mrr);
        }
        for w in a.windows(2) {
            assert!(w[0].val_mrr >= w[1].val_mrr);
        }
        // Rounds past the candidate list carry jitter; curvature signs hold.
        assert!(a.iter().any(|r| r.jittered));
        for r in &a {
            for c in r.signature.components() {
                assert!(c.curvature.get() <= 0.0 || c.kind() == 'S');
            }
        }
    }

    #[test]
    fn train_config_rejects_non_positive_knobs() {
        let mut tc = TrainConfig::default();
        tc.lr = 0.0;
        assert!(tc.validate().is_err());
        let mut tc = TrainConfig::default();
        tc.negatives = 0;
        assert!(tc.validate().is_err());
        let mut tc = TrainConfig { validate_every: 0, ..TrainConfig::default() };
        assert!(tc.validate().is_err());
        tc.validate_every = 50;
        assert!(tc.validate().is_ok());
    }

    #[test]
    fn static_and_dynamic_share_initialization_shape() {
        // Guard: switching repr must not silently change parameter shapes.
        let mut c1 = cfg("P2@-1,E2@0");
        c1.repr = ReprVariant::Static;
        c1.score = ScoreVariant::StretchTranslate;
        c1.time_scale = TimeScale::Normalized;
        let p1 = ModelParams::init(5, 2, &c1, 0);
        let mut c2 = c1.clone();
        c2.repr = ReprVariant::Linear;
        let p2 = ModelParams::init(5, 2, &c2, 0);
        assert_eq!(p1.entity_initial.len(), p2.entity_initial.len());
        assert_eq!(p1.entity_velocity.len(), p2.entity_velocity.len());
    }
}
