//! Reverse-mode gradients of the training loss.
//!
//! Training minimizes binary cross-entropy over sigmoid scores: every
//! training quadruple contributes one positive prediction and `n` sampled
//! negative objects, and the batch loss is the mean over all predictions.
//!
//! The forward pass is the same generic code evaluation uses, instantiated
//! with tape variables instead of `f64`. Each quadruple gets its own tape
//! group: the subject side and the per-candidate object sides are recorded
//! once, every candidate score is seeded analytically with
//! `dL/dphi = (sigmoid(phi) - y) / M` (the sigmoid and the log loss stay
//! off the tape), and a single backward sweep per group accumulates into a
//! [`GradientSet`]. Candidate entities are deduplicated inside a group, so
//! a repeated negative costs one forward evaluation and simply receives the
//! summed seed weight.

use std::collections::HashMap;

use crate::data::{time_value, Quadruple};
use crate::error::{Error, Result};
use crate::geometry::EPS_BOUND;
use crate::model::{
    entity_point, score_sides, side_components, EntityInputs, ModelConfig, ModelParams,
    PredicateInputs, Side,
};
use crate::rng::{stream, Domain};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use rand::Rng;

/// One training example: a gold quadruple plus sampled negative objects.
#[derive(Debug, Clone)]
pub struct Sample {
    pub quad: Quadruple,
    pub negatives: Vec<u32>,
}

/// Numerically stable `1 / (1 + exp(-x))`.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy of `sigmoid(phi)` against label `y`. The predicted
/// probability is clamped to `[1e-15, 1 - 1e-15]` before the logs, which
/// caps a single prediction's loss at about 34.5 instead of letting a
/// saturated score produce `inf`.
pub fn bce(phi: f64, y: f64) -> f64 {
    let p = sigmoid(phi).clamp(1e-15, 1.0 - 1e-15);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// Mean BCE over paired scores and 0/1 labels. The denominator counts every
/// prediction, positives and negatives alike.
pub fn bce_loss(scores: &[f64], labels: &[f64]) -> f64 {
    assert_eq!(scores.len(), labels.len());
    let sum: f64 = scores.iter().zip(labels).map(|(&s, &y)| bce(s, y)).sum();
    sum / scores.len() as f64
}

/// Euclidean gradients of the batch loss, stored in blocks that mirror
/// [`ModelParams`]. Blocks are dense; `touched_*` lists which rows hold
/// nonzero entries so the optimizer and [`clear`](GradientSet::clear) touch
/// only those.
#[derive(Debug, Clone)]
pub struct GradientSet {
    dim: usize,
    pub entity_initial: Vec<f64>,
    pub entity_velocity: Vec<f64>,
    pub bias_subj: Vec<f64>,
    pub bias_obj: Vec<f64>,
    pub pred_diag: Vec<f64>,
    pub pred_translation: Vec<f64>,
    /// Empty unless the representation has periodic terms.
    pub periodic_amplitude: Vec<f64>,
    pub periodic_frequency: Vec<f64>,
    pub periodic_phase: Vec<f64>,
    /// Sorted, deduplicated after [`accumulate_batch`] returns.
    pub touched_entities: Vec<u32>,
    pub touched_predicates: Vec<u32>,
}

impl GradientSet {
    pub fn zeros_like(params: &ModelParams) -> GradientSet {
        let ed = params.num_entities * params.dim;
        let pd = params.num_predicates * params.dim;
        let per = params.periodic.is_some();
        GradientSet {
            dim: params.dim,
            entity_initial: vec![0.0; ed],
            entity_velocity: vec![0.0; ed],
            bias_subj: vec![0.0; params.num_entities],
            bias_obj: vec![0.0; params.num_entities],
            pred_diag: vec![0.0; pd],
            pred_translation: vec![0.0; pd],
            periodic_amplitude: vec![0.0; if per { ed } else { 0 }],
            periodic_frequency: vec![0.0; if per { ed } else { 0 }],
            periodic_phase: vec![0.0; if per { ed } else { 0 }],
            touched_entities: Vec::new(),
            touched_predicates: Vec::new(),
        }
    }

    /// Zero the touched rows and forget the touch lists. O(touched), not
    /// O(model), so large vocabularies stay cheap per batch.
    pub fn clear(&mut self) {
        let d = self.dim;
        for &e in &self.touched_entities {
            let e = e as usize;
            self.entity_initial[e * d..(e + 1) * d].fill(0.0);
            self.entity_velocity[e * d..(e + 1) * d].fill(0.0);
            self.bias_subj[e] = 0.0;
            self.bias_obj[e] = 0.0;
            if !self.periodic_amplitude.is_empty() {
                self.periodic_amplitude[e * d..(e + 1) * d].fill(0.0);
                self.periodic_frequency[e * d..(e + 1) * d].fill(0.0);
                self.periodic_phase[e * d..(e + 1) * d].fill(0.0);
            }
        }
        for &p in &self.touched_predicates {
            let p = p as usize;
            self.pred_diag[p * d..(p + 1) * d].fill(0.0);
            self.pred_translation[p * d..(p + 1) * d].fill(0.0);
        }
        self.touched_entities.clear();
        self.touched_predicates.clear();
    }

    fn finish(&mut self) {
        self.touched_entities.sort_unstable();
        self.touched_entities.dedup();
        self.touched_predicates.sort_unstable();
        self.touched_predicates.dedup();
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchStats {
    /// Mean binary cross-entropy over all predictions in the batch.
    pub loss: f64,
    pub num_predictions: usize,
}

/// Per-entity leaves and cached forward results inside one tape group.
struct EntityNode<'t> {
    id: u32,
    initial: Vec<Var<'t>>,
    velocity: Vec<Var<'t>>,
    periodic: Option<[Vec<Var<'t>>; 3]>,
    point: Vec<Var<'t>>,
    bias_subj: Option<Var<'t>>,
    /// Object-side transform, object bias and score, shared by duplicate
    /// candidates.
    object: Option<(Var<'t>, Var<'t>)>,
}

/// Accumulate gradients of the mean BCE loss over `samples` into `grads`.
/// `grads` must have been created by [`GradientSet::zeros_like`] for the
/// same parameter shapes and cleared since its last use.
pub fn accumulate_batch(
    params: &ModelParams,
    cfg: &ModelConfig,
    num_timestamps: usize,
    samples: &[Sample],
    grads: &mut GradientSet,
) -> Result<BatchStats> {
    let m_total: usize = samples.iter().map(|s| 1 + s.negatives.len()).sum();
    if m_total == 0 {
        return Err(Error::Config("empty batch".into()));
    }
    let inv_m = 1.0 / m_total as f64;
    let tape = Tape::with_capacity(1 << 14);
    let mut loss_sum = 0.0;
    for sample in samples {
        tape.clear();
        loss_sum += group_backward(&tape, params, cfg, num_timestamps, sample, inv_m, grads)?;
    }
    grads.finish();
    // Same grouping and division as batch_loss, so the two stay bit-equal.
    Ok(BatchStats {
        loss: loss_sum / m_total as f64,
        num_predictions: m_total,
    })
}

/// Record one quadruple group, sweep it backward once, scatter adjoints.
/// Returns the group's summed (unnormalized) BCE.
fn group_backward<'t>(
    tape: &'t Tape,
    params: &ModelParams,
    cfg: &ModelConfig,
    num_timestamps: usize,
    sample: &Sample,
    inv_m: f64,
    grads: &mut GradientSet,
) -> Result<f64> {
    let d = params.dim;
    let q = sample.quad;
    let tau = time_value(q.t, num_timestamps, cfg.time_scale);
    let uses_velocity = cfg.repr.uses_velocity();

    let prow = q.p as usize * d..(q.p as usize + 1) * d;
    let diag: Vec<Var<'t>> = params.pred_diag[prow.clone()]
        .iter()
        .map(|&v| tape.leaf(v))
        .collect();
    let trans: Vec<Var<'t>> = params.pred_translation[prow]
        .iter()
        .map(|&v| tape.leaf(v))
        .collect();
    let pred = PredicateInputs {
        diag: &diag,
        translation: &trans,
    };

    let mut nodes: Vec<EntityNode<'t>> = Vec::with_capacity(2 + sample.negatives.len());
    let mut by_id: HashMap<u32, usize> = HashMap::with_capacity(nodes.capacity());

    let ensure = |nodes: &mut Vec<EntityNode<'t>>,
                  by_id: &mut HashMap<u32, usize>,
                  e: u32|
     -> usize {
        if let Some(&i) = by_id.get(&e) {
            return i;
        }
        let row = e as usize * d..(e as usize + 1) * d;
        let initial: Vec<Var<'t>> = params.entity_initial[row.clone()]
            .iter()
            .map(|&v| tape.leaf(v))
            .collect();
        let velocity: Vec<Var<'t>> = if uses_velocity {
            params.entity_velocity[row.clone()]
                .iter()
                .map(|&v| tape.leaf(v))
                .collect()
        } else {
            Vec::new()
        };
        let periodic: Option<[Vec<Var<'t>>; 3]> = params.periodic.as_ref().map(|p| {
            [
                p.amplitude[row.clone()].iter().map(|&v| tape.leaf(v)).collect(),
                p.frequency[row.clone()].iter().map(|&v| tape.leaf(v)).collect(),
                p.phase[row.clone()].iter().map(|&v| tape.leaf(v)).collect(),
            ]
        });
        let point = {
            let inputs = EntityInputs {
                initial: &initial,
                velocity: &velocity,
                periodic: periodic.as_ref().map(|[a, f, ph]| {
                    (a.as_slice(), f.as_slice(), ph.as_slice())
                }),
            };
            entity_point(&inputs, tau, cfg)
        };
        nodes.push(EntityNode {
            id: e,
            initial,
            velocity,
            periodic,
            point,
            bias_subj: None,
            object: None,
        });
        by_id.insert(e, nodes.len() - 1);
        nodes.len() - 1
    };

    let si = ensure(&mut nodes, &mut by_id, q.s);
    let b_s = tape.leaf(params.bias_subj[q.s as usize]);
    nodes[si].bias_subj = Some(b_s);
    let subj_side = side_components(&nodes[si].point.clone(), &pred, cfg, Side::Subject)?;

    let mut seeds: Vec<(Var<'t>, f64)> = Vec::with_capacity(1 + sample.negatives.len());
    let mut loss_sum = 0.0;
    let golds = std::iter::once((q.o, 1.0));
    let negs = sample.negatives.iter().map(|&o| (o, 0.0));
    for (o, y) in golds.chain(negs) {
        let oi = ensure(&mut nodes, &mut by_id, o);
        let score = match nodes[oi].object {
            Some((_, score)) => score,
            None => {
                let b_o = tape.leaf(params.bias_obj[o as usize]);
                let obj_side =
                    side_components(&nodes[oi].point.clone(), &pred, cfg, Side::Object)?;
                let score = score_sides(&subj_side, &obj_side, b_s, b_o, cfg)?;
                nodes[oi].object = Some((b_o, score));
                score
            }
        };
        let phi = score.value();
        if !phi.is_finite() {
            return Err(Error::NonFinite {
                what: format!("score of ({}, {}, {}, {})", q.s, q.p, o, q.t),
            });
        }
        loss_sum += bce(phi, y);
        seeds.push((score, (sigmoid(phi) - y) * inv_m));
    }

    let adj = tape.backward_multi(&seeds);

    for node in &nodes {
        let e = node.id as usize;
        grads.touched_entities.push(node.id);
        for j in 0..d {
            grads.entity_initial[e * d + j] += adj[node.initial[j].index()];
        }
        if uses_velocity {
            for j in 0..d {
                grads.entity_velocity[e * d + j] += adj[node.velocity[j].index()];
            }
        }
        if let Some([a, f, ph]) = &node.periodic {
            for j in 0..d {
                grads.periodic_amplitude[e * d + j] += adj[a[j].index()];
                grads.periodic_frequency[e * d + j] += adj[f[j].index()];
                grads.periodic_phase[e * d + j] += adj[ph[j].index()];
            }
        }
        if let Some(b) = node.bias_subj {
            grads.bias_subj[e] += adj[b.index()];
        }
        if let Some((b, _)) = node.object {
            grads.bias_obj[e] += adj[b.index()];
        }
    }
    grads.touched_predicates.push(q.p);
    let p = q.p as usize;
    for j in 0..d {
        grads.pred_diag[p * d + j] += adj[diag[j].index()];
        grads.pred_translation[p * d + j] += adj[trans[j].index()];
    }

    Ok(loss_sum)
}

/// Forward-only batch loss on the `f64` path, in the exact candidate order
/// [`accumulate_batch`] uses. Returns `(mean loss, num predictions)`.
pub fn batch_loss(
    params: &ModelParams,
    cfg: &ModelConfig,
    num_timestamps: usize,
    samples: &[Sample],
) -> Result<(f64, usize)> {
    let m_total: usize = samples.iter().map(|s| 1 + s.negatives.len()).sum();
    if m_total == 0 {
        return Err(Error::Config("empty batch".into()));
    }
    let mut loss_sum = 0.0;
    for sample in samples {
        let q = sample.quad;
        let tau = time_value(q.t, num_timestamps, cfg.time_scale);
        let pred = params.predicate_inputs(q.p);
        let subj_pt = entity_point(&params.entity_inputs(q.s), tau, cfg);
        let subj = side_components(&subj_pt, &pred, cfg, Side::Subject)?;
        let b_s = params.bias_subj[q.s as usize];
        let golds = std::iter::once((q.o, 1.0));
        let negs = sample.negatives.iter().map(|&o| (o, 0.0));
        // Per-group subtotal mirrors accumulate_batch's summation order.
        let mut group = 0.0;
        for (o, y) in golds.chain(negs) {
            let obj_pt = entity_point(&params.entity_inputs(o), tau, cfg);
            let obj = side_components(&obj_pt, &pred, cfg, Side::Object)?;
            let phi = score_sides(&subj, &obj, b_s, params.bias_obj[o as usize], cfg)?;
            group += bce(phi, y);
        }
        loss_sum += group;
    }
    Ok((loss_sum / m_total as f64, m_total))
}

/// Report from [`fd_check`]: analytic gradients versus central finite
/// differences on randomly probed coordinates.
#[derive(Debug, Clone)]
pub struct FdReport {
    pub checked: usize,
    /// Probes skipped because the owning point sits too close to a domain
    /// boundary, where the radial clamp makes the loss non-smooth.
    pub skipped_boundary: usize,
    pub max_rel_err: f64,
    pub worst_coordinate: String,
    pub tolerance: f64,
    /// One entry per probed parameter block, in probe order.
    pub per_block: Vec<BlockFdStats>,
}

#[derive(Debug, Clone)]
pub struct BlockFdStats {
    pub block: &'static str,
    pub checked: usize,
    pub max_rel_err: f64,
}

impl FdReport {
    pub fn passed(&self) -> bool {
        self.checked > 0 && self.max_rel_err <= self.tolerance
    }

    /// Names of blocks whose worst probe exceeds the tolerance.
    pub fn failing_blocks(&self) -> Vec<&'static str> {
        self.per_block
            .iter()
            .filter(|b| b.max_rel_err > self.tolerance)
            .map(|b| b.block)
            .collect()
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Block {
    EntityInitial,
    EntityVelocity,
    BiasSubj,
    BiasObj,
    PredDiag,
    PredTranslation,
    PeriodicAmplitude,
    PeriodicFrequency,
    PeriodicPhase,
}

impl Block {
    fn name(self) -> &'static str {
        match self {
            Block::EntityInitial => "entity_initial",
            Block::EntityVelocity => "entity_velocity",
            Block::BiasSubj => "bias_subj",
            Block::BiasObj => "bias_obj",
            Block::PredDiag => "pred_diag",
            Block::PredTranslation => "pred_translation",
            Block::PeriodicAmplitude => "periodic_amplitude",
            Block::PeriodicFrequency => "periodic_frequency",
            Block::PeriodicPhase => "periodic_phase",
        }
    }
}

fn block_slot<'a>(params: &'a mut ModelParams, block: Block) -> &'a mut Vec<f64> {
    match block {
        Block::EntityInitial => &mut params.entity_initial,
        Block::EntityVelocity => &mut params.entity_velocity,
        Block::BiasSubj => &mut params.bias_subj,
        Block::BiasObj => &mut params.bias_obj,
        Block::PredDiag => &mut params.pred_diag,
        Block::PredTranslation => &mut params.pred_translation,
        Block::PeriodicAmplitude => &mut params.periodic.as_mut().expect("periodic").amplitude,
        Block::PeriodicFrequency => &mut params.periodic.as_mut().expect("periodic").frequency,
        Block::PeriodicPhase => &mut params.periodic.as_mut().expect("periodic").phase,
    }
}

fn analytic_at(grads: &GradientSet, block: Block, idx: usize) -> f64 {
    match block {
        Block::EntityInitial => grads.entity_initial[idx],
        Block::EntityVelocity => grads.entity_velocity[idx],
        Block::BiasSubj => grads.bias_subj[idx],
        Block::BiasObj => grads.bias_obj[idx],
        Block::PredDiag => grads.pred_diag[idx],
        Block::PredTranslation => grads.pred_translation[idx],
        Block::PeriodicAmplitude => grads.periodic_amplitude[idx],
        Block::PeriodicFrequency => grads.periodic_frequency[idx],
        Block::PeriodicPhase => grads.periodic_phase[idx],
    }
}

/// True when the manifold point owning coordinate `row * dim + col` of a
/// point-valued block lies within `10 * EPS_BOUND` of a hyperbolic domain
/// boundary; those coordinates are excluded from finite-difference probing
/// because the clamp kinks the loss there.
fn near_boundary(block_data: &[f64], row: usize, col: usize, cfg: &ModelConfig) -> bool {
    let sig = &cfg.signature;
    let d = sig.total_dim();
    for (ci, c) in sig.components().iter().enumerate() {
        let r = sig.range(ci);
        if !r.contains(&col) {
            continue;
        }
        let k = c.curvature.get();
        if k >= 0.0 {
            return false;
        }
        let x = &block_data[row * d + r.start..row * d + r.end];
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        return norm * (-k).sqrt() >= 1.0 - 10.0 * EPS_BOUND;
    }
    false
}

/// Probe random touched coordinates of every active block and compare the
/// analytic gradient against `(L(x + h) - L(x - h)) / 2h`. The error metric
/// is `|a - fd| / max(1, |a|, |fd|)`.
#[allow(clippy::too_many_arguments)]
pub fn fd_check(
    params: &ModelParams,
    cfg: &ModelConfig,
    num_timestamps: usize,
    samples: &[Sample],
    probes_per_block: usize,
    seed: u64,
    h: f64,
    tolerance: f64,
) -> Result<FdReport> {
    let mut grads = GradientSet::zeros_like(params);
    accumulate_batch(params, cfg, num_timestamps, samples, &mut grads)?;
    fd_check_against(
        params,
        cfg,
        num_timestamps,
        samples,
        probes_per_block,
        seed,
        h,
        tolerance,
        &grads,
    )
}

/// Like [`fd_check`] but validates a caller-supplied gradient set, so a
/// deliberately corrupted gradient can be shown to fail with the offending
/// block named in the report.
#[allow(clippy::too_many_arguments)]
pub fn fd_check_against(
    params: &ModelParams,
    cfg: &ModelConfig,
    num_timestamps: usize,
    samples: &[Sample],
    probes_per_block: usize,
    seed: u64,
    h: f64,
    tolerance: f64,
    grads: &GradientSet,
) -> Result<FdReport> {
    if grads.touched_entities.is_empty() {
        return Err(Error::Config("finite-difference batch touched nothing".into()));
    }

    let mut blocks = vec![
        Block::EntityInitial,
        Block::BiasSubj,
        Block::BiasObj,
        Block::PredDiag,
        Block::PredTranslation,
    ];
    if cfg.repr.uses_velocity() {
        blocks.insert(1, Block::EntityVelocity);
    }
    if params.periodic.is_some() {
        blocks.extend([
            Block::PeriodicAmplitude,
            Block::PeriodicFrequency,
            Block::PeriodicPhase,
        ]);
    }

    let d = params.dim;
    let mut report = FdReport {
        checked: 0,
        skipped_boundary: 0,
        max_rel_err: 0.0,
        worst_coordinate: String::new(),
        tolerance,
        per_block: Vec::with_capacity(blocks.len()),
    };

    for (bi, &block) in blocks.iter().enumerate() {
        let mut rng = stream(seed, Domain::FdCheck, bi as u64, 0);
        let per_row = match block {
            Block::BiasSubj | Block::BiasObj => 1,
            _ => d,
        };
        let rows: &[u32] = match block {
            Block::PredDiag | Block::PredTranslation => &grads.touched_predicates,
            _ => &grads.touched_entities,
        };
        let mut stats = BlockFdStats {
            block: block.name(),
            checked: 0,
            max_rel_err: 0.0,
        };
        for _ in 0..probes_per_block {
            let row = rows[rng.random_range(0..rows.len())] as usize;
            let col = rng.random_range(0..per_row);
            let idx = row * per_row + col;
            let point_valued = matches!(block, Block::EntityInitial | Block::PredTranslation);
            if point_valued {
                let data = match block {
                    Block::EntityInitial => &params.entity_initial,
                    _ => &params.pred_translation,
                };
                if near_boundary(data, row, col, cfg) {
                    report.skipped_boundary += 1;
                    continue;
                }
            }
            let analytic = analytic_at(grads, block, idx);
            let mut plus = params.clone();
            block_slot(&mut plus, block)[idx] += h;
            let mut minus = params.clone();
            block_slot(&mut minus, block)[idx] -= h;
            let (lp, _) = batch_loss(&plus, cfg, num_timestamps, samples)?;
            let (lm, _) = batch_loss(&minus, cfg, num_timestamps, samples)?;
            let fd = (lp - lm) / (2.0 * h);
            let rel = (analytic - fd).abs() / 1f64.max(analytic.abs()).max(fd.abs());
            report.checked += 1;
            stats.checked += 1;
            if rel > stats.max_rel_err {
                stats.max_rel_err = rel;
            }
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst_coordinate =
                    format!("{}[{row}][{col}] analytic {analytic:.6e} fd {fd:.6e}", block.name());
            }
        }
        report.per_block.push(stats);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ReprVariant, ScoreVariant};
    use crate::product::ProductSignature;

    fn cfg_with(sig: &str, repr: ReprVariant, score: ScoreVariant) -> ModelConfig {
        let mut cfg = ModelConfig::new(sig.parse::<ProductSignature>().unwrap());
        cfg.repr = repr;
        cfg.score = score;
        cfg
    }

    fn toy_samples() -> Vec<Sample> {
        vec![
            Sample {
                quad: Quadruple { s: 0, p: 1, o: 2, t: 0 },
                negatives: vec![3, 4],
            },
            Sample {
                quad: Quadruple { s: 2, p: 0, o: 1, t: 2 },
                negatives: vec![0, 5, 3],
            },
            Sample {
                // Self-loop plus a duplicated negative: both paths through
                // the candidate cache.
                quad: Quadruple { s: 4, p: 3, o: 4, t: 1 },
                negatives: vec![1, 1],
            },
        ]
    }

    #[test]
    fn analytic_gradients_match_finite_differences() {
        let cases = [
            (ReprVariant::Linear, ScoreVariant::StretchTranslate),
            (ReprVariant::Linear, ScoreVariant::CoshStretchTranslate),
            (ReprVariant::Linear, ScoreVariant::StretchBothTranslate),
            (ReprVariant::Periodic, ScoreVariant::StretchTranslate),
            (ReprVariant::LinearPlusPeriodic, ScoreVariant::StretchBoth),
            (ReprVariant::Static, ScoreVariant::TranslateOnly),
            (ReprVariant::Static, ScoreVariant::StretchOnly),
        ];
        for (repr, score) in cases {
            let cfg = cfg_with("P2@-0.8,S2@0.6,E2@0", repr, score);
            let params = ModelParams::init(6, 2, &cfg, 13);
            let report = fd_check(&params, &cfg, 3, &toy_samples(), 24, 99, 1e-6, 1e-4).unwrap();
            assert!(
                report.passed(),
                "{repr:?}/{score:?}: max rel err {} at {}",
                report.max_rel_err,
                report.worst_coordinate
            );
            assert!(report.checked >= 100, "only {} probes ran", report.checked);
        }
    }

    #[test]
    fn bias_gradient_is_mean_residual() {
        // The subject bias enters every candidate score of its group
        // additively, so its gradient must equal the summed residuals
        // (sigmoid(phi) - y) / M. Computed here from scores alone.
        let cfg = cfg_with(
            "P2@-1,E2@0",
            ReprVariant::Linear,
            ScoreVariant::StretchTranslate,
        );
        let params = ModelParams::init(6, 2, &cfg, 5);
        let samples = toy_samples();
        let mut grads = GradientSet::zeros_like(&params);
        accumulate_batch(&params, &cfg, 3, &samples, &mut grads).unwrap();

        let m: usize = samples.iter().map(|s| 1 + s.negatives.len()).sum();
        let mut want = vec![0.0; 6];
        for sample in &samples {
            let q = sample.quad;
            let golds = std::iter::once((q.o, 1.0));
            for (o, y) in golds.chain(sample.negatives.iter().map(|&o| (o, 0.0))) {
                let phi = params
                    .score(&cfg, Quadruple { s: q.s, p: q.p, o, t: q.t }, 3)
                    .unwrap();
                want[q.s as usize] += (sigmoid(phi) - y) / m as f64;
            }
        }
        for e in 0..6 {
            assert!(
                (grads.bias_subj[e] - want[e]).abs() < 1e-12,
                "entity {e}: {} vs {}",
                grads.bias_subj[e],
                want[e]
            );
        }
    }

    #[test]
    fn taped_loss_equals_forward_loss() {
        let cfg = cfg_with(
            "P3@-0.5,E2@0",
            ReprVariant::Linear,
            ScoreVariant::StretchTranslate,
        );
        let params = ModelParams::init(6, 2, &cfg, 21);
        let samples = toy_samples();
        let mut grads = GradientSet::zeros_like(&params);
        let stats = accumulate_batch(&params, &cfg, 3, &samples, &mut grads).unwrap();
        let (loss, m) = batch_loss(&params, &cfg, 3, &samples).unwrap();
        assert_eq!(stats.loss, loss);
        assert_eq!(stats.num_predictions, m);
        assert_eq!(m, 10);
    }

    #[test]
    fn touched_lists_are_sorted_unique_and_complete() {
        let cfg = cfg_with(
            "P2@-1",
            ReprVariant::Linear,
            ScoreVariant::StretchTranslate,
        );
        let params = ModelParams::init(6, 2, &cfg, 2);
        let samples = toy_samples();
        let mut grads = GradientSet::zeros_like(&params);
        accumulate_batch(&params, &cfg, 3, &samples, &mut grads).unwrap();
        assert_eq!(grads.touched_entities, vec![0, 1, 2, 3, 4, 5]);
        assert_eq!(grads.touched_predicates, vec![0, 1, 3]);
        // Untouched predicate row 2 must be exactly zero.
        let d = params.dim;
        assert!(grads.pred_diag[2 * d..3 * d].iter().all(|&g| g == 0.0));
        assert!(grads.entity_initial.iter().any(|&g| g != 0.0));
    }

    #[test]
    fn clear_zeroes_touched_rows() {
        let cfg = cfg_with(
            "P2@-1,E2@0",
            ReprVariant::LinearPlusPeriodic,
            ScoreVariant::StretchTranslate,
        );
        let params = ModelParams::init(6, 2, &cfg, 8);
        let mut grads = GradientSet::zeros_like(&params);
        accumulate_batch(&params, &cfg, 3, &toy_samples(), &mut grads).unwrap();
        grads.clear();
        assert!(grads.touched_entities.is_empty());
        assert!(grads.entity_initial.iter().all(|&g| g == 0.0));
        assert!(grads.entity_velocity.iter().all(|&g| g == 0.0));
        assert!(grads.periodic_phase.iter().all(|&g| g == 0.0));
        assert!(grads.pred_diag.iter().all(|&g| g == 0.0));
        assert!(grads.bias_subj.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn static_variant_leaves_velocity_gradient_zero() {
        let cfg = cfg_with(
            "P2@-1,E2@0",
            ReprVariant::Static,
            ScoreVariant::StretchTranslate,
        );
        let params = ModelParams::init(6, 2, &cfg, 8);
        let mut grads = GradientSet::zeros_like(&params);
        accumulate_batch(&params, &cfg, 3, &toy_samples(), &mut grads).unwrap();
        assert!(grads.entity_velocity.iter().all(|&g| g == 0.0));
        assert!(grads.entity_initial.iter().any(|&g| g != 0.0));
    }

    #[test]
    fn accumulation_is_deterministic() {
        let cfg = cfg_with(
            "P2@-0.7,S2@0.4",
            ReprVariant::Linear,
            ScoreVariant::StretchTranslate,
        );
        let params = ModelParams::init(6, 2, &cfg, 8);
        let mut a = GradientSet::zeros_like(&params);
        let mut b = GradientSet::zeros_like(&params);
        accumulate_batch(&params, &cfg, 3, &toy_samples(), &mut a).unwrap();
        accumulate_batch(&params, &cfg, 3, &toy_samples(), &mut b).unwrap();
        assert_eq!(a.entity_initial, b.entity_initial);
        assert_eq!(a.pred_diag, b.pred_diag);
        assert_eq!(a.bias_obj, b.bias_obj);
    }

    #[test]
    fn duplicate_negative_doubles_its_seed() {
        // negatives [1, 1] versus [1]: the duplicated candidate's bias
        // gradient must double once the different normalizations cancel.
        let cfg = cfg_with(
            "P2@-1",
            ReprVariant::Linear,
            ScoreVariant::StretchTranslate,
        );
        let params = ModelParams::init(6, 2, &cfg, 4);
        let quad = Quadruple { s: 0, p: 1, o: 2, t: 0 };
        let dup = vec![Sample { quad, negatives: vec![1, 1] }];
        let single = vec![Sample { quad, negatives: vec![1] }];
        let mut gd = GradientSet::zeros_like(&params);
        let mut gs = GradientSet::zeros_like(&params);
        accumulate_batch(&params, &cfg, 3, &dup, &mut gd).unwrap();
        accumulate_batch(&params, &cfg, 3, &single, &mut gs).unwrap();
        // dup normalizes by 3, single by 2: scale both to raw sums.
        let raw_dup = gd.bias_obj[1] * 3.0;
        let raw_single = gs.bias_obj[1] * 2.0;
        assert!((raw_dup - 2.0 * raw_single).abs() < 1e-12);
    }

    #[test]
    fn bce_loss_frozen_examples() {
        // Confident correct prediction: essentially zero.
        assert!(bce_loss(&[100.0], &[1.0]).abs() < 1e-12);
        // Score 0 is probability one-half, so the loss is ln 2.
        assert!((bce_loss(&[0.0], &[1.0]) - std::f64::consts::LN_2).abs() < 1e-15);
        // The mean over a positive and a negative at score 0 is still ln 2.
        assert!((bce_loss(&[0.0, 0.0], &[1.0, 0.0]) - std::f64::consts::LN_2).abs() < 1e-15);
        // Saturated-wrong prediction hits the clamp, not infinity.
        let capped = bce_loss(&[-100.0], &[1.0]);
        assert!(capped.is_finite());
        assert!((capped + (1e-15f64).ln()).abs() < 1e-9);
    }

    #[test]
    fn corrupted_gradient_fails_fd_check_naming_the_block() {
        let cfg = cfg_with(
            "P2@-0.8,E2@0",
            ReprVariant::Linear,
            ScoreVariant::StretchTranslate,
        );
        let params = ModelParams::init(6, 2, &cfg, 17);
        let samples = toy_samples();
        let mut grads = GradientSet::zeros_like(&params);
        accumulate_batch(&params, &cfg, 3, &samples, &mut grads).unwrap();
        let clean = fd_check_against(&params, &cfg, 3, &samples, 24, 99, 1e-6, 1e-4, &grads)
            .unwrap();
        assert!(clean.passed());
        let d = params.dim;
        for &e in &grads.touched_entities.clone() {
            let r = e as usize * d..(e as usize + 1) * d;
            for g in &mut grads.entity_velocity[r] {
                *g += 0.05;
            }
        }
        let report = fd_check_against(&params, &cfg, 3, &samples, 24, 99, 1e-6, 1e-4, &grads)
            .unwrap();
        assert!(!report.passed());
        assert_eq!(report.failing_blocks(), vec!["entity_velocity"]);
        assert!(report.worst_coordinate.contains("entity_velocity"));
    }

    #[test]
    fn unnormalized_gradients_are_additive_over_samples() {
        let cfg = cfg_with(
            "P2@-1,S2@0.5",
            ReprVariant::Linear,
            ScoreVariant::StretchTranslate,
        );
        let params = ModelParams::init(6, 2, &cfg, 11);
        let all = toy_samples();
        let (a, b) = all.split_at(1);
        let m = |s: &[Sample]| s.iter().map(|x| 1 + x.negatives.len()).sum::<usize>() as f64;
        let mut ga = GradientSet::zeros_like(&params);
        let mut gb = GradientSet::zeros_like(&params);
        let mut gc = GradientSet::zeros_like(&params);
        accumulate_batch(&params, &cfg, 3, a, &mut ga).unwrap();
        accumulate_batch(&params, &cfg, 3, b, &mut gb).unwrap();
        accumulate_batch(&params, &cfg, 3, &all, &mut gc).unwrap();
        let (ma, mb, mc) = (m(a), m(b), m(&all));
        let close = |got: f64, want: f64| (got - want).abs() < 1e-12;
        for i in 0..gc.entity_initial.len() {
            let want = ga.entity_initial[i] * ma + gb.entity_initial[i] * mb;
            assert!(close(gc.entity_initial[i] * mc, want), "entity_initial[{i}]");
        }
        for i in 0..gc.pred_translation.len() {
            let want = ga.pred_translation[i] * ma + gb.pred_translation[i] * mb;
            assert!(close(gc.pred_translation[i] * mc, want), "pred_translation[{i}]");
        }
        for e in 0..6 {
            let want = ga.bias_obj[e] * ma + gb.bias_obj[e] * mb;
            assert!(close(gc.bias_obj[e] * mc, want), "bias_obj[{e}]");
        }
    }

    #[test]
    fn random_models_pass_fd_check_across_curvature_signs_and_variants() {
        let sigs = [
            "P2@-1,E2@0,S2@0.8",
            "P3@-0.6",
            "S3@1.2",
            "E4@0",
            "P2@-1.4,S2@0.5",
            "P2@-0.3,P2@-0.9",
            "S2@0.7,E2@0",
        ];
        let reprs = [
            ReprVariant::Linear,
            ReprVariant::Periodic,
            ReprVariant::LinearPlusPeriodic,
            ReprVariant::Static,
        ];
        let scores = [
            ScoreVariant::StretchTranslate,
            ScoreVariant::CoshStretchTranslate,
            ScoreVariant::StretchBoth,
            ScoreVariant::StretchBothTranslate,
            ScoreVariant::StretchOnly,
            ScoreVariant::TranslateOnly,
        ];
        let samples = vec![
            Sample {
                quad: Quadruple { s: 0, p: 1, o: 2, t: 0 },
                negatives: vec![3, 4],
            },
            Sample {
                quad: Quadruple { s: 3, p: 2, o: 0, t: 2 },
                negatives: vec![1, 4],
            },
        ];
        for i in 0..100usize {
            let mut cfg = cfg_with(sigs[i % sigs.len()], reprs[i % reprs.len()], scores[i % scores.len()]);
            cfg.time_scale = if i % 2 == 0 {
                crate::data::TimeScale::Normalized
            } else {
                crate::data::TimeScale::Raw
            };
            let params = ModelParams::init(5, 2, &cfg, 1000 + i as u64);
            let report =
                fd_check(&params, &cfg, 3, &samples, 2, 7 + i as u64, 1e-6, 1e-4).unwrap();
            assert!(
                report.passed(),
                "draw {i} ({:?}/{:?}/{}): max rel err {} at {}",
                cfg.repr,
                cfg.score,
                sigs[i % sigs.len()],
                report.max_rel_err,
                report.worst_coordinate
            );
        }
    }
}
