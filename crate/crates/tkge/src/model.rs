//! Scoring model with time-evolving entity embeddings.
//!
//! Each entity has one embedding per product component, moving along a
//! geodesic-like trajectory defined in the tangent space at the origin:
//!
//! `e(t) = exp_0(log_0(e_bar) + v * tau)` (linear variant)
//!
//! where `e_bar` is the initial location, `v` the per-entity velocity and
//! `tau` the (normalized) time value. Periodic variants replace or extend
//! the drift term with `A * sin(w * tau + phi)` elementwise; the static
//! variant returns `e_bar` unchanged.
//!
//! The score of `(s, p, o, t)` is
//!
//! `phi = sum_i -f_i^2 + b_s + b_o`
//!
//! where `f_i` compares transformed subject and object embeddings inside
//! component `i` (variants below) and the two bias terms are added once,
//! outside the component sum. Each entity carries one subject bias and one
//! object bias regardless of how many components the product has.
//!
//! Score variants select the comparison `f_i`; `P` is the per-predicate
//! diagonal moebius matrix, `p` the per-predicate translation:
//!
//! - `stretch-translate` (default): `d(P (x) e_s(t), e_o(t) (+) p)`
//! - `cosh-stretch-translate`: `cosh(d(P (x) e_s(t), e_o(t) (+) p))`
//! - `stretch-both`: `d(P (x) e_s(t), P (x) e_o(t))`
//! - `stretch-both-translate`: `d(P (x) e_s(t), (P (x) e_o(t)) (+) p)`
//! - `stretch-only`: `d(P (x) e_s(t), e_o(t))`
//! - `translate-only`: `d(e_s(t), e_o(t) (+) p)`
//!
//! All functions here are generic over [`Scalar`] so the gradient module can
//! record them on a tape; the `f64` instantiation is the evaluation path.

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::data::{time_value, Quadruple, TimeScale};
use crate::error::{Error, Result};
use crate::geometry;
use crate::product::ProductSignature;
use crate::rng::{stream, Domain};
use crate::scalar::Scalar;

/// How entity embeddings move over time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReprVariant {
    #[default]
    Linear,
    Periodic,
    LinearPlusPeriodic,
    /// Embeddings do not move; velocities stay frozen at zero.
    Static,
}

impl ReprVariant {
    pub fn uses_velocity(self) -> bool {
        matches!(self, ReprVariant::Linear | ReprVariant::LinearPlusPeriodic)
    }

    pub fn uses_periodic(self) -> bool {
        matches!(self, ReprVariant::Periodic | ReprVariant::LinearPlusPeriodic)
    }
}

/// How subject and object embeddings are compared inside each component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreVariant {
    #[default]
    StretchTranslate,
    CoshStretchTranslate,
    StretchBoth,
    StretchBothTranslate,
    StretchOnly,
    TranslateOnly,
}

impl ScoreVariant {
    pub const ALL: [ScoreVariant; 6] = [
        ScoreVariant::StretchTranslate,
        ScoreVariant::CoshStretchTranslate,
        ScoreVariant::StretchBoth,
        ScoreVariant::StretchBothTranslate,
        ScoreVariant::StretchOnly,
        ScoreVariant::TranslateOnly,
    ];

    fn subject_stretched(self) -> bool {
        !matches!(self, ScoreVariant::TranslateOnly)
    }
}

#[derive(Debug, Clone)]
pub struct ModelConfig {
    pub signature: ProductSignature,
    pub repr: ReprVariant,
    pub score: ScoreVariant,
    pub time_scale: TimeScale,
}

impl ModelConfig {
    pub fn new(signature: ProductSignature) -> Self {
        ModelConfig {
            signature,
            repr: ReprVariant::default(),
            score: ScoreVariant::default(),
            time_scale: TimeScale::default(),
        }
    }
}

/// Per-entity periodic drift blocks, `|E| * d` each.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicBlocks {
    pub amplitude: Vec<f64>,
    pub frequency: Vec<f64>,
    pub phase: Vec<f64>,
}

/// All trainable parameters, stored as flat blocks. Coordinates of one
/// entity or predicate are contiguous; block layout matches the checkpoint
/// format.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub num_entities: usize,
    /// Includes reciprocal twins: `2 * |P_raw|`.
    pub num_predicates: usize,
    pub dim: usize,
    pub entity_initial: Vec<f64>,
    pub entity_velocity: Vec<f64>,
    pub bias_subj: Vec<f64>,
    pub bias_obj: Vec<f64>,
    pub pred_diag: Vec<f64>,
    pub pred_translation: Vec<f64>,
    pub periodic: Option<PeriodicBlocks>,
}

/// Closed-form parameter count of the linear variant:
/// `2 (|E| + 2 |P_raw|) d + 2 |E|`.
pub fn param_count(num_entities: usize, num_raw_predicates: usize, dim: usize) -> usize {
    2 * (num_entities + 2 * num_raw_predicates) * dim + 2 * num_entities
}

/// Borrowed per-entity inputs to the scoring function, generic so the same
/// code runs on `f64` and on tape variables.
pub struct EntityInputs<'a, S> {
    pub initial: &'a [S],
    pub velocity: &'a [S],
    pub periodic: Option<(&'a [S], &'a [S], &'a [S])>,
}

pub struct PredicateInputs<'a, S> {
    pub diag: &'a [S],
    pub translation: &'a [S],
}

impl ModelParams {
    /// Fresh parameters. Initial embeddings are `exp_0` of small normal
    /// tangents so they start near the origin of every component; the
    /// static variant keeps velocities at exactly zero.
    ///
    /// Draw order (fixed, part of the determinism contract): entity initial
    /// tangents, entity velocities (skipped when unused), predicate
    /// diagonals, predicate translation tangents, periodic blocks (skipped
    /// when unused).
    pub fn init(
        num_entities: usize,
        num_raw_predicates: usize,
        cfg: &ModelConfig,
        seed: u64,
    ) -> ModelParams {
        let dim = cfg.signature.total_dim();
        let num_predicates = num_raw_predicates * 2;
        let mut rng = stream(seed, Domain::Init, 0, 0);
        let n_init = Normal::new(0.0, 1e-3).expect("valid stddev");
        let n_vel = Normal::new(0.0, 1e-4).expect("valid stddev");
        let n_one = Normal::new(1.0, 1e-3).expect("valid stddev");
        let n_freq = Normal::new(0.0, 1.0).expect("valid stddev");
        let u_phase = Uniform::new(0.0, std::f64::consts::TAU).expect("valid range");

        let mut entity_initial = Vec::with_capacity(num_entities * dim);
        for _ in 0..num_entities {
            let tangent: Vec<f64> = (0..dim).map(|_| n_init.sample(&mut rng)).collect();
            entity_initial.extend(cfg.signature.exp0(&tangent));
        }

        let entity_velocity = if cfg.repr.uses_velocity() {
            (0..num_entities * dim).map(|_| n_vel.sample(&mut rng)).collect()
        } else {
            vec![0.0; num_entities * dim]
        };

        let bias_subj = vec![0.0; num_entities];
        let bias_obj = vec![0.0; num_entities];

        let pred_diag: Vec<f64> = (0..num_predicates * dim)
            .map(|_| n_one.sample(&mut rng))
            .collect();

        let mut pred_translation = Vec::with_capacity(num_predicates * dim);
        for _ in 0..num_predicates {
            let tangent: Vec<f64> = (0..dim).map(|_| n_init.sample(&mut rng)).collect();
            pred_translation.extend(cfg.signature.exp0(&tangent));
        }

        let periodic = cfg.repr.uses_periodic().then(|| {
            let n = num_entities * dim;
            PeriodicBlocks {
                amplitude: (0..n).map(|_| n_init.sample(&mut rng)).collect(),
                frequency: (0..n).map(|_| n_freq.sample(&mut rng)).collect(),
                phase: (0..n).map(|_| rng.sample(u_phase)).collect(),
            }
        });

        ModelParams {
            num_entities,
            num_predicates,
            dim,
            entity_initial,
            entity_velocity,
            bias_subj,
            bias_obj,
            pred_diag,
            pred_translation,
            periodic,
        }
    }

    /// Number of scalars the optimizer may move for `repr`. For the linear
    /// variant this equals [`param_count`] exactly.
    pub fn num_trainable_scalars(&self, repr: ReprVariant) -> usize {
        let mut n = self.entity_initial.len()
            + self.bias_subj.len()
            + self.bias_obj.len()
            + self.pred_diag.len()
            + self.pred_translation.len();
        if repr.uses_velocity() {
            n += self.entity_velocity.len();
        }
        if let Some(p) = &self.periodic {
            n += p.amplitude.len() + p.frequency.len() + p.phase.len();
        }
        n
    }

    fn ed(&self, block: &[f64], i: u32) -> std::ops::Range<usize> {
        let i = i as usize;
        debug_assert!((i + 1) * self.dim <= block.len());
        i * self.dim..(i + 1) * self.dim
    }

    pub fn entity_inputs(&self, e: u32) -> EntityInputs<'_, f64> {
        let r = self.ed(&self.entity_initial, e);
        EntityInputs {
            initial: &self.entity_initial[r.clone()],
            velocity: &self.entity_velocity[r.clone()],
            periodic: self.periodic.as_ref().map(|p| {
                (
                    &p.amplitude[r.clone()],
                    &p.frequency[r.clone()],
                    &p.phase[r.clone()],
                )
            }),
        }
    }

    pub fn predicate_inputs(&self, p: u32) -> PredicateInputs<'_, f64> {
        let r = self.ed(&self.pred_diag, p);
        PredicateInputs {
            diag: &self.pred_diag[r.clone()],
            translation: &self.pred_translation[r],
        }
    }

    /// Score a single indexed quadruple.
    pub fn score(&self, cfg: &ModelConfig, q: Quadruple, num_timestamps: usize) -> Result<f64> {
        let tau = time_value(q.t, num_timestamps, cfg.time_scale);
        score_inputs(
            &self.entity_inputs(q.s),
            &self.predicate_inputs(q.p),
            &self.entity_inputs(q.o),
            self.bias_subj[q.s as usize],
            self.bias_obj[q.o as usize],
            tau,
            cfg,
        )
    }

    /// Scores of `(s, p, o', t)` for every candidate object `o'`, writing
    /// into `out[o']`. The subject side is computed once.
    pub fn score_candidates(
        &self,
        cfg: &ModelConfig,
        s: u32,
        p: u32,
        t: u32,
        num_timestamps: usize,
        out: &mut Vec<f64>,
    ) -> Result<()> {
        let tau = time_value(t, num_timestamps, cfg.time_scale);
        let pred = self.predicate_inputs(p);
        let subj_pt = entity_point(&self.entity_inputs(s), tau, cfg);
        let subj = side_components(&subj_pt, &pred, cfg, Side::Subject)?;
        let b_s = self.bias_subj[s as usize];
        out.clear();
        out.reserve(self.num_entities);
        for o in 0..self.num_entities as u32 {
            let obj_pt = entity_point(&self.entity_inputs(o), tau, cfg);
            let obj = side_components(&obj_pt, &pred, cfg, Side::Object)?;
            let score = score_sides(&subj, &obj, b_s, self.bias_obj[o as usize], cfg)?;
            out.push(score);
        }
        Ok(())
    }

    /// Product-manifold location of entity `e` at timestamp index `t`.
    pub fn entity_point_at(
        &self,
        cfg: &ModelConfig,
        e: u32,
        t: u32,
        num_timestamps: usize,
    ) -> Vec<f64> {
        let tau = time_value(t, num_timestamps, cfg.time_scale);
        entity_point(&self.entity_inputs(e), tau, cfg)
    }
}

/// Entity location at time value `tau` under the configured dynamics.
pub fn entity_point<S: Scalar>(e: &EntityInputs<'_, S>, tau: f64, cfg: &ModelConfig) -> Vec<S> {
    if cfg.repr == ReprVariant::Static {
        // Exactly the initial embedding; no tangent round trip, so static
        // scores are bit-identical across timestamps.
        return e.initial.to_vec();
    }
    let sig = &cfg.signature;
    let mut out = Vec::with_capacity(sig.total_dim());
    for (ci, c) in sig.components().iter().enumerate() {
        let r = sig.range(ci);
        let u = geometry::log0(&e.initial[r.clone()], c.curvature);
        let mut w = Vec::with_capacity(c.dim);
        for (j, &uj) in u.iter().enumerate() {
            let idx = r.start + j;
            let mut wj = uj;
            if cfg.repr.uses_velocity() {
                wj = wj + e.velocity[idx].scale(tau);
            }
            if cfg.repr.uses_periodic() {
                let (amp, freq, phase) = e.periodic.expect("periodic blocks present");
                wj = wj + amp[idx] * (freq[idx].scale(tau) + phase[idx]).sin();
            }
            w.push(wj);
        }
        out.extend(geometry::exp0(&w, c.curvature));
    }
    out
}

#[derive(Clone, Copy, PartialEq)]
pub(crate) enum Side {
    Subject,
    Object,
}

/// Per-component transformed embedding for one side of the comparison.
pub(crate) fn side_components<S: Scalar>(
    point: &[S],
    pred: &PredicateInputs<'_, S>,
    cfg: &ModelConfig,
    side: Side,
) -> Result<Vec<Vec<S>>> {
    let sig = &cfg.signature;
    let mut out = Vec::with_capacity(sig.components().len());
    for (ci, c) in sig.components().iter().enumerate() {
        let r = sig.range(ci);
        let x = &point[r.clone()];
        let diag = &pred.diag[r.clone()];
        let trans = &pred.translation[r.clone()];
        let k = c.curvature;
        let part = match (side, cfg.score) {
            (Side::Subject, v) => {
                if v.subject_stretched() {
                    geometry::mobius_matvec(diag, x, k)
                } else {
                    x.to_vec()
                }
            }
            (Side::Object, ScoreVariant::StretchTranslate)
            | (Side::Object, ScoreVariant::CoshStretchTranslate)
            | (Side::Object, ScoreVariant::TranslateOnly) => geometry::mobius_add(x, trans, k)?,
            (Side::Object, ScoreVariant::StretchBoth) => geometry::mobius_matvec(diag, x, k),
            (Side::Object, ScoreVariant::StretchBothTranslate) => {
                let stretched = geometry::mobius_matvec(diag, x, k);
                geometry::mobius_add(&stretched, trans, k)?
            }
            (Side::Object, ScoreVariant::StretchOnly) => x.to_vec(),
        };
        out.push(part);
    }
    Ok(out)
}

/// `sum_i -f_i^2 + b_s + b_o`, components accumulated left to right.
pub(crate) fn score_sides<S: Scalar>(
    subj: &[Vec<S>],
    obj: &[Vec<S>],
    b_s: S,
    b_o: S,
    cfg: &ModelConfig,
) -> Result<S> {
    let sig = &cfg.signature;
    let mut acc: Option<S> = None;
    for (ci, c) in sig.components().iter().enumerate() {
        let d = geometry::distance(&subj[ci], &obj[ci], c.curvature)?;
        let f = if cfg.score == ScoreVariant::CoshStretchTranslate {
            d.cosh()
        } else {
            d
        };
        let term = f * f;
        acc = Some(match acc {
            None => term.scale(-1.0),
            Some(a) => a - term,
        });
    }
    let acc = acc.expect("signature has at least one component");
    Ok(acc + b_s + b_o)
}

/// Full score from borrowed inputs. `b_s` and `b_o` are added once, outside
/// the component sum.
pub fn score_inputs<S: Scalar>(
    subj_e: &EntityInputs<'_, S>,
    pred: &PredicateInputs<'_, S>,
    obj_e: &EntityInputs<'_, S>,
    b_s: S,
    b_o: S,
    tau: f64,
    cfg: &ModelConfig,
) -> Result<S> {
    let subj_pt = entity_point(subj_e, tau, cfg);
    let obj_pt = entity_point(obj_e, tau, cfg);
    let subj = side_components(&subj_pt, pred, cfg, Side::Subject)?;
    let obj = side_components(&obj_pt, pred, cfg, Side::Object)?;
    score_sides(&subj, &obj, b_s, b_o, cfg)
}

/// Validate that a parameter set matches the expected shapes for
/// `(num_entities, num_predicates, dim)`.
pub fn validate_shapes(p: &ModelParams) -> Result<()> {
    let e = p.num_entities;
    let d = p.dim;
    let np = p.num_predicates;
    let want = [
        ("entity_initial", p.entity_initial.len(), e * d),
        ("entity_velocity", p.entity_velocity.len(), e * d),
        ("bias_subj", p.bias_subj.len(), e),
        ("bias_obj", p.bias_obj.len(), e),
        ("pred_diag", p.pred_diag.len(), np * d),
        ("pred_translation", p.pred_translation.len(), np * d),
    ];
    for (name, got, expect) in want {
        if got != expect {
            return Err(Error::Checkpoint(format!(
                "block {name} has {got} scalars, expected {expect}"
            )));
        }
    }
    if let Some(per) = &p.periodic {
        for (name, got) in [
            ("periodic.amplitude", per.amplitude.len()),
            ("periodic.frequency", per.frequency.len()),
            ("periodic.phase", per.phase.len()),
        ] {
            if got != e * d {
                return Err(Error::Checkpoint(format!(
                    "block {name} has {got} scalars, expected {}",
                    e * d
                )));
            }
        }
    }
    Ok(())
}
