//! Filtered link-prediction evaluation.
//!
//! Every test quadruple is scored as an object query `(s, p, ?, t)`; subject
//! queries are covered because evaluation runs on reciprocal-augmented
//! splits, where each fact also appears as its twin `(o, p', s, t)`. The
//! rank of the gold object among all candidate entities yields MRR and
//! Hits@k over `2 |test|` queries.
//!
//! Filter modes control which competing candidates are discarded before
//! ranking:
//!
//! - `raw`: nothing is filtered.
//! - `triple`: candidates `o'` where `(s, p, o')` is a known fact at ANY
//!   timestamp are removed. This is the common static convention; on
//!   drifting data it also removes other-time partners, which can hide the
//!   difference between static and dynamic models.
//! - `time-aware` (default): only candidates `o'` where `(s, p, o', t)` is
//!   known at the SAME timestamp are removed. Facts true elsewhere in time
//!   remain competitors, so trajectories have to earn their ranks.
//!
//! The query's own gold object is never filtered. Ties are broken by
//! [`TieMode`]; the default `mean` assigns the average of the tied ranks,
//! so five identical scores all rank 3.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Quadruple;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterMode {
    Raw,
    Triple,
    #[default]
    TimeAware,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TieMode {
    Optimistic,
    Pessimistic,
    #[default]
    Mean,
}

/// Known gold objects per query key, built once over all splits of the
/// augmented dataset.
#[derive(Debug, Default)]
pub struct FilterIndex {
    triple: HashMap<(u32, u32), Vec<u32>>,
    time: HashMap<(u32, u32, u32), Vec<u32>>,
}

impl FilterIndex {
    pub fn build(quad_lists: &[&[Quadruple]]) -> FilterIndex {
        let mut idx = FilterIndex::default();
        for quads in quad_lists {
            for q in *quads {
                idx.triple.entry((q.s, q.p)).or_default().push(q.o);
                idx.time.entry((q.s, q.p, q.t)).or_default().push(q.o);
            }
        }
        for v in idx.triple.values_mut() {
            v.sort_unstable();
            v.dedup();
        }
        for v in idx.time.values_mut() {
            v.sort_unstable();
            v.dedup();
        }
        idx
    }

    pub fn known_triple(&self, s: u32, p: u32, o: u32) -> bool {
        self.triple
            .get(&(s, p))
            .is_some_and(|v| v.binary_search(&o).is_ok())
    }

    pub fn known_at(&self, s: u32, p: u32, o: u32, t: u32) -> bool {
        self.time
            .get(&(s, p, t))
            .is_some_and(|v| v.binary_search(&o).is_ok())
    }

    fn is_filtered(&self, mode: FilterMode, q: Quadruple, candidate: u32) -> bool {
        match mode {
            FilterMode::Raw => false,
            FilterMode::Triple => self.known_triple(q.s, q.p, candidate),
            FilterMode::TimeAware => self.known_at(q.s, q.p, candidate, q.t),
        }
    }
}

/// Rank of `gold` within `scores`, skipping filtered candidates. Higher
/// score is better. May be fractional under `TieMode::Mean`.
pub fn rank_query(
    scores: &[f64],
    gold: u32,
    tie: TieMode,
    is_filtered: impl Fn(u32) -> bool,
) -> f64 {
    let gs = scores[gold as usize];
    debug_assert!(gs.is_finite());
    let mut better = 0usize;
    let mut equal = 0usize;
    for (c, &sc) in scores.iter().enumerate() {
        if c as u32 == gold || is_filtered(c as u32) {
            continue;
        }
        if sc > gs {
            better += 1;
        } else if sc == gs {
            equal += 1;
        }
    }
    match tie {
        TieMode::Optimistic => (1 + better) as f64,
        TieMode::Pessimistic => (1 + better + equal) as f64,
        TieMode::Mean => 1.0 + better as f64 + equal as f64 / 2.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mrr: f64,
    pub hits_at_1: f64,
    pub hits_at_3: f64,
    pub hits_at_10: f64,
    pub num_queries: usize,
}

impl Metrics {
    pub fn from_ranks(ranks: &[f64]) -> Metrics {
        let n = ranks.len() as f64;
        let sum_rr: f64 = ranks.iter().map(|&r| 1.0 / r).sum();
        let hits = |k: f64| ranks.iter().filter(|&&r| r <= k).count() as f64 / n;
        Metrics {
            mrr: sum_rr / n,
            hits_at_1: hits(1.0),
            hits_at_3: hits(3.0),
            hits_at_10: hits(10.0),
            num_queries: ranks.len(),
        }
    }
}

/// Rank of every query, in input order. Queries must already be
/// reciprocal augmented. Work is parallel per query; ranks are collected
/// in input order, so results do not depend on the worker count.
pub fn query_ranks(
    params: &ModelParams,
    cfg: &ModelConfig,
    queries: &[Quadruple],
    filter: &FilterIndex,
    num_timestamps: usize,
    mode: FilterMode,
    tie: TieMode,
) -> Result<Vec<f64>> {
    if queries.is_empty() {
        return Err(Error::Config("no evaluation queries".into()));
    }
    queries
        .par_iter()
        .map_init(Vec::new, |buf: &mut Vec<f64>, q: &Quadruple| -> Result<f64> {
            params.score_candidates(cfg, q.s, q.p, q.t, num_timestamps, buf)?;
            let gs = buf[q.o as usize];
            if !gs.is_finite() {
                return Err(Error::NonFinite {
                    what: format!("score of gold ({}, {}, {}, {})", q.s, q.p, q.o, q.t),
                });
            }
            Ok(rank_query(buf, q.o, tie, |c| filter.is_filtered(mode, *q, c)))
        })
        .collect()
}

/// Rank every query and aggregate.
pub fn evaluate(
    params: &ModelParams,
    cfg: &ModelConfig,
    queries: &[Quadruple],
    filter: &FilterIndex,
    num_timestamps: usize,
    mode: FilterMode,
    tie: TieMode,
) -> Result<Metrics> {
    let ranks = query_ranks(params, cfg, queries, filter, num_timestamps, mode, tie)?;
    Ok(Metrics::from_ranks(&ranks))
}

/// Scored candidates of one query, best first, filtered under `mode` but
/// always keeping every unfiltered candidate. Used by prediction output.
pub fn top_candidates(
    params: &ModelParams,
    cfg: &ModelConfig,
    q: Quadruple,
    filter: &FilterIndex,
    num_timestamps: usize,
    mode: FilterMode,
    k: usize,
) -> Result<Vec<(u32, f64)>> {
    let mut buf = Vec::new();
    params.score_candidates(cfg, q.s, q.p, q.t, num_timestamps, &mut buf)?;
    let mut ranked: Vec<(u32, f64)> = buf
        .iter()
        .enumerate()
        .map(|(c, &sc)| (c as u32, sc))
        .filter(|&(c, _)| !filter.is_filtered(mode, q, c))
        .collect();
    // Stable order: score desc, then entity id asc for exact ties.
    ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal).then(a.0.cmp(&b.0)));
    ranked.truncate(k);
    Ok(ranked)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::augment_reciprocal;
    use crate::model::ModelParams;
    use crate::product::ProductSignature;

    #[test]
    fn tie_modes_on_five_identical_scores() {
        let scores = [0.5; 5];
        assert_eq!(rank_query(&scores, 2, TieMode::Optimistic, |_| false), 1.0);
        assert_eq!(rank_query(&scores, 2, TieMode::Pessimistic, |_| false), 5.0);
        assert_eq!(rank_query(&scores, 2, TieMode::Mean, |_| false), 3.0);
    }

    #[test]
    fn filtering_removes_competitors_but_never_gold() {
        let scores = [9.0, 5.0, 7.0, 8.0];
        // Unfiltered: gold 1 is beaten by 0, 2, 3.
        assert_eq!(rank_query(&scores, 1, TieMode::Mean, |_| false), 4.0);
        // Filter candidate 0: two competitors remain.
        assert_eq!(rank_query(&scores, 1, TieMode::Mean, |c| c == 0), 3.0);
        // Filtering the gold id itself must not change its rank.
        assert_eq!(rank_query(&scores, 1, TieMode::Mean, |c| c == 1), 4.0);
    }

    #[test]
    fn fractional_mean_ranks_count_toward_hits() {
        // rank 2.5 <= 3 counts for hits@3.
        let m = Metrics::from_ranks(&[2.5, 1.0, 12.0, 4.0]);
        assert!((m.mrr - (1.0 / 2.5 + 1.0 + 1.0 / 12.0 + 0.25) / 4.0).abs() < 1e-12);
        assert_eq!(m.hits_at_1, 0.25);
        assert_eq!(m.hits_at_3, 0.5);
        assert_eq!(m.hits_at_10, 0.75);
        assert_eq!(m.num_queries, 4);
    }

    #[test]
    fn filter_index_distinguishes_triple_and_time() {
        let train = vec![
            Quadruple { s: 0, p: 0, o: 1, t: 0 },
            Quadruple { s: 0, p: 0, o: 2, t: 1 },
        ];
        let idx = FilterIndex::build(&[&train]);
        assert!(idx.known_triple(0, 0, 2));
        assert!(idx.known_at(0, 0, 2, 1));
        assert!(!idx.known_at(0, 0, 2, 0));
        let q = Quadruple { s: 0, p: 0, o: 1, t: 0 };
        // Triple mode drops the other-time partner, time-aware keeps it.
        assert!(idx.is_filtered(FilterMode::Triple, q, 2));
        assert!(!idx.is_filtered(FilterMode::TimeAware, q, 2));
        assert!(!idx.is_filtered(FilterMode::Raw, q, 2));
    }

    fn tiny_eval_setup() -> (ModelParams, ModelConfig, Vec<Quadruple>, FilterIndex) {
        let cfg = ModelConfig::new("P2@-1,E2@0".parse::<ProductSignature>().unwrap());
        let params = ModelParams::init(8, 2, &cfg, 17);
        let train = augment_reciprocal(
            &[
                Quadruple { s: 0, p: 0, o: 1, t: 0 },
                Quadruple { s: 0, p: 0, o: 2, t: 1 },
                Quadruple { s: 3, p: 1, o: 4, t: 0 },
                Quadruple { s: 5, p: 0, o: 6, t: 2 },
            ],
            2,
        );
        let test = augment_reciprocal(
            &[
                Quadruple { s: 0, p: 0, o: 2, t: 2 },
                Quadruple { s: 3, p: 1, o: 7, t: 1 },
            ],
            2,
        );
        let filter = FilterIndex::build(&[&train, &test]);
        (params, cfg, test, filter)
    }

    #[test]
    fn more_aggressive_filtering_never_lowers_mrr() {
        let (params, cfg, test, filter) = tiny_eval_setup();
        let raw = evaluate(&params, &cfg, &test, &filter, 3, FilterMode::Raw, TieMode::Mean)
            .unwrap();
        let time = evaluate(
            &params, &cfg, &test, &filter, 3, FilterMode::TimeAware, TieMode::Mean,
        )
        .unwrap();
        let triple = evaluate(
            &params, &cfg, &test, &filter, 3, FilterMode::Triple, TieMode::Mean,
        )
        .unwrap();
        assert_eq!(raw.num_queries, 4);
        assert!(time.mrr >= raw.mrr);
        assert!(triple.mrr >= time.mrr);
        for m in [raw, time, triple] {
            assert!(m.hits_at_1 <= m.hits_at_3 && m.hits_at_3 <= m.hits_at_10);
            assert!(m.mrr > 0.0 && m.mrr <= 1.0);
        }
    }

    #[test]
    fn evaluation_is_deterministic() {
        let (params, cfg, test, filter) = tiny_eval_setup();
        let a = evaluate(
            &params, &cfg, &test, &filter, 3, FilterMode::TimeAware, TieMode::Mean,
        )
        .unwrap();
        let b = evaluate(
            &params, &cfg, &test, &filter, 3, FilterMode::TimeAware, TieMode::Mean,
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn top_candidates_sorted_and_filtered() {
        let (params, cfg, test, filter) = tiny_eval_setup();
        let got = top_candidates(&params, &cfg, test[0], &filter, 3, FilterMode::Raw, 5)
            .unwrap();
        assert_eq!(got.len(), 5);
        for w in got.windows(2) {
            assert!(w[0].1 >= w[1].1);
        }
        let all = top_candidates(&params, &cfg, test[0], &filter, 3, FilterMode::Raw, 100)
            .unwrap();
        assert_eq!(all.len(), 8);
    }
}
