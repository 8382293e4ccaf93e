//! Synthetic benchmark generators.
//!
//! Two families cover the behaviors worth demonstrating end to end: a
//! balanced hierarchy whose metric is tree-like, where negatively curved
//! components pay off, and a bipartite partner graph whose gold object
//! flips mid-history, which a static representation cannot express but a
//! time-conditioned one can.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;

use crate::data::{RawFact, TimeKey};
use crate::error::{Error, Result};
use crate::rng::{stream, Domain};

#[derive(Debug, Clone)]
pub struct SynthSplits {
    pub train: Vec<RawFact>,
    pub valid: Vec<RawFact>,
    pub test: Vec<RawFact>,
}

fn fact(s: &str, p: &str, o: &str, t: u32) -> RawFact {
    RawFact {
        s: s.to_owned(),
        p: p.to_owned(),
        o: o.to_owned(),
        t: TimeKey::Int(t as i64),
    }
}

/// Balanced `branching`-ary tree of the given depth, described through
/// four predicates: `child_of` edges, `desc_of` transitive ancestor pairs,
/// `sibling_of` pairs under one parent, and `level_of` markers tying each
/// node to its depth entity. Every fact is asserted at six random
/// timestamps. A tenth of the triples, drawn only from the transitive
/// `desc_of` relation, is held out entirely (all six stamps) for
/// validation and another tenth for test: held-out queries ask for
/// ancestor links never observed at any time, while the tree skeleton
/// stays fully observed, so the task measures hierarchy inference rather
/// than recall.
pub fn hierarchy_dataset(
    branching: usize,
    depth: usize,
    num_timestamps: usize,
    seed: u64,
) -> Result<SynthSplits> {
    if branching < 2 || depth < 2 {
        return Err(Error::Config("hierarchy needs branching >= 2 and depth >= 2".into()));
    }
    if num_timestamps < 6 {
        return Err(Error::Config("hierarchy needs at least 6 timestamps".into()));
    }

    // Level-order tree: node 0 is the root.
    let mut parent: Vec<Option<usize>> = vec![None];
    let mut level: Vec<usize> = vec![0];
    let mut frontier = vec![0usize];
    for d in 1..=depth {
        let mut next = Vec::new();
        for &node in &frontier {
            for _ in 0..branching {
                parent.push(Some(node));
                level.push(d);
                next.push(parent.len() - 1);
            }
        }
        frontier = next;
    }
    let n = parent.len();
    let name = |i: usize| format!("n{i:03}");

    let mut triples: Vec<(String, &'static str, String)> = Vec::new();
    for i in 1..n {
        triples.push((name(i), "child_of", name(parent[i].unwrap())));
        let mut a = parent[i];
        while let Some(anc) = a {
            triples.push((name(i), "desc_of", name(anc)));
            a = parent[anc];
        }
    }
    for p in 0..n {
        let kids: Vec<usize> = (1..n).filter(|&i| parent[i] == Some(p)).collect();
        for x in 0..kids.len() {
            for y in x + 1..kids.len() {
                triples.push((name(kids[x]), "sibling_of", name(kids[y])));
            }
        }
    }
    for i in 0..n {
        triples.push((name(i), "level_of", format!("level{}", level[i])));
    }

    let mut rng = stream(seed, Domain::Synth, 0, 0);
    // Only transitive-closure facts are eligible for holdout. The tree
    // skeleton (child_of, level_of) must stay observed for every entity,
    // and sibling_of is symmetric: under a distance scorer the subject's
    // own image outranks the gold on unseen symmetric pairs, which would
    // measure that pathology instead of hierarchy inference.
    let mut eligible: Vec<usize> = triples
        .iter()
        .enumerate()
        .filter(|(_, (_, p, _))| *p == "desc_of")
        .map(|(i, _)| i)
        .collect();
    eligible.shuffle(&mut rng);
    let held = triples.len() / 10;
    if eligible.len() < 2 * held {
        return Err(Error::Config(
            "tree too wide: not enough ancestor facts to hold out 10%/10%".into(),
        ));
    }
    let valid_ids: HashSet<usize> = eligible[..held].iter().copied().collect();
    let test_ids: HashSet<usize> = eligible[held..2 * held].iter().copied().collect();

    let mut splits = SynthSplits {
        train: Vec::new(),
        valid: Vec::new(),
        test: Vec::new(),
    };
    let mut times: Vec<u32> = (0..num_timestamps as u32).collect();
    for (i, (s, p, o)) in triples.iter().enumerate() {
        times.shuffle(&mut rng);
        let dest = if valid_ids.contains(&i) {
            &mut splits.valid
        } else if test_ids.contains(&i) {
            &mut splits.test
        } else {
            &mut splits.train
        };
        for &t in &times[..6] {
            dest.push(fact(s, p, o, t));
        }
    }
    Ok(splits)
}

/// Bipartite partner graph with a hard drift. Entity `a{i}` is partnered
/// with `b{i}` before `swap_at` and with `b{(i + pairs/2) % pairs}` from
/// `swap_at` on, at every timestamp. Timestamps congruent to 7 mod 10 are
/// held out for validation and those congruent to 3 mod 10 for test, so
/// both regimes appear in every split.
pub fn drifting_partners_dataset(
    pairs: usize,
    num_timestamps: u32,
    swap_at: u32,
) -> Result<SynthSplits> {
    if pairs < 4 || pairs % 2 != 0 {
        return Err(Error::Config("pairs must be even and at least 4".into()));
    }
    if !(1..num_timestamps).contains(&swap_at) {
        return Err(Error::Config("swap_at must fall inside the timeline".into()));
    }
    let mut splits = SynthSplits {
        train: Vec::new(),
        valid: Vec::new(),
        test: Vec::new(),
    };
    for t in 0..num_timestamps {
        for i in 0..pairs {
            let j = if t < swap_at { i } else { (i + pairs / 2) % pairs };
            let f = fact(
                &format!("a{i:02}"),
                "partner_of",
                &format!("b{j:02}"),
                t,
            );
            match t % 10 {
                7 => splits.valid.push(f),
                3 => splits.test.push(f),
                _ => splits.train.push(f),
            }
        }
    }
    Ok(splits)
}

/// Write facts as tab-separated `subject predicate object timestamp` lines.
pub fn write_tsv(path: &Path, facts: &[RawFact]) -> Result<()> {
    let mut out = String::new();
    for f in facts {
        out.push_str(&format!("{}\t{}\t{}\t{}\n", f.s, f.p, f.o, f.t));
    }
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_dataset, load_tsv};

    #[test]
    fn hierarchy_has_expected_shape() {
        let s = hierarchy_dataset(3, 3, 20, 1).unwrap();
        let ds = build_dataset(&s.train, &s.valid, &s.test).unwrap();
        // 40 tree nodes plus 4 level entities.
        assert_eq!(ds.num_entities(), 44);
        assert_eq!(ds.num_raw_predicates(), 4);
        assert_eq!(ds.num_timestamps(), 20);
        // 39 child + 102 ancestor + 39 sibling + 40 level triples, each at
        // six stamps; 22 whole triples held out per evaluation split.
        assert_eq!(ds.train.len(), (220 - 44) * 6);
        assert_eq!(ds.valid.len(), 22 * 6);
        assert_eq!(ds.test.len(), 22 * 6);
        // Held-out facts are all ancestor links and never overlap train
        // as triples, so evaluation is pure inference.
        let train_triples: std::collections::HashSet<_> =
            s.train.iter().map(|f| (&f.s, &f.p, &f.o)).collect();
        for f in s.valid.iter().chain(&s.test) {
            assert_eq!(f.p, "desc_of");
            assert!(!train_triples.contains(&(&f.s, &f.p, &f.o)));
        }
    }

    #[test]
    fn hierarchy_is_deterministic_per_seed() {
        let a = hierarchy_dataset(3, 3, 20, 5).unwrap();
        let b = hierarchy_dataset(3, 3, 20, 5).unwrap();
        let c = hierarchy_dataset(3, 3, 20, 6).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.valid, b.valid);
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn drifting_partners_swap_exactly_at_boundary() {
        let s = drifting_partners_dataset(20, 20, 10).unwrap();
        let all: Vec<&RawFact> = s.train.iter().chain(&s.valid).chain(&s.test).collect();
        assert_eq!(all.len(), 20 * 20);
        for f in all {
            let i: usize = f.s[1..].parse().unwrap();
            let j: usize = f.o[1..].parse().unwrap();
            let t = match f.t {
                TimeKey::Int(t) => t as u32,
                _ => unreachable!(),
            };
            if t < 10 {
                assert_eq!(j, i, "pre-swap partner of {} at {t}", f.s);
            } else {
                assert_eq!(j, (i + 10) % 20, "post-swap partner of {} at {t}", f.s);
            }
        }
        // Held-out slices carry both regimes.
        assert_eq!(s.valid.len(), 40);
        assert_eq!(s.test.len(), 40);
        let ds = build_dataset(&s.train, &s.valid, &s.test).unwrap();
        assert_eq!(ds.num_entities(), 40);
        assert_eq!(ds.num_raw_predicates(), 1);
    }

    #[test]
    fn tsv_round_trip_preserves_facts() {
        let s = drifting_partners_dataset(4, 6, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.tsv");
        write_tsv(&path, &s.train).unwrap();
        let back = load_tsv(&path).unwrap();
        assert_eq!(back, s.train);
    }

    #[test]
    fn generators_reject_degenerate_shapes() {
        assert!(hierarchy_dataset(1, 3, 20, 0).is_err());
        assert!(hierarchy_dataset(3, 3, 5, 0).is_err());
        assert!(drifting_partners_dataset(3, 20, 10).is_err());
        assert!(drifting_partners_dataset(20, 20, 0).is_err());
        assert!(drifting_partners_dataset(20, 20, 20).is_err());
    }
}
