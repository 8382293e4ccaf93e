//! Graph sectional-curvature estimation and signature proposal.
//!
//! Each timestamp of the training split induces an undirected graph slice:
//! one edge per fact, self-loops dropped, reciprocal duplicates merged. On
//! every slice a parallelogram-deviation statistic is sampled: pick a node
//! `m`, two distinct neighbors `b`, `c` (so `m` is the midpoint of a
//! `b`-`c` "diagonal") and a reference node `a`, then compare the BFS hop
//! distances against what the Euclidean parallelogram law predicts:
//!
//! `psi = (1/(2 d(a,m))) * (d(a,m)^2 + d(b,c)^2/4 - (d(a,b)^2 + d(a,c)^2)/2)`
//!
//! Trees come out negative (paths to `b` and `c` share the `m` leg),
//! cycles positive, and grid-like or path-like regions zero. Slice values
//! feed a heuristic that proposes a product-manifold signature: mass
//! fractions below, inside and above a flat band `|K| < 0.1` decide how
//! many hyperbolic, Euclidean and spherical components to use and how to
//! split the embedding dimensions.
//!
//! `psi` has a second, deliberately preserved variant. The `paper-literal`
//! formula doubles the `d(a,m)^2` term and flips the sign of the
//! `d(a,c)^2/2` term; on a flat path configuration it yields 3.25 where
//! the parallelogram law demands 0, so `canonical` is the default and the
//! literal form stays available for comparison.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Quadruple;
use crate::error::{Error, Result};
use crate::geometry::Curvature;
use crate::product::{ComponentSpec, ProductSignature};
use crate::rng::{stream, Domain};
use rand::Rng;

/// Which parallelogram-deviation expression to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PsiFormula {
    #[default]
    Canonical,
    PaperLiteral,
}

/// How per-sample values aggregate into one slice value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    /// Mean over all kept samples of all eligible nodes; comparable across
    /// slice sizes.
    #[default]
    Mean,
    /// Unnormalized double sum over nodes and samples.
    PaperSum,
}

/// Per-node sampling budget, or full enumeration of valid configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMode {
    Sampled { n_iter: usize },
    Exhaustive,
}

/// Rejected draws tolerated per node, as a multiple of `n_iter`, before
/// the node is dropped from the estimate.
const REJECT_CAP_FACTOR: usize = 50;

/// Undirected, deduplicated graph of the entities active at one timestamp.
/// Nodes are stored as sorted entity ids; adjacency uses local indices.
#[derive(Debug, Clone)]
pub struct SliceGraph {
    nodes: Vec<u32>,
    adj: Vec<Vec<u32>>,
    num_edges: usize,
}

const UNREACHABLE: u32 = u32::MAX;

impl SliceGraph {
    /// Build from raw (non-augmented) training facts at timestamp `t`.
    /// Reciprocal duplicates collapse into one edge; self-facts add no
    /// edge; isolated entities do not appear.
    pub fn build(train: &[Quadruple], t: u32) -> SliceGraph {
        let mut edges: Vec<(u32, u32)> = train
            .iter()
            .filter(|q| q.t == t && q.s != q.o)
            .map(|q| (q.s.min(q.o), q.s.max(q.o)))
            .collect();
        edges.sort_unstable();
        edges.dedup();

        let mut nodes: Vec<u32> = edges.iter().flat_map(|&(a, b)| [a, b]).collect();
        nodes.sort_unstable();
        nodes.dedup();

        let index: HashMap<u32, u32> = nodes
            .iter()
            .enumerate()
            .map(|(i, &e)| (e, i as u32))
            .collect();
        let mut adj = vec![Vec::new(); nodes.len()];
        for &(a, b) in &edges {
            let (ia, ib) = (index[&a], index[&b]);
            adj[ia as usize].push(ib);
            adj[ib as usize].push(ia);
        }
        for nbrs in &mut adj {
            nbrs.sort_unstable();
        }
        SliceGraph {
            nodes,
            adj,
            num_edges: edges.len(),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_edges(&self) -> usize {
        self.num_edges
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Entity ids of the nodes, ascending.
    pub fn node_ids(&self) -> &[u32] {
        &self.nodes
    }

    pub fn neighbors(&self, local: usize) -> &[u32] {
        &self.adj[local]
    }

    /// Hop distances from `src` to every node; `u32::MAX` marks a
    /// different component.
    fn bfs(&self, src: usize) -> Vec<u32> {
        let mut dist = vec![UNREACHABLE; self.nodes.len()];
        let mut queue = std::collections::VecDeque::new();
        dist[src] = 0;
        queue.push_back(src as u32);
        while let Some(u) = queue.pop_front() {
            let du = dist[u as usize];
            for &v in &self.adj[u as usize] {
                if dist[v as usize] == UNREACHABLE {
                    dist[v as usize] = du + 1;
                    queue.push_back(v);
                }
            }
        }
        dist
    }
}

/// The deviation statistic on four precomputed hop distances.
pub fn psi_from_distances(d_am: u32, d_bc: u32, d_ab: u32, d_ac: u32, formula: PsiFormula) -> f64 {
    let (am, bc, ab, ac) = (d_am as f64, d_bc as f64, d_ab as f64, d_ac as f64);
    debug_assert!(am > 0.0);
    match formula {
        PsiFormula::Canonical => {
            (am * am + bc * bc / 4.0 - (ab * ab + ac * ac) / 2.0) / (2.0 * am)
        }
        PsiFormula::PaperLiteral => {
            (2.0 * am * am + bc * bc / 4.0 - ab * ab / 2.0 + ac * ac / 2.0) / (2.0 * am)
        }
    }
}

/// One deviation sample at midpoint `m` with neighbors `b`, `c` and
/// reference `a` (local node indices). `None` when the configuration is
/// invalid: indices must be pairwise distinct apart from `b`/`c` order,
/// `b` and `c` must neighbor `m`, and `a` must be reachable.
pub fn sample_psi(
    g: &SliceGraph,
    m: usize,
    b: usize,
    c: usize,
    a: usize,
    formula: PsiFormula,
) -> Option<f64> {
    if b == c || a == m || a == b || a == c {
        return None;
    }
    let nb = g.neighbors(m);
    if nb.binary_search(&(b as u32)).is_err() || nb.binary_search(&(c as u32)).is_err() {
        return None;
    }
    let dist_m = g.bfs(m);
    if dist_m[a] == UNREACHABLE {
        return None;
    }
    let dist_b = g.bfs(b);
    let dist_c = g.bfs(c);
    Some(psi_from_distances(
        dist_m[a],
        dist_b[c],
        dist_b[a],
        dist_c[a],
        formula,
    ))
}

/// Estimate for one slice: the aggregated value plus how much evidence
/// produced it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SliceEstimate {
    pub value: f64,
    pub samples_used: usize,
    pub nodes_used: usize,
}

/// Estimate the deviation statistic over one slice.
///
/// Sampled mode draws, for every node with at least two neighbors,
/// `n_iter` valid `(b, c, a)` configurations (uniform neighbors, uniform
/// reference, rejections capped at `50 * n_iter` per node; a node that
/// cannot fill its budget is dropped). Exhaustive mode enumerates every
/// valid configuration with `b < c` once; `psi` is symmetric in `b` and
/// `c`, so the halved enumeration has the same mean.
pub fn estimate_slice(
    g: &SliceGraph,
    mode: SampleMode,
    seed: u64,
    t: u32,
    formula: PsiFormula,
    aggregation: Aggregation,
) -> Result<SliceEstimate> {
    if g.num_nodes() < 3 {
        return Err(Error::Config(format!(
            "slice {t}: fewer than 3 nodes ({})",
            g.num_nodes()
        )));
    }
    let n = g.num_nodes();
    let mut sum = 0.0;
    let mut samples_used = 0usize;
    let mut nodes_used = 0usize;

    match mode {
        SampleMode::Exhaustive => {
            for m in 0..n {
                let nbrs = g.adj[m].clone();
                if nbrs.len() < 2 {
                    continue;
                }
                let dist_m = g.bfs(m);
                let dist_n: Vec<Vec<u32>> =
                    nbrs.iter().map(|&x| g.bfs(x as usize)).collect();
                let mut node_samples = 0usize;
                for bi in 0..nbrs.len() {
                    for ci in bi + 1..nbrs.len() {
                        let (b, c) = (nbrs[bi] as usize, nbrs[ci] as usize);
                        let d_bc = dist_n[bi][c];
                        for a in 0..n {
                            if a == m || a == b || a == c || dist_m[a] == UNREACHABLE {
                                continue;
                            }
                            sum += psi_from_distances(
                                dist_m[a],
                                d_bc,
                                dist_n[bi][a],
                                dist_n[ci][a],
                                formula,
                            );
                            node_samples += 1;
                        }
                    }
                }
                if node_samples > 0 {
                    nodes_used += 1;
                    samples_used += node_samples;
                }
            }
        }
        SampleMode::Sampled { n_iter } => {
            if n_iter == 0 {
                return Err(Error::Config("n_iter must be positive".into()));
            }
            let mut rng = stream(seed, Domain::Curvature, t as u64, 0);
            for m in 0..n {
                let nbrs = g.adj[m].clone();
                if nbrs.len() < 2 {
                    continue;
                }
                let dist_m = g.bfs(m);
                // BFS trees from sampled neighbors, built lazily: every
                // distance psi needs is rooted at m, b or c.
                let mut cache: HashMap<u32, Vec<u32>> = HashMap::new();
                let mut kept = 0usize;
                let mut node_sum = 0.0;
                let cap = REJECT_CAP_FACTOR * n_iter;
                let mut attempts = 0usize;
                while kept < n_iter && attempts < cap {
                    attempts += 1;
                    let b = nbrs[rng.random_range(0..nbrs.len())];
                    let c = nbrs[rng.random_range(0..nbrs.len())];
                    if b == c {
                        continue;
                    }
                    let a = rng.random_range(0..n);
                    if a == m || a as u32 == b || a as u32 == c || dist_m[a] == UNREACHABLE {
                        continue;
                    }
                    let dist_b = cache.entry(b).or_insert_with(|| g.bfs(b as usize));
                    let (d_bc, d_ab) = (dist_b[c as usize], dist_b[a]);
                    let dist_c = cache.entry(c).or_insert_with(|| g.bfs(c as usize));
                    let d_ac = dist_c[a];
                    node_sum += psi_from_distances(dist_m[a], d_bc, d_ab, d_ac, formula);
                    kept += 1;
                }
                if kept == n_iter {
                    sum += node_sum;
                    samples_used += kept;
                    nodes_used += 1;
                }
            }
        }
    }

    if samples_used == 0 {
        return Err(Error::Config(format!(
            "slice {t}: no valid (m, b, c, a) configuration"
        )));
    }
    let value = match aggregation {
        Aggregation::Mean => sum / samples_used as f64,
        Aggregation::PaperSum => sum,
    };
    Ok(SliceEstimate {
        value,
        samples_used,
        nodes_used,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct HistogramEntry {
    pub timestamp_index: u32,
    pub curvature: f64,
    pub samples_used: usize,
}

/// Per-timestamp estimates plus skipped slices and sampling metadata.
#[derive(Debug, Clone, Serialize)]
pub struct CurvatureHistogram {
    pub entries: Vec<HistogramEntry>,
    /// `(timestamp_index, reason)` for slices that produced no value.
    pub skipped: Vec<(u32, String)>,
    pub n_iter: usize,
    pub seed: u64,
    pub formula: PsiFormula,
    pub aggregation: Aggregation,
}

impl CurvatureHistogram {
    pub fn values(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.curvature).collect()
    }

    /// CSV with one row per slice; skips appended as `#` comment lines.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("timestamp_index,curvature,samples_used\n");
        for e in &self.entries {
            out.push_str(&format!(
                "{},{},{}\n",
                e.timestamp_index, e.curvature, e.samples_used
            ));
        }
        for (t, reason) in &self.skipped {
            out.push_str(&format!("# skipped {t}: {reason}\n"));
        }
        out
    }

    pub fn summary(&self) -> CurvatureSummary {
        CurvatureSummary::from_values(&self.values())
    }
}

/// The flat band: estimates with `|K|` below this count as Euclidean.
pub const FLAT_BAND: f64 = 0.1;

#[derive(Debug, Clone, Copy, Serialize)]
pub struct CurvatureSummary {
    pub min: f64,
    pub median: f64,
    pub max: f64,
    pub frac_negative: f64,
    pub frac_flat: f64,
    pub frac_positive: f64,
    pub num_slices: usize,
}

fn median_of_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

impl CurvatureSummary {
    pub fn from_values(values: &[f64]) -> CurvatureSummary {
        assert!(!values.is_empty(), "summary of empty histogram");
        let mut sorted = values.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite curvature estimates"));
        let n = sorted.len() as f64;
        let neg = sorted.iter().filter(|&&v| v <= -FLAT_BAND).count() as f64;
        let pos = sorted.iter().filter(|&&v| v >= FLAT_BAND).count() as f64;
        CurvatureSummary {
            min: sorted[0],
            median: median_of_sorted(&sorted),
            max: sorted[sorted.len() - 1],
            frac_negative: neg / n,
            frac_flat: (sorted.len() as f64 - neg - pos) / n,
            frac_positive: pos / n,
            num_slices: sorted.len(),
        }
    }
}

/// Estimate every timestamp slice of the training split. Slices run in
/// parallel with independent RNG streams keyed by `(seed, t)`; results are
/// collected in timestamp order, so the outcome does not depend on the
/// worker count. Slices without a valid configuration are skipped, not
/// fatal.
pub fn estimate_all(
    train: &[Quadruple],
    num_timestamps: usize,
    mode: SampleMode,
    seed: u64,
    formula: PsiFormula,
    aggregation: Aggregation,
) -> CurvatureHistogram {
    let per_slice: Vec<(u32, std::result::Result<SliceEstimate, String>)> = (0..num_timestamps
        as u32)
        .into_par_iter()
        .map(|t| {
            let g = SliceGraph::build(train, t);
            if g.is_empty() {
                return (t, Err("empty slice".to_string()));
            }
            let r = estimate_slice(&g, mode, seed, t, formula, aggregation)
                .map_err(|e| e.to_string());
            (t, r)
        })
        .collect();

    let mut entries = Vec::new();
    let mut skipped = Vec::new();
    for (t, r) in per_slice {
        match r {
            Ok(est) => entries.push(HistogramEntry {
                timestamp_index: t,
                curvature: est.value,
                samples_used: est.samples_used,
            }),
            Err(reason) => skipped.push((t, reason)),
        }
    }
    CurvatureHistogram {
        entries,
        skipped,
        n_iter: match mode {
            SampleMode::Sampled { n_iter } => n_iter,
            SampleMode::Exhaustive => 0,
        },
        seed,
        formula,
        aggregation,
    }
}

/// Sign classes of the histogram mass, in component output order.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum SignClass {
    Negative,
    Flat,
    Positive,
}

/// Map a histogram to a product signature: allocate components to the
/// nonzero sign classes proportionally (each gets at least one, total
/// capped at `max_components`), split `total_dim` proportionally with the
/// remainder going to the largest fraction, and set each class's curvature
/// to the median of its estimates (0 for the flat class).
pub fn propose_signature(
    hist: &CurvatureHistogram,
    total_dim: usize,
    max_components: usize,
) -> Result<ProductSignature> {
    if hist.entries.is_empty() {
        return Err(Error::Config("histogram has no slice estimates".into()));
    }
    if max_components == 0 || total_dim < max_components {
        return Err(Error::Config(format!(
            "need total_dim >= max_components >= 1, got {total_dim} and {max_components}"
        )));
    }
    let values = hist.values();
    let mut class_values: Vec<(SignClass, Vec<f64>)> = vec![
        (SignClass::Negative, Vec::new()),
        (SignClass::Flat, Vec::new()),
        (SignClass::Positive, Vec::new()),
    ];
    for &v in &values {
        let idx = if v <= -FLAT_BAND {
            0
        } else if v >= FLAT_BAND {
            2
        } else {
            1
        };
        class_values[idx].1.push(v);
    }
    // (class, slice count, median); quotas below use exact integer
    // arithmetic on counts so proportional splits stay exact.
    let mut classes: Vec<(SignClass, usize, f64)> = Vec::new();
    for (class, vals) in class_values {
        if vals.is_empty() {
            continue;
        }
        let mut sorted = vals.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite estimates"));
        let median = if class == SignClass::Flat {
            0.0
        } else {
            median_of_sorted(&sorted)
        };
        classes.push((class, vals.len(), median));
    }
    // More classes than allowed components: keep the heaviest.
    if classes.len() > max_components {
        classes.sort_by(|a, b| b.1.cmp(&a.1));
        classes.truncate(max_components);
        classes.sort_by_key(|&(class, _, _)| match class {
            SignClass::Negative => 0,
            SignClass::Flat => 1,
            SignClass::Positive => 2,
        });
    }
    let mass: usize = classes.iter().map(|c| c.1).sum();

    // Component apportionment: floor of the exact quota count*C/mass, at
    // least 1 each; fix the total by remainder (increments favor the
    // largest remainder then the earlier class, decrements the reverse).
    let quota_rem = |count: usize, share: usize| -> (usize, usize) {
        ((count * share) / mass, (count * share) % mass)
    };
    let mut comps: Vec<usize> = classes
        .iter()
        .map(|c| quota_rem(c.1, max_components).0.max(1))
        .collect();
    while comps.iter().sum::<usize>() > max_components {
        let i = (0..comps.len())
            .filter(|&i| comps[i] > 1)
            .min_by_key(|&i| (quota_rem(classes[i].1, max_components).1, usize::MAX - i))
            .expect("some class has more than one component");
        comps[i] -= 1;
    }
    while comps.iter().sum::<usize>() < max_components {
        let i = (0..comps.len())
            .max_by_key(|&i| (quota_rem(classes[i].1, max_components).1, usize::MAX - i))
            .expect("nonempty classes");
        comps[i] += 1;
    }

    // Dimension split: proportional floors, each class at least one dim
    // per component, leftovers to the largest class (ties to the earlier).
    let mut dims: Vec<usize> = classes
        .iter()
        .zip(&comps)
        .map(|(c, &k)| quota_rem(c.1, total_dim).0.max(k))
        .collect();
    let largest = (0..classes.len())
        .max_by_key(|&i| (classes[i].1, usize::MAX - i))
        .expect("nonempty");
    while dims.iter().sum::<usize>() > total_dim {
        let i = (0..dims.len())
            .filter(|&i| dims[i] > comps[i])
            .max_by_key(|&i| (dims[i], usize::MAX - i))
            .ok_or_else(|| {
                Error::Config(format!(
                    "cannot fit {max_components} components into {total_dim} dimensions"
                ))
            })?;
        dims[i] -= 1;
    }
    let deficit = total_dim - dims.iter().sum::<usize>();
    dims[largest] += deficit;

    let mut specs = Vec::new();
    for ((class, _, median), (&k, &class_dim)) in classes.iter().zip(comps.iter().zip(&dims)) {
        let base = class_dim / k;
        let extra = class_dim % k;
        for i in 0..k {
            let dim = base + usize::from(i < extra);
            let kval = match class {
                SignClass::Flat => Curvature::ZERO,
                _ => Curvature::new(*median)?,
            };
            specs.push(ComponentSpec::new(dim, kval)?);
        }
    }
    ProductSignature::new(specs)
}
