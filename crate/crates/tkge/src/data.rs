//! Dataset loading and indexing.
//!
//! Input files are tab-separated quadruples `subject \t predicate \t object
//! \t timestamp`, one per line, with an optional fifth column that is
//! ignored (some distributions carry a second time field). Timestamps are
//! either ISO-8601 dates (`2014-03-25`) or integer literals; one file must
//! not mix the two.
//!
//! Indexing is transductive: entity and predicate vocabularies are built
//! over the union of train, valid and test in first-appearance order, and
//! timestamps are sorted chronologically and renumbered `0..|T|-1`. Every
//! predicate `p` gets a reciprocal twin `p + |P|` so subject queries become
//! object queries of the twin.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use chrono::NaiveDate;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fully indexed fact. Predicates below `|P|` are originals; predicates in
/// `|P|..2|P|` are reciprocal twins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Quadruple {
    pub s: u32,
    pub p: u32,
    pub o: u32,
    pub t: u32,
}

/// Chronologically ordered timestamp key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TimeKey {
    Int(i64),
    Date(NaiveDate),
}

impl TimeKey {
    fn parse(s: &str) -> Option<TimeKey> {
        if let Ok(i) = s.parse::<i64>() {
            return Some(TimeKey::Int(i));
        }
        NaiveDate::parse_from_str(s, "%Y-%m-%d").ok().map(TimeKey::Date)
    }

    fn same_kind(&self, other: &TimeKey) -> bool {
        matches!(
            (self, other),
            (TimeKey::Int(_), TimeKey::Int(_)) | (TimeKey::Date(_), TimeKey::Date(_))
        )
    }
}

impl fmt::Display for TimeKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TimeKey::Int(i) => write!(f, "{i}"),
            TimeKey::Date(d) => write!(f, "{}", d.format("%Y-%m-%d")),
        }
    }
}

/// One parsed line, not yet indexed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawFact {
    pub s: String,
    pub p: String,
    pub o: String,
    pub t: TimeKey,
}

/// Label <-> index map preserving first-appearance order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Vocab {
    labels: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    pub fn intern(&mut self, label: &str) -> u32 {
        if let Some(&i) = self.index.get(label) {
            return i;
        }
        let i = u32::try_from(self.labels.len()).expect("vocabulary overflow");
        self.labels.push(label.to_owned());
        self.index.insert(label.to_owned(), i);
        i
    }

    pub fn get(&self, label: &str) -> Option<u32> {
        self.index.get(label).copied()
    }

    pub fn label(&self, i: u32) -> &str {
        &self.labels[i as usize]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Rebuild from an ordered label list (checkpoint vocabularies).
    pub fn from_labels(labels: Vec<String>) -> Result<Self> {
        let mut v = Vocab::default();
        for l in &labels {
            if v.index.contains_key(l) {
                return Err(Error::Checkpoint(format!("duplicate vocabulary label {l:?}")));
            }
            v.intern(l);
        }
        Ok(v)
    }
}

/// Parse TSV quadruples from a reader. `source` names the input in errors.
pub fn parse_tsv<R: BufRead>(reader: R, source: &str) -> Result<Vec<RawFact>> {
    let mut facts = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        let lineno = lineno + 1;
        let err = |msg: String| Error::Data {
            path: source.to_owned(),
            line: lineno,
            msg,
        };
        if line.is_empty() {
            return Err(err("empty line".into()));
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 && fields.len() != 5 {
            return Err(err(format!(
                "expected 4 tab-separated fields (plus an optional ignored fifth), got {}",
                fields.len()
            )));
        }
        for (i, name) in ["subject", "predicate", "object", "timestamp"]
            .iter()
            .enumerate()
        {
            if fields[i].is_empty() {
                return Err(err(format!("empty {name} field")));
            }
        }
        let t = TimeKey::parse(fields[3]).ok_or_else(|| {
            err(format!(
                "timestamp {:?} is neither an integer nor an ISO-8601 date (YYYY-MM-DD)",
                fields[3]
            ))
        })?;
        facts.push(RawFact {
            s: fields[0].to_owned(),
            p: fields[1].to_owned(),
            o: fields[2].to_owned(),
            t,
        });
    }
    if facts.is_empty() {
        return Err(Error::Data {
            path: source.to_owned(),
            line: 0,
            msg: "file contains no facts".into(),
        });
    }
    Ok(facts)
}

/// Load one TSV split from disk.
pub fn load_tsv<P: AsRef<Path>>(path: P) -> Result<Vec<RawFact>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::Data {
        path: path.display().to_string(),
        line: 0,
        msg: e.to_string(),
    })?;
    parse_tsv(BufReader::new(file), &path.display().to_string())
}

/// Indexed dataset over the union of all splits.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub entities: Vocab,
    /// Raw predicates only; reciprocal twins are implicit.
    pub predicates: Vocab,
    /// Canonical timestamp labels in chronological order.
    pub timestamps: Vec<String>,
    pub time_keys: Vec<TimeKey>,
    pub train: Vec<Quadruple>,
    pub valid: Vec<Quadruple>,
    pub test: Vec<Quadruple>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct DatasetSummary {
    pub num_entities: usize,
    pub num_raw_predicates: usize,
    pub num_timestamps: usize,
    pub train_quadruples: usize,
    pub valid_quadruples: usize,
    pub test_quadruples: usize,
}

impl Dataset {
    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_raw_predicates(&self) -> usize {
        self.predicates.len()
    }

    /// Predicate count including reciprocal twins.
    pub fn num_predicates(&self) -> usize {
        self.predicates.len() * 2
    }

    pub fn num_timestamps(&self) -> usize {
        self.timestamps.len()
    }

    pub fn split(&self, which: Split) -> &[Quadruple] {
        match which {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    pub fn summary(&self) -> DatasetSummary {
        DatasetSummary {
            num_entities: self.num_entities(),
            num_raw_predicates: self.num_raw_predicates(),
            num_timestamps: self.num_timestamps(),
            train_quadruples: self.train.len(),
            valid_quadruples: self.valid.len(),
            test_quadruples: self.test.len(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Valid => write!(f, "valid"),
            Split::Test => write!(f, "test"),
        }
    }
}

/// Index three splits into one transductive dataset.
pub fn build_dataset(
    train: &[RawFact],
    valid: &[RawFact],
    test: &[RawFact],
) -> Result<Dataset> {
    if train.is_empty() {
        return Err(Error::Config("train split is empty".into()));
    }
    // Timestamps must be homogeneous and get chronological indices.
    let mut keys: Vec<TimeKey> = Vec::new();
    for f in train.iter().chain(valid).chain(test) {
        if let Some(first) = keys.first() {
            if !first.same_kind(&f.t) {
                return Err(Error::Config(format!(
                    "mixed timestamp kinds: {first} vs {}",
                    f.t
                )));
            }
        }
        keys.push(f.t);
    }
    keys.sort_unstable();
    keys.dedup();
    let time_index: HashMap<TimeKey, u32> = keys
        .iter()
        .enumerate()
        .map(|(i, &k)| (k, i as u32))
        .collect();

    fn index_split(
        facts: &[RawFact],
        entities: &mut Vocab,
        predicates: &mut Vocab,
        time_index: &HashMap<TimeKey, u32>,
    ) -> Vec<Quadruple> {
        facts
            .iter()
            .map(|f| Quadruple {
                s: entities.intern(&f.s),
                p: predicates.intern(&f.p),
                o: entities.intern(&f.o),
                t: time_index[&f.t],
            })
            .collect()
    }

    let mut entities = Vocab::default();
    let mut predicates = Vocab::default();
    let train_q = index_split(train, &mut entities, &mut predicates, &time_index);
    let valid_q = index_split(valid, &mut entities, &mut predicates, &time_index);
    let test_q = index_split(test, &mut entities, &mut predicates, &time_index);

    Ok(Dataset {
        entities,
        predicates,
        timestamps: keys.iter().map(|k| k.to_string()).collect(),
        time_keys: keys,
        train: train_q,
        valid: valid_q,
        test: test_q,
    })
}

/// Interleave each quadruple with its reciprocal twin
/// `(o, p + |P|, s, t)`. The result has exactly twice the input length.
pub fn augment_reciprocal(quads: &[Quadruple], num_raw_predicates: usize) -> Vec<Quadruple> {
    let shift = u32::try_from(num_raw_predicates).expect("predicate count overflow");
    let mut out = Vec::with_capacity(quads.len() * 2);
    for q in quads {
        out.push(*q);
        out.push(Quadruple {
            s: q.o,
            p: q.p + shift,
            o: q.s,
            t: q.t,
        });
    }
    out
}

/// Draw `n` corrupted objects uniformly from `E \ {gold}`. The draw is exact
/// (index remapping, no rejection loop), so each call consumes exactly `n`
/// samples from `rng`.
pub fn sample_negatives<R: Rng>(rng: &mut R, num_entities: usize, gold: u32, n: usize, out: &mut Vec<u32>) {
    assert!(num_entities >= 2, "need at least two entities to corrupt");
    let m = num_entities as u32 - 1;
    out.clear();
    out.reserve(n);
    for _ in 0..n {
        let r = rng.random_range(0..m);
        out.push(if r >= gold { r + 1 } else { r });
    }
}

/// How timestamp indices are mapped to the scalar `tau` that multiplies
/// entity velocities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TimeScale {
    /// `tau = t / max(|T| - 1, 1)`, so tau spans [0, 1].
    #[default]
    Normalized,
    /// `tau = t`. Kept for ablations; large `|T|` values push points toward
    /// the domain boundary.
    Raw,
}

/// Scalar time value for timestamp index `t`.
pub fn time_value(t: u32, num_timestamps: usize, scale: TimeScale) -> f64 {
    match scale {
        TimeScale::Normalized => f64::from(t) / (num_timestamps.saturating_sub(1).max(1) as f64),
        TimeScale::Raw => f64::from(t),
    }
}
