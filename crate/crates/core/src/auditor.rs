//! The curious cloud's side: what can be inferred from the logged view.
//!
//! Bins are identified exactly as the cloud can identify them, by the sorted
//! request (token set or value set). Nothing here consults owner secrets.

use std::collections::{BTreeMap, BTreeSet};

use num_rational::Ratio;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::binning::Side;
use crate::cloudstore::{AvEntry, QueryKind, Request};
use crate::error::{Error, Result};
use crate::par;

/// Largest `n` enumerated exhaustively.
pub const MAX_EXACT_N: usize = 9;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurvivingMatchGraph {
    pub table: String,
    pub attribute: String,
    /// Sensitive bins in order of first appearance, by request key.
    pub left: Vec<Vec<String>>,
    pub right: Vec<Vec<String>>,
    /// Returned record ids per sensitive bin.
    pub left_records: Vec<BTreeSet<String>>,
    pub edges: BTreeSet<(usize, usize)>,
    /// Expected bin counts, when known; unseen bins count as dropped.
    pub expected: Option<(usize, usize)>,
}

impl SurvivingMatchGraph {
    /// Value-level matches implied by the bin edges: every returned
    /// ciphertext against every requested cleartext value.
    pub fn value_graph(&self) -> BTreeSet<(String, String)> {
        let mut out = BTreeSet::new();
        for &(l, r) in &self.edges {
            for c in &self.left_records[l] {
                for v in &self.right[r] {
                    out.insert((c.clone(), v.clone()));
                }
            }
        }
        out
    }
}

fn intern(keys: &mut Vec<Vec<String>>, k: Vec<String>) -> usize {
    match keys.iter().position(|x| *x == k) {
        Some(i) => i,
        None => {
            keys.push(k);
            keys.len() - 1
        }
    }
}

/// Drops every entry that precedes the latest upload to its table. Uploads
/// (inserts, re-binning) change bins and occurrence tokens, so queries from
/// before them describe a layout that no longer exists.
pub fn current_generation(log: &[AvEntry]) -> Vec<AvEntry> {
    let mut last: BTreeMap<&str, u64> = BTreeMap::new();
    for e in log.iter().filter(|e| e.kind == QueryKind::Insert) {
        last.insert(&e.table, e.query_seq);
    }
    log.iter()
        .filter(|e| last.get(e.table.as_str()).map_or(true, |&s| e.query_seq > s))
        .cloned()
        .collect()
}

/// Groups the log by query, keeping selection queries on `table.attr`.
fn selection_groups<'a>(log: &'a [AvEntry], table: &str, attr: &str) -> BTreeMap<u64, Vec<&'a AvEntry>> {
    let mut groups: BTreeMap<u64, Vec<&AvEntry>> = BTreeMap::new();
    for e in log {
        if e.kind == QueryKind::Selection && e.table == table {
            groups.entry(e.query_seq).or_default().push(e);
        }
    }
    groups.retain(|_, es| es.iter().any(|e| e.attr.as_deref() == Some(attr)));
    groups
}

pub fn build_surviving_match_graph(
    log: &[AvEntry],
    table: &str,
    attr: &str,
    expected: Option<(usize, usize)>,
) -> Result<SurvivingMatchGraph> {
    let mut g = SurvivingMatchGraph {
        table: table.into(),
        attribute: attr.into(),
        expected,
        ..Default::default()
    };
    for (seq, es) in selection_groups(log, table, attr) {
        let sens: Vec<&&AvEntry> = es
            .iter()
            .filter(|e| e.side == Side::Sensitive && matches!(e.request, Request::Tokens(_)))
            .collect();
        let clear: Vec<&&AvEntry> = es
            .iter()
            .filter(|e| e.side == Side::NonSensitive && matches!(e.request, Request::Values(_)))
            .collect();
        if sens.len() != 1 || clear.len() != 1 || es.len() != 2 {
            return Err(Error::MalformedLog(format!(
                "query {seq} on {table}.{attr} does not pair one sensitive and one non-sensitive fetch"
            )));
        }
        let l = intern(&mut g.left, sens[0].request_key());
        if g.left_records.len() < g.left.len() {
            g.left_records.push(BTreeSet::new());
        }
        g.left_records[l].extend(sens[0].returned_ids.iter().cloned());
        let r = intern(&mut g.right, clear[0].request_key());
        g.edges.insert((l, r));
    }
    Ok(g)
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BipartiteCheck {
    pub full_bipartite: bool,
    /// Observed bin pairs never co-retrieved.
    pub dropped_matches: Vec<(usize, usize)>,
    /// Bins expected but never seen, per side.
    pub unseen: (usize, usize),
}

pub fn check_full_bipartite(g: &SurvivingMatchGraph) -> BipartiteCheck {
    let mut dropped = Vec::new();
    for l in 0..g.left.len() {
        for r in 0..g.right.len() {
            if !g.edges.contains(&(l, r)) {
                dropped.push((l, r));
            }
        }
    }
    let unseen = g.expected.map_or((0, 0), |(s, ns)| {
        (s.saturating_sub(g.left.len()), ns.saturating_sub(g.right.len()))
    });
    BipartiteCheck {
        full_bipartite: dropped.is_empty() && unseen == (0, 0),
        dropped_matches: dropped,
        unseen,
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SizeCheck {
    pub uniform: bool,
    /// Distinct sensitive-side fetch sizes per `table.attr`.
    pub sizes: BTreeMap<String, BTreeSet<usize>>,
}

/// Every sensitive-side selection fetch on the same `table.attr` must
/// return the same number of ciphertexts.
pub fn check_size_uniformity(log: &[AvEntry]) -> SizeCheck {
    let mut sizes: BTreeMap<String, BTreeSet<usize>> = BTreeMap::new();
    for e in log {
        if e.kind == QueryKind::Selection && e.side == Side::Sensitive && matches!(e.request, Request::Tokens(_)) {
            let key = format!("{}.{}", e.table, e.attr.as_deref().unwrap_or("*"));
            sizes.entry(key).or_default().insert(e.returned_ids.len());
        }
    }
    SizeCheck {
        uniform: sizes.values().all(|s| s.len() <= 1),
        sizes,
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkewFinding {
    pub table: String,
    pub attribute: String,
    /// Fetch count per observed sensitive bin.
    pub fetch_counts: Vec<usize>,
    pub hot: Vec<usize>,
    pub skewed: bool,
    /// Frequent queries hit only some of the sensitive bins.
    pub flagged: bool,
}

/// Per-sensitive-bin fetch frequencies. A bin is hot when its count is
/// above the midpoint of the observed range; the trace is skewed when the
/// busiest bin sees more than twice the quietest. A skewed trace whose hot
/// bins are a strict subset of all bins is flagged.
pub fn check_frequency_exposure(
    log: &[AvEntry],
    table: &str,
    attr: &str,
    sensitive_bins: Option<usize>,
) -> SkewFinding {
    let mut keys: Vec<Vec<String>> = Vec::new();
    let mut counts: Vec<usize> = Vec::new();
    for es in selection_groups(log, table, attr).values() {
        for e in es.iter().filter(|e| e.side == Side::Sensitive) {
            let i = intern(&mut keys, e.request_key());
            if counts.len() < keys.len() {
                counts.push(0);
            }
            counts[i] += 1;
        }
    }
    if let Some(n) = sensitive_bins {
        counts.resize(counts.len().max(n), 0);
    }
    let mut f = SkewFinding {
        table: table.into(),
        attribute: attr.into(),
        ..Default::default()
    };
    if let (Some(&min), Some(&max)) = (counts.iter().min(), counts.iter().max()) {
        let mid = (min + max) as f64 / 2.0;
        f.hot = (0..counts.len()).filter(|&i| counts[i] as f64 > mid).collect();
        f.skewed = max > 2 * min.max(1);
        f.flagged = f.skewed && !f.hot.is_empty() && f.hot.len() < counts.len();
    }
    f.fetch_counts = counts;
    f
}

/// One observed query in the allocation model: the ciphertexts and
/// cleartext values it returned, and how many true pairs they share.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservedQuery {
    pub ciphertexts: BTreeSet<usize>,
    pub cleartexts: BTreeSet<usize>,
    pub shared: usize,
}

impl ObservedQuery {
    pub fn new(
        ciphertexts: impl IntoIterator<Item = usize>,
        cleartexts: impl IntoIterator<Item = usize>,
        shared: usize,
    ) -> Self {
        ObservedQuery {
            ciphertexts: ciphertexts.into_iter().collect(),
            cleartexts: cleartexts.into_iter().collect(),
            shared,
        }
    }

    fn admits(&self, perm: &[usize]) -> bool {
        self.ciphertexts
            .iter()
            .filter(|&&e| self.cleartexts.contains(&perm[e]))
            .count()
            == self.shared
    }
}

/// Consistent allocations of `n` ciphertexts to `n` values, and how many
/// of them map ciphertext `e` to value `v`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AllocationCount {
    pub n: usize,
    pub total: u64,
    /// `pairs[e][v]`.
    pub pairs: Vec<Vec<u64>>,
}

impl AllocationCount {
    pub fn fixed(&self, e: usize, v: usize) -> u64 {
        self.pairs[e][v]
    }

    pub fn probability(&self, e: usize, v: usize) -> Ratio<u64> {
        Ratio::new(self.pairs[e][v], self.total.max(1))
    }

    /// True when every pair has the prior probability `1/n`.
    pub fn uniform(&self) -> bool {
        let prior = Ratio::new(1, self.n as u64);
        self.total > 0 && (0..self.n).all(|e| (0..self.n).all(|v| self.probability(e, v) == prior))
    }
}

fn check_model(n: usize, queries: &[ObservedQuery]) -> Result<()> {
    if n == 0 {
        return Err(Error::Config("allocation model needs n >= 1".into()));
    }
    for q in queries {
        if q.ciphertexts.iter().chain(&q.cleartexts).any(|&i| i >= n) {
            return Err(Error::Config(format!("query refers to an index outside 0..{n}")));
        }
    }
    Ok(())
}

/// Rearranges `a` into the next lexicographic permutation; false at the end.
fn next_permutation(a: &mut [usize]) -> bool {
    let Some(i) = (1..a.len()).rev().find(|&i| a[i - 1] < a[i]) else {
        return false;
    };
    let j = (i..a.len())
        .rev()
        .find(|&j| a[j] > a[i - 1])
        .expect("pivot has a successor");
    a.swap(i - 1, j);
    a[i..].reverse();
    true
}

/// Exhaustive count over all `n!` bijections, split by the image of
/// ciphertext 0 across threads.
pub fn allocation_count(n: usize, queries: &[ObservedQuery]) -> Result<AllocationCount> {
    check_model(n, queries)?;
    if n > MAX_EXACT_N {
        return Err(Error::Config(format!(
            "exhaustive allocation count is limited to n <= {MAX_EXACT_N}; use allocation_sample"
        )));
    }
    let parts = par::map_range(n, |first| {
        let mut pairs = vec![vec![0u64; n]; n];
        let mut total = 0u64;
        let mut rest: Vec<usize> = (0..n).filter(|&v| v != first).collect();
        let mut perm = vec![0; n];
        loop {
            perm[0] = first;
            perm[1..].copy_from_slice(&rest);
            if queries.iter().all(|q| q.admits(&perm)) {
                total += 1;
                for (e, &v) in perm.iter().enumerate() {
                    pairs[e][v] += 1;
                }
            }
            if !next_permutation(&mut rest) {
                break;
            }
        }
        (total, pairs)
    });
    let mut out = AllocationCount {
        n,
        total: 0,
        pairs: vec![vec![0; n]; n],
    };
    for (t, p) in parts {
        out.total += t;
        for (row, prow) in out.pairs.iter_mut().zip(p) {
            for (c, pc) in row.iter_mut().zip(prow) {
                *c += pc;
            }
        }
    }
    Ok(out)
}

/// Monte Carlo estimate for larger `n`; not exhaustive.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AllocationEstimate {
    pub n: usize,
    pub samples: usize,
    pub consistent: usize,
    pub hits: usize,
    pub estimate: f64,
    /// 95% Wilson score interval.
    pub interval: (f64, f64),
}

pub fn allocation_sample(
    n: usize,
    queries: &[ObservedQuery],
    pair: (usize, usize),
    samples: usize,
    seed: u64,
) -> Result<AllocationEstimate> {
    check_model(n, queries)?;
    if pair.0 >= n || pair.1 >= n {
        return Err(Error::Config("pair outside the model".into()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut perm: Vec<usize> = (0..n).collect();
    let (mut consistent, mut hits) = (0, 0);
    for _ in 0..samples {
        perm.shuffle(&mut rng);
        if queries.iter().all(|q| q.admits(&perm)) {
            consistent += 1;
            hits += usize::from(perm[pair.0] == pair.1);
        }
    }
    let (estimate, interval) = wilson(hits, consistent);
    Ok(AllocationEstimate {
        n,
        samples,
        consistent,
        hits,
        estimate,
        interval,
    })
}

fn wilson(k: usize, n: usize) -> (f64, (f64, f64)) {
    if n == 0 {
        return (0.0, (0.0, 1.0));
    }
    let z = 1.96f64;
    let (k, n) = (k as f64, n as f64);
    let p = k / n;
    let denom = 1.0 + z * z / n;
    let centre = (p + z * z / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt() / denom;
    (p, ((centre - half).max(0.0), (centre + half).min(1.0)))
}

/// One query on a square layout of `n` values: ciphertexts of sensitive
/// bin 0 and values of non-sensitive bin 0, sharing exactly one pair.
pub fn square_query(n: usize) -> Result<ObservedQuery> {
    let r = (n as f64).sqrt().round() as usize;
    if r * r != n {
        return Err(Error::Config(format!("{n} is not a perfect square")));
    }
    Ok(ObservedQuery::new((0..n).step_by(r), 0..r, 1))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub bipartite: Vec<(SurvivingMatchGraph, BipartiteCheck)>,
    pub size: Option<SizeCheck>,
    pub skew: Vec<SkewFinding>,
    pub allocation: Option<AllocationCount>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.bipartite.iter().all(|(_, c)| c.full_bipartite)
            && self.size.as_ref().map_or(true, |s| s.uniform)
            && self.skew.iter().all(|f| !f.flagged)
            && self.allocation.as_ref().map_or(true, AllocationCount::uniform)
    }
}
