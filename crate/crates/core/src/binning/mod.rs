//! Bin layouts for selection queries.
//!
//! A layout has a *row* side of `x` bins holding at most `y` values and a
//! *column* side of `ceil(n / x)` bins holding `x` values, where `n` is the
//! size of the larger value set and `(x, y)` its approximately-square
//! factors. Normally the sensitive values are the rows; when there are more
//! sensitive than non-sensitive values the roles swap.
//!
//! The placement law ties the two sides together: if the row value at
//! `row[i][j]` has an associate, that associate sits at `col[j][i]`. A value
//! at slot `j` of a bin on one side is therefore retrieved together with bin
//! `j` of the other side.

mod construct;
pub mod insert;
pub mod multiplicity;
pub mod persist;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use construct::{
    associate, closest_square, create_bins_base, create_bins_extended, create_bins_workload, ExtendedCost,
};
pub use insert::{insert_batch, should_rebin, InsertBatch, InsertOutcome, OverheadHistory};
pub use multiplicity::{
    assign_multiplicity, assign_multiplicity_exact, create_bins_multiplicity, MultiplicityAssignment,
    MultiplicityLayout,
};
pub use persist::{layout_from_json, layout_to_json, load_layout, save_layout};

use crate::error::{Error, Result};
use crate::partitioner::ValueHistogram;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Sensitive,
    NonSensitive,
}

impl Side {
    pub fn other(self) -> Side {
        match self {
            Side::Sensitive => Side::NonSensitive,
            Side::NonSensitive => Side::Sensitive,
        }
    }
}

/// A bin entry: a real attribute value or a placeholder that owns no tuples.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Slot {
    Value(String),
    Fake(u32),
}

impl Slot {
    pub fn value(&self) -> Option<&str> {
        match self {
            Slot::Value(v) => Some(v),
            Slot::Fake(_) => None,
        }
    }

    pub fn is_fake(&self) -> bool {
        matches!(self, Slot::Fake(_))
    }
}

/// Secret ordering applied to values before placement.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Permutation {
    #[default]
    Identity,
    Seeded(u64),
}

impl Permutation {
    pub fn apply<T>(&self, items: &mut [T]) {
        if let Permutation::Seeded(seed) = *self {
            items.shuffle(&mut ChaCha20Rng::seed_from_u64(seed));
        }
    }

    pub fn seed(&self) -> Option<u64> {
        match *self {
            Permutation::Identity => None,
            Permutation::Seeded(s) => Some(s),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinMode {
    Base,
    Extended,
    Workload,
    Multiplicity,
}

impl std::str::FromStr for BinMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "base" => BinMode::Base,
            "extended" => BinMode::Extended,
            "workload" => BinMode::Workload,
            "multiplicity" => BinMode::Multiplicity,
            _ => return Err(Error::Config(format!("unknown bin mode `{s}`"))),
        })
    }
}

/// Values expected to be queried far more often than the rest.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkloadProfile {
    pub frequent: Vec<String>,
}

impl WorkloadProfile {
    pub fn new<I, S>(frequent: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        WorkloadProfile {
            frequent: frequent.into_iter().map(Into::into).collect(),
        }
    }
}

/// Sensitive / non-sensitive bin indexes fetched together.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BinPair {
    pub sensitive: usize,
    pub nonsensitive: usize,
}

/// Values to bin and the sensitive -> non-sensitive association.
#[derive(Clone, Debug, PartialEq)]
pub struct BinInput {
    pub attribute: String,
    pub sensitive: Vec<String>,
    pub nonsensitive: Vec<String>,
    pub association: BTreeMap<String, String>,
}

impl BinInput {
    pub fn new(
        attribute: &str,
        sensitive: Vec<String>,
        nonsensitive: Vec<String>,
        association: BTreeMap<String, String>,
    ) -> Result<Self> {
        let s: HashSet<&String> = sensitive.iter().collect();
        let ns: HashSet<&String> = nonsensitive.iter().collect();
        if s.len() != sensitive.len() || ns.len() != nonsensitive.len() {
            return Err(Error::Config("duplicate values on one side".into()));
        }
        let mut targets = HashSet::new();
        for (a, b) in &association {
            if !s.contains(a) || !ns.contains(b) {
                return Err(Error::Config(format!(
                    "association {a} -> {b} refers to an unknown value"
                )));
            }
            if !targets.insert(b) {
                return Err(Error::Config(format!("association is not one-to-one at {b}")));
            }
        }
        Ok(BinInput {
            attribute: attribute.to_string(),
            sensitive,
            nonsensitive,
            association,
        })
    }

    /// Values present on both sides are associated with themselves.
    pub fn from_histogram(h: &ValueHistogram) -> Self {
        let sensitive = h.sensitive_values();
        let nonsensitive = h.nonsensitive_values();
        let association = h
            .entries
            .iter()
            .filter(|(_, c)| c.0 > 0 && c.1 > 0)
            .map(|(v, _)| (v.clone(), v.clone()))
            .collect();
        BinInput {
            attribute: h.attribute.clone(),
            sensitive,
            nonsensitive,
            association,
        }
    }

    pub fn row_side(&self) -> Side {
        if self.sensitive.len() <= self.nonsensitive.len() {
            Side::Sensitive
        } else {
            Side::NonSensitive
        }
    }
}

/// Largest divisor pair `(x, y)` of `n` with `x >= y` and `x - y` minimal.
pub fn approx_sq_factors(n: usize) -> Result<(usize, usize)> {
    if n == 0 {
        return Err(Error::Config("cannot factor an empty value set".into()));
    }
    let mut y = (n as f64).sqrt() as usize;
    while y * y > n {
        y -= 1;
    }
    while (y + 1) * (y + 1) <= n {
        y += 1;
    }
    while n % y != 0 {
        y -= 1;
    }
    Ok((n / y, y))
}

type Pos = (usize, usize);

#[derive(Clone, Debug, Default)]
struct ValueIndex(HashMap<String, (Option<Pos>, Option<Pos>)>);

#[derive(Clone, Debug, Default)]
struct IndexCache(OnceLock<ValueIndex>);

impl PartialEq for IndexCache {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinLayout {
    pub attribute: String,
    pub mode: BinMode,
    /// Bumped by every insert batch.
    pub version: u64,
    /// Bumped by re-binning; padding tuples are keyed by epoch.
    pub epoch: u64,
    /// Side holding the `x` bins of capacity `y`.
    pub row_side: Side,
    pub x: usize,
    pub y: usize,
    pub seed: Option<u64>,
    pub sensitive_bins: Vec<Vec<Option<Slot>>>,
    pub nonsensitive_bins: Vec<Vec<Option<Slot>>>,
    /// Values retrieved by an explicit pair instead of the positional rule.
    #[serde(default)]
    pub pinned: BTreeMap<String, BinPair>,
    /// Padding tuples requested with each sensitive bin.
    pub fake_counts: Vec<u64>,
    pub next_fake: u32,
    pub batches: u64,
    #[serde(skip)]
    index: IndexCache,
}

impl BinLayout {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn from_parts(
        attribute: &str,
        mode: BinMode,
        row_side: Side,
        x: usize,
        y: usize,
        seed: Option<u64>,
        rows: Vec<Vec<Option<Slot>>>,
        cols: Vec<Vec<Option<Slot>>>,
        next_fake: u32,
    ) -> Self {
        let trim = |mut bins: Vec<Vec<Option<Slot>>>| {
            for b in &mut bins {
                while matches!(b.last(), Some(None)) {
                    b.pop();
                }
            }
            bins
        };
        let (rows, cols) = (trim(rows), trim(cols));
        let (sensitive_bins, nonsensitive_bins) = match row_side {
            Side::Sensitive => (rows, cols),
            Side::NonSensitive => (cols, rows),
        };
        let fake_counts = vec![0; sensitive_bins.len()];
        BinLayout {
            attribute: attribute.to_string(),
            mode,
            version: 1,
            epoch: 1,
            row_side,
            x,
            y,
            seed,
            sensitive_bins,
            nonsensitive_bins,
            pinned: BTreeMap::new(),
            fake_counts,
            next_fake,
            batches: 0,
            index: IndexCache::default(),
        }
    }

    pub fn bins(&self, side: Side) -> &[Vec<Option<Slot>>] {
        match side {
            Side::Sensitive => &self.sensitive_bins,
            Side::NonSensitive => &self.nonsensitive_bins,
        }
    }

    pub(crate) fn bins_mut(&mut self, side: Side) -> &mut Vec<Vec<Option<Slot>>> {
        self.index = IndexCache::default();
        match side {
            Side::Sensitive => &mut self.sensitive_bins,
            Side::NonSensitive => &mut self.nonsensitive_bins,
        }
    }

    pub fn bin_count(&self, side: Side) -> usize {
        self.bins(side).len()
    }

    /// Bins an observer of the access pattern can tell apart. Bins with no
    /// values and no padding all produce the same empty request.
    pub fn observable_bin_count(&self, side: Side) -> usize {
        let empty = (0..self.bin_count(side)).filter(|&b| {
            self.bin_values(side, b).next().is_none()
                && (side == Side::NonSensitive || self.fake_counts.get(b).copied().unwrap_or(0) == 0)
        });
        let n = empty.count();
        self.bin_count(side) - n + usize::from(n > 0)
    }

    /// Largest bin length on `side`, holes included.
    pub fn capacity(&self, side: Side) -> usize {
        self.bins(side).iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Real values in bin `b` of `side`.
    pub fn bin_values(&self, side: Side, b: usize) -> impl Iterator<Item = &str> {
        self.bins(side)[b].iter().flatten().filter_map(Slot::value)
    }

    pub fn values(&self, side: Side) -> impl Iterator<Item = &str> {
        self.bins(side)
            .iter()
            .flat_map(|b| b.iter().flatten().filter_map(Slot::value))
    }

    fn index(&self) -> &ValueIndex {
        self.index.0.get_or_init(|| {
            let mut m: HashMap<String, (Option<Pos>, Option<Pos>)> = HashMap::new();
            for side in [Side::Sensitive, Side::NonSensitive] {
                for (b, bin) in self.bins(side).iter().enumerate() {
                    for (j, slot) in bin.iter().enumerate() {
                        if let Some(Slot::Value(v)) = slot {
                            let e = m.entry(v.clone()).or_default();
                            match side {
                                Side::Sensitive => e.0 = Some((b, j)),
                                Side::NonSensitive => e.1 = Some((b, j)),
                            }
                        }
                    }
                }
            }
            ValueIndex(m)
        })
    }

    /// `(bin, slot)` of `value` on `side`.
    pub fn position(&self, side: Side, value: &str) -> Option<(usize, usize)> {
        let e = self.index().0.get(value)?;
        match side {
            Side::Sensitive => e.0,
            Side::NonSensitive => e.1,
        }
    }

    pub fn contains(&self, value: &str) -> bool {
        self.index().0.contains_key(value)
    }

    /// The bin pair to fetch for `value`, or `None` if the value is in
    /// neither side. Values present on both sides must resolve to the same
    /// pair from either side.
    pub fn locate(&self, value: &str) -> Result<Option<BinPair>> {
        if let Some(p) = self.pinned.get(value) {
            return Ok(Some(*p));
        }
        let Some(&(s, ns)) = self.index().0.get(value) else {
            return Ok(None);
        };
        let n_sb = self.sensitive_bins.len();
        let n_nsb = self.nonsensitive_bins.len();
        let r1 = s.map(|(a, j)| BinPair {
            sensitive: a,
            nonsensitive: j % n_nsb,
        });
        let r2 = ns.map(|(b, i)| BinPair {
            sensitive: i % n_sb,
            nonsensitive: b,
        });
        match (r1, r2) {
            (Some(p), Some(q)) if p != q => Err(Error::Integrity(format!(
                "value `{value}` resolves to SB{}/NSB{} and SB{}/NSB{}",
                p.sensitive, p.nonsensitive, q.sensitive, q.nonsensitive
            ))),
            (p, q) => Ok(p.or(q)),
        }
    }

    /// Every non-fake value on each side is placed exactly once, bin counts
    /// and capacities match the factorisation, and all associated values
    /// resolve consistently.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for side in [Side::Sensitive, Side::NonSensitive] {
            seen.clear();
            for v in self.values(side) {
                if !seen.insert(v) {
                    return Err(Error::Integrity(format!("`{v}` placed twice on {side:?} side")));
                }
            }
        }
        if self.fake_counts.len() != self.sensitive_bins.len() {
            return Err(Error::Integrity("fake count vector length mismatch".into()));
        }
        for v in self.index().0.keys() {
            self.locate(v)?;
        }
        Ok(())
    }

    /// Sets per-bin padding so every sensitive bin returns the same number
    /// of tuples; `count` gives the sensitive tuples owned by a value.
    /// Returns the padding total.
    pub fn pad_uniform(&mut self, count: impl Fn(&str) -> u64) -> u64 {
        let totals: Vec<u64> = (0..self.sensitive_bins.len())
            .map(|b| self.bin_values(Side::Sensitive, b).map(&count).sum())
            .collect();
        let target = totals.iter().copied().max().unwrap_or(0);
        self.fake_counts = totals.iter().map(|t| target - t).collect();
        self.fake_counts.iter().sum()
    }

    /// Sensitive tuples returned per bin (real plus padding).
    pub fn sensitive_bin_totals(&self, count: impl Fn(&str) -> u64) -> Vec<u64> {
        (0..self.sensitive_bins.len())
            .map(|b| self.bin_values(Side::Sensitive, b).map(&count).sum::<u64>() + self.fake_counts[b])
            .collect()
    }

    /// Short content hash used to detect stale plans.
    pub fn fingerprint(&self) -> String {
        let body = serde_json::to_vec(self).expect("layout serialises");
        hex::encode(&Sha256::digest(&body)[..8])
    }

    pub(crate) fn alloc_fake(&mut self) -> Slot {
        let f = Slot::Fake(self.next_fake);
        self.next_fake += 1;
        f
    }
}

/// Builds a layout for `hist` (values associated by equality) in `mode`.
/// `profile` is only read by the workload mode; `exact` only by the
/// multiplicity mode.
pub fn create_bins(
    hist: &ValueHistogram,
    mode: BinMode,
    perm: Permutation,
    profile: &WorkloadProfile,
    exact: bool,
) -> Result<BinLayout> {
    let input = BinInput::from_histogram(hist);
    match mode {
        BinMode::Base => create_bins_base(&input, perm),
        BinMode::Extended => create_bins_extended(&input, perm),
        BinMode::Workload => create_bins_workload(&input, profile, perm),
        BinMode::Multiplicity => {
            let counts: HashMap<String, u64> = hist.entries.iter().map(|(v, c)| (v.clone(), c.0)).collect();
            Ok(create_bins_multiplicity(&input, &counts, perm, exact)?.layout)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factors_of_small_numbers() {
        assert_eq!(approx_sq_factors(10).unwrap(), (5, 2));
        assert_eq!(approx_sq_factors(16).unwrap(), (4, 4));
        assert_eq!(approx_sq_factors(82).unwrap(), (41, 2));
        assert_eq!(approx_sq_factors(1).unwrap(), (1, 1));
        assert_eq!(approx_sq_factors(12).unwrap(), (4, 3));
        assert_eq!(approx_sq_factors(7).unwrap(), (7, 1));
        assert!(approx_sq_factors(0).is_err());
    }

    #[test]
    fn factors_oracle_up_to_2000() {
        for n in 1..2000usize {
            let (x, y) = approx_sq_factors(n).unwrap();
            assert_eq!(x * y, n);
            assert!(x >= y);
            let best = (1..=n)
                .filter(|d| n % d == 0 && *d * *d <= n)
                .map(|d| n / d - d)
                .min()
                .unwrap();
            assert_eq!(x - y, best, "n={n}");
        }
    }

    #[test]
    fn permutation_is_deterministic() {
        let mut a: Vec<u32> = (0..50).collect();
        let mut b = a.clone();
        Permutation::Seeded(7).apply(&mut a);
        Permutation::Seeded(7).apply(&mut b);
        assert_eq!(a, b);
        let mut c: Vec<u32> = (0..50).collect();
        Permutation::Identity.apply(&mut c);
        assert_eq!(c, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn input_validation() {
        let s = vec!["a".to_string()];
        let ns = vec!["b".to_string(), "c".to_string()];
        let mut m = BTreeMap::new();
        m.insert("a".to_string(), "zz".to_string());
        assert!(BinInput::new("k", s.clone(), ns.clone(), m).is_err());
        assert!(BinInput::new("k", vec!["a".into(), "a".into()], ns, BTreeMap::new()).is_err());
    }

    #[test]
    fn empty_bins_look_alike() {
        // 7 is prime: one sensitive bin, seven non-sensitive cells for 4 values
        let s: Vec<String> = (0..7).map(|i| format!("s{i}")).collect();
        let ns: Vec<String> = (0..4).map(|i| format!("n{i}")).collect();
        let input = BinInput::new("k", s, ns, BTreeMap::new()).unwrap();
        let l = create_bins_base(&input, Permutation::Identity).unwrap();
        assert_eq!(l.bin_count(Side::NonSensitive), 7);
        assert_eq!(l.observable_bin_count(Side::NonSensitive), 5);
        assert_eq!(l.observable_bin_count(Side::Sensitive), 1);
    }
}
