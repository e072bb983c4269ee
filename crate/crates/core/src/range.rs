//! Range queries over a binary tree of the attribute domain.
//!
//! The sorted domain is padded to `2^h` leaf positions. Each tree level
//! `0..=h-2` is binned on its own: its nodes are ordered (secretly), dealt
//! sequentially into non-sensitive bins of `x` nodes, and sensitive node `k`
//! of non-sensitive bin `j` goes to sensitive bin `k` at slot `j`, which is
//! the same placement law as selection layouts with every node associated.
//! The root and its children are never binned. Levels `1..=h-2` also get an
//! *additional* level of nodes straddling adjacent regular nodes that have
//! different parents.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::binning::{approx_sq_factors, Permutation};
use crate::cloudstore::{CloudStore, Owner, QueryKind, SearchKey, Token};
use crate::error::{Error, Result};
use crate::partitioner::{TupleRecord, ValueHistogram};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainOrder {
    #[default]
    Lexicographic,
    Numeric,
}

impl DomainOrder {
    fn key(&self, v: &str) -> Result<f64> {
        v.trim()
            .parse::<f64>()
            .map_err(|_| Error::Config(format!("`{v}` is not numeric")))
    }

    pub fn cmp(&self, a: &str, b: &str) -> Result<Ordering> {
        Ok(match self {
            DomainOrder::Lexicographic => a.cmp(b),
            DomainOrder::Numeric => self.key(a)?.total_cmp(&self.key(b)?).then_with(|| a.cmp(b)),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LevelId {
    pub level: usize,
    pub additional: bool,
}

impl LevelId {
    pub fn regular(level: usize) -> Self {
        LevelId {
            level,
            additional: false,
        }
    }

    pub fn extra(level: usize) -> Self {
        LevelId {
            level,
            additional: true,
        }
    }

    fn scope(&self) -> String {
        format!("range:{}:{}", self.level, if self.additional { "a" } else { "r" })
    }
}

/// Leaf positions `[lo, hi)` covered by a node; fake nodes cover nothing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeSpan {
    pub lo: usize,
    pub hi: usize,
    pub fake: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RangeLevel {
    pub id: LevelId,
    /// Nodes in left-to-right order; fake padding nodes last.
    pub nodes: Vec<NodeSpan>,
    /// `order[p]` is the node at placement position `p`.
    pub order: Vec<usize>,
    pub x: usize,
    pub y: usize,
    pub fake_counts: Vec<u64>,
    #[serde(skip)]
    position: Vec<usize>,
}

impl RangeLevel {
    fn new(id: LevelId, nodes: Vec<NodeSpan>, order: Vec<usize>) -> Result<Self> {
        let (x, y) = approx_sq_factors(nodes.len())?;
        let mut l = RangeLevel {
            id,
            nodes,
            order,
            x,
            y,
            fake_counts: Vec::new(),
            position: Vec::new(),
        };
        l.fake_counts = vec![0; l.sensitive_bin_count()];
        l.reindex();
        Ok(l)
    }

    fn reindex(&mut self) {
        let mut pos = vec![0; self.order.len()];
        for (p, &t) in self.order.iter().enumerate() {
            pos[t] = p;
        }
        self.position = pos;
    }

    pub fn nonsensitive_bin_count(&self) -> usize {
        self.nodes.len().div_ceil(self.x)
    }

    pub fn sensitive_bin_count(&self) -> usize {
        self.x.min(self.nodes.len())
    }

    /// `(non-sensitive bin, sensitive bin)` of node `t`.
    pub fn bins_of(&self, t: usize) -> (usize, usize) {
        let p = self.position[t];
        (p / self.x, p % self.x)
    }

    pub fn nonsensitive_bin(&self, j: usize) -> Vec<usize> {
        let end = ((j + 1) * self.x).min(self.order.len());
        self.order[j * self.x..end].to_vec()
    }

    /// Nodes of sensitive bin `k` by slot (slot = non-sensitive bin index).
    pub fn sensitive_bin(&self, k: usize) -> Vec<usize> {
        (0..self.nonsensitive_bin_count())
            .filter_map(|j| self.order.get(j * self.x + k).copied())
            .collect()
    }
}

/// Per-level node order. Levels without an override use `default`, seeded
/// per level.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LevelOrder {
    pub default: Permutation,
    pub overrides: BTreeMap<LevelId, Vec<usize>>,
}

impl LevelOrder {
    pub fn identity() -> Self {
        LevelOrder::default()
    }

    pub fn seeded(seed: u64) -> Self {
        LevelOrder {
            default: Permutation::Seeded(seed),
            overrides: BTreeMap::new(),
        }
    }

    pub fn with(mut self, id: LevelId, order: Vec<usize>) -> Self {
        self.overrides.insert(id, order);
        self
    }

    fn order_for(&self, id: LevelId, n: usize) -> Result<Vec<usize>> {
        if let Some(o) = self.overrides.get(&id) {
            let mut sorted = o.clone();
            sorted.sort_unstable();
            if sorted != (0..n).collect::<Vec<_>>() {
                return Err(Error::Config(format!(
                    "order for {id:?} is not a permutation of 0..{n}"
                )));
            }
            return Ok(o.clone());
        }
        let mut o: Vec<usize> = (0..n).collect();
        match self.default {
            Permutation::Identity => {}
            Permutation::Seeded(s) => {
                let salt = (id.level as u64) << 1 | id.additional as u64;
                Permutation::Seeded(s ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15)).apply(&mut o);
            }
        }
        Ok(o)
    }
}

/// (nodes, fetched tuples) and the `(level, node)` picks of a partial cover.
type Cover = ((usize, u64), Vec<(usize, usize)>);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RangeTree {
    pub attribute: String,
    pub order: DomainOrder,
    pub domain: Vec<String>,
    /// `(sensitive, non-sensitive)` tuple counts per domain position.
    pub counts: Vec<(u64, u64)>,
    pub height: usize,
    pub levels: Vec<RangeLevel>,
    pub epoch: u64,
}

impl RangeTree {
    pub fn build(hist: &ValueHistogram, order: DomainOrder, level_order: &LevelOrder) -> Result<Self> {
        let mut domain: Vec<String> = hist.entries.keys().cloned().collect();
        if domain.is_empty() {
            return Err(Error::Config("cannot build a range tree over an empty domain".into()));
        }
        let mut err = None;
        domain.sort_by(|a, b| {
            order.cmp(a, b).unwrap_or_else(|e| {
                err.get_or_insert(e);
                Ordering::Equal
            })
        });
        if let Some(e) = err {
            return Err(e);
        }
        let counts = domain.iter().map(|v| hist.entries[v]).collect();
        let m = domain.len().next_power_of_two();
        let height = m.trailing_zeros() as usize;
        let top = height.saturating_sub(2);
        let mut levels = Vec::new();
        for l in 0..=top {
            let w = 1usize << l;
            let nodes: Vec<NodeSpan> = (0..m / w)
                .map(|t| NodeSpan {
                    lo: t * w,
                    hi: (t + 1) * w,
                    fake: false,
                })
                .collect();
            let id = LevelId::regular(l);
            let ord = level_order.order_for(id, nodes.len())?;
            levels.push(RangeLevel::new(id, nodes, ord)?);
        }
        for l in 1..=top {
            let half = 1usize << (l - 1);
            let regular = m >> l;
            let mut nodes: Vec<NodeSpan> = (0..regular - 1)
                .map(|t| NodeSpan {
                    lo: (2 * t + 1) * half,
                    hi: (2 * t + 3) * half,
                    fake: false,
                })
                .collect();
            nodes.push(NodeSpan {
                lo: 0,
                hi: 0,
                fake: true,
            });
            let id = LevelId::extra(l);
            let ord = level_order.order_for(id, nodes.len())?;
            levels.push(RangeLevel::new(id, nodes, ord)?);
        }
        Ok(RangeTree {
            attribute: hist.attribute.clone(),
            order,
            domain,
            counts,
            height,
            levels,
            epoch: 1,
        })
    }

    pub fn leaves(&self) -> usize {
        1 << self.height
    }

    pub fn level(&self, id: LevelId) -> Option<&RangeLevel> {
        self.levels.iter().find(|l| l.id == id)
    }

    fn level_idx(&self, id: LevelId) -> usize {
        self.levels.iter().position(|l| l.id == id).expect("level exists")
    }

    /// Rebuilds transient indexes after deserialisation.
    pub fn reindex(&mut self) {
        for l in &mut self.levels {
            l.reindex();
        }
    }

    fn node_values(&self, span: &NodeSpan) -> std::ops::Range<usize> {
        if span.fake {
            0..0
        } else {
            span.lo.min(self.domain.len())..span.hi.min(self.domain.len())
        }
    }

    fn sensitive_bin_total(&self, level: &RangeLevel, k: usize) -> u64 {
        level
            .sensitive_bin(k)
            .iter()
            .flat_map(|&t| self.node_values(&level.nodes[t]))
            .map(|p| self.counts[p].0)
            .sum()
    }

    fn nonsensitive_bin_total(&self, level: &RangeLevel, j: usize) -> u64 {
        level
            .nonsensitive_bin(j)
            .iter()
            .flat_map(|&t| self.node_values(&level.nodes[t]))
            .map(|p| self.counts[p].1)
            .sum()
    }

    /// Padding so every sensitive bin of a level returns the same count.
    pub fn pad_uniform(&mut self) {
        for i in 0..self.levels.len() {
            let level = &self.levels[i];
            let totals: Vec<u64> = (0..level.sensitive_bin_count())
                .map(|k| self.sensitive_bin_total(level, k))
                .collect();
            let max = totals.iter().copied().max().unwrap_or(0);
            self.levels[i].fake_counts = totals.iter().map(|t| max - t).collect();
        }
    }

    /// Non-sensitive values of bin `j` at `id`.
    pub fn nonsensitive_values(&self, id: LevelId, j: usize) -> Vec<String> {
        let level = &self.levels[self.level_idx(id)];
        let mut out: Vec<String> = level
            .nonsensitive_bin(j)
            .iter()
            .flat_map(|&t| self.node_values(&level.nodes[t]))
            .filter(|&p| self.counts[p].1 > 0)
            .map(|p| self.domain[p].clone())
            .collect();
        out.sort();
        out
    }

    /// Sorted tokens for sensitive bin `k` at `id`, padding included.
    pub fn sensitive_tokens(&self, owner: &Owner, table: &str, id: LevelId, k: usize) -> Vec<Token> {
        let level = &self.levels[self.level_idx(id)];
        let attr = &self.attribute;
        let mut out: Vec<Token> = level
            .sensitive_bin(k)
            .iter()
            .flat_map(|&t| self.node_values(&level.nodes[t]))
            .filter(|&p| self.counts[p].0 > 0)
            .flat_map(|p| {
                let key = SearchKey::Value(self.domain[p].clone());
                owner.tokens(table, attr, &key, owner.count(table, attr, &key))
            })
            .collect();
        let pad = Owner::padding_key(&id.scope(), self.epoch, k);
        out.extend(owner.tokens(table, attr, &pad, level.fake_counts[k]));
        out.sort();
        out
    }

    /// Domain positions `[lo, hi]` inside `[alpha, beta]`, if any.
    pub fn positions(&self, alpha: &str, beta: &str) -> Result<Option<(usize, usize)>> {
        if self.order.cmp(alpha, beta)? == Ordering::Greater {
            return Err(Error::Config(format!("empty range: {alpha} > {beta}")));
        }
        let mut lo = None;
        let mut hi = None;
        for (p, v) in self.domain.iter().enumerate() {
            if self.order.cmp(v, alpha)? != Ordering::Less && self.order.cmp(v, beta)? != Ordering::Greater {
                lo.get_or_insert(p);
                hi = Some(p);
            }
        }
        Ok(lo.zip(hi))
    }

    /// Candidate binned nodes starting at leaf position `p`.
    fn nodes_starting_at(&self, p: usize, use_additional: bool) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (li, level) in self.levels.iter().enumerate() {
            if level.id.additional && !use_additional {
                continue;
            }
            let w = 1usize << level.id.level;
            let t = if level.id.additional {
                let half = w / 2;
                if p < half || (p - half) % w != 0 {
                    continue;
                }
                (p - half) / w
            } else {
                if p % w != 0 {
                    continue;
                }
                p / w
            };
            if t < level.nodes.len() && !level.nodes[t].fake && level.nodes[t].lo == p {
                out.push((li, t));
            }
        }
        out
    }

    fn node_cost(&self, li: usize, t: usize) -> u64 {
        let level = &self.levels[li];
        let (j, k) = level.bins_of(t);
        self.nonsensitive_bin_total(level, j) + self.sensitive_bin_total(level, k) + level.fake_counts[k]
    }

    /// Lowest regular node covering `[alpha, beta]`.
    pub fn best_match(&self, alpha: &str, beta: &str, allow_full_scan: bool) -> Result<RangePlan> {
        let Some((lo, hi)) = self.positions(alpha, beta)? else {
            return Ok(RangePlan::empty(alpha, beta));
        };
        let mut l = 0;
        while (lo >> l) != (hi >> l) {
            l += 1;
        }
        let binned_top = self.height.saturating_sub(2);
        if l > binned_top {
            if allow_full_scan {
                return Ok(self.full_scan(alpha, beta));
            }
            return Err(Error::BestMatchTooWide {
                lo: alpha.into(),
                hi: beta.into(),
            });
        }
        let li = self.level_idx(LevelId::regular(l));
        Ok(self.plan_from_nodes(alpha, beta, vec![(li, lo >> l)]))
    }

    /// Fewest binned nodes exactly covering `[alpha, beta]`, ties broken by
    /// fewer fetched tuples and then leftmost choice.
    pub fn least_match(&self, alpha: &str, beta: &str, use_additional: bool) -> Result<RangePlan> {
        let Some((lo, hi)) = self.positions(alpha, beta)? else {
            return Ok(RangePlan::empty(alpha, beta));
        };
        let end = hi + 1;
        let n = self.domain.len();
        // best[p]: cheapest cover of [lo, p)
        let mut best: Vec<Option<Cover>> = vec![None; end - lo + 1];
        best[0] = Some(((0, 0), Vec::new()));
        for p in lo..end {
            let Some((cost, nodes)) = best[p - lo].clone() else {
                continue;
            };
            for (li, t) in self.nodes_starting_at(p, use_additional) {
                // a node may run past the domain end into padding leaves,
                // but never past beta into real values
                let stop = self.levels[li].nodes[t].hi.min(n);
                if stop > end {
                    continue;
                }
                let c = (cost.0 + 1, cost.1 + self.node_cost(li, t));
                let slot = &mut best[stop - lo];
                if slot.as_ref().map_or(true, |(bc, _)| c < *bc) {
                    let mut v = nodes.clone();
                    v.push((li, t));
                    *slot = Some((c, v));
                }
            }
        }
        let (_, nodes) = best[end - lo]
            .clone()
            .ok_or_else(|| Error::Integrity("no exact cover from binned nodes".into()))?;
        Ok(self.plan_from_nodes(alpha, beta, nodes))
    }

    fn plan_from_nodes(&self, alpha: &str, beta: &str, nodes: Vec<(usize, usize)>) -> RangePlan {
        let mut nsb = BTreeSet::new();
        let mut sb = BTreeSet::new();
        let mut covered = Vec::new();
        for &(li, t) in &nodes {
            let level = &self.levels[li];
            let (j, k) = level.bins_of(t);
            nsb.insert((level.id, j));
            sb.insert((level.id, k));
            covered.push(PlannedNode {
                level: level.id,
                node: t,
                nonsensitive_bin: j,
                sensitive_bin: k,
            });
        }
        RangePlan {
            alpha: alpha.into(),
            beta: beta.into(),
            nodes: covered,
            nonsensitive_bins: nsb.into_iter().collect(),
            sensitive_bins: sb.into_iter().collect(),
            full_scan: false,
        }
    }

    fn full_scan(&self, alpha: &str, beta: &str) -> RangePlan {
        let leaf = &self.levels[self.level_idx(LevelId::regular(0))];
        RangePlan {
            alpha: alpha.into(),
            beta: beta.into(),
            nodes: Vec::new(),
            nonsensitive_bins: (0..leaf.nonsensitive_bin_count()).map(|j| (leaf.id, j)).collect(),
            sensitive_bins: (0..leaf.sensitive_bin_count()).map(|k| (leaf.id, k)).collect(),
            full_scan: true,
        }
    }

    /// Expected fetched tuples for a plan.
    pub fn plan_cost(&self, plan: &RangePlan) -> u64 {
        let ns: u64 = plan
            .nonsensitive_bins
            .iter()
            .map(|&(id, j)| self.nonsensitive_bin_total(&self.levels[self.level_idx(id)], j))
            .sum();
        let s: u64 = plan
            .sensitive_bins
            .iter()
            .map(|&(id, k)| {
                let l = &self.levels[self.level_idx(id)];
                self.sensitive_bin_total(l, k) + l.fake_counts[k]
            })
            .sum();
        ns + s
    }

    /// Pads every level and uploads missing padding tuples.
    pub fn install(&mut self, owner: &mut Owner, store: &mut CloudStore, table: &str) -> Result<()> {
        owner.attach(store)?;
        for (p, v) in self.domain.iter().enumerate() {
            let have = owner.sensitive_count(table, &self.attribute, v);
            if have != self.counts[p].0 {
                return Err(Error::Consistency(format!(
                    "range tree expects {} sensitive tuples for `{v}`, store has {have}",
                    self.counts[p].0
                )));
            }
        }
        self.pad_uniform();
        for level in &self.levels {
            for (k, &need) in level.fake_counts.iter().enumerate() {
                let key = Owner::padding_key(&level.id.scope(), self.epoch, k);
                owner.upload_padding(store, table, &self.attribute, &key, need)?;
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannedNode {
    pub level: LevelId,
    pub node: usize,
    pub nonsensitive_bin: usize,
    pub sensitive_bin: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RangePlan {
    pub alpha: String,
    pub beta: String,
    pub nodes: Vec<PlannedNode>,
    /// Distinct bins to fetch.
    pub nonsensitive_bins: Vec<(LevelId, usize)>,
    pub sensitive_bins: Vec<(LevelId, usize)>,
    pub full_scan: bool,
}

impl RangePlan {
    fn empty(alpha: &str, beta: &str) -> Self {
        RangePlan {
            alpha: alpha.into(),
            beta: beta.into(),
            nodes: Vec::new(),
            nonsensitive_bins: Vec::new(),
            sensitive_bins: Vec::new(),
            full_scan: false,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.nonsensitive_bins.is_empty() && self.sensitive_bins.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RangeStrategy {
    Best { allow_full_scan: bool },
    Least { use_additional: bool },
}

pub fn plan_range(tree: &RangeTree, alpha: &str, beta: &str, strategy: RangeStrategy) -> Result<RangePlan> {
    match strategy {
        RangeStrategy::Best { allow_full_scan } => tree.best_match(alpha, beta, allow_full_scan),
        RangeStrategy::Least { use_additional } => tree.least_match(alpha, beta, use_additional),
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RangeResult {
    pub tuples: Vec<TupleRecord>,
    pub fetched_sensitive: usize,
    pub fetched_nonsensitive: usize,
}

impl RangeResult {
    pub fn fetched(&self) -> usize {
        self.fetched_sensitive + self.fetched_nonsensitive
    }
}

/// Fetches every bin of the plan in one logged query and returns the real
/// tuples whose value lies in `[alpha, beta]`.
pub fn execute_range(
    tree: &RangeTree,
    plan: &RangePlan,
    store: &CloudStore,
    owner: &Owner,
    table: &str,
) -> Result<RangeResult> {
    if plan.is_empty() {
        return Ok(RangeResult::default());
    }
    let attr = &tree.attribute;
    let mut q = store.begin(QueryKind::Range);
    let mut clear = Vec::new();
    for &(id, j) in &plan.nonsensitive_bins {
        clear.extend(q.fetch_nonsensitive(table, attr, &tree.nonsensitive_values(id, j))?);
    }
    let mut enc = Vec::new();
    for &(id, k) in &plan.sensitive_bins {
        enc.extend(q.fetch_sensitive(table, Some(attr), &tree.sensitive_tokens(owner, table, id, k))?);
    }
    q.commit();
    let fetched_sensitive = enc.len();
    let fetched_nonsensitive = clear.len();
    let real = owner.decrypt_real(table, &enc)?;
    let mut seen = HashSet::new();
    let mut tuples = Vec::new();
    for r in real.into_iter().chain(clear) {
        let Some(v) = r.get(attr) else { continue };
        let inside =
            tree.order.cmp(v, &plan.alpha)? != Ordering::Less && tree.order.cmp(v, &plan.beta)? != Ordering::Greater;
        if inside && seen.insert(r.tuple_id.clone()) {
            tuples.push(r);
        }
    }
    tuples.sort_by(|a, b| a.tuple_id.cmp(&b.tuple_id));
    Ok(RangeResult {
        tuples,
        fetched_sensitive,
        fetched_nonsensitive,
    })
}

/// Bin pairs fetched for each node, keyed by level, for inspection.
pub fn node_bins(tree: &RangeTree, id: LevelId) -> HashMap<usize, (usize, usize)> {
    let level = tree.level(id).expect("level exists");
    (0..level.nodes.len()).map(|t| (t, level.bins_of(t))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// 16 values, each with one sensitive and one non-sensitive tuple.
    fn hist16() -> ValueHistogram {
        let mut h = ValueHistogram {
            attribute: "k".into(),
            ..Default::default()
        };
        for i in 1..=16 {
            h.entries.insert(i.to_string(), (1, 1));
        }
        h
    }

    fn tree() -> RangeTree {
        let order = LevelOrder::identity().with(LevelId::regular(2), vec![1, 0, 2, 3]);
        let mut t = RangeTree::build(&hist16(), DomainOrder::Numeric, &order).unwrap();
        t.pad_uniform();
        t
    }

    fn span_values(t: &RangeTree, id: LevelId, nodes: &[usize]) -> Vec<Vec<String>> {
        let l = t.level(id).unwrap();
        nodes
            .iter()
            .map(|&n| t.node_values(&l.nodes[n]).map(|p| t.domain[p].clone()).collect())
            .collect()
    }

    #[test]
    fn shape() {
        let t = tree();
        assert_eq!(t.height, 4);
        let ids: Vec<LevelId> = t.levels.iter().map(|l| l.id).collect();
        assert_eq!(
            ids,
            [
                LevelId::regular(0),
                LevelId::regular(1),
                LevelId::regular(2),
                LevelId::extra(1),
                LevelId::extra(2)
            ]
        );
        let l1 = t.level(LevelId::regular(1)).unwrap();
        assert_eq!((l1.x, l1.y), (4, 2));
        assert_eq!(l1.nonsensitive_bin(0), [0, 1, 2, 3]);
        assert_eq!(l1.sensitive_bin(0), [0, 4]);
        assert_eq!(
            span_values(&t, LevelId::regular(1), &l1.sensitive_bin(0)),
            [["1", "2"], ["9", "10"]]
        );
        let l2 = t.level(LevelId::regular(2)).unwrap();
        assert_eq!(l2.nonsensitive_bin(0), [1, 0]);
        assert_eq!(l2.sensitive_bin(0), [1, 2]);
        assert_eq!(l2.sensitive_bin(1), [0, 3]);
        let a1 = t.level(LevelId::extra(1)).unwrap();
        assert_eq!(a1.nodes.len(), 8);
        assert!(a1.nodes[7].fake);
        assert_eq!(a1.sensitive_bin(3), [3, 7]);
        assert_eq!(span_values(&t, LevelId::extra(1), &[0]), [["2", "3"]]);
        assert_eq!(a1.fake_counts, [0, 0, 0, 2]);
    }

    #[test]
    fn best_match_examples() {
        let t = tree();
        let p = t.best_match("1", "4", false).unwrap();
        assert_eq!(p.nodes.len(), 1);
        assert_eq!(p.nodes[0].level, LevelId::regular(2));
        assert_eq!(p.nodes[0].node, 0);
        assert_eq!((p.nodes[0].nonsensitive_bin, p.nodes[0].sensitive_bin), (0, 1));
        assert!(matches!(
            t.best_match("8", "12", false),
            Err(Error::BestMatchTooWide { .. })
        ));
        assert!(t.best_match("8", "12", true).unwrap().full_scan);
        let leaf = t.best_match("5", "5", false).unwrap();
        assert_eq!(leaf.nodes[0].level, LevelId::regular(0));
    }

    #[test]
    fn least_match_examples() {
        let t = tree();
        let p = t.least_match("4", "7", true).unwrap();
        let nodes: Vec<(LevelId, usize)> = p.nodes.iter().map(|n| (n.level, n.node)).collect();
        assert_eq!(nodes, [(LevelId::extra(1), 1), (LevelId::extra(1), 2)]);
        assert_eq!(t.plan_cost(&p), 16);
        let p = t.least_match("4", "7", false).unwrap();
        assert_eq!(p.nodes.len(), 3);
        assert_eq!(t.plan_cost(&p), 28);
        let p = t.least_match("8", "12", true).unwrap();
        let nodes: Vec<(LevelId, usize)> = p.nodes.iter().map(|n| (n.level, n.node)).collect();
        assert_eq!(nodes, [(LevelId::regular(0), 7), (LevelId::regular(2), 2)]);
        assert_eq!(p.nonsensitive_bins[1], (LevelId::regular(2), 1));
        assert_eq!(p.sensitive_bins[1], (LevelId::regular(2), 0));
    }

    #[test]
    fn lexicographic_domain_and_sentinels() {
        let mut h = ValueHistogram {
            attribute: "k".into(),
            ..Default::default()
        };
        for v in ["a", "b", "c", "d", "e"] {
            h.entries.insert(v.into(), (1, 0));
        }
        let t = RangeTree::build(&h, DomainOrder::Lexicographic, &LevelOrder::seeded(3)).unwrap();
        assert_eq!(t.leaves(), 8);
        let p = t.least_match("b", "e", true).unwrap();
        let covered: usize = p
            .nodes
            .iter()
            .map(|n| t.node_values(&t.level(n.level).unwrap().nodes[n.node]).len())
            .sum();
        assert_eq!(covered, 4);
        assert!(t.positions("x", "z").unwrap().is_none());
    }

    #[test]
    fn numeric_domain_rejects_text() {
        let mut h = ValueHistogram {
            attribute: "k".into(),
            ..Default::default()
        };
        h.entries.insert("abc".into(), (1, 0));
        h.entries.insert("1".into(), (1, 0));
        assert!(RangeTree::build(&h, DomainOrder::Numeric, &LevelOrder::identity()).is_err());
    }
}
