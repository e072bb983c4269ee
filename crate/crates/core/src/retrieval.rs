//! Selection planning and execution over a bin layout.

use serde::{Deserialize, Serialize};

use crate::binning::{BinLayout, BinPair, Side};
use crate::cloudstore::{CloudStore, Owner, QueryKind, Token};
use crate::error::{Error, Result};
use crate::par;
use crate::partitioner::{TupleRecord, ValueHistogram};

/// What the owner sends for one selection. The target value itself is kept
/// owner-side and never serialised.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryPlan {
    pub table: String,
    pub attribute: String,
    pub layout_version: String,
    pub bins: Option<BinPair>,
    pub sensitive_tokens: Vec<Token>,
    pub nonsensitive_values: Vec<String>,
    #[serde(skip)]
    target: String,
}

impl QueryPlan {
    pub fn target(&self) -> &str {
        &self.target
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_none()
    }
}

/// Plans the fetch of bin pair `pair` for `w`. Callers normally go through
/// [`plan_query`]; this entry exists to build plans from an arbitrary
/// pairing, e.g. to exercise the auditor with a non-compliant strategy.
pub fn plan_for_pair(
    owner: &Owner,
    table: &str,
    layout: &BinLayout,
    w: &str,
    pair: Option<BinPair>,
) -> Result<QueryPlan> {
    let (sensitive_tokens, nonsensitive_values) = match pair {
        None => (Vec::new(), Vec::new()),
        Some(p) => {
            if p.sensitive >= layout.bin_count(Side::Sensitive)
                || p.nonsensitive >= layout.bin_count(Side::NonSensitive)
            {
                return Err(Error::Integrity(format!("bin pair {p:?} out of range")));
            }
            let mut ns: Vec<String> = layout
                .bin_values(Side::NonSensitive, p.nonsensitive)
                .map(str::to_string)
                .collect();
            ns.sort();
            (owner.bin_tokens(table, layout, p.sensitive), ns)
        }
    };
    Ok(QueryPlan {
        table: table.to_string(),
        attribute: layout.attribute.clone(),
        layout_version: layout.fingerprint(),
        bins: pair,
        sensitive_tokens,
        nonsensitive_values,
        target: w.to_string(),
    })
}

/// Sensitive bin containing `w` with the non-sensitive bin its slot points
/// to, or the reverse when `w` is only non-sensitive. A value in neither
/// side yields an empty plan.
pub fn plan_query(owner: &Owner, table: &str, layout: &BinLayout, w: &str) -> Result<QueryPlan> {
    plan_for_pair(owner, table, layout, w, layout.locate(w)?)
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SelectionResult {
    /// Tuples whose attribute equals the target, sorted by tuple id.
    pub tuples: Vec<TupleRecord>,
    pub fetched_sensitive: usize,
    pub fetched_nonsensitive: usize,
}

impl SelectionResult {
    pub fn fetched(&self) -> usize {
        self.fetched_sensitive + self.fetched_nonsensitive
    }
}

/// Keeps the real tuples whose `attr` equals `w`.
pub fn filter_results(fetched: impl IntoIterator<Item = TupleRecord>, attr: &str, w: &str) -> Vec<TupleRecord> {
    let mut out: Vec<TupleRecord> = fetched.into_iter().filter(|r| r.get(attr) == Some(w)).collect();
    out.sort_by(|a, b| a.tuple_id.cmp(&b.tuple_id));
    out
}

/// Runs a plan: one sensitive and one non-sensitive round trip logged
/// under one query, then owner-side decryption and filtering.
pub fn execute_selection(plan: &QueryPlan, store: &CloudStore, owner: &Owner) -> Result<SelectionResult> {
    let Some(_) = plan.bins else {
        return Ok(SelectionResult::default());
    };
    let installed = store.layout_fingerprint(&plan.table, &plan.attribute).unwrap_or("none");
    if installed != plan.layout_version {
        return Err(Error::VersionMismatch {
            table: plan.table.clone(),
            attribute: plan.attribute.clone(),
            plan: plan.layout_version.clone(),
            store: installed.to_string(),
        });
    }
    let mut q = store.begin(QueryKind::Selection);
    let enc = q.fetch_sensitive(&plan.table, Some(&plan.attribute), &plan.sensitive_tokens)?;
    let clear = q.fetch_nonsensitive(&plan.table, &plan.attribute, &plan.nonsensitive_values)?;
    q.commit();
    let fetched_sensitive = enc.len();
    let fetched_nonsensitive = clear.len();
    let real = owner.decrypt_real(&plan.table, &enc)?;
    let tuples = filter_results(real.into_iter().chain(clear), &plan.attribute, &plan.target);
    Ok(SelectionResult {
        tuples,
        fetched_sensitive,
        fetched_nonsensitive,
    })
}

pub fn select(owner: &Owner, store: &CloudStore, table: &str, layout: &BinLayout, w: &str) -> Result<SelectionResult> {
    execute_selection(&plan_query(owner, table, layout, w)?, store, owner)
}

/// Runs independent selections, in parallel when enabled. Each one is
/// still a single atomic entry group in the adversarial view.
pub fn execute_batch(plans: &[QueryPlan], store: &CloudStore, owner: &Owner) -> Vec<Result<SelectionResult>> {
    par::map(plans, |p| execute_selection(p, store, owner))
}

/// Tuples one selection is expected to fetch: a padded sensitive bin plus
/// an average non-sensitive bin. Used as the re-binning baseline.
pub fn expected_fetch(layout: &BinLayout, hist: &ValueHistogram) -> f64 {
    let sens = (0..layout.bin_count(Side::Sensitive))
        .map(|b| {
            layout
                .bin_values(Side::Sensitive, b)
                .map(|v| hist.sensitive_count(v))
                .sum::<u64>()
                + layout.fake_counts.get(b).copied().unwrap_or(0)
        })
        .max()
        .unwrap_or(0);
    let nsb = layout.bin_count(Side::NonSensitive);
    let clear: u64 = (0..nsb)
        .flat_map(|b| layout.bin_values(Side::NonSensitive, b))
        .map(|v| hist.nonsensitive_count(v))
        .sum();
    sens as f64 + if nsb == 0 { 0.0 } else { clear as f64 / nsb as f64 }
}
