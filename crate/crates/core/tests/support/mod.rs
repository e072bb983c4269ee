//! Instance generators and naive oracles shared by the integration tests
//! and the acceptance harness.
#![allow(dead_code)]

use std::collections::BTreeMap;

use panda_core::binning::{create_bins, BinLayout, BinMode, Permutation, WorkloadProfile};
use panda_core::cloudstore::{outsource, CloudStore, Owner, OwnerKey};
use panda_core::partitioner::{partition_relation, PartitionedRelation, TupleRecord};
use panda_core::retrieval::select;
use rand::seq::SliceRandom;
use rand::Rng;

/// Per value: sensitive and non-sensitive tuple counts.
pub type Spec = Vec<(String, u32, u32)>;

/// Random domain of up to `max_values` values. Each value is sensitive-only,
/// cleartext-only or on both sides, with up to `max_mult` tuples per side.
pub fn random_spec<R: Rng>(rng: &mut R, max_values: usize, max_mult: u32) -> Spec {
    let n = rng.gen_range(1..=max_values);
    (0..n)
        .map(|i| {
            let (s, ns) = match rng.gen_range(0..3) {
                0 => (rng.gen_range(1..=max_mult), 0),
                1 => (0, rng.gen_range(1..=max_mult)),
                _ => (rng.gen_range(1..=max_mult), rng.gen_range(1..=max_mult)),
            };
            (format!("{i}"), s, ns)
        })
        .collect()
}

pub fn relation(name: &str, spec: &Spec) -> PartitionedRelation {
    let mut rows = Vec::new();
    for (v, s, ns) in spec {
        for i in 0..*s {
            rows.push(TupleRecord::new(
                format!("s-{v}-{i}"),
                &[("k", v.as_str()), ("p", &format!("{v}/{i}"))],
                true,
            ));
        }
        for i in 0..*ns {
            rows.push(TupleRecord::new(
                format!("n-{v}-{i}"),
                &[("k", v.as_str()), ("p", &format!("{v}/{i}"))],
                false,
            ));
        }
    }
    partition_relation(name, rows, "k").unwrap()
}

/// Direct selection on the unpartitioned relation.
pub fn oracle_select(rel: &PartitionedRelation, attr: &str, w: &str) -> Vec<TupleRecord> {
    let mut out: Vec<TupleRecord> = rel.all().filter(|t| t.get(attr) == Some(w)).cloned().collect();
    out.sort_by(|a, b| a.tuple_id.cmp(&b.tuple_id));
    out
}

pub fn frequent_subset<R: Rng>(rng: &mut R, spec: &Spec) -> Vec<String> {
    let mut ns: Vec<String> = spec.iter().filter(|v| v.2 > 0).map(|v| v.0.clone()).collect();
    ns.shuffle(rng);
    let k = rng.gen_range(0..=ns.len().min(6));
    ns.truncate(k);
    ns
}

pub struct Deployed {
    pub rel: PartitionedRelation,
    pub layout: BinLayout,
    pub owner: Owner,
    pub store: CloudStore,
}

pub fn deploy(spec: &Spec, mode: BinMode, seed: u64, frequent: Vec<String>) -> Deployed {
    let rel = relation("R", spec);
    let hist = rel.histogram().unwrap();
    let mut layout = create_bins(
        &hist,
        mode,
        Permutation::Seeded(seed),
        &WorkloadProfile::new(frequent),
        false,
    )
    .unwrap_or_else(|e| panic!("{mode:?} layout for {spec:?}: {e}"));
    let mut owner = Owner::new(OwnerKey::from_master([seed as u8; 32]));
    let store = outsource(&mut owner, &rel, &mut [&mut layout]).unwrap();
    Deployed {
        rel,
        layout,
        owner,
        store,
    }
}

/// Every domain value plus one unknown value answers exactly like the
/// direct selection. Returns the first mismatch.
pub fn selection_mismatch(d: &Deployed) -> Option<String> {
    let mut domain: Vec<String> = d.rel.histogram().unwrap().entries.keys().cloned().collect();
    domain.push("absent".into());
    for w in &domain {
        let got = select(&d.owner, &d.store, "R", &d.layout, w).unwrap().tuples;
        if got != oracle_select(&d.rel, "k", w) {
            return Some(w.clone());
        }
    }
    None
}

/// Direct equi-join, sorted like the library output.
pub fn oracle_join(
    r: &PartitionedRelation,
    s: &PartitionedRelation,
    pk: &str,
    ck: &str,
) -> Vec<(String, String, String)> {
    let mut out = Vec::new();
    for a in r.all() {
        for b in s.all() {
            if a.get(pk) == b.get(ck) {
                out.push((a.get(pk).unwrap().to_string(), a.tuple_id.clone(), b.tuple_id.clone()));
            }
        }
    }
    out.sort();
    out
}

/// Random parent/child pair satisfying the foreign-key model: parent keys
/// are unique, and a sensitive parent has only sensitive children.
pub fn random_fk_instance<R: Rng>(rng: &mut R) -> (PartitionedRelation, PartitionedRelation) {
    let parents = rng.gen_range(1..=20);
    let mut r_rows = Vec::new();
    let mut s_rows = Vec::new();
    let mut c = 0;
    for p in 0..parents {
        let key = format!("K{p}");
        let sensitive = rng.gen_bool(0.3);
        r_rows.push(TupleRecord::new(
            format!("r{p}"),
            &[("id", &key), ("v", "x")],
            sensitive,
        ));
        for _ in 0..rng.gen_range(0..=4) {
            let child_sensitive = sensitive || rng.gen_bool(0.4);
            s_rows.push(TupleRecord::new(
                format!("c{c}"),
                &[("fk", &key), ("w", "y")],
                child_sensitive,
            ));
            c += 1;
        }
    }
    // children whose key has no parent
    for _ in 0..rng.gen_range(0..=3) {
        s_rows.push(TupleRecord::new(
            format!("c{c}"),
            &[("fk", "orphan"), ("w", "y")],
            rng.gen_bool(0.5),
        ));
        c += 1;
    }
    (
        partition_relation("R", r_rows, "id").unwrap(),
        partition_relation("S", s_rows, "fk").unwrap(),
    )
}

/// Direct range scan with numeric comparison.
pub fn oracle_range(rel: &PartitionedRelation, attr: &str, lo: i64, hi: i64) -> Vec<TupleRecord> {
    let mut out: Vec<TupleRecord> = rel
        .all()
        .filter(|t| {
            let v: i64 = t.get(attr).unwrap().parse().unwrap();
            lo <= v && v <= hi
        })
        .cloned()
        .collect();
    out.sort_by(|a, b| a.tuple_id.cmp(&b.tuple_id));
    out
}

/// Values as a per-value tuple-count map, for fetch-size bookkeeping.
pub fn counts(spec: &Spec) -> BTreeMap<String, (u32, u32)> {
    spec.iter().map(|(v, s, ns)| (v.clone(), (*s, *ns))).collect()
}
