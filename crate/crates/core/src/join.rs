//! Parent/child equi-joins over partitioned relations.
//!
//! Non-sensitive parent rows whose key also occurs among sensitive child rows
//! are encrypted a second time as *pseudo-sensitive* rows, so the join splits
//! into a cleartext part computed by the cloud and an encrypted part joined
//! by the owner after a full scan of both encrypted tables.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::cloudstore::{CloudStore, Owner, QueryKind};
use crate::error::{Error, Result};
use crate::par;
use crate::partitioner::{PartitionedRelation, TupleRecord};

/// Hidden attribute inside encrypted rows marking copies of cleartext rows.
pub const PSEUDO_MARKER: &str = "__pseudo";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JoinMode {
    /// Parent key unique; no sensitive parent key may occur in the
    /// non-sensitive child rows.
    #[default]
    ForeignKey,
    /// Any equi-join. Non-sensitive child rows joining sensitive parents are
    /// copied to the encrypted side too, and marked so pairs of two copies
    /// are dropped.
    General,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct JoinPartition {
    pub parent: String,
    pub child: String,
    pub parent_key: String,
    pub child_key: String,
    pub mode: JoinMode,
    pub parent_schema: Vec<String>,
    pub child_schema: Vec<String>,
    /// Sensitive parent rows plus pseudo-sensitive copies.
    pub r_ps: Vec<TupleRecord>,
    pub r_ns: Vec<TupleRecord>,
    /// Sensitive child rows, plus pseudo-sensitive copies in general mode.
    pub s_s: Vec<TupleRecord>,
    pub s_ns: Vec<TupleRecord>,
    pub pseudo_keys: BTreeSet<String>,
    pub child_pseudo_keys: BTreeSet<String>,
}

fn keys_of(rows: &[TupleRecord], attr: &str) -> Result<BTreeSet<String>> {
    rows.iter()
        .map(|r| {
            r.get(attr)
                .map(str::to_string)
                .ok_or_else(|| Error::Config(format!("tuple {} has no attribute `{attr}`", r.tuple_id)))
        })
        .collect()
}

/// Keys of `r_ns` that have at least one match in `s_s`.
pub fn compute_pseudo_sensitive_keys(
    r_ns: &[TupleRecord],
    s_s: &[TupleRecord],
    parent_key: &str,
    child_key: &str,
) -> Result<BTreeSet<String>> {
    let child = keys_of(s_s, child_key)?;
    Ok(keys_of(r_ns, parent_key)?.intersection(&child).cloned().collect())
}

fn marked(rows: impl IntoIterator<Item = TupleRecord>, pseudo: bool) -> impl Iterator<Item = TupleRecord> {
    rows.into_iter().map(move |mut r| {
        r.attrs
            .push((PSEUDO_MARKER.into(), if pseudo { "1" } else { "0" }.into()));
        r
    })
}

pub fn build_join_relations(
    r: &PartitionedRelation,
    s: &PartitionedRelation,
    parent_key: &str,
    child_key: &str,
    mode: JoinMode,
) -> Result<JoinPartition> {
    for (rel, k) in [(r, parent_key), (s, child_key)] {
        if !rel.schema.iter().any(|a| a == k) {
            return Err(Error::Config(format!("`{}` has no attribute `{k}`", rel.name)));
        }
    }
    let r_s_keys = keys_of(&r.sensitive, parent_key)?;
    let s_ns_keys = keys_of(&s.nonsensitive, child_key)?;
    let crossing: Vec<&String> = r_s_keys.intersection(&s_ns_keys).collect();
    if mode == JoinMode::ForeignKey {
        if !crossing.is_empty() {
            return Err(Error::Constraint(format!(
                "sensitive parent keys occur in non-sensitive child rows: {crossing:?}"
            )));
        }
        let mut seen = BTreeSet::new();
        for row in r.all() {
            let k = row.get(parent_key).unwrap_or_default();
            if !seen.insert(k) {
                return Err(Error::Constraint(format!("parent key `{k}` is not unique")));
            }
        }
    }
    let pseudo_keys = compute_pseudo_sensitive_keys(&r.nonsensitive, &s.sensitive, parent_key, child_key)?;
    let child_pseudo_keys: BTreeSet<String> = match mode {
        JoinMode::ForeignKey => BTreeSet::new(),
        JoinMode::General => crossing.into_iter().cloned().collect(),
    };
    let copies = |rows: &[TupleRecord], attr: &str, keys: &BTreeSet<String>| -> Vec<TupleRecord> {
        rows.iter()
            .filter(|t| t.get(attr).is_some_and(|k| keys.contains(k)))
            .cloned()
            .collect()
    };
    let r_ps = marked(r.sensitive.clone(), false)
        .chain(marked(copies(&r.nonsensitive, parent_key, &pseudo_keys), true))
        .collect();
    let s_s = marked(s.sensitive.clone(), false)
        .chain(marked(copies(&s.nonsensitive, child_key, &child_pseudo_keys), true))
        .collect();
    Ok(JoinPartition {
        parent: r.name.clone(),
        child: s.name.clone(),
        parent_key: parent_key.into(),
        child_key: child_key.into(),
        mode,
        parent_schema: r.schema.clone(),
        child_schema: s.schema.clone(),
        r_ps,
        r_ns: r.nonsensitive.clone(),
        s_s,
        s_ns: s.nonsensitive.clone(),
        pseudo_keys,
        child_pseudo_keys,
    })
}

/// Names of the outsourced join tables; this is all the owner keeps.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct JoinTables {
    pub parent_table: String,
    pub child_table: String,
    pub parent_key: String,
    pub child_key: String,
    pub mode: JoinMode,
}

/// Uploads `R_ps`/`R_ns` as table `<R>.ps` and `S_s`/`S_ns` as `<S>.js`.
pub fn outsource_join(owner: &mut Owner, store: &mut CloudStore, p: &JoinPartition) -> Result<JoinTables> {
    let tables = JoinTables {
        parent_table: format!("{}.ps", p.parent),
        child_table: format!("{}.js", p.child),
        parent_key: p.parent_key.clone(),
        child_key: p.child_key.clone(),
        mode: p.mode,
    };
    let parts = [
        (&tables.parent_table, &p.parent_schema, &p.r_ps, &p.r_ns, &p.parent_key),
        (&tables.child_table, &p.child_schema, &p.s_s, &p.s_ns, &p.child_key),
    ];
    for (name, schema, enc, clear, key) in parts {
        let rel = PartitionedRelation {
            name: name.clone(),
            schema: schema.clone(),
            sensitive: enc.clone(),
            nonsensitive: clear.clone(),
            search_attribute: key.clone(),
        };
        owner.outsource_relation(store, &rel, &[])?;
    }
    Ok(tables)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JoinOrigin {
    Cleartext,
    Encrypted,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct JoinedRow {
    pub key: String,
    pub parent: TupleRecord,
    pub child: TupleRecord,
    pub origin: JoinOrigin,
}

fn strip(mut r: TupleRecord) -> (TupleRecord, bool) {
    let mut pseudo = false;
    r.attrs.retain(|(a, v)| {
        if a == PSEUDO_MARKER {
            pseudo = v == "1";
            false
        } else {
            true
        }
    });
    (r, pseudo)
}

/// Runs both sub-joins in one logged query. `select` keeps only rows with
/// that join key. Output is sorted by key, parent id, child id.
pub fn execute_join(t: &JoinTables, store: &CloudStore, owner: &Owner, select: Option<&str>) -> Result<Vec<JoinedRow>> {
    let mut q = store.begin(QueryKind::Join);
    let clear = q.join_cleartext(&t.parent_table, &t.parent_key, &t.child_table, &t.child_key)?;
    let enc_r = q.scan_encrypted(&t.parent_table)?;
    let enc_s = q.scan_encrypted(&t.child_table)?;
    q.commit();
    let (parents, children) = par::join(
        || owner.decrypt_real(&t.parent_table, &enc_r),
        || owner.decrypt_real(&t.child_table, &enc_s),
    );
    let (parents, children) = (parents?, children?);

    let mut by_key: HashMap<String, Vec<(TupleRecord, bool)>> = HashMap::new();
    for c in children {
        let (c, pseudo) = strip(c);
        if let Some(k) = c.get(&t.child_key) {
            by_key.entry(k.to_string()).or_default().push((c, pseudo));
        }
    }
    let mut out: Vec<JoinedRow> = clear
        .into_iter()
        .map(|(p, c)| JoinedRow {
            key: p.get(&t.parent_key).unwrap_or_default().to_string(),
            parent: p,
            child: c,
            origin: JoinOrigin::Cleartext,
        })
        .collect();
    for p in parents {
        let (p, p_pseudo) = strip(p);
        let Some(k) = p.get(&t.parent_key).map(str::to_string) else {
            continue;
        };
        for (c, c_pseudo) in by_key.get(&k).into_iter().flatten() {
            // both copies of cleartext rows: already in the cleartext part
            if p_pseudo && *c_pseudo {
                continue;
            }
            out.push(JoinedRow {
                key: k.clone(),
                parent: p.clone(),
                child: c.clone(),
                origin: JoinOrigin::Encrypted,
            });
        }
    }
    if let Some(w) = select {
        out.retain(|r| r.key == w);
    }
    out.sort_by(|a, b| {
        (&a.key, &a.parent.tuple_id, &a.child.tuple_id).cmp(&(&b.key, &b.parent.tuple_id, &b.child.tuple_id))
    });
    Ok(out)
}
