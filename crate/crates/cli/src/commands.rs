use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use std::str::FromStr;

use panda_core::auditor::{
    allocation_count, build_surviving_match_graph, check_frequency_exposure, check_full_bipartite,
    check_size_uniformity, current_generation, square_query, AuditReport,
};
use panda_core::binning::{
    create_bins, should_rebin, BinMode, OverheadHistory, Permutation, Side, Slot, WorkloadProfile,
};
use panda_core::cloudstore::{CloudStore, OwnerKey, QueryKind};
use panda_core::gen::{generate, GenConfig};
use panda_core::join::{build_join_relations, execute_join, outsource_join, JoinMode};
use panda_core::partitioner::{
    ingest_csv, partition_relation, IngestOptions, PartitionedRelation, Predicate, Sensitivity,
};
use panda_core::range::{execute_range, plan_range, DomainOrder, LevelOrder, RangeStrategy, RangeTree};
use panda_core::retrieval::{expected_fetch, plan_query, select};
use serde_json::{json, Value};

use crate::meta::{write_atomic, IngestSpec, MetaDir, RelationMeta};
use crate::{CliError, Command, IngestFlags};

type Out = Result<Value, CliError>;

pub fn run(meta: &Path, cmd: Command) -> Out {
    match cmd {
        Command::Gen {
            out,
            lineitems,
            sensitivity,
            seed,
        } => cmd_gen(&out, lineitems, sensitivity, seed),
        Command::Keygen { out } => cmd_keygen(&out),
        Command::Ingest { name, csv, attr, flags } => cmd_ingest(&mut MetaDir::open(meta)?, &name, &csv, &attr, &flags),
        Command::Bin {
            table,
            attr,
            mode,
            frequent,
            seed,
            identity,
            exact,
            rebin,
        } => {
            let perm = match (identity, seed) {
                (true, _) => Permutation::Identity,
                (false, Some(s)) => Permutation::Seeded(s),
                (false, None) => Permutation::Seeded(rand::random()),
            };
            let mode = BinMode::from_str(&mode)?;
            cmd_bin(
                &mut MetaDir::open(meta)?,
                &table,
                attr.as_deref(),
                mode,
                frequent,
                perm,
                exact,
                rebin,
            )
        }
        Command::Outsource { key_file, store } => cmd_outsource(&mut MetaDir::open(meta)?, &key_file, &store),
        Command::Query {
            table,
            attr,
            value,
            sweep,
            show_av,
            key_file,
        } => cmd_query(
            &mut MetaDir::open(meta)?,
            &table,
            attr.as_deref(),
            value.as_deref(),
            sweep,
            show_av,
            key_file.as_deref(),
        ),
        Command::Range {
            table,
            attr,
            from,
            to,
            strategy,
            no_additional,
            allow_full_scan,
            numeric,
            seed,
            key_file,
        } => {
            let strategy = match strategy.as_str() {
                "best" => RangeStrategy::Best { allow_full_scan },
                "least" => RangeStrategy::Least {
                    use_additional: !no_additional,
                },
                s => return Err(CliError::Usage(format!("unknown range strategy `{s}` (best|least)"))),
            };
            let order = if numeric {
                DomainOrder::Numeric
            } else {
                DomainOrder::Lexicographic
            };
            cmd_range(
                &mut MetaDir::open(meta)?,
                &table,
                &attr,
                &from,
                &to,
                strategy,
                order,
                seed,
                key_file.as_deref(),
            )
        }
        Command::Join {
            parent,
            child,
            key,
            child_key,
            select,
            fresh_fetch,
            general,
            key_file,
        } => {
            let mode = if general {
                JoinMode::General
            } else {
                JoinMode::ForeignKey
            };
            let child_key = child_key.unwrap_or_else(|| key.clone());
            cmd_join(
                &mut MetaDir::open(meta)?,
                &parent,
                &child,
                &key,
                &child_key,
                select.as_deref(),
                fresh_fetch,
                mode,
                key_file.as_deref(),
            )
        }
        Command::Insert {
            table,
            csv,
            flags,
            key_file,
        } => cmd_insert(&mut MetaDir::open(meta)?, &table, &csv, &flags, key_file.as_deref()),
        Command::Audit {
            store,
            checks,
            report,
            allocation_n,
        } => cmd_audit(meta, store.as_deref(), &checks, report.as_deref(), allocation_n),
        Command::Stats { threshold } => cmd_stats(&MetaDir::open(meta)?, threshold),
    }
}

fn cmd_gen(out: &Path, lineitems: usize, sensitivity: f64, seed: u64) -> Out {
    let g = generate(&GenConfig {
        lineitems,
        sensitivity_pct: sensitivity,
        seed,
        ..Default::default()
    })?;
    fs::create_dir_all(out).map_err(|e| CliError::Io(out.to_path_buf(), e))?;
    let mut files = Vec::new();
    for (rel, file) in [(&g.orders, "orders.csv"), (&g.lineitem, "lineitem.csv")] {
        let mut buf = Vec::new();
        panda_core::partitioner::write_canonical_csv(rel, &mut buf)?;
        let p = out.join(file);
        write_atomic(&p, &buf)?;
        files.push(json!({
            "file": p,
            "rows": rel.len(),
            "sensitive": rel.sensitive.len(),
        }));
    }
    Ok(json!({ "generated": files }))
}

fn cmd_keygen(out: &Path) -> Out {
    let key = OwnerKey::generate();
    let mut f = fs::OpenOptions::new()
        .write(true)
        .create_new(true)
        .open(out)
        .map_err(|e| CliError::Io(out.to_path_buf(), e))?;
    std::io::Write::write_all(&mut f, key.to_json().as_bytes()).map_err(|e| CliError::Io(out.to_path_buf(), e))?;
    Ok(json!({ "key_file": out, "fingerprint": key.fingerprint() }))
}

fn ingest_options(name: &str, attr: &str, spec: &IngestSpec) -> Result<IngestOptions, CliError> {
    let sensitivity = match (&spec.sensitive_column, &spec.predicate) {
        (Some(c), None) => Sensitivity::Column(c.clone()),
        (None, Some(p)) => Sensitivity::Predicate(Predicate::from_str(p)?),
        (None, None) => Sensitivity::Column("sensitive".into()),
        (Some(_), Some(_)) => return Err(CliError::Usage("give either a sensitive column or a predicate".into())),
    };
    Ok(IngestOptions {
        name: name.into(),
        search_attribute: attr.into(),
        sensitivity,
        id_column: spec.id_column.clone(),
        first_row: 0,
    })
}

fn spec_from(flags: &IngestFlags) -> IngestSpec {
    IngestSpec {
        sensitive_column: flags.sensitive_column.clone(),
        predicate: flags.predicate.clone(),
        id_column: flags.id_column.clone(),
    }
}

fn cmd_ingest(m: &mut MetaDir, name: &str, csv: &Path, attr: &str, flags: &IngestFlags) -> Out {
    if m.meta.relations.get(name).is_some_and(|r| r.outsourced) {
        return Err(CliError::Usage(format!(
            "`{name}` is already outsourced; use `panda insert`"
        )));
    }
    let spec = spec_from(flags);
    let rel = ingest_csv(csv, &ingest_options(name, attr, &spec)?)?;
    m.save_relation(&rel)?;
    m.meta.relations.insert(
        name.into(),
        RelationMeta {
            search_attribute: attr.into(),
            ingest: spec,
            ..Default::default()
        },
    );
    m.save()?;
    let h = rel.histogram()?;
    Ok(json!({
        "relation": name,
        "schema": rel.schema,
        "rows": rel.len(),
        "sensitive": rel.sensitive.len(),
        "nonsensitive": rel.nonsensitive.len(),
        "sensitive_values": h.sensitive_values().len(),
        "nonsensitive_values": h.nonsensitive_values().len(),
    }))
}

fn layout_summary(l: &panda_core::binning::BinLayout) -> Value {
    let fake_slots: usize = l
        .sensitive_bins
        .iter()
        .chain(&l.nonsensitive_bins)
        .flatten()
        .filter(|s| matches!(s, Some(Slot::Fake(_))))
        .count();
    json!({
        "attribute": l.attribute,
        "mode": l.mode,
        "version": l.version,
        "epoch": l.epoch,
        "fingerprint": l.fingerprint(),
        "sensitive_bins": l.bin_count(Side::Sensitive),
        "nonsensitive_bins": l.bin_count(Side::NonSensitive),
        "fake_slots": fake_slots,
        "fake_tuples": l.fake_counts.iter().sum::<u64>(),
    })
}

#[allow(clippy::too_many_arguments)]
fn cmd_bin(
    m: &mut MetaDir,
    table: &str,
    attr: Option<&str>,
    mode: BinMode,
    frequent: Vec<String>,
    perm: Permutation,
    exact: bool,
    rebin: bool,
) -> Out {
    let rel_meta = m.relation(table)?.clone();
    let attr = attr.unwrap_or(&rel_meta.search_attribute).to_string();
    let rel = m.load_relation(table)?;
    let hist = panda_core::partitioner::value_histogram(&rel, &attr)?;
    let mut layout = create_bins(&hist, mode, perm, &WorkloadProfile::new(frequent), exact)?;
    let existing = m
        .layout_path(table, &attr)
        .exists()
        .then(|| m.load_layout(table, &attr))
        .transpose()?;
    if rel_meta.outsourced {
        let Some(old) = existing else {
            return Err(CliError::Usage(format!(
                "`{table}` is outsourced without a layout on `{attr}`; attributes become searchable at outsourcing"
            )));
        };
        if !rebin {
            return Err(CliError::Usage(format!(
                "{table}.{attr} is already outsourced; pass --rebin to replace it"
            )));
        }
        layout.epoch = old.epoch + 1;
        layout.version = old.version + 1;
        let mut owner = m.load_owner(None)?;
        let mut store = m.open_store()?;
        owner.replace_layout(&mut store, table, &mut layout)?;
        let dir = m.store_path()?;
        store.save(&dir)?;
        m.save_owner(&owner)?;
    }
    let baseline = expected_fetch(&layout, &hist);
    m.save_layout(table, &layout)?;
    m.relation_mut(table)?
        .layouts
        .insert(attr.clone(), OverheadHistory::new(baseline.max(1.0)));
    m.save()?;
    Ok(json!({ "table": table, "layout": layout_summary(&layout), "expected_fetch": baseline }))
}

fn cmd_outsource(m: &mut MetaDir, key_file: &Path, store_dir: &Path) -> Out {
    if m.meta.store.as_deref().is_some_and(|s| s != store_dir) {
        return Err(CliError::Usage(format!(
            "metadata already belongs to store {}",
            m.meta.store.as_ref().expect("checked").display()
        )));
    }
    let mut owner = m.load_owner(Some(key_file))?;
    let mut store = if m.meta.store.is_some() {
        let s = m.open_store()?;
        owner.attach(&s)?;
        s
    } else {
        owner.create_store()?
    };
    let pending: Vec<String> = m
        .meta
        .relations
        .iter()
        .filter(|(_, r)| !r.outsourced)
        .map(|(n, _)| n.clone())
        .collect();
    let mut report = Vec::new();
    for name in &pending {
        let rel = m.load_relation(name)?;
        let rm = m.relation(name)?.clone();
        let mut searchable = vec![rm.search_attribute.clone()];
        searchable.extend(rm.layouts.keys().filter(|a| **a != rm.search_attribute).cloned());
        owner.outsource_relation(&mut store, &rel, &searchable)?;
        let mut layouts = Vec::new();
        for attr in rm.layouts.keys() {
            let mut l = m.load_layout(name, attr)?;
            owner.install_layout(&mut store, name, &mut l)?;
            let hist = panda_core::partitioner::value_histogram(&rel, attr)?;
            m.relation_mut(name)?
                .layouts
                .insert(attr.clone(), OverheadHistory::new(expected_fetch(&l, &hist).max(1.0)));
            m.save_layout(name, &l)?;
            layouts.push(layout_summary(&l));
        }
        report.push(json!({
            "relation": name,
            "encrypted": store.encrypted_len(name),
            "cleartext": store.cleartext_len(name),
            "layouts": layouts,
        }));
    }
    store.save(store_dir)?;
    // the key is bound to this store from now on
    write_atomic(key_file, owner.key().to_json().as_bytes())?;
    m.save_owner(&owner)?;
    for name in &pending {
        m.relation_mut(name)?.outsourced = true;
    }
    m.meta.store = Some(store_dir.to_path_buf());
    m.meta.key_file = Some(key_file.to_path_buf());
    m.save()?;
    Ok(json!({ "store": store_dir, "store_id": store.store_id(), "outsourced": report }))
}

fn tuple_json(t: &panda_core::partitioner::TupleRecord) -> Value {
    let attrs: serde_json::Map<String, Value> = t.attrs.iter().map(|(k, v)| (k.clone(), json!(v))).collect();
    json!({ "tuple_id": t.tuple_id, "sensitive": t.sensitive, "attrs": attrs })
}

fn av_since(store: &CloudStore, from: usize) -> Value {
    serde_json::to_value(&store.av_entries()[from..]).expect("av entries serialise")
}

#[allow(clippy::too_many_arguments)]
fn cmd_query(
    m: &mut MetaDir,
    table: &str,
    attr: Option<&str>,
    value: Option<&str>,
    sweep: bool,
    show_av: bool,
    key_file: Option<&Path>,
) -> Out {
    let rm = m.relation(table)?.clone();
    let attr = attr.unwrap_or(&rm.search_attribute).to_string();
    let layout = m.load_layout(table, &attr)?;
    let owner = m.load_owner(key_file)?;
    let store = m.open_store()?;
    owner.attach(&store)?;
    let av_start = store.av_len();
    let mut history = rm.layouts.get(&attr).cloned().unwrap_or_default();

    let out = if sweep {
        let values: BTreeSet<String> = layout
            .values(Side::Sensitive)
            .chain(layout.values(Side::NonSensitive))
            .map(str::to_string)
            .collect();
        let mut fetched = Vec::new();
        let mut matches = 0;
        for v in &values {
            let r = select(&owner, &store, table, &layout, v)?;
            history.record(r.fetched() as u64);
            fetched.push(r.fetched());
            matches += r.tuples.len();
        }
        json!({
            "table": table,
            "attribute": attr,
            "queries": values.len(),
            "matching_tuples": matches,
            "fetched_min": fetched.iter().min(),
            "fetched_max": fetched.iter().max(),
            "fetched_mean": fetched.iter().sum::<usize>() as f64 / fetched.len().max(1) as f64,
        })
    } else {
        let w = value.expect("clap requires --value without --sweep");
        let plan = plan_query(&owner, table, &layout, w)?;
        let r = panda_core::retrieval::execute_selection(&plan, &store, &owner)?;
        if !plan.is_empty() {
            history.record(r.fetched() as u64);
        }
        json!({
            "table": table,
            "attribute": attr,
            "value": w,
            "bins": plan.bins,
            "fetched_sensitive": r.fetched_sensitive,
            "fetched_nonsensitive": r.fetched_nonsensitive,
            "tuples": r.tuples.iter().map(tuple_json).collect::<Vec<_>>(),
        })
    };
    m.relation_mut(table)?.layouts.insert(attr, history);
    m.save()?;
    Ok(if show_av {
        json!({ "result": out, "adversarial_view": av_since(&store, av_start) })
    } else {
        out
    })
}

#[allow(clippy::too_many_arguments)]
fn cmd_range(
    m: &mut MetaDir,
    table: &str,
    attr: &str,
    from: &str,
    to: &str,
    strategy: RangeStrategy,
    order: DomainOrder,
    seed: Option<u64>,
    key_file: Option<&Path>,
) -> Out {
    m.relation(table)?;
    let mut owner = m.load_owner(key_file)?;
    let mut store = m.open_store()?;
    let tree = match m.load_range(table, attr)? {
        Some(t) => t,
        None => {
            let rel = m.load_relation(table)?;
            let hist = panda_core::partitioner::value_histogram(&rel, attr)?;
            let mut t = RangeTree::build(&hist, order, &LevelOrder::seeded(seed.unwrap_or_else(rand::random)))?;
            t.install(&mut owner, &mut store, table)?;
            let dir = m.store_path()?;
            store.save(&dir)?;
            m.save_owner(&owner)?;
            m.save_range(table, &t)?;
            let rm = m.relation_mut(table)?;
            if !rm.ranges.iter().any(|a| a == attr) {
                rm.ranges.push(attr.into());
            }
            m.save()?;
            t
        }
    };
    let plan = plan_range(&tree, from, to, strategy)?;
    let r = execute_range(&tree, &plan, &store, &owner, table)?;
    Ok(json!({
        "table": table,
        "attribute": attr,
        "plan": plan,
        "fetched_sensitive": r.fetched_sensitive,
        "fetched_nonsensitive": r.fetched_nonsensitive,
        "tuples": r.tuples.iter().map(tuple_json).collect::<Vec<_>>(),
    }))
}

#[allow(clippy::too_many_arguments)]
fn cmd_join(
    m: &mut MetaDir,
    parent: &str,
    child: &str,
    key: &str,
    child_key: &str,
    sel: Option<&str>,
    fresh_fetch: bool,
    mode: JoinMode,
    key_file: Option<&Path>,
) -> Out {
    let id = format!("{parent}|{child}");
    let mut owner = m.load_owner(key_file)?;
    let mut store = m.open_store()?;
    let tables = match m.meta.joins.get(&id) {
        Some(t) if t.parent_key == key && t.child_key == child_key && t.mode == mode => t.clone(),
        Some(_) => {
            return Err(CliError::Usage(format!(
                "join {id} was prepared with other keys or mode; it cannot be re-keyed"
            )))
        }
        None => {
            let r = m.load_relation(parent)?;
            let s = m.load_relation(child)?;
            let p = build_join_relations(&r, &s, key, child_key, mode)?;
            let t = outsource_join(&mut owner, &mut store, &p)?;
            let dir = m.store_path()?;
            store.save(&dir)?;
            m.save_owner(&owner)?;
            m.meta.joins.insert(id, t.clone());
            m.save()?;
            t
        }
    };
    let rows = execute_join(&tables, &store, &owner, sel)?;
    let mut out = json!({
        "parent": parent,
        "child": child,
        "rows": rows.len(),
        "joined": rows.iter().map(|r| json!({
            "key": r.key,
            "origin": r.origin,
            "parent": tuple_json(&r.parent),
            "child": tuple_json(&r.child),
        })).collect::<Vec<_>>(),
    });
    if fresh_fetch {
        let w = sel.expect("clap requires --select");
        let layout = m
            .load_layout(parent, key)
            .map_err(|_| CliError::Usage(format!("--fresh-fetch needs a bin layout on {parent}.{key}")))?;
        let r = select(&owner, &store, parent, &layout, w)?;
        out["fresh_fetch"] = json!({
            "fetched": r.fetched(),
            "tuples": r.tuples.iter().map(tuple_json).collect::<Vec<_>>(),
        });
    }
    Ok(out)
}

fn cmd_insert(m: &mut MetaDir, table: &str, csv: &Path, flags: &IngestFlags, key_file: Option<&Path>) -> Out {
    let rm = m.relation(table)?.clone();
    if !rm.outsourced {
        return Err(CliError::Usage(format!(
            "`{table}` is not outsourced; re-run `panda ingest` instead"
        )));
    }
    let spec = if flags.sensitive_column.is_some() || flags.predicate.is_some() || flags.id_column.is_some() {
        spec_from(flags)
    } else {
        rm.ingest.clone()
    };
    let current = m.load_relation(table)?;
    let opts = IngestOptions {
        first_row: current.len(),
        ..ingest_options(table, &rm.search_attribute, &spec)?
    };
    let batch = ingest_csv(csv, &opts)?;
    if batch.schema != current.schema {
        return Err(CliError::Usage(format!(
            "insert schema {:?} differs from `{table}` schema {:?}",
            batch.schema, current.schema
        )));
    }
    let merged_rows: Vec<_> = current.all().chain(batch.all()).cloned().collect();
    let merged: PartitionedRelation = partition_relation(table, merged_rows, &rm.search_attribute)?;

    let mut owner = m.load_owner(key_file)?;
    let mut store = m.open_store()?;
    let mut layouts = rm
        .layouts
        .keys()
        .map(|a| m.load_layout(table, a))
        .collect::<Result<Vec<_>, _>>()?;
    let mut refs: Vec<&mut _> = layouts.iter_mut().collect();
    let rows: Vec<_> = batch.all().cloned().collect();
    let report = owner.insert_rows(&mut store, table, rows, &mut refs)?;
    let dir = m.store_path()?;
    store.save(&dir)?;
    m.save_owner(&owner)?;
    m.save_relation(&PartitionedRelation {
        schema: current.schema.clone(),
        ..merged
    })?;
    for l in &layouts {
        m.save_layout(table, l)?;
    }
    // range trees no longer cover the new values
    let stale = std::mem::take(&mut m.relation_mut(table)?.ranges);
    for a in &stale {
        let p = m.root.join("ranges").join(format!("{table}.{a}.json"));
        let _ = fs::remove_file(p);
    }
    m.save()?;
    Ok(json!({
        "table": table,
        "sensitive_uploaded": report.sensitive_uploaded,
        "cleartext_uploaded": report.cleartext_uploaded,
        "padding_uploaded": report.padding_uploaded,
        "fake_slots": report.outcomes.iter().map(|o| o.fake_slots).sum::<usize>(),
        "layouts": layouts.iter().map(layout_summary).collect::<Vec<_>>(),
        "dropped_range_trees": stale,
    }))
}

fn cmd_audit(meta: &Path, store: Option<&Path>, checks: &[String], report: Option<&Path>, allocation_n: usize) -> Out {
    for c in checks {
        if !["bipartite", "size", "skew", "allocation"].contains(&c.as_str()) {
            return Err(CliError::Usage(format!("unknown check `{c}`")));
        }
    }
    let want = |c: &str| checks.iter().any(|x| x == c);
    let m = if meta.join("meta.json").exists() {
        Some(MetaDir::open(meta)?)
    } else {
        None
    };
    let dir = match (store, &m) {
        (Some(s), _) => s.to_path_buf(),
        (None, Some(m)) => m.store_path()?,
        (None, None) => return Err(CliError::Usage("pass --store or --meta".into())),
    };
    let cloud = CloudStore::open(&dir)?;
    let full = cloud.av_entries();
    let log = current_generation(&full);

    // expected bin counts from the owner's layouts when available
    let mut targets: BTreeMap<(String, String), Option<(usize, usize)>> = BTreeMap::new();
    if let Some(m) = &m {
        for (t, r) in &m.meta.relations {
            for a in r.layouts.keys() {
                if let Ok(l) = m.load_layout(t, a) {
                    let counts = (
                        l.observable_bin_count(Side::Sensitive),
                        l.observable_bin_count(Side::NonSensitive),
                    );
                    targets.insert((t.clone(), a.clone()), Some(counts));
                }
            }
        }
    }
    for e in &log {
        if let (QueryKind::Selection, Some(a)) = (e.kind, &e.attr) {
            targets.entry((e.table.clone(), a.clone())).or_insert(None);
        }
    }

    let mut r = AuditReport::default();
    for ((t, a), expected) in &targets {
        let queried = log
            .iter()
            .any(|e| e.kind == QueryKind::Selection && &e.table == t && e.attr.as_ref() == Some(a));
        if !queried {
            continue;
        }
        if want("bipartite") {
            let g = build_surviving_match_graph(&log, t, a, *expected)?;
            let c = check_full_bipartite(&g);
            r.bipartite.push((g, c));
        }
        if want("skew") {
            r.skew.push(check_frequency_exposure(&log, t, a, expected.map(|e| e.0)));
        }
    }
    if want("size") {
        r.size = Some(check_size_uniformity(&log));
    }
    if want("allocation") {
        r.allocation = Some(allocation_count(allocation_n, &[square_query(allocation_n)?])?);
    }
    let summary = json!({
        "store": dir,
        "entries": full.len(),
        "audited_entries": log.len(),
        "passed": r.passed(),
        "bipartite": r.bipartite.iter().map(|(g, c)| json!({
            "table": g.table,
            "attribute": g.attribute,
            "sensitive_bins_seen": g.left.len(),
            "nonsensitive_bins_seen": g.right.len(),
            "edges": g.edges.len(),
            "full_bipartite": c.full_bipartite,
            "dropped_matches": c.dropped_matches,
            "unseen_bins": c.unseen,
        })).collect::<Vec<_>>(),
        "size": r.size,
        "skew": r.skew,
        "allocation": r.allocation.as_ref().map(|a| json!({
            "n": a.n,
            "consistent": a.total,
            "fixed_pair": a.fixed(0, 0),
            "probability": a.probability(0, 0).to_string(),
            "uniform": a.uniform(),
        })),
    });
    if let Some(p) = report {
        write_atomic(p, serde_json::to_string_pretty(&summary)?.as_bytes())?;
    }
    if !r.passed() {
        crate::emit(&summary);
        return Err(CliError::AuditFailed("see report".into()));
    }
    Ok(summary)
}

fn cmd_stats(m: &MetaDir, threshold: f64) -> Out {
    let mut rels = Vec::new();
    for (t, r) in &m.meta.relations {
        let mut layouts = Vec::new();
        for (a, h) in &r.layouts {
            let l = m.load_layout(t, a)?;
            let mut s = layout_summary(&l);
            s["baseline"] = json!(h.baseline);
            s["queries"] = json!(h.samples.len());
            s["mean_fetched"] = json!(h.mean());
            s["rebin_recommended"] = json!(should_rebin(h, threshold)?);
            layouts.push(s);
        }
        rels.push(json!({
            "relation": t,
            "outsourced": r.outsourced,
            "layouts": layouts,
            "range_trees": r.ranges,
        }));
    }
    Ok(json!({ "store": m.meta.store, "relations": rels, "joins": m.meta.joins }))
}
