//! Relations, sensitivity classification and CSV ingestion.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One row of a relation. `attrs` keeps schema order.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TupleRecord {
    pub tuple_id: String,
    pub attrs: Vec<(String, String)>,
    pub sensitive: bool,
}

impl TupleRecord {
    pub fn new(tuple_id: impl Into<String>, attrs: &[(&str, &str)], sensitive: bool) -> Self {
        TupleRecord {
            tuple_id: tuple_id.into(),
            attrs: attrs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
            sensitive,
        }
    }

    pub fn get(&self, attr: &str) -> Option<&str> {
        self.attrs.iter().find(|(k, _)| k == attr).map(|(_, v)| v.as_str())
    }
}

/// A relation split on its sensitivity flag, with the attribute used for
/// selection binning.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionedRelation {
    pub name: String,
    pub schema: Vec<String>,
    pub sensitive: Vec<TupleRecord>,
    pub nonsensitive: Vec<TupleRecord>,
    pub search_attribute: String,
}

impl PartitionedRelation {
    pub fn len(&self) -> usize {
        self.sensitive.len() + self.nonsensitive.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn all(&self) -> impl Iterator<Item = &TupleRecord> {
        self.sensitive.iter().chain(self.nonsensitive.iter())
    }

    pub fn histogram(&self) -> Result<ValueHistogram> {
        value_histogram(self, &self.search_attribute)
    }
}

/// Per-value occurrence counts on each side for one attribute.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValueHistogram {
    pub attribute: String,
    /// value -> (sensitive count, non-sensitive count)
    pub entries: BTreeMap<String, (u64, u64)>,
}

impl ValueHistogram {
    pub fn sensitive_count(&self, v: &str) -> u64 {
        self.entries.get(v).map_or(0, |c| c.0)
    }

    pub fn nonsensitive_count(&self, v: &str) -> u64 {
        self.entries.get(v).map_or(0, |c| c.1)
    }

    /// Distinct values with at least one sensitive tuple, in value order.
    pub fn sensitive_values(&self) -> Vec<String> {
        self.entries
            .iter()
            .filter(|(_, c)| c.0 > 0)
            .map(|(v, _)| v.clone())
            .collect()
    }

    pub fn nonsensitive_values(&self) -> Vec<String> {
        self.entries
            .iter()
            .filter(|(_, c)| c.1 > 0)
            .map(|(v, _)| v.clone())
            .collect()
    }
}

/// Split rows into sensitive / non-sensitive parts, checking that every
/// row carries `attribute` and that tuple ids are unique.
pub fn partition_relation(name: &str, rows: Vec<TupleRecord>, attribute: &str) -> Result<PartitionedRelation> {
    let mut seen = HashSet::with_capacity(rows.len());
    let schema: Vec<String> = rows
        .first()
        .map(|r| r.attrs.iter().map(|(k, _)| k.clone()).collect())
        .unwrap_or_else(|| vec![attribute.to_string()]);
    if !schema.iter().any(|a| a == attribute) {
        return Err(Error::Ingestion(format!(
            "attribute `{attribute}` is not in the schema"
        )));
    }
    let mut sensitive = Vec::new();
    let mut nonsensitive = Vec::new();
    for r in rows {
        if !seen.insert(r.tuple_id.clone()) {
            return Err(Error::Ingestion(format!("duplicate tuple id `{}`", r.tuple_id)));
        }
        if r.get(attribute).is_none() {
            return Err(Error::Ingestion(format!(
                "tuple `{}` has no attribute `{attribute}`",
                r.tuple_id
            )));
        }
        if r.sensitive {
            sensitive.push(r);
        } else {
            nonsensitive.push(r);
        }
    }
    Ok(PartitionedRelation {
        name: name.to_string(),
        schema,
        sensitive,
        nonsensitive,
        search_attribute: attribute.to_string(),
    })
}

pub fn value_histogram(rel: &PartitionedRelation, attribute: &str) -> Result<ValueHistogram> {
    let mut entries: BTreeMap<String, (u64, u64)> = BTreeMap::new();
    for r in rel.all() {
        let v = r
            .get(attribute)
            .ok_or_else(|| Error::Ingestion(format!("tuple `{}` has no attribute `{attribute}`", r.tuple_id)))?;
        let e = entries.entry(v.to_string()).or_default();
        if r.sensitive {
            e.0 += 1;
        } else {
            e.1 += 1;
        }
    }
    Ok(ValueHistogram {
        attribute: attribute.to_string(),
        entries,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Gt,
    Le,
    Ge,
}

/// `column <op> literal`, compared numerically when both sides parse as
/// numbers and as strings otherwise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Predicate {
    pub column: String,
    pub op: CmpOp,
    pub value: String,
}

impl Predicate {
    pub fn eval(&self, cell: &str) -> bool {
        let ord = match (cell.trim().parse::<f64>(), self.value.trim().parse::<f64>()) {
            (Ok(a), Ok(b)) => a.partial_cmp(&b).unwrap_or(Ordering::Equal),
            _ => cell.cmp(self.value.as_str()),
        };
        match self.op {
            CmpOp::Eq => ord == Ordering::Equal,
            CmpOp::Ne => ord != Ordering::Equal,
            CmpOp::Lt => ord == Ordering::Less,
            CmpOp::Gt => ord == Ordering::Greater,
            CmpOp::Le => ord != Ordering::Greater,
            CmpOp::Ge => ord != Ordering::Less,
        }
    }
}

impl FromStr for Predicate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        // two-character operators first so `<=` is not read as `<`
        const OPS: [(&str, CmpOp); 6] = [
            ("!=", CmpOp::Ne),
            ("<=", CmpOp::Le),
            (">=", CmpOp::Ge),
            ("=", CmpOp::Eq),
            ("<", CmpOp::Lt),
            (">", CmpOp::Gt),
        ];
        for (tok, op) in OPS {
            if let Some(i) = s.find(tok) {
                let column = s[..i].trim();
                if column.is_empty() {
                    break;
                }
                return Ok(Predicate {
                    column: column.to_string(),
                    op,
                    value: s[i + tok.len()..].trim().to_string(),
                });
            }
        }
        Err(Error::Config(format!("cannot parse predicate `{s}`")))
    }
}

/// Where the sensitivity flag of a CSV row comes from.
#[derive(Clone, Debug, PartialEq)]
pub enum Sensitivity {
    /// A 0/1/true/false column, dropped from the attributes.
    Column(String),
    Predicate(Predicate),
}

#[derive(Clone, Debug, PartialEq)]
pub struct IngestOptions {
    pub name: String,
    pub search_attribute: String,
    pub sensitivity: Sensitivity,
    /// Column holding tuple ids. Defaults to a `tuple_id` column when the
    /// header has one; rows are numbered `row-{n}` otherwise.
    pub id_column: Option<String>,
    /// Generated ids start after this many rows (appending batches).
    pub first_row: usize,
}

fn parse_flag(cell: &str) -> Option<bool> {
    match cell.trim().to_ascii_lowercase().as_str() {
        "1" | "true" => Some(true),
        "0" | "false" => Some(false),
        _ => None,
    }
}

pub fn ingest_csv(path: &Path, opts: &IngestOptions) -> Result<PartitionedRelation> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    ingest_csv_reader(file, opts)
}

pub fn ingest_csv_reader<R: Read>(input: R, opts: &IngestOptions) -> Result<PartitionedRelation> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let find = |c: &str| {
        header
            .iter()
            .position(|h| h == c)
            .ok_or_else(|| Error::Config(format!("column `{c}` not in CSV header")))
    };
    let (sens_idx, pred_idx) = match &opts.sensitivity {
        Sensitivity::Column(c) => (Some(find(c)?), None),
        Sensitivity::Predicate(p) => (None, Some(find(&p.column)?)),
    };
    let id_idx = match opts.id_column.as_deref() {
        Some(c) => Some(find(c)?),
        None => header.iter().position(|h| h == "tuple_id"),
    };
    let keep: Vec<usize> = (0..header.len())
        .filter(|&i| Some(i) != sens_idx && Some(i) != id_idx)
        .collect();

    let mut rows = Vec::new();
    for (n, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != header.len() {
            return Err(Error::Ingestion(format!(
                "row {} has {} fields, header has {}",
                n + 1,
                rec.len(),
                header.len()
            )));
        }
        let sensitive = match (&opts.sensitivity, sens_idx, pred_idx) {
            (Sensitivity::Column(c), Some(i), _) => parse_flag(&rec[i])
                .ok_or_else(|| Error::Ingestion(format!("row {}: bad sensitivity flag in `{c}`", n + 1)))?,
            (Sensitivity::Predicate(p), _, Some(i)) => p.eval(&rec[i]),
            _ => unreachable!("sensitivity source resolved above"),
        };
        let tuple_id = match id_idx {
            Some(i) => rec[i].to_string(),
            None => format!("row-{}", opts.first_row + n + 1),
        };
        rows.push(TupleRecord {
            tuple_id,
            attrs: keep.iter().map(|&i| (header[i].clone(), rec[i].to_string())).collect(),
            sensitive,
        });
    }
    let mut rel = partition_relation(&opts.name, rows, &opts.search_attribute)?;
    rel.schema = keep.iter().map(|&i| header[i].clone()).collect();
    Ok(rel)
}

/// Canonical CSV: `tuple_id,<schema...>,sensitive`, rows sorted by id.
/// Reading it back with `id_column = tuple_id` and
/// `Sensitivity::Column("sensitive")` reproduces the relation.
pub fn write_canonical_csv<W: Write>(rel: &PartitionedRelation, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["tuple_id".to_string()];
    header.extend(rel.schema.iter().cloned());
    header.push("sensitive".into());
    w.write_record(&header)?;
    let mut rows: Vec<&TupleRecord> = rel.all().collect();
    rows.sort_by(|a, b| a.tuple_id.cmp(&b.tuple_id));
    for r in rows {
        let mut rec = vec![r.tuple_id.as_str()];
        for a in &rel.schema {
            rec.push(r.get(a).unwrap_or(""));
        }
        rec.push(if r.sensitive { "1" } else { "0" });
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

pub fn canonical_options(name: &str, search_attribute: &str) -> IngestOptions {
    IngestOptions {
        name: name.to_string(),
        search_attribute: search_attribute.to_string(),
        sensitivity: Sensitivity::Column("sensitive".into()),
        id_column: Some("tuple_id".into()),
        first_row: 0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EMPLOYEE: &str = "\
tid,EId,FirstName,LastName,SSN,Office,Dept
t1,E101,Adam,Smith,111,1,Defense
t2,E259,John,Williams,222,2,Design
t3,E199,Eve,Smith,333,2,Design
t4,E259,John,Williams,222,6,Defense
t5,E152,Clark,Cook,444,1,Defense
t6,E254,David,Watts,555,4,Design
t7,E159,Lisa,Ross,666,2,Defense
t8,E152,Clark,Cook,444,3,Design
";

    fn employee() -> PartitionedRelation {
        let opts = IngestOptions {
            name: "Employee".into(),
            search_attribute: "EId".into(),
            sensitivity: Sensitivity::Predicate("Dept=Defense".parse().unwrap()),
            id_column: Some("tid".into()),
            first_row: 0,
        };
        ingest_csv_reader(EMPLOYEE.as_bytes(), &opts).unwrap()
    }

    #[test]
    fn employee_split_on_defense() {
        let rel = employee();
        let ids = |v: &[TupleRecord]| v.iter().map(|r| r.tuple_id.clone()).collect::<Vec<_>>();
        assert_eq!(ids(&rel.sensitive), ["t1", "t4", "t5", "t7"]);
        assert_eq!(ids(&rel.nonsensitive), ["t2", "t3", "t6", "t8"]);
        assert_eq!(rel.schema.len(), 6);
        let h = rel.histogram().unwrap();
        assert_eq!(h.entries["E259"], (1, 1));
        assert_eq!(h.entries["E101"], (1, 0));
        assert_eq!(h.entries["E254"], (0, 1));
    }

    #[test]
    fn canonical_round_trip() {
        let rel = employee();
        let mut buf = Vec::new();
        write_canonical_csv(&rel, &mut buf).unwrap();
        let back = ingest_csv_reader(&buf[..], &canonical_options("Employee", "EId")).unwrap();
        assert_eq!(back, rel);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let rows = vec![
            TupleRecord::new("a", &[("k", "1")], true),
            TupleRecord::new("a", &[("k", "2")], false),
        ];
        assert!(matches!(partition_relation("R", rows, "k"), Err(Error::Ingestion(_))));
    }

    #[test]
    fn unknown_attribute_rejected() {
        let rows = vec![TupleRecord::new("a", &[("k", "1")], true)];
        assert!(partition_relation("R", rows, "nope").is_err());
    }

    #[test]
    fn missing_sensitivity_column_is_config_error() {
        let opts = IngestOptions {
            name: "E".into(),
            search_attribute: "EId".into(),
            sensitivity: Sensitivity::Column("secret".into()),
            id_column: None,
            first_row: 0,
        };
        assert!(matches!(
            ingest_csv_reader(EMPLOYEE.as_bytes(), &opts),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn predicates_parse_and_compare() {
        let p: Predicate = "qty>=10".parse().unwrap();
        assert_eq!(p.op, CmpOp::Ge);
        assert!(p.eval("10") && p.eval("11.5") && !p.eval("9"));
        // numeric, not lexicographic
        assert!(p.eval("100"));
        let q: Predicate = "name!=bob".parse().unwrap();
        assert!(q.eval("alice") && !q.eval("bob"));
        let r: Predicate = "d<m".parse().unwrap();
        assert!(r.eval("c") && !r.eval("x"));
        assert!("=x".parse::<Predicate>().is_err());
    }

    #[test]
    fn generated_ids_when_no_id_column() {
        let opts = IngestOptions {
            name: "E".into(),
            search_attribute: "EId".into(),
            sensitivity: Sensitivity::Predicate("Dept=Defense".parse().unwrap()),
            id_column: None,
            first_row: 0,
        };
        let rel = ingest_csv_reader(EMPLOYEE.as_bytes(), &opts).unwrap();
        assert_eq!(rel.sensitive[0].tuple_id, "row-1");
        assert_eq!(rel.schema[0], "tid");
        let later = IngestOptions {
            first_row: 8,
            ..opts.clone()
        };
        let rel = ingest_csv_reader(EMPLOYEE.as_bytes(), &later).unwrap();
        assert_eq!(rel.sensitive[0].tuple_id, "row-9");
    }

    #[test]
    fn tuple_id_header_used_by_default() {
        let csv = "tuple_id,k,sensitive\na,1,1\nb,2,0\n";
        let opts = IngestOptions {
            id_column: None,
            ..canonical_options("R", "k")
        };
        let rel = ingest_csv_reader(csv.as_bytes(), &opts).unwrap();
        assert_eq!(rel.schema, ["k"]);
        assert_eq!(rel.nonsensitive[0].tuple_id, "b");
    }
}
