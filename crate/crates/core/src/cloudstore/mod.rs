//! Cloud side storage and the owner's outsourcing / decryption state.
//!
//! Sensitive tuples are stored as AEAD ciphertexts addressable only through
//! occurrence tokens; non-sensitive tuples are stored in clear with a
//! per-attribute value index. Every cloud round trip is appended to the
//! adversarial view log.

pub mod av;
pub mod crypto;
mod disk;
mod owner;

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

pub use av::{AvEntry, QueryKind, Request};
pub use crypto::{OwnerKey, SearchKey, Token};
pub use owner::{outsource, InsertReport, Owner, SealedTuple};

use crate::binning::Side;
use crate::error::{Error, Result};
use crate::partitioner::TupleRecord;

pub const STORE_FORMAT: &str = "panda-store/1";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableInfo {
    pub schema: Vec<String>,
    pub searchable: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub store_id: String,
    pub key_fingerprint: String,
    pub cipher: String,
    pub token_prf: String,
    pub tables: BTreeMap<String, TableInfo>,
    /// `table/attr` -> fingerprint of the installed layout.
    pub layouts: BTreeMap<String, String>,
}

pub fn layout_key(table: &str, attr: &str) -> String {
    format!("{table}/{attr}")
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncryptedTuple {
    pub record_id: u64,
    pub nonce: [u8; crypto::NONCE_LEN],
    pub ciphertext: Vec<u8>,
}

impl EncryptedTuple {
    pub fn cloud_id(&self) -> String {
        format!("c{}", self.record_id)
    }
}

#[derive(Clone, Debug, Default)]
pub(crate) struct TableStore {
    pub encrypted: Vec<EncryptedTuple>,
    pub token_index: HashMap<Token, usize>,
    pub cleartext: Vec<TupleRecord>,
    /// attr -> value -> positions in `cleartext`
    pub value_index: HashMap<String, HashMap<String, Vec<usize>>>,
    pub next_record: u64,
}

impl TableStore {
    fn index_cleartext(&mut self, from: usize, searchable: &[String]) {
        for (i, r) in self.cleartext.iter().enumerate().skip(from) {
            for a in searchable {
                if let Some(v) = r.get(a) {
                    self.value_index
                        .entry(a.clone())
                        .or_default()
                        .entry(v.to_string())
                        .or_default()
                        .push(i);
                }
            }
        }
    }
}

struct AvState {
    entries: Vec<AvEntry>,
    next_seq: u64,
    sink: Option<File>,
}

/// The untrusted store. Reads take `&self` so queries may run
/// concurrently; adversarial-view appends are serialised per query.
pub struct CloudStore {
    manifest: Manifest,
    tables: BTreeMap<String, TableStore>,
    av: Mutex<AvState>,
    dir: Option<PathBuf>,
}

impl std::fmt::Debug for CloudStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CloudStore")
            .field("store_id", &self.manifest.store_id)
            .field("tables", &self.tables.keys().collect::<Vec<_>>())
            .finish()
    }
}

impl CloudStore {
    pub(crate) fn new(store_id: String, key_fingerprint: String) -> Self {
        CloudStore {
            manifest: Manifest {
                format: STORE_FORMAT.into(),
                store_id,
                key_fingerprint,
                cipher: "chacha20poly1305".into(),
                token_prf: "hmac-sha256".into(),
                tables: BTreeMap::new(),
                layouts: BTreeMap::new(),
            },
            tables: BTreeMap::new(),
            av: Mutex::new(AvState {
                entries: Vec::new(),
                next_seq: 0,
                sink: None,
            }),
            dir: None,
        }
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn store_id(&self) -> &str {
        &self.manifest.store_id
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    fn table(&self, name: &str) -> Result<&TableStore> {
        self.tables
            .get(name)
            .ok_or_else(|| Error::Protocol(format!("unknown table `{name}`")))
    }

    pub fn has_table(&self, name: &str) -> bool {
        self.tables.contains_key(name)
    }

    pub fn table_names(&self) -> Vec<String> {
        self.tables.keys().cloned().collect()
    }

    pub fn encrypted_len(&self, table: &str) -> usize {
        self.tables.get(table).map_or(0, |t| t.encrypted.len())
    }

    pub fn cleartext_len(&self, table: &str) -> usize {
        self.tables.get(table).map_or(0, |t| t.cleartext.len())
    }

    pub(crate) fn ensure_table(&mut self, name: &str, info: TableInfo) -> Result<()> {
        match self.manifest.tables.get(name) {
            Some(old) if old.schema != info.schema => Err(Error::Config(format!(
                "table `{name}` already exists with a different schema"
            ))),
            Some(_) => Ok(()),
            None => {
                self.manifest.tables.insert(name.to_string(), info);
                self.tables.insert(name.to_string(), TableStore::default());
                Ok(())
            }
        }
    }

    /// Appends ciphertexts, each with the tokens that address it.
    pub(crate) fn append_encrypted(
        &mut self,
        table: &str,
        records: Vec<(Vec<Token>, [u8; crypto::NONCE_LEN], Vec<u8>)>,
    ) -> Result<Vec<u64>> {
        let t = self
            .tables
            .get_mut(table)
            .ok_or_else(|| Error::Protocol(format!("unknown table `{table}`")))?;
        let mut ids = Vec::with_capacity(records.len());
        for (tokens, nonce, ciphertext) in records {
            let pos = t.encrypted.len();
            let record_id = t.next_record;
            t.next_record += 1;
            for tok in tokens {
                if t.token_index.insert(tok, pos).is_some() {
                    return Err(Error::Integrity("duplicate search token".into()));
                }
            }
            t.encrypted.push(EncryptedTuple {
                record_id,
                nonce,
                ciphertext,
            });
            ids.push(record_id);
        }
        Ok(ids)
    }

    pub(crate) fn append_cleartext(&mut self, table: &str, rows: Vec<TupleRecord>) -> Result<()> {
        let searchable = self
            .manifest
            .tables
            .get(table)
            .map(|i| i.searchable.clone())
            .ok_or_else(|| Error::Protocol(format!("unknown table `{table}`")))?;
        let t = self.tables.get_mut(table).expect("manifest and tables agree");
        let from = t.cleartext.len();
        t.cleartext.extend(rows);
        t.index_cleartext(from, &searchable);
        Ok(())
    }

    pub(crate) fn register_layout(&mut self, table: &str, attr: &str, fingerprint: String) {
        self.manifest.layouts.insert(layout_key(table, attr), fingerprint);
    }

    pub fn layout_fingerprint(&self, table: &str, attr: &str) -> Option<&str> {
        self.manifest.layouts.get(&layout_key(table, attr)).map(String::as_str)
    }

    pub fn begin(&self, kind: QueryKind) -> QuerySession<'_> {
        QuerySession {
            store: self,
            kind,
            drafts: Vec::new(),
            committed: false,
        }
    }

    /// Single-round-trip convenience wrappers.
    pub fn fetch_sensitive(&self, table: &str, attr: Option<&str>, tokens: &[Token]) -> Result<Vec<EncryptedTuple>> {
        let mut q = self.begin(QueryKind::Selection);
        let r = q.fetch_sensitive(table, attr, tokens);
        q.commit();
        r
    }

    pub fn fetch_nonsensitive(&self, table: &str, attr: &str, values: &[String]) -> Result<Vec<TupleRecord>> {
        let mut q = self.begin(QueryKind::Selection);
        let r = q.fetch_nonsensitive(table, attr, values);
        q.commit();
        r
    }

    /// Entry point for hex-encoded tokens arriving over the wire. Malformed
    /// tokens are rejected and the attempt is logged.
    pub fn fetch_sensitive_wire(&self, table: &str, tokens: &[String]) -> Result<Vec<EncryptedTuple>> {
        let parsed: Result<Vec<Token>> = tokens.iter().map(|t| Token::from_hex(t)).collect();
        let mut q = self.begin(QueryKind::Selection);
        let r = match parsed {
            Ok(toks) => q.fetch_sensitive(table, None, &toks),
            Err(e) => {
                q.drafts.push(draft(
                    table,
                    None,
                    Side::Sensitive,
                    Request::Malformed { reason: e.to_string() },
                    vec![],
                ));
                Err(e)
            }
        };
        q.commit();
        r
    }

    pub fn av_entries(&self) -> Vec<AvEntry> {
        self.av.lock().expect("av lock").entries.clone()
    }

    pub fn av_len(&self) -> usize {
        self.av.lock().expect("av lock").entries.len()
    }

    fn append_av(&self, drafts: Vec<Draft>, kind: QueryKind) -> Result<u64> {
        let mut st = self.av.lock().expect("av lock");
        let seq = st.next_seq;
        st.next_seq += 1;
        let n = drafts.len();
        for d in drafts {
            let e = AvEntry {
                query_seq: seq,
                kind,
                table: d.table,
                attr: d.attr,
                side: d.side,
                request: d.request,
                returned_ids: d.returned_ids,
            };
            st.entries.push(e);
        }
        let start = st.entries.len() - n;
        let mut res = Ok(seq);
        let AvState { entries, sink, .. } = &mut *st;
        if let Some(sink) = sink.as_mut() {
            for e in &entries[start..] {
                if let Err(err) = av::write_frame(sink, e) {
                    res = Err(err);
                    break;
                }
            }
        }
        res
    }

    /// Records an upload round trip (inserts).
    pub(crate) fn log_upload(&self, table: &str, side: Side, ids: Vec<String>) -> Result<u64> {
        let d = draft(table, None, side, Request::Upload { records: ids.len() }, ids);
        self.append_av(vec![d], QueryKind::Insert)
    }

    pub fn save(&mut self, dir: &Path) -> Result<()> {
        disk::save(self, dir)?;
        let sink = av::open_append(&dir.join("av.log"))?;
        let mut st = self.av.lock().expect("av lock");
        if self.dir.as_deref() != Some(dir) {
            // a fresh directory gets the full log so far
            std::fs::write(dir.join("av.log"), b"").map_err(|e| Error::io(dir, e))?;
            let mut sink = sink;
            for e in &st.entries {
                av::write_frame(&mut sink, e)?;
            }
            st.sink = Some(sink);
        } else {
            st.sink = Some(sink);
        }
        drop(st);
        self.dir = Some(dir.to_path_buf());
        Ok(())
    }

    pub fn open(dir: &Path) -> Result<Self> {
        let mut s = disk::load(dir)?;
        let entries = av::read_log(&dir.join("av.log"))?;
        let next_seq = entries.iter().map(|e| e.query_seq + 1).max().unwrap_or(0);
        s.av = Mutex::new(AvState {
            entries,
            next_seq,
            sink: Some(av::open_append(&dir.join("av.log"))?),
        });
        s.dir = Some(dir.to_path_buf());
        Ok(s)
    }
}

struct Draft {
    table: String,
    attr: Option<String>,
    side: Side,
    request: Request,
    returned_ids: Vec<String>,
}

fn draft(table: &str, attr: Option<&str>, side: Side, request: Request, returned_ids: Vec<String>) -> Draft {
    Draft {
        table: table.to_string(),
        attr: attr.map(str::to_string),
        side,
        request,
        returned_ids,
    }
}

/// One logical query; all its round trips share a `query_seq` and reach the
/// log together on commit (or drop).
pub struct QuerySession<'a> {
    store: &'a CloudStore,
    kind: QueryKind,
    drafts: Vec<Draft>,
    committed: bool,
}

impl QuerySession<'_> {
    pub fn fetch_sensitive(
        &mut self,
        table: &str,
        attr: Option<&str>,
        tokens: &[Token],
    ) -> Result<Vec<EncryptedTuple>> {
        let t = self.store.table(table)?;
        let out: Vec<EncryptedTuple> = tokens
            .iter()
            .filter_map(|tok| t.token_index.get(tok))
            .map(|&i| t.encrypted[i].clone())
            .collect();
        let ids = out.iter().map(EncryptedTuple::cloud_id).collect();
        self.drafts.push(draft(
            table,
            attr,
            Side::Sensitive,
            Request::Tokens(tokens.to_vec()),
            ids,
        ));
        Ok(out)
    }

    pub fn fetch_nonsensitive(&mut self, table: &str, attr: &str, values: &[String]) -> Result<Vec<TupleRecord>> {
        let t = self.store.table(table)?;
        let idx = t.value_index.get(attr);
        let mut out = Vec::new();
        for v in values {
            if let Some(pos) = idx.and_then(|m| m.get(v)) {
                out.extend(pos.iter().map(|&i| t.cleartext[i].clone()));
            }
        }
        let ids = out.iter().map(|r| r.tuple_id.clone()).collect();
        self.drafts.push(draft(
            table,
            Some(attr),
            Side::NonSensitive,
            Request::Values(values.to_vec()),
            ids,
        ));
        Ok(out)
    }

    pub fn scan_encrypted(&mut self, table: &str) -> Result<Vec<EncryptedTuple>> {
        let t = self.store.table(table)?;
        let out = t.encrypted.clone();
        let ids = out.iter().map(EncryptedTuple::cloud_id).collect();
        self.drafts
            .push(draft(table, None, Side::Sensitive, Request::Scan, ids));
        Ok(out)
    }

    /// Equi-join of the cleartext parts of two tables, computed by the cloud.
    pub fn join_cleartext(
        &mut self,
        left: &str,
        left_key: &str,
        right: &str,
        right_key: &str,
    ) -> Result<Vec<(TupleRecord, TupleRecord)>> {
        let l = self.store.table(left)?;
        let r = self.store.table(right)?;
        let mut by_key: HashMap<&str, Vec<&TupleRecord>> = HashMap::new();
        for row in &r.cleartext {
            if let Some(k) = row.get(right_key) {
                by_key.entry(k).or_default().push(row);
            }
        }
        let mut out = Vec::new();
        for a in &l.cleartext {
            if let Some(bs) = a.get(left_key).and_then(|k| by_key.get(k)) {
                out.extend(bs.iter().map(|b| (a.clone(), (*b).clone())));
            }
        }
        let ids = out
            .iter()
            .map(|(a, b)| format!("{}|{}", a.tuple_id, b.tuple_id))
            .collect();
        self.drafts.push(draft(
            left,
            Some(left_key),
            Side::NonSensitive,
            Request::Join {
                right: right.into(),
                left_key: left_key.into(),
                right_key: right_key.into(),
            },
            ids,
        ));
        Ok(out)
    }

    pub fn commit(mut self) -> u64 {
        self.flush()
    }

    fn flush(&mut self) -> u64 {
        self.committed = true;
        if self.drafts.is_empty() {
            return u64::MAX;
        }
        let drafts = std::mem::take(&mut self.drafts);
        // sink errors must not lose the in-memory record
        self.store.append_av(drafts, self.kind).unwrap_or(u64::MAX)
    }
}

impl Drop for QuerySession<'_> {
    fn drop(&mut self) {
        if !self.committed {
            self.flush();
        }
    }
}
