use std::collections::{BTreeMap, HashMap, HashSet};

use rand::rngs::OsRng;
use rand::seq::SliceRandom;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::crypto::{OwnerKey, SearchKey, Token};
use super::{CloudStore, EncryptedTuple, TableInfo};
use crate::binning::{insert_batch, BinLayout, InsertBatch, InsertOutcome, Side};
use crate::error::{Error, Result};
use crate::par;
use crate::partitioner::{PartitionedRelation, TupleRecord};

/// Plaintext inside every ciphertext.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SealedTuple {
    pub record: TupleRecord,
    pub fake: bool,
}

const PAD_BLOCK: usize = 64;

fn seal(t: &SealedTuple, size_class: usize) -> Vec<u8> {
    let body = serde_json::to_vec(t).expect("tuple serialises");
    let total = (4 + body.len()).max(size_class).div_ceil(PAD_BLOCK) * PAD_BLOCK;
    let mut out = Vec::with_capacity(total);
    out.extend_from_slice(&(body.len() as u32).to_le_bytes());
    out.extend_from_slice(&body);
    out.resize(total, 0);
    out
}

fn unseal(bytes: &[u8]) -> Result<SealedTuple> {
    if bytes.len() < 4 {
        return Err(Error::Integrity("short plaintext".into()));
    }
    let n = u32::from_le_bytes(bytes[..4].try_into().expect("4 bytes")) as usize;
    let body = bytes
        .get(4..4 + n)
        .ok_or_else(|| Error::Integrity("plaintext length out of range".into()))?;
    Ok(serde_json::from_slice(body)?)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct CountRow {
    table: String,
    attr: String,
    key: SearchKey,
    count: u64,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
struct OwnerStateFile {
    counts: Vec<CountRow>,
    size_class: BTreeMap<String, usize>,
}

/// Owner-side secret state: the key plus how many tuples have been
/// outsourced under each search key, which is what lets the owner rebuild
/// every occurrence token.
#[derive(Clone, Debug)]
pub struct Owner {
    key: OwnerKey,
    counts: HashMap<(String, String), HashMap<SearchKey, u64>>,
    size_class: BTreeMap<String, usize>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct InsertReport {
    pub outcomes: Vec<InsertOutcome>,
    pub sensitive_uploaded: usize,
    pub padding_uploaded: usize,
    pub cleartext_uploaded: usize,
}

impl Owner {
    pub fn new(key: OwnerKey) -> Self {
        Owner {
            key,
            counts: HashMap::new(),
            size_class: BTreeMap::new(),
        }
    }

    pub fn key(&self) -> &OwnerKey {
        &self.key
    }

    pub fn state_json(&self) -> String {
        let mut counts: Vec<CountRow> = self
            .counts
            .iter()
            .flat_map(|((table, attr), m)| {
                m.iter().map(move |(k, c)| CountRow {
                    table: table.clone(),
                    attr: attr.clone(),
                    key: k.clone(),
                    count: *c,
                })
            })
            .collect();
        counts.sort_by(|a, b| (&a.table, &a.attr, &a.key).cmp(&(&b.table, &b.attr, &b.key)));
        serde_json::to_string(&OwnerStateFile {
            counts,
            size_class: self.size_class.clone(),
        })
        .expect("owner state serialises")
    }

    pub fn from_state_json(key: OwnerKey, text: &str) -> Result<Self> {
        let f: OwnerStateFile = serde_json::from_str(text)?;
        let mut o = Owner::new(key);
        for r in f.counts {
            o.counts.entry((r.table, r.attr)).or_default().insert(r.key, r.count);
        }
        o.size_class = f.size_class;
        Ok(o)
    }

    /// Creates an empty store bound to this key.
    pub fn create_store(&mut self) -> Result<CloudStore> {
        let mut id = [0u8; 16];
        OsRng.fill_bytes(&mut id);
        let id = hex::encode(id);
        self.key.bind(&id)?;
        Ok(CloudStore::new(id, self.key.fingerprint()))
    }

    /// Checks that `store` was created with this key.
    pub fn attach(&self, store: &CloudStore) -> Result<()> {
        if store.manifest().key_fingerprint != self.key.fingerprint()
            || self.key.bound_store() != Some(store.store_id())
        {
            return Err(Error::Config("owner key does not belong to this store".into()));
        }
        Ok(())
    }

    /// Outsourced tuple count under `key`.
    pub fn count(&self, table: &str, attr: &str, key: &SearchKey) -> u64 {
        self.counts
            .get(&(table.to_string(), attr.to_string()))
            .and_then(|m| m.get(key))
            .copied()
            .unwrap_or(0)
    }

    pub fn sensitive_count(&self, table: &str, attr: &str, value: &str) -> u64 {
        self.count(table, attr, &SearchKey::Value(value.to_string()))
    }

    fn bump(&mut self, table: &str, attr: &str, key: SearchKey) -> u64 {
        let c = self
            .counts
            .entry((table.to_string(), attr.to_string()))
            .or_default()
            .entry(key)
            .or_default();
        *c += 1;
        *c
    }

    /// Tokens for the first `upto` occurrences of `key`.
    pub fn tokens(&self, table: &str, attr: &str, key: &SearchKey, upto: u64) -> Vec<Token> {
        (1..=upto).map(|i| self.key.token(table, attr, key, i)).collect()
    }

    pub fn padding_key(scope: &str, epoch: u64, bin: usize) -> SearchKey {
        SearchKey::Padding {
            layout: scope.to_string(),
            epoch,
            bin,
        }
    }

    /// Sorted tokens for every tuple of sensitive bin `b`, padding included.
    pub fn bin_tokens(&self, table: &str, layout: &BinLayout, b: usize) -> Vec<Token> {
        let attr = &layout.attribute;
        let mut out: Vec<Token> = layout
            .bin_values(Side::Sensitive, b)
            .flat_map(|v| {
                let k = SearchKey::Value(v.to_string());
                let n = self.count(table, attr, &k);
                self.tokens(table, attr, &k, n)
            })
            .collect();
        let pad = Self::padding_key("sel", layout.epoch, b);
        out.extend(self.tokens(table, attr, &pad, layout.fake_counts[b]));
        out.sort();
        out
    }

    pub fn decrypt(&self, table: &str, t: &EncryptedTuple) -> Result<SealedTuple> {
        unseal(&self.key.decrypt(&t.nonce, &t.ciphertext, table.as_bytes())?)
    }

    /// Decrypts and drops fake tuples.
    pub fn decrypt_real(&self, table: &str, ts: &[EncryptedTuple]) -> Result<Vec<TupleRecord>> {
        let sealed = par::try_map(ts, |t| self.decrypt(table, t))?;
        Ok(sealed.into_iter().filter(|s| !s.fake).map(|s| s.record).collect())
    }

    fn encrypt_rows(
        &mut self,
        table: &str,
        rows: Vec<(Vec<Token>, SealedTuple)>,
    ) -> Vec<(Vec<Token>, [u8; 12], Vec<u8>)> {
        let class = *self.size_class.get(table).unwrap_or(&0);
        let key = &self.key;
        let aad = table.as_bytes();
        par::map(&rows, |(toks, t)| {
            let (nonce, ct) = key.encrypt(&seal(t, class), aad);
            (toks.clone(), nonce, ct)
        })
    }

    fn grow_size_class<'a>(&mut self, table: &str, rows: impl Iterator<Item = &'a TupleRecord>) {
        let c = self.size_class.entry(table.to_string()).or_insert(0);
        for r in rows {
            let t = SealedTuple {
                record: r.clone(),
                fake: false,
            };
            let n = 4 + serde_json::to_vec(&t).expect("serialises").len();
            *c = (*c).max(n);
        }
    }

    /// Tokens for the next occurrence of each searchable attribute value.
    fn next_tokens(&mut self, table: &str, searchable: &[String], r: &TupleRecord) -> Vec<Token> {
        searchable
            .iter()
            .filter_map(|a| r.get(a).map(|v| (a, v.to_string())))
            .map(|(a, v)| {
                let k = SearchKey::Value(v);
                let i = self.bump(table, a, k.clone());
                self.key.token(table, a, &k, i)
            })
            .collect()
    }

    /// Encrypts the sensitive part (in random order) and uploads the
    /// non-sensitive part in clear.
    pub fn outsource_relation(
        &mut self,
        store: &mut CloudStore,
        rel: &PartitionedRelation,
        searchable: &[String],
    ) -> Result<()> {
        self.attach(store)?;
        for a in searchable {
            if !rel.schema.contains(a) {
                return Err(Error::Config(format!("searchable attribute `{a}` not in schema")));
            }
        }
        store.ensure_table(
            &rel.name,
            TableInfo {
                schema: rel.schema.clone(),
                searchable: searchable.to_vec(),
            },
        )?;
        let (ids, _) = self.upload_sensitive(store, &rel.name, searchable, rel.sensitive.clone())?;
        debug_assert_eq!(ids.len(), rel.sensitive.len());
        store.append_cleartext(&rel.name, rel.nonsensitive.clone())?;
        Ok(())
    }

    fn upload_sensitive(
        &mut self,
        store: &mut CloudStore,
        table: &str,
        searchable: &[String],
        mut rows: Vec<TupleRecord>,
    ) -> Result<(Vec<u64>, usize)> {
        rows.shuffle(&mut OsRng);
        self.grow_size_class(table, rows.iter());
        let mut sealed = Vec::with_capacity(rows.len());
        for r in rows {
            let toks = self.next_tokens(table, searchable, &r);
            sealed.push((toks, SealedTuple { record: r, fake: false }));
        }
        let n = sealed.len();
        let recs = self.encrypt_rows(table, sealed);
        Ok((store.append_encrypted(table, recs)?, n))
    }

    /// Uploads fake tuples so `have` reaches `need` under `key`.
    pub(crate) fn upload_padding(
        &mut self,
        store: &mut CloudStore,
        table: &str,
        attr: &str,
        key: &SearchKey,
        need: u64,
    ) -> Result<Vec<u64>> {
        let have = self.count(table, attr, key);
        if need <= have {
            return Ok(Vec::new());
        }
        let fake = SealedTuple {
            record: TupleRecord {
                tuple_id: String::new(),
                attrs: Vec::new(),
                sensitive: true,
            },
            fake: true,
        };
        let mut rows = Vec::new();
        for _ in have..need {
            let i = self.bump(table, attr, key.clone());
            rows.push((vec![self.key.token(table, attr, key, i)], fake.clone()));
        }
        let recs = self.encrypt_rows(table, rows);
        store.append_encrypted(table, recs)
    }

    /// Pads `layout` to uniform sensitive-bin totals, uploads any padding
    /// tuples still missing and registers the layout with the store.
    /// Returns the cloud ids of uploaded padding tuples.
    pub fn install_layout(&mut self, store: &mut CloudStore, table: &str, layout: &mut BinLayout) -> Result<Vec<u64>> {
        self.attach(store)?;
        let attr = layout.attribute.clone();
        let searchable = &store
            .manifest()
            .tables
            .get(table)
            .ok_or_else(|| Error::Config(format!("table `{table}` not outsourced")))?
            .searchable;
        if !searchable.contains(&attr) {
            return Err(Error::Config(format!("`{attr}` is not searchable in `{table}`")));
        }
        let counts: HashMap<String, u64> = layout
            .values(Side::Sensitive)
            .map(|v| (v.to_string(), self.sensitive_count(table, &attr, v)))
            .collect();
        layout.pad_uniform(|v| counts.get(v).copied().unwrap_or(0));
        let mut ids = Vec::new();
        for b in 0..layout.fake_counts.len() {
            let k = Self::padding_key("sel", layout.epoch, b);
            ids.extend(self.upload_padding(store, table, &attr, &k, layout.fake_counts[b])?);
        }
        store.register_layout(table, &attr, layout.fingerprint());
        Ok(ids)
    }

    /// [`Owner::install_layout`] for a table that may already have been
    /// queried. The padding upload is a visible round trip (possibly empty)
    /// and marks the start of a new layout generation in the log.
    pub fn replace_layout(&mut self, store: &mut CloudStore, table: &str, layout: &mut BinLayout) -> Result<Vec<u64>> {
        let pad = self.install_layout(store, table, layout)?;
        store.log_upload(table, Side::Sensitive, pad.iter().map(|i| format!("c{i}")).collect())?;
        Ok(pad)
    }

    /// Adds rows to an outsourced table, extending each layout with any new
    /// values and re-padding it. Uploads are logged as insert round trips.
    pub fn insert_rows(
        &mut self,
        store: &mut CloudStore,
        table: &str,
        rows: Vec<TupleRecord>,
        layouts: &mut [&mut BinLayout],
    ) -> Result<InsertReport> {
        self.attach(store)?;
        let info = store
            .manifest()
            .tables
            .get(table)
            .cloned()
            .ok_or_else(|| Error::Config(format!("table `{table}` not outsourced")))?;
        let mut ids = HashSet::new();
        for r in &rows {
            if !ids.insert(r.tuple_id.as_str()) {
                return Err(Error::Consistency(format!(
                    "duplicate tuple id `{}` in batch",
                    r.tuple_id
                )));
            }
            for a in &info.schema {
                if r.get(a).is_none() {
                    return Err(Error::Ingestion(format!("tuple `{}` lacks `{a}`", r.tuple_id)));
                }
            }
        }
        let mut report = InsertReport::default();
        let mut new_layouts = Vec::new();
        for l in layouts.iter() {
            let attr = &l.attribute;
            let mut new_s = Vec::new();
            let mut new_ns = Vec::new();
            let mut seen = HashSet::new();
            for r in &rows {
                let v = r
                    .get(attr)
                    .ok_or_else(|| Error::Ingestion(format!("row lacks `{attr}`")))?;
                let side = if r.sensitive {
                    Side::Sensitive
                } else {
                    Side::NonSensitive
                };
                if l.position(side, v).is_none() && seen.insert((side, v)) {
                    match side {
                        Side::Sensitive => new_s.push(v.to_string()),
                        Side::NonSensitive => new_ns.push(v.to_string()),
                    }
                }
            }
            let batch = InsertBatch::by_equality(l, new_s, new_ns);
            new_layouts.push(insert_batch(l, &batch)?);
        }

        let (sens, clear): (Vec<TupleRecord>, Vec<TupleRecord>) = rows.into_iter().partition(|r| r.sensitive);
        let (sid, n) = self.upload_sensitive(store, table, &info.searchable, sens)?;
        report.sensitive_uploaded = n;
        if !sid.is_empty() {
            store.log_upload(table, Side::Sensitive, sid.iter().map(|i| format!("c{i}")).collect())?;
        }
        report.cleartext_uploaded = clear.len();
        if !clear.is_empty() {
            let cids = clear.iter().map(|r| r.tuple_id.clone()).collect();
            store.append_cleartext(table, clear)?;
            store.log_upload(table, Side::NonSensitive, cids)?;
        }
        for (slot, outcome) in layouts.iter_mut().zip(new_layouts) {
            **slot = outcome.layout.clone();
            report.padding_uploaded += self.replace_layout(store, table, slot)?.len();
            report.outcomes.push(outcome);
        }
        Ok(report)
    }
}

/// Creates a store for `relation`, encrypts and uploads it, and installs
/// (pads and registers) each layout.
pub fn outsource(
    owner: &mut Owner,
    relation: &PartitionedRelation,
    layouts: &mut [&mut BinLayout],
) -> Result<CloudStore> {
    let mut store = owner.create_store()?;
    let mut searchable = vec![relation.search_attribute.clone()];
    for l in layouts.iter() {
        if !searchable.contains(&l.attribute) {
            searchable.push(l.attribute.clone());
        }
    }
    owner.outsource_relation(&mut store, relation, &searchable)?;
    for l in layouts.iter_mut() {
        owner.install_layout(&mut store, &relation.name, l)?;
    }
    Ok(store)
}
