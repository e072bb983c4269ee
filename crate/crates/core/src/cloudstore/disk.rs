//! On-disk layout:
//!
//! ```text
//! <dir>/manifest                  JSON Manifest
//! <dir>/av.log                    u32-LE length-prefixed JSON AV entries
//! <dir>/<table>/sensitive.bin     frames: u64 record id | 12-byte nonce | ciphertext
//! <dir>/<table>/tokens.idx        frames: 32-byte token | u64 record position
//! <dir>/<table>/nonsensitive.csv  tuple_id + schema columns
//! ```
//! Every file is written to a temporary sibling and renamed into place.

use std::collections::HashMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::crypto::{Token, NONCE_LEN};
use super::{CloudStore, EncryptedTuple, Manifest, TableStore, STORE_FORMAT};
use crate::error::{Error, Result};
use crate::partitioner::TupleRecord;

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn frame(out: &mut Vec<u8>, body: &[u8]) {
    out.extend_from_slice(&(body.len() as u32).to_le_bytes());
    out.extend_from_slice(body);
}

fn frames(bytes: &[u8]) -> Result<Vec<&[u8]>> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if i + 4 > bytes.len() {
            return Err(Error::Integrity("truncated frame header".into()));
        }
        let n = u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes")) as usize;
        i += 4;
        if i + n > bytes.len() {
            return Err(Error::Integrity("truncated frame body".into()));
        }
        out.push(&bytes[i..i + n]);
        i += n;
    }
    Ok(out)
}

fn table_dir(dir: &Path, table: &str) -> Result<std::path::PathBuf> {
    if table.is_empty() || table.contains(['/', '\\']) || table.starts_with('.') {
        return Err(Error::Config(format!(
            "table name `{table}` is not usable as a directory"
        )));
    }
    Ok(dir.join(table))
}

pub(super) fn save(store: &CloudStore, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, t) in &store.tables {
        let td = table_dir(dir, name)?;
        fs::create_dir_all(&td).map_err(|e| Error::io(&td, e))?;

        let mut sens = Vec::new();
        for e in &t.encrypted {
            let mut body = Vec::with_capacity(8 + NONCE_LEN + e.ciphertext.len());
            body.extend_from_slice(&e.record_id.to_le_bytes());
            body.extend_from_slice(&e.nonce);
            body.extend_from_slice(&e.ciphertext);
            frame(&mut sens, &body);
        }
        write_atomic(&td.join("sensitive.bin"), &sens)?;

        let mut idx: Vec<(&Token, &usize)> = t.token_index.iter().collect();
        idx.sort();
        let mut toks = Vec::with_capacity(idx.len() * 44);
        for (tok, pos) in idx {
            let mut body = [0u8; 40];
            body[..32].copy_from_slice(&tok.0);
            body[32..].copy_from_slice(&(*pos as u64).to_le_bytes());
            frame(&mut toks, &body);
        }
        write_atomic(&td.join("tokens.idx"), &toks)?;

        let schema = &store.manifest.tables[name].schema;
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["tuple_id"];
        header.extend(schema.iter().map(String::as_str));
        w.write_record(&header)?;
        for r in &t.cleartext {
            let mut rec = vec![r.tuple_id.as_str()];
            rec.extend(schema.iter().map(|a| r.get(a).unwrap_or("")));
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Integrity(e.to_string()))?;
        write_atomic(&td.join("nonsensitive.csv"), &bytes)?;
    }
    let manifest = serde_json::to_vec_pretty(&store.manifest)?;
    write_atomic(&dir.join("manifest"), &manifest)
}

fn read(path: &Path) -> Result<Vec<u8>> {
    let mut f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut buf = Vec::new();
    f.read_to_end(&mut buf).map_err(|e| Error::io(path, e))?;
    Ok(buf)
}

pub(super) fn load(dir: &Path) -> Result<CloudStore> {
    let manifest: Manifest = serde_json::from_slice(&read(&dir.join("manifest"))?)?;
    if manifest.format != STORE_FORMAT {
        return Err(Error::Integrity(format!(
            "unsupported store format `{}`",
            manifest.format
        )));
    }
    let mut store = CloudStore::new(manifest.store_id.clone(), manifest.key_fingerprint.clone());
    for (name, info) in &manifest.tables {
        let td = table_dir(dir, name)?;
        let mut t = TableStore::default();
        for body in frames(&read(&td.join("sensitive.bin"))?)? {
            if body.len() < 8 + NONCE_LEN {
                return Err(Error::Integrity("short ciphertext record".into()));
            }
            let record_id = u64::from_le_bytes(body[..8].try_into().expect("8 bytes"));
            let nonce: [u8; NONCE_LEN] = body[8..8 + NONCE_LEN].try_into().expect("nonce");
            t.next_record = t.next_record.max(record_id + 1);
            t.encrypted.push(EncryptedTuple {
                record_id,
                nonce,
                ciphertext: body[8 + NONCE_LEN..].to_vec(),
            });
        }
        let mut index = HashMap::new();
        for body in frames(&read(&td.join("tokens.idx"))?)? {
            if body.len() != 40 {
                return Err(Error::Integrity("bad token index record".into()));
            }
            let tok = Token(body[..32].try_into().expect("32 bytes"));
            let pos = u64::from_le_bytes(body[32..].try_into().expect("8 bytes")) as usize;
            if pos >= t.encrypted.len() {
                return Err(Error::Integrity("token points past the ciphertext file".into()));
            }
            index.insert(tok, pos);
        }
        t.token_index = index;

        let clear = read(&td.join("nonsensitive.csv"))?;
        let mut rdr = csv::Reader::from_reader(&clear[..]);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        for rec in rdr.records() {
            let rec = rec?;
            t.cleartext.push(TupleRecord {
                tuple_id: rec[0].to_string(),
                attrs: header[1..]
                    .iter()
                    .zip(rec.iter().skip(1))
                    .map(|(a, v)| (a.clone(), v.to_string()))
                    .collect(),
                sensitive: false,
            });
        }
        t.index_cleartext(0, &info.searchable);
        store.tables.insert(name.clone(), t);
    }
    store.manifest = manifest;
    Ok(store)
}
