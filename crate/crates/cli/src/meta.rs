//! Owner metadata directory.
//!
//! ```text
//! <meta>/meta.json               Metadata (paths, per-relation state)
//! <meta>/owner.json              occurrence counters and padding classes
//! <meta>/layouts/<t>.<a>.json    bin layouts (checksummed)
//! <meta>/ranges/<t>.<a>.json     range trees
//! <meta>/staging/<t>.csv         owner's canonical copy of each relation
//! <meta>/.lock                   held for the duration of a command
//! ```
//! Files are replaced via write-to-temp then rename, so a failing command
//! leaves the previous state intact.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use panda_core::binning::{load_layout, save_layout, BinLayout, OverheadHistory};
use panda_core::cloudstore::{CloudStore, Owner, OwnerKey};
use panda_core::join::JoinTables;
use panda_core::partitioner::{canonical_options, ingest_csv, write_canonical_csv, PartitionedRelation};
use panda_core::range::RangeTree;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const META_FORMAT: &str = "panda-meta/1";

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct IngestSpec {
    pub sensitive_column: Option<String>,
    pub predicate: Option<String>,
    pub id_column: Option<String>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct RelationMeta {
    pub search_attribute: String,
    pub ingest: IngestSpec,
    pub outsourced: bool,
    /// Attributes with a bin layout, with their query overhead since binning.
    pub layouts: BTreeMap<String, OverheadHistory>,
    pub ranges: Vec<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Metadata {
    pub format: String,
    pub key_file: Option<PathBuf>,
    pub store: Option<PathBuf>,
    pub relations: BTreeMap<String, RelationMeta>,
    /// Keyed `parent|child`.
    pub joins: BTreeMap<String, JoinTables>,
}

impl Default for Metadata {
    fn default() -> Self {
        Metadata {
            format: META_FORMAT.into(),
            key_file: None,
            store: None,
            relations: BTreeMap::new(),
            joins: BTreeMap::new(),
        }
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let tmp = path.with_extension("tmp");
    let io = |e| CliError::Io(path.to_path_buf(), e);
    let mut f = fs::File::create(&tmp).map_err(io)?;
    f.write_all(bytes).map_err(io)?;
    f.sync_all().map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

/// Exclusive hold on a metadata directory.
pub struct Lock(PathBuf);

impl Lock {
    fn acquire(dir: &Path) -> Result<Self, CliError> {
        let path = dir.join(".lock");
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Lock(path))
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(CliError::Usage(format!(
                "{} is locked by another command; remove the lock file if no panda process is running",
                path.display()
            ))),
            Err(e) => Err(CliError::Io(path, e)),
        }
    }
}

impl Drop for Lock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

pub struct MetaDir {
    pub root: PathBuf,
    pub meta: Metadata,
    _lock: Lock,
}

fn file_stem(table: &str, attr: &str) -> String {
    format!("{table}.{attr}.json")
}

impl MetaDir {
    pub fn open(root: &Path) -> Result<Self, CliError> {
        for sub in ["", "layouts", "ranges", "staging"] {
            let d = root.join(sub);
            fs::create_dir_all(&d).map_err(|e| CliError::Io(d, e))?;
        }
        let lock = Lock::acquire(root)?;
        let path = root.join("meta.json");
        let meta = if path.exists() {
            let text = fs::read_to_string(&path).map_err(|e| CliError::Io(path.clone(), e))?;
            let m: Metadata = serde_json::from_str(&text)?;
            if m.format != META_FORMAT {
                return Err(CliError::Usage(format!("unsupported metadata format `{}`", m.format)));
            }
            m
        } else {
            Metadata::default()
        };
        Ok(MetaDir {
            root: root.to_path_buf(),
            meta,
            _lock: lock,
        })
    }

    pub fn save(&self) -> Result<(), CliError> {
        write_atomic(
            &self.root.join("meta.json"),
            serde_json::to_string_pretty(&self.meta)?.as_bytes(),
        )
    }

    pub fn relation(&self, table: &str) -> Result<&RelationMeta, CliError> {
        self.meta
            .relations
            .get(table)
            .ok_or_else(|| CliError::Usage(format!("no relation `{table}`; run `panda ingest` first")))
    }

    pub fn relation_mut(&mut self, table: &str) -> Result<&mut RelationMeta, CliError> {
        self.meta
            .relations
            .get_mut(table)
            .ok_or_else(|| CliError::Usage(format!("no relation `{table}`; run `panda ingest` first")))
    }

    fn staging_path(&self, table: &str) -> PathBuf {
        self.root.join("staging").join(format!("{table}.csv"))
    }

    pub fn save_relation(&self, rel: &PartitionedRelation) -> Result<(), CliError> {
        let mut buf = Vec::new();
        write_canonical_csv(rel, &mut buf)?;
        write_atomic(&self.staging_path(&rel.name), &buf)
    }

    pub fn load_relation(&self, table: &str) -> Result<PartitionedRelation, CliError> {
        let r = self.relation(table)?;
        Ok(ingest_csv(
            &self.staging_path(table),
            &canonical_options(table, &r.search_attribute),
        )?)
    }

    pub fn layout_path(&self, table: &str, attr: &str) -> PathBuf {
        self.root.join("layouts").join(file_stem(table, attr))
    }

    pub fn save_layout(&self, table: &str, layout: &BinLayout) -> Result<(), CliError> {
        let path = self.layout_path(table, &layout.attribute);
        let tmp = path.with_extension("tmp");
        save_layout(layout, &tmp)?;
        fs::rename(&tmp, &path).map_err(|e| CliError::Io(path, e))
    }

    pub fn load_layout(&self, table: &str, attr: &str) -> Result<BinLayout, CliError> {
        let path = self.layout_path(table, attr);
        if !path.exists() {
            return Err(CliError::Usage(format!(
                "no layout for {table}.{attr}; run `panda bin` first"
            )));
        }
        Ok(load_layout(&path)?)
    }

    pub fn save_range(&self, table: &str, tree: &RangeTree) -> Result<(), CliError> {
        let path = self.root.join("ranges").join(file_stem(table, &tree.attribute));
        write_atomic(&path, serde_json::to_string(tree)?.as_bytes())
    }

    pub fn load_range(&self, table: &str, attr: &str) -> Result<Option<RangeTree>, CliError> {
        let path = self.root.join("ranges").join(file_stem(table, attr));
        if !path.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(&path).map_err(|e| CliError::Io(path, e))?;
        let mut t: RangeTree = serde_json::from_str(&text)?;
        t.reindex();
        Ok(Some(t))
    }

    pub fn key_path(&self, flag: Option<&Path>) -> Result<PathBuf, CliError> {
        flag.map(Path::to_path_buf)
            .or_else(|| self.meta.key_file.clone())
            .ok_or_else(|| CliError::Usage("no key file; pass --key-file".into()))
    }

    pub fn load_owner(&self, key_file: Option<&Path>) -> Result<Owner, CliError> {
        let kp = self.key_path(key_file)?;
        let key = OwnerKey::from_json(&fs::read_to_string(&kp).map_err(|e| CliError::Io(kp.clone(), e))?)?;
        let sp = self.root.join("owner.json");
        if !sp.exists() {
            return Ok(Owner::new(key));
        }
        let state = fs::read_to_string(&sp).map_err(|e| CliError::Io(sp, e))?;
        Ok(Owner::from_state_json(key, &state)?)
    }

    pub fn save_owner(&self, owner: &Owner) -> Result<(), CliError> {
        write_atomic(&self.root.join("owner.json"), owner.state_json().as_bytes())
    }

    pub fn store_path(&self) -> Result<PathBuf, CliError> {
        self.meta
            .store
            .clone()
            .ok_or_else(|| CliError::Usage("nothing outsourced yet; run `panda outsource`".into()))
    }

    pub fn open_store(&self) -> Result<CloudStore, CliError> {
        Ok(CloudStore::open(&self.store_path()?)?)
    }
}
