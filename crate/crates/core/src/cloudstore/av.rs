//! Adversarial view: everything the cloud observes per round trip.

use std::fs::{File, OpenOptions};
use std::io::{BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::crypto::Token;
use crate::binning::Side;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryKind {
    Selection,
    Range,
    Join,
    Insert,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Request {
    Tokens(Vec<Token>),
    Values(Vec<String>),
    Scan,
    Join {
        right: String,
        left_key: String,
        right_key: String,
    },
    Upload {
        records: usize,
    },
    Malformed {
        reason: String,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AvEntry {
    pub query_seq: u64,
    pub kind: QueryKind,
    pub table: String,
    /// Attribute named by the query, if any.
    pub attr: Option<String>,
    pub side: Side,
    pub request: Request,
    /// Record ids (sensitive side) or tuple ids (non-sensitive side).
    pub returned_ids: Vec<String>,
}

impl AvEntry {
    /// Canonical identity of the requested sensitive bin / value set as the
    /// adversary sees it.
    pub fn request_key(&self) -> Vec<String> {
        let mut k: Vec<String> = match &self.request {
            Request::Tokens(t) => t.iter().map(Token::to_hex).collect(),
            Request::Values(v) => v.clone(),
            _ => Vec::new(),
        };
        k.sort();
        k
    }
}

/// Appends one length-prefixed JSON frame.
pub fn write_frame<W: Write>(w: &mut W, entry: &AvEntry) -> Result<()> {
    let body = serde_json::to_vec(entry)?;
    let len = u32::try_from(body.len()).map_err(|_| Error::Protocol("AV entry too large".into()))?;
    let mut buf = Vec::with_capacity(4 + body.len());
    buf.extend_from_slice(&len.to_le_bytes());
    buf.extend_from_slice(&body);
    w.write_all(&buf).map_err(|e| Error::io("<av log>", e))
}

/// Reads all frames; a truncated trailing frame is an error.
pub fn read_frames<R: Read>(r: R) -> Result<Vec<AvEntry>> {
    let mut r = BufReader::new(r);
    let mut out = Vec::new();
    loop {
        let mut len = [0u8; 4];
        match r.read(&mut len[..1]) {
            Ok(0) => break,
            Ok(_) => {}
            Err(e) => return Err(Error::io("<av log>", e)),
        }
        r.read_exact(&mut len[1..])
            .map_err(|_| Error::MalformedLog("truncated frame header".into()))?;
        let n = u32::from_le_bytes(len) as usize;
        let mut body = vec![0u8; n];
        r.read_exact(&mut body)
            .map_err(|_| Error::MalformedLog("truncated frame body".into()))?;
        out.push(serde_json::from_slice(&body)?);
    }
    Ok(out)
}

pub fn read_log(path: &Path) -> Result<Vec<AvEntry>> {
    match File::open(path) {
        Ok(f) => read_frames(f),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Vec::new()),
        Err(e) => Err(Error::io(path, e)),
    }
}

pub(crate) fn open_append(path: &Path) -> Result<File> {
    OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(seq: u64) -> AvEntry {
        AvEntry {
            query_seq: seq,
            kind: QueryKind::Selection,
            table: "R".into(),
            attr: Some("a".into()),
            side: Side::NonSensitive,
            request: Request::Values(vec!["x".into(), "y".into()]),
            returned_ids: vec!["t1".into()],
        }
    }

    #[test]
    fn frames_round_trip() {
        let mut buf = Vec::new();
        for i in 0..5 {
            write_frame(&mut buf, &entry(i)).unwrap();
        }
        let back = read_frames(&buf[..]).unwrap();
        assert_eq!(back, (0..5).map(entry).collect::<Vec<_>>());
        buf.pop();
        assert!(matches!(read_frames(&buf[..]), Err(Error::MalformedLog(_))));
    }
}
