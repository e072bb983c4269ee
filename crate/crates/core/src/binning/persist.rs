//! Checksummed JSON persistence for layouts.
//!
//! ```json
//! { "format": "panda-layout/1", "checksum": "<sha256 hex of layout JSON>", "layout": { ... } }
//! ```
//! `layout` carries `x`, `y`, the seed, both bin vectors (slots are
//! `{"value": "..."}`, `{"fake": n}` or `null` for holes), pinned pairs and
//! per-bin padding counts.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::BinLayout;
use crate::error::{Error, Result};

pub const LAYOUT_FORMAT: &str = "panda-layout/1";

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    format: String,
    checksum: String,
    layout: T,
}

fn checksum(v: &serde_json::Value) -> String {
    hex::encode(Sha256::digest(v.to_string().as_bytes()))
}

pub fn layout_to_json(layout: &BinLayout) -> Result<String> {
    let body = serde_json::to_value(layout)?;
    let env = Envelope {
        format: LAYOUT_FORMAT.into(),
        checksum: checksum(&body),
        layout: body,
    };
    Ok(serde_json::to_string_pretty(&env)?)
}

pub fn layout_from_json(text: &str) -> Result<BinLayout> {
    let env: Envelope<serde_json::Value> = serde_json::from_str(text)?;
    if env.format != LAYOUT_FORMAT {
        return Err(Error::Integrity(format!("unsupported layout format `{}`", env.format)));
    }
    if checksum(&env.layout) != env.checksum {
        return Err(Error::Integrity("layout checksum mismatch".into()));
    }
    let layout: BinLayout = serde_json::from_value(env.layout)?;
    layout.validate()?;
    Ok(layout)
}

pub fn save_layout(layout: &BinLayout, path: &Path) -> Result<()> {
    std::fs::write(path, layout_to_json(layout)?).map_err(|e| Error::io(path, e))
}

pub fn load_layout(path: &Path) -> Result<BinLayout> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    layout_from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::binning::{create_bins_base, BinInput, Permutation};

    fn layout() -> BinLayout {
        let s: Vec<String> = (1..=7).map(|i| format!("s{i}")).collect();
        let ns: Vec<String> = (1..=12).map(|i| format!("n{i}")).collect();
        let input = BinInput::new("k", s, ns, crate::binning::associate([("s1", "n4")])).unwrap();
        create_bins_base(&input, Permutation::Seeded(9)).unwrap()
    }

    #[test]
    fn round_trip() {
        let l = layout();
        let back = layout_from_json(&layout_to_json(&l).unwrap()).unwrap();
        assert_eq!(back, l);
        assert_eq!(back.locate("n4").unwrap(), l.locate("s1").unwrap());
    }

    #[test]
    fn tampering_detected() {
        let text = layout_to_json(&layout()).unwrap();
        let bad = text.replacen("\"s1\"", "\"s9\"", 1);
        assert!(matches!(layout_from_json(&bad), Err(Error::Integrity(_))));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("l.json");
        save_layout(&layout(), &p).unwrap();
        assert_eq!(load_layout(&p).unwrap(), layout());
    }
}
