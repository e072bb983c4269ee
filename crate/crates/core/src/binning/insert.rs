//! Adding new values to an existing layout without moving old ones.

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::{BinLayout, BinPair, Side, Slot};
use crate::error::{Error, Result};

/// Values new to the layout. `association` maps sensitive to non-sensitive
/// values and may pair a new value with an old one.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct InsertBatch {
    pub new_sensitive: Vec<String>,
    pub new_nonsensitive: Vec<String>,
    pub association: BTreeMap<String, String>,
}

impl InsertBatch {
    /// Associates values that are spelled the same, old or new.
    pub fn by_equality(layout: &BinLayout, new_sensitive: Vec<String>, new_nonsensitive: Vec<String>) -> Self {
        let new_ns: HashSet<&str> = new_nonsensitive.iter().map(String::as_str).collect();
        let mut association = BTreeMap::new();
        for s in &new_sensitive {
            if new_ns.contains(s.as_str()) || layout.position(Side::NonSensitive, s).is_some() {
                association.insert(s.clone(), s.clone());
            }
        }
        for ns in &new_nonsensitive {
            if layout.position(Side::Sensitive, ns).is_some() {
                association.insert(ns.clone(), ns.clone());
            }
        }
        InsertBatch {
            new_sensitive,
            new_nonsensitive,
            association,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Placement {
    pub side: Side,
    pub value: String,
    pub bin: usize,
    pub slot: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InsertOutcome {
    pub layout: BinLayout,
    pub placements: Vec<Placement>,
    /// Sensitive fake slots added so every bin grew by the same amount.
    pub fake_slots: usize,
    pub rounds: usize,
}

fn push(layout: &mut BinLayout, side: Side, bin: usize, slot: Slot) -> usize {
    let bins = layout.bins_mut(side);
    bins[bin].push(Some(slot));
    bins[bin].len() - 1
}

/// Pins the pair for the given values unless the positional rule already
/// yields it from every side they occupy.
fn pin_if_needed(layout: &mut BinLayout, values: &[&str], pair: BinPair) {
    let n_sb = layout.sensitive_bins.len();
    let n_nsb = layout.nonsensitive_bins.len();
    let mut consistent = true;
    for v in values {
        if let Some((a, j)) = layout.position(Side::Sensitive, v) {
            consistent &= a == pair.sensitive && j % n_nsb == pair.nonsensitive;
        }
        if let Some((b, i)) = layout.position(Side::NonSensitive, v) {
            consistent &= b == pair.nonsensitive && i % n_sb == pair.sensitive;
        }
    }
    if !consistent {
        for v in values {
            layout.pinned.insert(v.to_string(), pair);
        }
    }
}

/// Inserts a batch of new values.
///
/// New sensitive values are added in rounds: every sensitive bin receives
/// exactly one entry per round (a fake slot if no value is left for it), so
/// all sensitive bins grow evenly. A new value whose associate is already
/// binned goes to the bin designated by that associate's slot. New
/// associated pairs are placed into a fresh bin pair; unassociated new
/// non-sensitive values go to the emptiest non-sensitive bin.
pub fn insert_batch(layout: &BinLayout, batch: &InsertBatch) -> Result<InsertOutcome> {
    let mut l = layout.clone();
    let new_s: HashSet<&str> = batch.new_sensitive.iter().map(String::as_str).collect();
    let new_ns: HashSet<&str> = batch.new_nonsensitive.iter().map(String::as_str).collect();
    if new_s.len() != batch.new_sensitive.len() || new_ns.len() != batch.new_nonsensitive.len() {
        return Err(Error::Consistency("duplicate values in insert batch".into()));
    }
    for v in &batch.new_sensitive {
        if l.position(Side::Sensitive, v).is_some() {
            return Err(Error::Consistency(format!("sensitive value `{v}` is already binned")));
        }
    }
    for v in &batch.new_nonsensitive {
        if l.position(Side::NonSensitive, v).is_some() {
            return Err(Error::Consistency(format!(
                "non-sensitive value `{v}` is already binned"
            )));
        }
    }

    let mut pairs = Vec::new();
    let mut pinned_s = Vec::new(); // new sensitive with old associate: (value, designated SB)
    let mut pinned_ns = Vec::new(); // new non-sensitive with old associate
    let mut paired_s = HashSet::new();
    let mut paired_ns = HashSet::new();
    let n_sb = l.sensitive_bins.len();
    let n_nsb = l.nonsensitive_bins.len();
    for (s, ns) in &batch.association {
        let s_new = new_s.contains(s.as_str());
        let ns_new = new_ns.contains(ns.as_str());
        match (s_new, ns_new) {
            (true, true) => pairs.push((s.clone(), ns.clone())),
            (true, false) => {
                let (b, i) = l
                    .position(Side::NonSensitive, ns)
                    .ok_or_else(|| Error::Consistency(format!("associate `{ns}` of `{s}` is unknown")))?;
                pinned_s.push((
                    s.clone(),
                    ns.clone(),
                    BinPair {
                        sensitive: i % n_sb,
                        nonsensitive: b,
                    },
                ));
            }
            (false, true) => {
                let (a, j) = l
                    .position(Side::Sensitive, s)
                    .ok_or_else(|| Error::Consistency(format!("associate `{s}` of `{ns}` is unknown")))?;
                pinned_ns.push((
                    ns.clone(),
                    s.clone(),
                    BinPair {
                        sensitive: a,
                        nonsensitive: j % n_nsb,
                    },
                ));
            }
            (false, false) => {
                return Err(Error::Consistency(format!(
                    "association {s} -> {ns} involves no new value"
                )))
            }
        }
        paired_s.insert(s.as_str());
        paired_ns.insert(ns.as_str());
    }
    let mut lone_s: Vec<String> = batch
        .new_sensitive
        .iter()
        .filter(|v| !paired_s.contains(v.as_str()))
        .cloned()
        .collect();
    let mut lone_ns: Vec<String> = batch
        .new_nonsensitive
        .iter()
        .filter(|v| !paired_ns.contains(v.as_str()))
        .cloned()
        .collect();

    let seed = l.seed.unwrap_or(0) ^ (l.batches + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    pairs.shuffle(&mut rng);
    lone_s.shuffle(&mut rng);
    lone_ns.shuffle(&mut rng);

    let mut placements = Vec::new();
    let mut fake_slots = 0;

    // new non-sensitive values joining an old sensitive associate
    for (ns, s, pair) in pinned_ns {
        let slot = push(&mut l, Side::NonSensitive, pair.nonsensitive, Slot::Value(ns.clone()));
        placements.push(Placement {
            side: Side::NonSensitive,
            value: ns.clone(),
            bin: pair.nonsensitive,
            slot,
        });
        pin_if_needed(&mut l, &[&ns, &s], pair);
    }

    let mut rounds = 0;
    let mut pinned_s = pinned_s.into_iter().peekable();
    let mut pairs = pairs.into_iter().peekable();
    let mut lone_s = lone_s.into_iter().peekable();
    while pinned_s.peek().is_some() || pairs.peek().is_some() || lone_s.peek().is_some() {
        rounds += 1;
        let mut free_sb: Vec<usize> = (0..n_sb).collect();
        free_sb.shuffle(&mut rng);
        let mut free_nsb: Vec<usize> = (0..n_nsb).collect();
        free_nsb.shuffle(&mut rng);
        let mut taken = vec![false; n_sb];

        // designated bins first, at most one per bin per round
        let mut deferred = Vec::new();
        for (s, ns, pair) in pinned_s.by_ref() {
            if taken[pair.sensitive] {
                deferred.push((s, ns, pair));
                continue;
            }
            taken[pair.sensitive] = true;
            let slot = push(&mut l, Side::Sensitive, pair.sensitive, Slot::Value(s.clone()));
            placements.push(Placement {
                side: Side::Sensitive,
                value: s.clone(),
                bin: pair.sensitive,
                slot,
            });
            pin_if_needed(&mut l, &[&s, &ns], pair);
        }
        pinned_s = deferred.into_iter().peekable();

        let mut free_sb_iter = free_sb
            .into_iter()
            .filter(|&b| !taken[b])
            .collect::<Vec<_>>()
            .into_iter();
        let mut nsb_iter = free_nsb.into_iter();
        let mut sb_left = Vec::new();
        for sb in free_sb_iter.by_ref() {
            if pairs.peek().is_some() {
                if let Some(nsb) = nsb_iter.next() {
                    let (s, ns) = pairs.next().expect("peeked");
                    let s_slot = push(&mut l, Side::Sensitive, sb, Slot::Value(s.clone()));
                    let ns_slot = push(&mut l, Side::NonSensitive, nsb, Slot::Value(ns.clone()));
                    placements.push(Placement {
                        side: Side::Sensitive,
                        value: s.clone(),
                        bin: sb,
                        slot: s_slot,
                    });
                    placements.push(Placement {
                        side: Side::NonSensitive,
                        value: ns.clone(),
                        bin: nsb,
                        slot: ns_slot,
                    });
                    pin_if_needed(
                        &mut l,
                        &[&s, &ns],
                        BinPair {
                            sensitive: sb,
                            nonsensitive: nsb,
                        },
                    );
                    continue;
                }
            }
            sb_left.push(sb);
        }
        for sb in sb_left {
            match lone_s.next() {
                Some(s) => {
                    let slot = push(&mut l, Side::Sensitive, sb, Slot::Value(s.clone()));
                    placements.push(Placement {
                        side: Side::Sensitive,
                        value: s,
                        bin: sb,
                        slot,
                    });
                }
                None => {
                    let f = l.alloc_fake();
                    push(&mut l, Side::Sensitive, sb, f);
                    fake_slots += 1;
                }
            }
        }
    }

    for ns in lone_ns {
        let min = l.nonsensitive_bins.iter().map(Vec::len).min().unwrap_or(0);
        let cands: Vec<usize> = (0..n_nsb).filter(|&b| l.nonsensitive_bins[b].len() == min).collect();
        let b = cands[rng.gen_range(0..cands.len())];
        let slot = push(&mut l, Side::NonSensitive, b, Slot::Value(ns.clone()));
        placements.push(Placement {
            side: Side::NonSensitive,
            value: ns,
            bin: b,
            slot,
        });
    }

    l.version += 1;
    l.batches += 1;
    l.validate()?;
    Ok(InsertOutcome {
        layout: l,
        placements,
        fake_slots,
        rounds,
    })
}

/// Tuples retrieved per query since the last (re-)binning, against the
/// expected per-query cost right after binning.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OverheadHistory {
    pub baseline: f64,
    pub samples: Vec<u64>,
}

impl OverheadHistory {
    pub fn new(baseline: f64) -> Self {
        OverheadHistory {
            baseline,
            samples: Vec::new(),
        }
    }

    pub fn record(&mut self, retrieved: u64) {
        self.samples.push(retrieved);
    }

    pub fn mean(&self) -> Option<f64> {
        if self.samples.is_empty() {
            None
        } else {
            Some(self.samples.iter().sum::<u64>() as f64 / self.samples.len() as f64)
        }
    }
}

/// True when the mean retrieved count exceeds `threshold` times the
/// baseline. An empty history never triggers.
pub fn should_rebin(history: &OverheadHistory, threshold: f64) -> Result<bool> {
    if threshold.is_nan() || threshold <= 1.0 {
        return Err(Error::Config(format!(
            "re-bin threshold must exceed 1, got {threshold}"
        )));
    }
    if history.baseline <= 0.0 {
        return Err(Error::Config("re-bin baseline must be positive".into()));
    }
    Ok(history.mean().is_some_and(|m| m / history.baseline > threshold))
}
