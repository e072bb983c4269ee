use std::collections::{BTreeMap, HashMap, HashSet};

use super::WorkloadProfile;
use super::{approx_sq_factors, BinInput, BinLayout, BinMode, Permutation, Side, Slot};
use crate::error::{Error, Result};

pub(super) type Bins = Vec<Vec<Option<Slot>>>;

/// Row/column view of a [`BinInput`], with associations oriented from the
/// row side to the column side.
pub(super) struct Oriented {
    pub row_side: Side,
    pub rows: Vec<String>,
    pub cols: Vec<String>,
    pub row_to_col: HashMap<String, String>,
}

impl Oriented {
    pub fn new(input: &BinInput) -> Self {
        let row_side = input.row_side();
        match row_side {
            Side::Sensitive => Oriented {
                row_side,
                rows: input.sensitive.clone(),
                cols: input.nonsensitive.clone(),
                row_to_col: input.association.iter().map(|(a, b)| (a.clone(), b.clone())).collect(),
            },
            Side::NonSensitive => Oriented {
                row_side,
                rows: input.nonsensitive.clone(),
                cols: input.sensitive.clone(),
                row_to_col: input.association.iter().map(|(a, b)| (b.clone(), a.clone())).collect(),
            },
        }
    }

    pub fn col_to_row(&self) -> HashMap<String, String> {
        self.row_to_col.iter().map(|(a, b)| (b.clone(), a.clone())).collect()
    }
}

/// Largest perfect square not exceeding `n`.
pub fn closest_square(n: usize) -> usize {
    let mut r = (n as f64).sqrt() as usize;
    while r * r > n {
        r -= 1;
    }
    while (r + 1) * (r + 1) <= n {
        r += 1;
    }
    r * r
}

/// Round-robin over `bins` bins; the i-th value (1-based) lands in bin
/// `i mod bins`.
pub(super) fn round_robin(rows: Vec<Slot>, bins: usize) -> Vec<Vec<Slot>> {
    let mut out = vec![Vec::new(); bins];
    for (i, s) in rows.into_iter().enumerate() {
        out[(i + 1) % bins].push(s);
    }
    out
}

/// Places row bins as given, puts associates at `col[j][i]` for
/// `row[i][j]`, then fills remaining column values into the lowest empty
/// slots (up to `col_cap`) and spreads any excess round-robin past the
/// capacity.
pub(super) fn fill_cols(
    row_bins: &[Vec<Slot>],
    cols: &[String],
    row_to_col: &HashMap<String, String>,
    col_bins: usize,
    col_cap: usize,
) -> (Bins, Bins) {
    let mut grid: Bins = vec![vec![None; col_cap]; col_bins];
    let mut used = HashSet::new();
    for (i, bin) in row_bins.iter().enumerate() {
        for (j, slot) in bin.iter().enumerate() {
            if let Some(c) = slot.value().and_then(|v| row_to_col.get(v)) {
                debug_assert!(grid[j][i].is_none());
                grid[j][i] = Some(Slot::Value(c.clone()));
                used.insert(c.as_str());
            }
        }
    }
    let mut rest = cols.iter().filter(|c| !used.contains(c.as_str()));
    'fill: for bin in grid.iter_mut() {
        for cell in bin.iter_mut() {
            if cell.is_none() {
                match rest.next() {
                    Some(c) => *cell = Some(Slot::Value(c.clone())),
                    None => break 'fill,
                }
            }
        }
    }
    for (k, c) in rest.enumerate() {
        grid[k % col_bins].push(Some(Slot::Value(c.clone())));
    }
    let rows = row_bins.iter().map(|b| b.iter().cloned().map(Some).collect()).collect();
    (rows, grid)
}

/// Pads `rows` with fake slots up to `min` entries.
fn pad_rows(rows: &mut Vec<Slot>, min: usize, next_fake: &mut u32) {
    while rows.len() < min {
        rows.push(Slot::Fake(*next_fake));
        *next_fake += 1;
    }
}

/// Base layout: permute the row side, deal it round-robin over `x` bins,
/// then place the column side by association.
pub fn create_bins_base(input: &BinInput, perm: Permutation) -> Result<BinLayout> {
    let o = Oriented::new(input);
    let n = o.cols.len();
    let (x, y) = approx_sq_factors(n)?;
    let mut rows: Vec<Slot> = o.rows.iter().cloned().map(Slot::Value).collect();
    perm.apply(&mut rows);
    let mut next_fake = 0;
    pad_rows(&mut rows, x, &mut next_fake);
    let row_bins = round_robin(rows, x);
    let (rows, cols) = fill_cols(&row_bins, &o.cols, &o.row_to_col, y, x);
    Ok(BinLayout::from_parts(
        &input.attribute,
        BinMode::Base,
        o.row_side,
        x,
        y,
        perm.seed(),
        rows,
        cols,
        next_fake,
    ))
}

/// Retrieval cost comparison between the base factorisation and the
/// square-plus-overflow alternative.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ExtendedCost {
    pub base: usize,
    pub square: usize,
    pub side: usize,
    pub overflow_per_bin: usize,
}

impl ExtendedCost {
    pub fn for_size(n: usize) -> Result<Self> {
        let (x, y) = approx_sq_factors(n)?;
        let z = closest_square(n);
        let r = (z as f64).sqrt().round() as usize;
        let overflow = (n - z).div_ceil(r);
        Ok(ExtendedCost {
            base: x + y,
            square: 2 * r + overflow,
            side: r,
            overflow_per_bin: overflow,
        })
    }

    pub fn prefers_square(&self) -> bool {
        self.square < self.base
    }
}

/// Uses a square `r x r` layout with the leftover column values spread
/// over the column bins when that is cheaper than the base layout and the
/// row side fits in `r * r` slots. Otherwise identical to the base layout.
pub fn create_bins_extended(input: &BinInput, perm: Permutation) -> Result<BinLayout> {
    let o = Oriented::new(input);
    let n = o.cols.len();
    let cost = ExtendedCost::for_size(n)?;
    let r = cost.side;
    if !cost.prefers_square() || o.rows.len() > r * r {
        return create_bins_base(input, perm);
    }
    let mut rows: Vec<Slot> = o.rows.iter().cloned().map(Slot::Value).collect();
    perm.apply(&mut rows);
    let mut next_fake = 0;
    pad_rows(&mut rows, r, &mut next_fake);
    let row_bins = round_robin(rows, r);
    let (rows, cols) = fill_cols(&row_bins, &o.cols, &o.row_to_col, r, r);
    Ok(BinLayout::from_parts(
        &input.attribute,
        BinMode::Extended,
        o.row_side,
        r,
        r,
        perm.seed(),
        rows,
        cols,
        next_fake,
    ))
}

/// Workload-aware layout. Frequent values are grouped together on the side
/// that holds them so their partners are spread over every bin of the
/// other side. Remaining values are permuted by `perm`.
pub fn create_bins_workload(input: &BinInput, profile: &WorkloadProfile, perm: Permutation) -> Result<BinLayout> {
    let o = Oriented::new(input);
    let n = o.cols.len();
    let (x, y) = approx_sq_factors(n)?;
    let col_set: HashSet<&str> = o.cols.iter().map(String::as_str).collect();
    let row_set: HashSet<&str> = o.rows.iter().map(String::as_str).collect();
    let mut seen = HashSet::new();
    let frequent: Vec<&String> = profile.frequent.iter().filter(|f| seen.insert(f.as_str())).collect();
    for f in &frequent {
        if !col_set.contains(f.as_str()) && !row_set.contains(f.as_str()) {
            return Err(Error::Config(format!("frequent value `{f}` is not in the domain")));
        }
    }
    let mut next_fake = 0;
    let (rows, cols) = if o.row_side == Side::Sensitive {
        // column-first: frequent non-sensitive values fill whole bins
        let freq: Vec<String> = frequent
            .iter()
            .filter(|f| col_set.contains(f.as_str()))
            .map(|f| f.to_string())
            .collect();
        let fset: HashSet<&str> = freq.iter().map(String::as_str).collect();
        let mut rest: Vec<String> = o.cols.iter().filter(|c| !fset.contains(c.as_str())).cloned().collect();
        perm.apply(&mut rest);
        let ordered: Vec<String> = freq.into_iter().chain(rest).collect();
        col_first(&ordered, &o, x, y, &mut next_fake)
    } else {
        // reversed: frequent non-sensitive values are rows; group them
        // y to a row bin, then balance the rest by bin size
        let freq: Vec<Slot> = frequent
            .iter()
            .filter(|f| row_set.contains(f.as_str()))
            .map(|f| Slot::Value(f.to_string()))
            .collect();
        let fset: HashSet<&Slot> = freq.iter().collect();
        let mut rest: Vec<Slot> = o
            .rows
            .iter()
            .map(|r| Slot::Value(r.clone()))
            .filter(|s| !fset.contains(s))
            .collect();
        perm.apply(&mut rest);
        let mut bins: Vec<Vec<Slot>> = vec![Vec::new(); x];
        for (k, s) in freq.iter().enumerate() {
            bins[k / y].push(s.clone());
        }
        for s in rest {
            let b = (0..x).min_by_key(|&b| (bins[b].len(), b)).expect("x >= 1");
            bins[b].push(s);
        }
        for b in bins.iter_mut().filter(|b| b.is_empty()) {
            b.push(Slot::Fake(next_fake));
            next_fake += 1;
        }
        fill_cols(&bins, &o.cols, &o.row_to_col, y, x)
    };
    Ok(BinLayout::from_parts(
        &input.attribute,
        BinMode::Workload,
        o.row_side,
        x,
        y,
        perm.seed(),
        rows,
        cols,
        next_fake,
    ))
}

/// Fills column bins sequentially from `ordered`, places row associates at
/// `row[j][i]` for `col[i][j]`, then fills unassociated rows into the
/// lowest empty row slots. Row bins left empty get a fake slot.
fn col_first(ordered: &[String], o: &Oriented, x: usize, y: usize, next_fake: &mut u32) -> (Bins, Bins) {
    let col_to_row = o.col_to_row();
    let mut cols: Bins = vec![Vec::new(); y];
    for (k, c) in ordered.iter().enumerate() {
        cols[k / x].push(Some(Slot::Value(c.clone())));
    }
    let mut rows: Bins = vec![vec![None; y]; x];
    let mut used = HashSet::new();
    for (i, bin) in cols.iter().enumerate() {
        for (j, slot) in bin.iter().enumerate() {
            if let Some(r) = slot.as_ref().and_then(Slot::value).and_then(|v| col_to_row.get(v)) {
                rows[j][i] = Some(Slot::Value(r.clone()));
                used.insert(r.as_str());
            }
        }
    }
    let mut rest = o.rows.iter().filter(|r| !used.contains(r.as_str()));
    'fill: for bin in rows.iter_mut() {
        for cell in bin.iter_mut() {
            if cell.is_none() {
                match rest.next() {
                    Some(r) => *cell = Some(Slot::Value(r.clone())),
                    None => break 'fill,
                }
            }
        }
    }
    for bin in rows.iter_mut() {
        if bin.iter().all(Option::is_none) {
            bin[0] = Some(Slot::Fake(*next_fake));
            *next_fake += 1;
        }
    }
    (rows, cols)
}

/// Association map helper for tests and callers that name values
/// differently on each side.
pub fn associate<I, A, B>(pairs: I) -> BTreeMap<String, String>
where
    I: IntoIterator<Item = (A, B)>,
    A: Into<String>,
    B: Into<String>,
{
    pairs.into_iter().map(|(a, b)| (a.into(), b.into())).collect()
}
