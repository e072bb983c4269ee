//! Bin assignment when values own different numbers of sensitive tuples.

use std::collections::HashMap;

use super::construct::{fill_cols, round_robin, Oriented};
use super::{approx_sq_factors, BinInput, BinLayout, BinMode, Permutation, Side, Slot};
use crate::error::{Error, Result};

/// Values per bin (with their tuple counts) and the padding each bin needs
/// to reach the largest bin total.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MultiplicityAssignment {
    pub bins: Vec<Vec<(String, u64)>>,
    pub fake_counts: Vec<u64>,
}

impl MultiplicityAssignment {
    pub fn real_totals(&self) -> Vec<u64> {
        self.bins.iter().map(|b| b.iter().map(|(_, c)| c).sum()).collect()
    }

    pub fn padded_total(&self) -> u64 {
        self.real_totals().into_iter().max().unwrap_or(0)
    }

    pub fn fake_tuples(&self) -> u64 {
        self.fake_counts.iter().sum()
    }

    fn from_bins(bins: Vec<Vec<(String, u64)>>) -> Self {
        let totals: Vec<u64> = bins.iter().map(|b| b.iter().map(|(_, c)| c).sum()).collect();
        let max = totals.iter().copied().max().unwrap_or(0);
        MultiplicityAssignment {
            fake_counts: totals.iter().map(|t| max - t).collect(),
            bins,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultiplicityLayout {
    pub layout: BinLayout,
    pub per_bin_tuple_totals: Vec<u64>,
    pub fake_tuples_added: u64,
}

fn check_fits(n: usize, bin_count: usize, capacity: usize) -> Result<()> {
    if bin_count == 0 || n > bin_count * capacity {
        return Err(Error::Config(format!(
            "{n} values do not fit in {bin_count} bins of capacity {capacity}"
        )));
    }
    Ok(())
}

/// Greedy placement: largest values seed the bins one each, every further
/// value goes to the non-full bin with the fewest tuples (lowest index on
/// ties). Values with equal counts keep their input order.
pub fn assign_multiplicity(
    values: &[(String, u64)],
    bin_count: usize,
    capacity: usize,
) -> Result<MultiplicityAssignment> {
    check_fits(values.len(), bin_count, capacity)?;
    let mut sorted: Vec<&(String, u64)> = values.iter().collect();
    sorted.sort_by_key(|v| std::cmp::Reverse(v.1));
    let mut bins: Vec<Vec<(String, u64)>> = vec![Vec::new(); bin_count];
    let mut totals = vec![0u64; bin_count];
    for (k, v) in sorted.into_iter().enumerate() {
        let b = if k < bin_count {
            k
        } else {
            (0..bin_count)
                .filter(|&b| bins[b].len() < capacity)
                .min_by_key(|&b| (totals[b], b))
                .expect("capacity checked")
        };
        totals[b] += v.1;
        bins[b].push(v.clone());
    }
    Ok(MultiplicityAssignment::from_bins(bins))
}

/// Exhaustive search for the assignment with the fewest padding tuples.
/// Limited to 12 values.
pub fn assign_multiplicity_exact(
    values: &[(String, u64)],
    bin_count: usize,
    capacity: usize,
) -> Result<MultiplicityAssignment> {
    check_fits(values.len(), bin_count, capacity)?;
    if values.len() > 12 {
        return Err(Error::Config(
            "exact multiplicity search is limited to 12 values".into(),
        ));
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].1.cmp(&values[a].1));
    let counts: Vec<u64> = order.iter().map(|&i| values[i].1).collect();

    struct Search<'a> {
        counts: &'a [u64],
        cap: usize,
        totals: Vec<u64>,
        sizes: Vec<usize>,
        assign: Vec<usize>,
        best_max: u64,
        best: Vec<usize>,
    }

    impl Search<'_> {
        fn go(&mut self, k: usize) {
            let cur = self.totals.iter().copied().max().unwrap_or(0);
            if cur >= self.best_max {
                return;
            }
            if k == self.counts.len() {
                self.best_max = cur;
                self.best = self.assign.clone();
                return;
            }
            let mut tried_empty = false;
            for b in 0..self.totals.len() {
                if self.sizes[b] == self.cap {
                    continue;
                }
                // empty bins are interchangeable
                if self.sizes[b] == 0 {
                    if tried_empty {
                        continue;
                    }
                    tried_empty = true;
                }
                self.totals[b] += self.counts[k];
                self.sizes[b] += 1;
                self.assign[k] = b;
                self.go(k + 1);
                self.totals[b] -= self.counts[k];
                self.sizes[b] -= 1;
            }
        }
    }

    let mut s = Search {
        counts: &counts,
        cap: capacity,
        totals: vec![0; bin_count],
        sizes: vec![0; bin_count],
        assign: vec![0; counts.len()],
        best_max: u64::MAX,
        best: Vec::new(),
    };
    s.go(0);
    let mut bins: Vec<Vec<(String, u64)>> = vec![Vec::new(); bin_count];
    for (k, &b) in s.best.iter().enumerate() {
        bins[b].push(values[order[k]].clone());
    }
    Ok(MultiplicityAssignment::from_bins(bins))
}

/// Layout whose sensitive bins are balanced by tuple count, padded so every
/// sensitive bin returns the same number of tuples. `counts` gives the
/// sensitive tuples per value. When the sensitive side is the larger one
/// the rows are the non-sensitive values and only padding applies.
pub fn create_bins_multiplicity(
    input: &BinInput,
    counts: &HashMap<String, u64>,
    perm: Permutation,
    exact: bool,
) -> Result<MultiplicityLayout> {
    let o = Oriented::new(input);
    let (x, y) = approx_sq_factors(o.cols.len())?;
    let count = |v: &str| counts.get(v).copied().unwrap_or(0);
    let mut next_fake = 0u32;
    let row_bins: Vec<Vec<Slot>> = if o.row_side == Side::Sensitive {
        let mut vals: Vec<(String, u64)> = o.rows.iter().map(|v| (v.clone(), count(v))).collect();
        perm.apply(&mut vals);
        let a = if exact {
            assign_multiplicity_exact(&vals, x, y)?
        } else {
            assign_multiplicity(&vals, x, y)?
        };
        a.bins
            .into_iter()
            .map(|b| {
                if b.is_empty() {
                    next_fake += 1;
                    vec![Slot::Fake(next_fake - 1)]
                } else {
                    b.into_iter().map(|(v, _)| Slot::Value(v)).collect()
                }
            })
            .collect()
    } else {
        let mut rows: Vec<Slot> = o.rows.iter().cloned().map(Slot::Value).collect();
        perm.apply(&mut rows);
        while rows.len() < x {
            rows.push(Slot::Fake(next_fake));
            next_fake += 1;
        }
        round_robin(rows, x)
    };
    let (rows, cols) = fill_cols(&row_bins, &o.cols, &o.row_to_col, y, x);
    let mut layout = BinLayout::from_parts(
        &input.attribute,
        BinMode::Multiplicity,
        o.row_side,
        x,
        y,
        perm.seed(),
        rows,
        cols,
        next_fake,
    );
    let fake_tuples_added = layout.pad_uniform(count);
    let per_bin_tuple_totals = layout.sensitive_bin_totals(count);
    Ok(MultiplicityLayout {
        layout,
        per_bin_tuple_totals,
        fake_tuples_added,
    })
}
