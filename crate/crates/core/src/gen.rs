//! Synthetic TPC-H-shaped `Orders` and `LineItem` relations.
//!
//! A chosen fraction of orders is sensitive and every line item of a
//! sensitive order is sensitive too, so the two relations satisfy the
//! parent/child constraint needed for joins on the order key.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::partitioner::{partition_relation, PartitionedRelation, TupleRecord};

pub const ORDER_SCHEMA: [&str; 5] = [
    "o_orderkey",
    "o_custkey",
    "o_orderstatus",
    "o_totalprice",
    "o_orderdate",
];
pub const LINEITEM_SCHEMA: [&str; 8] = [
    "l_orderkey",
    "l_partkey",
    "l_suppkey",
    "l_linenumber",
    "l_quantity",
    "l_extendedprice",
    "l_discount",
    "l_shipdate",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    /// Target number of line items; orders are generated until reached.
    pub lineitems: usize,
    /// Percentage of sensitive orders, `0..=100`.
    pub sensitivity_pct: f64,
    pub suppliers: u64,
    pub parts: u64,
    pub customers: u64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            lineitems: 10_000,
            sensitivity_pct: 20.0,
            suppliers: 1_000,
            parts: 20_000,
            customers: 1_500,
            seed: 1,
        }
    }
}

pub struct Generated {
    pub orders: PartitionedRelation,
    pub lineitem: PartitionedRelation,
}

fn date(rng: &mut ChaCha20Rng) -> String {
    format!(
        "{}-{:02}-{:02}",
        rng.gen_range(1992..=1998),
        rng.gen_range(1..=12),
        rng.gen_range(1..=28)
    )
}

pub fn generate(cfg: &GenConfig) -> Result<Generated> {
    if !(0.0..=100.0).contains(&cfg.sensitivity_pct) {
        return Err(Error::Config(format!(
            "sensitivity {}% outside 0..=100",
            cfg.sensitivity_pct
        )));
    }
    if cfg.suppliers == 0 || cfg.parts == 0 || cfg.customers == 0 {
        return Err(Error::Config(
            "supplier, part and customer counts must be positive".into(),
        ));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut sizes = Vec::new();
    let mut total = 0;
    while total < cfg.lineitems {
        let n = rng.gen_range(1..=7).min(cfg.lineitems - total);
        sizes.push(n);
        total += n;
    }
    let mut sensitive = vec![false; sizes.len()];
    let k = ((sizes.len() as f64) * cfg.sensitivity_pct / 100.0).round() as usize;
    let mut idx: Vec<usize> = (0..sizes.len()).collect();
    idx.shuffle(&mut rng);
    for &i in &idx[..k] {
        sensitive[i] = true;
    }

    let mut orders = Vec::with_capacity(sizes.len());
    let mut lines = Vec::with_capacity(total);
    for (o, &n) in sizes.iter().enumerate() {
        let okey = (o + 1).to_string();
        let mut price = 0.0;
        for l in 1..=n {
            let qty: u32 = rng.gen_range(1..=50);
            let ext = f64::from(qty) * rng.gen_range(900.0..2_000.0);
            price += ext;
            lines.push(TupleRecord::new(
                format!("L{okey}-{l}"),
                &[
                    ("l_orderkey", &okey),
                    ("l_partkey", &rng.gen_range(1..=cfg.parts).to_string()),
                    ("l_suppkey", &rng.gen_range(1..=cfg.suppliers).to_string()),
                    ("l_linenumber", &l.to_string()),
                    ("l_quantity", &qty.to_string()),
                    ("l_extendedprice", &format!("{ext:.2}")),
                    ("l_discount", &format!("0.{:02}", rng.gen_range(0..=10))),
                    ("l_shipdate", &date(&mut rng)),
                ],
                sensitive[o],
            ));
        }
        orders.push(TupleRecord::new(
            format!("O{okey}"),
            &[
                ("o_orderkey", &okey),
                ("o_custkey", &rng.gen_range(1..=cfg.customers).to_string()),
                ("o_orderstatus", ["F", "O", "P"][rng.gen_range(0..3)]),
                ("o_totalprice", &format!("{price:.2}")),
                ("o_orderdate", &date(&mut rng)),
            ],
            sensitive[o],
        ));
    }
    Ok(Generated {
        orders: partition_relation("Orders", orders, "o_orderkey")?,
        lineitem: partition_relation("LineItem", lines, "l_suppkey")?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn sizes_and_sensitivity() {
        let g = generate(&GenConfig {
            lineitems: 5_000,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(g.lineitem.len(), 5_000);
        let orders = g.orders.len() as f64;
        let frac = g.orders.sensitive.len() as f64 / orders;
        assert!((frac - 0.2).abs() < 0.5 / orders + 1e-9);
        let sens: HashSet<&str> = g
            .orders
            .sensitive
            .iter()
            .map(|r| r.get("o_orderkey").unwrap())
            .collect();
        for l in g.lineitem.all() {
            assert_eq!(l.sensitive, sens.contains(l.get("l_orderkey").unwrap()));
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate(&GenConfig {
            lineitems: 300,
            ..Default::default()
        })
        .unwrap();
        let b = generate(&GenConfig {
            lineitems: 300,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(a.lineitem.sensitive, b.lineitem.sensitive);
        assert!(generate(&GenConfig {
            sensitivity_pct: 120.0,
            ..Default::default()
        })
        .is_err());
    }
}
