mod support;

use panda_core::cloudstore::{Owner, OwnerKey};
use panda_core::join::{build_join_relations, execute_join, outsource_join, JoinMode, JoinOrigin, JoinedRow};
use panda_core::partitioner::{partition_relation, PartitionedRelation, TupleRecord};
use panda_core::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use support::{oracle_join, random_fk_instance};

fn run(
    r: &PartitionedRelation,
    s: &PartitionedRelation,
    pk: &str,
    ck: &str,
    mode: JoinMode,
    sel: Option<&str>,
) -> Vec<JoinedRow> {
    let p = build_join_relations(r, s, pk, ck, mode).unwrap();
    let mut owner = Owner::new(OwnerKey::from_master([3; 32]));
    let mut store = owner.create_store().unwrap();
    let tables = outsource_join(&mut owner, &mut store, &p).unwrap();
    execute_join(&tables, &store, &owner, sel).unwrap()
}

fn triples(rows: &[JoinedRow]) -> Vec<(String, String, String)> {
    rows.iter()
        .map(|r| (r.key.clone(), r.parent.tuple_id.clone(), r.child.tuple_id.clone()))
        .collect()
}

/// Any pair of relations: repeated parent keys, any sensitivity mix.
fn random_general_instance(rng: &mut ChaCha20Rng) -> (PartitionedRelation, PartitionedRelation) {
    let keys = rng.gen_range(1..=6);
    let r_rows = (0..rng.gen_range(1..=15))
        .map(|i| {
            TupleRecord::new(
                format!("r{i}"),
                &[("id", &format!("K{}", rng.gen_range(0..keys))), ("v", "x")],
                rng.gen_bool(0.4),
            )
        })
        .collect();
    let s_rows = (0..rng.gen_range(1..=20))
        .map(|i| {
            TupleRecord::new(
                format!("c{i}"),
                &[("fk", &format!("K{}", rng.gen_range(0..keys + 1))), ("w", "y")],
                rng.gen_bool(0.4),
            )
        })
        .collect();
    (
        partition_relation("R", r_rows, "id").unwrap(),
        partition_relation("S", s_rows, "fk").unwrap(),
    )
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn foreign_key_join_matches_direct_join(seed in any::<u64>()) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let (r, s) = random_fk_instance(&mut rng);
        let got = run(&r, &s, "id", "fk", JoinMode::ForeignKey, None);
        prop_assert_eq!(triples(&got), oracle_join(&r, &s, "id", "fk"));
        // a pair with a sensitive side is only ever answered from ciphertext
        for row in &got {
            let enc = r.sensitive.iter().any(|t| t.tuple_id == row.parent.tuple_id)
                || s.sensitive.iter().any(|t| t.tuple_id == row.child.tuple_id);
            prop_assert_eq!(row.origin == JoinOrigin::Encrypted, enc);
            prop_assert!(row.parent.get("__pseudo").is_none() && row.child.get("__pseudo").is_none());
        }
        let k = format!("K{}", rng.gen_range(0..20));
        let want: Vec<_> = oracle_join(&r, &s, "id", "fk").into_iter().filter(|t| t.0 == k).collect();
        prop_assert_eq!(triples(&run(&r, &s, "id", "fk", JoinMode::ForeignKey, Some(&k))), want);
    }

    #[test]
    fn general_join_matches_direct_join(seed in any::<u64>()) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let (r, s) = random_general_instance(&mut rng);
        let got = run(&r, &s, "id", "fk", JoinMode::General, None);
        prop_assert_eq!(triples(&got), oracle_join(&r, &s, "id", "fk"));
    }
}

#[test]
fn foreign_key_mode_rejects_crossing_keys() {
    let r = partition_relation(
        "R",
        vec![TupleRecord::new("r1", &[("id", "K"), ("v", "x")], true)],
        "id",
    )
    .unwrap();
    let s = partition_relation(
        "S",
        vec![TupleRecord::new("c1", &[("fk", "K"), ("w", "y")], false)],
        "fk",
    )
    .unwrap();
    assert!(matches!(
        build_join_relations(&r, &s, "id", "fk", JoinMode::ForeignKey),
        Err(Error::Constraint(_))
    ));
    assert_eq!(
        triples(&run(&r, &s, "id", "fk", JoinMode::General, None)),
        oracle_join(&r, &s, "id", "fk")
    );
}
