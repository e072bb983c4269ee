mod support;

use std::collections::BTreeSet;

use panda_core::binning::{
    approx_sq_factors, associate, create_bins, create_bins_base, BinInput, BinMode, Permutation, Side, WorkloadProfile,
};
use proptest::prelude::*;
use rand::SeedableRng;
use support::{deploy, selection_mismatch, Spec};

fn spec_strategy(max_values: usize) -> impl Strategy<Value = Spec> {
    prop::collection::vec((0u8..3, 1u32..=50, 1u32..=50), 1..=max_values).prop_map(|vs| {
        vs.into_iter()
            .enumerate()
            .map(|(i, (kind, s, ns))| match kind {
                0 => (format!("{i}"), s, 0),
                1 => (format!("{i}"), 0, ns),
                _ => (format!("{i}"), s, ns),
            })
            .collect()
    })
}

fn mode_strategy() -> impl Strategy<Value = BinMode> {
    prop_oneof![
        Just(BinMode::Base),
        Just(BinMode::Extended),
        Just(BinMode::Workload),
        Just(BinMode::Multiplicity),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, ..ProptestConfig::default() })]

    #[test]
    fn binned_selection_matches_direct_selection(spec in spec_strategy(40), mode in mode_strategy(), seed in any::<u64>()) {
        let frequent = if mode == BinMode::Workload {
            let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
            support::frequent_subset(&mut rng, &spec)
        } else {
            Vec::new()
        };
        let d = deploy(&spec, mode, seed, frequent);
        d.layout.validate().unwrap();
        prop_assert_eq!(selection_mismatch(&d), None);
    }

    #[test]
    fn layout_laws(ns in 1usize..=64, s_frac in 0.0f64..=1.0, assoc_frac in 0.0f64..=1.0, seed in any::<u64>()) {
        let s_count = ((ns as f64) * s_frac).round() as usize;
        let linked = ((s_count as f64) * assoc_frac) as usize;
        // linked values share a name; the rest are distinct per side
        let sens: Vec<String> = (0..s_count).map(|i| if i < linked { format!("v{i}") } else { format!("s{i}") }).collect();
        let clear: Vec<String> = (0..ns).map(|i| format!("v{i}")).collect();
        let input = BinInput::new(
            "k",
            sens.clone(),
            clear.clone(),
            associate((0..linked).map(|i| (format!("v{i}"), format!("v{i}")))),
        ).unwrap();
        let l = create_bins_base(&input, Permutation::Seeded(seed)).unwrap();
        l.validate().unwrap();
        let (x, y) = approx_sq_factors(ns.max(s_count)).unwrap();
        let (rows, cols) = (l.row_side, l.row_side.other());

        // factor and capacity laws
        prop_assert_eq!((l.x, l.y), (x, y));
        prop_assert_eq!(l.bin_count(rows), x);
        prop_assert!(l.bins(rows).iter().all(|b| b.len() <= y));
        prop_assert!(l.bin_count(cols) <= y);
        prop_assert!(l.bins(cols).iter().all(|b| b.len() <= x));

        // coverage law
        let got_s: Vec<&str> = l.values(Side::Sensitive).collect();
        let got_ns: Vec<&str> = l.values(Side::NonSensitive).collect();
        prop_assert_eq!(got_s.len(), sens.len());
        prop_assert_eq!(got_ns.len(), clear.len());
        prop_assert_eq!(got_s.iter().copied().collect::<BTreeSet<_>>(), sens.iter().map(String::as_str).collect());
        prop_assert_eq!(got_ns.iter().copied().collect::<BTreeSet<_>>(), clear.iter().map(String::as_str).collect());

        // placement law: row[i][j] <-> col[j][i]
        for i in 0..linked {
            let v = format!("v{i}");
            let (a, j) = l.position(rows, &v).unwrap();
            prop_assert_eq!(l.position(cols, &v), Some((j, a)));
        }

        // R1/R2 agreement and determinism
        for v in &clear {
            let p = l.locate(v).unwrap().unwrap();
            if let Some((b, _)) = l.position(Side::Sensitive, v) {
                prop_assert_eq!(b, p.sensitive);
            }
            prop_assert_eq!(l.position(Side::NonSensitive, v).unwrap().0, p.nonsensitive);
        }
        prop_assert_eq!(create_bins_base(&input, Permutation::Seeded(seed)).unwrap(), l);
    }

    #[test]
    fn square_instances_fetch_x_plus_y(n in 1usize..=64, seed in any::<u64>()) {
        let spec: Spec = (0..n).map(|i| (format!("{i}"), 1, 1)).collect();
        let d = deploy(&spec, BinMode::Base, seed, Vec::new());
        let (x, y) = approx_sq_factors(n).unwrap();
        for i in 0..n {
            let r = panda_core::retrieval::select(&d.owner, &d.store, "R", &d.layout, &i.to_string()).unwrap();
            prop_assert_eq!((r.fetched_sensitive, r.fetched_nonsensitive), (y, x));
            prop_assert_eq!(r.tuples.len(), 2);
        }
    }
}

#[test]
fn workload_groups_spread_over_all_sensitive_bins() {
    for seed in 0..20u64 {
        let spec: Spec = (0..36).map(|i| (format!("{i:02}"), 1, 1)).collect();
        let rel = support::relation("R", &spec);
        let frequent: Vec<String> = (0..6).map(|i| format!("{:02}", i * 5)).collect();
        let l = create_bins(
            &rel.histogram().unwrap(),
            BinMode::Workload,
            Permutation::Seeded(seed),
            &WorkloadProfile::new(frequent.clone()),
            false,
        )
        .unwrap();
        let sbs: BTreeSet<usize> = frequent
            .iter()
            .map(|v| l.locate(v).unwrap().unwrap().sensitive)
            .collect();
        assert_eq!(sbs.len(), l.bin_count(Side::Sensitive));
    }
}
