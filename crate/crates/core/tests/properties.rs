use approx::assert_relative_eq;
use dyadic_t1::carleson::{
    build_stopping_tree, cet2_testing_constant, embedding_sharp_constant, single_term_constant,
};
use dyadic_t1::certify::testing_local;
use dyadic_t1::suite::suite_sequence;
use dyadic_t1::{
    generate_weight, BandOperator, CarlesonInstance, DyadicInterval, HaarSystem, TreeConfig,
    WeightGrid, WeightKind, WeightedFunction,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn interval() -> impl Strategy<Value = DyadicInterval> {
    (0u32..12).prop_flat_map(|level| {
        (Just(level), 0..(1u64 << level)).prop_map(|(l, k)| DyadicInterval::new(l, k).unwrap())
    })
}

fn weight_kind() -> impl Strategy<Value = WeightKind> {
    prop_oneof![
        (1.0f64..30.0, 0.0f64..1.0).prop_map(|(eccentricity, angle_scale)| WeightKind::RandomA2 {
            eccentricity,
            angle_scale
        }),
        (-0.9f64..2.0, 0.0f64..1.0)
            .prop_map(|(exponent, center)| WeightKind::ScalarPower { exponent, center }),
    ]
}

fn weight(max_depth: u32) -> impl Strategy<Value = WeightGrid> {
    (weight_kind(), 1usize..=3, 1u32..=max_depth, any::<u64>())
        .prop_map(|(kind, d, depth, seed)| generate_weight(&kind, d, depth, seed).unwrap())
}

proptest! {
    #[test]
    fn node_ids_round_trip(i in interval()) {
        prop_assert_eq!(DyadicInterval::from_node_id(i.node_id()), i);
    }

    #[test]
    fn halves_partition_the_parent(i in interval()) {
        let (l, r) = i.halves();
        prop_assert_eq!(l.parent(), Some(i));
        prop_assert_eq!(r.parent(), Some(i));
        prop_assert!(i.contains(&l) && i.contains(&r));
        prop_assert!(!l.contains(&r) && !r.contains(&l));
        prop_assert_eq!(l.measure() + r.measure(), i.measure());
    }

    #[test]
    fn containment_matches_ancestry(i in interval(), j in interval()) {
        let by_ancestor = j.level >= i.level && j.ancestor(j.level - i.level).unwrap() == i;
        prop_assert_eq!(i.contains(&j), by_ancestor);
        prop_assert_eq!(i.tree_distance(&j), j.tree_distance(&i));
    }

    #[test]
    fn leaf_ranges_tile(depth in 1u32..8) {
        let tree = TreeConfig::new(depth).unwrap();
        for level in 0..=depth {
            let mut next = 0;
            for i in tree.level(level) {
                let range = i.leaf_range(depth);
                prop_assert_eq!(range.start, next);
                next = range.end;
            }
            prop_assert_eq!(next, tree.leaf_count());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn haar_system_is_orthonormal_and_complete(w in weight(4), seed in any::<u64>()) {
        let sys = HaarSystem::build(&w).unwrap();
        let n = sys.len();
        prop_assert!((sys.gram() - DMatrix::identity(n, n)).amax() <= 1e-9);
        let mut state = seed;
        let values = DVector::from_fn(n, |_, _| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        });
        let f = WeightedFunction::from_flat(w.d(), w.depth(), values).unwrap();
        let c = sys.analyze(&f).unwrap();
        let back = sys.synthesize(&c).unwrap();
        prop_assert!((back.values() - f.values()).amax() <= 1e-10 * f.values().amax().max(1.0));
        assert_relative_eq!(c.values.norm_squared(), f.norm_sq(&w).unwrap(), max_relative = 1e-9);
        prop_assert!(sys.haar_bound_certificate() <= (w.d() as f64).sqrt() + 1e-9);
    }

    #[test]
    fn a2_is_scale_and_inversion_invariant(w in weight(5), c in 0.01f64..100.0) {
        let a2 = w.a2_characteristic().unwrap();
        prop_assert!(a2 >= 1.0);
        assert_relative_eq!(w.scaled(c).unwrap().a2_characteristic().unwrap(), a2, max_relative = 1e-9);
        assert_relative_eq!(w.inverse().unwrap().a2_characteristic().unwrap(), a2, max_relative = 1e-9);
    }

    #[test]
    fn weight_json_is_bit_exact(w in weight(4)) {
        let back = WeightGrid::from_json(&w.to_json()).unwrap();
        prop_assert_eq!(back.leaves(), w.leaves());
        prop_assert_eq!(back.to_json(), w.to_json());
    }

    #[test]
    fn band_operators_are_well_localized(
        w in weight(4),
        r in 0u32..3,
        density in 0.1f64..1.0,
        seed in any::<u64>(),
        v_seed in any::<u64>(),
    ) {
        let v = generate_weight(
            &WeightKind::RandomA2 { eccentricity: 6.0, angle_scale: 1.0 },
            w.d(),
            w.depth(),
            v_seed,
        ).unwrap();
        let t = BandOperator::random_band(w.d(), w.depth(), r, density, seed).unwrap();
        prop_assert!(t.is_band(r));
        let report = t.is_well_localized(&w, &v, r).unwrap();
        prop_assert!(report.passed, "{:?}", report);
        prop_assert_eq!(&t.transpose().transpose(), &t);
        let tt = BandOperator::from_json(&t.to_json()).unwrap();
        prop_assert_eq!(&tt, &t);
        let (a1_local, a2_local) = testing_local(&t, &w, &v).unwrap();
        let norm = t.operator_norm(&w, &v).unwrap();
        prop_assert!(a1_local <= norm * (1.0 + 1e-9) + 1e-12);
        prop_assert!(a2_local <= norm * (1.0 + 1e-9) + 1e-12);
    }

    #[test]
    fn embedding_is_homogeneous_and_dominates_single_terms(
        w in weight(4),
        seed in any::<u64>(),
        t in 0.0f64..50.0,
    ) {
        let seq = suite_sequence(&w, seed).unwrap();
        let sharp = embedding_sharp_constant(&seq, &w).unwrap();
        let c2 = cet2_testing_constant(&seq, &w).unwrap();
        let scaled = seq.scaled(t).unwrap();
        let tol = 1e-10 * (t * sharp).max(1.0);
        prop_assert!((embedding_sharp_constant(&scaled, &w).unwrap() - t * sharp).abs() <= tol);
        prop_assert!((cet2_testing_constant(&scaled, &w).unwrap() - t * c2).abs() <= 1e-10 * (t * c2).max(1.0));
        for i in w.tree().intervals() {
            prop_assert!(single_term_constant(&seq, &w, &i).unwrap() <= sharp * (1.0 + 1e-9) + 1e-12);
        }
    }

    #[test]
    fn stopping_generations_are_nested_antichains(w in weight(6), m in 1.5f64..20.0) {
        let lambda = m * w.d() as f64;
        let tree = build_stopping_tree(&w, &DyadicInterval::ROOT, lambda).unwrap();
        prop_assert_eq!(&tree.generations[0], &vec![DyadicInterval::ROOT]);
        for (k, generation) in tree.generations.iter().enumerate() {
            for (a, i) in generation.iter().enumerate() {
                for j in &generation[a + 1..] {
                    prop_assert!(!i.contains(j) && !j.contains(i));
                }
                if k > 0 {
                    let parents = tree.generations[k - 1]
                        .iter()
                        .filter(|p| p.contains(i) && *p != i)
                        .count();
                    prop_assert_eq!(parents, 1);
                }
            }
            let total: f64 = generation.iter().map(|i| i.measure()).sum();
            prop_assert_eq!(total, tree.measures[k]);
        }
        prop_assert!(tree.measures.windows(2).all(|p| p[1] <= p[0]));
    }
}

#[test]
fn carleson_rejects_indefinite_terms() {
    let mut bad = DMatrix::identity(2, 2);
    bad[(1, 1)] = -1.0;
    assert!(CarlesonInstance::new(2, 2, vec![(DyadicInterval::ROOT, bad)]).is_err());
}
