mod common;

use common::*;
use proptest::prelude::*;
use stheat::matvec::{FormKind, TimeForm};
use stheat::time_bases::{hat_dual, hat_node, Family, Scaling, TimeIndex};

const FAMILIES: [Family; 3] = [Family::ThreePoint, Family::Ortho, Family::Hat];

#[test]
fn ortho_gram_is_identity() {
    let keys = all_keys(Family::Ortho, 6);
    let g = dense_matrix(TimeForm::new(FormKind::Mass, Family::Ortho, Family::Ortho), &keys, &keys);
    for (i, row) in g.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let want = if i == j { 1.0 } else { 0.0 };
            assert!((v - want).abs() < 1e-12, "({i},{j}) = {v}");
        }
    }
}

#[test]
fn ortho_level_one_values_up_to_normalisation() {
    // Unnormalised values: sqrt6 / -sqrt6 / sqrt6 and sqrt2 -> -2sqrt2, 2sqrt2 -> -sqrt2.
    let s = 1.0 / 2f64.sqrt();
    let f = |n, t| Family::Ortho.evaluate(TimeIndex::new(1, n), t).unwrap();
    let six = 6f64.sqrt();
    let two = 2f64.sqrt();
    assert!((f(1, 0.0) - s * six).abs() < 1e-14);
    assert!((f(1, 0.5) + s * six).abs() < 1e-14);
    assert!((f(0, 0.0) - s * two).abs() < 1e-14);
    assert!((f(0, 0.5) - s * 2.0 * two).abs() < 1e-14);
    assert!((f(0, 1.0) + s * two).abs() < 1e-14);
}

#[test]
fn refinement_identities_hold() {
    for fam in FAMILIES {
        let sc = fam.scaling();
        for l in 1..=6u32 {
            let m = 1u64 << l;
            let pts: Vec<f64> = (0..=m).map(|k| k as f64 / m as f64).collect();
            for n in 0..sc.count(l - 1) {
                let mask = sc.refine_mask(l, n);
                for &t in &pts {
                    let direct = sc.eval(l - 1, n, t);
                    let rebuilt: f64 = mask.entries().iter().map(|&(p, c)| c * sc.eval(l, p, t)).sum();
                    assert!((direct - rebuilt).abs() < 1e-13, "{fam:?} phi({},{n}) at {t}", l - 1);
                }
            }
            for n in 0..fam.count(l) {
                let mask = fam.mask(TimeIndex::new(l, n)).unwrap();
                for &t in &pts {
                    let direct = fam.evaluate(TimeIndex::new(l, n), t).unwrap();
                    let rebuilt: f64 = mask.entries().iter().map(|&(p, c)| c * sc.eval(l, p, t)).sum();
                    assert!((direct - rebuilt).abs() < 1e-13);
                }
            }
        }
    }
}

#[test]
fn masks_have_at_most_four_entries() {
    for fam in FAMILIES {
        for l in 0..=10u32 {
            for n in 0..fam.count(l) {
                assert!(fam.mask(TimeIndex::new(l, n)).unwrap().len() <= 4);
            }
            if l > 0 {
                for n in 0..fam.scaling().count(l - 1) {
                    assert!(fam.scaling().refine_mask(l, n).len() <= 4);
                }
            }
        }
    }
}

#[test]
fn hat_duals_are_biorthogonal() {
    let keys = all_keys(Family::Hat, 5);
    for &a in &keys {
        for &b in &keys {
            let ib = TimeIndex::from_key(b);
            let v = hat_dual(TimeIndex::from_key(a), |t| Family::Hat.evaluate(ib, t).unwrap());
            let want = if a == b { 1.0 } else { 0.0 };
            assert!((v - want).abs() < 1e-14);
        }
    }
    assert_eq!(hat_node(TimeIndex::new(2, 1)), 0.75);
}

#[test]
fn threepoint_gram_condition_stays_bounded() {
    let form = TimeForm::new(FormKind::Mass, Family::ThreePoint, Family::ThreePoint);
    let mut conds = Vec::new();
    for l in 4..=8 {
        let keys = all_keys(Family::ThreePoint, l);
        let ev = sym_eigenvalues(dense_matrix(form, &keys, &keys));
        conds.push(ev[ev.len() - 1] / ev[0]);
    }
    println!("three-point L2 Gram condition numbers, levels 4..8: {conds:?}");
    for w in conds.windows(2) {
        assert!(w[1] <= w[0] * 1.05 + 0.5, "{conds:?}");
    }
}

#[test]
fn scaling_counts() {
    assert_eq!(Scaling::Nodal.count(3), 9);
    assert_eq!(Scaling::Dg.count(3), 16);
    assert_eq!(Family::Ortho.count(2), 4);
    assert_eq!(Family::ThreePoint.count(3), 4);
}

fn index(fam: Family) -> impl Strategy<Value = TimeIndex> {
    (0u32..12).prop_flat_map(move |l| (Just(l), 0..fam.count(l))).prop_map(|(l, n)| TimeIndex::new(l, n))
}

proptest! {
    #[test]
    fn wavelets_vanish_off_support(i in index(Family::ThreePoint), t in 0.0f64..=1.0) {
        for fam in FAMILIES {
            if !fam.is_valid(i) { continue; }
            let s = fam.support(i);
            if t < s.left() || t > s.right() {
                prop_assert_eq!(fam.evaluate(i, t).unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn parent_links_are_mutual(i in index(Family::Ortho)) {
        for fam in FAMILIES {
            if !fam.is_valid(i) { continue; }
            for p in fam.parents(i) {
                prop_assert!(fam.children(p).contains(&i));
                prop_assert!(fam.support(p).overlaps(fam.support(i)));
            }
            for c in fam.children(i) {
                prop_assert!(fam.parents(c).contains(&i));
            }
        }
    }

    #[test]
    fn keys_round_trip(l in 0u32..40, n in 0u64..1u64 << 40) {
        let i = TimeIndex::new(l, n);
        prop_assert_eq!(TimeIndex::from_key(i.key()), i);
    }
}
