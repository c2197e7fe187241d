use std::collections::BTreeSet;

use ohmstat_core::lattice::{shift_edge, BoxDomain, EdgeKey};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Every (x, i) with x or x + e_i in [0, L)^d, by scanning [-1, L)^d.
fn brute_edges(d: usize, l: usize) -> BTreeSet<EdgeKey> {
    let w = l + 1;
    let mut out = BTreeSet::new();
    for code in 0..w.pow(d as u32) {
        let x: Vec<i64> = (0..d).map(|j| (code / w.pow((d - 1 - j) as u32) % w) as i64 - 1).collect();
        let inside = |p: &[i64]| p.iter().all(|&c| c >= 0 && c < l as i64);
        for i in 0..d {
            let e = EdgeKey::new(x.clone(), i);
            if inside(&x) || inside(&e.head()) {
                out.insert(e);
            }
        }
    }
    out
}

#[test]
fn edge_sets_match_brute_force() {
    for d in 1..=3 {
        for l in 1..=16usize {
            if d == 3 && l > 10 {
                continue;
            }
            let dom = BoxDomain::new(d, l).unwrap();
            let brute = brute_edges(d, l);
            assert_eq!(dom.n_edges(), d * (l + 1) * l.pow(d as u32 - 1));
            assert_eq!(dom.edges().len(), brute.len());
            assert!(dom.edges().iter().cloned().eq(brute.into_iter()), "d={d} L={l}");
        }
    }
}

#[test]
fn boundary_vertices_touch_the_box() {
    for (d, l) in [(1usize, 2usize), (2, 2), (2, 7), (3, 4)] {
        let dom = BoxDomain::new(d, l).unwrap();
        assert_eq!(dom.n_boundary(), 2 * d * l.pow(d as u32 - 1));
        for v in dom.volume()..dom.n_vertices() {
            let p = dom.point(v);
            assert!(!dom.contains(p));
            let touches = (0..dom.n_edges()).any(|k| {
                let (a, b) = dom.edge_ends(k);
                (a == v && b < dom.volume()) || (b == v && a < dom.volume())
            });
            assert!(touches, "{p:?}");
        }
    }
}

#[test]
fn shifts_preserve_the_order_on_random_triples() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..10_000 {
        let d = rng.gen_range(1..=4);
        let mut edge = || {
            EdgeKey::new(
                (0..d).map(|_| rng.gen_range(-5i64..5)).collect::<Vec<_>>(),
                rng.gen_range(0..d),
            )
        };
        let (mut a, mut b) = (edge(), edge());
        if b < a {
            std::mem::swap(&mut a, &mut b);
        }
        let z: Vec<i64> = (0..d).map(|_| rng.gen_range(-100i64..100)).collect();
        assert!(shift_edge(&a, &z) <= shift_edge(&b, &z));
        assert_eq!(shift_edge(&a, &z) == shift_edge(&b, &z), a == b);
    }
}

proptest! {
    #[test]
    fn shift_is_an_order_isomorphism(
        x in prop::collection::vec(-20i64..20, 3),
        y in prop::collection::vec(-20i64..20, 3),
        z in prop::collection::vec(-1000i64..1000, 3),
        i in 0usize..3,
        j in 0usize..3,
    ) {
        let (a, b) = (EdgeKey::new(x, i), EdgeKey::new(y, j));
        prop_assert_eq!(a.cmp(&b), shift_edge(&a, &z).cmp(&shift_edge(&b, &z)));
        let back: Vec<i64> = z.iter().map(|c| -c).collect();
        prop_assert_eq!(shift_edge(&shift_edge(&a, &z), &back), a);
    }

    #[test]
    fn edge_index_inverts_enumeration(d in 1usize..4, l in 1usize..7) {
        let dom = BoxDomain::new(d, l).unwrap();
        for (k, e) in dom.edges().iter().enumerate() {
            prop_assert_eq!(dom.edge_index(e), Some(k));
        }
        prop_assert!(dom.edges().windows(2).all(|w| w[0] < w[1]));
    }
}
