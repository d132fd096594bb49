use std::sync::OnceLock;

use lccbound::chain_xor::{chain_mass_dp, LinkLists};
use lccbound::chains::{chain_valid, count_chains, enumerate_with, sample_chain, verify_chain_completeness, Chain, ChainOpts, Completeness, LinkTable};
use lccbound::decoder::synthetic_collection;
use lccbound::design::{build_rm_design, derive_matchings, DesignLcc, MatchingFamily};
use lccbound::design_kikuchi::binest_ratio;
use lccbound::gf2::{BitMatrix, BitVec};
use lccbound::gf4::F4;
use lccbound::rational::{self, Q};
use lccbound::subsets::Binomials;
use num_bigint::BigInt;
use num_traits::One;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn t3() -> &'static (DesignLcc, MatchingFamily, LinkTable) {
    static D: OnceLock<(DesignLcc, MatchingFamily, LinkTable)> = OnceLock::new();
    D.get_or_init(|| {
        let lcc = build_rm_design(3, 1 << 12).unwrap();
        let m = derive_matchings(&lcc).unwrap();
        let lt = LinkTable::new(&m);
        (lcc, m, lt)
    })
}

fn f4() -> impl Strategy<Value = F4> {
    (0..4usize).prop_map(F4::from_index)
}

/// `t ≤ r ≤ ℓ ≤ n/4`, `ℓ² ≤ 4n`.
fn admissible() -> impl Strategy<Value = (usize, usize, usize, usize)> {
    (16..1025usize)
        .prop_flat_map(|n| (Just(n), 1..=(n / 4).min((4.0 * n as f64).sqrt() as usize)))
        .prop_flat_map(|(n, ell)| (Just(n), Just(ell), 1..=ell))
        .prop_flat_map(|(n, ell, r)| (Just(n), Just(ell), Just(r), 0..=r))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn f4_field(a in f4(), b in f4(), c in f4()) {
        prop_assert_eq!((a * b) * c, a * (b * c));
        prop_assert_eq!(a * (b + c), a * b + a * c);
        prop_assert_eq!(a + a, F4::ZERO);
        prop_assert_eq!((a + b).trace(), a.trace() ^ b.trace());
        if let Some(i) = a.inv() {
            prop_assert_eq!(a * i, F4::ONE);
        } else {
            prop_assert!(a.is_zero());
        }
    }

    #[test]
    fn gf2_rank_nullity(rows in 1..12usize, cols in 1..70usize, seed in any::<u64>()) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<BitVec> = (0..rows).map(|_| {
            let bits: Vec<u8> = (0..cols).map(|_| rng.random_range(0..2)).collect();
            BitVec::from_bits(&bits)
        }).collect();
        let m = BitMatrix::from_rows(cols, data).unwrap();
        let (rank, null) = m.rank_and_nullspace();
        prop_assert_eq!(rank, m.transpose().rank());
        prop_assert_eq!(rank + null.len(), cols);
        for v in &null {
            prop_assert!(m.mul_vec(v).is_zero());
        }
    }

    #[test]
    fn hex_roundtrip(bits in prop::collection::vec(0..2u8, 1..200)) {
        let v = BitVec::from_bits(&bits);
        prop_assert_eq!(BitVec::from_hex(&v.to_hex(), bits.len()).unwrap(), v);
    }

    #[test]
    fn colex_roundtrip(n in 1..40usize, k in 0..8usize, seed in any::<u64>()) {
        let k = k.min(n);
        let b = Binomials::new(64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = lccbound::subsets::random_subset(&mut rng, n, k);
        prop_assert_eq!(s.count_ones() as usize, k);
        prop_assert!(b.rank(s) < b.get(n, k).max(1));
        prop_assert_eq!(b.unrank(b.rank(s), k), s);
    }

    #[test]
    fn rational_text(n in -10_000i64..10_000, d in 1i64..10_000) {
        let x = rational::q(n, d);
        prop_assert_eq!(rational::parse(&rational::format(&x)).unwrap(), x);
    }

    #[test]
    fn pair_in_one_block(u in 0..64usize, v in 0..64usize) {
        prop_assume!(u != v);
        let (lcc, _, _) = t3();
        let hits = lcc.design.blocks.iter().filter(|b| b.contains(&u) && b.contains(&v)).count();
        prop_assert_eq!(hits, 1);
    }

    #[test]
    fn matching_partitions_rest(u in 0..64usize) {
        let (_, m, _) = t3();
        let mut seen = vec![0; 64];
        for tri in &m.h[u] {
            for &v in tri {
                seen[v] += 1;
            }
        }
        for (v, &c) in seen.iter().enumerate() {
            prop_assert_eq!(c, usize::from(v != u));
        }
    }

    #[test]
    fn sampled_chain_complete(u in 0..64usize, r in 1..4usize, seed in any::<u64>()) {
        let (lcc, m, lt) = t3();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = sample_chain(lt, u, r, true, &mut rng, 1000).unwrap();
        prop_assert_eq!(c.r(), r);
        prop_assert_eq!(chain_valid(m, &c, true), Completeness::Pass);
        prop_assert_eq!(verify_chain_completeness(lcc, m, &c), Completeness::Pass);
        prop_assert_eq!(Chain::parse_line(&c.to_line()).unwrap(), c);
    }

    #[test]
    fn binest_admissible((n, ell, r, t) in admissible()) {
        if let Some(ratio) = binest_ratio(n, r, t, ell) {
            let cap = Q::one() + Q::new(BigInt::from(32 * ell * ell), BigInt::from(n));
            prop_assert!(ratio <= cap);
        }
    }

    #[test]
    fn chain_mass_bounded(n in 6..30usize, seed in any::<u64>(), t in 1..4usize) {
        let col = synthetic_collection(n, 2, 2, seed);
        let ll = LinkLists::new(&col);
        let (mh, mg) = chain_mass_dp(&ll, t);
        for u in 0..n {
            prop_assert!(mh[u] <= Q::one());
            prop_assert!(mg[u] <= rational::qi(4));
        }
    }
}

#[test]
fn chain_count_matches_enumeration() {
    let lcc = build_rm_design(2, 1 << 12).unwrap();
    let lt = LinkTable::new(&derive_matchings(&lcc).unwrap());
    for u in 0..16 {
        for r in 1..=2 {
            let chains = enumerate_with(&lt, u, r, ChainOpts::default()).unwrap();
            assert_eq!(chains.len() as u64, count_chains(&lt, u, r, true));
        }
    }
}
