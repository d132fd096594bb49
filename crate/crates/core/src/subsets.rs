//! ℓ-subsets of `[n]` (n ≤ 64) as bitmasks, with colex ranking.

use rand::Rng;

/// Table of binomials `c[n][k]` for n ≤ 64 as u64 (saturating).
#[derive(Clone, Debug)]
pub struct Binomials {
    c: Vec<Vec<u64>>,
}

impl Binomials {
    pub fn new(max_n: usize) -> Self {
        let mut c = vec![vec![0u64; max_n + 2]; max_n + 2];
        for n in 0..=max_n + 1 {
            c[n][0] = 1;
            for k in 1..=n {
                c[n][k] = c[n - 1][k - 1].saturating_add(if k < n { c[n - 1][k] } else { 0 });
            }
        }
        Binomials { c }
    }

    pub fn get(&self, n: usize, k: usize) -> u64 {
        if k > n {
            0
        } else {
            self.c[n][k]
        }
    }

    /// Colex rank of a subset among all subsets of the same size.
    pub fn rank(&self, mut mask: u64) -> u64 {
        let mut r = 0;
        let mut j = 1;
        while mask != 0 {
            let p = mask.trailing_zeros() as usize;
            r += self.get(p, j);
            j += 1;
            mask &= mask - 1;
        }
        r
    }

    pub fn unrank(&self, mut rank: u64, k: usize) -> u64 {
        let mut mask = 0u64;
        for j in (1..=k).rev() {
            let mut p = j - 1;
            while self.get(p + 1, j) <= rank {
                p += 1;
            }
            rank -= self.get(p, j);
            mask |= 1u64 << p;
        }
        mask
    }
}

/// All k-subsets of [n] in colex order (Gosper's hack).
pub fn all_subsets(n: usize, k: usize) -> Vec<u64> {
    let mut out = Vec::new();
    if k > n {
        return out;
    }
    if k == 0 {
        out.push(0);
        return out;
    }
    let limit: u128 = 1u128 << n;
    if k == 64 {
        out.push(u64::MAX);
        return out;
    }
    let mut s: u64 = (1u64 << k) - 1;
    while (s as u128) < limit {
        out.push(s);
        let c = s & s.wrapping_neg();
        let r = s.wrapping_add(c);
        if r == 0 {
            break;
        }
        s = (((r ^ s) >> 2) / c) | r;
    }
    out
}

/// Uniformly random k-subset of [n].
pub fn random_subset<R: Rng>(rng: &mut R, n: usize, k: usize) -> u64 {
    let mut mask = 0u64;
    // Floyd's algorithm.
    for j in n - k..n {
        let t = rng.random_range(0..=j);
        if mask >> t & 1 == 1 {
            mask |= 1u64 << j;
        } else {
            mask |= 1u64 << t;
        }
    }
    mask
}

pub fn members(mut mask: u64) -> Vec<usize> {
    let mut v = Vec::with_capacity(mask.count_ones() as usize);
    while mask != 0 {
        v.push(mask.trailing_zeros() as usize);
        mask &= mask - 1;
    }
    v
}

pub fn mask_of(xs: &[usize]) -> u64 {
    xs.iter().fold(0u64, |m, &v| m | 1u64 << v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_unrank_roundtrip() {
        let b = Binomials::new(16);
        let subs = all_subsets(10, 4);
        assert_eq!(subs.len(), 210);
        for (i, &s) in subs.iter().enumerate() {
            assert_eq!(b.rank(s), i as u64);
            assert_eq!(b.unrank(i as u64, 4), s);
        }
    }

    #[test]
    fn empty_and_full() {
        assert_eq!(all_subsets(5, 0), vec![0]);
        assert_eq!(all_subsets(5, 5), vec![31]);
        assert_eq!(all_subsets(64, 64).len(), 1);
        assert!(all_subsets(3, 4).is_empty());
    }
}
