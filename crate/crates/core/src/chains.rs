//! r-chains over a matching family: enumeration, sampling, and checks.

use rand::Rng;
use serde::Serialize;

use crate::design::{DesignLcc, MatchingFamily};
use crate::error::{Error, Result};
use crate::par;

/// `(u0, v1, v2, u1, v3, v4, u2, ...)` stored as a head and r links
/// `(v_{2h+1}, v_{2h+2}, u_{h+1})`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Chain {
    pub head: usize,
    pub links: Vec<[usize; 3]>,
}

impl Chain {
    pub fn head_only(u: usize) -> Chain {
        Chain { head: u, links: Vec::new() }
    }

    pub fn r(&self) -> usize {
        self.links.len()
    }

    pub fn left(&self) -> Vec<usize> {
        self.links.iter().map(|l| l[0]).collect()
    }

    pub fn right(&self) -> Vec<usize> {
        self.links.iter().map(|l| l[1]).collect()
    }

    pub fn tail(&self) -> usize {
        self.links.last().map_or(self.head, |l| l[2])
    }

    /// `u_h` for h in 0..=r.
    pub fn u(&self, h: usize) -> usize {
        if h == 0 {
            self.head
        } else {
            self.links[h - 1][2]
        }
    }

    pub fn vs_distinct(&self) -> bool {
        let mut vs: Vec<usize> = self.links.iter().flat_map(|l| [l[0], l[1]]).collect();
        vs.sort_unstable();
        vs.windows(2).all(|w| w[0] != w[1])
    }

    /// 1-based, space separated.
    pub fn to_line(&self) -> String {
        let mut s = (self.head + 1).to_string();
        for l in &self.links {
            for v in l {
                s.push(' ');
                s.push_str(&(v + 1).to_string());
            }
        }
        s
    }

    pub fn parse_line(line: &str) -> Result<Chain> {
        let xs: Vec<usize> = line
            .split_whitespace()
            .map(|t| match t.parse::<usize>() {
                Ok(v) if v >= 1 => Ok(v - 1),
                _ => Err(Error::Parse(format!("bad vertex {t:?}"))),
            })
            .collect::<Result<_>>()?;
        if xs.is_empty() || (xs.len() - 1) % 3 != 0 {
            return Err(Error::Parse(format!("chain line has {} entries", xs.len())));
        }
        let links = xs[1..].chunks(3).map(|c| [c[0], c[1], c[2]]).collect();
        Ok(Chain { head: xs[0], links })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ChainOpts {
    /// Require v_1..v_{2r} pairwise distinct.
    pub distinct: bool,
    /// Maximum number of chains to materialize.
    pub budget: u64,
}

impl Default for ChainOpts {
    fn default() -> Self {
        ChainOpts { distinct: true, budget: 10_000_000 }
    }
}

/// Ordered links out of each vertex, lexicographically sorted.
pub struct LinkTable {
    pub n: usize,
    out: Vec<Vec<[usize; 3]>>,
}

const PERMS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];

impl LinkTable {
    pub fn new(m: &MatchingFamily) -> LinkTable {
        let out = m
            .h
            .iter()
            .map(|hu| {
                let mut v: Vec<[usize; 3]> = hu
                    .iter()
                    .flat_map(|t| PERMS.iter().map(move |p| [t[p[0]], t[p[1]], t[p[2]]]))
                    .collect();
                v.sort_unstable();
                v
            })
            .collect();
        LinkTable { n: m.n, out }
    }

    pub fn links(&self, u: usize) -> &[[usize; 3]] {
        &self.out[u]
    }
}

fn dfs<F: FnMut(&Chain) -> bool>(
    lt: &LinkTable,
    r: usize,
    distinct: bool,
    cur: &mut Chain,
    used: &mut Vec<bool>,
    f: &mut F,
) -> bool {
    if cur.links.len() == r {
        return f(cur);
    }
    let u = cur.tail();
    for l in lt.links(u) {
        if distinct && (used[l[0]] || used[l[1]]) {
            continue;
        }
        if distinct {
            used[l[0]] = true;
            used[l[1]] = true;
        }
        cur.links.push(*l);
        let go = dfs(lt, r, distinct, cur, used, f);
        cur.links.pop();
        if distinct {
            used[l[0]] = false;
            used[l[1]] = false;
        }
        if !go {
            return false;
        }
    }
    true
}

/// Stream chains with head `u` in lexicographic order. The visitor returns
/// `false` to stop early.
pub fn for_each_chain<F: FnMut(&Chain) -> bool>(lt: &LinkTable, u: usize, r: usize, distinct: bool, mut f: F) {
    let mut cur = Chain::head_only(u);
    let mut used = vec![false; lt.n];
    dfs(lt, r, distinct, &mut cur, &mut used, &mut f);
}

/// Chains that begin with the `i`-th link out of `u`.
fn for_each_with_first<F: FnMut(&Chain) -> bool>(lt: &LinkTable, u: usize, i: usize, r: usize, distinct: bool, mut f: F) {
    let l = lt.links(u)[i];
    if distinct && l[0] == l[1] {
        return;
    }
    let mut cur = Chain { head: u, links: vec![l] };
    let mut used = vec![false; lt.n];
    used[l[0]] = true;
    used[l[1]] = true;
    dfs(lt, r, distinct, &mut cur, &mut used, &mut f);
}

pub fn enumerate_chains(m: &MatchingFamily, u: usize, r: usize, opts: ChainOpts) -> Result<Vec<Chain>> {
    let lt = LinkTable::new(m);
    enumerate_with(&lt, u, r, opts)
}

pub fn enumerate_with(lt: &LinkTable, u: usize, r: usize, opts: ChainOpts) -> Result<Vec<Chain>> {
    if r == 0 {
        return Ok(vec![Chain::head_only(u)]);
    }
    let mut out = Vec::new();
    let mut over = false;
    for_each_chain(lt, u, r, opts.distinct, |c| {
        if out.len() as u64 >= opts.budget {
            over = true;
            return false;
        }
        out.push(c.clone());
        true
    });
    if over {
        return Err(Error::budget(format!("chain enumeration (head {}, r={r})", u + 1), out.len() as u64));
    }
    Ok(out)
}

/// Count chains, splitting the work by first link.
pub fn count_chains(lt: &LinkTable, u: usize, r: usize, distinct: bool) -> u64 {
    count_matching(lt, u, r, distinct, |_| true)
}

pub fn count_matching<P: Fn(&Chain) -> bool + Sync>(lt: &LinkTable, u: usize, r: usize, distinct: bool, pred: P) -> u64 {
    if r == 0 {
        return pred(&Chain::head_only(u)) as u64;
    }
    let parts = par::map_range(lt.links(u).len(), |i| {
        let mut c = 0u64;
        for_each_with_first(lt, u, i, r, distinct, |ch| {
            c += pred(ch) as u64;
            true
        });
        c
    });
    parts.iter().sum()
}

/// Uniform over chains with head `u` (rejection on distinctness).
pub fn sample_chain<R: Rng>(lt: &LinkTable, u: usize, r: usize, distinct: bool, rng: &mut R, max_tries: usize) -> Option<Chain> {
    'outer: for _ in 0..max_tries.max(1) {
        let mut c = Chain::head_only(u);
        for _ in 0..r {
            let ls = lt.links(c.tail());
            if ls.is_empty() {
                return None;
            }
            c.links.push(ls[rng.random_range(0..ls.len())]);
        }
        if distinct && !c.vs_distinct() {
            continue 'outer;
        }
        return Some(c);
    }
    None
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct ChainSetStats {
    pub n: usize,
    pub r: usize,
    pub count: u64,
    pub delta: f64,
    pub lower_bound: i128,
    pub upper_bound: i128,
}

impl ChainSetStats {
    pub fn new(n: usize, r: usize, count: u64) -> ChainSetStats {
        // 6δn = 2(n-1) with δ = 1/3 - 1/(3n).
        let six = 2 * (n as i128 - 1);
        let lo = (six - 4 * r as i128).max(0);
        ChainSetStats {
            n,
            r,
            count,
            delta: 1.0 / 3.0 - 1.0 / (3.0 * n as f64),
            lower_bound: lo.pow(r as u32),
            upper_bound: six.pow(r as u32),
        }
    }

    pub fn within(&self) -> bool {
        self.lower_bound <= self.count as i128 && self.count as i128 <= self.upper_bound
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Completeness {
    Pass,
    /// Link `h` (0-based) is not a hyperedge of `H_{u_h}`.
    InvalidLink(usize),
    /// The v's repeat although distinctness was required.
    NotDistinct,
    /// Identity fails on this basis vector.
    IdentityFails(usize),
}

pub fn chain_valid(m: &MatchingFamily, c: &Chain, distinct: bool) -> Completeness {
    for (h, l) in c.links.iter().enumerate() {
        let u = c.u(h);
        if u >= m.n || l.iter().any(|&v| v >= m.n) {
            return Completeness::InvalidLink(h);
        }
        let mut s = *l;
        s.sort_unstable();
        if !m.h[u].contains(&s) {
            return Completeness::InvalidLink(h);
        }
    }
    if distinct && !c.vs_distinct() {
        return Completeness::NotDistinct;
    }
    Completeness::Pass
}

/// `x_{u_r} + Σ_{C_L} x + Σ_{C_R} x = x_{u_0}` on every dual basis vector.
pub fn verify_chain_completeness(lcc: &DesignLcc, m: &MatchingFamily, c: &Chain) -> Completeness {
    match chain_valid(m, c, false) {
        Completeness::Pass => {}
        bad => return bad,
    }
    for (i, x) in lcc.dual_basis.iter().enumerate() {
        let mut s = x.get(c.tail()) ^ x.get(c.head);
        for l in &c.links {
            s ^= x.get(l[0]) ^ x.get(l[1]);
        }
        if s {
            return Completeness::IdentityFails(i);
        }
    }
    Completeness::Pass
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Side {
    Left,
    Right,
}

#[derive(Clone, Debug, Serialize)]
pub struct PatternCount {
    pub count: u64,
    pub bound: u128,
    pub holds: bool,
}

fn factorial(k: usize) -> u128 {
    (1..=k as u128).product()
}

fn choose(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let mut c = 1u128;
    for i in 0..k {
        c = c * (n - i) as u128 / (i + 1) as u128;
    }
    c
}

/// Upper bound on chains with `Z ⊆ C_side`, tail optionally fixed.
/// With `3δn = n − 1`: right (or left without a tail) gives
/// `C(r,t) t! (n−1)^{r−t} 2^r`; left with a fixed tail gives
/// `C(r,t) t! (n−1)^{r−t−1} 2^r` for t < r and `r! 2^r` for t = r.
pub fn smoothness_bound(n: usize, r: usize, t: usize, side: Side, tail_fixed: bool) -> u128 {
    if t > r {
        return 0;
    }
    let base = choose(r, t) * factorial(t) * (1u128 << r);
    let m = (n - 1) as u128;
    match (side, tail_fixed) {
        (Side::Left, true) if t == r => factorial(r) * (1u128 << r),
        (Side::Left, true) => base * m.pow((r - t - 1) as u32),
        _ => base * m.pow((r - t) as u32),
    }
}

pub fn count_chains_with_fixed_pattern(
    lt: &LinkTable,
    u: usize,
    r: usize,
    z: &[usize],
    side: Side,
    tail: Option<usize>,
    distinct: bool,
) -> PatternCount {
    let count = count_matching(lt, u, r, distinct, |c| {
        if let Some(w) = tail {
            if c.tail() != w {
                return false;
            }
        }
        let half = match side {
            Side::Left => c.left(),
            Side::Right => c.right(),
        };
        z.iter().all(|v| half.contains(v))
    });
    let bound = smoothness_bound(lt.n, r, z.len(), side, tail.is_some());
    PatternCount { count, bound, holds: count as u128 <= bound }
}

pub fn dump_chains(chains: &[Chain]) -> String {
    let mut s = String::new();
    for c in chains {
        s.push_str(&c.to_line());
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{build_rm_design, derive_matchings};

    #[test]
    fn line_roundtrip() {
        let c = Chain { head: 0, links: vec![[1, 2, 3], [4, 5, 6]] };
        assert_eq!(c.to_line(), "1 2 3 4 5 6 7");
        assert_eq!(Chain::parse_line(&c.to_line()).unwrap(), c);
        assert!(Chain::parse_line("1 2 3").is_err());
        assert!(Chain::parse_line("0").is_err());
    }

    #[test]
    fn halves_and_tail() {
        let c = Chain { head: 0, links: vec![[1, 2, 3], [4, 5, 6]] };
        assert_eq!(c.left(), vec![1, 4]);
        assert_eq!(c.right(), vec![2, 5]);
        assert_eq!(c.tail(), 6);
        assert_eq!(Chain::head_only(9).tail(), 9);
    }

    #[test]
    fn t1_r2_is_empty() {
        let l = build_rm_design(1, 1 << 20).unwrap();
        let m = derive_matchings(&l).unwrap();
        assert!(enumerate_chains(&m, 0, 2, ChainOpts::default()).unwrap().is_empty());
    }

    #[test]
    fn budget_error_carries_count() {
        let l = build_rm_design(2, 1 << 20).unwrap();
        let m = derive_matchings(&l).unwrap();
        let e = enumerate_chains(&m, 0, 2, ChainOpts { distinct: true, budget: 10 }).unwrap_err();
        assert!(matches!(e, Error::Budget { count: 10, .. }));
    }

    #[test]
    fn bounds_formula() {
        assert_eq!(smoothness_bound(16, 1, 1, Side::Right, false), 2);
        assert_eq!(smoothness_bound(16, 2, 2, Side::Left, true), 8);
        assert_eq!(smoothness_bound(16, 2, 0, Side::Right, false), 900);
        assert_eq!(smoothness_bound(16, 2, 1, Side::Left, true), 2 * 4);
    }
}
