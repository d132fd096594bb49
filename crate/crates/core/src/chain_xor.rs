//! Weighted t-chains over a hypergraph collection, chain XOR instances, the
//! greedy heavy-suffix partition and the bipartite relaxation of Ψ.

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decoder::{HypergraphCollection, Sign};
use crate::error::{Error, Result};
use crate::gf2::BitVec;
use crate::par;
use crate::rational::{self, Q};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TailKind {
    Hyper,
    Graph,
}

/// `tuple` is `(u0, v1, v2, u1, …)`; length `3t+1` when hypergraph-tailed,
/// `3t` when graph-tailed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WeightedChain {
    pub tuple: Vec<usize>,
    pub weight: Q,
    pub kind: TailKind,
}

impl WeightedChain {
    pub fn t(&self) -> usize {
        self.tuple.len() / 3
    }

    pub fn head(&self) -> usize {
        self.tuple[0]
    }

    pub fn tail(&self) -> Option<usize> {
        match self.kind {
            TailKind::Hyper => self.tuple.last().copied(),
            TailKind::Graph => None,
        }
    }

    /// Link `h` (0-based) as its vertex pair.
    pub fn link(&self, h: usize) -> (usize, usize) {
        (self.tuple[3 * h + 1], self.tuple[3 * h + 2])
    }

    pub fn monomial(&self, nvars: usize) -> BitVec {
        let mut m = BitVec::zeros(nvars);
        for h in 0..self.t() {
            let (a, b) = self.link(h);
            m.flip(a);
            m.flip(b);
        }
        if let Some(u) = self.tail() {
            m.flip(u);
        }
        m
    }
}

/// Per-vertex edge lists of a collection, sorted.
pub struct LinkLists {
    pub n: usize,
    pub h: Vec<Vec<([usize; 3], Q)>>,
    pub g: Vec<Vec<([usize; 2], Q)>>,
}

impl LinkLists {
    pub fn new(col: &HypergraphCollection) -> LinkLists {
        let h = col.pairs.iter().map(|p| p.h.iter().filter(|(_, w)| !w.is_zero()).map(|(&(a, b, c), w)| ([a, b, c], w.clone())).collect()).collect();
        let g = col.pairs.iter().map(|p| p.g.iter().filter(|(_, w)| !w.is_zero()).map(|(&(a, b), w)| ([a, b], w.clone())).collect()).collect();
        LinkLists { n: col.n, h, g }
    }
}

/// Visits every nonzero-weight chain with head `u`; stops early when `f`
/// returns false.
pub fn for_each_chain(ll: &LinkLists, u: usize, t: usize, kind: TailKind, f: &mut dyn FnMut(&[usize], &Q) -> bool) {
    fn rec(ll: &LinkLists, depth: usize, t: usize, kind: TailKind, tuple: &mut Vec<usize>, w: &Q, f: &mut dyn FnMut(&[usize], &Q) -> bool) -> bool {
        let cur = *tuple.last().expect("nonempty");
        if depth + 1 == t && kind == TailKind::Graph {
            for ([a, b], we) in &ll.g[cur] {
                tuple.extend([*a, *b]);
                let go = f(tuple, &(w * we));
                tuple.truncate(tuple.len() - 2);
                if !go {
                    return false;
                }
            }
            return true;
        }
        for ([a, b, c], we) in &ll.h[cur] {
            tuple.extend([*a, *b, *c]);
            let nw = w * we;
            let go = if depth + 1 == t { f(tuple, &nw) } else { rec(ll, depth + 1, t, kind, tuple, &nw, f) };
            tuple.truncate(tuple.len() - 3);
            if !go {
                return false;
            }
        }
        true
    }
    if t == 0 {
        return;
    }
    let mut tuple = vec![u];
    rec(ll, 0, t, kind, &mut tuple, &Q::one(), f);
}

pub fn build_chain_hypergraph(ll: &LinkLists, u: usize, t: usize, kind: TailKind, budget: u64) -> Result<Vec<WeightedChain>> {
    if t == 0 {
        return Err(Error::Config("chains need t ≥ 1".into()));
    }
    let mut out = Vec::new();
    let mut over = false;
    for_each_chain(ll, u, t, kind, &mut |tuple, w| {
        if out.len() as u64 >= budget {
            over = true;
            return false;
        }
        out.push(WeightedChain { tuple: tuple.to_vec(), weight: w.clone(), kind });
        true
    });
    if over {
        return Err(Error::budget(format!("{t}-chains from head {}", u + 1), out.len() as u64));
    }
    Ok(out)
}

/// Chains at level `t` for every head, in head order.
pub fn all_chains(ll: &LinkLists, heads: &[usize], t: usize, kind: TailKind, budget: u64) -> Result<Vec<WeightedChain>> {
    let per = par::map_slice(heads, |&u| build_chain_hypergraph(ll, u, t, kind, budget));
    let mut out = Vec::new();
    for p in per {
        out.extend(p?);
        if out.len() as u64 > budget {
            return Err(Error::budget(format!("{t}-chains"), out.len() as u64));
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize)]
pub struct WeightConservation {
    pub u: usize,
    pub t: usize,
    #[serde(with = "rational::serde_q")]
    pub total_h: Q,
    #[serde(with = "rational::serde_q")]
    pub total_g: Q,
    pub pass: bool,
}

pub fn verify_weight_conservation(ll: &LinkLists, u: usize, t: usize, budget: u64) -> Result<WeightConservation> {
    let sum = |kind| -> Result<Q> { Ok(build_chain_hypergraph(ll, u, t, kind, budget)?.iter().map(|c| &c.weight).sum()) };
    let total_h = sum(TailKind::Hyper)?;
    let total_g = sum(TailKind::Graph)?;
    let pass = total_h <= Q::one() && total_g <= Q::from_integer(BigInt::from(4));
    Ok(WeightConservation { u, t, total_h, total_g, pass })
}

/// Chain masses by the recursion on the first link, without enumeration.
pub fn chain_mass_dp(ll: &LinkLists, t: usize) -> (Vec<Q>, Vec<Q>) {
    let n = ll.n;
    let mut mh = vec![Q::one(); n];
    let mut mg: Vec<Q> = ll.g.iter().map(|es| es.iter().map(|e| &e.1).sum()).collect();
    for step in 0..t {
        let ext = |m: &[Q]| -> Vec<Q> { (0..n).map(|u| ll.h[u].iter().map(|(e, w)| w * &m[e[2]]).sum()).collect() };
        if step > 0 {
            mg = ext(&mg);
        }
        mh = ext(&mh);
    }
    (mh, mg)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum XorKind {
    Phi(usize),
    Psi,
}

impl XorKind {
    pub fn label(&self) -> String {
        match self {
            XorKind::Phi(t) => format!("phi_{t}"),
            XorKind::Psi => "psi".into(),
        }
    }

    pub fn parse(s: &str) -> Result<XorKind> {
        if s == "psi" {
            return Ok(XorKind::Psi);
        }
        s.strip_prefix("phi_")
            .and_then(|t| t.parse().ok())
            .filter(|&t| t >= 1)
            .map(XorKind::Phi)
            .ok_or_else(|| Error::Parse(format!("unknown instance kind {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Term {
    /// Message index.
    pub i: usize,
    pub chain: WeightedChain,
    /// `b_i · wt(C)`.
    pub w: Q,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChainXorInstance {
    pub kind: XorKind,
    pub k: usize,
    pub r: usize,
    pub nvars: usize,
    pub terms: Vec<Term>,
}

/// `Φ^(t)` for `t ≤ r+1` or `Ψ` (hypergraph-tailed `(r+1)`-chains). Head of
/// message index `i` is `heads[i]`.
pub fn build_instance(ll: &LinkLists, heads: &[usize], b: &[Sign], kind: XorKind, r: usize, budget: u64) -> Result<ChainXorInstance> {
    if heads.len() != b.len() {
        return Err(Error::Config(format!("{} heads for {} signs", heads.len(), b.len())));
    }
    let (t, tk) = match kind {
        XorKind::Phi(t) if (1..=r + 1).contains(&t) => (t, TailKind::Graph),
        XorKind::Phi(t) => return Err(Error::Config(format!("Φ^({t}) needs 1 ≤ t ≤ r+1 = {}", r + 1))),
        XorKind::Psi => (r + 1, TailKind::Hyper),
    };
    let chains = par::map_slice(heads, |&u| build_chain_hypergraph(ll, u, t, tk, budget));
    let mut terms = Vec::new();
    for (i, cs) in chains.into_iter().enumerate() {
        let s = Q::from_integer(BigInt::from(b[i]));
        for c in cs? {
            let w = &c.weight * &s;
            terms.push(Term { i, chain: c, w });
        }
        if terms.len() as u64 > budget {
            return Err(Error::budget("instance terms", terms.len() as u64));
        }
    }
    Ok(ChainXorInstance { kind, k: heads.len(), r, nvars: ll.n, terms })
}

/// `x` as a bit vector, bit set where `x_v = −1`.
pub fn sign_bits(x: &[Sign]) -> BitVec {
    let mut v = BitVec::zeros(x.len());
    for (i, &s) in x.iter().enumerate() {
        if s < 0 {
            v.set(i, true);
        }
    }
    v
}

/// `χ_m(x)` for `x` given by [`sign_bits`].
pub fn chi(m: &BitVec, xb: &BitVec) -> i64 {
    if m.dot(xb) {
        -1
    } else {
        1
    }
}

#[derive(Serialize, Deserialize)]
struct TermRec {
    i: usize,
    tuple: Vec<usize>,
    w: String,
    kind: String,
}

impl ChainXorInstance {
    pub fn abs_mass(&self) -> Q {
        self.terms.iter().map(|t| t.w.abs()).sum()
    }

    /// Mass cap: 4k for `Φ^(t)`, k for `Ψ`.
    pub fn mass_cap(&self) -> Q {
        let c = match self.kind {
            XorKind::Phi(_) => 4,
            XorKind::Psi => 1,
        };
        Q::from_integer(BigInt::from(c * self.k))
    }

    /// Merged coefficients per monomial; zeros dropped.
    pub fn monomials(&self) -> BTreeMap<BitVec, Q> {
        let mut m: BTreeMap<BitVec, Q> = BTreeMap::new();
        for t in &self.terms {
            *m.entry(t.chain.monomial(self.nvars)).or_insert_with(Q::zero) += &t.w;
        }
        m.retain(|_, w| !w.is_zero());
        m
    }

    /// `Σ b_i wt(C) g_C(x)` term by term.
    pub fn evaluate(&self, x: &[Sign]) -> Result<Q> {
        if x.len() != self.nvars {
            return Err(Error::Config(format!("assignment has {} entries, need {}", x.len(), self.nvars)));
        }
        let mut s = Q::zero();
        for t in &self.terms {
            let mut sign: Sign = 1;
            for h in 0..t.chain.t() {
                let (a, b) = t.chain.link(h);
                sign *= x[a] * x[b];
            }
            if let Some(u) = t.chain.tail() {
                sign *= x[u];
            }
            if sign > 0 {
                s += &t.w;
            } else {
                s -= &t.w;
            }
        }
        Ok(s)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for t in &self.terms {
            let rec = TermRec {
                i: t.i + 1,
                tuple: t.chain.tuple.iter().map(|v| v + 1).collect(),
                w: rational::format(&t.w),
                kind: self.kind.label(),
            };
            out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(s: &str, k: usize, r: usize, nvars: usize) -> Result<ChainXorInstance> {
        let mut kind = None;
        let mut terms = Vec::new();
        for line in s.lines().filter(|l| !l.trim().is_empty()) {
            let rec: TermRec = serde_json::from_str(line)?;
            let kd = XorKind::parse(&rec.kind)?;
            if *kind.get_or_insert(kd) != kd {
                return Err(Error::Parse("mixed instance kinds".into()));
            }
            if rec.i == 0 || rec.i > k || rec.tuple.iter().any(|&v| v == 0 || v > nvars) {
                return Err(Error::Parse(format!("index out of range in {line}")));
            }
            let tk = match kd {
                XorKind::Phi(_) => TailKind::Graph,
                XorKind::Psi => TailKind::Hyper,
            };
            let want = match kd {
                XorKind::Phi(t) => 3 * t,
                XorKind::Psi => 3 * (r + 1) + 1,
            };
            if rec.tuple.len() != want {
                return Err(Error::Parse(format!("tuple length {} for {}", rec.tuple.len(), rec.kind)));
            }
            let w = rational::parse(&rec.w)?;
            let chain = WeightedChain { tuple: rec.tuple.iter().map(|v| v - 1).collect(), weight: w.abs(), kind: tk };
            terms.push(Term { i: rec.i - 1, chain, w });
        }
        Ok(ChainXorInstance { kind: kind.unwrap_or(XorKind::Psi), k, r, nvars, terms })
    }
}

/// Largest variable count for exhaustive maximization.
pub const BRUTE_MAX_VARS: usize = 24;

/// `val = max_x Σ_S c_S x^S` by a Walsh–Hadamard transform over a common
/// denominator. Returns the value and a maximizer.
pub fn val_brute(coeffs: &BTreeMap<BitVec, Q>, nvars: usize) -> Result<(Q, Vec<Sign>)> {
    if nvars > BRUTE_MAX_VARS {
        return Err(Error::Config(format!("exhaustive value needs at most {BRUTE_MAX_VARS} variables, got {nvars}")));
    }
    let size = 1usize << nvars;
    let index = |m: &BitVec| m.ones().iter().fold(0usize, |a, &i| a | 1 << i);
    let (best, arg, d) = match rational::common_scale(coeffs.values()) {
        Some((d, nums)) => {
            let mut f = vec![0i128; size];
            for (m, c) in coeffs.keys().zip(nums) {
                f[index(m)] += c;
            }
            fwht(&mut f);
            let (arg, best) = f.iter().enumerate().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0))).expect("nonempty");
            (BigInt::from(*best), arg, BigInt::from(d))
        }
        None => {
            use num_integer::Integer;
            let d = coeffs.values().fold(BigInt::one(), |acc, w| acc.lcm(w.denom()));
            let mut f = vec![BigInt::zero(); size];
            for (m, c) in coeffs {
                f[index(m)] += c.numer() * (&d / c.denom());
            }
            fwht(&mut f);
            let (arg, best) = f.iter().enumerate().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0))).expect("nonempty");
            (best.clone(), arg, d)
        }
    };
    let x = (0..nvars).map(|i| if arg >> i & 1 == 1 { -1 } else { 1 }).collect();
    Ok((Q::new(best, d), x))
}

fn fwht<T>(f: &mut [T])
where
    T: Clone + std::ops::Add<Output = T> + std::ops::Sub<Output = T>,
{
    let mut h = 1;
    while h < f.len() {
        for i in (0..f.len()).step_by(2 * h) {
            for j in i..i + h {
                let (a, b) = (f[j].clone(), f[j + h].clone());
                f[j] = a.clone() + b.clone();
                f[j + h] = a - b;
            }
        }
        h *= 2;
    }
}

/// Pattern over a hypergraph-tailed chain: one entry per link and one for
/// the tail, aligned to the end of the chain. `None` is ⋆.
pub type Pattern = Vec<Option<usize>>;

/// `Z ⊆ C`: entry `h` of the last `|Z|−1` links must be one of that link's
/// two vertices, the last entry must be the tail.
pub fn contains(z: &[Option<usize>], c: &WeightedChain) -> bool {
    let r = c.t();
    if z.is_empty() || z.len() > r + 1 || c.kind != TailKind::Hyper {
        return false;
    }
    let t = z.len() - 1;
    if let Some(v) = z[t] {
        if c.tail() != Some(v) {
            return false;
        }
    }
    (0..t).all(|h| match z[h] {
        None => true,
        Some(v) => {
            let (a, b) = c.link(r - t + h);
            v == a || v == b
        }
    })
}

/// Level-`t` heavy suffix with its member chains.
#[derive(Clone, Debug)]
pub struct PartitionQ {
    pub level: usize,
    pub q: Vec<usize>,
    pub members: Vec<usize>,
    pub wt: Q,
}

#[derive(Clone, Debug)]
pub struct LevelPartition {
    pub t: usize,
    pub threshold: Q,
    pub chains: Vec<WeightedChain>,
    pub parts: Vec<PartitionQ>,
    pub residual: Vec<usize>,
}

/// `n d^t (δn)^{−t−1}`.
pub fn heavy_threshold(n: usize, d: usize, delta: &Q, t: usize) -> Q {
    let nq = Q::from_integer(BigInt::from(n));
    let dn = delta * &nq;
    let mut x = nq * Q::from_integer(num_traits::pow(BigInt::from(d), t));
    for _ in 0..=t {
        x /= &dn;
    }
    x
}

/// The `2^t` complete suffixes of a level-`t` chain.
fn complete_qs(c: &WeightedChain) -> Vec<Vec<usize>> {
    let t = c.t();
    let tail = c.tail().expect("hyper-tailed");
    (0..1usize << t)
        .map(|mask| {
            let mut q: Vec<usize> = (0..t).map(|h| if mask >> h & 1 == 0 { c.link(h).0 } else { c.link(h).1 }).collect();
            q.push(tail);
            q
        })
        .collect()
}

/// Greedy selection in lexicographic order of `Q`. Weights only decrease as
/// chains are removed, so one ordered pass is the same as repeatedly taking
/// the smallest heavy `Q`.
pub fn greedy_partition(chains: Vec<WeightedChain>, t: usize, n: usize, d: usize, delta: &Q) -> LevelPartition {
    let threshold = heavy_threshold(n, d, delta, t);
    let mut index: BTreeMap<Vec<usize>, Vec<usize>> = BTreeMap::new();
    let chain_qs: Vec<Vec<Vec<usize>>> = chains.iter().map(complete_qs).collect();
    for (ci, qs) in chain_qs.iter().enumerate() {
        for q in qs {
            index.entry(q.clone()).or_default().push(ci);
        }
    }
    let keys: Vec<Vec<usize>> = index.keys().cloned().collect();
    let pos: BTreeMap<&Vec<usize>, usize> = keys.iter().enumerate().map(|(i, k)| (k, i)).collect();
    let mut weight: Vec<Q> = keys.iter().map(|k| index[k].iter().map(|&c| &chains[c].weight).sum()).collect();
    let mut alive = vec![true; chains.len()];
    let mut parts = Vec::new();
    for (ki, key) in keys.iter().enumerate() {
        if weight[ki] < threshold {
            continue;
        }
        let members: Vec<usize> = index[key].iter().copied().filter(|&c| alive[c]).collect();
        let wt: Q = members.iter().map(|&c| &chains[c].weight).sum();
        for &c in &members {
            alive[c] = false;
            for q in &chain_qs[c] {
                weight[pos[q]] -= &chains[c].weight;
            }
        }
        parts.push(PartitionQ { level: t, q: key.clone(), members, wt });
    }
    let residual = (0..chains.len()).filter(|&c| alive[c]).collect();
    LevelPartition { t, threshold, chains, parts, residual }
}

impl LevelPartition {
    /// Recomputes every suffix weight over the residual from scratch.
    pub fn is_maximal(&self) -> bool {
        let mut w: BTreeMap<Vec<usize>, Q> = BTreeMap::new();
        for &c in &self.residual {
            let ch = &self.chains[c];
            for q in complete_qs(ch) {
                *w.entry(q).or_insert_with(Q::zero) += &ch.weight;
            }
        }
        w.values().all(|x| *x < self.threshold)
    }

    pub fn total(&self) -> Q {
        self.parts.iter().map(|p| &p.wt).sum()
    }

    /// Every member contains its `Q`, members are disjoint, every chain is
    /// either a member or residual, and each part clears the threshold.
    pub fn is_valid(&self) -> bool {
        let mut seen = vec![false; self.chains.len()];
        for p in &self.parts {
            if p.wt < self.threshold {
                return false;
            }
            let z: Pattern = p.q.iter().map(|&v| Some(v)).collect();
            for &c in &p.members {
                if seen[c] || !contains(&z, &self.chains[c]) {
                    return false;
                }
                seen[c] = true;
            }
        }
        for &c in &self.residual {
            if seen[c] {
                return false;
            }
            seen[c] = true;
        }
        seen.iter().all(|&s| s)
    }
}

/// Identity of a part: `(level, Q)`; level 0 is the tail alone.
pub type PartKey = (usize, Vec<usize>);

/// `Ψ(x, y) = Σ_i Σ_Q b_i y_Q Ψ_{i,Q}(x)`.
#[derive(Clone, Debug)]
pub struct BipartitePsi {
    pub nvars: usize,
    pub r: usize,
    pub b: Vec<Sign>,
    pub parts: Vec<PartKey>,
    /// `wt(Q)`, 1 on level 0.
    pub part_wt: Vec<Q>,
    /// `(i, part) ↦` monomials of `Ψ_{i,Q}` with `x_Q` removed.
    pub psi: BTreeMap<(usize, usize), BTreeMap<BitVec, Q>>,
    /// `(i, part) ↦` chains of `H_i^{(r+1,Q)}`.
    pub classes: BTreeMap<(usize, usize), Vec<WeightedChain>>,
}

pub struct Decomposition {
    pub levels: Vec<LevelPartition>,
    pub psi: BipartitePsi,
}

/// Partitions levels `1..=r` over all heads, then splits the `(r+1)`-chains
/// of each message head by their maximal heavy suffix.
pub fn decompose(ll: &LinkLists, heads: &[usize], b: &[Sign], r: usize, d: usize, delta: &Q, budget: u64) -> Result<Decomposition> {
    let n = ll.n;
    let all: Vec<usize> = (0..n).collect();
    let mut levels = Vec::with_capacity(r);
    for t in 1..=r {
        let chains = all_chains(ll, &all, t, TailKind::Hyper, budget)?;
        levels.push(greedy_partition(chains, t, n, d, delta));
    }
    let mut parts: Vec<PartKey> = Vec::new();
    let mut part_wt = Vec::new();
    let mut member_of: BTreeMap<(usize, Vec<usize>), usize> = BTreeMap::new();
    for lp in &levels {
        for p in &lp.parts {
            let id = parts.len();
            parts.push((lp.t, p.q.clone()));
            part_wt.push(p.wt.clone());
            for &c in &p.members {
                member_of.insert((lp.t, lp.chains[c].tuple.clone()), id);
            }
        }
    }
    let mut level0: BTreeMap<usize, usize> = BTreeMap::new();
    let mut psi: BTreeMap<(usize, usize), BTreeMap<BitVec, Q>> = BTreeMap::new();
    let mut classes: BTreeMap<(usize, usize), Vec<WeightedChain>> = BTreeMap::new();
    for (i, &head) in heads.iter().enumerate() {
        for c in build_chain_hypergraph(ll, head, r + 1, TailKind::Hyper, budget)? {
            let sub = &c.tuple[3..];
            let found = (1..=r).rev().find_map(|t| member_of.get(&(t, sub[3 * (r - t)..].to_vec())).copied());
            let id = match found {
                Some(id) => id,
                None => {
                    let tail = c.tail().expect("hyper-tailed");
                    *level0.entry(tail).or_insert_with(|| {
                        parts.push((0, vec![tail]));
                        part_wt.push(Q::one());
                        parts.len() - 1
                    })
                }
            };
            let mut m = c.monomial(n);
            for &v in &parts[id].1 {
                m.flip(v);
            }
            *psi.entry((i, id)).or_default().entry(m).or_insert_with(Q::zero) += &c.weight;
            classes.entry((i, id)).or_default().push(c);
        }
    }
    Ok(Decomposition { levels, psi: BipartitePsi { nvars: n, r, b: b.to_vec(), parts, part_wt, psi, classes } })
}

impl BipartitePsi {
    /// `y_Q = x_Q`.
    pub fn y_of(&self, x: &[Sign]) -> Vec<Sign> {
        self.parts.iter().map(|(_, q)| q.iter().map(|&v| x[v]).product()).collect()
    }

    pub fn eval(&self, x: &[Sign], y: &[Sign]) -> Q {
        let xb = sign_bits(x);
        let mut s = Q::zero();
        for (&(i, id), mons) in &self.psi {
            let sign = (self.b[i] * y[id]) as i64;
            for (m, w) in mons {
                if sign * chi(m, &xb) > 0 {
                    s += w;
                } else {
                    s -= w;
                }
            }
        }
        s
    }

    /// `Ψ_{i,Q}(x)`.
    pub fn psi_eval(&self, i: usize, id: usize, xb: &BitVec) -> Q {
        let mut s = Q::zero();
        if let Some(mons) = self.psi.get(&(i, id)) {
            for (m, w) in mons {
                if chi(m, xb) > 0 {
                    s += w;
                } else {
                    s -= w;
                }
            }
        }
        s
    }

    /// Parts with a nonempty class for some message index.
    pub fn live_parts(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = self.classes.keys().map(|&(_, id)| id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// `Ψ(x)` from the stored chains.
    pub fn eval_chains(&self, x: &[Sign]) -> Q {
        let xb = sign_bits(x);
        let mut s = Q::zero();
        for (&(i, _), cs) in &self.classes {
            for c in cs {
                if self.b[i] as i64 * chi(&c.monomial(self.nvars), &xb) > 0 {
                    s += &c.weight;
                } else {
                    s -= &c.weight;
                }
            }
        }
        s
    }

    /// Bound on the `Z`-restricted mass of part `id`.
    pub fn pattern_bound(&self, id: usize, z_size: usize, d: usize, delta: &Q) -> Q {
        let qsize = self.parts[id].1.len();
        let dn = delta * Q::from_integer(BigInt::from(self.nvars));
        let r = self.r;
        if z_size == r + 2 {
            return pow_inv(&dn, r + 1);
        }
        let dpow = Q::from_integer(num_traits::pow(BigInt::from(d), z_size - qsize));
        &self.part_wt[id] * dpow * pow_inv(&dn, z_size + 1 - qsize)
    }

    /// Total mass of each class against `wt(Q)/(δn)`.
    pub fn class_mass_ok(&self, d: usize, delta: &Q) -> Vec<(usize, usize, Q, Q)> {
        self.classes
            .iter()
            .filter_map(|(&(i, id), cs)| {
                let mass: Q = cs.iter().map(|c| &c.weight).sum();
                let bound = self.pattern_bound(id, self.parts[id].1.len(), d, delta);
                (mass > bound).then_some((i, id, mass, bound))
            })
            .collect()
    }

    /// Samples patterns extending each part and compares restricted masses
    /// with their bound. Returns the number of checks and the violations.
    pub fn check_patterns(&self, d: usize, delta: &Q, per_class: usize, seed: u64) -> (usize, Vec<(usize, usize, Pattern, f64, f64)>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = self.r;
        let mut checks = 0;
        let mut bad = Vec::new();
        for (&(i, id), cs) in &self.classes {
            let q = &self.parts[id].1;
            let t = q.len() - 1;
            for _ in 0..per_class {
                let c = &cs[rng.random_range(0..cs.len())];
                let mut z: Pattern = vec![None; r + 2];
                for (h, &v) in q.iter().enumerate() {
                    z[r + 1 - t + h] = Some(v);
                }
                for h in 0..r + 1 - t {
                    match rng.random_range(0..3) {
                        0 => {}
                        1 => z[h] = Some(c.link(h).0),
                        _ => z[h] = Some(c.link(h).1),
                    }
                }
                let size = z.iter().filter(|e| e.is_some()).count();
                let mass: Q = cs.iter().filter(|c| contains(&z, c)).map(|c| &c.weight).sum();
                let bound = self.pattern_bound(id, size, d, delta);
                checks += 1;
                if mass > bound {
                    bad.push((i, id, z, rational::to_f64(&mass), rational::to_f64(&bound)));
                }
            }
        }
        (checks, bad)
    }

    /// `Σ_t Σ_{Q ∈ P_t, t ≥ 1} wt(Q)` plus `|P_0|`.
    pub fn partition_mass(&self) -> Q {
        self.part_wt.iter().sum()
    }
}

fn pow_inv(x: &Q, e: usize) -> Q {
    let mut out = Q::one();
    for _ in 0..e {
        out /= x;
    }
    out
}

/// Naive containment used to cross-check [`contains`].
pub fn contains_naive(z: &[Option<usize>], c: &WeightedChain) -> bool {
    if c.kind != TailKind::Hyper || z.is_empty() {
        return false;
    }
    let links: Vec<(usize, usize)> = (0..c.t()).map(|h| c.link(h)).collect();
    let (zt, zl) = z.split_last().expect("nonempty");
    if zl.len() > links.len() {
        return false;
    }
    let tail_ok = zt.is_none_or(|v| Some(v) == c.tail());
    tail_ok && zl.iter().rev().zip(links.iter().rev()).all(|(e, &(a, b))| e.is_none_or(|v| v == a || v == b))
}

/// Sum of `|coefficient|` as a float, for reporting.
pub fn mass_f64(m: &BTreeMap<BitVec, Q>) -> f64 {
    m.values().map(|w| w.abs().to_f64().unwrap_or(f64::INFINITY)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoder::{compile_collection, toy_parity4, Pair};

    fn toy_ll() -> (LinkLists, Vec<usize>, usize) {
        let toy = toy_parity4();
        let (_, col) = compile_collection(&toy.decoder).unwrap();
        (LinkLists::new(&col), toy.code.systematic.clone(), col.n)
    }

    #[test]
    fn level_one_is_the_collection() {
        let (ll, _, _) = toy_ll();
        for u in 0..ll.n {
            let h = build_chain_hypergraph(&ll, u, 1, TailKind::Hyper, 1 << 20).unwrap();
            assert_eq!(h.len(), ll.h[u].len());
            for (c, (e, w)) in h.iter().zip(&ll.h[u]) {
                assert_eq!(c.tuple, vec![u, e[0], e[1], e[2]]);
                assert_eq!(&c.weight, w);
            }
            let g = build_chain_hypergraph(&ll, u, 1, TailKind::Graph, 1 << 20).unwrap();
            assert_eq!(g.len(), ll.g[u].len());
        }
    }

    #[test]
    fn two_link_weights_are_products() {
        let mut col = HypergraphCollection { n: 5, pairs: vec![Pair::default(); 5] };
        col.pairs[0].h.insert((1, 2, 3), rational::q(1, 2));
        col.pairs[0].h.insert((2, 4, 1), rational::q(1, 3));
        col.pairs[3].h.insert((0, 4, 2), rational::q(3, 4));
        col.pairs[1].g.insert((2, 3), rational::q(2, 5));
        let ll = LinkLists::new(&col);
        let h2 = build_chain_hypergraph(&ll, 0, 2, TailKind::Hyper, 100).unwrap();
        assert_eq!(h2.len(), 1);
        assert_eq!(h2[0].tuple, vec![0, 1, 2, 3, 0, 4, 2]);
        assert_eq!(h2[0].weight, rational::q(3, 8));
        let g2 = build_chain_hypergraph(&ll, 0, 2, TailKind::Graph, 100).unwrap();
        assert_eq!(g2.len(), 1);
        assert_eq!(g2[0].tuple, vec![0, 2, 4, 1, 2, 3]);
        assert_eq!(g2[0].weight, rational::q(2, 15));
    }

    #[test]
    fn budget_reports_count() {
        let (ll, _, _) = toy_ll();
        match build_chain_hypergraph(&ll, 0, 3, TailKind::Hyper, 5) {
            Err(Error::Budget { count, .. }) => assert_eq!(count, 5),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn dp_mass_matches_enumeration() {
        let (ll, _, _) = toy_ll();
        for t in 1..=3 {
            let (mh, mg) = chain_mass_dp(&ll, t);
            for u in 0..ll.n {
                let w = verify_weight_conservation(&ll, u, t, 1 << 22).unwrap();
                assert!(w.pass);
                assert_eq!(w.total_h, mh[u]);
                assert_eq!(w.total_g, mg[u]);
            }
        }
    }

    #[test]
    fn fwht_matches_direct() {
        let n = 5;
        let mut m = BTreeMap::new();
        m.insert(BitVec::from_indices(n, &[0, 1]), rational::q(1, 2));
        m.insert(BitVec::from_indices(n, &[2]), rational::q(-1, 3));
        m.insert(BitVec::from_indices(n, &[1, 3, 4]), rational::q(1, 7));
        let (v, x) = val_brute(&m, n).unwrap();
        let mut best = None::<Q>;
        for a in 0..1u32 << n {
            let xs: Vec<Sign> = (0..n).map(|i| if a >> i & 1 == 1 { -1 } else { 1 }).collect();
            let xb = sign_bits(&xs);
            let f: Q = m.iter().map(|(k, w)| w * Q::from_integer(BigInt::from(chi(k, &xb)))).sum();
            if best.as_ref().is_none_or(|b| f > *b) {
                best = Some(f);
            }
        }
        assert_eq!(Some(v.clone()), best);
        let xb = sign_bits(&x);
        let at: Q = m.iter().map(|(k, w)| w * Q::from_integer(BigInt::from(chi(k, &xb)))).sum();
        assert_eq!(at, v);
    }

    #[test]
    fn kind_labels() {
        assert_eq!(XorKind::parse("phi_3").unwrap(), XorKind::Phi(3));
        assert_eq!(XorKind::parse("psi").unwrap(), XorKind::Psi);
        assert!(XorKind::parse("phi_0").is_err());
    }
}

#[cfg(test)]
mod decomposition_tests {
    use super::*;
    use crate::decoder::{compile_collection, toy_rm, RmDecoder, ToyLcc};

    fn setup(toy: &ToyLcc) -> (LinkLists, Q) {
        let (_, col) = compile_collection(&toy.decoder).unwrap();
        let (wmax, _, _) = col.max_incident();
        let delta = Q::one() / (wmax * Q::from_integer(BigInt::from(col.n)));
        (LinkLists::new(&col), delta)
    }

    fn total_value(ll: &LinkLists, heads: &[usize], b: &[Sign], r: usize, x: &[Sign]) -> Q {
        let mut tot = build_instance(ll, heads, b, XorKind::Psi, r, 1 << 24).unwrap().evaluate(x).unwrap();
        for t in 1..=r + 1 {
            tot += build_instance(ll, heads, b, XorKind::Phi(t), r, 1 << 24).unwrap().evaluate(x).unwrap();
        }
        tot
    }

    #[test]
    fn perfect_code_completeness() {
        let toy = toy_rm(2, RmDecoder::Canonical, None).unwrap();
        let (ll, _) = setup(&toy);
        let heads = toy.code.systematic.clone();
        let padded = toy.code.padded();
        for bi in [0usize, 77, 127] {
            let x = &padded.codewords[bi];
            let b: Vec<Sign> = heads.iter().map(|&h| x[h]).collect();
            for r in 1..=2 {
                assert_eq!(total_value(&ll, &heads, &b, r, x), Q::from_integer(BigInt::from(heads.len())));
            }
        }
    }

    #[test]
    fn noisy_code_completeness() {
        let eps = rational::q(1, 20);
        let toy = toy_rm(2, RmDecoder::Canonical, Some(eps.clone())).unwrap();
        let (ll, _) = setup(&toy);
        let heads = toy.code.systematic.clone();
        let x = &toy.code.padded().codewords[45];
        let b: Vec<Sign> = heads.iter().map(|&h| x[h]).collect();
        for r in 1..=2 {
            let k = Q::from_integer(BigInt::from(heads.len()));
            let floor = &k * (Q::one() - Q::from_integer(BigInt::from(2 * (r + 1))) * &eps);
            assert!(total_value(&ll, &heads, &b, r, x) >= floor);
        }
    }

    fn check_substitution(toy: &ToyLcc, r: usize, d: usize, samples: usize) {
        let (ll, delta) = setup(toy);
        let heads = toy.code.systematic.clone();
        let b: Vec<Sign> = (0..heads.len()).map(|i| if i % 3 == 0 { -1 } else { 1 }).collect();
        let psi = build_instance(&ll, &heads, &b, XorKind::Psi, r, 1 << 24).unwrap();
        let dec = decompose(&ll, &heads, &b, r, d, &delta, 1 << 24).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..samples {
            let x: Vec<Sign> = (0..ll.n).map(|_| if rng.random_bool(0.5) { 1 } else { -1 }).collect();
            let want = psi.evaluate(&x).unwrap();
            assert_eq!(dec.psi.eval(&x, &dec.psi.y_of(&x)), want);
            assert_eq!(dec.psi.eval_chains(&x), want);
        }
        assert!(dec.psi.class_mass_ok(d, &delta).is_empty());
        let (checks, bad) = dec.psi.check_patterns(d, &delta, 10, 9);
        assert!(checks > 0 && bad.is_empty(), "{bad:?}");
    }

    #[test]
    fn substitution_and_smoothness_adaptive() {
        check_substitution(&toy_rm(2, RmDecoder::Adaptive, None).unwrap(), 1, 8, 100);
    }

    #[test]
    fn substitution_and_smoothness_canonical() {
        check_substitution(&toy_rm(2, RmDecoder::Canonical, None).unwrap(), 2, 4, 30);
    }

    #[test]
    fn greedy_on_declared_delta() {
        let toy = toy_rm(2, RmDecoder::Canonical, None).unwrap();
        let (ll, _) = setup(&toy);
        let all: Vec<usize> = (0..ll.n).collect();
        for t in 1..=2 {
            let chains = all_chains(&ll, &all, t, TailKind::Hyper, 1 << 22).unwrap();
            for delta in [rational::q(1, 2), rational::q(1, 1)] {
                let lp = greedy_partition(chains.clone(), t, ll.n, 1, &delta);
                assert!(lp.is_valid() && lp.is_maximal());
                assert!(lp.total() <= Q::from_integer(BigInt::from(ll.n)));
            }
            let lp = greedy_partition(chains.clone(), t, ll.n, 1, &rational::q(1, 1));
            assert!(!lp.parts.is_empty(), "level {t}");
        }
    }

    #[test]
    fn concentrated_mass_is_one_part() {
        let mk = |tuple: Vec<usize>| WeightedChain { tuple, weight: rational::q(1, 4), kind: TailKind::Hyper };
        let chains = vec![mk(vec![0, 1, 2, 3]), mk(vec![4, 1, 5, 3]), mk(vec![6, 2, 1, 3])];
        let lp = greedy_partition(chains, 1, 8, 1, &rational::q(1, 1));
        assert_eq!(lp.parts.len(), 1);
        assert_eq!(lp.parts[0].q, vec![1, 3]);
        assert_eq!(lp.parts[0].members.len(), 3);
        assert!(lp.residual.is_empty());
        let light = vec![mk(vec![0, 1, 2, 3])];
        let lp = greedy_partition(light, 1, 8, 1, &rational::q(1, 4));
        assert!(lp.parts.is_empty() && lp.residual.len() == 1);
    }

    #[test]
    fn containment_matches_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10_000 {
            let r = rng.random_range(1..4usize);
            let tuple: Vec<usize> = (0..3 * r + 1).map(|_| rng.random_range(0..5)).collect();
            let c = WeightedChain { tuple, weight: Q::one(), kind: TailKind::Hyper };
            let len = rng.random_range(1..r + 2);
            let z: Pattern = (0..len).map(|_| if rng.random_bool(0.3) { None } else { Some(rng.random_range(0..5)) }).collect();
            assert_eq!(contains(&z, &c), contains_naive(&z, &c));
        }
    }
}
