//! Kikuchi matrices of chain XOR instances. Entries are kept per chain label
//! so that pruning can count what each label keeps.

use std::collections::{BTreeMap, HashMap};

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::Serialize;

use crate::chain_xor::{chi, sign_bits, BipartitePsi, ChainXorInstance, TailKind, WeightedChain, XorKind};
use crate::decoder::Sign;
use crate::error::{Error, Result};
use crate::gf2::BitVec;
use crate::par;
use crate::rational::Q;
use crate::spectral::SparseMatrix;
use crate::subsets::{all_subsets, members, Binomials};

/// Largest `C(n, ℓ)` a lift will tabulate.
pub const MAX_BASE: u64 = 1 << 22;

/// Index space of `blocks`-tuples of ℓ-subsets of `[n]`, mixed radix with
/// block 0 least significant.
#[derive(Clone, Debug)]
pub struct Lift {
    pub n: usize,
    pub ell: usize,
    pub blocks: usize,
    /// `C(n, ℓ)`.
    pub base: u64,
    /// `C(n, ℓ)^blocks`.
    pub dim: u64,
    bin: Binomials,
}

impl Lift {
    pub fn new(n: usize, ell: usize, blocks: usize) -> Result<Lift> {
        if n > 64 || ell == 0 || ell > n {
            return Err(Error::Config(format!("lift needs 1 ≤ ℓ ≤ n ≤ 64, got ℓ = {ell}, n = {n}")));
        }
        let bin = Binomials::new(n);
        let base = bin.get(n, ell);
        if base > MAX_BASE {
            return Err(Error::budget("ℓ-subsets", base));
        }
        let mut dim: u64 = 1;
        for _ in 0..blocks {
            dim = dim.checked_mul(base).ok_or_else(|| Error::budget("Kikuchi dimension (overflows u64)", u64::MAX))?;
        }
        Ok(Lift { n, ell, blocks, base, dim, bin })
    }

    pub fn binom(&self, n: usize, k: usize) -> u64 {
        self.bin.get(n, k)
    }

    /// `(rank(R ∪ {a}), rank(R ∪ {b}))` over (ℓ−1)-sets `R` avoiding `avoid`.
    pub fn link_pairs(&self, a: usize, b: usize, avoid: u64) -> Vec<(u64, u64)> {
        let free: Vec<usize> = (0..self.n).filter(|&v| avoid >> v & 1 == 0).collect();
        all_subsets(free.len(), self.ell - 1)
            .into_iter()
            .map(|m| {
                let r = members(m).into_iter().fold(0u64, |acc, i| acc | 1u64 << free[i]);
                (self.bin.rank(r | 1u64 << a), self.bin.rank(r | 1u64 << b))
            })
            .collect()
    }

    /// `S = T`, all ℓ-subsets.
    pub fn diag_pairs(&self) -> Vec<(u64, u64)> {
        (0..self.base).map(|s| (s, s)).collect()
    }

    /// `x_S` for every ℓ-subset, by rank.
    pub fn x_sub(&self, x: &[Sign]) -> Vec<Sign> {
        all_subsets(self.n, self.ell).into_iter().map(|m| members(m).into_iter().map(|v| x[v]).product()).collect()
    }

    /// `x'` at a tuple index.
    pub fn lifted(&self, xs: &[Sign], mut idx: u64) -> Sign {
        let mut s = 1;
        for _ in 0..self.blocks {
            s *= xs[(idx % self.base) as usize];
            idx /= self.base;
        }
        s
    }

    pub fn digits(&self, mut idx: u64) -> Vec<u64> {
        (0..self.blocks)
            .map(|_| {
                let d = idx % self.base;
                idx /= self.base;
                d
            })
            .collect()
    }

    pub fn subset(&self, rank: u64) -> u64 {
        self.bin.unrank(rank, self.ell)
    }
}

/// All `(row, col)` of the product of per-block pair lists.
fn expand(blocks: &[Vec<(u64, u64)>], base: u64) -> Vec<(u64, u64)> {
    let total: usize = blocks.iter().map(|b| b.len()).product();
    let mut out = Vec::with_capacity(total);
    if total == 0 {
        return out;
    }
    let mut digit = vec![0usize; blocks.len()];
    loop {
        let (mut r, mut c, mut p) = (0u64, 0u64, 1u64);
        for (h, b) in blocks.iter().enumerate() {
            let (s, t) = b[digit[h]];
            r += s * p;
            c += t * p;
            p = p.wrapping_mul(base);
        }
        out.push((r, c));
        let mut h = 0;
        loop {
            if h == blocks.len() {
                return out;
            }
            digit[h] += 1;
            if digit[h] < blocks[h].len() {
                break;
            }
            digit[h] = 0;
            h += 1;
        }
    }
}

#[derive(Clone, Debug)]
pub struct Label {
    /// Chain tuples behind the label: one, or the pair `C, C'`.
    pub chains: Vec<Vec<usize>>,
    /// Links of the chain (graph tail) or level of the part (hyper tail).
    pub t: usize,
    pub d: u64,
    /// Nonnegative, `1/D_t` included.
    pub weight: Q,
    pub entries: Vec<(u64, u64)>,
}

#[derive(Clone, Debug)]
pub struct Group {
    /// `(i, i)` for `A_i`, `(i, j)` for `A_{i,j}`.
    pub key: (usize, usize),
    pub sign: Sign,
    pub labels: Vec<Label>,
}

#[derive(Clone, Debug)]
pub struct KikuchiMatrix {
    pub kind: TailKind,
    pub lift: Lift,
    pub groups: Vec<Group>,
}

fn pow_checked(b: u64, e: usize) -> Result<u64> {
    let mut x: u64 = 1;
    for _ in 0..e {
        x = x.checked_mul(b).ok_or_else(|| Error::budget("D_t (overflows u64)", u64::MAX))?;
    }
    Ok(x)
}

/// `C(n−2, ℓ−1)^t`.
pub fn d_graph(lift: &Lift, t: usize) -> Result<u64> {
    pow_checked(lift.binom(lift.n - 2, lift.ell - 1), t)
}

/// `C(n−2, ℓ−1)^{2r+2−t} · C(n, ℓ)^t`.
pub fn d_hyper(lift: &Lift, r: usize, t: usize) -> Result<u64> {
    let a = d_graph(lift, 2 * r + 2 - t)?;
    a.checked_mul(pow_checked(lift.base, t)?).ok_or_else(|| Error::budget("D_t (overflows u64)", u64::MAX))
}

fn link_block(lift: &Lift, c: &WeightedChain, h: usize) -> Result<Vec<(u64, u64)>> {
    let (a, b) = c.link(h);
    if a == b {
        return Err(Error::Config(format!("degenerate link ({}, {})", a + 1, b + 1)));
    }
    Ok(lift.link_pairs(a, b, 1u64 << a | 1u64 << b))
}

/// `A = Σ_i b_i A_i` for a `Φ^(t)` instance.
pub fn build_graph_tail(inst: &ChainXorInstance, ell: usize, budget: u64) -> Result<KikuchiMatrix> {
    let t = match inst.kind {
        XorKind::Phi(t) => t,
        XorKind::Psi => return Err(Error::Config("graph-tail matrix needs a Φ^(t) instance".into())),
    };
    let lift = Lift::new(inst.nvars, ell, t)?;
    if inst.nvars < 2 {
        return Err(Error::Config("graph-tail matrix needs n ≥ 2".into()));
    }
    let d = d_graph(&lift, t)?;
    let live: Vec<_> = inst.terms.iter().filter(|term| !term.w.is_zero()).collect();
    let total = (live.len() as u64).saturating_mul(d);
    if total > budget {
        return Err(Error::budget("Kikuchi entries", total));
    }
    let dq = Q::from_integer(BigInt::from(d));
    let labels = par::map_slice(&live, |term| -> Result<(usize, Sign, Label)> {
        let blocks = (0..t).map(|h| link_block(&lift, &term.chain, h)).collect::<Result<Vec<_>>>()?;
        let sign = if term.w.is_negative() { -1 } else { 1 };
        let label = Label { chains: vec![term.chain.tuple.clone()], t, d, weight: term.w.abs() / &dq, entries: expand(&blocks, lift.base) };
        Ok((term.i, sign, label))
    });
    let mut groups: BTreeMap<usize, Group> = BTreeMap::new();
    for l in labels {
        let (i, sign, label) = l?;
        groups.entry(i).or_insert_with(|| Group { key: (i, i), sign, labels: Vec::new() }).labels.push(label);
    }
    Ok(KikuchiMatrix { kind: TailKind::Graph, lift, groups: groups.into_values().collect() })
}

fn other(link: (usize, usize), q: usize) -> Result<usize> {
    match link {
        (a, b) if a == q => Ok(b),
        (a, b) if b == q => Ok(a),
        (a, b) => Err(Error::Check(format!("link ({}, {}) misses part vertex {}", a + 1, b + 1, q + 1))),
    }
}

/// Smallest vertex other than `w`.
pub fn canonical_vertex(w: usize) -> usize {
    if w == 0 {
        1
    } else {
        0
    }
}

fn hyper_label(lift: &Lift, psi: &BipartitePsi, id: usize, c: &WeightedChain, c2: &WeightedChain, d: u64) -> Result<Label> {
    let r = psi.r;
    let (level, q) = &psi.parts[id];
    let free = r + 1 - level;
    let diag = lift.diag_pairs();
    let mut blocks = vec![Vec::new(); 2 * r + 2];
    for h in 0..=r {
        if h < free {
            blocks[h] = link_block(lift, c, h)?;
            blocks[r + 1 + h] = link_block(lift, c2, h)?;
        } else {
            let qv = q[h - free];
            let w = other(c.link(h), qv)?;
            let w2 = other(c2.link(h), qv)?;
            let avoid = if w != w2 { 1u64 << w | 1u64 << w2 } else { 1u64 << w | 1u64 << canonical_vertex(w) };
            blocks[h] = lift.link_pairs(w, w2, avoid);
            blocks[r + 1 + h] = diag.clone();
        }
    }
    let weight = &c.weight * &c2.weight / (&psi.part_wt[id] * Q::from_integer(BigInt::from(d)));
    let entries = expand(&blocks, lift.base);
    debug_assert_eq!(entries.len() as u64, d);
    Ok(Label { chains: vec![c.tuple.clone(), c2.tuple.clone()], t: *level, d, weight, entries })
}

/// `A_M = Σ_{(i,j) ∈ M} b_i b_j A_{i,j}` over the `(2r+2)`-fold lift.
pub fn build_hyper_tail(psi: &BipartitePsi, m: &[(usize, usize)], ell: usize, budget: u64) -> Result<KikuchiMatrix> {
    let r = psi.r;
    if psi.nvars < 2 {
        return Err(Error::Config("hyper-tail matrix needs n ≥ 2".into()));
    }
    let lift = Lift::new(psi.nvars, ell, 2 * r + 2)?;
    let mut jobs = Vec::new();
    let mut total: u64 = 0;
    for &(i, j) in m {
        for id in 0..psi.parts.len() {
            let (Some(ci), Some(cj)) = (psi.classes.get(&(i, id)), psi.classes.get(&(j, id))) else {
                continue;
            };
            let d = d_hyper(&lift, r, psi.parts[id].0)?;
            for c in ci.iter().filter(|c| !c.weight.is_zero()) {
                for c2 in cj.iter().filter(|c| !c.weight.is_zero()) {
                    total = total.saturating_add(d);
                    if total > budget {
                        return Err(Error::budget("Kikuchi entries", total));
                    }
                    jobs.push((i, j, id, c, c2, d));
                }
            }
        }
    }
    let labels = par::map_slice(&jobs, |&(i, j, id, c, c2, d)| hyper_label(&lift, psi, id, c, c2, d).map(|l| ((i, j), l)));
    let mut groups: BTreeMap<(usize, usize), Group> = BTreeMap::new();
    for l in labels {
        let (key, label) = l?;
        let sign = psi.b[key.0] * psi.b[key.1];
        groups.entry(key).or_insert_with(|| Group { key, sign, labels: Vec::new() }).labels.push(label);
    }
    Ok(KikuchiMatrix { kind: TailKind::Hyper, lift, groups: groups.into_values().collect() })
}

fn label_form(lift: &Lift, xs: &[Sign], entries: &[(u64, u64)]) -> i64 {
    entries.iter().map(|&(r, c)| (lift.lifted(xs, r) * lift.lifted(xs, c)) as i64).sum()
}

impl KikuchiMatrix {
    pub fn dim(&self) -> u64 {
        self.lift.dim
    }

    pub fn label_count(&self) -> usize {
        self.groups.iter().map(|g| g.labels.len()).sum()
    }

    pub fn entry_count(&self) -> u64 {
        self.groups.iter().flat_map(|g| &g.labels).map(|l| l.entries.len() as u64).sum()
    }

    /// Labels whose entry count differs from `D_t`.
    pub fn count_mismatches(&self) -> usize {
        self.groups.iter().flat_map(|g| &g.labels).filter(|l| l.entries.len() as u64 != l.d).count()
    }

    /// `x'ᵀ A x'`, exactly.
    pub fn quad_form(&self, x: &[Sign]) -> Q {
        let xs = self.lift.x_sub(x);
        let flat: Vec<(Sign, &Label)> = self.groups.iter().flat_map(|g| g.labels.iter().map(move |l| (g.sign, l))).collect();
        let sums = par::map_slice(&flat, |&(_, l)| label_form(&self.lift, &xs, &l.entries));
        let mut acc = Q::zero();
        for ((sign, l), s) in flat.iter().zip(sums) {
            acc += &l.weight * Q::from_integer(BigInt::from(s * *sign as i64));
        }
        acc
    }
}

/// `f_M(x)` from the `Ψ_{i,Q}` directly.
pub fn cross_term_eval(psi: &BipartitePsi, m: &[(usize, usize)], x: &[Sign]) -> Q {
    let xb = sign_bits(x);
    let mut acc = Q::zero();
    for &(i, j) in m {
        let s = Q::from_integer(BigInt::from(psi.b[i] * psi.b[j]));
        for id in 0..psi.parts.len() {
            if psi.psi.contains_key(&(i, id)) && psi.psi.contains_key(&(j, id)) {
                acc += &s * psi.psi_eval(i, id, &xb) * psi.psi_eval(j, id, &xb) / &psi.part_wt[id];
            }
        }
    }
    acc
}

/// Coefficients of `f_M`.
pub fn cross_term(psi: &BipartitePsi, m: &[(usize, usize)]) -> BTreeMap<BitVec, Q> {
    let mut out: BTreeMap<BitVec, Q> = BTreeMap::new();
    for &(i, j) in m {
        let s = Q::from_integer(BigInt::from(psi.b[i] * psi.b[j]));
        for id in 0..psi.parts.len() {
            let (Some(pi), Some(pj)) = (psi.psi.get(&(i, id)), psi.psi.get(&(j, id))) else {
                continue;
            };
            let scale = &s / &psi.part_wt[id];
            for (m1, w1) in pi {
                for (m2, w2) in pj {
                    let mut key = m1.clone();
                    key.xor_assign(m2);
                    *out.entry(key).or_insert_with(Q::zero) += w1 * w2 * &scale;
                }
            }
        }
    }
    out.retain(|_, w| !w.is_zero());
    out
}

/// `Σ_i Ψ_{i,Q}(x)² / wt(Q)` summed over `Q`, with `x` given as sign bits.
pub fn diagonal_eval(psi: &BipartitePsi, xb: &BitVec) -> Q {
    psi.psi.keys().map(|&(i, id)| psi.psi_eval(i, id, xb).pow(2) / &psi.part_wt[id]).sum()
}

/// Upper bound on [`diagonal_eval`] from class masses.
pub fn diagonal_bound(psi: &BipartitePsi) -> Q {
    psi.psi.iter().map(|(&(_, id), mons)| mons.values().map(|w| w.abs()).sum::<Q>().pow(2) / &psi.part_wt[id]).sum()
}

/// Whether `χ` of a label's monomial agrees with each entry; used by tests.
pub fn label_monomial_ok(lift: &Lift, label: &Label, mono: &BitVec, x: &[Sign]) -> bool {
    let xs = lift.x_sub(x);
    let want = chi(mono, &sign_bits(x)) as Sign;
    label.entries.iter().all(|&(r, c)| lift.lifted(&xs, r) * lift.lifted(&xs, c) == want)
}

#[derive(Clone, Debug)]
pub struct PruneParams {
    pub gamma: Q,
    /// `δn`, hyper tail only.
    pub delta_n: Option<Q>,
    /// `r` in the `(1 + c·ℓr/n)` window.
    pub r: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct ShortLabel {
    pub group: (usize, usize),
    pub label: usize,
    pub retained: u64,
    pub need: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct PruneStats {
    pub gamma: f64,
    /// Threshold times `N`.
    pub threshold_n: f64,
    pub pruned_rows: usize,
    pub pruned_cols: usize,
    pub labels: usize,
    /// Smallest retained fraction before truncation.
    pub min_retention: f64,
    /// Smallest `⌈D_t/2⌉/D_t`.
    pub kept_fraction: f64,
    pub short: Vec<ShortLabel>,
    /// Largest `E_S[deg(S)]` over groups, over its target (`4/N` or `1/(Nδn)`).
    pub first_ratio: f64,
    /// Largest per-label mean degree, over its target (`16/N` or `4/(Nδn)`).
    pub cond_ratio: f64,
    /// `max(0, cond_ratio − 1)·n/(ℓr)`; with `ℓr = 0` the window is exact and
    /// any excess is infinite.
    pub cond_c: f64,
    /// Pruning left a label short and the unpruned matrix was kept instead.
    pub fallback: bool,
}

#[derive(Clone, Debug)]
pub struct PrunedGroup {
    pub key: (usize, usize),
    pub sign: Sign,
    /// Weight with `D_t/⌈D_t/2⌉` folded in, and the kept entries.
    pub labels: Vec<(Q, Vec<(u64, u64)>)>,
}

#[derive(Clone, Debug)]
pub struct Pruned {
    pub kind: TailKind,
    pub lift: Lift,
    pub groups: Vec<PrunedGroup>,
}

struct GroupPrune {
    rows: usize,
    cols: usize,
    first: Q,
    cond: Q,
    min_ret: f64,
    kept: f64,
    short: Vec<ShortLabel>,
    labels: Vec<(Q, Vec<(u64, u64)>)>,
}

fn lcm_scale(ws: &[&Q]) -> (BigInt, Vec<BigInt>) {
    let scale = ws.iter().fold(BigInt::one(), |acc, w| acc.lcm(w.denom()));
    let nums = ws.iter().map(|w| w.numer() * (&scale / w.denom())).collect();
    (scale, nums)
}

fn prune_group(g: &Group, thr: &Q, keep_all: bool) -> GroupPrune {
    let weights: Vec<&Q> = g.labels.iter().map(|l| &l.weight).collect();
    let (scale, nums) = lcm_scale(&weights);
    let mut rdeg: HashMap<u64, BigInt> = HashMap::new();
    let mut cdeg: HashMap<u64, BigInt> = HashMap::new();
    let mut mass = BigInt::zero();
    for (l, w) in g.labels.iter().zip(&nums) {
        for &(r, c) in &l.entries {
            *rdeg.entry(r).or_default() += w;
            *cdeg.entry(c).or_default() += w;
        }
        mass += w * BigInt::from(l.entries.len());
    }
    let cut = thr * Q::from_integer(scale.clone());
    let heavy = |m: &HashMap<u64, BigInt>| -> std::collections::HashSet<u64> {
        m.iter().filter(|(_, v)| Q::from_integer((*v).clone()) >= cut).map(|(&k, _)| k).collect()
    };
    let (b1, b2) = (heavy(&rdeg), heavy(&cdeg));
    let mut cond = Q::zero();
    let mut min_ret = 1.0f64;
    let mut kept = 1.0f64;
    let mut short = Vec::new();
    let mut labels = Vec::with_capacity(g.labels.len());
    for (li, l) in g.labels.iter().enumerate() {
        if l.d == 0 {
            continue;
        }
        let s: BigInt = l.entries.iter().map(|(r, _)| &rdeg[r]).sum();
        let mean = Q::new(s, &scale * BigInt::from(l.d));
        if mean > cond {
            cond = mean;
        }
        if keep_all {
            labels.push((l.weight.clone(), l.entries.clone()));
            continue;
        }
        let keep: Vec<(u64, u64)> = l.entries.iter().copied().filter(|(r, c)| !b1.contains(r) && !b2.contains(c)).collect();
        let need = l.d.div_ceil(2);
        min_ret = min_ret.min(keep.len() as f64 / l.d as f64);
        kept = kept.min(need as f64 / l.d as f64);
        if (keep.len() as u64) < need {
            short.push(ShortLabel { group: g.key, label: li, retained: keep.len() as u64, need });
            continue;
        }
        let w = &l.weight * Q::new(BigInt::from(l.d), BigInt::from(need));
        labels.push((w, keep.into_iter().take(need as usize).collect()));
    }
    GroupPrune { rows: b1.len(), cols: b2.len(), first: Q::new(mass, scale), cond, min_ret, kept, short, labels }
}

/// Zeroes heavy rows and columns of each `A_i` (or `A_{i,j}`), then keeps
/// exactly `⌈D_t/2⌉` entries of every label. Fails if a label is left short.
pub fn prune(m: &KikuchiMatrix, p: &PruneParams) -> Result<(Pruned, PruneStats)> {
    let (pruned, stats) = prune_inner(m, p, false)?;
    if let Some(s) = stats.short.first() {
        return Err(Error::Check(format!(
            "{} labels keep fewer than ⌈D_t/2⌉ entries at Γ = {}; first: group ({}, {}) label {} keeps {} of {} needed",
            stats.short.len(),
            stats.gamma,
            s.group.0 + 1,
            s.group.1 + 1,
            s.label,
            s.retained,
            s.need
        )));
    }
    Ok((pruned, stats))
}

fn prune_inner(m: &KikuchiMatrix, p: &PruneParams, keep_all: bool) -> Result<(Pruned, PruneStats)> {
    let nq = Q::from_integer(BigInt::from(m.lift.dim));
    let (unit, first_t, cond_t) = match m.kind {
        TailKind::Graph => (Q::one() / &nq, 4, 16),
        TailKind::Hyper => {
            let dn = p.delta_n.as_ref().ok_or_else(|| Error::Config("hyper-tail pruning needs δn".into()))?;
            if !dn.is_positive() {
                return Err(Error::Config("δn must be positive".into()));
            }
            (Q::one() / (&nq * dn), 1, 4)
        }
    };
    let thr = &p.gamma * &unit;
    let parts = par::map_slice(&m.groups, |g| prune_group(g, &thr, keep_all));
    let f = |x: &Q| x.to_f64().unwrap_or(f64::INFINITY);
    let mut stats = PruneStats {
        gamma: f(&p.gamma),
        threshold_n: f(&(&thr * &nq)),
        pruned_rows: 0,
        pruned_cols: 0,
        labels: m.label_count(),
        min_retention: 1.0,
        kept_fraction: 1.0,
        short: Vec::new(),
        first_ratio: 0.0,
        cond_ratio: 0.0,
        cond_c: 0.0,
        fallback: false,
    };
    let mut groups = Vec::with_capacity(parts.len());
    for (g, gp) in m.groups.iter().zip(parts) {
        stats.pruned_rows += gp.rows;
        stats.pruned_cols += gp.cols;
        stats.min_retention = stats.min_retention.min(gp.min_ret);
        stats.kept_fraction = stats.kept_fraction.min(gp.kept);
        stats.first_ratio = stats.first_ratio.max(f(&(gp.first / &nq / (&unit * Q::from_integer(BigInt::from(first_t))))));
        stats.cond_ratio = stats.cond_ratio.max(f(&(gp.cond / (&unit * Q::from_integer(BigInt::from(cond_t))))));
        stats.short.extend(gp.short);
        groups.push(PrunedGroup { key: g.key, sign: g.sign, labels: gp.labels });
    }
    let lr = (m.lift.ell * p.r) as f64;
    let excess = (stats.cond_ratio - 1.0).max(0.0);
    stats.cond_c = if lr > 0.0 {
        excess * m.lift.n as f64 / lr
    } else if excess > 1e-12 {
        f64::INFINITY
    } else {
        0.0
    };
    Ok((Pruned { kind: m.kind, lift: m.lift.clone(), groups }, stats))
}

/// [`prune`], or the unpruned matrix with `fallback` set when a label would
/// be left short. The statistics are those of the attempted pruning.
pub fn prune_or_keep(m: &KikuchiMatrix, p: &PruneParams) -> Result<(Pruned, PruneStats)> {
    let (pruned, mut stats) = prune_inner(m, p, false)?;
    if stats.short.is_empty() {
        return Ok((pruned, stats));
    }
    let (kept, _) = prune_inner(m, p, true)?;
    stats.fallback = true;
    stats.kept_fraction = 1.0;
    Ok((kept, stats))
}

impl Pruned {
    /// `x'ᵀ B x'`, exactly.
    pub fn quad_form(&self, x: &[Sign]) -> Q {
        let xs = self.lift.x_sub(x);
        let mut acc = Q::zero();
        for g in &self.groups {
            for (w, entries) in &g.labels {
                acc += w * Q::from_integer(BigInt::from(label_form(&self.lift, &xs, entries) * g.sign as i64));
            }
        }
        acc
    }

    fn assemble_groups<'a>(&self, groups: impl Iterator<Item = &'a PrunedGroup>) -> SparseMatrix {
        let flat: Vec<(Q, &Vec<(u64, u64)>)> =
            groups.flat_map(|g| g.labels.iter().map(move |(w, e)| (w * Q::from_integer(BigInt::from(g.sign)), e))).collect();
        let ws: Vec<&Q> = flat.iter().map(|(w, _)| w).collect();
        let (scale, nums) = lcm_scale(&ws);
        let mut acc: HashMap<(u64, u64), BigInt> = HashMap::new();
        for ((_, entries), w) in flat.iter().zip(&nums) {
            for &rc in entries.iter() {
                *acc.entry(rc).or_default() += w;
            }
        }
        let entries: Vec<(u64, u64, f64)> = acc
            .into_iter()
            .filter(|(_, v)| !v.is_zero())
            .map(|((r, c), v)| (r, c, Q::new(v, scale.clone()).to_f64().unwrap_or(f64::NAN)))
            .collect();
        SparseMatrix::new(self.lift.dim, self.lift.dim, entries)
    }

    /// The summed matrix `B`.
    pub fn assemble(&self) -> SparseMatrix {
        self.assemble_groups(self.groups.iter())
    }

    /// `B_i` (or `B_{i,j}`) without its sign.
    pub fn group_matrix(&self, gi: usize) -> SparseMatrix {
        let g = &self.groups[gi];
        let unsigned = PrunedGroup { key: g.key, sign: 1, labels: g.labels.clone() };
        self.assemble_groups(std::iter::once(&unsigned))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain_xor::{build_instance, decompose, LinkLists, Term};
    use crate::decoder::synthetic_collection;
    use crate::rational;

    fn all_x(n: usize) -> impl Iterator<Item = Vec<Sign>> {
        (0..1u64 << n).map(move |m| (0..n).map(|v| if m >> v & 1 == 1 { -1 } else { 1 }).collect())
    }

    #[test]
    fn link_pairs_match_brute() {
        let lift = Lift::new(7, 3, 1).unwrap();
        let subs = all_subsets(7, 3);
        for (a, b) in [(0, 1), (4, 2), (6, 0)] {
            let mut got = lift.link_pairs(a, b, 1 << a | 1 << b);
            got.sort();
            let mut want = Vec::new();
            for (i, &s) in subs.iter().enumerate() {
                for (j, &t) in subs.iter().enumerate() {
                    if s ^ t == 1 << a | 1 << b && s >> a & 1 == 1 && t >> b & 1 == 1 {
                        want.push((i as u64, j as u64));
                    }
                }
            }
            assert_eq!(got, want);
            assert_eq!(got.len() as u64, lift.binom(5, 2));
        }
    }

    #[test]
    fn coincident_rule_count() {
        let lift = Lift::new(8, 3, 1).unwrap();
        for w in 0..8 {
            let v = canonical_vertex(w);
            let got = lift.link_pairs(w, w, 1 << w | 1 << v);
            let brute = all_subsets(8, 3).into_iter().filter(|s| s >> w & 1 == 1 && s >> v & 1 == 0).count();
            assert_eq!(got.len(), brute);
            assert_eq!(got.len() as u64, lift.binom(6, 2));
            assert!(got.iter().all(|(s, t)| s == t));
        }
    }

    #[test]
    fn single_chain_t1_l1() {
        let chain = WeightedChain { tuple: vec![0, 1, 2], weight: rational::q(1, 2), kind: TailKind::Graph };
        let inst = ChainXorInstance { kind: XorKind::Phi(1), k: 1, r: 1, nvars: 4, terms: vec![Term { i: 0, chain, w: rational::q(1, 2) }] };
        let m = build_graph_tail(&inst, 1, 1000).unwrap();
        assert_eq!(m.entry_count(), 1);
        assert_eq!(m.count_mismatches(), 0);
        for x in all_x(4) {
            assert_eq!(m.quad_form(&x), inst.evaluate(&x).unwrap());
        }
    }

    #[test]
    fn empty_instance_is_zero() {
        let inst = ChainXorInstance { kind: XorKind::Phi(2), k: 2, r: 1, nvars: 5, terms: Vec::new() };
        let m = build_graph_tail(&inst, 2, 1000).unwrap();
        assert_eq!(m.entry_count(), 0);
        assert!(m.quad_form(&[1, -1, 1, 1, -1]).is_zero());
    }

    fn toy(n: usize, seed: u64) -> (LinkLists, Vec<usize>, Vec<Sign>) {
        let col = synthetic_collection(n, 2, 2, seed);
        (LinkLists::new(&col), vec![0, 2, 3], vec![1, -1, 1])
    }

    #[test]
    fn graph_tail_identity_exhaustive() {
        for (t, ell) in [(1, 1), (1, 2), (2, 1), (2, 2)] {
            let (ll, heads, b) = toy(6, 3 + t as u64);
            let inst = build_instance(&ll, &heads, &b, XorKind::Phi(t), 1, 1 << 20).unwrap();
            let m = build_graph_tail(&inst, ell, 1 << 24).unwrap();
            assert_eq!(m.count_mismatches(), 0);
            for x in all_x(6) {
                assert_eq!(m.quad_form(&x), inst.evaluate(&x).unwrap(), "t = {t}, ℓ = {ell}");
            }
        }
    }

    #[test]
    fn hyper_tail_identity_exhaustive() {
        for (r, ell, delta) in [(0, 1, rational::q(1, 1)), (0, 2, rational::q(1, 1)), (1, 1, rational::q(1, 1)), (1, 1, rational::q(1, 64))] {
            let (ll, heads, b) = toy(6, 11);
            let dec = decompose(&ll, &heads, &b, r, 1, &delta, 1 << 20).unwrap();
            let m = [(0, 1), (2, 0)];
            let a = build_hyper_tail(&dec.psi, &m, ell, 1 << 24).unwrap();
            assert!(a.label_count() > 0);
            assert_eq!(a.count_mismatches(), 0);
            let coeffs = cross_term(&dec.psi, &m);
            for x in all_x(6) {
                let want = cross_term_eval(&dec.psi, &m, &x);
                assert_eq!(a.quad_form(&x), want, "r = {r}, ℓ = {ell}");
                let xb = sign_bits(&x);
                let direct: Q = coeffs.iter().map(|(mo, w)| w * Q::from_integer(BigInt::from(chi(mo, &xb)))).sum();
                assert_eq!(direct, want);
            }
        }
    }

    #[test]
    fn heavy_row_is_zeroed() {
        let lift = Lift::new(6, 3, 1).unwrap();
        let quarter = rational::q(1, 4);
        let labels = (0..5u64)
            .map(|l| Label {
                chains: Vec::new(),
                t: 1,
                d: 4,
                weight: quarter.clone(),
                entries: vec![(0, l), (1 + 3 * l, l), (2 + 3 * l, l), (3 + 3 * l, l)],
            })
            .collect();
        let m = KikuchiMatrix { kind: TailKind::Graph, lift, groups: vec![Group { key: (0, 0), sign: 1, labels }] };
        let p = PruneParams { gamma: rational::qi(24), delta_n: None, r: 1 };
        let (b, st) = prune(&m, &p).unwrap();
        assert_eq!((st.pruned_rows, st.pruned_cols), (1, 0));
        assert!((st.min_retention - 0.75).abs() < 1e-12);
        for (_, e) in &b.groups[0].labels {
            assert_eq!(e.len(), 2);
            assert!(e.iter().all(|&(r, _)| r != 0));
        }
        let p = PruneParams { gamma: rational::qi(4), delta_n: None, r: 1 };
        assert!(matches!(prune(&m, &p), Err(Error::Check(_))));
    }

    #[test]
    fn biregular_nothing_pruned() {
        let lift = Lift::new(6, 1, 1).unwrap();
        let labels = (0..6u64).map(|l| Label { chains: Vec::new(), t: 1, d: 1, weight: rational::q(1, 6), entries: vec![(l, (l + 1) % 6)] }).collect();
        let m = KikuchiMatrix { kind: TailKind::Graph, lift, groups: vec![Group { key: (0, 0), sign: -1, labels }] };
        let (b, st) = prune(&m, &PruneParams { gamma: rational::qi(64), delta_n: None, r: 1 }).unwrap();
        assert_eq!(st.pruned_rows + st.pruned_cols, 0);
        assert_eq!(b.groups[0].labels.len(), 6);
    }

    #[test]
    fn pruned_identity_is_exact() {
        let (ll, heads, b) = toy(6, 21);
        let inst = build_instance(&ll, &heads, &b, XorKind::Phi(1), 1, 1 << 20).unwrap();
        let m = build_graph_tail(&inst, 2, 1 << 24).unwrap();
        let (pb, st) = prune(&m, &PruneParams { gamma: rational::qi(64), delta_n: None, r: 1 }).unwrap();
        assert!(st.kept_fraction >= 0.5);
        for x in all_x(6) {
            assert_eq!(pb.quad_form(&x), inst.evaluate(&x).unwrap());
        }
    }
}
