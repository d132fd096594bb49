//! Uncolored Kikuchi graphs over design chains, their degree moments,
//! pruning and matching, and the induced 2-query code.

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_traits::{ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::chains::{enumerate_with, Chain, ChainOpts, LinkTable};
use crate::design::{systematic_basis, DesignLcc, MatchingFamily};
use crate::error::{Error, Result};
use crate::gf2::BitVec;
use crate::par;
use crate::rational::{self, binom, factorial, Q};
use crate::subsets::{all_subsets, random_subset, Binomials};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct KikuchiParams {
    pub n: usize,
    pub r: usize,
    pub ell: usize,
    pub head: usize,
}

impl KikuchiParams {
    /// `slack` bounds ℓ⁴ ≤ n·slack.
    pub fn validate(&self, slack: f64) -> Result<()> {
        if self.n > 64 {
            return Err(Error::Config(format!("n = {} exceeds 64 (subset masks)", self.n)));
        }
        if self.r == 0 || self.ell < self.r {
            return Err(Error::Config(format!("need 1 ≤ r ≤ ℓ, got r={} ℓ={}", self.r, self.ell)));
        }
        if self.ell > self.n {
            return Err(Error::Config(format!("ℓ={} exceeds n={}", self.ell, self.n)));
        }
        if (self.ell as f64).powi(4) > self.n as f64 * slack {
            return Err(Error::Config(format!(
                "ℓ⁴ = {} exceeds n·slack = {}",
                self.ell.pow(4),
                self.n as f64 * slack
            )));
        }
        if self.head >= self.n {
            return Err(Error::Config(format!("head {} out of range", self.head + 1)));
        }
        Ok(())
    }

    pub fn num_subsets(&self) -> BigInt {
        binom(self.n as i64, self.ell as i64)
    }

    /// Edges contributed by one chain with distinct halves.
    pub fn edges_per_chain(&self) -> BigInt {
        binom(self.n as i64 - 2 * self.r as i64, self.ell as i64 - self.r as i64)
    }

    /// `d_R = |chains|·C(n−2r,ℓ−r)/C(n,ℓ)`.
    pub fn d_r(&self, chains: u64) -> Q {
        Q::new(self.edges_per_chain() * BigInt::from(chains), self.num_subsets())
    }

    /// `d_L = d_R / n`.
    pub fn d_l(&self, chains: u64) -> Q {
        self.d_r(chains) / Q::from_integer(BigInt::from(self.n))
    }

    /// `η = n / C(ℓ, r)`.
    pub fn eta(&self) -> f64 {
        self.n as f64 / rational::to_f64(&Q::from_integer(binom(self.ell as i64, self.r as i64)))
    }
}

/// Masks of a chain's halves, with the parts of each half that avoid the other.
#[derive(Clone, Copy, Debug)]
pub struct ChainMasks {
    pub l: u64,
    pub r: u64,
    /// `C_L \ C_R`
    pub lb: u64,
    /// `C_R \ C_L`
    pub rb: u64,
    pub tail: usize,
    /// Both halves have r distinct vertices.
    pub valid: bool,
}

impl ChainMasks {
    pub fn of(c: &Chain) -> ChainMasks {
        let l = c.left().iter().fold(0u64, |m, &v| m | 1 << v);
        let r = c.right().iter().fold(0u64, |m, &v| m | 1 << v);
        let k = c.r() as u32;
        ChainMasks { l, r, lb: l & !r, rb: r & !l, tail: c.tail(), valid: l.count_ones() == k && r.count_ones() == k }
    }
}

/// Scatter the low bits of `bits` into the set positions of `mask`.
pub fn deposit(mut bits: u64, mut mask: u64) -> u64 {
    let mut out = 0;
    while mask != 0 && bits != 0 {
        let low = mask & mask.wrapping_neg();
        if bits & 1 == 1 {
            out |= low;
        }
        bits >>= 1;
        mask &= mask - 1;
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Edge {
    pub left: u32,
    pub right: u32,
    pub chain: u32,
}

#[derive(Clone, Debug)]
pub struct KikuchiGraph {
    pub params: KikuchiParams,
    pub num_subsets: usize,
    pub chains: Vec<Chain>,
    pub edges: Vec<Edge>,
}

impl KikuchiGraph {
    pub fn n_left(&self) -> usize {
        self.num_subsets * self.params.n
    }

    pub fn n_right(&self) -> usize {
        self.num_subsets
    }

    pub fn left_degrees(&self) -> Vec<u64> {
        let mut d = vec![0u64; self.n_left()];
        for e in &self.edges {
            d[e.left as usize] += 1;
        }
        d
    }

    pub fn right_degrees(&self) -> Vec<u64> {
        let mut d = vec![0u64; self.n_right()];
        for e in &self.edges {
            d[e.right as usize] += 1;
        }
        d
    }

    /// `(S mask, w)` of a left index.
    pub fn left_vertex(&self, b: &Binomials, idx: usize) -> (u64, usize) {
        let n = self.params.n;
        (b.unrank((idx / n) as u64, self.params.ell), idx % n)
    }

    pub fn bipartite(&self) -> BipGraph {
        BipGraph {
            n_left: self.n_left(),
            n_right: self.n_right(),
            edges: self.edges.iter().map(|e| (e.left, e.right)).collect(),
        }
    }
}

pub fn build_graph(lt: &LinkTable, params: KikuchiParams, opts: ChainOpts) -> Result<KikuchiGraph> {
    let chains = enumerate_with(lt, params.head, params.r, opts)?;
    graph_from_chains(params, chains, opts.budget)
}

pub fn graph_from_chains(params: KikuchiParams, chains: Vec<Chain>, budget: u64) -> Result<KikuchiGraph> {
    let n = params.n;
    let nsub = params.num_subsets().to_u64().unwrap_or(u64::MAX);
    let left = nsub.saturating_mul(n as u64);
    if left > budget || left > u32::MAX as u64 {
        return Err(Error::budget("Kikuchi left vertices", left));
    }
    let b = Binomials::new(n);
    let full = if n == 64 { u64::MAX } else { (1u64 << n) - 1 };
    let masks: Vec<ChainMasks> = chains.iter().map(ChainMasks::of).collect();
    let mut total: u64 = 0;
    for m in &masks {
        if m.valid {
            let free = n - (m.l | m.r).count_ones() as usize;
            total = total.saturating_add(b.get(free, params.ell - params.r));
        }
    }
    if total > budget {
        return Err(Error::budget("Kikuchi edges", total));
    }
    let per_chain = par::map_range(masks.len(), |ci| {
        let m = masks[ci];
        let mut es = Vec::new();
        if !m.valid {
            return es;
        }
        let comp = full & !(m.l | m.r);
        let free = comp.count_ones() as usize;
        for bits in all_subsets(free, params.ell - params.r) {
            let u = deposit(bits, comp);
            let s = m.l | u;
            let t = m.r | u;
            es.push(Edge {
                left: (b.rank(s) as usize * n + m.tail) as u32,
                right: b.rank(t) as u32,
                chain: ci as u32,
            });
        }
        es
    });
    let edges = per_chain.into_iter().flatten().collect();
    Ok(KikuchiGraph { params, num_subsets: nsub as usize, chains, edges })
}

/// Edges whose decode identity `x_w + Σ_S x + Σ_T x = x_u` fails on some
/// dual basis vector.
pub fn decode_failures(g: &KikuchiGraph, lcc: &DesignLcc) -> Vec<Edge> {
    let n = g.params.n;
    let b = Binomials::new(n);
    let xs: Vec<u64> = lcc.dual_basis.iter().map(|x| x.words()[0]).collect();
    let u = g.params.head;
    let bad = par::map_slice(&g.edges, |e| {
        let (s, w) = g.left_vertex(&b, e.left as usize);
        let t = b.unrank(e.right as u64, g.params.ell);
        let ok = xs.iter().all(|&x| {
            let lhs = ((s ^ t) & x).count_ones() & 1 == 1;
            (lhs ^ (x >> w & 1 == 1)) == (x >> u & 1 == 1)
        });
        (!ok).then_some(*e)
    });
    bad.into_iter().flatten().collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct ExactMoments {
    #[serde(with = "rational::serde_q")]
    pub d_l: Q,
    #[serde(with = "rational::serde_q")]
    pub d_l2: Q,
    #[serde(with = "rational::serde_q")]
    pub d_r: Q,
    #[serde(with = "rational::serde_q")]
    pub d_r2: Q,
}

/// Moments straight from the explicit graph's degree sequence.
pub fn moments_from_graph(g: &KikuchiGraph) -> ExactMoments {
    let ld = g.left_degrees();
    let rd = g.right_degrees();
    let mean = |d: &[u64], sq: bool| {
        let s: BigInt = d.iter().map(|&x| BigInt::from(if sq { x * x } else { x })).sum();
        Q::new(s, BigInt::from(d.len()))
    };
    ExactMoments { d_l: mean(&ld, false), d_l2: mean(&ld, true), d_r: mean(&rd, false), d_r2: mean(&rd, true) }
}

const H: usize = 65;

/// Histogram of `(|A|, |B|)` over ordered chain pairs, with `A` the union of
/// the required halves and `B` the union of the forbidden parts (pairs with
/// `A ∩ B ≠ ∅` dropped).
fn pair_histogram(ms: &[ChainMasks], right: bool) -> Vec<u64> {
    let valid: Vec<&ChainMasks> = ms.iter().filter(|m| m.valid).collect();
    let block = 64;
    let nb = valid.len().div_ceil(block);
    let parts = par::map_range(nb, |bi| {
        let mut h = vec![0u64; H * H];
        for i in bi * block..((bi + 1) * block).min(valid.len()) {
            let a = valid[i];
            for c in &valid {
                let (req, forb) = if right { (a.r | c.r, a.lb | c.lb) } else { (a.l | c.l, a.rb | c.rb) };
                if req & forb == 0 {
                    h[req.count_ones() as usize * H + forb.count_ones() as usize] += 1;
                }
            }
        }
        h
    });
    let mut h = vec![0u64; H * H];
    for p in parts {
        for (x, y) in h.iter_mut().zip(p) {
            *x += y;
        }
    }
    h
}

fn hist_sum(h: &[u64], n: usize, ell: usize) -> BigInt {
    let mut s = BigInt::zero();
    for a in 0..H {
        for b in 0..H {
            let c = h[a * H + b];
            if c > 0 && a <= ell {
                s += BigInt::from(c) * binom(n as i64 - a as i64 - b as i64, (ell - a) as i64);
            }
        }
    }
    s
}

/// Exact moments by chain-pair enumeration; never touches the C(n,ℓ) vertices.
pub fn moments_from_pairs(params: &KikuchiParams, chains: &[Chain]) -> ExactMoments {
    let n = params.n;
    let ell = params.ell;
    let ms: Vec<ChainMasks> = chains.iter().map(ChainMasks::of).collect();
    let nsub = Q::from_integer(params.num_subsets());
    let nq = Q::from_integer(BigInt::from(n));
    let mut first = BigInt::zero();
    for m in ms.iter().filter(|m| m.valid) {
        first += binom(n as i64 - (m.l | m.r).count_ones() as i64, (ell - params.r) as i64);
    }
    let d_r = Q::from_integer(first.clone()) / &nsub;
    let d_l = &d_r / &nq;
    let d_r2 = Q::from_integer(hist_sum(&pair_histogram(&ms, true), n, ell)) / &nsub;
    let mut by_tail: BTreeMap<usize, Vec<ChainMasks>> = BTreeMap::new();
    for m in &ms {
        by_tail.entry(m.tail).or_default().push(*m);
    }
    let mut left = BigInt::zero();
    for group in by_tail.values() {
        left += hist_sum(&pair_histogram(group, false), n, ell);
    }
    let d_l2 = Q::from_integer(left) / (nsub * nq);
    ExactMoments { d_l, d_l2, d_r, d_r2 }
}

#[derive(Clone, Debug, Serialize)]
pub struct McMoments {
    pub samples: usize,
    pub d_l: f64,
    pub d_l2: f64,
    pub d_r: f64,
    pub d_r2: f64,
    pub se_l2: f64,
    pub se_r2: f64,
    pub se_l: f64,
    pub se_r: f64,
}

fn block_rng(seed: u64, block: u64) -> ChaCha8Rng {
    let mut z = seed ^ block.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    ChaCha8Rng::seed_from_u64(z ^ (z >> 31))
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let k = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / k;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (k - 1.0).max(1.0);
    (m, (v / k).sqrt())
}

/// Uniform `(S,w)` and `T` samples, degrees by scanning the chains.
pub fn moments_monte_carlo(params: &KikuchiParams, chains: &[Chain], seed: u64, samples: usize) -> McMoments {
    let n = params.n;
    let ell = params.ell;
    let ms: Vec<ChainMasks> = chains.iter().map(ChainMasks::of).filter(|m| m.valid).collect();
    let mut by_tail: Vec<Vec<ChainMasks>> = vec![Vec::new(); n];
    for m in &ms {
        by_tail[m.tail].push(*m);
    }
    let block = 256;
    let nb = samples.div_ceil(block);
    let parts = par::map_range(nb, |bi| {
        let mut rng = block_rng(seed, bi as u64);
        let cnt = block.min(samples - bi * block);
        let mut out = Vec::with_capacity(cnt);
        for _ in 0..cnt {
            let s = random_subset(&mut rng, n, ell);
            let w = rng.random_range(0..n);
            let dl = by_tail[w].iter().filter(|m| m.l & !s == 0 && m.rb & s == 0).count() as f64;
            let t = random_subset(&mut rng, n, ell);
            let dr = ms.iter().filter(|m| m.r & !t == 0 && m.lb & t == 0).count() as f64;
            out.push((dl, dr));
        }
        out
    });
    let all: Vec<(f64, f64)> = parts.into_iter().flatten().collect();
    let l: Vec<f64> = all.iter().map(|p| p.0).collect();
    let r: Vec<f64> = all.iter().map(|p| p.1).collect();
    let l2: Vec<f64> = l.iter().map(|x| x * x).collect();
    let r2: Vec<f64> = r.iter().map(|x| x * x).collect();
    let (d_l, se_l) = mean_se(&l);
    let (d_r, se_r) = mean_se(&r);
    let (d_l2, se_l2) = mean_se(&l2);
    let (d_r2, se_r2) = mean_se(&r2);
    McMoments { samples, d_l, d_l2, d_r, d_r2, se_l2, se_r2, se_l, se_r }
}

/// Hypergeometric mass `C(r,t)C(ℓ−r,r−t)/C(ℓ,r)`.
pub fn hypergeom(r: usize, ell: usize, t: usize) -> Q {
    Q::new(
        binom(r as i64, t as i64) * binom(ell as i64 - r as i64, r as i64 - t as i64),
        binom(ell as i64, r as i64),
    )
}

/// `Σ_{t ∈ ts} (3δ)^{−t−shift} h(t)` with `3δ = 1 − 1/n`.
fn weighted_hyper(n: usize, r: usize, ell: usize, ts: std::ops::Range<usize>, shift: usize) -> Q {
    let inv = Q::new(BigInt::from(n), BigInt::from(n - 1));
    ts.map(|t| hypergeom(r, ell, t) * pow_q(&inv, t + shift)).sum()
}

fn pow_q(x: &Q, k: usize) -> Q {
    (0..k).fold(rational::one(), |a, _| a * x)
}

/// Second-moment predictions given measured first moments:
/// right `d_R² Σ_t (3δ)^{−t} h(t)`, left `d_L² (3δ)^{−1} Σ_{t<r} (3δ)^{−t} h(t)`.
pub fn second_moment_formulas(params: &KikuchiParams, d_l: &Q, d_r: &Q) -> (Q, Q) {
    let (n, r, ell) = (params.n, params.r, params.ell);
    let right = d_r * d_r * weighted_hyper(n, r, ell, 0..r + 1, 0);
    let left = d_l * d_l * weighted_hyper(n, r, ell, 0..r, 1);
    (left, right)
}

/// Smallest c ≥ 0 with `1 − c(ℓ²+rℓ)/n ≤ ratio ≤ 1 + cℓ²/n + η`.
pub fn window_c(ratio: f64, n: usize, r: usize, ell: usize, eta: f64) -> f64 {
    let (n, r, l) = (n as f64, r as f64, ell as f64);
    if ratio > 1.0 + eta {
        (ratio - 1.0 - eta) * n / (l * l)
    } else if ratio < 1.0 {
        (1.0 - ratio) * n / (l * l + r * l)
    } else {
        0.0
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct MomentReport {
    pub n: usize,
    pub r: usize,
    pub ell: usize,
    pub mode: String,
    pub chains: u64,
    pub d_l: f64,
    pub d_l2: f64,
    pub d_r: f64,
    pub d_r2: f64,
    pub formula_l: f64,
    pub formula_r: f64,
    pub ratio_l: f64,
    pub ratio_r: f64,
    pub stderr_l: f64,
    pub stderr_r: f64,
    pub eta: f64,
    pub c_l: f64,
    pub c_r: f64,
    /// `d_R` inside the first-moment window.
    pub first_moment_ok: bool,
    /// Estimate within 3 standard errors of the exact pair value, when known.
    pub mc_vs_exact_ok: Option<bool>,
    /// Unsquared reading `E[deg_L²] ≤ (1 + ℓ²/n + η) E[deg_L]`.
    pub unsquared_left_holds: bool,
    pub exact: Option<ExactMoments>,
}

impl MomentReport {
    pub const CSV_HEADER: &'static str =
        "n,r,l,mode,dL,dL2,dR,dR2,formulaL,formulaR,ratioL,ratioR,stderrL,stderrR";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.n,
            self.r,
            self.ell,
            self.mode,
            self.d_l,
            self.d_l2,
            self.d_r,
            self.d_r2,
            self.formula_l,
            self.formula_r,
            self.ratio_l,
            self.ratio_r,
            self.stderr_l,
            self.stderr_r
        )
    }
}

/// First-moment window `(6δn−4r)^r ≤ |chains| ≤ (6δn)^r` scaled to `d_R`.
pub fn first_moment_window(params: &KikuchiParams) -> (Q, Q) {
    let six = 2 * (params.n as i64 - 1);
    let lo = (six - 4 * params.r as i64).max(0);
    let e = Q::new(params.edges_per_chain(), params.num_subsets());
    let p = |b: i64| Q::from_integer(BigInt::from(b).pow(params.r as u32));
    (&e * p(lo), e * p(six))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MomentMode {
    /// Explicit graph and chain pairs, both exact.
    Exact,
    /// Chain pairs only.
    Pairs,
    MonteCarlo { seed: u64, samples: usize },
}

pub fn degree_moments(lt: &LinkTable, params: KikuchiParams, mode: MomentMode, opts: ChainOpts) -> Result<MomentReport> {
    let chains = enumerate_with(lt, params.head, params.r, opts)?;
    let count = chains.len() as u64;
    let (lo, hi) = first_moment_window(&params);
    let eta = params.eta();
    let exact = match mode {
        MomentMode::Exact => {
            let g = graph_from_chains(params, chains.clone(), opts.budget)?;
            let a = moments_from_graph(&g);
            let b = moments_from_pairs(&params, &chains);
            if a.d_l2 != b.d_l2 || a.d_r2 != b.d_r2 || a.d_l != b.d_l || a.d_r != b.d_r {
                return Err(Error::Check("graph moments disagree with chain-pair moments".into()));
            }
            Some(a)
        }
        MomentMode::Pairs => Some(moments_from_pairs(&params, &chains)),
        MomentMode::MonteCarlo { .. } if params.n <= 64 && chains.len() <= 20_000 => {
            Some(moments_from_pairs(&params, &chains))
        }
        MomentMode::MonteCarlo { .. } => None,
    };
    let d_l_q = params.d_l(count);
    let d_r_q = params.d_r(count);
    let (fl, fr) = second_moment_formulas(&params, &d_l_q, &d_r_q);
    let (formula_l, formula_r) = (rational::to_f64(&fl), rational::to_f64(&fr));
    let (mode_name, d_l, d_l2, d_r, d_r2, se_l, se_r, mc_ok) = match mode {
        MomentMode::MonteCarlo { seed, samples } => {
            let mc = moments_monte_carlo(&params, &chains, seed, samples);
            let ok = exact.as_ref().map(|e| {
                (mc.d_l2 - rational::to_f64(&e.d_l2)).abs() <= 3.0 * mc.se_l2
                    && (mc.d_r2 - rational::to_f64(&e.d_r2)).abs() <= 3.0 * mc.se_r2
            });
            ("monte_carlo", mc.d_l, mc.d_l2, mc.d_r, mc.d_r2, mc.se_l2, mc.se_r2, ok)
        }
        _ => {
            let e = exact.as_ref().expect("exact moments present");
            let f = rational::to_f64;
            let name = if mode == MomentMode::Exact { "exact" } else { "pairs" };
            (name, f(&e.d_l), f(&e.d_l2), f(&e.d_r), f(&e.d_r2), 0.0, 0.0, None)
        }
    };
    let ratio_l = d_l2 / formula_l;
    let ratio_r = d_r2 / formula_r;
    let (n, r, ell) = (params.n, params.r, params.ell);
    let unsq = d_l2 <= (1.0 + (ell * ell) as f64 / n as f64 + eta) * d_l;
    Ok(MomentReport {
        n,
        r,
        ell,
        mode: mode_name.to_string(),
        chains: count,
        d_l,
        d_l2,
        d_r,
        d_r2,
        formula_l,
        formula_r,
        ratio_l,
        ratio_r,
        stderr_l: se_l,
        stderr_r: se_r,
        eta,
        c_l: window_c(ratio_l, n, r, ell, eta),
        c_r: window_c(ratio_r, n, r, ell, eta),
        first_moment_ok: lo <= d_r_q && d_r_q <= hi,
        mc_vs_exact_ok: mc_ok,
        unsquared_left_holds: unsq,
        exact,
    })
}

/// `LHS / RHS` of the binomial estimate
/// `C(r,t) t! C(n,ℓ) C(n,ℓ−2r+t) / C(n−2r,ℓ−r)² ≤ (1 + cℓ²/n) n^t C(ℓ−r,r−t)/C(ℓ,r)`;
/// `None` when both sides vanish.
pub fn binest_ratio(n: usize, r: usize, t: usize, ell: usize) -> Option<Q> {
    let (n, r, t, l) = (n as i64, r as i64, t as i64, ell as i64);
    let lhs_num = binom(r, t) * factorial(t as u64) * binom(n, l) * binom(n, l - (2 * r - t));
    let lhs_den = binom(n - 2 * r, l - r).pow(2u32);
    let rhs_num = BigInt::from(n).pow(t as u32) * binom(l - r, r - t);
    let rhs_den = binom(l, r);
    if lhs_den.is_zero() || rhs_num.is_zero() {
        return if lhs_num.is_zero() { None } else { Some(Q::from_integer(BigInt::from(i64::MAX))) };
    }
    Some(Q::new(lhs_num * rhs_den, lhs_den * rhs_num))
}

/// Constant `c` needed at one tuple: `(ratio − 1)·n/ℓ²`, floored at 0.
pub fn binest_c(n: usize, r: usize, t: usize, ell: usize) -> Option<f64> {
    binest_ratio(n, r, t, ell).map(|q| {
        let x = (rational::to_f64(&q) - 1.0) * n as f64 / (ell * ell) as f64;
        x.max(0.0)
    })
}

/// Calibrated constant for the domain `t ≤ r ≤ ℓ ≤ n/4`, `ℓ² ≤ 4n`, `16 ≤ n ≤ 1024`.
pub const BINEST_C: f64 = 13.0;

/// `r = ⌈½log₂n + Γ log₂log₂n⌉`, `ℓ = 2r − 1`.
pub fn parameter_schedule(n: usize, gamma: f64) -> (usize, usize) {
    let lg = (n as f64).log2();
    let r = (0.5 * lg + gamma * lg.log2().max(0.0)).ceil().max(1.0) as usize;
    (r, 2 * r - 1)
}

/// Plain bipartite multigraph.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BipGraph {
    pub n_left: usize,
    pub n_right: usize,
    pub edges: Vec<(u32, u32)>,
}

#[derive(Clone, Debug, Serialize)]
pub struct PruneStats {
    pub slack: f64,
    pub d_l: f64,
    pub d_r: f64,
    pub removed_left: usize,
    pub removed_right: usize,
    pub edges_before: usize,
    pub edges_after: usize,
    pub retained_fraction: f64,
    pub split_edges: usize,
    pub max_right_degree: u64,
    pub max_split_degree: u64,
    pub split_ok: bool,
    pub matching_size: usize,
    pub matching_ratio: f64,
    pub greedy: bool,
}

pub fn default_slack(n: usize, r: usize, ell: usize) -> f64 {
    3.0 * ((ell * ell) as f64 / n as f64 + n as f64 / rational::to_f64(&Q::from_integer(binom(ell as i64, r as i64))))
}

/// Drop edges at vertices whose degree leaves `d(1 ± slack)`.
pub fn prune(g: &BipGraph, slack: f64) -> (BipGraph, usize, usize, f64, f64) {
    let mut ld = vec![0u64; g.n_left];
    let mut rd = vec![0u64; g.n_right];
    for &(a, b) in &g.edges {
        ld[a as usize] += 1;
        rd[b as usize] += 1;
    }
    let e = g.edges.len() as f64;
    let d_l = e / g.n_left.max(1) as f64;
    let d_r = e / g.n_right.max(1) as f64;
    let out = |d: u64, avg: f64| d > 0 && ((d as f64) < avg * (1.0 - slack) || (d as f64) > avg * (1.0 + slack));
    let bad_l: Vec<bool> = ld.iter().map(|&d| out(d, d_l)).collect();
    let bad_r: Vec<bool> = rd.iter().map(|&d| out(d, d_r)).collect();
    let edges = g.edges.iter().copied().filter(|&(a, b)| !bad_l[a as usize] && !bad_r[b as usize]).collect();
    let rl = bad_l.iter().filter(|&&b| b).count();
    let rr = bad_r.iter().filter(|&&b| b).count();
    (BipGraph { n_left: g.n_left, n_right: g.n_right, edges }, rl, rr, d_l, d_r)
}

/// Split each right vertex into `copies` copies, dealing its edges round-robin
/// in edge order. Copy `j` of `T` has index `T·copies + j`.
pub fn split_right(g: &BipGraph, copies: usize) -> BipGraph {
    let mut seen = vec![0usize; g.n_right];
    let mut order: Vec<usize> = (0..g.edges.len()).collect();
    order.sort_by_key(|&i| (g.edges[i].1, g.edges[i].0, i));
    let mut edges = vec![(0u32, 0u32); g.edges.len()];
    for i in order {
        let (a, b) = g.edges[i];
        let j = seen[b as usize] % copies;
        seen[b as usize] += 1;
        edges[i] = (a, (b as usize * copies + j) as u32);
    }
    BipGraph { n_left: g.n_left, n_right: g.n_right * copies, edges }
}

fn adjacency(g: &BipGraph) -> Vec<Vec<u32>> {
    let mut adj = vec![Vec::new(); g.n_left];
    for &(a, b) in &g.edges {
        adj[a as usize].push(b);
    }
    for l in &mut adj {
        l.sort_unstable();
        l.dedup();
    }
    adj
}

const NIL: u32 = u32::MAX;

/// Maximum matching by Hopcroft–Karp; returns `(left, right)` pairs sorted by left.
pub fn hopcroft_karp(g: &BipGraph) -> Vec<(u32, u32)> {
    let adj = adjacency(g);
    let nl = g.n_left;
    let mut ml = vec![NIL; nl];
    let mut mr = vec![NIL; g.n_right];
    let mut dist = vec![u32::MAX; nl];
    loop {
        // BFS layers from free left vertices.
        let mut queue = std::collections::VecDeque::new();
        for u in 0..nl {
            if ml[u] == NIL && !adj[u].is_empty() {
                dist[u] = 0;
                queue.push_back(u);
            } else {
                dist[u] = u32::MAX;
            }
        }
        let mut found = false;
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                let w = mr[v as usize];
                if w == NIL {
                    found = true;
                } else if dist[w as usize] == u32::MAX {
                    dist[w as usize] = dist[u] + 1;
                    queue.push_back(w as usize);
                }
            }
        }
        if !found {
            break;
        }
        let mut it = vec![0usize; nl];
        for u in 0..nl {
            if ml[u] == NIL && !adj[u].is_empty() {
                augment(u, &adj, &mut ml, &mut mr, &mut dist, &mut it);
            }
        }
    }
    (0..nl).filter(|&u| ml[u] != NIL).map(|u| (u as u32, ml[u])).collect()
}

/// Iterative DFS along the BFS layering.
fn augment(root: usize, adj: &[Vec<u32>], ml: &mut [u32], mr: &mut [u32], dist: &mut [u32], it: &mut [usize]) -> bool {
    let mut stack = vec![root];
    let mut via: Vec<u32> = Vec::new();
    while let Some(&u) = stack.last() {
        if it[u] == adj[u].len() {
            dist[u] = u32::MAX;
            stack.pop();
            via.pop();
            continue;
        }
        let v = adj[u][it[u]];
        it[u] += 1;
        let w = mr[v as usize];
        if w == NIL {
            via.push(v);
            for (k, &x) in stack.iter().enumerate() {
                let y = via[k];
                ml[x] = y;
                mr[y as usize] = x as u32;
            }
            return true;
        }
        if dist[w as usize] == dist[u] + 1 {
            via.push(v);
            stack.push(w as usize);
        }
    }
    false
}

pub fn greedy_matching(g: &BipGraph) -> Vec<(u32, u32)> {
    let adj = adjacency(g);
    let mut used = vec![false; g.n_right];
    let mut out = Vec::new();
    for (u, vs) in adj.iter().enumerate() {
        if let Some(&v) = vs.iter().find(|&&v| !used[v as usize]) {
            used[v as usize] = true;
            out.push((u as u32, v));
        }
    }
    out
}

pub fn is_matching(g: &BipGraph, m: &[(u32, u32)]) -> bool {
    let mut ul = vec![false; g.n_left];
    let mut ur = vec![false; g.n_right];
    let present: std::collections::HashSet<(u32, u32)> = g.edges.iter().copied().collect();
    m.iter().all(|&(a, b)| {
        let fresh = !ul[a as usize] && !ur[b as usize];
        ul[a as usize] = true;
        ur[b as usize] = true;
        fresh && present.contains(&(a, b))
    })
}

/// Prune, split into `copies` right copies, and match.
pub fn prune_and_match(g: &BipGraph, slack: f64, copies: usize, edge_budget: usize) -> (BipGraph, Vec<(u32, u32)>, PruneStats) {
    let (pruned, rl, rr, d_l, d_r) = prune(g, slack);
    let mut rd = vec![0u64; pruned.n_right];
    for &(_, b) in &pruned.edges {
        rd[b as usize] += 1;
    }
    let split = split_right(&pruned, copies.max(1));
    let mut sd = vec![0u64; split.n_right];
    for &(_, b) in &split.edges {
        sd[b as usize] += 1;
    }
    let split_ok = split.edges.len() == pruned.edges.len()
        && (0..pruned.n_right).all(|t| {
            let cap = rd[t].div_ceil(copies.max(1) as u64);
            (0..copies.max(1)).all(|j| sd[t * copies.max(1) + j] <= cap)
        });
    let greedy = split.edges.len() > edge_budget;
    let m = if greedy { greedy_matching(&split) } else { hopcroft_karp(&split) };
    let stats = PruneStats {
        slack,
        d_l,
        d_r,
        removed_left: rl,
        removed_right: rr,
        edges_before: g.edges.len(),
        edges_after: pruned.edges.len(),
        retained_fraction: if g.edges.is_empty() { 1.0 } else { pruned.edges.len() as f64 / g.edges.len() as f64 },
        split_edges: split.edges.len(),
        max_right_degree: rd.iter().copied().max().unwrap_or(0),
        max_split_degree: sd.iter().copied().max().unwrap_or(0),
        split_ok,
        matching_size: m.len(),
        matching_ratio: m.len() as f64 / g.n_left.max(1) as f64,
        greedy,
    };
    (split, m, stats)
}

/// A linear 2-query code: each used coordinate is a linear form in the
/// message, and `matchings[i]` pairs coordinates whose forms sum to `e_i`.
#[derive(Clone, Debug)]
pub struct TwoLdc {
    pub k: usize,
    pub len: usize,
    pub forms: BTreeMap<usize, BitVec>,
    pub matchings: Vec<Vec<(usize, usize)>>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Ldc2Report {
    pub k: usize,
    pub len: usize,
    pub delta_min: f64,
    pub delta_avg: f64,
    /// `2 δ_avg k`
    pub lhs: f64,
    /// `log₂ len`
    pub rhs: f64,
    pub holds: bool,
}

impl TwoLdc {
    /// Checks decoding and the matching property, then the size bound.
    pub fn verify(&self) -> Result<Ldc2Report> {
        for (i, m) in self.matchings.iter().enumerate() {
            let mut used = std::collections::HashSet::new();
            for &(a, b) in m {
                if !used.insert(a) || !used.insert(b) || a == b {
                    return Err(Error::Check(format!("M_{} is not a matching at ({a}, {b})", i + 1)));
                }
                let (fa, fb) = match (self.forms.get(&a), self.forms.get(&b)) {
                    (Some(x), Some(y)) => (x, y),
                    _ => return Err(Error::Check(format!("edge ({a}, {b}) of M_{} has no form", i + 1))),
                };
                let mut s = fa.clone();
                s.xor_assign(fb);
                if s.ones() != vec![i] {
                    return Err(Error::Check(format!("edge ({a}, {b}) of M_{} decodes {:?}", i + 1, s.ones())));
                }
            }
        }
        let len = self.len.max(1) as f64;
        let sizes: Vec<f64> = self.matchings.iter().map(|m| m.len() as f64).collect();
        let delta_min = sizes.iter().copied().reduce(f64::min).unwrap_or(0.0) / len;
        let delta_avg = if sizes.is_empty() { 0.0 } else { sizes.iter().sum::<f64>() / sizes.len() as f64 / len };
        let lhs = 2.0 * delta_avg * self.k as f64;
        let rhs = len.log2();
        Ok(Ldc2Report { k: self.k, len: self.len, delta_min, delta_avg, lhs, rhs, holds: lhs <= rhs + 1e-12 })
    }

    /// Evaluate the encoding of `msg` at every used coordinate.
    pub fn encode(&self, msg: &BitVec) -> BTreeMap<usize, bool> {
        self.forms.iter().map(|(&c, f)| (c, f.dot(msg))).collect()
    }
}

/// Hadamard code of length 2^k with matchings `{a, a ⊕ e_i}`.
pub fn hadamard_2ldc(k: usize) -> TwoLdc {
    let len = 1usize << k;
    let forms = (0..len)
        .map(|a| (a, BitVec::from_indices(k, &(0..k).filter(|&i| a >> i & 1 == 1).collect::<Vec<_>>())))
        .collect();
    let matchings = (0..k).map(|i| (0..len).filter(|a| a >> i & 1 == 0).map(|a| (a, a | 1 << i)).collect()).collect();
    TwoLdc { k, len, forms, matchings }
}

#[derive(Clone, Debug, Serialize)]
pub struct AssemblyStats {
    pub head: usize,
    pub chains: usize,
    pub decode_failures: usize,
    pub prune: PruneStats,
}

/// Run the per-head pipeline for every systematic coordinate and collect the
/// matched edges into one 2-query code of length `2·n·C(n,ℓ)`.
pub fn assemble_2ldc(
    lcc: &DesignLcc,
    m: &MatchingFamily,
    r: usize,
    ell: usize,
    slack: Option<f64>,
    opts: ChainOpts,
) -> Result<(TwoLdc, Vec<AssemblyStats>)> {
    let n = lcc.design.n;
    let (pivots, rows) = systematic_basis(lcc)?;
    let k = pivots.len();
    let lt = LinkTable::new(m);
    let b = Binomials::new(n);
    let col: Vec<BitVec> =
        (0..n).map(|v| BitVec::from_indices(k, &(0..k).filter(|&j| rows[j].get(v)).collect::<Vec<_>>())).collect();
    let form_of = |mask: u64| {
        let mut f = BitVec::zeros(k);
        let mut x = mask;
        while x != 0 {
            f.xor_assign(&col[x.trailing_zeros() as usize]);
            x &= x - 1;
        }
        f
    };
    let slack = slack.unwrap_or_else(|| default_slack(n, r, ell));
    let mut forms = BTreeMap::new();
    let mut matchings = Vec::with_capacity(k);
    let mut stats = Vec::with_capacity(k);
    let mut nsub = 0usize;
    for &head in &pivots {
        let params = KikuchiParams { n, r, ell, head };
        let g = build_graph(&lt, params, opts)?;
        nsub = g.num_subsets;
        let fails = decode_failures(&g, lcc).len();
        let (_, mt, ps) = prune_and_match(&g.bipartite(), slack, n, opts.budget as usize);
        let left_len = g.n_left();
        let mut mi = Vec::with_capacity(mt.len());
        for (a, bb) in mt {
            let (s, w) = g.left_vertex(&b, a as usize);
            let t = b.unrank(bb as u64 / n as u64, ell);
            let ca = a as usize;
            let cb = left_len + bb as usize;
            forms.entry(ca).or_insert_with(|| {
                let mut f = form_of(s);
                f.xor_assign(&col[w]);
                f
            });
            forms.entry(cb).or_insert_with(|| form_of(t));
            mi.push((ca, cb));
        }
        matchings.push(mi);
        stats.push(AssemblyStats { head, chains: g.chains.len(), decode_failures: fails, prune: ps });
    }
    Ok((TwoLdc { k, len: 2 * n * nsub, forms, matchings }, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{build_rm_design, derive_matchings};

    #[test]
    fn deposit_scatters() {
        assert_eq!(deposit(0b101, 0b1101_0000), 0b1001_0000);
        assert_eq!(deposit(0, 0xff), 0);
    }

    #[test]
    fn hypergeometric_sums_to_one() {
        for (r, l) in [(1, 2), (2, 3), (3, 5), (4, 7)] {
            let s: Q = (0..=r).map(|t| hypergeom(r, l, t)).sum();
            assert_eq!(s, rational::one());
        }
    }

    #[test]
    fn hadamard_is_tight() {
        let h = hadamard_2ldc(2);
        let rep = h.verify().unwrap();
        assert_eq!(rep.delta_min, 0.5);
        assert_eq!(rep.lhs, 2.0);
        assert_eq!(rep.rhs, 2.0);
        assert!(rep.holds);
    }

    #[test]
    fn empty_matchings() {
        let l = TwoLdc { k: 3, len: 8, forms: BTreeMap::new(), matchings: vec![vec![]; 3] };
        let rep = l.verify().unwrap();
        assert_eq!(rep.delta_min, 0.0);
        assert!(rep.holds);
    }

    #[test]
    fn biregular_toy_matches_perfectly() {
        let g = BipGraph { n_left: 3, n_right: 3, edges: vec![(0, 0), (0, 1), (1, 1), (1, 2), (2, 2), (2, 0)] };
        let (_, m, st) = prune_and_match(&g, 0.01, 1, 1000);
        assert_eq!(st.edges_after, 6);
        assert_eq!(m.len(), 3);
    }

    #[test]
    fn star_left_vertex_pruned() {
        let mut edges: Vec<(u32, u32)> = (0..8).map(|j| (0, j)).collect();
        edges.extend((1..8).map(|i| (i, i)));
        let g = BipGraph { n_left: 8, n_right: 8, edges };
        let (p, ..) = prune(&g, 0.5);
        assert!(p.edges.iter().all(|&(a, _)| a != 0));
    }

    #[test]
    fn edges_per_chain_n16() {
        let l = build_rm_design(2, 1 << 20).unwrap();
        let m = derive_matchings(&l).unwrap();
        let lt = LinkTable::new(&m);
        let p = KikuchiParams { n: 16, r: 2, ell: 3, head: 0 };
        let g = build_graph(&lt, p, ChainOpts::default()).unwrap();
        assert_eq!(g.edges.len(), g.chains.len() * 12);
        assert!(decode_failures(&g, &l).is_empty());
    }

    #[test]
    fn schedule() {
        assert_eq!(parameter_schedule(256, 0.0), (4, 7));
    }
}
