//! Adaptive 3-query decoders as decision trees, their AND-polynomial weight
//! systems, and the padded hypergraph collection they compile to.

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::design::{build_rm_design, derive_matchings, systematic_basis};
use crate::error::{Error, Result};
use crate::par;
use crate::rational::{self, Q};

/// A ±1 value.
pub type Sign = i8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Tag {
    #[serde(rename = "+1")]
    One,
    #[serde(rename = "-1")]
    MinusOne,
    #[serde(rename = "+a3")]
    A3,
    #[serde(rename = "-a3")]
    MinusA3,
}

impl Tag {
    pub fn eval(self, a3: Sign) -> Sign {
        match self {
            Tag::One => 1,
            Tag::MinusOne => -1,
            Tag::A3 => a3,
            Tag::MinusA3 => -a3,
        }
    }

    /// `±a3` with the given sign.
    pub fn a3(sign: Sign) -> Tag {
        if sign > 0 {
            Tag::A3
        } else {
            Tag::MinusA3
        }
    }

    pub fn constant(sign: Sign) -> Tag {
        if sign > 0 {
            Tag::One
        } else {
            Tag::MinusOne
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Leaf {
    pub v: usize,
    #[serde(with = "rational::serde_q")]
    pub p: Q,
    pub tag: Tag,
}

/// Branches indexed by the answer: `neg` for −1, `pos` for +1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Branches<T> {
    pub neg: Vec<T>,
    pub pos: Vec<T>,
}

impl<T> Branches<T> {
    pub fn get(&self, a: Sign) -> &[T] {
        if a > 0 {
            &self.pos
        } else {
            &self.neg
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Second {
    pub v: usize,
    #[serde(with = "rational::serde_q")]
    pub p: Q,
    pub on: Branches<Leaf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct First {
    pub v: usize,
    #[serde(with = "rational::serde_q")]
    pub p: Q,
    pub on: Branches<Second>,
}

/// Decision tree for one index. Several leaves at the same node with the same
/// query encode coin outcomes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub u: usize,
    pub root: Vec<First>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decoder {
    pub n: usize,
    pub trees: Vec<Tree>,
}

fn check_dist(ps: impl Iterator<Item = Q>, what: &str) -> Result<()> {
    let mut s = Q::zero();
    for p in ps {
        if p.is_negative() {
            return Err(Error::Check(format!("negative probability at {what}")));
        }
        s += p;
    }
    if !s.is_one() {
        return Err(Error::Check(format!("distribution at {what} sums to {}", rational::format(&s))));
    }
    Ok(())
}

impl Tree {
    pub fn validate(&self, n: usize) -> Result<()> {
        let u = self.u;
        check_dist(self.root.iter().map(|f| f.p.clone()), &format!("root of {}", u + 1))?;
        for f in &self.root {
            for a1 in [-1, 1] {
                let at = format!("u={} v1={} a1={a1}", u + 1, f.v + 1);
                check_dist(f.on.get(a1).iter().map(|s| s.p.clone()), &at)?;
                for s in f.on.get(a1) {
                    for a2 in [-1, 1] {
                        let at = format!("{at} v2={} a2={a2}", s.v + 1);
                        check_dist(s.on.get(a2).iter().map(|l| l.p.clone()), &at)?;
                        for l in s.on.get(a2) {
                            if f.v >= n || s.v >= n || l.v >= n {
                                return Err(Error::Check(format!("query out of range at {at}")));
                            }
                            if f.v == s.v || f.v == l.v || s.v == l.v {
                                return Err(Error::Check(format!("repeated query at {at} v3={}", l.v + 1)));
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// `E[Dec^x(u)]` by walking the tree along `x`.
    pub fn expectation(&self, x: &[Sign]) -> Q {
        let mut e = Q::zero();
        for f in &self.root {
            for s in f.on.get(x[f.v]) {
                let p12 = &f.p * &s.p;
                for l in s.on.get(x[s.v]) {
                    e += &p12 * &l.p * Q::from_integer(BigInt::from(l.tag.eval(x[l.v])));
                }
            }
        }
        e
    }

    /// `Pr[Dec^x(u) queries v]` for every v.
    pub fn query_probs(&self, x: &[Sign], n: usize) -> Vec<Q> {
        let mut pr = vec![Q::zero(); n];
        for f in &self.root {
            pr[f.v] += &f.p;
            for s in f.on.get(x[f.v]) {
                let p12 = &f.p * &s.p;
                pr[s.v] += &p12;
                for l in s.on.get(x[s.v]) {
                    pr[l.v] += &p12 * &l.p;
                }
            }
        }
        pr
    }
}

impl Decoder {
    pub fn validate(&self) -> Result<()> {
        if self.trees.len() != self.n {
            return Err(Error::Check(format!("{} trees for n = {}", self.trees.len(), self.n)));
        }
        for (u, t) in self.trees.iter().enumerate() {
            if t.u != u {
                return Err(Error::Check(format!("tree {} labeled {}", u + 1, t.u + 1)));
            }
            t.validate(self.n)?;
        }
        Ok(())
    }

    /// JSON with 1-based vertices.
    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.shifted(true)).expect("decoder serializes")
    }

    pub fn from_json(s: &str) -> Result<Decoder> {
        let d: Decoder = serde_json::from_str(s)?;
        let ok = d.trees.iter().all(|t| {
            t.u >= 1
                && t.root.iter().all(|f| {
                    f.v >= 1
                        && [&f.on.neg, &f.on.pos].iter().all(|b| {
                            b.iter().all(|s| s.v >= 1 && [&s.on.neg, &s.on.pos].iter().all(|ls| ls.iter().all(|l| l.v >= 1)))
                        })
                })
        });
        if !ok {
            return Err(Error::Parse("decoder vertices are 1-based".into()));
        }
        let d = d.shifted(false);
        d.validate()?;
        Ok(d)
    }

    fn shifted(&self, up: bool) -> Decoder {
        let m = |v: usize| if up { v + 1 } else { v - 1 };
        let leaf = |l: &Leaf| Leaf { v: m(l.v), p: l.p.clone(), tag: l.tag };
        let sec = |s: &Second| Second {
            v: m(s.v),
            p: s.p.clone(),
            on: Branches { neg: s.on.neg.iter().map(leaf).collect(), pos: s.on.pos.iter().map(leaf).collect() },
        };
        let first = |f: &First| First {
            v: m(f.v),
            p: f.p.clone(),
            on: Branches { neg: f.on.neg.iter().map(sec).collect(), pos: f.on.pos.iter().map(sec).collect() },
        };
        Decoder {
            n: self.n,
            trees: self.trees.iter().map(|t| Tree { u: m(t.u), root: t.root.iter().map(first).collect() }).collect(),
        }
    }
}

/// `AND(s, t) = ¼(1+s)(1+t)`.
pub fn and_poly(s: i64, t: i64) -> Result<i64> {
    if s.abs() != 1 || t.abs() != 1 {
        return Err(Error::Check(format!("AND needs ±1 inputs, got ({s}, {t})")));
    }
    Ok((1 + s) * (1 + t) / 4)
}

fn and_s(s: Sign, t: Sign) -> bool {
    s > 0 && t > 0
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct GKey {
    pub v1: usize,
    pub a1: Sign,
    pub v2: usize,
    pub a2: Sign,
    pub sigma: Sign,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct HKey {
    pub v1: usize,
    pub a1: Sign,
    pub v2: usize,
    pub a2: Sign,
    pub v3: usize,
    pub sigma: Sign,
}

/// Weight system of one index: constant-tag transcripts in `g`, `±a3`
/// transcripts in `h`. Coin outcomes with identical keys are merged.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AndSystem {
    pub u: usize,
    pub g: BTreeMap<GKey, Q>,
    pub h: BTreeMap<HKey, Q>,
}

pub fn compile_and_weights(tree: &Tree, n: usize) -> Result<AndSystem> {
    tree.validate(n)?;
    let mut sys = AndSystem { u: tree.u, ..Default::default() };
    for f in &tree.root {
        for a1 in [-1i8, 1] {
            for s in f.on.get(a1) {
                for a2 in [-1i8, 1] {
                    for l in s.on.get(a2) {
                        let w = &f.p * &s.p * &l.p;
                        if w.is_zero() {
                            continue;
                        }
                        match l.tag {
                            Tag::One | Tag::MinusOne => {
                                let k = GKey { v1: f.v, a1, v2: s.v, a2, sigma: l.tag.eval(1) };
                                *sys.g.entry(k).or_insert_with(Q::zero) += w;
                            }
                            Tag::A3 | Tag::MinusA3 => {
                                let k = HKey { v1: f.v, a1, v2: s.v, a2, v3: l.v, sigma: l.tag.eval(1) };
                                *sys.h.entry(k).or_insert_with(Q::zero) += w;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(sys)
}

impl AndSystem {
    pub fn total(&self) -> Q {
        self.g.values().chain(self.h.values()).sum()
    }

    /// `Σ wt · AND(a1 x_{v1}, a2 x_{v2})`.
    pub fn and_mass(&self, x: &[Sign]) -> Q {
        let g = self.g.iter().filter(|(k, _)| and_s(k.a1 * x[k.v1], k.a2 * x[k.v2])).map(|(_, w)| w);
        let h = self.h.iter().filter(|(k, _)| and_s(k.a1 * x[k.v1], k.a2 * x[k.v2])).map(|(_, w)| w);
        g.chain(h).sum()
    }

    /// Sign-weighted polynomial, equal to `E[Dec^x(u)]` on codewords.
    pub fn poly(&self, x: &[Sign]) -> Q {
        let mut s = Q::zero();
        for (k, w) in &self.g {
            if and_s(k.a1 * x[k.v1], k.a2 * x[k.v2]) {
                s += w * Q::from_integer(BigInt::from(k.sigma));
            }
        }
        for (k, w) in &self.h {
            if and_s(k.a1 * x[k.v1], k.a2 * x[k.v2]) {
                s += w * Q::from_integer(BigInt::from(k.sigma * x[k.v3]));
            }
        }
        s
    }

    /// Per-vertex incident weight.
    pub fn incident(&self, n: usize) -> Vec<Q> {
        let mut inc = vec![Q::zero(); n];
        for (k, w) in &self.g {
            inc[k.v1] += w;
            inc[k.v2] += w;
        }
        for (k, w) in &self.h {
            inc[k.v1] += w;
            inc[k.v2] += w;
            inc[k.v3] += w;
        }
        inc
    }
}

/// A code given by its codeword table; row `b` is the encoding of the
/// message whose bit `i` is bit `i` of `b` (bit 1 ↦ −1).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Code {
    pub n: usize,
    pub k: usize,
    /// Coordinates carrying the message bits.
    pub systematic: Vec<usize>,
    pub codewords: Vec<Vec<Sign>>,
}

impl Code {
    /// Linear code from GF(2) generator rows (`rows[i]` is the image of `e_i`).
    pub fn from_generator(n: usize, rows: &[Vec<bool>], systematic: Vec<usize>) -> Code {
        let k = rows.len();
        let codewords = (0..1usize << k)
            .map(|b| {
                (0..n)
                    .map(|v| {
                        let bit = (0..k).filter(|&i| b >> i & 1 == 1).fold(false, |acc, i| acc ^ rows[i][v]);
                        if bit {
                            -1
                        } else {
                            1
                        }
                    })
                    .collect()
            })
            .collect();
        Code { n, k, systematic, codewords }
    }

    pub fn check_systematic(&self) -> bool {
        self.codewords.iter().enumerate().all(|(b, x)| {
            self.systematic.iter().enumerate().all(|(i, &v)| x[v] == if b >> i & 1 == 1 { -1 } else { 1 })
        })
    }

    /// `(x, −x, 1ⁿ, (−1)ⁿ)`.
    pub fn padded(&self) -> Code {
        let n = self.n;
        let codewords = self
            .codewords
            .iter()
            .map(|x| {
                let mut y = Vec::with_capacity(4 * n);
                y.extend_from_slice(x);
                y.extend(x.iter().map(|s| -s));
                y.extend(std::iter::repeat_n(1, n));
                y.extend(std::iter::repeat_n(-1, n));
                y
            })
            .collect();
        Code { n: 4 * n, k: self.k, systematic: self.systematic.clone(), codewords }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum CodeFile {
    Generator { n: usize, generator: Vec<Vec<u8>>, systematic: Vec<usize> },
    Table { n: usize, k: usize, systematic: Vec<usize>, codewords: Vec<Vec<Sign>> },
}

impl Code {
    /// Codeword table with 1-based systematic coordinates.
    pub fn to_json(&self) -> String {
        let f = CodeFile::Table { n: self.n, k: self.k, systematic: self.systematic.iter().map(|v| v + 1).collect(), codewords: self.codewords.clone() };
        serde_json::to_string(&f).expect("code serializes")
    }

    /// Accepts a codeword table or `{"n", "generator", "systematic"}` with
    /// 0/1 generator rows; coordinates are 1-based.
    pub fn from_json(s: &str) -> Result<Code> {
        let f: CodeFile = serde_json::from_str(s)?;
        let fix = |sys: Vec<usize>, n: usize| -> Result<Vec<usize>> {
            sys.into_iter()
                .map(|v| if v == 0 || v > n { Err(Error::Parse(format!("systematic coordinate {v} out of range"))) } else { Ok(v - 1) })
                .collect()
        };
        let code = match f {
            CodeFile::Generator { n, generator, systematic } => {
                if generator.len() > 20 || generator.iter().any(|r| r.len() != n || r.iter().any(|&b| b > 1)) {
                    return Err(Error::Parse("generator rows must be 0/1 of length n, at most 20 rows".into()));
                }
                let rows: Vec<Vec<bool>> = generator.iter().map(|r| r.iter().map(|&b| b == 1).collect()).collect();
                Code::from_generator(n, &rows, fix(systematic, n)?)
            }
            CodeFile::Table { n, k, systematic, codewords } => {
                if k > 20 || codewords.len() != 1 << k || codewords.iter().any(|x| x.len() != n || x.iter().any(|&s| s != 1 && s != -1)) {
                    return Err(Error::Parse("codeword table must have 2^k rows of n signs".into()));
                }
                Code { n, k, systematic: fix(systematic, n)?, codewords }
            }
        };
        if code.systematic.len() != code.k || !code.check_systematic() {
            return Err(Error::Parse("systematic coordinates do not carry the message".into()));
        }
        Ok(code)
    }
}

/// Padded index helpers (0-based): `+v = v`, `−v = n+v`, `1^(v) = 2n+v`,
/// `−1^(v) = 3n+v`.
#[derive(Clone, Copy, Debug)]
pub struct Pad {
    pub n: usize,
}

impl Pad {
    pub fn signed(&self, a: Sign, v: usize) -> usize {
        if a > 0 {
            v
        } else {
            self.n + v
        }
    }

    pub fn constant(&self, s: Sign, v: usize) -> usize {
        if s > 0 {
            2 * self.n + v
        } else {
            3 * self.n + v
        }
    }

    /// Negate a padded vertex.
    pub fn flip(&self, p: usize) -> usize {
        let n = self.n;
        match p / n {
            0 => p + n,
            1 => p - n,
            2 => p + n,
            _ => p - n,
        }
    }
}

/// One pair `(H'_u, G'_u)` with ordered tuples and merged weights.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Pair {
    pub g: BTreeMap<(usize, usize), Q>,
    pub h: BTreeMap<(usize, usize, usize), Q>,
}

impl Pair {
    pub fn total_g(&self) -> Q {
        self.g.values().sum()
    }

    pub fn total_h(&self) -> Q {
        self.h.values().sum()
    }

    /// `f_u(x) = φ_u(x) + ψ_u(x)`.
    pub fn f(&self, x: &[Sign]) -> Q {
        let mut acc = Q::zero();
        for (&(a, b), w) in &self.g {
            acc += w * Q::from_integer(BigInt::from(x[a] * x[b]));
        }
        for (&(a, b, c), w) in &self.h {
            acc += w * Q::from_integer(BigInt::from(x[a] * x[b] * x[c]));
        }
        acc
    }

    pub fn incident(&self, n: usize) -> Vec<Q> {
        let mut inc = vec![Q::zero(); n];
        for (&(a, b), w) in &self.g {
            inc[a] += w;
            inc[b] += w;
        }
        for (&(a, b, c), w) in &self.h {
            inc[a] += w;
            inc[b] += w;
            inc[c] += w;
        }
        inc
    }

    pub fn distinct(&self) -> bool {
        self.g.keys().all(|&(a, b)| a != b) && self.h.keys().all(|&(a, b, c)| a != b && a != c && b != c)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HypergraphCollection {
    pub n: usize,
    pub pairs: Vec<Pair>,
}

fn add(m: &mut BTreeMap<(usize, usize), Q>, k: (usize, usize), w: &Q) {
    *m.entry(k).or_insert_with(Q::zero) += w;
}

/// Padded pair for a base index from its weight system.
pub fn pad_system(sys: &AndSystem, n: usize) -> Pair {
    let p = Pad { n };
    let quarter = Q::new(BigInt::one(), BigInt::from(4));
    let mut pair = Pair::default();
    for (k, w) in &sys.g {
        let w = w * &quarter;
        let (s, a1, a2) = (k.sigma, k.a1, k.a2);
        add(&mut pair.g, (p.constant(s, k.v1), p.constant(1, k.v2)), &w);
        add(&mut pair.g, (p.signed(a1, k.v1), p.constant(s, k.v2)), &w);
        add(&mut pair.g, (p.constant(s, k.v1), p.signed(a2, k.v2)), &w);
        add(&mut pair.g, (p.signed(s * a1, k.v1), p.signed(a2, k.v2)), &w);
    }
    for (k, w) in &sys.h {
        let w = w * &quarter;
        let (s, a1, a2) = (k.sigma, k.a1, k.a2);
        *pair.h.entry((p.signed(s * a1, k.v1), p.signed(a2, k.v2), k.v3)).or_insert_with(Q::zero) += &w;
        add(&mut pair.g, (p.constant(s, k.v1), k.v3), &w);
        add(&mut pair.g, (p.signed(s * a1, k.v1), k.v3), &w);
        add(&mut pair.g, (p.signed(s * a2, k.v2), k.v3), &w);
    }
    pair
}

fn flip_first(pair: &Pair, p: Pad) -> Pair {
    let mut out = Pair::default();
    for (&(a, b), w) in &pair.g {
        add(&mut out.g, (p.flip(a), b), w);
    }
    for (&(a, b, c), w) in &pair.h {
        *out.h.entry((p.flip(a), b, c)).or_insert_with(Q::zero) += w;
    }
    out
}

/// Gadget for a constant padded index: `+1` pairs same-sign padded bits,
/// `−1` pairs opposite-sign ones.
pub fn constant_pair(n: usize, s: Sign) -> Pair {
    let mut pair = Pair::default();
    let ones = 2 * n..3 * n;
    let negs = 3 * n..4 * n;
    if s > 0 {
        let w = Q::new(BigInt::one(), BigInt::from(2 * n * (n - 1)));
        for block in [ones, negs] {
            for a in block.clone() {
                for b in block.clone() {
                    if a != b {
                        pair.g.insert((a, b), w.clone());
                    }
                }
            }
        }
    } else {
        let w = Q::new(BigInt::one(), BigInt::from(2 * n * n));
        for a in ones.clone() {
            for b in negs.clone() {
                pair.g.insert((a, b), w.clone());
                pair.g.insert((b, a), w.clone());
            }
        }
    }
    pair
}

pub fn compile_collection(dec: &Decoder) -> Result<(Vec<AndSystem>, HypergraphCollection)> {
    dec.validate()?;
    let n = dec.n;
    if n < 2 {
        return Err(Error::Config("padding needs n ≥ 2".into()));
    }
    let systems = par::map_slice(&dec.trees, |t| compile_and_weights(t, n)).into_iter().collect::<Result<Vec<_>>>()?;
    let base: Vec<Pair> = par::map_slice(&systems, |s| pad_system(s, n));
    let p = Pad { n };
    let mut pairs = base.clone();
    pairs.extend(base.iter().map(|q| flip_first(q, p)));
    pairs.extend((0..n).map(|_| constant_pair(n, 1)));
    pairs.extend((0..n).map(|_| constant_pair(n, -1)));
    Ok((systems, HypergraphCollection { n: 4 * n, pairs }))
}

#[derive(Serialize, Deserialize)]
struct EdgeRec {
    e: Vec<usize>,
    w: String,
}

#[derive(Serialize, Deserialize)]
struct PairRec {
    u: usize,
    #[serde(rename = "H")]
    h: Vec<EdgeRec>,
    #[serde(rename = "G")]
    g: Vec<EdgeRec>,
}

impl HypergraphCollection {
    /// One JSON object per line, 1-based.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for (u, p) in self.pairs.iter().enumerate() {
            let rec = PairRec {
                u: u + 1,
                h: p.h.iter().map(|(&(a, b, c), w)| EdgeRec { e: vec![a + 1, b + 1, c + 1], w: rational::format(w) }).collect(),
                g: p.g.iter().map(|(&(a, b), w)| EdgeRec { e: vec![a + 1, b + 1], w: rational::format(w) }).collect(),
            };
            out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(s: &str) -> Result<HypergraphCollection> {
        let mut pairs = Vec::new();
        for (i, line) in s.lines().filter(|l| !l.trim().is_empty()).enumerate() {
            let rec: PairRec = serde_json::from_str(line)?;
            if rec.u != i + 1 {
                return Err(Error::Parse(format!("record {} has u = {}", i + 1, rec.u)));
            }
            let mut p = Pair::default();
            for e in rec.g {
                if e.e.len() != 2 || e.e.contains(&0) {
                    return Err(Error::Parse("edges are 1-based tuples of the right size".into()));
                }
                p.g.insert((e.e[0] - 1, e.e[1] - 1), rational::parse(&e.w)?);
            }
            for e in rec.h {
                if e.e.len() != 3 || e.e.contains(&0) {
                    return Err(Error::Parse("edges are 1-based tuples of the right size".into()));
                }
                p.h.insert((e.e[0] - 1, e.e[1] - 1, e.e[2] - 1), rational::parse(&e.w)?);
            }
            pairs.push(p);
        }
        let n = pairs.len();
        for p in &pairs {
            let bad = p.g.keys().any(|&(a, b)| a >= n || b >= n) || p.h.keys().any(|&(a, b, c)| a >= n || b >= n || c >= n);
            if bad {
                return Err(Error::Parse("vertex out of range".into()));
            }
        }
        Ok(HypergraphCollection { n, pairs })
    }

    /// `Σ wt(G_u) + Σ wt(H_u) ≤ 4`, `Σ wt(H_u) ≤ 1`, distinct tuples, nonnegative weights.
    pub fn normalization_ok(&self) -> bool {
        let four = Q::from_integer(BigInt::from(4));
        self.pairs.iter().all(|p| {
            let h = p.total_h();
            p.distinct()
                && p.g.values().chain(p.h.values()).all(|w| !w.is_negative())
                && h <= Q::one()
                && p.total_g() + h <= four
        })
    }

    /// Largest per-vertex incident weight over all u, with its location.
    pub fn max_incident(&self) -> (Q, usize, usize) {
        let per = par::map_range(self.pairs.len(), |u| {
            let inc = self.pairs[u].incident(self.n);
            let (v, w) = inc.into_iter().enumerate().max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0))).unwrap_or((0, Q::zero()));
            (w, u, v)
        });
        per.into_iter().fold((Q::zero(), 0, 0), |best, x| if x.0 > best.0 { x } else { best })
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SmoothnessReport {
    /// `1/(n·max Pr[query])` of the decoder over codewords.
    pub delta_decoder: f64,
    /// `1/(n'·max incident)` of the collection.
    pub delta_collection: f64,
    pub c: f64,
    pub worst_u: usize,
    pub worst_v: usize,
    #[serde(with = "rational::serde_q")]
    pub worst_weight: Q,
    /// Incident weight of each AND system stays within `4/(δn)`.
    pub and_smooth_ok: bool,
}

/// Max query probability over codewords, and where it is attained.
pub fn decoder_max_query(dec: &Decoder, code: &Code) -> (Q, usize, usize) {
    let n = dec.n;
    let per = par::map_slice(&dec.trees, |t| {
        let mut best = (Q::zero(), t.u, 0);
        for x in &code.codewords {
            for (v, p) in t.query_probs(x, n).into_iter().enumerate() {
                if p > best.0 {
                    best = (p, t.u, v);
                }
            }
        }
        best
    });
    per.into_iter().fold((Q::zero(), 0, 0), |b, x| if x.0 > b.0 { x } else { b })
}

/// Measured smoothness constant of the compiled collection. With `delta`
/// given, a decoder query probability above `1/(δn)` is an error naming the
/// offending `(u, v)`.
pub fn smoothness(dec: &Decoder, code: &Code, systems: &[AndSystem], col: &HypergraphCollection, delta: Option<f64>) -> Result<SmoothnessReport> {
    let n = dec.n;
    let (pmax, pu, pv) = decoder_max_query(dec, code);
    let pmax_f = rational::to_f64(&pmax);
    if let Some(d) = delta {
        if pmax_f > 1.0 / (d * n as f64) + 1e-15 {
            return Err(Error::Check(format!(
                "decoder is not {d}-smooth: index {} queries {} with probability {}",
                pu + 1,
                pv + 1,
                rational::format(&pmax)
            )));
        }
    }
    let delta_decoder = 1.0 / (n as f64 * pmax_f);
    let (wmax, wu, wv) = col.max_incident();
    let delta_collection = 1.0 / (col.n as f64 * rational::to_f64(&wmax));
    let bound = Q::from_integer(BigInt::from(4)) * &pmax;
    let and_smooth_ok = systems.iter().all(|s| s.incident(n).iter().all(|w| *w <= bound));
    Ok(SmoothnessReport {
        delta_decoder,
        delta_collection,
        c: delta_decoder / delta_collection,
        worst_u: wu,
        worst_v: wv,
        worst_weight: wmax,
        and_smooth_ok,
    })
}

#[derive(Clone, Debug, Serialize, Default)]
pub struct CompileCheck {
    pub wtbound_ok: bool,
    pub wtcompl_ok: bool,
    pub polycompl_ok: bool,
    pub padded_ok: bool,
    pub normalization_ok: bool,
    /// `min_{u,x} E[Dec^x(u) x_u]` over base indices.
    #[serde(with = "rational::serde_q")]
    pub min_correlation: Q,
}

fn qd(num: i128, d: i128) -> Q {
    Q::new(BigInt::from(num), BigInt::from(d))
}

impl Pair {
    /// `f_u` on every input, over a common denominator when it fits.
    pub fn eval_all(&self, xs: &[Vec<Sign>]) -> Vec<Q> {
        let Some((d, nums)) = rational::common_scale(self.g.values().chain(self.h.values())) else {
            return xs.iter().map(|x| self.f(x)).collect();
        };
        let (gn, hn) = nums.split_at(self.g.len());
        let gk: Vec<_> = self.g.keys().copied().zip(gn.iter().copied()).collect();
        let hk: Vec<_> = self.h.keys().copied().zip(hn.iter().copied()).collect();
        xs.iter()
            .map(|x| {
                let g: i128 = gk.iter().map(|&((a, b), w)| w * (x[a] * x[b]) as i128).sum();
                let h: i128 = hk.iter().map(|&((a, b, c), w)| w * (x[a] * x[b] * x[c]) as i128).sum();
                qd(g + h, d)
            })
            .collect()
    }
}

impl AndSystem {
    /// `(AND mass, polynomial)` on every input.
    pub fn eval_all(&self, xs: &[Vec<Sign>]) -> Vec<(Q, Q)> {
        let Some((d, nums)) = rational::common_scale(self.g.values().chain(self.h.values())) else {
            return xs.iter().map(|x| (self.and_mass(x), self.poly(x))).collect();
        };
        let (gn, hn) = nums.split_at(self.g.len());
        xs.iter()
            .map(|x| {
                let (mut mass, mut poly) = (0i128, 0i128);
                for (k, &w) in self.g.keys().zip(gn) {
                    if and_s(k.a1 * x[k.v1], k.a2 * x[k.v2]) {
                        mass += w;
                        poly += w * k.sigma as i128;
                    }
                }
                for (k, &w) in self.h.keys().zip(hn) {
                    if and_s(k.a1 * x[k.v1], k.a2 * x[k.v2]) {
                        mass += w;
                        poly += w * (k.sigma * x[k.v3]) as i128;
                    }
                }
                (qd(mass, d), qd(poly, d))
            })
            .collect()
    }
}

/// Every exact identity on every codeword.
pub fn check_compiled(dec: &Decoder, code: &Code, systems: &[AndSystem], col: &HypergraphCollection) -> CompileCheck {
    let four = Q::from_integer(BigInt::from(4));
    let wtbound_ok = systems.iter().all(|s| s.total() == four);
    let n = dec.n;
    // expect[u][b] = E[Dec^{x_b}(u)]
    let expect: Vec<Vec<Q>> = par::map_slice(&dec.trees, |t| code.codewords.iter().map(|x| t.expectation(x)).collect());
    let per_u = par::map_range(n, |u| {
        let vals = systems[u].eval_all(&code.codewords);
        let compl = vals.iter().all(|(m, _)| m.is_one());
        let poly = vals.iter().zip(&expect[u]).all(|((_, p), e)| p == e);
        let minc = expect[u]
            .iter()
            .zip(&code.codewords)
            .map(|(e, x)| e * Q::from_integer(BigInt::from(x[u])))
            .min()
            .unwrap_or_else(Q::one);
        (compl, poly, minc)
    });
    let padded = code.padded();
    let padded_ok = par::map_range(col.n, |u| {
        let fs = col.pairs[u].eval_all(&padded.codewords);
        fs.iter().zip(&padded.codewords).enumerate().all(|(b, (f, y))| {
            let want = match u / n {
                0 | 1 => &expect[u % n][b] * Q::from_integer(BigInt::from(code.codewords[b][u % n])),
                _ => Q::one(),
            };
            f * Q::from_integer(BigInt::from(y[u])) == want
        })
    })
    .into_iter()
    .all(|b| b);
    CompileCheck {
        wtbound_ok,
        wtcompl_ok: per_u.iter().all(|p| p.0),
        polycompl_ok: per_u.iter().all(|p| p.1),
        padded_ok,
        normalization_ok: col.normalization_ok(),
        min_correlation: per_u.into_iter().map(|p| p.2).min().unwrap_or_else(Q::one),
    }
}

/// Leaves for a fixed query order decoding `x_u = x_{v1} x_{v2} x_{v3}`.
fn parity_leaves(v3: usize, a1: Sign, a2: Sign, eps: Option<&Q>) -> Vec<Leaf> {
    let s = a1 * a2;
    match eps {
        None => vec![Leaf { v: v3, p: rational::one(), tag: Tag::a3(s) }],
        Some(e) => {
            let half = e / Q::from_integer(BigInt::from(2));
            vec![
                Leaf { v: v3, p: rational::one() - e, tag: Tag::a3(s) },
                Leaf { v: v3, p: half.clone(), tag: Tag::One },
                Leaf { v: v3, p: half, tag: Tag::a3(-s) },
            ]
        }
    }
}

/// Decoder picking an ordered triple with the given probabilities and
/// outputting the parity of the answers.
pub fn triple_decoder(u: usize, triples: &[([usize; 3], Q)], eps: Option<&Q>) -> Tree {
    let root = triples
        .iter()
        .map(|([v1, v2, v3], p)| {
            let sec = |a1: Sign| {
                vec![Second {
                    v: *v2,
                    p: rational::one(),
                    on: Branches { neg: parity_leaves(*v3, a1, -1, eps), pos: parity_leaves(*v3, a1, 1, eps) },
                }]
            };
            First { v: *v1, p: p.clone(), on: Branches { neg: sec(-1), pos: sec(1) } }
        })
        .collect();
    Tree { u, root }
}

#[derive(Clone, Debug)]
pub struct ToyLcc {
    pub name: String,
    pub code: Code,
    pub decoder: Decoder,
}

/// Even-weight code of length 4, decoded from the other three coordinates.
pub fn toy_parity4() -> ToyLcc {
    let rows: Vec<Vec<bool>> = (0..3).map(|i| (0..4).map(|v| v == i || v == 3).collect()).collect();
    let code = Code::from_generator(4, &rows, vec![0, 1, 2]);
    let trees = (0..4)
        .map(|u| {
            let o: Vec<usize> = (0..4).filter(|&v| v != u).collect();
            triple_decoder(u, &[([o[0], o[1], o[2]], rational::one())], None)
        })
        .collect();
    ToyLcc { name: "parity4".into(), code, decoder: Decoder { n: 4, trees } }
}

/// Reed–Muller design code over GF(4)^t with one of several decoders.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RmDecoder {
    /// Uniform over `H_u`, fixed order.
    Canonical,
    /// Always the first triple of `H_u`.
    NonSmooth,
    /// First query uniform; the order of the remaining two depends on its answer.
    Adaptive,
}

pub fn toy_rm(t: u32, kind: RmDecoder, eps: Option<Q>) -> Result<ToyLcc> {
    let lcc = build_rm_design(t, 1 << 12)?;
    let m = derive_matchings(&lcc)?;
    let n = lcc.design.n;
    let (pivots, rows) = systematic_basis(&lcc)?;
    let gen: Vec<Vec<bool>> = rows.iter().map(|r| (0..n).map(|v| r.get(v)).collect()).collect();
    let code = Code::from_generator(n, &gen, pivots);
    let eps_ref = eps.as_ref();
    let trees = (0..n)
        .map(|u| match kind {
            RmDecoder::Canonical => {
                let p = Q::new(BigInt::one(), BigInt::from(m.h[u].len()));
                let ts: Vec<([usize; 3], Q)> = m.h[u].iter().map(|t| (*t, p.clone())).collect();
                triple_decoder(u, &ts, eps_ref)
            }
            RmDecoder::NonSmooth => triple_decoder(u, &[(m.h[u][0], rational::one())], eps_ref),
            RmDecoder::Adaptive => {
                let p = Q::new(BigInt::one(), BigInt::from(n - 1));
                let root = (0..n)
                    .filter(|&v| v != u)
                    .map(|v1| {
                        let tri = m.triple_with(u, v1).expect("design covers every pair");
                        let o: Vec<usize> = tri.iter().copied().filter(|&v| v != v1).collect();
                        let sec = |a1: Sign| {
                            let (v2, v3) = if a1 > 0 { (o[0], o[1]) } else { (o[1], o[0]) };
                            vec![Second {
                                v: v2,
                                p: rational::one(),
                                on: Branches { neg: parity_leaves(v3, a1, -1, eps_ref), pos: parity_leaves(v3, a1, 1, eps_ref) },
                            }]
                        };
                        First { v: v1, p: p.clone(), on: Branches { neg: sec(-1), pos: sec(1) } }
                    })
                    .collect();
                Tree { u, root }
            }
        })
        .collect();
    let name = format!("rm{t}-{kind:?}{}", if eps.is_some() { "-noisy" } else { "" }).to_lowercase();
    Ok(ToyLcc { name, code, decoder: Decoder { n, trees } })
}

/// Hadamard code of length 2^m. Index u ≠ 0 reads `x_v x_{v⊕u}` and ignores a
/// third query; index 0 reads a parity of three points.
pub fn toy_hadamard(m: u32) -> ToyLcc {
    let n = 1usize << m;
    let rows: Vec<Vec<bool>> = (0..m).map(|i| (0..n).map(|a| a >> i & 1 == 1).collect()).collect();
    let code = Code::from_generator(n, &rows, (0..m as usize).map(|i| 1 << i).collect());
    let trees = (0..n)
        .map(|u| {
            if u == 0 {
                let v2 = 1;
                let cands: Vec<usize> = (2..n).collect();
                let p = Q::new(BigInt::one(), BigInt::from(cands.len()));
                let ts: Vec<([usize; 3], Q)> = cands.iter().map(|&v1| ([v1, v2, v1 ^ v2], p.clone())).collect();
                return triple_decoder(0, &ts, None);
            }
            let cands: Vec<usize> = (1..n).filter(|&v| v != u).collect();
            let p = Q::new(BigInt::one(), BigInt::from(cands.len()));
            let root = cands
                .iter()
                .map(|&v1| {
                    let v2 = v1 ^ u;
                    let v3 = (0..n).find(|&v| v != u && v != v1 && v != v2).expect("n ≥ 4");
                    let sec = |a1: Sign| {
                        vec![Second {
                            v: v2,
                            p: rational::one(),
                            on: Branches {
                                neg: vec![Leaf { v: v3, p: rational::one(), tag: Tag::constant(-a1) }],
                                pos: vec![Leaf { v: v3, p: rational::one(), tag: Tag::constant(a1) }],
                            },
                        }]
                    };
                    First { v: v1, p: p.clone(), on: Branches { neg: sec(-1), pos: sec(1) } }
                })
                .collect();
            Tree { u, root }
        })
        .collect();
    ToyLcc { name: format!("hadamard{m}"), code, decoder: Decoder { n, trees } }
}

/// All toy codes used by the tests and the harness.
pub fn zoo() -> Result<Vec<ToyLcc>> {
    Ok(vec![
        toy_parity4(),
        toy_hadamard(3),
        toy_rm(2, RmDecoder::Canonical, None)?,
        toy_rm(2, RmDecoder::NonSmooth, None)?,
        toy_rm(2, RmDecoder::Adaptive, None)?,
        toy_rm(2, RmDecoder::Canonical, Some(Q::new(BigInt::one(), BigInt::from(20))))?,
    ])
}

/// Random collection on `n ≥ 4` vertices: each `u` gets `h` hyperedges and
/// `g` graph edges avoiding `u`, with integer proportions scaled so both
/// halves have total weight 1.
pub fn synthetic_collection(n: usize, h: usize, g: usize, seed: u64) -> HypergraphCollection {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::with_capacity(n);
    for u in 0..n {
        let pick = |rng: &mut rand_chacha::ChaCha8Rng, k: usize| -> Vec<usize> {
            let mut vs: Vec<usize> = Vec::with_capacity(k);
            while vs.len() < k {
                let v = rng.random_range(0..n);
                if v != u && !vs.contains(&v) {
                    vs.push(v);
                }
            }
            vs
        };
        let mut raw_h: BTreeMap<(usize, usize, usize), i64> = BTreeMap::new();
        for _ in 0..h {
            let e = pick(&mut rng, 3);
            *raw_h.entry((e[0], e[1], e[2])).or_default() += rng.random_range(1..5);
        }
        let mut raw_g: BTreeMap<(usize, usize), i64> = BTreeMap::new();
        for _ in 0..g {
            let e = pick(&mut rng, 2);
            *raw_g.entry((e[0], e[1])).or_default() += rng.random_range(1..5);
        }
        let th: i64 = raw_h.values().sum();
        let tg: i64 = raw_g.values().sum();
        pairs.push(Pair {
            g: raw_g.into_iter().map(|(k, a)| (k, Q::new(BigInt::from(a), BigInt::from(tg)))).collect(),
            h: raw_h.into_iter().map(|(k, a)| (k, Q::new(BigInt::from(a), BigInt::from(th)))).collect(),
        });
    }
    HypergraphCollection { n, pairs }
}

/// Smoothness constant the compiled collection is checked against.
pub const SMOOTH_C: f64 = 16.0;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn and_values() {
        assert_eq!(and_poly(1, 1).unwrap(), 1);
        assert_eq!(and_poly(-1, 1).unwrap(), 0);
        assert_eq!(and_poly(-1, -1).unwrap(), 0);
        assert!(and_poly(0, 1).is_err());
    }

    #[test]
    fn code_json_roundtrip() {
        let t = toy_parity4();
        assert_eq!(Code::from_json(&t.code.to_json()).unwrap(), t.code);
        let g = Code::from_json(r#"{"n":3,"generator":[[1,0,1],[0,1,1]],"systematic":[1,2]}"#).unwrap();
        assert_eq!(g.k, 2);
        assert!(Code::from_json(r#"{"n":3,"generator":[[1,0,1],[0,1,1]],"systematic":[3,2]}"#).is_err());
    }

    #[test]
    fn synthetic_is_normalized() {
        for seed in 0..5 {
            let col = synthetic_collection(9, 3, 2, seed);
            assert!(col.normalization_ok());
            assert!(col.pairs.iter().all(|p| p.total_h() == Q::one() && p.total_g() == Q::one()));
        }
    }

    #[test]
    fn constant_decoder_goes_to_g() {
        let t = toy_hadamard(3);
        let s = compile_and_weights(&t.decoder.trees[3], 8).unwrap();
        assert!(s.h.is_empty());
        assert_eq!(s.total(), Q::from_integer(BigInt::from(4)));
    }

    #[test]
    fn malformed_distribution_rejected() {
        let mut t = toy_parity4();
        t.decoder.trees[0].root[0].p = Q::new(BigInt::one(), BigInt::from(2));
        assert!(compile_and_weights(&t.decoder.trees[0], 4).is_err());
    }

    #[test]
    fn one_bit_gadget() {
        let p = constant_pair(4, 1);
        assert!(p.h.is_empty());
        assert_eq!(p.g.len(), 24);
        assert_eq!(p.total_g(), rational::one());
        assert_eq!(*p.g.values().next().unwrap(), Q::new(BigInt::one(), BigInt::from(24)));
    }

    #[test]
    fn pad_flip_is_involution() {
        let p = Pad { n: 5 };
        for v in 0..20 {
            assert_eq!(p.flip(p.flip(v)), v);
        }
    }

    #[test]
    fn decoder_json_roundtrip() {
        let t = toy_parity4();
        let back = Decoder::from_json(&t.decoder.to_json()).unwrap();
        assert_eq!(back, t.decoder);
    }
}

#[cfg(test)]
mod zoo_tests {
    use super::*;

    #[test]
    fn zoo_compiles_exactly() {
        for toy in zoo().unwrap() {
            assert!(toy.code.check_systematic(), "{}", toy.name);
            let (sys, col) = compile_collection(&toy.decoder).unwrap();
            let chk = check_compiled(&toy.decoder, &toy.code, &sys, &col);
            assert!(chk.wtbound_ok && chk.wtcompl_ok && chk.polycompl_ok, "{}: {chk:?}", toy.name);
            assert!(chk.padded_ok && chk.normalization_ok, "{}: {chk:?}", toy.name);
            let sm = smoothness(&toy.decoder, &toy.code, &sys, &col, None).unwrap();
            eprintln!("{} c={} dd={} dc={} min_corr={}", toy.name, sm.c, sm.delta_decoder, sm.delta_collection, rational::format(&chk.min_correlation));
            assert!(sm.and_smooth_ok, "{}", toy.name);
            assert!(sm.c <= SMOOTH_C, "{}: c = {}", toy.name, sm.c);
        }
    }
}
