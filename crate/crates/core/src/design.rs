//! Reed–Muller 2-(n,4,1) designs over GF(4)^t and their binary dual codes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gf2::{span_dim, systematic_subset, BitMatrix, BitVec};
use crate::gf4::{Projection, F4};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Design {
    pub n: usize,
    /// Sorted 4-sets of 0-based points.
    pub blocks: Vec<[usize; 4]>,
}

#[derive(Clone, Debug)]
pub struct DesignLcc {
    pub design: Design,
    pub dual_basis: Vec<BitVec>,
    pub k: usize,
}

/// `h[u]` lists the triples `C \ {u}` for blocks `C ∋ u`, each sorted.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MatchingFamily {
    pub n: usize,
    pub h: Vec<Vec<[usize; 3]>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct DesignReport {
    pub pass: bool,
    pub pairs: usize,
    pub uncovered: usize,
    pub multiply_covered: usize,
    /// First offending pair (0-based) in lexicographic order.
    pub first_violation: Option<(usize, usize)>,
    pub bad_blocks: usize,
}

pub fn num_points(t: u32) -> usize {
    4usize.pow(t)
}

/// Coordinates of point `p` of GF(4)^t, most significant first.
pub fn point_coords(p: usize, t: u32) -> Vec<F4> {
    (0..t).map(|j| F4::from_index(p >> (2 * (t - 1 - j)))).collect()
}

pub fn point_index(x: &[F4]) -> usize {
    x.iter().fold(0, |acc, c| acc << 2 | c.index())
}

/// Points of the line through `x0` and `x1`, in parameter order 0, 1, β, 1+β.
pub fn line_points(x0: &[F4], x1: &[F4]) -> [usize; 4] {
    let d: Vec<F4> = x0.iter().zip(x1).map(|(a, b)| *b - *a).collect();
    let mut out = [0; 4];
    for (s, lam) in F4::ALL.iter().enumerate() {
        let pt: Vec<F4> = x0.iter().zip(&d).map(|(a, di)| *a + *lam * *di).collect();
        out[s] = point_index(&pt);
    }
    out
}

/// All affine lines of GF(4)^t, each emitted once as a sorted 4-set.
pub fn rm_lines(t: u32) -> Vec<[usize; 4]> {
    let n = num_points(t);
    let coords: Vec<Vec<F4>> = (0..n).map(|p| point_coords(p, t)).collect();
    let mut blocks = Vec::with_capacity(n * (n - 1) / 12);
    for p0 in 0..n {
        for p1 in p0 + 1..n {
            let mut line = line_points(&coords[p0], &coords[p1]);
            line.sort_unstable();
            if line[0] == p0 && line[1] == p1 {
                blocks.push(line);
            }
        }
    }
    blocks
}

pub fn incidence_matrix(d: &Design) -> BitMatrix {
    let mut m = BitMatrix::zeros(d.blocks.len(), d.n);
    for (i, b) in d.blocks.iter().enumerate() {
        for &p in b {
            m.set(i, p, true);
        }
    }
    m
}

/// Build the design of lines in GF(4)^t and its dual code.
pub fn build_rm_design(t: u32, max_points: usize) -> Result<DesignLcc> {
    if t == 0 {
        return Err(Error::Config("t must be at least 1".into()));
    }
    let n = 4u64.checked_pow(t).unwrap_or(u64::MAX);
    if n > max_points as u64 {
        return Err(Error::budget(format!("design with 4^{t} points"), n));
    }
    let design = Design { n: n as usize, blocks: rm_lines(t) };
    Ok(lcc_from_design(design))
}

pub fn lcc_from_design(design: Design) -> DesignLcc {
    let (_, dual_basis) = incidence_matrix(&design).rank_and_nullspace();
    let k = dual_basis.len();
    DesignLcc { design, dual_basis, k }
}

pub fn verify_design(d: &Design) -> DesignReport {
    let n = d.n;
    let mut cover = vec![0u32; n * n];
    let mut bad_blocks = 0;
    for b in &d.blocks {
        let distinct = (0..4).all(|i| b[i] < n && (i + 1..4).all(|j| b[i] != b[j]));
        if !distinct {
            bad_blocks += 1;
            continue;
        }
        for i in 0..4 {
            for j in i + 1..4 {
                let (u, v) = (b[i].min(b[j]), b[i].max(b[j]));
                cover[u * n + v] += 1;
            }
        }
    }
    let mut uncovered = 0;
    let mut multi = 0;
    let mut first = None;
    for u in 0..n {
        for v in u + 1..n {
            let c = cover[u * n + v];
            if c != 1 {
                if c == 0 {
                    uncovered += 1;
                } else {
                    multi += 1;
                }
                first.get_or_insert((u, v));
            }
        }
    }
    DesignReport {
        pass: uncovered == 0 && multi == 0 && bad_blocks == 0,
        pairs: n * n.saturating_sub(1) / 2,
        uncovered,
        multiply_covered: multi,
        first_violation: first,
        bad_blocks,
    }
}

pub fn derive_matchings(lcc: &DesignLcc) -> Result<MatchingFamily> {
    let rep = verify_design(&lcc.design);
    if !rep.pass {
        return Err(Error::Check(format!(
            "design axiom fails: {} uncovered, {} multiply covered, first pair {:?}",
            rep.uncovered, rep.multiply_covered, rep.first_violation
        )));
    }
    Ok(matchings_of(&lcc.design))
}

pub fn matchings_of(d: &Design) -> MatchingFamily {
    let mut h = vec![Vec::new(); d.n];
    for b in &d.blocks {
        for &u in b {
            let mut tri = [0; 3];
            let mut j = 0;
            for &v in b {
                if v != u {
                    tri[j] = v;
                    j += 1;
                }
            }
            h[u].push(tri);
        }
    }
    for l in &mut h {
        l.sort_unstable();
    }
    MatchingFamily { n: d.n, h }
}

impl MatchingFamily {
    /// Each `H_u` partitions `[n] \ {u}` into triples.
    pub fn is_perfect(&self) -> bool {
        (0..self.n).all(|u| {
            let mut seen = vec![false; self.n];
            seen[u] = true;
            for tri in &self.h[u] {
                for &v in tri {
                    if seen[v] {
                        return false;
                    }
                    seen[v] = true;
                }
            }
            seen.iter().all(|&s| s)
        })
    }

    /// Triple of `H_u` containing `v`, if any.
    pub fn triple_with(&self, u: usize, v: usize) -> Option<[usize; 3]> {
        self.h[u].iter().copied().find(|t| t.contains(&v))
    }
}

/// Count of parity checks `x_u = Σ_{v∈T} x_v` that fail on the dual basis.
pub fn parity_check_failures(lcc: &DesignLcc, m: &MatchingFamily) -> (usize, usize) {
    let mut checks = 0;
    let mut failures = 0;
    for u in 0..m.n {
        for tri in &m.h[u] {
            for x in &lcc.dual_basis {
                checks += 1;
                if x.get(u) != (x.get(tri[0]) ^ x.get(tri[1]) ^ x.get(tri[2])) {
                    failures += 1;
                }
            }
        }
    }
    (checks, failures)
}

/// Monomials of total degree ≤ 2 in t variables as exponent vectors:
/// 1, x_i, x_i x_j (i<j), and x_i² when `squares` is set.
pub fn quadratic_monomials(t: usize, squares: bool) -> Vec<Vec<u8>> {
    let mut out = vec![vec![0u8; t]];
    for i in 0..t {
        let mut e = vec![0u8; t];
        e[i] = 1;
        out.push(e);
    }
    for i in 0..t {
        for j in i + 1..t {
            let mut e = vec![0u8; t];
            e[i] = 1;
            e[j] = 1;
            out.push(e);
        }
    }
    if squares {
        for i in 0..t {
            let mut e = vec![0u8; t];
            e[i] = 2;
            out.push(e);
        }
    }
    out
}

pub fn eval_monomial(e: &[u8], x: &[F4]) -> F4 {
    let mut acc = F4::ONE;
    for (&p, &xi) in e.iter().zip(x) {
        for _ in 0..p {
            acc = acc * xi;
        }
    }
    acc
}

/// Evaluate `Σ c_m m(x)`.
pub fn eval_poly(monos: &[Vec<u8>], coeffs: &[F4], x: &[F4]) -> F4 {
    monos.iter().zip(coeffs).fold(F4::ZERO, |acc, (m, c)| acc + *c * eval_monomial(m, x))
}

#[derive(Clone, Debug, Serialize)]
pub struct DimensionRow {
    pub projection: Projection,
    /// `"F4"` when messages range over GF(4) coefficients, `"F2"` when the
    /// coefficients are restricted to GF(2).
    pub coefficients: String,
    pub squares: bool,
    pub dim: usize,
    pub contained_in_v: bool,
    pub matches_k: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct DimensionReport {
    pub t: u32,
    pub n: usize,
    pub claimed_k: usize,
    pub dim_v: usize,
    pub size_bound: f64,
    pub size_bound_holds: bool,
    pub rows: Vec<DimensionRow>,
}

impl DimensionReport {
    pub fn attaining(&self) -> Vec<&DimensionRow> {
        self.rows.iter().filter(|r| r.matches_k).collect()
    }
}

pub fn claimed_k(t: u32) -> usize {
    let t = t as usize;
    1 + t + t * t.saturating_sub(1) / 2
}

pub fn code_dimension_report(t: u32, max_points: usize) -> Result<DimensionReport> {
    let lcc = build_rm_design(t, max_points)?;
    let n = lcc.design.n;
    let k = claimed_k(t);
    let coords: Vec<Vec<F4>> = (0..n).map(|p| point_coords(p, t)).collect();
    let h = incidence_matrix(&lcc.design);
    let mut rows = Vec::new();
    for squares in [false, true] {
        let monos = quadratic_monomials(t as usize, squares);
        for coefficients in ["F4", "F2"] {
            let scalars: &[F4] = if coefficients == "F4" { &[F4::ONE, F4::BETA] } else { &[F4::ONE] };
            for proj in Projection::ALL {
                let mut vs = Vec::new();
                for m in &monos {
                    for &c in scalars {
                        let mut v = BitVec::zeros(n);
                        for (p, x) in coords.iter().enumerate() {
                            if proj.apply(c * eval_monomial(m, x)) {
                                v.set(p, true);
                            }
                        }
                        vs.push(v);
                    }
                }
                let dim = span_dim(&vs);
                let contained = vs.iter().all(|v| h.mul_vec(v).is_zero());
                rows.push(DimensionRow {
                    projection: proj,
                    coefficients: coefficients.to_string(),
                    squares,
                    dim,
                    contained_in_v: contained,
                    matches_k: dim == k,
                });
            }
        }
    }
    let size_bound = 2f64.powf(2.0 * (2.0 * k as f64).sqrt());
    Ok(DimensionReport {
        t,
        n,
        claimed_k: k,
        dim_v: lcc.k,
        size_bound,
        size_bound_holds: (n as f64) <= size_bound,
        rows,
    })
}

/// Systematic coordinates of the dual code.
pub fn systematic_coords(lcc: &DesignLcc) -> Result<Vec<usize>> {
    systematic_subset(&lcc.dual_basis)
}

/// Codeword `Σ_i m_i e_i` of the dual code in the basis that is the identity
/// on the systematic coordinates.
pub fn systematic_basis(lcc: &DesignLcc) -> Result<(Vec<usize>, Vec<BitVec>)> {
    let m = BitMatrix::from_rows(lcc.design.n, lcc.dual_basis.clone())?;
    let e = m.echelon();
    if e.pivots.len() != lcc.dual_basis.len() {
        return Err(Error::Check("dual basis is dependent".into()));
    }
    Ok((e.pivots, e.rows))
}

#[derive(Serialize, Deserialize)]
struct DesignFile {
    n: usize,
    blocks: Vec<[usize; 4]>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    k: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    dual_basis: Option<Vec<String>>,
}

impl Design {
    pub fn to_json(&self) -> String {
        let f = DesignFile {
            n: self.n,
            blocks: self.blocks.iter().map(|b| b.map(|p| p + 1)).collect(),
            k: None,
            dual_basis: None,
        };
        serde_json::to_string(&f).expect("design serializes")
    }
}

impl DesignLcc {
    pub fn to_json(&self) -> String {
        let f = DesignFile {
            n: self.design.n,
            blocks: self.design.blocks.iter().map(|b| b.map(|p| p + 1)).collect(),
            k: Some(self.k),
            dual_basis: Some(self.dual_basis.iter().map(|v| v.to_hex()).collect()),
        };
        serde_json::to_string(&f).expect("design serializes")
    }

    /// Parse a design file. When the dual basis is absent it is recomputed.
    pub fn from_json(s: &str) -> Result<DesignLcc> {
        let f: DesignFile = serde_json::from_str(s)?;
        let mut blocks = Vec::with_capacity(f.blocks.len());
        for b in &f.blocks {
            if b.iter().any(|&p| p == 0 || p > f.n) {
                return Err(Error::Parse(format!("block {b:?} out of range 1..={}", f.n)));
            }
            let mut s = b.map(|p| p - 1);
            s.sort_unstable();
            blocks.push(s);
        }
        let design = Design { n: f.n, blocks };
        match f.dual_basis {
            Some(hex) => {
                let dual_basis = hex.iter().map(|h| BitVec::from_hex(h, f.n)).collect::<Result<Vec<_>>>()?;
                let k = f.k.unwrap_or(dual_basis.len());
                Ok(DesignLcc { design, dual_basis, k })
            }
            None => Ok(lcc_from_design(design)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn t1_single_block() {
        let l = build_rm_design(1, 1 << 20).unwrap();
        assert_eq!(l.design.n, 4);
        assert_eq!(l.design.blocks, vec![[0, 1, 2, 3]]);
        let m = derive_matchings(&l).unwrap();
        assert_eq!(m.h[0], vec![[1, 2, 3]]);
    }

    #[test]
    fn deleted_block_leaves_six_uncovered() {
        let mut d = build_rm_design(2, 1 << 20).unwrap().design;
        d.blocks.pop();
        let r = verify_design(&d);
        assert!(!r.pass);
        assert_eq!(r.uncovered, 6);
        assert_eq!(r.multiply_covered, 0);
    }

    #[test]
    fn duplicated_block_doubles_six_pairs() {
        let mut d = build_rm_design(2, 1 << 20).unwrap().design;
        let b = d.blocks[3];
        d.blocks.push(b);
        let r = verify_design(&d);
        assert_eq!(r.multiply_covered, 6);
        assert_eq!(r.uncovered, 0);
    }

    #[test]
    fn budget_is_enforced() {
        assert!(matches!(build_rm_design(3, 16), Err(Error::Budget { .. })));
    }

    #[test]
    fn json_roundtrip() {
        let l = build_rm_design(2, 1 << 20).unwrap();
        let back = DesignLcc::from_json(&l.to_json()).unwrap();
        assert_eq!(back.design, l.design);
        assert_eq!(back.dual_basis, l.dual_basis);
        let plain = DesignLcc::from_json(&l.design.to_json()).unwrap();
        assert_eq!(plain.k, l.k);
    }
}
