//! Sparse real matrices and their spectral norms, plus the matrix
//! Khintchine experiment.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::par;

/// Largest side for a dense decomposition.
pub const EXACT_MAX: usize = 512;

/// Relative slack added to floating-point upper bounds.
pub const SLACK: f64 = 1e-9;

/// Sorted, duplicate-free triplets over an `n_rows × n_cols` index space.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    pub n_rows: u64,
    pub n_cols: u64,
    pub entries: Vec<(u64, u64, f64)>,
}

impl SparseMatrix {
    pub fn new(n_rows: u64, n_cols: u64, mut entries: Vec<(u64, u64, f64)>) -> SparseMatrix {
        entries.sort_by_key(|a| (a.0, a.1));
        let mut out: Vec<(u64, u64, f64)> = Vec::with_capacity(entries.len());
        for (r, c, v) in entries {
            match out.last_mut() {
                Some(last) if last.0 == r && last.1 == c => last.2 += v,
                _ => out.push((r, c, v)),
            }
        }
        out.retain(|e| e.2 != 0.0);
        SparseMatrix { n_rows, n_cols, entries: out }
    }

    pub fn identity(n: u64) -> SparseMatrix {
        SparseMatrix::new(n, n, (0..n).map(|i| (i, i, 1.0)).collect())
    }

    pub fn from_dense(m: &DMatrix<f64>) -> SparseMatrix {
        let mut e = Vec::new();
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                e.push((r as u64, c as u64, m[(r, c)]));
            }
        }
        SparseMatrix::new(m.nrows() as u64, m.ncols() as u64, e)
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    /// Dense copy over the nonzero rows and columns only.
    pub fn compact_dense(&self) -> DMatrix<f64> {
        let c = Csr::new(self);
        let mut m = DMatrix::zeros(c.nr, c.nc);
        for r in 0..c.nr {
            for k in c.rp[r]..c.rp[r + 1] {
                m[(r, c.ci[k])] += c.rv[k];
            }
        }
        m
    }

    /// Connected components of the row/column incidence graph, each with
    /// local indices.
    pub fn components(&self) -> Vec<SparseMatrix> {
        let c = Csr::new(self);
        let mut parent: Vec<usize> = (0..c.nr + c.nc).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for r in 0..c.nr {
            for k in c.rp[r]..c.rp[r + 1] {
                let (a, b) = (find(&mut parent, r), find(&mut parent, c.nr + c.ci[k]));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
        let mut root_id = std::collections::BTreeMap::new();
        let mut rows_of: Vec<Vec<usize>> = Vec::new();
        let mut cols_of: Vec<Vec<usize>> = Vec::new();
        let mut local = vec![0usize; c.nr + c.nc];
        for x in 0..c.nr + c.nc {
            let root = find(&mut parent, x);
            let id = *root_id.entry(root).or_insert_with(|| {
                rows_of.push(Vec::new());
                cols_of.push(Vec::new());
                rows_of.len() - 1
            });
            if x < c.nr {
                local[x] = rows_of[id].len();
                rows_of[id].push(x);
            } else {
                local[x] = cols_of[id].len();
                cols_of[id].push(x - c.nr);
            }
        }
        let mut ents: Vec<Vec<(u64, u64, f64)>> = vec![Vec::new(); rows_of.len()];
        for r in 0..c.nr {
            let id = root_id[&find(&mut parent, r)];
            for k in c.rp[r]..c.rp[r + 1] {
                ents[id].push((local[r] as u64, local[c.nr + c.ci[k]] as u64, c.rv[k]));
            }
        }
        ents.into_iter()
            .enumerate()
            .map(|(id, e)| SparseMatrix::new(rows_of[id].len() as u64, cols_of[id].len() as u64, e))
            .collect()
    }
}

/// Row and column compressed storage over the nonzero rows and columns.
struct Csr {
    nr: usize,
    nc: usize,
    rp: Vec<usize>,
    ci: Vec<usize>,
    rv: Vec<f64>,
    cp: Vec<usize>,
    ri: Vec<usize>,
    cv: Vec<f64>,
}

impl Csr {
    fn new(m: &SparseMatrix) -> Csr {
        let mut rows: Vec<u64> = m.entries.iter().map(|e| e.0).collect();
        rows.dedup();
        let mut cols: Vec<u64> = m.entries.iter().map(|e| e.1).collect();
        cols.sort_unstable();
        cols.dedup();
        let (nr, nc) = (rows.len(), cols.len());
        let mut rp = vec![0usize; nr + 1];
        let mut ci = Vec::with_capacity(m.nnz());
        let mut rv = Vec::with_capacity(m.nnz());
        let mut cnt = vec![0usize; nc + 1];
        let mut row = 0;
        for &(r, c, v) in &m.entries {
            while rows[row] != r {
                row += 1;
            }
            rp[row + 1] += 1;
            let j = cols.binary_search(&c).expect("column present");
            ci.push(j);
            rv.push(v);
            cnt[j + 1] += 1;
        }
        for i in 0..nr {
            rp[i + 1] += rp[i];
        }
        for j in 0..nc {
            cnt[j + 1] += cnt[j];
        }
        let cp = cnt.clone();
        let mut fill = cnt;
        let mut ri = vec![0usize; m.nnz()];
        let mut cv = vec![0.0; m.nnz()];
        for r in 0..nr {
            for k in rp[r]..rp[r + 1] {
                let j = ci[k];
                ri[fill[j]] = r;
                cv[fill[j]] = rv[k];
                fill[j] += 1;
            }
        }
        Csr { nr, nc, rp, ci, rv, cp, ri, cv }
    }

    fn abs(&self) -> Csr {
        Csr {
            nr: self.nr,
            nc: self.nc,
            rp: self.rp.clone(),
            ci: self.ci.clone(),
            rv: self.rv.iter().map(|v| v.abs()).collect(),
            cp: self.cp.clone(),
            ri: self.ri.clone(),
            cv: self.cv.iter().map(|v| v.abs()).collect(),
        }
    }

    fn mul(&self, v: &[f64]) -> Vec<f64> {
        par::map_range(self.nr, |r| (self.rp[r]..self.rp[r + 1]).map(|k| self.rv[k] * v[self.ci[k]]).sum())
    }

    fn mul_t(&self, y: &[f64]) -> Vec<f64> {
        par::map_range(self.nc, |c| (self.cp[c]..self.cp[c + 1]).map(|k| self.cv[k] * y[self.ri[k]]).sum())
    }

    fn gram(&self, v: &[f64]) -> Vec<f64> {
        self.mul_t(&self.mul(v))
    }
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[derive(Clone, Copy, Debug)]
pub enum Method {
    Exact,
    Power { seed: u64, tol: f64, max_iter: usize },
}

#[derive(Clone, Debug, Serialize)]
pub struct NormEstimate {
    pub estimate: f64,
    /// `‖BᵀBv − θv‖` at the last iterate (0 for an exact decomposition).
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn dense_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().svd(false, false).singular_values.max()
}

/// Power iteration on `BᵀB` from a seeded start. `‖Bv‖` for the final unit
/// `v` never exceeds `‖B‖₂`.
pub fn power_iteration(b: &SparseMatrix, seed: u64, tol: f64, max_iter: usize) -> NormEstimate {
    let c = Csr::new(b);
    if c.nc == 0 {
        return NormEstimate { estimate: 0.0, residual: 0.0, iterations: 0, converged: true };
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..c.nc).map(|_| rng.random_range(0.5..1.5)).collect();
    let n0 = norm2(&v);
    v.iter_mut().for_each(|x| *x /= n0);
    let mut out = NormEstimate { estimate: 0.0, residual: f64::INFINITY, iterations: 0, converged: false };
    for it in 1..=max_iter {
        let w = c.gram(&v);
        let theta: f64 = w.iter().zip(&v).map(|(a, b)| a * b).sum();
        let res = norm2(&w.iter().zip(&v).map(|(a, b)| a - theta * b).collect::<Vec<_>>());
        out = NormEstimate { estimate: theta.max(0.0).sqrt(), residual: res, iterations: it, converged: res <= tol * theta.abs() };
        let nw = norm2(&w);
        if out.converged || nw == 0.0 {
            out.converged = true;
            break;
        }
        v = w.into_iter().map(|x| x / nw).collect();
    }
    out.estimate = norm2(&c.mul(&v));
    out
}

pub fn spectral_norm(b: &SparseMatrix, method: Method) -> Result<NormEstimate> {
    match method {
        Method::Exact => {
            let d = b.compact_dense();
            if d.nrows() > EXACT_MAX || d.ncols() > EXACT_MAX {
                return Err(Error::Config(format!("exact norm needs at most {EXACT_MAX} nonzero rows and columns, got {}×{}", d.nrows(), d.ncols())));
            }
            Ok(NormEstimate { estimate: dense_norm(&d), residual: 0.0, iterations: 0, converged: true })
        }
        Method::Power { seed, tol, max_iter } => Ok(power_iteration(b, seed, tol, max_iter)),
    }
}

/// `min(√(‖B‖₁‖B‖_∞), √ρ(|B|ᵀ|B|))`, the second via a Collatz–Wielandt
/// ratio on a positive vector.
fn abs_bound(c: &Csr) -> f64 {
    let a = c.abs();
    let row_max = (0..a.nr).map(|r| a.rv[a.rp[r]..a.rp[r + 1]].iter().sum::<f64>()).fold(0.0, f64::max);
    let col_max = (0..a.nc).map(|j| a.cv[a.cp[j]..a.cp[j + 1]].iter().sum::<f64>()).fold(0.0, f64::max);
    let schur = (row_max * col_max).sqrt();
    let mut v = vec![1.0; a.nc];
    for _ in 0..200 {
        let w = a.gram(&v);
        let m = w.iter().cloned().fold(0.0, f64::max);
        if m == 0.0 {
            return 0.0;
        }
        v = w.into_iter().map(|x| x / m).collect();
    }
    let w = a.gram(&v);
    let cw = w.iter().zip(&v).map(|(x, y)| if *y > 0.0 { x / y } else { f64::INFINITY }).fold(0.0, f64::max);
    schur.min(cw.sqrt())
}

#[derive(Clone, Debug, Serialize)]
pub struct NormBounds {
    /// Rigorous up to the floating-point slack.
    pub upper: f64,
    /// Largest exact component norm or `‖Bv‖`.
    pub lower: f64,
    pub components: usize,
    /// Largest component side.
    pub largest: usize,
    /// Components bounded without a decomposition.
    pub bounded: usize,
    pub power: NormEstimate,
}

/// Norm of `B` as the largest component norm: exact when the component is
/// small, bounded through `|B|` otherwise.
pub fn norm_bounds(b: &SparseMatrix, seed: u64) -> NormBounds {
    let comps = b.components();
    let per = par::map_slice(&comps, |m| {
        let side = m.n_rows.max(m.n_cols) as usize;
        if side <= EXACT_MAX {
            let s = dense_norm(&m.compact_dense());
            (s, s, side, false)
        } else {
            let p = power_iteration(m, seed, 1e-9, 2000);
            (abs_bound(&Csr::new(m)), p.estimate, side, true)
        }
    });
    let upper = per.iter().map(|p| p.0).fold(0.0, f64::max) * (1.0 + SLACK);
    let lower = per.iter().map(|p| p.1).fold(0.0, f64::max);
    let largest = per.iter().map(|p| p.2).max().unwrap_or(0);
    let bounded = per.iter().filter(|p| p.3).count();
    let power = power_iteration(b, seed, 1e-9, 5000);
    NormBounds { upper: upper.max(lower), lower: lower.max(power.estimate.min(upper)), components: comps.len(), largest, bounded, power }
}

#[derive(Clone, Debug, Serialize)]
pub struct KhintchineReport {
    pub family: String,
    pub k: usize,
    pub d1: usize,
    pub d2: usize,
    pub sigma2: f64,
    pub bound: f64,
    pub mean_norm: f64,
    pub ratio: f64,
    pub trials: usize,
}

/// `E‖Σ b_i X_i‖₂` over random signs against `√(2σ² ln(d₁+d₂))`.
pub fn khintchine(family: &str, xs: &[DMatrix<f64>], trials: usize, seed: u64) -> Result<KhintchineReport> {
    let (d1, d2) = match xs.first() {
        Some(x) => (x.nrows(), x.ncols()),
        None => return Err(Error::Config("empty matrix family".into())),
    };
    if xs.iter().any(|x| x.nrows() != d1 || x.ncols() != d2) {
        return Err(Error::Config("matrix family has mixed shapes".into()));
    }
    let mut s1 = DMatrix::zeros(d1, d1);
    let mut s2 = DMatrix::zeros(d2, d2);
    for x in xs {
        s1 += x * x.transpose();
        s2 += x.transpose() * x;
    }
    let sigma2 = dense_norm(&s1).max(dense_norm(&s2));
    let bound = (2.0 * sigma2 * ((d1 + d2) as f64).ln()).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let signs: Vec<Vec<f64>> = (0..trials).map(|_| xs.iter().map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect()).collect();
    let norms = par::map_slice(&signs, |b| {
        let mut s = DMatrix::zeros(d1, d2);
        for (bi, x) in b.iter().zip(xs) {
            s += x * *bi;
        }
        dense_norm(&s)
    });
    let mean_norm = norms.iter().sum::<f64>() / trials.max(1) as f64;
    let ratio = if bound > 0.0 { mean_norm / bound } else { 0.0 };
    Ok(KhintchineReport { family: family.into(), k: xs.len(), d1, d2, sigma2, bound, mean_norm, ratio, trials })
}

/// Seeded fixture families.
pub fn fixture_families(seed: u64) -> Vec<(String, Vec<DMatrix<f64>>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fams = vec![("unit".to_string(), vec![DMatrix::from_element(1, 1, 1.0)])];
    let d = 16;
    let perms: Vec<DMatrix<f64>> = (0..8)
        .map(|_| {
            let mut p: Vec<usize> = (0..d).collect();
            for i in (1..d).rev() {
                p.swap(i, rng.random_range(0..=i));
            }
            DMatrix::from_fn(d, d, |r, c| if p[r] == c { 1.0 } else { 0.0 })
        })
        .collect();
    fams.push(("permutations".into(), perms));
    fams.push(("diagonal".into(), (0..12).map(|i| DMatrix::from_fn(12, 12, |r, c| if r == i && c == i { 1.0 } else { 0.0 })).collect()));
    fams.push(("uniform-6x10".into(), (0..10).map(|_| DMatrix::from_fn(6, 10, |_, _| rng.random_range(-1.0..1.0))).collect()));
    fams.push(("identity".into(), (0..6).map(|_| DMatrix::identity(5, 5)).collect()));
    fams
}

/// Random `±1` sum of `m` partial matchings on `d` vertices.
pub fn random_matching_sum(d: usize, m: usize, seed: u64) -> SparseMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut e = Vec::new();
    for _ in 0..m {
        let mut p: Vec<usize> = (0..d).collect();
        for i in (1..d).rev() {
            p.swap(i, rng.random_range(0..=i));
        }
        let s = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        for pair in p.chunks_exact(2) {
            e.push((pair[0] as u64, pair[1] as u64, s));
            e.push((pair[1] as u64, pair[0] as u64, s));
        }
    }
    SparseMatrix::new(d as u64, d as u64, e)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_norm() {
        let b = SparseMatrix::identity(7);
        assert!((spectral_norm(&b, Method::Exact).unwrap().estimate - 1.0).abs() < 1e-12);
        let nb = norm_bounds(&b, 1);
        assert_eq!(nb.components, 7);
        assert!((nb.upper - 1.0).abs() < 1e-8 && nb.lower <= nb.upper);
    }

    #[test]
    fn rank_one() {
        let u = [1.0, -2.0, 0.5, 3.0];
        let s: f64 = u.iter().map(|x| x * x).sum();
        let m = DMatrix::from_fn(4, 4, |r, c| u[r] * u[c]);
        let b = SparseMatrix::from_dense(&m);
        assert!((spectral_norm(&b, Method::Exact).unwrap().estimate - s).abs() < 1e-9);
        let p = spectral_norm(&b, Method::Power { seed: 3, tol: 1e-12, max_iter: 100 }).unwrap();
        assert!(p.converged && (p.estimate - s).abs() < 1e-9);
    }

    #[test]
    fn power_matches_exact_on_matchings() {
        for seed in 0..5 {
            let b = random_matching_sum(40, 6, seed);
            let exact = spectral_norm(&b, Method::Exact).unwrap().estimate;
            let p = spectral_norm(&b, Method::Power { seed, tol: 1e-12, max_iter: 200_000 }).unwrap();
            assert!(p.converged, "seed {seed}: residual {}", p.residual);
            assert!((p.estimate - exact).abs() <= 1e-9 * exact, "seed {seed}: {} vs {exact}", p.estimate);
            assert!(p.estimate <= exact * (1.0 + 1e-12));
        }
    }

    #[test]
    fn abs_bound_dominates() {
        for seed in 0..5 {
            let b = random_matching_sum(30, 5, 100 + seed);
            let exact = spectral_norm(&b, Method::Exact).unwrap().estimate;
            let ub = abs_bound(&Csr::new(&b));
            assert!(ub >= exact * (1.0 - 1e-12), "{ub} < {exact}");
        }
    }

    #[test]
    fn components_split_blocks() {
        let b = SparseMatrix::new(10, 10, vec![(0, 1, 2.0), (1, 0, 2.0), (5, 7, -3.0), (6, 6, 1.0)]);
        let nb = norm_bounds(&b, 0);
        assert_eq!(nb.components, 4);
        assert!((nb.upper - 3.0).abs() < 1e-6);
        let dense = b.compact_dense();
        assert!((dense_norm(&dense) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn unit_khintchine() {
        let r = khintchine("unit", &[DMatrix::from_element(1, 1, 1.0)], 200, 1).unwrap();
        assert!((r.mean_norm - 1.0).abs() < 1e-12);
        assert!((r.bound - (2.0f64 * 2f64.ln()).sqrt()).abs() < 1e-12);
        assert!(r.ratio <= 1.0);
    }

    #[test]
    fn empty_matrix() {
        let b = SparseMatrix::new(4, 4, Vec::new());
        assert_eq!(norm_bounds(&b, 0).upper, 0.0);
        assert_eq!(power_iteration(&b, 0, 1e-9, 10).estimate, 0.0);
    }
}
