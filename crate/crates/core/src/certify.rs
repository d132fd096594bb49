//! Refutation certificates: `val ≤ N‖B‖₂` for each pruned Kikuchi matrix,
//! combined through Cauchy–Schwarz for `Ψ`.

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_traits::{ToPrimitive, Zero};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::chain_xor::{sign_bits, val_brute, BipartitePsi, ChainXorInstance, XorKind, BRUTE_MAX_VARS};
use crate::decoder::Sign;
use crate::error::Result;
use crate::gf2::BitVec;
use crate::kikuchi::{self, build_graph_tail, build_hyper_tail, PruneParams, PruneStats};
use crate::rational::{self, Q};
use crate::spectral::{norm_bounds, SLACK};

#[derive(Clone, Debug, Serialize)]
pub struct CertParams {
    pub kind: String,
    pub n: usize,
    pub k: usize,
    pub r: usize,
    pub t: Option<usize>,
    pub ell: usize,
    pub d: Option<usize>,
    pub delta: Option<String>,
    pub gamma: f64,
    pub dim: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct RefutationCertificate {
    pub id: String,
    pub params: CertParams,
    pub norm_upper: f64,
    pub norm_lower: f64,
    pub residual: f64,
    pub val_bound: f64,
    pub val_brute: Option<f64>,
    pub pruned_rows: usize,
    pub retention: f64,
    pub khintchine_ratio: Option<f64>,
    pub prune: PruneStats,
}

impl RefutationCertificate {
    /// `None` when there is no brute-force value to compare with.
    pub fn sound(&self) -> Option<bool> {
        self.val_brute.map(|v| self.val_bound >= v - 1e-9 * v.abs().max(1.0))
    }
}

fn qf(x: &Q) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

/// `val` by enumeration when the instance is small enough.
pub fn brute(coeffs: &BTreeMap<BitVec, Q>, nvars: usize) -> Result<Option<f64>> {
    if nvars > BRUTE_MAX_VARS {
        return Ok(None);
    }
    Ok(Some(qf(&val_brute(coeffs, nvars)?.0)))
}

/// Certificate for one `Φ^(t)` instance.
pub fn certify_graph_tail(id: &str, inst: &ChainXorInstance, ell: usize, gamma: &Q, budget: u64, seed: u64) -> Result<RefutationCertificate> {
    let t = match inst.kind {
        XorKind::Phi(t) => Some(t),
        XorKind::Psi => None,
    };
    let a = build_graph_tail(inst, ell, budget)?;
    let (b, stats) = kikuchi::prune_or_keep(&a, &PruneParams { gamma: gamma.clone(), delta_n: None, r: inst.r })?;
    let nb = norm_bounds(&b.assemble(), seed);
    let dim = a.lift.dim;
    Ok(RefutationCertificate {
        id: id.into(),
        params: CertParams { kind: "graph-tail".into(), n: inst.nvars, k: inst.k, r: inst.r, t, ell, d: None, delta: None, gamma: stats.gamma, dim },
        norm_upper: nb.upper,
        norm_lower: nb.lower,
        residual: nb.power.residual,
        val_bound: dim as f64 * nb.upper,
        val_brute: brute(&inst.monomials(), inst.nvars)?,
        pruned_rows: stats.pruned_rows,
        retention: stats.kept_fraction,
        khintchine_ratio: None,
        prune: stats,
    })
}

/// Round-robin 1-factorization of the complete graph on `[k]`; every pair
/// `i < j` lies in exactly one matching.
pub fn one_factorization(k: usize) -> Vec<Vec<(usize, usize)>> {
    if k < 2 {
        return Vec::new();
    }
    let m = k + k % 2;
    (0..m - 1)
        .map(|round| {
            let mut out = Vec::new();
            for s in 0..m / 2 {
                let a = if s == 0 { m - 1 } else { (round + s) % (m - 1) };
                let b = (round + m - 1 - s) % (m - 1);
                if a < k && b < k {
                    out.push((a.min(b), a.max(b)));
                }
            }
            out.sort_unstable();
            out
        })
        .collect()
}

/// Uniformly random maximum directed matching on `[k]`.
pub fn random_matching<R: Rng>(rng: &mut R, k: usize) -> Vec<(usize, usize)> {
    let mut p: Vec<usize> = (0..k).collect();
    p.shuffle(rng);
    p.chunks_exact(2).map(|c| if rng.random_bool(0.5) { (c[0], c[1]) } else { (c[1], c[0]) }).collect()
}

/// `2(k−1)` for even `k`, `2k` for odd `k`: the exact factor between
/// `Σ_{i≠j}` and the mean over random maximum matchings.
pub fn matching_factor(k: usize) -> usize {
    if k % 2 == 0 {
        2 * (k.max(2) - 1)
    } else {
        2 * k
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct PsiCertificate {
    pub id: String,
    pub k: usize,
    pub r: usize,
    pub n: usize,
    pub ell: usize,
    /// `Σ wt(Q)` over parts with a nonempty class.
    pub w: f64,
    /// `n(r+1)`.
    pub w_cap: f64,
    pub diagonal_bound: f64,
    pub matchings: Vec<RefutationCertificate>,
    /// `√(W·(D + 2 Σ_M N‖B_M‖))`.
    pub val_bound: f64,
    pub val_brute: Option<f64>,
}

impl PsiCertificate {
    pub fn sound(&self) -> Option<bool> {
        self.val_brute.map(|v| self.val_bound >= v - 1e-9 * v.abs().max(1.0))
    }

    pub fn min_retention(&self) -> f64 {
        self.matchings.iter().map(|c| c.retention).fold(1.0, f64::min)
    }
}

/// `Ψ(x)` coefficients: every `(r+1)`-chain monomial with its signed weight.
pub fn psi_coeffs(psi: &BipartitePsi) -> BTreeMap<BitVec, Q> {
    let mut out: BTreeMap<BitVec, Q> = BTreeMap::new();
    for (&(i, _), cs) in &psi.classes {
        for c in cs {
            let w = &c.weight * Q::from_integer(BigInt::from(psi.b[i]));
            *out.entry(c.monomial(psi.nvars)).or_insert_with(Q::zero) += w;
        }
    }
    out.retain(|_, w| !w.is_zero());
    out
}

/// Certificate for `Ψ` over a fixed 1-factorization of `[k]`.
#[allow(clippy::too_many_arguments)]
pub fn certify_psi(id: &str, psi: &BipartitePsi, ell: usize, gamma: &Q, delta: &Q, d: usize, budget: u64, seed: u64) -> Result<PsiCertificate> {
    let k = psi.b.len();
    let n = psi.nvars;
    let delta_n = delta * Q::from_integer(BigInt::from(n));
    let w: Q = psi.live_parts().iter().map(|&id| &psi.part_wt[id]).sum();
    let diag = kikuchi::diagonal_bound(psi);
    let mut matchings = Vec::new();
    let mut cross = 0.0;
    for (mi, m) in one_factorization(k).into_iter().enumerate() {
        let a = build_hyper_tail(psi, &m, ell, budget)?;
        let (b, stats) = kikuchi::prune_or_keep(&a, &PruneParams { gamma: gamma.clone(), delta_n: Some(delta_n.clone()), r: psi.r })?;
        let nb = norm_bounds(&b.assemble(), seed.wrapping_add(mi as u64));
        let dim = a.lift.dim;
        let val_bound = dim as f64 * nb.upper;
        cross += val_bound;
        let coeffs = kikuchi::cross_term(psi, &m);
        matchings.push(RefutationCertificate {
            id: format!("{id}/M{}", mi + 1),
            params: CertParams {
                kind: "hyper-tail".into(),
                n,
                k,
                r: psi.r,
                t: None,
                ell,
                d: Some(d),
                delta: Some(rational::format(delta)),
                gamma: stats.gamma,
                dim,
            },
            norm_upper: nb.upper,
            norm_lower: nb.lower,
            residual: nb.power.residual,
            val_bound,
            val_brute: brute(&coeffs, n)?,
            pruned_rows: stats.pruned_rows,
            retention: stats.kept_fraction,
            khintchine_ratio: None,
            prune: stats,
        });
    }
    let val_bound = (qf(&w) * (qf(&diag) + 2.0 * cross)).max(0.0).sqrt() * (1.0 + SLACK);
    Ok(PsiCertificate {
        id: id.into(),
        k,
        r: psi.r,
        n,
        ell,
        w: qf(&w),
        w_cap: (n * (psi.r + 1)) as f64,
        diagonal_bound: qf(&diag),
        matchings,
        val_bound,
        val_brute: brute(&psi_coeffs(psi), n)?,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct CauchySchwarzCheck {
    pub samples: usize,
    /// `Ψ(x,y)² ≤ W·Σ_Q (Σ_i b_iΨ_{i,Q}(x))²/wt(Q)` at every sample.
    pub exact_ok: bool,
    /// The right side equals `W·(diag(x) + 2Σ_{M∈F} f_M(x))` at every sample.
    pub matching_identity_ok: bool,
    /// Samples where `n(r+1)(k(r+1)/(δ²n) + 2k·E_M f_M(x))` also dominates.
    pub stated_form_holds: usize,
}

/// Samples `(x, y)` and checks the Cauchy–Schwarz step exactly.
pub fn cauchy_schwarz_check(psi: &BipartitePsi, delta: &Q, samples: usize, seed: u64) -> CauchySchwarzCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = psi.b.len();
    let n = psi.nvars;
    let live = psi.live_parts();
    let w: Q = live.iter().map(|&id| &psi.part_wt[id]).sum();
    let fact = one_factorization(k);
    let nq = |v: usize| Q::from_integer(BigInt::from(v));
    let stated_w = nq(n * (psi.r + 1));
    let stated_diag = nq(k * (psi.r + 1)) / (delta * delta * nq(n));
    let mut out = CauchySchwarzCheck { samples, exact_ok: true, matching_identity_ok: true, stated_form_holds: 0 };
    for _ in 0..samples {
        let x: Vec<Sign> = (0..n).map(|_| if rng.random_bool(0.5) { 1 } else { -1 }).collect();
        let y: Vec<Sign> = (0..psi.parts.len()).map(|_| if rng.random_bool(0.5) { 1 } else { -1 }).collect();
        let xb = sign_bits(&x);
        let lhs = psi.eval(&x, &y).pow(2);
        let mut rhs = Q::zero();
        for &id in &live {
            let s: Q = (0..k).map(|i| psi.psi_eval(i, id, &xb) * Q::from_integer(BigInt::from(psi.b[i]))).sum();
            rhs += s.pow(2) / &psi.part_wt[id];
        }
        let diag = kikuchi::diagonal_eval(psi, &xb);
        let cross: Q = fact.iter().map(|m| kikuchi::cross_term_eval(psi, m, &x)).sum();
        out.exact_ok &= lhs <= &w * &rhs;
        out.matching_identity_ok &= rhs == &diag + &cross * nq(2);
        let mean_m = if k >= 2 { &cross * nq(2) / nq(matching_factor(k)) } else { Q::zero() };
        if lhs <= &stated_w * (&stated_diag + nq(2 * k) * mean_m) {
            out.stated_form_holds += 1;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain_xor::{build_instance, decompose, LinkLists};
    use crate::decoder::synthetic_collection;
    use std::collections::BTreeSet;

    #[test]
    fn factorization_covers_pairs_once() {
        for k in 1..=9 {
            let f = one_factorization(k);
            let mut seen = BTreeSet::new();
            for m in &f {
                let mut used = BTreeSet::new();
                for &(a, b) in m {
                    assert!(a < b && b < k);
                    assert!(used.insert(a) && used.insert(b));
                    assert!(seen.insert((a, b)));
                }
                assert_eq!(m.len(), k / 2);
            }
            assert_eq!(seen.len(), k * k.saturating_sub(1) / 2);
            if k >= 2 {
                assert_eq!(2 * seen.len() / f.len() * f.len(), 2 * seen.len());
                assert_eq!(matching_factor(k) * (k / 2), k * (k - 1));
            }
        }
    }

    #[test]
    fn random_matching_is_maximum() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for k in 2..9 {
            let m = random_matching(&mut rng, k);
            assert_eq!(m.len(), k / 2);
            let mut used = BTreeSet::new();
            assert!(m.iter().all(|&(a, b)| used.insert(a) && used.insert(b)));
        }
    }

    #[test]
    fn zero_instance_bound_is_zero() {
        let inst = ChainXorInstance { kind: XorKind::Phi(1), k: 2, r: 1, nvars: 6, terms: Vec::new() };
        let c = certify_graph_tail("zero", &inst, 1, &rational::qi(64), 1 << 20, 0).unwrap();
        assert_eq!(c.val_bound, 0.0);
        assert_eq!(c.val_brute, Some(0.0));
    }

    #[test]
    fn toy_phi1_sound() {
        for seed in 0..4 {
            let col = synthetic_collection(8, 3, 2, seed);
            let ll = LinkLists::new(&col);
            let b: Vec<Sign> = vec![1, -1, 1, -1];
            let inst = build_instance(&ll, &[0, 1, 2, 3], &b, XorKind::Phi(1), 1, 1 << 20).unwrap();
            let c = certify_graph_tail("phi1", &inst, 2, &rational::qi(64), 1 << 22, seed).unwrap();
            assert_eq!(c.sound(), Some(true), "{} < {:?}", c.val_bound, c.val_brute);
        }
    }

    #[test]
    fn psi_sound_and_cauchy_schwarz() {
        for (seed, r) in [(0u64, 0usize), (1, 1), (2, 1)] {
            let col = synthetic_collection(7, 2, 2, seed);
            let ll = LinkLists::new(&col);
            let heads = [0, 3, 5];
            let b: Vec<Sign> = vec![1, 1, -1];
            let delta = rational::q(1, 1);
            let dec = decompose(&ll, &heads, &b, r, 1, &delta, 1 << 20).unwrap();
            let c = certify_psi("psi", &dec.psi, 1, &rational::qi(64), &delta, 1, 1 << 24, seed).unwrap();
            assert_eq!(c.sound(), Some(true), "{} < {:?}", c.val_bound, c.val_brute);
            let cs = cauchy_schwarz_check(&dec.psi, &delta, 50, seed);
            assert!(cs.exact_ok && cs.matching_identity_ok);
        }
    }
}
