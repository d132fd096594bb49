//! End-to-end runs. Reports hold only seeded, deterministic values; wall
//! clock times are returned next to them in [`Run::timing`].

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use num_bigint::BigInt;
use num_traits::{One, Signed, Zero};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::certify::{certify_graph_tail, certify_psi};
use crate::chain_xor::{build_instance, chi, decompose, sign_bits, LinkLists, XorKind};
use crate::chains::{count_chains, dump_chains, sample_chain, verify_chain_completeness, ChainOpts, ChainSetStats, Completeness, LinkTable};
use crate::config::{ExperimentConfig, Mode};
use crate::decoder::{check_compiled, compile_collection, smoothness, Code, Decoder, Sign, SMOOTH_C};
use crate::design::{build_rm_design, claimed_k, code_dimension_report, derive_matchings, parity_check_failures, verify_design};
use crate::design_kikuchi::{assemble_2ldc, degree_moments, KikuchiParams, MomentMode, MomentReport};
use crate::error::{Error, Result};
use crate::rational::{self, Q};

pub const MOMENTS_SCHEMA: &str = "# lccbound moments v1";
pub const WINDOW_C_MAX: f64 = 32.0;
const COMPLETENESS_MESSAGES: usize = 20;
const CHAIN_SAMPLES: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub name: String,
    pub pass: bool,
    pub values: BTreeMap<String, Value>,
    pub checks: Vec<Check>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub pipeline: String,
    pub config: ExperimentConfig,
    pub stages: Vec<StageReport>,
    /// File names relative to the output directory.
    pub artifacts: Vec<String>,
    pub pass: bool,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(s: &str) -> Result<RunReport> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn checks(&self) -> impl Iterator<Item = &Check> {
        self.stages.iter().flat_map(|s| &s.checks)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks().find(|c| c.name == name)
    }

    pub fn stage(&self, name: &str) -> Option<&StageReport> {
        self.stages.iter().find(|s| s.name == name)
    }

    /// One line per check.
    pub fn summary(&self) -> String {
        let mut s = format!("{} {}\n", self.pipeline, if self.pass { "PASS" } else { "FAIL" });
        for c in self.checks() {
            s.push_str(&format!("  {} {}  {}\n", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail));
        }
        s
    }
}

pub struct Run {
    pub report: RunReport,
    /// Seconds per stage.
    pub timing: Vec<(String, f64)>,
}

struct Stage {
    rep: StageReport,
    start: Instant,
}

impl Stage {
    fn new(name: &str) -> Stage {
        Stage { rep: StageReport { name: name.into(), pass: true, values: BTreeMap::new(), checks: Vec::new() }, start: Instant::now() }
    }

    fn val(&mut self, k: &str, v: impl Serialize) {
        self.rep.values.insert(k.into(), serde_json::to_value(v).expect("value serializes"));
    }

    fn check(&mut self, name: &str, pass: bool, detail: impl Into<String>) {
        self.rep.pass &= pass;
        self.rep.checks.push(Check { name: format!("{}.{name}", self.rep.name), pass, detail: detail.into() });
    }

    /// A check whose failure stops the run.
    fn require(&mut self, name: &str, pass: bool, detail: impl Into<String>) -> Result<()> {
        let detail = detail.into();
        self.check(name, pass, detail.clone());
        if pass {
            Ok(())
        } else {
            Err(Error::Check(format!("stage {}: {name}: {detail}", self.rep.name)))
        }
    }
}

struct Recorder {
    stages: Vec<StageReport>,
    timing: Vec<(String, f64)>,
    artifacts: Vec<String>,
}

impl Recorder {
    fn new() -> Recorder {
        Recorder { stages: Vec::new(), timing: Vec::new(), artifacts: Vec::new() }
    }

    fn done(&mut self, s: Stage) {
        self.timing.push((s.rep.name.clone(), s.start.elapsed().as_secs_f64()));
        self.stages.push(s.rep);
    }

    fn write(&mut self, out: Option<&Path>, name: &str, body: &str) -> Result<()> {
        if let Some(dir) = out {
            std::fs::create_dir_all(dir)?;
            std::fs::write(dir.join(name), body)?;
            self.artifacts.push(name.into());
        }
        Ok(())
    }

    fn finish(self, pipeline: &str, cfg: &ExperimentConfig) -> Run {
        let pass = self.stages.iter().all(|s| s.pass);
        Run {
            report: RunReport { pipeline: pipeline.into(), config: cfg.clone(), stages: self.stages, artifacts: self.artifacts, pass },
            timing: self.timing,
        }
    }
}

fn qs(x: &Q) -> String {
    rational::format(x)
}

fn qn(v: usize) -> Q {
    Q::from_integer(BigInt::from(v))
}

pub fn moments_csv(rows: &[MomentReport]) -> String {
    let mut s = format!("{MOMENTS_SCHEMA}\n{}\n", MomentReport::CSV_HEADER);
    for r in rows {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

/// Design → verify → dimension → matchings → chains → moments → 2-LDC.
pub fn pipeline_design(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<Run> {
    cfg.validate()?;
    cfg.validate_design()?;
    let t = cfg.t.expect("validated");
    let r = cfg.design_r()?;
    let ell = cfg.ell;
    let opts = ChainOpts { distinct: true, budget: cfg.budgets.max_chains };
    let max_points = cfg.budgets.max_subsets.min(usize::MAX as u64) as usize;
    let mut rec = Recorder::new();

    let mut s = Stage::new("build");
    let lcc = build_rm_design(t, max_points)?;
    let n = lcc.design.n;
    s.val("t", t);
    s.val("n", n);
    s.val("blocks", lcc.design.blocks.len());
    s.val("k", lcc.k);
    s.val("r", r);
    s.val("r_clamped", cfg.r != Some(r));
    s.val("ell", ell);
    rec.done(s);
    rec.write(out, "design.json", &lcc.to_json())?;

    let mut s = Stage::new("verify");
    let rep = verify_design(&lcc.design);
    s.val("report", &rep);
    s.require("design", rep.pass, format!("{} uncovered, {} multiply covered, {} bad blocks", rep.uncovered, rep.multiply_covered, rep.bad_blocks))?;
    let want = n * (n - 1) / 12;
    s.require("block_count", lcc.design.blocks.len() == want, format!("{} blocks, C(n,2)/6 = {want}", lcc.design.blocks.len()))?;
    rec.done(s);

    let mut s = Stage::new("dimension");
    let dim = code_dimension_report(t, max_points)?;
    let attaining: Vec<String> = dim.attaining().iter().map(|row| format!("{:?}/{}", row.projection, row.coefficients)).collect();
    s.val("claimed_k", claimed_k(t));
    s.val("dim_v", dim.dim_v);
    s.val("attaining", &attaining);
    s.check("k_attained", !attaining.is_empty() && dim.dim_v >= dim.claimed_k, format!("dim V = {}, k = {}", dim.dim_v, dim.claimed_k));
    rec.done(s);

    let mut s = Stage::new("matchings");
    let m = derive_matchings(&lcc)?;
    let sizes_ok = m.h.iter().all(|h| h.len() == (n - 1) / 3);
    s.require("perfect", m.is_perfect() && sizes_ok, format!("|H_u| = {}", (n - 1) / 3))?;
    let (checks, fails) = parity_check_failures(&lcc, &m);
    s.val("parity_checks", checks);
    s.require("parity", fails == 0, format!("{fails} of {checks} parity checks fail"))?;
    rec.done(s);

    let mut s = Stage::new("chains");
    let lt = LinkTable::new(&m);
    let count = count_chains(&lt, 0, r, true);
    let stats = ChainSetStats::new(n, r, count);
    s.val("count", count);
    s.val("stats", &stats);
    s.check("count_window", stats.within(), format!("{} ≤ {count} ≤ {}", stats.lower_bound, stats.upper_bound));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut sampled = Vec::new();
    for _ in 0..CHAIN_SAMPLES {
        let u = rng.random_range(0..n);
        if let Some(c) = sample_chain(&lt, u, r, true, &mut rng, 1000) {
            sampled.push(c);
        }
    }
    let bad = sampled.iter().filter(|c| verify_chain_completeness(&lcc, &m, c) != Completeness::Pass).count();
    s.val("sampled", sampled.len());
    s.require("completeness", bad == 0, format!("{bad} of {} sampled chains fail", sampled.len()))?;
    rec.done(s);
    rec.write(out, "chains.txt", &dump_chains(&sampled))?;

    let mut s = Stage::new("moments");
    let params = KikuchiParams { n, r, ell, head: 0 };
    let mode = match cfg.mode {
        Mode::Exact => MomentMode::Exact,
        Mode::Mc => MomentMode::MonteCarlo { seed: cfg.seed, samples: cfg.mc_samples },
    };
    let mr = degree_moments(&lt, params, mode, opts)?;
    s.val("c_l", mr.c_l);
    s.val("c_r", mr.c_r);
    s.val("ratio_l", mr.ratio_l);
    s.val("ratio_r", mr.ratio_r);
    s.val("eta", mr.eta);
    s.check("first_moment", mr.first_moment_ok, format!("d_R = {}", mr.d_r));
    s.check("window", mr.c_l <= WINDOW_C_MAX && mr.c_r <= WINDOW_C_MAX, format!("c_L = {:.3}, c_R = {:.3}", mr.c_l, mr.c_r));
    if let Some(ok) = mr.mc_vs_exact_ok {
        s.check("mc_vs_exact", ok, "within 3 standard errors");
    }
    rec.done(s);
    rec.write(out, "moments.csv", &moments_csv(std::slice::from_ref(&mr)))?;

    let mut s = Stage::new("ldc2");
    let (ldc, stats) = assemble_2ldc(&lcc, &m, r, ell, cfg.slack, opts)?;
    let fails: usize = stats.iter().map(|a| a.decode_failures).sum();
    s.require("edges_decode", fails == 0, format!("{fails} edges fail to decode"))?;
    let rep = ldc.verify()?;
    let cap = (ell + 1) as f64 * (n as f64).log2();
    s.val("report", &rep);
    s.val("log2_len_cap", cap);
    s.check("inequality", rep.holds, format!("2δ'k = {:.4} ≤ log₂ len = {:.4}", rep.lhs, rep.rhs));
    s.check("length_cap", rep.rhs <= cap + 1e-9, format!("log₂ len = {:.4} ≤ (ℓ+1)log₂ n = {cap:.4}", rep.rhs));
    rec.done(s);
    Ok(rec.finish("design", cfg))
}

/// Decoder and code files → collection → chain XOR instances → certificates.
pub fn pipeline_nonlinear(cfg: &ExperimentConfig, decoder: &Path, code: &Path, out: Option<&Path>) -> Result<Run> {
    cfg.validate()?;
    let dec = Decoder::from_json(&std::fs::read_to_string(decoder)?)?;
    let code = Code::from_json(&std::fs::read_to_string(code)?)?;
    run_nonlinear(cfg, &dec, &code, out)
}

pub fn run_nonlinear(cfg: &ExperimentConfig, dec: &Decoder, code: &Code, out: Option<&Path>) -> Result<Run> {
    if dec.n != code.n {
        return Err(Error::Config(format!("decoder length {} and code length {} differ", dec.n, code.n)));
    }
    if let Some(k) = cfg.k {
        if k != code.k {
            return Err(Error::Config(format!("config k = {k}, code k = {}", code.k)));
        }
    }
    let eps = cfg.eps_q()?;
    let delta_cfg = cfg.delta_q()?;
    let mut rec = Recorder::new();

    let mut s = Stage::new("compile");
    let (systems, col) = compile_collection(dec)?;
    let np = col.n;
    cfg.validate_at(np)?;
    let r = cfg.effective_r(np)?;
    let cc = check_compiled(dec, code, &systems, &col);
    s.val("n", dec.n);
    s.val("n_padded", np);
    s.val("k", code.k);
    s.val("r", r);
    s.val("min_correlation", qs(&cc.min_correlation));
    s.require("wtbound", cc.wtbound_ok, "AND weights sum to 4")?;
    s.require("wtcompl", cc.wtcompl_ok, "AND mass is 1 on codewords")?;
    s.require("polycompl", cc.polycompl_ok, "polynomial equals E[Dec]")?;
    s.require("padded", cc.padded_ok, "padded identities")?;
    s.require("normalization", cc.normalization_ok, "wt(H_u) ≤ 1, wt(G_u)+wt(H_u) ≤ 4")?;
    let floor = Q::one() - qn(2) * &eps;
    s.check("correlation", cc.min_correlation >= floor, format!("min E[Dec·x_u] = {} ≥ 1 − 2ε", qs(&cc.min_correlation)));
    rec.done(s);
    rec.write(out, "collection.jsonl", &col.to_jsonl())?;

    let mut s = Stage::new("smoothness");
    let sm = smoothness(dec, code, &systems, &col, delta_cfg.as_ref().map(rational::to_f64))?;
    let (wmax, _, _) = col.max_incident();
    let delta_coll = Q::one() / (&wmax * qn(np));
    s.val("report", &sm);
    s.val("delta_collection", qs(&delta_coll));
    s.check("constant", sm.c <= SMOOTH_C, format!("c = {:.3} ≤ {SMOOTH_C}", sm.c));
    rec.done(s);

    let ll = LinkLists::new(&col);
    let heads = code.systematic.clone();
    let k = heads.len();
    let budget = cfg.budgets.max_chains;

    let mut s = Stage::new("completeness");
    let ones: Vec<Sign> = vec![1; k];
    let mut kinds: Vec<XorKind> = (1..=r + 1).map(XorKind::Phi).collect();
    kinds.push(XorKind::Psi);
    let mut terms = Vec::new();
    for &kind in &kinds {
        for tm in build_instance(&ll, &heads, &ones, kind, r, budget)?.terms {
            terms.push((tm.i, tm.chain.monomial(np), tm.w));
        }
    }
    let padded = code.padded();
    let total = padded.codewords.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let msgs: Vec<usize> = if total <= COMPLETENESS_MESSAGES {
        (0..total).collect()
    } else {
        let mut v = sample(&mut rng, total, COMPLETENESS_MESSAGES).into_vec();
        v.sort_unstable();
        v
    };
    let kq = qn(k);
    let lower = &kq * (Q::one() - qn(2 * (r + 1)) * &eps);
    let mut min_total: Option<Q> = None;
    let mut exact = 0;
    for &bi in &msgs {
        let x = &padded.codewords[bi];
        let xb = sign_bits(x);
        let mut per_i = vec![Q::zero(); k];
        for (i, mono, w) in &terms {
            per_i[*i] += w * Q::from_integer(BigInt::from(chi(mono, &xb)));
        }
        let v: Q = per_i.iter().zip(&heads).map(|(si, &h)| si * Q::from_integer(BigInt::from(x[h]))).sum();
        if v == kq {
            exact += 1;
        }
        if min_total.as_ref().is_none_or(|m| v < *m) {
            min_total = Some(v);
        }
    }
    let min_total = min_total.unwrap_or_else(|| kq.clone());
    s.val("messages", msgs.len());
    s.val("exact_k", exact);
    s.val("min_value", qs(&min_total));
    s.val("lower_bound", qs(&lower));
    s.check("lower_bound", min_total >= lower, format!("min Ψ+ΣΦ = {} ≥ k(1−2(r+1)ε) = {}", qs(&min_total), qs(&lower)));
    if eps.is_zero() {
        s.check("exact", exact == msgs.len(), format!("{exact} of {} messages give exactly k", msgs.len()));
    }
    rec.done(s);

    let mut s = Stage::new("instances");
    let b: Vec<Sign> = (0..k).map(|_| if rng.random_bool(0.5) { 1 } else { -1 }).collect();
    s.val("b", &b);
    let mut insts = Vec::new();
    for t in 1..=r + 1 {
        let inst = build_instance(&ll, &heads, &b, XorKind::Phi(t), r, budget)?;
        s.val(&format!("phi_{t}_terms"), inst.terms.len());
        rec.write(out, &format!("phi_{t}.jsonl"), &inst.to_jsonl())?;
        insts.push(inst);
    }
    rec.done(s);

    let mut s = Stage::new("refute");
    let gamma = cfg.gamma_q();
    let entries = cfg.budgets.max_entries;
    let mut upper = 0.0;
    let mut certs = Vec::new();
    for (ti, inst) in insts.iter().enumerate() {
        let id = format!("phi_{}", ti + 1);
        let c = certify_graph_tail(&id, inst, cfg.ell, &gamma, entries, cfg.seed.wrapping_add(ti as u64))?;
        upper += c.val_bound;
        s.check(&format!("{id}_sound"), c.sound() != Some(false), format!("bound {:.6} vs val {:?}", c.val_bound, c.val_brute));
        s.val(&format!("{id}_min_retention"), c.prune.min_retention);
        s.val(&format!("{id}_cond_c"), c.prune.cond_c);
        s.val(&format!("{id}_fallback"), c.prune.fallback);
        certs.push(serde_json::to_value(&c)?);
    }
    if cfg.hyper_tail {
        let d = cfg.d.expect("validated");
        let delta = delta_cfg.clone().unwrap_or_else(|| delta_coll.clone());
        let dcmp = decompose(&ll, &heads, &b, r, d, &delta, budget)?;
        let c = certify_psi("psi", &dcmp.psi, cfg.ell, &gamma, &delta, d, entries, cfg.seed)?;
        upper += c.val_bound;
        s.check("psi_sound", c.sound() != Some(false), format!("bound {:.6} vs val {:?}", c.val_bound, c.val_brute));
        s.val("psi_min_retention", c.min_retention());
        s.val("psi_w", c.w);
        certs.push(serde_json::to_value(&c)?);
    }
    rec.done(s);
    rec.write(out, "certificates.json", &serde_json::to_string_pretty(&certs)?)?;

    let mut s = Stage::new("summary");
    let lf = rational::to_f64(&lower);
    let factor = Q::one() - qn(2 * (r + 1)) * &eps;
    s.val("completeness_lower", lf);
    if cfg.hyper_tail {
        s.val("certified_upper", upper);
        s.check("consistent", upper >= lf - 1e-9, format!("k(1−2(r+1)ε) = {lf:.6} ≤ certified {upper:.6}"));
        if factor.is_positive() {
            s.val("k_at_most", upper / rational::to_f64(&factor));
        }
    } else {
        s.val("certified_phi_upper", upper);
    }
    rec.done(s);
    Ok(rec.finish("nonlinear", cfg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoder::toy_parity4;

    fn cfg(text: &str) -> ExperimentConfig {
        ExperimentConfig::parse(text).unwrap()
    }

    #[test]
    fn design_t2() {
        let run = pipeline_design(&cfg("t = 2\nr = 1\nell = 2\nseed = 3\n"), None).unwrap();
        assert!(run.report.pass, "{}", run.report.summary());
        let names: Vec<&str> = run.report.checks().map(|c| c.name.as_str()).collect();
        let mut dedup = names.clone();
        dedup.sort_unstable();
        dedup.dedup();
        assert_eq!(dedup.len(), names.len());
    }

    #[test]
    fn design_t1_clamps() {
        let run = pipeline_design(&cfg("t = 1\nr = 2\nell = 2\nseed = 3\n"), None).unwrap();
        assert_eq!(run.report.stage("build").unwrap().values["r"], serde_json::json!(1));
        assert!(run.report.check("verify.design").unwrap().pass);
    }

    #[test]
    fn nonlinear_parity4() {
        let toy = toy_parity4();
        let c = cfg("ell = 2\nr = 0\nd = 16\nhyper_tail = true\nseed = 5\n");
        let a = run_nonlinear(&c, &toy.decoder, &toy.code, None).unwrap();
        assert!(a.report.pass, "{}", a.report.summary());
        assert_eq!(a.report.stage("completeness").unwrap().values["exact_k"], serde_json::json!(8));
        let b = run_nonlinear(&c, &toy.decoder, &toy.code, None).unwrap();
        assert_eq!(a.report.to_json(), b.report.to_json());
    }

    #[test]
    fn missing_decoder_is_io() {
        let c = cfg("ell = 2\nseed = 1\n");
        let e = pipeline_nonlinear(&c, Path::new("/nonexistent/dec.json"), Path::new("/nonexistent/code.json"), None);
        assert!(matches!(e, Err(Error::Io(_))));
    }
}
