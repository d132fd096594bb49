use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lccbound::certify::{brute, certify_graph_tail, certify_psi};
use lccbound::chain_xor::{build_instance, decompose, ChainXorInstance, LinkLists, XorKind};
use lccbound::chains::{count_chains, dump_chains, enumerate_with, sample_chain, verify_chain_completeness, ChainOpts, Completeness, LinkTable};
use lccbound::config::ExperimentConfig;
use lccbound::decoder::{check_compiled, compile_collection, smoothness, zoo, Code, Decoder, Sign};
use lccbound::design::{build_rm_design, code_dimension_report, derive_matchings, verify_design, DesignLcc};
use lccbound::design_kikuchi::{assemble_2ldc, degree_moments, KikuchiParams, MomentMode};
use lccbound::pipeline::{moments_csv, pipeline_design, pipeline_nonlinear, RunReport};
use lccbound::rational::{self, Q};
use lccbound::spectral::{fixture_families, khintchine};
use lccbound::{par, Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

const MAX_POINTS: usize = 1 << 12;

#[derive(Parser)]
#[command(name = "lccbound", version, about = "Design LCCs, chain derivations and Kikuchi refutation certificates")]
struct Cli {
    /// Chain and entry budget.
    #[arg(long, global = true, env = "LCCBOUND_BUDGET", default_value_t = 10_000_000)]
    budget: u64,
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build and verify the RM design over GF(4)^t.
    Design {
        #[arg(long)]
        t: u32,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Include the code dimension report.
        #[arg(long)]
        dimension: bool,
    },
    /// Enumerate, count or sample chains with a given head (1-based).
    Chains {
        #[command(flatten)]
        src: DesignSrc,
        #[arg(long)]
        r: usize,
        #[arg(long, default_value_t = 1)]
        head: usize,
        #[arg(long)]
        count: bool,
        #[arg(long)]
        sample: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Allow repeated vertices.
        #[arg(long)]
        repeats: bool,
    },
    /// Degree moments of the design Kikuchi graph.
    Kikuchi {
        #[command(flatten)]
        src: DesignSrc,
        #[arg(long)]
        r: usize,
        #[arg(long)]
        ell: usize,
        #[arg(long, default_value_t = 1)]
        head: usize,
        #[arg(long, value_enum, default_value_t = ModeArg::Exact)]
        mode: ModeArg,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Assemble the 2-query code and check `2δk ≤ log₂ N`.
    Ldc2 {
        #[command(flatten)]
        src: DesignSrc,
        #[arg(long)]
        r: usize,
        #[arg(long)]
        ell: usize,
        #[arg(long)]
        slack: Option<f64>,
    },
    /// Compile a decoder into a hypergraph collection and check it.
    Decoder {
        #[command(flatten)]
        src: DecoderSrc,
        /// Declared smoothness, a rational.
        #[arg(long)]
        delta: Option<String>,
        /// Write the collection as JSONL.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build a chain XOR instance (`phi_t` or `psi`) as JSONL.
    Xor {
        #[command(flatten)]
        src: DecoderSrc,
        #[arg(long)]
        kind: String,
        #[arg(long)]
        r: usize,
        #[command(flatten)]
        signs: SignsArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    Refute {
        #[command(subcommand)]
        what: Refute,
    },
    Oracle {
        #[command(subcommand)]
        what: Oracle,
    },
    /// Run a pipeline from a config; nonlinear when decoder and code are given.
    Pipeline {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, requires = "code")]
        decoder: Option<PathBuf>,
        #[arg(long, requires = "decoder")]
        code: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        r: Option<usize>,
        #[arg(long)]
        ell: Option<usize>,
        #[arg(long)]
        gamma: Option<u32>,
        /// Print stage timings to stderr.
        #[arg(long)]
        timing: bool,
    },
    /// Summarize a saved run report.
    Report { file: PathBuf },
}

#[derive(Subcommand)]
enum Refute {
    /// Certificate for `Φ^(t)`, from a JSONL instance or a toy.
    GraphTail {
        #[arg(long, conflicts_with = "toy", requires_all = ["k", "r", "nvars"])]
        instance: Option<PathBuf>,
        #[arg(long)]
        toy: Option<String>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        r: Option<usize>,
        #[arg(long)]
        nvars: Option<usize>,
        /// Chain length `t` when building from a toy.
        #[arg(long, default_value_t = 1)]
        t: usize,
        #[arg(long)]
        ell: usize,
        #[arg(long, default_value_t = 64)]
        gamma: u32,
        #[command(flatten)]
        signs: SignsArg,
    },
    /// Certificate for `Ψ` over a 1-factorization of the message indices.
    HyperTail {
        #[command(flatten)]
        src: DecoderSrc,
        #[arg(long)]
        r: usize,
        #[arg(long)]
        ell: usize,
        #[arg(long)]
        d: usize,
        /// Defaults to the measured collection smoothness.
        #[arg(long)]
        delta: Option<String>,
        #[arg(long, default_value_t = 64)]
        gamma: u32,
        #[command(flatten)]
        signs: SignsArg,
    },
    /// Matrix Khintchine on the fixture families.
    Khintchine {
        #[arg(long, default_value_t = 200)]
        trials: usize,
        #[arg(long)]
        seed: u64,
    },
}

#[derive(Subcommand)]
enum Oracle {
    /// Brute-force `val` of a JSONL instance.
    Val {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        r: usize,
        #[arg(long)]
        nvars: usize,
    },
}

#[derive(Args)]
struct DesignSrc {
    #[arg(long, conflicts_with = "design")]
    t: Option<u32>,
    /// Design JSON written by `design --out`.
    #[arg(long)]
    design: Option<PathBuf>,
}

#[derive(Args)]
struct DecoderSrc {
    #[arg(long, requires = "code", conflicts_with = "toy")]
    decoder: Option<PathBuf>,
    #[arg(long, requires = "decoder")]
    code: Option<PathBuf>,
    /// One of the built-in toys, e.g. `parity4`.
    #[arg(long)]
    toy: Option<String>,
}

#[derive(Args)]
struct SignsArg {
    /// Comma-separated ±1 message signs.
    #[arg(long, allow_hyphen_values = true, conflicts_with = "seed")]
    b: Option<String>,
    /// Seed for random signs (and power iteration).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Exact,
    Pairs,
    Mc,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Check(_) => 1,
        Error::Budget { .. } => 3,
        Error::Config(_) | Error::Parse(_) | Error::Io(_) | Error::Json(_) => 2,
    }
}

fn cfg_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

/// Writes to stdout; a closed pipe is not an error.
fn emit(s: &str) -> Result<()> {
    use std::io::Write;
    match std::io::stdout().lock().write_all(s.as_bytes()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn print_json(v: &impl Serialize) -> Result<()> {
    emit(&format!("{}\n", serde_json::to_string_pretty(v)?))
}

fn verdict(pass: bool) -> Result<()> {
    if pass {
        Ok(())
    } else {
        Err(Error::Check("see report".into()))
    }
}

fn load_design(src: &DesignSrc) -> Result<DesignLcc> {
    match (&src.t, &src.design) {
        (Some(t), None) => build_rm_design(*t, MAX_POINTS),
        (None, Some(p)) => DesignLcc::from_json(&std::fs::read_to_string(p)?),
        _ => Err(cfg_err("give --t or --design")),
    }
}

fn load_decoder(src: &DecoderSrc) -> Result<(Decoder, Code)> {
    if let Some(name) = &src.toy {
        let toy = zoo()?.into_iter().find(|t| &t.name == name).ok_or_else(|| cfg_err(format!("unknown toy {name:?}")))?;
        return Ok((toy.decoder, toy.code));
    }
    match (&src.decoder, &src.code) {
        (Some(d), Some(c)) => Ok((Decoder::from_json(&std::fs::read_to_string(d)?)?, Code::from_json(&std::fs::read_to_string(c)?)?)),
        _ => Err(cfg_err("give --toy or --decoder with --code")),
    }
}

fn head_index(head: usize, n: usize) -> Result<usize> {
    if head == 0 || head > n {
        return Err(cfg_err(format!("head {head} outside 1..={n}")));
    }
    Ok(head - 1)
}

fn signs(arg: &SignsArg, k: usize) -> Result<Vec<Sign>> {
    if let Some(s) = &arg.b {
        let v: Vec<Sign> = s
            .split(',')
            .map(|t| match t.trim() {
                "1" | "+1" => Ok(1),
                "-1" => Ok(-1),
                o => Err(Error::Parse(format!("sign {o:?}"))),
            })
            .collect::<Result<_>>()?;
        if v.len() != k {
            return Err(cfg_err(format!("{} signs for k = {k}", v.len())));
        }
        return Ok(v);
    }
    let seed = arg.seed.ok_or_else(|| cfg_err("give --b or --seed"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..k).map(|_| if rng.random_bool(0.5) { 1 } else { -1 }).collect())
}

fn write_or_print(out: &Option<PathBuf>, body: &str) -> Result<()> {
    match out {
        Some(p) => Ok(std::fs::write(p, body)?),
        None => {
            emit(&body)?;
            Ok(())
        }
    }
}

fn collection(dec: &Decoder) -> Result<LinkLists> {
    Ok(LinkLists::new(&compile_collection(dec)?.1))
}

fn read_instance(p: &Path, k: usize, r: usize, nvars: usize) -> Result<ChainXorInstance> {
    ChainXorInstance::from_jsonl(&std::fs::read_to_string(p)?, k, r, nvars)
}

fn run(cli: Cli) -> Result<()> {
    if let Some(w) = cli.workers {
        par::set_workers(w);
    }
    let budget = cli.budget;
    match cli.cmd {
        Cmd::Design { t, out, dimension } => {
            let lcc = build_rm_design(t, MAX_POINTS)?;
            let rep = verify_design(&lcc.design);
            if let Some(p) = out {
                std::fs::write(p, lcc.to_json())?;
            }
            let dim = if dimension { Some(code_dimension_report(t, MAX_POINTS)?) } else { None };
            print_json(&serde_json::json!({ "n": lcc.design.n, "blocks": lcc.design.blocks.len(), "k": lcc.k, "verify": rep, "dimension": dim }))?;
            verdict(rep.pass)
        }
        Cmd::Chains { src, r, head, count, sample, seed, repeats } => {
            let lcc = load_design(&src)?;
            let m = derive_matchings(&lcc)?;
            let lt = LinkTable::new(&m);
            let u = head_index(head, lcc.design.n)?;
            let distinct = !repeats;
            if count {
                emit(&format!("{}\n", count_chains(&lt, u, r, distinct)))?;
                return Ok(());
            }
            let chains = match sample {
                Some(s) => {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed.ok_or_else(|| cfg_err("--sample needs --seed"))?);
                    (0..s).filter_map(|_| sample_chain(&lt, u, r, distinct, &mut rng, 1000)).collect()
                }
                None => enumerate_with(&lt, u, r, ChainOpts { distinct, budget })?,
            };
            let bad = chains.iter().filter(|c| verify_chain_completeness(&lcc, &m, c) != Completeness::Pass).count();
            emit(&dump_chains(&chains))?;
            if bad > 0 {
                return Err(Error::Check(format!("{bad} chains fail completeness")));
            }
            Ok(())
        }
        Cmd::Kikuchi { src, r, ell, head, mode, samples, seed } => {
            let lcc = load_design(&src)?;
            let n = lcc.design.n;
            let params = KikuchiParams { n, r, ell, head: head_index(head, n)? };
            params.validate(lccbound::design_kikuchi::default_slack(n, r, ell))?;
            let mode = match mode {
                ModeArg::Exact => MomentMode::Exact,
                ModeArg::Pairs => MomentMode::Pairs,
                ModeArg::Mc => MomentMode::MonteCarlo { seed: seed.ok_or_else(|| cfg_err("mc mode needs --seed"))?, samples },
            };
            let lt = LinkTable::new(&derive_matchings(&lcc)?);
            let rep = degree_moments(&lt, params, mode, ChainOpts { distinct: true, budget })?;
            emit(&moments_csv(std::slice::from_ref(&rep)))?;
            eprintln!("c_L = {:.4}, c_R = {:.4}, first moment {}", rep.c_l, rep.c_r, if rep.first_moment_ok { "ok" } else { "outside window" });
            Ok(())
        }
        Cmd::Ldc2 { src, r, ell, slack } => {
            let lcc = load_design(&src)?;
            let m = derive_matchings(&lcc)?;
            let (ldc, stats) = assemble_2ldc(&lcc, &m, r, ell, slack, ChainOpts { distinct: true, budget })?;
            let rep = ldc.verify()?;
            let fails: usize = stats.iter().map(|s| s.decode_failures).sum();
            print_json(&serde_json::json!({ "report": rep, "decode_failures": fails, "heads": stats }))?;
            verdict(rep.holds && fails == 0)
        }
        Cmd::Decoder { src, delta, out } => {
            let (dec, code) = load_decoder(&src)?;
            let (systems, col) = compile_collection(&dec)?;
            let cc = check_compiled(&dec, &code, &systems, &col);
            let d = delta.as_deref().map(rational::parse).transpose()?;
            let sm = smoothness(&dec, &code, &systems, &col, d.as_ref().map(rational::to_f64))?;
            if let Some(p) = out {
                std::fs::write(p, col.to_jsonl())?;
            }
            print_json(&serde_json::json!({ "compile": cc, "smoothness": sm }))?;
            verdict(cc.wtbound_ok && cc.wtcompl_ok && cc.polycompl_ok && cc.padded_ok && cc.normalization_ok)
        }
        Cmd::Xor { src, kind, r, signs: sa, out } => {
            let (dec, code) = load_decoder(&src)?;
            let ll = collection(&dec)?;
            let b = signs(&sa, code.k)?;
            let inst = build_instance(&ll, &code.systematic, &b, XorKind::parse(&kind)?, r, budget)?;
            eprintln!("k = {}, nvars = {}, terms = {}", inst.k, inst.nvars, inst.terms.len());
            write_or_print(&out, &inst.to_jsonl())
        }
        Cmd::Refute { what } => match what {
            Refute::GraphTail { instance, toy, k, r, nvars, t, ell, gamma, signs: sa } => {
                let inst = match (instance, toy) {
                    (Some(p), None) => read_instance(&p, k.unwrap(), r.unwrap(), nvars.unwrap())?,
                    (None, Some(name)) => {
                        let (dec, code) = load_decoder(&DecoderSrc { decoder: None, code: None, toy: Some(name) })?;
                        let r = r.unwrap_or(t.saturating_sub(1));
                        let b = signs(&sa, code.k)?;
                        build_instance(&collection(&dec)?, &code.systematic, &b, XorKind::Phi(t), r, budget)?
                    }
                    _ => return Err(cfg_err("give --instance or --toy")),
                };
                let c = certify_graph_tail("graph-tail", &inst, ell, &Q::from_integer(gamma.into()), budget, sa.seed.unwrap_or(0))?;
                print_json(&c)?;
                verdict(c.sound() != Some(false))
            }
            Refute::HyperTail { src, r, ell, d, delta, gamma, signs: sa } => {
                let (dec, code) = load_decoder(&src)?;
                let (_, col) = compile_collection(&dec)?;
                let delta = match delta {
                    Some(s) => rational::parse(&s)?,
                    None => {
                        let (w, _, _) = col.max_incident();
                        Q::from_integer(1.into()) / (w * Q::from_integer(col.n.into()))
                    }
                };
                let b = signs(&sa, code.k)?;
                let ll = LinkLists::new(&col);
                let dcmp = decompose(&ll, &code.systematic, &b, r, d, &delta, budget)?;
                let c = certify_psi("hyper-tail", &dcmp.psi, ell, &Q::from_integer(gamma.into()), &delta, d, budget, sa.seed.unwrap_or(0))?;
                print_json(&c)?;
                verdict(c.sound() != Some(false))
            }
            Refute::Khintchine { trials, seed } => {
                let mut all = true;
                let mut reps = Vec::new();
                for (name, xs) in fixture_families(seed) {
                    let rep = khintchine(&name, &xs, trials, seed)?;
                    all &= rep.mean_norm <= rep.bound;
                    reps.push(rep);
                }
                print_json(&reps)?;
                verdict(all)
            }
        },
        Cmd::Oracle { what: Oracle::Val { instance, k, r, nvars } } => {
            let inst = read_instance(&instance, k, r, nvars)?;
            match brute(&inst.monomials(), nvars)? {
                Some(v) => {
                    emit(&format!("{v}\n"))?;
                    Ok(())
                }
                None => Err(Error::budget("brute-force variables", nvars as u64)),
            }
        }
        Cmd::Pipeline { config, decoder, code, out, seed, r, ell, gamma, timing } => {
            let mut cfg = ExperimentConfig::parse(&std::fs::read_to_string(&config)?)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if r.is_some() {
                cfg.r = r;
            }
            if let Some(l) = ell {
                cfg.ell = l;
            }
            if let Some(g) = gamma {
                cfg.gamma = g;
            }
            cfg.validate()?;
            if let Some(w) = cfg.workers {
                par::set_workers(w);
            }
            let run = match (decoder, code) {
                (Some(d), Some(c)) => pipeline_nonlinear(&cfg, &d, &c, out.as_deref())?,
                _ => pipeline_design(&cfg, out.as_deref())?,
            };
            if let Some(dir) = &out {
                std::fs::write(dir.join("report.json"), run.report.to_json())?;
            }
            emit(&run.report.summary())?;
            if timing {
                for (stage, secs) in &run.timing {
                    eprintln!("{stage}: {secs:.3}s");
                }
            }
            verdict(run.report.pass)
        }
        Cmd::Report { file } => {
            let rep = RunReport::from_json(&std::fs::read_to_string(file)?)?;
            emit(&rep.summary())?;
            verdict(rep.pass)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
