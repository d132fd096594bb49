use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use lccbound::chain_xor::{build_instance, LinkLists, XorKind};
use lccbound::chains::{ChainOpts, LinkTable};
use lccbound::decoder::{compile_collection, toy_parity4};
use lccbound::design::{build_rm_design, derive_matchings};
use lccbound::design_kikuchi::{degree_moments, KikuchiParams, MomentMode};
use lccbound::kikuchi::build_graph_tail;
use lccbound::par;
use lccbound::spectral::{fixture_families, khintchine};

fn modes(c: &mut Criterion, name: &str, mut f: impl FnMut()) {
    let mut g = c.benchmark_group(name);
    g.sample_size(10);
    for seq in [false, true] {
        let id = if seq { "sequential" } else { "rayon" };
        g.bench_function(BenchmarkId::from_parameter(id), |b| {
            par::set_sequential(seq);
            b.iter(&mut f);
        });
    }
    par::set_sequential(false);
    g.finish();
}

fn moments(c: &mut Criterion) {
    let lcc = build_rm_design(3, 1 << 12).unwrap();
    let lt = LinkTable::new(&derive_matchings(&lcc).unwrap());
    let params = KikuchiParams { n: 64, r: 2, ell: 3, head: 0 };
    modes(c, "moments_mc_n64", || {
        degree_moments(&lt, params, MomentMode::MonteCarlo { seed: 1, samples: 4000 }, ChainOpts::default()).unwrap();
    });
}

fn kikuchi(c: &mut Criterion) {
    let toy = toy_parity4();
    let (_, col) = compile_collection(&toy.decoder).unwrap();
    let ll = LinkLists::new(&col);
    let inst = build_instance(&ll, &toy.code.systematic, &[1, -1, 1], XorKind::Phi(1), 0, 1 << 24).unwrap();
    modes(c, "graph_tail_parity4_l3", || {
        build_graph_tail(&inst, 3, 1 << 26).unwrap();
    });
}

fn spectral(c: &mut Criterion) {
    let fams = fixture_families(1);
    modes(c, "khintchine", || {
        for (name, xs) in &fams {
            khintchine(name, xs, 50, 1).unwrap();
        }
    });
}

criterion_group!(benches, moments, kikuchi, spectral);
criterion_main!(benches);
