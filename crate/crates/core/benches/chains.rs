//! Parallel against sequential execution of the chain runner and the EM
//! restarts. Without the `parallel` feature both arms run sequentially.

use std::time::Duration;

use borrowbench::data::BuiltinDataset;
use borrowbench::ess::{fit_mixture_em_with, Family};
use borrowbench::inference::{ChainSpec, Execution};
use borrowbench::methods::{fit, Method, MethodConfigs};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn spec(execution: Execution) -> ChainSpec {
    ChainSpec {
        n_chains: 4,
        n_warmup: 500,
        n_keep: 1000,
        execution,
        ..ChainSpec::default()
    }
}

fn chains(c: &mut Criterion) {
    let data = BuiltinDataset::AsBinary.load();
    let cfgs = MethodConfigs::defaults(&data);
    let mut group = c.benchmark_group("chains");
    group.sample_size(10).measurement_time(Duration::from_secs(20));
    for method in [Method::Dmpp, Method::PbmHs, Method::Dpm] {
        for exec in [Execution::Parallel, Execution::Sequential] {
            let sp = spec(exec);
            group.bench_with_input(BenchmarkId::new(method.label(), format!("{exec:?}")), &sp, |b, sp| {
                b.iter(|| fit(method, &data, &cfgs, sp).unwrap())
            });
        }
    }
    group.finish();
}

fn em_restarts(c: &mut Criterion) {
    let data = BuiltinDataset::AsBinary.load();
    let cfgs = MethodConfigs::defaults(&data);
    let draws = fit(Method::Mem, &data, &cfgs, &spec(Execution::Sequential)).unwrap().theta_cc_draws;
    let mut group = c.benchmark_group("em_restarts");
    group.sample_size(10);
    for exec in [Execution::Parallel, Execution::Sequential] {
        let mut cfg = cfgs.mixture.clone();
        cfg.execution = exec;
        group.bench_with_input(BenchmarkId::from_parameter(format!("{exec:?}")), &cfg, |b, cfg| {
            b.iter(|| fit_mixture_em_with(&draws, Family::Beta, cfg).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, chains, em_restarts);
criterion_main!(benches);
