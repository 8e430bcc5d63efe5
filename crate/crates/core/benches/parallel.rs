//! Serial vs parallel execution of the data-parallel hot paths.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use encoderlab::corpus::synthetic::{generate, SyntheticSpec};
use encoderlab::encoder::{forward, init_params, Batch, ModelConfig};
use encoderlab::pretrain_data::{build_instances, InstanceConfig, Objective};
use encoderlab::tokenizer::{train, Algorithm};
use encoderlab::training::{Pretrainer, TrainHyper};
use encoderlab::Execution;

const MODES: [(&str, Execution); 2] = [("serial", Execution::Serial), ("parallel", Execution::Parallel)];

fn bench_instances(c: &mut Criterion) {
    let docs = generate(&SyntheticSpec {
        documents: 400,
        ..Default::default()
    });
    let tok = train(Algorithm::WordPiece, &docs, 600).unwrap();
    let cfg = InstanceConfig::new(128, Objective::Nsp, 1);
    let mut g = c.benchmark_group("pretrain_data");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::new("build_instances", name), |b| {
            b.iter(|| black_box(build_instances(&docs, &tok, &cfg, exec).unwrap()))
        });
    }
    g.finish();
}

fn bench_forward(c: &mut Criterion) {
    let cfg = ModelConfig {
        num_layers: 2,
        hidden: 64,
        heads: 4,
        ffn_inner: 256,
        max_positions: 128,
        embed_dim: 64,
        ..ModelConfig::tiny(500)
    };
    let params = init_params::<f32>(&cfg, 3).unwrap();
    let rows: Vec<(Vec<u32>, Vec<u8>)> = (0..32u32)
        .map(|r| {
            let ids: Vec<u32> = (0..96).map(|t| 5 + (r * 31 + t * 7) % 495).collect();
            (ids, vec![0; 96])
        })
        .collect();
    let batch = Batch::new(&rows);
    let mut g = c.benchmark_group("encoder");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::new("forward_b32_l96", name), |b| {
            b.iter(|| black_box(forward(&cfg, &params, &batch, exec).unwrap()))
        });
    }
    g.finish();
}

fn bench_train_steps(c: &mut Criterion) {
    let docs = generate(&SyntheticSpec::default());
    let tok = train(Algorithm::WordPiece, &docs, 400).unwrap();
    let data = build_instances(&docs, &tok, &InstanceConfig::new(64, Objective::So, 2), Execution::default())
        .unwrap()
        .instances;
    let cfg = ModelConfig {
        hidden: 32,
        heads: 4,
        ffn_inner: 128,
        embed_dim: 32,
        ..ModelConfig::tiny(tok.len())
    };
    let hyper = TrainHyper {
        warmup_steps: 1,
        total_steps: 1_000_000,
        ..TrainHyper::desk()
    };
    let mut g = c.benchmark_group("training");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::new("pretrain_5_steps", name), |b| {
            b.iter_batched(
                || Pretrainer::new(cfg.clone(), hyper.clone(), exec).unwrap(),
                |mut t| black_box(t.run_until(&data, 5).unwrap()),
                criterion::BatchSize::LargeInput,
            )
        });
    }
    g.finish();
}

criterion_group!(benches, bench_instances, bench_forward, bench_train_steps);
criterion_main!(benches);
