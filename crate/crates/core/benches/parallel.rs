use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use progkit::neural::{make_time_bins, ModelConfig, Network, PatchData, PatientInput, TrainingSample, TumorGraph, GRAPH_PATCH};
use progkit::par::Exec;
use progkit::survival::concordance_index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn batch(n: usize, rng: &mut ChaCha8Rng) -> Vec<TrainingSample<f32>> {
    let voxels = GRAPH_PATCH.iter().product::<usize>();
    (0..n)
        .map(|_| {
            let nodes = rng.random_range(1..=3);
            let patches = (0..nodes)
                .map(|_| {
                    let v: Vec<f32> = (0..voxels).map(|_| rng.random_range(-1.0..1.0)).collect();
                    PatchData::new(&v, GRAPH_PATCH).unwrap()
                })
                .collect();
            let descs = (0..nodes).map(|_| (0..6).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            TrainingSample {
                input: PatientInput { graph: TumorGraph::new(patches, descs).unwrap(), ehr: vec![rng.random_range(-1.0..1.0)] },
                time: rng.random_range(100.0..2000.0),
                event: rng.random_bool(0.7),
            }
        })
        .collect()
}

fn bench_loss_and_grad(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let samples = batch(16, &mut rng);
    let times: Vec<f64> = samples.iter().map(|s| s.time).collect();
    let events: Vec<u8> = samples.iter().map(|s| s.event as u8).collect();
    let bins = make_time_bins(&times, &events, 4).unwrap();
    let net = Network::<f32>::new(ModelConfig::multi_patch(6, 1, 4), 0).unwrap();
    let refs: Vec<&TrainingSample<f32>> = samples.iter().collect();
    let mut group = c.benchmark_group("loss_and_grad_16");
    group.sample_size(10);
    for exec in [Exec::Sequential, Exec::Parallel] {
        group.bench_with_input(BenchmarkId::from_parameter(format!("{exec:?}")), &exec, |b, &exec| {
            b.iter(|| net.loss_and_grad(&refs, &bins, exec).unwrap())
        });
    }
    group.finish();
}

fn bench_cindex_map(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cohorts: Vec<(Vec<f64>, Vec<f64>, Vec<u8>)> = (0..64)
        .map(|_| {
            let n = 2000;
            (
                (0..n).map(|_| rng.random()).collect(),
                (0..n).map(|_| rng.random_range(1.0..100.0)).collect(),
                (0..n).map(|_| rng.random_bool(0.6) as u8).collect(),
            )
        })
        .collect();
    let mut group = c.benchmark_group("cindex_64x2000");
    for exec in [Exec::Sequential, Exec::Parallel] {
        group.bench_with_input(BenchmarkId::from_parameter(format!("{exec:?}")), &exec, |b, &exec| {
            b.iter(|| exec.map(&cohorts, |(r, t, e)| concordance_index(r, t, e).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_loss_and_grad, bench_cindex_map);
criterion_main!(benches);
