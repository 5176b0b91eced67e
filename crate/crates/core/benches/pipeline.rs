use std::hint::black_box;

use criterion::measurement::WallTime;
use criterion::{criterion_group, criterion_main, BenchmarkGroup, Criterion};
use nab_core::encoder::{encode, encode_backward, init_bins};
use nab_core::geometry::render_phantom;
use nab_core::network::{init_network, net_backward, net_forward};
use nab_core::projector::{forward_project, sirt_reconstruct, Projector};
use nab_core::trainer::{compute_loss_and_grads, TrainConfig};
use nab_core::{make_grid, PhantomPreset, ScanGeometry};

const N: usize = 64;
const VIEWS: usize = 16;
const BINS: usize = 128;

fn both_paths(group: &mut BenchmarkGroup<'_, WallTime>, mut f: impl FnMut() + Send) {
    #[cfg(feature = "parallel")]
    {
        let one = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        group.bench_function("one_thread", |b| one.install(|| b.iter(&mut f)));
        group.bench_function("default_pool", |b| b.iter(&mut f));
    }
    #[cfg(not(feature = "parallel"))]
    group.bench_function("sequential", |b| b.iter(&mut f));
}

fn encoder(c: &mut Criterion) {
    let grid = make_grid(N, N).unwrap();
    let bins = init_bins(BINS, &[150.0, 200.0], 1).unwrap();
    let feats = encode(&grid, &bins).unwrap();

    let mut g = c.benchmark_group("encode");
    both_paths(&mut g, || {
        black_box(encode(black_box(&grid), &bins).unwrap());
    });
    g.finish();

    let mut g = c.benchmark_group("encode_backward");
    both_paths(&mut g, || {
        black_box(encode_backward(&grid, &bins, black_box(&feats)).unwrap());
    });
    g.finish();
}

fn network(c: &mut Criterion) {
    let grid = make_grid(N, N).unwrap();
    let feats = encode(&grid, &init_bins(BINS, &[150.0, 200.0], 1).unwrap()).unwrap();
    let net = init_network(&[BINS, 64, 64, 64, 1], 2).unwrap();
    let upstream = vec![1.0; N * N];

    let mut g = c.benchmark_group("net_forward_backward");
    both_paths(&mut g, || {
        let (_, cache) = net_forward(black_box(&feats), &net).unwrap();
        black_box(net_backward(&cache, &net, &upstream).unwrap());
    });
    g.finish();
}

fn projector(c: &mut Criterion) {
    let grid = make_grid(N, N).unwrap();
    let image = render_phantom(&PhantomPreset::HollowSquare.spec(0.3), &grid).unwrap();
    let geom = ScanGeometry::parallel(VIEWS, N, N).unwrap();
    let proj = Projector::new(&geom);
    let sino = proj.forward(&image).unwrap();

    let mut g = c.benchmark_group("projector");
    both_paths(&mut g, || {
        let s = proj.forward(black_box(&image)).unwrap();
        black_box(proj.back(&s).unwrap());
    });
    g.finish();

    let mut g = c.benchmark_group("sirt_20");
    g.sample_size(20);
    both_paths(&mut g, || {
        black_box(sirt_reconstruct(black_box(&sino), &geom, 20).unwrap());
    });
    g.finish();
}

fn train_epoch(c: &mut Criterion) {
    let grid = make_grid(N, N).unwrap();
    let image = render_phantom(&PhantomPreset::HollowSquare.spec(0.3), &grid).unwrap();
    let geom = ScanGeometry::parallel(VIEWS, N, N).unwrap();
    let sino = forward_project(&image, &geom).unwrap();
    let proj = Projector::new(&geom);
    let cfg = TrainConfig {
        epochs: 0,
        ..TrainConfig::default()
    };
    let model = nab_core::trainer::train(&cfg, &sino, &geom).unwrap().model;

    let mut g = c.benchmark_group("loss_and_gradients");
    g.sample_size(20);
    both_paths(&mut g, || {
        black_box(compute_loss_and_grads(&model, &grid, &proj, black_box(&sino)).unwrap());
    });
    g.finish();
}

criterion_group!(benches, encoder, network, projector, train_epoch);
criterion_main!(benches);
