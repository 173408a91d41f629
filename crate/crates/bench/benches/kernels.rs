use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use gabi_bench::{desk_autoencoder, heat_dataset};
use gabi_core::baselines::{gp_fit_mml, GpGrid, KernelKind};
use gabi_core::forward::{solve_heat, HeatProblemSpec};
use gabi_core::geometry::{laplacian_spectrum, ObservationOperator};
use gabi_core::inversion::{abc_sample, InverseProblem, MeshDecoder, NoiseMode, Observation};
use gabi_core::neural::mmd::mmd2_median_with_grad;
use gabi_core::neural::train::{autoencoder_loss_grad, BatchItem};
use gabi_core::neural::{MeshContext, Samples};
use gabi_core::rng::{normal_vec, stream_rng};

fn heat_solve(c: &mut Criterion) {
    let spec = HeatProblemSpec {
        length: 0.8,
        width: 0.5,
        bc_top: 0.7,
        bc_right: 0.3,
    };
    c.bench_function("heat_solve_33x33", |b| b.iter(|| solve_heat(&spec, 33, 33).unwrap()));
}

fn decoder(c: &mut Criterion) {
    let ds = heat_dataset(4, 33);
    let ae = desk_autoencoder(&ds);
    let ctx = MeshContext::new(&ds.samples[0].mesh);
    let mut rng = stream_rng(2, 0);
    let zs: Vec<Vec<f64>> = (0..64).map(|_| normal_vec(&mut rng, ae.latent_dim())).collect();
    let refs: Vec<&[f64]> = zs.iter().map(|z| z.as_slice()).collect();
    c.bench_function("decode_64_latents_33x33", |b| b.iter(|| ae.decode_many(&ctx, &refs).unwrap()));
}

fn training_step(c: &mut Criterion) {
    let ds = heat_dataset(4, 33);
    let ae = desk_autoencoder(&ds);
    let contexts: Vec<MeshContext> = ds.samples.iter().map(|s| MeshContext::new(&s.mesh)).collect();
    let targets: Vec<_> = ds.samples.iter().map(|s| ds.normalization.normalize(&s.field).to_tensor()).collect();
    let batch: Vec<BatchItem> = contexts
        .iter()
        .zip(&targets)
        .map(|(ctx, target)| BatchItem { ctx, target })
        .collect();
    let reference = normal_vec(&mut stream_rng(3, 0), 4 * ae.latent_dim());
    c.bench_function("loss_grad_batch4_33x33", |b| {
        b.iter(|| autoencoder_loss_grad(&ae.arch, &ae.params, &batch, &reference, 1.0, 1e-3).unwrap())
    });
}

fn mmd(c: &mut Criterion) {
    let mut rng = stream_rng(4, 0);
    let x = normal_vec(&mut rng, 16 * 32);
    let y = normal_vec(&mut rng, 16 * 32);
    c.bench_function("mmd2_median_grad_16x32", |b| {
        b.iter(|| mmd2_median_with_grad(Samples::new(&x, 32), Samples::new(&y, 32), 1e-3).unwrap())
    });
}

fn abc(c: &mut Criterion) {
    let ds = heat_dataset(2, 33);
    let ae = desk_autoencoder(&ds);
    let s = &ds.samples[0];
    let dec = MeshDecoder::new(&ae, &s.mesh);
    let mut rng = stream_rng(6, 0);
    let op = ObservationOperator::random(s.mesh.n_nodes(), 10, 0, 1e-2, &mut rng).unwrap();
    let y = op.apply(&s.field, &mut rng).unwrap();
    let problem = InverseProblem::single(&dec, Observation::new(op, y).unwrap(), NoiseMode::KnownSigma).unwrap();
    let mut group = c.benchmark_group("abc");
    group.sample_size(10);
    group.bench_function("abc_1000_draws_33x33", |b| b.iter(|| abc_sample(&problem, 1000, 50, 250, 1).unwrap()));
    group.finish();
}

fn gp(c: &mut Criterion) {
    let ds = heat_dataset(1, 17);
    let s = &ds.samples[0];
    let mut rng = stream_rng(7, 0);
    let op = ObservationOperator::random(s.mesh.n_nodes(), 10, 0, 1e-2, &mut rng).unwrap();
    let y = op.apply(&s.field, &mut rng).unwrap();
    let mut group = c.benchmark_group("gp");
    group.sample_size(10);
    group.bench_function("laplacian_spectrum_17x17", |b| b.iter(|| laplacian_spectrum(&s.mesh).unwrap()));
    let spectrum = laplacian_spectrum(&s.mesh).unwrap();
    group.bench_function("gp_fit_mml_20x20_grid", |b| {
        b.iter_batched(
            || GpGrid::standard(1e-2),
            |grid| gp_fit_mml(&spectrum, &op, &y, KernelKind::Matern32, &grid).unwrap(),
            BatchSize::SmallInput,
        )
    });
    group.finish();
}

criterion_group!(benches, heat_solve, decoder, training_step, mmd, abc, gp);
criterion_main!(benches);
