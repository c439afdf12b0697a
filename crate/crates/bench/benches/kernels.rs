use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wadg_core::diffmath::{Tape, Tensor};
use wadg_core::losses::{mine_pairs, multi_similarity_loss, similarity_matrix, MsHyperParams};
use wadg_core::oracle::hungarian;

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

fn matmul_backward(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut g = c.benchmark_group("matmul_relu_backward");
    for n in [16, 64] {
        let a = random(&mut rng, n, n);
        let b = random(&mut rng, n, n);
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |bench, _| {
            bench.iter(|| {
                let mut tape = Tape::new();
                let x = tape.leaf(a.clone());
                let w = tape.leaf(b.clone());
                let h = tape.matmul(x, w).unwrap();
                let r = tape.relu(h).unwrap();
                let s = tape.sum(r).unwrap();
                black_box(tape.backward(s).unwrap());
            })
        });
    }
    g.finish();
}

fn ms_loss(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let params = MsHyperParams::default();
    let mut g = c.benchmark_group("multi_similarity");
    for n in [40, 80] {
        let mut e = random(&mut rng, n, 32);
        for i in 0..n {
            let norm = e.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            e.data_mut()[i * 32..(i + 1) * 32]
                .iter_mut()
                .for_each(|v| *v /= norm);
        }
        let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let domains: Vec<usize> = (0..n).map(|i| i % 4).collect();
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |bench, _| {
            bench.iter(|| {
                let s = similarity_matrix(&e, &labels, &domains).unwrap();
                let mined = mine_pairs(&s, &params);
                black_box(multi_similarity_loss(&s, &mined, &params).value)
            })
        });
    }
    g.finish();
}

fn assignment(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut g = c.benchmark_group("hungarian");
    for n in [32, 128] {
        let cost: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..n).map(|_| rng.gen_range(0.0..1.0)).collect())
            .collect();
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |bench, _| {
            bench.iter(|| black_box(hungarian(&cost)))
        });
    }
    g.finish();
}

criterion_group!(benches, matmul_backward, ms_loss, assignment);
criterion_main!(benches);
