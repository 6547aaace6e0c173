use criterion::{black_box, criterion_group, criterion_main, Criterion};
use pixssr_bench::{desk_model, rand_tensor, scan_fixture};
use pixssr_core::frft;
use pixssr_core::ssm::{selective_scan, selective_scan_fast};
use pixssr_core::tensor::Tape;

fn bench_frft(c: &mut Criterion) {
    let plan = frft::plan(64).unwrap();
    let re = rand_tensor(&[64], 1);
    let im = rand_tensor(&[64], 2);
    c.bench_function("frft_1d_n64", |b| {
        b.iter(|| plan.apply(black_box(0.5), re.data(), im.data()).unwrap())
    });
    let stacked = rand_tensor(&[2, 8, 16, 16], 3);
    c.bench_function("frft_2d_8x16x16", |b| {
        b.iter(|| frft::apply_stacked_2d(black_box(&stacked), 0.5).unwrap())
    });
}

fn bench_scan(c: &mut Criterion) {
    let (x, p) = scan_fixture(1024, 8, 8);
    c.bench_function("selective_scan_naive_l1024", |b| {
        b.iter(|| selective_scan(black_box(&x), &p).unwrap())
    });
    c.bench_function("selective_scan_fast_l1024", |b| {
        b.iter(|| selective_scan_fast(black_box(&x), &p).unwrap())
    });
}

fn bench_conv(c: &mut Criterion) {
    let x = rand_tensor(&[8, 16, 16], 4);
    let w = rand_tensor(&[8, 8, 3, 3], 5);
    let bias = rand_tensor(&[8], 6);
    c.bench_function("conv3x3_8x16x16", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let xv = tape.constant(x.clone());
            let wv = tape.constant(w.clone());
            let bv = tape.constant(bias.clone());
            tape.conv3x3(black_box(xv), wv, bv, 1).unwrap()
        })
    });
}

fn bench_model(c: &mut Criterion) {
    let model = desk_model();
    let x = rand_tensor(&[3, 16, 16], 7);
    let gp = rand_tensor(&[8, 16, 16], 8);
    c.bench_function("dypro_infer_16x16", |b| {
        b.iter(|| model.infer(black_box(&x), &gp).unwrap())
    });
}

criterion_group!(benches, bench_frft, bench_scan, bench_conv, bench_model);
criterion_main!(benches);
