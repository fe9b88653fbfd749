use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use stickerlab::fr::{Extractor, FrDescriptor};
use stickerlab::gan::{sample_noise, GanArch, Generator};
use stickerlab::losses::tv_loss;
use stickerlab::nn::NormState;
use stickerlab::render::{make_synthetic_asset, sh_constant, RenderCache, StickerScene};
use stickerlab::tensor::{grad, no_grad};
use stickerlab::{AttackSpec, FrSystem, Tensor};

fn tv(c: &mut Criterion) {
    let x = Tensor::param((0..3 * 80 * 80).map(|i| ((i * 31) % 97) as f64 / 97.0).collect(), &[3, 80, 80]);
    c.bench_function("tv_loss 3x80x80 + grad", |b| {
        b.iter(|| {
            let l = tv_loss(&[x.clone()]);
            black_box(grad(&l, &[&x], false));
        })
    });
}

fn generator(c: &mut Criterion) {
    let g = Generator::new(&GanArch::preset("desk", 3).unwrap(), 1).unwrap();
    let z = sample_noise(4, 2);
    c.bench_function("generator desk m=4", |b| {
        b.iter(|| no_grad(|| black_box(g.forward(&z, &mut NormState::eval()).unwrap())))
    });
}

fn render(c: &mut Criterion) {
    let asset = make_synthetic_asset(7, 10.0, 0.0, &sh_constant([1.0; 3])).unwrap();
    let cache = RenderCache::new(&asset).unwrap();
    let anchors = AttackSpec::dodging(0).combination.anchors(&asset).unwrap();
    let scene = StickerScene::new(&cache, &anchors, 80, Some(64)).unwrap();
    let outputs: Vec<(Tensor, Tensor)> = (0..anchors.len())
        .map(|_| (Tensor::full(&[1, 3, 80, 80], 0.2), Tensor::full(&[1, 1, 80, 80], 0.4)))
        .collect();
    c.bench_function("render sample 3 stickers", |b| {
        b.iter(|| no_grad(|| black_box(scene.render_sample(&outputs, 0, None, false).unwrap())))
    });
}

fn recognizer(c: &mut Criterion) {
    let desc = FrDescriptor {
        extractor: Extractor::Prelu,
        input_size: 64,
        class_names: (0..10).map(|i| format!("id-{i}")).collect(),
    };
    let frs = FrSystem::new(desc, 3).unwrap();
    let x = Tensor::full(&[8, 3, 64, 64], 0.5);
    c.bench_function("recognizer forward 8x64", |b| {
        b.iter(|| no_grad(|| black_box(frs.probabilities(&x).unwrap())))
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = tv, generator, render, recognizer
}
criterion_main!(benches);
