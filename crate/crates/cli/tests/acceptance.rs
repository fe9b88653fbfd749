//! One PASS/FAIL line per acceptance criterion.
//!
//! Oracles here are written from scratch: brute-force loops, hand-derived
//! gradients and quadrature, not calls back into the code under test.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::Rng;
use stickerlab::attack::{craft_stickers, pretrain_shape_gan, run_attack_to_dir, train_attack, AttackTrainer, PretrainConfig};
use stickerlab::eval::{condition_frames, craft_and_evaluate, FrameBank};
use stickerlab::fr::{train_fr, FaceDataset, FrTrainConfig, Split, SyntheticFaces};
use stickerlab::losses::{critic_loss, gradient_penalty, tv_loss, Classifier};
use stickerlab::nn::{ParamStore, Prelu};
use stickerlab::render::asset::RegionName;
use stickerlab::render::{
    composite, make_synthetic_asset, make_synthetic_asset_sized, render_stickers_only, sh_constant, sh_irradiance,
    transform, RenderCache,
};
use stickerlab::saliency::{enumerate_combinations, grad_cam, guided_backprop, guided_grad_cam, MeanPoolModel, SaliencyModel};
use stickerlab::seed::rng_for;
use stickerlab::shapes::{build_corpus, CorpusConfig, ShapeCorpus};
use stickerlab::tensor::{grad, no_grad};
use stickerlab::{AttackSpec, FrSystem, Generator, ShapeGan, Tensor, TrainConfig};

type Check = Result<(bool, String), String>;

const ATTACK_BUDGET: Duration = Duration::from_secs(15 * 60);
const MAX_EPOCHS: usize = 500;
const HELDOUT_FRAMES: usize = 30;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

fn uniform(rng: &mut impl Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

fn e<T: std::fmt::Display>(x: T) -> String {
    x.to_string()
}

// 1

fn tv_brute(img: &[f64], c: usize, h: usize, w: usize) -> f64 {
    let px = |k: usize, i: usize, j: usize| img[k * h * w + i * w + j];
    let mut total = 0.0;
    for k in 0..c {
        for i in 0..h {
            for j in 0..w {
                let mut s = 0.0;
                let mut any = false;
                if j + 1 < w {
                    s += (px(k, i, j) - px(k, i, j + 1)).powi(2);
                    any = true;
                }
                if i + 1 < h {
                    s += (px(k, i, j) - px(k, i + 1, j)).powi(2);
                    any = true;
                }
                if any {
                    total += s.sqrt();
                }
            }
        }
    }
    total
}

/// `D(x) = Σ w·x + ½ Σ v·x²` per sample; input gradient `w + v·x`.
struct Quadratic {
    w: Vec<f64>,
    v: Vec<f64>,
}

impl Quadratic {
    fn value(&self, x: &[f64]) -> f64 {
        x.iter().zip(&self.w).zip(&self.v).map(|((x, w), v)| w * x + 0.5 * v * x * x).sum()
    }

    fn grad_norm(&self, x: &[f64]) -> f64 {
        x.iter().zip(&self.w).zip(&self.v).map(|((x, w), v)| (w + v * x).powi(2)).sum::<f64>().sqrt()
    }

    fn critic(&self, shape: [usize; 3]) -> impl Fn(&Tensor) -> Tensor + '_ {
        move |x: &Tensor| {
            let m = x.dim(0);
            let p = [1, shape[0], shape[1], shape[2]];
            let w = Tensor::new(self.w.clone(), &p);
            let v = Tensor::new(self.v.clone(), &p);
            x.mul(&w).add(&x.square().mul(&v).scale(0.5)).sum_to(&[m, 1, 1, 1]).reshape(&[m])
        }
    }
}

fn criterion_1() -> Check {
    let mut rng = rng_for(1, &[]);
    let mut worst_tv: f64 = 0.0;
    for _ in 0..100 {
        let img = uniform(&mut rng, 3 * 64, 0.0, 1.0);
        let got = tv_loss(&[Tensor::new(img.clone(), &[1, 3, 8, 8])]).item();
        worst_tv = worst_tv.max(rel(got, tv_brute(&img, 3, 8, 8)));
    }
    let shape = [1, 4, 4];
    let n = 16;
    let lambda = 10.0;
    let mut worst_critic: f64 = 0.0;
    for _ in 0..50 {
        let critics: Vec<Quadratic> = (0..2)
            .map(|_| Quadratic {
                w: uniform(&mut rng, n, -1.0, 1.0),
                v: uniform(&mut rng, n, -0.5, 0.5),
            })
            .collect();
        let fakes: Vec<Vec<f64>> = (0..2).map(|_| uniform(&mut rng, 2 * n, 0.0, 1.0)).collect();
        let reals: Vec<Vec<f64>> = (0..2).map(|_| uniform(&mut rng, 2 * n, 0.0, 1.0)).collect();
        let eps: Vec<Vec<f64>> = (0..2).map(|_| uniform(&mut rng, 2, 0.0, 1.0)).collect();
        let mut expected = 0.0;
        for b in 0..2 {
            let q = &critics[b];
            let (f, r) = (&fakes[b], &reals[b]);
            let mean_fake = (q.value(&f[..n]) + q.value(&f[n..])) / 2.0;
            let mean_real = (q.value(&r[..n]) + q.value(&r[n..])) / 2.0;
            let mut gp = 0.0;
            for i in 0..2 {
                let s: Vec<f64> = (0..n).map(|p| eps[b][i] * r[i * n + p] + (1.0 - eps[b][i]) * f[i * n + p]).collect();
                gp += (q.grad_norm(&s) - 1.0).powi(2) / 2.0;
            }
            expected += mean_fake - mean_real + lambda * gp;
        }
        let fns: Vec<_> = critics.iter().map(|q| q.critic(shape)).collect();
        let dyns: Vec<&dyn stickerlab::losses::Critic> = fns.iter().map(|f| f as &dyn stickerlab::losses::Critic).collect();
        let t = |v: &Vec<f64>| Tensor::new(v.clone(), &[2, 1, 4, 4]);
        let got = critic_loss(&dyns, &fakes.iter().map(t).collect::<Vec<_>>(), &reals.iter().map(t).collect::<Vec<_>>(), &eps, lambda)
            .map_err(e)?
            .total
            .item();
        worst_critic = worst_critic.max(rel(got, expected));
    }
    Ok((
        worst_tv <= 1e-6 && worst_critic <= 1e-6,
        format!("worst relative error tv {worst_tv:.1e}, critic {worst_critic:.1e}"),
    ))
}

// 2

fn criterion_2() -> Check {
    let mut rng = rng_for(2, &[]);
    let x = Tensor::new(uniform(&mut rng, 4 * 9, 0.0, 1.0), &[4, 1, 3, 3]);
    let raw = uniform(&mut rng, 9, -1.0, 1.0);
    let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    let linear = |k: f64| {
        let w = Tensor::new(raw.iter().map(|v| k * v / norm).collect(), &[1, 1, 3, 3]);
        move |t: &Tensor| t.mul(&w).sum_to(&[t.dim(0), 1, 1, 1]).reshape(&[t.dim(0)])
    };
    let constant = |t: &Tensor| t.scale(0.0).sum_to(&[t.dim(0), 1, 1, 1]).reshape(&[t.dim(0)]).add_scalar(3.0);
    let unit = gradient_penalty(&linear(1.0), &x, 10.0).item();
    let flat = gradient_penalty(&constant, &x, 10.0).item();
    let slope2 = gradient_penalty(&linear(2.0), &x, 10.0).item();
    Ok((
        unit.abs() <= 1e-8 && (flat - 10.0).abs() <= 1e-8 && (slope2 - 10.0).abs() <= 1e-6,
        format!("unit {unit:.2e}, constant {flat:.10}, slope-2 {slope2:.10}"),
    ))
}

// 3

fn criterion_3() -> Check {
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    let mut checked = 0usize;
    for k in 0..50u64 {
        let mut rng = rng_for(3, &[k]);
        let sh = stickerlab::fr::random_lighting(&mut rng);
        let asset = make_synthetic_asset_sized(k + 1, rng.random_range(-25.0..25.0), rng.random_range(-20.0..20.0), &sh, 16, 16)
            .map_err(e)?;
        let cache = RenderCache::new(&asset).map_err(e)?;
        let orig = Tensor::new(cache.image.clone(), &[3, 16, 16]);
        let weights = Tensor::new(uniform(&mut rng, 3 * 256, -1.0, 1.0), &[3, 16, 16]);
        let tex0 = uniform(&mut rng, 3 * 256, 0.0, 1.0);
        let loc0 = uniform(&mut rng, 256, 0.05, 0.95);
        let objective = |tex: &Tensor, loc: &Tensor| -> Result<Tensor, String> {
            let (rgb, cov) = render_stickers_only(&cache, tex, loc).map_err(e)?;
            Ok(composite(&orig, &rgb, &cov).map_err(e)?.mul(&weights).sum())
        };
        let tex = Tensor::param(tex0.clone(), &[3, 16, 16]);
        let loc = Tensor::param(loc0.clone(), &[1, 16, 16]);
        let g = grad(&objective(&tex, &loc)?, &[&tex, &loc], false);
        let eval = |t: &[f64], l: &[f64]| -> Result<f64, String> {
            no_grad(|| objective(&Tensor::new(t.to_vec(), &[3, 16, 16]), &Tensor::new(l.to_vec(), &[1, 16, 16])).map(|o| o.item()))
        };
        let mut compare = |analytic: f64, plus: f64, minus: f64| {
            let numeric = (plus - minus) / (2.0 * h);
            if analytic.abs().max(numeric.abs()) > 1e-9 {
                worst = worst.max(rel(analytic, numeric));
            }
            checked += 1;
        };
        for i in 0..tex0.len() {
            let (mut p, mut m) = (tex0.clone(), tex0.clone());
            p[i] += h;
            m[i] -= h;
            compare(g[0].data()[i], eval(&p, &loc0)?, eval(&m, &loc0)?);
        }
        for i in 0..loc0.len() {
            let (mut p, mut m) = (loc0.clone(), loc0.clone());
            p[i] += h;
            m[i] -= h;
            compare(g[1].data()[i], eval(&tex0, &p)?, eval(&tex0, &m)?);
        }
    }
    Ok((worst <= 1e-3, format!("{checked} partials, worst relative error {worst:.1e}")))
}

// 4

fn criterion_4() -> Check {
    let spec = AttackSpec::dodging(0);
    let mut identical = 0;
    for k in 0..20u64 {
        let mut rng = rng_for(4, &[k]);
        let sh = stickerlab::fr::random_lighting(&mut rng);
        let asset = make_synthetic_asset(100 + k, rng.random_range(-25.0..25.0), rng.random_range(-20.0..20.0), &sh).map_err(e)?;
        let cache = RenderCache::new(&asset).map_err(e)?;
        let regions = spec.combination.anchors(&asset).map_err(e)?;
        let n = 80;
        let outputs: Vec<(Tensor, Tensor)> = regions
            .iter()
            .map(|_| (Tensor::new(uniform(&mut rng, 3 * n * n, -1.0, 1.0), &[3, n, n]), Tensor::full(&[1, n, n], -1.0)))
            .collect();
        let augment = (k % 2 == 1).then_some(k);
        let out = no_grad(|| transform(&cache, &outputs, &regions, augment)).map_err(e)?;
        let reference = asset.image_planar();
        if out.data().iter().zip(&reference).all(|(a, b)| a.to_bits() == b.to_bits()) && out.numel() == reference.len() {
            identical += 1;
        }
    }
    Ok((identical == 20, format!("{identical}/20 assets bit-identical")))
}

// 5

/// Real SH basis from its normalization constants.
fn basis(x: f64, y: f64, z: f64) -> [f64; 9] {
    let c0 = 0.5 * (1.0 / PI).sqrt();
    let c1 = (3.0 / (4.0 * PI)).sqrt();
    let c2 = 0.5 * (15.0 / PI).sqrt();
    let c20 = 0.25 * (5.0 / PI).sqrt();
    let c22 = 0.25 * (15.0 / PI).sqrt();
    [c0, c1 * y, c1 * z, c1 * x, c2 * x * y, c2 * y * z, c20 * (3.0 * z * z - 1.0), c2 * x * z, c22 * (x * x - y * y)]
}

fn random_unit(rng: &mut impl Rng) -> [f64; 3] {
    let z: f64 = rng.random_range(-1.0..1.0);
    let phi: f64 = rng.random_range(0.0..2.0 * PI);
    let r = (1.0 - z * z).sqrt();
    [r * phi.cos(), r * phi.sin(), z]
}

fn criterion_5() -> Check {
    let (nt, np) = (240, 480);
    let mut grid = Vec::with_capacity(nt * np);
    for i in 0..nt {
        let t = (i as f64 + 0.5) * PI / nt as f64;
        for j in 0..np {
            let p = (j as f64 + 0.5) * 2.0 * PI / np as f64;
            let dir = [t.sin() * p.cos(), t.sin() * p.sin(), t.cos()];
            let dw = t.sin() * (PI / nt as f64) * (2.0 * PI / np as f64);
            grid.push((dir, basis(dir[0], dir[1], dir[2]), dw));
        }
    }
    let mut rng = rng_for(5, &[]);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let mut sh = [0.0; 27];
        for c in 0..3 {
            let dc = rng.random_range(1.0..3.0);
            sh[c * 9] = dc;
            for k in 1..9 {
                sh[c * 9 + k] = dc * rng.random_range(-0.2..0.2);
            }
        }
        let n = random_unit(&mut rng);
        let got = sh_irradiance(&sh, n).map_err(e)?;
        let mut irr = [0.0; 3];
        for (dir, y, dw) in &grid {
            let cos = (n[0] * dir[0] + n[1] * dir[1] + n[2] * dir[2]).max(0.0);
            if cos == 0.0 {
                continue;
            }
            for c in 0..3 {
                let radiance: f64 = (0..9).map(|k| sh[c * 9 + k] * y[k]).sum();
                irr[c] += radiance * cos * dw;
            }
        }
        for c in 0..3 {
            worst = worst.max(rel(got[c], (irr[c] / PI).max(0.0)));
        }
    }
    let mut max_var: f64 = 0.0;
    for _ in 0..10 {
        let sh = sh_constant([rng.random_range(0.2..2.0), rng.random_range(0.2..2.0), rng.random_range(0.2..2.0)]);
        let gains: Vec<[f64; 3]> = (0..500).map(|_| sh_irradiance(&sh, random_unit(&mut rng))).collect::<Result<_, _>>().map_err(e)?;
        for c in 0..3 {
            let mean = gains.iter().map(|g| g[c]).sum::<f64>() / gains.len() as f64;
            let var = gains.iter().map(|g| (g[c] - mean).powi(2)).sum::<f64>() / gains.len() as f64;
            max_var = max_var.max(var);
        }
    }
    Ok((
        worst <= 0.02 && max_var < 1e-12,
        format!("worst quadrature mismatch {:.3}%, DC-only gain variance {max_var:.1e}", worst * 100.0),
    ))
}

// 6

struct TwoLayer {
    ps: ParamStore,
    act: Prelu,
}

impl SaliencyModel for TwoLayer {
    fn saliency_forward(&self, image: &Tensor, guided: bool) -> (Option<Tensor>, Tensor) {
        let w1t = Tensor::new(vec![1.0, 2.0, -1.0, 1.0], &[2, 2]);
        let z = image.reshape(&[1, 2]).matmul(&w1t).reshape(&[1, 2, 1, 1]);
        let h = self.act.forward(&self.ps, &z, guided);
        let w2t = Tensor::new(vec![3.0, -2.0], &[2, 1]);
        (Some(h.clone()), h.reshape(&[1, 2]).matmul(&w2t))
    }
}

fn criterion_6() -> Check {
    let mut rng = rng_for(6, &[]);
    let (k, hh, ww) = (3, 6, 5);
    let n = hh * ww;
    let weights: Vec<Vec<f64>> = (0..2).map(|_| uniform(&mut rng, k, -1.0, 1.0)).collect();
    let model = MeanPoolModel { weights: weights.clone() };
    let mut worst: f64 = 0.0;
    let mut all_nonneg = true;
    for trial in 0..20 {
        let img = uniform(&mut rng, k * n, -1.0, 1.0);
        let class = trial % 2;
        // Activations are the image, pooling weights are w/n: the cam is
        // relu(Σ_k w_k·x_k) up to the constant 1/n, removed by normalization.
        let raw: Vec<f64> = (0..n).map(|p| (0..k).map(|c| weights[class][c] * img[c * n + p]).sum::<f64>().max(0.0)).collect();
        let max = raw.iter().copied().fold(0.0, f64::max);
        let t = Tensor::new(img, &[k, hh, ww]);
        let map = grad_cam(&model, &t, class).map_err(e)?;
        for (a, b) in map.values.iter().zip(&raw) {
            let want = if max > 0.0 { b / max } else { 0.0 };
            worst = worst.max((a - want).abs());
        }
        let ggc = guided_grad_cam(&model, &t, class).map_err(e)?;
        all_nonneg &= map.values.iter().chain(&ggc.values).all(|&v| v >= 0.0);
    }
    let mut ps = ParamStore::new();
    let act = Prelu::new(&mut ps, "act", 2);
    let two = TwoLayer { ps, act };
    // z = W1·(1, 2) = (-1, 4); upstream (3, -2) clipped to (3, 0); PReLU
    // slope 0.25 on the negative unit gives (0.75, 0); back through W1.
    let gb = guided_backprop(&two, &Tensor::new(vec![1.0, 2.0], &[2, 1, 1]), 0).map_err(e)?.to_vec();
    let hand = gb == vec![0.75, -0.75];

    let desc = stickerlab::fr::FrDescriptor {
        extractor: stickerlab::fr::Extractor::Prelu,
        input_size: 32,
        class_names: vec!["a".into(), "b".into()],
    };
    let frs = FrSystem::new(desc, 6).map_err(e)?;
    let a = make_synthetic_asset_sized(6, 5.0, 0.0, &sh_constant([1.0; 3]), 32, 64).map_err(e)?;
    let img = Tensor::new(a.image_planar(), &[3, 32, 32]);
    for class in 0..2 {
        let m1 = grad_cam(&frs, &img, class).map_err(e)?;
        let m2 = guided_grad_cam(&frs, &img, class).map_err(e)?;
        all_nonneg &= m1.values.iter().chain(&m2.values).all(|&v| v >= 0.0);
    }
    Ok((
        worst <= 1e-6 && hand && all_nonneg,
        format!("grad-cam max deviation {worst:.1e}, hand trace {gb:?}, maps nonnegative: {all_nonneg}"),
    ))
}

// 7

fn criterion_7() -> Check {
    use RegionName::*;
    let names = [RightSuperciliaryArch, LeftSuperciliaryArch, NasalBone, RightNasolabialSulcus, LeftNasolabialSulcus];
    let mut expected = Vec::new();
    for a in 0..5 {
        for b in a + 1..5 {
            for c in b + 1..5 {
                expected.push([names[a], names[b], names[c]]);
            }
        }
    }
    let got = enumerate_combinations();
    let table = got.len() == 10 && got.iter().zip(&expected).enumerate().all(|(i, (g, x))| g.id == i + 1 && g.regions == *x);
    let named = got[0].regions == [RightSuperciliaryArch, LeftSuperciliaryArch, NasalBone]
        && got[2].regions == [RightSuperciliaryArch, LeftSuperciliaryArch, LeftNasolabialSulcus]
        && got[7].regions == [LeftSuperciliaryArch, NasalBone, LeftNasolabialSulcus];
    Ok((table && named, format!("lexicographic table: {table}, #1/#3/#8 regions: {named}")))
}

// 9

const PRETRAIN_EPOCHS: usize = 300;

fn criterion_9(corpus: &ShapeCorpus) -> Result<(bool, String, ShapeGan), String> {
    let cfg = PretrainConfig {
        arch: "tiny".into(),
        epochs: PRETRAIN_EPOCHS,
        batch_size: 16,
        ..PretrainConfig::default()
    };
    let start = Instant::now();
    let (gan, _) = pretrain_shape_gan(corpus, &cfg).map_err(e)?;
    let took = start.elapsed();
    let asset = make_synthetic_asset(9, 0.0, 0.0, &sh_constant([1.0; 3])).map_err(e)?;
    let anchors = AttackSpec::dodging(0).combination.anchors(&asset).map_err(e)?;
    let sets = craft_stickers(&gan.generator, 67, 9, &anchors).map_err(e)?;
    let masks: Vec<Vec<bool>> = sets
        .iter()
        .flat_map(|s| s.items.iter().map(|it| it.mask.data().iter().map(|&v| v > 0.5).collect()))
        .take(200)
        .collect();
    let mut good = 0;
    for m in &masks {
        let best = (0..corpus.len())
            .map(|i| {
                let t = corpus.raw(i);
                let inter = m.iter().zip(t).filter(|(a, &b)| **a && b != 0).count();
                let union = m.iter().zip(t).filter(|(a, &b)| **a || b != 0).count();
                if union == 0 { 1.0 } else { inter as f64 / union as f64 }
            })
            .fold(0.0, f64::max);
        if best >= 0.6 {
            good += 1;
        }
    }
    let rate = good as f64 / masks.len() as f64;
    Ok((
        masks.len() == 200 && rate >= 0.7,
        format!("{good}/{} masks with IoU >= 0.6 ({:.1}%), pretraining {:.0}s", masks.len(), rate * 100.0, took.as_secs_f64()),
        gan,
    ))
}

// 8 and 11

struct AttackRun {
    heldout: f64,
    epochs: usize,
    took: Duration,
}

#[allow(clippy::too_many_arguments)]
fn run_attack(
    frs: &FrSystem,
    faces: &SyntheticFaces,
    ds: &FaceDataset,
    spec: &AttackSpec,
    corpus: &ShapeCorpus,
    cfg: &TrainConfig,
    pretrained: Option<&ShapeGan>,
    slot: Option<usize>,
    threshold: f64,
    dir: &Path,
) -> Result<AttackRun, String> {
    let assets: Vec<_> = ds
        .of_label(spec.attacker, Split::Train)
        .iter()
        .map(|&i| {
            let a = &ds.samples[i].asset;
            slot.map_or_else(|| Ok(a.clone()), |n| a.with_slot_size(n))
        })
        .collect::<stickerlab::Result<_>>()
        .map_err(e)?;
    let selection = FrameBank::new(assets.clone()).map_err(e)?;
    let start = Instant::now();
    let mut trainer = AttackTrainer::new(frs, &assets, spec, corpus, cfg, pretrained).map_err(e)?;
    let anchors = trainer.anchors().to_vec();
    // Early stop looks only at the attacker's training frames, with some headroom.
    let stop_at = (threshold + 0.1).min(1.0);
    let mut monitor = |_: usize, g: &Generator| -> stickerlab::Result<bool> {
        let ev = craft_and_evaluate(frs, g, &anchors, &selection, &selection, spec, 5, 3, None)?;
        Ok(ev.report.success_rate >= stop_at || start.elapsed() > ATTACK_BUDGET)
    };
    run_attack_to_dir(&mut trainer, dir, None, Some(&mut monitor)).map_err(e)?;
    let took = start.elapsed();
    let epochs = trainer.epoch();
    let heldout = FrameBank::new(condition_frames(faces, spec.attacker, None, HELDOUT_FRAMES).map_err(e)?).map_err(e)?;
    let ev = craft_and_evaluate(frs, trainer.generator(), &anchors, &selection, &heldout, spec, 5, 3, None).map_err(e)?;
    Ok(AttackRun {
        heldout: ev.report.success_rate,
        epochs,
        took,
    })
}

fn most_confusable(frs: &FrSystem, ds: &FaceDataset, attacker: usize) -> Result<usize, String> {
    let idx = ds.of_label(attacker, Split::Train);
    let p = frs.probabilities(&ds.images(&idx, frs.input_size())).map_err(e)?;
    let k = frs.num_classes();
    let mut score = vec![0.0; k];
    for row in p.data().chunks(k) {
        for (s, v) in score.iter_mut().zip(row) {
            *s += (v + 1e-300).ln();
        }
    }
    Ok((0..k).filter(|&c| c != attacker).max_by(|&a, &b| score[a].total_cmp(&score[b])).expect("two classes"))
}

struct Shared {
    frs: FrSystem,
    faces: SyntheticFaces,
    ds: FaceDataset,
    fr_ckpt: PathBuf,
    fr_bytes: Vec<u8>,
}

fn criterion_8(shared: &Shared, corpus: &ShapeCorpus, pretrained: Option<&ShapeGan>, work: &Path) -> Check {
    let acc = stickerlab::fr::evaluate_accuracy(&shared.frs, &shared.ds, Split::Test).map_err(e)?;
    let attacker = 0;
    let base = TrainConfig {
        arch: "tiny".into(),
        batch_size: 8,
        epochs: MAX_EPOCHS,
        checkpoint_every: 25,
        ..TrainConfig::default()
    };
    let dodge = run_attack(
        &shared.frs,
        &shared.faces,
        &shared.ds,
        &AttackSpec::dodging(attacker),
        corpus,
        &base,
        None,
        None,
        0.9,
        &work.join("dodge"),
    )?;
    let target = most_confusable(&shared.frs, &shared.ds, attacker)?;
    let imp_cfg = TrainConfig {
        lr: 5e-3,
        freeze_shape_heads: pretrained.is_some(),
        ..base.clone()
    };
    let imp = run_attack(
        &shared.frs,
        &shared.faces,
        &shared.ds,
        &AttackSpec::impersonating(attacker, target),
        corpus,
        &imp_cfg,
        pretrained,
        Some(100),
        0.6,
        &work.join("impersonate"),
    )?;
    let within = |r: &AttackRun| r.epochs <= MAX_EPOCHS && r.took < ATTACK_BUDGET;
    let pass = acc >= 0.95 && dodge.heldout >= 0.9 && imp.heldout >= 0.6 && within(&dodge) && within(&imp);
    Ok((
        pass,
        format!(
            "FR test accuracy {:.1}%; dodging {:.1}% after {} epochs ({:.0}s); impersonating {attacker}->{target} {:.1}% after {} epochs ({:.0}s)",
            acc * 100.0,
            dodge.heldout * 100.0,
            dodge.epochs,
            dodge.took.as_secs_f64(),
            imp.heldout * 100.0,
            imp.epochs,
            imp.took.as_secs_f64()
        ),
    ))
}

fn criterion_11(shared: &Shared, corpus: &ShapeCorpus) -> Check {
    let assets: Vec<_> = shared.ds.of_label(1, Split::Train).iter().take(4).map(|&i| shared.ds.samples[i].asset.clone()).collect();
    let cfg = TrainConfig {
        arch: "tiny".into(),
        batch_size: 2,
        epochs: 3,
        ..TrainConfig::default()
    };
    train_attack(&shared.frs, &assets, &AttackSpec::impersonating(1, 2), corpus, &cfg, None).map_err(e)?;
    let after = shared.fr_ckpt.with_extension("after.ckpt");
    shared.frs.save(&after).map_err(e)?;
    let on_disk = std::fs::read(&shared.fr_ckpt).map_err(e)? == shared.fr_bytes;
    let resaved = std::fs::read(&after).map_err(e)? == shared.fr_bytes;
    Ok((
        on_disk && resaved,
        format!("checkpoint file unchanged: {on_disk}; re-serialized after attacks identical: {resaved}"),
    ))
}

// 10

fn cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_stickerlab")).args(args).output().map_err(e)?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("stickerlab {}: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)))
    }
}

fn files_of(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let mut v: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .map_err(e)?
        .map(|ent| {
            let p = ent.map_err(e)?.path();
            Ok((p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).map_err(e)?))
        })
        .collect::<Result<_, String>>()?;
    v.sort();
    Ok(v)
}

fn criterion_10(work: &Path) -> Check {
    let s = |p: &Path| p.to_str().unwrap().to_owned();
    let ds = work.join("ds");
    let frs = work.join("frs");
    let corpus = work.join("shapes.bin");
    cli(&["--out", &s(&ds), "asset", "make", "--identities", "3", "--per-identity", "5"])?;
    cli(&["--out", &s(&frs), "fr", "train", "--dataset", &s(&ds), "--epochs", "2"])?;
    cli(&["--out", &s(&corpus), "corpus", "build", "--per-kind", "4"])?;
    let mut runs = Vec::new();
    for r in ["a", "b"] {
        let dir = work.join(format!("run-{r}"));
        cli(&[
            "--seed", "7", "--out", &s(&dir), "attack", "train", "--frs", &s(&frs.join("frs.ckpt")), "--dataset", &s(&ds),
            "--mode", "impersonate", "--attacker", "0", "--target", "2", "--epochs", "4", "--arch", "tiny",
            "--batch-size", "2", "--corpus", &s(&corpus),
        ])?;
        runs.push(files_of(&dir)?);
    }
    let ckpts = runs[0].iter().filter(|(n, _)| n.ends_with(".ckpt")).count();
    let same = runs[0] == runs[1];
    Ok((same && ckpts >= 3, format!("{} files per run ({ckpts} checkpoints), byte-identical: {same}", runs[0].len())))
}

fn line(n: usize, name: &str, result: Check, t: Instant) -> bool {
    let secs = t.elapsed().as_secs_f64();
    let (ok, detail) = match result {
        Ok(r) => r,
        Err(msg) => (false, format!("error: {msg}")),
    };
    println!("[{}] {n:>2} {name}: {detail} ({secs:.1}s)", if ok { "PASS" } else { "FAIL" });
    ok
}

fn main() {
    let work = tempfile::tempdir().expect("temp dir");
    let mut passed = Vec::new();
    macro_rules! run {
        ($n:expr, $name:expr, $body:expr) => {{
            let t = Instant::now();
            passed.push(($n, line($n, $name, $body, t)));
        }};
    }
    run!(1, "loss oracles", criterion_1());
    run!(2, "gradient penalty analytics", criterion_2());
    run!(3, "renderer differentiability", criterion_3());
    run!(4, "sticker-only rendering fidelity", criterion_4());
    run!(5, "spherical harmonics", criterion_5());
    run!(6, "saliency oracles", criterion_6());
    run!(7, "combination table", criterion_7());

    let corpus = build_corpus(&CorpusConfig {
        per_kind: 200,
        seed: 1,
        ..CorpusConfig::default()
    })
    .expect("corpus");
    let t = Instant::now();
    let (r9, gan) = match criterion_9(&corpus) {
        Ok((ok, detail, gan)) => (Ok((ok, detail)), Some(gan)),
        Err(msg) => (Err(msg), None),
    };
    let ok9 = line(9, "shape constraint efficacy", r9, t);

    let t = Instant::now();
    let shared = (|| -> Result<Shared, String> {
        let faces = SyntheticFaces::default();
        let ds = FaceDataset::synthetic(&faces).map_err(e)?;
        let (frs, _) = train_fr(&ds, &FrTrainConfig::default()).map_err(e)?;
        let fr_ckpt = work.path().join("frs.ckpt");
        frs.save(&fr_ckpt).map_err(e)?;
        let fr_bytes = std::fs::read(&fr_ckpt).map_err(e)?;
        Ok(Shared { frs, faces, ds, fr_ckpt, fr_bytes })
    })();
    match &shared {
        Ok(sh) => {
            run!(8, "desk-scale attack efficacy", criterion_8(sh, &corpus, gan.as_ref(), work.path()));
        }
        Err(msg) => {
            passed.push((8, line(8, "desk-scale attack efficacy", Err(msg.clone()), t)));
        }
    }
    passed.push((9, ok9));
    run!(10, "determinism", criterion_10(work.path()));
    match &shared {
        Ok(sh) => run!(11, "frozen target", criterion_11(sh, &corpus)),
        Err(msg) => run!(11, "frozen target", Err(msg.clone())),
    }
    passed.sort();
    let failed: Vec<usize> = passed.iter().filter(|(_, ok)| !ok).map(|(n, _)| *n).collect();
    println!("{}/{} criteria passed", passed.len() - failed.len(), passed.len());
    if !failed.is_empty() {
        println!("failing: {failed:?}");
    }
}
