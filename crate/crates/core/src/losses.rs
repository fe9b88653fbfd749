//! Critic, shape, adversarial, total-variation and combined objectives.

use serde::{Deserialize, Serialize};

use crate::attack::{AttackMode, AttackSpec};
use crate::error::{Error, Result};
use crate::tensor::{grad, Tensor};

/// Anything that scores `[m, 1, H, W]` masks as `[m]`.
pub trait Critic {
    fn score(&self, masks: &Tensor) -> Tensor;
}

impl<F: Fn(&Tensor) -> Tensor> Critic for F {
    fn score(&self, masks: &Tensor) -> Tensor {
        self(masks)
    }
}

/// Anything that maps images to per-class log-probabilities `[m, K]`.
pub trait Classifier {
    fn num_classes(&self) -> usize;
    fn log_probs(&self, images: &Tensor) -> Tensor;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { alpha: 100.0, beta: 1.0 }
    }
}

pub const TV_EPS: f64 = 1e-8;
const PROB_FLOOR: f64 = 1e-12;
const NORM_EPS: f64 = 1e-24;

fn per_sample_shape(t: &Tensor) -> Vec<usize> {
    let mut s = vec![1; t.ndim()];
    s[0] = t.dim(0);
    s
}

/// `eps_i·real_i + (1 − eps_i)·fake_i`.
pub fn interpolate(real: &Tensor, fake: &Tensor, eps: &[f64]) -> Result<Tensor> {
    if real.shape() != fake.shape() {
        return Err(Error::invalid(format!(
            "real {:?} and fake {:?} batches differ",
            real.shape(),
            fake.shape()
        )));
    }
    if eps.len() != real.dim(0) || eps.iter().any(|e| !(0.0..=1.0).contains(e)) {
        return Err(Error::invalid("need one eps in [0, 1] per sample"));
    }
    let e = Tensor::new(eps.to_vec(), &per_sample_shape(real));
    Ok(real.mul(&e).add(&fake.mul(&e.neg().add_scalar(1.0))))
}

/// Per-sample input-gradient norms of `critic` at `x`, kept differentiable
/// with respect to the critic's parameters.
pub fn critic_grad_norms(critic: &dyn Critic, x: &Tensor) -> Tensor {
    let x = x.detach_param();
    let score = critic.score(&x).sum();
    let g = grad(&score, &[&x], true).remove(0);
    let m = x.dim(0);
    g.square().sum_to(&per_sample_shape(&x)).reshape(&[m]).add_scalar(NORM_EPS).sqrt()
}

/// `λ·mean_i (‖∇D(x_i)‖₂ − 1)²`.
pub fn gradient_penalty(critic: &dyn Critic, interpolated: &Tensor, lambda: f64) -> Tensor {
    critic_grad_norms(critic, interpolated).add_scalar(-1.0).square().mean().scale(lambda)
}

/// Breakdown of the critic objective summed over branches.
#[derive(Debug, Clone)]
pub struct CriticLoss {
    pub total: Tensor,
    pub fake_mean: f64,
    pub real_mean: f64,
    pub penalty: f64,
}

/// `Σ_b [mean D_b(fake_b) − mean D_b(real_b) + GP_b]`, with interpolates
/// built from `eps[b]`.
pub fn critic_loss(
    critics: &[&dyn Critic],
    fakes: &[Tensor],
    reals: &[Tensor],
    eps: &[Vec<f64>],
    lambda: f64,
) -> Result<CriticLoss> {
    let n = critics.len();
    if fakes.len() != n || reals.len() != n || eps.len() != n {
        return Err(Error::invalid(format!(
            "{n} critics but {} fake, {} real and {} eps batches",
            fakes.len(),
            reals.len(),
            eps.len()
        )));
    }
    if n == 0 {
        return Err(Error::invalid("no critics"));
    }
    let mut total: Option<Tensor> = None;
    let (mut fm, mut rm, mut pen) = (0.0, 0.0, 0.0);
    for b in 0..n {
        let fake = fakes[b].detach();
        let real = reals[b].detach();
        let f = critics[b].score(&fake).mean();
        let r = critics[b].score(&real).mean();
        let gp = gradient_penalty(critics[b], &interpolate(&real, &fake, &eps[b])?, lambda);
        fm += f.item();
        rm += r.item();
        pen += gp.item();
        let term = f.sub(&r).add(&gp);
        total = Some(match total {
            None => term,
            Some(t) => t.add(&term),
        });
    }
    Ok(CriticLoss {
        total: total.expect("at least one branch"),
        fake_mean: fm,
        real_mean: rm,
        penalty: pen,
    })
}

/// `−Σ_b mean D_b(fake_b)`.
pub fn generator_shape_loss(critics: &[&dyn Critic], fakes: &[Tensor]) -> Result<Tensor> {
    if critics.len() != fakes.len() || critics.is_empty() {
        return Err(Error::invalid(format!(
            "{} critics for {} fake batches",
            critics.len(),
            fakes.len()
        )));
    }
    Ok(critics
        .iter()
        .zip(fakes)
        .map(|(c, f)| c.score(f).mean())
        .reduce(|a, b| a.add(&b))
        .expect("nonempty")
        .neg())
}

/// Mean cross-entropy `−log p(label)` with probabilities floored at 1e-12.
pub fn cross_entropy(log_probs: &Tensor, label: usize) -> Result<Tensor> {
    if log_probs.ndim() != 2 || label >= log_probs.dim(1) {
        return Err(Error::invalid(format!(
            "label {label} outside {} classes",
            log_probs.shape().get(1).copied().unwrap_or(0)
        )));
    }
    Ok(log_probs
        .narrow(1, label, 1)
        .clamp_min(PROB_FLOOR.ln())
        .mean()
        .neg())
}

/// Dodging pushes `p(attacker)` down (`−CE`); impersonating pulls
/// `p(target)` up (`+CE`).
pub fn adversarial_loss_from_log_probs(log_probs: &Tensor, spec: &AttackSpec) -> Result<Tensor> {
    match spec.mode {
        AttackMode::Dodging => Ok(cross_entropy(log_probs, spec.attacker)?.neg()),
        AttackMode::Impersonating => {
            let target = spec
                .target
                .ok_or_else(|| Error::invalid("impersonation needs a target label"))?;
            cross_entropy(log_probs, target)
        }
    }
}

pub fn adversarial_loss(frs: &dyn Classifier, images: &Tensor, spec: &AttackSpec) -> Result<Tensor> {
    let k = frs.num_classes();
    if spec.attacker >= k || spec.target.is_some_and(|t| t >= k) {
        return Err(Error::invalid(format!("attack labels outside the {k} classes")));
    }
    adversarial_loss_from_log_probs(&frs.log_probs(images), spec)
}

/// Isotropic total variation of `[m, C, H, W]` images.
///
/// Each pixel contributes `sqrt(dx² + dy² + ε)` with forward differences; a
/// difference whose neighbor falls outside the image is left out, and the
/// last pixel (no neighbors) contributes nothing. Summed over pixels and
/// channels, averaged over the batch.
pub fn tv_image(x: &Tensor) -> Tensor {
    assert_eq!(x.ndim(), 4, "tv expects [m, C, H, W]");
    let (m, h, w) = (x.dim(0), x.dim(2), x.dim(3));
    let term = |sq: Tensor| sq.add_scalar(TV_EPS).sqrt().sum();
    let mut total = Tensor::scalar(0.0);
    if h > 1 && w > 1 {
        let c = x.narrow(2, 0, h - 1).narrow(3, 0, w - 1);
        let dx = c.sub(&x.narrow(2, 0, h - 1).narrow(3, 1, w - 1));
        let dy = c.sub(&x.narrow(2, 1, h - 1).narrow(3, 0, w - 1));
        total = total.add(&term(dx.square().add(&dy.square())));
    }
    if h > 1 {
        let col = x.narrow(3, w - 1, 1);
        let dy = col.narrow(2, 0, h - 1).sub(&col.narrow(2, 1, h - 1));
        total = total.add(&term(dy.square()));
    }
    if w > 1 {
        let row = x.narrow(2, h - 1, 1);
        let dx = row.narrow(3, 0, w - 1).sub(&row.narrow(3, 1, w - 1));
        total = total.add(&term(dx.square()));
    }
    total.scale(1.0 / m as f64)
}

/// Total variation summed over branches.
pub fn tv_loss(stickers: &[Tensor]) -> Tensor {
    stickers
        .iter()
        .map(tv_image)
        .reduce(|a, b| a.add(&b))
        .unwrap_or_else(|| Tensor::scalar(0.0))
}

/// `L_s + α·L_adv + β·L_tv`. Non-finite parts are reported as divergence.
pub fn total_generator_loss(shape: &Tensor, adv: &Tensor, tv: &Tensor, weights: &LossWeights) -> Result<Tensor> {
    for (name, t) in [("shape", shape), ("adversarial", adv), ("tv", tv)] {
        if !t.item().is_finite() {
            return Err(Error::Divergence {
                step: 0,
                detail: format!("{name} loss is {}", t.item()),
            });
        }
    }
    let mut total = shape.clone();
    if weights.alpha != 0.0 {
        total = total.add(&adv.scale(weights.alpha));
    }
    if weights.beta != 0.0 {
        total = total.add(&tv.scale(weights.beta));
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn approx(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol * b.abs().max(1.0), "{a} vs {b}");
    }

    #[test]
    fn interpolate_endpoints() {
        let r = Tensor::ones(&[2, 1, 2, 2]);
        let f = Tensor::zeros(&[2, 1, 2, 2]);
        assert_eq!(interpolate(&r, &f, &[1.0, 1.0]).unwrap().data(), r.data());
        assert_eq!(interpolate(&r, &f, &[0.0, 0.0]).unwrap().data(), f.data());
        assert!(interpolate(&r, &f, &[0.5, 0.5]).unwrap().data().iter().all(|&v| v == 0.5));
        assert!(interpolate(&r, &Tensor::zeros(&[1, 1, 2, 2]), &[0.5]).is_err());
        assert!(interpolate(&r, &f, &[1.5, 0.0]).is_err());
    }

    #[test]
    fn penalty_of_linear_and_constant_critics() {
        let w = Tensor::new(vec![0.6, 0.0, 0.0, 0.8], &[1, 1, 2, 2]);
        let x = Tensor::new((0..8).map(|i| i as f64 * 0.1).collect(), &[2, 1, 2, 2]);
        let unit = |t: &Tensor| t.mul(&w).sum_to(&[t.dim(0), 1, 1, 1]).reshape(&[t.dim(0)]);
        assert!(gradient_penalty(&unit, &x, 10.0).item().abs() < 1e-8);
        let konst = |t: &Tensor| Tensor::zeros(&[t.dim(0)]);
        approx(gradient_penalty(&konst, &x, 10.0).item(), 10.0, 1e-8);
        let double = |t: &Tensor| unit(t).scale(2.0);
        approx(gradient_penalty(&double, &x, 10.0).item(), 10.0, 1e-6);
    }

    #[test]
    fn critic_and_shape_loss_arithmetic() {
        let zero = |t: &Tensor| Tensor::zeros(&[t.dim(0)]);
        let x = Tensor::zeros(&[2, 1, 2, 2]);
        let l = critic_loss(&[&zero], &[x.clone()], &[x.clone()], &[vec![0.3, 0.7]], 10.0).unwrap();
        approx(l.total.item(), 10.0, 1e-8);
        assert!(critic_loss(&[&zero, &zero], &[x.clone()], &[x.clone()], &[vec![0.3, 0.7]], 10.0).is_err());
        let c1 = |t: &Tensor| Tensor::full(&[t.dim(0)], 1.0);
        let c2 = |t: &Tensor| Tensor::full(&[t.dim(0)], 2.0);
        let c3 = |t: &Tensor| Tensor::full(&[t.dim(0)], 3.0);
        let l = generator_shape_loss(&[&c1, &c2, &c3], &[x.clone(), x.clone(), x.clone()]).unwrap();
        approx(l.item(), -6.0, 1e-12);
    }

    #[test]
    fn adversarial_loss_values() {
        let lp = Tensor::new(vec![0.5f64.ln(), 0.5f64.ln(), 0.1f64.ln(), 0.9f64.ln()], &[2, 2]);
        let dodge = AttackSpec::dodging(0);
        let v = adversarial_loss_from_log_probs(&lp.narrow(0, 0, 1), &dodge).unwrap();
        approx(v.item(), -std::f64::consts::LN_2, 1e-12);
        let imp = AttackSpec::impersonating(1, 0);
        let v = adversarial_loss_from_log_probs(&lp.narrow(0, 1, 1), &imp).unwrap();
        approx(v.item(), 10f64.ln(), 1e-12);
        let hit = Tensor::new(vec![f64::NEG_INFINITY, 0.0], &[1, 2]);
        assert_eq!(adversarial_loss_from_log_probs(&hit, &AttackSpec::impersonating(0, 1)).unwrap().item(), 0.0);
        let miss = adversarial_loss_from_log_probs(&hit, &AttackSpec::impersonating(1, 0)).unwrap();
        approx(miss.item(), -(1e-12f64.ln()), 1e-12);
        assert!(cross_entropy(&lp, 2).is_err());
    }

    #[test]
    fn tv_small_cases() {
        let x = Tensor::new(vec![0.0, 1.0, 1.0, 0.0], &[1, 1, 2, 2]);
        approx(tv_image(&x).item(), 2f64.sqrt() + 2.0, 1e-6);
        let y = Tensor::new(vec![0.0, 1.0], &[1, 1, 1, 2]);
        approx(tv_image(&y).item(), 1.0, 1e-6);
        // A constant image only carries the stabilizer: sqrt(1e-8) per term.
        approx(tv_image(&Tensor::full(&[2, 3, 5, 4], 0.3)).item(), 3.0 * 19.0 * 1e-4, 1e-9);
    }

    #[test]
    fn total_loss_combines_and_rejects_non_finite() {
        let s = |v: f64| Tensor::scalar(v);
        let w = LossWeights::default();
        approx(total_generator_loss(&s(-1.0), &s(0.5), &s(2.0), &w).unwrap().item(), 51.0, 1e-12);
        let zero = LossWeights { alpha: 0.0, beta: 0.0 };
        assert_eq!(total_generator_loss(&s(-1.0), &s(0.5), &s(2.0), &zero).unwrap().item(), -1.0);
        assert!(total_generator_loss(&s(f64::NAN), &s(0.0), &s(0.0), &w).is_err());
    }

    #[test]
    fn tv_and_penalty_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x0: Vec<f64> = (0..2 * 16).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = Tensor::param(x0.clone(), &[2, 1, 4, 4]);
        let g = grad(&tv_image(&x), &[&x], false).remove(0);
        let h = 1e-6;
        for i in 0..x0.len() {
            let mut p = x0.clone();
            p[i] += h;
            let fp = tv_image(&Tensor::new(p.clone(), &[2, 1, 4, 4])).item();
            p[i] -= 2.0 * h;
            let fm = tv_image(&Tensor::new(p, &[2, 1, 4, 4])).item();
            approx(g.data()[i], (fp - fm) / (2.0 * h), 1e-4);
        }
        // Penalty gradient with respect to a critic weight.
        let w0: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
        let xs = Tensor::new(x0, &[2, 1, 4, 4]);
        let pen = |w: &Tensor| {
            let c = |t: &Tensor| t.mul(w).tanh().sum_to(&[t.dim(0), 1, 1, 1]).reshape(&[t.dim(0)]);
            gradient_penalty(&c, &xs, 10.0)
        };
        let w = Tensor::param(w0.clone(), &[1, 1, 4, 4]);
        let g = grad(&pen(&w), &[&w], false).remove(0);
        for i in 0..16 {
            let mut p = w0.clone();
            p[i] += h;
            let fp = pen(&Tensor::new(p.clone(), &[1, 1, 4, 4])).item();
            p[i] -= 2.0 * h;
            let fm = pen(&Tensor::new(p, &[1, 1, 4, 4])).item();
            approx(g.data()[i], (fp - fm) / (2.0 * h), 1e-4);
        }
    }
}
