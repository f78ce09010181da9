//! Wasserstein critic/generator losses with gradient penalty.
//!
//! The critic minimizes `mean(D(fake)) - mean(D(real)) + gp + drift`, where
//! the penalty pushes the critic's input-gradient norm toward 1 on random
//! interpolates between real and fake samples, and the small drift term keeps
//! raw scores from wandering. The generator minimizes `-mean(D(fake))`.
//!
//! Scoring is injected as a closure so the losses work for the real critic
//! and for the tiny analytic critics the tests use.

use crate::rng::Rng;
use crate::tensor::{Real, Tape, Tensor, TensorError, Var};

/// Default penalty weight.
pub const LAMBDA_GP: f64 = 10.0;

/// Default drift coefficient (set to 0 to disable the term).
pub const EPS_DRIFT: f64 = 1e-3;

/// Per-step loss readings, as logged by the trainer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub critic_loss: f64,
    pub generator_loss: f64,
    /// mean D(real) - mean D(fake).
    pub wasserstein_estimate: f64,
    pub gradient_penalty: f64,
    pub drift_term: f64,
}

impl LossReport {
    pub fn all_finite(&self) -> bool {
        self.critic_loss.is_finite()
            && self.generator_loss.is_finite()
            && self.wasserstein_estimate.is_finite()
            && self.gradient_penalty.is_finite()
            && self.drift_term.is_finite()
    }
}

/// Critic-side loss nodes plus their scalar readings.
pub struct CriticLoss<E: Real> {
    /// Differentiable total: `mean(D(fake)) - mean(D(real)) + gp + drift`.
    pub total: Var<E>,
    pub critic_loss: f64,
    pub wasserstein_estimate: f64,
    pub gradient_penalty: f64,
    pub drift_term: f64,
}

fn score_batch<E: Real, F>(score: &F, x: &Var<E>, batch: usize) -> Result<Var<E>, TensorError>
where
    F: Fn(&Var<E>) -> Result<Var<E>, TensorError>,
{
    let s = score(x)?;
    if s.numel() != batch {
        return Err(TensorError::ShapeMismatch {
            op: "critic_score",
            detail: format!("{} scores for a batch of {batch}", s.numel()),
        });
    }
    Ok(s)
}

/// Gradient penalty `lambda * mean_b (|grad_xhat D(xhat)|_2 - 1)^2`.
///
/// One interpolate per sample pair with a fresh `u ~ Uniform(0, 1)` each
/// call. The inner gradient is produced by a backward pass that records onto
/// the same tape, so the returned node is differentiable with respect to the
/// critic's parameters.
pub fn gradient_penalty<E: Real, F>(
    tape: &Tape<E>,
    score: &F,
    real: &Tensor<E>,
    fake: &Tensor<E>,
    lambda: f64,
    rng: &mut Rng,
) -> Result<Var<E>, TensorError>
where
    F: Fn(&Var<E>) -> Result<Var<E>, TensorError>,
{
    if real.shape() != fake.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "gradient_penalty",
            detail: format!("real {:?} vs fake {:?}", real.shape(), fake.shape()),
        });
    }
    if lambda < 0.0 {
        return Err(TensorError::InvalidArg {
            op: "gradient_penalty",
            detail: format!("lambda {lambda} < 0"),
        });
    }
    let shape = real.shape().to_vec();
    let batch = shape[0];
    let per_sample: usize = shape[1..].iter().product();

    let mut mixed = Vec::with_capacity(real.numel());
    for b in 0..batch {
        let u = E::from_f64(rng.next_f64());
        let one_minus = E::ONE - u;
        let lo = b * per_sample;
        for i in lo..lo + per_sample {
            mixed.push(u * real.data()[i] + one_minus * fake.data()[i]);
        }
    }
    let x_hat = tape.leaf_owned(Tensor::new(shape.clone(), mixed)?, true)?;

    let scores = score_batch(score, &x_hat, batch)?;
    // batch scores may be coupled through the minibatch statistic; the
    // summed-score gradient is the standard estimator in that case
    let grads = scores.sum_all()?.backward_wrt(&[&x_hat])?;
    let g = grads.get(&x_hat).ok_or(TensorError::DetachedGraph)?;

    let reduce_axes: Vec<usize> = (1..shape.len()).collect();
    let norm = g.mul(&g)?.reduce_sum(&reduce_axes)?.sqrt()?;
    let deviation = norm.add_scalar(-1.0)?;
    deviation
        .mul(&deviation)?
        .reduce_mean(&[0])?
        .reshape(&[1])?
        .scale(lambda)
}

/// Builds the full critic loss. `real` and `fake` enter as data (no
/// gradients flow into the generator).
pub fn critic_loss<E: Real, F>(
    tape: &Tape<E>,
    score: &F,
    real: &Tensor<E>,
    fake: &Tensor<E>,
    lambda: f64,
    eps_drift: f64,
    rng: &mut Rng,
) -> Result<CriticLoss<E>, TensorError>
where
    F: Fn(&Var<E>) -> Result<Var<E>, TensorError>,
{
    let batch = real.shape()[0];
    let real_in = tape.leaf(real, false)?;
    let fake_in = tape.leaf(fake, false)?;
    let s_real = score_batch(score, &real_in, batch)?;
    let s_fake = score_batch(score, &fake_in, batch)?;

    let mean_real = s_real.mean_all()?.reshape(&[1])?;
    let mean_fake = s_fake.mean_all()?.reshape(&[1])?;
    let w_estimate = mean_real.scalar()?.to_f64() - mean_fake.scalar()?.to_f64();

    let gp = gradient_penalty(tape, score, real, fake, lambda, rng)?;
    let gp_value = gp.scalar()?.to_f64();

    let mut total = mean_fake.sub(&mean_real)?.add(&gp)?;
    let mut drift_value = 0.0;
    if eps_drift > 0.0 {
        let drift = s_real
            .mul(&s_real)?
            .mean_all()?
            .reshape(&[1])?
            .scale(eps_drift)?;
        drift_value = drift.scalar()?.to_f64();
        total = total.add(&drift)?;
    }

    Ok(CriticLoss {
        critic_loss: total.scalar()?.to_f64(),
        total,
        wasserstein_estimate: w_estimate,
        gradient_penalty: gp_value,
        drift_term: drift_value,
    })
}

/// Generator loss `-mean(D(fake))`; `fake` must carry gradients back into
/// the generator.
pub fn generator_loss<E: Real, F>(score: &F, fake: &Var<E>) -> Result<Var<E>, TensorError>
where
    F: Fn(&Var<E>) -> Result<Var<E>, TensorError>,
{
    let batch = fake.shape()[0];
    let s = score_batch(score, fake, batch)?;
    s.mean_all()?.neg()
}
