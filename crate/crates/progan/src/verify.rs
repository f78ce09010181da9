//! Built-in verification suite behind `progan verify`.
//!
//! Each check is self-contained, runs in seconds, and reports pass/fail with
//! a one-line detail. The fault-injection hook exists so the harness itself
//! can be shown to catch a real defect (it flips the pixelwise-normalization
//! epsilon to zero on a zero-vector input, which must fail the oracle check).

use serde::Serialize;

use crate::networks::{Discriminator, Generator, NetworkPlan, PhaseState, TraceEntry};
use crate::nn;
use crate::optim::Adam;
use crate::rng::Rng;
use crate::tensor::{grad_check, Tape, Tensor, TensorError, Var};
use crate::train::{schedule, TrainingConfig};
use crate::wgan;

/// Deliberate defects for harness self-tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Run the pixelwise-normalization zero-vector case with eps = 0.
    PixelnormEpsZero,
}

impl Fault {
    pub fn parse(name: &str) -> Option<Fault> {
        match name {
            "pixelnorm-eps-zero" => Some(Fault::PixelnormEpsZero),
            _ => None,
        }
    }
}

/// Result of one named check.
#[derive(Debug, Clone, Serialize)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn outcome(name: &'static str, result: Result<String, String>) -> CheckOutcome {
    match result {
        Ok(detail) => CheckOutcome {
            name,
            passed: true,
            detail,
        },
        Err(detail) => CheckOutcome {
            name,
            passed: false,
            detail,
        },
    }
}

const GRAD_TOL: f64 = 1e-4;

fn check_grad_ops() -> Result<String, String> {
    let mut rng = Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let x = Tensor::<f64>::from_fn(vec![2, 3], |_| rng.normal_f64() + 4.0);
        let r = grad_check(
            |_, v| {
                let a = v.sqrt()?.mul(v)?;
                let b = v.powf_const(1.5)?.add_scalar(2.0)?;
                a.div(&b)?.sub(&v.scale(0.25)?)?.mean_all()
            },
            &x,
            1e-4,
        )
        .map_err(|e| e.to_string())?;
        worst = worst.max(r.max_rel_err);
    }
    if worst < GRAD_TOL {
        Ok(format!("elementwise chain max rel err {worst:.2e}"))
    } else {
        Err(format!("max rel err {worst:.2e} >= {GRAD_TOL:.0e}"))
    }
}

fn check_grad_layers() -> Result<String, String> {
    let mut rng = Rng::seed_from_u64(102);
    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        let x = Tensor::<f64>::randn(vec![2, 4, 4, 3], &mut rng);
        let w = Tensor::<f64>::randn(vec![3, 3, 3, 4], &mut rng);
        let wt = Tensor::<f64>::randn(vec![4, 4, 2, 3], &mut rng);
        let b = Tensor::<f64>::randn(vec![4], &mut rng);
        let r = grad_check(
            |tape, v| {
                let wv = tape.leaf(&w, false)?;
                let bv = tape.leaf(&b, false)?;
                let h = v.conv2d(&wv, 1)?.add_bias(&bv)?.leaky_relu(0.2)?;
                let h = h.upsample_nearest_2x()?.downsample_avg_2x()?;
                let h = nn::pixelnorm(&h, nn::PIXELNORM_EPS)?;
                let h = nn::minibatch_stddev(&h)?;
                h.mul(&h)?.mean_all()
            },
            &x,
            1e-4,
        )
        .map_err(|e| e.to_string())?;
        worst = worst.max(r.max_rel_err);

        let z = Tensor::<f64>::randn(vec![2, 1, 1, 3], &mut rng);
        let r2 = grad_check(
            |tape, v| {
                let wv = tape.leaf(&wt, false)?;
                v.conv2d_transposed(&wv, 0)?.mean_all()
            },
            &z,
            1e-4,
        )
        .map_err(|e| e.to_string())?;
        worst = worst.max(r2.max_rel_err);
    }
    if worst < GRAD_TOL {
        Ok(format!("layer stack max rel err {worst:.2e}"))
    } else {
        Err(format!("max rel err {worst:.2e} >= {GRAD_TOL:.0e}"))
    }
}

/// Directional finite-difference check of the full level-0 critic loss,
/// including the penalty double-backward, against the real channel plan.
pub fn critic_loss_directional_err(trials: usize, seed: u64) -> Result<f64, TensorError> {
    let plan = NetworkPlan::standard();
    let mut rng = Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for trial in 0..trials {
        let disc = Discriminator::<f64>::build(&plan, 0, &mut rng)?;
        let real = Tensor::<f64>::randn(vec![2, 4, 4, 3], &mut rng);
        let fake = Tensor::<f64>::randn(vec![2, 4, 4, 3], &mut rng);
        let phase = PhaseState::stable(0);
        let u_seed = 7000 + trial as u64;

        let eval = |disc: &Discriminator<f64>| -> Result<f64, TensorError> {
            let tape = Tape::new();
            let bound = disc.bind(&tape, false)?;
            let score = |x: &Var<f64>| bound.forward(x, &phase);
            let mut gp_rng = Rng::seed_from_u64(u_seed);
            Ok(wgan::critic_loss(&tape, &score, &real, &fake, 10.0, 1e-3, &mut gp_rng)?
                .critic_loss)
        };

        // tape gradient
        let tape = Tape::new();
        let bound = disc.bind(&tape, true)?;
        let score = |x: &Var<f64>| bound.forward(x, &phase);
        let mut gp_rng = Rng::seed_from_u64(u_seed);
        let parts = wgan::critic_loss(&tape, &score, &real, &fake, 10.0, 1e-3, &mut gp_rng)?;
        let grads = parts.total.backward()?;

        // random unit direction over all parameters
        let mut direction: Vec<Tensor<f64>> = Vec::new();
        let mut norm2 = 0.0;
        for p in disc.parameters() {
            let d = Tensor::<f64>::randn(p.value.shape().to_vec(), &mut rng);
            norm2 += d.data().iter().map(|v| v * v).sum::<f64>();
            direction.push(d);
        }
        let norm = norm2.sqrt();

        let mut directional = 0.0;
        for ((_, leaf), d) in bound.bindings().iter().zip(&direction) {
            if let Some(g) = grads.get_tensor(leaf) {
                directional += g
                    .data()
                    .iter()
                    .zip(d.data())
                    .map(|(a, b)| a * b / norm)
                    .sum::<f64>();
            }
        }

        let h = 1e-4;
        let probe = |sign: f64| -> Result<f64, TensorError> {
            let mut shifted = Discriminator::<f64>::build(&plan, 0, &mut Rng::seed_from_u64(1))?;
            let src = disc.parameters();
            for ((dst, src), d) in shifted.parameters_mut().into_iter().zip(src).zip(&direction) {
                dst.value = Tensor::new(
                    src.value.shape().to_vec(),
                    src.value
                        .data()
                        .iter()
                        .zip(d.data())
                        .map(|(v, dv)| v + sign * h * dv / norm)
                        .collect(),
                )?;
            }
            eval(&shifted)
        };
        let numeric = (probe(1.0)? - probe(-1.0)?) / (2.0 * h);
        let err = (directional - numeric).abs()
            / f64::max(1.0, directional.abs().max(numeric.abs()));
        worst = worst.max(err);
    }
    Ok(worst)
}

fn check_grad_critic() -> Result<String, String> {
    let worst = critic_loss_directional_err(3, 103).map_err(|e| e.to_string())?;
    if worst < GRAD_TOL {
        Ok(format!("critic-loss directional max rel err {worst:.2e}"))
    } else {
        Err(format!("max rel err {worst:.2e} >= {GRAD_TOL:.0e}"))
    }
}

/// Expected per-layer output shapes for the generator at a progress level.
pub fn expected_generator_trace(level: usize, batch: usize) -> Vec<(String, Vec<usize>)> {
    let plan = NetworkPlan::standard();
    let mut out = vec![
        ("input".to_string(), vec![batch, 1, 1, plan.latent_dim]),
        ("block0.conv0".to_string(), vec![batch, 4, 4, 256]),
        ("block0.conv1".to_string(), vec![batch, 4, 4, 256]),
    ];
    for l in 1..=level {
        let r = 4 << l;
        let c = plan.channels[l];
        out.push((format!("block{l}.conv0"), vec![batch, r, r, c]));
        out.push((format!("block{l}.conv1"), vec![batch, r, r, c]));
    }
    let r = 4 << level;
    out.push(("to_rgb".to_string(), vec![batch, r, r, 3]));
    out
}

/// Expected per-layer output shapes for the critic at a progress level.
pub fn expected_discriminator_trace(level: usize, batch: usize) -> Vec<(String, Vec<usize>)> {
    let plan = NetworkPlan::standard();
    let r = 4 << level;
    let mut out = vec![
        ("input".to_string(), vec![batch, r, r, 3]),
        ("from_rgb".to_string(), vec![batch, r, r, plan.channels[level]]),
    ];
    for l in (1..=level).rev() {
        let rl = 4 << l;
        out.push((format!("block{l}.conv0"), vec![batch, rl, rl, plan.channels[l]]));
        out.push((format!("block{l}.conv1"), vec![batch, rl, rl, plan.channels[l - 1]]));
    }
    out.push(("minibatch_stddev".to_string(), vec![batch, 4, 4, 257]));
    out.push(("cost.conv0".to_string(), vec![batch, 4, 4, 256]));
    out.push(("cost.conv1".to_string(), vec![batch, 1, 1, 256]));
    out.push(("cost.conv2".to_string(), vec![batch, 1, 1, 1]));
    out
}

fn trace_matches(
    got: &[TraceEntry],
    want: &[(String, Vec<usize>)],
) -> Result<(), String> {
    for (name, shape) in want {
        let entry = got
            .iter()
            .find(|e| &e.name == name)
            .ok_or_else(|| format!("missing trace entry {name}"))?;
        if &entry.shape != shape {
            return Err(format!(
                "{name}: got {:?}, expected {:?}",
                entry.shape, shape
            ));
        }
    }
    Ok(())
}

/// Walks both networks over all levels and fade points, comparing every
/// intermediate shape against the architecture table.
pub fn check_table1_shapes() -> Result<String, String> {
    let plan = NetworkPlan::standard();
    let mut rng = Rng::seed_from_u64(104);
    let batch = 2;
    let mut rows = 0;
    for level in 0..=plan.max_level() {
        let generator =
            Generator::<f32>::build(&plan, level, &mut rng).map_err(|e| e.to_string())?;
        let disc =
            Discriminator::<f32>::build(&plan, level, &mut rng).map_err(|e| e.to_string())?;
        let alphas: &[f64] = if level == 0 { &[1.0] } else { &[0.0, 0.5, 1.0] };
        for &alpha in alphas {
            let phase = PhaseState::new(level, alpha, 0).map_err(|e| e.to_string())?;
            let tape = Tape::new();
            let z = tape
                .leaf_owned(Tensor::<f32>::randn(vec![batch, 1, 1, 256], &mut rng), false)
                .map_err(|e| e.to_string())?;
            let mut tr = Vec::new();
            generator
                .bind(&tape, false)
                .and_then(|b| b.forward_traced(&z, &phase, &mut tr))
                .map_err(|e| e.to_string())?;
            trace_matches(&tr, &expected_generator_trace(level, batch))?;

            let r = 4 << level;
            let x = tape
                .leaf_owned(Tensor::<f32>::randn(vec![batch, r, r, 3], &mut rng), false)
                .map_err(|e| e.to_string())?;
            let mut tr = Vec::new();
            disc.bind(&tape, false)
                .and_then(|b| b.forward_traced(&x, &phase, &mut tr))
                .map_err(|e| e.to_string())?;
            trace_matches(&tr, &expected_discriminator_trace(level, batch))?;
            rows += tr.len();
        }
    }
    Ok(format!("all levels and fade points conform ({rows} rows checked)"))
}

fn check_oracle_pixelnorm(fault: Option<Fault>) -> Result<String, String> {
    let eps_for_zero_case = match fault {
        Some(Fault::PixelnormEpsZero) => 0.0,
        None => nn::PIXELNORM_EPS,
    };
    // zero vector must stay zero and finite
    let tape = Tape::new();
    let zero = tape
        .leaf_owned(Tensor::<f64>::zeros(vec![1, 1, 1, 4]), false)
        .map_err(|e| e.to_string())?;
    let normed = nn::pixelnorm(&zero, eps_for_zero_case)
        .map_err(|e| format!("zero-vector case: {e}"))?;
    if !normed.to_tensor().all_finite() {
        return Err("zero-vector case produced non-finite values".into());
    }

    // random inputs against the scalar-loop oracle
    let mut rng = Rng::seed_from_u64(105);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let x = Tensor::<f64>::randn(vec![2, 2, 2, 8], &mut rng);
        let tape = Tape::new();
        let xv = tape.leaf(&x, false).map_err(|e| e.to_string())?;
        let y = nn::pixelnorm(&xv, nn::PIXELNORM_EPS)
            .map_err(|e| e.to_string())?
            .to_tensor();
        let s = x.shape().to_vec();
        for b in 0..s[0] {
            for h in 0..s[1] {
                for w in 0..s[2] {
                    let mut ms = 0.0;
                    for c in 0..s[3] {
                        ms += x.at4(b, h, w, c) * x.at4(b, h, w, c);
                    }
                    let denom = (ms / s[3] as f64 + nn::PIXELNORM_EPS).sqrt();
                    for c in 0..s[3] {
                        let want = x.at4(b, h, w, c) / denom;
                        worst = worst.max((y.at4(b, h, w, c) - want).abs());
                    }
                }
            }
        }
    }
    if worst < 1e-12 {
        Ok(format!("matches scalar oracle to {worst:.2e}"))
    } else {
        Err(format!("max abs deviation {worst:.2e} >= 1e-12"))
    }
}

fn check_oracle_minibatch_stddev() -> Result<String, String> {
    let mut rng = Rng::seed_from_u64(106);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let x = Tensor::<f64>::randn(vec![4, 2, 3, 5], &mut rng);
        let tape = Tape::new();
        let xv = tape.leaf(&x, false).map_err(|e| e.to_string())?;
        let y = nn::minibatch_stddev(&xv)
            .map_err(|e| e.to_string())?
            .to_tensor();
        let s = x.shape().to_vec();
        let (n, h, w, c) = (s[0], s[1], s[2], s[3]);
        let mut total = 0.0;
        for hi in 0..h {
            for wi in 0..w {
                for ci in 0..c {
                    let mean: f64 =
                        (0..n).map(|b| x.at4(b, hi, wi, ci)).sum::<f64>() / n as f64;
                    let var: f64 = (0..n)
                        .map(|b| (x.at4(b, hi, wi, ci) - mean).powi(2))
                        .sum::<f64>()
                        / n as f64;
                    total += var.sqrt();
                }
            }
        }
        let want = total / (h * w * c) as f64;
        worst = worst.max((y.at4(0, 0, 0, c) - want).abs());
    }
    if worst < 1e-12 {
        Ok(format!("matches scalar oracle to {worst:.2e}"))
    } else {
        Err(format!("max abs deviation {worst:.2e} >= 1e-12"))
    }
}

fn check_oracle_equalized_scale() -> Result<String, String> {
    let cases = [
        (1usize, 2usize, 1.0),
        (3, 16, (2.0f64 / 144.0).sqrt()),
        (4, 256, (2.0f64 / 4096.0).sqrt()),
        (3, 128, (2.0f64 / (9.0 * 128.0)).sqrt()),
    ];
    for (k, c, want) in cases {
        let got = nn::equalized_scale(k, c);
        if (got - want).abs() >= 1e-12 {
            return Err(format!("k={k} c={c}: {got} vs {want}"));
        }
    }
    Ok("matches closed form to 1e-12".into())
}

fn check_oracle_adam() -> Result<String, String> {
    let (lr, b1, b2, eps) = (3e-3, 0.5, 0.9, 1e-8);
    let mut adam = Adam::<f64>::new(lr, b1, b2, eps);
    let mut p = crate::nn::Parameter {
        name: "w".to_string(),
        value: Tensor::new(vec![2], vec![0.2, -0.4]).map_err(|e| e.to_string())?,
        fan_in: 1,
    };
    let grads = [[0.3, -0.1], [0.25, 0.5], [-0.7, 0.2]];
    let mut oracle = [0.2, -0.4];
    let (mut m, mut v) = ([0.0; 2], [0.0; 2]);
    for (t, g) in grads.iter().enumerate() {
        let gt = Tensor::new(vec![2], g.to_vec()).map_err(|e| e.to_string())?;
        adam.step(&mut [(&mut p, &gt)]).map_err(|e| e.to_string())?;
        for i in 0..2 {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let mh = m[i] / (1.0 - b1.powi(t as i32 + 1));
            let vh = v[i] / (1.0 - b2.powi(t as i32 + 1));
            oracle[i] -= lr * mh / (vh.sqrt() + eps);
        }
    }
    let worst = p
        .value
        .data()
        .iter()
        .zip(&oracle)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    if worst < 1e-12 {
        Ok(format!("matches scalar recurrence to {worst:.2e}"))
    } else {
        Err(format!("max abs deviation {worst:.2e} >= 1e-12"))
    }
}

fn check_oracle_normalize() -> Result<String, String> {
    for v in 0..=255u32 {
        let got = crate::data::normalize_u8(v as f64);
        let want = v as f64 / 127.5 - 1.0;
        if (got - want).abs() >= 1e-15 {
            return Err(format!("value {v}: {got} vs {want}"));
        }
    }
    if crate::data::normalize_u8(0.0) != -1.0 || crate::data::normalize_u8(255.0) != 1.0 {
        return Err("endpoints off".into());
    }
    Ok("8-bit mapping matches v / 127.5 - 1".into())
}

fn check_gp_unit_critic() -> Result<String, String> {
    let mut rng = Rng::seed_from_u64(107);
    let a = {
        let raw = Tensor::<f64>::randn(vec![1, 2, 2, 2], &mut rng);
        let norm = raw.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        Tensor::new(
            vec![1, 2, 2, 2],
            raw.data().iter().map(|v| v / norm).collect(),
        )
        .map_err(|e| e.to_string())?
    };
    let score = |x: &Var<f64>| {
        let av = x.tape().leaf(&a, false)?.broadcast_to(&x.shape())?;
        x.mul(&av)?.reduce_sum(&[1, 2, 3])
    };
    let tape = Tape::new();
    let real = Tensor::<f64>::randn(vec![3, 2, 2, 2], &mut rng);
    let fake = Tensor::<f64>::randn(vec![3, 2, 2, 2], &mut rng);
    let gp = wgan::gradient_penalty(&tape, &score, &real, &fake, 10.0, &mut rng)
        .map_err(|e| e.to_string())?;
    let value = gp.scalar().map_err(|e| e.to_string())?;
    if value.abs() < 1e-10 {
        Ok(format!("unit-gradient critic penalty {value:.2e}"))
    } else {
        Err(format!("penalty {value:.2e} >= 1e-10"))
    }
}

fn check_gp_analytic() -> Result<String, String> {
    let d = 4.0_f64;
    let mut rng = Rng::seed_from_u64(108);
    for c in [0.5, 1.0, 3.0] {
        let score = move |x: &Var<f64>| x.reduce_sum(&[1, 2, 3])?.scale(c);
        let tape = Tape::new();
        let real = Tensor::<f64>::randn(vec![2, 1, 1, 4], &mut rng);
        let fake = Tensor::<f64>::randn(vec![2, 1, 1, 4], &mut rng);
        let gp = wgan::gradient_penalty(&tape, &score, &real, &fake, 10.0, &mut rng)
            .map_err(|e| e.to_string())?;
        let want = 10.0 * (c * d.sqrt() - 1.0).powi(2);
        let got = gp.scalar().map_err(|e| e.to_string())?;
        if (got - want).abs() >= 1e-6 {
            return Err(format!("c={c}: {got} vs {want}"));
        }
    }
    Ok("matches lambda (|c| sqrt(d) - 1)^2 for c in {0.5, 1, 3}".into())
}

fn check_fade_generator() -> Result<String, String> {
    let plan = NetworkPlan::standard();
    let mut rng = Rng::seed_from_u64(109);
    let g0 = Generator::<f64>::build(&plan, 0, &mut rng).map_err(|e| e.to_string())?;
    let g1 = g0.grow(&mut rng).map_err(|e| e.to_string())?;
    let z = Tensor::<f64>::randn(vec![2, 1, 1, 256], &mut rng);
    let eval = |g: &Generator<f64>, phase: &PhaseState| -> Result<Tensor<f64>, String> {
        let tape = Tape::new();
        let zv = tape.leaf(&z, false).map_err(|e| e.to_string())?;
        Ok(g.bind(&tape, false)
            .and_then(|b| b.forward(&zv, phase))
            .map_err(|e| e.to_string())?
            .to_tensor())
    };
    let low = eval(&g0, &PhaseState::stable(0))?;
    let up_low = {
        let tape = Tape::new();
        let v = tape.leaf(&low, false).map_err(|e| e.to_string())?;
        v.upsample_nearest_2x()
            .map_err(|e| e.to_string())?
            .to_tensor()
    };
    let at0 = eval(&g1, &PhaseState::new(1, 0.0, 0).map_err(|e| e.to_string())?)?;
    let at1 = eval(&g1, &PhaseState::stable(1))?;
    let mid = eval(&g1, &PhaseState::new(1, 0.5, 0).map_err(|e| e.to_string())?)?;

    let d0 = at0.max_abs_diff(&up_low);
    if d0 >= 1e-6 {
        return Err(format!("alpha=0 deviates from upsampled lower output by {d0:.2e}"));
    }
    let mut mid_err: f64 = 0.0;
    for i in 0..mid.numel() {
        let avg = 0.5 * (at0.data()[i] + at1.data()[i]);
        mid_err = mid_err.max((mid.data()[i] - avg).abs());
    }
    if mid_err >= 1e-6 {
        return Err(format!("midpoint deviates from endpoint average by {mid_err:.2e}"));
    }
    Ok(format!(
        "endpoint err {d0:.2e}, midpoint err {mid_err:.2e}"
    ))
}

fn check_growth_transfer() -> Result<String, String> {
    let plan = NetworkPlan::standard();
    let mut rng = Rng::seed_from_u64(110);
    let g = Generator::<f32>::build(&plan, 1, &mut rng).map_err(|e| e.to_string())?;
    let grown = g.grow(&mut rng).map_err(|e| e.to_string())?;
    for p in g.parameters() {
        let now = grown
            .parameters()
            .into_iter()
            .find(|q| q.name == p.name)
            .ok_or_else(|| format!("parameter {} lost in growth", p.name))?;
        if !p
            .value
            .data()
            .iter()
            .zip(now.value.data())
            .all(|(a, b)| a.to_bits() == b.to_bits())
        {
            return Err(format!("parameter {} changed bits", p.name));
        }
    }
    Ok("transferred parameters are bit-identical".into())
}

fn check_schedule() -> Result<String, String> {
    let config = TrainingConfig::default();
    let mut levels = Vec::new();
    for epoch in 0..config.total_epochs {
        let p = schedule(epoch, &config).map_err(|e| e.to_string())?;
        if levels.last() != Some(&p.level) {
            levels.push(p.level);
        }
    }
    if levels != [0, 1, 2, 3, 4] {
        return Err(format!("level sequence {levels:?}"));
    }
    let last = schedule(99, &config).map_err(|e| e.to_string())?;
    if last.level != 4 || last.alpha != 1.0 {
        return Err(format!("end state level {} alpha {}", last.level, last.alpha));
    }
    Ok("5 levels over 4 growth steps, ending at 64x64 with alpha 1".into())
}

fn check_latent_moments() -> Result<String, String> {
    let mut rng = Rng::derive(123, &[0x534d_504c]);
    let n = 2000usize;
    let dims = 64usize;
    let mut sums = vec![0.0f64; dims];
    let mut sq = vec![0.0f64; dims];
    for _ in 0..n {
        for d in 0..dims {
            let z = rng.normal_f64();
            sums[d] += z;
            sq[d] += z * z;
        }
    }
    for d in 0..dims {
        let mean = sums[d] / n as f64;
        let std = (sq[d] / n as f64 - mean * mean).sqrt();
        if mean.abs() > 0.1 || !(0.9..=1.1).contains(&std) {
            return Err(format!("dim {d}: mean {mean:.3}, std {std:.3}"));
        }
    }
    Ok(format!("{dims} dims over {n} draws within quick bounds"))
}

/// Runs the whole suite. `fault` deliberately breaks one check so the
/// harness can prove it detects failures.
pub fn run_checks(fault: Option<Fault>) -> Vec<CheckOutcome> {
    vec![
        outcome("grad_elementwise_chain", check_grad_ops()),
        outcome("grad_layer_stack", check_grad_layers()),
        outcome("grad_critic_loss_level0", check_grad_critic()),
        outcome("table1_shape_conformance", check_table1_shapes()),
        outcome("oracle_pixelnorm", check_oracle_pixelnorm(fault)),
        outcome("oracle_minibatch_stddev", check_oracle_minibatch_stddev()),
        outcome("oracle_equalized_scale", check_oracle_equalized_scale()),
        outcome("oracle_adam", check_oracle_adam()),
        outcome("oracle_image_normalize", check_oracle_normalize()),
        outcome("gp_unit_critic_zero", check_gp_unit_critic()),
        outcome("gp_analytic_scaled_sum", check_gp_analytic()),
        outcome("fade_generator_contract", check_fade_generator()),
        outcome("growth_transfer_bitwise", check_growth_transfer()),
        outcome("schedule_default_run", check_schedule()),
        outcome("latent_moments_quick", check_latent_moments()),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fresh_build_passes_all_checks() {
        let results = run_checks(None);
        for r in &results {
            assert!(r.passed, "{}: {}", r.name, r.detail);
        }
        assert!(results.len() >= 12);
    }

    #[test]
    fn injected_fault_fails_the_named_check() {
        let results = run_checks(Some(Fault::PixelnormEpsZero));
        let pixelnorm = results
            .iter()
            .find(|r| r.name == "oracle_pixelnorm")
            .unwrap();
        assert!(!pixelnorm.passed, "fault injection must fail the check");
        assert!(results
            .iter()
            .filter(|r| r.name != "oracle_pixelnorm")
            .all(|r| r.passed));
    }

    #[test]
    fn fault_names_parse() {
        assert_eq!(
            Fault::parse("pixelnorm-eps-zero"),
            Some(Fault::PixelnormEpsZero)
        );
        assert_eq!(Fault::parse("bogus"), None);
    }
}
