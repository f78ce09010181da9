//! Shows the gradient penalty matching its closed forms on linear critics,
//! then differentiates the penalty itself with respect to a critic weight.
//!
//! ```text
//! cargo run --release --example gradient_penalty
//! ```

use progan::rng::Rng;
use progan::tensor::{Tape, Tensor, Var};
use progan::wgan;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let lambda = 10.0;
    let d = 4.0_f64;
    let mut rng = Rng::seed_from_u64(1);
    let real = Tensor::<f64>::randn(vec![8, 1, 1, 4], &mut rng);
    let fake = Tensor::<f64>::randn(vec![8, 1, 1, 4], &mut rng);

    // D(x) = c * sum(x): the input gradient has norm |c| sqrt(d) everywhere,
    // so the penalty is exactly lambda (|c| sqrt(d) - 1)^2
    println!("critic D(x) = c * sum(x) over {d} inputs, lambda = {lambda}");
    for c in [0.25, 1.0 / d.sqrt(), 1.0, 3.0] {
        let score = move |x: &Var<f64>| x.reduce_sum(&[1, 2, 3])?.scale(c);
        let tape = Tape::new();
        let gp = wgan::gradient_penalty(&tape, &score, &real, &fake, lambda, &mut rng)?;
        let want = lambda * (c * d.sqrt() - 1.0).powi(2);
        println!(
            "  c = {c:<8.4} penalty = {:<12.6} closed form = {want:<12.6}",
            gp.scalar()?
        );
    }

    // the penalty is differentiable in the critic's parameters: for a
    // trainable c, d gp / dc = 2 lambda (c sqrt(d) - 1) sqrt(d)
    let c0 = 0.8;
    let tape = Tape::new();
    let cv = tape.leaf(&Tensor::scalar(c0), true)?;
    let score = {
        let cv = cv.clone();
        move |x: &Var<f64>| {
            let s = x.reduce_sum(&[1, 2, 3])?;
            let cb = cv.reshape(&[1, 1, 1, 1])?.broadcast_to(&s.shape())?;
            s.mul(&cb)
        }
    };
    let gp = wgan::gradient_penalty(&tape, &score, &real, &fake, lambda, &mut rng)?;
    let grad = gp.backward()?.get_tensor(&cv).expect("gradient for c");
    let analytic = 2.0 * lambda * (c0 * d.sqrt() - 1.0) * d.sqrt();
    println!("\nd penalty / dc at c = {c0}: tape {:.6}, analytic {analytic:.6}", grad.data()[0]);
    Ok(())
}
