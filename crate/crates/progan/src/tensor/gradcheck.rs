//! Finite-difference verification of tape gradients.

use super::{Real, Tape, Tensor, TensorError, Var};

/// Outcome of one gradient check.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Largest relative error over all input elements.
    pub max_rel_err: f64,
    /// Flat index where it occurred.
    pub worst_index: usize,
    /// Tape gradient and central-difference estimate at that index.
    pub tape_grad: f64,
    pub numeric_grad: f64,
}

impl GradCheckReport {
    pub fn within(&self, tolerance: f64) -> bool {
        self.max_rel_err < tolerance
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / f64::max(1.0, f64::max(a.abs(), b.abs()))
}

/// Compares the tape gradient of a scalar-valued function against central
/// finite differences with step `h` (use double precision and small inputs).
///
/// The function is re-evaluated 2n times, so keep inputs to ~1e3 elements.
pub fn grad_check<F>(f: F, x: &Tensor<f64>, h: f64) -> Result<GradCheckReport, TensorError>
where
    F: Fn(&Tape<f64>, &Var<f64>) -> Result<Var<f64>, TensorError>,
{
    let tape = Tape::new();
    let xv = tape.leaf(x, true)?;
    let y = f(&tape, &xv)?;
    let grads = y.sum_all()?.backward()?;
    let g = grads
        .get_tensor(&xv)
        .ok_or(TensorError::DetachedGraph)?;

    let eval = |probe: &Tensor<f64>| -> Result<f64, TensorError> {
        let tape = Tape::new();
        let xv = tape.leaf(probe, false)?;
        let y = f(&tape, &xv)?;
        y.sum_all()?.scalar()
    };

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_index: 0,
        tape_grad: 0.0,
        numeric_grad: 0.0,
    };
    let mut probe = x.clone();
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let plus = eval(&probe)?;
        probe.data_mut()[i] = orig - h;
        let minus = eval(&probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * h);
        let err = rel_err(g.data()[i], numeric);
        if err >= report.max_rel_err {
            report.max_rel_err = err;
            report.worst_index = i;
            report.tape_grad = g.data()[i];
            report.numeric_grad = numeric;
        }
    }
    Ok(report)
}

// Element type re-exported for callers writing generic check helpers.
#[allow(unused)]
fn _assert_real_bounds<E: Real>() {}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    const STEP: f64 = 1e-4;

    #[test]
    fn sum_has_exact_gradient() {
        let mut rng = Rng::seed_from_u64(1);
        let x = Tensor::<f64>::randn(vec![3, 4], &mut rng);
        let report = grad_check(|_, v| v.sum_all(), &x, STEP).unwrap();
        assert!(report.within(1e-8), "{report:?}");
    }

    #[test]
    fn elementwise_chain_matches_differences() {
        let mut rng = Rng::seed_from_u64(2);
        for _ in 0..20 {
            let x = Tensor::<f64>::from_fn(vec![2, 3], |_| rng.normal_f64() + 3.0);
            let report = grad_check(
                |_, v| {
                    let s = v.sqrt()?.mul(v)?;
                    s.div(&v.add_scalar(5.0)?)?.mean_all()
                },
                &x,
                STEP,
            )
            .unwrap();
            assert!(report.within(1e-6), "{report:?}");
        }
    }

    #[test]
    fn conv_gradients_match_differences() {
        let mut rng = Rng::seed_from_u64(3);
        let x = Tensor::<f64>::randn(vec![1, 3, 3, 1], &mut rng);
        let w = Tensor::<f64>::full(vec![3, 3, 1, 1], 1.0);
        // 3x3 all-ones kernel without padding: output equals sum of inputs
        let report = grad_check(
            move |tape, v| {
                let wv = tape.leaf(&w, false)?;
                v.conv2d(&wv, 0)?.sum_all()
            },
            &x,
            STEP,
        )
        .unwrap();
        assert!(report.within(1e-6), "{report:?}");
    }

    #[test]
    fn leaky_relu_gradient_at_negative_input() {
        let x = Tensor::<f64>::full(vec![1], -3.0);
        let report = grad_check(|_, v| v.leaky_relu(0.2)?.sum_all(), &x, STEP).unwrap();
        assert!(report.within(1e-8), "{report:?}");
        assert!((report.tape_grad - 0.2).abs() < 1e-12);
    }

    #[test]
    fn coarse_step_degrades_the_estimate() {
        // harness sanity: a curved function checked with a huge step must
        // report a visibly larger error than with the standard step
        let x = Tensor::<f64>::full(vec![1], 0.7);
        let f = |_: &Tape<f64>, v: &Var<f64>| v.powf_const(5.0)?.sum_all();
        let fine = grad_check(f, &x, STEP).unwrap();
        let coarse = grad_check(f, &x, 0.25).unwrap();
        assert!(coarse.max_rel_err > fine.max_rel_err * 100.0);
    }
}
