//! Numerical gradient checking.
//!
//! Central finite differences evaluated through fresh forward passes; the
//! only thing shared with the autodiff engine is the forward code itself,
//! so this is an independent oracle for backward rules.

use crate::tensor::{Tape, Tensor, TensorError, Var};

/// Default step for f64 checks.
pub const FD_STEP: f64 = 1e-5;

/// Relative error with a small absolute floor so near-zero pairs compare
/// cleanly.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Result of one checked element.
#[derive(Debug, Clone)]
pub struct GradCheckFailure {
    pub input: usize,
    pub element: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

/// Compare autodiff gradients of `build` against central finite differences
/// for every element of every input. `build` must construct the scalar loss
/// from leaves made of the given tensors (in order) and be deterministic.
pub fn check_grads<F>(
    inputs: &[Tensor<f64>],
    build: F,
    h: f64,
    tol: f64,
) -> Result<(), Vec<GradCheckFailure>>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var, TensorError>,
{
    let eval = |tensors: &[Tensor<f64>]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = tensors.iter().map(|t| tape.leaf(t, false)).collect();
        let loss = build(&mut tape, &vars).expect("forward must succeed");
        tape.scalar_value(loss)
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t, true)).collect();
    let loss = build(&mut tape, &vars).expect("forward must succeed");
    tape.backward(loss).expect("backward must succeed");

    let mut failures = Vec::new();
    for (i, t) in inputs.iter().enumerate() {
        let analytic: Vec<f64> = tape
            .grad(vars[i])
            .map(|g| g.to_vec())
            .unwrap_or_else(|| vec![0.0; t.numel()]);
        for e in 0..t.numel() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[e] += h;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[e] -= h;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let re = rel_err(analytic[e], numeric);
            if re >= tol {
                failures.push(GradCheckFailure {
                    input: i,
                    element: e,
                    analytic: analytic[e],
                    numeric,
                    rel_err: re,
                });
            }
        }
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(failures)
    }
}

/// Like [`check_grads`] but only a deterministic sample of elements per
/// input, for larger tensors.
pub fn check_grads_sampled<F>(
    inputs: &[Tensor<f64>],
    build: F,
    h: f64,
    tol: f64,
    per_input: usize,
) -> Result<(), Vec<GradCheckFailure>>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var, TensorError>,
{
    let eval = |tensors: &[Tensor<f64>]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = tensors.iter().map(|t| tape.leaf(t, false)).collect();
        let loss = build(&mut tape, &vars).expect("forward must succeed");
        tape.scalar_value(loss)
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t, true)).collect();
    let loss = build(&mut tape, &vars).expect("forward must succeed");
    tape.backward(loss).expect("backward must succeed");

    let mut failures = Vec::new();
    for (i, t) in inputs.iter().enumerate() {
        let analytic: Vec<f64> = tape
            .grad(vars[i])
            .map(|g| g.to_vec())
            .unwrap_or_else(|| vec![0.0; t.numel()]);
        let n = t.numel();
        let stride = (n / per_input).max(1);
        for e in (0..n).step_by(stride) {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[e] += h;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[e] -= h;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let re = rel_err(analytic[e], numeric);
            if re >= tol {
                failures.push(GradCheckFailure {
                    input: i,
                    element: e,
                    analytic: analytic[e],
                    numeric,
                    rel_err: re,
                });
            }
        }
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(failures)
    }
}

/// Deterministic pseudo-random tensor for tests (splitmix64 driven).
pub fn test_tensor(shape: impl Into<Vec<usize>>, seed: u64) -> Tensor<f64> {
    let mut state = seed.wrapping_add(0x9E3779B97F4A7C15);
    Tensor::from_fn(shape, |_| {
        state = state.wrapping_add(0x9E3779B97F4A7C15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
        z ^= z >> 31;
        (z >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    })
}
