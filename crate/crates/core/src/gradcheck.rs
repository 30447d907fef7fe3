//! Central finite-difference checks of the tape's backward rules.
//!
//! The numeric side only ever evaluates forward values on fresh tapes, so it
//! stays independent of the backward code it audits.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::model::{Batch, Bound, EstimatorMode, ModelSpec, StructuredVAE, StyleNoise};
use crate::tape::{OpKind, Tape, Var};
use crate::tensor::{Shape, Tensor};

/// Step used for every central difference.
pub const FD_STEP: f64 = 1e-5;

/// Magnitude below which errors are measured absolutely rather than
/// relative to the gradient size.
pub const REL_ERR_FLOOR: f64 = 1e-4;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Worst relative error between the tape gradient of `f` and central
/// differences, over every element of every input.
///
/// `f` receives a fresh tape and one tracked leaf per input, and must return
/// a single-element loss.
pub fn check<F>(inputs: &[Tensor], f: F, fault: Option<OpKind>) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    if let Some(kind) = fault {
        tape.inject_backward_fault(kind);
    }
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;

    let eval = |inputs: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let loss = f(&mut tape, &vars)?;
        Ok(tape.value(loss).item())
    };

    let mut worst = 0.0f64;
    let mut probe = inputs.to_vec();
    for (which, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var).expect("leaf gradient").data().to_vec();
        for (i, &a) in analytic.iter().enumerate() {
            let orig = probe[which].data()[i];
            probe[which].data_mut()[i] = orig + FD_STEP;
            let up = eval(&probe)?;
            probe[which].data_mut()[i] = orig - FD_STEP;
            let down = eval(&probe)?;
            probe[which].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(a, numeric));
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OpCheck {
    pub op: OpKind,
    pub worst_rel_err: f64,
}

fn uniform(rng: &mut ChaCha8Rng, shape: impl Into<Shape>, lo: f64, hi: f64) -> Tensor {
    let shape = shape.into();
    let data = (0..shape.numel()).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::new(shape, data).expect("shape matches data")
}

/// Away from the relu kink so a finite step never straddles it.
fn uniform_off_zero(rng: &mut ChaCha8Rng, shape: impl Into<Shape>) -> Tensor {
    let mut t = uniform(rng, shape, -2.0, 2.0);
    for v in t.data_mut() {
        if v.abs() < 0.05 {
            *v = if *v < 0.0 { -0.05 } else { 0.05 };
        }
    }
    t
}

/// Contracts an op output against fixed random weights so every output
/// element contributes a distinct gradient.
fn contract(tape: &mut Tape, out: Var, weights: &Tensor) -> Result<Var> {
    let w = tape.constant(weights.clone());
    let prod = tape.mul(out, w)?;
    Ok(tape.sum(prod))
}

/// Runs one finite-difference check per differentiable op on random inputs
/// in [-2, 2] (positive inputs for `log`).
pub fn op_suite(seed: u64, fault: Option<OpKind>) -> Result<Vec<OpCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = Vec::with_capacity(OpKind::DIFFERENTIABLE.len());
    for op in OpKind::DIFFERENTIABLE {
        let worst = check_op(op, &mut rng, fault)?;
        report.push(OpCheck {
            op,
            worst_rel_err: worst,
        });
    }
    Ok(report)
}

fn check_op(op: OpKind, rng: &mut ChaCha8Rng, fault: Option<OpKind>) -> Result<f64> {
    let w34 = uniform(rng, [3, 4], -2.0, 2.0);
    match op {
        OpKind::MatMul => {
            let a = uniform(rng, [3, 5], -2.0, 2.0);
            let b = uniform(rng, [5, 4], -2.0, 2.0);
            check(&[a, b], |t, v| {
                let o = t.matmul(v[0], v[1])?;
                contract(t, o, &w34)
            }, fault)
        }
        OpKind::Add | OpKind::Sub | OpKind::Mul => {
            let a = uniform(rng, [3, 4], -2.0, 2.0);
            let b = uniform(rng, [3, 4], -2.0, 2.0);
            let s = uniform(rng, [1], -2.0, 2.0);
            let binary = move |t: &mut Tape, x: Var, y: Var| match op {
                OpKind::Add => t.add(x, y),
                OpKind::Sub => t.sub(x, y),
                _ => t.mul(x, y),
            };
            // equal shapes, then scalar on either side
            let full = check(&[a.clone(), b], |t, v| {
                let o = binary(t, v[0], v[1])?;
                contract(t, o, &w34)
            }, fault)?;
            let bcast = check(&[a, s], |t, v| {
                let o = binary(t, v[0], v[1])?;
                let o2 = binary(t, v[1], o)?;
                contract(t, o2, &w34)
            }, fault)?;
            Ok(full.max(bcast))
        }
        OpKind::Exp | OpKind::Relu | OpKind::Sigmoid | OpKind::Softplus => {
            let a = uniform_off_zero(rng, [3, 4]);
            check(&[a], |t, v| {
                let o = match op {
                    OpKind::Exp => t.exp(v[0])?,
                    OpKind::Relu => t.relu(v[0]),
                    OpKind::Sigmoid => t.sigmoid(v[0]),
                    _ => t.softplus(v[0]),
                };
                contract(t, o, &w34)
            }, fault)
        }
        OpKind::Log => {
            let a = uniform(rng, [3, 4], 0.1, 2.0);
            check(&[a], |t, v| {
                let o = t.log(v[0])?;
                contract(t, o, &w34)
            }, fault)
        }
        OpKind::LogSoftmax => {
            let a = uniform(rng, [3, 4], -2.0, 2.0);
            check(&[a], |t, v| {
                let o = t.log_softmax(v[0])?;
                contract(t, o, &w34)
            }, fault)
        }
        OpKind::AddBias => {
            let a = uniform(rng, [3, 4], -2.0, 2.0);
            let b = uniform(rng, [4], -2.0, 2.0);
            check(&[a, b], |t, v| {
                let o = t.add_bias(v[0], v[1])?;
                contract(t, o, &w34)
            }, fault)
        }
        OpKind::SumRows => {
            let a = uniform(rng, [3, 4], -2.0, 2.0);
            let w3 = uniform(rng, [3], -2.0, 2.0);
            check(&[a], |t, v| {
                let o = t.sum_rows(v[0])?;
                contract(t, o, &w3)
            }, fault)
        }
        OpKind::Sum => {
            let a = uniform(rng, [3, 4], -2.0, 2.0);
            check(&[a], |t, v| {
                let s = t.sum(v[0]);
                // square so the gradient depends on the input
                t.mul(s, s)
            }, fault)
        }
        OpKind::Scale => {
            let a = uniform(rng, [3, 4], -2.0, 2.0);
            let c = rng.random_range(-2.0..2.0);
            check(&[a], |t, v| {
                let o = t.scale(v[0], c);
                contract(t, o, &w34)
            }, fault)
        }
        OpKind::ConcatCols => {
            let a = uniform(rng, [3, 1], -2.0, 2.0);
            let b = uniform(rng, [3, 3], -2.0, 2.0);
            check(&[a, b], |t, v| {
                let o = t.concat_cols(v[0], v[1])?;
                contract(t, o, &w34)
            }, fault)
        }
        OpKind::SliceCols => {
            let a = uniform(rng, [3, 6], -2.0, 2.0);
            check(&[a], |t, v| {
                let o = t.slice_cols(v[0], 1, 4)?;
                contract(t, o, &w34)
            }, fault)
        }
        OpKind::Reshape => {
            let a = uniform(rng, [4, 3], -2.0, 2.0);
            check(&[a], |t, v| {
                let o = t.reshape(v[0], [3, 4])?;
                contract(t, o, &w34)
            }, fault)
        }
        OpKind::Leaf => Ok(0.0),
    }
}

/// A small model with every parameter (output layers included) drawn from
/// `U(-1, 1)`, so no gradient is structurally zero.
pub fn random_tiny_model(
    seed: u64,
    spec: ModelSpec,
) -> Result<StructuredVAE> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = spec
        .param_shapes()
        .iter()
        .map(|&[r, c]| {
            if r == 1 {
                uniform(&mut rng, [c], -1.0, 1.0)
            } else {
                uniform(&mut rng, [r, c], -1.0, 1.0)
            }
        })
        .collect();
    StructuredVAE::from_params(spec, params)
}

/// Four-pixel, two-class, one-dimensional-style model with three hidden
/// units.
pub fn tiny_spec(estimator: EstimatorMode) -> ModelSpec {
    ModelSpec {
        input_dim: 4,
        num_classes: 2,
        style_dim: 1,
        hidden_width: 3,
        estimator,
        classifier_weight: 0.7,
    }
}

/// Finite-difference check of the full semi-supervised objective with
/// respect to every parameter of a random tiny model, on a batch mixing
/// labelled and unlabelled rows.
pub fn model_check(seed: u64, estimator: EstimatorMode, fault: Option<OpKind>) -> Result<f64> {
    let spec = tiny_spec(estimator);
    let model = random_tiny_model(seed, spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let x = uniform(&mut rng, [4, spec.input_dim], 0.0, 1.0);
    let batch = Batch {
        x,
        labels: alloc::vec![Some(1), None, Some(0), None],
    };
    let noise = StyleNoise::draw(&mut rng, 4, &spec);
    check(
        model.params(),
        |tape, vars| {
            let vars: [Var; 12] = vars.try_into().expect("twelve parameters");
            let bound = Bound::from_vars(tape, spec, vars)?;
            let (_, loss) = bound.total_objective(tape, &batch, &noise)?;
            Ok(loss)
        },
        fault,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_op_passes() {
        for seed in 0..5 {
            for c in op_suite(seed, None).unwrap() {
                assert!(c.worst_rel_err < 1e-5, "{} seed {seed}: {}", c.op.name(), c.worst_rel_err);
            }
        }
    }

    #[test]
    fn injected_fault_is_detected() {
        for op in OpKind::DIFFERENTIABLE {
            let report = op_suite(7, Some(op)).unwrap();
            let hit = report.iter().find(|c| c.op == op).unwrap();
            assert!(hit.worst_rel_err > 1e-2, "{} fault missed", op.name());
        }
    }

    #[test]
    fn full_model_gradients_match_fd() {
        for estimator in [EstimatorMode::Plugin, EstimatorMode::Marginalize] {
            for seed in 0..3 {
                let err = model_check(seed, estimator, None).unwrap();
                assert!(err < 1e-4, "{estimator:?} seed {seed}: {err}");
            }
        }
    }

    #[test]
    fn matmul_sum_gradient_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = uniform(&mut rng, [2, 3], -2.0, 2.0);
        let b = uniform(&mut rng, [3, 2], -2.0, 2.0);
        let err = check(&[a, b], |t, v| {
            let o = t.matmul(v[0], v[1])?;
            Ok(t.sum(o))
        }, None)
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn softplus_slope_at_zero() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(0.0));
        let y = t.softplus(x);
        let g = t.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().item(), 0.5);
        let fd = (crate::tape::softplus(FD_STEP) - crate::tape::softplus(-FD_STEP)) / (2.0 * FD_STEP);
        assert!((fd - 0.5).abs() < 1e-9);
    }
}
