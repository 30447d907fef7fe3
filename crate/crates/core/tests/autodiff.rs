//! Algebraic properties of reverse mode on random tapes.

use proptest::prelude::*;
use structvae_core::{Tape, Tensor, Var};

/// A small random-ish composite of several ops; both losses share `x`.
fn two_losses(t: &mut Tape, x: Var, w: Var) -> (Var, Var) {
    let h = t.matmul(x, w).unwrap();
    let a = t.softplus(h);
    let b = t.sigmoid(h);
    let ab = t.mul(a, b).unwrap();
    let l1 = t.sum(ab);
    let ls = t.log_softmax(h).unwrap();
    let e = t.exp(ls).unwrap();
    let r = t.relu(e);
    let l2 = t.sum(r);
    let sq = t.mul(h, h).unwrap();
    let l2b = t.sum(sq);
    let l2 = t.add(l2, l2b).unwrap();
    (l1, l2)
}

fn tensor(v: &[f64], r: usize, c: usize) -> Tensor {
    Tensor::new([r, c], v.to_vec()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn backward_is_linear(
        xs in prop::collection::vec(-2.0f64..2.0, 6),
        ws in prop::collection::vec(-2.0f64..2.0, 12),
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
    ) {
        let mut t = Tape::new();
        let x = t.leaf(tensor(&xs, 2, 3));
        let w = t.leaf(tensor(&ws, 3, 4));
        let (l1, l2) = two_losses(&mut t, x, w);
        let s1 = t.scale(l1, a);
        let s2 = t.scale(l2, b);
        let combo = t.add(s1, s2).unwrap();

        let g1 = t.backward(l1).unwrap();
        let g2 = t.backward(l2).unwrap();
        let gc = t.backward(combo).unwrap();
        for v in [x, w] {
            let (p, q, c) = (g1.get(v).unwrap(), g2.get(v).unwrap(), gc.get(v).unwrap());
            for i in 0..c.data().len() {
                let want = a * p.data()[i] + b * q.data()[i];
                prop_assert!((c.data()[i] - want).abs() <= 1e-10 * (1.0 + want.abs()));
            }
        }
    }

    #[test]
    fn replay_is_bitwise_identical(
        xs in prop::collection::vec(-2.0f64..2.0, 6),
        ws in prop::collection::vec(-2.0f64..2.0, 12),
    ) {
        let mut t = Tape::new();
        let x = t.leaf(tensor(&xs, 2, 3));
        let w = t.leaf(tensor(&ws, 3, 4));
        let (l1, l2) = two_losses(&mut t, x, w);
        let total = t.add(l1, l2).unwrap();
        let first = t.backward(total).unwrap();
        let second = t.backward(total).unwrap();
        for v in [x, w] {
            let (a, b) = (first.get(v).unwrap(), second.get(v).unwrap());
            prop_assert!(a.data().iter().zip(b.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
        }
    }

    #[test]
    fn log_softmax_rows_normalise(logits in prop::collection::vec(-50.0f64..50.0, 12)) {
        let mut t = Tape::new();
        let l = t.constant(tensor(&logits, 3, 4));
        let ls = t.log_softmax(l).unwrap();
        for r in 0..3 {
            let s: f64 = t.value(ls).row(r).iter().map(|v| v.exp()).sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn untouched_leaf_gets_zero_gradient() {
    let mut t = Tape::new();
    let x = t.leaf(Tensor::vector(vec![1.0, 2.0]).unwrap());
    let unused = t.leaf(Tensor::vector(vec![5.0, 6.0, 7.0]).unwrap());
    let loss = t.sum(x);
    let g = t.backward(loss).unwrap();
    assert_eq!(g.get(unused).unwrap().data(), &[0.0, 0.0, 0.0]);
    assert_eq!(g.get(x).unwrap().data(), &[1.0, 1.0]);
}

#[test]
fn non_scalar_loss_is_rejected() {
    let mut t = Tape::new();
    let x = t.leaf(Tensor::vector(vec![1.0, 2.0]).unwrap());
    assert!(t.backward(x).is_err());
}

#[test]
fn log_softmax_survives_extreme_logits() {
    let mut t = Tape::new();
    let l = t.constant(Tensor::new([1, 2], vec![1000.0, 0.0]).unwrap());
    let ls = t.log_softmax(l).unwrap();
    let v = t.value(ls).data();
    assert!(v[0].abs() < 1e-300 && (v[1] + 1000.0).abs() < 1e-9);
}
