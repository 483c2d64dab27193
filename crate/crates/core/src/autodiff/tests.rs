use super::*;
use crate::{Error, Result};
use crate::geom::RotationMode;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn t(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    t(shape, &(0..n).map(|_| rng.random_range(lo..hi)).collect::<Vec<_>>())
}

/// Fixed random weights so the checked scalar depends on every output entry.
fn weighted_sum(tape: &mut Tape, y: Var, seed: u64) -> Result<Var> {
    let shape = tape.value(y).shape().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = tape.constant(random(&mut rng, &shape, -1.0, 1.0));
    let prod = tape.mul(y, w)?;
    tape.sum(prod)
}

const SHAPES: [&[usize]; 3] = [&[3, 4], &[5, 2], &[1, 7]];

#[test]
fn matmul_examples() {
    let mut tape = Tape::new();
    let i2 = tape.constant(Tensor::identity(2));
    let m = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let p = tape.matmul(i2, m).unwrap();
    assert_eq!(tape.value(p).data(), &[1.0, 2.0, 3.0, 4.0]);
    let c = tape.constant(t(&[2, 1], &[5.0, 6.0]));
    let q = tape.matmul(m, c).unwrap();
    assert_eq!(tape.value(q).data(), &[17.0, 39.0]);
    assert_eq!(tape.value(q).shape(), &[2, 1]);
}

#[test]
fn matmul_rejects_inner_mismatch() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::zeros(vec![2, 3]));
    let b = tape.constant(Tensor::zeros(vec![2, 3]));
    let err = tape.matmul(a, b).unwrap_err();
    assert!(err.to_string().contains("[2x3] · [2x3]"), "{err}");
}

#[test]
fn matmul_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let b = random(&mut rng, &[4, 2], -1.0, 1.0);
    let a = random(&mut rng, &[3, 4], -1.0, 1.0);
    let report = grad_check(
        |tape, x| {
            let bv = tape.constant(b.clone());
            let y = tape.matmul(x, bv)?;
            tape.sum(y)
        },
        &a,
        1e-5,
        1e-6,
    )
    .unwrap();
    assert!(report.passed, "max rel {}", report.max_rel_error);

    // and with respect to the right operand, on other shapes
    for (n, k, p) in [(2, 3, 5), (1, 4, 1), (6, 2, 3)] {
        let lhs = random(&mut rng, &[n, k], -1.0, 1.0);
        let rhs = random(&mut rng, &[k, p], -1.0, 1.0);
        let report = grad_check(
            |tape, x| {
                let l = tape.constant(lhs.clone());
                let y = tape.matmul(l, x)?;
                weighted_sum(tape, y, 9)
            },
            &rhs,
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.passed, "max rel {}", report.max_rel_error);
    }
}

#[test]
fn elementwise_examples() {
    let mut tape = Tape::new();
    let one = tape.constant(Tensor::vector(vec![1.0]).unwrap());
    let l = tape.log(one).unwrap();
    assert_eq!(tape.value(l).data(), &[0.0]);

    let a = tape.constant(Tensor::vector(vec![2.0, 3.0]).unwrap());
    let b = tape.constant(Tensor::vector(vec![4.0, 5.0]).unwrap());
    let p = tape
        .elementwise(ElementwiseKind::Mul, a, Some(b))
        .unwrap();
    assert_eq!(tape.value(p).data(), &[8.0, 15.0]);

    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::vector(vec![0.5, 2.0]).unwrap());
    let lx = tape.log(x).unwrap();
    let s = tape.sum(lx).unwrap();
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap().data(), &[2.0, 0.5]);
}

#[test]
fn elementwise_domain_errors_name_the_index() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::vector(vec![1.0, 0.0, 2.0]).unwrap());
    match tape.log(x) {
        Err(Error::Domain { op, index, .. }) => {
            assert_eq!(op, "log");
            assert_eq!(index, 1);
        }
        other => panic!("expected domain error, got {other:?}"),
    }
    let z = tape.constant(Tensor::vector(vec![2.0, 0.0, 1.0]).unwrap());
    assert!(matches!(
        tape.div(x, z),
        Err(Error::Domain { index: 1, .. })
    ));
    let wrong = tape.constant(Tensor::vector(vec![1.0, 2.0]).unwrap());
    assert!(matches!(tape.add(x, wrong), Err(Error::Shape { .. })));
    assert!(tape.elementwise(ElementwiseKind::Add, x, None).is_err());
}

#[test]
fn elementwise_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for shape in SHAPES {
        let other = random(&mut rng, shape, 0.5, 2.0);
        let x = random(&mut rng, shape, 0.5, 2.0);
        for kind in [
            ElementwiseKind::Add,
            ElementwiseKind::Sub,
            ElementwiseKind::Mul,
            ElementwiseKind::Div,
        ] {
            // x as left operand, then as right operand
            for left in [true, false] {
                let report = grad_check(
                    |tape, xv| {
                        let o = tape.constant(other.clone());
                        let y = if left {
                            tape.elementwise(kind, xv, Some(o))?
                        } else {
                            tape.elementwise(kind, o, Some(xv))?
                        };
                        weighted_sum(tape, y, 3)
                    },
                    &x,
                    1e-5,
                    1e-4,
                )
                .unwrap();
                assert!(report.passed, "{kind:?} {shape:?} {}", report.max_rel_error);
            }
        }
        for kind in [ElementwiseKind::Log, ElementwiseKind::Exp, ElementwiseKind::Neg] {
            let report = grad_check(
                |tape, xv| {
                    let y = tape.elementwise(kind, xv, None)?;
                    weighted_sum(tape, y, 4)
                },
                &x,
                1e-5,
                1e-4,
            )
            .unwrap();
            assert!(report.passed, "{kind:?} {shape:?} {}", report.max_rel_error);
        }
    }
}

#[test]
fn scalar_broadcast_gradient_sums() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random(&mut rng, &[3, 3], -1.0, 1.0);
    let report = grad_check(
        |tape, s| {
            let xv = tape.constant(x.clone());
            let y = tape.mul(xv, s)?;
            let y = tape.div(y, s)?;
            let y = tape.sub(y, s)?;
            weighted_sum(tape, y, 5)
        },
        &Tensor::scalar(1.7),
        1e-5,
        1e-4,
    )
    .unwrap();
    assert!(report.passed, "{}", report.max_rel_error);
}

#[test]
fn leaky_relu_examples() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::vector(vec![-1.0, 0.0, 2.0]).unwrap());
    let y = tape.leaky_relu(x, 0.2).unwrap();
    assert_eq!(tape.value(y).data(), &[-0.2, 0.0, 2.0]);

    let z = tape.constant(Tensor::vector(vec![-5.0]).unwrap());
    let r = tape.leaky_relu(z, 0.0).unwrap();
    assert_eq!(tape.value(r).data(), &[0.0]);

    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::vector(vec![-1.0, 2.0]).unwrap());
    let y = tape.leaky_relu(x, 0.2).unwrap();
    let s = tape.sum(y).unwrap();
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap().data(), &[0.2, 1.0]);

    assert!(tape.leaky_relu(x, 1.0).is_err());
    assert!(tape.leaky_relu(x, -0.1).is_err());
}

#[test]
fn leaky_relu_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for shape in SHAPES {
        // keep entries away from the kink so differences do not straddle it
        let mut x = random(&mut rng, shape, 0.1, 1.0);
        for (i, v) in x.data_mut().iter_mut().enumerate() {
            if i % 2 == 0 {
                *v = -*v;
            }
        }
        let report = grad_check(
            |tape, xv| {
                let y = tape.leaky_relu(xv, 0.2)?;
                weighted_sum(tape, y, 6)
            },
            &x,
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.passed);
    }
}

#[test]
fn softmax_examples() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::vector(vec![0.0, 0.0]).unwrap());
    let pa = tape.softmax(a).unwrap();
    assert_eq!(tape.value(pa).data(), &[0.5, 0.5]);

    let b = tape.constant(Tensor::vector(vec![1.0, 2.0, 3.0]).unwrap());
    let pb = tape.softmax(b).unwrap();
    // e^{k-3} / (e^{-2} + e^{-1} + 1), evaluated independently
    let z = (-2.0f64).exp() + (-1.0f64).exp() + 1.0;
    let expected = [(-2.0f64).exp() / z, (-1.0f64).exp() / z, 1.0 / z];
    for (got, want) in tape.value(pb).data().iter().zip(expected) {
        assert!((got - want).abs() < 1e-15);
    }
    for (got, want) in tape
        .value(pb)
        .data()
        .iter()
        .zip([0.090031, 0.244728, 0.665241])
    {
        assert!((got - want).abs() < 5e-7);
    }

    let c = tape.constant(Tensor::vector(vec![1000.0, 1000.0]).unwrap());
    let pc = tape.softmax(c).unwrap();
    assert_eq!(tape.value(pc).data(), &[0.5, 0.5]);
}

#[test]
fn softmax_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for shape in [&[4][..], &[9], &[1, 6]] {
        let x = random(&mut rng, shape, -2.0, 2.0);
        let report = grad_check(
            |tape, xv| {
                let y = tape.softmax(xv)?;
                weighted_sum(tape, y, 7)
            },
            &x,
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.passed, "{}", report.max_rel_error);
    }
}

#[test]
fn reduce_max_examples() {
    let mut tape = Tape::new();
    let x = tape.leaf(t(&[2, 2], &[1.0, 5.0, 3.0, 2.0]));
    let y = tape.reduce_max(x).unwrap();
    assert_eq!(tape.value(y).data(), &[3.0, 5.0]);
    assert_eq!(tape.value(y).shape(), &[2]);
    let s = tape.sum(y).unwrap();
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap().data(), &[0.0, 1.0, 1.0, 0.0]);

    let single = tape.constant(t(&[1, 2], &[7.0, 8.0]));
    let ys = tape.reduce_max(single).unwrap();
    assert_eq!(tape.value(ys).data(), &[7.0, 8.0]);

    let vector = tape.constant(Tensor::vector(vec![1.0]).unwrap());
    assert!(tape.reduce_max(vector).is_err());
}

#[test]
fn reduce_max_ties_route_to_lowest_row() {
    let mut tape = Tape::new();
    let x = tape.leaf(t(&[3, 1], &[4.0, 4.0, 4.0]));
    let y = tape.reduce_max(x).unwrap();
    let s = tape.sum(y).unwrap();
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap().data(), &[1.0, 0.0, 0.0]);
}

#[test]
fn segment_max_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for (rows, cols, group) in [(6, 3, 2), (8, 2, 4), (5, 4, 5)] {
        let x = random(&mut rng, &[rows, cols], -1.0, 1.0);
        let report = grad_check(
            |tape, xv| {
                let y = tape.segment_max(xv, group)?;
                weighted_sum(tape, y, 8)
            },
            &x,
            1e-6,
            1e-4,
        )
        .unwrap();
        assert!(report.passed);
    }
}

#[test]
fn gather_max_equals_gather_then_segment_max() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let x = random(&mut rng, &[7, 3], -1.0, 1.0);
    let index: Vec<usize> = (0..20).map(|_| rng.random_range(0..7)).collect();
    let w = random(&mut rng, &[5, 3], -1.0, 1.0);
    let run = |fused: bool| {
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone());
        let y = if fused {
            tape.gather_max(xv, &index, 4).unwrap()
        } else {
            let g = tape.gather_rows(xv, &index).unwrap();
            tape.segment_max(g, 4).unwrap()
        };
        let wv = tape.constant(w.clone());
        let p = tape.mul(y, wv).unwrap();
        let s = tape.sum(p).unwrap();
        tape.backward(s).unwrap();
        (tape.value(y).clone(), tape.grad(xv).unwrap())
    };
    assert_eq!(run(true), run(false));
}

#[test]
fn gather_max_gradient_and_errors() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let x = random(&mut rng, &[6, 2], -1.0, 1.0);
    let index = [0, 3, 5, 1, 1, 2, 4, 0, 5];
    let report = grad_check(
        |tape, xv| {
            let y = tape.gather_max(xv, &index, 3)?;
            weighted_sum(tape, y, 9)
        },
        &x,
        1e-6,
        1e-4,
    )
    .unwrap();
    assert!(report.passed);
    let mut tape = Tape::new();
    let xv = tape.constant(x);
    assert!(tape.gather_max(xv, &[0, 1], 3).is_err());
    assert!(tape.gather_max(xv, &[0, 6], 2).is_err());
    assert!(tape.gather_max(xv, &[], 1).is_err());
}

#[test]
fn concat_examples_and_gradient_split() {
    let mut tape = Tape::new();
    let a = tape.leaf(t(&[2, 1], &[1.0, 2.0]));
    let b = tape.leaf(t(&[2, 1], &[3.0, 4.0]));
    let c = tape.concat(&[a, b]).unwrap();
    assert_eq!(tape.value(c).shape(), &[2, 2]);
    assert_eq!(tape.value(c).data(), &[1.0, 3.0, 2.0, 4.0]);

    let only = tape.concat(&[a]).unwrap();
    assert_eq!(tape.value(only), tape.value(a));

    // concat then split recovers the parts
    let left = tape.slice_last(c, 0, 1).unwrap();
    let right = tape.slice_last(c, 1, 1).unwrap();
    assert_eq!(tape.value(left), tape.value(a));
    assert_eq!(tape.value(right), tape.value(b));

    let w = tape.constant(t(&[2, 2], &[1.0, 10.0, 100.0, 1000.0]));
    let prod = tape.mul(c, w).unwrap();
    let s = tape.sum(prod).unwrap();
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(a).unwrap().data(), &[1.0, 100.0]);
    assert_eq!(tape.grad(b).unwrap().data(), &[10.0, 1000.0]);

    let bad = tape.constant(t(&[3, 1], &[0.0; 3]));
    assert!(tape.concat(&[a, bad]).is_err());
    assert!(tape.concat(&[]).is_err());
}

#[test]
fn structural_ops_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for (r, c) in [(4, 3), (2, 5), (6, 1)] {
        let x = random(&mut rng, &[r, c], -1.0, 1.0);
        let other = random(&mut rng, &[r, 2], -1.0, 1.0);
        let row = random(&mut rng, &[c], -1.0, 1.0);
        let index: Vec<usize> = (0..2 * r).map(|i| (i * 7 + 1) % r).collect();
        let report = grad_check(
            |tape, xv| {
                let o = tape.constant(other.clone());
                let cat = tape.concat(&[o, xv, o])?;
                let g = tape.gather_rows(cat, &index)?;
                let sl = tape.slice_last(g, 1, c + 1)?;
                let rv = tape.constant(row.clone());
                let xr = tape.add_row(xv, rv)?;
                let xr = tape.reshape(xr, vec![r * c])?;
                let xr = tape.scale(xr, 0.5)?;
                let a = weighted_sum(tape, sl, 10)?;
                let b = weighted_sum(tape, xr, 11)?;
                let m = tape.mean(xv)?;
                let ab = tape.add(a, b)?;
                tape.add(ab, m)
            },
            &x,
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.passed, "{}", report.max_rel_error);
    }
}

#[test]
fn gather_rejects_out_of_range() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::zeros(vec![3, 2]));
    assert!(tape.gather_rows(x, &[0, 3]).is_err());
}

#[test]
fn backward_examples() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::zeros(vec![2, 3]));
    let s = tape.sum(x).unwrap();
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap().data(), &[1.0; 6]);

    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::vector(vec![1.0, -2.0]).unwrap());
    let sq = tape.mul(x, x).unwrap();
    let s = tape.sum(sq).unwrap();
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap().data(), &[2.0, -4.0]);

    // second call accumulates
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap().data(), &[4.0, -8.0]);
    tape.zero_grad();
    assert!(tape.grad(x).is_none());

    assert!(tape.backward(sq).is_err());
}

#[test]
fn backward_fills_every_reachable_node() {
    let mut tape = Tape::new();
    let x = tape.leaf(t(&[2, 2], &[0.3, -0.2, 0.5, 0.1]));
    let w = tape.leaf(t(&[2, 3], &[0.1, 0.2, 0.3, -0.4, 0.5, 0.6]));
    let h = tape.matmul(x, w).unwrap();
    let a = tape.leaky_relu(h, 0.2).unwrap();
    let m = tape.reduce_max(a).unwrap();
    let s = tape.sum(m).unwrap();
    tape.backward(s).unwrap();
    for v in [x, w, h, a, m, s] {
        let g = tape.grad(v).expect("gradient present");
        assert_eq!(g.shape(), tape.value(v).shape());
    }
}

#[test]
fn composite_mlp_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let input = random(&mut rng, &[5, 3], -1.0, 1.0);
    let w2 = random(&mut rng, &[4, 2], -1.0, 1.0);
    let w1 = random(&mut rng, &[3, 4], -1.0, 1.0);
    let report = grad_check(
        |tape, w| {
            let xi = tape.constant(input.clone());
            let h = tape.matmul(xi, w)?;
            let h = tape.leaky_relu(h, 0.2)?;
            let w2v = tape.constant(w2.clone());
            let o = tape.matmul(h, w2v)?;
            let pooled = tape.reduce_max(o)?;
            let p = tape.softmax(pooled)?;
            let lp = tape.log(p)?;
            weighted_sum(tape, lp, 12)
        },
        &w1,
        1e-5,
        1e-4,
    )
    .unwrap();
    assert!(report.passed, "{}", report.max_rel_error);
}

#[test]
fn grad_check_examples() {
    let x = t(&[2, 2], &[0.3, 1.0, -4.0, 2.0]);
    let report = grad_check(|tape, v| tape.sum(v), &x, 1e-5, 1e-12).unwrap();
    assert!(report.passed);
    assert!(report.max_rel_error < 1e-10);

    let v = Tensor::vector(vec![0.3, -1.2, 2.5]).unwrap();
    let report = grad_check(
        |tape, v| {
            let p = tape.softmax(v)?;
            tape.sum(p)
        },
        &v,
        1e-5,
        1e-4,
    )
    .unwrap();
    assert!(report.passed);
    assert!(report.analytic.iter().all(|g| g.abs() < 1e-12));

    let err = grad_check(|_, v| Ok(v), &v, 1e-5, 1e-4).unwrap_err();
    assert!(matches!(err, Error::Shape { .. }));
}

#[test]
fn chamfer_and_rotation_ops_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let b = random(&mut rng, &[6, 3], -1.0, 1.0);
    let a = random(&mut rng, &[5, 3], -1.0, 1.0);
    let report = grad_check(
        |tape, av| {
            let bv = tape.constant(b.clone());
            tape.chamfer(av, bv)
        },
        &a,
        1e-6,
        1e-4,
    )
    .unwrap();
    assert!(report.passed, "{}", report.max_rel_error);

    for mode in [
        RotationMode::Euler,
        RotationMode::Quaternion,
        RotationMode::SixD,
        RotationMode::Matrix,
    ] {
        let mut p = random(&mut rng, &[mode.dim()], -0.6, 0.6);
        // keep the matrix / 6D / quaternion inputs well conditioned
        for (i, &off) in mode.identity_offset().iter().enumerate() {
            p.data_mut()[i] += off;
        }
        let report = grad_check(
            |tape, pv| {
                let r = tape.decode_rotation(pv, mode)?;
                weighted_sum(tape, r, 13)
            },
            &p,
            1e-6,
            1e-4,
        )
        .unwrap();
        assert!(report.passed, "{mode}: {}", report.max_rel_error);
    }
}

#[test]
fn forward_is_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut tape = Tape::new();
        let x = tape.leaf(random(&mut rng, &[8, 4], -1.0, 1.0));
        let w = tape.constant(random(&mut rng, &[4, 4], -1.0, 1.0));
        let h = tape.matmul(x, w).unwrap();
        let h = tape.leaky_relu(h, 0.2).unwrap();
        let m = tape.reduce_max(h).unwrap();
        let p = tape.softmax(m).unwrap();
        tape.value(p).clone()
    };
    assert_eq!(run().data(), run().data());
}

mod properties {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn softmax_is_a_shift_invariant_distribution(
            v in proptest::collection::vec(-30.0f64..30.0, 1..20),
            shift in -50.0f64..50.0,
        ) {
            let p = softmax_slice(&v);
            prop_assert!(p.iter().all(|&x| x >= 0.0));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let shifted: Vec<f64> = v.iter().map(|x| x + shift).collect();
            let q = softmax_slice(&shifted);
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn reduce_max_gradient_has_one_row_per_column(
            rows in 1usize..6,
            cols in 1usize..5,
            seed in any::<u64>(),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut tape = Tape::new();
            let x = tape.leaf(random(&mut rng, &[rows, cols], -1.0, 1.0));
            let y = tape.reduce_max(x).unwrap();
            let s = tape.sum(y).unwrap();
            tape.backward(s).unwrap();
            let g = tape.grad(x).unwrap();
            for c in 0..cols {
                let nonzero = (0..rows).filter(|&r| g.get2(r, c) != 0.0).count();
                prop_assert_eq!(nonzero, 1);
            }
        }
    }
}

#[test]
fn clamp_min_passes_gradient_only_above_the_floor() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::vector(vec![-1.0, 0.5, 2.0]).unwrap());
    let y = tape.clamp_min(x, 0.5).unwrap();
    assert_eq!(tape.value(y).data(), &[0.5, 0.5, 2.0]);
    let s = tape.sum(y).unwrap();
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap().data(), &[0.0, 1.0, 1.0]);

    let mut rng = ChaCha8Rng::seed_from_u64(40);
    for shape in SHAPES {
        let mut x = random(&mut rng, shape, 0.1, 1.0);
        for (i, v) in x.data_mut().iter_mut().enumerate() {
            if i % 3 == 0 {
                *v = -*v;
            }
        }
        let report = grad_check(
            |tape, xv| {
                let y = tape.clamp_min(xv, 0.0)?;
                weighted_sum(tape, y, 6)
            },
            &x,
            1e-5,
            1e-6,
        )
        .unwrap();
        assert!(report.passed);
    }
}
