//! Reverse-mode automatic differentiation over small dense `f64` tensors.
//!
//! A [`Tape`] records every operation applied to [`Var`] handles and replays
//! them backwards from a scalar root. Tapes are cheap and meant to be rebuilt
//! for each objective evaluation.
//!
//! Kinks follow one rule: the derivative of `min(x, c)` is 1 strictly below
//! `c` and 0 at the tie; `max`, `relu`, `abs` and `clamp` mirror it, so a
//! constraint sitting exactly on its boundary contributes no gradient.

pub mod check;
mod tape;
mod tensor;

pub use check::{gradient_check, relative_error, GradCheckReport};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rbf_at_centre_is_one() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::scalar(0.0));
        assert_eq!(x.rbf(&[0.0], &[1.0]).unwrap().item(), 1.0);
    }

    #[test]
    fn min_const_values_and_grads() {
        for (w, value, grad) in [(0.5, 0.0, 0.0), (-0.2, -0.2, 1.0), (0.0, 0.0, 0.0)] {
            let tape = Tape::new();
            let x = tape.leaf(Tensor::scalar(w));
            let y = x.min_const(0.0);
            assert_eq!(y.item(), value);
            let g = tape.backward(y).unwrap();
            assert_eq!(g.get(&x).unwrap().item(), grad);
        }
    }

    #[test]
    fn kink_ties_have_zero_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![0.0, 0.0, 0.0, 1.0]).unwrap());
        let root = x
            .max_const(0.0)
            .add(&x.abs())
            .unwrap()
            .add(&x.relu())
            .unwrap()
            .add(&x.clamp(0.0, 1.0).unwrap())
            .unwrap()
            .sum();
        let g = tape.backward(root).unwrap();
        assert_eq!(g.get(&x).unwrap().data(), &[0.0, 0.0, 0.0, 3.0]);
    }

    #[test]
    fn matmul_two_element_dot() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap());
        let b = tape.constant(Tensor::matrix(2, 1, vec![3.0, 4.0]).unwrap());
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.shape(), vec![1, 1]);
        assert_eq!(c.item(), 11.0);
    }

    #[test]
    fn sum_of_squares_gradient() {
        let tape = Tape::new();
        let w = tape.leaf(Tensor::vector(vec![1.0, 2.0, 3.0]).unwrap());
        let root = w.square().sum();
        let g = tape.backward(root).unwrap();
        assert_eq!(g.get(&w).unwrap().data(), &[2.0, 4.0, 6.0]);
        // Backward does not mutate the tape.
        let again = tape.backward(root).unwrap();
        assert_eq!(again.get(&w).unwrap().data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn constants_get_no_gradient() {
        let tape = Tape::new();
        let w = tape.leaf(Tensor::scalar(2.0));
        let c = tape.constant(Tensor::scalar(3.0));
        let unused = tape.leaf(Tensor::scalar(1.0));
        let root = w.mul(&c).unwrap();
        let g = tape.backward(root).unwrap();
        assert_eq!(g.get(&w).unwrap().item(), 3.0);
        assert!(g.get(&c).is_none());
        assert!(g.get(&unused).is_none());
    }

    #[test]
    fn errors() {
        let tape = Tape::new();
        let a = tape.leaf(Tensor::matrix(2, 3, vec![1.0; 6]).unwrap());
        let b = tape.leaf(Tensor::matrix(2, 3, vec![1.0; 6]).unwrap());
        assert!(matches!(a.matmul(&b), Err(Error::Shape(_))));
        let z = tape.constant(Tensor::vector(vec![1.0, 0.0]).unwrap());
        assert!(matches!(z.log(), Err(Error::Domain(_))));
        let one = tape.constant(Tensor::vector(vec![1.0, 1.0]).unwrap());
        assert!(matches!(one.div(&z), Err(Error::Domain(_))));
        assert!(matches!(tape.backward(a), Err(Error::Contract(_))));
        let other = Tape::new();
        let o = other.leaf(Tensor::scalar(1.0));
        assert!(matches!(a.add(&o), Err(Error::Contract(_))));
    }

    #[test]
    fn broadcast_gradients_are_reduced() {
        let tape = Tape::new();
        let m = tape.leaf(Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let row = tape.leaf(Tensor::matrix(1, 3, vec![1.0, 1.0, 2.0]).unwrap());
        let s = tape.leaf(Tensor::scalar(2.0));
        let root = m.add(&row).unwrap().mul(&s).unwrap().sum();
        let g = tape.backward(root).unwrap();
        assert_eq!(g.get(&row).unwrap().data(), &[4.0, 4.0, 4.0]);
        assert_eq!(g.get(&s).unwrap().item(), 21.0 + 4.0 * 2.0);
        assert_eq!(g.get(&m).unwrap().data(), &[2.0; 6]);
    }

    fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(
            shape.to_vec(),
            (0..n).map(|_| rng.random_range(lo..hi)).collect(),
        )
        .unwrap()
    }

    // Pushes every value away from the kink at `k` by at least `gap`.
    fn off_kink(t: &Tensor, k: f64, gap: f64) -> Tensor {
        t.map(|v| {
            if (v - k).abs() < gap {
                k + gap.copysign(v - k) * 2.0
            } else {
                v
            }
        })
    }

    #[test]
    fn elementary_ops_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        type Case = for<'a> fn(&'a Tape, Var<'a>) -> Var<'a>;
        let cases: Vec<(&str, Case, f64, f64)> = vec![
            ("exp", |_, x| x.exp().sum(), -2.0, 2.0),
            ("log", |_, x| x.log().unwrap().sum(), 0.2, 3.0),
            ("square", |_, x| x.square().sum(), -2.0, 2.0),
            ("abs", |_, x| x.abs().sum(), -2.0, 2.0),
            ("relu", |_, x| x.relu().sum(), -2.0, 2.0),
            ("neg", |_, x| x.neg().square().sum(), -2.0, 2.0),
            ("mean", |_, x| x.square().mean().unwrap(), -2.0, 2.0),
            (
                "rbf",
                |_, x| x.rbf(&[0.3], &[0.7]).unwrap().sum(),
                -2.0,
                2.0,
            ),
            ("min", |_, x| x.min_const(0.0).square().sum(), -2.0, 2.0),
            ("max", |_, x| x.max_const(0.0).square().sum(), -2.0, 2.0),
            (
                "clamp",
                |_, x| x.clamp(-0.5, 0.5).unwrap().square().sum(),
                -2.0,
                2.0,
            ),
            (
                "scale",
                |_, x| x.scale(-3.0).add_scalar(1.0).square().sum(),
                -2.0,
                2.0,
            ),
            (
                "div",
                |t, x| {
                    let c = t.constant(Tensor::filled(&[6], 1.7));
                    c.div(&x.exp())
                        .unwrap()
                        .add(&x.div(&c).unwrap())
                        .unwrap()
                        .sum()
                },
                -2.0,
                2.0,
            ),
            (
                "mul_sub",
                |_, x| x.mul(&x.sin_like()).unwrap().sub(&x).unwrap().sum(),
                -2.0,
                2.0,
            ),
            (
                "narrow_reshape",
                |_, x| {
                    x.narrow(1, 4)
                        .unwrap()
                        .reshape(&[2, 2])
                        .unwrap()
                        .square()
                        .sum()
                },
                -2.0,
                2.0,
            ),
        ];
        for (name, f, lo, hi) in cases {
            for _ in 0..5 {
                let x = random_tensor(&mut rng, &[6], lo, hi);
                let x = off_kink(&off_kink(&off_kink(&x, 0.0, 1e-3), 0.5, 1e-3), -0.5, 1e-3);
                let r = gradient_check(&x, 1e-5, 1e-6, None, |t, v| Ok(f(t, v))).unwrap();
                assert!(r.max_rel_error <= 1e-5, "{name}: {r:?}");
                assert_eq!(r.skipped_kinks, 0, "{name}");
            }
        }
    }

    #[test]
    fn matmul_chain_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let b = random_tensor(&mut rng, &[3, 4], -1.0, 1.0);
        let c = random_tensor(&mut rng, &[4, 2], -1.0, 1.0);
        let x = random_tensor(&mut rng, &[5, 3], -1.0, 1.0);
        let r = gradient_check(&x, 1e-5, 1e-6, None, |t, x| {
            let b = t.constant(b.clone());
            let c = t.constant(c.clone());
            Ok(x.matmul(&b)?.exp().matmul(&c)?.square().sum())
        })
        .unwrap();
        assert!(r.max_rel_error <= 1e-5, "{r:?}");
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        let x = Tensor::vector(vec![0.3, -0.7]).unwrap();
        let r = gradient_check(&x, 1e-5, 1e-6, Some(1e-2), |_, x| Ok(x.square().sum())).unwrap();
        assert!(r.max_rel_error > 1e-3);
    }

    // Small helper op used above: a smooth bounded function built from tape
    // primitives.
    trait SinLike<'t> {
        fn sin_like(&self) -> Var<'t>;
    }
    impl<'t> SinLike<'t> for Var<'t> {
        fn sin_like(&self) -> Var<'t> {
            self.square().neg().exp()
        }
    }

    proptest! {
        #[test]
        fn backward_is_linear(
            w in proptest::collection::vec(-2.0f64..2.0, 4),
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
        ) {
            let x = Tensor::vector(w).unwrap();
            let grad_of = |build: &dyn for<'t> Fn(Var<'t>) -> Var<'t>| {
                let tape = Tape::new();
                let leaf = tape.leaf(x.clone());
                let root = build(leaf);
                tape.backward(root).unwrap().get(&leaf).unwrap().clone()
            };
            fn f(v: Var<'_>) -> Var<'_> {
                v.exp().sum()
            }
            fn g(v: Var<'_>) -> Var<'_> {
                v.square().mul(&v).unwrap().sum()
            }
            let combined = grad_of(&|v| f(v).scale(a).add(&g(v).scale(b)).unwrap());
            let gf = grad_of(&f);
            let gg = grad_of(&g);
            for i in 0..x.len() {
                let expect = a * gf.data()[i] + b * gg.data()[i];
                prop_assert!((combined.data()[i] - expect).abs() <= 1e-12 * (1.0 + expect.abs()));
            }
        }
    }
}
