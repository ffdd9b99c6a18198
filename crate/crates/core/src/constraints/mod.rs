//! Knowledge functions as differentiable score functions.
//!
//! Every rule maps network outputs on a grid to per-point scores
//! `min(0, s + m) <= 0`; a constraint's value is the mean score over the
//! active grid positions.

mod eval;
mod spec;

pub use eval::{
    active_scores, composite, composite_values, constraint_for_weights, constraint_values,
    constraints_for_weights, estimate_violation_probability, eval_constraint, expected_constraint,
    expected_constraint_var, point_scores, point_scores_from_derivative, reduce_scores,
    PointScores,
};
pub use spec::{
    linspace, BoundExpr, ConstraintKind, ConstraintSpec, DerivativeMode, Grid, TOL_VIOLATION,
};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Tape, Tensor};
    use crate::bayes::{Activation, NetworkSpec, Posterior, VariationalParams};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn value(spec: &ConstraintSpec, xs: &[f64], y: &[f64]) -> f64 {
        let tape = Tape::new();
        let yv = tape.constant(Tensor::column(y.to_vec()).unwrap());
        eval_constraint(spec, xs, yv).unwrap().item()
    }

    fn lower0() -> ConstraintKind {
        ConstraintKind::LowerBound {
            bound: BoundExpr::Constant { value: 0.0 },
            margin: 0.0,
        }
    }

    fn sim2_upper() -> ConstraintKind {
        ConstraintKind::UpperBound {
            bound: BoundExpr::LogAffine {
                k: 25.0,
                c: 1.0,
                scale: 1.0 / 3.0,
                shift: 0.05,
            },
            margin: 0.0,
        }
    }

    fn increasing() -> ConstraintKind {
        ConstraintKind::Monotone {
            increasing: true,
            margin: 0.0,
        }
    }

    #[test]
    fn lower_bound_satisfied() {
        let spec = ConstraintSpec::new(
            "f1",
            lower0(),
            Grid::Points {
                points: vec![0.0, 1.0],
            },
        );
        assert_eq!(value(&spec, &[0.0, 1.0], &[0.5, 0.2]), 0.0);
    }

    #[test]
    fn upper_bound_at_half() {
        let spec = ConstraintSpec::new("f2", sim2_upper(), Grid::Points { points: vec![0.5] });
        let b = (13.5f64).ln() / 3.0 + 0.05;
        assert!((b - 0.91757).abs() < 1e-5);
        let v = value(&spec, &[0.5], &[1.0]);
        assert!((v - (b - 1.0)).abs() < 1e-15);
        assert!((v + 0.08243).abs() < 1e-5);
    }

    #[test]
    fn monotone_finite_differences() {
        let xs = [0.0, 0.1, 0.2];
        let spec = ConstraintSpec::new(
            "f3",
            increasing(),
            Grid::Points {
                points: xs.to_vec(),
            },
        );
        assert!((value(&spec, &xs, &[0.0, 0.1, 0.05]) + 0.25).abs() < 1e-12);
        let s = active_scores(&spec, &xs, &[0.0, 0.1, 0.05]).unwrap();
        assert!(s[0] == 0.0 && (s[1] + 0.5).abs() < 1e-12);
    }

    #[test]
    fn curvature_second_difference() {
        let xs = [0.0, 0.5, 1.0, 1.5];
        let convex = ConstraintKind::Curvature {
            convex: true,
            margin: 0.0,
        };
        let spec = ConstraintSpec::new(
            "c",
            convex,
            Grid::Points {
                points: xs.to_vec(),
            },
        );
        let y: Vec<f64> = xs.iter().map(|x| x * x).collect();
        assert_eq!(value(&spec, &xs, &y), 0.0);
        let y: Vec<f64> = xs.iter().map(|x| -x * x).collect();
        assert!((value(&spec, &xs, &y) + 2.0).abs() < 1e-12);
        assert!(point_scores(
            &spec,
            &xs[..2],
            Tape::new().constant(Tensor::column(vec![0.0, 1.0]).unwrap())
        )
        .is_err());
    }

    #[test]
    fn band_is_zero_inside_and_region_filters() {
        let band = ConstraintKind::Band {
            lower: BoundExpr::Constant { value: 2.5 },
            upper: BoundExpr::Constant { value: 3.0 },
            margin: 0.0,
        };
        let xs = [-1.0, -0.2, 0.0, 0.2, 1.0];
        let spec = ConstraintSpec::new(
            "band",
            band,
            Grid::Points {
                points: xs.to_vec(),
            },
        )
        .with_region(-0.3, 0.3);
        assert_eq!(value(&spec, &xs, &[0.0, 2.5, 2.75, 3.0, 9.0]), 0.0);
        // only the three in-region points count
        let v = value(&spec, &xs, &[0.0, 2.4, 2.75, 3.3, 9.0]);
        assert!((v - (-0.1 - 0.3) / 3.0).abs() < 1e-12);
    }

    #[test]
    fn conditional_value_margin() {
        let kind = ConstraintKind::ConditionalValue {
            target: 1.0,
            margin: 0.2,
        };
        let spec = ConstraintSpec::new(
            "cv",
            kind,
            Grid::Points {
                points: vec![0.0, 1.0],
            },
        );
        assert!((value(&spec, &[0.0, 1.0], &[1.1, 1.5])).abs() - 0.15 < 1e-12);
    }

    #[test]
    fn log_domain_error() {
        let spec = ConstraintSpec::new("f2", sim2_upper(), Grid::Points { points: vec![-0.5] });
        let tape = Tape::new();
        let y = tape.constant(Tensor::column(vec![0.0]).unwrap());
        assert!(matches!(
            eval_constraint(&spec, &[-0.5], y),
            Err(crate::Error::Domain(_))
        ));
    }

    #[test]
    fn composite_examples() {
        assert!((composite_values(&[-0.1, -0.2], &[2.0, 1.0]).unwrap() + 0.4).abs() < 1e-15);
        assert_eq!(composite_values(&[-0.1, -0.2], &[0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(composite_values(&[-0.3], &[1.0]).unwrap(), -0.3);
        assert!(composite_values(&[-0.1], &[1.0, 2.0]).is_err());
    }

    fn bias_net() -> NetworkSpec {
        // output = w x + b; evaluated at x = 0 only the bias matters
        NetworkSpec::mlp(&[1, 1], Activation::Identity)
    }

    #[test]
    fn degenerate_expectation_equals_point_value() {
        let net = bias_net();
        let spec = ConstraintSpec::new(
            "lb",
            lower0(),
            Grid::Points {
                points: vec![0.0, 1.0],
            },
        );
        let params = VariationalParams {
            mu: Tensor::vector(vec![-1.0, 0.5]).unwrap(),
            log_var: Tensor::filled(&[2], -60.0),
            obs_log_var: 0.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let e = expected_constraint(&spec, &net, &params, 16, &mut rng).unwrap();
        // y = [0.5, -0.5] -> scores [0, -0.5]
        assert!((e + 0.25).abs() < 1e-12);
        assert!(expected_constraint(&spec, &net, &params, 0, &mut rng).is_err());
    }

    #[test]
    fn expectation_matches_large_sample_oracle() {
        // y = b ~ N(0, 1) at x = 0; E[min(0, b)] = -1/sqrt(2 pi)
        let net = bias_net();
        let spec = ConstraintSpec::new("lb", lower0(), Grid::Points { points: vec![0.0] });
        let params = VariationalParams {
            mu: Tensor::vector(vec![0.0, 0.0]).unwrap(),
            log_var: Tensor::vector(vec![-60.0, 0.0]).unwrap(),
            obs_log_var: 0.0,
        };
        let k = 10_000;
        let e = expected_constraint(&spec, &net, &params, k, &mut ChaCha8Rng::seed_from_u64(5))
            .unwrap();
        let oracle = -1.0 / (2.0 * std::f64::consts::PI).sqrt();
        // sd of min(0, Z) = sqrt(1/2 - 1/(2 pi))
        let se = (0.5 - 1.0 / (2.0 * std::f64::consts::PI)).sqrt() / (k as f64).sqrt();
        assert!((e - oracle).abs() <= 3.0 * se, "{e} vs {oracle}");
    }

    #[test]
    fn violation_probability_two_point_mixture() {
        let net = bias_net();
        let spec = ConstraintSpec::new("lb", lower0(), Grid::Points { points: vec![0.0] });
        let set = crate::bayes::ParticleSet {
            particles: (0..400)
                .map(|i| Tensor::vector(vec![0.0, if i % 2 == 0 { 1.0 } else { -1.0 }]).unwrap())
                .collect(),
            bandwidth: 1.0,
            obs_log_var: 0.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p =
            estimate_violation_probability(&spec, &net, &Posterior::Particles(set), 400, &mut rng)
                .unwrap();
        assert!((p - 0.5).abs() <= 3.0 * (0.25f64 / 400.0).sqrt());

        // symmetric Gaussian bias: half the draws fall below zero
        let params = VariationalParams {
            mu: Tensor::vector(vec![0.0, 0.0]).unwrap(),
            log_var: Tensor::vector(vec![-60.0, 0.0]).unwrap(),
            obs_log_var: 0.0,
        };
        let k = 2000;
        let p = estimate_violation_probability(
            &spec,
            &net,
            &Posterior::Variational(params.clone()),
            k,
            &mut rng,
        )
        .unwrap();
        assert!((p - 0.5).abs() <= 3.0 * (0.25 / k as f64).sqrt());

        let mut sure = params;
        sure.mu = Tensor::vector(vec![0.0, 50.0]).unwrap();
        let post = Posterior::Variational(sure.clone());
        assert_eq!(
            estimate_violation_probability(&spec, &net, &post, 100, &mut rng).unwrap(),
            0.0
        );
        sure.mu = Tensor::vector(vec![0.0, -50.0]).unwrap();
        let post = Posterior::Variational(sure);
        assert_eq!(
            estimate_violation_probability(&spec, &net, &post, 100, &mut rng).unwrap(),
            1.0
        );
        assert!(estimate_violation_probability(&spec, &net, &post, 99, &mut rng).is_err());
    }

    #[test]
    fn input_gradient_monotone_matches_finite_differences() {
        let net = NetworkSpec::mlp(&[1, 1], Activation::Identity);
        let mut spec = ConstraintSpec::new("m", increasing(), Grid::uniform(0.0, 1.0, 5));
        spec.derivative = DerivativeMode::InputGradient;
        let tape = Tape::new();
        let w = tape.constant(Tensor::vector(vec![-2.0, 0.3]).unwrap());
        assert!((constraint_for_weights(&spec, &net, w, None).unwrap().item() + 2.0).abs() < 1e-12);
        spec.derivative = DerivativeMode::FiniteDifference;
        assert!((constraint_for_weights(&spec, &net, w, None).unwrap().item() + 2.0).abs() < 1e-12);
    }

    #[test]
    fn satisfied_constraint_has_zero_gradient() {
        let xs = [0.0, 0.5, 1.0];
        let spec = ConstraintSpec::new(
            "m",
            increasing(),
            Grid::Points {
                points: xs.to_vec(),
            },
        );
        let tape = Tape::new();
        let y = tape.leaf(Tensor::column(vec![0.0, 0.0, 1.0]).unwrap());
        let v = eval_constraint(&spec, &xs, y).unwrap();
        let g = tape.backward(v).unwrap();
        assert!(g.get(&y).unwrap().data().iter().all(|&d| d == 0.0));
    }

    proptest! {
        #[test]
        fn scores_are_non_positive(y in prop::collection::vec(-5.0f64..5.0, 4)) {
            let xs = [0.1, 0.3, 0.5, 0.9];
            for kind in [lower0(), sim2_upper(), increasing()] {
                let spec = ConstraintSpec::new("p", kind, Grid::Points { points: xs.to_vec() });
                prop_assert!(value(&spec, &xs, &y) <= 0.0);
            }
        }

        #[test]
        fn monotone_is_shift_invariant(
            y in prop::collection::vec(-5.0f64..5.0, 4),
            c in -10.0f64..10.0,
        ) {
            let xs = [0.1, 0.3, 0.5, 0.9];
            let spec = ConstraintSpec::new("m", increasing(), Grid::Points { points: xs.to_vec() });
            let shifted: Vec<f64> = y.iter().map(|v| v + c).collect();
            prop_assert!((value(&spec, &xs, &y) - value(&spec, &xs, &shifted)).abs() < 1e-9);
        }

        #[test]
        fn lower_bound_rises_with_shift(y in -5.0f64..5.0, c in 0.0f64..10.0) {
            let spec = ConstraintSpec::new("lb", lower0(), Grid::Points { points: vec![0.0] });
            let before = value(&spec, &[0.0], &[y]);
            let after = value(&spec, &[0.0], &[y + c]);
            prop_assert!((after - (before + c).min(0.0)).abs() < 1e-12);
        }

        #[test]
        fn composite_of_scores_is_non_positive(
            f in prop::collection::vec(-3.0f64..0.0, 3),
            w in prop::collection::vec(0.0f64..5.0, 3),
        ) {
            prop_assert!(composite_values(&f, &w).unwrap() <= 0.0);
        }
    }
}
