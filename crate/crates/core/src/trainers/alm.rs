use serde::{Deserialize, Serialize};

use crate::autodiff::Var;
use crate::error::{Error, Result};

/// Eliminated slack `max(Ef - s/rho, 0)`.
pub fn compute_z(ef: f64, s: f64, rho: f64) -> f64 {
    (ef - s / rho).max(0.0)
}

/// `-s Ef + rho Ef^2 / 2` for `Ef <= s/rho`, else `-s^2 / (2 rho)`.
pub fn phi(ef: f64, s: f64, rho: f64) -> f64 {
    if ef <= s / rho {
        -s * ef + 0.5 * rho * ef * ef
    } else {
        -0.5 * s * s / rho
    }
}

/// `d phi / d Ef`.
pub fn phi_derivative(ef: f64, s: f64, rho: f64) -> f64 {
    if ef <= s / rho {
        -s + rho * ef
    } else {
        0.0
    }
}

/// [`phi`] on the tape.
pub fn phi_var<'t>(ef: Var<'t>, s: f64, rho: f64) -> Result<Var<'t>> {
    if ef.item() <= s / rho {
        ef.scale(-s).add(&ef.square().scale(0.5 * rho))
    } else {
        Ok(ef.tape().scalar(-0.5 * s * s / rho))
    }
}

/// Per-constraint multipliers `s`, penalties `rho` and slacks `z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualState {
    pub s: Vec<f64>,
    pub rho: Vec<f64>,
    pub z: Vec<f64>,
}

impl DualState {
    pub fn new(m: usize, s_init: f64, rho_init: f64) -> Result<Self> {
        let d = Self {
            s: vec![s_init; m],
            rho: vec![rho_init; m],
            z: vec![0.0; m],
        };
        d.validate()?;
        Ok(d)
    }

    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.rho.len() != self.s.len() || self.z.len() != self.s.len() {
            return Err(Error::Shape("dual vectors differ in length".into()));
        }
        if self.s.iter().any(|&s| !(s >= 0.0)) {
            return Err(Error::Contract(format!(
                "dual s must be >= 0: {:?}",
                self.s
            )));
        }
        if self.rho.iter().any(|&r| !(r > 0.0 && r.is_finite())) {
            return Err(Error::Contract(format!("rho must be > 0: {:?}", self.rho)));
        }
        if self.z.iter().any(|&z| !(z >= 0.0)) {
            return Err(Error::Contract(format!("z must be >= 0: {:?}", self.z)));
        }
        Ok(())
    }

    /// `sum_i phi(ef_i, s_i, rho_i)` on the tape.
    pub fn penalty<'t>(&self, ef: &[Var<'t>]) -> Result<Option<Var<'t>>> {
        if ef.len() != self.len() {
            return Err(Error::Shape(format!(
                "{} constraint values for {} duals",
                ef.len(),
                self.len()
            )));
        }
        let mut acc: Option<Var<'t>> = None;
        for ((e, &s), &rho) in ef.iter().zip(&self.s).zip(&self.rho) {
            let term = phi_var(*e, s, rho)?;
            acc = Some(match acc {
                None => term,
                Some(a) => a.add(&term)?,
            });
        }
        Ok(acc)
    }
}

/// `s <- max(0, s - rho Ef)`, `rho <- c rho`, `z` refreshed at the new state.
pub fn dual_update(dual: &DualState, ef: &[f64], growth: f64) -> Result<DualState> {
    if !(growth >= 1.0) {
        return Err(Error::Contract(format!("growth factor {growth} < 1")));
    }
    if ef.len() != dual.len() {
        return Err(Error::Shape(format!(
            "{} constraint values for {} duals",
            ef.len(),
            dual.len()
        )));
    }
    dual.validate()?;
    let mut next = dual.clone();
    for (i, &e) in ef.iter().enumerate() {
        next.s[i] = (dual.s[i] - dual.rho[i] * e).max(0.0);
        next.rho[i] = growth * dual.rho[i];
        next.z[i] = compute_z(e, next.s[i], next.rho[i]);
    }
    Ok(next)
}

/// Per constraint: `Ef_i >= -tol` or `s_i > 0`.
pub fn complementarity(dual: &DualState, ef: &[f64], tol: f64) -> Vec<bool> {
    ef.iter()
        .zip(&dual.s)
        .map(|(&e, &s)| e >= -tol || s > 0.0)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Tape, Tensor};
    use proptest::prelude::*;

    #[test]
    fn z_examples() {
        assert_eq!(compute_z(-0.5, 1.0, 2.0), 0.0);
        assert_eq!(compute_z(1.0, 1.0, 2.0), 0.5);
        assert_eq!(compute_z(0.5, 1.0, 2.0), 0.0);
    }

    #[test]
    fn phi_examples() {
        assert!((phi(0.1, 1.0, 2.0) + 0.09).abs() < 1e-12);
        assert!((phi(1.0, 1.0, 2.0) + 0.25).abs() < 1e-12);
        assert!((phi(-0.3, 1.0, 2.0) - 0.39).abs() < 1e-12);
    }

    #[test]
    fn phi_branch_point() {
        for (s, rho) in [(1.0, 2.0), (3.0, 0.5), (0.25, 7.0)] {
            let b: f64 = s / rho;
            let left = -s * b + 0.5 * rho * b * b;
            let right = -0.5 * s * s / rho;
            assert!((left - right).abs() < 1e-12);
            assert!((phi(b, s, rho) - right).abs() < 1e-12);
            assert!(phi_derivative(b, s, rho).abs() < 1e-12);
            assert_eq!(phi_derivative(b + 1e-9, s, rho), 0.0);
        }
    }

    #[test]
    fn phi_var_matches_plain() {
        for ef in [-0.3, 0.1, 0.5, 1.0] {
            let tape = Tape::new();
            let e = tape.leaf(Tensor::scalar(ef));
            let p = phi_var(e, 1.0, 2.0).unwrap();
            assert!((p.item() - phi(ef, 1.0, 2.0)).abs() < 1e-15);
            let g = tape.backward(p).unwrap();
            let d = g.get(&e).map_or(0.0, |t| t.item());
            assert!((d - phi_derivative(ef, 1.0, 2.0)).abs() < 1e-15);
        }
    }

    #[test]
    fn dual_update_examples() {
        let d = DualState {
            s: vec![1.0, 1.0, 0.0],
            rho: vec![2.0, 2.0, 1.0],
            z: vec![0.0; 3],
        };
        let n = dual_update(&d, &[-0.3, 1.0, 0.0], 1.005).unwrap();
        assert!((n.s[0] - 1.6).abs() < 1e-12);
        assert!((n.rho[0] - 2.01).abs() < 1e-12);
        assert_eq!(n.s[1], 0.0);
        assert_eq!(n.s[2], 0.0);
        assert!(dual_update(&d, &[0.0; 3], 0.9).is_err());
        assert!(dual_update(&d, &[0.0; 2], 1.0).is_err());
    }

    proptest! {
        #[test]
        fn dual_invariants(
            s in 0.0f64..10.0,
            rho in 0.01f64..10.0,
            ef in -5.0f64..5.0,
            c in 1.0f64..1.1,
        ) {
            let d = DualState { s: vec![s], rho: vec![rho], z: vec![0.0] };
            let n = dual_update(&d, &[ef], c).unwrap();
            prop_assert!(n.s[0] >= 0.0 && n.z[0] >= 0.0);
            prop_assert!(n.rho[0] >= rho);
            if ef < 0.0 {
                prop_assert!(n.s[0] > s);
            }
            if ef >= s / rho {
                prop_assert!(n.s[0] <= s);
                prop_assert_eq!(n.s[0], (s - rho * ef).max(0.0));
            }
        }

        #[test]
        fn phi_is_c1(s in 0.01f64..10.0, rho in 0.01f64..10.0) {
            let b = s / rho;
            let h = 1e-7 * (1.0 + b.abs());
            prop_assert!((phi(b - h, s, rho) - phi(b + h, s, rho)).abs() < 1e-9 * (1.0 + s * s / rho));
            prop_assert!(phi_derivative(b - h, s, rho).abs() <= rho * h * 1.01);
        }
    }
}
