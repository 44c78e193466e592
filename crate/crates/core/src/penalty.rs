//! SCAD penalty, its derivative, and the proximal maps used by the slack
//! update.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Result, WccError};

/// SCAD parameters: fusion strength `lambda` and shape `gamma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScadSpec {
    pub lambda: f64,
    pub gamma: f64,
}

impl ScadSpec {
    pub fn new(lambda: f64, gamma: f64) -> Result<Self> {
        let spec = ScadSpec { lambda, gamma };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(WccError::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.gamma > 1.0 && self.gamma.is_finite()) {
            return Err(WccError::Config(format!("gamma must be > 1, got {}", self.gamma)));
        }
        Ok(())
    }

    /// The ADMM slack update needs `gamma > 1 + 1/vartheta` for the
    /// proximal objective to stay strictly convex along each ray.
    pub fn validate_for_admm(&self, vartheta: f64) -> Result<()> {
        self.validate()?;
        if !(self.gamma > 1.0 + 1.0 / vartheta) {
            return Err(WccError::Config(format!(
                "gamma = {} must exceed 1 + 1/vartheta = {}",
                self.gamma,
                1.0 + 1.0 / vartheta
            )));
        }
        Ok(())
    }

    pub fn with_lambda(self, lambda: f64) -> Self {
        ScadSpec { lambda, ..self }
    }
}

impl Default for ScadSpec {
    fn default() -> Self {
        ScadSpec {
            lambda: 0.0,
            gamma: 3.0,
        }
    }
}

/// `p_gamma(t, lambda)` in closed form. Kinks evaluate by right-continuity
/// (the function itself is continuous, so only the branch choice differs).
pub fn scad_value(t: f64, spec: &ScadSpec) -> Result<f64> {
    if t < 0.0 || t.is_nan() {
        return Err(WccError::Config(format!("SCAD argument must be >= 0, got {t}")));
    }
    Ok(scad_unchecked(t, spec.lambda, spec.gamma))
}

#[inline]
pub(crate) fn scad_unchecked(t: f64, lambda: f64, gamma: f64) -> f64 {
    if t < lambda {
        lambda * t
    } else if t < gamma * lambda {
        (2.0 * gamma * lambda * t - t * t - lambda * lambda) / (2.0 * (gamma - 1.0))
    } else {
        lambda * lambda * (gamma + 1.0) / 2.0
    }
}

/// Derivative of [`scad_value`] in `t`, right limit at the kinks.
pub fn scad_derivative(t: f64, spec: &ScadSpec) -> Result<f64> {
    if t < 0.0 || t.is_nan() {
        return Err(WccError::Config(format!("SCAD argument must be >= 0, got {t}")));
    }
    let ScadSpec { lambda, gamma } = *spec;
    Ok(if t < lambda {
        lambda
    } else if t < gamma * lambda {
        (gamma * lambda - t) / (gamma - 1.0)
    } else {
        0.0
    })
}

/// Groupwise soft threshold `(1 - t/||w||)_+ w`.
pub fn group_soft_threshold(w: &DVector<f64>, t: f64) -> DVector<f64> {
    w * shrink_factor(w.norm(), t)
}

#[inline]
fn shrink_factor(norm: f64, t: f64) -> f64 {
    if norm <= t || norm == 0.0 {
        0.0
    } else {
        1.0 - t / norm
    }
}

/// Minimizer of `(vartheta/2)||kappa - zeta||^2 + p_gamma(||zeta||, lambda)`.
pub fn zeta_proximal(kappa: &DVector<f64>, spec: &ScadSpec, vartheta: f64) -> Result<DVector<f64>> {
    spec.validate_for_admm(vartheta)?;
    Ok(kappa * zeta_scale(kappa.norm(), spec.lambda, spec.gamma, vartheta))
}

/// Multiplier `c` with `prox(kappa) = c * kappa`, given `||kappa||`.
/// Callers guarantee `gamma > 1 + 1/vartheta`.
#[inline]
pub(crate) fn zeta_scale(norm: f64, lambda: f64, gamma: f64, vartheta: f64) -> f64 {
    if norm == 0.0 {
        0.0
    } else if norm <= lambda + lambda / vartheta {
        shrink_factor(norm, lambda / vartheta)
    } else if norm <= gamma * lambda {
        let denom = (gamma - 1.0) * vartheta;
        shrink_factor(norm, gamma * lambda / denom) / (1.0 - 1.0 / denom)
    } else {
        1.0
    }
}

/// The scalar proximal objective along the ray of `kappa`, at radius `s`.
pub fn proximal_objective(kappa: &DVector<f64>, zeta: &DVector<f64>, spec: &ScadSpec, vartheta: f64) -> f64 {
    0.5 * vartheta * (kappa - zeta).norm_squared() + scad_unchecked(zeta.norm(), spec.lambda, spec.gamma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn spec() -> ScadSpec {
        ScadSpec::new(0.5, 3.0).unwrap()
    }

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn scad_values() {
        assert_eq!(scad_value(0.0, &spec()).unwrap(), 0.0);
        assert_abs_diff_eq!(scad_value(2.0, &spec()).unwrap(), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(scad_value(0.3, &spec()).unwrap(), 0.15, epsilon = 1e-15);
        assert!(scad_value(-1.0, &spec()).is_err());
    }

    #[test]
    fn scad_derivatives() {
        assert_eq!(scad_derivative(2.0, &spec()).unwrap(), 0.0);
        assert_eq!(scad_derivative(0.2, &spec()).unwrap(), 0.5);
        let h = 1e-6;
        let fd = (scad_value(1.0 + h, &spec()).unwrap() - scad_value(1.0 - h, &spec()).unwrap()) / (2.0 * h);
        assert_abs_diff_eq!(fd, 0.25, epsilon = 1e-8);
        assert_abs_diff_eq!(scad_derivative(1.0, &spec()).unwrap(), 0.25, epsilon = 1e-15);
        // scaled derivative at 0+ is one
        assert_eq!(scad_derivative(1e-12, &spec()).unwrap() / spec().lambda, 1.0);
    }

    #[test]
    fn kinks_are_right_continuous() {
        let s = spec();
        assert_eq!(scad_derivative(0.5, &s).unwrap(), (1.5 - 0.5) / 2.0);
        assert_eq!(scad_derivative(1.5, &s).unwrap(), 0.0);
        assert_abs_diff_eq!(scad_value(0.5, &s).unwrap(), 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(scad_value(1.5, &s).unwrap(), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn soft_threshold_cases() {
        assert_eq!(group_soft_threshold(&v(&[0.3, 0.4]), 1.0), v(&[0.0, 0.0]));
        assert_eq!(group_soft_threshold(&v(&[3.0, 4.0]), 0.0), v(&[3.0, 4.0]));
        let out = group_soft_threshold(&v(&[3.0, 4.0]), 2.5);
        assert_abs_diff_eq!(out, v(&[1.5, 2.0]), epsilon = 1e-15);
        assert_eq!(group_soft_threshold(&v(&[0.0, 0.0]), 0.3), v(&[0.0, 0.0]));
    }

    #[test]
    fn proximal_outer_and_inner_cases() {
        let s = spec();
        assert_eq!(zeta_proximal(&v(&[3.0, 4.0]), &s, 1.0).unwrap(), v(&[3.0, 4.0]));
        assert_eq!(zeta_proximal(&v(&[0.2, 0.1]), &s, 1.0).unwrap(), v(&[0.0, 0.0]));
        assert_eq!(zeta_proximal(&v(&[0.0, 0.0]), &s, 1.0).unwrap(), v(&[0.0, 0.0]));
    }

    #[test]
    fn proximal_middle_case_matches_ray_search() {
        // ||kappa|| = 1.2 sits in (lambda + lambda/vartheta, gamma*lambda] = (1.0, 1.5].
        let s = spec();
        let kappa = v(&[0.72, 0.96]);
        let got = zeta_proximal(&kappa, &s, 1.0).unwrap();
        // Along the ray: minimize 0.5 (1.2 - r)^2 + scad(r); stationary point in the
        // middle branch is r = (1.2 - 0.75) / (1 - 0.5) = 0.9.
        let dir = &kappa / kappa.norm();
        let mut best = (f64::INFINITY, 0.0);
        for k in 0..=240_000 {
            let r = 2.4 * k as f64 / 240_000.0;
            let f = proximal_objective(&kappa, &(&dir * r), &s, 1.0);
            if f < best.0 {
                best = (f, r);
            }
        }
        assert_abs_diff_eq!(got.norm(), best.1, epsilon = 1e-5);
        assert_abs_diff_eq!(got.norm(), 0.9, epsilon = 1e-12);
    }

    #[test]
    fn proximal_rejects_small_gamma() {
        let s = ScadSpec::new(0.5, 1.5).unwrap();
        assert!(zeta_proximal(&v(&[1.0]), &s, 1.0).is_err());
        assert!(zeta_proximal(&v(&[1.0]), &s, 4.0).is_ok());
    }

    proptest! {
        #[test]
        fn scad_nondecreasing_and_concave(lambda in 0.01f64..2.0, gamma in 2.05f64..6.0, t in 0.0f64..10.0) {
            let s = ScadSpec { lambda, gamma };
            let h = 1e-3;
            let f = |x: f64| scad_unchecked(x, lambda, gamma);
            prop_assert!(f(t + h) >= f(t) - 1e-15);
            if t >= h {
                prop_assert!(f(t + h) - 2.0 * f(t) + f(t - h) <= 1e-9);
            }
            prop_assert!(scad_value(t, &s).unwrap() <= lambda * t + 1e-12);
        }

        #[test]
        fn threshold_never_grows(w in prop::collection::vec(-5.0f64..5.0, 1..5), t in 0.0f64..4.0) {
            let w = DVector::from_vec(w);
            prop_assert!(group_soft_threshold(&w, t).norm() <= w.norm() + 1e-15);
        }

        #[test]
        fn prox_is_collinear(k in prop::collection::vec(-3.0f64..3.0, 1..4), lambda in 0.0f64..1.0) {
            let kappa = DVector::from_vec(k);
            let s = ScadSpec { lambda, gamma: 3.0 };
            let z = zeta_proximal(&kappa, &s, 1.0).unwrap();
            let c = zeta_scale(kappa.norm(), lambda, 3.0, 1.0);
            prop_assert!((0.0..=1.0).contains(&c));
            prop_assert!((&z - &kappa * c).norm() <= 1e-14);
        }
    }
}
