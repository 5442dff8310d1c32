//! Scheduled isotopies from the identity to a target map, and the smooth
//! bump reparametrization that freezes them near the ends.
//!
//! An `Isotopy` scales every factor of a `MapExpr` linearly in s: shear
//! profiles and translation offsets are multiplied by s, scale factors move
//! along 1 + s·(c − 1). At s = 0 this is the identity bitwise, at s = 1 the
//! map itself. Integer-linear factors have no such schedule and are rejected.
//!
//! `bump` is the standard exponential step τ(s) = φ(s)/(φ(s) + φ(1 − s)),
//! φ(r) = e^{−1/r}: strictly increasing on (0, 1), flat to all orders at the
//! ends, with τ(s) + τ(1 − s) = 1. Arguments outside [0, 1] clamp to the
//! constant extension.

use crate::error::{Error, Result};
use crate::geometry::TorusPoint;
use crate::maps::MapExpr;

fn phi(r: f64) -> f64 {
    if r > 0.0 {
        (-1.0 / r).exp()
    } else {
        0.0
    }
}

fn phi_deriv(r: f64) -> f64 {
    // e^{−1/r} underflows to exact zero for r < ~0.00135 while 1/r² keeps
    // growing; cut off early so the quotient can never reach 0/0.
    if r <= 1e-3 {
        0.0
    } else {
        (-1.0 / r).exp() / (r * r)
    }
}

/// Smooth monotone step: 0 for s ≤ 0, 1 for s ≥ 1, flat to all orders at
/// both ends.
pub fn bump(s: f64) -> f64 {
    if s <= 0.0 {
        return 0.0;
    }
    if s >= 1.0 {
        return 1.0;
    }
    let a = phi(s);
    let b = phi(1.0 - s);
    a / (a + b)
}

/// Derivative of `bump`; identically 0 outside (0, 1).
pub fn bump_deriv(s: f64) -> f64 {
    if s <= 0.0 || s >= 1.0 {
        return 0.0;
    }
    let a = phi(s);
    let b = phi(1.0 - s);
    let da = phi_deriv(s);
    let db = phi_deriv(1.0 - s);
    let den = a + b;
    (da * b + a * db) / (den * den)
}

/// A path of diffeomorphisms s ↦ γ_s with γ₀ = id and γ₁ the given map,
/// obtained by scaling every factor of the composition linearly in s.
#[derive(Debug, Clone)]
pub struct Isotopy {
    expr: MapExpr,
}

impl Isotopy {
    /// Wrap a map expression as an isotopy. Fails with `UnsupportedIsotopy`
    /// if any factor lacks a linear schedule (integer-linear factors).
    pub fn new(expr: MapExpr) -> Result<Self> {
        if !expr.schedulable() {
            return Err(Error::UnsupportedIsotopy(
                "integer-linear factors cannot be scheduled; decompose into shears".into(),
            ));
        }
        Ok(Isotopy { expr })
    }

    pub fn dim(&self) -> usize {
        self.expr.dim()
    }

    /// The endpoint map γ₁.
    pub fn target(&self) -> &MapExpr {
        &self.expr
    }

    fn clamp(s: f64) -> f64 {
        s.clamp(0.0, 1.0)
    }

    pub fn eval_coords(&self, s: f64, x: &[f64]) -> Result<Vec<f64>> {
        self.expr.eval_coords_scaled(Self::clamp(s), x)
    }

    pub fn eval(&self, s: f64, x: &TorusPoint) -> Result<TorusPoint> {
        TorusPoint::new(self.eval_coords(s, x.coords())?)
    }

    pub fn invert_coords(&self, s: f64, y: &[f64]) -> Result<Vec<f64>> {
        self.expr.invert_coords_scaled(Self::clamp(s), y)
    }

    pub fn invert(&self, s: f64, y: &TorusPoint) -> Result<TorusPoint> {
        TorusPoint::new(self.invert_coords(s, y.coords())?)
    }

    /// Jacobian determinant of γ_s (position-independent for factor maps).
    pub fn jacobian_det(&self, s: f64) -> Result<f64> {
        self.expr.jacobian_det_scaled(Self::clamp(s))
    }

    /// The generating vector field: g(s, x) = (∂_σ γ_σ)|_{σ=s} evaluated at
    /// the base point γ_s⁻¹(x), so the vector is attached at x itself.
    pub fn generator(&self, s: f64, x: &[f64]) -> Result<Vec<f64>> {
        let s = Self::clamp(s);
        let y = self.expr.invert_coords_scaled(s, x)?;
        Ok(self.expr.chain_scaled(s, &y)?.gen)
    }

    /// Walk the scaled composition from the base point `y`, returning the
    /// image, the s-derivative at `y`, and the Jacobian determinant.
    pub(crate) fn chain_from_base(&self, s: f64, y: &[f64]) -> Result<(Vec<f64>, Vec<f64>, f64)> {
        let c = self.expr.chain_scaled(Self::clamp(s), y)?;
        Ok((c.end, c.gen, c.det))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::circle_diff;
    use crate::maps::ElementaryMap;
    use crate::trig::TrigPoly;
    use std::f64::consts::TAU;

    #[test]
    fn bump_hits_endpoints_and_midpoint() {
        assert_eq!(bump(0.0), 0.0);
        assert_eq!(bump(1.0), 1.0);
        assert!((bump(0.5) - 0.5).abs() < 1e-15);
        assert_eq!(bump(-0.3), 0.0);
        assert_eq!(bump(1.7), 1.0);
    }

    #[test]
    fn bump_is_monotone() {
        let n = 10_000;
        let mut prev = bump(0.0);
        for i in 1..=n {
            let cur = bump(i as f64 / n as f64);
            assert!(cur >= prev, "bump decreased near s = {}", i as f64 / n as f64);
            prev = cur;
        }
    }

    #[test]
    fn bump_symmetry() {
        for i in 0..=1000 {
            let s = i as f64 / 1000.0;
            assert!((bump(s) + bump(1.0 - s) - 1.0).abs() <= 1e-14);
        }
    }

    #[test]
    fn bump_deriv_is_flat_at_ends() {
        assert_eq!(bump_deriv(0.0), 0.0);
        assert_eq!(bump_deriv(1.0), 0.0);
        assert!(bump_deriv(0.01) < 1e-30);
        assert!(bump_deriv(0.99) < 1e-30);
        assert!(bump_deriv(0.02) < 1e-12);
        assert!(bump_deriv(0.98) < 1e-12);
    }

    #[test]
    fn bump_deriv_matches_difference_quotient() {
        // Closed value at the center: φ(1/2) = e⁻², φ'(1/2) = 4e⁻², so
        // τ'(1/2) = 8e⁻⁴ / 4e⁻⁴ = 2.
        assert!((bump_deriv(0.5) - 2.0).abs() < 1e-12);
        for &s in &[0.3, 0.5, 0.62, 0.85] {
            let h = 1e-6;
            let fd = (bump(s + h) - bump(s - h)) / (2.0 * h);
            assert!(
                (fd - bump_deriv(s)).abs() < 1e-7,
                "s = {s}: fd {fd} vs closed {}",
                bump_deriv(s)
            );
        }
    }

    fn shear_iso(a: f64) -> Isotopy {
        let expr = MapExpr::new(
            2,
            vec![ElementaryMap::Shear {
                target: 0,
                profile: TrigPoly::sin(a, 1, 1),
            }],
        )
        .unwrap();
        Isotopy::new(expr).unwrap()
    }

    #[test]
    fn isotopy_starts_at_identity_bitwise() {
        let iso = shear_iso(0.2);
        let x = [0.123456789, 0.987654321];
        let y = iso.eval_coords(0.0, &x).unwrap();
        assert_eq!(y, x.to_vec());
    }

    #[test]
    fn isotopy_ends_at_target() {
        let iso = shear_iso(0.2);
        let x = [0.0, 0.25];
        let y = iso.eval_coords(1.0, &x).unwrap();
        let direct = iso.target().eval_coords(&x).unwrap();
        assert_eq!(y, direct);
    }

    #[test]
    fn isotopy_midpoint_scales_profile() {
        let iso = shear_iso(0.2);
        let y = iso.eval_coords(0.5, &[0.0, 0.25]).unwrap();
        assert!((y[0] - 0.1).abs() < 1e-15, "got {}", y[0]);
        assert_eq!(y[1], 0.25);
    }

    #[test]
    fn isotopy_clamps_outside_unit_interval() {
        let iso = shear_iso(0.2);
        let x = [0.4, 0.7];
        assert_eq!(
            iso.eval_coords(-2.0, &x).unwrap(),
            iso.eval_coords(0.0, &x).unwrap()
        );
        assert_eq!(
            iso.eval_coords(3.5, &x).unwrap(),
            iso.eval_coords(1.0, &x).unwrap()
        );
    }

    #[test]
    fn linear_factor_rejected() {
        let expr = MapExpr::new(
            2,
            vec![ElementaryMap::Linear {
                matrix: vec![vec![1, 1], vec![0, 1]],
            }],
        )
        .unwrap();
        assert!(matches!(
            Isotopy::new(expr),
            Err(Error::UnsupportedIsotopy(_))
        ));
    }

    #[test]
    fn generator_of_single_shear_is_profile() {
        let a = 0.2;
        let iso = shear_iso(a);
        for &s in &[0.0, 0.3, 0.7, 1.0] {
            for &y0 in &[0.1, 0.25, 0.6] {
                let g = iso.generator(s, &[0.44, y0]).unwrap();
                let expected = a * (TAU * y0).sin();
                assert!((g[0] - expected).abs() < 1e-14);
                assert_eq!(g[1], 0.0);
            }
        }
    }

    #[test]
    fn generator_of_identity_is_zero() {
        let iso = Isotopy::new(MapExpr::identity(3)).unwrap();
        let g = iso.generator(0.5, &[0.1, 0.2, 0.3]).unwrap();
        assert_eq!(g, vec![0.0, 0.0, 0.0]);
    }

    /// Finite-difference generator: [γ_{s+h} − γ_{s−h}](γ_s⁻¹(x)) / 2h with
    /// circle-aware differences.
    fn fd_generator(iso: &Isotopy, s: f64, x: &[f64], h: f64) -> Vec<f64> {
        let y = iso.invert_coords(s, x).unwrap();
        let hi = iso.eval_coords(s + h, &y).unwrap();
        let lo = iso.eval_coords(s - h, &y).unwrap();
        hi.iter()
            .zip(&lo)
            .map(|(&a, &b)| circle_diff(a, b) / (2.0 * h))
            .collect()
    }

    #[test]
    fn generator_matches_finite_difference_at_second_order() {
        // Two shears in sequence: the second reads the axis the first moved,
        // so the path is genuinely nonlinear in s.
        let expr = MapExpr::new(
            2,
            vec![
                ElementaryMap::Shear {
                    target: 0,
                    profile: TrigPoly::sin(0.2, 1, 1),
                },
                ElementaryMap::Shear {
                    target: 1,
                    profile: TrigPoly::cos(0.15, 0, 2),
                },
            ],
        )
        .unwrap();
        let iso = Isotopy::new(expr).unwrap();
        let x = [0.31, 0.57];
        let s = 0.4;
        let g = iso.generator(s, &x).unwrap();
        let err = |h: f64| -> f64 {
            fd_generator(&iso, s, &x, h)
                .iter()
                .zip(&g)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        };
        let e1 = err(1e-3);
        let e2 = err(5e-4);
        assert!(e1 < 1e-6, "coarse FD error {e1}");
        let order = (e1 / e2).log2();
        assert!(order >= 1.9, "observed order {order} (errors {e1}, {e2})");
    }

    #[test]
    fn generator_consistent_under_composition_roundtrip() {
        // Pushing the generator through eval∘invert must reproduce itself:
        // g(s, ·) is a well-defined vector field on the torus.
        let iso = shear_iso(0.2);
        let x = [0.9, 0.35];
        let s = 0.66;
        let y = iso.invert_coords(s, &x).unwrap();
        let (end, gen, det) = iso.chain_from_base(s, &y).unwrap();
        assert!(crate::geometry::torus_dist_slices(&end, &x).unwrap() < 1e-12);
        assert_eq!(det, 1.0);
        let g = iso.generator(s, &x).unwrap();
        assert_eq!(g, gen);
    }
}
