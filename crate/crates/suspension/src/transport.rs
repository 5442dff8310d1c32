//! The transport family: a path of section maps T(s) with T(0) = id and
//! T(1) = Q, where Q = P ∘ R is the target return map (P the return map of
//! the normalized field, R a scheduled composition of elementary factors).
//!
//! With σ_s the section flow of the unit-time field v̂ (so σ_1 = P) and γ_s
//! the scheduled isotopy from the identity to R, the family is
//! `T(s) = σ_s ∘ γ_{τ(s)}`, τ the flat bump. Since τ is clamped and flat at
//! the ends, T is frozen to σ_s near s = 0 and to σ_s ∘ R near s = 1, which
//! is what makes the suspended field smooth across the section. The
//! two-parameter flow `T^s(t, x) = (t + s, T(t + s)(T(t)⁻¹(x)))` satisfies
//! the exact group law T^{s₂} ∘ T^{s₁} = T^{s₁+s₂} for any family
//! whatsoever; what the specific choice of T buys is T(0) = id, T(1) = Q,
//! and endpoint flatness.
//!
//! When every moving coordinate of v̂ depends only on conserved coordinates
//! (zero components, no time dependence), the section flow is affine in s:
//! σ_s(x) = x + s·v̂_M(x) with Dσ_s = I + s·Dv̂_M of determinant exactly 1.
//! This closed form is detected on the expression level; otherwise σ_s falls
//! back to RK4 flows of v̂.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::field::{FieldEval, FieldTM};
use crate::flow::{flow_jacobian_lifted, flow_lifted, FlowConfig};
use crate::geometry::{wrap_coord, LiftedPoint, TorusPoint};
use crate::isotopy::{bump, bump_deriv, Isotopy};

/// How the section flow σ_s is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SigmaPath {
    /// σ_s(x) = x + s·v̂_M(x), exact.
    Closed,
    /// RK4 flow of v̂.
    Numeric,
}

/// The family s ↦ T(s) = σ_s ∘ γ_{τ(s)} of torus diffeomorphisms.
#[derive(Debug, Clone)]
pub struct TransportFamily {
    v_hat: FieldTM,
    iso: Isotopy,
    cfg: FlowConfig,
    sigma: SigmaPath,
}

/// Everything the suspended field needs at one point (t, x): the σ-preimage,
/// the full family preimage, the σ derivative, and the isotopy data.
#[derive(Debug, Clone)]
pub(crate) struct TransportFrame {
    /// σ_t⁻¹(x). Consistency checks read this; the field evaluation needs
    /// only the later entries.
    #[allow(dead_code)]
    pub xs: Vec<f64>,
    /// T(t)⁻¹(x) = γ_{τ(t)}⁻¹(σ_t⁻¹(x)).
    pub y: Vec<f64>,
    /// Dσ_t at xs.
    pub j_sigma: DMatrix<f64>,
    pub det_sigma: f64,
    /// Isotopy generator at (τ(t), xs): zero whenever τ'(t) = 0.
    pub gen: Vec<f64>,
    /// det Dγ_{τ(t)} (position-independent for factor maps).
    pub det_gamma: f64,
    #[allow(dead_code)]
    pub tau: f64,
    pub dtau: f64,
}

/// Closed form applies when every moving spatial coordinate of v̂ reads only
/// conserved coordinates and never the time.
fn sigma_is_closed(v_hat: &FieldTM) -> bool {
    let m = v_hat.dim();
    let conserved: Vec<bool> = (0..=m)
        .map(|i| i >= 1 && v_hat.components()[i].is_zero())
        .collect();
    (1..=m).all(|i| {
        let c = &v_hat.components()[i];
        c.is_zero() || c.vars().into_iter().all(|v| conserved[v])
    })
}

impl TransportFamily {
    /// Assemble the family from a unit-time field and the scheduled isotopy
    /// of the correction factor R.
    pub fn new(v_hat: FieldTM, iso: Isotopy, cfg: FlowConfig) -> Result<Self> {
        cfg.validate()?;
        if !v_hat.is_unit_time() {
            return Err(Error::Precondition(
                "transport family requires a unit time component; normalize the field first"
                    .into(),
            ));
        }
        if iso.dim() != v_hat.dim() {
            return Err(Error::DimensionMismatch {
                expected: v_hat.dim(),
                got: iso.dim(),
            });
        }
        let sigma = if sigma_is_closed(&v_hat) {
            SigmaPath::Closed
        } else {
            SigmaPath::Numeric
        };
        Ok(TransportFamily {
            v_hat,
            iso,
            cfg,
            sigma,
        })
    }

    /// Replace the closed-form section flow with RK4 flows; used to
    /// cross-validate the closed form against the integrator.
    pub fn with_numeric_sigma(mut self) -> Self {
        self.sigma = SigmaPath::Numeric;
        self
    }

    pub fn has_closed_form_sigma(&self) -> bool {
        self.sigma == SigmaPath::Closed
    }

    pub fn dim(&self) -> usize {
        self.v_hat.dim()
    }

    pub fn v_hat(&self) -> &FieldTM {
        &self.v_hat
    }

    pub fn isotopy(&self) -> &Isotopy {
        &self.iso
    }

    pub fn config(&self) -> &FlowConfig {
        &self.cfg
    }

    /// σ_s on wrapped coordinates.
    fn sigma(&self, s: f64, x: &[f64]) -> Result<Vec<f64>> {
        match self.sigma {
            SigmaPath::Closed => {
                let m = self.dim();
                let mut v = vec![0.0; m + 1];
                self.v_hat.eval_into(0.0, x, &mut v)?;
                (0..m)
                    .map(|i| wrap_coord(x[i] + s * v[i + 1]))
                    .collect()
            }
            SigmaPath::Numeric => {
                let (_, xe) = flow_lifted(&self.v_hat, 0.0, x, s, &self.cfg)?;
                xe.into_iter().map(wrap_coord).collect()
            }
        }
    }

    /// σ_s⁻¹ on wrapped coordinates.
    fn sigma_inv(&self, s: f64, x: &[f64]) -> Result<Vec<f64>> {
        match self.sigma {
            SigmaPath::Closed => {
                // v̂_M reads only conserved coordinates, which σ leaves
                // untouched, so evaluating at x inverts exactly.
                let m = self.dim();
                let mut v = vec![0.0; m + 1];
                self.v_hat.eval_into(0.0, x, &mut v)?;
                (0..m)
                    .map(|i| wrap_coord(x[i] - s * v[i + 1]))
                    .collect()
            }
            SigmaPath::Numeric => {
                let (_, xe) = flow_lifted(&self.v_hat, s, x, -s, &self.cfg)?;
                xe.into_iter().map(wrap_coord).collect()
            }
        }
    }

    /// T(s)(x) = σ_s(γ_{τ(s)}(x)).
    pub fn eval_coords(&self, s: f64, x: &[f64]) -> Result<Vec<f64>> {
        let z = self.iso.eval_coords(bump(s), x)?;
        self.sigma(s, &z)
    }

    pub fn eval(&self, s: f64, x: &TorusPoint) -> Result<TorusPoint> {
        TorusPoint::new(self.eval_coords(s, x.coords())?)
    }

    /// T(s)⁻¹(x) = γ_{τ(s)}⁻¹(σ_s⁻¹(x)).
    pub fn eval_inverse_coords(&self, s: f64, x: &[f64]) -> Result<Vec<f64>> {
        let xs = self.sigma_inv(s, x)?;
        self.iso.invert_coords(bump(s), &xs)
    }

    pub fn eval_inverse(&self, s: f64, x: &TorusPoint) -> Result<TorusPoint> {
        TorusPoint::new(self.eval_inverse_coords(s, x.coords())?)
    }

    /// The two-parameter flow on the cover: T^s(t, x) =
    /// (t + s, T(t + s)(T(t)⁻¹(x))). The time coordinate is deliberately a
    /// lifted real; the family parameter matches the flow of the suspended
    /// field only while t and t + s stay in [0, 1].
    pub fn extended_flow(&self, p: &LiftedPoint, s: f64) -> Result<LiftedPoint> {
        let y = self.eval_inverse_coords(p.t, &p.x)?;
        let x1 = self.eval_coords(p.t + s, &y)?;
        Ok(LiftedPoint::new(p.t + s, x1))
    }

    /// Max group-law residual over samples (t, s₁, s₂, x): compares
    /// T^{s₂}(T^{s₁}(t, x)) with T^{s₁+s₂}(t, x) in time and torus distance.
    pub fn group_law_residual(&self, samples: &[(f64, f64, f64, TorusPoint)]) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for (t, s1, s2, x) in samples {
            let p = LiftedPoint::new(*t, x.coords().to_vec());
            let a = self.extended_flow(&self.extended_flow(&p, *s1)?, *s2)?;
            let b = self.extended_flow(&p, s1 + s2)?;
            let dt = (a.t - b.t).abs();
            let dx = crate::geometry::torus_dist_slices(&a.x, &b.x)?;
            worst = worst.max(dt).max(dx);
        }
        Ok(worst)
    }

    /// Dσ_t at the σ-preimage, the preimages themselves, and the isotopy
    /// data needed to evaluate the suspended field and its density.
    pub(crate) fn frame(&self, t: f64, x: &[f64]) -> Result<TransportFrame> {
        let m = self.dim();
        let tau = bump(t);
        let dtau = bump_deriv(t);
        let (xs, j_sigma, det_sigma) = match self.sigma {
            SigmaPath::Closed => {
                let xs = self.sigma_inv(t, x)?;
                let mut full = DMatrix::zeros(m + 1, m + 1);
                self.v_hat.jacobian_into(0.0, &xs, &mut full)?;
                let mut j = DMatrix::identity(m, m);
                for i in 0..m {
                    for k in 0..m {
                        j[(i, k)] += t * full[(i + 1, k + 1)];
                    }
                }
                // Moving rows never coincide with conserved columns, so
                // I + t·Dv̂_M is unipotent: determinant exactly 1.
                (xs, j, 1.0)
            }
            SigmaPath::Numeric => {
                let (_, xs, rev) = flow_jacobian_lifted(&self.v_hat, t, x, -t, &self.cfg)?;
                let back = rev.view((1, 1), (m, m)).clone_owned();
                let j = back.clone().try_inverse().ok_or_else(|| {
                    Error::InversionFailure(
                        "section flow derivative is numerically singular".into(),
                    )
                })?;
                let det = j.determinant();
                let xs = xs.into_iter().map(wrap_coord).collect::<Result<Vec<_>>>()?;
                (xs, j, det)
            }
        };
        let det_gamma = self.iso.jacobian_det(tau)?;
        let (y, gen) = if dtau == 0.0 {
            (self.iso.invert_coords(tau, &xs)?, vec![0.0; m])
        } else {
            let y = self.iso.invert_coords(tau, &xs)?;
            let (_, gen, _) = self.iso.chain_from_base(tau, &y)?;
            (y, gen)
        };
        Ok(TransportFrame {
            xs,
            y,
            j_sigma,
            det_sigma,
            gen,
            det_gamma,
            tau,
            dtau,
        })
    }

    /// Literal evaluation of the defining composition with the return map
    /// and its inverse left in place: σ_s(P⁻¹(P(γ_{τ(s)}(x)))). Exercises the
    /// cancellation numerically instead of algebraically.
    #[cfg(test)]
    fn eval_coords_literal(&self, s: f64, x: &[f64]) -> Result<Vec<f64>> {
        let z = self.iso.eval_coords(bump(s), x)?;
        let (_, fwd) = flow_lifted(&self.v_hat, 0.0, &z, 1.0, &self.cfg)?;
        let (_, back) = flow_lifted(&self.v_hat, 1.0, &fwd, -1.0, &self.cfg)?;
        self.sigma(s, &back.into_iter().map(wrap_coord).collect::<Result<Vec<_>>>()?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::poincare;
    use crate::geometry::{circle_diff, torus_dist, torus_dist_slices};
    use crate::maps::{ElementaryMap, MapExpr};
    use crate::trig::{TrigPoly, TrigRational};
    use std::f64::consts::TAU;

    fn pt(coords: &[f64]) -> TorusPoint {
        TorusPoint::new(coords.to_vec()).unwrap()
    }

    fn shear_iso(a: f64) -> Isotopy {
        Isotopy::new(
            MapExpr::new(
                2,
                vec![ElementaryMap::Shear {
                    target: 0,
                    profile: TrigPoly::sin(a, 1, 1),
                }],
            )
            .unwrap(),
        )
        .unwrap()
    }

    fn drift_family(speeds: &[f64], a: f64) -> TransportFamily {
        let v = FieldTM::drift(speeds).unwrap();
        TransportFamily::new(v, shear_iso(a), FlowConfig::default()).unwrap()
    }

    /// Unit-time normalization of (1 + 0.5 sin(2πy), 0.2, 0).
    fn varying_base_family(a: f64) -> TransportFamily {
        let v = FieldTM::new(
            2,
            vec![
                TrigRational::from_poly(TrigPoly::constant(1.0).plus(TrigPoly::sin(0.5, 2, 1))),
                TrigRational::from_poly(TrigPoly::constant(0.2)),
                TrigRational::zero(),
            ],
        )
        .unwrap();
        TransportFamily::new(v.normalize().unwrap(), shear_iso(a), FlowConfig::default()).unwrap()
    }

    fn general_fields() -> (FieldTM, FieldTM) {
        let v = FieldTM::new(
            2,
            vec![
                TrigRational::from_poly(TrigPoly::constant(1.0).plus(TrigPoly::cos(0.25, 2, 1))),
                TrigRational::from_poly(TrigPoly::sin(0.3, 2, 1)),
                TrigRational::from_poly(TrigPoly::sin(0.2, 1, 1)),
            ],
        )
        .unwrap();
        let vh = v.normalize().unwrap();
        (v, vh)
    }

    fn general_family(a: f64) -> TransportFamily {
        let (_, vh) = general_fields();
        TransportFamily::new(vh, shear_iso(a), FlowConfig::default()).unwrap()
    }

    #[test]
    fn closed_form_detection() {
        assert!(drift_family(&[0.3, 0.7], 0.1).has_closed_form_sigma());
        assert!(varying_base_family(0.1).has_closed_form_sigma());
        assert!(!general_family(0.1).has_closed_form_sigma());
    }

    #[test]
    fn starts_at_identity_bitwise() {
        for fam in [
            drift_family(&[0.3, 0.7], 0.2),
            varying_base_family(0.2),
            general_family(0.2),
        ] {
            let x = [0.1234567, 0.87654321];
            let y = fam.eval_coords(0.0, &x).unwrap();
            assert_eq!(y, x.to_vec());
            let y = fam.eval_inverse_coords(0.0, &x).unwrap();
            assert_eq!(y, x.to_vec());
        }
    }

    #[test]
    fn ends_at_target_closed_form() {
        // Q = P ∘ R with P translation by (0.3, 0) and R the shear.
        let a = 0.2;
        let fam = drift_family(&[0.3, 0.0], a);
        let x = [0.05, 0.25];
        let got = fam.eval_coords(1.0, &x).unwrap();
        let expected = [
            wrap_coord(x[0] + a * (TAU * x[1]).sin() + 0.3).unwrap(),
            x[1],
        ];
        assert!(torus_dist_slices(&got, &expected).unwrap() < 1e-12);
    }

    #[test]
    fn ends_at_target_general_field() {
        // Independent oracle: return map of the unnormalized field applied
        // after the correction factor, via event-based crossing detection.
        let a = 0.15;
        let (v, _) = general_fields();
        let fam = general_family(a);
        let cfg = FlowConfig::default();
        for &xy in &[[0.0, 0.25], [0.4, 0.7], [0.83, 0.12]] {
            let got = fam.eval(1.0, &pt(&xy)).unwrap();
            let rx = fam.isotopy().target().eval(&pt(&xy)).unwrap();
            let expected = poincare(&v, &rx, &cfg).unwrap().image;
            assert!(
                torus_dist(&got, &expected).unwrap() < 1e-7,
                "at {xy:?}: {got:?} vs {expected:?}"
            );
        }
    }

    #[test]
    fn midpoint_of_pure_shear_family() {
        // Zero drift: T(s) = γ_{τ(s)} and τ(1/2) = 1/2 exactly, so the
        // midpoint shear displaces by a/2·sin(2πy).
        let fam = drift_family(&[0.0, 0.0], 0.2);
        let got = fam.eval_coords(0.5, &[0.0, 0.25]).unwrap();
        assert!((got[0] - 0.1).abs() < 1e-15);
        assert_eq!(got[1], 0.25);
    }

    #[test]
    fn inverse_roundtrips_mid_family() {
        for fam in [varying_base_family(0.25), general_family(0.25)] {
            let tol = if fam.has_closed_form_sigma() { 1e-12 } else { 1e-9 };
            for &s in &[0.2, 0.5, 0.77, 1.0] {
                let x = [0.37, 0.61];
                let y = fam.eval_coords(s, &x).unwrap();
                let back = fam.eval_inverse_coords(s, &y).unwrap();
                assert!(
                    torus_dist_slices(&back, &x).unwrap() < tol,
                    "s = {s}"
                );
            }
        }
    }

    fn law_samples() -> Vec<(f64, f64, f64, TorusPoint)> {
        let mut out = Vec::new();
        let xs = [[0.1, 0.3], [0.55, 0.9], [0.71, 0.02]];
        let triples = [
            (0.0, 0.4, 0.6),
            (0.2, 0.3, 0.5),
            (0.1, 0.6, -0.4),
            (0.9, -0.5, 0.3),
            (0.5, 0.5, -1.0),
        ];
        for x in xs {
            for (t, s1, s2) in triples {
                out.push((t, s1, s2, pt(&x)));
            }
        }
        out
    }

    #[test]
    fn group_law_exact_for_closed_sigma() {
        let fam = varying_base_family(0.2);
        let r = fam.group_law_residual(&law_samples()).unwrap();
        assert!(r < 1e-12, "residual {r}");
    }

    #[test]
    fn group_law_for_numeric_sigma() {
        let fam = general_family(0.2);
        let r = fam.group_law_residual(&law_samples()).unwrap();
        assert!(r < 1e-7, "residual {r}");
    }

    #[test]
    fn literal_composition_agrees_with_cancelled_form() {
        let fam = varying_base_family(0.2);
        for &s in &[0.25, 0.5, 0.8] {
            let x = [0.3, 0.65];
            let fast = fam.eval_coords(s, &x).unwrap();
            let literal = fam.eval_coords_literal(s, &x).unwrap();
            assert!(torus_dist_slices(&fast, &literal).unwrap() < 1e-9, "s = {s}");
        }
        let fam = general_family(0.2);
        for &s in &[0.25, 0.5, 0.8] {
            let x = [0.3, 0.65];
            let fast = fam.eval_coords(s, &x).unwrap();
            let literal = fam.eval_coords_literal(s, &x).unwrap();
            assert!(torus_dist_slices(&fast, &literal).unwrap() < 1e-7, "s = {s}");
        }
    }

    #[test]
    fn closed_sigma_matches_numeric_sigma() {
        let fam = varying_base_family(0.3);
        let num = fam.clone().with_numeric_sigma();
        assert!(!num.has_closed_form_sigma());
        for &s in &[0.1, 0.5, 0.9, 1.0] {
            for &xy in &[[0.0, 0.25], [0.6, 0.8]] {
                let a = fam.eval_coords(s, &xy).unwrap();
                let b = num.eval_coords(s, &xy).unwrap();
                assert!(torus_dist_slices(&a, &b).unwrap() < 1e-9);
            }
        }
    }

    #[test]
    fn frame_at_zero_is_trivial() {
        for fam in [varying_base_family(0.2), general_family(0.2)] {
            let x = [0.21, 0.43];
            let f = fam.frame(0.0, &x).unwrap();
            assert_eq!(f.xs, x.to_vec());
            assert_eq!(f.y, x.to_vec());
            assert_eq!(f.det_sigma, 1.0);
            assert_eq!(f.det_gamma, 1.0);
            assert_eq!(f.tau, 0.0);
            assert_eq!(f.dtau, 0.0);
            for i in 0..2 {
                for j in 0..2 {
                    assert_eq!(f.j_sigma[(i, j)], if i == j { 1.0 } else { 0.0 });
                }
            }
        }
    }

    #[test]
    fn frame_preimages_and_jacobian_are_consistent() {
        for fam in [varying_base_family(0.2), general_family(0.2)] {
            let (t, x) = (0.6, [0.77, 0.18]);
            let f = fam.frame(t, &x).unwrap();
            // σ_t(xs) = x.
            let fwd = fam.sigma(t, &f.xs).unwrap();
            assert!(torus_dist_slices(&fwd, &x).unwrap() < 1e-9);
            // γ_{τ(t)}(y) = xs.
            let z = fam.isotopy().eval_coords(f.tau, &f.y).unwrap();
            assert!(torus_dist_slices(&z, &f.xs).unwrap() < 1e-12);
            // Dσ_t at xs against central differences of σ_t.
            let h = 1e-6;
            for col in 0..2 {
                let mut hi = f.xs.clone();
                let mut lo = f.xs.clone();
                hi[col] = wrap_coord(hi[col] + h).unwrap();
                lo[col] = wrap_coord(lo[col] - h).unwrap();
                let yh = fam.sigma(t, &hi).unwrap();
                let yl = fam.sigma(t, &lo).unwrap();
                for row in 0..2 {
                    let fd = circle_diff(yh[row], yl[row]) / (2.0 * h);
                    assert!(
                        (f.j_sigma[(row, col)] - fd).abs() < 1e-5,
                        "entry ({row},{col})"
                    );
                }
            }
            // Determinant consistency.
            assert!((f.j_sigma.determinant() - f.det_sigma).abs() < 1e-9);
        }
    }

    #[test]
    fn frame_generator_vanishes_in_flat_regions() {
        let fam = varying_base_family(0.2);
        // Exact zeros where e^{-1/t} underflows; merely astronomical decay
        // a bit further in.
        for &t in &[0.0, 0.001, 0.999, 1.0] {
            let f = fam.frame(t, &[0.4, 0.33]).unwrap();
            assert_eq!(f.dtau, 0.0);
            assert_eq!(f.gen, vec![0.0, 0.0]);
        }
        for &t in &[0.01, 0.99] {
            let f = fam.frame(t, &[0.4, 0.33]).unwrap();
            assert!(f.dtau.abs() < 1e-30);
        }
    }

    #[test]
    fn family_requires_unit_time_field() {
        let v = FieldTM::new(
            2,
            vec![
                TrigRational::from_poly(TrigPoly::constant(1.0).plus(TrigPoly::sin(0.5, 2, 1))),
                TrigRational::from_poly(TrigPoly::constant(0.2)),
                TrigRational::zero(),
            ],
        )
        .unwrap();
        let err = TransportFamily::new(v, shear_iso(0.1), FlowConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Precondition(_)));
    }
}
