//! The suspended field u on T × T^m: a volume-preserving field whose return
//! map to the section t = 0 is the prescribed diffeomorphism Q = P ∘ R.
//!
//! The field comes in two layers. The unit-time generator U has time
//! component 1 and spatial part `U_M(t, x) = v̂_M(t, x) + τ'(t)·Dσ_t·g`,
//! the derivative of the transport flow; its time-1 map is exactly T(1) = Q,
//! but it need not preserve volume. The density
//! `ρ(t, x) = v_T(0, y) / det DT(t)|_y` with `y = T(t)⁻¹(x)` is the
//! pushforward of the section density v_T(0, ·) along the family; the final
//! field u = ρ·U preserves the product volume dt ∧ dx while keeping the same
//! orbits, hence the same return map. At the section, ρ(0, ·) = v_T(0, ·)
//! exactly, and ρ matches across the seam precisely when Q preserves the
//! weighted section volume λ = v_T(0, ·)·dx.

use crate::error::{Error, Result, Stage};
use crate::field::{FieldEval, FieldTM};
use crate::flow::FlowConfig;
use crate::geometry::grid_with_budget;
use crate::isotopy::Isotopy;
use crate::maps::MapExpr;
use crate::transport::TransportFamily;

/// Allowed deviation of the correction-factor Jacobian determinant from 1.
pub const ISO_DET_TOL: f64 = 1e-9;
/// Allowed mismatch of the density across the section seam at build time.
pub const SEAM_TOL: f64 = 1e-6;

/// The suspended field u = ρ·U as an evaluable field on T × T^m.
#[derive(Debug, Clone)]
pub struct SuspensionField {
    family: TransportFamily,
    base: FieldTM,
    rho_floor: f64,
}

/// One evaluation of the layered field: density, unit-time generator
/// (length 1 + m), and the correction term τ'·Dσ·g alone (length m).
struct Parts {
    rho: f64,
    unit: Vec<f64>,
    corr: Vec<f64>,
}

impl SuspensionField {
    /// Wrap a transport family and its originating field; samples the
    /// density on a coarse grid and fails if it loses positivity.
    pub fn new(family: TransportFamily, base: FieldTM) -> Result<Self> {
        if family.dim() != base.dim() {
            return Err(Error::DimensionMismatch {
                expected: base.dim(),
                got: family.dim(),
            });
        }
        let mut field = SuspensionField {
            family,
            base,
            rho_floor: f64::NAN,
        };
        let mut floor = f64::INFINITY;
        let pts = grid_with_budget(5, field.dim(), 1 << 12)?;
        for &t in &[0.0, 0.15, 0.35, 0.5, 0.65, 0.85, 1.0] {
            for p in &pts {
                floor = floor.min(field.density(t, p.coords())?);
            }
        }
        if !(floor > 0.0) {
            return Err(Error::Domain(format!(
                "suspension density loses positivity: sampled minimum {floor}"
            )));
        }
        field.rho_floor = floor;
        Ok(field)
    }

    pub fn family(&self) -> &TransportFamily {
        &self.family
    }

    pub fn base(&self) -> &FieldTM {
        &self.base
    }

    /// Sampled positive lower bound of the density.
    pub fn rho_floor(&self) -> f64 {
        self.rho_floor
    }

    fn parts(&self, t: f64, x: &[f64]) -> Result<Parts> {
        let m = self.dim();
        let frame = self.family.frame(t, x)?;
        let mut unit = vec![0.0; m + 1];
        self.family.v_hat().eval_into(t, x, &mut unit)?;
        let mut corr = vec![0.0; m];
        if frame.dtau != 0.0 {
            for i in 0..m {
                let push: f64 = (0..m).map(|j| frame.j_sigma[(i, j)] * frame.gen[j]).sum();
                corr[i] = frame.dtau * push;
                unit[1 + i] += corr[i];
            }
        }
        let mut vals = vec![0.0; m + 1];
        vals[1..].copy_from_slice(&frame.y);
        let vt0 = self.base.components()[0].eval(&vals);
        let rho = vt0 / (frame.det_sigma * frame.det_gamma);
        Ok(Parts { rho, unit, corr })
    }

    /// The density ρ(t, x) at a lifted time. The construction defines ρ for
    /// any real t; 1-periodicity in t is a consequence of Q preserving the
    /// weighted section volume, so callers probe it with raw times.
    pub fn density(&self, t: f64, x: &[f64]) -> Result<f64> {
        let frame = self.family.frame(t, x)?;
        let m = self.dim();
        let mut vals = vec![0.0; m + 1];
        vals[1..].copy_from_slice(&frame.y);
        let vt0 = self.base.components()[0].eval(&vals);
        Ok(vt0 / (frame.det_sigma * frame.det_gamma))
    }

    /// The unit-time generator U(t, x) = (1, U_M); time taken mod 1.
    pub fn unit_field_into(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        let parts = self.parts(t.rem_euclid(1.0), x)?;
        out.copy_from_slice(&parts.unit);
        Ok(())
    }

    /// Max-norm of u − ρ·v̂, the part contributed by the isotopy; vanishes
    /// to all orders at the section.
    pub fn correction_norm(&self, t: f64, x: &[f64]) -> Result<f64> {
        let parts = self.parts(t.rem_euclid(1.0), x)?;
        Ok(parts
            .corr
            .iter()
            .map(|c| (parts.rho * c).abs())
            .fold(0.0, f64::max))
    }

    /// Max over a grid of |ρ(1, x) − ρ(0, x)|.
    pub fn seam_residual(&self, n: usize) -> Result<f64> {
        let pts = grid_with_budget(n, self.dim(), 1 << 14)?;
        let mut worst: f64 = 0.0;
        for p in &pts {
            let lo = self.density(0.0, p.coords())?;
            let hi = self.density(1.0, p.coords())?;
            worst = worst.max((hi - lo).abs());
        }
        Ok(worst)
    }
}

impl FieldEval for SuspensionField {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn eval_into(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        let parts = self.parts(t.rem_euclid(1.0), x)?;
        for (o, u) in out.iter_mut().zip(&parts.unit) {
            *o = parts.rho * u;
        }
        Ok(())
    }

    fn is_unit_time(&self) -> bool {
        false
    }

    fn time_floor_hint(&self) -> Option<f64> {
        Some(self.rho_floor)
    }
}

fn stage_failure(stage: Stage, err: Error) -> Error {
    match err {
        Error::ConstructionFailure { .. } => err,
        other => Error::ConstructionFailure {
            stage,
            message: other.to_string(),
        },
    }
}

/// Build the suspended field for the target return map Q = P ∘ R, where P
/// is the return map of `v` and `R = correction`.
///
/// Stages, each failing with a `ConstructionFailure` naming it:
///  - normalize: `v` must have a positive time component and zero divergence;
///    it is divided through by v_T.
///  - transport: the correction factor must admit a scheduled isotopy from
///    the identity.
///  - density: every factor of the correction must have unit Jacobian
///    determinant along the schedule, the resulting density must stay
///    positive, and it must agree across the seam t = 1 ↦ t = 0, which is
///    exactly preservation of the weighted section volume
///    λ = v_T(0, ·)·dx by Q.
pub fn suspension_build(
    v: &FieldTM,
    correction: &MapExpr,
    cfg: FlowConfig,
) -> Result<SuspensionField> {
    v.validated(12).map_err(|e| stage_failure(Stage::Normalize, e))?;
    let v_hat = v.normalize().map_err(|e| stage_failure(Stage::Normalize, e))?;
    let iso = Isotopy::new(correction.clone()).map_err(|e| stage_failure(Stage::Transport, e))?;
    let family =
        TransportFamily::new(v_hat, iso, cfg).map_err(|e| stage_failure(Stage::Transport, e))?;
    for &s in &[0.25, 0.5, 0.75, 1.0] {
        let det = family.isotopy().jacobian_det(s)?;
        if !(det > 0.0) || (det - 1.0).abs() > ISO_DET_TOL {
            return Err(Error::ConstructionFailure {
                stage: Stage::Density,
                message: format!(
                    "correction factor scales the section volume (lambda): \
                     det of the scheduled Jacobian is {det} at s = {s}, expected 1"
                ),
            });
        }
    }
    let field =
        SuspensionField::new(family, v.clone()).map_err(|e| stage_failure(Stage::Density, e))?;
    let seam = field.seam_residual(4)?;
    if seam > SEAM_TOL {
        return Err(Error::ConstructionFailure {
            stage: Stage::Density,
            message: format!(
                "density mismatch across the section: |ρ(1, x) − ρ(0, x)| reaches {seam}; \
                 the target map must preserve the weighted section volume (lambda)"
            ),
        });
    }
    Ok(field)
}

/// Central-difference spatial derivative of the extended transport flow,
/// the independent oracle for the unit generator U_M.
pub fn unit_field_fd(
    family: &TransportFamily,
    t: f64,
    x: &[f64],
    h: f64,
) -> Result<Vec<f64>> {
    use crate::geometry::{circle_diff, LiftedPoint};
    let p = LiftedPoint::new(t, x.to_vec());
    let a = family.extended_flow(&p, h)?;
    let b = family.extended_flow(&p, -h)?;
    Ok(a.x
        .iter()
        .zip(&b.x)
        .map(|(&u, &l)| circle_diff(u, l) / (2.0 * h))
        .collect())
}
