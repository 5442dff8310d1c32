//! Fixed-step RK4 flows on T × T^m, their Jacobians, and return maps to the
//! section t = 0.
//!
//! Integration happens on the universal cover: coordinates accumulate
//! without wrapping mid-trajectory (field components are 1-periodic, so
//! lifted evaluation is consistent), and only the endpoints are wrapped.
//! The Jacobian of the flow map is computed either by integrating the
//! variational equation Ṁ = Df·M alongside the state, or by central finite
//! differences on the initial condition.
//!
//! For a field whose time component is identically 1, the section t = 0
//! returns to itself after exactly unit time; `section_flow` exposes the
//! resulting family of spatial maps σ_s (flow from (0, x) to (s, σ_s(x))),
//! whose value at s = 1 is the return map.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::field::FieldEval;
use crate::geometry::{grid_with_budget, wrap_coord, CylPoint, TorusPoint};

/// Upper bound on RK4 steps for a single flow call.
pub const STEP_BUDGET: u128 = 100_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JacobianMode {
    /// Integrate Ṁ = Df·M alongside the state (uses the field's closed-form
    /// Jacobian when it has one).
    Variational,
    /// Central finite differences on the initial condition, step 1e-5.
    FiniteDifference,
}

#[derive(Debug, Clone, Copy)]
pub struct FlowConfig {
    /// RK4 step size; must satisfy 0 < h ≤ 0.1.
    pub h: f64,
    /// Tolerance on |t − 1| at a section crossing; must satisfy
    /// 0 < crossing_tol ≤ h².
    pub crossing_tol: f64,
    pub jacobian: JacobianMode,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            h: 1e-3,
            crossing_tol: 1e-12,
            jacobian: JacobianMode::Variational,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.h > 0.0 && self.h <= 0.1) {
            return Err(Error::Precondition(format!(
                "step size h = {} outside (0, 0.1]",
                self.h
            )));
        }
        if !(self.crossing_tol > 0.0 && self.crossing_tol <= self.h * self.h) {
            return Err(Error::Precondition(format!(
                "crossing tolerance {} outside (0, h²]",
                self.crossing_tol
            )));
        }
        Ok(())
    }
}

/// Result of following an orbit from the section t = 0 back to itself.
#[derive(Debug, Clone)]
pub struct ReturnData {
    pub image: TorusPoint,
    pub return_time: f64,
    /// Crossings of the section consumed; always 1 for first-return maps.
    pub winding: u32,
}

/// One RK4 step of size `h` from state `y` (length 1 + m, y[0] = t).
fn rk4_step<F: FieldEval + ?Sized>(
    field: &F,
    y: &[f64],
    h: f64,
    out: &mut Vec<f64>,
    scratch: &mut Rk4Scratch,
) -> Result<()> {
    let n = y.len();
    let Rk4Scratch { k1, k2, k3, k4, stage } = scratch;
    field.eval_into(y[0], &y[1..], k1)?;
    for i in 0..n {
        stage[i] = y[i] + 0.5 * h * k1[i];
    }
    field.eval_into(stage[0], &stage[1..], k2)?;
    for i in 0..n {
        stage[i] = y[i] + 0.5 * h * k2[i];
    }
    field.eval_into(stage[0], &stage[1..], k3)?;
    for i in 0..n {
        stage[i] = y[i] + h * k3[i];
    }
    field.eval_into(stage[0], &stage[1..], k4)?;
    out.clear();
    for i in 0..n {
        out.push(y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]));
    }
    Ok(())
}

struct Rk4Scratch {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    stage: Vec<f64>,
}

impl Rk4Scratch {
    fn new(n: usize) -> Self {
        Rk4Scratch {
            k1: vec![0.0; n],
            k2: vec![0.0; n],
            k3: vec![0.0; n],
            k4: vec![0.0; n],
            stage: vec![0.0; n],
        }
    }
}

fn check_finite(y: &[f64], steps: u64) -> Result<()> {
    if y.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::BlowUp { steps })
    }
}

fn step_plan(duration: f64, h: f64) -> Result<(u64, f64, f64)> {
    let n = (duration.abs() / h).floor();
    if n as u128 + 1 > STEP_BUDGET {
        return Err(Error::ResourceBudget {
            requested: n as u128 + 1,
            budget: STEP_BUDGET,
        });
    }
    let hs = h.copysign(duration);
    let n = n as u64;
    let rem = duration - n as f64 * hs;
    Ok((n, hs, rem))
}

/// Integrate on the cover from (t0, x0) for the signed `duration`: full
/// steps of size h, then one partial step landing on the endpoint.
pub(crate) fn flow_lifted<F: FieldEval + ?Sized>(
    field: &F,
    t0: f64,
    x0: &[f64],
    duration: f64,
    cfg: &FlowConfig,
) -> Result<(f64, Vec<f64>)> {
    cfg.validate()?;
    let n = field.dim();
    if x0.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: x0.len(),
        });
    }
    let mut y = Vec::with_capacity(n + 1);
    y.push(t0);
    y.extend_from_slice(x0);
    if duration == 0.0 {
        return Ok((t0, x0.to_vec()));
    }
    let (full, hs, rem) = step_plan(duration, cfg.h)?;
    let mut scratch = Rk4Scratch::new(n + 1);
    let mut next = Vec::with_capacity(n + 1);
    for k in 0..full {
        rk4_step(field, &y, hs, &mut next, &mut scratch)?;
        std::mem::swap(&mut y, &mut next);
        check_finite(&y, k + 1)?;
    }
    if rem.abs() > 1e-14 {
        rk4_step(field, &y, rem, &mut next, &mut scratch)?;
        std::mem::swap(&mut y, &mut next);
        check_finite(&y, full + 1)?;
    }
    let x = y.split_off(1);
    Ok((y[0], x))
}

/// Flow map of the field: wrapped endpoint after `duration`.
pub fn flow<F: FieldEval + ?Sized>(
    field: &F,
    start: &CylPoint,
    duration: f64,
    cfg: &FlowConfig,
) -> Result<CylPoint> {
    let (t, x) = flow_lifted(field, start.t, start.x.coords(), duration, cfg)?;
    CylPoint::new(t, TorusPoint::new(x)?)
}

/// One RK4 step of the variational system (y, M), Ṁ = Df(y)·M.
#[allow(clippy::too_many_arguments)]
fn rk4_var_step<F: FieldEval + ?Sized>(
    field: &F,
    y: &[f64],
    mat: &DMatrix<f64>,
    h: f64,
    y_out: &mut Vec<f64>,
    m_out: &mut DMatrix<f64>,
    scratch: &mut Rk4Scratch,
    jac: &mut DMatrix<f64>,
) -> Result<()> {
    let n = y.len();
    let mut stage_m;
    field.eval_into(y[0], &y[1..], &mut scratch.k1)?;
    field.jacobian_into(y[0], &y[1..], jac)?;
    let km1 = &*jac * mat;

    for i in 0..n {
        scratch.stage[i] = y[i] + 0.5 * h * scratch.k1[i];
    }
    stage_m = mat + &km1 * (0.5 * h);
    field.eval_into(scratch.stage[0], &scratch.stage[1..], &mut scratch.k2)?;
    field.jacobian_into(scratch.stage[0], &scratch.stage[1..], jac)?;
    let km2 = &*jac * &stage_m;

    for i in 0..n {
        scratch.stage[i] = y[i] + 0.5 * h * scratch.k2[i];
    }
    stage_m = mat + &km2 * (0.5 * h);
    field.eval_into(scratch.stage[0], &scratch.stage[1..], &mut scratch.k3)?;
    field.jacobian_into(scratch.stage[0], &scratch.stage[1..], jac)?;
    let km3 = &*jac * &stage_m;

    for i in 0..n {
        scratch.stage[i] = y[i] + h * scratch.k3[i];
    }
    stage_m = mat + &km3 * h;
    field.eval_into(scratch.stage[0], &scratch.stage[1..], &mut scratch.k4)?;
    field.jacobian_into(scratch.stage[0], &scratch.stage[1..], jac)?;
    let km4 = &*jac * &stage_m;

    y_out.clear();
    for i in 0..n {
        y_out.push(
            y[i] + h / 6.0
                * (scratch.k1[i] + 2.0 * scratch.k2[i] + 2.0 * scratch.k3[i] + scratch.k4[i]),
        );
    }
    *m_out = mat + (km1 + km2 * 2.0 + km3 * 2.0 + km4) * (h / 6.0);
    Ok(())
}

/// Endpoint and full (1+m)×(1+m) derivative of the flow map with respect to
/// the initial condition (t0, x0), on the cover.
pub(crate) fn flow_jacobian_lifted<F: FieldEval + ?Sized>(
    field: &F,
    t0: f64,
    x0: &[f64],
    duration: f64,
    cfg: &FlowConfig,
) -> Result<(f64, Vec<f64>, DMatrix<f64>)> {
    cfg.validate()?;
    let n = field.dim();
    if x0.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: x0.len(),
        });
    }
    match cfg.jacobian {
        JacobianMode::Variational => {
            let mut y = Vec::with_capacity(n + 1);
            y.push(t0);
            y.extend_from_slice(x0);
            let mut mat = DMatrix::identity(n + 1, n + 1);
            if duration == 0.0 {
                return Ok((t0, x0.to_vec(), mat));
            }
            let (full, hs, rem) = step_plan(duration, cfg.h)?;
            let mut scratch = Rk4Scratch::new(n + 1);
            let mut jac = DMatrix::zeros(n + 1, n + 1);
            let mut y_next = Vec::with_capacity(n + 1);
            let mut m_next = DMatrix::zeros(n + 1, n + 1);
            for k in 0..full {
                rk4_var_step(field, &y, &mat, hs, &mut y_next, &mut m_next, &mut scratch, &mut jac)?;
                std::mem::swap(&mut y, &mut y_next);
                std::mem::swap(&mut mat, &mut m_next);
                check_finite(&y, k + 1)?;
            }
            if rem.abs() > 1e-14 {
                rk4_var_step(field, &y, &mat, rem, &mut y_next, &mut m_next, &mut scratch, &mut jac)?;
                std::mem::swap(&mut y, &mut y_next);
                std::mem::swap(&mut mat, &mut m_next);
                check_finite(&y, full + 1)?;
            }
            let x = y.split_off(1);
            Ok((y[0], x, mat))
        }
        JacobianMode::FiniteDifference => {
            let (t_end, x_end) = flow_lifted(field, t0, x0, duration, cfg)?;
            let h = 1e-5;
            let mut mat = DMatrix::zeros(n + 1, n + 1);
            for col in 0..=n {
                let (mut tp, mut xp) = (t0, x0.to_vec());
                let (mut tm, mut xm) = (t0, x0.to_vec());
                if col == 0 {
                    tp += h;
                    tm -= h;
                } else {
                    xp[col - 1] += h;
                    xm[col - 1] -= h;
                }
                let (th, xh) = flow_lifted(field, tp, &xp, duration, cfg)?;
                let (tl, xl) = flow_lifted(field, tm, &xm, duration, cfg)?;
                mat[(0, col)] = (th - tl) / (2.0 * h);
                for row in 1..=n {
                    mat[(row, col)] = (xh[row - 1] - xl[row - 1]) / (2.0 * h);
                }
            }
            Ok((t_end, x_end, mat))
        }
    }
}

/// Wrapped endpoint together with the flow derivative.
pub fn flow_jacobian<F: FieldEval + ?Sized>(
    field: &F,
    start: &CylPoint,
    duration: f64,
    cfg: &FlowConfig,
) -> Result<(CylPoint, DMatrix<f64>)> {
    let (t, x, mat) = flow_jacobian_lifted(field, start.t, start.x.coords(), duration, cfg)?;
    Ok((CylPoint::new(t, TorusPoint::new(x)?)?, mat))
}

/// Coarse sampled lower bound for the time component.
fn sampled_time_floor<F: FieldEval + ?Sized>(field: &F, n: usize) -> Result<f64> {
    let pts = grid_with_budget(n, field.dim(), 1 << 16)?;
    let mut out = vec![0.0; field.dim() + 1];
    let mut min = f64::INFINITY;
    for i in 0..n {
        let t = i as f64 / n as f64;
        for p in &pts {
            field.eval_into(t, p.coords(), &mut out)?;
            min = min.min(out[0]);
        }
    }
    Ok(min)
}

/// First-return map to the section t = 0.
///
/// Unit-time fields return after exactly time 1, so the image is the time-1
/// flow. Otherwise the orbit is followed until t crosses 1 and the crossing
/// is refined by bisecting the size of the final RK4 step until
/// |t − 1| ≤ crossing_tol. Fails with `NoReturn` if the orbit spends more
/// than 10/min(v_T) without crossing, and with `Precondition` when the
/// sampled time component is not positive.
pub fn poincare<F: FieldEval + ?Sized>(
    field: &F,
    x0: &TorusPoint,
    cfg: &FlowConfig,
) -> Result<ReturnData> {
    cfg.validate()?;
    let m = field.dim();
    if x0.dim() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: x0.dim(),
        });
    }
    if field.is_unit_time() {
        let (_, x) = flow_lifted(field, 0.0, x0.coords(), 1.0, cfg)?;
        return Ok(ReturnData {
            image: TorusPoint::new(x)?,
            return_time: 1.0,
            winding: 1,
        });
    }
    let floor = match field.time_floor_hint() {
        Some(f) => f,
        None => sampled_time_floor(field, 8)?,
    };
    if floor <= 0.0 {
        return Err(Error::Precondition(format!(
            "time-component positivity required for a return map; sampled floor {floor}"
        )));
    }
    let guard = 10.0 / floor;
    let mut y = Vec::with_capacity(m + 1);
    y.push(0.0);
    y.extend_from_slice(x0.coords());
    let mut scratch = Rk4Scratch::new(m + 1);
    let mut next = Vec::with_capacity(m + 1);
    let mut elapsed = 0.0;
    let mut steps: u64 = 0;
    loop {
        if elapsed > guard {
            return Err(Error::NoReturn { guard });
        }
        rk4_step(field, &y, cfg.h, &mut next, &mut scratch)?;
        steps += 1;
        check_finite(&next, steps)?;
        if next[0] >= 1.0 {
            break;
        }
        std::mem::swap(&mut y, &mut next);
        elapsed += cfg.h;
    }
    // Bisect the size of the final step: t(0) < 1 ≤ t(h).
    let (mut lo, mut hi) = (0.0, cfg.h);
    let mut t_hi = next[0];
    let delta = if (t_hi - 1.0).abs() <= cfg.crossing_tol {
        hi
    } else {
        let mut delta = hi;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            rk4_step(field, &y, mid, &mut next, &mut scratch)?;
            let t_mid = next[0];
            if (t_mid - 1.0).abs() <= cfg.crossing_tol {
                delta = mid;
                break;
            }
            if t_mid < 1.0 {
                lo = mid;
            } else {
                hi = mid;
                t_hi = t_mid;
            }
            delta = hi;
            if hi - lo < f64::EPSILON * cfg.h {
                break;
            }
        }
        let _ = t_hi;
        delta
    };
    rk4_step(field, &y, delta, &mut next, &mut scratch)?;
    if (next[0] - 1.0).abs() > cfg.crossing_tol {
        return Err(Error::InversionFailure(format!(
            "section crossing refinement stalled at |t - 1| = {}",
            (next[0] - 1.0).abs()
        )));
    }
    Ok(ReturnData {
        image: TorusPoint::new(next[1..].to_vec())?,
        return_time: elapsed + delta,
        winding: 1,
    })
}

/// The spatial map σ_s of a unit-time field: flow from (0, x) lands at
/// (s, σ_s(x)). Defined for any real s; σ_{s+1} = σ_s ∘ σ_1 with σ_1 the
/// return map.
pub fn section_flow<F: FieldEval + ?Sized>(
    field: &F,
    s: f64,
    x: &TorusPoint,
    cfg: &FlowConfig,
) -> Result<TorusPoint> {
    require_unit_time(field)?;
    let (_, xe) = flow_lifted(field, 0.0, x.coords(), s, cfg)?;
    TorusPoint::new(xe)
}

/// Inverse of `section_flow`: flow backward from (s, x) to the section.
pub fn section_flow_inverse<F: FieldEval + ?Sized>(
    field: &F,
    s: f64,
    x: &TorusPoint,
    cfg: &FlowConfig,
) -> Result<TorusPoint> {
    require_unit_time(field)?;
    let (_, xe) = flow_lifted(field, s, x.coords(), -s, cfg)?;
    TorusPoint::new(xe)
}

fn require_unit_time<F: FieldEval + ?Sized>(field: &F) -> Result<()> {
    if field.is_unit_time() {
        Ok(())
    } else {
        Err(Error::Precondition(
            "section flow family requires a unit time component; normalize the field first".into(),
        ))
    }
}

/// Wrap a lifted time coordinate into [0, 1) for reporting.
pub fn wrap_time(t: f64) -> Result<f64> {
    wrap_coord(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::FieldTM;
    use crate::geometry::{circle_diff, torus_dist};
    use crate::trig::{TrigPoly, TrigRational};
    use std::f64::consts::TAU;

    fn varying_base_field() -> FieldTM {
        FieldTM::new(
            2,
            vec![
                TrigRational::from_poly(TrigPoly::constant(1.0).plus(TrigPoly::sin(0.5, 2, 1))),
                TrigRational::from_poly(TrigPoly::constant(0.2)),
                TrigRational::zero(),
            ],
        )
        .unwrap()
    }

    fn general_field() -> FieldTM {
        FieldTM::new(
            2,
            vec![
                TrigRational::from_poly(TrigPoly::constant(1.0).plus(TrigPoly::cos(0.25, 2, 1))),
                TrigRational::from_poly(TrigPoly::sin(0.3, 2, 1)),
                TrigRational::from_poly(TrigPoly::sin(0.2, 1, 1)),
            ],
        )
        .unwrap()
    }

    fn pt(coords: &[f64]) -> TorusPoint {
        TorusPoint::new(coords.to_vec()).unwrap()
    }

    #[test]
    fn partial_final_step_lands_exactly() {
        let v = FieldTM::drift(&[0.4]).unwrap();
        let cfg = FlowConfig::default();
        let (t, x) = flow_lifted(&v, 0.0, &[0.0], 0.0015, &cfg).unwrap();
        assert!((t - 0.0015).abs() < 1e-15);
        assert!((x[0] - 0.4 * 0.0015).abs() < 1e-15);
    }

    #[test]
    fn step_budget_enforced() {
        let v = FieldTM::drift(&[0.4]).unwrap();
        let cfg = FlowConfig {
            h: 1e-3,
            ..Default::default()
        };
        let err = flow_lifted(&v, 0.0, &[0.0], 1e9, &cfg).unwrap_err();
        assert!(matches!(err, Error::ResourceBudget { .. }));
    }

    #[test]
    fn config_bounds_enforced() {
        assert!(FlowConfig {
            h: 0.2,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(FlowConfig {
            h: 1e-3,
            crossing_tol: 1e-5,
            jacobian: JacobianMode::Variational,
        }
        .validate()
        .is_err());
    }

    #[test]
    fn return_map_with_constant_orbit_speed() {
        // Along y = 1/4 the time component is the constant 3/2, so the
        // orbit returns after time 2/3 having moved 0.2 · 2/3 = 2/15 in x.
        let v = varying_base_field();
        let cfg = FlowConfig::default();
        let r = poincare(&v, &pt(&[0.0, 0.25]), &cfg).unwrap();
        assert!((r.return_time - 2.0 / 3.0).abs() < 1e-9, "{}", r.return_time);
        assert!(torus_dist(&r.image, &pt(&[2.0 / 15.0, 0.25])).unwrap() < 1e-9);
        assert_eq!(r.winding, 1);
    }

    #[test]
    fn drift_return_map_is_translation() {
        let v = FieldTM::drift(&[0.3819660112501051, 0.7]).unwrap();
        let cfg = FlowConfig::default();
        let r = poincare(&v, &pt(&[0.1, 0.9]), &cfg).unwrap();
        assert_eq!(r.return_time, 1.0);
        assert!(torus_dist(&r.image, &pt(&[0.4819660112501051, 0.6])).unwrap() < 1e-12);
    }

    #[test]
    fn normalized_field_has_unit_return_time_and_same_return_map() {
        let v = varying_base_field();
        let vh = v.normalize().unwrap();
        let cfg = FlowConfig::default();
        for &xy in &[[0.0, 0.25], [0.3, 0.7], [0.81, 0.05], [0.5, 0.5]] {
            let a = poincare(&v, &pt(&xy), &cfg).unwrap();
            let b = poincare(&vh, &pt(&xy), &cfg).unwrap();
            assert_eq!(b.return_time, 1.0);
            assert!(
                torus_dist(&a.image, &b.image).unwrap() <= 1e-8,
                "orbit reparametrization changed the return map at {xy:?}"
            );
        }
    }

    #[test]
    fn section_flow_midpoint_of_normalized_field() {
        // v̂_x along y = 1/4 is 2/15, so σ_{1/2} shifts x by 1/15.
        let vh = varying_base_field().normalize().unwrap();
        let cfg = FlowConfig::default();
        let y = section_flow(&vh, 0.5, &pt(&[0.0, 0.25]), &cfg).unwrap();
        assert!(torus_dist(&y, &pt(&[1.0 / 15.0, 0.25])).unwrap() < 1e-10);
    }

    #[test]
    fn section_flow_inverse_roundtrips() {
        let vh = general_field().normalize().unwrap();
        let cfg = FlowConfig::default();
        let x = pt(&[0.31, 0.77]);
        for &s in &[0.2, 0.5, 0.93] {
            let y = section_flow(&vh, s, &x, &cfg).unwrap();
            let back = section_flow_inverse(&vh, s, &y, &cfg).unwrap();
            assert!(torus_dist(&back, &x).unwrap() < 1e-10);
        }
    }

    #[test]
    fn section_flow_requires_unit_time() {
        let v = varying_base_field();
        let cfg = FlowConfig::default();
        assert!(matches!(
            section_flow(&v, 0.5, &pt(&[0.1, 0.2]), &cfg),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn section_flow_equivariance_under_return_map() {
        // σ_{s+1} = σ_s ∘ σ_1.
        let vh = general_field().normalize().unwrap();
        let cfg = FlowConfig::default();
        let x = pt(&[0.2, 0.6]);
        let s = 0.3;
        let lhs = section_flow(&vh, s + 1.0, &x, &cfg).unwrap();
        let p = section_flow(&vh, 1.0, &x, &cfg).unwrap();
        let rhs = section_flow(&vh, s, &p, &cfg).unwrap();
        assert!(torus_dist(&lhs, &rhs).unwrap() < 1e-9);
    }

    #[test]
    fn flow_group_law() {
        let v = general_field();
        let cfg = FlowConfig::default();
        let p = CylPoint::new(0.0, pt(&[0.15, 0.85])).unwrap();
        let q1 = flow(&v, &p, 0.3, &cfg).unwrap();
        let q2 = flow(&v, &q1, 0.5, &cfg).unwrap();
        let direct = flow(&v, &p, 0.8, &cfg).unwrap();
        assert!((circle_diff(q2.t, direct.t)).abs() < 1e-9);
        assert!(torus_dist(&q2.x, &direct.x).unwrap() < 1e-9);
    }

    /// m = 1 field with closed-form return data: v = (1 + a sin(2πx), c).
    /// x moves at constant speed c, so t(s) = s + a/(2πc)·(cos(2πx0) −
    /// cos(2π(x0 + cs))) and the return time solves t(s*) = 1 by Newton.
    fn order_test_oracle(a: f64, c: f64, x0: f64) -> (f64, f64) {
        let t = |s: f64| s + a / (TAU * c) * ((TAU * x0).cos() - (TAU * (x0 + c * s)).cos());
        let dt = |s: f64| 1.0 + a * (TAU * (x0 + c * s)).sin();
        let mut s = 1.0;
        for _ in 0..100 {
            let f = t(s) - 1.0;
            if f.abs() < 1e-15 {
                break;
            }
            s -= f / dt(s);
        }
        (s, (x0 + c * s).rem_euclid(1.0))
    }

    #[test]
    fn return_map_converges_at_fourth_order() {
        let (a, c, x0) = (0.7, 1.3, 0.17);
        let v = FieldTM::new(
            1,
            vec![
                TrigRational::from_poly(TrigPoly::constant(1.0).plus(TrigPoly::sin(a, 1, 1))),
                TrigRational::from_poly(TrigPoly::constant(c)),
            ],
        )
        .unwrap();
        let (s_star, x_star) = order_test_oracle(a, c, x0);
        let err = |h: f64| -> (f64, f64) {
            let cfg = FlowConfig {
                h,
                crossing_tol: 1e-13,
                jacobian: JacobianMode::Variational,
            };
            let r = poincare(&v, &pt(&[x0]), &cfg).unwrap();
            (
                (r.return_time - s_star).abs(),
                circle_diff(r.image.coords()[0], x_star).abs(),
            )
        };
        let (et1, ex1) = err(4e-3);
        let (et2, ex2) = err(2e-3);
        let (et3, ex3) = err(1e-3);
        for (e_coarse, e_fine) in [(et1, et2), (et2, et3), (ex1, ex2), (ex2, ex3)] {
            assert!(e_coarse > 1e-13, "error already at the crossing floor");
            let order = (e_coarse / e_fine).log2();
            assert!(
                order >= 3.5,
                "observed order {order} (errors {e_coarse} -> {e_fine})"
            );
        }
    }

    #[test]
    fn time_one_spatial_jacobian_preserves_volume() {
        // Unit-time field with divergence-free spatial part: the return map
        // preserves Lebesgue volume, so det of the spatial block is 1.
        let v = FieldTM::new(
            2,
            vec![
                TrigRational::one(),
                TrigRational::from_poly(TrigPoly::sin(0.3, 2, 1)),
                TrigRational::from_poly(TrigPoly::sin(0.2, 1, 1)),
            ],
        )
        .unwrap();
        let cfg = FlowConfig::default();
        for &xy in &[[0.0, 0.0], [0.3, 0.7], [0.62, 0.11]] {
            let (_, _, mat) = flow_jacobian_lifted(&v, 0.0, &xy, 1.0, &cfg).unwrap();
            let spatial = mat.view((1, 1), (2, 2)).clone_owned();
            let det = spatial.determinant();
            assert!((det - 1.0).abs() < 1e-7, "det {det} at {xy:?}");
        }
    }

    #[test]
    fn variational_and_finite_difference_jacobians_agree() {
        let v = general_field();
        let base = FlowConfig::default();
        let fd_cfg = FlowConfig {
            jacobian: JacobianMode::FiniteDifference,
            ..base
        };
        let (t1, x1, m_var) = flow_jacobian_lifted(&v, 0.0, &[0.21, 0.64], 0.7, &base).unwrap();
        let (t2, x2, m_fd) = flow_jacobian_lifted(&v, 0.0, &[0.21, 0.64], 0.7, &fd_cfg).unwrap();
        assert!((t1 - t2).abs() < 1e-12);
        assert!((x1[0] - x2[0]).abs() < 1e-12);
        assert!((x1[1] - x2[1]).abs() < 1e-12);
        for i in 0..3 {
            for j in 0..3 {
                assert!(
                    (m_var[(i, j)] - m_fd[(i, j)]).abs() < 1e-6,
                    "entry ({i},{j}): variational {} fd {}",
                    m_var[(i, j)],
                    m_fd[(i, j)]
                );
            }
        }
    }

    #[test]
    fn variational_jacobian_inverts_along_reverse_flow() {
        // D(flow^{-s}) at the endpoint is the inverse of D(flow^{s}).
        let vh = general_field().normalize().unwrap();
        let cfg = FlowConfig::default();
        let (t1, x1, fwd) = flow_jacobian_lifted(&vh, 0.0, &[0.4, 0.9], 0.6, &cfg).unwrap();
        let (t0, _, rev) = flow_jacobian_lifted(&vh, t1, &x1, -0.6, &cfg).unwrap();
        assert!(t0.abs() < 1e-12);
        let prod = rev * fwd;
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((prod[(i, j)] - expect).abs() < 1e-8);
            }
        }
    }
}
