//! Vector fields on the cylinder T × T^m with trigonometric-rational
//! components, plus validation and time-normalization.
//!
//! Component 0 is the time component v_T, components 1..=m the spatial part
//! v_M. Variable indices follow the same convention: 0 is t, i is x_{i-1}.
//! A field is admissible for suspension when v_T stays positive and the full
//! divergence ∂_t v_T + Σ_i ∂_{x_i} v_{M,i} vanishes, which is exactly
//! preservation of the product volume dt ∧ dx.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::geometry::{grid_with_budget, DEFAULT_GRID_BUDGET};
use crate::trig::{TrigPoly, TrigRational};

/// Divergence magnitude above which a field is rejected as volume-breaking.
pub const DIVERGENCE_TOL: f64 = 1e-10;

/// Anything that can be evaluated as a time-dependent vector field on T^m,
/// with the time coordinate living on a circle of period 1.
pub trait FieldEval {
    /// Spatial dimension m.
    fn dim(&self) -> usize;

    /// Write the 1 + m components at (t, x) into `out`. Coordinates may be
    /// lifted reals; components must be 1-periodic in every variable.
    fn eval_into(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<()>;

    /// Full (1+m)×(1+m) Jacobian with respect to (t, x). The default is a
    /// central finite difference; closed-form fields override it.
    fn jacobian_into(&self, t: f64, x: &[f64], jac: &mut DMatrix<f64>) -> Result<()> {
        let n = self.dim() + 1;
        let h = 1e-5;
        let mut hi = vec![0.0; n];
        let mut lo = vec![0.0; n];
        let mut xs = x.to_vec();
        for col in 0..n {
            if col == 0 {
                self.eval_into(t + h, x, &mut hi)?;
                self.eval_into(t - h, x, &mut lo)?;
            } else {
                xs[col - 1] = x[col - 1] + h;
                self.eval_into(t, &xs, &mut hi)?;
                xs[col - 1] = x[col - 1] - h;
                self.eval_into(t, &xs, &mut lo)?;
                xs[col - 1] = x[col - 1];
            }
            for row in 0..n {
                jac[(row, col)] = (hi[row] - lo[row]) / (2.0 * h);
            }
        }
        Ok(())
    }

    /// True when the time component is identically 1, so time-1 flow maps
    /// the section t = 0 to itself.
    fn is_unit_time(&self) -> bool {
        false
    }

    /// A positive lower bound for the time component if one is known.
    fn time_floor_hint(&self) -> Option<f64> {
        None
    }
}

/// Validation summary over a sample grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldReport {
    pub min_time_component: f64,
    pub max_divergence: f64,
    pub passed: bool,
}

/// A field on T × T^m whose components are quotients of trig polynomials.
#[derive(Debug, Clone)]
pub struct FieldTM {
    m: usize,
    comps: Vec<TrigRational>,
    unit_time: bool,
    time_floor: f64,
}

impl FieldTM {
    /// Build a field from its 1 + m components. Variable indices used by the
    /// components must lie in 0..=m.
    pub fn new(m: usize, comps: Vec<TrigRational>) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidField(
                "spatial dimension must be at least 1".into(),
            ));
        }
        if comps.len() != m + 1 {
            return Err(Error::DimensionMismatch {
                expected: m + 1,
                got: comps.len(),
            });
        }
        for (i, c) in comps.iter().enumerate() {
            if let Some(v) = c.vars().into_iter().max() {
                if v > m {
                    return Err(Error::InvalidField(format!(
                        "component {i} uses variable index {v}, out of range for T × T^{m}"
                    )));
                }
            }
        }
        let unit_time = comps[0].num.is_one() && comps[0].has_trivial_den();
        let mut field = FieldTM {
            m,
            comps,
            unit_time,
            time_floor: f64::NAN,
        };
        field.time_floor = if unit_time {
            1.0
        } else {
            field.sample_time_min(8)?
        };
        Ok(field)
    }

    /// Constant drift (1, speeds).
    pub fn drift(speeds: &[f64]) -> Result<Self> {
        let mut comps = vec![TrigRational::one()];
        comps.extend(
            speeds
                .iter()
                .map(|&c| TrigRational::from_poly(TrigPoly::constant(c))),
        );
        FieldTM::new(speeds.len(), comps)
    }

    pub fn components(&self) -> &[TrigRational] {
        &self.comps
    }

    pub fn time_component(&self) -> &TrigRational {
        &self.comps[0]
    }

    pub fn spatial_component(&self, i: usize) -> &TrigRational {
        &self.comps[1 + i]
    }

    /// Coarse sampled minimum of v_T over t and x.
    fn sample_time_min(&self, n: usize) -> Result<f64> {
        let pts = sample_points(n, self.m)?;
        let mut vals = vec![0.0; self.m + 1];
        let mut min = f64::INFINITY;
        for (t, x) in &pts {
            vals[0] = *t;
            vals[1..].copy_from_slice(x);
            min = min.min(self.comps[0].eval(&vals));
        }
        Ok(min)
    }

    /// Full divergence ∂_t v_T + Σ_i ∂_{x_i} v_{M,i} at (t, x).
    pub fn divergence(&self, t: f64, x: &[f64]) -> Result<f64> {
        if x.len() != self.m {
            return Err(Error::DimensionMismatch {
                expected: self.m,
                got: x.len(),
            });
        }
        let mut vals = vec![0.0; self.m + 1];
        vals[0] = t;
        vals[1..].copy_from_slice(x);
        let mut div = self.comps[0].partial(0, &vals);
        for i in 1..=self.m {
            div += self.comps[i].partial(i, &vals);
        }
        Ok(div)
    }

    /// Sample v_T and the divergence on an (n per axis) grid in t and x and
    /// report the extremes. `passed` requires strictly positive v_T and
    /// divergence within `DIVERGENCE_TOL`, plus agreement of component
    /// values across a unit shift of each coordinate.
    pub fn validate(&self, n: usize) -> Result<FieldReport> {
        let pts = sample_points(n, self.m)?;
        let mut vals = vec![0.0; self.m + 1];
        let mut min_vt = f64::INFINITY;
        let mut max_div: f64 = 0.0;
        for (t, x) in &pts {
            vals[0] = *t;
            vals[1..].copy_from_slice(x);
            min_vt = min_vt.min(self.comps[0].eval(&vals));
            max_div = max_div.max(self.divergence(*t, x)?.abs());
        }
        let mut periodic = true;
        let probe: Vec<f64> = (0..=self.m)
            .map(|i| (0.234567 + 0.31 * i as f64).fract())
            .collect();
        for var in 0..=self.m {
            let mut shifted = probe.clone();
            shifted[var] += 1.0;
            for c in &self.comps {
                if (c.eval(&probe) - c.eval(&shifted)).abs() > 1e-9 {
                    periodic = false;
                }
            }
        }
        let passed = min_vt > 0.0 && max_div <= DIVERGENCE_TOL && periodic;
        Ok(FieldReport {
            min_time_component: min_vt,
            max_divergence: max_div,
            passed,
        })
    }

    /// `validate` with failures turned into errors naming the violated
    /// condition.
    pub fn validated(&self, n: usize) -> Result<FieldReport> {
        let report = self.validate(n)?;
        if report.min_time_component <= 0.0 {
            return Err(Error::InvalidField(format!(
                "time-component positivity violated: sampled minimum {}",
                report.min_time_component
            )));
        }
        if report.max_divergence > DIVERGENCE_TOL {
            return Err(Error::InvalidField(format!(
                "volume preservation (zero divergence) violated: sampled maximum divergence {}",
                report.max_divergence
            )));
        }
        if !report.passed {
            return Err(Error::InvalidField(
                "components are not 1-periodic in every coordinate".into(),
            ));
        }
        Ok(report)
    }

    /// Divide through by the time component: v̂ = (1, v_M/v_T). The flow of
    /// v̂ traces the same orbits with time reparametrized so that the return
    /// time to the section t = 0 is exactly 1.
    pub fn normalize(&self) -> Result<FieldTM> {
        if self.unit_time {
            return Ok(self.clone());
        }
        if self.time_floor <= 0.0 {
            return Err(Error::Domain(format!(
                "cannot normalize: time component reaches {} on samples",
                self.time_floor
            )));
        }
        let vt = &self.comps[0];
        let mut comps = vec![TrigRational::one()];
        for i in 1..=self.m {
            let vi = &self.comps[i];
            if vi.is_zero() {
                comps.push(TrigRational::zero());
                continue;
            }
            // (n_i/d_i) / (n_T/d_T) = (n_i·d_T) / (d_i·n_T)
            let num = vi.num.times(&vt.den);
            let den = vi.den.times(&vt.num);
            comps.push(if den.is_one() {
                TrigRational::from_poly(num)
            } else {
                TrigRational::quotient(num, den)
            });
        }
        FieldTM::new(self.m, comps)
    }
}

/// Sample points (t, x) with n values per axis, budget-capped.
fn sample_points(n: usize, m: usize) -> Result<Vec<(f64, Vec<f64>)>> {
    let spatial = grid_with_budget(n, m, DEFAULT_GRID_BUDGET)?;
    let mut out = Vec::with_capacity(n * spatial.len());
    for i in 0..n {
        let t = i as f64 / n as f64;
        for p in &spatial {
            out.push((t, p.coords().to_vec()));
        }
    }
    Ok(out)
}

impl FieldEval for FieldTM {
    fn dim(&self) -> usize {
        self.m
    }

    fn eval_into(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        if x.len() != self.m || out.len() != self.m + 1 {
            return Err(Error::DimensionMismatch {
                expected: self.m,
                got: x.len().min(out.len()),
            });
        }
        let mut vals = [0.0; 8];
        let vals = if self.m + 1 <= 8 {
            &mut vals[..self.m + 1]
        } else {
            return Err(Error::InvalidField(
                "spatial dimension above 7 not supported".into(),
            ));
        };
        vals[0] = t;
        vals[1..].copy_from_slice(x);
        for (o, c) in out.iter_mut().zip(&self.comps) {
            *o = c.eval(vals);
        }
        Ok(())
    }

    fn jacobian_into(&self, t: f64, x: &[f64], jac: &mut DMatrix<f64>) -> Result<()> {
        let n = self.m + 1;
        let mut vals = vec![0.0; n];
        vals[0] = t;
        vals[1..].copy_from_slice(x);
        for (row, c) in self.comps.iter().enumerate() {
            for col in 0..n {
                jac[(row, col)] = c.partial(col, &vals);
            }
        }
        Ok(())
    }

    fn is_unit_time(&self) -> bool {
        self.unit_time
    }

    fn time_floor_hint(&self) -> Option<f64> {
        Some(self.time_floor)
    }
}
