//! Points on the flat torus T^m and the cylinder T×T^m, plus the lifts to the
//! covering space R×R^m that the flow integrator works on.
//!
//! Conventions used throughout the crate:
//! - every torus coordinate lives in `[0, 1)`, one period per unit;
//! - lifted coordinates are unbounded and carry winding information, so a
//!   trajectory is only reduced mod 1 when it is turned back into a point on
//!   the quotient;
//! - distances are measured in the max-norm over per-coordinate circle
//!   distances, which keeps every residual a single number.

use crate::error::{Error, Result};

/// Default cap on the number of points a grid request may produce.
pub const DEFAULT_GRID_BUDGET: u128 = 1_000_000;

// ---------------------------------------------------------------------------
// Wrapping
// ---------------------------------------------------------------------------

/// Reduce a single coordinate mod 1 into `[0, 1)`.
///
/// Exact for integer shifts: `wrap_coord(x + k) == wrap_coord(x)` whenever
/// `x + k` is representable, because `%` on floats is exact.
pub fn wrap_coord(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::InvalidPoint { index: 0 });
    }
    let mut r = x % 1.0;
    if r < 0.0 {
        r += 1.0;
    }
    // A tiny negative input rounds `r + 1.0` up to exactly 1.0; fold it back.
    if r >= 1.0 {
        r = 0.0;
    }
    Ok(r)
}

/// Signed circle difference `a - b` reduced into `[-0.5, 0.5)`.
///
/// Used by finite-difference stencils so that derivative estimates do not
/// jump across the wrap seam.
pub fn circle_diff(a: f64, b: f64) -> f64 {
    let mut d = (a - b) % 1.0;
    if d < -0.5 {
        d += 1.0;
    } else if d >= 0.5 {
        d -= 1.0;
    }
    d
}

/// Distance between two angles on the unit circle: `min(|Δ|, 1 − |Δ|)`.
pub fn circle_dist(a: f64, b: f64) -> f64 {
    circle_diff(a, b).abs()
}

// ---------------------------------------------------------------------------
// Point types
// ---------------------------------------------------------------------------

/// A point of the flat torus T^m, all coordinates wrapped into `[0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TorusPoint {
    coords: Vec<f64>,
}

impl TorusPoint {
    /// Build a point from arbitrary finite coordinates, wrapping each mod 1.
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        let mut wrapped = coords;
        for (i, c) in wrapped.iter_mut().enumerate() {
            *c = wrap_coord(*c).map_err(|_| Error::InvalidPoint { index: i })?;
        }
        Ok(TorusPoint { coords: wrapped })
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.coords
    }
}

/// A point of the cylinder T×T^m: circle time `t ∈ [0, 1)` plus a torus point.
#[derive(Debug, Clone, PartialEq)]
pub struct CylPoint {
    pub t: f64,
    pub x: TorusPoint,
}

impl CylPoint {
    pub fn new(t: f64, x: TorusPoint) -> Result<Self> {
        Ok(CylPoint {
            t: wrap_coord(t)?,
            x,
        })
    }

    /// The canonical lift with zero winding.
    pub fn lift(&self) -> LiftedPoint {
        LiftedPoint {
            t: self.t,
            x: self.x.coords().to_vec(),
        }
    }
}

/// A point of the covering space R×R^m. Coordinates are unbounded; the time
/// shift `S(t, x) = (t + 1, x)` acts on this type as `t ↦ t + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedPoint {
    pub t: f64,
    pub x: Vec<f64>,
}

impl LiftedPoint {
    pub fn new(t: f64, x: Vec<f64>) -> Self {
        LiftedPoint { t, x }
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }
}

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

/// Project a lifted point back to the cylinder, reducing every coordinate
/// mod 1 into `[0, 1)`.
pub fn wrap(p: &LiftedPoint) -> Result<CylPoint> {
    if !p.t.is_finite() {
        return Err(Error::InvalidPoint { index: 0 });
    }
    let t = wrap_coord(p.t)?;
    let mut coords = Vec::with_capacity(p.x.len());
    for (i, &c) in p.x.iter().enumerate() {
        if !c.is_finite() {
            return Err(Error::InvalidPoint { index: i + 1 });
        }
        coords.push(wrap_coord(c)?);
    }
    Ok(CylPoint {
        t,
        x: TorusPoint { coords },
    })
}

/// Max-norm torus distance: the largest per-coordinate circle distance.
pub fn torus_dist(p: &TorusPoint, q: &TorusPoint) -> Result<f64> {
    if p.dim() != q.dim() {
        return Err(Error::DimensionMismatch {
            expected: p.dim(),
            got: q.dim(),
        });
    }
    Ok(p.coords()
        .iter()
        .zip(q.coords())
        .map(|(&a, &b)| circle_dist(a, b))
        .fold(0.0, f64::max))
}

/// Max-norm torus distance between raw wrapped coordinate slices.
pub fn torus_dist_slices(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch {
            expected: p.len(),
            got: q.len(),
        });
    }
    Ok(p.iter()
        .zip(q)
        .map(|(&a, &b)| circle_dist(a, b))
        .fold(0.0, f64::max))
}

/// The uniform n^m grid `(i₁/n, …, i_m/n)` in lexicographic order, last index
/// fastest. Guarded by [`DEFAULT_GRID_BUDGET`].
pub fn grid(n: usize, m: usize) -> Result<Vec<TorusPoint>> {
    grid_with_budget(n, m, DEFAULT_GRID_BUDGET)
}

/// As [`grid`] with an explicit point budget.
pub fn grid_with_budget(n: usize, m: usize, budget: u128) -> Result<Vec<TorusPoint>> {
    if n == 0 {
        return Err(Error::Precondition("grid requires n >= 1".into()));
    }
    let total = (n as u128)
        .checked_pow(m as u32)
        .ok_or(Error::ResourceBudget {
            requested: u128::MAX,
            budget,
        })?;
    if total > budget {
        return Err(Error::ResourceBudget {
            requested: total,
            budget,
        });
    }
    let mut points = Vec::with_capacity(total as usize);
    let mut idx = vec![0usize; m];
    loop {
        points.push(TorusPoint {
            coords: idx.iter().map(|&i| i as f64 / n as f64).collect(),
        });
        // Lexicographic increment, last coordinate fastest.
        let mut k = m;
        loop {
            if k == 0 {
                return Ok(points);
            }
            k -= 1;
            idx[k] += 1;
            if idx[k] < n {
                break;
            }
            idx[k] = 0;
        }
    }
}

/// Uniform samples `i/n` of the circle, `i = 0..n`.
pub fn circle_samples(n: usize) -> Vec<f64> {
    (0..n).map(|i| i as f64 / n as f64).collect()
}
