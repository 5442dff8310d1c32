//! Diffeomorphisms of T^m built from elementary factors with closed-form
//! inverses and Jacobians.
//!
//! A `MapExpr` is an ordered factor list applied left to right. Shears,
//! translations and unimodular integer-linear maps all have unit Jacobian
//! determinant, so any composition of them preserves Lebesgue volume exactly.
//! The `Scale` factor is the deliberate exception: it is accepted by the
//! evaluator so that configuration-level mistakes reach the construction's
//! own volume checks instead of being silently normalized away.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::geometry::{wrap_coord, TorusPoint};
use crate::trig::TrigPoly;

/// One invertible factor on T^m.
#[derive(Debug, Clone, PartialEq)]
pub enum ElementaryMap {
    /// `x_target ↦ x_target + profile(x)`, profile independent of the target
    /// axis. Exact inverse: subtract the profile.
    Shear { target: usize, profile: TrigPoly },
    /// `x ↦ A·x mod 1` for an integer matrix `A` (row-major). Well defined on
    /// the torus for any integer matrix; invertible when `|det A| = 1`.
    Linear { matrix: Vec<Vec<i64>> },
    /// `x ↦ x + offset mod 1`.
    Translate { offset: Vec<f64> },
    /// `x_i ↦ factors_i · x_i mod 1`. Not volume-preserving unless every
    /// factor is 1; kept so that invalid inputs are caught downstream.
    Scale { factors: Vec<f64> },
}

impl ElementaryMap {
    /// Check the factor is well formed in dimension `m`.
    fn validate(&self, m: usize) -> Result<()> {
        match self {
            ElementaryMap::Shear { target, profile } => {
                if *target >= m {
                    return Err(Error::InvalidMap(format!(
                        "shear target axis {target} out of range for dimension {m}"
                    )));
                }
                if let Some(v) = profile.max_var() {
                    if v >= m {
                        return Err(Error::InvalidMap(format!(
                            "shear profile uses axis {v}, out of range for dimension {m}"
                        )));
                    }
                }
                if profile.vars().contains(target) {
                    return Err(Error::InvalidMap(format!(
                        "shear profile must not depend on its target axis {target}"
                    )));
                }
                Ok(())
            }
            ElementaryMap::Linear { matrix } => {
                if matrix.len() != m || matrix.iter().any(|row| row.len() != m) {
                    return Err(Error::InvalidMap(format!(
                        "linear factor must be a {m}x{m} integer matrix"
                    )));
                }
                Ok(())
            }
            ElementaryMap::Translate { offset } => {
                if offset.len() != m {
                    return Err(Error::DimensionMismatch {
                        expected: m,
                        got: offset.len(),
                    });
                }
                Ok(())
            }
            ElementaryMap::Scale { factors } => {
                if factors.len() != m {
                    return Err(Error::DimensionMismatch {
                        expected: m,
                        got: factors.len(),
                    });
                }
                Ok(())
            }
        }
    }

    /// Whether the factor admits the linear-in-s schedule used by isotopies.
    pub fn schedulable(&self) -> bool {
        !matches!(self, ElementaryMap::Linear { .. })
    }

    /// Apply the factor scaled by schedule parameter `s` (`s = 1` is the
    /// factor itself, `s = 0` the identity). Input and output wrapped.
    fn eval_scaled(&self, s: f64, x: &[f64], out: &mut Vec<f64>) -> Result<()> {
        out.clear();
        out.extend_from_slice(x);
        match self {
            ElementaryMap::Shear { target, profile } => {
                out[*target] = wrap_coord(x[*target] + s * profile.eval(x))?;
            }
            ElementaryMap::Linear { matrix } => {
                if s != 1.0 {
                    return Err(Error::UnsupportedIsotopy(
                        "linear factors have no scaling schedule; supply a shear decomposition"
                            .into(),
                    ));
                }
                for (i, row) in matrix.iter().enumerate() {
                    let mut acc = 0.0;
                    for (j, &a) in row.iter().enumerate() {
                        acc += a as f64 * x[j];
                    }
                    out[i] = wrap_coord(acc)?;
                }
            }
            ElementaryMap::Translate { offset } => {
                for (o, &d) in out.iter_mut().zip(offset) {
                    *o = wrap_coord(*o + s * d)?;
                }
            }
            ElementaryMap::Scale { factors } => {
                for (o, &c) in out.iter_mut().zip(factors) {
                    *o = wrap_coord(*o * (1.0 + s * (c - 1.0)))?;
                }
            }
        }
        Ok(())
    }

    /// Invert the scaled factor.
    fn invert_scaled(&self, s: f64, y: &[f64], out: &mut Vec<f64>) -> Result<()> {
        out.clear();
        out.extend_from_slice(y);
        match self {
            ElementaryMap::Shear { target, profile } => {
                // The profile reads only non-target axes, which the shear
                // leaves untouched, so subtraction inverts exactly.
                out[*target] = wrap_coord(y[*target] - s * profile.eval(y))?;
            }
            ElementaryMap::Linear { matrix } => {
                if s != 1.0 {
                    return Err(Error::UnsupportedIsotopy(
                        "linear factors have no scaling schedule; supply a shear decomposition"
                            .into(),
                    ));
                }
                let inv = int_inverse(matrix)?;
                for (i, row) in inv.iter().enumerate() {
                    let mut acc = 0.0;
                    for (j, &a) in row.iter().enumerate() {
                        acc += a as f64 * y[j];
                    }
                    out[i] = wrap_coord(acc)?;
                }
            }
            ElementaryMap::Translate { offset } => {
                for (o, &d) in out.iter_mut().zip(offset) {
                    *o = wrap_coord(*o - s * d)?;
                }
            }
            ElementaryMap::Scale { factors } => {
                for (o, &c) in out.iter_mut().zip(factors) {
                    let f = 1.0 + s * (c - 1.0);
                    if f.abs() < 1e-15 {
                        return Err(Error::InvalidMap(
                            "scale factor passes through zero; not invertible".into(),
                        ));
                    }
                    *o = wrap_coord(*o / f)?;
                }
            }
        }
        Ok(())
    }

    /// Jacobian of the scaled factor at `x` (constant in `x` except for
    /// shears).
    fn jacobian_scaled(&self, s: f64, x: &[f64], m: usize) -> Result<DMatrix<f64>> {
        let mut j = DMatrix::identity(m, m);
        match self {
            ElementaryMap::Shear { target, profile } => {
                for src in profile.vars() {
                    j[(*target, src)] = s * profile.partial(src, x);
                }
            }
            ElementaryMap::Linear { matrix } => {
                if s != 1.0 {
                    return Err(Error::UnsupportedIsotopy(
                        "linear factors have no scaling schedule; supply a shear decomposition"
                            .into(),
                    ));
                }
                for (i, row) in matrix.iter().enumerate() {
                    for (jj, &a) in row.iter().enumerate() {
                        j[(i, jj)] = a as f64;
                    }
                }
            }
            ElementaryMap::Translate { .. } => {}
            ElementaryMap::Scale { factors } => {
                for (i, &c) in factors.iter().enumerate() {
                    j[(i, i)] = 1.0 + s * (c - 1.0);
                }
            }
        }
        Ok(j)
    }

    /// Determinant of the scaled factor's Jacobian (position-independent).
    fn det_scaled(&self, s: f64) -> Result<f64> {
        match self {
            ElementaryMap::Shear { .. } => Ok(1.0),
            ElementaryMap::Linear { matrix } => {
                if s != 1.0 {
                    return Err(Error::UnsupportedIsotopy(
                        "linear factors have no scaling schedule; supply a shear decomposition"
                            .into(),
                    ));
                }
                Ok(int_det(matrix) as f64)
            }
            ElementaryMap::Translate { .. } => Ok(1.0),
            ElementaryMap::Scale { factors } => Ok(factors
                .iter()
                .map(|&c| 1.0 + s * (c - 1.0))
                .product()),
        }
    }

    /// Derivative of the scaled factor with respect to `s` at input `x`.
    fn schedule_deriv(&self, _s: f64, x: &[f64], out: &mut Vec<f64>) -> Result<()> {
        out.clear();
        out.resize(x.len(), 0.0);
        match self {
            ElementaryMap::Shear { target, profile } => {
                out[*target] = profile.eval(x);
            }
            ElementaryMap::Linear { .. } => {
                return Err(Error::UnsupportedIsotopy(
                    "linear factors have no scaling schedule; supply a shear decomposition".into(),
                ));
            }
            ElementaryMap::Translate { offset } => {
                out.copy_from_slice(offset);
            }
            ElementaryMap::Scale { factors } => {
                for (o, (&c, &xi)) in out.iter_mut().zip(factors.iter().zip(x)) {
                    *o = (c - 1.0) * xi;
                }
            }
        }
        Ok(())
    }
}

/// Exact determinant of a small integer matrix (Bareiss elimination in i128).
fn int_det(matrix: &[Vec<i64>]) -> i128 {
    let n = matrix.len();
    if n == 0 {
        return 1;
    }
    let mut a: Vec<Vec<i128>> = matrix
        .iter()
        .map(|row| row.iter().map(|&v| v as i128).collect())
        .collect();
    let mut sign = 1i128;
    let mut prev = 1i128;
    for k in 0..n - 1 {
        if a[k][k] == 0 {
            let swap = (k + 1..n).find(|&r| a[r][k] != 0);
            match swap {
                Some(r) => {
                    a.swap(k, r);
                    sign = -sign;
                }
                None => return 0,
            }
        }
        for i in k + 1..n {
            for j in k + 1..n {
                a[i][j] = (a[i][j] * a[k][k] - a[i][k] * a[k][j]) / prev;
            }
            a[i][k] = 0;
        }
        prev = a[k][k];
    }
    sign * a[n - 1][n - 1]
}

/// Exact inverse of a unimodular integer matrix.
fn int_inverse(matrix: &[Vec<i64>]) -> Result<Vec<Vec<i64>>> {
    let n = matrix.len();
    let det = int_det(matrix);
    if det != 1 && det != -1 {
        return Err(Error::InvalidMap(format!(
            "linear factor determinant {det} is not ±1; not invertible on the torus"
        )));
    }
    // Invert in floats and round: entries of the adjugate of a unimodular
    // integer matrix are integers, and the rounded result is verified exactly.
    let mf = DMatrix::from_fn(n, n, |i, j| matrix[i][j] as f64);
    let inv = mf
        .try_inverse()
        .ok_or_else(|| Error::InvalidMap("linear factor is singular".into()))?;
    let mut out = vec![vec![0i64; n]; n];
    for i in 0..n {
        for j in 0..n {
            out[i][j] = inv[(i, j)].round() as i64;
        }
    }
    // Verify A·A⁻¹ = I in integer arithmetic.
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0i128;
            for k in 0..n {
                acc += matrix[i][k] as i128 * out[k][j] as i128;
            }
            if acc != if i == j { 1 } else { 0 } {
                return Err(Error::InvalidMap(
                    "integer inverse verification failed (matrix entries too large?)".into(),
                ));
            }
        }
    }
    Ok(out)
}

/// An ordered composition of elementary factors, applied left to right.
#[derive(Debug, Clone, PartialEq)]
pub struct MapExpr {
    dim: usize,
    factors: Vec<ElementaryMap>,
}

impl MapExpr {
    pub fn new(dim: usize, factors: Vec<ElementaryMap>) -> Result<Self> {
        for f in &factors {
            f.validate(dim)?;
        }
        Ok(MapExpr { dim, factors })
    }

    pub fn identity(dim: usize) -> Self {
        MapExpr {
            dim,
            factors: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn factors(&self) -> &[ElementaryMap] {
        &self.factors
    }

    pub fn is_identity(&self) -> bool {
        self.factors.is_empty()
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Evaluate on wrapped coordinates with every factor scaled by `s`.
    pub fn eval_coords_scaled(&self, s: f64, x: &[f64]) -> Result<Vec<f64>> {
        self.check_point(x)?;
        let mut cur = x.to_vec();
        let mut next = Vec::with_capacity(self.dim);
        for f in &self.factors {
            f.eval_scaled(s, &cur, &mut next)?;
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    pub fn eval_coords(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.eval_coords_scaled(1.0, x)
    }

    pub fn eval(&self, x: &TorusPoint) -> Result<TorusPoint> {
        TorusPoint::new(self.eval_coords(x.coords())?)
    }

    /// Evaluate the inverse map at `y`: factors inverted in reverse order,
    /// each in closed form.
    pub fn invert_coords_scaled(&self, s: f64, y: &[f64]) -> Result<Vec<f64>> {
        self.check_point(y)?;
        let mut cur = y.to_vec();
        let mut next = Vec::with_capacity(self.dim);
        for f in self.factors.iter().rev() {
            f.invert_scaled(s, &cur, &mut next)?;
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    pub fn invert_coords(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.invert_coords_scaled(1.0, y)
    }

    pub fn invert(&self, y: &TorusPoint) -> Result<TorusPoint> {
        TorusPoint::new(self.invert_coords(y.coords())?)
    }

    /// Chain-rule Jacobian of the scaled composition at `x`.
    pub fn jacobian_coords_scaled(&self, s: f64, x: &[f64]) -> Result<DMatrix<f64>> {
        self.check_point(x)?;
        let mut j = DMatrix::identity(self.dim, self.dim);
        let mut cur = x.to_vec();
        let mut next = Vec::with_capacity(self.dim);
        for f in &self.factors {
            let jf = f.jacobian_scaled(s, &cur, self.dim)?;
            j = jf * j;
            f.eval_scaled(s, &cur, &mut next)?;
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(j)
    }

    pub fn jacobian(&self, x: &TorusPoint) -> Result<DMatrix<f64>> {
        self.jacobian_coords_scaled(1.0, x.coords())
    }

    /// Determinant of the Jacobian of the scaled composition
    /// (position-independent: a product of factor determinants).
    pub fn jacobian_det_scaled(&self, s: f64) -> Result<f64> {
        let mut det = 1.0;
        for f in &self.factors {
            det *= f.det_scaled(s)?;
        }
        Ok(det)
    }

    pub fn jacobian_det(&self) -> Result<f64> {
        self.jacobian_det_scaled(1.0)
    }

    /// True when every factor admits the linear-in-s schedule.
    pub fn schedulable(&self) -> bool {
        self.factors.iter().all(|f| f.schedulable())
    }

    /// A new expression with the schedule parameter baked into every factor:
    /// shear profiles and translation offsets multiplied by `s`, scale
    /// factors interpolated as `1 + s·(c − 1)`. `scaled(1.0)` is a clone,
    /// `scaled(0.0)` acts as the identity.
    pub fn scaled(&self, s: f64) -> Result<MapExpr> {
        if s == 1.0 {
            return Ok(self.clone());
        }
        let factors = self
            .factors
            .iter()
            .map(|f| match f {
                ElementaryMap::Shear { target, profile } => Ok(ElementaryMap::Shear {
                    target: *target,
                    profile: profile.scaled(s),
                }),
                ElementaryMap::Linear { .. } => Err(Error::UnsupportedIsotopy(
                    "linear factors have no scaling schedule; supply a shear decomposition".into(),
                )),
                ElementaryMap::Translate { offset } => Ok(ElementaryMap::Translate {
                    offset: offset.iter().map(|d| s * d).collect(),
                }),
                ElementaryMap::Scale { factors } => Ok(ElementaryMap::Scale {
                    factors: factors.iter().map(|c| 1.0 + s * (c - 1.0)).collect(),
                }),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MapExpr {
            dim: self.dim,
            factors,
        })
    }

    /// Walk the composition scaled by `s` starting from `y`, accumulating the
    /// s-derivative of the composition at `y` and the determinant along the
    /// chain. Returns `(endpoint, d/ds of composition at y, det of Jacobian)`.
    ///
    /// For factors F₁…F_n applied left to right,
    /// `d/ds (F_n∘…∘F₁)(y) = Σ_k D(F_n∘…∘F_{k+1})·(∂_s F_k)(p_{k-1})`
    /// with `p_k` the partial images of `y`.
    pub(crate) fn chain_scaled(&self, s: f64, y: &[f64]) -> Result<ChainData> {
        self.check_point(y)?;
        let m = self.dim;
        let mut cur = y.to_vec();
        let mut next = Vec::with_capacity(m);
        let mut gen = vec![0.0; m];
        let mut scratch = Vec::with_capacity(m);
        let mut det = 1.0;
        for f in &self.factors {
            // Push the accumulated derivative forward through this factor...
            let jf = f.jacobian_scaled(s, &cur, m)?;
            let pushed: Vec<f64> = (0..m)
                .map(|i| (0..m).map(|j| jf[(i, j)] * gen[j]).sum())
                .collect();
            // ...and add this factor's own s-derivative.
            f.schedule_deriv(s, &cur, &mut scratch)?;
            for i in 0..m {
                gen[i] = pushed[i] + scratch[i];
            }
            det *= f.det_scaled(s)?;
            f.eval_scaled(s, &cur, &mut next)?;
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(ChainData {
            end: cur,
            gen,
            det,
        })
    }
}

/// Result of walking a scaled composition: endpoint, s-derivative, and the
/// Jacobian determinant accumulated along the chain.
pub(crate) struct ChainData {
    pub end: Vec<f64>,
    pub gen: Vec<f64>,
    pub det: f64,
}

/// Max over sample points of `|w(M(x))·det DM(x) − w(x)|`, the residual of
/// preservation of the weighted volume `w·ν` by the map `M`.
pub fn weighted_volume_residual<W>(map: &MapExpr, weight: W, points: &[TorusPoint]) -> Result<f64>
where
    W: Fn(&[f64]) -> f64,
{
    let mut worst: f64 = 0.0;
    for p in points {
        let image = map.eval_coords(p.coords())?;
        let det = map.jacobian_coords_scaled(1.0, p.coords())?.determinant();
        let r = (weight(&image) * det - weight(p.coords())).abs();
        worst = worst.max(r);
    }
    Ok(worst)
}
