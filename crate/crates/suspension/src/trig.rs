//! Trigonometric polynomials in several variables, the smooth 1-periodic
//! function class used for field components and shear profiles.
//!
//! A polynomial is a finite sum of terms `coeff · Π_j trig(2π·k_j·v_{i_j})`
//! with `trig ∈ {cos, sin}` and integer frequencies `k_j ≥ 1`. The empty
//! product is the constant term. Every value and every partial derivative is
//! evaluated in closed form.

use std::collections::BTreeSet;
use std::f64::consts::TAU;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrigFn {
    Cos,
    Sin,
}

/// One factor `trig(2π·freq·vals[var])`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrigFactor {
    pub var: usize,
    pub freq: u32,
    pub kind: TrigFn,
}

impl TrigFactor {
    fn eval(&self, vals: &[f64]) -> f64 {
        let arg = TAU * self.freq as f64 * vals[self.var];
        match self.kind {
            TrigFn::Cos => arg.cos(),
            TrigFn::Sin => arg.sin(),
        }
    }

    /// Derivative with respect to its own variable.
    fn deriv(&self, vals: &[f64]) -> f64 {
        let w = TAU * self.freq as f64;
        let arg = w * vals[self.var];
        match self.kind {
            TrigFn::Cos => -w * arg.sin(),
            TrigFn::Sin => w * arg.cos(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrigTerm {
    pub coeff: f64,
    pub factors: Vec<TrigFactor>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrigPoly {
    pub terms: Vec<TrigTerm>,
}

impl TrigPoly {
    pub fn zero() -> Self {
        TrigPoly { terms: Vec::new() }
    }

    pub fn constant(c: f64) -> Self {
        TrigPoly {
            terms: vec![TrigTerm {
                coeff: c,
                factors: Vec::new(),
            }],
        }
    }

    /// `coeff · sin(2π·k·v_var)`.
    pub fn sin(coeff: f64, var: usize, freq: u32) -> Self {
        TrigPoly {
            terms: vec![TrigTerm {
                coeff,
                factors: vec![TrigFactor {
                    var,
                    freq,
                    kind: TrigFn::Sin,
                }],
            }],
        }
    }

    /// `coeff · cos(2π·k·v_var)`.
    pub fn cos(coeff: f64, var: usize, freq: u32) -> Self {
        TrigPoly {
            terms: vec![TrigTerm {
                coeff,
                factors: vec![TrigFactor {
                    var,
                    freq,
                    kind: TrigFn::Cos,
                }],
            }],
        }
    }

    pub fn plus(mut self, other: TrigPoly) -> Self {
        self.terms.extend(other.terms);
        self
    }

    /// True when every term has zero coefficient.
    pub fn is_zero(&self) -> bool {
        self.terms.iter().all(|t| t.coeff == 0.0)
    }

    /// True when the polynomial is the constant 1 written as a single term.
    pub fn is_one(&self) -> bool {
        self.terms.len() == 1 && self.terms[0].coeff == 1.0 && self.terms[0].factors.is_empty()
    }

    /// Variables appearing in terms with nonzero coefficient.
    pub fn vars(&self) -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        for term in &self.terms {
            if term.coeff != 0.0 {
                for f in &term.factors {
                    out.insert(f.var);
                }
            }
        }
        out
    }

    pub fn max_var(&self) -> Option<usize> {
        self.vars().into_iter().max()
    }

    pub fn eval(&self, vals: &[f64]) -> f64 {
        let mut acc = 0.0;
        for term in &self.terms {
            let mut p = term.coeff;
            for f in &term.factors {
                p *= f.eval(vals);
            }
            acc += p;
        }
        acc
    }

    /// Closed-form partial derivative with respect to `vals[var]`.
    pub fn partial(&self, var: usize, vals: &[f64]) -> f64 {
        let mut acc = 0.0;
        for term in &self.terms {
            for (k, f) in term.factors.iter().enumerate() {
                if f.var != var {
                    continue;
                }
                let mut p = term.coeff * f.deriv(vals);
                for (j, g) in term.factors.iter().enumerate() {
                    if j != k {
                        p *= g.eval(vals);
                    }
                }
                acc += p;
            }
        }
        acc
    }

    /// Scale all coefficients by `a`.
    pub fn scaled(&self, a: f64) -> TrigPoly {
        TrigPoly {
            terms: self
                .terms
                .iter()
                .map(|t| TrigTerm {
                    coeff: a * t.coeff,
                    factors: t.factors.clone(),
                })
                .collect(),
        }
    }

    /// Polynomial product: terms multiply pairwise, factor lists concatenate.
    pub fn times(&self, other: &TrigPoly) -> TrigPoly {
        let mut terms = Vec::with_capacity(self.terms.len() * other.terms.len());
        for a in &self.terms {
            for b in &other.terms {
                let mut factors = a.factors.clone();
                factors.extend_from_slice(&b.factors);
                terms.push(TrigTerm {
                    coeff: a.coeff * b.coeff,
                    factors,
                });
            }
        }
        TrigPoly { terms }
    }
}

/// A pointwise quotient `num/den` of trig polynomials, `den ≡ 1` by default.
///
/// Values and partials are combined pointwise by the quotient rule, so the
/// ratio never has to be re-expanded as a polynomial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrigRational {
    pub num: TrigPoly,
    pub den: TrigPoly,
}

impl TrigRational {
    pub fn from_poly(num: TrigPoly) -> Self {
        TrigRational {
            num,
            den: TrigPoly::constant(1.0),
        }
    }

    pub fn quotient(num: TrigPoly, den: TrigPoly) -> Self {
        TrigRational { num, den }
    }

    pub fn zero() -> Self {
        Self::from_poly(TrigPoly::zero())
    }

    pub fn one() -> Self {
        Self::from_poly(TrigPoly::constant(1.0))
    }

    pub fn is_zero(&self) -> bool {
        self.num.is_zero()
    }

    pub fn has_trivial_den(&self) -> bool {
        self.den.is_one()
    }

    pub fn vars(&self) -> BTreeSet<usize> {
        let mut v = self.num.vars();
        v.extend(self.den.vars());
        v
    }

    pub fn eval(&self, vals: &[f64]) -> f64 {
        if self.has_trivial_den() {
            self.num.eval(vals)
        } else {
            self.num.eval(vals) / self.den.eval(vals)
        }
    }

    /// Quotient-rule partial derivative with respect to `vals[var]`.
    pub fn partial(&self, var: usize, vals: &[f64]) -> f64 {
        if self.has_trivial_den() {
            return self.num.partial(var, vals);
        }
        let n = self.num.eval(vals);
        let d = self.den.eval(vals);
        let dn = self.num.partial(var, vals);
        let dd = self.den.partial(var, vals);
        (dn * d - n * dd) / (d * d)
    }
}
