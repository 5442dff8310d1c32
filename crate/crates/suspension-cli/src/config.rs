//! Problem descriptions as TOML: the base field, the correction map whose
//! composition with the field's return map is the target, flow parameters,
//! and verification grids. Unknown keys are rejected; all cross-field
//! validation (dimension agreement, axis names, unimodularity) happens at
//! parse time so later stages only see well-formed problems.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::Deserialize;
use suspension::{
    ElementaryMap, FieldTM, FlowConfig, JacobianMode, MapExpr, TorusPoint, TrigPoly, TrigRational,
};

/// One additive term of a trigonometric polynomial. Either plain `c`,
/// sugar `{ c, sin = "y" }` / `{ c, cos = "x", k = 2 }` for a single
/// factor of frequency k, or `fns = [{ f, var, k }, ...]` for products.
/// Frequencies count full cycles: `sin = "y", k = 2` means sin(4πy).
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermSpec {
    pub c: f64,
    #[serde(default)]
    pub sin: Option<String>,
    #[serde(default)]
    pub cos: Option<String>,
    #[serde(default)]
    pub k: Option<u32>,
    #[serde(default)]
    pub fns: Option<Vec<FnSpec>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FnSpec {
    pub f: String,
    pub var: String,
    #[serde(default = "default_freq")]
    pub k: u32,
}

fn default_freq() -> u32 {
    1
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub dimension: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSection {
    pub time: Vec<TermSpec>,
    pub space: Vec<Vec<TermSpec>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapSection {
    #[serde(default)]
    pub factor: Vec<FactorConfig>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
pub enum FactorConfig {
    Shear {
        target: String,
        profile: Vec<TermSpec>,
        #[serde(default)]
        schedule: Option<String>,
    },
    Linear {
        rows: Vec<Vec<i64>>,
        #[serde(default)]
        schedule: Option<String>,
    },
    Translate {
        offset: Vec<f64>,
        #[serde(default)]
        schedule: Option<String>,
    },
    Scale {
        factors: Vec<f64>,
        #[serde(default)]
        schedule: Option<String>,
    },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSection {
    #[serde(default = "default_h")]
    pub h: f64,
    #[serde(default = "default_crossing_tol")]
    pub crossing_tol: f64,
    #[serde(default = "default_jacobian")]
    pub jacobian: String,
}

fn default_h() -> f64 {
    1e-3
}

fn default_crossing_tol() -> f64 {
    1e-12
}

fn default_jacobian() -> String {
    "variational".into()
}

impl Default for FlowSection {
    fn default() -> Self {
        FlowSection {
            h: default_h(),
            crossing_tol: default_crossing_tol(),
            jacobian: default_jacobian(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySection {
    #[serde(default = "default_poincare_grid")]
    pub poincare_grid: usize,
    #[serde(default = "default_divergence_grid")]
    pub divergence_grid: usize,
    #[serde(default = "default_divergence_step")]
    pub divergence_step: f64,
    #[serde(default = "default_rho_grid")]
    pub rho_grid: usize,
    #[serde(default = "default_flatness_grid")]
    pub flatness_grid: usize,
    #[serde(default = "default_group_law_samples")]
    pub group_law_samples: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_poincare_grid() -> usize {
    20
}

fn default_divergence_grid() -> usize {
    15
}

fn default_divergence_step() -> f64 {
    1e-4
}

fn default_rho_grid() -> usize {
    20
}

fn default_flatness_grid() -> usize {
    10
}

fn default_group_law_samples() -> usize {
    50
}

fn default_seed() -> u64 {
    1
}

impl Default for VerifySection {
    fn default() -> Self {
        VerifySection {
            poincare_grid: default_poincare_grid(),
            divergence_grid: default_divergence_grid(),
            divergence_step: default_divergence_step(),
            rho_grid: default_rho_grid(),
            flatness_grid: default_flatness_grid(),
            group_law_samples: default_group_law_samples(),
            seed: default_seed(),
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default)]
    pub report: Option<PathBuf>,
    #[serde(default)]
    pub tables: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub problem: ProblemSection,
    pub field: FieldSection,
    #[serde(default)]
    pub map: MapSection,
    #[serde(default)]
    pub flow: FlowSection,
    #[serde(default)]
    pub verify: VerifySection,
    #[serde(default)]
    pub output: OutputSection,
}

/// Resolve an axis name. Field expressions see `t` as variable 0 and
/// spatial axes shifted by one; map profiles see spatial axes from 0 and
/// reject `t`.
fn axis_index(name: &str, m: usize, with_time: bool) -> Result<usize> {
    let spatial = match name {
        "t" => {
            if with_time {
                return Ok(0);
            }
            bail!("map profiles cannot depend on t");
        }
        "x" => 0,
        "y" => 1,
        "z" => 2,
        other => {
            let digits = other
                .strip_prefix('x')
                .and_then(|d| d.parse::<usize>().ok())
                .ok_or_else(|| anyhow!("unknown axis name {other:?} (use t, x, y, z or x0..)"))?;
            digits
        }
    };
    if spatial >= m {
        bail!("axis {name:?} out of range for dimension {m}");
    }
    Ok(spatial + usize::from(with_time))
}

fn build_factor(f: &FnSpec, m: usize, with_time: bool) -> Result<TrigPoly> {
    if f.k == 0 {
        bail!("frequency k must be at least 1 (use a plain constant term instead)");
    }
    let var = axis_index(&f.var, m, with_time)?;
    match f.f.as_str() {
        "sin" => Ok(TrigPoly::sin(1.0, var, f.k)),
        "cos" => Ok(TrigPoly::cos(1.0, var, f.k)),
        other => bail!("unknown function {other:?} (expected sin or cos)"),
    }
}

/// Build one trig-polynomial from a term list.
pub fn build_poly(terms: &[TermSpec], m: usize, with_time: bool) -> Result<TrigPoly> {
    let mut poly = TrigPoly::zero();
    for (i, term) in terms.iter().enumerate() {
        let sugar = term.sin.is_some() || term.cos.is_some();
        if term.sin.is_some() && term.cos.is_some() {
            bail!("term {i}: give either sin or cos, not both (use fns for products)");
        }
        if sugar && term.fns.is_some() {
            bail!("term {i}: give either the sin/cos shorthand or fns, not both");
        }
        if term.k.is_some() && !sugar {
            bail!("term {i}: k only applies to the sin/cos shorthand");
        }
        let mut part = TrigPoly::constant(term.c);
        if sugar {
            let spec = FnSpec {
                f: if term.sin.is_some() { "sin" } else { "cos" }.into(),
                var: term.sin.clone().or_else(|| term.cos.clone()).unwrap(),
                k: term.k.unwrap_or(1),
            };
            part = part.times(&build_factor(&spec, m, with_time)?);
        } else if let Some(fns) = &term.fns {
            for f in fns {
                part = part.times(&build_factor(f, m, with_time)?);
            }
        }
        poly = poly.plus(part);
    }
    Ok(poly)
}

fn check_schedule(schedule: &Option<String>, schedulable: bool) -> Result<()> {
    match schedule.as_deref() {
        None => Ok(()),
        Some("linear") if schedulable => Ok(()),
        Some("linear") => bail!("linear map factors admit no schedule; decompose into shears"),
        Some(other) => bail!("unknown schedule {other:?} (only \"linear\" is supported)"),
    }
}

impl ProblemConfig {
    pub fn parse_str(text: &str) -> Result<Self> {
        let cfg: ProblemConfig = toml::from_str(text).context("schema error")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        Self::parse_str(&text).with_context(|| format!("in config {}", path.display()))
    }

    /// Structural validation beyond what the schema encodes: dimensions,
    /// axis ranges, unimodularity, flow parameter bounds.
    fn validate(&self) -> Result<()> {
        let m = self.problem.dimension;
        if m == 0 {
            bail!("dimension must be at least 1");
        }
        if self.field.space.len() != m {
            bail!(
                "dimension error: {} spatial field components for dimension {m}",
                self.field.space.len()
            );
        }
        self.field_tm()?;
        self.correction()?;
        self.flow_config()?;
        if self.verify.poincare_grid == 0
            || self.verify.divergence_grid == 0
            || self.verify.rho_grid == 0
            || self.verify.flatness_grid == 0
        {
            bail!("verification grids must be at least 1");
        }
        if !(self.verify.divergence_step > 0.0 && self.verify.divergence_step < 0.1) {
            bail!("divergence_step must lie in (0, 0.1)");
        }
        Ok(())
    }

    /// The base field v from its component expressions.
    pub fn field_tm(&self) -> Result<FieldTM> {
        let m = self.problem.dimension;
        let mut comps = Vec::with_capacity(m + 1);
        comps.push(TrigRational::from_poly(build_poly(
            &self.field.time,
            m,
            true,
        )?));
        for (i, terms) in self.field.space.iter().enumerate() {
            let poly = build_poly(terms, m, true)
                .with_context(|| format!("spatial component {i}"))?;
            comps.push(TrigRational::from_poly(poly));
        }
        FieldTM::new(m, comps).map_err(|e| anyhow!("field rejected: {e}"))
    }

    /// The correction map R (target return map = return map of v composed
    /// with R).
    pub fn correction(&self) -> Result<MapExpr> {
        let m = self.problem.dimension;
        let mut factors = Vec::with_capacity(self.map.factor.len());
        for (i, f) in self.map.factor.iter().enumerate() {
            let built = match f {
                FactorConfig::Shear {
                    target,
                    profile,
                    schedule,
                } => {
                    check_schedule(schedule, true)
                        .with_context(|| format!("map factor {i}"))?;
                    ElementaryMap::Shear {
                        target: axis_index(target, m, false)
                            .with_context(|| format!("map factor {i}"))?,
                        profile: build_poly(profile, m, false)
                            .with_context(|| format!("map factor {i} profile"))?,
                    }
                }
                FactorConfig::Linear { rows, schedule } => {
                    check_schedule(schedule, false)
                        .with_context(|| format!("map factor {i}"))?;
                    let lin = ElementaryMap::Linear {
                        matrix: rows.clone(),
                    };
                    let probe = MapExpr::new(m, vec![lin.clone()])
                        .map_err(|e| anyhow!("map factor {i}: {e}"))?;
                    let origin = TorusPoint::new(vec![0.0; m])?;
                    probe.invert(&origin).map_err(|e| {
                        anyhow!("map factor {i}: non-unimodular linear factor: {e}")
                    })?;
                    lin
                }
                FactorConfig::Translate { offset, schedule } => {
                    check_schedule(schedule, true)
                        .with_context(|| format!("map factor {i}"))?;
                    ElementaryMap::Translate {
                        offset: offset.clone(),
                    }
                }
                FactorConfig::Scale { factors, schedule } => {
                    check_schedule(schedule, true)
                        .with_context(|| format!("map factor {i}"))?;
                    ElementaryMap::Scale {
                        factors: factors.clone(),
                    }
                }
            };
            factors.push(built);
        }
        MapExpr::new(m, factors).map_err(|e| anyhow!("map rejected: {e}"))
    }

    pub fn flow_config(&self) -> Result<FlowConfig> {
        let jacobian = match self.flow.jacobian.as_str() {
            "variational" => JacobianMode::Variational,
            "finite-difference" => JacobianMode::FiniteDifference,
            other => bail!("unknown jacobian mode {other:?}"),
        };
        let cfg = FlowConfig {
            h: self.flow.h,
            crossing_tol: self.flow.crossing_tol,
            jacobian,
        };
        cfg.validate().map_err(|e| anyhow!("flow parameters: {e}"))?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use suspension::FieldEval;

    const MINIMAL: &str = r#"
        [problem]
        dimension = 2

        [field]
        time = [{ c = 1.0 }]
        space = [[{ c = 0.3 }], [{ c = 0.0 }]]

        [[map.factor]]
        kind = "shear"
        target = "x"
        profile = [{ c = 0.2, sin = "y" }]
    "#;

    #[test]
    fn minimal_drift_shear_parses() {
        let cfg = ProblemConfig::parse_str(MINIMAL).unwrap();
        assert_eq!(cfg.problem.dimension, 2);
        let v = cfg.field_tm().unwrap();
        assert_eq!(v.dim(), 2);
        let r = cfg.correction().unwrap();
        assert_eq!(r.factors().len(), 1);
        // Defaults fill in.
        assert_eq!(cfg.verify.poincare_grid, 20);
        assert_eq!(cfg.flow.h, 1e-3);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = MINIMAL.replace("[problem]", "[problem]\n        extra = 3");
        let err = ProblemConfig::parse_str(&text).unwrap_err();
        assert!(format!("{err:#}").contains("schema error"), "{err:#}");
    }

    #[test]
    fn non_unimodular_linear_is_rejected() {
        let text = r#"
            [problem]
            dimension = 2
            [field]
            time = [{ c = 1.0 }]
            space = [[{ c = 0.0 }], [{ c = 0.0 }]]
            [[map.factor]]
            kind = "linear"
            rows = [[2, 0], [0, 1]]
        "#;
        let err = ProblemConfig::parse_str(text).unwrap_err();
        assert!(format!("{err:#}").contains("non-unimodular"), "{err:#}");
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let text = r#"
            [problem]
            dimension = 3
            [field]
            time = [{ c = 1.0 }]
            space = [[{ c = 0.0 }], [{ c = 0.0 }]]
        "#;
        let err = ProblemConfig::parse_str(text).unwrap_err();
        assert!(format!("{err:#}").contains("dimension error"), "{err:#}");
    }

    #[test]
    fn axis_names_resolve_in_both_contexts() {
        assert_eq!(axis_index("t", 2, true).unwrap(), 0);
        assert_eq!(axis_index("x", 2, true).unwrap(), 1);
        assert_eq!(axis_index("y", 2, true).unwrap(), 2);
        assert_eq!(axis_index("x", 2, false).unwrap(), 0);
        assert_eq!(axis_index("x1", 2, false).unwrap(), 1);
        assert!(axis_index("t", 2, false).is_err());
        assert!(axis_index("z", 2, true).is_err());
        assert!(axis_index("w", 4, true).is_err());
    }

    #[test]
    fn term_sugar_builds_expected_polynomials() {
        // 1 + 0.5·sin(2πy) as a field component (y is variable 2 there).
        let terms: Vec<TermSpec> = toml::from_str::<toml::Value>(
            r#"v = [{ c = 1.0 }, { c = 0.5, sin = "y" }]"#,
        )
        .unwrap()
        .get("v")
        .unwrap()
        .clone()
        .try_into()
        .unwrap();
        let poly = build_poly(&terms, 2, true).unwrap();
        let tau = std::f64::consts::TAU;
        for &(t, x, y) in &[(0.0, 0.1, 0.3), (0.5, 0.9, 0.77)] {
            let want = 1.0 + 0.5 * (tau * y).sin();
            assert!((poly.eval(&[t, x, y]) - want).abs() < 1e-15);
        }
        // Product form with explicit frequency.
        let terms: Vec<TermSpec> = toml::from_str::<toml::Value>(
            r#"v = [{ c = 2.0, fns = [{ f = "cos", var = "x", k = 2 }, { f = "sin", var = "y" }] }]"#,
        )
        .unwrap()
        .get("v")
        .unwrap()
        .clone()
        .try_into()
        .unwrap();
        let poly = build_poly(&terms, 2, true).unwrap();
        let (x, y) = (0.21, 0.64);
        let want = 2.0 * (2.0 * tau * x).cos() * (tau * y).sin();
        assert!((poly.eval(&[0.0, x, y]) - want).abs() < 1e-15);
    }

    #[test]
    fn schedule_flag_only_accepts_linear_schedules() {
        let text = MINIMAL.replace(
            "profile = [{ c = 0.2, sin = \"y\" }]",
            "profile = [{ c = 0.2, sin = \"y\" }]\n        schedule = \"quadratic\"",
        );
        let err = ProblemConfig::parse_str(&text).unwrap_err();
        assert!(format!("{err:#}").contains("unknown schedule"), "{err:#}");
    }

    #[test]
    fn bad_flow_parameters_are_rejected() {
        let text = format!("{MINIMAL}\n[flow]\nh = 0.5\n");
        let err = ProblemConfig::parse_str(&text).unwrap_err();
        assert!(format!("{err:#}").contains("flow parameters"), "{err:#}");
    }
}
