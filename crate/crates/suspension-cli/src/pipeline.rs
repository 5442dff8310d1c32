//! End-to-end verification: build the suspended field from a problem config
//! and measure every identity the construction promises. Each check is a
//! named residual with a pinned bound; the pipeline keeps going after
//! failures so a report always covers whatever remains measurable.

use std::time::Instant;

use anyhow::{anyhow, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use suspension::maps::weighted_volume_residual;
use suspension::{
    field::DIVERGENCE_TOL, flow::poincare, geometry::grid, geometry::torus_dist, suspension_build,
    FieldEval, FieldTM, FlowConfig, MapExpr, SuspensionField, TorusPoint,
};

use crate::config::ProblemConfig;
use crate::report;

/// Pinned bounds for the verification suite.
pub const POINCARE_TOL_CLOSED: f64 = 1e-9;
pub const POINCARE_TOL_NUMERIC: f64 = 1e-6;
pub const ORACLE_TOL: f64 = 1e-8;
pub const LAMBDA_TOL: f64 = 1e-8;
pub const SUSPENSION_DIV_TOL: f64 = 1e-5;
pub const SEAM_TOL: f64 = 1e-8;
pub const FLATNESS_TOL: f64 = 1e-12;
pub const GROUP_LAW_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Pass,
    Fail,
    Skipped,
}

impl Status {
    fn as_str(self) -> &'static str {
        match self {
            Status::Pass => "pass",
            Status::Fail => "fail",
            Status::Skipped => "skipped",
        }
    }
}

/// One named residual. `upper` checks pass when `value <= bound`, floor
/// checks when `value > bound`.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub value: f64,
    pub bound: f64,
    pub upper: bool,
    pub status: Status,
    pub note: String,
}

impl CheckResult {
    fn upper(name: &'static str, value: f64, bound: f64) -> Self {
        let status = if value <= bound {
            Status::Pass
        } else {
            Status::Fail
        };
        CheckResult {
            name,
            value,
            bound,
            upper: true,
            status,
            note: String::new(),
        }
    }

    fn floor(name: &'static str, value: f64, bound: f64) -> Self {
        let status = if value > bound {
            Status::Pass
        } else {
            Status::Fail
        };
        CheckResult {
            name,
            value,
            bound,
            upper: false,
            status,
            note: String::new(),
        }
    }

    fn skipped(name: &'static str, note: String) -> Self {
        CheckResult {
            name,
            value: f64::NAN,
            bound: f64::NAN,
            upper: true,
            status: Status::Skipped,
            note,
        }
    }

    fn with_note(mut self, note: String) -> Self {
        self.note = note;
        self
    }
}

pub struct RunReport {
    pub checks: Vec<CheckResult>,
    pub all_passed: bool,
    /// Deterministic report body (sorted key = value lines).
    pub body: Vec<String>,
    pub timings: Vec<(&'static str, u128)>,
    /// CSV tables by file name.
    pub tables: Vec<(String, String)>,
}

/// Hide a field's unit-time shortcut so the return map goes through event
/// detection; used to compare the two return-map paths against each other.
struct OpaqueTime<'a, F: FieldEval>(&'a F);

impl<F: FieldEval> FieldEval for OpaqueTime<'_, F> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn eval_into(&self, t: f64, x: &[f64], out: &mut [f64]) -> suspension::Result<()> {
        self.0.eval_into(t, x, out)
    }

    fn is_unit_time(&self) -> bool {
        false
    }

    fn time_floor_hint(&self) -> Option<f64> {
        self.0.time_floor_hint()
    }
}

fn axis_label(i: usize) -> String {
    match i {
        0 => "x".into(),
        1 => "y".into(),
        2 => "z".into(),
        other => format!("x{other}"),
    }
}

/// Column names for the m spatial axes, e.g. "x,y" in dimension 2.
pub fn axis_header(m: usize) -> String {
    (0..m).map(axis_label).collect::<Vec<_>>().join(",")
}

fn parallel_max<F>(count: usize, f: F) -> Result<(f64, Vec<String>)>
where
    F: Fn(usize) -> Result<(f64, String)> + Sync,
{
    let rows = (0..count)
        .into_par_iter()
        .map(&f)
        .collect::<Result<Vec<_>>>()?;
    let worst = rows.iter().map(|(v, _)| *v).fold(0.0_f64, f64::max);
    Ok((worst, rows.into_iter().map(|(_, r)| r).collect()))
}

/// Return map computed by event detection regardless of whether the field
/// advertises a unit time component; pairs with the time-1 shortcut on the
/// normalized field as mutual oracles.
pub fn event_detected_return<F: FieldEval>(
    field: &F,
    p: &TorusPoint,
    cfg: &FlowConfig,
) -> Result<suspension::ReturnData> {
    poincare(&OpaqueTime(field), p, cfg)
        .map_err(|e| anyhow!("event-detected return at {p:?}: {e}"))
}

/// Sup over sampled (t, x) of the componentwise deviation between two
/// fields on the cylinder.
pub fn field_deviation<A: FieldEval, B: FieldEval>(
    a: &A,
    b: &B,
    time_samples: usize,
    space_grid: usize,
) -> Result<f64> {
    let m = a.dim();
    let pts = grid(space_grid, m)?;
    let mut va = vec![0.0; m + 1];
    let mut vb = vec![0.0; m + 1];
    let mut worst: f64 = 0.0;
    for i in 0..time_samples {
        let t = i as f64 / time_samples as f64;
        for p in &pts {
            a.eval_into(t, p.coords(), &mut va)?;
            b.eval_into(t, p.coords(), &mut vb)?;
            for (u, w) in va.iter().zip(&vb) {
                worst = worst.max((u - w).abs());
            }
        }
    }
    Ok(worst)
}

/// Build the suspension for each scaling of the correction map and measure
/// sup |u_s − v|. The deviation shrinks linearly with the scale.
pub fn perturbation_ladder(
    v: &FieldTM,
    correction: &MapExpr,
    scales: &[f64],
    flow: FlowConfig,
) -> Result<Vec<(f64, f64)>> {
    let mut out = Vec::with_capacity(scales.len());
    for &s in scales {
        let scaled = correction
            .scaled(s)
            .map_err(|e| anyhow!("scaling correction by {s}: {e}"))?;
        let u = suspension_build(v, &scaled, flow).map_err(|e| anyhow!("build at {s}: {e}"))?;
        out.push((s, field_deviation(&u, v, 16, 8)?));
    }
    Ok(out)
}

/// Iterate the return map of the built field, comparing each image against
/// the exact iterate of the target map. Returns (k, point, residual) rows.
pub fn trace_orbit(
    u: &SuspensionField,
    flow: &FlowConfig,
    x0: &TorusPoint,
    n: usize,
) -> Result<Vec<(usize, TorusPoint, f64)>> {
    let mut rows = Vec::with_capacity(n);
    let mut p = x0.clone();
    let mut q = x0.clone();
    for k in 1..=n {
        p = poincare(u, &p, flow)
            .map_err(|e| anyhow!("return {k}: {e}"))?
            .image;
        q = u.family().eval(1.0, &q)?;
        rows.push((k, p.clone(), torus_dist(&p, &q)?));
    }
    Ok(rows)
}

/// Finite-difference divergence of a field on the cylinder at (t, x).
pub fn fd_divergence<F: FieldEval>(field: &F, t: f64, x: &[f64], step: f64) -> Result<f64> {
    let m = field.dim();
    let mut hi = vec![0.0; m + 1];
    let mut lo = vec![0.0; m + 1];
    field.eval_into(t + step, x, &mut hi)?;
    field.eval_into(t - step, x, &mut lo)?;
    let mut div = (hi[0] - lo[0]) / (2.0 * step);
    let mut shifted = x.to_vec();
    for i in 0..m {
        shifted[i] = x[i] + step;
        field.eval_into(t, &shifted, &mut hi)?;
        shifted[i] = x[i] - step;
        field.eval_into(t, &shifted, &mut lo)?;
        shifted[i] = x[i];
        div += (hi[1 + i] - lo[1 + i]) / (2.0 * step);
    }
    Ok(div)
}

/// Random group-law samples (t, s₁, s₂, x) with t, t+s₁, t+s₁+s₂ all inside
/// the fundamental time interval [0, 1].
pub fn group_law_samples(m: usize, count: usize, seed: u64) -> Vec<(f64, f64, f64, TorusPoint)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let t: f64 = rng.gen_range(0.0..1.0);
        let s1: f64 = rng.gen_range(-t..(1.0 - t).max(1e-9));
        let reach = t + s1;
        let s2: f64 = if (1.0 - reach) > -reach {
            rng.gen_range(-reach..(1.0 - reach))
        } else {
            0.0
        };
        let coords: Vec<f64> = (0..m).map(|_| rng.gen_range(0.0..1.0)).collect();
        out.push((t, s1, s2, TorusPoint::new(coords).expect("finite coords")));
    }
    out
}

pub fn run_pipeline(cfg: &ProblemConfig) -> Result<RunReport> {
    let total = Instant::now();
    let m = cfg.problem.dimension;
    let v = cfg.field_tm()?;
    let correction = cfg.correction()?;
    let flow_cfg = cfg.flow_config()?;
    let vg = &cfg.verify;

    let mut checks = Vec::new();
    let mut timings = Vec::new();
    let mut tables = Vec::new();

    // Base-field conditions: positive time component, zero divergence.
    let phase = Instant::now();
    let field_report = v.validate(vg.divergence_grid)?;
    checks.push(CheckResult::floor(
        "field.time_positivity",
        field_report.min_time_component,
        0.0,
    ));
    checks.push(CheckResult::upper(
        "field.divergence",
        field_report.max_divergence,
        DIVERGENCE_TOL,
    ));

    // The correction map must preserve the weighted section volume.
    let weight = {
        let vt = v.time_component().clone();
        move |x: &[f64]| {
            let mut vals = vec![0.0; x.len() + 1];
            vals[1..].copy_from_slice(x);
            vt.eval(&vals)
        }
    };
    let lambda_pts = grid(vg.rho_grid, m)?;
    let lambda = weighted_volume_residual(&correction, &weight, &lambda_pts)?;
    checks.push(CheckResult::upper(
        "map.lambda_preservation",
        lambda,
        LAMBDA_TOL,
    ));
    timings.push(("field_checks_ms", phase.elapsed().as_millis()));

    // The two return-map paths (event detection on v, time-1 flow of the
    // normalized field) must agree.
    let phase = Instant::now();
    match v.normalize() {
        Ok(v_hat) => {
            let pts = grid(vg.poincare_grid, m)?;
            let (worst, _) = parallel_max(pts.len(), |i| {
                let via_event = event_detected_return(&v, &pts[i], &flow_cfg)?;
                let via_unit = poincare(&v_hat, &pts[i], &flow_cfg)
                    .map_err(|e| anyhow!("unit-time return at {:?}: {e}", pts[i]))?;
                Ok((torus_dist(&via_event.image, &via_unit.image)?, String::new()))
            })?;
            checks.push(CheckResult::upper(
                "return_map.oracle_agreement",
                worst,
                ORACLE_TOL,
            ));
        }
        Err(e) => checks.push(CheckResult::skipped(
            "return_map.oracle_agreement",
            format!("normalization unavailable: {e}"),
        )),
    }
    timings.push(("return_map_ms", phase.elapsed().as_millis()));

    // Construction. Failure is itself a reportable outcome; the dependent
    // checks are then skipped.
    let phase = Instant::now();
    let built = suspension_build(&v, &correction, flow_cfg);
    timings.push(("construction_ms", phase.elapsed().as_millis()));
    let u = match built {
        Ok(u) => {
            let path = if u.family().has_closed_form_sigma() {
                "closed-form section flow"
            } else {
                "numeric section flow"
            };
            checks.push(
                CheckResult::floor("suspension.construction", u.rho_floor(), 0.0)
                    .with_note(path.into()),
            );
            Some(u)
        }
        Err(e) => {
            checks.push(
                CheckResult::floor("suspension.construction", f64::NAN, 0.0)
                    .with_note(e.to_string().replace('\n', "; ")),
            );
            None
        }
    };

    match &u {
        Some(u) => {
            // Return map of the built field against the target.
            let phase = Instant::now();
            let pts = grid(vg.poincare_grid, m)?;
            let tol = if u.family().has_closed_form_sigma() {
                POINCARE_TOL_CLOSED
            } else {
                POINCARE_TOL_NUMERIC
            };
            let (worst, rows) = parallel_max(pts.len(), |i| {
                let ret = poincare(u, &pts[i], &flow_cfg)
                    .map_err(|e| anyhow!("return map at {:?}: {e}", pts[i]))?;
                let target = u.family().eval(1.0, &pts[i])?;
                let d = torus_dist(&ret.image, &target)?;
                let coords = pts[i]
                    .coords()
                    .iter()
                    .map(|c| format!("{c:.6}"))
                    .collect::<Vec<_>>()
                    .join(",");
                Ok((d, format!("{i},{coords},{d:.12e}")))
            })?;
            checks.push(CheckResult::upper("suspension.poincare_residual", worst, tol));
            tables.push((
                "poincare_residuals.csv".into(),
                report::csv(&format!("index,{},residual", axis_header(m)), &rows),
            ));
            timings.push(("poincare_sweep_ms", phase.elapsed().as_millis()));

            // Volume preservation of the built field, finite differences.
            let phase = Instant::now();
            let n = vg.divergence_grid;
            let pts = grid(n, m)?;
            let (worst, rows) = parallel_max(n * pts.len(), |idx| {
                let t = (idx / pts.len()) as f64 / n as f64;
                let p = &pts[idx % pts.len()];
                let div = fd_divergence(u, t, p.coords(), vg.divergence_step)
                    .map_err(|e| anyhow!("divergence at t = {t}, {p:?}: {e}"))?;
                let coords = p
                    .coords()
                    .iter()
                    .map(|c| format!("{c:.6}"))
                    .collect::<Vec<_>>()
                    .join(",");
                Ok((div.abs(), format!("{t:.6},{coords},{div:.12e}")))
            })?;
            checks.push(CheckResult::upper(
                "suspension.divergence",
                worst,
                SUSPENSION_DIV_TOL,
            ));
            tables.push((
                "divergence_residuals.csv".into(),
                report::csv(&format!("t,{},divergence", axis_header(m)), &rows),
            ));
            timings.push(("divergence_sweep_ms", phase.elapsed().as_millis()));

            // Density: exact agreement with v_T at the section, periodicity
            // across the seam.
            let phase = Instant::now();
            let pts = grid(vg.rho_grid, m)?;
            let mut section_worst: f64 = 0.0;
            let mut seam_worst: f64 = 0.0;
            let mut rows = Vec::with_capacity(pts.len());
            for p in &pts {
                let mut vals = vec![0.0; m + 1];
                vals[1..].copy_from_slice(p.coords());
                let vt0 = v.time_component().eval(&vals);
                let rho0 = u.density(0.0, p.coords())?;
                let rho1 = u.density(1.0, p.coords())?;
                section_worst = section_worst.max((rho0 - vt0).abs());
                seam_worst = seam_worst.max((rho1 - rho0).abs());
                let coords = p
                    .coords()
                    .iter()
                    .map(|c| format!("{c:.6}"))
                    .collect::<Vec<_>>()
                    .join(",");
                rows.push(format!(
                    "{coords},{rho0:.12e},{rho1:.12e},{:.12e}",
                    rho1 - rho0
                ));
            }
            checks.push(CheckResult::upper(
                "density.section_identity",
                section_worst,
                0.0,
            ));
            checks.push(CheckResult::upper("density.periodicity", seam_worst, SEAM_TOL));
            tables.push((
                "seam_density.csv".into(),
                report::csv(
                    &format!("{},rho_start,rho_end,mismatch", axis_header(m)),
                    &rows,
                ),
            ));
            timings.push(("density_checks_ms", phase.elapsed().as_millis()));

            // Near the section the unit generator must coincide with the
            // normalized field.
            let phase = Instant::now();
            let pts = grid(vg.flatness_grid, m)?;
            let v_hat = v.normalize()?;
            let mut unit = vec![0.0; m + 1];
            let mut base = vec![0.0; m + 1];
            let mut worst: f64 = 0.0;
            for i in 0..=8 {
                let off = 0.0025 * i as f64;
                for &t in &[off, 1.0 - off] {
                    for p in &pts {
                        u.unit_field_into(t, p.coords(), &mut unit)?;
                        v_hat.eval_into(t.rem_euclid(1.0), p.coords(), &mut base)?;
                        for (a, b) in unit.iter().zip(&base) {
                            worst = worst.max((a - b).abs());
                        }
                    }
                }
            }
            checks.push(CheckResult::upper("boundary.flatness", worst, FLATNESS_TOL));
            timings.push(("flatness_ms", phase.elapsed().as_millis()));

            // The extended transport flow must compose like a flow.
            let phase = Instant::now();
            let samples = group_law_samples(m, vg.group_law_samples, vg.seed);
            let residual = u.family().group_law_residual(&samples)?;
            checks.push(CheckResult::upper("transport.group_law", residual, GROUP_LAW_TOL));
            timings.push(("group_law_ms", phase.elapsed().as_millis()));
        }
        None => {
            for name in [
                "suspension.poincare_residual",
                "suspension.divergence",
                "density.section_identity",
                "density.periodicity",
                "boundary.flatness",
                "transport.group_law",
            ] {
                checks.push(CheckResult::skipped(name, "construction failed".into()));
            }
        }
    }

    timings.push(("total_ms", total.elapsed().as_millis()));
    let all_passed = checks.iter().all(|c| c.status == Status::Pass);
    let body = report_body(cfg, &checks, all_passed);
    Ok(RunReport {
        checks,
        all_passed,
        body,
        timings,
        tables,
    })
}

fn report_body(cfg: &ProblemConfig, checks: &[CheckResult], all_passed: bool) -> Vec<String> {
    let mut body = vec![
        format!("config.dimension = {}", cfg.problem.dimension),
        format!("config.flow.crossing_tol = {}", report::num(cfg.flow.crossing_tol)),
        format!("config.flow.h = {}", report::num(cfg.flow.h)),
        format!("config.flow.jacobian = {}", cfg.flow.jacobian),
        format!("config.map.factors = {}", cfg.map.factor.len()),
        format!("config.verify.divergence_grid = {}", cfg.verify.divergence_grid),
        format!(
            "config.verify.divergence_step = {}",
            report::num(cfg.verify.divergence_step)
        ),
        format!("config.verify.flatness_grid = {}", cfg.verify.flatness_grid),
        format!(
            "config.verify.group_law_samples = {}",
            cfg.verify.group_law_samples
        ),
        format!("config.verify.poincare_grid = {}", cfg.verify.poincare_grid),
        format!("config.verify.rho_grid = {}", cfg.verify.rho_grid),
        format!("config.verify.seed = {}", cfg.verify.seed),
        format!("result = {}", if all_passed { "pass" } else { "fail" }),
    ];
    for c in checks {
        body.push(format!("check.{}.value = {}", c.name, report::num(c.value)));
        body.push(format!("check.{}.bound = {}", c.name, report::num(c.bound)));
        body.push(format!(
            "check.{}.cmp = {}",
            c.name,
            if c.upper { "max" } else { "floor" }
        ));
        body.push(format!("check.{}.status = {}", c.name, c.status.as_str()));
        if !c.note.is_empty() {
            body.push(format!("check.{}.note = {}", c.name, c.note));
        }
    }
    body
}
