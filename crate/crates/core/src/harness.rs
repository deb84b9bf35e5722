//! Manufactured cases, convergence studies and error-order tables.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::flowmap::{advance_point, RigidRotation, RkTableau, VelocityField, ZeroField};
use crate::geometry::{fit_periodic_spline, SplineInterface};
use crate::solver::{run, track_interface, FlowCase, RunConfig, RunResult};
use crate::{Error, Mat2, Result, Vec2};

/// Divergence-free field that stretches a disk into a long filament and
/// reverses: `cos(pi t / 3) (sin^2(pi x) sin(2 pi y), -sin^2(pi y) sin(2 pi x))`.
#[derive(Clone, Copy, Debug, Default)]
pub struct VortexField;

impl VelocityField for VortexField {
    fn velocity(&self, x: Vec2, t: f64) -> Vec2 {
        let c = (PI * t / 3.0).cos();
        let (sx, sy) = ((PI * x.x).sin(), (PI * x.y).sin());
        c * Vec2::new(
            sx * sx * (2.0 * PI * x.y).sin(),
            -sy * sy * (2.0 * PI * x.x).sin(),
        )
    }

    fn gradient(&self, x: Vec2, t: f64) -> Mat2 {
        let c = (PI * t / 3.0).cos();
        let (sx, sy) = ((PI * x.x).sin(), (PI * x.y).sin());
        let (s2x, s2y) = ((2.0 * PI * x.x).sin(), (2.0 * PI * x.y).sin());
        let (c2x, c2y) = ((2.0 * PI * x.x).cos(), (2.0 * PI * x.y).cos());
        c * Mat2::new(
            PI * s2x * s2y,
            2.0 * PI * sx * sx * c2y,
            -2.0 * PI * sy * sy * c2x,
            -PI * s2y * s2x,
        )
    }
}

/// Circle of radius `r` about `c`, counterclockwise by arclength.
fn circle_point(c: Vec2, r: f64, l: f64) -> Vec2 {
    c + r * Vec2::new((l / r).cos(), (l / r).sin())
}

const DISK_CENTER: Vec2 = Vec2::new(0.5, 0.75);
const DISK_RADIUS: f64 = 0.15;

/// Two-phase manufactured solution convected by [`VortexField`]:
/// a rotating cell inside the drop, an exponential travelling wave outside,
/// with jumps of velocity, stress and pressure across the interface.
#[derive(Clone)]
pub struct VortexCase {
    nu: [f64; 2],
    field: Arc<dyn VelocityField>,
}

impl VortexCase {
    pub fn new() -> Self {
        Self {
            nu: [1.0, 1e-3],
            field: Arc::new(VortexField),
        }
    }
}

impl Default for VortexCase {
    fn default() -> Self {
        Self::new()
    }
}

impl FlowCase for VortexCase {
    fn name(&self) -> &str {
        "oseen-paper"
    }
    fn nu(&self) -> [f64; 2] {
        self.nu
    }
    fn transport(&self) -> Arc<dyn VelocityField> {
        self.field.clone()
    }
    fn initial_point(&self, l: f64) -> Vec2 {
        circle_point(DISK_CENTER, DISK_RADIUS, l)
    }
    fn initial_length(&self) -> f64 {
        2.0 * PI * DISK_RADIUS
    }

    fn velocity(&self, phase: usize, x: Vec2, t: f64) -> Vec2 {
        if phase == 1 {
            let (sx, cx) = (PI * x.x).sin_cos();
            let (sy, cy) = (PI * x.y).sin_cos();
            t.cos() * Vec2::new(cx * sy, -sx * cy)
        } else {
            let (s, c) = (PI * (x.y + t)).sin_cos();
            x.x.exp() * Vec2::new(s, c / PI)
        }
    }

    fn velocity_gradient(&self, phase: usize, x: Vec2, t: f64) -> Mat2 {
        if phase == 1 {
            let (sx, cx) = (PI * x.x).sin_cos();
            let (sy, cy) = (PI * x.y).sin_cos();
            PI * t.cos() * Mat2::new(-sx * sy, cx * cy, -cx * cy, sx * sy)
        } else {
            let (s, c) = (PI * (x.y + t)).sin_cos();
            x.x.exp() * Mat2::new(s, PI * c, c / PI, -s)
        }
    }

    fn velocity_dt(&self, phase: usize, x: Vec2, t: f64) -> Vec2 {
        if phase == 1 {
            let (sx, cx) = (PI * x.x).sin_cos();
            let (sy, cy) = (PI * x.y).sin_cos();
            -t.sin() * Vec2::new(cx * sy, -sx * cy)
        } else {
            let (s, c) = (PI * (x.y + t)).sin_cos();
            x.x.exp() * Vec2::new(PI * c, -s)
        }
    }

    fn velocity_laplacian(&self, phase: usize, x: Vec2, t: f64) -> Vec2 {
        if phase == 1 {
            -2.0 * PI * PI * self.velocity(1, x, t)
        } else {
            let (s, c) = (PI * (x.y + t)).sin_cos();
            x.x.exp() * Vec2::new((1.0 - PI * PI) * s, (1.0 / PI - PI) * c)
        }
    }

    fn pressure(&self, phase: usize, x: Vec2, _: f64) -> f64 {
        let (a, b) = (0.5 * PI * x.x, 0.5 * PI * x.y);
        if phase == 1 {
            a.cos() * b.sin()
        } else {
            a.sin() * b.cos()
        }
    }

    fn pressure_gradient(&self, phase: usize, x: Vec2, _: f64) -> Vec2 {
        let (sa, ca) = (0.5 * PI * x.x).sin_cos();
        let (sb, cb) = (0.5 * PI * x.y).sin_cos();
        if phase == 1 {
            0.5 * PI * Vec2::new(-sa * sb, ca * cb)
        } else {
            0.5 * PI * Vec2::new(ca * cb, -sa * sb)
        }
    }
}

/// `y^e`, zero for negative `e` (derivatives of monomials).
fn mono(y: f64, e: i32) -> f64 {
    if e < 0 {
        0.0
    } else {
        y.powi(e)
    }
}

/// Steady polynomial flow on a fixed disk: the velocity is the curl of
/// `x^2 y^{k-1}` (degree `k`, continuous across the interface), pressures
/// `x^{k-1}` and `y^{k-1} + 1/2` jump.
#[derive(Clone)]
pub struct SteadyPolyCase {
    k: usize,
    nu: [f64; 2],
    field: Arc<dyn VelocityField>,
}

impl SteadyPolyCase {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            nu: [1.0, 1e-3],
            field: Arc::new(ZeroField),
        }
    }
}

impl FlowCase for SteadyPolyCase {
    fn name(&self) -> &str {
        "steady-poly"
    }
    fn nu(&self) -> [f64; 2] {
        self.nu
    }
    fn transport(&self) -> Arc<dyn VelocityField> {
        self.field.clone()
    }
    fn initial_point(&self, l: f64) -> Vec2 {
        circle_point(DISK_CENTER, DISK_RADIUS, l)
    }
    fn initial_length(&self) -> f64 {
        2.0 * PI * DISK_RADIUS
    }

    fn velocity(&self, _: usize, x: Vec2, _: f64) -> Vec2 {
        let m = self.k as i32 - 1;
        Vec2::new(
            m as f64 * x.x * x.x * mono(x.y, m - 1),
            -2.0 * x.x * mono(x.y, m),
        )
    }

    fn velocity_gradient(&self, _: usize, x: Vec2, _: f64) -> Mat2 {
        let m = self.k as i32 - 1;
        let mf = m as f64;
        Mat2::new(
            2.0 * mf * x.x * mono(x.y, m - 1),
            mf * (mf - 1.0) * x.x * x.x * mono(x.y, m - 2),
            -2.0 * mono(x.y, m),
            -2.0 * mf * x.x * mono(x.y, m - 1),
        )
    }

    fn velocity_dt(&self, _: usize, _: Vec2, _: f64) -> Vec2 {
        Vec2::zeros()
    }

    fn velocity_laplacian(&self, _: usize, x: Vec2, _: f64) -> Vec2 {
        let m = self.k as i32 - 1;
        let mf = m as f64;
        Vec2::new(
            2.0 * mf * mono(x.y, m - 1)
                + mf * (mf - 1.0) * (mf - 2.0) * x.x * x.x * mono(x.y, m - 3),
            -2.0 * mf * (mf - 1.0) * x.x * mono(x.y, m - 2),
        )
    }

    fn pressure(&self, phase: usize, x: Vec2, _: f64) -> f64 {
        let m = self.k as i32 - 1;
        if phase == 1 {
            mono(x.x, m)
        } else {
            mono(x.y, m) + 0.5
        }
    }

    fn pressure_gradient(&self, phase: usize, x: Vec2, _: f64) -> Vec2 {
        let m = self.k as i32 - 1;
        if phase == 1 {
            Vec2::new(m as f64 * mono(x.x, m - 1), 0.0)
        } else {
            Vec2::new(0.0, m as f64 * mono(x.y, m - 1))
        }
    }
}

/// The disk carried by a rigid rotation about the domain center; only the
/// geometry is meaningful (the flow fields are zero).
#[derive(Clone)]
pub struct RotationCase {
    pub rotation: RigidRotation,
    field: Arc<dyn VelocityField>,
}

impl RotationCase {
    pub fn new(omega: f64) -> Self {
        let rotation = RigidRotation {
            center: Vec2::new(0.5, 0.5),
            omega,
        };
        Self {
            rotation,
            field: Arc::new(rotation),
        }
    }
}

impl FlowCase for RotationCase {
    fn name(&self) -> &str {
        "rotation"
    }
    fn nu(&self) -> [f64; 2] {
        [1.0, 1.0]
    }
    fn transport(&self) -> Arc<dyn VelocityField> {
        self.field.clone()
    }
    fn initial_point(&self, l: f64) -> Vec2 {
        circle_point(DISK_CENTER, DISK_RADIUS, l)
    }
    fn initial_length(&self) -> f64 {
        2.0 * PI * DISK_RADIUS
    }
    fn velocity(&self, _: usize, _: Vec2, _: f64) -> Vec2 {
        Vec2::zeros()
    }
    fn velocity_gradient(&self, _: usize, _: Vec2, _: f64) -> Mat2 {
        Mat2::zeros()
    }
    fn velocity_dt(&self, _: usize, _: Vec2, _: f64) -> Vec2 {
        Vec2::zeros()
    }
    fn velocity_laplacian(&self, _: usize, _: Vec2, _: f64) -> Vec2 {
        Vec2::zeros()
    }
    fn pressure(&self, _: usize, _: Vec2, _: f64) -> f64 {
        0.0
    }
    fn pressure_gradient(&self, _: usize, _: Vec2, _: f64) -> Vec2 {
        Vec2::zeros()
    }
}

/// Case selector for the command line.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CaseId {
    OseenPaper,
    SteadyPoly,
    TrackingOnly,
}

impl CaseId {
    pub const ALL: [CaseId; 3] = [CaseId::OseenPaper, CaseId::SteadyPoly, CaseId::TrackingOnly];

    pub fn as_str(self) -> &'static str {
        match self {
            CaseId::OseenPaper => "oseen-paper",
            CaseId::SteadyPoly => "steady-poly",
            CaseId::TrackingOnly => "tracking-only",
        }
    }

    /// The flow problem behind the case (`tracking-only` tracks the vortex flow).
    pub fn build(self, k: usize) -> Box<dyn FlowCase> {
        match self {
            CaseId::OseenPaper | CaseId::TrackingOnly => Box::new(VortexCase::new()),
            CaseId::SteadyPoly => Box::new(SteadyPolyCase::new(k)),
        }
    }
}

impl fmt::Display for CaseId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CaseId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown case '{s}' (expected oseen-paper, steady-poly or tracking-only)"
                ))
            })
    }
}

/// All closed-form data of a case at one point and time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseSample {
    pub u: [[f64; 2]; 2],
    pub p: [f64; 2],
    pub f: [[f64; 2]; 2],
    pub g0: [f64; 2],
    pub g1: [f64; 2],
    pub w: [f64; 2],
}

/// Evaluates velocity, pressure, forcing, jump data (for normal `n`) and the
/// transport field.
pub fn emit_case_functions(case: &dyn FlowCase, t: f64, x: Vec2, n: Vec2) -> CaseSample {
    let arr = |v: Vec2| [v.x, v.y];
    let (g0, g1) = case.jump_data(x, n, t);
    CaseSample {
        u: [arr(case.velocity(1, x, t)), arr(case.velocity(2, x, t))],
        p: [case.pressure(1, x, t), case.pressure(2, x, t)],
        f: [arr(case.forcing(1, x, t)), arr(case.forcing(2, x, t))],
        g0: arr(g0),
        g1: arr(g1),
        w: arr(case.transport().velocity(x, t)),
    }
}

/// `log2(coarse / fine)`, undefined unless both are positive and finite.
pub fn order(coarse: f64, fine: f64) -> Option<f64> {
    (coarse > 0.0 && fine > 0.0 && coarse.is_finite() && fine.is_finite())
        .then(|| (coarse / fine).log2())
}

/// One level of a study.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EocRow {
    pub h: f64,
    /// `e_{u,0}, e_{u,1}, e_{p,0}, e_{p,1}`; `None` when the run failed.
    pub errors: Option<[f64; 4]>,
    /// Orders against the previous row.
    pub orders: [Option<f64>; 4],
    pub note: Option<String>,
}

/// Error table over an `h`-halving sequence.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EocTable {
    pub rows: Vec<EocRow>,
}

impl EocTable {
    pub const NAMES: [&'static str; 4] = ["e_u0", "e_u1", "e_p0", "e_p1"];

    pub fn push(&mut self, h: f64, errors: Option<[f64; 4]>, note: Option<String>) {
        let mut orders = [None; 4];
        if let (Some(prev), Some(cur)) = (self.rows.last().and_then(|r| r.errors), errors) {
            for i in 0..4 {
                orders[i] = order(prev[i], cur[i]);
            }
        }
        self.rows.push(EocRow {
            h,
            errors,
            orders,
            note,
        });
    }

    /// Order of measure `i` between the last two rows.
    pub fn last_order(&self, i: usize) -> Option<f64> {
        self.rows.last().and_then(|r| r.orders[i])
    }

    pub fn to_csv(&self) -> String {
        let mut s =
            String::from("h,e_u0,order_u0,e_u1,order_u1,e_p0,order_p0,e_p1,order_p1,note\n");
        for r in &self.rows {
            s.push_str(&format!("{:.10}", r.h));
            for i in 0..4 {
                let e = r
                    .errors
                    .map(|e| format!("{:.6e}", e[i]))
                    .unwrap_or_default();
                let o = r.orders[i].map(|o| format!("{o:.4}")).unwrap_or_default();
                s.push_str(&format!(",{e},{o}"));
            }
            s.push_str(&format!(",{}\n", r.note.clone().unwrap_or_default()));
        }
        s
    }
}

impl fmt::Display for EocTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:<10}", "h=tau")?;
        for name in Self::NAMES {
            write!(f, " | {name:>10} {:>6}", "order")?;
        }
        writeln!(f)?;
        for r in &self.rows {
            write!(f, "1/{:<8}", (1.0 / r.h).round())?;
            for i in 0..4 {
                let e = r
                    .errors
                    .map(|e| format!("{:.3e}", e[i]))
                    .unwrap_or_else(|| "failed".into());
                let o = r.orders[i]
                    .map(|o| format!("{o:.2}"))
                    .unwrap_or_else(|| "---".into());
                write!(f, " | {e:>10} {o:>6}")?;
            }
            if let Some(n) = &r.note {
                write!(f, "  ({n})")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Runs `base` on every level (`h = tau = 1 / nc`) and tabulates the errors.
pub fn convergence_study(
    base: &RunConfig,
    case: &dyn FlowCase,
    levels: &[usize],
) -> Result<(EocTable, Vec<RunResult>)> {
    let mut table = EocTable::default();
    let mut results = Vec::with_capacity(levels.len());
    for &nc in levels {
        let cfg = RunConfig {
            nc,
            tau: None,
            ..base.clone()
        };
        let r = run(&cfg, case)?;
        match &r.failure {
            None => table.push(cfg.h(), Some(r.errors.as_array()), None),
            Some(msg) => table.push(cfg.h(), None, Some(msg.clone())),
        }
        results.push(r);
    }
    Ok((table, results))
}

/// Flow map of a case from `0` to `t_final`, by many small steps of the
/// fifth-order tableau (or exactly for a rigid rotation).
pub fn reference_flow(
    case: &dyn FlowCase,
    t_final: f64,
    substeps: usize,
) -> impl Fn(Vec2) -> Vec2 + '_ {
    let tab = RkTableau::rk5();
    move |x| {
        let w = case.transport();
        let dt = t_final / substeps as f64;
        (0..substeps).fold(x, |y, i| {
            advance_point(y, i as f64 * dt, dt, &tab, w.as_ref())
        })
    }
}

/// Interface position error at `T`: largest distance from the exact image
/// of the initial curve to the tracked spline. Marker labels drift
/// tangentially under redistribution, so points are not compared label by
/// label.
pub fn tracking_error(
    case: &dyn FlowCase,
    k: usize,
    tau: f64,
    t_final: f64,
    eta: f64,
    exact: &dyn Fn(Vec2) -> Vec2,
) -> Result<f64> {
    let steps = (t_final / tau).round() as usize;
    let chains = track_interface(case, k, tau, steps, eta)?;
    let s = fit_periodic_spline(chains.last().expect("at least the initial chain"))?;
    Ok(interface_distance(case, &s, exact))
}

/// Largest distance from `exact` applied to samples of the initial curve
/// to the spline `s`.
pub fn interface_distance(
    case: &dyn FlowCase,
    s: &SplineInterface,
    exact: &dyn Fn(Vec2) -> Vec2,
) -> f64 {
    let samples = 4 * s.num_segments().max(64);
    let len = case.initial_length();
    (0..samples)
        .map(|i| {
            s.distance(exact(case.initial_point(len * i as f64 / samples as f64)))
                .0
        })
        .fold(0.0, f64::max)
}

/// Tracking errors over `tau = 1 / levels[i]` with the marker spacing rule
/// `eta = eta_factor * tau^{max(1, k/3)}`; returns `(tau, error, order)` rows.
pub fn tracking_order_study(
    case: &dyn FlowCase,
    k: usize,
    t_final: f64,
    levels: &[usize],
    eta_factor: f64,
    exact: &dyn Fn(Vec2) -> Vec2,
) -> Result<Vec<(f64, f64, Option<f64>)>> {
    let mut rows: Vec<(f64, f64, Option<f64>)> = Vec::new();
    for &m in levels {
        let tau = 1.0 / m as f64;
        let eta = eta_factor * tau.powf((k as f64 / 3.0).max(1.0));
        let e = tracking_error(case, k, tau, t_final, eta, exact)?;
        let ord = rows.last().and_then(|r| order(r.1, e));
        rows.push((tau, e, ord));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn case_ids_round_trip() {
        for c in CaseId::ALL {
            assert_eq!(c.as_str().parse::<CaseId>().unwrap(), c);
        }
        assert!("paper".parse::<CaseId>().is_err());
    }

    #[test]
    fn eoc_table_orders() {
        let mut t = EocTable::default();
        t.push(0.5, Some([1.0, 1.0, 0.0, 1.0]), None);
        t.push(0.25, Some([0.125, 0.25, 0.0, 1.0]), None);
        assert_eq!(t.last_order(0), Some(3.0));
        assert_eq!(t.last_order(1), Some(2.0));
        assert_eq!(t.last_order(2), None);
        assert_eq!(t.last_order(3), Some(0.0));
        let s = t.to_string();
        assert!(s.contains("---"));
        assert!(s.contains("3.00"));
    }

    #[test]
    fn vortex_field_is_solenoidal_and_vanishes_on_the_boundary() {
        let w = VortexField;
        for i in 0..=10 {
            let s = i as f64 / 10.0;
            for x in [
                Vec2::new(s, 0.0),
                Vec2::new(s, 1.0),
                Vec2::new(0.0, s),
                Vec2::new(1.0, s),
            ] {
                assert!(w.velocity(x, 0.3).norm() < 1e-15);
            }
            let g = w.gradient(Vec2::new(s, 0.37), 0.8);
            assert!(g.trace().abs() < 1e-13);
        }
    }
}
