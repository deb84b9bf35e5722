//! Acceptance report: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`). The report always completes;
//! set `ACCEPTANCE_STRICT=1` to turn any FAIL into a nonzero exit status.

use std::f64::consts::PI;
use std::time::Instant;

use nalgebra::DMatrix;
use oseen_cutfem::assembly::{
    assemble_ah, assemble_jp, BdfScheme, PenaltyParams, StepGeometry, Triplets,
};
use oseen_cutfem::flowmap::{FlowMapStack, RkTableau, VelocityField};
use oseen_cutfem::geometry::{fit_periodic_spline, MarkerChain};
use oseen_cutfem::harness::{
    convergence_study, tracking_order_study, CaseId, EocTable, RotationCase, SteadyPolyCase,
    VortexCase, VortexField,
};
use oseen_cutfem::mesh::StructuredMesh;
use oseen_cutfem::quadrature::QuadratureOptions;
use oseen_cutfem::solver::{
    run, stokes_projection, FlowCase, ProjectionMode, RunConfig, RunResult,
};
use oseen_cutfem::{Mat2, Vec2};

const T_FINAL: f64 = 1.5;
const CENTER: Vec2 = Vec2::new(0.5, 0.75);
const RADIUS: f64 = 0.15;

// tolerances
const U_REF_K3_H16: f64 = 6.478e-3;
const U_REF_FACTOR: f64 = 3.0;
const K3_U_ORDER: (f64, f64) = (2.6, 3.4);
const K3_P_ORDER: (f64, f64) = (2.5, 3.4);
const K4_U_ORDER: (f64, f64) = (3.5, 4.5);
const K4_P1_ORDER: (f64, f64) = (3.4, 4.4);
const K3_BUDGET_S: f64 = 300.0;
const K4_BUDGET_S: f64 = 1200.0;
const TRACKING_SLACK: f64 = 0.5;
const GEOMETRY_TOL: f64 = 1e-8;
const POLY_TOL: f64 = 1e-9;
const PROJECTION_SLACK: f64 = 0.4;
const ROUND_TRIP_TOL: f64 = 1e-12;
const MEAN_TOL: f64 = 1e-10;

struct Report {
    failed: usize,
}

impl Report {
    fn line(&mut self, id: &str, ok: bool, detail: String) {
        if !ok {
            self.failed += 1;
        }
        println!("{} {id}: {detail}", if ok { "PASS" } else { "FAIL" });
    }
}

fn within(x: Option<f64>, (lo, hi): (f64, f64)) -> bool {
    x.is_some_and(|v| v >= lo && v <= hi)
}

fn fmt_order(x: Option<f64>) -> String {
    x.map_or("---".into(), |v| format!("{v:.2}"))
}

fn study(k: usize) -> (EocTable, Vec<RunResult>, f64) {
    let t0 = Instant::now();
    let case = VortexCase::new();
    let (table, runs) = convergence_study(&RunConfig::new(k, 16, T_FINAL), &case, &[16, 32])
        .expect("valid configuration");
    print!("{table}");
    (table, runs, t0.elapsed().as_secs_f64())
}

fn disk_geometry(nc: usize, k: usize, markers: usize) -> StepGeometry {
    let mesh = StructuredMesh::unit_square(nc).unwrap();
    let chain = MarkerChain::circle(CENTER, RADIUS, markers).unwrap();
    StepGeometry::new(
        &mesh,
        fit_periodic_spline(&chain).unwrap(),
        k,
        QuadratureOptions::for_degree(k),
    )
    .unwrap()
}

fn dense(t: &Triplets, lo: usize, hi: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(hi - lo, hi - lo);
    for &(i, j, v) in t {
        if (lo..hi).contains(&i) && (lo..hi).contains(&j) {
            m[(i - lo, j - lo)] += v;
        }
    }
    m
}

fn velocity_criteria(r: &mut Report, table: &EocTable, runs: &[RunResult], secs: f64) {
    let (o0, o1) = (table.last_order(0), table.last_order(1));
    let e16 = runs[0].errors.eu0;
    let ok = within(o0, K3_U_ORDER)
        && within(o1, K3_U_ORDER)
        && e16 <= U_REF_K3_H16 * U_REF_FACTOR
        && e16 >= U_REF_K3_H16 / U_REF_FACTOR
        && secs <= K3_BUDGET_S;
    r.line(
        "1 velocity convergence k=3",
        ok,
        format!(
            "EOC e_u0 {} e_u1 {} in [{}, {}]; e_u0(1/16) = {e16:.3e} vs {U_REF_K3_H16:.3e} (x{U_REF_FACTOR}); {secs:.0} s <= {K3_BUDGET_S} s",
            fmt_order(o0),
            fmt_order(o1),
            K3_U_ORDER.0,
            K3_U_ORDER.1
        ),
    );
}

fn tracking(r: &mut Report) {
    let rot = RotationCase::new(1.0);
    let exact = |x: Vec2| rot.rotation.exact(x, T_FINAL);
    let mut ok = true;
    let mut parts = Vec::new();
    for k in 2..=4 {
        let rows =
            tracking_order_study(&rot, k, T_FINAL, &[16, 32, 64], 0.5, &exact).expect("tracking");
        let ord = rows.last().and_then(|row| row.2);
        let need = (k as f64 + 1.0).min(4.0) - TRACKING_SLACK;
        ok &= ord.is_some_and(|o| o >= need);
        parts.push(format!("k={k} order {} (>= {need})", fmt_order(ord)));
    }
    r.line("4 tracking order (rotation)", ok, parts.join(", "));
}

fn geometry(r: &mut Report) {
    let g = disk_geometry(32, 3, 1024);
    let q = &g.quadrature;
    let area = q.integrate_phase(1, |_| 1.0);
    let exact_area = PI * RADIUS * RADIUS;
    // div F = 2xy + 3xy^2 for F = (x^2 y, x y^3)
    let volume = q.integrate_phase(1, |x| 2.0 * x.x * x.y + 3.0 * x.x * x.y * x.y);
    let flux = q.integrate_interface(|x, n| x.x * x.x * x.y * n.x + x.x * x.y.powi(3) * n.y);
    let length = q.integrate_interface(|_, _| 1.0);
    let (ea, eg, el) = (
        (area - exact_area).abs(),
        (volume - flux).abs(),
        (length - 2.0 * PI * RADIUS).abs(),
    );
    r.line(
        "5 geometric fidelity h=1/32",
        ea <= GEOMETRY_TOL && eg <= GEOMETRY_TOL && el <= GEOMETRY_TOL,
        format!("area {ea:.2e}, Green closure {eg:.2e}, length {el:.2e} (tol {GEOMETRY_TOL:.0e})"),
    );
}

fn projection_errors(g: &StepGeometry, case: &dyn FlowCase) -> (f64, f64) {
    let prm = PenaltyParams::new(1e3, 1.0, case.nu()).unwrap();
    let u = |ph: usize, x: Vec2| -> (Vec2, Mat2) {
        (
            case.velocity(ph, x, 0.0),
            case.velocity_gradient(ph, x, 0.0),
        )
    };
    let p = |ph: usize, x: Vec2| case.pressure(ph, x, 0.0);
    let proj = stokes_projection(g, &prm, &u, &p, ProjectionMode::Consistent).expect("projection");
    let (ue, pe) = (proj.velocity.evaluator(), proj.pressure.evaluator());
    let mut eu = 0.0;
    let mut dp = Vec::new();
    for rules in &g.quadrature.volume {
        for (i, rule) in rules.iter().enumerate() {
            for (&x, &w) in rule.points.iter().zip(&rule.weights) {
                let v = ue.eval(i + 1, x, (0, 0)).unwrap();
                eu += w * (Vec2::new(v[0], v[1]) - case.velocity(i + 1, x, 0.0)).norm_squared();
                dp.push((
                    w,
                    pe.eval(i + 1, x, (0, 0)).unwrap()[0] - case.pressure(i + 1, x, 0.0),
                ));
            }
        }
    }
    let m: f64 = dp.iter().map(|d| d.0).sum();
    let shift = dp.iter().map(|d| d.0 * d.1).sum::<f64>() / m;
    let ep: f64 = dp.iter().map(|d| d.0 * (d.1 - shift).powi(2)).sum();
    (eu.sqrt(), ep.sqrt())
}

fn stokes_projection_oracle(r: &mut Report) {
    let mut ok = true;
    let mut parts = Vec::new();
    for k in 2..=4 {
        let case = SteadyPolyCase::new(k);
        let (eu, ep) = projection_errors(&disk_geometry(16, k, 256), &case);
        ok &= eu <= POLY_TOL && ep <= POLY_TOL;
        parts.push(format!("poly k={k} {eu:.1e}/{ep:.1e}"));
    }
    let vortex = VortexCase::new();
    for k in 2..=3 {
        let errs: Vec<f64> = [16, 32, 64]
            .iter()
            .map(|&nc| projection_errors(&disk_geometry(nc, k, 512), &vortex).0)
            .collect();
        let ords: Vec<f64> = errs.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
        let target = (k + 1) as f64;
        ok &= ords.iter().all(|o| (o - target).abs() <= PROJECTION_SLACK);
        parts.push(format!(
            "smooth k={k} orders {:.2}, {:.2} (target {target})",
            ords[0], ords[1]
        ));
    }
    r.line("6 Stokes projection oracle", ok, parts.join(", "));
}

fn properties(r: &mut Report, runs: &[RunResult]) {
    let mut parts = Vec::new();

    let bdf = (1..=6).all(|k| {
        BdfScheme::new(k)
            .unwrap()
            .consistency_residuals()
            .iter()
            .all(|v| *v == 0.into())
    });
    parts.push(format!("BDF exact {bdf}"));

    let rk = [RkTableau::rk3(), RkTableau::rk4(), RkTableau::rk5()]
        .iter()
        .zip([3, 4, 5])
        .all(|(t, p)| {
            t.order_condition_residuals(p)
                .iter()
                .flatten()
                .all(|v| v.abs() < 1e-14)
        });
    parts.push(format!("RK order conditions {rk}"));

    let field: std::sync::Arc<dyn VelocityField> = std::sync::Arc::new(VortexField);
    let mut stack = FlowMapStack::new(RkTableau::rk5(), field, 4, 1.0);
    let tau = 1.0 / 16.0;
    for s in 1..=4 {
        stack.push(s, (s - 1) as f64 * tau, tau);
    }
    let mut trip: f64 = 0.0;
    for i in 1..20 {
        for j in 1..20 {
            let x = Vec2::new(i as f64 / 20.0, j as f64 / 20.0);
            let y = stack.forward_multi(x, 0, 4).unwrap();
            trip = trip.max((stack.inverse_map(y, 0, 4).unwrap() - x).norm());
        }
    }
    let trip_ok = trip <= ROUND_TRIP_TOL;
    parts.push(format!("round trip {trip:.1e}"));

    let g = disk_geometry(8, 2, 128);
    let prm = PenaltyParams::new(1e3, 1.0, [1.0, 1e-3]).unwrap();
    let nv = g.dofs.velocity_unknowns();
    let a = dense(&assemble_ah(&g, &prm), 0, nv);
    let asym = (&a - a.transpose()).amax() / a.amax();
    let pinned: Vec<usize> = g.dofs.dirichlet_unknowns().iter().map(|d| d.0).collect();
    let free: Vec<usize> = (0..nv).filter(|i| !pinned.contains(i)).collect();
    let af = DMatrix::from_fn(free.len(), free.len(), |i, j| a[(free[i], free[j])]);
    let amin = af.symmetric_eigenvalues().min();
    let a_ok = asym < 1e-12 && amin > 0.0;
    parts.push(format!("A_h asymmetry {asym:.1e}, min eig {amin:.2e}"));

    let np = g.dofs.multiplier_index();
    let jp = dense(&assemble_jp(&g, &prm), nv, np);
    let jmin = jp.symmetric_eigenvalues().min();
    let jp_ok = jmin >= -1e-12 * jp.amax().max(1.0);
    parts.push(format!("J_p min eig {jmin:.1e}"));

    let mean = runs
        .iter()
        .flat_map(|run| &run.diagnostics)
        .map(|d| d.mean_constraint.abs())
        .fold(0.0, f64::max);
    let mean_ok = mean <= MEAN_TOL;
    parts.push(format!("mean constraint {mean:.1e}"));

    let case = CaseId::OseenPaper.build(3);
    let cfg = RunConfig::new(3, 16, 0.5);
    let once = serde_json::to_string(&run(&cfg, case.as_ref()).unwrap()).unwrap();
    let twice = serde_json::to_string(&run(&cfg, case.as_ref()).unwrap()).unwrap();
    let same = once == twice;
    parts.push(format!("bit-identical rerun {same}"));

    r.line(
        "7 property suites",
        bdf && rk && trip_ok && a_ok && jp_ok && mean_ok && same,
        parts.join(", "),
    );
}

fn main() {
    let mut r = Report { failed: 0 };

    let (t3, runs3, secs3) = study(3);
    velocity_criteria(&mut r, &t3, &runs3, secs3);
    let (p0, p1) = (t3.last_order(2), t3.last_order(3));
    r.line(
        "2 pressure convergence k=3",
        within(p0, K3_P_ORDER) && within(p1, K3_P_ORDER),
        format!(
            "EOC e_p0 {} e_p1 {} in [{}, {}]",
            fmt_order(p0),
            fmt_order(p1),
            K3_P_ORDER.0,
            K3_P_ORDER.1
        ),
    );

    let (t4, runs4, secs4) = study(4);
    let (u0, q1) = (t4.last_order(0), t4.last_order(3));
    r.line(
        "3 k=4 orders",
        within(u0, K4_U_ORDER) && within(q1, K4_P1_ORDER) && secs4 <= K4_BUDGET_S,
        format!(
            "EOC e_u0 {} in [{}, {}], e_p1 {} in [{}, {}]; {secs4:.0} s <= {K4_BUDGET_S} s",
            fmt_order(u0),
            K4_U_ORDER.0,
            K4_U_ORDER.1,
            fmt_order(q1),
            K4_P1_ORDER.0,
            K4_P1_ORDER.1
        ),
    );

    tracking(&mut r);
    geometry(&mut r);
    stokes_projection_oracle(&mut r);
    let runs: Vec<RunResult> = runs3.into_iter().chain(runs4).collect();
    properties(&mut r, &runs);

    println!("{} of 7 criteria failed", r.failed);
    if r.failed > 0 && std::env::var_os("ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}
