use oseen_cutfem::assembly::{PenaltyParams, StepGeometry};
use oseen_cutfem::geometry::{fit_periodic_spline, MarkerChain};
use oseen_cutfem::harness::{SteadyPolyCase, VortexCase};
use oseen_cutfem::mesh::StructuredMesh;
use oseen_cutfem::quadrature::QuadratureOptions;
use oseen_cutfem::solver::{stokes_projection, FlowCase, Projection, ProjectionMode};
use oseen_cutfem::{Mat2, Vec2};

fn geometry(nc: usize, k: usize) -> StepGeometry {
    let mesh = StructuredMesh::unit_square(nc).unwrap();
    let chain = MarkerChain::circle(Vec2::new(0.5, 0.75), 0.15, 256).unwrap();
    StepGeometry::new(
        &mesh,
        fit_periodic_spline(&chain).unwrap(),
        k,
        QuadratureOptions::for_degree(k),
    )
    .unwrap()
}

fn project(
    g: &StepGeometry,
    case: &dyn FlowCase,
    nu: [f64; 2],
    mode: ProjectionMode,
) -> Projection {
    let prm = PenaltyParams::new(1e3, 1.0, nu).unwrap();
    let u = |ph: usize, x: Vec2| -> (Vec2, Mat2) {
        (
            case.velocity(ph, x, 0.0),
            case.velocity_gradient(ph, x, 0.0),
        )
    };
    let p = |ph: usize, x: Vec2| case.pressure(ph, x, 0.0);
    stokes_projection(g, &prm, &u, &p, mode).unwrap()
}

/// Largest pointwise velocity and (mean-aligned) pressure errors at the
/// volume quadrature points of both phases.
fn pointwise_errors(g: &StepGeometry, case: &dyn FlowCase, proj: &Projection) -> (f64, f64) {
    let (ue, pe) = (proj.velocity.evaluator(), proj.pressure.evaluator());
    let mut eu: f64 = 0.0;
    let mut dp = Vec::new();
    for rules in &g.quadrature.volume {
        for (i, r) in rules.iter().enumerate() {
            for &x in &r.points {
                let v = ue.eval(i + 1, x, (0, 0)).unwrap();
                eu = eu.max((Vec2::new(v[0], v[1]) - case.velocity(i + 1, x, 0.0)).norm());
                dp.push(pe.eval(i + 1, x, (0, 0)).unwrap()[0] - case.pressure(i + 1, x, 0.0));
            }
        }
    }
    let shift = dp[0];
    (eu, dp.iter().map(|d| (d - shift).abs()).fold(0.0, f64::max))
}

fn l2_velocity_error(g: &StepGeometry, case: &dyn FlowCase, proj: &Projection) -> f64 {
    let ev = proj.velocity.evaluator();
    let mut s = 0.0;
    for rules in &g.quadrature.volume {
        for (i, r) in rules.iter().enumerate() {
            for (&x, &w) in r.points.iter().zip(&r.weights) {
                let v = ev.eval(i + 1, x, (0, 0)).unwrap();
                s += w * (Vec2::new(v[0], v[1]) - case.velocity(i + 1, x, 0.0)).norm_squared();
            }
        }
    }
    s.sqrt()
}

#[test]
fn polynomial_pair_is_reproduced() {
    for (k, tol) in [(2, 1e-10), (3, 1e-9), (4, 1e-8)] {
        let g = geometry(16, k);
        let case = SteadyPolyCase::new(k);
        let proj = project(&g, &case, [1.0, 1.0], ProjectionMode::Consistent);
        let (eu, ep) = pointwise_errors(&g, &case, &proj);
        assert!(eu < tol && ep < tol, "k={k}: {eu:.3e} {ep:.3e}");
    }
}

#[test]
fn polynomial_pair_with_viscosity_contrast() {
    // rounding in the order-k ghost-penalty jumps is amplified by nu_1 / nu_2
    for (k, tol) in [(2, 1e-9), (3, 1e-9), (4, 1e-6)] {
        let g = geometry(16, k);
        let case = SteadyPolyCase::new(k);
        let proj = project(&g, &case, case.nu(), ProjectionMode::Consistent);
        let (eu, ep) = pointwise_errors(&g, &case, &proj);
        assert!(eu < tol && ep < tol, "k={k}: {eu:.3e} {ep:.3e}");
    }
}

#[test]
fn zero_data_projects_to_zero() {
    let g = geometry(16, 2);
    let zero = SteadyPolyCase::new(2);
    let prm = PenaltyParams::new(1e3, 1.0, zero.nu()).unwrap();
    let u = |_: usize, _: Vec2| (Vec2::zeros(), Mat2::zeros());
    let p = |_: usize, _: Vec2| 0.0;
    let proj = stokes_projection(&g, &prm, &u, &p, ProjectionMode::Zero).unwrap();
    assert!(proj.velocity.values.iter().flatten().all(|v| *v == 0.0));
    assert!(proj.pressure.values.iter().flatten().all(|v| *v == 0.0));
}

#[test]
fn smooth_projection_converges_at_least_at_order_k_plus_one() {
    let case = VortexCase::new();
    for k in 2..=3 {
        let errs: Vec<f64> = [16usize, 32, 64]
            .iter()
            .map(|&nc| {
                let g = geometry(nc, k);
                let proj = project(&g, &case, case.nu(), ProjectionMode::Consistent);
                l2_velocity_error(&g, &case, &proj)
            })
            .collect();
        for w in errs.windows(2) {
            let ord = (w[0] / w[1]).log2();
            assert!(ord > (k + 1) as f64 - 0.4, "k={k}: errors {errs:?}");
        }
    }
}
