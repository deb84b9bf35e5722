//! Bilinear forms tested through their action on interpolated fields.

use std::f64::consts::PI;

use approx::assert_abs_diff_eq;
use proptest::prelude::*;

use oseen_cutfem::assembly::{
    assemble_ah, assemble_b0, assemble_jp, assemble_mass, BdfScheme, PenaltyParams, StepGeometry,
    Triplets,
};
use oseen_cutfem::fespace::FieldPair;
use oseen_cutfem::geometry::{fit_periodic_spline, MarkerChain};
use oseen_cutfem::harness::SteadyPolyCase;
use oseen_cutfem::linalg::{solve_saddle, solve_sparse};
use oseen_cutfem::mesh::StructuredMesh;
use oseen_cutfem::quadrature::QuadratureOptions;
use oseen_cutfem::solver::{projection_system, FlowCase, ProjectionMode};
use oseen_cutfem::{Mat2, Vec2};

const NU: [f64; 2] = [1.0, 1e-3];

fn disk(nc: usize, k: usize) -> StepGeometry {
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

fn form(t: &Triplets, v: &[f64], w: &[f64]) -> f64 {
    t.iter().map(|&(i, j, a)| v[i] * a * w[j]).sum()
}

/// Global vector holding the interpolant of `f` in both phases.
fn velocity_vector(g: &StepGeometry, f: impl Fn(Vec2) -> [f64; 2]) -> Vec<f64> {
    let mut x = vec![0.0; g.dofs.num_unknowns()];
    FieldPair::interpolate(g.dofs.velocity, &g.classification, 2, |_, p| f(p))
        .scatter(&g.dofs, &mut x);
    x
}

#[test]
fn bdf_coefficients() {
    let expect: [&[f64]; 3] = [
        &[1.5, -2.0, 0.5],
        &[11.0 / 6.0, -3.0, 1.5, -1.0 / 3.0],
        &[25.0 / 12.0, -4.0, 3.0, -4.0 / 3.0, 0.25],
    ];
    for (k, e) in (2..=4).zip(expect) {
        let s = BdfScheme::new(k).unwrap();
        assert_eq!(s.lambda.len(), k + 1);
        for (a, b) in s.lambda.iter().zip(e) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
    }
}

#[test]
fn harmonic_weights() {
    let p = PenaltyParams::new(1e3, 1.0, NU).unwrap();
    let k = p.kappa();
    assert_abs_diff_eq!(k[0] * NU[0], k[1] * NU[1], epsilon = 1e-16);
    assert_abs_diff_eq!(k[0] * NU[0], 9.99000999e-4, epsilon = 1e-12);
}

#[test]
fn stiffness_of_a_global_quadratic() {
    // every jump of a global polynomial vanishes, leaving nu_i |grad v|^2
    let g = disk(16, 2);
    let v = velocity_vector(&g, |p| [p.x * p.x, p.x * p.y]);
    let grad = |p: Vec2| 4.0 * p.x * p.x + p.y * p.y + p.x * p.x;

    let same = PenaltyParams::new(1e3, 1.0, [1.0, 1.0]).unwrap();
    assert_abs_diff_eq!(form(&assemble_ah(&g, &same), &v, &v), 2.0, epsilon = 1e-10);

    let prm = PenaltyParams::new(1e3, 1.0, NU).unwrap();
    let q = &g.quadrature;
    let expect = NU[0] * q.integrate_phase(1, grad) + NU[1] * q.integrate_phase(2, grad);
    assert_abs_diff_eq!(
        form(&assemble_ah(&g, &prm), &v, &v),
        expect,
        epsilon = 1e-10
    );
}

#[test]
fn divergence_form_measures_phase_areas() {
    let g = disk(16, 3);
    let prm = PenaltyParams::new(1e3, 1.0, NU).unwrap();
    let b0 = assemble_b0(&g, &prm);
    let v = velocity_vector(&g, |p| [p.x, 0.0]);
    let area1 = PI * 0.15 * 0.15;
    for (phase, area) in [(1, area1), (2, 1.0 - area1)] {
        let mut q = vec![0.0; g.dofs.num_unknowns()];
        for node in 0..g.dofs.pressure.num_nodes() {
            if let Some(i) = g.dofs.p_index(phase, node) {
                q[i] = 1.0;
            }
        }
        assert_abs_diff_eq!(form(&b0, &v, &q), -area, epsilon = 1e-8);
    }
}

#[test]
fn mass_of_a_constant_field() {
    let g = disk(16, 2);
    let prm = PenaltyParams::new(1e3, 1.0, NU).unwrap();
    let v = velocity_vector(&g, |_| [0.3, -0.4]);
    let m = assemble_mass(&g, &prm, 2.0);
    // 2 |c|^2 over the whole square
    assert_abs_diff_eq!(form(&m, &v, &v), 0.5, epsilon = 1e-12);
}

#[test]
fn saddle_and_direct_solvers_agree() {
    let g = disk(8, 2);
    let case = SteadyPolyCase::new(2);
    let prm = PenaltyParams::new(1e3, 1.0, case.nu()).unwrap();
    let u = |ph: usize, x: Vec2| -> (Vec2, Mat2) {
        (
            case.velocity(ph, x, 0.0),
            case.velocity_gradient(ph, x, 0.0),
        )
    };
    let p = |ph: usize, x: Vec2| case.pressure(ph, x, 0.0);
    let sys = projection_system(&g, &prm, &u, &p, ProjectionMode::Consistent);
    let a = solve_saddle(sys.n, &sys.matrix, &sys.rhs, g.dofs.velocity_unknowns()).unwrap();
    let b = solve_sparse(sys.n, &sys.matrix, &sys.rhs).unwrap();
    assert!(a.relative_residual < 1e-10 && b.relative_residual < 1e-10);
    let scale = b.solution.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for (x, y) in a.solution.iter().zip(&b.solution) {
        assert!((x - y).abs() < 1e-8 * scale);
    }
}

fn random_vector(seed: &[f64], n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| seed[i % seed.len()] * ((i * 7 + 3) as f64).sin())
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn velocity_form_is_symmetric_and_coercive(
        seed in prop::collection::vec(-1.0f64..1.0, 5..40), shift in 0.0f64..1.0,
    ) {
        let g = disk(8, 2);
        let prm = PenaltyParams::new(1e3, 1.0, NU).unwrap();
        let a = assemble_ah(&g, &prm);
        let n = g.dofs.num_unknowns();
        let nv = g.dofs.velocity_unknowns();
        let mut v = random_vector(&seed, n);
        let mut w = random_vector(&seed.iter().map(|s| s + shift).collect::<Vec<_>>(), n);
        for x in v[nv..].iter_mut().chain(w[nv..].iter_mut()) {
            *x = 0.0;
        }
        for (i, _, _) in g.dofs.dirichlet_unknowns() {
            v[i] = 0.0;
            w[i] = 0.0;
        }
        let (avw, awv) = (form(&a, &v, &w), form(&a, &w, &v));
        prop_assert!((avw - awv).abs() <= 1e-12 * (avw.abs() + 1.0));
        prop_assert!(form(&a, &v, &v) > 0.0);
    }

    #[test]
    fn pressure_ghost_penalty_is_semidefinite(seed in prop::collection::vec(-1.0f64..1.0, 5..40)) {
        let g = disk(8, 3);
        let prm = PenaltyParams::new(1e3, 1.0, NU).unwrap();
        let j = assemble_jp(&g, &prm);
        let q = random_vector(&seed, g.dofs.num_unknowns());
        let scale: f64 = j.iter().map(|t| t.2.abs()).fold(0.0, f64::max);
        prop_assert!(form(&j, &q, &q) >= -1e-12 * scale);
    }
}
