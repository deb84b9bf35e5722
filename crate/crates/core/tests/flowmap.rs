//! Runge-Kutta flow maps: accuracy on the rigid rotation, Jacobians and
//! inversion.

use std::sync::Arc;

use proptest::prelude::*;

use oseen_cutfem::flowmap::{
    advance_chain, advance_point, invert_step, jacobian, FlowMapStack, RigidRotation, RkTableau,
    VelocityField,
};
use oseen_cutfem::geometry::MarkerChain;
use oseen_cutfem::harness::VortexField;
use oseen_cutfem::Vec2;

const ROT: RigidRotation = RigidRotation {
    center: Vec2::new(0.5, 0.5),
    omega: 1.0,
};

fn tableau(i: usize) -> RkTableau {
    [RkTableau::rk3(), RkTableau::rk4(), RkTableau::rk5()][i].clone()
}

/// Observed global order of `n = T / tau` composed steps on the rotation.
fn global_order(tab: &RkTableau, x: Vec2) -> f64 {
    let err = |m: usize| {
        let tau = 1.0 / m as f64;
        let y = (0..m).fold(x, |y, s| advance_point(y, s as f64 * tau, tau, tab, &ROT));
        (y - ROT.exact(x, 1.0)).norm()
    };
    (err(8) / err(16)).log2()
}

#[test]
fn composed_steps_converge_at_the_tableau_order() {
    for (k, tab) in (2..=4).zip(0..3) {
        let tab = tableau(tab);
        let ord = global_order(&tab, Vec2::new(0.7, 0.55));
        // one step costs tau^{k+2}; 1/tau steps give tau^{k+1}
        assert!((ord - (k + 1) as f64).abs() < 0.3, "{}: {ord}", tab.name);
    }
}

#[test]
fn inverse_step_matches_the_inverse_rotation() {
    let y = Vec2::new(0.2, 0.65);
    for i in 0..3 {
        let tab = tableau(i);
        let err = |tau: f64| {
            let x = invert_step(y, 0.0, tau, &tab, &ROT, 1e-15).unwrap();
            (x - ROT.exact(y, -tau)).norm()
        };
        let ord = (err(0.2) / err(0.1)).log2();
        assert!(
            (ord - (tab.order + 1) as f64).abs() < 0.3,
            "{}: {ord}",
            tab.name
        );
    }
}

#[test]
fn tableau_selection_follows_the_bdf_order() {
    for k in 2..=4 {
        assert_eq!(RkTableau::for_bdf_order(k).unwrap().order, k + 1);
    }
    assert!(RkTableau::for_bdf_order(1).is_err());
    assert!(RkTableau::for_bdf_order(5).is_err());
}

#[test]
fn advancing_a_chain_keeps_its_parameters() {
    let chain = MarkerChain::circle(Vec2::new(0.5, 0.75), 0.15, 40).unwrap();
    let moved = advance_chain(&chain, 0.0, 0.05, &RkTableau::rk4(), &VortexField).unwrap();
    assert_eq!(moved.params(), chain.params());
    for (a, b) in chain.points().iter().zip(moved.points()) {
        assert_eq!(
            advance_point(*a, 0.0, 0.05, &RkTableau::rk4(), &VortexField),
            *b
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn forward_then_inverse_is_the_identity(
        x in 0.05f64..0.95, y in 0.05f64..0.95, tab in 0usize..3, tau in 0.01f64..0.1,
        steps in 1usize..5,
    ) {
        let field: Arc<dyn VelocityField> = Arc::new(VortexField);
        let mut stack = FlowMapStack::new(tableau(tab), field, steps, 1.0);
        for s in 1..=steps {
            stack.push(s, (s - 1) as f64 * tau, tau);
        }
        let p = Vec2::new(x, y);
        let q = stack.forward_multi(p, 0, steps).unwrap();
        let back = stack.inverse_map(q, 0, steps).unwrap();
        prop_assert!((back - p).norm() < 1e-12, "{}", (back - p).norm());
    }

    #[test]
    fn jacobian_matches_forward_differences(
        x in 0.05f64..0.95, y in 0.05f64..0.95, tab in 0usize..3, t0 in 0.0f64..1.5,
    ) {
        let tab = tableau(tab);
        let p = Vec2::new(x, y);
        let tau = 0.05;
        let j = jacobian(p, t0, tau, &tab, &VortexField);
        let f0 = advance_point(p, t0, tau, &tab, &VortexField);
        let d = 1e-6;
        for c in 0..2 {
            let mut q = p;
            q[c] += d;
            let col = (advance_point(q, t0, tau, &tab, &VortexField) - f0) / d;
            prop_assert!((col - j.column(c)).norm() < 1e-4);
        }
    }

    #[test]
    fn steps_nearly_preserve_area(
        x in 0.05f64..0.95, y in 0.05f64..0.95, tab in 0usize..3, t0 in 0.0f64..1.5,
    ) {
        // the vortex field is solenoidal, so the exact map has unit determinant
        let tab = tableau(tab);
        let j = jacobian(Vec2::new(x, y), t0, 1.0 / 32.0, &tab, &VortexField);
        prop_assert!((j.determinant() - 1.0).abs() < 1e-3);
    }

    #[test]
    fn rotation_is_exact_up_to_the_local_error(
        x in 0.0f64..1.0, y in 0.0f64..1.0, tab in 0usize..3,
    ) {
        let tab = tableau(tab);
        let p = Vec2::new(x, y);
        let tau = 0.05;
        let err = (advance_point(p, 0.0, tau, &tab, &ROT) - ROT.exact(p, tau)).norm();
        // local error bound |x - c| tau^{p+1} / (p+1)!
        let bound = (p - ROT.center).norm() * tau.powi(tab.order as i32 + 1);
        prop_assert!(err <= bound, "{} > {}", err, bound);
    }
}
