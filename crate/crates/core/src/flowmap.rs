//! Discrete flow maps of the advection field: explicit Runge–Kutta one-step
//! maps, their exact Jacobians, multi-step compositions and Newton inverses.

use std::collections::VecDeque;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::geometry::MarkerChain;
use crate::{Error, Mat2, Result, Vec2};

/// Advection velocity `w(x, t)` together with its spatial gradient
/// `(grad w)_{ij} = d w_i / d x_j`.
pub trait VelocityField: Send + Sync {
    fn velocity(&self, x: Vec2, t: f64) -> Vec2;
    fn gradient(&self, x: Vec2, t: f64) -> Mat2;
}

/// `w = 0`.
#[derive(Clone, Copy, Debug, Default)]
pub struct ZeroField;

impl VelocityField for ZeroField {
    fn velocity(&self, _: Vec2, _: f64) -> Vec2 {
        Vec2::zeros()
    }
    fn gradient(&self, _: Vec2, _: f64) -> Mat2 {
        Mat2::zeros()
    }
}

/// Spatially constant field.
#[derive(Clone, Copy, Debug)]
pub struct ConstantField(pub Vec2);

impl VelocityField for ConstantField {
    fn velocity(&self, _: Vec2, _: f64) -> Vec2 {
        self.0
    }
    fn gradient(&self, _: Vec2, _: f64) -> Mat2 {
        Mat2::zeros()
    }
}

/// Rigid rotation with angular velocity `omega` about `center`
/// (counterclockwise for positive `omega`).
#[derive(Clone, Copy, Debug)]
pub struct RigidRotation {
    pub center: Vec2,
    pub omega: f64,
}

impl RigidRotation {
    /// Exact flow: position at time `t0 + dt` of the particle at `x` at `t0`.
    pub fn exact(&self, x: Vec2, dt: f64) -> Vec2 {
        let r = x - self.center;
        let (s, c) = (self.omega * dt).sin_cos();
        self.center + Vec2::new(c * r.x - s * r.y, s * r.x + c * r.y)
    }
}

impl VelocityField for RigidRotation {
    fn velocity(&self, x: Vec2, _: f64) -> Vec2 {
        let r = x - self.center;
        self.omega * Vec2::new(-r.y, r.x)
    }
    fn gradient(&self, _: Vec2, _: f64) -> Mat2 {
        Mat2::new(0.0, -self.omega, self.omega, 0.0)
    }
}

/// Explicit Runge–Kutta tableau.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RkTableau {
    pub name: String,
    /// Row `i` holds `a_{i,0..i}`.
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub order: usize,
}

impl RkTableau {
    /// Kutta's third-order method.
    pub fn rk3() -> Self {
        Self {
            name: "rk3".into(),
            a: vec![vec![], vec![0.5], vec![-1.0, 2.0]],
            b: vec![1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0],
            c: vec![0.0, 0.5, 1.0],
            order: 3,
        }
    }

    /// The classical fourth-order method.
    pub fn rk4() -> Self {
        Self {
            name: "rk4".into(),
            a: vec![vec![], vec![0.5], vec![0.0, 0.5], vec![0.0, 0.0, 1.0]],
            b: vec![1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0],
            c: vec![0.0, 0.5, 0.5, 1.0],
            order: 4,
        }
    }

    /// Butcher's six-stage fifth-order method.
    pub fn rk5() -> Self {
        Self {
            name: "rk5".into(),
            a: vec![
                vec![],
                vec![0.25],
                vec![0.125, 0.125],
                vec![0.0, -0.5, 1.0],
                vec![3.0 / 16.0, 0.0, 0.0, 9.0 / 16.0],
                vec![-3.0 / 7.0, 2.0 / 7.0, 12.0 / 7.0, -12.0 / 7.0, 8.0 / 7.0],
            ],
            b: vec![
                7.0 / 90.0,
                0.0,
                32.0 / 90.0,
                12.0 / 90.0,
                32.0 / 90.0,
                7.0 / 90.0,
            ],
            c: vec![0.0, 0.25, 0.25, 0.5, 0.75, 1.0],
            order: 5,
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "rk3" => Ok(Self::rk3()),
            "rk4" => Ok(Self::rk4()),
            "rk5" => Ok(Self::rk5()),
            _ => Err(Error::Config(format!(
                "unknown Runge-Kutta tableau '{name}' (expected rk3, rk4 or rk5)"
            ))),
        }
    }

    /// Tableau of order `k + 1` used with the BDF-`k` scheme.
    pub fn for_bdf_order(k: usize) -> Result<Self> {
        match k {
            2 => Ok(Self::rk3()),
            3 => Ok(Self::rk4()),
            4 => Ok(Self::rk5()),
            _ => Err(Error::Config(format!(
                "BDF order must be 2, 3 or 4, got {k}"
            ))),
        }
    }

    pub fn stages(&self) -> usize {
        self.b.len()
    }

    /// Residuals of the order conditions for orders `1..=p` (`p <= 5`),
    /// grouped by order.
    pub fn order_condition_residuals(&self, p: usize) -> Vec<Vec<f64>> {
        let s = self.stages();
        let a = |i: usize, j: usize| {
            if j < i {
                self.a[i].get(j).copied().unwrap_or(0.0)
            } else {
                0.0
            }
        };
        let mat = |v: &[f64]| -> Vec<f64> {
            (0..s)
                .map(|i| (0..s).map(|j| a(i, j) * v[j]).sum())
                .collect()
        };
        let c = &self.c;
        let one = vec![1.0; s];
        let pw = |e: i32| -> Vec<f64> { c.iter().map(|x| x.powi(e)).collect() };
        let mul =
            |u: &[f64], v: &[f64]| -> Vec<f64> { u.iter().zip(v).map(|(x, y)| x * y).collect() };
        let bsum = |v: &[f64]| -> f64 { self.b.iter().zip(v).map(|(b, x)| b * x).sum() };
        let ac = mat(c);
        let ac2 = mat(&pw(2));
        let aac = mat(&ac);
        let mut out = vec![
            vec![bsum(&one) - 1.0],
            vec![bsum(c) - 0.5],
            vec![bsum(&pw(2)) - 1.0 / 3.0, bsum(&ac) - 1.0 / 6.0],
            vec![
                bsum(&pw(3)) - 0.25,
                bsum(&mul(c, &ac)) - 1.0 / 8.0,
                bsum(&ac2) - 1.0 / 12.0,
                bsum(&aac) - 1.0 / 24.0,
            ],
            vec![
                bsum(&pw(4)) - 0.2,
                bsum(&mul(&pw(2), &ac)) - 0.1,
                bsum(&mul(c, &ac2)) - 1.0 / 15.0,
                bsum(&mul(c, &aac)) - 1.0 / 30.0,
                bsum(&mul(&ac, &ac)) - 1.0 / 20.0,
                bsum(&mat(&pw(3))) - 1.0 / 20.0,
                bsum(&mat(&mul(c, &ac))) - 1.0 / 40.0,
                bsum(&mat(&ac2)) - 1.0 / 60.0,
                bsum(&mat(&aac)) - 1.0 / 120.0,
            ],
        ];
        out.truncate(p.min(5));
        out
    }

    /// Checks shape, row sums and the order conditions up to the declared order.
    pub fn validate(&self) -> Result<()> {
        let s = self.stages();
        if self.c.len() != s
            || self.a.len() != s
            || self.a.iter().enumerate().any(|(i, r)| r.len() > i)
        {
            return Err(Error::Config(format!(
                "tableau '{}' is not explicit or has inconsistent sizes",
                self.name
            )));
        }
        for i in 0..s {
            let rs: f64 = self.a[i].iter().sum();
            if (rs - self.c[i]).abs() > 1e-14 {
                return Err(Error::Config(format!(
                    "tableau '{}': row {i} does not sum to c",
                    self.name
                )));
            }
        }
        if self.order > 5 {
            return Err(Error::Config(
                "order conditions are only checked up to order 5".into(),
            ));
        }
        for (q, res) in self
            .order_condition_residuals(self.order)
            .iter()
            .enumerate()
        {
            if let Some(r) = res.iter().find(|r| r.abs() > 1e-13) {
                return Err(Error::Config(format!(
                    "tableau '{}' violates an order-{} condition (residual {r:.2e})",
                    self.name,
                    q + 1
                )));
            }
        }
        Ok(())
    }
}

/// One step of the tableau from `(x, t0)` with step `tau` (may be negative).
pub fn advance_point(x: Vec2, t0: f64, tau: f64, tab: &RkTableau, w: &dyn VelocityField) -> Vec2 {
    let s = tab.stages();
    let mut k = [Vec2::zeros(); 8];
    let mut out = x;
    for i in 0..s {
        let mut phi = x;
        for (j, aij) in tab.a[i].iter().enumerate() {
            phi += tau * aij * k[j];
        }
        k[i] = w.velocity(phi, t0 + tab.c[i] * tau);
        out += tau * tab.b[i] * k[i];
    }
    out
}

/// One step together with its exact Jacobian, propagated through the stages.
pub fn advance_with_jacobian(
    x: Vec2,
    t0: f64,
    tau: f64,
    tab: &RkTableau,
    w: &dyn VelocityField,
) -> (Vec2, Mat2) {
    let s = tab.stages();
    let mut k = [Vec2::zeros(); 8];
    // gk[i] = grad w(phi_i) * grad phi_i
    let mut gk = [Mat2::zeros(); 8];
    let mut out = x;
    let mut jac = Mat2::identity();
    for i in 0..s {
        let mut phi = x;
        let mut dphi = Mat2::identity();
        for (j, aij) in tab.a[i].iter().enumerate() {
            phi += tau * aij * k[j];
            dphi += tau * aij * gk[j];
        }
        let ti = t0 + tab.c[i] * tau;
        k[i] = w.velocity(phi, ti);
        gk[i] = w.gradient(phi, ti) * dphi;
        out += tau * tab.b[i] * k[i];
        jac += tau * tab.b[i] * gk[i];
    }
    (out, jac)
}

/// Jacobian of the one-step map at `x`.
pub fn jacobian(x: Vec2, t0: f64, tau: f64, tab: &RkTableau, w: &dyn VelocityField) -> Mat2 {
    advance_with_jacobian(x, t0, tau, tab, w).1
}

/// Newton inversion of one forward step: finds `x` with `advance_point(x) = y`.
pub fn invert_step(
    y: Vec2,
    t0: f64,
    tau: f64,
    tab: &RkTableau,
    w: &dyn VelocityField,
    tol: f64,
) -> Result<Vec2> {
    const MAX_ITER: usize = 50;
    let mut x = advance_point(y, t0 + tau, -tau, tab, w);
    let (mut fx, mut jx) = advance_with_jacobian(x, t0, tau, tab, w);
    let mut res = (fx - y).norm();
    for _ in 0..MAX_ITER {
        if res < tol {
            return Ok(x);
        }
        let dx = jx.try_inverse().ok_or_else(|| Error::InverseMap {
            x: y.x,
            y: y.y,
            residual: res,
        })? * (y - fx);
        let mut lambda = 1.0;
        loop {
            let xn = x + lambda * dx;
            let (fn_, jn) = advance_with_jacobian(xn, t0, tau, tab, w);
            let rn = (fn_ - y).norm();
            if rn < res || lambda < 1e-6 {
                x = xn;
                fx = fn_;
                jx = jn;
                res = rn;
                break;
            }
            lambda *= 0.5;
        }
    }
    if res < tol {
        Ok(x)
    } else {
        Err(Error::InverseMap {
            x: y.x,
            y: y.y,
            residual: res,
        })
    }
}

#[derive(Clone, Copy, Debug)]
struct StepRecord {
    /// Index `m` of the step `t_{m-1} -> t_m`.
    index: usize,
    t0: f64,
    tau: f64,
}

/// The most recent one-step maps `X^{m-1,m}`, enough to compose
/// `X^{m,n}` for `n - depth <= m <= n`.
#[derive(Clone)]
pub struct FlowMapStack {
    tableau: RkTableau,
    field: Arc<dyn VelocityField>,
    steps: VecDeque<StepRecord>,
    depth: usize,
    diam: f64,
}

impl FlowMapStack {
    pub fn new(tableau: RkTableau, field: Arc<dyn VelocityField>, depth: usize, diam: f64) -> Self {
        Self {
            tableau,
            field,
            steps: VecDeque::with_capacity(depth + 1),
            depth,
            diam,
        }
    }

    pub fn tableau(&self) -> &RkTableau {
        &self.tableau
    }

    pub fn field(&self) -> &dyn VelocityField {
        self.field.as_ref()
    }

    /// Registers the map of step `index` (from `t0` to `t0 + tau`), dropping
    /// the oldest one beyond the stack depth.
    pub fn push(&mut self, index: usize, t0: f64, tau: f64) {
        self.steps.retain(|s| s.index != index);
        self.steps.push_back(StepRecord { index, t0, tau });
        while self.steps.len() > self.depth {
            self.steps.pop_front();
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    fn step(&self, index: usize) -> Result<StepRecord> {
        self.steps
            .iter()
            .find(|s| s.index == index)
            .copied()
            .ok_or(Error::MissingFlowMap(index))
    }

    /// `X^{m,n}(x)`: the composition of steps `m+1, ..., n` in time order.
    pub fn forward_multi(&self, x: Vec2, m: usize, n: usize) -> Result<Vec2> {
        let mut y = x;
        for s in m + 1..=n {
            let st = self.step(s)?;
            y = advance_point(y, st.t0, st.tau, &self.tableau, self.field.as_ref());
        }
        Ok(y)
    }

    /// `X^{m,n}` with its Jacobian.
    pub fn forward_multi_with_jacobian(&self, x: Vec2, m: usize, n: usize) -> Result<(Vec2, Mat2)> {
        let mut y = x;
        let mut jac = Mat2::identity();
        for s in m + 1..=n {
            let st = self.step(s)?;
            let (yn, j) =
                advance_with_jacobian(y, st.t0, st.tau, &self.tableau, self.field.as_ref());
            y = yn;
            jac = j * jac;
        }
        Ok((y, jac))
    }

    /// `X^{n,m}(y)`, the exact inverse of [`Self::forward_multi`], obtained by
    /// inverting the one-step maps from `n` back to `m + 1`.
    pub fn inverse_map(&self, y: Vec2, m: usize, n: usize) -> Result<Vec2> {
        let tol = 1e-12 * self.diam;
        let mut x = y;
        for s in (m + 1..=n).rev() {
            let st = self.step(s)?;
            x = invert_step(
                x,
                st.t0,
                st.tau,
                &self.tableau,
                self.field.as_ref(),
                tol / (n - m) as f64,
            )?;
        }
        Ok(x)
    }
}

/// Moves every marker by one step of the tableau, keeping the knot parameters.
pub fn advance_chain(
    chain: &MarkerChain,
    t0: f64,
    tau: f64,
    tab: &RkTableau,
    w: &dyn VelocityField,
) -> Result<MarkerChain> {
    let pts = chain
        .points()
        .iter()
        .map(|&p| advance_point(p, t0, tau, tab, w))
        .collect();
    chain.with_points(pts)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Swirl;

    impl VelocityField for Swirl {
        fn velocity(&self, x: Vec2, t: f64) -> Vec2 {
            let s = 1.0 + 0.3 * t;
            Vec2::new(
                (x.y * s).sin() + 0.2 * x.x * x.x,
                (x.x).cos() * x.y - 0.1 * t,
            )
        }
        fn gradient(&self, x: Vec2, t: f64) -> Mat2 {
            let s = 1.0 + 0.3 * t;
            Mat2::new(
                0.4 * x.x,
                s * (x.y * s).cos(),
                -(x.x).sin() * x.y,
                (x.x).cos(),
            )
        }
    }

    #[test]
    fn tableaus_satisfy_their_order_conditions() {
        for tab in [RkTableau::rk3(), RkTableau::rk4(), RkTableau::rk5()] {
            tab.validate().unwrap();
            let sum: f64 = tab.b.iter().sum();
            assert!((sum - 1.0).abs() < 1e-15);
        }
        // and not the next one
        for tab in [RkTableau::rk3(), RkTableau::rk4()] {
            let res = tab.order_condition_residuals(tab.order + 1);
            assert!(res[tab.order].iter().any(|r| r.abs() > 1e-6));
        }
    }

    #[test]
    fn constant_and_zero_fields() {
        let x = Vec2::new(0.3, -0.4);
        for tab in [RkTableau::rk3(), RkTableau::rk4(), RkTableau::rk5()] {
            let c = Vec2::new(1.5, -0.25);
            let y = advance_point(x, 0.0, 0.1, &tab, &ConstantField(c));
            assert!((y - (x + 0.1 * c)).norm() < 1e-15);
            assert_eq!(advance_point(x, 0.0, 0.1, &tab, &ZeroField), x);
            assert_eq!(
                jacobian(x, 0.0, 0.1, &tab, &ConstantField(c)),
                Mat2::identity()
            );
        }
    }

    #[test]
    fn rk4_rotation_accuracy_and_ratio() {
        let rot = RigidRotation {
            center: Vec2::zeros(),
            omega: -1.0,
        };
        let x = Vec2::new(1.0, 0.5);
        let tab = RkTableau::rk4();
        let e1 = (advance_point(x, 0.0, 0.1, &tab, &rot) - rot.exact(x, 0.1)).norm();
        let e2 = (advance_point(x, 0.0, 0.05, &tab, &rot) - rot.exact(x, 0.05)).norm();
        assert!(e1 < 1e-6, "{e1}");
        let ratio = e1 / e2;
        assert!((ratio - 32.0).abs() < 2.0, "ratio {ratio}");
    }

    #[test]
    fn local_error_order_matches_tableau() {
        let rot = RigidRotation {
            center: Vec2::new(0.5, 0.5),
            omega: 2.0,
        };
        let x = Vec2::new(0.8, 0.4);
        for tab in [RkTableau::rk3(), RkTableau::rk4(), RkTableau::rk5()] {
            let e = |tau: f64| (advance_point(x, 0.0, tau, &tab, &rot) - rot.exact(x, tau)).norm();
            let order = (e(0.08) / e(0.04)).log2() - 1.0;
            assert!(
                (order - tab.order as f64).abs() < 0.2,
                "{} observed {order}",
                tab.name
            );
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let delta = 1e-6;
        for tab in [RkTableau::rk3(), RkTableau::rk4(), RkTableau::rk5()] {
            for i in 0..5 {
                let x = Vec2::new(0.1 + 0.17 * i as f64, 0.9 - 0.13 * i as f64);
                let j = jacobian(x, 0.2, 0.07, &tab, &Swirl);
                let f0 = advance_point(x, 0.2, 0.07, &tab, &Swirl);
                for d in 0..2 {
                    let mut xp = x;
                    xp[d] += delta;
                    let col = (advance_point(xp, 0.2, 0.07, &tab, &Swirl) - f0) / delta;
                    assert!((col - j.column(d)).norm() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn stack_composition_and_inverse() {
        let mut stack = FlowMapStack::new(RkTableau::rk5(), Arc::new(Swirl), 4, 1.0);
        for m in 1..=6 {
            stack.push(m, 0.05 * (m - 1) as f64, 0.05);
        }
        assert_eq!(stack.len(), 4);
        assert!(matches!(
            stack.forward_multi(Vec2::zeros(), 1, 6),
            Err(Error::MissingFlowMap(2))
        ));
        let x = Vec2::new(0.3, 0.6);
        assert_eq!(stack.forward_multi(x, 6, 6).unwrap(), x);
        let a = stack.forward_multi(x, 3, 6).unwrap();
        let b = stack
            .forward_multi(stack.forward_multi(x, 3, 4).unwrap(), 4, 6)
            .unwrap();
        assert_eq!(a, b);
        let back = stack.inverse_map(a, 3, 6).unwrap();
        assert!((back - x).norm() < 1e-12);
        let zero = FlowMapStack::new(RkTableau::rk4(), Arc::new(ZeroField), 3, 1.0);
        let mut zero = zero;
        zero.push(1, 0.0, 0.1);
        assert_eq!(zero.inverse_map(x, 0, 1).unwrap(), x);
    }
}
