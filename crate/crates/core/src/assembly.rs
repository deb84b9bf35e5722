//! Bilinear forms, right-hand sides and the one-step saddle-point system.
//!
//! Unknowns follow [`DofMap`]: `[u_1, u_2, p_1, p_2, mu]`. Phase 1 is the
//! enclosed phase; `n` is the unit normal on the interface pointing from
//! phase 1 into phase 2, jumps are `[a] = a_1 - a_2` and the averages use the
//! harmonic weights `<a> = k_1 a_1 + k_2 a_2`, `<<a>> = k_2 a_1 + k_1 a_2`.

use num_rational::Rational64;

use crate::fespace::{DofMap, Table1d, TensorBasis};
use crate::geometry::SplineInterface;
use crate::mesh::{classify, Classification, StructuredMesh};
use crate::quadrature::{build_edge_rule, CutQuadrature, QuadratureOptions, Rule};
use crate::{Error, Result, Vec2};

/// Penalty and material parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PenaltyParams {
    pub gamma0: f64,
    pub gamma1: f64,
    pub nu: [f64; 2],
}

impl PenaltyParams {
    pub fn new(gamma0: f64, gamma1: f64, nu: [f64; 2]) -> Result<Self> {
        if !(gamma0 > 0.0 && gamma1 >= 0.0) {
            return Err(Error::Config(format!(
                "penalties must be positive (gamma0 = {gamma0}, gamma1 = {gamma1})"
            )));
        }
        if !(nu[1] > 0.0 && nu[1] <= nu[0]) {
            return Err(Error::Config(format!(
                "viscosities must satisfy 0 < nu_2 <= nu_1, got {nu:?}"
            )));
        }
        Ok(Self { gamma0, gamma1, nu })
    }

    /// Harmonic weights `(nu_2, nu_1) / (nu_1 + nu_2)`.
    pub fn kappa(&self) -> [f64; 2] {
        let s = self.nu[0] + self.nu[1];
        [self.nu[1] / s, self.nu[0] / s]
    }

    /// `<nu> = 2 nu_1 nu_2 / (nu_1 + nu_2)`.
    pub fn nu_avg(&self) -> f64 {
        2.0 * self.nu[0] * self.nu[1] / (self.nu[0] + self.nu[1])
    }
}

/// BDF-k coefficients `lambda_0..lambda_k` with
/// `tau^{-1} sum_j lambda_j u(t - j tau) ≈ u'(t)`.
#[derive(Clone, Debug, PartialEq)]
pub struct BdfScheme {
    pub k: usize,
    pub lambda: Vec<f64>,
    exact: Vec<Rational64>,
}

fn binomial(n: i64, r: i64) -> i64 {
    (0..r).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

impl BdfScheme {
    pub fn new(k: usize) -> Result<Self> {
        if !(1..=6).contains(&k) {
            return Err(Error::Config(format!("BDF order {k} not supported")));
        }
        let ki = k as i64;
        let exact: Vec<Rational64> = (0..=ki)
            .map(|i| {
                (i.max(1)..=ki)
                    .map(|j| Rational64::new(if i % 2 == 0 { 1 } else { -1 } * binomial(j, i), j))
                    .sum()
            })
            .collect();
        let lambda = exact
            .iter()
            .map(|r| *r.numer() as f64 / *r.denom() as f64)
            .collect();
        Ok(Self { k, lambda, exact })
    }

    pub fn exact(&self) -> &[Rational64] {
        &self.exact
    }

    /// Residuals of the Taylor conditions `sum_j lambda_j (-j)^q = [q == 1]`,
    /// `q = 0..=k`, in exact arithmetic.
    pub fn consistency_residuals(&self) -> Vec<Rational64> {
        (0..=self.k as u32)
            .map(|q| {
                let s: Rational64 = self
                    .exact
                    .iter()
                    .enumerate()
                    .map(|(j, l)| *l * Rational64::from_integer((-(j as i64)).pow(q)))
                    .sum();
                s - Rational64::from_integer(i64::from(q == 1))
            })
            .collect()
    }
}

/// Geometry of one time level: interface, classification, rules and DOFs.
#[derive(Clone, Debug)]
pub struct StepGeometry {
    pub spline: SplineInterface,
    pub classification: Classification,
    pub quadrature: CutQuadrature,
    pub dofs: DofMap,
    pub velocity_basis: TensorBasis,
    pub pressure_basis: TensorBasis,
}

impl StepGeometry {
    pub fn new(
        mesh: &StructuredMesh,
        spline: SplineInterface,
        k: usize,
        options: QuadratureOptions,
    ) -> Result<Self> {
        if !(2..=4).contains(&k) {
            return Err(Error::Config(format!(
                "polynomial degree k must be 2, 3 or 4, got {k}"
            )));
        }
        let classification = classify(mesh, &spline)?;
        let quadrature = CutQuadrature::build(&classification, &spline, options)?;
        let dofs = DofMap::new(&classification, k);
        Ok(Self {
            spline,
            classification,
            quadrature,
            dofs,
            velocity_basis: TensorBasis::new(k),
            pressure_basis: TensorBasis::new(k - 1),
        })
    }

    pub fn k(&self) -> usize {
        self.velocity_basis.degree()
    }

    pub fn h(&self) -> f64 {
        self.classification.mesh.h()
    }

    pub fn mesh(&self) -> &StructuredMesh {
        &self.classification.mesh
    }
}

/// Coordinate-format sparse matrix entries `(row, col, value)`.
pub type Triplets = Vec<(usize, usize, f64)>;

/// Sorts by `(col, row)` and sums duplicates; the order is deterministic.
pub fn compress(mut t: Triplets) -> Triplets {
    t.sort_by(|a, b| (a.1, a.0).cmp(&(b.1, b.0)));
    let mut out: Triplets = Vec::with_capacity(t.len() / 2);
    for (r, c, v) in t {
        match out.last_mut() {
            Some(last) if last.0 == r && last.1 == c => last.2 += v,
            _ => out.push((r, c, v)),
        }
    }
    out
}

/// Basis data of one cell at one point.
struct PointBasis {
    phi: Vec<f64>,
    dx: Vec<f64>,
    dy: Vec<f64>,
    lap: Vec<f64>,
}

impl PointBasis {
    fn new(basis: &TensorBasis, origin: Vec2, h: f64, x: Vec2, with_laplacian: bool) -> Self {
        let (tx, ty) = basis.tables(origin, h, x);
        Self::from_tables(basis, &tx, &ty, with_laplacian)
    }

    fn from_tables(basis: &TensorBasis, tx: &Table1d, ty: &Table1d, with_laplacian: bool) -> Self {
        let n = basis.num_local();
        let mut pb = Self {
            phi: vec![0.0; n],
            dx: vec![0.0; n],
            dy: vec![0.0; n],
            lap: vec![0.0; n],
        };
        for l in 0..n {
            pb.phi[l] = basis.deriv(tx, ty, l, 0, 0);
            pb.dx[l] = basis.deriv(tx, ty, l, 1, 0);
            pb.dy[l] = basis.deriv(tx, ty, l, 0, 1);
            if with_laplacian {
                pb.lap[l] = basis.deriv(tx, ty, l, 2, 0) + basis.deriv(tx, ty, l, 0, 2);
            }
        }
        pb
    }

    fn grad(&self, l: usize, d: usize) -> f64 {
        if d == 0 {
            self.dx[l]
        } else {
            self.dy[l]
        }
    }
}

/// Which terms [`assemble_terms`] adds.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Terms {
    /// Coefficient of the mass term `(u, v)` (zero for none).
    pub mass: f64,
    /// `(nu grad u, grad v)`.
    pub stiffness: bool,
    /// `-F(u, v) + J_0(u, v)`.
    pub nitsche: bool,
    /// Velocity ghost penalty.
    pub ghost_velocity: bool,
    /// `B_0(v, p)` in the velocity rows and `-B_0(u, q)` in the pressure rows.
    pub b0: bool,
    /// Pressure ghost penalty.
    pub ghost_pressure: bool,
    /// Residual stabilization with the given reaction coefficient `lambda_0 / tau`:
    /// `gamma_1 nu_2 h^2 [B_1(u, q) + (nu^{-1} grad p, grad q)]`.
    pub residual: Option<f64>,
    /// Pressure-mean multiplier row and column.
    pub constraint: bool,
}

/// Adds the selected forms, summed over both phases, as global triplets.
pub fn assemble_terms(g: &StepGeometry, prm: &PenaltyParams, terms: &Terms) -> Triplets {
    let c = &g.classification;
    let mesh = c.mesh;
    let h = mesh.h();
    let vb = &g.velocity_basis;
    let pb = &g.pressure_basis;
    let nv = vb.num_local();
    let np = pb.num_local();
    let kap = prm.kappa();
    let stab = prm.gamma1 * prm.nu[1] * h * h;
    let mut t = Triplets::new();
    let needs_volume = terms.mass != 0.0
        || terms.stiffness
        || terms.b0
        || terms.residual.is_some()
        || terms.constraint;

    if needs_volume {
        for phase in 1..=2usize {
            let nu = prm.nu[phase - 1];
            for e in c.cover_elements(phase) {
                let rule = g.quadrature.phase_rule(e, phase);
                if rule.is_empty() {
                    continue;
                }
                let origin = mesh.element_origin(e);
                let ui = g.dofs.element_u(phase, e);
                let pi = g.dofs.element_p(phase, e);
                let mut kuu = vec![0.0; nv * nv];
                let mut kup = vec![0.0; 2 * nv * np];
                let mut kpu = vec![0.0; 2 * nv * np];
                let mut kpp = vec![0.0; np * np];
                let mut cp = vec![0.0; np];
                for (&x, &w) in rule.points.iter().zip(&rule.weights) {
                    let v = PointBasis::new(vb, origin, h, x, terms.residual.is_some());
                    let q = PointBasis::new(pb, origin, h, x, false);
                    for a in 0..nv {
                        for b in 0..nv {
                            let mut s = 0.0;
                            if terms.mass != 0.0 {
                                s += terms.mass * v.phi[a] * v.phi[b];
                            }
                            if terms.stiffness {
                                s += nu * (v.dx[a] * v.dx[b] + v.dy[a] * v.dy[b]);
                            }
                            kuu[a * nv + b] += w * s;
                        }
                    }
                    if terms.b0 {
                        // B_0(v, q) = -(div v, q): row (velocity a, comp d), column pressure b
                        for a in 0..nv {
                            for d in 0..2 {
                                for b in 0..np {
                                    let val = -w * v.grad(a, d) * q.phi[b];
                                    kup[(2 * a + d) * np + b] += val;
                                    kpu[b * 2 * nv + 2 * a + d] -= val;
                                }
                            }
                        }
                    }
                    if let Some(react) = terms.residual {
                        for b in 0..np {
                            for a in 0..nv {
                                let s = react * v.phi[a] - nu * v.lap[a];
                                for d in 0..2 {
                                    kpu[b * 2 * nv + 2 * a + d] += w * stab / nu * s * q.grad(b, d);
                                }
                            }
                            for b2 in 0..np {
                                kpp[b * np + b2] +=
                                    w * stab / nu * (q.dx[b] * q.dx[b2] + q.dy[b] * q.dy[b2]);
                            }
                        }
                    }
                    if terms.constraint {
                        for b in 0..np {
                            cp[b] += w * q.phi[b] / nu;
                        }
                    }
                }
                for a in 0..nv {
                    for b in 0..nv {
                        let val = kuu[a * nv + b];
                        if val != 0.0 {
                            for d in 0..2 {
                                t.push((ui[2 * a + d], ui[2 * b + d], val));
                            }
                        }
                    }
                }
                if terms.b0 || terms.residual.is_some() {
                    for r in 0..2 * nv {
                        for b in 0..np {
                            if terms.b0 {
                                t.push((ui[r], pi[b], kup[r * np + b]));
                            }
                            t.push((pi[b], ui[r], kpu[b * 2 * nv + r]));
                        }
                    }
                }
                if terms.residual.is_some() {
                    for b in 0..np {
                        for b2 in 0..np {
                            t.push((pi[b], pi[b2], kpp[b * np + b2]));
                        }
                    }
                }
                if terms.constraint {
                    let mu = g.dofs.multiplier_index();
                    for b in 0..np {
                        t.push((mu, pi[b], cp[b]));
                        t.push((pi[b], mu, cp[b]));
                    }
                }
            }
        }
    }

    if terms.nitsche || terms.b0 {
        let sgn = [1.0, -1.0];
        let pen = prm.gamma0 * prm.nu_avg() / h;
        for e in c.cut_elements() {
            let rule = &g.quadrature.interface[e];
            let origin = mesh.element_origin(e);
            let u = [g.dofs.element_u(1, e), g.dofs.element_u(2, e)];
            let p = [g.dofs.element_p(1, e), g.dofs.element_p(2, e)];
            let mut kuu = vec![0.0; 4 * nv * nv];
            let mut kup = vec![0.0; 4 * 2 * nv * np];
            for ((&x, &n), &w) in rule.points.iter().zip(&rule.normals).zip(&rule.weights) {
                let v = PointBasis::new(vb, origin, h, x, false);
                let q = PointBasis::new(pb, origin, h, x, false);
                let dn: Vec<f64> = (0..nv).map(|a| v.dx[a] * n.x + v.dy[a] * n.y).collect();
                for i in 0..2 {
                    for j in 0..2 {
                        let blk = (2 * i + j) * nv * nv;
                        if terms.nitsche {
                            for a in 0..nv {
                                for b in 0..nv {
                                    let f = kap[j] * prm.nu[j] * dn[b] * sgn[i] * v.phi[a]
                                        + kap[i] * prm.nu[i] * dn[a] * sgn[j] * v.phi[b];
                                    let j0 = pen * sgn[i] * sgn[j] * v.phi[a] * v.phi[b];
                                    kuu[blk + a * nv + b] += w * (j0 - f);
                                }
                            }
                        }
                        if terms.b0 {
                            let blk = (2 * i + j) * 2 * nv * np;
                            for a in 0..nv {
                                for d in 0..2 {
                                    for b in 0..np {
                                        kup[blk + (2 * a + d) * np + b] +=
                                            w * sgn[i] * v.phi[a] * n[d] * kap[j] * q.phi[b];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            for i in 0..2 {
                for j in 0..2 {
                    if terms.nitsche {
                        let blk = (2 * i + j) * nv * nv;
                        for a in 0..nv {
                            for b in 0..nv {
                                let val = kuu[blk + a * nv + b];
                                for d in 0..2 {
                                    t.push((u[i][2 * a + d], u[j][2 * b + d], val));
                                }
                            }
                        }
                    }
                    if terms.b0 {
                        let blk = (2 * i + j) * 2 * nv * np;
                        for r in 0..2 * nv {
                            for b in 0..np {
                                let val = kup[blk + r * np + b];
                                t.push((u[i][r], p[j][b], val));
                                t.push((p[j][b], u[i][r], -val));
                            }
                        }
                    }
                }
            }
        }
    }

    if terms.ghost_velocity || terms.ghost_pressure {
        for phase in 1..=2usize {
            let nu = prm.nu[phase - 1];
            for edge in c.ghost_edges(phase) {
                let (lo, hi) = mesh.edge_elements(edge);
                let (lo, hi) = (lo.unwrap(), hi.unwrap());
                let dir = if mesh.is_horizontal(edge) { 1 } else { 0 };
                let rule = build_edge_rule(&mesh, edge, g.k() + 2);
                if terms.ghost_velocity {
                    let dofs: Vec<usize> = g
                        .dofs
                        .element_u(phase, lo)
                        .into_iter()
                        .chain(g.dofs.element_u(phase, hi))
                        .collect();
                    ghost_block(
                        &mut t,
                        vb,
                        &mesh,
                        &rule.points,
                        &rule.weights,
                        lo,
                        hi,
                        dir,
                        2,
                        &dofs,
                        |l| {
                            let fact: f64 = (1..l).map(|v| v as f64).product();
                            nu * h.powi(2 * l as i32 - 1) / (fact * fact)
                        },
                    );
                }
                if terms.ghost_pressure {
                    let dofs: Vec<usize> = g
                        .dofs
                        .element_p(phase, lo)
                        .into_iter()
                        .chain(g.dofs.element_p(phase, hi))
                        .collect();
                    ghost_block(
                        &mut t,
                        pb,
                        &mesh,
                        &rule.points,
                        &rule.weights,
                        lo,
                        hi,
                        dir,
                        1,
                        &dofs,
                        |l| {
                            let fact: f64 = (1..=l).map(|v| v as f64).product();
                            h.powi(2 * l as i32 + 1) / (fact * fact) / nu
                        },
                    );
                }
            }
        }
    }
    t
}

/// Jumps of normal derivatives of orders `1..=degree` across one edge.
#[allow(clippy::too_many_arguments)]
fn ghost_block(
    t: &mut Triplets,
    basis: &TensorBasis,
    mesh: &StructuredMesh,
    points: &[Vec2],
    weights: &[f64],
    lo: usize,
    hi: usize,
    dir: usize,
    comps: usize,
    dofs: &[usize],
    weight: impl Fn(usize) -> f64,
) {
    let nl = basis.num_local();
    let h = mesh.h();
    let mut local = vec![0.0; 4 * nl * nl];
    let mut jump = vec![0.0; 2 * nl];
    for (&x, &w) in points.iter().zip(weights) {
        let (lx, ly) = basis.tables(mesh.element_origin(lo), h, x);
        let (hx, hy) = basis.tables(mesh.element_origin(hi), h, x);
        for l in 1..=basis.degree() {
            let (a, b) = if dir == 0 { (l, 0) } else { (0, l) };
            for loc in 0..nl {
                jump[loc] = basis.deriv(&lx, &ly, loc, a, b);
                jump[nl + loc] = -basis.deriv(&hx, &hy, loc, a, b);
            }
            let wl = w * weight(l);
            for r in 0..2 * nl {
                for s in 0..2 * nl {
                    local[r * 2 * nl + s] += wl * jump[r] * jump[s];
                }
            }
        }
    }
    for r in 0..2 * nl {
        for s in 0..2 * nl {
            let val = local[r * 2 * nl + s];
            if val == 0.0 {
                continue;
            }
            let (er, lr) = (r / nl, r % nl);
            let (es, ls) = (s / nl, s % nl);
            for d in 0..comps {
                t.push((
                    dofs[(er * nl + lr) * comps + d],
                    dofs[(es * nl + ls) * comps + d],
                    val,
                ));
            }
        }
    }
}

/// `A_h`: stiffness, Nitsche coupling and interface penalty, plus the velocity
/// ghost penalty.
pub fn assemble_ah(g: &StepGeometry, prm: &PenaltyParams) -> Triplets {
    assemble_terms(
        g,
        prm,
        &Terms {
            stiffness: true,
            nitsche: true,
            ghost_velocity: true,
            ..Default::default()
        },
    )
}

/// `B_0(v, q)` as rectangular entries (velocity row, pressure column).
pub fn assemble_b0(g: &StepGeometry, prm: &PenaltyParams) -> Triplets {
    let nu = 2 * (g.dofs.n_u[0] + g.dofs.n_u[1]);
    assemble_terms(
        g,
        prm,
        &Terms {
            b0: true,
            ..Default::default()
        },
    )
    .into_iter()
    .filter(|&(r, _, _)| r < nu)
    .collect()
}

/// Pressure ghost penalty `J_p`.
pub fn assemble_jp(g: &StepGeometry, prm: &PenaltyParams) -> Triplets {
    assemble_terms(
        g,
        prm,
        &Terms {
            ghost_pressure: true,
            ..Default::default()
        },
    )
}

/// Weighted mass matrix `coefficient * (u, v)`.
pub fn assemble_mass(g: &StepGeometry, prm: &PenaltyParams, coefficient: f64) -> Triplets {
    assemble_terms(
        g,
        prm,
        &Terms {
            mass: coefficient,
            ..Default::default()
        },
    )
}

/// Data entering the right-hand side of one solve.
pub struct RhsData<'a> {
    /// Volume load density per phase at a point (forcing minus history).
    pub load: &'a dyn Fn(usize, Vec2) -> Result<Vec2>,
    /// Interface data `(g_0, g_1)` at a point with normal `n`.
    pub interface: &'a dyn Fn(Vec2, Vec2) -> (Vec2, Vec2),
    /// Test the load also against `gamma_1 nu_2 h^2 nu^{-1} grad q`.
    pub residual_load: bool,
    /// Include the consistent penalty term `gamma_0 <nu> h^{-1} (g_0, [v])`.
    pub penalty_g0: bool,
}

/// Right-hand side vector (without Dirichlet data).
pub fn assemble_rhs(g: &StepGeometry, prm: &PenaltyParams, data: &RhsData) -> Result<Vec<f64>> {
    let c = &g.classification;
    let mesh = c.mesh;
    let h = mesh.h();
    let (vb, pb) = (&g.velocity_basis, &g.pressure_basis);
    let (nv, np) = (vb.num_local(), pb.num_local());
    let kap = prm.kappa();
    let stab = prm.gamma1 * prm.nu[1] * h * h;
    let mut rhs = vec![0.0; g.dofs.num_unknowns()];
    for phase in 1..=2usize {
        let nu = prm.nu[phase - 1];
        for e in c.cover_elements(phase) {
            let rule = g.quadrature.phase_rule(e, phase);
            if rule.is_empty() {
                continue;
            }
            let origin = mesh.element_origin(e);
            let ui = g.dofs.element_u(phase, e);
            let pi = g.dofs.element_p(phase, e);
            for (&x, &w) in rule.points.iter().zip(&rule.weights) {
                let l = (data.load)(phase, x)?;
                let v = PointBasis::new(vb, origin, h, x, false);
                for a in 0..nv {
                    rhs[ui[2 * a]] += w * l.x * v.phi[a];
                    rhs[ui[2 * a + 1]] += w * l.y * v.phi[a];
                }
                if data.residual_load {
                    let q = PointBasis::new(pb, origin, h, x, false);
                    for b in 0..np {
                        rhs[pi[b]] += w * stab / nu * (l.x * q.dx[b] + l.y * q.dy[b]);
                    }
                }
            }
        }
    }
    let sgn = [1.0, -1.0];
    let pen = prm.gamma0 * prm.nu_avg() / h;
    for e in c.cut_elements() {
        let rule = &g.quadrature.interface[e];
        let origin = mesh.element_origin(e);
        for ((&x, &n), &w) in rule.points.iter().zip(&rule.normals).zip(&rule.weights) {
            let (g0, g1) = (data.interface)(x, n);
            let v = PointBasis::new(vb, origin, h, x, false);
            let q = PointBasis::new(pb, origin, h, x, false);
            for i in 0..2 {
                let ui = g.dofs.element_u(i + 1, e);
                let pi = g.dofs.element_p(i + 1, e);
                for a in 0..nv {
                    let dn = v.dx[a] * n.x + v.dy[a] * n.y;
                    for d in 0..2 {
                        let mut s = g1[d] * kap[1 - i] * v.phi[a] - g0[d] * kap[i] * prm.nu[i] * dn;
                        if data.penalty_g0 {
                            s += pen * g0[d] * sgn[i] * v.phi[a];
                        }
                        rhs[ui[2 * a + d]] += w * s;
                    }
                }
                for b in 0..np {
                    rhs[pi[b]] -= w * g0.dot(&n) * kap[i] * q.phi[b];
                }
            }
        }
    }
    Ok(rhs)
}

/// Replaces the rows of Dirichlet unknowns by identity rows with the given values.
pub fn apply_dirichlet(t: &mut Triplets, rhs: &mut [f64], values: &[(usize, f64)]) {
    let mut fixed = vec![false; rhs.len()];
    for &(r, v) in values {
        fixed[r] = true;
        rhs[r] = v;
    }
    t.retain(|&(r, _, _)| !fixed[r]);
    for &(r, _) in values {
        t.push((r, r, 1.0));
    }
}

/// Assembled one-step system.
#[derive(Clone, Debug)]
pub struct SaddleSystem {
    pub n: usize,
    /// Compressed triplets, sorted by column then row.
    pub matrix: Triplets,
    pub rhs: Vec<f64>,
}

/// The full one-step matrix `K_1` (with the multiplier row) and right-hand
/// side, with the phase-2 boundary values imposed.
pub fn assemble_system(
    g: &StepGeometry,
    prm: &PenaltyParams,
    lambda0_over_tau: f64,
    data: &RhsData,
    dirichlet: &[(usize, f64)],
) -> Result<SaddleSystem> {
    let terms = Terms {
        mass: lambda0_over_tau,
        stiffness: true,
        nitsche: true,
        ghost_velocity: true,
        b0: true,
        ghost_pressure: true,
        residual: Some(lambda0_over_tau),
        constraint: true,
    };
    let mut t = assemble_terms(g, prm, &terms);
    let mut rhs = assemble_rhs(g, prm, data)?;
    apply_dirichlet(&mut t, &mut rhs, dirichlet);
    Ok(SaddleSystem {
        n: g.dofs.num_unknowns(),
        matrix: compress(t),
        rhs,
    })
}

/// Dense copy of a triplet matrix (tests and diagnostics on small meshes).
pub fn to_dense(n: usize, m: usize, t: &Triplets) -> Vec<Vec<f64>> {
    let mut a = vec![vec![0.0; m]; n];
    for &(r, c, v) in t {
        a[r][c] += v;
    }
    a
}

/// Coordinate text export `i j value` (one entry per line).
pub fn to_coordinate_text(t: &Triplets) -> String {
    let mut s = String::new();
    for (r, c, v) in t {
        s.push_str(&format!("{r} {c} {v:.17e}\n"));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bdf_coefficients_are_exact() {
        let r = |n, d| Rational64::new(n, d);
        assert_eq!(
            BdfScheme::new(2).unwrap().exact(),
            &[r(3, 2), r(-2, 1), r(1, 2)]
        );
        assert_eq!(
            BdfScheme::new(3).unwrap().exact(),
            &[r(11, 6), r(-3, 1), r(3, 2), r(-1, 3)]
        );
        assert_eq!(
            BdfScheme::new(4).unwrap().exact(),
            &[r(25, 12), r(-4, 1), r(3, 1), r(-4, 3), r(1, 4)]
        );
        for k in 1..=6 {
            assert!(BdfScheme::new(k)
                .unwrap()
                .consistency_residuals()
                .iter()
                .all(|v| *v == r(0, 1)));
        }
    }

    #[test]
    fn harmonic_weights() {
        let p = PenaltyParams::new(1e3, 1.0, [1.0, 1e-3]).unwrap();
        let k = p.kappa();
        assert!((k[0] + k[1] - 1.0).abs() < 1e-15);
        assert!((k[0] * p.nu[0] - k[1] * p.nu[1]).abs() < 1e-16);
        assert!((k[0] * p.nu[0] - 9.99000999000999e-4).abs() < 1e-16);
        assert!((p.nu_avg() - 2.0 * k[0] * p.nu[0]).abs() < 1e-16);
        assert!(PenaltyParams::new(1e3, 1.0, [1e-3, 1.0]).is_err());
    }

    #[test]
    fn compress_sums_duplicates() {
        let t = compress(vec![(1, 0, 1.0), (0, 0, 2.0), (1, 0, 0.5), (0, 1, 3.0)]);
        assert_eq!(t, vec![(0, 0, 2.0), (1, 0, 1.5), (0, 1, 3.0)]);
    }
}
