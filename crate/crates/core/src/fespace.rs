//! Tensor-product `Q_k` / `Q_{k-1}` spaces on the phase covers, with doubled
//! unknowns on cut cells and zero extension outside each cover.
//!
//! Every field lives on a global node lattice (the Gauss–Lobatto nodes of all
//! cells). A phase's field stores the full lattice vector with zeros at nodes
//! outside its cover, so evaluating it anywhere in the domain gives the
//! standard finite element extension that vanishes at exterior nodes.

use crate::flowmap::FlowMapStack;
use crate::mesh::{Classification, StructuredMesh};
use crate::poly::gauss_lobatto_nodes;
use crate::quadrature::CutQuadrature;
use crate::{Error, Mat2, Result, Vec2};

/// Largest supported polynomial degree plus one.
pub const MAX_NODES_1D: usize = 5;

/// 1D derivative table: `d[order][basis]`.
pub type Table1d = [[f64; MAX_NODES_1D]; MAX_NODES_1D];

/// Nodal Lagrange basis on the Gauss–Lobatto nodes of `[0, 1]`.
#[derive(Clone, Debug)]
pub struct Basis1d {
    degree: usize,
    nodes: Vec<f64>,
    /// Monomial coefficients of each basis polynomial.
    coef: Vec<Vec<f64>>,
}

impl Basis1d {
    pub fn new(degree: usize) -> Self {
        assert!(
            (1..MAX_NODES_1D).contains(&degree),
            "degree {degree} out of range 1..=4"
        );
        let nodes = gauss_lobatto_nodes(degree);
        let coef = (0..=degree)
            .map(|r| {
                let mut c = vec![1.0];
                for (m, &xm) in nodes.iter().enumerate() {
                    if m == r {
                        continue;
                    }
                    let denom = nodes[r] - xm;
                    let mut next = vec![0.0; c.len() + 1];
                    for (i, &ci) in c.iter().enumerate() {
                        next[i + 1] += ci / denom;
                        next[i] -= ci * xm / denom;
                    }
                    c = next;
                }
                c
            })
            .collect();
        Self {
            degree,
            nodes,
            coef,
        }
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Values and derivatives up to order `degree` at `xi`.
    pub fn table(&self, xi: f64) -> Table1d {
        let k = self.degree;
        let mut pw = [1.0; MAX_NODES_1D];
        for p in 1..=k {
            pw[p] = pw[p - 1] * xi;
        }
        let mut t = [[0.0; MAX_NODES_1D]; MAX_NODES_1D];
        for (r, c) in self.coef.iter().enumerate() {
            for d in 0..=k {
                let mut v = 0.0;
                for p in d..=k {
                    let fall: f64 = ((p - d + 1)..=p).map(|q| q as f64).product();
                    v += c[p] * fall * pw[p - d];
                }
                t[d][r] = v;
            }
        }
        t
    }
}

/// Tensor-product basis on a square cell of size `h`; local node `(r, s)`
/// has index `r + (degree + 1) * s`.
#[derive(Clone, Debug)]
pub struct TensorBasis {
    pub b1: Basis1d,
}

impl TensorBasis {
    pub fn new(degree: usize) -> Self {
        Self {
            b1: Basis1d::new(degree),
        }
    }

    pub fn degree(&self) -> usize {
        self.b1.degree
    }

    pub fn num_local(&self) -> usize {
        (self.degree() + 1).pow(2)
    }

    /// 1D tables in both directions at a physical point of the cell with
    /// lower-left corner `origin`, derivatives already scaled by `h^{-d}`.
    pub fn tables(&self, origin: Vec2, h: f64, x: Vec2) -> (Table1d, Table1d) {
        let mut tx = self.b1.table((x.x - origin.x) / h);
        let mut ty = self.b1.table((x.y - origin.y) / h);
        let mut scale = 1.0;
        for d in 0..=self.degree() {
            for r in 0..=self.degree() {
                tx[d][r] *= scale;
                ty[d][r] *= scale;
            }
            scale /= h;
        }
        (tx, ty)
    }

    /// `d^a/dx^a d^b/dy^b` of local basis function `loc`.
    #[inline]
    pub fn deriv(&self, tx: &Table1d, ty: &Table1d, loc: usize, a: usize, b: usize) -> f64 {
        let n = self.degree() + 1;
        tx[a][loc % n] * ty[b][loc / n]
    }
}

/// Global node lattice of degree `k` on a mesh: `k * n + 1` nodes per side.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Lattice {
    pub mesh: StructuredMesh,
    pub degree: usize,
}

impl Lattice {
    pub fn side(&self) -> usize {
        self.degree * self.mesh.n + 1
    }

    pub fn num_nodes(&self) -> usize {
        self.side().pow(2)
    }

    /// Lattice node of local node `loc` of element `e`.
    pub fn node(&self, e: usize, loc: usize) -> usize {
        let (i, j) = self.mesh.element_ij(e);
        let k = self.degree;
        let (r, s) = (loc % (k + 1), loc / (k + 1));
        (k * j + s) * self.side() + k * i + r
    }

    pub fn element_nodes(&self, e: usize) -> Vec<usize> {
        (0..(self.degree + 1).pow(2))
            .map(|l| self.node(e, l))
            .collect()
    }

    pub fn coords(&self, node: usize) -> Vec2 {
        let m = self.side();
        let (a, b) = (node % m, node / m);
        let k = self.degree;
        let nodes = gauss_lobatto_nodes(k);
        let h = self.mesh.h();
        let cx = (a / k).min(self.mesh.n - 1);
        let cy = (b / k).min(self.mesh.n - 1);
        let (ra, rb) = (a - k * cx, b - k * cy);
        self.mesh.origin + Vec2::new((cx as f64 + nodes[ra]) * h, (cy as f64 + nodes[rb]) * h)
    }

    pub fn on_boundary(&self, node: usize) -> bool {
        let m = self.side();
        let (a, b) = (node % m, node / m);
        a == 0 || b == 0 || a == m - 1 || b == m - 1
    }
}

/// Marker for lattice nodes without a degree of freedom.
pub const INACTIVE: usize = usize::MAX;

/// Degrees of freedom of the doubled velocity/pressure pair. Global unknowns
/// are ordered `[u_1, u_2, p_1, p_2, mu]` with the two velocity components of
/// a node adjacent.
#[derive(Clone, Debug)]
pub struct DofMap {
    pub velocity: Lattice,
    pub pressure: Lattice,
    /// Lattice node to phase-local velocity node index.
    pub u_nodes: [Vec<usize>; 2],
    pub p_nodes: [Vec<usize>; 2],
    pub n_u: [usize; 2],
    pub n_p: [usize; 2],
    /// Phase-2 velocity lattice nodes on the outer boundary.
    pub dirichlet_nodes: Vec<usize>,
}

fn number_active(lat: &Lattice, c: &Classification, phase: usize) -> (Vec<usize>, usize) {
    let mut map = vec![INACTIVE; lat.num_nodes()];
    for e in c.cover_elements(phase) {
        for node in lat.element_nodes(e) {
            map[node] = 0;
        }
    }
    let mut count = 0;
    for slot in map.iter_mut() {
        if *slot != INACTIVE {
            *slot = count;
            count += 1;
        }
    }
    (map, count)
}

impl DofMap {
    pub fn new(c: &Classification, k: usize) -> Self {
        let velocity = Lattice {
            mesh: c.mesh,
            degree: k,
        };
        let pressure = Lattice {
            mesh: c.mesh,
            degree: k - 1,
        };
        let (u1, n_u1) = number_active(&velocity, c, 1);
        let (u2, n_u2) = number_active(&velocity, c, 2);
        let (p1, n_p1) = number_active(&pressure, c, 1);
        let (p2, n_p2) = number_active(&pressure, c, 2);
        let dirichlet_nodes = (0..velocity.num_nodes())
            .filter(|&nd| velocity.on_boundary(nd) && u2[nd] != INACTIVE)
            .collect();
        Self {
            velocity,
            pressure,
            u_nodes: [u1, u2],
            p_nodes: [p1, p2],
            n_u: [n_u1, n_u2],
            n_p: [n_p1, n_p2],
            dirichlet_nodes,
        }
    }

    pub fn degree(&self) -> usize {
        self.velocity.degree
    }

    fn u_offset(&self, phase: usize) -> usize {
        if phase == 1 {
            0
        } else {
            2 * self.n_u[0]
        }
    }

    fn p_offset(&self, phase: usize) -> usize {
        2 * (self.n_u[0] + self.n_u[1]) + if phase == 1 { 0 } else { self.n_p[0] }
    }

    /// Global unknown of velocity component `comp` at lattice node `node`.
    pub fn u_index(&self, phase: usize, node: usize, comp: usize) -> Option<usize> {
        let d = self.u_nodes[phase - 1][node];
        (d != INACTIVE).then(|| self.u_offset(phase) + 2 * d + comp)
    }

    pub fn p_index(&self, phase: usize, node: usize) -> Option<usize> {
        let d = self.p_nodes[phase - 1][node];
        (d != INACTIVE).then(|| self.p_offset(phase) + d)
    }

    /// Index of the pressure-mean multiplier (the last unknown).
    /// Number of velocity unknowns; they come first in the global numbering.
    pub fn velocity_unknowns(&self) -> usize {
        2 * (self.n_u[0] + self.n_u[1])
    }

    pub fn multiplier_index(&self) -> usize {
        2 * (self.n_u[0] + self.n_u[1]) + self.n_p[0] + self.n_p[1]
    }

    pub fn num_unknowns(&self) -> usize {
        self.multiplier_index() + 1
    }

    /// Global velocity unknowns of element `e` for a phase, local order
    /// `2 * loc + comp`.
    pub fn element_u(&self, phase: usize, e: usize) -> Vec<usize> {
        let nodes = self.velocity.element_nodes(e);
        let mut out = Vec::with_capacity(2 * nodes.len());
        for nd in nodes {
            for comp in 0..2 {
                out.push(
                    self.u_index(phase, nd, comp)
                        .expect("element outside the phase cover"),
                );
            }
        }
        out
    }

    pub fn element_p(&self, phase: usize, e: usize) -> Vec<usize> {
        self.pressure
            .element_nodes(e)
            .into_iter()
            .map(|nd| {
                self.p_index(phase, nd)
                    .expect("element outside the phase cover")
            })
            .collect()
    }

    /// Global unknowns of the phase-2 Dirichlet velocity nodes with their lattice nodes.
    pub fn dirichlet_unknowns(&self) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::with_capacity(2 * self.dirichlet_nodes.len());
        for &nd in &self.dirichlet_nodes {
            for comp in 0..2 {
                out.push((self.u_index(2, nd, comp).unwrap(), nd, comp));
            }
        }
        out
    }
}

/// A pair of discrete fields (one per phase) with `components` values per
/// lattice node, zero outside each phase's cover.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldPair {
    pub lattice: Lattice,
    pub components: usize,
    /// `values[phase - 1][node * components + comp]`.
    pub values: [Vec<f64>; 2],
}

impl FieldPair {
    pub fn zeros(lattice: Lattice, components: usize) -> Self {
        let n = lattice.num_nodes() * components;
        Self {
            lattice,
            components,
            values: [vec![0.0; n], vec![0.0; n]],
        }
    }

    /// Nodal interpolation of `f(phase, x)` on each phase's cover.
    pub fn interpolate(
        lattice: Lattice,
        c: &Classification,
        components: usize,
        f: impl Fn(usize, Vec2) -> [f64; 2],
    ) -> Self {
        let mut out = Self::zeros(lattice, components);
        for phase in 1..=2 {
            let mut done = vec![false; lattice.num_nodes()];
            for e in c.cover_elements(phase) {
                for nd in lattice.element_nodes(e) {
                    if done[nd] {
                        continue;
                    }
                    done[nd] = true;
                    let v = f(phase, lattice.coords(nd));
                    for comp in 0..components {
                        out.values[phase - 1][nd * components + comp] = v[comp];
                    }
                }
            }
        }
        out
    }

    /// Velocity pair from a solution vector.
    pub fn velocity_from_solution(dofs: &DofMap, x: &[f64]) -> Self {
        let mut out = Self::zeros(dofs.velocity, 2);
        for phase in 1..=2 {
            for nd in 0..dofs.velocity.num_nodes() {
                for comp in 0..2 {
                    if let Some(g) = dofs.u_index(phase, nd, comp) {
                        out.values[phase - 1][2 * nd + comp] = x[g];
                    }
                }
            }
        }
        out
    }

    /// Pressure pair from a solution vector.
    pub fn pressure_from_solution(dofs: &DofMap, x: &[f64]) -> Self {
        let mut out = Self::zeros(dofs.pressure, 1);
        for phase in 1..=2 {
            for nd in 0..dofs.pressure.num_nodes() {
                if let Some(g) = dofs.p_index(phase, nd) {
                    out.values[phase - 1][nd] = x[g];
                }
            }
        }
        out
    }

    /// Writes the field into the matching entries of a solution vector.
    pub fn scatter(&self, dofs: &DofMap, x: &mut [f64]) {
        for phase in 1..=2 {
            for nd in 0..self.lattice.num_nodes() {
                for comp in 0..self.components {
                    let g = if self.components == 2 {
                        dofs.u_index(phase, nd, comp)
                    } else {
                        dofs.p_index(phase, nd)
                    };
                    if let Some(g) = g {
                        x[g] = self.values[phase - 1][nd * self.components + comp];
                    }
                }
            }
        }
    }

    /// Coefficients of element `e` for a phase: `[comp][loc]`.
    pub fn element_coefficients(&self, phase: usize, e: usize) -> [Vec<f64>; 2] {
        let nodes = self.lattice.element_nodes(e);
        let v = &self.values[phase - 1];
        let mut out = [
            Vec::with_capacity(nodes.len()),
            Vec::with_capacity(nodes.len()),
        ];
        for nd in nodes {
            for comp in 0..self.components {
                out[comp].push(v[nd * self.components + comp]);
            }
        }
        out
    }

    /// `d^a/dx^a d^b/dy^b` of each component at `x` (owning cell chosen by the
    /// half-open rule), piecewise on cells.
    pub fn eval(&self, phase: usize, x: Vec2, deriv: (usize, usize)) -> Result<[f64; 2]> {
        self.evaluator().eval(phase, x, deriv)
    }

    /// Evaluator holding the basis tables, for repeated point queries.
    pub fn evaluator(&self) -> FieldEvaluator<'_> {
        FieldEvaluator {
            field: self,
            basis: TensorBasis::new(self.lattice.degree),
        }
    }

    pub(crate) fn eval_in_element(
        &self,
        basis: &TensorBasis,
        phase: usize,
        e: usize,
        tx: &Table1d,
        ty: &Table1d,
        deriv: (usize, usize),
    ) -> [f64; 2] {
        let v = &self.values[phase - 1];
        let mut out = [0.0; 2];
        for (loc, nd) in self.lattice.element_nodes(e).into_iter().enumerate() {
            let phi = basis.deriv(tx, ty, loc, deriv.0, deriv.1);
            for (comp, o) in out.iter_mut().enumerate().take(self.components) {
                *o += phi * v[nd * self.components + comp];
            }
        }
        out
    }

    /// Value and gradient (rows: components) at `x`.
    pub fn eval_with_gradient(&self, phase: usize, x: Vec2) -> Result<([f64; 2], Mat2)> {
        self.evaluator().eval_with_gradient(phase, x)
    }

    /// Structured CSV `phase,node,x,y,values...` over active nodes.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("phase,node,x,y");
        for comp in 0..self.components {
            s.push_str(&format!(",v{comp}"));
        }
        s.push('\n');
        for phase in 1..=2 {
            for nd in 0..self.lattice.num_nodes() {
                let vals =
                    &self.values[phase - 1][nd * self.components..(nd + 1) * self.components];
                if vals.iter().all(|&v| v == 0.0) {
                    continue;
                }
                let p = self.lattice.coords(nd);
                s.push_str(&format!("{phase},{nd},{:.12e},{:.12e}", p.x, p.y));
                for v in vals {
                    s.push_str(&format!(",{v:.15e}"));
                }
                s.push('\n');
            }
        }
        s
    }
}

/// Point evaluation of a [`FieldPair`] with a cached basis.
pub struct FieldEvaluator<'a> {
    field: &'a FieldPair,
    basis: TensorBasis,
}

impl FieldEvaluator<'_> {
    pub fn eval(&self, phase: usize, x: Vec2, deriv: (usize, usize)) -> Result<[f64; 2]> {
        let mesh = &self.field.lattice.mesh;
        let e = mesh.locate(x).ok_or(Error::OutsideDomain(x.x, x.y))?;
        if deriv.0 + deriv.1 > self.basis.degree() {
            return Ok([0.0; 2]);
        }
        let (tx, ty) = self.basis.tables(mesh.element_origin(e), mesh.h(), x);
        Ok(self
            .field
            .eval_in_element(&self.basis, phase, e, &tx, &ty, deriv))
    }

    pub fn eval_with_gradient(&self, phase: usize, x: Vec2) -> Result<([f64; 2], Mat2)> {
        let mesh = &self.field.lattice.mesh;
        let e = mesh.locate(x).ok_or(Error::OutsideDomain(x.x, x.y))?;
        let (tx, ty) = self.basis.tables(mesh.element_origin(e), mesh.h(), x);
        let f = self.field;
        let v = f.eval_in_element(&self.basis, phase, e, &tx, &ty, (0, 0));
        let gx = f.eval_in_element(&self.basis, phase, e, &tx, &ty, (1, 0));
        let gy = f.eval_in_element(&self.basis, phase, e, &tx, &ty, (0, 1));
        Ok((v, Mat2::new(gx[0], gy[0], gx[1], gy[1])))
    }
}

/// Field of step `m` pulled back to step `n`: value (and gradient when
/// `with_gradient`) of `f ∘ X^{n,m}` at `x`.
pub fn pullback_eval(
    f: &FieldPair,
    phase: usize,
    x: Vec2,
    m: usize,
    n: usize,
    stack: &FlowMapStack,
    with_gradient: bool,
) -> Result<([f64; 2], Option<Mat2>)> {
    let y = if m == n {
        x
    } else {
        stack.inverse_map(x, m, n)?
    };
    if !with_gradient {
        return Ok((f.eval(phase, y, (0, 0))?, None));
    }
    let (v, g) = f.eval_with_gradient(phase, y)?;
    if m == n {
        return Ok((v, Some(g)));
    }
    let (_, jac) = stack.forward_multi_with_jacobian(y, m, n)?;
    let jinv = jac.try_inverse().ok_or_else(|| Error::InverseMap {
        x: x.x,
        y: x.y,
        residual: f64::NAN,
    })?;
    Ok((v, Some(g * jinv)))
}

/// Weighted norms of a per-phase function given by its value and gradient.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct WeightedNorms {
    /// `(sum_i w_i ||f_i||^2_{Omega_i})^{1/2}`.
    pub l2: f64,
    /// `(sum_i w_i ||grad f_i||^2_{Omega_i})^{1/2}`.
    pub h1_semi: f64,
}

/// Norms over the cut domains with per-phase weights on the squared norms
/// (`[1, 1]` for plain, `[nu_1, nu_2]` for `nu^{1/2}`, `[1/nu_1, 1/nu_2]` for
/// `nu^{-1/2}`). `f(phase, x)` returns the value and gradient rows.
pub fn weighted_norms(
    quad: &CutQuadrature,
    weights: [f64; 2],
    f: impl Fn(usize, Vec2) -> Result<([f64; 2], Mat2)>,
) -> Result<WeightedNorms> {
    let mut l2 = 0.0;
    let mut h1 = 0.0;
    for rules in &quad.volume {
        for (p, rule) in rules.iter().enumerate() {
            for (&x, &w) in rule.points.iter().zip(&rule.weights) {
                let (v, g) = f(p + 1, x)?;
                l2 += weights[p] * w * (v[0] * v[0] + v[1] * v[1]);
                h1 += weights[p] * w * g.norm_squared();
            }
        }
    }
    Ok(WeightedNorms {
        l2: l2.sqrt(),
        h1_semi: h1.sqrt(),
    })
}
