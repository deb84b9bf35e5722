//! The Stokes projection and the time-marching driver.

use std::collections::VecDeque;
use std::sync::Arc;

use log::{debug, info, warn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::assembly::{
    apply_dirichlet, assemble_system, assemble_terms, compress, BdfScheme, PenaltyParams, RhsData,
    SaddleSystem, StepGeometry, Terms,
};
use crate::fespace::{FieldPair, TensorBasis};
use crate::flowmap::{advance_chain, FlowMapStack, RkTableau, VelocityField};
use crate::geometry::{fit_periodic_spline, redistribute_markers, MarkerChain, SplineInterface};
use crate::linalg::solve_saddle;
use crate::mesh::StructuredMesh;
use crate::quadrature::{QuadratureOptions, Rule};
use crate::{Error, Mat2, Result, Vec2};

/// Exact velocity (value and gradient rows) of a phase at a point.
pub type VelocityFn<'a> = &'a dyn Fn(usize, Vec2) -> (Vec2, Mat2);
/// Exact pressure of a phase at a point.
pub type PressureFn<'a> = &'a dyn Fn(usize, Vec2) -> f64;

/// Right-hand side of the pressure rows of the projection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProjectionMode {
    /// `-B_0(u, q)`: the projection reproduces the discrete pair of `(u, p)`.
    Consistent,
    /// Zero data in the pressure rows.
    Zero,
}

/// Result of [`stokes_projection`].
#[derive(Clone, Debug)]
pub struct Projection {
    pub velocity: FieldPair,
    pub pressure: FieldPair,
    pub relative_residual: f64,
}

/// The modified Stokes projection: find `(u_h, p_h)` with
/// `A_h(u_h, v) + B_0(v, p_h) = a_h(u, v) + B_0(v, p)` and
/// `-B_0(u_h, q) + J_p(p_h, q) = -B_0(u, q)` (or zero), where `a_h` is `A_h`
/// without the velocity ghost penalty, the pressure-mean multiplier appended
/// and the phase-2 boundary values taken from `u`.
pub fn stokes_projection(
    g: &StepGeometry,
    prm: &PenaltyParams,
    u: VelocityFn,
    p: PressureFn,
    mode: ProjectionMode,
) -> Result<Projection> {
    let sys = projection_system(g, prm, u, p, mode);
    let sol = solve_saddle(sys.n, &sys.matrix, &sys.rhs, g.dofs.velocity_unknowns())?;
    Ok(Projection {
        velocity: FieldPair::velocity_from_solution(&g.dofs, &sol.solution),
        pressure: FieldPair::pressure_from_solution(&g.dofs, &sol.solution),
        relative_residual: sol.relative_residual,
    })
}

/// Matrix `K_0` (with the multiplier row and boundary rows) and right-hand
/// side of [`stokes_projection`].
pub fn projection_system(
    g: &StepGeometry,
    prm: &PenaltyParams,
    u: VelocityFn,
    p: PressureFn,
    mode: ProjectionMode,
) -> SaddleSystem {
    let terms = Terms {
        stiffness: true,
        nitsche: true,
        ghost_velocity: true,
        b0: true,
        ghost_pressure: true,
        constraint: true,
        ..Default::default()
    };
    let mut t = assemble_terms(g, prm, &terms);
    let mut rhs = projection_rhs(g, prm, u, p, mode);
    let lift = boundary_lift(g, |x| u(2, x).0);
    apply_dirichlet(&mut t, &mut rhs, &lift);
    SaddleSystem {
        n: g.dofs.num_unknowns(),
        matrix: compress(t),
        rhs,
    }
}

/// Phase-2 boundary values `(unknown, value)` from the nodal values of `u`.
pub fn boundary_lift(g: &StepGeometry, u: impl Fn(Vec2) -> Vec2) -> Vec<(usize, f64)> {
    g.dofs
        .dirichlet_unknowns()
        .into_iter()
        .map(|(idx, node, comp)| (idx, u(g.dofs.velocity.coords(node))[comp]))
        .collect()
}

fn projection_rhs(
    g: &StepGeometry,
    prm: &PenaltyParams,
    u: VelocityFn,
    p: PressureFn,
    mode: ProjectionMode,
) -> Vec<f64> {
    let c = &g.classification;
    let mesh = c.mesh;
    let h = mesh.h();
    let (vb, pb) = (&g.velocity_basis, &g.pressure_basis);
    let (nv, np) = (vb.num_local(), pb.num_local());
    let kap = prm.kappa();
    let consistent = mode == ProjectionMode::Consistent;
    let mut rhs = vec![0.0; g.dofs.num_unknowns()];
    let mu = g.dofs.multiplier_index();
    let eval = |basis: &TensorBasis, e: usize, x: Vec2| {
        let (tx, ty) = basis.tables(mesh.element_origin(e), h, x);
        let n = basis.num_local();
        let mut out = vec![[0.0; 3]; n];
        for (l, o) in out.iter_mut().enumerate() {
            *o = [
                basis.deriv(&tx, &ty, l, 0, 0),
                basis.deriv(&tx, &ty, l, 1, 0),
                basis.deriv(&tx, &ty, l, 0, 1),
            ];
        }
        out
    };
    for phase in 1..=2usize {
        let nu = prm.nu[phase - 1];
        for e in c.cover_elements(phase) {
            let rule = g.quadrature.phase_rule(e, phase);
            if rule.is_empty() {
                continue;
            }
            let ui = g.dofs.element_u(phase, e);
            let pi = g.dofs.element_p(phase, e);
            for (&x, &w) in rule.points.iter().zip(&rule.weights) {
                let (_, gu) = u(phase, x);
                let pe = p(phase, x);
                let v = eval(vb, e, x);
                for a in 0..nv {
                    for d in 0..2 {
                        let s =
                            nu * (gu[(d, 0)] * v[a][1] + gu[(d, 1)] * v[a][2]) - pe * v[a][1 + d];
                        rhs[ui[2 * a + d]] += w * s;
                    }
                }
                if consistent {
                    let q = eval(pb, e, x);
                    for b in 0..np {
                        rhs[pi[b]] += w * gu.trace() * q[b][0];
                    }
                }
                rhs[mu] += w * pe / nu;
            }
        }
    }
    let sgn = [1.0, -1.0];
    let pen = prm.gamma0 * prm.nu_avg() / h;
    for e in c.cut_elements() {
        let rule = &g.quadrature.interface[e];
        for ((&x, &n), &w) in rule.points.iter().zip(&rule.normals).zip(&rule.weights) {
            let (u1, g1) = u(1, x);
            let (u2, g2) = u(2, x);
            let jump = u1 - u2;
            let flux = kap[0] * prm.nu[0] * (g1 * n) + kap[1] * prm.nu[1] * (g2 * n);
            let pavg = kap[0] * p(1, x) + kap[1] * p(2, x);
            let v = eval(vb, e, x);
            let q = eval(pb, e, x);
            for i in 0..2 {
                let ui = g.dofs.element_u(i + 1, e);
                let pi = g.dofs.element_p(i + 1, e);
                for a in 0..nv {
                    let dn = v[a][1] * n.x + v[a][2] * n.y;
                    for d in 0..2 {
                        let s = sgn[i] * v[a][0] * (pen * jump[d] - flux[d] + n[d] * pavg)
                            - kap[i] * prm.nu[i] * dn * jump[d];
                        rhs[ui[2 * a + d]] += w * s;
                    }
                }
                if consistent {
                    for b in 0..np {
                        rhs[pi[b]] -= w * jump.dot(&n) * kap[i] * q[b][0];
                    }
                }
            }
        }
    }
    rhs
}

/// A two-phase flow problem with closed-form solution.
///
/// Phase 1 is enclosed by the initial curve; `f_i = d_t u_i + (w . grad) u_i
/// - nu_i lap u_i + grad p_i` and the interface data are derived from the
/// exact fields.
pub trait FlowCase: Send + Sync {
    fn name(&self) -> &str;
    fn nu(&self) -> [f64; 2];
    /// The interface velocity `w`, also the convecting field.
    fn transport(&self) -> Arc<dyn VelocityField>;
    /// Initial interface parametrized on `[0, initial_length()]`, counterclockwise.
    fn initial_point(&self, l: f64) -> Vec2;
    fn initial_length(&self) -> f64;

    fn velocity(&self, phase: usize, x: Vec2, t: f64) -> Vec2;
    /// Rows are components.
    fn velocity_gradient(&self, phase: usize, x: Vec2, t: f64) -> Mat2;
    fn velocity_dt(&self, phase: usize, x: Vec2, t: f64) -> Vec2;
    fn velocity_laplacian(&self, phase: usize, x: Vec2, t: f64) -> Vec2;
    fn pressure(&self, phase: usize, x: Vec2, t: f64) -> f64;
    fn pressure_gradient(&self, phase: usize, x: Vec2, t: f64) -> Vec2;

    fn initial_markers(&self, eta: f64) -> Result<MarkerChain> {
        let len = self.initial_length();
        let count = ((len / eta).ceil() as usize).max(MarkerChain::MIN_MARKERS);
        MarkerChain::from_curve(|l| self.initial_point(l), len, count)
    }

    fn forcing(&self, phase: usize, x: Vec2, t: f64) -> Vec2 {
        let w = self.transport().velocity(x, t);
        self.velocity_dt(phase, x, t) + self.velocity_gradient(phase, x, t) * w
            - self.nu()[phase - 1] * self.velocity_laplacian(phase, x, t)
            + self.pressure_gradient(phase, x, t)
    }

    /// `g_0 = u_1 - u_2` and `g_1 = nu_1 d_n u_1 - nu_2 d_n u_2 - (p_1 - p_2) n`.
    fn jump_data(&self, x: Vec2, n: Vec2, t: f64) -> (Vec2, Vec2) {
        let nu = self.nu();
        let g0 = self.velocity(1, x, t) - self.velocity(2, x, t);
        let g1 = nu[0] * self.velocity_gradient(1, x, t) * n
            - nu[1] * self.velocity_gradient(2, x, t) * n
            - (self.pressure(1, x, t) - self.pressure(2, x, t)) * n;
        (g0, g1)
    }
}

/// Parameters of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Velocity degree and BDF order.
    pub k: usize,
    /// Cells per side of the unit square.
    pub nc: usize,
    /// Time step; defaults to `h`.
    pub tau: Option<f64>,
    pub t_final: f64,
    pub gamma0: f64,
    pub gamma1: f64,
    /// Marker spacing `eta = eta_factor * tau^{max(1, k/3)}`.
    pub eta_factor: f64,
    /// Volume quadrature order; defaults to `2k + 2`.
    pub quad_order: Option<usize>,
    pub seed: u64,
    /// Times at which interface snapshots are recorded.
    pub snapshot_times: Vec<f64>,
}

impl RunConfig {
    pub fn new(k: usize, nc: usize, t_final: f64) -> Self {
        Self {
            k,
            nc,
            tau: None,
            t_final,
            gamma0: 1e3,
            gamma1: 1.0,
            eta_factor: 0.5,
            quad_order: None,
            seed: 0,
            snapshot_times: Vec::new(),
        }
    }

    pub fn h(&self) -> f64 {
        1.0 / self.nc as f64
    }

    pub fn tau(&self) -> f64 {
        self.tau.unwrap_or_else(|| self.h())
    }

    pub fn eta(&self) -> f64 {
        self.eta_factor * self.tau().powf((self.k as f64 / 3.0).max(1.0))
    }

    pub fn num_steps(&self) -> usize {
        (self.t_final / self.tau()).round() as usize
    }

    pub fn quadrature(&self) -> QuadratureOptions {
        let mut q = QuadratureOptions::for_degree(self.k);
        if let Some(o) = self.quad_order {
            q.volume_order = o;
        }
        q
    }

    pub fn validate(&self, nu: [f64; 2]) -> Result<()> {
        if !(2..=4).contains(&self.k) {
            return Err(Error::Config(format!(
                "k must be 2, 3 or 4, got {}",
                self.k
            )));
        }
        if self.nc < 4 {
            return Err(Error::Config(format!(
                "need at least 4 cells per side, got {}",
                self.nc
            )));
        }
        let tau = self.tau();
        if !(tau > 0.0 && self.t_final >= 0.0) {
            return Err(Error::Config(format!(
                "need tau > 0 and T >= 0 (tau = {tau}, T = {})",
                self.t_final
            )));
        }
        let n = self.num_steps();
        if (n as f64 * tau - self.t_final).abs() > 1e-9 * self.t_final.max(1.0) {
            return Err(Error::Config(format!(
                "T = {} is not a multiple of tau = {tau}",
                self.t_final
            )));
        }
        let ratio = self.h() / tau;
        if !(0.1..=10.0).contains(&ratio) {
            return Err(Error::Config(format!(
                "h / tau = {ratio:.3} outside [0.1, 10]"
            )));
        }
        if !(self.eta_factor > 0.0) {
            return Err(Error::Config("eta factor must be positive".into()));
        }
        if let Some(o) = self.quad_order {
            if o < 2 {
                return Err(Error::Config(format!("quadrature order {o} too low")));
            }
        }
        PenaltyParams::new(self.gamma0, self.gamma1, nu)?;
        if tau > nu[1] {
            warn!(
                "tau = {tau:.3e} exceeds nu_2 = {:.1e}; the stability analysis assumes tau <= nu_2",
                nu[1]
            );
        }
        Ok(())
    }

    /// Hex digest of the JSON serialization, stamped on every result.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(json.as_bytes())
            .iter()
            .take(8)
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

/// The four error measures of a run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorNorms {
    /// `||u(T) - u_h^N||_0`.
    pub eu0: f64,
    /// `(sum_n tau ||nu^{1/2} grad(u - u_h)||^2)^{1/2}`.
    pub eu1: f64,
    /// `(sum_n tau ||nu^{-1/2} (p - p_h)||^2)^{1/2}` after the mean shift.
    pub ep0: f64,
    /// `(sum_n tau ||nu^{-1/2} grad(p - p_h)||^2)^{1/2}`.
    pub ep1: f64,
}

impl ErrorNorms {
    pub fn as_array(&self) -> [f64; 4] {
        [self.eu0, self.eu1, self.ep0, self.ep1]
    }
}

/// Per-step monitoring data.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub step: usize,
    pub time: f64,
    pub velocity_norm: f64,
    pub residual: f64,
    pub cut_cells: usize,
    /// Smallest phase part of a cut cell relative to `h^2`.
    pub min_cut_fraction: f64,
    pub markers: usize,
    pub enclosed_area: f64,
    /// `sum_i (p_h, 1 / nu_i)` after the solve.
    pub mean_constraint: f64,
}

impl StepDiagnostics {
    pub const CSV_HEADER: &'static str =
        "step,time,velocity_norm,residual,cut_cells,min_cut_fraction,markers,enclosed_area,mean_constraint";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.10},{:.10e},{:.3e},{},{:.6e},{},{:.15e},{:.3e}",
            self.step,
            self.time,
            self.velocity_norm,
            self.residual,
            self.cut_cells,
            self.min_cut_fraction,
            self.markers,
            self.enclosed_area,
            self.mean_constraint
        )
    }
}

/// Sampled interface at one time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterfaceSnapshot {
    pub step: usize,
    pub time: f64,
    /// Samples `[l, x, y]` along the spline.
    pub points: Vec<[f64; 3]>,
}

impl InterfaceSnapshot {
    pub fn from_spline(step: usize, time: f64, s: &SplineInterface) -> Self {
        Self {
            step,
            time,
            points: s
                .sample(8)
                .into_iter()
                .map(|(l, x)| [l, x.x, x.y])
                .collect(),
        }
    }

    /// CSV polyline with columns `l,x,y`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("l,x,y\n");
        for [l, x, y] in &self.points {
            s.push_str(&format!("{l:.12e},{x:.12e},{y:.12e}\n"));
        }
        s
    }

    /// Closed path over the unit square, `pixels` wide.
    pub fn to_svg(&self, pixels: f64) -> String {
        let mut d = String::new();
        for (i, [_, x, y]) in self.points.iter().enumerate() {
            let (px, py) = (x * pixels, pixels - y * pixels);
            d.push_str(&format!(
                "{}{px:.3},{py:.3} ",
                if i == 0 { "M" } else { "L" }
            ));
        }
        d.push('Z');
        format!(
            "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n\
             <svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{pixels}\" height=\"{pixels}\" viewBox=\"0 0 {pixels} {pixels}\">\n\
             <title>t = {:.4}</title>\n\
             <rect x=\"0\" y=\"0\" width=\"{pixels}\" height=\"{pixels}\" fill=\"white\" stroke=\"black\"/>\n\
             <path d=\"{d}\" fill=\"#f5d76e\" stroke=\"#b03a2e\" stroke-width=\"1\"/>\n</svg>\n",
            self.time
        )
    }
}

/// Everything a run reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub schema_version: u32,
    pub case: String,
    pub config: RunConfig,
    pub config_hash: String,
    pub steps: usize,
    pub errors: ErrorNorms,
    pub diagnostics: Vec<StepDiagnostics>,
    pub snapshots: Vec<InterfaceSnapshot>,
    /// Set when a step failed; the other fields hold the partial run.
    pub failure: Option<String>,
}

impl RunResult {
    pub const SCHEMA_VERSION: u32 = 1;

    pub fn diagnostics_csv(&self) -> String {
        let mut s = format!(
            "# case={} config_hash={}\n{}\n",
            self.case,
            self.config_hash,
            StepDiagnostics::CSV_HEADER
        );
        for d in &self.diagnostics {
            s.push_str(&d.csv_row());
            s.push('\n');
        }
        s
    }
}

/// Squared error contributions of one step.
#[derive(Clone, Copy, Debug, Default)]
struct StepErrors {
    u_l2: f64,
    u_h1_nu: f64,
    p_l2_nu: f64,
    p_h1_nu: f64,
}

fn step_errors(
    g: &StepGeometry,
    nu: [f64; 2],
    u: &FieldPair,
    p: &FieldPair,
    case: &dyn FlowCase,
    t: f64,
) -> Result<StepErrors> {
    let (ue, pe) = (u.evaluator(), p.evaluator());
    let mut out = StepErrors::default();
    // weighted pressure differences, shifted by their mean afterwards
    let mut dps: Vec<(f64, f64)> = Vec::new();
    for rules in &g.quadrature.volume {
        for (i, rule) in rules.iter().enumerate() {
            let phase = i + 1;
            let inv = 1.0 / nu[i];
            for (&x, &w) in rule.points.iter().zip(&rule.weights) {
                let (uh, guh) = ue.eval_with_gradient(phase, x)?;
                let du = Vec2::new(uh[0], uh[1]) - case.velocity(phase, x, t);
                let dg = guh - case.velocity_gradient(phase, x, t);
                let (ph, gph) = pe.eval_with_gradient(phase, x)?;
                let dp = ph[0] - case.pressure(phase, x, t);
                let dgp = Vec2::new(gph[(0, 0)], gph[(0, 1)]) - case.pressure_gradient(phase, x, t);
                out.u_l2 += w * du.norm_squared();
                out.u_h1_nu += w * nu[i] * dg.norm_squared();
                out.p_h1_nu += w * inv * dgp.norm_squared();
                dps.push((w * inv, dp));
            }
        }
    }
    let m0: f64 = dps.iter().map(|(w, _)| w).sum();
    let shift = dps.iter().map(|(w, d)| w * d).sum::<f64>() / m0;
    out.p_l2_nu = dps.iter().map(|(w, d)| w * (d - shift).powi(2)).sum();
    Ok(out)
}

fn min_cut_fraction(g: &StepGeometry) -> f64 {
    let h2 = g.h() * g.h();
    g.classification
        .cut_elements()
        .into_iter()
        .map(|e| {
            let [a, b] = &g.quadrature.volume[e];
            a.measure().min(b.measure()) / h2
        })
        .fold(f64::INFINITY, f64::min)
}

fn velocity_norm(g: &StepGeometry, u: &FieldPair) -> Result<f64> {
    let ev = u.evaluator();
    let mut s = 0.0;
    for rules in &g.quadrature.volume {
        for (i, rule) in rules.iter().enumerate() {
            for (&x, &w) in rule.points.iter().zip(&rule.weights) {
                let v = ev.eval(i + 1, x, (0, 0))?;
                s += w * (v[0] * v[0] + v[1] * v[1]);
            }
        }
    }
    Ok(s.sqrt())
}

fn mean_constraint(g: &StepGeometry, nu: [f64; 2], p: &FieldPair) -> Result<f64> {
    let ev = p.evaluator();
    let mut s = 0.0;
    for rules in &g.quadrature.volume {
        for (i, rule) in rules.iter().enumerate() {
            for (&x, &w) in rule.points.iter().zip(&rule.weights) {
                s += w * ev.eval(i + 1, x, (0, 0))?[0] / nu[i];
            }
        }
    }
    Ok(s)
}

/// Marker chains at every step `0..=num_steps`, advanced with the tableau
/// matched to `k` and redistributed to spacing `eta` after each step.
pub fn track_interface(
    case: &dyn FlowCase,
    k: usize,
    tau: f64,
    num_steps: usize,
    eta: f64,
) -> Result<Vec<MarkerChain>> {
    let tab = RkTableau::for_bdf_order(k)?;
    let w = case.transport();
    let mut chains = Vec::with_capacity(num_steps + 1);
    chains.push(case.initial_markers(eta)?);
    for n in 1..=num_steps {
        let moved = advance_chain(&chains[n - 1], (n - 1) as f64 * tau, tau, &tab, w.as_ref())?;
        chains.push(redistribute_markers(&moved, eta)?);
    }
    Ok(chains)
}

/// State carried between steps.
struct TimeStepState {
    markers: MarkerChain,
    stack: FlowMapStack,
    /// Velocities of the last `k` steps, oldest first.
    history: VecDeque<FieldPair>,
}

/// Marches a case from `t = 0` to `T`: steps `0..k` take the interpolant of
/// the exact solution on the tracked geometry, later steps are solved.
/// Invalid configurations are errors; a failing step ends the run with a
/// partial result.
pub fn run(config: &RunConfig, case: &dyn FlowCase) -> Result<RunResult> {
    let nu = case.nu();
    config.validate(nu)?;
    let prm = PenaltyParams::new(config.gamma0, config.gamma1, nu)?;
    let mut result = RunResult {
        schema_version: RunResult::SCHEMA_VERSION,
        case: case.name().to_string(),
        config: config.clone(),
        config_hash: config.hash(),
        steps: config.num_steps(),
        errors: ErrorNorms::default(),
        diagnostics: Vec::new(),
        snapshots: Vec::new(),
        failure: None,
    };
    info!(
        "run {} k={} nc={} tau={:.4e} steps={} eta={:.3e} [{}]",
        result.case,
        config.k,
        config.nc,
        config.tau(),
        result.steps,
        config.eta(),
        result.config_hash
    );
    if let Err(e) = march(config, case, &prm, &mut result) {
        warn!("run stopped: {e}");
        result.failure = Some(e.to_string());
    }
    Ok(result)
}

fn march(
    config: &RunConfig,
    case: &dyn FlowCase,
    prm: &PenaltyParams,
    result: &mut RunResult,
) -> Result<()> {
    let k = config.k;
    let tau = config.tau();
    let eta = config.eta();
    let nsteps = config.num_steps();
    let nu = prm.nu;
    let mesh = StructuredMesh::unit_square(config.nc)?;
    let bdf = BdfScheme::new(k)?;
    let tab = RkTableau::for_bdf_order(k)?;
    let w = case.transport();
    let mut state = TimeStepState {
        markers: case.initial_markers(eta)?,
        stack: FlowMapStack::new(tab.clone(), w.clone(), k, 2f64.sqrt()),
        history: VecDeque::with_capacity(k + 1),
    };
    let mut sums = StepErrors::default();

    for n in 0..=nsteps {
        let t = n as f64 * tau;
        if n > 0 {
            let moved = advance_chain(&state.markers, t - tau, tau, &tab, w.as_ref())?;
            state.markers = redistribute_markers(&moved, eta)?;
            state.stack.push(n, t - tau, tau);
        }
        let spline = fit_periodic_spline(&state.markers)?;
        let g = StepGeometry::new(&mesh, spline, k, config.quadrature())?;

        let (u, p, res) = if n < k {
            let u = FieldPair::interpolate(g.dofs.velocity, &g.classification, 2, |ph, x| {
                let v = case.velocity(ph, x, t);
                [v.x, v.y]
            });
            let p = FieldPair::interpolate(g.dofs.pressure, &g.classification, 1, |ph, x| {
                [case.pressure(ph, x, t), 0.0]
            });
            (u, p, 0.0)
        } else {
            solve_step(&g, prm, &bdf, &state, case, n, t)?
        };

        let errs = step_errors(&g, nu, &u, &p, case, t)?;
        if n >= k || nsteps < k {
            sums.u_h1_nu += tau * errs.u_h1_nu;
            sums.p_l2_nu += tau * errs.p_l2_nu;
            sums.p_h1_nu += tau * errs.p_h1_nu;
        }

        let diag = StepDiagnostics {
            step: n,
            time: t,
            velocity_norm: velocity_norm(&g, &u)?,
            residual: res,
            cut_cells: g.classification.cut_elements().len(),
            min_cut_fraction: min_cut_fraction(&g),
            markers: state.markers.len(),
            enclosed_area: g.spline.enclosed_area(),
            mean_constraint: if n >= k {
                mean_constraint(&g, nu, &p)?
            } else {
                0.0
            },
        };
        debug!("{}", diag.csv_row());
        result.diagnostics.push(diag);
        if config
            .snapshot_times
            .iter()
            .any(|&s| (s - t).abs() < 0.5 * tau)
        {
            result
                .snapshots
                .push(InterfaceSnapshot::from_spline(n, t, &g.spline));
        }

        state.history.push_back(u);
        while state.history.len() > k {
            state.history.pop_front();
        }
        result.errors = ErrorNorms {
            eu0: errs.u_l2.sqrt(),
            eu1: sums.u_h1_nu.sqrt(),
            ep0: sums.p_l2_nu.sqrt(),
            ep1: sums.p_h1_nu.sqrt(),
        };
    }
    Ok(())
}

/// Assembles and solves step `n` on geometry `g` given the history in `state`.
fn solve_step(
    g: &StepGeometry,
    prm: &PenaltyParams,
    bdf: &BdfScheme,
    state: &TimeStepState,
    case: &dyn FlowCase,
    n: usize,
    t: f64,
) -> Result<(FieldPair, FieldPair, f64)> {
    let k = bdf.k;
    let tau = t / n as f64;
    let evals: Vec<_> = state.history.iter().map(|f| f.evaluator()).collect();
    let stack = &state.stack;
    // history ring is oldest first: evals[k - j] holds step n - j
    let load = |phase: usize, x: Vec2| -> Result<Vec2> {
        let mut acc = case.forcing(phase, x, t);
        let mut y = x;
        for j in 1..=k {
            y = stack.inverse_map(y, n - j, n - j + 1)?;
            let v = evals[k - j].eval(phase, y, (0, 0))?;
            acc -= bdf.lambda[j] / tau * Vec2::new(v[0], v[1]);
        }
        Ok(acc)
    };
    let interface = |x: Vec2, nrm: Vec2| case.jump_data(x, nrm, t);
    let data = RhsData {
        load: &load,
        interface: &interface,
        residual_load: true,
        penalty_g0: true,
    };
    let lift = boundary_lift(g, |x| case.velocity(2, x, t));
    let sys = assemble_system(g, prm, bdf.lambda[0] / tau, &data, &lift)?;
    let sol = solve_saddle(sys.n, &sys.matrix, &sys.rhs, g.dofs.velocity_unknowns())?;
    Ok((
        FieldPair::velocity_from_solution(&g.dofs, &sol.solution),
        FieldPair::pressure_from_solution(&g.dofs, &sol.solution),
        sol.relative_residual,
    ))
}
