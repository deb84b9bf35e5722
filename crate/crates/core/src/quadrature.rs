//! Quadrature on cut cells, on the interface and on grid edges.
//!
//! Volume rules on a cut cell are built dimension by dimension with the exact
//! spline geometry: the cell is sliced along the outer coordinate at every
//! point where the topology of a slice can change (edge crossings, knots,
//! tangents parallel to the slices). Between two such breakpoints every slice
//! meets the curve in a fixed number of points that move smoothly, so a
//! Gauss rule in the outer coordinate and Gauss rules between consecutive
//! curve points in the inner coordinate are accurate to the rule order. A
//! breakpoint where the curve is tangent to the slice gives square-root
//! behavior, which is removed by a quadratic change of the outer variable.

use log::warn;

use crate::geometry::{BBox, SplineInterface};
use crate::mesh::{Classification, StructuredMesh};
use crate::poly::gauss_legendre;
use crate::{Error, Result, Vec2};

/// Points and weights on `K ∩ Ω_i` for one element and phase.
#[derive(Clone, Debug, Default)]
pub struct VolumeRule {
    pub element: usize,
    pub phase: u8,
    pub points: Vec<Vec2>,
    pub weights: Vec<f64>,
}

/// Points on the interface inside one element, with arclength weights,
/// unit normals pointing out of phase 1 and spline parameters.
#[derive(Clone, Debug, Default)]
pub struct InterfaceRule {
    pub element: usize,
    pub points: Vec<Vec2>,
    pub weights: Vec<f64>,
    pub normals: Vec<Vec2>,
    pub params: Vec<f64>,
}

/// Gauss rule on a full grid edge with the edge normal.
#[derive(Clone, Debug)]
pub struct EdgeRule {
    pub edge: usize,
    pub points: Vec<Vec2>,
    pub weights: Vec<f64>,
    pub normal: Vec2,
}

/// Anything that is a list of weighted points.
pub trait Rule {
    fn points(&self) -> &[Vec2];
    fn weights(&self) -> &[f64];

    fn measure(&self) -> f64 {
        self.weights().iter().sum()
    }

    fn len(&self) -> usize {
        self.weights().len()
    }

    fn is_empty(&self) -> bool {
        self.weights().is_empty()
    }
}

macro_rules! impl_rule {
    ($t:ty) => {
        impl Rule for $t {
            fn points(&self) -> &[Vec2] {
                &self.points
            }
            fn weights(&self) -> &[f64] {
                &self.weights
            }
        }
    };
}
impl_rule!(VolumeRule);
impl_rule!(InterfaceRule);
impl_rule!(EdgeRule);

/// `sum_q w_q f(x_q)`.
pub fn integrate<R: Rule + ?Sized>(rule: &R, f: impl Fn(Vec2) -> f64) -> f64 {
    rule.points()
        .iter()
        .zip(rule.weights())
        .map(|(&x, &w)| w * f(x))
        .sum()
}

/// Rule orders for one discretization.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct QuadratureOptions {
    /// Polynomial degree integrated exactly on uncut cells.
    pub volume_order: usize,
    /// Gauss points per interface piece.
    pub interface_points: usize,
    /// Subdivision depth of the fallback.
    pub max_depth: usize,
}

impl QuadratureOptions {
    pub fn for_degree(k: usize) -> Self {
        Self {
            volume_order: 2 * k + 2,
            interface_points: k + 3,
            max_depth: 12,
        }
    }

    fn gauss_points(&self) -> usize {
        (self.volume_order + 2) / 2
    }
}

/// Tensor Gauss rule with `n x n` points on a box.
pub fn tensor_rule(bb: &BBox, n: usize) -> (Vec<Vec2>, Vec<f64>) {
    let (g, w) = gauss_legendre(n);
    let (dx, dy) = (bb.xmax - bb.xmin, bb.ymax - bb.ymin);
    let mut pts = Vec::with_capacity(n * n);
    let mut wts = Vec::with_capacity(n * n);
    for (gy, wy) in g.iter().zip(&w) {
        for (gx, wx) in g.iter().zip(&w) {
            pts.push(Vec2::new(bb.xmin + gx * dx, bb.ymin + gy * dy));
            wts.push(wx * wy * dx * dy);
        }
    }
    (pts, wts)
}

/// Gauss rule on a grid edge.
pub fn build_edge_rule(mesh: &StructuredMesh, edge: usize, npts: usize) -> EdgeRule {
    let (a, b) = mesh.edge_endpoints(edge);
    let (g, w) = gauss_legendre(npts);
    let len = (b - a).norm();
    EdgeRule {
        edge,
        points: g.iter().map(|&t| a + t * (b - a)).collect(),
        weights: w.iter().map(|&w| w * len).collect(),
        normal: mesh.edge_normal(edge),
    }
}

fn strictly_inside(bb: &BBox, p: Vec2) -> bool {
    p.x > bb.xmin && p.x < bb.xmax && p.y > bb.ymin && p.y < bb.ymax
}

fn candidate_segments(s: &SplineInterface, bb: &BBox) -> Vec<usize> {
    let tol = 1e-14 * (bb.xmax - bb.xmin);
    (0..s.num_segments())
        .filter(|&j| s.segment_bbox_of(j).overlaps(bb, tol))
        .collect()
}

/// Maximal parameter intervals `(segment, s_lo, s_hi)` on which the curve lies in the box.
fn arcs_in_box(s: &SplineInterface, bb: &BBox) -> Vec<(usize, f64, f64)> {
    let mut out = Vec::new();
    for j in candidate_segments(s, bb) {
        let hj = s.segment_length_param(j);
        let mut cuts = vec![0.0, hj];
        for (dim, v) in [(0, bb.xmin), (0, bb.xmax), (1, bb.ymin), (1, bb.ymax)] {
            cuts.extend(s.coordinate_crossings(j, dim, v, 0.0, hj));
        }
        cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for w in cuts.windows(2) {
            if w[1] - w[0] <= 1e-15 * hj {
                continue;
            }
            let mid = s.segment_point(j, 0.5 * (w[0] + w[1]));
            if mid.x >= bb.xmin && mid.x <= bb.xmax && mid.y >= bb.ymin && mid.y <= bb.ymax {
                out.push((j, w[0], w[1]));
            }
        }
    }
    out
}

/// Gauss rule along the interface pieces inside element `element`.
pub fn build_interface_rule(
    mesh: &StructuredMesh,
    element: usize,
    s: &SplineInterface,
    npts: usize,
) -> Result<InterfaceRule> {
    let bb = mesh.element_bbox(element);
    let arcs = arcs_in_box(s, &bb);
    let mut rule = InterfaceRule {
        element,
        ..Default::default()
    };
    if arcs.is_empty() {
        return Ok(rule);
    }
    let n = s.num_segments();
    let disjoint = arcs
        .iter()
        .enumerate()
        .filter(|(i, (j, lo, _))| {
            // an arc starting at a knot continues the previous segment's arc
            let prev = arcs[(i + arcs.len() - 1) % arcs.len()];
            !(*lo == 0.0 && prev.0 == (j + n - 1) % n && prev.2 == s.segment_length_param(prev.0))
        })
        .count()
        .max(1);
    if disjoint > 4 {
        return Err(Error::Quadrature {
            element,
            reason: format!("{disjoint} disjoint interface arcs"),
        });
    }
    let (g, w) = gauss_legendre(npts);
    for (j, lo, hi) in arcs {
        let knot = s.knots()[j];
        for (t, wt) in g.iter().zip(&w) {
            let sl = lo + t * (hi - lo);
            let d = s.segment_deriv(j, sl, 1);
            let len = d.norm();
            let nrm = Vec2::new(d.y, -d.x) / len;
            rule.points.push(s.segment_point(j, sl));
            rule.weights.push(wt * (hi - lo) * len);
            rule.normals
                .push(if s.is_counterclockwise() { nrm } else { -nrm });
            rule.params.push(knot + sl);
        }
    }
    Ok(rule)
}

#[derive(Clone, Copy, Debug)]
struct Breakpoint {
    at: f64,
    tangent: bool,
}

type PhaseRules = [(Vec<Vec2>, Vec<f64>); 2];

/// Sweep quadrature of a box whose corners `(out = lo, in = lo)` and
/// `(out = lo, in = hi)` have the given phases. Returns `None` when the slice
/// topology is not constant between breakpoints or phases disagree.
#[allow(clippy::too_many_arguments)]
fn sweep_box(
    s: &SplineInterface,
    bb: &BBox,
    phase_lo: u8,
    phase_hi: u8,
    d_out: usize,
    n_gauss: usize,
) -> Option<PhaseRules> {
    let d_in = 1 - d_out;
    let lo = Vec2::new(bb.xmin, bb.ymin);
    let hi = Vec2::new(bb.xmax, bb.ymax);
    let (a, b) = (lo[d_out], hi[d_out]);
    let (c, d) = (lo[d_in], hi[d_in]);
    let size = (b - a).max(d - c);
    let segs = candidate_segments(s, bb);

    let mut brk = vec![
        Breakpoint {
            at: a,
            tangent: false,
        },
        Breakpoint {
            at: b,
            tangent: false,
        },
    ];
    let mut low_cross = Vec::new();
    let mut high_cross = Vec::new();
    let inside_closed =
        |p: Vec2| p.x >= bb.xmin && p.x <= bb.xmax && p.y >= bb.ymin && p.y <= bb.ymax;
    for &j in &segs {
        let hj = s.segment_length_param(j);
        let knot = s.node(j);
        if strictly_inside(bb, knot) {
            brk.push(Breakpoint {
                at: knot[d_out],
                tangent: false,
            });
        }
        for t in s.tangent_extrema(j, d_out, 0.0, hj) {
            let p = s.segment_point(j, t);
            if inside_closed(p) {
                brk.push(Breakpoint {
                    at: p[d_out],
                    tangent: true,
                });
            }
        }
        for (val, list) in [(c, &mut low_cross), (d, &mut high_cross)] {
            for t in s.coordinate_crossings(j, d_in, val, 0.0, hj) {
                let x = s.segment_point(j, t)[d_out];
                if x >= a && x <= b {
                    list.push(x);
                    brk.push(Breakpoint {
                        at: x,
                        tangent: false,
                    });
                }
            }
        }
    }
    brk.sort_by(|p, q| p.at.partial_cmp(&q.at).unwrap());
    let mut merged: Vec<Breakpoint> = Vec::with_capacity(brk.len());
    for p in brk {
        let p = Breakpoint {
            at: p.at.clamp(a, b),
            ..p
        };
        match merged.last_mut() {
            Some(last) if p.at - last.at <= 1e-13 * size => last.tangent |= p.tangent,
            _ => merged.push(p),
        }
    }

    let (g_in, w_in) = gauss_legendre(n_gauss);
    let mut out: PhaseRules = [(Vec::new(), Vec::new()), (Vec::new(), Vec::new())];
    let mut roots = Vec::with_capacity(8);
    for win in merged.windows(2) {
        let (xa, xb) = (win[0].at, win[1].at);
        let delta = xb - xa;
        if delta <= 1e-14 * size {
            continue;
        }
        let (ta, tb) = (win[0].tangent, win[1].tangent);
        let n_out = if ta || tb {
            2 * n_gauss + 2
        } else {
            n_gauss + 2
        };
        let (g_out, w_out) = gauss_legendre(n_out);
        let mut count = None;
        for (&u, &wu) in g_out.iter().zip(&w_out) {
            // x = xa + delta * m(u) with m(u) = u^2, 1 - (1 - u)^2 or 3u^2 - 2u^3
            let (m, dm) = match (ta, tb) {
                (false, false) => (u, 1.0),
                (true, false) => (u * u, 2.0 * u),
                (false, true) => (1.0 - (1.0 - u) * (1.0 - u), 2.0 * (1.0 - u)),
                (true, true) => (u * u * (3.0 - 2.0 * u), 6.0 * u * (1.0 - u)),
            };
            let x = xa + delta * m;
            let wx = wu * delta * dm;
            roots.clear();
            for &j in &segs {
                let sb = s.segment_bbox_of(j);
                let (smin, smax) = if d_out == 0 {
                    (sb.xmin, sb.xmax)
                } else {
                    (sb.ymin, sb.ymax)
                };
                if x < smin || x > smax {
                    continue;
                }
                let hj = s.segment_length_param(j);
                for t in s.coordinate_crossings(j, d_out, x, 0.0, hj) {
                    let y = s.segment_point(j, t)[d_in];
                    if y > c && y < d {
                        roots.push(y);
                    }
                }
            }
            roots.sort_by(|p, q| p.partial_cmp(q).unwrap());
            if *count.get_or_insert(roots.len()) != roots.len() {
                return None;
            }
            let flip = |p: u8, k: usize| if k % 2 == 1 { 3 - p } else { p };
            let bottom = flip(phase_lo, low_cross.iter().filter(|&&v| v < x).count());
            let top = flip(phase_hi, high_cross.iter().filter(|&&v| v < x).count());
            if flip(bottom, roots.len()) != top {
                return None;
            }
            let mut phase = bottom;
            let mut y0 = c;
            for y1 in roots.iter().copied().chain(std::iter::once(d)) {
                let len = y1 - y0;
                if len > 0.0 {
                    let slot = &mut out[(phase - 1) as usize];
                    for (&v, &wv) in g_in.iter().zip(&w_in) {
                        let mut p = Vec2::zeros();
                        p[d_out] = x;
                        p[d_in] = y0 + v * len;
                        slot.0.push(p);
                        slot.1.push(wx * wv * len);
                    }
                }
                phase = 3 - phase;
                y0 = y1;
            }
        }
    }
    Some(out)
}

/// Preferred slicing direction: slices across the curve's dominant direction.
fn outer_direction(s: &SplineInterface, bb: &BBox) -> usize {
    let mut tx = 0.0;
    let mut ty = 0.0;
    for (j, lo, hi) in arcs_in_box(s, bb) {
        for i in 0..4 {
            let t = s.segment_deriv(j, lo + (hi - lo) * (i as f64 + 0.5) / 4.0, 1);
            tx += t.x.abs();
            ty += t.y.abs();
        }
    }
    if tx >= ty {
        0
    } else {
        1
    }
}

fn corner_phase(s: &SplineInterface, p: Vec2) -> u8 {
    s.side_of(p).phase() as u8
}

/// Both-direction sweep on a box, recursing into quarters when the sweep fails.
fn sweep_or_subdivide(
    s: &SplineInterface,
    bb: &BBox,
    phases: Option<(u8, u8, u8)>,
    n_gauss: usize,
    depth: usize,
    max_depth: usize,
    out: &mut PhaseRules,
) -> bool {
    // phases: lower-left, upper-left, lower-right
    let (ll, ul, lr) = phases.unwrap_or_else(|| {
        (
            corner_phase(s, Vec2::new(bb.xmin, bb.ymin)),
            corner_phase(s, Vec2::new(bb.xmin, bb.ymax)),
            corner_phase(s, Vec2::new(bb.xmax, bb.ymin)),
        )
    });
    let first = outer_direction(s, bb);
    for d_out in [first, 1 - first] {
        let phase_hi = if d_out == 0 { ul } else { lr };
        if let Some(rules) = sweep_box(s, bb, ll, phase_hi, d_out, n_gauss) {
            for p in 0..2 {
                out[p].0.extend_from_slice(&rules[p].0);
                out[p].1.extend_from_slice(&rules[p].1);
            }
            return true;
        }
    }
    if depth >= max_depth {
        return false;
    }
    let xm = 0.5 * (bb.xmin + bb.xmax);
    let ym = 0.5 * (bb.ymin + bb.ymax);
    let quarters = [
        BBox {
            xmin: bb.xmin,
            xmax: xm,
            ymin: bb.ymin,
            ymax: ym,
        },
        BBox {
            xmin: xm,
            xmax: bb.xmax,
            ymin: bb.ymin,
            ymax: ym,
        },
        BBox {
            xmin: bb.xmin,
            xmax: xm,
            ymin: ym,
            ymax: bb.ymax,
        },
        BBox {
            xmin: xm,
            xmax: bb.xmax,
            ymin: ym,
            ymax: bb.ymax,
        },
    ];
    quarters
        .iter()
        .all(|q| sweep_or_subdivide(s, q, None, n_gauss, depth + 1, max_depth, out))
}

/// Volume rules `[phase 1, phase 2]` on element `element`. Uncut elements get
/// a tensor Gauss rule in their phase and an empty rule for the other one.
pub fn build_volume_rules(
    c: &Classification,
    element: usize,
    s: &SplineInterface,
    opts: &QuadratureOptions,
) -> Result<[VolumeRule; 2]> {
    let mesh = &c.mesh;
    let bb = mesh.element_bbox(element);
    let n = opts.gauss_points();
    let mut rules = [
        VolumeRule {
            element,
            phase: 1,
            ..Default::default()
        },
        VolumeRule {
            element,
            phase: 2,
            ..Default::default()
        },
    ];
    if let Some(ph) = c.element_phase(element) {
        let (p, w) = tensor_rule(&bb, n);
        rules[(ph - 1) as usize].points = p;
        rules[(ph - 1) as usize].weights = w;
        return Ok(rules);
    }
    let cp = c.corner_phases(element);
    let mut out: PhaseRules = [(Vec::new(), Vec::new()), (Vec::new(), Vec::new())];
    if !sweep_or_subdivide(s, &bb, Some((cp[0], cp[3], cp[1])), n, 0, 0, &mut out) {
        warn!("sweep quadrature failed on element {element}; subdividing");
        out = [(Vec::new(), Vec::new()), (Vec::new(), Vec::new())];
        if !sweep_or_subdivide(
            s,
            &bb,
            Some((cp[0], cp[3], cp[1])),
            n,
            0,
            opts.max_depth,
            &mut out,
        ) {
            return Err(Error::Quadrature {
                element,
                reason: "sweep and subdivision both failed".into(),
            });
        }
    }
    for (p, (pts, wts)) in out.into_iter().enumerate() {
        rules[p].points = pts;
        rules[p].weights = wts;
    }
    Ok(rules)
}

/// All rules needed for one time level.
#[derive(Clone, Debug)]
pub struct CutQuadrature {
    pub options: QuadratureOptions,
    /// `volume[e]` for every element in either cover.
    pub volume: Vec<[VolumeRule; 2]>,
    /// Interface rules of the cut elements, indexed by element (empty otherwise).
    pub interface: Vec<InterfaceRule>,
}

impl CutQuadrature {
    pub fn build(
        c: &Classification,
        s: &SplineInterface,
        options: QuadratureOptions,
    ) -> Result<Self> {
        let ne = c.mesh.num_elements();
        let mut volume = Vec::with_capacity(ne);
        let mut interface = Vec::with_capacity(ne);
        for e in 0..ne {
            volume.push(build_volume_rules(c, e, s, &options)?);
            interface.push(if c.cut[e] {
                build_interface_rule(&c.mesh, e, s, options.interface_points)?
            } else {
                InterfaceRule {
                    element: e,
                    ..Default::default()
                }
            });
        }
        Ok(Self {
            options,
            volume,
            interface,
        })
    }

    pub fn phase_rule(&self, element: usize, phase: usize) -> &VolumeRule {
        &self.volume[element][phase - 1]
    }

    /// `∫_{Ω_i} f`.
    pub fn integrate_phase(&self, phase: usize, f: impl Fn(Vec2) -> f64) -> f64 {
        self.volume
            .iter()
            .map(|r| integrate(&r[phase - 1], &f))
            .sum()
    }

    /// `∫_Γ f(x, n)`.
    pub fn integrate_interface(&self, f: impl Fn(Vec2, Vec2) -> f64) -> f64 {
        self.interface
            .iter()
            .map(|r| {
                r.points
                    .iter()
                    .zip(&r.normals)
                    .zip(&r.weights)
                    .map(|((&x, &n), &w)| w * f(x, n))
                    .sum::<f64>()
            })
            .sum()
    }

    /// CSV dump `kind,element,phase,x,y,w`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("kind,element,phase,x,y,w\n");
        for rules in &self.volume {
            for r in rules {
                for (p, w) in r.points.iter().zip(&r.weights) {
                    s.push_str(&format!(
                        "volume,{},{},{:.15e},{:.15e},{:.15e}\n",
                        r.element, r.phase, p.x, p.y, w
                    ));
                }
            }
        }
        for r in &self.interface {
            for (p, w) in r.points.iter().zip(&r.weights) {
                s.push_str(&format!(
                    "interface,{},0,{:.15e},{:.15e},{:.15e}\n",
                    r.element, p.x, p.y, w
                ));
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{fit_periodic_spline, MarkerChain};
    use crate::mesh::classify;
    use std::f64::consts::PI;

    fn setup(n: usize, markers: usize) -> (Classification, SplineInterface) {
        let mesh = StructuredMesh::unit_square(n).unwrap();
        let s =
            fit_periodic_spline(&MarkerChain::circle(Vec2::new(0.5, 0.75), 0.15, markers).unwrap())
                .unwrap();
        let c = classify(&mesh, &s).unwrap();
        (c, s)
    }

    #[test]
    fn uncut_rule_integrates_polynomials() {
        let mesh = StructuredMesh::unit_square(4).unwrap();
        let bb = mesh.element_bbox(5);
        let (p, w) = tensor_rule(&bb, 5);
        let f = |x: Vec2| x.x.powi(9) * x.y.powi(9);
        let q: f64 = p.iter().zip(&w).map(|(x, w)| w * f(*x)).sum();
        let exact =
            (bb.xmax.powi(10) - bb.xmin.powi(10)) * (bb.ymax.powi(10) - bb.ymin.powi(10)) / 100.0;
        assert!((q - exact).abs() < 1e-13);
        assert!((w.iter().sum::<f64>() - 1.0 / 16.0).abs() < 1e-15);
    }

    #[test]
    fn cut_cells_partition_the_element() {
        let (c, s) = setup(16, 256);
        let opts = QuadratureOptions::for_degree(3);
        let h2 = c.mesh.h().powi(2);
        for e in c.cut_elements() {
            let [r1, r2] = build_volume_rules(&c, e, &s, &opts).unwrap();
            assert!((r1.measure() + r2.measure() - h2).abs() < 1e-10 * h2);
            assert!(r1.weights.iter().chain(&r2.weights).all(|&w| w > 0.0));
            for (r, tag) in [(&r1, 1usize), (&r2, 2)] {
                for &p in &r.points {
                    assert_eq!(s.side_of(p).phase(), tag);
                }
            }
        }
    }

    #[test]
    fn disk_area_and_perimeter() {
        let (c, s) = setup(32, 512);
        let q = CutQuadrature::build(&c, &s, QuadratureOptions::for_degree(4)).unwrap();
        let r = 0.15;
        let area = q.integrate_phase(1, |_| 1.0);
        assert!(
            (area - PI * r * r).abs() < 1e-8,
            "area error {:e}",
            area - PI * r * r
        );
        let mx = q.integrate_phase(1, |x| x.x);
        assert!((mx - 0.5 * PI * r * r).abs() < 1e-8);
        let len = q.integrate_interface(|_, _| 1.0);
        assert!(
            (len - 2.0 * PI * r).abs() < 1e-8,
            "length error {:e}",
            len - 2.0 * PI * r
        );
        let green = q.integrate_interface(|x, n| 0.5 * x.dot(&n));
        assert!((green - area).abs() < 1e-10);
        let total = area + q.integrate_phase(2, |_| 1.0);
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn interface_normals_match_spline() {
        let (c, s) = setup(16, 64);
        for e in c.cut_elements() {
            let r = build_interface_rule(&c.mesh, e, &s, 6).unwrap();
            assert!(!r.is_empty());
            for (n, &l) in r.normals.iter().zip(&r.params) {
                assert!((n - s.unit_normal(l).unwrap()).norm() < 1e-13);
            }
        }
    }
}
