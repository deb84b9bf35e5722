//! Marker chains, their periodic cubic-spline reconstruction, and the
//! geometric queries the discretization needs (point side, edge crossings,
//! normals, area).
//!
//! Knot parameters are fixed at the arclength values of the initial curve;
//! markers move with the flow but keep their parameters. Markers inserted by
//! [`redistribute_markers`] get the midpoint parameter of their segment, so
//! knots are in general non-uniform.

use serde::{Deserialize, Serialize};

use crate::poly::{
    cubic, cubic_deriv, gauss_legendre, quadratic_roots_in, sign_change_roots,
    sign_change_roots_directed,
};
use crate::{Error, Result, Vec2};

/// Ordered closed chain of interface markers with their (fixed) knot
/// parameters. `points` holds `J` distinct markers; marker `J` is marker 0.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MarkerChain {
    points: Vec<Vec2>,
    params: Vec<f64>,
    eta: f64,
}

impl MarkerChain {
    pub const MIN_MARKERS: usize = 8;

    /// Builds and validates a chain. `params` has `points.len() + 1` entries,
    /// the last one closing the period.
    pub fn new(points: Vec<Vec2>, params: Vec<f64>, eta: f64) -> Result<Self> {
        let chain = Self {
            points,
            params,
            eta,
        };
        chain.validate()?;
        Ok(chain)
    }

    /// Samples `count` markers at equal parameter spacing from a closed curve
    /// parametrized on `[0, length]`.
    pub fn from_curve(curve: impl Fn(f64) -> Vec2, length: f64, count: usize) -> Result<Self> {
        let eta = length / count as f64;
        let params: Vec<f64> = (0..=count).map(|j| j as f64 * eta).collect();
        let points = params[..count].iter().map(|&l| curve(l)).collect();
        Self::new(points, params, eta)
    }

    /// Counterclockwise circle parametrized by arclength.
    pub fn circle(center: Vec2, radius: f64, count: usize) -> Result<Self> {
        let length = 2.0 * std::f64::consts::PI * radius;
        Self::from_curve(
            |l| center + radius * Vec2::new((l / radius).cos(), (l / radius).sin()),
            length,
            count,
        )
    }

    /// Circle with the marker count chosen so that the segment size is at most `eta`.
    pub fn circle_with_spacing(center: Vec2, radius: f64, eta: f64) -> Result<Self> {
        let length = 2.0 * std::f64::consts::PI * radius;
        let count = ((length / eta).ceil() as usize).max(Self::MIN_MARKERS);
        Self::circle(center, radius, count)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec2] {
        &self.points
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Segment size of the initial partition.
    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// Total parameter length `L`.
    pub fn period(&self) -> f64 {
        self.params[self.points.len()] - self.params[0]
    }

    /// Same knots, moved markers. Used after tracing the markers forward.
    pub fn with_points(&self, points: Vec<Vec2>) -> Result<Self> {
        if points.len() != self.points.len() {
            return Err(Error::InvalidMarkers(format!(
                "expected {} markers, got {}",
                self.points.len(),
                points.len()
            )));
        }
        Self::new(points, self.params.clone(), self.eta)
    }

    pub fn chord(&self, j: usize) -> f64 {
        let n = self.points.len();
        (self.points[(j + 1) % n] - self.points[j % n]).norm()
    }

    fn validate(&self) -> Result<()> {
        let n = self.points.len();
        if n < Self::MIN_MARKERS {
            return Err(Error::InvalidMarkers(format!(
                "need at least {} markers, got {n}",
                Self::MIN_MARKERS
            )));
        }
        if self.params.len() != n + 1 {
            return Err(Error::InvalidMarkers(format!(
                "expected {} parameters, got {}",
                n + 1,
                self.params.len()
            )));
        }
        if !(self.eta > 0.0) {
            return Err(Error::InvalidMarkers(
                "segment size must be positive".into(),
            ));
        }
        if self.params.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidMarkers(
                "parameters must be strictly increasing".into(),
            ));
        }
        if self
            .points
            .iter()
            .any(|p| !p.x.is_finite() || !p.y.is_finite())
        {
            return Err(Error::InvalidMarkers("non-finite marker position".into()));
        }
        let scale = self.period();
        for j in 0..n {
            if self.chord(j) <= 1e-14 * scale {
                return Err(Error::DegenerateGeometry(format!(
                    "markers {j} and {} coincide",
                    (j + 1) % n
                )));
            }
        }
        if let Some((a, b)) = first_self_intersection(&self.points) {
            return Err(Error::SelfIntersection(a, b));
        }
        Ok(())
    }
}

/// Sweep over chord segments sorted by their left end; returns the first
/// pair of non-adjacent intersecting segments.
fn first_self_intersection(points: &[Vec2]) -> Option<(usize, usize)> {
    let n = points.len();
    let seg = |j: usize| (points[j], points[(j + 1) % n]);
    let mut order: Vec<usize> = (0..n).collect();
    let xmin = |j: usize| points[j].x.min(points[(j + 1) % n].x);
    let xmax = |j: usize| points[j].x.max(points[(j + 1) % n].x);
    order.sort_by(|&a, &b| xmin(a).partial_cmp(&xmin(b)).unwrap());
    for (oi, &a) in order.iter().enumerate() {
        let ax = xmax(a);
        for &b in &order[oi + 1..] {
            if xmin(b) > ax {
                break;
            }
            let adjacent = (a + 1) % n == b || (b + 1) % n == a;
            if adjacent {
                continue;
            }
            let (p, q) = seg(a);
            let (r, s) = seg(b);
            if segments_intersect(p, q, r, s) {
                return Some((a.min(b), a.max(b)));
            }
        }
    }
    None
}

fn orient(a: Vec2, b: Vec2, c: Vec2) -> f64 {
    (b - a).perp(&(c - a))
}

fn segments_intersect(p: Vec2, q: Vec2, r: Vec2, s: Vec2) -> bool {
    let d1 = orient(r, s, p);
    let d2 = orient(r, s, q);
    let d3 = orient(p, q, r);
    let d4 = orient(p, q, s);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    let on = |a: Vec2, b: Vec2, c: Vec2, d: f64| {
        d == 0.0
            && c.x >= a.x.min(b.x)
            && c.x <= a.x.max(b.x)
            && c.y >= a.y.min(b.y)
            && c.y <= a.y.max(b.y)
    };
    on(r, s, p, d1) || on(r, s, q, d2) || on(p, q, r, d3) || on(p, q, s, d4)
}

/// Which side of the interface a point lies on.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SideTag {
    /// Enclosed phase.
    Inside1,
    /// Exterior phase.
    Inside2,
    /// Within the on-curve tolerance of the spline.
    OnCurve { distance: f64 },
}

impl SideTag {
    /// Phase index (1 or 2); points on the curve are reported as phase 1.
    pub fn phase(self) -> usize {
        match self {
            SideTag::Inside1 | SideTag::OnCurve { .. } => 1,
            SideTag::Inside2 => 2,
        }
    }
}

/// Axis-aligned box `[xmin, xmax] x [ymin, ymax]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BBox {
    pub xmin: f64,
    pub xmax: f64,
    pub ymin: f64,
    pub ymax: f64,
}

impl BBox {
    pub fn contains(&self, p: Vec2, tol: f64) -> bool {
        p.x >= self.xmin - tol
            && p.x <= self.xmax + tol
            && p.y >= self.ymin - tol
            && p.y <= self.ymax + tol
    }

    pub fn overlaps(&self, o: &BBox, tol: f64) -> bool {
        self.xmin <= o.xmax + tol
            && o.xmin <= self.xmax + tol
            && self.ymin <= o.ymax + tol
            && o.ymin <= self.ymax + tol
    }
}

/// Periodic C² cubic spline through a marker chain.
#[derive(Clone, Debug)]
pub struct SplineInterface {
    knots: Vec<f64>,
    /// Per segment, per coordinate: coefficients in the local variable
    /// `s = l - knots[j]`.
    coef: Vec<[[f64; 4]; 2]>,
    /// Marker positions (segment start points), used for exact endpoint signs.
    nodes: Vec<Vec2>,
    period: f64,
    ccw: bool,
    seg_bbox: Vec<BBox>,
    bbox: BBox,
}

/// Solves the periodic (cyclic) tridiagonal system
/// `a_j x_{j-1} + b_j x_j + c_j x_{j+1} = d_j`, indices modulo `n`.
fn solve_cyclic_tridiagonal(a: &[f64], b: &[f64], c: &[f64], d: &[f64]) -> Vec<f64> {
    let n = b.len();
    // Sherman–Morrison: A = T + u v^T with T tridiagonal.
    let gamma = -b[0];
    let mut bb = b.to_vec();
    bb[0] = b[0] - gamma;
    bb[n - 1] = b[n - 1] - a[0] * c[n - 1] / gamma;
    let solve_tri = |rhs: &[f64]| -> Vec<f64> {
        let mut cp = vec![0.0; n];
        let mut dp = vec![0.0; n];
        cp[0] = c[0] / bb[0];
        dp[0] = rhs[0] / bb[0];
        for i in 1..n {
            let m = bb[i] - a[i] * cp[i - 1];
            cp[i] = if i < n - 1 { c[i] / m } else { 0.0 };
            dp[i] = (rhs[i] - a[i] * dp[i - 1]) / m;
        }
        let mut x = vec![0.0; n];
        x[n - 1] = dp[n - 1];
        for i in (0..n - 1).rev() {
            x[i] = dp[i] - cp[i] * x[i + 1];
        }
        x
    };
    let x = solve_tri(d);
    let mut u = vec![0.0; n];
    u[0] = gamma;
    u[n - 1] = c[n - 1];
    let z = solve_tri(&u);
    let v0 = 1.0;
    let vn = a[0] / gamma;
    let fact = (x[0] * v0 + x[n - 1] * vn) / (1.0 + z[0] * v0 + z[n - 1] * vn);
    x.iter().zip(&z).map(|(xi, zi)| xi - fact * zi).collect()
}

/// Fits the periodic cubic spline through the markers with knots at the
/// chain's parameters.
pub fn fit_periodic_spline(markers: &MarkerChain) -> Result<SplineInterface> {
    markers.validate()?;
    let n = markers.len();
    let p = markers.points();
    let l = markers.params();
    let h: Vec<f64> = (0..n).map(|j| l[j + 1] - l[j]).collect();
    let mut a = vec![0.0; n];
    let mut b = vec![0.0; n];
    let mut c = vec![0.0; n];
    let mut d = [vec![0.0; n], vec![0.0; n]];
    for j in 0..n {
        let hm = h[(j + n - 1) % n];
        let hp = h[j];
        a[j] = hm;
        b[j] = 2.0 * (hm + hp);
        c[j] = hp;
        let slope = (p[(j + 1) % n] - p[j]) / hp - (p[j] - p[(j + n - 1) % n]) / hm;
        d[0][j] = 6.0 * slope.x;
        d[1][j] = 6.0 * slope.y;
    }
    let m = [
        solve_cyclic_tridiagonal(&a, &b, &c, &d[0]),
        solve_cyclic_tridiagonal(&a, &b, &c, &d[1]),
    ];
    let mut coef = Vec::with_capacity(n);
    for j in 0..n {
        let hj = h[j];
        let mut seg = [[0.0; 4]; 2];
        for dim in 0..2 {
            let p0 = p[j][dim];
            let p1 = p[(j + 1) % n][dim];
            let m0 = m[dim][j];
            let m1 = m[dim][(j + 1) % n];
            seg[dim] = [
                p0,
                (p1 - p0) / hj - hj * (2.0 * m0 + m1) / 6.0,
                0.5 * m0,
                (m1 - m0) / (6.0 * hj),
            ];
        }
        coef.push(seg);
    }
    let mut spline = SplineInterface {
        knots: l.to_vec(),
        coef,
        nodes: p.to_vec(),
        period: markers.period(),
        ccw: true,
        seg_bbox: Vec::new(),
        bbox: BBox {
            xmin: 0.0,
            xmax: 0.0,
            ymin: 0.0,
            ymax: 0.0,
        },
    };
    spline.seg_bbox = (0..n).map(|j| spline.segment_bbox(j)).collect();
    spline.bbox = spline
        .seg_bbox
        .iter()
        .fold(spline.seg_bbox[0], |acc, b| BBox {
            xmin: acc.xmin.min(b.xmin),
            xmax: acc.xmax.max(b.xmax),
            ymin: acc.ymin.min(b.ymin),
            ymax: acc.ymax.max(b.ymax),
        });
    spline.ccw = spline.signed_area() > 0.0;
    for j in 0..n {
        let hj = h[j];
        for (s, _) in gauss_legendre(3).0.iter().map(|&t| (t * hj, ())) {
            if spline.segment_deriv(j, s, 1).norm() < 1e-14 {
                return Err(Error::DegenerateGeometry(format!(
                    "spline segment {j} is singular"
                )));
            }
        }
    }
    Ok(spline)
}

impl SplineInterface {
    pub fn num_segments(&self) -> usize {
        self.coef.len()
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn is_counterclockwise(&self) -> bool {
        self.ccw
    }

    pub fn bbox(&self) -> BBox {
        self.bbox
    }

    pub fn segment_bbox_of(&self, j: usize) -> BBox {
        self.seg_bbox[j]
    }

    pub fn segment_length_param(&self, j: usize) -> f64 {
        self.knots[j + 1] - self.knots[j]
    }

    /// Local polynomial coefficients of segment `j` for coordinate `dim`.
    pub fn segment_coefficients(&self, j: usize, dim: usize) -> &[f64; 4] {
        &self.coef[j][dim]
    }

    /// Start marker of segment `j` (exact, not evaluated).
    pub fn node(&self, j: usize) -> Vec2 {
        self.nodes[j % self.nodes.len()]
    }

    fn segment_bbox(&self, j: usize) -> BBox {
        let hj = self.segment_length_param(j);
        let mut bb = [0.0f64; 4];
        for dim in 0..2 {
            let c = &self.coef[j][dim];
            let mut lo = self.nodes[j][dim].min(self.nodes[(j + 1) % self.nodes.len()][dim]);
            let mut hi = self.nodes[j][dim].max(self.nodes[(j + 1) % self.nodes.len()][dim]);
            for s in quadratic_roots_in(c[1], 2.0 * c[2], 3.0 * c[3], 0.0, hj) {
                let v = cubic(c, s);
                lo = lo.min(v);
                hi = hi.max(v);
            }
            bb[2 * dim] = lo;
            bb[2 * dim + 1] = hi;
        }
        BBox {
            xmin: bb[0],
            xmax: bb[1],
            ymin: bb[2],
            ymax: bb[3],
        }
    }

    /// Segment index and local offset for a parameter, reduced modulo the period.
    pub fn locate(&self, l: f64) -> (usize, f64) {
        let l0 = self.knots[0];
        let lr = l0 + (l - l0).rem_euclid(self.period);
        let n = self.coef.len();
        let j = self
            .knots
            .partition_point(|&k| k <= lr)
            .saturating_sub(1)
            .min(n - 1);
        (j, lr - self.knots[j])
    }

    pub fn segment_point(&self, j: usize, s: f64) -> Vec2 {
        Vec2::new(cubic(&self.coef[j][0], s), cubic(&self.coef[j][1], s))
    }

    pub fn segment_deriv(&self, j: usize, s: f64, order: usize) -> Vec2 {
        let f = |c: &[f64; 4]| match order {
            0 => cubic(c, s),
            1 => cubic_deriv(c, s),
            2 => 6.0 * c[3] * s + 2.0 * c[2],
            3 => 6.0 * c[3],
            _ => 0.0,
        };
        Vec2::new(f(&self.coef[j][0]), f(&self.coef[j][1]))
    }

    /// Value (order 0) or derivative (order 1, 2) of the curve at parameter `l`.
    pub fn eval(&self, l: f64, order: usize) -> Vec2 {
        let (j, s) = self.locate(l);
        self.segment_deriv(j, s, order)
    }

    /// Unit normal pointing out of the enclosed phase.
    pub fn unit_normal(&self, l: f64) -> Result<Vec2> {
        let t = self.eval(l, 1);
        let len = t.norm();
        if len < 1e-14 {
            return Err(Error::DegenerateGeometry(format!(
                "vanishing tangent at l = {l}"
            )));
        }
        let n = Vec2::new(t.y, -t.x) / len;
        Ok(if self.ccw { n } else { -n })
    }

    /// Signed enclosed area (positive for counterclockwise orientation).
    pub fn signed_area(&self) -> f64 {
        let (gp, gw) = gauss_legendre(3);
        let mut area = 0.0;
        for j in 0..self.num_segments() {
            let hj = self.segment_length_param(j);
            for (t, w) in gp.iter().zip(&gw) {
                let s = t * hj;
                let p = self.segment_point(j, s);
                let d = self.segment_deriv(j, s, 1);
                area += 0.5 * w * hj * (p.x * d.y - p.y * d.x);
            }
        }
        area
    }

    pub fn enclosed_area(&self) -> f64 {
        self.signed_area().abs()
    }

    /// Arclength of the spline (Gauss quadrature of `|chi'|` per segment).
    pub fn length(&self) -> f64 {
        let (gp, gw) = gauss_legendre(8);
        (0..self.num_segments())
            .map(|j| {
                let hj = self.segment_length_param(j);
                gp.iter()
                    .zip(&gw)
                    .map(|(t, w)| w * hj * self.segment_deriv(j, t * hj, 1).norm())
                    .sum::<f64>()
            })
            .sum()
    }

    /// Distance from `x` to segment `j`, with the minimizing local offset.
    fn segment_distance(&self, j: usize, x: Vec2) -> (f64, f64) {
        let hj = self.segment_length_param(j);
        let mut best = (f64::INFINITY, 0.0);
        for i in 0..=16 {
            let s = hj * i as f64 / 16.0;
            let d = (self.segment_point(j, s) - x).norm();
            if d < best.0 {
                best = (d, s);
            }
        }
        let mut s = best.1;
        for _ in 0..30 {
            let r = self.segment_point(j, s) - x;
            let d1 = self.segment_deriv(j, s, 1);
            let d2 = self.segment_deriv(j, s, 2);
            let g = r.dot(&d1);
            let gp = d1.dot(&d1) + r.dot(&d2);
            if gp <= 0.0 {
                break;
            }
            let sn = (s - g / gp).clamp(0.0, hj);
            if (sn - s).abs() < 1e-15 * hj.max(1.0) {
                s = sn;
                break;
            }
            s = sn;
        }
        let d = (self.segment_point(j, s) - x).norm();
        if d < best.0 {
            (d, s)
        } else {
            best
        }
    }

    /// Euclidean distance from `x` to the curve and the closest parameter.
    pub fn distance(&self, x: Vec2) -> (f64, f64) {
        let mut best = (f64::INFINITY, 0.0);
        // Visit segments by increasing box distance; prune once the box is farther than the best hit.
        let mut order: Vec<(f64, usize)> = self
            .seg_bbox
            .iter()
            .enumerate()
            .map(|(j, b)| {
                let dx = (b.xmin - x.x).max(0.0).max(x.x - b.xmax);
                let dy = (b.ymin - x.y).max(0.0).max(x.y - b.ymax);
                ((dx * dx + dy * dy).sqrt(), j)
            })
            .collect();
        order.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        for (bd, j) in order {
            if bd > best.0 {
                break;
            }
            let (d, s) = self.segment_distance(j, x);
            if d < best.0 {
                best = (d, self.knots[j] + s);
            }
        }
        best
    }

    /// Winding number of the curve about `x`, computed from exact crossings of
    /// the horizontal ray `{x + t e_1 : t > 0}` with the cubic pieces.
    pub fn winding_number(&self, x: Vec2) -> i32 {
        let mut w = 0;
        let n = self.num_segments();
        for j in 0..n {
            let bb = &self.seg_bbox[j];
            if bb.xmax < x.x || bb.ymin > x.y || bb.ymax < x.y {
                continue;
            }
            let cy = &self.coef[j][1];
            let c = [cy[0] - x.y, cy[1], cy[2], cy[3]];
            let f0 = self.nodes[j].y - x.y;
            let f1 = self.nodes[(j + 1) % n].y - x.y;
            for (s, up) in sign_change_roots_directed(&c, 0.0, self.segment_length_param(j), f0, f1)
            {
                if cubic(&self.coef[j][0], s) > x.x {
                    w += if up { 1 } else { -1 };
                }
            }
        }
        w
    }

    /// Side of the curve with an explicit on-curve tolerance.
    pub fn side_of_with_tol(&self, x: Vec2, tol_on: f64) -> SideTag {
        if !self.bbox.contains(x, tol_on) {
            return SideTag::Inside2;
        }
        for j in 0..self.num_segments() {
            if self.seg_bbox[j].contains(x, tol_on) {
                let (d, _) = self.segment_distance(j, x);
                if d < tol_on {
                    return SideTag::OnCurve { distance: d };
                }
            }
        }
        if self.winding_number(x) != 0 {
            SideTag::Inside1
        } else {
            SideTag::Inside2
        }
    }

    /// Side of the curve, with the on-curve tolerance scaled to the unit domain.
    pub fn side_of(&self, x: Vec2) -> SideTag {
        self.side_of_with_tol(x, 1e-12)
    }

    /// Crossings of the segment `[a, b]` with the curve, sorted by curve
    /// parameter. Crossings are transversal sign changes of the signed
    /// distance to the supporting line, with zero counted as positive, so a
    /// tangential touch produces either none or two crossings. An intersection
    /// exactly at `b` is attributed to the edge starting there.
    pub fn edge_intersections(&self, a: Vec2, b: Vec2) -> Result<Vec<(f64, Vec2)>> {
        let d = b - a;
        let len2 = d.norm_squared();
        if len2 == 0.0 {
            return Err(Error::DegenerateGeometry("zero-length edge".into()));
        }
        let len = len2.sqrt();
        let nrm = Vec2::new(-d.y, d.x) / len;
        let ebox = BBox {
            xmin: a.x.min(b.x),
            xmax: a.x.max(b.x),
            ymin: a.y.min(b.y),
            ymax: a.y.max(b.y),
        };
        let tol = 1e-14 * (1.0 + len);
        let mut out = Vec::new();
        let n = self.num_segments();
        if !self.bbox.overlaps(&ebox, tol) {
            return Ok(out);
        }
        for j in 0..n {
            if !self.seg_bbox[j].overlaps(&ebox, tol) {
                continue;
            }
            let cx = &self.coef[j][0];
            let cy = &self.coef[j][1];
            let c = [
                (cx[0] - a.x) * nrm.x + (cy[0] - a.y) * nrm.y,
                cx[1] * nrm.x + cy[1] * nrm.y,
                cx[2] * nrm.x + cy[2] * nrm.y,
                cx[3] * nrm.x + cy[3] * nrm.y,
            ];
            let f0 = (self.nodes[j] - a).dot(&nrm);
            let f1 = (self.nodes[(j + 1) % n] - a).dot(&nrm);
            let hj = self.segment_length_param(j);
            for s in sign_change_roots(&c, 0.0, hj, f0, f1) {
                let p = self.segment_point(j, s);
                let t = (p - a).dot(&d) / len2;
                if !(0.0..1.0).contains(&t) {
                    continue;
                }
                let resid = cubic(&c, s).abs();
                let scale = c.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-300);
                if resid > 1e-13 * scale.max(1.0) {
                    return Err(Error::RootFinding(format!(
                        "edge crossing on segment {j}: residual {resid:.3e} at s = {s:.6e}"
                    )));
                }
                out.push((self.knots[j] + s, p));
            }
        }
        out.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
        Ok(out)
    }

    /// Roots `s` on segment `j` where coordinate `dim` of the curve crosses `value`.
    pub fn coordinate_crossings(
        &self,
        j: usize,
        dim: usize,
        value: f64,
        s_lo: f64,
        s_hi: f64,
    ) -> Vec<f64> {
        let cc = &self.coef[j][dim];
        let c = [cc[0] - value, cc[1], cc[2], cc[3]];
        let hj = self.segment_length_param(j);
        let f_lo = if s_lo == 0.0 {
            self.nodes[j][dim] - value
        } else {
            cubic(&c, s_lo)
        };
        let f_hi = if s_hi == hj {
            self.nodes[(j + 1) % self.nodes.len()][dim] - value
        } else {
            cubic(&c, s_hi)
        };
        sign_change_roots(&c, s_lo, s_hi, f_lo, f_hi)
    }

    /// Local offsets in `(s_lo, s_hi)` on segment `j` where the tangent is
    /// parallel to the other axis (derivative of coordinate `dim` vanishes).
    pub fn tangent_extrema(&self, j: usize, dim: usize, s_lo: f64, s_hi: f64) -> Vec<f64> {
        let c = &self.coef[j][dim];
        quadratic_roots_in(c[1], 2.0 * c[2], 3.0 * c[3], s_lo, s_hi)
    }

    /// Dense samples `(l, point)`, `per_segment` points per spline segment.
    pub fn sample(&self, per_segment: usize) -> Vec<(f64, Vec2)> {
        let mut out = Vec::with_capacity(self.num_segments() * per_segment + 1);
        for j in 0..self.num_segments() {
            let hj = self.segment_length_param(j);
            for i in 0..per_segment {
                let s = hj * i as f64 / per_segment as f64;
                out.push((self.knots[j] + s, self.segment_point(j, s)));
            }
        }
        out.push((self.knots[0] + self.period, self.nodes[0]));
        out
    }

    /// CSV polyline with columns `l,x,y`.
    pub fn to_csv(&self, per_segment: usize) -> String {
        let mut s = String::from("l,x,y\n");
        for (l, p) in self.sample(per_segment) {
            s.push_str(&format!("{l:.12e},{:.12e},{:.12e}\n", p.x, p.y));
        }
        s
    }

    /// Single-path SVG of the curve over the square `[origin, origin + side]^2`.
    pub fn to_svg(&self, origin: Vec2, side: f64, pixels: f64) -> String {
        let scale = pixels / side;
        let mut d = String::new();
        for (i, (_, p)) in self.sample(8).iter().enumerate() {
            let x = (p.x - origin.x) * scale;
            let y = pixels - (p.y - origin.y) * scale;
            d.push_str(&format!("{}{x:.3},{y:.3} ", if i == 0 { "M" } else { "L" }));
        }
        d.push('Z');
        format!(
            "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n\
             <svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{pixels}\" height=\"{pixels}\" viewBox=\"0 0 {pixels} {pixels}\">\n\
             <rect x=\"0\" y=\"0\" width=\"{pixels}\" height=\"{pixels}\" fill=\"white\" stroke=\"black\"/>\n\
             <path d=\"{d}\" fill=\"#f5d76e\" stroke=\"#b03a2e\" stroke-width=\"1\"/>\n</svg>\n"
        )
    }
}

/// Chord-length based marker redistribution: midpoints are inserted (from
/// the spline) on segments longer than `2 * target_eta` until none remain,
/// then every other marker is dropped where two consecutive chords are both
/// shorter than `target_eta / 2`. Marker 0 is never removed.
pub fn redistribute_markers(markers: &MarkerChain, target_eta: f64) -> Result<MarkerChain> {
    let mut chain = markers.clone();
    for _ in 0..64 {
        let n = chain.len();
        if (0..n).all(|j| chain.chord(j) <= 2.0 * target_eta) {
            break;
        }
        let spline = fit_periodic_spline(&chain)?;
        let mut pts = Vec::with_capacity(n + 8);
        let mut params = Vec::with_capacity(n + 9);
        for j in 0..n {
            pts.push(chain.points[j]);
            params.push(chain.params[j]);
            if chain.chord(j) > 2.0 * target_eta {
                let lm = 0.5 * (chain.params[j] + chain.params[j + 1]);
                pts.push(spline.eval(lm, 0));
                params.push(lm);
            }
        }
        params.push(chain.params[n]);
        chain = MarkerChain::new(pts, params, chain.eta)?;
    }

    let n = chain.len();
    let mut keep = vec![true; n];
    let mut j = 1;
    while j < n {
        let short_before = (chain.points[j] - chain.points[j - 1]).norm() < 0.5 * target_eta;
        let short_after = (chain.points[(j + 1) % n] - chain.points[j]).norm() < 0.5 * target_eta;
        if short_before && short_after {
            keep[j] = false;
            j += 2;
        } else {
            j += 1;
        }
    }
    if keep.iter().all(|&k| k) {
        return Ok(chain);
    }
    let remaining = keep.iter().filter(|&&k| k).count();
    if remaining < MarkerChain::MIN_MARKERS {
        return Err(Error::InvalidMarkers(format!(
            "redistribution would leave {remaining} markers (minimum {})",
            MarkerChain::MIN_MARKERS
        )));
    }
    let mut pts = Vec::with_capacity(remaining);
    let mut params = Vec::with_capacity(remaining + 1);
    for j in 0..n {
        if keep[j] {
            pts.push(chain.points[j]);
            params.push(chain.params[j]);
        }
    }
    params.push(chain.params[n]);
    MarkerChain::new(pts, params, chain.eta)
}
