//! The fixed Cartesian background grid and its classification against the
//! current interface.
//!
//! Indexing: element `(i, j)` (column `i`, row `j`) is `j * n + i`. Vertices
//! are `(i, j)` with `0 <= i, j <= n`. Horizontal edges come first,
//! `(i, j) -> (i + 1, j)` having index `j * n + i`; vertical edges
//! `(i, j) -> (i, j + 1)` follow with index `n * (n + 1) + j * (n + 1) + i`.

use std::collections::VecDeque;

use log::warn;

use crate::geometry::{BBox, SplineInterface};
use crate::{Error, Result, Vec2};

/// Uniform grid of `n x n` square cells on `[origin, origin + side]^2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StructuredMesh {
    pub origin: Vec2,
    pub side: f64,
    pub n: usize,
}

/// Local edge numbering of an element: bottom, right, top, left.
pub const LOCAL_EDGES: [&str; 4] = ["bottom", "right", "top", "left"];

impl StructuredMesh {
    pub fn new(origin: Vec2, side: f64, n: usize) -> Result<Self> {
        if n == 0 || !(side > 0.0) {
            return Err(Error::Config(format!(
                "invalid mesh: side {side}, {n} cells per side"
            )));
        }
        Ok(Self { origin, side, n })
    }

    /// The unit square with `n` cells per side.
    pub fn unit_square(n: usize) -> Result<Self> {
        Self::new(Vec2::zeros(), 1.0, n)
    }

    pub fn h(&self) -> f64 {
        self.side / self.n as f64
    }

    pub fn num_elements(&self) -> usize {
        self.n * self.n
    }

    pub fn num_edges(&self) -> usize {
        2 * self.n * (self.n + 1)
    }

    pub fn element_index(&self, i: usize, j: usize) -> usize {
        j * self.n + i
    }

    pub fn element_ij(&self, e: usize) -> (usize, usize) {
        (e % self.n, e / self.n)
    }

    pub fn vertex(&self, i: usize, j: usize) -> Vec2 {
        let h = self.h();
        self.origin + Vec2::new(i as f64 * h, j as f64 * h)
    }

    /// Lower-left corner of element `e`.
    pub fn element_origin(&self, e: usize) -> Vec2 {
        let (i, j) = self.element_ij(e);
        self.vertex(i, j)
    }

    pub fn element_center(&self, e: usize) -> Vec2 {
        self.element_origin(e) + Vec2::new(0.5, 0.5) * self.h()
    }

    pub fn element_bbox(&self, e: usize) -> BBox {
        let o = self.element_origin(e);
        let h = self.h();
        BBox {
            xmin: o.x,
            xmax: o.x + h,
            ymin: o.y,
            ymax: o.y + h,
        }
    }

    /// Corners of element `e` counterclockwise from the lower left.
    pub fn element_corners(&self, e: usize) -> [Vec2; 4] {
        let (i, j) = self.element_ij(e);
        [
            self.vertex(i, j),
            self.vertex(i + 1, j),
            self.vertex(i + 1, j + 1),
            self.vertex(i, j + 1),
        ]
    }

    pub fn horizontal_edge(&self, i: usize, j: usize) -> usize {
        j * self.n + i
    }

    pub fn vertical_edge(&self, i: usize, j: usize) -> usize {
        self.n * (self.n + 1) + j * (self.n + 1) + i
    }

    pub fn is_horizontal(&self, edge: usize) -> bool {
        edge < self.n * (self.n + 1)
    }

    /// Edges of element `e` in local order bottom, right, top, left.
    pub fn element_edges(&self, e: usize) -> [usize; 4] {
        let (i, j) = self.element_ij(e);
        [
            self.horizontal_edge(i, j),
            self.vertical_edge(i + 1, j),
            self.horizontal_edge(i, j + 1),
            self.vertical_edge(i, j),
        ]
    }

    /// Start and end vertex of an edge in its canonical orientation
    /// (left to right, bottom to top).
    pub fn edge_endpoints(&self, edge: usize) -> (Vec2, Vec2) {
        let n = self.n;
        if self.is_horizontal(edge) {
            let (i, j) = (edge % n, edge / n);
            (self.vertex(i, j), self.vertex(i + 1, j))
        } else {
            let r = edge - n * (n + 1);
            let (i, j) = (r % (n + 1), r / (n + 1));
            (self.vertex(i, j), self.vertex(i, j + 1))
        }
    }

    /// Unit normal of an edge: `e_2` for horizontal edges, `e_1` for vertical ones.
    pub fn edge_normal(&self, edge: usize) -> Vec2 {
        if self.is_horizontal(edge) {
            Vec2::new(0.0, 1.0)
        } else {
            Vec2::new(1.0, 0.0)
        }
    }

    /// The (up to two) elements sharing an edge: `(below/left, above/right)`.
    pub fn edge_elements(&self, edge: usize) -> (Option<usize>, Option<usize>) {
        let n = self.n;
        if self.is_horizontal(edge) {
            let (i, j) = (edge % n, edge / n);
            let lo = (j > 0).then(|| self.element_index(i, j - 1));
            let hi = (j < n).then(|| self.element_index(i, j));
            (lo, hi)
        } else {
            let r = edge - n * (n + 1);
            let (i, j) = (r % (n + 1), r / (n + 1));
            let lo = (i > 0).then(|| self.element_index(i - 1, j));
            let hi = (i < n).then(|| self.element_index(i, j));
            (lo, hi)
        }
    }

    pub fn is_interior_edge(&self, edge: usize) -> bool {
        let (a, b) = self.edge_elements(edge);
        a.is_some() && b.is_some()
    }

    /// 4-neighbors of an element.
    pub fn neighbors(&self, e: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.element_edges(e).into_iter().filter_map(move |edge| {
            let (a, b) = self.edge_elements(edge);
            match (a, b) {
                (Some(a), Some(b)) => Some((edge, if a == e { b } else { a })),
                _ => None,
            }
        })
    }

    /// Element containing `x` (cells half-open on the upper/right side, the
    /// last row/column closed).
    pub fn locate(&self, x: Vec2) -> Option<usize> {
        let h = self.h();
        let fx = (x.x - self.origin.x) / h;
        let fy = (x.y - self.origin.y) / h;
        let n = self.n as f64;
        if !(fx >= 0.0 && fx <= n && fy >= 0.0 && fy <= n) {
            return None;
        }
        let i = (fx.floor() as usize).min(self.n - 1);
        let j = (fy.floor() as usize).min(self.n - 1);
        Some(self.element_index(i, j))
    }
}

/// Classification of the grid against one interface position.
#[derive(Clone, Debug)]
pub struct Classification {
    pub mesh: StructuredMesh,
    /// Interface crossings per edge, `(spline parameter, point)`, sorted by parameter.
    pub edge_crossings: Vec<Vec<(f64, Vec2)>>,
    /// Phase (1 or 2) per vertex, row-major `(n + 1)^2`.
    pub vertex_phase: Vec<u8>,
    pub cut: Vec<bool>,
    /// `cover[p][e]`: element `e` belongs to the cover of phase `p + 1`.
    pub cover: [Vec<bool>; 2],
    /// `ghost[p][edge]`: the edge carries the ghost penalty of phase `p + 1`.
    pub ghost: [Vec<bool>; 2],
}

fn check_phase(phase: usize) -> usize {
    assert!(
        phase == 1 || phase == 2,
        "phase must be 1 or 2, got {phase}"
    );
    phase - 1
}

impl Classification {
    pub fn vertex_phase(&self, i: usize, j: usize) -> u8 {
        self.vertex_phase[j * (self.mesh.n + 1) + i]
    }

    /// Phases of the corners of `e`, counterclockwise from the lower left.
    pub fn corner_phases(&self, e: usize) -> [u8; 4] {
        let (i, j) = self.mesh.element_ij(e);
        [
            self.vertex_phase(i, j),
            self.vertex_phase(i + 1, j),
            self.vertex_phase(i + 1, j + 1),
            self.vertex_phase(i, j + 1),
        ]
    }

    /// Phase of an uncut element.
    pub fn element_phase(&self, e: usize) -> Option<u8> {
        (!self.cut[e]).then(|| self.corner_phases(e)[0])
    }

    pub fn in_cover(&self, e: usize, phase: usize) -> bool {
        self.cover[check_phase(phase)][e]
    }

    /// Element belongs to the interior set (cover minus cut elements) of a phase.
    pub fn in_interior(&self, e: usize, phase: usize) -> bool {
        self.in_cover(e, phase) && !self.cut[e]
    }

    pub fn cut_elements(&self) -> Vec<usize> {
        (0..self.cut.len()).filter(|&e| self.cut[e]).collect()
    }

    pub fn cover_elements(&self, phase: usize) -> Vec<usize> {
        let p = check_phase(phase);
        (0..self.cut.len()).filter(|&e| self.cover[p][e]).collect()
    }

    pub fn interior_elements(&self, phase: usize) -> Vec<usize> {
        (0..self.cut.len())
            .filter(|&e| self.in_interior(e, phase))
            .collect()
    }

    pub fn ghost_edges(&self, phase: usize) -> Vec<usize> {
        ghost_edges(self, phase)
    }

    /// Per-element class raster: 0 interior of phase 1, 1 cut, 2 interior of phase 2.
    pub fn class_raster(&self) -> Vec<u8> {
        (0..self.cut.len())
            .map(|e| match self.element_phase(e) {
                None => 1,
                Some(1) => 0,
                Some(_) => 2,
            })
            .collect()
    }

    /// Binary PGM image of the class raster (top row first).
    pub fn to_pgm(&self) -> Vec<u8> {
        let n = self.mesh.n;
        let raster = self.class_raster();
        let mut out = format!("P5\n{n} {n}\n255\n").into_bytes();
        for j in (0..n).rev() {
            for i in 0..n {
                out.push(match raster[self.mesh.element_index(i, j)] {
                    0 => 0,
                    1 => 128,
                    _ => 255,
                });
            }
        }
        out
    }

    /// CSV `i,j,class` of the class raster.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("i,j,class\n");
        for (e, c) in self.class_raster().iter().enumerate() {
            let (i, j) = self.mesh.element_ij(e);
            s.push_str(&format!("{i},{j},{c}\n"));
        }
        s
    }
}

/// Classifies the grid against the interface.
///
/// Vertex phases are propagated along each grid row from the domain boundary
/// (phase 2) by the parity of crossings on horizontal edges and then checked
/// against the parity on vertical edges. An element is cut when the curve
/// crosses any of its edges.
pub fn classify(mesh: &StructuredMesh, s: &SplineInterface) -> Result<Classification> {
    let n = mesh.n;
    let dom = BBox {
        xmin: mesh.origin.x,
        xmax: mesh.origin.x + mesh.side,
        ymin: mesh.origin.y,
        ymax: mesh.origin.y + mesh.side,
    };
    let sb = s.bbox();
    if !(sb.xmin > dom.xmin && sb.xmax < dom.xmax && sb.ymin > dom.ymin && sb.ymax < dom.ymax) {
        return Err(Error::Classification(
            "interface touches or leaves the domain boundary".into(),
        ));
    }

    let mut edge_crossings = vec![Vec::new(); mesh.num_edges()];
    for (edge, slot) in edge_crossings.iter_mut().enumerate() {
        let (a, b) = mesh.edge_endpoints(edge);
        let eb = BBox {
            xmin: a.x,
            xmax: b.x,
            ymin: a.y,
            ymax: b.y,
        };
        if sb.overlaps(&eb, 0.0) {
            *slot = s.edge_intersections(a, b)?;
        }
    }
    if edge_crossings.iter().all(|c| c.is_empty()) {
        return Err(Error::Classification(
            "interface crosses no grid edge (grid too coarse)".into(),
        ));
    }

    let mut vertex_phase = vec![2u8; (n + 1) * (n + 1)];
    for j in 0..=n {
        for i in 0..n {
            let odd = edge_crossings[mesh.horizontal_edge(i, j)].len() % 2 == 1;
            let p = vertex_phase[j * (n + 1) + i];
            vertex_phase[j * (n + 1) + i + 1] = if odd { 3 - p } else { p };
        }
        if vertex_phase[j * (n + 1) + n] != 2 {
            return Err(Error::Classification(format!(
                "odd crossing count along grid row {j}"
            )));
        }
    }
    for j in 0..n {
        for i in 0..=n {
            let odd = edge_crossings[mesh.vertical_edge(i, j)].len() % 2 == 1;
            let lo = vertex_phase[j * (n + 1) + i];
            let hi = vertex_phase[(j + 1) * (n + 1) + i];
            if (lo != hi) != odd {
                return Err(Error::Classification(format!(
                    "inconsistent crossing parity on vertical edge ({i}, {j})"
                )));
            }
        }
    }

    let cut: Vec<bool> = (0..mesh.num_elements())
        .map(|e| {
            mesh.element_edges(e)
                .iter()
                .any(|&ed| !edge_crossings[ed].is_empty())
        })
        .collect();
    for ed in 0..mesh.num_edges() {
        if !mesh.is_interior_edge(ed) && !edge_crossings[ed].is_empty() {
            return Err(Error::Classification(format!(
                "interface crosses the boundary edge {ed}"
            )));
        }
    }

    let mut c = Classification {
        mesh: *mesh,
        edge_crossings,
        vertex_phase,
        cut,
        cover: [
            vec![false; mesh.num_elements()],
            vec![false; mesh.num_elements()],
        ],
        ghost: [vec![false; mesh.num_edges()], vec![false; mesh.num_edges()]],
    };
    for e in 0..mesh.num_elements() {
        let ph = c.corner_phases(e);
        for p in 0..2 {
            c.cover[p][e] = c.cut[e] || ph.iter().all(|&v| v as usize == p + 1);
        }
    }
    for p in 0..2 {
        for edge in 0..mesh.num_edges() {
            if let (Some(a), Some(b)) = mesh.edge_elements(edge) {
                c.ghost[p][edge] = c.cover[p][a] && c.cover[p][b] && (c.cut[a] || c.cut[b]);
            }
        }
    }
    Ok(c)
}

/// Ghost-penalty edges of a phase: interior grid edges of cut elements
/// whose both neighbors lie in the phase's cover.
pub fn ghost_edges(c: &Classification, phase: usize) -> Vec<usize> {
    let p = check_phase(phase);
    (0..c.ghost[p].len()).filter(|&e| c.ghost[p][e]).collect()
}

/// Outcome of [`check_mesh_assumptions`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MeshReport {
    /// Longest chain of elements (counting both ends) linking a cut element
    /// through ghost edges to an uncut element of the same phase.
    pub max_chain_len: usize,
    /// Uncut elements with more than two edges on the boundary of the interior set.
    pub boundary_edge_violations: usize,
}

/// Checks the two structural mesh assumptions behind the stability analysis.
/// Violations are reported (and logged); a cut element that cannot be linked
/// to the interior of a phase at all is an error.
pub fn check_mesh_assumptions(c: &Classification) -> Result<MeshReport> {
    let mesh = &c.mesh;
    let mut max_chain = 1;
    let mut violations = 0;
    for phase in 1..=2 {
        let p = phase - 1;
        // multi-source BFS from the interior elements
        let mut dist = vec![usize::MAX; mesh.num_elements()];
        let mut queue = VecDeque::new();
        for e in 0..mesh.num_elements() {
            if c.in_interior(e, phase) {
                dist[e] = 1;
                queue.push_back(e);
            }
        }
        while let Some(e) = queue.pop_front() {
            for (edge, nb) in mesh.neighbors(e) {
                if c.ghost[p][edge] && dist[nb] == usize::MAX {
                    dist[nb] = dist[e] + 1;
                    queue.push_back(nb);
                }
            }
        }
        for e in c.cut_elements() {
            if dist[e] == usize::MAX {
                let (i, j) = mesh.element_ij(e);
                return Err(Error::Classification(format!(
                    "cut element ({i}, {j}) is not connected to the interior of phase {phase}"
                )));
            }
            max_chain = max_chain.max(dist[e]);
        }
        for e in 0..mesh.num_elements() {
            if !c.in_interior(e, phase) {
                continue;
            }
            let on_boundary = mesh
                .element_edges(e)
                .iter()
                .filter(|&&edge| match mesh.edge_elements(edge) {
                    (Some(a), Some(b)) => {
                        let other = if a == e { b } else { a };
                        !c.in_interior(other, phase)
                    }
                    _ => true,
                })
                .count();
            if on_boundary > 2 {
                violations += 1;
            }
        }
    }
    if violations > 0 {
        warn!("{violations} uncut elements have more than two edges on the interior-set boundary");
    }
    Ok(MeshReport {
        max_chain_len: max_chain,
        boundary_edge_violations: violations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{fit_periodic_spline, MarkerChain};

    fn disk(n: usize) -> Classification {
        let mesh = StructuredMesh::unit_square(n).unwrap();
        let s = fit_periodic_spline(&MarkerChain::circle(Vec2::new(0.5, 0.75), 0.15, 128).unwrap())
            .unwrap();
        classify(&mesh, &s).unwrap()
    }

    #[test]
    fn indexing_round_trips() {
        let m = StructuredMesh::unit_square(5).unwrap();
        assert_eq!(m.num_edges(), 60);
        for e in 0..m.num_elements() {
            let (i, j) = m.element_ij(e);
            assert_eq!(m.element_index(i, j), e);
            let [b, r, t, l] = m.element_edges(e);
            assert_eq!(m.edge_elements(b).1, Some(e));
            assert_eq!(m.edge_elements(t).0, Some(e));
            assert_eq!(m.edge_elements(l).1, Some(e));
            assert_eq!(m.edge_elements(r).0, Some(e));
            assert_eq!(m.locate(m.element_center(e)), Some(e));
        }
        let interior = (0..m.num_edges())
            .filter(|&e| m.is_interior_edge(e))
            .count();
        assert_eq!(interior, 2 * 5 * 4);
    }

    #[test]
    fn cut_elements_straddle_the_curve() {
        let c = disk(16);
        assert!(!c.cut_elements().is_empty());
        for e in c.cut_elements() {
            let ph = c.corner_phases(e);
            let mixed = ph.contains(&1) && ph.contains(&2);
            let hits: usize = c
                .mesh
                .element_edges(e)
                .iter()
                .map(|&ed| c.edge_crossings[ed].len())
                .sum();
            assert!(mixed || hits >= 2);
            assert!(c.in_cover(e, 1) && c.in_cover(e, 2));
        }
        for e in 0..c.mesh.num_elements() {
            assert!(c.in_cover(e, 1) || c.in_cover(e, 2));
            assert_eq!(c.in_cover(e, 1) && c.in_cover(e, 2), c.cut[e]);
        }
    }

    #[test]
    fn ghost_edges_touch_cut_elements() {
        let c = disk(16);
        for phase in 1..=2 {
            for edge in c.ghost_edges(phase) {
                let (a, b) = c.mesh.edge_elements(edge);
                let (a, b) = (a.unwrap(), b.unwrap());
                assert!(c.cut[a] || c.cut[b]);
                assert!(c.in_cover(a, phase) && c.in_cover(b, phase));
            }
        }
    }

    #[test]
    fn disk_satisfies_mesh_assumptions() {
        let r = check_mesh_assumptions(&disk(32)).unwrap();
        assert!(r.max_chain_len <= 5, "{r:?}");
        assert_eq!(r.boundary_edge_violations, 0);
    }

    #[test]
    fn curve_touching_boundary_is_rejected() {
        let mesh = StructuredMesh::unit_square(8).unwrap();
        let s = fit_periodic_spline(&MarkerChain::circle(Vec2::new(0.5, 0.5), 0.5, 64).unwrap())
            .unwrap();
        assert!(classify(&mesh, &s).is_err());
    }

    #[test]
    fn tiny_curve_inside_one_element_is_rejected() {
        let mesh = StructuredMesh::unit_square(4).unwrap();
        let s = fit_periodic_spline(&MarkerChain::circle(Vec2::new(0.6, 0.6), 0.05, 16).unwrap())
            .unwrap();
        assert!(matches!(classify(&mesh, &s), Err(Error::Classification(_))));
    }
}
