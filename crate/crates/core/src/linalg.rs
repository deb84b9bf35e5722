//! Sparse linear solves for the one-step saddle-point systems.
//!
//! The main path rewrites `[A B; -B^T C]` in symmetric-indefinite form by
//! negating the pressure and multiplier rows, removes pinned (Dirichlet)
//! unknowns, factors the symmetric part (pressure block shifted to be
//! negative definite) with `LDL^T` and
//! runs right-preconditioned GMRES on the remaining nonsymmetric system.
//! Sparse LU is kept as a fallback.

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::cholesky::ldlt::factor::LdltRegularization;
use faer::linalg::solvers::Solve;
use faer::sparse::linalg::cholesky::{
    factorize_symbolic_cholesky, CholeskySymbolicParams, SymmetricOrdering,
};
use faer::sparse::{SparseColMat, Triplet};
use faer::{Conj, Mat, Par, Side};
use log::debug;

use crate::assembly::{compress, Triplets};
use crate::{Error, Result};

/// Outcome of a linear solve.
#[derive(Clone, Debug)]
pub struct LinearSolve {
    pub solution: Vec<f64>,
    /// `||K x - G|| / ||G||` (absolute when `G = 0`).
    pub relative_residual: f64,
}

const TARGET: f64 = 1e-10;
/// Diagonal shift of the pressure block of the preconditioner (scaled units).
const PRESSURE_SHIFT: f64 = 1e-8;

fn residual(matrix: &Triplets, x: &[f64], rhs: &[f64]) -> Vec<f64> {
    let mut r = rhs.to_vec();
    for &(i, j, v) in matrix {
        r[i] -= v * x[j];
    }
    r
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn singular(rel: f64) -> Error {
    Error::Solver(format!(
        "relative residual {rel:.3e}; the system is singular or badly conditioned \
         (check that gamma0 is large enough and gamma1 > 0)"
    ))
}

/// Row then column max-norm scaling factors.
fn equilibrate(n: usize, matrix: &Triplets) -> (Vec<f64>, Vec<f64>) {
    let mut row = vec![0.0f64; n];
    for &(i, _, v) in matrix {
        row[i] = row[i].max(v.abs());
    }
    let row: Vec<f64> = row
        .into_iter()
        .map(|m| if m > 0.0 { 1.0 / m } else { 1.0 })
        .collect();
    let mut col = vec![0.0f64; n];
    for &(i, j, v) in matrix {
        col[j] = col[j].max((row[i] * v).abs());
    }
    let col = col
        .into_iter()
        .map(|m| if m > 0.0 { 1.0 / m } else { 1.0 })
        .collect();
    (row, col)
}

/// Sparse LU solve of the equilibrated system with a few steps of iterative
/// refinement against the original one.
pub fn solve_sparse(n: usize, matrix: &Triplets, rhs: &[f64]) -> Result<LinearSolve> {
    let (rs, cs) = equilibrate(n, matrix);
    let entries: Vec<Triplet<usize, usize, f64>> = matrix
        .iter()
        .map(|&(r, c, v)| Triplet::new(r, c, rs[r] * v * cs[c]))
        .collect();
    let a = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &entries)
        .map_err(|e| Error::Solver(format!("matrix construction: {e:?}")))?;
    // faer panics on an exact zero pivot instead of reporting it
    let lu = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| a.sp_lu()))
        .map_err(|_| Error::Solver("factorization: zero pivot".into()))?
        .map_err(|e| Error::Solver(format!("factorization: {e:?}")))?;
    let solve = |b: &[f64]| -> Vec<f64> {
        let y = lu.solve(&Mat::from_fn(n, 1, |i, _| rs[i] * b[i]));
        (0..n).map(|i| cs[i] * y[(i, 0)]).collect()
    };
    let mut x = solve(rhs);
    let scale = norm(rhs).max(f64::MIN_POSITIVE);
    let mut r = residual(matrix, &x, rhs);
    let mut rel = norm(&r) / scale;
    for _ in 0..3 {
        if rel < 1e-14 || !rel.is_finite() {
            break;
        }
        let d = solve(&r);
        let trial: Vec<f64> = (0..n).map(|i| x[i] + d[i]).collect();
        let rt = residual(matrix, &trial, rhs);
        let relt = norm(&rt) / scale;
        if relt >= rel {
            break;
        }
        (x, r, rel) = (trial, rt, relt);
    }
    if !rel.is_finite() || rel > TARGET {
        return Err(singular(rel));
    }
    Ok(LinearSolve {
        solution: x,
        relative_residual: rel,
    })
}

/// Compressed sparse rows.
struct Csr {
    ptr: Vec<usize>,
    col: Vec<usize>,
    val: Vec<f64>,
}

impl Csr {
    fn new(n: usize, mut t: Triplets) -> Self {
        t.sort_unstable_by_key(|&(i, j, _)| (i, j));
        let mut ptr = vec![0; n + 1];
        for &(i, _, _) in &t {
            ptr[i + 1] += 1;
        }
        for i in 0..n {
            ptr[i + 1] += ptr[i];
        }
        Self {
            ptr,
            col: t.iter().map(|e| e.1).collect(),
            val: t.iter().map(|e| e.2).collect(),
        }
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let r = self.ptr[i]..self.ptr[i + 1];
            *yi = self.col[r.clone()]
                .iter()
                .zip(&self.val[r])
                .map(|(&j, v)| v * x[j])
                .sum();
        }
    }
}

/// Unpivoted `LDL^T` of a quasi-definite matrix given by its lower triangle.
struct Ldlt {
    symbolic: faer::sparse::linalg::cholesky::SymbolicCholesky<usize>,
    values: Vec<f64>,
    buffer: MemBuffer,
}

impl Ldlt {
    fn new(n: usize, lower: &[Triplet<usize, usize, f64>]) -> Result<Self> {
        let a = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, lower)
            .map_err(|e| Error::Solver(format!("matrix construction: {e:?}")))?;
        let symbolic = factorize_symbolic_cholesky(
            a.symbolic(),
            Side::Lower,
            SymmetricOrdering::Amd,
            CholeskySymbolicParams::default(),
        )
        .map_err(|e| Error::Solver(format!("symbolic factorization: {e:?}")))?;
        let mut values = vec![0.0; symbolic.len_val()];
        let par = Par::Seq;
        let mut buffer = MemBuffer::new(
            symbolic
                .factorize_numeric_ldlt_scratch::<f64>(par, Default::default())
                .or(symbolic.solve_in_place_scratch::<f64>(1, par)),
        );
        let reg = LdltRegularization::default();
        symbolic
            .factorize_numeric_ldlt(
                &mut values,
                a.as_ref(),
                Side::Lower,
                reg,
                par,
                MemStack::new(&mut buffer),
                Default::default(),
            )
            .map_err(|e| Error::Solver(format!("LDL^T factorization: {e:?}")))?;
        Ok(Self {
            symbolic,
            values,
            buffer,
        })
    }

    fn solve(&mut self, b: &mut [f64]) {
        let f = faer::sparse::linalg::cholesky::LdltRef::new(&self.symbolic, &self.values);
        let n = b.len();
        let mut m = Mat::from_fn(n, 1, |i, _| b[i]);
        f.solve_in_place_with_conj(
            Conj::No,
            m.as_mut(),
            Par::Seq,
            MemStack::new(&mut self.buffer),
        );
        for (i, bi) in b.iter_mut().enumerate() {
            *bi = m[(i, 0)];
        }
    }
}

/// Restarted GMRES with right preconditioning; returns the iteration count
/// or `None` without convergence to `tol` (relative to `||b||`).
fn gmres(
    a: &Csr,
    precond: &mut dyn FnMut(&mut [f64]),
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    restart: usize,
    max_iter: usize,
) -> Option<usize> {
    let n = b.len();
    let bnorm = norm(b).max(f64::MIN_POSITIVE);
    let mut w = vec![0.0; n];
    let mut iters = 0;
    while iters < max_iter {
        a.apply(x, &mut w);
        let r: Vec<f64> = b.iter().zip(&w).map(|(bi, wi)| bi - wi).collect();
        let beta = norm(&r);
        if beta <= tol * bnorm {
            return Some(iters);
        }
        let mut v: Vec<Vec<f64>> = vec![r.iter().map(|ri| ri / beta).collect()];
        let mut z: Vec<Vec<f64>> = Vec::new();
        let mut hess: Vec<Vec<f64>> = Vec::new();
        let (mut cs, mut sn): (Vec<f64>, Vec<f64>) = (Vec::new(), Vec::new());
        let mut g = vec![beta];
        for j in 0..restart {
            iters += 1;
            let mut zj = v[j].clone();
            precond(&mut zj);
            a.apply(&zj, &mut w);
            z.push(zj);
            let mut h = vec![0.0; j + 2];
            for _ in 0..2 {
                for (i, vi) in v.iter().enumerate() {
                    let c = dot(&w, vi);
                    h[i] += c;
                    w.iter_mut().zip(vi).for_each(|(wk, vk)| *wk -= c * vk);
                }
            }
            h[j + 1] = norm(&w);
            for i in 0..j {
                let t = cs[i] * h[i] + sn[i] * h[i + 1];
                h[i + 1] = -sn[i] * h[i] + cs[i] * h[i + 1];
                h[i] = t;
            }
            let d = h[j].hypot(h[j + 1]);
            let (c, s) = if d == 0.0 {
                (1.0, 0.0)
            } else {
                (h[j] / d, h[j + 1] / d)
            };
            cs.push(c);
            sn.push(s);
            h[j] = d;
            let gj = g[j];
            g[j] = c * gj;
            g.push(-s * gj);
            let done = g[j + 1].abs() <= tol * bnorm || iters >= max_iter;
            let vnext = norm(&w);
            hess.push(h);
            if done || vnext == 0.0 {
                break;
            }
            v.push(w.iter().map(|wk| wk / vnext).collect());
        }
        let m = hess.len();
        let mut y = vec![0.0; m];
        for i in (0..m).rev() {
            let s: f64 = ((i + 1)..m).map(|l| hess[l][i] * y[l]).sum();
            y[i] = (g[i] - s) / hess[i][i];
        }
        for (yi, zi) in y.iter().zip(&z) {
            x.iter_mut().zip(zi).for_each(|(xk, zk)| *xk += yi * zk);
        }
        if !x.iter().all(|v| v.is_finite()) {
            return None;
        }
    }
    a.apply(x, &mut w);
    let r: f64 = b
        .iter()
        .zip(&w)
        .map(|(bi, wi)| (bi - wi).powi(2))
        .sum::<f64>()
        .sqrt();
    (r <= tol * bnorm).then_some(iters)
}

/// Solves a saddle-point system whose unknowns `0..n_velocity` are the
/// velocity block and whose remaining rows carry the negated divergence
/// (pressure and multiplier rows). Rows holding only a diagonal entry are
/// treated as pinned values.
pub fn solve_saddle(
    n: usize,
    matrix: &Triplets,
    rhs: &[f64],
    n_velocity: usize,
) -> Result<LinearSolve> {
    let matrix = compress(matrix.clone());
    let sign = |i: usize| if i < n_velocity { 1.0 } else { -1.0 };
    let mut count = vec![0usize; n];
    let mut diag = vec![0.0; n];
    for &(i, j, v) in &matrix {
        count[i] += 1;
        if i == j {
            diag[i] = v;
        }
    }
    let mut fixed: Vec<Option<f64>> = vec![None; n];
    for i in 0..n {
        if count[i] == 1 && diag[i] != 0.0 {
            fixed[i] = Some(rhs[i] / diag[i]);
        }
    }
    let mut index = vec![usize::MAX; n];
    let mut free = Vec::new();
    for i in 0..n {
        if fixed[i].is_none() {
            index[i] = free.len();
            free.push(i);
        }
    }
    let m = free.len();
    let mut b: Vec<f64> = free.iter().map(|&i| sign(i) * rhs[i]).collect();
    let mut k: Triplets = Vec::with_capacity(matrix.len());
    for &(i, j, v) in &matrix {
        if index[i] == usize::MAX {
            continue;
        }
        let v = sign(i) * v;
        match fixed[j] {
            Some(xj) => b[index[i]] -= v * xj,
            None => k.push((index[i], index[j], v)),
        }
    }

    // symmetric scaling from the symmetric part
    let mut big = vec![0.0f64; m];
    for &(i, j, v) in &k {
        big[i] = big[i].max(v.abs());
        big[j] = big[j].max(v.abs());
    }
    let d: Vec<f64> = big
        .iter()
        .map(|&a| if a > 0.0 { 1.0 / a.sqrt() } else { 1.0 })
        .collect();
    let ks: Triplets = k.iter().map(|&(i, j, v)| (i, j, d[i] * v * d[j])).collect();
    let bs: Vec<f64> = b.iter().zip(&d).map(|(bi, di)| bi * di).collect();

    let mut half: Triplets = Vec::with_capacity(ks.len());
    for &(i, j, v) in &ks {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        half.push((r, c, if i == j { v } else { 0.5 * v }));
    }
    // a small negative shift makes the pressure block definite, so any
    // symmetric ordering factors without pivoting
    for (r, &i) in free.iter().enumerate() {
        if i >= n_velocity {
            half.push((r, r, -PRESSURE_SHIFT));
        }
    }
    let lower: Vec<Triplet<usize, usize, f64>> = compress(half)
        .into_iter()
        .map(|(r, c, v)| Triplet::new(r, c, v))
        .collect();
    let mut ldlt = Ldlt::new(m, &lower)?;
    let a = Csr::new(m, ks);
    let mut y = vec![0.0; m];
    let iters = gmres(
        &a,
        &mut |r: &mut [f64]| ldlt.solve(r),
        &bs,
        &mut y,
        1e-13,
        60,
        600,
    );
    debug!("saddle solve: {m} free unknowns, gmres iterations {iters:?}");

    let mut x = vec![0.0; n];
    for i in 0..n {
        x[i] = match fixed[i] {
            Some(v) => v,
            None => d[index[i]] * y[index[i]],
        };
    }
    let scale = norm(rhs).max(f64::MIN_POSITIVE);
    let rel = norm(&residual(&matrix, &x, rhs)) / scale;
    if iters.is_none() || !rel.is_finite() || rel > TARGET {
        debug!("saddle solve fell back to LU (residual {rel:.3e})");
        return solve_sparse(n, &matrix, rhs);
    }
    Ok(LinearSolve {
        solution: x,
        relative_residual: rel,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sparse_solve_small_system() {
        let t = vec![
            (0, 0, 4.0),
            (1, 0, 1.0),
            (0, 1, 1.0),
            (1, 1, 3.0),
            (2, 2, 2.0),
        ];
        let s = solve_sparse(3, &t, &[1.0, 2.0, 4.0]).unwrap();
        assert!((s.solution[0] - 1.0 / 11.0).abs() < 1e-15);
        assert!((s.solution[1] - 7.0 / 11.0).abs() < 1e-15);
        assert!((s.solution[2] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn singular_system_is_rejected() {
        let t = vec![(0, 0, 1.0), (1, 0, 1.0), (0, 1, 1.0), (1, 1, 1.0)];
        assert!(solve_sparse(2, &t, &[1.0, 0.0]).is_err());
        assert!(solve_saddle(2, &t, &[1.0, 0.0], 1).is_err());
    }

    #[test]
    fn saddle_solve_matches_dense() {
        // [A B; -B^T c] with a nonsymmetric A and one pinned unknown
        let t = vec![
            (0, 0, 4.0),
            (0, 1, 1.5),
            (1, 0, 0.5),
            (1, 1, 3.0),
            (0, 3, 1.0),
            (1, 3, -2.0),
            (2, 2, 1.0),
            (3, 0, -1.0),
            (3, 1, 2.0),
            (3, 3, 0.25),
            (0, 2, 2.0),
        ];
        let rhs = [1.0, -1.0, 3.0, 0.5];
        let s = solve_saddle(4, &t, &rhs, 3).unwrap();
        let r = residual(&t, &s.solution, &rhs);
        assert!(norm(&r) < 1e-13, "{r:?}");
        assert_eq!(s.solution[2], 3.0);
    }
}
