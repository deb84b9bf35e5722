//! Small polynomial utilities: Gauss rules, Lobatto nodes and robust real
//! roots of cubics on an interval.

/// Gauss–Legendre rule with `n` points on `[0, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "gauss rule needs at least one point");
    let mut pts = vec![0.0; n];
    let mut wts = vec![0.0; n];
    let nf = n as f64;
    for i in 0..(n + 1) / 2 {
        // Tricomi initial guess, then Newton on P_n.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        dp = if d != 0.0 { d } else { dp };
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        pts[i] = 0.5 * (1.0 - x);
        pts[n - 1 - i] = 0.5 * (1.0 + x);
        wts[i] = 0.5 * w;
        wts[n - 1 - i] = 0.5 * w;
    }
    (pts, wts)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for j in 2..=n {
        let jf = j as f64;
        let p2 = ((2.0 * jf - 1.0) * x * p1 - (jf - 1.0) * p0) / jf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Gauss–Lobatto nodes of degree `k` (that is, `k + 1` nodes) on `[0, 1]`.
pub fn gauss_lobatto_nodes(k: usize) -> Vec<f64> {
    match k {
        1 => vec![0.0, 1.0],
        2 => vec![0.0, 0.5, 1.0],
        3 => {
            let s = 0.5 / 5f64.sqrt();
            vec![0.0, 0.5 - s, 0.5 + s, 1.0]
        }
        4 => {
            let s = 0.5 * (3.0f64 / 7.0).sqrt();
            vec![0.0, 0.5 - s, 0.5, 0.5 + s, 1.0]
        }
        _ => panic!("lobatto nodes implemented for degrees 1..=4, got {k}"),
    }
}

/// Evaluates `c[0] + c[1] s + c[2] s^2 + c[3] s^3`.
#[inline]
pub fn cubic(c: &[f64; 4], s: f64) -> f64 {
    ((c[3] * s + c[2]) * s + c[1]) * s + c[0]
}

#[inline]
pub fn cubic_deriv(c: &[f64; 4], s: f64) -> f64 {
    (3.0 * c[3] * s + 2.0 * c[2]) * s + c[1]
}

/// Real roots of `a + b s + c s^2` inside the open interval `(lo, hi)`, sorted.
pub fn quadratic_roots_in(a: f64, b: f64, c: f64, lo: f64, hi: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(2);
    let scale = a.abs().max(b.abs()).max(c.abs());
    if scale == 0.0 {
        return out;
    }
    if c.abs() <= 1e-14 * scale {
        if b.abs() > 1e-300 {
            out.push(-a / b);
        }
    } else {
        let disc = b * b - 4.0 * a * c;
        if disc >= 0.0 {
            let sq = disc.sqrt();
            let q = -0.5 * (b + b.signum() * sq);
            if q != 0.0 {
                out.push(q / c);
                out.push(a / q);
            } else {
                out.push(0.0);
            }
        }
    }
    out.retain(|&r| r > lo && r < hi);
    out.sort_by(|x, y| x.partial_cmp(y).unwrap());
    out.dedup();
    out
}

/// Sign with zero treated as positive. Used consistently for every crossing
/// test so that a tangential touch never produces an odd crossing count.
#[inline]
pub fn pos_sign(v: f64) -> bool {
    v >= 0.0
}

/// Roots of the cubic `c` on `[lo, hi]` at which the sign (zero counted as
/// positive) changes. The endpoint values are passed in explicitly so that
/// adjacent pieces of a piecewise polynomial agree on the sign at shared
/// points.
pub fn sign_change_roots(c: &[f64; 4], lo: f64, hi: f64, f_lo: f64, f_hi: f64) -> Vec<f64> {
    sign_change_roots_directed(c, lo, hi, f_lo, f_hi)
        .into_iter()
        .map(|(s, _)| s)
        .collect()
}

/// Like [`sign_change_roots`], also reporting whether the sign goes from
/// negative to non-negative (`true`) at each root.
pub fn sign_change_roots_directed(
    c: &[f64; 4],
    lo: f64,
    hi: f64,
    f_lo: f64,
    f_hi: f64,
) -> Vec<(f64, bool)> {
    let crit = quadratic_roots_in(c[1], 2.0 * c[2], 3.0 * c[3], lo, hi);
    let mut knots = Vec::with_capacity(4);
    knots.push((lo, f_lo));
    for &s in &crit {
        knots.push((s, cubic(c, s)));
    }
    knots.push((hi, f_hi));
    let mut roots = Vec::new();
    for w in knots.windows(2) {
        let (a, fa) = w[0];
        let (b, fb) = w[1];
        if pos_sign(fa) != pos_sign(fb) {
            roots.push((bracketed_root(c, a, b, fa), !pos_sign(fa)));
        }
    }
    roots
}

/// Root of a monotone cubic piece with a sign change on `[a, b]`: bisection
/// safeguarded Newton, polished to machine precision.
fn bracketed_root(c: &[f64; 4], mut a: f64, mut b: f64, fa: f64) -> f64 {
    let neg_at_a = !pos_sign(fa);
    let mut x = 0.5 * (a + b);
    for _ in 0..200 {
        let fx = cubic(c, x);
        if fx == 0.0 {
            return x;
        }
        if (!pos_sign(fx)) == neg_at_a {
            a = x;
        } else {
            b = x;
        }
        let d = cubic_deriv(c, x);
        let mut xn = if d != 0.0 { x - fx / d } else { 0.5 * (a + b) };
        if !(xn > a && xn < b) {
            xn = 0.5 * (a + b);
        }
        if (xn - x).abs() <= 4.0 * f64::EPSILON * (1.0 + x.abs())
            || (b - a) <= 4.0 * f64::EPSILON * (1.0 + a.abs())
        {
            return xn;
        }
        x = xn;
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_rule_integrates_polynomials_exactly() {
        for n in 1..=8 {
            let (p, w) = gauss_legendre(n);
            for deg in 0..2 * n {
                let q: f64 = p.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32)).sum();
                assert!(
                    (q - 1.0 / (deg as f64 + 1.0)).abs() < 1e-14,
                    "n={n} deg={deg}"
                );
            }
        }
    }

    #[test]
    fn lobatto_nodes_are_symmetric() {
        for k in 1..=4 {
            let n = gauss_lobatto_nodes(k);
            for i in 0..=k {
                assert!((n[i] + n[k - i] - 1.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn cubic_roots_match_factored_form() {
        // (s - 0.2)(s - 0.5)(s - 0.9)
        let c = [-0.09, 0.73, -1.6, 1.0];
        let r = sign_change_roots(&c, 0.0, 1.0, cubic(&c, 0.0), cubic(&c, 1.0));
        assert_eq!(r.len(), 3);
        for (x, e) in r.iter().zip([0.2, 0.5, 0.9]) {
            assert!((x - e).abs() < 1e-14);
        }
    }

    #[test]
    fn tangential_touch_gives_no_crossing() {
        // (s - 0.5)^2 touches zero without changing sign
        let c = [0.25, -1.0, 1.0, 0.0];
        let r = sign_change_roots(&c, 0.0, 1.0, cubic(&c, 0.0), cubic(&c, 1.0));
        assert!(r.is_empty());
    }
}
