//! One-dimensional minimization.

/// Brent's method on [a, b]: golden-section steps safeguarding parabolic
/// interpolation. Returns (argmin, minimum).
pub(crate) fn brent_min(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64, max_iter: usize) -> (f64, f64) {
    const CGOLD: f64 = 0.381_966_011_250_105_1;
    let (mut a, mut b) = if a < b { (a, b) } else { (b, a) };
    let mut x = a + CGOLD * (b - a);
    let mut w = x;
    let mut v = x;
    let mut fx = f(x);
    let mut fw = fx;
    let mut fv = fx;
    let mut d: f64 = 0.0;
    let mut e: f64 = 0.0;
    for _ in 0..max_iter {
        let xm = 0.5 * (a + b);
        let tol1 = tol * x.abs() + 1e-12;
        let tol2 = 2.0 * tol1;
        if (x - xm).abs() <= tol2 - 0.5 * (b - a) {
            break;
        }
        let mut golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            let etemp = e;
            e = d;
            if p.abs() < (0.5 * q * etemp).abs() && p > q * (a - x) && p < q * (b - x) {
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = tol1.copysign(xm - x);
                }
                golden = false;
            }
        }
        if golden {
            e = if x >= xm { a - x } else { b - x };
            d = CGOLD * e;
        }
        let u = if d.abs() >= tol1 { x + d } else { x + tol1.copysign(d) };
        let fu = f(u);
        if fu <= fx {
            if u >= x {
                a = x;
            } else {
                b = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    (x, fx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_quadratic_minimum() {
        let (x, fx) = brent_min(|x| (x - 1.3) * (x - 1.3) + 2.0, -5.0, 5.0, 1e-12, 200);
        assert!((x - 1.3).abs() < 1e-8);
        assert!((fx - 2.0).abs() < 1e-14);
    }

    #[test]
    fn finds_non_quadratic_minimum() {
        // minimum of cosh(x - 0.4) + x^4 located by calculus in the test body
        let f = |x: f64| (x - 0.4).cosh() + x.powi(4);
        let (x, _) = brent_min(f, -2.0, 2.0, 1e-12, 200);
        let fp = (x - 0.4).sinh() + 4.0 * x.powi(3);
        assert!(fp.abs() < 1e-7, "derivative {fp} at {x}");
    }
}
