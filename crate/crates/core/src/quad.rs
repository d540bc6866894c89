//! Adaptive Simpson quadrature.

/// Tolerance and recursion limits for [`adaptive_simpson`].
#[derive(Debug, Clone, Copy)]
pub struct SimpsonTol {
    pub abs: f64,
    /// Relative tolerance against a coarse estimate of the whole integral.
    /// Keeps the recursion bounded when the integrand is very large.
    pub rel: f64,
    pub max_depth: u32,
}

impl SimpsonTol {
    pub const fn new(abs: f64, rel: f64, max_depth: u32) -> Self {
        Self { abs, rel, max_depth }
    }
}

impl Default for SimpsonTol {
    fn default() -> Self {
        Self::new(1e-10, 1e-12, 50)
    }
}

/// Integrates `f` over `[a, b]` with adaptive Simpson and Richardson
/// correction. Returns `0` when `a == b`; a reversed interval flips the sign.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: SimpsonTol) -> f64 {
    if a == b {
        return 0.0;
    }
    if b < a {
        return -adaptive_simpson(f, b, a, tol);
    }

    // Coarse composite estimate used to scale the relative tolerance.
    const PANELS: usize = 16;
    let h = (b - a) / PANELS as f64;
    let mut coarse = 0.0;
    let mut fl = f(a);
    for i in 0..PANELS {
        let x0 = a + i as f64 * h;
        let x1 = if i + 1 == PANELS { b } else { x0 + h };
        let fm = f(0.5 * (x0 + x1));
        let fr = f(x1);
        coarse += (x1 - x0) / 6.0 * (fl + 4.0 * fm + fr);
        fl = fr;
    }
    let eps = tol.abs.max(tol.rel * coarse.abs());

    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    recurse(&f, a, b, fa, fm, fb, whole, eps, tol.max_depth)
}

#[allow(clippy::too_many_arguments)]
fn recurse<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    eps: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * eps || m <= a || m >= b {
        return left + right + delta / 15.0;
    }
    recurse(f, a, m, fa, flm, fm, left, 0.5 * eps, depth - 1)
        + recurse(f, m, b, fm, frm, fb, right, 0.5 * eps, depth - 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_is_exact() {
        let v = adaptive_simpson(|x| x * x * x - 2.0 * x, 0.0, 2.0, SimpsonTol::default());
        assert!((v - 0.0).abs() < 1e-12);
    }

    #[test]
    fn smooth_transcendental() {
        let v = adaptive_simpson(f64::sin, 0.0, std::f64::consts::PI, SimpsonTol::default());
        assert!((v - 2.0).abs() < 1e-10);
        let v = adaptive_simpson(|x| (-x * x).exp(), -8.0, 8.0, SimpsonTol::default());
        assert!((v - std::f64::consts::PI.sqrt()).abs() < 1e-10);
    }

    #[test]
    fn reversed_and_empty_intervals() {
        let tol = SimpsonTol::default();
        assert_eq!(adaptive_simpson(|x| x, 3.0, 3.0, tol), 0.0);
        let fwd = adaptive_simpson(f64::exp, 0.0, 1.0, tol);
        let rev = adaptive_simpson(f64::exp, 1.0, 0.0, tol);
        assert!((fwd + rev).abs() < 1e-14);
    }

    #[test]
    fn huge_integrand_terminates() {
        // Absolute tolerance alone would recurse to max depth everywhere.
        let v = adaptive_simpson(|x| (x * 60.0).exp(), 0.0, 1.0, SimpsonTol::default());
        let exact = ((60.0f64).exp() - 1.0) / 60.0;
        assert!(((v - exact) / exact).abs() < 1e-10);
    }
}
