//! One-dimensional quadrature helpers shared by the curve space and the
//! payoff smoothing.

/// Trapezoid rule on a uniform grid.
pub fn trapezoid(values: &[f64], dx: f64) -> f64 {
    match values.len() {
        0 | 1 => 0.0,
        n => {
            let inner: f64 = values[1..n - 1].iter().sum();
            dx * (inner + 0.5 * (values[0] + values[n - 1]))
        }
    }
}

/// Cumulative trapezoid: `out[j] = ∫_{x_0}^{x_j}`.
pub fn cumulative_trapezoid(values: &[f64], dx: f64, out: &mut [f64]) {
    debug_assert_eq!(values.len(), out.len());
    if values.is_empty() {
        return;
    }
    out[0] = 0.0;
    for j in 1..values.len() {
        out[j] = out[j - 1] + 0.5 * dx * (values[j - 1] + values[j]);
    }
}

/// Adaptive Simpson quadrature with an absolute tolerance.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(f, a, b, fa, fm, fb, whole, tol, 50)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
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
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// 8-point Gauss–Legendre nodes and weights on [-1, 1].
#[allow(clippy::excessive_precision)]
const GL8: [(f64, f64); 8] = [
    (-0.960_289_856_497_536_3, 0.101_228_536_290_376_26),
    (-0.796_666_477_413_626_7, 0.222_381_034_453_374_47),
    (-0.525_532_409_916_329_0, 0.313_706_645_877_887_3),
    (-0.183_434_642_495_649_8, 0.362_683_783_378_362_0),
    (0.183_434_642_495_649_8, 0.362_683_783_378_362_0),
    (0.525_532_409_916_329_0, 0.313_706_645_877_887_3),
    (0.796_666_477_413_626_7, 0.222_381_034_453_374_47),
    (0.960_289_856_497_536_3, 0.101_228_536_290_376_26),
];

/// Fixed 8-point Gauss–Legendre rule on [a, b].
pub fn gauss_legendre<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> f64 {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    GL8.iter().map(|&(x, w)| w * f(mid + half * x)).sum::<f64>() * half
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trapezoid_is_exact_on_linear() {
        let dx = 0.1;
        let v: Vec<f64> = (0..11).map(|j| 2.0 + 3.0 * j as f64 * dx).collect();
        assert!((trapezoid(&v, dx) - (2.0 + 1.5)).abs() < 1e-12);
    }

    #[test]
    fn simpson_and_gauss_agree_on_exponential() {
        let f = |x: f64| (-x).exp();
        let exact = 1.0 - (-2.0f64).exp();
        assert!((adaptive_simpson(&f, 0.0, 2.0, 1e-12) - exact).abs() < 1e-10);
        assert!((gauss_legendre(&f, 0.0, 2.0) - exact).abs() < 1e-12);
    }
}
