//! Small special-function kit: Gauss-Legendre rules, generalized Laguerre
//! polynomials, log-factorials and the Bessel function J0.

use std::f64::consts::PI;

/// Gauss-Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "gauss_legendre needs at least one node");
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = (n + 1) / 2;
    for i in 0..m {
        // Tricomi initial guess, then Newton on P_n.
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, z);
        dp = if d != 0.0 { d } else { dp };
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Gauss-Legendre rule mapped to [a, b].
pub fn gauss_legendre_on(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(n);
    let half = 0.5 * (b - a);
    let mid = 0.5 * (b + a);
    (
        x.iter().map(|t| mid + half * t).collect(),
        w.iter().map(|wi| wi * half).collect(),
    )
}

/// Generalized Laguerre polynomial L_p^alpha(x) by upward recurrence.
pub fn laguerre(p: u32, alpha: f64, x: f64) -> f64 {
    let mut l0 = 1.0;
    if p == 0 {
        return l0;
    }
    let mut l1 = 1.0 + alpha - x;
    for k in 1..p {
        let kf = k as f64;
        let l2 = ((2.0 * kf + 1.0 + alpha - x) * l1 - (kf + alpha) * l0) / (kf + 1.0);
        l0 = l1;
        l1 = l2;
    }
    l1
}

pub fn ln_factorial(n: u32) -> f64 {
    (2..=n).map(|k| (k as f64).ln()).sum()
}

/// Bessel function of the first kind, order zero.
pub fn bessel_j0(x: f64) -> f64 {
    let x = x.abs();
    if x < 30.0 {
        // Trapezoid over a full period of cos(x sin t) is spectrally exact.
        let m = (x.ceil() as usize) + 40;
        let h = 2.0 * PI / m as f64;
        let s: f64 = (0..m).map(|j| (x * (j as f64 * h).sin()).cos()).sum();
        s / m as f64
    } else {
        // Hankel asymptotic expansion.
        let mut a = 1.0;
        let mut p = 0.0;
        let mut q = 0.0;
        let mut xp = 1.0;
        for k in 0..24u32 {
            if k > 0 {
                let kf = k as f64;
                a *= -((2.0 * kf - 1.0).powi(2)) / (8.0 * kf);
                xp *= x;
            }
            let term = a / xp;
            match k % 4 {
                0 => p += term,
                1 => q += term,
                2 => p -= term,
                _ => q -= term,
            }
        }
        let chi = x - 0.25 * PI;
        (2.0 / (PI * x)).sqrt() * (p * chi.cos() - q * chi.sin())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        let (x, w) = gauss_legendre(8);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(14)).sum();
        assert_relative_eq!(s, 2.0 / 15.0, max_relative = 1e-13);
        let (x, w) = gauss_legendre_on(5, 1.0, 3.0);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x * x).sum();
        assert_relative_eq!(s, 26.0 / 3.0, max_relative = 1e-13);
    }

    #[test]
    fn laguerre_low_orders() {
        let x = 0.7;
        assert_relative_eq!(laguerre(1, 2.0, x), 3.0 - x, epsilon = 1e-14);
        let l2 = 0.5 * (x * x - 2.0 * (2.0 + 2.0) * x + (2.0 + 1.0) * (2.0 + 2.0));
        assert_relative_eq!(laguerre(2, 2.0, x), l2, epsilon = 1e-14);
    }

    #[test]
    fn j0_reference_values() {
        assert_relative_eq!(bessel_j0(0.0), 1.0, epsilon = 1e-15);
        assert_relative_eq!(bessel_j0(1.0), 0.765_197_686_557_966_6, epsilon = 1e-13);
        assert_relative_eq!(bessel_j0(10.0), -0.245_935_764_451_348_3, epsilon = 1e-13);
        // both sides of the branch switch
        assert_relative_eq!(bessel_j0(29.999), -0.086_486_693_418_625_25, epsilon = 1e-12);
        assert_relative_eq!(bessel_j0(30.001), -0.086_249_191_333_847_09, epsilon = 1e-12);
        assert_relative_eq!(bessel_j0(50.0), 0.055_812_327_669_251_86, epsilon = 1e-12);
    }
}
