//! Quadrature rules over the transverse frequency plane.
//!
//! The coupling integrals weight smooth overlap kernels by a steep power law,
//! so the radial direction is sampled uniformly in ln|a| with a Gauss-Legendre
//! rule and the angle with the trapezoid rule (exact for band-limited
//! azimuthal content).

use crate::special::gauss_legendre_on;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Polar quadrature configuration. Radii in cycles/m.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolarQuadrature {
    pub n_radial: usize,
    pub n_angular: usize,
    /// Lower radius; `None` means `κ0/(2π)·1e-2` (or a grid-derived floor).
    pub r_min: Option<f64>,
    /// Upper radius; `None` means the grid extent.
    pub r_max: Option<f64>,
}

impl Default for PolarQuadrature {
    fn default() -> Self {
        PolarQuadrature {
            n_radial: 128,
            n_angular: 64,
            r_min: None,
            r_max: None,
        }
    }
}

/// Concrete nodes of a polar rule. `radial_weight[j]` already contains the
/// Jacobian `ρ² d(ln ρ)`, so `∫f d²a ≈ Σ_jk radial_weight[j]·angular_weight·f`.
#[derive(Debug, Clone)]
pub struct PolarNodes {
    pub rho: Vec<f64>,
    pub radial_weight: Vec<f64>,
    pub phi: Vec<f64>,
    pub angular_weight: f64,
    pub r_min: f64,
    pub r_max: f64,
}

impl PolarNodes {
    pub fn new(n_radial: usize, n_angular: usize, r_min: f64, r_max: f64) -> Self {
        assert!(r_min > 0.0 && r_max > r_min, "bad polar radii");
        let (u, w) = gauss_legendre_on(n_radial, r_min.ln(), r_max.ln());
        let rho: Vec<f64> = u.iter().map(|u| u.exp()).collect();
        let radial_weight = rho.iter().zip(&w).map(|(r, w)| r * r * w).collect();
        let phi = (0..n_angular)
            .map(|k| 2.0 * PI * k as f64 / n_angular as f64)
            .collect();
        PolarNodes {
            rho,
            radial_weight,
            phi,
            angular_weight: 2.0 * PI / n_angular as f64,
            r_min,
            r_max,
        }
    }

    pub fn len(&self) -> usize {
        self.rho.len() * self.phi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Exact trapezoid sum Σ_k w_φ e^{i m φ_k}: 2π when m ≡ 0 (mod n_φ), else 0.
    pub fn angular_sum(&self, m: i64) -> f64 {
        if m.rem_euclid(self.phi.len() as i64) == 0 {
            2.0 * PI
        } else {
            0.0
        }
    }
}

/// ∫_lo^hi f(ρ) dρ over a positive interval, Gauss-Legendre panels uniform in ln ρ.
pub fn integrate_log<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, panels: usize, order: usize) -> f64 {
    assert!(lo > 0.0 && hi > lo);
    let (ul, uh) = (lo.ln(), hi.ln());
    let h = (uh - ul) / panels as f64;
    let mut s = 0.0;
    for p in 0..panels {
        let (x, w) = gauss_legendre_on(order, ul + p as f64 * h, ul + (p + 1) as f64 * h);
        for (u, wi) in x.iter().zip(&w) {
            let r = u.exp();
            s += wi * r * f(r);
        }
    }
    s
}

/// ∫_lo^hi f(ρ) dρ with uniform Gauss-Legendre panels.
pub fn integrate_linear<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, panels: usize, order: usize) -> f64 {
    let h = (hi - lo) / panels as f64;
    let mut s = 0.0;
    for p in 0..panels {
        let (x, w) = gauss_legendre_on(order, lo + p as f64 * h, lo + (p + 1) as f64 * h);
        s += x.iter().zip(&w).map(|(x, w)| w * f(*x)).sum::<f64>();
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn polar_rule_integrates_gaussian() {
        let nodes = PolarNodes::new(128, 16, 1e-4, 10.0);
        let mut s = 0.0;
        for (r, w) in nodes.rho.iter().zip(&nodes.radial_weight) {
            for _ in &nodes.phi {
                s += w * nodes.angular_weight * (-PI * r * r).exp();
            }
        }
        // ∫ exp(-π|a|²) d²a = 1, minus the tiny disk below r_min
        assert_relative_eq!(s, 1.0, max_relative = 1e-7);
    }

    #[test]
    fn log_and_linear_integrals() {
        let v = integrate_log(|r| r.powf(-2.5), 1.0, 1e6, 60, 8);
        assert_relative_eq!(v, (1.0 - 1e-9) / 1.5, max_relative = 1e-10);
        let v = integrate_linear(|x| x.sin(), 0.0, PI, 4, 10);
        assert_relative_eq!(v, 2.0, max_relative = 1e-12);
    }

    #[test]
    fn angular_sum_selection_rule() {
        let nodes = PolarNodes::new(4, 64, 1.0, 2.0);
        assert_eq!(nodes.angular_sum(0), 2.0 * PI);
        assert_eq!(nodes.angular_sum(3), 0.0);
        assert_eq!(nodes.angular_sum(-64), 2.0 * PI);
    }
}
