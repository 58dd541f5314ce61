//! Transverse modes sampled on the frequency plane.
//!
//! LG modes are evaluated in closed form in the frequency domain, with waist
//! `w_a = 1/(πω0)` and the phase `i^(2p+|ℓ|)` that makes their position-space
//! image the usual real-profile LG beam of waist ω0. Grid modes are Kronecker
//! deltas on single frequency nodes; the full set of them is complete at the
//! grid's own resolution.

use crate::error::{Error, Result};
use crate::grid::{Fft2, FrequencyGrid};
use crate::special::{laguerre, ln_factorial};
use ndarray::Array2;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::f64::consts::PI;
use std::fmt;

/// Power captured on the grid must be within this of 1.
pub const CONTAINMENT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModeIndex {
    LaguerreGauss { p: u32, l: i32 },
    Grid { i: usize, j: usize },
}

impl ModeIndex {
    pub fn lg(p: u32, l: i32) -> Self {
        ModeIndex::LaguerreGauss { p, l }
    }

    /// Mode order 2p + |ℓ| (LG only).
    pub fn order(&self) -> Option<u32> {
        match *self {
            ModeIndex::LaguerreGauss { p, l } => Some(2 * p + l.unsigned_abs()),
            ModeIndex::Grid { .. } => None,
        }
    }

    pub fn azimuthal(&self) -> Option<i32> {
        match *self {
            ModeIndex::LaguerreGauss { l, .. } => Some(l),
            ModeIndex::Grid { .. } => None,
        }
    }
}

impl fmt::Display for ModeIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModeIndex::LaguerreGauss { p, l } => write!(f, "LG({p},{l})"),
            ModeIndex::Grid { i, j } => write!(f, "grid({i},{j})"),
        }
    }
}

/// Frequency-plane samples G(a, z) on a grid, centered ordering.
#[derive(Debug, Clone)]
pub struct SpectralField {
    pub grid: FrequencyGrid,
    pub samples: Array2<C64>,
    pub z: f64,
}

impl SpectralField {
    pub fn new(grid: FrequencyGrid, samples: Array2<C64>, z: f64) -> Result<Self> {
        if samples.dim() != (grid.n_side, grid.n_side) {
            return Err(Error::Dimension(format!(
                "samples {:?} do not match grid side {}",
                samples.dim(),
                grid.n_side
            )));
        }
        if samples.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::NonFinite("spectral field samples".into()));
        }
        Ok(SpectralField { grid, samples, z })
    }

    pub fn norm_sqr(&self) -> f64 {
        let da = self.grid.spacing();
        self.samples.iter().map(|v| v.norm_sqr()).sum::<f64>() * da * da
    }

    /// ⟨self|other⟩ on the grid.
    pub fn inner(&self, other: &SpectralField) -> C64 {
        let da = self.grid.spacing();
        self.samples
            .iter()
            .zip(other.samples.iter())
            .map(|(a, b)| a.conj() * b)
            .sum::<C64>()
            * (da * da)
    }
}

/// Normalized 2D LG function of waist `w` at polar point (r, φ).
pub fn lg_profile(p: u32, l: i32, w: f64, r: f64, phi: f64) -> C64 {
    let al = l.unsigned_abs();
    let c = (2.0f64.ln() + ln_factorial(p) - PI.ln() - ln_factorial(p + al)).exp().sqrt() / w;
    let s = 2.0 * r * r / (w * w);
    let radial = c * s.sqrt().powi(al as i32) * laguerre(p, al as f64, s) * (-0.5 * s).exp();
    C64::from_polar(radial, l as f64 * phi)
}

fn order_phase(p: u32, l: i32) -> C64 {
    match (2 * p + l.unsigned_abs()) % 4 {
        0 => C64::new(1.0, 0.0),
        1 => C64::new(0.0, 1.0),
        2 => C64::new(-1.0, 0.0),
        _ => C64::new(0.0, -1.0),
    }
}

/// Free-space transfer exp(iπλz|a|²).
pub fn paraxial_phase(wavelength: f64, z: f64, a2: f64) -> C64 {
    C64::from_polar(1.0, PI * wavelength * z * a2)
}

fn lg_samples(p: u32, l: i32, waist: f64, grid: &FrequencyGrid, z: f64, wavelength: f64) -> Array2<C64> {
    let wa = 1.0 / (PI * waist);
    let ph = order_phase(p, l);
    let nodes = grid.nodes();
    Array2::from_shape_fn((grid.n_side, grid.n_side), |(i, j)| {
        let (ax, ay) = (nodes[i], nodes[j]);
        let r2 = ax * ax + ay * ay;
        let mut v = ph * lg_profile(p, l, wa, r2.sqrt(), ay.atan2(ax));
        if z != 0.0 {
            v *= paraxial_phase(wavelength, z, r2);
        }
        v
    })
}

/// Power of the analytic position-space LG beam sampled on the conjugate grid.
fn lg_position_power(p: u32, l: i32, waist: f64, grid: &FrequencyGrid) -> f64 {
    let xs = grid.position_nodes();
    let dx = grid.position_spacing();
    let mut s = 0.0;
    for &x in &xs {
        for &y in &xs {
            s += lg_profile(p, l, waist, (x * x + y * y).sqrt(), 0.0).norm_sqr();
        }
    }
    s * dx * dx
}

fn check_lg_containment(p: u32, l: i32, waist: f64, grid: &FrequencyGrid, spectral: &Array2<C64>) -> Result<()> {
    let da = grid.spacing();
    let freq_power: f64 = spectral.iter().map(|v| v.norm_sqr()).sum::<f64>() * da * da;
    let pos_power = lg_position_power(p, l, waist, grid);
    for captured in [freq_power, pos_power] {
        if (captured - 1.0).abs() > CONTAINMENT_TOLERANCE {
            return Err(Error::Containment {
                mode: format!("LG({p},{l})"),
                captured,
            });
        }
    }
    Ok(())
}

/// Closed-form LG spectrum at distance z from the waist plane.
pub fn lg_mode_spectrum(
    mode: ModeIndex,
    waist: f64,
    grid: &FrequencyGrid,
    z: f64,
    wavelength: f64,
) -> Result<SpectralField> {
    let (p, l) = match mode {
        ModeIndex::LaguerreGauss { p, l } => (p, l),
        other => return Err(Error::Domain(format!("{other} is not an LG mode"))),
    };
    if !(waist > 0.0) {
        return Err(Error::Domain(format!("waist must be > 0, got {waist}")));
    }
    let s = lg_samples(p, l, waist, grid, 0.0, wavelength);
    check_lg_containment(p, l, waist, grid, &s)?;
    let s = if z != 0.0 {
        lg_samples(p, l, waist, grid, z, wavelength)
    } else {
        s
    };
    SpectralField::new(*grid, s, z)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasisFamily {
    LaguerreGauss,
    Grid,
}

/// Ordered set of transverse modes on a shared frequency grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModalBasis {
    pub modes: Vec<ModeIndex>,
    pub waist: f64,
    pub grid: FrequencyGrid,
}

impl ModalBasis {
    pub fn new(modes: Vec<ModeIndex>, waist: f64, grid: FrequencyGrid) -> Result<Self> {
        if modes.is_empty() {
            return Err(Error::Domain("basis needs at least one mode".into()));
        }
        if !(waist > 0.0) {
            return Err(Error::Domain(format!("waist must be > 0, got {waist}")));
        }
        let mut seen = HashSet::new();
        for m in &modes {
            if !seen.insert(*m) {
                return Err(Error::Domain(format!("duplicate mode {m}")));
            }
        }
        let lg = modes.iter().filter(|m| matches!(m, ModeIndex::LaguerreGauss { .. })).count();
        if lg != 0 && lg != modes.len() {
            return Err(Error::Domain("a basis must be all-LG or all-grid".into()));
        }
        for m in &modes {
            match *m {
                ModeIndex::LaguerreGauss { p, l } => {
                    let s = lg_samples(p, l, waist, &grid, 0.0, 1.0);
                    check_lg_containment(p, l, waist, &grid, &s)?;
                }
                ModeIndex::Grid { i, j } => {
                    if i >= grid.n_side || j >= grid.n_side {
                        return Err(Error::Domain(format!("{m} outside a {0}x{0} grid", grid.n_side)));
                    }
                }
            }
        }
        let basis = ModalBasis { modes, waist, grid };
        if basis.family() == BasisFamily::LaguerreGauss {
            let g = basis.gram();
            let n = basis.len();
            for a in 0..n {
                for b in 0..n {
                    let target = if a == b { 1.0 } else { 0.0 };
                    if (g[[a, b]] - target).norm() > 1e-8 {
                        return Err(Error::Domain(format!(
                            "modes {} and {} are not orthonormal on this grid (overlap {:.3e})",
                            basis.modes[a],
                            basis.modes[b],
                            g[[a, b]].norm()
                        )));
                    }
                }
            }
        }
        Ok(basis)
    }

    /// All LG modes with 2p+|ℓ| ≤ max_order, by order then descending ℓ.
    pub fn lg_up_to_order(max_order: u32, waist: f64, grid: FrequencyGrid) -> Result<Self> {
        Self::new(lg_order_list(max_order), waist, grid)
    }

    /// The first `n` modes of the order-sorted LG sequence.
    pub fn lg_first(n: usize, waist: f64, grid: FrequencyGrid) -> Result<Self> {
        let mut order = 0;
        while lg_order_list(order).len() < n {
            order += 1;
        }
        Self::new(lg_order_list(order).into_iter().take(n).collect(), waist, grid)
    }

    /// Every node of the grid: the complete basis.
    pub fn grid_complete(waist: f64, grid: FrequencyGrid) -> Result<Self> {
        let n = grid.n_side;
        let modes = (0..n)
            .flat_map(|i| (0..n).map(move |j| ModeIndex::Grid { i, j }))
            .collect();
        Self::new(modes, waist, grid)
    }

    /// A (2h+1)² patch of grid nodes around the origin.
    pub fn grid_patch(half: usize, waist: f64, grid: FrequencyGrid) -> Result<Self> {
        let c = grid.n_side / 2;
        if half >= c {
            return Err(Error::Domain("grid patch larger than the grid".into()));
        }
        let modes = (c - half..=c + half)
            .flat_map(|i| (c - half..=c + half).map(move |j| ModeIndex::Grid { i, j }))
            .collect();
        Self::new(modes, waist, grid)
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn family(&self) -> BasisFamily {
        match self.modes[0] {
            ModeIndex::LaguerreGauss { .. } => BasisFamily::LaguerreGauss,
            ModeIndex::Grid { .. } => BasisFamily::Grid,
        }
    }

    pub fn index_of(&self, mode: ModeIndex) -> Option<usize> {
        self.modes.iter().position(|m| *m == mode)
    }

    /// Sampled G_m(a, z).
    pub fn spectrum(&self, idx: usize, z: f64, wavelength: f64) -> Array2<C64> {
        let g = &self.grid;
        match self.modes[idx] {
            ModeIndex::LaguerreGauss { p, l } => lg_samples(p, l, self.waist, g, z, wavelength),
            ModeIndex::Grid { i, j } => {
                let mut s = Array2::zeros((g.n_side, g.n_side));
                let (ax, ay) = (g.node(i), g.node(j));
                s[[i, j]] = paraxial_phase(wavelength, z, ax * ax + ay * ay) / g.spacing();
                s
            }
        }
    }

    pub fn field(&self, idx: usize, z: f64, wavelength: f64) -> SpectralField {
        SpectralField {
            grid: self.grid,
            samples: self.spectrum(idx, z, wavelength),
            z,
        }
    }

    /// Position-space images e_m(x, z) on the conjugate grid.
    pub fn position_fields(&self, z: f64, wavelength: f64, fft: &Fft2) -> Vec<Array2<C64>> {
        (0..self.len())
            .map(|m| fft.to_position(&self.grid, &self.spectrum(m, z, wavelength)))
            .collect()
    }

    /// Gram matrix ⟨m|n⟩ on the grid (identity for a valid basis).
    pub fn gram(&self) -> Array2<C64> {
        let n = self.len();
        let da = self.grid.spacing();
        let s: Vec<Array2<C64>> = (0..n).map(|m| self.spectrum(m, 0.0, 1.0)).collect();
        Array2::from_shape_fn((n, n), |(a, b)| {
            s[a].iter().zip(s[b].iter()).map(|(x, y)| x.conj() * y).sum::<C64>() * (da * da)
        })
    }

    /// Coefficients ⟨m|G⟩ of a field on the basis at the field's own plane
    /// (`z` chooses which plane the modes are evaluated at).
    pub fn project(&self, field: &SpectralField, z: f64, wavelength: f64) -> Result<Vec<C64>> {
        if field.grid != self.grid {
            return Err(Error::Dimension("field and basis use different grids".into()));
        }
        Ok((0..self.len())
            .map(|m| field.inner(&self.field(m, z, wavelength)).conj())
            .collect())
    }

    /// Field Σ c_m G_m(a, z).
    pub fn synthesize(&self, coeffs: &[C64], z: f64, wavelength: f64) -> Result<SpectralField> {
        if coeffs.len() != self.len() {
            return Err(Error::Dimension(format!(
                "{} coefficients for a {}-mode basis",
                coeffs.len(),
                self.len()
            )));
        }
        let n = self.grid.n_side;
        let mut s = Array2::<C64>::zeros((n, n));
        for (m, c) in coeffs.iter().enumerate() {
            if *c != C64::new(0.0, 0.0) {
                s.scaled_add(*c, &self.spectrum(m, z, wavelength));
            }
        }
        SpectralField::new(self.grid, s, z)
    }
}

/// LG labels with 2p+|ℓ| ≤ max_order, by order then descending ℓ.
pub fn lg_order_list(max_order: u32) -> Vec<ModeIndex> {
    let mut out = Vec::new();
    for order in 0..=max_order {
        let mut l = order as i32;
        while l >= -(order as i32) {
            let rem = order - l.unsigned_abs();
            out.push(ModeIndex::lg(rem / 2, l));
            l -= 2;
        }
    }
    out
}

/// W_ab(a, z) = ∫G_a*(a'+a, z) G_b(a', z) d²a', evaluated in position space as
/// Σ_x e_a*(x) e_b(x) e^{−i2πa·x} Δx².
pub fn overlap_w(
    basis: &ModalBasis,
    a_shift: [f64; 2],
    z: f64,
    wavelength: f64,
    idx_a: usize,
    idx_b: usize,
) -> Result<C64> {
    let g = &basis.grid;
    if a_shift[0].abs() > g.extent || a_shift[1].abs() > g.extent {
        return Err(Error::Domain(format!("shift {a_shift:?} outside grid extent {}", g.extent)));
    }
    if idx_a >= basis.len() || idx_b >= basis.len() {
        return Err(Error::Domain("mode index out of range".into()));
    }
    let fft = Fft2::new(g.n_side);
    let ea = fft.to_position(g, &basis.spectrum(idx_a, z, wavelength));
    let eb = fft.to_position(g, &basis.spectrum(idx_b, z, wavelength));
    Ok(shifted_overlap(g, &ea, &eb, a_shift))
}

/// Σ_x conj(ea) eb e^{−i2πa·x} Δx² with separable plane-wave factors.
pub fn shifted_overlap(g: &FrequencyGrid, ea: &Array2<C64>, eb: &Array2<C64>, a: [f64; 2]) -> C64 {
    let xs = g.position_nodes();
    let dx = g.position_spacing();
    let ux: Vec<C64> = xs.iter().map(|x| C64::from_polar(1.0, -2.0 * PI * a[0] * x)).collect();
    let uy: Vec<C64> = xs.iter().map(|y| C64::from_polar(1.0, -2.0 * PI * a[1] * y)).collect();
    let mut s = C64::new(0.0, 0.0);
    for i in 0..g.n_side {
        let mut row = C64::new(0.0, 0.0);
        for j in 0..g.n_side {
            row += ea[[i, j]].conj() * eb[[i, j]] * uy[j];
        }
        s += row * ux[i];
    }
    s * (dx * dx)
}

/// Completeness defect of a basis.
///
/// The identity on the full grid space is never approached by a finite LG set
/// in operator norm, so the defect is measured on a probe family instead: unit
/// Gaussians of waist ω0 displaced in frequency over a lattice of pitch
/// `w_a = 1/(πω0)` out to radius `3·w_a`. The defect is the largest power a
/// probe loses under the basis projector, max ‖(1 − Π)g‖². It is 0 for the
/// complete grid basis, close to 1 for a single mode, and decreases as an LG
/// truncation grows.
pub fn completeness_defect(basis: &ModalBasis) -> f64 {
    let g = &basis.grid;
    let wa = 1.0 / (PI * basis.waist);
    let da = g.spacing();
    let nodes = g.nodes();
    let n = g.n_side;
    let spectra: Vec<Array2<C64>> = match basis.family() {
        BasisFamily::LaguerreGauss => (0..basis.len()).map(|m| basis.spectrum(m, 0.0, 1.0)).collect(),
        BasisFamily::Grid => Vec::new(),
    };
    let mut worst: f64 = 0.0;
    for sx in -3i32..=3 {
        for sy in -3i32..=3 {
            if (sx * sx + sy * sy) > 9 {
                continue;
            }
            let (cx, cy) = (sx as f64 * wa, sy as f64 * wa);
            let probe = Array2::from_shape_fn((n, n), |(i, j)| {
                let r = ((nodes[i] - cx).powi(2) + (nodes[j] - cy).powi(2)).sqrt();
                lg_profile(0, 0, wa, r, 0.0)
            });
            let norm: f64 = probe.iter().map(|v| v.norm_sqr()).sum::<f64>() * da * da;
            let captured: f64 = match basis.family() {
                BasisFamily::LaguerreGauss => spectra
                    .iter()
                    .map(|s| (s.iter().zip(probe.iter()).map(|(a, b)| a.conj() * b).sum::<C64>() * (da * da)).norm_sqr())
                    .sum(),
                BasisFamily::Grid => basis
                    .modes
                    .iter()
                    .map(|m| match *m {
                        ModeIndex::Grid { i, j } => (probe[[i, j]] * da).norm_sqr(),
                        _ => 0.0,
                    })
                    .sum(),
            };
            worst = worst.max(1.0 - captured / norm);
        }
    }
    worst.max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn grid(w0: f64, n: usize) -> FrequencyGrid {
        FrequencyGrid::new(n, 8.0 / (PI * w0)).unwrap()
    }

    #[test]
    fn order_list_shape() {
        let l = lg_order_list(2);
        assert_eq!(l.len(), 6);
        assert_eq!(l[0], ModeIndex::lg(0, 0));
        assert_eq!(l[1], ModeIndex::lg(0, 1));
        assert_eq!(l[2], ModeIndex::lg(0, -1));
        assert_eq!(l[4], ModeIndex::lg(1, 0));
        assert_eq!(lg_order_list(3).len(), 10);
    }

    #[test]
    fn lg_spectra_normalized_and_orthogonal() {
        let w0 = 0.01;
        let g = grid(w0, 64);
        let f00 = lg_mode_spectrum(ModeIndex::lg(0, 0), w0, &g, 0.0, 633e-9).unwrap();
        let f01 = lg_mode_spectrum(ModeIndex::lg(0, 1), w0, &g, 0.0, 633e-9).unwrap();
        let f10 = lg_mode_spectrum(ModeIndex::lg(1, 0), w0, &g, 0.0, 633e-9).unwrap();
        assert_relative_eq!(f00.norm_sqr(), 1.0, epsilon = 1e-9);
        assert_relative_eq!(f10.norm_sqr(), 1.0, epsilon = 1e-9);
        assert!(f00.inner(&f01).norm() < 1e-8);
        assert!(f00.inner(&f10).norm() < 1e-8);
    }

    #[test]
    fn containment_failure_is_reported() {
        let w0 = 0.01;
        let tight = FrequencyGrid::new(16, 1.0 / (PI * w0)).unwrap();
        let r = lg_mode_spectrum(ModeIndex::lg(0, 0), w0, &tight, 0.0, 633e-9);
        assert!(matches!(r, Err(Error::Containment { .. })));
    }

    #[test]
    fn position_image_is_standard_lg() {
        let w0 = 0.01;
        let g = grid(w0, 64);
        let basis = ModalBasis::new(vec![ModeIndex::lg(1, 2)], w0, g).unwrap();
        let fft = Fft2::new(64);
        let e = &basis.position_fields(0.0, 633e-9, &fft)[0];
        for (i, j) in [(34, 30), (36, 37), (28, 33)] {
            let (x, y) = (g.position_node(i), g.position_node(j));
            let want = lg_profile(1, 2, w0, (x * x + y * y).sqrt(), y.atan2(x));
            assert!((e[[i, j]] - want).norm() < 1e-9, "{} vs {}", e[[i, j]], want);
        }
    }

    #[test]
    fn w_identity_and_gaussian_autocorrelation() {
        let w0 = 0.01;
        let g = grid(w0, 64);
        let basis = ModalBasis::lg_up_to_order(1, w0, g).unwrap();
        for a in 0..3 {
            for b in 0..3 {
                let w = overlap_w(&basis, [0.0, 0.0], 0.0, 633e-9, a, b).unwrap();
                let t = if a == b { 1.0 } else { 0.0 };
                assert!((w - t).norm() < 1e-8);
            }
        }
        let a = [17.0, -9.0];
        let w = overlap_w(&basis, a, 0.0, 633e-9, 0, 0).unwrap();
        let want = (-PI * PI * w0 * w0 * (a[0] * a[0] + a[1] * a[1]) / 2.0).exp();
        assert_relative_eq!(w.norm(), want, epsilon = 1e-6);
        assert!(overlap_w(&basis, [1e9, 0.0], 0.0, 633e-9, 0, 0).is_err());
    }

    #[test]
    fn completeness_defect_ordering() {
        let w0 = 0.01;
        let g = grid(w0, 32);
        let full = ModalBasis::grid_complete(w0, g).unwrap();
        assert!(completeness_defect(&full) < 1e-10);
        let g = grid(w0, 64);
        let one = ModalBasis::lg_up_to_order(0, w0, g).unwrap();
        let six = ModalBasis::lg_up_to_order(2, w0, g).unwrap();
        let twenty = ModalBasis::lg_first(20, w0, g).unwrap();
        let d1 = completeness_defect(&one);
        let d6 = completeness_defect(&six);
        let d20 = completeness_defect(&twenty);
        assert!(d1 > 0.99, "{d1}");
        assert!(d20 < d6 && d6 < d1, "{d1} {d6} {d20}");
    }

    #[test]
    fn project_and_synthesize_roundtrip() {
        let w0 = 0.01;
        let g = grid(w0, 64);
        let basis = ModalBasis::lg_up_to_order(2, w0, g).unwrap();
        let c = vec![
            C64::new(0.3, 0.1),
            C64::new(0.0, 0.5),
            C64::new(-0.2, 0.0),
            C64::new(0.1, 0.1),
            C64::new(0.0, 0.0),
            C64::new(0.4, -0.3),
        ];
        let f = basis.synthesize(&c, 100.0, 633e-9).unwrap();
        let back = basis.project(&f, 100.0, 633e-9).unwrap();
        for (x, y) in c.iter().zip(&back) {
            assert!((x - y).norm() < 1e-9);
        }
    }
}
