//! Turbulence statistics: refractive-index spectra, phase structure
//! functions, Fried parameter, Rytov variance and the scintillation regime.
//!
//! Spatial frequencies `κ` are angular [rad/m]; transverse frequencies `a`
//! are in cycles/m, so `Φ1(a) = Φn(2πa, 0)`.

use crate::error::{Error, Result};
use crate::quadrature::{integrate_linear, integrate_log};
use crate::special::bessel_j0;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// 0.033·(2π)³, the prefactor of the refractive-index spectrum.
pub const SPECTRUM_PREFACTOR: f64 = 0.033 * 8.0 * PI * PI * PI;

/// Inner-scale rolloff constant: κm = 5.92 / l0.
pub const INNER_SCALE_KAPPA: f64 = 5.92;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpectrumModel {
    Kolmogorov,
    VonKarman,
}

/// Turbulence model and strength. `cn2` in m^(-2/3), scales in m.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TurbulenceSpec {
    pub model: SpectrumModel,
    pub cn2: f64,
    pub outer_scale: Option<f64>,
    pub inner_scale: Option<f64>,
}

impl TurbulenceSpec {
    pub fn kolmogorov(cn2: f64) -> Result<Self> {
        let s = TurbulenceSpec {
            model: SpectrumModel::Kolmogorov,
            cn2,
            outer_scale: None,
            inner_scale: None,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn von_karman(cn2: f64, outer_scale: f64) -> Result<Self> {
        let s = TurbulenceSpec {
            model: SpectrumModel::VonKarman,
            cn2,
            outer_scale: Some(outer_scale),
            inner_scale: None,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn with_inner_scale(mut self, l0: f64) -> Result<Self> {
        self.inner_scale = Some(l0);
        self.validate()?;
        Ok(self)
    }

    /// Same model with a different strength. `cn2 = 0` is allowed here and
    /// switches turbulence off.
    pub fn with_cn2(mut self, cn2: f64) -> Self {
        self.cn2 = cn2;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cn2 >= 0.0) || !self.cn2.is_finite() {
            return Err(Error::Domain(format!("cn2 must be finite and >= 0, got {}", self.cn2)));
        }
        if self.model == SpectrumModel::VonKarman {
            match self.outer_scale {
                Some(l) if l > 0.0 && l.is_finite() => {}
                other => {
                    return Err(Error::Domain(format!(
                        "von Karman model needs a positive outer scale, got {other:?}"
                    )))
                }
            }
        }
        if let Some(l0) = self.inner_scale {
            if !(l0 > 0.0) {
                return Err(Error::Domain(format!("inner scale must be > 0, got {l0}")));
            }
        }
        Ok(())
    }

    /// κ0 = 2π/L0 for von Kármán, 0 for Kolmogorov.
    pub fn kappa0(&self) -> f64 {
        match (self.model, self.outer_scale) {
            (SpectrumModel::VonKarman, Some(l)) => 2.0 * PI / l,
            _ => 0.0,
        }
    }

    pub fn is_regularized(&self) -> bool {
        self.model == SpectrumModel::VonKarman
    }

    /// Φn at angular frequency magnitude κ ≥ 0 (no domain check).
    pub fn psd_radial(&self, kappa: f64) -> f64 {
        if self.cn2 == 0.0 {
            return 0.0;
        }
        let base = match self.model {
            SpectrumModel::Kolmogorov => kappa.powf(-11.0 / 3.0),
            SpectrumModel::VonKarman => {
                let k0 = self.kappa0();
                (kappa * kappa + k0 * k0).powf(-11.0 / 6.0)
            }
        };
        let roll = match self.inner_scale {
            Some(l0) => {
                let km = INNER_SCALE_KAPPA / l0;
                (-(kappa * kappa) / (km * km)).exp()
            }
            None => 1.0,
        };
        SPECTRUM_PREFACTOR * self.cn2 * base * roll
    }

    /// Φ1 at transverse frequency magnitude |a| [cycles/m].
    pub fn phi1_radial(&self, a: f64) -> f64 {
        self.psd_radial(2.0 * PI * a)
    }

    /// ∫Φ1(a) d²a over the whole plane. Infinite for Kolmogorov.
    pub fn phi1_integral(&self) -> Result<f64> {
        self.phi1_integral_between(0.0, f64::INFINITY)
    }

    /// ∫Φ1 d²a over the annulus lo ≤ |a| < hi.
    pub fn phi1_integral_between(&self, lo: f64, hi: f64) -> Result<f64> {
        if self.cn2 == 0.0 {
            return Ok(0.0);
        }
        if lo <= 0.0 && !self.is_regularized() {
            return Err(Error::InfraredDivergence(
                "∫Φ1 d²a diverges at the origin for the pure Kolmogorov spectrum; use a von Karman outer scale".into(),
            ));
        }
        let f = |a: f64| 2.0 * PI * a * self.phi1_radial(a);
        let scale = if self.is_regularized() {
            self.kappa0() / (2.0 * PI)
        } else {
            lo
        };
        let mut total = 0.0;
        let mut start = lo.max(0.0);
        if start == 0.0 {
            let knee = 1e-3 * scale;
            total += integrate_linear(f, 0.0, knee.min(hi), 4, 12);
            start = knee;
        }
        if hi > start {
            let finite_hi = if hi.is_finite() { hi } else { start.max(scale) * 1e12 };
            let decades = (finite_hi / start).log10().max(1.0);
            total += integrate_log(f, start, finite_hi, (decades * 8.0).ceil() as usize, 12);
            if !hi.is_finite() && self.inner_scale.is_none() {
                // Power-law remainder: ∫_R^∞ 2πa·P(2πa)^(-11/3) da.
                let r = finite_hi;
                total += SPECTRUM_PREFACTOR * self.cn2 * (2.0 * PI).powf(-8.0 / 3.0) * 0.6 * r.powf(-5.0 / 3.0);
            }
        }
        Ok(total)
    }
}

pub fn psd_3d(spec: &TurbulenceSpec, kvec: [f64; 3]) -> Result<f64> {
    let k = (kvec[0] * kvec[0] + kvec[1] * kvec[1] + kvec[2] * kvec[2]).sqrt();
    if k == 0.0 && spec.model == SpectrumModel::Kolmogorov {
        return Err(Error::Domain("Kolmogorov spectrum is singular at |k| = 0".into()));
    }
    Ok(spec.psd_radial(k))
}

pub fn psd_transverse(spec: &TurbulenceSpec, a: [f64; 2]) -> Result<f64> {
    psd_3d(spec, [2.0 * PI * a[0], 2.0 * PI * a[1], 0.0])
}

/// Wavelength and source waist, with derived k, z_R and normalized distance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpticalParams {
    pub wavelength: f64,
    pub waist: f64,
}

impl OpticalParams {
    pub fn new(wavelength: f64, waist: f64) -> Result<Self> {
        if !(wavelength > 0.0) || !(waist > 0.0) {
            return Err(Error::Domain(format!(
                "wavelength and waist must be > 0 (got {wavelength}, {waist})"
            )));
        }
        Ok(OpticalParams { wavelength, waist })
    }

    pub fn wavenumber(&self) -> f64 {
        2.0 * PI / self.wavelength
    }

    pub fn rayleigh_range(&self) -> f64 {
        PI * self.waist * self.waist / self.wavelength
    }

    pub fn normalized_distance(&self, z: f64) -> f64 {
        z / self.rayleigh_range()
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} must be finite and > 0, got {v}")))
    }
}

/// r0 = 0.185 (λ²/(Cn² z))^(3/5).
pub fn fried_parameter(cn2: f64, wavelength: f64, z: f64) -> Result<f64> {
    positive("cn2", cn2)?;
    positive("wavelength", wavelength)?;
    positive("z", z)?;
    Ok(0.185 * (wavelength * wavelength / (cn2 * z)).powf(0.6))
}

/// Cn² that yields the given Fried parameter over distance z.
pub fn cn2_for_fried(r0: f64, wavelength: f64, z: f64) -> Result<f64> {
    positive("r0", r0)?;
    positive("wavelength", wavelength)?;
    positive("z", z)?;
    Ok(wavelength * wavelength / (z * (r0 / 0.185).powf(5.0 / 3.0)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StructureKind {
    Kolmogorov,
    Quadratic,
}

/// 6.88 (x/r0)^(5/3), or the quadratic 6.88 (x/r0)².
pub fn structure_function(x: f64, r0: f64, kind: StructureKind) -> Result<f64> {
    if !(x >= 0.0) {
        return Err(Error::Domain(format!("separation must be >= 0, got {x}")));
    }
    positive("r0", r0)?;
    let u = x / r0;
    Ok(match kind {
        StructureKind::Kolmogorov => 6.88 * u.powf(5.0 / 3.0),
        StructureKind::Quadratic => 6.88 * u * u,
    })
}

/// σ_R² = 1.23 Cn² k^(7/6) z^(11/6).
pub fn rytov_variance(cn2: f64, k: f64, z: f64) -> Result<f64> {
    positive("cn2", cn2)?;
    positive("k", k)?;
    positive("z", z)?;
    Ok(1.23 * cn2 * k.powf(7.0 / 6.0) * z.powf(11.0 / 6.0))
}

/// Cn² that gives Rytov variance σ² at distance z.
pub fn cn2_for_rytov(sigma2: f64, k: f64, z: f64) -> Result<f64> {
    positive("sigma2", sigma2)?;
    positive("k", k)?;
    positive("z", z)?;
    Ok(sigma2 / (1.23 * k.powf(7.0 / 6.0) * z.powf(11.0 / 6.0)))
}

/// Prefactor of [`rytov_from_beam`], 1.23 (2π)^(7/6) 0.185^(5/3) π^(5/6) ≈ 1.637.
/// Derived rather than rounded so both Rytov forms agree to machine precision.
pub fn rytov_beam_prefactor() -> f64 {
    1.23 * (2.0 * PI).powf(7.0 / 6.0) * 0.185f64.powf(5.0 / 3.0) * PI.powf(5.0 / 6.0)
}

/// Rytov variance in beam units: ≈1.637 t^(5/6) (ω0/r0)^(5/3), with t = z/z_R.
pub fn rytov_from_beam(t: f64, w0_over_r0: f64) -> f64 {
    rytov_beam_prefactor() * t.powf(5.0 / 6.0) * w0_over_r0.powf(5.0 / 3.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BeamKind {
    PlaneWave,
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    Weak,
    Strong,
}

/// Strong-scintillation threshold (t + 1/t)^(5/6) for a Gaussian beam.
pub fn gaussian_boundary(t: f64) -> f64 {
    (t + 1.0 / t).powf(5.0 / 6.0)
}

pub fn regime_classify(sigma2: f64, t: f64, beam: BeamKind) -> Result<Regime> {
    if !(sigma2 >= 0.0) {
        return Err(Error::Domain(format!("σ_R² must be >= 0, got {sigma2}")));
    }
    let threshold = match beam {
        BeamKind::PlaneWave => 1.0,
        BeamKind::Gaussian => {
            if !(t > 0.0) {
                return Err(Error::Domain(format!("t must be > 0 for a Gaussian beam, got {t}")));
            }
            gaussian_boundary(t)
        }
    };
    Ok(if sigma2 > threshold {
        Regime::Strong
    } else {
        Regime::Weak
    })
}

/// Curves of the (t, σ_R²) regime diagram on a log-spaced t axis.
#[derive(Debug, Clone, Serialize)]
pub struct RegimeDiagram {
    pub t: Vec<f64>,
    pub cn2: Vec<f64>,
    /// One σ_R²(t) curve per Cn², same order as `cn2`.
    pub rytov: Vec<Vec<f64>>,
    pub gaussian_boundary: Vec<f64>,
    pub plane_wave_boundary: Vec<f64>,
    /// σ_R² along ω0 = r0.
    pub unit_ratio_line: Vec<f64>,
}

pub fn regime_diagram_data(
    cn2_list: &[f64],
    optics: &OpticalParams,
    t_range: (f64, f64),
    n_points: usize,
) -> Result<RegimeDiagram> {
    if cn2_list.is_empty() {
        return Err(Error::Domain("regime diagram needs at least one Cn² value".into()));
    }
    let (t0, t1) = t_range;
    if !(t0 > 0.0 && t1 > t0 && t1.is_finite()) || n_points < 2 {
        return Err(Error::Domain(format!("bad t range ({t0}, {t1}) / {n_points} points")));
    }
    let k = optics.wavenumber();
    let zr = optics.rayleigh_range();
    let t: Vec<f64> = (0..n_points)
        .map(|i| t0 * (t1 / t0).powf(i as f64 / (n_points - 1) as f64))
        .collect();
    let mut rytov = Vec::with_capacity(cn2_list.len());
    for &c in cn2_list {
        rytov.push(
            t.iter()
                .map(|&ti| rytov_variance(c, k, ti * zr))
                .collect::<Result<Vec<f64>>>()?,
        );
    }
    Ok(RegimeDiagram {
        gaussian_boundary: t.iter().map(|&x| gaussian_boundary(x)).collect(),
        plane_wave_boundary: vec![1.0; t.len()],
        unit_ratio_line: t.iter().map(|&x| rytov_from_beam(x, 1.0)).collect(),
        cn2: cn2_list.to_vec(),
        rytov,
        t,
    })
}

/// Phase structure function of a turbulent slab of thickness `dz`, from the
/// spectrum itself: D(r) = 2k²Δz ∫Φ1(a)(1 − J0(2π|a|r)) d²a.
///
/// For the Kolmogorov spectrum this reproduces 6.88 (r/r0)^(5/3) to the
/// precision of the 0.033 / 6.88 / 0.185 constants (about 0.5%).
pub fn phase_structure_function(spec: &TurbulenceSpec, k: f64, dz: f64, r: f64) -> Result<f64> {
    spec.validate()?;
    if r == 0.0 || spec.cn2 == 0.0 {
        return Ok(0.0);
    }
    let g = |a: f64| 2.0 * PI * a * spec.phi1_radial(a) * (1.0 - bessel_j0(2.0 * PI * a * r));
    let lo = 1e-6 / r;
    let knee = 1.0 / r;
    let hi = 200.0 / r;
    // below `lo`: 1 − J0 ≈ (πar)², negligible against the rest
    let mut s = integrate_log(g, lo, knee, 48, 12);
    s += integrate_linear(g, knee, hi, 400, 8);
    // Beyond `hi` the Bessel term averages out; keep the non-oscillatory part.
    s += spec.phi1_integral_between(hi, f64::INFINITY)?;
    Ok(2.0 * k * k * dz * s)
}
