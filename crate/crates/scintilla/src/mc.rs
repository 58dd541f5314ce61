//! Monte Carlo oracle: random phase screens, split-step propagation and
//! ensemble-averaged density matrices.
//!
//! Screens are synthesized spectrally. Each step of length Δz carries the
//! phase PSD S(a) = k²Δz Φ1(a) (cycles/m convention), so the phase variance
//! per metre equals Λ_T. The FFT grid misses the power near a = 0, where the
//! spectrum concentrates; the central 3×3 block of cells is therefore
//! replaced by explicit plane waves on successively finer 3×3 subdivisions.
//! Each explicit wave carries its cell's integrated power and sits at the
//! frequency that matches the cell's second moment, so tilt statistics are
//! exact in the quadratic regime.

use crate::error::{Error, Result};
use crate::grid::{checkerboard, Fft2, FrequencyGrid};
use crate::modes::{ModalBasis, ModeIndex, SpectralField};
use crate::couplings::ModeFrame;
use crate::special::gauss_legendre_on;
use crate::turbulence::{self, StructureKind, TurbulenceSpec};
use ndarray::{Array2, Zip};
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::path::PathBuf;

/// Sampled position grid shared by screens and fields.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScreenGrid {
    pub n_side: usize,
    /// Sample spacing [m].
    pub dx: f64,
}

impl ScreenGrid {
    pub fn new(n_side: usize, dx: f64) -> Result<Self> {
        if n_side < 16 || n_side % 2 != 0 {
            return Err(Error::Domain(format!("n_side must be even and >= 16, got {n_side}")));
        }
        if !(dx > 0.0 && dx.is_finite()) {
            return Err(Error::Domain(format!("dx must be > 0, got {dx}")));
        }
        Ok(ScreenGrid { n_side, dx })
    }

    /// Position grid conjugate to a frequency grid.
    pub fn conjugate(g: &FrequencyGrid) -> Self {
        ScreenGrid {
            n_side: g.n_side,
            dx: g.position_spacing(),
        }
    }

    pub fn window(&self) -> f64 {
        self.n_side as f64 * self.dx
    }

    pub fn frequency_grid(&self) -> Result<FrequencyGrid> {
        FrequencyGrid::new(self.n_side, 1.0 / (2.0 * self.dx))
    }

    fn matches(&self, g: &FrequencyGrid) -> bool {
        g.n_side == self.n_side && ((g.position_spacing() - self.dx) / self.dx).abs() < 1e-12
    }
}

/// One realization of the turbulent phase over a step Δz.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhaseScreen {
    pub grid: ScreenGrid,
    /// θ(x, y) [rad], centered ordering, piston removed.
    pub samples: Array2<f64>,
    pub dz: f64,
    pub seed: u64,
    pub stream: u64,
    pub index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct ExplicitWave {
    a: [f64; 2],
    amp: f64,
}

/// Precomputed spectral weights for one (grid, turbulence, k, Δz).
#[derive(Debug)]
pub struct ScreenGenerator {
    pub grid: ScreenGrid,
    pub spec: TurbulenceSpec,
    pub k: f64,
    pub dz: f64,
    pub levels: u32,
    fft: Fft2,
    /// √(2·S·Δa²), centered ordering.
    amp: Array2<f64>,
    waves: Vec<ExplicitWave>,
}

fn cell_moments(s: &dyn Fn(f64) -> f64, c: [f64; 2], h: f64) -> (f64, f64) {
    const SUB: usize = 4;
    let mut p = 0.0;
    let mut m2 = 0.0;
    let hs = h / SUB as f64;
    for i in 0..SUB {
        let x0 = c[0] - 0.5 * h + i as f64 * hs;
        let (xs, wx) = gauss_legendre_on(12, x0, x0 + hs);
        for j in 0..SUB {
            let y0 = c[1] - 0.5 * h + j as f64 * hs;
            let (ys, wy) = gauss_legendre_on(12, y0, y0 + hs);
            for (x, a) in xs.iter().zip(&wx) {
                for (y, b) in ys.iter().zip(&wy) {
                    let r2 = x * x + y * y;
                    let v = a * b * s(r2.sqrt());
                    p += v;
                    m2 += v * r2;
                }
            }
        }
    }
    (p, m2)
}

impl ScreenGenerator {
    pub fn new(grid: ScreenGrid, spec: &TurbulenceSpec, k: f64, dz: f64, levels: u32) -> Result<Self> {
        spec.validate()?;
        if !(k > 0.0) || !(dz > 0.0) {
            return Err(Error::Domain(format!("k and Δz must be > 0 (k = {k}, Δz = {dz})")));
        }
        if !spec.is_regularized() && spec.cn2 > 0.0 && levels == 0 {
            return Err(Error::InfraredDivergence(
                "a Kolmogorov screen without subharmonics drops all power below the grid frequency".into(),
            ));
        }
        let n = grid.n_side;
        let da = 1.0 / (n as f64 * grid.dx);
        let s = |a: f64| k * k * dz * spec.phi1_radial(a);
        let c = n / 2;
        let mut amp = Array2::<f64>::zeros((n, n));
        if spec.cn2 > 0.0 {
            for i in 0..n {
                for j in 0..n {
                    if i.abs_diff(c) <= 1 && j.abs_diff(c) <= 1 {
                        continue;
                    }
                    let ax = (i as f64 - c as f64) * da;
                    let ay = (j as f64 - c as f64) * da;
                    amp[[i, j]] = (2.0 * s((ax * ax + ay * ay).sqrt()) * da * da).sqrt();
                }
            }
        }
        let mut waves = Vec::new();
        if spec.cn2 > 0.0 {
            for p in 0..=levels {
                let h = da / 3f64.powi(p as i32);
                for i in -1i32..=1 {
                    for j in -1i32..=1 {
                        if i == 0 && j == 0 {
                            continue;
                        }
                        let centre = [i as f64 * h, j as f64 * h];
                        let (pc, m2) = cell_moments(&s, centre, h);
                        if pc <= 0.0 {
                            continue;
                        }
                        let mag = (m2 / pc).sqrt();
                        let norm = (centre[0] * centre[0] + centre[1] * centre[1]).sqrt();
                        waves.push(ExplicitWave {
                            a: [centre[0] / norm * mag, centre[1] / norm * mag],
                            amp: (2.0 * pc).sqrt(),
                        });
                    }
                }
            }
        }
        Ok(ScreenGenerator {
            grid,
            spec: *spec,
            k,
            dz,
            levels,
            fft: Fft2::new(n),
            amp,
            waves,
        })
    }

    /// Two independent screens (real and imaginary parts of one synthesis).
    pub fn generate_pair<R: Rng>(&self, rng: &mut R) -> [Array2<f64>; 2] {
        let n = self.grid.n_side;
        let mut f = Array2::<C64>::zeros((n, n));
        Zip::from(&mut f).and(&self.amp).for_each(|v, &a| {
            if a > 0.0 {
                let (x, y): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
                *v = C64::new(x, y) * (a * std::f64::consts::FRAC_1_SQRT_2);
            }
        });
        checkerboard(&mut f);
        self.fft.forward(&mut f);
        checkerboard(&mut f);
        let xs: Vec<f64> = (0..n).map(|i| (i as f64 - (n / 2) as f64) * self.grid.dx).collect();
        for w in &self.waves {
            let (x, y): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
            let xi = C64::new(x, y) * (w.amp * std::f64::consts::FRAC_1_SQRT_2);
            let u: Vec<C64> = xs.iter().map(|x| xi * C64::from_polar(1.0, -2.0 * PI * w.a[0] * x)).collect();
            let v: Vec<C64> = xs.iter().map(|y| C64::from_polar(1.0, -2.0 * PI * w.a[1] * y)).collect();
            for ((i, j), val) in f.indexed_iter_mut() {
                *val += u[i] * v[j];
            }
        }
        let mut re = f.mapv(|v| v.re);
        let mut im = f.mapv(|v| v.im);
        for s in [&mut re, &mut im] {
            let mean = s.mean().unwrap_or(0.0);
            s.mapv_inplace(|v| v - mean);
        }
        [re, im]
    }

    /// Phase variance per screen represented by the generator (before piston removal).
    pub fn represented_variance(&self) -> f64 {
        0.5 * (self.amp.iter().map(|a| a * a).sum::<f64>() + self.waves.iter().map(|w| w.amp * w.amp).sum::<f64>())
    }

    /// `count` screens from the counter-based stream (seed, stream).
    pub fn screens(&self, seed: u64, stream: u64, count: usize) -> Vec<PhaseScreen> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            for s in self.generate_pair(&mut rng) {
                if out.len() < count {
                    out.push(PhaseScreen {
                        grid: self.grid,
                        samples: s,
                        dz: self.dz,
                        seed,
                        stream,
                        index: out.len(),
                    });
                }
            }
        }
        out
    }
}

/// Subharmonic depth reaching a tenth of the outer-scale frequency
/// (von Karman), or a millionth of the grid frequency (Kolmogorov), at least 3.
pub fn auto_subharmonic_levels(grid: &ScreenGrid, spec: &TurbulenceSpec) -> u32 {
    let da = 1.0 / grid.window();
    let floor = if spec.is_regularized() {
        0.1 * spec.kappa0() / (2.0 * PI)
    } else {
        da * 1e-6
    };
    let mut p = 0u32;
    while da / 3f64.powi(p as i32) > floor && p < 20 {
        p += 1;
    }
    p.max(3)
}

/// One screen for (grid, spec, k, Δz, seed) with `levels` subharmonic levels.
pub fn generate_screen(
    grid: ScreenGrid,
    spec: &TurbulenceSpec,
    k: f64,
    dz: f64,
    seed: u64,
    levels: u32,
) -> Result<PhaseScreen> {
    let g = ScreenGenerator::new(grid, spec, k, dz, levels)?;
    Ok(g.screens(seed, 0, 1).pop().expect("one screen"))
}

/// Structure function the screens target: the spectral integral for a
/// regularized spectrum, 6.88 (r/r0)^(5/3) for pure Kolmogorov.
pub fn target_structure_function(spec: &TurbulenceSpec, k: f64, dz: f64, r: f64) -> Result<f64> {
    if spec.is_regularized() {
        turbulence::phase_structure_function(spec, k, dz, r)
    } else {
        if spec.cn2 == 0.0 {
            return Ok(0.0);
        }
        let r0 = turbulence::fried_parameter(spec.cn2, 2.0 * PI / k, dz)?;
        turbulence::structure_function(r, r0, StructureKind::Kolmogorov)
    }
}

/// Free-space transfer by exp(i·4π²|a|²Δz/(2k)).
pub fn free_space_step(field: &SpectralField, k: f64, dz: f64) -> Result<SpectralField> {
    if !(dz >= 0.0) || !(k > 0.0) {
        return Err(Error::Domain(format!("need Δz >= 0 and k > 0 (Δz = {dz}, k = {k})")));
    }
    let mut out = field.clone();
    apply_drift(&mut out.samples, &field.grid, k, dz);
    out.z += dz;
    Ok(out)
}

fn apply_drift(s: &mut Array2<C64>, g: &FrequencyGrid, k: f64, dz: f64) {
    if dz == 0.0 {
        return;
    }
    let nodes = g.nodes();
    let c = 4.0 * PI * PI * dz / (2.0 * k);
    for ((i, j), v) in s.indexed_iter_mut() {
        *v *= C64::from_polar(1.0, c * (nodes[i] * nodes[i] + nodes[j] * nodes[j]));
    }
}

/// Smooth absorbing edge exp(−(r/R)^order), R a fraction of the half-window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuperGaussianMask {
    pub order: u32,
    pub radius_fraction: f64,
}

impl Default for SuperGaussianMask {
    fn default() -> Self {
        SuperGaussianMask {
            order: 16,
            radius_fraction: 0.9,
        }
    }
}

impl SuperGaussianMask {
    fn weights(&self, grid: &ScreenGrid) -> Array2<f64> {
        let n = grid.n_side;
        let r_edge = self.radius_fraction * 0.5 * grid.window();
        Array2::from_shape_fn((n, n), |(i, j)| {
            let x = (i as f64 - (n / 2) as f64) * grid.dx;
            let y = (j as f64 - (n / 2) as f64) * grid.dx;
            (-((x * x + y * y).sqrt() / r_edge).powi(self.order as i32)).exp()
        })
    }
}

/// Result of a split-step run.
#[derive(Debug, Clone)]
pub struct Propagated {
    pub field: SpectralField,
    /// Fraction of power removed by the absorbing mask.
    pub mask_loss: f64,
}

/// Symmetric split step: for each screen, Δz/2 drift, exp(iθ), Δz/2 drift.
pub fn split_step_propagate(
    psi0: &SpectralField,
    screens: &[PhaseScreen],
    k: f64,
    mask: Option<&SuperGaussianMask>,
) -> Result<Propagated> {
    let g = psi0.grid;
    let fft = Fft2::new(g.n_side);
    split_step_with(psi0, screens, k, mask, &fft)
}

fn split_step_with(
    psi0: &SpectralField,
    screens: &[PhaseScreen],
    k: f64,
    mask: Option<&SuperGaussianMask>,
    fft: &Fft2,
) -> Result<Propagated> {
    let g = psi0.grid;
    let p0 = psi0.norm_sqr();
    let mut s = psi0.samples.clone();
    let mut z = psi0.z;
    let weights = match (mask, screens.first()) {
        (Some(m), Some(sc)) => Some(m.weights(&sc.grid)),
        _ => None,
    };
    for sc in screens {
        if !sc.grid.matches(&g) {
            return Err(Error::Dimension("screen grid does not match the field's position grid".into()));
        }
        apply_drift(&mut s, &g, k, 0.5 * sc.dz);
        let mut e = fft.to_position(&g, &s);
        Zip::from(&mut e).and(&sc.samples).for_each(|v, &t| *v *= C64::from_polar(1.0, t));
        if let Some(w) = &weights {
            Zip::from(&mut e).and(w).for_each(|v, &m| *v *= m);
        }
        s = fft.to_frequency(&g, &e);
        apply_drift(&mut s, &g, k, 0.5 * sc.dz);
        z += sc.dz;
    }
    let field = SpectralField { grid: g, samples: s, z };
    let mask_loss = if p0 > 0.0 { 1.0 - field.norm_sqr() / p0 } else { 0.0 };
    Ok(Propagated { field, mask_loss })
}

/// Monte Carlo ensemble settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub n_trials: usize,
    pub master_seed: u64,
    /// Screens over the whole path; Δz = z_total / n_screens.
    pub n_screens: usize,
    /// `None`: [`auto_subharmonic_levels`].
    pub subharmonic_levels: Option<u32>,
    pub mask: Option<SuperGaussianMask>,
    /// Plane at which modes are projected out.
    pub frame: ModeFrame,
    /// Declared axial correlation length [m]; Δz must exceed it.
    pub axial_correlation_length: f64,
    /// Optional per-trial dump of projected coefficients.
    pub dump: Option<PathBuf>,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig {
            n_trials: 1000,
            master_seed: 0,
            n_screens: 10,
            subharmonic_levels: None,
            mask: None,
            frame: ModeFrame::CoPropagating,
            axial_correlation_length: 0.0,
            dump: None,
        }
    }
}

impl EnsembleConfig {
    pub fn validate(&self, z_total: f64) -> Result<f64> {
        if self.n_trials == 0 {
            return Err(Error::config("n_trials", "must be >= 1"));
        }
        if self.n_screens == 0 {
            return Err(Error::config("n_screens", "must be >= 1"));
        }
        if !(z_total > 0.0) {
            return Err(Error::Domain(format!("z_total must be > 0, got {z_total}")));
        }
        let dz = z_total / self.n_screens as f64;
        if dz <= self.axial_correlation_length {
            return Err(Error::config(
                "n_screens",
                format!(
                    "Δz = {dz:.4e} m does not exceed the axial correlation length {:.4e} m (Markov approximation invalid)",
                    self.axial_correlation_length
                ),
            ));
        }
        Ok(dz)
    }
}

/// Ensemble-averaged ρ with element-wise standard errors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleResult {
    pub rho: Array2<C64>,
    /// Standard error of Re ρ_mn (in `re`) and Im ρ_mn (in `im`).
    pub stderr: Array2<C64>,
    pub n_trials: usize,
    pub mean_mask_loss: f64,
    pub trace: f64,
}

/// Propagate ψ0 through fresh screen stacks, project on `basis`, average.
///
/// Trial t draws from ChaCha8 stream t of the master seed, and the reduction
/// runs in trial order, so results do not depend on the thread count.
pub fn ensemble_density_matrix(
    psi0: &SpectralField,
    basis: &ModalBasis,
    spec: &TurbulenceSpec,
    wavelength: f64,
    z_total: f64,
    cfg: &EnsembleConfig,
) -> Result<EnsembleResult> {
    let dz = cfg.validate(z_total)?;
    if psi0.grid != basis.grid {
        return Err(Error::Dimension("ψ0 and basis use different grids".into()));
    }
    let k = 2.0 * PI / wavelength;
    let grid = ScreenGrid::conjugate(&basis.grid);
    let levels = match cfg.subharmonic_levels {
        Some(l) if l > 20 => return Err(Error::config("subharmonic_levels", "must be <= 20")),
        Some(l) => l,
        None => auto_subharmonic_levels(&grid, spec),
    };
    let generator = ScreenGenerator::new(grid, spec, k, dz, levels)?;
    let z_modes = match cfg.frame {
        ModeFrame::Waist => 0.0,
        ModeFrame::CoPropagating => psi0.z + z_total,
    };
    let modes: Vec<SpectralField> = (0..basis.len()).map(|m| basis.field(m, z_modes, wavelength)).collect();
    let trials: Vec<Result<(Vec<C64>, f64)>> = (0..cfg.n_trials)
        .into_par_iter()
        .map_init(
            || Fft2::new(grid.n_side),
            |fft, t| {
                let screens = generator.screens(cfg.master_seed, t as u64, cfg.n_screens);
                let out = split_step_with(psi0, &screens, k, cfg.mask.as_ref(), fft)?;
                let c = modes.iter().map(|m| out.field.inner(m).conj()).collect();
                Ok((c, out.mask_loss))
            },
        )
        .collect();
    let mut coeffs = Vec::with_capacity(cfg.n_trials);
    let mut loss = 0.0;
    for r in trials {
        let (c, l) = r?;
        loss += l;
        coeffs.push(c);
    }
    if let Some(path) = &cfg.dump {
        write_dump(path, basis, cfg, &coeffs)?;
    }
    let (rho, stderr) = average_projectors(&coeffs);
    let trace = (0..rho.nrows()).map(|i| rho[[i, i]].re).sum();
    Ok(EnsembleResult {
        rho,
        stderr,
        n_trials: cfg.n_trials,
        mean_mask_loss: loss / cfg.n_trials as f64,
        trace,
    })
}

/// Mean of c c† over trials and the standard errors of its real and imaginary parts.
pub fn average_projectors(coeffs: &[Vec<C64>]) -> (Array2<C64>, Array2<C64>) {
    let n = coeffs.first().map_or(0, |c| c.len());
    let t = coeffs.len() as f64;
    let mut mean = Array2::<C64>::zeros((n, n));
    for c in coeffs {
        for a in 0..n {
            for b in 0..n {
                mean[[a, b]] += c[a] * c[b].conj();
            }
        }
    }
    mean.mapv_inplace(|v| v / t);
    let mut var = Array2::<C64>::zeros((n, n));
    for c in coeffs {
        for a in 0..n {
            for b in 0..n {
                let d = c[a] * c[b].conj() - mean[[a, b]];
                var[[a, b]] += C64::new(d.re * d.re, d.im * d.im);
            }
        }
    }
    let se = if coeffs.len() > 1 {
        var.mapv(|v| C64::new((v.re / (t - 1.0) / t).sqrt(), (v.im / (t - 1.0) / t).sqrt()))
    } else {
        Array2::zeros((n, n))
    };
    (mean, se)
}

/// One independent real number of ρ compared against an ensemble estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElementComparison {
    pub m: usize,
    pub n: usize,
    /// `false` for the real part, `true` for the imaginary part.
    pub imaginary: bool,
    pub reference: f64,
    pub estimate: f64,
    pub stderr: f64,
    pub z: f64,
}

/// z-scores over the upper triangle of ρ: the real diagonal, and real and
/// imaginary parts above it. A zero standard error gives z = 0 on exact
/// agreement and infinity otherwise.
pub fn compare_elements(reference: &Array2<C64>, mc: &EnsembleResult) -> Result<Vec<ElementComparison>> {
    if reference.dim() != mc.rho.dim() {
        return Err(Error::Dimension(format!("{:?} vs {:?}", reference.dim(), mc.rho.dim())));
    }
    let n = reference.nrows();
    let mut out = Vec::new();
    for m in 0..n {
        for k in m..n {
            let parts: &[bool] = if m == k { &[false] } else { &[false, true] };
            for &im in parts {
                let pick = |v: C64| if im { v.im } else { v.re };
                let (r, e, s) = (pick(reference[[m, k]]), pick(mc.rho[[m, k]]), pick(mc.stderr[[m, k]]));
                let d = e - r;
                let z = if s > 0.0 {
                    d / s
                } else if d.abs() < 1e-12 {
                    0.0
                } else {
                    f64::INFINITY
                };
                out.push(ElementComparison {
                    m,
                    n: k,
                    imaginary: im,
                    reference: r,
                    estimate: e,
                    stderr: s,
                    z,
                });
            }
        }
    }
    Ok(out)
}

/// Fractions of comparisons with |z| below 2 and below 3.
pub fn agreement_fractions(c: &[ElementComparison]) -> (f64, f64) {
    let n = c.len().max(1) as f64;
    let within = |t: f64| c.iter().filter(|e| e.z.abs() < t).count() as f64 / n;
    (within(2.0), within(3.0))
}

/// Magic bytes opening a trial dump.
pub const DUMP_MAGIC: &[u8; 8] = b"SCNTDUMP";

/// Binary layout, all little-endian:
/// magic[8], version u32 = 1, n_side u32, extent f64, waist f64,
/// n_modes u32, per mode (kind u8: 0 = LG, 1 = grid; a i32; b i32),
/// master_seed u64, n_trials u64, then per trial n_modes × (re f64, im f64).
fn write_dump(path: &PathBuf, basis: &ModalBasis, cfg: &EnsembleConfig, coeffs: &[Vec<C64>]) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(DUMP_MAGIC);
    buf.extend_from_slice(&1u32.to_le_bytes());
    buf.extend_from_slice(&(basis.grid.n_side as u32).to_le_bytes());
    buf.extend_from_slice(&basis.grid.extent.to_le_bytes());
    buf.extend_from_slice(&basis.waist.to_le_bytes());
    buf.extend_from_slice(&(basis.len() as u32).to_le_bytes());
    for m in &basis.modes {
        let (kind, a, b) = match *m {
            ModeIndex::LaguerreGauss { p, l } => (0u8, p as i32, l),
            ModeIndex::Grid { i, j } => (1u8, i as i32, j as i32),
        };
        buf.push(kind);
        buf.extend_from_slice(&a.to_le_bytes());
        buf.extend_from_slice(&b.to_le_bytes());
    }
    buf.extend_from_slice(&cfg.master_seed.to_le_bytes());
    buf.extend_from_slice(&(coeffs.len() as u64).to_le_bytes());
    for c in coeffs {
        for v in c {
            buf.extend_from_slice(&v.re.to_le_bytes());
            buf.extend_from_slice(&v.im.to_le_bytes());
        }
    }
    crate::io::atomic_write(path, &buf)
}

/// Reads a dump back: (modes, master seed, per-trial coefficients).
pub fn read_dump(path: &std::path::Path) -> Result<(Vec<ModeIndex>, u64, Vec<Vec<C64>>)> {
    let b = std::fs::read(path)?;
    let bad = || Error::InvalidState("malformed trial dump".into());
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        let s = b.get(pos..pos + n).ok_or_else(bad)?;
        pos += n;
        Ok(s)
    };
    if take(8)? != DUMP_MAGIC {
        return Err(bad());
    }
    let u32_ = |s: &[u8]| u32::from_le_bytes(s.try_into().unwrap());
    let f64_ = |s: &[u8]| f64::from_le_bytes(s.try_into().unwrap());
    if u32_(take(4)?) != 1 {
        return Err(bad());
    }
    let _n_side = u32_(take(4)?);
    let _extent = f64_(take(8)?);
    let _waist = f64_(take(8)?);
    let n_modes = u32_(take(4)?) as usize;
    let mut modes = Vec::with_capacity(n_modes);
    for _ in 0..n_modes {
        let kind = take(1)?[0];
        let a = i32::from_le_bytes(take(4)?.try_into().unwrap());
        let c = i32::from_le_bytes(take(4)?.try_into().unwrap());
        modes.push(match kind {
            0 => ModeIndex::lg(a as u32, c),
            1 => ModeIndex::Grid { i: a as usize, j: c as usize },
            _ => return Err(bad()),
        });
    }
    let seed = u64::from_le_bytes(take(8)?.try_into().unwrap());
    let n_trials = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
    let mut coeffs = Vec::with_capacity(n_trials);
    for _ in 0..n_trials {
        let mut c = Vec::with_capacity(n_modes);
        for _ in 0..n_modes {
            let re = f64_(take(8)?);
            let im = f64_(take(8)?);
            c.push(C64::new(re, im));
        }
        coeffs.push(c);
    }
    Ok((modes, seed, coeffs))
}

/// One row of the phase-average table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseAverageRow {
    /// Separation [m].
    pub separation: f64,
    pub structure_function: f64,
    /// exp(−D/2).
    pub expected: f64,
    pub empirical: C64,
    /// Standard errors of the real and imaginary parts.
    pub stderr: C64,
}

fn accumulate_rows(seps: &[f64], expected_d: &[f64], per_trial: &[Vec<C64>]) -> Vec<PhaseAverageRow> {
    let t = per_trial.len() as f64;
    seps.iter()
        .enumerate()
        .map(|(i, &sep)| {
            let mean: C64 = per_trial.iter().map(|v| v[i]).sum::<C64>() / t;
            let (vr, vi) = per_trial.iter().fold((0.0, 0.0), |(a, b), v| {
                let d = v[i] - mean;
                (a + d.re * d.re, b + d.im * d.im)
            });
            let se = if t > 1.0 {
                C64::new((vr / (t - 1.0) / t).sqrt(), (vi / (t - 1.0) / t).sqrt())
            } else {
                C64::new(0.0, 0.0)
            };
            PhaseAverageRow {
                separation: sep,
                structure_function: expected_d[i],
                expected: (-0.5 * expected_d[i]).exp(),
                empirical: mean,
                stderr: se,
            }
        })
        .collect()
}

fn pair_screens(generator: &ScreenGenerator, seed: u64, n_trials: usize) -> impl ParallelIterator<Item = Array2<f64>> + '_ {
    (0..n_trials.div_ceil(2)).into_par_iter().flat_map_iter(move |s| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(s as u64);
        let [a, b] = generator.generate_pair(&mut rng);
        let take = if 2 * s + 1 < n_trials { 2 } else { 1 };
        [a, b].into_iter().take(take)
    })
}

/// Empirical E{exp(i(θ(r1) − θ(r2)))} for given point pairs (grid indices),
/// one screen per trial, against exp(−D(|r1 − r2|)/2).
pub fn phase_average_check(
    generator: &ScreenGenerator,
    pairs: &[([usize; 2], [usize; 2])],
    n_trials: usize,
    seed: u64,
) -> Result<Vec<PhaseAverageRow>> {
    let n = generator.grid.n_side;
    if n_trials == 0 {
        return Err(Error::Domain("n_trials must be >= 1".into()));
    }
    if pairs.iter().any(|(a, b)| a.iter().chain(b).any(|&i| i >= n)) {
        return Err(Error::Domain("pair point outside the grid".into()));
    }
    let dx = generator.grid.dx;
    let seps: Vec<f64> = pairs
        .iter()
        .map(|(a, b)| {
            let (x, y) = (a[0] as f64 - b[0] as f64, a[1] as f64 - b[1] as f64);
            (x * x + y * y).sqrt() * dx
        })
        .collect();
    let d: Vec<f64> = seps
        .iter()
        .map(|&r| target_structure_function(&generator.spec, generator.k, generator.dz, r))
        .collect::<Result<_>>()?;
    let per_trial: Vec<Vec<C64>> = pair_screens(generator, seed, n_trials)
        .map(|th| pairs.iter().map(|(a, b)| C64::from_polar(1.0, th[[a[0], a[1]]] - th[[b[0], b[1]]])).collect())
        .collect();
    Ok(accumulate_rows(&seps, &d, &per_trial))
}

/// Phase average at one axial pixel separation for several target values
/// of D. Screen phase is linear in √Δz, so one screen set scaled by
/// √(D_target / D(s)) stands in for a run at each matching step length.
/// Each trial averages every pair at that separation inside the central
/// `region` fraction of the window, on both axes.
pub fn phase_average_scaled(
    generator: &ScreenGenerator,
    separation_px: usize,
    targets: &[f64],
    region: f64,
    n_trials: usize,
    seed: u64,
) -> Result<Vec<PhaseAverageRow>> {
    let n = generator.grid.n_side;
    let lo = ((1.0 - region.clamp(0.0, 1.0)) * 0.5 * n as f64).floor() as usize;
    let hi = n - lo;
    let s = separation_px;
    if s == 0 || lo + s >= hi || n_trials == 0 {
        return Err(Error::Domain("separation does not fit the sampling region".into()));
    }
    let sep = s as f64 * generator.grid.dx;
    let d0 = target_structure_function(&generator.spec, generator.k, generator.dz, sep)?;
    if !(d0 > 0.0) {
        return Err(Error::Domain("no turbulence: structure function is zero".into()));
    }
    let scales: Vec<f64> = targets.iter().map(|t| (t / d0).sqrt()).collect();
    let per_trial: Vec<Vec<C64>> = pair_screens(generator, seed, n_trials)
        .map(|th| {
            let mut acc = vec![C64::new(0.0, 0.0); scales.len()];
            let mut cnt = 0usize;
            for i in lo..hi - s {
                for j in lo..hi {
                    let dx = th[[i + s, j]] - th[[i, j]];
                    let dy = th[[j, i + s]] - th[[j, i]];
                    for (a, c) in acc.iter_mut().zip(&scales) {
                        *a += C64::from_polar(1.0, c * dx) + C64::from_polar(1.0, c * dy);
                    }
                    cnt += 2;
                }
            }
            acc.into_iter().map(|a| a / cnt as f64).collect()
        })
        .collect();
    let seps = vec![sep; targets.len()];
    Ok(accumulate_rows(&seps, targets, &per_trial))
}

/// Empirical structure function at axial pixel separations, averaged over
/// all pairs inside the window, both axes, and all screens.
pub fn empirical_structure_function(screens: &[Array2<f64>], separations_px: &[usize]) -> Vec<f64> {
    separations_px
        .iter()
        .map(|&s| {
            let mut acc = 0.0;
            let mut cnt = 0usize;
            for th in screens {
                let n = th.nrows();
                for i in 0..n - s {
                    for j in 0..n {
                        let a = th[[i + s, j]] - th[[i, j]];
                        let b = th[[j, i + s]] - th[[j, i]];
                        acc += a * a + b * b;
                        cnt += 2;
                    }
                }
            }
            acc / cnt as f64
        })
        .collect()
}

/// `count` screens from a generator, drawn in parallel with counter-based streams.
pub fn screen_ensemble(generator: &ScreenGenerator, seed: u64, count: usize) -> Vec<Array2<f64>> {
    pair_screens(generator, seed, count).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const LAMBDA: f64 = 633e-9;
    const W0: f64 = 0.01;

    fn k() -> f64 {
        2.0 * PI / LAMBDA
    }

    #[test]
    fn vacuum_screen_is_zero() {
        let g = ScreenGrid::new(32, 1e-3).unwrap();
        let s = TurbulenceSpec::von_karman(1e-14, 50.0).unwrap().with_cn2(0.0);
        let sc = generate_screen(g, &s, k(), 10.0, 1, 3).unwrap();
        assert!(sc.samples.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn screens_are_reproducible_and_independent() {
        let g = ScreenGrid::new(64, 2e-3).unwrap();
        let s = TurbulenceSpec::von_karman(1e-14, 50.0).unwrap();
        let gen = ScreenGenerator::new(g, &s, k(), 100.0, 3).unwrap();
        let a = gen.screens(7, 0, 2);
        let b = gen.screens(7, 0, 2);
        assert_eq!(a[0].samples, b[0].samples);
        let c = gen.screens(8, 0, 1);
        // A single screen is dominated by a few tilt-like waves; second
        // differences remove those and leave many independent degrees of freedom.
        let inc = |t: &Array2<f64>| Array2::from_shape_fn((62, 64), |(i, j)| t[[i + 2, j]] - 2.0 * t[[i + 1, j]] + t[[i, j]]);
        let (x, y) = (inc(&a[0].samples), inc(&c[0].samples));
        let corr = (&x * &y).sum() / ((&x * &x).sum() * (&y * &y).sum()).sqrt();
        assert!(corr.abs() < 0.05, "{corr}");
        assert!(a[0].samples.mean().unwrap().abs() < 1e-12);
    }

    #[test]
    fn free_space_step_norm_and_gaussian_width() {
        let grid = FrequencyGrid::new(128, 8.0 / (PI * W0)).unwrap();
        let b = ModalBasis::lg_first(1, W0, grid).unwrap();
        let f0 = b.field(0, 0.0, LAMBDA);
        let id = free_space_step(&f0, k(), 0.0).unwrap();
        assert_eq!(id.samples, f0.samples);
        let zr = PI * W0 * W0 / LAMBDA;
        let mut f = f0.clone();
        for _ in 0..100 {
            f = free_space_step(&f, k(), zr / 100.0).unwrap();
        }
        assert!((f.norm_sqr() - 1.0).abs() < 1e-10);
        let fft = Fft2::new(128);
        let e = fft.to_position(&grid, &f.samples);
        let xs = grid.position_nodes();
        let mut m2 = 0.0;
        let mut p = 0.0;
        for (i, x) in xs.iter().enumerate() {
            for (j, y) in xs.iter().enumerate() {
                let w = e[[i, j]].norm_sqr();
                m2 += w * (x * x + y * y);
                p += w;
            }
        }
        // ⟨r²⟩ = w²/2 for a Gaussian of 1/e² radius w
        let w = (2.0 * m2 / p).sqrt();
        assert_relative_eq!(w, W0 * 2f64.sqrt(), max_relative = 1e-2);
    }

    #[test]
    fn split_step_limits() {
        let grid = FrequencyGrid::new(64, 8.0 / (PI * W0)).unwrap();
        let b = ModalBasis::lg_first(1, W0, grid).unwrap();
        let f0 = b.field(0, 0.0, LAMBDA);
        let out = split_step_propagate(&f0, &[], k(), None).unwrap();
        assert_eq!(out.field.samples, f0.samples);
        let sg = ScreenGrid::conjugate(&grid);
        let s = TurbulenceSpec::von_karman(1e-13, 50.0).unwrap();
        let gen = ScreenGenerator::new(sg, &s, k(), 50.0, 3).unwrap();
        let screens = gen.screens(3, 0, 50);
        let out = split_step_propagate(&f0, &screens, k(), None).unwrap();
        assert!((out.field.norm_sqr() - 1.0).abs() < 1e-9);
        // Δz → 0 reduces to exp(iθ)ψ
        let mut thin = gen.screens(4, 0, 1);
        thin[0].dz = 0.0;
        let out = split_step_propagate(&f0, &thin, k(), None).unwrap();
        let fft = Fft2::new(64);
        let e0 = fft.to_position(&grid, &f0.samples);
        let e1 = fft.to_position(&grid, &out.field.samples);
        for ((a, b), t) in e0.iter().zip(e1.iter()).zip(thin[0].samples.iter()) {
            assert!((a * C64::from_polar(1.0, *t) - b).norm() < 1e-8);
        }
    }

    #[test]
    fn ensemble_vacuum_and_determinism() {
        let grid = FrequencyGrid::new(64, 8.0 / (PI * W0)).unwrap();
        let b = ModalBasis::lg_up_to_order(1, W0, grid).unwrap();
        let f0 = b.synthesize(&[C64::new(0.6, 0.0), C64::new(0.0, 0.8), C64::new(0.0, 0.0)], 0.0, LAMBDA).unwrap();
        let vac = TurbulenceSpec::von_karman(1e-14, 50.0).unwrap().with_cn2(0.0);
        let cfg = EnsembleConfig { n_trials: 4, n_screens: 2, ..Default::default() };
        let r = ensemble_density_matrix(&f0, &b, &vac, LAMBDA, 100.0, &cfg).unwrap();
        assert!(r.stderr.iter().all(|v| v.re < 1e-12 && v.im < 1e-12));
        assert_relative_eq!(r.rho[[0, 0]].re, 0.36, epsilon = 1e-9);
        let s = TurbulenceSpec::von_karman(1e-13, 50.0).unwrap();
        let cfg = EnsembleConfig { n_trials: 6, n_screens: 3, ..Default::default() };
        let a = ensemble_density_matrix(&f0, &b, &s, LAMBDA, 100.0, &cfg).unwrap();
        let c = ensemble_density_matrix(&f0, &b, &s, LAMBDA, 100.0, &cfg).unwrap();
        assert_eq!(a.rho, c.rho);
        assert!(a.trace <= 1.0 + 1e-9);
    }

    #[test]
    fn dump_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trials.bin");
        let grid = FrequencyGrid::new(64, 8.0 / (PI * W0)).unwrap();
        let b = ModalBasis::lg_up_to_order(1, W0, grid).unwrap();
        let f0 = b.field(0, 0.0, LAMBDA);
        let s = TurbulenceSpec::von_karman(1e-13, 50.0).unwrap();
        let cfg = EnsembleConfig { n_trials: 3, n_screens: 2, master_seed: 11, dump: Some(path.clone()), ..Default::default() };
        let r = ensemble_density_matrix(&f0, &b, &s, LAMBDA, 100.0, &cfg).unwrap();
        let (modes, seed, coeffs) = read_dump(&path).unwrap();
        assert_eq!(modes, b.modes);
        assert_eq!(seed, 11);
        let (rho, _) = average_projectors(&coeffs);
        assert_eq!(rho, r.rho);
    }

    #[test]
    fn markov_guard() {
        let cfg = EnsembleConfig { axial_correlation_length: 20.0, n_screens: 10, ..Default::default() };
        assert!(matches!(cfg.validate(100.0), Err(Error::Config { .. })));
        assert!(cfg.validate(1000.0).is_ok());
    }

    #[test]
    fn phase_average_identity_at_zero_separation() {
        let g = ScreenGrid::new(32, 2e-3).unwrap();
        let s = TurbulenceSpec::von_karman(1e-13, 50.0).unwrap();
        let gen = ScreenGenerator::new(g, &s, k(), 100.0, 3).unwrap();
        let rows = phase_average_check(&gen, &[([5, 5], [5, 5]), ([4, 4], [9, 4])], 20, 1).unwrap();
        assert_eq!(rows[0].empirical, C64::new(1.0, 0.0));
        assert_eq!(rows[0].expected, 1.0);
    }
}
